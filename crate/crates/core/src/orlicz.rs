//! The double-phase generalized Orlicz layer: `θ_p(x, t) = t^p + a(x) t^q`,
//! its modular and Luxemburg norm, weighted `L^q_a` norms, the discrete total
//! variation and a boundary fractional seminorm used as a diagnostic.

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::fields::{ScalarField, WeightField};
use crate::mesh::{norm, Mesh, Vector};
use crate::scalar::Real;

/// Exponents `1 < p < q` of the double-phase integrand in dimension `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentPair<T = f64> {
    p: T,
    q: T,
    dim: usize,
}

impl<T: Real> ExponentPair<T> {
    pub fn new(p: T, q: T, dim: usize) -> Result<Self> {
        if !(p > T::one()) || !(q > p) || !q.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "exponents must satisfy 1 < p < q < inf, got p = {p}, q = {q}"
            )));
        }
        if dim != 1 && dim != 2 {
            return Err(Error::UnsupportedDimension { dim });
        }
        Ok(Self { p, q, dim })
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn q(&self) -> T {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `p' = p / (p − 1)`
    pub fn p_conjugate(&self) -> T {
        self.p / (self.p - T::one())
    }

    /// `q' = q / (q − 1)`
    pub fn q_conjugate(&self) -> T {
        self.q / (self.q - T::one())
    }

    /// The exponent clause of hypothesis (H): `q/p < 1 + 1/N`.
    pub fn hypothesis_h(&self) -> bool {
        self.q / self.p < T::one() + T::one() / T::from_usize_lossy(self.dim)
    }

    /// Same `q` and dimension with a new lower exponent.
    pub fn with_p(&self, p: T) -> Result<Self> {
        Self::new(p, self.q, self.dim)
    }
}

/// Data that reduces to one non-negative magnitude per element.
///
/// Elementwise vector fields use their Euclidean length; nodal scalar fields
/// use the absolute value of the P1 interpolant at the element centroid.
pub trait ElementMagnitudes<T: Real> {
    fn element_magnitudes(&self, mesh: &Mesh<T>) -> Result<Vec<T>>;
}

impl<T: Real> ElementMagnitudes<T> for [Vector<T>] {
    fn element_magnitudes(&self, mesh: &Mesh<T>) -> Result<Vec<T>> {
        check_len(mesh.num_elements(), self.len())?;
        Ok(self.iter().map(norm).collect())
    }
}

impl<T: Real> ElementMagnitudes<T> for Vec<Vector<T>> {
    fn element_magnitudes(&self, mesh: &Mesh<T>) -> Result<Vec<T>> {
        self.as_slice().element_magnitudes(mesh)
    }
}

impl<T: Real> ElementMagnitudes<T> for ScalarField<T> {
    fn element_magnitudes(&self, mesh: &Mesh<T>) -> Result<Vec<T>> {
        check_len(mesh.num_nodes(), self.len())?;
        let values = self.values();
        Ok(mesh
            .elements()
            .iter()
            .map(|e| {
                let s: T = e.iter().map(|&i| values[i]).sum();
                (s / T::from_usize_lossy(e.len())).abs()
            })
            .collect())
    }
}

/// Precomputed `(|K|, a_K, |v_K|)` triples for repeated modular evaluation.
struct ModularData<T> {
    measures: Vec<T>,
    weights: Vec<T>,
    magnitudes: Vec<T>,
}

impl<T: Real> ModularData<T> {
    fn new<V: ElementMagnitudes<T> + ?Sized>(mesh: &Mesh<T>, a: &WeightField<T>, v: &V) -> Result<Self> {
        Ok(Self {
            measures: mesh.element_measures().to_vec(),
            weights: a.centroid_values(mesh)?,
            magnitudes: v.element_magnitudes(mesh)?,
        })
    }

    /// `ρ(v / λ)`
    fn modular_scaled(&self, pq: &ExponentPair<T>, lambda: T) -> T {
        let (p, q) = (pq.p(), pq.q());
        self.measures
            .iter()
            .zip(&self.weights)
            .zip(&self.magnitudes)
            .map(|((&m, &a), &v)| {
                let t = v / lambda;
                m * (t.powf(p) + a * t.powf(q))
            })
            .sum()
    }
}

/// `ρ_{θ_p}(v) = Σ_K |K| (|v_K|^p + a(c_K) |v_K|^q)`.
pub fn modular_theta<T: Real, V: ElementMagnitudes<T> + ?Sized>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    pq: &ExponentPair<T>,
    v: &V,
) -> Result<T> {
    Ok(ModularData::new(mesh, a, v)?.modular_scaled(pq, T::one()))
}

/// Luxemburg norm `inf{λ > 0 : ρ(v/λ) ≤ 1}`.
///
/// Brackets the root of `ρ(v/λ) = 1` by doubling/halving and bisects to a
/// relative width of `1e-12` (or a few ulps in single precision).
pub fn luxemburg_norm<T: Real, V: ElementMagnitudes<T> + ?Sized>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    pq: &ExponentPair<T>,
    v: &V,
) -> Result<T> {
    let data = ModularData::new(mesh, a, v)?;
    if data.magnitudes.iter().any(|m| !m.is_finite()) {
        return Err(Error::Numeric("Luxemburg norm of a non-finite field".into()));
    }
    if data.magnitudes.iter().all(|&m| m == T::zero()) {
        return Ok(T::zero());
    }
    let rho = |lambda: T| data.modular_scaled(pq, lambda);
    let two = T::lit(2.0);

    let mut lo = T::one();
    let mut hi = T::one();
    if rho(T::one()) > T::one() {
        while rho(hi) > T::one() {
            lo = hi;
            hi *= two;
            if !hi.is_finite() {
                return Err(Error::Numeric("Luxemburg bracket overflow".into()));
            }
        }
    } else {
        while rho(lo) <= T::one() {
            hi = lo;
            lo /= two;
            if lo == T::zero() {
                return Err(Error::Numeric("Luxemburg bracket underflow".into()));
            }
        }
    }

    let tol = T::lit(1e-12).max(T::lit(4.0) * T::epsilon());
    for _ in 0..200 {
        if hi - lo <= tol * hi {
            break;
        }
        let mid = T::lit(0.5) * (lo + hi);
        if rho(mid) > T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(T::lit(0.5) * (lo + hi))
}

/// `(Σ_K |K| a(c_K) |v_K|^q)^{1/q}`.
pub fn weighted_lq_norm<T: Real, V: ElementMagnitudes<T> + ?Sized>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    q: T,
    v: &V,
) -> Result<T> {
    if !(q >= T::one()) {
        return Err(Error::InvalidParameter(format!("weighted L^q norm needs q >= 1, got {q}")));
    }
    let data = ModularData::new(mesh, a, v)?;
    let s: T = data
        .measures
        .iter()
        .zip(&data.weights)
        .zip(&data.magnitudes)
        .map(|((&m, &w), &v)| m * w * v.powf(q))
        .sum();
    Ok(s.powf(T::one() / q))
}

/// `Σ_K |K| |∇u_K|`, the total variation of a P1 field.
pub fn discrete_total_variation<T: Real>(mesh: &Mesh<T>, u: &ScalarField<T>) -> Result<T> {
    let grads = mesh.element_gradients(u.values())?;
    Ok(grads
        .iter()
        .zip(mesh.element_measures())
        .map(|(g, &m)| m * norm(g))
        .sum())
}

/// Midpoint discretization of the boundary Gagliardo–Slobodeckij seminorm
/// of order `1 − 1/q`:
///
/// `( Σ_{i≠j} |u(x_i) − u(x_j)|^q / |x_i − x_j|^{(N−1) + q(1−1/q)} · |f_i| |f_j| )^{1/q}`
///
/// over boundary facet midpoints `x_i`. Diagonal pairs are excluded.
///
/// Other common normalizations of the kernel exponent exist; this value is a
/// diagnostic and is not used by the solver or the verification residuals.
pub fn boundary_fractional_seminorm<T: Real>(mesh: &Mesh<T>, u: &ScalarField<T>, q: T) -> Result<T> {
    if mesh.dim() != 2 {
        return Err(Error::UnsupportedDimension { dim: mesh.dim() });
    }
    check_len(mesh.num_nodes(), u.len())?;
    if !(q > T::one()) {
        return Err(Error::InvalidParameter(format!("seminorm needs q > 1, got {q}")));
    }
    let exponent = T::from_usize_lossy(mesh.dim() - 1) + q * (T::one() - T::one() / q);
    let facets = mesh.boundary_facets();
    let traces: Vec<T> = facets
        .iter()
        .map(|f| {
            let s: T = f.nodes.iter().map(|&i| u.values()[i]).sum();
            s / T::from_usize_lossy(f.nodes.len())
        })
        .collect();
    let mut sum = T::zero();
    for (i, fi) in facets.iter().enumerate() {
        for (j, fj) in facets.iter().enumerate() {
            if i == j {
                continue;
            }
            let dx = [fi.midpoint[0] - fj.midpoint[0], fi.midpoint[1] - fj.midpoint[1]];
            let jump = (traces[i] - traces[j]).abs();
            sum += jump.powf(q) / norm(&dx).powf(exponent) * fi.measure * fj.measure;
        }
    }
    Ok(sum.powf(T::one() / q))
}
