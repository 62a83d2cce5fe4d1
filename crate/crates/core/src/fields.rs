//! Nodal scalar and weight fields, facetwise boundary data, exact P1
//! integration, the mean-zero projection and the checks on the data
//! (compatibility, weight hypotheses, sampled `A_q` constant).

use log::warn;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::mesh::{norm, Mesh, Vector};
use crate::orlicz::ExponentPair;
use crate::scalar::Real;

/// Nodal P1 coefficients of a scalar function.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ScalarField<T = f64> {
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(mesh: &Mesh<T>, values: Vec<T>) -> Result<Self> {
        check_len(mesh.num_nodes(), values.len())?;
        Ok(Self { values })
    }

    pub fn zeros(mesh: &Mesh<T>) -> Self {
        Self {
            values: vec![T::zero(); mesh.num_nodes()],
        }
    }

    /// Nodal interpolant of `f`.
    pub fn from_fn(mesh: &Mesh<T>, f: impl Fn(Vector<T>) -> T) -> Self {
        Self {
            values: mesh.nodes().iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Nodal values of the weight `a(x) ≥ 0`, with an optional declared
/// Lipschitz constant.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField<T = f64> {
    values: Vec<T>,
    lipschitz: Option<T>,
}

impl<T: Real> WeightField<T> {
    pub fn new(mesh: &Mesh<T>, values: Vec<T>, lipschitz: Option<T>) -> Result<Self> {
        check_len(mesh.num_nodes(), values.len())?;
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "weight must be finite and non-negative, node {i} has {v}"
            )));
        }
        Ok(Self { values, lipschitz })
    }

    pub fn constant(mesh: &Mesh<T>, value: T) -> Result<Self> {
        Self::new(mesh, vec![value; mesh.num_nodes()], Some(T::zero()))
    }

    pub fn from_fn(mesh: &Mesh<T>, f: impl Fn(Vector<T>) -> T, lipschitz: Option<T>) -> Result<Self> {
        Self::new(mesh, mesh.nodes().iter().map(|&x| f(x)).collect(), lipschitz)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn lipschitz(&self) -> Option<T> {
        self.lipschitz
    }

    /// P1 value at each element centroid (mean of the vertex values).
    pub fn centroid_values(&self, mesh: &Mesh<T>) -> Result<Vec<T>> {
        check_len(mesh.num_nodes(), self.values.len())?;
        Ok(mesh
            .elements()
            .iter()
            .map(|e| {
                let s: T = e.iter().map(|&i| self.values[i]).sum();
                s / T::from_usize_lossy(e.len())
            })
            .collect())
    }
}

/// Facetwise-constant Neumann datum `g`, one value per boundary facet.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData<T = f64> {
    values: Vec<T>,
}

impl<T: Real> BoundaryData<T> {
    pub fn new(mesh: &Mesh<T>, values: Vec<T>) -> Result<Self> {
        check_len(mesh.boundary_facets().len(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("boundary datum must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(mesh: &Mesh<T>) -> Self {
        Self {
            values: vec![T::zero(); mesh.boundary_facets().len()],
        }
    }

    pub fn constant(mesh: &Mesh<T>, value: T) -> Result<Self> {
        Self::new(mesh, vec![value; mesh.boundary_facets().len()])
    }

    /// Evaluates `f(midpoint, outward normal)` on every facet.
    pub fn from_fn(mesh: &Mesh<T>, f: impl Fn(Vector<T>, Vector<T>) -> T) -> Result<Self> {
        Self::new(
            mesh,
            mesh.boundary_facets().iter().map(|b| f(b.midpoint, b.normal)).collect(),
        )
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `‖g‖_∞`
    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// `∫_Ω u dx`, exact for P1.
pub fn integrate_scalar<T: Real>(mesh: &Mesh<T>, u: &ScalarField<T>) -> Result<T> {
    check_len(mesh.num_nodes(), u.len())?;
    Ok(mesh
        .elements()
        .iter()
        .zip(mesh.element_measures())
        .map(|(e, &m)| {
            let s: T = e.iter().map(|&i| u.values[i]).sum();
            m * s / T::from_usize_lossy(e.len())
        })
        .sum())
}

/// `u − |Ω|⁻¹ ∫_Ω u`.
pub fn project_mean_zero<T: Real>(mesh: &Mesh<T>, u: &ScalarField<T>) -> Result<ScalarField<T>> {
    let mean = integrate_scalar(mesh, u)? / mesh.volume();
    Ok(ScalarField {
        values: u.values.iter().map(|&v| v - mean).collect(),
    })
}

/// `∫_{∂Ω} g v dH^{N-1}` for facetwise-constant `g` and the P1 trace of `v`.
pub fn boundary_integral<T: Real>(mesh: &Mesh<T>, g: &BoundaryData<T>, v: &ScalarField<T>) -> Result<T> {
    check_len(mesh.boundary_facets().len(), g.values.len())?;
    check_len(mesh.num_nodes(), v.len())?;
    Ok(mesh
        .boundary_facets()
        .iter()
        .zip(&g.values)
        .map(|(f, &gf)| {
            let trace: T = f.nodes.iter().map(|&i| v.values[i]).sum();
            gf * f.measure * trace / T::from_usize_lossy(f.nodes.len())
        })
        .sum())
}

/// Outcome of the compatibility check `∫_{∂Ω} g = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompatibilityCheck<T> {
    /// `∫_{∂Ω} g dH^{N-1}`
    pub residual: T,
    /// `∫_{∂Ω} |g| dH^{N-1}`
    pub absolute_total: T,
    pub passed: bool,
}

pub fn check_compatibility<T: Real>(mesh: &Mesh<T>, g: &BoundaryData<T>, tol: T) -> Result<CompatibilityCheck<T>> {
    let one = ScalarField {
        values: vec![T::one(); mesh.num_nodes()],
    };
    let residual = boundary_integral(mesh, g, &one)?;
    let absolute_total: T = mesh
        .boundary_facets()
        .iter()
        .zip(&g.values)
        .map(|(f, v)| v.abs() * f.measure)
        .sum();
    Ok(CompatibilityCheck {
        residual,
        absolute_total,
        passed: residual.abs() <= tol * absolute_total.max(T::one()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport<T> {
    /// Minimum nodal weight over boundary nodes is positive.
    pub boundary_positive: bool,
    /// `q/p < 1 + 1/N`.
    pub exponent_ratio: bool,
    /// Largest edge difference quotient is within the declared constant;
    /// `None` when no constant was declared.
    pub lipschitz: Option<bool>,
    pub min_boundary_weight: T,
    pub ratio: T,
    pub max_difference_quotient: T,
}

impl<T: Real> HypothesisReport<T> {
    pub fn all_passed(&self) -> bool {
        self.boundary_positive && self.exponent_ratio && self.lipschitz.unwrap_or(true)
    }

    fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.boundary_positive {
            out.push(format!(
                "weight must be positive on the boundary (min boundary value {})",
                self.min_boundary_weight
            ));
        }
        if !self.exponent_ratio {
            out.push(format!("exponent ratio q/p = {} must be below 1 + 1/N", self.ratio));
        }
        if self.lipschitz == Some(false) {
            out.push(format!(
                "weight difference quotient {} exceeds the declared Lipschitz constant",
                self.max_difference_quotient
            ));
        }
        out
    }
}

/// Checks the standing hypotheses on the weight and the exponents. In strict
/// mode a failing clause is an error; otherwise failures are logged.
pub fn check_weight_hypotheses<T: Real>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    pq: &ExponentPair<T>,
    strict: bool,
) -> Result<HypothesisReport<T>> {
    check_len(mesh.num_nodes(), a.values.len())?;
    let min_boundary_weight = (0..mesh.num_nodes())
        .filter(|&i| mesh.is_boundary_node(i))
        .map(|i| a.values[i])
        .fold(T::infinity(), T::min);
    let mut max_difference_quotient = T::zero();
    for &[i, j] in mesh.edges() {
        let xi = mesh.nodes()[i];
        let xj = mesh.nodes()[j];
        let length = norm(&[xi[0] - xj[0], xi[1] - xj[1]]);
        max_difference_quotient = max_difference_quotient.max((a.values[i] - a.values[j]).abs() / length);
    }
    let slack = T::one() + T::lit(1e3) * T::epsilon();
    let report = HypothesisReport {
        boundary_positive: min_boundary_weight > T::zero(),
        exponent_ratio: pq.hypothesis_h(),
        lipschitz: a.lipschitz.map(|l| max_difference_quotient <= l * slack + T::epsilon()),
        min_boundary_weight,
        ratio: pq.q() / pq.p(),
        max_difference_quotient,
    };
    let failures = report.failures();
    if !failures.is_empty() {
        if strict {
            return Err(Error::HypothesisViolation {
                clause: failures.join("; "),
            });
        }
        for f in failures {
            warn!("hypothesis (H): {f}");
        }
    }
    Ok(report)
}

/// Samples per cube edge used by [`check_muckenhoupt`].
pub const MUCKENHOUPT_SAMPLES: usize = 8;

/// Sampled lower bound for the `A_q` constant of `a`.
///
/// Takes the maximum of `(avg_Q a)·(avg_Q a^{-1/(q-1)})^{q-1}` over the dyadic
/// cubes of levels `0..=cube_levels` anchored at the bounding box. Each
/// average uses the midpoints of a `MUCKENHOUPT_SAMPLES^N` grid on the cube,
/// restricted to points of Ω.
pub fn check_muckenhoupt<T: Real>(mesh: &Mesh<T>, a: &WeightField<T>, q: T, cube_levels: usize) -> Result<T> {
    check_len(mesh.num_nodes(), a.values.len())?;
    if !(q > T::one()) {
        return Err(Error::InvalidParameter(format!("A_q requires q > 1, got {q}")));
    }
    if let Some(i) = a.values.iter().position(|&v| !(v > T::zero())) {
        let x = mesh.nodes()[i];
        return Err(Error::WeightDegenerate {
            x: x[0].to_f64_lossy(),
            y: x[1].to_f64_lossy(),
        });
    }
    let dim = mesh.dim();
    let (lo, hi) = mesh.bounding_box();
    let extent = [hi[0] - lo[0], hi[1] - lo[1]];
    let side = if dim == 1 { extent[0] } else { extent[0].max(extent[1]) };
    let dual = -T::one() / (q - T::one());
    let samples = MUCKENHOUPT_SAMPLES;
    let mut best = T::zero();

    for level in 0..=cube_levels {
        let cells = 1usize << level;
        let width = side / T::from_usize_lossy(cells);
        let count = |d: usize| -> usize {
            if d >= dim {
                1
            } else {
                (extent[d] / width).ceil().to_usize().unwrap_or(cells).clamp(1, cells)
            }
        };
        for j in 0..count(1) {
            for i in 0..count(0) {
                let origin = [
                    lo[0] + width * T::from_usize_lossy(i),
                    lo[1] + width * T::from_usize_lossy(j),
                ];
                let mut sum_a = T::zero();
                let mut sum_dual = T::zero();
                let mut n = 0usize;
                let rows = if dim == 1 { 1 } else { samples };
                for sj in 0..rows {
                    for si in 0..samples {
                        let offset = |s: usize| width * (T::from_usize_lossy(s) + T::lit(0.5)) / T::from_usize_lossy(samples);
                        let point = [origin[0] + offset(si), if dim == 1 { T::zero() } else { origin[1] + offset(sj) }];
                        if point[0] > hi[0] || point[1] > hi[1] {
                            continue;
                        }
                        let Some(value) = mesh.interpolate(&a.values, &point) else {
                            continue;
                        };
                        if !(value > T::zero()) {
                            return Err(Error::WeightDegenerate {
                                x: point[0].to_f64_lossy(),
                                y: point[1].to_f64_lossy(),
                            });
                        }
                        sum_a += value;
                        sum_dual += value.powf(dual);
                        n += 1;
                    }
                }
                if n == 0 {
                    continue;
                }
                let nf = T::from_usize_lossy(n);
                let estimate = (sum_a / nf) * (sum_dual / nf).powf(q - T::one());
                best = best.max(estimate);
            }
        }
    }
    Ok(best)
}
