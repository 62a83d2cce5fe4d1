//! The discrete approximate functional
//!
//! `F_p(u) = Σ_K |K| ((m_ε^p − ε^p)/p + a_K (m_ε^q − ε^q)/q) − ∫_{∂Ω} g u`,
//!
//! with `m_ε = √(|∇u_K|² + ε²)`, its gradient and Hessian action, and the
//! limiting functional `I`. Energy, gradient and Hessian use the same
//! smoothed magnitude, so they are exact derivatives of one functional.

use crate::error::{check_len, Error, Result};
use crate::fields::{boundary_integral, BoundaryData, ScalarField, WeightField};
use crate::mesh::{dot, Mesh, Vector};
use crate::orlicz::{discrete_total_variation, weighted_lq_norm, ExponentPair};
use crate::scalar::Real;

/// Regularization used along the continuation: `max(1e-10, 1e-4 (p − 1))`.
pub fn default_eps<T: Real>(p: T) -> T {
    T::lit(1e-10).max(T::lit(1e-4) * (p - T::one()))
}

/// Removes the uniform component of a nodal (dual) vector so that it
/// annihilates constants.
pub(crate) fn project_sum_zero<T: Real>(v: &mut [T]) {
    let mean = v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len());
    for x in v.iter_mut() {
        *x -= mean;
    }
}

/// `F_p` on a fixed mesh, weight, exponent pair, datum and regularization.
#[derive(Debug, Clone)]
pub struct ApproxFunctional<'a, T: Real> {
    mesh: &'a Mesh<T>,
    weights: Vec<T>,
    pq: ExponentPair<T>,
    eps: T,
    /// `∫_{∂Ω} g φ_i`
    load: Vec<T>,
}

impl<'a, T: Real> ApproxFunctional<'a, T> {
    pub fn new(
        mesh: &'a Mesh<T>,
        a: &WeightField<T>,
        pq: ExponentPair<T>,
        g: &BoundaryData<T>,
        eps: T,
    ) -> Result<Self> {
        if !(eps >= T::zero()) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("eps must be finite and >= 0, got {eps}")));
        }
        check_len(mesh.boundary_facets().len(), g.values().len())?;
        let mut load = vec![T::zero(); mesh.num_nodes()];
        for (f, &gf) in mesh.boundary_facets().iter().zip(g.values()) {
            let share = gf * f.measure / T::from_usize_lossy(f.nodes.len());
            for &i in &f.nodes {
                load[i] += share;
            }
        }
        Ok(Self {
            mesh,
            weights: a.centroid_values(mesh)?,
            pq,
            eps,
            load,
        })
    }

    pub fn mesh(&self) -> &'a Mesh<T> {
        self.mesh
    }

    pub fn exponents(&self) -> &ExponentPair<T> {
        &self.pq
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    /// Weight at each element centroid.
    pub fn centroid_weights(&self) -> &[T] {
        &self.weights
    }

    fn magnitude(&self, v: &Vector<T>) -> T {
        (dot(v, v) + self.eps * self.eps).sqrt()
    }

    fn density(&self, m: T, a: T) -> T {
        let (p, q, e) = (self.pq.p(), self.pq.q(), self.eps);
        (m.powf(p) - e.powf(p)) / p + a * (m.powf(q) - e.powf(q)) / q
    }

    /// `c(m)` in the flux `c(m) v = (m^{p−2} + a m^{q−2}) v`; zero at `m = 0`.
    fn flux_coefficient(&self, m: T, a: T) -> T {
        if m == T::zero() {
            return T::zero();
        }
        let two = T::lit(2.0);
        m.powf(self.pq.p() - two) + a * m.powf(self.pq.q() - two)
    }

    /// Smoothed flux `(m_ε^{p−2} + a m_ε^{q−2}) v` of an element gradient.
    pub fn flux(&self, grad: &Vector<T>, a: T) -> Vector<T> {
        let c = self.flux_coefficient(self.magnitude(grad), a);
        [c * grad[0], c * grad[1]]
    }

    pub fn energy(&self, u: &[T]) -> Result<T> {
        let grads = self.mesh.element_gradients(u)?;
        let bulk: T = grads
            .iter()
            .zip(&self.weights)
            .zip(self.mesh.element_measures())
            .map(|((g, &a), &vol)| vol * self.density(self.magnitude(g), a))
            .sum();
        let boundary: T = self.load.iter().zip(u).map(|(&b, &v)| b * v).sum();
        Ok(bulk - boundary)
    }

    /// Nodal residual `∫ ζ·∇φ_i − ∫_{∂Ω} g φ_i` without projection.
    pub fn residual(&self, u: &[T]) -> Result<Vec<T>> {
        let grads = self.mesh.element_gradients(u)?;
        let mut r: Vec<T> = self.load.iter().map(|&b| -b).collect();
        for (k, element) in self.mesh.elements().iter().enumerate() {
            let flux = self.flux(&grads[k], self.weights[k]);
            let vol = self.mesh.element_measures()[k];
            for (&i, phi) in element.iter().zip(self.mesh.hat_gradients(k)) {
                r[i] += vol * dot(&flux, phi);
            }
        }
        Ok(r)
    }

    /// Gradient of the energy with respect to the nodal values, projected to
    /// annihilate constants. Zero exactly at a stationary point on the
    /// mean-zero slice.
    pub fn gradient(&self, u: &[T]) -> Result<Vec<T>> {
        let mut r = self.residual(u)?;
        project_sum_zero(&mut r);
        Ok(r)
    }

    /// Matrix-free Hessian action `H(u) d`, projected like [`Self::gradient`].
    pub fn hessian_apply(&self, u: &[T], direction: &[T]) -> Result<Vec<T>> {
        let two = T::lit(2.0);
        if self.eps == T::zero() && self.pq.p() < two {
            return Err(Error::RegularizationRequired {
                p: self.pq.p().to_f64_lossy(),
            });
        }
        let grads = self.mesh.element_gradients(u)?;
        let dgrads = self.mesh.element_gradients(direction)?;
        let (p, q) = (self.pq.p(), self.pq.q());
        let four = T::lit(4.0);
        let mut out = vec![T::zero(); self.mesh.num_nodes()];
        for (k, element) in self.mesh.elements().iter().enumerate() {
            let v = grads[k];
            let a = self.weights[k];
            let m = self.magnitude(&v);
            let (c, rank_one) = if m == T::zero() {
                // only reachable with eps = 0 and p >= 2
                let c = if p == two { T::one() } else { T::zero() };
                (c, T::zero())
            } else {
                let c = m.powf(p - two) + a * m.powf(q - two);
                let r = (p - two) * m.powf(p - four) + a * (q - two) * m.powf(q - four);
                (c, r)
            };
            let dv = dgrads[k];
            let vd = dot(&v, &dv);
            let action = [c * dv[0] + rank_one * vd * v[0], c * dv[1] + rank_one * vd * v[1]];
            let vol = self.mesh.element_measures()[k];
            for (&i, phi) in element.iter().zip(self.mesh.hat_gradients(k)) {
                out[i] += vol * dot(&action, phi);
            }
        }
        project_sum_zero(&mut out);
        Ok(out)
    }
}

/// `I(u) = Σ_K |K| |∇u_K| + (1/q) Σ_K |K| a_K |∇u_K|^q − ∫_{∂Ω} g u`.
pub fn limit_energy<T: Real>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    q: T,
    g: &BoundaryData<T>,
    u: &ScalarField<T>,
) -> Result<T> {
    let grads = mesh.element_gradients(u.values())?;
    let tv = discrete_total_variation(mesh, u)?;
    let lq = weighted_lq_norm(mesh, a, q, &grads)?;
    Ok(tv + lq.powf(q) / q - boundary_integral(mesh, g, u)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::project_mean_zero;
    use crate::mesh::{build_interval_mesh, build_unit_square_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pq(p: f64, q: f64, dim: usize) -> ExponentPair {
        ExponentPair::new(p, q, dim).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn compatible_datum(mesh: &Mesh, rng: &mut ChaCha8Rng) -> BoundaryData {
        let raw: Vec<f64> = (0..mesh.boundary_facets().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let total: f64 = mesh.boundary_facets().iter().zip(&raw).map(|(f, g)| f.measure * g).sum();
        let shift = total / mesh.boundary_measure();
        BoundaryData::new(mesh, raw.iter().map(|g| g - shift).collect()).unwrap()
    }

    #[test]
    fn energy_of_zero_and_constant_fields() {
        let m: Mesh = build_unit_square_mesh(3).unwrap();
        let a = WeightField::constant(&m, 1.0).unwrap();
        let g = BoundaryData::constant(&m, 0.3).unwrap();
        let f = ApproxFunctional::new(&m, &a, pq(1.5, 1.9, 2), &g, 0.0).unwrap();
        assert_eq!(f.energy(&vec![0.0; m.num_nodes()]).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = compatible_datum(&m, &mut rng);
        let f = ApproxFunctional::new(&m, &a, pq(1.5, 1.9, 2), &g, 0.0).unwrap();
        assert!(f.energy(&vec![2.5; m.num_nodes()]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn smoothed_energy_vanishes_at_zero() {
        let m: Mesh = build_interval_mesh(4, 1.0).unwrap();
        let a = WeightField::constant(&m, 0.7).unwrap();
        let g = BoundaryData::zeros(&m);
        let f = ApproxFunctional::new(&m, &a, pq(1.2, 1.9, 1), &g, 1e-3).unwrap();
        assert_eq!(f.energy(&[0.0; 5]).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_constant_flux_energy() {
        // σ(s) = s + s² = t ⇒ s = (−1 + √(1 + 4t)) / 2; F(u) = s²/2 + s³/3 − t s
        let t: f64 = 0.06;
        let s = (-1.0 + (1.0 + 4.0 * t).sqrt()) / 2.0;
        assert!((s - 0.056_776_0).abs() < 1e-6);
        let oracle = s * s / 2.0 + s.powi(3) / 3.0 - t * s;

        let m: Mesh = build_interval_mesh(2, 1.0).unwrap();
        let a = WeightField::constant(&m, 1.0).unwrap();
        let g = BoundaryData::new(&m, vec![-t, t]).unwrap();
        let f = ApproxFunctional::new(&m, &a, pq(2.0, 3.0, 1), &g, 0.0).unwrap();
        let u = ScalarField::from_fn(&m, |x| s * (x[0] - 0.5));
        let e = f.energy(u.values()).unwrap();
        assert!((e - oracle).abs() < 1e-15, "{e} vs {oracle}");
        // and it is stationary there
        let r = f.gradient(u.values()).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn zero_field_is_stationary_for_zero_datum() {
        let m: Mesh = build_unit_square_mesh(3).unwrap();
        let a = WeightField::constant(&m, 1.0).unwrap();
        let g = BoundaryData::zeros(&m);
        let f = ApproxFunctional::new(&m, &a, pq(1.5, 1.9, 2), &g, 1e-6).unwrap();
        assert!(f.gradient(&vec![0.0; m.num_nodes()]).unwrap().iter().all(|&v| v == 0.0));
    }

    /// Dense stiffness assembly, independent of the functional's code path,
    /// for the quadratic case `p = 2`, `a ≡ 0`.
    fn dense_stiffness(mesh: &Mesh) -> nalgebra::DMatrix<f64> {
        let n = mesh.num_nodes();
        let mut k = nalgebra::DMatrix::zeros(n, n);
        for element in mesh.elements() {
            let x: Vec<_> = element.iter().map(|&i| mesh.nodes()[i]).collect();
            let area = 0.5 * ((x[1][0] - x[0][0]) * (x[2][1] - x[0][1]) - (x[2][0] - x[0][0]) * (x[1][1] - x[0][1]));
            let b = [x[1][1] - x[2][1], x[2][1] - x[0][1], x[0][1] - x[1][1]];
            let c = [x[2][0] - x[1][0], x[0][0] - x[2][0], x[1][0] - x[0][0]];
            for i in 0..3 {
                for j in 0..3 {
                    k[(element[i], element[j])] += (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
                }
            }
        }
        k
    }

    #[test]
    fn linear_case_matches_direct_solve() {
        let m: Mesh = build_unit_square_mesh(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = compatible_datum(&m, &mut rng);
        let n = m.num_nodes();
        // load vector by facet midpoint rule, exact for facetwise-constant g
        let mut b = nalgebra::DVector::zeros(n + 1);
        for (f, gv) in m.boundary_facets().iter().zip(g.values()) {
            for &i in &f.nodes {
                b[i] += gv * f.measure / 2.0;
            }
        }
        // bordered system pins the mean with a multiplier
        let k = dense_stiffness(&m);
        let mut sys = nalgebra::DMatrix::zeros(n + 1, n + 1);
        sys.view_mut((0, 0), (n, n)).copy_from(&k);
        for i in 0..n {
            sys[(i, n)] = m.lumped_mass()[i];
            sys[(n, i)] = m.lumped_mass()[i];
        }
        let sol = sys.lu().solve(&b).unwrap();
        let u: Vec<f64> = sol.iter().take(n).copied().collect();

        let a = WeightField::constant(&m, 0.0).unwrap();
        let f = ApproxFunctional::new(&m, &a, pq(2.0, 3.0, 2), &g, default_eps(2.0)).unwrap();
        let r = f.gradient(&u).unwrap();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-10, "{norm}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (mesh, e) in [
            (build_interval_mesh(7, 1.0).unwrap(), pq(1.5, 1.9, 1)),
            (build_unit_square_mesh(3).unwrap(), pq(1.3, 1.45, 2)),
            (build_unit_square_mesh(3).unwrap(), pq(2.0, 3.0, 2)),
        ] {
            let a = WeightField::from_fn(&mesh, |x| 0.5 + x[0], None).unwrap();
            for _ in 0..20 {
                let g = compatible_datum(&mesh, &mut rng);
                let f = ApproxFunctional::new(&mesh, &a, e, &g, 1e-6).unwrap();
                let u = random_vec(&mut rng, mesh.num_nodes());
                let grad = f.gradient(&u).unwrap();
                let h = 1e-6;
                let mut fd = Vec::with_capacity(u.len());
                for i in 0..u.len() {
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up[i] += h;
                    um[i] -= h;
                    fd.push((f.energy(&up).unwrap() - f.energy(&um).unwrap()) / (2.0 * h));
                }
                let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let scale: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!(diff <= 1e-6 * scale.max(1.0), "{diff} vs {scale}");
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences_and_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mesh: Mesh = build_unit_square_mesh(3).unwrap();
        let a = WeightField::from_fn(&mesh, |x| x[1], None).unwrap();
        let g = compatible_datum(&mesh, &mut rng);
        let f = ApproxFunctional::new(&mesh, &a, pq(1.4, 1.9, 2), &g, 1e-3).unwrap();
        let n = mesh.num_nodes();
        for _ in 0..20 {
            let u = random_vec(&mut rng, n);
            let d = random_vec(&mut rng, n);
            let hd = f.hessian_apply(&u, &d).unwrap();
            let h = 1e-6;
            let up: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + h * b).collect();
            let um: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a - h * b).collect();
            let gp = f.gradient(&up).unwrap();
            let gm = f.gradient(&um).unwrap();
            let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let diff = hd.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = hd.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff <= 1e-4 * scale, "{diff} vs {scale}");
        }
        for _ in 0..100 {
            let u = random_vec(&mut rng, n);
            let d1 = random_vec(&mut rng, n);
            let d2 = random_vec(&mut rng, n);
            let h1 = f.hessian_apply(&u, &d1).unwrap();
            let h2 = f.hessian_apply(&u, &d2).unwrap();
            let a: f64 = h1.iter().zip(&d2).map(|(x, y)| x * y).sum();
            let b: f64 = h2.iter().zip(&d1).map(|(x, y)| x * y).sum();
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
            let quad: f64 = h1.iter().zip(&d1).map(|(x, y)| x * y).sum();
            assert!(quad >= -1e-12);
        }
    }

    #[test]
    fn quadratic_hessian_is_state_independent() {
        let mesh: Mesh = build_unit_square_mesh(2).unwrap();
        let a = WeightField::constant(&mesh, 0.0).unwrap();
        let g = BoundaryData::zeros(&mesh);
        let f = ApproxFunctional::new(&mesh, &a, pq(2.0, 3.0, 2), &g, 1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_vec(&mut rng, mesh.num_nodes());
        let h0 = f.hessian_apply(&vec![0.0; mesh.num_nodes()], &d).unwrap();
        let h1 = f.hessian_apply(&random_vec(&mut rng, mesh.num_nodes()), &d).unwrap();
        for (x, y) in h0.iter().zip(&h1) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_requires_regularization_below_two() {
        let mesh: Mesh = build_interval_mesh(3, 1.0).unwrap();
        let a = WeightField::constant(&mesh, 1.0).unwrap();
        let g = BoundaryData::zeros(&mesh);
        let f = ApproxFunctional::new(&mesh, &a, pq(1.5, 1.9, 1), &g, 0.0).unwrap();
        assert!(matches!(
            f.hessian_apply(&[0.0; 4], &[1.0; 4]),
            Err(Error::RegularizationRequired { .. })
        ));
        // p >= 2 needs no smoothing, even at a zero gradient
        let f = ApproxFunctional::new(&mesh, &a, pq(2.0, 3.0, 1), &g, 0.0).unwrap();
        let h = f.hessian_apply(&[0.0; 4], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn convexity_along_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mesh: Mesh = build_unit_square_mesh(3).unwrap();
        let a = WeightField::from_fn(&mesh, |x| x[0] * x[0], None).unwrap();
        let g = compatible_datum(&mesh, &mut rng);
        let f = ApproxFunctional::new(&mesh, &a, pq(1.2, 1.4, 2), &g, 0.0).unwrap();
        for _ in 0..10 {
            let u = random_vec(&mut rng, mesh.num_nodes());
            let v = random_vec(&mut rng, mesh.num_nodes());
            let (fu, fv) = (f.energy(&u).unwrap(), f.energy(&v).unwrap());
            for j in 0..20 {
                let s = j as f64 / 19.0;
                let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| s * a + (1.0 - s) * b).collect();
                let scale = 1.0 + fu.abs() + fv.abs();
                assert!(f.energy(&w).unwrap() <= s * fu + (1.0 - s) * fv + 1e-12 * scale);
            }
        }
    }

    #[test]
    fn translation_invariance_for_compatible_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mesh: Mesh = build_unit_square_mesh(4).unwrap();
        let a = WeightField::constant(&mesh, 1.0).unwrap();
        let g = compatible_datum(&mesh, &mut rng);
        let f = ApproxFunctional::new(&mesh, &a, pq(1.5, 1.9, 2), &g, 1e-5).unwrap();
        let u = random_vec(&mut rng, mesh.num_nodes());
        let fu = f.energy(&u).unwrap();
        for c in [-3.0, 0.1, 10.0] {
            let shifted: Vec<f64> = u.iter().map(|v| v + c).collect();
            assert!((f.energy(&shifted).unwrap() - fu).abs() <= 1e-10 * (1.0 + fu.abs()));
        }
    }

    #[test]
    fn limit_energy_examples() {
        let m: Mesh = build_interval_mesh(6, 1.0).unwrap();
        let a = WeightField::constant(&m, 1.0).unwrap();
        let t = 0.4;
        let g = BoundaryData::new(&m, vec![-t, t]).unwrap();
        assert_eq!(limit_energy(&m, &a, 1.9, &g, &ScalarField::zeros(&m)).unwrap(), 0.0);
        let u = ScalarField::from_fn(&m, |x| x[0] - 0.5);
        let i = limit_energy(&m, &a, 1.9, &g, &u).unwrap();
        assert!((i - (1.0 + 1.0 / 1.9 - t)).abs() < 1e-13);
    }

    #[test]
    fn approximate_energy_tends_to_limit_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mesh: Mesh = build_unit_square_mesh(3).unwrap();
        let a = WeightField::constant(&mesh, 1.0).unwrap();
        let g = compatible_datum(&mesh, &mut rng);
        let u = project_mean_zero(&mesh, &ScalarField::new(&mesh, random_vec(&mut rng, mesh.num_nodes())).unwrap()).unwrap();
        let q = 1.4;
        let limit = limit_energy(&mesh, &a, q, &g, &u).unwrap();
        let mut ratios = Vec::new();
        for p in [1.25, 1.125, 1.0625, 1.03125] {
            let f = ApproxFunctional::new(&mesh, &a, pq(p, q, 2), &g, 0.0).unwrap();
            let gap = (f.energy(u.values()).unwrap() - limit).abs();
            ratios.push(gap / (p - 1.0));
        }
        // |F_p − I| / (p − 1) settles to a constant
        let spread = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 2.0, "{ratios:?}");
        let last = ratios.len() - 1;
        assert!((ratios[last] - ratios[last - 1]).abs() < 0.1 * ratios[last], "{ratios:?}");
    }
}
