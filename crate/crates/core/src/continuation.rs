//! Continuation `p ↓ 1` and the discrete verification of the limit problem.
//!
//! [`run_continuation`] solves the approximate problems along a decreasing
//! schedule of exponents with warm starts and extracts the flux pair `(z, w)`
//! at the last step. [`verify_limit_solution`] checks the conditions a limit
//! solution must satisfy: `z·∇u = |∇u|`, `‖z‖_∞ ≤ 1`, zero weak divergence of
//! `ζ = z + a|w|^{q−2}w`, normal trace `ζ·ν = g`, and minimality for `I`.
//! The constants in the smallness condition on `g` are estimated from below
//! by local search.

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::energy::{default_eps, limit_energy};
use crate::error::{check_len, Error, Result};
use crate::fields::{
    boundary_integral, check_compatibility, check_weight_hypotheses, integrate_scalar, project_mean_zero,
    BoundaryData, HypothesisReport, ScalarField, WeightField,
};
use crate::mesh::{dot, norm, Mesh, Vector};
use crate::orlicz::{luxemburg_norm, weighted_lq_norm, ExponentPair};
use crate::scalar::Real;
use crate::solver::{minimize_approx, SolverOptions};

/// `p_k = 1 + 2^{−k}` for `k = 1..=steps`.
pub fn default_p_schedule<T: Real>(steps: usize) -> Result<Vec<T>> {
    if steps == 0 {
        return Err(Error::InvalidParameter("schedule needs at least one step".into()));
    }
    Ok((1..=steps)
        .map(|k| T::one() + T::lit(0.5).powi(k as i32))
        .collect())
}

/// Per-element flux pair: `z = m_ε^{p−2}∇u`, `w = ∇u` and the composite
/// `ζ = z + a m_ε^{q−2} w`.
///
/// The q-phase term uses the same smoothed magnitude as the solver, so that
/// `ζ` is exactly the flux whose divergence the discrete minimizer balances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxField<T> {
    pub z: Vec<Vector<T>>,
    pub w: Vec<Vector<T>>,
    pub zeta: Vec<Vector<T>>,
}

impl<T: Real> FluxField<T> {
    /// `max_K |z_K|`
    pub fn sup_z(&self) -> T {
        self.z.iter().map(norm).fold(T::zero(), T::max)
    }
}

pub fn extract_flux<T: Real>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    pq: &ExponentPair<T>,
    u: &ScalarField<T>,
    eps: T,
) -> Result<FluxField<T>> {
    let w = mesh.element_gradients(u.values())?;
    let weights = a.centroid_values(mesh)?;
    let two = T::lit(2.0);
    let mut z = Vec::with_capacity(w.len());
    let mut zeta = Vec::with_capacity(w.len());
    for (grad, &weight) in w.iter().zip(&weights) {
        let m = (dot(grad, grad) + eps * eps).sqrt();
        let (cp, cq) = if m == T::zero() {
            (T::zero(), T::zero())
        } else {
            (m.powf(pq.p() - two), weight * m.powf(pq.q() - two))
        };
        z.push([cp * grad[0], cp * grad[1]]);
        zeta.push([(cp + cq) * grad[0], (cp + cq) * grad[1]]);
    }
    Ok(FluxField { z, w, zeta })
}

#[derive(Debug, Clone)]
pub struct ContinuationOptions<T: Real> {
    /// Inner solver settings; `eps: None` applies [`default_eps`] per step.
    pub solver: SolverOptions<T>,
    /// Seed for warm-start perturbations.
    pub seed: u64,
    /// Amplitude of a random mean-zero perturbation added to every warm start.
    pub perturbation: T,
    /// Require `q < 1 + 1/N` and the weight hypotheses before starting.
    pub strict: bool,
}

impl<T: Real> Default for ContinuationOptions<T> {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            seed: 0,
            perturbation: T::zero(),
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepSummary<T> {
    /// 1-based step index.
    pub k: usize,
    pub p: T,
    pub eps: T,
    pub energy: T,
    pub lambda_p: T,
    pub gradient_norm: T,
    pub newton_iters: usize,
    pub line_search_backtracks: usize,
    pub converged: bool,
    /// `‖∇u_{p_{k−1}} − ∇u_{p_k}‖_{L^q_a}`, absent for the first step.
    pub grad_increment_lq_a: Option<T>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmallnessCheck<T> {
    /// `2 Λ₁ (C_P diam(Ω) + 1) ‖g‖_∞`
    pub value: T,
    pub passed: bool,
    pub trace_constant: T,
    pub poincare_constant: T,
    pub diameter: T,
    pub g_sup: T,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuationReport<T: Real> {
    pub q: T,
    pub schedule: Vec<T>,
    pub steps: Vec<StepSummary<T>>,
    /// Final mean-zero field.
    pub solution: ScalarField<T>,
    pub flux: FluxField<T>,
    pub hypothesis: Option<HypothesisReport<T>>,
    /// 0-based index of the step whose solve did not converge.
    pub aborted_at: Option<usize>,
    pub verification: Option<VerificationRecord<T>>,
    pub smallness: Option<SmallnessCheck<T>>,
}

impl<T: Real> ContinuationReport<T> {
    pub fn completed(&self) -> bool {
        self.aborted_at.is_none()
    }

    /// The abort as an error, for callers that treat it as fatal.
    pub fn check_completed(&self) -> Result<()> {
        match self.aborted_at {
            None => Ok(()),
            Some(step) => Err(Error::ContinuationAborted {
                step,
                p: self.schedule[step].to_f64_lossy(),
            }),
        }
    }

    /// `λ_p < 1` at every step.
    pub fn lambda_below_one(&self) -> bool {
        self.steps.iter().all(|s| s.lambda_p < T::one())
    }

    pub fn increments(&self) -> Vec<T> {
        self.steps.iter().filter_map(|s| s.grad_increment_lq_a).collect()
    }
}

fn random_mean_zero<T: Real>(mesh: &Mesh<T>, rng: &mut ChaCha8Rng, amplitude: T) -> Result<ScalarField<T>> {
    let values = (0..mesh.num_nodes())
        .map(|_| amplitude * T::lit(rng.gen_range(-1.0..1.0)))
        .collect();
    project_mean_zero(mesh, &ScalarField::new(mesh, values)?)
}

/// Solves the approximate problems along `schedule`, warm-starting each step
/// from the previous solution.
///
/// A step that fails to converge stops the run; the partial report is
/// returned with `aborted_at` set (see [`ContinuationReport::check_completed`]).
pub fn run_continuation<T: Real>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    q: T,
    g: &BoundaryData<T>,
    schedule: &[T],
    options: &ContinuationOptions<T>,
) -> Result<ContinuationReport<T>> {
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("empty p schedule".into()));
    }
    if !(q > T::one()) {
        return Err(Error::InvalidParameter(format!("q must exceed 1, got {q}")));
    }
    for (i, &p) in schedule.iter().enumerate() {
        if !(p > T::one()) || (i > 0 && !(p < schedule[i - 1])) {
            return Err(Error::InvalidParameter(format!(
                "schedule must be strictly decreasing and above 1, entry {i} is {p}"
            )));
        }
    }
    let dim = mesh.dim();
    let exponents: Vec<ExponentPair<T>> = schedule
        .iter()
        .map(|&p| ExponentPair::new(p, q, dim))
        .collect::<Result<_>>()?;

    let tol = T::lit(1e-10).max(T::lit(100.0) * T::epsilon());
    let compat = check_compatibility(mesh, g, tol)?;
    if !compat.passed {
        return Err(Error::Compatibility {
            residual: compat.residual.to_f64_lossy(),
        });
    }

    let limit_ratio = T::one() + T::one() / T::from_usize_lossy(dim);
    if !(q < limit_ratio) {
        let message = format!("q = {q} is not below 1 + 1/N = {limit_ratio}; (H) fails as p -> 1");
        if options.strict {
            return Err(Error::HypothesisViolation { clause: message });
        }
        warn!("{message}");
    }
    let last = exponents[exponents.len() - 1];
    let hypothesis = Some(check_weight_hypotheses(mesh, a, &last, options.strict)?);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut steps: Vec<StepSummary<T>> = Vec::with_capacity(schedule.len());
    let mut current = options
        .solver
        .initial_guess
        .clone()
        .unwrap_or_else(|| ScalarField::zeros(mesh));
    let mut previous_grad: Option<Vec<Vector<T>>> = None;
    let mut aborted_at = None;
    let mut final_eps = T::zero();

    for (index, pq) in exponents.iter().enumerate() {
        let mut guess = current.clone();
        if options.perturbation > T::zero() {
            let noise = random_mean_zero(mesh, &mut rng, options.perturbation)?;
            for (x, n) in guess.values_mut().iter_mut().zip(noise.values()) {
                *x += *n;
            }
        }
        let eps = options.solver.eps.unwrap_or_else(|| default_eps(pq.p()));
        let solver_options = SolverOptions {
            eps: Some(eps),
            initial_guess: Some(guess),
            ..options.solver.clone()
        };
        let report = minimize_approx(mesh, a, pq, g, &solver_options)?;
        let grad = mesh.element_gradients(report.solution.values())?;
        let increment = match &previous_grad {
            Some(prev) => {
                let diff: Vec<Vector<T>> = prev.iter().zip(&grad).map(|(x, y)| [x[0] - y[0], x[1] - y[1]]).collect();
                Some(weighted_lq_norm(mesh, a, q, &diff)?)
            }
            None => None,
        };
        info!(
            "step {}: p = {}, energy = {}, lambda_p = {}, newton = {}, converged = {}",
            index + 1,
            pq.p(),
            report.energy,
            report.lambda_p,
            report.iterations,
            report.converged
        );
        steps.push(StepSummary {
            k: index + 1,
            p: pq.p(),
            eps,
            energy: report.energy,
            lambda_p: report.lambda_p,
            gradient_norm: report.gradient_norm,
            newton_iters: report.iterations,
            line_search_backtracks: report.line_search_backtracks,
            converged: report.converged,
            grad_increment_lq_a: increment,
        });
        current = report.solution;
        previous_grad = Some(grad);
        final_eps = eps;
        if !report.converged {
            warn!("continuation aborted: solve at p = {} did not converge", pq.p());
            aborted_at = Some(index);
            break;
        }
    }

    let final_pq = exponents[steps.len() - 1];
    let flux = extract_flux(mesh, a, &final_pq, &current, final_eps)?;
    Ok(ContinuationReport {
        q,
        schedule: schedule.to_vec(),
        steps,
        solution: current,
        flux,
        hypothesis,
        aborted_at,
        verification: None,
        smallness: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationTolerances<T> {
    pub pairing: T,
    pub sup_norm: T,
    pub divergence: T,
    pub boundary_flux: T,
    /// Relative to `1 + |I(u)|`.
    pub minimality: T,
    /// Elements with `|∇u_K|` at most `max(grad_floor_rel · max_K |∇u_K|,
    /// grad_floor_abs)` count as having zero gradient in the pairing check.
    pub grad_floor_rel: T,
    pub grad_floor_abs: T,
    pub probes: usize,
    pub seed: u64,
}

impl<T: Real> Default for VerificationTolerances<T> {
    fn default() -> Self {
        Self {
            pairing: T::lit(1e-2),
            sup_norm: T::lit(1e-3),
            divergence: T::lit(1e-6),
            boundary_flux: T::lit(1e-3),
            minimality: T::lit(1e-6),
            grad_floor_rel: T::lit(1e-5),
            grad_floor_abs: T::lit(1e-4),
            probes: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationRecord<T> {
    /// `max (1 − z·∇u/|∇u|)` over elements above the gradient floor.
    pub pairing: T,
    pub pairing_elements: usize,
    /// `max |z| − 1`
    pub sup_norm: T,
    /// Largest relative `|∫ ζ·∇φ|` over interior hat functions.
    pub weak_divergence: T,
    /// Largest relative `|∫ ζ·∇v − ∫_{∂Ω} g v|` over boundary hat functions.
    pub boundary_flux: T,
    /// `min_v (I(v) − I(u)) / (1 + |I(u)|)` over the probes.
    pub minimality_margin: T,
    pub limit_energy: T,
    pub pairing_ok: bool,
    pub sup_norm_ok: bool,
    pub divergence_ok: bool,
    pub boundary_ok: bool,
    pub minimality_ok: bool,
}

impl<T> VerificationRecord<T> {
    pub fn all_passed(&self) -> bool {
        self.pairing_ok && self.sup_norm_ok && self.divergence_ok && self.boundary_ok && self.minimality_ok
    }
}

/// Discrete check of the limit problem's solution conditions for `(u, ζ)`.
pub fn verify_limit_solution<T: Real>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    q: T,
    g: &BoundaryData<T>,
    u: &ScalarField<T>,
    flux: &FluxField<T>,
    tols: &VerificationTolerances<T>,
) -> Result<VerificationRecord<T>> {
    let ne = mesh.num_elements();
    check_len(ne, flux.z.len())?;
    check_len(ne, flux.w.len())?;
    check_len(ne, flux.zeta.len())?;
    let grads = mesh.element_gradients(u.values())?;

    // (i) z·∇u = |∇u| where ∇u is not numerically zero
    let max_grad = grads.iter().map(norm).fold(T::zero(), T::max);
    let floor = (tols.grad_floor_rel * max_grad).max(tols.grad_floor_abs);
    let mut pairing = T::zero();
    let mut pairing_elements = 0;
    for (z, w) in flux.z.iter().zip(&grads) {
        let m = norm(w);
        if m > floor {
            pairing = pairing.max(T::one() - dot(z, w) / m);
            pairing_elements += 1;
        }
    }

    // (ii) ‖z‖_∞ ≤ 1
    let sup_norm = flux.sup_z() - T::one();

    // (iii)/(iv) nodal pairings of ζ with hat functions
    let n = mesh.num_nodes();
    let mut pairing_sum = vec![T::zero(); n];
    let mut zeta_sq = vec![T::zero(); n];
    let mut phi_sq = vec![T::zero(); n];
    let mut abs_sum = vec![T::zero(); n];
    for (k, element) in mesh.elements().iter().enumerate() {
        let vol = mesh.element_measures()[k];
        let zeta = flux.zeta[k];
        for (&i, phi) in element.iter().zip(mesh.hat_gradients(k)) {
            pairing_sum[i] += vol * dot(&zeta, phi);
            zeta_sq[i] += vol * dot(&zeta, &zeta);
            phi_sq[i] += vol * dot(phi, phi);
            abs_sum[i] += vol * norm(&zeta) * norm(phi);
        }
    }
    let mut load = vec![T::zero(); n];
    let mut load_abs = vec![T::zero(); n];
    for (f, &gf) in mesh.boundary_facets().iter().zip(g.values()) {
        let share = gf * f.measure / T::from_usize_lossy(f.nodes.len());
        for &i in &f.nodes {
            load[i] += share;
            load_abs[i] += share.abs();
        }
    }
    let relative = |num: T, den: T| -> T {
        if num == T::zero() {
            T::zero()
        } else if den > T::zero() {
            num / den
        } else {
            T::infinity()
        }
    };
    let mut weak_divergence = T::zero();
    let mut boundary_flux = T::zero();
    for i in 0..n {
        if mesh.is_boundary_node(i) {
            let r = relative((pairing_sum[i] - load[i]).abs(), abs_sum[i] + load_abs[i]);
            boundary_flux = boundary_flux.max(r);
        } else {
            let r = relative(pairing_sum[i].abs(), (zeta_sq[i] * phi_sq[i]).sqrt());
            weak_divergence = weak_divergence.max(r);
        }
    }

    // (v) minimality of I against random mean-zero probes
    let energy = limit_energy(mesh, a, q, g, u)?;
    let scale = T::one() + energy.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(tols.seed);
    let size = u.max_abs().max(T::one());
    let mut margin = T::infinity();
    let probes = tols.probes.max(1);
    for j in 0..probes {
        let frac = if probes > 1 { j as f64 / (probes - 1) as f64 } else { 0.0 };
        let probe = if j % 2 == 0 {
            // local perturbations of u, amplitudes 1e-4 .. 1
            let noise = random_mean_zero(mesh, &mut rng, T::lit(10f64.powf(-4.0 + 4.0 * frac)))?;
            let values = u.values().iter().zip(noise.values()).map(|(&x, &y)| x + y).collect();
            project_mean_zero(mesh, &ScalarField::new(mesh, values)?)?
        } else {
            random_mean_zero(mesh, &mut rng, size * T::lit(10f64.powf(-3.0 + 4.0 * frac)))?
        };
        let e = limit_energy(mesh, a, q, g, &probe)?;
        margin = margin.min((e - energy) / scale);
    }

    Ok(VerificationRecord {
        pairing,
        pairing_elements,
        sup_norm,
        weak_divergence,
        boundary_flux,
        minimality_margin: margin,
        limit_energy: energy,
        pairing_ok: pairing <= tols.pairing,
        sup_norm_ok: sup_norm <= tols.sup_norm,
        divergence_ok: weak_divergence <= tols.divergence,
        boundary_ok: boundary_flux <= tols.boundary_flux,
        minimality_ok: margin >= -tols.minimality,
    })
}

/// Number of starts of the trace-constant search (the constant field is one of them).
pub const TRACE_STARTS: usize = 32;

/// `‖v‖_{L¹(∂Ω)} / (‖v‖_{L¹(Ω)} + ‖∇v‖_{L¹(Ω)})` with vertex (lumped) quadrature.
fn trace_ratio<T: Real>(mesh: &Mesh<T>, v: &[T]) -> T {
    let boundary: T = mesh
        .boundary_facets()
        .iter()
        .map(|f| {
            let s: T = f.nodes.iter().map(|&i| v[i].abs()).sum();
            f.measure * s / T::from_usize_lossy(f.nodes.len())
        })
        .sum();
    let bulk: T = mesh.lumped_mass().iter().zip(v).map(|(&m, &x)| m * x.abs()).sum();
    let grads = mesh.element_gradients(v).expect("sizes checked by caller");
    let tv: T = grads.iter().zip(mesh.element_measures()).map(|(g, &m)| m * norm(g)).sum();
    let den = bulk + tv;
    if den > T::zero() {
        boundary / den
    } else {
        T::zero()
    }
}

/// Coordinate hill climbing on a scale-invariant ratio, rescaling the field
/// to unit sup-norm after every sweep.
fn ascend<T: Real>(
    mut v: Vec<T>,
    mut ratio: impl FnMut(&[T]) -> T,
    initial_step: T,
    min_step: T,
    max_sweeps: usize,
) -> (Vec<T>, T) {
    let mut best = ratio(&v);
    let mut step = initial_step;
    for _ in 0..max_sweeps {
        if step < min_step {
            break;
        }
        let mut improved = false;
        for i in 0..v.len() {
            let original = v[i];
            for sign in [T::one(), -T::one()] {
                v[i] = original + sign * step;
                let r = ratio(&v);
                if r > best {
                    best = r;
                    improved = true;
                    break;
                }
                v[i] = original;
            }
        }
        let sup = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        if sup > T::zero() {
            for x in v.iter_mut() {
                *x /= sup;
            }
        }
        if !improved {
            step *= T::lit(0.5);
        }
    }
    (v, best)
}

/// Lower bound for the best constant `Λ₁` of the trace embedding
/// `W^{1,1}(Ω) → L¹(∂Ω)` over the discrete space: the best ratio found by
/// multi-start local ascent, never below the ratio of the constant field.
pub fn estimate_trace_constant<T: Real>(mesh: &Mesh<T>, seed: u64) -> T {
    let n = mesh.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let constant_ratio = trace_ratio(mesh, &vec![T::one(); n]);
    let mut best = constant_ratio;
    for start in 0..TRACE_STARTS {
        let v: Vec<T> = if start == 0 {
            vec![T::one(); n]
        } else {
            (0..n).map(|_| T::lit(rng.gen_range(0.0..1.0))).collect()
        };
        let (_, r) = ascend(v, |x| trace_ratio(mesh, x), T::lit(0.25), T::lit(1e-3), 40);
        best = best.max(r);
    }
    best
}

/// Random starts for the Poincaré-constant search, besides the coordinate fields.
pub const POINCARE_RANDOM_STARTS: usize = 4;

/// `‖u − u_Ω‖_{θ_p} / (diam(Ω) ‖∇u‖_{θ_p})`, zero for constant `u`.
pub fn poincare_ratio<T: Real>(mesh: &Mesh<T>, a: &WeightField<T>, pq: &ExponentPair<T>, u: &ScalarField<T>) -> Result<T> {
    let centered = project_mean_zero(mesh, u)?;
    let grads = mesh.element_gradients(u.values())?;
    let top = luxemburg_norm(mesh, a, pq, &centered)?;
    let bottom = luxemburg_norm(mesh, a, pq, &grads)?;
    if bottom > T::zero() {
        Ok(top / (mesh.diameter() * bottom))
    } else {
        Ok(T::zero())
    }
}

/// Lower bound for the Poincaré–Wirtinger constant `C_P` in
/// `‖u − u_Ω‖_{θ_p} ≤ C_P diam(Ω) ‖∇u‖_{θ_p}`, by local ascent from the
/// coordinate fields and a few random fields.
pub fn estimate_poincare_constant<T: Real>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    pq: &ExponentPair<T>,
    seed: u64,
) -> Result<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<ScalarField<T>> = (0..mesh.dim()).map(|d| ScalarField::from_fn(mesh, |x| x[d])).collect();
    for _ in 0..POINCARE_RANDOM_STARTS {
        starts.push(random_mean_zero(mesh, &mut rng, T::one())?);
    }
    let mut best = T::zero();
    for start in starts {
        let initial = poincare_ratio(mesh, a, pq, &start)?;
        best = best.max(initial);
        let (_, r) = ascend(
            start.into_values(),
            |v| {
                let field = ScalarField::new(mesh, v.to_vec()).expect("size preserved");
                poincare_ratio(mesh, a, pq, &field).unwrap_or(T::zero())
            },
            T::lit(0.1),
            T::lit(5e-3),
            12,
        );
        best = best.max(r);
    }
    if best == T::zero() {
        warn!("Poincare constant search degenerated to 0");
    }
    Ok(best)
}

/// Evaluates the smallness condition `2 Λ₁ (C_P diam(Ω) + 1) ‖g‖_∞ < 1`
/// with the given constant estimates. Advisory: the estimates are heuristic.
pub fn smallness_check<T: Real>(
    mesh: &Mesh<T>,
    g: &BoundaryData<T>,
    trace: T,
    poincare: T,
) -> Result<SmallnessCheck<T>> {
    if !(trace > T::zero()) || !(poincare > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "constants must be positive, got trace = {trace}, poincare = {poincare}"
        )));
    }
    check_len(mesh.boundary_facets().len(), g.values().len())?;
    let diameter = mesh.diameter();
    let g_sup = g.sup_norm();
    let value = T::lit(2.0) * trace * (poincare * diameter + T::one()) * g_sup;
    Ok(SmallnessCheck {
        value,
        passed: value < T::one(),
        trace_constant: trace,
        poincare_constant: poincare,
        diameter,
        g_sup,
    })
}

/// `∫_Ω u` and `∫_{∂Ω} g u`, used by reports.
pub fn field_summary<T: Real>(mesh: &Mesh<T>, g: &BoundaryData<T>, u: &ScalarField<T>) -> Result<(T, T)> {
    Ok((integrate_scalar(mesh, u)?, boundary_integral(mesh, g, u)?))
}
