//! Minimization of the smoothed `F_p` over mean-zero P1 fields.
//!
//! [`minimize_approx`] is a damped inexact Newton method: the Newton system is
//! solved matrix-free by conjugate gradients on the subspace orthogonal to
//! constants, followed by Armijo backtracking. [`oracle_minimize`] is a
//! derivative-free coordinate descent for tiny meshes, used to cross-check it.

use log::debug;
use serde::Serialize;

use crate::energy::{default_eps, project_sum_zero, ApproxFunctional};
use crate::error::{Error, Result};
use crate::fields::{check_compatibility, project_mean_zero, BoundaryData, ScalarField, WeightField};
use crate::mesh::Mesh;
use crate::orlicz::{luxemburg_norm, ExponentPair};
use crate::scalar::Real;

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// Largest mesh the coordinate-descent oracle accepts.
pub const ORACLE_MAX_NODES: usize = 12;

#[derive(Debug, Clone)]
pub struct SolverOptions<T: Real> {
    /// First-order tolerance: stop when `‖∇F‖ ≤ tol (1 + |F|)`.
    pub tol: T,
    pub max_iter: usize,
    /// Magnitude regularization; `None` uses [`default_eps`].
    pub eps: Option<T>,
    pub initial_guess: Option<ScalarField<T>>,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-10).max(T::lit(100.0) * T::epsilon()),
            max_iter: 200,
            eps: None,
            initial_guess: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport<T: Real> {
    /// Mean-zero minimizer.
    pub solution: ScalarField<T>,
    pub energy: T,
    pub gradient_norm: T,
    pub iterations: usize,
    pub line_search_backtracks: usize,
    pub converged: bool,
    /// `λ_p = ‖∇u_p‖_{θ_p}`
    pub lambda_p: T,
    pub p: T,
    pub eps: T,
    /// Energy after every accepted step, starting with the initial guess.
    pub energy_history: Vec<T>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn l2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&xi, &yi)| yi + alpha * xi).collect()
}

fn require_compatible<T: Real>(mesh: &Mesh<T>, g: &BoundaryData<T>) -> Result<()> {
    let tol = T::lit(1e-10).max(T::lit(100.0) * T::epsilon());
    let check = check_compatibility(mesh, g, tol)?;
    if check.passed {
        Ok(())
    } else {
        Err(Error::Compatibility {
            residual: check.residual.to_f64_lossy(),
        })
    }
}

fn finite_energy<T: Real>(e: T) -> Result<T> {
    if e.is_finite() {
        Ok(e)
    } else {
        Err(Error::Numeric(format!("non-finite energy {e}")))
    }
}

/// Conjugate gradients for `H d = −r` on sum-zero vectors, to relative
/// residual `forcing`. Stops early on non-positive curvature.
fn newton_direction<T: Real>(
    functional: &ApproxFunctional<'_, T>,
    u: &[T],
    gradient: &[T],
    forcing: T,
    max_iter: usize,
) -> Result<Vec<T>> {
    let n = gradient.len();
    let mut x = vec![T::zero(); n];
    let mut r: Vec<T> = gradient.iter().map(|&g| -g).collect();
    project_sum_zero(&mut r);
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let target = forcing * rr.sqrt();
    for it in 0..max_iter {
        if rr.sqrt() <= target {
            break;
        }
        let hd = functional.hessian_apply(u, &d)?;
        let curvature = dot(&d, &hd);
        if !(curvature > T::zero()) {
            if it == 0 {
                return Ok(r);
            }
            break;
        }
        let alpha = rr / curvature;
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * hd[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..n {
            d[i] = r[i] + beta * d[i];
        }
    }
    Ok(x)
}

/// Unique mean-zero minimizer of the smoothed `F_p`.
///
/// Fails up front with [`Error::Compatibility`] when `∫_{∂Ω} g ≠ 0`: the
/// functional then decreases without bound along constants. Running out of
/// iterations is not an error; the report has `converged = false`.
pub fn minimize_approx<T: Real>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    pq: &ExponentPair<T>,
    g: &BoundaryData<T>,
    options: &SolverOptions<T>,
) -> Result<SolveReport<T>> {
    require_compatible(mesh, g)?;
    let eps = options.eps.unwrap_or_else(|| default_eps(pq.p()));
    let functional = ApproxFunctional::new(mesh, a, *pq, g, eps)?;

    let start = match &options.initial_guess {
        Some(guess) => project_mean_zero(mesh, guess)?,
        None => ScalarField::zeros(mesh),
    };
    let mut u = start.into_values();
    let mut energy = finite_energy(functional.energy(&u)?)?;
    let mut gradient = functional.gradient(&u)?;
    let mut gnorm = l2(&gradient);
    let mut history = vec![energy];
    let mut backtracks = 0;
    let mut iterations = 0;
    let mut converged = false;
    let slack = T::lit(16.0) * T::epsilon();
    let cg_cap = 2 * mesh.num_nodes() + 20;

    loop {
        if gnorm <= options.tol * (T::one() + energy.abs()) {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        let forcing = T::lit(0.1).min(gnorm);
        let mut direction = newton_direction(&functional, &u, &gradient, forcing, cg_cap)?;
        if !(dot(&direction, &gradient) < T::zero()) {
            direction = gradient.iter().map(|&g| -g).collect();
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                // Newton step rejected: retry along steepest descent
                direction = gradient.iter().map(|&g| -g).collect();
            }
            direction = project_mean_zero(mesh, &ScalarField::new(mesh, direction)?)?.into_values();
            let slope = dot(&direction, &gradient);
            let mut step = T::one();
            for _ in 0..=MAX_BACKTRACKS {
                let trial = axpy(step, &direction, &u);
                let trial_energy = functional.energy(&trial)?;
                if trial_energy.is_finite() {
                    if trial_energy <= energy + T::lit(ARMIJO_C) * step * slope {
                        accepted = Some((trial, trial_energy, None));
                        break;
                    }
                    // decrease below roundoff of the energy: accept if the
                    // energy is unchanged to machine precision and the
                    // gradient shrinks
                    if trial_energy <= energy + slack * (T::one() + energy.abs()) {
                        let trial_gradient = functional.gradient(&trial)?;
                        if l2(&trial_gradient) < gnorm {
                            accepted = Some((trial, trial_energy.min(energy), Some(trial_gradient)));
                            break;
                        }
                    }
                }
                step *= T::lit(BACKTRACK);
                backtracks += 1;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((next, next_energy, next_gradient)) = accepted else {
            debug!("line search failed at iteration {iterations}, |grad| = {gnorm}");
            break;
        };
        u = next;
        energy = finite_energy(next_energy)?;
        gradient = match next_gradient {
            Some(g) => g,
            None => functional.gradient(&u)?,
        };
        gnorm = l2(&gradient);
        history.push(energy);
        iterations += 1;
    }

    let grads = mesh.element_gradients(&u)?;
    let lambda_p = luxemburg_norm(mesh, a, pq, &grads)?;
    debug!(
        "p = {}: {} Newton steps, |grad| = {gnorm}, converged = {converged}",
        pq.p(),
        iterations
    );
    Ok(SolveReport {
        solution: ScalarField::new(mesh, u)?,
        energy,
        gradient_norm: gnorm,
        iterations,
        line_search_backtracks: backtracks,
        converged,
        lambda_p,
        p: pq.p(),
        eps,
        energy_history: history,
    })
}

/// Golden-section minimization of `f` over the bracket `[lo, hi]`.
fn golden_section<T: Real>(f: &mut impl FnMut(T) -> Result<T>, mut lo: T, mut hi: T) -> Result<(T, T)> {
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let tol = T::lit(1e-11).max(T::lit(8.0) * T::epsilon());
    for _ in 0..300 {
        if (hi - lo).abs() <= tol * (T::one() + x1.abs() + x2.abs()) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Expands a bracket `[a, c]` around a minimum of `f` starting at 0.
fn bracket_minimum<T: Real>(f: &mut impl FnMut(T) -> Result<T>, f0: T, step: T) -> Result<(T, T)> {
    let grow = T::lit(1.618_033_988_749_895);
    let mut h = step;
    let mut f_plus = f(h)?;
    if f_plus > f0 {
        h = -h;
        let f_minus = f(h)?;
        if f_minus > f0 {
            let s = step.abs();
            return Ok((-s, s));
        }
        f_plus = f_minus;
    }
    // f decreases from 0 towards h; walk further until it rises
    let mut prev = T::zero();
    let mut best = h;
    let mut best_value = f_plus;
    for _ in 0..200 {
        let next = best + (best - prev) * grow;
        let value = f(next)?;
        if value > best_value {
            return Ok(if next > prev { (prev, next) } else { (next, prev) });
        }
        prev = best;
        best = next;
        best_value = value;
    }
    Err(Error::Numeric("oracle line search found no bracket".into()))
}

/// Derivative-free reference minimizer for meshes with at most
/// [`ORACLE_MAX_NODES`] nodes.
///
/// Cyclic coordinate descent over all nodal values but the last, which is
/// eliminated by the mean-zero constraint. Each coordinate is minimized by
/// golden-section search; sweeps stop once the energy decrease per sweep
/// falls below `1e-13`.
pub fn oracle_minimize<T: Real>(
    mesh: &Mesh<T>,
    a: &WeightField<T>,
    pq: &ExponentPair<T>,
    g: &BoundaryData<T>,
    eps: T,
) -> Result<SolveReport<T>> {
    let n = mesh.num_nodes();
    if n > ORACLE_MAX_NODES {
        return Err(Error::OracleScale { nodes: n });
    }
    require_compatible(mesh, g)?;
    let functional = ApproxFunctional::new(mesh, a, *pq, g, eps)?;
    let mass = mesh.lumped_mass();
    let last = n - 1;

    let mut u = vec![T::zero(); n];
    let mut energy = finite_energy(functional.energy(&u)?)?;
    let mut history = vec![energy];
    let stop = T::lit(1e-13).max(T::lit(100.0) * T::epsilon());
    let mut converged = false;
    let mut sweeps = 0;
    let mut step = T::lit(0.1);

    while sweeps < 50_000 {
        let sweep_start = energy;
        for i in 0..last {
            let coupling = mass[i] / mass[last];
            let base = u.clone();
            let mut along = |delta: T| -> Result<T> {
                let mut trial = base.clone();
                trial[i] += delta;
                trial[last] -= coupling * delta;
                functional.energy(&trial)
            };
            let (lo, hi) = bracket_minimum(&mut along, energy, step)?;
            let (delta, value) = golden_section(&mut along, lo, hi)?;
            if value < energy {
                u[i] += delta;
                u[last] -= coupling * delta;
                energy = value;
            }
        }
        sweeps += 1;
        history.push(energy);
        let decrease = sweep_start - energy;
        step = (decrease.abs().sqrt()).max(T::lit(1e-6)).min(T::lit(0.1));
        if decrease < stop {
            converged = true;
            break;
        }
    }

    let gradient = functional.gradient(&u)?;
    let grads = mesh.element_gradients(&u)?;
    let lambda_p = luxemburg_norm(mesh, a, pq, &grads)?;
    Ok(SolveReport {
        solution: ScalarField::new(mesh, u)?,
        energy,
        gradient_norm: l2(&gradient),
        iterations: sweeps,
        line_search_backtracks: 0,
        converged,
        lambda_p,
        p: pq.p(),
        eps,
        energy_history: history,
    })
}
