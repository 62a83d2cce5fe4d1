//! Mode execution and file emission.

use std::fs;
use std::path::{Path, PathBuf};

use dphase_core::{
    build_interval_mesh, build_unit_square_mesh, check_compatibility, check_weight_hypotheses, default_eps,
    default_p_schedule, estimate_poincare_constant, estimate_trace_constant, extract_flux, load_mesh_file,
    minimize_approx, oracle_minimize, run_continuation, smallness_check, verify_limit_solution, BoundaryData64,
    ContinuationOptions, ContinuationReport64, ExponentPair, FluxField64, Mesh64, ScalarField64, SolverOptions,
    VerificationRecord, WeightField, WeightField64,
};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::config::{BoundarySpec, ConfigError, MeshSpec, Mode, RunConfig, ScheduleSpec, WeightSpec};
use crate::vtk::{read_vtk, write_vtk, SolutionFields};

pub const EXIT_OK: i32 = 0;
pub const EXIT_HARD: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Relative energy and nodal tolerances of the oracle comparison.
pub const ORACLE_ENERGY_TOL: f64 = 1e-6;
pub const ORACLE_NODAL_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// Bad input data referenced by the configuration.
    #[error("{0}")]
    Input(String),
    #[error("{message}")]
    Hard { kind: String, message: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Input(_) => EXIT_CONFIG,
            RunError::Hard { .. } | RunError::Io { .. } => EXIT_HARD,
        }
    }

    pub fn kind(&self) -> &str {
        match self {
            RunError::Config(_) | RunError::Input(_) => "config",
            RunError::Hard { kind, .. } => kind,
            RunError::Io { .. } => "io",
        }
    }
}

impl From<dphase_core::Error> for RunError {
    fn from(e: dphase_core::Error) -> Self {
        RunError::Hard {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn input_error(what: &str, e: impl std::fmt::Display) -> RunError {
    RunError::Input(format!("{what}: {e}"))
}

/// Problem data assembled from a configuration.
pub struct Problem {
    pub mesh: Mesh64,
    pub weight: WeightField64,
    pub g: BoundaryData64,
}

pub fn build_mesh(spec: &MeshSpec) -> Result<Mesh64, RunError> {
    match spec {
        MeshSpec::Interval { n, length } => build_interval_mesh(*n, *length).map_err(|e| input_error("mesh", e)),
        MeshSpec::UnitSquare { n } => build_unit_square_mesh(*n).map_err(|e| input_error("mesh", e)),
        MeshSpec::File(path) => load_mesh_file(path).map_err(|e| input_error("mesh", e)),
    }
}

fn read_numbers(path: &Path) -> Result<Vec<f64>, RunError> {
    let text = fs::read_to_string(path).map_err(|e| input_error(&path.display().to_string(), e))?;
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| input_error(&path.display().to_string(), format!("bad number `{t}`"))))
        .collect()
}

pub fn build_problem(config: &RunConfig, mesh: Mesh64) -> Result<Problem, RunError> {
    let weight = match &config.weight {
        WeightSpec::Constant(v) => match config.lipschitz {
            None => WeightField::constant(&mesh, *v),
            Some(l) => WeightField::new(&mesh, vec![*v; mesh.num_nodes()], Some(l)),
        },
        WeightSpec::Affine(c) => {
            let lipschitz = config.lipschitz.unwrap_or((c[1] * c[1] + c[2] * c[2]).sqrt());
            WeightField::from_fn(&mesh, |x| c[0] + c[1] * x[0] + c[2] * x[1], Some(lipschitz))
        }
        WeightSpec::Table(path) => WeightField::new(&mesh, read_numbers(path)?, config.lipschitz),
    }
    .map_err(|e| input_error("weight", e))?;

    let g = match &config.boundary {
        BoundarySpec::Zero => Ok(BoundaryData64::zeros(&mesh)),
        BoundarySpec::Constant(v) => BoundaryData64::constant(&mesh, *v),
        BoundarySpec::Sides { left, right, bottom, top } => BoundaryData64::from_fn(&mesh, |_, n| {
            if n[0].abs() >= n[1].abs() {
                if n[0] < 0.0 {
                    *left
                } else {
                    *right
                }
            } else if n[1] < 0.0 {
                *bottom
            } else {
                *top
            }
        }),
        BoundarySpec::Table(values) => BoundaryData64::new(&mesh, values.clone()),
        BoundarySpec::TableFile(path) => BoundaryData64::new(&mesh, read_numbers(path)?),
    }
    .map_err(|e| input_error("boundary data", e))?;
    Ok(Problem { mesh, weight, g })
}

/// The continuation schedule; generated schedules drop values at or above q.
pub fn schedule(config: &RunConfig) -> Result<Vec<f64>, RunError> {
    match &config.schedule {
        ScheduleSpec::Explicit(list) => Ok(list.clone()),
        ScheduleSpec::Steps(k) => {
            let full = default_p_schedule::<f64>(*k).map_err(|e| input_error("continuation.k", e))?;
            let kept: Vec<f64> = full.iter().copied().filter(|&p| p < config.q).collect();
            if kept.len() < full.len() {
                warn!("dropping {} schedule value(s) not below q = {}", full.len() - kept.len(), config.q);
            }
            if kept.is_empty() {
                return Err(input_error("continuation.k", "no schedule value lies below q"));
            }
            Ok(kept)
        }
    }
}

fn solver_options(config: &RunConfig) -> SolverOptions<f64> {
    let defaults = SolverOptions::<f64>::default();
    SolverOptions {
        tol: config.tol.unwrap_or(defaults.tol),
        max_iter: config.max_iter,
        eps: config.eps,
        initial_guess: None,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

pub fn error_record(kind: &str, message: &str) -> serde_json::Value {
    json!({ "error": { "kind": kind, "message": message } })
}

/// Writes the one-line error record, keeping any partial results next to it.
pub fn write_error_record(out: &Path, err: &RunError, partial: Option<serde_json::Value>) -> Result<(), RunError> {
    fs::create_dir_all(out).map_err(|source| RunError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut record = error_record(err.kind(), &err.to_string());
    if let Some(p) = partial {
        record["partial"] = p;
    }
    write_file(&out.join("report.json"), &format!("{record}\n"))
}

/// `k,p,energy,lambda_p,grad_increment_lq_a,newton_iters`; the first
/// increment is empty.
pub fn steps_csv(report: &ContinuationReport64) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "p", "energy", "lambda_p", "grad_increment_lq_a", "newton_iters"])
        .expect("in-memory write");
    for s in &report.steps {
        w.write_record([
            s.k.to_string(),
            format!("{:?}", s.p),
            format!("{:?}", s.energy),
            format!("{:?}", s.lambda_p),
            s.grad_increment_lq_a.map(|d| format!("{d:?}")).unwrap_or_default(),
            s.newton_iters.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

fn solution_fields(problem: &Problem, u: &ScalarField64, flux: &FluxField64) -> Result<SolutionFields, RunError> {
    Ok(SolutionFields {
        u: u.values().to_vec(),
        grad_u: flux.w.clone(),
        z: flux.z.clone(),
        zeta: flux.zeta.clone(),
        a: problem.weight.centroid_values(&problem.mesh)?,
    })
}

/// What a successful run produced.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Human-readable summary for stdout.
    pub summary: String,
}

pub fn run_command(config: &RunConfig, mode: Mode) -> Result<Outcome, RunError> {
    let out = config.output.clone();
    let result = match mode {
        Mode::SolveOneP => solve_one_p(config, &out),
        Mode::Continue => continue_mode(config, &out),
        Mode::Verify => verify_mode(config, &out),
        Mode::OracleCheck => oracle_check(config, &out),
    };
    match result {
        Ok(outcome) => Ok(outcome),
        Err((err, partial)) => {
            if let Err(io) = write_error_record(&out, &err, partial) {
                warn!("{io}");
            }
            Err(err)
        }
    }
}

type ModeResult = Result<Outcome, (RunError, Option<serde_json::Value>)>;

fn plain<T>(r: Result<T, impl Into<RunError>>) -> Result<T, (RunError, Option<serde_json::Value>)> {
    r.map_err(|e| (e.into(), None))
}

fn prepare_output(out: &Path) -> Result<(), RunError> {
    fs::create_dir_all(out).map_err(|source| RunError::Io {
        path: out.to_path_buf(),
        source,
    })
}

fn required_p(config: &RunConfig) -> Result<f64, RunError> {
    config.p.ok_or_else(|| RunError::Config(ConfigError::Missing { key: "problem.p".into() }))
}

fn solve_one_p(config: &RunConfig, out: &Path) -> ModeResult {
    let p = plain(required_p(config))?;
    let problem = plain(build_mesh(&config.mesh).and_then(|m| build_problem(config, m)))?;
    let pq = plain(ExponentPair::new(p, config.q, problem.mesh.dim()))?;
    let hypothesis = plain(check_weight_hypotheses(&problem.mesh, &problem.weight, &pq, config.strict))?;
    let report = plain(minimize_approx(&problem.mesh, &problem.weight, &pq, &problem.g, &solver_options(config)))?;
    plain(prepare_output(out))?;
    if !report.converged {
        let err = RunError::Hard {
            kind: "non-convergence".into(),
            message: format!("solve at p = {p} did not converge in {} iterations", report.iterations),
        };
        return Err((err, Some(json!({ "report": report }))));
    }
    let flux = plain(extract_flux(&problem.mesh, &problem.weight, &pq, &report.solution, report.eps))?;
    let fields = plain(solution_fields(&problem, &report.solution, &flux))?;
    let vtk = out.join("solution.vtk");
    plain(write_file(&vtk, &write_vtk(&problem.mesh, &format!("dphase p={p} q={}", config.q), &fields)))?;
    let json_path = out.join("report.json");
    let doc = json!({
        "mode": Mode::SolveOneP.name(),
        "hypothesis": hypothesis,
        "report": report,
        "flux": flux,
    });
    plain(write_file(&json_path, &to_json(&doc)))?;
    Ok(Outcome {
        files: vec![json_path, vtk],
        summary: format!(
            "p = {p}: energy {:.12e}, lambda_p {:.6e}, {} Newton iterations",
            report.energy, report.lambda_p, report.iterations
        ),
    })
}

fn continue_mode(config: &RunConfig, out: &Path) -> ModeResult {
    let problem = plain(build_mesh(&config.mesh).and_then(|m| build_problem(config, m)))?;
    let schedule = plain(schedule(config))?;
    let compat = plain(check_compatibility(&problem.mesh, &problem.g, 1e-10))?;
    let options = ContinuationOptions {
        solver: solver_options(config),
        seed: config.seed,
        perturbation: config.perturbation,
        strict: config.strict,
    };
    let mut report = plain(run_continuation(
        &problem.mesh,
        &problem.weight,
        config.q,
        &problem.g,
        &schedule,
        &options,
    ))?;
    plain(prepare_output(out))?;
    let csv_path = out.join("steps.csv");
    plain(write_file(&csv_path, &steps_csv(&report)))?;
    if let Err(e) = report.check_completed() {
        return Err((e.into(), Some(json!({ "report": report }))));
    }

    let tols = dphase_core::VerificationTolerances {
        seed: config.seed,
        ..config.tolerances.clone()
    };
    report.verification = Some(plain(verify_limit_solution(
        &problem.mesh,
        &problem.weight,
        config.q,
        &problem.g,
        &report.solution,
        &report.flux,
        &tols,
    ))?);
    if config.constants {
        let last = *schedule.last().expect("non-empty schedule");
        let pq = plain(ExponentPair::new(last, config.q, problem.mesh.dim()))?;
        let trace = estimate_trace_constant(&problem.mesh, config.seed);
        let poincare = plain(estimate_poincare_constant(&problem.mesh, &problem.weight, &pq, config.seed))?;
        info!("trace constant estimate {trace}, Poincare constant estimate {poincare}");
        if poincare > 0.0 {
            let check = plain(smallness_check(&problem.mesh, &problem.g, trace, poincare))?;
            if check.passed && !report.lambda_below_one() {
                warn!("smallness holds but some step has lambda_p >= 1");
            }
            report.smallness = Some(check);
        }
    }

    let last = report.steps.last().expect("completed run has steps").p;
    let fields = plain(solution_fields(&problem, &report.solution, &report.flux))?;
    let vtk = out.join("solution.vtk");
    plain(write_file(&vtk, &write_vtk(&problem.mesh, &format!("dphase p={last} q={}", config.q), &fields)))?;
    let json_path = out.join("report.json");
    let doc = json!({
        "mode": Mode::Continue.name(),
        "seed": config.seed,
        "compatibility": compat,
        "report": report,
    });
    plain(write_file(&json_path, &to_json(&doc)))?;
    let v = report.verification.as_ref().expect("set above");
    Ok(Outcome {
        files: vec![json_path, csv_path, vtk],
        summary: format!("{} steps, final p = {last}\n{}", report.steps.len(), residual_table(v, &tols)),
    })
}

pub fn residual_table(v: &VerificationRecord<f64>, tols: &dphase_core::VerificationTolerances<f64>) -> String {
    let status = |ok: bool| if ok { "pass" } else { "FAIL" };
    let rows = [
        ("pairing", v.pairing, tols.pairing, v.pairing_ok),
        ("sup_norm", v.sup_norm, tols.sup_norm, v.sup_norm_ok),
        ("weak_divergence", v.weak_divergence, tols.divergence, v.divergence_ok),
        ("boundary_flux", v.boundary_flux, tols.boundary_flux, v.boundary_ok),
        ("minimality_margin", v.minimality_margin, -tols.minimality, v.minimality_ok),
    ];
    let mut s = format!("{:<18} {:>24} {:>12}  status\n", "residual", "value", "tolerance");
    for (name, value, tol, ok) in rows {
        s.push_str(&format!("{name:<18} {value:>24.15e} {tol:>12.3e}  {}\n", status(ok)));
    }
    s
}

fn verify_mode(config: &RunConfig, out: &Path) -> ModeResult {
    let input = config.verify_input.clone().unwrap_or_else(|| out.join("solution.vtk"));
    let text = plain(fs::read_to_string(&input).map_err(|e| input_error(&input.display().to_string(), e)))?;
    let data = plain(read_vtk(&text).map_err(|e| input_error(&input.display().to_string(), e)))?;
    let mesh = plain(Mesh64::new(data.dim, data.nodes, data.elements).map_err(|e| input_error("mesh", e)))?;
    let problem = plain(build_problem(config, mesh))?;
    let u = plain(ScalarField64::new(&problem.mesh, data.fields.u))?;
    let flux = FluxField64 {
        z: data.fields.z,
        w: data.fields.grad_u,
        zeta: data.fields.zeta,
    };
    let tols = dphase_core::VerificationTolerances {
        seed: config.seed,
        ..config.tolerances.clone()
    };
    let record = plain(verify_limit_solution(
        &problem.mesh,
        &problem.weight,
        config.q,
        &problem.g,
        &u,
        &flux,
        &tols,
    ))?;
    plain(prepare_output(out))?;
    let json_path = out.join("verify.json");
    let doc = json!({
        "mode": Mode::Verify.name(),
        "input": input.display().to_string(),
        "tolerances": tols,
        "verification": record,
    });
    plain(write_file(&json_path, &to_json(&doc)))?;
    Ok(Outcome {
        files: vec![json_path],
        summary: residual_table(&record, &tols),
    })
}

fn oracle_check(config: &RunConfig, out: &Path) -> ModeResult {
    let p = plain(required_p(config))?;
    let problem = plain(build_mesh(&config.mesh).and_then(|m| build_problem(config, m)))?;
    let pq = plain(ExponentPair::new(p, config.q, problem.mesh.dim()))?;
    let eps = config.eps.unwrap_or_else(|| default_eps(p));
    let options = SolverOptions {
        eps: Some(eps),
        ..solver_options(config)
    };
    let oracle = plain(oracle_minimize(&problem.mesh, &problem.weight, &pq, &problem.g, eps))?;
    let newton = plain(minimize_approx(&problem.mesh, &problem.weight, &pq, &problem.g, &options))?;
    let energy_gap = (newton.energy - oracle.energy).abs();
    let nodal_gap = newton
        .solution
        .values()
        .iter()
        .zip(oracle.solution.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let agree = energy_gap <= ORACLE_ENERGY_TOL * (1.0 + newton.energy.abs()) && nodal_gap <= ORACLE_NODAL_TOL;
    let doc = json!({
        "mode": Mode::OracleCheck.name(),
        "energy_gap": energy_gap,
        "nodal_gap": nodal_gap,
        "agree": agree,
        "newton": newton,
        "oracle": oracle,
    });
    plain(prepare_output(out))?;
    if !agree {
        let err = RunError::Hard {
            kind: "oracle-mismatch".into(),
            message: format!("energy gap {energy_gap:e}, nodal gap {nodal_gap:e}"),
        };
        return Err((err, Some(doc)));
    }
    let json_path = out.join("report.json");
    plain(write_file(&json_path, &to_json(&doc)))?;
    Ok(Outcome {
        files: vec![json_path],
        summary: format!("oracle agrees: energy gap {energy_gap:.3e}, nodal gap {nodal_gap:.3e}"),
    })
}
