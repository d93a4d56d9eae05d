use std::path::{Path, PathBuf};

use chernflow_core::fiber::{check_model, Invariant, ModelPolicy, STRUCTURE_TOL};
use chernflow_core::homogeneous::HomogeneousError;
use chernflow_core::registry::{self, Example};
use chernflow_core::suite::{self, SuiteOptions, SuiteReport};
use chernflow_core::torus::{
    read_checkpoint, volume_ratio_b, write_checkpoint, Checkpoint, TorusError, TorusFlowTrace, TorusRunConfig,
};
use chernflow_core::{Flow, Model, TorusSolver};
use log::{info, warn};

use crate::model_file::{self, Loaded, Source};
use crate::output::{float, write_stdout, Csv};
use crate::CliError;

pub struct HomogeneousArgs {
    pub model: String,
    pub t_end: Option<f64>,
    pub samples: usize,
    pub epsilon: Option<Vec<f64>>,
    pub normalized: bool,
    pub crosscheck: bool,
    pub allow_non_lie: bool,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
}

pub struct TorusArgs {
    pub model: String,
    pub n_grid: Option<usize>,
    pub dt_sigma: f64,
    pub t_end: f64,
    pub tol: f64,
    pub stride: usize,
    pub max_halvings: u32,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

pub struct CheckArgs {
    pub model: Option<String>,
    pub allow_non_lie: bool,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
}

const DEFAULT_EPSILONS: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

fn load(spec: &str) -> Result<Source, CliError> {
    let src = model_file::load(spec)?;
    for w in &src.warnings {
        warn!("{spec}: {w}");
    }
    Ok(src)
}

fn lie_model(src: &Source) -> Result<&Model, CliError> {
    match &src.loaded {
        Loaded::Lie { model, .. } => Ok(model),
        Loaded::Torus(_) => Err(CliError::Validation(format!("{} is a torus model", src.name()))),
    }
}

fn flow_error(e: HomogeneousError) -> CliError {
    match e {
        HomogeneousError::Horizon { .. } => CliError::Horizon(e.to_string()),
        HomogeneousError::BadEpsilon(_) | HomogeneousError::InfiniteHorizon => CliError::Validation(e.to_string()),
        HomogeneousError::Fiber(_) | HomogeneousError::SingularForm | HomogeneousError::NotPositive => {
            CliError::Validation(e.to_string())
        }
    }
}

pub fn homogeneous(args: HomogeneousArgs) -> Result<(), CliError> {
    let src = load(&args.model)?;
    let model = lie_model(&src)?.clone();
    let policy = ModelPolicy { tol: args.tol.unwrap_or(STRUCTURE_TOL), allow_non_lie: args.allow_non_lie };
    let report = check_model(&model, policy).map_err(|e| CliError::Validation(e.to_string()))?;
    if !report.is_empty() {
        warn!("{}: {report}", src.name());
    }
    let flow = Flow::new(model).map_err(flow_error)?;
    let dim = flow.model().dim();

    let limit = match (flow.guarded_limit(), args.normalized) {
        (None, _) => None,
        (Some(l), false) => Some(l),
        (Some(l), true) => Some(l.ln_1p()),
    };
    let t_end = match (args.t_end, limit) {
        (Some(t), _) if !(t.is_finite() && t > 0.0) => {
            return Err(CliError::Validation(format!("--t-end {t} must be positive")))
        }
        (Some(t), Some(l)) if t > l => {
            return Err(CliError::Horizon(format!(
                "--t-end {t} is past the guarded horizon {l} (T = {})",
                float(flow.maximal_time().unwrap_or(f64::INFINITY))
            )))
        }
        (Some(t), _) => t,
        (None, Some(l)) => l.min(10.0),
        (None, None) => 10.0,
    };
    if args.samples == 0 {
        return Err(CliError::Validation("--samples must be at least 1".into()));
    }

    let mut csv = Csv::new(&src.hash);
    csv.meta("model", src.name());
    csv.meta("mode", if args.normalized { "normalized" } else { "unnormalized" });
    csv.meta("T", flow.maximal_time().map_or("inf".into(), float));
    if let Some(l) = limit {
        csv.meta("guarded-limit", float(l));
    }
    if args.crosscheck {
        let dt = t_end / 1000.0;
        let err = if args.normalized {
            flow.normalized_crosscheck(t_end, dt)
        } else {
            flow.ode_crosscheck(t_end, dt).map_err(flow_error)?
        };
        info!("RK4 vs closed form: {err:e}");
        csv.meta("crosscheck-max-error", float(err));
    }

    let mut cols = vec!["t".to_string()];
    for a in 0..dim {
        for b in a + 1..dim {
            cols.push(format!("omega_{a}_{b}"));
        }
    }
    cols.extend((0..dim).map(|k| format!("p_{k}")));
    cols.push("R".into());
    csv.header(&cols);
    for i in 0..=args.samples {
        let t = if i == args.samples { t_end } else { t_end * i as f64 / args.samples as f64 };
        let (omega, scale, s) = if args.normalized {
            let s = t.exp_m1();
            (flow.normalized_flow_at(t), 1.0 + s, s)
        } else {
            (flow.flow_at(t).map_err(flow_error)?, 1.0, t)
        };
        let mut row = vec![t];
        for a in 0..dim {
            for b in a + 1..dim {
                row.push(omega.get(a, b));
            }
        }
        row.extend(flow.eigenvalues_at(s).map_err(flow_error)?.iter().map(|p| p * scale));
        row.push(flow.scalar_curvature_at(s).map_err(flow_error)? * scale);
        csv.row(&row);
    }

    if let Some(tm) = flow.maximal_time() {
        let eps: Vec<f64> = match &args.epsilon {
            Some(e) => e.clone(),
            None => DEFAULT_EPSILONS.iter().copied().filter(|e| *e < tm).collect(),
        };
        let rows = flow.blowup_diagnostics(&eps).map_err(flow_error)?;
        csv.block("blowup");
        csv.meta("top-multiplicity", flow.top_multiplicity());
        csv.header(&["epsilon", "integral_closed", "integral_quadrature", "r_times_epsilon"].map(String::from));
        for r in rows {
            csv.row(&[r.epsilon, r.integral_closed, r.integral_quadrature, r.r_times_epsilon]);
        }
    }
    csv.emit(args.out.as_deref())
}

fn default_checkpoint(out: Option<&Path>, name: &str) -> PathBuf {
    match out {
        Some(p) => p.with_extension("ckpt"),
        None => PathBuf::from(format!("{name}.ckpt")),
    }
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    write_checkpoint(&mut f, ck).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn trace_csv(hash: &str, name: &str, trace: &TorusFlowTrace<f64>) -> Csv {
    let mut csv = Csv::new(hash);
    csv.meta("model", name);
    csv.meta("grid", format!("n={} N={}", trace.n, trace.size));
    csv.header(
        &["t", "dt", "sup_phi", "sup_phidot", "vol_ratio_min", "vol_ratio_max", "min_eig", "osc_phidot"]
            .map(String::from),
    );
    for s in &trace.samples {
        csv.row(&[s.t, s.dt, s.sup_phi, s.sup_phidot, s.vol_ratio_min, s.vol_ratio_max, s.min_eig, s.osc]);
    }
    csv
}

pub fn torus(args: TorusArgs) -> Result<(), CliError> {
    let src = load(&args.model)?;
    let ex = match &src.loaded {
        Loaded::Torus(t) => t.clone(),
        Loaded::Lie { .. } => return Err(CliError::Validation(format!("{} is not a torus model", src.name()))),
    };
    let size = args.n_grid.unwrap_or(ex.size);
    let cfg = TorusRunConfig {
        t_end: args.t_end,
        sigma: args.dt_sigma,
        tol_converge: args.tol,
        sample_stride: args.stride,
        max_halvings: args.max_halvings,
        ..Default::default()
    };
    let solver = TorusSolver::from_spec(ex.n, size, &ex.metric, cfg).map_err(|e| CliError::Validation(e.to_string()))?;
    let start = match &args.resume {
        Some(p) => {
            let mut f = std::fs::File::open(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let ck = read_checkpoint(&mut f).map_err(|e| CliError::Validation(e.to_string()))?;
            if (ck.n as usize, ck.size as usize) != (ex.n, size) {
                return Err(CliError::Validation(format!(
                    "checkpoint grid n={} N={} does not match n={} N={size}",
                    ck.n, ck.size, ex.n
                )));
            }
            Some(ck)
        }
        None => None,
    };
    let ck_path = args.checkpoint.clone().unwrap_or_else(|| default_checkpoint(args.out.as_deref(), ex.name));
    let result = match start {
        Some(ck) => solver.run_from(Some(ck.phi), ck.t),
        None => solver.run(),
    };
    match result {
        Ok(trace) => {
            let p = solver.problem();
            let b = trace.b_mean();
            let stat = p.stationary_residual(trace.t_final, &trace.phi, b);
            let mut csv = trace_csv(&src.hash, ex.name, &trace);
            csv.meta(
                "summary",
                format!(
                    "converged={} t={} steps={} b={} b_volume={} stationary_residual={}",
                    trace.converged,
                    float(trace.t_final),
                    trace.steps,
                    float(b),
                    float(volume_ratio_b(p)),
                    float(stat)
                ),
            );
            save_checkpoint(&ck_path, &trace.checkpoint())?;
            info!("checkpoint written to {}", ck_path.display());
            csv.emit(args.out.as_deref())
        }
        Err(e @ (TorusError::Aborted { .. } | TorusError::Unstable { .. })) => {
            let trace = e.trace().expect("abort carries a trace");
            let mut csv = trace_csv(&src.hash, ex.name, trace);
            csv.meta("abort", &e);
            csv.block("rejections");
            csv.header(&["t", "dt", "point", "min_eig"].map(String::from));
            for r in &trace.rejections {
                csv.row(&[r.t, r.dt, r.point as f64, r.min_eig]);
            }
            csv.emit(args.out.as_deref())?;
            save_checkpoint(&ck_path, &trace.checkpoint())?;
            Err(CliError::Numerical(e.to_string()))
        }
        Err(e @ (TorusError::Grid(_) | TorusError::Config(_) | TorusError::NonPositiveInitial { .. })) => {
            Err(CliError::Validation(e.to_string()))
        }
        Err(e) => Err(CliError::Numerical(e.to_string())),
    }
}

const INVARIANTS: [Invariant; 6] = [
    Invariant::Antisymmetry,
    Invariant::Jacobi,
    Invariant::ComplexStructure,
    Invariant::Compatibility,
    Invariant::Positivity,
    Invariant::FormSkew,
];

pub fn check(args: CheckArgs) -> Result<(), CliError> {
    let opts = SuiteOptions {
        tol: args.tol.unwrap_or(STRUCTURE_TOL),
        allow_non_lie: args.allow_non_lie,
        ..Default::default()
    };
    let report = match &args.model {
        None => suite::run_registry(&opts),
        Some(spec) => {
            let src = load(spec)?;
            let rows = match &src.loaded {
                Loaded::Lie { name, model } => suite::check_lie_model(name, model, &opts),
                Loaded::Torus(t) => suite::check_example(&Example::Torus(t.clone()), &opts),
            };
            SuiteReport { rows }
        }
    };
    let text = report.to_string();
    match &args.out {
        Some(p) => std::fs::write(p, &text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => write_stdout(&text)?,
    }
    let failed: Vec<_> = report.failures().collect();
    if failed.is_empty() {
        return Ok(());
    }
    let names: Vec<String> = failed.iter().map(|r| format!("{}: {}", r.model, r.identity)).collect();
    let invalid = failed.iter().any(|r| INVARIANTS.iter().any(|i| i.to_string() == r.identity));
    let msg = format!("{} check(s) failed: {}", failed.len(), names.join("; "));
    Err(if invalid { CliError::Validation(msg) } else { CliError::Numerical(msg) })
}

pub fn examples() -> Result<(), CliError> {
    let mut text = String::new();
    for ex in registry::all() {
        let kind = match ex {
            Example::Lie(_) => "lie",
            Example::Torus(_) => "torus",
        };
        text.push_str(&format!("{:<28} {:<6} {}\n", ex.name(), kind, ex.description()));
    }
    write_stdout(&text)
}
