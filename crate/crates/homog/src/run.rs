//! Run drivers behind the command-line interface: execute one configured
//! experiment (FEM benchmark or a training run), write its record and
//! solution files, and consolidate many records into a comparison table.
//!
//! Every run writes into `config.out_dir`:
//!
//! * `run.json` — the full [`RunRecord`]: config echo, logged curve, final
//!   per-form summaries, guaranteed bounds, and timing. All relative errors
//!   are measured against [`exact_effective`] for the configured phases.
//! * `curve.csv` — the logged training curve in wide form
//!   (`epoch,primal_loss,dual_loss,primal_estimate,dual_estimate,gap`);
//!   cells for forms that did not run stay empty.
//! * `solution_primal.csv` / `solution_dual.csv` — the piecewise-linear
//!   solution fields at the benchmark-mesh nodes (`dof,x1,x2,value`); for
//!   training runs these are the projections the guaranteed bounds used.
//! * `params_primal.bin` / `params_dual.bin` — trained parameters as raw
//!   little-endian doubles in layout order (training runs only).
//!
//! Timing lives in one top-level `timing` field of `run.json`, so two
//! deterministic runs of the same config agree byte-for-byte everywhere
//! else.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::bounds::{guaranteed_bounds, guaranteed_pair, project_to_p1, BoundReport, BoundsError};
use crate::config::{ConfigError, FormChoice, MethodKind, RunConfig};
use crate::fem::{self, FemError, TriMesh};
use crate::losses::{Form, LossError};
use crate::material::exact_effective;
use crate::network::PeriodicNet;
use crate::test_bases::{select_gram, tabulate, BasisError, Gram, GramReport, TestBasis};
use crate::train::{train_pair, train_single, AbortReport, Trainer};

/// Macroscopic loading for both cell problems: the first unit vector, so
/// the run measures the (1,1) entry of the homogenized tensor.
pub const LOADING: [f64; 2] = [1.0, 0.0];

const FEM_TOL: f64 = 1e-10;
const FEM_MAX_ITER: usize = 20_000;

/// Anything that can stop a run.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Io(std::io::Error),
    Loss(LossError),
    Fem(FemError),
    Bounds(BoundsError),
    Basis(BasisError),
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// or I/O failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
            RunError::Loss(e) => write!(f, "loss setup failed: {e}"),
            RunError::Fem(e) => write!(f, "fem failed: {e}"),
            RunError::Bounds(e) => write!(f, "bound evaluation failed: {e}"),
            RunError::Basis(e) => write!(f, "test basis failed: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}
impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}
impl From<LossError> for RunError {
    fn from(e: LossError) -> Self {
        RunError::Loss(e)
    }
}
impl From<FemError> for RunError {
    fn from(e: FemError) -> Self {
        RunError::Fem(e)
    }
}
impl From<BoundsError> for RunError {
    fn from(e: BoundsError) -> Self {
        RunError::Bounds(e)
    }
}
impl From<BasisError> for RunError {
    fn from(e: BasisError) -> Self {
        RunError::Basis(e)
    }
}

/// One logged curve row; cells for forms that did not run are `None`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub primal_loss: Option<f64>,
    pub dual_loss: Option<f64>,
    pub primal_estimate: Option<f64>,
    pub dual_estimate: Option<f64>,
    pub gap: Option<f64>,
}

/// Final summary of one form's solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormSummary {
    pub form: Form,
    /// Loss at the first logged step (training runs).
    pub initial_loss: Option<f64>,
    /// Loss at the final parameters (training runs).
    pub final_loss: Option<f64>,
    /// Trapezoidal energy estimate on the collocation grid (training) or
    /// the exact element-wise energy (FEM, where it equals the bound).
    pub quick_estimate: f64,
    /// `(quick_estimate - exact) / exact`.
    pub estimate_error: f64,
    /// Guaranteed bound from the piecewise-linear field on the aligned
    /// mesh: upper for primal, lower for dual.
    pub bound: f64,
    /// `(bound - exact) / exact`.
    pub bound_error: f64,
    /// Conjugate-gradient iterations (FEM runs).
    pub cg_iterations: Option<usize>,
    /// Final relative CG residual (FEM runs).
    pub cg_residual: Option<f64>,
    /// Set when training hit a non-finite loss or gradient and rolled
    /// back to the last checkpoint.
    pub aborted: Option<AbortReport>,
}

/// Conditioning of the numeric Gram matrix of a network test basis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GramInfo {
    pub report: GramReport,
    /// The full Gram was too ill-conditioned and the diagonal weighting
    /// took over.
    pub fell_back: bool,
}

/// Wall-clock facts, kept in one field so determinism checks can ignore
/// exactly this part of the record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Timing {
    /// Unix seconds when the run started.
    pub created_unix: u64,
    pub wall_seconds: f64,
}

/// Complete record of one run; this is what `run.json` holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    /// Closed-form effective coefficient for the configured phases.
    pub exact_reference: f64,
    pub curve: Vec<LogRow>,
    pub primal: Option<FormSummary>,
    pub dual: Option<FormSummary>,
    /// Final relative spread between the primal and dual estimates
    /// (runs that computed both).
    pub gap: Option<f64>,
    /// Wide final gap: the run finished but its own diagnostic says the
    /// result should not be trusted.
    pub suspected_failure: bool,
    /// Full bound bracket (runs that computed both forms).
    pub bounds: Option<BoundReport>,
    /// Numeric-Gram conditioning (network test bases only).
    pub gram: Option<GramInfo>,
    pub timing: Timing,
}

impl RunRecord {
    /// The abort report of either form, if any.
    pub fn aborted(&self) -> Option<AbortReport> {
        self.primal
            .as_ref()
            .and_then(|s| s.aborted)
            .or_else(|| self.dual.as_ref().and_then(|s| s.aborted))
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Run the finite-element benchmark for the configured form(s) and write
/// the record. The solve honors the configured material; the guaranteed
/// bounds always integrate the piecewise phases.
pub fn cmd_fem(cfg: &RunConfig) -> Result<RunRecord, RunError> {
    cfg.validate()?;
    let phases = cfg.phases()?;
    let exact = exact_effective(phases);
    let mesh = TriMesh::periodic(cfg.fem_n)?;
    let mat = cfg.material_field()?;
    let started = now_unix();
    let t0 = Instant::now();

    let mut solutions = Vec::new();
    for &form in cfg.form.forms() {
        let sol = fem::solve(&mesh, &mat, form, LOADING, FEM_TOL, FEM_MAX_ITER)?;
        let est = fem::effective_estimate(&mesh, &mat, &sol)?;
        solutions.push((sol, est));
    }

    let zeros = vec![0.0; mesh.n_dofs()];
    let value_slice = |form: Form| {
        solutions
            .iter()
            .find(|(s, _)| s.form == form)
            .map(|(s, _)| s.values.as_slice())
            .unwrap_or(&zeros)
    };
    let (upper, lower) = guaranteed_pair(
        &mesh,
        phases,
        value_slice(Form::Primal),
        value_slice(Form::Dual),
        LOADING,
        LOADING,
    )?;

    let mut record = RunRecord {
        config: cfg.clone(),
        exact_reference: exact,
        curve: Vec::new(),
        primal: None,
        dual: None,
        gap: None,
        suspected_failure: false,
        bounds: None,
        gram: None,
        timing: Timing {
            created_unix: started,
            wall_seconds: 0.0,
        },
    };

    for (sol, est) in &solutions {
        let bound = match sol.form {
            Form::Primal => upper,
            Form::Dual => lower,
        };
        let summary = FormSummary {
            form: sol.form,
            initial_loss: None,
            final_loss: None,
            quick_estimate: *est,
            estimate_error: (est - exact) / exact,
            bound,
            bound_error: (bound - exact) / exact,
            cg_iterations: Some(sol.iterations),
            cg_residual: Some(sol.residual),
            aborted: None,
        };
        match sol.form {
            Form::Primal => record.primal = Some(summary),
            Form::Dual => record.dual = Some(summary),
        }
    }

    if let (Some(p), Some(d)) = (&record.primal, &record.dual) {
        let report = guaranteed_bounds(
            &mesh,
            phases,
            value_slice(Form::Primal),
            value_slice(Form::Dual),
            LOADING,
            LOADING,
            p.quick_estimate,
            d.quick_estimate,
        )?;
        record.gap = Some(report.gap);
        record.suspected_failure = report.gap.abs() > crate::train::SUSPECT_GAP;
        record.bounds = Some(report);
    }

    record.timing.wall_seconds = t0.elapsed().as_secs_f64();
    write_outputs(cfg, &record, &mesh, |form| {
        solutions
            .iter()
            .find(|(s, _)| s.form == form)
            .map(|(s, _)| s.values.clone())
    })?;
    Ok(record)
}

struct TrainedForm {
    summary: FormSummary,
    node_values: Vec<f64>,
    params: Vec<f64>,
}

/// Train the configured method and form(s), evaluate quick estimates and
/// guaranteed bounds, and write the record.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunRecord, RunError> {
    cfg.validate()?;
    if cfg.method == MethodKind::Fem {
        return Err(RunError::Config(ConfigError::Invalid(
            "method fem does not train; use the fem subcommand".to_string(),
        )));
    }
    let phases = cfg.phases()?;
    let exact = exact_effective(phases);
    let grid = cfg.grid()?;
    let mat = cfg.material_field()?;
    let net_cfg = cfg.network_config()?;
    let mesh = TriMesh::periodic(cfg.fem_n)?;
    let tcfg = cfg.train_config();
    let red = cfg.reduction();
    let started = now_unix();
    let t0 = Instant::now();

    // Weak methods share one basis and Gram weighting across both forms.
    let basis: Option<TestBasis> = cfg.basis()?;
    let (gram, gram_info): (Option<Gram>, Option<GramInfo>) = match (&basis, cfg.method) {
        (Some(TestBasis::Spectral(s)), _) => (
            Some(Gram::InverseDiagonal {
                inv_diag: s.inverse_gram_diag(),
            }),
            None,
        ),
        (Some(b @ TestBasis::Network(_)), _) => {
            let table = tabulate(b, &grid);
            let choice = select_gram(&table, &grid, cfg.gram_fallback_tau)?;
            (
                Some(choice.gram),
                Some(GramInfo {
                    report: choice.report,
                    fell_back: choice.fell_back,
                }),
            )
        }
        (None, _) => (None, None),
    };

    let make_trainer = |form: Form| -> Result<Trainer, LossError> {
        match cfg.method {
            MethodKind::Pinn => Trainer::strong(net_cfg, &grid, &mat, form, LOADING, red),
            MethodKind::Vspinn | MethodKind::Vnpinn => Trainer::weak(
                net_cfg,
                &grid,
                &mat,
                form,
                LOADING,
                basis.as_ref().expect("weak method has a basis"),
                gram.clone().expect("weak method has a gram"),
                red,
            ),
            MethodKind::Fem => unreachable!("rejected above"),
        }
    };

    let mut curve = Vec::new();
    let mut primal_out: Option<TrainedForm> = None;
    let mut dual_out: Option<TrainedForm> = None;
    let mut gap = None;
    let mut suspected = false;
    let mut bounds = None;

    match cfg.form {
        FormChoice::Both => {
            let mut primal_net = PeriodicNet::init(net_cfg, cfg.seed);
            let mut dual_net = PeriodicNet::init(net_cfg, cfg.seed.wrapping_add(1));
            let mut tp = make_trainer(Form::Primal)?;
            let mut td = make_trainer(Form::Dual)?;
            let out = train_pair(&mut primal_net, &mut dual_net, &mut tp, &mut td, &tcfg);
            for s in &out.log {
                curve.push(LogRow {
                    epoch: s.epoch,
                    primal_loss: Some(s.primal_loss),
                    dual_loss: Some(s.dual_loss),
                    primal_estimate: Some(s.primal_estimate),
                    dual_estimate: Some(s.dual_estimate),
                    gap: Some(s.gap),
                });
            }
            let vp = project_to_p1(&primal_net, &mesh);
            let vd = project_to_p1(&dual_net, &mesh);
            let report = guaranteed_bounds(
                &mesh,
                phases,
                &vp,
                &vd,
                LOADING,
                LOADING,
                out.final_step.primal_estimate,
                out.final_step.dual_estimate,
            )?;
            gap = Some(out.final_step.gap);
            suspected = out.suspected_failure;
            let abort_of = |form: Form| out.aborted.filter(|a| a.form == form);
            primal_out = Some(TrainedForm {
                summary: FormSummary {
                    form: Form::Primal,
                    initial_loss: out.log.first().map(|s| s.primal_loss),
                    final_loss: Some(out.final_step.primal_loss),
                    quick_estimate: out.final_step.primal_estimate,
                    estimate_error: report.relative_errors.primal_estimate,
                    bound: report.upper_bound,
                    bound_error: report.relative_errors.upper_bound,
                    cg_iterations: None,
                    cg_residual: None,
                    aborted: abort_of(Form::Primal),
                },
                node_values: vp,
                params: primal_net.params.clone(),
            });
            dual_out = Some(TrainedForm {
                summary: FormSummary {
                    form: Form::Dual,
                    initial_loss: out.log.first().map(|s| s.dual_loss),
                    final_loss: Some(out.final_step.dual_loss),
                    quick_estimate: out.final_step.dual_estimate,
                    estimate_error: report.relative_errors.dual_estimate,
                    bound: report.lower_bound,
                    bound_error: report.relative_errors.lower_bound,
                    cg_iterations: None,
                    cg_residual: None,
                    aborted: abort_of(Form::Dual),
                },
                node_values: vd,
                params: dual_net.params.clone(),
            });
            bounds = Some(report);
        }
        FormChoice::Primal | FormChoice::Dual => {
            let form = cfg.form.forms()[0];
            let mut net = PeriodicNet::init(net_cfg, cfg.seed);
            let mut tr = make_trainer(form)?;
            let out = train_single(&mut net, &mut tr, &tcfg);
            for s in &out.log {
                curve.push(LogRow {
                    epoch: s.epoch,
                    primal_loss: (form == Form::Primal).then_some(s.loss),
                    dual_loss: (form == Form::Dual).then_some(s.loss),
                    primal_estimate: (form == Form::Primal).then_some(s.estimate),
                    dual_estimate: (form == Form::Dual).then_some(s.estimate),
                    gap: None,
                });
            }
            let values = project_to_p1(&net, &mesh);
            let zeros = vec![0.0; mesh.n_dofs()];
            let (vp, vd) = match form {
                Form::Primal => (values.as_slice(), zeros.as_slice()),
                Form::Dual => (zeros.as_slice(), values.as_slice()),
            };
            let (upper, lower) = guaranteed_pair(&mesh, phases, vp, vd, LOADING, LOADING)?;
            let bound = match form {
                Form::Primal => upper,
                Form::Dual => lower,
            };
            let trained = TrainedForm {
                summary: FormSummary {
                    form,
                    initial_loss: out.log.first().map(|s| s.loss),
                    final_loss: Some(out.final_step.loss),
                    quick_estimate: out.final_step.estimate,
                    estimate_error: (out.final_step.estimate - exact) / exact,
                    bound,
                    bound_error: (bound - exact) / exact,
                    cg_iterations: None,
                    cg_residual: None,
                    aborted: out.aborted,
                },
                node_values: values,
                params: net.params.clone(),
            };
            match form {
                Form::Primal => primal_out = Some(trained),
                Form::Dual => dual_out = Some(trained),
            }
        }
    }

    let record = RunRecord {
        config: cfg.clone(),
        exact_reference: exact,
        curve,
        primal: primal_out.as_ref().map(|t| t.summary.clone()),
        dual: dual_out.as_ref().map(|t| t.summary.clone()),
        gap,
        suspected_failure: suspected,
        bounds,
        gram: gram_info,
        timing: Timing {
            created_unix: started,
            wall_seconds: t0.elapsed().as_secs_f64(),
        },
    };

    let solution_of = |form: Form| -> Option<Vec<f64>> {
        match form {
            Form::Primal => primal_out.as_ref().map(|t| t.node_values.clone()),
            Form::Dual => dual_out.as_ref().map(|t| t.node_values.clone()),
        }
    };
    write_outputs(cfg, &record, &mesh, solution_of)?;
    for (name, trained) in [("params_primal.bin", &primal_out), ("params_dual.bin", &dual_out)] {
        if let Some(t) = trained {
            write_params(&Path::new(&cfg.out_dir).join(name), &t.params)?;
        }
    }
    Ok(record)
}

fn write_outputs(
    cfg: &RunConfig,
    record: &RunRecord,
    mesh: &TriMesh,
    solution_of: impl Fn(Form) -> Option<Vec<f64>>,
) -> Result<(), RunError> {
    let dir = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(record).expect("record serializes");
    std::fs::write(dir.join("run.json"), json + "\n")?;
    write_curve(&dir.join("curve.csv"), &record.curve)?;
    for (name, form) in [
        ("solution_primal.csv", Form::Primal),
        ("solution_dual.csv", Form::Dual),
    ] {
        if let Some(values) = solution_of(form) {
            write_solution(&dir.join(name), mesh, &values)?;
        }
    }
    Ok(())
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_curve(path: &Path, curve: &[LogRow]) -> Result<(), RunError> {
    let mut out = String::from("epoch,primal_loss,dual_loss,primal_estimate,dual_estimate,gap\n");
    for row in curve {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch,
            fmt_opt(row.primal_loss),
            fmt_opt(row.dual_loss),
            fmt_opt(row.primal_estimate),
            fmt_opt(row.dual_estimate),
            fmt_opt(row.gap),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_solution(path: &Path, mesh: &TriMesh, values: &[f64]) -> Result<(), RunError> {
    let mut out = String::from("dof,x1,x2,value\n");
    for (dof, v) in values.iter().enumerate() {
        let [x1, x2] = mesh.node(dof);
        out.push_str(&format!("{dof},{x1},{x2},{v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Raw little-endian doubles in parameter-layout order.
fn write_params(path: &Path, params: &[f64]) -> Result<(), RunError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in params {
        file.write_all(&p.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Read a `params_*.bin` file back.
pub fn read_params(path: &Path) -> Result<Vec<f64>, RunError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(RunError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{} is not a sequence of 8-byte doubles", path.display()),
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Short human-readable summary printed after a run.
pub fn summarize(record: &RunRecord) -> String {
    let mut out = String::new();
    let exact = record.exact_reference;
    out.push_str(&format!(
        "method {}  form {}  exact reference {exact:.6}\n",
        record.config.method, record.config.form
    ));
    for summary in [&record.primal, &record.dual].into_iter().flatten() {
        out.push_str(&format!(
            "  {:>6}: estimate {:.6} ({:+.3}%)  bound {:.6} ({:+.3}%)\n",
            summary.form.to_string(),
            summary.quick_estimate,
            summary.estimate_error * 100.0,
            summary.bound,
            summary.bound_error * 100.0,
        ));
        if let Some(a) = summary.aborted {
            out.push_str(&format!(
                "          aborted at epoch {} (rolled back to last checkpoint)\n",
                a.epoch
            ));
        }
    }
    if let Some(gap) = record.gap {
        out.push_str(&format!(
            "  primal-dual gap {:+.4}{}\n",
            gap,
            if record.suspected_failure {
                "  SUSPECTED FAILURE"
            } else {
                ""
            }
        ));
    }
    if let Some(g) = &record.gram {
        out.push_str(&format!(
            "  gram condition {:.3e}{}\n",
            g.report.condition,
            if g.fell_back {
                "  (fell back to diagonal weighting)"
            } else {
                ""
            }
        ));
    }
    out.push_str(&format!("  wall time {:.1}s\n", record.timing.wall_seconds));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BasisKind, MaterialKind};

    fn tiny_train_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.method = MethodKind::Vspinn;
        cfg.material = MaterialKind::Piecewise;
        cfg.n_periodic = 2;
        cfg.n_hidden = 3;
        cfg.n_layers = 1;
        cfg.spectral_m = 1;
        cfg.spectral_n = 1;
        cfg.grid_n = 16;
        cfg.fem_n = 8;
        cfg.epochs = 30;
        cfg.log_every = 10;
        cfg.out_dir = dir.to_string_lossy().into_owned();
        cfg
    }

    #[test]
    fn fem_run_writes_consistent_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.method = MethodKind::Fem;
        cfg.material = MaterialKind::Piecewise;
        cfg.fem_n = 16;
        cfg.out_dir = dir.path().to_string_lossy().into_owned();
        let record = cmd_fem(&cfg).unwrap();

        let p = record.primal.as_ref().unwrap();
        let d = record.dual.as_ref().unwrap();
        // FEM estimates are element-wise exact energies, so they coincide
        // with the guaranteed bounds.
        assert!((p.quick_estimate - p.bound).abs() <= 1e-12);
        assert!((d.quick_estimate - d.bound).abs() <= 1e-12);
        assert!(d.bound <= record.exact_reference && record.exact_reference <= p.bound);
        assert!(p.cg_iterations.unwrap() > 0);
        assert!(!record.suspected_failure);

        let text = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
        let back: RunRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config, record.config);
        assert_eq!(
            back.primal.unwrap().bound.to_bits(),
            p.bound.to_bits()
        );
        // FEM has no training curve and no parameter files.
        assert_eq!(back.curve.len(), 0);
        assert!(dir.path().join("solution_primal.csv").exists());
        assert!(dir.path().join("solution_dual.csv").exists());
        assert!(!dir.path().join("params_primal.bin").exists());
    }

    #[test]
    fn train_run_writes_record_curve_and_params() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_train_config(dir.path());
        let record = cmd_train(&cfg).unwrap();

        assert_eq!(record.curve.len(), 3); // epochs 0, 10, 20
        assert_eq!(record.curve[0].epoch, 0);
        let p = record.primal.as_ref().unwrap();
        let d = record.dual.as_ref().unwrap();
        assert!(p.final_loss.unwrap().is_finite());
        assert!(record.bounds.is_some());
        // Bounds from any trial fields still bracket the reference.
        assert!(d.bound <= record.exact_reference && record.exact_reference <= p.bound);

        let params = read_params(&dir.path().join("params_primal.bin")).unwrap();
        assert_eq!(params.len(), cfg.network_config().unwrap().param_count());
        assert!(params.iter().all(|x| x.is_finite()));
        assert!(dir.path().join("curve.csv").exists());

        let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
        let mut lines = curve.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,primal_loss,dual_loss,primal_estimate,dual_estimate,gap"
        );
        assert_eq!(curve.lines().count(), 4);
    }

    #[test]
    fn single_form_run_fills_one_side() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_train_config(dir.path());
        cfg.form = FormChoice::Dual;
        let record = cmd_train(&cfg).unwrap();
        assert!(record.primal.is_none());
        let d = record.dual.as_ref().unwrap();
        assert!(d.bound <= record.exact_reference);
        assert!(record.gap.is_none());
        assert!(record.bounds.is_none());
        assert!(!dir.path().join("solution_primal.csv").exists());
        assert!(dir.path().join("solution_dual.csv").exists());
        assert!(!dir.path().join("params_primal.bin").exists());
        assert!(dir.path().join("params_dual.bin").exists());
        // The curve rows leave the primal cells empty.
        assert!(record.curve[0].primal_loss.is_none());
        assert!(record.curve[0].dual_loss.is_some());
    }

    #[test]
    fn deterministic_runs_agree_outside_timing() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = tiny_train_config(dir_a.path());
        cfg_a.deterministic = true;
        let mut cfg_b = cfg_a.clone();
        cfg_b.out_dir = dir_b.path().to_string_lossy().into_owned();
        cmd_train(&cfg_a).unwrap();
        cmd_train(&cfg_b).unwrap();

        let strip = |dir: &Path| -> serde_json::Value {
            let text = std::fs::read_to_string(dir.join("run.json")).unwrap();
            let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
            let obj = v.as_object_mut().unwrap();
            obj.remove("timing");
            // The two runs wrote to different directories by construction.
            obj.get_mut("config")
                .unwrap()
                .as_object_mut()
                .unwrap()
                .remove("out_dir");
            v
        };
        assert_eq!(strip(dir_a.path()), strip(dir_b.path()));
        let curve_a = std::fs::read(dir_a.path().join("curve.csv")).unwrap();
        let curve_b = std::fs::read(dir_b.path().join("curve.csv")).unwrap();
        assert_eq!(curve_a, curve_b);
        let pa = std::fs::read(dir_a.path().join("params_primal.bin")).unwrap();
        let pb = std::fs::read(dir_b.path().join("params_primal.bin")).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn train_rejects_fem_method() {
        let mut cfg = RunConfig::default();
        cfg.method = MethodKind::Fem;
        let err = cmd_train(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn network_basis_run_records_gram_conditioning() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_train_config(dir.path());
        cfg.method = MethodKind::Vnpinn;
        cfg.test_basis = BasisKind::Network;
        cfg.n_test = 4;
        cfg.test_n_periodic = 2;
        cfg.test_n_hidden = 3;
        cfg.test_n_layers = 1;
        cfg.epochs = 10;
        let record = cmd_train(&cfg).unwrap();
        let gram = record.gram.expect("network basis records conditioning");
        assert!(gram.report.condition.is_finite() || gram.fell_back);
        assert!(gram.report.max_eigenvalue > 0.0);
    }

    #[test]
    fn summary_mentions_gap_and_abort() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_train_config(dir.path());
        cfg.learning_rate = 1e200; // drives the first update non-finite
        cfg.epochs = 5;
        cfg.log_every = 1;
        let record = cmd_train(&cfg).unwrap();
        assert!(record.aborted().is_some());
        let text = summarize(&record);
        assert!(text.contains("aborted at epoch"));
    }
}
