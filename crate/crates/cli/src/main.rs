//! `nbs`: runs tracking experiments from a TOML config and writes CSV/JSON
//! artifacts.
//!
//! Exit codes: 0 success, 2 invalid input or missing artifact, 3 numerical
//! blow-up, 1 anything else.

use clap::{Args, Parser, Subcommand};
use nbs_core::blocks::NbsParams;
use nbs_core::config::{ControllerKind, ModelKind, RunConfig};
use nbs_core::controller::{NbsController, PidBaseline};
use nbs_core::harness::io::{write_rollout_csv, write_summary_csv, write_sweep_csv};
use nbs_core::harness::{
    alpha_sweep, metrics, rollout, train_controller, MetricsReport, Policy, RolloutLog,
};
use nbs_core::lnn::{
    decomposition_residual, fit_uncertainty_bound, generate_free_motion, mass_relative_error,
    model_mismatch, read_dataset, train_lnn, write_dataset, LagrangianNet, UncertaintyBound,
};
use nbs_core::model::ElModel;
use nbs_core::nets::{load_params, save_params};
use nbs_core::plants::PlanarArm;
use nbs_core::{Error, Result};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nbs",
    version,
    about = "Neural backstepping tracking experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if absent.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop rollout: rollout.csv and metrics.json.
    Simulate(Common),
    /// Controller training: controller.json, train_loss.csv, train_report.json.
    Train(Common),
    /// Disturbance sweep over α: sweep.csv.
    SweepAlpha(Common),
    /// Free-motion dataset: dataset.csv.
    GenData(Common),
    /// Learned-model training: lnn_model.json, lnn_loss.csv, lnn_report.json.
    TrainLnn(Common),
    /// Tracking with the learned model in the loop: rollout.csv and metrics.json.
    EvalLnn(Common),
    /// Collects every metrics.json under DIR into DIR/summary.csv.
    Report {
        /// Directory holding run outputs.
        dir: PathBuf,
    },
}

/// Table rows in their conventional order.
const ROW_ORDER: [&str; 4] = [
    "PID controller",
    "NBS tracking controller (without training)",
    "NBS tracking controller (after training)",
    "NBS tracking controller (alpha=1, tau_d=[1.0,1.0])",
];

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(c) => with_config(&c, simulate),
        Command::Train(c) => with_config(&c, train),
        Command::SweepAlpha(c) => with_config(&c, sweep),
        Command::GenData(c) => with_config(&c, gen_data),
        Command::TrainLnn(c) => with_config(&c, train_lnn_cmd),
        Command::EvalLnn(c) => with_config(&c, eval_lnn),
        Command::Report { dir } => report(&dir),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_non_finite() {
        return 3;
    }
    match e {
        Error::Invalid { .. }
        | Error::Parse(_)
        | Error::MissingArtifact { .. }
        | Error::DimensionMismatch { .. }
        | Error::HorizonTooShort { .. } => 2,
        _ => 1,
    }
}

fn with_config(c: &Common, f: fn(&RunConfig, &Common) -> Result<()>) -> Result<()> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.jobs == 0 {
        return Err(Error::Invalid {
            field: "--jobs".into(),
            message: "must be positive".into(),
        });
    }
    fs::create_dir_all(&c.out)?;
    f(&cfg, c)
}

fn read_artifact(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.display().to_string(),
        },
        _ => Error::Io(e),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn controller_params(cfg: &RunConfig) -> Result<NbsParams> {
    let p = match &cfg.controller.params {
        Some(path) => load_params::<NbsParams>(&read_artifact(&cfg.resolve(path))?)?,
        None => cfg.fresh_controller()?,
    };
    if p.dim() != cfg.dim() {
        return Err(Error::DimensionMismatch {
            what: "controller parameters",
            expected: cfg.dim(),
            got: p.dim(),
        });
    }
    Ok(p)
}

fn lnn_path(cfg: &RunConfig, c: &Common) -> PathBuf {
    match &cfg.controller.lnn_model {
        Some(p) => cfg.resolve(p),
        None => c.out.join("lnn_model.json"),
    }
}

fn load_lnn(path: &Path, n: usize) -> Result<LagrangianNet> {
    let net = load_params::<LagrangianNet>(&read_artifact(path)?)?;
    if net.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "learned model",
            expected: n,
            got: net.dim(),
        });
    }
    Ok(net)
}

fn default_label(cfg: &RunConfig) -> String {
    if !cfg.label.is_empty() {
        return cfg.label.clone();
    }
    match (cfg.controller.kind, &cfg.controller.params) {
        (ControllerKind::Pid, _) => ROW_ORDER[0].into(),
        (ControllerKind::Nbs, None) => ROW_ORDER[1].into(),
        (ControllerKind::Nbs, Some(_)) => ROW_ORDER[2].into(),
    }
}

fn write_run(c: &Common, log: &RolloutLog, mut m: MetricsReport) -> Result<()> {
    let mut w = create(&c.out.join("rollout.csv"))?;
    write_rollout_csv(&mut w, log)?;
    w.flush()?;
    if m.label.is_empty() {
        m.label = "run".into();
    }
    write_text(&c.out.join("metrics.json"), &m.to_json())
}

fn run_nbs<M: ElModel>(cfg: &RunConfig, ctrl: &NbsController<M>) -> Result<RolloutLog> {
    rollout(&cfg.plant, Policy::Nbs(ctrl), &cfg.reference, &cfg.sim)
}

fn simulate(cfg: &RunConfig, c: &Common) -> Result<()> {
    let log = match (cfg.controller.kind, cfg.controller.model) {
        (ControllerKind::Pid, _) => {
            let pid = PidBaseline::new(cfg.dim(), &cfg.controller.pid);
            rollout::<_, PlanarArm>(&cfg.plant, Policy::Pid(pid), &cfg.reference, &cfg.sim)?
        }
        (ControllerKind::Nbs, ModelKind::Plant) => run_nbs(
            cfg,
            &NbsController::new(controller_params(cfg)?, cfg.plant.clone())?,
        )?,
        (ControllerKind::Nbs, ModelKind::Lnn) => {
            let net = load_lnn(&lnn_path(cfg, c), cfg.dim())?;
            run_nbs(cfg, &NbsController::new(controller_params(cfg)?, net)?)?
        }
    };
    let mut m = run_metrics(&log)?;
    m.label = default_label(cfg);
    write_run(c, &log, m)
}

/// Full metrics for runs long enough, otherwise the transient part only.
fn run_metrics(log: &RolloutLog) -> Result<MetricsReport> {
    match metrics(log) {
        Err(Error::HorizonTooShort { .. }) => Ok(MetricsReport {
            label: String::new(),
            steady_state_error: f64::NAN,
            convergence_time: nbs_core::harness::metrics::convergence_time(
                &log.rows.iter().map(|r| r.t).collect::<Vec<_>>(),
                &log.rows.iter().map(|r| r.z1sq).collect::<Vec<_>>(),
                nbs_core::harness::metrics::CONVERGENCE_LEVEL,
            ),
            horizon: log.horizon(),
            max_lyapunov_increase: None,
            decomposition_residual: None,
        }),
        r => r,
    }
}

fn train(cfg: &RunConfig, c: &Common) -> Result<()> {
    let init = controller_params(cfg)?;
    let (params, rep) = match cfg.controller.model {
        ModelKind::Plant => {
            train_controller(&cfg.plant, &cfg.plant, init, &cfg.reference, &cfg.train)?
        }
        ModelKind::Lnn => {
            let net = load_lnn(&lnn_path(cfg, c), cfg.dim())?;
            train_controller(&cfg.plant, &net, init, &cfg.reference, &cfg.train)?
        }
    };
    write_text(&c.out.join("controller.json"), &save_params(&params))?;
    let mut w = create(&c.out.join("train_loss.csv"))?;
    writeln!(w, "epoch,loss,regularizer")?;
    for (i, (l, r)) in rep.loss.iter().zip(&rep.regularizer).enumerate() {
        writeln!(w, "{i},{l},{r}")?;
    }
    w.flush()?;
    write_text(&c.out.join("train_report.json"), &to_json(&rep))
}

fn sweep(cfg: &RunConfig, c: &Common) -> Result<()> {
    let init = controller_params(cfg)?;
    let rows = match cfg.controller.model {
        ModelKind::Plant => alpha_sweep(
            &cfg.plant,
            &cfg.plant,
            &init,
            &cfg.reference,
            &cfg.sweep.alphas,
            &cfg.train,
            &cfg.sim,
            c.jobs,
        )?,
        ModelKind::Lnn => {
            let net = load_lnn(&lnn_path(cfg, c), cfg.dim())?;
            alpha_sweep(
                &cfg.plant,
                &net,
                &init,
                &cfg.reference,
                &cfg.sweep.alphas,
                &cfg.train,
                &cfg.sim,
                c.jobs,
            )?
        }
    };
    let mut w = create(&c.out.join("sweep.csv"))?;
    write_sweep_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

fn gen_data(cfg: &RunConfig, c: &Common) -> Result<()> {
    let n = cfg.dim();
    let pick = |v: &Vec<f64>| {
        if v.is_empty() {
            vec![0.0; n]
        } else {
            v.clone()
        }
    };
    let data = generate_free_motion(
        &cfg.plant,
        cfg.data.samples,
        cfg.data.dt,
        &pick(&cfg.data.q0),
        &pick(&cfg.data.qd0),
    )?;
    let mut w = create(&c.out.join("dataset.csv"))?;
    write_dataset(&mut w, &data)?;
    w.flush()?;
    Ok(())
}

#[derive(serde::Serialize)]
struct LnnSummary {
    train_samples: usize,
    holdout_samples: usize,
    initial_holdout_mse: f64,
    final_holdout_mse: f64,
    improvement: f64,
    /// Worst relative Frobenius error of M̂ against the plant inertia on up
    /// to 100 dataset states.
    mass_relative_error: f64,
    /// Envelope ‖δ‖ ≤ a‖q‖ + b‖q̇‖ + c of the model mismatch on the same states.
    uncertainty: UncertaintyBound,
    /// b + b²/2 + a/2 + 1 for that envelope.
    damping_requirement: f64,
}

fn train_lnn_cmd(cfg: &RunConfig, c: &Common) -> Result<()> {
    let path = match &cfg.lnn.dataset {
        Some(p) => cfg.resolve(p),
        None => c.out.join("dataset.csv"),
    };
    let file = File::open(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.display().to_string(),
        },
        _ => Error::Io(e),
    })?;
    let data = read_dataset(BufReader::new(file))?;
    if data.first().map(|s| s.dim()) != Some(cfg.dim()) {
        return Err(Error::Invalid {
            field: "lnn.dataset".into(),
            message: format!("expected a non-empty dataset with {} joints", cfg.dim()),
        });
    }
    let (net, rep) = train_lnn(cfg.fresh_lnn(), &data, &cfg.lnn_train())?;
    write_text(&c.out.join("lnn_model.json"), &save_params(&net))?;
    let mut w = create(&c.out.join("lnn_loss.csv"))?;
    writeln!(w, "epoch,train_loss,holdout_mse")?;
    for (i, h) in rep.holdout_mse.iter().enumerate() {
        let tl = if i == 0 {
            String::new()
        } else {
            rep.train_loss[i - 1].to_string()
        };
        writeln!(w, "{i},{tl},{h}")?;
    }
    w.flush()?;
    let stride = (data.len() / 100).max(1);
    let picked: Vec<_> = data.iter().step_by(stride).take(100).collect();
    let states: Vec<_> = picked.iter().map(|s| (s.q.clone(), s.qd.clone())).collect();
    let mut triples = Vec::with_capacity(picked.len());
    for s in &picked {
        let delta = model_mismatch(&net, &cfg.plant, &s.q, &s.qd, &s.u)?;
        triples.push((norm(&s.q), norm(&s.qd), norm(&delta)));
    }
    let uncertainty = fit_uncertainty_bound(&triples)?;
    let first = rep.holdout_mse[0];
    let last = *rep.holdout_mse.last().expect("initial entry");
    let summary = LnnSummary {
        train_samples: rep.train_samples,
        holdout_samples: rep.holdout_samples,
        initial_holdout_mse: first,
        final_holdout_mse: last,
        improvement: first / last,
        mass_relative_error: mass_relative_error(&net, &cfg.plant, &states)?,
        damping_requirement: uncertainty.damping_requirement(),
        uncertainty,
    };
    write_text(&c.out.join("lnn_report.json"), &to_json(&summary))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn eval_lnn(cfg: &RunConfig, c: &Common) -> Result<()> {
    let net = load_lnn(&lnn_path(cfg, c), cfg.dim())?;
    let ctrl = NbsController::new(controller_params(cfg)?, net)?;
    let log = run_nbs(cfg, &ctrl)?;
    let mut m = run_metrics(&log)?;
    let stride = (log.rows.len() / 100).max(1);
    let mut worst = 0.0f64;
    for r in log.rows.iter().step_by(stride) {
        worst = worst.max(decomposition_residual(&ctrl.model, &r.q, &r.qdot, &r.u)?);
    }
    m.decomposition_residual = Some(worst);
    m.label = if cfg.label.is_empty() {
        "NBS tracking controller (learned model)".into()
    } else {
        cfg.label.clone()
    };
    write_run(c, &log, m)
}

fn report(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::MissingArtifact {
            path: dir.display().to_string(),
        });
    }
    let mut files = vec![dir.join("metrics.json")];
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    files.extend(subdirs.iter().map(|d| d.join("metrics.json")));
    let mut rows = Vec::new();
    for f in files.into_iter().filter(|f| f.is_file()) {
        rows.push(MetricsReport::from_json(&read_artifact(&f)?)?);
    }
    if rows.is_empty() {
        return Err(Error::MissingArtifact {
            path: dir.join("metrics.json").display().to_string(),
        });
    }
    let rank = |l: &str| {
        ROW_ORDER
            .iter()
            .position(|r| *r == l)
            .unwrap_or(ROW_ORDER.len())
    };
    rows.sort_by(|a, b| {
        rank(&a.label)
            .cmp(&rank(&b.label))
            .then_with(|| a.label.cmp(&b.label))
    });
    let mut w = create(&dir.join("summary.csv"))?;
    write_summary_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}
