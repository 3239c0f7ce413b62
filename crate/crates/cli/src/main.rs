//! `aware-flight`: simulate, collect, fit, sweep, online, report.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use aware_flight::controller::Gains;
use aware_flight::gp::{Dataset, GpModel, ModelSnapshot};
use aware_flight::harness::{
    collect_training_data, metrics, run_episode, run_online, ControllerKind, EpisodeResult, MetricsReport, Oracle,
    ScenarioConfig,
};
use aware_flight::scheduler::{
    block_gain_floor, gain_condition, lyapunov_constants, sup_error_bound, sweep_select, tube_samples,
    CalibrationTable, SelectionResult, SweepOptions,
};
use aware_flight::Error;

use output::OutputDir;

#[derive(Parser)]
#[command(name = "aware-flight", version, about = "Quadrotor tracking with a learned disturbance oracle and aggressiveness-aware gain scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode and write its step log and metrics.
    Simulate(Common),
    /// Run the data-collection episodes and write the labelled dataset.
    Collect(Common),
    /// Fit the GP oracle to the collected dataset.
    Fit(Common),
    /// Sweep the translational gain scale and select the smallest feasible one.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Exit with status 4 when no grid point is feasible.
        #[arg(long)]
        strict: bool,
    },
    /// Offline-only versus offline-plus-online compensation.
    Online(Common),
    /// Tabulate every stored metrics file in the output directory.
    Report(Common),
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// Scenario JSON; defaults apply to anything it leaves out.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "F")]
    dist_scale: Option<f64>,
    /// fixed-low, fixed-high, aware, gp-comp-aware or gp-comp-online.
    #[arg(long, value_name = "NAME")]
    controller: Option<String>,
    /// Ultimate tracking-error tolerance, m.
    #[arg(long, value_name = "F")]
    eps: Option<f64>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Concurrent episodes; 0 uses every core.
    #[arg(long, value_name = "N", default_value_t = 0)]
    jobs: usize,
}

/// An infeasible sweep under `--strict`.
#[derive(Debug)]
struct Infeasible(f64);

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no grid point met the tolerance; best scale {}", self.0)
    }
}

impl std::error::Error for Infeasible {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

struct Session {
    cfg: ScenarioConfig,
    kind: ControllerKind,
    out: OutputDir,
    jobs: usize,
}

impl Common {
    fn load(&self) -> anyhow::Result<Session> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p).map_err(|e| match e {
                Error::Io { path, source } => config_error(format!("{}: {source}", path.display())),
                other => other.into(),
            })?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.dist_scale {
            cfg.disturbance.scale = s;
        }
        if let Some(e) = self.eps {
            cfg.scheduler.eps = e;
        }
        if let Some(s) = self.seed {
            cfg.simulation.seed = s;
        }
        if let Some(name) = &self.controller {
            cfg.controller.kind = name.parse()?;
        }
        if let Some(dir) = &self.out {
            cfg.output.dir = dir.clone();
        }
        cfg.validate()?;
        let out = OutputDir::open(&cfg.output.dir)?;
        Ok(Session {
            kind: cfg.controller.kind,
            cfg,
            out,
            jobs: self.jobs,
        })
    }
}

fn tag(kind: ControllerKind, scale: f64) -> String {
    format!("{}_d{}", kind.name(), scale)
}

impl Session {
    fn dataset_path(&self) -> PathBuf {
        ScenarioConfig::resolve(self.out.path(), &self.cfg.gp.dataset)
    }

    fn model_path(&self) -> PathBuf {
        ScenarioConfig::resolve(self.out.path(), &self.cfg.gp.model)
    }

    fn load_model(&self) -> anyhow::Result<GpModel> {
        let path = self.model_path();
        let snap = ModelSnapshot::load(&path).with_context(|| {
            format!("loading {} (run `collect` and `fit` first)", path.display())
        })?;
        Ok(snap.restore(&path)?)
    }

    fn transient_end(&self) -> f64 {
        self.cfg.simulation.transient_end
    }

    fn episode(&self, gains: &Gains, model: Option<&GpModel>) -> aware_flight::Result<EpisodeResult> {
        let oracle = model.map_or(Oracle::None, Oracle::Gp);
        run_episode(&self.cfg, gains, oracle)
    }

    fn report_for(&self, r: &EpisodeResult, kind: ControllerKind) -> MetricsReport {
        metrics(r, self.transient_end()).with_controller(kind.name())
    }

    fn sweep(&self, model: Option<&GpModel>, stop_early: bool) -> anyhow::Result<SelectionResult> {
        let opts = SweepOptions {
            jobs: self.jobs,
            stop_at_first_feasible: stop_early,
        };
        let base = &self.cfg.controller;
        let kind = self.kind;
        let sel = sweep_select(&self.cfg.scheduler.grid, self.cfg.scheduler.eps, opts, |s| {
            let gains = base.gains_for(kind, Some(s));
            let ep = self.episode(&gains, model)?;
            Ok(self.report_for(&ep, kind))
        })?;
        Ok(sel)
    }
}

fn simulate(c: &Common) -> anyhow::Result<()> {
    let ctx = c.load()?;
    let kind = ctx.kind;
    let model = if kind.uses_gp() { Some(ctx.load_model()?) } else { None };
    let scale = if kind.is_scheduled() {
        let sel = ctx.sweep(model.as_ref(), true)?;
        eprintln!("selected trans_scale {} (feasible: {})", sel.chosen_scale, sel.feasible);
        Some(sel.chosen_scale)
    } else {
        None
    };
    let gains = ctx.cfg.controller.gains_for(kind, scale);
    let ep = if kind == ControllerKind::GpCompOnline {
        run_online(&ctx.cfg, &gains, model.as_ref().expect("loaded above"))?.episode
    } else {
        ctx.episode(&gains, model.as_ref())?
    };
    let report = ctx.report_for(&ep, kind);
    let name = tag(kind, ctx.cfg.disturbance.scale);
    if ctx.cfg.output.write_steps {
        ctx.out.write_steps(&format!("steps_{name}.csv"), &ep)?;
    }
    ctx.out.write_json(&format!("metrics_{name}.json"), &report)?;
    println!(
        "{name}: final error {:.4} m, peak {:.4} m, trans_scale {}",
        report.final_error, report.peak_error, report.trans_scale
    );
    Ok(())
}

fn collect(c: &Common) -> anyhow::Result<()> {
    let ctx = c.load()?;
    let data = collect_training_data(&ctx.cfg)?;
    let path = ctx.dataset_path();
    ctx.out.write_dataset(&path, &data)?;
    println!("{} rows -> {}", data.len(), path.display());
    Ok(())
}

fn fit(c: &Common) -> anyhow::Result<()> {
    let ctx = c.load()?;
    let data_path = ctx.dataset_path();
    let data = Dataset::read_csv(&data_path)
        .with_context(|| format!("reading {} (run `collect` first)", data_path.display()))?;
    let mut opts = ctx.cfg.gp.fit.clone();
    opts.seed = ctx.cfg.simulation.seed;
    let (model, report) = GpModel::fit(&data, &opts)?;
    let model_path = ctx.model_path();
    let model_dir = model_path.parent().unwrap_or(ctx.out.path());
    let data_ref = data_path.strip_prefix(model_dir).unwrap_or(&data_path);
    ctx.out.write_json_at(&model_path, &model.snapshot(data_ref))?;
    ctx.out.write_json("fit_report.json", &report)?;
    for ch in &report.channels {
        println!("channel {}: log-likelihood {:.3}, {}", ch.channel, ch.log_likelihood, ch.kernel);
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct Certificate {
    schema_version: u32,
    trans_scale: f64,
    lyapunov: aware_flight::scheduler::LyapunovCertificate,
    threshold: f64,
    tube_bound: Option<aware_flight::scheduler::TubeBound>,
    gain_condition: Option<bool>,
    lambda_floors: Option<(f64, f64)>,
    floor_scales: Option<(Option<f64>, Option<f64>)>,
}

fn sweep(c: &Common, strict: bool) -> anyhow::Result<()> {
    let mut ctx = c.load()?;
    if c.controller.is_none() {
        ctx.kind = ControllerKind::Aware;
    }
    if !ctx.kind.is_scheduled() {
        return Err(config_error(format!("`{}` is not a scheduled controller", ctx.kind)));
    }
    let model = if ctx.kind.uses_gp() { Some(ctx.load_model()?) } else { None };
    let sel = ctx.sweep(model.as_ref(), false)?;
    let cfg = &ctx.cfg;
    let gains = cfg.controller.gains_for(ctx.kind, Some(sel.chosen_scale));
    let lyapunov = lyapunov_constants(&gains, &cfg.vehicle)?;
    let eps = cfg.scheduler.eps;
    let mut cert = Certificate {
        schema_version: 1,
        trans_scale: sel.chosen_scale,
        threshold: lyapunov.threshold(eps),
        lyapunov,
        tube_bound: None,
        gain_condition: None,
        lambda_floors: None,
        floor_scales: None,
    };
    if let Some(m) = &model {
        let reference = |t: f64| cfg.reference.at(t, cfg.vehicle.gravity);
        let tube = tube_samples(reference, cfg.simulation.horizon, cfg.scheduler.tube_spacing, true);
        let bound = sup_error_bound(m, &tube, &cfg.disturbance, cfg.gp.beta);
        let floors = block_gain_floor(bound.translational, bound.rotational, cfg.scheduler.c_t1, cfg.scheduler.c_r1, eps);
        let table = CalibrationTable::build(&cfg.controller.gains, &cfg.vehicle, &cfg.scheduler.grid);
        cert.gain_condition = Some(gain_condition(bound.total, &cert.lyapunov, eps));
        cert.tube_bound = Some(bound);
        cert.lambda_floors = Some(floors);
        cert.floor_scales = Some(table.scales_for(floors.0, floors.1));
    }
    let name = tag(ctx.kind, cfg.disturbance.scale);
    ctx.out.write_json(&format!("selection_{name}.json"), &sel)?;
    ctx.out.write_json(&format!("certificate_{name}.json"), &cert)?;
    for r in &sel.records {
        println!(
            "scale {:>4}: final error {:>8.4} m {}",
            r.trans_scale,
            r.final_error(),
            if r.feasible { "feasible" } else { "infeasible" }
        );
    }
    println!("chosen trans_scale {} (feasible: {})", sel.chosen_scale, sel.feasible);
    if (strict || cfg.scheduler.strict) && !sel.feasible {
        return Err(Infeasible(sel.chosen_scale).into());
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct OnlineSummary {
    schema_version: u32,
    dist_scale: f64,
    trans_scale: f64,
    offline_final_error: f64,
    online_final_error: f64,
    residual_points: usize,
    budget: usize,
    updates: usize,
    update_failures: usize,
}

fn online(c: &Common) -> anyhow::Result<()> {
    let ctx = c.load()?;
    let model = ctx.load_model()?;
    let cfg = &ctx.cfg;
    let gains = cfg.controller.gains_for(ControllerKind::GpCompOnline, None);
    let (offline, outcome) = rayon::join(
        || ctx.episode(&gains, Some(&model)),
        || run_online(cfg, &gains, &model),
    );
    let (offline, outcome) = (offline?, outcome?);
    let scale = cfg.disturbance.scale;
    let off_report = ctx.report_for(&offline, ControllerKind::GpCompAware);
    let on_report = ctx.report_for(&outcome.episode, ControllerKind::GpCompOnline);
    for (kind, ep, rep) in [
        (ControllerKind::GpCompAware, &offline, &off_report),
        (ControllerKind::GpCompOnline, &outcome.episode, &on_report),
    ] {
        let name = tag(kind, scale);
        if cfg.output.write_steps {
            ctx.out.write_steps(&format!("steps_{name}.csv"), ep)?;
        }
        ctx.out.write_json(&format!("metrics_{name}.json"), rep)?;
    }
    let summary = OnlineSummary {
        schema_version: 1,
        dist_scale: scale,
        trans_scale: gains.trans_scale,
        offline_final_error: off_report.final_error,
        online_final_error: on_report.final_error,
        residual_points: outcome.residual.len(),
        budget: outcome.residual.budget(),
        updates: outcome.updates,
        update_failures: outcome.update_failures,
    };
    ctx.out.write_json(&format!("online_d{scale}.json"), &summary)?;
    println!(
        "offline {:.4} m, offline+online {:.4} m, residual set {}/{}",
        summary.offline_final_error, summary.online_final_error, summary.residual_points, summary.budget
    );
    Ok(())
}

fn report(c: &Common) -> anyhow::Result<()> {
    let ctx = c.load()?;
    let mut rows: Vec<MetricsReport> = Vec::new();
    for path in ctx.out.files_with_prefix("metrics_", ".json")? {
        rows.push(aware_flight::harness::export::read_json(&path)?);
    }
    if rows.is_empty() {
        bail!("no metrics_*.json in {}", ctx.out.path().display());
    }
    rows.sort_by(|a, b| {
        a.dist_scale
            .total_cmp(&b.dist_scale)
            .then_with(|| a.controller.cmp(&b.controller))
    });
    let table = render_table(&rows);
    print!("{table}");
    ctx.out.write_text("report.md", &table)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn render_table(rows: &[MetricsReport]) -> String {
    let mut s = String::from(
        "| controller | DIST_SCALE | trans_scale | final e_p (m) | peak e_p (m) | dT/dt RMS tr | dT/dt RMS ss | dtau/dt RMS tr | dtau/dt RMS ss | |T-mg| RMS tr | ‖tau‖ RMS tr | ‖H‖_F | gate ss | rho ss |\n\
         |---|---|---|---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        s += &format!(
            "| {} | {} | {} | {:.4} | {:.4} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.2} | {} | {} |\n",
            r.controller,
            r.dist_scale,
            r.trans_scale,
            r.final_error,
            r.peak_error,
            r.thrust_rate_rms_transient,
            r.thrust_rate_rms_steady,
            r.torque_rate_rms_transient,
            r.torque_rate_rms_steady,
            r.thrust_effort_rms_transient,
            r.torque_effort_rms_transient,
            r.h_frobenius,
            opt(r.gate_mean_steady),
            opt(r.rho_mean_steady),
        );
    }
    s
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Infeasible>().is_some() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 2,
                Error::Divergence { .. } => 3,
                _ => 1,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Collect(c) | Command::Fit(c) | Command::Online(c) | Command::Report(c) => c,
        Command::Sweep { common, .. } => common,
    };
    if common.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.jobs)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Collect(c) => collect(c),
        Command::Fit(c) => fit(c),
        Command::Sweep { common, strict } => sweep(common, *strict),
        Command::Online(c) => online(c),
        Command::Report(c) => report(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
