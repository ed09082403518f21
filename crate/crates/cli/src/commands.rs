//! The five subcommands. Each builds one [`Table`]; emission and exit
//! codes are handled in `main`.

use std::path::Path;

use clap::ValueEnum;

use cloakq_core::analytic::{
    distribution_metrics, mm1_metrics, paper_metrics, CharacteristicRoot,
    StationaryDistribution, DEFAULT_N_REPORT,
};
use cloakq_core::ctmc::{ctmc_metrics, stationary, CtmcError, GeneratorMatrix};
use cloakq_core::desim::{
    compare, replicate, run, Horizon, ReplayAttempt, ReplaySchedule, ServiceMode, SimConfig,
    SimReport,
};
use cloakq_core::geometry::{mc_clique_prob, r_cliquecloak, r_iclique, GeometryError};
use cloakq_core::params::{MetricsReport, Provenance, SystemParams};
use cloakq_core::rng::{streams, RandomStream};

use crate::config::{EdgeRule, Mode, Reference, RunConfig};
use crate::error::CliError;
use crate::output::{Cell, Table};

fn params_from(cfg: &RunConfig) -> Result<SystemParams<f64>, CliError> {
    Ok(SystemParams::new(cfg.lambda, cfg.mu, cfg.k, cfg.r)?)
}

fn metric_rows(table: &mut Table, report: &MetricsReport<f64>) {
    let layer = report.provenance.label();
    for (i, (name, value)) in report.values().into_iter().enumerate() {
        let note = match (&report.warning, i) {
            (Some(w), 0) => Cell::from(w.clone()),
            _ => Cell::Empty,
        };
        table.push(vec![name.into(), layer.into(), value.into(), note]);
    }
}

/// `analyze`: the characteristic root, the head of the stationary
/// distribution, and the analytic metric layers.
pub fn analyze(cfg: &RunConfig, mm1: bool, head: usize) -> Result<Table, CliError> {
    let params = params_from(cfg)?;
    let root = CharacteristicRoot::solve(&params)?;
    let dist = StationaryDistribution::analytic(&root, DEFAULT_N_REPORT.max(head));
    let mut table = Table::new(vec!["quantity", "layer", "value", "note"]);
    table.push(vec![
        "z0".into(),
        "solver".into(),
        root.z0().into(),
        Cell::Empty,
    ]);
    table.push(vec![
        "residual".into(),
        "solver".into(),
        root.residual().into(),
        Cell::Empty,
    ]);
    table.push(vec![
        "identity_gap".into(),
        "solver".into(),
        root.identity_gap().into(),
        Cell::Empty,
    ]);
    for n in 0..head {
        table.push(vec![
            format!("P_{n}").into(),
            "distribution".into(),
            dist.prob(n).into(),
            Cell::Empty,
        ]);
    }
    metric_rows(&mut table, &paper_metrics(&root));
    metric_rows(&mut table, &distribution_metrics(&root));
    if mm1 {
        metric_rows(&mut table, &mm1_metrics(cfg.lambda, cfg.mu)?);
    }
    Ok(table)
}

fn build_sim_config(
    cfg: &RunConfig,
    params: SystemParams<f64>,
    trace: bool,
    replay: Option<ReplaySchedule<f64>>,
) -> Result<SimConfig<f64>, CliError> {
    let service_mode = match cfg.mode {
        Mode::Bernoulli => ServiceMode::Bernoulli,
        Mode::Geometric => {
            let geometry = cfg.geometry(params.k())?;
            match cfg.window {
                Some(window) => ServiceMode::GeometricClique { geometry, window },
                None => ServiceMode::geometric(geometry),
            }
        }
    };
    // Replay runs are deterministic, so replications are forced to one.
    let replications = if replay.is_some() { 1 } else { cfg.reps };
    Ok(SimConfig {
        params,
        horizon: Horizon::Time(cfg.horizon),
        warmup: cfg.warmup,
        seed: cfg.seed,
        replications,
        service_mode,
        retry: cfg.retry.policy(),
        trace,
        replay,
        allow_unstable: false,
    })
}

/// Reads a replay schedule: header `event,time_or_duration,outcome`, then
/// `arrival,<time>,` and `attempt,<duration>,<success|fail>` lines.
fn parse_replay(path: &Path) -> Result<ReplaySchedule<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!("cannot read replay file {}: {e}", path.display()))
    })?;
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: String| {
        CliError::Config(format!("{}:{}: {msg}", path.display(), line + 1))
    };
    match lines.next() {
        Some((_, header)) if header.trim() == "event,time_or_duration,outcome" => {}
        Some((i, header)) => {
            return Err(bad(
                i,
                format!("expected header 'event,time_or_duration,outcome', got '{header}'"),
            ))
        }
        None => return Err(CliError::Config(format!("{}: empty file", path.display()))),
    }
    let mut schedule = ReplaySchedule {
        arrivals: Vec::new(),
        attempts: Vec::new(),
    };
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() > 3 {
            return Err(bad(i, format!("expected 2 or 3 fields, got {}", fields.len())));
        }
        let value: f64 = fields
            .get(1)
            .ok_or_else(|| bad(i, "missing time/duration field".into()))?
            .parse()
            .map_err(|e| bad(i, format!("bad number '{}': {e}", fields[1])))?;
        match fields[0] {
            "arrival" => {
                if fields.get(2).is_some_and(|s| !s.is_empty()) {
                    return Err(bad(i, "arrival rows take no outcome".into()));
                }
                schedule.arrivals.push(value);
            }
            "attempt" => {
                let success = match fields.get(2).copied() {
                    Some("success") => true,
                    Some("fail") => false,
                    other => {
                        return Err(bad(
                            i,
                            format!("attempt outcome must be 'success' or 'fail', got {other:?}"),
                        ))
                    }
                };
                schedule.attempts.push(ReplayAttempt {
                    duration: value,
                    success,
                });
            }
            other => return Err(bad(i, format!("unknown event '{other}'"))),
        }
    }
    Ok(schedule)
}

fn push_stat(table: &mut Table, name: &'static str, value: Cell, half_width: Cell) {
    table.push(vec![name.into(), value, half_width]);
}

fn single_run_table(report: &SimReport<f64>) -> Table {
    let mut t = Table::new(vec!["quantity", "value", "half_width"]);
    push_stat(&mut t, "replications", Cell::Int(1), Cell::Empty);
    for (name, value) in report.metrics.values() {
        push_stat(&mut t, name, value.into(), Cell::Empty);
    }
    push_stat(&mut t, "lambda_observed", report.lambda_observed.into(), Cell::Empty);
    push_stat(&mut t, "p50_sojourn", report.p50_sojourn.into(), Cell::Empty);
    push_stat(&mut t, "p95_sojourn", report.p95_sojourn.into(), Cell::Empty);
    push_stat(&mut t, "mean_busy_period", report.mean_busy_period.into(), Cell::Empty);
    push_stat(&mut t, "mean_idle_period", report.mean_idle_period.into(), Cell::Empty);
    push_stat(&mut t, "arrivals", report.arrivals.into(), Cell::Empty);
    push_stat(&mut t, "departures", report.departures.into(), Cell::Empty);
    push_stat(&mut t, "attempts", report.attempts.into(), Cell::Empty);
    push_stat(&mut t, "failed_attempts", report.failed_attempts.into(), Cell::Empty);
    push_stat(
        &mut t,
        "final_queue_len",
        (report.final_queue_len as u64).into(),
        Cell::Empty,
    );
    push_stat(&mut t, "measured_time", report.measured_time.into(), Cell::Empty);
    push_stat(&mut t, "seed", report.seed.into(), Cell::Empty);
    t
}

/// `simulate`: run (or replicate) the event simulation; optionally write
/// the event trace. Returns the report table and the rendered trace.
pub fn simulate(
    cfg: &RunConfig,
    trace: bool,
    replay: Option<&Path>,
) -> Result<(Table, Option<String>), CliError> {
    let params = params_from(cfg)?;
    let schedule = replay.map(parse_replay).transpose()?;
    let sim_cfg = build_sim_config(cfg, params, trace, schedule)?;
    if sim_cfg.replications == 1 {
        let outcome = run(&sim_cfg)?;
        let rendered = outcome.path.as_ref().map(crate::output::render_trace);
        Ok((single_run_table(&outcome.report), rendered))
    } else {
        if trace {
            return Err(CliError::Config(
                "event traces need a single run; pass --reps 1 with --trace".into(),
            ));
        }
        let summary = replicate(&sim_cfg)?;
        let mut t = Table::new(vec!["quantity", "value", "half_width"]);
        push_stat(
            &mut t,
            "replications",
            Cell::Int(summary.replications as u64),
            Cell::Empty,
        );
        for (name, interval) in [
            ("L", summary.l),
            ("Lq", summary.lq),
            ("W", summary.w),
            ("Wq", summary.wq),
            ("S", summary.s),
            ("lambda_observed", summary.lambda_observed),
        ] {
            push_stat(&mut t, name, interval.mean.into(), interval.half_width.into());
        }
        push_stat(&mut t, "seed", cfg.seed.into(), Cell::Empty);
        Ok((t, None))
    }
}

/// CTMC reference metrics, growing the truncation until the mass cut off
/// at the boundary is acceptable.
fn ctmc_reference(params: &SystemParams<f64>) -> Result<MetricsReport<f64>, CliError> {
    let mut n = 300.max(20 * params.k());
    loop {
        let g = GeneratorMatrix::build(params, n)?;
        match stationary(&g) {
            Ok(sol) => return Ok(ctmc_metrics(&sol, params)),
            Err(CtmcError::TailMassTooLarge { .. }) if n < 4_800 => n *= 2,
            Err(e) => return Err(e.into()),
        }
    }
}

/// `validate`: simulate, then compare against the CTMC oracle and both
/// analytic layers. The configured bound applies to the L and W rows of
/// the selected reference; those decide the exit code. Returns the table
/// and whether bounds were exceeded (exit 2) — with a non-CTMC reference
/// the divergence is expected and only `--strict` arms the exit code.
pub fn validate(cfg: &RunConfig, strict: bool) -> Result<(Table, bool), CliError> {
    let params = params_from(cfg)?;
    let sim = replicate(&build_sim_config(cfg, params, false, None)?)?.mean_metrics();
    let root = CharacteristicRoot::solve(&params)?;
    let references = [
        (Reference::Ctmc, ctmc_reference(&params)?),
        (Reference::Distribution, distribution_metrics(&root)),
        (Reference::Paper, paper_metrics(&root)),
    ];
    let mut table = Table::new(vec![
        "metric",
        "reference_layer",
        "simulation",
        "reference",
        "rel_error",
        "bound",
        "status",
    ]);
    let mut exceeded = false;
    for (which, reference) in &references {
        let rows = compare(&sim, reference)?;
        let layer = reference.provenance.label();
        for row in &rows.rows {
            let bounded = *which == cfg.reference && (row.metric == "L" || row.metric == "W");
            let (bound, status) = if bounded {
                let over = row.rel_error > cfg.bound;
                exceeded |= over;
                (
                    Cell::Num(cfg.bound),
                    if over { "exceeded" } else { "within" },
                )
            } else {
                (Cell::Empty, "info")
            };
            table.push(vec![
                row.metric.into(),
                layer.into(),
                row.left.into(),
                row.right.into(),
                row.rel_error.into(),
                bound,
                status.into(),
            ]);
        }
    }
    table.push(vec![
        "little_residual".into(),
        "simulation".into(),
        sim.little_residual().into(),
        Cell::Empty,
        Cell::Empty,
        Cell::Empty,
        "info".into(),
    ]);
    let fail = exceeded && (cfg.reference == Reference::Ctmc || strict);
    Ok((table, fail))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepVar {
    Lambda,
    R,
    K,
}

impl SweepVar {
    fn label(self) -> &'static str {
        match self {
            SweepVar::Lambda => "lambda",
            SweepVar::R => "r",
            SweepVar::K => "k",
        }
    }

    fn default_values(self) -> Vec<f64> {
        match self {
            // "the value of lambda is kept below mu = 10"
            SweepVar::Lambda => (1..=9).map(f64::from).collect(),
            SweepVar::R => vec![0.2, 0.33, 0.5, 0.66, 0.8, 1.0],
            SweepVar::K => (1..=6).map(f64::from).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    Paper,
    Distribution,
    Ctmc,
    Mm1,
    Sim,
}

impl Layer {
    fn parse(token: &str) -> Result<Self, CliError> {
        match token {
            "paper" | "paper-closed-form" => Ok(Layer::Paper),
            "distribution" => Ok(Layer::Distribution),
            "ctmc" => Ok(Layer::Ctmc),
            "mm1" | "mm1-baseline" => Ok(Layer::Mm1),
            "sim" | "simulation" => Ok(Layer::Sim),
            other => Err(CliError::Config(format!(
                "unknown layer '{other}' (expected paper, distribution, ctmc, mm1, or sim)"
            ))),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Layer::Paper => Provenance::ClosedForm.label(),
            Layer::Distribution => Provenance::Distribution.label(),
            Layer::Ctmc => Provenance::Ctmc.label(),
            Layer::Mm1 => Provenance::Mm1Baseline.label(),
            Layer::Sim => Provenance::Simulation.label(),
        }
    }

    fn metrics(
        self,
        params: &SystemParams<f64>,
        cfg: &RunConfig,
    ) -> Result<MetricsReport<f64>, CliError> {
        match self {
            Layer::Paper => Ok(paper_metrics(&CharacteristicRoot::solve(params)?)),
            Layer::Distribution => Ok(distribution_metrics(&CharacteristicRoot::solve(params)?)),
            Layer::Ctmc => ctmc_reference(params),
            Layer::Mm1 => Ok(mm1_metrics(params.lambda(), params.mu())?),
            Layer::Sim => {
                let sim_cfg = build_sim_config(cfg, *params, false, None)?;
                Ok(replicate(&sim_cfg)?.mean_metrics())
            }
        }
    }

    /// M/M/1 needs `lambda < mu` regardless of the batch parameters.
    fn stable_at(self, params: &SystemParams<f64>) -> bool {
        match self {
            Layer::Mm1 => params.lambda() < params.mu(),
            _ => params.is_stable(),
        }
    }
}

fn parse_values(var: SweepVar, text: Option<&str>) -> Result<Vec<f64>, CliError> {
    let Some(text) = text else {
        return Ok(var.default_values());
    };
    let mut values = Vec::new();
    for token in text.split(',') {
        let token = token.trim();
        let v: f64 = token
            .parse()
            .map_err(|e| CliError::Config(format!("bad sweep value '{token}': {e}")))?;
        if var == SweepVar::K && (v.fract() != 0.0 || v < 1.0) {
            return Err(CliError::Config(format!(
                "k sweep values must be positive integers, got '{token}'"
            )));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(CliError::Config("empty sweep value list".into()));
    }
    Ok(values)
}

/// `sweep`: one long-format row per (value, layer, metric). Unstable grid
/// points come back as flagged rows rather than errors, so a sweep can
/// cross the stability boundary. All points share the configured seed
/// (common random numbers), which makes simulated curves comparable.
pub fn sweep(
    cfg: &RunConfig,
    var: SweepVar,
    values: Option<&str>,
    layers: Option<&str>,
) -> Result<Table, CliError> {
    let values = parse_values(var, values)?;
    let layers: Vec<Layer> = match layers {
        Some(text) => text
            .split(',')
            .map(|t| Layer::parse(t.trim()))
            .collect::<Result<_, _>>()?,
        None => vec![Layer::Paper, Layer::Distribution],
    };
    let mut table = Table::new(vec![
        "sweep_var",
        "value",
        "layer",
        "metric",
        "metric_value",
        "status",
    ]);
    for &value in &values {
        let (lambda, k, r) = match var {
            SweepVar::Lambda => (value, cfg.k, cfg.r),
            SweepVar::R => (cfg.lambda, cfg.k, value),
            SweepVar::K => (cfg.lambda, value as usize, cfg.r),
        };
        let value_cell = || -> Cell {
            match var {
                SweepVar::K => Cell::Int(value as u64),
                _ => Cell::Num(value),
            }
        };
        let params = SystemParams::new_allowing_unstable(lambda, cfg.mu, k, r)?;
        for &layer in &layers {
            if !layer.stable_at(&params) {
                for metric in ["L", "Lq", "W", "Wq", "S"] {
                    table.push(vec![
                        var.label().into(),
                        value_cell(),
                        layer.label().into(),
                        metric.into(),
                        Cell::Empty,
                        "unstable".into(),
                    ]);
                }
                continue;
            }
            let report = layer.metrics(&params, cfg)?;
            for (metric, metric_value) in report.values() {
                table.push(vec![
                    var.label().into(),
                    value_cell(),
                    layer.label().into(),
                    metric.into(),
                    metric_value.into(),
                    "ok".into(),
                ]);
            }
        }
    }
    Ok(table)
}

/// `prob`: anonymization-probability estimates for the configured
/// geometry — the closed-form value, the independence variant, and a
/// Monte Carlo estimate with its standard error. The closed forms only
/// exist for k >= 2 and for the rectangle-based edge rules; missing rows
/// are simply omitted.
pub fn prob(cfg: &RunConfig) -> Result<Table, CliError> {
    let geometry = cfg.geometry(cfg.k)?;
    let mut table = Table::new(vec!["estimator", "value", "std_error", "samples"]);
    let closed = match cfg.edge_rule {
        EdgeRule::Containment => {
            let tolerances = vec![(cfg.tol_dx, cfg.tol_dy); cfg.k];
            Some(r_cliquecloak(&tolerances, &geometry.region, cfg.k))
        }
        EdgeRule::Mmb => {
            let areas = vec![cfg.mmb_area; cfg.k];
            Some(r_iclique(&areas, &geometry.region, cfg.k))
        }
        EdgeRule::Avgdist => None,
    };
    if let Some(result) = closed {
        match result {
            Ok(p) => {
                table.push(vec![
                    "printed".into(),
                    p.printed.into(),
                    Cell::Empty,
                    Cell::Empty,
                ]);
                table.push(vec![
                    "independence".into(),
                    p.independence.into(),
                    Cell::Empty,
                    Cell::Empty,
                ]);
            }
            Err(GeometryError::KTooSmall(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let mut stream = RandomStream::new(cfg.seed, streams::GEOMETRY_MC);
    let mc = mc_clique_prob(&geometry, cfg.samples, &mut stream)?;
    table.push(vec![
        "monte-carlo".into(),
        mc.estimate.into(),
        mc.std_error.into(),
        Cell::Int(mc.samples),
    ]);
    Ok(table)
}
