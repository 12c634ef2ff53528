use std::path::Path;

use hetnet::experiments::{self, best_k, k_grid, Curve, ExperimentError, Metric, Row};
use hetnet::phy::{McsTable, RaKind, RaScheme};
use hetnet::queueing::{delays, QueueError};
use hetnet::scenario::{linear_to_db, Scenario};
use hetnet::simulator::{littles_check, FileSizeDist, SimError, SimSpec};
use hetnet::solvers::Bundle;
use hetnet::ua::{Association, Rule};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::Outputs;
use crate::{
    AssociateArgs, CliError, EvaluateArgs, OptimizeArgs, PhyDumpArgs, RaArgs, RealizationArg, ReproduceArgs, RuleArgs,
    SimulateArgs, SweepArgs,
};

fn config_err(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

fn scenario(cfg: &RunConfig, realization: u64) -> Result<Scenario, CliError> {
    Scenario::build(&cfg.scenario.with_seed(cfg.scenario.seed + realization)).map_err(config_err)
}

fn ra_kind(s: &str) -> Result<RaKind, CliError> {
    s.parse().map_err(CliError::Config)
}

fn ra_scheme(cfg: &RunConfig, a: &RaArgs) -> Result<RaScheme, CliError> {
    let ra = RaScheme::new(ra_kind(&a.ra)?, a.k);
    ra.validate(cfg.scenario.total_subchannels_per_macro).map_err(config_err)?;
    Ok(ra)
}

fn rule(cfg: &RunConfig, a: &RuleArgs) -> Result<Rule, CliError> {
    match (a.rule.as_str(), a.beta) {
        ("best-sinr", _) => Ok(Rule::BestSinr),
        ("re", _) => Ok(Rule::RangeExtension {
            prefer: cfg.solver.psd_macro_band,
        }),
        ("scf", Some(beta_db)) => Ok(Rule::SmallCellFirst { beta_db }),
        ("scf", None) => Err(CliError::Config("rule scf needs --beta".into())),
        (other, _) => Err(CliError::Config(format!(
            "unknown rule `{other}` (expected best-sinr, re or scf)"
        ))),
    }
}

fn metric(s: &str) -> Result<Metric, CliError> {
    s.parse().map_err(CliError::Config)
}

fn bundle(s: &Scenario, ra: RaScheme) -> Result<Bundle, CliError> {
    Bundle::new(s, ra, &McsTable::default()).map_err(config_err)
}

fn associate_with(s: &Scenario, b: &Bundle, rule: Rule) -> Result<Association, CliError> {
    rule.apply(s, &b.link)
        .map_err(|e| CliError::Infeasible(e.to_string()))
}

#[derive(Serialize)]
struct GainRow {
    loc_id: usize,
    bs_id: usize,
    distance_m: f64,
    gain_db: f64,
}

pub fn scenario_dump(cfg: &RunConfig, out: &Path, a: RealizationArg) -> Result<(), CliError> {
    let s = scenario(cfg, a.realization)?;
    let mut o = Outputs::new(out, "scenario", &a, cfg, vec![cfg.scenario.seed + a.realization])?;
    let rows = (0..s.n_locations()).flat_map(|i| {
        let s = &s;
        (0..s.layout.base_stations.len()).map(move |j| GainRow {
            loc_id: i,
            bs_id: j,
            distance_m: s.layout.location_bs_distance(i, j),
            gain_db: linear_to_db(s.gains.get(i, j)),
        })
    });
    o.csv("scenario.csv", rows)?;
    o.task("scenario", "ok", "");
    o.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct LinkRow {
    loc_id: usize,
    vbs_id: usize,
    band: &'static str,
    sinr_db: f64,
    rate_bps: f64,
}

pub fn phy_dump(cfg: &RunConfig, out: &Path, a: PhyDumpArgs) -> Result<(), CliError> {
    let ra = ra_scheme(cfg, &a.ra)?;
    let s = scenario(cfg, a.realization.realization)?;
    let b = bundle(&s, ra)?;
    let mut o = Outputs::new(out, "phy", &a, cfg, vec![s.config.seed])?;
    let link = &b.link;
    let rows = (0..link.n_locations()).flat_map(|i| {
        link.virtuals.iter().map(move |v| LinkRow {
            loc_id: i,
            vbs_id: v.id,
            band: v.band.name(),
            sinr_db: linear_to_db(link.sinr(i, v.id)),
            rate_bps: link.rate(i, v.id),
        })
    });
    o.csv("phy.csv", rows)?;
    o.task(ra.to_string(), "ok", "");
    o.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct AssocRow {
    loc_id: usize,
    vbs_id: usize,
}

pub fn associate(cfg: &RunConfig, out: &Path, a: AssociateArgs) -> Result<(), CliError> {
    let ra = ra_scheme(cfg, &a.ra)?;
    let r = rule(cfg, &a.rule)?;
    let s = scenario(cfg, a.realization.realization)?;
    let b = bundle(&s, ra)?;
    let assoc = associate_with(&s, &b, r)?;
    let mut o = Outputs::new(out, "associate", &a, cfg, vec![s.config.seed])?;
    o.csv(
        "association.csv",
        assoc.target.iter().enumerate().map(|(loc_id, &vbs_id)| AssocRow { loc_id, vbs_id }),
    )?;
    o.task(format!("{} {ra}", r.name()), "ok", "");
    o.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    kind: &'static str,
    id: Option<usize>,
    value: f64,
}

pub fn evaluate(cfg: &RunConfig, out: &Path, a: EvaluateArgs) -> Result<(), CliError> {
    let ra = ra_scheme(cfg, &a.ra)?;
    let r = rule(cfg, &a.rule)?;
    if !(a.lambda >= 0.0 && a.lambda.is_finite()) {
        return Err(CliError::Config("--lambda must be finite and non-negative".into()));
    }
    let s = scenario(cfg, a.realization.realization)?;
    let b = bundle(&s, ra)?;
    let assoc = associate_with(&s, &b, r)?;
    let rep = delays(&assoc, &b.table, a.lambda, b.rho_bar).map_err(|e| match e {
        QueueError::Unstable { .. } | QueueError::Uncovered { .. } => CliError::Infeasible(e.to_string()),
    })?;
    let mut o = Outputs::new(out, "evaluate", &a, cfg, vec![s.config.seed])?;
    let rows = rep
        .rho
        .iter()
        .enumerate()
        .map(|(j, &v)| EvalRow {
            kind: "rho",
            id: Some(j),
            value: v,
        })
        .chain(rep.t_per_class.iter().enumerate().map(|(i, &v)| EvalRow {
            kind: "t_i",
            id: Some(i),
            value: v,
        }))
        .chain([
            EvalRow {
                kind: "t_system",
                id: None,
                value: rep.t_system,
            },
            EvalRow {
                kind: "t_max",
                id: None,
                value: rep.t_max,
            },
        ]);
    o.csv("evaluate.csv", rows)?;
    let status = if rep.above_cap { "partial" } else { "ok" };
    o.task(
        format!("{} {ra}", r.name()),
        status,
        if rep.above_cap { "some load exceeds rho_bar" } else { "" },
    );
    o.finish()?;
    Ok(())
}

/// The most severe failure among `rows`, if any.
fn row_failure(rows: &[Row]) -> Option<CliError> {
    let failed: Vec<&Row> = rows.iter().filter(|r| r.certificate.starts_with("error")).collect();
    let first = failed.first()?;
    let msg = format!(
        "{} of {} results failed, first: {} k={:?} lambda={:?} ({})",
        failed.len(),
        rows.len(),
        first.ra,
        first.k,
        first.lambda,
        first.certificate
    );
    if failed.iter().any(|r| r.certificate == "error:budget") {
        Some(CliError::Budget(msg))
    } else if failed.iter().any(|r| r.certificate == "error:phy") {
        Some(CliError::Config(msg))
    } else {
        Some(CliError::Infeasible(msg))
    }
}

fn check_lambdas(metric: Metric, lambdas: &[f64]) -> Result<(), CliError> {
    if metric != Metric::LambdaMax && lambdas.is_empty() {
        return Err(CliError::Config(format!("metric {} needs --lambda", metric.name())));
    }
    if lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(CliError::Config("arrival rates must be positive".into()));
    }
    Ok(())
}

pub fn optimize(mut cfg: RunConfig, out: &Path, a: OptimizeArgs) -> Result<(), CliError> {
    if let Some(n) = a.realizations {
        cfg.realizations = n;
    }
    cfg.validate()?;
    let metric = metric(&a.metric)?;
    check_lambdas(metric, &a.lambda)?;
    let m = cfg.scenario.total_subchannels_per_macro;
    let ras = if a.sweep_k {
        k_grid(ra_kind(&a.ra.ra)?, m, 1)
    } else {
        vec![ra_scheme(&cfg, &a.ra)?]
    };
    let opts = cfg.sweep_options();
    let mut o = Outputs::new(out, "optimize", &a, &cfg, cfg.seeds())?;
    let mut rows = Vec::new();
    for r in 0..cfg.realizations as u64 {
        let s = scenario(&cfg, r)?;
        let part = experiments::sweep(&s, metric, &ras, &[Curve::Optimal], &a.lambda, &opts);
        let status = if row_failure(&part).is_some() { "partial" } else { "ok" };
        o.task(format!("realization {r}"), status, "");
        rows.extend(part);
    }
    o.csv("results.csv", &rows)?;
    o.finish()?;
    match row_failure(&rows) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct QueueRow {
    queue: usize,
    rho: f64,
    arrivals: u64,
    departures: u64,
    mean_number: f64,
    arrival_rate: f64,
    mean_sojourn: f64,
    little_residual: f64,
}

#[derive(Serialize)]
struct SimSummary {
    system_mean: f64,
    system_ci_half_width: f64,
    max_class_mean: f64,
    non_stationary: bool,
    replications: usize,
}

pub fn simulate(cfg: &RunConfig, out: &Path, a: SimulateArgs) -> Result<(), CliError> {
    let ra = ra_scheme(cfg, &a.ra)?;
    let r = rule(cfg, &a.rule)?;
    let s = scenario(cfg, a.realization.realization)?;
    let b = bundle(&s, ra)?;
    let assoc = associate_with(&s, &b, r)?;
    let sim = &cfg.simulation;
    let horizon = a.horizon.unwrap_or(sim.horizon);
    let file_sizes = match a.file_sizes.as_deref() {
        None => sim.file_sizes,
        Some("exponential") => FileSizeDist::Exponential,
        Some("deterministic") => FileSizeDist::Deterministic,
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown file size law `{other}` (expected exponential or deterministic)"
            )))
        }
    };
    let mut spec = SimSpec::new(assoc, b.table, a.lambda, horizon, a.seed.unwrap_or(s.config.seed));
    spec.warmup = a.warmup.or(sim.warmup).unwrap_or(0.1 * horizon);
    spec.replications = a.replications.unwrap_or(sim.replications);
    spec.file_sizes = file_sizes;
    spec.trace = a.trace;
    let rep = hetnet::simulator::simulate(&spec).map_err(|e| match e {
        SimError::Queue(q) => CliError::Infeasible(q.to_string()),
        SimError::InvalidSpec(m) => CliError::Config(m),
    })?;

    let mut o = Outputs::new(out, "simulate", &a, cfg, vec![spec.seed])?;
    o.csv("sim_classes.csv", &rep.classes)?;
    let little = littles_check(&rep);
    o.csv(
        "sim_queues.csv",
        rep.queues.iter().zip(&little).map(|(q, &l)| QueueRow {
            queue: q.queue,
            rho: q.rho,
            arrivals: q.arrivals,
            departures: q.departures,
            mean_number: q.mean_number,
            arrival_rate: q.arrival_rate,
            mean_sojourn: q.mean_sojourn,
            little_residual: l,
        }),
    )?;
    o.csv(
        "sim_summary.csv",
        [SimSummary {
            system_mean: rep.system_mean,
            system_ci_half_width: rep.system_ci_half_width,
            max_class_mean: rep.max_class_mean,
            non_stationary: rep.non_stationary,
            replications: rep.replications,
        }],
    )?;
    if let Some(trace) = &rep.trace {
        o.csv("trace.csv", trace)?;
    }
    let (status, detail) = if rep.non_stationary {
        ("partial", "some queue has load >= 1; statistics describe a transient")
    } else {
        ("ok", "")
    };
    o.task(format!("{} {ra}", r.name()), status, detail);
    o.finish()?;
    Ok(())
}

pub fn sweep(mut cfg: RunConfig, out: &Path, a: SweepArgs) -> Result<(), CliError> {
    if let Some(n) = a.realizations {
        cfg.realizations = n;
    }
    cfg.validate()?;
    let metric = metric(&a.metric)?;
    check_lambdas(metric, &a.lambda)?;
    let m = cfg.scenario.total_subchannels_per_macro;
    let mut ras = Vec::new();
    for kind in &a.ra {
        ras.extend(k_grid(ra_kind(kind)?, m, a.k_step));
    }
    let curves = a
        .rules
        .iter()
        .map(|c| c.parse::<Curve>().map_err(CliError::Config))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = cfg.sweep_options();
    let mut o = Outputs::new(out, "sweep", &a, &cfg, cfg.seeds())?;
    let (mut rows, mut best) = (Vec::new(), Vec::new());
    for r in 0..cfg.realizations as u64 {
        let s = scenario(&cfg, r)?;
        let part = experiments::sweep(&s, metric, &ras, &curves, &a.lambda, &opts);
        let failed = part.iter().filter(|r| !r.is_valid()).count();
        let status = if failed == 0 { "ok" } else { "partial" };
        o.task(format!("realization {r}"), status, format!("{failed} of {} rows invalid", part.len()));
        best.extend(best_k(&part, metric));
        rows.extend(part);
    }
    o.csv("results.csv", &rows)?;
    o.csv("best_k.csv", &best)?;
    o.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct RunRow<'a> {
    fig: u8,
    layout: &'static str,
    realization: usize,
    ra: &'static str,
    k: Option<usize>,
    rule: &'static str,
    beta: Option<f64>,
    lambda: Option<f64>,
    metric_name: &'static str,
    value: f64,
    certificate: &'a str,
    iterations: u64,
    seed: u64,
}

pub fn reproduce(mut cfg: RunConfig, out: &Path, a: ReproduceArgs) -> Result<(), CliError> {
    if let Some(n) = a.realizations {
        cfg.realizations = n;
    }
    if let Some(s) = a.seed {
        cfg.scenario.seed = s;
    }
    if let Some(k) = a.k_step {
        cfg.reproduce.k_step = k;
    }
    if let Some(k) = a.delay_k_step {
        cfg.reproduce.delay_k_step = k;
    }
    cfg.validate()?;
    let mut figs: Vec<u8> = Vec::new();
    for f in &a.fig {
        match f.as_str() {
            "all" => figs.extend(2..=7),
            f => figs.push(
                f.parse()
                    .map_err(|_| CliError::Config(format!("--fig expects 2 to 7 or `all`, got `{f}`")))?,
            ),
        }
    }
    figs.sort_unstable();
    figs.dedup();
    let rc = cfg.reproduce_config();
    let mut o = Outputs::new(out, "reproduce", &a, &cfg, cfg.seeds())?;
    let mut checks = Vec::new();
    for fig in figs {
        let res = experiments::reproduce(fig, &rc).map_err(|e| match e {
            ExperimentError::Scenario(_) | ExperimentError::UnknownFigure(_) | ExperimentError::Invalid(_) => {
                config_err(e)
            }
        })?;
        o.csv(&format!("fig{fig}.csv"), &res.aggregates)?;
        o.csv(
            &format!("fig{fig}_runs.csv"),
            res.runs.iter().map(|f| RunRow {
                fig,
                layout: f.layout,
                realization: f.realization,
                ra: f.row.ra,
                k: f.row.k,
                rule: f.row.rule,
                beta: f.row.beta,
                lambda: f.row.lambda,
                metric_name: f.row.metric_name,
                value: f.row.value,
                certificate: &f.row.certificate,
                iterations: f.row.iterations,
                seed: f.row.seed,
            }),
        )?;
        let failed = res.checks.iter().filter(|c| !c.passed).count();
        let status = if failed == 0 { "ok" } else { "failed" };
        o.task(
            format!("fig{fig}"),
            status,
            format!("{failed} of {} trend checks failed", res.checks.len()),
        );
        checks.extend(res.checks);
    }
    o.csv("summary.csv", &checks)?;
    o.finish()?;
    Ok(())
}
