//! Command dispatch: runs one configured command and writes its CSV table,
//! JSON report and snapshots.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, InitialCondition, OutputFormat, RunConfig, SweepPoint};
use crate::error::{Error, Result};
use crate::fit::RateFit;
use crate::gauge::{gauge_boundary_warning, gauge_inverse};
use crate::model::{
    action_s, energy, global_predicate, mass, momentum, mu_omega0, nehari_k, ModelParams,
};
use crate::scatter::{scatter_from_physical, ScatterVerdict};
use crate::snapshot::write_snapshot;
use crate::spectral::{norms, spectral_derivative, Field};
use crate::stepper::{boundary_mass, evolve_gdnls, self_convergence_order, ObservedOrder};
use crate::waveop::{
    construct_wave_operator, select_final_time, AsymptoticState, Extension, ProfileBundle,
    RELATION_TOLERANCE,
};

/// Environment variable holding the root that relative output directories
/// resolve against (the working directory when unset).
pub const OUTPUT_ROOT_ENV: &str = "GDNLS_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
    ValidationError,
    BlowUp,
    Tainted,
    NoConvergence,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Failed => 1,
            Status::ValidationError => 2,
            Status::BlowUp => 3,
            Status::Tainted => 4,
            Status::NoConvergence => 5,
        }
    }

    pub fn of_error(err: &Error) -> Status {
        match err {
            Error::Config { .. }
            | Error::InvalidGrid(_)
            | Error::InvalidParameter(_)
            | Error::GridMismatch(_)
            | Error::Snapshot(_) => Status::ValidationError,
            Error::BlowUp { .. } => Status::BlowUp,
            Error::Tainted(_) => Status::Tainted,
            Error::NoConvergence(_) | Error::OutsideSmallRegime(_) | Error::RelationViolation { .. } => {
                Status::NoConvergence
            }
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => Status::Failed,
        }
    }
}

/// A pass/fail diagnostic with the measured value and its threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    fn below(name: &str, value: f64, threshold: f64) -> Check {
        Check {
            name: name.into(),
            passed: value < threshold,
            value,
            threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamedFit {
    pub name: String,
    #[serde(flatten)]
    pub fit: RateFit,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: Command,
    pub status: Status,
    pub exit_code: i32,
    pub error: Option<String>,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub fits: Vec<NamedFit>,
    pub warnings: Vec<String>,
    pub results: Value,
    pub config: RunConfig,
}

/// A CSV table; cells are preformatted so output is byte-stable.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&str]) -> Table {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip float text.
pub fn cell(v: f64) -> String {
    format!("{v:e}")
}

struct NamedSnapshot {
    name: String,
    field: Field,
    time: f64,
}

/// Everything a command produced, before it is written out.
struct Outcome {
    status: Status,
    checks: Vec<Check>,
    fits: Vec<NamedFit>,
    warnings: Vec<String>,
    results: Value,
    table: Option<(String, Table)>,
    snapshots: Vec<NamedSnapshot>,
}

impl Outcome {
    fn new(results: Value) -> Outcome {
        Outcome {
            status: Status::Ok,
            checks: Vec::new(),
            fits: Vec::new(),
            warnings: Vec::new(),
            results,
            table: None,
            snapshots: Vec::new(),
        }
    }
}

/// Output directory: `cli_out` wins over the config; relative paths resolve
/// against `$GDNLS_OUTPUT_ROOT` when it is set.
pub fn resolve_output_dir(cfg: &RunConfig, cli_out: Option<&Path>) -> PathBuf {
    let dir = cli_out.map_or_else(|| cfg.outputs.directory.clone(), Path::to_path_buf);
    if dir.is_absolute() {
        return dir;
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

/// Runs the configured command and writes its artifacts into `out_dir`.
/// Command failures are reported through the returned status; only failures
/// to write the artifacts are errors.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport> {
    let command = cfg.command()?;
    let (outcome, error) = match cfg.validate().and_then(|_| dispatch(cfg, command, out_dir)) {
        Ok(o) => (o, None),
        Err(e) => {
            let mut o = Outcome::new(Value::Null);
            o.status = Status::of_error(&e);
            (o, Some(e.to_string()))
        }
    };
    let report = RunReport {
        command,
        status: outcome.status,
        exit_code: outcome.status.exit_code(),
        error,
        seed: cfg.seed,
        checks: outcome.checks,
        fits: outcome.fits,
        warnings: outcome.warnings,
        results: outcome.results,
        config: cfg.clone(),
    };
    write_outputs(cfg, out_dir, &report, outcome.table.as_ref(), &outcome.snapshots)?;
    Ok(report)
}

fn write_outputs(
    cfg: &RunConfig,
    dir: &Path,
    report: &RunReport,
    table: Option<&(String, Table)>,
    snapshots: &[NamedSnapshot],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if cfg.outputs.wants(OutputFormat::Csv) {
        if let Some((name, table)) = table {
            table.write(&dir.join(name))?;
        }
    }
    if cfg.outputs.wants(OutputFormat::Json) {
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        std::fs::write(dir.join("report.json"), text)?;
    }
    if cfg.outputs.wants(OutputFormat::Snapshots) && !snapshots.is_empty() {
        let snap_dir = dir.join("snapshots");
        std::fs::create_dir_all(&snap_dir)?;
        for s in snapshots {
            write_snapshot(&snap_dir.join(format!("{}.gdnls", s.name)), &s.field, s.time, cfg.model.sigma)?;
        }
    }
    Ok(())
}

fn dispatch(cfg: &RunConfig, command: Command, out_dir: &Path) -> Result<Outcome> {
    match command {
        Command::Simulate => simulate(cfg),
        Command::Functionals => functionals(cfg),
        Command::Waveop => waveop(cfg),
        Command::Scatter => scatter(cfg),
        Command::Convergence => convergence(cfg),
        Command::Sweep => sweep(cfg, out_dir),
    }
}

const SERIES_COLUMNS: [&str; 8] = [
    "t",
    "mass",
    "energy",
    "momentum",
    "l2",
    "h1",
    "linf",
    "boundary_mass",
];

fn series_row(t: f64, u: &Field, p: &ModelParams) -> Vec<String> {
    let n = norms(u);
    vec![
        cell(t),
        cell(mass(u)),
        cell(energy(u, p)),
        cell(momentum(u)),
        cell(n.l2),
        cell(n.h1),
        cell(n.linf),
        cell(boundary_mass(u)),
    ]
}

fn boundary_warning(u: &Field, p: &ModelParams, warnings: &mut Vec<String>) {
    if let Some(w) = gauge_boundary_warning(u, p) {
        warnings.push(format!(
            "gauge integrand is {:.3e} at the left boundary, above {:.3e}",
            w.left_value, w.threshold
        ));
    }
}

/// Largest `|Q(t) − Q(0)|`, relative to `|Q(0)|`, or to `‖u₀‖²_{H¹}` when
/// `Q(0)` is negligible against it.
fn drift(values: &[f64], scale: f64) -> f64 {
    let Some(&first) = values.first() else {
        return 0.0;
    };
    let denom = if first.abs() > 1e-10 * scale { first.abs() } else { scale };
    if denom == 0.0 {
        return 0.0;
    }
    values.iter().map(|v| (v - first).abs()).fold(0.0, f64::max) / denom
}

fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let grid = cfg.make_grid()?;
    let u0 = cfg.initial_field(&grid)?;
    let p = cfg.model;
    let traj = evolve_gdnls(&u0, &cfg.stepper, &p)?;

    let mut table = Table::new(&SERIES_COLUMNS);
    for r in &traj.records {
        table.push(vec![
            cell(r.t),
            cell(r.mass),
            cell(r.energy),
            cell(r.momentum),
            cell(r.norms.l2),
            cell(r.norms.h1),
            cell(r.norms.linf),
            cell(r.boundary_mass),
        ]);
    }
    let scale = norms(&u0).h1.powi(2);
    let series = |f: fn(&crate::stepper::InvariantRecord) -> f64| traj.records.iter().map(f).collect::<Vec<_>>();
    let mass_drift = drift(&series(|r| r.mass), scale);
    let energy_drift = drift(&series(|r| r.energy), scale);
    let momentum_drift = drift(&series(|r| r.momentum), scale);

    let mut out = Outcome::new(json!({
        "records": traj.len(),
        "final_time": traj.times.last(),
        "drift": { "mass": mass_drift, "energy": energy_drift, "momentum": momentum_drift },
    }));
    boundary_warning(&u0, &p, &mut out.warnings);
    out.checks.push(Check::below("mass_drift", mass_drift, 1e-6));
    out.checks.push(Check::below("energy_drift", energy_drift, 1e-6));
    out.checks.push(Check::below("momentum_drift", momentum_drift, 1e-6));
    for r in &traj.records {
        if r.mass > 0.0 && r.boundary_mass / r.mass > p.boundary_tolerance {
            out.warnings.push(format!(
                "boundary mass fraction {:.3e} at t = {} exceeds {:.1e}",
                r.boundary_mass / r.mass,
                r.t,
                p.boundary_tolerance
            ));
            out.status = Status::Tainted;
            break;
        }
    }
    out.snapshots = traj
        .times
        .iter()
        .zip(&traj.snapshots)
        .enumerate()
        .map(|(j, (&t, u))| NamedSnapshot {
            name: format!("u_{j:05}"),
            field: u.clone(),
            time: t,
        })
        .collect();
    out.table = Some(("timeseries.csv".into(), table));
    Ok(out)
}

fn functionals(cfg: &RunConfig) -> Result<Outcome> {
    let grid = cfg.make_grid()?;
    let u = cfg.initial_field(&grid)?;
    let p = match cfg.initial_condition {
        InitialCondition::GroundState { omega } => ModelParams { omega, ..cfg.model },
        _ => cfg.model,
    };
    let s = action_s(&u, &p);
    let k = nehari_k(&u, &p);
    let mu = if p.c == 0.0 { Some(mu_omega0(&p)?) } else { None };
    let global = if p.c == 0.0 { Some(global_predicate(&u, &p)?) } else { None };
    let scale = norms(&spectral_derivative(&u)).l2.powi(2) + p.omega * mass(&u);

    let mut out = Outcome::new(json!({
        "mass": mass(&u),
        "energy": energy(&u, &p),
        "momentum": momentum(&u),
        "action": s,
        "nehari": k,
        "mu": mu,
        "global_predicate": global,
        "norms": norms(&u),
    }));
    boundary_warning(&u, &p, &mut out.warnings);
    if let (InitialCondition::GroundState { .. }, Some(mu)) = (&cfg.initial_condition, mu) {
        out.checks.push(Check::below("nehari_relative", k.abs() / scale, 1e-6));
        out.checks.push(Check::below("action_minus_mu_relative", (s - mu).abs() / mu, 1e-6));
    }
    let mut table = Table::new(&SERIES_COLUMNS);
    table.push(series_row(0.0, &u, &p));
    out.table = Some(("functionals.csv".into(), table));
    out.snapshots.push(NamedSnapshot {
        name: "u".into(),
        field: u,
        time: 0.0,
    });
    Ok(out)
}

fn waveop(cfg: &RunConfig) -> Result<Outcome> {
    let grid = cfg.make_grid()?;
    let u_plus = cfg.initial_field(&grid)?;
    let w = &cfg.waveop;
    let p = cfg.model;
    let mut warnings = Vec::new();
    let tail = match w.tn {
        Some(_) => None,
        None => {
            let probe = AsymptoticState::new(u_plus.clone(), p.sigma, p.omega, w.t0, 16.0 * w.t0)?;
            Some(select_final_time(&probe, &w.source, w.tail_tol)?)
        }
    };
    let tn = w.tn.or(tail.map(|s| s.tn)).expect("tn is set or selected");
    let state = AsymptoticState::new(u_plus.clone(), p.sigma, p.omega, w.t0, tn)?;
    let report = construct_wave_operator(&state, &cfg.stepper, &w.source)?;

    let bundle = ProfileBundle::new(&state, w.source);
    let traj = &report.eta_tilde_trajectory;
    let mut columns = SERIES_COLUMNS.to_vec();
    columns.push("relation_residual");
    let mut table = Table::new(&columns);
    let mut order: Vec<usize> = (0..traj.len()).collect();
    order.sort_by(|&a, &b| traj.times[a].total_cmp(&traj.times[b]));
    let mut relation_worst = 0.0_f64;
    for &j in &order {
        let t = traj.times[j];
        let eta = &traj.snapshots[j];
        let u = gauge_inverse(&(&eta.phi + &bundle.w_hat(t).phi), &p);
        let mut row = series_row(t, &u, &p);
        let residual = traj.records[j].relation_residual;
        row.push(cell(residual));
        table.push(row);
        relation_worst = relation_worst.max(residual / (1.0 + eta.norms().h1()));
    }
    boundary_warning(&u_plus, &p, &mut warnings);
    warnings.extend(report.warnings.iter().cloned());

    let mut out = Outcome::new(json!({
        "tail_selection": tail,
        "waveop": &report,
    }));
    out.warnings = warnings;
    if let Some(fit) = report.rate_fit {
        out.checks.push(Check::below("deviation_rate", fit.slope, 1.5 - p.sigma));
        out.fits.push(NamedFit {
            name: "deviation_h1".into(),
            fit,
        });
    }
    if let Some(fit) = report.source_fit {
        out.fits.push(NamedFit {
            name: "source_h1".into(),
            fit,
        });
    }
    if let Some(spread) = report.eta_decay_spread {
        out.checks.push(Check::below("eta_decay_spread", spread, 20.0));
    }
    out.checks.push(Check::below("relation_residual", relation_worst, RELATION_TOLERANCE));
    out.checks.push(Check {
        name: "global_predicate".into(),
        passed: report.global.holds,
        value: report.global.lhs,
        threshold: report.global.bound,
    });
    if let Extension::BlowUp { .. } = report.extension {
        out.status = Status::BlowUp;
    } else if report.tainted {
        out.status = Status::Tainted;
    }
    if let Some(u0) = &report.u0 {
        out.snapshots.push(NamedSnapshot {
            name: "u0".into(),
            field: u0.clone(),
            time: 0.0,
        });
    }
    out.snapshots.push(NamedSnapshot {
        name: "u_plus".into(),
        field: u_plus,
        time: f64::INFINITY,
    });
    out.table = Some(("timeseries.csv".into(), table));
    Ok(out)
}

fn scatter(cfg: &RunConfig) -> Result<Outcome> {
    let grid = cfg.make_grid()?;
    let u0 = cfg.initial_field(&grid)?;
    let p = cfg.model;
    let s = &cfg.scatter;
    let result = scatter_from_physical(&u0, &p, s.horizon, &s.settings)?;

    let mut table = Table::new(&["t", "direction", "phi_h1", "psi_h1", "cauchy_gap"]);
    for report in [&result.plus, &result.minus] {
        for (j, (&t, pullback)) in report.check_times.iter().zip(&report.pullback_snapshots).enumerate() {
            let n = pullback.norms();
            let gap = if j == 0 { String::new() } else { cell(report.cauchy_gaps[j - 1]) };
            table.push(vec![
                cell(f64::from(report.direction) * t),
                report.direction.to_string(),
                cell(n.phi.h1),
                cell(n.psi.h1),
                gap,
            ]);
        }
    }

    let mut out = Outcome::new(serde_json::to_value(&result)?);
    boundary_warning(&u0, &p, &mut out.warnings);
    for report in [&result.plus, &result.minus] {
        let label = if report.direction > 0 { "plus" } else { "minus" };
        if report.exploratory {
            out.warnings.push(format!("{label}: sigma = 2 lies outside the proven range"));
        }
        match report.verdict {
            ScatterVerdict::Converged => {}
            ScatterVerdict::Unsettled => out.warnings.push(format!(
                "{label}: gaps decrease but the last one exceeds the extraction tolerance"
            )),
            ScatterVerdict::NoConvergence => out.status = Status::NoConvergence,
        }
        if let Some(&last) = report.cauchy_gaps.last() {
            out.checks.push(Check::below(
                &format!("{label}_last_gap"),
                last,
                s.settings.extraction_tolerance,
            ));
        }
        if let Some(state) = &report.extracted {
            let time = f64::from(report.direction) * s.horizon;
            out.snapshots.push(NamedSnapshot {
                name: format!("{label}_phi"),
                field: state.phi.clone(),
                time,
            });
            out.snapshots.push(NamedSnapshot {
                name: format!("{label}_psi"),
                field: state.psi.clone(),
                time,
            });
        }
    }
    if let (Some(&first), Some(&last)) = (result.direct.distances.first(), result.direct.distances.last()) {
        out.checks.push(Check {
            name: "direct_check_decreases".into(),
            passed: last < first,
            value: last,
            threshold: first,
        });
    }
    out.table = Some(("scatter.csv".into(), table));
    Ok(out)
}

fn convergence(cfg: &RunConfig) -> Result<Outcome> {
    let c = cfg
        .convergence
        .ok_or_else(|| Error::config("convergence", "missing [convergence] table"))?;
    let report = self_convergence_order(&c.problem, c.dt0)?;
    let mut table = Table::new(&["dt", "difference"]);
    table.push(vec![cell(c.dt0), cell(report.differences.0)]);
    table.push(vec![cell(c.dt0 / 2.0), cell(report.differences.1)]);
    let mut out = Outcome::new(serde_json::to_value(report)?);
    match report.order {
        ObservedOrder::Exact => out
            .warnings
            .push("refinement differences are at roundoff; the order is not observable".into()),
        ObservedOrder::Order(q) => out.checks.push(Check {
            name: "order_in_band".into(),
            passed: (3.5..=4.5).contains(&q),
            value: q,
            threshold: 3.5,
        }),
    }
    out.table = Some(("convergence.csv".into(), table));
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
struct SweepRow {
    index: usize,
    point: SweepPoint,
    status: Status,
    exit_code: i32,
    error: Option<String>,
    fit: Option<NamedFit>,
}

fn sweep(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let axes = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "missing [sweep] table"))?;
    let points = axes.points();
    let rows: Vec<SweepRow> = points
        .par_iter()
        .enumerate()
        .map(|(index, point)| {
            let row_cfg = cfg.with_point(axes.command, point);
            let dir = out_dir.join(format!("row_{index:03}"));
            match run(&row_cfg, &dir) {
                Ok(report) => SweepRow {
                    index,
                    point: *point,
                    status: report.status,
                    exit_code: report.exit_code,
                    error: report.error,
                    fit: report.fits.into_iter().next(),
                },
                Err(e) => SweepRow {
                    index,
                    point: *point,
                    status: Status::of_error(&e),
                    exit_code: Status::of_error(&e).exit_code(),
                    error: Some(e.to_string()),
                    fit: None,
                },
            }
        })
        .collect();

    let mut table = Table::new(&[
        "row", "sigma", "amplitude", "omega", "status", "exit_code", "fit", "slope", "window_start",
        "window_end", "points",
    ]);
    let opt = |v: Option<f64>| v.map(cell).unwrap_or_default();
    for r in &rows {
        let status = serde_json::to_value(r.status)?;
        let mut line = vec![
            r.index.to_string(),
            opt(r.point.sigma),
            opt(r.point.amplitude),
            opt(r.point.omega),
            status.as_str().unwrap_or_default().to_string(),
            r.exit_code.to_string(),
        ];
        match &r.fit {
            Some(f) => line.extend([
                f.name.clone(),
                cell(f.fit.slope),
                cell(f.fit.window.0),
                cell(f.fit.window.1),
                f.fit.points.to_string(),
            ]),
            None => line.extend(std::iter::repeat_n(String::new(), 5)),
        }
        table.push(line);
    }
    let mut out = Outcome::new(json!({ "rows": &rows }));
    if points.is_empty() {
        out.warnings.push("sweep range is empty".into());
    }
    for r in rows.iter().filter(|r| r.status != Status::Ok) {
        out.warnings.push(format!(
            "row {} ended with status {:?}{}",
            r.index,
            r.status,
            r.error.as_deref().map(|e| format!(": {e}")).unwrap_or_default()
        ));
    }
    out.table = Some(("sweep.csv".into(), table));
    Ok(out)
}
