//! Command-line surface: solving, parameter sweeps, solution validation,
//! fleet metrics and instance generation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnp::{report, solve_bnp, BnpConfig, ReportFormat, SolutionDoc};
use crate::compact_model::{solve_compact_plan, CompactError, CompactOptions, MilpEngine};
use crate::instance::{
    apply_severity, apply_sparsity, cap_availability, desk_instance, load_instance, override_service, save_instance, scale_demand,
    with_shift_fee, DemandShape, DeskSpec, Instance, InstanceError, Severity,
};
use crate::master::lp::MilpStatus;
use crate::master::Plan;
use crate::metrics::{capacity_utilization, plan_utilization, type_table, MetricInputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "ESB_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Infeasible(_) => EXIT_VIOLATION,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Compact,
    BnpExact,
    BnpDp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Compact => "compact",
            Method::BnpExact => "bnp-exact",
            Method::BnpDp => "bnp-dp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Sparsity,
    Demand,
    Availability,
    ServiceTime,
    Severity,
    ShiftFee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    MegaShelter,
    Uniform,
    Flat,
}

impl From<Shape> for DemandShape {
    fn from(s: Shape) -> Self {
        match s {
            Shape::MegaShelter => DemandShape::MegaShelter,
            Shape::Uniform => DemandShape::Uniform,
            Shape::Flat => DemandShape::Flat,
        }
    }
}

/// Everything needed to build an instance and run one solve.
#[derive(Debug, Clone, Args, PartialEq)]
pub struct RunSpec {
    /// Instance file; without it an S-C-T instance is generated.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Generator size as shelters-stations-slots.
    #[arg(long, default_value = "1-1-8")]
    pub desk: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Mean generated demand per slot and shelter, kWh.
    #[arg(long, default_value_t = 20.0)]
    pub mean_demand: f64,
    /// Generated buses per type.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 1, 1])]
    pub buses: Vec<u32>,
    #[arg(long, value_enum, default_value = "bnp-dp")]
    pub method: Method,
    /// Shelter and type compatibility level, 1 (full) to 4 (sparse).
    #[arg(long)]
    pub sparsity: Option<u8>,
    #[arg(long, default_value = "normal")]
    pub severity: Severity,
    /// Demand multiplier in [0.5, 1.5].
    #[arg(long, default_value_t = 1.0)]
    pub demand_scale: f64,
    /// Available buses per type, overriding the instance.
    #[arg(long, value_delimiter = ',')]
    pub availability: Option<Vec<u32>>,
    /// Service time of every shelter in slots.
    #[arg(long)]
    pub service_time: Option<u32>,
    /// Per-kWh fee for shifting demand; enables demand shifting.
    #[arg(long)]
    pub shift_fee: Option<f64>,
    /// Relative optimality gap; each method has its own default.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Wall-clock cap in seconds for branch-and-price.
    #[arg(long)]
    pub time_cap: Option<f64>,
    /// Where the solution document is written.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            instance: None,
            desk: "1-1-8".into(),
            seed: 1,
            mean_demand: 20.0,
            buses: vec![1, 1, 1],
            method: Method::BnpDp,
            sparsity: None,
            severity: Severity::Normal,
            demand_scale: 1.0,
            availability: None,
            service_time: None,
            shift_fee: None,
            gap: None,
            time_cap: None,
            output: None,
        }
    }
}

fn parse_desk(s: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<&str> = s.split('-').collect();
    let bad = || CliError::Usage(format!("desk size `{s}` is not shelters-stations-slots"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n: Vec<usize> = parts.iter().map(|p| p.parse::<usize>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    if n[0] == 0 || n[0] > 10 || n[1] > 3 || n[2] < 2 {
        return Err(CliError::Usage(format!("desk size `{s}` outside 1..=10 shelters, 0..=3 stations, 2+ slots")));
    }
    Ok((n[0], n[1], n[2]))
}

impl RunSpec {
    pub fn check(&self) -> Result<(), CliError> {
        if !(0.5..=1.5).contains(&self.demand_scale) {
            return Err(CliError::Usage(format!("demand scale {} outside [0.5, 1.5]", self.demand_scale)));
        }
        if let Some(l) = self.sparsity {
            if !(1..=4).contains(&l) {
                return Err(CliError::Usage(format!("sparsity level {l} outside 1..=4")));
            }
        }
        if self.buses.len() != 3 {
            return Err(CliError::Usage("--buses needs one count per type".into()));
        }
        if self.shift_fee.is_some_and(|f| f < 0.0 || !f.is_finite()) {
            return Err(CliError::Usage("shift fee must be a non-negative number".into()));
        }
        if self.gap.is_some_and(|g| !(0.0..1.0).contains(&g)) {
            return Err(CliError::Usage("gap must lie in [0, 1)".into()));
        }
        if self.instance.is_none() {
            parse_desk(&self.desk)?;
        }
        Ok(())
    }

    /// Loads or generates the base instance and applies every modifier.
    pub fn build_instance(&self) -> Result<Instance, CliError> {
        self.check()?;
        let mut inst = match &self.instance {
            Some(p) => load_instance(p)?,
            None => {
                let (shelters, stations, slots) = parse_desk(&self.desk)?;
                desk_instance(&DeskSpec {
                    shelters,
                    stations,
                    slots,
                    buses: [self.buses[0], self.buses[1], self.buses[2]],
                    seed: self.seed,
                    mean_demand: self.mean_demand,
                    ..Default::default()
                })
            }
        };
        inst = apply_severity(&inst, self.severity);
        if let Some(l) = self.sparsity {
            inst = apply_sparsity(&inst, l)?;
        }
        if self.demand_scale != 1.0 {
            inst = scale_demand(&inst, self.demand_scale);
        }
        if let Some(c) = &self.availability {
            if c.len() != inst.n_types() {
                return Err(CliError::Usage(format!("availability lists {} types, instance has {}", c.len(), inst.n_types())));
            }
            inst = cap_availability(&inst, c);
        }
        if self.service_time.is_some() {
            inst = override_service(&inst, self.service_time, None);
        }
        if let Some(f) = self.shift_fee {
            inst = with_shift_fee(&inst, f);
        }
        inst.validate()?;
        Ok(inst)
    }
}

/// Runs the chosen method on an instance. With `deterministic`, runtimes
/// are left out so repeated documents compare byte for byte.
pub fn solve_instance(inst: &Instance, spec: &RunSpec, deterministic: bool) -> Result<SolutionDoc, CliError> {
    let shift = inst.shift_mode_available();
    let start = Instant::now();
    let mut doc = match spec.method {
        Method::Compact => {
            let opt = CompactOptions { shift, ..Default::default() };
            let (sol, plan) = solve_compact_plan(inst, &opt, spec.gap.unwrap_or(0.0), 10_000_000, MilpEngine::Highs).map_err(|e| match e {
                CompactError::TooLarge { .. } => CliError::Infeasible(e.to_string()),
                other => CliError::Internal(other.to_string()),
            })?;
            let plan = match (sol.status, plan) {
                (MilpStatus::Infeasible, _) => return Err(CliError::Infeasible("compact model is infeasible".into())),
                (_, None) => return Err(CliError::Infeasible("compact model found no solution within its limits".into())),
                (_, Some(p)) => p,
            };
            let mut d = SolutionDoc::from_plan(inst, spec.method.name(), &plan, sol.bound.min(plan.objective), sol.nodes, 0);
            d.runtime = Some(start.elapsed().as_secs_f64());
            d
        }
        Method::BnpExact | Method::BnpDp => {
            let mut cfg = if spec.method == Method::BnpExact { BnpConfig::exact() } else { BnpConfig::dp() };
            cfg.shift = shift;
            cfg.pricing.parallel = !deterministic;
            if let Some(g) = spec.gap {
                cfg.gap_target = g;
            }
            if !deterministic {
                cfg.time_cap = spec.time_cap;
            }
            let res = solve_bnp(inst, &cfg);
            SolutionDoc::from_bnp(inst, spec.method.name(), &res)
        }
    };
    if deterministic {
        doc.runtime = None;
    }
    Ok(doc)
}

/// Coverage of one shelter in a solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShelterCoverage {
    pub shelter: u32,
    pub demand: f64,
    pub delivered: f64,
    pub unmet: f64,
    /// Demand left over after deliveries and declared unmet demand.
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    /// `(route index, violations)` for every route with a problem.
    pub routes: Vec<(usize, Vec<String>)>,
    pub coverage: Vec<ShelterCoverage>,
    /// Plan-level problems.
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.routes.is_empty() && self.issues.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (r, v) in &self.routes {
            for m in v {
                let _ = writeln!(s, "route {r}: {m}");
            }
        }
        for c in &self.coverage {
            let _ = writeln!(
                s,
                "S{}: demand {:.3} delivered {:.3} unmet {:.3} residual {:.3}",
                c.shelter, c.demand, c.delivered, c.unmet, c.residual
            );
        }
        for m in &self.issues {
            let _ = writeln!(s, "{m}");
        }
        let _ = writeln!(s, "{}", if self.is_clean() { "clean" } else { "violations found" });
        s
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

/// Checks a solution document against its instance.
pub fn validate_solution(inst: &Instance, doc: &SolutionDoc) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let ni = inst.n_shelters();
    let mut delivered = vec![vec![0.0; inst.slots()]; ni];
    let mut routes = vec![];
    let mut fleet = vec![0u32; inst.n_types()];
    for (n, e) in doc.routes.iter().enumerate() {
        let r = match e.route.to_route(inst) {
            Ok(r) => r,
            Err(m) => {
                rep.routes.push((n, vec![m]));
                continue;
            }
        };
        let v = r.validate(inst);
        if !v.is_empty() {
            rep.routes.push((n, v.iter().map(|x| x.to_string()).collect()));
        }
        if e.count == 0 {
            rep.routes.push((n, vec!["route used zero times".into()]));
        }
        for &(i, t, g) in &r.discharge {
            if i < ni && t < inst.slots() {
                delivered[i][t] += e.count as f64 * g;
            }
        }
        fleet[r.esb_type] += e.count;
        routes.push((r, e.count));
    }
    for (k, &f) in fleet.iter().enumerate() {
        if f > inst.types[k].available_count {
            rep.issues.push(format!("type {}: fleet {f} exceeds availability {}", inst.types[k].id, inst.types[k].available_count));
        }
    }
    if doc.fleet != fleet {
        rep.issues.push(format!("declared fleet {:?} differs from the routes' fleet {:?}", doc.fleet, fleet));
    }
    if doc.unmet.len() != ni {
        rep.issues.push(format!("unmet demand lists {} shelters, instance has {ni}", doc.unmet.len()));
    }
    for i in 0..ni {
        let demand = inst.demands.total(i);
        let got: f64 = delivered[i].iter().sum();
        let unmet = doc.unmet.get(i).copied().unwrap_or(0.0);
        let residual = demand - got - unmet;
        rep.coverage.push(ShelterCoverage { shelter: inst.network.shelter_ids[i], demand, delivered: got, unmet, residual });
        if residual > 1e-6 * demand.max(1.0) {
            rep.issues.push(format!("S{}: unaccounted unmet demand {residual:.3} kWh", inst.network.shelter_ids[i]));
        }
    }
    match (&doc.shifted, &inst.demands.shift_fee) {
        (Some(s), Some(_)) => {
            for i in 0..ni.min(s.len()) {
                for t in 0..inst.slots().min(s[i].len()) {
                    let gap = inst.demands.demand[i][t] - delivered[i][t] - s[i][t];
                    if gap > 1e-6 * inst.demands.demand[i][t].max(1.0) {
                        rep.issues.push(format!("S{} slot {t}: unaccounted shifted demand {gap:.3} kWh", inst.network.shelter_ids[i]));
                    }
                }
            }
        }
        (Some(_), None) => rep.issues.push("solution shifts demand but the instance has no shift fees".into()),
        _ => {}
    }
    let plan = Plan::evaluate(inst, routes, doc.shifted.is_some());
    if !close(plan.objective, doc.objective) {
        rep.issues.push(format!("objective {:.3} differs from the recomputed {:.3}", doc.objective, plan.objective));
    }
    rep
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub axis: Axis,
    pub value: String,
    pub instance: String,
    pub method: String,
    pub status: String,
    pub objective: Option<i64>,
    pub cost_delta_pct: Option<f64>,
    pub fleet: Vec<u32>,
    pub unmet_kwh: Option<f64>,
    pub shifted_pct: Option<f64>,
    pub gap: Option<f64>,
    pub runtime_s: Option<f64>,
    pub error: String,
}

pub const SWEEP_HEADER: &str =
    "index,axis,value,instance,method,status,total_cost,cost_delta_pct,fleet_1,fleet_2,fleet_3,unmet_kwh,shifted_pct,gap,runtime_s,error";

impl SweepRow {
    pub fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>, p: usize| v.map_or(String::new(), |x| format!("{x:.p$}"));
        let fleet = |k: usize| self.fleet.get(k).map_or(String::new(), |f| f.to_string());
        let axis = match self.axis {
            Axis::Sparsity => "sparsity",
            Axis::Demand => "demand",
            Axis::Availability => "availability",
            Axis::ServiceTime => "service_time",
            Axis::Severity => "severity",
            Axis::ShiftFee => "shift_fee",
        };
        vec![
            self.index.to_string(),
            axis.to_string(),
            self.value.clone(),
            self.instance.clone(),
            self.method.clone(),
            self.status.clone(),
            self.objective.map_or(String::new(), |v| v.to_string()),
            opt(self.cost_delta_pct, 3),
            fleet(0),
            fleet(1),
            fleet(2),
            opt(self.unmet_kwh, 3),
            opt(self.shifted_pct, 3),
            opt(self.gap, 6),
            opt(self.runtime_s, 3),
            self.error.clone(),
        ]
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(SWEEP_HEADER.split(',')).expect("in-memory write");
    for r in rows {
        w.write_record(r.fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Default grid for an axis, as strings accepted by [`point_spec`].
pub fn default_grid(axis: Axis, base: &RunSpec) -> Result<Vec<String>, CliError> {
    let v: Vec<String> = match axis {
        Axis::Sparsity => (1..=4).map(|l| l.to_string()).collect(),
        Axis::Demand => ["0.5", "0.75", "1", "1.25", "1.5"].iter().map(|s| s.to_string()).collect(),
        Axis::ServiceTime => (1..=6).map(|s| s.to_string()).collect(),
        Axis::Severity => ["normal", "moderate", "adverse"].iter().map(|s| s.to_string()).collect(),
        Axis::ShiftFee => ["0", "10", "100", "1000", "10000", "100000"].iter().map(|s| s.to_string()).collect(),
        Axis::Availability => {
            // Remove the largest type one bus at a time, then the next one.
            let inst = base.build_instance()?;
            let mut caps: Vec<u32> = inst.types.iter().map(|t| t.available_count).collect();
            let mut out = vec![caps.clone()];
            for k in (1..caps.len()).rev() {
                while caps[k] > 0 {
                    caps[k] -= 1;
                    out.push(caps.clone());
                }
            }
            out.iter().map(|c| c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("/")).collect()
        }
    };
    Ok(v)
}

/// The base spec with one axis set to `value`.
pub fn point_spec(base: &RunSpec, axis: Axis, value: &str) -> Result<RunSpec, CliError> {
    let bad = || CliError::Usage(format!("bad {axis:?} grid value `{value}`"));
    let mut s = base.clone();
    match axis {
        Axis::Sparsity => s.sparsity = Some(value.parse().map_err(|_| bad())?),
        Axis::Demand => s.demand_scale = value.parse().map_err(|_| bad())?,
        Axis::ServiceTime => s.service_time = Some(value.parse().map_err(|_| bad())?),
        Axis::Severity => s.severity = value.parse().map_err(|_| bad())?,
        Axis::ShiftFee => s.shift_fee = Some(value.parse().map_err(|_| bad())?),
        Axis::Availability => s.availability = Some(value.split('/').map(|x| x.parse()).collect::<Result<_, _>>().map_err(|_| bad())?),
    }
    s.check()?;
    Ok(s)
}

/// Solves every grid point; rows come back in grid order.
pub fn run_sweep(axis: Axis, base: &RunSpec, grid: &[String], deterministic: bool) -> Result<Vec<SweepRow>, CliError> {
    let specs: Vec<RunSpec> = grid.iter().map(|v| point_spec(base, axis, v)).collect::<Result<_, _>>()?;
    let run = |(n, spec): (usize, &RunSpec)| -> SweepRow {
        let mut row = SweepRow {
            index: n,
            axis,
            value: grid[n].clone(),
            instance: String::new(),
            method: spec.method.name().into(),
            status: "ok".into(),
            objective: None,
            cost_delta_pct: None,
            fleet: vec![],
            unmet_kwh: None,
            shifted_pct: None,
            gap: None,
            runtime_s: None,
            error: String::new(),
        };
        let out = spec.build_instance().and_then(|inst| solve_instance(&inst, spec, deterministic).map(|d| (inst, d)));
        match out {
            Ok((inst, doc)) => {
                let total = inst.demands.grand_total();
                row.instance = doc.instance.clone();
                row.objective = Some(doc.objective.round() as i64);
                row.fleet = doc.fleet.clone();
                row.unmet_kwh = Some(doc.unmet.iter().sum());
                row.shifted_pct = Some(if total > 0.0 { 100.0 * doc.shifted_total() / total } else { 0.0 });
                row.gap = Some(doc.gap);
                row.runtime_s = doc.runtime;
            }
            Err(e) => {
                row.status = "error".into();
                row.error = e.to_string();
            }
        }
        row
    };
    let mut rows: Vec<SweepRow> = if deterministic {
        specs.iter().enumerate().map(run).collect()
    } else {
        specs.par_iter().enumerate().map(run).collect()
    };
    if let Some(b) = rows.first().and_then(|r| r.objective) {
        for r in &mut rows {
            if let Some(o) = r.objective {
                r.cost_delta_pct = Some(if b != 0 { 100.0 * (o - b) as f64 / b as f64 } else { 0.0 });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Parser)]
#[command(name = "esbilr", version, about = "Electric school bus routing for isolated load restoration")]
pub struct Cli {
    /// Single-threaded run with runtimes left out of every document.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Log verbosity: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance.
    Solve {
        #[command(flatten)]
        spec: RunSpec,
        /// Summary format on stdout.
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Solve a grid of variations of one instance and emit CSV.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[command(flatten)]
        spec: RunSpec,
        /// Grid values, overriding the axis default. Availability points are a/b/c.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<String>>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check a solution document against its instance.
    Validate {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        instance: PathBuf,
    },
    /// Per-type effective capacity and capacity cost.
    Metrics {
        /// Instance file; the case network when absent.
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Average travel time in hours applied to every type instead of the instance mean.
        #[arg(long)]
        t_avg: Option<f64>,
        /// Cost mix over types for the utilization ratio.
        #[arg(long, value_delimiter = ',')]
        mix: Option<Vec<f64>>,
        /// Demand increment in kWh for the utilization ratio.
        #[arg(long)]
        increment: Option<f64>,
        /// Solution document for the plan-level utilization.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Write a generated instance to a file.
    Gen {
        /// Generator size as shelters-stations-slots, or `case` for the full case network.
        #[arg(long, default_value = "1-1-8")]
        desk: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20.0)]
        mean_demand: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 1, 1])]
        buses: Vec<u32>,
        #[arg(long, value_enum, default_value = "uniform")]
        shape: Shape,
        #[arg(long, default_value_t = 10_000.0)]
        penalty: f64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn read_solution(path: &Path) -> Result<SolutionDoc, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("cannot parse {}: {e}", path.display())))
}

/// Serialized solution document, as written to disk.
pub fn solution_text(doc: &SolutionDoc) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("solution documents serialize");
    s.push('\n');
    s
}

pub fn cmd_solve(spec: &RunSpec, format: ReportFormat, deterministic: bool, out: &mut String) -> Result<i32, CliError> {
    let inst = spec.build_instance()?;
    let doc = solve_instance(&inst, spec, deterministic)?;
    if let Some(p) = &spec.output {
        write_file(p, &solution_text(&doc))?;
    }
    out.push_str(&report(&doc, format));
    let rep = validate_solution(&inst, &doc);
    if !rep.is_clean() {
        return Err(CliError::Internal(format!("solver produced an invalid solution:\n{}", rep.render())));
    }
    Ok(EXIT_OK)
}

pub fn cmd_sweep(axis: Axis, spec: &RunSpec, grid: Option<&[String]>, csv: Option<&Path>, deterministic: bool, out: &mut String) -> Result<i32, CliError> {
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => default_grid(axis, spec)?,
    };
    let rows = run_sweep(axis, spec, &grid, deterministic)?;
    let text = sweep_csv(&rows);
    match csv {
        Some(p) => write_file(p, &text)?,
        None => out.push_str(&text),
    }
    Ok(EXIT_OK)
}

pub fn cmd_validate(solution: &Path, instance: &Path, out: &mut String) -> Result<i32, CliError> {
    let inst = load_instance(instance)?;
    let doc = read_solution(solution)?;
    let rep = validate_solution(&inst, &doc);
    out.push_str(&rep.render());
    Ok(if rep.is_clean() { EXIT_OK } else { EXIT_VIOLATION })
}

pub fn cmd_metrics(
    instance: Option<&Path>,
    t_avg: Option<f64>,
    mix: Option<&[f64]>,
    increment: Option<f64>,
    solution: Option<&Path>,
    out: &mut String,
) -> Result<i32, CliError> {
    let inst = match instance {
        Some(p) => load_instance(p)?,
        None => Instance::case_study(),
    };
    let _ = writeln!(out, "type,t_avg_h,effective_capacity_kwh,capacity_cost_per_kwh");
    let mut table = type_table(&inst);
    if let Some(t) = t_avg {
        for (row, ty) in table.iter_mut().zip(&inst.types) {
            row.t_avg_hours = t;
            row.effective_capacity = crate::metrics::effective_usable_capacity(ty, t).ok();
            row.capacity_cost = crate::metrics::capacity_cost(ty, t).ok();
        }
    }
    let num = |v: Option<f64>, p: usize| v.map_or("unusable".to_string(), |x| format!("{x:.p$}"));
    for r in &table {
        let _ = writeln!(out, "{},{:.3},{},{}", r.id, r.t_avg_hours, num(r.effective_capacity, 3), num(r.capacity_cost, 2));
    }
    match (mix, increment) {
        (Some(m), Some(inc)) => {
            let t = t_avg.ok_or_else(|| CliError::Usage("--mix needs --t-avg".into()))?;
            let (zbar, w) = capacity_utilization(&inst.types, &MetricInputs { t_avg: t, cost_mix: m.to_vec(), demand_increment: inc })
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let _ = writeln!(out, "mix_effective_capacity_kwh,{zbar:.3}");
            let _ = writeln!(out, "capacity_utilization,{w:.3}");
        }
        (None, None) => {}
        _ => return Err(CliError::Usage("--mix and --increment go together".into())),
    }
    if let Some(p) = solution {
        let doc = read_solution(p)?;
        let routes = doc
            .routes
            .iter()
            .map(|e| e.route.to_route(&inst).map(|r| (r, e.count)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::Usage)?;
        let plan = Plan::evaluate(&inst, routes, doc.shifted.is_some());
        match plan_utilization(&inst, &plan) {
            Ok(w) => {
                let _ = writeln!(out, "plan_utilization,{w:.3}");
            }
            Err(e) => {
                let _ = writeln!(out, "plan_utilization,undefined ({e})");
            }
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_gen(desk: &str, seed: u64, mean_demand: f64, buses: &[u32], shape: Shape, penalty: f64, output: &Path) -> Result<i32, CliError> {
    let inst = if desk == "case" {
        Instance::case_study()
    } else {
        let (shelters, stations, slots) = parse_desk(desk)?;
        if buses.len() != 3 {
            return Err(CliError::Usage("--buses needs one count per type".into()));
        }
        desk_instance(&DeskSpec {
            shelters,
            stations,
            slots,
            buses: [buses[0], buses[1], buses[2]],
            seed,
            mean_demand,
            demand_slots: None,
            penalty,
            shape: shape.into(),
        })
    };
    save_instance(&inst, output).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(EXIT_OK)
}

/// Sizes the worker pool from the environment, or to one thread.
pub fn init_threads(deterministic: bool) -> Result<(), CliError> {
    let n = if deterministic {
        1
    } else {
        match std::env::var(THREADS_ENV) {
            Ok(v) => v.parse::<usize>().map_err(|_| CliError::Usage(format!("{THREADS_ENV}=`{v}` is not a thread count")))?,
            Err(_) => 0,
        }
    };
    // A second initialisation in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs a parsed command line, writing stdout text to `out`.
pub fn run(cli: Cli, out: &mut String) -> Result<i32, CliError> {
    init_threads(cli.deterministic)?;
    let det = cli.deterministic;
    match cli.command {
        Command::Solve { spec, format } => cmd_solve(&spec, format.into(), det, out),
        Command::Sweep { axis, spec, grid, csv } => cmd_sweep(axis, &spec, grid.as_deref(), csv.as_deref(), det, out),
        Command::Validate { solution, instance } => cmd_validate(&solution, &instance, out),
        Command::Metrics { instance, t_avg, mix, increment, solution } => {
            cmd_metrics(instance.as_deref(), t_avg, mix.as_deref(), increment, solution.as_deref(), out)
        }
        Command::Gen { desk, seed, mean_demand, buses, shape, penalty, output } => {
            cmd_gen(&desk, seed, mean_demand, &buses, shape, penalty, &output)
        }
    }
}

/// Parses `args` and runs them; returns the exit code and stdout text.
pub fn main_with_args<I, T>(args: I) -> (i32, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            return (code, e.to_string());
        }
    };
    let mut out = String::new();
    match run(cli, &mut out) {
        Ok(code) => (code, out),
        Err(e) => {
            out.push_str(&format!("error: {e}\n"));
            (e.exit_code(), out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_size_parses() {
        assert_eq!(parse_desk("2-1-12").unwrap(), (2, 1, 12));
        assert!(parse_desk("2-1").is_err());
        assert!(parse_desk("0-1-8").is_err());
    }

    #[test]
    fn out_of_range_scale_is_usage_error() {
        let s = RunSpec { demand_scale: 2.0, ..Default::default() };
        assert_eq!(s.check().unwrap_err().exit_code(), EXIT_USAGE);
    }

    #[test]
    fn availability_ladder_drops_largest_type_first() {
        let base = RunSpec { buses: vec![1, 2, 2], ..Default::default() };
        let g = default_grid(Axis::Availability, &base).unwrap();
        assert_eq!(g, vec!["1/2/2", "1/2/1", "1/2/0", "1/1/0", "1/0/0"]);
    }

    #[test]
    fn unknown_flag_exits_with_usage() {
        let (code, _) = main_with_args(["esbilr", "solve", "--no-such-flag"]);
        assert_eq!(code, EXIT_USAGE);
    }
}
