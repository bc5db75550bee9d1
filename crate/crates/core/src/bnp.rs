//! Branch-and-price: best-first tree search with column generation at every
//! node and periodic integer-master incumbents.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compact_model::MilpEngine;
use crate::instance::Instance;
use crate::master::lp::relative_gap;
use crate::master::search::SearchConfig;
use crate::master::{
    initial_pool, integral_plan, pick_branch, solve_milp_master, solve_rlmp, BranchBoundSet, ColumnPool, MasterOptions, MasterSolution, Plan,
};
use crate::master::DualPrices;
use crate::pricing::{price_type, subproblem_key, PricingConfig, PricingEngine, TypePricing, RC_TOL};
use rayon::prelude::*;
use crate::route::Route;

#[derive(Debug, Clone, Copy)]
pub struct BnpConfig {
    pub pricing: PricingConfig,
    pub use_milp_master: bool,
    pub milp_master_first_at: u64,
    pub milp_master_every: u64,
    /// `(fraction, nodes)`: stop when the global bound improves by less than
    /// `fraction` over `nodes` successive nodes.
    pub heuristic_stall: Option<(f64, usize)>,
    pub gap_target: f64,
    pub time_cap: Option<f64>,
    pub node_cap: u64,
    pub max_cg_iterations: usize,
    /// Exact engine only: price with a slack derived from the incumbent and
    /// prune nodes whose bound `z - slack * fleet` reaches the cutoff.
    pub lagrangian_prune: bool,
    pub shift: bool,
    pub milp_search: SearchConfig,
}

impl BnpConfig {
    pub fn exact() -> BnpConfig {
        BnpConfig {
            pricing: PricingConfig {
                engine: PricingEngine::Exact,
                dp_first: true,
                cutoff: true,
                max_columns: 3,
                milp: MilpEngine::Search,
                ..Default::default()
            },
            use_milp_master: true,
            milp_master_first_at: 10,
            milp_master_every: 20,
            heuristic_stall: None,
            gap_target: 0.01,
            time_cap: None,
            node_cap: 100_000,
            max_cg_iterations: 1000,
            lagrangian_prune: true,
            shift: false,
            milp_search: SearchConfig { gap: 0.0, node_cap: 20_000, int_tol: 1e-6, cutoff: f64::INFINITY },
        }
    }

    pub fn dp() -> BnpConfig {
        BnpConfig {
            pricing: PricingConfig { engine: PricingEngine::Dp, dp_first: false, ..BnpConfig::exact().pricing },
            heuristic_stall: Some((0.05, 5)),
            ..BnpConfig::exact()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Open,
    Pruned,
    Integral,
    Infeasible,
    Branched,
}

#[derive(Debug, Clone)]
pub struct BnpNode {
    pub id: u64,
    pub parent: Option<u64>,
    pub depth: usize,
    pub branches: BranchBoundSet,
    /// Parent's LP bound; the root starts unbounded.
    pub parent_bound: f64,
    pub lp_bound: f64,
    pub status: NodeStatus,
    pub branch_label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeTrace {
    pub node: u64,
    pub parent: Option<u64>,
    pub depth: usize,
    pub branch: String,
    pub lp_bound: f64,
    pub incumbent: f64,
    pub global_bound: f64,
    pub columns_added: usize,
    pub cg_iterations: usize,
    pub status: NodeStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TreeExhausted,
    GapReached,
    Stalled,
    TimeCap,
    NodeCap,
}

#[derive(Debug, Clone)]
pub struct BnpResult {
    pub plan: Plan,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub nodes: u64,
    pub columns: usize,
    pub columns_generated: usize,
    pub cg_iterations: usize,
    pub trace: Vec<NodeTrace>,
    pub stop: StopReason,
    pub runtime: f64,
    /// Largest |primal - dual| seen over all master solves.
    pub worst_duality_gap: f64,
    pub pool: ColumnPool,
}

struct CgOutcome {
    sol: Option<MasterSolution>,
    /// Valid lower bound on the node; above the RLMP value only when
    /// pricing stopped on the Lagrangian test.
    bound: f64,
    /// True when the node was closed by the Lagrangian test rather than by
    /// solving its LP.
    lagrangian: bool,
    added: usize,
    iterations: usize,
}

struct Search<'a> {
    inst: &'a Instance,
    cfg: BnpConfig,
    opt: MasterOptions,
    pool: ColumnPool,
    incumbent: Plan,
    generated: usize,
    cg_iterations: usize,
    worst_duality_gap: f64,
    incumbents: Vec<f64>,
    /// Exact subproblems already proven to have no negative column.
    certified: HashSet<String>,
}

impl Search<'_> {
    fn price(&mut self, duals: &DualPrices, branches: &BranchBoundSet, slack: f64) -> Vec<TypePricing> {
        let inst = self.inst;
        let cfg = PricingConfig { slack, ..self.cfg.pricing };
        let exact = cfg.engine == PricingEngine::Exact;
        duals.check_shape(inst);
        let todo: Vec<(usize, Option<String>)> = (0..inst.n_types())
            .filter(|&k| inst.types[k].available_count > 0)
            .map(|k| (k, exact.then(|| subproblem_key(k, duals, branches))))
            .filter(|(_, key)| key.as_ref().map_or(true, |key| !self.certified.contains(key)))
            .collect();
        let run = |(k, _): &(usize, Option<String>)| price_type(inst, duals, *k, branches, &cfg);
        let out: Vec<TypePricing> = if cfg.parallel { todo.par_iter().map(run).collect() } else { todo.iter().map(run).collect() };
        for ((_, key), p) in todo.into_iter().zip(&out) {
            if let Some(key) = key {
                if p.proven && p.columns.is_empty() && slack <= RC_TOL {
                    self.certified.insert(key);
                }
            }
        }
        out
    }

    fn offer(&mut self, plan: Plan) {
        if plan.objective < self.incumbent.objective - 1e-9 * self.incumbent.objective.abs().max(1.0) {
            log::debug!("incumbent {:.3} -> {:.3}", self.incumbent.objective, plan.objective);
            self.incumbent = plan;
            self.incumbents.push(self.incumbent.objective);
        }
    }

    fn cutoff(&self) -> f64 {
        let inc = self.incumbent.objective;
        inc - (self.cfg.gap_target * inc.abs()).max(1e-9 * inc.abs().max(1.0))
    }

    /// `parent_bound` must be a proven bound on the node LP.
    fn column_generation(&mut self, branches: &BranchBoundSet, parent_bound: f64) -> CgOutcome {
        let mut added = 0;
        let mut history: Vec<f64> = vec![];
        let mut perturb_round = 0;
        let fleet: f64 = self.inst.types.iter().map(|t| t.available_count as f64).sum();
        for it in 0..self.cfg.max_cg_iterations {
            let sol = match solve_rlmp(&self.pool, self.inst, branches, &self.opt) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("master solve failed: {e}");
                    return CgOutcome { sol: None, bound: f64::INFINITY, lagrangian: false, added, iterations: it };
                }
            };
            self.cg_iterations += 1;
            self.worst_duality_gap = self.worst_duality_gap.max(sol.duality_gap.abs());
            history.push(sol.objective);
            // The node LP lies between the parent bound and the RLMP value, so
            // when those meet the RLMP is already optimal.
            if self.cfg.pricing.engine == PricingEngine::Exact
                && sol.is_feasible()
                && sol.objective <= parent_bound + 1e-9 * parent_bound.abs().max(1.0)
            {
                let bound = sol.objective;
                return CgOutcome { sol: Some(sol), bound, lagrangian: false, added, iterations: it + 1 };
            }
            let mut duals = sol.duals.clone();
            let n = history.len();
            let perturbed = n > 10 && history[n - 1] >= history[n - 11] - 1e-9 * history[n - 11].abs().max(1.0);
            if perturbed {
                perturb_round += 1;
                duals.perturb(1e-9, perturb_round);
            }
            // With at most H_k columns of type k in any solution, pricing
            // nothing below -slack bounds the node LP from below by
            // z - slack * sum H_k; a slack that lifts this bound to the
            // cutoff is enough to prune.
            let room = sol.objective - self.cutoff();
            let slack = if self.cfg.lagrangian_prune && self.cfg.pricing.engine == PricingEngine::Exact && !perturbed && room > 0.0 && fleet > 0.0 {
                (room * (1.0 - 1e-9) / fleet).max(RC_TOL)
            } else {
                RC_TOL
            };
            let priced = self.price(&duals, branches, slack);
            let mut fresh = 0;
            for tp in priced {
                for (r, rc) in tp.columns {
                    if rc < -RC_TOL && self.pool.add(self.inst, r).is_some() {
                        fresh += 1;
                    }
                }
            }
            self.generated += fresh;
            added += fresh;
            if fresh == 0 {
                let lagrangian = slack > RC_TOL;
                let bound = if lagrangian { sol.objective - slack * fleet } else { sol.objective };
                return CgOutcome { sol: Some(sol), bound, lagrangian, added, iterations: it + 1 };
            }
        }
        log::warn!("column generation hit the iteration cap");
        let sol = solve_rlmp(&self.pool, self.inst, branches, &self.opt).ok();
        let bound = sol.as_ref().map_or(f64::INFINITY, |s| s.objective);
        CgOutcome { sol, bound, lagrangian: false, added, iterations: self.cfg.max_cg_iterations }
    }

    fn milp_master(&mut self) {
        let m = solve_milp_master(&self.pool, self.inst, &self.opt, &self.cfg.milp_search);
        if let Some(plan) = m.plan {
            self.offer(plan);
        }
    }
}

/// Runs branch-and-price on `inst`.
pub fn solve_bnp(inst: &Instance, cfg: &BnpConfig) -> BnpResult {
    let start = Instant::now();
    let opt = MasterOptions::new(inst, cfg.shift);
    let fallback = Plan::evaluate(inst, vec![], cfg.shift);
    let mut s = Search {
        inst,
        cfg: *cfg,
        opt,
        pool: initial_pool(inst),
        incumbents: vec![fallback.objective],
        incumbent: fallback,
        generated: 0,
        cg_iterations: 0,
        worst_duality_gap: 0.0,
        certified: HashSet::new(),
    };
    let mut open: BTreeSet<(OrdF64, u64)> = BTreeSet::new();
    let mut nodes: Vec<BnpNode> = vec![BnpNode {
        id: 0,
        parent: None,
        depth: 0,
        branches: BranchBoundSet::default(),
        parent_bound: f64::NEG_INFINITY,
        lp_bound: f64::NEG_INFINITY,
        status: NodeStatus::Open,
        branch_label: "root".into(),
    }];
    open.insert((OrdF64(f64::NEG_INFINITY), 0));
    let mut trace = vec![];
    let mut explored = 0u64;
    let mut bounds_seen: Vec<f64> = vec![];
    let mut stop = StopReason::TreeExhausted;

    let global_bound = |open: &BTreeSet<(OrdF64, u64)>, inc: f64| open.first().map_or(inc, |b| b.0 .0.min(inc));

    while let Some(&(OrdF64(pb), id)) = open.first() {
        if cfg.time_cap.is_some_and(|cap| start.elapsed().as_secs_f64() > cap) {
            stop = StopReason::TimeCap;
            break;
        }
        if explored >= cfg.node_cap {
            stop = StopReason::NodeCap;
            break;
        }
        let gb = global_bound(&open, s.incumbent.objective);
        if explored > 0 && relative_gap(s.incumbent.objective, gb) <= cfg.gap_target {
            stop = StopReason::GapReached;
            break;
        }
        open.pop_first();
        let idx = id as usize;
        if pb >= s.cutoff() {
            nodes[idx].status = NodeStatus::Pruned;
            continue;
        }
        explored += 1;
        let branches = nodes[idx].branches.clone();
        let cg = s.column_generation(&branches, pb);
        let mut status;
        let mut lp_bound = f64::INFINITY;
        match cg.sol {
            None => status = NodeStatus::Infeasible,
            Some(_) if cg.lagrangian => {
                lp_bound = cg.bound.max(pb);
                status = NodeStatus::Pruned;
            }
            Some(sol) if !sol.is_feasible() => {
                lp_bound = sol.objective;
                status = NodeStatus::Infeasible;
            }
            Some(sol) => {
                lp_bound = sol.objective.max(pb);
                status = NodeStatus::Pruned;
                if lp_bound < s.cutoff() {
                    match pick_branch(&sol, &s.pool) {
                        None => {
                            if let Some(plan) = integral_plan(&sol, &s.pool, inst, cfg.shift) {
                                s.offer(plan);
                            }
                            status = NodeStatus::Integral;
                        }
                        Some(b) => {
                            status = NodeStatus::Branched;
                            for (bb, tag) in [(b.down, "<="), (b.up, ">=")] {
                                let child = nodes[idx].branches.with(bb.clone());
                                if !child.is_consistent() {
                                    continue;
                                }
                                let cid = nodes.len() as u64;
                                nodes.push(BnpNode {
                                    id: cid,
                                    parent: Some(id),
                                    depth: nodes[idx].depth + 1,
                                    branches: child,
                                    parent_bound: lp_bound,
                                    lp_bound: f64::NEG_INFINITY,
                                    status: NodeStatus::Open,
                                    branch_label: format!("{:?} {tag} {}", bb.agg, bb.rhs),
                                });
                                open.insert((OrdF64(lp_bound), cid));
                            }
                        }
                    }
                }
            }
        }
        nodes[idx].lp_bound = lp_bound;
        nodes[idx].status = status;
        if cfg.use_milp_master && (explored == cfg.milp_master_first_at || (explored > cfg.milp_master_first_at && (explored - cfg.milp_master_first_at) % cfg.milp_master_every == 0)) {
            s.milp_master();
        }
        let gb = global_bound(&open, s.incumbent.objective);
        bounds_seen.push(gb);
        trace.push(NodeTrace {
            node: id,
            parent: nodes[idx].parent,
            depth: nodes[idx].depth,
            branch: nodes[idx].branch_label.clone(),
            lp_bound,
            incumbent: s.incumbent.objective,
            global_bound: gb,
            columns_added: cg.added,
            cg_iterations: cg.iterations,
            status,
        });
        if let Some((frac, n)) = cfg.heuristic_stall {
            if bounds_seen.len() > n {
                let old = bounds_seen[bounds_seen.len() - 1 - n];
                if old.is_finite() && gb - old < frac * old.abs() && !open.is_empty() {
                    stop = StopReason::Stalled;
                    break;
                }
            }
        }
    }
    if stop != StopReason::TreeExhausted && stop != StopReason::GapReached && cfg.use_milp_master {
        s.milp_master();
    }
    let bound = if open.is_empty() { s.incumbent.objective } else { global_bound(&open, s.incumbent.objective) };
    let bound = bound.min(s.incumbent.objective);
    let objective = s.incumbent.objective;
    log::info!("stopped ({stop:?}) after {explored} nodes: objective {objective:.3}, bound {bound:.3}");
    BnpResult {
        plan: s.incumbent,
        objective,
        bound,
        gap: relative_gap(objective, bound),
        nodes: explored,
        columns: s.pool.len(),
        columns_generated: s.generated,
        cg_iterations: s.cg_iterations,
        trace,
        stop,
        runtime: start.elapsed().as_secs_f64(),
        worst_duality_gap: s.worst_duality_gap,
        pool: s.pool,
    }
}

/// Totally ordered float for the node queue.
#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

/// One route of a solution document with its multiplicity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RouteEntry {
    pub count: u32,
    #[serde(flatten)]
    pub route: RouteDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RouteDoc {
    pub esb_type: u32,
    pub schedule: String,
    pub actions: Vec<crate::route::RouteAction>,
    pub discharge: Vec<(crate::instance::Node, usize, f64)>,
    pub soc_trace: Vec<f64>,
    pub cost: f64,
}

impl RouteDoc {
    pub fn from_route(inst: &Instance, r: &Route) -> RouteDoc {
        RouteDoc {
            esb_type: inst.types[r.esb_type].id,
            schedule: r.routing_key().to_string(),
            actions: r.actions.clone(),
            discharge: r.discharge.iter().map(|&(i, t, g)| (crate::instance::Node::Shelter(i), t, g)).collect(),
            soc_trace: r.soc_trace.clone(),
            cost: r.cost,
        }
    }

    /// Rebuilds the route exactly as stored, without recomputing SOC or cost.
    pub fn to_route(&self, inst: &Instance) -> Result<Route, String> {
        let k = inst.type_index(self.esb_type).ok_or_else(|| format!("unknown ESB type {}", self.esb_type))?;
        let mut discharge = vec![];
        for &(n, t, g) in &self.discharge {
            match n {
                crate::instance::Node::Shelter(i) => discharge.push((i, t, g)),
                other => return Err(format!("discharge at non-shelter node {other}")),
            }
        }
        Ok(Route { esb_type: k, actions: self.actions.clone(), discharge, soc_trace: self.soc_trace.clone(), cost: self.cost })
    }
}

/// Structured solution written by every solve method.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolutionDoc {
    pub instance: String,
    pub method: String,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub fleet: Vec<u32>,
    pub investment: f64,
    pub transport: f64,
    pub penalty: f64,
    pub shift_cost: f64,
    pub unmet: Vec<f64>,
    pub shifted: Option<Vec<Vec<f64>>>,
    pub nodes: u64,
    pub columns: usize,
    pub stop: Option<StopReason>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub runtime: Option<f64>,
    pub routes: Vec<RouteEntry>,
}

impl SolutionDoc {
    pub fn from_plan(inst: &Instance, method: &str, plan: &Plan, bound: f64, nodes: u64, columns: usize) -> SolutionDoc {
        SolutionDoc {
            instance: inst.name.clone(),
            method: method.to_string(),
            objective: plan.objective,
            bound,
            gap: relative_gap(plan.objective, bound),
            fleet: plan.fleet(inst.n_types()),
            investment: plan.investment,
            transport: plan.transport,
            penalty: plan.penalty,
            shift_cost: plan.shift_cost,
            unmet: plan.unmet.clone(),
            shifted: plan.shifted.clone(),
            nodes,
            columns,
            stop: None,
            runtime: None,
            routes: plan.routes.iter().map(|(r, n)| RouteEntry { count: *n, route: RouteDoc::from_route(inst, r) }).collect(),
        }
    }

    pub fn from_bnp(inst: &Instance, method: &str, res: &BnpResult) -> SolutionDoc {
        let mut d = SolutionDoc::from_plan(inst, method, &res.plan, res.bound, res.nodes, res.columns);
        d.gap = res.gap;
        d.stop = Some(res.stop);
        d.runtime = Some(res.runtime);
        d
    }

    pub fn shifted_total(&self) -> f64 {
        self.shifted.as_ref().map_or(0.0, |s| s.iter().flatten().sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

pub const CSV_HEADER: &str = "instance,method,objective,bound,gap,fleet_1,fleet_2,fleet_3,investment,transport,penalty,shift_cost,unmet_kwh,shifted_kwh,nodes,columns,runtime_s";

fn money(v: f64) -> i64 {
    v.round() as i64
}

/// Renders a solution document.
pub fn report(doc: &SolutionDoc, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(doc).expect("solution documents serialize"),
        ReportFormat::Csv => {
            let fleet = |k: usize| doc.fleet.get(k).copied().unwrap_or(0);
            format!(
                "{CSV_HEADER}\n{},{},{},{},{:.6},{},{},{},{},{},{},{},{:.3},{:.3},{},{},{}\n",
                doc.instance,
                doc.method,
                money(doc.objective),
                money(doc.bound),
                doc.gap,
                fleet(0),
                fleet(1),
                fleet(2),
                money(doc.investment),
                money(doc.transport),
                money(doc.penalty),
                money(doc.shift_cost),
                doc.unmet.iter().sum::<f64>(),
                doc.shifted_total(),
                doc.nodes,
                doc.columns,
                doc.runtime.map_or(String::new(), |r| format!("{r:.3}")),
            )
        }
        ReportFormat::Text => {
            let mut s = String::new();
            let fleet: Vec<String> = doc.fleet.iter().map(|f| f.to_string()).collect();
            let _ = writeln!(s, "fleet: {}, cost {}", fleet.join("/"), money(doc.objective));
            let _ = writeln!(
                s,
                "investment {} transport {} penalty {} shift {}",
                money(doc.investment),
                money(doc.transport),
                money(doc.penalty),
                money(doc.shift_cost)
            );
            let _ = writeln!(s, "bound {} gap {:.4}% nodes {} columns {}", money(doc.bound), 100.0 * doc.gap, doc.nodes, doc.columns);
            for e in &doc.routes {
                let g: f64 = e.route.discharge.iter().map(|d| d.2).sum();
                let _ = writeln!(s, "  {} x{} delivers {:.3} kWh", e.route.schedule, e.count, g);
            }
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{desk_instance, DeskSpec};

    #[test]
    fn zero_demand_needs_no_buses() {
        let mut inst = desk_instance(&DeskSpec::default());
        inst.demands.demand = vec![vec![0.0; inst.slots()]];
        let r = solve_bnp(&inst, &BnpConfig::exact());
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.nodes, 1);
        assert_eq!(r.columns_generated, 0);
        let doc = SolutionDoc::from_bnp(&inst, "bnp-exact", &r);
        assert!(report(&doc, ReportFormat::Text).starts_with("fleet: 0/0/0, cost 0\n"));
    }

    #[test]
    fn cost_split_adds_up() {
        let inst = desk_instance(&DeskSpec { mean_demand: 60.0, ..Default::default() });
        let r = solve_bnp(&inst, &BnpConfig { gap_target: 0.0, ..BnpConfig::exact() });
        let p = &r.plan;
        assert_eq!(p.investment + p.transport + p.penalty + p.shift_cost, p.objective);
        assert!(r.bound <= r.objective + 1e-6);
        let csv = report(&SolutionDoc::from_bnp(&inst, "bnp-exact", &r), ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    }
}
