//! Restricted master problem over a pool of routes, its integer variant and
//! the branching rules that act on it.

pub mod lp;
pub mod search;

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::instance::{Instance, Node};
use crate::route::{timed_actions, Coverage, Route, RouteKey, RoutingKey};
use lp::{dual_objective, lp_solve, LpProblem, LpStatus, MilpStatus, Sense};
use search::{branch_and_bound, SearchConfig};

const FRAC_TOL: f64 = 1e-6;

#[derive(Debug, Default, Clone)]
pub struct ColumnPool {
    pub routes: Vec<Route>,
    pub coverage: Vec<Coverage>,
    /// Pool indices per ESB type.
    pub by_type: Vec<Vec<usize>>,
    index: HashMap<RouteKey, usize>,
}

impl ColumnPool {
    pub fn new(n_types: usize) -> ColumnPool {
        ColumnPool { by_type: vec![vec![]; n_types], ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    /// Adds `r` unless a structurally equal route is pooled. Returns the new index.
    pub fn add(&mut self, inst: &Instance, r: Route) -> Option<usize> {
        debug_assert!(r.validate(inst).is_empty(), "invalid column: {:?}", r.validate(inst));
        let key = r.key();
        if self.index.contains_key(&key) {
            return None;
        }
        let id = self.routes.len();
        self.index.insert(key, id);
        self.by_type[r.esb_type].push(id);
        self.coverage.push(r.coverage(inst));
        self.routes.push(r);
        Some(id)
    }

    pub fn contains(&self, r: &Route) -> bool {
        self.index.contains_key(&r.key())
    }
}

/// Quantities the master can branch on, in branching priority order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aggregate {
    /// Buses of a type.
    Fleet(usize),
    /// Serving slots at a shelter.
    Visits(usize),
    /// Buses serving a shelter in a slot.
    Slot(usize, usize),
    /// `(type, shelter)`.
    VisitsByType(usize, usize),
    /// `(type, shelter, slot)`.
    SlotByType(usize, usize, usize),
    /// Shelter-station trips `(shelter, station)`.
    Trips(usize, usize),
    /// `(type, shelter, station)`.
    TripsByType(usize, usize, usize),
    /// Depot departures to plus returns from a shelter.
    Ends(usize),
    /// `(type, shelter)`.
    EndsByType(usize, usize),
    /// Columns sharing one routing.
    Routing(RoutingKey),
}

impl Aggregate {
    pub fn rank(&self) -> u8 {
        match self {
            Aggregate::Fleet(_) => 0,
            Aggregate::Visits(_) | Aggregate::Slot(..) | Aggregate::VisitsByType(..) | Aggregate::SlotByType(..) => 1,
            Aggregate::Trips(..) | Aggregate::TripsByType(..) | Aggregate::Ends(_) | Aggregate::EndsByType(..) => 2,
            Aggregate::Routing(_) => 3,
        }
    }

    fn family(&self) -> u8 {
        match self {
            Aggregate::Fleet(_) => 0,
            Aggregate::Visits(_) => 1,
            Aggregate::Slot(..) => 2,
            Aggregate::VisitsByType(..) => 3,
            Aggregate::SlotByType(..) => 4,
            Aggregate::Trips(..) => 5,
            Aggregate::TripsByType(..) => 6,
            Aggregate::Ends(_) => 7,
            Aggregate::EndsByType(..) => 8,
            Aggregate::Routing(_) => 9,
        }
    }

    /// Coefficient of column `r` in this aggregate.
    pub fn coeff(&self, r: &Route, c: &Coverage) -> f64 {
        let k = r.esb_type;
        let n = match *self {
            Aggregate::Fleet(q) => (q == k) as usize,
            Aggregate::Visits(i) => c.serve.iter().filter(|s| s.0 == i).count(),
            Aggregate::Slot(i, t) => c.serve.contains(&(i, t)) as usize,
            Aggregate::VisitsByType(q, i) if q == k => c.serve.iter().filter(|s| s.0 == i).count(),
            Aggregate::SlotByType(q, i, t) if q == k => c.serve.contains(&(i, t)) as usize,
            Aggregate::Trips(i, j) => c.arcs.get(&(i, j)).copied().unwrap_or(0) as usize,
            Aggregate::TripsByType(q, i, j) if q == k => c.arcs.get(&(i, j)).copied().unwrap_or(0) as usize,
            Aggregate::Ends(i) => c.ends.get(&i).copied().unwrap_or(0) as usize,
            Aggregate::EndsByType(q, i) if q == k => c.ends.get(&i).copied().unwrap_or(0) as usize,
            Aggregate::Routing(ref key) => (r.esb_type == key.esb_type && r.actions == key.actions) as usize,
            _ => 0,
        };
        n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchBound {
    pub agg: Aggregate,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BranchBoundSet {
    pub bounds: Vec<BranchBound>,
}

impl BranchBoundSet {
    pub fn with(&self, b: BranchBound) -> BranchBoundSet {
        let mut out = self.clone();
        out.bounds.push(b);
        out
    }

    /// False when some aggregate has a lower bound above its upper bound.
    pub fn is_consistent(&self) -> bool {
        let mut lo: HashMap<&Aggregate, f64> = HashMap::new();
        let mut hi: HashMap<&Aggregate, f64> = HashMap::new();
        for b in &self.bounds {
            match b.sense {
                Sense::Ge => {
                    let e = lo.entry(&b.agg).or_insert(f64::NEG_INFINITY);
                    *e = e.max(b.rhs);
                }
                Sense::Le => {
                    let e = hi.entry(&b.agg).or_insert(f64::INFINITY);
                    *e = e.min(b.rhs);
                }
                Sense::Eq => {
                    let e = lo.entry(&b.agg).or_insert(f64::NEG_INFINITY);
                    *e = e.max(b.rhs);
                    let e = hi.entry(&b.agg).or_insert(f64::INFINITY);
                    *e = e.min(b.rhs);
                }
            }
        }
        lo.iter().all(|(a, l)| hi.get(a).map_or(true, |h| l <= h))
    }

    /// Routings that must not be generated again: those capped at zero.
    pub fn forbidden_routings(&self) -> Vec<RoutingKey> {
        self.bounds
            .iter()
            .filter_map(|b| match (&b.agg, b.sense) {
                (Aggregate::Routing(k), Sense::Le) if b.rhs < 0.5 => Some(k.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn routing_bounds(&self) -> impl Iterator<Item = &BranchBound> {
        self.bounds.iter().filter(|b| matches!(b.agg, Aggregate::Routing(_)))
    }
}

/// Master duals, signed as they enter a column's reduced cost.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPrices {
    pub pi: Vec<f64>,
    pub psi: Vec<f64>,
    pub mu: Vec<f64>,
    pub mu_k: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub rho_k: Vec<Vec<Vec<f64>>>,
    pub eta: Vec<Vec<f64>>,
    pub eta_k: Vec<Vec<Vec<f64>>>,
    pub theta: Vec<f64>,
    pub theta_k: Vec<Vec<f64>>,
    pub delta: Option<Vec<Vec<f64>>>,
    /// Extra charge per routing from routing-level branch rows.
    pub routing: HashMap<RoutingKey, f64>,
}

impl DualPrices {
    pub fn zeros(inst: &Instance) -> DualPrices {
        let (nk, ni, nj, nt) = (inst.n_types(), inst.n_shelters(), inst.n_stations(), inst.slots());
        DualPrices {
            pi: vec![0.0; ni],
            psi: vec![0.0; nk],
            mu: vec![0.0; ni],
            mu_k: vec![vec![0.0; ni]; nk],
            rho: vec![vec![0.0; nt]; ni],
            rho_k: vec![vec![vec![0.0; nt]; ni]; nk],
            eta: vec![vec![0.0; nj]; ni],
            eta_k: vec![vec![vec![0.0; nj]; ni]; nk],
            theta: vec![0.0; ni],
            theta_k: vec![vec![0.0; ni]; nk],
            delta: None,
            routing: HashMap::new(),
        }
    }

    /// Panics when a family does not match the instance dimensions.
    pub fn check_shape(&self, inst: &Instance) {
        let (nk, ni, nj, nt) = (inst.n_types(), inst.n_shelters(), inst.n_stations(), inst.slots());
        let ok = self.pi.len() == ni
            && self.psi.len() == nk
            && self.mu.len() == ni
            && self.mu_k.len() == nk
            && self.mu_k.iter().all(|v| v.len() == ni)
            && self.rho.len() == ni
            && self.rho.iter().all(|v| v.len() == nt)
            && self.rho_k.len() == nk
            && self.rho_k.iter().all(|v| v.len() == ni && v.iter().all(|w| w.len() == nt))
            && self.eta.len() == ni
            && self.eta.iter().all(|v| v.len() == nj)
            && self.eta_k.len() == nk
            && self.eta_k.iter().all(|v| v.len() == ni && v.iter().all(|w| w.len() == nj))
            && self.theta.len() == ni
            && self.theta_k.len() == nk
            && self.theta_k.iter().all(|v| v.len() == ni)
            && self.delta.as_ref().map_or(true, |d| d.len() == ni && d.iter().all(|v| v.len() == nt));
        assert!(ok, "dual prices do not cover the instance");
    }

    /// Serving charge for type `k` at shelter `i`, slot `t`.
    pub fn serve_charge(&self, k: usize, i: usize, t: usize) -> f64 {
        self.mu[i] + self.mu_k[k][i] + self.rho[i][t] + self.rho_k[k][i][t]
    }

    /// Value of one kWh delivered to shelter `i` in slot `t`.
    pub fn energy_value(&self, i: usize, t: usize) -> f64 {
        self.pi[i] + self.delta.as_ref().map_or(0.0, |d| d[i][t])
    }

    pub fn trip_charge(&self, k: usize, i: usize, j: usize) -> f64 {
        self.eta[i][j] + self.eta_k[k][i][j]
    }

    pub fn end_charge(&self, k: usize, i: usize) -> f64 {
        self.theta[i] + self.theta_k[k][i]
    }

    /// Nudges zero coverage duals by `eps`, alternating sign by shelter.
    pub fn perturb(&mut self, eps: f64, round: usize) {
        for (i, p) in self.pi.iter_mut().enumerate() {
            if *p == 0.0 {
                *p = if (i + round) % 2 == 0 { eps } else { -eps };
            }
        }
    }

    fn add_branch(&mut self, agg: &Aggregate, y: f64) {
        match *agg {
            Aggregate::Fleet(k) => self.psi[k] += y,
            Aggregate::Visits(i) => self.mu[i] += y,
            Aggregate::Slot(i, t) => self.rho[i][t] += y,
            Aggregate::VisitsByType(k, i) => self.mu_k[k][i] += y,
            Aggregate::SlotByType(k, i, t) => self.rho_k[k][i][t] += y,
            Aggregate::Trips(i, j) => self.eta[i][j] += y,
            Aggregate::TripsByType(k, i, j) => self.eta_k[k][i][j] += y,
            Aggregate::Ends(i) => self.theta[i] += y,
            Aggregate::EndsByType(k, i) => self.theta_k[k][i] += y,
            Aggregate::Routing(ref key) => *self.routing.entry(key.clone()).or_insert(0.0) += y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MasterSolution {
    /// Per pool column.
    pub lambda: Vec<f64>,
    pub unmet: Vec<f64>,
    pub shifted: Option<Vec<Vec<f64>>>,
    pub objective: f64,
    pub duals: DualPrices,
    /// Total artificial usage on branch rows; positive means the node is infeasible.
    pub artificial: f64,
    /// Primal minus dual objective.
    pub duality_gap: f64,
}

impl MasterSolution {
    pub fn is_feasible(&self) -> bool {
        self.artificial <= 1e-7
    }

    pub fn aggregate(&self, pool: &ColumnPool, agg: &Aggregate) -> f64 {
        self.lambda
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0.0)
            .map(|(p, &l)| l * agg.coeff(&pool.routes[p], &pool.coverage[p]))
            .sum()
    }

    /// Every nonzero aggregate of every family.
    pub fn aggregates(&self, pool: &ColumnPool) -> BTreeMap<Aggregate, f64> {
        let mut out: BTreeMap<Aggregate, f64> = BTreeMap::new();
        let mut add = |a: Aggregate, v: f64| *out.entry(a).or_insert(0.0) += v;
        for (p, &l) in self.lambda.iter().enumerate() {
            if l <= 0.0 {
                continue;
            }
            let r = &pool.routes[p];
            let c = &pool.coverage[p];
            let k = r.esb_type;
            add(Aggregate::Fleet(k), l);
            for &(i, t) in &c.serve {
                add(Aggregate::Visits(i), l);
                add(Aggregate::Slot(i, t), l);
                add(Aggregate::VisitsByType(k, i), l);
                add(Aggregate::SlotByType(k, i, t), l);
            }
            for (&(i, j), &n) in &c.arcs {
                add(Aggregate::Trips(i, j), l * n as f64);
                add(Aggregate::TripsByType(k, i, j), l * n as f64);
            }
            for (&i, &n) in &c.ends {
                add(Aggregate::Ends(i), l * n as f64);
                add(Aggregate::EndsByType(k, i), l * n as f64);
            }
            add(Aggregate::Routing(r.routing_key()), l);
        }
        out
    }
}

fn fractionality(v: f64) -> f64 {
    let f = v - v.floor();
    f.min(1.0 - f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub agg: Aggregate,
    pub value: f64,
    pub down: BranchBound,
    pub up: BranchBound,
}

/// First fractional aggregate by family priority, or `None` when integral.
pub fn pick_branch(sol: &MasterSolution, pool: &ColumnPool) -> Option<Branch> {
    let aggs = sol.aggregates(pool);
    let mut best: Option<(u8, f64, &Aggregate, f64)> = None;
    let mut seen_family: Vec<u8> = vec![];
    for (a, &v) in &aggs {
        if fractionality(v) <= FRAC_TOL || seen_family.contains(&a.family()) {
            continue;
        }
        seen_family.push(a.family());
        let f = fractionality(v);
        let better = match best {
            None => true,
            Some((r, bf, _, _)) => a.rank() < r || (a.rank() == r && f > bf + 1e-12),
        };
        if better {
            best = Some((a.rank(), f, a, v));
        }
    }
    best.map(|(_, _, a, v)| Branch {
        agg: a.clone(),
        value: v,
        down: BranchBound { agg: a.clone(), sense: Sense::Le, rhs: v.floor() },
        up: BranchBound { agg: a.clone(), sense: Sense::Ge, rhs: v.ceil() },
    })
}

/// An integer fleet plan: routes with multiplicities and the implied
/// shortfalls.
#[derive(Debug, Clone, Serialize)]
pub struct Plan {
    pub routes: Vec<(Route, u32)>,
    pub unmet: Vec<f64>,
    pub shifted: Option<Vec<Vec<f64>>>,
    pub objective: f64,
    pub investment: f64,
    pub transport: f64,
    pub penalty: f64,
    pub shift_cost: f64,
}

impl Plan {
    pub fn evaluate(inst: &Instance, routes: Vec<(Route, u32)>, shift: bool) -> Plan {
        let ni = inst.n_shelters();
        let mut delivered = vec![vec![0.0; inst.slots()]; ni];
        let (mut investment, mut transport) = (0.0, 0.0);
        for (r, n) in &routes {
            let n = *n as f64;
            investment += n * inst.types[r.esb_type].invest_cost;
            transport += n * (r.cost - inst.types[r.esb_type].invest_cost);
            for &(i, t, g) in &r.discharge {
                delivered[i][t] += n * g;
            }
        }
        let unmet: Vec<f64> = (0..ni).map(|i| (inst.demands.total(i) - delivered[i].iter().sum::<f64>()).max(0.0)).collect();
        let penalty = unmet.iter().zip(&inst.demands.penalty).map(|(l, f)| l * f).sum();
        let (shifted, shift_cost) = match (shift, &inst.demands.shift_fee) {
            (true, Some(fee)) => {
                let s: Vec<Vec<f64>> =
                    (0..ni).map(|i| (0..inst.slots()).map(|t| (inst.demands.demand[i][t] - delivered[i][t]).max(0.0)).collect()).collect();
                let c = (0..ni).flat_map(|i| (0..inst.slots()).map(move |t| (i, t))).map(|(i, t)| s[i][t] * fee[i][t]).sum();
                (Some(s), c)
            }
            _ => (None, 0.0),
        };
        Plan { routes, unmet, shifted, objective: investment + transport + penalty + shift_cost, investment, transport, penalty, shift_cost }
    }

    pub fn fleet(&self, n_types: usize) -> Vec<u32> {
        let mut f = vec![0; n_types];
        for (r, n) in &self.routes {
            f[r.esb_type] += n;
        }
        f
    }

    pub fn shifted_total(&self) -> f64 {
        self.shifted.as_ref().map_or(0.0, |s| s.iter().flatten().sum())
    }
}

/// Merges same-routing columns into an integer plan when every routing count
/// is integral.
pub fn integral_plan(sol: &MasterSolution, pool: &ColumnPool, inst: &Instance, shift: bool) -> Option<Plan> {
    let mut groups: BTreeMap<RoutingKey, (f64, BTreeMap<(usize, usize), f64>)> = BTreeMap::new();
    for (p, &l) in sol.lambda.iter().enumerate() {
        if l <= 1e-9 {
            continue;
        }
        let r = &pool.routes[p];
        let e = groups.entry(r.routing_key()).or_default();
        e.0 += l;
        for &(i, t, g) in &r.discharge {
            *e.1.entry((i, t)).or_insert(0.0) += l * g;
        }
    }
    let mut routes = vec![];
    for (key, (count, g)) in groups {
        if fractionality(count) > FRAC_TOL {
            return None;
        }
        let n = count.round();
        if n < 0.5 {
            continue;
        }
        let dis = g.into_iter().map(|((i, t), v)| (i, t, v / n)).collect();
        routes.push((Route::new(inst, key.esb_type, key.actions, dis), n as u32));
    }
    Some(Plan::evaluate(inst, routes, shift))
}

/// Options shared by the master solves.
#[derive(Debug, Clone, Copy)]
pub struct MasterOptions {
    pub shift: bool,
    /// Cost per unit of artificial slack on `>=` branch rows.
    pub artificial_cost: f64,
}

impl MasterOptions {
    pub fn new(inst: &Instance, shift: bool) -> MasterOptions {
        let penalty: f64 = (0..inst.n_shelters()).map(|i| inst.demands.penalty[i] * inst.demands.total(i)).sum();
        let fleet: f64 = inst.types.iter().map(|t| t.available_count as f64 * t.invest_cost).sum();
        MasterOptions { shift, artificial_cost: 10.0 * (penalty + fleet) + 1e6 }
    }
}

struct Layout {
    problem: LpProblem,
    names: Vec<String>,
    row_names: Vec<String>,
    unmet: Vec<usize>,
    shifted: Vec<(usize, usize, usize)>,
    artificials: Vec<usize>,
    cover_rows: Vec<usize>,
    shift_rows: Vec<(usize, usize, usize)>,
    avail_rows: Vec<(usize, usize)>,
    branch_rows: Vec<(usize, Aggregate)>,
}

fn build_master(pool: &ColumnPool, inst: &Instance, branches: &BranchBoundSet, opt: &MasterOptions, integer: bool) -> Layout {
    let mut p = LpProblem::default();
    let mut names = vec![];
    for r in &pool.routes {
        let ub = if integer { inst.types[r.esb_type].available_count as f64 } else { f64::INFINITY };
        p.add_var(r.cost, 0.0, ub, integer);
        names.push(format!("lambda[{}]", names.len()));
    }
    let ni = inst.n_shelters();
    let unmet: Vec<usize> = (0..ni)
        .map(|i| {
            names.push(format!("unmet[{}]", i + 1));
            p.add_var(inst.demands.penalty[i], 0.0, f64::INFINITY, false)
        })
        .collect();
    let mut shifted = vec![];
    if opt.shift {
        let fee = inst.demands.shift_fee.as_ref().expect("shift mode needs shift fees");
        for i in 0..ni {
            for t in 0..inst.slots() {
                if inst.demands.demand[i][t] > 0.0 {
                    names.push(format!("shifted[{},{}]", i + 1, t));
                    shifted.push((i, t, p.add_var(fee[i][t], 0.0, f64::INFINITY, false)));
                }
            }
        }
    }
    let mut row_names = vec![];
    let cover_rows = (0..ni)
        .map(|i| {
            let mut coeffs: Vec<(usize, f64)> =
                pool.coverage.iter().enumerate().filter_map(|(c, cov)| cov.g_sum.get(&i).map(|&g| (c, g))).collect();
            coeffs.push((unmet[i], 1.0));
            row_names.push(format!("coverage[{}]", i + 1));
            p.add_row(coeffs, Sense::Ge, inst.demands.total(i))
        })
        .collect();
    let mut shift_rows = vec![];
    for &(i, t, v) in &shifted {
        let mut coeffs: Vec<(usize, f64)> = pool
            .coverage
            .iter()
            .enumerate()
            .filter_map(|(c, cov)| cov.g.iter().find(|g| g.0 == i && g.1 == t).map(|g| (c, g.2)))
            .collect();
        coeffs.push((v, 1.0));
        row_names.push(format!("slot_coverage[{},{}]", i + 1, t));
        shift_rows.push((i, t, p.add_row(coeffs, Sense::Ge, inst.demands.demand[i][t])));
    }
    let mut avail_rows = vec![];
    for k in 0..inst.n_types() {
        let coeffs = pool.by_type[k].iter().map(|&c| (c, 1.0)).collect();
        row_names.push(format!("availability[{}]", k + 1));
        avail_rows.push((k, p.add_row(coeffs, Sense::Le, inst.types[k].available_count as f64)));
    }
    let mut branch_rows = vec![];
    let mut artificials = vec![];
    for (n, b) in branches.bounds.iter().enumerate() {
        let mut coeffs: Vec<(usize, f64)> = pool
            .routes
            .iter()
            .zip(&pool.coverage)
            .enumerate()
            .filter_map(|(c, (r, cov))| {
                let a = b.agg.coeff(r, cov);
                (a != 0.0).then_some((c, a))
            })
            .collect();
        if b.sense != Sense::Le {
            names.push(format!("artificial[{n}]"));
            let a = p.add_var(opt.artificial_cost, 0.0, f64::INFINITY, false);
            artificials.push(a);
            coeffs.push((a, 1.0));
        }
        row_names.push(format!("branch[{n}]"));
        branch_rows.push((p.add_row(coeffs, b.sense, b.rhs), b.agg.clone()));
    }
    Layout { problem: p, names, row_names, unmet, shifted, artificials, cover_rows, shift_rows, avail_rows, branch_rows }
}

/// LP text of the restricted master, for debugging.
pub fn rlmp_lp_text(pool: &ColumnPool, inst: &Instance, branches: &BranchBoundSet, opt: &MasterOptions) -> String {
    let l = build_master(pool, inst, branches, opt, false);
    l.problem.to_lp_text(&l.names, &l.row_names)
}

#[derive(Debug, thiserror::Error)]
pub enum MasterError {
    #[error("master LP failed: {0:?}")]
    Solver(LpStatus),
}

/// Solves the LP relaxation of the master restricted to the pool.
pub fn solve_rlmp(pool: &ColumnPool, inst: &Instance, branches: &BranchBoundSet, opt: &MasterOptions) -> Result<MasterSolution, MasterError> {
    let l = build_master(pool, inst, branches, opt, false);
    let s = lp_solve(&l.problem);
    if s.status != LpStatus::Optimal {
        return Err(MasterError::Solver(s.status));
    }
    let mut duals = DualPrices::zeros(inst);
    for (i, &row) in l.cover_rows.iter().enumerate() {
        duals.pi[i] = s.duals[row].max(0.0);
    }
    if opt.shift {
        let mut delta = vec![vec![0.0; inst.slots()]; inst.n_shelters()];
        for &(i, t, row) in &l.shift_rows {
            delta[i][t] = s.duals[row].max(0.0);
        }
        duals.delta = Some(delta);
    }
    for &(k, row) in &l.avail_rows {
        duals.psi[k] -= s.duals[row].min(0.0);
    }
    for (row, agg) in &l.branch_rows {
        duals.add_branch(agg, -s.duals[*row]);
    }
    let mut shifted = None;
    if opt.shift {
        let mut m = vec![vec![0.0; inst.slots()]; inst.n_shelters()];
        for &(i, t, v) in &l.shifted {
            m[i][t] = s.primal[v];
        }
        shifted = Some(m);
    }
    let dual = dual_objective(&l.problem, &s);
    Ok(MasterSolution {
        lambda: s.primal[..pool.len()].to_vec(),
        unmet: l.unmet.iter().map(|&v| s.primal[v]).collect(),
        shifted,
        objective: s.objective,
        duals,
        artificial: l.artificials.iter().map(|&a| s.primal[a]).sum(),
        duality_gap: s.objective - dual,
    })
}

#[derive(Debug, Clone)]
pub struct MilpMaster {
    pub plan: Option<Plan>,
    pub bound: f64,
    pub proven: bool,
    pub nodes: u64,
}

/// Integer master over the pool, solved by the bounded search.
pub fn solve_milp_master(pool: &ColumnPool, inst: &Instance, opt: &MasterOptions, cfg: &SearchConfig) -> MilpMaster {
    let l = build_master(pool, inst, &BranchBoundSet::default(), opt, true);
    let o = branch_and_bound(&l.problem, cfg);
    let plan = (!o.values.is_empty()).then(|| {
        let routes = (0..pool.len())
            .filter(|&c| o.values[c] > 0.5)
            .map(|c| (pool.routes[c].clone(), o.values[c].round() as u32))
            .collect();
        Plan::evaluate(inst, routes, opt.shift)
    });
    MilpMaster { plan, bound: o.bound, proven: o.status == MilpStatus::Optimal, nodes: o.nodes }
}

/// Single-visit round trips, one per compatible (shelter, type), timed over
/// the window of highest demand.
pub fn initial_pool(inst: &Instance) -> ColumnPool {
    let mut pool = ColumnPool::new(inst.n_types());
    let net = &inst.network;
    for i in 0..inst.n_shelters() {
        for k in inst.types_of(i) {
            let ty = &inst.types[k];
            let s = net.service(Node::Shelter(i));
            let go = net.travel(k, Node::Depot, Node::Shelter(i));
            let usable = ty.usable() - net.energy(k, Node::Depot, Node::Shelter(i)) - net.energy(k, Node::Shelter(i), Node::Depot);
            if usable < s as f64 * ty.discharge_min - 1e-9 || go + s >= inst.t_last() {
                continue;
            }
            let best = (0..inst.t_last() - go - s)
                .map(|t0| (t0, (t0 + go..t0 + go + s).map(|t| inst.demands.demand[i][t]).sum::<f64>()))
                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 + 1e-12 { b } else { a });
            let t0 = best.0;
            let arrive = t0 + go;
            let amount = inst.demands.total(i).min(usable).max(s as f64 * ty.discharge_min);
            let peak = (arrive..arrive + s).fold(arrive, |m, t| if inst.demands.demand[i][t] > inst.demands.demand[i][m] { t } else { m });
            let dis = (arrive..arrive + s)
                .map(|t| (i, t, ty.discharge_min + if t == peak { amount - s as f64 * ty.discharge_min } else { 0.0 }))
                .collect();
            let r = Route::new(inst, k, timed_actions(inst, k, t0, &[Node::Shelter(i)]), dis);
            if r.validate(inst).is_empty() {
                pool.add(inst, r);
            }
        }
    }
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{desk_instance, DeskSpec};

    fn single_column(inst: &Instance, k: usize, amount: f64) -> Route {
        let acts = timed_actions(inst, k, 0, &[Node::Shelter(0)]);
        let w = Route::new(inst, k, acts.clone(), vec![]).visits(inst)[0];
        let s = (w.depart - w.arrive) as f64;
        Route::new(inst, k, acts, (w.arrive..w.depart).map(|t| (0, t, amount / s)).collect())
    }

    fn exact_cover() -> (Instance, ColumnPool) {
        let mut inst = desk_instance(&DeskSpec { slots: 10, ..Default::default() });
        let r = single_column(&inst, 2, 60.0);
        let w = r.visits(&inst)[0];
        inst.demands.demand = vec![vec![0.0; 10]];
        for t in w.arrive..w.depart {
            inst.demands.demand[0][t] = r.discharge_at(0, t);
        }
        let mut pool = ColumnPool::new(3);
        pool.add(&inst, r);
        (inst, pool)
    }

    #[test]
    fn unique_cover_column_is_chosen() {
        let (inst, pool) = exact_cover();
        let opt = MasterOptions::new(&inst, false);
        let s = solve_rlmp(&pool, &inst, &BranchBoundSet::default(), &opt).unwrap();
        assert!((s.lambda[0] - 1.0).abs() < 1e-9);
        assert!(s.unmet[0].abs() < 1e-9);
        assert!((s.objective - pool.routes[0].cost).abs() < 1e-6);
        assert!(s.duality_gap.abs() < 1e-6);
        let m = solve_milp_master(&pool, &inst, &opt, &SearchConfig::default());
        assert!((m.plan.unwrap().objective - s.objective).abs() < 1e-6);
    }

    #[test]
    fn fleet_cap_forces_penalty() {
        let (inst, pool) = exact_cover();
        let opt = MasterOptions::new(&inst, false);
        let b = BranchBoundSet::default().with(BranchBound { agg: Aggregate::Fleet(2), sense: Sense::Le, rhs: 0.0 });
        let s = solve_rlmp(&pool, &inst, &b, &opt).unwrap();
        let all_penalty = inst.demands.penalty[0] * inst.demands.total(0);
        assert!((s.objective - all_penalty).abs() < 1e-6);
    }

    #[test]
    fn converged_columns_price_nonnegative() {
        let inst = desk_instance(&DeskSpec { shelters: 2, slots: 12, ..Default::default() });
        let pool = initial_pool(&inst);
        assert!(!pool.is_empty());
        let opt = MasterOptions::new(&inst, false);
        let s = solve_rlmp(&pool, &inst, &BranchBoundSet::default(), &opt).unwrap();
        for r in &pool.routes {
            assert!(r.reduced_cost(&inst, &s.duals) >= -1e-6);
        }
    }

    #[test]
    fn branch_order_prefers_fleet() {
        let inst = desk_instance(&DeskSpec { slots: 10, ..Default::default() });
        let mut pool = ColumnPool::new(3);
        pool.add(&inst, single_column(&inst, 2, 60.0));
        pool.add(&inst, single_column(&inst, 1, 50.0));
        let sol = MasterSolution {
            lambda: vec![0.5, 0.5],
            unmet: vec![0.0],
            shifted: None,
            objective: 0.0,
            duals: DualPrices::zeros(&inst),
            artificial: 0.0,
            duality_gap: 0.0,
        };
        let b = pick_branch(&sol, &pool).unwrap();
        assert_eq!(b.agg, Aggregate::Fleet(1));
        assert_eq!(b.down.rhs, 0.0);
        assert_eq!(b.up.rhs, 1.0);
    }

    #[test]
    fn symmetric_split_needs_routing_branch() {
        let inst = desk_instance(&DeskSpec { slots: 10, ..Default::default() });
        let mut pool = ColumnPool::new(3);
        pool.add(&inst, single_column(&inst, 2, 60.0));
        pool.add(&inst, single_column(&inst, 2, 80.0));
        let mut sol = MasterSolution {
            lambda: vec![0.5, 0.5],
            unmet: vec![0.0],
            shifted: None,
            objective: 0.0,
            duals: DualPrices::zeros(&inst),
            artificial: 0.0,
            duality_gap: 0.0,
        };
        assert_eq!(pick_branch(&sol, &pool), None);
        let plan = integral_plan(&sol, &pool, &inst, false).unwrap();
        assert_eq!(plan.routes.len(), 1);
        assert!((plan.routes[0].0.total_discharge() - 70.0).abs() < 1e-9);
        sol.lambda = vec![0.5, 0.0];
        assert!(matches!(pick_branch(&sol, &pool).unwrap().agg, Aggregate::Fleet(2)));
    }
}
