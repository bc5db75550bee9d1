//! Column generation subproblems: one per ESB type, solved either exactly
//! through the single-bus MILP or by labeling plus a DP over station visits.

pub mod dp;
pub mod exact;
pub mod labeling;

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::compact_model::MilpEngine;
use crate::instance::Instance;
use crate::master::{BranchBoundSet, DualPrices};
use crate::route::{segments, Route, RouteAction, RoutingKey};

/// Reduced costs at or above `-RC_TOL` count as non-negative.
pub const RC_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PricingEngine {
    Exact,
    Dp,
}

#[derive(Debug, Clone, Copy)]
pub struct PricingConfig {
    pub engine: PricingEngine,
    pub milp: MilpEngine,
    pub node_cap: u64,
    /// Shelter visits allowed between two consecutive charges.
    pub max_segment_shelters: usize,
    pub prune: bool,
    pub cache: bool,
    pub parallel: bool,
    /// Distinct negative columns returned per type.
    pub max_columns: usize,
    /// With the exact engine, try the DP first and solve the MILP only when
    /// the DP finds nothing.
    pub dp_first: bool,
    /// Let the MILP prune everything at or above `-RC_TOL`. Faster, but a
    /// type with no negative column then reports `min_rc = +inf`.
    pub cutoff: bool,
    /// With `cutoff`, the MILP keeps only columns priced below `-slack`.
    pub slack: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig {
            engine: PricingEngine::Exact,
            milp: MilpEngine::Highs,
            node_cap: 1_000_000,
            max_segment_shelters: 4,
            prune: true,
            cache: true,
            parallel: false,
            max_columns: 1,
            dp_first: false,
            cutoff: false,
            slack: RC_TOL,
        }
    }
}

/// Outcome of pricing one type.
#[derive(Debug, Clone)]
pub struct TypePricing {
    pub k: usize,
    /// Negative columns, most negative first.
    pub columns: Vec<(Route, f64)>,
    /// Smallest reduced cost seen, `+inf` when the type has no feasible route.
    pub min_rc: f64,
    /// False when a search cap stopped the engine early.
    pub proven: bool,
}

impl TypePricing {
    pub fn best(&self) -> Option<&(Route, f64)> {
        self.columns.first()
    }
}

/// Optimal discharge for fixed routing decisions. Each serving slot gets the
/// minimum; whatever a segment's budget leaves over goes to its slot with the
/// highest positive energy value. `None` when some segment cannot afford the
/// minimum.
pub fn optimal_discharge(inst: &Instance, k: usize, actions: &[RouteAction], duals: &DualPrices) -> Option<Vec<(usize, usize, f64)>> {
    let gmin = inst.types[k].discharge_min;
    let mut out = vec![];
    for (budget, visits) in segments(inst, k, actions) {
        let n: usize = visits.iter().map(|v| v.depart - v.arrive).sum();
        let surplus = budget - n as f64 * gmin;
        if surplus < -1e-9 {
            return None;
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for v in &visits {
            for t in v.arrive..v.depart {
                out.push((v.shelter, t, gmin));
                let w = duals.energy_value(v.shelter, t);
                if w > 0.0 && best.map_or(true, |b| w > b.2) {
                    best = Some((v.shelter, t, w));
                }
            }
        }
        if let Some((i, t, _)) = best {
            if surplus > 0.0 {
                out.push((i, t, surplus));
            }
        }
    }
    Some(out)
}

/// The best column for a routing, or `None` if it is not feasible.
pub fn best_route_for_routing(inst: &Instance, k: usize, actions: Vec<RouteAction>, duals: &DualPrices) -> Option<Route> {
    let dis = optimal_discharge(inst, k, &actions, duals)?;
    let r = Route::new(inst, k, actions, dis);
    r.validate(inst).is_empty().then_some(r)
}

/// Routings of type `k` carrying a routing-level branch row, split into
/// forbidden ones and ones that must be priced on their own.
pub(crate) fn branched_routings(k: usize, duals: &DualPrices, branches: &BranchBoundSet) -> (BTreeSet<RoutingKey>, BTreeSet<RoutingKey>) {
    let forbidden: BTreeSet<RoutingKey> = branches.forbidden_routings().into_iter().filter(|r| r.esb_type == k).collect();
    let mut priced: BTreeSet<RoutingKey> = duals.routing.keys().filter(|r| r.esb_type == k).cloned().collect();
    for b in branches.routing_bounds() {
        if let crate::master::Aggregate::Routing(key) = &b.agg {
            if key.esb_type == k {
                priced.insert(key.clone());
            }
        }
    }
    let priced = priced.difference(&forbidden).cloned().collect();
    (forbidden, priced)
}

/// Prices every branched routing of type `k` on its own.
pub(crate) fn price_branched(inst: &Instance, duals: &DualPrices, routings: &BTreeSet<RoutingKey>) -> Vec<(Route, f64)> {
    routings
        .iter()
        .filter_map(|key| best_route_for_routing(inst, key.esb_type, key.actions.clone(), duals))
        .map(|r| {
            let rc = r.reduced_cost(inst, duals);
            (r, rc)
        })
        .collect()
}

/// Keeps the `n` most negative candidates with distinct routings.
pub(crate) fn top_columns(mut cands: Vec<(Route, f64)>, n: usize) -> Vec<(Route, f64)> {
    cands.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.routing_key().cmp(&b.0.routing_key())));
    let mut seen = BTreeSet::new();
    let mut out = vec![];
    for (r, rc) in cands {
        if rc >= -RC_TOL || out.len() >= n {
            break;
        }
        if seen.insert(r.routing_key()) {
            out.push((r, rc));
        }
    }
    out
}

/// Everything the type-`k` subproblem depends on, as a comparable key.
pub fn subproblem_key(k: usize, duals: &DualPrices, branches: &BranchBoundSet) -> String {
    let (forbidden, priced) = branched_routings(k, duals, branches);
    let mut routing: Vec<(&RoutingKey, &f64)> = duals.routing.iter().filter(|(r, _)| r.esb_type == k).collect();
    routing.sort_by(|a, b| a.0.cmp(b.0));
    let d = duals;
    format!(
        "{k}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{routing:?}|{forbidden:?}|{priced:?}",
        d.pi, d.psi[k], d.mu, d.mu_k[k], d.rho, d.rho_k[k], d.eta, d.eta_k[k], d.theta, d.theta_k[k], d.delta
    )
}

pub fn price_type(inst: &Instance, duals: &DualPrices, k: usize, branches: &BranchBoundSet, cfg: &PricingConfig) -> TypePricing {
    match cfg.engine {
        PricingEngine::Exact => {
            if cfg.dp_first {
                let quick = dp::price_dp(inst, duals, k, branches, cfg);
                if !quick.columns.is_empty() {
                    return quick;
                }
            }
            exact::price_exact(inst, duals, k, branches, cfg)
        }
        PricingEngine::Dp => dp::price_dp(inst, duals, k, branches, cfg),
    }
}

/// Prices every type against one dual snapshot; results are ordered by type.
pub fn price_all(inst: &Instance, duals: &DualPrices, branches: &BranchBoundSet, cfg: &PricingConfig) -> Vec<TypePricing> {
    duals.check_shape(inst);
    let types: Vec<usize> = (0..inst.n_types()).filter(|&k| inst.types[k].available_count > 0).collect();
    if cfg.parallel {
        types.par_iter().map(|&k| price_type(inst, duals, k, branches, cfg)).collect()
    } else {
        types.iter().map(|&k| price_type(inst, duals, k, branches, cfg)).collect()
    }
}
