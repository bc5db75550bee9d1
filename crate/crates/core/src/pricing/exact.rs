//! Exact pricing: the single-bus block of the compact model with the
//! reduced-cost objective.

use std::collections::BTreeSet;

use super::{best_route_for_routing, branched_routings, price_branched, top_columns, PricingConfig, TypePricing, RC_TOL};
use crate::compact_model::{extract_bus_route, solve_compact_below, BusBlock, CompactModel};
use crate::instance::{Instance, Node};
use crate::master::lp::{MilpStatus, Sense};
use crate::master::{BranchBoundSet, DualPrices};
use crate::route::{RouteAction, RoutingKey};

/// Routing binaries set by `actions`, or `None` when some action has no
/// variable in the block.
fn action_vars(b: &BusBlock, actions: &[RouteAction]) -> Option<Vec<usize>> {
    let mut out = vec![];
    for a in actions {
        let v = match (a.from, a.to) {
            (Node::Depot, Node::Shelter(i)) => b.u[b.pos(i)?][a.slot],
            (Node::Shelter(i), Node::Depot) => b.r[b.pos(i)?][a.slot],
            (Node::Shelter(i), q) => {
                let ii = b.pos(i)?;
                let qi = b.targets[ii].iter().position(|&n| n == q)?;
                b.x[ii][qi][a.slot]
            }
            (Node::Station(j), Node::Shelter(i)) => b.z[j][b.pos(i)?][a.slot],
            _ => return None,
        };
        out.push(v);
    }
    Some(out)
}

/// Single-bus model of type `k` whose objective is the reduced cost of the
/// route it encodes. Routings in `excluded` are cut off.
pub fn pricing_model(inst: &Instance, duals: &DualPrices, k: usize, excluded: &BTreeSet<RoutingKey>) -> CompactModel {
    let mut m = CompactModel::default();
    let bi = m.add_bus(inst, k, 0);
    let b = m.buses[bi].clone();
    let net = &inst.network;
    let ty = &inst.types[k];
    let fx = inst.energy_cost;
    for (ii, &i) in b.shelters.iter().enumerate() {
        let s = Node::Shelter(i);
        for t in 0..inst.slots() {
            m.lp.obj[b.u[ii][t]] = ty.invest_cost + fx * net.energy(k, Node::Depot, s) + duals.end_charge(k, i);
            m.lp.obj[b.r[ii][t]] = fx * net.energy(k, s, Node::Depot) + duals.end_charge(k, i);
            m.lp.obj[b.w[ii][t]] = duals.serve_charge(k, i, t);
            m.lp.obj[b.g[ii][t]] = -duals.energy_value(i, t);
            for (qi, &q) in b.targets[ii].iter().enumerate() {
                let trip = match q {
                    Node::Station(j) => duals.trip_charge(k, i, j),
                    _ => 0.0,
                };
                m.lp.obj[b.x[ii][qi][t]] = fx * net.energy(k, s, q) + trip;
            }
            for j in 0..inst.n_stations() {
                m.lp.obj[b.z[j][ii][t]] = fx * net.energy(k, Node::Station(j), s) + duals.trip_charge(k, i, j);
            }
        }
    }
    m.lp.obj_offset = duals.psi[k];
    let us: Vec<(usize, f64)> = b.u.iter().flatten().map(|&v| (v, 1.0)).collect();
    m.add_row("route_exists", b.label(), us, Sense::Eq, 1.0);
    let all = b.routing_vars();
    for (n, key) in excluded.iter().enumerate() {
        let Some(on) = action_vars(&b, &key.actions) else { continue };
        let on: BTreeSet<usize> = on.into_iter().collect();
        let mut c: Vec<(usize, f64)> = vec![];
        for &v in &all {
            c.push((v, if on.contains(&v) { -1.0 } else { 1.0 }));
        }
        m.add_row("excluded_routing", format!("{n}"), c, Sense::Ge, 1.0 - on.len() as f64);
    }
    m
}

/// Minimum reduced-cost column of type `k`.
pub fn price_exact(inst: &Instance, duals: &DualPrices, k: usize, branches: &BranchBoundSet, cfg: &PricingConfig) -> TypePricing {
    let (forbidden, priced) = branched_routings(k, duals, branches);
    let excluded: BTreeSet<RoutingKey> = forbidden.union(&priced).cloned().collect();
    let m = pricing_model(inst, duals, k, &excluded);
    let cutoff = if cfg.cutoff { -cfg.slack.max(RC_TOL) } else { f64::INFINITY };
    let sol = solve_compact_below(&m, 0.0, cfg.node_cap, cfg.milp, cutoff);
    let mut cands = price_branched(inst, duals, &priced);
    let proven = sol.status == MilpStatus::Optimal || sol.status == MilpStatus::Infeasible;
    if !sol.values.is_empty() {
        match extract_bus_route(inst, &m.buses[0], &sol.values) {
            Ok(Some(r)) => {
                if let Some(r) = best_route_for_routing(inst, k, r.actions, duals) {
                    let rc = r.reduced_cost(inst, duals);
                    cands.push((r, rc));
                }
            }
            Ok(None) => {}
            Err(e) => log::warn!("pricing model returned an unreadable route: {e}"),
        }
    }
    let min_rc = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    TypePricing { k, columns: top_columns(cands, cfg.max_columns), min_rc, proven }
}
