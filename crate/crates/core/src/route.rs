//! Columns: one bus's timed itinerary together with its discharge schedule.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::instance::{Instance, Node};
use crate::master::DualPrices;

const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    DepartDepot,
    DepartShelter,
    DepartStation,
    ReturnDepot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RouteAction {
    #[serde(rename = "action")]
    pub kind: ActionKind,
    pub from: Node,
    pub to: Node,
    pub slot: usize,
}

impl RouteAction {
    pub fn new(from: Node, to: Node, slot: usize) -> RouteAction {
        let kind = match (from, to) {
            (Node::Depot, _) => ActionKind::DepartDepot,
            (_, Node::Depot) => ActionKind::ReturnDepot,
            (Node::Station(_), _) => ActionKind::DepartStation,
            (Node::Shelter(_), _) => ActionKind::DepartShelter,
        };
        RouteAction { kind, from, to, slot }
    }
}

/// A stay at a shelter: serving slots are `arrive..depart`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit {
    pub shelter: usize,
    pub arrive: usize,
    pub depart: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Route {
    /// Position of the ESB type in the instance's type list.
    pub esb_type: usize,
    pub actions: Vec<RouteAction>,
    /// `(shelter, slot, kWh)` sorted by shelter then slot; zero entries omitted.
    pub discharge: Vec<(usize, usize, f64)>,
    pub soc_trace: Vec<f64>,
    pub cost: f64,
}

/// Routing decisions only, without the discharge schedule.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoutingKey {
    pub esb_type: usize,
    pub actions: Vec<RouteAction>,
}

impl fmt::Display for RoutingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.esb_type + 1)?;
        for a in &self.actions {
            write!(f, " {}>{}@{}", a.from, a.to, a.slot)?;
        }
        Ok(())
    }
}

/// Structural identity used for pool deduplication. Discharge is compared on
/// a 1e-7 kWh grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RouteKey {
    pub routing: RoutingKey,
    pub discharge: Vec<(usize, usize, i64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    Empty,
    BadStart,
    BadEnd,
    ForbiddenArc(usize),
    Disconnected(usize),
    IncompatibleShelter(usize),
    WrongDepartureSlot(usize),
    BeyondHorizon(usize),
    UnknownType,
    UnknownNode(usize),
    DischargeOutsideService(usize, usize),
    DischargeBelowMinimum(usize, usize),
    DischargeAboveUsable(usize, usize),
    SocBelowMinimum(usize),
    SocTraceMismatch,
    CostMismatch,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Empty => write!(f, "route has no shelter visit"),
            Violation::BadStart => write!(f, "route must begin with a depot departure"),
            Violation::BadEnd => write!(f, "route must end with a depot return"),
            Violation::ForbiddenArc(a) => write!(f, "action {a}: arc not allowed"),
            Violation::Disconnected(a) => write!(f, "action {a}: does not start where the previous action ended"),
            Violation::IncompatibleShelter(i) => write!(f, "incompatible shelter S{}", i + 1),
            Violation::WrongDepartureSlot(a) => write!(f, "action {a}: departure slot does not follow arrival plus service"),
            Violation::BeyondHorizon(a) => write!(f, "action {a}: activity beyond the horizon"),
            Violation::UnknownType => write!(f, "unknown ESB type"),
            Violation::UnknownNode(a) => write!(f, "action {a}: unknown node"),
            Violation::DischargeOutsideService(i, t) => write!(f, "discharge at S{} slot {t} outside a service window", i + 1),
            Violation::DischargeBelowMinimum(i, t) => write!(f, "discharge below minimum at S{} slot {t}", i + 1),
            Violation::DischargeAboveUsable(i, t) => write!(f, "discharge above usable capacity at S{} slot {t}", i + 1),
            Violation::SocBelowMinimum(t) => write!(f, "state of charge below minimum at slot {t}"),
            Violation::SocTraceMismatch => write!(f, "stored SOC trace differs from the recomputed one"),
            Violation::CostMismatch => write!(f, "stored cost differs from the recomputed one"),
        }
    }
}

/// Timed actions for a bus leaving the depot at `depart` and visiting
/// `stops` in order, leaving every stop as soon as its service ends.
pub fn timed_actions(inst: &Instance, k: usize, depart: usize, stops: &[Node]) -> Vec<RouteAction> {
    let net = &inst.network;
    let mut out = Vec::with_capacity(stops.len() + 1);
    let mut at = Node::Depot;
    let mut t = depart;
    for &n in stops.iter().chain(std::iter::once(&Node::Depot)) {
        out.push(RouteAction::new(at, n, t));
        t += net.travel(k, at, n) + net.service(n);
        at = n;
    }
    out
}

/// Discharge budget terms for a route: per-segment energy budgets and the
/// visits each segment contains. A segment runs between consecutive charges
/// (depot or station departures).
pub fn segments(inst: &Instance, k: usize, actions: &[RouteAction]) -> Vec<(f64, Vec<Visit>)> {
    let ty = &inst.types[k];
    let net = &inst.network;
    let mut out = vec![];
    let mut budget = ty.usable();
    let mut cur = vec![];
    for (n, a) in actions.iter().enumerate() {
        budget -= net.energy(k, a.from, a.to);
        if let Node::Shelter(i) = a.to {
            let arrive = a.slot + net.travel(k, a.from, a.to);
            let depart = actions.get(n + 1).map_or(arrive + net.service(a.to), |b| b.slot);
            cur.push(Visit { shelter: i, arrive, depart });
        } else {
            out.push((budget, std::mem::take(&mut cur)));
            budget = ty.usable();
        }
    }
    out
}

impl Route {
    /// Builds a route, sorting actions and discharge and recomputing the SOC
    /// trace and cost.
    pub fn new(inst: &Instance, esb_type: usize, mut actions: Vec<RouteAction>, discharge: Vec<(usize, usize, f64)>) -> Route {
        actions.sort_by_key(|a| (a.slot, a.kind == ActionKind::ReturnDepot));
        let mut g: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, t, v) in discharge {
            *g.entry((i, t)).or_insert(0.0) += v;
        }
        let discharge: Vec<_> = g.into_iter().filter(|&(_, v)| v != 0.0).map(|((i, t), v)| (i, t, v)).collect();
        let mut r = Route { esb_type, actions, discharge, soc_trace: vec![], cost: 0.0 };
        r.soc_trace = r.compute_soc(inst).0;
        r.cost = r.compute_cost(inst);
        r
    }

    pub fn routing_key(&self) -> RoutingKey {
        RoutingKey { esb_type: self.esb_type, actions: self.actions.clone() }
    }

    pub fn key(&self) -> RouteKey {
        RouteKey {
            routing: self.routing_key(),
            discharge: self.discharge.iter().map(|&(i, t, v)| (i, t, (v * 1e7).round() as i64)).collect(),
        }
    }

    pub fn total_discharge(&self) -> f64 {
        self.discharge.iter().map(|d| d.2).sum()
    }

    pub fn discharge_at(&self, i: usize, t: usize) -> f64 {
        self.discharge.iter().find(|d| d.0 == i && d.1 == t).map_or(0.0, |d| d.2)
    }

    /// Shelter stays implied by the actions.
    pub fn visits(&self, inst: &Instance) -> Vec<Visit> {
        let net = &inst.network;
        let mut out = vec![];
        for (n, a) in self.actions.iter().enumerate() {
            if let Node::Shelter(i) = a.to {
                let arrive = a.slot + net.travel(self.esb_type, a.from, a.to);
                let depart = self.actions.get(n + 1).map_or(arrive + net.service(a.to), |b| b.slot);
                out.push(Visit { shelter: i, arrive, depart });
            }
        }
        out
    }

    pub fn travel_energy(&self, inst: &Instance) -> f64 {
        self.actions.iter().map(|a| inst.network.energy(self.esb_type, a.from, a.to)).sum()
    }

    fn compute_cost(&self, inst: &Instance) -> f64 {
        inst.types[self.esb_type].invest_cost + inst.energy_cost * self.travel_energy(inst)
    }

    /// SOC per horizon slot plus the lowest SOC reached at any arrival,
    /// including arrivals after the horizon.
    fn compute_soc(&self, inst: &Instance) -> (Vec<f64>, Vec<(usize, f64)>) {
        let k = self.esb_type;
        let ty = &inst.types[k];
        let net = &inst.network;
        let n = inst.slots();
        let mut trace = vec![ty.cap_max; n];
        let mut arrivals = vec![];
        let set_from = |trace: &mut Vec<f64>, from: usize, v: f64| {
            for s in trace.iter_mut().skip(from) {
                *s = v;
            }
        };
        let mut soc = ty.cap_max;
        for (idx, a) in self.actions.iter().enumerate() {
            let arrive = a.slot + net.travel(k, a.from, a.to);
            soc -= net.energy(k, a.from, a.to);
            arrivals.push((arrive, soc));
            set_from(&mut trace, arrive, soc);
            match a.to {
                Node::Shelter(i) => {
                    let depart = self.actions.get(idx + 1).map_or(arrive + net.service(a.to), |b| b.slot);
                    for t in arrive..depart {
                        soc -= self.discharge_at(i, t);
                        set_from(&mut trace, t + 1, soc);
                    }
                }
                Node::Station(_) => {
                    let depart = self.actions.get(idx + 1).map_or(arrive + net.service(a.to), |b| b.slot);
                    soc = ty.cap_max;
                    set_from(&mut trace, depart, soc);
                }
                Node::Depot => {}
            }
        }
        (trace, arrivals)
    }

    /// Every broken rule, in a stable order. Empty means feasible.
    pub fn validate(&self, inst: &Instance) -> Vec<Violation> {
        let mut v = vec![];
        let k = self.esb_type;
        if k >= inst.n_types() {
            return vec![Violation::UnknownType];
        }
        let net = &inst.network;
        let known = |n: Node| match n {
            Node::Depot => true,
            Node::Shelter(i) => i < inst.n_shelters(),
            Node::Station(j) => j < inst.n_stations(),
        };
        for (n, a) in self.actions.iter().enumerate() {
            if !known(a.from) || !known(a.to) {
                return vec![Violation::UnknownNode(n)];
            }
        }
        let ty = &inst.types[k];
        let t2 = inst.t_last();
        let acts = &self.actions;
        if !acts.iter().any(|a| a.to.is_shelter()) {
            v.push(Violation::Empty);
        }
        if acts.first().map_or(true, |a| a.kind != ActionKind::DepartDepot) {
            v.push(Violation::BadStart);
        }
        if acts.last().map_or(true, |a| a.kind != ActionKind::ReturnDepot) {
            v.push(Violation::BadEnd);
        }
        for (n, a) in acts.iter().enumerate() {
            let arc_ok = match (a.from, a.to) {
                (Node::Depot, Node::Shelter(_)) => a.kind == ActionKind::DepartDepot,
                (Node::Shelter(_), Node::Depot) => a.kind == ActionKind::ReturnDepot,
                (Node::Shelter(i), Node::Shelter(q)) => i != q && a.kind == ActionKind::DepartShelter,
                (Node::Shelter(_), Node::Station(_)) => a.kind == ActionKind::DepartShelter,
                (Node::Station(_), Node::Shelter(_)) => a.kind == ActionKind::DepartStation,
                _ => false,
            };
            if !arc_ok {
                v.push(Violation::ForbiddenArc(n));
            }
            if n > 0 {
                let p = &acts[n - 1];
                if p.to != a.from {
                    v.push(Violation::Disconnected(n));
                } else if a.slot != p.slot + net.travel(k, p.from, p.to) + net.service(a.from) {
                    v.push(Violation::WrongDepartureSlot(n));
                }
            }
            if a.slot >= t2 {
                v.push(Violation::BeyondHorizon(n));
            }
            if let Node::Shelter(i) = a.to {
                if !inst.compat.ok(k, i) {
                    v.push(Violation::IncompatibleShelter(i));
                }
            }
        }
        v.dedup();
        if !v.is_empty() {
            return v;
        }

        let visits = self.visits(inst);
        let serving = |i: usize, t: usize| visits.iter().any(|w| w.shelter == i && w.arrive <= t && t < w.depart);
        for &(i, t, g) in &self.discharge {
            if !serving(i, t) {
                v.push(Violation::DischargeOutsideService(i, t));
            } else if g > ty.usable() + EPS {
                v.push(Violation::DischargeAboveUsable(i, t));
            }
        }
        for w in &visits {
            for t in w.arrive..w.depart {
                if self.discharge_at(w.shelter, t) < ty.discharge_min - EPS {
                    v.push(Violation::DischargeBelowMinimum(w.shelter, t));
                }
            }
        }
        let (trace, arrivals) = self.compute_soc(inst);
        for (t, &s) in trace.iter().enumerate() {
            if s < ty.cap_min - EPS {
                v.push(Violation::SocBelowMinimum(t));
                break;
            }
        }
        if let Some(&(t, _)) = arrivals.iter().find(|&&(t, s)| t >= trace.len() && s < ty.cap_min - EPS) {
            v.push(Violation::SocBelowMinimum(t));
        }
        let trace_ok = trace.len() == self.soc_trace.len() && trace.iter().zip(&self.soc_trace).all(|(a, b)| (a - b).abs() <= EPS);
        if !trace_ok {
            v.push(Violation::SocTraceMismatch);
        }
        if (self.compute_cost(inst) - self.cost).abs() > EPS * self.cost.abs().max(1.0) {
            v.push(Violation::CostMismatch);
        }
        v
    }

    pub fn coverage(&self, inst: &Instance) -> Coverage {
        let mut c = Coverage::default();
        for &(i, t, g) in &self.discharge {
            *c.g_sum.entry(i).or_insert(0.0) += g;
            c.g.push((i, t, g));
        }
        for w in self.visits(inst) {
            for t in w.arrive..w.depart {
                c.serve.push((w.shelter, t));
            }
        }
        c.serve.sort_unstable();
        for a in &self.actions {
            match (a.from, a.to) {
                (Node::Shelter(i), Node::Station(j)) | (Node::Station(j), Node::Shelter(i)) => *c.arcs.entry((i, j)).or_insert(0) += 1,
                (Node::Depot, Node::Shelter(i)) | (Node::Shelter(i), Node::Depot) => *c.ends.entry(i).or_insert(0) += 1,
                _ => {}
            }
        }
        c
    }

    /// Reduced cost against the current master duals.
    pub fn reduced_cost(&self, inst: &Instance, d: &DualPrices) -> f64 {
        d.check_shape(inst);
        let k = self.esb_type;
        let c = self.coverage(inst);
        let mut rc = self.cost + d.psi[k];
        for &(i, t) in &c.serve {
            rc += d.mu[i] + d.mu_k[k][i] + d.rho[i][t] + d.rho_k[k][i][t];
        }
        for (&(i, j), &n) in &c.arcs {
            rc += n as f64 * (d.eta[i][j] + d.eta_k[k][i][j]);
        }
        for (&i, &n) in &c.ends {
            rc += n as f64 * (d.theta[i] + d.theta_k[k][i]);
        }
        for &(i, t, g) in &c.g {
            rc -= (d.pi[i] + d.delta.as_ref().map_or(0.0, |dl| dl[i][t])) * g;
        }
        if let Some(extra) = d.routing.get(&self.routing_key()) {
            rc += extra;
        }
        rc
    }
}

/// Coefficients a route contributes to the master rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Coverage {
    /// Total discharge per shelter.
    pub g_sum: BTreeMap<usize, f64>,
    /// Discharge per (shelter, slot).
    pub g: Vec<(usize, usize, f64)>,
    /// Serving slots.
    pub serve: Vec<(usize, usize)>,
    /// Shelter-station trips in either direction.
    pub arcs: BTreeMap<(usize, usize), u32>,
    /// Depot departures to plus returns from each shelter.
    pub ends: BTreeMap<usize, u32>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{desk_instance, DeskSpec};

    fn one_one() -> Instance {
        desk_instance(&DeskSpec { slots: 12, ..Default::default() })
    }

    #[test]
    fn single_visit_route_is_valid() {
        let inst = one_one();
        let acts = timed_actions(&inst, 0, 0, &[Node::Shelter(0)]);
        assert_eq!(acts[1].slot, inst.network.travel(0, Node::Depot, Node::Shelter(0)) + inst.network.service(Node::Shelter(0)));
        let w = Route::new(&inst, 0, acts.clone(), vec![(0, 1, 0.0)]).visits(&inst)[0];
        let dis = (w.arrive..w.depart).map(|t| (0, t, 30.0)).collect();
        let r = Route::new(&inst, 0, acts, dis);
        assert_eq!(r.validate(&inst), vec![]);
        let energy = r.travel_energy(&inst);
        assert!((r.cost - (inst.types[0].invest_cost + inst.energy_cost * energy)).abs() < 1e-9);
    }

    #[test]
    fn low_discharge_is_reported() {
        let inst = one_one();
        let acts = timed_actions(&inst, 0, 0, &[Node::Shelter(0)]);
        let w = Route::new(&inst, 0, acts.clone(), vec![]).visits(&inst)[0];
        let dis = (w.arrive..w.depart).map(|t| (0, t, 5.0)).collect();
        let r = Route::new(&inst, 0, acts, dis);
        assert!(r.validate(&inst).iter().any(|v| matches!(v, Violation::DischargeBelowMinimum(0, _))));
        assert!(r.validate(&inst).iter().any(|v| v.to_string() == format!("discharge below minimum at S1 slot {}", w.arrive)));
    }

    #[test]
    fn incompatible_shelter_is_reported() {
        let mut inst = one_one();
        inst.compat.im[0][0] = false;
        let acts = timed_actions(&inst, 0, 0, &[Node::Shelter(0)]);
        let r = Route::new(&inst, 0, acts, vec![]);
        assert!(r.validate(&inst).contains(&Violation::IncompatibleShelter(0)));
    }

    #[test]
    fn coverage_counts_station_trips() {
        let inst = desk_instance(&DeskSpec { shelters: 2, slots: 24, ..Default::default() });
        let stops = [Node::Shelter(1), Node::Station(0), Node::Shelter(1)];
        let acts = timed_actions(&inst, 2, 0, &stops);
        let r0 = Route::new(&inst, 2, acts.clone(), vec![]);
        let dis: Vec<_> = r0.visits(&inst).iter().flat_map(|w| (w.arrive..w.depart).map(|t| (1, t, 60.0))).collect();
        let r = Route::new(&inst, 2, acts, dis);
        assert_eq!(r.validate(&inst), vec![]);
        let c = r.coverage(&inst);
        assert_eq!(c.arcs.get(&(1, 0)), Some(&2));
        assert_eq!(c.ends.get(&1), Some(&2));
        assert!((c.g_sum[&1] - r.total_discharge()).abs() < 1e-12);
    }

    #[test]
    fn zero_duals_give_route_cost() {
        let inst = one_one();
        let acts = timed_actions(&inst, 1, 0, &[Node::Shelter(0)]);
        let w = Route::new(&inst, 1, acts.clone(), vec![]).visits(&inst)[0];
        let r = Route::new(&inst, 1, acts, (w.arrive..w.depart).map(|t| (0, t, 40.0)).collect());
        let mut d = DualPrices::zeros(&inst);
        assert_eq!(r.reduced_cost(&inst, &d), r.cost);
        d.pi[0] = r.cost / r.total_discharge() + 1.0;
        assert!(r.reduced_cost(&inst, &d) < 0.0);
    }

    #[test]
    fn late_departure_is_beyond_horizon() {
        let inst = one_one();
        let acts = timed_actions(&inst, 0, inst.t_last() - 1, &[Node::Shelter(0)]);
        let r = Route::new(&inst, 0, acts, vec![]);
        assert!(r.validate(&inst).iter().any(|v| matches!(v, Violation::BeyondHorizon(_))));
    }
}
