//! Segment labeling: shelter-visiting paths between two charges, from a
//! depot or station departure to a station or depot arrival.

use std::collections::BTreeMap;

use crate::instance::{Instance, Node};
use crate::master::DualPrices;
use crate::route::RouteAction;

/// Partial path ending with service at a shelter.
#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub shelter: usize,
    /// First serving slot.
    pub arrive: usize,
    pub depart: usize,
    /// Reduced cost so far, counting the minimum discharge at every serving
    /// slot but not the surplus.
    pub rc: f64,
    /// Travel energy plus minimum discharge committed so far.
    pub used: f64,
    /// Largest energy value over the serving slots so far.
    pub wmax: f64,
    pub visits: usize,
    pub parent: Option<usize>,
}

impl Label {
    /// SOC on leaving the shelter if only the minimum were discharged.
    pub fn soc(&self, cap_max: f64) -> f64 {
        cap_max - self.used
    }

    /// `self` is at least as good as `o` for every completion.
    pub fn dominates(&self, o: &Label) -> bool {
        self.shelter == o.shelter
            && self.arrive == o.arrive
            && self.rc <= o.rc
            && self.used <= o.used
            && self.wmax >= o.wmax
            && self.visits <= o.visits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SegmentQuery {
    pub k: usize,
    /// Depot or station.
    pub from: Node,
    /// Slot the bus leaves `from`, fully charged.
    pub depart: usize,
    /// Station or depot.
    pub to: Node,
    /// Slot the bus reaches `to`.
    pub arrive: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LabelingOptions {
    pub prune: bool,
    pub max_shelters: usize,
}

impl Default for LabelingOptions {
    fn default() -> Self {
        LabelingOptions { prune: true, max_shelters: 4 }
    }
}

/// Best completed segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPath {
    pub rc: f64,
    /// `(shelter, arrival slot)` in visiting order.
    pub stops: Vec<(usize, usize)>,
    pub to: Node,
    /// Slot the bus leaves the last shelter.
    pub leave: usize,
    pub arrive: usize,
}

impl SegmentPath {
    pub fn actions(&self, inst: &Instance, from: Node, depart: usize) -> Vec<RouteAction> {
        let net = &inst.network;
        let mut out = vec![];
        let mut at = from;
        let mut t = depart;
        for &(i, a) in &self.stops {
            out.push(RouteAction::new(at, Node::Shelter(i), t));
            at = Node::Shelter(i);
            t = a + net.service(at);
        }
        out.push(RouteAction::new(at, self.to, self.leave));
        out
    }
}

/// All labels grown from one fully charged departure, with the best
/// completion per destination.
#[derive(Debug, Clone)]
pub struct SegmentTable {
    pub from: Node,
    pub depart: usize,
    pub labels: Vec<Label>,
    pub ends: BTreeMap<(Node, usize), (f64, usize)>,
    pub generated: usize,
}

impl SegmentTable {
    fn path(&self, inst: &Instance, k: usize, to: Node, arrive: usize, rc: f64, mut idx: usize) -> SegmentPath {
        let mut stops = vec![];
        let leave = self.labels[idx].depart;
        loop {
            let l = &self.labels[idx];
            stops.push((l.shelter, l.arrive));
            match l.parent {
                Some(p) => idx = p,
                None => break,
            }
        }
        stops.reverse();
        debug_assert_eq!(leave + inst.network.travel(k, Node::Shelter(stops[stops.len() - 1].0), to), arrive);
        SegmentPath { rc, stops, to, leave, arrive }
    }

    pub fn best(&self, inst: &Instance, k: usize, to: Node, arrive: usize) -> Option<SegmentPath> {
        self.ends.get(&(to, arrive)).map(|&(rc, idx)| self.path(inst, k, to, arrive, rc, idx))
    }

    pub fn best_ends(&self, inst: &Instance, k: usize) -> Vec<SegmentPath> {
        self.ends.iter().map(|(&(to, a), &(rc, idx))| self.path(inst, k, to, a, rc, idx)).collect()
    }
}

/// Grows every label from `from` at `depart` for type `k`.
pub fn label_from(inst: &Instance, duals: &DualPrices, k: usize, from: Node, depart: usize, opt: &LabelingOptions) -> SegmentTable {
    let net = &inst.network;
    let ty = &inst.types[k];
    let usable = ty.usable();
    let gmin = ty.discharge_min;
    let fx = inst.energy_cost;
    let t2 = inst.t_last();
    let shelters = inst.shelters_of(k);
    let closers: Vec<Node> = (0..inst.n_stations()).map(Node::Station).chain(std::iter::once(Node::Depot)).collect();
    let min_close = |i: usize| closers.iter().map(|&c| net.energy(k, Node::Shelter(i), c)).fold(f64::INFINITY, f64::min);

    let mut table = SegmentTable { from, depart, labels: vec![], ends: BTreeMap::new(), generated: 0 };
    // Labels waiting to be extended, keyed by departure slot then shelter.
    let mut buckets: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();

    // Reduced cost at minimum discharge, minimum energy, and best energy value of one service stay.
    let serve = |i: usize, a: usize| -> (f64, f64, f64) {
        let s = net.service(Node::Shelter(i));
        let mut rc = 0.0;
        let mut wmax = f64::NEG_INFINITY;
        for t in a..a + s {
            let w = duals.energy_value(i, t);
            rc += duals.serve_charge(k, i, t) - w * gmin;
            wmax = wmax.max(w);
        }
        (rc, s as f64 * gmin, wmax)
    };

    let push = |table: &mut SegmentTable, buckets: &mut BTreeMap<(usize, usize), Vec<usize>>, l: Label| {
        table.generated += 1;
        if l.used + min_close(l.shelter) > usable + 1e-9 {
            return;
        }
        let key = (l.depart, l.shelter);
        let bucket = buckets.entry(key).or_default();
        if opt.prune {
            if bucket.iter().any(|&o| table.labels[o].dominates(&l)) {
                return;
            }
            bucket.retain(|&o| !l.dominates(&table.labels[o]));
        }
        table.labels.push(l);
        bucket.push(table.labels.len() - 1);
    };

    let charge_in = |i: usize| -> f64 {
        match from {
            Node::Depot => ty.invest_cost + duals.psi[k] + duals.end_charge(k, i),
            Node::Station(j) => duals.trip_charge(k, i, j),
            Node::Shelter(_) => unreachable!("segments start at the depot or a station"),
        }
    };
    for &i in &shelters {
        let s = Node::Shelter(i);
        let a = depart + net.travel(k, from, s);
        let d = a + net.service(s);
        if d >= t2 {
            continue;
        }
        let (rc, g, w) = serve(i, a);
        let l = Label {
            shelter: i,
            arrive: a,
            depart: d,
            rc: charge_in(i) + fx * net.energy(k, from, s) + rc,
            used: net.energy(k, from, s) + g,
            wmax: w,
            visits: 1,
            parent: None,
        };
        push(&mut table, &mut buckets, l);
    }

    while let Some((_, idxs)) = buckets.pop_first() {
        for idx in idxs {
            let l = table.labels[idx].clone();
            let here = Node::Shelter(l.shelter);
            for &c in &closers {
                let e = net.energy(k, here, c);
                let used = l.used + e;
                if used > usable + 1e-9 {
                    continue;
                }
                let arrive = l.depart + net.travel(k, here, c);
                let charge = match c {
                    Node::Station(j) => {
                        if arrive + net.service(c) >= t2 {
                            continue;
                        }
                        duals.trip_charge(k, l.shelter, j)
                    }
                    _ => duals.end_charge(k, l.shelter),
                };
                let surplus = (usable - used).max(0.0);
                let rc = l.rc + fx * e + charge - l.wmax.max(0.0) * surplus;
                let e = table.ends.entry((c, arrive)).or_insert((f64::INFINITY, idx));
                if rc < e.0 {
                    *e = (rc, idx);
                }
            }
            if l.visits >= opt.max_shelters {
                continue;
            }
            for &q in &shelters {
                if q == l.shelter {
                    continue;
                }
                let qs = Node::Shelter(q);
                let a = l.depart + net.travel(k, here, qs);
                let d = a + net.service(qs);
                if d >= t2 {
                    continue;
                }
                let (rc, g, w) = serve(q, a);
                let nl = Label {
                    shelter: q,
                    arrive: a,
                    depart: d,
                    rc: l.rc + fx * net.energy(k, here, qs) + rc,
                    used: l.used + net.energy(k, here, qs) + g,
                    wmax: l.wmax.max(w),
                    visits: l.visits + 1,
                    parent: Some(idx),
                };
                push(&mut table, &mut buckets, nl);
            }
        }
    }
    table
}

/// Best segment for one query, or `None` when no shelter-visiting path
/// connects the two ends.
pub fn label_segment(inst: &Instance, duals: &DualPrices, q: &SegmentQuery, opt: &LabelingOptions) -> Option<SegmentPath> {
    if q.arrive <= q.depart || q.from.is_shelter() || q.to.is_shelter() {
        return None;
    }
    label_from(inst, duals, q.k, q.from, q.depart, opt).best(inst, q.k, q.to, q.arrive)
}

/// Drops every label dominated by another one in the set; among identical
/// labels the first is kept.
pub fn dominance_prune(labels: &[Label]) -> Vec<Label> {
    let mut keep: Vec<Label> = vec![];
    for l in labels {
        if keep.iter().any(|o| o.dominates(l)) {
            continue;
        }
        keep.retain(|o| !l.dominates(o));
        keep.push(l.clone());
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{desk_instance, DeskSpec};

    fn lab(rc: f64, used: f64, wmax: f64, arrive: usize) -> Label {
        Label { shelter: 0, arrive, depart: arrive + 2, rc, used, wmax, visits: 1, parent: None }
    }

    #[test]
    fn identical_state_keeps_cheaper() {
        let out = dominance_prune(&[lab(5.0, 10.0, 1.0, 3), lab(4.0, 10.0, 1.0, 3)]);
        assert_eq!(out, vec![lab(4.0, 10.0, 1.0, 3)]);
    }

    #[test]
    fn incomparable_labels_survive() {
        let out = dominance_prune(&[lab(4.0, 12.0, 1.0, 3), lab(5.0, 10.0, 1.0, 3)]);
        assert_eq!(out.len(), 2);
        let out = dominance_prune(&[lab(4.0, 10.0, 1.0, 3), lab(5.0, 10.0, 1.0, 4)]);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn too_short_window_has_no_segment() {
        let inst = desk_instance(&DeskSpec { slots: 12, ..Default::default() });
        let d = DualPrices::zeros(&inst);
        let q = SegmentQuery { k: 0, from: Node::Depot, depart: 0, to: Node::Station(0), arrive: 1 };
        assert_eq!(label_segment(&inst, &d, &q, &LabelingOptions::default()), None);
    }

    #[test]
    fn zero_duals_transfer_costs_travel() {
        let inst = desk_instance(&DeskSpec { slots: 16, ..Default::default() });
        let d = DualPrices::zeros(&inst);
        let net = &inst.network;
        let (c, s) = (Node::Station(0), Node::Shelter(0));
        let arrive = 0 + net.travel(0, c, s) + net.service(s) + net.travel(0, s, c);
        let q = SegmentQuery { k: 0, from: c, depart: 0, to: c, arrive };
        let p = label_segment(&inst, &d, &q, &LabelingOptions::default()).unwrap();
        let want = inst.energy_cost * (net.energy(0, c, s) + net.energy(0, s, c));
        assert!((p.rc - want).abs() < 1e-9);
        assert_eq!(p.stops.len(), 1);
    }
}
