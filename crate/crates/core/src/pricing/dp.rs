//! DP over charging-station visits, chaining labeled segments from the
//! depot through stations and back.

use std::collections::BTreeSet;

use super::labeling::{label_from, label_segment, LabelingOptions, SegmentPath, SegmentQuery, SegmentTable};
use super::{best_route_for_routing, branched_routings, price_branched, top_columns, PricingConfig, TypePricing};
use crate::instance::{Instance, Node};
use crate::master::{BranchBoundSet, DualPrices};
use crate::route::{Route, RouteAction};

/// How `(station, arrival)` was reached.
#[derive(Debug, Clone)]
pub struct Pred {
    pub from: Node,
    /// Arrival slot at `from`; unused for the depot.
    pub from_arrive: usize,
    pub depart: usize,
    pub segment: SegmentPath,
}

#[derive(Debug, Clone)]
pub struct DpTable {
    /// `rc[j][t]`: cheapest reduced cost of arriving at station `j` in slot `t`.
    pub rc: Vec<Vec<f64>>,
    pub pred: Vec<Vec<Option<Pred>>>,
    /// Earliest slot any bus of the type can reach each station.
    pub t_min: Vec<usize>,
    /// Completed routes ending at the depot, one per source.
    pub finals: Vec<(f64, Pred)>,
    pub segments_labeled: usize,
}

impl DpTable {
    /// Reduced cost of standing at `l` in slot `t`; the depot costs nothing.
    pub fn value(&self, l: Node, t: usize) -> f64 {
        match l {
            Node::Depot => 0.0,
            Node::Station(j) => self.rc[j].get(t).copied().unwrap_or(f64::INFINITY),
            Node::Shelter(_) => f64::INFINITY,
        }
    }

    fn actions(&self, inst: &Instance, last: &Pred) -> Vec<RouteAction> {
        let mut chain = vec![last];
        let mut p = last;
        while let Node::Station(j) = p.from {
            p = self.pred[j][p.from_arrive].as_ref().expect("finite entries have a predecessor");
            chain.push(p);
        }
        chain.reverse();
        let mut out = vec![];
        for p in chain {
            out.extend(p.segment.actions(inst, p.from, p.depart));
        }
        out
    }
}

/// Earliest arrival of type `k` at each station after one shelter stay.
pub fn station_t_min(inst: &Instance, k: usize) -> Vec<usize> {
    let net = &inst.network;
    (0..inst.n_stations())
        .map(|j| {
            inst.shelters_of(k)
                .iter()
                .map(|&i| {
                    let s = Node::Shelter(i);
                    net.travel(k, Node::Depot, s) + net.service(s) + net.travel(k, s, Node::Station(j))
                })
                .min()
                .unwrap_or(usize::MAX)
        })
        .collect()
}

fn segment_results(inst: &Instance, duals: &DualPrices, k: usize, from: Node, depart: usize, cfg: &PricingConfig, opt: &LabelingOptions) -> (Vec<SegmentPath>, usize) {
    if cfg.cache {
        let t: SegmentTable = label_from(inst, duals, k, from, depart, opt);
        return (t.best_ends(inst, k), 1);
    }
    let nt = inst.slots();
    let mut out = vec![];
    let mut runs = 0;
    let dests = (0..inst.n_stations()).map(Node::Station).chain(std::iter::once(Node::Depot));
    for to in dests {
        let horizon = if to == Node::Depot { 2 * nt + inst.max_depot_travel() } else { nt };
        for arrive in depart + 1..horizon {
            runs += 1;
            if let Some(p) = label_segment(inst, duals, &SegmentQuery { k, from, depart, to, arrive }, opt) {
                out.push(p);
            }
        }
    }
    (out, runs)
}

/// Fills the table for type `k`.
pub fn fill_table(inst: &Instance, duals: &DualPrices, k: usize, cfg: &PricingConfig) -> DpTable {
    let net = &inst.network;
    let nt = inst.slots();
    let t2 = inst.t_last();
    let nj = inst.n_stations();
    let opt = LabelingOptions { prune: cfg.prune, max_shelters: cfg.max_segment_shelters };
    let mut tab = DpTable {
        rc: vec![vec![f64::INFINITY; nt]; nj],
        pred: vec![vec![None; nt]; nj],
        t_min: station_t_min(inst, k),
        finals: vec![],
        segments_labeled: 0,
    };
    // Sources by departure slot: the depot at every slot, a station once its arrival is final.
    for depart in 0..t2 {
        let mut sources: Vec<(Node, usize, f64)> = vec![(Node::Depot, 0, 0.0)];
        for j in 0..nj {
            let sj = net.service(Node::Station(j));
            if depart >= sj && tab.rc[j][depart - sj].is_finite() {
                sources.push((Node::Station(j), depart - sj, tab.rc[j][depart - sj]));
            }
        }
        for (from, from_arrive, base) in sources {
            let (paths, runs) = segment_results(inst, duals, k, from, depart, cfg, &opt);
            tab.segments_labeled += runs;
            let mut best_final: Option<(f64, Pred)> = None;
            for seg in paths {
                let total = base + seg.rc;
                let pred = Pred { from, from_arrive, depart, segment: seg.clone() };
                match seg.to {
                    Node::Station(j) => {
                        debug_assert!(seg.arrive >= tab.t_min[j]);
                        if total < tab.rc[j][seg.arrive] {
                            tab.rc[j][seg.arrive] = total;
                            tab.pred[j][seg.arrive] = Some(pred);
                        }
                    }
                    Node::Depot => {
                        if best_final.as_ref().map_or(true, |b| total < b.0) {
                            best_final = Some((total, pred));
                        }
                    }
                    Node::Shelter(_) => unreachable!(),
                }
            }
            if let Some(f) = best_final {
                tab.finals.push(f);
            }
        }
    }
    tab
}

/// Heuristic pricing through the station DP.
pub fn price_dp(inst: &Instance, duals: &DualPrices, k: usize, branches: &BranchBoundSet, cfg: &PricingConfig) -> TypePricing {
    let (forbidden, priced) = branched_routings(k, duals, branches);
    let tab = fill_table(inst, duals, k, cfg);
    let mut finals: Vec<&(f64, Pred)> = tab.finals.iter().collect();
    finals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cands: Vec<(Route, f64)> = price_branched(inst, duals, &priced);
    let mut seen = BTreeSet::new();
    let want = cfg.max_columns.max(1);
    let mut taken = 0;
    for (_, p) in finals {
        if taken >= want {
            break;
        }
        let acts = tab.actions(inst, p);
        let Some(r) = best_route_for_routing(inst, k, acts, duals) else {
            log::warn!("DP produced an infeasible routing for type {}", k + 1);
            continue;
        };
        let key = r.routing_key();
        if forbidden.contains(&key) || priced.contains(&key) || !seen.insert(key) {
            continue;
        }
        let rc = r.reduced_cost(inst, duals);
        cands.push((r, rc));
        taken += 1;
    }
    let min_rc = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    TypePricing { k, columns: top_columns(cands, cfg.max_columns), min_rc, proven: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{desk_instance, DeskSpec};
    use crate::pricing::PricingEngine;

    #[test]
    fn boundaries_hold() {
        let inst = desk_instance(&DeskSpec { slots: 16, ..Default::default() });
        let mut d = DualPrices::zeros(&inst);
        d.pi[0] = 1e4;
        for k in 0..3 {
            let tab = fill_table(&inst, &d, k, &PricingConfig { engine: PricingEngine::Dp, ..Default::default() });
            for t in 0..inst.slots() {
                assert_eq!(tab.value(Node::Depot, t), 0.0);
            }
            for (j, &tm) in tab.t_min.iter().enumerate() {
                assert!((0..tm.min(inst.slots())).all(|t| tab.rc[j][t].is_infinite()));
            }
        }
    }

    #[test]
    fn cached_and_uncached_agree() {
        let inst = desk_instance(&DeskSpec { slots: 14, ..Default::default() });
        let mut d = DualPrices::zeros(&inst);
        d.pi[0] = 3e3;
        let base = PricingConfig { engine: PricingEngine::Dp, max_columns: 3, ..Default::default() };
        for k in 0..3 {
            let a = price_dp(&inst, &d, k, &BranchBoundSet::default(), &base);
            let b = price_dp(&inst, &d, k, &BranchBoundSet::default(), &PricingConfig { cache: false, ..base });
            let ka: Vec<_> = a.columns.iter().map(|c| (c.0.key(), c.1)).collect();
            let kb: Vec<_> = b.columns.iter().map(|c| (c.0.key(), c.1)).collect();
            assert_eq!(ka, kb);
        }
    }
}
