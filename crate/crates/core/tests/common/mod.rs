#![allow(dead_code)]

use esbilr::instance::{desk_instance, DemandShape, DeskSpec, Instance, Node};
use esbilr::master::lp::{lp_solve, LpProblem, LpStatus, Sense};
use esbilr::master::DualPrices;
use esbilr::route::{Route, RouteAction, RoutingKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small instances the compact oracle solves quickly: at most two shelters,
/// one station, twelve slots, and one or two buses per type.
pub fn oracle_suite() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = vec![];
    for n in 0..20 {
        let shelters = if n % 2 == 0 { 1 } else { 2 };
        let slots = [8, 10, 12][n % 3];
        let buses = if shelters == 2 && slots == 12 {
            [1, 1, 1]
        } else {
            [rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=2)]
        };
        let spec = DeskSpec {
            shelters,
            stations: 1,
            slots,
            buses,
            seed: 100 + n as u64,
            mean_demand: [15.0, 40.0, 70.0, 110.0][n % 4],
            demand_slots: None,
            penalty: 10_000.0,
            shape: DemandShape::Uniform,
        };
        let mut inst = desk_instance(&spec);
        inst.name = format!("{}#{n}", inst.name);
        out.push(inst);
    }
    out
}

/// Every routing of type `k` that respects timing, arc and horizon rules.
/// Energy feasibility is left to the discharge LP.
pub fn enumerate_routings(inst: &Instance, k: usize) -> Vec<Vec<RouteAction>> {
    let net = &inst.network;
    let t2 = inst.t_last();
    let shelters = inst.shelters_of(k);
    let mut out = vec![];
    fn dfs(inst: &Instance, k: usize, shelters: &[usize], acts: &mut Vec<RouteAction>, i: usize, d: usize, out: &mut Vec<Vec<RouteAction>>) {
        let net = &inst.network;
        let t2 = inst.t_last();
        let s = Node::Shelter(i);
        acts.push(RouteAction::new(s, Node::Depot, d));
        out.push(acts.clone());
        acts.pop();
        for &q in shelters.iter().filter(|&&q| q != i) {
            let qs = Node::Shelter(q);
            let nd = d + net.travel(k, s, qs) + net.service(qs);
            if nd < t2 {
                acts.push(RouteAction::new(s, qs, d));
                dfs(inst, k, shelters, acts, q, nd, out);
                acts.pop();
            }
        }
        for j in 0..inst.n_stations() {
            let c = Node::Station(j);
            let cd = d + net.travel(k, s, c) + net.service(c);
            if cd >= t2 {
                continue;
            }
            for &q in shelters {
                let qs = Node::Shelter(q);
                let nd = cd + net.travel(k, c, qs) + net.service(qs);
                if nd < t2 {
                    acts.push(RouteAction::new(s, c, d));
                    acts.push(RouteAction::new(c, qs, cd));
                    dfs(inst, k, shelters, acts, q, nd, out);
                    acts.pop();
                    acts.pop();
                }
            }
        }
    }
    for t0 in 0..t2 {
        for &i in &shelters {
            let s = Node::Shelter(i);
            let d = t0 + net.travel(k, Node::Depot, s) + net.service(s);
            if d < t2 {
                let mut acts = vec![RouteAction::new(Node::Depot, s, t0)];
                dfs(inst, k, &shelters, &mut acts, i, d, &mut out);
            }
        }
    }
    out
}

/// Best discharge for a fixed routing by LP over every SOC checkpoint.
/// `None` when the routing cannot meet the minimum discharge.
pub fn lp_best_route(inst: &Instance, k: usize, actions: &[RouteAction], duals: &DualPrices) -> Option<Route> {
    let net = &inst.network;
    let ty = &inst.types[k];
    let probe = Route::new(inst, k, actions.to_vec(), vec![]);
    let visits = probe.visits(inst);
    let mut p = LpProblem::default();
    let mut slots = vec![];
    for v in &visits {
        for t in v.arrive..v.depart {
            let col = p.add_var(-duals.energy_value(v.shelter, t), ty.discharge_min, ty.usable(), false);
            slots.push((v.shelter, t, col));
        }
    }
    // Walk the route: the SOC must stay above the floor after every arrival and every serving slot.
    let mut travel = 0.0;
    let mut since_charge: Vec<usize> = vec![];
    let mut vi = 0;
    let mut si = 0;
    for a in actions {
        travel += net.energy(k, a.from, a.to);
        let coeffs: Vec<(usize, f64)> = since_charge.iter().map(|&c| (c, 1.0)).collect();
        p.add_row(coeffs, Sense::Le, ty.cap_max - ty.cap_min - travel);
        match a.to {
            Node::Shelter(_) => {
                let v = visits[vi];
                vi += 1;
                for _ in v.arrive..v.depart {
                    since_charge.push(slots[si].2);
                    si += 1;
                    let coeffs: Vec<(usize, f64)> = since_charge.iter().map(|&c| (c, 1.0)).collect();
                    p.add_row(coeffs, Sense::Le, ty.cap_max - ty.cap_min - travel);
                }
            }
            _ => {
                travel = 0.0;
                since_charge.clear();
            }
        }
    }
    let s = lp_solve(&p);
    if s.status != LpStatus::Optimal {
        return None;
    }
    let dis = slots.iter().map(|&(i, t, c)| (i, t, s.primal[c])).collect();
    let r = Route::new(inst, k, actions.to_vec(), dis);
    Some(r)
}

/// Minimum reduced cost over every feasible route of type `k`, skipping
/// `forbidden` routings.
pub fn brute_force_min(inst: &Instance, k: usize, duals: &DualPrices, forbidden: &[RoutingKey]) -> Option<(f64, Route)> {
    let mut best: Option<(f64, Route)> = None;
    for acts in enumerate_routings(inst, k) {
        if forbidden.iter().any(|f| f.esb_type == k && f.actions == acts) {
            continue;
        }
        let Some(r) = lp_best_route(inst, k, &acts, duals) else { continue };
        assert!(r.validate(inst).is_empty(), "oracle route invalid: {:?}", r.validate(inst));
        let rc = r.reduced_cost(inst, duals);
        if best.as_ref().map_or(true, |b| rc < b.0) {
            best = Some((rc, r));
        }
    }
    best
}

/// Random dual vector with the scale of real master duals.
pub fn random_duals(inst: &Instance, rng: &mut ChaCha8Rng, shift: bool) -> DualPrices {
    let mut d = DualPrices::zeros(inst);
    for p in d.pi.iter_mut() {
        *p = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..4000.0) };
    }
    for v in d.psi.iter_mut() {
        *v = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..50_000.0) };
    }
    let small = |rng: &mut ChaCha8Rng, scale: f64| if rng.gen_bool(0.7) { 0.0 } else { rng.gen_range(-scale..scale) };
    for v in d.mu.iter_mut() {
        *v = small(rng, 500.0);
    }
    for row in d.mu_k.iter_mut() {
        for v in row.iter_mut() {
            *v = small(rng, 500.0);
        }
    }
    for row in d.rho.iter_mut() {
        for v in row.iter_mut() {
            *v = small(rng, 300.0);
        }
    }
    for v in d.theta.iter_mut() {
        *v = small(rng, 2000.0);
    }
    for row in d.eta.iter_mut() {
        for v in row.iter_mut() {
            *v = small(rng, 2000.0);
        }
    }
    if shift {
        d.delta = Some((0..inst.n_shelters()).map(|_| (0..inst.slots()).map(|_| small(rng, 3000.0).abs()).collect()).collect());
    }
    d
}

pub fn desk(shelters: usize, slots: usize, buses: [u32; 3], seed: u64, mean_demand: f64) -> Instance {
    desk_instance(&DeskSpec {
        shelters,
        stations: 1,
        slots,
        buses,
        seed,
        mean_demand,
        demand_slots: None,
        penalty: 10_000.0,
        shape: DemandShape::Uniform,
    })
}

/// One pricing comparison: exact engine against enumeration.
#[derive(Debug)]
pub struct Certificate {
    pub k: usize,
    pub exact: f64,
    pub brute: f64,
    pub forbidden: usize,
}

impl Certificate {
    pub fn agrees(&self) -> bool {
        if self.exact.is_infinite() || self.brute.is_infinite() {
            return self.exact == self.brute;
        }
        (self.exact - self.brute).abs() <= 1e-6 * self.brute.abs().max(1.0)
    }
}

/// Prices every type of `inst` under `draws` random dual vectors with the
/// exact engine and by enumeration. Every other draw forbids the routing
/// enumeration found best, as a routing branch would.
pub fn certificates(inst: &Instance, seed: u64, draws: usize) -> Vec<Certificate> {
    use esbilr::master::lp::Sense as S;
    use esbilr::master::{Aggregate, BranchBound, BranchBoundSet};
    use esbilr::pricing::exact::price_exact;
    use esbilr::pricing::{PricingConfig, PricingEngine};

    let cfg = PricingConfig { engine: PricingEngine::Exact, dp_first: false, cutoff: false, ..PricingConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![];
    for d in 0..draws {
        let duals = random_duals(inst, &mut rng, d % 3 == 2);
        for k in 0..inst.n_types() {
            let mut branches = BranchBoundSet::default();
            if d % 2 == 1 {
                if let Some((_, r)) = brute_force_min(inst, k, &duals, &[]) {
                    branches = branches.with(BranchBound { agg: Aggregate::Routing(r.routing_key()), sense: S::Le, rhs: 0.0 });
                }
            }
            let forbidden = branches.forbidden_routings();
            let brute = brute_force_min(inst, k, &duals, &forbidden).map_or(f64::INFINITY, |b| b.0);
            let tp = price_exact(inst, &duals, k, &branches, &cfg);
            assert!(tp.proven, "exact pricing stopped early on {}", inst.name);
            for (r, rc) in &tp.columns {
                assert!(r.validate(inst).is_empty(), "priced column invalid: {:?}", r.validate(inst));
                assert!(!forbidden.contains(&r.routing_key()), "forbidden routing priced");
                assert!((r.reduced_cost(inst, &duals) - rc).abs() <= 1e-6 * rc.abs().max(1.0));
            }
            out.push(Certificate { k, exact: tp.min_rc, brute, forbidden: forbidden.len() });
        }
    }
    out
}
