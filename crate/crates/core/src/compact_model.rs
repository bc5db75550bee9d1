//! The full time-indexed MILP over every available bus, used as an exact
//! oracle on small instances. The per-bus block is shared with the exact
//! pricing engine.

use std::collections::BTreeMap;

use crate::instance::{Instance, Node};
use crate::master::lp::{milp_solve_highs_below, LpProblem, MilpStatus, Sense};
use crate::master::search::{branch_and_bound, SearchConfig};
use crate::master::Plan;
use crate::route::{Route, RouteAction};

#[derive(Debug, thiserror::Error)]
pub enum CompactError {
    #[error("model too large: {vars} variables exceed the cap of {cap}")]
    TooLarge { vars: usize, cap: usize },
    #[error("inconsistent routing for bus {bus}: {msg}")]
    Inconsistent { bus: String, msg: String },
}

/// Decision variables of one bus. Shelter positions index `shelters`.
#[derive(Debug, Clone)]
pub struct BusBlock {
    pub k: usize,
    pub h: usize,
    pub shelters: Vec<usize>,
    /// Successor nodes per shelter position: other compatible shelters, then stations.
    pub targets: Vec<Vec<Node>>,
    pub u: Vec<Vec<usize>>,
    pub r: Vec<Vec<usize>>,
    pub w: Vec<Vec<usize>>,
    pub g: Vec<Vec<usize>>,
    /// `[shelter pos][target pos][slot]`.
    pub x: Vec<Vec<Vec<usize>>>,
    /// `[station][shelter pos][slot]`.
    pub z: Vec<Vec<Vec<usize>>>,
    pub soc: Vec<usize>,
}

impl BusBlock {
    pub fn label(&self) -> String {
        format!("b{}.{}", self.k + 1, self.h + 1)
    }

    pub fn pos(&self, i: usize) -> Option<usize> {
        self.shelters.iter().position(|&s| s == i)
    }

    /// Every routing binary (u, x, z, r).
    pub fn routing_vars(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.u.iter().chain(&self.r).flatten().copied().collect();
        v.extend(self.x.iter().flatten().flatten());
        v.extend(self.z.iter().flatten().flatten());
        v
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompactOptions {
    pub symmetry: bool,
    pub shift: bool,
    pub max_vars: usize,
}

impl Default for CompactOptions {
    fn default() -> Self {
        CompactOptions { symmetry: true, shift: false, max_vars: 60_000 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CompactModel {
    pub lp: LpProblem,
    pub col_names: Vec<String>,
    pub row_names: Vec<String>,
    pub row_family: Vec<&'static str>,
    pub buses: Vec<BusBlock>,
    pub unmet: Vec<usize>,
    pub shifted: Vec<(usize, usize, usize)>,
    pub shift: bool,
}

impl CompactModel {
    pub fn add_var(&mut self, name: String, cost: f64, lb: f64, ub: f64, integer: bool) -> usize {
        self.col_names.push(name);
        self.lp.add_var(cost, lb, ub, integer)
    }

    /// Adds a row after merging repeated columns.
    pub fn add_row(&mut self, family: &'static str, label: String, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        let mut m: BTreeMap<usize, f64> = BTreeMap::new();
        for (j, c) in coeffs {
            *m.entry(j).or_insert(0.0) += c;
        }
        let coeffs = m.into_iter().filter(|&(_, c)| c != 0.0).collect();
        self.row_names.push(format!("{family}[{label}]"));
        self.row_family.push(family);
        self.lp.add_row(coeffs, sense, rhs)
    }

    pub fn fix_zero(&mut self, j: usize) {
        self.lp.ub[j] = 0.0;
    }

    pub fn family_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for f in &self.row_family {
            *m.entry(*f).or_insert(0) += 1;
        }
        m
    }

    pub fn to_lp_text(&self) -> String {
        self.lp.to_lp_text(&self.col_names, &self.row_names)
    }

    /// Adds the variables and all single-bus rows for bus `h` of type `k`.
    pub fn add_bus(&mut self, inst: &Instance, k: usize, h: usize) -> usize {
        let blk = build_block_vars(self, inst, k, h);
        add_block_rows(self, inst, &blk);
        self.buses.push(blk);
        self.buses.len() - 1
    }

    /// Routing-arc transport energy charged to each routing binary of `b`.
    pub fn arc_energy(&self, inst: &Instance, b: &BusBlock) -> Vec<(usize, f64)> {
        let net = &inst.network;
        let k = b.k;
        let mut out = vec![];
        for (ii, &i) in b.shelters.iter().enumerate() {
            let s = Node::Shelter(i);
            for t in 0..inst.slots() {
                out.push((b.u[ii][t], net.energy(k, Node::Depot, s)));
                out.push((b.r[ii][t], net.energy(k, s, Node::Depot)));
                for (qi, &q) in b.targets[ii].iter().enumerate() {
                    out.push((b.x[ii][qi][t], net.energy(k, s, q)));
                }
                for j in 0..inst.n_stations() {
                    out.push((b.z[j][ii][t], net.energy(k, Node::Station(j), s)));
                }
            }
        }
        out
    }
}

fn build_block_vars(m: &mut CompactModel, inst: &Instance, k: usize, h: usize) -> BusBlock {
    let net = &inst.network;
    let ty = &inst.types[k];
    let nt = inst.slots();
    let t2 = inst.t_last();
    let shelters = inst.shelters_of(k);
    let lab = format!("b{}.{}", k + 1, h + 1);
    let targets: Vec<Vec<Node>> = shelters
        .iter()
        .map(|&i| shelters.iter().filter(|&&q| q != i).map(|&q| Node::Shelter(q)).chain((0..inst.n_stations()).map(Node::Station)).collect())
        .collect();
    // Earliest slot a bus can be standing at shelter i.
    let min_in = |i: usize| -> usize {
        (0..net.n_nodes()).map(|a| net.node(a)).filter(|&a| a != Node::Shelter(i)).map(|a| net.travel(k, a, Node::Shelter(i))).min().unwrap_or(0)
    };
    let mut u = vec![];
    let mut r = vec![];
    let mut w = vec![];
    let mut g = vec![];
    let mut x = vec![];
    for (ii, &i) in shelters.iter().enumerate() {
        let s = Node::Shelter(i);
        let si = net.service(s);
        let t0i = net.travel(k, Node::Depot, s);
        let early = si + min_in(i);
        let mut uu = vec![];
        let mut rr = vec![];
        let mut ww = vec![];
        let mut gg = vec![];
        for t in 0..nt {
            let fixed = t + t0i + si >= t2;
            uu.push(m.add_var(format!("u[{lab},{s},{t}]"), 0.0, 0.0, if fixed { 0.0 } else { 1.0 }, true));
            rr.push(m.add_var(format!("r[{lab},{s},{t}]"), 0.0, 0.0, if t < early { 0.0 } else { 1.0 }, true));
            ww.push(m.add_var(format!("w[{lab},{s},{t}]"), 0.0, 0.0, if t == t2 { 0.0 } else { 1.0 }, true));
            gg.push(m.add_var(format!("g[{lab},{s},{t}]"), 0.0, 0.0, if t == t2 { 0.0 } else { ty.usable() }, false));
        }
        let mut xx = vec![];
        for &q in &targets[ii] {
            let reach = net.travel(k, s, q) + net.service(q);
            xx.push(
                (0..nt)
                    .map(|t| {
                        let fixed = t + reach >= t2 || t < early;
                        m.add_var(format!("x[{lab},{s},{q},{t}]"), 0.0, 0.0, if fixed { 0.0 } else { 1.0 }, true)
                    })
                    .collect::<Vec<_>>(),
            );
        }
        u.push(uu);
        r.push(rr);
        w.push(ww);
        g.push(gg);
        x.push(xx);
        let _ = ii;
    }
    let mut z = vec![];
    for j in 0..inst.n_stations() {
        let c = Node::Station(j);
        z.push(
            shelters
                .iter()
                .map(|&i| {
                    let s = Node::Shelter(i);
                    let reach = net.travel(k, c, s) + net.service(s);
                    (0..nt)
                        .map(|t| m.add_var(format!("z[{lab},{c},{s},{t}]"), 0.0, 0.0, if t + reach >= t2 { 0.0 } else { 1.0 }, true))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>(),
        );
    }
    let soc = (0..nt).map(|t| m.add_var(format!("soc[{lab},{t}]"), 0.0, ty.cap_min, ty.cap_max, false)).collect();
    BusBlock { k, h, shelters, targets, u, r, w, g, x, z, soc }
}

fn add_block_rows(m: &mut CompactModel, inst: &Instance, b: &BusBlock) {
    let net = &inst.network;
    let k = b.k;
    let ty = &inst.types[k];
    let nt = inst.slots();
    let t2 = inst.t_last();
    let lab = b.label();
    let ns = b.shelters.len();
    let nj = inst.n_stations();
    let count_m = inst.big_m1.max(nt as f64);
    let live = |m: &CompactModel, j: usize| m.lp.ub[j] > 0.0;
    let node = |ii: usize| Node::Shelter(b.shelters[ii]);
    let svc = |ii: usize| net.service(node(ii));
    let tt = |a: Node, c: Node| net.travel(k, a, c);
    let ee = |a: Node, c: Node| net.energy(k, a, c);
    let departs = |ii: usize, t: usize| -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = b.x[ii].iter().map(|xs| (xs[t], 1.0)).collect();
        v.push((b.r[ii][t], 1.0));
        v
    };
    let window = |lo: isize, hi: isize| -> std::ops::Range<usize> {
        let lo = lo.max(0) as usize;
        let hi = hi.min(t2 as isize);
        if hi < lo as isize {
            0..0
        } else {
            lo..hi as usize + 1
        }
    };

    m.add_row(
        "single_depot_departure",
        lab.clone(),
        b.u.iter().flatten().map(|&v| (v, 1.0)).collect(),
        Sense::Le,
        1.0,
    );

    for t in 0..nt {
        let mut c: Vec<(usize, f64)> = vec![];
        for ii in 0..ns {
            c.extend(b.x[ii].iter().map(|xs| (xs[t], 1.0)));
            c.push((b.w[ii][t], 1.0));
            c.push((b.r[ii][t], 1.0));
            for j in 0..nj {
                c.push((b.z[j][ii][t], 1.0));
            }
            c.extend((0..t).map(|tau| (b.u[ii][tau], -1.0)));
        }
        m.add_row("one_state", format!("{lab},{t}"), c, Sense::Le, 0.0);
    }

    for ii in 0..ns {
        let s = node(ii);
        let si = svc(ii);
        for t in 0..nt {
            if live(m, b.u[ii][t]) {
                let d = t + tt(Node::Depot, s) + si;
                let mut c = departs(ii, d);
                c.push((b.u[ii][t], -1.0));
                m.add_row("depot_arrival_departs", format!("{lab},{s},{t}"), c, Sense::Ge, 0.0);
            }
            for (qi, &q) in b.targets[ii].iter().enumerate() {
                let xv = b.x[ii][qi][t];
                if !live(m, xv) {
                    continue;
                }
                let d = t + tt(s, q) + net.service(q);
                match q {
                    Node::Station(j) => {
                        let mut c: Vec<(usize, f64)> = (0..ns).map(|i2| (b.z[j][i2][d], 1.0)).collect();
                        c.push((xv, -1.0));
                        m.add_row("shelter_to_station", format!("{lab},{s},{q},{t}"), c, Sense::Ge, 0.0);
                    }
                    Node::Shelter(i2) => {
                        let p2 = b.pos(i2).expect("target shelter is compatible");
                        let mut c = departs(p2, d);
                        c.push((xv, -1.0));
                        m.add_row("shelter_to_shelter", format!("{lab},{s},{q},{t}"), c, Sense::Ge, 0.0);
                    }
                    Node::Depot => unreachable!(),
                }
                let wnd = window(t as isize - si as isize, d as isize - 1);
                let mut c: Vec<(usize, f64)> = vec![];
                for tau in wnd {
                    for i2 in (0..ns).filter(|&i2| i2 != ii) {
                        c.extend(b.x[i2].iter().map(|xs| (xs[tau], 1.0)));
                    }
                    for j2 in 0..nj {
                        c.extend((0..ns).map(|i2| (b.z[j2][i2][tau], 1.0)));
                    }
                }
                c.push((xv, count_m));
                m.add_row("shelter_departure_exclusion", format!("{lab},{s},{q},{t}"), c, Sense::Le, count_m);
            }
        }
    }

    for j in 0..nj {
        let cs = Node::Station(j);
        let sj = net.service(cs);
        for ii in 0..ns {
            let s = node(ii);
            for t in 0..nt {
                let zv = b.z[j][ii][t];
                if !live(m, zv) {
                    continue;
                }
                let mut c: Vec<(usize, f64)> = vec![];
                for i2 in 0..ns {
                    let back = tt(node(i2), cs) + sj;
                    if t >= back {
                        let qi = b.targets[i2].iter().position(|&q| q == cs).expect("stations are targets");
                        c.push((b.x[i2][qi][t - back], 1.0));
                    }
                }
                if c.is_empty() {
                    m.fix_zero(zv);
                    continue;
                }
                c.push((zv, -1.0));
                m.add_row("station_departure_needs_arrival", format!("{lab},{cs},{s},{t}"), c, Sense::Ge, 0.0);
                let d = t + tt(cs, s) + svc(ii);
                let mut c = departs(ii, d);
                c.push((zv, -1.0));
                m.add_row("station_to_shelter_departs", format!("{lab},{cs},{s},{t}"), c, Sense::Ge, 0.0);
                let mut c: Vec<(usize, f64)> = vec![];
                for tau in window(t as isize - sj as isize, d as isize - 1) {
                    for j2 in (0..nj).filter(|&j2| j2 != j) {
                        c.extend((0..ns).map(|i2| (b.z[j2][i2][tau], 1.0)));
                    }
                    for i2 in 0..ns {
                        c.extend(b.x[i2].iter().map(|xs| (xs[tau], 1.0)));
                    }
                }
                c.push((zv, count_m));
                m.add_row("station_departure_exclusion", format!("{lab},{cs},{s},{t}"), c, Sense::Le, count_m);
            }
        }
    }

    for ii in 0..ns {
        let s = node(ii);
        let si = svc(ii);
        let t0i = tt(Node::Depot, s);
        for t in 0..nt {
            for (qi, &q) in b.targets[ii].iter().enumerate() {
                let xv = b.x[ii][qi][t];
                if !live(m, xv) {
                    continue;
                }
                for tau in window(t as isize - si as isize, t as isize - 1) {
                    m.add_row("serve_before_departure", format!("{lab},{s},{q},{t},{tau}"), vec![(b.w[ii][tau], 1.0), (xv, -1.0)], Sense::Ge, 0.0);
                }
                for tau in window(t as isize, (t + tt(s, q) + net.service(q)) as isize) {
                    m.add_row("no_serve_after_departure", format!("{lab},{s},{q},{t},{tau}"), vec![(b.w[ii][tau], 1.0), (xv, 1.0)], Sense::Le, 1.0);
                }
            }
            for j in 0..nj {
                let zv = b.z[j][ii][t];
                if !live(m, zv) {
                    continue;
                }
                let a = t + tt(Node::Station(j), s);
                for tau in window(t as isize, a as isize - 1) {
                    m.add_row("no_serve_while_travel_from_station", format!("{lab},C{},{s},{t},{tau}", j + 1), vec![(b.w[ii][tau], 1.0), (zv, 1.0)], Sense::Le, 1.0);
                }
                for tau in window(a as isize, (a + si) as isize - 1) {
                    m.add_row("serve_after_station", format!("{lab},C{},{s},{t},{tau}", j + 1), vec![(b.w[ii][tau], 1.0), (zv, -1.0)], Sense::Ge, 0.0);
                }
            }
            if live(m, b.u[ii][t]) {
                let uv = b.u[ii][t];
                let a = t + t0i;
                for tau in window(0, a as isize - 1) {
                    m.add_row("no_serve_before_depot_arrival", format!("{lab},{s},{t},{tau}"), vec![(b.w[ii][tau], 1.0), (uv, 1.0)], Sense::Le, 1.0);
                }
                for tau in window(a as isize, (a + si) as isize - 1) {
                    m.add_row("serve_after_depot", format!("{lab},{s},{t},{tau}"), vec![(b.w[ii][tau], 1.0), (uv, -1.0)], Sense::Ge, 0.0);
                }
            }
            for i2 in (ii + 1)..ns {
                m.add_row("single_shelter_per_slot", format!("{lab},{s},{},{t}", node(i2)), vec![(b.w[ii][t], 1.0), (b.w[i2][t], 1.0)], Sense::Le, 1.0);
            }
            let wv = b.w[ii][t];
            if !live(m, wv) {
                continue;
            }
            let mut c: Vec<(usize, f64)> = vec![];
            for tau in window(t as isize + 1, (t + si) as isize) {
                c.extend(departs(ii, tau));
            }
            c.push((wv, -1.0));
            m.add_row("service_ends_in_departure", format!("{lab},{s},{t}"), c, Sense::Ge, 0.0);
            let mut c: Vec<(usize, f64)> = vec![];
            let arrivals = |travel: usize| window(t as isize - travel as isize - si as isize, t as isize - travel as isize);
            for i2 in (0..ns).filter(|&i2| i2 != ii) {
                let qi = b.targets[i2].iter().position(|&q| q == s).expect("shelters are mutual targets");
                c.extend(arrivals(tt(node(i2), s)).map(|tau| (b.x[i2][qi][tau], 1.0)));
            }
            for j in 0..nj {
                c.extend(arrivals(tt(Node::Station(j), s)).map(|tau| (b.z[j][ii][tau], 1.0)));
            }
            c.extend(arrivals(t0i).map(|tau| (b.u[ii][tau], 1.0)));
            c.push((wv, -1.0));
            m.add_row("service_starts_with_arrival", format!("{lab},{s},{t}"), c, Sense::Ge, 0.0);
        }
    }

    for t in 0..nt {
        let mut c: Vec<(usize, f64)> = vec![];
        for ii in 0..ns {
            for tau in 0..=t {
                c.push((b.r[ii][tau], 1.0));
                c.push((b.u[ii][tau], -1.0));
            }
        }
        m.add_row("return_after_departure", format!("{lab},{t}"), c, Sense::Le, 0.0);
        let mut c: Vec<(usize, f64)> = vec![];
        for ii in 0..ns {
            c.extend(((t + 1)..nt).map(|tau| (b.r[ii][tau], 1.0)));
            c.push((b.u[ii][t], -1.0));
        }
        m.add_row("return_required", format!("{lab},{t}"), c, Sense::Ge, 0.0);
        let mut c: Vec<(usize, f64)> = vec![];
        for ii in 0..ns {
            for tau in t..nt {
                c.push((b.w[ii][tau], 1.0));
                c.extend(b.x[ii].iter().map(|xs| (xs[tau], 1.0)));
                c.extend((0..nj).map(|j| (b.z[j][ii][tau], 1.0)));
            }
            c.push((b.r[ii][t], count_m));
        }
        m.add_row("idle_after_return", format!("{lab},{t}"), c, Sense::Le, count_m);
    }
    for ii in 0..ns {
        let s = node(ii);
        for t in 0..nt {
            if !live(m, b.r[ii][t]) {
                continue;
            }
            for tau in window(t as isize - svc(ii) as isize, t as isize - 1) {
                m.add_row("serve_before_return", format!("{lab},{s},{t},{tau}"), vec![(b.w[ii][tau], 1.0), (b.r[ii][t], -1.0)], Sense::Ge, 0.0);
            }
        }
    }

    // Energy.
    let m2 = |si: usize| inst.big_m2.max((si + 1) as f64 * ty.usable());
    for ii in 0..ns {
        let s = node(ii);
        let si = svc(ii);
        for t in 0..nt {
            let uv = b.u[ii][t];
            if live(m, uv) {
                let a = t + tt(Node::Depot, s);
                let rr = ee(Node::Depot, s);
                let big = inst.big_m1.max(ty.cap_max + rr);
                let lv = ty.cap_max - rr;
                m.add_row("soc_after_depot", format!("{lab},{s},{t},up"), vec![(b.soc[a], 1.0), (uv, big)], Sense::Le, lv + big);
                m.add_row("soc_after_depot", format!("{lab},{s},{t},lo"), vec![(b.soc[a], 1.0), (uv, -big)], Sense::Ge, lv - big);
            }
            for (qi, &q) in b.targets[ii].iter().enumerate() {
                let xv = b.x[ii][qi][t];
                if !live(m, xv) {
                    continue;
                }
                let a = t + tt(s, q);
                let rr = ee(s, q);
                let big = inst.big_m1.max(ty.cap_max + rr);
                m.add_row("soc_after_shelter_departure", format!("{lab},{s},{q},{t},up"), vec![(b.soc[a], 1.0), (b.soc[t], -1.0), (xv, big)], Sense::Le, -rr + big);
                m.add_row("soc_after_shelter_departure", format!("{lab},{s},{q},{t},lo"), vec![(b.soc[a], 1.0), (b.soc[t], -1.0), (xv, -big)], Sense::Ge, -rr - big);
            }
            for j in 0..nj {
                let zv = b.z[j][ii][t];
                if !live(m, zv) {
                    continue;
                }
                let cs = Node::Station(j);
                let a = t + tt(cs, s);
                let rr = ee(cs, s);
                let big = inst.big_m1.max(ty.cap_max + rr);
                let lv = ty.cap_max - rr;
                m.add_row("soc_after_station", format!("{lab},{cs},{s},{t},up"), vec![(b.soc[a], 1.0), (zv, big)], Sense::Le, lv + big);
                m.add_row("soc_after_station", format!("{lab},{cs},{s},{t},lo"), vec![(b.soc[a], 1.0), (zv, -big)], Sense::Ge, lv - big);
            }
            if t >= si {
                let mut base: Vec<(usize, f64)> = vec![(b.soc[t], 1.0), (b.soc[t - si], -1.0)];
                base.extend((t - si..t).map(|tau| (b.g[ii][tau], 1.0)));
                let big = m2(si);
                let xs: Vec<usize> = b.x[ii].iter().map(|xs| xs[t]).filter(|&v| live(m, v)).collect();
                if !xs.is_empty() {
                    let mut up = base.clone();
                    up.extend(xs.iter().map(|&v| (v, big)));
                    m.add_row("soc_after_service_x", format!("{lab},{s},{t},up"), up, Sense::Le, big);
                    let mut lo = base.clone();
                    lo.extend(xs.iter().map(|&v| (v, -big)));
                    m.add_row("soc_after_service_x", format!("{lab},{s},{t},lo"), lo, Sense::Ge, -big);
                }
                let rv = b.r[ii][t];
                if live(m, rv) {
                    let mut up = base.clone();
                    up.push((rv, big));
                    m.add_row("soc_after_service_r", format!("{lab},{s},{t},up"), up, Sense::Le, big);
                    let mut lo = base;
                    lo.push((rv, -big));
                    m.add_row("soc_after_service_r", format!("{lab},{s},{t},lo"), lo, Sense::Ge, -big);
                }
            }
            let rv = b.r[ii][t];
            if live(m, rv) {
                m.add_row("return_reserve", format!("{lab},{s},{t}"), vec![(b.soc[t], 1.0), (rv, -ee(s, Node::Depot))], Sense::Ge, ty.cap_min);
            }
            let gm = inst.big_m1.max(ty.usable());
            m.add_row("discharge_link", format!("{lab},{s},{t},lo"), vec![(b.g[ii][t], 1.0), (b.w[ii][t], -ty.discharge_min)], Sense::Ge, 0.0);
            m.add_row("discharge_link", format!("{lab},{s},{t},up"), vec![(b.g[ii][t], 1.0), (b.w[ii][t], -gm)], Sense::Le, 0.0);
        }
    }
}

/// Builds the compact model over every available bus of every type.
pub fn build_compact(inst: &Instance, opt: &CompactOptions) -> Result<CompactModel, CompactError> {
    let nt = inst.slots();
    let est: usize = inst
        .types
        .iter()
        .enumerate()
        .map(|(k, ty)| {
            let ns = inst.shelters_of(k).len();
            ty.available_count as usize * nt * (1 + ns * (4 + ns + 2 * inst.n_stations()))
        })
        .sum();
    if est > opt.max_vars {
        return Err(CompactError::TooLarge { vars: est, cap: opt.max_vars });
    }
    let mut m = CompactModel { shift: opt.shift, ..Default::default() };
    for k in 0..inst.n_types() {
        for h in 0..inst.types[k].available_count as usize {
            m.add_bus(inst, k, h);
        }
    }
    let ni = inst.n_shelters();
    m.unmet = (0..ni).map(|i| m.add_var(format!("unmet[S{}]", i + 1), inst.demands.penalty[i], 0.0, f64::INFINITY, false)).collect();
    for bi in 0..m.buses.len() {
        let b = m.buses[bi].clone();
        let ty = &inst.types[b.k];
        for (v, e) in m.arc_energy(inst, &b) {
            m.lp.obj[v] += inst.energy_cost * e;
        }
        for &v in b.u.iter().flatten() {
            m.lp.obj[v] += ty.invest_cost;
        }
    }
    for i in 0..ni {
        let mut c: Vec<(usize, f64)> = vec![(m.unmet[i], 1.0)];
        for b in &m.buses {
            if let Some(ii) = b.pos(i) {
                c.extend(b.g[ii].iter().map(|&v| (v, 1.0)));
            }
        }
        m.add_row("coverage", format!("S{}", i + 1), c, Sense::Ge, inst.demands.total(i));
    }
    if opt.shift {
        let fee = inst.demands.shift_fee.clone().expect("shift mode needs shift fees");
        for i in 0..ni {
            for t in 0..nt {
                let p = inst.demands.demand[i][t];
                if p <= 0.0 {
                    continue;
                }
                let v = m.add_var(format!("shifted[S{},{t}]", i + 1), fee[i][t], 0.0, f64::INFINITY, false);
                m.shifted.push((i, t, v));
                let mut c: Vec<(usize, f64)> = vec![(v, 1.0)];
                for b in &m.buses {
                    if let Some(ii) = b.pos(i) {
                        c.push((b.g[ii][t], 1.0));
                    }
                }
                m.add_row("shift_residual", format!("S{},{t}", i + 1), c, Sense::Ge, p);
            }
        }
    }
    if opt.symmetry {
        for k in 0..inst.n_types() {
            let hs: Vec<usize> = (0..m.buses.len()).filter(|&bi| m.buses[bi].k == k).collect();
            let big = inst.big_m1.max(hs.len() as f64);
            for (n, &bh) in hs.iter().enumerate() {
                if n + 1 == hs.len() {
                    break;
                }
                for t in 0..nt {
                    let mut c: Vec<(usize, f64)> = vec![];
                    for &bl in &hs[n + 1..] {
                        for uu in &m.buses[bl].u {
                            c.extend(uu[..=t].iter().map(|&v| (v, 1.0)));
                        }
                    }
                    for uu in &m.buses[bh].u {
                        c.extend(uu[..=t].iter().map(|&v| (v, -big)));
                    }
                    m.add_row("symmetry", format!("k{},h{},{t}", k + 1, n + 1), c, Sense::Le, 0.0);
                }
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpEngine {
    /// The crate's own LP-based branch and bound.
    Search,
    Highs,
}

#[derive(Debug, Clone)]
pub struct CompactSolution {
    pub status: MilpStatus,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub values: Vec<f64>,
    pub nodes: u64,
}

impl CompactSolution {
    pub fn proven(&self) -> bool {
        self.status == MilpStatus::Optimal
    }
}

pub fn solve_compact(model: &CompactModel, gap: f64, node_cap: u64, engine: MilpEngine) -> CompactSolution {
    solve_compact_below(model, gap, node_cap, engine, f64::INFINITY)
}

/// Solves keeping only solutions below `cutoff`.
pub fn solve_compact_below(model: &CompactModel, gap: f64, node_cap: u64, engine: MilpEngine, cutoff: f64) -> CompactSolution {
    let o = match engine {
        MilpEngine::Search => branch_and_bound(&model.lp, &SearchConfig { gap, node_cap, int_tol: 1e-6, cutoff }),
        MilpEngine::Highs => milp_solve_highs_below(&model.lp, gap, node_cap, f64::INFINITY, cutoff),
    };
    CompactSolution { status: o.status, gap: o.gap(), objective: o.objective, bound: o.bound, values: o.values, nodes: o.nodes }
}

/// Reads one route off a bus block. `None` when the bus stays at the depot.
pub fn extract_bus_route(inst: &Instance, b: &BusBlock, values: &[f64]) -> Result<Option<Route>, CompactError> {
    let net = &inst.network;
    let k = b.k;
    let on = |v: usize| values[v] > 0.5;
    let bad = |msg: String| CompactError::Inconsistent { bus: b.label(), msg };
    let starts: Vec<(usize, usize)> =
        (0..b.shelters.len()).flat_map(|ii| (0..inst.slots()).map(move |t| (ii, t))).filter(|&(ii, t)| on(b.u[ii][t])).collect();
    let (ii0, t0) = match starts.as_slice() {
        [] => return Ok(None),
        [one] => *one,
        _ => return Err(bad("several depot departures".into())),
    };
    let mut actions = vec![RouteAction::new(Node::Depot, Node::Shelter(b.shelters[ii0]), t0)];
    let mut ii = ii0;
    let mut t = t0 + net.travel(k, Node::Depot, Node::Shelter(b.shelters[ii0])) + net.service(Node::Shelter(b.shelters[ii0]));
    for _ in 0..4 * inst.slots() {
        let s = Node::Shelter(b.shelters[ii]);
        if t >= inst.slots() {
            return Err(bad(format!("no departure from {s} inside the horizon")));
        }
        if on(b.r[ii][t]) {
            actions.push(RouteAction::new(s, Node::Depot, t));
            let mut dis = vec![];
            for (p, &i) in b.shelters.iter().enumerate() {
                for tau in 0..inst.slots() {
                    let v = values[b.g[p][tau]];
                    if v > 1e-7 {
                        dis.push((i, tau, v));
                    }
                }
            }
            return Ok(Some(Route::new(inst, k, actions, dis)));
        }
        let Some(qi) = (0..b.targets[ii].len()).find(|&qi| on(b.x[ii][qi][t])) else {
            return Err(bad(format!("no departure from {s} at slot {t}")));
        };
        let q = b.targets[ii][qi];
        actions.push(RouteAction::new(s, q, t));
        match q {
            Node::Shelter(i2) => {
                ii = b.pos(i2).expect("compatible target");
                t += net.travel(k, s, q) + net.service(q);
            }
            Node::Station(j) => {
                let d = t + net.travel(k, s, q) + net.service(q);
                let Some(i2) = (0..b.shelters.len()).find(|&p| d < inst.slots() && on(b.z[j][p][d])) else {
                    return Err(bad(format!("no departure from {q} at slot {d}")));
                };
                let next = Node::Shelter(b.shelters[i2]);
                actions.push(RouteAction::new(q, next, d));
                ii = i2;
                t = d + net.travel(k, q, next) + net.service(next);
            }
            Node::Depot => unreachable!(),
        }
    }
    Err(bad("route does not terminate".into()))
}

pub fn extract_routes(model: &CompactModel, inst: &Instance, values: &[f64]) -> Result<Vec<Route>, CompactError> {
    let mut out = vec![];
    for b in &model.buses {
        if let Some(r) = extract_bus_route(inst, b, values)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Solves the compact model and packages the result as a plan.
pub fn solve_compact_plan(inst: &Instance, opt: &CompactOptions, gap: f64, node_cap: u64, engine: MilpEngine) -> Result<(CompactSolution, Option<Plan>), CompactError> {
    let model = build_compact(inst, opt)?;
    let sol = solve_compact(&model, gap, node_cap, engine);
    if sol.values.is_empty() {
        return Ok((sol, None));
    }
    let routes = extract_routes(&model, inst, &sol.values)?;
    let plan = Plan::evaluate(inst, routes.into_iter().map(|r| (r, 1)).collect(), opt.shift);
    Ok((sol, Some(plan)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{desk_instance, DeskSpec};

    #[test]
    fn zero_demand_costs_nothing() {
        let mut inst = desk_instance(&DeskSpec::default());
        inst.demands.demand = vec![vec![0.0; inst.slots()]];
        let m = build_compact(&inst, &CompactOptions::default()).unwrap();
        let s = solve_compact(&m, 0.0, 10_000, MilpEngine::Search);
        assert_eq!(s.status, MilpStatus::Optimal);
        assert!(s.objective.abs() < 1e-9);
        assert!(extract_routes(&m, &inst, &s.values).unwrap().is_empty());
    }

    #[test]
    fn one_bus_per_type_has_no_symmetry_rows() {
        let inst = desk_instance(&DeskSpec::default());
        let m = build_compact(&inst, &CompactOptions::default()).unwrap();
        assert_eq!(m.family_counts().get("symmetry"), None);
        assert!(m.row_names.iter().all(|n| !n.is_empty()));
    }

    #[test]
    fn no_buses_means_full_penalty() {
        let inst = desk_instance(&DeskSpec { buses: [0, 0, 0], mean_demand: 500.0, ..Default::default() });
        let (s, plan) = solve_compact_plan(&inst, &CompactOptions::default(), 0.0, 1000, MilpEngine::Search).unwrap();
        let want = inst.demands.penalty[0] * inst.demands.total(0);
        assert!((s.objective - want).abs() < 1e-6 * want);
        let plan = plan.unwrap();
        assert!((plan.unmet[0] - inst.demands.total(0)).abs() < 1e-6);
    }

    #[test]
    fn size_cap_is_enforced() {
        let inst = Instance::case_study();
        assert!(matches!(build_compact(&inst, &CompactOptions::default()), Err(CompactError::TooLarge { .. })));
    }
}
