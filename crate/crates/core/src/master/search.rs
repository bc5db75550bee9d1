//! Bounded LP-based branch and bound: most-fractional branching, depth-first
//! dives, best-bound restarts. Single-threaded and deterministic.

use super::lp::{LpProblem, LpStatus, MilpOutcome, MilpStatus, WarmLp};

#[derive(Debug, Clone, Copy)]
pub struct SearchConfig {
    pub gap: f64,
    pub node_cap: u64,
    pub int_tol: f64,
    /// Only solutions strictly below this value are of interest.
    pub cutoff: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { gap: 0.0, node_cap: 100_000, int_tol: 1e-6, cutoff: f64::INFINITY }
    }
}

struct Open {
    id: u64,
    bound: f64,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

fn cutoff(incumbent: f64, gap: f64) -> f64 {
    if incumbent.is_finite() {
        incumbent - (gap * incumbent.abs()).max(1e-9)
    } else {
        f64::INFINITY
    }
}

pub fn branch_and_bound(p: &LpProblem, cfg: &SearchConfig) -> MilpOutcome {
    let mut lp = WarmLp::new(p);
    let mut open: Vec<Open> = vec![Open { id: 0, bound: f64::NEG_INFINITY, lb: p.lb.clone(), ub: p.ub.clone() }];
    let mut next_id = 1u64;
    let mut incumbent = cfg.cutoff;
    let mut best: Vec<f64> = vec![];
    let mut nodes = 0u64;
    let mut dive: Option<Open> = None;

    loop {
        let node = match dive.take() {
            Some(n) => n,
            None => {
                let Some(pos) = open
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.bound.total_cmp(&b.1.bound).then(a.1.id.cmp(&b.1.id)))
                    .map(|(i, _)| i)
                else {
                    break;
                };
                open.swap_remove(pos)
            }
        };
        if node.bound >= cutoff(incumbent, cfg.gap) {
            continue;
        }
        if nodes >= cfg.node_cap {
            open.push(node);
            break;
        }
        nodes += 1;
        let s = lp.solve(&node.lb, &node.ub);
        match s.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded | LpStatus::Failed(_) => {
                log::warn!("LP relaxation returned {:?}; node dropped", s.status);
                continue;
            }
        }
        if s.objective >= cutoff(incumbent, cfg.gap) {
            continue;
        }
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..p.n_vars() {
            if !p.integer[j] {
                continue;
            }
            let v = s.primal[j];
            let f = v - v.floor();
            let dist = f.min(1.0 - f);
            if dist > cfg.int_tol && pick.map_or(true, |(_, d)| dist > d + 1e-12) {
                pick = Some((j, dist));
            }
        }
        match pick {
            None => {
                let mut x = s.primal.clone();
                for j in 0..p.n_vars() {
                    if p.integer[j] {
                        x[j] = x[j].round();
                    }
                }
                let obj = p.objective_of(&x);
                if obj < incumbent {
                    incumbent = obj;
                    best = x;
                }
            }
            Some((j, _)) => {
                let v = s.primal[j];
                let mut down = Open { id: next_id, bound: s.objective, lb: node.lb.clone(), ub: node.ub.clone() };
                down.ub[j] = v.floor();
                let mut up = Open { id: next_id + 1, bound: s.objective, lb: node.lb, ub: node.ub };
                up.lb[j] = v.ceil();
                next_id += 2;
                if v - v.floor() < 0.5 {
                    open.push(up);
                    dive = Some(down);
                } else {
                    open.push(down);
                    dive = Some(up);
                }
            }
        }
    }

    let open_bound = open.iter().chain(dive.iter()).map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let exhausted = open.is_empty() && dive.is_none();
    let bound = if exhausted { incumbent } else { open_bound.min(incumbent) };
    let status = match (best.is_empty(), exhausted) {
        (false, true) => MilpStatus::Optimal,
        (false, false) if super::lp::relative_gap(incumbent, bound) <= cfg.gap => MilpStatus::Optimal,
        (false, false) => MilpStatus::Feasible,
        (true, true) => MilpStatus::Infeasible,
        (true, false) => MilpStatus::NoSolution,
    };
    MilpOutcome { status, objective: incumbent, bound, values: best, nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::lp::{milp_solve_highs, Sense};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_knapsack(seed: u64) -> LpProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(4..9);
        let mut p = LpProblem::default();
        let vars: Vec<usize> = (0..n).map(|_| p.add_var(-(rng.gen_range(1..20) as f64), 0.0, rng.gen_range(1..3) as f64, true)).collect();
        for _ in 0..2 {
            let row = vars.iter().map(|&v| (v, rng.gen_range(1..10) as f64)).collect();
            p.add_row(row, Sense::Le, rng.gen_range(10..30) as f64);
        }
        p
    }

    fn brute(p: &LpProblem) -> f64 {
        let n = p.n_vars();
        let mut best = f64::INFINITY;
        let mut x = vec![0.0; n];
        fn rec(p: &LpProblem, j: usize, x: &mut Vec<f64>, best: &mut f64) {
            if j == x.len() {
                if p.max_violation(x) <= 1e-9 {
                    *best = best.min(p.objective_of(x));
                }
                return;
            }
            let mut v = p.lb[j];
            while v <= p.ub[j] {
                x[j] = v;
                rec(p, j + 1, x, best);
                v += 1.0;
            }
        }
        rec(p, 0, &mut x, &mut best);
        best
    }

    #[test]
    fn matches_enumeration_on_random_knapsacks() {
        for seed in 0..30 {
            let p = random_knapsack(seed);
            let o = branch_and_bound(&p, &SearchConfig::default());
            assert_eq!(o.status, MilpStatus::Optimal);
            assert!((o.objective - brute(&p)).abs() < 1e-9, "seed {seed}");
            let h = milp_solve_highs(&p, 0.0, 1_000_000, f64::INFINITY);
            assert!((o.objective - h.objective).abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_model() {
        let mut p = LpProblem::default();
        let x = p.add_var(1.0, 0.0, 1.0, true);
        p.add_row(vec![(x, 2.0)], Sense::Eq, 1.0);
        let o = branch_and_bound(&p, &SearchConfig::default());
        assert_eq!(o.status, MilpStatus::Infeasible);
    }

    #[test]
    fn node_cap_reports_open_gap() {
        let p = random_knapsack(3);
        let o = branch_and_bound(&p, &SearchConfig { node_cap: 1, ..Default::default() });
        assert!(matches!(o.status, MilpStatus::NoSolution | MilpStatus::Feasible | MilpStatus::Optimal));
        assert!(o.bound <= brute(&p) + 1e-9);
    }
}
