//! LP/MILP solve contract. Problems are assembled as plain data and handed
//! to HiGHS; duals follow the convention `reduced = c - A^T y`, so a `>=`
//! row in a minimisation has `y >= 0` and a `<=` row has `y <= 0`.

use highs::{HighsModelStatus, RowProblem, Sense as HSense};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LpProblem {
    pub obj: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub integer: Vec<bool>,
    pub rows: Vec<LpRow>,
    pub obj_offset: f64,
}

impl LpProblem {
    pub fn add_var(&mut self, cost: f64, lb: f64, ub: f64, integer: bool) -> usize {
        self.obj.push(cost);
        self.lb.push(lb);
        self.ub.push(ub);
        self.integer.push(integer);
        self.obj.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(LpRow { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.obj.len()
    }

    pub fn objective_of(&self, x: &[f64]) -> f64 {
        self.obj_offset + self.obj.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.n_vars() {
            worst = worst.max(self.lb[j] - x[j]).max(x[j] - self.ub[j]);
        }
        for r in &self.rows {
            let a: f64 = r.coeffs.iter().map(|&(j, c)| c * x[j]).sum();
            let v = match r.sense {
                Sense::Le => a - r.rhs,
                Sense::Ge => r.rhs - a,
                Sense::Eq => (a - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }
}

impl LpProblem {
    /// CPLEX LP text. Missing names fall back to `x{j}` and `r{i}`.
    pub fn to_lp_text(&self, cols: &[String], rows: &[String]) -> String {
        use std::fmt::Write;
        let cn = |j: usize| cols.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
        let rn = |i: usize| rows.get(i).cloned().unwrap_or_else(|| format!("r{i}"));
        let term = |out: &mut String, c: f64, name: String| {
            let _ = write!(out, " {} {} {}", if c < 0.0 { "-" } else { "+" }, c.abs(), name);
        };
        let mut out = String::from("\\ offset ");
        let _ = writeln!(out, "{}\nMinimize\n obj:", self.obj_offset);
        for (j, &c) in self.obj.iter().enumerate() {
            if c != 0.0 {
                term(&mut out, c, cn(j));
            }
        }
        out.push_str("\nSubject To\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, " {}:", rn(i));
            if r.coeffs.is_empty() {
                out.push_str(" 0 x0");
            }
            for &(j, c) in &r.coeffs {
                term(&mut out, c, cn(j));
            }
            let op = match r.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", r.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.n_vars() {
            let ub = if self.ub[j].is_finite() { self.ub[j].to_string() } else { "+inf".into() };
            let _ = writeln!(out, " {} <= {} <= {}", self.lb[j], cn(j), ub);
        }
        let ints: Vec<_> = (0..self.n_vars()).filter(|&j| self.integer[j]).map(cn).collect();
        if !ints.is_empty() {
            let _ = writeln!(out, "General\n {}", ints.join(" "));
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub primal: Vec<f64>,
    pub duals: Vec<f64>,
    pub reduced: Vec<f64>,
}

impl LpSolution {
    fn failed(status: LpStatus) -> LpSolution {
        LpSolution { status, objective: f64::NAN, primal: vec![], duals: vec![], reduced: vec![] }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

fn build(p: &LpProblem, integral: bool) -> highs::Model {
    build_with_cols(p, integral).0
}

fn build_with_cols(p: &LpProblem, integral: bool) -> (highs::Model, Vec<highs::Col>) {
    let mut rp = RowProblem::default();
    let cols: Vec<_> = (0..p.n_vars())
        .map(|j| {
            let (lb, ub) = (p.lb[j], p.ub[j]);
            if integral && p.integer[j] {
                rp.add_integer_column(p.obj[j], lb..=ub)
            } else {
                rp.add_column(p.obj[j], lb..=ub)
            }
        })
        .collect();
    for r in &p.rows {
        let coeffs: Vec<_> = r.coeffs.iter().map(|&(j, c)| (cols[j], c)).collect();
        match r.sense {
            Sense::Le => rp.add_row(..=r.rhs, &coeffs),
            Sense::Ge => rp.add_row(r.rhs.., &coeffs),
            Sense::Eq => rp.add_row(r.rhs..=r.rhs, &coeffs),
        }
    }
    let mut model = rp.optimise(HSense::Minimise);
    model.make_quiet();
    model.set_option("threads", 1);
    model.set_option("random_seed", 0);
    (model, cols)
}

/// Solves the LP relaxation (integrality flags ignored).
pub fn lp_solve(p: &LpProblem) -> LpSolution {
    if p.rows.is_empty() && p.n_vars() == 0 {
        return LpSolution { status: LpStatus::Optimal, objective: p.obj_offset, primal: vec![], duals: vec![], reduced: vec![] };
    }
    if (0..p.n_vars()).any(|j| p.lb[j] > p.ub[j]) {
        return LpSolution::failed(LpStatus::Infeasible);
    }
    let mut model = build(p, false);
    model.set_option("solver", c"simplex");
    let solved = match model.try_solve() {
        Ok(s) => s,
        Err(e) => return LpSolution::failed(LpStatus::Failed(format!("{e:?}"))),
    };
    match solved.status() {
        HighsModelStatus::Optimal => {}
        HighsModelStatus::Infeasible => return LpSolution::failed(LpStatus::Infeasible),
        HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => return LpSolution::failed(LpStatus::Unbounded),
        s => return LpSolution::failed(LpStatus::Failed(format!("{s:?}"))),
    }
    let sol = solved.get_solution();
    let primal = sol.columns().to_vec();
    LpSolution {
        status: LpStatus::Optimal,
        objective: p.objective_of(&primal),
        primal,
        duals: sol.dual_rows().to_vec(),
        reduced: sol.dual_columns().to_vec(),
    }
}

/// LP relaxation kept alive between solves, so a re-solve after bound
/// changes starts from the previous basis.
pub struct WarmLp<'a> {
    p: &'a LpProblem,
    model: Option<highs::Model>,
    cols: Vec<highs::Col>,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl<'a> WarmLp<'a> {
    pub fn new(p: &'a LpProblem) -> WarmLp<'a> {
        WarmLp { p, model: None, cols: vec![], lb: vec![], ub: vec![] }
    }

    /// Solves the relaxation with column bounds `lb..=ub`. Duals are not read.
    pub fn solve(&mut self, lb: &[f64], ub: &[f64]) -> LpSolution {
        if lb.iter().zip(ub).any(|(l, u)| l > u) {
            return LpSolution::failed(LpStatus::Infeasible);
        }
        let warm = self.model.is_some();
        let out = self.attempt(lb, ub);
        if warm && matches!(out.status, LpStatus::Failed(_)) {
            self.model = None;
            return self.attempt(lb, ub);
        }
        out
    }

    fn attempt(&mut self, lb: &[f64], ub: &[f64]) -> LpSolution {
        let mut model = match self.model.take() {
            Some(m) => m,
            None => {
                let (mut m, cols) = build_with_cols(self.p, false);
                m.set_option("solver", c"simplex");
                self.cols = cols;
                self.lb.clone_from(&self.p.lb);
                self.ub.clone_from(&self.p.ub);
                m
            }
        };
        for j in 0..lb.len() {
            if lb[j] != self.lb[j] || ub[j] != self.ub[j] {
                model.change_column_bounds(self.cols[j], lb[j]..=ub[j]);
                self.lb[j] = lb[j];
                self.ub[j] = ub[j];
            }
        }
        let solved = match model.try_solve() {
            Ok(s) => s,
            Err(e) => return LpSolution::failed(LpStatus::Failed(format!("{e:?}"))),
        };
        let status = solved.status();
        let out = match status {
            HighsModelStatus::Optimal => {
                let primal = solved.get_solution().columns().to_vec();
                LpSolution { status: LpStatus::Optimal, objective: self.p.objective_of(&primal), primal, duals: vec![], reduced: vec![] }
            }
            HighsModelStatus::Infeasible => LpSolution::failed(LpStatus::Infeasible),
            HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => LpSolution::failed(LpStatus::Unbounded),
            s => LpSolution::failed(LpStatus::Failed(format!("{s:?}"))),
        };
        if !matches!(out.status, LpStatus::Failed(_)) {
            self.model = Some(solved.into());
        }
        out
    }
}

/// Dual objective `b^T y + sum_j d_j * bound_j`, where each reduced cost is
/// charged at the bound it points to. Reduced costs within 1e-7 of zero on
/// an infinite bound count as zero.
pub fn dual_objective(p: &LpProblem, s: &LpSolution) -> f64 {
    let mut v = p.obj_offset;
    for (r, y) in p.rows.iter().zip(&s.duals) {
        v += r.rhs * y;
    }
    for j in 0..p.n_vars() {
        let d = s.reduced[j];
        let bound = if d > 0.0 { p.lb[j] } else { p.ub[j] };
        if d == 0.0 {
            continue;
        }
        if bound.is_finite() {
            v += d * bound;
        } else if d.abs() > 1e-7 {
            return f64::NEG_INFINITY;
        }
    }
    v
}

/// Largest complementary-slackness residual: `|slack * y|` over rows and
/// `|gap-to-bound * d|` over columns.
pub fn complementarity_residual(p: &LpProblem, s: &LpSolution) -> f64 {
    let mut worst: f64 = 0.0;
    for (r, y) in p.rows.iter().zip(&s.duals) {
        let a: f64 = r.coeffs.iter().map(|&(j, c)| c * s.primal[j]).sum();
        if r.sense != Sense::Eq {
            worst = worst.max(((a - r.rhs) * y).abs());
        }
    }
    for j in 0..p.n_vars() {
        let d = s.reduced[j];
        let x = s.primal[j];
        let gap = if d > 0.0 { x - p.lb[j] } else { p.ub[j] - x };
        if gap.is_finite() {
            worst = worst.max((gap * d).abs());
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct MilpOutcome {
    pub status: MilpStatus,
    pub objective: f64,
    pub bound: f64,
    pub values: Vec<f64>,
    pub nodes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    /// Stopped at a cap with an incumbent.
    Feasible,
    Infeasible,
    /// Stopped at a cap without an incumbent.
    NoSolution,
}

impl MilpOutcome {
    pub fn gap(&self) -> f64 {
        relative_gap(self.objective, self.bound)
    }
}

pub fn relative_gap(objective: f64, bound: f64) -> f64 {
    if !objective.is_finite() {
        return f64::INFINITY;
    }
    let diff = (objective - bound).max(0.0);
    if diff <= 1e-9 {
        0.0
    } else if objective.abs() > 1e-9 {
        diff / objective.abs()
    } else {
        f64::INFINITY
    }
}

/// Runs the HiGHS branch-and-cut on `p`.
pub fn milp_solve_highs(p: &LpProblem, gap: f64, node_cap: u64, time_limit: f64) -> MilpOutcome {
    milp_solve_highs_below(p, gap, node_cap, time_limit, f64::INFINITY)
}

/// Like [`milp_solve_highs`], but every solution with objective at or above
/// `cutoff` is pruned; `Infeasible` then means nothing beats the cutoff.
pub fn milp_solve_highs_below(p: &LpProblem, gap: f64, node_cap: u64, time_limit: f64, cutoff: f64) -> MilpOutcome {
    let mut model = build(p, true);
    if cutoff.is_finite() {
        model.set_option("objective_bound", cutoff - p.obj_offset);
    }
    model.set_option("mip_rel_gap", gap);
    model.set_option("mip_abs_gap", 1e-9);
    model.set_option("mip_feasibility_tolerance", 1e-9);
    model.set_option("primal_feasibility_tolerance", 1e-9);
    model.set_option("mip_max_nodes", node_cap.min(i32::MAX as u64) as i32);
    if time_limit.is_finite() {
        model.set_option("time_limit", time_limit);
    }
    let solved = match model.try_solve() {
        Ok(s) => s,
        Err(_) => {
            return MilpOutcome { status: MilpStatus::NoSolution, objective: f64::INFINITY, bound: f64::NEG_INFINITY, values: vec![], nodes: 0 };
        }
    };
    let status = solved.status();
    // The node count is a 64-bit info value the wrapper cannot read.
    let nodes = 0;
    let bound = solved.double_info_value(c"mip_dual_bound").unwrap_or(f64::NEG_INFINITY) + p.obj_offset;
    if status == HighsModelStatus::Infeasible {
        return MilpOutcome { status: MilpStatus::Infeasible, objective: f64::INFINITY, bound: f64::INFINITY, values: vec![], nodes };
    }
    let has_sol = matches!(solved.primal_solution_status(), highs::HighsSolutionStatus::Feasible);
    if !has_sol {
        return MilpOutcome { status: MilpStatus::NoSolution, objective: f64::INFINITY, bound, values: vec![], nodes };
    }
    let mut values = solved.get_solution().columns().to_vec();
    for j in 0..values.len() {
        if p.integer[j] {
            values[j] = values[j].round();
        }
    }
    let objective = p.objective_of(&values);
    let st = if status == HighsModelStatus::Optimal { MilpStatus::Optimal } else { MilpStatus::Feasible };
    let bound = if st == MilpStatus::Optimal && gap == 0.0 { bound.min(objective) } else { bound };
    MilpOutcome { status: st, objective, bound, values, nodes }
}
