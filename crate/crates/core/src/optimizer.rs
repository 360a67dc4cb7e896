//! Risk-penalized mean-variance weights under transaction-cost and box
//! constraints.
//!
//! The problem maximizes `m' x - (d/2) x' S x` subject to
//!
//! 1. `sum(x) + c * sum(u + v) = 1` with `x - x_prev = u - v`, `u, v >= 0`
//!    (the wealth budget net of transaction costs),
//! 2. `c * sum(u + v) <= cost_cap`,
//! 3. `-1 <= x_i <= 1`.
//!
//! Splitting turnover into nonnegative buy/sell components `u, v` makes the
//! problem a convex quadratic program, solved here with Clarabel. The KKT
//! residual reported with each solution is recovered independently of the
//! solver's own duals: active-set multipliers are re-estimated by least
//! squares from the returned point.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// One solve instance.
#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    /// Expected daily returns (the posterior mean).
    pub expected_returns: DVector<f64>,
    /// Positive-definite daily return covariance.
    pub covariance: DMatrix<f64>,
    /// Risk-aversion scalar `d`.
    pub risk_aversion: f64,
    /// Current weights before the trade.
    pub prev_weights: DVector<f64>,
    /// Per-trade transaction cost rate `c`.
    pub txn_cost_rate: f64,
    /// Bound on total transaction cost per unit wealth.
    pub cost_cap: f64,
    /// When false, drops the budget and cost constraints and solves the pure
    /// box-constrained problem. Exists for test harnesses that compare with
    /// the unconstrained stationary point; production callers leave it true.
    pub enforce_budget: bool,
}

pub const DEFAULT_RISK_AVERSION: f64 = 2.0;
pub const DEFAULT_TXN_COST_RATE: f64 = 0.0005;
pub const DEFAULT_COST_CAP: f64 = 0.02;

impl OptimizationProblem {
    pub fn new(
        expected_returns: DVector<f64>,
        covariance: DMatrix<f64>,
        prev_weights: DVector<f64>,
    ) -> Self {
        Self {
            expected_returns,
            covariance,
            risk_aversion: DEFAULT_RISK_AVERSION,
            prev_weights,
            txn_cost_rate: DEFAULT_TXN_COST_RATE,
            cost_cap: DEFAULT_COST_CAP,
            enforce_budget: true,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.expected_returns.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_assets();
        if n == 0 {
            return Err(Error::Validation("problem has no assets".into()));
        }
        if self.covariance.nrows() != n || self.covariance.ncols() != n {
            return Err(Error::Validation(format!(
                "covariance is {}x{}, expected {n}x{n}",
                self.covariance.nrows(),
                self.covariance.ncols()
            )));
        }
        if self.prev_weights.len() != n {
            return Err(Error::Validation(format!(
                "prev_weights has {} entries, expected {n}",
                self.prev_weights.len()
            )));
        }
        if !(self.risk_aversion > 0.0) {
            return Err(Error::Validation(format!(
                "risk aversion must be positive, got {}",
                self.risk_aversion
            )));
        }
        if self.txn_cost_rate < 0.0 || self.cost_cap < 0.0 {
            return Err(Error::Validation(
                "cost rate and cost cap must be nonnegative".into(),
            ));
        }
        if self.prev_weights.iter().any(|w| w.abs() > 1.0 + 1e-9) {
            return Err(Error::Validation(
                "previous weights must lie in [-1, 1]".into(),
            ));
        }
        if self.covariance.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(())
    }

    /// Maximization objective `m' x - (d/2) x' S x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.expected_returns.dot(x)
            - 0.5 * self.risk_aversion * (x.transpose() * &self.covariance * x)[0]
    }
}

/// Solver output.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalWeights {
    pub weights: Vec<f64>,
    pub objective_value: f64,
    /// Independently recovered KKT residual at the returned point.
    pub kkt_residual: f64,
    /// Total trade size `sum |x_i - x_prev_i|`.
    pub turnover: f64,
    /// Transaction-cost budget consumed by the budget equality,
    /// `c * sum(u + v)`. Equals `c * turnover` whenever the solver has no
    /// incentive to burn cost slack to shrink the invested total.
    pub cost_used: f64,
    pub binding_constraints: Vec<String>,
}

const FEAS_TOL: f64 = 1e-7;
const ACTIVE_TOL: f64 = 1e-5;

/// Solve the constrained problem. Deterministic given its inputs.
pub fn solve(problem: &OptimizationProblem) -> Result<OptimalWeights> {
    problem.validate()?;
    let n = problem.n_assets();
    let c = problem.txn_cost_rate;

    let (vars, n_eq, n_ineq) = if !problem.enforce_budget {
        (n, 0, 2 * n)
    } else if c == 0.0 {
        (n, 1, 2 * n)
    } else {
        (3 * n, n + 1, 4 * n + 1)
    };

    let quadratic = build_quadratic(problem, vars);
    let mut linear = vec![0.0; vars];
    for i in 0..n {
        linear[i] = -problem.expected_returns[i];
    }
    let (a_mat, b_vec) = build_constraints(problem, vars, n_eq, n_ineq);
    let cones: Vec<SupportedConeT<f64>> = if n_eq > 0 {
        vec![ZeroConeT(n_eq), NonnegativeConeT(n_ineq)]
    } else {
        vec![NonnegativeConeT(n_ineq)]
    };

    let settings = DefaultSettings {
        verbose: false,
        max_iter: 200,
        tol_gap_abs: 1e-11,
        tol_gap_rel: 1e-11,
        tol_feas: 1e-11,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&quadratic, &linear, &a_mat, &b_vec, &cones, settings)
        .map_err(|e| Error::SolverFailure(format!("solver setup failed: {e:?}")))?;
    solver.solve();

    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Err(Error::Infeasible(infeasibility_report(problem)));
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Err(Error::SolverFailure("problem is unbounded".into()));
        }
        other => {
            return Err(Error::SolverFailure(format!(
                "solver terminated with status {other:?}"
            )));
        }
    }

    let z = &solver.solution.x;
    let x = DVector::from_column_slice(&z[..n]);
    let cost_used = if problem.enforce_budget && c > 0.0 {
        c * z[n..3 * n].iter().sum::<f64>()
    } else {
        0.0
    };

    check_feasibility(problem, &x, cost_used)?;

    let turnover = (&x - &problem.prev_weights).abs().sum();
    let kkt = kkt_residual(problem, x.as_slice())?;
    if kkt > 1e-6 && std::env::var_os("STATARB_DUMP_BAD_KKT").is_some() {
        let dump = serde_json::json!({
            "status": format!("{:?}", solver.solution.status),
            "m": problem.expected_returns.as_slice(),
            "S": problem.covariance.as_slice(),
            "prev": problem.prev_weights.as_slice(),
            "d": problem.risk_aversion,
            "c": problem.txn_cost_rate,
            "cap": problem.cost_cap,
            "x": x.as_slice(),
            "kkt": kkt,
        });
        std::fs::write("/tmp/bad_kkt.json", dump.to_string()).ok();
    }

    Ok(OptimalWeights {
        weights: x.as_slice().to_vec(),
        objective_value: problem.objective(&x),
        kkt_residual: kkt,
        turnover,
        cost_used,
        binding_constraints: binding_constraints(problem, &x, cost_used),
    })
}

fn build_quadratic(problem: &OptimizationProblem, vars: usize) -> CscMatrix<f64> {
    let n = problem.n_assets();
    let d = problem.risk_aversion;
    // upper triangle of d*S in the x block; u, v columns empty
    let mut colptr = Vec::with_capacity(vars + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..vars {
        if j < n {
            for i in 0..=j {
                rowval.push(i);
                nzval.push(d * problem.covariance[(i, j)]);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(vars, vars, colptr, rowval, nzval)
}

fn build_constraints(
    problem: &OptimizationProblem,
    vars: usize,
    n_eq: usize,
    n_ineq: usize,
) -> (CscMatrix<f64>, Vec<f64>) {
    let n = problem.n_assets();
    let c = problem.txn_cost_rate;
    let rows = n_eq + n_ineq;
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); vars];
    let mut b = vec![0.0; rows];

    if !problem.enforce_budget {
        // box only: x_j <= 1, -x_j <= 1
        for j in 0..n {
            cols[j].push((j, 1.0));
            cols[j].push((n + j, -1.0));
            b[j] = 1.0;
            b[n + j] = 1.0;
        }
    } else if c == 0.0 {
        // sum(x) = 1 plus box
        for j in 0..n {
            cols[j].push((0, 1.0));
            cols[j].push((1 + j, 1.0));
            cols[j].push((1 + n + j, -1.0));
            b[1 + j] = 1.0;
            b[1 + n + j] = 1.0;
        }
        b[0] = 1.0;
    } else {
        // equalities: coupling rows 0..n, budget row n
        // inequalities start at n+1: box up, box low, u >= 0, v >= 0, cost cap
        let e = n + 1;
        for j in 0..n {
            cols[j].push((j, 1.0)); // coupling
            cols[j].push((n, 1.0)); // budget
            cols[j].push((e + j, 1.0)); // x_j <= 1
            cols[j].push((e + n + j, -1.0)); // -x_j <= 1
            b[j] = problem.prev_weights[j];
            b[e + j] = 1.0;
            b[e + n + j] = 1.0;

            cols[n + j].push((j, -1.0)); // coupling: -u_j
            cols[n + j].push((n, c)); // budget
            cols[n + j].push((e + 2 * n + j, -1.0)); // u_j >= 0
            cols[n + j].push((e + 4 * n, c)); // cost cap

            cols[2 * n + j].push((j, 1.0)); // coupling: +v_j
            cols[2 * n + j].push((n, c));
            cols[2 * n + j].push((e + 3 * n + j, -1.0)); // v_j >= 0
            cols[2 * n + j].push((e + 4 * n, c));
        }
        b[n] = 1.0;
        b[e + 4 * n] = problem.cost_cap;
    }

    let mut colptr = Vec::with_capacity(vars + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &mut cols {
        col.sort_by_key(|(r, _)| *r);
        for &(r, v) in col.iter() {
            rowval.push(r);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    (CscMatrix::new(rows, vars, colptr, rowval, nzval), b)
}

fn infeasibility_report(problem: &OptimizationProblem) -> String {
    let n = problem.n_assets();
    let c = problem.txn_cost_rate;
    if problem.enforce_budget && c > 0.0 {
        let budget_gap = 1.0 - problem.prev_weights.sum();
        format!(
            "budget constraint sum(x) + c*turnover = 1 cannot be met: moving from prev_weights \
             (gap {budget_gap:.6}) requires more transaction cost than cost_cap {} allows \
             (c = {c}, {n} assets)",
            problem.cost_cap
        )
    } else {
        "budget constraint sum(x) = 1 cannot be met inside the [-1, 1] box".to_string()
    }
}

/// Feasibility of `x` in the weight space; `cost_used` is the budget slack
/// actually consumed (only meaningful in the budgeted mode with c > 0).
fn check_feasibility(problem: &OptimizationProblem, x: &DVector<f64>, cost_used: f64) -> Result<()> {
    let violation = feasibility_violation(problem, x);
    if violation > FEAS_TOL {
        return Err(Error::SolverFailure(format!(
            "solver returned an infeasible point (violation {violation:.3e})"
        )));
    }
    if problem.enforce_budget && problem.txn_cost_rate > 0.0 {
        let budget = x.sum() + cost_used - 1.0;
        if budget.abs() > FEAS_TOL {
            return Err(Error::SolverFailure(format!(
                "budget equality violated by {budget:.3e}"
            )));
        }
    }
    Ok(())
}

/// Max constraint violation of `x` in the projected (weight-only) geometry.
fn feasibility_violation(problem: &OptimizationProblem, x: &DVector<f64>) -> f64 {
    let mut worst = 0.0f64;
    for &xi in x.iter() {
        worst = worst.max(xi.abs() - 1.0);
    }
    if problem.enforce_budget {
        let c = problem.txn_cost_rate;
        let total = x.sum();
        if c == 0.0 {
            worst = worst.max((total - 1.0).abs());
        } else {
            let turnover = (x - &problem.prev_weights).abs().sum();
            let slack = 1.0 - total; // = c * sum(u + v) at any feasible point
            worst = worst.max(c * turnover - slack);
            worst = worst.max(slack - problem.cost_cap);
            worst = worst.max(-slack);
        }
    }
    worst.max(0.0)
}

/// Recover active-set multipliers by least squares and report the KKT
/// residual at `x`: the max of the stationarity defect, dual infeasibility,
/// and complementary slackness.
///
/// Interior-point solutions leave truly-active constraints at small but
/// nonzero slack, so the activity cutoff is swept upward and the best
/// certificate kept; every attempt measures complementary slackness, so an
/// over-wide active set cannot fake a small residual.
pub fn kkt_residual(problem: &OptimizationProblem, x: &[f64]) -> Result<f64> {
    problem.validate()?;
    let n = problem.n_assets();
    if x.len() != n {
        return Err(Error::Validation(format!(
            "point has {} entries, expected {n}",
            x.len()
        )));
    }
    let x = DVector::from_column_slice(x);
    let violation = feasibility_violation(problem, &x);
    if violation > 1e-6 {
        return Err(Error::Validation(format!(
            "point is infeasible (violation {violation:.3e}); KKT residual undefined"
        )));
    }

    let mut best = f64::INFINITY;
    for act_tol in [1e-6, 1e-5, 1e-4, 1e-3] {
        best = best.min(kkt_residual_at(problem, &x, act_tol)?);
        if best < 1e-9 {
            break;
        }
    }
    Ok(best)
}

fn kkt_residual_at(
    problem: &OptimizationProblem,
    x: &DVector<f64>,
    act_tol: f64,
) -> Result<f64> {
    let n = problem.n_assets();
    let c = problem.txn_cost_rate;
    let grad = problem.risk_aversion * &problem.covariance * x - &problem.expected_returns;

    if !problem.enforce_budget || c == 0.0 {
        return kkt_weight_space(problem, x, &grad, act_tol);
    }

    // reconstruct (u, v): minimal trades plus symmetric padding that fills
    // the budget equality
    let delta = x - &problem.prev_weights;
    let trades: f64 = delta.abs().sum();
    let slack = 1.0 - x.sum();
    let pad = ((slack / c - trades) / (2.0 * n as f64)).max(0.0);
    let u: Vec<f64> = delta.iter().map(|d| d.max(0.0) + pad).collect();
    let v: Vec<f64> = delta.iter().map(|d| (-d).max(0.0) + pad).collect();
    let cost_total = c * (u.iter().sum::<f64>() + v.iter().sum::<f64>());

    // unknown multiplier layout: [lambda_couple (n) | lambda_budget | actives..]
    #[derive(Clone, Copy)]
    enum ActiveKind {
        BoxUp(usize),
        BoxLo(usize),
        UZero(usize),
        VZero(usize),
        CostCap,
    }
    let mut actives: Vec<(ActiveKind, f64)> = Vec::new(); // (kind, slack)
    for i in 0..n {
        let up = 1.0 - x[i];
        let lo = x[i] + 1.0;
        if up < act_tol {
            actives.push((ActiveKind::BoxUp(i), up));
        }
        if lo < act_tol {
            actives.push((ActiveKind::BoxLo(i), lo));
        }
        if u[i] < act_tol {
            actives.push((ActiveKind::UZero(i), u[i]));
        }
        if v[i] < act_tol {
            actives.push((ActiveKind::VZero(i), v[i]));
        }
    }
    let cap_slack = problem.cost_cap - cost_total;
    if cap_slack.abs() < act_tol.max(1e-8 * problem.cost_cap) {
        actives.push((ActiveKind::CostCap, cap_slack));
    }

    // stationarity rows: x block (n), u block (n), v block (n)
    let rows = 3 * n;
    let mut rhs = DVector::zeros(rows);
    for i in 0..n {
        rhs[i] = -grad[i];
    }

    let cols = n + 1 + actives.len();
    let mut a = DMatrix::zeros(rows, cols);
    for i in 0..n {
        a[(i, i)] = 1.0; // lambda_couple on x rows
        a[(i, n)] = 1.0; // lambda_budget on x rows
        a[(n + i, i)] = -1.0; // -lambda_couple on u rows
        a[(n + i, n)] = c;
        a[(2 * n + i, i)] = 1.0; // +lambda_couple on v rows
        a[(2 * n + i, n)] = c;
    }
    for (k, (kind, _)) in actives.iter().enumerate() {
        let col = n + 1 + k;
        match kind {
            ActiveKind::BoxUp(i) => a[(*i, col)] = 1.0,
            ActiveKind::BoxLo(i) => a[(*i, col)] = -1.0,
            ActiveKind::UZero(i) => a[(n + i, col)] = -1.0,
            ActiveKind::VZero(i) => a[(2 * n + i, col)] = -1.0,
            ActiveKind::CostCap => {
                for i in 0..n {
                    a[(n + i, col)] = c;
                    a[(2 * n + i, col)] = c;
                }
            }
        }
    }

    let w = nnls_mixed(&a, &rhs, n + 1)?;
    let residual_vec = &a * &w - &rhs;
    let stationarity = residual_vec.abs().max();
    let mut comp_slack = 0.0f64;
    for (k, (_, slack)) in actives.iter().enumerate() {
        let mu = w[n + 1 + k];
        comp_slack = comp_slack.max((mu * slack).abs());
    }
    Ok(stationarity.max(comp_slack))
}

/// KKT residual for the weight-space modes (no u/v lift): plain budget
/// equality when c = 0, or box-only when the budget is disabled.
fn kkt_weight_space(
    problem: &OptimizationProblem,
    x: &DVector<f64>,
    grad: &DVector<f64>,
    act_tol: f64,
) -> Result<f64> {
    let n = problem.n_assets();
    let has_budget = problem.enforce_budget;

    #[derive(Clone, Copy)]
    enum ActiveKind {
        BoxUp(usize),
        BoxLo(usize),
    }
    let mut actives: Vec<(ActiveKind, f64)> = Vec::new();
    for i in 0..n {
        let up = 1.0 - x[i];
        let lo = x[i] + 1.0;
        if up < act_tol {
            actives.push((ActiveKind::BoxUp(i), up));
        }
        if lo < act_tol {
            actives.push((ActiveKind::BoxLo(i), lo));
        }
    }

    let n_lambda = usize::from(has_budget);
    let cols = n_lambda + actives.len();
    let rhs = -grad.clone();
    if cols == 0 {
        return Ok(rhs.abs().max());
    }
    let mut a = DMatrix::zeros(n, cols);
    if has_budget {
        for i in 0..n {
            a[(i, 0)] = 1.0;
        }
    }
    for (k, (kind, _)) in actives.iter().enumerate() {
        let col = n_lambda + k;
        match kind {
            ActiveKind::BoxUp(i) => a[(*i, col)] = 1.0,
            ActiveKind::BoxLo(i) => a[(*i, col)] = -1.0,
        }
    }
    let w = nnls_mixed(&a, &rhs, n_lambda)?;
    let residual_vec = &a * &w - &rhs;
    let stationarity = residual_vec.abs().max();
    let mut comp_slack = 0.0f64;
    for (k, (_, slack)) in actives.iter().enumerate() {
        let mu = w[n_lambda + k];
        comp_slack = comp_slack.max((mu * slack).abs());
    }
    Ok(stationarity.max(comp_slack))
}

/// Least squares `min |A w - b|` with the first `n_free` columns
/// unconstrained and the remaining columns required nonnegative
/// (Lawson-Hanson active-set iteration with a free block).
fn nnls_mixed(a: &DMatrix<f64>, b: &DVector<f64>, n_free: usize) -> Result<DVector<f64>> {
    let cols = a.ncols();
    let solve_subset = |subset: &[usize]| -> Result<DVector<f64>> {
        let sub = a.select_columns(subset.iter());
        sub.svd(true, true)
            .solve(b, 1e-13)
            .map_err(|e| Error::SolverFailure(format!("multiplier recovery failed: {e}")))
    };

    // passive set starts with the free block, solved immediately so the
    // entering-gradient test below sees its residual
    let mut passive: Vec<usize> = (0..n_free).collect();
    let mut w = DVector::zeros(cols);
    if n_free > 0 {
        let z = solve_subset(&passive)?;
        for (idx, &j) in passive.iter().enumerate() {
            w[j] = z[idx];
        }
    }
    let mut iterations = 0usize;
    let max_iterations = 6 * cols.max(1) + 20;

    loop {
        iterations += 1;
        if iterations > max_iterations {
            return Err(Error::SolverFailure(
                "multiplier recovery did not converge".into(),
            ));
        }
        let residual = b - a * &w;
        // most promising constrained column to activate
        let gradient = a.transpose() * &residual;
        let mut best: Option<(usize, f64)> = None;
        for j in n_free..cols {
            if passive.contains(&j) {
                continue;
            }
            if gradient[j] > best.map_or(1e-12, |(_, g)| g) {
                best = Some((j, gradient[j]));
            }
        }
        let Some((enter, _)) = best else {
            return Ok(w);
        };
        passive.push(enter);

        loop {
            let z = solve_subset(&passive)?;
            // inner feasibility loop over the constrained part
            let mut alpha = 1.0f64;
            let mut blocker: Option<usize> = None;
            for (idx, &j) in passive.iter().enumerate() {
                if j < n_free || z[idx] > 0.0 {
                    continue;
                }
                let current = w[j];
                let step = current / (current - z[idx]);
                if step < alpha {
                    alpha = step;
                    blocker = Some(idx);
                }
            }
            match blocker {
                None => {
                    w.fill(0.0);
                    for (idx, &j) in passive.iter().enumerate() {
                        w[j] = z[idx];
                    }
                    break;
                }
                Some(block_idx) => {
                    for (idx, &j) in passive.iter().enumerate() {
                        w[j] = w[j] + alpha * (z[idx] - w[j]);
                    }
                    // clamp and drop the blocking column
                    let j = passive[block_idx];
                    w[j] = 0.0;
                    passive.remove(block_idx);
                    if passive.len() <= n_free {
                        break;
                    }
                }
            }
        }
    }
}

fn binding_constraints(
    problem: &OptimizationProblem,
    x: &DVector<f64>,
    cost_used: f64,
) -> Vec<String> {
    let mut out = Vec::new();
    if problem.enforce_budget {
        out.push("budget".to_string());
        if problem.txn_cost_rate > 0.0
            && (problem.cost_cap - cost_used).abs() < ACTIVE_TOL.max(1e-6 * problem.cost_cap)
        {
            out.push("cost_cap".to_string());
        }
    }
    for (i, xi) in x.iter().enumerate() {
        if 1.0 - xi < ACTIVE_TOL {
            out.push(format!("box_upper[{i}]"));
        }
        if xi + 1.0 < ACTIVE_TOL {
            out.push(format!("box_lower[{i}]"));
        }
    }
    out
}

/// Exhaustive grid search over the feasible box, for tests. Refuses `N > 3`.
pub fn brute_force_oracle(problem: &OptimizationProblem, grid_step: f64) -> Result<OptimalWeights> {
    problem.validate()?;
    let n = problem.n_assets();
    if n > 3 {
        return Err(Error::Validation(
            "brute-force oracle refuses more than 3 assets".into(),
        ));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::Validation(format!(
            "grid step must be in (0, 1], got {grid_step}"
        )));
    }
    let steps = (2.0 / grid_step).round() as usize;
    let axis: Vec<f64> = (0..=steps).map(|k| -1.0 + k as f64 * grid_step).collect();
    let c = problem.txn_cost_rate;

    let eq_tol = if problem.enforce_budget && c == 0.0 {
        grid_step * 0.5 * n as f64
    } else {
        1e-12
    };

    let feasible = |x: &DVector<f64>| -> bool {
        if !problem.enforce_budget {
            return true;
        }
        let total = x.sum();
        if c == 0.0 {
            return (total - 1.0).abs() <= eq_tol;
        }
        let turnover = (x - &problem.prev_weights).abs().sum();
        let slack = 1.0 - total;
        c * turnover <= slack + 1e-12 && slack <= problem.cost_cap + 1e-12
    };

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut point = DVector::zeros(n);
    let mut idx = vec![0usize; n];
    loop {
        for (i, &k) in idx.iter().enumerate() {
            point[i] = axis[k];
        }
        if feasible(&point) {
            let obj = problem.objective(&point);
            if best.as_ref().map_or(true, |(b, _)| obj > *b) {
                best = Some((obj, point.clone()));
            }
        }
        // odometer increment
        let mut dim = 0;
        loop {
            if dim == n {
                let (objective_value, x) = best.ok_or_else(|| {
                    Error::Infeasible("no feasible grid point".into())
                })?;
                let turnover = (&x - &problem.prev_weights).abs().sum();
                let cost_used = if problem.enforce_budget && c > 0.0 {
                    1.0 - x.sum()
                } else {
                    0.0
                };
                return Ok(OptimalWeights {
                    weights: x.as_slice().to_vec(),
                    objective_value,
                    kkt_residual: f64::NAN,
                    turnover,
                    cost_used,
                    binding_constraints: Vec::new(),
                });
            }
            idx[dim] += 1;
            if idx[dim] <= steps {
                break;
            }
            idx[dim] = 0;
            dim += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn spec_instance() -> OptimizationProblem {
        OptimizationProblem {
            expected_returns: DVector::from_column_slice(&[0.001, 0.002]),
            covariance: DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]),
            risk_aversion: 2.0,
            prev_weights: DVector::zeros(2),
            txn_cost_rate: 0.0005,
            cost_cap: 0.02,
            enforce_budget: true,
        }
    }

    /// Daily-scale instance where the return term dominates, so the solver
    /// invests fully and no cost slack is burned.
    fn daily_instance() -> OptimizationProblem {
        OptimizationProblem {
            expected_returns: DVector::from_column_slice(&[0.0012, 0.0008, 0.0005]),
            covariance: DMatrix::from_row_slice(
                3,
                3,
                &[
                    2.0e-4, 0.4e-4, 0.2e-4, //
                    0.4e-4, 1.5e-4, 0.3e-4, //
                    0.2e-4, 0.3e-4, 1.0e-4,
                ],
            ),
            risk_aversion: 2.0,
            prev_weights: DVector::zeros(3),
            txn_cost_rate: 0.0005,
            cost_cap: 0.02,
            enforce_budget: true,
        }
    }

    #[test]
    fn unbudgeted_matches_unconstrained_stationary_point() {
        // engineered interior optimum: m = d S x* with x* inside the box
        let covariance = DMatrix::from_row_slice(
            3,
            3,
            &[
                2.0e-4, 0.4e-4, 0.2e-4, //
                0.4e-4, 1.5e-4, 0.3e-4, //
                0.2e-4, 0.3e-4, 1.0e-4,
            ],
        );
        let target = DVector::from_column_slice(&[0.6, 0.25, -0.4]);
        let problem = OptimizationProblem {
            expected_returns: 2.0 * &covariance * &target,
            covariance,
            risk_aversion: 2.0,
            prev_weights: DVector::zeros(3),
            txn_cost_rate: 0.0005,
            cost_cap: 0.02,
            enforce_budget: false,
        };
        let sol = solve(&problem).unwrap();
        for i in 0..3 {
            assert!(
                (sol.weights[i] - target[i]).abs() < 1e-8,
                "weight {i}: {} vs {}",
                sol.weights[i],
                target[i]
            );
        }
        assert!(sol.kkt_residual < 1e-8, "kkt {}", sol.kkt_residual);
    }

    #[test]
    fn zero_cost_budget_matches_equality_closed_form() {
        // engineered so the equality-constrained optimum is x* in the box:
        // m = d S x* + lambda 1 with sum(x*) = 1
        let covariance = DMatrix::from_row_slice(
            3,
            3,
            &[
                2.0e-4, 0.4e-4, 0.2e-4, //
                0.4e-4, 1.5e-4, 0.3e-4, //
                0.2e-4, 0.3e-4, 1.0e-4,
            ],
        );
        let target = DVector::from_column_slice(&[0.5, 0.3, 0.2]);
        let lambda = 3.0e-5;
        let expected = 2.0 * &covariance * &target + DVector::from_element(3, lambda);
        let problem = OptimizationProblem {
            expected_returns: expected,
            covariance,
            risk_aversion: 2.0,
            prev_weights: DVector::zeros(3),
            txn_cost_rate: 0.0,
            cost_cap: 0.02,
            enforce_budget: true,
        };
        let sol = solve(&problem).unwrap();
        for i in 0..3 {
            assert!(
                (sol.weights[i] - target[i]).abs() < 1e-8,
                "weight {i}: {} vs {}",
                sol.weights[i],
                target[i]
            );
        }
        assert!(sol.kkt_residual < 1e-6);
    }

    #[test]
    fn minimum_risk_point_resists_feasible_perturbations() {
        let mut problem = daily_instance();
        problem.expected_returns = DVector::zeros(3);
        problem.txn_cost_rate = 0.0;
        let sol = solve(&problem).unwrap();
        let x = DVector::from_column_slice(&sol.weights);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            // random direction inside the budget hyperplane
            let mut dir = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let shift = dir.sum() / 3.0;
            dir.add_scalar_mut(-shift);
            let probe = &x + dir * 1e-3;
            if probe.iter().all(|w| w.abs() <= 1.0) {
                assert!(problem.objective(&probe) <= sol.objective_value + 1e-12);
            }
        }
    }

    #[test]
    fn spec_two_asset_instance_matches_grid_oracle() {
        let problem = spec_instance();
        let sol = solve(&problem).unwrap();
        let oracle = brute_force_oracle(&problem, 1e-3).unwrap();
        for i in 0..2 {
            assert!(
                (sol.weights[i] - oracle.weights[i]).abs() < 2e-3,
                "weight {i}: solver {} oracle {}",
                sol.weights[i],
                oracle.weights[i]
            );
        }
        assert!(sol.kkt_residual < 1e-6, "kkt {}", sol.kkt_residual);
        // this instance prefers the smallest allowed investment
        assert!((1.0 - sol.weights.iter().sum::<f64>() - problem.cost_cap).abs() < 1e-6);
    }

    #[test]
    fn budget_identity_with_cost() {
        let problem = daily_instance();
        let sol = solve(&problem).unwrap();
        let total: f64 = sol.weights.iter().sum();
        assert!((total + sol.cost_used - 1.0).abs() < 1e-8);
        // return-dominated instance: no padding, so c * turnover is the cost
        assert!(
            (sol.cost_used - problem.txn_cost_rate * sol.turnover).abs() < 1e-8,
            "cost {} vs c*turnover {}",
            sol.cost_used,
            problem.txn_cost_rate * sol.turnover
        );
        assert!((total + problem.txn_cost_rate * sol.turnover - 1.0).abs() < 1e-8);
    }

    #[test]
    fn kkt_residual_small_at_solution_large_after_perturbation() {
        let problem = spec_instance();
        let sol = solve(&problem).unwrap();
        assert!(sol.kkt_residual < 1e-6);

        let mut x = sol.weights.clone();
        x[0] += 0.01;
        // the perturbed point stays feasible: slack band is wide here
        let res = kkt_residual(&problem, &x).unwrap();
        assert!(res > 1e-4, "perturbed residual {res}");
    }

    #[test]
    fn kkt_residual_rejects_infeasible_point() {
        let problem = spec_instance();
        let err = kkt_residual(&problem, &[1.5, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "got {err}");
    }

    #[test]
    fn interior_unconstrained_optimum_has_zero_residual() {
        // engineered so (1/d) S^-1 m sits inside the budget band interior
        let covariance = DMatrix::from_row_slice(2, 2, &[0.02, 0.002, 0.002, 0.03]);
        let target = DVector::from_column_slice(&[0.55, 0.43]);
        let expected = 2.0 * &covariance * &target;
        let problem = OptimizationProblem {
            expected_returns: expected,
            covariance,
            risk_aversion: 2.0,
            prev_weights: DVector::zeros(2),
            txn_cost_rate: 0.0005,
            cost_cap: 0.03,
            enforce_budget: true,
        };
        // slack band: c*|x|_1 = 0.00049 <= 1 - 0.98 = 0.02 <= cap
        let res = kkt_residual(&problem, target.as_slice()).unwrap();
        assert!(res < 1e-8, "residual {res}");
    }

    #[test]
    fn doubling_risk_aversion_never_increases_risk() {
        let base = daily_instance();
        let sol1 = solve(&base).unwrap();
        let mut doubled = base.clone();
        doubled.risk_aversion *= 2.0;
        let sol2 = solve(&doubled).unwrap();
        let risk = |p: &OptimizationProblem, w: &[f64]| {
            let x = DVector::from_column_slice(w);
            (x.transpose() * &p.covariance * &x)[0]
        };
        assert!(risk(&base, &sol2.weights) <= risk(&base, &sol1.weights) + 1e-10);
    }

    #[test]
    fn zero_cost_solution_ignores_prev_weights() {
        let mut a = daily_instance();
        a.txn_cost_rate = 0.0;
        let mut b = a.clone();
        b.prev_weights = DVector::from_column_slice(&[0.5, -0.3, 0.1]);
        let sa = solve(&a).unwrap();
        let sb = solve(&b).unwrap();
        for i in 0..3 {
            assert!((sa.weights[i] - sb.weights[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn solution_invariant_under_permutation() {
        let problem = daily_instance();
        let sol = solve(&problem).unwrap();

        let perm = [2usize, 0, 1];
        let n = 3;
        let mut cov = DMatrix::zeros(n, n);
        let mut m = DVector::zeros(n);
        for i in 0..n {
            m[i] = problem.expected_returns[perm[i]];
            for j in 0..n {
                cov[(i, j)] = problem.covariance[(perm[i], perm[j])];
            }
        }
        let permuted = OptimizationProblem {
            expected_returns: m,
            covariance: cov,
            prev_weights: DVector::zeros(n),
            ..problem.clone()
        };
        let sol_p = solve(&permuted).unwrap();
        for i in 0..n {
            assert!(
                (sol_p.weights[i] - sol.weights[perm[i]]).abs() < 1e-7,
                "asset {i}"
            );
        }
    }

    #[test]
    fn infeasible_cost_cap_yields_certificate() {
        let mut problem = daily_instance();
        // reaching sum(x) = 1 - slack from zero needs about c * 1 of cost,
        // but slack itself must stay below the cap
        problem.cost_cap = 1e-6;
        let err = solve(&problem).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "got {err}");
    }

    #[test]
    fn non_pd_covariance_is_rejected_with_regularization_hint() {
        let mut problem = daily_instance();
        problem.covariance[(0, 0)] = -1.0;
        assert!(matches!(solve(&problem), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn oracle_one_dimensional_closed_form() {
        let problem = OptimizationProblem {
            expected_returns: DVector::from_column_slice(&[0.02]),
            covariance: DMatrix::from_row_slice(1, 1, &[0.05]),
            risk_aversion: 2.0,
            prev_weights: DVector::zeros(1),
            txn_cost_rate: 0.0,
            cost_cap: 0.02,
            enforce_budget: false,
        };
        let oracle = brute_force_oracle(&problem, 1e-3).unwrap();
        let closed = (0.02f64 / (2.0 * 0.05)).clamp(-1.0, 1.0);
        assert!((oracle.weights[0] - closed).abs() <= 1e-3 + 1e-12);
    }

    #[test]
    fn oracle_refinement_is_monotone() {
        let problem = spec_instance();
        let coarse = brute_force_oracle(&problem, 2e-3).unwrap();
        let fine = brute_force_oracle(&problem, 1e-3).unwrap();
        assert!(fine.objective_value >= coarse.objective_value - 1e-15);
    }

    #[test]
    fn oracle_refuses_high_dimensions() {
        let problem = OptimizationProblem::new(
            DVector::zeros(4),
            DMatrix::identity(4, 4),
            DVector::zeros(4),
        );
        assert!(brute_force_oracle(&problem, 0.5).is_err());
    }

    #[test]
    fn solve_is_deterministic() {
        let problem = daily_instance();
        let a = solve(&problem).unwrap();
        let b = solve(&problem).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.objective_value, b.objective_value);
    }
}
