//! Convex quadratic programs with dual extraction.
//!
//! A [`ConvexProgram`] is
//!
//! ```text
//!     minimize    ½ xᵀ H x + cᵀ x + k
//!     subject to  a_e · x  = b_e      (equality rows)
//!                 a_i · x <= b_i      (inequality rows)
//!                 l <= x <= u         (variable bounds)
//! ```
//!
//! with `H` positive semidefinite. Duals follow a single sign convention:
//! for an equality row `g(x) = a·x − b = 0` and an inequality row
//! `h(x) = a·x − b <= 0` with multiplier `z >= 0`, stationarity reads
//!
//! ```text
//!     ∇f(x) + Σ λ_e a_e + Σ z_i a_i + (bound terms) = 0
//! ```
//!
//! Every price computed downstream inherits this convention. Flipping the
//! orientation of an equality row flips the sign of its dual.

mod ipm;

use std::fmt;

use thiserror::Error;

pub use ipm::SolverSettings;

/// Handle to a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to an equality row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EqRow(pub(crate) usize);

impl EqRow {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to an inequality row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IneqRow(pub(crate) usize);

impl IneqRow {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Row {
    pub(crate) tag: String,
    pub(crate) coeffs: Vec<(usize, f64)>,
    pub(crate) rhs: f64,
}

impl Row {
    fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum::<f64>() - self.rhs
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProgramError {
    #[error("row `{tag}` references variable {index} but the program has {n} variables")]
    UnknownVariable { tag: String, index: usize, n: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("variable `{name}` has empty bounds [{lower}, {upper}]")]
    EmptyBounds { name: String, lower: f64, upper: f64 },
    #[error("quadratic term is not positive semidefinite (min eigenvalue {0:e})")]
    NotConvex(f64),
}

/// A convex QP under construction. Programs are plain values; solving never
/// mutates them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProgram {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    linear: Vec<f64>,
    // Hessian entries (i <= j); the objective is ½ xᵀHx.
    hessian: Vec<(usize, usize, f64)>,
    constant: f64,
    eqs: Vec<Row>,
    ineqs: Vec<Row>,
    pub settings: SolverSettings,
}

impl Default for ConvexProgram {
    fn default() -> Self {
        Self::new()
    }
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            linear: Vec::new(),
            hessian: Vec::new(),
            constant: 0.0,
            eqs: Vec::new(),
            ineqs: Vec::new(),
            settings: SolverSettings::default(),
        }
    }

    /// Adds a variable. Use `f64::NEG_INFINITY` / `f64::INFINITY` for a free side.
    /// Equal bounds pin the variable through an equality row.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> Var {
        self.names.push(name.into());
        self.lower.push(lower);
        self.upper.push(upper);
        self.linear.push(0.0);
        Var(self.names.len() - 1)
    }

    pub fn add_free_var(&mut self, name: impl Into<String>) -> Var {
        self.add_var(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn num_eqs(&self) -> usize {
        self.eqs.len()
    }

    pub fn num_ineqs(&self) -> usize {
        self.ineqs.len()
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.names[v.0]
    }

    pub fn bounds(&self, v: Var) -> (f64, f64) {
        (self.lower[v.0], self.upper[v.0])
    }

    pub fn set_bounds(&mut self, v: Var, lower: f64, upper: f64) {
        self.lower[v.0] = lower;
        self.upper[v.0] = upper;
    }

    /// Adds `coef · x` to the objective.
    pub fn add_linear(&mut self, v: Var, coef: f64) {
        self.linear[v.0] += coef;
    }

    pub fn add_constant(&mut self, k: f64) {
        self.constant += k;
    }

    /// Adds `coef · x_i · x_j` to the objective.
    pub fn add_product(&mut self, i: Var, j: Var, coef: f64) {
        if coef == 0.0 {
            return;
        }
        let (a, b) = if i.0 <= j.0 { (i.0, j.0) } else { (j.0, i.0) };
        // ½ H_aa x_a² = coef x_a²  →  H_aa = 2 coef; off-diagonal pairs appear twice.
        let h = if a == b { 2.0 * coef } else { coef };
        self.hessian.push((a, b, h));
    }

    pub fn add_square(&mut self, v: Var, coef: f64) {
        self.add_product(v, v, coef);
    }

    /// Adds `weight · (Σ c_k x_k + offset)²` to the objective.
    pub fn add_squared_affine(&mut self, terms: &[(Var, f64)], offset: f64, weight: f64) {
        if weight == 0.0 {
            return;
        }
        for (p, &(vi, ci)) in terms.iter().enumerate() {
            self.add_product(vi, vi, weight * ci * ci);
            for &(vj, cj) in &terms[p + 1..] {
                self.add_product(vi, vj, 2.0 * weight * ci * cj);
            }
            self.add_linear(vi, 2.0 * weight * ci * offset);
        }
        self.constant += weight * offset * offset;
    }

    /// Adds `Σ c x = rhs`.
    pub fn add_eq(&mut self, tag: impl Into<String>, terms: &[(Var, f64)], rhs: f64) -> EqRow {
        self.eqs.push(Row {
            tag: tag.into(),
            coeffs: terms.iter().map(|&(v, c)| (v.0, c)).collect(),
            rhs,
        });
        EqRow(self.eqs.len() - 1)
    }

    /// Adds `Σ c x <= rhs`.
    pub fn add_le(&mut self, tag: impl Into<String>, terms: &[(Var, f64)], rhs: f64) -> IneqRow {
        self.ineqs.push(Row {
            tag: tag.into(),
            coeffs: terms.iter().map(|&(v, c)| (v.0, c)).collect(),
            rhs,
        });
        IneqRow(self.ineqs.len() - 1)
    }

    /// Adds `Σ c x >= rhs`, stored as `−Σ c x <= −rhs`.
    pub fn add_ge(&mut self, tag: impl Into<String>, terms: &[(Var, f64)], rhs: f64) -> IneqRow {
        let neg: Vec<(Var, f64)> = terms.iter().map(|&(v, c)| (v, -c)).collect();
        self.add_le(tag, &neg, -rhs)
    }

    pub fn eq_tag(&self, r: EqRow) -> &str {
        &self.eqs[r.0].tag
    }

    pub fn ineq_tag(&self, r: IneqRow) -> &str {
        &self.ineqs[r.0].tag
    }

    /// Equality rows carrying `tag`, in insertion order.
    pub fn eq_rows_tagged<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = EqRow> + 'a {
        self.eqs
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.tag == tag)
            .map(|(k, _)| EqRow(k))
    }

    pub fn ineq_rows_tagged<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = IneqRow> + 'a {
        self.ineqs
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.tag == tag)
            .map(|(k, _)| IneqRow(k))
    }

    /// Coefficients of an equality row as `(var, coef)` pairs.
    pub fn eq_coeffs(&self, r: EqRow) -> impl Iterator<Item = (Var, f64)> + '_ {
        self.eqs[r.0].coeffs.iter().map(|&(j, c)| (Var(j), c))
    }

    pub fn ineq_coeffs(&self, r: IneqRow) -> impl Iterator<Item = (Var, f64)> + '_ {
        self.ineqs[r.0].coeffs.iter().map(|&(j, c)| (Var(j), c))
    }

    pub fn ineq_rhs(&self, r: IneqRow) -> f64 {
        self.ineqs[r.0].rhs
    }

    pub fn eq_rhs(&self, r: EqRow) -> f64 {
        self.eqs[r.0].rhs
    }

    /// Replaces the right-hand side of an equality row.
    pub fn set_eq_rhs(&mut self, r: EqRow, rhs: f64) {
        self.eqs[r.0].rhs = rhs;
    }

    /// Objective value at `x`.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(c, v)| c * v).sum();
        let quad: f64 = self
            .hessian
            .iter()
            .map(|&(i, j, h)| {
                if i == j {
                    0.5 * h * x[i] * x[i]
                } else {
                    h * x[i] * x[j]
                }
            })
            .sum();
        self.constant + lin + quad
    }

    /// Gradient of the objective at `x`.
    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.linear.clone();
        for &(i, j, h) in &self.hessian {
            if i == j {
                g[i] += h * x[i];
            } else {
                g[i] += h * x[j];
                g[j] += h * x[i];
            }
        }
        g
    }

    pub fn eq_residual(&self, r: EqRow, x: &[f64]) -> f64 {
        self.eqs[r.0].eval(x)
    }

    pub fn ineq_value(&self, r: IneqRow, x: &[f64]) -> f64 {
        self.ineqs[r.0].eval(x)
    }

    /// Largest violation by `x` of any bound, equality or inequality.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = (0..self.num_vars()).map(|k| (self.lower[k] - x[k]).max(x[k] - self.upper[k]));
        let eqs = self.eqs.iter().map(|r| r.eval(x).abs());
        let ineqs = self.ineqs.iter().map(|r| r.eval(x));
        bounds.chain(eqs).chain(ineqs).fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<(), ProgramError> {
        let n = self.num_vars();
        for (k, name) in self.names.iter().enumerate() {
            let (l, u) = (self.lower[k], self.upper[k]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(ProgramError::EmptyBounds {
                    name: name.clone(),
                    lower: l,
                    upper: u,
                });
            }
            if !self.linear[k].is_finite() {
                return Err(ProgramError::NonFinite(format!("objective of `{name}`")));
            }
        }
        if !self.constant.is_finite() {
            return Err(ProgramError::NonFinite("objective constant".into()));
        }
        for &(i, j, h) in &self.hessian {
            if i >= n || j >= n {
                return Err(ProgramError::UnknownVariable {
                    tag: "objective".into(),
                    index: i.max(j),
                    n,
                });
            }
            if !h.is_finite() {
                return Err(ProgramError::NonFinite("quadratic objective".into()));
            }
        }
        for row in self.eqs.iter().chain(&self.ineqs) {
            if !row.rhs.is_finite() {
                return Err(ProgramError::NonFinite(format!("row `{}`", row.tag)));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(ProgramError::UnknownVariable {
                        tag: row.tag.clone(),
                        index: j,
                        n,
                    });
                }
                if !a.is_finite() {
                    return Err(ProgramError::NonFinite(format!("row `{}`", row.tag)));
                }
            }
        }
        Ok(())
    }

    /// Solves the program. Infeasibility and unboundedness are reported through
    /// [`SolveStatus`]; only malformed programs return `Err`.
    pub fn solve(&self) -> Result<SolveResult, ProgramError> {
        self.validate()?;
        ipm::solve(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical failure",
        };
        f.write_str(s)
    }
}

/// Outcome of [`ConvexProgram::solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// One multiplier per equality row.
    pub eq_duals: Vec<f64>,
    /// One non-negative multiplier per inequality row.
    pub ineq_duals: Vec<f64>,
    /// Multipliers of `x >= l` (non-negative, enters stationarity as `−z`).
    pub lower_duals: Vec<f64>,
    /// Multipliers of `x <= u` (non-negative, enters stationarity as `+z`).
    pub upper_duals: Vec<f64>,
    /// Multipliers of pinned variables (`l == u`), entering as `+λ`.
    pub fixed_duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub polished: bool,
    /// Residuals of the returned point, always populated for diagnostics.
    pub residuals: KktReport,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, v: Var) -> f64 {
        self.x[v.0]
    }

    pub fn eq_dual(&self, r: EqRow) -> f64 {
        self.eq_duals[r.0]
    }

    pub fn ineq_dual(&self, r: IneqRow) -> f64 {
        self.ineq_duals[r.0]
    }

    /// Net bound multiplier of a variable as it enters stationarity.
    pub fn bound_dual(&self, v: Var) -> f64 {
        self.upper_duals[v.0] - self.lower_duals[v.0] + self.fixed_duals[v.0]
    }
}

/// Maximum KKT residuals of a primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
    pub complementarity: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

impl KktReport {
    pub fn duality_gap(&self) -> f64 {
        (self.primal_objective - self.dual_objective).abs()
    }

    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }

    /// True when every residual is below `tol` and the duality gap is below
    /// `tol · (1 + |primal objective|)`.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() < tol && self.duality_gap() < tol * (1.0 + self.primal_objective.abs())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("KKT residuals are only defined for optimal results (status: {0})")]
pub struct NotOptimal(pub SolveStatus);

/// Recomputes the KKT residuals of `result` against `prog`.
pub fn kkt_residuals(prog: &ConvexProgram, result: &SolveResult) -> Result<KktReport, NotOptimal> {
    if result.status != SolveStatus::Optimal {
        return Err(NotOptimal(result.status));
    }
    Ok(evaluate_kkt(prog, result))
}

pub(crate) fn evaluate_kkt(prog: &ConvexProgram, r: &SolveResult) -> KktReport {
    let x = &r.x;
    let n = prog.num_vars();
    let mut grad_l = prog.gradient_at(x);
    let mut primal: f64 = 0.0;
    let mut dual_feas: f64 = 0.0;
    let mut compl: f64 = 0.0;
    // Wolfe dual: f(x) + λᵀg(x) + zᵀh(x) evaluated at a stationary x.
    let mut lagrangian = prog.objective_at(x);

    for (k, row) in prog.eqs.iter().enumerate() {
        let y = r.eq_duals[k];
        let g = row.eval(x);
        primal = primal.max(g.abs());
        lagrangian += y * g;
        for &(j, a) in &row.coeffs {
            grad_l[j] += y * a;
        }
    }
    for (k, row) in prog.ineqs.iter().enumerate() {
        let z = r.ineq_duals[k];
        let h = row.eval(x);
        primal = primal.max(h.max(0.0));
        dual_feas = dual_feas.max((-z).max(0.0));
        compl = compl.max((z * h).abs());
        lagrangian += z * h;
        for &(j, a) in &row.coeffs {
            grad_l[j] += z * a;
        }
    }
    for j in 0..n {
        let (l, u) = (prog.lower[j], prog.upper[j]);
        if l == u {
            let y = r.fixed_duals[j];
            primal = primal.max((x[j] - l).abs());
            grad_l[j] += y;
            lagrangian += y * (x[j] - l);
            continue;
        }
        if l.is_finite() {
            let z = r.lower_duals[j];
            let h = l - x[j];
            primal = primal.max(h.max(0.0));
            dual_feas = dual_feas.max((-z).max(0.0));
            compl = compl.max((z * h).abs());
            grad_l[j] -= z;
            lagrangian += z * h;
        }
        if u.is_finite() {
            let z = r.upper_duals[j];
            let h = x[j] - u;
            primal = primal.max(h.max(0.0));
            dual_feas = dual_feas.max((-z).max(0.0));
            compl = compl.max((z * h).abs());
            grad_l[j] += z;
            lagrangian += z * h;
        }
    }
    let stationarity = grad_l.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    KktReport {
        stationarity,
        primal_feasibility: primal,
        dual_feasibility: dual_feas,
        complementarity: compl,
        primal_objective: prog.objective_at(x),
        dual_objective: lagrangian,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_above_one() {
        let mut p = ConvexProgram::new();
        let x = p.add_free_var("x");
        p.add_square(x, 1.0);
        let row = p.add_ge("x>=1", &[(x, 1.0)], 1.0);
        let r = p.solve().unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.value(x) - 1.0).abs() < 1e-9);
        assert!((r.ineq_dual(row) - 2.0).abs() < 1e-8);
        assert!((r.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_dual_sign_canary() {
        // min x + y s.t. x + y = 1, x, y >= 0  →  ∇f + λ∇g = 0  →  λ = −1.
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, f64::INFINITY);
        let y = p.add_var("y", 0.0, f64::INFINITY);
        p.add_linear(x, 1.0);
        p.add_linear(y, 1.0);
        let e = p.add_eq("sum", &[(x, 1.0), (y, 1.0)], 1.0);
        let r = p.solve().unwrap();
        assert!(r.is_optimal());
        assert!((r.objective - 1.0).abs() < 1e-9);
        assert!((r.eq_dual(e) + 1.0).abs() < 1e-8);

        // Flipped orientation flips the dual.
        let mut q = ConvexProgram::new();
        let x = q.add_var("x", 0.0, f64::INFINITY);
        let y = q.add_var("y", 0.0, f64::INFINITY);
        q.add_linear(x, 1.0);
        q.add_linear(y, 1.0);
        let e2 = q.add_eq("sum", &[(x, -1.0), (y, -1.0)], -1.0);
        let r2 = q.solve().unwrap();
        assert_eq!(r2.eq_dual(e2), -r.eq_dual(e));
    }

    #[test]
    fn infeasible_is_a_status() {
        let mut p = ConvexProgram::new();
        let x = p.add_free_var("x");
        p.add_square(x, 1.0);
        p.add_ge("lo", &[(x, 1.0)], 1.0);
        p.add_le("hi", &[(x, 1.0)], 0.0);
        let r = p.solve().unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert_eq!(kkt_residuals(&p, &r), Err(NotOptimal(SolveStatus::Infeasible)));
    }

    #[test]
    fn infeasible_equalities() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        let y = p.add_var("y", 0.0, 1.0);
        p.add_eq("s", &[(x, 1.0), (y, 1.0)], 3.0);
        let r = p.solve().unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_a_status() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, 0.0);
        let y = p.add_free_var("y");
        p.add_linear(x, 1.0);
        p.add_square(y, 1.0);
        let r = p.solve().unwrap();
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    #[test]
    fn rejects_nonconvex() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", -1.0, 1.0);
        p.add_square(x, -1.0);
        assert!(matches!(p.solve(), Err(ProgramError::NotConvex(_))));
    }

    #[test]
    fn pinned_variable_dual() {
        // min (x − 3)² with x pinned at 1: stationarity 2(x−3) + λ = 0 → λ = 4.
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 1.0, 1.0);
        p.add_squared_affine(&[(x, 1.0)], -3.0, 1.0);
        let r = p.solve().unwrap();
        assert!(r.is_optimal());
        assert!((r.value(x) - 1.0).abs() < 1e-12);
        assert!((r.bound_dual(x) - 4.0).abs() < 1e-8);
        assert!((r.objective - 4.0).abs() < 1e-9);
    }

    #[test]
    fn perturbed_primal_breaks_stationarity() {
        let mut p = ConvexProgram::new();
        let x = p.add_free_var("x");
        p.add_square(x, 1.0);
        p.add_ge("x>=1", &[(x, 1.0)], 1.0);
        let mut r = p.solve().unwrap();
        assert!(kkt_residuals(&p, &r).unwrap().passes(1e-6));
        r.x[0] += 1e-2;
        let rep = kkt_residuals(&p, &r).unwrap();
        // d/dx (x² − z x) moves by 2·1e-2.
        assert!(rep.stationarity > 1e-3, "{rep:?}");
    }

    #[test]
    fn repeated_solves_are_bitwise_identical() {
        let mut p = ConvexProgram::new();
        let v: Vec<Var> = (0..4).map(|k| p.add_var(format!("x{k}"), -1.0, 2.0)).collect();
        for (k, &vk) in v.iter().enumerate() {
            p.add_square(vk, 1.0 + k as f64);
            p.add_linear(vk, (k as f64) - 1.5);
        }
        p.add_eq("sum", &v.iter().map(|&x| (x, 1.0)).collect::<Vec<_>>(), 1.0);
        p.add_le("pair", &[(v[0], 1.0), (v[3], -1.0)], 0.1);
        let a = p.solve().unwrap();
        let b = p.solve().unwrap();
        assert_eq!(a, b);
    }
}
