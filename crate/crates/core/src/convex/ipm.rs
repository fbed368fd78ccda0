//! Dense primal-dual interior-point method (Mehrotra predictor-corrector)
//! followed by an optional active-set polish.
//!
//! Internal form: `min ½xᵀHx + cᵀx  s.t.  Ax = b,  Gx + s = h,  s >= 0`.
//! Bounds and pinned variables are lowered to rows of `G` and `A`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{evaluate_kkt, ConvexProgram, ProgramError, SolveResult, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative primal/dual feasibility tolerance.
    pub feas_tol: f64,
    /// Relative complementarity tolerance.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Re-solve the KKT system on the detected active set after convergence.
    pub polish: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 100,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum EqOrigin {
    Row(usize),
    Fixed(usize),
}

#[derive(Debug, Clone, Copy)]
enum IneqOrigin {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

type Sparse = Vec<(usize, f64)>;

struct Standard {
    n: usize,
    h: DMatrix<f64>,
    c: DVector<f64>,
    a: Vec<Sparse>,
    b: DVector<f64>,
    g: Vec<Sparse>,
    hv: DVector<f64>,
    // multiplier applied to each row during scaling (including orientation sign)
    a_scale: Vec<f64>,
    g_scale: Vec<f64>,
    eq_origin: Vec<EqOrigin>,
    ineq_origin: Vec<IneqOrigin>,
}

fn row_dot(row: &Sparse, x: &DVector<f64>) -> f64 {
    row.iter().map(|&(j, a)| a * x[j]).sum()
}

fn add_transpose(rows: &[Sparse], w: &DVector<f64>, out: &mut DVector<f64>) {
    for (row, &wk) in rows.iter().zip(w.iter()) {
        if wk != 0.0 {
            for &(j, a) in row {
                out[j] += a * wk;
            }
        }
    }
}

impl Standard {
    fn build(p: &ConvexProgram) -> Self {
        let n = p.num_vars();
        let mut h = DMatrix::zeros(n, n);
        for &(i, j, v) in &p.hessian {
            h[(i, j)] += v;
            if i != j {
                h[(j, i)] += v;
            }
        }
        let c = DVector::from_column_slice(&p.linear);

        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut a_scale = Vec::new();
        let mut eq_origin = Vec::new();
        for (k, row) in p.eqs.iter().enumerate() {
            let norm = row.coeffs.iter().fold(0.0_f64, |m, &(_, v)| m.max(v.abs()));
            let lead = row.coeffs.iter().find(|&&(_, v)| v != 0.0).map_or(1.0, |&(_, v)| v);
            // Canonical orientation: leading coefficient positive, unit inf-norm.
            let d = if norm > 0.0 { lead.signum() / norm } else { 1.0 };
            a.push(row.coeffs.iter().map(|&(j, v)| (j, v * d)).collect());
            b.push(row.rhs * d);
            a_scale.push(d);
            eq_origin.push(EqOrigin::Row(k));
        }
        for j in 0..n {
            if p.lower[j] == p.upper[j] {
                a.push(vec![(j, 1.0)]);
                b.push(p.lower[j]);
                a_scale.push(1.0);
                eq_origin.push(EqOrigin::Fixed(j));
            }
        }

        let mut g = Vec::new();
        let mut hv = Vec::new();
        let mut g_scale = Vec::new();
        let mut ineq_origin = Vec::new();
        for (k, row) in p.ineqs.iter().enumerate() {
            let norm = row.coeffs.iter().fold(0.0_f64, |m, &(_, v)| m.max(v.abs()));
            let d = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            g.push(row.coeffs.iter().map(|&(j, v)| (j, v * d)).collect());
            hv.push(row.rhs * d);
            g_scale.push(d);
            ineq_origin.push(IneqOrigin::Row(k));
        }
        for j in 0..n {
            if p.lower[j] == p.upper[j] {
                continue;
            }
            if p.lower[j].is_finite() {
                g.push(vec![(j, -1.0)]);
                hv.push(-p.lower[j]);
                g_scale.push(1.0);
                ineq_origin.push(IneqOrigin::Lower(j));
            }
            if p.upper[j].is_finite() {
                g.push(vec![(j, 1.0)]);
                hv.push(p.upper[j]);
                g_scale.push(1.0);
                ineq_origin.push(IneqOrigin::Upper(j));
            }
        }

        Self {
            n,
            h,
            c,
            a,
            b: DVector::from_vec(b),
            g,
            hv: DVector::from_vec(hv),
            a_scale,
            g_scale,
            eq_origin,
            ineq_origin,
        }
    }

    fn me(&self) -> usize {
        self.a.len()
    }

    fn mi(&self) -> usize {
        self.g.len()
    }

    fn check_convex(&self) -> Result<(), ProgramError> {
        if self.n == 0 {
            return Ok(());
        }
        let scale = self.h.amax().max(1.0);
        if self.h.amax() == 0.0 {
            return Ok(());
        }
        let eig = SymmetricEigen::new(self.h.clone());
        let min = eig.eigenvalues.min();
        if min < -1e-10 * scale {
            return Err(ProgramError::NotConvex(min));
        }
        Ok(())
    }

    fn ax(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.me(), self.a.iter().map(|r| row_dot(r, x)))
    }

    fn gx(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.mi(), self.g.iter().map(|r| row_dot(r, x)))
    }

    fn at(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        add_transpose(&self.a, y, &mut out);
        out
    }

    fn gt(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        add_transpose(&self.g, z, &mut out);
        out
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }

    /// `[H + GᵀWG, Aᵀ; A, 0]`
    fn kkt_matrix(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let (n, me) = (self.n, self.me());
        let mut k = DMatrix::zeros(n + me, n + me);
        k.view_mut((0, 0), (n, n)).copy_from(&self.h);
        for (row, &wi) in self.g.iter().zip(w.iter()) {
            for &(p, ap) in row {
                for &(q, aq) in row {
                    k[(p, q)] += wi * ap * aq;
                }
            }
        }
        for (r, row) in self.a.iter().enumerate() {
            for &(j, v) in row {
                k[(n + r, j)] += v;
                k[(j, n + r)] += v;
            }
        }
        k
    }
}

/// LU of a regularized KKT matrix, with iterative refinement against the
/// unregularized one.
struct KktSolver {
    exact: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl KktSolver {
    fn new(exact: DMatrix<f64>, n: usize, reg: f64) -> Self {
        let mut m = exact.clone();
        let dim = m.nrows();
        for i in 0..dim {
            if i < n {
                m[(i, i)] += reg;
            } else {
                m[(i, i)] -= reg;
            }
        }
        Self { exact, lu: m.lu() }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut sol = self.lu.solve(rhs)?;
        for _ in 0..3 {
            let res = rhs - &self.exact * &sol;
            if res.amax() <= 1e-15 * (1.0 + rhs.amax()) {
                break;
            }
            sol += self.lu.solve(&res)?;
        }
        if sol.iter().all(|v| v.is_finite()) {
            Some(sol)
        } else {
            None
        }
    }
}

#[derive(Clone)]
struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
}

enum Outcome {
    Optimal(Iterate, usize),
    Infeasible(Iterate, usize),
    Unbounded(Iterate, usize),
    Stalled(Iterate, usize),
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&vi, &d)| -vi / d)
        .fold(f64::INFINITY, f64::min)
}

/// Scaled residual below which a stalled run's best iterate is accepted as
/// optimal (it is then polished like any other).
const ACCEPTABLE: f64 = 1e-7;

fn interior_point(std: &Standard, settings: &SolverSettings) -> Outcome {
    let (n, me, mi) = (std.n, std.me(), std.mi());
    let bnorm = std.b.amax().max(if mi > 0 { std.hv.amax() } else { 0.0 });
    let cnorm = if n > 0 { std.c.amax() } else { 0.0 };
    let reg = 1e-10;

    // Initial point from the KKT system with W = I.
    let ones = DVector::from_element(mi, 1.0);
    let k0 = KktSolver::new(std.kkt_matrix(&ones), n, reg);
    let mut rhs = DVector::zeros(n + me);
    {
        let gth = std.gt(&std.hv);
        for j in 0..n {
            rhs[j] = -std.c[j] + gth[j];
        }
        for r in 0..me {
            rhs[n + r] = std.b[r];
        }
    }
    let sol = k0.solve(&rhs).unwrap_or_else(|| DVector::zeros(n + me));
    let x = sol.rows(0, n).into_owned();
    let y = sol.rows(n, me).into_owned();
    let gx = std.gx(&x);
    let mut s = &std.hv - &gx;
    let mut z = &gx - &std.hv;
    if mi > 0 {
        let ts = -s.min();
        if ts >= -1e-8 {
            s.add_scalar_mut(1.0 + ts);
        }
        let tz = -z.min();
        if tz >= -1e-8 {
            z.add_scalar_mut(1.0 + tz);
        }
    }
    let mut it = Iterate { x, y, z, s };
    // Best iterate so far by scaled residual, kept for when the tail of the
    // iteration loses accuracy to ill-conditioning.
    let mut best: Option<(f64, Iterate, usize)> = None;
    let stalled = |it: Iterate, iter: usize, best: Option<(f64, Iterate, usize)>| match best {
        Some((score, b, k)) if score <= ACCEPTABLE => Outcome::Optimal(b, k),
        _ => Outcome::Stalled(it, iter),
    };

    for iter in 0..settings.max_iter {
        let rd = &std.h * &it.x + &std.c + std.at(&it.y) + std.gt(&it.z);
        let rp = std.ax(&it.x) - &std.b;
        let rg = std.gx(&it.x) + &it.s - &std.hv;
        let gap = it.s.dot(&it.z);
        let mu = if mi > 0 { gap / mi as f64 } else { 0.0 };
        let pobj = std.objective(&it.x);

        let pres = rp.amax().max(if mi > 0 { rg.amax() } else { 0.0 });
        let dres = if n > 0 { rd.amax() } else { 0.0 };
        if pres <= settings.feas_tol * (1.0 + bnorm)
            && dres <= settings.feas_tol * (1.0 + cnorm)
            && gap <= settings.gap_tol * (1.0 + pobj.abs())
        {
            return Outcome::Optimal(it, iter);
        }
        let score = (pres / (1.0 + bnorm))
            .max(dres / (1.0 + cnorm))
            .max(gap / (1.0 + pobj.abs()));
        match &best {
            Some((b, _, k)) if score >= *b => {
                if *b <= ACCEPTABLE && iter >= k + 10 {
                    return stalled(it, iter, best);
                }
            }
            _ => best = Some((score, it.clone(), iter)),
        }

        // Farkas certificate of primal infeasibility.
        let yz = it.y.amax().max(if mi > 0 { it.z.amax() } else { 0.0 });
        if yz > 1e3 {
            let cert = (std.at(&it.y) + std.gt(&it.z)).amax() / yz;
            let lin = (std.b.dot(&it.y) + std.hv.dot(&it.z)) / yz;
            if lin < -1e-6 && cert < 1e-8 {
                return Outcome::Infeasible(it, iter);
            }
        }
        // Recession direction certificate of unboundedness.
        let xn = if n > 0 { it.x.amax() } else { 0.0 };
        if xn > 1e6 {
            let xh = &it.x / xn;
            let desc = std.c.dot(&xh);
            let hx = (&std.h * &xh).amax();
            let ax = if me > 0 { std.ax(&xh).amax() } else { 0.0 };
            let gmax = if mi > 0 { std.gx(&xh).max() } else { f64::NEG_INFINITY };
            if desc < -1e-6 && hx < 1e-8 && ax < 1e-7 && gmax < 1e-7 {
                return Outcome::Unbounded(it, iter);
            }
        }

        let w = DVector::from_iterator(mi, it.z.iter().zip(it.s.iter()).map(|(z, s)| z / s));
        let kkt = KktSolver::new(std.kkt_matrix(&w), n, reg);

        let direction = |rsz: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // (H + GᵀWG) dx + Aᵀdy = −rd − Gᵀ(W rg − rsz/s)
            let t = DVector::from_iterator(
                mi,
                (0..mi).map(|i| w[i] * rg[i] - rsz[i] / it.s[i]),
            );
            let top = -&rd - std.gt(&t);
            let mut rhs = DVector::zeros(n + me);
            rhs.rows_mut(0, n).copy_from(&top);
            rhs.rows_mut(n, me).copy_from(&(-&rp));
            let sol = kkt.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, me).into_owned();
            let gdx = std.gx(&dx);
            let dz = DVector::from_iterator(
                mi,
                (0..mi).map(|i| w[i] * (gdx[i] + rg[i]) - rsz[i] / it.s[i]),
            );
            let ds = -&rg - &gdx;
            Some((dx, dy, dz, ds))
        };

        // Predictor.
        let rsz_aff = it.s.component_mul(&it.z);
        let Some((dxa, dya, dza, dsa)) = direction(&rsz_aff) else {
            return stalled(it, iter, best);
        };
        let (dx, dy, dz, ds) = if mi > 0 {
            let alpha_aff = max_step(&it.s, &dsa).min(max_step(&it.z, &dza)).min(1.0);
            let s_aff = &it.s + &dsa * alpha_aff;
            let z_aff = &it.z + &dza * alpha_aff;
            let mu_aff = s_aff.dot(&z_aff) / mi as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
            // Corrector.
            let rsz = DVector::from_iterator(
                mi,
                (0..mi).map(|i| it.s[i] * it.z[i] + dsa[i] * dza[i] - sigma * mu),
            );
            match direction(&rsz) {
                Some(d) => d,
                None => return stalled(it, iter, best),
            }
        } else {
            (dxa, dya, dza, dsa)
        };

        let alpha = if mi > 0 {
            (0.99 * max_step(&it.s, &ds).min(max_step(&it.z, &dz))).min(1.0)
        } else {
            1.0
        };
        it.x += &dx * alpha;
        it.y += &dy * alpha;
        it.z += &dz * alpha;
        it.s += &ds * alpha;
        if !(it.x.iter().chain(it.y.iter()).chain(it.z.iter()).all(|v| v.is_finite())) {
            return stalled(it, iter, best);
        }
    }
    stalled(it, settings.max_iter, best)
}

/// Re-solves the KKT system restricted to the active set of a converged
/// iterate. The reduced system is often singular (degenerate vertices, free
/// directions of a linear objective), so it is solved with a small proximal
/// regularization and refined against the exact matrix, starting from the
/// iterate itself. Returns `None` if the candidate violates sign or
/// feasibility conditions.
fn polish(std: &Standard, it: &Iterate) -> Option<Iterate> {
    const DELTA: f64 = 1e-9;
    let (n, me, mi) = (std.n, std.me(), std.mi());
    let active: Vec<usize> = (0..mi).filter(|&i| it.s[i] < it.z[i]).collect();
    let na = active.len();
    let dim = n + me + na;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&std.h);
    for (r, row) in std.a.iter().enumerate() {
        for &(j, v) in row {
            k[(n + r, j)] += v;
            k[(j, n + r)] += v;
        }
    }
    for (r, &i) in active.iter().enumerate() {
        for &(j, v) in &std.g[i] {
            k[(n + me + r, j)] += v;
            k[(j, n + me + r)] += v;
        }
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = -std.c[j];
    }
    for r in 0..me {
        rhs[n + r] = std.b[r];
    }
    for (r, &i) in active.iter().enumerate() {
        rhs[n + me + r] = std.hv[i];
    }
    let mut kd = k.clone();
    for d in 0..dim {
        kd[(d, d)] += if d < n { DELTA } else { -DELTA };
    }
    let lu = kd.lu();
    let mut sol = DVector::zeros(dim);
    sol.rows_mut(0, n).copy_from(&it.x);
    sol.rows_mut(n, me).copy_from(&it.y);
    for (r, &i) in active.iter().enumerate() {
        sol[n + me + r] = it.z[i];
    }
    let scale = 1.0 + rhs.amax();
    for _ in 0..50 {
        let res = &rhs - &k * &sol;
        if res.amax() <= 1e-15 * scale {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let y = sol.rows(n, me).into_owned();
    let mut z = DVector::zeros(mi);
    for (r, &i) in active.iter().enumerate() {
        let zi = sol[n + me + r];
        if zi < -1e-9 * (1.0 + it.z.amax()) {
            return None;
        }
        z[i] = zi.max(0.0);
    }
    let gx = std.gx(&x);
    let mut s = DVector::zeros(mi);
    for i in 0..mi {
        let slack = std.hv[i] - gx[i];
        if slack < -1e-9 * (1.0 + std.hv[i].abs()) {
            return None;
        }
        s[i] = slack.max(0.0);
    }
    Some(Iterate { x, y, z, s })
}

fn phase_one_infeasible(std: &Standard, settings: &SolverSettings) -> Option<bool> {
    // min Σu + Σv + Σw  s.t.  Ax + u − v = b,  Gx − w <= h,  u, v, w >= 0
    let (n, me, mi) = (std.n, std.me(), std.mi());
    let mut p = ConvexProgram::new();
    let xs: Vec<_> = (0..n).map(|j| p.add_free_var(format!("x{j}"))).collect();
    for &x in &xs {
        p.add_square(x, 1e-10);
    }
    for (r, row) in std.a.iter().enumerate() {
        let u = p.add_var("u", 0.0, f64::INFINITY);
        let v = p.add_var("v", 0.0, f64::INFINITY);
        p.add_linear(u, 1.0);
        p.add_linear(v, 1.0);
        let mut terms: Vec<_> = row.iter().map(|&(j, a)| (xs[j], a)).collect();
        terms.push((u, 1.0));
        terms.push((v, -1.0));
        p.add_eq("p1", &terms, std.b[r]);
    }
    for (i, row) in std.g.iter().enumerate() {
        let w = p.add_var("w", 0.0, f64::INFINITY);
        p.add_linear(w, 1.0);
        let mut terms: Vec<_> = row.iter().map(|&(j, a)| (xs[j], a)).collect();
        terms.push((w, -1.0));
        p.add_le("p1", &terms, std.hv[i]);
    }
    let _ = (me, mi);
    p.settings = SolverSettings {
        polish: false,
        max_iter: settings.max_iter.max(100),
        ..*settings
    };
    let std1 = Standard::build(&p);
    match interior_point(&std1, &p.settings) {
        Outcome::Optimal(it, _) => {
            let scale = 1.0 + std.b.amax().max(if std.mi() > 0 { std.hv.amax() } else { 0.0 });
            Some(std1.objective(&it.x) > 1e-6 * scale)
        }
        _ => None,
    }
}

fn unbounded_probe(std: &Standard, settings: &SolverSettings) -> bool {
    const BIG: f64 = 1e7;
    let mut boxed = Standard {
        n: std.n,
        h: std.h.clone(),
        c: std.c.clone(),
        a: std.a.clone(),
        b: std.b.clone(),
        g: std.g.clone(),
        hv: std.hv.clone(),
        a_scale: vec![],
        g_scale: vec![],
        eq_origin: vec![],
        ineq_origin: vec![],
    };
    let mut hv: Vec<f64> = boxed.hv.iter().copied().collect();
    for j in 0..std.n {
        boxed.g.push(vec![(j, 1.0)]);
        hv.push(BIG);
        boxed.g.push(vec![(j, -1.0)]);
        hv.push(BIG);
    }
    boxed.hv = DVector::from_vec(hv);
    match interior_point(&boxed, settings) {
        Outcome::Optimal(it, _) => it.x.amax() > 0.5 * BIG,
        _ => false,
    }
}

pub(super) fn solve(p: &ConvexProgram) -> Result<SolveResult, ProgramError> {
    let std = Standard::build(p);
    std.check_convex()?;
    let settings = p.settings;

    let (status, mut it, iters) = match interior_point(&std, &settings) {
        Outcome::Optimal(it, k) => (SolveStatus::Optimal, it, k),
        Outcome::Infeasible(it, k) => (SolveStatus::Infeasible, it, k),
        Outcome::Unbounded(it, k) => (SolveStatus::Unbounded, it, k),
        Outcome::Stalled(it, k) => {
            let status = match phase_one_infeasible(&std, &settings) {
                Some(true) => SolveStatus::Infeasible,
                Some(false) if unbounded_probe(&std, &settings) => SolveStatus::Unbounded,
                _ => SolveStatus::NumericalFailure,
            };
            (status, it, k)
        }
    };

    let mut polished = false;
    if status == SolveStatus::Optimal && settings.polish {
        if let Some(cand) = polish(&std, &it) {
            let before = assemble(p, &std, &it, status, iters, false);
            let after = assemble(p, &std, &cand, status, iters, true);
            if after.residuals.max_residual() <= before.residuals.max_residual().max(1e-12) {
                it = cand;
                polished = true;
            }
        }
    }
    Ok(assemble(p, &std, &it, status, iters, polished))
}

fn assemble(
    p: &ConvexProgram,
    std: &Standard,
    it: &Iterate,
    status: SolveStatus,
    iterations: usize,
    polished: bool,
) -> SolveResult {
    let n = std.n;
    let mut eq_duals = vec![0.0; p.eqs.len()];
    let mut fixed_duals = vec![0.0; n];
    for (k, origin) in std.eq_origin.iter().enumerate() {
        let v = it.y[k] * std.a_scale[k];
        match *origin {
            EqOrigin::Row(r) => eq_duals[r] = v,
            EqOrigin::Fixed(j) => fixed_duals[j] = v,
        }
    }
    let mut ineq_duals = vec![0.0; p.ineqs.len()];
    let mut lower_duals = vec![0.0; n];
    let mut upper_duals = vec![0.0; n];
    for (k, origin) in std.ineq_origin.iter().enumerate() {
        let v = it.z[k] * std.g_scale[k];
        match *origin {
            IneqOrigin::Row(r) => ineq_duals[r] = v,
            IneqOrigin::Lower(j) => lower_duals[j] = v,
            IneqOrigin::Upper(j) => upper_duals[j] = v,
        }
    }
    let x: Vec<f64> = it.x.iter().copied().collect();
    let mut result = SolveResult {
        status,
        objective: p.objective_at(&x),
        x,
        eq_duals,
        ineq_duals,
        lower_duals,
        upper_duals,
        fixed_duals,
        iterations,
        polished,
        residuals: Default::default(),
    };
    result.residuals = evaluate_kkt(p, &result);
    result
}
