//! Dense two-phase revised simplex.
//!
//! Problems are stated as
//!
//! ```text
//! minimize   c·x
//! subject to A_eq x  = b_eq
//!            A_ge x ≥ b_ge
//!            lower_j ≤ x_j ≤ upper_j,  lower_j ∈ {0, -inf}
//! ```
//!
//! Free variables are split, finite upper bounds become extra `≥` rows.
//! Dantzig pricing with a switch to Bland's rule on long degenerate runs.
//! The basis is factored (LU) from the original columns at every iteration;
//! round-off infeasibility is absorbed by shifting bounds.
//! The certificate (primal/dual feasibility, complementary slackness,
//! objective gap) is computed in the original variables.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest column entry accepted as a pivot.
pub const PIVOT_TOL: f64 = 1e-8;
/// Reduced costs above `-OPT_TOL` count as nonnegative.
pub const OPT_TOL: f64 = 1e-9;

/// Bound on every certificate residual, relative to the problem's scale.
pub const CERT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StandardLp {
    pub objective: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_ge: Vec<Vec<f64>>,
    pub b_ge: Vec<f64>,
    /// `0.0` or `-inf`.
    pub lower: Vec<f64>,
    /// `+inf` or finite.
    pub upper: Vec<f64>,
}

impl StandardLp {
    /// `n` nonnegative variables, zero objective, no rows.
    pub fn new(n: usize) -> Self {
        StandardLp { objective: vec![0.0; n], lower: vec![0.0; n], upper: vec![f64::INFINITY; n], ..Default::default() }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.b_eq.len() + self.b_ge.len()
    }

    pub fn set_free(&mut self, j: usize) {
        self.lower[j] = f64::NEG_INFINITY;
    }

    pub fn add_eq(&mut self, row: Vec<f64>, b: f64) {
        self.a_eq.push(row);
        self.b_eq.push(b);
    }

    pub fn add_ge(&mut self, row: Vec<f64>, b: f64) {
        self.a_ge.push(row);
        self.b_ge.push(b);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let bad = |what: &str| Err(Error::Validation(format!("lp: {what}")));
        if self.lower.len() != n || self.upper.len() != n {
            return bad("bounds length");
        }
        if self.a_eq.len() != self.b_eq.len() || self.a_ge.len() != self.b_ge.len() {
            return bad("row/rhs count mismatch");
        }
        for row in self.a_eq.iter().chain(&self.a_ge) {
            if row.len() != n {
                return bad("row length");
            }
            if row.iter().any(|x| !x.is_finite()) {
                return bad("non-finite coefficient");
            }
        }
        if self.objective.iter().chain(&self.b_eq).chain(&self.b_ge).any(|x| !x.is_finite()) {
            return bad("non-finite objective or rhs");
        }
        for j in 0..n {
            if !(self.lower[j] == 0.0 || self.lower[j] == f64::NEG_INFINITY) {
                return bad("lower bounds must be 0 or -inf");
            }
            if self.upper[j].is_nan() || self.upper[j] == f64::NEG_INFINITY || self.upper[j] < self.lower[j] {
                return bad("bad upper bound");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Residuals of the optimality conditions, all in the original variables.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Certificate {
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
    pub gap: f64,
}

impl Certificate {
    pub fn max(&self) -> f64 {
        self.primal_residual.max(self.dual_residual).max(self.complementarity).max(self.gap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    /// Free multipliers of the equality rows.
    pub dual_eq: Vec<f64>,
    /// Nonnegative multipliers of the `≥` rows.
    pub dual_ge: Vec<f64>,
    /// Nonnegative multipliers of finite upper bounds (zero where none).
    pub dual_upper: Vec<f64>,
    /// `b·π`, the dual objective.
    pub dual_objective: f64,
    pub certificate: Certificate,
    pub pivots: usize,
}

impl LpSolution {
    fn empty(status: LpStatus, pivots: usize) -> Self {
        LpSolution {
            status,
            x: Vec::new(),
            objective_value: f64::NAN,
            dual_eq: Vec::new(),
            dual_ge: Vec::new(),
            dual_upper: Vec::new(),
            dual_objective: f64::NAN,
            certificate: Certificate::default(),
            pivots,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum RowOrigin {
    Eq(usize),
    Ge(usize),
    Upper(usize),
}

/// Consecutive degenerate pivots before switching to Bland's rule.
const BLAND_AFTER: usize = 50;

/// Harris allowance below a (shifted) lower bound, relative to `1 + max|b|`.
const FEAS_TOL: f64 = 1e-9;

/// Relative pivot threshold in the dual simplex cleanup.
const DUAL_PIVOT_TOL: f64 = 1e-5;

/// Primal/dual alternations allowed in phase 2.
const CLEANUP_ROUNDS: usize = 5;

/// Infeasibility left to the certificate when no dual pivot exists.
const ROUNDOFF_TOL: f64 = 1e-7;

/// Revised simplex on `A x = b, x ≥ lb` with `lb ≤ 0` a vector of bound
/// shifts (all zero at the start and at the end).
///
/// The basis matrix is factored from the original columns at every
/// iteration, so no error accumulates across pivots. A basic variable that
/// round-off pushes below its bound has the bound moved down to meet it;
/// the shifts are removed afterwards and the dual simplex repairs what is
/// left.
struct Revised {
    /// Column-major copy of `A`.
    cols: Vec<Vec<f64>>,
    b: Vec<f64>,
    basis: Vec<usize>,
    lb: Vec<f64>,
    pivots: usize,
    max_pivots: usize,
}

struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

impl Revised {
    fn m(&self) -> usize {
        self.b.len()
    }

    fn factor(&self) -> Result<Factored> {
        let m = self.m();
        let bmat = DMatrix::from_fn(m, m, |r, k| self.cols[self.basis[k]][r]);
        let lu_t = bmat.transpose().lu();
        let lu = bmat.lu();
        if !lu.is_invertible() {
            return Err(Error::Numeric("singular basis".into()));
        }
        Ok(Factored { lu, lu_t })
    }

    fn solve(f: &Factored, rhs: &[f64]) -> Result<Vec<f64>> {
        f.lu.solve(&DVector::from_column_slice(rhs))
            .map(|v| v.as_slice().to_vec())
            .ok_or_else(|| Error::Numeric("singular basis".into()))
    }

    fn solve_t(f: &Factored, rhs: &[f64]) -> Result<Vec<f64>> {
        f.lu_t
            .solve(&DVector::from_column_slice(rhs))
            .map(|v| v.as_slice().to_vec())
            .ok_or_else(|| Error::Numeric("singular basis".into()))
    }

    fn in_basis(&self) -> Vec<bool> {
        let mut flags = vec![false; self.cols.len()];
        self.basis.iter().for_each(|&k| flags[k] = true);
        flags
    }

    /// Basic values with every nonbasic variable at its bound.
    fn basic_values(&self, f: &Factored) -> Result<Vec<f64>> {
        let in_basis = self.in_basis();
        let mut rhs = self.b.clone();
        for (j, &l) in self.lb.iter().enumerate() {
            if l != 0.0 && !in_basis[j] {
                rhs.iter_mut().zip(&self.cols[j]).for_each(|(r, a)| *r -= l * a);
            }
        }
        Self::solve(f, &rhs)
    }

    fn duals(&self, f: &Factored, cost: &[f64]) -> Result<Vec<f64>> {
        let cb: Vec<f64> = self.basis.iter().map(|&k| cost[k]).collect();
        Self::solve_t(f, &cb)
    }

    fn feas_tol(&self) -> f64 {
        FEAS_TOL * (1.0 + max_abs(&self.b))
    }

    /// Primal simplex. The most negative reduced cost enters; after
    /// `BLAND_AFTER` degenerate pivots in a row the lowest eligible index
    /// enters instead, until the objective moves again. Columns with
    /// `allowed[j] == false` never enter. Returns `false` when unbounded.
    fn run(&mut self, cost: &[f64], allowed: &[bool]) -> Result<bool> {
        let delta = self.feas_tol();
        let mut degenerate = 0;
        loop {
            let f = self.factor()?;
            let xb = self.basic_values(&f)?;
            for (k, &x) in xb.iter().enumerate() {
                let j = self.basis[k];
                if x < self.lb[j] {
                    self.lb[j] = x;
                }
            }
            let pi = self.duals(&f, cost)?;
            let in_basis = self.in_basis();
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.cols.len() {
                if !allowed[j] || in_basis[j] {
                    continue;
                }
                let d = cost[j] - crate::linalg::dot(&self.cols[j], &pi);
                if d >= -OPT_TOL {
                    continue;
                }
                if degenerate >= BLAND_AFTER {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, best)| d < best) {
                    entering = Some((j, d));
                }
            }
            let Some((q, _)) = entering else {
                return Ok(true);
            };
            let alpha = Self::solve(&f, &self.cols[q])?;
            let tol = PIVOT_TOL;
            let room = |r: usize| xb[r] - self.lb[self.basis[r]];
            // Two-pass ratio test: bound the step allowing `delta` below the
            // bounds, then take the largest pivot among rows within it.
            let mut theta_max = f64::INFINITY;
            for (r, &a) in alpha.iter().enumerate() {
                if a > tol {
                    theta_max = theta_max.min((room(r) + delta) / a);
                }
            }
            let mut leave: Option<usize> = None;
            for (r, &a) in alpha.iter().enumerate() {
                if a > tol && room(r) / a <= theta_max {
                    leave = match leave {
                        Some(l) if alpha[l] > a || alpha[l] == a && self.basis[l] < self.basis[r] => Some(l),
                        _ => Some(r),
                    };
                }
            }
            let Some(r) = leave else {
                return Ok(false);
            };
            if self.pivots >= self.max_pivots {
                return Err(Error::NonConvergence { what: "simplex", iterations: self.pivots, last: f64::NAN });
            }
            let theta = (room(r) / alpha[r]).max(0.0);
            degenerate = if theta <= 1e-12 { degenerate + 1 } else { 0 };
            self.basis[r] = q;
            self.pivots += 1;
        }
    }

    /// Removes every bound shift, then runs the dual simplex from the
    /// (dual-feasible) basis: the most negative basic variable leaves, the
    /// entering column keeps reduced costs nonnegative.
    fn unshift(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
        self.lb.iter_mut().for_each(|l| *l = 0.0);
        let tol = self.feas_tol();
        loop {
            let f = self.factor()?;
            let xb = Self::solve(&f, &self.b)?;
            let Some((r, &xr)) = xb.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) else {
                return Ok(());
            };
            if xr >= -tol {
                return Ok(());
            }
            let pi = self.duals(&f, cost)?;
            let z = self.tableau_row(&f, r)?;
            let row: Vec<f64> = self.cols.iter().map(|c| crate::linalg::dot(&z, c)).collect();
            let piv_tol = DUAL_PIVOT_TOL * max_abs(&row).max(1.0);
            let in_basis = self.in_basis();
            let mut best: Option<(usize, f64, f64)> = None;
            for j in 0..self.cols.len() {
                if !allowed[j] || in_basis[j] || row[j] >= -piv_tol {
                    continue;
                }
                let d = (cost[j] - crate::linalg::dot(&self.cols[j], &pi)).max(0.0);
                let ratio = d / -row[j];
                best = match best {
                    Some((bj, br, ba)) if br < ratio - 1e-12 || br <= ratio + 1e-12 && ba >= -row[j] => {
                        Some((bj, br, ba))
                    }
                    _ => Some((j, ratio, -row[j])),
                };
            }
            let Some((q, _, _)) = best else {
                if xr >= -ROUNDOFF_TOL * (1.0 + max_abs(&self.b)) {
                    return Ok(());
                }
                return Err(Error::Numeric(format!("basic variable {xr:.3e} cannot be restored to feasibility")));
            };
            if self.pivots >= self.max_pivots {
                return Err(Error::NonConvergence { what: "dual simplex", iterations: self.pivots, last: xr });
            }
            self.basis[r] = q;
            self.pivots += 1;
        }
    }

    /// Row `r` of `B⁻¹`.
    fn tableau_row(&self, f: &Factored, r: usize) -> Result<Vec<f64>> {
        let mut e = vec![0.0; self.m()];
        e[r] = 1.0;
        Self::solve_t(f, &e)
    }

    /// Drops constraint row `i` together with the basic variable at basis
    /// position `k`, whose column must be the unit vector on row `i`.
    fn remove_row(&mut self, i: usize, k: usize) {
        for c in self.cols.iter_mut() {
            c.remove(i);
        }
        self.b.remove(i);
        self.basis.remove(k);
    }
}

pub fn solve_lp(lp: &StandardLp) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.n_vars();

    // Standard-form columns: x_j⁺ for every variable, x_j⁻ for free ones.
    let mut neg_col = vec![None; n];
    let mut ncols = n;
    for j in 0..n {
        if lp.lower[j] == f64::NEG_INFINITY {
            neg_col[j] = Some(ncols);
            ncols += 1;
        }
    }
    let n_struct = ncols;

    // Rows: (coefficients over original vars, rhs, has slack, origin).
    let mut rows: Vec<(Vec<f64>, f64, bool, RowOrigin)> = Vec::new();
    for (r, (a, &b)) in lp.a_eq.iter().zip(&lp.b_eq).enumerate() {
        rows.push((a.clone(), b, false, RowOrigin::Eq(r)));
    }
    for (r, (a, &b)) in lp.a_ge.iter().zip(&lp.b_ge).enumerate() {
        rows.push((a.clone(), b, true, RowOrigin::Ge(r)));
    }
    for j in 0..n {
        if lp.upper[j].is_finite() {
            let mut a = vec![0.0; n];
            a[j] = -1.0;
            rows.push((a, -lp.upper[j], true, RowOrigin::Upper(j)));
        }
    }
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.2).count();
    let art_base = n_struct + n_slack;

    // Dense standard-form matrix, each row scaled so its rhs is ≥ 0.
    let mut a_std = vec![vec![0.0; art_base]; m];
    let mut b_std = vec![0.0; m];
    let mut sign = vec![1.0; m];
    let mut slack_of_row = vec![None; m];
    let mut s = n_struct;
    for (r, (a, b, has_slack, _)) in rows.iter().enumerate() {
        for j in 0..n {
            a_std[r][j] = a[j];
            if let Some(nc) = neg_col[j] {
                a_std[r][nc] = -a[j];
            }
        }
        if *has_slack {
            a_std[r][s] = -1.0;
            slack_of_row[r] = Some(s);
            s += 1;
        }
        b_std[r] = *b;
        // Flip `≥` rows with b ≤ 0 (and equalities with b < 0) so the rhs is
        // nonnegative; a flipped `≥` row starts with its slack basic.
        if *b < 0.0 || *has_slack && *b == 0.0 {
            sign[r] = -1.0;
            a_std[r].iter_mut().for_each(|x| *x = -*x);
            b_std[r] = -*b + 0.0;
        }
    }

    // Initial basis: a slack with coefficient +1 where available, else an artificial.
    let mut basis = vec![0; m];
    let mut art_row = Vec::new();
    for r in 0..m {
        match slack_of_row[r] {
            Some(sc) if a_std[r][sc] == 1.0 => basis[r] = sc,
            _ => {
                basis[r] = art_base + art_row.len();
                art_row.push(r);
            }
        }
    }
    let n_art = art_row.len();
    let total = art_base + n_art;
    let mut cols: Vec<Vec<f64>> =
        (0..total).map(|j| (0..m).map(|r| if j < art_base { a_std[r][j] } else { 0.0 }).collect()).collect();
    for (k, &r) in art_row.iter().enumerate() {
        cols[art_base + k][r] = 1.0;
    }
    let mut rs = Revised {
        cols,
        b: b_std.clone(),
        basis,
        lb: vec![0.0; total],
        pivots: 0,
        max_pivots: 10 * (m + total) * (m + total),
    };

    // Phase 1.
    if n_art > 0 {
        let mut cost1 = vec![0.0; total];
        cost1[art_base..].iter_mut().for_each(|x| *x = 1.0);
        let all = vec![true; total];
        if !rs.run(&cost1, &all)? {
            return Err(Error::Numeric("phase 1 lost its bound".into()));
        }
        rs.lb.iter_mut().for_each(|l| *l = 0.0);
        let f = rs.factor()?;
        let xb = Revised::solve(&f, &rs.b)?;
        let infeas: f64 = rs.basis.iter().zip(&xb).filter(|(&k, _)| k >= art_base).map(|(_, x)| x.max(0.0)).sum();
        if infeas > FEAS_TOL * (1.0 + max_abs(&b_std)) {
            return Ok(LpSolution::empty(LpStatus::Infeasible, rs.pivots));
        }
        // Drive remaining artificials out; drop rows that turn out redundant.
        let mut r = 0;
        while r < rs.m() {
            if rs.basis[r] < art_base {
                r += 1;
                continue;
            }
            let f = rs.factor()?;
            let z = rs.tableau_row(&f, r)?;
            let in_basis = rs.in_basis();
            let best = (0..art_base)
                .filter(|&j| !in_basis[j])
                .map(|j| (j, crate::linalg::dot(&z, &rs.cols[j]).abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match best {
                Some((j, v)) if v > 1e-7 => {
                    rs.basis[r] = j;
                    rs.pivots += 1;
                    r += 1;
                }
                _ => {
                    let i = rs.cols[rs.basis[r]].iter().position(|&x| x == 1.0).expect("artificial column");
                    rs.remove_row(i, r);
                    sign.remove(i);
                    rows.remove(i);
                }
            }
        }
    }

    // Phase 2.
    let mut cost2 = vec![0.0; total];
    for j in 0..n {
        cost2[j] = lp.objective[j];
        if let Some(nc) = neg_col[j] {
            cost2[nc] = -lp.objective[j];
        }
    }
    let mut allowed = vec![true; total];
    allowed[art_base..].iter_mut().for_each(|x| *x = false);
    // Removing the shifts can cost dual feasibility in an ill-conditioned
    // basis; alternate until neither pass pivots.
    for _ in 0..CLEANUP_ROUNDS {
        let before = rs.pivots;
        if !rs.run(&cost2, &allowed)? {
            return Ok(LpSolution::empty(LpStatus::Unbounded, rs.pivots));
        }
        rs.unshift(&cost2, &allowed)?;
        if rs.pivots == before {
            break;
        }
    }

    // Recover x_B and π from the final basis.
    let f = rs.factor()?;
    let xb = Revised::solve(&f, &rs.b)?;
    let pi = rs.duals(&f, &cost2)?;

    let mut x_std = vec![0.0; art_base];
    for (k, &col) in rs.basis.iter().enumerate() {
        if col < art_base {
            x_std[col] = xb[k].max(0.0);
        }
    }
    let mut x = vec![0.0; n];
    for j in 0..n {
        x[j] = x_std[j] - neg_col[j].map_or(0.0, |nc| x_std[nc]);
    }

    let mut dual_eq = vec![0.0; lp.b_eq.len()];
    let mut dual_ge = vec![0.0; lp.b_ge.len()];
    let mut dual_upper = vec![0.0; n];
    for (r, row) in rows.iter().enumerate() {
        let d = sign[r] * pi[r];
        match row.3 {
            RowOrigin::Eq(e) => dual_eq[e] = d,
            RowOrigin::Ge(g) => dual_ge[g] = d,
            RowOrigin::Upper(j) => dual_upper[j] = d,
        }
    }

    let objective_value = crate::linalg::dot(&lp.objective, &x);
    let dual_objective = crate::linalg::dot(&lp.b_eq, &dual_eq) + crate::linalg::dot(&lp.b_ge, &dual_ge)
        - (0..n).filter(|&j| lp.upper[j].is_finite()).map(|j| lp.upper[j] * dual_upper[j]).sum::<f64>();
    let mut sol = LpSolution {
        status: LpStatus::Optimal,
        x,
        objective_value,
        dual_eq,
        dual_ge,
        dual_upper,
        dual_objective,
        certificate: Certificate::default(),
        pivots: rs.pivots,
    };
    sol.certificate = certify(lp, &sol);
    let scale = problem_scale(lp, &sol);
    if sol.certificate.max() > CERT_TOL * scale {
        return Err(Error::Numeric(format!("simplex certificate failed: {:?} (scale {scale:.3e})", sol.certificate)));
    }
    Ok(sol)
}

/// Magnitude used to make the certificate tolerance scale-aware.
pub fn problem_scale(lp: &StandardLp, sol: &LpSolution) -> f64 {
    let mx = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let data = mx(&lp.objective).max(mx(&lp.b_eq)).max(mx(&lp.b_ge));
    let vars = mx(&sol.x).max(mx(&sol.dual_eq)).max(mx(&sol.dual_ge));
    1.0 + data.max(vars).max(sol.objective_value.abs())
}

/// Optimality residuals of a claimed primal-dual pair.
pub fn certify(lp: &StandardLp, sol: &LpSolution) -> Certificate {
    let n = lp.n_vars();
    let x = &sol.x;
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for (a, &b) in lp.a_eq.iter().zip(&lp.b_eq) {
        primal = primal.max((crate::linalg::dot(a, x) - b).abs());
    }
    for ((a, &b), &d) in lp.a_ge.iter().zip(&lp.b_ge).zip(&sol.dual_ge) {
        let slack = crate::linalg::dot(a, x) - b;
        primal = primal.max(-slack);
        comp = comp.max((d * slack).abs());
    }
    let mut dual: f64 = 0.0;
    for &d in &sol.dual_ge {
        dual = dual.max(-d);
    }
    for j in 0..n {
        if lp.lower[j] == 0.0 {
            primal = primal.max(-x[j]);
        }
        if lp.upper[j].is_finite() {
            primal = primal.max(x[j] - lp.upper[j]);
            dual = dual.max(-sol.dual_upper[j]);
            comp = comp.max((sol.dual_upper[j] * (lp.upper[j] - x[j])).abs());
        }
        // Reduced cost d_j = c_j − Σ π a_j + σ_j.
        let mut rc = lp.objective[j] + sol.dual_upper[j];
        for (a, &p) in lp.a_eq.iter().zip(&sol.dual_eq) {
            rc -= p * a[j];
        }
        for (a, &p) in lp.a_ge.iter().zip(&sol.dual_ge) {
            rc -= p * a[j];
        }
        if lp.lower[j] == 0.0 {
            dual = dual.max(-rc);
            comp = comp.max((rc * x[j]).abs());
        } else {
            dual = dual.max(rc.abs());
        }
    }
    Certificate {
        primal_residual: primal,
        dual_residual: dual,
        complementarity: comp,
        gap: (sol.objective_value - sol.dual_objective).abs(),
    }
}
