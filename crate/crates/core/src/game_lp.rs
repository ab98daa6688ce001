//! The single-controller game as a linear program over a finite set of
//! candidate kernel rows, grown by constraint generation.
//!
//! Primal variables are `β` (per-state values), `V` (relative values) and
//! the randomized policy `y`. For every state `i` and candidate row `q`:
//!
//! ```text
//! β_i ≥ Σ_j q_j β_j                                  (value rows)
//! β_i + V_i ≥ Σ_u y_i(u) c̃(i,u,q) + Σ_j q_j V_j      (payoff rows)
//! Σ_u y_i(u) = 1,  y ≥ 0
//! ```
//!
//! minimizing `Σ β_i`. With a multiplier `Γ` the program is doubled with
//! `(β′, V′)` on the constraint cost sharing the same `y`, and the objective
//! becomes `Σ β_i + Γ(Σ β′_i − |S| C)`.
//!
//! Payoff rows are only formed for candidates absolutely continuous with
//! respect to every `p(·|i,u)`; elsewhere some coefficient is `-inf` and
//! the row is vacuous.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generate::random_row;
use crate::linalg::{self, log_sum_exp};
use crate::lp::{solve_lp, LpSolution, LpStatus, StandardLp};
use crate::model::{support_common, support_union, CostTag, Mdp, Policy, SUPPORT_EPS};
use crate::par::{map_indexed, Execution};
use crate::spectral::{support_graph, tarjan};
use crate::variational::{c_tilde, mixture_tilt_masked};

/// Violations below this are not turned into new candidates.
pub const SEPARATION_EPS: f64 = 1e-9;
/// New rows within this L1 distance of a stored one are dropped.
pub const DUPLICATE_L1: f64 = 1e-9;
/// Largest violation accepted when generation stalls on duplicate cuts.
pub const STALL_TOL: f64 = 1e-6;
pub const SEED_ROWS_PER_STATE: usize = 8;
const CANDIDATE_SEED: u64 = 0x5eed_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Vertex,
    Tilt,
    MixtureTilt,
    Seed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub row: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CandidateSet {
    pub per_state: Vec<Vec<Candidate>>,
}

impl CandidateSet {
    pub fn new(n_states: usize) -> Self {
        CandidateSet { per_state: vec![Vec::new(); n_states] }
    }

    /// Adds `row` at state `i` unless a near-duplicate is stored. Returns
    /// whether it was added.
    pub fn push(&mut self, i: usize, row: Vec<f64>, provenance: Provenance) -> bool {
        let dup = self.per_state[i]
            .iter()
            .any(|c| c.row.iter().zip(&row).map(|(a, b)| (a - b).abs()).sum::<f64>() <= DUPLICATE_L1);
        if dup {
            return false;
        }
        self.per_state[i].push(Candidate { row, provenance });
        true
    }

    pub fn len(&self) -> usize {
        self.per_state.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn seed_candidates(m: &Mdp, _cost_tag: CostTag) -> CandidateSet {
    let n = m.n_states();
    let mut set = CandidateSet::new(n);
    for i in 0..n {
        for u in 0..m.n_actions() {
            set.push(i, m.p_row(i, u).to_vec(), Provenance::Seed);
        }
        let sup = support_union(m, i);
        for &j in &sup {
            let mut d = vec![0.0; n];
            d[j] = 1.0;
            set.push(i, d, Provenance::Vertex);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(CANDIDATE_SEED ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        for _ in 0..SEED_ROWS_PER_STATE {
            set.push(i, random_row(&mut rng, n, &sup), Provenance::Seed);
        }
    }
    set
}

/// Payoff coefficients `c̃(i,u,q)` for every action, or `None` when some
/// is `-inf`.
pub fn payoff_row(m: &Mdp, i: usize, q: &[f64], cost_tag: CostTag) -> Result<Option<Vec<f64>>> {
    let mut out = Vec::with_capacity(m.n_actions());
    for u in 0..m.n_actions() {
        let v = c_tilde(m, i, u, q, cost_tag)?;
        if !v.is_finite() {
            return Ok(None);
        }
        out.push(v);
    }
    Ok(Some(out))
}

/// Column positions of the primal variables.
#[derive(Debug, Clone, Copy)]
pub struct PrimalLayout {
    pub n: usize,
    pub a: usize,
    pub constrained: bool,
}

impl PrimalLayout {
    pub fn beta(&self, i: usize) -> usize {
        i
    }
    pub fn v(&self, i: usize) -> usize {
        self.n + i
    }
    pub fn y(&self, i: usize, u: usize) -> usize {
        2 * self.n + i * self.a + u
    }
    pub fn beta_k(&self, i: usize) -> usize {
        2 * self.n + self.n * self.a + i
    }
    pub fn v_k(&self, i: usize) -> usize {
        3 * self.n + self.n * self.a + i
    }
    pub fn total(&self) -> usize {
        2 * self.n + self.n * self.a + if self.constrained { 2 * self.n } else { 0 }
    }
}

fn add_block_rows(
    lp: &mut StandardLp,
    m: &Mdp,
    cands: &CandidateSet,
    cost_tag: CostTag,
    beta: impl Fn(usize) -> usize,
    v: impl Fn(usize) -> usize,
    lay: &PrimalLayout,
) -> Result<()> {
    let n = m.n_states();
    let nv = lp.n_vars();
    for i in 0..n {
        for cand in &cands.per_state[i] {
            let q = &cand.row;
            let mut row = vec![0.0; nv];
            row[beta(i)] += 1.0;
            for j in 0..n {
                row[beta(j)] -= q[j];
            }
            lp.add_ge(row, 0.0);
            if let Some(ct) = payoff_row(m, i, q, cost_tag)? {
                let mut row = vec![0.0; nv];
                row[beta(i)] += 1.0;
                row[v(i)] += 1.0;
                for j in 0..n {
                    row[v(j)] -= q[j];
                }
                for (u, &x) in ct.iter().enumerate() {
                    row[lay.y(i, u)] = -x;
                }
                lp.add_ge(row, 0.0);
            }
        }
    }
    Ok(())
}

/// The primal program. `cands_k` (constraint-cost candidates) is required
/// when `gamma` is given.
pub fn build_primal(
    m: &Mdp,
    cands: &CandidateSet,
    cands_k: Option<&CandidateSet>,
    cost_tag: CostTag,
    gamma: Option<f64>,
) -> Result<StandardLp> {
    let n = m.n_states();
    let lay = PrimalLayout { n, a: m.n_actions(), constrained: gamma.is_some() };
    let mut lp = StandardLp::new(lay.total());
    for i in 0..n {
        lp.set_free(lay.beta(i));
        lp.set_free(lay.v(i));
        lp.objective[lay.beta(i)] = 1.0;
    }
    add_block_rows(&mut lp, m, cands, cost_tag, |i| lay.beta(i), |i| lay.v(i), &lay)?;
    if let Some(g) = gamma {
        if !m.has_constraint() {
            return Err(Error::MissingConstraint);
        }
        let ck = cands_k.ok_or_else(|| Error::Validation("constraint candidates missing".into()))?;
        for i in 0..n {
            lp.set_free(lay.beta_k(i));
            lp.set_free(lay.v_k(i));
            lp.objective[lay.beta_k(i)] = g;
        }
        add_block_rows(&mut lp, m, ck, CostTag::Constraint, |i| lay.beta_k(i), |i| lay.v_k(i), &lay)?;
    }
    for i in 0..n {
        let mut row = vec![0.0; lay.total()];
        for u in 0..m.n_actions() {
            row[lay.y(i, u)] = 1.0;
        }
        lp.add_eq(row, 1.0);
    }
    Ok(lp)
}

/// Column positions of the dual variables. `mu` entries are `None` for
/// candidates without a payoff row.
#[derive(Debug, Clone)]
pub struct DualLayout {
    pub nu: Vec<Vec<usize>>,
    pub mu: Vec<Vec<Option<usize>>>,
    pub nu_k: Vec<Vec<usize>>,
    pub mu_k: Vec<Vec<Option<usize>>>,
    pub w: Vec<usize>,
    pub total: usize,
}

/// The dual program, stated as a minimization of `-Σ w`.
pub fn build_dual(
    m: &Mdp,
    cands: &CandidateSet,
    cands_k: Option<&CandidateSet>,
    cost_tag: CostTag,
    gamma: Option<f64>,
) -> Result<(StandardLp, DualLayout)> {
    let n = m.n_states();
    let na = m.n_actions();
    let mut next = 0;
    let mut payoffs: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(n);
    let mut nu = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    for i in 0..n {
        let mut pi = Vec::new();
        let mut nui = Vec::new();
        let mut mui = Vec::new();
        for cand in &cands.per_state[i] {
            nui.push(next);
            next += 1;
            let pr = payoff_row(m, i, &cand.row, cost_tag)?;
            mui.push(pr.as_ref().map(|_| {
                next += 1;
                next - 1
            }));
            pi.push(pr);
        }
        payoffs.push(pi);
        nu.push(nui);
        mu.push(mui);
    }
    let mut payoffs_k: Vec<Vec<Option<Vec<f64>>>> = Vec::new();
    let mut nu_k = Vec::new();
    let mut mu_k = Vec::new();
    let g = gamma.unwrap_or(0.0);
    let bound = if gamma.is_some() { m.constraint_bound()? } else { 0.0 };
    if gamma.is_some() {
        let ck = cands_k.ok_or_else(|| Error::Validation("constraint candidates missing".into()))?;
        for i in 0..n {
            let mut pi = Vec::new();
            let mut nui = Vec::new();
            let mut mui = Vec::new();
            for cand in &ck.per_state[i] {
                nui.push(next);
                next += 1;
                let pr = payoff_row(m, i, &cand.row, CostTag::Constraint)?;
                mui.push(pr.as_ref().map(|_| {
                    next += 1;
                    next - 1
                }));
                pi.push(pr);
            }
            payoffs_k.push(pi);
            nu_k.push(nui);
            mu_k.push(mui);
        }
    }
    let w: Vec<usize> = (0..n).map(|i| next + i).collect();
    let total = next + n;
    let mut lp = StandardLp::new(total);
    for &wi in &w {
        lp.set_free(wi);
        lp.objective[wi] = -1.0;
    }

    // Balance rows: one pair per state for each block.
    let balance = |lp: &mut StandardLp, cs: &CandidateSet, nu: &[Vec<usize>], mu: &[Vec<Option<usize>>]| {
        for j in 0..n {
            let mut value_row = vec![0.0; total];
            let mut flow_row = vec![0.0; total];
            for i in 0..n {
                for (q, cand) in cs.per_state[i].iter().enumerate() {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    value_row[nu[i][q]] += delta - cand.row[j];
                    if let Some(mq) = mu[i][q] {
                        flow_row[mq] += delta - cand.row[j];
                        if i == j {
                            value_row[mq] += 1.0;
                        }
                    }
                }
            }
            lp.add_eq(value_row, 1.0);
            lp.add_eq(flow_row, 0.0);
        }
    };
    balance(&mut lp, cands, &nu, &mu);
    if let Some(ck) = cands_k {
        if gamma.is_some() {
            balance(&mut lp, ck, &nu_k, &mu_k);
        }
    }

    // Payoff rows for every (i, u).
    for i in 0..n {
        for u in 0..na {
            let mut row = vec![0.0; total];
            for (q, pr) in payoffs[i].iter().enumerate() {
                if let (Some(pr), Some(mq)) = (pr, mu[i][q]) {
                    row[mq] = pr[u];
                }
            }
            if gamma.is_some() {
                for (q, pr) in payoffs_k[i].iter().enumerate() {
                    if let (Some(pr), Some(mq)) = (pr, mu_k[i][q]) {
                        row[mq] = g * pr[u];
                    }
                }
            }
            row[w[i]] = -1.0;
            lp.add_ge(row, g * bound);
        }
    }
    Ok((lp, DualLayout { nu, mu, nu_k, mu_k, w, total }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cut {
    pub state: usize,
    pub row: Vec<f64>,
    pub violation: f64,
    pub provenance: Provenance,
}

/// Entries below this are cut when snapping a tilt to its face.
pub const FACE_SNAP: f64 = 1e-7;

/// `q` with entries below [`FACE_SNAP`] zeroed and renormalized, or `None`
/// when nothing would change.
fn snap_to_face(q: &[f64]) -> Option<Vec<f64>> {
    if !q.iter().any(|&x| x > 0.0 && x < FACE_SNAP) {
        return None;
    }
    let mut out: Vec<f64> = q.iter().map(|&x| if x < FACE_SNAP { 0.0 } else { x }).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    Some(out)
}

/// Most violated value-row and payoff-row candidate per state.
pub fn separation_oracle(
    m: &Mdp,
    beta: &[f64],
    v: &[f64],
    y: &[Vec<f64>],
    cost_tag: CostTag,
    exec: Execution,
) -> Result<Vec<Cut>> {
    let n = m.n_states();
    let per_state: Vec<Result<Vec<Cut>>> = map_indexed(n, exec, |i| {
        let mut cuts = Vec::new();
        let sup = support_union(m, i);
        let mut best = sup[0];
        for &j in &sup {
            if beta[j] > beta[best] {
                best = j;
            }
        }
        let viol = beta[best] - beta[i];
        if viol > SEPARATION_EPS {
            let mut d = vec![0.0; n];
            d[best] = 1.0;
            cuts.push(Cut { state: i, row: d, violation: viol, provenance: Provenance::Vertex });
        }
        let common = support_common(m, i);
        if !common.is_empty() {
            let mut mask = vec![false; n];
            common.iter().for_each(|&j| mask[j] = true);
            let rows: Vec<&[f64]> = (0..m.n_actions()).map(|u| m.p_row(i, u)).collect();
            let t = mixture_tilt_masked(&y[i], &rows, v, Some(&mask))?;
            let mut yc = 0.0;
            for (u, &yu) in y[i].iter().enumerate() {
                yc += yu * m.cost(cost_tag, i, u)?;
            }
            let viol = yc + t.value - beta[i] - v[i];
            if viol > SEPARATION_EPS {
                let point = y[i].iter().filter(|&&x| x > 1e-12).count() == 1;
                let provenance = if point { Provenance::Tilt } else { Provenance::MixtureTilt };
                // Generated tilts can approach a face of the simplex one
                // round at a time; the face point ends that chase.
                let row = snap_to_face(&t.q_star).unwrap_or(t.q_star);
                cuts.push(Cut { state: i, row, violation: viol, provenance });
            }
        }
        Ok(cuts)
    });
    let mut out = Vec::new();
    for r in per_state {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameSolution {
    pub beta: Vec<f64>,
    /// Relative values after polishing (see [`polish_values`]).
    pub v: Vec<f64>,
    /// Relative values exactly as returned by the LP.
    pub v_lp: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub beta_k: Option<Vec<f64>>,
    pub v_k: Option<Vec<f64>>,
    /// Dual weights per (state, candidate); zero where the candidate has no payoff row.
    pub mu: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub mu_k: Option<Vec<Vec<f64>>>,
    pub nu_k: Option<Vec<Vec<f64>>>,
    pub w: Vec<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub gap: f64,
    /// Largest violation of the primal rows at `(β, V_lp, y)`.
    pub primal_residual: f64,
    pub rounds: usize,
    pub max_violation: f64,
    pub gamma: Option<f64>,
    pub candidates: CandidateSet,
    pub candidates_k: Option<CandidateSet>,
    /// Primal objective after each round.
    pub history: Vec<f64>,
}

impl GameSolution {
    pub fn lambda_star(&self) -> f64 {
        self.beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn policy(&self) -> Policy {
        Policy::Randomized(self.y.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationConfig {
    pub eps: f64,
    pub max_rounds: usize,
    pub exec: Execution,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig { eps: 1e-7, max_rounds: 200, exec: Execution::Sequential }
    }
}

struct PrimalPoint {
    beta: Vec<f64>,
    v: Vec<f64>,
    y: Vec<Vec<f64>>,
    beta_k: Option<Vec<f64>>,
    v_k: Option<Vec<f64>>,
}

fn require_optimal(sol: &LpSolution, what: &str) -> Result<()> {
    match sol.status {
        LpStatus::Optimal => Ok(()),
        s => Err(Error::Numeric(format!("{what} returned {s:?}"))),
    }
}

struct Relaxation {
    sol: LpSolution,
    lay: DualLayout,
    pt: PrimalPoint,
}

/// Solves the current relaxation through its dual, which has one column per
/// candidate but only `2|S|` (or `4|S|`) equality rows and `|S||A|`
/// inequality rows. The primal point is read off the row multipliers:
/// `β = −π` on the value rows, `V = −π` on the flow rows, `y = π` on the
/// payoff rows, and the constraint block scaled by `1/Γ`.
fn solve_relaxation(
    m: &Mdp,
    cands: &CandidateSet,
    cands_k: Option<&CandidateSet>,
    cost_tag: CostTag,
    gamma: Option<f64>,
) -> Result<Relaxation> {
    let n = m.n_states();
    let na = m.n_actions();
    let (dlp, lay) = build_dual(m, cands, cands_k, cost_tag, gamma)?;
    let sol = solve_lp(&dlp)?;
    if sol.status == LpStatus::Infeasible {
        let bare: Vec<usize> = (0..n).filter(|&i| support_common(m, i).is_empty()).collect();
        if !bare.is_empty() {
            return Err(Error::Validation(format!(
                "relaxation is unbounded below: states {bare:?} have no successor shared by all actions, \
                 so no payoff row bounds them"
            )));
        }
    }
    require_optimal(&sol, "dual relaxation")?;
    let y = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..na).map(|u| sol.dual_ge[i * na + u].max(0.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            row
        })
        .collect();
    let block = |off: usize, scale: f64| -> (Vec<f64>, Vec<f64>) {
        (
            (0..n).map(|j| -sol.dual_eq[off + 2 * j] / scale).collect(),
            (0..n).map(|j| -sol.dual_eq[off + 2 * j + 1] / scale).collect(),
        )
    };
    let (beta, v) = block(0, 1.0);
    let (beta_k, v_k) = match gamma {
        Some(g) => {
            let (b, w) = block(2 * n, g);
            (Some(b), Some(w))
        }
        None => (None, None),
    };
    Ok(Relaxation { sol, lay, pt: PrimalPoint { beta, v, y, beta_k, v_k } })
}

/// Largest violation of the primal rows (value, payoff and `Σ y = 1`) at a point.
pub fn primal_residual(
    m: &Mdp,
    cands: &CandidateSet,
    cands_k: Option<&CandidateSet>,
    cost_tag: CostTag,
    gamma: Option<f64>,
    sol: &GameSolution,
) -> Result<f64> {
    let lp = build_primal(m, cands, cands_k, cost_tag, gamma)?;
    let n = m.n_states();
    let lay = PrimalLayout { n, a: m.n_actions(), constrained: gamma.is_some() };
    let mut x = vec![0.0; lay.total()];
    for i in 0..n {
        x[lay.beta(i)] = sol.beta[i];
        x[lay.v(i)] = sol.v_lp[i];
        for u in 0..m.n_actions() {
            x[lay.y(i, u)] = sol.y[i][u];
        }
        if let (Some(b), Some(w)) = (&sol.beta_k, &sol.v_k) {
            x[lay.beta_k(i)] = b[i];
            x[lay.v_k(i)] = w[i];
        }
    }
    let ge = lp.a_ge.iter().zip(&lp.b_ge).map(|(a, &b)| b - linalg::dot(a, &x));
    let eq = lp.a_eq.iter().zip(&lp.b_eq).map(|(a, &b)| (b - linalg::dot(a, &x)).abs());
    Ok(ge.chain(eq).fold(0.0, f64::max))
}

pub fn solve_with_generation(
    m: &Mdp,
    cost_tag: CostTag,
    gamma: Option<f64>,
    eps: f64,
    max_rounds: usize,
) -> Result<GameSolution> {
    solve_with_config(m, cost_tag, gamma, &GenerationConfig { eps, max_rounds, ..Default::default() })
}

pub fn solve_with_config(
    m: &Mdp,
    cost_tag: CostTag,
    gamma: Option<f64>,
    cfg: &GenerationConfig,
) -> Result<GameSolution> {
    if !(cfg.eps > 0.0) {
        return Err(Error::Validation("eps must be positive".into()));
    }
    if cfg.max_rounds == 0 {
        return Err(Error::Validation("max_rounds must be at least 1".into()));
    }
    if let Some(g) = gamma {
        if !(g >= 0.0) || !g.is_finite() {
            return Err(Error::Validation(format!("gamma {g} must be finite and nonnegative")));
        }
        m.constraint_bound()?;
        if g == 0.0 {
            return solve_gamma_zero(m, cost_tag, cfg);
        }
    }
    let mut cands = seed_candidates(m, cost_tag);
    let mut cands_k = gamma.map(|_| seed_candidates(m, CostTag::Constraint));
    let mut history = Vec::new();
    let mut rounds = 0;
    let mut last: Option<(Relaxation, f64)> = None;
    let mut converged = false;
    while rounds < cfg.max_rounds {
        rounds += 1;
        let rel = solve_relaxation(m, &cands, cands_k.as_ref(), cost_tag, gamma)?;
        history.push(-rel.sol.dual_objective);
        let pt = &rel.pt;
        let mut cuts = separation_oracle(m, &pt.beta, &pt.v, &pt.y, cost_tag, cfg.exec)?;
        let mut cuts_k = Vec::new();
        if let (Some(bk), Some(vk)) = (&pt.beta_k, &pt.v_k) {
            cuts_k = separation_oracle(m, bk, vk, &pt.y, CostTag::Constraint, cfg.exec)?;
        }
        let max_viol = cuts.iter().chain(&cuts_k).map(|c| c.violation).fold(0.0, f64::max);
        last = Some((rel, max_viol));
        if max_viol <= cfg.eps {
            converged = true;
            break;
        }
        let mut added = false;
        for c in cuts.drain(..) {
            added |= cands.push(c.state, c.row, c.provenance);
        }
        if let Some(ck) = cands_k.as_mut() {
            for c in cuts_k.drain(..) {
                added |= ck.push(c.state, c.row, c.provenance);
            }
        }
        if !added {
            // Every cut is a near-duplicate of a stored row: the relaxation
            // cannot move, so what is left is LP round-off.
            converged = max_viol <= STALL_TOL;
            break;
        }
    }
    let (rel, max_viol) = last.expect("at least one round");
    let mut out = assemble(m, cost_tag, gamma, rel)?;
    out.rounds = rounds;
    out.max_violation = max_viol;
    out.history = history;
    out.primal_residual = primal_residual(m, &cands, cands_k.as_ref(), cost_tag, gamma, &out)?;
    out.candidates = cands;
    out.candidates_k = cands_k;
    if !converged {
        return Err(Error::GenerationIncomplete { rounds, max_violation: max_viol, best: Box::new(out) });
    }
    Ok(out)
}

/// At `Γ = 0` the constraint block is absent from the objective, so any
/// feasible `(β′, V′)` is optimal. The primary block is solved alone and the
/// constraint block is then solved at the resulting `y`.
fn solve_gamma_zero(m: &Mdp, cost_tag: CostTag, cfg: &GenerationConfig) -> Result<GameSolution> {
    let mut out = solve_with_config(m, cost_tag, None, cfg)?;
    let blk = solve_fixed_policy(m, &out.y, CostTag::Constraint, cfg)?;
    out.gamma = Some(0.0);
    out.beta_k = Some(blk.beta);
    out.v_k = Some(blk.v);
    out.mu_k = Some(blk.mu);
    out.nu_k = Some(blk.nu);
    out.candidates_k = Some(blk.candidates);
    Ok(out)
}

fn assemble(m: &Mdp, cost_tag: CostTag, gamma: Option<f64>, rel: Relaxation) -> Result<GameSolution> {
    let Relaxation { sol, lay, pt } = rel;
    let pick =
        |ids: &[Vec<usize>]| -> Vec<Vec<f64>> { ids.iter().map(|r| r.iter().map(|&k| sol.x[k]).collect()).collect() };
    let pick_opt = |ids: &[Vec<Option<usize>>]| -> Vec<Vec<f64>> {
        ids.iter().map(|r| r.iter().map(|k| k.map_or(0.0, |k| sol.x[k])).collect()).collect()
    };
    let w: Vec<f64> = lay.w.iter().map(|&k| sol.x[k]).collect();
    let const_term = match gamma {
        Some(g) => -g * m.n_states() as f64 * m.constraint_bound()?,
        None => 0.0,
    };
    let primal_obj = pt.beta.iter().sum::<f64>()
        + gamma.zip(pt.beta_k.as_ref()).map_or(0.0, |(g, b)| g * b.iter().sum::<f64>())
        + const_term;
    let dual_obj: f64 = w.iter().sum();
    let v = polish_values(m, cost_tag, &pt.beta, &pt.v, &pt.y);
    Ok(GameSolution {
        v,
        v_lp: pt.v,
        beta: pt.beta,
        y: pt.y,
        beta_k: pt.beta_k,
        v_k: pt.v_k,
        mu: pick_opt(&lay.mu),
        nu: pick(&lay.nu),
        mu_k: gamma.map(|_| pick_opt(&lay.mu_k)),
        nu_k: gamma.map(|_| pick(&lay.nu_k)),
        w,
        primal_obj,
        dual_obj,
        gap: (primal_obj - dual_obj).abs(),
        primal_residual: 0.0,
        rounds: 0,
        max_violation: 0.0,
        gamma,
        candidates: CandidateSet::default(),
        candidates_k: None,
        history: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPolicySolution {
    pub beta: Vec<f64>,
    pub v: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    /// `Σ β`.
    pub objective: f64,
    /// `Σ_i Σ_q μ(i,q) Σ_u y_i(u) c̃(i,u,q)`.
    pub dual_objective: f64,
    pub candidates: CandidateSet,
    pub rounds: usize,
}

/// The single-block program with the policy held at `y`, solved through its
/// dual: maximize `Σ μ(i,q) Σ_u y_i(u) c̃(i,u,q)` subject to the balance rows.
pub fn solve_fixed_policy(
    m: &Mdp,
    y: &[Vec<f64>],
    cost_tag: CostTag,
    cfg: &GenerationConfig,
) -> Result<FixedPolicySolution> {
    let n = m.n_states();
    Policy::Randomized(y.to_vec()).validate(m)?;
    let mut cands = seed_candidates(m, cost_tag);
    for rounds in 1..=cfg.max_rounds {
        let mut cols: Vec<(usize, usize, bool, f64)> = Vec::new();
        for i in 0..n {
            for (q, cand) in cands.per_state[i].iter().enumerate() {
                cols.push((i, q, false, 0.0));
                if let Some(ct) = payoff_row(m, i, &cand.row, cost_tag)? {
                    cols.push((i, q, true, ct.iter().zip(&y[i]).map(|(c, w)| c * w).sum()));
                }
            }
        }
        let mut lp = StandardLp::new(cols.len());
        for (k, c) in cols.iter().enumerate() {
            lp.objective[k] = -c.3;
        }
        for j in 0..n {
            let mut value_row = vec![0.0; cols.len()];
            let mut flow_row = vec![0.0; cols.len()];
            for (k, &(i, q, is_mu, _)) in cols.iter().enumerate() {
                let d = if i == j { 1.0 } else { 0.0 } - cands.per_state[i][q].row[j];
                if is_mu {
                    flow_row[k] = d;
                    if i == j {
                        value_row[k] = 1.0;
                    }
                } else {
                    value_row[k] = d;
                }
            }
            lp.add_eq(value_row, 1.0);
            lp.add_eq(flow_row, 0.0);
        }
        let sol = solve_lp(&lp)?;
        require_optimal(&sol, "fixed-policy dual")?;
        let beta: Vec<f64> = (0..n).map(|j| -sol.dual_eq[2 * j]).collect();
        let v: Vec<f64> = (0..n).map(|j| -sol.dual_eq[2 * j + 1]).collect();
        let cuts = separation_oracle(m, &beta, &v, y, cost_tag, cfg.exec)?;
        let max_viol = cuts.iter().map(|c| c.violation).fold(0.0, f64::max);
        let mut added = false;
        if max_viol > cfg.eps {
            for c in cuts {
                added |= cands.push(c.state, c.row, c.provenance);
            }
        }
        if max_viol <= cfg.eps || (!added && max_viol <= STALL_TOL) {
            let mut mu: Vec<Vec<f64>> = cands.per_state.iter().map(|p| vec![0.0; p.len()]).collect();
            let mut nu = mu.clone();
            for (k, &(i, q, is_mu, _)) in cols.iter().enumerate() {
                if is_mu {
                    mu[i][q] = sol.x[k];
                } else {
                    nu[i][q] = sol.x[k];
                }
            }
            return Ok(FixedPolicySolution {
                objective: beta.iter().sum(),
                dual_objective: -sol.objective_value,
                beta,
                v,
                mu,
                nu,
                candidates: cands,
                rounds,
            });
        }
        if !added {
            return Err(Error::Numeric(format!("fixed-policy program stalled at violation {max_viol:.3e}")));
        }
    }
    Err(Error::NonConvergence { what: "solve_fixed_policy", iterations: cfg.max_rounds, last: f64::NAN })
}

/// States `j` reachable from `i` in one step whose value ties the best one.
pub fn argmax_face(m: &Mdp, i: usize, psi: &[f64], tol: f64) -> Vec<usize> {
    let sup = support_union(m, i);
    let top = sup.iter().map(|&j| psi[j]).fold(f64::NEG_INFINITY, f64::max);
    sup.into_iter().filter(|&j| psi[j] >= top - tol).collect()
}

/// `Σ_u y_u c(i,u) + log Σ_{j ∈ face} e^{V_j} Π_u p_u(j)^{y_u}`.
pub fn mixed_face_operator(m: &Mdp, i: usize, y: &[f64], v: &[f64], face: &[usize], cost_tag: CostTag) -> f64 {
    let mut yc = 0.0;
    for (u, &yu) in y.iter().enumerate() {
        yc += yu * m.cost(cost_tag, i, u).expect("cost present");
    }
    let terms = face.iter().map(|&j| {
        let mut acc = v[j];
        for (u, &yu) in y.iter().enumerate() {
            let pj = m.p(i, u, j);
            if pj <= SUPPORT_EPS {
                return f64::NEG_INFINITY;
            }
            acc += yu * pj.ln();
        }
        acc
    });
    yc + log_sum_exp(terms)
}

const POLISH_MAX_ITER: usize = 20_000;
const POLISH_TOL: f64 = 1e-13;

/// Tightens an LP supersolution `V` by iterating the fixed-policy operator
/// `V_i ← T_i(V) − β_i` restricted to each state's argmax face of `β`.
/// Returns the input unchanged if the iteration does not settle.
pub fn polish_values(m: &Mdp, cost_tag: CostTag, beta: &[f64], v: &[f64], y: &[Vec<f64>]) -> Vec<f64> {
    let n = m.n_states();
    let faces: Vec<Vec<usize>> = (0..n).map(|i| argmax_face(m, i, beta, 1e-9)).collect();
    let mut cur = v.to_vec();
    for _ in 0..POLISH_MAX_ITER {
        let next: Vec<f64> =
            (0..n).map(|i| mixed_face_operator(m, i, &y[i], &cur, &faces[i], cost_tag) - beta[i]).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return v.to_vec();
        }
        let diff = next.iter().zip(&cur).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        cur = next;
        if diff < POLISH_TOL {
            return cur;
        }
    }
    v.to_vec()
}

/// Per-state best responses of the kernel player to `(V, y)`: the mixture
/// tilt on the common support.
pub fn tilt_witness(m: &Mdp, v: &[f64], y: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = m.n_states();
    (0..n)
        .map(|i| {
            let common = support_common(m, i);
            let mut mask = vec![false; n];
            common.iter().for_each(|&j| mask[j] = true);
            let rows: Vec<&[f64]> = (0..m.n_actions()).map(|u| m.p_row(i, u)).collect();
            Ok(mixture_tilt_masked(&y[i], &rows, v, Some(&mask))?.q_star)
        })
        .collect()
}

/// `max_π Σ_i π_i Σ_u y_i(u) c̃(i,u,q_i)` over the invariant distributions
/// of `q`, with the maximizing `π`.
pub fn phi_hat(m: &Mdp, q: &[Vec<f64>], pol: &Policy, cost_tag: CostTag) -> Result<(f64, Vec<f64>)> {
    let n = m.n_states();
    pol.validate(m)?;
    if q.len() != n || q.iter().any(|r| r.len() != n) {
        return Err(Error::Validation("phi_hat: kernel shape".into()));
    }
    let mut payoff = vec![0.0; n];
    for i in 0..n {
        let y = pol.weights(i, m.n_actions());
        let mut s = 0.0;
        for (u, &yu) in y.iter().enumerate() {
            if yu > 0.0 {
                s += yu * c_tilde(m, i, u, &q[i], cost_tag)?;
            }
        }
        payoff[i] = s;
    }
    let adj = support_graph(q);
    let cond = tarjan(&adj);
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    for c in 0..cond.classes.len() {
        if !cond.is_closed(&adj, c) {
            continue;
        }
        let members = &cond.classes[c];
        let sub: Vec<Vec<f64>> = members.iter().map(|&i| members.iter().map(|&j| q[i][j]).collect()).collect();
        let pi_c =
            linalg::stationary_distribution(&sub).ok_or_else(|| Error::Numeric("singular stationary system".into()))?;
        let val: f64 = members.iter().zip(&pi_c).map(|(&i, &p)| if p == 0.0 { 0.0 } else { p * payoff[i] }).sum();
        if val > best.0 {
            let mut pi = vec![0.0; n];
            for (&i, &p) in members.iter().zip(&pi_c) {
                pi[i] = p;
            }
            best = (val, pi);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state() -> Mdp {
        Mdp::new(vec![vec![vec![1.0], vec![1.0]]], vec![vec![0.5, 0.2]]).unwrap()
    }

    fn cycle() -> Mdp {
        Mdp::new(vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]], vec![vec![0.2], vec![0.8]]).unwrap()
    }

    #[test]
    fn seeds_collapse_on_one_state() {
        let s = seed_candidates(&one_state(), CostTag::Primary);
        assert_eq!(s.per_state[0].len(), 1);
        assert_eq!(s.per_state[0][0].row, vec![1.0]);
    }

    #[test]
    fn seeds_cover_vertices_and_rows() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(2), 2, 2);
        let s = seed_candidates(&m, CostTag::Primary);
        for i in 0..2 {
            let rows: Vec<&Vec<f64>> = s.per_state[i].iter().map(|c| &c.row).collect();
            assert!(rows.contains(&&vec![1.0, 0.0]));
            assert!(rows.contains(&&vec![0.0, 1.0]));
            for u in 0..2 {
                assert!(rows.contains(&&m.p_row(i, u).to_vec()));
            }
        }
        assert_eq!(s, seed_candidates(&m, CostTag::Primary));
    }

    #[test]
    fn one_state_primal() {
        let m = one_state();
        let s = solve_with_generation(&m, CostTag::Primary, None, 1e-7, 50).unwrap();
        assert!((s.beta[0] - 0.2).abs() < 1e-10);
        assert!((s.y[0][1] - 1.0).abs() < 1e-10);
        assert!((s.dual_obj - 0.2).abs() < 1e-10);
        assert_eq!(s.rounds, 1);
    }

    #[test]
    fn zero_cost_values() {
        // One action: nothing to mix, the value is exactly zero.
        let m1 = crate::generate::random_mdp(&mut crate::generate::rng(5), 3, 1).with_cost(vec![vec![0.0]; 3]).unwrap();
        let s = solve_with_generation(&m1, CostTag::Primary, None, 1e-7, 100).unwrap();
        for b in &s.beta {
            assert!(b.abs() < 1e-7, "{b}");
        }
        // Several actions: mixing payoffs lets the minimizer charge the kernel
        // player Σ y_u D(q‖p_u), so the value drops below zero.
        let m =
            crate::generate::random_mdp(&mut crate::generate::rng(5), 3, 2).with_cost(vec![vec![0.0; 2]; 3]).unwrap();
        let s = solve_with_generation(&m, CostTag::Primary, None, 1e-7, 100).unwrap();
        for b in &s.beta {
            assert!(*b < -1e-3);
        }
    }

    #[test]
    fn large_constant_point_is_feasible() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(9), 3, 2);
        let cands = seed_candidates(&m, CostTag::Primary);
        let lp = build_primal(&m, &cands, None, CostTag::Primary, None).unwrap();
        let lay = PrimalLayout { n: 3, a: 2, constrained: false };
        let mut x = vec![0.0; lay.total()];
        for i in 0..3 {
            x[lay.beta(i)] = 1e3;
            x[lay.v(i)] = 1e3;
            for u in 0..2 {
                x[lay.y(i, u)] = 0.5;
            }
        }
        for (a, &b) in lp.a_ge.iter().zip(&lp.b_ge) {
            assert!(linalg::dot(a, &x) >= b - 1e-9);
        }
    }

    #[test]
    fn vertex_cut_for_better_successor() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(1), 2, 2);
        let cuts = separation_oracle(
            &m,
            &[0.0, 1.0],
            &[0.0, 0.0],
            &vec![vec![0.5, 0.5]; 2],
            CostTag::Primary,
            Execution::Sequential,
        )
        .unwrap();
        assert!(cuts.iter().any(|c| c.state == 0 && c.row == vec![0.0, 1.0] && c.provenance == Provenance::Vertex));
    }

    #[test]
    fn no_cuts_at_optimum() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(4), 3, 2);
        let s = solve_with_generation(&m, CostTag::Primary, None, 1e-7, 200).unwrap();
        let cuts = separation_oracle(&m, &s.beta, &s.v_lp, &s.y, CostTag::Primary, Execution::Sequential).unwrap();
        assert!(cuts.iter().all(|c| c.violation <= 1e-7));
    }

    #[test]
    fn dual_marginals_balance() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(6), 3, 2);
        let s = solve_with_generation(&m, CostTag::Primary, None, 1e-7, 200).unwrap();
        assert!(s.gap < 1e-7);
        let total: f64 = s.mu.iter().flatten().sum();
        assert!((total - 3.0).abs() < 1e-8);
        for j in 0..3 {
            let mut r = 0.0;
            for i in 0..3 {
                for (q, c) in s.candidates.per_state[i].iter().enumerate() {
                    r += ((i == j) as u8 as f64 - c.row[j]) * s.mu[i][q];
                }
            }
            assert!(r.abs() < 1e-8);
        }
    }

    #[test]
    fn primal_objective_non_decreasing() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(8), 4, 2);
        let s = solve_with_generation(&m, CostTag::Primary, None, 1e-7, 200).unwrap();
        for w in s.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn phi_hat_examples() {
        let m = cycle();
        let q = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let (v, pi) = phi_hat(&m, &q, &Policy::Deterministic(vec![0, 0]), CostTag::Primary).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert!((pi[0] - 0.5).abs() < 1e-12);

        let m = Mdp::new(vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]], vec![vec![0.1], vec![0.7]]).unwrap();
        let q = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
        let (v, pi) = phi_hat(&m, &q, &Policy::Deterministic(vec![0, 0]), CostTag::Primary).unwrap();
        assert!((v - (0.7 - 2f64.ln())).abs() < 1e-12);
        assert_eq!(pi, vec![0.0, 1.0]);
    }
}
