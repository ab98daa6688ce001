//! One risk-sensitive constraint handled through a Lagrange multiplier.
//!
//! For fixed `Γ ≥ 0` the doubled game LP (see [`crate::game_lp`]) gives
//! `Ψ(Γ) = Σ β_i + Γ(Σ β′_i − |S| C)`, a concave function of `Γ`. The
//! projected ascent `Γ ← [Γ + a(n) g(Γ)]⁺` with `g = Σ β′ − |S| C` climbs it.
//! The product chain on `S × S` carries the combined cost
//! `c(i,u) + Γ k(j,u)`; its LP over product candidates has the same optimum
//! as the two blocks added up state by state.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game_lp::{
    build_dual, build_primal, payoff_row, seed_candidates, solve_with_config, CandidateSet, DualLayout, GameSolution,
    GenerationConfig,
};
use crate::lp::{solve_lp, LpStatus, StandardLp};
use crate::model::{CostTag, Mdp, Policy};
use crate::spectral::evaluate_policy;

/// Tolerance of the two subgradient forms and of the combined-point check.
pub const DANSKIN_TOL: f64 = 1e-6;
pub const COMBINE_TOL: f64 = 1e-8;

/// The doubled primal and its dual over the seed candidates.
pub fn build_constrained_lps(m: &Mdp, gamma: f64) -> Result<(StandardLp, StandardLp, DualLayout)> {
    check_gamma(m, gamma)?;
    let cands = seed_candidates(m, CostTag::Primary);
    let cands_k = seed_candidates(m, CostTag::Constraint);
    let primal = build_primal(m, &cands, Some(&cands_k), CostTag::Primary, Some(gamma))?;
    let (dual, lay) = build_dual(m, &cands, Some(&cands_k), CostTag::Primary, Some(gamma))?;
    Ok((primal, dual, lay))
}

fn check_gamma(m: &Mdp, gamma: f64) -> Result<()> {
    m.constraint_bound()?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Validation(format!("gamma {gamma} must be finite and nonnegative")));
    }
    Ok(())
}

/// Solves the doubled program by constraint generation.
pub fn solve_constrained(m: &Mdp, gamma: f64, cfg: &GenerationConfig) -> Result<GameSolution> {
    check_gamma(m, gamma)?;
    solve_with_config(m, CostTag::Primary, Some(gamma), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiEvaluation {
    pub gamma: f64,
    pub psi: f64,
    /// `Σ β′ − |S| C`.
    pub subgrad: f64,
    /// The same quantity from the row multipliers on the constraint block.
    pub subgrad_dual: f64,
    pub solution: GameSolution,
}

impl PsiEvaluation {
    pub fn danskin_gap(&self) -> f64 {
        (self.subgrad - self.subgrad_dual).abs()
    }
}

/// `Ψ(Γ)` and its subgradient in two forms: `Σ β′ − |S| C` from the primal
/// and `Σ_i Σ_q μ′(i,q) Σ_u y_i(u) k̃(i,u,q) − |S| C` from the multipliers of
/// the constraint block. At `Γ = 0` the constraint block is solved at the
/// optimal `y` (see [`solve_with_config`]).
pub fn psi_of_gamma(m: &Mdp, gamma: f64, cfg: &GenerationConfig) -> Result<PsiEvaluation> {
    let sol = solve_constrained(m, gamma, cfg)?;
    let n = m.n_states() as f64;
    let bound = m.constraint_bound()?;
    let beta_k = sol.beta_k.as_ref().expect("constrained solve");
    let mu_k = sol.mu_k.as_ref().expect("constrained solve");
    let cands_k = sol.candidates_k.as_ref().expect("constrained solve");
    let mut dual = 0.0;
    for (i, per) in cands_k.per_state.iter().enumerate() {
        for (q, cand) in per.iter().enumerate() {
            if mu_k[i][q] == 0.0 {
                continue;
            }
            if let Some(kt) = payoff_row(m, i, &cand.row, CostTag::Constraint)? {
                let yk: f64 = kt.iter().zip(&sol.y[i]).map(|(k, w)| k * w).sum();
                dual += mu_k[i][q] * yk;
            }
        }
    }
    Ok(PsiEvaluation {
        gamma,
        psi: sol.primal_obj,
        subgrad: beta_k.iter().sum::<f64>() - n * bound,
        subgrad_dual: dual - n * bound,
        solution: sol,
    })
}

/// `[Γ + a g]⁺`.
pub fn ascent_step(gamma: f64, a: f64, g: f64) -> f64 {
    (gamma + a * g).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AscentConfig {
    pub gamma0: f64,
    /// Stepsize `a(n) = a0 / (1 + n)`.
    pub a0: f64,
    pub max_steps: usize,
    /// Consecutive steps with `|ΔΓ| < tol` that count as converged.
    pub window: usize,
    pub tol: f64,
    #[serde(skip)]
    pub generation: GenerationConfig,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            gamma0: 0.0,
            a0: 1.0,
            max_steps: 500,
            window: 10,
            tol: 1e-6,
            generation: GenerationConfig::default(),
        }
    }
}

impl AscentConfig {
    pub fn stepsize(&self, n: usize) -> f64 {
        self.a0 / (1.0 + n as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 >= 0.0)
            || !self.gamma0.is_finite()
            || !(self.a0 > 0.0)
            || self.max_steps == 0
            || self.window == 0
        {
            return Err(Error::Validation("ascent config needs gamma0 ≥ 0, a0 > 0, max_steps ≥ 1, window ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AscentStep {
    pub n: usize,
    pub gamma: f64,
    pub psi: f64,
    pub subgrad: f64,
    pub subgrad_dual: f64,
    pub primal_obj: f64,
    pub dual_obj: f64,
    /// Mean over start states of the constraint growth rate of the LP policy.
    pub constraint_value: f64,
    /// Mean over start states of its primary growth rate.
    pub objective_value: f64,
    pub policy: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AscentTrace {
    pub steps: Vec<AscentStep>,
}

impl AscentTrace {
    pub const HEADER: [&'static str; 7] =
        ["n", "gamma", "psi", "subgrad", "primal_obj", "dual_obj", "constraint_value"];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(Self::HEADER).map_err(csv_err)?;
        for s in &self.steps {
            out.write_record([
                s.n.to_string(),
                s.gamma.to_string(),
                s.psi.to_string(),
                s.subgrad.to_string(),
                s.primal_obj.to_string(),
                s.dual_obj.to_string(),
                s.constraint_value.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recovery {
    pub policy: Policy,
    /// Weight on the feasible end of the interpolation.
    pub t: f64,
    pub objective_value: f64,
    pub constraint_value: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AscentResult {
    pub trace: AscentTrace,
    pub gamma: f64,
    pub converged: bool,
    /// Policy from the last LP solve.
    pub lp_policy: Policy,
    /// Mixture of the last infeasible and last feasible LP policies that
    /// meets the constraint with equality (see [`recover_primal`]).
    pub recovered: Recovery,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mean_growth(m: &Mdp, y: &[Vec<f64>], tag: CostTag) -> Result<f64> {
    Ok(mean(&evaluate_policy(m, &Policy::Randomized(y.to_vec()), tag)?.lambda))
}

const BISECTION_STEPS: usize = 100;

/// Bisects `t` in `(1−t) y⁻ + t y⁺` so that the mean constraint growth rate
/// equals `C`. `y⁺` must be feasible; `y⁻` is the infeasible end (if any).
pub fn recover_primal(m: &Mdp, infeasible: Option<&[Vec<f64>]>, feasible: Option<&[Vec<f64>]>) -> Result<Recovery> {
    let bound = m.constraint_bound()?;
    let mix = |a: &[Vec<f64>], b: &[Vec<f64>], t: f64| -> Vec<Vec<f64>> {
        a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, z)| (1.0 - t) * x + t * z).collect()).collect()
    };
    let finish = |y: Vec<Vec<f64>>, t: f64| -> Result<Recovery> {
        let constraint_value = mean_growth(m, &y, CostTag::Constraint)?;
        Ok(Recovery {
            objective_value: mean_growth(m, &y, CostTag::Primary)?,
            feasible: constraint_value <= bound + 1e-9,
            constraint_value,
            policy: Policy::Randomized(y),
            t,
        })
    };
    match (infeasible, feasible) {
        (Some(lo), Some(hi)) => {
            let (mut a, mut b) = (0.0, 1.0);
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (a + b);
                if mean_growth(m, &mix(lo, hi, mid), CostTag::Constraint)? > bound {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            finish(mix(lo, hi, b), b)
        }
        (None, Some(hi)) => finish(hi.to_vec(), 1.0),
        (Some(lo), None) => finish(lo.to_vec(), 0.0),
        (None, None) => Err(Error::Validation("recover_primal needs at least one policy".into())),
    }
}

/// Projected subgradient ascent on `Ψ`. Stops after `window` consecutive
/// steps with `|Γ_{n+1} − Γ_n| < tol`, or at `max_steps`.
pub fn subgradient_ascent(m: &Mdp, cfg: &AscentConfig) -> Result<AscentResult> {
    cfg.validate()?;
    let bound = m.constraint_bound()?;
    let mut trace = AscentTrace::default();
    let mut gamma = cfg.gamma0;
    let mut quiet = 0;
    let mut converged = false;
    let mut last_infeasible: Option<Vec<Vec<f64>>> = None;
    let mut last_feasible: Option<Vec<Vec<f64>>> = None;
    for n in 0..cfg.max_steps {
        let ev = psi_of_gamma(m, gamma, &cfg.generation)?;
        let y = ev.solution.y.clone();
        let constraint_value = mean_growth(m, &y, CostTag::Constraint)?;
        let objective_value = mean_growth(m, &y, CostTag::Primary)?;
        if constraint_value > bound {
            last_infeasible = Some(y.clone());
        } else {
            last_feasible = Some(y.clone());
        }
        trace.steps.push(AscentStep {
            n,
            gamma,
            psi: ev.psi,
            subgrad: ev.subgrad,
            subgrad_dual: ev.subgrad_dual,
            primal_obj: ev.solution.primal_obj,
            dual_obj: ev.solution.dual_obj,
            constraint_value,
            objective_value,
            policy: y,
        });
        let next = ascent_step(gamma, cfg.stepsize(n), ev.subgrad);
        quiet = if (next - gamma).abs() < cfg.tol { quiet + 1 } else { 0 };
        gamma = next;
        if quiet >= cfg.window {
            converged = true;
            break;
        }
    }
    let recovered = recover_primal(m, last_infeasible.as_deref(), last_feasible.as_deref())?;
    let lp_policy = Policy::Randomized(trace.steps.last().expect("max_steps ≥ 1").policy.clone());
    Ok(AscentResult { trace, gamma, converged, lp_policy, recovered })
}

/// The model on `S × S` with independent transitions under a shared action.
/// State `(i, j)` has index `i·|S| + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductChain {
    pub mdp: Mdp,
    pub gamma: f64,
    pub n_component: usize,
}

impl ProductChain {
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_component + j
    }
}

pub fn product_row(q: &[f64], q2: &[f64]) -> Vec<f64> {
    q.iter().flat_map(|&a| q2.iter().map(move |&b| a * b)).collect()
}

pub fn product_chain(m: &Mdp, gamma: f64) -> Result<ProductChain> {
    check_gamma(m, gamma)?;
    let n = m.n_states();
    let na = m.n_actions();
    let mut p = Vec::with_capacity(n * n);
    let mut h = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            p.push((0..na).map(|u| product_row(m.p_row(i, u), m.p_row(j, u))).collect());
            h.push((0..na).map(|u| m.c(i, u) + gamma * m.k(j, u).expect("checked")).collect());
        }
    }
    Ok(ProductChain { mdp: Mdp::new(p, h)?, gamma, n_component: n })
}

/// `β̌_{(i,j)} = β_i + Γ β′_j` and `V̌_{(i,j)} = V_i + Γ V′_j`.
pub fn combine_values(beta: &[f64], v: &[f64], beta_k: &[f64], v_k: &[f64], gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let b = beta.iter().flat_map(|&x| beta_k.iter().map(move |&z| x + gamma * z)).collect();
    let w = v.iter().flat_map(|&x| v_k.iter().map(move |&z| x + gamma * z)).collect();
    (b, w)
}

/// Where the combined point falls short.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductViolation {
    pub state: (usize, usize),
    pub candidate: usize,
    pub candidate_k: usize,
    pub payoff_row: bool,
    pub violation: f64,
}

/// Payoff of product candidate `(q, q′)` at `(i, j)`, as coefficients on
/// `y_i` and `y_j`.
fn product_payoff(m: &Mdp, i: usize, j: usize, q: &[f64], q2: &[f64]) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    match (payoff_row(m, i, q, CostTag::Primary)?, payoff_row(m, j, q2, CostTag::Constraint)?) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        _ => Ok(None),
    }
}

/// Largest violation of the product value and payoff rows at the combined
/// point of a constrained solution, over all products of its candidates.
pub fn combined_residual(m: &Mdp, sol: &GameSolution) -> Result<Option<ProductViolation>> {
    let gamma = sol.gamma.ok_or(Error::MissingConstraint)?;
    let (beta_k, v_k) = match (&sol.beta_k, &sol.v_k) {
        (Some(b), Some(v)) => (b, v),
        _ => return Err(Error::MissingConstraint),
    };
    let cands_k = sol.candidates_k.as_ref().ok_or(Error::MissingConstraint)?;
    let (bc, vc) = combine_values(&sol.beta, &sol.v_lp, beta_k, v_k, gamma);
    let n = m.n_states();
    let mut worst: Option<ProductViolation> = None;
    let mut note = |pv: ProductViolation| {
        if worst.as_ref().is_none_or(|w| pv.violation > w.violation) {
            worst = Some(pv);
        }
    };
    for i in 0..n {
        for j in 0..n {
            let s = i * n + j;
            for (a, ca) in sol.candidates.per_state[i].iter().enumerate() {
                for (b, cb) in cands_k.per_state[j].iter().enumerate() {
                    let qq = product_row(&ca.row, &cb.row);
                    let qb: f64 = qq.iter().zip(&bc).map(|(x, z)| x * z).sum();
                    note(ProductViolation {
                        state: (i, j),
                        candidate: a,
                        candidate_k: b,
                        payoff_row: false,
                        violation: qb - bc[s],
                    });
                    if let Some((pc, pk)) = product_payoff(m, i, j, &ca.row, &cb.row)? {
                        let qv: f64 = qq.iter().zip(&vc).map(|(x, z)| x * z).sum();
                        let pay: f64 = pc.iter().zip(&sol.y[i]).map(|(x, w)| x * w).sum::<f64>()
                            + gamma * pk.iter().zip(&sol.y[j]).map(|(x, w)| x * w).sum::<f64>();
                        note(ProductViolation {
                            state: (i, j),
                            candidate: a,
                            candidate_k: b,
                            payoff_row: true,
                            violation: pay + qv - bc[s] - vc[s],
                        });
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Checks the combined point against every product row; errors with the
/// offending row when the violation exceeds `tol`.
pub fn verify_combined(m: &Mdp, sol: &GameSolution, tol: f64) -> Result<f64> {
    match combined_residual(m, sol)? {
        Some(w) if w.violation > tol => Err(Error::Numeric(format!(
            "combined point violates the product {} row at state {:?}, candidates ({}, {}), by {:.3e}",
            if w.payoff_row { "payoff" } else { "value" },
            w.state,
            w.candidate,
            w.candidate_k,
            w.violation
        ))),
        Some(w) => Ok(w.violation.max(0.0)),
        None => Ok(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductLpSolution {
    /// `Σ_{(i,j)} β̌_{(i,j)}`.
    pub objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub beta: Vec<f64>,
    pub v: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// Product candidate rows in the program.
    pub candidates: usize,
}

/// The LP on the product chain whose candidate rows are all products
/// `q ⊗ q′` of the given component candidates. Solved through its dual, which
/// has one column per product row and `2|S|² + |S||A|` rows.
pub fn solve_product_lp(
    m: &Mdp,
    gamma: f64,
    cands: &CandidateSet,
    cands_k: &CandidateSet,
) -> Result<ProductLpSolution> {
    check_gamma(m, gamma)?;
    let n = m.n_states();
    let na = m.n_actions();
    let ns = n * n;
    struct Col {
        state: usize,
        row: Vec<f64>,
        /// `(component state, action, coefficient)` for payoff columns.
        payoff: Option<Vec<(usize, usize, f64)>>,
    }
    let mut cols: Vec<Col> = Vec::new();
    let mut n_pairs = 0;
    for i in 0..n {
        for j in 0..n {
            for ca in &cands.per_state[i] {
                for cb in &cands_k.per_state[j] {
                    n_pairs += 1;
                    let row = product_row(&ca.row, &cb.row);
                    if let Some((pc, pk)) = product_payoff(m, i, j, &ca.row, &cb.row)? {
                        let mut coef: Vec<(usize, usize, f64)> = (0..na).map(|u| (i, u, pc[u])).collect();
                        coef.extend((0..na).map(|u| (j, u, gamma * pk[u])));
                        cols.push(Col { state: i * n + j, row: row.clone(), payoff: Some(coef) });
                    }
                    cols.push(Col { state: i * n + j, row, payoff: None });
                }
            }
        }
    }
    let nw = cols.len();
    let mut lp = StandardLp::new(nw + n);
    for i in 0..n {
        lp.set_free(nw + i);
        lp.objective[nw + i] = -1.0;
    }
    for t in 0..ns {
        let mut value_row = vec![0.0; nw + n];
        let mut flow_row = vec![0.0; nw + n];
        for (k, c) in cols.iter().enumerate() {
            let d = if c.state == t { 1.0 } else { 0.0 } - c.row[t];
            if c.payoff.is_some() {
                flow_row[k] = d;
                if c.state == t {
                    value_row[k] = 1.0;
                }
            } else {
                value_row[k] = d;
            }
        }
        lp.add_eq(value_row, 1.0);
        lp.add_eq(flow_row, 0.0);
    }
    for i in 0..n {
        for u in 0..na {
            let mut row = vec![0.0; nw + n];
            for (k, c) in cols.iter().enumerate() {
                if let Some(coef) = &c.payoff {
                    row[k] = coef.iter().filter(|&&(s, a, _)| s == i && a == u).map(|x| x.2).sum();
                }
            }
            row[nw + i] = -1.0;
            lp.add_ge(row, 0.0);
        }
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Numeric(format!("product LP returned {:?}", sol.status)));
    }
    let beta: Vec<f64> = (0..ns).map(|t| -sol.dual_eq[2 * t]).collect();
    let v: Vec<f64> = (0..ns).map(|t| -sol.dual_eq[2 * t + 1]).collect();
    let y = (0..n).map(|i| (0..na).map(|u| sol.dual_ge[i * na + u].max(0.0)).collect()).collect();
    let objective: f64 = beta.iter().sum();
    let dual_objective = -sol.objective_value;
    Ok(ProductLpSolution {
        gap: (objective - dual_objective).abs(),
        objective,
        dual_objective,
        beta,
        v,
        y,
        candidates: n_pairs,
    })
}
