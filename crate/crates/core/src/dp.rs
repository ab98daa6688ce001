//! Risk-sensitive dynamic programming.
//!
//! [`relative_value_iteration`] solves the unichain equation
//! `Ψ + V_i = min_u [c(i,u) + log Σ_j p(j|i,u) e^{V_j}]` by value iteration
//! in log-sum-exp form. [`verify_multichain`] checks a candidate `(Ψ, V)`
//! (typically `β, V` from the game LP) against the multichain equations:
//!
//! ```text
//! (a) Ψ_i = max_{j ∈ supp_i} Ψ_j
//! (b) Ψ_i + V_i = min_u [c(i,u) + log Σ_{j ∈ B_i} p(j|i,u) e^{V_j}]
//! ```
//!
//! where `B_i` is the set of successors attaining the max in (a).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game_lp::{argmax_face, mixed_face_operator};
use crate::linalg::{log_sum_exp, span};
use crate::model::{CostTag, Mdp, Policy, SUPPORT_EPS};
use crate::spectral::{partition_by_value, PARTITION_TOL};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpSolution {
    pub psi: Vec<f64>,
    pub v: Vec<f64>,
    /// `e^{V}`, scaled to max 1 within each partition cell.
    pub zeta: Vec<f64>,
    pub lambda_mult: Vec<f64>,
    pub lambda_star: f64,
    pub policy: Policy,
    pub partition: Vec<Vec<usize>>,
    pub iterations: usize,
    /// Span of successive differences per iteration.
    pub spans: Vec<f64>,
    /// `max_i |Λ ζ_i − min_u Σ_j p e^{c} ζ_j|`.
    pub residual: f64,
}

/// `c(i,u) + log Σ_j p(j|i,u) e^{V_j}` for every action.
fn q_values(m: &Mdp, costs: &[Vec<f64>], i: usize, v: &[f64]) -> Vec<f64> {
    (0..m.n_actions())
        .map(|u| {
            let row = m.p_row(i, u);
            costs[i][u] + log_sum_exp(row.iter().zip(v).filter(|(&p, _)| p > SUPPORT_EPS).map(|(&p, &x)| p.ln() + x))
        })
        .collect()
}

/// Lowest index among the minimizers (ties within 1e-12 relative).
pub fn argmin_lowest(xs: &[f64]) -> usize {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    xs.iter().position(|&x| x <= lo + 1e-12 * (1.0 + lo.abs())).unwrap_or(0)
}

pub fn relative_value_iteration(m: &Mdp, cost_tag: CostTag, tol: f64, max_iter: usize) -> Result<DpSolution> {
    if !(tol > 0.0) {
        return Err(Error::Validation("tol must be positive".into()));
    }
    let costs = m.cost_table(cost_tag)?;
    let n = m.n_states();
    let mut v = vec![0.0; n];
    let mut spans = Vec::new();
    let mut offset = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let tv: Vec<f64> =
            (0..n).map(|i| q_values(m, &costs, i, &v).into_iter().fold(f64::INFINITY, f64::min)).collect();
        offset = tv[0];
        let next: Vec<f64> = tv.iter().map(|x| x - offset).collect();
        let diff: Vec<f64> = next.iter().zip(&v).map(|(a, b)| a - b).collect();
        let sp = span(&diff);
        spans.push(sp);
        v = next;
        if sp < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "relative_value_iteration",
            iterations,
            last: spans.last().cloned().unwrap_or(f64::NAN),
        });
    }
    let actions: Vec<usize> = (0..n).map(|i| argmin_lowest(&q_values(m, &costs, i, &v))).collect();
    let psi = vec![offset; n];
    let partition = partition_by_value(&psi, PARTITION_TOL);
    let mut zeta: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    for cell in &partition {
        let top = cell.iter().map(|&i| zeta[i]).fold(0.0, f64::max);
        cell.iter().for_each(|&i| zeta[i] /= top);
    }
    let lambda_mult: Vec<f64> = psi.iter().map(|x| x.exp()).collect();
    let residual = (0..n)
        .map(|i| {
            let best = (0..m.n_actions())
                .map(|u| costs[i][u].exp() * m.p_row(i, u).iter().zip(&zeta).map(|(p, z)| p * z).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            (lambda_mult[i] * zeta[i] - best).abs()
        })
        .fold(0.0, f64::max);
    Ok(DpSolution {
        lambda_star: offset,
        psi,
        v,
        zeta,
        lambda_mult,
        policy: Policy::Deterministic(actions).to_randomized(m.n_actions()),
        partition,
        iterations,
        spans,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateResidual {
    /// `|Ψ_i − max_{j ∈ supp_i} Ψ_j|`.
    pub value: f64,
    /// Residual of (b) with the controller choosing a single action.
    pub pure: f64,
    /// Residual of (b) with payoffs mixed by `y_i` (when a policy is given).
    pub mixed: Option<f64>,
    /// Minimizing action in (b).
    pub argmin_action: usize,
    /// Successor attaining the max in (a).
    pub argmax_successor: usize,
    /// The face `B_i`.
    pub face: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultichainReport {
    pub value_residual: f64,
    pub pure_residual: f64,
    pub mixed_residual: Option<f64>,
    /// `max(value_residual, pure_residual)`.
    pub residual: f64,
    /// State with the largest (a)/(b) residual.
    pub worst_state: usize,
    pub per_state: Vec<StateResidual>,
    pub partition: Vec<Vec<usize>>,
}

pub fn verify_multichain(m: &Mdp, psi: &[f64], v: &[f64], tol: f64) -> MultichainReport {
    verify_multichain_with(m, CostTag::Primary, psi, v, None, tol)
}

/// As [`verify_multichain`], optionally also checking the payoff-mixed form
/// of (b) under the randomized policy `y`.
pub fn verify_multichain_with(
    m: &Mdp,
    cost_tag: CostTag,
    psi: &[f64],
    v: &[f64],
    y: Option<&Policy>,
    tol: f64,
) -> MultichainReport {
    let n = m.n_states();
    let mut per_state = Vec::with_capacity(n);
    for i in 0..n {
        let face = argmax_face(m, i, psi, tol);
        let argmax_successor = face[0];
        let value = (psi[i] - psi[argmax_successor]).abs();
        let q: Vec<f64> = (0..m.n_actions())
            .map(|u| {
                let c = m.cost(cost_tag, i, u).expect("cost present");
                c + log_sum_exp(face.iter().filter(|&&j| m.p(i, u, j) > SUPPORT_EPS).map(|&j| m.p(i, u, j).ln() + v[j]))
            })
            .collect();
        let argmin_action = argmin_lowest(&q);
        let pure = (q[argmin_action] - psi[i] - v[i]).abs();
        let mixed = y.map(|pol| {
            let w = pol.weights(i, m.n_actions());
            (mixed_face_operator(m, i, &w, v, &face, cost_tag) - psi[i] - v[i]).abs()
        });
        per_state.push(StateResidual { value, pure, mixed, argmin_action, argmax_successor, face });
    }
    let value_residual = per_state.iter().map(|s| s.value).fold(0.0, f64::max);
    let pure_residual = per_state.iter().map(|s| s.pure).fold(0.0, f64::max);
    let mixed_residual = y.map(|_| per_state.iter().filter_map(|s| s.mixed).fold(0.0, f64::max));
    let worst_state = (0..n)
        .max_by(|&a, &b| {
            let ra = per_state[a].value.max(per_state[a].pure);
            let rb = per_state[b].value.max(per_state[b].pure);
            ra.total_cmp(&rb).then(b.cmp(&a))
        })
        .unwrap_or(0);
    MultichainReport {
        value_residual,
        pure_residual,
        mixed_residual,
        residual: value_residual.max(pure_residual),
        worst_state,
        per_state,
        partition: partition_by_value(psi, tol.max(PARTITION_TOL)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_state_two_actions() {
        let m = Mdp::new(vec![vec![vec![1.0], vec![1.0]]], vec![vec![0.5, 0.2]]).unwrap();
        let s = relative_value_iteration(&m, CostTag::Primary, 1e-12, 100).unwrap();
        assert!((s.lambda_star - 0.2).abs() < 1e-12);
        assert_eq!(s.policy.argmax_actions(), vec![1]);
    }

    #[test]
    fn zero_cost() {
        let m =
            crate::generate::random_mdp(&mut crate::generate::rng(1), 4, 2).with_cost(vec![vec![0.0; 2]; 4]).unwrap();
        let s = relative_value_iteration(&m, CostTag::Primary, 1e-12, 1000).unwrap();
        assert!(s.lambda_star.abs() < 1e-12);
        for z in &s.zeta {
            assert!((z - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn invariants_hold() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(2), 4, 3);
        let s = relative_value_iteration(&m, CostTag::Primary, 1e-11, 10_000).unwrap();
        assert!(s.residual < 1e-9);
        assert_eq!(s.lambda_star, s.psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        for (l, p) in s.lambda_mult.iter().zip(&s.psi) {
            assert!((l - p.exp()).abs() < 1e-12);
        }
        for w in s.spans[10..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn policy_invariant_under_shift() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(3), 4, 3);
        let a = relative_value_iteration(&m, CostTag::Primary, 1e-11, 10_000).unwrap();
        let b = relative_value_iteration(&m.shifted(0.75), CostTag::Primary, 1e-11, 10_000).unwrap();
        assert_eq!(a.policy, b.policy);
        assert!((b.lambda_star - a.lambda_star - 0.75).abs() < 1e-9);
    }

    #[test]
    fn verify_accepts_rvi_solution() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(4), 3, 2);
        let s = relative_value_iteration(&m, CostTag::Primary, 1e-12, 10_000).unwrap();
        let r = verify_multichain(&m, &s.psi, &s.v, 1e-9);
        assert!(r.residual < 1e-6, "{}", r.residual);
    }

    #[test]
    fn verify_flags_perturbed_state() {
        // State 1 has no self-loop, so raising V_1 shows up in full there.
        let m = Mdp::new(
            vec![vec![vec![0.3, 0.7], vec![0.6, 0.4]], vec![vec![1.0, 0.0], vec![1.0, 0.0]]],
            vec![vec![0.2, 0.5], vec![0.1, 0.3]],
        )
        .unwrap();
        let s = relative_value_iteration(&m, CostTag::Primary, 1e-12, 10_000).unwrap();
        let mut v = s.v.clone();
        v[1] += 0.1;
        let r = verify_multichain(&m, &s.psi, &v, 1e-9);
        assert!(r.per_state[1].pure >= 0.1 - 1e-9);
        assert_eq!(r.worst_state, 1);
    }
}
