//! Brute-force ground truth.
//!
//! Everything here works from the raw definitions: the finite-horizon
//! recursion does not touch the spectral code, Monte Carlo samples paths,
//! and the grid maximizers search the simplex directly. Enumeration and the
//! constrained grid use the spectral evaluator per policy for speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::model::{CostTag, Mdp, Policy, SUPPORT_EPS};
use crate::par::{map_indexed, Execution};
use crate::spectral::evaluate_policy;

/// Largest policy count / grid size any oracle will walk.
pub const ENUMERATION_GUARD: usize = 1_000_000;

/// `log E_i[exp(Σ_{m<N} cost(X_m, U_m))]` for every start state.
pub fn finite_horizon_value(m: &Mdp, pol: &Policy, cost_tag: CostTag, horizon: usize) -> Result<Vec<f64>> {
    Ok(finite_horizon_values(m, pol, cost_tag, &[horizon])?.pop().expect("one horizon"))
}

/// Values at several horizons from a single backward pass.
pub fn finite_horizon_values(m: &Mdp, pol: &Policy, cost_tag: CostTag, horizons: &[usize]) -> Result<Vec<Vec<f64>>> {
    pol.validate(m)?;
    if horizons.contains(&0) {
        return Err(Error::Validation("horizon must be at least 1".into()));
    }
    let n = m.n_states();
    let na = m.n_actions();
    // Log one-step weights: ln y_u + c(i,u) + ln p(j|i,u).
    let mut terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, t) in terms.iter_mut().enumerate() {
        let y = pol.weights(i, na);
        for (u, &yu) in y.iter().enumerate() {
            if yu <= 0.0 {
                continue;
            }
            let base = yu.ln() + m.cost(cost_tag, i, u)?;
            for j in 0..n {
                let p = m.p(i, u, j);
                if p > SUPPORT_EPS {
                    t.push((j, base + p.ln()));
                }
            }
        }
    }
    let top = *horizons.iter().max().expect("nonempty");
    let mut w = vec![0.0; n];
    let mut out = vec![Vec::new(); horizons.len()];
    for step in 1..=top {
        w = terms.iter().map(|t| log_sum_exp(t.iter().map(|&(j, x)| x + w[j]))).collect();
        for (k, &h) in horizons.iter().enumerate() {
            if h == step {
                out[k] = w.clone();
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthEstimate {
    /// `value(N) / N`.
    pub estimate: Vec<f64>,
    /// `(value(N) − value(N−Δ)) / Δ` with `Δ = ⌈N/10⌉`.
    pub tail_slope: Vec<f64>,
    pub horizon: usize,
}

pub fn growth_rate_estimate(m: &Mdp, pol: &Policy, cost_tag: CostTag, horizon: usize) -> Result<GrowthEstimate> {
    if horizon < 100 {
        return Err(Error::Validation("growth_rate_estimate needs a horizon of at least 100".into()));
    }
    let delta = horizon.div_ceil(10);
    let vals = finite_horizon_values(m, pol, cost_tag, &[horizon - delta, horizon])?;
    let nf = horizon as f64;
    Ok(GrowthEstimate {
        estimate: vals[1].iter().map(|x| x / nf).collect(),
        tail_slope: vals[1].iter().zip(&vals[0]).map(|(a, b)| (a - b) / delta as f64).collect(),
        horizon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnumerationReport {
    /// `lambda[k][i]`: growth rate at state `i` under policy number `k`.
    pub lambda: Vec<Vec<f64>>,
    /// `min_v λ_i^v` per state.
    pub min_per_state: Vec<f64>,
    /// Lowest-numbered minimizing policy per state.
    pub argmin: Vec<Vec<usize>>,
    /// `max_i min_v λ_i^v`.
    pub lambda_star: f64,
    pub n_policies: usize,
}

/// Deterministic policy number `k` (state 0 is the least significant digit).
pub fn policy_from_index(k: usize, n_states: usize, n_actions: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n_states);
    let mut r = k;
    for _ in 0..n_states {
        out.push(r % n_actions);
        r /= n_actions;
    }
    out
}

fn policy_count(m: &Mdp) -> Result<usize> {
    let mut total: usize = 1;
    for _ in 0..m.n_states() {
        total = total.checked_mul(m.n_actions()).filter(|&t| t <= ENUMERATION_GUARD).ok_or_else(|| {
            Error::Guard(format!("{}^{} policies exceeds {ENUMERATION_GUARD}", m.n_actions(), m.n_states()))
        })?;
    }
    Ok(total)
}

pub fn enumerate_policies(m: &Mdp, cost_tag: CostTag, exec: Execution) -> Result<EnumerationReport> {
    let total = policy_count(m)?;
    let n = m.n_states();
    let results: Vec<Result<Vec<f64>>> = map_indexed(total, exec, |k| {
        let pol = Policy::Deterministic(policy_from_index(k, n, m.n_actions()));
        Ok(evaluate_policy(m, &pol, cost_tag)?.lambda)
    });
    let lambda: Vec<Vec<f64>> = results.into_iter().collect::<Result<_>>()?;
    let mut min_per_state = vec![f64::INFINITY; n];
    let mut best_k = vec![0; n];
    for (k, l) in lambda.iter().enumerate() {
        for i in 0..n {
            if l[i] < min_per_state[i] {
                min_per_state[i] = l[i];
                best_k[i] = k;
            }
        }
    }
    let lambda_star = min_per_state.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(EnumerationReport {
        argmin: best_k.iter().map(|&k| policy_from_index(k, n, m.n_actions())).collect(),
        lambda,
        min_per_state,
        lambda_star,
        n_policies: total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    /// `(1/N) log mean_k exp(S_k)`.
    pub estimate: f64,
    /// 95% half-width by the delta method on the exponential scale.
    pub half_width: f64,
    pub n_paths: usize,
    pub horizon: usize,
}

pub(crate) fn sample_index<R: Rng>(rng: &mut R, w: &[f64]) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in w.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = k;
        if x < acc {
            return k;
        }
    }
    last
}

/// Simulates `n_paths` independent paths of length `horizon` from `start`.
/// Path `k` draws from its own ChaCha stream, so results do not depend on
/// how paths are scheduled.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_cost(
    m: &Mdp,
    pol: &Policy,
    cost_tag: CostTag,
    start: usize,
    horizon: usize,
    n_paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<MonteCarloEstimate> {
    pol.validate(m)?;
    if start >= m.n_states() || horizon == 0 || n_paths < 2 {
        return Err(Error::Validation("monte_carlo_cost: bad start, horizon or path count".into()));
    }
    let costs = m.cost_table(cost_tag)?;
    let sums: Vec<f64> = map_indexed(n_paths, exec, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut x = start;
        let mut s = 0.0;
        for _ in 0..horizon {
            let u = sample_index(&mut rng, &pol.weights(x, m.n_actions()));
            s += costs[x][u];
            x = sample_index(&mut rng, m.p_row(x, u));
        }
        s
    });
    let mx = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = sums.iter().map(|s| (s - mx).exp()).collect();
    let nf = n_paths as f64;
    let mean = w.iter().sum::<f64>() / nf;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let hf = horizon as f64;
    Ok(MonteCarloEstimate {
        estimate: (mx + mean.ln()) / hf,
        half_width: 1.96 * var.sqrt() / (nf.sqrt() * mean * hf),
        n_paths,
        horizon,
    })
}

/// All action distributions on the grid with step `1/mesh`.
pub fn simplex_grid(n_actions: usize, mesh: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(left - k, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut raw = Vec::new();
    rec(mesh, n_actions, &mut Vec::new(), &mut raw);
    raw.into_iter().map(|v| v.into_iter().map(|k| k as f64 / mesh as f64).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOptimum {
    pub policy: Policy,
    /// Per-state growth rates of the primary and constraint costs.
    pub lambda_c: Vec<f64>,
    pub lambda_k: Vec<f64>,
    /// `Σ_i λ_c,i`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    /// `None` when no grid policy satisfies the constraint.
    pub best: Option<GridOptimum>,
    pub evaluated: usize,
    pub feasible: usize,
    pub mesh: usize,
}

/// Objective, `λ_c` and `λ_k` of a feasible grid point.
type GridEval = (f64, Vec<f64>, Vec<f64>);

/// Minimizes `Σ_i λ_c,i(y)` over randomized policies on a simplex grid,
/// subject to `Σ_i λ_k,i(y) ≤ |S|·C`.
pub fn constrained_grid_search(m: &Mdp, mesh: usize, exec: Execution) -> Result<GridReport> {
    let bound = m.constraint_bound()?;
    if mesh == 0 {
        return Err(Error::Validation("mesh must be positive".into()));
    }
    let n = m.n_states();
    let per_state = simplex_grid(m.n_actions(), mesh);
    let pts = per_state.len();
    let guard = (mesh as f64).powi(m.n_actions() as i32 - 1) * n as f64;
    let mut total: usize = 1;
    for _ in 0..n {
        total = total.saturating_mul(pts);
    }
    if guard > ENUMERATION_GUARD as f64 || total > ENUMERATION_GUARD {
        return Err(Error::Guard(format!("grid of {total} policies exceeds {ENUMERATION_GUARD}")));
    }
    let limit = bound * n as f64;
    let evals: Vec<Result<Option<GridEval>>> = map_indexed(total, exec, |k| {
        let mut r = k;
        let y: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let row = per_state[r % pts].clone();
                r /= pts;
                row
            })
            .collect();
        let pol = Policy::Randomized(y);
        let lk = evaluate_policy(m, &pol, CostTag::Constraint)?.lambda;
        if lk.iter().sum::<f64>() > limit + 1e-12 {
            return Ok(None);
        }
        let lc = evaluate_policy(m, &pol, CostTag::Primary)?.lambda;
        Ok(Some((lc.iter().sum(), lc, lk)))
    });
    let mut best: Option<(usize, f64, Vec<f64>, Vec<f64>)> = None;
    let mut feasible = 0;
    for (k, e) in evals.into_iter().enumerate() {
        if let Some((obj, lc, lk)) = e? {
            feasible += 1;
            if best.as_ref().is_none_or(|b| obj < b.1) {
                best = Some((k, obj, lc, lk));
            }
        }
    }
    let best = best.map(|(k, obj, lc, lk)| {
        let mut r = k;
        let y = (0..n)
            .map(|_| {
                let row = per_state[r % pts].clone();
                r /= pts;
                row
            })
            .collect();
        GridOptimum { policy: Policy::Randomized(y), lambda_c: lc, lambda_k: lk, objective: obj }
    });
    Ok(GridReport { best, evaluated: total, feasible, mesh })
}

/// Grid maximum of `q·V − Σ_u y_u D(q‖p_u)` over `q` on the simplex grid with
/// step `1/mesh`. The objective is separable in `q_j`, so the constrained
/// maximum is found exactly by a knapsack-style pass over coordinates.
pub fn grid_max_mixture(y: &[f64], rows: &[&[f64]], v: &[f64], mesh: usize) -> f64 {
    let n = v.len();
    let h = 1.0 / mesh as f64;
    // table[j][k] = contribution of q_j = k/mesh.
    let table: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            (0..=mesh)
                .map(|k| {
                    let x = k as f64 * h;
                    let mut f = x * v[j];
                    if k > 0 {
                        for (&yu, row) in y.iter().zip(rows) {
                            if yu <= 0.0 {
                                continue;
                            }
                            if row[j] <= SUPPORT_EPS {
                                return f64::NEG_INFINITY;
                            }
                            f -= yu * x * (x / row[j]).ln();
                        }
                    }
                    f
                })
                .collect()
        })
        .collect();
    let mut best = table[0].clone();
    for t in &table[1..] {
        let mut next = vec![f64::NEG_INFINITY; mesh + 1];
        for (s, slot) in next.iter_mut().enumerate() {
            for k in 0..=s {
                let cand = best[s - k] + t[k];
                if cand > *slot {
                    *slot = cand;
                }
            }
        }
        best = next;
    }
    best[mesh]
}

/// Grid maximum of `q·V − D(q‖p)`.
pub fn grid_max_dv(p: &[f64], v: &[f64], mesh: usize) -> f64 {
    grid_max_mixture(&[1.0], &[p], v, mesh)
}

const GOLDEN_ITERS: usize = 80;

fn golden_min(lo: f64, hi: f64, f: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mut best = (0.5 * (a + b), f(0.5 * (a + b)));
    for x in [lo, hi] {
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Minimizes a convex function over the probability simplex by nested
/// golden-section search (up to three actions).
pub fn simplex_convex_min(n_actions: usize, f: &dyn Fn(&[f64]) -> f64) -> Result<(Vec<f64>, f64)> {
    match n_actions {
        1 => Ok((vec![1.0], f(&[1.0]))),
        2 => {
            let (t, v) = golden_min(0.0, 1.0, &|t| f(&[t, 1.0 - t]));
            Ok((vec![t, 1.0 - t], v))
        }
        3 => {
            let inner = |t: f64| golden_min(0.0, 1.0 - t, &|s| f(&[t, s, (1.0 - t - s).max(0.0)]));
            let (t, _) = golden_min(0.0, 1.0, &|t| inner(t).1);
            let (s, v) = inner(t);
            Ok((vec![t, s, (1.0 - t - s).max(0.0)], v))
        }
        _ => Err(Error::Guard("mixed_game_value handles at most three actions".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedGameValue {
    pub value: f64,
    pub v: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Value of the payoff-mixed game on a unichain model by relative value
/// iteration, each step minimizing
/// `Σ_u y_u c(i,u) + log Σ_j e^{V_j} Π_u p_u(j)^{y_u}` over `y_i`.
pub fn mixed_game_value(m: &Mdp, cost_tag: CostTag, tol: f64, max_iter: usize) -> Result<MixedGameValue> {
    let n = m.n_states();
    let na = m.n_actions();
    let costs = m.cost_table(cost_tag)?;
    let step = |i: usize, y: &[f64], v: &[f64]| -> f64 {
        let mut yc = 0.0;
        for u in 0..na {
            yc += y[u] * costs[i][u];
        }
        let terms = (0..n).map(|j| {
            let mut acc = v[j];
            for u in 0..na {
                let p = m.p(i, u, j);
                if p <= SUPPORT_EPS {
                    return f64::NEG_INFINITY;
                }
                acc += y[u] * p.ln();
            }
            acc
        });
        yc + log_sum_exp(terms)
    };
    let mut v = vec![0.0; n];
    let mut y = vec![vec![1.0 / na as f64; na]; n];
    let mut offset = 0.0;
    for it in 1..=max_iter {
        let mut tv = vec![0.0; n];
        for i in 0..n {
            let (yi, val) = simplex_convex_min(na, &|yy: &[f64]| step(i, yy, &v))?;
            tv[i] = val;
            y[i] = yi;
        }
        offset = tv[0];
        let next: Vec<f64> = tv.iter().map(|x| x - offset).collect();
        let diff: Vec<f64> = next.iter().zip(&v).map(|(a, b)| a - b).collect();
        v = next;
        if crate::linalg::span(&diff) < tol {
            return Ok(MixedGameValue { value: offset, v, y, iterations: it });
        }
    }
    Err(Error::NonConvergence { what: "mixed_game_value", iterations: max_iter, last: offset })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle() -> Mdp {
        Mdp::new(vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]], vec![vec![0.2], vec![0.8]]).unwrap()
    }

    #[test]
    fn horizon_examples() {
        let m = Mdp::new(vec![vec![vec![1.0]]], vec![vec![0.5]]).unwrap();
        let v = finite_horizon_value(&m, &Policy::Deterministic(vec![0]), CostTag::Primary, 1).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15);
        let v = finite_horizon_value(&cycle(), &Policy::Deterministic(vec![0, 0]), CostTag::Primary, 2).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn submultiplicative() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(3), 4, 2);
        let pol = Policy::Deterministic(vec![0, 1, 1, 0]);
        let vals = finite_horizon_values(&m, &pol, CostTag::Primary, &[7, 5, 12]).unwrap();
        let max5 = vals[1].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..4 {
            assert!(vals[2][i] <= vals[0][i] + max5 + 4f64.ln() + 1e-12);
        }
    }

    #[test]
    fn growth_on_cycle_and_iid() {
        let g = growth_rate_estimate(&cycle(), &Policy::Deterministic(vec![0, 0]), CostTag::Primary, 1000).unwrap();
        for e in &g.estimate {
            assert!((e - 0.5).abs() < 1e-3);
        }
        let pi = [0.1, 0.6, 0.3];
        let c = [0.4, -0.2, 0.9];
        let m = Mdp::new(vec![vec![pi.to_vec()]; 3], c.iter().map(|&x| vec![x]).collect()).unwrap();
        let expect = pi.iter().zip(&c).map(|(p, c)| p * c.exp()).sum::<f64>().ln();
        let g = growth_rate_estimate(&m, &Policy::Deterministic(vec![0; 3]), CostTag::Primary, 137).unwrap();
        for (i, e) in g.estimate.iter().enumerate() {
            // One step from i costs c_i, the remaining N−1 factor exactly.
            let exact = (c[i] + 136.0 * expect) / 137.0;
            assert!((e - exact).abs() < 1e-9);
            assert!((g.tail_slope[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn enumeration_examples() {
        let m = Mdp::new(vec![vec![vec![1.0], vec![1.0]]], vec![vec![0.5, 0.2]]).unwrap();
        let r = enumerate_policies(&m, CostTag::Primary, Execution::Sequential).unwrap();
        assert!((r.lambda_star - 0.2).abs() < 1e-12);
        assert_eq!(r.argmin[0], vec![1]);

        let m =
            crate::generate::random_mdp(&mut crate::generate::rng(1), 3, 2).with_cost(vec![vec![0.37; 2]; 3]).unwrap();
        let r = enumerate_policies(&m, CostTag::Primary, Execution::Sequential).unwrap();
        assert!((r.lambda_star - 0.37).abs() < 1e-12);
        assert_eq!(r.n_policies, 8);
    }

    #[test]
    fn enumeration_is_deterministic_across_execution() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(5), 4, 2);
        let a = enumerate_policies(&m, CostTag::Primary, Execution::Sequential).unwrap();
        let b = enumerate_policies(&m, CostTag::Primary, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn enumeration_guard() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(5), 21, 2);
        assert!(matches!(enumerate_policies(&m, CostTag::Primary, Execution::Sequential), Err(Error::Guard(_))));
    }

    #[test]
    fn monte_carlo_deterministic_chain() {
        let r = monte_carlo_cost(
            &cycle(),
            &Policy::Deterministic(vec![0, 0]),
            CostTag::Primary,
            0,
            10,
            50,
            1,
            Execution::Sequential,
        )
        .unwrap();
        assert!((r.estimate - 0.5).abs() < 1e-12);
        assert!(r.half_width.abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_reproducible() {
        let m = crate::generate::random_mdp(&mut crate::generate::rng(2), 3, 2);
        let pol = Policy::uniform(&m);
        let a = monte_carlo_cost(&m, &pol, CostTag::Primary, 0, 20, 500, 9, Execution::Sequential).unwrap();
        let b = monte_carlo_cost(&m, &pol, CostTag::Primary, 0, 20, 500, 9, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(simplex_grid(2, 4).len(), 5);
        assert_eq!(simplex_grid(3, 4).len(), 15);
        for y in simplex_grid(3, 7) {
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn single_state_constrained(bound: f64) -> Mdp {
        Mdp::with_constraint(
            vec![vec![vec![1.0], vec![1.0]]],
            vec![vec![0.0, 1.0]],
            Some(vec![vec![1.0, 0.0]]),
            Some(bound),
        )
        .unwrap()
    }

    #[test]
    fn constrained_grid_single_state() {
        let r = constrained_grid_search(&single_state_constrained(0.5), 1000, Execution::Parallel).unwrap();
        let b = r.best.unwrap();
        let e = std::f64::consts::E;
        let y0 = (0.5f64.exp() - 1.0) / (e - 1.0);
        let exact = (e - (e - 1.0) * y0).ln();
        assert!((b.objective - exact).abs() < 2e-3);
        let w = b.policy.to_randomized(2);
        let Policy::Randomized(y) = w else { unreachable!() };
        assert!((y[0][0] - y0).abs() < 2e-3);
    }

    #[test]
    fn constrained_grid_extremes() {
        let r = constrained_grid_search(&single_state_constrained(10.0), 100, Execution::Sequential).unwrap();
        assert!(r.best.unwrap().objective.abs() < 1e-12);
        let r = constrained_grid_search(&single_state_constrained(-0.1), 100, Execution::Sequential).unwrap();
        assert!(r.best.is_none());
        assert_eq!(r.feasible, 0);
    }

    #[test]
    fn grid_dv_close_to_closed_form() {
        let p = [0.2, 0.5, 0.3];
        let v = [0.4, -0.3, 1.1];
        let exact = crate::variational::dv_tilt(&p, &v).value;
        let g = grid_max_dv(&p, &v, 1000);
        assert!(g <= exact + 1e-12);
        assert!(exact - g < 1e-5);
    }

    #[test]
    fn golden_section_finds_quadratic_min() {
        let (y, v) = simplex_convex_min(3, &|y: &[f64]| (y[0] - 0.2).powi(2) + (y[1] - 0.5).powi(2)).unwrap();
        assert!(v < 1e-12);
        assert!((y[0] - 0.2).abs() < 1e-6 && (y[1] - 0.5).abs() < 1e-6);
    }
}
