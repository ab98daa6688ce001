//! Seeded random instances for tests, benches and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::model::{Mdp, Policy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A Dirichlet(1,…,1) draw over `support` (zeros elsewhere).
pub fn random_row<R: Rng>(rng: &mut R, n: usize, support: &[usize]) -> Vec<f64> {
    let mut row = vec![0.0; n];
    let mut s = 0.0;
    for &j in support {
        let e: f64 = Exp1.sample(rng);
        let e = e.max(1e-6);
        row[j] = e;
        s += e;
    }
    row.iter_mut().for_each(|x| *x /= s);
    row
}

/// Dense random model: every row has full support, costs uniform in `[0,1)`.
pub fn random_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize) -> Mdp {
    random_mdp_sparse(rng, n_states, n_actions, 0.0)
}

/// Random model whose rows drop each entry with probability `sparsity`
/// (keeping at least one).
pub fn random_mdp_sparse<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, sparsity: f64) -> Mdp {
    let all: Vec<usize> = (0..n_states).collect();
    let mut p = Vec::with_capacity(n_states);
    let mut c = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let mut rows = Vec::with_capacity(n_actions);
        for _ in 0..n_actions {
            let mut sup: Vec<usize> = all.iter().cloned().filter(|_| rng.random::<f64>() >= sparsity).collect();
            if sup.is_empty() {
                sup.push(rng.random_range(0..n_states));
            }
            rows.push(random_row(rng, n_states, &sup));
        }
        p.push(rows);
        c.push((0..n_actions).map(|_| rng.random::<f64>()).collect());
    }
    Mdp::new(p, c).expect("generated rows are stochastic")
}

/// Adds a random constraint cost in `[0,1)` and the given bound.
pub fn with_random_constraint<R: Rng>(rng: &mut R, m: &Mdp, bound: f64) -> Mdp {
    let k: Vec<Vec<f64>> =
        (0..m.n_states()).map(|_| (0..m.n_actions()).map(|_| rng.random::<f64>()).collect()).collect();
    Mdp::with_constraint(m.p_nested(), m.cost_table(crate::model::CostTag::Primary).unwrap(), Some(k), Some(bound))
        .expect("valid")
}

/// Two closed classes `{0..a}` and `{a..a+b}` plus `t` transient states
/// feeding both. Supports depend only on the state, not the action, and the
/// second class is made costlier so the optimal values differ across classes.
pub fn two_class_mdp<R: Rng>(rng: &mut R, a: usize, b: usize, t: usize, n_actions: usize) -> Mdp {
    let n = a + b + t;
    let class_a: Vec<usize> = (0..a).collect();
    let class_b: Vec<usize> = (a..a + b).collect();
    let all: Vec<usize> = (0..n).collect();
    let mut p = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let (sup, lo) = if i < a {
            (&class_a, 0.0)
        } else if i < a + b {
            (&class_b, 1.0)
        } else {
            (&all, 0.5)
        };
        p.push((0..n_actions).map(|_| random_row(rng, n, sup)).collect());
        c.push((0..n_actions).map(|_| lo + rng.random::<f64>()).collect());
    }
    Mdp::new(p, c).expect("generated rows are stochastic")
}

pub fn random_deterministic_policy<R: Rng>(rng: &mut R, m: &Mdp) -> Policy {
    Policy::Deterministic((0..m.n_states()).map(|_| rng.random_range(0..m.n_actions())).collect())
}

pub fn random_randomized_policy<R: Rng>(rng: &mut R, m: &Mdp) -> Policy {
    let all: Vec<usize> = (0..m.n_actions()).collect();
    Policy::Randomized((0..m.n_states()).map(|_| random_row(rng, m.n_actions(), &all)).collect())
}

/// Random probability vector of length `n` with full support.
pub fn random_simplex_point<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let all: Vec<usize> = (0..n).collect();
    random_row(rng, n, &all)
}
