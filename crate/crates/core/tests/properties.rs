use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rskit::generate::{random_mdp, random_randomized_policy, rng};
use rskit::lp::{solve_lp, LpStatus, StandardLp};
use rskit::spectral::evaluate_policy;
use rskit::variational::{dv_tilt, mixture_objective, mixture_tilt};
use rskit::CostTag;

/// Minimum of `c·x` over `{A x ≥ b, 0 ≤ x ≤ ub}` by checking every basis of
/// active constraints. `None` when no vertex is feasible.
fn brute_force(c: &[f64], a: &[Vec<f64>], b: &[f64], ub: f64) -> Option<f64> {
    let n = c.len();
    let mut rows: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().cloned()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), 0.0));
        rows.push((e, ub));
    }
    let feasible = |x: &[f64]| {
        x.iter().all(|&v| v >= -1e-9 && v <= ub + 1e-9)
            && a.iter().zip(b).all(|(r, &bi)| r.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() >= bi - 1e-9)
    };
    let mut best: Option<f64> = None;
    let k = rows.len();
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let m = DMatrix::from_fn(n, n, |r, col| rows[idx[r]].0[col]);
        let rhs = DVector::from_fn(n, |r, _| rows[idx[r]].1);
        if let Some(x) = m.lu().solve(&rhs) {
            let x: Vec<f64> = x.iter().cloned().collect();
            if x.iter().all(|v| v.is_finite()) && feasible(&x) {
                let v: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        // Next combination of n rows out of k.
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < k - n + i {
                idx[i] += 1;
                for t in i + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

fn coef() -> impl Strategy<Value = f64> {
    (-20i32..=20).prop_map(|v| v as f64 / 4.0)
}

fn small_lp() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..=3, 1usize..=4).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(coef(), n),
            prop::collection::vec(prop::collection::vec(coef(), n), m),
            prop::collection::vec(coef(), m),
        )
    })
}

fn build(c: &[f64], a: &[Vec<f64>], b: &[f64], ub: f64) -> StandardLp {
    let mut lp = StandardLp::new(c.len());
    lp.objective = c.to_vec();
    lp.a_ge = a.to_vec();
    lp.b_ge = b.to_vec();
    lp.upper = vec![ub; c.len()];
    lp
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lp_matches_vertex_enumeration((c, a, b) in small_lp()) {
        let sol = solve_lp(&build(&c, &a, &b, 10.0)).unwrap();
        match brute_force(&c, &a, &b, 10.0) {
            Some(v) => {
                prop_assert_eq!(sol.status, LpStatus::Optimal);
                prop_assert!((sol.objective_value - v).abs() < 1e-7, "{} vs {}", sol.objective_value, v);
                prop_assert!((sol.objective_value - sol.dual_objective).abs() < 1e-7);
            }
            None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
        }
    }

    #[test]
    fn lp_row_order_irrelevant((c, a, b) in small_lp()) {
        let one = solve_lp(&build(&c, &a, &b, 10.0)).unwrap();
        let ra: Vec<Vec<f64>> = a.iter().rev().cloned().collect();
        let rb: Vec<f64> = b.iter().rev().cloned().collect();
        let two = solve_lp(&build(&c, &ra, &rb, 10.0)).unwrap();
        prop_assert_eq!(one.status, two.status);
        if one.status == LpStatus::Optimal {
            prop_assert!((one.objective_value - two.objective_value).abs() < 1e-7);
        }
    }

    #[test]
    fn growth_rate_shift_and_bounds(seed in 0u64..10_000, n in 1usize..=4, na in 1usize..=3, delta in -2.0f64..2.0) {
        let mut r = rng(seed);
        let m = random_mdp(&mut r, n, na);
        let pol = random_randomized_policy(&mut r, &m);
        let base = evaluate_policy(&m, &pol, CostTag::Primary).unwrap().lambda;
        let moved = evaluate_policy(&m.shifted(delta), &pol, CostTag::Primary).unwrap().lambda;
        let costs = m.cost_table(CostTag::Primary).unwrap();
        let lo = costs.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        let hi = costs.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((b - a - delta).abs() < 1e-9);
            prop_assert!(*a >= lo - 1e-9 && *a <= hi + 1e-9);
        }
    }

    #[test]
    fn dv_tilt_dominates_any_q(
        p in prop::collection::vec(0.05f64..1.0, 2..=5),
        v in prop::collection::vec(-3.0f64..3.0, 5),
        q in prop::collection::vec(0.0f64..1.0, 5),
    ) {
        let d = p.len();
        let sp: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|x| x / sp).collect();
        let v = &v[..d];
        let sq: f64 = q[..d].iter().sum::<f64>() + 1e-12;
        let q: Vec<f64> = q[..d].iter().map(|x| (x + 1e-12 / d as f64) / sq).collect();
        let t = dv_tilt(&p, v);
        prop_assert!((t.q_star.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(t.value >= mixture_objective(&[1.0], &[&p], v, &q) - 1e-12);
        prop_assert!((t.value - mixture_objective(&[1.0], &[&p], v, &t.q_star)).abs() < 1e-10);
    }

    #[test]
    fn mixture_tilt_attains_its_value(seed in 0u64..10_000, d in 2usize..=4, na in 1usize..=3) {
        let mut r = rng(seed);
        let y = rskit::generate::random_simplex_point(&mut r, na);
        let rows: Vec<Vec<f64>> = (0..na).map(|_| rskit::generate::random_simplex_point(&mut r, d)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|x| x.as_slice()).collect();
        let v: Vec<f64> = (0..d).map(|j| (j as f64 * 0.7 + seed as f64 * 0.01).sin()).collect();
        let t = mixture_tilt(&y, &refs, &v).unwrap();
        prop_assert!((t.value - mixture_objective(&y, &refs, &v, &t.q_star)).abs() < 1e-10);
        for (row, _) in rows.iter().zip(&y) {
            prop_assert!(t.value >= mixture_objective(&y, &refs, &v, row) - 1e-12);
        }
    }
}
