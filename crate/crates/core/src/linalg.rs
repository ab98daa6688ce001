//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// `log Σ e^{x}`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max_i x_i - min_i x_i`.
pub fn span(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Solves the dense square system `a x = b` by LU; `None` if singular.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let m = DMatrix::from_fn(n, n, |r, c| a[r][c]);
    let rhs = DVector::from_column_slice(b);
    m.lu().solve(&rhs).map(|x| x.iter().cloned().collect())
}

/// Stationary distribution of an irreducible stochastic matrix `q`
/// (`π q = π`, `Σ π = 1`).
pub fn stationary_distribution(q: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = q.len();
    if n == 1 {
        return Some(vec![1.0]);
    }
    // (q^T - I) π = 0 with the last equation replaced by the normalization.
    let mut a = vec![vec![0.0; n]; n];
    for r in 0..n - 1 {
        for c in 0..n {
            a[r][c] = q[c][r] - if r == c { 1.0 } else { 0.0 };
        }
    }
    a[n - 1] = vec![1.0; n];
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    solve_dense(&a, &b)
}
