//! KL divergence, the perturbed payoffs `c̃ = c − D(q‖p_u)`, and the closed
//! forms of the kernel maximizations used as separation oracles.

use crate::error::{Error, Result};
use crate::model::{CostTag, Mdp, SUPPORT_EPS};

/// Probabilities below this are dropped (and the rest renormalized) when
/// forming a tilted row.
pub const TILT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct TiltResult {
    pub value: f64,
    pub q_star: Vec<f64>,
}

/// `Σ q log(q/p)`, `+inf` when `q` is not absolutely continuous w.r.t. `p`.
pub fn kl_divergence(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::Validation(format!("kl_divergence: lengths {} and {}", q.len(), p.len())));
    }
    let mut d = 0.0;
    for (&qj, &pj) in q.iter().zip(p) {
        if qj <= 0.0 {
            continue;
        }
        if pj <= SUPPORT_EPS {
            return Ok(f64::INFINITY);
        }
        d += qj * (qj / pj).ln();
    }
    Ok(d.max(0.0))
}

/// `cost(i,u) − D(q‖p(·|i,u))`; `-inf` off support.
pub fn c_tilde(m: &Mdp, i: usize, u: usize, q: &[f64], cost_tag: CostTag) -> Result<f64> {
    let c = m.cost(cost_tag, i, u)?;
    let d = kl_divergence(q, m.p_row(i, u))?;
    Ok(c - d)
}

fn normalize_tilt(log_w: Vec<f64>) -> TiltResult {
    let mx = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - mx).exp() }).collect();
    let s: f64 = w.iter().sum();
    let mut q: Vec<f64> = w.iter().map(|&x| x / s).collect();
    if q.iter().any(|&x| x > 0.0 && x < TILT_FLOOR) {
        q.iter_mut().filter(|x| **x < TILT_FLOOR).for_each(|x| *x = 0.0);
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|x| *x /= s);
    }
    TiltResult { value: mx + s.ln(), q_star: q }
}

/// Maximizes `q·V − D(q‖p)`: value `log Σ p e^V`, maximizer `∝ p e^V`.
pub fn dv_tilt(p: &[f64], v: &[f64]) -> TiltResult {
    let log_w =
        p.iter().zip(v).map(|(&pj, &vj)| if pj > SUPPORT_EPS { pj.ln() + vj } else { f64::NEG_INFINITY }).collect();
    normalize_tilt(log_w)
}

/// Maximizes `q·V − Σ_u y_u D(q‖p_u)` over `q` supported on the common
/// support of the rows with positive weight.
pub fn mixture_tilt(y: &[f64], rows: &[&[f64]], v: &[f64]) -> Result<TiltResult> {
    mixture_tilt_masked(y, rows, v, None)
}

/// As [`mixture_tilt`], with `q` further restricted to `mask`.
pub fn mixture_tilt_masked(y: &[f64], rows: &[&[f64]], v: &[f64], mask: Option<&[bool]>) -> Result<TiltResult> {
    let n = v.len();
    if y.len() != rows.len() || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Validation("mixture_tilt: shape mismatch".into()));
    }
    let mut log_w = vec![0.0; n];
    for (j, lw) in log_w.iter_mut().enumerate() {
        if mask.is_some_and(|m| !m[j]) {
            *lw = f64::NEG_INFINITY;
            continue;
        }
        let mut acc = v[j];
        for (&yu, row) in y.iter().zip(rows) {
            if yu <= 0.0 {
                continue;
            }
            if row[j] <= SUPPORT_EPS {
                acc = f64::NEG_INFINITY;
                break;
            }
            acc += yu * row[j].ln();
        }
        *lw = acc;
    }
    if log_w.iter().all(|&x| x == f64::NEG_INFINITY) {
        return Err(Error::Numeric("mixture_tilt: empty common support".into()));
    }
    Ok(normalize_tilt(log_w))
}

/// `q·V − Σ_u y_u D(q‖p_u)`, the objective both tilts maximize.
pub fn mixture_objective(y: &[f64], rows: &[&[f64]], v: &[f64], q: &[f64]) -> f64 {
    let mut obj: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
    for (&yu, row) in y.iter().zip(rows) {
        if yu > 0.0 {
            obj -= yu * kl_divergence(q, row).expect("same length");
        }
    }
    obj
}
