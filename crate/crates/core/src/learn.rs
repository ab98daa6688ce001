//! Two-timescale learning on the product chain.
//!
//! The fast iterate is a reference-normalized multiplicative Q-iterate over
//! product states `(i, j)` with stage cost `c(i,u) + Γ k(j,u)`:
//!
//! ```text
//! q(s,u) ← q(s,u) + a(n) [ e^{ȟ(s,u)} min_b q(s',b) / q(ref) − q(s,u) ]
//! ```
//!
//! Its fixed point has `log q(ref)` equal to the optimal growth rate. The
//! slow iterate is projected ascent on Γ.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Mdp, Policy};
use crate::oracle::sample_index;

/// Exponent of the fast stepsize `a(n)`.
pub const FAST_EXPONENT: f64 = 0.6;
/// Exponent of the slow stepsize `b(n)`.
pub const SLOW_EXPONENT: f64 = 1.0;
/// Exponent of the constraint-estimate stepsize `c(n)`, between the two.
pub const ESTIMATE_EXPONENT: f64 = 0.8;

/// What drives the Γ iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSignal {
    /// Running risk-sensitive growth estimate of `k` under the behavior policy.
    RiskSensitive,
    /// The observed stage cost `k(X_n, U_n)`.
    StageCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LearnerConfig {
    pub a0: f64,
    pub a_decay: f64,
    pub b0: f64,
    pub c0: f64,
    pub seed: u64,
    pub max_steps: usize,
    /// Reference pair: product state index `i·|S| + j` and action.
    pub i_ref: usize,
    pub u_ref: usize,
    pub gamma0: f64,
    pub gamma_cap: f64,
    /// Constraint level θ in log-growth units; `None` takes the model's bound.
    pub theta: Option<f64>,
    pub epsilon: f64,
    pub trace_every: usize,
    pub signal: ConstraintSignal,
    pub freeze_gamma: bool,
    /// Steps at the end of the run over which the Γ range is reported.
    pub tail_window: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            a0: 0.5,
            a_decay: 1e-3,
            b0: 1.0,
            c0: 0.5,
            seed: 0,
            max_steps: 1_000_000,
            i_ref: 0,
            u_ref: 0,
            gamma0: 0.0,
            gamma_cap: 100.0,
            theta: None,
            epsilon: 0.1,
            trace_every: 1000,
            signal: ConstraintSignal::RiskSensitive,
            freeze_gamma: false,
            tail_window: 10_000,
        }
    }
}

impl LearnerConfig {
    /// `a(n) = a0 / (1 + n·a_decay)^0.6`.
    pub fn fast_stepsize(&self, n: usize) -> f64 {
        self.a0 / (1.0 + n as f64 * self.a_decay).powf(FAST_EXPONENT)
    }

    /// `b(n) = b0 / (1 + n)`.
    pub fn slow_stepsize(&self, n: usize) -> f64 {
        self.b0 / (1.0 + n as f64).powf(SLOW_EXPONENT)
    }

    /// `c(n) = c0 / (1 + n)^0.8`.
    pub fn estimate_stepsize(&self, n: usize) -> f64 {
        self.c0 / (1.0 + n as f64).powf(ESTIMATE_EXPONENT)
    }

    pub fn validate(&self, m: &Mdp) -> Result<()> {
        let n = m.n_states();
        let ok = self.a0 > 0.0
            && self.a0 <= 1.0
            && self.a_decay > 0.0
            && self.b0 > 0.0
            && self.c0 > 0.0
            && self.c0 <= 1.0
            && self.max_steps > 0
            && self.trace_every > 0
            && (0.0..=1.0).contains(&self.epsilon)
            && self.gamma_cap.is_finite()
            && self.gamma_cap >= 0.0
            && (0.0..=self.gamma_cap).contains(&self.gamma0)
            && self.i_ref < n * n
            && self.u_ref < m.n_actions()
            && self.theta.is_none_or(f64::is_finite);
        if !ok {
            return Err(Error::Validation(
                "learner config needs 0 < a0 ≤ 1, 0 < c0 ≤ 1, a_decay, b0 > 0, ε ∈ [0,1], \
                 0 ≤ gamma0 ≤ gamma_cap < ∞ and reference indices in range"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Positive Q-values over product states, plus the current Γ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QTable {
    pub q: Vec<Vec<f64>>,
    pub gamma: f64,
    pub i_ref: usize,
    pub u_ref: usize,
}

impl QTable {
    pub fn new(n_product: usize, n_actions: usize, gamma: f64, i_ref: usize, u_ref: usize) -> Self {
        QTable { q: vec![vec![1.0; n_actions]; n_product], gamma, i_ref, u_ref }
    }

    pub fn reference(&self) -> f64 {
        self.q[self.i_ref][self.u_ref]
    }

    /// `log q(ref)`.
    pub fn lambda_estimate(&self) -> f64 {
        self.reference().ln()
    }

    /// Lowest-index minimizer of `q(s, ·)`.
    pub fn greedy(&self, s: usize) -> usize {
        let row = &self.q[s];
        let mut best = 0;
        for (u, &x) in row.iter().enumerate() {
            if x < row[best] {
                best = u;
            }
        }
        best
    }

    pub fn min_q(&self, s: usize) -> f64 {
        self.q[s].iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// One observed product-chain transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    /// `ȟ = c(i,u) + Γ k(j,u)`.
    pub cost: f64,
    pub next: usize,
}

/// Samples `j ~ p(·|i,u)`.
pub fn simulate_step<R: Rng>(m: &Mdp, state: usize, action: usize, rng: &mut R) -> usize {
    sample_index(rng, m.p_row(state, action))
}

/// Product-chain step: both components move independently under the same action.
pub fn simulate_product_step<R: Rng>(m: &Mdp, state: (usize, usize), action: usize, rng: &mut R) -> (usize, usize) {
    let i = simulate_step(m, state.0, action, rng);
    let j = simulate_step(m, state.1, action, rng);
    (i, j)
}

/// Updates the visited entry only; the reference value is read before the update.
pub fn rs_q_step(qt: &mut QTable, tr: &Transition, a_n: f64) {
    let target = tr.cost.exp() * qt.min_q(tr.next) / qt.reference();
    let q = &mut qt.q[tr.state][tr.action];
    *q += a_n * (target - *q);
}

/// `clamp(Γ + b·(k_obs − θ), 0, cap)`.
pub fn gamma_step(gamma: f64, k_obs: f64, theta: f64, b_n: f64, gamma_cap: f64) -> f64 {
    (gamma + b_n * (k_obs - theta)).clamp(0.0, gamma_cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: usize,
    pub gamma: f64,
    pub lambda_estimate: f64,
    pub epsilon: f64,
    pub visited_state: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LearnTrace {
    pub rows: Vec<TraceRow>,
}

impl LearnTrace {
    pub const HEADER: [&'static str; 5] = ["n", "gamma", "lambda_estimate", "epsilon", "visited_state"];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(Self::HEADER).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                r.n.to_string(),
                r.gamma.to_string(),
                r.lambda_estimate.to_string(),
                r.epsilon.to_string(),
                r.visited_state.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnResult {
    pub trace: LearnTrace,
    pub q: QTable,
    pub gamma: f64,
    /// Greedy action per product state.
    pub greedy: Vec<usize>,
    /// Action frequencies per base state over the second half of the run.
    pub mixed_policy: Policy,
    /// Final risk-sensitive growth estimate of `k`.
    pub lambda_k_estimate: f64,
    /// `max Γ − min Γ` over the last `tail_window` steps.
    pub gamma_tail_range: f64,
    pub steps: usize,
}

pub fn run_two_timescale(m: &Mdp, cfg: &LearnerConfig) -> Result<LearnResult> {
    cfg.validate(m)?;
    if !m.has_constraint() {
        return Err(Error::MissingConstraint);
    }
    let theta = match cfg.theta {
        Some(t) => t,
        None => m.constraint_bound()?,
    };
    let n = m.n_states();
    let na = m.n_actions();
    let c = m.cost_table(crate::CostTag::Primary)?;
    let k = m.cost_table(crate::CostTag::Constraint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut qt = QTable::new(n * n, na, cfg.gamma0, cfg.i_ref, cfg.u_ref);
    let j_ref = cfg.i_ref % n;
    let mut w = vec![1.0; n];
    let mut state = (cfg.i_ref / n, j_ref);
    let mut trace = LearnTrace::default();
    let mut counts = vec![vec![0u64; na]; n];
    let tail_from = cfg.max_steps.saturating_sub(cfg.tail_window);
    let (mut g_lo, mut g_hi) = (f64::INFINITY, f64::NEG_INFINITY);

    for step in 0..cfg.max_steps {
        let s = state.0 * n + state.1;
        let u = if rng.random::<f64>() < cfg.epsilon { rng.random_range(0..na) } else { qt.greedy(s) };
        let next = simulate_product_step(m, state, u, &mut rng);
        let tr = Transition {
            state: s,
            action: u,
            cost: c[state.0][u] + qt.gamma * k[state.1][u],
            next: next.0 * n + next.1,
        };
        rs_q_step(&mut qt, &tr, cfg.fast_stepsize(step));

        let (j, j2) = (state.1, next.1);
        let target = k[j][u].exp() * w[j2] / w[j_ref];
        w[j] += cfg.estimate_stepsize(step) * (target - w[j]);

        if !cfg.freeze_gamma {
            let signal = match cfg.signal {
                ConstraintSignal::RiskSensitive => w[j_ref].ln(),
                ConstraintSignal::StageCost => k[j][u],
            };
            qt.gamma = gamma_step(qt.gamma, signal, theta, cfg.slow_stepsize(step), cfg.gamma_cap);
        }
        if step >= cfg.max_steps / 2 {
            counts[state.0][u] += 1;
        }
        if step >= tail_from {
            g_lo = g_lo.min(qt.gamma);
            g_hi = g_hi.max(qt.gamma);
        }
        state = next;
        if (step + 1) % cfg.trace_every == 0 {
            trace.rows.push(TraceRow {
                n: step + 1,
                gamma: qt.gamma,
                lambda_estimate: qt.lambda_estimate(),
                epsilon: cfg.epsilon,
                visited_state: state.0 * n + state.1,
            });
        }
    }

    let mixed = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                vec![1.0 / na as f64; na]
            } else {
                row.iter().map(|&x| x as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok(LearnResult {
        trace,
        greedy: (0..n * n).map(|s| qt.greedy(s)).collect(),
        gamma: qt.gamma,
        q: qt,
        mixed_policy: Policy::Randomized(mixed),
        lambda_k_estimate: w[j_ref].ln(),
        gamma_tail_range: g_hi - g_lo,
        steps: cfg.max_steps,
    })
}
