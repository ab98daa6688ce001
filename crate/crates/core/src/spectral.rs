//! Exact risk-sensitive evaluation of a fixed stationary policy.
//!
//! Under a (possibly randomized) stationary policy the exponentiated
//! cumulative cost evolves multiplicatively through the kernel
//! `a[i][j] = Σ_u y_i(u) e^{c(i,u)} p(j|i,u)`. The per-state growth rate is
//! the log Perron root of the largest class reachable from that state in
//! the condensation of `a`'s support graph.

use crate::error::{Error, Result};
use crate::model::{CostTag, Mdp, Policy, SUPPORT_EPS};
use crate::par::{map_indexed, Execution};

/// Above this cost the kernel is stored with a common `e^{scale}` factor pulled out.
pub const LOG_DOMAIN_THRESHOLD: f64 = 300.0;

const PERRON_REL_TOL: f64 = 1e-12;
const PERRON_MAX_ITER: usize = 100_000;

/// Tolerance used when grouping states by equal growth rate.
pub const PARTITION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicativeKernel {
    /// Entries of the kernel divided by `e^{log_scale}`.
    pub a: Vec<Vec<f64>>,
    pub log_scale: f64,
    pub cost_tag: CostTag,
}

impl MultiplicativeKernel {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// The kernel from an explicit matrix, no scaling.
    pub fn from_matrix(a: Vec<Vec<f64>>, cost_tag: CostTag) -> Self {
        MultiplicativeKernel { a, log_scale: 0.0, cost_tag }
    }
}

pub fn build_kernel(m: &Mdp, pol: &Policy, cost_tag: CostTag) -> Result<MultiplicativeKernel> {
    pol.validate(m)?;
    let costs = m.cost_table(cost_tag)?;
    let max_c = costs.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_scale = if max_c > LOG_DOMAIN_THRESHOLD { max_c } else { 0.0 };
    let n = m.n_states();
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        let y = pol.weights(i, m.n_actions());
        for (u, &w) in y.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            let f = w * (costs[i][u] - log_scale).exp();
            for (j, x) in row.iter_mut().enumerate() {
                *x += f * m.p(i, u, j);
            }
        }
    }
    Ok(MultiplicativeKernel { a, log_scale, cost_tag })
}

/// Strongly connected components of a support digraph.
#[derive(Debug, Clone, PartialEq)]
pub struct Condensation {
    /// Classes in reverse topological order: every class appears after all
    /// classes reachable from it.
    pub classes: Vec<Vec<usize>>,
    pub class_of: Vec<usize>,
}

impl Condensation {
    /// Distinct successor classes of class `c` (excluding itself).
    pub fn successors(&self, adj: &[Vec<usize>], c: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.classes[c]
            .iter()
            .flat_map(|&i| adj[i].iter().map(|&j| self.class_of[j]))
            .filter(|&d| d != c)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// A class is closed when no edge leaves it.
    pub fn is_closed(&self, adj: &[Vec<usize>], c: usize) -> bool {
        self.successors(adj, c).is_empty()
    }
}

/// Adjacency lists of the support graph of `a` (`a[i][j] > 0`).
pub fn support_graph(a: &[Vec<f64>]) -> Vec<Vec<usize>> {
    a.iter().map(|row| row.iter().enumerate().filter(|(_, &x)| x > SUPPORT_EPS).map(|(j, _)| j).collect()).collect()
}

pub fn scc_condensation(kern: &MultiplicativeKernel) -> Condensation {
    tarjan(&support_graph(&kern.a))
}

/// Iterative Tarjan.
pub fn tarjan(adj: &[Vec<usize>]) -> Condensation {
    let n = adj.len();
    const UNVISITED: usize = usize::MAX;
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut class_of = vec![0; n];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut next = 0;
    // (node, next edge position)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        class_of[w] = classes.len();
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    classes.push(comp);
                }
            }
        }
    }
    Condensation { classes, class_of }
}

/// Period of an irreducible digraph (gcd of cycle lengths).
pub fn period(adj: &[Vec<usize>]) -> usize {
    let n = adj.len();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let mut g = 0usize;
    for v in 0..n {
        for &w in &adj[v] {
            if level[v] != usize::MAX && level[w] != usize::MAX {
                let diff = (level[v] as i64 + 1 - level[w] as i64).unsigned_abs() as usize;
                g = gcd(g, diff);
            }
        }
    }
    g.max(1)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Spectral radius of an irreducible nonnegative matrix.
///
/// Power iteration on `A^d` (`d` the period) from the all-ones vector,
/// stopped when the Collatz–Wielandt bracket `[min (Bx)_i/x_i, max (Bx)_i/x_i]`
/// is relatively tighter than 1e-12.
pub fn perron_root(sub: &[Vec<f64>]) -> Result<f64> {
    let n = sub.len();
    if n == 1 {
        return Ok(sub[0][0]);
    }
    let adj = support_graph(sub);
    let d = period(&adj);
    let mut b = sub.to_vec();
    for _ in 1..d {
        b = mat_mul(&b, sub);
    }
    let mut x = vec![1.0; n];
    let mut last = f64::NAN;
    for _ in 0..PERRON_MAX_ITER {
        let y: Vec<f64> = b.iter().map(|row| row.iter().zip(&x).map(|(a, x)| a * x).sum()).collect();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (yi, xi) in y.iter().zip(&x) {
            let r = yi / xi;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        last = 0.5 * (lo + hi);
        if hi == 0.0 {
            return Ok(0.0);
        }
        if hi - lo <= PERRON_REL_TOL * hi {
            return Ok(last.powf(1.0 / d as f64));
        }
        let top = y.iter().cloned().fold(0.0, f64::max);
        x = y.into_iter().map(|v| v / top).collect();
        if x.iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("power iterate lost positivity; class is not irreducible".into()));
        }
    }
    Err(Error::NonConvergence { what: "perron_root", iterations: PERRON_MAX_ITER, last: last.powf(1.0 / d as f64) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    /// Per-state log-growth rates.
    pub lambda: Vec<f64>,
    pub classes: Vec<Vec<usize>>,
    /// Log Perron root of each class (a singleton class contributes its
    /// diagonal entry; `-inf` when that is zero).
    pub class_log_rho: Vec<f64>,
    /// States grouped by equal growth rate.
    pub partition: Vec<Vec<usize>>,
}

pub fn evaluate_policy(m: &Mdp, pol: &Policy, cost_tag: CostTag) -> Result<SpectralResult> {
    evaluate_policy_with(m, pol, cost_tag, Execution::Sequential)
}

pub fn evaluate_policy_with(m: &Mdp, pol: &Policy, cost_tag: CostTag, exec: Execution) -> Result<SpectralResult> {
    let kern = build_kernel(m, pol, cost_tag)?;
    evaluate_kernel(&kern, exec)
}

pub fn evaluate_kernel(kern: &MultiplicativeKernel, exec: Execution) -> Result<SpectralResult> {
    let adj = support_graph(&kern.a);
    let cond = tarjan(&adj);
    let rhos: Vec<Result<f64>> = map_indexed(cond.classes.len(), exec, |c| {
        let members = &cond.classes[c];
        let sub: Vec<Vec<f64>> = members.iter().map(|&i| members.iter().map(|&j| kern.a[i][j]).collect()).collect();
        perron_root(&sub)
    });
    let mut class_log_rho = Vec::with_capacity(rhos.len());
    for r in rhos {
        class_log_rho.push(r?.ln() + kern.log_scale);
    }
    // Classes come sinks-first, so successors are resolved before use.
    let mut reach = vec![f64::NEG_INFINITY; cond.classes.len()];
    for c in 0..cond.classes.len() {
        let mut best = class_log_rho[c];
        for d in cond.successors(&adj, c) {
            best = best.max(reach[d]);
        }
        reach[c] = best;
    }
    let lambda: Vec<f64> = (0..kern.n()).map(|i| reach[cond.class_of[i]]).collect();
    let partition = partition_by_value(&lambda, PARTITION_TOL);
    Ok(SpectralResult { lambda, classes: cond.classes, class_log_rho, partition })
}

/// Groups indices whose values agree within `tol`, in order of first appearance.
pub fn partition_by_value(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut cells: Vec<(f64, Vec<usize>)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match cells.iter_mut().find(|(rep, _)| (rep - v).abs() <= tol * (1.0 + v.abs())) {
            Some((_, cell)) => cell.push(i),
            None => cells.push((v, vec![i])),
        }
    }
    cells.into_iter().map(|(_, c)| c).collect()
}
