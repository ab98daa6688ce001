//! Problem definition: finite state/action sets, the controlled kernel,
//! the running cost and the optional constraint cost with its bound.
//!
//! All costs are in natural-log units: a growth rate of `x` means the
//! exponentiated cumulative cost grows like `e^{N x}`.

use std::borrow::Cow;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums and policy rows.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Transition entries at or below this are structural zeros.
pub const SUPPORT_EPS: f64 = 1e-15;

/// Which per-stage cost a computation runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostTag {
    /// The running cost `c`.
    Primary,
    /// The constraint cost `k`.
    Constraint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// Flat `[i][u][j]`.
    p: Vec<f64>,
    /// Flat `[i][u]`.
    c: Vec<f64>,
    k: Option<Vec<f64>>,
    bound: Option<f64>,
    state_names: Option<Vec<String>>,
    action_names: Option<Vec<String>>,
}

impl Mdp {
    /// Builds and validates a model from nested `p[i][u][j]` and `c[i][u]`.
    pub fn new(p: Vec<Vec<Vec<f64>>>, c: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_constraint(p, c, None, None)
    }

    pub fn with_constraint(
        p: Vec<Vec<Vec<f64>>>,
        c: Vec<Vec<f64>>,
        k: Option<Vec<Vec<f64>>>,
        bound: Option<f64>,
    ) -> Result<Self> {
        let n_states = p.len();
        if n_states == 0 {
            return Err(Error::Validation("model needs at least one state".into()));
        }
        let n_actions = p[0].len();
        if n_actions == 0 {
            return Err(Error::Validation("model needs at least one action".into()));
        }
        let mut flat_p = Vec::with_capacity(n_states * n_actions * n_states);
        for (i, rows) in p.iter().enumerate() {
            if rows.len() != n_actions {
                return Err(Error::Validation(format!("p[{i}] has {} actions, expected {n_actions}", rows.len())));
            }
            for (u, row) in rows.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::Validation(format!(
                        "p[{i}][{u}] has length {}, expected {n_states}",
                        row.len()
                    )));
                }
                flat_p.extend_from_slice(row);
            }
        }
        let flat_c = flatten_cost("cost", &c, n_states, n_actions)?;
        let flat_k = k.as_ref().map(|k| flatten_cost("constraint_cost", k, n_states, n_actions)).transpose()?;
        let m =
            Mdp { n_states, n_actions, p: flat_p, c: flat_c, k: flat_k, bound, state_names: None, action_names: None };
        m.validate()?;
        Ok(m)
    }

    pub fn with_names(mut self, states: Option<Vec<String>>, actions: Option<Vec<String>>) -> Result<Self> {
        if let Some(s) = &states {
            if s.len() != self.n_states {
                return Err(Error::Validation(format!("{} state names for {} states", s.len(), self.n_states)));
            }
        }
        if let Some(a) = &actions {
            if a.len() != self.n_actions {
                return Err(Error::Validation(format!("{} action names for {} actions", a.len(), self.n_actions)));
            }
        }
        self.state_names = states;
        self.action_names = actions;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.n_states {
            for u in 0..self.n_actions {
                let row = self.p_row(i, u);
                let mut sum = 0.0;
                for (j, &x) in row.iter().enumerate() {
                    if !x.is_finite() || x < 0.0 {
                        return Err(Error::Validation(format!("p[{i}][{u}][{j}] = {x} is not a probability")));
                    }
                    sum += x;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::Validation(format!("row p[{i}][{u}] sums to {sum}, not 1")));
                }
                let cost = self.c[i * self.n_actions + u];
                if !cost.is_finite() {
                    return Err(Error::Validation(format!("cost[{i}][{u}] = {cost} is not finite")));
                }
                if let Some(k) = &self.k {
                    let kv = k[i * self.n_actions + u];
                    if !kv.is_finite() {
                        return Err(Error::Validation(format!("constraint_cost[{i}][{u}] = {kv} is not finite")));
                    }
                }
            }
        }
        if let Some(b) = self.bound {
            if self.k.is_none() {
                return Err(Error::Validation("bound given without constraint_cost".into()));
            }
            if !b.is_finite() {
                return Err(Error::Validation(format!("bound {b} is not finite")));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn p_row(&self, i: usize, u: usize) -> &[f64] {
        let start = (i * self.n_actions + u) * self.n_states;
        &self.p[start..start + self.n_states]
    }

    pub fn p(&self, i: usize, u: usize, j: usize) -> f64 {
        self.p[(i * self.n_actions + u) * self.n_states + j]
    }

    pub fn c(&self, i: usize, u: usize) -> f64 {
        self.c[i * self.n_actions + u]
    }

    pub fn k(&self, i: usize, u: usize) -> Option<f64> {
        self.k.as_ref().map(|k| k[i * self.n_actions + u])
    }

    pub fn has_constraint(&self) -> bool {
        self.k.is_some()
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    /// Cost selected by `tag`. Fails only when `k` is requested and absent.
    pub fn cost(&self, tag: CostTag, i: usize, u: usize) -> Result<f64> {
        match tag {
            CostTag::Primary => Ok(self.c(i, u)),
            CostTag::Constraint => self.k(i, u).ok_or(Error::MissingConstraint),
        }
    }

    /// Cost table `[i][u]` for `tag`.
    pub fn cost_table(&self, tag: CostTag) -> Result<Vec<Vec<f64>>> {
        (0..self.n_states).map(|i| (0..self.n_actions).map(|u| self.cost(tag, i, u)).collect()).collect()
    }

    /// The bound `C`, provided both `k` and `C` are present.
    pub fn constraint_bound(&self) -> Result<f64> {
        match (self.k.is_some(), self.bound) {
            (true, Some(b)) => Ok(b),
            _ => Err(Error::MissingConstraint),
        }
    }

    pub fn state_names(&self) -> Option<&[String]> {
        self.state_names.as_deref()
    }

    pub fn action_names(&self) -> Option<&[String]> {
        self.action_names.as_deref()
    }

    /// Returns a copy with every cost (primary and constraint) shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Mdp {
        let mut m = self.clone();
        m.c.iter_mut().for_each(|x| *x += delta);
        if let Some(k) = m.k.as_mut() {
            k.iter_mut().for_each(|x| *x += delta);
        }
        m
    }

    /// Returns a copy with a different primary cost.
    pub fn with_cost(&self, c: Vec<Vec<f64>>) -> Result<Mdp> {
        let mut m = self.clone();
        m.c = flatten_cost("cost", &c, self.n_states, self.n_actions)?;
        m.validate()?;
        Ok(m)
    }

    /// Returns a copy with a different constraint bound.
    pub fn with_bound(&self, bound: f64) -> Result<Mdp> {
        let mut m = self.clone();
        m.bound = Some(bound);
        m.validate()?;
        Ok(m)
    }

    /// Nested `p[i][u][j]`.
    pub fn p_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states).map(|i| (0..self.n_actions).map(|u| self.p_row(i, u).to_vec()).collect()).collect()
    }
}

fn flatten_cost(name: &str, c: &[Vec<f64>], n_states: usize, n_actions: usize) -> Result<Vec<f64>> {
    if c.len() != n_states {
        return Err(Error::Validation(format!("{name} has {} rows, expected {n_states}", c.len())));
    }
    let mut out = Vec::with_capacity(n_states * n_actions);
    for (i, row) in c.iter().enumerate() {
        if row.len() != n_actions {
            return Err(Error::Validation(format!("{name}[{i}] has {} entries, expected {n_actions}", row.len())));
        }
        out.extend_from_slice(row);
    }
    Ok(out)
}

/// `{ j : p[i][u][j] > 0 for some u }`, ascending.
pub fn support_union(m: &Mdp, i: usize) -> Vec<usize> {
    (0..m.n_states()).filter(|&j| (0..m.n_actions()).any(|u| m.p(i, u, j) > SUPPORT_EPS)).collect()
}

/// `{ j : p[i][u][j] > 0 for every u }`, ascending.
pub fn support_common(m: &Mdp, i: usize) -> Vec<usize> {
    (0..m.n_states()).filter(|&j| (0..m.n_actions()).all(|u| m.p(i, u, j) > SUPPORT_EPS)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Deterministic(Vec<usize>),
    Randomized(Vec<Vec<f64>>),
}

impl Policy {
    pub fn uniform(m: &Mdp) -> Policy {
        let w = 1.0 / m.n_actions() as f64;
        Policy::Randomized(vec![vec![w; m.n_actions()]; m.n_states()])
    }

    pub fn validate(&self, m: &Mdp) -> Result<()> {
        match self {
            Policy::Deterministic(a) => {
                if a.len() != m.n_states() {
                    return Err(Error::Validation(format!(
                        "policy has {} states, model has {}",
                        a.len(),
                        m.n_states()
                    )));
                }
                if let Some((i, &u)) = a.iter().enumerate().find(|(_, &u)| u >= m.n_actions()) {
                    return Err(Error::Validation(format!("policy action {u} at state {i} out of range")));
                }
            }
            Policy::Randomized(y) => {
                if y.len() != m.n_states() {
                    return Err(Error::Validation(format!(
                        "policy has {} states, model has {}",
                        y.len(),
                        m.n_states()
                    )));
                }
                for (i, row) in y.iter().enumerate() {
                    if row.len() != m.n_actions() {
                        return Err(Error::Validation(format!("policy row {i} has wrong length")));
                    }
                    if let Some(u) = row.iter().position(|&x| !x.is_finite() || x < 0.0) {
                        return Err(Error::Validation(format!("policy weight y[{i}][{u}] is negative")));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > STOCHASTIC_TOL {
                        return Err(Error::Validation(format!("policy row {i} sums to {s}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        match self {
            Policy::Deterministic(a) => a.len(),
            Policy::Randomized(y) => y.len(),
        }
    }

    /// Action weights at state `i`.
    pub fn weights(&self, i: usize, n_actions: usize) -> Cow<'_, [f64]> {
        match self {
            Policy::Deterministic(a) => {
                let mut w = vec![0.0; n_actions];
                w[a[i]] = 1.0;
                Cow::Owned(w)
            }
            Policy::Randomized(y) => Cow::Borrowed(&y[i]),
        }
    }

    pub fn to_randomized(&self, n_actions: usize) -> Policy {
        match self {
            Policy::Deterministic(_) => {
                Policy::Randomized((0..self.n_states()).map(|i| self.weights(i, n_actions).into_owned()).collect())
            }
            Policy::Randomized(_) => self.clone(),
        }
    }

    /// Most likely action per state; ties go to the lowest index.
    pub fn argmax_actions(&self) -> Vec<usize> {
        match self {
            Policy::Deterministic(a) => a.clone(),
            Policy::Randomized(y) => y
                .iter()
                .map(|row| {
                    let mut best = 0;
                    for (u, &w) in row.iter().enumerate() {
                        if w > row[best] {
                            best = u;
                        }
                    }
                    best
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Labels {
    Count(usize),
    Names(Vec<String>),
}

impl Labels {
    fn len(&self) -> usize {
        match self {
            Labels::Count(n) => *n,
            Labels::Names(v) => v.len(),
        }
    }

    fn names(&self) -> Option<Vec<String>> {
        match self {
            Labels::Count(_) => None,
            Labels::Names(v) => Some(v.clone()),
        }
    }
}

/// On-disk problem schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub states: Labels,
    pub actions: Labels,
    pub p: Vec<Vec<Vec<f64>>>,
    pub cost: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_cost: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

impl ProblemFile {
    pub fn into_mdp(self) -> Result<Mdp> {
        if self.p.len() != self.states.len() {
            return Err(Error::Validation(format!(
                "states declares {} states but p has {}",
                self.states.len(),
                self.p.len()
            )));
        }
        if let Some(row) = self.p.first() {
            if row.len() != self.actions.len() {
                return Err(Error::Validation(format!(
                    "actions declares {} actions but p[0] has {}",
                    self.actions.len(),
                    row.len()
                )));
            }
        }
        let states = self.states.names();
        let actions = self.actions.names();
        Mdp::with_constraint(self.p, self.cost, self.constraint_cost, self.bound)?.with_names(states, actions)
    }

    pub fn from_mdp(m: &Mdp) -> Self {
        let labels = |names: Option<&[String]>, n: usize| match names {
            Some(v) => Labels::Names(v.to_vec()),
            None => Labels::Count(n),
        };
        ProblemFile {
            states: labels(m.state_names(), m.n_states()),
            actions: labels(m.action_names(), m.n_actions()),
            p: m.p_nested(),
            cost: m.cost_table(CostTag::Primary).expect("primary cost always present"),
            constraint_cost: m.cost_table(CostTag::Constraint).ok(),
            bound: m.bound(),
        }
    }
}

pub fn parse_problem(text: &str) -> Result<Mdp> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_mdp()
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<Mdp> {
    let text = std::fs::read_to_string(path)?;
    parse_problem(&text)
}

pub fn problem_to_json(m: &Mdp) -> String {
    serde_json::to_string_pretty(&ProblemFile::from_mdp(m)).expect("problem serializes")
}

pub fn save_problem(m: &Mdp, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, problem_to_json(m))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle() -> Mdp {
        Mdp::new(vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]], vec![vec![0.2], vec![0.8]]).unwrap()
    }

    #[test]
    fn smallest_instance_loads() {
        let m = parse_problem(r#"{"states":1,"actions":1,"p":[[[1.0]]],"cost":[[0.5]]}"#).unwrap();
        assert_eq!(m.n_states(), 1);
        assert_eq!(m.c(0, 0), 0.5);
    }

    #[test]
    fn non_stochastic_row_names_index() {
        let err =
            parse_problem(r#"{"states":2,"actions":1,"p":[[[0.5,0.5]],[[0.49,0.49]]],"cost":[[0],[0]]}"#).unwrap_err();
        match err {
            Error::Validation(msg) => assert!(msg.contains("p[1][0]"), "{msg}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn bound_without_constraint_cost_rejected() {
        let err = parse_problem(r#"{"states":1,"actions":1,"p":[[[1.0]]],"cost":[[0.5]],"bound":1.0}"#).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_problem("{not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let err = parse_problem(r#"{"states":2,"actions":1,"p":[[[1.0]]],"cost":[[0.5]]}"#).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn names_round_trip() {
        let text = r#"{"states":["a","b"],"actions":["x"],"p":[[[0,1]],[[1,0]]],"cost":[[0.1],[0.2]],
            "constraint_cost":[[1],[2]],"bound":0.25}"#;
        let m = parse_problem(text).unwrap();
        let back = parse_problem(&problem_to_json(&m)).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.state_names().unwrap(), ["a", "b"]);
    }

    #[test]
    fn support_union_reads_off_p() {
        let m = cycle();
        assert_eq!(support_union(&m, 0), vec![1]);
        assert_eq!(support_union(&m, 1), vec![0]);
        let u = Mdp::new(vec![vec![vec![0.25; 4]]; 4], vec![vec![0.0]; 4]).unwrap();
        assert_eq!(support_union(&u, 2), vec![0, 1, 2, 3]);
    }

    #[test]
    fn tiny_entries_are_structural_zeros() {
        let m = Mdp::new(vec![vec![vec![1.0 - 1e-16, 1e-16]], vec![vec![0.5, 0.5]]], vec![vec![0.0]; 2]).unwrap();
        assert_eq!(support_union(&m, 0), vec![0]);
    }

    #[test]
    fn deterministic_policy_round_trips_through_randomized() {
        let d = Policy::Deterministic(vec![1, 0, 2]);
        let r = d.to_randomized(3);
        assert_eq!(r.argmax_actions(), vec![1, 0, 2]);
    }

    #[test]
    fn policy_validation() {
        let m = cycle();
        assert!(Policy::Randomized(vec![vec![1.0], vec![0.9]]).validate(&m).is_err());
        assert!(Policy::Deterministic(vec![0, 1]).validate(&m).is_err());
        assert!(Policy::Deterministic(vec![0, 0]).validate(&m).is_ok());
    }
}
