//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Every criterion produces a JSON result block with no timing data in it.
//! The last criterion reruns the others and compares the blocks byte for byte.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use rskit::constrained::{
    psi_of_gamma, solve_constrained, solve_product_lp, subgradient_ascent, verify_combined, AscentConfig, AscentTrace,
    COMBINE_TOL, DANSKIN_TOL,
};
use rskit::dp::{relative_value_iteration, verify_multichain};
use rskit::game_lp::{solve_with_config, GenerationConfig};
use rskit::generate::{
    random_deterministic_policy, random_mdp, random_randomized_policy, random_simplex_point, rng, two_class_mdp,
    with_random_constraint,
};
use rskit::learn::{run_two_timescale, LearnerConfig};
use rskit::oracle::{
    constrained_grid_search, enumerate_policies, grid_max_dv, grid_max_mixture, growth_rate_estimate, mixed_game_value,
};
use rskit::spectral::evaluate_policy;
use rskit::variational::{dv_tilt, mixture_tilt};
use rskit::{CostTag, Execution, Mdp};

use rand::Rng;

const SPECTRAL_TOL: f64 = 3e-3;
const DV_IDENTITY_TOL: f64 = 1e-12;
const DV_GRID_TOL: f64 = 1e-5;
const SOLVER_TOL: f64 = 1e-4;
const GAP_TOL: f64 = 1e-7;
const MULTICHAIN_TOL: f64 = 1e-5;
const OBJECTIVE_TARGET: f64 = 0.72734;
const OBJECTIVE_TOL: f64 = 1e-3;
const Y1_TARGET: f64 = 0.37754;
const Y1_TOL: f64 = 5e-3;
const PRODUCT_TOL: f64 = 1e-5;
const CONCAVITY_TOL: f64 = 1e-8;
const LEARN_TOL: f64 = 0.1;
const GAMMA_RANGE_TOL: f64 = 0.05;

struct Outcome {
    pass: bool,
    summary: String,
    block: Value,
}

fn max_abs(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn benchmark() -> Mdp {
    Mdp::with_constraint(vec![vec![vec![1.0], vec![1.0]]], vec![vec![0.0, 1.0]], Some(vec![vec![1.0, 0.0]]), Some(0.5))
        .unwrap()
}

fn criterion1() -> Outcome {
    let mut worst = 0.0f64;
    let mut errs = Vec::new();
    for seed in 0..20u64 {
        let mut r = rng(100 + seed);
        let n = r.random_range(2..=5);
        let na = r.random_range(2..=3);
        let m = random_mdp(&mut r, n, na);
        for k in 0..5 {
            let pol =
                if k % 2 == 0 { random_deterministic_policy(&mut r, &m) } else { random_randomized_policy(&mut r, &m) };
            let exact = evaluate_policy(&m, &pol, CostTag::Primary).unwrap().lambda;
            let est = growth_rate_estimate(&m, &pol, CostTag::Primary, 4000).unwrap().estimate;
            let e = max_abs(exact.iter().zip(&est).map(|(a, b)| a - b));
            worst = worst.max(e);
            errs.push(e);
        }
    }
    Outcome {
        pass: worst <= SPECTRAL_TOL,
        summary: format!("max |λ − λ̂(4000)| = {worst:.3e} over 100 policies (tol {SPECTRAL_TOL:.0e})"),
        block: json!({ "errors": errs, "worst": worst }),
    }
}

fn criterion2() -> Outcome {
    let mut r = rng(200);
    let (mut id_err, mut dv_slack, mut mix_id_err, mut mix_slack) = (0.0f64, f64::INFINITY, 0.0f64, f64::INFINITY);
    for _ in 0..100 {
        let d = r.random_range(2..=4);
        let p = random_simplex_point(&mut r, d);
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let t = dv_tilt(&p, &v);
        let lse = p.iter().zip(&v).map(|(a, b)| a * b.exp()).sum::<f64>().ln();
        id_err = id_err.max((t.value - lse).abs());
        dv_slack = dv_slack.min(t.value - grid_max_dv(&p, &v, 1000));
    }
    for _ in 0..100 {
        let d = r.random_range(2..=4);
        let na = r.random_range(2..=3);
        let y = random_simplex_point(&mut r, na);
        let rows: Vec<Vec<f64>> = (0..na).map(|_| random_simplex_point(&mut r, d)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|x| x.as_slice()).collect();
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let t = mixture_tilt(&y, &refs, &v).unwrap();
        let closed = (0..d)
            .map(|j| v[j].exp() * rows.iter().zip(&y).map(|(row, w)| row[j].powf(*w)).product::<f64>())
            .sum::<f64>()
            .ln();
        mix_id_err = mix_id_err.max((t.value - closed).abs());
        mix_slack = mix_slack.min(t.value - grid_max_mixture(&y, &refs, &v, 1000));
    }
    let pass = id_err <= DV_IDENTITY_TOL
        && mix_id_err <= DV_IDENTITY_TOL
        && dv_slack >= -DV_GRID_TOL
        && mix_slack >= -DV_GRID_TOL;
    Outcome {
        pass,
        summary: format!(
            "identity err dv {id_err:.1e} mix {mix_id_err:.1e}; min(value − grid) dv {dv_slack:.2e} mix {mix_slack:.2e}"
        ),
        block: json!({ "dv_identity": id_err, "mix_identity": mix_id_err, "dv_slack": dv_slack, "mix_slack": mix_slack }),
    }
}

/// Instances for the unconstrained solver comparison; all have
/// `|A|^|S| ≤ 256` and full-support rows, so every policy is unichain.
fn solver_instances() -> Vec<Mdp> {
    let shapes = [(2, 2), (3, 2), (4, 2), (5, 2), (2, 3), (3, 3), (4, 3), (2, 4), (3, 4), (4, 4)];
    (0..20)
        .map(|k| {
            let (n, na) = shapes[k % shapes.len()];
            random_mdp(&mut rng(300 + k as u64), n, na)
        })
        .collect()
}

struct SolverRun {
    lp_value: f64,
    dp_value: f64,
    enum_value: f64,
    /// Mixed-game oracle value, where it applies (up to three actions).
    mixed_value: Option<f64>,
    recovered_value: f64,
    gap: f64,
    residual: f64,
}

fn solver_runs() -> Vec<SolverRun> {
    let cfg = GenerationConfig::default();
    solver_instances()
        .iter()
        .map(|m| {
            let sol = solve_with_config(m, CostTag::Primary, None, &cfg).unwrap();
            let dp = relative_value_iteration(m, CostTag::Primary, 1e-12, 100_000).unwrap();
            let en = enumerate_policies(m, CostTag::Primary, Execution::Sequential).unwrap();
            let mixed = mixed_game_value(m, CostTag::Primary, 1e-12, 100_000).ok().map(|g| g.value);
            let argmax =
                (0..m.n_states()).max_by(|&a, &b| sol.beta[a].total_cmp(&sol.beta[b]).then(b.cmp(&a))).unwrap();
            let recovered = evaluate_policy(m, &sol.policy(), CostTag::Primary).unwrap().lambda[argmax];
            let rep = verify_multichain(m, &sol.beta, &sol.v, 1e-9);
            SolverRun {
                lp_value: sol.lambda_star(),
                dp_value: dp.lambda_star,
                enum_value: en.lambda_star,
                mixed_value: mixed,
                recovered_value: recovered,
                gap: sol.gap,
                residual: rep.residual,
            }
        })
        .collect()
}

fn criterion3(runs: &[SolverRun]) -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_dp_enum = 0.0f64;
    let mut worst_mixed = 0.0f64;
    let mut failing = 0;
    let mut rows = Vec::new();
    for r in runs {
        let d = [
            (r.lp_value - r.dp_value).abs(),
            (r.lp_value - r.enum_value).abs(),
            (r.dp_value - r.enum_value).abs(),
            (r.recovered_value - r.lp_value).abs(),
        ];
        let e = max_abs(d);
        worst = worst.max(e);
        worst_dp_enum = worst_dp_enum.max(d[2]);
        if let Some(g) = r.mixed_value {
            worst_mixed = worst_mixed.max((r.lp_value - g).abs());
        }
        if e > SOLVER_TOL {
            failing += 1;
        }
        rows.push(json!([r.lp_value, r.dp_value, r.enum_value, r.recovered_value, r.mixed_value]));
    }
    Outcome {
        pass: worst <= SOLVER_TOL,
        summary: format!(
            "{failing}/20 instances off by > {SOLVER_TOL:.0e} (worst {worst:.3e}); dp vs enumeration {worst_dp_enum:.1e}; \
             LP vs mixed-game oracle {worst_mixed:.1e}"
        ),
        block: json!({ "lp_dp_enum_recovered_mixed": rows }),
    }
}

fn ascent_benchmark() -> (rskit::constrained::AscentResult, Value) {
    let m = benchmark();
    let res = subgradient_ascent(&m, &AscentConfig::default()).unwrap();
    let grid = constrained_grid_search(&m, 1000, Execution::Parallel).unwrap().best.unwrap();
    let block = json!({
        "gamma": res.gamma,
        "objective": res.recovered.objective_value,
        "constraint": res.recovered.constraint_value,
        "y": res.recovered.policy.weights(0, 2),
        "grid_objective": grid.objective,
        "grid_y": grid.policy.weights(0, 2),
    });
    (res, block)
}

fn criterion4(runs: &[SolverRun], trace: &AscentTrace) -> Outcome {
    let unc = runs.iter().map(|r| r.gap).fold(0.0, f64::max);
    let con = trace.steps.iter().map(|s| (s.primal_obj - s.dual_obj).abs()).fold(0.0, f64::max);
    Outcome {
        pass: unc <= GAP_TOL && con <= GAP_TOL,
        summary: format!(
            "max gap {unc:.1e} over {} unconstrained solves, {con:.1e} over {} constrained solves",
            runs.len(),
            trace.steps.len()
        ),
        block: json!({ "unconstrained": unc, "constrained": con }),
    }
}

fn criterion5(runs: &[SolverRun]) -> Outcome {
    let generic = runs.iter().map(|r| r.residual).fold(0.0, f64::max);
    let cfg = GenerationConfig::default();
    let mut class_rows = Vec::new();
    let mut classes_ok = true;
    let mut class_residual = 0.0f64;
    for (k, &(a, b, t)) in [(2, 2, 1), (1, 2, 1), (2, 1, 2)].iter().enumerate() {
        let m = two_class_mdp(&mut rng(500 + k as u64), a, b, t, 2);
        let sol = solve_with_config(&m, CostTag::Primary, None, &cfg).unwrap();
        let rep = verify_multichain(&m, &sol.beta, &sol.v, 1e-9);
        let ba = sol.beta[0];
        let bb = sol.beta[a];
        let split = (ba - bb).abs() > 1e-6 && rep.partition.len() >= 2;
        classes_ok &= split;
        class_residual = class_residual.max(rep.residual);
        class_rows.push(json!({ "beta": sol.beta, "cells": rep.partition.len(), "residual": rep.residual }));
    }
    Outcome {
        pass: generic < MULTICHAIN_TOL && class_residual < MULTICHAIN_TOL && classes_ok,
        summary: format!(
            "residual {generic:.3e} on solver instances, {class_residual:.3e} on 2-class instances; \
             β split across classes: {classes_ok}"
        ),
        block: json!({ "generic": generic, "two_class": class_rows }),
    }
}

fn criterion6(res: &rskit::constrained::AscentResult, block: &Value) -> Outcome {
    let obj = res.recovered.objective_value;
    let y1 = res.recovered.policy.weights(0, 2)[0];
    let grid_obj = block["grid_objective"].as_f64().unwrap();
    let grid_y1 = block["grid_y"][0].as_f64().unwrap();
    let pass = (obj - OBJECTIVE_TARGET).abs() <= OBJECTIVE_TOL
        && (y1 - Y1_TARGET).abs() <= Y1_TOL
        && (grid_obj - OBJECTIVE_TARGET).abs() <= OBJECTIVE_TOL
        && (grid_y1 - Y1_TARGET).abs() <= Y1_TOL;
    Outcome {
        pass,
        summary: format!("objective {obj:.5} y₁ {y1:.5} (grid {grid_obj:.5} / {grid_y1:.3}), Γ = {:.4}", res.gamma),
        block: block.clone(),
    }
}

fn criterion7() -> Outcome {
    let cfg = GenerationConfig::default();
    let mut worst = 0.0f64;
    let mut combine = 0.0f64;
    let mut errors = 0;
    let mut rows = Vec::new();
    for k in 0..5u64 {
        let mut r = rng(700 + k);
        let n = 2 + (k as usize % 2);
        let base = random_mdp(&mut r, n, 2);
        let m = with_random_constraint(&mut r, &base, 0.5);
        for &g in &[0.0, 0.5, 1.0] {
            let sol = solve_constrained(&m, g, &cfg).unwrap();
            match verify_combined(&m, &sol, COMBINE_TOL) {
                Ok(v) => combine = combine.max(v),
                Err(_) => errors += 1,
            }
            let p = solve_product_lp(&m, g, &sol.candidates, sol.candidates_k.as_ref().unwrap()).unwrap();
            let target =
                n as f64 * (sol.beta.iter().sum::<f64>() + g * sol.beta_k.as_ref().unwrap().iter().sum::<f64>());
            worst = worst.max((p.objective - target).abs());
            rows.push(json!([p.objective, target]));
        }
    }
    Outcome {
        pass: worst <= PRODUCT_TOL && combine <= COMBINE_TOL && errors == 0,
        summary: format!(
            "max |product − Σ(β+Γβ′)| = {worst:.2e}, combined residual {combine:.1e}, {errors} violations"
        ),
        block: json!({ "product_vs_sum": rows, "combined": combine }),
    }
}

fn criterion8(bench_trace: &AscentTrace) -> Outcome {
    let cfg = GenerationConfig::default();
    let mut traces = vec![(benchmark(), bench_trace.clone())];
    for k in 0..3u64 {
        let mut r = rng(800 + k);
        let base = random_mdp(&mut r, 2, 2);
        let m = with_random_constraint(&mut r, &base, 0.45);
        let res = subgradient_ascent(&m, &AscentConfig { max_steps: 30, ..Default::default() }).unwrap();
        traces.push((m, res.trace));
    }
    let mut danskin = 0.0f64;
    let mut concavity = f64::INFINITY;
    let mut checks = 0;
    for (m, trace) in &traces {
        for s in &trace.steps {
            danskin = danskin.max((s.subgrad - s.subgrad_dual).abs());
        }
        // Distinct consecutive iterates only; the single-state trace revisits a few points.
        let mut seen: Vec<(f64, f64)> = Vec::new();
        for w in trace.steps.windows(2) {
            let (a, b) = (w[0].gamma, w[1].gamma);
            if (a - b).abs() < 1e-9 || seen.iter().any(|&(x, y)| (x - a).abs() < 1e-12 && (y - b).abs() < 1e-12) {
                continue;
            }
            seen.push((a, b));
            if seen.len() > 40 {
                break;
            }
            let mid = psi_of_gamma(m, 0.5 * (a + b), &cfg).unwrap().psi;
            concavity = concavity.min(mid - 0.5 * (w[0].psi + w[1].psi));
            checks += 1;
        }
    }
    Outcome {
        pass: concavity >= -CONCAVITY_TOL && danskin <= DANSKIN_TOL,
        summary: format!(
            "min midpoint excess {concavity:.2e} over {checks} pairs, max Danskin gap {danskin:.1e} over {} steps",
            traces.iter().map(|t| t.1.steps.len()).sum::<usize>()
        ),
        block: json!({ "concavity": concavity, "danskin": danskin, "checks": checks }),
    }
}

fn criterion9() -> Outcome {
    let m = benchmark();
    let res = run_two_timescale(&m, &LearnerConfig { seed: 0, max_steps: 1_000_000, ..Default::default() }).unwrap();
    let lc = evaluate_policy(&m, &res.mixed_policy, CostTag::Primary).unwrap().lambda[0];
    let lk = evaluate_policy(&m, &res.mixed_policy, CostTag::Constraint).unwrap().lambda[0];
    let grid = constrained_grid_search(&m, 1000, Execution::Parallel).unwrap().best.unwrap();
    let (gc, gk) = (grid.lambda_c[0], grid.lambda_k[0]);
    let dist = (lc - gc).abs().max((lk - gk).abs());
    Outcome {
        pass: dist <= LEARN_TOL && res.gamma_tail_range < GAMMA_RANGE_TOL,
        summary: format!(
            "(λ_c, λ_k) = ({lc:.4}, {lk:.4}) vs grid ({gc:.4}, {gk:.4}), Γ = {:.4}, tail range {:.2e}",
            res.gamma, res.gamma_tail_range
        ),
        block: json!({
            "lambda_c": lc,
            "lambda_k": lk,
            "gamma": res.gamma,
            "tail_range": res.gamma_tail_range,
            "mixed": res.mixed_policy.weights(0, 2),
            "trace_last": res.trace.rows.last().map(|r| r.lambda_estimate),
        }),
    }
}

struct Line {
    outcome: Outcome,
    elapsed: Duration,
    budget: Option<Duration>,
}

fn run_all() -> Vec<Line> {
    let mut lines = Vec::new();
    let timed = |f: &mut dyn FnMut() -> Outcome, budget: Option<u64>| {
        let t = Instant::now();
        let outcome = f();
        Line { outcome, elapsed: t.elapsed(), budget: budget.map(Duration::from_secs) }
    };
    lines.push(timed(&mut criterion1, Some(10)));
    lines.push(timed(&mut criterion2, None));
    let t = Instant::now();
    let runs = solver_runs();
    let solve_time = t.elapsed();
    let mut l3 = timed(&mut || criterion3(&runs), Some(60));
    l3.elapsed += solve_time;
    let t = Instant::now();
    let (asc, asc_block) = ascent_benchmark();
    let asc_time = t.elapsed();
    let l4 = timed(&mut || criterion4(&runs, &asc.trace), None);
    let l5 = timed(&mut || criterion5(&runs), None);
    let mut l6 = timed(&mut || criterion6(&asc, &asc_block), Some(30));
    l6.elapsed += asc_time;
    lines.extend([l3, l4, l5, l6]);
    lines.push(timed(&mut criterion7, None));
    lines.push(timed(&mut || criterion8(&asc.trace), None));
    lines.push(timed(&mut criterion9, Some(120)));
    lines
}

fn main() {
    let first = run_all();
    let mut all_pass = true;
    for (k, line) in first.iter().enumerate() {
        let in_time = line.budget.is_none_or(|b| line.elapsed <= b);
        let pass = line.outcome.pass && in_time;
        all_pass &= pass;
        let budget = line.budget.map(|b| format!(" / budget {}s", b.as_secs())).unwrap_or_default();
        println!(
            "criterion {:>2}: {}  {}  [{:.2}s{budget}]",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            line.outcome.summary,
            line.elapsed.as_secs_f64()
        );
    }
    let second = run_all();
    let differing: Vec<usize> = first
        .iter()
        .zip(&second)
        .enumerate()
        .filter(|(_, (a, b))| a.outcome.block != b.outcome.block)
        .map(|(k, _)| k + 1)
        .collect();
    let deterministic = differing.is_empty();
    all_pass &= deterministic;
    println!(
        "criterion 10: {}  {}",
        if deterministic { "PASS" } else { "FAIL" },
        if deterministic {
            "criteria 1-9 rerun with the same seeds give byte-identical result blocks".to_string()
        } else {
            format!("result blocks differ on rerun for criteria {differing:?}")
        }
    );
    if !all_pass {
        std::process::exit(1);
    }
}
