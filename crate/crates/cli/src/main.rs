use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rskit::constrained::{subgradient_ascent, AscentConfig};
use rskit::dp::{relative_value_iteration, verify_multichain, verify_multichain_with};
use rskit::game_lp::{solve_with_config, GenerationConfig};
use rskit::learn::{run_two_timescale, LearnerConfig};
use rskit::model::parse_problem;
use rskit::oracle::{constrained_grid_search, enumerate_policies, growth_rate_estimate};
use rskit::spectral::evaluate_policy_with;
use rskit::{CostTag, Error, Execution, Mdp, Policy};

mod report;

use report::{digest_json, RunReport};

#[derive(Parser)]
#[command(name = "rskit", version, about = "Risk-sensitive control of finite Markov decision processes")]
struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sections (1 runs sequentially).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ProblemArg {
    #[arg(long)]
    problem: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    C,
    K,
}

impl From<CostArg> for CostTag {
    fn from(c: CostArg) -> CostTag {
        match c {
            CostArg::C => CostTag::Primary,
            CostArg::K => CostTag::Constraint,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Dp,
    Lp,
}

#[derive(Subcommand)]
enum Command {
    /// Per-state growth rates of a fixed policy.
    Eval {
        #[command(flatten)]
        problem: ProblemArg,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_enum, default_value = "c")]
        cost: CostArg,
    },
    /// Optimal growth rate by value iteration or the game LP.
    Solve {
        #[command(flatten)]
        problem: ProblemArg,
        #[arg(long, value_enum, default_value = "lp")]
        mode: Mode,
        #[arg(long, default_value_t = 1e-7)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        max_rounds: usize,
    },
    /// Lagrangian ascent for the constrained problem.
    Constrained {
        #[command(flatten)]
        problem: ProblemArg,
        #[arg(long, default_value_t = 0.0)]
        gamma0: f64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        a0: f64,
        /// Trace CSV; defaults to the problem path with `.constrained.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Brute-force references.
    Oracle {
        #[command(flatten)]
        problem: ProblemArg,
        /// Finite-horizon growth estimate under `--policy` (uniform if absent).
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Enumerate all deterministic policies.
        #[arg(long)]
        enumerate: bool,
        /// Constrained grid search with this mesh.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Two-timescale learning for the constrained problem.
    Learn {
        #[command(flatten)]
        problem: ProblemArg,
        #[arg(long, default_value_t = 1_000_000)]
        steps: usize,
        /// Constraint level; defaults to the problem's bound.
        #[arg(long)]
        theta: Option<f64>,
        /// Trace CSV; defaults to the problem path with `.learn.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

struct Loaded {
    mdp: Mdp,
    digest: String,
}

fn load(p: &ProblemArg) -> rskit::Result<Loaded> {
    let text = std::fs::read_to_string(&p.problem)?;
    let digest = digest_json(&text).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(Loaded { mdp: parse_problem(&text)?, digest })
}

/// Accepts `{"deterministic": [..]}` / `{"randomized": [[..]]}` or a bare
/// array of actions / of weight rows.
fn load_policy(path: &Path, m: &Mdp) -> rskit::Result<Policy> {
    let text = std::fs::read_to_string(path)?;
    let pol = serde_json::from_str::<Policy>(&text)
        .or_else(|_| serde_json::from_str::<Vec<usize>>(&text).map(Policy::Deterministic))
        .or_else(|_| serde_json::from_str::<Vec<Vec<f64>>>(&text).map(Policy::Randomized))
        .map_err(|e| Error::Parse(format!("policy file: {e}")))?;
    pol.validate(m)?;
    Ok(pol)
}

fn default_trace(problem: &Path, suffix: &str) -> PathBuf {
    problem.with_extension(suffix)
}

fn weights(p: &Policy, m: &Mdp) -> Vec<Vec<f64>> {
    (0..m.n_states()).map(|i| p.weights(i, m.n_actions()).into_owned()).collect()
}

type Outcome = (Value, Value, Value);

fn run(cli: &Cli, exec: Execution) -> rskit::Result<(String, String, Outcome)> {
    match &cli.command {
        Command::Eval { problem, policy, cost } => {
            let l = load(problem)?;
            let pol = load_policy(policy, &l.mdp)?;
            let tag = CostTag::from(*cost);
            let r = evaluate_policy_with(&l.mdp, &pol, tag, exec)?;
            let params = json!({ "policy": policy, "cost": tag_name(tag) });
            let results = json!({
                "lambda": r.lambda,
                "classes": r.classes,
                "class_log_rho": r.class_log_rho,
                "partition": r.partition,
            });
            Ok(("eval".into(), l.digest, (params, results, json!({ "classes": r.classes.len() }))))
        }
        Command::Solve { problem, mode, eps, max_rounds } => {
            let l = load(problem)?;
            let m = &l.mdp;
            match mode {
                Mode::Dp => {
                    let s = relative_value_iteration(m, CostTag::Primary, *eps, 100_000)?;
                    let rep = verify_multichain(m, &s.psi, &s.v, 1e-9);
                    let params = json!({ "mode": "dp", "eps": eps, "max_rounds": max_rounds });
                    let results = json!({
                        "psi": s.psi,
                        "v": s.v,
                        "policy": weights(&s.policy, m),
                        "lambda_star": s.lambda_star,
                        "multichain": rep,
                    });
                    let stats = json!({ "iterations": s.iterations, "residual": s.residual });
                    Ok(("solve".into(), l.digest, (params, results, stats)))
                }
                Mode::Lp => {
                    let cfg = GenerationConfig { eps: *eps, max_rounds: *max_rounds, exec };
                    let s = solve_with_config(m, CostTag::Primary, None, &cfg)?;
                    let pol = s.policy();
                    let rep = verify_multichain_with(m, CostTag::Primary, &s.beta, &s.v, Some(&pol), 1e-9);
                    let params = json!({ "mode": "lp", "eps": eps, "max_rounds": max_rounds });
                    let results = json!({
                        "beta": s.beta,
                        "v": s.v,
                        "policy": s.y,
                        "lambda_star": s.lambda_star(),
                        "gap": s.gap,
                        "multichain": rep,
                    });
                    let stats = json!({
                        "rounds": s.rounds,
                        "candidates": s.candidates.len(),
                        "max_violation": s.max_violation,
                        "primal_residual": s.primal_residual,
                    });
                    Ok(("solve".into(), l.digest, (params, results, stats)))
                }
            }
        }
        Command::Constrained { problem, gamma0, steps, a0, trace } => {
            let l = load(problem)?;
            let cfg = AscentConfig {
                gamma0: *gamma0,
                a0: *a0,
                max_steps: *steps,
                generation: GenerationConfig { exec, ..Default::default() },
                ..Default::default()
            };
            let res = subgradient_ascent(&l.mdp, &cfg)?;
            let path = trace.clone().unwrap_or_else(|| default_trace(&problem.problem, "constrained.csv"));
            res.trace.write_csv(std::fs::File::create(&path)?)?;
            let params = json!({ "gamma0": gamma0, "steps": steps, "a0": a0 });
            let results = json!({
                "gamma": res.gamma,
                "converged": res.converged,
                "lp_policy": weights(&res.lp_policy, &l.mdp),
                "recovered": {
                    "policy": weights(&res.recovered.policy, &l.mdp),
                    "t": res.recovered.t,
                    "objective_value": res.recovered.objective_value,
                    "constraint_value": res.recovered.constraint_value,
                    "feasible": res.recovered.feasible,
                },
                "trace": path,
            });
            let stats = json!({ "steps": res.trace.steps.len() });
            Ok(("constrained".into(), l.digest, (params, results, stats)))
        }
        Command::Oracle { problem, horizon, policy, enumerate, grid } => {
            let l = load(problem)?;
            let m = &l.mdp;
            let mut results = serde_json::Map::new();
            if let Some(h) = horizon {
                let pol = match policy {
                    Some(p) => load_policy(p, m)?,
                    None => Policy::uniform(m),
                };
                results.insert(
                    "growth".into(),
                    serde_json::to_value(growth_rate_estimate(m, &pol, CostTag::Primary, *h)?).unwrap(),
                );
            }
            if *enumerate {
                let e = enumerate_policies(m, CostTag::Primary, exec)?;
                results.insert(
                    "enumeration".into(),
                    json!({
                        "lambda_star": e.lambda_star,
                        "min_per_state": e.min_per_state,
                        "argmin": e.argmin,
                        "n_policies": e.n_policies,
                    }),
                );
            }
            if let Some(mesh) = grid {
                results.insert("grid".into(), serde_json::to_value(constrained_grid_search(m, *mesh, exec)?).unwrap());
            }
            if results.is_empty() {
                return Err(Error::Validation("oracle needs at least one of --horizon, --enumerate, --grid".into()));
            }
            let params = json!({ "horizon": horizon, "policy": policy, "enumerate": enumerate, "grid": grid });
            Ok(("oracle".into(), l.digest, (params, Value::Object(results), json!({}))))
        }
        Command::Learn { problem, steps, theta, trace } => {
            let l = load(problem)?;
            let m = &l.mdp;
            let cfg = LearnerConfig { seed: cli.seed, max_steps: *steps, theta: *theta, ..Default::default() };
            let res = run_two_timescale(m, &cfg)?;
            let path = trace.clone().unwrap_or_else(|| default_trace(&problem.problem, "learn.csv"));
            res.trace.write_csv(std::fs::File::create(&path)?)?;
            let lc = evaluate_policy_with(m, &res.mixed_policy, CostTag::Primary, exec)?.lambda;
            let lk = evaluate_policy_with(m, &res.mixed_policy, CostTag::Constraint, exec)?.lambda;
            let params = json!({ "steps": steps, "theta": theta, "config": cfg });
            let results = json!({
                "gamma": res.gamma,
                "lambda_estimate": res.q.lambda_estimate(),
                "lambda_k_estimate": res.lambda_k_estimate,
                "greedy": res.greedy,
                "mixed_policy": weights(&res.mixed_policy, m),
                "mixed_lambda_c": lc,
                "mixed_lambda_k": lk,
                "gamma_tail_range": res.gamma_tail_range,
                "trace": path,
            });
            let stats = json!({ "steps": res.steps, "trace_rows": res.trace.rows.len() });
            Ok(("learn".into(), l.digest, (params, results, stats)))
        }
    }
}

fn tag_name(t: CostTag) -> &'static str {
    match t {
        CostTag::Primary => "c",
        CostTag::Constraint => "k",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let exec = if cli.threads > 1 { Execution::Parallel } else { Execution::Sequential };
    let start = Instant::now();
    let outcome = rskit::par::with_threads(cli.threads, || run(&cli, exec));
    let (command, digest, (mut parameters, results, stats)) = match outcome {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Value::Object(map) = &mut parameters {
        map.insert("seed".into(), json!(cli.seed));
        map.insert("threads".into(), json!(cli.threads));
    }
    let report = RunReport {
        command,
        problem_digest: digest,
        parameters,
        results,
        stats,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &cli.out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, text) {
                eprintln!("error: writing {}: {e}", p.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::SUCCESS
}
