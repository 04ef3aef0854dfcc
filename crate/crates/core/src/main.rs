use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fairdyn::causal::{
    counterfactual_fairness_gap, d_separated, load_model, proxy_discrimination_gap,
    unresolved_discrimination,
};
use fairdyn::metrics::Audit;
use fairdyn::optimize::{
    constrained_policy, max_utility_policy, outcome_optimal_policy, FairnessConstraint,
    DEFAULT_RESOLUTION,
};
use fairdyn::policy::institution_utility;
use fairdyn::report::{fmt_f64, fmt_opt, write_atomic, Table};
use fairdyn::scenarios::{
    compare_interventions, initial_metrics, load_scenario, run_scenario_for, sensitivity_sweep,
};
use fairdyn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fairdyn",
    version,
    about = "Fairness audits and selection dynamics on discrete score populations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Static metric suite on the scenario's initial state.
    Metrics {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario and write its trajectory.
    Simulate {
        #[arg(long)]
        scenario: String,
        /// Number of steps; defaults to the scenario's horizon.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute an optimal policy for the scenario's initial state.
    Optimize {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum, default_value = "none")]
        constraint: ConstraintArg,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: f64,
        /// Group whose score change the `outcome` search maximizes.
        #[arg(long)]
        target: Option<String>,
        /// Minimum institution utility for the `outcome` search.
        #[arg(long, allow_hyphen_values = true)]
        utility_floor: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks on a causal model file.
    Causal {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        check: CausalCheck,
        /// Conditioning set for d-separation.
        #[arg(long, value_delimiter = ',')]
        given: Vec<String>,
        /// Source nodes for d-separation; defaults to the protected attribute.
        #[arg(long, value_delimiter = ',')]
        sources: Vec<String>,
        /// Target nodes for d-separation; defaults to the outcome.
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
        #[arg(long)]
        proxy: Option<String>,
        #[arg(long, value_delimiter = ',')]
        resolving: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare intervention variants, e.g. `none,quota,quota+pipeline`.
    Compare {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_delimiter = ',', required = true)]
        variants: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun the scenario from perturbed initial states.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        draws: usize,
        /// Defaults to the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstraintArg {
    Dp,
    Eo,
    None,
    Outcome,
}

#[derive(Clone, Copy, ValueEnum)]
enum CausalCheck {
    Dsep,
    Cf,
    Unresolved,
    Proxy,
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Metrics { scenario, out } => {
            let cfg = load_scenario(&scenario)?;
            emit(out.as_deref(), &initial_metrics(&cfg)?.to_csv())
        }
        Command::Simulate {
            scenario,
            steps,
            out,
        } => {
            let cfg = load_scenario(&scenario)?;
            let traj = run_scenario_for(&cfg, steps.unwrap_or(cfg.horizon))?;
            emit(out.as_deref(), &traj.to_csv())
        }
        Command::Optimize {
            scenario,
            constraint,
            resolution,
            target,
            utility_floor,
            out,
        } => {
            let cfg = load_scenario(&scenario)?;
            let (pop, outcome, inst) = (&cfg.population, &cfg.outcome, &cfg.institution);
            let policy = match constraint {
                ConstraintArg::None => max_utility_policy(pop, outcome, inst)?,
                ConstraintArg::Dp => {
                    constrained_policy(
                        pop,
                        outcome,
                        inst,
                        FairnessConstraint::DemographicParity,
                        resolution,
                    )?
                    .policy
                }
                ConstraintArg::Eo => {
                    constrained_policy(
                        pop,
                        outcome,
                        inst,
                        FairnessConstraint::EqualOpportunity,
                        resolution,
                    )?
                    .policy
                }
                ConstraintArg::Outcome => {
                    let target =
                        match target {
                            Some(t) => t,
                            None => cfg.pair.as_ref().map(|(_, b)| b.clone()).ok_or_else(|| {
                                Error::Precondition("--target is required".into())
                            })?,
                        };
                    let floor = utility_floor.unwrap_or(f64::NEG_INFINITY);
                    outcome_optimal_policy(pop, outcome, inst, &target, floor, resolution)?.policy
                }
            };
            let mut table = Table::new(vec!["group", "bin", "score", "acceptance"]);
            for g in &pop.groups {
                for (bin, (score, tau)) in pop
                    .grid
                    .scores()
                    .iter()
                    .zip(policy.get(&g.label)?)
                    .enumerate()
                {
                    table.push(vec![
                        g.label.clone(),
                        bin.to_string(),
                        fmt_f64(*score),
                        fmt_f64(*tau),
                    ]);
                }
            }
            let (a, b) = cfg
                .pair
                .clone()
                .ok_or_else(|| Error::Precondition("metrics need at least two groups".into()))?;
            let r = Audit::new(pop, outcome, &policy).report(&a, &b)?;
            let mut summary = Table::new(vec![
                "group_a",
                "group_b",
                "dp_gap",
                "eo_gap",
                "eodds_gap",
                "utility",
            ]);
            summary.push(vec![
                a,
                b,
                fmt_f64(r.dp_gap),
                fmt_opt(r.eo_gap),
                fmt_opt(r.eodds_gap),
                fmt_f64(institution_utility(&policy, pop, outcome, inst)?),
            ]);
            emit(
                out.as_deref(),
                &format!("{}\n{}", table.to_csv(), summary.to_csv()),
            )
        }
        Command::Causal {
            model,
            check,
            given,
            sources,
            targets,
            proxy,
            resolving,
            out,
        } => {
            let m = load_model(&model)?;
            let mut table = Table::new(vec!["check", "result"]);
            let (name, result) = match check {
                CausalCheck::Dsep => {
                    let vars = m.variables();
                    let sources = if sources.is_empty() {
                        vec![vars[m.protected()].name.clone()]
                    } else {
                        sources
                    };
                    let targets = if targets.is_empty() {
                        vec![vars[m.outcome()].name.clone()]
                    } else {
                        targets
                    };
                    let sep = d_separated(&m, &strs(&sources), &strs(&targets), &strs(&given))?;
                    ("d_separated", sep.to_string())
                }
                CausalCheck::Cf => (
                    "counterfactual_gap",
                    fmt_f64(counterfactual_fairness_gap(&m)?),
                ),
                CausalCheck::Unresolved => (
                    "unresolved_discrimination",
                    unresolved_discrimination(&m, &strs(&resolving))?.to_string(),
                ),
                CausalCheck::Proxy => {
                    let proxy =
                        proxy.ok_or_else(|| Error::Precondition("--proxy is required".into()))?;
                    ("proxy_gap", fmt_f64(proxy_discrimination_gap(&m, &proxy)?))
                }
            };
            table.push(vec![name.to_string(), result]);
            emit(out.as_deref(), &table.to_csv())
        }
        Command::Compare {
            scenario,
            variants,
            out,
        } => {
            let cfg = load_scenario(&scenario)?;
            let cmp = compare_interventions(&cfg, &strs(&variants))?;
            emit(out.as_deref(), &cmp.to_csv())
        }
        Command::Sweep {
            scenario,
            eps,
            draws,
            seed,
            out,
        } => {
            let cfg = load_scenario(&scenario)?;
            let report = sensitivity_sweep(&cfg, eps, draws, seed.unwrap_or(cfg.seed))?;
            emit(out.as_deref(), &report.to_csv())?;
            eprintln!(
                "min={} max={} spread={} unreliable={}",
                fmt_f64(report.min),
                fmt_f64(report.max),
                fmt_f64(report.spread),
                report.unreliable
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
