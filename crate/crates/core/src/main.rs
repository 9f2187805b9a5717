use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crpfl::orchestrator::{
    compare_policies, render_svg, resume_experiment, run_experiment, summarize, sweep, ExperimentConfig, MetricsLog,
    PolicyKind, RunInput,
};
use crpfl::Result;

#[derive(Parser)]
#[command(
    name = "crpfl",
    version,
    about = "Conflict-aware client selection for multi-server federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        rounds: Option<u64>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with_all = ["config", "seed", "policy", "rounds"])]
        resume: Option<PathBuf>,
    },
    /// Run every policy for several server counts and compare them.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        servers: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<PolicyKind>>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        #[arg(long)]
        rounds: Option<u64>,
        #[arg(long, default_value_t = 200)]
        window: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare finished run directories.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 200)]
        window: u64,
        /// Directory for comparison.csv, curves.csv and comparison.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render reward, accuracy and conflict curves as SVG.
    Plot {
        /// Metrics CSV or JSON files; one line per file.
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Trailing moving-average window in rounds.
        #[arg(long, default_value_t = 1)]
        smooth: usize,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn report_run(log: &MetricsLog, window: u64) {
    let s = summarize(log, window);
    println!(
        "policy={} rounds={} final_reward={:.4} conflicts_per_round={:.4} accuracy={} participation_cv={:.4}",
        log.policy,
        s.rounds,
        s.final_reward,
        s.mean_conflicts,
        s.accuracy.map_or("n/a".to_string(), |a| format!("{a:.4}")),
        s.participation_cv
    );
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            policy,
            rounds,
            resume,
        } => {
            let log = if let Some(cp) = resume {
                resume_experiment(&cp, Some(&out))?
            } else {
                let mut cfg = load_config(config.as_deref())?;
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                if let Some(p) = policy {
                    cfg.policy = p;
                }
                if let Some(r) = rounds {
                    cfg.rounds = r;
                }
                cfg.validate()?;
                run_experiment(&cfg, Some(&out))?
            };
            report_run(&log, 200);
        }
        Command::Sweep {
            config,
            servers,
            policies,
            seeds,
            rounds,
            window,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            let policies = policies.unwrap_or_else(|| PolicyKind::ALL.to_vec());
            let report = sweep(&cfg, &servers, &policies, &seeds, window, Some(&out))?;
            print!("{}", report.table_csv());
        }
        Command::Compare { runs, window, out } => {
            let inputs = runs
                .iter()
                .map(|d| {
                    let mut r = RunInput::load(d)?;
                    if runs.len() > 1 && inputs_share_label(&runs, d) {
                        r.label = d.display().to_string();
                    }
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()?;
            let report = compare_policies(&inputs, window)?;
            if let Some(o) = out {
                report.write(&o)?;
            }
            print!("{}", report.table_csv());
        }
        Command::Plot { metrics, out, smooth } => {
            let logs = metrics
                .iter()
                .map(|p| MetricsLog::import(p))
                .collect::<Result<Vec<_>>>()?;
            let runs: Vec<(String, &MetricsLog)> = metrics
                .iter()
                .zip(&logs)
                .map(|(p, l)| {
                    let label = if l.policy.is_empty() {
                        p.display().to_string()
                    } else {
                        l.policy.clone()
                    };
                    (label, l)
                })
                .collect();
            let svg = render_svg(&runs, smooth);
            std::fs::write(&out, svg).map_err(|e| crpfl::Error::Io {
                path: out.clone(),
                source: e,
            })?;
        }
    }
    Ok(())
}

/// Runs sharing policy and seed are labelled by path so they are not averaged together.
fn inputs_share_label(all: &[PathBuf], dir: &Path) -> bool {
    let policy_of = |d: &Path| {
        ExperimentConfig::load(&d.join(crpfl::orchestrator::CONFIG_FILE))
            .map(|c| (c.policy, c.seed))
            .ok()
    };
    let mine = policy_of(dir);
    all.iter().filter(|d| policy_of(d) == mine).count() > 1
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
