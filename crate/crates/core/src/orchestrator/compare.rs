use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PolicyKind};
use super::experiment::run_experiment;
use super::metrics::MetricsLog;
use crate::error::{Error, Result};

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: u64,
    /// Mean per-server reward over the final window.
    pub final_reward: f64,
    /// Conflict losses per round over the final window.
    pub mean_conflicts: f64,
    /// Mean evaluated test accuracy over the final window.
    pub accuracy: Option<f64>,
    /// Participation coefficient of variation at the last round, averaged over servers.
    pub participation_cv: f64,
    /// Sum over rounds of the mean per-server reward.
    pub reward_auc: f64,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Summary over the last `window` rounds.
pub fn summarize(log: &MetricsLog, window: u64) -> RunSummary {
    let rounds = log.num_rounds();
    let start = rounds.saturating_sub(window);
    let tail: Vec<_> = log.rows.iter().filter(|r| r.round > start).collect();
    let tail_rounds = (rounds - start).max(1) as f64;
    let last: Vec<_> = log.round(rounds).collect();
    let servers = log.num_servers().max(1) as f64;
    RunSummary {
        rounds,
        final_reward: mean(tail.iter().map(|r| r.reward)).unwrap_or(0.0),
        mean_conflicts: tail.iter().map(|r| r.conflicts as f64).sum::<f64>() / tail_rounds,
        accuracy: mean(tail.iter().filter_map(|r| r.accuracy)),
        participation_cv: mean(last.iter().map(|r| r.participation_cv)).unwrap_or(0.0),
        reward_auc: log.rows.iter().map(|r| r.reward).sum::<f64>() / servers,
    }
}

/// Per-round aggregates for plotting: mean reward, total conflicts, mean accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: u64,
    pub reward: f64,
    pub conflicts: f64,
    pub accuracy: Option<f64>,
}

pub fn round_curve(log: &MetricsLog) -> Vec<CurvePoint> {
    let mut by_round: BTreeMap<u64, Vec<&super::metrics::MetricsRow>> = BTreeMap::new();
    for r in &log.rows {
        by_round.entry(r.round).or_default().push(r);
    }
    by_round
        .into_iter()
        .map(|(round, rows)| CurvePoint {
            round,
            reward: mean(rows.iter().map(|r| r.reward)).unwrap_or(0.0),
            conflicts: rows.iter().map(|r| r.conflicts as f64).sum(),
            accuracy: mean(rows.iter().filter_map(|r| r.accuracy)),
        })
        .collect()
}

/// A finished run to compare.
#[derive(Debug, Clone)]
pub struct RunInput {
    pub label: String,
    pub config: ExperimentConfig,
    pub log: MetricsLog,
}

impl RunInput {
    pub fn new(config: ExperimentConfig, log: MetricsLog) -> Self {
        RunInput {
            label: config.policy.to_string(),
            config,
            log,
        }
    }

    /// Loads `config.toml` and `metrics.csv` from a run directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(&dir.join(super::experiment::CONFIG_FILE))?;
        let log = MetricsLog::import(&dir.join(super::experiment::METRICS_CSV))?;
        Ok(RunInput::new(config, log))
    }
}

/// Seed-averaged results of one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub label: String,
    pub seeds: Vec<u64>,
    pub final_reward: f64,
    pub mean_conflicts: f64,
    pub accuracy: Option<f64>,
    pub participation_cv: f64,
    pub reward_auc: f64,
    pub runs: Vec<RunSummary>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub window: u64,
    pub rows: Vec<PolicyRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ComparisonReport {
    pub fn row(&self, label: &str) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// `label,seeds,final_reward,mean_conflicts,accuracy,participation_cv,reward_auc`.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("label,seeds,final_reward,mean_conflicts,accuracy,participation_cv,reward_auc\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.label,
                r.seeds.len(),
                r.final_reward,
                r.mean_conflicts,
                fmt_opt(r.accuracy),
                r.participation_cv,
                r.reward_auc
            ));
        }
        out
    }

    /// Long-format per-round curves: `label,round,reward,conflicts,accuracy`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("label,round,reward,conflicts,accuracy\n");
        for r in &self.rows {
            for p in &r.curve {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.label,
                    p.round,
                    p.reward,
                    p.conflicts,
                    fmt_opt(p.accuracy)
                ));
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("comparison.csv", self.table_csv()),
            ("curves.csv", self.curves_csv()),
            ("comparison.json", serde_json::to_string_pretty(self)?),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Groups runs by label and averages over seeds. Every run must share the
/// topology and every label must cover the same seeds.
pub fn compare_policies(runs: &[RunInput], window: u64) -> Result<ComparisonReport> {
    let first = runs.first().ok_or(Error::Empty("runs to compare"))?;
    let key = first.config.topology_key();
    for r in runs {
        if r.config.topology_key() != key {
            return Err(Error::TopologyMismatch(format!(
                "{} (seed {}) differs from {} (seed {}) in more than policy and seed",
                r.label, r.config.seed, first.label, first.config.seed
            )));
        }
    }
    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let mut rows = Vec::new();
    let mut reference_seeds: Option<Vec<u64>> = None;
    for label in labels {
        let group: Vec<&RunInput> = runs.iter().filter(|r| r.label == label).collect();
        let mut seeds: Vec<u64> = group.iter().map(|r| r.config.seed).collect();
        seeds.sort_unstable();
        match &reference_seeds {
            Some(s) if *s != seeds => {
                return Err(Error::TopologyMismatch(format!(
                    "{label} uses seeds {seeds:?}, expected {s:?}"
                )))
            }
            None => reference_seeds = Some(seeds.clone()),
            _ => {}
        }
        let summaries: Vec<RunSummary> = group.iter().map(|r| summarize(&r.log, window)).collect();
        let curves: Vec<Vec<CurvePoint>> = group.iter().map(|r| round_curve(&r.log)).collect();
        let len = curves.iter().map(Vec::len).min().unwrap_or(0);
        let curve = (0..len)
            .map(|i| CurvePoint {
                round: curves[0][i].round,
                reward: mean(curves.iter().map(|c| c[i].reward)).unwrap_or(0.0),
                conflicts: mean(curves.iter().map(|c| c[i].conflicts)).unwrap_or(0.0),
                accuracy: mean(curves.iter().filter_map(|c| c[i].accuracy)),
            })
            .collect();
        rows.push(PolicyRow {
            label: label.to_string(),
            seeds,
            final_reward: mean(summaries.iter().map(|s| s.final_reward)).unwrap_or(0.0),
            mean_conflicts: mean(summaries.iter().map(|s| s.mean_conflicts)).unwrap_or(0.0),
            accuracy: mean(summaries.iter().filter_map(|s| s.accuracy)),
            participation_cv: mean(summaries.iter().map(|s| s.participation_cv)).unwrap_or(0.0),
            reward_auc: mean(summaries.iter().map(|s| s.reward_auc)).unwrap_or(0.0),
            runs: summaries,
            curve,
        });
    }
    Ok(ComparisonReport { window, rows })
}

/// One sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub num_servers: usize,
    pub report: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    /// `num_servers,label,mean_conflicts,final_reward,accuracy`.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("num_servers,label,mean_conflicts,final_reward,accuracy\n");
        for e in &self.entries {
            for r in &e.report.rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    e.num_servers,
                    r.label,
                    r.mean_conflicts,
                    r.final_reward,
                    fmt_opt(r.accuracy)
                ));
            }
        }
        out
    }

    /// Mean conflicts of `label` in server-count order.
    pub fn conflicts_by_servers(&self, label: &str) -> Vec<(usize, f64)> {
        self.entries
            .iter()
            .filter_map(|e| e.report.row(label).map(|r| (e.num_servers, r.mean_conflicts)))
            .collect()
    }
}

/// Runs every (server count, policy, seed) combination of `base` and
/// compares policies within each server count. Run directories go under
/// `out/m{M}/{policy}/seed{seed}` when `out` is given.
pub fn sweep(
    base: &ExperimentConfig,
    server_counts: &[usize],
    policies: &[PolicyKind],
    seeds: &[u64],
    window: u64,
    out: Option<&Path>,
) -> Result<SweepReport> {
    let mut entries = Vec::new();
    for &m in server_counts {
        let mut runs = Vec::new();
        for &policy in policies {
            for &seed in seeds {
                let cfg = ExperimentConfig {
                    num_servers: m,
                    policy,
                    seed,
                    ..base.clone()
                };
                let dir = out.map(|o| {
                    o.join(format!("m{m}"))
                        .join(policy.as_str())
                        .join(format!("seed{seed}"))
                });
                let log = run_experiment(&cfg, dir.as_deref())?;
                runs.push(RunInput::new(cfg, log));
            }
        }
        let report = compare_policies(&runs, window)?;
        if let Some(o) = out {
            report.write(&o.join(format!("m{m}")))?;
        }
        entries.push(SweepEntry { num_servers: m, report });
    }
    let report = SweepReport { entries };
    if let Some(o) = out {
        let path = o.join("sweep.csv");
        std::fs::write(&path, report.table_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
