use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{CsvSink, Format, MetricsLog};
use super::world::World;
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub world: World,
    pub log: MetricsLog,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(self)?;
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if cp.config_hash != cp.world.config.hash() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: "checkpoint hash does not match its config".into(),
            });
        }
        Ok(cp)
    }
}

/// A run in progress, optionally mirrored to an output directory.
pub struct Runner {
    world: World,
    log: MetricsLog,
    out: Option<PathBuf>,
    sink: Option<CsvSink>,
}

impl Runner {
    pub fn new(config: ExperimentConfig, out: Option<&Path>) -> Result<Self> {
        let log = MetricsLog::new(config.hash(), config.policy.to_string());
        let world = World::new(config)?;
        Self::attach(world, log, out)
    }

    pub fn resume(checkpoint: &Path, out: Option<&Path>) -> Result<Self> {
        let cp = Checkpoint::load(checkpoint)?;
        Self::attach(cp.world, cp.log, out)
    }

    fn attach(world: World, log: MetricsLog, out: Option<&Path>) -> Result<Self> {
        let sink = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let cfg_path = dir.join(CONFIG_FILE);
                let text = format!(
                    "# config_hash = {}\n{}",
                    world.config.hash(),
                    world.config.to_toml_string()
                );
                std::fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
                Some(CsvSink::create(&dir.join(METRICS_CSV), &log.rows)?)
            }
            None => None,
        };
        Ok(Runner {
            world,
            log,
            out: out.map(Path::to_path_buf),
            sink,
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.world.config.hash(),
            world: self.world.clone(),
            log: self.log.clone(),
        }
    }

    /// Plays one round and appends its rows. Returns `false` once finished.
    pub fn step(&mut self) -> Result<bool> {
        if self.world.is_finished() {
            return Ok(false);
        }
        let record = self.world.run_round()?;
        for row in record.rows {
            if let Some(sink) = &mut self.sink {
                sink.append(&row)?;
            }
            self.log.push(row);
        }
        let t = self.world.round;
        let every = self.world.config.checkpoint_every;
        if let Some(sink) = &mut self.sink {
            if t.is_multiple_of(self.world.config.eval_every) {
                sink.flush()?;
            }
        }
        if every > 0 && t.is_multiple_of(every) {
            if let Some(dir) = &self.out {
                self.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
            }
        }
        Ok(true)
    }

    /// Runs up to `max_rounds` more rounds (all remaining when `None`).
    pub fn run(&mut self, max_rounds: Option<u64>) -> Result<()> {
        let mut n = 0;
        while max_rounds.is_none_or(|m| n < m) && self.step()? {
            n += 1;
        }
        if let Some(sink) = &mut self.sink {
            sink.flush()?;
        }
        Ok(())
    }

    /// Writes the JSON mirror and hands back the log.
    pub fn finish(mut self) -> Result<MetricsLog> {
        if let Some(sink) = &mut self.sink {
            sink.flush()?;
        }
        if let Some(dir) = &self.out {
            self.log.export(&dir.join(METRICS_JSON), Format::Json)?;
        }
        Ok(self.log)
    }
}

/// Runs every round of `config`, writing `config.toml`, `metrics.csv`
/// (incrementally), `metrics.json` and checkpoints into `out` when given.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<MetricsLog> {
    let mut runner = Runner::new(config.clone(), out)?;
    runner.run(None)?;
    runner.finish()
}

/// Continues a checkpointed run to completion.
pub fn resume_experiment(checkpoint: &Path, out: Option<&Path>) -> Result<MetricsLog> {
    let mut runner = Runner::resume(checkpoint, out)?;
    runner.run(None)?;
    runner.finish()
}
