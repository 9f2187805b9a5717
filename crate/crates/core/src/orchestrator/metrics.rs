use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One record per (round, server). Optional columns are empty in CSV and
/// `null` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u64,
    pub task: u64,
    pub server: usize,
    pub policy: String,
    pub config_hash: String,
    pub reward: f64,
    /// `L_m`, seconds.
    pub latency: f64,
    /// `C_m`.
    pub penalty: f64,
    /// `f`.
    pub fairness: f64,
    pub selected: usize,
    pub completed: usize,
    /// Selected clients this server lost to another server.
    pub conflicts: usize,
    pub timeouts: usize,
    pub starved: usize,
    /// Candidates whose conflict probability came from the prior.
    pub low_confidence: usize,
    pub mean_conflict_prob: f64,
    pub accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub global_objective: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub temperature_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub temperature: Option<f64>,
    pub participation_cv: f64,
    /// Cumulative successful participations over the coverage set.
    pub participation: Vec<u64>,
}

/// CSV column order.
pub const COLUMNS: [&str; 26] = [
    "round",
    "task",
    "server",
    "policy",
    "config_hash",
    "reward",
    "latency",
    "penalty",
    "fairness",
    "selected",
    "completed",
    "conflicts",
    "timeouts",
    "starved",
    "low_confidence",
    "mean_conflict_prob",
    "accuracy",
    "test_loss",
    "global_objective",
    "critic_loss",
    "actor_loss",
    "temperature_loss",
    "entropy",
    "temperature",
    "participation_cv",
    "participation",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    /// Fields in [`COLUMNS`] order. `f64` uses the shortest representation
    /// that parses back to the same value.
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.round.to_string(),
            self.task.to_string(),
            self.server.to_string(),
            self.policy.clone(),
            self.config_hash.clone(),
            self.reward.to_string(),
            self.latency.to_string(),
            self.penalty.to_string(),
            self.fairness.to_string(),
            self.selected.to_string(),
            self.completed.to_string(),
            self.conflicts.to_string(),
            self.timeouts.to_string(),
            self.starved.to_string(),
            self.low_confidence.to_string(),
            self.mean_conflict_prob.to_string(),
            opt(self.accuracy),
            opt(self.test_loss),
            opt(self.global_objective),
            opt(self.critic_loss),
            opt(self.actor_loss),
            opt(self.temperature_loss),
            opt(self.entropy),
            opt(self.temperature),
            self.participation_cv.to_string(),
            self.participation
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        ]
    }

    pub fn from_record(record: &csv::StringRecord) -> std::result::Result<Self, String> {
        if record.len() != COLUMNS.len() {
            return Err(format!("expected {} fields, found {}", COLUMNS.len(), record.len()));
        }
        fn num<T: std::str::FromStr>(s: &str, col: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {col} value {s:?}"))
        }
        fn opt(s: &str, col: &str) -> std::result::Result<Option<f64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, col).map(Some)
            }
        }
        let f = |i: usize| &record[i];
        Ok(MetricsRow {
            round: num(f(0), COLUMNS[0])?,
            task: num(f(1), COLUMNS[1])?,
            server: num(f(2), COLUMNS[2])?,
            policy: f(3).to_string(),
            config_hash: f(4).to_string(),
            reward: num(f(5), COLUMNS[5])?,
            latency: num(f(6), COLUMNS[6])?,
            penalty: num(f(7), COLUMNS[7])?,
            fairness: num(f(8), COLUMNS[8])?,
            selected: num(f(9), COLUMNS[9])?,
            completed: num(f(10), COLUMNS[10])?,
            conflicts: num(f(11), COLUMNS[11])?,
            timeouts: num(f(12), COLUMNS[12])?,
            starved: num(f(13), COLUMNS[13])?,
            low_confidence: num(f(14), COLUMNS[14])?,
            mean_conflict_prob: num(f(15), COLUMNS[15])?,
            accuracy: opt(f(16), COLUMNS[16])?,
            test_loss: opt(f(17), COLUMNS[17])?,
            global_objective: opt(f(18), COLUMNS[18])?,
            critic_loss: opt(f(19), COLUMNS[19])?,
            actor_loss: opt(f(20), COLUMNS[20])?,
            temperature_loss: opt(f(21), COLUMNS[21])?,
            entropy: opt(f(22), COLUMNS[22])?,
            temperature: opt(f(23), COLUMNS[23])?,
            participation_cv: num(f(24), COLUMNS[24])?,
            participation: if f(25).is_empty() {
                Vec::new()
            } else {
                f(25)
                    .split(';')
                    .map(|s| num(s, COLUMNS[25]))
                    .collect::<std::result::Result<_, _>>()?
            },
        })
    }
}

/// Append-only run log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsLog {
    pub config_hash: String,
    pub policy: String,
    pub rows: Vec<MetricsRow>,
}

/// Export format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl MetricsLog {
    pub fn new(config_hash: impl Into<String>, policy: impl Into<String>) -> Self {
        MetricsLog {
            config_hash: config_hash.into(),
            policy: policy.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_rounds(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.round)
    }

    pub fn num_servers(&self) -> usize {
        self.rows.iter().map(|r| r.server + 1).max().unwrap_or(0)
    }

    /// Rows of one round, in server order.
    pub fn round(&self, round: u64) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(move |r| r.round == round)
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.to_record()).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics always serialize")
    }

    pub fn export(&self, path: &Path, format: Format) -> Result<()> {
        let text = match format {
            Format::Csv => self.to_csv_string(),
            Format::Json => self.to_json_string(),
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv_str(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
        if header.iter().ne(COLUMNS.iter().copied()) {
            return Err(parse_err("unexpected CSV header".into()));
        }
        let mut log = MetricsLog::default();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            let row = MetricsRow::from_record(&rec).map_err(|m| parse_err(format!("row {}: {m}", i + 1)))?;
            if log.rows.is_empty() {
                log.config_hash = row.config_hash.clone();
                log.policy = row.policy.clone();
            }
            log.rows.push(row);
        }
        Ok(log)
    }

    /// Reads a CSV or JSON export, chosen by extension.
    pub fn import(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        } else {
            Self::from_csv_str(&text, path)
        }
    }
}

/// Appends rows to a CSV file as they are produced.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    /// Creates (truncates) the file and writes the header plus any existing rows.
    pub fn create(path: &Path, existing: &[MetricsRow]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut sink = CsvSink {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(BufWriter::new(file)),
        };
        sink.write(COLUMNS.iter().map(|s| s.to_string()).collect())?;
        for r in existing {
            sink.append(r)?;
        }
        sink.flush()?;
        Ok(sink)
    }

    fn write(&mut self, record: Vec<String>) -> Result<()> {
        self.writer.write_record(record).map_err(|e| self.csv_err(e))
    }

    fn csv_err(&self, e: csv::Error) -> Error {
        let source = match e.into_kind() {
            csv::ErrorKind::Io(io) => io,
            other => std::io::Error::other(format!("{other:?}")),
        };
        Error::io(&self.path, source)
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.write(row.to_record())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}
