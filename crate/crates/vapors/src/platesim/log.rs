//! Episode logging: transition records and their JSON-lines persistence.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LowLevelAction, PrimitiveKind};
use crate::grid::ObsGrid;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad log line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("log file is missing its header line")]
    MissingHeader,
}

/// One environment transition. The stored reward is recomputable bit-exactly
/// from `pickup_count`, the coverage fields, and the episode meta via
/// [`super::weighted_reward`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub obs_before: ObsGrid,
    pub primitive: PrimitiveKind,
    pub action: LowLevelAction,
    pub reward: f64,
    pub obs_after: ObsGrid,
    pub pickup_count: usize,
    pub coverage_before: f64,
    pub coverage_after: f64,
    /// True when the action targeted a point off the plate and executed as a
    /// no-op.
    pub mis_executed: bool,
}

/// Episode-level constants needed to interpret the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub policy: String,
    pub initial_count: usize,
    pub initial_coverage: f64,
    pub alpha: f64,
    pub budget: usize,
    /// True when the plate was cleared within the budget.
    pub success: bool,
}

/// A full episode: header metadata plus one record per executed action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub meta: EpisodeMeta,
    pub records: Vec<TransitionRecord>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Cumulative pickup after each step.
    pub fn cumulative_pickup(&self) -> Vec<usize> {
        let mut total = 0;
        self.records
            .iter()
            .map(|r| {
                total += r.pickup_count;
                total
            })
            .collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    /// JSON-lines: a header line with the episode meta, then one
    /// [`TransitionRecord`] per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), LogError> {
        let header = serde_json::to_string(&self.meta).expect("meta serializes");
        writeln!(w, "{header}")?;
        for record in &self.records {
            let line = serde_json::to_string(record).expect("record serializes");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), LogError> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    pub fn read_jsonl<R: Read>(r: R) -> Result<Self, LogError> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines().enumerate();
        let meta = match lines.next() {
            Some((i, line)) => {
                let line = line?;
                serde_json::from_str(&line).map_err(|source| LogError::Parse {
                    line: i + 1,
                    source,
                })?
            }
            None => return Err(LogError::MissingHeader),
        };
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|source| LogError::Parse {
                line: i + 1,
                source,
            })?);
        }
        Ok(Self { meta, records })
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, LogError> {
        Self::read_jsonl(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::platesim::{reset, step, LowLevelAction, Spread};

    fn sample_log() -> EpisodeLog {
        let cfg = SimConfig::default();
        let mut state = reset(&cfg, 42, 8, Spread::HalfSpread).unwrap();
        let mut records = Vec::new();
        let actions = [
            LowLevelAction::rearrange([0.0, 0.0, 0.0], [0.06, 0.0, 0.0], 0.0),
            LowLevelAction::acquire([0.0, 0.0, 0.0], 15.0, 80.0),
        ];
        for action in &actions {
            let out = step(&cfg, &state, action).unwrap();
            state = out.state;
            records.push(out.record);
        }
        EpisodeLog {
            meta: EpisodeMeta {
                seed: 42,
                policy: "test".into(),
                initial_count: 8,
                initial_coverage: state.initial_coverage,
                alpha: cfg.alpha,
                budget: cfg.budget,
                success: state.is_cleared(),
            },
            records,
        }
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let log = sample_log();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let back = EpisodeLog::read_jsonl(&buf[..]).unwrap();
        assert_eq!(log, back);
    }

    #[test]
    fn jsonl_is_one_record_per_line() {
        let log = sample_log();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + log.len());
    }

    #[test]
    fn cumulative_pickup_is_non_decreasing() {
        let log = sample_log();
        let cum = log.cumulative_pickup();
        for w in cum.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn missing_header_is_an_error() {
        assert!(matches!(
            EpisodeLog::read_jsonl(&b""[..]),
            Err(LogError::MissingHeader)
        ));
    }
}
