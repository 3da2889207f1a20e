//! Batch execution and CSV output.
//!
//! Column order is fixed by [`CSV_COLUMNS`]. Rows are sorted by
//! (scenario, protocol, seed, t_s) no matter which run finishes first.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::sim::{run, Checkpoint, ProtocolKind, RunResult, SimConfig};

pub const CSV_COLUMNS: [&str; 14] = [
    "scenario",
    "protocol",
    "seed",
    "t_s",
    "flows_active",
    "pdr",
    "avg_delay_s",
    "avg_throughput_bps",
    "tx_data_frames",
    "tx_coded_frames",
    "coded_components_total",
    "duplicate_forwards",
    "decode_failures",
    "drops",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub scenario: String,
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub checkpoint: Checkpoint,
}

impl CsvRow {
    fn fields(&self) -> [String; 14] {
        let r = &self.checkpoint.report;
        let c = &r.counters;
        [
            self.scenario.clone(),
            self.protocol.name().to_string(),
            self.seed.to_string(),
            format!("{:.3}", self.checkpoint.t_s),
            self.checkpoint.flows_active.to_string(),
            format!("{:.6}", r.pdr),
            format!("{:.6}", r.avg_delay_s),
            format!("{:.3}", r.avg_throughput_bps),
            c.tx_data_frames.to_string(),
            c.tx_coded_frames.to_string(),
            c.coded_components_total.to_string(),
            c.duplicate_forwards.to_string(),
            c.decode_failures.to_string(),
            c.drops.to_string(),
        ]
    }
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("scenario `{scenario}` ({protocol}, seed {seed}) violated invariants:\n  {}", violations.join("\n  "))]
    Violation { scenario: String, protocol: ProtocolKind, seed: u64, violations: Vec<String> },
    #[error("scenario `{scenario}` is invalid: {message}")]
    Invalid { scenario: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn rows_for(config: &SimConfig, seed: u64, result: &RunResult) -> Vec<CsvRow> {
    result
        .checkpoints
        .iter()
        .map(|cp| CsvRow { scenario: config.name.clone(), protocol: config.protocol, seed, checkpoint: cp.clone() })
        .collect()
}

/// Runs every (scenario, protocol, seed) combination in parallel. The
/// protocol in each scenario file is overridden by `protocols`.
pub fn run_batch(configs: &[SimConfig], protocols: &[ProtocolKind], seeds: &[u64]) -> Result<Vec<CsvRow>, BatchError> {
    for c in configs {
        let problems = c.validate();
        if !problems.is_empty() {
            return Err(BatchError::Invalid { scenario: c.name.clone(), message: problems.join("; ") });
        }
    }
    let jobs: Vec<(usize, ProtocolKind, u64)> = (0..configs.len())
        .flat_map(|i| protocols.iter().flat_map(move |&p| seeds.iter().map(move |&s| (i, p, s))))
        .collect();

    let results: Vec<Result<Vec<CsvRow>, BatchError>> = jobs
        .par_iter()
        .map(|&(i, protocol, seed)| {
            let mut config = configs[i].clone();
            config.protocol = protocol;
            config.trace = false;
            let result = run(&config, seed);
            if result.violations.is_empty() {
                Ok(rows_for(&config, seed, &result))
            } else {
                Err(BatchError::Violation { scenario: config.name, protocol, seed, violations: result.violations })
            }
        })
        .collect();

    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| {
        (&a.scenario, a.protocol.name(), a.seed)
            .cmp(&(&b.scenario, b.protocol.name(), b.seed))
            .then(a.checkpoint.t_s.total_cmp(&b.checkpoint.t_s))
    });
    Ok(rows)
}

pub fn write_csv<W: Write>(out: W, rows: &[CsvRow]) -> Result<(), BatchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}
