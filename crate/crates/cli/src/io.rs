//! File formats: price CSV input, chain and checkpoint JSON, result CSVs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use battery_sddp_core::{Cut, CutPool, MarkovChain, PriceSeries};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Reads `timestamp,day_ahead,id1` rows. Rows with a missing or unparsable
/// field are skipped; their count is returned alongside the series.
pub fn read_price_csv(path: &Path) -> CliResult<(PriceSeries, usize)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{}: missing column `{name}`", path.display())))
    };
    let (ts, da, id1) = (column("timestamp")?, column("day_ahead")?, column("id1")?);

    let mut series = PriceSeries::default();
    let mut dropped = 0;
    for record in reader.records() {
        let Ok(record) = record else {
            dropped += 1;
            continue;
        };
        let number = |i: usize| {
            record
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        match (record.get(ts).filter(|s| !s.is_empty()), number(da), number(id1)) {
            (Some(t), Some(d), Some(i)) => {
                series.timestamps.push(t.to_owned());
                series.day_ahead.push(d);
                series.id1.push(i);
            }
            _ => dropped += 1,
        }
    }
    if series.is_empty() {
        return Err(CliError::Data(format!("{}: no usable rows", path.display())));
    }
    Ok((series, dropped))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes serializable rows with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChainDoc {
    pub horizon: usize,
    pub nodes: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl From<&MarkovChain> for ChainDoc {
    fn from(chain: &MarkovChain) -> Self {
        Self {
            horizon: chain.horizon,
            nodes: chain.nodes.clone(),
            transitions: chain.transitions.clone(),
        }
    }
}

/// Cuts of one (stage, node). Each bounds `ln(1 + rho J)` from below, with
/// `J` the minimized cost-to-go, as an affine function of wealth and energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub stage: usize,
    pub node: usize,
    pub cuts: Vec<CutRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    pub intercept: f64,
    pub grad_wealth: f64,
    pub grad_energy: f64,
    /// Training iteration that produced the cut.
    #[serde(default)]
    pub origin_iteration: usize,
}

pub fn checkpoint_entries(pool: &CutPool) -> Vec<CheckpointEntry> {
    let mut entries = Vec::new();
    for (stage, nodes) in pool.pools.iter().enumerate() {
        for (node, cuts) in nodes.iter().enumerate() {
            entries.push(CheckpointEntry {
                stage,
                node,
                cuts: cuts
                    .iter()
                    .map(|c| CutRecord {
                        intercept: c.intercept,
                        grad_wealth: c.grad_wealth,
                        grad_energy: c.grad_energy,
                        origin_iteration: c.origin_iteration,
                    })
                    .collect(),
            });
        }
    }
    entries
}

/// Rebuilds a pool for `chain`; (stage, node) pairs absent from the file
/// get no cuts. The generation counter resumes after the newest cut.
pub fn pool_from_entries(chain: &MarkovChain, entries: &[CheckpointEntry]) -> CliResult<CutPool> {
    let mut pool = CutPool::empty(chain);
    for e in entries {
        let slot = pool
            .pools
            .get_mut(e.stage)
            .and_then(|s| s.get_mut(e.node))
            .ok_or_else(|| CliError::Data(format!("checkpoint has stage {} node {} outside the chain", e.stage, e.node)))?;
        slot.extend(e.cuts.iter().map(|c| Cut {
            intercept: c.intercept,
            grad_wealth: c.grad_wealth,
            grad_energy: c.grad_energy,
            origin_iteration: c.origin_iteration,
        }));
        if let Some(last) = e.cuts.iter().map(|c| c.origin_iteration + 1).max() {
            pool.generation = pool.generation.max(last);
        }
    }
    Ok(pool)
}
