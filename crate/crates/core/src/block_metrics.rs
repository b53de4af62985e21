//! Blocks of sessions and their Mass / Intensity / Variety statistics.
//!
//! A block's usage histogram maps each observed K (items per session) to N,
//! the number of sessions with exactly that K. Block means of N and K feed
//! the variety series: for every block after the first,
//! `alpha = mean_n(b) / mean_n(b-1)`, `beta = mean_k(b) / mean_k(b-1)` and
//! `variety = alpha / beta`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log_ingest::Session;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("block size must be at least 1")]
    ZeroBlockSize,
    #[error("empty block")]
    EmptyBlock,
    #[error("block {block_index} has a zero mean; upstream data is corrupt")]
    ZeroMean { block_index: usize },
    #[error("metrics are out of block order at position {position}")]
    OutOfOrder { position: usize },
    #[error("histogram total {histogram} does not match search volume {volume}")]
    VolumeMismatch { histogram: u64, volume: u64 },
    #[error("metrics record i/o: {0}")]
    Csv(#[from] csv::Error),
    #[error("metrics record i/o: {0}")]
    Json(#[from] serde_json::Error),
    #[error("metrics record i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A contiguous run of sessions in global session order.
#[derive(Debug, Clone, Copy)]
pub struct Block<'a> {
    pub block_index: usize,
    pub sessions: &'a [Session],
}

impl Block<'_> {
    /// Q, the number of sessions in the block.
    pub fn search_volume(&self) -> usize {
        self.sessions.len()
    }
}

/// Cuts `sessions` into consecutive blocks of `block_size`; the last block
/// keeps whatever remains. Input is expected in session id order.
pub fn partition_blocks(sessions: &[Session], block_size: usize) -> Result<Vec<Block<'_>>, MetricsError> {
    if block_size == 0 {
        return Err(MetricsError::ZeroBlockSize);
    }
    Ok(sessions
        .chunks(block_size)
        .enumerate()
        .map(|(block_index, sessions)| Block { block_index, sessions })
        .collect())
}

/// Number of sessions N per observed K.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsageHistogram {
    entries: BTreeMap<u32, u64>,
}

impl UsageHistogram {
    pub fn from_k_values<I: IntoIterator<Item = u32>>(values: I) -> Self {
        let mut entries = BTreeMap::new();
        for k in values {
            *entries.entry(k).or_insert(0) += 1;
        }
        UsageHistogram { entries }
    }

    pub fn entries(&self) -> &BTreeMap<u32, u64> {
        &self.entries
    }

    pub fn get(&self, k: u32) -> u64 {
        self.entries.get(&k).copied().unwrap_or(0)
    }

    /// Σ N over all K, equal to the block's search volume.
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn compute_histogram(block: &Block<'_>) -> Result<UsageHistogram, MetricsError> {
    if block.sessions.is_empty() {
        return Err(MetricsError::EmptyBlock);
    }
    Ok(UsageHistogram::from_k_values(block.sessions.iter().map(|s| s.k_items)))
}

/// How the block mean of N is taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MeanN {
    /// Unweighted mean of the N counts over the distinct K values observed.
    #[default]
    DistinctK,
    /// Mean over sessions of the N count of each session's K.
    SessionWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub block_index: usize,
    /// Search volume Q.
    pub q: u64,
    pub mean_n: f64,
    pub mean_k: f64,
    pub n_min: u64,
    pub n_max: u64,
    pub k_min: u32,
    pub k_max: u32,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub variety: Option<f64>,
}

/// Means and extremes of one block; alpha, beta and variety stay empty.
pub fn compute_block_means(
    histogram: &UsageHistogram,
    block_index: usize,
    policy: MeanN,
) -> Result<BlockMetrics, MetricsError> {
    let entries = histogram.entries();
    let (Some((&k_min, _)), Some((&k_max, _))) = (entries.first_key_value(), entries.last_key_value()) else {
        return Err(MetricsError::EmptyBlock);
    };
    let q = histogram.total();
    let k_sum: f64 = entries.iter().map(|(&k, &n)| f64::from(k) * n as f64).sum();
    let mean_n = match policy {
        MeanN::DistinctK => q as f64 / entries.len() as f64,
        MeanN::SessionWeighted => entries.values().map(|&n| (n as f64) * (n as f64)).sum::<f64>() / q as f64,
    };
    Ok(BlockMetrics {
        block_index,
        q,
        mean_n,
        mean_k: k_sum / q as f64,
        n_min: entries.values().copied().min().unwrap_or(0),
        n_max: entries.values().copied().max().unwrap_or(0),
        k_min,
        k_max,
        alpha: None,
        beta: None,
        variety: None,
    })
}

/// Histogram and means for one block, checking Σ N = Q.
pub fn block_metrics(block: &Block<'_>, policy: MeanN) -> Result<BlockMetrics, MetricsError> {
    let histogram = compute_histogram(block)?;
    let volume = block.search_volume() as u64;
    if histogram.total() != volume {
        return Err(MetricsError::VolumeMismatch { histogram: histogram.total(), volume });
    }
    compute_block_means(&histogram, block.block_index, policy)
}

/// Fills alpha, beta and variety for every block after the first.
pub fn compute_variety_series(metrics: &mut [BlockMetrics]) -> Result<(), MetricsError> {
    for (position, m) in metrics.iter().enumerate() {
        if position > 0 && m.block_index <= metrics[position - 1].block_index {
            return Err(MetricsError::OutOfOrder { position });
        }
        if m.mean_n <= 0.0 || m.mean_k <= 0.0 {
            return Err(MetricsError::ZeroMean { block_index: m.block_index });
        }
    }
    if let Some(first) = metrics.first_mut() {
        first.alpha = None;
        first.beta = None;
        first.variety = None;
    }
    for b in 1..metrics.len() {
        let alpha = metrics[b].mean_n / metrics[b - 1].mean_n;
        let beta = metrics[b].mean_k / metrics[b - 1].mean_k;
        let m = &mut metrics[b];
        m.alpha = Some(alpha);
        m.beta = Some(beta);
        m.variety = Some(alpha / beta);
    }
    Ok(())
}

/// Writes one CSV record per block; absent alpha/beta/variety are empty fields.
pub fn write_metrics_csv<W: Write>(writer: W, metrics: &[BlockMetrics]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(reader: R) -> Result<Vec<BlockMetrics>, MetricsError> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|rec| rec.map_err(MetricsError::from)).collect()
}

/// Writes one JSON object per line; absent values are `null`.
pub fn write_metrics_jsonl<W: Write>(mut writer: W, metrics: &[BlockMetrics]) -> Result<(), MetricsError> {
    for m in metrics {
        serde_json::to_writer(&mut writer, m)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
