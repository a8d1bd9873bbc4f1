// SPDX-License-Identifier: MIT OR Apache-2.0

//! Redundant-block detection, pruning plans and latency measurement.
//!
//! Layers are 1-based throughout. A block `[s, e]` is a run of consecutive
//! layers whose pairwise similarity stays at or above a threshold; pruning
//! keeps `s` and `e` and skips everything strictly between them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_serial_hashed, SkipMask, Weights};
use crate::numerics::Matrix;
use crate::similarity::SimilarityMatrix;

/// Default similarity threshold.
pub const DEFAULT_TAU: f64 = 0.85;
/// Default minimum block size.
pub const DEFAULT_MIN_SIZE: usize = 3;

/// Inclusive, 1-based layer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    /// Layers strictly between the edges.
    pub fn interior(&self) -> std::ops::Range<usize> {
        self.start + 1..self.end
    }
}

/// Detected blocks plus the parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSet {
    pub tau: f64,
    pub k: usize,
    pub blocks: Vec<Block>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_checksum: Option<String>,
}

impl BlockSet {
    /// A hand-specified set, for example from a published table.
    pub fn manual(blocks: Vec<Block>, total_layers: usize) -> Self {
        Self {
            tau: 0.0,
            k: 0,
            blocks,
            total_layers: Some(total_layers),
            source_checksum: None,
        }
    }
}

/// Layers to skip at execution time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub total_layers: usize,
    pub skipped: Vec<usize>,
    #[serde(default)]
    pub retained_edges: Vec<(usize, usize)>,
}

impl PruningPlan {
    /// A plan that skips nothing.
    pub fn empty(total_layers: usize) -> Self {
        Self {
            total_layers,
            skipped: Vec::new(),
            retained_edges: Vec::new(),
        }
    }
}

/// Which blocks a plan prunes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    All,
    /// 1-based block number.
    Block(usize),
}

/// Greedy block detection over a self-similarity matrix.
///
/// A layer joins the current block when its similarity to every member is
/// at least `tau`; otherwise the current block is closed and a new one starts
/// at that layer. Blocks shorter than `k` are dropped, and a block survives
/// only if the minimum over its full square submatrix is at least `tau`.
pub fn identify_blocks(s: &SimilarityMatrix, tau: f64, k: usize) -> Result<BlockSet> {
    let v = &s.values;
    if v.rows() != v.cols() {
        return Err(Error::NotSquare {
            rows: v.rows(),
            cols: v.cols(),
        });
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside (0, 1]")));
    }
    if k < 2 {
        return Err(Error::InvalidArgument(format!("min block size {k} < 2")));
    }
    // the first row/column may be the embedding stream
    let offset = s.first_layer;
    let blocks = greedy_blocks(v, tau, k)
        .into_iter()
        .filter(|&(a, b)| submatrix_min(v, a, b) >= tau)
        .map(|(a, b)| Block::new(a + offset, b + offset))
        .collect();
    Ok(BlockSet {
        tau,
        k,
        blocks,
        total_layers: Some(v.rows() + offset - 1),
        source_checksum: Some(crate::io::hex(s.checksum())),
    })
}

/// Phases one and two on 0-based indices.
fn greedy_blocks(v: &Matrix, tau: f64, k: usize) -> Vec<(usize, usize)> {
    let n = v.rows();
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut start = 0;
    for i in 1..n {
        if (start..i).all(|j| v[(i, j)] >= tau) {
            continue;
        }
        if i - start >= k {
            out.push((start, i - 1));
        }
        start = i;
    }
    if n - start >= k {
        out.push((start, n - 1));
    }
    out
}

fn submatrix_min(v: &Matrix, a: usize, b: usize) -> f64 {
    let mut min = f64::INFINITY;
    for i in a..=b {
        for j in a..=b {
            min = min.min(v[(i, j)]);
        }
    }
    min
}

/// Skips the interior layers of the selected blocks.
pub fn plan_prune(blocks: &BlockSet, total_layers: usize, selection: Selection) -> Result<PruningPlan> {
    for b in &blocks.blocks {
        if b.start == 0 || b.end > total_layers || b.start >= b.end {
            return Err(Error::BlockOutOfRange {
                start: b.start,
                end: b.end,
                layers: total_layers,
            });
        }
    }
    let chosen: Vec<Block> = match selection {
        Selection::All => blocks.blocks.clone(),
        Selection::Block(i) => match blocks.blocks.get(i.wrapping_sub(1)) {
            Some(b) => vec![*b],
            None => {
                return Err(Error::InvalidArgument(format!(
                    "block {i} not in 1..={}",
                    blocks.blocks.len()
                )))
            }
        },
    };
    let mut skipped: Vec<usize> = chosen.iter().flat_map(|b| b.interior()).collect();
    skipped.sort_unstable();
    skipped.dedup();
    let edges: Vec<usize> = chosen.iter().flat_map(|b| [b.start, b.end]).collect();
    skipped.retain(|l| !edges.contains(l));
    Ok(PruningPlan {
        total_layers,
        skipped,
        retained_edges: chosen.iter().map(|b| (b.start, b.end)).collect(),
    })
}

/// Fraction of encoder layers a plan skips.
pub fn encoder_sparsity(plan: &PruningPlan) -> f64 {
    if plan.total_layers == 0 {
        return 0.0;
    }
    plan.skipped.len() as f64 / plan.total_layers as f64
}

/// Wall-clock statistics in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub mean_ms: f64,
    pub stdev_ms: f64,
    pub reps: usize,
}

/// Warm-up passes run before timing starts.
pub const WARMUP_PASSES: usize = 5;
/// Default number of timed passes.
pub const DEFAULT_REPS: usize = 100;

/// Times `reps` single-threaded forward passes of `batch` under `plan`.
pub fn bench(weights: &Weights, plan: &PruningPlan, reps: usize, batch: &Matrix) -> Result<LatencyStats> {
    if reps < 10 {
        return Err(Error::InvalidArgument(format!("reps {reps} < 10")));
    }
    let mask = SkipMask::from_plan(plan)?;
    let hash = weights.model_hash();
    for _ in 0..WARMUP_PASSES {
        forward_serial_hashed(weights, batch, &mask, hash)?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let out = forward_serial_hashed(weights, batch, &mask, hash)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    Ok(latency_stats(&mut times))
}

fn latency_stats(times: &mut [f64]) -> LatencyStats {
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    let mean = times.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    LatencyStats {
        median_ms: median,
        mean_ms: mean,
        stdev_ms: var.sqrt(),
        reps: n,
    }
}
