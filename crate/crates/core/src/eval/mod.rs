//! Retrieval metrics and the evaluation protocols built on them.

mod attention;
mod probe;
mod zeroshot;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, input_err, Result};
use crate::losses::UNIT_NORM_TOLERANCE;
use crate::tensor::{Real, Tensor};

pub use attention::{attention_map, dump_attention_map, render_attention, AttentionMap};
pub use probe::{linear_probe, ProbeConfig, ProbeOutput};
pub use zeroshot::{embed_split, zero_shot_eval, EvalOptions, SplitEmbeddings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "t2v")]
    TextToVideo,
    #[serde(rename = "v2t")]
    VideoToText,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::TextToVideo => "t2v",
            Direction::VideoToText => "v2t",
        })
    }
}

/// Metrics for one retrieval direction. Recalls are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub medr: f64,
    pub num_queries: usize,
    #[serde(skip)]
    pub ranks: Vec<usize>,
    /// Row-major `Q × G` similarities.
    #[serde(skip)]
    pub similarity: Vec<f64>,
}

impl RetrievalReport {
    pub fn from_similarity<T: Real>(direction: Direction, sim: &Tensor<T>, truth: &[usize]) -> Result<Self> {
        let ranks = ranks(sim, truth)?;
        Ok(Self {
            direction,
            r1: recall_from_ranks(&ranks, 1),
            r5: recall_from_ranks(&ranks, 5),
            r10: recall_from_ranks(&ranks, 10),
            medr: median_rank(&ranks)?,
            num_queries: ranks.len(),
            ranks,
            similarity: sim.to_f64_vec(),
        })
    }

    pub fn table_header() -> String {
        format!("{:<9} {:>7} {:>7} {:>7} {:>7} {:>8}", "direction", "R@1", "R@5", "R@10", "MedR", "queries")
    }

    /// One table row; recalls in percent.
    pub fn table_row(&self) -> String {
        format!(
            "{:<9} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>8}",
            self.direction.to_string(),
            100.0 * self.r1,
            100.0 * self.r5,
            100.0 * self.r10,
            self.medr,
            self.num_queries
        )
    }
}

/// Render reports as a small text table.
pub fn report_table(reports: &[RetrievalReport]) -> String {
    let mut out = RetrievalReport::table_header();
    for r in reports {
        out.push('\n');
        out.push_str(&r.table_row());
    }
    out
}

fn check_unit_rows<T: Real>(name: &str, t: &Tensor<T>) -> Result<()> {
    let d = t.shape()[1];
    for (i, row) in t.data().chunks(d.max(1)).enumerate() {
        let norm = row.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(input_err!("{} row {} has norm {}, expected 1", name, i, norm));
        }
    }
    Ok(())
}

/// Dot products of unit-norm rows, `Q × G`.
pub fn similarity_matrix<T: Real>(queries: &Tensor<T>, gallery: &Tensor<T>) -> Result<Tensor<T>> {
    match (queries.shape(), gallery.shape()) {
        (&[_, d], &[_, d2]) if d == d2 => {}
        (a, b) => return Err(dim_err!("similarity needs Q×d and G×d matrices, got {:?} and {:?}", a, b)),
    }
    check_unit_rows("query", queries)?;
    check_unit_rows("gallery", gallery)?;
    queries.detach().matmul(&gallery.detach().transpose(0, 1)?)
}

/// 1-based rank of each query's true item. An item ranks ahead of the truth
/// when it scores higher, or scores the same at a smaller gallery index.
pub fn ranks<T: Real>(sim: &Tensor<T>, truth: &[usize]) -> Result<Vec<usize>> {
    let &[q, g] = sim.shape() else {
        return Err(dim_err!("similarity must be a matrix, got {:?}", sim.shape()));
    };
    if truth.len() != q {
        return Err(dim_err!("{} ground-truth entries for {} queries", truth.len(), q));
    }
    sim.data()
        .chunks(g.max(1))
        .zip(truth)
        .map(|(row, &t)| {
            if t >= g {
                return Err(input_err!("ground truth {} outside gallery of {}", t, g));
            }
            let s = row[t];
            let ahead = row
                .iter()
                .enumerate()
                .filter(|&(j, &x)| x > s || (x == s && j < t))
                .count();
            Ok(ahead + 1)
        })
        .collect()
}

/// Fraction of ranks at most `k`.
pub fn recall_from_ranks(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn recall_at_k<T: Real>(sim: &Tensor<T>, truth: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(input_err!("k must be at least 1"));
    }
    Ok(recall_from_ranks(&ranks(sim, truth)?, k))
}

/// Median of the ranks; the mean of the two middle values for even counts.
pub fn median_rank(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(input_err!("median of no ranks"));
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    })
}
