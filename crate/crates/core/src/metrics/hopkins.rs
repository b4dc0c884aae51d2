use std::fmt::Write as _;

use disentangle_tensor::parallel::map_range;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_std, pca, EmbeddingSet};
use crate::{Error, Result};

fn nearest(points: &DMatrix<f64>, q: &[f64], exclude: Option<usize>) -> f64 {
    let d = points.ncols();
    let mut best = f64::INFINITY;
    for i in 0..points.nrows() {
        if Some(i) == exclude {
            continue;
        }
        let mut s = 0.0;
        for k in 0..d {
            let t = points[(i, k)] - q[k];
            s += t * t;
        }
        best = best.min(s);
    }
    best.sqrt()
}

/// One Hopkins draw: `(sum u, sum w)` over `probes` uniform box samples and
/// `probes` real points.
pub fn hopkins_once(points: &DMatrix<f64>, probes: usize, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let (n, d) = points.shape();
    if d == 0 || probes == 0 || n <= probes {
        return Err(Error::Contract(format!("Hopkins needs N > probes >= 1 and d >= 1 (N={n}, probes={probes}, d={d})")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite embedding entries".into()));
    }
    let lo: Vec<f64> = (0..d).map(|k| points.column(k).min()).collect();
    let hi: Vec<f64> = (0..d).map(|k| points.column(k).max()).collect();
    if lo.iter().zip(&hi).all(|(a, b)| a == b) {
        return Err(Error::UndefinedStatistic("all points are equal; the bounding box is degenerate".into()));
    }
    let uniform: Vec<Vec<f64>> = (0..probes)
        .map(|_| (0..d).map(|k| if hi[k] > lo[k] { rng.gen_range(lo[k]..hi[k]) } else { lo[k] }).collect())
        .collect();
    let real = sample(rng, n, probes).into_vec();
    let u = map_range(probes, |i| nearest(points, &uniform[i], None));
    let w = map_range(probes, |i| {
        let row: Vec<f64> = points.row(real[i]).iter().copied().collect();
        nearest(points, &row, Some(real[i]))
    });
    Ok((u.iter().sum(), w.iter().sum()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopkinsSummary {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
    pub probes: usize,
    #[serde(skip)]
    sums: Vec<(f64, f64)>,
}

/// `H = sum u / (sum u + sum w)` repeated `repetitions` times.
pub fn hopkins(points: &DMatrix<f64>, probes: usize, repetitions: usize, rng: &mut ChaCha8Rng) -> Result<HopkinsSummary> {
    let repetitions = repetitions.max(1);
    let mut sums = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        sums.push(hopkins_once(points, probes, rng)?);
    }
    let values: Vec<f64> = sums.iter().map(|(u, w)| ratio(*u, *w)).collect();
    let (mean, std) = mean_std(&values);
    Ok(HopkinsSummary { mean, std, values, probes, sums })
}

fn ratio(u: f64, w: f64) -> f64 {
    if u + w > 0.0 {
        u / (u + w)
    } else {
        0.5
    }
}

/// How each cluster is mapped before Hopkins is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Projection {
    /// Raw points.
    #[default]
    None,
    /// Leading principal components of the cluster.
    Pca { dims: usize },
    /// Orthogonal projection onto the span of the `score_within` class
    /// centroids (relative to the cluster mean), so only variation that
    /// separates those classes is scored.
    Centroids,
}

/// Coordinates of `x` in the span of its per-label centroid offsets.
pub fn centroid_projection(x: &DMatrix<f64>, labels: &[usize]) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    let mean = x.row_mean();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut offsets = Vec::new();
    for c in 0..classes {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if !idx.is_empty() {
            offsets.push((x.select_rows(&idx).row_mean() - &mean).transpose());
        }
    }
    let basis = DMatrix::from_columns(&offsets);
    let svd = basis.svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let top = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-10 * top && top > 0.0)
        .collect();
    if keep.is_empty() {
        return Err(Error::UndefinedStatistic("class centroids coincide".into()));
    }
    let q = u.select_columns(&keep);
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    debug_assert_eq!(q.nrows(), d);
    Ok(c * q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TendencyConfig {
    pub repetitions: usize,
    /// Probes per repetition as a fraction of the cluster size.
    pub probe_fraction: f64,
    pub projection: Projection,
    pub seed: u64,
}

impl Default for TendencyConfig {
    fn default() -> Self {
        Self {
            repetitions: 20,
            probe_fraction: 0.1,
            projection: Projection::None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: usize,
    pub name: String,
    pub points: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTendencyReport {
    pub cluster_by: String,
    pub score_within: String,
    pub rows: Vec<ClusterRow>,
    /// `(cluster, points)` for clusters too small to score.
    pub skipped: Vec<(usize, usize)>,
    /// Unweighted mean of the per-cluster means.
    pub per_cluster_mean: Option<f64>,
    /// Mean over repetitions of `sum u / (sum u + sum w)` pooled across clusters.
    pub pooled: Option<f64>,
}

impl ClusterTendencyReport {
    pub fn row(&self, cluster: usize) -> Option<&ClusterRow> {
        self.rows.iter().find(|r| r.cluster == cluster)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Mean Hopkins statistic per {} cluster (scored within {})",
            self.cluster_by, self.score_within
        );
        let _ = writeln!(s, "{:<16} {:>6} {:>8} {:>8}", self.cluster_by, "n", "mean", "std");
        for r in &self.rows {
            let _ = writeln!(s, "{:<16} {:>6} {:>8.3} {:>8.3}", r.name, r.points, r.mean, r.std);
        }
        for (c, n) in &self.skipped {
            let _ = writeln!(s, "{:<16} {:>6}   skipped (too few points)", c, n);
        }
        if let Some(v) = self.per_cluster_mean {
            let _ = writeln!(s, "per-cluster mean {v:.3}");
        }
        if let Some(v) = self.pooled {
            let _ = writeln!(s, "pooled           {v:.3}");
        }
        s
    }
}

/// Partitions the embedding by `cluster_by` and scores each cluster's
/// tendency to form sub-clusters (for example by `score_within` classes).
pub fn cluster_tendency_report(
    set: &EmbeddingSet,
    cluster_by: &str,
    score_within: &str,
    class_names: Option<&[String]>,
    config: &TendencyConfig,
) -> Result<ClusterTendencyReport> {
    let by = set.label_index(cluster_by)?;
    let within = set.label_index(score_within)?;
    if !(config.probe_fraction > 0.0 && config.probe_fraction < 1.0) {
        return Err(Error::Config(format!("probe_fraction must be in (0, 1) (got {})", config.probe_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let classes = set.labels.iter().map(|l| l[by]).max().map_or(0, |m| m + 1);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut pooled_sums = vec![(0.0, 0.0); config.repetitions.max(1)];
    for c in 0..classes {
        let idx: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i][by] == c).collect();
        if idx.is_empty() {
            continue;
        }
        let probes = ((config.probe_fraction * idx.len() as f64).round() as usize).max(1);
        if idx.len() <= probes || idx.len() < 3 {
            tracing::warn!(cluster = c, points = idx.len(), "cluster too small for Hopkins; skipped");
            skipped.push((c, idx.len()));
            continue;
        }
        let raw = set.points.select_rows(&idx);
        let projected = match config.projection {
            Projection::None => Ok(raw),
            Projection::Pca { dims } => Ok(pca(&raw, dims)),
            Projection::Centroids => {
                let within_labels: Vec<usize> = idx.iter().map(|&i| set.labels[i][within]).collect();
                centroid_projection(&raw, &within_labels)
            }
        };
        let summary = match projected.and_then(|pts| hopkins(&pts, probes, config.repetitions, &mut rng)) {
            Ok(s) => s,
            Err(Error::UndefinedStatistic(reason)) => {
                tracing::warn!(cluster = c, %reason, "cluster skipped");
                skipped.push((c, idx.len()));
                continue;
            }
            Err(e) => return Err(e),
        };
        for (acc, (u, w)) in pooled_sums.iter_mut().zip(&summary.sums) {
            acc.0 += u;
            acc.1 += w;
        }
        rows.push(ClusterRow {
            cluster: c,
            name: class_names.and_then(|n| n.get(c).cloned()).unwrap_or_else(|| c.to_string()),
            points: idx.len(),
            mean: summary.mean,
            std: summary.std,
        });
    }
    let (per_cluster_mean, pooled) = if rows.is_empty() {
        (None, None)
    } else {
        let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
        let pooled: Vec<f64> = pooled_sums.iter().map(|(u, w)| ratio(*u, *w)).collect();
        (Some(mean_std(&means).0), Some(mean_std(&pooled).0))
    };
    Ok(ClusterTendencyReport {
        cluster_by: cluster_by.to_string(),
        score_within: score_within.to_string(),
        rows,
        skipped,
        per_cluster_mean,
        pooled,
    })
}
