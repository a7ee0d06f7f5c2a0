//! Instance recovery by flat-kernel mean-shift in embedding space.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::label::LabelMap;

/// Distance used for the kernel window, mode merging and assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Manhattan,
}

impl Metric {
    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanShiftConfig {
    pub bandwidth: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub metric: Metric,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.5,
            tol: 1e-4,
            max_iter: 300,
            metric: Metric::Manhattan,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShift {
    pub modes: Vec<Vec<f64>>,
    /// Index into `modes` for every input point.
    pub assignment: Vec<usize>,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Flat-kernel mean-shift.
///
/// Every distinct point seeds a trajectory that repeatedly moves to the
/// mean of all points strictly closer than `bandwidth`, until it moves less
/// than `tol` or `max_iter` is reached. Converged positions are visited in
/// ascending lexicographic order (first coordinate first) and merged
/// greedily into the first mode within `bandwidth / 2`. Points are then
/// assigned to their nearest mode. The result does not depend on the
/// order of `points`.
pub fn mean_shift(points: &[Vec<f64>], config: &MeanShiftConfig) -> Result<MeanShift> {
    if points.is_empty() {
        return Err(domain!("mean_shift on an empty point set"));
    }
    if !(config.bandwidth > 0.0) {
        return Err(domain!("bandwidth must be positive, got {}", config.bandwidth));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(domain!("points must share a positive dimension"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(domain!("points must be finite"));
    }

    // Distinct points with multiplicities, sorted lexicographically. Every
    // sum below runs in this order, which makes the result order-invariant.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
    let mut uniq: Vec<&[f64]> = Vec::new();
    let mut weight: Vec<f64> = Vec::new();
    for &i in &order {
        match uniq.last() {
            Some(last) if lex_cmp(last, &points[i]) == Ordering::Equal => {
                *weight.last_mut().expect("parallel to uniq") += 1.0
            }
            _ => {
                uniq.push(&points[i]);
                weight.push(1.0);
            }
        }
    }
    let first: Vec<f64> = uniq.iter().map(|p| p[0]).collect();
    let bw = config.bandwidth;

    let mut converged: Vec<Vec<f64>> = Vec::with_capacity(uniq.len());
    let mut next = vec![0.0; dim];
    for seed in &uniq {
        let mut x = seed.to_vec();
        for _ in 0..config.max_iter {
            // points with |p0 - x0| < bw are the only candidates in either metric
            let lo = first.partition_point(|&v| v <= x[0] - bw);
            let hi = first.partition_point(|&v| v < x[0] + bw);
            next.iter_mut().for_each(|v| *v = 0.0);
            let mut mass = 0.0;
            for j in lo..hi {
                if config.metric.distance(uniq[j], &x) < bw {
                    for (n, &p) in next.iter_mut().zip(uniq[j]) {
                        *n += weight[j] * p;
                    }
                    mass += weight[j];
                }
            }
            if mass == 0.0 {
                break;
            }
            next.iter_mut().for_each(|v| *v /= mass);
            let shift = config.metric.distance(&next, &x);
            x.copy_from_slice(&next);
            if shift < config.tol {
                break;
            }
        }
        converged.push(x);
    }

    let mut cand: Vec<usize> = (0..converged.len()).collect();
    cand.sort_by(|&a, &b| lex_cmp(&converged[a], &converged[b]).then(a.cmp(&b)));
    let mut modes: Vec<Vec<f64>> = Vec::new();
    for &c in &cand {
        let p = &converged[c];
        if !modes.iter().any(|m| config.metric.distance(m, p) <= bw / 2.0) {
            modes.push(p.clone());
        }
    }

    let assignment = points.iter().map(|p| nearest(&modes, p, config.metric)).collect();
    Ok(MeanShift { modes, assignment })
}

fn nearest(modes: &[Vec<f64>], p: &[f64], metric: Metric) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, m) in modes.iter().enumerate() {
        let d = metric.distance(m, p);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Settings for [`extract_instances`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub mean_shift: MeanShiftConfig,
    /// Clusters with fewer pixels become background.
    pub min_size: usize,
    /// Upper bound on mean-shift seeds, taken on a uniform raster stride
    /// over the foreground.
    pub max_seeds: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            mean_shift: MeanShiftConfig::default(),
            min_size: 16,
            max_seeds: 4096,
        }
    }
}

/// Instances recovered from an embedding field.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Ids `1..=K` in order of first raster appearance, 0 background.
    pub labels: LabelMap,
    /// Mode of instance `k` at index `k - 1`.
    pub modes: Vec<Vec<f64>>,
    /// `1 / (1 + mean L1 deviation of member embeddings from the mode)`.
    pub scores: Vec<f64>,
}

impl ClusterResult {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Clusters the foreground pixels of an `[N, H, W]` embedding field.
pub fn extract_instances(
    embedding: &[f32],
    width: usize,
    height: usize,
    fg: &[bool],
    config: &ExtractConfig,
) -> Result<ClusterResult> {
    let hw = width * height;
    if fg.len() != hw || hw == 0 || !embedding.len().is_multiple_of(hw) || embedding.is_empty() {
        return Err(domain!(
            "embedding of {} values and mask of {} do not fit a {width}x{height} frame",
            embedding.len(),
            fg.len()
        ));
    }
    let n = embedding.len() / hw;
    let vector = |i: usize| -> Vec<f64> { (0..n).map(|c| embedding[c * hw + i] as f64).collect() };
    let fg_idx: Vec<usize> = (0..hw).filter(|&i| fg[i]).collect();
    let empty = ClusterResult {
        labels: LabelMap::new(width, height),
        modes: Vec::new(),
        scores: Vec::new(),
    };
    if fg_idx.is_empty() {
        return Ok(empty);
    }

    let stride = fg_idx.len().div_ceil(config.max_seeds.max(1));
    let seeds: Vec<Vec<f64>> = fg_idx.iter().step_by(stride).map(|&i| vector(i)).collect();
    let ms = mean_shift(&seeds, &config.mean_shift)?;
    let metric = config.mean_shift.metric;

    let vectors: Vec<Vec<f64>> = fg_idx.iter().map(|&i| vector(i)).collect();
    let assign: Vec<usize> = vectors.iter().map(|v| nearest(&ms.modes, v, metric)).collect();
    let mut size = vec![0usize; ms.modes.len()];
    for &a in &assign {
        size[a] += 1;
    }

    // ids by first raster appearance among surviving clusters
    let mut id_of: BTreeMap<usize, u32> = BTreeMap::new();
    let mut labels = LabelMap::new(width, height);
    let mut modes = Vec::new();
    let mut dev_sum: Vec<f64> = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    for (k, &i) in fg_idx.iter().enumerate() {
        let m = assign[k];
        if size[m] < config.min_size {
            continue;
        }
        let id = *id_of.entry(m).or_insert_with(|| {
            modes.push(ms.modes[m].clone());
            dev_sum.push(0.0);
            members.push(0);
            modes.len() as u32
        });
        labels.data_mut()[i] = id;
        let slot = id as usize - 1;
        dev_sum[slot] += Metric::Manhattan.distance(&vectors[k], &ms.modes[m]);
        members[slot] += 1;
    }
    if modes.is_empty() {
        return Ok(empty);
    }
    let scores = dev_sum
        .iter()
        .zip(&members)
        .map(|(&d, &c)| 1.0 / (1.0 + d / c as f64))
        .collect();
    Ok(ClusterResult {
        labels,
        modes,
        scores,
    })
}
