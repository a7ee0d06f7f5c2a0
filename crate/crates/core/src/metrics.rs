//! Instance segmentation scores: Symmetric Best Dice, absolute difference
//! in counting, and COCO-protocol mask AP.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::label::LabelMap;

/// Per-instance overlap used by [`best_dice`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overlap {
    /// `2|a∩b| / (|a| + |b|)`
    #[default]
    Dice,
    /// `|a∩b| / |a∪b|`
    Iou,
}

fn check_frame(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(domain!(
            "label maps differ in size: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        ));
    }
    Ok(())
}

/// Mean over instances of `a` of the best overlap with any instance of `b`.
/// Zero when `a` has no instances.
pub fn best_dice(a: &LabelMap, b: &LabelMap, overlap: Overlap) -> Result<f64> {
    check_frame(a, b)?;
    let mut size_a: BTreeMap<u32, usize> = BTreeMap::new();
    let mut size_b: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        if x != 0 {
            *size_a.entry(x).or_default() += 1;
        }
        if y != 0 {
            *size_b.entry(y).or_default() += 1;
        }
        if x != 0 && y != 0 {
            *inter.entry((x, y)).or_default() += 1;
        }
    }
    if size_a.is_empty() {
        return Ok(0.0);
    }
    let mut best: BTreeMap<u32, f64> = size_a.keys().map(|&k| (k, 0.0)).collect();
    for (&(x, y), &i) in &inter {
        let (sa, sb) = (size_a[&x] as f64, size_b[&y] as f64);
        let i = i as f64;
        let v = match overlap {
            Overlap::Dice => 2.0 * i / (sa + sb),
            Overlap::Iou => i / (sa + sb - i),
        };
        let slot = best.get_mut(&x).expect("every a id has a slot");
        if v > *slot {
            *slot = v;
        }
    }
    Ok(best.values().sum::<f64>() / best.len() as f64)
}

/// `min(best_dice(pred, gt), best_dice(gt, pred))`; 1 when both are empty.
pub fn sbd(pred: &LabelMap, gt: &LabelMap, overlap: Overlap) -> Result<f64> {
    check_frame(pred, gt)?;
    if pred.instance_count() == 0 && gt.instance_count() == 0 {
        return Ok(1.0);
    }
    Ok(best_dice(pred, gt, overlap)?.min(best_dice(gt, pred, overlap)?))
}

/// SBD computed on each `tile`-sized crop independently and averaged.
pub fn sbd_per_crop(pred: &LabelMap, gt: &LabelMap, tile: (usize, usize), overlap: Overlap) -> Result<f64> {
    check_frame(pred, gt)?;
    let (tw, th) = tile;
    if tw == 0 || th == 0 {
        return Err(domain!("crop size must be positive"));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for y0 in (0..gt.height()).step_by(th) {
        for x0 in (0..gt.width()).step_by(tw) {
            let w = tw.min(gt.width() - x0);
            let h = th.min(gt.height() - y0);
            let p = pred.crop(x0 as isize, y0 as isize, w, h);
            let g = gt.crop(x0 as isize, y0 as isize, w, h);
            total += sbd(&p, &g, overlap)?;
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// Absolute difference of instance counts.
pub fn dic(pred: &LabelMap, gt: &LabelMap) -> usize {
    pred.instance_count().abs_diff(gt.instance_count())
}

/// One instance mask as sorted flat pixel indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub pixels: Vec<u32>,
}

impl Mask {
    pub fn new(mut pixels: Vec<u32>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Self { pixels }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let (a, b) = (&self.pixels, &other.pixels);
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = a.len() + b.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Masks of every instance of a label map, in ascending id order.
pub fn masks_from_labels(label: &LabelMap) -> Vec<(u32, Mask)> {
    let w = label.width();
    label
        .instances()
        .into_iter()
        .map(|(id, px)| (id, Mask::new(px.iter().map(|&(x, y)| (y * w + x) as u32).collect())))
        .collect()
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ApImage {
    pub preds: Vec<(Mask, f64)>,
    pub gts: Vec<Mask>,
}

impl ApImage {
    /// Builds from label maps; `scores` maps prediction ids to confidence
    /// (missing ids score 1).
    pub fn from_labels(pred: &LabelMap, scores: &BTreeMap<u32, f64>, gt: &LabelMap) -> Self {
        Self {
            preds: masks_from_labels(pred)
                .into_iter()
                .map(|(id, m)| (m, scores.get(&id).copied().unwrap_or(1.0)))
                .collect(),
            gts: masks_from_labels(gt).into_iter().map(|(_, m)| m).collect(),
        }
    }
}

/// `[lo, hi]` GT area range; objects outside are ignored.
pub type AreaRange = (f64, f64);

pub const AREA_ALL: AreaRange = (0.0, 1e10);
pub const AREA_SMALL: AreaRange = (0.0, 1024.0);
pub const AREA_MEDIUM: AreaRange = (1024.0, 9216.0);
pub const AREA_LARGE: AreaRange = (9216.0, 1e10);

pub const MAX_DETS: usize = 100;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

struct ImageEval {
    /// per threshold, per kept detection: matched flag
    matched: Vec<Vec<bool>>,
    /// per threshold, per kept detection: ignored flag
    ignored: Vec<Vec<bool>>,
    scores: Vec<f64>,
    n_gt: usize,
}

fn evaluate_image(img: &ApImage, thresholds: &[f64], area: AreaRange) -> ImageEval {
    let outside = |a: usize| (a as f64) < area.0 || (a as f64) > area.1;
    // non-ignored ground truth first, stable
    let mut g_order: Vec<usize> = (0..img.gts.len()).collect();
    g_order.sort_by_key(|&g| outside(img.gts[g].area()));
    let g_ignore: Vec<bool> = g_order.iter().map(|&g| outside(img.gts[g].area())).collect();
    // detections by descending score, stable, capped
    let mut d_order: Vec<usize> = (0..img.preds.len()).collect();
    d_order.sort_by(|&a, &b| img.preds[b].1.total_cmp(&img.preds[a].1));
    d_order.truncate(MAX_DETS);

    let ious: Vec<Vec<f64>> = d_order
        .iter()
        .map(|&d| g_order.iter().map(|&g| img.preds[d].0.iou(&img.gts[g])).collect())
        .collect();

    let mut matched = Vec::with_capacity(thresholds.len());
    let mut ignored = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut gt_taken = vec![false; g_order.len()];
        let mut dm = vec![false; d_order.len()];
        let mut di = vec![false; d_order.len()];
        for (k, row) in ious.iter().enumerate() {
            let mut best = t.min(1.0 - 1e-10);
            let mut m: Option<usize> = None;
            for (g, &iou) in row.iter().enumerate() {
                if gt_taken[g] {
                    continue;
                }
                // once matched to a regular gt, ignored ones cannot replace it
                if let Some(mg) = m {
                    if !g_ignore[mg] && g_ignore[g] {
                        break;
                    }
                }
                if iou < best {
                    continue;
                }
                best = iou;
                m = Some(g);
            }
            match m {
                Some(g) => {
                    gt_taken[g] = true;
                    dm[k] = true;
                    di[k] = g_ignore[g];
                }
                None => {
                    di[k] = outside(img.preds[d_order[k]].0.area());
                }
            }
        }
        matched.push(dm);
        ignored.push(di);
    }
    ImageEval {
        matched,
        ignored,
        scores: d_order.iter().map(|&d| img.preds[d].1).collect(),
        n_gt: g_ignore.iter().filter(|&&i| !i).count(),
    }
}

/// Area under the 101-point interpolated precision-recall curve at every
/// threshold, accumulated over all images. `None` when no ground truth falls
/// in `area`.
pub fn ap_per_threshold(images: &[ApImage], thresholds: &[f64], area: AreaRange) -> Option<Vec<f64>> {
    let evals: Vec<ImageEval> = images.iter().map(|i| evaluate_image(i, thresholds, area)).collect();
    let n_gt: usize = evals.iter().map(|e| e.n_gt).sum();
    if n_gt == 0 {
        return None;
    }
    // all detections, descending score, stable over (image, rank)
    let mut all: Vec<(usize, usize)> = evals
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.scores.len()).map(move |k| (i, k)))
        .collect();
    all.sort_by(|a, b| evals[b.0].scores[b.1].total_cmp(&evals[a.0].scores[a.1]));

    let out = (0..thresholds.len())
        .map(|t| {
            let (mut tp, mut fp) = (0usize, 0usize);
            let mut recall = Vec::new();
            let mut precision = Vec::new();
            for &(i, k) in &all {
                if evals[i].ignored[t][k] {
                    continue;
                }
                if evals[i].matched[t][k] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                recall.push(tp as f64 / n_gt as f64);
                precision.push(tp as f64 / (tp + fp) as f64);
            }
            for j in (1..precision.len()).rev() {
                if precision[j] > precision[j - 1] {
                    precision[j - 1] = precision[j];
                }
            }
            let q: f64 = (0..=100)
                .map(|r| {
                    let r = r as f64 / 100.0;
                    let idx = recall.partition_point(|&v| v < r);
                    precision.get(idx).copied().unwrap_or(0.0)
                })
                .sum();
            q / 101.0
        })
        .collect();
    Some(out)
}

/// Aggregate evaluation record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegScore {
    pub sbd: f64,
    pub dic: f64,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
}

/// AP summary fields (`ap, ap50, ap75, ap_s, ap_m, ap_l`).
pub fn coco_ap(images: &[ApImage]) -> [Option<f64>; 6] {
    let th = coco_thresholds();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let all = ap_per_threshold(images, &th, AREA_ALL);
    [
        all.clone().map(mean),
        all.as_ref().map(|v| v[0]),
        all.as_ref().map(|v| v[5]),
        ap_per_threshold(images, &th, AREA_SMALL).map(mean),
        ap_per_threshold(images, &th, AREA_MEDIUM).map(mean),
        ap_per_threshold(images, &th, AREA_LARGE).map(mean),
    ]
}

/// A predicted labeling with per-instance confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: LabelMap,
    pub scores: BTreeMap<u32, f64>,
}

/// Per-image scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub sbd: f64,
    pub dic: usize,
    pub pred_count: usize,
    pub gt_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub overlap: Overlap,
    /// Score SBD per `(W, H)` crop and average, instead of per image.
    pub per_crop: Option<(usize, usize)>,
}

/// Scores a dataset: SBD and |DiC| are per-image means; AP pools all
/// detections.
pub fn evaluate(pairs: &[(Prediction, LabelMap)], options: &EvalOptions) -> Result<(SegScore, Vec<ImageScore>)> {
    let mut per_image = Vec::with_capacity(pairs.len());
    let mut ap_images = Vec::with_capacity(pairs.len());
    for (pred, gt) in pairs {
        let s = match options.per_crop {
            Some(tile) => sbd_per_crop(&pred.labels, gt, tile, options.overlap)?,
            None => sbd(&pred.labels, gt, options.overlap)?,
        };
        per_image.push(ImageScore {
            sbd: s,
            dic: dic(&pred.labels, gt),
            pred_count: pred.labels.instance_count(),
            gt_count: gt.instance_count(),
        });
        ap_images.push(ApImage::from_labels(&pred.labels, &pred.scores, gt));
    }
    let n = per_image.len().max(1) as f64;
    let [ap, ap50, ap75, ap_s, ap_m, ap_l] = coco_ap(&ap_images);
    Ok((
        SegScore {
            sbd: per_image.iter().map(|s| s.sbd).sum::<f64>() / n,
            dic: per_image.iter().map(|s| s.dic as f64).sum::<f64>() / n,
            ap,
            ap50,
            ap75,
            ap_s,
            ap_m,
            ap_l,
        },
        per_image,
    ))
}
