//! Independent reference implementations used by the oracle tests and the
//! acceptance suite. Nothing here calls into the code under test except for
//! plain data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hseg_core::guides::GuideParams;
use hseg_core::LabelMap;
use rand::Rng;

pub mod checks;

/// Direct evaluation of the guided embedding: per guide, the mean of
/// `sin(fx·x/W + fy·y/H + φ)` over the pixels.
pub fn embedding(pixels: &[(usize, usize)], frame: (usize, usize), params: &[GuideParams]) -> Vec<f64> {
    let (w, h) = (frame.0 as f64, frame.1 as f64);
    params
        .iter()
        .map(|p| {
            let mut s = 0.0;
            for &(x, y) in pixels {
                s += (p.freq_x * x as f64 / w + p.freq_y * y as f64 / h + p.phase).sin();
            }
            s / pixels.len() as f64
        })
        .collect()
}

pub fn hinge(a: &[f64], b: &[f64], margin: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    (margin - d).max(0.0)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|b|, floor)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

/// Six-loop cross-correlation with zero padding. Input `[C, H, W]`, weight
/// `[O, C, K, K]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    weight: &[f64],
    o: usize,
    k: usize,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; o * ho * wo];
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = bias.map_or(0.0, |b| b[oc]);
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            s += weight[((oc * c + ic) * k + ky) * k + kx]
                                * input[(ic * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = s;
            }
        }
    }
    (out, ho, wo)
}

/// Gradients of `Σ go ⊙ conv(input, weight)` by direct summation.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv_grads(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    weight: &[f64],
    o: usize,
    k: usize,
    go: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut gi = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; o];
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = go[(oc * ho + oy) * wo + ox];
                gb[oc] += g;
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let ii = (ic * h + iy as usize) * w + ix as usize;
                            let wi = ((oc * c + ic) * k + ky) * k + kx;
                            gw[wi] += g * input[ii];
                            gi[ii] += g * weight[wi];
                        }
                    }
                }
            }
        }
    }
    (gi, gw, gb)
}

/// Instance pixel sets (flat indices) keyed by id.
pub fn pixel_sets(map: &LabelMap) -> BTreeMap<u32, BTreeSet<usize>> {
    let mut out: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for (i, &v) in map.data().iter().enumerate() {
        if v != 0 {
            out.entry(v).or_default().insert(i);
        }
    }
    out
}

pub fn best_dice(a: &LabelMap, b: &LabelMap) -> f64 {
    let sa = pixel_sets(a);
    let sb = pixel_sets(b);
    if sa.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for pa in sa.values() {
        let mut best: f64 = 0.0;
        for pb in sb.values() {
            let inter = pa.intersection(pb).count() as f64;
            best = best.max(2.0 * inter / (pa.len() + pb.len()) as f64);
        }
        total += best;
    }
    total / sa.len() as f64
}

pub fn sbd(pred: &LabelMap, gt: &LabelMap) -> f64 {
    if pixel_sets(pred).is_empty() && pixel_sets(gt).is_empty() {
        return 1.0;
    }
    best_dice(pred, gt).min(best_dice(gt, pred))
}

pub fn dic(pred: &LabelMap, gt: &LabelMap) -> usize {
    let a = pixel_sets(pred).len() as i64;
    let b = pixel_sets(gt).len() as i64;
    (a - b).unsigned_abs() as usize
}

fn iou(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// One image for [`coco_ap`]: scored prediction masks and GT masks.
pub struct ApCase {
    pub preds: Vec<(BTreeSet<usize>, f64)>,
    pub gts: Vec<BTreeSet<usize>>,
}

/// Mean over IoU thresholds 0.50..0.95 of AP with greedy score-ordered
/// matching, all object sizes, at most 100 detections per image. The
/// interpolated precision at recall r is the best precision among operating
/// points whose recall is at least r, sampled at r = 0, 0.01, ..., 1.
/// Returns `(AP, AP per threshold)`, or `None` without ground truth.
pub fn coco_ap(cases: &[ApCase]) -> Option<(f64, Vec<f64>)> {
    let n_gt: usize = cases.iter().map(|c| c.gts.len()).sum();
    if n_gt == 0 {
        return None;
    }
    let thresholds: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    let mut per_t = Vec::new();
    for &t in &thresholds {
        // (score, image, rank, is_tp)
        let mut dets: Vec<(f64, usize, usize, bool)> = Vec::new();
        for (ci, case) in cases.iter().enumerate() {
            let mut order: Vec<usize> = (0..case.preds.len()).collect();
            // stable by descending score
            order.sort_by(|&a, &b| case.preds[b].1.partial_cmp(&case.preds[a].1).unwrap());
            order.truncate(100);
            let mut taken = vec![false; case.gts.len()];
            for (rank, &d) in order.iter().enumerate() {
                let mut best = None;
                let mut best_iou = t.min(1.0 - 1e-10);
                for (g, gt) in case.gts.iter().enumerate() {
                    if taken[g] {
                        continue;
                    }
                    let v = iou(&case.preds[d].0, gt);
                    if v >= best_iou {
                        best_iou = v;
                        best = Some(g);
                    }
                }
                if let Some(g) = best {
                    taken[g] = true;
                }
                dets.push((case.preds[d].1, ci, rank, best.is_some()));
            }
        }
        dets.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut points = Vec::new();
        let (mut tp, mut fp) = (0.0, 0.0);
        for d in &dets {
            if d.3 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            points.push((tp / n_gt as f64, tp / (tp + fp)));
        }
        let mut sum = 0.0;
        for r in 0..=100 {
            let r = r as f64 / 100.0;
            let p = points
                .iter()
                .filter(|(rc, _)| *rc >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max);
            sum += p;
        }
        per_t.push(sum / 101.0);
    }
    Some((per_t.iter().sum::<f64>() / per_t.len() as f64, per_t))
}

/// Up to 40 distinct pixels in an 8×8 window at a random corner.
pub fn random_object(rng: &mut impl Rng, frame: (usize, usize)) -> Vec<(usize, usize)> {
    let n = rng.gen_range(1..40);
    let cx = rng.gen_range(0..frame.0);
    let cy = rng.gen_range(0..frame.1);
    let mut px: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            let x = (cx + rng.gen_range(0..8)).min(frame.0 - 1);
            let y = (cy + rng.gen_range(0..8)).min(frame.1 - 1);
            (x, y)
        })
        .collect();
    px.sort_unstable();
    px.dedup();
    px
}

pub fn random_params(rng: &mut impl Rng, n: usize) -> Vec<GuideParams> {
    (0..n)
        .map(|_| GuideParams::new(rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect()
}

/// Random label map with up to `max_ids` ids, built from random rectangles
/// painted over each other.
pub fn random_label_map(rng: &mut impl Rng, max_side: usize, max_ids: u32) -> LabelMap {
    let w = rng.gen_range(1..=max_side);
    let h = rng.gen_range(1..=max_side);
    let mut map = LabelMap::new(w, h);
    let rects = rng.gen_range(0..=max_ids);
    for _ in 0..rects {
        let id = rng.gen_range(1..=max_ids);
        let x0 = rng.gen_range(0..w);
        let y0 = rng.gen_range(0..h);
        let x1 = rng.gen_range(x0..w) + 1;
        let y1 = rng.gen_range(y0..h) + 1;
        for y in y0..y1 {
            for x in x0..x1 {
                map.set(x, y, id);
            }
        }
    }
    map
}

/// Well-separated Gaussian-free mixture: `k` centers pairwise at least
/// `min_sep` apart (Euclidean) in a box, each with points within `spread`.
/// Returns points and their component index.
pub fn separated_mixture(
    rng: &mut impl Rng,
    dim: usize,
    k: usize,
    min_sep: f64,
    spread: f64,
    per_component: (usize, usize),
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let side = min_sep * (k as f64).max(2.0);
    let mut centers: Vec<Vec<f64>> = Vec::new();
    while centers.len() < k {
        let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-side..side)).collect();
        let ok = centers.iter().all(|o| {
            o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_sep
        });
        if ok {
            centers.push(c);
        }
    }
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for (ci, c) in centers.iter().enumerate() {
        let n = rng.gen_range(per_component.0..=per_component.1);
        for _ in 0..n {
            let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let r = rng.gen_range(0.0..=spread);
            points.push(c.iter().zip(&dir).map(|(a, d)| a + d / norm * r).collect());
            truth.push(ci);
        }
    }
    (points, truth)
}

/// Whether two labelings of the same items induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut ab: BTreeMap<usize, usize> = BTreeMap::new();
    let mut ba: BTreeMap<usize, usize> = BTreeMap::new();
    a.len() == b.len()
        && a.iter().zip(b).all(|(&x, &y)| {
            *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x
        })
}

/// Scalar Adam, written out step by step.
pub fn adam_scalar(p0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (t, &g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        p -= lr * mh / (vh.sqrt() + eps);
    }
    p
}
