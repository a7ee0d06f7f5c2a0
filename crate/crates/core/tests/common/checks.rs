//! Measurements behind the oracle tests and the acceptance suite. Each
//! function returns what it measured; callers apply the tolerances.

use std::collections::BTreeMap;

use hseg_core::autodiff::{Real, Tape, Tensor, Var};
use hseg_core::clustering::{mean_shift, MeanShiftConfig, Metric};
use hseg_core::guides::{hinge_gradient, GuideParams, GuideSet, PixelSet};
use hseg_core::metrics::{ap_per_threshold, best_dice, coco_ap, coco_thresholds, dic, sbd, ApImage, Overlap, AREA_ALL};
use hseg_core::network::{build_targets, SinUNet, SinUNetConfig, TargetField};
use hseg_core::LabelMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Relative errors of `count` analytic hinge gradients against central
/// differences of the reference hinge, in 64-bit.
pub fn guide_pair_gradient_errors(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = (64, 48);
    let mut errors = Vec::with_capacity(count);
    while errors.len() < count {
        let a = super::random_object(&mut rng, frame);
        let b = super::random_object(&mut rng, frame);
        if a == b {
            continue;
        }
        let params = super::random_params(&mut rng, 12);
        let ea = super::embedding(&a, frame, &params);
        let eb = super::embedding(&b, frame, &params);
        let d: f64 = ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).sum();
        // keep the hinge active
        let margin = d + rng.gen_range(0.1..1.0);
        // |·| has a kink where a coordinate difference vanishes
        if ea.iter().zip(&eb).any(|(x, y)| (x - y).abs() < 1e-4) {
            continue;
        }
        let guides = GuideSet::new(params.clone(), margin).unwrap();
        let analytic: Vec<f64> = hinge_gradient(
            &PixelSet::new(a.clone(), frame.0, frame.1).unwrap(),
            &PixelSet::new(b.clone(), frame.0, frame.1).unwrap(),
            &guides,
        )
        .into_iter()
        .flatten()
        .collect();
        let flat: Vec<f64> = params.iter().flat_map(|p| [p.freq_x, p.freq_y, p.phase]).collect();
        let fd = super::central_diff(&flat, 1e-6, |x| {
            let p: Vec<GuideParams> = x.chunks(3).map(|c| GuideParams::new(c[0], c[1], c[2])).collect();
            super::hinge(&super::embedding(&a, frame, &p), &super::embedding(&b, frame, &p), margin)
        });
        errors.push(super::rel_err(&analytic, &fd, 1e-12));
    }
    errors
}

/// Depth-1, 4-channel network on 8×8 tiles.
pub fn miniature() -> SinUNetConfig {
    SinUNetConfig {
        depth: 1,
        base_channels: 4,
        embedding_dim: 3,
        input_channels: 1,
        tile: (8, 8),
        ..SinUNetConfig::default()
    }
}

/// Two 3×3-ish squares on an 8×8 frame.
pub fn two_squares() -> LabelMap {
    let mut m = LabelMap::new(8, 8);
    for y in 1..4 {
        for x in 1..4 {
            m.set(x, y, 1);
        }
    }
    for y in 4..8 {
        for x in 5..8 {
            m.set(x, y, 2);
        }
    }
    m
}

/// Loss of the full objective, built from public operators only.
pub fn objective<T: Real>(
    model: &SinUNet<T>,
    params: &[Tensor<T>],
    image: &Tensor<T>,
    targets: &TargetField,
    maps: &[Tensor<T>],
) -> (Tape<T>, Vec<Var>, Var) {
    let n = model.config().embedding_dim;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let x = tape.constant(image.clone());
    let out = model.forward(&mut tape, &vars, x, maps).unwrap();
    let emb = tape.slice_channels(out, 0, n).unwrap();
    let logit = tape.slice_channels(out, n, 1).unwrap();
    let target = tape.constant(targets.to_tensor());
    let l1 = tape.l1_loss(emb, target, &targets.fg).unwrap();
    let fg: Vec<T> = targets.fg.iter().map(|&f| if f { T::one() } else { T::zero() }).collect();
    let bce = tape.bce_loss(logit, &fg).unwrap();
    let loss = tape.add(l1, bce).unwrap();
    (tape, vars, loss)
}

/// Per parameter tensor of the miniature network (SinConv, CoordConv and
/// no-guide variants): relative error of the 32-bit analytic gradient
/// against 64-bit central differences. Every weight, including the
/// zero-initialized head, is redrawn so no gradient vanishes trivially.
pub fn network_gradient_errors(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let guides = GuideSet::random(3, 0.5, (0.0, 10.0), 2).unwrap();
    let targets = build_targets(&two_squares(), &guides);
    let mut out = Vec::new();
    for (mode, sin, coord) in [("sinconv", true, false), ("coordconv", false, true), ("no-guide", false, false)] {
        let cfg = SinUNetConfig {
            sinconv_enabled: sin,
            coordconv_mode: coord,
            ..miniature()
        };
        let init = SinUNet::<f32>::new(cfg.clone(), 9).unwrap();
        let noise = Normal::new(0.0, 0.4).unwrap();
        let params32: Vec<Tensor<f32>> = init
            .params()
            .iter()
            .map(|p| {
                let d = p.data().iter().map(|_| noise.sample(&mut rng) as f32).collect();
                Tensor::from_vec(p.shape(), d).unwrap()
            })
            .collect();
        let model32 = SinUNet::from_params(cfg.clone(), params32).unwrap();
        let model64: SinUNet<f64> = model32.cast();
        let image: Vec<f32> = (0..64).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        let img32 = Tensor::from_vec(&[1, 8, 8], image).unwrap();
        let img64: Tensor<f64> = img32.cast();
        let maps32 = model32.positional_maps(Some(&guides), 8, 8).unwrap();
        let maps64 = model64.positional_maps(Some(&guides), 8, 8).unwrap();

        let (tape, vars, loss) = objective(&model32, model32.params(), &img32, &targets, &maps32);
        let grads = tape.backward(loss).unwrap();
        for (i, v) in vars.iter().enumerate() {
            let analytic: Vec<f64> = grads.get(*v).unwrap().data().iter().map(|&g| g as f64).collect();
            let x: Vec<f64> = model64.params()[i].data().to_vec();
            let fd = super::central_diff(&x, 1e-6, |xi| {
                let mut p = model64.params().to_vec();
                p[i] = Tensor::from_vec(p[i].shape(), xi.to_vec()).unwrap();
                let (tape, _, loss) = objective(&model64, &p, &img64, &targets, &maps64);
                tape.value(loss).data()[0]
            });
            let kind = if i % 2 == 0 { "weight" } else { "bias" };
            out.push((
                format!("{mode}/{}.{kind}", model32.layers()[i / 2].name),
                super::rel_err(&analytic, &fd, 1e-6),
            ));
        }
    }
    out
}

/// Two label maps on one random frame of side at most 16.
pub fn label_pair(rng: &mut impl Rng) -> (LabelMap, LabelMap) {
    let a = super::random_label_map(rng, 16, 6);
    let mut b = LabelMap::new(a.width(), a.height());
    for _ in 0..rng.gen_range(0..7) {
        let id = rng.gen_range(1..8);
        let x0 = rng.gen_range(0..a.width());
        let y0 = rng.gen_range(0..a.height());
        let x1 = rng.gen_range(x0..a.width()) + 1;
        let y1 = rng.gen_range(y0..a.height()) + 1;
        for y in y0..y1 {
            for x in x0..x1 {
                b.set(x, y, id);
            }
        }
    }
    (a, b)
}

#[derive(Debug, Default)]
pub struct MetricAgreement {
    pub rounds: usize,
    /// Rounds where sbd, best_dice or dic differ from the oracle at all.
    pub exact_mismatches: usize,
    /// Rounds where exactly one side reports AP as undefined.
    pub defined_mismatches: usize,
    /// Largest AP difference, per threshold and for the mean.
    pub max_ap_diff: f64,
}

/// Compares sbd, dic and COCO AP against the brute-force oracles on
/// `rounds` random pairs of label maps (1–3 images per AP round, coarse
/// scores so ties occur).
pub fn metric_agreement(seed: u64, rounds: usize) -> MetricAgreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MetricAgreement {
        rounds,
        ..MetricAgreement::default()
    };
    for _ in 0..rounds {
        let (p, g) = label_pair(&mut rng);
        if sbd(&p, &g, Overlap::Dice).unwrap() != super::sbd(&p, &g)
            || best_dice(&p, &g, Overlap::Dice).unwrap() != super::best_dice(&p, &g)
            || dic(&p, &g) != super::dic(&p, &g)
        {
            out.exact_mismatches += 1;
        }
        let mut ours = vec![];
        let mut oracle = vec![];
        let mut push = |p: &LabelMap, g: &LabelMap, rng: &mut ChaCha8Rng| {
            let sets_p = super::pixel_sets(p);
            let scores: BTreeMap<u32, f64> = sets_p.keys().map(|&id| (id, rng.gen_range(0..4) as f64 / 4.0)).collect();
            ours.push(ApImage::from_labels(p, &scores, g));
            oracle.push(super::ApCase {
                preds: sets_p.into_iter().map(|(id, s)| (s, scores[&id])).collect(),
                gts: super::pixel_sets(g).into_values().collect(),
            });
        };
        push(&p, &g, &mut rng);
        for _ in 0..rng.gen_range(0..3) {
            let (p2, g2) = label_pair(&mut rng);
            push(&p2, &g2, &mut rng);
        }
        let got = ap_per_threshold(&ours, &coco_thresholds(), AREA_ALL);
        match (got, super::coco_ap(&oracle)) {
            (None, None) => {}
            (Some(g), Some((ap, per))) => {
                for (a, b) in g.iter().zip(&per) {
                    out.max_ap_diff = out.max_ap_diff.max((a - b).abs());
                }
                let mean = coco_ap(&ours)[0].unwrap();
                out.max_ap_diff = out.max_ap_diff.max((mean - ap).abs());
            }
            _ => out.defined_mismatches += 1,
        }
    }
    out
}

/// AP50 and AP75 when the only prediction covers 60 of a 10×10 object's
/// pixels and nothing else (IoU 0.6).
pub fn iou_sixty_ap() -> (Option<f64>, Option<f64>) {
    let mut gt = LabelMap::new(10, 10);
    let mut pred = LabelMap::new(10, 10);
    for y in 0..10 {
        for x in 0..10 {
            gt.set(x, y, 1);
            if y < 6 {
                pred.set(x, y, 1);
            }
        }
    }
    let [_, ap50, ap75, ..] = coco_ap(&[ApImage::from_labels(&pred, &BTreeMap::new(), &gt)]);
    (ap50, ap75)
}

/// Mean-shift on `count` mixtures with centers at least 4ε apart and
/// points within ε/4 of their center (in `metric`), ε the default
/// bandwidth. Returns the indices of draws whose component count or
/// partition differs from the truth.
pub fn mixture_failures(seed: u64, count: usize, metric: Metric) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MeanShiftConfig {
        metric,
        ..MeanShiftConfig::default()
    };
    let eps = cfg.bandwidth;
    let mut failures = Vec::new();
    for draw in 0..count {
        let dim = rng.gen_range(1..=12);
        let k = rng.gen_range(1..=8);
        // an L2 ball of radius ε/4/√dim lies inside the L1 ball of radius ε/4,
        // and L1 separation is at least L2 separation
        let spread = match metric {
            Metric::Euclidean => eps / 4.0,
            Metric::Manhattan => eps / 4.0 / (dim as f64).sqrt(),
        };
        let (points, truth) = super::separated_mixture(&mut rng, dim, k, 4.0 * eps, spread, (5, 40));
        let r = mean_shift(&points, &cfg).unwrap();
        if r.modes.len() != k || !super::same_partition(&r.assignment, &truth) {
            failures.push(draw);
        }
    }
    failures
}
