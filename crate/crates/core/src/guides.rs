//! Harmonic guide functions and their fitting.
//!
//! A guide is `f(x, y) = sin(freq_x * x / W + freq_y * y / H + phase)` over a
//! `W`×`H` frame. The guided embedding of an object is the vector of guide
//! means over its pixels; guides are fitted so that every pair of objects in
//! the same training image ends up at least `margin` apart in L1.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};
use crate::label::LabelMap;

/// Parameters of one sine guide. Frequencies are in radians across the
/// normalized frame, so `freq_x = 2π` is one period over the width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuideParams {
    pub freq_x: f64,
    pub freq_y: f64,
    pub phase: f64,
}

impl GuideParams {
    pub const fn new(freq_x: f64, freq_y: f64, phase: f64) -> Self {
        Self {
            freq_x,
            freq_y,
            phase,
        }
    }

    #[inline]
    fn argument(&self, u: f64, v: f64) -> f64 {
        self.freq_x * u + self.freq_y * v + self.phase
    }
}

/// An ordered family of `n` guides together with the separation margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideSet {
    params: Vec<GuideParams>,
    margin: f64,
}

impl GuideSet {
    pub fn new(params: Vec<GuideParams>, margin: f64) -> Result<Self> {
        if params.is_empty() {
            return Err(domain!("a guide set needs at least one guide"));
        }
        if !(margin > 0.0) || !margin.is_finite() {
            return Err(domain!("margin must be positive and finite, got {margin}"));
        }
        if params
            .iter()
            .any(|p| !(p.freq_x.is_finite() && p.freq_y.is_finite() && p.phase.is_finite()))
        {
            return Err(domain!("guide parameters must be finite"));
        }
        Ok(Self { params, margin })
    }

    /// Guides with frequencies drawn uniformly from `freq_range` and phases
    /// from `[0, 2π)`.
    pub fn random(n: usize, margin: f64, freq_range: (f64, f64), seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(n, margin, freq_range, &mut rng)
    }

    fn random_with(n: usize, margin: f64, freq_range: (f64, f64), rng: &mut impl Rng) -> Result<Self> {
        let (lo, hi) = freq_range;
        if !(lo < hi) {
            return Err(domain!("empty frequency range ({lo}, {hi})"));
        }
        let params = (0..n)
            .map(|_| {
                let freq_x = rng.gen_range(lo..hi);
                let freq_y = rng.gen_range(lo..hi);
                let phase = rng.gen_range(0.0..TAU);
                GuideParams::new(freq_x, freq_y, phase)
            })
            .collect();
        Self::new(params, margin)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.params.len()
    }

    #[inline]
    pub fn margin(&self) -> f64 {
        self.margin
    }

    #[inline]
    pub fn params(&self) -> &[GuideParams] {
        &self.params
    }

    /// SHA-256 over the little-endian bytes of `n`, `margin` and every
    /// parameter. Used to tie checkpoints to the guides they were trained on.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.params.len() as u64).to_le_bytes());
        h.update(self.margin.to_le_bytes());
        for p in &self.params {
            h.update(p.freq_x.to_le_bytes());
            h.update(p.freq_y.to_le_bytes());
            h.update(p.phase.to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Guided embedding of one object: the per-guide means.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectEmbedding {
    pub values: Vec<f64>,
}

impl ObjectEmbedding {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l1(&self, other: &ObjectEmbedding) -> Result<f64> {
        if self.len() != other.len() {
            return Err(domain!(
                "embedding lengths differ: {} vs {}",
                self.len(),
                other.len()
            ));
        }
        Ok(l1_distance(&self.values, &other.values))
    }
}

/// A non-empty set of pixels inside a `width`×`height` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSet {
    pixels: Vec<(usize, usize)>,
    width: usize,
    height: usize,
}

impl PixelSet {
    pub fn new(pixels: Vec<(usize, usize)>, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(domain!("frame must be non-empty, got {width}x{height}"));
        }
        if pixels.is_empty() {
            return Err(domain!("pixel set is empty"));
        }
        if let Some(&(x, y)) = pixels.iter().find(|&&(x, y)| x >= width || y >= height) {
            return Err(domain!("pixel ({x}, {y}) outside {width}x{height} frame"));
        }
        Ok(Self {
            pixels,
            width,
            height,
        })
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn frame(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Normalized coordinates `(x / W, y / H)` of every pixel.
    fn normalized(&self) -> (Vec<f64>, Vec<f64>) {
        let w = self.width as f64;
        let h = self.height as f64;
        self.pixels
            .iter()
            .map(|&(x, y)| (x as f64 / w, y as f64 / h))
            .unzip()
    }
}

/// Value of guide `g` at pixel `(x, y)` of a `frame = (W, H)` image.
pub fn eval_guide(g: &GuideParams, x: f64, y: f64, frame: (usize, usize)) -> Result<f64> {
    let (w, h) = frame;
    if w == 0 || h == 0 {
        return Err(domain!("frame must be non-empty, got {w}x{h}"));
    }
    Ok(g.argument(x / w as f64, y / h as f64).sin())
}

pub fn guided_embedding(set: &PixelSet, guides: &GuideSet) -> ObjectEmbedding {
    let (u, v) = set.normalized();
    ObjectEmbedding {
        values: embed_normalized(&u, &v, guides.params()),
    }
}

/// L1 hinge `max(0, margin - |a - b|_1)`.
pub fn pair_hinge(a: &ObjectEmbedding, b: &ObjectEmbedding, margin: f64) -> Result<f64> {
    let d = a.l1(b)?;
    Ok((margin - d).max(0.0))
}

/// Gradient of `pair_hinge(e(a), e(b), margin)` with respect to every guide's
/// `[freq_x, freq_y, phase]`.
pub fn hinge_gradient(a: &PixelSet, b: &PixelSet, guides: &GuideSet) -> Vec<[f64; 3]> {
    let (ua, va) = a.normalized();
    let (ub, vb) = b.normalized();
    let ja = embed_with_jacobian(&ua, &va, guides.params());
    let jb = embed_with_jacobian(&ub, &vb, guides.params());
    let mut grad = vec![[0.0; 3]; guides.n()];
    accumulate_hinge_gradient(&ja, &jb, guides.margin(), 1.0, &mut grad);
    grad
}

/// Pairwise hinge loss over every intra-image pair: the sum over images of the
/// per-image mean hinge. Images with fewer than two instances contribute 0.
pub fn sweep_loss(maps: &[LabelMap], guides: &GuideSet) -> f64 {
    instance_table(maps)
        .iter()
        .map(|img| image_sweep_loss(img, guides))
        .sum()
}

/// An intra-image pair closer than the margin.
#[derive(Debug, Clone, PartialEq)]
pub struct Collision {
    pub image: usize,
    pub ids: (u32, u32),
    pub distance: f64,
}

/// Every intra-image pair with L1 distance below the margin, ascending by
/// distance (ties by image, then ids).
pub fn collision_report(maps: &[LabelMap], guides: &GuideSet) -> Vec<Collision> {
    let mut out = Vec::new();
    for (image, map) in maps.iter().enumerate() {
        let table = ImageInstances::from_map(map);
        let emb: Vec<Vec<f64>> = table
            .coords
            .iter()
            .map(|(u, v)| embed_normalized(u, v, guides.params()))
            .collect();
        for i in 0..emb.len() {
            for j in i + 1..emb.len() {
                let d = l1_distance(&emb[i], &emb[j]);
                if d < guides.margin() {
                    out.push(Collision {
                        image,
                        ids: (table.ids[i], table.ids[j]),
                        distance: d,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.image.cmp(&b.image))
            .then(a.ids.cmp(&b.ids))
    });
    out
}

/// Settings for [`fit_guides`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuideFitConfig {
    pub n: usize,
    pub margin: f64,
    pub step_size: f64,
    pub batch_pairs: usize,
    pub max_iters: usize,
    /// Iterations between exhaustive sweeps (the stopping test).
    pub check_every: usize,
    /// Initialization interval for both frequencies.
    pub init_freq: (f64, f64),
}

impl Default for GuideFitConfig {
    fn default() -> Self {
        Self {
            n: 12,
            margin: 0.5,
            step_size: 0.1,
            batch_pairs: 64,
            max_iters: 20_000,
            check_every: 50,
            init_freq: (0.0, 50.0),
        }
    }
}

/// One entry of the fitting trace, recorded at every sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitTracePoint {
    pub iter: usize,
    /// Mean minibatch loss over the iterations since the previous sweep;
    /// `None` for the sweep of the initial parameters.
    pub batch_loss: Option<f64>,
    pub sweep_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuideFit {
    /// Parameters with the lowest sweep loss seen.
    pub guides: GuideSet,
    pub sweep_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<FitTracePoint>,
}

/// Fits guide parameters by plain SGD on minibatches of random intra-image
/// pairs (image uniform, then unordered pair uniform within it). Stops as
/// soon as an exhaustive sweep reaches zero loss.
pub fn fit_guides(train: &[LabelMap], config: &GuideFitConfig, seed: u64) -> Result<GuideFit> {
    if config.n == 0 || config.batch_pairs == 0 || config.check_every == 0 {
        return Err(domain!("n, batch_pairs and check_every must be positive"));
    }
    let table: Vec<ImageInstances> = instance_table(train)
        .into_iter()
        .filter(|img| img.ids.len() >= 2)
        .collect();
    if table.is_empty() {
        return Err(Error::Unsatisfiable(format!(
            "none of the {} training images holds two or more instances",
            train.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut guides = GuideSet::random_with(config.n, config.margin, config.init_freq, &mut rng)?;

    let sweep = |g: &GuideSet| table.iter().map(|img| image_sweep_loss(img, g)).sum::<f64>();
    let mut best_loss = sweep(&guides);
    let mut best = guides.clone();
    let mut trace = vec![FitTracePoint {
        iter: 0,
        batch_loss: None,
        sweep_loss: best_loss,
    }];
    let mut iterations = 0;
    let mut window = 0.0;
    let mut grad = vec![[0.0; 3]; config.n];
    let inv_batch = 1.0 / config.batch_pairs as f64;

    while best_loss > 0.0 && iterations < config.max_iters {
        grad.iter_mut().for_each(|g| *g = [0.0; 3]);
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_pairs {
            let img = &table[rng.gen_range(0..table.len())];
            let k = img.ids.len();
            let a = rng.gen_range(0..k);
            let mut b = rng.gen_range(0..k - 1);
            if b >= a {
                b += 1;
            }
            let ja = embed_with_jacobian(&img.coords[a].0, &img.coords[a].1, guides.params());
            let jb = embed_with_jacobian(&img.coords[b].0, &img.coords[b].1, guides.params());
            batch_loss += accumulate_hinge_gradient(&ja, &jb, config.margin, inv_batch, &mut grad);
        }
        window += batch_loss * inv_batch;
        for (p, g) in guides.params.iter_mut().zip(&grad) {
            p.freq_x -= config.step_size * g[0];
            p.freq_y -= config.step_size * g[1];
            p.phase -= config.step_size * g[2];
        }
        iterations += 1;

        if iterations % config.check_every == 0 || iterations == config.max_iters {
            let since = match trace.last() {
                Some(t) => iterations - t.iter,
                None => iterations,
            };
            let loss = sweep(&guides);
            trace.push(FitTracePoint {
                iter: iterations,
                batch_loss: Some(window / since as f64),
                sweep_loss: loss,
            });
            window = 0.0;
            if loss < best_loss {
                best_loss = loss;
                best = guides.clone();
            }
        }
    }

    Ok(GuideFit {
        guides: best,
        sweep_loss: best_loss,
        iterations,
        converged: best_loss == 0.0,
        trace,
    })
}

pub(crate) fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn embed_normalized(u: &[f64], v: &[f64], params: &[GuideParams]) -> Vec<f64> {
    let inv = 1.0 / u.len() as f64;
    params
        .iter()
        .map(|p| {
            let s: f64 = u.iter().zip(v).map(|(&a, &b)| p.argument(a, b).sin()).sum();
            s * inv
        })
        .collect()
}

/// Embedding and its per-guide derivatives `[d/dfreq_x, d/dfreq_y, d/dphase]`.
struct EmbeddingJacobian {
    values: Vec<f64>,
    jac: Vec<[f64; 3]>,
}

fn embed_with_jacobian(u: &[f64], v: &[f64], params: &[GuideParams]) -> EmbeddingJacobian {
    let inv = 1.0 / u.len() as f64;
    let mut values = Vec::with_capacity(params.len());
    let mut jac = Vec::with_capacity(params.len());
    for p in params {
        let (mut s, mut cu, mut cv, mut c) = (0.0, 0.0, 0.0, 0.0);
        for (&a, &b) in u.iter().zip(v) {
            let (sn, cs) = p.argument(a, b).sin_cos();
            s += sn;
            cu += cs * a;
            cv += cs * b;
            c += cs;
        }
        values.push(s * inv);
        jac.push([cu * inv, cv * inv, c * inv]);
    }
    EmbeddingJacobian { values, jac }
}

/// Adds `weight * d hinge / d params` into `grad` and returns the hinge value.
fn accumulate_hinge_gradient(
    a: &EmbeddingJacobian,
    b: &EmbeddingJacobian,
    margin: f64,
    weight: f64,
    grad: &mut [[f64; 3]],
) -> f64 {
    let d = l1_distance(&a.values, &b.values);
    let loss = margin - d;
    if loss <= 0.0 {
        return 0.0;
    }
    for (i, g) in grad.iter_mut().enumerate() {
        let s = sign(a.values[i] - b.values[i]);
        if s == 0.0 {
            continue;
        }
        for ((gk, ja), jb) in g.iter_mut().zip(&a.jac[i]).zip(&b.jac[i]) {
            *gk -= weight * s * (ja - jb);
        }
    }
    loss
}

struct ImageInstances {
    ids: Vec<u32>,
    coords: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ImageInstances {
    fn from_map(map: &LabelMap) -> Self {
        let w = map.width() as f64;
        let h = map.height() as f64;
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        for (id, px) in map.instances() {
            ids.push(id);
            coords.push(
                px.iter()
                    .map(|&(x, y)| (x as f64 / w, y as f64 / h))
                    .unzip(),
            );
        }
        Self { ids, coords }
    }
}

fn instance_table(maps: &[LabelMap]) -> Vec<ImageInstances> {
    maps.iter().map(ImageInstances::from_map).collect()
}

fn image_sweep_loss(img: &ImageInstances, guides: &GuideSet) -> f64 {
    let k = img.ids.len();
    if k < 2 {
        return 0.0;
    }
    let emb: Vec<Vec<f64>> = img
        .coords
        .iter()
        .map(|(u, v)| embed_normalized(u, v, guides.params()))
        .collect();
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += (guides.margin() - l1_distance(&emb[i], &emb[j])).max(0.0);
        }
    }
    total / (k * (k - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};

    fn set(px: &[(usize, usize)], w: usize, h: usize) -> PixelSet {
        PixelSet::new(px.to_vec(), w, h).unwrap()
    }

    #[test]
    fn constant_guides() {
        let up = GuideParams::new(0.0, 0.0, FRAC_PI_2);
        let zero = GuideParams::new(0.0, 0.0, 0.0);
        for &(x, y) in &[(0.0, 0.0), (3.0, 7.0), (10.0, 1.0)] {
            assert_eq!(eval_guide(&up, x, y, (16, 16)).unwrap(), 1.0);
            assert_eq!(eval_guide(&zero, x, y, (16, 16)).unwrap(), 0.0);
        }
    }

    #[test]
    fn quarter_period_pixel() {
        let g = GuideParams::new(2.0 * PI, 0.0, 0.0);
        let v = eval_guide(&g, 1.0, 0.0, (4, 4)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_frame_is_domain_error() {
        let g = GuideParams::new(1.0, 1.0, 0.0);
        assert!(matches!(eval_guide(&g, 0.0, 0.0, (0, 4)), Err(Error::Domain(_))));
        assert!(matches!(eval_guide(&g, 0.0, 0.0, (4, 0)), Err(Error::Domain(_))));
    }

    #[test]
    fn pixel_set_validation() {
        assert!(PixelSet::new(vec![], 4, 4).is_err());
        assert!(PixelSet::new(vec![(4, 0)], 4, 4).is_err());
        assert!(PixelSet::new(vec![(0, 0)], 0, 4).is_err());
    }

    #[test]
    fn two_pixel_embedding() {
        let g = GuideSet::new(vec![GuideParams::new(2.0 * PI, 0.0, 0.0)], 0.5).unwrap();
        let e = guided_embedding(&set(&[(1, 0), (2, 0)], 4, 4), &g);
        // (sin(π/2) + sin(π)) / 2
        assert!((e.values[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn all_ones_embedding() {
        let g = GuideSet::new(vec![GuideParams::new(0.0, 0.0, FRAC_PI_2); 5], 0.5).unwrap();
        let e = guided_embedding(&set(&[(0, 0), (3, 2), (1, 1)], 4, 4), &g);
        assert_eq!(e.values, vec![1.0; 5]);
    }

    #[test]
    fn hinge_values() {
        let e = |v: &[f64]| ObjectEmbedding { values: v.to_vec() };
        let a = e(&[0.1, 0.2]);
        assert_eq!(pair_hinge(&a, &a, 0.5).unwrap(), 0.5);
        assert_eq!(pair_hinge(&a, &e(&[0.5, 0.5]), 0.5).unwrap(), 0.0);
        let h = pair_hinge(&a, &e(&[0.2, 0.4]), 0.5).unwrap();
        assert!((h - 0.2).abs() < 1e-15);
        assert!(matches!(pair_hinge(&a, &e(&[0.0]), 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn gradient_zero_on_identical_sets_and_satisfied_margin() {
        let g = GuideSet::random(6, 0.5, (0.0, 50.0), 3).unwrap();
        let a = set(&[(1, 1), (2, 1), (5, 7)], 16, 16);
        assert!(hinge_gradient(&a, &a, &g).iter().all(|v| *v == [0.0; 3]));

        // Constant guides at ±1 place the two sets exactly 2 apart per guide.
        let g = GuideSet::new(
            vec![
                GuideParams::new(PI, 0.0, FRAC_PI_2),
                GuideParams::new(PI, 0.0, FRAC_PI_2),
            ],
            0.5,
        )
        .unwrap();
        let a = set(&[(0, 0)], 2, 2);
        let b = set(&[(1, 0)], 2, 2);
        let ea = guided_embedding(&a, &g);
        let eb = guided_embedding(&b, &g);
        assert!(ea.l1(&eb).unwrap() >= 0.5);
        assert!(hinge_gradient(&a, &b, &g).iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn fit_requires_pairs() {
        let mut m = LabelMap::new(8, 8);
        m.set(1, 1, 1);
        let err = fit_guides(&[m.clone(), m], &GuideFitConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Unsatisfiable(_)));
    }

    #[test]
    fn constant_guides_collide_everywhere() {
        let mut m = LabelMap::new(8, 8);
        m.set(0, 0, 1);
        m.set(4, 4, 2);
        m.set(7, 7, 3);
        let g = GuideSet::new(vec![GuideParams::new(0.0, 0.0, 0.3); 4], 0.5).unwrap();
        let rep = collision_report(&[m], &g);
        assert_eq!(rep.len(), 3);
        assert!(rep.iter().all(|c| c.distance == 0.0));
    }

    #[test]
    fn digest_tracks_parameters() {
        let a = GuideSet::random(4, 0.5, (0.0, 50.0), 1).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.params[2].phase += 1e-12;
        assert_ne!(a.digest(), b.digest());
    }
}
