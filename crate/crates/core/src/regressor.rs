//! Keypoint providers.
//!
//! [`oracle_keypoints`] perturbs ground truth with Gaussian noise and is used
//! to study the geometric pipeline in isolation. [`RegressorModel`] is a small
//! fully-connected network (80x80x3 patch -> 20x20 grayscale -> 128 -> 64 -> 14)
//! trained with SGD + momentum on the cross-ratio regularized loss.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix2, Point2, Vector2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cone_model::CR3D;
use crate::error::{Error, Result};
use crate::keypoint_loss::{
    sample_loss, KeypointSet, LossConfig, PatchAffine, KEYPOINT_DIM, PATCH_SIZE,
};
use crate::seed;

pub const CHANNELS: usize = 3;
pub const PATCH_LEN: usize = PATCH_SIZE * PATCH_SIZE * CHANNELS;

/// Side of the grayscale grid fed to the network.
pub const GRID: usize = 20;
const POOL: usize = PATCH_SIZE / GRID;

/// Layer widths, input first.
pub const LAYER_SIZES: [usize; 4] = [GRID * GRID, 128, 64, KEYPOINT_DIM];

/// 80x80 RGB patch, row-major with interleaved channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pixels: Vec<f32>,
    pub patch_to_image: PatchAffine,
}

impl Patch {
    pub fn new(mut pixels: Vec<f32>, patch_to_image: PatchAffine) -> Result<Self> {
        if pixels.len() != PATCH_LEN {
            return Err(Error::InvalidArgument(format!(
                "patch needs {PATCH_LEN} values, got {}",
                pixels.len()
            )));
        }
        for v in &mut pixels {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Patch {
            pixels,
            patch_to_image,
        })
    }

    pub fn black(patch_to_image: PatchAffine) -> Self {
        Patch {
            pixels: vec![0.0; PATCH_LEN],
            patch_to_image,
        }
    }

    pub fn from_rgb8(bytes: &[u8], patch_to_image: PatchAffine) -> Result<Self> {
        Patch::new(
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
            patch_to_image,
        )
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, channel: usize) -> f32 {
        self.pixels[(row * PATCH_SIZE + col) * CHANNELS + channel]
    }

    /// Bilinear sample at continuous patch coordinates (pixel centers at
    /// `+0.5`); black outside the patch.
    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let ax = (fx - x0) as f32;
        let ay = (fy - y0) as f32;
        let mut out = [0.0f32; 3];
        for (dy, wy) in [(0.0, 1.0 - ay), (1.0, ay)] {
            for (dx, wx) in [(0.0, 1.0 - ax), (1.0, ax)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let (cx, cy) = (x0 + dx, y0 + dy);
                if cx < 0.0 || cy < 0.0 || cx >= PATCH_SIZE as f64 || cy >= PATCH_SIZE as f64 {
                    continue;
                }
                for (c, o) in out.iter_mut().enumerate() {
                    *o += w * self.get(cx as usize, cy as usize, c);
                }
            }
        }
        out
    }

    /// Network input: channel mean, 4x4 average pooled, centered on zero.
    pub fn features(&self) -> Vec<f64> {
        let mut out = vec![0.0; GRID * GRID];
        let norm = (POOL * POOL * CHANNELS) as f64;
        for gy in 0..GRID {
            for gx in 0..GRID {
                let mut acc = 0.0f64;
                for row in gy * POOL..(gy + 1) * POOL {
                    let start = (row * PATCH_SIZE + gx * POOL) * CHANNELS;
                    acc += self.pixels[start..start + POOL * CHANNELS]
                        .iter()
                        .map(|&v| v as f64)
                        .sum::<f64>();
                }
                out[gy * GRID + gx] = acc / norm - 0.5;
            }
        }
        out
    }
}

/// Keypoints perturbed by i.i.d. zero-mean Gaussian noise of std `sigma` (patch pixels).
pub fn oracle_keypoints(truth: &KeypointSet, sigma: f64, seed: u64) -> Result<KeypointSet> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(*truth);
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = seed::rng(seed);
    let mut out = *truth;
    for p in &mut out.points {
        p.x += normal.sample(&mut rng);
        p.y += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Parameters of the fully-connected keypoint network, stored flat: for each
/// layer the row-major `out x in` weight block followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    params: Vec<f64>,
}

fn layer_offsets() -> [(usize, usize, usize, usize); 3] {
    let mut offset = 0;
    std::array::from_fn(|l| {
        let (inp, out) = (LAYER_SIZES[l], LAYER_SIZES[l + 1]);
        let w = offset;
        let b = w + inp * out;
        offset = b + out;
        (w, b, inp, out)
    })
}

pub fn parameter_count() -> usize {
    let (_, b, _, out) = layer_offsets()[2];
    b + out
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub input: Vec<f64>,
    pub hidden_pre: [Vec<f64>; 2],
    pub hidden: [Vec<f64>; 2],
    pub output: [f64; KEYPOINT_DIM],
}

impl ForwardPass {
    /// Sign pattern of the hidden pre-activations.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.hidden_pre
            .iter()
            .flat_map(|z| z.iter().map(|&v| v > 0.0))
            .collect()
    }
}

impl RegressorModel {
    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut params = vec![0.0; parameter_count()];
        for (w, b, inp, out) in layer_offsets() {
            let bound = 1.0 / (inp as f64).sqrt();
            for v in &mut params[w..b + out] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        RegressorModel { params }
    }

    pub fn zeros() -> Self {
        RegressorModel {
            params: vec![0.0; parameter_count()],
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_output_bias(&mut self, bias: &[f64; KEYPOINT_DIM]) {
        let (_, b, _, out) = layer_offsets()[2];
        self.params[b..b + out].copy_from_slice(bias);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, input: &[f64]) -> ForwardPass {
        assert_eq!(input.len(), LAYER_SIZES[0]);
        let offsets = layer_offsets();
        let dense = |l: usize, x: &[f64]| -> Vec<f64> {
            let (w, b, inp, out) = offsets[l];
            (0..out)
                .map(|o| {
                    let row = &self.params[w + o * inp..w + (o + 1) * inp];
                    self.params[b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        };
        let relu = |z: &[f64]| z.iter().map(|&v| v.max(0.0)).collect::<Vec<_>>();
        let z1 = dense(0, input);
        let a1 = relu(&z1);
        let z2 = dense(1, &a1);
        let a2 = relu(&z2);
        let out = dense(2, &a2);
        ForwardPass {
            input: input.to_vec(),
            hidden_pre: [z1, z2],
            hidden: [a1, a2],
            output: out.try_into().expect("output width"),
        }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, pass: &ForwardPass, d_output: &[f64; KEYPOINT_DIM], grad: &mut [f64]) {
        let offsets = layer_offsets();
        let activations: [&[f64]; 3] = [&pass.input, &pass.hidden[0], &pass.hidden[1]];
        let mut delta: Vec<f64> = d_output.to_vec();
        for l in (0..3).rev() {
            let (w, b, inp, out) = offsets[l];
            let x = activations[l];
            for o in 0..out {
                let d = delta[o];
                grad[b + o] += d;
                if d != 0.0 {
                    for (g, xi) in grad[w + o * inp..w + (o + 1) * inp].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let pre = &pass.hidden_pre[l - 1];
            let mut prev = vec![0.0; inp];
            for o in 0..out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wv) in prev
                    .iter_mut()
                    .zip(&self.params[w + o * inp..w + (o + 1) * inp])
                {
                    *p += d * wv;
                }
            }
            for (p, z) in prev.iter_mut().zip(pre) {
                if *z <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// Predicted keypoints in patch coordinates; may extrapolate past the patch.
    pub fn predict(&self, patch: &Patch) -> KeypointSet {
        let pass = self.forward(&patch.features());
        KeypointSet::from_flat(&pass.output, patch.patch_to_image)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Checkpoint layout, all little-endian: magic `CONEKP\0\x01`, byte-order
    /// mark `0x0A0B0C0D` (u32), layer count (u32), then per layer `out`, `in`
    /// (u32 each), `out * in` weights and `out` biases (f64).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.params.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&BYTE_ORDER_MARK.to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        for (w, b, inp, n_out) in layer_offsets() {
            out.extend_from_slice(&(n_out as u32).to_le_bytes());
            out.extend_from_slice(&(inp as u32).to_le_bytes());
            for v in &self.params[w..b + n_out] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::format("checkpoint", d);
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        if u32_at(take(4)?) != BYTE_ORDER_MARK {
            return Err(bad("unsupported byte order"));
        }
        if u32_at(take(4)?) != 3 {
            return Err(bad("unexpected layer count"));
        }
        let mut params = Vec::with_capacity(parameter_count());
        for (_, _, inp, n_out) in layer_offsets() {
            let (o, i) = (u32_at(take(4)?) as usize, u32_at(take(4)?) as usize);
            if (o, i) != (n_out, inp) {
                return Err(bad("layer shape mismatch"));
            }
            for chunk in take((o * i + o) * 8)?.chunks_exact(8) {
                params.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
            }
        }
        if !cursor.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let model = RegressorModel { params };
        if !model.is_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CONEKP\0\x01";
const BYTE_ORDER_MARK: u32 = 0x0A0B_0C0D;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub patch: Patch,
    pub truth: KeypointSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub gamma: f64,
    pub cr3d: f64,
    pub seed: u64,
    /// Random brightness/contrast/saturation per sample and epoch.
    pub photometric_jitter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            momentum: 0.9,
            batch_size: 128,
            epochs: 250,
            lr_decay_epochs: vec![75, 100],
            lr_decay_factor: 0.1,
            gamma: 1e-4,
            cr3d: CR3D,
            seed: 0,
            photometric_jitter: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "train config needs learning_rate > 0, batch_size >= 1, gamma >= 0: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&d| epoch >= d).count();
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            cr3d: self.cr3d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub skipped_arms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RegressorModel,
    pub history: Vec<EpochStats>,
}

/// Samples evaluated sequentially by one worker; chunk results are reduced in
/// index order so the sum does not depend on the thread count.
const CHUNK: usize = 16;

pub struct BatchGradient {
    pub loss_sum: f64,
    pub gradient: Vec<f64>,
    pub skipped_arms: u64,
}

/// Sum of per-sample losses and their parameter gradients.
pub fn batch_gradient(
    model: &RegressorModel,
    samples: &[(&[f64], &KeypointSet)],
    cfg: &LossConfig,
) -> BatchGradient {
    let partials: Vec<BatchGradient> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = BatchGradient {
                loss_sum: 0.0,
                gradient: vec![0.0; parameter_count()],
                skipped_arms: 0,
            };
            for (features, truth) in chunk {
                let pass = model.forward(features);
                let pred = KeypointSet::from_flat(&pass.output, truth.patch_to_image);
                let s = sample_loss(&pred, truth, cfg);
                acc.loss_sum += s.loss;
                acc.skipped_arms += s.skipped_arms as u64;
                model.backward(&pass, &s.gradient, &mut acc.gradient);
            }
            acc
        })
        .collect();
    let mut total = BatchGradient {
        loss_sum: 0.0,
        gradient: vec![0.0; parameter_count()],
        skipped_arms: 0,
    };
    for p in partials {
        total.loss_sum += p.loss_sum;
        total.skipped_arms += p.skipped_arms;
        for (t, g) in total.gradient.iter_mut().zip(&p.gradient) {
            *t += g;
        }
    }
    total
}

/// Mean per-patch loss of `model` over `data`.
pub fn evaluate_loss(model: &RegressorModel, data: &[LabeledPatch], cfg: &LossConfig) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let feats: Vec<Vec<f64>> = data.par_iter().map(|d| d.patch.features()).collect();
    let samples: Vec<(&[f64], &KeypointSet)> = feats
        .iter()
        .zip(data)
        .map(|(f, d)| (f.as_slice(), &d.truth))
        .collect();
    batch_gradient(model, &samples, cfg).loss_sum / data.len() as f64
}

/// Mean Euclidean keypoint error in patch pixels.
pub fn mean_keypoint_error(model: &RegressorModel, data: &[LabeledPatch]) -> f64 {
    let total: f64 = data
        .iter()
        .map(|d| {
            let pred = model.predict(&d.patch);
            pred.points
                .iter()
                .zip(&d.truth.points)
                .map(|(p, t)| (p - t).norm())
                .sum::<f64>()
        })
        .sum();
    total / (data.len() * crate::cone_model::NUM_KEYPOINTS) as f64
}

/// Mini-batch SGD with momentum (`v <- mu v + g; w <- w - lr v`) on the mean
/// per-patch loss. Deterministic given `cfg.seed`.
pub fn train(data: &[LabeledPatch], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(
        RegressorModel::new(seed::derive(cfg.seed, "init")),
        data,
        cfg,
    )
}

pub fn train_from(
    mut model: RegressorModel,
    data: &[LabeledPatch],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let loss_cfg = cfg.loss_config();
    let shuffle_seed = seed::derive(cfg.seed, seed::TRAIN);
    let jitter_seed = seed::derive(cfg.seed, seed::AUGMENT);
    let static_features: Option<Vec<Vec<f64>>> =
        (!cfg.photometric_jitter).then(|| data.par_iter().map(|d| d.patch.features()).collect());

    let mut velocity = vec![0.0; parameter_count()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut rng = seed::rng(seed::indexed(shuffle_seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut skipped = 0;

        for batch in order.chunks(cfg.batch_size) {
            let jittered: Vec<Vec<f64>>;
            let feats: Vec<&[f64]> = match &static_features {
                Some(f) => batch.iter().map(|&i| f[i].as_slice()).collect(),
                None => {
                    jittered = batch
                        .par_iter()
                        .map(|&i| {
                            let s = seed::indexed(jitter_seed, (epoch * data.len() + i) as u64);
                            let draw = Photometric::sample(&mut seed::rng(s));
                            draw.apply(&data[i].patch).features()
                        })
                        .collect();
                    jittered.iter().map(|f| f.as_slice()).collect()
                }
            };
            let samples: Vec<(&[f64], &KeypointSet)> = feats
                .into_iter()
                .zip(batch.iter().map(|&i| &data[i].truth))
                .collect();
            let g = batch_gradient(&model, &samples, &loss_cfg);
            loss_sum += g.loss_sum;
            skipped += g.skipped_arms;
            let inv = 1.0 / batch.len() as f64;
            for ((p, v), gi) in model
                .params
                .iter_mut()
                .zip(velocity.iter_mut())
                .zip(&g.gradient)
            {
                *v = cfg.momentum * *v + gi * inv;
                *p -= lr * *v;
            }
        }
        let mean_loss = loss_sum / data.len() as f64;
        if !mean_loss.is_finite() || !model.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "training diverged at epoch {epoch} (lr {lr})"
            )));
        }
        history.push(EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss,
            skipped_arms: skipped,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Brightness, contrast and saturation factors; 1.0 leaves the patch as is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photometric {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Photometric {
    pub const IDENTITY: Photometric = Photometric {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
    };

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Photometric {
            brightness: rng.random_range(0.75..=1.25),
            contrast: rng.random_range(0.75..=1.25),
            saturation: rng.random_range(0.75..=1.25),
        }
    }

    pub fn apply(&self, patch: &Patch) -> Patch {
        if *self == Self::IDENTITY {
            return patch.clone();
        }
        let mut px = patch.pixels.clone();
        let gray = |p: &[f32]| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        if self.brightness != 1.0 {
            let b = self.brightness as f32;
            px.iter_mut().for_each(|v| *v = (*v * b).clamp(0.0, 1.0));
        }
        if self.contrast != 1.0 {
            let c = self.contrast as f32;
            let mean = px.chunks_exact(3).map(gray).sum::<f32>() / (PATCH_SIZE * PATCH_SIZE) as f32;
            px.iter_mut()
                .for_each(|v| *v = (mean + (*v - mean) * c).clamp(0.0, 1.0));
        }
        if self.saturation != 1.0 {
            let s = self.saturation as f32;
            for p in px.chunks_exact_mut(3) {
                let g = gray(p);
                for v in p.iter_mut() {
                    *v = (g + (*v - g) * s).clamp(0.0, 1.0);
                }
            }
        }
        Patch {
            pixels: px,
            patch_to_image: patch.patch_to_image,
        }
    }
}

/// One random geometric + photometric augmentation. Geometry acts about the
/// patch center: `p' = c + scale * R(rotation) * (p - c) + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translation: Vector2<f64>,
    pub photometric: Photometric,
}

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const SCALE_RANGE: (f64, f64) = (0.8, 1.5);
/// Fraction of the patch edge.
pub const MAX_TRANSLATION: f64 = 0.5;

impl AugmentDraw {
    pub fn identity() -> Self {
        AugmentDraw {
            rotation_deg: 0.0,
            scale: 1.0,
            translation: Vector2::zeros(),
            photometric: Photometric::IDENTITY,
        }
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let edge = PATCH_SIZE as f64;
        let t = MAX_TRANSLATION * edge;
        AugmentDraw {
            rotation_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            translation: Vector2::new(rng.random_range(-t..=t), rng.random_range(-t..=t)),
            photometric: Photometric::sample(rng),
        }
    }

    fn linear(&self) -> Matrix2<f64> {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        Matrix2::new(c, -s, s, c) * self.scale
    }

    pub fn map_point(&self, p: &Point2<f64>) -> Point2<f64> {
        let center = Vector2::repeat(PATCH_SIZE as f64 / 2.0);
        Point2::from(center + self.linear() * (p.coords - center) + self.translation)
    }

    fn unmap_point(&self, q: &Point2<f64>, inverse: &Matrix2<f64>) -> Point2<f64> {
        let center = Vector2::repeat(PATCH_SIZE as f64 / 2.0);
        Point2::from(center + inverse * (q.coords - center - self.translation))
    }
}

/// Applies `draw` to pixels (bilinear, black fill) and labels. The
/// photometric part touches pixels only.
pub fn apply_augmentation(
    patch: &Patch,
    truth: &KeypointSet,
    draw: &AugmentDraw,
) -> (Patch, KeypointSet) {
    let inverse = draw
        .linear()
        .try_inverse()
        .expect("rotation times positive scale is invertible");
    let mut pixels = vec![0.0f32; PATCH_LEN];
    for row in 0..PATCH_SIZE {
        for col in 0..PATCH_SIZE {
            let q = Point2::new(col as f64 + 0.5, row as f64 + 0.5);
            let p = draw.unmap_point(&q, &inverse);
            let v = patch.sample(p.x, p.y);
            let at = (row * PATCH_SIZE + col) * CHANNELS;
            pixels[at..at + 3].copy_from_slice(&v);
        }
    }
    let warped = Patch {
        pixels,
        patch_to_image: patch.patch_to_image,
    };
    let mut labels = *truth;
    for p in &mut labels.points {
        *p = draw.map_point(p);
    }
    (draw.photometric.apply(&warped), labels)
}

pub fn augment(patch: &Patch, truth: &KeypointSet, seed: u64) -> (Patch, KeypointSet) {
    let draw = AugmentDraw::sample(&mut seed::rng(seed));
    apply_augmentation(patch, truth, &draw)
}
