//! Geometry-only and hybrid (geometry + stiffness) convolutional β-VAEs.
//!
//! Encoder: four stride-2 3×3 convolutions (50 → 25 → 13 → 7 → 4) with leaky
//! ReLU, flattened and mapped to `mu` / `logvar`. The hybrid encoder also maps
//! the normalized 9-component stiffness through one affine layer and
//! concatenates it with the geometry features. Both share the same decoder:
//! affine to `4·4·C`, four stride-2 transposed convolutions mirroring the
//! encoder, logistic output.

use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_atomic, Dataset, SplitSpec, CELL_PIXELS, CELL_SIZE};
use crate::error::{Error, Result};
use crate::homogenize::{normalize_stiffness, MaterialModel, StiffnessStats};
use crate::latent::LatentStats;
use crate::nn::{
    channels_to_rows, leaky_relu, leaky_relu_backward, rows_to_channels, sigmoid, Adam, Conv,
    ConvCache, Dense, Geom, Param, Real,
};

const LEAK: f64 = 0.2;
const HE_GAIN: f64 = 1.386_750_490_563_073; // sqrt(2 / (1 + 0.2²))
const LINEAR_GAIN: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Geometry,
    Hybrid,
}

impl Architecture {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(Architecture::Geometry),
            "hybrid" => Ok(Architecture::Hybrid),
            other => Err(Error::invalid(format!(
                "unknown architecture `{other}` (expected geometry or hybrid)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Geometry => "geometry",
            Architecture::Hybrid => "hybrid",
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer widths of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub channels: [usize; 4],
    pub latent_dim: usize,
    pub stiffness_embed: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            channels: [32, 64, 128, 256],
            latent_dim: 16,
            stiffness_embed: 16,
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience_epochs: usize,
    /// Minimum absolute decrease of the best test loss that counts as progress.
    pub min_delta: f64,
    pub beta: f64,
    pub latent_dim: usize,
    pub image_width: usize,
    pub split: SplitSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            max_epochs: 200,
            patience_epochs: 10,
            min_delta: 1e-6,
            beta: 1.0,
            latent_dim: 16,
            image_width: CELL_SIZE,
            split: SplitSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `β · D / W`.
    pub fn beta_norm(&self) -> f64 {
        self.beta * self.latent_dim as f64 / self.image_width as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch size and max epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.beta >= 0.0) {
            return Err(Error::invalid(
                "learning rate must be positive and beta non-negative",
            ));
        }
        if self.latent_dim == 0 || self.image_width != CELL_SIZE {
            return Err(Error::invalid(format!(
                "latent dim must be positive and image width {CELL_SIZE}"
            )));
        }
        Ok(())
    }
}

/// Encoder posterior for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// `(total, mse, kl)` of one sample: pixel-mean squared error plus
/// `beta_norm` times the KL divergence to the standard normal.
pub fn loss(
    recon: &[f32],
    target: &[f32],
    dist: &LatentDistribution,
    beta_norm: f64,
) -> Result<(f64, f64, f64)> {
    if recon.len() != target.len() || recon.is_empty() || dist.mu.len() != dist.logvar.len() {
        return Err(Error::invalid("loss inputs have mismatched shapes"));
    }
    let mse = recon
        .iter()
        .zip(target)
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum::<f64>()
        / recon.len() as f64;
    let kl = kl_divergence(&dist.mu, &dist.logvar);
    Ok((mse + beta_norm * kl, mse, kl))
}

/// `−½ Σ (1 + logvar − mu² − exp(logvar))`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Batch loss averaged over samples, plus the raw squared-error sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub mse: f64,
    pub kl: f64,
    pub sse: f64,
}

/// The VAE network, generic over the scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct Vae<T = f32> {
    pub architecture: Architecture,
    pub shape: NetShape,
    encoder: Vec<Conv<T>>,
    to_mu: Dense<T>,
    to_logvar: Dense<T>,
    stiffness: Option<Dense<T>>,
    decoder_fc: Dense<T>,
    decoder: Vec<Conv<T>>,
}

struct EncoderTrace<T> {
    caches: Vec<ConvCache<T>>,
    outputs: Vec<Vec<T>>,
    features: Vec<T>,
    stiffness_in: Option<Vec<T>>,
    mu: Vec<T>,
    logvar: Vec<T>,
}

struct DecoderTrace<T> {
    fc_out: Vec<T>,
    caches: Vec<ConvCache<T>>,
    outputs: Vec<Vec<T>>,
}

impl<T: Real> Vae<T> {
    /// Deterministic initialization from `seed`.
    pub fn new(architecture: Architecture, shape: NetShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = shape.channels;
        let mut sides = [CELL_SIZE; 5];
        for i in 0..4 {
            sides[i + 1] = Geom::down(sides[i]).small;
        }
        let ins = [1, c[0], c[1], c[2]];
        let encoder = (0..4)
            .map(|i| Conv::new(ins[i], c[i], Geom::down(sides[i]), false, HE_GAIN, &mut rng))
            .collect();
        let flat = c[3] * sides[4] * sides[4];
        let feat = match architecture {
            Architecture::Geometry => flat,
            Architecture::Hybrid => flat + shape.stiffness_embed,
        };
        let to_mu = Dense::new(feat, shape.latent_dim, LINEAR_GAIN, &mut rng);
        let to_logvar = Dense::new(feat, shape.latent_dim, LINEAR_GAIN, &mut rng);
        let stiffness = (architecture == Architecture::Hybrid)
            .then(|| Dense::new(9, shape.stiffness_embed, LINEAR_GAIN, &mut rng));
        let decoder_fc = Dense::new(shape.latent_dim, flat, HE_GAIN, &mut rng);
        let outs = [c[2], c[1], c[0], 1];
        let dins = [c[3], c[2], c[1], c[0]];
        let decoder = (0..4)
            .map(|i| {
                let gain = if i == 3 { LINEAR_GAIN } else { HE_GAIN };
                Conv::new(
                    dins[i],
                    outs[i],
                    Geom::down(sides[3 - i]),
                    true,
                    gain,
                    &mut rng,
                )
            })
            .collect();
        Self {
            architecture,
            shape,
            encoder,
            to_mu,
            to_logvar,
            stiffness,
            decoder_fc,
            decoder,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.shape.latent_dim
    }

    fn bottleneck(&self) -> (usize, usize) {
        (
            self.shape.channels[3],
            self.encoder[3].out_side() * self.encoder[3].out_side(),
        )
    }

    /// All parameters with stable names, encoder first.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.weight"), &l.weight));
            out.push((format!("encoder.{i}.bias"), &l.bias));
        }
        out.push(("to_mu.weight".into(), &self.to_mu.weight));
        out.push(("to_mu.bias".into(), &self.to_mu.bias));
        out.push(("to_logvar.weight".into(), &self.to_logvar.weight));
        out.push(("to_logvar.bias".into(), &self.to_logvar.bias));
        if let Some(s) = &self.stiffness {
            out.push(("stiffness.weight".into(), &s.weight));
            out.push(("stiffness.bias".into(), &s.bias));
        }
        out.extend(self.decoder_params_named());
        out
    }

    fn decoder_params_named(&self) -> Vec<(String, &Param<T>)> {
        let mut out = vec![
            ("decoder_fc.weight".to_string(), &self.decoder_fc.weight),
            ("decoder_fc.bias".to_string(), &self.decoder_fc.bias),
        ];
        for (i, l) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{i}.weight"), &l.weight));
            out.push((format!("decoder.{i}.bias"), &l.bias));
        }
        out
    }

    /// Mutable parameters in [`Vae::named_params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for l in &mut self.encoder {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.to_mu.weight);
        out.push(&mut self.to_mu.bias);
        out.push(&mut self.to_logvar.weight);
        out.push(&mut self.to_logvar.bias);
        if let Some(s) = &mut self.stiffness {
            out.push(&mut s.weight);
            out.push(&mut s.bias);
        }
        out.push(&mut self.decoder_fc.weight);
        out.push(&mut self.decoder_fc.bias);
        for l in &mut self.decoder {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn decoder_params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = vec![&mut self.decoder_fc.weight, &mut self.decoder_fc.bias];
        for l in &mut self.decoder {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    /// Copies decoder weights from another model with the same widths.
    pub fn copy_decoder_from(&mut self, other: &Vae<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Incompatible("decoder widths differ".into()));
        }
        self.decoder_fc = other.decoder_fc.clone();
        self.decoder = other.decoder.clone();
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }

    fn check_stiffness<'a>(
        &self,
        stiffness: Option<&'a [T]>,
        batch: usize,
    ) -> Result<Option<&'a [T]>> {
        match (self.architecture, stiffness) {
            (Architecture::Hybrid, Some(s)) if s.len() == batch * 9 => Ok(Some(s)),
            (Architecture::Hybrid, Some(_)) => Err(Error::invalid(
                "stiffness batch must hold 9 values per sample",
            )),
            (Architecture::Hybrid, None) => {
                Err(Error::invalid("hybrid model requires stiffness input"))
            }
            (Architecture::Geometry, _) => Ok(None),
        }
    }

    fn encode_trace(
        &self,
        images: &[T],
        stiffness: Option<&[T]>,
        batch: usize,
    ) -> Result<EncoderTrace<T>> {
        if images.len() != batch * CELL_PIXELS {
            return Err(Error::invalid("image batch has the wrong size"));
        }
        let stiffness = self.check_stiffness(stiffness, batch)?;
        let slope = T::of(LEAK);
        let mut caches = Vec::with_capacity(4);
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(4);
        for layer in &self.encoder {
            let input = outputs.last().map(|v| v.as_slice()).unwrap_or(images);
            let (mut y, cache) = layer.forward(input, batch);
            leaky_relu(&mut y, slope);
            caches.push(cache);
            outputs.push(y);
        }
        let (ch, sp) = self.bottleneck();
        let flat = channels_to_rows(outputs.last().unwrap(), ch, batch, sp);
        let features = match (&self.stiffness, stiffness) {
            (Some(layer), Some(s)) => {
                let emb = layer.forward(s, batch);
                let (f, e) = (ch * sp, layer.outputs);
                let mut feat = Vec::with_capacity(batch * (f + e));
                for b in 0..batch {
                    feat.extend_from_slice(&flat[b * f..(b + 1) * f]);
                    feat.extend_from_slice(&emb[b * e..(b + 1) * e]);
                }
                feat
            }
            _ => flat,
        };
        let mu = self.to_mu.forward(&features, batch);
        let logvar = self.to_logvar.forward(&features, batch);
        Ok(EncoderTrace {
            caches,
            outputs,
            features,
            stiffness_in: stiffness.map(|s| s.to_vec()),
            mu,
            logvar,
        })
    }

    fn decode_trace(&self, z: &[T], batch: usize) -> DecoderTrace<T> {
        let slope = T::of(LEAK);
        let mut fc_out = self.decoder_fc.forward(z, batch);
        leaky_relu(&mut fc_out, slope);
        let (ch, sp) = self.bottleneck();
        let mut x = rows_to_channels(&fc_out, ch, batch, sp);
        let mut caches = Vec::with_capacity(4);
        let mut outputs = Vec::with_capacity(4);
        for (i, layer) in self.decoder.iter().enumerate() {
            let (mut y, cache) = layer.forward(&x, batch);
            if i + 1 < self.decoder.len() {
                leaky_relu(&mut y, slope);
            } else {
                sigmoid(&mut y);
            }
            caches.push(cache);
            outputs.push(y.clone());
            x = y;
        }
        DecoderTrace {
            fc_out,
            caches,
            outputs,
        }
    }

    /// Encoder posterior parameters `(mu, logvar)`, each `batch × D`.
    pub fn encode(
        &self,
        images: &[T],
        stiffness: Option<&[T]>,
        batch: usize,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let t = self.encode_trace(images, stiffness, batch)?;
        Ok((t.mu, t.logvar))
    }

    /// Decoded images, `batch × 2500`, values in (0, 1).
    pub fn decode(&self, z: &[T], batch: usize) -> Result<Vec<T>> {
        if z.len() != batch * self.latent_dim() {
            return Err(Error::invalid("latent batch has the wrong size"));
        }
        Ok(self.decode_trace(z, batch).outputs.pop().unwrap())
    }

    /// Forward pass and loss. `noise` (batch × D standard normals) selects the
    /// reparameterized sample `z = mu + exp(logvar/2)·noise`; `None` decodes
    /// `mu`. With `backward`, parameter gradients are overwritten with
    /// the gradient of the batch-mean total loss.
    pub fn forward_loss(
        &mut self,
        images: &[T],
        stiffness: Option<&[T]>,
        noise: Option<&[T]>,
        beta_norm: f64,
        batch: usize,
        backward: bool,
    ) -> Result<BatchLoss> {
        let d = self.latent_dim();
        let enc = self.encode_trace(images, stiffness, batch)?;
        let half = T::of(0.5);
        let z: Vec<T> = match noise {
            Some(eps) => {
                if eps.len() != batch * d {
                    return Err(Error::invalid("noise batch has the wrong size"));
                }
                (0..batch * d)
                    .map(|i| enc.mu[i] + (enc.logvar[i] * half).exp() * eps[i])
                    .collect()
            }
            None => enc.mu.clone(),
        };
        let dec = self.decode_trace(&z, batch);
        let recon = dec.outputs.last().unwrap();

        let mut sse = 0.0;
        for (r, x) in recon.iter().zip(images) {
            let e = (*r - *x).to_f64().unwrap();
            sse += e * e;
        }
        let mut kl = 0.0;
        for i in 0..batch * d {
            let (m, lv) = (enc.mu[i].to_f64().unwrap(), enc.logvar[i].to_f64().unwrap());
            kl += -0.5 * (1.0 + lv - m * m - lv.exp());
        }
        let mse = sse / (batch * CELL_PIXELS) as f64;
        let kl = kl / batch as f64;
        let out = BatchLoss {
            total: mse + beta_norm * kl,
            mse,
            kl,
            sse,
        };
        if backward {
            self.backward(images, noise, beta_norm, batch, &enc, &dec, &z);
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &mut self,
        images: &[T],
        noise: Option<&[T]>,
        beta_norm: f64,
        batch: usize,
        enc: &EncoderTrace<T>,
        dec: &DecoderTrace<T>,
        z: &[T],
    ) {
        for p in self.params_mut() {
            p.zero_grad();
        }
        let slope = T::of(LEAK);
        let d = self.latent_dim();
        let recon = dec.outputs.last().unwrap();
        let scale = T::of(2.0 / (batch * CELL_PIXELS) as f64);
        // through the logistic output
        let mut grad: Vec<T> = recon
            .iter()
            .zip(images)
            .map(|(y, x)| scale * (*y - *x) * *y * (T::one() - *y))
            .collect();
        for i in (0..self.decoder.len()).rev() {
            if i + 1 < self.decoder.len() {
                leaky_relu_backward(&dec.outputs[i], &mut grad, slope);
            }
            grad = self.decoder[i]
                .backward(&dec.caches[i], &grad, batch, true)
                .unwrap();
        }
        let (ch, sp) = self.bottleneck();
        let mut dfc = channels_to_rows(&grad, ch, batch, sp);
        leaky_relu_backward(&dec.fc_out, &mut dfc, slope);
        let dz = self.decoder_fc.backward(z, &dfc, batch, true).unwrap();

        let kl_scale = T::of(beta_norm / batch as f64);
        let half = T::of(0.5);
        let mut dmu = vec![T::zero(); batch * d];
        let mut dlv = vec![T::zero(); batch * d];
        for i in 0..batch * d {
            let (m, lv) = (enc.mu[i], enc.logvar[i]);
            dmu[i] = dz[i] + kl_scale * m;
            let sample_term = match noise {
                Some(eps) => dz[i] * half * (lv * half).exp() * eps[i],
                None => T::zero(),
            };
            dlv[i] = sample_term + kl_scale * half * (lv.exp() - T::one());
        }
        let df_mu = self
            .to_mu
            .backward(&enc.features, &dmu, batch, true)
            .unwrap();
        let df_lv = self
            .to_logvar
            .backward(&enc.features, &dlv, batch, true)
            .unwrap();
        let dfeat: Vec<T> = df_mu.iter().zip(&df_lv).map(|(a, b)| *a + *b).collect();

        let flat = ch * sp;
        let dflat = match (&mut self.stiffness, &enc.stiffness_in) {
            (Some(layer), Some(s)) => {
                let e = layer.outputs;
                let mut dflat = Vec::with_capacity(batch * flat);
                let mut demb = Vec::with_capacity(batch * e);
                for b in 0..batch {
                    let row = &dfeat[b * (flat + e)..(b + 1) * (flat + e)];
                    dflat.extend_from_slice(&row[..flat]);
                    demb.extend_from_slice(&row[flat..]);
                }
                layer.backward(s, &demb, batch, false);
                dflat
            }
            _ => dfeat,
        };
        let mut grad = rows_to_channels(&dflat, ch, batch, sp);
        for i in (0..self.encoder.len()).rev() {
            leaky_relu_backward(&enc.outputs[i], &mut grad, slope);
            match self.encoder[i].backward(&enc.caches[i], &grad, batch, i > 0) {
                Some(g) => grad = g,
                None => break,
            }
        }
    }
}

/// One epoch of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub train_kl: f64,
    pub train_r2: f64,
    pub test_loss: f64,
    pub test_mse: f64,
    pub test_kl: f64,
    pub test_r2: f64,
    pub test_pixel_accuracy: f64,
    pub seconds: f64,
}

/// Patience-based stopping on a loss that must drop by at least `min_delta`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `loss` for `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Pixel R² (about the global target mean) and thresholded pixel accuracy.
pub fn reconstruction_scores(recon: &[f32], target: &[f32]) -> (f64, f64) {
    let mut acc = RegressionAccumulator::default();
    acc.add(recon, target);
    (acc.r_squared(), acc.pixel_accuracy())
}

#[derive(Debug, Clone, Default)]
struct RegressionAccumulator {
    sse: f64,
    sum: f64,
    sum_sq: f64,
    count: f64,
    correct: f64,
}

impl RegressionAccumulator {
    fn add(&mut self, recon: &[f32], target: &[f32]) {
        for (r, t) in recon.iter().zip(target) {
            let (r, t) = (*r as f64, *t as f64);
            self.sse += (r - t) * (r - t);
            self.sum += t;
            self.sum_sq += t * t;
            self.count += 1.0;
            if (r >= 0.5) == (t >= 0.5) {
                self.correct += 1.0;
            }
        }
    }

    fn r_squared(&self) -> f64 {
        let sst = self.sum_sq - self.sum * self.sum / self.count;
        if sst > 0.0 {
            1.0 - self.sse / sst
        } else if self.sse == 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn pixel_accuracy(&self) -> f64 {
        self.correct / self.count.max(1.0)
    }
}

/// Encoder inputs prepared once per dataset.
pub(crate) struct Prepared {
    pub images: Vec<f32>,
    pub stiffness: Option<Vec<f32>>,
    pub len: usize,
}

impl Prepared {
    pub fn new(data: &Dataset, arch: Architecture, stats: &StiffnessStats) -> Self {
        let images = data
            .records
            .iter()
            .flat_map(|r| r.cell.pixels().iter().copied())
            .collect();
        let stiffness = (arch == Architecture::Hybrid).then(|| {
            data.records
                .iter()
                .flat_map(|r| normalize_stiffness(&r.stiffness, stats).map(|v| v as f32))
                .collect()
        });
        Self {
            images,
            stiffness,
            len: data.len(),
        }
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f32>, Option<Vec<f32>>) {
        let mut images = Vec::with_capacity(idx.len() * CELL_PIXELS);
        for &i in idx {
            images.extend_from_slice(&self.images[i * CELL_PIXELS..(i + 1) * CELL_PIXELS]);
        }
        let stiffness = self.stiffness.as_ref().map(|s| {
            let mut out = Vec::with_capacity(idx.len() * 9);
            for &i in idx {
                out.extend_from_slice(&s[i * 9..(i + 1) * 9]);
            }
            out
        });
        (images, stiffness)
    }
}

/// Deterministic evaluation (z = mu) over a prepared dataset.
struct EvalSummary {
    loss: BatchLoss,
    r2: f64,
    pixel_accuracy: f64,
}

fn evaluate(model: &mut Vae<f32>, data: &Prepared, beta_norm: f64) -> Result<EvalSummary> {
    let mut total = BatchLoss::default();
    let mut acc = RegressionAccumulator::default();
    let chunk = 64;
    let mut start = 0;
    while start < data.len {
        let idx: Vec<usize> = (start..(start + chunk).min(data.len)).collect();
        let (images, stiffness) = data.gather(&idx);
        let enc = model.encode_trace(&images, stiffness.as_deref(), idx.len())?;
        let dec = model.decode_trace(&enc.mu, idx.len());
        let recon = dec.outputs.last().unwrap();
        acc.add(recon, &images);
        let b = idx.len() as f64;
        let mut kl = 0.0;
        for i in 0..enc.mu.len() {
            let (m, lv) = (enc.mu[i] as f64, enc.logvar[i] as f64);
            kl += -0.5 * (1.0 + lv - m * m - lv.exp());
        }
        let sse: f64 = recon
            .iter()
            .zip(&images)
            .map(|(r, x)| ((r - x) as f64).powi(2))
            .sum();
        total.sse += sse;
        total.kl += kl;
        total.mse += sse / CELL_PIXELS as f64;
        let _ = b;
        start += chunk;
    }
    let n = data.len as f64;
    total.mse /= n;
    total.kl /= n;
    total.total = total.mse + beta_norm * total.kl;
    Ok(EvalSummary {
        loss: total,
        r2: acc.r_squared(),
        pixel_accuracy: acc.pixel_accuracy(),
    })
}

/// Everything needed to use a trained model without its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Vae<f32>,
    pub config: TrainConfig,
    pub latent_stats: LatentStats,
    pub stiffness_stats: StiffnessStats,
    pub material: MaterialModel,
    pub dataset_hash: String,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Builds an untrained model.
pub fn build_model(
    architecture: Architecture,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vae<f32>> {
    config.validate()?;
    let shape = NetShape {
        latent_dim: config.latent_dim,
        ..NetShape::default()
    };
    Ok(Vae::new(architecture, shape, seed))
}

/// Sets flush-to-zero and denormals-are-zero on this thread until dropped.
/// Late in training many activations and Adam moments go subnormal, which
/// slows every GEMM by 2-3x on x86.
struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

impl FlushDenormals {
    fn enable() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            let saved = mxcsr();
            set_mxcsr(saved | 0x8040);
            Self { saved }
        }
        #[cfg(not(target_arch = "x86_64"))]
        Self {}
    }
}

impl Drop for FlushDenormals {
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        set_mxcsr(self.saved);
    }
}

#[cfg(target_arch = "x86_64")]
fn mxcsr() -> u32 {
    let mut v: u32 = 0;
    // SAFETY: stmxcsr stores the control word to a valid local
    unsafe { std::arch::asm!("stmxcsr [{}]", in(reg) &mut v, options(nostack)) };
    v
}

#[cfg(target_arch = "x86_64")]
fn set_mxcsr(v: u32) {
    // SAFETY: only the FTZ/DAZ bits differ from the current control word
    unsafe { std::arch::asm!("ldmxcsr [{}]", in(reg) &v, options(nostack, readonly)) };
}

/// Trains `model` with Adam and early stopping on the test loss, then
/// restores the best weights. `dataset_hash` identifies the source dataset.
pub fn train(
    model: Vae<f32>,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    dataset_hash: &str,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<ModelCheckpoint> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::invalid("training and test sets must be non-empty"));
    }
    if model.latent_dim() != config.latent_dim {
        return Err(Error::Incompatible(
            "model latent size differs from the training config".into(),
        ));
    }
    let _ftz = FlushDenormals::enable();
    let mut model = model;
    let stiffness_stats = crate::homogenize::stiffness_stats(train_set)?;
    let arch = model.architecture;
    let train_data = Prepared::new(train_set, arch, &stiffness_stats);
    let test_data = Prepared::new(test_set, arch, &stiffness_stats);
    let beta_norm = config.beta_norm();
    let d = config.latent_dim;

    let mut adam = Adam::<f32>::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stopper = EarlyStopping::new(config.patience_epochs, config.min_delta);
    let mut best_model = model.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_data.len).collect();

    for epoch in 1..=config.max_epochs {
        let started = std::time::Instant::now();
        order.shuffle(&mut rng);
        let mut sums = BatchLoss::default();
        let mut acc = RegressionAccumulator::default();
        for idx in order.chunks(config.batch_size) {
            let b = idx.len();
            let (images, stiffness) = train_data.gather(idx);
            let noise: Vec<f32> = (0..b * d)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let enc_dec = model.forward_loss(
                &images,
                stiffness.as_deref(),
                Some(&noise),
                beta_norm,
                b,
                true,
            )?;
            if !enc_dec.total.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let mut params = model.params_mut();
            adam.step(&mut params);
            let w = b as f64;
            sums.total += enc_dec.total * w;
            sums.mse += enc_dec.mse * w;
            sums.kl += enc_dec.kl * w;
            // R² bookkeeping from the squared-error sum and target moments
            acc.sse += enc_dec.sse;
            for &x in &images {
                let x = x as f64;
                acc.sum += x;
                acc.sum_sq += x * x;
            }
            acc.count += images.len() as f64;
        }
        let n = train_data.len as f64;
        let eval = evaluate(&mut model, &test_data, beta_norm)?;
        if !eval.loss.total.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss: sums.total / n,
            train_mse: sums.mse / n,
            train_kl: sums.kl / n,
            train_r2: acc.r_squared(),
            test_loss: eval.loss.total,
            test_mse: eval.loss.mse,
            test_kl: eval.loss.kl,
            test_r2: eval.r2,
            test_pixel_accuracy: eval.pixel_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "[{arch}] epoch {epoch}: train {:.5} test {:.5} (R² {:.4}, acc {:.4}) {:.1}s",
            record.train_loss,
            record.test_loss,
            record.test_r2,
            record.test_pixel_accuracy,
            record.seconds
        );
        on_epoch(&record);
        history.push(record);
        if stopper.observe(epoch, eval.loss.total) {
            best_model = model.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }

    let latent_stats = crate::latent::latent_stats_for_model(&best_model, &train_data)?;
    Ok(ModelCheckpoint {
        model: best_model,
        config: config.clone(),
        latent_stats,
        stiffness_stats,
        material: train_set.material,
        dataset_hash: dataset_hash.to_string(),
        history,
        best_epoch: stopper.best_epoch(),
    })
}

/// Pixel R² and accuracy of deterministic reconstructions of `data`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReconstructionReport {
    pub r_squared: f64,
    pub pixel_accuracy: f64,
}

pub fn reconstruction_report(
    checkpoint: &ModelCheckpoint,
    data: &Dataset,
) -> Result<ReconstructionReport> {
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let mut model = checkpoint.model.clone();
    let prepared = Prepared::new(data, model.architecture, &checkpoint.stiffness_stats);
    let eval = evaluate(&mut model, &prepared, checkpoint.config.beta_norm())?;
    Ok(ReconstructionReport {
        r_squared: eval.r2,
        pixel_accuracy: eval.pixel_accuracy,
    })
}

const CKPT_MAGIC: &[u8; 8] = b"LMCKPT01";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    architecture: Architecture,
    shape: NetShape,
    config: TrainConfig,
    latent_stats: LatentStats,
    stiffness_stats: StiffnessStats,
    material: MaterialModel,
    dataset_hash: String,
    history: Vec<EpochRecord>,
    best_epoch: usize,
    tensors: Vec<(String, usize)>,
}

impl ModelCheckpoint {
    pub fn architecture(&self) -> Architecture {
        self.model.architecture
    }

    /// `LMCKPT01`, u32 header length, JSON header, then every tensor as
    /// little-endian f32 in header order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.model.named_params();
        let header = CheckpointHeader {
            architecture: self.model.architecture,
            shape: self.model.shape,
            config: self.config.clone(),
            latent_stats: self.latent_stats.clone(),
            stiffness_stats: self.stiffness_stats,
            material: self.material,
            dataset_hash: self.dataset_hash.clone(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            tensors: named
                .iter()
                .map(|(n, p)| (n.clone(), p.value.len()))
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in named {
            for v in &p.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CKPT_MAGIC {
            return Err(Error::format(0, "not a checkpoint file (bad magic)"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_bytes = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::format(12, "truncated checkpoint header"))?;
        let header: CheckpointHeader = serde_json::from_slice(header_bytes).map_err(|e| {
            Error::format(
                12 + e.column() as u64,
                format!("malformed checkpoint header: {e}"),
            )
        })?;
        let mut model = Vae::<f32>::new(header.architecture, header.shape, 0);
        let names: Vec<(String, usize)> = model
            .named_params()
            .iter()
            .map(|(n, p)| (n.clone(), p.value.len()))
            .collect();
        if names != header.tensors {
            return Err(Error::format(
                12,
                "checkpoint tensor table does not match the architecture",
            ));
        }
        let mut offset = 12 + hlen;
        for p in model.params_mut() {
            let len = p.value.len() * 4;
            let chunk = bytes
                .get(offset..offset + len)
                .ok_or_else(|| Error::format(offset as u64, "truncated checkpoint weights"))?;
            for (v, b) in p.value.iter_mut().zip(chunk.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap());
            }
            offset += len;
        }
        if offset != bytes.len() {
            return Err(Error::format(
                offset as u64,
                "trailing bytes after checkpoint weights",
            ));
        }
        Ok(Self {
            model,
            config: header.config,
            latent_stats: header.latent_stats,
            stiffness_stats: header.stiffness_stats,
            material: header.material,
            dataset_hash: header.dataset_hash,
            history: header.history,
            best_epoch: header.best_epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// JSON summary (no weights) for manifests and reports.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "architecture": self.model.architecture,
            "config": self.config,
            "beta_norm": self.config.beta_norm(),
            "latent_stats": self.latent_stats,
            "stiffness_stats": self.stiffness_stats,
            "material": self.material,
            "dataset_hash": self.dataset_hash,
            "epochs": self.history.len(),
            "best_epoch": self.best_epoch,
        })
    }
}
