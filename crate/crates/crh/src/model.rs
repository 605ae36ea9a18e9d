//! The differentiable hash head: a linear layer with tanh activation,
//! trained with a margin-based cosine softmax loss plus a quantization
//! penalty, using analytic gradients and an adaptive-moment optimizer with
//! decoupled weight decay and cosine-annealed learning rate.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::{read_exact, read_u32, BinaryCode};
use crate::data::LabelMask;
use crate::{Error, Result};

/// Norm guard for the cosine denominator; keeps the all-zero pre-activation
/// (fresh zero-weight models) well-defined.
const NORM_EPSILON: f64 = 1e-12;

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Softmax scale `s`.
    pub scale: f64,
    /// Cosine margin applied to target logits.
    pub margin: f64,
    /// Quantization-loss weight; 0 disables the term.
    pub lambda: f64,
}

impl LossConfig {
    pub fn new(scale: f64, margin: f64, lambda: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if !(0.0..1.0).contains(&margin) {
            return Err(Error::InvalidParameter(format!(
                "margin must lie in [0, 1), got {margin}"
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        Ok(Self {
            scale,
            margin,
            lambda,
        })
    }
}

/// Adaptive-moment optimizer hyperparameters. Weight decay is decoupled
/// (applied directly to the weight matrix, never to the bias).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Softmax scale `sqrt(2) * ln(C - 1)` for a `C`-class problem.
pub fn scale_factor(classes: usize) -> Result<f64> {
    if classes < 3 {
        return Err(Error::InvalidParameter(format!(
            "scale factor needs at least 3 classes, got {classes}"
        )));
    }
    Ok(std::f64::consts::SQRT_2 * ((classes - 1) as f64).ln())
}

/// Cosine-annealed learning rate: `initial` at epoch 0, 0 at `total`.
pub fn cosine_lr(initial: f64, epoch: u32, total: u32) -> f64 {
    if total == 0 {
        return initial;
    }
    let t = epoch.min(total) as f64 / total as f64;
    initial * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Cosine similarity between `v` and a `{-1,+1}` center, minus the margin on
/// target classes. The `v` norm is guarded below by `1e-12`.
pub fn margin_sim(v: &[f64], center: &[f64], is_target: bool, margin: f64) -> Result<f64> {
    if v.len() != center.len() {
        return Err(Error::LengthMismatch {
            left: v.len(),
            right: center.len(),
        });
    }
    let dot: f64 = v.iter().zip(center).map(|(a, b)| a * b).sum();
    let norm_v = v
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(NORM_EPSILON);
    let norm_c = center.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm_c == 0.0 {
        return Err(Error::InvalidParameter("zero-norm center".into()));
    }
    let cos = dot / (norm_v * norm_c);
    Ok(if is_target { cos - margin } else { cos })
}

/// Parameters and optimizer state of the linear + tanh hash head.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    dim: usize,
    bits: usize,
    /// Row-major `dim x bits`: `weights[d * bits + k]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    moments: Moments,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
    step: u64,
}

impl Moments {
    fn zeros(dim: usize, bits: usize) -> Self {
        Self {
            m_w: vec![0.0; dim * bits],
            v_w: vec![0.0; dim * bits],
            m_b: vec![0.0; bits],
            v_b: vec![0.0; bits],
            step: 0,
        }
    }
}

impl HashModel {
    /// Seeded initialization: weights uniform in `[-1/sqrt(D), 1/sqrt(D)]`,
    /// bias zero, moments zero.
    pub fn init(dim: usize, bits: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim < 1 || bits < 1 {
            return Err(Error::InvalidParameter(format!(
                "model needs dim >= 1 and bits >= 1, got {dim}, {bits}"
            )));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let weights = (0..dim * bits)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Ok(Self {
            dim,
            bits,
            weights,
            bias: vec![0.0; bits],
            moments: Moments::zeros(dim, bits),
        })
    }

    pub fn from_parameters(
        dim: usize,
        bits: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != dim * bits || bias.len() != bits {
            return Err(Error::InvalidParameter(
                "parameter buffers do not match the declared shape".into(),
            ));
        }
        Ok(Self {
            dim,
            bits,
            weights,
            bias,
            moments: Moments::zeros(dim, bits),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn step_count(&self) -> u64 {
        self.moments.step
    }

    /// Pre-activations `v = W^T x + b` and relaxed codes `h = tanh(v)`.
    pub fn forward(&self, x: &[f32]) -> Result<(Vec<f64>, Vec<f64>)> {
        let v = self.preactivation(x)?;
        let h = v.iter().map(|a| a.tanh()).collect();
        Ok((v, h))
    }

    pub fn preactivation(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::LengthMismatch {
                left: self.dim,
                right: x.len(),
            });
        }
        let mut v = self.bias.clone();
        for (d, &xd) in x.iter().enumerate() {
            let xd = xd as f64;
            let row = &self.weights[d * self.bits..(d + 1) * self.bits];
            for (vk, &w) in v.iter_mut().zip(row) {
                *vk += w * xd;
            }
        }
        Ok(v)
    }

    /// Binarized code `sign(h) = sign(v)` with `sign(0) = +1`.
    pub fn encode(&self, x: &[f32]) -> Result<BinaryCode> {
        Ok(BinaryCode::from_reals(&self.preactivation(x)?))
    }

    pub fn encode_all(&self, samples: &[&[f32]]) -> Result<Vec<BinaryCode>> {
        samples
            .par_iter()
            .map(|x| self.encode(x))
            .collect::<Result<Vec<_>>>()
    }

    /// One adaptive-moment update with bias correction. Decay is applied to
    /// the weights before the moment update and skips the bias.
    pub fn apply_gradients(
        &mut self,
        grad_w: &[f64],
        grad_b: &[f64],
        lr: f64,
        opt: &OptimizerConfig,
    ) -> Result<()> {
        if grad_w.len() != self.weights.len() || grad_b.len() != self.bias.len() {
            return Err(Error::InvalidParameter("gradient shape mismatch".into()));
        }
        if grad_w.iter().chain(grad_b).any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradients".into()));
        }
        self.moments.step += 1;
        let t = self.moments.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);

        if opt.weight_decay != 0.0 {
            let shrink = 1.0 - lr * opt.weight_decay;
            for w in &mut self.weights {
                *w *= shrink;
            }
        }
        let adam = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + opt.epsilon);
        };
        for i in 0..self.weights.len() {
            adam(
                &mut self.weights[i],
                &mut self.moments.m_w[i],
                &mut self.moments.v_w[i],
                grad_w[i],
            );
        }
        for k in 0..self.bias.len() {
            adam(
                &mut self.bias[k],
                &mut self.moments.m_b[k],
                &mut self.moments.v_b[k],
                grad_b[k],
            );
        }
        if self
            .weights
            .iter()
            .chain(&self.bias)
            .any(|p| !p.is_finite())
        {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub ce: f64,
    pub quantization: f64,
    pub total: f64,
}

/// Gradients plus losses and binarized codes of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: BatchLoss,
    pub grad_w: Vec<f64>,
    pub grad_b: Vec<f64>,
    pub signs: Vec<BinaryCode>,
}

struct SampleTerms {
    ce: f64,
    quantization: f64,
    /// dLoss/dv for this sample, without the 1/N batch factor.
    grad_v: Vec<f64>,
    sign: BinaryCode,
}

fn check_batch(features: &[&[f32]], labels: &[&LabelMask], centers: &[BinaryCode]) -> Result<()> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "batch needs matching nonempty features and labels, got {} and {}",
            features.len(),
            labels.len()
        )));
    }
    if centers.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 class centers, got {}",
            centers.len()
        )));
    }
    if let Some(n) = labels.iter().position(|m| m.count() == 0) {
        return Err(Error::InvalidParameter(format!("sample {n} has no labels")));
    }
    Ok(())
}

fn sample_terms(
    model: &HashModel,
    x: &[f32],
    mask: &LabelMask,
    centers: &[Vec<f64>],
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<SampleTerms> {
    let bits = model.bits();
    let (v, h) = model.forward(x)?;
    let label_count = mask.count() as f64;

    let norm_sq: f64 = v.iter().map(|a| a * a).sum();
    let norm = norm_sq.sqrt();
    let guarded = norm.max(NORM_EPSILON);
    let center_norm = (bits as f64).sqrt();

    let classes = centers.len();
    let mut cos = Vec::with_capacity(classes);
    let mut logits = Vec::with_capacity(classes);
    for (c, center) in centers.iter().enumerate() {
        let dot: f64 = v.iter().zip(center).map(|(a, b)| a * b).sum();
        let cosine = dot / (guarded * center_norm);
        cos.push(cosine);
        let margin = if mask.contains(c) { cfg.margin } else { 0.0 };
        logits.push(cfg.scale * (cosine - margin));
    }

    // log-softmax with max subtraction
    let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|l| (l - max_logit).exp()).sum();
    let lse = max_logit + sum_exp.ln();

    let mut ce = 0.0;
    for c in mask.iter() {
        ce -= (logits[c] - lse) / label_count;
    }

    let quantization: f64 = h
        .iter()
        .map(|hk| (hk.abs() - 1.0) * (hk.abs() - 1.0))
        .sum::<f64>()
        / bits as f64;

    let mut grad_v = Vec::new();
    if with_grad {
        // d(ce)/d(logit_c) = p_c - y_c / ||y||_1
        let mut g_logit = Vec::with_capacity(classes);
        for (c, l) in logits.iter().enumerate() {
            let p = (l - lse).exp();
            let y = if mask.contains(c) {
                1.0 / label_count
            } else {
                0.0
            };
            g_logit.push(p - y);
        }
        grad_v = vec![0.0; bits];
        if norm > NORM_EPSILON {
            // dcos_c/dv = (c - cos_c * ||c|| * v / ||v||) / (||v|| * ||c||)
            let mut v_coef = 0.0;
            for (c, center) in centers.iter().enumerate() {
                let gc = g_logit[c];
                let a = gc / (guarded * center_norm);
                for (gv, &ck) in grad_v.iter_mut().zip(center) {
                    *gv += a * ck;
                }
                v_coef += gc * cos[c] / norm_sq;
            }
            for (gv, &vk) in grad_v.iter_mut().zip(&v) {
                *gv -= v_coef * vk;
            }
        } else {
            // guard active: cos = dot / (eps * ||c||) is linear in v
            for (c, center) in centers.iter().enumerate() {
                let a = g_logit[c] / (guarded * center_norm);
                for (gv, &ck) in grad_v.iter_mut().zip(center) {
                    *gv += a * ck;
                }
            }
        }
        for g in &mut grad_v {
            *g *= cfg.scale;
        }
        if cfg.lambda > 0.0 {
            for (k, g) in grad_v.iter_mut().enumerate() {
                let hk = h[k];
                let sign = if hk > 0.0 {
                    1.0
                } else if hk < 0.0 {
                    -1.0
                } else {
                    0.0 // stationary subgradient at h = 0
                };
                *g += cfg.lambda * 2.0 * (hk.abs() - 1.0) * sign * (1.0 - hk * hk) / bits as f64;
            }
        }
    }

    Ok(SampleTerms {
        ce,
        quantization,
        grad_v,
        sign: BinaryCode::from_reals(&v),
    })
}

fn centers_f64(centers: &[BinaryCode]) -> Vec<Vec<f64>> {
    centers.iter().map(|c| c.to_signs_f64()).collect()
}

/// Margin-based cross-entropy over a batch.
pub fn loss_ce(
    model: &HashModel,
    features: &[&[f32]],
    labels: &[&LabelMask],
    centers: &[BinaryCode],
    cfg: &LossConfig,
) -> Result<f64> {
    check_batch(features, labels, centers)?;
    let cf = centers_f64(centers);
    let mut total = 0.0;
    for (x, mask) in features.iter().zip(labels) {
        total += sample_terms(model, x, mask, &cf, cfg, false)?.ce;
    }
    Ok(total / features.len() as f64)
}

/// Quantization loss of a batch of relaxed codes: mean of `(|h| - 1)^2`.
pub fn loss_q(h_batch: &[Vec<f64>]) -> f64 {
    if h_batch.is_empty() {
        return 0.0;
    }
    let bits = h_batch[0].len();
    let sum: f64 = h_batch
        .iter()
        .flat_map(|h| h.iter())
        .map(|hk| (hk.abs() - 1.0) * (hk.abs() - 1.0))
        .sum();
    sum / (h_batch.len() * bits) as f64
}

/// Combined objective: cross-entropy plus `lambda` times quantization.
pub fn loss_total(
    model: &HashModel,
    features: &[&[f32]],
    labels: &[&LabelMask],
    centers: &[BinaryCode],
    cfg: &LossConfig,
) -> Result<BatchLoss> {
    check_batch(features, labels, centers)?;
    let cf = centers_f64(centers);
    let mut ce = 0.0;
    let mut q = 0.0;
    for (x, mask) in features.iter().zip(labels) {
        let t = sample_terms(model, x, mask, &cf, cfg, false)?;
        ce += t.ce;
        q += t.quantization;
    }
    let n = features.len() as f64;
    let ce = ce / n;
    let q = q / n;
    Ok(BatchLoss {
        ce,
        quantization: q,
        total: ce + cfg.lambda * q,
    })
}

/// Analytic gradients of the combined objective for one batch.
///
/// Per-sample terms are computed in parallel and reduced in index order, so
/// results are identical for any worker count.
pub fn backward(
    model: &HashModel,
    features: &[&[f32]],
    labels: &[&LabelMask],
    centers: &[BinaryCode],
    cfg: &LossConfig,
) -> Result<BatchGradients> {
    check_batch(features, labels, centers)?;
    let cf = centers_f64(centers);
    let terms: Vec<SampleTerms> = features
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, mask)| sample_terms(model, x, mask, &cf, cfg, true))
        .collect::<Result<_>>()?;

    let n = features.len();
    let inv_n = 1.0 / n as f64;
    let bits = model.bits();
    let dim = model.dim();

    let mut ce = 0.0;
    let mut q = 0.0;
    let mut grad_b = vec![0.0; bits];
    for t in &terms {
        ce += t.ce;
        q += t.quantization;
        for (gb, gv) in grad_b.iter_mut().zip(&t.grad_v) {
            *gb += inv_n * gv;
        }
    }
    // grad_W rows are independent; parallelizing over d keeps each output
    // element owned by exactly one task.
    let mut grad_w = vec![0.0; dim * bits];
    grad_w
        .par_chunks_mut(bits)
        .enumerate()
        .for_each(|(d, row)| {
            for (x, t) in features.iter().zip(&terms) {
                let xd = x[d] as f64 * inv_n;
                for (rk, gv) in row.iter_mut().zip(&t.grad_v) {
                    *rk += xd * gv;
                }
            }
        });

    let ce = ce * inv_n;
    let q = q * inv_n;
    Ok(BatchGradients {
        loss: BatchLoss {
            ce,
            quantization: q,
            total: ce + cfg.lambda * q,
        },
        grad_w,
        grad_b,
        signs: terms.into_iter().map(|t| t.sign).collect(),
    })
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"CRHM";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleInfo {
    pub initial_lr: f64,
    pub total_epochs: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    dim: usize,
    bits: usize,
    epoch: u32,
    schedule: ScheduleInfo,
    step: u64,
    /// Array name and length, in file order.
    arrays: Vec<(String, usize)>,
}

/// Writes the checkpoint: magic `CRHM`, u32 header length, JSON header, then
/// the raw little-endian f64 arrays in header order.
pub fn write_checkpoint(
    model: &HashModel,
    epoch: u32,
    schedule: &ScheduleInfo,
    writer: &mut impl Write,
) -> Result<()> {
    let header = CheckpointHeader {
        dim: model.dim,
        bits: model.bits,
        epoch,
        schedule: schedule.clone(),
        step: model.moments.step,
        arrays: vec![
            ("weights".into(), model.weights.len()),
            ("bias".into(), model.bias.len()),
            ("m_weights".into(), model.moments.m_w.len()),
            ("v_weights".into(), model.moments.v_w.len()),
            ("m_bias".into(), model.moments.m_b.len()),
            ("v_bias".into(), model.moments.v_b.len()),
        ],
    };
    let header_bytes = serde_json::to_vec(&header)?;
    writer.write_all(&CHECKPOINT_MAGIC)?;
    writer.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    writer.write_all(&header_bytes)?;
    for array in [
        &model.weights,
        &model.bias,
        &model.moments.m_w,
        &model.moments.v_w,
        &model.moments.m_b,
        &model.moments.v_b,
    ] {
        for &v in array {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(reader: &mut impl Read) -> Result<(HashModel, u32, ScheduleInfo)> {
    let mut offset = 0u64;
    let magic = read_exact(reader, 4, &mut offset, "checkpoint magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad checkpoint magic {magic:02x?}, expected {CHECKPOINT_MAGIC:02x?}"),
        });
    }
    let header_len = read_u32(reader, &mut offset, "checkpoint header length")? as usize;
    let header_bytes = read_exact(reader, header_len, &mut offset, "checkpoint header")?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;

    let mut arrays = Vec::with_capacity(header.arrays.len());
    for (name, len) in &header.arrays {
        let bytes = read_exact(reader, len * 8, &mut offset, name)?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push((name.clone(), values));
    }
    let mut take = |name: &str, expect: usize| -> Result<Vec<f64>> {
        let idx = arrays
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format {
                offset: 8,
                message: format!("checkpoint missing array {name:?}"),
            })?;
        let (_, values) = arrays.remove(idx);
        if values.len() != expect {
            return Err(Error::Format {
                offset: 8,
                message: format!(
                    "array {name:?} has {} values, expected {expect}",
                    values.len()
                ),
            });
        }
        Ok(values)
    };
    let wlen = header.dim * header.bits;
    let model = HashModel {
        dim: header.dim,
        bits: header.bits,
        weights: take("weights", wlen)?,
        bias: take("bias", header.bits)?,
        moments: Moments {
            m_w: take("m_weights", wlen)?,
            v_w: take("v_weights", wlen)?,
            m_b: take("m_bias", header.bits)?,
            v_b: take("v_bias", header.bits)?,
            step: header.step,
        },
    };
    Ok((model, header.epoch, header.schedule))
}
