use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{sigmoid, ConvGrad, POOL};
use super::{Gradients, Real, SegNet, SegnetError, Tensor};
use crate::exec::Exec;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the loss.
pub const BCE_CLAMP: f64 = 1e-7;

/// One training image with its binary ground-truth mask (row-major h x w).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub mask: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Train on a random `(height, width)` window of every sample instead
    /// of the whole image; both must be multiples of 4.
    pub crop: Option<(usize, usize)>,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            crop: None,
            exec: Exec::default(),
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Mean binary cross-entropy of probabilities against a binary mask.
pub fn bce_loss<T: Real>(prob: &[T], mask: &[u8]) -> f64 {
    let total: f64 = prob
        .iter()
        .zip(mask)
        .map(|(&p, &y)| {
            let p = clamp_prob(p.to_f64());
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / prob.len().max(1) as f64
}

/// Mean BCE of one sample and its gradient with respect to every weight.
pub fn loss_and_gradient<T: Real>(
    net: &SegNet<T>,
    image: &Tensor<T>,
    mask: &[u8],
) -> Result<(f64, Gradients<T>), SegnetError> {
    if mask.len() != image.h * image.w {
        return Err(SegnetError::Shape(format!(
            "mask has {} values for a {}x{} image",
            mask.len(),
            image.h,
            image.w
        )));
    }
    let cache = net.forward_cache(image)?;
    let n = mask.len() as f64;
    let mut probs = Vec::with_capacity(mask.len());
    let mut dlogits = cache.logits.clone();
    for (d, &y) in dlogits.data.iter_mut().zip(mask) {
        let p = sigmoid(*d);
        probs.push(p);
        let pf = p.to_f64();
        // d/dz of the clamped loss: (p - y) / n inside the clamp, 0 outside.
        *d = if pf > BCE_CLAMP && pf < 1.0 - BCE_CLAMP {
            T::from_f64((pf - f64::from(y)) / n)
        } else {
            T::ZERO
        };
    }
    let loss = bce_loss(&probs, mask);
    Ok((loss, net.backward(&cache, &dlogits)))
}

fn validate<T: Real>(net: &SegNet<T>, samples: &[Sample<T>], cfg: &TrainConfig) -> Result<(), SegnetError> {
    net.validate()?;
    if samples.is_empty() {
        return Err(SegnetError::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(SegnetError::InvalidParameter("batch size and learning rate must be positive".into()));
    }
    for s in samples {
        if s.mask.len() != s.image.h * s.image.w {
            return Err(SegnetError::Shape("mask size differs from image".into()));
        }
        if s.mask.iter().any(|&m| m > 1) {
            return Err(SegnetError::NonBinaryMask);
        }
        if let Some((ch, cw)) = cfg.crop {
            if ch == 0 || cw == 0 || ch % POOL != 0 || cw % POOL != 0 || ch > s.image.h || cw > s.image.w {
                return Err(SegnetError::InvalidParameter(format!(
                    "crop {ch}x{cw} must be a positive multiple of 4 inside {}x{}",
                    s.image.h, s.image.w
                )));
            }
        }
    }
    Ok(())
}

fn crop_sample<T: Real>(s: &Sample<T>, crop: Option<(usize, usize)>, rng: &mut ChaCha8Rng) -> Sample<T> {
    let Some((ch, cw)) = crop else {
        return s.clone();
    };
    let y0 = rng.gen_range(0..=s.image.h - ch);
    let x0 = rng.gen_range(0..=s.image.w - cw);
    let mut mask = Vec::with_capacity(ch * cw);
    for y in y0..y0 + ch {
        mask.extend_from_slice(&s.mask[y * s.image.w + x0..][..cw]);
    }
    Sample {
        image: s.image.crop(y0, x0, ch, cw),
        mask,
    }
}

struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(net: &SegNet<T>) -> Self {
        let sizes: Vec<usize> = net.layers.iter().flat_map(|l| [l.kernel.len(), l.bias.len()]).collect();
        Self {
            m: sizes.iter().map(|&n| vec![T::ZERO; n]).collect(),
            v: sizes.iter().map(|&n| vec![T::ZERO; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut SegNet<T>, grad: &Gradients<T>, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let step = T::from_f64(cfg.learning_rate);
        let c1 = T::from_f64(1.0 - cfg.beta1.powi(self.t));
        let c2 = T::from_f64(1.0 - cfg.beta2.powi(self.t));
        let eps = T::from_f64(cfg.epsilon);
        let params = net.layers.iter_mut().flat_map(|l| [&mut l.kernel, &mut l.bias]);
        let grads = grad.iter().flat_map(|g| [&g.kernel, &g.bias]);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::ONE - b1) * g[i];
                v[i] = b2 * v[i] + (T::ONE - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= step * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Mini-batch Adam on mean BCE. Returns the mean training loss of every
/// epoch. Per-sample gradients may be computed in parallel; they are summed
/// in sample order, so the result does not depend on the policy.
pub fn train<T: Real>(net: &mut SegNet<T>, samples: &[Sample<T>], cfg: &TrainConfig) -> Result<Vec<f64>, SegnetError> {
    validate(net, samples, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<Sample<T>> = batch.iter().map(|&i| crop_sample(&samples[i], cfg.crop, &mut rng)).collect();
            let net_ref: &SegNet<T> = net;
            let results = cfg.exec.map(&inputs, |s| loss_and_gradient(net_ref, &s.image, &s.mask));
            let mut total: Gradients<T> = std::array::from_fn(|i| ConvGrad::zeros_like(&net.layers[i]));
            for r in results {
                let (loss, g) = r?;
                epoch_loss += loss;
                for (acc, gi) in total.iter_mut().zip(&g) {
                    acc.add(gi);
                }
            }
            let scale = T::from_f64(1.0 / batch.len() as f64);
            for g in &mut total {
                for v in g.kernel.iter_mut().chain(g.bias.iter_mut()) {
                    *v *= scale;
                }
            }
            adam.step(net, &total, cfg);
        }
        let mean = epoch_loss / samples.len() as f64;
        log::debug!("epoch {} loss {:.6}", epoch + 1, mean);
        losses.push(mean);
    }
    Ok(losses)
}
