use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{Denoiser, EpsModel};
use super::schedule::NoiseSchedule;
use crate::codec::LatentVideo;
use crate::error::{Error, Result};

/// `z_t = √ᾱ_t·z0 + √(1−ᾱ_t)·ε`.
pub fn forward_diffuse(z0: &LatentVideo, t: usize, eps: &Array3<f64>, sched: &NoiseSchedule) -> Result<LatentVideo> {
    if z0.z.dim() != eps.dim() {
        return Err(Error::ShapeMismatch(format!(
            "latent {:?} vs noise {:?}",
            z0.z.dim(),
            eps.dim()
        )));
    }
    sched.check_t(t, 0, sched.steps())?;
    let ab = sched.alpha_bar(t);
    Ok(z0.with_data(&z0.z * ab.sqrt() + eps * (1.0 - ab).sqrt()))
}

pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix-style finalizer so neighbouring (step, item) pairs decorrelate
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Timestep uniform on `1..=T` and a standard-normal noise tensor, both from `seed`.
pub fn draw_noise(seed: u64, shape: (usize, usize, usize), sched: &NoiseSchedule) -> (usize, Array3<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(1..=sched.steps());
    let eps = Array3::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng));
    (t, eps)
}

pub fn training_loss<M: EpsModel + ?Sized>(
    model: &M,
    z0: &LatentVideo,
    cond: &Array2<f64>,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    if cond.nrows() == 0 {
        return Err(Error::EmptyText);
    }
    let (t, eps) = draw_noise(seed, z0.z.dim(), sched);
    let zt = forward_diffuse(z0, t, &eps, sched)?;
    let eps_hat = model.predict(&zt, t, cond)?;
    let diff = eps_hat - &eps;
    Ok(diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64)
}

#[derive(Debug, Clone)]
pub struct Example {
    pub latent: LatentVideo,
    pub cond: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            lr: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    /// Mean ε-loss of each optimizer step's mini-batch.
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn first(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Mean over a trailing window, less noisy than the last entry.
    pub fn tail_mean(&self, window: usize) -> Option<f64> {
        let n = self.losses.len();
        if n == 0 {
            return None;
        }
        let w = window.clamp(1, n);
        Some(self.losses[n - w..].iter().sum::<f64>() / w as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{l:.10e}\n"));
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch Adam on the ε-loss. Each epoch visits the dataset in a seeded
/// permutation; the noise for item `j` at step `s` comes from `(seed, s, j)`.
pub fn train(model: &mut Denoiser, data: &[Example], cfg: &TrainConfig) -> Result<LossCurve> {
    if data.is_empty() {
        return Err(Error::param("dataset", "must not be empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::param("batch_size", "must be positive"));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::param("lr", "must be positive and finite"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, u64::MAX, 0));
    let mut adam = Adam::new(model.num_params());
    let mut grad = vec![0.0; model.num_params()];
    let mut curve = LossCurve::default();
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut total = 0.0;
            for (j, &idx) in batch.iter().enumerate() {
                let ex = &data[idx];
                let (t, eps) = draw_noise(mix_seed(cfg.seed, step, j as u64), ex.latent.z.dim(), &model.schedule);
                total += model.loss_and_grad(&ex.latent, &ex.cond, t, &eps, &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let loss = total * scale;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    step: step as usize,
                    loss,
                });
            }
            curve.losses.push(loss);
            adam.update(&mut model.params, &grad, cfg.lr);
            step += 1;
        }
    }
    Ok(curve)
}
