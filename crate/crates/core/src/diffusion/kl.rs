//! Closed-form KL between the forward-process posterior
//! `q(x_t | x_{t+1}, x_0)` and a Gaussian reverse transition.

use ndarray::Array3;

use super::model::EpsModel;
use super::sampler::predict_x0;
use super::schedule::NoiseSchedule;
use crate::codec::LatentVideo;
use crate::error::{Error, Result};

/// Mean and (isotropic) variance of `q(x_t | x_{t+1}, x_0)`, `1 ≤ t ≤ T−1`.
pub fn posterior(
    x0: &Array3<f64>,
    x_next: &Array3<f64>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<(Array3<f64>, f64)> {
    sched.check_t(t, 1, sched.steps() - 1)?;
    if x0.dim() != x_next.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x0.dim(), x_next.dim())));
    }
    let ab_t = sched.alpha_bar(t);
    let ab_next = sched.alpha_bar(t + 1);
    let alpha_next = sched.alpha(t + 1);
    let beta_next = 1.0 - alpha_next;
    let c0 = ab_t.sqrt() * beta_next / (1.0 - ab_next);
    let cn = alpha_next.sqrt() * (1.0 - ab_t) / (1.0 - ab_next);
    let mean = x0 * c0 + x_next * cn;
    let var = (1.0 - ab_t) / (1.0 - ab_next) * beta_next;
    Ok((mean, var))
}

/// `KL(q(x_t | x_{t+1}, x_0) ‖ N(μ_θ, var_θ·I))`, averaged over dimensions.
pub fn kl_oracle(
    z0: &Array3<f64>,
    z_next: &Array3<f64>,
    mu_theta: &Array3<f64>,
    var_theta: f64,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<f64> {
    if var_theta.is_nan() || var_theta <= 0.0 {
        return Err(Error::NonPositiveVariance(var_theta));
    }
    let (mean, var) = posterior(z0, z_next, t, sched)?;
    if mean.dim() != mu_theta.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", mean.dim(), mu_theta.dim())));
    }
    Ok(gaussian_kl(&mean, var, mu_theta, var_theta))
}

/// Per-dimension mean of `KL(N(m1, v1) ‖ N(m2, v2))` for isotropic Gaussians.
pub fn gaussian_kl(m1: &Array3<f64>, v1: f64, m2: &Array3<f64>, v2: f64) -> f64 {
    let sq: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m1.len() as f64;
    0.5 * ((v2 / v1).ln() + (v1 + sq) / v2 - 1.0)
}

/// KL at step `t` for the reverse transition a model implies: `x_{t+1}` is
/// drawn by forward diffusion with `eps`, the model's `x̂0` is plugged into the
/// posterior mean, and the posterior variance is used as `var_θ`.
pub fn model_kl<M: EpsModel + ?Sized>(
    model: &M,
    z0: &LatentVideo,
    cond: &ndarray::Array2<f64>,
    eps: &Array3<f64>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let ab_next = sched.alpha_bar(t + 1);
    let z_next = z0.with_data(&z0.z * ab_next.sqrt() + eps * (1.0 - ab_next).sqrt());
    let eps_hat = model.predict(&z_next, t + 1, cond)?;
    let x0_hat = predict_x0(&z_next.z, &eps_hat, ab_next);
    let (mu_theta, var) = posterior(&x0_hat, &z_next.z, t, sched)?;
    kl_oracle(&z0.z, &z_next.z, &mu_theta, var, t, sched)
}
