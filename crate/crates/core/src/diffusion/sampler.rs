//! Deterministic DDIM (η = 0) stepping in the cumulative-`ᾱ` form:
//!
//! ```text
//! x̂0      = (z_t − √(1−ᾱ_t)·ε) / √ᾱ_t
//! z_{t'}  = √ᾱ_{t'}·x̂0 + √(1−ᾱ_{t'})·ε
//! ```
//!
//! The same transition moves toward smaller `t'` (sampling) or larger `t'`
//! (inversion); for a fixed `ε` the two directions are exact inverses.

use ndarray::Array3;

use super::model::EpsModel;
use super::schedule::NoiseSchedule;
use crate::codec::LatentVideo;
use crate::error::{Error, Result};

/// Move `z` from noise level `ᾱ_from` to `ᾱ_to` with a fixed noise estimate.
pub fn ddim_transition(z: &Array3<f64>, eps: &Array3<f64>, ab_from: f64, ab_to: f64) -> Array3<f64> {
    let (sf, nf) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (st, nt) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    let mut out = z.clone();
    ndarray::Zip::from(&mut out).and(eps).for_each(|o, &e| {
        let x0 = (*o - nf * e) / sf;
        *o = st * x0 + nt * e;
    });
    out
}

/// Clean-signal estimate implied by `(z_t, ε̂)`.
pub fn predict_x0(z: &Array3<f64>, eps: &Array3<f64>, alpha_bar: f64) -> Array3<f64> {
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let mut out = z.clone();
    ndarray::Zip::from(&mut out).and(eps).for_each(|o, &e| *o = (*o - n * e) / s);
    out
}

fn check_shapes(z: &Array3<f64>, eps: &Array3<f64>) -> Result<()> {
    if z.dim() != eps.dim() {
        return Err(Error::ShapeMismatch(format!(
            "latent {:?} vs noise {:?}",
            z.dim(),
            eps.dim()
        )));
    }
    Ok(())
}

/// One DDIM step `t → t−1`, `1 ≤ t ≤ T`.
pub fn ddim_step(z: &Array3<f64>, eps: &Array3<f64>, t: usize, sched: &NoiseSchedule) -> Result<Array3<f64>> {
    sched.check_t(t, 1, sched.steps())?;
    check_shapes(z, eps)?;
    Ok(ddim_transition(z, eps, sched.alpha_bar(t), sched.alpha_bar(t - 1)))
}

/// One DDIM inversion step `t → t+1`, `0 ≤ t ≤ T−1`.
pub fn ddim_invert_step(z: &Array3<f64>, eps: &Array3<f64>, t: usize, sched: &NoiseSchedule) -> Result<Array3<f64>> {
    sched.check_t(t, 0, sched.steps() - 1)?;
    check_shapes(z, eps)?;
    Ok(ddim_transition(z, eps, sched.alpha_bar(t), sched.alpha_bar(t + 1)))
}

/// Uniform sub-sequence `0 = t_0 < t_1 < … < t_n = T`.
pub fn timesteps(sched: &NoiseSchedule, n_steps: usize) -> Result<Vec<usize>> {
    let total = sched.steps();
    if n_steps == 0 || n_steps > total {
        return Err(Error::param(
            "n_steps",
            format!("must be in 1..={total}, got {n_steps}"),
        ));
    }
    Ok((0..=n_steps).map(|k| k * total / n_steps).collect())
}

/// Sampling result with every intermediate latent, starting at `z_T`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub final_latent: LatentVideo,
    pub latents: Vec<LatentVideo>,
    pub timesteps: Vec<usize>,
}

/// Run DDIM from `t = T` down to 0 on `n_steps` uniformly spaced timesteps.
pub fn denoise<M: EpsModel + ?Sized>(
    model: &M,
    z_init: &LatentVideo,
    cond: &ndarray::Array2<f64>,
    sched: &NoiseSchedule,
    n_steps: usize,
) -> Result<Trajectory> {
    let ts = timesteps(sched, n_steps)?;
    let mut z = z_init.clone();
    let mut latents = vec![z.clone()];
    let mut visited = vec![ts[n_steps]];
    for k in (1..=n_steps).rev() {
        let (t, t_prev) = (ts[k], ts[k - 1]);
        let eps = model.predict(&z, t, cond)?;
        check_shapes(&z.z, &eps)?;
        z = z.with_data(ddim_transition(&z.z, &eps, sched.alpha_bar(t), sched.alpha_bar(t_prev)));
        latents.push(z.clone());
        visited.push(t_prev);
    }
    Ok(Trajectory {
        final_latent: z,
        latents,
        timesteps: visited,
    })
}

/// DDIM inversion from `t = 0` up to `T`. The step `t_k → t_{k+1}` evaluates
/// the model at the destination timestep `t_{k+1}`, so it pairs with the
/// sampling step `t_{k+1} → t_k` that [`denoise`] takes.
pub fn invert<M: EpsModel + ?Sized>(
    model: &M,
    z0: &LatentVideo,
    cond: &ndarray::Array2<f64>,
    sched: &NoiseSchedule,
    n_steps: usize,
) -> Result<Trajectory> {
    let ts = timesteps(sched, n_steps)?;
    let mut z = z0.clone();
    let mut latents = vec![z.clone()];
    for k in 0..n_steps {
        let (t, t_next) = (ts[k], ts[k + 1]);
        let eps = model.predict(&z, t_next, cond)?;
        check_shapes(&z.z, &eps)?;
        z = z.with_data(ddim_transition(&z.z, &eps, sched.alpha_bar(t), sched.alpha_bar(t_next)));
        latents.push(z.clone());
    }
    Ok(Trajectory {
        final_latent: z,
        latents,
        timesteps: ts,
    })
}
