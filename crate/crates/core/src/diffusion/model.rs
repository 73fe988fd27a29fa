//! Single-block cross-attention ε-predictor.
//!
//! Per patch token `n = frame·P + patch`:
//!
//! ```text
//! u   = c_in(t)·z_t
//! h0  = u·W_in + b_in + pos[patch] + frame[frame] + sin_emb(t)·W_time
//! A   = softmax(h0·W_q · (w·W_k)ᵀ / √a)          (rows over the M words)
//! h1  = h0 + A·(w·W_v)·W_o
//! h2  = temporal mix of h1 across adjacent frames at the same patch
//! h3  = h2 + tanh(h2·W_1 + b_1)·W_2
//! F   = h3·W_out + b_out + u·W_skip
//! ε̂   = a(t)·z_t − b(t)·F
//! ```
//!
//! `a(t)`, `b(t)` and `c_in(t)` come from the skip/output preconditioning of a
//! denoiser `x̂0 = c_skip·x + c_out·F` with data scale `σ_data`, rewritten in
//! ε form. `W_skip` is a full-rank linear path from the scaled input, so
//! denoising directions outside the narrow hidden width stay learnable.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::codec::LatentVideo;
use crate::error::{Error, Result};

/// Anything that predicts the noise in a latent at timestep `t` given text
/// features `cond` (`M×d`).
pub trait EpsModel {
    fn predict(&self, z: &LatentVideo, t: usize, cond: &Array2<f64>) -> Result<Array3<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub text_dim: usize,
    pub patches: usize,
    pub max_frames: usize,
    pub mlp_hidden: usize,
    /// Weight given to the mean of adjacent-frame states; 0 disables mixing.
    pub temporal_mix: f64,
    pub sigma_data: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 48,
            hidden: 32,
            text_dim: 32,
            patches: 256,
            max_frames: 16,
            mlp_hidden: 64,
            temporal_mix: 0.25,
            sigma_data: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum P {
    WIn,
    BIn,
    Pos,
    Frame,
    WTime,
    WQ,
    WK,
    WV,
    WO,
    W1,
    B1,
    W2,
    WOut,
    BOut,
    WSkip,
}

const ORDER: [P; 15] = [
    P::WIn,
    P::BIn,
    P::Pos,
    P::Frame,
    P::WTime,
    P::WQ,
    P::WK,
    P::WV,
    P::WO,
    P::W1,
    P::B1,
    P::W2,
    P::WOut,
    P::BOut,
    P::WSkip,
];

impl P {
    fn name(self) -> &'static str {
        match self {
            P::WIn => "w_in",
            P::BIn => "b_in",
            P::Pos => "pos",
            P::Frame => "frame",
            P::WTime => "w_time",
            P::WQ => "w_q",
            P::WK => "w_k",
            P::WV => "w_v",
            P::WO => "w_o",
            P::W1 => "w_1",
            P::B1 => "b_1",
            P::W2 => "w_2",
            P::WOut => "w_out",
            P::BOut => "b_out",
            P::WSkip => "w_skip",
        }
    }
}

/// Name, shape and offset of one parameter tensor inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

fn layout(cfg: &DenoiserConfig) -> Vec<ParamSpec> {
    let (d, h, e, k) = (cfg.latent_dim, cfg.hidden, cfg.text_dim, cfg.mlp_hidden);
    let mut offset = 0;
    ORDER
        .iter()
        .map(|&p| {
            let (rows, cols) = match p {
                P::WIn => (d, h),
                P::BIn => (1, h),
                P::Pos => (cfg.patches, h),
                P::Frame => (cfg.max_frames, h),
                P::WTime => (h, h),
                P::WQ => (h, h),
                P::WK => (e, h),
                P::WV => (e, h),
                P::WO => (h, h),
                P::W1 => (h, k),
                P::B1 => (1, k),
                P::W2 => (k, h),
                P::WOut => (h, d),
                P::BOut => (1, d),
                P::WSkip => (d, d),
            };
            let spec = ParamSpec {
                name: p.name().to_string(),
                rows,
                cols,
                offset,
            };
            offset += rows * cols;
            spec
        })
        .collect()
}

/// Noise prediction plus the per-frame text-to-patch attention maps.
#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    pub eps_hat: Array3<f64>,
    /// `L×P×M`, each row over words sums to 1.
    pub attention: Array3<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    frames: usize,
    u: Array2<f64>,
    temb: Array1<f64>,
    h0: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    o: Array2<f64>,
    h2: Array2<f64>,
    g: Array2<f64>,
    h3: Array2<f64>,
    b_t: f64,
    cond: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub schedule: NoiseSchedule,
    pub params: Vec<f64>,
    specs: Vec<ParamSpec>,
}

/// Sinusoidal embedding of a timestep.
pub fn time_embedding(t: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut e = Array1::zeros(dim);
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half.max(1) as f64).exp();
        e[2 * i] = (t as f64 * freq).sin();
        e[2 * i + 1] = (t as f64 * freq).cos();
    }
    e
}

/// Frame-mixing coefficients `C` with `h2[f] = Σ_g C[f][g]·h1[g]`.
fn temporal_matrix(frames: usize, mix: f64) -> Array2<f64> {
    let mut c = Array2::zeros((frames, frames));
    for f in 0..frames {
        let neighbors: Vec<usize> = [f.checked_sub(1), (f + 1 < frames).then_some(f + 1)]
            .into_iter()
            .flatten()
            .collect();
        if neighbors.is_empty() || mix == 0.0 {
            c[[f, f]] = 1.0;
            continue;
        }
        c[[f, f]] = 1.0 - mix;
        for &g in &neighbors {
            c[[f, g]] = mix / neighbors.len() as f64;
        }
    }
    c
}

fn apply_frames(c: &Array2<f64>, x: &Array2<f64>, patches: usize) -> Array2<f64> {
    let frames = c.nrows();
    let hidden = x.ncols();
    let x3 = x.view().into_shape_with_order((frames, patches * hidden)).expect("token layout");
    c.dot(&x3)
        .into_shape_with_order((frames * patches, hidden))
        .expect("token layout")
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        if config.hidden < 2 || config.latent_dim == 0 || config.text_dim == 0 {
            return Err(Error::param("config", "dimensions must be positive (hidden ≥ 2)"));
        }
        if !(0.0..1.0).contains(&config.temporal_mix) {
            return Err(Error::param("temporal_mix", "must lie in [0, 1)"));
        }
        if config.sigma_data <= 0.0 {
            return Err(Error::param("sigma_data", "must be positive"));
        }
        let specs = layout(&config);
        let total = specs.last().map(|s| s.offset + s.rows * s.cols).unwrap_or(0);
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (spec, &p) in specs.iter().zip(ORDER.iter()) {
            let std = match p {
                P::BIn | P::B1 | P::BOut | P::WSkip => 0.0,
                P::Pos | P::Frame => 0.1,
                P::WOut => 0.1 / (spec.rows as f64).sqrt(),
                _ => 1.0 / (spec.rows as f64).sqrt(),
            };
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("finite std");
                for v in &mut params[spec.offset..spec.offset + spec.rows * spec.cols] {
                    *v = normal.sample(&mut rng);
                }
            }
        }
        Ok(Self {
            config,
            schedule,
            params,
            specs,
        })
    }

    /// Rebuild from a flat parameter vector (checkpoint loading).
    pub fn from_params(config: DenoiserConfig, schedule: NoiseSchedule, params: Vec<f64>) -> Result<Self> {
        let specs = layout(&config);
        let total = specs.last().map(|s| s.offset + s.rows * s.cols).unwrap_or(0);
        if params.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "config needs {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            schedule,
            params,
            specs,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    fn view(&self, p: P) -> ArrayView2<'_, f64> {
        view_in(&self.specs, &self.params, p)
    }

    fn row(&self, p: P) -> ArrayView1<'_, f64> {
        self.view(p).index_axis_move(Axis(0), 0)
    }

    /// Time-dependent coefficients `(c_in, a, b)` of the preconditioning.
    fn coefficients(&self, t: usize) -> (f64, f64, f64) {
        let ab = self.schedule.alpha_bar(t);
        let sd2 = self.config.sigma_data * self.config.sigma_data;
        let sigma2 = (1.0 - ab) / ab;
        let c_in = 1.0 / ((sigma2 + sd2).sqrt() * ab.sqrt());
        let a = sigma2.sqrt() / (ab.sqrt() * (sigma2 + sd2));
        let b = self.config.sigma_data / (sigma2 + sd2).sqrt();
        (c_in, a, b)
    }

    fn check_inputs(&self, z: &LatentVideo, cond: &Array2<f64>) -> Result<()> {
        let (l, np, d) = z.z.dim();
        let c = &self.config;
        if d != c.latent_dim || np != c.patches {
            return Err(Error::ShapeMismatch(format!(
                "latent {:?} but model expects P={} d_lat={}",
                z.z.dim(),
                c.patches,
                c.latent_dim
            )));
        }
        if l == 0 || l > c.max_frames {
            return Err(Error::ShapeMismatch(format!(
                "{l} frames outside 1..={}",
                c.max_frames
            )));
        }
        if cond.nrows() == 0 || cond.ncols() != c.text_dim {
            return Err(Error::ShapeMismatch(format!(
                "condition {:?} but model expects M≥1 rows of width {}",
                cond.dim(),
                c.text_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, z: &LatentVideo, t: usize, cond: &Array2<f64>) -> Result<(DenoiserOutput, ForwardCache)> {
        self.check_inputs(z, cond)?;
        self.schedule.check_t(t, 0, self.schedule.steps())?;
        let (l, np, d) = z.z.dim();
        let hdim = self.config.hidden;
        let n = l * np;
        let (c_in, a_t, b_t) = self.coefficients(t);
        let zf = z.z.view().into_shape_with_order((n, d)).expect("contiguous latent");
        let u = zf.mapv(|v| v * c_in);

        let temb = time_embedding(t, hdim);
        let tproj = temb.dot(&self.view(P::WTime));
        let mut h0 = u.dot(&self.view(P::WIn));
        let pos = self.view(P::Pos);
        let frame = self.view(P::Frame);
        let b_in = self.row(P::BIn);
        for f in 0..l {
            for p in 0..np {
                let mut row = h0.row_mut(f * np + p);
                row += &b_in;
                row += &pos.row(p);
                row += &frame.row(f);
                row += &tproj;
            }
        }

        let scale = 1.0 / (hdim as f64).sqrt();
        let q = h0.dot(&self.view(P::WQ));
        let k = cond.dot(&self.view(P::WK));
        let v = cond.dot(&self.view(P::WV));
        let mut attn = q.dot(&k.t()) * scale;
        softmax_rows(&mut attn);
        let o = attn.dot(&v);
        let h1 = &h0 + &o.dot(&self.view(P::WO));

        let cmat = temporal_matrix(l, self.config.temporal_mix);
        let h2 = apply_frames(&cmat, &h1, np);
        let mut pre = h2.dot(&self.view(P::W1));
        pre += &self.row(P::B1);
        let g = pre.mapv(f64::tanh);
        let h3 = &h2 + &g.dot(&self.view(P::W2));
        let mut out = h3.dot(&self.view(P::WOut));
        out += &self.row(P::BOut);
        out += &u.dot(&self.view(P::WSkip));

        let eps = &zf * a_t - &out * b_t;
        let eps_hat = eps.into_shape_with_order((l, np, d)).expect("token layout");
        let attention = attn
            .clone()
            .into_shape_with_order((l, np, cond.nrows()))
            .expect("token layout");
        Ok((
            DenoiserOutput { eps_hat, attention },
            ForwardCache {
                frames: l,
                u,
                temb,
                h0,
                q,
                k,
                v,
                attn,
                o,
                h2,
                g,
                h3,
                b_t,
                cond: cond.clone(),
            },
        ))
    }

    /// Accumulate `∂loss/∂θ` into `grad` given `∂loss/∂ε̂`.
    pub fn backward(&self, cache: &ForwardCache, d_eps: &Array3<f64>, grad: &mut [f64]) {
        let (l, np, d) = d_eps.dim();
        let n = l * np;
        let hdim = self.config.hidden;
        let d_out = d_eps
            .view()
            .into_shape_with_order((n, d))
            .expect("contiguous gradient")
            .mapv(|v| -cache.b_t * v);

        let specs = &self.specs;
        let mut acc = |p: P, value: Array2<f64>| {
            let spec = &specs[ORDER.iter().position(|&x| x == p).expect("known parameter")];
            let slot = &mut grad[spec.offset..spec.offset + spec.rows * spec.cols];
            for (g, v) in slot.iter_mut().zip(value.iter()) {
                *g += v;
            }
        };

        acc(P::WOut, cache.h3.t().dot(&d_out));
        acc(P::BOut, d_out.sum_axis(Axis(0)).insert_axis(Axis(0)));
        acc(P::WSkip, cache.u.t().dot(&d_out));
        let dh3 = d_out.dot(&self.view(P::WOut).t());

        acc(P::W2, cache.g.t().dot(&dh3));
        let dg = dh3.dot(&self.view(P::W2).t());
        let dpre = &dg * &cache.g.mapv(|g| 1.0 - g * g);
        acc(P::W1, cache.h2.t().dot(&dpre));
        acc(P::B1, dpre.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let dh2 = &dh3 + &dpre.dot(&self.view(P::W1).t());

        let cmat = temporal_matrix(cache.frames, self.config.temporal_mix);
        let dh1 = apply_frames(&cmat.t().to_owned(), &dh2, np);

        acc(P::WO, cache.o.t().dot(&dh1));
        let d_o = dh1.dot(&self.view(P::WO).t());
        let mut dh0 = dh1;

        let d_attn = d_o.dot(&cache.v.t());
        acc(P::WV, cache.cond.t().dot(&cache.attn.t().dot(&d_o)));
        let inner = (&d_attn * &cache.attn).sum_axis(Axis(1)).insert_axis(Axis(1));
        let scale = 1.0 / (hdim as f64).sqrt();
        let ds = &cache.attn * &(&d_attn - &inner) * scale;
        let dq = ds.dot(&cache.k);
        let dk = ds.t().dot(&cache.q);
        acc(P::WK, cache.cond.t().dot(&dk));
        acc(P::WQ, cache.h0.t().dot(&dq));
        dh0 += &dq.dot(&self.view(P::WQ).t());

        acc(P::WIn, cache.u.t().dot(&dh0));
        let total = dh0.sum_axis(Axis(0));
        acc(P::BIn, total.clone().insert_axis(Axis(0)));
        let tokens = dh0.view().into_shape_with_order((l, np, hdim)).expect("token layout");
        acc(P::Pos, tokens.sum_axis(Axis(0)));
        let mut dframe = Array2::zeros((self.config.max_frames, hdim));
        dframe.slice_mut(s![..l, ..]).assign(&tokens.sum_axis(Axis(1)));
        acc(P::Frame, dframe);
        let dtime = cache
            .temb
            .view()
            .insert_axis(Axis(1))
            .dot(&total.view().insert_axis(Axis(0)));
        acc(P::WTime, dtime);
    }

    /// `(‖ε − ε̂‖² mean, gradient)` for one example at a fixed `(t, ε)`.
    pub fn loss_and_grad(
        &self,
        z0: &LatentVideo,
        cond: &Array2<f64>,
        t: usize,
        eps: &Array3<f64>,
        grad: &mut [f64],
    ) -> Result<f64> {
        let zt = super::train::forward_diffuse(z0, t, eps, &self.schedule)?;
        let (out, cache) = self.forward(&zt, t, cond)?;
        let diff = &out.eps_hat - eps;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
        let d_eps = diff.mapv(|v| 2.0 * v / n);
        self.backward(&cache, &d_eps, grad);
        Ok(loss)
    }
}

fn view_in<'a>(specs: &[ParamSpec], params: &'a [f64], p: P) -> ArrayView2<'a, f64> {
    let spec = &specs[ORDER.iter().position(|&x| x == p).expect("known parameter")];
    ArrayView2::from_shape(
        (spec.rows, spec.cols),
        &params[spec.offset..spec.offset + spec.rows * spec.cols],
    )
    .expect("layout matches buffer")
}

/// Largest relative discrepancy between the analytic gradient of the ε-loss
/// and central differences with step `h`, over every parameter.
pub fn gradient_check(
    model: &Denoiser,
    z0: &LatentVideo,
    cond: &Array2<f64>,
    t: usize,
    eps: &Array3<f64>,
    h: f64,
) -> Result<f64> {
    let mut analytic = vec![0.0; model.num_params()];
    model.loss_and_grad(z0, cond, t, eps, &mut analytic)?;
    let mut probe = model.clone();
    let mut scratch = vec![0.0; model.num_params()];
    let mut worst: f64 = 0.0;
    for i in 0..model.num_params() {
        let base = probe.params[i];
        probe.params[i] = base + h;
        let up = probe.loss_and_grad(z0, cond, t, eps, &mut scratch)?;
        probe.params[i] = base - h;
        let down = probe.loss_and_grad(z0, cond, t, eps, &mut scratch)?;
        probe.params[i] = base;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

impl EpsModel for Denoiser {
    fn predict(&self, z: &LatentVideo, t: usize, cond: &Array2<f64>) -> Result<Array3<f64>> {
        Ok(self.forward(z, t, cond)?.0.eps_hat)
    }
}
