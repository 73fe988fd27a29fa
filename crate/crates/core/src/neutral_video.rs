//! Visual neutralization: attention-weighted factor scores per patch,
//! restored to pixel resolution and used to blur the editing region.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::diffusion::train::forward_diffuse;
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::hash::ContentHasher;
use crate::neutral_text::TextFactorScore;
use crate::video::{VideoClip, CHANNELS};

/// Raw per-patch scores `m·z_T`, shaped `L×Hp×Wp`.
pub fn attention_scores(attn: &Array3<f64>, z: &TextFactorScore, grid_h: usize, grid_w: usize) -> Result<Array3<f64>> {
    let (l, p, m) = attn.dim();
    if m != z.z.len() {
        return Err(Error::ShapeMismatch(format!(
            "attention over {m} words but {} factor scores",
            z.z.len()
        )));
    }
    if p != grid_h * grid_w {
        return Err(Error::ShapeMismatch(format!(
            "{p} patches do not form a {grid_h}x{grid_w} grid"
        )));
    }
    let zt = ndarray::Array1::from(z.z.clone());
    let flat = attn
        .view()
        .into_shape_with_order((l * p, m))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?
        .dot(&zt);
    Ok(flat
        .into_shape_with_order((l, grid_h, grid_w))
        .expect("patch grid"))
}

/// Stretch the scores of the whole video onto `[0, 1]`: the smallest entry
/// maps to 0 and the largest to 1. A constant positive field maps to 1 and an
/// all-zero field stays zero.
pub fn normalize_scores(scores: &Array3<f64>) -> Array3<f64> {
    let max = scores.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Array3::zeros(scores.dim());
    }
    let min = scores.iter().cloned().fold(max, f64::min).max(0.0);
    let range = max - min;
    if range <= 1e-12 * max {
        return Array3::from_elem(scores.dim(), 1.0);
    }
    scores.mapv(|v| ((v - min) / range).clamp(0.0, 1.0))
}

/// Normalized patch scores.
pub fn visual_factor_score(attn: &Array3<f64>, z: &TextFactorScore, grid_h: usize, grid_w: usize) -> Result<Array3<f64>> {
    Ok(normalize_scores(&attention_scores(attn, z, grid_h, grid_w)?))
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Source sample position of output pixel `i` when resizing `n_in → n_out`
/// with pixel-center alignment.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5
}

fn resize_axis_weights(n_in: usize, n_out: usize, cubic: bool) -> Vec<Vec<(usize, f64)>> {
    let clamp = |k: isize| k.clamp(0, n_in as isize - 1) as usize;
    (0..n_out)
        .map(|i| {
            let x = source_coord(i, n_in, n_out);
            let x0 = x.floor();
            let t = x - x0;
            let x0 = x0 as isize;
            if cubic {
                let w = catmull_rom(t);
                (0..4).map(|k| (clamp(x0 - 1 + k as isize), w[k])).collect()
            } else {
                vec![(clamp(x0), 1.0 - t), (clamp(x0 + 1), t)]
            }
        })
        .collect()
}

fn resize(grid: &Array3<f64>, h: usize, w: usize, cubic: bool) -> Array3<f64> {
    let (l, gh, gw) = grid.dim();
    let wy = resize_axis_weights(gh, h, cubic);
    let wx = resize_axis_weights(gw, w, cubic);
    let mut out = Array3::zeros((l, h, w));
    for f in 0..l {
        let g = grid.index_axis(Axis(0), f);
        // rows first, then columns
        let mut tmp = Array2::<f64>::zeros((gh, w));
        for r in 0..gh {
            for (x, taps) in wx.iter().enumerate() {
                tmp[[r, x]] = taps.iter().map(|&(k, c)| c * g[[r, k]]).sum();
            }
        }
        for (y, taps) in wy.iter().enumerate() {
            for x in 0..w {
                out[[f, y, x]] = taps.iter().map(|&(k, c)| c * tmp[[k, x]]).sum();
            }
        }
    }
    out
}

/// Per-frame Catmull-Rom bicubic upsampling with clamped edges, then clamp to `[0, 1]`.
pub fn upsample_scores(grid: &Array3<f64>, h: usize, w: usize) -> Result<Array3<f64>> {
    let (_, gh, gw) = grid.dim();
    if h < gh || w < gw {
        return Err(Error::InvalidDimension(format!(
            "cannot upsample {gh}x{gw} to smaller {h}x{w}"
        )));
    }
    Ok(resize(grid, h, w, true).mapv(|v| v.clamp(0.0, 1.0)))
}

/// Bilinear counterpart of [`upsample_scores`], kept for comparison.
pub fn upsample_bilinear(grid: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
    resize(grid, h, w, false)
}

/// Zero every entry strictly below `tau`.
pub fn threshold_scores(scores: &Array3<f64>, tau: f64) -> Result<Array3<f64>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::param("tau", format!("{tau} outside [0, 1]")));
    }
    Ok(scores.mapv(|v| if v < tau { 0.0 } else { v }))
}

/// Pixel-resolution visual factor scores.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFactorScore {
    /// `L×H×W` in `[0, 1]`.
    pub z_v: Array3<f64>,
    pub patch_scores: Array3<f64>,
    pub tau: f64,
}

impl VisualFactorScore {
    pub fn zeros(frames: usize, h: usize, w: usize, grid_h: usize, grid_w: usize) -> Self {
        Self {
            z_v: Array3::zeros((frames, h, w)),
            patch_scores: Array3::zeros((frames, grid_h, grid_w)),
            tau: 0.0,
        }
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        let (l, hh, ww) = self.z_v.dim();
        h.u64(l as u64).u64(hh as u64).u64(ww as u64).f64s(self.z_v.iter());
        h.finish()
    }

    pub fn support_fraction(&self) -> f64 {
        self.z_v.iter().filter(|&&v| v > 0.0).count() as f64 / self.z_v.len().max(1) as f64
    }
}

/// score → normalize → upsample → threshold.
pub fn compute_visual_scores(
    attn: &Array3<f64>,
    z: &TextFactorScore,
    grid_h: usize,
    grid_w: usize,
    h: usize,
    w: usize,
    tau: f64,
) -> Result<VisualFactorScore> {
    let patch_scores = visual_factor_score(attn, z, grid_h, grid_w)?;
    let up = upsample_scores(&patch_scores, h, w)?;
    Ok(VisualFactorScore {
        z_v: threshold_scores(&up, tau)?,
        patch_scores,
        tau,
    })
}

/// Normalized discrete Gaussian with radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", format!("{sigma} must be positive")));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / sum).collect())
}

/// Mirror an out-of-range index back into `0..n` (edge sample repeated).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Separable per-frame Gaussian blur with reflected edges.
pub fn gaussian_blur(video: &VideoClip, sigma: f64) -> Result<VideoClip> {
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as isize;
    let (l, h, w, c) = video.data.dim();
    let mut tmp = ndarray::Array4::<f64>::zeros((l, h, w, c));
    let mut out = ndarray::Array4::<f64>::zeros((l, h, w, c));
    for f in 0..l {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let xx = reflect(x as isize + k as isize - r, w);
                        acc += kv * video.data[[f, y, xx, ch]];
                    }
                    tmp[[f, y, x, ch]] = acc;
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let yy = reflect(y as isize + k as isize - r, h);
                        acc += kv * tmp[[f, yy, x, ch]];
                    }
                    out[[f, y, x, ch]] = acc;
                }
            }
        }
    }
    VideoClip::new(out)
}

/// `V_n = z_V ∘ G_σ(V) + (1 − z_V) ∘ V`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralVideo {
    pub video: VideoClip,
    pub sigma: f64,
    pub provenance: NeutralVideoProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeutralVideoProvenance {
    pub video_hash: String,
    pub score_hash: String,
    pub sigma: f64,
}

pub fn make_neutral_video(video: &VideoClip, z_v: &Array3<f64>, sigma: f64) -> Result<NeutralVideo> {
    let (l, h, w, _) = video.data.dim();
    if z_v.dim() != (l, h, w) {
        return Err(Error::ShapeMismatch(format!(
            "scores {:?} vs video {:?}",
            z_v.dim(),
            (l, h, w)
        )));
    }
    let blurred = gaussian_blur(video, sigma)?;
    let mut out = video.data.clone();
    for ((f, y, x), &z) in z_v.indexed_iter() {
        if z == 0.0 {
            continue;
        }
        for c in 0..CHANNELS {
            out[[f, y, x, c]] = z * blurred.data[[f, y, x, c]] + (1.0 - z) * video.data[[f, y, x, c]];
        }
    }
    let mut sh = ContentHasher::new();
    sh.f64s(z_v.iter());
    Ok(NeutralVideo {
        video: VideoClip::new(out)?,
        sigma,
        provenance: NeutralVideoProvenance {
            video_hash: video.content_hash(),
            score_hash: sh.finish(),
            sigma,
        },
    })
}

/// Cross-attention maps of `model` on `video`, averaged over probe timesteps.
/// The forward-diffusion noise for each probe comes from `seed`.
pub fn extract_attention(
    model: &Denoiser,
    codec: &CodecConfig,
    video: &VideoClip,
    cond: &Array2<f64>,
    probe_ts: &[usize],
    seed: u64,
) -> Result<Array3<f64>> {
    if probe_ts.is_empty() {
        return Err(Error::param("probe_timesteps", "need at least one"));
    }
    let z0 = codec.encode(video)?;
    let mut acc: Option<Array3<f64>> = None;
    for (i, &t) in probe_ts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let eps = Array3::from_shape_simple_fn(z0.z.dim(), || StandardNormal.sample(&mut rng));
        let zt = forward_diffuse(&z0, t, &eps, &model.schedule)?;
        let (out, _) = model.forward(&zt, t, cond)?;
        match acc.as_mut() {
            Some(a) => *a += &out.attention,
            None => acc = Some(out.attention),
        }
    }
    Ok(acc.expect("nonempty probes") / probe_ts.len() as f64)
}

/// Probe timesteps at fixed fractions of `T`, at least 1.
pub fn probe_timesteps(steps: usize, fractions: &[f64]) -> Vec<usize> {
    fractions
        .iter()
        .map(|f| ((f * steps as f64).round() as usize).clamp(1, steps))
        .collect()
}
