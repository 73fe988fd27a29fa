//! Exactly invertible patch codec between pixel clips and latent videos.
//!
//! Each non-overlapping `p×p` patch is flattened in `(y, x, channel)` order,
//! mapped affinely from `[0,1]` to `[-1,1]`, and multiplied by a seeded
//! orthogonal matrix. Decoding applies the transpose and the inverse affine
//! map.

use ndarray::{Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hash::ContentHasher;
use crate::video::{VideoClip, CHANNELS};

pub const DEFAULT_CODEC_SEED: u64 = 77;

/// Latent video `L×P×d_lat` over a `Hp×Wp` patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    pub z: Array3<f64>,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl LatentVideo {
    pub fn frames(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn patches(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.z.shape()[2]
    }

    pub fn with_data(&self, z: Array3<f64>) -> Self {
        Self {
            z,
            grid_h: self.grid_h,
            grid_w: self.grid_w,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub patch: usize,
    pub seed: u64,
    /// `d_lat×d_lat` orthogonal mixing matrix.
    pub q: Array2<f64>,
}

/// Decoder output before and after clamping to `[0,1]`.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub video: VideoClip,
    pub unclamped: Array4<f64>,
    /// Largest distance any value was moved by clamping.
    pub max_clamp: f64,
}

impl CodecConfig {
    pub fn new(patch: usize, seed: u64) -> Result<Self> {
        if patch == 0 {
            return Err(Error::param("patch", "must be positive"));
        }
        let n = patch * patch * CHANNELS;
        Ok(Self {
            patch,
            seed,
            q: random_orthogonal(n, seed),
        })
    }

    pub fn default_codec() -> Self {
        Self::new(4, DEFAULT_CODEC_SEED).expect("default patch size is valid")
    }

    pub fn latent_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.u64(self.patch as u64).u64(self.seed);
        h.f64s(self.q.iter());
        h.finish()
    }

    fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        if h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::InvalidDimension(format!(
                "{h}x{w} frame not divisible by patch size {}",
                self.patch
            )));
        }
        Ok(())
    }

    pub fn encode(&self, video: &VideoClip) -> Result<LatentVideo> {
        let (l, h, w) = (video.frames(), video.height(), video.width());
        self.check_dims(h, w)?;
        let p = self.patch;
        let (gh, gw) = (h / p, w / p);
        let mut flat = Array2::zeros((l * gh * gw, self.latent_dim()));
        for f in 0..l {
            for gy in 0..gh {
                for gx in 0..gw {
                    let row = (f * gh + gy) * gw + gx;
                    let mut k = 0;
                    for y in 0..p {
                        for x in 0..p {
                            for c in 0..CHANNELS {
                                flat[[row, k]] = 2.0 * video.data[[f, gy * p + y, gx * p + x, c]] - 1.0;
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
        let z = flat.dot(&self.q);
        let z = z
            .into_shape_with_order((l, gh * gw, self.latent_dim()))
            .expect("row count matches frame×patch");
        Ok(LatentVideo {
            z,
            grid_h: gh,
            grid_w: gw,
        })
    }

    pub fn decode(&self, latent: &LatentVideo) -> Result<Decoded> {
        let (l, np, d) = latent.z.dim();
        if d != self.latent_dim() || np != latent.grid_h * latent.grid_w {
            return Err(Error::ShapeMismatch(format!(
                "latent {:?} incompatible with codec dim {} and grid {}x{}",
                latent.z.dim(),
                self.latent_dim(),
                latent.grid_h,
                latent.grid_w
            )));
        }
        let flat = latent
            .z
            .view()
            .into_shape_with_order((l * np, d))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?
            .dot(&self.q.t());
        let p = self.patch;
        let (h, w) = (latent.grid_h * p, latent.grid_w * p);
        let mut raw = Array4::zeros((l, h, w, CHANNELS));
        for f in 0..l {
            for gy in 0..latent.grid_h {
                for gx in 0..latent.grid_w {
                    let row = (f * latent.grid_h + gy) * latent.grid_w + gx;
                    let mut k = 0;
                    for y in 0..p {
                        for x in 0..p {
                            for c in 0..CHANNELS {
                                raw[[f, gy * p + y, gx * p + x, c]] = 0.5 * (flat[[row, k]] + 1.0);
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
        let max_clamp = raw
            .iter()
            .map(|&v| (v - v.clamp(0.0, 1.0)).abs())
            .fold(0.0, f64::max);
        let video = VideoClip::new(raw.mapv(|v| v.clamp(0.0, 1.0)))?;
        Ok(Decoded {
            video,
            unclamped: raw,
            max_clamp,
        })
    }
}

/// Seeded Haar-ish orthogonal matrix from Gram-Schmidt on Gaussian columns
/// (two passes for orthogonality at rounding level).
pub fn random_orthogonal(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| cols[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{render_scene, Background, Color, Motion, SceneSpec, Shape};

    fn clip() -> VideoClip {
        let spec = SceneSpec::new(Shape::Triangle, Color::Blue, Motion::Spin, Background::Light)
            .with_size(3, 32, 32);
        render_scene(&spec, 4).unwrap()
    }

    #[test]
    fn q_is_orthogonal() {
        let c = CodecConfig::default_codec();
        let qtq = c.q.t().dot(&c.q);
        let eye = Array2::<f64>::eye(c.latent_dim());
        let err = (&qtq - &eye).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn decode_inverts_encode() {
        let c = CodecConfig::default_codec();
        let v = clip();
        let d = c.decode(&c.encode(&v).unwrap()).unwrap();
        let err = (&d.unclamped - &v.data).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(err < 1e-10, "{err}");
        assert!(d.max_clamp < 1e-10);
    }

    #[test]
    fn encode_preserves_norm_of_centered_signal() {
        let c = CodecConfig::default_codec();
        let v = clip();
        let z = c.encode(&v).unwrap();
        let centered: f64 = v.data.iter().map(|x| (2.0 * x - 1.0).powi(2)).sum::<f64>().sqrt();
        let latent: f64 = z.z.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((centered - latent).abs() < 1e-8);
    }

    #[test]
    fn constant_video_gives_equal_rows() {
        let c = CodecConfig::default_codec();
        let v = VideoClip::filled(2, 8, 12, [0.2, 0.4, 0.9]);
        let z = c.encode(&v).unwrap();
        assert_eq!((z.grid_h, z.grid_w), (2, 3));
        let first = z.z.slice(ndarray::s![0, 0, ..]).to_owned();
        for f in 0..2 {
            for p in 0..6 {
                assert_eq!(z.z.slice(ndarray::s![f, p, ..]), first);
            }
        }
    }

    #[test]
    fn rejects_indivisible_frames() {
        let c = CodecConfig::default_codec();
        let v = VideoClip::filled(1, 10, 16, [0.0; 3]);
        assert!(matches!(c.encode(&v), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn decode_rejects_bad_latent() {
        let c = CodecConfig::default_codec();
        let bad = LatentVideo {
            z: Array3::zeros((1, 4, 10)),
            grid_h: 2,
            grid_w: 2,
        };
        assert!(matches!(c.decode(&bad), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn decode_reports_clamping() {
        let c = CodecConfig::default_codec();
        let mut z = c.encode(&VideoClip::filled(1, 8, 8, [1.0; 3])).unwrap();
        z.z.mapv_inplace(|v| v * 1.5);
        let d = c.decode(&z).unwrap();
        assert!(d.max_clamp > 0.1);
        assert!(d.video.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
