//! Concept-aligned text and frame encoders over the closed shape vocabulary.
//!
//! Every content word owns one row of a seeded orthonormal codebook. Text
//! features look words up; frame features come from a pixel-space detector
//! (background subtraction, colour statistics, a rotation-invariant fill
//! measure for shape, centroid/area tracks for motion) whose soft class
//! confidences weight the same codebook rows. Function words share a single
//! "scene" direction that every frame also carries, so they score as present
//! rather than as missing concepts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ContentHasher;
use crate::video::VideoClip;
use crate::world::{nominal_track, Background, Color, Motion, Shape};

pub const DUMMY_TOKEN: &str = "<dmy>";
pub const MAX_TOKENS: usize = 32;
pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_CODEBOOK_SEED: u64 = 20_240_521;

/// Key under which the shared function-word / scene direction is stored.
const SCENE_KEY: &str = "<scene>";

/// Attribute family of a content word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concept {
    Color,
    Shape,
    Motion,
    Background,
}

/// Content words of the closed vocabulary with their families.
pub fn content_words() -> Vec<(&'static str, Concept)> {
    let mut out = Vec::new();
    out.extend(Color::ALL.iter().map(|c| (c.word(), Concept::Color)));
    out.extend(Shape::ALL.iter().map(|s| (s.word(), Concept::Shape)));
    out.extend(Motion::ALL.iter().map(|m| (m.word(), Concept::Motion)));
    out.extend(Background::ALL.iter().map(|b| (b.word(), Concept::Background)));
    out
}

pub fn is_content_word(word: &str) -> bool {
    content_words().iter().any(|(w, _)| *w == word)
}

pub fn concept_of(word: &str) -> Option<Concept> {
    content_words()
        .into_iter()
        .find(|(w, _)| *w == word)
        .map(|(_, c)| c)
}

/// Lowercase, strip punctuation, split on whitespace. `<DMY>` survives as a
/// token.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = text
        .split_whitespace()
        .filter_map(|raw| {
            let lower = raw.to_lowercase();
            if lower == DUMMY_TOKEN {
                return Some(lower);
            }
            let cleaned: String = lower.chars().filter(|c| c.is_alphanumeric()).collect();
            (!cleaned.is_empty()).then_some(cleaned)
        })
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(tokens)
}

/// Word tokens with one feature row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedPrompt {
    pub tokens: Vec<String>,
    /// `M×d`; unit rows except `<dmy>`, which is exactly zero.
    pub features: Array2<f64>,
}

impl TokenizedPrompt {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// One unit feature row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub v: Array2<f64>,
}

/// Seeded orthonormal word codebook plus the detector calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    seed: u64,
    rows: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    dim: usize,
    seed: u64,
    words: BTreeMap<String, Vec<f64>>,
}

impl Codebook {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        let words = content_words();
        let needed = words.len() + 1;
        if dim < needed {
            return Err(Error::param(
                "dim",
                format!("codebook needs at least {needed} dimensions, got {dim}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(needed);
        while basis.len() < needed {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            // Two Gram-Schmidt passes keep the rows orthonormal to rounding.
            for _ in 0..2 {
                for b in &basis {
                    let d = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        let mut rows = BTreeMap::new();
        for ((w, _), v) in words.iter().zip(basis.iter()) {
            rows.insert((*w).to_string(), v.clone());
        }
        rows.insert(SCENE_KEY.to_string(), basis[words.len()].clone());
        Ok(Self { dim, seed, rows })
    }

    pub fn default_codebook() -> Self {
        Self::new(DEFAULT_DIM, DEFAULT_CODEBOOK_SEED).expect("default codebook dimensions are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Feature row of a single word (unit norm; zeros for `<dmy>`).
    pub fn word_feature(&self, word: &str) -> Vec<f64> {
        if word == DUMMY_TOKEN {
            return vec![0.0; self.dim];
        }
        match self.rows.get(word) {
            Some(v) => v.clone(),
            None => self.rows[SCENE_KEY].clone(),
        }
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.u64(self.dim as u64).u64(self.seed);
        for (w, v) in &self.rows {
            h.str(w).f64s(v.iter());
        }
        h.finish()
    }

    pub fn embed_text(&self, tokens: &[String]) -> Result<TokenizedPrompt> {
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        if tokens.len() > MAX_TOKENS {
            return Err(Error::InvalidDimension(format!(
                "{} tokens exceeds the {MAX_TOKENS}-token limit",
                tokens.len()
            )));
        }
        let mut features = Array2::zeros((tokens.len(), self.dim));
        for (i, t) in tokens.iter().enumerate() {
            let row = self.word_feature(t);
            features.row_mut(i).assign(&ArrayView1::from(&row[..]));
        }
        Ok(TokenizedPrompt {
            tokens: tokens.to_vec(),
            features,
        })
    }

    pub fn embed_prompt(&self, text: &str) -> Result<TokenizedPrompt> {
        self.embed_text(&tokenize(text)?)
    }

    /// Per-frame features; fails when any frame has no detectable object.
    pub fn embed_frames(&self, video: &VideoClip) -> Result<FrameFeatures> {
        let analysis = analyze_clip(video);
        if let Some(frame) = analysis.frames.iter().position(|f| f.object.is_none()) {
            return Err(Error::DetectionFailure { frame });
        }
        Ok(self.features_from_analysis(&analysis))
    }

    /// Like [`Codebook::embed_frames`] but frames without an object keep only
    /// their scene and background components.
    pub fn embed_frames_lenient(&self, video: &VideoClip) -> FrameFeatures {
        self.features_from_analysis(&analyze_clip(video))
    }

    fn features_from_analysis(&self, analysis: &ClipAnalysis) -> FrameFeatures {
        let mut v = Array2::zeros((analysis.frames.len(), self.dim));
        for (i, frame) in analysis.frames.iter().enumerate() {
            let mut acc = self.rows[SCENE_KEY].clone();
            let mut add = |word: &str, weight: f64| {
                let row = &self.rows[word];
                acc.iter_mut().zip(row).for_each(|(a, r)| *a += weight * r);
            };
            for (b, p) in Background::ALL.iter().zip(frame.background.iter()) {
                add(b.word(), *p);
            }
            if let Some(obj) = &frame.object {
                for (c, p) in Color::ALL.iter().zip(obj.color.iter()) {
                    add(c.word(), *p);
                }
                for (s, p) in Shape::ALL.iter().zip(obj.shape.iter()) {
                    add(s.word(), *p);
                }
                if let Some(motion) = &analysis.motion {
                    for (m, p) in Motion::ALL.iter().zip(motion.iter()) {
                        add(m.word(), *p);
                    }
                }
            }
            let n = dot(&acc, &acc).sqrt();
            v.row_mut(i)
                .assign(&ArrayView1::from(&acc[..]).mapv(|x| x / n));
        }
        FrameFeatures { v }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = CodebookFile {
            dim: self.dim,
            seed: self.seed,
            words: self.rows.clone(),
        };
        fs::write(path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(path, e))
    }

    /// Load a codebook and check it against the hash recorded in a manifest.
    pub fn load_json(path: &Path, expected_hash: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CodebookFile = serde_json::from_str(&text)?;
        if file.words.values().any(|v| v.len() != file.dim) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "codebook row length differs from dim".into(),
            });
        }
        let book = Self {
            dim: file.dim,
            seed: file.seed,
            rows: file.words,
        };
        let found = book.content_hash();
        if found != expected_hash {
            return Err(Error::HashMismatch {
                what: path.display().to_string(),
                expected: expected_hash.to_string(),
                found,
            });
        }
        Ok(book)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

// ---------------------------------------------------------------------------
// Pixel-space detector
// ---------------------------------------------------------------------------

/// Channel difference from the background at which a pixel counts as fully
/// object.
const OBJECT_CONTRAST: f64 = 0.08;
/// Minimum object area as a fraction of the frame.
const MIN_OBJECT_FRACTION: f64 = 0.005;
const COLOR_TEMPERATURE: f64 = 0.12;
const SHAPE_TEMPERATURE: f64 = 0.07;
const MOTION_TEMPERATURE: f64 = 0.12;
const BACKGROUND_TEMPERATURE: f64 = 0.12;

/// Fill ratio `area / (π r_max²)` of each shape as rendered.
const SHAPE_FILL: [f64; 3] = [0.65, 0.93, 0.43];

#[derive(Debug, Clone)]
pub struct ObjectStats {
    pub centroid: (f64, f64),
    pub area: f64,
    pub mean_rgb: [f64; 3],
    pub fill_ratio: f64,
    /// Soft confidences in `Color::ALL` order.
    pub color: Vec<f64>,
    /// Soft confidences in `Shape::ALL` order.
    pub shape: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    pub background_rgb: [f64; 3],
    /// Soft confidences in `Background::ALL` order.
    pub background: Vec<f64>,
    pub object: Option<ObjectStats>,
}

#[derive(Debug, Clone)]
pub struct ClipAnalysis {
    pub frames: Vec<FrameAnalysis>,
    /// Motion confidences in `Motion::ALL` order; `None` for fewer than two
    /// frames with an object.
    pub motion: Option<Vec<f64>>,
    pub motion_signature: Option<[f64; 5]>,
}

fn soft_assign(distances_sq: &[f64], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = distances_sq
        .iter()
        .map(|d| -d / (2.0 * temperature * temperature))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn analyze_frame(frame: ArrayView3<'_, f64>) -> FrameAnalysis {
    let (h, w, _) = frame.dim();
    let mut border: [Vec<f64>; 3] = Default::default();
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                for (c, list) in border.iter_mut().enumerate() {
                    list.push(frame[[y, x, c]]);
                }
            }
        }
    }
    let bg = [
        median(&mut border[0]),
        median(&mut border[1]),
        median(&mut border[2]),
    ];
    let luminance = (bg[0] + bg[1] + bg[2]) / 3.0;
    let background = soft_assign(
        &Background::ALL
            .iter()
            .map(|b| (luminance - b.level()).powi(2))
            .collect::<Vec<_>>(),
        BACKGROUND_TEMPERATURE,
    );

    let mut weights = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let diff = (0..3)
                .map(|c| (frame[[y, x, c]] - bg[c]).abs())
                .fold(0.0, f64::max);
            weights[[y, x]] = (diff / OBJECT_CONTRAST).min(1.0);
        }
    }
    let total: f64 = weights.sum();
    let area = weights.iter().filter(|&&v| v >= 0.5).count() as f64;
    if total < MIN_OBJECT_FRACTION * (h * w) as f64 || area < 1.0 {
        return FrameAnalysis {
            background_rgb: bg,
            background,
            object: None,
        };
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for ((y, x), &wt) in weights.indexed_iter() {
        sx += wt * (x as f64 + 0.5);
        sy += wt * (y as f64 + 0.5);
    }
    let centroid = (sx / total, sy / total);

    let mut r_max: f64 = 0.0;
    let (mut rgb, mut n_core) = ([0.0; 3], 0.0);
    let core_cut = if weights.iter().any(|&v| v >= 0.999) { 0.999 } else { 0.5 };
    for ((y, x), &wt) in weights.indexed_iter() {
        if wt >= 0.5 {
            let dx = x as f64 + 0.5 - centroid.0;
            let dy = y as f64 + 0.5 - centroid.1;
            r_max = r_max.max((dx * dx + dy * dy).sqrt() + 0.5);
        }
        if wt >= core_cut {
            for (c, acc) in rgb.iter_mut().enumerate() {
                *acc += frame[[y, x, c]];
            }
            n_core += 1.0;
        }
    }
    let mean_rgb = rgb.map(|v| v / n_core);
    let fill_ratio = area / (std::f64::consts::PI * r_max * r_max);
    let color = soft_assign(
        &Color::ALL
            .iter()
            .map(|c| {
                let p = c.rgb();
                (0..3).map(|k| (mean_rgb[k] - p[k]).powi(2)).sum::<f64>()
            })
            .collect::<Vec<_>>(),
        COLOR_TEMPERATURE,
    );
    let shape = soft_assign(
        &SHAPE_FILL
            .iter()
            .map(|f| (fill_ratio - f).powi(2))
            .collect::<Vec<_>>(),
        SHAPE_TEMPERATURE,
    );
    FrameAnalysis {
        background_rgb: bg,
        background,
        object: Some(ObjectStats {
            centroid,
            area,
            mean_rgb,
            fill_ratio,
            color,
            shape,
        }),
    }
}

/// Motion signature of a centroid/area track: signed net and total
/// horizontal travel, the same vertically (fractions of frame size), and the
/// log ratio of last to first area.
fn signature(track: &[(f64, f64, f64)], height: usize, width: usize) -> [f64; 5] {
    let (mut net_x, mut tv_x, mut net_y, mut tv_y) = (0.0, 0.0, 0.0, 0.0);
    for pair in track.windows(2) {
        let dx = (pair[1].0 - pair[0].0) / width as f64;
        let dy = (pair[1].1 - pair[0].1) / height as f64;
        net_x += dx;
        tv_x += dx.abs();
        net_y += dy;
        tv_y += dy.abs();
    }
    let first = track.first().map(|t| t.2).unwrap_or(1.0);
    let last = track.last().map(|t| t.2).unwrap_or(1.0);
    [net_x, tv_x, net_y, tv_y, 0.5 * (last / first).ln()]
}

fn motion_prototypes(frames: usize, height: usize, width: usize) -> Vec<[f64; 5]> {
    Motion::ALL
        .iter()
        .map(|&m| {
            let track: Vec<(f64, f64, f64)> = nominal_track(m, frames, height, width)
                .into_iter()
                .map(|(dx, dy, scale, _)| (dx, dy, scale * scale))
                .collect();
            signature(&track, height, width)
        })
        .collect()
}

pub fn analyze_clip(video: &VideoClip) -> ClipAnalysis {
    let frames: Vec<FrameAnalysis> = video
        .data
        .axis_iter(Axis(0))
        .map(analyze_frame)
        .collect();
    let track: Vec<(f64, f64, f64)> = frames
        .iter()
        .filter_map(|f| f.object.as_ref())
        .map(|o| (o.centroid.0, o.centroid.1, o.area))
        .collect();
    let (motion, motion_signature) = if track.len() >= 2 {
        let sig = signature(&track, video.height(), video.width());
        let protos = motion_prototypes(video.frames(), video.height(), video.width());
        let d: Vec<f64> = protos
            .iter()
            .map(|p| p.iter().zip(sig.iter()).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        (Some(soft_assign(&d, MOTION_TEMPERATURE)), Some(sig))
    } else {
        (None, None)
    };
    ClipAnalysis {
        frames,
        motion,
        motion_signature,
    }
}
