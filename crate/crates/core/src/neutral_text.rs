//! Textual neutralization: score each prompt word by how poorly it matches
//! the video, then weaken the high-scoring words.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embeddings::{Codebook, TokenizedPrompt, DUMMY_TOKEN};
use crate::error::{Error, Result};

/// Per-word editing factor scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextFactorScore {
    pub z: Vec<f64>,
}

impl TextFactorScore {
    pub fn argmax(&self) -> Option<usize> {
        self.z
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }

    pub fn max(&self) -> f64 {
        self.z.iter().cloned().fold(0.0, f64::max)
    }
}

/// `z[i] = clamp(1 − mean_l ⟨w_i, v_l⟩, 0, 1)`.
pub fn identify_text_factors(w: &Array2<f64>, v: &Array2<f64>) -> Result<TextFactorScore> {
    if w.ncols() != v.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "word features have width {} but frame features {}",
            w.ncols(),
            v.ncols()
        )));
    }
    if v.nrows() == 0 {
        return Err(Error::InvalidDimension("no frame features".into()));
    }
    let sims = w.dot(&v.t());
    let z = sims
        .mean_axis(Axis(1))
        .expect("nonempty frames")
        .iter()
        .map(|m| (1.0 - m).clamp(0.0, 1.0))
        .collect();
    Ok(TextFactorScore { z })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeutralVariant {
    Swap,
    Deform,
    DeformableSwap,
    Blur,
}

impl NeutralVariant {
    pub fn name(self) -> &'static str {
        match self {
            NeutralVariant::Swap => "swap",
            NeutralVariant::Deform => "deform",
            NeutralVariant::DeformableSwap => "deformable_swap",
            NeutralVariant::Blur => "blur",
        }
    }
}

impl std::str::FromStr for NeutralVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swap" => Ok(Self::Swap),
            "deform" => Ok(Self::Deform),
            "deformable_swap" | "deformable-swap" => Ok(Self::DeformableSwap),
            "blur" => Ok(Self::Blur),
            other => Err(Error::param("neutral_variant", format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeutralParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Neutral prompt features `w_n` with the tokens they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralPrompt {
    pub variant: NeutralVariant,
    /// Tokens after swapping; equal to the input tokens for non-swap variants.
    pub tokens: Vec<String>,
    pub z_t: TextFactorScore,
    pub features: Array2<f64>,
    pub params: NeutralParams,
    /// Indices replaced by the dummy token.
    pub swapped: Vec<usize>,
}

impl NeutralPrompt {
    /// True when a swap variant found nothing above threshold.
    pub fn no_factor_selected(&self) -> bool {
        matches!(self.variant, NeutralVariant::Swap | NeutralVariant::DeformableSwap) && self.swapped.is_empty()
    }

    pub fn record(&self, features_hash: &str) -> NeutralPromptRecord {
        NeutralPromptRecord {
            variant: self.variant,
            tokens: self.tokens.clone(),
            z_t: self.z_t.z.clone(),
            parameters: self.params.clone(),
            swapped: self.swapped.clone(),
            no_factor_selected: self.no_factor_selected(),
            features: features_hash.to_string(),
        }
    }
}

/// JSON form; `features` names the content hash of the feature blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeutralPromptRecord {
    pub variant: NeutralVariant,
    pub tokens: Vec<String>,
    pub z_t: Vec<f64>,
    pub parameters: NeutralParams,
    pub swapped: Vec<usize>,
    pub no_factor_selected: bool,
    pub features: String,
}

fn check_len(prompt_len: usize, z: &TextFactorScore) -> Result<()> {
    if prompt_len != z.z.len() {
        return Err(Error::ShapeMismatch(format!(
            "{prompt_len} tokens but {} factor scores",
            z.z.len()
        )));
    }
    Ok(())
}

fn check_threshold(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::param("s", format!("threshold {s} outside (0, 1)")));
    }
    Ok(())
}

/// Replace every token scoring above `s` with the dummy token.
pub fn factor_swap(prompt: &TokenizedPrompt, z: &TextFactorScore, s: f64, book: &Codebook) -> Result<NeutralPrompt> {
    check_len(prompt.len(), z)?;
    check_threshold(s)?;
    let swapped: Vec<usize> = (0..prompt.len()).filter(|&i| z.z[i] > s).collect();
    let tokens: Vec<String> = prompt
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if swapped.contains(&i) {
                DUMMY_TOKEN.to_string()
            } else {
                t.clone()
            }
        })
        .collect();
    let features = book.embed_text(&tokens)?.features;
    Ok(NeutralPrompt {
        variant: NeutralVariant::Swap,
        tokens,
        z_t: z.clone(),
        features,
        params: NeutralParams {
            s: Some(s),
            ..Default::default()
        },
        swapped,
    })
}

/// Blend each row towards a target row by its score; zero-score rows are
/// copied untouched.
fn blend_rows(w: &Array2<f64>, z: &TextFactorScore, other: &Array2<f64>) -> Array2<f64> {
    let mut out = w.clone();
    for (i, &zi) in z.z.iter().enumerate() {
        if zi == 0.0 {
            continue;
        }
        let mut row = out.row_mut(i);
        for (o, (&a, &b)) in row.iter_mut().zip(w.row(i).iter().zip(other.row(i).iter())) {
            *o = zi * b + (1.0 - zi) * a;
        }
    }
    out
}

/// `w_n = z ∘ (α w) + (1 − z) ∘ w`.
pub fn factor_deform(w: &Array2<f64>, z: &TextFactorScore, alpha: f64) -> Result<Array2<f64>> {
    check_len(w.nrows(), z)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("{alpha} outside [0, 1]")));
    }
    if alpha == 1.0 {
        // z·w + (1 − z)·w rounds away from w; return it exactly
        return Ok(w.clone());
    }
    Ok(blend_rows(w, z, &w.mapv(|v| alpha * v)))
}

pub fn deform_prompt(prompt: &TokenizedPrompt, z: &TextFactorScore, alpha: f64) -> Result<NeutralPrompt> {
    Ok(NeutralPrompt {
        variant: NeutralVariant::Deform,
        tokens: prompt.tokens.clone(),
        z_t: z.clone(),
        features: factor_deform(&prompt.features, z, alpha)?,
        params: NeutralParams {
            alpha: Some(alpha),
            ..Default::default()
        },
        swapped: Vec::new(),
    })
}

/// `w_n = z ∘ w_swp + (1 − z) ∘ w` where `w_swp` are the swap-variant features.
pub fn deformable_swap(prompt: &TokenizedPrompt, z: &TextFactorScore, s: f64, book: &Codebook) -> Result<NeutralPrompt> {
    let swap = factor_swap(prompt, z, s, book)?;
    let features = blend_rows(&prompt.features, z, &swap.features);
    Ok(NeutralPrompt {
        variant: NeutralVariant::DeformableSwap,
        features,
        ..swap
    })
}

/// `w_n = z ∘ (w + ε) + (1 − z) ∘ w` with `ε ~ N(0, I)` from `seed`.
pub fn factor_blur(prompt: &TokenizedPrompt, z: &TextFactorScore, seed: u64) -> Result<NeutralPrompt> {
    check_len(prompt.len(), z)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = &prompt.features;
    let noise: Array2<f64> = Array2::from_shape_simple_fn(w.dim(), || StandardNormal.sample(&mut rng));
    let features = blend_rows(w, z, &(w + &noise));
    Ok(NeutralPrompt {
        variant: NeutralVariant::Blur,
        tokens: prompt.tokens.clone(),
        z_t: z.clone(),
        features,
        params: NeutralParams {
            seed: Some(seed),
            ..Default::default()
        },
        swapped: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn prompt(book: &Codebook, text: &str) -> TokenizedPrompt {
        book.embed_prompt(text).unwrap()
    }

    #[test]
    fn factor_score_examples() {
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let same = array![[1.0, 0.0], [1.0, 0.0]];
        let z = identify_text_factors(&w, &same).unwrap();
        assert_eq!(z.z, vec![0.0, 1.0]);
        // word rows chosen so the frame dots are {0.9, 0.7} and {0.1, 0.3}
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let v = array![[0.9, 0.1], [0.7, 0.3]];
        let z = identify_text_factors(&w, &v).unwrap();
        assert!((z.z[0] - 0.2).abs() < 1e-12 && (z.z[1] - 0.8).abs() < 1e-12);
        let z = identify_text_factors(&array![[1.0]], &array![[-0.5]]).unwrap();
        assert_eq!(z.z, vec![1.0]);
        assert!(identify_text_factors(&array![[1.0, 0.0]], &array![[1.0]]).is_err());
    }

    #[test]
    fn swap_replaces_above_threshold() {
        let book = Codebook::default_codebook();
        let p = prompt(&book, "a man jumps on the moon");
        let z = TextFactorScore {
            z: vec![0.1, 0.2, 0.9, 0.3, 0.1, 0.2],
        };
        let n = factor_swap(&p, &z, 0.7, &book).unwrap();
        assert_eq!(n.tokens, vec!["a", "man", DUMMY_TOKEN, "on", "the", "moon"]);
        assert_eq!(n.swapped, vec![2]);
        assert!(n.features.row(2).iter().all(|&v| v == 0.0));
        let none = factor_swap(&p, &z, 0.999, &book).unwrap();
        assert_eq!(none.tokens, p.tokens);
        assert!(none.no_factor_selected());
        assert!(factor_swap(&p, &z, 1.0, &book).is_err());
    }

    #[test]
    fn swap_count_non_increasing_in_threshold() {
        let book = Codebook::default_codebook();
        let p = prompt(&book, "a red square slides on a dark background");
        let z = TextFactorScore {
            z: vec![0.55, 0.62, 0.7, 0.76, 0.81, 0.88, 0.93, 0.5],
        };
        let counts: Vec<usize> = [0.5, 0.6, 0.7, 0.76, 0.8, 0.9]
            .iter()
            .map(|&s| factor_swap(&p, &z, s, &book).unwrap().swapped.len())
            .collect();
        assert!(counts.windows(2).all(|c| c[1] <= c[0]), "{counts:?}");
    }

    #[test]
    fn deform_examples() {
        let w = array![[1.0, -2.0], [3.0, 4.0]];
        let z = TextFactorScore { z: vec![0.0, 1.0] };
        assert_eq!(factor_deform(&w, &z, 1.0).unwrap(), w);
        let zeroed = factor_deform(&w, &z, 0.0).unwrap();
        assert_eq!(zeroed.row(0), w.row(0));
        assert!(zeroed.row(1).iter().all(|&v| v == 0.0));
        let half = TextFactorScore { z: vec![0.5] };
        let out = factor_deform(&array![[1.0]], &half, 0.2).unwrap();
        assert!((out[[0, 0]] - 0.6).abs() < 1e-12);
        assert!(factor_deform(&w, &z, 1.5).is_err());
        assert!(factor_deform(&w, &half, 0.2).is_err());
    }

    #[test]
    fn deform_is_linear_in_features() {
        let a = array![[0.3, -1.0, 2.0], [0.5, 0.25, -0.75]];
        let b = array![[1.5, 0.5, -0.5], [-2.0, 1.0, 0.0]];
        let z = TextFactorScore { z: vec![0.3, 0.8] };
        let lhs = factor_deform(&(&a * 2.0 + &b), &z, 0.2).unwrap();
        let rhs = factor_deform(&a, &z, 0.2).unwrap() * 2.0 + factor_deform(&b, &z, 0.2).unwrap();
        assert!((lhs - rhs).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn deformable_swap_blends_towards_dummy() {
        let book = Codebook::default_codebook();
        let p = prompt(&book, "a red square slides");
        let z = TextFactorScore {
            z: vec![0.0, 0.9, 0.7, 1.0],
        };
        let n = deformable_swap(&p, &z, 0.6, &book).unwrap();
        assert_eq!(n.swapped, vec![1, 2, 3]);
        assert!(n.features.row(3).iter().all(|&v| v == 0.0));
        assert_eq!(n.features.row(0), p.features.row(0));
        // 0.1·red vs 0.3·square: both shrink, by different amounts
        let norm = |i: usize| n.features.row(i).dot(&n.features.row(i)).sqrt();
        assert!((norm(1) - 0.1).abs() < 1e-9 && (norm(2) - 0.3).abs() < 1e-9);
        assert_ne!(n.features.row(1), n.features.row(2));
    }

    #[test]
    fn deformable_swap_equal_scores_on_equal_rows() {
        let book = Codebook::default_codebook();
        let p = prompt(&book, "red slides red");
        let z = TextFactorScore {
            z: vec![0.8, 0.1, 0.8],
        };
        let n = deformable_swap(&p, &z, 0.5, &book).unwrap();
        assert_eq!(n.features.row(0), n.features.row(2));
    }

    #[test]
    fn blur_examples() {
        let book = Codebook::default_codebook();
        let p = prompt(&book, "a blue circle spins");
        let zero = TextFactorScore { z: vec![0.0; 4] };
        assert_eq!(factor_blur(&p, &zero, 3).unwrap().features, p.features);
        let z = TextFactorScore {
            z: vec![0.1, 0.2, 0.3, 0.9],
        };
        assert_eq!(
            factor_blur(&p, &z, 3).unwrap().features,
            factor_blur(&p, &z, 3).unwrap().features
        );
        let n = 10_000;
        let mut mean = Array2::<f64>::zeros(p.features.dim());
        for seed in 0..n {
            mean += &factor_blur(&p, &z, seed).unwrap().features;
        }
        mean /= n as f64;
        for (((i, _), &m), &w) in mean.indexed_iter().zip(p.features.iter()) {
            let sd = z.z[i] / (n as f64).sqrt();
            assert!((m - w).abs() < 3.0 * sd + 1e-12, "row {i}: {m} vs {w}");
        }
    }

    #[test]
    fn zero_score_rows_untouched_for_every_variant() {
        let book = Codebook::default_codebook();
        let p = prompt(&book, "a green triangle bounces");
        let z = TextFactorScore {
            z: vec![0.0, 0.4, 0.0, 0.95],
        };
        let variants = [
            factor_swap(&p, &z, 0.76, &book).unwrap(),
            deform_prompt(&p, &z, 0.2).unwrap(),
            deformable_swap(&p, &z, 0.76, &book).unwrap(),
            factor_blur(&p, &z, 1).unwrap(),
        ];
        for n in variants {
            assert_eq!(n.features.row(0), p.features.row(0), "{:?}", n.variant);
            assert_eq!(n.features.row(2), p.features.row(2), "{:?}", n.variant);
            assert_eq!(n.features.nrows(), p.len());
        }
    }

    #[test]
    fn variant_names_parse() {
        for v in [
            NeutralVariant::Swap,
            NeutralVariant::Deform,
            NeutralVariant::DeformableSwap,
            NeutralVariant::Blur,
        ] {
            assert_eq!(v.name().parse::<NeutralVariant>().unwrap(), v);
        }
        assert!("smudge".parse::<NeutralVariant>().is_err());
    }
}
