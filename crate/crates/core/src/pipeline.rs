//! Neutral-prompt tuning followed by neutral-video inversion editing, plus
//! the conventional source-prompt pipeline it is compared against.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::codec::{CodecConfig, LatentVideo};
use crate::diffusion::train::{train, Example, LossCurve, TrainConfig};
use crate::diffusion::{denoise, invert, Denoiser, DenoiserConfig, NoiseSchedule, ScheduleKind};
use crate::embeddings::Codebook;
use crate::error::{Error, Result};
use crate::neutral_text::{
    deform_prompt, deformable_swap, factor_blur, factor_swap, identify_text_factors, NeutralPrompt, NeutralVariant,
};
use crate::neutral_video::{
    compute_visual_scores, extract_attention, make_neutral_video, probe_timesteps, NeutralVideo, VisualFactorScore,
};
use crate::video::VideoClip;
use crate::world::{describe, render_scene, random_spec, WorldConfig};

/// Which text conditions the DDIM inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionPrompt {
    Neutral,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    pub neutral_variant: NeutralVariant,
    pub s: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub tau: f64,
    pub tuning_steps: usize,
    pub lr: f64,
    pub n_ddim_steps: usize,
    pub probe_fractions: Vec<f64>,
    pub seed: u64,
    pub inversion_prompt: InversionPrompt,
    /// Force `z_V := 0`, so the neutral video equals the input.
    pub zero_visual_scores: bool,
    /// Dilation of the `z_V` support used as the automated evaluation mask.
    pub mask_dilation: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            neutral_variant: NeutralVariant::DeformableSwap,
            s: 0.76,
            alpha: 0.2,
            sigma: 4.0,
            tau: 0.2,
            tuning_steps: 300,
            lr: 2e-3,
            n_ddim_steps: 50,
            probe_fractions: vec![0.2, 0.5, 0.8],
            seed: 0,
            inversion_prompt: InversionPrompt::Neutral,
            zero_visual_scores: false,
            mask_dilation: 2,
        }
    }
}

impl EditConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::param("s", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param("alpha", "must lie in [0, 1]"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::param("tau", "must lie in [0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", "must be positive"));
        }
        if self.n_ddim_steps == 0 || self.n_ddim_steps > sched.steps() {
            return Err(Error::param(
                "n_ddim_steps",
                format!("must lie in 1..={}", sched.steps()),
            ));
        }
        if self.probe_fractions.is_empty() || self.probe_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::param("probe_fractions", "need one or more values in [0, 1]"));
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.tuning_steps,
            batch_size: 1,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

/// Everything an edit needs besides the video and prompt.
#[derive(Debug, Clone)]
pub struct EditContext {
    pub base: Denoiser,
    pub codec: CodecConfig,
    pub book: Codebook,
}

/// Textual factor scores against the video, then the configured variant.
pub fn build_neutral_prompt(book: &Codebook, target: &str, video: &VideoClip, cfg: &EditConfig) -> Result<NeutralPrompt> {
    let prompt = book.embed_prompt(target)?;
    let frames = book.embed_frames_lenient(video);
    let z = identify_text_factors(&prompt.features, &frames.v)?;
    match cfg.neutral_variant {
        NeutralVariant::Swap => factor_swap(&prompt, &z, cfg.s, book),
        NeutralVariant::Deform => deform_prompt(&prompt, &z, cfg.alpha),
        NeutralVariant::DeformableSwap => deformable_swap(&prompt, &z, cfg.s, book),
        NeutralVariant::Blur => factor_blur(&prompt, &z, cfg.seed),
    }
}

/// Fine-tune a copy of `base` on one clip under the given text features.
pub fn tune(
    base: &Denoiser,
    codec: &CodecConfig,
    video: &VideoClip,
    cond: &Array2<f64>,
    cfg: &EditConfig,
) -> Result<(Denoiser, LossCurve)> {
    let mut model = base.clone();
    let example = Example {
        latent: codec.encode(video)?,
        cond: cond.clone(),
    };
    let curve = train(&mut model, std::slice::from_ref(&example), &cfg.train_config())?;
    Ok((model, curve))
}

/// DDIM-invert `source` under `invert_cond`, denoise under `denoise_cond`.
pub fn invert_and_denoise(
    model: &Denoiser,
    codec: &CodecConfig,
    source: &VideoClip,
    invert_cond: &Array2<f64>,
    denoise_cond: &Array2<f64>,
    n_steps: usize,
) -> Result<(VideoClip, f64, LatentVideo)> {
    let z0 = codec.encode(source)?;
    let z_t = invert(model, &z0, invert_cond, &model.schedule, n_steps)?.final_latent;
    let out = denoise(model, &z_t, denoise_cond, &model.schedule, n_steps)?;
    let decoded = codec.decode(&out.final_latent)?;
    Ok((decoded.video, decoded.max_clamp, z_t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Neuedit,
    /// Tune and invert with the source description, denoise with the target.
    SourceBaseline,
    /// Tune, invert and denoise with the target prompt.
    TargetBaseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Neuedit => "neuedit",
            Method::SourceBaseline => "source_baseline",
            Method::TargetBaseline => "target_baseline",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EditResult {
    pub method: Method,
    pub edited: VideoClip,
    /// Largest amount any decoded value was clamped by.
    pub max_clamp: f64,
    pub neutral_prompt: Option<NeutralPrompt>,
    pub visual: Option<VisualFactorScore>,
    pub neutral_video: Option<NeutralVideo>,
    /// `L×P×M` maps from the tuned model on the target prompt.
    pub attention: Option<Array3<f64>>,
    pub tuned: Denoiser,
    pub tuning_curve: LossCurve,
    pub inverted: LatentVideo,
}

/// The editing half of the pipeline, given a model already tuned on `w_n`.
pub fn edit(
    tuned: &Denoiser,
    codec: &CodecConfig,
    book: &Codebook,
    video: &VideoClip,
    target: &str,
    neutral: &NeutralPrompt,
    cfg: &EditConfig,
) -> Result<(VideoClip, f64, VisualFactorScore, NeutralVideo, Array3<f64>, LatentVideo)> {
    cfg.validate(&tuned.schedule)?;
    let w = book.embed_prompt(target)?.features;
    let probes = probe_timesteps(tuned.schedule.steps(), &cfg.probe_fractions);
    let attention = extract_attention(tuned, codec, video, &w, &probes, cfg.seed)?;
    let (l, h, wd) = (video.frames(), video.height(), video.width());
    let (gh, gw) = (h / codec.patch, wd / codec.patch);
    let visual = if cfg.zero_visual_scores {
        VisualFactorScore::zeros(l, h, wd, gh, gw)
    } else {
        compute_visual_scores(&attention, &neutral.z_t, gh, gw, h, wd, cfg.tau)?
    };
    let neutral_video = make_neutral_video(video, &visual.z_v, cfg.sigma)?;
    let invert_cond = match cfg.inversion_prompt {
        InversionPrompt::Neutral => &neutral.features,
        InversionPrompt::Target => &w,
    };
    let (edited, max_clamp, inverted) =
        invert_and_denoise(tuned, codec, &neutral_video.video, invert_cond, &w, cfg.n_ddim_steps)?;
    Ok((edited, max_clamp, visual, neutral_video, attention, inverted))
}

/// Full NeuEdit: neutral prompt, tuning on it, neutral video, editing.
pub fn neuedit(ctx: &EditContext, video: &VideoClip, target: &str, cfg: &EditConfig) -> Result<EditResult> {
    cfg.validate(&ctx.base.schedule)?;
    let neutral = build_neutral_prompt(&ctx.book, target, video, cfg)?;
    let (tuned, curve) = tune(&ctx.base, &ctx.codec, video, &neutral.features, cfg)?;
    let (edited, max_clamp, visual, neutral_video, attention, inverted) =
        edit(&tuned, &ctx.codec, &ctx.book, video, target, &neutral, cfg)?;
    Ok(EditResult {
        method: Method::Neuedit,
        edited,
        max_clamp,
        neutral_prompt: Some(neutral),
        visual: Some(visual),
        neutral_video: Some(neutral_video),
        attention: Some(attention),
        tuned,
        tuning_curve: curve,
        inverted,
    })
}

fn baseline(ctx: &EditContext, video: &VideoClip, tune_text: &str, target: &str, cfg: &EditConfig, method: Method) -> Result<EditResult> {
    cfg.validate(&ctx.base.schedule)?;
    let tune_cond = ctx.book.embed_prompt(tune_text)?.features;
    let w = ctx.book.embed_prompt(target)?.features;
    let (tuned, curve) = tune(&ctx.base, &ctx.codec, video, &tune_cond, cfg)?;
    let (edited, max_clamp, inverted) = invert_and_denoise(&tuned, &ctx.codec, video, &tune_cond, &w, cfg.n_ddim_steps)?;
    Ok(EditResult {
        method,
        edited,
        max_clamp,
        neutral_prompt: None,
        visual: None,
        neutral_video: None,
        attention: None,
        tuned,
        tuning_curve: curve,
        inverted,
    })
}

/// Conventional pipeline: needs a caption of the input video.
pub fn plain_edit_baseline(ctx: &EditContext, video: &VideoClip, source: &str, target: &str, cfg: &EditConfig) -> Result<EditResult> {
    baseline(ctx, video, source, target, cfg, Method::SourceBaseline)
}

/// Tuning directly on the target prompt.
pub fn target_prompt_baseline(ctx: &EditContext, video: &VideoClip, target: &str, cfg: &EditConfig) -> Result<EditResult> {
    baseline(ctx, video, target, target, cfg, Method::TargetBaseline)
}

/// Settings for pretraining the base model on rendered clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub clips: usize,
    pub data_seed: u64,
    pub schedule_steps: usize,
    pub schedule_kind: ScheduleKind,
    pub model: DenoiserConfig,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            clips: 64,
            data_seed: 1_000,
            schedule_steps: 200,
            schedule_kind: ScheduleKind::Linear,
            model: DenoiserConfig::default(),
            init_seed: 0,
            train: TrainConfig {
                epochs: 30,
                batch_size: 4,
                lr: 2e-3,
                seed: 0,
            },
        }
    }
}

/// Rendered clips with their descriptions, seeds `data_seed..data_seed+n`.
pub fn synthetic_dataset(n: usize, data_seed: u64, world: &WorldConfig) -> Result<Vec<(VideoClip, String, u64)>> {
    use rand::SeedableRng;
    (0..n as u64)
        .map(|i| {
            let seed = data_seed + i;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let spec = random_spec(&mut rng, world);
            Ok((render_scene(&spec, seed)?, describe(&spec), seed))
        })
        .collect()
}

pub fn pretrain(
    codec: &CodecConfig,
    book: &Codebook,
    clips: &[(VideoClip, String)],
    cfg: &PretrainConfig,
) -> Result<(Denoiser, LossCurve)> {
    let sched = NoiseSchedule::new(cfg.schedule_steps, cfg.schedule_kind)?;
    let mut model = Denoiser::new(cfg.model.clone(), sched, cfg.init_seed)?;
    let data = clips
        .iter()
        .map(|(v, text)| {
            Ok(Example {
                latent: codec.encode(v)?,
                cond: book.embed_prompt(text)?.features,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = train(&mut model, &data, &cfg.train)?;
    Ok((model, curve))
}
