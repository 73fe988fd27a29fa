//! One edit of one clip, written as a self-describing run directory.

use std::path::Path;

use ndarray::Array3;
use neuedit::diffusion::Checkpoint;
use neuedit::embeddings::Codebook;
use neuedit::hash::ContentHasher;
use neuedit::metrics::{edit_region_mask_from_scores, evaluate, EvalInputs};
use neuedit::neutral_video::{extract_attention, probe_timesteps};
use neuedit::pipeline::{neuedit as run_neuedit, plain_edit_baseline, target_prompt_baseline, EditContext, EditResult, Method};
use neuedit::video::write_pgm;
use serde::{Deserialize, Serialize};

use crate::commands::{load_clip_dir, require_exists};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{create_dir, hash_tree, write_f64_blob, write_json, write_text, Manifest, MANIFEST_NAME};

pub const RESULT_FILE: &str = "result.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const ATTENTION_FILE: &str = "attention.json";
pub const ATTENTION_BLOB: &str = "attention.f64";

/// Shape and labels of `attention.f64`, stored `(frame, patch, token)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMeta {
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch: usize,
    pub tokens: Vec<String>,
    pub probe_timesteps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub target_prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_prompt: Option<String>,
    pub source_hash: String,
    pub edited_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neutral_video_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_v_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_v_support: Option<f64>,
    pub tuned_checkpoint_hash: String,
    pub base_checkpoint_hash: String,
    pub max_clamp: f64,
    pub tuning_loss_first: Option<f64>,
    pub tuning_loss_last: Option<f64>,
}

pub struct EditRequest<'a> {
    pub video: &'a Path,
    pub prompt: Option<&'a str>,
    pub source_prompt: Option<&'a str>,
    pub ckpt: &'a Path,
    pub method: Method,
    pub out: &'a Path,
}

/// Load a base checkpoint and check it against the run config.
pub fn load_base(path: &Path, cfg: &RunConfig, book: &Codebook) -> Result<Checkpoint> {
    require_exists(path)?;
    let ckpt = Checkpoint::load(path)?;
    let s = &ckpt.model.schedule;
    if s.steps() != cfg.schedule.steps || s.kind != cfg.schedule.kind {
        return Err(CliError::Config(format!(
            "checkpoint schedule ({} steps, {:?}) differs from config ({} steps, {:?})",
            s.steps(),
            s.kind,
            cfg.schedule.steps,
            cfg.schedule.kind
        )));
    }
    if ckpt.codebook_hash != book.content_hash() {
        return Err(neuedit::Error::HashMismatch {
            what: "codebook".into(),
            expected: ckpt.codebook_hash.clone(),
            found: book.content_hash(),
        }
        .into());
    }
    Ok(ckpt)
}

fn field_hash(a: &Array3<f64>) -> String {
    let mut h = ContentHasher::new();
    let (x, y, z) = a.dim();
    h.u64(x as u64).u64(y as u64).u64(z as u64).f64s(a.iter());
    h.finish()
}

pub fn run(req: &EditRequest<'_>, cfg: &RunConfig, args: Vec<String>) -> Result<(Manifest, RunRecord)> {
    let book = Codebook::default_codebook();
    let clip = load_clip_dir(req.video)?;
    let base = load_base(req.ckpt, cfg, &book)?;
    let target = match (req.prompt, &clip.task) {
        (Some(p), _) => p.to_string(),
        (None, Some(t)) => t.target_prompt.clone(),
        (None, None) => return Err(CliError::Usage("--prompt is required for clips without task.json".into())),
    };
    let source = req
        .source_prompt
        .map(str::to_string)
        .or_else(|| clip.task.as_ref().map(|t| t.source_prompt.clone()))
        .or_else(|| clip.manifest.as_ref().map(|m| neuedit::world::describe(&m.spec)));

    let mut manifest = Manifest::new("edit", args, cfg)?;
    manifest.add_input_tree(req.video)?;
    manifest.add_input_file(req.ckpt)?;

    let base_hash = base.content_hash()?;
    let ctx = EditContext {
        base: base.model.clone(),
        codec: base.codec.clone(),
        book: book.clone(),
    };
    let video = &clip.video;
    let result: EditResult = match req.method {
        Method::Neuedit => run_neuedit(&ctx, video, &target, &cfg.edit)?,
        Method::TargetBaseline => target_prompt_baseline(&ctx, video, &target, &cfg.edit)?,
        Method::SourceBaseline => {
            let src = source
                .as_deref()
                .ok_or_else(|| CliError::Usage("--source-prompt is required for source_baseline on this clip".into()))?;
            plain_edit_baseline(&ctx, video, src, &target, &cfg.edit)?
        }
    };

    let out = req.out;
    create_dir(out)?;
    result.edited.write_ppm_dir(&out.join("edited"))?;

    // attention of the tuned model on the target prompt; baselines too, so
    // every run can be inspected
    let prompt = book.embed_prompt(&target)?;
    let probes = probe_timesteps(result.tuned.schedule.steps(), &cfg.edit.probe_fractions);
    let attention = match &result.attention {
        Some(a) => a.clone(),
        None => extract_attention(&result.tuned, &base.codec, video, &prompt.features, &probes, cfg.edit.seed)?,
    };
    let p = base.codec.patch;
    write_f64_blob(&out.join(ATTENTION_BLOB), attention.iter().copied())?;
    write_json(
        &out.join(ATTENTION_FILE),
        &AttentionMeta {
            frames: video.frames(),
            grid_h: video.height() / p,
            grid_w: video.width() / p,
            patch: p,
            tokens: prompt.tokens.clone(),
            probe_timesteps: probes,
        },
    )?;

    let mut auto_mask = None;
    if let (Some(np), Some(vis), Some(nv)) = (&result.neutral_prompt, &result.visual, &result.neutral_video) {
        nv.video.write_ppm_dir(&out.join("neutral"))?;
        let zdir = out.join("z_v");
        create_dir(&zdir)?;
        for (i, plane) in vis.z_v.outer_iter().enumerate() {
            write_pgm(&zdir.join(format!("z_v_{i:03}.pgm")), &plane)?;
        }
        write_f64_blob(&out.join("z_v.f64"), vis.z_v.iter().copied())?;
        write_f64_blob(&out.join("neutral_features.f64"), np.features.iter().copied())?;
        let mut fh = ContentHasher::new();
        fh.f64s(np.features.iter());
        write_json(&out.join("neutral_prompt.json"), &np.record(&fh.finish()))?;
        let m = edit_region_mask_from_scores(&vis.z_v, cfg.edit.mask_dilation);
        if m.count() > 0 {
            auto_mask = Some(m);
        }
    }
    write_text(&out.join("loss.csv"), &result.tuning_curve.to_csv())?;
    let tuned = Checkpoint {
        model: result.tuned.clone(),
        codec: base.codec.clone(),
        init_seed: base.init_seed,
        codebook_hash: base.codebook_hash.clone(),
    };
    tuned.save(&out.join("tuned.ckpt"))?;

    // named after the input so outputs do not depend on where they land
    let run_name = req
        .video
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = evaluate(
        &book,
        &EvalInputs {
            run: &run_name,
            method: req.method.name(),
            task_kind: clip.task.as_ref().map(|t| t.kind),
            source: video,
            edited: &result.edited,
            target_prompt: &target,
            auto_mask: auto_mask.as_ref().map(|m| (m, "z_v_support")),
            gt_mask: clip.region.as_ref(),
        },
    )?;
    write_json(&out.join(METRICS_FILE), &report)?;

    let record = RunRecord {
        method: req.method,
        target_prompt: target,
        source_prompt: source,
        source_hash: video.content_hash(),
        edited_hash: result.edited.content_hash(),
        neutral_video_hash: result.neutral_video.as_ref().map(|n| n.video.content_hash()),
        z_v_hash: result.visual.as_ref().map(|v| field_hash(&v.z_v)),
        z_v_support: result.visual.as_ref().map(|v| v.support_fraction()),
        tuned_checkpoint_hash: tuned.content_hash()?,
        base_checkpoint_hash: base_hash,
        max_clamp: result.max_clamp,
        tuning_loss_first: result.tuning_curve.first(),
        tuning_loss_last: result.tuning_curve.last(),
    };
    write_json(&out.join(RESULT_FILE), &record)?;

    manifest.set_outputs(hash_tree(out, &[MANIFEST_NAME])?);
    manifest.write(&out.join(MANIFEST_NAME))?;
    Ok((manifest, record))
}
