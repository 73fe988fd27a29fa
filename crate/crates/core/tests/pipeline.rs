use neuedit::codec::CodecConfig;
use neuedit::diffusion::{Checkpoint, Denoiser, DenoiserConfig, NoiseSchedule, ScheduleKind};
use neuedit::embeddings::Codebook;
use neuedit::neutral_text::NeutralVariant;
use neuedit::pipeline::{
    neuedit, plain_edit_baseline, pretrain, synthetic_dataset, target_prompt_baseline, EditConfig, EditContext,
    PretrainConfig,
};
use neuedit::world::{sample_edit_task, WorldConfig};

fn world() -> WorldConfig {
    WorldConfig {
        frames: 4,
        height: 32,
        width: 32,
        ..WorldConfig::default().motion_only()
    }
}

fn model_config() -> DenoiserConfig {
    DenoiserConfig {
        latent_dim: 192,
        patches: 16,
        hidden: 16,
        mlp_hidden: 16,
        ..DenoiserConfig::default()
    }
}

fn trained_ctx() -> EditContext {
    let codec = CodecConfig::new(8, 77).unwrap();
    let book = Codebook::default_codebook();
    let mut pc = PretrainConfig {
        clips: 6,
        schedule_steps: 20,
        model: model_config(),
        ..PretrainConfig::default()
    };
    pc.train.epochs = 3;
    let data: Vec<_> = synthetic_dataset(pc.clips, pc.data_seed, &world())
        .unwrap()
        .into_iter()
        .map(|(v, d, _)| (v, d))
        .collect();
    let (base, curve) = pretrain(&codec, &book, &data, &pc).unwrap();
    assert!(curve.losses.iter().all(|l| l.is_finite()));
    EditContext { base, codec, book }
}

fn quick() -> EditConfig {
    EditConfig {
        tuning_steps: 6,
        n_ddim_steps: 5,
        ..EditConfig::default()
    }
}

#[test]
fn every_variant_produces_a_finite_edit_of_the_input_shape() {
    let ctx = trained_ctx();
    let task = sample_edit_task(2, &world()).unwrap();
    for variant in [NeutralVariant::Swap, NeutralVariant::Deform, NeutralVariant::DeformableSwap, NeutralVariant::Blur] {
        let cfg = EditConfig {
            neutral_variant: variant,
            ..quick()
        };
        let r = neuedit(&ctx, &task.video, &task.target_prompt, &cfg).unwrap();
        assert!(r.edited.same_shape(&task.video), "{variant:?}");
        assert!(r.edited.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let vis = r.visual.unwrap();
        assert!(vis.z_v.iter().all(|&z| z == 0.0 || (cfg.tau..=1.0).contains(&z)));
        assert_eq!(r.tuning_curve.losses.len(), cfg.tuning_steps);
    }
}

#[test]
fn edits_are_deterministic() {
    let ctx = trained_ctx();
    let task = sample_edit_task(4, &world()).unwrap();
    let a = neuedit(&ctx, &task.video, &task.target_prompt, &quick()).unwrap();
    let b = neuedit(&ctx, &task.video, &task.target_prompt, &quick()).unwrap();
    assert_eq!(a.edited.content_hash(), b.edited.content_hash());
    assert_eq!(a.tuned.params, b.tuned.params);
    let other = EditConfig { seed: 1, ..quick() };
    let c = neuedit(&ctx, &task.video, &task.target_prompt, &other).unwrap();
    assert_ne!(a.edited.content_hash(), c.edited.content_hash());
}

#[test]
fn identity_neutralisation_collapses_to_target_tuning() {
    let ctx = trained_ctx();
    let task = sample_edit_task(6, &world()).unwrap();
    let cfg = EditConfig {
        neutral_variant: NeutralVariant::Deform,
        alpha: 1.0,
        zero_visual_scores: true,
        ..quick()
    };
    let a = neuedit(&ctx, &task.video, &task.target_prompt, &cfg).unwrap();
    let b = target_prompt_baseline(&ctx, &task.video, &task.target_prompt, &cfg).unwrap();
    assert_eq!(a.edited.data, b.edited.data);
    assert_eq!(a.neutral_video.unwrap().video.data, task.video.data);
    // the source-prompt baseline tunes on different text
    let c = plain_edit_baseline(&ctx, &task.video, &task.source_prompt(), &task.target_prompt, &cfg).unwrap();
    assert_ne!(c.edited.data, b.edited.data);
}

#[test]
fn checkpoint_file_round_trip_preserves_edits() {
    let ctx = trained_ctx();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.ckpt");
    Checkpoint {
        model: ctx.base.clone(),
        codec: ctx.codec.clone(),
        init_seed: 0,
        codebook_hash: ctx.book.content_hash(),
    }
    .save(&path)
    .unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.model, ctx.base);
    let ctx2 = EditContext {
        base: loaded.model,
        codec: loaded.codec,
        book: ctx.book.clone(),
    };
    let task = sample_edit_task(8, &world()).unwrap();
    let a = neuedit(&ctx, &task.video, &task.target_prompt, &quick()).unwrap();
    let b = neuedit(&ctx2, &task.video, &task.target_prompt, &quick()).unwrap();
    assert_eq!(a.edited.data, b.edited.data);

    // a flipped parameter byte is caught on load
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 8 * ctx.codec.q.len() - 3] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(neuedit::Error::HashMismatch { .. })));
}

#[test]
fn mismatched_model_and_codec_are_rejected() {
    let codec = CodecConfig::new(8, 77).unwrap();
    let sched = NoiseSchedule::new(20, ScheduleKind::Linear).unwrap();
    let cfg = DenoiserConfig {
        latent_dim: 48,
        ..model_config()
    };
    let ctx = EditContext {
        base: Denoiser::new(cfg, sched, 0).unwrap(),
        codec,
        book: Codebook::default_codebook(),
    };
    let task = sample_edit_task(1, &world()).unwrap();
    assert!(neuedit(&ctx, &task.video, &task.target_prompt, &quick()).is_err());
}
