//! Train the base denoiser on every clip of a dataset directory.

use std::path::Path;

use neuedit::diffusion::Checkpoint;
use neuedit::embeddings::Codebook;
use neuedit::pipeline::pretrain;
use neuedit::world::describe;

use crate::commands::{load_clip_dir, require_exists, sorted_subdirs};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{create_dir, hash_file, sibling, write_text, FileEntry, Manifest};
use crate::plot::write_line_plot;

pub fn run(data: &Path, out: &Path, cfg: &RunConfig, args: Vec<String>) -> Result<Manifest> {
    require_exists(data)?;
    let book = Codebook::default_codebook();
    let codec = cfg.codec()?;
    let mut clips = Vec::new();
    let mut manifest = Manifest::new("pretrain", args, cfg)?;
    for dir in sorted_subdirs(data)? {
        let clip = match load_clip_dir(&dir) {
            Ok(c) => c,
            Err(CliError::Usage(_)) => continue,
            Err(e) => return Err(e),
        };
        // training needs a caption, so only clips with a scene manifest count
        let Some(m) = clip.manifest else { continue };
        manifest.add_input_tree(&dir)?;
        clips.push((clip.video, describe(&m.spec)));
    }
    if clips.is_empty() {
        return Err(CliError::Usage(format!("no captioned clips under {}", data.display())));
    }
    let pcfg = cfg.pretrain_config(clips.len());
    let (model, curve) = pretrain(&codec, &book, &clips, &pcfg)?;
    let ckpt = Checkpoint {
        model,
        codec,
        init_seed: cfg.seed,
        codebook_hash: book.content_hash(),
    };
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    ckpt.save(out)?;
    let csv = sibling(out, "loss.csv");
    write_text(&csv, &curve.to_csv())?;
    let pgm = sibling(out, "loss.pgm");
    let xs: Vec<f64> = (0..curve.losses.len()).map(|i| i as f64).collect();
    write_line_plot(&pgm, &xs, &curve.losses)?;

    manifest.set_outputs(vec![
        FileEntry { path: "checkpoint".into(), sha256: hash_file(out)? },
        FileEntry { path: "loss.csv".into(), sha256: hash_file(&csv)? },
        FileEntry { path: "loss.pgm".into(), sha256: hash_file(&pgm)? },
    ]);
    manifest.write(&sibling(out, "manifest.json"))?;
    Ok(manifest)
}
