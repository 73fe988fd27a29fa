//! Sample edit tasks and persist their source clips.

use std::path::Path;

use neuedit::world::{render_with_masks, sample_edit_task, save_scene, SceneSpec, TaskKind, DEFAULT_PATCH};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{create_dir, hash_tree, write_json, Manifest, MANIFEST_NAME};

pub const TASK_FILE: &str = "task.json";

/// `task.json` beside each clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub seed: u64,
    pub kind: TaskKind,
    pub source_prompt: String,
    pub target_prompt: String,
    pub edit_word_index: usize,
    pub target_spec: SceneSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub seed: u64,
    pub clips: Vec<String>,
}

pub fn clip_dir_name(i: usize) -> String {
    format!("clip_{i:04}")
}

pub fn run(out: &Path, n: usize, seed: u64, cfg: &RunConfig, args: Vec<String>) -> Result<Manifest> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    create_dir(out)?;
    let mut names = Vec::with_capacity(n);
    for i in 0..n {
        let task = sample_edit_task(seed + i as u64, &cfg.world)?;
        // re-render for the masks at the same seed
        let scene = render_with_masks(&task.source_spec, task.seed, DEFAULT_PATCH)?;
        let name = clip_dir_name(i);
        let dir = out.join(&name);
        save_scene(&dir, &task.source_spec, task.seed, &scene)?;
        write_json(
            &dir.join(TASK_FILE),
            &TaskRecord {
                seed: task.seed,
                kind: task.kind,
                source_prompt: task.source_prompt(),
                target_prompt: task.target_prompt.clone(),
                edit_word_index: task.edit_word_index,
                target_spec: task.target_spec,
            },
        )?;
        names.push(name);
    }
    write_json(&out.join("dataset.json"), &DatasetIndex { seed, clips: names })?;
    let mut manifest = Manifest::new("gen-data", args, cfg)?;
    manifest.set_outputs(hash_tree(out, &[MANIFEST_NAME])?);
    manifest.write(&out.join(MANIFEST_NAME))?;
    Ok(manifest)
}
