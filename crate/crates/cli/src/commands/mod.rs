pub mod edit;
pub mod eval;
pub mod gen_data;
pub mod inspect_attn;
pub mod pretrain;
pub mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use neuedit::video::{frame_file_name, Mask, VideoClip};
use neuedit::world::{load_scene, ClipManifest};

use crate::error::{CliError, Result};
use crate::manifest::read_json;

pub use gen_data::TaskRecord;

/// A clip directory as read back from disk.
pub struct LoadedClip {
    pub video: VideoClip,
    pub manifest: Option<ClipManifest>,
    /// Union of the object masks over all frames, when masks were saved.
    pub region: Option<Mask>,
    pub task: Option<TaskRecord>,
}

/// Read a clip directory: `manifest.json` plus masks when present, otherwise
/// every consecutive `frame_NNN.ppm`.
pub fn load_clip_dir(dir: &Path) -> Result<LoadedClip> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let task_path = dir.join(gen_data::TASK_FILE);
    let task = if task_path.exists() {
        Some(read_json::<TaskRecord>(&task_path)?)
    } else {
        None
    };
    if dir.join("manifest.json").exists() {
        if let Ok((manifest, scene)) = load_scene(dir) {
            return Ok(LoadedClip {
                video: scene.video,
                manifest: Some(manifest),
                region: Some(scene.object_masks.union_over_frames()),
                task,
            });
        }
    }
    let frames = (0..).take_while(|&i| dir.join(frame_file_name(i)).exists()).count();
    if frames == 0 {
        return Err(CliError::Usage(format!("no frames found in {}", dir.display())));
    }
    Ok(LoadedClip {
        video: VideoClip::read_ppm_dir(dir, frames)?,
        manifest: None,
        region: None,
        task,
    })
}

/// Immediate subdirectories, sorted by name.
pub fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if entry.path().is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

pub fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} does not exist", path.display())))
    }
}
