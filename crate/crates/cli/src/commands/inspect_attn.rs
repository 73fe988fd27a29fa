//! Per-frame, per-token attention heatmaps from an edit run.

use std::path::Path;

use ndarray::Array2;
use neuedit::video::write_pgm;

use crate::commands::edit::{AttentionMeta, ATTENTION_BLOB, ATTENTION_FILE};
use crate::commands::require_exists;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{create_dir, hash_tree, read_f64_blob, read_json, Manifest, MANIFEST_NAME};

/// Heatmaps upscaled by the patch size with nearest neighbour. Each map is
/// stretched to its own `[min, max]`.
pub fn heatmaps(values: &[f64], meta: &AttentionMeta) -> Result<Vec<Vec<Array2<f64>>>> {
    let (l, gh, gw, m) = (meta.frames, meta.grid_h, meta.grid_w, meta.tokens.len());
    let p = gh * gw;
    if values.len() != l * p * m {
        return Err(neuedit::Error::ShapeMismatch(format!(
            "{} attention values for {l} frames × {p} patches × {m} tokens",
            values.len()
        ))
        .into());
    }
    let s = meta.patch.max(1);
    let mut out = Vec::with_capacity(l);
    for f in 0..l {
        let mut per_token = Vec::with_capacity(m);
        for k in 0..m {
            let at = |i: usize| values[(f * p + i) * m + k];
            let (lo, hi) = (0..p).map(at).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let range = hi - lo;
            let img = Array2::from_shape_fn((gh * s, gw * s), |(y, x)| {
                let v = at((y / s) * gw + x / s);
                if range > 0.0 { (v - lo) / range } else { 0.0 }
            });
            per_token.push(img);
        }
        out.push(per_token);
    }
    Ok(out)
}

pub fn run(run_dir: &Path, out: Option<&Path>, cfg: &RunConfig, args: Vec<String>) -> Result<Manifest> {
    require_exists(run_dir)?;
    let meta_path = run_dir.join(ATTENTION_FILE);
    if !meta_path.exists() {
        return Err(CliError::Usage(format!("{} has no {ATTENTION_FILE}", run_dir.display())));
    }
    let meta: AttentionMeta = read_json(&meta_path)?;
    let values = read_f64_blob(&run_dir.join(ATTENTION_BLOB))?;
    let maps = heatmaps(&values, &meta)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("attention"));
    create_dir(&out)?;
    let mut manifest = Manifest::new("inspect-attn", args, cfg)?;
    manifest.add_input_file(&meta_path)?;
    manifest.add_input_file(&run_dir.join(ATTENTION_BLOB))?;
    for (f, per_token) in maps.iter().enumerate() {
        for (k, img) in per_token.iter().enumerate() {
            let name = format!("frame{f:03}_tok{k:02}_{}.pgm", meta.tokens[k]);
            write_pgm(&out.join(name), &img.view())?;
        }
    }
    manifest.set_outputs(hash_tree(&out, &[MANIFEST_NAME])?);
    manifest.write(&out.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_frame_patch_token() {
        let meta = AttentionMeta {
            frames: 1,
            grid_h: 1,
            grid_w: 2,
            patch: 2,
            tokens: vec!["a".into(), "b".into()],
            probe_timesteps: vec![1],
        };
        // patch 0: (0.9, 0.1), patch 1: (0.2, 0.8)
        let maps = heatmaps(&[0.9, 0.1, 0.2, 0.8], &meta).unwrap();
        assert_eq!(maps[0][0].dim(), (2, 4));
        assert_eq!(maps[0][0][[0, 0]], 1.0);
        assert_eq!(maps[0][0][[1, 3]], 0.0);
        assert_eq!(maps[0][1][[0, 0]], 0.0);
        assert_eq!(maps[0][1][[0, 2]], 1.0);
        assert!(heatmaps(&[0.0; 3], &meta).is_err());
    }
}
