//! One-parameter sweeps over the neutralisation settings.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array3;
use neuedit::codec::CodecConfig;
use neuedit::diffusion::Denoiser;
use neuedit::embeddings::Codebook;
use neuedit::metrics::textual_alignment;
use neuedit::neutral_text::NeutralVariant;
use neuedit::neutral_video::make_neutral_video;
use neuedit::pipeline::{build_neutral_prompt, edit, neuedit, tune, EditConfig, EditContext};
use neuedit::video::{Mask, VideoClip, CHANNELS};
use neuedit::world::{sample_edit_task, WorldConfig};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{create_dir, hash_tree, write_text, Manifest, MANIFEST_NAME};
use crate::plot::write_line_plot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    S,
    Alpha,
    Sigma,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::S => "s",
            SweepParam::Alpha => "alpha",
            SweepParam::Sigma => "sigma",
        }
    }
}

impl FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" => Ok(SweepParam::S),
            "alpha" => Ok(SweepParam::Alpha),
            "sigma" => Ok(SweepParam::Sigma),
            other => Err(CliError::Usage(format!("unknown sweep parameter {other:?} (s, alpha or sigma)"))),
        }
    }
}

pub struct SweepOptions<'a> {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub tasks: usize,
    pub seed: u64,
    pub world: WorldConfig,
    pub edit: EditConfig,
    /// When present every grid point is also edited end to end.
    pub model: Option<(&'a Denoiser, &'a CodecConfig)>,
}

/// One task at one grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub task_seed: u64,
    pub value: f64,
    /// Tokens replaced by the dummy token.
    pub swapped: usize,
    /// Mean projection of each neutral-prompt row onto its target row, ×100.
    pub target_retention: f64,
    /// Mean absolute change `|V_n − V|` inside the ground-truth edit region.
    pub region_change: Option<f64>,
    pub edit_alignment: Option<f64>,
}

/// Task means at one grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub value: f64,
    pub swap_count: f64,
    pub target_retention: f64,
    pub region_change: Option<f64>,
    pub edit_alignment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    pub curve: Vec<CurvePoint>,
}

pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let grid = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("grid value {v:?} is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if grid.is_empty() {
        return Err(CliError::Usage("empty grid".into()));
    }
    Ok(grid)
}

fn retention(w: &ndarray::Array2<f64>, wn: &ndarray::Array2<f64>) -> f64 {
    let n = w.nrows().max(1) as f64;
    let total: f64 = w
        .outer_iter()
        .zip(wn.outer_iter())
        .map(|(a, b)| {
            let aa = a.dot(&a);
            if aa > 0.0 { a.dot(&b) / aa } else { 1.0 }
        })
        .sum();
    100.0 * total / n
}

/// Mean absolute per-channel change inside `region`.
pub fn region_change(a: &VideoClip, b: &VideoClip, region: &Mask) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for ((f, y, x), &inside) in region.data.indexed_iter() {
        if inside {
            for c in 0..CHANNELS {
                s += (a.data[[f, y, x, c]] - b.data[[f, y, x, c]]).abs();
            }
            n += CHANNELS;
        }
    }
    (n > 0).then(|| s / n as f64)
}

fn with_value(base: &EditConfig, param: SweepParam, v: f64) -> EditConfig {
    let mut cfg = base.clone();
    match param {
        SweepParam::S => {
            cfg.s = v;
            if cfg.neutral_variant != NeutralVariant::DeformableSwap {
                cfg.neutral_variant = NeutralVariant::Swap;
            }
        }
        SweepParam::Alpha => {
            cfg.alpha = v;
            cfg.neutral_variant = NeutralVariant::Deform;
        }
        SweepParam::Sigma => cfg.sigma = v,
    }
    cfg
}

pub fn run_sweep(book: &Codebook, opts: &SweepOptions<'_>) -> Result<SweepOutcome> {
    if opts.tasks == 0 {
        return Err(CliError::Usage("--tasks must be at least 1".into()));
    }
    for &v in &opts.grid {
        let cfg = with_value(&opts.edit, opts.param, v);
        if let Some((m, _)) = opts.model {
            cfg.validate(&m.schedule)?;
        } else if !(cfg.s > 0.0 && cfg.s < 1.0) || !(0.0..=1.0).contains(&cfg.alpha) || !(cfg.sigma > 0.0) {
            return Err(neuedit::Error::InvalidParameter {
                name: "grid",
                reason: format!("{} = {v} is out of range", opts.param.name()),
            }
            .into());
        }
    }
    let mut rows = Vec::with_capacity(opts.tasks * opts.grid.len());
    for i in 0..opts.tasks as u64 {
        let task = sample_edit_task(opts.seed + i, &opts.world)?;
        let w = book.embed_prompt(&task.target_prompt)?.features;
        let ctx = opts.model.map(|(m, c)| EditContext {
            base: m.clone(),
            codec: c.clone(),
            book: book.clone(),
        });
        // for sigma only the neutral video changes, so tune once per task
        let tuned = match (&ctx, opts.param) {
            (Some(ctx), SweepParam::Sigma) => {
                let np = build_neutral_prompt(book, &task.target_prompt, &task.video, &opts.edit)?;
                Some((tune(&ctx.base, &ctx.codec, &task.video, &np.features, &opts.edit)?.0, np))
            }
            _ => None,
        };
        for &v in &opts.grid {
            let cfg = with_value(&opts.edit, opts.param, v);
            let np = build_neutral_prompt(book, &task.target_prompt, &task.video, &cfg)?;
            let mut row = SweepRow {
                task_seed: task.seed,
                value: v,
                swapped: np.swapped.len(),
                target_retention: retention(&w, &np.features),
                region_change: None,
                edit_alignment: None,
            };
            match (&ctx, &tuned) {
                (Some(ctx), Some((model, np))) => {
                    let (edited, _, _, nv, _, _) = edit(model, &ctx.codec, book, &task.video, &task.target_prompt, np, &cfg)?;
                    row.region_change = region_change(&nv.video, &task.video, &task.edit_region_mask);
                    row.edit_alignment = Some(textual_alignment(book, &edited, &task.target_prompt)?);
                }
                (Some(ctx), None) => {
                    let r = neuedit(ctx, &task.video, &task.target_prompt, &cfg)?;
                    row.edit_alignment = Some(textual_alignment(book, &r.edited, &task.target_prompt)?);
                }
                (None, _) if opts.param == SweepParam::Sigma => {
                    // without a model the ground-truth region stands in for z_V
                    let z: Array3<f64> = task.edit_region_mask.as_field();
                    let nv = make_neutral_video(&task.video, &z, v)?;
                    row.region_change = region_change(&nv.video, &task.video, &task.edit_region_mask);
                }
                (None, _) => {}
            }
            rows.push(row);
        }
    }
    let curve = opts
        .grid
        .iter()
        .enumerate()
        .map(|(g, &value)| {
            let at: Vec<&SweepRow> = rows.iter().skip(g).step_by(opts.grid.len()).collect();
            let n = at.len() as f64;
            let opt_mean = |f: &dyn Fn(&SweepRow) -> Option<f64>| {
                let vals: Vec<f64> = at.iter().filter_map(|r| f(r)).collect();
                (vals.len() == at.len()).then(|| vals.iter().sum::<f64>() / n)
            };
            CurvePoint {
                value,
                swap_count: at.iter().map(|r| r.swapped as f64).sum::<f64>() / n,
                target_retention: at.iter().map(|r| r.target_retention).sum::<f64>() / n,
                region_change: opt_mean(&|r| r.region_change),
                edit_alignment: opt_mean(&|r| r.edit_alignment),
            }
        })
        .collect();
    Ok(SweepOutcome {
        param: opts.param,
        rows,
        curve,
    })
}

/// Non-decreasing (`rising`) or non-increasing along the grid order.
pub fn is_monotone(values: &[f64], rising: bool) -> bool {
    values
        .windows(2)
        .all(|w| if rising { w[1] >= w[0] } else { w[1] <= w[0] })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn rows_csv(o: &SweepOutcome) -> String {
    let mut s = format!("task_seed,{},swapped,target_retention,region_change,edit_alignment\n", o.param.name());
    for r in &o.rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{},{}",
            r.task_seed,
            r.value,
            r.swapped,
            r.target_retention,
            cell(r.region_change),
            cell(r.edit_alignment)
        );
    }
    s
}

pub fn curve_csv(o: &SweepOutcome) -> String {
    let mut s = format!("{},swap_count,target_retention,region_change,edit_alignment\n", o.param.name());
    for p in &o.curve {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{}",
            p.value,
            p.swap_count,
            p.target_retention,
            cell(p.region_change),
            cell(p.edit_alignment)
        );
    }
    s
}

/// Write `sweep.csv`, `curve.csv` and one PGM plot per available column.
pub fn write_outputs(o: &SweepOutcome, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_text(&out.join("sweep.csv"), &rows_csv(o))?;
    write_text(&out.join("curve.csv"), &curve_csv(o))?;
    let xs: Vec<f64> = o.curve.iter().map(|p| p.value).collect();
    let cols: [(&str, Vec<Option<f64>>); 4] = [
        ("swap_count", o.curve.iter().map(|p| Some(p.swap_count)).collect()),
        ("target_retention", o.curve.iter().map(|p| Some(p.target_retention)).collect()),
        ("region_change", o.curve.iter().map(|p| p.region_change).collect()),
        ("edit_alignment", o.curve.iter().map(|p| p.edit_alignment).collect()),
    ];
    for (name, ys) in cols {
        if let Some(ys) = ys.into_iter().collect::<Option<Vec<f64>>>() {
            write_line_plot(&out.join(format!("curve_{name}.pgm")), &xs, &ys)?;
        }
    }
    Ok(())
}

pub fn run(opts: &SweepOptions<'_>, out: &Path, cfg: &RunConfig, ckpt: Option<&Path>, args: Vec<String>) -> Result<(Manifest, SweepOutcome)> {
    let book = Codebook::default_codebook();
    let mut manifest = Manifest::new("sweep", args, cfg)?;
    if let Some(p) = ckpt {
        manifest.add_input_file(p)?;
    }
    let outcome = run_sweep(&book, opts)?;
    write_outputs(&outcome, out)?;
    manifest.set_outputs(hash_tree(out, &[MANIFEST_NAME])?);
    manifest.write(&out.join(MANIFEST_NAME))?;
    Ok((manifest, outcome))
}
