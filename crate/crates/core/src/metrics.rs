//! Masked fidelity, textual alignment and frame consistency.

use ndarray::{Array1, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::embeddings::{analyze_frame, cosine, is_content_word, tokenize, Codebook};
use crate::error::{Error, Result};
use crate::video::{Mask, VideoClip, CHANNELS};
use crate::world::TaskKind;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(a: &VideoClip, b: &VideoClip, mask: &Mask) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "videos {:?} and {:?}",
            a.data.dim(),
            b.data.dim()
        )));
    }
    let (l, h, w, _) = a.data.dim();
    if mask.data.dim() != (l, h, w) {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs video {:?}",
            mask.data.dim(),
            (l, h, w)
        )));
    }
    Ok(())
}

/// PSNR (peak 1.0) over pixels outside `mask`; zero error reports [`PSNR_CAP`].
pub fn masked_psnr(a: &VideoClip, b: &VideoClip, mask: &Mask) -> Result<f64> {
    check_pair(a, b, mask)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((f, y, x), &m) in mask.data.indexed_iter() {
        if m {
            continue;
        }
        for c in 0..CHANNELS {
            let d = a.data[[f, y, x, c]] - b.data[[f, y, x, c]];
            sum += d * d;
        }
        n += CHANNELS;
    }
    if n == 0 {
        return Err(Error::EmptyRegion("mask covers every pixel".into()));
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over all 8×8 windows (stride 1) that avoid the mask, averaged
/// over channels, then over frames with at least one window.
pub fn masked_ssim(a: &VideoClip, b: &VideoClip, mask: &Mask) -> Result<f64> {
    check_pair(a, b, mask)?;
    let (l, h, w, _) = a.data.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidDimension(format!("{h}x{w} smaller than the SSIM window")));
    }
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut frame_scores = Vec::new();
    for f in 0..l {
        // integral image of mask hits for O(1) window checks
        let mut integ = vec![0usize; (h + 1) * (w + 1)];
        for y in 0..h {
            for x in 0..w {
                integ[(y + 1) * (w + 1) + x + 1] = mask.data[[f, y, x]] as usize + integ[y * (w + 1) + x + 1]
                    + integ[(y + 1) * (w + 1) + x]
                    - integ[y * (w + 1) + x];
            }
        }
        let hits = |y: usize, x: usize| {
            let (y1, x1) = (y + SSIM_WINDOW, x + SSIM_WINDOW);
            integ[y1 * (w + 1) + x1] + integ[y * (w + 1) + x] - integ[y * (w + 1) + x1] - integ[y1 * (w + 1) + x]
        };
        let (mut total, mut count) = (0.0, 0usize);
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                if hits(y, x) > 0 {
                    continue;
                }
                for c in 0..CHANNELS {
                    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let va = a.data[[f, y + dy, x + dx, c]];
                            let vb = b.data[[f, y + dy, x + dx, c]];
                            sa += va;
                            sb += vb;
                            saa += va * va;
                            sbb += vb * vb;
                            sab += va * vb;
                        }
                    }
                    let (ma, mb) = (sa / n, sb / n);
                    let va = saa / n - ma * ma;
                    let vb = sbb / n - mb * mb;
                    let cov = sab / n - ma * mb;
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                }
                count += CHANNELS;
            }
        }
        if count > 0 {
            frame_scores.push(total / count as f64);
        }
    }
    if frame_scores.is_empty() {
        return Err(Error::EmptyRegion("no SSIM window avoids the mask".into()));
    }
    Ok(frame_scores.iter().sum::<f64>() / frame_scores.len() as f64)
}

/// Mean cosine between content-word features of `prompt` and the frame
/// features of `video`, ×100. Zero when the prompt has no content words.
pub fn textual_alignment(book: &Codebook, video: &VideoClip, prompt: &str) -> Result<f64> {
    let words: Vec<String> = tokenize(prompt)?
        .into_iter()
        .filter(|t| is_content_word(t))
        .collect();
    if words.is_empty() {
        return Ok(0.0);
    }
    let w = book.embed_text(&words)?.features;
    let v = book.embed_frames_lenient(video).v;
    let sims = w.dot(&v.t());
    Ok(100.0 * sims.mean().expect("nonempty"))
}

/// Half-width of the appearance window, in pixels.
const APPEARANCE_RADIUS: f64 = 20.0;
const APPEARANCE_CELLS: usize = 10;

/// Translation-invariant appearance descriptor of one frame: the difference
/// from the background colour sampled on a grid centred on the detected
/// object (or the frame centre), pooled into cells.
pub fn appearance_descriptor(frame: ArrayView3<'_, f64>) -> Array1<f64> {
    let (h, w, _) = frame.dim();
    let analysis = analyze_frame(frame);
    let bg = analysis.background_rgb;
    let (cx, cy) = analysis
        .object
        .as_ref()
        .map(|o| o.centroid)
        .unwrap_or((w as f64 / 2.0, h as f64 / 2.0));
    let cell = 2.0 * APPEARANCE_RADIUS / APPEARANCE_CELLS as f64;
    let sub = 4;
    let sample = |px: f64, py: f64, c: usize| -> f64 {
        // bilinear with zero difference outside the frame
        let (fx, fy) = (px - 0.5, py - 0.5);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        let mut acc = 0.0;
        for (oy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
            for (ox, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
                let (xi, yi) = (x0 + ox, y0 + oy);
                if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                    continue;
                }
                acc += wx * wy * (frame[[yi as usize, xi as usize, c]] - bg[c]);
            }
        }
        acc
    };
    let mut out = Array1::zeros(APPEARANCE_CELLS * APPEARANCE_CELLS * CHANNELS);
    for gy in 0..APPEARANCE_CELLS {
        for gx in 0..APPEARANCE_CELLS {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for sy in 0..sub {
                    for sx in 0..sub {
                        let px = cx - APPEARANCE_RADIUS + (gx as f64 + (sx as f64 + 0.5) / sub as f64) * cell;
                        let py = cy - APPEARANCE_RADIUS + (gy as f64 + (sy as f64 + 0.5) / sub as f64) * cell;
                        acc += sample(px, py, c);
                    }
                }
                out[(gy * APPEARANCE_CELLS + gx) * CHANNELS + c] = acc / (sub * sub) as f64;
            }
        }
    }
    out
}

/// Mean cosine between appearance descriptors of consecutive frames.
pub fn frame_consistency(video: &VideoClip) -> Result<f64> {
    let l = video.frames();
    if l < 2 {
        return Err(Error::InvalidDimension(format!("frame consistency needs 2+ frames, got {l}")));
    }
    let desc: Vec<Array1<f64>> = (0..l).map(|f| appearance_descriptor(video.frame(f))).collect();
    let total: f64 = desc.windows(2).map(|p| cosine(p[0].view(), p[1].view())).sum();
    Ok(total / (l - 1) as f64)
}

/// `z_V > 0`, dilated per frame by a square of the given radius.
pub fn edit_region_mask_from_scores(z_v: &Array3<f64>, radius: usize) -> Mask {
    let raw = Mask {
        data: z_v.mapv(|v| v > 0.0),
    };
    dilate(&raw, radius)
}

pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (l, h, w) = mask.data.dim();
    let r = radius as isize;
    let mut out = Mask::empty(l, h, w);
    for ((f, y, x), &m) in mask.data.indexed_iter() {
        if !m {
            continue;
        }
        for yy in (y as isize - r).max(0)..=(y as isize + r).min(h as isize - 1) {
            for xx in (x as isize - r).max(0)..=(x as isize + r).min(w as isize - 1) {
                out.data[[f, yy as usize, xx as usize]] = true;
            }
        }
    }
    out
}

/// One evaluated edit. Masked metrics use the automated mask; the `_gt`
/// columns repeat them with the ground-truth edit region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run: String,
    pub method: String,
    pub task_kind: Option<TaskKind>,
    pub alignment: f64,
    pub masked_psnr: Option<f64>,
    pub masked_ssim: Option<f64>,
    pub masked_psnr_gt: Option<f64>,
    pub masked_ssim_gt: Option<f64>,
    pub frame_consistency: f64,
    pub mask_provenance: String,
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "run",
    "method",
    "task_kind",
    "alignment",
    "masked_psnr",
    "masked_ssim",
    "masked_psnr_gt",
    "masked_ssim_gt",
    "frame_consistency",
    "mask_provenance",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricReport {
    pub fn csv_header() -> String {
        REPORT_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let kind = match self.task_kind {
            Some(TaskKind::Motion) => "motion",
            Some(TaskKind::Color) => "color",
            None => "",
        };
        [
            self.run.clone(),
            self.method.clone(),
            kind.to_string(),
            format!("{:.6}", self.alignment),
            cell(self.masked_psnr),
            cell(self.masked_ssim),
            cell(self.masked_psnr_gt),
            cell(self.masked_ssim_gt),
            format!("{:.6}", self.frame_consistency),
            self.mask_provenance.clone(),
        ]
        .join(",")
    }
}

/// Inputs for [`evaluate`]; masks are optional because a run may have no
/// automated mask (baseline) or no ground truth (user video).
pub struct EvalInputs<'a> {
    pub run: &'a str,
    pub method: &'a str,
    pub task_kind: Option<TaskKind>,
    pub source: &'a VideoClip,
    pub edited: &'a VideoClip,
    pub target_prompt: &'a str,
    pub auto_mask: Option<(&'a Mask, &'a str)>,
    pub gt_mask: Option<&'a Mask>,
}

pub fn evaluate(book: &Codebook, input: &EvalInputs<'_>) -> Result<MetricReport> {
    let masked = |m: Option<&Mask>| -> Result<(Option<f64>, Option<f64>)> {
        match m {
            None => Ok((None, None)),
            Some(m) => {
                let psnr = masked_psnr(input.source, input.edited, m).ok();
                let ssim = masked_ssim(input.source, input.edited, m).ok();
                Ok((psnr, ssim))
            }
        }
    };
    let (psnr, ssim) = masked(input.auto_mask.map(|(m, _)| m))?;
    let (psnr_gt, ssim_gt) = masked(input.gt_mask)?;
    Ok(MetricReport {
        run: input.run.to_string(),
        method: input.method.to_string(),
        task_kind: input.task_kind,
        alignment: textual_alignment(book, input.edited, input.target_prompt)?,
        masked_psnr: psnr,
        masked_ssim: ssim,
        masked_psnr_gt: psnr_gt,
        masked_ssim_gt: ssim_gt,
        frame_consistency: frame_consistency(input.edited)?,
        mask_provenance: input.auto_mask.map(|(_, p)| p.to_string()).unwrap_or_else(|| "none".into()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{describe, render_scene, Background, Color, Motion, SceneSpec, Shape};
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip() -> VideoClip {
        render_scene(&SceneSpec::new(Shape::Square, Color::Red, Motion::Slide, Background::Dark), 3).unwrap()
    }

    fn noise(seed: u64, l: usize) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VideoClip::new(Array4::from_shape_simple_fn((l, 32, 32, 3), || rng.random::<f64>())).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = clip();
        let empty = Mask::empty(a.frames(), a.height(), a.width());
        assert_eq!(masked_psnr(&a, &a, &empty).unwrap(), PSNR_CAP);
        let mut mask = empty.clone();
        mask.data.slice_mut(ndarray::s![.., 10..30, 10..30]).fill(true);
        let mut b = a.clone();
        for ((f, y, x, c), v) in b.data.indexed_iter_mut() {
            if !mask.data[[f, y, x]] {
                *v += 0.1;
            } else {
                *v = (c as f64) * 0.3;
            }
        }
        assert!((masked_psnr(&a, &b, &mask).unwrap() - 20.0).abs() < 1e-9);
        let full = Mask {
            data: Array3::from_elem(mask.data.dim(), true),
        };
        assert!(matches!(masked_psnr(&a, &b, &full), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn ssim_examples() {
        let a = clip();
        let empty = Mask::empty(a.frames(), a.height(), a.width());
        assert!((masked_ssim(&a, &a, &empty).unwrap() - 1.0).abs() < 1e-12);
        let inv = VideoClip::new(a.data.mapv(|v| 1.0 - v)).unwrap();
        assert!(masked_ssim(&a, &inv, &empty).unwrap() < 0.5);
        let n = noise(1, a.frames());
        let n = VideoClip::new(ndarray::Array4::from_shape_fn(a.data.dim(), |(f, y, x, c)| {
            n.data[[f, y % 32, x % 32, c]]
        }))
        .unwrap();
        let ab = masked_ssim(&a, &n, &empty).unwrap();
        let ba = masked_ssim(&n, &a, &empty).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let full = Mask {
            data: Array3::from_elem(empty.data.dim(), true),
        };
        assert!(masked_ssim(&a, &n, &full).is_err());
    }

    #[test]
    fn masked_metrics_ignore_masked_content() {
        let a = clip();
        let mut mask = Mask::empty(a.frames(), a.height(), a.width());
        mask.data.slice_mut(ndarray::s![.., 20..44, 16..48]).fill(true);
        let mut b = a.clone();
        b.data.mapv_inplace(|v| (v + 0.03).min(1.0));
        let mut c = b.clone();
        for ((f, y, x, _), v) in c.data.indexed_iter_mut() {
            if mask.data[[f, y, x]] {
                *v = 0.5;
            }
        }
        assert_eq!(masked_psnr(&a, &b, &mask).unwrap(), masked_psnr(&a, &c, &mask).unwrap());
        assert_eq!(masked_ssim(&a, &b, &mask).unwrap(), masked_ssim(&a, &c, &mask).unwrap());
    }

    #[test]
    fn alignment_prefers_true_description() {
        let book = Codebook::default_codebook();
        let spec = SceneSpec::new(Shape::Square, Color::Red, Motion::Slide, Background::Dark);
        let v = render_scene(&spec, 4).unwrap();
        let own = textual_alignment(&book, &v, &describe(&spec)).unwrap();
        let mut wrong = spec.clone();
        wrong.color = Color::Blue;
        let other = textual_alignment(&book, &v, &describe(&wrong)).unwrap();
        assert!(own > other, "{own} vs {other}");
        assert_eq!(textual_alignment(&book, &v, "a the on").unwrap(), 0.0);
    }

    #[test]
    fn consistency_examples() {
        let still = render_scene(&SceneSpec::new(Shape::Circle, Color::Green, Motion::Still, Background::Light), 0).unwrap();
        let mut frozen = still.clone();
        let first = still.data.index_axis(ndarray::Axis(0), 0).to_owned();
        for mut f in frozen.data.outer_iter_mut() {
            f.assign(&first);
        }
        assert!((frame_consistency(&frozen).unwrap() - 1.0).abs() < 1e-6);
        assert!(frame_consistency(&noise(2, 6)).unwrap() < 0.5);
        let v = clip();
        let mut rev = v.clone();
        for f in 0..v.frames() {
            rev.data
                .index_axis_mut(ndarray::Axis(0), f)
                .assign(&v.data.index_axis(ndarray::Axis(0), v.frames() - 1 - f));
        }
        assert!((frame_consistency(&v).unwrap() - frame_consistency(&rev).unwrap()).abs() < 1e-12);
        assert!(frame_consistency(&noise(3, 1)).is_err());
    }

    #[test]
    fn rendered_clips_are_consistent() {
        for m in Motion::ALL {
            let v = render_scene(&SceneSpec::new(Shape::Triangle, Color::White, m, Background::Dark), 9).unwrap();
            let c = frame_consistency(&v).unwrap();
            assert!(c > 0.95, "{m:?}: {c}");
        }
    }

    #[test]
    fn score_masks_dilate_monotonically() {
        let mut z = Array3::zeros((1, 16, 16));
        assert_eq!(edit_region_mask_from_scores(&z, 3).count(), 0);
        z[[0, 8, 8]] = 0.4;
        z[[0, 2, 3]] = 0.2;
        let raw = edit_region_mask_from_scores(&z, 0);
        assert_eq!(raw.count(), 2);
        let mut prev = raw;
        for r in 1..5 {
            let m = edit_region_mask_from_scores(&z, r);
            assert!(m.contains(&prev));
            prev = m;
        }
    }

    #[test]
    fn report_csv_has_fixed_columns() {
        let r = MetricReport {
            run: "t0".into(),
            method: "neuedit".into(),
            task_kind: Some(TaskKind::Motion),
            alignment: 21.5,
            masked_psnr: Some(30.0),
            masked_ssim: None,
            masked_psnr_gt: Some(28.0),
            masked_ssim_gt: Some(0.9),
            frame_consistency: 0.99,
            mask_provenance: "z_v>0 dilated 4".into(),
        };
        assert_eq!(MetricReport::csv_header().split(',').count(), 10);
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), 10);
        assert!(row.starts_with("t0,neuedit,motion,21.500000,30.000000,,"));
    }
}
