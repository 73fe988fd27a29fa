//! Procedural shape world: one anti-aliased object moving over a flat
//! background, with a canonical text description and single-word edit tasks.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{Mask, VideoClip, CHANNELS};

/// Patch size the default latent codec expects frame sizes to divide.
pub const DEFAULT_PATCH: usize = 4;
const SUPERSAMPLE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Slide,
    Bounce,
    Spin,
    Still,
    Shrink,
    Grow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Dark,
    Light,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];
    pub fn word(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::White];
    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::White => "white",
        }
    }
    /// Nominal RGB of the object paint.
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [0.90, 0.15, 0.10],
            Color::Green => [0.15, 0.80, 0.20],
            Color::Blue => [0.15, 0.25, 0.90],
            Color::White => [0.97, 0.97, 0.97],
        }
    }
}

impl Motion {
    pub const ALL: [Motion; 6] = [
        Motion::Slide,
        Motion::Bounce,
        Motion::Spin,
        Motion::Still,
        Motion::Shrink,
        Motion::Grow,
    ];
    /// Third-person verb used in descriptions.
    pub fn word(self) -> &'static str {
        match self {
            Motion::Slide => "slides",
            Motion::Bounce => "bounces",
            Motion::Spin => "spins",
            Motion::Still => "stays",
            Motion::Shrink => "shrinks",
            Motion::Grow => "grows",
        }
    }
}

impl Background {
    pub const ALL: [Background; 2] = [Background::Dark, Background::Light];
    pub fn word(self) -> &'static str {
        match self {
            Background::Dark => "dark",
            Background::Light => "light",
        }
    }
    pub fn level(self) -> f64 {
        match self {
            Background::Dark => 0.12,
            Background::Light => 0.70,
        }
    }
}

/// Description of one rendered scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub color: Color,
    pub motion: Motion,
    pub background: Background,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl SceneSpec {
    pub fn new(shape: Shape, color: Color, motion: Motion, background: Background) -> Self {
        Self {
            shape,
            color,
            motion,
            background,
            frames: 8,
            height: 64,
            width: 64,
        }
    }

    pub fn with_size(mut self, frames: usize, height: usize, width: usize) -> Self {
        self.frames = frames;
        self.height = height;
        self.width = width;
        self
    }

    pub fn validate(&self, patch: usize) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidDimension("scene needs at least one frame".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidDimension(format!(
                "frame {}x{} smaller than 16x16",
                self.height, self.width
            )));
        }
        if patch == 0 || self.height % patch != 0 || self.width % patch != 0 {
            return Err(Error::InvalidDimension(format!(
                "frame {}x{} not divisible by patch size {patch}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Canonical description: `a <color> <shape> <verb> on a <background> background`.
pub fn describe(spec: &SceneSpec) -> String {
    format!(
        "a {} {} {} on a {} background",
        spec.color.word(),
        spec.shape.word(),
        spec.motion.word(),
        spec.background.word()
    )
}

/// Token position of each attribute word in [`describe`] output.
pub const COLOR_SLOT: usize = 1;
pub const SHAPE_SLOT: usize = 2;
pub const MOTION_SLOT: usize = 3;
pub const BACKGROUND_SLOT: usize = 6;

/// A rendered clip with its per-frame object masks.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub video: VideoClip,
    pub object_masks: Mask,
}

/// Object pose at one frame, in pixel units.
#[derive(Debug, Clone, Copy)]
struct Pose {
    cx: f64,
    cy: f64,
    half: f64,
    angle: f64,
}

/// Nominal per-frame displacement `(dx, dy)` in pixels, size scale and
/// rotation of the object for a motion, before seed jitter.
pub fn nominal_track(motion: Motion, frames: usize, height: usize, width: usize) -> Vec<(f64, f64, f64, f64)> {
    let size = height.min(width) as f64;
    (0..frames)
        .map(|i| {
            let u = if frames > 1 {
                i as f64 / (frames - 1) as f64
            } else {
                0.0
            };
            match motion {
                Motion::Slide => (0.2 * width as f64 * (2.0 * u - 1.0), 0.0, 1.0, 0.0),
                Motion::Bounce => (
                    0.0,
                    0.3 * height as f64 * (0.5 - (2.0 * PI * u).sin().abs()),
                    1.0,
                    0.0,
                ),
                Motion::Spin => {
                    let r = 0.12 * size;
                    (r * (2.0 * PI * u).cos(), r * (2.0 * PI * u).sin(), 1.0, 0.5 * PI * u)
                }
                Motion::Still => (0.0, 0.0, 1.0, 0.0),
                Motion::Shrink => (0.0, 0.0, 1.15 - 0.35 * u, 0.0),
                Motion::Grow => (0.0, 0.0, 0.80 + 0.35 * u, 0.0),
            }
        })
        .collect()
}

fn poses(spec: &SceneSpec, jitter: (f64, f64)) -> Vec<Pose> {
    let base_half = 0.18 * spec.height.min(spec.width) as f64;
    let (cx0, cy0) = (
        spec.width as f64 / 2.0 + jitter.0,
        spec.height as f64 / 2.0 + jitter.1,
    );
    nominal_track(spec.motion, spec.frames, spec.height, spec.width)
        .into_iter()
        .map(|(dx, dy, scale, angle)| Pose {
            cx: cx0 + dx,
            cy: cy0 + dy,
            half: base_half * scale,
            angle,
        })
        .collect()
}

fn inside(shape: Shape, pose: &Pose, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - pose.cx, y - pose.cy);
    let (s, c) = pose.angle.sin_cos();
    // Rotate into the object frame.
    let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
    match shape {
        Shape::Square => u.abs() <= pose.half && v.abs() <= pose.half,
        Shape::Circle => u * u + v * v <= (1.1 * pose.half).powi(2),
        Shape::Triangle => {
            // Equilateral, apex up (negative v), circumradius 1.35·half.
            let r = 1.35 * pose.half;
            let verts = [
                (0.0, -r),
                (r * (PI / 6.0).cos(), r * 0.5),
                (-r * (PI / 6.0).cos(), r * 0.5),
            ];
            (0..3).all(|k| {
                let (ax, ay) = verts[k];
                let (bx, by) = verts[(k + 1) % 3];
                (bx - ax) * (v - ay) - (by - ay) * (u - ax) >= 0.0
            })
        }
    }
}

/// Render a scene at the default patch size.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<VideoClip> {
    Ok(render_with_masks(spec, seed, DEFAULT_PATCH)?.video)
}

/// Render a scene and return per-frame object masks as well. Pure in
/// `(spec, seed)`; pixel values are multiples of 1/255.
pub fn render_with_masks(spec: &SceneSpec, seed: u64, patch: usize) -> Result<RenderedScene> {
    spec.validate(patch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce7e);
    let scale = spec.height.min(spec.width) as f64 / 64.0;
    let jitter = (
        rng.random_range(-2.0..2.0) * scale,
        rng.random_range(-2.0..2.0) * scale,
    );
    let shade: f64 = rng.random_range(0.92..1.0);
    let bg = spec.background.level() + rng.random_range(-0.02..0.02);
    let paint = spec.color.rgb().map(|c| c * shade);

    let (l, h, w) = (spec.frames, spec.height, spec.width);
    let mut data = Array4::zeros((l, h, w, CHANNELS));
    let mut masks = Array3::from_elem((l, h, w), false);
    let samples = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for (i, pose) in poses(spec, jitter).iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                        if inside(spec.shape, pose, px, py) {
                            hits += 1;
                        }
                    }
                }
                let cover = hits as f64 / samples;
                masks[[i, y, x]] = hits > 0;
                for c in 0..CHANNELS {
                    let v = bg * (1.0 - cover) + paint[c] * cover;
                    data[[i, y, x, c]] = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
                }
            }
        }
    }
    Ok(RenderedScene {
        video: VideoClip::new(data)?,
        object_masks: Mask { data: masks },
    })
}

/// Which attribute an edit task changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Motion-word edit (non-rigid).
    Motion,
    /// Colour-word edit (rigid).
    Color,
}

impl TaskKind {
    pub fn rigidity(self) -> &'static str {
        match self {
            TaskKind::Motion => "non_rigid",
            TaskKind::Color => "rigid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Probability that a sampled task edits the motion word.
    pub motion_edit_fraction: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 64,
            width: 64,
            motion_edit_fraction: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn motion_only(mut self) -> Self {
        self.motion_edit_fraction = 1.0;
        self
    }
}

/// Source clip, target prompt and ground truth for one edit.
#[derive(Debug, Clone)]
pub struct EditTask {
    pub seed: u64,
    pub kind: TaskKind,
    pub source_spec: SceneSpec,
    pub target_spec: SceneSpec,
    pub video: VideoClip,
    pub target_prompt: String,
    pub edit_word_index: usize,
    /// Union of the object masks over all frames, repeated per frame.
    pub edit_region_mask: Mask,
    pub object_masks: Mask,
}

impl EditTask {
    pub fn source_prompt(&self) -> String {
        describe(&self.source_spec)
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

pub fn random_spec(rng: &mut ChaCha8Rng, config: &WorldConfig) -> SceneSpec {
    SceneSpec {
        shape: pick(rng, &Shape::ALL),
        color: pick(rng, &Color::ALL),
        motion: pick(rng, &Motion::ALL),
        background: pick(rng, &Background::ALL),
        frames: config.frames,
        height: config.height,
        width: config.width,
    }
}

/// Sample a task whose target prompt differs from the source description in
/// exactly one word.
pub fn sample_edit_task(seed: u64, config: &WorldConfig) -> Result<EditTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source_spec = random_spec(&mut rng, config);
    let kind = if rng.random::<f64>() < config.motion_edit_fraction {
        TaskKind::Motion
    } else {
        TaskKind::Color
    };
    let mut target_spec = source_spec;
    let edit_word_index = match kind {
        TaskKind::Motion => {
            let others: Vec<Motion> = Motion::ALL
                .into_iter()
                .filter(|&m| m != source_spec.motion)
                .collect();
            target_spec.motion = pick(&mut rng, &others);
            MOTION_SLOT
        }
        TaskKind::Color => {
            let others: Vec<Color> = Color::ALL
                .into_iter()
                .filter(|&c| c != source_spec.color)
                .collect();
            target_spec.color = pick(&mut rng, &others);
            COLOR_SLOT
        }
    };
    task_from_specs(seed, kind, source_spec, target_spec, edit_word_index)
}

/// Build a task from explicit source/target specs (used for no-edit probes).
pub fn task_from_specs(
    seed: u64,
    kind: TaskKind,
    source_spec: SceneSpec,
    target_spec: SceneSpec,
    edit_word_index: usize,
) -> Result<EditTask> {
    let rendered = render_with_masks(&source_spec, seed, DEFAULT_PATCH)?;
    let region = rendered.object_masks.union_over_frames();
    Ok(EditTask {
        seed,
        kind,
        source_spec,
        target_spec,
        video: rendered.video,
        target_prompt: describe(&target_spec),
        edit_word_index,
        edit_region_mask: region,
        object_masks: rendered.object_masks,
    })
}

/// Manifest written next to a persisted clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub spec: SceneSpec,
    pub seed: u64,
    #[serde(rename = "L")]
    pub frames: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
}

/// Persist a rendered scene as PPM frames, PGM masks and `manifest.json`.
pub fn save_scene(dir: &Path, spec: &SceneSpec, seed: u64, scene: &RenderedScene) -> Result<()> {
    scene.video.write_ppm_dir(dir)?;
    scene.object_masks.write_pgm_dir(dir, "mask")?;
    let manifest = ClipManifest {
        spec: *spec,
        seed,
        frames: spec.frames,
        height: spec.height,
        width: spec.width,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_scene(dir: &Path) -> Result<(ClipManifest, RenderedScene)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ClipManifest = serde_json::from_str(&text)?;
    let video = VideoClip::read_ppm_dir(dir, manifest.frames)?;
    if video.height() != manifest.height || video.width() != manifest.width {
        return Err(Error::ShapeMismatch(format!(
            "manifest says {}x{}, frames are {}x{}",
            manifest.height,
            manifest.width,
            video.height(),
            video.width()
        )));
    }
    let object_masks = Mask::read_pgm_dir(dir, "mask", manifest.frames)?;
    Ok((manifest, RenderedScene { video, object_masks }))
}
