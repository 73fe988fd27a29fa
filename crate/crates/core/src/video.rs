//! Pixel-space video clips, binary masks and their on-disk formats.
//!
//! Frames persist as binary PPM (P6, maxval 255) and masks / score fields as
//! binary PGM (P5). Pixel values produced by the renderer are multiples of
//! 1/255, so a write/read cycle of a rendered clip is bit-exact.

use std::fs;
use std::path::Path;

use ndarray::{Array3, Array4, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::hash::ContentHasher;

/// Number of colour channels in every clip.
pub const CHANNELS: usize = 3;

/// `L` frames of `H×W×3` pixels in `[0, 1]`, stored as `(frame, y, x, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub data: Array4<f64>,
}

impl VideoClip {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        let shape = data.shape();
        if shape[0] == 0 || shape[1] == 0 || shape[2] == 0 {
            return Err(Error::InvalidDimension(format!(
                "empty video shape {shape:?}"
            )));
        }
        if shape[3] != CHANNELS {
            return Err(Error::InvalidDimension(format!(
                "expected {CHANNELS} channels, got {}",
                shape[3]
            )));
        }
        Ok(Self { data })
    }

    pub fn filled(frames: usize, height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Array4::zeros((frames, height, width, CHANNELS));
        for mut px in data.lanes_mut(Axis(3)) {
            px[0] = rgb[0];
            px[1] = rgb[1];
            px[2] = rgb[2];
        }
        Self { data }
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn frame(&self, i: usize) -> ArrayView3<'_, f64> {
        self.data.index_axis(Axis(0), i)
    }

    pub fn same_shape(&self, other: &VideoClip) -> bool {
        self.data.shape() == other.data.shape()
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        for &d in self.data.shape() {
            h.u64(d as u64);
        }
        h.f64s(self.data.iter());
        h.finish()
    }

    pub fn clamped(&self) -> VideoClip {
        VideoClip {
            data: self.data.mapv(|v| v.clamp(0.0, 1.0)),
        }
    }

    /// Write frames as `frame_000.ppm`, `frame_001.ppm`, ... into `dir`.
    pub fn write_ppm_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for i in 0..self.frames() {
            let path = dir.join(frame_file_name(i));
            let frame = self.frame(i);
            let (h, w) = (self.height(), self.width());
            let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
            bytes.extend(frame.iter().map(|&v| quantize(v)));
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Read `frames` consecutive PPM frames written by [`VideoClip::write_ppm_dir`].
    pub fn read_ppm_dir(dir: &Path, frames: usize) -> Result<Self> {
        let mut clip: Option<Array4<f64>> = None;
        for i in 0..frames {
            let path = dir.join(frame_file_name(i));
            let (w, h, pixels) = read_netpbm(&path, "P6")?;
            let data = clip.get_or_insert_with(|| Array4::zeros((frames, h, w, CHANNELS)));
            if data.shape()[1] != h || data.shape()[2] != w {
                return Err(Error::Format {
                    path,
                    reason: "frame size differs from first frame".into(),
                });
            }
            let mut slot = data.index_axis_mut(Axis(0), i);
            for (dst, &src) in slot.iter_mut().zip(pixels.iter()) {
                *dst = f64::from(src) / 255.0;
            }
        }
        match clip {
            Some(data) => Self::new(data),
            None => Err(Error::InvalidDimension("zero frames requested".into())),
        }
    }
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:03}.ppm")
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write one grayscale plane (values in `[0,1]`) as binary PGM.
pub fn write_pgm(path: &Path, plane: &ndarray::ArrayView2<'_, f64>) -> Result<()> {
    let (h, w) = plane.dim();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(plane.iter().map(|&v| quantize(v)));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<ndarray::Array2<f64>> {
    let (w, h, pixels) = read_netpbm(path, "P5")?;
    let values = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    ndarray::Array2::from_shape_vec((h, w), values).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn read_netpbm(path: &Path, magic: &str) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    // Header: magic, width, height, maxval separated by whitespace, then one
    // whitespace byte before the raster.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != magic {
        return Err(bad(&format!("expected {magic}, found {}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1;
    let channels = if magic == "P6" { 3 } else { 1 };
    let need = w * h * channels;
    if bytes.len() < pos + need {
        return Err(bad("truncated raster"));
    }
    Ok((w, h, bytes[pos..pos + need].to_vec()))
}

/// Binary per-pixel mask over a clip, `(frame, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub data: Array3<bool>,
}

impl Mask {
    pub fn empty(frames: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array3::from_elem((frames, height, width), false),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn frame_fraction(&self, i: usize) -> f64 {
        let f = self.data.index_axis(Axis(0), i);
        f.iter().filter(|&&b| b).count() as f64 / f.len() as f64
    }

    pub fn contains(&self, other: &Mask) -> bool {
        self.data
            .iter()
            .zip(other.data.iter())
            .all(|(&a, &b)| a || !b)
    }

    /// Every frame set to the union of all frames.
    pub fn union_over_frames(&self) -> Mask {
        let union = self.data.map_axis(Axis(0), |px| px.iter().any(|&b| b));
        let mut data = self.data.clone();
        for mut frame in data.outer_iter_mut() {
            frame.assign(&union);
        }
        Mask { data }
    }

    pub fn as_field(&self) -> Array3<f64> {
        self.data.mapv(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        for &d in self.data.shape() {
            h.u64(d as u64);
        }
        let bits: Vec<u8> = self.data.iter().map(|&b| b as u8).collect();
        h.bytes(&bits);
        h.finish()
    }

    pub fn write_pgm_dir(&self, dir: &Path, prefix: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let field = self.as_field();
        for (i, frame) in field.outer_iter().enumerate() {
            write_pgm(&dir.join(format!("{prefix}_{i:03}.pgm")), &frame)?;
        }
        Ok(())
    }

    pub fn read_pgm_dir(dir: &Path, prefix: &str, frames: usize) -> Result<Self> {
        let mut planes = Vec::with_capacity(frames);
        for i in 0..frames {
            planes.push(read_pgm(&dir.join(format!("{prefix}_{i:03}.pgm")))?);
        }
        let (h, w) = planes
            .first()
            .map(|p| p.dim())
            .ok_or_else(|| Error::InvalidDimension("zero frames".into()))?;
        let mut data = Array3::from_elem((frames, h, w), false);
        for (i, p) in planes.iter().enumerate() {
            if p.dim() != (h, w) {
                return Err(Error::ShapeMismatch("mask frame sizes differ".into()));
            }
            for ((y, x), &v) in p.indexed_iter() {
                data[[i, y, x]] = v >= 0.5;
            }
        }
        Ok(Self { data })
    }
}
