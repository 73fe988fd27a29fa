//! Grayscale line plots written as PGM.

use std::path::Path;

use ndarray::Array2;

use crate::error::Result;

const WIDTH: usize = 240;
const HEIGHT: usize = 160;
const MARGIN: usize = 12;

fn line(img: &mut Array2<f64>, (x0, y0): (i64, i64), (x1, y1): (i64, i64), ink: f64) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if let Some(p) = img.get_mut((y as usize, x as usize)) {
            *p = ink;
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Polyline of `(xs, ys)` on a white canvas with a grey frame. Each axis is
/// scaled to its own data range; a flat series sits mid-height.
pub fn line_plot(xs: &[f64], ys: &[f64]) -> Array2<f64> {
    let mut img = Array2::from_elem((HEIGHT, WIDTH), 1.0);
    let (l, r) = (MARGIN as i64, (WIDTH - MARGIN) as i64);
    let (t, b) = (MARGIN as i64, (HEIGHT - MARGIN) as i64);
    for (p, q) in [((l, t), (r, t)), ((r, t), (r, b)), ((r, b), (l, b)), ((l, b), (l, t))] {
        line(&mut img, p, q, 0.6);
    }
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(&x, &y)| (x, y))
        .collect();
    if pts.is_empty() {
        return img;
    }
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        (lo, hi - lo)
    };
    let (x0, xr) = span(&mut pts.iter().map(|p| p.0));
    let (y0, yr) = span(&mut pts.iter().map(|p| p.1));
    let to_px = |(x, y): (f64, f64)| {
        let fx = if xr > 0.0 { (x - x0) / xr } else { 0.5 };
        let fy = if yr > 0.0 { (y - y0) / yr } else { 0.5 };
        (
            l + (fx * (r - l) as f64).round() as i64,
            b - (fy * (b - t) as f64).round() as i64,
        )
    };
    let px: Vec<_> = pts.into_iter().map(to_px).collect();
    for w in px.windows(2) {
        line(&mut img, w[0], w[1], 0.0);
    }
    // small cross on every sample
    for &(x, y) in &px {
        line(&mut img, (x - 2, y), (x + 2, y), 0.0);
        line(&mut img, (x, y - 2), (x, y + 2), 0.0);
    }
    img
}

pub fn write_line_plot(path: &Path, xs: &[f64], ys: &[f64]) -> Result<()> {
    if let Some(parent) = path.parent() {
        crate::manifest::create_dir(parent)?;
    }
    Ok(neuedit::video::write_pgm(path, &line_plot(xs, ys).view())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rising_series_goes_up_and_right() {
        let img = line_plot(&[0.0, 1.0], &[0.0, 1.0]);
        assert_eq!(img[[HEIGHT - MARGIN, MARGIN]], 0.0);
        assert_eq!(img[[MARGIN, WIDTH - MARGIN]], 0.0);
        assert_eq!(img[[HEIGHT / 2, 3]], 1.0);
    }

    #[test]
    fn degenerate_inputs_still_draw() {
        let flat = line_plot(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]);
        assert_eq!(flat[[(HEIGHT) / 2, WIDTH / 2]], 0.0);
        let empty = line_plot(&[], &[]);
        assert!(empty.iter().all(|&v| v > 0.0));
    }
}
