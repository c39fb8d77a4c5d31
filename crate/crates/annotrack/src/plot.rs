//! Tiny PNG output helpers: training-curve polylines, IoU histograms, and
//! grayscale mask dumps. No plotting framework, just pixel pushing.

use std::path::Path;

use image::{GrayImage, Luma, RgbImage, Rgb};
use ndarray::Array2;

use crate::error::{Error, Result};

const MARGIN: u32 = 12;

fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::invalid(format!("writing {}: {e}", path.display())))
}

fn draw_line(img: &mut RgbImage, a: (f32, f32), b: (f32, f32), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()) as u32).max(1);
    for i in 0..=steps {
        let t = i as f32 / steps as f32;
        let x = a.0 + t * (b.0 - a.0);
        let y = a.1 + t * (b.1 - a.1);
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Plot one or more labeled curves of (step, value) points as polylines.
pub fn plot_curves(path: &Path, curves: &[(&str, &[(usize, f64)])], width: u32, height: u32) -> Result<()> {
    let pts: Vec<(f64, f64)> = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|&(s, v)| (s as f64, v)))
        .filter(|(_, v)| v.is_finite())
        .collect();
    if pts.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let to_px = |x: f64, y: f64| {
        let fx = (x - x0) / (x1 - x0);
        let fy = (y - y0) / (y1 - y0);
        (
            MARGIN as f32 + fx as f32 * (width - 2 * MARGIN) as f32,
            (height - MARGIN) as f32 - fy as f32 * (height - 2 * MARGIN) as f32,
        )
    };
    let palette = [Rgb([200, 40, 40]), Rgb([40, 80, 200]), Rgb([30, 140, 60]), Rgb([150, 60, 160])];
    for (ci, (_, curve)) in curves.iter().enumerate() {
        let color = palette[ci % palette.len()];
        for pair in curve.windows(2) {
            let a = to_px(pair[0].0 as f64, pair[0].1);
            let b = to_px(pair[1].0 as f64, pair[1].1);
            draw_line(&mut img, a, b, color);
        }
    }
    // axes
    let axis = Rgb([0, 0, 0]);
    draw_line(&mut img, (MARGIN as f32, MARGIN as f32), (MARGIN as f32, (height - MARGIN) as f32), axis);
    draw_line(
        &mut img,
        (MARGIN as f32, (height - MARGIN) as f32),
        ((width - MARGIN) as f32, (height - MARGIN) as f32),
        axis,
    );
    save_rgb(&img, path)
}

/// Histogram of values in [0, 1] with `bins` equal-width bars.
pub fn plot_histogram(path: &Path, values: &[f64], bins: usize, width: u32, height: u32) -> Result<()> {
    if values.is_empty() || bins == 0 {
        return Err(Error::invalid("nothing to plot"));
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let max = *counts.iter().max().unwrap() as f64;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let plot_w = (width - 2 * MARGIN) as f64;
    let plot_h = (height - 2 * MARGIN) as f64;
    for (b, &n) in counts.iter().enumerate() {
        let frac = if max > 0.0 { n as f64 / max } else { 0.0 };
        let x_lo = MARGIN as f64 + b as f64 / bins as f64 * plot_w;
        let x_hi = MARGIN as f64 + (b + 1) as f64 / bins as f64 * plot_w;
        let y_top = (height - MARGIN) as f64 - frac * plot_h;
        for x in x_lo as u32..(x_hi as u32).min(width) {
            for y in y_top as u32..(height - MARGIN) {
                img.put_pixel(x, y, Rgb([70, 110, 180]));
            }
        }
    }
    save_rgb(&img, path)
}

/// Dump a [0, 1] grid as a grayscale PNG, one pixel per cell.
pub fn save_mask(path: &Path, grid: &Array2<f64>) -> Result<()> {
    let (rows, cols) = grid.dim();
    let mut img = GrayImage::new(cols as u32, rows as u32);
    for r in 0..rows {
        for c in 0..cols {
            let v = (grid[[r, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(c as u32, r as u32, Luma([v]));
        }
    }
    img.save(path).map_err(|e| Error::invalid(format!("writing {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn writes_all_plot_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let curve: Vec<(usize, f64)> = (0..50).map(|i| (i, 1.0 / (i + 1) as f64)).collect();
        plot_curves(&dir.path().join("curve.png"), &[("loss", &curve)], 320, 200).unwrap();
        plot_histogram(&dir.path().join("hist.png"), &[0.1, 0.5, 0.51, 0.9, 0.95], 10, 320, 200).unwrap();
        save_mask(&dir.path().join("mask.png"), &array![[0.0, 0.5], [1.0, 0.25]]).unwrap();
        for f in ["curve.png", "hist.png", "mask.png"] {
            assert!(dir.path().join(f).exists());
        }
    }

    #[test]
    fn empty_inputs_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(plot_curves(&dir.path().join("c.png"), &[("x", &[])], 100, 100).is_err());
        assert!(plot_histogram(&dir.path().join("h.png"), &[], 4, 100, 100).is_err());
    }
}
