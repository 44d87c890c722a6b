//! Heatmaps, assignment overlays and sweep plots.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use pdq_core::simharness::SweepResult;
use pdq_core::{Detection, Frame, FrameAssignment, GaussianCorner, Geometry, PixelSet, ProbabilityMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("unsupported image extension `{0}` (use .png or .pgm)")]
    UnsupportedFormat(String),
}

pub const TP_BLUE: Rgb<u8> = Rgb([31, 119, 255]);
pub const FP_ORANGE: Rgb<u8> = Rgb([255, 127, 14]);
pub const TEXT_WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BACKGROUND: Rgb<u8> = Rgb([40, 40, 40]);
const MASK_ALPHA: f64 = 0.5;

/// Gray level for a probability: `round(255 p)`.
pub fn gray_level(p: f64) -> u8 {
    (255.0 * p.clamp(0.0, 1.0)).round() as u8
}

/// One pixel per image pixel; pixels off the support are black.
pub fn heatmap(pmap: &ProbabilityMap<f64>) -> GrayImage {
    let dims = pmap.dims();
    GrayImage::from_fn(dims.width, dims.height, |x, y| Luma([gray_level(pmap.get(x as i64, y as i64))]))
}

/// Binary (P5) PGM.
pub fn write_pgm<W: Write>(img: &GrayImage, mut out: W) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height())?;
    out.write_all(img.as_raw())?;
    out.flush()
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase()
}

/// Writes PGM or PNG depending on the file extension.
pub fn save_gray(img: &GrayImage, path: &Path) -> Result<(), RenderError> {
    match extension(path).as_str() {
        "pgm" => Ok(write_pgm(img, BufWriter::new(File::create(path)?))?),
        "png" => Ok(img.save_with_format(path, ImageFormat::Png)?),
        other => Err(RenderError::UnsupportedFormat(other.to_string())),
    }
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<(), RenderError> {
    match extension(path).as_str() {
        "png" => Ok(img.save_with_format(path, ImageFormat::Png)?),
        other => Err(RenderError::UnsupportedFormat(other.to_string())),
    }
}

/// Points on the `k`-standard-deviation contour of a corner Gaussian.
pub fn ellipse_points(corner: &GaussianCorner<f64>, k: f64, n: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = corner.eigenvalues();
    let a = corner.cov[0][0];
    let d = corner.cov[1][1];
    let b = (corner.cov[0][1] + corner.cov[1][0]) / 2.0;
    // Direction of the major axis.
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    let (s, c) = theta.sin_cos();
    let (r_major, r_minor) = (k * hi.max(0.0).sqrt(), k * lo.max(0.0).sqrt());
    (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            let (u, v) = (r_major * t.cos(), r_minor * t.sin());
            (corner.mean[0] + c * u - s * v, corner.mean[1] + s * u + c * v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Outline of an inclusive box `[x0, y0, x1, y1]`.
    Rect { color: Rgb<u8>, rect: [f64; 4] },
    /// Alpha-blended fill.
    Mask { color: Rgb<u8>, pixels: PixelSet },
    Polyline { color: Rgb<u8>, points: Vec<(f64, f64)> },
    Text { color: Rgb<u8>, x: i64, y: i64, text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub width: u32,
    pub height: u32,
    pub shapes: Vec<Shape>,
}

fn corner_ellipses(det: &Detection<f64>, color: Rgb<u8>, shapes: &mut Vec<Shape>) {
    if let Geometry::ProbabilisticBox { top_left, bottom_right } = det.geometry() {
        for corner in [top_left, bottom_right] {
            for k in [1.0, 2.0, 3.0] {
                shapes.push(Shape::Polyline {
                    color,
                    points: ellipse_points(corner, k, 48),
                });
            }
        }
    }
}

/// Overlay for one frame. `dets` is the full submitted list; the assignment's
/// detection indices point into it.
pub fn build_overlay(frame: &Frame, dets: &[Detection<f64>], assignment: &FrameAssignment<f64>) -> Overlay {
    let mut shapes = Vec::new();
    for &g in &assignment.fn_gt {
        shapes.push(Shape::Mask {
            color: FP_ORANGE,
            pixels: frame.objects[g].segment.clone(),
        });
    }
    for p in &assignment.pairs {
        shapes.push(Shape::Mask {
            color: TP_BLUE,
            pixels: frame.objects[p.gt].segment.clone(),
        });
    }
    for p in &assignment.pairs {
        let det = &dets[p.det];
        let rect = det.geometry().mean_box();
        shapes.push(Shape::Rect { color: TP_BLUE, rect });
        corner_ellipses(det, TP_BLUE, &mut shapes);
        let q = &p.quality;
        shapes.push(Shape::Text {
            color: TEXT_WHITE,
            x: rect[0].round() as i64,
            y: rect[1].round() as i64 - 7,
            text: format!("({:.2}/{:.2}/{:.2})", q.ppdq, q.spatial, q.label),
        });
    }
    for &j in &assignment.fp_det {
        let det = &dets[j];
        shapes.push(Shape::Rect {
            color: FP_ORANGE,
            rect: det.geometry().mean_box(),
        });
        corner_ellipses(det, FP_ORANGE, &mut shapes);
    }
    Overlay {
        width: frame.dims.width,
        height: frame.dims.height,
        shapes,
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn blend(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>, alpha: f64) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        let p = img.get_pixel_mut(x as u32, y as u32);
        for i in 0..3 {
            p.0[i] = ((1.0 - alpha) * p.0[i] as f64 + alpha * c.0[i] as f64).round() as u8;
        }
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        put(img, (a.0 + t * (b.0 - a.0)).round() as i64, (a.1 + t * (b.1 - a.1)).round() as i64, c);
    }
}

// 3x5 glyphs, one row per entry, high bit on the left.
fn glyph(ch: char) -> [u8; 5] {
    match ch {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '/' => [1, 1, 2, 4, 4],
        '(' => [1, 2, 2, 2, 1],
        ')' => [4, 2, 2, 2, 4],
        '-' => [0, 0, 7, 0, 0],
        'e' => [0, 7, 7, 4, 7],
        _ => [0; 5],
    }
}

pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, c: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let g = glyph(ch);
        let ox = x + 4 * i as i64;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    put(img, ox + col, y + row as i64, c);
                }
            }
        }
    }
}

pub fn rasterize(overlay: &Overlay) -> RgbImage {
    let mut img = RgbImage::from_pixel(overlay.width, overlay.height, BACKGROUND);
    for shape in &overlay.shapes {
        match shape {
            Shape::Mask { color, pixels } => {
                for (x, y) in pixels.iter() {
                    blend(&mut img, x, y, *color, MASK_ALPHA);
                }
            }
            Shape::Rect { color, rect } => {
                let [x0, y0, x1, y1] = *rect;
                let pts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)];
                for w in pts.windows(2) {
                    line(&mut img, w[0], w[1], *color);
                }
            }
            Shape::Polyline { color, points } => {
                for i in 0..points.len() {
                    line(&mut img, points[i], points[(i + 1) % points.len()], *color);
                }
            }
            Shape::Text { color, x, y, text } => draw_text(&mut img, *x, *y, text, *color),
        }
    }
    img
}

/// Mean PDQ (blue) and mean mAP (orange) against the grid value, on a
/// `[0, 1]` vertical axis.
pub fn plot_sweep(result: &SweepResult, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    let (left, right, top, bottom) = (40.0, 15.0, 15.0, 25.0);
    let (w, h) = (width as f64, height as f64);
    let pdq = result.mean_pdq();
    let map = result.mean_map();
    let xs: Vec<f64> = pdq.iter().map(|p| p.0).collect();
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if xmax > xmin { xmax - xmin } else { 1.0 };
    let to_px = |x: f64, y: f64| {
        (
            left + (x - xmin) / span * (w - left - right),
            h - bottom - y.clamp(0.0, 1.0) * (h - top - bottom),
        )
    };
    line(&mut img, to_px(xmin, 0.0), to_px(xmin + span, 0.0), black);
    line(&mut img, to_px(xmin, 0.0), to_px(xmin, 1.0), black);
    for (v, label) in [(0.0, "0"), (0.5, "0.5"), (1.0, "1")] {
        let (px, py) = to_px(xmin, v);
        line(&mut img, (px - 3.0, py), (px, py), black);
        draw_text(&mut img, 4, py as i64 - 2, label, black);
    }
    for &x in &xs {
        let (px, py) = to_px(x, 0.0);
        line(&mut img, (px, py), (px, py + 3.0), black);
    }
    let (px, py) = to_px(xmin, 0.0);
    draw_text(&mut img, px as i64, py as i64 + 8, &format!("{xmin}"), black);
    let (px, py) = to_px(xmin + span, 0.0);
    let label = format!("{}", xmin + span);
    draw_text(&mut img, px as i64 - 4 * label.len() as i64, py as i64 + 8, &label, black);
    for (series, color) in [(&pdq, TP_BLUE), (&map, FP_ORANGE)] {
        for w in series.windows(2) {
            line(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), color);
        }
        for &(x, y) in series.iter() {
            let (px, py) = to_px(x, y);
            for d in -2..=2 {
                put(&mut img, px as i64 + d, py as i64, color);
                put(&mut img, px as i64, py as i64 + d, color);
            }
        }
    }
    img
}
