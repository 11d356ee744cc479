//! Minimal raster plots written as PNG: per-run bar charts and correlation heatmaps.

use std::path::Path;

use gemm_core::preprocess::SlideImage;
use gemm_core::Matrix;

use crate::error::Result;
use crate::formats::write_slide_png;

const BG: [u8; 3] = [255, 255, 255];

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self { w, h, px: BG.iter().copied().cycle().take(w * h * 3).collect() }
    }

    fn rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [u8; 3]) {
        for y in y0.min(self.h)..y1.min(self.h) {
            for x in x0.min(self.w)..x1.min(self.w) {
                let k = (y * self.w + x) * 3;
                self.px[k..k + 3].copy_from_slice(&rgb);
            }
        }
    }

    fn save(self, path: &Path) -> Result<()> {
        let img = SlideImage { slide_id: String::new(), width: self.w, height: self.h, pixels: self.px, mpp: None };
        write_slide_png(path, &img)
    }
}

/// One bar per run; bars are scaled to the largest absolute value, negatives hang below the axis.
pub fn bar_chart(path: &Path, values: &[f64]) -> Result<()> {
    let (bar, gap, h) = (16, 4, 120);
    let w = gap + values.len().max(1) * (bar + gap);
    let mut c = Canvas::new(w, h);
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let axis = if values.iter().any(|v| *v < 0.0) { h / 2 } else { h - 1 };
    c.rect(0, axis, w, axis + 1, [0, 0, 0]);
    for (i, v) in values.iter().enumerate() {
        let x = gap + i * (bar + gap);
        let len = ((v.abs() / max) * (axis.max(h - axis - 1) as f64 - 2.0)) as usize;
        if *v >= 0.0 {
            c.rect(x, axis - len.min(axis), x + bar, axis, [70, 110, 180]);
        } else {
            c.rect(x, axis + 1, x + bar, axis + 1 + len, [200, 90, 60]);
        }
    }
    c.save(path)
}

fn diverging(v: f64) -> [u8; 3] {
    let t = v.clamp(-1.0, 1.0);
    let fade = |a: f64| (255.0 * (1.0 - a.abs())).round() as u8;
    if t >= 0.0 {
        [255, fade(t), fade(t)]
    } else {
        [fade(t), fade(t), 255]
    }
}

/// Real (left) and generated (right) correlation matrices, blue −1 to red +1.
pub fn heatmap_pair(path: &Path, real: &Matrix, gen: &Matrix) -> Result<()> {
    let g = real.rows();
    let cell = (256 / g.max(1)).clamp(1, 16);
    let side = g * cell;
    let gap = 8;
    let mut c = Canvas::new(2 * side + gap, side.max(1));
    for (offset, m) in [(0, real), (side + gap, gen)] {
        for i in 0..g {
            for j in 0..g {
                c.rect(offset + j * cell, i * cell, offset + (j + 1) * cell, (i + 1) * cell, diverging(m[(i, j)]));
            }
        }
    }
    c.save(path)
}
