//! ROI-only synthesis: a fixed face box, softened by a 16x16 round trip, used
//! to blend the generated face into the target.

use std::path::Path;

use image::{ImageBuffer, Luma};
use mfim_autograd::Array;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{MfimError, Result};

/// Side of the canvas the default box coordinates refer to.
pub const REFERENCE_CANVAS: usize = 1024;

/// Scale used when a mask is stored as a 16-bit PNG. Every mask value is a
/// multiple of 2^-15 for the default box, so the encoding is lossless.
pub const PNG_SCALE: f64 = 32768.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiMaskSpec {
    pub canvas: usize,
    pub box_top: usize,
    pub box_left: usize,
    pub box_height: usize,
    pub box_width: usize,
    pub blur_size: usize,
}

impl Default for RoiMaskSpec {
    fn default() -> Self {
        Self {
            canvas: REFERENCE_CANVAS,
            box_top: 384,
            box_left: 256,
            box_height: 608,
            box_width: 512,
            blur_size: 16,
        }
    }
}

fn scale_round(v: usize, to: usize, from: usize) -> usize {
    (2 * v * to + from) / (2 * from)
}

impl RoiMaskSpec {
    /// A copy with the box rescaled to `canvas`, rounding to the nearest pixel.
    pub fn for_canvas(&self, canvas: usize) -> Self {
        let s = |v| scale_round(v, canvas, self.canvas);
        Self {
            canvas,
            box_top: s(self.box_top),
            box_left: s(self.box_left),
            box_height: s(self.box_height),
            box_width: s(self.box_width),
            blur_size: self.blur_size,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.box_height == 0 || self.box_width == 0 {
            v.push("roi box is empty".into());
        }
        if self.box_top + self.box_height > self.canvas || self.box_left + self.box_width > self.canvas {
            v.push(format!(
                "roi box ({}, {}, {}, {}) does not fit a {} canvas",
                self.box_top, self.box_left, self.box_height, self.box_width, self.canvas
            ));
        }
        if self.blur_size == 0 || !self.canvas.is_multiple_of(self.blur_size) {
            v.push(format!(
                "roi canvas {} must be a multiple of blur size {}",
                self.canvas, self.blur_size
            ));
        }
        v
    }
}

/// Source taps for upsampling `n_in` samples to `n_out` with half-pixel
/// centres, clamped at the edges.
fn bilinear_taps(n_out: usize, n_in: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// `canvas x canvas` mask in `[0, 1]`.
pub fn build_mask(spec: &RoiMaskSpec) -> Result<Array2<f64>> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(MfimError::Config(v.join("; ")));
    }
    let (c, s) = (spec.canvas, spec.blur_size);
    let k = c / s;
    let rows = spec.box_top..spec.box_top + spec.box_height;
    let cols = spec.box_left..spec.box_left + spec.box_width;
    // Area average of the binary box over each k x k cell.
    let overlap = |r: std::ops::Range<usize>, cell: usize| {
        let (lo, hi) = (cell * k, cell * k + k);
        r.end.min(hi).saturating_sub(r.start.max(lo))
    };
    let mut small = Array2::<f64>::zeros((s, s));
    for i in 0..s {
        for j in 0..s {
            small[[i, j]] = (overlap(rows.clone(), i) * overlap(cols.clone(), j)) as f64 / (k * k) as f64;
        }
    }
    let ty = bilinear_taps(c, s);
    let tx = bilinear_taps(c, s);
    let mut out = Array2::<f64>::zeros((c, c));
    for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
            let top = small[[y0, x0]] * (1.0 - fx) + small[[y0, x1]] * fx;
            let bot = small[[y1, x0]] * (1.0 - fx) + small[[y1, x1]] * fx;
            out[[y, x]] = top * (1.0 - fy) + bot * fy;
        }
    }
    Ok(out)
}

/// `m * x_swap + (1 - m) * x_tgt`; the mask broadcasts over leading axes.
pub fn blend(x_swap: &Array, x_tgt: &Array, mask: &Array2<f64>) -> Result<Array> {
    if x_swap.shape() != x_tgt.shape() {
        return Err(MfimError::Shape(format!(
            "blend inputs differ: {:?} vs {:?}",
            x_swap.shape(),
            x_tgt.shape()
        )));
    }
    let nd = x_swap.ndim();
    if nd < 2 || x_swap.shape()[nd - 2..] != *mask.shape() {
        return Err(MfimError::Shape(format!(
            "mask {:?} does not match image {:?}",
            mask.shape(),
            x_swap.shape()
        )));
    }
    let m = mask.view().into_dyn();
    let inv = m.mapv(|v| 1.0 - v);
    Ok(x_swap * &m + &(x_tgt * &inv))
}

pub fn write_mask_png(mask: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let data: Vec<u16> = mask
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * PNG_SCALE).round() as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer length matches dimensions");
    img.save(path).map_err(|e| MfimError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_mask_png(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| MfimError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_luma16();
    let (w, h) = img.dimensions();
    let data: Vec<f64> = img.into_raw().into_iter().map(|v| v as f64 / PNG_SCALE).collect();
    Array2::from_shape_vec((h as usize, w as usize), data).map_err(|e| MfimError::Shape(e.to_string()))
}
