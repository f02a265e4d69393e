//! Image I/O and CSV manifests. Images live in memory as `[3, S, S]` arrays in
//! `[-1, 1]`; manifest paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{Rgb, RgbImage};
use mfim_autograd::Array;
use ndarray::{Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{MfimError, Result};

fn image_err(path: &Path, e: impl ToString) -> MfimError {
    MfimError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decodes to RGB, resizes to `size x size` with a triangle filter and maps
/// `[0, 255]` to `[-1, 1]`.
pub fn load_image(path: &Path, size: usize) -> Result<Array> {
    let mut img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    if img.dimensions() != (size as u32, size as u32) {
        img = image::imageops::resize(&img, size as u32, size as u32, FilterType::Triangle);
    }
    let mut out = Array::zeros(IxDyn(&[3, size, size]));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px[c] as f64 / 127.5 - 1.0;
        }
    }
    Ok(out)
}

/// Stacks images into `[N, 3, S, S]`.
pub fn load_images(paths: &[PathBuf], size: usize) -> Result<Array> {
    let imgs = paths.iter().map(|p| load_image(p, size)).collect::<Result<Vec<_>>>()?;
    stack(&imgs)
}

pub fn stack(imgs: &[Array]) -> Result<Array> {
    let views: Vec<_> = imgs.iter().map(|a| a.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| MfimError::Shape(e.to_string()))
}

/// Clamps to `[-1, 1]` and maps affinely to `[0, 255]`.
pub fn to_rgb8(img: &Array) -> Result<RgbImage> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(MfimError::Shape(format!("expected a [3, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let q = |v: f64| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([q(img[[0, y, x]]), q(img[[1, y, x]]), q(img[[2, y, x]])])
    }))
}

pub fn save_png(img: &Array, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    to_rgb8(img)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

/// Saves image `index` of a `[N, 3, H, W]` batch.
pub fn save_batch_png(batch: &Array, index: usize, path: &Path) -> Result<()> {
    if batch.ndim() != 4 || index >= batch.shape()[0] {
        return Err(MfimError::Shape(format!(
            "no image {index} in a batch of shape {:?}",
            batch.shape()
        )));
    }
    save_png(&batch.index_axis(Axis(0), index).to_owned(), path)
}

/// Deterministic face-like test images `[N, 3, S, S]`: a shaded ellipse with
/// eyes and a mouth on a vertical gradient, geometry and colours varying with
/// the seed and index.
pub fn synthetic_faces(seed: u64, n: usize, size: usize) -> Array {
    use rand::Rng;
    let mut rng = crate::nn::seeded_rng(seed);
    let mut out = Array::zeros(IxDyn(&[n, 3, size, size]));
    for i in 0..n {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let (cx, cy) = (u(0.45, 0.55), u(0.5, 0.6));
        let (rx, ry) = (u(0.22, 0.3), u(0.3, 0.38));
        let skin = [u(0.2, 0.7), u(0.0, 0.4), u(-0.3, 0.2)];
        let bg_top = [u(-0.9, 0.0), u(-0.9, 0.0), u(-0.9, 0.0)];
        let bg_bot = [u(-0.5, 0.5), u(-0.5, 0.5), u(-0.5, 0.5)];
        let eye_dx = u(0.08, 0.12);
        let eye_y = cy - u(0.06, 0.12);
        let mouth_y = cy + u(0.12, 0.18);
        let mouth_w = u(0.06, 0.12);
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = ((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64);
                let e = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2);
                let eye = [cx - eye_dx, cx + eye_dx]
                    .iter()
                    .any(|&ex| (fx - ex).powi(2) + (fy - eye_y).powi(2) < 0.0009);
                let mouth = (fy - mouth_y).abs() < 0.015 && (fx - cx).abs() < mouth_w;
                for c in 0..3 {
                    let bg = bg_top[c] * (1.0 - fy) + bg_bot[c] * fy;
                    let face = skin[c] * (1.0 - 0.3 * e);
                    let v = if eye || (mouth && e < 1.0) {
                        -0.8
                    } else if e < 1.0 {
                        face
                    } else {
                        bg
                    };
                    out[[i, c, y, x]] = v;
                }
            }
        }
    }
    out
}

fn manifest_err(path: &Path, line: u64, message: impl ToString) -> MfimError {
    MfimError::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message: message.to_string(),
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| manifest_err(path, 0, e))?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: T = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            manifest_err(path, line, e)
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(manifest_err(path, 1, "manifest has no rows"));
    }
    Ok(rows)
}

fn resolve(manifest: &Path, p: &Path) -> PathBuf {
    manifest.parent().map(|d| d.join(p)).unwrap_or_else(|| p.to_path_buf())
}

#[derive(Debug, Deserialize)]
struct DatasetRow {
    path: PathBuf,
}

/// Training images: a CSV with a `path` column.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub paths: Vec<PathBuf>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let rows: Vec<DatasetRow> = read_rows(path)?;
        Ok(Self {
            paths: rows.into_iter().map(|r| resolve(path, &r.path)).collect(),
        })
    }

    pub fn load(&self, size: usize) -> Result<Array> {
        load_images(&self.paths, size)
    }
}

/// One evaluation row. The global/local columns are present together or not
/// at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub source_path: PathBuf,
    pub target_path: PathBuf,
    #[serde(default)]
    pub global_path: Option<PathBuf>,
    #[serde(default)]
    pub local_path: Option<PathBuf>,
}

pub fn read_eval_manifest(path: &Path) -> Result<Vec<EvalRow>> {
    let rows: Vec<EvalRow> = read_rows(path)?;
    let mixing = rows[0].global_path.is_some();
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        if r.global_path.is_some() != mixing || r.local_path.is_some() != mixing {
            return Err(manifest_err(
                path,
                i as u64 + 2,
                "global_path and local_path must be filled on every row or on none",
            ));
        }
        out.push(EvalRow {
            source_path: resolve(path, &r.source_path),
            target_path: resolve(path, &r.target_path),
            global_path: r.global_path.map(|p| resolve(path, &p)),
            local_path: r.local_path.map(|p| resolve(path, &p)),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = Array::from_shape_fn(IxDyn(&[3, 8, 8]), |ix| {
            ((ix[0] * 64 + ix[1] * 8 + ix[2]) % 256) as f64 / 127.5 - 1.0
        });
        save_png(&img, &p).unwrap();
        let back = load_image(&p, 8).unwrap();
        assert!(back.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn export_clamps() {
        let img = Array::from_shape_vec(IxDyn(&[3, 1, 1]), vec![-3.0, 0.0, 7.0]).unwrap();
        assert_eq!(to_rgb8(&img).unwrap().get_pixel(0, 0).0, [0, 128, 255]);
    }

    #[test]
    fn manifests_resolve_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        std::fs::write(&m, "source_path,target_path\na.png,b.png\n").unwrap();
        let rows = read_eval_manifest(&m).unwrap();
        assert_eq!(rows[0].source_path, dir.path().join("a.png"));
        assert!(rows[0].global_path.is_none());
        std::fs::write(&m, "source_path,target_path,global_path,local_path\na,b,c,d\na,b,,\n").unwrap();
        assert!(matches!(read_eval_manifest(&m), Err(MfimError::Parse { line: 3, .. })));
        std::fs::write(&m, "src,tgt\na,b\n").unwrap();
        assert!(matches!(read_eval_manifest(&m), Err(MfimError::Parse { .. })));
        std::fs::write(&m, "path\nimgs/x.png\n").unwrap();
        assert_eq!(
            DatasetManifest::read(&m).unwrap().paths,
            vec![dir.path().join("imgs/x.png")]
        );
    }

    #[test]
    fn unreadable_image_is_reported_with_its_path() {
        let err = load_image(Path::new("/nonexistent/x.png"), 8).unwrap_err();
        assert!(matches!(err, MfimError::Image { .. }));
    }
}
