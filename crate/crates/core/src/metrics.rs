//! Evaluation: per-pair attribute distances, FID, and the relative
//! identity/shape scores for ID mixing.

use mfim_autograd::Array;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MfimError, Result};
use crate::nn::seeded_rng;
use crate::surrogates::Surrogates;

/// Everything the metrics read from one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures {
    pub id: Vec<f64>,
    pub shape: Vec<f64>,
    pub expression: Vec<f64>,
    pub pose: Vec<f64>,
    pub pose_hn: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub identity: f64,
    pub shape: f64,
    pub expression: f64,
    pub pose: f64,
    pub pose_hn: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub identity: f64,
    pub shape: f64,
    pub expression: f64,
    pub pose: f64,
    pub pose_hn: f64,
    pub fid: Option<f64>,
    pub count: usize,
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn row(a: &Array, i: usize) -> Vec<f64> {
    a.index_axis(Axis(0), i).iter().copied().collect()
}

/// Per-image features for a `[N, 3, S, S]` batch.
pub fn image_features(x: &Array, s: &Surrogates) -> Result<Vec<ImageFeatures>> {
    let pack = s.attribute_pack_array(x)?;
    let hn = s.pose_features_array(x)?;
    Ok((0..x.shape()[0])
        .map(|i| ImageFeatures {
            id: row(&pack.id, i),
            shape: row(&pack.shape, i),
            expression: row(&pack.expression, i),
            pose: row(&pack.pose, i),
            pose_hn: row(&hn, i),
        })
        .collect())
}

/// Identity and shape are measured against the source, the rest against the
/// target.
pub fn pair_record(swap: &ImageFeatures, src: &ImageFeatures, tgt: &ImageFeatures) -> PairRecord {
    PairRecord {
        identity: l2_distance(&swap.id, &src.id),
        shape: l2_distance(&swap.shape, &src.shape),
        expression: l2_distance(&swap.expression, &tgt.expression),
        pose: l2_distance(&swap.pose, &tgt.pose),
        pose_hn: l2_distance(&swap.pose_hn, &tgt.pose_hn),
    }
}

pub fn pair_metrics(x_swap: &Array, x_src: &Array, x_tgt: &Array, s: &Surrogates) -> Result<Vec<PairRecord>> {
    if x_swap.shape() != x_src.shape() || x_swap.shape() != x_tgt.shape() {
        return Err(MfimError::Shape(format!(
            "pair metric inputs differ: {:?}, {:?}, {:?}",
            x_swap.shape(),
            x_src.shape(),
            x_tgt.shape()
        )));
    }
    let (fs, fa, fb) = (
        image_features(x_swap, s)?,
        image_features(x_src, s)?,
        image_features(x_tgt, s)?,
    );
    Ok(fs
        .iter()
        .zip(&fa)
        .zip(&fb)
        .map(|((w, a), b)| pair_record(w, a, b))
        .collect())
}

/// Arithmetic mean of each column.
pub fn aggregate(records: &[PairRecord]) -> MetricReport {
    let n = records.len();
    if n == 0 {
        return MetricReport::default();
    }
    let mean = |f: fn(&PairRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
    MetricReport {
        identity: mean(|r| r.identity),
        shape: mean(|r| r.shape),
        expression: mean(|r| r.expression),
        pose: mean(|r| r.pose),
        pose_hn: mean(|r| r.pose_hn),
        fid: None,
        count: n,
    }
}

/// Regulariser added to both covariances.
pub const FID_EPS: f64 = 1e-6;

fn gaussian_fit(x: &Array) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let m = DMatrix::from_row_iterator(n, d, x.iter().copied());
    let mean = m.row_mean().transpose();
    let mut centered = m;
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0) + DMatrix::identity(d, d) * FID_EPS;
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let most_negative = eig.eigenvalues.iter().copied().fold(0.0, f64::min);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    (root, most_negative)
}

/// Fréchet distance between Gaussian fits of two `[n, d]` feature sets.
pub fn fid(real: &Array, generated: &Array) -> Result<f64> {
    for (name, x) in [("real", real), ("generated", generated)] {
        if x.ndim() != 2 {
            return Err(MfimError::Shape(format!(
                "{name} features must be [n, d], got {:?}",
                x.shape()
            )));
        }
        if x.shape()[0] < 2 {
            return Err(MfimError::Argument(format!("FID needs at least two {name} samples")));
        }
    }
    if real.shape()[1] != generated.shape()[1] {
        return Err(MfimError::Shape(format!(
            "feature dims differ: {} vs {}",
            real.shape()[1],
            generated.shape()[1]
        )));
    }
    let (m1, c1) = gaussian_fit(real);
    let (m2, c2) = gaussian_fit(generated);
    let (s1, _) = sym_sqrt(&c1);
    let (cross, most_negative) = sym_sqrt(&(&s1 * &c2 * &s1));
    if most_negative < -1e-8 * c1.trace().max(c2.trace()) {
        log::warn!("FID: clipped negative eigenvalue {most_negative:.3e} in the covariance product");
    }
    let d = (&m1 - &m2).norm_squared() + c1.trace() + c2.trace() - 2.0 * cross.trace();
    Ok(d.max(0.0))
}

/// Stacks `[1, d]` or `[n, d]` arrays row-wise.
pub fn stack_rows(parts: &[Array]) -> Result<Array> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| MfimError::Shape(e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeRecord {
    pub r_id_gb: f64,
    pub r_id_lc: f64,
    pub r_shape_gb: f64,
    pub r_shape_lc: f64,
}

/// `(d_gb / (d_gb + d_lc), d_lc / (d_gb + d_lc))`, or `(0.5, 0.5)` when both
/// distances are zero. The smaller share is divided out and the larger one
/// taken as its complement, which makes the pair sum to exactly 1.
pub fn relative_pair(d_gb: f64, d_lc: f64) -> (f64, f64) {
    let s = d_gb + d_lc;
    if s == 0.0 {
        log::warn!("relative metric: both distances are zero, reporting (0.5, 0.5)");
        return (0.5, 0.5);
    }
    if d_gb <= d_lc {
        let gb = d_gb / s;
        (gb, 1.0 - gb)
    } else {
        let lc = d_lc / s;
        (1.0 - lc, lc)
    }
}

pub fn relative_record(mix: &ImageFeatures, gb: &ImageFeatures, lc: &ImageFeatures) -> RelativeRecord {
    let (r_id_gb, r_id_lc) = relative_pair(l2_distance(&mix.id, &gb.id), l2_distance(&mix.id, &lc.id));
    let (r_shape_gb, r_shape_lc) =
        relative_pair(l2_distance(&mix.shape, &gb.shape), l2_distance(&mix.shape, &lc.shape));
    RelativeRecord {
        r_id_gb,
        r_id_lc,
        r_shape_gb,
        r_shape_lc,
    }
}

pub fn relative_metrics(x_mix: &Array, x_gb: &Array, x_lc: &Array, s: &Surrogates) -> Result<Vec<RelativeRecord>> {
    let (fm, fg, fl) = (
        image_features(x_mix, s)?,
        image_features(x_gb, s)?,
        image_features(x_lc, s)?,
    );
    if fm.len() != fg.len() || fm.len() != fl.len() {
        return Err(MfimError::Shape("relative metric batches differ in size".into()));
    }
    Ok(fm
        .iter()
        .zip(&fg)
        .zip(&fl)
        .map(|((m, g), l)| relative_record(m, g, l))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixTriplet {
    pub target: usize,
    pub global: usize,
    pub local: usize,
}

/// `n` random triplets over `dataset_len` images. Each role is uniform over
/// the dataset; the three ids are distinct whenever there are at least three
/// images.
pub fn build_triplets(dataset_len: usize, n: usize, seed: u64) -> Result<Vec<MixTriplet>> {
    if dataset_len == 0 {
        return Err(MfimError::Data("cannot build triplets from an empty dataset".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut pick_excluding = |taken: &[usize]| -> usize {
        let free = dataset_len - taken.len();
        if free == 0 {
            return rng.random_range(0..dataset_len);
        }
        let mut k = rng.random_range(0..free);
        let mut sorted = taken.to_vec();
        sorted.sort_unstable();
        for t in sorted {
            if k >= t {
                k += 1;
            }
        }
        k
    };
    Ok((0..n)
        .map(|_| {
            let target = pick_excluding(&[]);
            let global = if dataset_len >= 2 {
                pick_excluding(&[target])
            } else {
                target
            };
            let local = if dataset_len >= 3 {
                pick_excluding(&[target, global])
            } else {
                pick_excluding(&[target])
            };
            MixTriplet { target, global, local }
        })
        .collect())
}
