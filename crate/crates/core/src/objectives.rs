//! Training losses and their weighted combination.
//!
//! Every function takes batched tape vars and returns a scalar var averaged
//! over the batch, so the same code serves training and gradient checks.

use mfim_autograd::{concat, Binder, Var};
use serde::{Deserialize, Serialize};

use crate::error::{expect_shape, MfimError, Result};
use crate::generator::Discriminator;
use crate::surrogates::{AttributePack, PerceptualNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub id: f64,
    pub recon: f64,
    pub adv: f64,
    pub r1: f64,
    pub shape: f64,
    pub pose: f64,
    pub expression: f64,
    pub landmark: f64,
    pub r1_period: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            id: 2.0,
            recon: 1.0,
            adv: 0.1,
            r1: 10.0,
            shape: 5.0,
            pose: 1.0,
            expression: 1.0,
            landmark: 0.0,
            r1_period: 16,
        }
    }
}

impl LossWeights {
    /// Default weights with the landmark term switched on.
    pub fn with_landmarks() -> Self {
        Self {
            landmark: 1000.0,
            ..Self::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, w) in [
            ("id", self.id),
            ("recon", self.recon),
            ("adv", self.adv),
            ("r1", self.r1),
            ("shape", self.shape),
            ("pose", self.pose),
            ("expression", self.expression),
            ("landmark", self.landmark),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                v.push(format!("loss.{name} = {w}: weights must be finite and non-negative"));
            }
        }
        if self.r1_period == 0 {
            v.push("loss.r1_period must be at least 1".into());
        }
        v
    }

    pub fn r1_due(&self, step: u64) -> bool {
        step.is_multiple_of(self.r1_period)
    }
}

/// 68-point keypoints used by the landmark loss, 1-based as in the usual
/// annotation: chin, nose tip, outer eye corners, mouth corners.
pub const LANDMARK_SUBSET_ONE_BASED: [usize; 6] = [9, 31, 37, 46, 49, 55];

/// Converts 1-based keypoint numbers to 0-based indices into `k` landmarks.
pub fn to_zero_based(subset: &[usize], k: usize) -> Result<Vec<usize>> {
    subset
        .iter()
        .map(|&i| {
            if i == 0 || i > k {
                Err(MfimError::Argument(format!("keypoint {i} is outside 1..={k}")))
            } else {
                Ok(i - 1)
            }
        })
        .collect()
}

fn ensure_finite(what: &str, v: Var<'_>) -> Result<()> {
    if v.value().iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MfimError::Numeric(format!("{what} contains non-finite values")))
    }
}

fn same_shape(what: &str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    expect_shape(what, &a.shape(), &b.shape())
}

/// `1 - cos(e_swap, e_src)` averaged over the batch.
pub fn id_loss<'t>(e_swap: Var<'t>, e_src: Var<'t>) -> Result<Var<'t>> {
    same_shape("identity embeddings", e_swap, e_src)?;
    ensure_finite("swapped embedding", e_swap)?;
    ensure_finite("source embedding", e_src)?;
    let dot = e_swap.mul(e_src).sum_axes(&[1], false);
    let norms = e_swap.row_l2_norm().mul(e_src.row_l2_norm()).add_scalar(1e-24);
    Ok(dot.div(norms).neg().add_scalar(1.0).mean_all())
}

pub fn l1_loss<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    same_shape("L1 inputs", a, b)?;
    Ok(a.sub(b).abs().mean_all())
}

pub fn mse_loss<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    same_shape("MSE inputs", a, b)?;
    Ok(a.sub(b).square().mean_all())
}

pub struct ReconTerms<'t> {
    pub l1: Var<'t>,
    pub perceptual: Var<'t>,
    pub total: Var<'t>,
}

/// Pixel L1 plus the unweighted sum of per-layer feature MSEs.
pub fn recon_loss<'t>(x_swap: Var<'t>, x_tgt: Var<'t>, net: &dyn PerceptualNet) -> Result<ReconTerms<'t>> {
    let l1 = l1_loss(x_swap, x_tgt)?;
    let fa = net.features(x_swap)?;
    let fb = net.features(x_tgt)?;
    let mut perceptual = x_swap.tape().scalar(0.0);
    for (a, b) in fa.into_iter().zip(fb) {
        perceptual = perceptual.add(mse_loss(a, b)?);
    }
    Ok(ReconTerms {
        l1,
        perceptual,
        total: l1.add(perceptual),
    })
}

/// Non-saturating generator loss, `mean softplus(-D(fake))`.
pub fn adv_g_loss(logits_fake: Var<'_>) -> Result<Var<'_>> {
    ensure_finite("fake logits", logits_fake)?;
    Ok(logits_fake.neg().softplus().mean_all())
}

/// `mean softplus(-D(real)) + mean softplus(D(fake))`.
pub fn adv_d_loss<'t>(logits_real: Var<'t>, logits_fake: Var<'t>) -> Result<Var<'t>> {
    ensure_finite("real logits", logits_real)?;
    ensure_finite("fake logits", logits_fake)?;
    Ok(logits_real
        .neg()
        .softplus()
        .mean_all()
        .add(logits_fake.softplus().mean_all()))
}

/// Mean over the batch of `||dD(x)/dx||^2`, together with the real logits.
pub fn r1_penalty<'t>(disc: &Discriminator, b: &Binder<'t, '_>, x_real: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let (logits, grad) = disc.forward_with_input_grad(b, x_real)?;
    let n = x_real.shape()[0] as f64;
    Ok((logits, grad.square().sum_all().mul_scalar(1.0 / n)))
}

pub struct ParamLosses<'t> {
    pub shape: Var<'t>,
    pub pose: Var<'t>,
    pub expression: Var<'t>,
}

fn row_distance<'t>(what: &str, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    same_shape(what, a, b)?;
    Ok(a.sub(b).row_l2_norm().mean_all())
}

/// Shape is pulled toward the source, pose and expression toward the target.
pub fn param_losses<'t>(
    swap: &AttributePack<Var<'t>>,
    src: &AttributePack<Var<'t>>,
    tgt: &AttributePack<Var<'t>>,
) -> Result<ParamLosses<'t>> {
    Ok(ParamLosses {
        shape: row_distance("shape parameters", swap.shape, src.shape)?,
        pose: row_distance("pose parameters", swap.pose, tgt.pose)?,
        expression: row_distance("expression parameters", swap.expression, tgt.expression)?,
    })
}

/// Mean over the batch and the subset of `|dx| + |dy|`. `subset` holds
/// 0-based indices; see [`to_zero_based`].
pub fn landmark_loss<'t>(q_gen: Var<'t>, q_gt: Var<'t>, subset: &[usize]) -> Result<Var<'t>> {
    same_shape("landmarks", q_gen, q_gt)?;
    let s = q_gen.shape();
    if s.len() != 3 || s[2] != 2 {
        return Err(MfimError::Shape(format!("landmarks must be [N, K, 2], got {s:?}")));
    }
    if subset.is_empty() {
        return Err(MfimError::Argument("landmark subset is empty".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= s[1]) {
        return Err(MfimError::Argument(format!(
            "landmark index {bad} is out of range for {} keypoints",
            s[1]
        )));
    }
    let diff = q_gen.sub(q_gt).abs();
    let picked: Vec<Var<'t>> = subset.iter().map(|&i| diff.narrow(1, i, 1)).collect();
    let picked = concat(q_gen.tape(), &picked, 1);
    // Sum the two coordinates, then average over points and batch.
    Ok(picked.sum_axes(&[2], false).mean_all())
}

/// Unweighted term values of one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub id: f64,
    pub recon: f64,
    pub adv: f64,
    /// Present only on steps where the penalty was evaluated.
    pub r1: Option<f64>,
    pub shape: f64,
    pub pose: f64,
    pub expression: f64,
    pub landmark: f64,
    /// Discriminator loss, weighted by 1 and kept out of `total`.
    pub adv_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub terms: LossTerms,
    /// `sum(weight * term)` over the generator terms plus `r1 * r1` when due.
    pub total: f64,
}

/// Weighted sum of `terms`. The R1 term counts only on steps where it is due.
pub fn total_loss(terms: &LossTerms, w: &LossWeights, step: u64) -> LossReport {
    let mut total = w.id * terms.id
        + w.recon * terms.recon
        + w.adv * terms.adv
        + w.shape * terms.shape
        + w.pose * terms.pose
        + w.expression * terms.expression
        + w.landmark * terms.landmark;
    let mut terms = terms.clone();
    if w.r1_due(step) {
        total += w.r1 * terms.r1.unwrap_or(0.0);
    } else {
        terms.r1 = None;
    }
    LossReport { step, terms, total }
}
