//! Training loop: batch assembly, alternating discriminator and
//! encoder/generator updates, lazy R1, learning-rate schedule, checkpoints.

use std::collections::BTreeMap;
use std::io::Write;

use mfim_autograd::{Array, Binder, ParamSet, Tape, Var};
use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{MfimError, Result};
use crate::model::Models;
use crate::nn::{seeded_rng, ModelRng};
use crate::objectives::{
    adv_d_loss, adv_g_loss, id_loss, l1_loss, landmark_loss, param_losses, r1_penalty, recon_loss, to_zero_based,
    total_loss, LossReport, LossTerms, LossWeights, LANDMARK_SUBSET_ONE_BASED,
};
use crate::routing::{plan_face_swap, Role, RoutingPlan};
use crate::surrogates::Surrogates;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub self_recon_count: usize,
    pub lr: f64,
    pub decay_amount: f64,
    pub decay_period: u64,
    pub decay_start: u64,
    /// Taken from the run seed rather than the `[train]` table.
    #[serde(skip)]
    pub seed: u64,
    pub checkpoint_period: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            batch_size: 4,
            self_recon_count: 1,
            lr: 1e-4,
            decay_amount: 2e-5,
            decay_period: 40_000,
            decay_start: 500_000,
            seed: 0,
            checkpoint_period: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push("train.batch_size must be positive".into());
        }
        if self.self_recon_count >= self.batch_size {
            v.push(format!(
                "train.self_recon_count = {} must be below batch_size = {}",
                self.self_recon_count, self.batch_size
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.decay_amount.is_finite() && self.decay_amount >= 0.0) {
            v.push("train.lr and train.decay_amount must be finite and non-negative".into());
        }
        if self.decay_period == 0 {
            v.push("train.decay_period must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            v.push("train.adam_beta1/adam_beta2 must lie in [0, 1) and adam_eps must be positive".into());
        }
        v
    }

    /// Base rate until `decay_start`, then lowered by `decay_amount` once per
    /// completed `decay_period`, never below zero.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step <= self.decay_start {
            return self.lr;
        }
        let k = (step - self.decay_start) / self.decay_period;
        (self.lr - k as f64 * self.decay_amount).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub source: usize,
    pub target: usize,
    pub self_recon: bool,
}

pub type Batch = Vec<Pair>;

/// The first `self_recon_count` pairs reuse one image as source and target;
/// the others draw a target and a different source, uniformly with
/// replacement. A single-image dataset yields only self pairs.
pub fn make_batch(dataset_len: usize, cfg: &TrainConfig, rng: &mut ModelRng) -> Result<Batch> {
    if dataset_len == 0 {
        return Err(MfimError::Data("the training dataset is empty".into()));
    }
    Ok((0..cfg.batch_size)
        .map(|i| {
            let target = rng.random_range(0..dataset_len);
            let source = if i < cfg.self_recon_count || dataset_len == 1 {
                target
            } else {
                let s = rng.random_range(0..dataset_len - 1);
                if s >= target {
                    s + 1
                } else {
                    s
                }
            };
            Pair {
                source,
                target,
                self_recon: source == target,
            }
        })
        .collect())
}

pub trait Optimizer {
    fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Array>, lr: f64) -> Result<()>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: ParamSet::new(),
            v: ParamSet::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Array>, lr: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| MfimError::Argument(format!("gradient for unknown parameter `{name}`")))?;
            if !self.m.contains(name) {
                self.m.insert(name.clone(), Array::zeros(g.raw_dim()));
                self.v.insert(name.clone(), Array::zeros(g.raw_dim()));
            }
            let m = self.m.get_mut(name).expect("inserted above");
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let v = self.v.get_mut(name).expect("inserted above");
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let m = self.m.get(name).expect("inserted above");
            let v = self.v.get(name).expect("inserted above");
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            });
        }
        Ok(())
    }
}

/// Per-step log record, one JSON line each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub lr: f64,
    pub r1_applied: bool,
    /// Pixel L1 over the self-reconstruction pairs only.
    pub self_recon_l1: Option<f64>,
    #[serde(flatten)]
    pub report: LossReport,
}

pub struct Trainer {
    pub models: Models,
    pub surrogates: Surrogates,
    pub weights: LossWeights,
    pub cfg: TrainConfig,
    /// `[D, 3, R, R]` images in `[-1, 1]`.
    pub dataset: Array,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub rng: ModelRng,
    pub step: u64,
    plan: RoutingPlan,
}

fn gather(dataset: &Array, idx: &[usize]) -> Array {
    dataset.select(Axis(0), idx)
}

fn finite_or_abort(record: &StepRecord) -> Result<()> {
    let t = &record.report.terms;
    let all = [
        t.id,
        t.recon,
        t.adv,
        t.shape,
        t.pose,
        t.expression,
        t.landmark,
        t.adv_d,
        record.report.total,
    ];
    if all.iter().chain(t.r1.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MfimError::Numeric(format!(
            "non-finite loss at step {}: {}",
            record.report.step,
            serde_json::to_string(record).unwrap_or_default()
        )))
    }
}

impl Trainer {
    pub fn new(
        models: Models,
        surrogates: Surrogates,
        weights: LossWeights,
        cfg: TrainConfig,
        dataset: Array,
    ) -> Result<Self> {
        let plan = plan_face_swap(&models.generator.cfg)?;
        let k = models.generator.cfg.resolution;
        if dataset.ndim() != 4 || dataset.shape()[1..] != [3, k, k] {
            return Err(MfimError::Data(format!(
                "dataset must be [D, 3, {k}, {k}], got {:?}",
                dataset.shape()
            )));
        }
        let opt = || Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Ok(Self {
            models,
            surrogates,
            weights,
            rng: seeded_rng(cfg.seed),
            opt_g: opt(),
            opt_d: opt(),
            cfg,
            dataset,
            step: 0,
            plan,
        })
    }

    /// One discriminator update followed by one encoder/generator update.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let lr = self.cfg.lr_at(step);
        let batch = make_batch(self.dataset.shape()[0], &self.cfg, &mut self.rng)?;
        let src_idx: Vec<usize> = batch.iter().map(|p| p.source).collect();
        let tgt_idx: Vec<usize> = batch.iter().map(|p| p.target).collect();
        let self_idx: Vec<usize> = batch
            .iter()
            .enumerate()
            .filter(|(_, p)| p.self_recon)
            .map(|(i, _)| i)
            .collect();
        let x_src = gather(&self.dataset, &src_idx);
        let x_tgt = gather(&self.dataset, &tgt_idx);

        let g_tape = Tape::new();
        let gb = Binder::trainable(&g_tape, &self.models.g_params);
        let src_v = g_tape.constant(x_src);
        let tgt_v = g_tape.constant(x_tgt.clone());
        let images = BTreeMap::from([(Role::Source, src_v), (Role::Target, tgt_v)]);
        let x_swap = self.models.generate(&gb, &images, &self.plan)?;
        let fake = (*x_swap.value()).clone();

        // Discriminator update on the detached fakes.
        let r1_applied = self.weights.r1_due(step);
        let (adv_d, r1) = {
            let tape = Tape::new();
            let db = Binder::trainable(&tape, &self.models.d_params);
            let real = tape.constant(x_tgt);
            let (logits_real, r1) = if r1_applied {
                let (l, r) = r1_penalty(&self.models.discriminator, &db, real)?;
                (l, Some(r))
            } else {
                (self.models.discriminator.forward(&db, real)?, None)
            };
            let logits_fake = self.models.discriminator.forward(&db, tape.constant(fake))?;
            let adv_d = adv_d_loss(logits_real, logits_fake)?;
            let loss = match r1 {
                Some(r) => adv_d.add(r.mul_scalar(self.weights.r1)),
                None => adv_d,
            };
            if !loss.item().is_finite() {
                return Err(MfimError::Numeric(format!(
                    "non-finite discriminator loss at step {step}: adv_d = {}, r1 = {:?}",
                    adv_d.item(),
                    r1.map(|r| r.item())
                )));
            }
            let grads = db.gradients(&tape.backward(loss));
            self.opt_d.step(&mut self.models.d_params, &grads, lr)?;
            (adv_d.item(), r1.map(|r| r.item()))
        };

        // Encoder/generator update against the refreshed discriminator.
        let dfrozen = Binder::frozen(&g_tape, &self.models.d_params);
        let adv = adv_g_loss(self.models.discriminator.forward(&dfrozen, x_swap)?)?;
        let pack_swap = self.surrogates.attribute_pack(x_swap)?;
        let pack_src = self.surrogates.attribute_pack(src_v)?;
        let pack_tgt = self.surrogates.attribute_pack(tgt_v)?;
        let id = id_loss(pack_swap.id, pack_src.id)?;
        let recon = recon_loss(x_swap, tgt_v, self.surrogates.perceptual.as_ref())?;
        let params = param_losses(&pack_swap, &pack_src, &pack_tgt)?;
        let lm = if self.weights.landmark > 0.0 {
            let lm_gt = self
                .surrogates
                .face
                .landmarks(pack_src.shape, pack_tgt.pose, pack_tgt.expression)?;
            let subset = to_zero_based(&LANDMARK_SUBSET_ONE_BASED, lm_gt.shape()[1])?;
            landmark_loss(pack_swap.landmarks, lm_gt, &subset)?
        } else {
            g_tape.scalar(0.0)
        };
        let w = &self.weights;
        let weighted: [(f64, Var<'_>); 7] = [
            (w.id, id),
            (w.recon, recon.total),
            (w.adv, adv),
            (w.shape, params.shape),
            (w.pose, params.pose),
            (w.expression, params.expression),
            (w.landmark, lm),
        ];
        let mut g_loss = g_tape.scalar(0.0);
        for (wt, term) in weighted {
            g_loss = g_loss.add(term.mul_scalar(wt));
        }
        let self_recon_l1 = if self_idx.is_empty() {
            None
        } else {
            let a = x_swap.value().select(Axis(0), &self_idx);
            let b = tgt_v.value().select(Axis(0), &self_idx);
            let t = Tape::new();
            Some(l1_loss(t.constant(a), t.constant(b))?.item())
        };
        let terms = LossTerms {
            id: id.item(),
            recon: recon.total.item(),
            adv: adv.item(),
            r1,
            shape: params.shape.item(),
            pose: params.pose.item(),
            expression: params.expression.item(),
            landmark: lm.item(),
            adv_d,
        };
        let record = StepRecord {
            lr,
            r1_applied,
            self_recon_l1,
            report: total_loss(&terms, &self.weights, step),
        };
        finite_or_abort(&record)?;
        let grads = gb.gradients(&g_tape.backward(g_loss));
        self.opt_g.step(&mut self.models.g_params, &grads, lr)?;
        self.step += 1;
        Ok(record)
    }

    /// Pixel L1 when every dataset image is swapped onto itself.
    pub fn dataset_self_recon_l1(&self) -> Result<f64> {
        let images = BTreeMap::from([
            (Role::Source, self.dataset.clone()),
            (Role::Target, self.dataset.clone()),
        ]);
        let out = self.models.generate_arrays(&images, &self.plan)?;
        Ok((&out - &self.dataset).mapv(f64::abs).mean().unwrap_or(0.0))
    }

    /// Runs until `until` steps have completed, writing one JSON line per step.
    pub fn run(&mut self, until: u64, log: &mut dyn Write) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        while self.step < until {
            let r = self.train_step()?;
            serde_json::to_writer(&mut *log, &r)?;
            log.write_all(b"\n")?;
            out.push(r);
        }
        Ok(out)
    }

    /// Parameters, optimiser moments, step counter and RNG state.
    pub fn checkpoint(&self, configs: serde_json::Value) -> Result<Checkpoint> {
        let mut tensors = BTreeMap::new();
        let mut put = |prefix: &str, set: &ParamSet| {
            for (k, v) in set.iter() {
                tensors.insert(format!("{prefix}/{k}"), v.clone());
            }
        };
        put("g", &self.models.g_params);
        put("d", &self.models.d_params);
        put("opt_g.m", &self.opt_g.m);
        put("opt_g.v", &self.opt_g.v);
        put("opt_d.m", &self.opt_d.m);
        put("opt_d.v", &self.opt_d.v);
        Ok(Checkpoint {
            meta: serde_json::json!({
                "step": self.step,
                "opt_g_t": self.opt_g.t,
                "opt_d_t": self.opt_d.t,
                "rng": serde_json::to_value(&self.rng)?,
                "configs": configs,
            }),
            tensors,
        })
    }

    /// Restores everything [`Trainer::checkpoint`] saved.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let field = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| MfimError::Checkpoint(format!("missing `{k}` in checkpoint metadata")))
        };
        let as_u64 = |k: &str| -> Result<u64> {
            field(k)?
                .as_u64()
                .ok_or_else(|| MfimError::Checkpoint(format!("`{k}` is not an integer")))
        };
        self.step = as_u64("step")?;
        self.opt_g.t = as_u64("opt_g_t")?;
        self.opt_d.t = as_u64("opt_d_t")?;
        self.rng = serde_json::from_value(field("rng")?)?;
        let take = |prefix: &str| tensors_with_prefix(ck, prefix);
        let g = take("g");
        let d = take("d");
        check_same_layout("generator/encoder", &self.models.g_params, &g)?;
        check_same_layout("discriminator", &self.models.d_params, &d)?;
        self.models.g_params = g;
        self.models.d_params = d;
        self.opt_g.m = take("opt_g.m");
        self.opt_g.v = take("opt_g.v");
        self.opt_d.m = take("opt_d.m");
        self.opt_d.v = take("opt_d.v");
        Ok(())
    }
}

/// Tensors stored under `prefix/`, with the prefix stripped.
pub fn tensors_with_prefix(ck: &Checkpoint, prefix: &str) -> ParamSet {
    let p = format!("{prefix}/");
    let mut s = ParamSet::new();
    for (k, v) in &ck.tensors {
        if let Some(name) = k.strip_prefix(&p) {
            s.insert(name.to_string(), v.clone());
        }
    }
    s
}

/// Fails unless both sets have the same names and shapes.
pub fn check_same_layout(what: &str, want: &ParamSet, got: &ParamSet) -> Result<()> {
    let shapes = |s: &ParamSet| -> Vec<(String, Vec<usize>)> {
        s.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect()
    };
    if shapes(want) == shapes(got) {
        Ok(())
    } else {
        Err(MfimError::Checkpoint(format!(
            "{what} parameters in the checkpoint do not match the configured architecture"
        )))
    }
}
