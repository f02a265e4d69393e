//! End-to-end operations behind the command-line tool: training runs, face
//! swapping, identity mixing, evaluation and mask export.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mfim_autograd::Array;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{load_images, read_eval_manifest, DatasetManifest, EvalRow};
use crate::error::{MfimError, Result};
use crate::metrics::{aggregate, fid, pair_metrics, relative_metrics, MetricReport, RelativeRecord};
use crate::model::Models;
use crate::roi::{blend, build_mask};
use crate::routing::{plan_face_swap, plan_id_mix, Role};
use crate::surrogates::{AdapterRegistry, Surrogates};
use crate::trainer::{check_same_layout, tensors_with_prefix, StepRecord, Trainer};

/// Rows generated per forward pass during evaluation.
const EVAL_CHUNK: usize = 8;

/// A configured model ready for inference.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub models: Models,
    pub surrogates: Surrogates,
}

impl Pipeline {
    /// Freshly initialised weights from the run seed.
    pub fn new(cfg: RunConfig, registry: &AdapterRegistry) -> Result<Self> {
        cfg.validate()?;
        let models = Models::new(&cfg.generator, &cfg.encoder, cfg.seed)?;
        let surrogates = Surrogates::from_config(&cfg.surrogates, cfg.generator.resolution, registry)?;
        Ok(Self {
            cfg,
            models,
            surrogates,
        })
    }

    /// Configuration and weights from a training checkpoint.
    pub fn from_checkpoint(path: &Path, registry: &AdapterRegistry) -> Result<Self> {
        if !path.exists() {
            return Err(MfimError::Checkpoint(format!(
                "checkpoint {} does not exist",
                path.display()
            )));
        }
        let ck = Checkpoint::load(path)?;
        let cfg: RunConfig = serde_json::from_value(
            ck.meta
                .get("configs")
                .cloned()
                .ok_or_else(|| MfimError::Checkpoint("checkpoint carries no run configuration".into()))?,
        )?;
        let mut p = Self::new(cfg, registry)?;
        let g = tensors_with_prefix(&ck, "g");
        let d = tensors_with_prefix(&ck, "d");
        check_same_layout("generator/encoder", &p.models.g_params, &g)?;
        check_same_layout("discriminator", &p.models.d_params, &d)?;
        p.models.g_params = g;
        p.models.d_params = d;
        Ok(p)
    }

    /// Weights and configuration only, loadable by [`Pipeline::from_checkpoint`].
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = BTreeMap::new();
        for (prefix, set) in [("g", &self.models.g_params), ("d", &self.models.d_params)] {
            for (k, v) in set.iter() {
                tensors.insert(format!("{prefix}/{k}"), v.clone());
            }
        }
        Ok(Checkpoint {
            meta: serde_json::json!({ "configs": serde_json::to_value(&self.cfg)? }),
            tensors,
        })
    }

    pub fn resolution(&self) -> usize {
        self.cfg.generator.resolution
    }

    /// The configured ROI mask at the generator resolution.
    pub fn mask(&self) -> Result<Array2<f64>> {
        build_mask(&self.cfg.roi.for_canvas(self.resolution()))
    }

    fn finish(&self, generated: Array, target: &Array, roi: bool) -> Result<Array> {
        if roi {
            blend(&generated, target, &self.mask()?)
        } else {
            Ok(generated)
        }
    }

    /// Source identity on target attributes; batches are `[N, 3, R, R]`.
    pub fn swap(&self, source: &Array, target: &Array, roi: bool) -> Result<Array> {
        let plan = plan_face_swap(&self.cfg.generator)?;
        let images = BTreeMap::from([(Role::Source, source.clone()), (Role::Target, target.clone())]);
        let out = self.models.generate_arrays(&images, &plan)?;
        self.finish(out, target, roi)
    }

    /// Coarse identity codes from `global`, fine ones from `local`.
    pub fn idmix(&self, global: &Array, local: &Array, target: &Array, roi: bool) -> Result<Array> {
        let plan = plan_id_mix(&self.cfg.generator)?;
        let images = BTreeMap::from([
            (Role::GlobalSource, global.clone()),
            (Role::LocalSource, local.clone()),
            (Role::Target, target.clone()),
        ]);
        let out = self.models.generate_arrays(&images, &plan)?;
        self.finish(out, target, roi)
    }

    /// Face-swap metrics for every row, FID of the swaps against the targets,
    /// and relative metrics for rows that name global and local sources.
    pub fn evaluate(&self, rows: &[EvalRow]) -> Result<EvaluationReport> {
        let r = self.resolution();
        let mut records = Vec::new();
        let mut relative = Vec::new();
        let mut real_feats = Vec::new();
        let mut gen_feats = Vec::new();
        for chunk in rows.chunks(EVAL_CHUNK) {
            let paths = |f: fn(&EvalRow) -> Option<&PathBuf>| -> Option<Vec<PathBuf>> {
                chunk.iter().map(|row| f(row).cloned()).collect()
            };
            let src = load_images(&paths(|r| Some(&r.source_path)).unwrap_or_default(), r)?;
            let tgt = load_images(&paths(|r| Some(&r.target_path)).unwrap_or_default(), r)?;
            let swapped = self.swap(&src, &tgt, false)?;
            records.extend(pair_metrics(&swapped, &src, &tgt, &self.surrogates)?);
            real_feats.push(self.surrogates.fid_features(&tgt)?);
            gen_feats.push(self.surrogates.fid_features(&swapped)?);
            if let (Some(g), Some(l)) = (paths(|r| r.global_path.as_ref()), paths(|r| r.local_path.as_ref())) {
                let (g, l) = (load_images(&g, r)?, load_images(&l, r)?);
                let mixed = self.idmix(&g, &l, &tgt, false)?;
                relative.extend(relative_metrics(&mixed, &g, &l, &self.surrogates)?);
            }
        }
        let mut report = aggregate(&records);
        if rows.len() >= 2 {
            let cat = |parts: &[Array]| {
                let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
                ndarray::concatenate(Axis(0), &views).map_err(|e| MfimError::Shape(e.to_string()))
            };
            report.fid = Some(fid(&cat(&real_feats)?, &cat(&gen_feats)?)?);
        } else {
            log::warn!("FID needs at least two rows; skipped");
        }
        Ok(EvaluationReport {
            face_swap: report,
            id_mixing: (!relative.is_empty()).then(|| RelativeReport::mean(&relative)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeReport {
    pub r_id_gb: f64,
    pub r_id_lc: f64,
    pub r_shape_gb: f64,
    pub r_shape_lc: f64,
    pub count: usize,
}

impl RelativeReport {
    pub fn mean(records: &[RelativeRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let m = |f: fn(&RelativeRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        Self {
            r_id_gb: m(|r| r.r_id_gb),
            r_id_lc: m(|r| r.r_id_lc),
            r_shape_gb: m(|r| r.r_shape_gb),
            r_shape_lc: m(|r| r.r_shape_lc),
            count: records.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub face_swap: MetricReport,
    pub id_mixing: Option<RelativeReport>,
}

impl EvaluationReport {
    /// Column order: Identity, Shape, Expression, Pose, Pose-HN, FID, then
    /// the relative metrics when present.
    pub fn to_csv(&self) -> String {
        let f = &self.face_swap;
        let mut head = vec!["Identity", "Shape", "Expression", "Pose", "Pose-HN"];
        let mut row: Vec<String> = [f.identity, f.shape, f.expression, f.pose, f.pose_hn]
            .iter()
            .map(|v| v.to_string())
            .collect();
        if let Some(v) = f.fid {
            head.push("FID");
            row.push(v.to_string());
        }
        if let Some(m) = &self.id_mixing {
            head.extend(["R-ID(gb)", "R-ID(lc)", "R-Shape(gb)", "R-Shape(lc)"]);
            row.extend(
                [m.r_id_gb, m.r_id_lc, m.r_shape_gb, m.r_shape_lc]
                    .iter()
                    .map(|v| v.to_string()),
            );
        }
        format!("{}\n{}\n", head.join(","), row.join(","))
    }

    /// Writes `metrics.json` and `metrics.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("metrics.json");
        let csv = dir.join("metrics.csv");
        std::fs::write(&json, serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::write(&csv, self.to_csv())?;
        Ok((json, csv))
    }
}

pub fn evaluate_manifest(p: &Pipeline, manifest: &Path) -> Result<EvaluationReport> {
    p.evaluate(&read_eval_manifest(manifest)?)
}

/// Paths written by a training run.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub records: Vec<StepRecord>,
}

/// Trains from the configured dataset, optionally resuming, logging JSON lines
/// to `output_dir/train.jsonl` and checkpointing every `checkpoint_period`
/// steps and at the end.
pub fn run_training(cfg: &RunConfig, resume: Option<&Path>, registry: &AdapterRegistry) -> Result<TrainOutputs> {
    cfg.validate()?;
    let manifest = cfg
        .data
        .dataset
        .as_ref()
        .ok_or_else(|| MfimError::Config("data.dataset must name a training manifest".into()))?;
    let dataset = DatasetManifest::read(manifest)?.load(cfg.generator.resolution)?;
    let p = Pipeline::new(cfg.clone(), registry)?;
    let mut trainer = Trainer::new(p.models, p.surrogates, cfg.loss.clone(), cfg.train_config(), dataset)?;
    if let Some(path) = resume {
        trainer.restore(&Checkpoint::load(path)?)?;
    }
    let out = &cfg.data.output_dir;
    std::fs::create_dir_all(out)?;
    let log_path = out.join("train.jsonl");
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)?;
    let mut log = BufWriter::new(file);
    let configs = serde_json::to_value(cfg)?;
    let mut checkpoints = Vec::new();
    let mut records = Vec::new();
    let period = cfg.train.checkpoint_period.max(1);
    while trainer.step < cfg.train.total_steps {
        let next = ((trainer.step / period) + 1) * period;
        let until = next.min(cfg.train.total_steps);
        records.extend(trainer.run(until, &mut log)?);
        log.flush()?;
        let path = out.join(format!("checkpoint_{:08}.mfim", trainer.step));
        trainer.checkpoint(configs.clone())?.save(&path)?;
        log::info!("step {}: wrote {}", trainer.step, path.display());
        checkpoints.push(path);
    }
    Ok(TrainOutputs {
        log: log_path,
        checkpoints,
        records,
    })
}
