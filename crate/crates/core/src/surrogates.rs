//! Stand-ins for the pretrained perception networks: identity embedder, 3DMM
//! regressor with a landmark head, pose-feature extractor and a perceptual
//! feature extractor.
//!
//! The built-in versions are small convnets with weights drawn from a seed and
//! never updated. Each role can instead be resolved to an external adapter
//! through [`AdapterRegistry`] using a config value of the form
//! `external:<path>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mfim_autograd::{concat, Array, Binder, ParamSet, Tape, Var};
use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::error::{expect_shape, MfimError, Result};
use crate::nn::{conv, init_conv, init_linear, linear, normal_array, seeded_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub seed: u64,
    pub width: usize,
    pub id_dim: usize,
    pub shape_dim: usize,
    pub pose_dim: usize,
    pub expression_dim: usize,
    pub landmarks: usize,
    pub pose_feature_dim: usize,
    pub id_embedder: String,
    pub face_model: String,
    pub pose_estimator: String,
    pub perceptual: String,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        let fixed = || "fixed_random".to_string();
        Self {
            seed: 1234,
            width: 16,
            id_dim: 64,
            shape_dim: 20,
            pose_dim: 6,
            expression_dim: 10,
            landmarks: 68,
            pose_feature_dim: 32,
            id_embedder: fixed(),
            face_model: fixed(),
            pose_estimator: fixed(),
            perceptual: fixed(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SurrogateKind {
    FixedRandom,
    External(PathBuf),
}

impl SurrogateKind {
    pub fn parse(role: &str, value: &str) -> Result<Self> {
        if value == "fixed_random" {
            Ok(Self::FixedRandom)
        } else if let Some(p) = value.strip_prefix("external:") {
            if p.is_empty() {
                return Err(MfimError::Config(format!(
                    "surrogates.{role}: external adapter needs a path"
                )));
            }
            Ok(Self::External(PathBuf::from(p)))
        } else {
            Err(MfimError::Config(format!(
                "surrogates.{role} = `{value}`: expected `fixed_random` or `external:<path>`"
            )))
        }
    }
}

impl SurrogateConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (role, value) in self.roles() {
            if let Err(e) = SurrogateKind::parse(role, value) {
                v.push(e.to_string());
            }
        }
        let dims = [
            self.width,
            self.id_dim,
            self.shape_dim,
            self.pose_dim,
            self.expression_dim,
            self.landmarks,
            self.pose_feature_dim,
        ];
        if dims.contains(&0) {
            v.push("surrogate dimensions must be positive".into());
        }
        v
    }

    fn roles(&self) -> [(&'static str, &str); 4] {
        [
            ("id_embedder", self.id_embedder.as_str()),
            ("face_model", self.face_model.as_str()),
            ("pose_estimator", self.pose_estimator.as_str()),
            ("perceptual", self.perceptual.as_str()),
        ]
    }

    fn param_dim(&self) -> usize {
        self.shape_dim + self.pose_dim + self.expression_dim
    }
}

/// Surrogate outputs for a batch: identity `[N, D]`, shape/pose/expression
/// `[N, *]`, landmarks `[N, K, 2]` in normalised image coordinates.
#[derive(Clone, Debug)]
pub struct AttributePack<T> {
    pub id: T,
    pub shape: T,
    pub pose: T,
    pub expression: T,
    pub landmarks: T,
}

impl AttributePack<Var<'_>> {
    pub fn values(&self) -> AttributePack<Array> {
        AttributePack {
            id: (*self.id.value()).clone(),
            shape: (*self.shape.value()).clone(),
            pose: (*self.pose.value()).clone(),
            expression: (*self.expression.value()).clone(),
            landmarks: (*self.landmarks.value()).clone(),
        }
    }
}

/// 3DMM parameters plus landmarks.
pub struct FaceParams<'t> {
    pub shape: Var<'t>,
    pub pose: Var<'t>,
    pub expression: Var<'t>,
    pub landmarks: Var<'t>,
}

pub trait IdEmbedder {
    /// Unit-norm embedding per image.
    fn embed<'t>(&self, x: Var<'t>) -> Result<Var<'t>>;
    fn checksum(&self) -> u64;
}

pub trait FaceModel {
    fn estimate<'t>(&self, x: Var<'t>) -> Result<FaceParams<'t>>;
    /// Landmarks for arbitrary (possibly mixed) parameters.
    fn landmarks<'t>(&self, shape: Var<'t>, pose: Var<'t>, expression: Var<'t>) -> Result<Var<'t>>;
    fn checksum(&self) -> u64;
}

pub trait PoseEstimator {
    fn pose_features<'t>(&self, x: Var<'t>) -> Result<Var<'t>>;
    fn checksum(&self) -> u64;
}

pub trait PerceptualNet {
    /// Activations of each feature layer, shallow to deep.
    fn features<'t>(&self, x: Var<'t>) -> Result<Vec<Var<'t>>>;
    fn checksum(&self) -> u64;
}

/// Frozen convnet trunk: stride-2 3x3 convs with tanh down to 2x2, then
/// global average pooling.
struct Trunk {
    prefix: &'static str,
    input_size: usize,
    stages: usize,
}

impl Trunk {
    fn new(prefix: &'static str, input_size: usize) -> Self {
        let stages = (input_size.trailing_zeros() as usize).saturating_sub(1).max(1);
        Self {
            prefix,
            input_size,
            stages,
        }
    }

    fn init(&self, p: &mut ParamSet, rng: &mut crate::nn::ModelRng, width: usize) {
        for s in 0..self.stages {
            let cin = if s == 0 { 3 } else { width };
            init_conv(p, rng, &format!("{}.conv{s}", self.prefix), cin, width, 3);
        }
    }

    fn run<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        check_image(x, self.input_size)?;
        let mut h = x;
        for s in 0..self.stages {
            h = conv(b, &format!("{}.conv{s}", self.prefix), h, 2).tanh();
        }
        Ok(h.mean_axes(&[2, 3], false))
    }
}

fn check_image(x: Var<'_>, size: usize) -> Result<()> {
    let s = x.shape();
    let n = s.first().copied().unwrap_or(0);
    expect_shape("surrogate input", &s, &[n, 3, size, size])
}

pub struct RandomIdEmbedder {
    trunk: Trunk,
    params: ParamSet,
}

impl RandomIdEmbedder {
    pub fn new(cfg: &SurrogateConfig, input_size: usize) -> Self {
        let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
        let trunk = Trunk::new("id", input_size);
        let mut params = ParamSet::new();
        trunk.init(&mut params, &mut rng, cfg.width);
        init_linear(&mut params, &mut rng, "id.head", cfg.width, cfg.id_dim, 1.0);
        Self { trunk, params }
    }
}

/// `v / ||v||` per row.
pub fn l2_normalize(v: Var<'_>) -> Var<'_> {
    let n = v.shape()[0];
    let norm = v.square().sum_axes(&[1], false).add_scalar(1e-24).sqrt();
    v.div(norm.reshape(&[n, 1]))
}

impl IdEmbedder for RandomIdEmbedder {
    fn embed<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let b = Binder::frozen(x.tape(), &self.params);
        let f = self.trunk.run(&b, x)?;
        Ok(l2_normalize(linear(&b, "id.head", f)))
    }

    fn checksum(&self) -> u64 {
        self.params.checksum()
    }
}

pub struct RandomFaceModel {
    trunk: Trunk,
    params: ParamSet,
    dims: [usize; 3],
    landmarks: usize,
}

/// Largest L1 norm of any landmark-head column; with parameters in [-1, 1]
/// every landmark stays inside `[0.05, 0.95]`.
pub const LANDMARK_SPREAD: f64 = 0.45;

impl RandomFaceModel {
    pub fn new(cfg: &SurrogateConfig, input_size: usize) -> Self {
        let mut rng = seeded_rng(cfg.seed.wrapping_add(2));
        let trunk = Trunk::new("face", input_size);
        let mut params = ParamSet::new();
        trunk.init(&mut params, &mut rng, cfg.width);
        init_linear(&mut params, &mut rng, "face.head", cfg.width, cfg.param_dim(), 1.0);
        let mut h = normal_array(&mut rng, &[cfg.param_dim(), 2 * cfg.landmarks], 1.0);
        for mut col in h.axis_iter_mut(Axis(1)) {
            let l1: f64 = col.iter().map(|v| v.abs()).sum();
            col.mapv_inplace(|v| v * LANDMARK_SPREAD / l1);
        }
        params.insert("face.landmark_head", h);
        Self {
            trunk,
            params,
            dims: [cfg.shape_dim, cfg.pose_dim, cfg.expression_dim],
            landmarks: cfg.landmarks,
        }
    }

    /// The fixed `[P, 2K]` matrix of the affine landmark head.
    pub fn landmark_matrix(&self) -> &Array {
        self.params.get("face.landmark_head").expect("initialised in new")
    }
}

impl FaceModel for RandomFaceModel {
    fn estimate<'t>(&self, x: Var<'t>) -> Result<FaceParams<'t>> {
        let b = Binder::frozen(x.tape(), &self.params);
        let f = self.trunk.run(&b, x)?;
        let p = linear(&b, "face.head", f).tanh();
        let [ds, dp, de] = self.dims;
        let shape = p.narrow(1, 0, ds);
        let pose = p.narrow(1, ds, dp);
        let expression = p.narrow(1, ds + dp, de);
        let landmarks = self.landmarks(shape, pose, expression)?;
        Ok(FaceParams {
            shape,
            pose,
            expression,
            landmarks,
        })
    }

    fn landmarks<'t>(&self, shape: Var<'t>, pose: Var<'t>, expression: Var<'t>) -> Result<Var<'t>> {
        let n = shape.shape().first().copied().unwrap_or(0);
        let [ds, dp, de] = self.dims;
        expect_shape("shape parameters", &shape.shape(), &[n, ds])?;
        expect_shape("pose parameters", &pose.shape(), &[n, dp])?;
        expect_shape("expression parameters", &expression.shape(), &[n, de])?;
        let tape = shape.tape();
        let p = concat(tape, &[shape, pose, expression], 1);
        let h = tape.constant(self.landmark_matrix().clone());
        Ok(p.matmul(h).add_scalar(0.5).reshape(&[n, self.landmarks, 2]))
    }

    fn checksum(&self) -> u64 {
        self.params.checksum()
    }
}

pub struct RandomPoseEstimator {
    trunk: Trunk,
    params: ParamSet,
}

impl RandomPoseEstimator {
    pub fn new(cfg: &SurrogateConfig, input_size: usize) -> Self {
        let mut rng = seeded_rng(cfg.seed.wrapping_add(3));
        let trunk = Trunk::new("pose", input_size);
        let mut params = ParamSet::new();
        trunk.init(&mut params, &mut rng, cfg.width);
        init_linear(&mut params, &mut rng, "pose.head", cfg.width, cfg.pose_feature_dim, 1.0);
        Self { trunk, params }
    }
}

impl PoseEstimator for RandomPoseEstimator {
    fn pose_features<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let b = Binder::frozen(x.tape(), &self.params);
        let f = self.trunk.run(&b, x)?;
        Ok(linear(&b, "pose.head", f))
    }

    fn checksum(&self) -> u64 {
        self.params.checksum()
    }
}

pub const PERCEPTUAL_LAYERS: usize = 4;

pub struct RandomPerceptualNet {
    input_size: usize,
    params: ParamSet,
}

impl RandomPerceptualNet {
    pub fn new(cfg: &SurrogateConfig, input_size: usize) -> Self {
        let mut rng = seeded_rng(cfg.seed.wrapping_add(4));
        let mut params = ParamSet::new();
        let w = cfg.width;
        let chans = [3, w / 2 + 1, w, 2 * w, 2 * w];
        for l in 0..PERCEPTUAL_LAYERS {
            init_conv(
                &mut params,
                &mut rng,
                &format!("perc.conv{l}"),
                chans[l],
                chans[l + 1],
                3,
            );
        }
        Self { input_size, params }
    }
}

impl PerceptualNet for RandomPerceptualNet {
    fn features<'t>(&self, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        check_image(x, self.input_size)?;
        let b = Binder::frozen(x.tape(), &self.params);
        let mut h = x;
        let mut out = Vec::with_capacity(PERCEPTUAL_LAYERS);
        for l in 0..PERCEPTUAL_LAYERS {
            let stride = if l == 0 { 1 } else { 2 };
            h = conv(&b, &format!("perc.conv{l}"), h, stride).tanh();
            out.push(h);
        }
        Ok(out)
    }

    fn checksum(&self) -> u64 {
        self.params.checksum()
    }
}

type Factory<T> = Box<dyn Fn(&Path, &SurrogateConfig, usize) -> Result<Box<T>>>;

/// External adapters, one optional factory per role. A role configured as
/// `external:<path>` is built by calling its factory with that path.
#[derive(Default)]
pub struct AdapterRegistry {
    pub id_embedder: Option<Factory<dyn IdEmbedder>>,
    pub face_model: Option<Factory<dyn FaceModel>>,
    pub pose_estimator: Option<Factory<dyn PoseEstimator>>,
    pub perceptual: Option<Factory<dyn PerceptualNet>>,
}

fn resolve<T: ?Sized>(
    role: &str,
    value: &str,
    factory: &Option<Factory<T>>,
    cfg: &SurrogateConfig,
    input_size: usize,
    builtin: impl FnOnce() -> Box<T>,
) -> Result<Box<T>> {
    match SurrogateKind::parse(role, value)? {
        SurrogateKind::FixedRandom => Ok(builtin()),
        SurrogateKind::External(path) => match factory {
            Some(f) => f(&path, cfg, input_size),
            None => Err(MfimError::Config(format!(
                "surrogates.{role}: no external adapter is registered for `{}`",
                path.display()
            ))),
        },
    }
}

pub struct Surrogates {
    pub id: Box<dyn IdEmbedder>,
    pub face: Box<dyn FaceModel>,
    pub pose: Box<dyn PoseEstimator>,
    pub perceptual: Box<dyn PerceptualNet>,
}

impl Surrogates {
    /// All four built-in networks.
    pub fn fixed_random(cfg: &SurrogateConfig, input_size: usize) -> Self {
        Self {
            id: Box::new(RandomIdEmbedder::new(cfg, input_size)),
            face: Box::new(RandomFaceModel::new(cfg, input_size)),
            pose: Box::new(RandomPoseEstimator::new(cfg, input_size)),
            perceptual: Box::new(RandomPerceptualNet::new(cfg, input_size)),
        }
    }

    pub fn from_config(cfg: &SurrogateConfig, input_size: usize, registry: &AdapterRegistry) -> Result<Self> {
        Ok(Self {
            id: resolve(
                "id_embedder",
                &cfg.id_embedder,
                &registry.id_embedder,
                cfg,
                input_size,
                || Box::new(RandomIdEmbedder::new(cfg, input_size)),
            )?,
            face: resolve(
                "face_model",
                &cfg.face_model,
                &registry.face_model,
                cfg,
                input_size,
                || Box::new(RandomFaceModel::new(cfg, input_size)),
            )?,
            pose: resolve(
                "pose_estimator",
                &cfg.pose_estimator,
                &registry.pose_estimator,
                cfg,
                input_size,
                || Box::new(RandomPoseEstimator::new(cfg, input_size)),
            )?,
            perceptual: resolve(
                "perceptual",
                &cfg.perceptual,
                &registry.perceptual,
                cfg,
                input_size,
                || Box::new(RandomPerceptualNet::new(cfg, input_size)),
            )?,
        })
    }

    pub fn attribute_pack<'t>(&self, x: Var<'t>) -> Result<AttributePack<Var<'t>>> {
        let face = self.face.estimate(x)?;
        Ok(AttributePack {
            id: self.id.embed(x)?,
            shape: face.shape,
            pose: face.pose,
            expression: face.expression,
            landmarks: face.landmarks,
        })
    }

    pub fn attribute_pack_array(&self, x: &Array) -> Result<AttributePack<Array>> {
        let tape = Tape::new();
        Ok(self.attribute_pack(tape.constant(x.clone()))?.values())
    }

    pub fn pose_features_array(&self, x: &Array) -> Result<Array> {
        let tape = Tape::new();
        Ok((*self.pose.pose_features(tape.constant(x.clone()))?.value()).clone())
    }

    /// Global-average-pooled deepest perceptual layer, `[N, C]`.
    pub fn fid_features(&self, x: &Array) -> Result<Array> {
        let tape = Tape::new();
        let feats = self.perceptual.features(tape.constant(x.clone()))?;
        let last = feats.last().expect("at least one perceptual layer");
        Ok((*last.mean_axes(&[2, 3], false).value()).clone())
    }

    /// Combined fingerprint of every surrogate's weights.
    pub fn checksum(&self) -> BTreeMap<&'static str, u64> {
        BTreeMap::from([
            ("id_embedder", self.id.checksum()),
            ("face_model", self.face.checksum()),
            ("pose_estimator", self.pose.checksum()),
            ("perceptual", self.perceptual.checksum()),
        ])
    }
}

/// Convenience for tests and tools: an `[N, 3, S, S]` array of N(0, 0.5) noise.
pub fn random_images(seed: u64, n: usize, size: usize) -> Array {
    normal_array(&mut seeded_rng(seed), &[n, 3, size, size], 0.5)
}
