//! Parameter initialisation and the handful of layer shapes every network
//! here is built from.

use mfim_autograd::{Array, Binder, ParamSet, Var};
use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type ModelRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ModelRng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_array(rng: &mut ModelRng, shape: &[usize], std: f64) -> Array {
    Array::from_shape_simple_fn(IxDyn(shape), || {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

/// He-normal conv kernel plus zero bias under `{prefix}.weight` / `{prefix}.bias`.
pub fn init_conv(params: &mut ParamSet, rng: &mut ModelRng, prefix: &str, cin: usize, cout: usize, k: usize) {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    params.insert(format!("{prefix}.weight"), normal_array(rng, &[cout, cin, k, k], std));
    params.insert(format!("{prefix}.bias"), Array::zeros(IxDyn(&[cout])));
}

pub fn init_linear(params: &mut ParamSet, rng: &mut ModelRng, prefix: &str, din: usize, dout: usize, gain: f64) {
    let std = gain / (din as f64).sqrt();
    params.insert(format!("{prefix}.weight"), normal_array(rng, &[din, dout], std));
    params.insert(format!("{prefix}.bias"), Array::zeros(IxDyn(&[dout])));
}

/// Adds a `[C]` bias to a `[N, C, H, W]` var.
pub fn add_channel_bias<'t>(x: Var<'t>, bias: Var<'t>) -> Var<'t> {
    let c = bias.len();
    x.add(bias.reshape(&[1, c, 1, 1]))
}

pub fn conv<'t>(b: &Binder<'t, '_>, prefix: &str, x: Var<'t>, stride: usize) -> Var<'t> {
    let w = b.var(&format!("{prefix}.weight"));
    let k = w.shape()[2];
    let y = x.conv2d(w, stride, k / 2);
    add_channel_bias(y, b.var(&format!("{prefix}.bias")))
}

pub fn linear<'t>(b: &Binder<'t, '_>, prefix: &str, x: Var<'t>) -> Var<'t> {
    let w = b.var(&format!("{prefix}.weight"));
    let bias = b.var(&format!("{prefix}.bias"));
    let m = bias.len();
    x.matmul(w).add(bias.reshape(&[1, m]))
}

/// Per-sample, per-channel normalisation over the spatial axes, no affine.
pub fn instance_norm(x: Var<'_>, eps: f64) -> Var<'_> {
    let mean = x.mean_axes(&[2, 3], true);
    let centered = x.sub(mean);
    let var = centered.square().mean_axes(&[2, 3], true);
    centered.div(var.add_scalar(eps).sqrt())
}

/// Flattens all axes after the first.
pub fn flatten(x: Var<'_>) -> Var<'_> {
    let s = x.shape();
    let rest: usize = s[1..].iter().product();
    x.reshape(&[s[0], rest])
}
