use mfim_autograd::{Binder, ParamSet, Var};

use super::layout::GeneratorConfig;
use crate::error::{expect_shape, Result};
use crate::nn::{add_channel_bias, init_conv, init_linear, linear, ModelRng};

const PREFIX: &str = "disc";
const SLOPE: f64 = 0.2;

/// Residual-free StyleGAN-like discriminator: 1x1 fromRGB, one 3x3 conv plus
/// 2x average pooling per octave down to 4x4, then a 3x3 conv and two dense
/// layers.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub cfg: GeneratorConfig,
}

/// Pre-activation recorded at each leaky ReLU, needed to rebuild the input
/// gradient as a differentiable expression.
struct Trace<'t> {
    from_rgb: Var<'t>,
    blocks: Vec<Var<'t>>,
    last_conv: Var<'t>,
    fc1: Var<'t>,
}

fn lrelu_mask(z: Var<'_>) -> Var<'_> {
    z.tape().constant(z.value().mapv(|v| if v > 0.0 { 1.0 } else { SLOPE }))
}

impl Discriminator {
    pub fn new(cfg: GeneratorConfig) -> Self {
        Self { cfg }
    }

    fn block_resolutions(&self) -> Vec<usize> {
        let mut v = Vec::new();
        let mut r = self.cfg.resolution;
        while r > 4 {
            v.push(r);
            r /= 2;
        }
        v
    }

    pub fn init_params(&self, rng: &mut ModelRng) -> ParamSet {
        let mut p = ParamSet::new();
        let c = |r| self.cfg.channels_at(r);
        let r = self.cfg.resolution;
        init_conv(
            &mut p,
            rng,
            &format!("{PREFIX}.from_rgb"),
            self.cfg.rgb_channels,
            c(r),
            1,
        );
        for res in self.block_resolutions() {
            init_conv(&mut p, rng, &format!("{PREFIX}.b{res}"), c(res), c(res / 2), 3);
        }
        let c4 = c(4);
        init_conv(&mut p, rng, &format!("{PREFIX}.final"), c4, c4, 3);
        init_linear(&mut p, rng, &format!("{PREFIX}.fc1"), c4 * 16, c4, 2f64.sqrt());
        init_linear(&mut p, rng, &format!("{PREFIX}.fc2"), c4, 1, 1.0);
        p
    }

    fn check_input(&self, x: Var<'_>) -> Result<()> {
        let s = x.shape();
        let r = self.cfg.resolution;
        let n = s.first().copied().unwrap_or(0);
        expect_shape("discriminator input", &s, &[n, self.cfg.rgb_channels, r, r])
    }

    fn conv_pre<'t>(b: &Binder<'t, '_>, name: &str, x: Var<'t>) -> Var<'t> {
        let w = b.var(&format!("{name}.weight"));
        let k = w.shape()[2];
        add_channel_bias(x.conv2d(w, 1, k / 2), b.var(&format!("{name}.bias")))
    }

    fn run<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<(Var<'t>, Trace<'t>)> {
        self.check_input(x)?;
        let n = x.shape()[0];
        let from_rgb = Self::conv_pre(b, &format!("{PREFIX}.from_rgb"), x);
        let mut h = from_rgb.leaky_relu(SLOPE);
        let mut blocks = Vec::new();
        for res in self.block_resolutions() {
            let z = Self::conv_pre(b, &format!("{PREFIX}.b{res}"), h);
            blocks.push(z);
            h = z.leaky_relu(SLOPE).avg_pool2();
        }
        let last_conv = Self::conv_pre(b, &format!("{PREFIX}.final"), h);
        let flat = last_conv.leaky_relu(SLOPE).reshape(&[n, last_conv.len() / n]);
        let fc1 = linear(b, &format!("{PREFIX}.fc1"), flat);
        let out = linear(b, &format!("{PREFIX}.fc2"), fc1.leaky_relu(SLOPE));
        Ok((
            out.reshape(&[n]),
            Trace {
                from_rgb,
                blocks,
                last_conv,
                fc1,
            },
        ))
    }

    /// One logit per image, shape `[N]`.
    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.run(b, x)?.0)
    }

    /// Logits together with `d(sum logits)/dx`, the latter built from ordinary
    /// tape ops so it can itself be differentiated with respect to the
    /// discriminator parameters. Leaky ReLU has zero curvature almost
    /// everywhere, so freezing its slope masks keeps the result exact.
    pub fn forward_with_input_grad<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (logits, tr) = self.run(b, x)?;
        let n = logits.len();
        let tape = b.tape();
        let wt = |name: &str| b.var(&format!("{PREFIX}.{name}.weight"));
        let ones = tape.constant(mfim_autograd::Array::ones(ndarray::IxDyn(&[n, 1])));
        let mut g = ones.matmul(wt("fc2").t()).mul(lrelu_mask(tr.fc1));
        g = g.matmul(wt("fc1").t()).reshape(&tr.last_conv.shape());
        g = g.mul(lrelu_mask(tr.last_conv));
        g = g.conv2d(wt("final").flip_transpose_kernel(), 1, 1);
        for (res, z) in self.block_resolutions().into_iter().zip(&tr.blocks).rev() {
            g = g.upsample_nearest2().mul_scalar(0.25).mul(lrelu_mask(*z));
            g = g.conv2d(wt(&format!("b{res}")).flip_transpose_kernel(), 1, 1);
        }
        g = g.mul(lrelu_mask(tr.from_rgb));
        g = g.conv2d(wt("from_rgb").flip_transpose_kernel(), 1, 0);
        Ok((logits, g))
    }
}
