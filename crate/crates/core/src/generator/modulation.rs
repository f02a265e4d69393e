use mfim_autograd::Var;

use crate::error::{expect_shape, shape_err, Result};

/// Floor inside the demodulation square root.
pub const DEMOD_EPS: f64 = 1e-8;

/// Style-modulated convolution, "same" padding, stride 1.
///
/// `features [N, Cin, H, W]`, `weight [O, Cin, k, k]`, `style [N, Cin]`.
/// The kernel is scaled per input channel by the style and, when
/// `demodulate` is set, each output channel is rescaled by
/// `1 / sqrt(sum(w'^2) + eps)`. The scaling is applied to activations
/// instead of per-sample kernels, which is algebraically identical.
pub fn demodulated_conv<'t>(
    features: Var<'t>,
    weight: Var<'t>,
    style: Var<'t>,
    eps: f64,
    demodulate: bool,
) -> Result<Var<'t>> {
    let xs = features.shape();
    let ws = weight.shape();
    let ss = style.shape();
    if xs.len() != 4 || ws.len() != 4 || ss.len() != 2 {
        return Err(shape_err(format!(
            "demodulated_conv expects [N,C,H,W], [O,C,k,k], [N,C]; got {xs:?}, {ws:?}, {ss:?}"
        )));
    }
    let (n, cin) = (xs[0], xs[1]);
    expect_shape("style", &ss, &[n, cin])?;
    if ws[1] != cin {
        return Err(shape_err(format!(
            "kernel input channels {} do not match features {cin}",
            ws[1]
        )));
    }
    let (o, k) = (ws[0], ws[2]);
    let modulated = features.mul(style.reshape(&[n, cin, 1, 1]));
    let y = modulated.conv2d(weight, 1, k / 2);
    if !demodulate {
        return Ok(y);
    }
    let w_sq = weight.square().sum_axes(&[2, 3], false);
    let demod = style.square().matmul(w_sq.t()).add_scalar(eps).powf(-0.5);
    Ok(y.mul(demod.reshape(&[n, o, 1, 1])))
}

/// `features + scale * style_map`, element-wise.
pub fn inject_style_map<'t>(features: Var<'t>, style_map: Var<'t>, scale: Var<'t>) -> Result<Var<'t>> {
    expect_shape("style map", &style_map.shape(), &features.shape())?;
    if scale.len() != 1 {
        return Err(shape_err(format!(
            "style map scale must be a single value, got shape {:?}",
            scale.shape()
        )));
    }
    Ok(features.add(style_map.mul(scale)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mfim_autograd::{Array, Tape};
    use ndarray::IxDyn;

    fn scalar4(t: &Tape, v: f64) -> Var<'_> {
        t.constant(Array::from_elem(IxDyn(&[1, 1, 1, 1]), v))
    }

    #[test]
    fn scalar_arithmetic() {
        let t = Tape::new();
        let x = scalar4(&t, 5.0);
        let w = scalar4(&t, 2.0);
        let s = t.constant(Array::from_elem(IxDyn(&[1, 1]), 3.0));
        let y = demodulated_conv(x, w, s, 0.0, true).unwrap();
        assert_eq!(y.item(), 5.0 * (6.0 / 36f64.sqrt()));
    }

    #[test]
    fn unit_style_normalises_kernel() {
        let t = Tape::new();
        let mut rng = crate::nn::seeded_rng(1);
        let x = t.constant(crate::nn::normal_array(&mut rng, &[2, 3, 5, 5], 1.0));
        let w = crate::nn::normal_array(&mut rng, &[4, 3, 3, 3], 1.0);
        let s = t.constant(Array::ones(IxDyn(&[2, 3])));
        let y = demodulated_conv(x, t.constant(w.clone()), s, 0.0, true).unwrap();
        let mut wn = w.clone();
        for mut oc in wn.outer_iter_mut() {
            let norm = oc.iter().map(|v| v * v).sum::<f64>().sqrt();
            oc.mapv_inplace(|v| v / norm);
        }
        let y2 = x.conv2d(t.constant(wn), 1, 1);
        for (a, b) in y.value().iter().zip(y2.value().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_style() {
        let t = Tape::new();
        let x = t.constant(Array::zeros(IxDyn(&[1, 3, 4, 4])));
        let w = t.constant(Array::zeros(IxDyn(&[2, 3, 3, 3])));
        let s = t.constant(Array::zeros(IxDyn(&[1, 2])));
        assert!(demodulated_conv(x, w, s, 0.0, true).is_err());
    }

    #[test]
    fn injection_cases() {
        let t = Tape::new();
        let mut rng = crate::nn::seeded_rng(2);
        let f = t.constant(crate::nn::normal_array(&mut rng, &[1, 2, 3, 3], 1.0));
        let m = t.constant(crate::nn::normal_array(&mut rng, &[1, 2, 3, 3], 1.0));
        let zero = t.constant(Array::zeros(IxDyn(&[1])));
        let out = inject_style_map(f, m, zero).unwrap();
        assert_eq!(*out.value(), *f.value());

        let one = t.constant(Array::ones(IxDyn(&[1])));
        let zmap = t.constant(Array::zeros(IxDyn(&[1, 2, 3, 3])));
        assert_eq!(*inject_style_map(f, zmap, one).unwrap().value(), *f.value());

        let two = t.constant(Array::from_elem(IxDyn(&[1]), 2.0));
        let out = inject_style_map(f, m, two).unwrap();
        assert_eq!(*out.value(), &*f.value() + &(&*m.value() * 2.0));
        let diff = &*out.value() - &*f.value();
        let want = &*m.value() * 2.0;
        for (a, b) in diff.iter().zip(want.iter()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }

        let bad = t.constant(Array::zeros(IxDyn(&[1, 2, 4, 4])));
        assert!(inject_style_map(f, bad, one).is_err());
    }
}
