//! Factor-2 spatial resampling on `[N, C, H, W]` vars.

use ndarray::IxDyn;

use crate::tape::{Array, Var};

fn dims(x: &Array) -> (usize, usize, usize) {
    assert_eq!(x.ndim(), 4, "expected [N, C, H, W], got {:?}", x.shape());
    let s = x.shape();
    (s[0] * s[1], s[2], s[3])
}

fn avg_pool2_raw(x: &Array) -> Array {
    let (planes, h, w) = dims(x);
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
    let (ho, wo) = (h / 2, w / 2);
    let x = x.as_standard_layout();
    let src = x.as_slice().unwrap();
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let i = base + 2 * oy * w + 2 * ox;
                out[(p * ho + oy) * wo + ox] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    let s = x.shape();
    Array::from_shape_vec(IxDyn(&[s[0], s[1], ho, wo]), out).unwrap()
}

/// Each input pixel copied to a 2x2 block, times `scale`.
fn upsample_nearest2_raw(x: &Array, scale: f64) -> Array {
    let (planes, h, w) = dims(x);
    let (ho, wo) = (2 * h, 2 * w);
    let x = x.as_standard_layout();
    let src = x.as_slice().unwrap();
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                out[(p * ho + oy) * wo + ox] = scale * src[(p * h + oy / 2) * w + ox / 2];
            }
        }
    }
    let s = x.shape();
    Array::from_shape_vec(IxDyn(&[s[0], s[1], ho, wo]), out).unwrap()
}

/// Source taps for output index `o` of a 2x bilinear upsample with half-pixel
/// centres and edge clamping: `(near, far, far_weight)`.
fn bilinear_taps(o: usize, len: usize) -> (usize, usize, f64) {
    let near = o / 2;
    let far = if o.is_multiple_of(2) {
        near.saturating_sub(1)
    } else {
        (near + 1).min(len - 1)
    };
    (near, far, 0.25)
}

fn upsample_bilinear2_raw(x: &Array) -> Array {
    let (planes, h, w) = dims(x);
    let (ho, wo) = (2 * h, 2 * w);
    let x = x.as_standard_layout();
    let src = x.as_slice().unwrap();
    let mut rows = vec![0.0; planes * ho * w];
    for p in 0..planes {
        for oy in 0..ho {
            let (a, b, fw) = bilinear_taps(oy, h);
            for ix in 0..w {
                rows[(p * ho + oy) * w + ix] = (1.0 - fw) * src[(p * h + a) * w + ix] + fw * src[(p * h + b) * w + ix];
            }
        }
    }
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        for oy in 0..ho {
            let row = &rows[(p * ho + oy) * w..(p * ho + oy + 1) * w];
            for ox in 0..wo {
                let (a, b, fw) = bilinear_taps(ox, w);
                out[(p * ho + oy) * wo + ox] = (1.0 - fw) * row[a] + fw * row[b];
            }
        }
    }
    let s = x.shape();
    Array::from_shape_vec(IxDyn(&[s[0], s[1], ho, wo]), out).unwrap()
}

/// Adjoint of [`upsample_bilinear2_raw`].
fn upsample_bilinear2_adjoint(g: &Array) -> Array {
    let (planes, ho, wo) = dims(g);
    let (h, w) = (ho / 2, wo / 2);
    let g = g.as_standard_layout();
    let src = g.as_slice().unwrap();
    let mut rows = vec![0.0; planes * ho * w];
    for p in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                let (a, b, fw) = bilinear_taps(ox, w);
                let v = src[(p * ho + oy) * wo + ox];
                rows[(p * ho + oy) * w + a] += (1.0 - fw) * v;
                rows[(p * ho + oy) * w + b] += fw * v;
            }
        }
    }
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        for oy in 0..ho {
            let (a, b, fw) = bilinear_taps(oy, h);
            for ix in 0..w {
                let v = rows[(p * ho + oy) * w + ix];
                out[(p * h + a) * w + ix] += (1.0 - fw) * v;
                out[(p * h + b) * w + ix] += fw * v;
            }
        }
    }
    let s = g.shape();
    Array::from_shape_vec(IxDyn(&[s[0], s[1], h, w]), out).unwrap()
}

impl<'t> Var<'t> {
    /// 2x2 mean pooling with stride 2.
    pub fn avg_pool2(self) -> Var<'t> {
        let out = avg_pool2_raw(&self.value());
        self.tape()
            .push_op(out, &[self], |g, _| vec![Some(upsample_nearest2_raw(g, 0.25))])
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample_nearest2(self) -> Var<'t> {
        let out = upsample_nearest2_raw(&self.value(), 1.0);
        self.tape()
            .push_op(out, &[self], |g, _| vec![Some(avg_pool2_raw(g) * 4.0)])
    }

    /// Bilinear 2x upsampling, half-pixel centres, clamped edges.
    pub fn upsample_bilinear2(self) -> Var<'t> {
        let out = upsample_bilinear2_raw(&self.value());
        self.tape()
            .push_op(out, &[self], |g, _| vec![Some(upsample_bilinear2_adjoint(g))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Array {
        let mut i = 0.0;
        Array::from_shape_fn(IxDyn(shape), |_| {
            i += 1.0;
            (i * 1.37_f64).cos()
        })
    }

    fn dot(a: &Array, b: &Array) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn bilinear_adjoint_identity() {
        let x = ramp(&[2, 3, 4, 5]);
        let y = ramp(&[2, 3, 8, 10]);
        let lhs = dot(&upsample_bilinear2_raw(&x), &y);
        let rhs = dot(&x, &upsample_bilinear2_adjoint(&y));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn bilinear_preserves_constants() {
        let x = Array::from_elem(IxDyn(&[1, 1, 3, 3]), 2.5);
        assert!(upsample_bilinear2_raw(&x).iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn pool_and_nearest_are_adjoint_up_to_scale() {
        let x = ramp(&[1, 2, 4, 4]);
        let y = ramp(&[1, 2, 2, 2]);
        let lhs = dot(&avg_pool2_raw(&x), &y);
        let rhs = dot(&x, &upsample_nearest2_raw(&y, 0.25));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
