//! 2-d convolution via im2col + GEMM, batched over the leading axis.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayView3, IxDyn};

use crate::exec;
use crate::tape::{Array, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: ArrayView3<f64>, geo: &ConvGeometry) -> Array2<f64> {
    let (ho, wo) = (geo.out_height(), geo.out_width());
    let k = geo.kernel;
    let mut cols = Array2::zeros((geo.patch_len(), ho * wo));
    for c in 0..geo.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let mut dst = cols.row_mut(row);
                let dst = dst.as_slice_mut().unwrap();
                for oy in 0..ho {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    if iy < 0 || iy >= geo.height as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        if ix < 0 || ix >= geo.width as isize {
                            continue;
                        }
                        dst[oy * wo + ox] = x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: ArrayView2<f64>, geo: &ConvGeometry, out: &mut [f64]) {
    let (ho, wo) = (geo.out_height(), geo.out_width());
    let k = geo.kernel;
    let (h, w) = (geo.height, geo.width);
    for c in 0..geo.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = cols.row(row);
                for oy in 0..ho {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[(c * h + iy as usize) * w + ix as usize] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

fn sample_view<'a>(x: &'a Array, n: usize) -> ArrayView3<'a, f64> {
    let s = x.shape();
    let per = s[1] * s[2] * s[3];
    let data = &x.as_slice().expect("contiguous input")[n * per..(n + 1) * per];
    ArrayView3::from_shape((s[1], s[2], s[3]), data).unwrap()
}

fn columns(x: &Array, n: usize, geo: &ConvGeometry) -> Array2<f64> {
    let xs = sample_view(x, n);
    if geo.is_pointwise() {
        xs.to_shape((geo.channels, geo.height * geo.width))
            .unwrap()
            .into_owned()
    } else {
        im2col(xs, geo)
    }
}

/// Forward convolution on plain arrays: `x [N, C, H, W]`, `w [O, C, k, k]`.
pub fn conv2d_forward(x: &Array, w: &Array, stride: usize, pad: usize) -> Array {
    let (geo, n, o) = geometry(x, w, stride, pad);
    let (ho, wo) = (geo.out_height(), geo.out_width());
    let w2 = w.view().into_shape_with_order((o, geo.patch_len())).unwrap();
    let x = x.as_standard_layout();
    let x = x.to_owned();
    let mut out = Array::zeros(IxDyn(&[n, o, ho, wo]));
    let per = o * ho * wo;
    exec::for_each_chunk_mut(out.as_slice_mut().unwrap(), per.max(1), |i, chunk| {
        let cols = columns(&x, i, &geo);
        let mut y = ndarray::ArrayViewMut2::from_shape((o, ho * wo), chunk).unwrap();
        general_mat_mul(1.0, &w2, &cols, 0.0, &mut y);
    });
    out
}

fn geometry(x: &Array, w: &Array, stride: usize, pad: usize) -> (ConvGeometry, usize, usize) {
    assert_eq!(x.ndim(), 4, "conv2d input must be [N, C, H, W], got {:?}", x.shape());
    assert_eq!(w.ndim(), 4, "conv2d kernel must be [O, C, k, k], got {:?}", w.shape());
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(c, wc, "conv2d channel mismatch: input {c}, kernel {wc}");
    assert_eq!(kh, kw, "square kernels only");
    assert!(stride >= 1);
    assert!(
        h + 2 * pad >= kh && wd + 2 * pad >= kw,
        "kernel larger than padded input"
    );
    (
        ConvGeometry {
            channels: c,
            height: h,
            width: wd,
            kernel: kh,
            stride,
            pad,
        },
        n,
        o,
    )
}

impl<'t> Var<'t> {
    /// Cross-correlation of `self [N, C, H, W]` with `weight [O, C, k, k]`.
    pub fn conv2d(self, weight: Var<'t>, stride: usize, pad: usize) -> Var<'t> {
        let x = self.value();
        let w = weight.value();
        let (geo, n, o) = geometry(&x, &w, stride, pad);
        let out = conv2d_forward(&x, &w, stride, pad);
        let x = x.as_standard_layout().into_owned();
        self.tape().push_op(out, &[self, weight], move |g, needs| {
            let (ho, wo) = (geo.out_height(), geo.out_width());
            let g = g.as_standard_layout();
            let gs = g.as_slice().unwrap();
            let per_out = o * ho * wo;
            let w2 = w.view().into_shape_with_order((o, geo.patch_len())).unwrap();
            let gw = needs[1].then(|| {
                let parts = exec::map_indices(n, |i| {
                    let gy = ArrayView2::from_shape((o, ho * wo), &gs[i * per_out..(i + 1) * per_out]).unwrap();
                    let cols = columns(&x, i, &geo);
                    let mut acc = Array2::zeros((o, geo.patch_len()));
                    general_mat_mul(1.0, &gy, &cols.t(), 0.0, &mut acc);
                    acc
                });
                let mut total = Array2::zeros((o, geo.patch_len()));
                for p in parts {
                    total += &p;
                }
                total.into_shape_with_order(IxDyn(w.shape())).unwrap()
            });
            let gx = needs[0].then(|| {
                let mut gx = Array::zeros(IxDyn(&[n, geo.channels, geo.height, geo.width]));
                let per_in = geo.channels * geo.height * geo.width;
                exec::for_each_chunk_mut(gx.as_slice_mut().unwrap(), per_in.max(1), |i, chunk| {
                    let gy = ArrayView2::from_shape((o, ho * wo), &gs[i * per_out..(i + 1) * per_out]).unwrap();
                    let mut gcols = Array2::zeros((geo.patch_len(), ho * wo));
                    general_mat_mul(1.0, &w2.t(), &gy, 0.0, &mut gcols);
                    if geo.is_pointwise() {
                        chunk.copy_from_slice(gcols.as_slice().unwrap());
                    } else {
                        col2im(gcols.view(), &geo, chunk);
                    }
                });
                gx
            });
            vec![gx, gw]
        })
    }
}
