use ndarray::{concatenate, s, Axis, IxDyn, Slice};

use crate::tape::{Array, Tape, Var};

impl<'t> Var<'t> {
    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let out = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|_| panic!("cannot reshape {in_shape:?} into {shape:?}"));
        self.tape().push_op(out, &[self], move |g, _| {
            let g = g
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&in_shape))
                .expect("reshape grad");
            vec![Some(g)]
        })
    }

    /// Reorders axes; `order[i]` is the input axis placed at position `i`.
    pub fn permute(self, order: &[usize]) -> Var<'t> {
        let x = self.value();
        let out = x.view().permuted_axes(IxDyn(order)).as_standard_layout().into_owned();
        let mut inverse = vec![0; order.len()];
        for (i, &o) in order.iter().enumerate() {
            inverse[o] = i;
        }
        self.tape().push_op(out, &[self], move |g, _| {
            let g = g
                .view()
                .permuted_axes(IxDyn(&inverse))
                .as_standard_layout()
                .into_owned();
            vec![Some(g)]
        })
    }

    /// Transpose of a 2-d var.
    pub fn t(self) -> Var<'t> {
        assert_eq!(self.ndim(), 2, "t() expects a matrix");
        self.permute(&[1, 0])
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'t> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        assert!(start + len <= in_shape[axis], "narrow out of range");
        let out = x.slice_axis(Axis(axis), Slice::from(start..start + len)).to_owned();
        self.tape().push_op(out, &[self], move |g, _| {
            let mut full = Array::zeros(IxDyn(&in_shape));
            full.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                .assign(g);
            vec![Some(full)]
        })
    }

    /// Swaps the two leading kernel axes and flips the spatial ones:
    /// `[O, C, k, k] -> [C, O, k, k]`. Convolving with the result is the
    /// adjoint of a stride-1 "same" convolution with the original kernel.
    pub fn flip_transpose_kernel(self) -> Var<'t> {
        let w = self.value();
        assert_eq!(w.ndim(), 4, "kernel must be 4-d");
        let out = flip_transpose(&w);
        self.tape()
            .push_op(out, &[self], move |g, _| vec![Some(flip_transpose(g))])
    }

    /// Repeats a var with a leading batch axis of 1 along that axis.
    pub fn expand_batch(self, n: usize) -> Var<'t> {
        let shape = self.shape();
        assert_eq!(shape[0], 1, "expand_batch expects leading axis of 1");
        let mut full = shape.clone();
        full[0] = n;
        let zeros = self.tape().constant(Array::zeros(IxDyn(&full)));
        zeros.add(self)
    }
}

fn flip_transpose(w: &Array) -> Array {
    let flipped = w.slice(s![.., .., ..;-1, ..;-1]);
    flipped
        .into_dyn()
        .permuted_axes(IxDyn(&[1, 0, 2, 3]))
        .as_standard_layout()
        .into_owned()
}

/// Concatenates vars along `axis`.
pub fn concat<'t>(tape: &'t Tape, vars: &[Var<'t>], axis: usize) -> Var<'t> {
    assert!(!vars.is_empty(), "concat of nothing");
    let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let out = concatenate(Axis(axis), &views).expect("concat shapes");
    let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    tape.push_op(out, vars, move |g, needs| {
        let mut start = 0;
        lens.iter()
            .zip(needs)
            .map(|(&len, &need)| {
                let piece = need.then(|| g.slice_axis(Axis(axis), Slice::from(start..start + len)).to_owned());
                start += len;
                piece
            })
            .collect()
    })
}
