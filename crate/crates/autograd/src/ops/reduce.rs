use ndarray::{Axis, IxDyn};

use crate::tape::{Array, Var};

impl<'t> Var<'t> {
    /// Sum of every element, as a 0-d var.
    pub fn sum_all(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = Array::from_elem(IxDyn(&[]), x.sum());
        self.tape().push_op(out, &[self], move |g, _| {
            let gv = *g.iter().next().unwrap();
            vec![Some(Array::from_elem(IxDyn(&shape), gv))]
        })
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.len() as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Sums over `axes`; the reduced axes are kept with length 1 when
    /// `keepdim` is set.
    pub fn sum_axes(self, axes: &[usize], keepdim: bool) -> Var<'t> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut out = (*x).clone();
        for &a in sorted.iter().rev() {
            out = out.sum_axis(Axis(a));
        }
        let mut kept_shape = in_shape.clone();
        for &a in &sorted {
            kept_shape[a] = 1;
        }
        if keepdim {
            out = out.into_shape_with_order(IxDyn(&kept_shape)).expect("keepdim reshape");
        }
        self.tape().push_op(out, &[self], move |g, _| {
            let g = g
                .to_shape(IxDyn(&kept_shape))
                .expect("sum_axes grad reshape")
                .to_owned();
            let full = g
                .broadcast(IxDyn(&in_shape))
                .expect("sum_axes grad broadcast")
                .to_owned();
            vec![Some(full)]
        })
    }

    pub fn mean_axes(self, axes: &[usize], keepdim: bool) -> Var<'t> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes, keepdim).mul_scalar(1.0 / count as f64)
    }

    /// Euclidean norm of each row of a `[N, D]` var, giving `[N]`.
    ///
    /// The gradient at a zero row is taken to be zero.
    pub fn row_l2_norm(self) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.ndim(), 2, "row_l2_norm expects [N, D]");
        let norms = x.map_axis(Axis(1), |row| row.dot(&row).sqrt()).into_dyn();
        let n = norms.clone();
        self.tape().push_op(norms, &[self], move |g, _| {
            let mut gx = (*x).clone();
            for (i, mut row) in gx.axis_iter_mut(Axis(0)).enumerate() {
                let norm = n[[i]];
                let scale = if norm > 0.0 { g[[i]] / norm } else { 0.0 };
                row.mapv_inplace(|v| v * scale);
            }
            vec![Some(gx)]
        })
    }
}
