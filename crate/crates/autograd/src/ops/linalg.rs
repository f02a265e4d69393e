use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Ix2};

use crate::tape::Var;

impl<'t> Var<'t> {
    /// `[N, K] @ [K, M] -> [N, M]`.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let a2 = a.view().into_dimensionality::<Ix2>().expect("matmul lhs must be 2-d");
        let b2 = b.view().into_dimensionality::<Ix2>().expect("matmul rhs must be 2-d");
        assert_eq!(
            a2.ncols(),
            b2.nrows(),
            "matmul inner dims: {:?} @ {:?}",
            a.shape(),
            b.shape()
        );
        let mut out = Array2::zeros((a2.nrows(), b2.ncols()));
        general_mat_mul(1.0, &a2, &b2, 0.0, &mut out);
        let (a, b) = (a.clone(), b.clone());
        self.tape().push_op(out.into_dyn(), &[self, other], move |g, needs| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
            let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
            vec![
                needs[0].then(|| g2.dot(&b2.t()).into_dyn()),
                needs[1].then(|| a2.t().dot(&g2).into_dyn()),
            ]
        })
    }
}
