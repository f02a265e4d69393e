use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{Axis, IxDyn, Zip};

use crate::tape::{Array, Var};

/// Sums `grad` down to `shape`, undoing numpy-style broadcasting.
pub(crate) fn unbroadcast(grad: &Array, shape: &[usize]) -> Array {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut g = grad.clone();
    let extra = g.ndim() - shape.len();
    for _ in 0..extra {
        g = g.sum_axis(Axis(0));
    }
    for (axis, &dim) in shape.iter().enumerate() {
        if dim == 1 && g.shape()[axis] != 1 {
            g = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    g.into_shape_with_order(IxDyn(shape)).expect("unbroadcast reshape")
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("cannot broadcast {a:?} with {b:?}"),
            }
        })
        .collect()
}

fn broadcast_to(a: &Array, shape: &[usize]) -> Array {
    a.broadcast(IxDyn(shape))
        .unwrap_or_else(|| panic!("cannot broadcast {:?} to {shape:?}", a.shape()))
        .to_owned()
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    fn binary(
        self,
        other: Var<'t>,
        f: impl Fn(f64, f64) -> f64,
        backward: impl Fn(&Array, &Array, &Array, &[bool]) -> (Option<Array>, Option<Array>) + 'static,
    ) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let shape = broadcast_shape(a.shape(), b.shape());
        let ab = broadcast_to(&a, &shape);
        let bb = broadcast_to(&b, &shape);
        let mut out = Array::zeros(IxDyn(&shape));
        Zip::from(&mut out).and(&ab).and(&bb).for_each(|o, &x, &y| *o = f(x, y));
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.tape().push_op(out, &[self, other], move |g, needs| {
            let (ga, gb) = backward(g, &ab, &bb, needs);
            vec![ga.map(|ga| unbroadcast(&ga, &sa)), gb.map(|gb| unbroadcast(&gb, &sb))]
        })
    }

    fn unary(self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'t> {
        let x = self.value();
        let out = x.mapv(&f);
        let y = out.clone();
        self.tape().push_op(out, &[self], move |g, _| {
            let mut gx = g.clone();
            Zip::from(&mut gx)
                .and(&*x)
                .and(&y)
                .for_each(|gi, &xi, &yi| *gi *= df(xi, yi));
            vec![Some(gx)]
        })
    }

    fn linear_combine(self, other: Var<'t>, sign: f64) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let out = if a.shape() == b.shape() {
            &*a + &(&*b * sign)
        } else {
            let shape = broadcast_shape(a.shape(), b.shape());
            broadcast_to(&a, &shape) + broadcast_to(&b, &shape) * sign
        };
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.tape().push_op(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| unbroadcast(g, &sa)),
                needs[1].then(|| unbroadcast(g, &sb) * sign),
            ]
        })
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.linear_combine(other, 1.0)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.linear_combine(other, -1.0)
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(
            other,
            |x, y| x * y,
            |g, a, b, needs| (needs[0].then(|| g * b), needs[1].then(|| g * a)),
        )
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.binary(
            other,
            |x, y| x / y,
            |g, a, b, needs| {
                (
                    needs[0].then(|| g / b),
                    needs[1].then(|| {
                        let mut gb = g.clone();
                        Zip::from(&mut gb)
                            .and(a)
                            .and(b)
                            .for_each(|gi, &x, &y| *gi *= -x / (y * y));
                        gb
                    }),
                )
            },
        )
    }

    pub fn neg(self) -> Var<'t> {
        self.mul_scalar(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    /// Subgradient 0 at the origin.
    pub fn abs(self) -> Var<'t> {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    /// `ln(1 + e^x)` evaluated without overflow.
    pub fn softplus(self) -> Var<'t> {
        self.unary(softplus, |x, _| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;
    use ndarray::array;

    #[test]
    fn unbroadcast_sums_expanded_axes() {
        let g = Array::ones(IxDyn(&[2, 3, 4]));
        let r = unbroadcast(&g, &[3, 1]);
        assert_eq!(r.shape(), &[3, 1]);
        assert!(r.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn broadcast_mul_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]].into_dyn());
        let b = tape.leaf(array![10.0, 20.0].into_dyn());
        let y = (a * b).sum_all();
        assert_eq!(y.item(), 10.0 + 40.0 + 30.0 + 80.0);
        let grads = tape.backward(y);
        assert_eq!(grads.get(a).unwrap(), &array![[10.0, 20.0], [10.0, 20.0]].into_dyn());
        assert_eq!(grads.get(b).unwrap(), &array![4.0, 6.0].into_dyn());
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
