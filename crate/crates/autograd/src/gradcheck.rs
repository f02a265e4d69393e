//! Central finite-difference gradient oracle.
//!
//! The numeric side only ever evaluates forward values on fresh tapes, so it
//! shares no code with the reverse pass it is used to check.

use crate::tape::{Array, Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over probed entries.
    pub rel_error: f64,
    /// Largest per-entry absolute difference.
    pub max_abs_diff: f64,
    pub probed: usize,
    pub analytic_norm: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_error.is_finite() && self.rel_error <= tol
    }
}

/// Probe positions: all of `0..len` or `max` evenly spaced ones.
fn probe_indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Compares the reverse-mode gradient of the scalar `f(x)` with central
/// differences of step `h`.
pub fn check_gradient<F>(f: F, x: &Array, h: f64, max_probes: Option<usize>) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    let analytic = {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = f(&tape, xv);
        assert_eq!(y.len(), 1, "gradient check needs a scalar output");
        tape.backward(y).get_or_zeros(xv)
    };
    let eval = |point: &Array| {
        let tape = Tape::new();
        let xv = tape.constant(point.clone());
        f(&tape, xv).item()
    };
    let flat_analytic: Vec<f64> = analytic.iter().copied().collect();
    let mut diff_sq = 0.0;
    let mut a_sq = 0.0;
    let mut n_sq = 0.0;
    let mut max_abs: f64 = 0.0;
    let probes = probe_indices(x.len(), max_probes);
    let mut work = x.as_standard_layout().into_owned();
    for &i in &probes {
        let orig = work.as_slice().unwrap()[i];
        work.as_slice_mut().unwrap()[i] = orig + h;
        let plus = eval(&work);
        work.as_slice_mut().unwrap()[i] = orig - h;
        let minus = eval(&work);
        work.as_slice_mut().unwrap()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = flat_analytic[i];
        diff_sq += (a - numeric).powi(2);
        a_sq += a * a;
        n_sq += numeric * numeric;
        max_abs = max_abs.max((a - numeric).abs());
    }
    let denom = a_sq.sqrt().max(n_sq.sqrt());
    let rel_error = if denom == 0.0 { 0.0 } else { diff_sq.sqrt() / denom };
    GradCheckReport {
        rel_error,
        max_abs_diff: max_abs,
        probed: probes.len(),
        analytic_norm: a_sq.sqrt(),
    }
}
