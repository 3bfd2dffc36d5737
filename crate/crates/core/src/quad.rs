//! Composite trapezoid rule on a given abscissa sequence.

use crate::Real;

pub(crate) fn trapezoid<T: Real>(x: &[T], f: &[T]) -> T {
    debug_assert_eq!(x.len(), f.len());
    let mut acc = T::zero();
    for k in 1..x.len() {
        acc += (x[k] - x[k - 1]) * (f[k] + f[k - 1]);
    }
    acc / T::lit(2.0)
}

/// Running trapezoid integral, starting at 0.
pub(crate) fn cumulative_trapezoid<T: Real>(x: &[T], f: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = T::zero();
    for k in 0..x.len() {
        if k > 0 {
            acc += (x[k] - x[k - 1]) * (f[k] + f[k - 1]) / T::lit(2.0);
        }
        out.push(acc);
    }
    out
}
