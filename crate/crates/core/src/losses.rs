//! Pointwise forecasting losses and their derivatives with respect to the
//! prediction.

use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Huber transition point; `delta = 1` after standardization by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberParams {
    pub delta: f64,
}

impl Default for HuberParams {
    fn default() -> Self {
        Self { delta: 1.0 }
    }
}

/// Which loss scores a forecast. `Pinball` needs a quantile forecast; `Huber`
/// and `Mse` score the point forecast (the median path in quantile mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Huber,
    Pinball,
    Mse,
}

#[inline]
pub fn huber_scalar<T: Real>(e: T, delta: T) -> T {
    let a = e.abs();
    let half = T::lit(0.5);
    if a <= delta {
        half * e * e
    } else {
        delta * a - half * delta * delta
    }
}

/// Component-averaged Huber loss of `pred - target`.
pub fn huber<T: Real>(pred: &[T], target: &[T], delta: T) -> T {
    debug_assert_eq!(pred.len(), target.len());
    let s: T = pred.iter().zip(target).map(|(&a, &b)| huber_scalar(a - b, delta)).sum();
    s / T::from_usize(pred.len()).unwrap()
}

/// Adds `scale * d huber / d pred` into `grad`.
pub fn huber_grad<T: Real>(pred: &[T], target: &[T], delta: T, scale: T, grad: &mut [T]) {
    let k = scale / T::from_usize(pred.len()).unwrap();
    for ((g, &a), &b) in grad.iter_mut().zip(pred).zip(target) {
        let e = a - b;
        *g += k * e.max(-delta).min(delta);
    }
}

/// `rho_q(u) = u (q - 1{u < 0})` with `u = target - prediction`.
#[inline]
pub fn pinball<T: Real>(u: T, q: T) -> T {
    if u < T::zero() {
        u * (q - T::one())
    } else {
        u * q
    }
}

/// Mean pinball loss over components and quantile levels.
///
/// `pred` is level-major: `pred[j * P + p]` is the `levels[j]` quantile of
/// component `p`.
pub fn pinball_multi<T: Real>(pred: &[T], target: &[T], levels: &[T]) -> T {
    let p_dim = target.len();
    debug_assert_eq!(pred.len(), p_dim * levels.len());
    let mut s = T::zero();
    for (row, &q) in pred.chunks_exact(p_dim).zip(levels) {
        for (&yhat, &y) in row.iter().zip(target) {
            s += pinball(y - yhat, q);
        }
    }
    s / T::from_usize(p_dim * levels.len()).unwrap()
}

/// Adds `scale * d pinball_multi / d pred` into `grad`. At `u = 0` the right
/// derivative (`-q`) is used.
pub fn pinball_multi_grad<T: Real>(pred: &[T], target: &[T], levels: &[T], scale: T, grad: &mut [T]) {
    let p_dim = target.len();
    let k = scale / T::from_usize(p_dim * levels.len()).unwrap();
    for ((grow, row), &q) in grad.chunks_exact_mut(p_dim).zip(pred.chunks_exact(p_dim)).zip(levels) {
        for ((g, &yhat), &y) in grow.iter_mut().zip(row).zip(target) {
            let ind = if y - yhat < T::zero() { T::one() } else { T::zero() };
            *g -= k * (q - ind);
        }
    }
}

pub fn squared_error<T: Real>(pred: &[T], target: &[T]) -> T {
    let s: T = pred.iter().zip(target).map(|(&a, &b)| (a - b) * (a - b)).sum();
    s / T::from_usize(pred.len()).unwrap()
}

pub fn absolute_error<T: Real>(pred: &[T], target: &[T]) -> T {
    let s: T = pred.iter().zip(target).map(|(&a, &b)| (a - b).abs()).sum();
    s / T::from_usize(pred.len()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn huber_unit_values() {
        assert_eq!(huber(&[0.5f64], &[0.0], 1.0), 0.125);
        assert_eq!(huber(&[2.0f64], &[0.0], 1.0), 1.5);
        assert_eq!(huber(&[0.5f64, 2.0], &[0.0, 0.0], 1.0), 0.8125);
    }

    #[test]
    fn huber_is_c1_at_transition() {
        let d = 1.0f64;
        let step = 1e-7;
        let left = (huber_scalar(d, d) - huber_scalar(d - step, d)) / step;
        let right = (huber_scalar(d + step, d) - huber_scalar(d, d)) / step;
        assert!((left - right).abs() < 1e-6);
        let below = huber_scalar(d - 1e-12, d);
        let above = huber_scalar(d + 1e-12, d);
        assert!((below - above).abs() < 1e-11);
    }

    #[test]
    fn huber_is_bounded_by_quadratic_and_linear() {
        for k in -400..=400 {
            let e = k as f64 * 0.025;
            for &d in &[0.3, 1.0, 2.5] {
                let h = huber_scalar(e, d);
                assert!(h <= 0.5 * e * e + 1e-15);
                assert!(h <= d * e.abs() + 1e-15);
            }
        }
    }

    #[test]
    fn pinball_unit_values() {
        assert!((pinball(1.0f64, 0.9) - 0.9).abs() < 1e-12);
        assert!((pinball(-1.0f64, 0.9) - 0.1).abs() < 1e-12);
        for &q in &[0.1, 0.5, 0.77] {
            assert_eq!(pinball(0.0f64, q), 0.0);
        }
    }

    #[test]
    fn pinball_constant_minimizer_is_empirical_quantile() {
        let sample: Vec<f64> = (1..=10).map(f64::from).collect();
        let mean_loss = |a: f64| sample.iter().map(|&y| pinball(y - a, 0.3)).sum::<f64>() / 10.0;
        // the empirical risk is piecewise linear with kinks at the sample points
        let best = sample.iter().copied().min_by(|a, b| mean_loss(*a).partial_cmp(&mean_loss(*b)).unwrap()).unwrap();
        assert_eq!(best, 3.0);
    }

    proptest! {
        #[test]
        fn huber_grad_matches_difference_quotient(e in -3.0f64..3.0) {
            prop_assume!((e.abs() - 1.0).abs() > 1e-3);
            let mut g = [0.0];
            huber_grad(&[e], &[0.0], 1.0, 1.0, &mut g);
            let fd = (huber_scalar(e + 1e-6, 1.0) - huber_scalar(e - 1e-6, 1.0)) / 2e-6;
            prop_assert!((g[0] - fd).abs() < 1e-6);
        }

        #[test]
        fn pinball_is_nonnegative(u in -10.0f64..10.0, q in 0.01f64..0.99) {
            prop_assert!(pinball(u, q) >= 0.0);
        }
    }
}
