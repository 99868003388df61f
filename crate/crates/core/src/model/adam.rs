use crate::scalar::Real;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr: T::lit(lr),
            beta1: T::lit(beta1),
            beta2: T::lit(beta2),
            eps: T::lit(eps),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    /// Updates `params[range]` from `grad[range]`; entries outside `range` are untouched.
    pub fn step(&mut self, params: &mut [T], grad: &[T], range: std::ops::Range<usize>) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for k in range {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (one - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (one - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::<f64>::new(2, 0.01, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.2], 0..2);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::<f64>::new(1, 0.05, 0.9, 0.999, 1e-8);
        let mut x = vec![3.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 0.5)];
            adam.step(&mut x, &g, 0..1);
        }
        assert!((x[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn frozen_entries_stay_put() {
        let mut adam = Adam::<f64>::new(3, 0.1, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, 2.0, 3.0];
        adam.step(&mut p, &[1.0, 1.0, 1.0], 1..3);
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 2.0 && p[2] < 3.0);
    }
}
