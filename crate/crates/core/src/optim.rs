//! Adam optimizer over lists of dense parameter matrices.

use ndarray::Array2;

/// Adam with optional L2 weight decay folded into the gradient
/// (the classic coupled formulation).
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    /// One moment pair per parameter, in the order `step` will receive them.
    pub fn new(lr: f64, weight_decay: f64, shapes: &[(usize, usize)]) -> Self {
        assert!(lr >= 0.0 && weight_decay >= 0.0);
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..grads.len() {
            let g = if self.weight_decay > 0.0 {
                &grads[i] + &(&*params[i] * self.weight_decay)
            } else {
                grads[i].clone()
            };
            self.m[i] = &self.m[i] * self.beta1 + &g * (1.0 - self.beta1);
            self.v[i] = &self.v[i] * self.beta2 + &g.mapv(|x| x * x) * (1.0 - self.beta2);
            let update = (&self.m[i] / bc1) / ((self.v[i].mapv(f64::sqrt) / bc2.sqrt()) + self.eps);
            *params[i] -= &(update * self.lr);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn minimizes_a_quadratic() {
        // f(x) = sum((x - 3)^2), gradient 2(x - 3).
        let mut x = array![[0.0, 10.0]];
        let mut opt = Adam::new(0.1, 0.0, &[(1, 2)]);
        for _ in 0..500 {
            let g = (&x - 3.0) * 2.0;
            opt.step(&mut [&mut x], &[g]);
        }
        assert!((x[(0, 0)] - 3.0).abs() < 1e-3);
        assert!((x[(0, 1)] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut x = array![[5.0]];
        let mut opt = Adam::new(0.05, 0.1, &[(1, 1)]);
        for _ in 0..300 {
            opt.step(&mut [&mut x], &[array![[0.0]]]);
        }
        assert!(x[(0, 0)].abs() < 1.0, "decay did not shrink: {}", x[(0, 0)]);
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let run = || {
            let mut x = array![[1.0, -2.0]];
            let mut opt = Adam::new(0.01, 0.01, &[(1, 2)]);
            for k in 0..50 {
                let g = &x * (k as f64 % 3.0 - 1.0);
                opt.step(&mut [&mut x], &[g]);
            }
            x
        };
        assert_eq!(run(), run());
    }
}
