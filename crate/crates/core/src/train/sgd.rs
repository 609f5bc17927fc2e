use serde::{Deserialize, Serialize};

/// Heavy-ball momentum: `v <- mu * v - lr * g`, `w <- w + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, n_params: usize) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn with_velocity(learning_rate: f64, momentum: f64, velocity: Vec<f64>) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity,
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [f64] {
        &mut self.velocity
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.velocity.len());
        assert_eq!(grads.len(), self.velocity.len());
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((w, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = mu * *v - lr * g;
            *w += *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_momentum_is_gradient_descent() {
        // f(w) = (w - 3)^2, g = 2 (w - 3)
        let mut w = [10.0];
        let mut opt = Sgd::new(0.1, 0.0, 1);
        for _ in 0..5 {
            let before = w[0];
            let g = 2.0 * (before - 3.0);
            opt.step(&mut w, &[g]);
            assert_eq!(w[0], before - 0.1 * g);
        }
    }

    #[test]
    fn velocity_closed_form_under_constant_gradient() {
        let (lr, mu, g) = (0.01, 0.9, 2.5);
        let mut w = [0.0];
        let mut opt = Sgd::new(lr, mu, 1);
        for t in 1..=50 {
            opt.step(&mut w, &[g]);
            let closed = -lr * g * (1.0 - mu.powi(t)) / (1.0 - mu);
            assert!((opt.velocity()[0] - closed).abs() < 1e-14, "t={t}");
        }
    }
}
