//! Adaptive-moment gradient descent, shared by latent search and training.

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self::with_betas(dim, lr, 0.9, 0.999)
    }

    pub fn with_betas(dim: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One descent step on `params` (in place).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut adam = Adam::new(2, 0.01);
        let mut p = [0.0, 0.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(1, 0.05);
        let mut p = [2.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 0.3)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 0.3).abs() < 1e-3);
    }
}
