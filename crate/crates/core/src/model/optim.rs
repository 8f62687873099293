use super::config::TrainConfig;

/// Adam with decoupled weight decay. Decay is applied to every parameter
/// and scaled by the learning rate, so `lr = 0` freezes the model.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n_params: usize, tc: &TrainConfig) -> Self {
        AdamW {
            lr: tc.learning_rate,
            weight_decay: tc.weight_decay,
            beta1: tc.betas.0,
            beta2: tc.betas.1,
            eps: tc.eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Return updated parameters.
    pub fn step(&mut self, params: &[f64], grad: &[f64]) -> Vec<f64> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut out = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let p = params[i] * (1.0 - self.lr * self.weight_decay);
            out.push(p - self.lr * mhat / (vhat.sqrt() + self.eps));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_is_identity() {
        let tc = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(3, &tc);
        let p = vec![0.5, -2.0, 3.25];
        let mut q = p.clone();
        for _ in 0..10 {
            q = opt.step(&q, &[1.0, -4.0, 0.1]);
        }
        assert_eq!(p, q);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let tc = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(2, &tc);
        let q = opt.step(&[1.0, 1.0], &[0.3, -7.0]);
        assert!((q[0] - (1.0 - 3e-4)).abs() < 1e-9);
        assert!((q[1] - (1.0 + 3e-4)).abs() < 1e-9);
    }
}
