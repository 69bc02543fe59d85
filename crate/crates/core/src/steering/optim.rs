use super::SteeringConfig;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(dim: usize, config: &SteeringConfig) -> Self {
        AdamW {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_epsilon,
            weight_decay: config.weight_decay,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = SteeringConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..SteeringConfig::default()
        };
        let mut opt = AdamW::new(2, &cfg);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5]);
        // Bias-corrected first step is lr · sign(g).
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled_and_zero_lr_is_a_no_op() {
        let cfg = SteeringConfig {
            learning_rate: 0.0,
            ..SteeringConfig::default()
        };
        let mut opt = AdamW::new(1, &cfg);
        let mut p = vec![2.0];
        opt.step(&mut p, &[1.0]);
        assert_eq!(p, vec![2.0]);

        let cfg = SteeringConfig {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..SteeringConfig::default()
        };
        let mut opt = AdamW::new(1, &cfg);
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.0]);
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }
}
