use super::layers::Param;

/// Step learning-rate schedule over 1-based epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decayed: f64,
    /// First epoch that uses `decayed`.
    pub drop_epoch: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-3,
            decayed: 1e-4,
            drop_epoch: 13,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch < self.drop_epoch {
            self.initial
        } else {
            self.decayed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are matched to parameters by
/// visiting order, which is fixed for a given model.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Starts a step; call [`Adam::update`] once per parameter in order.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, index: usize, param: &mut Param, lr: f64) {
        if self.m.len() <= index {
            self.m.resize(index + 1, Vec::new());
            self.v.resize(index + 1, Vec::new());
        }
        let n = param.value.len();
        if self.m[index].len() != n {
            self.m[index] = vec![0.0; n];
            self.v[index] = vec![0.0; n];
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m[index], &mut self.v[index]);
        let grads = param.grad.data().to_vec();
        for (i, (w, g)) in param.value.data_mut().iter_mut().zip(grads).enumerate() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_drops_at_epoch_thirteen() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(1), 1e-3);
        assert_eq!(s.lr(12), 1e-3);
        assert_eq!(s.lr(13), 1e-4);
        assert_eq!(s.lr(19), 1e-4);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Param::new(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        p.grad = Tensor::new(vec![2], vec![0.3, -2.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.begin_step();
        adam.update(0, &mut p, 0.01);
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((p.value.data()[0] - 0.99).abs() < 1e-9);
        assert!((p.value.data()[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new(Tensor::new(vec![1], vec![5.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..3000 {
            let w = p.value.data()[0];
            p.grad = Tensor::new(vec![1], vec![2.0 * (w - 2.0)]).unwrap();
            adam.begin_step();
            adam.update(0, &mut p, 0.01);
        }
        assert!((p.value.data()[0] - 2.0).abs() < 1e-3);
        assert_eq!(adam.steps(), 3000);
    }
}
