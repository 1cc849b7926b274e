//! Adam with decoupled weight decay, operating on flat parameter slices.

/// Optimizer hyperparameters. Weight decay is decoupled (applied directly to
/// the parameter, not through the moment estimates).
#[derive(Debug, Clone, Copy)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }

    /// One update of a parameter tensor viewed as a flat slice. `t` is the
    /// 1-based step count shared by all tensors in the model.
    pub fn update(&self, t: u64, param: &mut [f64], grad: &[f64], moments: &mut Moments) {
        assert_eq!(param.len(), grad.len());
        assert_eq!(param.len(), moments.m.len());
        let bias1 = 1.0 - self.beta1.powi(t as i32);
        let bias2 = 1.0 - self.beta2.powi(t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            moments.m[i] = self.beta1 * moments.m[i] + (1.0 - self.beta1) * g;
            moments.v[i] = self.beta2 * moments.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = moments.m[i] / bias1;
            let v_hat = moments.v[i] / bias2;
            param[i] -=
                self.learning_rate * (m_hat / (v_hat.sqrt() + self.epsilon) + self.weight_decay * param[i]);
        }
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        // f(x) = (x - 3)^2, grad = 2(x - 3)
        let opt = AdamW::new(0.1, 0.0);
        let mut x = [0.0f64];
        let mut mom = Moments::zeros(1);
        for t in 1..=500 {
            let grad = [2.0 * (x[0] - 3.0)];
            opt.update(t, &mut x, &grad, &mut mom);
        }
        assert!((x[0] - 3.0).abs() < 1e-2, "x = {}", x[0]);
    }

    #[test]
    fn decoupled_decay_shrinks_parameters_without_gradient() {
        let opt = AdamW::new(0.1, 0.5);
        let mut x = [2.0f64];
        let mut mom = Moments::zeros(1);
        opt.update(1, &mut x, &[0.0], &mut mom);
        assert!((x[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }
}
