use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; param_count], v: vec![0.0; param_count], step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::ShapeMismatch { params: params.len(), grads: grads.len() });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient);
        }
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut opt = Adam::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.5];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig { learning_rate: 0.01, ..Default::default() };
        let mut opt = Adam::new(3, cfg);
        let mut p = vec![0.0; 3];
        opt.step(&mut p, &[2.0, -0.5, 1e-3]).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
        assert!((p[2] + 0.01).abs() < 1e-7);
    }

    #[test]
    fn descends_a_quadratic() {
        // Adam overshoots zero around step 12, so |w| is not monotone step by
        // step; the run as a whole contracts. Reference trajectory from an
        // independent scalar simulation of the same update rule.
        let cfg = AdamConfig { learning_rate: 0.1, ..Default::default() };
        let mut opt = Adam::new(1, cfg);
        let mut w = vec![1.0];
        let mut trace = vec![w[0]];
        for _ in 0..100 {
            let g = 2.0 * w[0];
            opt.step(&mut w, &[g]).unwrap();
            trace.push(w[0]);
        }
        assert!((trace[1] - 0.9000000005).abs() < 1e-12);
        assert!((trace[11] - 0.005131501948057199).abs() < 1e-10);
        assert!((trace[100] - 0.002936675681102549).abs() < 1e-10);
        assert!(trace[100].abs() < trace[0].abs());
        // monotone until the first overshoot
        assert!(trace[..=11].windows(2).all(|p| p[1].abs() < p[0].abs()));
    }

    #[test]
    fn rejects_bad_shapes_and_nans() {
        let mut opt = Adam::new(2, AdamConfig::default());
        let mut p = vec![0.0; 2];
        assert!(matches!(opt.step(&mut p, &[1.0]), Err(NnError::ShapeMismatch { .. })));
        assert!(matches!(opt.step(&mut p, &[1.0, f64::INFINITY]), Err(NnError::NonFiniteGradient)));
        assert_eq!(opt.steps(), 0);
    }
}
