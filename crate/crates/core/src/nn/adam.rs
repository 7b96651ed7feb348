use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(NnError::InvalidConfig(format!("step_size {} must be positive", self.step_size)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(NnError::InvalidConfig("betas must lie in (0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(NnError::InvalidConfig("eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub timestep: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        AdamState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            timestep: 0,
        }
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::ShapeMismatch(format!(
                "adam state for {} params, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.timestep += 1;
        let AdamConfig { step_size, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.timestep as i32);
        let c2 = 1.0 - beta2.powi(self.timestep as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= step_size * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        // at t = 1: m_hat = g, v_hat = g^2, so the update is -lr * g / (|g| + eps)
        let cfg = AdamConfig::default();
        let grads = [0.5, -2.0, 1e-9, 0.0];
        let mut p = [1.0, 1.0, 1.0, 1.0];
        let mut s = AdamState::new(cfg, 4);
        s.step(&mut p, &grads).unwrap();
        for (pi, g) in p.iter().zip(grads) {
            let expect = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((pi - expect).abs() < 1e-15, "{pi} vs {expect}");
        }
        assert_eq!(s.timestep, 1);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut s = AdamState::new(AdamConfig::default(), 3);
        let mut p = [0.3, -0.2, 7.0];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [0.3, -0.2, 7.0]);
        assert_eq!(s.timestep, 1);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let mut a = AdamState::new(AdamConfig::default(), 2);
        let mut b = a.clone();
        let (mut pa, mut pb) = ([1.0, 2.0], [1.0, 2.0]);
        a.step(&mut pa, &[0.1, -0.4]).unwrap();
        b.step(&mut pb, &[0.1, -0.4]).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(a, b);
        assert!(matches!(a.step(&mut pa, &[0.0]), Err(NnError::ShapeMismatch(_))));
    }
}
