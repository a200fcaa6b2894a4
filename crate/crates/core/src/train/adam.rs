use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OgPcl;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0 }
    }
}

/// One Adam update with bias correction at step `t >= 1`.
pub fn adam_step<T: Real>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) {
    debug_assert!(t >= 1);
    let (b1, b2) = (T::of_f64(cfg.beta1), T::of_f64(cfg.beta2));
    let lr = T::of_f64(cfg.learning_rate);
    let eps = T::of_f64(cfg.epsilon);
    let wd = T::of_f64(cfg.weight_decay);
    let c1 = T::one() - T::of_f64(cfg.beta1.powi(t as i32));
    let c2 = T::one() - T::of_f64(cfg.beta2.powi(t as i32));
    for i in 0..param.len() {
        let g = grad[i] + wd * param[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        param[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Moment buffers for every parameter of a model.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &OgPcl<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = model.params().iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        Self { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies the accumulated gradients. Refuses to touch any weight if a
    /// gradient is non-finite.
    pub fn step(&mut self, model: &mut OgPcl<T>) -> Result<()> {
        for (name, p) in model.params() {
            let g = p.grad().ok_or_else(|| Error::State(format!("{name} has no gradient buffer")))?;
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in {name} at element {i}: {}", g[i])));
            }
        }
        self.t += 1;
        for (i, (_, p)) in model.params_mut().into_iter().enumerate() {
            let g = p.grad().expect("checked above").to_vec();
            adam_step(p.data_mut(), &g, &mut self.m[i], &mut self.v[i], self.t, &self.config);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = [1.0f64, -2.0];
        let (mut m, mut v) = ([0.0, 0.0], [0.2, 0.4]);
        adam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 5, &AdamConfig::default());
        assert_eq!(p, [1.0, -2.0]);
        assert_eq!(m, [0.0, 0.0]);
        assert!((v[1] - 0.3996).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let cfg = AdamConfig { learning_rate: 0.01, ..Default::default() };
        let (mut p, mut m, mut v) = ([0.0f64], [0.0], [0.0]);
        let mut last = 0.0;
        for t in 1..=5000 {
            let before = p[0];
            adam_step(&mut p, &[-3.0], &mut m, &mut v, t, &cfg);
            last = p[0] - before;
        }
        assert!((last - 0.01).abs() < 1e-6, "{last}");
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let cfg = crate::model::ModelConfig { hidden: 2, ..Default::default() }
            .with_views(&[crate::projection::View::Top])
            .unwrap();
        let mut model = OgPcl::<f32>::new(cfg).unwrap();
        let mut adam = Adam::new(&model, AdamConfig::default());
        model.classifier_bias.accumulate_grad(&[f32::NAN, 0.0, 0.0, 0.0, 0.0]);
        let before = model.classifier_weight.clone();
        match adam.step(&mut model) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("classifier.bias")),
            other => panic!("{other:?}"),
        }
        assert_eq!(model.classifier_weight, before);
        assert_eq!(adam.steps(), 0);
    }
}
