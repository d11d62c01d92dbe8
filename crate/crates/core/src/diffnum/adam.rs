use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::{ParamKind, ParamSet};
use super::tape::Gradients;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply decay directly to the parameters instead of adding it to the gradient.
    pub decoupled_decay: bool,
    pub decay_biases: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0005,
            decoupled_decay: false,
            decay_biases: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first_moment: IndexMap<String, Tensor>,
    second_moment: IndexMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first_moment: IndexMap::new(),
            second_moment: IndexMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first_moment.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second_moment.get(name)
    }
}

/// One Adam update with bias correction over every trainable parameter that
/// has a gradient.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .param(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
        if p.value.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{name}: parameter {:?}, gradient {:?}",
                    p.value.shape(),
                    g.shape()
                ),
            ));
        }
    }

    state.step += 1;
    let cfg = state.config.clone();
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);

    for (name, p) in params.iter_mut() {
        if !p.trainable {
            continue;
        }
        let Some(g) = grads.get(name) else { continue };
        let decay = match p.kind {
            ParamKind::Weight => cfg.weight_decay,
            ParamKind::Bias if cfg.decay_biases => cfg.weight_decay,
            ParamKind::Bias => 0.0,
        };
        let m = state
            .first_moment
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
        let v = state
            .second_moment
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));

        let values = p.value.data_mut();
        for i in 0..values.len() {
            let mut gi = g.data()[i];
            if !cfg.decoupled_decay {
                gi += decay * values[i];
            }
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            let mut update = m_hat / (v_hat.sqrt() + cfg.eps);
            if cfg.decoupled_decay {
                update += decay * values[i];
            }
            values[i] -= cfg.lr * update;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(value), ParamKind::Weight)
            .unwrap();
        p
    }

    fn grad(value: f64) -> Gradients {
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::scalar(value));
        g
    }

    #[test]
    fn first_step_closed_form() {
        let mut params = single(0.0);
        let mut state = AdamState::new(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        adam_step(&mut params, &grad(0.1), &mut state).unwrap();
        // m_hat = g and v_hat = g^2 after one step
        let expected = -0.005 * 0.1 / (0.1 + 1e-8);
        assert!((params.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
        assert!((expected + 0.005).abs() < 1e-9);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = single(1.5);
        let mut state = AdamState::new(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        adam_step(&mut params, &grad(0.0), &mut state).unwrap();
        assert_eq!(params.get("w").unwrap().data()[0], 1.5);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut params = single(-0.25);
        let mut state = AdamState::new(AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        });
        for _ in 0..5 {
            adam_step(&mut params, &grad(0.7), &mut state).unwrap();
        }
        assert_eq!(params.get("w").unwrap().data()[0], -0.25);
    }

    #[test]
    fn deterministic_replay() {
        let run = || {
            let mut params = single(0.3);
            let mut state = AdamState::new(AdamConfig::default());
            for k in 0..4 {
                adam_step(&mut params, &grad(0.1 * k as f64 - 0.2), &mut state).unwrap();
            }
            (params, state)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut params = single(0.0);
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::zeros(1, 2));
        let mut state = AdamState::new(AdamConfig::default());
        assert!(adam_step(&mut params, &g, &mut state).is_err());
        assert_eq!(state.step, 0);
    }

    #[test]
    fn coupled_decay_skips_biases_by_default() {
        let mut params = ParamSet::new();
        params
            .insert("w", Tensor::scalar(1.0), ParamKind::Weight)
            .unwrap();
        params
            .insert("b", Tensor::scalar(1.0), ParamKind::Bias)
            .unwrap();
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::scalar(0.0));
        g.insert("b".into(), Tensor::scalar(0.0));
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut params, &g, &mut state).unwrap();
        assert!(params.get("w").unwrap().data()[0] < 1.0);
        assert_eq!(params.get("b").unwrap().data()[0], 1.0);
    }

    #[test]
    fn decoupled_decay_shrinks_by_lr_times_decay() {
        let mut params = single(2.0);
        let mut state = AdamState::new(AdamConfig {
            decoupled_decay: true,
            weight_decay: 0.1,
            ..AdamConfig::default()
        });
        adam_step(&mut params, &grad(0.0), &mut state).unwrap();
        assert!((params.get("w").unwrap().data()[0] - (2.0 - 0.005 * 0.1 * 2.0)).abs() < 1e-15);
    }
}
