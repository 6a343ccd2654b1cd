use std::collections::BTreeMap;

use tanet_model::TANetParams;

use crate::{Result, TrainError};

/// Adam moment estimates, one slot pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Step count; bias correction uses t after the increment.
    pub t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    /// Zero moments at t = 0 with the published hyperparameters
    /// beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(params: &TANetParams, lr: f64) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params
            .iter()
            .map(|(name, t)| (name.clone(), vec![0.0; t.numel()]))
            .collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        Some((self.m.get(name)?.as_slice(), self.v.get(name)?.as_slice()))
    }

    pub(crate) fn moments_entries(&self) -> impl Iterator<Item = (&String, &Vec<f64>, &Vec<f64>)> {
        self.m
            .iter()
            .map(move |(name, m)| (name, m, self.v.get(name).expect("aligned maps")))
    }

    pub(crate) fn restore(&mut self, name: &str, m: Vec<f64>, v: Vec<f64>) -> Result<()> {
        let slot_m = self
            .m
            .get_mut(name)
            .ok_or_else(|| TrainError::State(format!("unknown parameter {name} in state")))?;
        if slot_m.len() != m.len() {
            return Err(TrainError::State(format!("moment length mismatch for {name}")));
        }
        *slot_m = m;
        *self.v.get_mut(name).expect("aligned maps") = v;
        Ok(())
    }
}

/// One bias-corrected Adam update:
/// m̂ = m/(1-β1ᵗ), v̂ = v/(1-β2ᵗ), p ← p − lr·m̂/(√v̂+ε).
///
/// A non-finite gradient aborts with the parameter's name.
pub fn adam_step(
    params: &mut TANetParams,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
) -> Result<()> {
    for (name, grad) in grads {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NanGradient(name.clone()));
        }
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);

    for (name, grad) in grads {
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| TrainError::State(format!("no moments for parameter {name}")))?;
        let v = state.v.get_mut(name).expect("aligned maps");
        let tensor = params.get_mut(name)?;
        let data = tensor.data_mut();
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
