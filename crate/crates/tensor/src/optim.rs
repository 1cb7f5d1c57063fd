use crate::error::OptimError;
use crate::params::ParamStore;

/// Adam hyper-parameters. Weight decay is decoupled: it shrinks the weights
/// directly instead of flowing through the moment estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first/second moments per parameter and a step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = store.ids().map(|id| store.value(id).len()).collect();
        AdamState {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. Gradients are left
    /// in place; callers zero them before the next accumulation.
    pub fn update(&mut self, store: &mut ParamStore) -> Result<(), OptimError> {
        if store.len() != self.first.len() {
            return Err(OptimError::StateMismatch(format!(
                "{} parameters vs {} moment slots",
                store.len(),
                self.first.len()
            )));
        }
        if let Some(id) = store.ids().find(|&id| !store.has_grad(id)) {
            return Err(OptimError::MissingGradient(store.name(id).to_string()));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, (name, value, grad, _)) in store.entries_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            if m.len() != value.len() {
                return Err(OptimError::StateMismatch(name.to_string()));
            }
            for (((p, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *p -= c.lr * c.weight_decay * *p;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
