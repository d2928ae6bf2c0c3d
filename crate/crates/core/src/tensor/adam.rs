use super::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Adam moments for a fixed set of registered parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step_count: u64,
    params: Vec<usize>,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Registers the given parameter ids.
    pub fn new(store: &ParamStore<T>, params: Vec<usize>, config: AdamConfig) -> Self {
        let first_moment = params.iter().map(|&i| vec![T::zero(); store.tensor(i).len()]).collect();
        let second_moment = params.iter().map(|&i| vec![T::zero(); store.tensor(i).len()]).collect();
        AdamState {
            config,
            step_count: 0,
            params,
            first_moment,
            second_moment,
        }
    }

    /// Registers every parameter that currently requires a gradient.
    pub fn for_trainable(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let ids = (0..store.len()).filter(|&i| store.tensor(i).requires_grad).collect();
        Self::new(store, ids, config)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn registered(&self) -> &[usize] {
        &self.params
    }

    /// One bias-corrected Adam update of every registered parameter.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(&missing) = self.params.iter().find(|&&i| store.tensor(i).grad().is_none()) {
            return Err(Error::contract(format!(
                "parameter {:?} is registered with the optimizer but has no gradient",
                store.name(missing)
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let step_size = T::from_f64(c.learning_rate / bias1);
        let bias2_sqrt = T::from_f64(bias2.sqrt());
        let eps = T::from_f64(c.epsilon);

        for (k, &id) in self.params.iter().enumerate() {
            let tensor = store.tensor_mut(id);
            let grad = tensor.grad().expect("checked above").to_vec();
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            for (((p, g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * *g;
                *v = b2 * *v + one_b2 * *g * *g;
                *p = *p - step_size * *m / ((*v).sqrt() / bias2_sqrt + eps);
            }
        }
        Ok(())
    }
}
