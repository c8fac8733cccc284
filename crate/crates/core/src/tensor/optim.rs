//! Named parameter storage and the RMSprop update rule.
//!
//! Parameters live outside any [`Graph`]: each training step clones them
//! into a fresh graph as labeled leaves via [`ParamStore::bind`], runs
//! forward/backward, then folds the labeled gradients back in with
//! [`ParamStore::rmsprop_step`]. The store also carries the optimizer's
//! per-parameter state so a checkpoint restart continues the exact same
//! trajectory.

use std::collections::BTreeMap;

use super::{Graph, Shape, Tensor, Var};
use crate::error::{Error, Result};

/// RMSprop hyperparameters. The update per element, given gradient `g`:
///
/// ```text
/// v   ← decay·v + (1 − decay)·g²
/// buf ← momentum·buf + g / (√v + eps)
/// p   ← p − lr·buf
/// ```
#[derive(Clone, Copy, Debug)]
pub struct RmspropConfig {
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        RmspropConfig { lr: 1e-5, momentum: 0.9, decay: 0.99, eps: 1e-8 }
    }
}

pub(crate) struct ParamState {
    pub value: Tensor,
    pub square_avg: Vec<f64>,
    pub momentum: Vec<f64>,
}

/// All trainable tensors of a model, keyed by name. BTreeMap keeps
/// iteration (and therefore update and serialization order) deterministic.
#[derive(Default)]
pub struct ParamStore {
    params: BTreeMap<String, ParamState>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore { params: BTreeMap::new() }
    }

    /// Register a parameter with zeroed optimizer state. Re-registering an
    /// existing name is a logic error.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::State(format!("parameter {name:?} registered twice")));
        }
        let n = value.shape().count();
        self.params.insert(
            name.to_string(),
            ParamState { value, square_avg: vec![0.0; n], momentum: vec![0.0; n] },
        );
        Ok(())
    }

    /// Clone a parameter into `g` as a labeled, gradient-tracked leaf.
    pub fn bind(&self, g: &mut Graph, name: &str) -> Result<Var> {
        let state = self
            .params
            .get(name)
            .ok_or_else(|| Error::State(format!("unknown parameter {name:?}")))?;
        Ok(g.param(state.value.clone(), name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.shape().count()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn shape(&self, name: &str) -> Option<Shape> {
        self.params.get(name).map(|p| p.value.shape())
    }

    pub(crate) fn entries(&self) -> impl Iterator<Item = (&String, &ParamState)> {
        self.params.iter()
    }

    pub(crate) fn restore(
        &mut self,
        name: &str,
        value: Tensor,
        square_avg: Vec<f64>,
        momentum: Vec<f64>,
    ) -> Result<()> {
        let state = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("checkpoint parameter {name:?} not in model")))?;
        if state.value.shape() != value.shape() {
            return Err(Error::State(format!(
                "checkpoint parameter {name:?} has shape {} but model expects {}",
                value.shape(),
                state.value.shape()
            )));
        }
        state.value = value;
        state.square_avg = square_avg;
        state.momentum = momentum;
        Ok(())
    }

    /// Apply one RMSprop update from the labeled gradients in `g`. Every
    /// labeled leaf must name a stored parameter and carry a gradient;
    /// parameters not bound in this graph are left untouched.
    pub fn rmsprop_step(&mut self, g: &Graph, cfg: &RmspropConfig) -> Result<()> {
        for (name, grad) in g.labeled_grads() {
            let grad = grad
                .ok_or_else(|| Error::State(format!("parameter {name:?} has no gradient; run backward first")))?;
            let state = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::State(format!("graph has unknown parameter label {name:?}")))?;
            if grad.len() != state.square_avg.len() {
                return Err(Error::State(format!("gradient size mismatch for parameter {name:?}")));
            }
            let values = state.value.data_mut();
            for i in 0..grad.len() {
                let gi = grad[i];
                state.square_avg[i] = cfg.decay * state.square_avg[i] + (1.0 - cfg.decay) * gi * gi;
                state.momentum[i] =
                    cfg.momentum * state.momentum[i] + gi / (state.square_avg[i].sqrt() + cfg.eps);
                values[i] -= cfg.lr * state.momentum[i];
            }
        }
        Ok(())
    }
}
