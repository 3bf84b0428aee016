//! Network wrappers shared by the actor and the training loop.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::Result;
use crate::nn::{self, DenseNetSpec, ParamVector, Trace};

/// A critic mapping `(state, action)` to `M` atom locations.
#[derive(Debug, Clone)]
pub struct QuantileCritic {
    pub spec: DenseNetSpec,
    pub params: ParamVector,
}

impl QuantileCritic {
    pub fn init<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        num_atoms: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = DenseNetSpec::new(state_dim + action_dim, hidden.to_vec(), num_atoms)?;
        let params = ParamVector::init_uniform(&spec, rng);
        Ok(Self { spec, params })
    }

    pub fn num_atoms(&self) -> usize {
        self.spec.output_dim
    }

    /// Batched atom prediction over rows of `[state | action]`.
    pub fn forward(&self, state_action: ArrayView2<f64>) -> Result<(Array2<f64>, Trace)> {
        nn::forward(&self.spec, &self.params, state_action)
    }
}

/// Concatenates state and action batches row-wise into `[state | action]`.
pub fn concat_state_action(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    let b = states.nrows();
    let s = states.ncols();
    let a = actions.ncols();
    let mut out = Array2::zeros((b, s + a));
    out.slice_mut(ndarray::s![.., ..s]).assign(&states);
    out.slice_mut(ndarray::s![.., s..]).assign(&actions);
    out
}
