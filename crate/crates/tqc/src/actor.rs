//! Squashed-Gaussian policy, policy loss against the nontruncated critic
//! mean, and entropy-temperature adaptation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::{concat_state_action, QuantileCritic};
use crate::nn::{self, DenseNetSpec, ParamVector, Trace};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Heuristic entropy target `H_T = -dim(A)`.
pub fn target_entropy(action_dim: usize) -> f64 {
    -(action_dim as f64)
}

/// Entropy temperature `alpha = exp(log_alpha)`, adapted toward a target
/// entropy by gradient descent on `log_alpha`.
#[derive(Debug, Clone)]
pub struct TemperatureState {
    pub log_alpha: f64,
    pub target_entropy: f64,
}

impl TemperatureState {
    pub fn new(action_dim: usize) -> Self {
        Self {
            log_alpha: 0.0, // alpha = 1
            target_entropy: target_entropy(action_dim),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

/// `J(alpha) = mean(log_alpha * (-log pi - H_T))`.
pub fn temperature_loss(log_probs: &[f64], temp: &TemperatureState) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::InvalidArgument("empty log-prob batch".into()));
    }
    let mean: f64 = log_probs
        .iter()
        .map(|&lp| temp.log_alpha * (-lp - temp.target_entropy))
        .sum::<f64>()
        / log_probs.len() as f64;
    Ok(mean)
}

/// `dJ/d(log_alpha)`; positive when the batch entropy estimate exceeds the
/// target, so a descent step lowers alpha, and vice versa.
pub fn temperature_grad(log_probs: &[f64], temp: &TemperatureState) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::InvalidArgument("empty log-prob batch".into()));
    }
    Ok(log_probs
        .iter()
        .map(|&lp| -lp - temp.target_entropy)
        .sum::<f64>()
        / log_probs.len() as f64)
}

/// Stochastic policy: an MLP produces `(mean, raw log-std)` per action
/// dimension; actions are `tanh`-squashed and affinely mapped to the bounds.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub spec: DenseNetSpec,
    pub params: ParamVector,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl GaussianPolicy {
    pub fn init<R: Rng>(
        state_dim: usize,
        hidden: Vec<usize>,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let action_dim = action_low.len();
        if action_dim == 0 || action_high.len() != action_dim {
            return Err(Error::InvalidArgument("inconsistent action bounds".into()));
        }
        let spec = DenseNetSpec::new(state_dim, hidden, 2 * action_dim)?;
        let params = ParamVector::init_uniform(&spec, rng);
        Ok(Self {
            spec,
            params,
            action_low,
            action_high,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    fn scale(&self, j: usize) -> f64 {
        0.5 * (self.action_high[j] - self.action_low[j])
    }

    fn center(&self, j: usize) -> f64 {
        0.5 * (self.action_high[j] + self.action_low[j])
    }

    /// One stochastic action with its log-density under the squashed policy.
    pub fn sample_action<R: Rng>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let a = self.action_dim();
        let noise: Vec<f64> = (0..a).map(|_| rng.sample(StandardNormal)).collect();
        let states = ArrayView2::from_shape((1, state.len()), state)
            .map_err(|_| Error::ShapeMismatch { expected: self.spec.input_dim, got: state.len() })?;
        let noise_arr = Array2::from_shape_vec((1, a), noise).expect("shape");
        let batch = self.sample_batch_given_noise(states, noise_arr)?;
        Ok((batch.actions.row(0).to_vec(), batch.log_probs[0]))
    }

    /// Mode of the policy: `tanh(mean)` scaled to the bounds, no sampling.
    pub fn deterministic_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let out = nn::forward1(&self.spec, &self.params, state)?;
        let a = self.action_dim();
        Ok((0..a)
            .map(|j| out[j].tanh() * self.scale(j) + self.center(j))
            .collect())
    }

    /// Reparameterized batch sample: draws one standard-normal noise vector
    /// per state and returns everything needed to differentiate through the
    /// actions later.
    pub fn sample_batch<R: Rng>(&self, states: ArrayView2<f64>, rng: &mut R) -> Result<PolicySampleBatch> {
        let noise =
            Array2::from_shape_fn((states.nrows(), self.action_dim()), |_| rng.sample(StandardNormal));
        self.sample_batch_given_noise(states, noise)
    }

    /// Deterministic counterpart of [`Self::sample_batch`] for a fixed noise
    /// matrix; used by gradient checks that must freeze the reparameterization
    /// noise.
    pub fn sample_batch_given_noise(
        &self,
        states: ArrayView2<f64>,
        noise: Array2<f64>,
    ) -> Result<PolicySampleBatch> {
        let a = self.action_dim();
        let b = states.nrows();
        let (out, trace) = nn::forward(&self.spec, &self.params, states)?;
        let mut actions = Array2::zeros((b, a));
        let mut tanh_u = Array2::zeros((b, a));
        let mut sigma = Array2::zeros((b, a));
        let mut clamp_active = Array2::from_elem((b, a), false);
        let mut log_probs = Array1::zeros(b);
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        for i in 0..b {
            let mut lp = 0.0;
            for j in 0..a {
                let mu = out[[i, j]];
                let raw = out[[i, a + j]];
                let clamped = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                clamp_active[[i, j]] = raw != clamped;
                let s = clamped.exp();
                let xi = noise[[i, j]];
                let u = mu + s * xi;
                let t = u.tanh();
                tanh_u[[i, j]] = t;
                sigma[[i, j]] = s;
                actions[[i, j]] = t * self.scale(j) + self.center(j);
                // log(1 - tanh^2 u) = 2 (ln 2 - u - softplus(-2u))
                let log_one_minus_t2 =
                    2.0 * (std::f64::consts::LN_2 - u - (-2.0 * u).exp().ln_1p());
                lp += -0.5 * xi * xi - 0.5 * ln_2pi - clamped
                    - log_one_minus_t2
                    - self.scale(j).ln();
            }
            log_probs[i] = lp;
        }
        Ok(PolicySampleBatch {
            actions,
            log_probs,
            noise,
            tanh_u,
            sigma,
            clamp_active,
            trace,
        })
    }
}

/// One reparameterized sample per state, with the intermediates needed to
/// push gradients back into the policy parameters.
pub struct PolicySampleBatch {
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    noise: Array2<f64>,
    tanh_u: Array2<f64>,
    sigma: Array2<f64>,
    clamp_active: Array2<bool>,
    trace: Trace,
}

/// Policy loss value and its gradient.
pub struct PolicyLossReport {
    pub loss: f64,
    pub grad: ParamVector,
    pub mean_log_prob: f64,
}

/// `J_pi = mean_B [ alpha * log pi(a|s) - 1/(NM) * sum_{n,m} theta_n^m(s, a) ]`
/// over fresh reparameterized actions, differentiated with respect to the
/// policy parameters. Critic atoms are not truncated here and the critics are
/// the online (non-target) networks.
pub fn policy_loss_and_grad(
    policy: &GaussianPolicy,
    critics: &[QuantileCritic],
    states: ArrayView2<f64>,
    alpha: f64,
    mut sample: PolicySampleBatch,
) -> Result<PolicyLossReport> {
    if critics.is_empty() {
        return Err(Error::InvalidArgument("need at least one critic".into()));
    }
    let b = states.nrows();
    let a = policy.action_dim();
    let n = critics.len();

    // mean critic atom over the ensemble, plus dL/d(action)
    let sa = concat_state_action(states, sample.actions.view());
    let mut action_grad: Array2<f64> = Array2::zeros((b, a));
    let mut q_mean_total = 0.0;
    for critic in critics {
        let m = critic.num_atoms();
        let (atoms, mut trace) = critic.forward(sa.view())?;
        q_mean_total += atoms.sum() / (b * n * m) as f64;
        let upstream = Array2::from_elem((b, m), -1.0 / (b * n * m) as f64);
        let (_, input_grad) = nn::backward(&mut trace, &critic.params, upstream.view())?;
        let s_dim = states.ncols();
        action_grad += &input_grad.slice(ndarray::s![.., s_dim..]);
    }

    let mean_log_prob = sample.log_probs.mean().unwrap_or(0.0);
    let loss = alpha * mean_log_prob - q_mean_total;

    // chain into the policy outputs (mu, raw log-std), with frozen noise
    let mut upstream = Array2::zeros((b, 2 * a));
    let per_sample = alpha / b as f64;
    for i in 0..b {
        for j in 0..a {
            let t = sample.tanh_u[[i, j]];
            let s = sample.sigma[[i, j]];
            let xi = sample.noise[[i, j]];
            // d/du of [action path + entropy path]
            let g_u = action_grad[[i, j]] * (1.0 - t * t) * policy.scale(j) + per_sample * 2.0 * t;
            upstream[[i, j]] = g_u;
            if !sample.clamp_active[[i, j]] {
                upstream[[i, a + j]] = g_u * s * xi - per_sample;
            }
        }
    }
    let (grad, _) = nn::backward(&mut sample.trace, &policy.params, upstream.view())?;
    Ok(PolicyLossReport {
        loss,
        grad,
        mean_log_prob,
    })
}

/// Mean over the batch of the ensemble-average critic atom; convenience for
/// reporting the policy objective without gradients.
pub fn ensemble_mean_value(critics: &[QuantileCritic], sa: ArrayView2<f64>) -> Result<f64> {
    let mut total = 0.0;
    for critic in critics {
        let (atoms, _) = critic.forward(sa)?;
        total += atoms.mean_axis(Axis(1)).unwrap().mean().unwrap();
    }
    Ok(total / critics.len() as f64)
}
