//! Environments and the replay buffer: a single-state stochastic-reward MDP,
//! a multi-step point-mass control task, and FIFO uniform-replay storage.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Outcome of one environment step.
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Env {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_low(&self) -> Vec<f64>;
    fn action_high(&self) -> Vec<f64>;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// Stepping a finished episode without reset is an error.
    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> Result<EnvStep>;
}

pub const TOY_A0: f64 = 0.3;
pub const TOY_A1: f64 = 0.9;
pub const TOY_NU: f64 = 5.0;
pub const TOY_SIGMA: f64 = 0.25;
pub const TOY_GAMMA: f64 = 0.99;

/// Mean reward of the single-state MDP: a cosine with slowly increasing
/// amplitude, `f(a) = [A0 + (A1 - A0)/2 * (a + 1)] * cos(nu * a)`.
pub fn toy_mean_reward(a: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&a) {
        return Err(Error::InvalidArgument(format!(
            "action {a} outside [-1, 1]"
        )));
    }
    Ok((TOY_A0 + 0.5 * (TOY_A1 - TOY_A0) * (a + 1.0)) * (TOY_NU * a).cos())
}

/// One-state infinite-horizon MDP with reward `f(a) + N(0, sigma)`.
#[derive(Debug, Clone)]
pub struct SingleStateMdp {
    pub sigma: f64,
}

impl SingleStateMdp {
    pub fn new() -> Self {
        Self { sigma: TOY_SIGMA }
    }

    /// Test hook: `sigma = 0` makes rewards exactly `f(a)`.
    pub fn with_sigma(sigma: f64) -> Self {
        Self { sigma }
    }

    pub fn sample_reward(&self, a: f64, rng: &mut dyn RngCore) -> Result<f64> {
        let mean = toy_mean_reward(a)?;
        if self.sigma == 0.0 {
            return Ok(mean);
        }
        let normal = Normal::new(mean, self.sigma).expect("valid sigma");
        Ok(normal.sample(&mut &mut *rng))
    }
}

impl Default for SingleStateMdp {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for SingleStateMdp {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn action_low(&self) -> Vec<f64> {
        vec![-1.0]
    }
    fn action_high(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0]
    }
    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> Result<EnvStep> {
        let reward = self.sample_reward(action[0], rng)?;
        Ok(EnvStep {
            next_state: vec![0.0],
            reward,
            done: false,
        })
    }
}

pub const POINTMASS_HORIZON: usize = 200;
pub const POINTMASS_STEP_GAIN: f64 = 0.1;

/// Point on a line; action nudges it by `0.1 * a`, reward is `-x^2` of the
/// pre-transition position, episodes last exactly 200 steps.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    x: f64,
    t: usize,
    needs_reset: bool,
}

impl PointMassEnv {
    pub fn new() -> Self {
        Self {
            x: 0.0,
            t: 0,
            needs_reset: true,
        }
    }
}

impl Default for PointMassEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PointMassEnv {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn action_low(&self) -> Vec<f64> {
        vec![-1.0]
    }
    fn action_high(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.x = (&mut *rng).gen_range(-1.0..=1.0);
        self.t = 0;
        self.needs_reset = false;
        vec![self.x]
    }
    fn step(&mut self, action: &[f64], _rng: &mut dyn RngCore) -> Result<EnvStep> {
        if self.needs_reset {
            return Err(Error::SteppedAfterDone);
        }
        let reward = -self.x * self.x;
        let a = action[0].clamp(-1.0, 1.0);
        self.x = (self.x + POINTMASS_STEP_GAIN * a).clamp(-1.0, 1.0);
        self.t += 1;
        let done = self.t >= POINTMASS_HORIZON;
        if done {
            self.needs_reset = true;
        }
        Ok(EnvStep {
            next_state: vec![self.x],
            reward,
            done,
        })
    }
}

/// Best achievable undiscounted episode return from `start_x`: move toward
/// zero at full speed, which removes `0.1` of position magnitude per step.
pub fn pointmass_oracle_return(start_x: f64) -> f64 {
    let mut x = start_x.clamp(-1.0, 1.0).abs();
    let mut ret = 0.0;
    for _ in 0..POINTMASS_HORIZON {
        ret -= x * x;
        x = (x - POINTMASS_STEP_GAIN).max(0.0);
        if x == 0.0 {
            break;
        }
    }
    ret
}

/// Value-iteration cross-check of [`pointmass_oracle_return`] on a uniform
/// position grid with bang-bang-or-hold actions. Grid spacing divides the
/// step size exactly so the dynamics stay on-grid.
pub fn pointmass_dp_oracle_return(start_x: f64, cells_per_step: usize) -> f64 {
    let dx = POINTMASS_STEP_GAIN / cells_per_step as f64;
    let n = (2.0 / dx).round() as usize + 1;
    let idx = |x: f64| -> usize { ((x + 1.0) / dx).round() as usize };
    // value[t][i] computed backward from the horizon
    let mut value = vec![0.0f64; n];
    let actions = [-1.0, -0.5, 0.0, 0.5, 1.0];
    for _ in 0..POINTMASS_HORIZON {
        let mut next = vec![f64::NEG_INFINITY; n];
        for i in 0..n {
            let x = -1.0 + i as f64 * dx;
            let r = -x * x;
            for &a in &actions {
                let x2 = (x + POINTMASS_STEP_GAIN * a).clamp(-1.0, 1.0);
                let v = r + value[idx(x2)];
                if v > next[i] {
                    next[i] = v;
                }
            }
        }
        value = next;
    }
    value[idx(start_x)]
}

/// One stored interaction.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO buffer with uniform sampling (with replacement).
#[derive(Debug)]
pub struct ReplayBuffer {
    storage: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            storage: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            self.storage[self.head] = transition;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    pub fn sample<'a>(
        &'a self,
        batch_size: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<&'a Transition>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = self.storage.len();
        Ok((0..batch_size)
            .map(|_| &self.storage[(&mut *rng).gen_range(0..n)])
            .collect())
    }
}
