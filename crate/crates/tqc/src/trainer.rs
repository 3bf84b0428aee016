//! Off-policy training loop: replay-driven actor-critic with distributional
//! ensemble critics, EMA target networks, and adaptive entropy temperature.
//!
//! Every environment step triggers one gradient phase in a fixed order:
//! temperature, policy, target construction, critic updates, EMA. Targets are
//! always built from the already-updated policy and temperature, and are
//! frozen before the first critic changes.

use std::collections::VecDeque;
use std::io::Write;
use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actor::{self, GaussianPolicy, TemperatureState};
use crate::dist::{self, TargetSets, TargetStrategy};
use crate::env::{Env, PointMassEnv, ReplayBuffer, SingleStateMdp, Transition};
use crate::error::{Error, Result};
use crate::models::{concat_state_action, QuantileCritic};
use crate::nn::{self, AdamState, ParamVector};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub env: String,
    pub seed: u64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    /// EMA coefficient on the online network (`target += beta * (online - target)`).
    pub ema_beta: f64,
    pub lr: f64,
    pub num_critics: usize,
    pub num_atoms: usize,
    pub drop_per_critic: usize,
    pub strategy: String,
    pub kappa: f64,
    pub critic_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Episodes are cut off after this many steps if the environment does
    /// not terminate on its own.
    pub eval_max_steps: usize,
    /// Number of recent minibatches over which drop shares are averaged.
    pub diagnostics_window: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: "pointmass".into(),
            seed: 0,
            total_steps: 30_000,
            warmup_steps: 1000,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            gamma: 0.99,
            ema_beta: 0.005,
            lr: 3e-4,
            num_critics: 5,
            num_atoms: 25,
            drop_per_critic: 2,
            strategy: "tqc".into(),
            kappa: 1.0,
            critic_hidden: vec![512, 512, 512],
            policy_hidden: vec![256, 256],
            eval_interval: 1000,
            eval_episodes: 10,
            eval_max_steps: 200,
            diagnostics_window: 100,
            out_dir: None,
        }
    }
}

fn parse_usize_list(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("invalid size list entry '{s}'")))
        })
        .collect()
}

impl TrainConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what} value '{value}'"));
        match key {
            "env" => self.env = value.to_string(),
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "total_steps" => self.total_steps = value.parse().map_err(|_| bad("total_steps"))?,
            "warmup_steps" => {
                self.warmup_steps = value.parse().map_err(|_| bad("warmup_steps"))?
            }
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "buffer_capacity" => {
                self.buffer_capacity = value.parse().map_err(|_| bad("buffer_capacity"))?
            }
            "gamma" => self.gamma = value.parse().map_err(|_| bad("gamma"))?,
            "ema_beta" => self.ema_beta = value.parse().map_err(|_| bad("ema_beta"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("lr"))?,
            "num_critics" => self.num_critics = value.parse().map_err(|_| bad("num_critics"))?,
            "num_atoms" => self.num_atoms = value.parse().map_err(|_| bad("num_atoms"))?,
            "drop_per_critic" => {
                self.drop_per_critic = value.parse().map_err(|_| bad("drop_per_critic"))?
            }
            "strategy" => self.strategy = value.to_string(),
            "kappa" => self.kappa = value.parse().map_err(|_| bad("kappa"))?,
            "critic_hidden" => self.critic_hidden = parse_usize_list(value)?,
            "policy_hidden" => self.policy_hidden = parse_usize_list(value)?,
            "eval_interval" => {
                self.eval_interval = value.parse().map_err(|_| bad("eval_interval"))?
            }
            "eval_episodes" => {
                self.eval_episodes = value.parse().map_err(|_| bad("eval_episodes"))?
            }
            "eval_max_steps" => {
                self.eval_max_steps = value.parse().map_err(|_| bad("eval_max_steps"))?
            }
            "diagnostics_window" => {
                self.diagnostics_window = value.parse().map_err(|_| bad("diagnostics_window"))?
            }
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Reads a flat `key = value` file; `#` starts a comment.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The exact settings in effect, in `key = value` form.
    pub fn snapshot(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("env", self.env.clone());
        kv("seed", self.seed.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("warmup_steps", self.warmup_steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("gamma", self.gamma.to_string());
        kv("ema_beta", self.ema_beta.to_string());
        kv("lr", self.lr.to_string());
        kv("num_critics", self.num_critics.to_string());
        kv("num_atoms", self.num_atoms.to_string());
        kv("drop_per_critic", self.drop_per_critic.to_string());
        kv("strategy", self.strategy.clone());
        kv("kappa", self.kappa.to_string());
        kv("critic_hidden", list(&self.critic_hidden));
        kv("policy_hidden", list(&self.policy_hidden));
        kv("eval_interval", self.eval_interval.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("eval_max_steps", self.eval_max_steps.to_string());
        kv("diagnostics_window", self.diagnostics_window.to_string());
        if let Some(dir) = &self.out_dir {
            kv("out_dir", dir.display().to_string());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_critics == 0 || self.num_atoms == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "num_critics, num_atoms and batch_size must be positive".into(),
            ));
        }
        if self.drop_per_critic >= self.num_atoms {
            return Err(Error::Config(format!(
                "drop_per_critic ({}) must be below num_atoms ({})",
                self.drop_per_critic, self.num_atoms
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_beta) {
            return Err(Error::Config("ema_beta must be in [0, 1]".into()));
        }
        TargetStrategy::parse(&self.strategy, self.drop_per_critic)?;
        make_env(&self.env)?;
        Ok(())
    }
}

pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "pointmass" => Ok(Box::new(PointMassEnv::new())),
        "toy" => Ok(Box::new(SingleStateMdp::new())),
        other => Err(Error::Config(format!(
            "unknown env '{other}' (expected pointmass or toy)"
        ))),
    }
}

/// One evaluation round: deterministic policy, fresh environment instance.
#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub step: usize,
    pub returns: Vec<f64>,
    pub start_states: Vec<Vec<f64>>,
}

impl EvalPoint {
    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }
}

/// Window-averaged share of dropped target atoms contributed by each critic,
/// both by critic index and after sorting each minibatch's shares descending.
#[derive(Debug, Clone)]
pub struct DropShareSummary {
    pub unsorted: Vec<f64>,
    pub sorted: Vec<f64>,
}

/// Per-phase numbers surfaced for tests and logging.
#[derive(Debug, Clone)]
pub struct PhaseStats {
    pub alpha_used_for_targets: f64,
    pub temperature_grad: f64,
    pub policy_loss: f64,
    pub mean_critic_loss: f64,
    pub mean_next_log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub evals: Vec<EvalPoint>,
    pub drop_shares: Option<DropShareSummary>,
    pub final_alpha: f64,
    pub gradient_phases: usize,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub policy: GaussianPolicy,
    pub critics: Vec<QuantileCritic>,
    pub target_critics: Vec<QuantileCritic>,
    pub temperature: TemperatureState,
    strategy: TargetStrategy,
    fractions: Vec<f64>,
    buffer: ReplayBuffer,
    env: Box<dyn Env>,
    rng: ChaCha8Rng,
    policy_opt: AdamState,
    critic_opts: Vec<AdamState>,
    temp_opt: AdamState,
    drop_share_window: VecDeque<Vec<f64>>,
    state: Vec<f64>,
    gradient_phases: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut env = make_env(&cfg.env)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let state_dim = env.state_dim();
        let action_dim = env.action_dim();
        let policy = GaussianPolicy::init(
            state_dim,
            cfg.policy_hidden.clone(),
            env.action_low(),
            env.action_high(),
            &mut rng,
        )?;
        let critics: Vec<QuantileCritic> = (0..cfg.num_critics)
            .map(|_| {
                QuantileCritic::init(
                    state_dim,
                    action_dim,
                    &cfg.critic_hidden,
                    cfg.num_atoms,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        // targets start as exact copies of the online critics
        let target_critics = critics.clone();
        let strategy = TargetStrategy::parse(&cfg.strategy, cfg.drop_per_critic)?;
        let fractions = dist::quantile_fractions(cfg.num_atoms)?;
        let policy_opt = AdamState::new(policy.params.len(), cfg.lr);
        let critic_opts = critics
            .iter()
            .map(|c| AdamState::new(c.params.len(), cfg.lr))
            .collect();
        let temp_opt = AdamState::new(1, cfg.lr);
        let temperature = TemperatureState::new(action_dim);
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        let state = env.reset(&mut rng);
        Ok(Self {
            cfg,
            policy,
            critics,
            target_critics,
            temperature,
            strategy,
            fractions,
            buffer,
            env,
            rng,
            policy_opt,
            critic_opts,
            temp_opt,
            drop_share_window: VecDeque::new(),
            state,
            gradient_phases: 0,
        })
    }

    fn random_action(&mut self) -> Vec<f64> {
        let lo = self.env.action_low();
        let hi = self.env.action_high();
        lo.iter()
            .zip(&hi)
            .map(|(&l, &h)| self.rng.gen_range(l..=h))
            .collect()
    }

    /// One environment interaction; random actions during warmup.
    fn env_step(&mut self, step: usize) -> Result<()> {
        let action = if step < self.cfg.warmup_steps {
            self.random_action()
        } else {
            self.policy.sample_action(&self.state, &mut self.rng)?.0
        };
        let outcome = self.env.step(&action, &mut self.rng)?;
        self.buffer.push(Transition {
            state: self.state.clone(),
            action,
            reward: outcome.reward,
            next_state: outcome.next_state.clone(),
            done: outcome.done,
        });
        self.state = if outcome.done {
            self.env.reset(&mut self.rng)
        } else {
            outcome.next_state
        };
        Ok(())
    }

    /// Builds per-transition target atom sets from the target critics and the
    /// current (already updated) policy and temperature, and records the
    /// pooled-truncation drop shares for the minibatch.
    fn build_batch_targets(
        &mut self,
        batch: &MiniBatch,
    ) -> Result<(Vec<TargetSets>, f64)> {
        let alpha = self.temperature.alpha();
        let next_sample = self
            .policy
            .sample_batch(batch.next_states.view(), &mut self.rng)?;
        let sa_next = concat_state_action(batch.next_states.view(), next_sample.actions.view());
        let target_atoms: Vec<Array2<f64>> = self
            .target_critics
            .iter()
            .map(|c| c.forward(sa_next.view()).map(|(a, _)| a))
            .collect::<Result<_>>()?;

        let n = self.critics.len();
        let b = batch.rewards.len();
        let mut sets = Vec::with_capacity(b);
        let mut dropped = vec![0usize; n];
        let mut mean_logp = 0.0;
        for i in 0..b {
            let atoms: Vec<Vec<f64>> = target_atoms.iter().map(|a| a.row(i).to_vec()).collect();
            let t = dist::build_target_distribution(
                self.strategy,
                &atoms,
                batch.rewards[i],
                batch.dones[i],
                self.cfg.gamma,
                alpha,
                next_sample.log_probs[i],
            )?;
            for (acc, &d) in dropped.iter_mut().zip(&t.dropped_per_critic) {
                *acc += d;
            }
            mean_logp += next_sample.log_probs[i] / b as f64;
            sets.push(t);
        }
        let total: usize = dropped.iter().sum();
        if total > 0 {
            let shares: Vec<f64> = dropped.iter().map(|&d| d as f64 / total as f64).collect();
            self.drop_share_window.push_back(shares);
            while self.drop_share_window.len() > self.cfg.diagnostics_window {
                self.drop_share_window.pop_front();
            }
        }
        Ok((sets, mean_logp))
    }

    /// One gradient phase on a sampled minibatch, in the fixed order:
    /// temperature, policy, targets, critics, EMA.
    pub fn gradient_phase(&mut self) -> Result<PhaseStats> {
        let batch = self.sample_minibatch()?;

        // temperature and policy share one action sample per state
        let sample = self.policy.sample_batch(batch.states.view(), &mut self.rng)?;
        let log_probs: Vec<f64> = sample.log_probs.iter().copied().collect();
        let temp_grad = actor::temperature_grad(&log_probs, &self.temperature)?;
        let mut log_alpha = [self.temperature.log_alpha];
        self.temp_opt.step(&mut log_alpha, &[temp_grad])?;
        self.temperature.log_alpha = log_alpha[0];

        let alpha = self.temperature.alpha();
        let report = actor::policy_loss_and_grad(
            &self.policy,
            &self.critics,
            batch.states.view(),
            alpha,
            sample,
        )?;
        self.policy_opt
            .step(self.policy.params.as_mut_slice(), report.grad.as_slice())?;

        // targets are frozen here, before any critic changes
        let (targets, mean_next_log_prob) = self.build_batch_targets(&batch)?;

        let sa = concat_state_action(batch.states.view(), batch.actions.view());
        let b = batch.rewards.len();
        let n_critics = self.critics.len() as f64;
        let mut mean_critic_loss = 0.0;
        for (ci, critic) in self.critics.iter_mut().enumerate() {
            let (pred, mut trace) = critic.forward(sa.view())?;
            let mut upstream = Array2::zeros(pred.raw_dim());
            let mut loss = 0.0;
            for i in 0..b {
                let row = pred.row(i).to_vec();
                let target = &targets[i].per_critic[ci];
                loss +=
                    dist::critic_loss(&row, target, &self.fractions, self.cfg.kappa)? / b as f64;
                let g = dist::critic_loss_grad(&row, target, &self.fractions, self.cfg.kappa)?;
                for (m, &gm) in g.iter().enumerate() {
                    upstream[[i, m]] = gm / b as f64;
                }
            }
            let (grads, _) = nn::backward(&mut trace, &critic.params, upstream.view())?;
            self.critic_opts[ci].step(critic.params.as_mut_slice(), grads.as_slice())?;
            mean_critic_loss += loss / n_critics;
        }

        for (target, online) in self.target_critics.iter_mut().zip(&self.critics) {
            nn::ema_update(&mut target.params, &online.params, self.cfg.ema_beta)?;
        }
        self.gradient_phases += 1;
        Ok(PhaseStats {
            alpha_used_for_targets: alpha,
            temperature_grad: temp_grad,
            policy_loss: report.loss,
            mean_critic_loss,
            mean_next_log_prob,
        })
    }

    fn sample_minibatch(&mut self) -> Result<MiniBatch> {
        let b = self.cfg.batch_size;
        let refs = self.buffer.sample(b, &mut self.rng)?;
        let s_dim = self.env.state_dim();
        let a_dim = self.env.action_dim();
        let mut states = Array2::zeros((b, s_dim));
        let mut actions = Array2::zeros((b, a_dim));
        let mut next_states = Array2::zeros((b, s_dim));
        let mut rewards = Vec::with_capacity(b);
        let mut dones = Vec::with_capacity(b);
        for (i, t) in refs.iter().enumerate() {
            for (j, &v) in t.state.iter().enumerate() {
                states[[i, j]] = v;
            }
            for (j, &v) in t.action.iter().enumerate() {
                actions[[i, j]] = v;
            }
            for (j, &v) in t.next_state.iter().enumerate() {
                next_states[[i, j]] = v;
            }
            rewards.push(t.reward);
            dones.push(t.done);
        }
        Ok(MiniBatch {
            states,
            actions,
            next_states,
            rewards,
            dones,
        })
    }

    /// Runs `eval_episodes` deterministic episodes on a fresh environment.
    pub fn evaluate(&self, step: usize) -> Result<EvalPoint> {
        let mut env = make_env(&self.cfg.env)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5EED_EA71 ^ step as u64);
        let mut returns = Vec::with_capacity(self.cfg.eval_episodes);
        let mut start_states = Vec::with_capacity(self.cfg.eval_episodes);
        for _ in 0..self.cfg.eval_episodes {
            let mut state = env.reset(&mut rng);
            start_states.push(state.clone());
            let mut total = 0.0;
            for _ in 0..self.cfg.eval_max_steps {
                let action = self.policy.deterministic_action(&state)?;
                let outcome = env.step(&action, &mut rng)?;
                total += outcome.reward;
                if outcome.done {
                    break;
                }
                state = outcome.next_state;
            }
            returns.push(total);
        }
        Ok(EvalPoint {
            step,
            returns,
            start_states,
        })
    }

    pub fn drop_share_summary(&self) -> Option<DropShareSummary> {
        if self.drop_share_window.is_empty() {
            return None;
        }
        let n = self.critics.len();
        let w = self.drop_share_window.len() as f64;
        let mut unsorted = vec![0.0; n];
        let mut sorted = vec![0.0; n];
        for shares in &self.drop_share_window {
            let mut desc = shares.clone();
            desc.sort_by(|a, b| b.partial_cmp(a).expect("finite shares"));
            for i in 0..n {
                unsorted[i] += shares[i] / w;
                sorted[i] += desc[i] / w;
            }
        }
        Some(DropShareSummary { unsorted, sorted })
    }

    /// Full training run; artifacts go to `out_dir` when configured.
    pub fn run(&mut self) -> Result<TrainReport> {
        let mut artifacts = match &self.cfg.out_dir {
            Some(dir) => Some(RunArtifacts::create(dir, &self.cfg)?),
            None => None,
        };
        let mut evals = Vec::new();
        for step in 0..self.cfg.total_steps {
            self.env_step(step)?;
            if step >= self.cfg.warmup_steps && self.buffer.len() >= self.cfg.batch_size {
                if let Err(e) = self.gradient_phase() {
                    if let Some(a) = &mut artifacts {
                        a.write_failure(step, &e)?;
                    }
                    return Err(Error::NumericFailure {
                        step: step as u64,
                        what: e.to_string(),
                    });
                }
            }
            if (step + 1) % self.cfg.eval_interval == 0 || step + 1 == self.cfg.total_steps {
                let point = self.evaluate(step + 1)?;
                if let Some(a) = &mut artifacts {
                    a.append_eval(&point)?;
                    if let Some(shares) = self.drop_share_summary() {
                        a.append_drop_shares(point.step, &shares)?;
                    }
                }
                evals.push(point);
            }
        }
        if let Some(a) = &mut artifacts {
            a.write_final_params(&self.policy.params, &self.critics)?;
        }
        Ok(TrainReport {
            evals,
            drop_shares: self.drop_share_summary(),
            final_alpha: self.temperature.alpha(),
            gradient_phases: self.gradient_phases,
        })
    }
}

struct MiniBatch {
    states: Array2<f64>,
    actions: Array2<f64>,
    next_states: Array2<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

/// Run directory layout: config snapshot, learning curve, drop-share
/// diagnostics, final parameters.
struct RunArtifacts {
    dir: PathBuf,
    curve: std::fs::File,
    diagnostics: std::fs::File,
    eval_episodes: usize,
}

impl RunArtifacts {
    fn create(dir: &std::path::Path, cfg: &TrainConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), cfg.snapshot())?;
        let mut curve = std::fs::File::create(dir.join("learning_curve.csv"))?;
        let eps: Vec<String> = (1..=cfg.eval_episodes)
            .map(|i| format!("eval_ep{i}"))
            .collect();
        writeln!(curve, "step,eval_mean,{}", eps.join(","))?;
        let mut diagnostics = std::fs::File::create(dir.join("drop_shares.csv"))?;
        writeln!(
            diagnostics,
            "step,critic_index,unsorted_share,sorted_rank,sorted_share"
        )?;
        Ok(Self {
            dir: dir.to_path_buf(),
            curve,
            diagnostics,
            eval_episodes: cfg.eval_episodes,
        })
    }

    fn append_eval(&mut self, point: &EvalPoint) -> Result<()> {
        debug_assert_eq!(point.returns.len(), self.eval_episodes);
        let eps: Vec<String> = point.returns.iter().map(|r| r.to_string()).collect();
        writeln!(
            self.curve,
            "{},{},{}",
            point.step,
            point.mean_return(),
            eps.join(",")
        )?;
        Ok(())
    }

    fn append_drop_shares(&mut self, step: usize, shares: &DropShareSummary) -> Result<()> {
        for (i, (&u, &s)) in shares.unsorted.iter().zip(&shares.sorted).enumerate() {
            writeln!(self.diagnostics, "{step},{i},{u},{i},{s}")?;
        }
        Ok(())
    }

    fn write_failure(&mut self, step: usize, err: &Error) -> Result<()> {
        std::fs::write(
            self.dir.join("failure.txt"),
            format!("gradient phase failed at step {step}: {err}\n"),
        )?;
        Ok(())
    }

    fn write_final_params(
        &mut self,
        policy: &ParamVector,
        critics: &[QuantileCritic],
    ) -> Result<()> {
        let mut f = std::fs::File::create(self.dir.join("final_params.txt"))?;
        let dump = |f: &mut std::fs::File, name: &str, p: &ParamVector| -> Result<()> {
            write!(f, "{name}")?;
            for v in p.as_slice() {
                write!(f, " {v}")?;
            }
            writeln!(f)?;
            Ok(())
        };
        dump(&mut f, "policy", policy)?;
        for (i, c) in critics.iter().enumerate() {
            dump(&mut f, &format!("critic{i}"), &c.params)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            env: "pointmass".into(),
            total_steps: 80,
            warmup_steps: 20,
            batch_size: 16,
            buffer_capacity: 1000,
            num_critics: 3,
            num_atoms: 5,
            drop_per_critic: 1,
            critic_hidden: vec![8, 8],
            policy_hidden: vec![8, 8],
            eval_interval: 40,
            eval_episodes: 2,
            eval_max_steps: 20,
            diagnostics_window: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_set_and_snapshot_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("num_critics", "7").unwrap();
        cfg.set("critic_hidden", "32, 16").unwrap();
        cfg.set("strategy", "qb").unwrap();
        cfg.set("gamma", "0.9").unwrap();
        assert_eq!(cfg.num_critics, 7);
        assert_eq!(cfg.critic_hidden, vec![32, 16]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, cfg.snapshot()).unwrap();
        let restored = TrainConfig::from_file(&path).unwrap();
        assert_eq!(restored.num_critics, 7);
        assert_eq!(restored.critic_hidden, vec![32, 16]);
        assert_eq!(restored.strategy, "qb");
        assert_eq!(restored.gamma, 0.9);
    }

    #[test]
    fn config_rejects_bad_input() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.set("no_such_key", "1").is_err());
        assert!(cfg.set("gamma", "fast").is_err());

        cfg.drop_per_critic = 25;
        assert!(cfg.validate().is_err());
        cfg.drop_per_critic = 2;
        cfg.strategy = "mystery".into();
        assert!(cfg.validate().is_err());
        cfg.strategy = "tqc".into();
        cfg.env = "atlantis".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_file_comments_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "# comment\nseed = 3 # trailing\n\nlr = 0.001\n").unwrap();
        let cfg = TrainConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.lr, 0.001);

        std::fs::write(&path, "seed 3\n").unwrap();
        assert!(TrainConfig::from_file(&path).is_err());
    }

    #[test]
    fn smoke_run_produces_finite_evals_and_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.out_dir = Some(dir.path().join("run"));
        let mut trainer = Trainer::new(cfg).unwrap();
        let report = trainer.run().unwrap();
        assert_eq!(report.evals.len(), 2);
        assert_eq!(report.gradient_phases, 60);
        for e in &report.evals {
            for r in &e.returns {
                assert!(r.is_finite());
            }
        }
        assert!(report.final_alpha.is_finite() && report.final_alpha > 0.0);
        let run = dir.path().join("run");
        for f in [
            "config.txt",
            "learning_curve.csv",
            "drop_shares.csv",
            "final_params.txt",
        ] {
            assert!(run.join(f).exists(), "missing {f}");
        }
        let curve = std::fs::read_to_string(run.join("learning_curve.csv")).unwrap();
        assert!(curve.starts_with("step,eval_mean,eval_ep1,eval_ep2\n"));
        assert_eq!(curve.lines().count(), 3);
    }

    #[test]
    fn runs_are_deterministic_given_seed() {
        let dir = tempfile::tempdir().unwrap();
        let run = |out: PathBuf| {
            let mut cfg = tiny_cfg();
            cfg.out_dir = Some(out.clone());
            let mut t = Trainer::new(cfg).unwrap();
            let r = t.run().unwrap();
            (
                r.final_alpha,
                std::fs::read(out.join("learning_curve.csv")).unwrap(),
            )
        };
        let (alpha_a, csv_a) = run(dir.path().join("a"));
        let (alpha_b, csv_b) = run(dir.path().join("b"));
        assert_eq!(alpha_a, alpha_b);
        // same seed and config: bit-identical learning curves
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn temperature_updates_before_targets() {
        // with a huge temperature learning rate, alpha moves a lot in the
        // phase; the alpha used for targets must be the post-update value
        let mut cfg = tiny_cfg();
        cfg.total_steps = 30;
        cfg.warmup_steps = 30;
        let mut trainer = Trainer::new(cfg).unwrap();
        for s in 0..30 {
            trainer.env_step(s).unwrap();
        }
        trainer.temp_opt = AdamState::new(1, 10.0);
        let before = trainer.temperature.alpha();
        let stats = trainer.gradient_phase().unwrap();
        let after = trainer.temperature.alpha();
        assert_eq!(stats.alpha_used_for_targets, after);
        assert!((after - before).abs() > 0.5);
    }

    #[test]
    fn targets_track_online_critics_through_ema_only() {
        let mut cfg = tiny_cfg();
        cfg.total_steps = 30;
        cfg.warmup_steps = 30;
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        for s in 0..30 {
            trainer.env_step(s).unwrap();
        }
        let before: Vec<Vec<f64>> = trainer
            .target_critics
            .iter()
            .map(|c| c.params.as_slice().to_vec())
            .collect();
        trainer.gradient_phase().unwrap();
        // target_new = target_old + beta * (online_new - target_old)
        for ((target, online), old) in trainer
            .target_critics
            .iter()
            .zip(&trainer.critics)
            .zip(&before)
        {
            for ((&t, &o), &old_v) in target
                .params
                .as_slice()
                .iter()
                .zip(online.params.as_slice())
                .zip(old)
            {
                let want = old_v + cfg.ema_beta * (o - old_v);
                assert!((t - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn drop_shares_sum_to_one_and_sorted_dominates() {
        let mut cfg = tiny_cfg();
        cfg.total_steps = 60;
        cfg.warmup_steps = 20;
        let mut trainer = Trainer::new(cfg).unwrap();
        let _ = trainer.run().unwrap();
        let summary = trainer.drop_share_summary().unwrap();
        assert_eq!(summary.unsorted.len(), 3);
        assert!((summary.unsorted.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((summary.sorted.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for w in summary.sorted.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        // sorted rank-0 average is at least the max unsorted average
        let max_unsorted = summary.unsorted.iter().cloned().fold(0.0, f64::max);
        assert!(summary.sorted[0] >= max_unsorted - 1e-12);
    }

    #[test]
    fn eval_uses_deterministic_policy() {
        let trainer = Trainer::new(tiny_cfg()).unwrap();
        let a = trainer.evaluate(100).unwrap();
        let b = trainer.evaluate(100).unwrap();
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.start_states, b.start_states);
        assert_eq!(a.returns.len(), 2);
    }
}
