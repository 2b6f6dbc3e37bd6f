//! Desk-scale episodic environments and wrappers, plus an exact bridge to
//! the tabular oracles.
//!
//! Two diagnostic tasks stand in for a full benchmark suite: a three-state
//! chain whose noisy bandit arms elicit maximization bias, and a slippery
//! gridworld with Gaussian goal noise. Wrappers add sticky actions, reward
//! clipping, and time-limit truncation. A step flows through them in a fixed
//! order: sticky substitution, inner dynamics, reward clipping, time-limit
//! check. Truncation is surfaced separately from termination so agents can
//! bootstrap through it.
//!
//! [`to_tabular`] converts any unclipped, untruncated configuration into a
//! [`TabularMdp`] whose dynamics match the sampler in distribution; sticky
//! actions are made Markov by augmenting the state with the last executed
//! action.

use crate::tabular::TabularMdp;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode is over; call reset before stepping")]
    EpisodeOver,
    #[error("action {action} out of range (n_actions = {n_actions})")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("cannot express as a tabular mdp: {0}")]
    NotTabular(String),
}

/// One step's outcome. `terminal` and `truncated` are mutually exclusive;
/// truncated episodes ended on a time limit with the task still live.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// Episodic environment contract. After a step reports `terminal` or
/// `truncated`, further steps are illegal until `reset`.
pub trait Environment {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError>;
    fn observation_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
}

/// Index of the hot entry of a one-hot observation. Both built-in envs emit
/// one-hot vectors, so this is the exact map back to a tabular state.
pub fn one_hot_index(obs: &[f64]) -> usize {
    obs.iter().position(|&v| v == 1.0).expect("observation is one-hot")
}

fn one_hot(idx: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[idx] = 1.0;
    v
}

/// Three states: start (A), arm room (B), terminal. At A, action 0 walks
/// into the arm room and every other action ends the episode; both pay 0.
/// Every action in the arm room is a bandit arm paying Gaussian(arm_mean,
/// arm_std) and ending the episode. With arm_mean < 0, detouring through the
/// arms is strictly worse than quitting, but a max over noisy estimates
/// says otherwise for a long time.
#[derive(Debug, Clone)]
pub struct MaxBiasChain {
    pub n_arms: usize,
    pub arm_mean: f64,
    pub arm_std: f64,
    state: usize,
    active: bool,
}

/// State indices for [`MaxBiasChain`]: A = 0, B = 1, terminal = 2.
pub const MAXBIAS_START: usize = 0;
pub const MAXBIAS_ARM_ROOM: usize = 1;
pub const MAXBIAS_TERMINAL: usize = 2;

impl MaxBiasChain {
    pub fn new(n_arms: usize, arm_mean: f64, arm_std: f64) -> Result<Self, EnvError> {
        if n_arms == 0 {
            return Err(EnvError::InvalidSpec("n_arms must be positive".into()));
        }
        if !arm_mean.is_finite() || !arm_std.is_finite() || arm_std < 0.0 {
            return Err(EnvError::InvalidSpec("arm distribution must be finite with std >= 0".into()));
        }
        Ok(MaxBiasChain { n_arms, arm_mean, arm_std, state: MAXBIAS_START, active: false })
    }
}

impl Default for MaxBiasChain {
    fn default() -> Self {
        MaxBiasChain::new(8, -0.1, 1.0).expect("default parameters are valid")
    }
}

impl Environment for MaxBiasChain {
    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.state = MAXBIAS_START;
        self.active = true;
        one_hot(self.state, 3)
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        if !self.active {
            return Err(EnvError::EpisodeOver);
        }
        if action >= self.n_actions() {
            return Err(EnvError::InvalidAction { action, n_actions: self.n_actions() });
        }
        let (next, reward) = match (self.state, action) {
            (MAXBIAS_START, 0) => (MAXBIAS_ARM_ROOM, 0.0),
            (MAXBIAS_START, _) => (MAXBIAS_TERMINAL, 0.0),
            (MAXBIAS_ARM_ROOM, _) => {
                let z: f64 = StandardNormal.sample(rng);
                (MAXBIAS_TERMINAL, self.arm_mean + self.arm_std * z)
            }
            _ => unreachable!("stepping from the terminal state is blocked by `active`"),
        };
        self.state = next;
        let terminal = next == MAXBIAS_TERMINAL;
        if terminal {
            self.active = false;
        }
        Ok(Step { next_state: one_hot(next, 3), reward, terminal, truncated: false })
    }

    fn observation_dim(&self) -> usize {
        3
    }

    fn n_actions(&self) -> usize {
        self.n_arms.max(2)
    }
}

/// Gridworld actions, in index order.
const GRID_MOVES: [(i64, i64); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)]; // up, down, left, right

const GRID_STEP_REWARD: f64 = -0.01;
const GRID_GOAL_REWARD: f64 = 1.0;

/// Rectangular gridworld: start in the top-left, goal in the bottom-right.
/// Moves off the edge stay put. Each step pays -0.01; entering the goal pays
/// +1 plus Gaussian noise and terminates. With probability `slip_prob` the
/// executed action is replaced by a uniformly random one (possibly itself).
/// Observations are one-hot over cells.
#[derive(Debug, Clone)]
pub struct StochasticGridworld {
    pub width: usize,
    pub height: usize,
    pub slip_prob: f64,
    pub goal_noise_std: f64,
    cell: usize,
    active: bool,
}

impl StochasticGridworld {
    pub fn new(width: usize, height: usize, slip_prob: f64, goal_noise_std: f64) -> Result<Self, EnvError> {
        if width * height < 2 {
            return Err(EnvError::InvalidSpec("grid needs at least two cells".into()));
        }
        if !(0.0..=1.0).contains(&slip_prob) {
            return Err(EnvError::InvalidSpec(format!("slip_prob {slip_prob} outside [0, 1]")));
        }
        if !goal_noise_std.is_finite() || goal_noise_std < 0.0 {
            return Err(EnvError::InvalidSpec("goal_noise_std must be finite and >= 0".into()));
        }
        Ok(StochasticGridworld { width, height, slip_prob, goal_noise_std, cell: 0, active: false })
    }

    pub fn start_cell(&self) -> usize {
        0
    }

    pub fn goal_cell(&self) -> usize {
        self.width * self.height - 1
    }

    fn move_from(&self, cell: usize, action: usize) -> usize {
        let (dx, dy) = GRID_MOVES[action];
        let x = (cell % self.width) as i64 + dx;
        let y = (cell / self.width) as i64 + dy;
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            cell
        } else {
            y as usize * self.width + x as usize
        }
    }
}

impl Default for StochasticGridworld {
    fn default() -> Self {
        StochasticGridworld::new(5, 5, 0.1, 0.5).expect("default parameters are valid")
    }
}

impl Environment for StochasticGridworld {
    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.cell = self.start_cell();
        self.active = true;
        one_hot(self.cell, self.width * self.height)
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        if !self.active {
            return Err(EnvError::EpisodeOver);
        }
        if action >= 4 {
            return Err(EnvError::InvalidAction { action, n_actions: 4 });
        }
        let executed = if self.slip_prob > 0.0 && rng.random::<f64>() < self.slip_prob {
            rng.random_range(0..4)
        } else {
            action
        };
        let next = self.move_from(self.cell, executed);
        let terminal = next == self.goal_cell();
        let reward = if terminal {
            let z: f64 = StandardNormal.sample(rng);
            GRID_GOAL_REWARD + self.goal_noise_std * z
        } else {
            GRID_STEP_REWARD
        };
        self.cell = next;
        if terminal {
            self.active = false;
        }
        Ok(Step { next_state: one_hot(next, self.width * self.height), reward, terminal, truncated: false })
    }

    fn observation_dim(&self) -> usize {
        self.width * self.height
    }

    fn n_actions(&self) -> usize {
        4
    }
}

/// With probability `sticky_prob`, the previously *executed* action replaces
/// the chosen one. The first step of an episode has no precedent and always
/// executes the chosen action. With `sticky_prob` 0 the wrapper consumes no
/// randomness and is bit-identical to the bare env.
pub struct StickyActionWrapper<E> {
    pub inner: E,
    pub sticky_prob: f64,
    last_executed: Option<usize>,
}

impl<E: Environment> StickyActionWrapper<E> {
    pub fn new(inner: E, sticky_prob: f64) -> Result<Self, EnvError> {
        if !(0.0..=1.0).contains(&sticky_prob) {
            return Err(EnvError::InvalidSpec(format!("sticky_prob {sticky_prob} outside [0, 1]")));
        }
        Ok(StickyActionWrapper { inner, sticky_prob, last_executed: None })
    }
}

impl<E: Environment> Environment for StickyActionWrapper<E> {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.last_executed = None;
        self.inner.reset(rng)
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        let executed = match self.last_executed {
            Some(last) if self.sticky_prob > 0.0 && rng.random::<f64>() < self.sticky_prob => last,
            _ => action,
        };
        let step = self.inner.step(executed, rng)?;
        self.last_executed = Some(executed);
        Ok(step)
    }

    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }
}

/// Clamps rewards to [-1, 1] on the way out.
pub struct RewardClipWrapper<E> {
    pub inner: E,
}

impl<E: Environment> Environment for RewardClipWrapper<E> {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.inner.reset(rng)
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        let mut step = self.inner.step(action, rng)?;
        step.reward = step.reward.clamp(-1.0, 1.0);
        Ok(step)
    }

    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }
}

/// Ends episodes after `max_steps` steps with `truncated = true` (never
/// `terminal`). A step that terminates exactly on the limit stays terminal.
pub struct TimeLimitWrapper<E> {
    pub inner: E,
    pub max_steps: u64,
    steps: u64,
    exhausted: bool,
}

impl<E: Environment> TimeLimitWrapper<E> {
    pub fn new(inner: E, max_steps: u64) -> Result<Self, EnvError> {
        if max_steps == 0 {
            return Err(EnvError::InvalidSpec("max_steps must be positive".into()));
        }
        Ok(TimeLimitWrapper { inner, max_steps, steps: 0, exhausted: false })
    }
}

impl<E: Environment> Environment for TimeLimitWrapper<E> {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.steps = 0;
        self.exhausted = false;
        self.inner.reset(rng)
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        if self.exhausted {
            return Err(EnvError::EpisodeOver);
        }
        let mut step = self.inner.step(action, rng)?;
        self.steps += 1;
        if !step.terminal && self.steps >= self.max_steps {
            step.truncated = true;
            self.exhausted = true;
        }
        Ok(step)
    }

    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }
}

/// Which base task to build.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseEnv {
    MaxBiasChain { n_arms: usize, arm_mean: f64, arm_std: f64 },
    StochasticGridworld { width: usize, height: usize, slip_prob: f64, goal_noise_std: f64 },
}

/// Full environment configuration: a base task plus the wrapper stack.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub base: BaseEnv,
    pub sticky_prob: f64,
    /// None = no time limit.
    pub max_steps: Option<u64>,
    pub clip_rewards: bool,
}

impl EnvSpec {
    pub fn maxbias_default() -> Self {
        let d = MaxBiasChain::default();
        EnvSpec {
            base: BaseEnv::MaxBiasChain { n_arms: d.n_arms, arm_mean: d.arm_mean, arm_std: d.arm_std },
            sticky_prob: 0.0,
            max_steps: None,
            clip_rewards: false,
        }
    }

    pub fn gridworld_default() -> Self {
        let d = StochasticGridworld::default();
        EnvSpec {
            base: BaseEnv::StochasticGridworld {
                width: d.width,
                height: d.height,
                slip_prob: d.slip_prob,
                goal_noise_std: d.goal_noise_std,
            },
            sticky_prob: 0.0,
            max_steps: Some(500),
            clip_rewards: false,
        }
    }

    pub fn observation_dim(&self) -> usize {
        match self.base {
            BaseEnv::MaxBiasChain { .. } => 3,
            BaseEnv::StochasticGridworld { width, height, .. } => width * height,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self.base {
            BaseEnv::MaxBiasChain { n_arms, .. } => n_arms.max(2),
            BaseEnv::StochasticGridworld { .. } => 4,
        }
    }

    fn base_env(&self) -> Result<Box<dyn Environment>, EnvError> {
        Ok(match self.base {
            BaseEnv::MaxBiasChain { n_arms, arm_mean, arm_std } => {
                Box::new(MaxBiasChain::new(n_arms, arm_mean, arm_std)?)
            }
            BaseEnv::StochasticGridworld { width, height, slip_prob, goal_noise_std } => {
                Box::new(StochasticGridworld::new(width, height, slip_prob, goal_noise_std)?)
            }
        })
    }

    /// Builds the wrapped environment. Wrappers that would be identities
    /// (sticky 0, clipping off, no limit) are skipped entirely, so their
    /// absence and their neutral setting are bit-identical.
    pub fn build(&self) -> Result<Box<dyn Environment>, EnvError> {
        let mut env = self.base_env()?;
        if self.sticky_prob > 0.0 {
            env = Box::new(StickyActionWrapper::new(env, self.sticky_prob)?);
        }
        if self.clip_rewards {
            env = Box::new(RewardClipWrapper { inner: env });
        }
        if let Some(max_steps) = self.max_steps {
            env = Box::new(TimeLimitWrapper::new(env, max_steps)?);
        }
        Ok(env)
    }
}

impl Environment for Box<dyn Environment> {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (**self).reset(rng)
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        (**self).step(action, rng)
    }

    fn observation_dim(&self) -> usize {
        (**self).observation_dim()
    }

    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
}

fn maxbias_mdp(n_arms: usize, arm_mean: f64, arm_std: f64, gamma: f64) -> TabularMdp {
    let n_actions = n_arms.max(2);
    let mut m = TabularMdp::new(3, n_actions, gamma);
    m.set_transition(MAXBIAS_START, 0, MAXBIAS_ARM_ROOM, 1.0);
    for a in 1..n_actions {
        m.set_transition(MAXBIAS_START, a, MAXBIAS_TERMINAL, 1.0);
    }
    for a in 0..n_actions {
        m.set_transition(MAXBIAS_ARM_ROOM, a, MAXBIAS_TERMINAL, 1.0);
        m.set_reward_noise(MAXBIAS_ARM_ROOM, a, arm_mean, arm_std);
    }
    m.set_terminal(MAXBIAS_TERMINAL);
    m
}

fn gridworld_mdp(grid: &StochasticGridworld, gamma: f64) -> TabularMdp {
    let n = grid.width * grid.height;
    let goal = grid.goal_cell();
    let mut m = TabularMdp::new(n, 4, gamma);
    for s in 0..n {
        if s == goal {
            continue;
        }
        for a in 0..4 {
            for exec in 0..4 {
                // Slip replaces the action with a uniform one, which may be
                // the action itself.
                let p_exec = if exec == a { 1.0 - grid.slip_prob + grid.slip_prob / 4.0 } else { grid.slip_prob / 4.0 };
                if p_exec == 0.0 {
                    continue;
                }
                let s2 = grid.move_from(s, exec);
                m.set_transition(s, a, s2, m.transition_prob(s, a, s2) + p_exec);
            }
            for s2 in 0..n {
                if m.transition_prob(s, a, s2) > 0.0 {
                    m.set_reward(s, a, s2, if s2 == goal { GRID_GOAL_REWARD } else { GRID_STEP_REWARD });
                }
            }
            if m.transition_prob(s, a, goal) > 0.0 {
                m.set_noise_std(s, a, goal, grid.goal_noise_std);
            }
        }
    }
    m.set_terminal(goal);
    m
}

/// Folds sticky-action mixing into the MDP by augmenting each state with the
/// last executed action (code 0 = fresh episode, k+1 = action k). The
/// augmented state after a step always records the action that was actually
/// executed, so the process is exactly Markov.
fn augment_sticky(base: &TabularMdp, sticky_prob: f64) -> TabularMdp {
    let n = base.n_states();
    let na = base.n_actions();
    let codes = na + 1;
    let mut m = TabularMdp::new(n * codes, na, base.gamma());
    for s in 0..n {
        if base.is_terminal(s) {
            continue;
        }
        for code in 0..codes {
            let aug = s * codes + code;
            for a in 0..na {
                // (executed action, probability) pairs for this chosen action.
                let mix: Vec<(usize, f64)> = match code {
                    0 => vec![(a, 1.0)],
                    _ => {
                        let last = code - 1;
                        if last == a {
                            vec![(a, 1.0)]
                        } else {
                            vec![(a, 1.0 - sticky_prob), (last, sticky_prob)]
                        }
                    }
                };
                for (exec, p_exec) in mix {
                    if p_exec == 0.0 {
                        continue;
                    }
                    for s2 in 0..n {
                        let p = base.transition_prob(s, exec, s2);
                        if p == 0.0 {
                            continue;
                        }
                        let aug2 = s2 * codes + exec + 1;
                        m.set_transition(aug, a, aug2, m.transition_prob(aug, a, aug2) + p_exec * p);
                        m.set_reward(aug, a, aug2, base.mean_reward(s, exec, s2));
                        m.set_noise_std(aug, a, aug2, base.noise_std(s, exec, s2));
                    }
                }
            }
        }
    }
    for s in 0..n {
        if base.is_terminal(s) {
            for code in 0..codes {
                m.set_terminal(s * codes + code);
            }
        }
    }
    m
}

/// Exact finite MDP matching `spec`'s sampler in distribution, with Gaussian
/// rewards carried as mean-plus-noise metadata. Time limits are not part of
/// MDP dynamics and are ignored; reward clipping distorts the noise
/// distribution and makes the env inexpressible here, so it is rejected.
pub fn to_tabular(spec: &EnvSpec, gamma: f64) -> Result<TabularMdp, EnvError> {
    if spec.clip_rewards {
        return Err(EnvError::NotTabular(
            "clipped Gaussian rewards are not representable as mean-plus-noise metadata".into(),
        ));
    }
    let base = match &spec.base {
        BaseEnv::MaxBiasChain { n_arms, arm_mean, arm_std } => {
            MaxBiasChain::new(*n_arms, *arm_mean, *arm_std)?; // surface parameter errors
            maxbias_mdp(*n_arms, *arm_mean, *arm_std, gamma)
        }
        BaseEnv::StochasticGridworld { width, height, slip_prob, goal_noise_std } => {
            let grid = StochasticGridworld::new(*width, *height, *slip_prob, *goal_noise_std)?;
            gridworld_mdp(&grid, gamma)
        }
    };
    let mdp = if spec.sticky_prob > 0.0 { augment_sticky(&base, spec.sticky_prob) } else { base };
    mdp.validate().map_err(|e| EnvError::NotTabular(e.to_string()))?;
    Ok(mdp)
}

/// Tabular index of the state a fresh episode starts in, matching
/// [`to_tabular`]'s state numbering (sticky augmentation included).
pub fn start_state(spec: &EnvSpec) -> usize {
    let base_start = match spec.base {
        BaseEnv::MaxBiasChain { .. } => MAXBIAS_START,
        BaseEnv::StochasticGridworld { .. } => 0,
    };
    if spec.sticky_prob > 0.0 {
        base_start * (spec.n_actions() + 1)
    } else {
        base_start
    }
}
