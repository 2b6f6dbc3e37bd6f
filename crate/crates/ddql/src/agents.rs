//! The algorithm family: DQN, Double DQN, and deep double Q-learning with
//! either a shared trunk (dual head) or two independent networks, across the
//! full matrix of bootstrap pairings.
//!
//! The update rule is the only thing that differs between family members.
//! Every non-terminal target is `r + gamma * Q_eval(s', argmax_a Q_sel(s',
//! a))`; a bootstrap variant names which parameter set plays selector and
//! which plays evaluator. The reciprocal variants always evaluate with the
//! *other* estimator's parameters, which is the double-estimation structure
//! that suppresses maximization bias.
//!
//! A "gradient update" is one Adam step, even when it moves both parameter
//! sets at once through the combined masked batch; target-refresh cadence
//! counts those updates, never env steps.

use crate::envs::{EnvError, Environment};
use crate::nn::{
    AdamConfig, AdamState, Activation, ArchitectureSpec, HeadMode, Matrix, NetworkParams, NnError,
};
use crate::replay::{
    build_masked_batch, BufferMode, BufferStrategy, ReplayError, StoredTransition, Transition,
};
use crate::seeding::{rng_stream, Stream};
use crate::tabular::{argmax_lowest_index, greedy_policy_distribution, TabularError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error("non-finite loss {loss} at gradient update {gradient_updates}")]
    NonFiniteLoss { loss: f64, gradient_updates: u64 },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("training hook failed: {0}")]
    Hook(#[source] Box<dyn std::error::Error + Send + Sync>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Dqn,
    DoubleDqn,
    Ddql,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::DoubleDqn => "double_dqn",
            Algorithm::Ddql => "ddql",
        }
    }

    pub fn parse(s: &str) -> Result<Self, AgentError> {
        match s {
            "dqn" => Ok(Algorithm::Dqn),
            "double_dqn" => Ok(Algorithm::DoubleDqn),
            "ddql" => Ok(Algorithm::Ddql),
            other => Err(AgentError::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Which parameter sets select and evaluate the bootstrap action. The
/// `ddql_inverse` and `ddql_no_target` pairings are implemented for
/// completeness of the variant matrix but are unstable in practice; the
/// supported configurations are the other four.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapVariant {
    Dqn,
    DoubleDqn,
    DdqlDqn,
    DdqlDoubleDqn,
    DdqlInverse,
    DdqlNoTarget,
}

impl BootstrapVariant {
    pub fn name(self) -> &'static str {
        match self {
            BootstrapVariant::Dqn => "dqn",
            BootstrapVariant::DoubleDqn => "double_dqn",
            BootstrapVariant::DdqlDqn => "ddql_dqn",
            BootstrapVariant::DdqlDoubleDqn => "ddql_double_dqn",
            BootstrapVariant::DdqlInverse => "ddql_inverse",
            BootstrapVariant::DdqlNoTarget => "ddql_no_target",
        }
    }

    pub fn parse(s: &str) -> Result<Self, AgentError> {
        match s {
            "dqn" => Ok(BootstrapVariant::Dqn),
            "double_dqn" => Ok(BootstrapVariant::DoubleDqn),
            "ddql_dqn" => Ok(BootstrapVariant::DdqlDqn),
            "ddql_double_dqn" => Ok(BootstrapVariant::DdqlDoubleDqn),
            "ddql_inverse" => Ok(BootstrapVariant::DdqlInverse),
            "ddql_no_target" => Ok(BootstrapVariant::DdqlNoTarget),
            other => Err(AgentError::Config(format!("unknown bootstrap variant {other:?}"))),
        }
    }

    pub fn algorithm(self) -> Algorithm {
        match self {
            BootstrapVariant::Dqn => Algorithm::Dqn,
            BootstrapVariant::DoubleDqn => Algorithm::DoubleDqn,
            _ => Algorithm::Ddql,
        }
    }

    /// `ddql_no_target` is the one variant that must run without target
    /// networks; every other variant requires them.
    pub fn uses_target(self) -> bool {
        self != BootstrapVariant::DdqlNoTarget
    }
}

/// Linear exploration anneal, clamped at the final value.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub final_value: f64,
    pub anneal_steps: u64,
}

impl EpsilonSchedule {
    pub fn epsilon_at(&self, t: u64) -> f64 {
        if t >= self.anneal_steps || self.anneal_steps == 0 {
            return self.final_value;
        }
        let frac = t as f64 / self.anneal_steps as f64;
        self.initial + (self.final_value - self.initial) * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub bootstrap_variant: BootstrapVariant,
    pub architecture: ArchitectureSpec,
    pub gamma: f64,
    pub minibatch_size: usize,
    /// k: one gradient update every k env steps (after warmup).
    pub update_frequency: u64,
    /// C: target refresh every C gradient updates.
    pub target_interval: u64,
    pub buffer_mode: BufferMode,
    pub buffer_capacity: usize,
    pub disjoint_minibatches: bool,
    pub replay_start_size: usize,
    pub epsilon: EpsilonSchedule,
    pub eval_epsilon: f64,
    pub identical_init: bool,
    pub adam: AdamConfig,
    /// Clamp rewards to [-1, 1] as transitions enter the replay buffer.
    /// Training-side only; evaluation always sees raw rewards.
    pub clip_rewards: bool,
    /// Split greedy ties uniformly instead of taking the lowest index.
    pub uniform_tie_break: bool,
}

impl AgentConfig {
    /// Desk-scale defaults: [64, 64] relu trunk, short schedules, small
    /// buffer, and a larger Adam step than the full-scale recipe (the tiny
    /// networks need it to move within 150k steps). DDQL defaults to the
    /// dual-head architecture and the target-selector/target-evaluator
    /// pairing.
    pub fn desk(algorithm: Algorithm, input_dim: usize, n_actions: usize) -> AgentConfig {
        let (head_mode, bootstrap_variant, update_frequency) = match algorithm {
            Algorithm::Dqn => (HeadMode::Single, BootstrapVariant::Dqn, 4),
            Algorithm::DoubleDqn => (HeadMode::Single, BootstrapVariant::DoubleDqn, 4),
            Algorithm::Ddql => (HeadMode::DualHead, BootstrapVariant::DdqlDqn, 8),
        };
        AgentConfig {
            algorithm,
            bootstrap_variant,
            architecture: ArchitectureSpec {
                input_dim,
                hidden_sizes: vec![64, 64],
                activation: Activation::Relu,
                n_actions,
                head_mode,
                shared_output_bias: false,
            },
            gamma: 0.99,
            minibatch_size: 32,
            update_frequency,
            target_interval: 200,
            buffer_mode: BufferMode::Single,
            buffer_capacity: 50_000,
            disjoint_minibatches: false,
            replay_start_size: 1000,
            epsilon: EpsilonSchedule { initial: 1.0, final_value: 0.01, anneal_steps: 5000 },
            eval_epsilon: 0.001,
            identical_init: true,
            adam: AdamConfig { step_size: 1e-3, ..AdamConfig::default() },
            clip_rewards: false,
            uniform_tie_break: false,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        self.architecture.validate()?;
        if self.bootstrap_variant.algorithm() != self.algorithm {
            return Err(AgentError::Config(format!(
                "bootstrap variant {} does not belong to algorithm {}",
                self.bootstrap_variant.name(),
                self.algorithm.name()
            )));
        }
        let want_heads = match self.algorithm {
            Algorithm::Ddql => 2,
            _ => 1,
        };
        if self.architecture.head_mode.head_count() != want_heads {
            return Err(AgentError::Config(format!(
                "{} needs {} estimator(s) but the architecture is {}",
                self.algorithm.name(),
                want_heads,
                self.architecture.head_mode.name()
            )));
        }
        if self.update_frequency == 0 {
            return Err(AgentError::Config("update_frequency must be >= 1".into()));
        }
        if self.target_interval == 0 {
            return Err(AgentError::Config("target_interval must be >= 1".into()));
        }
        if self.minibatch_size == 0 {
            return Err(AgentError::Config("minibatch_size must be >= 1".into()));
        }
        if self.replay_start_size < self.minibatch_size {
            return Err(AgentError::Config(format!(
                "replay_start_size {} is below minibatch_size {}",
                self.replay_start_size, self.minibatch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(AgentError::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        for (name, eps) in [
            ("epsilon.initial", self.epsilon.initial),
            ("epsilon.final", self.epsilon.final_value),
            ("eval_epsilon", self.eval_epsilon),
        ] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(AgentError::Config(format!("{name} {eps} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Which parameter struct a bootstrap role reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSet {
    Online,
    Target,
}

/// One side of a bootstrap pairing: a parameter set plus the head within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Role {
    pub params: ParamSet,
    pub head: usize,
}

/// Selector picks the bootstrap action, evaluator prices it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roles {
    pub selector: Role,
    pub evaluator: Role,
}

/// The variant matrix, written for the estimator being updated. Reciprocal
/// variants always evaluate with the other head; single-estimator variants
/// only ever reference head 0.
pub fn resolve_roles(variant: BootstrapVariant, updating_head: usize) -> Roles {
    let own = updating_head;
    let other = 1 - updating_head;
    match variant {
        BootstrapVariant::Dqn => Roles {
            selector: Role { params: ParamSet::Target, head: 0 },
            evaluator: Role { params: ParamSet::Target, head: 0 },
        },
        BootstrapVariant::DoubleDqn => Roles {
            selector: Role { params: ParamSet::Online, head: 0 },
            evaluator: Role { params: ParamSet::Target, head: 0 },
        },
        BootstrapVariant::DdqlDqn => Roles {
            selector: Role { params: ParamSet::Target, head: own },
            evaluator: Role { params: ParamSet::Target, head: other },
        },
        BootstrapVariant::DdqlDoubleDqn => Roles {
            selector: Role { params: ParamSet::Online, head: own },
            evaluator: Role { params: ParamSet::Target, head: other },
        },
        BootstrapVariant::DdqlInverse => Roles {
            selector: Role { params: ParamSet::Target, head: own },
            evaluator: Role { params: ParamSet::Online, head: other },
        },
        BootstrapVariant::DdqlNoTarget => Roles {
            selector: Role { params: ParamSet::Online, head: own },
            evaluator: Role { params: ParamSet::Online, head: other },
        },
    }
}

fn params_for<'a>(
    set: ParamSet,
    online: &'a NetworkParams,
    target: Option<&'a NetworkParams>,
) -> Result<&'a NetworkParams, AgentError> {
    match set {
        ParamSet::Online => Ok(online),
        ParamSet::Target => {
            target.ok_or_else(|| AgentError::Config("variant requires target networks".into()))
        }
    }
}

/// Regression target for one transition. Terminal transitions return the
/// bare reward for every variant; truncated-but-live transitions bootstrap
/// through s' like any other. The bootstrap argmax breaks ties by lowest
/// index.
pub fn compute_target(
    variant: BootstrapVariant,
    updating_head: usize,
    online: &NetworkParams,
    target: Option<&NetworkParams>,
    transition: &Transition,
    gamma: f64,
) -> Result<f64, AgentError> {
    if transition.terminal {
        return Ok(transition.reward);
    }
    let roles = resolve_roles(variant, updating_head);
    let mut online_rows: Option<Vec<Vec<f64>>> = None;
    let mut target_rows: Option<Vec<Vec<f64>>> = None;
    let mut row = |role: Role| -> Result<Vec<f64>, AgentError> {
        let cache = match role.params {
            ParamSet::Online => &mut online_rows,
            ParamSet::Target => &mut target_rows,
        };
        if cache.is_none() {
            let p = params_for(role.params, online, target)?;
            *cache = Some(p.forward_single(&transition.next_state)?);
        }
        let rows = cache.as_ref().expect("just filled");
        rows.get(role.head)
            .cloned()
            .ok_or_else(|| AgentError::Config(format!("variant references head {} of a single-head network", role.head)))
    };
    let selector_row = row(roles.selector)?;
    let a = argmax_lowest_index(&selector_row)?;
    let evaluator_row = row(roles.evaluator)?;
    Ok(transition.reward + gamma * evaluator_row[a])
}

/// Loss, per-head losses, regression targets, and parameter gradients for
/// one gradient update.
#[derive(Debug)]
pub struct LossReport {
    pub loss: f64,
    pub per_head_losses: Vec<f64>,
    pub targets: Vec<f64>,
    pub gradients: NetworkParams,
}

/// Shared loss core: `sum_rows loss_scale * (pred - y)^2 / N` with each
/// row's prediction read from the head that owns it. Targets come from
/// plain (uncached) forward passes, so they carry no gradient. `trace`
/// records the roles consulted per row, for bootstrap audits.
fn batch_loss(
    online: &NetworkParams,
    target: Option<&NetworkParams>,
    variant: BootstrapVariant,
    gamma: f64,
    rows: &[StoredTransition],
    head_of_row: &[usize],
    loss_scale: f64,
    mut trace: Option<&mut Vec<Roles>>,
) -> Result<LossReport, AgentError> {
    let n = rows.len();
    debug_assert_eq!(n, head_of_row.len());
    let states = Matrix::from_rows(&rows.iter().map(|r| r.transition.state.clone()).collect::<Vec<_>>())?;
    let (outputs, cache) = online.forward_cached(&states)?;
    let mut targets = Vec::with_capacity(n);
    for (row, &h) in rows.iter().zip(head_of_row) {
        targets.push(compute_target(variant, h, online, target, &row.transition, gamma)?);
        if let Some(t) = trace.as_deref_mut() {
            if !row.transition.terminal {
                t.push(resolve_roles(variant, h));
            }
        }
    }
    let head_count = online.head_count();
    let n_actions = online.spec().n_actions;
    let mut grad_mats: Vec<Matrix> = (0..head_count).map(|_| Matrix::zeros(n, n_actions)).collect();
    let mut loss = 0.0;
    let mut per_head_sq = vec![0.0; head_count];
    let mut per_head_n = vec![0usize; head_count];
    for (i, (row, &h)) in rows.iter().zip(head_of_row).enumerate() {
        let a = row.transition.action;
        let pred = outputs[h].get(i, a);
        let residual = pred - targets[i];
        loss += loss_scale * residual * residual / n as f64;
        per_head_sq[h] += residual * residual;
        per_head_n[h] += 1;
        grad_mats[h].set(i, a, loss_scale * 2.0 * residual / n as f64);
    }
    if !loss.is_finite() {
        return Err(AgentError::NonFiniteLoss { loss, gradient_updates: 0 });
    }
    let gradients = online.backward(&cache, &grad_mats)?;
    let per_head_losses = per_head_sq
        .iter()
        .zip(&per_head_n)
        .map(|(&sq, &cnt)| if cnt == 0 { 0.0 } else { sq / cnt as f64 })
        .collect();
    Ok(LossReport { loss, per_head_losses, targets, gradients })
}

/// `L1 + L2` over the minibatch pair, computed through the combined masked
/// batch (2n rows, loss scale 2); gradients are equivalent to two separate
/// per-head passes.
pub fn ddql_loss(
    online: &NetworkParams,
    target: Option<&NetworkParams>,
    variant: BootstrapVariant,
    gamma: f64,
    b1: &[StoredTransition],
    b2: &[StoredTransition],
) -> Result<LossReport, AgentError> {
    ddql_loss_traced(online, target, variant, gamma, b1, b2, None)
}

/// [`ddql_loss`] with an optional per-row record of which parameter sets
/// each bootstrap consulted (terminal rows consult none).
pub fn ddql_loss_traced(
    online: &NetworkParams,
    target: Option<&NetworkParams>,
    variant: BootstrapVariant,
    gamma: f64,
    b1: &[StoredTransition],
    b2: &[StoredTransition],
    trace: Option<&mut Vec<Roles>>,
) -> Result<LossReport, AgentError> {
    let masked = build_masked_batch(b1.to_vec(), b2.to_vec())?;
    batch_loss(online, target, variant, gamma, &masked.rows, &masked.head_of_row, masked.loss_scale, trace)
}

/// MSE pass that regresses the whole batch through one head at natural
/// scale. Two of these (minibatch 1 through head 0, minibatch 2 through
/// head 1) summed are the reference that [`ddql_loss`]'s combined masked
/// batch reproduces.
pub fn head_loss(
    online: &NetworkParams,
    target: Option<&NetworkParams>,
    variant: BootstrapVariant,
    gamma: f64,
    batch: &[StoredTransition],
    head: usize,
) -> Result<LossReport, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::Replay(ReplayError::ZeroBatch));
    }
    let heads = vec![head; batch.len()];
    batch_loss(online, target, variant, gamma, batch, &heads, 1.0, None)
}

/// Single-estimator MSE loss for the baseline agents.
pub fn q_loss(
    online: &NetworkParams,
    target: Option<&NetworkParams>,
    variant: BootstrapVariant,
    gamma: f64,
    batch: &[StoredTransition],
) -> Result<LossReport, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::Replay(ReplayError::ZeroBatch));
    }
    let heads = vec![0usize; batch.len()];
    batch_loss(online, target, variant, gamma, batch, &heads, 1.0, None)
}

/// What one gradient update did.
#[derive(Debug, Clone)]
pub struct UpdateReport {
    pub gradient_updates: u64,
    pub loss: f64,
    pub per_head_losses: Vec<f64>,
    pub refreshed_targets: bool,
}

pub struct Agent {
    config: AgentConfig,
    online: NetworkParams,
    target: Option<NetworkParams>,
    adam: AdamState,
    buffer: BufferStrategy,
    env_steps: u64,
    gradient_updates: u64,
    action_rng: ChaCha8Rng,
    sampling_rng: ChaCha8Rng,
    routing_rng: ChaCha8Rng,
}

impl Agent {
    /// Fresh agent. The master seed pins everything: initialization, action
    /// coins, minibatch draws, and double-buffer routing each read their own
    /// named stream. Targets start as a bitwise copy of the online params.
    pub fn new(config: AgentConfig, master_seed: u64) -> Result<Agent, AgentError> {
        config.validate()?;
        let mut init_rng = rng_stream(master_seed, Stream::Init);
        let online = NetworkParams::init(&config.architecture, &mut init_rng, config.identical_init)?;
        let target = config.bootstrap_variant.uses_target().then(|| online.clone());
        let adam = AdamState::new(config.adam, &online);
        let buffer =
            BufferStrategy::new(config.buffer_mode, config.buffer_capacity, config.disjoint_minibatches)?;
        Ok(Agent {
            config,
            online,
            target,
            adam,
            buffer,
            env_steps: 0,
            gradient_updates: 0,
            action_rng: rng_stream(master_seed, Stream::Action),
            sampling_rng: rng_stream(master_seed, Stream::Sampling),
            routing_rng: rng_stream(master_seed, Stream::Routing),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &NetworkParams {
        &self.online
    }

    pub fn target(&self) -> Option<&NetworkParams> {
        self.target.as_ref()
    }

    pub fn buffer(&self) -> &BufferStrategy {
        &self.buffer
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn gradient_updates(&self) -> u64 {
        self.gradient_updates
    }

    /// The row the agent acts on: Q(s, .) for single-estimator agents, the
    /// elementwise average of the two online heads for DDQL.
    pub fn decision_values(&self, state: &[f64]) -> Result<Vec<f64>, AgentError> {
        let rows = self.online.forward_single(state)?;
        match rows.as_slice() {
            [single] => Ok(single.clone()),
            [first, second] => {
                Ok(first.iter().zip(second).map(|(a, b)| 0.5 * a + 0.5 * b).collect())
            }
            _ => unreachable!("networks have one or two heads"),
        }
    }

    /// Epsilon-greedy over [`Agent::decision_values`]. Greedy ties go to the
    /// lowest index unless `uniform_tie_break` asks for a uniform split.
    pub fn select_action(&mut self, state: &[f64], epsilon: f64) -> Result<usize, AgentError> {
        let n_actions = self.config.architecture.n_actions;
        if epsilon > 0.0 && self.action_rng.random::<f64>() < epsilon {
            return Ok(self.action_rng.random_range(0..n_actions));
        }
        let values = self.decision_values(state)?;
        if self.config.uniform_tie_break {
            let dist = greedy_policy_distribution(&values)?;
            let u: f64 = self.action_rng.random();
            let mut acc = 0.0;
            for (a, p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Ok(a);
                }
            }
            return Ok(n_actions - 1);
        }
        Ok(argmax_lowest_index(&values)?)
    }

    /// Store one transition, clamping the reward first when the config asks
    /// for training-side clipping.
    pub fn record_transition(&mut self, mut t: Transition) {
        if self.config.clip_rewards {
            t.reward = t.reward.clamp(-1.0, 1.0);
        }
        self.buffer.push(t, &mut self.routing_rng);
    }

    fn warmup_done(&self) -> bool {
        self.buffer.total_len() >= self.config.replay_start_size
    }

    /// One gradient update if this env step is on the cadence and warmup is
    /// over.
    pub fn maybe_update(&mut self) -> Result<Option<UpdateReport>, AgentError> {
        if self.env_steps % self.config.update_frequency != 0 || !self.warmup_done() {
            return Ok(None);
        }
        Ok(Some(self.gradient_update()?))
    }

    /// One optimization step: DDQL samples the minibatch pair and minimizes
    /// `L1 + L2` for both parameter sets at once; the baselines take one
    /// minibatch. Counts as exactly one gradient update, and both targets
    /// refresh together when the update count hits the cadence.
    pub fn gradient_update(&mut self) -> Result<UpdateReport, AgentError> {
        let n = self.config.minibatch_size;
        let report = match self.config.algorithm {
            Algorithm::Ddql => {
                let (b1, b2) = self.buffer.sample_two_minibatches(n, &mut self.sampling_rng)?;
                ddql_loss(
                    &self.online,
                    self.target.as_ref(),
                    self.config.bootstrap_variant,
                    self.config.gamma,
                    &b1,
                    &b2,
                )
            }
            _ => {
                let b = self.buffer.sample_minibatch(n, &mut self.sampling_rng)?;
                q_loss(
                    &self.online,
                    self.target.as_ref(),
                    self.config.bootstrap_variant,
                    self.config.gamma,
                    &b,
                )
            }
        }
        .map_err(|e| match e {
            // Stamp the diagnostic with the update that would have happened.
            AgentError::NonFiniteLoss { loss, .. } => {
                AgentError::NonFiniteLoss { loss, gradient_updates: self.gradient_updates + 1 }
            }
            other => other,
        })?;
        self.adam.step(&mut self.online, &report.gradients)?;
        self.gradient_updates += 1;
        let refreshed = self.target.is_some() && self.gradient_updates % self.config.target_interval == 0;
        if refreshed {
            self.target = Some(self.online.clone());
        }
        Ok(UpdateReport {
            gradient_updates: self.gradient_updates,
            loss: report.loss,
            per_head_losses: report.per_head_losses,
            refreshed_targets: refreshed,
        })
    }

    /// Full mutable state as text: counters, both parameter sets, Adam
    /// moments, and the exact positions of the three RNG streams. Replay
    /// contents are deliberately not included (the buffer has its own dump
    /// format); a resumed run refills its buffer before updates continue.
    pub fn save_checkpoint(&self) -> String {
        let mut out = String::from("agent-checkpoint v1\n");
        out.push_str(&format!("env_steps {}\n", self.env_steps));
        out.push_str(&format!("gradient_updates {}\n", self.gradient_updates));
        for (name, rng) in [
            ("action_rng", &self.action_rng),
            ("sampling_rng", &self.sampling_rng),
            ("routing_rng", &self.routing_rng),
        ] {
            let seed_hex: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
            out.push_str(&format!("{name} {seed_hex} {} {}\n", rng.get_stream(), rng.get_word_pos()));
        }
        let (t, m, v) = self.adam.snapshot();
        out.push_str(&format!("adam_t {t}\n"));
        for (label, values) in [("adam_m", m), ("adam_v", v)] {
            out.push_str(label);
            for x in values {
                out.push_str(&format!(" {x}"));
            }
            out.push('\n');
        }
        out.push_str("online\n");
        out.push_str(&self.online.to_text());
        match &self.target {
            Some(t) => {
                out.push_str("target\n");
                out.push_str(&t.to_text());
            }
            None => out.push_str("no_target\n"),
        }
        out
    }

    /// Rebuild an agent from [`Agent::save_checkpoint`] output. The config
    /// is not serialized; the caller supplies it and the checkpoint must
    /// structurally match (head counts, parameter counts).
    pub fn load_checkpoint(config: AgentConfig, text: &str) -> Result<Agent, AgentError> {
        config.validate()?;
        let bad = |msg: &str| AgentError::Checkpoint(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("agent-checkpoint v1") {
            return Err(bad("missing agent-checkpoint v1 header"));
        }
        let mut field = |name: &str| -> Result<String, AgentError> {
            let line = lines.next().ok_or_else(|| bad("truncated checkpoint"))?;
            line.strip_prefix(name)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| AgentError::Checkpoint(format!("expected {name} line, got {line:?}")))
        };
        let env_steps: u64 =
            field("env_steps")?.parse().map_err(|_| bad("unparseable env_steps"))?;
        let gradient_updates: u64 =
            field("gradient_updates")?.parse().map_err(|_| bad("unparseable gradient_updates"))?;
        let mut rngs = Vec::new();
        for name in ["action_rng", "sampling_rng", "routing_rng"] {
            let body = field(name)?;
            let parts: Vec<&str> = body.split_whitespace().collect();
            if parts.len() != 3 || parts[0].len() != 64 {
                return Err(AgentError::Checkpoint(format!("malformed {name} line")));
            }
            let mut seed = [0u8; 32];
            for (i, byte) in seed.iter_mut().enumerate() {
                *byte = u8::from_str_radix(&parts[0][2 * i..2 * i + 2], 16)
                    .map_err(|_| bad("bad rng seed hex"))?;
            }
            let stream: u64 = parts[1].parse().map_err(|_| bad("bad rng stream"))?;
            let word_pos: u128 = parts[2].parse().map_err(|_| bad("bad rng word position"))?;
            let mut rng = ChaCha8Rng::from_seed(seed);
            rng.set_stream(stream);
            rng.set_word_pos(word_pos);
            rngs.push(rng);
        }
        let adam_t: u64 = field("adam_t")?.parse().map_err(|_| bad("unparseable adam_t"))?;
        let mut moments = Vec::new();
        for label in ["adam_m", "adam_v"] {
            let body = field(label)?;
            let values: Result<Vec<f64>, _> = body.split_whitespace().map(str::parse).collect();
            moments.push(values.map_err(|_| bad("unparseable adam moments"))?);
        }
        let rest: Vec<&str> = lines.collect();
        let mut sections = rest.splitn(2, |l| *l == "target" || *l == "no_target");
        let online_text: Vec<&str> = sections.next().ok_or_else(|| bad("missing online section"))?.to_vec();
        if online_text.first() != Some(&"online") {
            return Err(bad("missing online section"));
        }
        let online = NetworkParams::from_text(&online_text[1..].join("\n"))?;
        let has_target = rest.iter().any(|l| *l == "target");
        let target = if has_target {
            let target_text = sections.next().ok_or_else(|| bad("missing target parameters"))?;
            Some(NetworkParams::from_text(&target_text.join("\n"))?)
        } else {
            if config.bootstrap_variant.uses_target() {
                return Err(bad("variant requires target networks but checkpoint has none"));
            }
            None
        };
        if online.spec() != &config.architecture {
            return Err(bad("checkpoint architecture differs from config"));
        }
        let mut adam = AdamState::new(config.adam, &online);
        adam.restore(adam_t, &moments[0], &moments[1])?;
        let buffer =
            BufferStrategy::new(config.buffer_mode, config.buffer_capacity, config.disjoint_minibatches)?;
        let mut rngs = rngs.into_iter();
        Ok(Agent {
            config,
            online,
            target,
            adam,
            buffer,
            env_steps,
            gradient_updates,
            action_rng: rngs.next().expect("three rngs parsed"),
            sampling_rng: rngs.next().expect("three rngs parsed"),
            routing_rng: rngs.next().expect("three rngs parsed"),
        })
    }
}

/// Everything a training hook can see after each env step.
pub struct StepEvent<'a> {
    pub env_steps: u64,
    pub epsilon: f64,
    pub transition: &'a Transition,
    pub update: Option<&'a UpdateReport>,
}

pub type HookError = Box<dyn std::error::Error + Send + Sync>;

/// Periodic callback driven by [`train`]; the harness hangs evaluation
/// phases and metrics logging off this.
pub trait TrainHook {
    fn after_step(&mut self, agent: &Agent, event: &StepEvent) -> Result<(), HookError> {
        let _ = (agent, event);
        Ok(())
    }
}

/// Hook that does nothing.
pub struct NoHook;

impl TrainHook for NoHook {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub env_steps: u64,
    pub gradient_updates: u64,
    pub episodes_completed: u64,
    pub final_epsilon: f64,
}

/// The training loop: epsilon-greedy act, store, update every k steps after
/// warmup, refresh targets every C updates. Aborts on non-finite loss.
pub fn train(
    agent: &mut Agent,
    env: &mut dyn Environment,
    env_rng: &mut ChaCha8Rng,
    total_steps: u64,
    hook: &mut dyn TrainHook,
) -> Result<TrainSummary, AgentError> {
    let arch = &agent.config.architecture;
    if env.observation_dim() != arch.input_dim || env.n_actions() != arch.n_actions {
        return Err(AgentError::Config(format!(
            "env is {}-dim/{} actions but the network expects {}/{}",
            env.observation_dim(),
            env.n_actions(),
            arch.input_dim,
            arch.n_actions
        )));
    }
    let mut episodes_completed = 0;
    let mut epsilon = agent.config.epsilon.epsilon_at(agent.env_steps);
    let mut obs = env.reset(env_rng);
    for _ in 0..total_steps {
        epsilon = agent.config.epsilon.epsilon_at(agent.env_steps);
        let action = agent.select_action(&obs, epsilon)?;
        let step = env.step(action, env_rng)?;
        let transition = Transition {
            state: obs,
            action,
            reward: step.reward,
            next_state: step.next_state.clone(),
            terminal: step.terminal,
            truncated: step.truncated,
        };
        agent.record_transition(transition.clone());
        agent.env_steps += 1;
        let update = agent.maybe_update()?;
        hook.after_step(
            agent,
            &StepEvent { env_steps: agent.env_steps, epsilon, transition: &transition, update: update.as_ref() },
        )
        .map_err(AgentError::Hook)?;
        obs = if step.terminal || step.truncated {
            episodes_completed += 1;
            env.reset(env_rng)
        } else {
            step.next_state
        };
    }
    Ok(TrainSummary {
        env_steps: agent.env_steps,
        gradient_updates: agent.gradient_updates,
        episodes_completed,
        final_epsilon: epsilon,
    })
}
