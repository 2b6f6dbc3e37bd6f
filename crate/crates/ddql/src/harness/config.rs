//! Flat key=value experiment configs with dotted section names.
//!
//! Grammar: one `section.key = value` per line, `#` starts a comment, blank
//! lines ignored. Every key must be consumed by the schema below; unknown or
//! duplicate keys are errors, so typos fail loudly before any run starts.
//! Agent keys default to the desk recipe and override field by field.

use super::HarnessError;
use crate::agents::{AgentConfig, Algorithm, BootstrapVariant};
use crate::envs::{BaseEnv, EnvSpec, MaxBiasChain};
use crate::nn::{Activation, HeadMode};
use crate::replay::BufferMode;
use std::fmt::Display;
use std::str::FromStr;

fn cfg_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Parsed key=value pairs with consumption tracking.
struct KvConfig {
    entries: Vec<(String, String, bool)>,
}

impl KvConfig {
    fn parse(text: &str) -> Result<KvConfig, HarnessError> {
        let mut entries: Vec<(String, String, bool)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value, got {raw:?}", idx + 1)))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_') {
                return Err(cfg_err(format!("line {}: bad key {key:?}", idx + 1)));
            }
            if entries.iter().any(|(k, _, _)| k == key) {
                return Err(cfg_err(format!("line {}: duplicate key {key:?}", idx + 1)));
            }
            entries.push((key.to_string(), value.to_string(), false));
        }
        Ok(KvConfig { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.iter_mut().find(|(k, _, _)| k == key).map(|e| {
            e.2 = true;
            e.1.clone()
        })
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, HarnessError>
    where
        T::Err: Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| cfg_err(format!("key {key}: cannot parse {v:?}: {e}"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, HarnessError>
    where
        T::Err: Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn req<T: FromStr>(&mut self, key: &str) -> Result<T, HarnessError>
    where
        T::Err: Display,
    {
        self.opt(key)?.ok_or_else(|| cfg_err(format!("missing required key {key}")))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, HarnessError>
    where
        T::Err: Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|item| {
                    let item = item.trim();
                    item.parse::<T>()
                        .map_err(|e| cfg_err(format!("key {key}: cannot parse element {item:?}: {e}")))
                })
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }

    fn finish(self) -> Result<(), HarnessError> {
        let unknown: Vec<&str> =
            self.entries.iter().filter(|(_, _, taken)| !taken).map(|(k, _, _)| k.as_str()).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(cfg_err(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}

/// Evaluation cadence during training, in env steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalSettings {
    /// A phase runs whenever env_steps is a multiple of this.
    pub frequency: u64,
    pub phase_steps: u64,
}

/// One experiment: an env, an agent recipe, a seed list, and schedules.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub id: String,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub concurrency: usize,
    /// Relative to the output root.
    pub output_dir: String,
    pub env: EnvSpec,
    pub agent: AgentConfig,
    pub eval: EvalSettings,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, HarnessError> {
        let mut kv = KvConfig::parse(text)?;

        let id: String = kv.req("experiment.id")?;
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(cfg_err(format!("experiment.id {id:?} must be [A-Za-z0-9_-]+")));
        }
        let seeds: Vec<u64> =
            kv.list("experiment.seeds")?.ok_or_else(|| cfg_err("missing required key experiment.seeds"))?;
        if seeds.is_empty() {
            return Err(cfg_err("experiment.seeds is empty"));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(cfg_err("experiment.seeds contains duplicates"));
        }
        let total_steps: u64 = kv.or("experiment.total_steps", 150_000)?;
        let concurrency: usize = kv.or("experiment.concurrency", 1)?;
        if total_steps == 0 || concurrency == 0 {
            return Err(cfg_err("experiment.total_steps and experiment.concurrency must be >= 1"));
        }
        let output_dir: String = kv.or("experiment.output_dir", "runs".to_string())?;

        let env = parse_env(&mut kv)?;
        env.build()?;

        let algorithm = Algorithm::parse(&kv.req::<String>("agent.algorithm")?)?;
        let mut agent = AgentConfig::desk(algorithm, env.observation_dim(), env.n_actions());
        if let Some(v) = kv.take("agent.variant") {
            agent.bootstrap_variant = BootstrapVariant::parse(&v)?;
        }
        if let Some(v) = kv.take("agent.head_mode") {
            agent.architecture.head_mode = HeadMode::parse(&v)?;
        }
        if let Some(v) = kv.list("agent.hidden_sizes")? {
            agent.architecture.hidden_sizes = v;
        }
        if let Some(v) = kv.take("agent.activation") {
            agent.architecture.activation = Activation::parse(&v)?;
        }
        agent.architecture.shared_output_bias =
            kv.or("agent.shared_output_bias", agent.architecture.shared_output_bias)?;
        agent.gamma = kv.or("agent.gamma", agent.gamma)?;
        agent.minibatch_size = kv.or("agent.minibatch_size", agent.minibatch_size)?;
        agent.update_frequency = kv.or("agent.update_frequency", agent.update_frequency)?;
        agent.target_interval = kv.or("agent.target_interval", agent.target_interval)?;
        if let Some(v) = kv.take("agent.buffer") {
            agent.buffer_mode = BufferMode::parse(&v)?;
        }
        agent.buffer_capacity = kv.or("agent.buffer_capacity", agent.buffer_capacity)?;
        agent.disjoint_minibatches = kv.or("agent.disjoint_minibatches", agent.disjoint_minibatches)?;
        agent.replay_start_size = kv.or("agent.replay_start_size", agent.replay_start_size)?;
        agent.epsilon.initial = kv.or("agent.epsilon_initial", agent.epsilon.initial)?;
        agent.epsilon.final_value = kv.or("agent.epsilon_final", agent.epsilon.final_value)?;
        agent.epsilon.anneal_steps = kv.or("agent.epsilon_anneal_steps", agent.epsilon.anneal_steps)?;
        agent.eval_epsilon = kv.or("agent.eval_epsilon", agent.eval_epsilon)?;
        agent.identical_init = kv.or("agent.identical_init", agent.identical_init)?;
        agent.adam.step_size = kv.or("agent.adam_step_size", agent.adam.step_size)?;
        agent.adam.beta1 = kv.or("agent.adam_beta1", agent.adam.beta1)?;
        agent.adam.beta2 = kv.or("agent.adam_beta2", agent.adam.beta2)?;
        agent.adam.epsilon = kv.or("agent.adam_epsilon", agent.adam.epsilon)?;
        agent.clip_rewards = kv.or("agent.clip_rewards", agent.clip_rewards)?;
        agent.uniform_tie_break = kv.or("agent.uniform_tie_break", agent.uniform_tie_break)?;
        agent.validate()?;

        let eval = EvalSettings {
            frequency: kv.or("eval.frequency", 2000)?,
            phase_steps: kv.or("eval.phase_steps", 5000)?,
        };
        if eval.frequency == 0 || eval.phase_steps == 0 {
            return Err(cfg_err("eval.frequency and eval.phase_steps must be >= 1"));
        }

        kv.finish()?;
        Ok(ExperimentConfig { id, seeds, total_steps, concurrency, output_dir, env, agent, eval })
    }

    /// Compact env tag used as the CSV `env` column and the grid key.
    pub fn env_label(&self) -> String {
        env_label(&self.env)
    }

    pub fn phases_per_run(&self) -> u64 {
        self.total_steps / self.eval.frequency
    }
}

pub fn env_label(spec: &EnvSpec) -> String {
    match spec.base {
        BaseEnv::MaxBiasChain { n_arms, .. } => format!("maxbias{n_arms}"),
        BaseEnv::StochasticGridworld { width, height, .. } => format!("gridworld{width}x{height}"),
    }
}

fn parse_env(kv: &mut KvConfig) -> Result<EnvSpec, HarnessError> {
    let base_name: String = kv.req("env.base")?;
    let base = match base_name.as_str() {
        "maxbias" => {
            let d = MaxBiasChain::default();
            BaseEnv::MaxBiasChain {
                n_arms: kv.or("env.n_arms", d.n_arms)?,
                arm_mean: kv.or("env.arm_mean", d.arm_mean)?,
                arm_std: kv.or("env.arm_std", d.arm_std)?,
            }
        }
        "gridworld" => BaseEnv::StochasticGridworld {
            width: kv.or("env.width", 5)?,
            height: kv.or("env.height", 5)?,
            slip_prob: kv.or("env.slip_prob", 0.1)?,
            goal_noise_std: kv.or("env.goal_noise_std", 0.5)?,
        },
        other => return Err(cfg_err(format!("env.base {other:?} is not maxbias or gridworld"))),
    };
    // Gridworlds default to the 500-step limit; "none" disables any limit.
    let default_max = match base {
        BaseEnv::StochasticGridworld { .. } => Some(500),
        BaseEnv::MaxBiasChain { .. } => None,
    };
    let max_steps = match kv.take("env.max_steps") {
        None => default_max,
        Some(v) if v == "none" => None,
        Some(v) => Some(
            v.parse::<u64>()
                .map_err(|e| cfg_err(format!("key env.max_steps: cannot parse {v:?}: {e}")))?,
        ),
    };
    Ok(EnvSpec {
        base,
        sticky_prob: kv.or("env.sticky_prob", 0.0)?,
        max_steps,
        clip_rewards: kv.or("env.clip_rewards", false)?,
    })
}
