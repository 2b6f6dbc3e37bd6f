//! Evaluation phases, the overestimation estimator, and aggregate score
//! metrics.
//!
//! A phase runs near-greedy episodes inside a fixed step budget. The episode
//! in progress when the budget runs out is discarded; episodes ended by the
//! env's own time limit count as completed-with-truncation and bootstrap the
//! tail with the agent's greedy value at the final state. Overestimation is
//! the mean decision-time prediction minus the mean empirical discounted
//! return over exactly the same (state, action) positions, so the two sides
//! are always aligned, explore steps included.
//!
//! Score aggregation follows the normalized-score conventions: per-cell
//! normalization against (random, human) baselines, mean/median over
//! per-environment seed means, interquartile mean over the flattened cells,
//! and stratified bootstrap confidence intervals that resample seeds within
//! each environment.

use crate::agents::{Agent, AgentError};
use crate::envs::{EnvError, Environment};
use crate::tabular::{argmax_lowest_index, QTable, TabularError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("no (state, action) pairs to aggregate")]
    EmptyPairs,
    #[error("bootstrap value supplied for a terminal episode")]
    BootstrapOnTerminal,
    #[error("truncated episode needs a bootstrap value")]
    MissingBootstrap,
    #[error("environment {0:?} has no (random, human) baseline")]
    MissingBaselines(String),
    #[error("environment {0:?} has human == random; normalization undefined")]
    DegenerateBaseline(String),
    #[error("environment {env:?} has {seeds} seed(s); stratified resampling needs at least 2")]
    TooFewSeeds { env: String, seeds: usize },
    #[error("curves must be equal length; saw {0} and {1}")]
    RaggedCurves(usize, usize),
    #[error("agent scoring failed: {0}")]
    Scoring(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
}

/// What an evaluation rollout needs from a policy: a scoring row per state
/// (the averaged online heads for DDQL) and the discount for return
/// accounting. Greedy ties break by lowest index for every implementation.
pub trait EvalAgent {
    fn score_row(&self, state: &[f64]) -> Result<Vec<f64>, EvalError>;
    fn gamma(&self) -> f64;
}

impl EvalAgent for Agent {
    fn score_row(&self, state: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.decision_values(state).map_err(|e: AgentError| EvalError::Scoring(Box::new(e)))
    }

    fn gamma(&self) -> f64 {
        self.config().gamma
    }
}

/// Oracle-table adapter: scores one-hot states straight from a Q-table.
/// Bridges value-iteration or policy-evaluation output into evaluation
/// rollouts, which is how predictions get pinned to exact oracle values.
pub struct TabularEvalAgent {
    pub q: QTable,
    pub gamma: f64,
}

impl EvalAgent for TabularEvalAgent {
    fn score_row(&self, state: &[f64]) -> Result<Vec<f64>, EvalError> {
        let s = state
            .iter()
            .position(|&v| v == 1.0)
            .ok_or_else(|| EvalError::InvalidArg("observation is not one-hot".into()))?;
        Ok(self.q.row(s).to_vec())
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// How a completed evaluation episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeEnd {
    Terminal,
    Truncated,
}

/// Per-position discounted returns for one completed episode:
/// `Return(t) = sum_{j >= t+1} gamma^(j-t-1) r_j`, plus
/// `gamma^(T-t) * bootstrap_value` when the episode was truncated.
/// `rewards[t]` is the reward that followed the action at position t.
pub fn discounted_returns(
    rewards: &[f64],
    gamma: f64,
    end: EpisodeEnd,
    bootstrap_value: Option<f64>,
) -> Result<Vec<f64>, EvalError> {
    if rewards.is_empty() {
        return Err(EvalError::InvalidArg("episode has no steps".into()));
    }
    let tail = match (end, bootstrap_value) {
        (EpisodeEnd::Terminal, None) => 0.0,
        (EpisodeEnd::Terminal, Some(_)) => return Err(EvalError::BootstrapOnTerminal),
        (EpisodeEnd::Truncated, Some(b)) => b,
        (EpisodeEnd::Truncated, None) => return Err(EvalError::MissingBootstrap),
    };
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = tail;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    Ok(returns)
}

/// The estimator's three outputs over aligned (prediction, return) pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overestimate {
    pub q_hat: f64,
    pub g_hat: f64,
    /// Always exactly `q_hat - g_hat`; negative means underestimation.
    pub overestimation: f64,
}

pub fn compute_overestimation(
    predictions: &[f64],
    returns: &[f64],
) -> Result<Overestimate, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyPairs);
    }
    if predictions.len() != returns.len() {
        return Err(EvalError::InvalidArg(format!(
            "{} predictions vs {} returns",
            predictions.len(),
            returns.len()
        )));
    }
    let n = predictions.len() as f64;
    let q_hat = predictions.iter().sum::<f64>() / n;
    let g_hat = returns.iter().sum::<f64>() / n;
    Ok(Overestimate { q_hat, g_hat, overestimation: q_hat - g_hat })
}

/// One evaluation phase's yield. `phase_index` and `env_steps_at_phase` are
/// bookkeeping the caller stamps on afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationPhaseReport {
    pub phase_index: u64,
    pub env_steps_at_phase: u64,
    /// Undiscounted episode scores, completion order.
    pub completed_episode_returns: Vec<f64>,
    pub mean_predicted_q: f64,
    pub mean_empirical_return: f64,
    pub overestimation: f64,
    pub n_state_action_pairs: usize,
    pub n_truncation_bootstraps: usize,
    /// True when the budget produced zero completed episodes; the three
    /// means are 0.0 and meaningless in that case.
    pub empty: bool,
}

struct EpisodeRecord {
    predictions: Vec<f64>,
    rewards: Vec<f64>,
    end: EpisodeEnd,
    bootstrap: Option<f64>,
}

/// Runs epsilon-greedy evaluation episodes until `phase_length_steps` env
/// steps elapse. Predictions enter Q-hat at decision time for whichever
/// action actually executes, exploration included. A phase that completes
/// zero episodes comes back flagged empty rather than as an error.
pub fn run_evaluation_phase(
    agent: &dyn EvalAgent,
    env: &mut dyn Environment,
    eval_epsilon: f64,
    phase_length_steps: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EvaluationPhaseReport, EvalError> {
    if phase_length_steps == 0 {
        return Err(EvalError::InvalidArg("phase_length_steps must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&eval_epsilon) {
        return Err(EvalError::InvalidArg(format!("eval_epsilon {eval_epsilon} outside [0, 1]")));
    }
    let mut steps_left = phase_length_steps;
    let mut episodes: Vec<EpisodeRecord> = Vec::new();
    'phase: while steps_left > 0 {
        let mut obs = env.reset(rng);
        let mut predictions = Vec::new();
        let mut rewards = Vec::new();
        loop {
            if steps_left == 0 {
                // Budget ran out mid-episode: per the discard rule this
                // episode contributes nothing.
                break 'phase;
            }
            let row = agent.score_row(&obs)?;
            let action = if eval_epsilon > 0.0 && rng.random::<f64>() < eval_epsilon {
                rng.random_range(0..row.len())
            } else {
                argmax_lowest_index(&row)?
            };
            predictions.push(row[action]);
            let step = env.step(action, rng)?;
            steps_left -= 1;
            rewards.push(step.reward);
            if step.terminal {
                episodes.push(EpisodeRecord { predictions, rewards, end: EpisodeEnd::Terminal, bootstrap: None });
                break;
            }
            if step.truncated {
                // Env time limit: completed-with-truncation, priced by the
                // agent's own greedy value at the state it was left in.
                let final_row = agent.score_row(&step.next_state)?;
                let bootstrap = final_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                episodes.push(EpisodeRecord {
                    predictions,
                    rewards,
                    end: EpisodeEnd::Truncated,
                    bootstrap: Some(bootstrap),
                });
                break;
            }
            obs = step.next_state;
        }
    }
    if episodes.is_empty() {
        return Ok(EvaluationPhaseReport {
            phase_index: 0,
            env_steps_at_phase: 0,
            completed_episode_returns: Vec::new(),
            mean_predicted_q: 0.0,
            mean_empirical_return: 0.0,
            overestimation: 0.0,
            n_state_action_pairs: 0,
            n_truncation_bootstraps: 0,
            empty: true,
        });
    }
    let mut all_predictions = Vec::new();
    let mut all_returns = Vec::new();
    let mut scores = Vec::with_capacity(episodes.len());
    let mut n_truncation_bootstraps = 0;
    for ep in &episodes {
        let returns = discounted_returns(&ep.rewards, agent.gamma(), ep.end, ep.bootstrap)?;
        all_predictions.extend_from_slice(&ep.predictions);
        all_returns.extend_from_slice(&returns);
        scores.push(ep.rewards.iter().sum());
        if ep.end == EpisodeEnd::Truncated {
            n_truncation_bootstraps += 1;
        }
    }
    let o = compute_overestimation(&all_predictions, &all_returns)?;
    Ok(EvaluationPhaseReport {
        phase_index: 0,
        env_steps_at_phase: 0,
        completed_episode_returns: scores,
        mean_predicted_q: o.q_hat,
        mean_empirical_return: o.g_hat,
        overestimation: o.overestimation,
        n_state_action_pairs: all_predictions.len(),
        n_truncation_bootstraps,
        empty: false,
    })
}

/// Raw scores for one environment across seeds, with its optional
/// (random, human) baseline pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvScores {
    pub env: String,
    pub seed_scores: Vec<f64>,
    pub baseline: Option<(f64, f64)>,
}

/// The env x seed score grid every aggregate metric consumes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScorePanel {
    pub rows: Vec<EnvScores>,
}

impl ScorePanel {
    pub fn push(&mut self, env: impl Into<String>, seed_scores: Vec<f64>, baseline: Option<(f64, f64)>) {
        self.rows.push(EnvScores { env: env.into(), seed_scores, baseline });
    }
}

/// Normalized cells plus the three aggregate statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMetrics {
    /// Same shape as the panel: one row per environment, one cell per seed.
    pub per_cell: Vec<Vec<f64>>,
    pub mean: f64,
    pub median: f64,
    pub iqm: f64,
}

fn normalized_cells(panel: &ScorePanel) -> Result<Vec<Vec<f64>>, EvalError> {
    if panel.rows.is_empty() {
        return Err(EvalError::InvalidArg("empty score panel".into()));
    }
    panel
        .rows
        .iter()
        .map(|row| {
            let (random, human) =
                row.baseline.ok_or_else(|| EvalError::MissingBaselines(row.env.clone()))?;
            if human == random {
                return Err(EvalError::DegenerateBaseline(row.env.clone()));
            }
            if row.seed_scores.is_empty() {
                return Err(EvalError::InvalidArg(format!("environment {:?} has no seeds", row.env)));
            }
            Ok(row.seed_scores.iter().map(|s| (s - random) / (human - random)).collect())
        })
        .collect()
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Interquartile mean: sort, drop floor(n/4) values from each end, average
/// the rest.
pub fn interquartile_mean(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::InvalidArg("interquartile mean of nothing".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let drop = sorted.len() / 4;
    let kept = &sorted[drop..sorted.len() - drop];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Normalized-score aggregates: mean and median are taken over the
/// per-environment seed means; the IQM pools every env x seed cell.
pub fn normalized_score_metrics(panel: &ScorePanel) -> Result<NormalizedMetrics, EvalError> {
    let per_cell = normalized_cells(panel)?;
    let env_means: Vec<f64> =
        per_cell.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
    let mean = env_means.iter().sum::<f64>() / env_means.len() as f64;
    let median = median_of(&mut env_means.clone());
    let flattened: Vec<f64> = per_cell.iter().flatten().copied().collect();
    let iqm = interquartile_mean(&flattened)?;
    Ok(NormalizedMetrics { per_cell, mean, median, iqm })
}

/// Which aggregate a bootstrap interval is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Median,
    Iqm,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
            Statistic::Iqm => "iqm",
        }
    }

    pub fn parse(s: &str) -> Result<Self, EvalError> {
        match s {
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Median),
            "iqm" => Ok(Statistic::Iqm),
            other => Err(EvalError::InvalidArg(format!("unknown statistic {other:?}"))),
        }
    }

    pub fn of(self, metrics: &NormalizedMetrics) -> f64 {
        match self {
            Statistic::Mean => metrics.mean,
            Statistic::Median => metrics.median,
            Statistic::Iqm => metrics.iqm,
        }
    }
}

/// Percentile bootstrap interval for a normalized-score statistic. Every
/// resample redraws seeds with replacement independently within each
/// environment stratum. Use at least 1000 resamples for anything reported.
pub fn stratified_bootstrap_ci(
    panel: &ScorePanel,
    statistic: Statistic,
    n_resamples: usize,
    confidence: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), EvalError> {
    if n_resamples == 0 {
        return Err(EvalError::InvalidArg("n_resamples must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&confidence) || confidence == 0.0 {
        return Err(EvalError::InvalidArg(format!("confidence {confidence} outside (0, 1)")));
    }
    for row in &panel.rows {
        if row.seed_scores.len() < 2 {
            return Err(EvalError::TooFewSeeds { env: row.env.clone(), seeds: row.seed_scores.len() });
        }
    }
    // Surface baseline problems before burning resamples.
    normalized_score_metrics(panel)?;
    let mut stats = Vec::with_capacity(n_resamples);
    let mut resampled = panel.clone();
    for _ in 0..n_resamples {
        for (row, source) in resampled.rows.iter_mut().zip(&panel.rows) {
            for slot in row.seed_scores.iter_mut() {
                *slot = source.seed_scores[rng.random_range(0..source.seed_scores.len())];
            }
        }
        stats.push(statistic.of(&normalized_score_metrics(&resampled)?));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    let edge = |q: f64| stats[(q * (stats.len() - 1) as f64).round() as usize];
    Ok((edge(alpha / 2.0), edge(1.0 - alpha / 2.0)))
}

/// Pooled mean over every phase value of every seed's curve. Curves must be
/// equal length.
pub fn auc_mean(curves: &[Vec<f64>]) -> Result<f64, EvalError> {
    if curves.is_empty() || curves[0].is_empty() {
        return Err(EvalError::InvalidArg("no curves".into()));
    }
    for c in curves {
        if c.len() != curves[0].len() {
            return Err(EvalError::RaggedCurves(curves[0].len(), c.len()));
        }
    }
    let total: f64 = curves.iter().flatten().sum();
    Ok(total / (curves.len() * curves[0].len()) as f64)
}
