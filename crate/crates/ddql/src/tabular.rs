//! Exact tabular MDPs, planning oracles, and sample-based tabular learners.
//!
//! This module is the ground-truth side of the crate: [`value_iteration`] and
//! [`policy_q_evaluation`] solve a [`TabularMdp`] to a fixed point, and the
//! incremental learners ([`q_learning_step`], [`double_q_learning_step`],
//! [`TabularLearner`]) are checked against those fixed points by the test
//! suite. Stochastic rewards are realized by [`TabularMdp::sample_step`] at
//! step time; the planning oracles always use their means.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Stopping tolerance used by the fixed-point solvers when the caller has no
/// opinion: iteration stops once a full sweep moves no entry by more than
/// this (max norm).
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Absolute tolerance within which two action values count as tied when
/// forming the greedy policy distribution.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("state {state} out of range (n_states = {n_states})")]
    StateOutOfRange { state: usize, n_states: usize },
    #[error("action {action} out of range (n_actions = {n_actions})")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("policy row for state {state} is not a distribution: {reason}")]
    InvalidPolicy { state: usize, reason: String },
    #[error("mdp text parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty action-value row")]
    EmptyRow,
}

/// One sampled interaction, in the shape the incremental learners consume.
/// `terminal` means `next_state` is absorbing and targets must not bootstrap
/// through it; a truncated-but-live episode end is *not* terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularTransition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

/// Finite MDP with explicit transition probabilities, mean rewards, and
/// optional Gaussian reward noise.
///
/// Rewards are defined per (s, a, s') triple; `reward(s, a, s')` is always
/// the *mean*. Noise is likewise stored per triple so that, e.g., entering a
/// goal cell can be noisy while every other successor of the same (s, a) is
/// deterministic. Terminal states self-loop with reward 0 under every action;
/// [`TabularMdp::set_terminal`] wires that up.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    /// Row-major [s][a][s'] transition probabilities.
    transition: Vec<f64>,
    /// Row-major [s][a][s'] mean rewards.
    reward: Vec<f64>,
    /// Row-major [s][a][s'] Gaussian reward std-devs (0 = deterministic).
    noise_std: Vec<f64>,
    terminal: Vec<bool>,
}

impl TabularMdp {
    /// All-zero template: every probability, reward, and noise entry is 0 and
    /// no state is terminal. Callers fill it in with the setters and should
    /// finish with [`TabularMdp::validate`].
    pub fn new(n_states: usize, n_actions: usize, gamma: f64) -> Self {
        let triples = n_states * n_actions * n_states;
        TabularMdp {
            n_states,
            n_actions,
            gamma,
            transition: vec![0.0; triples],
            reward: vec![0.0; triples],
            noise_std: vec![0.0; triples],
            terminal: vec![false; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    fn idx(&self, s: usize, a: usize, s2: usize) -> usize {
        debug_assert!(s < self.n_states && a < self.n_actions && s2 < self.n_states);
        (s * self.n_actions + a) * self.n_states + s2
    }

    pub fn transition_prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[self.idx(s, a, s2)]
    }

    /// Mean reward for the triple; the sampler adds noise on top of this.
    pub fn mean_reward(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.reward[self.idx(s, a, s2)]
    }

    pub fn noise_std(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.noise_std[self.idx(s, a, s2)]
    }

    pub fn set_transition(&mut self, s: usize, a: usize, s2: usize, p: f64) {
        let i = self.idx(s, a, s2);
        self.transition[i] = p;
    }

    pub fn set_reward(&mut self, s: usize, a: usize, s2: usize, r: f64) {
        let i = self.idx(s, a, s2);
        self.reward[i] = r;
    }

    /// Gaussian reward hook for every successor of (s, a): the sampled reward
    /// becomes `mean + std * z` regardless of which s' is realized. This is
    /// the right shape for bandit-style arms whose payout ignores the
    /// successor.
    pub fn set_reward_noise(&mut self, s: usize, a: usize, mean: f64, std: f64) {
        for s2 in 0..self.n_states {
            let i = self.idx(s, a, s2);
            self.reward[i] = mean;
            self.noise_std[i] = std;
        }
    }

    /// Noise on a single (s, a, s') triple, leaving the mean reward alone.
    pub fn set_noise_std(&mut self, s: usize, a: usize, s2: usize, std: f64) {
        let i = self.idx(s, a, s2);
        self.noise_std[i] = std;
    }

    /// Marks `s` terminal and installs the required self-loop: probability 1
    /// back onto `s` with reward 0 and no noise, under every action.
    pub fn set_terminal(&mut self, s: usize) {
        self.terminal[s] = true;
        for a in 0..self.n_actions {
            for s2 in 0..self.n_states {
                let i = self.idx(s, a, s2);
                self.transition[i] = if s2 == s { 1.0 } else { 0.0 };
                self.reward[i] = 0.0;
                self.noise_std[i] = 0.0;
            }
        }
    }

    /// Checks the structural invariants: probabilities in [0, 1] with every
    /// (s, a) row summing to 1 within 1e-12, finite rewards, non-negative
    /// noise, and terminal states self-looping with reward 0.
    pub fn validate(&self) -> Result<(), TabularError> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(TabularError::InvalidMdp("empty state or action space".into()));
        }
        if !self.gamma.is_finite() || !(0.0..=1.0).contains(&self.gamma) {
            return Err(TabularError::InvalidMdp(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let mut sum = 0.0;
                for s2 in 0..self.n_states {
                    let p = self.transition_prob(s, a, s2);
                    if !(0.0..=1.0 + 1e-12).contains(&p) {
                        return Err(TabularError::InvalidMdp(format!(
                            "P({s2} | {s}, {a}) = {p} outside [0, 1]"
                        )));
                    }
                    let r = self.mean_reward(s, a, s2);
                    if !r.is_finite() {
                        return Err(TabularError::InvalidMdp(format!("reward({s}, {a}, {s2}) not finite")));
                    }
                    let n = self.noise_std(s, a, s2);
                    if !n.is_finite() || n < 0.0 {
                        return Err(TabularError::InvalidMdp(format!("noise std ({s}, {a}, {s2}) = {n}")));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(TabularError::InvalidMdp(format!(
                        "P(. | {s}, {a}) sums to {sum}, expected 1"
                    )));
                }
                if self.terminal[s] {
                    let self_loop = self.transition_prob(s, a, s);
                    let self_reward = self.mean_reward(s, a, s);
                    if (self_loop - 1.0).abs() > 1e-12 || self_reward != 0.0 {
                        return Err(TabularError::InvalidMdp(format!(
                            "terminal state {s} must self-loop with reward 0"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws s' from P(. | s, a) and a reward from the triple's Gaussian
    /// (mean reward, noise std). Returns the transition with the successor's
    /// terminal flag filled in.
    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        s: usize,
        a: usize,
        rng: &mut R,
    ) -> Result<TabularTransition, TabularError> {
        if s >= self.n_states {
            return Err(TabularError::StateOutOfRange { state: s, n_states: self.n_states });
        }
        if a >= self.n_actions {
            return Err(TabularError::ActionOutOfRange { action: a, n_actions: self.n_actions });
        }
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut s2 = self.n_states - 1;
        for cand in 0..self.n_states {
            cum += self.transition_prob(s, a, cand);
            if u < cum {
                s2 = cand;
                break;
            }
        }
        let std = self.noise_std(s, a, s2);
        let mut reward = self.mean_reward(s, a, s2);
        if std > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            reward += std * z;
        }
        Ok(TabularTransition { state: s, action: a, reward, next_state: s2, terminal: self.terminal[s2] })
    }

    /// Plain-text serialization. Line-oriented, `#` comments, floats printed
    /// with shortest round-trip formatting:
    ///
    /// ```text
    /// states N
    /// actions M
    /// gamma G
    /// terminal S            (one line per terminal state)
    /// transition S A S2 P   (omitted when P = 0)
    /// reward S A S2 R       (omitted when R = 0)
    /// noise S A S2 STD      (omitted when STD = 0)
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("states {}\n", self.n_states));
        out.push_str(&format!("actions {}\n", self.n_actions));
        out.push_str(&format!("gamma {}\n", self.gamma));
        for s in 0..self.n_states {
            if self.terminal[s] {
                out.push_str(&format!("terminal {s}\n"));
            }
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for s2 in 0..self.n_states {
                    let p = self.transition_prob(s, a, s2);
                    if p != 0.0 {
                        out.push_str(&format!("transition {s} {a} {s2} {p}\n"));
                    }
                    let r = self.mean_reward(s, a, s2);
                    if r != 0.0 {
                        out.push_str(&format!("reward {s} {a} {s2} {r}\n"));
                    }
                    let n = self.noise_std(s, a, s2);
                    if n != 0.0 {
                        out.push_str(&format!("noise {s} {a} {s2} {n}\n"));
                    }
                }
            }
        }
        out
    }

    /// Parses the format written by [`TabularMdp::to_text`] and validates the
    /// result. `states` and `actions` must appear before any directive that
    /// needs them.
    pub fn from_text(text: &str) -> Result<Self, TabularError> {
        let mut n_states = None;
        let mut n_actions = None;
        let mut gamma = None;
        let mut mdp: Option<TabularMdp> = None;
        let mut terminals = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = line_no + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut parts = body.split_whitespace();
            let directive = parts.next().unwrap();
            let rest: Vec<&str> = parts.collect();
            let parse_usize = |tok: &str| {
                tok.parse::<usize>()
                    .map_err(|_| TabularError::Parse { line, msg: format!("expected integer, got {tok:?}") })
            };
            let parse_f64 = |tok: &str| {
                tok.parse::<f64>()
                    .map_err(|_| TabularError::Parse { line, msg: format!("expected number, got {tok:?}") })
            };
            let arity = |want: usize| {
                if rest.len() == want {
                    Ok(())
                } else {
                    Err(TabularError::Parse {
                        line,
                        msg: format!("{directive} takes {want} arguments, got {}", rest.len()),
                    })
                }
            };
            match directive {
                "states" => {
                    arity(1)?;
                    n_states = Some(parse_usize(rest[0])?);
                }
                "actions" => {
                    arity(1)?;
                    n_actions = Some(parse_usize(rest[0])?);
                }
                "gamma" => {
                    arity(1)?;
                    gamma = Some(parse_f64(rest[0])?);
                }
                "terminal" | "transition" | "reward" | "noise" => {
                    if mdp.is_none() {
                        let (Some(ns), Some(na), Some(g)) = (n_states, n_actions, gamma) else {
                            return Err(TabularError::Parse {
                                line,
                                msg: "states, actions, and gamma must come first".into(),
                            });
                        };
                        mdp = Some(TabularMdp::new(ns, na, g));
                    }
                    let m = mdp.as_mut().unwrap();
                    let check_state = |s: usize| {
                        if s < m.n_states {
                            Ok(s)
                        } else {
                            Err(TabularError::Parse { line, msg: format!("state {s} out of range") })
                        }
                    };
                    let check_action = |a: usize| {
                        if a < m.n_actions {
                            Ok(a)
                        } else {
                            Err(TabularError::Parse { line, msg: format!("action {a} out of range") })
                        }
                    };
                    if directive == "terminal" {
                        arity(1)?;
                        terminals.push(check_state(parse_usize(rest[0])?)?);
                    } else {
                        arity(4)?;
                        let s = check_state(parse_usize(rest[0])?)?;
                        let a = check_action(parse_usize(rest[1])?)?;
                        let s2 = check_state(parse_usize(rest[2])?)?;
                        let v = parse_f64(rest[3])?;
                        match directive {
                            "transition" => m.set_transition(s, a, s2, v),
                            "reward" => m.set_reward(s, a, s2, v),
                            _ => m.set_noise_std(s, a, s2, v),
                        }
                    }
                }
                other => {
                    return Err(TabularError::Parse { line, msg: format!("unknown directive {other:?}") });
                }
            }
        }
        let mut mdp = match (mdp, n_states, n_actions, gamma) {
            (Some(m), ..) => m,
            (None, Some(ns), Some(na), Some(g)) => TabularMdp::new(ns, na, g),
            _ => {
                return Err(TabularError::Parse { line: 0, msg: "missing states/actions/gamma header".into() })
            }
        };
        for s in terminals {
            mdp.set_terminal(s);
        }
        mdp.validate()?;
        Ok(mdp)
    }
}

/// Dense state-action value table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Largest absolute entry-wise difference between two tables of the same
    /// shape.
    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "q-table shapes differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Greatest-value entry of a row, ties broken by lowest index. This is the
/// deterministic argmax used inside every bootstrap target.
pub fn argmax_lowest_index(row: &[f64]) -> Result<usize, TabularError> {
    if row.is_empty() {
        return Err(TabularError::EmptyRow);
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(TabularError::NonFinite { context: "argmax row" });
    }
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Greedy policy as a distribution: probability mass split uniformly over
/// every action whose value is within [`TIE_TOLERANCE`] of the row maximum,
/// zero elsewhere.
pub fn greedy_policy_distribution(row: &[f64]) -> Result<Vec<f64>, TabularError> {
    if row.is_empty() {
        return Err(TabularError::EmptyRow);
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(TabularError::NonFinite { context: "greedy policy row" });
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<bool> = row.iter().map(|&v| (max - v) <= TIE_TOLERANCE).collect();
    let n_tied = tied.iter().filter(|&&t| t).count();
    let share = 1.0 / n_tied as f64;
    Ok(tied.into_iter().map(|t| if t { share } else { 0.0 }).collect())
}

/// One Q-learning update:
/// `Q(s, a) += alpha * (r + gamma * max_a' Q(s', a') - Q(s, a))`,
/// with the bootstrap term dropped on terminal transitions.
pub fn q_learning_step(
    q: &mut QTable,
    t: &TabularTransition,
    alpha: f64,
    gamma: f64,
) -> Result<(), TabularError> {
    let bootstrap = if t.terminal {
        0.0
    } else {
        let next = t.next_state;
        q.get(next, argmax_lowest_index(q.row(next))?)
    };
    let target = t.reward + gamma * bootstrap;
    let updated = q.get(t.state, t.action) + alpha * (target - q.get(t.state, t.action));
    if !updated.is_finite() {
        return Err(TabularError::NonFinite { context: "q-learning update" });
    }
    q.set(t.state, t.action, updated);
    Ok(())
}

/// Which table a double Q-learning update writes to. The *other* table
/// evaluates the action the written table selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoubleUpdate {
    UpdateQ1,
    UpdateQ2,
}

/// One double Q-learning update. For `UpdateQ1`:
/// `a* = argmax_a Q1(s', a)` and
/// `Q1(s, a) += alpha * (r + gamma * Q2(s', a*) - Q1(s, a))`;
/// `UpdateQ2` mirrors the roles. The coin that picks the side lives with the
/// caller so the update itself stays deterministic.
pub fn double_q_learning_step(
    q1: &mut QTable,
    q2: &mut QTable,
    t: &TabularTransition,
    alpha: f64,
    gamma: f64,
    side: DoubleUpdate,
) -> Result<(), TabularError> {
    let (selector, evaluator) = match side {
        DoubleUpdate::UpdateQ1 => (&*q1, &*q2),
        DoubleUpdate::UpdateQ2 => (&*q2, &*q1),
    };
    let bootstrap = if t.terminal {
        0.0
    } else {
        let next = t.next_state;
        evaluator.get(next, argmax_lowest_index(selector.row(next))?)
    };
    let target = t.reward + gamma * bootstrap;
    let written = match side {
        DoubleUpdate::UpdateQ1 => q1,
        DoubleUpdate::UpdateQ2 => q2,
    };
    let updated = written.get(t.state, t.action) + alpha * (target - written.get(t.state, t.action));
    if !updated.is_finite() {
        return Err(TabularError::NonFinite { context: "double q-learning update" });
    }
    written.set(t.state, t.action, updated);
    Ok(())
}

/// Optimal action values by Q-value iteration: sweeps
/// `Q(s, a) = sum_s' P(s'|s,a) * (R(s,a,s') + gamma * max_a' Q(s', a'))`
/// until the max-norm change drops below `tolerance`, with terminal states
/// pinned at zero (equivalently, the bootstrap is dropped when s' is
/// terminal, matching the sample-based learners).
pub fn value_iteration(mdp: &TabularMdp, tolerance: f64) -> Result<QTable, TabularError> {
    mdp.validate()?;
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    loop {
        let mut next = QTable::zeros(mdp.n_states(), mdp.n_actions());
        for s in 0..mdp.n_states() {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..mdp.n_actions() {
                let mut v = 0.0;
                for s2 in 0..mdp.n_states() {
                    let p = mdp.transition_prob(s, a, s2);
                    if p == 0.0 {
                        continue;
                    }
                    let bootstrap = if mdp.is_terminal(s2) {
                        0.0
                    } else {
                        q.row(s2).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    };
                    v += p * (mdp.mean_reward(s, a, s2) + mdp.gamma() * bootstrap);
                }
                if !v.is_finite() {
                    return Err(TabularError::NonFinite { context: "value iteration sweep" });
                }
                next.set(s, a, v);
            }
        }
        let diff = q.max_abs_diff(&next);
        q = next;
        if diff <= tolerance {
            return Ok(q);
        }
    }
}

/// Action values of a fixed stochastic policy: sweeps
/// `Q(s, a) = sum_s' P(s'|s,a) * (R(s,a,s') + gamma * sum_a' pi(a'|s') Q(s', a'))`
/// to a fixed point. `policy[s]` is the action distribution at state `s`;
/// rows must be non-negative and sum to 1 within 1e-9.
pub fn policy_q_evaluation(
    mdp: &TabularMdp,
    policy: &[Vec<f64>],
    tolerance: f64,
) -> Result<QTable, TabularError> {
    mdp.validate()?;
    if policy.len() != mdp.n_states() {
        return Err(TabularError::InvalidPolicy {
            state: policy.len(),
            reason: format!("policy has {} rows for {} states", policy.len(), mdp.n_states()),
        });
    }
    for (s, row) in policy.iter().enumerate() {
        if row.len() != mdp.n_actions() {
            return Err(TabularError::InvalidPolicy { state: s, reason: format!("row length {}", row.len()) });
        }
        if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(TabularError::InvalidPolicy { state: s, reason: "negative or non-finite mass".into() });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TabularError::InvalidPolicy { state: s, reason: format!("mass sums to {sum}") });
        }
    }
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    loop {
        let mut next = QTable::zeros(mdp.n_states(), mdp.n_actions());
        for s in 0..mdp.n_states() {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..mdp.n_actions() {
                let mut v = 0.0;
                for s2 in 0..mdp.n_states() {
                    let p = mdp.transition_prob(s, a, s2);
                    if p == 0.0 {
                        continue;
                    }
                    let bootstrap = if mdp.is_terminal(s2) {
                        0.0
                    } else {
                        policy[s2].iter().zip(q.row(s2)).map(|(pi, qv)| pi * qv).sum()
                    };
                    v += p * (mdp.mean_reward(s, a, s2) + mdp.gamma() * bootstrap);
                }
                if !v.is_finite() {
                    return Err(TabularError::NonFinite { context: "policy evaluation sweep" });
                }
                next.set(s, a, v);
            }
        }
        let diff = q.max_abs_diff(&next);
        q = next;
        if diff <= tolerance {
            return Ok(q);
        }
    }
}

/// Step-size rule for the incremental learners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSizeSchedule {
    Constant(f64),
    /// `alpha = initial / n(s, a)^exponent` where n counts visits to the
    /// updated pair, starting at 1 on the first update. Exponent in
    /// (0.5, 1.0] satisfies the usual stochastic-approximation conditions.
    VisitDecay { initial: f64, exponent: f64 },
}

impl StepSizeSchedule {
    fn alpha(&self, visit: u64) -> f64 {
        match *self {
            StepSizeSchedule::Constant(a) => a,
            StepSizeSchedule::VisitDecay { initial, exponent } => initial / (visit as f64).powf(exponent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabularAlgorithm {
    QLearning,
    DoubleQLearning,
}

#[derive(Debug, Clone)]
pub struct TabularLearnerConfig {
    pub algorithm: TabularAlgorithm,
    pub step_size: StepSizeSchedule,
    pub epsilon: f64,
    /// Uniform sampling over greedy ties during action selection. The
    /// default (true) keeps initially indistinguishable actions symmetric,
    /// which bias-measurement setups rely on; false always takes the lowest
    /// tied index.
    pub uniform_tie_break: bool,
}

impl TabularLearnerConfig {
    pub fn new(algorithm: TabularAlgorithm) -> Self {
        TabularLearnerConfig {
            algorithm,
            step_size: StepSizeSchedule::Constant(0.1),
            epsilon: 0.1,
            uniform_tie_break: true,
        }
    }
}

/// Sample-based tabular learner: epsilon-greedy behavior over its current
/// estimate, Q-learning or double Q-learning updates with per-(s, a) visit
/// counting for the step-size schedule.
///
/// Double Q-learning acts greedily on the *average* of its two tables and
/// flips a fair coin per observed transition to decide which table to update.
/// Both the coin and any exploration draws come from the rng the caller
/// passes in, so a seeded run is reproducible.
#[derive(Debug, Clone)]
pub struct TabularLearner {
    config: TabularLearnerConfig,
    gamma: f64,
    q1: QTable,
    q2: Option<QTable>,
    visits: Vec<u64>,
}

impl TabularLearner {
    pub fn new(n_states: usize, n_actions: usize, gamma: f64, config: TabularLearnerConfig) -> Self {
        let q2 = match config.algorithm {
            TabularAlgorithm::QLearning => None,
            TabularAlgorithm::DoubleQLearning => Some(QTable::zeros(n_states, n_actions)),
        };
        TabularLearner {
            config,
            gamma,
            q1: QTable::zeros(n_states, n_actions),
            q2,
            visits: vec![0; n_states * n_actions],
        }
    }

    /// Row the learner acts on: Q1 for Q-learning, elementwise mean of the
    /// two tables for double Q-learning.
    pub fn scoring_row(&self, s: usize) -> Vec<f64> {
        match &self.q2 {
            None => self.q1.row(s).to_vec(),
            Some(q2) => self.q1.row(s).iter().zip(q2.row(s)).map(|(a, b)| (a + b) / 2.0).collect(),
        }
    }

    pub fn q1(&self) -> &QTable {
        &self.q1
    }

    pub fn q2(&self) -> Option<&QTable> {
        self.q2.as_ref()
    }

    pub fn select_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<usize, TabularError> {
        let row = self.scoring_row(s);
        if rng.random::<f64>() < self.config.epsilon {
            return Ok(rng.random_range(0..row.len()));
        }
        if self.config.uniform_tie_break {
            let dist = greedy_policy_distribution(&row)?;
            let u: f64 = rng.random();
            let mut cum = 0.0;
            for (a, p) in dist.iter().enumerate() {
                cum += p;
                if u < cum {
                    return Ok(a);
                }
            }
            Ok(dist.len() - 1)
        } else {
            argmax_lowest_index(&row)
        }
    }

    /// Applies one update for the observed transition. The visit count of
    /// (s, a) increments first, so the first update of a pair uses n = 1.
    pub fn observe<R: Rng + ?Sized>(
        &mut self,
        t: &TabularTransition,
        rng: &mut R,
    ) -> Result<(), TabularError> {
        let visit_idx = t.state * self.q1.n_actions() + t.action;
        self.visits[visit_idx] += 1;
        let alpha = self.config.step_size.alpha(self.visits[visit_idx]);
        match &mut self.q2 {
            None => q_learning_step(&mut self.q1, t, alpha, self.gamma),
            Some(q2) => {
                let side = if rng.random::<f64>() < 0.5 {
                    DoubleUpdate::UpdateQ1
                } else {
                    DoubleUpdate::UpdateQ2
                };
                double_q_learning_step(&mut self.q1, q2, t, alpha, self.gamma, side)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// 1x3 corridor, goal at the right end, reward -1 per step, gamma 1.
    /// Walking right from the left end costs exactly two steps.
    fn corridor() -> TabularMdp {
        let mut m = TabularMdp::new(3, 2, 1.0);
        // action 0 = left (bumps into the wall at cell 0), action 1 = right
        m.set_transition(0, 0, 0, 1.0);
        m.set_reward(0, 0, 0, -1.0);
        m.set_transition(0, 1, 1, 1.0);
        m.set_reward(0, 1, 1, -1.0);
        m.set_transition(1, 0, 0, 1.0);
        m.set_reward(1, 0, 0, -1.0);
        m.set_transition(1, 1, 2, 1.0);
        m.set_reward(1, 1, 2, -1.0);
        m.set_terminal(2);
        m.validate().unwrap();
        m
    }

    /// Two-decision chain with noisy bandit arms: at state 0, action 0 leads
    /// to the arm state and every other action straight to the terminal, all
    /// with reward 0; each arm pays Gaussian(-0.1, 1) and terminates.
    fn noisy_arm_chain(n_actions: usize, gamma: f64) -> TabularMdp {
        let mut m = TabularMdp::new(3, n_actions, gamma);
        m.set_transition(0, 0, 1, 1.0);
        for a in 1..n_actions {
            m.set_transition(0, a, 2, 1.0);
        }
        for a in 0..n_actions {
            m.set_transition(1, a, 2, 1.0);
            m.set_reward_noise(1, a, -0.1, 1.0);
        }
        m.set_terminal(2);
        m.validate().unwrap();
        m
    }

    #[test]
    fn corridor_optimal_values_count_steps_to_goal() {
        let q = value_iteration(&corridor(), DEFAULT_TOLERANCE).unwrap();
        assert!((q.get(0, 1) - (-2.0)).abs() < 1e-9);
        assert!((q.get(1, 1) - (-1.0)).abs() < 1e-9);
        assert!((q.get(0, 0) - (-3.0)).abs() < 1e-9);
        assert!((q.get(2, 0)).abs() < 1e-12);
    }

    #[test]
    fn noisy_arms_leave_detour_slightly_negative() {
        let q = value_iteration(&noisy_arm_chain(8, 0.99), DEFAULT_TOLERANCE).unwrap();
        // Detour through the arms is worth gamma * (-0.1); skipping is 0.
        assert!((q.get(0, 0) - (-0.099)).abs() < 1e-12);
        for a in 1..8 {
            assert!(q.get(0, a).abs() < 1e-12);
        }
        for a in 0..8 {
            assert!((q.get(1, a) - (-0.1)).abs() < 1e-12);
        }
    }

    /// Independent oracle for uniform-policy evaluation on the corridor:
    /// the linear system solved by hand gives v(0) = -6, v(1) = -4, so
    /// q(0, right) = -5, q(0, left) = -7.
    #[test]
    fn uniform_policy_evaluation_matches_hand_solved_system() {
        let m = corridor();
        let policy = vec![vec![0.5, 0.5]; 3];
        let q = policy_q_evaluation(&m, &policy, DEFAULT_TOLERANCE).unwrap();
        assert!((q.get(0, 1) - (-5.0)).abs() < 1e-8);
        assert!((q.get(0, 0) - (-7.0)).abs() < 1e-8);
        assert!((q.get(1, 1) - (-1.0)).abs() < 1e-8);
        assert!((q.get(1, 0) - (-7.0)).abs() < 1e-8);
    }

    #[test]
    fn policy_evaluation_rejects_bad_rows() {
        let m = corridor();
        let short = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(policy_q_evaluation(&m, &short, 1e-10).is_err());
        let unnormalized = vec![vec![0.7, 0.7]; 3];
        assert!(policy_q_evaluation(&m, &unnormalized, 1e-10).is_err());
        let negative = vec![vec![1.5, -0.5]; 3];
        assert!(policy_q_evaluation(&m, &negative, 1e-10).is_err());
    }

    #[test]
    fn q_learning_step_matches_hand_computation() {
        // Q(s,a) = 1, r = 1, gamma = 0.9, next row [2, 0], alpha = 0.5:
        // target = 1 + 0.9 * 2 = 2.8, update = 1 + 0.5 * 1.8 = 1.9.
        let mut q = QTable::zeros(2, 2);
        q.set(0, 0, 1.0);
        q.set(1, 0, 2.0);
        q.set(1, 1, 0.0);
        let t = TabularTransition { state: 0, action: 0, reward: 1.0, next_state: 1, terminal: false };
        q_learning_step(&mut q, &t, 0.5, 0.9).unwrap();
        assert!((q.get(0, 0) - 1.9).abs() < 1e-12);
    }

    #[test]
    fn q_learning_terminal_target_is_reward_only() {
        let mut q = QTable::zeros(2, 2);
        q.set(1, 0, 100.0); // must be ignored
        let t = TabularTransition { state: 0, action: 0, reward: 1.0, next_state: 1, terminal: true };
        q_learning_step(&mut q, &t, 1.0, 0.9).unwrap();
        assert_eq!(q.get(0, 0), 1.0);
    }

    #[test]
    fn double_q_learning_step_matches_hand_computation() {
        // Update Q1: Q1(s', .) = [2, 1] selects action 0, Q2(s', 0) = 4,
        // target = 1 + 0.9 * 4 = 4.6, update = 0 + 0.5 * 4.6 = 2.3.
        let mut q1 = QTable::zeros(2, 2);
        let mut q2 = QTable::zeros(2, 2);
        q1.set(1, 0, 2.0);
        q1.set(1, 1, 1.0);
        q2.set(1, 0, 4.0);
        let t = TabularTransition { state: 0, action: 0, reward: 1.0, next_state: 1, terminal: false };
        double_q_learning_step(&mut q1, &mut q2, &t, 0.5, 0.9, DoubleUpdate::UpdateQ1).unwrap();
        assert!((q1.get(0, 0) - 2.3).abs() < 1e-12);
        assert_eq!(q2.get(0, 0), 0.0);
    }

    #[test]
    fn double_q_learning_sides_mirror_each_other() {
        let mut q1 = QTable::zeros(2, 2);
        let mut q2 = QTable::zeros(2, 2);
        q2.set(1, 0, 2.0);
        q2.set(1, 1, 1.0);
        q1.set(1, 0, 4.0);
        let t = TabularTransition { state: 0, action: 0, reward: 1.0, next_state: 1, terminal: false };
        double_q_learning_step(&mut q1, &mut q2, &t, 0.5, 0.9, DoubleUpdate::UpdateQ2).unwrap();
        assert!((q2.get(0, 0) - 2.3).abs() < 1e-12);
        assert_eq!(q1.get(1, 0), 4.0);
    }

    #[test]
    fn bootstrap_argmax_prefers_lowest_tied_index() {
        assert_eq!(argmax_lowest_index(&[1.0, 1.0, 0.5]).unwrap(), 0);
        assert_eq!(argmax_lowest_index(&[0.0, 2.0, 2.0]).unwrap(), 1);
        assert!(argmax_lowest_index(&[]).is_err());
        assert!(argmax_lowest_index(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn greedy_distribution_splits_ties_uniformly() {
        let d = greedy_policy_distribution(&[1.0, 1.0, 0.5]).unwrap();
        assert_eq!(d, vec![0.5, 0.5, 0.0]);
        // Within the tie tolerance counts as tied; beyond it does not.
        let d = greedy_policy_distribution(&[1.0, 1.0 - 5e-13]).unwrap();
        assert_eq!(d, vec![0.5, 0.5]);
        let d = greedy_policy_distribution(&[1.0, 1.0 - 1e-11]).unwrap();
        assert_eq!(d, vec![1.0, 0.0]);
        assert!(greedy_policy_distribution(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn sampler_respects_terminal_flags_and_noise() {
        let m = noisy_arm_chain(8, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = m.sample_step(0, 3, &mut rng).unwrap();
        assert_eq!(t.next_state, 2);
        assert!(t.terminal);
        assert_eq!(t.reward, 0.0);
        let t = m.sample_step(0, 0, &mut rng).unwrap();
        assert_eq!(t.next_state, 1);
        assert!(!t.terminal);
        // The arm reward is noisy: over many draws its mean approaches -0.1
        // and its spread is about 1.
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| m.sample_step(1, 0, &mut rng).unwrap().reward).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - (-0.1)).abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn sampler_rejects_out_of_range_queries() {
        let m = corridor();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.sample_step(9, 0, &mut rng).is_err());
        assert!(m.sample_step(0, 9, &mut rng).is_err());
    }

    #[test]
    fn validate_catches_broken_rows_and_terminals() {
        let mut m = TabularMdp::new(2, 1, 0.9);
        m.set_transition(0, 0, 1, 0.5); // row sums to 0.5
        m.set_terminal(1);
        assert!(m.validate().is_err());
        m.set_transition(0, 0, 0, 0.5);
        assert!(m.validate().is_ok());
        // Breaking a terminal self-loop after the fact is caught.
        m.set_reward(1, 0, 1, 1.0);
        assert!(m.validate().is_err());
    }

    #[test]
    fn text_round_trip_preserves_the_mdp() {
        let m = noisy_arm_chain(4, 0.97);
        let text = m.to_text();
        let back = TabularMdp::from_text(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn text_parser_reports_line_numbers() {
        let err = TabularMdp::from_text("states 2\nactions 1\ngamma 0.9\nbogus 1 2 3\n").unwrap_err();
        match err {
            TabularError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(TabularMdp::from_text("transition 0 0 0 1.0\n").is_err());
        assert!(TabularMdp::from_text("states 2\nactions 1\ngamma 0.9\ntransition 5 0 0 1.0\n").is_err());
    }

    #[test]
    fn visit_decay_schedule_shrinks_over_visits() {
        let s = StepSizeSchedule::VisitDecay { initial: 1.0, exponent: 0.8 };
        assert_eq!(s.alpha(1), 1.0);
        assert!((s.alpha(2) - 1.0 / 2f64.powf(0.8)).abs() < 1e-15);
        assert!(s.alpha(100) < s.alpha(10));
        assert_eq!(StepSizeSchedule::Constant(0.1).alpha(1_000_000), 0.1);
    }

    #[test]
    fn learner_converges_on_the_corridor() {
        let m = corridor();
        let q_star = value_iteration(&m, DEFAULT_TOLERANCE).unwrap();
        for algorithm in [TabularAlgorithm::QLearning, TabularAlgorithm::DoubleQLearning] {
            let mut cfg = TabularLearnerConfig::new(algorithm);
            cfg.step_size = StepSizeSchedule::VisitDecay { initial: 1.0, exponent: 0.8 };
            cfg.epsilon = 0.3;
            let mut learner = TabularLearner::new(3, 2, m.gamma(), cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut s = 0;
            for _ in 0..60_000 {
                let a = learner.select_action(s, &mut rng).unwrap();
                let t = m.sample_step(s, a, &mut rng).unwrap();
                learner.observe(&t, &mut rng).unwrap();
                s = if t.terminal { 0 } else { t.next_state };
            }
            for state in 0..2 {
                for action in 0..2 {
                    let estimate = match learner.q2() {
                        None => learner.q1().get(state, action),
                        Some(q2) => (learner.q1().get(state, action) + q2.get(state, action)) / 2.0,
                    };
                    assert!(
                        (estimate - q_star.get(state, action)).abs() < 0.05,
                        "{algorithm:?} Q({state},{action}) = {estimate} vs {}",
                        q_star.get(state, action)
                    );
                }
            }
        }
    }

    /// Small random MDPs for the property tests. The last state is made
    /// terminal and every probability row is exactly normalized.
    fn arb_mdp() -> impl Strategy<Value = TabularMdp> {
        (2usize..=5, 1usize..=4, 0.5f64..0.95).prop_flat_map(|(ns, na, gamma)| {
            let triples = ns * na * ns;
            (
                proptest::collection::vec(0.05f64..1.0, triples),
                proptest::collection::vec(-1.0f64..1.0, triples),
            )
                .prop_map(move |(raw_p, rewards)| {
                    let mut m = TabularMdp::new(ns, na, gamma);
                    for s in 0..ns {
                        for a in 0..na {
                            let base = (s * na + a) * ns;
                            let row = &raw_p[base..base + ns];
                            let total: f64 = row.iter().sum();
                            let mut acc = 0.0;
                            for s2 in 0..ns - 1 {
                                let p = row[s2] / total;
                                m.set_transition(s, a, s2, p);
                                acc += p;
                            }
                            // Exact normalization: the last entry absorbs
                            // rounding error.
                            m.set_transition(s, a, ns - 1, 1.0 - acc);
                            for s2 in 0..ns {
                                m.set_reward(s, a, s2, rewards[base + s2]);
                            }
                        }
                    }
                    m.set_terminal(ns - 1);
                    m.validate().unwrap();
                    m
                })
        })
    }

    proptest! {
        #[test]
        fn greedy_distribution_is_a_distribution(row in proptest::collection::vec(-10.0f64..10.0, 1..6)) {
            let d = greedy_policy_distribution(&row).unwrap();
            let sum: f64 = d.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(d.iter().all(|&p| p >= 0.0));
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (p, v) in d.iter().zip(&row) {
                if *p > 0.0 {
                    prop_assert!(max - v <= TIE_TOLERANCE);
                }
            }
        }

        #[test]
        fn greedy_distribution_ignores_value_shifts(
            row in proptest::collection::vec(-10.0f64..10.0, 1..6),
            shift in -100.0f64..100.0,
        ) {
            let base = greedy_policy_distribution(&row).unwrap();
            let shifted_row: Vec<f64> = row.iter().map(|v| v + shift).collect();
            let shifted = greedy_policy_distribution(&shifted_row).unwrap();
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn q_learning_step_size_extremes(
            q0 in -5.0f64..5.0,
            qn in proptest::collection::vec(-5.0f64..5.0, 2),
            r in -1.0f64..1.0,
        ) {
            let mut q = QTable::zeros(2, 2);
            q.set(0, 0, q0);
            q.set(1, 0, qn[0]);
            q.set(1, 1, qn[1]);
            let t = TabularTransition { state: 0, action: 0, reward: r, next_state: 1, terminal: false };
            let mut frozen = q.clone();
            q_learning_step(&mut frozen, &t, 0.0, 0.9).unwrap();
            prop_assert_eq!(frozen.get(0, 0), q0);
            q_learning_step(&mut q, &t, 1.0, 0.9).unwrap();
            let target = r + 0.9 * qn.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((q.get(0, 0) - target).abs() < 1e-12);
        }

        #[test]
        fn value_iteration_is_a_bellman_fixed_point(mdp in arb_mdp()) {
            let q = value_iteration(&mdp, DEFAULT_TOLERANCE).unwrap();
            for s in 0..mdp.n_states() {
                if mdp.is_terminal(s) { continue; }
                for a in 0..mdp.n_actions() {
                    let mut v = 0.0;
                    for s2 in 0..mdp.n_states() {
                        let p = mdp.transition_prob(s, a, s2);
                        if p == 0.0 { continue; }
                        let bootstrap = if mdp.is_terminal(s2) {
                            0.0
                        } else {
                            q.row(s2).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                        };
                        v += p * (mdp.mean_reward(s, a, s2) + mdp.gamma() * bootstrap);
                    }
                    prop_assert!((v - q.get(s, a)).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn greedy_policy_of_optimal_values_is_optimal(mdp in arb_mdp()) {
            let q_star = value_iteration(&mdp, DEFAULT_TOLERANCE).unwrap();
            let policy: Vec<Vec<f64>> = (0..mdp.n_states())
                .map(|s| greedy_policy_distribution(q_star.row(s)).unwrap())
                .collect();
            let q_pi = policy_q_evaluation(&mdp, &policy, DEFAULT_TOLERANCE).unwrap();
            prop_assert!(q_star.max_abs_diff(&q_pi) < 1e-6);
        }
    }
}
