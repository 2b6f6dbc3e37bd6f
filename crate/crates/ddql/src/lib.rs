//! Desk-scale laboratory for deep double Q-learning (DDQL) and its baselines.
//!
//! The crate is organized around one idea: every learning-side quantity that a
//! small experiment can measure should be checkable against an exact oracle.
//! Tabular solvers ([`tabular`]) provide ground-truth action values for the
//! built-in diagnostic environments ([`envs`]); a hand-rolled f64 MLP stack
//! ([`nn`]) keeps gradients small enough to verify by finite differences; the
//! replay layer ([`replay`]) exposes the single/double buffer split and the
//! masked combined batch; [`agents`] implements the DQN / Double DQN / DDQL
//! update rules with their bootstrap-target variants; [`eval`] measures
//! returns, overestimation, and normalized-score statistics; and [`harness`]
//! turns all of it into reproducible, seed-stamped experiment runs behind a
//! small CLI.
//!
//! Everything numeric is `f64`, every random draw flows through a named
//! ChaCha8 stream derived from one master seed ([`seeding`]), and on-disk
//! formats print floats with enough digits to round-trip bit-exactly, so a
//! rerun of the same config reproduces the same metrics byte for byte.

pub mod agents;
pub mod envs;
pub mod eval;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod seeding;
pub mod tabular;
