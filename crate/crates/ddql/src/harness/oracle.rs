//! Oracle front-end: exact q* and uniform-policy q tables for the bundled
//! envs, printed and written as CSV.

use super::HarnessError;
use crate::envs::{self, EnvSpec};
use crate::tabular::{policy_q_evaluation, value_iteration, QTable, DEFAULT_TOLERANCE};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct OracleReport {
    pub env: String,
    pub gamma: f64,
    pub q_star: QTable,
    pub q_uniform: QTable,
}

/// Solves the named env exactly: value iteration for q*, linear-system
/// policy evaluation for the uniform-random policy.
pub fn oracle_tables(env_name: &str, gamma: f64) -> Result<OracleReport, HarnessError> {
    let spec = match env_name {
        "maxbias" => EnvSpec::maxbias_default(),
        "gridworld" => EnvSpec::gridworld_default(),
        other => {
            return Err(HarnessError::NotFound(format!(
                "unknown env {other:?}; oracle supports maxbias and gridworld"
            )))
        }
    };
    let mdp = envs::to_tabular(&spec, gamma)?;
    let q_star = value_iteration(&mdp, DEFAULT_TOLERANCE)?;
    let uniform = vec![vec![1.0 / mdp.n_actions() as f64; mdp.n_actions()]; mdp.n_states()];
    let q_uniform = policy_q_evaluation(&mdp, &uniform, DEFAULT_TOLERANCE)?;
    Ok(OracleReport { env: env_name.to_string(), gamma, q_star, q_uniform })
}

impl OracleReport {
    /// Human-readable table block: one line per state, one column per action.
    pub fn lines(&self) -> Vec<String> {
        let mut lines = vec![format!(
            "env {}, gamma {}, {} states x {} actions",
            self.env,
            self.gamma,
            self.q_star.n_states(),
            self.q_star.n_actions()
        )];
        for (title, table) in [("q*", &self.q_star), ("q_uniform", &self.q_uniform)] {
            lines.push(format!("{title}:"));
            for s in 0..table.n_states() {
                let cells: Vec<String> = table.row(s).iter().map(|v| format!("{v:+10.6}")).collect();
                lines.push(format!("  s{s:<4} {}", cells.join(" ")));
            }
        }
        lines
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,action,q_star,q_uniform\n");
        for s in 0..self.q_star.n_states() {
            for a in 0..self.q_star.n_actions() {
                out.push_str(&format!(
                    "{s},{a},{:.16e},{:.16e}\n",
                    self.q_star.get(s, a),
                    self.q_uniform.get(s, a)
                ));
            }
        }
        out
    }

    /// Writes the CSV under `<root>/oracle/` and returns its path.
    pub fn write_csv(&self, root: &Path) -> Result<PathBuf, HarnessError> {
        let dir = root.join("oracle");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}-gamma{}.csv", self.env, self.gamma));
        fs::write(&path, self.to_csv())?;
        Ok(path)
    }
}
