//! Seeded multi-run execution: one agent, env, and CSV per (config, seed).
//!
//! Each seed is the master seed of its own run; training, evaluation, and
//! initialization draw from named streams of it, so launch order and sibling
//! runs cannot perturb results. A diverging run (non-finite loss) leaves a
//! partial CSV ending in an `# aborted:` marker and does not stop the rest.

use super::config::ExperimentConfig;
use super::HarnessError;
use crate::agents::{train, Agent, HookError, StepEvent, TrainHook, TrainSummary};
use crate::eval::{run_evaluation_phase, EvaluationPhaseReport};
use crate::seeding::{self, Stream};
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CSV_HEADER: &str = "run_id,experiment_id,algorithm,variant,env,seed,phase_index,\
env_steps,mean_eval_return,overestimation,q_hat,g_hat,epsilon,gradient_updates,wallclock_seconds";

/// One evaluation phase of one run, as persisted. Float columns are printed
/// with 17 significant digits; reruns are byte-identical in every column
/// except `wallclock_seconds`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub experiment_id: String,
    pub algorithm: String,
    pub variant: String,
    pub env: String,
    pub seed: u64,
    pub phase_index: u64,
    pub env_steps: u64,
    pub mean_eval_return: f64,
    pub overestimation: f64,
    pub q_hat: f64,
    pub g_hat: f64,
    pub epsilon: f64,
    pub gradient_updates: u64,
    pub wallclock_seconds: f64,
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl MetricsRow {
    fn from_phase(
        config: &ExperimentConfig,
        run_id: &str,
        seed: u64,
        report: &EvaluationPhaseReport,
        train_epsilon: f64,
        gradient_updates: u64,
        wallclock_seconds: f64,
    ) -> MetricsRow {
        let n = report.completed_episode_returns.len();
        let mean_eval_return = if n == 0 {
            f64::NAN
        } else {
            report.completed_episode_returns.iter().sum::<f64>() / n as f64
        };
        let (overestimation, q_hat, g_hat) = if report.empty {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (report.overestimation, report.mean_predicted_q, report.mean_empirical_return)
        };
        MetricsRow {
            run_id: run_id.to_string(),
            experiment_id: config.id.clone(),
            algorithm: config.agent.algorithm.name().to_string(),
            variant: config.agent.bootstrap_variant.name().to_string(),
            env: config.env_label(),
            seed,
            phase_index: report.phase_index,
            env_steps: report.env_steps_at_phase,
            mean_eval_return,
            overestimation,
            q_hat,
            g_hat,
            epsilon: train_epsilon,
            gradient_updates,
            wallclock_seconds,
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.experiment_id,
            self.algorithm,
            self.variant,
            self.env,
            self.seed,
            self.phase_index,
            self.env_steps,
            fmt_float(self.mean_eval_return),
            fmt_float(self.overestimation),
            fmt_float(self.q_hat),
            fmt_float(self.g_hat),
            fmt_float(self.epsilon),
            self.gradient_updates,
            fmt_float(self.wallclock_seconds),
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<MetricsRow, HarnessError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(HarnessError::Config(format!(
                "metrics row has {} fields, expected 15: {line:?}",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64, HarnessError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| HarnessError::Config(format!("field {i} of {line:?}: {e}")))
        };
        let int = |i: usize| -> Result<u64, HarnessError> {
            fields[i]
                .parse::<u64>()
                .map_err(|e| HarnessError::Config(format!("field {i} of {line:?}: {e}")))
        };
        Ok(MetricsRow {
            run_id: fields[0].to_string(),
            experiment_id: fields[1].to_string(),
            algorithm: fields[2].to_string(),
            variant: fields[3].to_string(),
            env: fields[4].to_string(),
            seed: int(5)?,
            phase_index: int(6)?,
            env_steps: int(7)?,
            mean_eval_return: num(8)?,
            overestimation: num(9)?,
            q_hat: num(10)?,
            g_hat: num(11)?,
            epsilon: num(12)?,
            gradient_updates: int(13)?,
            wallclock_seconds: num(14)?,
        })
    }
}

/// Reads one run's CSV. `#` lines (the abort marker) are skipped; the header
/// is mandatory and checked.
pub fn parse_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(HarnessError::Config(format!(
                "{path:?}: missing or wrong header line: {other:?}"
            )))
        }
    }
    lines.filter(|l| !l.starts_with('#')).map(MetricsRow::parse_csv_line).collect()
}

/// Everything except the rerun-variable wallclock column, for byte
/// comparisons of rerun determinism.
pub fn strip_wallclock(line: &str) -> &str {
    match line.rfind(',') {
        Some(i) => &line[..i],
        None => line,
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_id: String,
    pub seed: u64,
    pub csv_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub phases: u64,
    pub summary: Option<TrainSummary>,
    /// Some = the run aborted; siblings are unaffected.
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub experiment_id: String,
    pub dir: PathBuf,
    pub runs: Vec<RunOutcome>,
}

impl ExperimentOutcome {
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.error.is_none())
    }
}

/// Logs one MetricsRow per evaluation phase, streamed to disk as training
/// progresses so an abort still leaves the finished phases behind.
struct PhaseLogger<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    run_id: &'a str,
    writer: &'a mut BufWriter<File>,
    phase_index: u64,
    start: Instant,
}

impl TrainHook for PhaseLogger<'_> {
    fn after_step(&mut self, agent: &Agent, event: &StepEvent) -> Result<(), HookError> {
        if event.env_steps % self.config.eval.frequency != 0 {
            return Ok(());
        }
        // Evaluation owns a fresh env instance and a phase-indexed stream;
        // it cannot disturb training dynamics or sibling phases.
        let mut env = self.config.env.build().map_err(|e| Box::new(e) as HookError)?;
        let mut rng = seeding::rng_substream(self.seed, Stream::EvalEnv, self.phase_index);
        let mut report = run_evaluation_phase(
            agent,
            env.as_mut(),
            agent.config().eval_epsilon,
            self.config.eval.phase_steps,
            &mut rng,
        )
        .map_err(|e| Box::new(e) as HookError)?;
        report.phase_index = self.phase_index;
        report.env_steps_at_phase = event.env_steps;
        let row = MetricsRow::from_phase(
            self.config,
            self.run_id,
            self.seed,
            &report,
            event.epsilon,
            agent.gradient_updates(),
            self.start.elapsed().as_secs_f64(),
        );
        writeln!(self.writer, "{}", row.to_csv_line()).map_err(|e| Box::new(e) as HookError)?;
        self.writer.flush().map_err(|e| Box::new(e) as HookError)?;
        self.phase_index += 1;
        Ok(())
    }
}

fn run_single(config: &ExperimentConfig, seed: u64, dir: &Path) -> RunOutcome {
    let run_id = format!("{}-s{seed}", config.id);
    let csv_path = dir.join(format!("{run_id}.csv"));
    let checkpoint_path = dir.join(format!("{run_id}.checkpoint"));
    let mut phases = 0;
    let mut summary = None;
    let result = (|| -> Result<(), HarnessError> {
        let mut writer = BufWriter::new(File::create(&csv_path)?);
        writeln!(writer, "{CSV_HEADER}")?;
        let mut agent = Agent::new(config.agent.clone(), seed)?;
        let mut env = config.env.build()?;
        let mut env_rng = seeding::rng_stream(seed, Stream::Env);
        let start = Instant::now();
        let mut hook =
            PhaseLogger { config, seed, run_id: &run_id, writer: &mut writer, phase_index: 0, start };
        let outcome = train(&mut agent, env.as_mut(), &mut env_rng, config.total_steps, &mut hook);
        phases = hook.phase_index;
        match outcome {
            Ok(s) => {
                summary = Some(s);
                writer.flush()?;
                fs::write(&checkpoint_path, agent.save_checkpoint())?;
                Ok(())
            }
            Err(e) => {
                writeln!(writer, "# aborted: {e}")?;
                writer.flush()?;
                Err(e.into())
            }
        }
    })();
    RunOutcome {
        run_id,
        seed,
        csv_path,
        checkpoint_path,
        phases,
        summary,
        error: result.err().map(|e| e.to_string()),
    }
}

/// Runs the whole seed list, at most `concurrency` runs at a time. Output
/// lands under `output_root/<output_dir>/<experiment_id>/`. Failed runs are
/// reported in the outcome rather than as an Err; Err is reserved for
/// problems before any run starts.
pub fn run_experiment(
    config: &ExperimentConfig,
    seed_offset: u64,
    output_root: &Path,
) -> Result<ExperimentOutcome, HarnessError> {
    let dir = output_root.join(&config.output_dir).join(&config.id);
    fs::create_dir_all(&dir)?;
    let seeds: Vec<u64> = config.seeds.iter().map(|s| s.wrapping_add(seed_offset)).collect();
    let mut runs = Vec::with_capacity(seeds.len());
    let dir_ref: &Path = &dir;
    for chunk in seeds.chunks(config.concurrency) {
        let mut chunk_runs: Vec<RunOutcome> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| (seed, scope.spawn(move || run_single(config, seed, dir_ref))))
                .collect();
            handles
                .into_iter()
                .map(|(seed, handle)| {
                    handle.join().unwrap_or_else(|panic| {
                        let msg = panic
                            .downcast_ref::<&str>()
                            .map(|s| s.to_string())
                            .or_else(|| panic.downcast_ref::<String>().cloned())
                            .unwrap_or_else(|| "unknown panic".into());
                        let run_id = format!("{}-s{seed}", config.id);
                        RunOutcome {
                            csv_path: dir_ref.join(format!("{run_id}.csv")),
                            checkpoint_path: dir_ref.join(format!("{run_id}.checkpoint")),
                            run_id,
                            seed,
                            phases: 0,
                            summary: None,
                            error: Some(format!("panicked: {msg}")),
                        }
                    })
                })
                .collect()
        });
        runs.append(&mut chunk_runs);
    }
    Ok(ExperimentOutcome { experiment_id: config.id.clone(), dir, runs })
}
