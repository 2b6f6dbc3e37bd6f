//! Cross-experiment comparison: a numeric table (printed and as CSV), AUC
//! and final-overestimation bar charts, and per-env curve charts drawing
//! every seed as a translucent trace under the opaque seed mean.

use super::config::env_label;
use super::run::{parse_metrics_csv, MetricsRow};
use super::svg::{bar_chart, line_chart, Bar, BarGroup, Series, PALETTE};
use super::HarnessError;
use crate::eval::{auc_mean, interquartile_mean, normalized_score_metrics, ScorePanel, Statistic};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Which MetricsRow column a comparison is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MeanEvalReturn,
    Overestimation,
    QHat,
    GHat,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::MeanEvalReturn => "mean_eval_return",
            Metric::Overestimation => "overestimation",
            Metric::QHat => "q_hat",
            Metric::GHat => "g_hat",
        }
    }

    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "mean_eval_return" => Ok(Metric::MeanEvalReturn),
            "overestimation" => Ok(Metric::Overestimation),
            "q_hat" => Ok(Metric::QHat),
            "g_hat" => Ok(Metric::GHat),
            other => Err(HarnessError::Config(format!(
                "unknown metric {other:?}; use mean_eval_return, overestimation, q_hat, or g_hat"
            ))),
        }
    }

    fn extract(self, row: &MetricsRow) -> f64 {
        match self {
            Metric::MeanEvalReturn => row.mean_eval_return,
            Metric::Overestimation => row.overestimation,
            Metric::QHat => row.q_hat,
            Metric::GHat => row.g_hat,
        }
    }
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn stat_of(stat: Statistic, values: &[f64]) -> Result<f64, HarnessError> {
    Ok(match stat {
        Statistic::Mean => mean_of(values),
        Statistic::Median => median_of(values),
        Statistic::Iqm => interquartile_mean(values)?,
    })
}

/// env -> seed -> rows sorted by phase.
type Grid = BTreeMap<String, BTreeMap<u64, Vec<MetricsRow>>>;

struct ExperimentData {
    id: String,
    grid: Grid,
}

fn load_experiment(id: &str, runs_dir: &Path) -> Result<ExperimentData, HarnessError> {
    let dir = runs_dir.join(id);
    let mut csvs: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| HarnessError::NotFound(format!("experiment dir {dir:?}: {e}")))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(HarnessError::NotFound(format!("no CSV files under {dir:?}")));
    }
    let mut grid: Grid = BTreeMap::new();
    for path in &csvs {
        for row in parse_metrics_csv(path)? {
            grid.entry(row.env.clone()).or_default().entry(row.seed).or_default().push(row);
        }
    }
    for curve in grid.values_mut().flat_map(|seeds| seeds.values_mut()) {
        curve.sort_by_key(|r| r.phase_index);
    }
    Ok(ExperimentData { id: id.to_string(), grid })
}

fn check_grids(experiments: &[ExperimentData]) -> Result<(), HarnessError> {
    let shape = |e: &ExperimentData| -> Vec<(String, Vec<u64>, Vec<usize>)> {
        e.grid
            .iter()
            .map(|(env, seeds)| {
                (env.clone(), seeds.keys().copied().collect(), seeds.values().map(Vec::len).collect())
            })
            .collect()
    };
    let first = shape(&experiments[0]);
    for e in &experiments[1..] {
        if shape(e) != first {
            return Err(HarnessError::GridMismatch(format!(
                "{} and {} differ in envs, seeds, or phase counts",
                experiments[0].id, e.id
            )));
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct CompareReport {
    pub dir: PathBuf,
    pub table_csv_path: PathBuf,
    pub chart_paths: Vec<PathBuf>,
    /// The printable comparison table, one line per entry.
    pub lines: Vec<String>,
}

/// Compares experiments on one metric. `baselines` entries are
/// (env, random, human); when they cover the panel, normalized mean/median/
/// IQM of the final-phase values are reported per experiment as well.
pub fn compare(
    ids: &[String],
    metric: Metric,
    statistic: Statistic,
    baselines: &[(String, f64, f64)],
    runs_dir: &Path,
) -> Result<CompareReport, HarnessError> {
    if ids.is_empty() {
        return Err(HarnessError::Config("compare needs at least one experiment id".into()));
    }
    let experiments: Vec<ExperimentData> =
        ids.iter().map(|id| load_experiment(id, runs_dir)).collect::<Result<_, _>>()?;
    check_grids(&experiments)?;
    let envs: Vec<String> = experiments[0].grid.keys().cloned().collect();

    let out_dir = runs_dir.join("compare").join(format!("{}--{}", ids.join("+"), metric.name()));
    fs::create_dir_all(&out_dir)?;

    let mut lines = Vec::new();
    let mut table_csv = format!("env,experiment,auc_{m},auc_delta_vs_first,final_{s}_{m}\n", m = metric.name(), s = statistic.name());
    lines.push(format!(
        "{:<14} {:<20} {:>16} {:>16} {:>16}",
        "env",
        "experiment",
        format!("auc({})", metric.name()),
        "delta_vs_first",
        format!("final_{}", statistic.name())
    ));

    let mut auc_groups: Vec<BarGroup> = Vec::new();
    let mut over_groups: Vec<BarGroup> = Vec::new();
    for env in &envs {
        let mut first_auc = None;
        let mut auc_bars = Vec::new();
        let mut over_bars = Vec::new();
        for (xi, e) in experiments.iter().enumerate() {
            let seeds = &e.grid[env];
            let curves: Vec<Vec<f64>> =
                seeds.values().map(|rows| rows.iter().map(|r| metric.extract(r)).collect()).collect();
            let auc = auc_mean(&curves)?;
            let finals: Vec<f64> =
                curves.iter().map(|c| *c.last().expect("nonempty curve")).collect();
            let final_stat = stat_of(statistic, &finals)?;
            let delta = auc - *first_auc.get_or_insert(auc);
            lines.push(format!(
                "{env:<14} {:<20} {:>16.6} {:>16.6} {:>16.6}",
                e.id, auc, delta, final_stat
            ));
            table_csv.push_str(&format!(
                "{env},{},{:.16e},{:.16e},{:.16e}\n",
                e.id, auc, delta, final_stat
            ));
            let color = PALETTE[xi % PALETTE.len()].to_string();
            auc_bars.push(Bar { label: e.id.clone(), value: auc, color: color.clone() });
            let final_over: Vec<f64> = seeds
                .values()
                .map(|rows| rows.last().expect("nonempty curve").overestimation)
                .collect();
            over_bars.push(Bar { label: e.id.clone(), value: median_of(&final_over), color });
        }
        auc_groups.push(BarGroup { label: env.clone(), bars: auc_bars });
        over_groups.push(BarGroup { label: env.clone(), bars: over_bars });
    }

    let mut chart_paths = Vec::new();
    let mut emit = |name: String, content: String| -> Result<(), HarnessError> {
        let path = out_dir.join(name);
        fs::write(&path, content)?;
        chart_paths.push(path);
        Ok(())
    };
    emit(
        "auc_bars.svg".into(),
        bar_chart(
            &format!("mean area under the {} curve", metric.name()),
            &format!("auc({})", metric.name()),
            &auc_groups,
        ),
    )?;
    emit(
        "final_overestimation_bars.svg".into(),
        bar_chart("final-phase overestimation (seed median)", "overestimation", &over_groups),
    )?;

    for env in &envs {
        for (plot_metric, file_tag) in curve_metrics(metric) {
            let mut series = Vec::new();
            for (xi, e) in experiments.iter().enumerate() {
                let color = PALETTE[xi % PALETTE.len()].to_string();
                let seeds = &e.grid[env];
                let mut sum: Vec<f64> = Vec::new();
                let mut steps: Vec<f64> = Vec::new();
                for rows in seeds.values() {
                    let pts: Vec<(f64, f64)> = rows
                        .iter()
                        .map(|r| (r.env_steps as f64, plot_metric.extract(r)))
                        .collect();
                    if sum.is_empty() {
                        sum = vec![0.0; pts.len()];
                        steps = pts.iter().map(|p| p.0).collect();
                    }
                    for (acc, p) in sum.iter_mut().zip(&pts) {
                        *acc += p.1;
                    }
                    series.push(Series {
                        label: String::new(),
                        color: color.clone(),
                        opacity: 0.3,
                        stroke_width: 1.0,
                        points: pts,
                    });
                }
                let n = seeds.len() as f64;
                series.push(Series {
                    label: e.id.clone(),
                    color,
                    opacity: 1.0,
                    stroke_width: 2.5,
                    points: steps.iter().zip(&sum).map(|(&x, &s)| (x, s / n)).collect(),
                });
            }
            emit(
                format!("curves-{file_tag}-{env}.svg"),
                line_chart(
                    &format!("{} on {env}", plot_metric.name()),
                    "env steps",
                    plot_metric.name(),
                    &series,
                ),
            )?;
        }
    }

    if !baselines.is_empty() {
        lines.push(String::new());
        lines.push(format!(
            "{:<20} {:>12} {:>12} {:>12}  (normalized final {})",
            "experiment",
            "mean",
            "median",
            "iqm",
            metric.name()
        ));
        table_csv.push_str("experiment,normalized_mean,normalized_median,normalized_iqm\n");
        for e in &experiments {
            let mut panel = ScorePanel::default();
            for (env, seeds) in &e.grid {
                let finals: Vec<f64> = seeds
                    .values()
                    .map(|rows| metric.extract(rows.last().expect("nonempty curve")))
                    .collect();
                let baseline =
                    baselines.iter().find(|(b, _, _)| b == env).map(|&(_, r, h)| (r, h));
                panel.push(env.clone(), finals, baseline);
            }
            let m = normalized_score_metrics(&panel)?;
            lines.push(format!(
                "{:<20} {:>12.6} {:>12.6} {:>12.6}",
                e.id, m.mean, m.median, m.iqm
            ));
            table_csv.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e}\n",
                e.id, m.mean, m.median, m.iqm
            ));
        }
    }

    let table_csv_path = out_dir.join("table.csv");
    fs::write(&table_csv_path, table_csv)?;
    Ok(CompareReport { dir: out_dir, table_csv_path, chart_paths, lines })
}

/// The requested metric's curves plus the overestimation curves the figure
/// style calls for (deduplicated when they coincide).
fn curve_metrics(metric: Metric) -> Vec<(Metric, &'static str)> {
    let mut v = vec![(metric, metric.name())];
    if metric != Metric::Overestimation {
        v.push((Metric::Overestimation, Metric::Overestimation.name()));
    }
    v
}

/// Used by tests and the CLI to sanity-label envs without a config file.
pub fn known_env_label(spec: &crate::envs::EnvSpec) -> String {
    env_label(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_names_round_trip() {
        for m in [Metric::MeanEvalReturn, Metric::Overestimation, Metric::QHat, Metric::GHat] {
            assert_eq!(Metric::parse(m.name()).unwrap(), m);
        }
        assert!(Metric::parse("reward").is_err());
    }

    #[test]
    fn stats_on_plain_lists() {
        assert_eq!(stat_of(Statistic::Mean, &[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(stat_of(Statistic::Median, &[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(stat_of(Statistic::Median, &[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert_eq!(stat_of(Statistic::Iqm, &[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
    }
}
