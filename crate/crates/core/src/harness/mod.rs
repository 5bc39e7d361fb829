//! Command implementations behind the CLI: train, eval, baseline, report
//! and diagnose. Every artifact is written under an output directory.

pub mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diagnostics::{
    collapse_csv, detect_collapsed_dims, export_latent_scatter, export_rbf_activation_map, format_scatter_summary,
    rbf_activation_csv, scatter_csv, scatter_summary, DEFAULT_COLLAPSE_EPS, DEFAULT_COLLAPSE_WINDOW,
};
use crate::env::socialnav::SocialNavEnv;
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::pearl::trainer::{MetricsTable, Trainer};
use crate::pearl::{derive_seed, meta_test, run_sac200_baseline};
use crate::sac::{TaskCodeHead, Variant};
use crate::tasks::TaskSet;

pub const CHECKPOINT_FILE: &str = "checkpoint.cbor";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const EVAL_FILE: &str = "eval.csv";
pub const BASELINE_FILE: &str = "baseline.csv";
pub const SCATTER_FILE: &str = "latent_scatter.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const BASELINE_LABEL: &str = "SAC-200";

/// Seed tags for evaluation streams outside training.
const STREAM_CLI_EVAL: u64 = 10;
const STREAM_CLI_BASELINE: u64 = 11;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub iterations: u64,
    pub env_steps: u64,
    pub resumed: bool,
}

/// Meta-trains one seed to the step budget, checkpointing and rewriting
/// the metrics file after every evaluation. With `resume` an existing
/// checkpoint in the output directory is continued.
pub fn cmd_train(config: &RunConfig, resume: bool) -> Result<TrainOutcome> {
    config.validate()?;
    let out = &config.run.out_dir;
    let ckpt = out.join(CHECKPOINT_FILE);
    let setup = config.setup();
    let resumed = resume && ckpt.exists();
    let mut trainer = if resumed {
        log::info!("resuming from {}", ckpt.display());
        Trainer::resume(&ckpt, &setup)?
    } else {
        Trainer::new(setup)?
    };
    fs::create_dir_all(out)?;
    write(&out.join(CONFIG_FILE), config.to_toml()?)?;
    trainer.tasks.save(&out.join("tasks.json"))?;
    let persist = |t: &Trainer| -> Result<()> {
        t.save(&ckpt)?;
        write(&out.join(METRICS_FILE), t.metrics_csv())?;
        write(&out.join("collapse.csv"), collapse_csv(&t.collapse))
    };
    persist(&trainer)?;
    trainer.train(persist)?;
    persist(&trainer)?;
    Ok(TrainOutcome {
        iterations: trainer.iteration,
        env_steps: trainer.env_steps,
        resumed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReturn {
    pub task_id: u64,
    pub exploration_return: Option<f64>,
    pub ret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub rows: Vec<TaskReturn>,
    pub mean: f64,
    pub stderr: f64,
}

impl EvalReport {
    pub fn new(label: impl Into<String>, rows: Vec<TaskReturn>) -> Self {
        let (mean, stderr) = mean_stderr(&rows.iter().map(|r| r.ret).collect::<Vec<_>>());
        EvalReport {
            label: label.into(),
            rows,
            mean,
            stderr,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("task_id,exploration_return,return\n");
        for r in &self.rows {
            let e = r.exploration_return.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(s, "{},{e},{}", r.task_id, r.ret);
        }
        s
    }

    pub fn from_csv(label: impl Into<String>, text: &str) -> Result<Self> {
        let bad = |n: usize| Error::Config(format!("malformed evaluation row {n}"));
        let rows = text
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, line)| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(bad(n + 1));
                }
                Ok(TaskReturn {
                    task_id: f[0].parse().map_err(|_| bad(n + 1))?,
                    exploration_return: if f[1].is_empty() { None } else { Some(f[1].parse().map_err(|_| bad(n + 1))?) },
                    ret: f[2].parse().map_err(|_| bad(n + 1))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(label, rows))
    }

    pub fn summary(&self) -> String {
        format!("{}: {:.3} ± {:.3} (mean ± standard error over {} tasks)", self.label, self.mean, self.stderr, self.rows.len())
    }
}

/// Mean and standard error (sample standard deviation over sqrt n).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let (m, sd) = mean_sample_std(xs);
    (m, if xs.is_empty() { f64::NAN } else { sd / (xs.len() as f64).sqrt() })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sample_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (m, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (m, (ss / (n - 1.0)).sqrt())
}

/// Meta-test on the first `n_test` test tasks of a checkpoint.
pub fn cmd_eval(checkpoint: &Path, n_test: Option<usize>, seed: u64, out: Option<&Path>) -> Result<EvalReport> {
    let trainer = Trainer::load(checkpoint)?;
    let n = n_test.unwrap_or(trainer.tasks.test.len()).min(trainer.tasks.test.len());
    let results = trainer.evaluate(&trainer.tasks.test[..n], derive_seed(&[seed, STREAM_CLI_EVAL]))?;
    let rows = trainer.tasks.test[..n]
        .iter()
        .zip(results)
        .map(|(t, r)| TaskReturn {
            task_id: t.seed,
            exploration_return: Some(r.exploration_return),
            ret: r.adapted_return,
        })
        .collect();
    let report = EvalReport::new(trainer.config().variant.label(), rows);
    if let Some(dir) = out {
        write(&dir.join(EVAL_FILE), report.to_csv())?;
    }
    Ok(report)
}

/// Per-task SAC-200 over the test tasks of the configured environment.
pub fn cmd_baseline(config: &RunConfig) -> Result<EvalReport> {
    config.validate()?;
    let tasks = TaskSet::new(config.run.environment, config.meta.n_train_tasks, config.meta.n_test_tasks)?;
    let rows = tasks
        .test
        .par_iter()
        .enumerate()
        .map(|(j, task)| {
            let mut env = config.env.build(config.run.environment)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.run.seed, STREAM_CLI_BASELINE, j as u64]));
            let r = run_sac200_baseline(task, env.as_mut(), &config.meta, &mut rng)?;
            Ok(TaskReturn {
                task_id: task.seed,
                exploration_return: None,
                ret: r.ret,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::new(BASELINE_LABEL, rows);
    let out = &config.run.out_dir;
    write(&out.join(BASELINE_FILE), report.to_csv())?;
    write(&out.join(CONFIG_FILE), config.to_toml()?)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOutcome {
    pub collapsed_dims: Vec<usize>,
    pub scatter_summary: String,
    pub files: Vec<PathBuf>,
}

/// Collapse series, latent scatter, RBF activation map and (for the social
/// navigation environment) one adapted trajectory.
pub fn cmd_diagnose(checkpoint: &Path, out: &Path, seed: u64) -> Result<DiagnoseOutcome> {
    let trainer = Trainer::load(checkpoint)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<()> {
        let p = out.join(name);
        write(&p, body)?;
        files.push(p);
        Ok(())
    };
    emit("collapse.csv", collapse_csv(&trainer.collapse))?;
    let collapsed: Vec<usize> = detect_collapsed_dims(&trainer.collapse, DEFAULT_COLLAPSE_EPS, DEFAULT_COLLAPSE_WINDOW)
        .into_iter()
        .collect();

    let pairs: Vec<_> = trainer.tasks.train.iter().zip(&trainer.buffers).filter(|(_, b)| !b.is_empty()).collect();
    let rows = export_latent_scatter(&trainer.agent.encoder, &pairs)?;
    let summary = format_scatter_summary(&scatter_summary(&rows));
    emit(SCATTER_FILE, scatter_csv(&rows))?;
    emit("latent_summary.txt", format!("{summary}\n"))?;

    if let Some(TaskCodeHead::Rbf(p)) = &trainer.agent.nets.head {
        let (lo, hi) = (trainer.config().rbf_interval[0], trainer.config().rbf_interval[1]);
        let margin = 0.2 * (hi - lo);
        let grid: Vec<f64> = (0..=400).map(|i| lo - margin + (hi - lo + 2.0 * margin) * i as f64 / 400.0).collect();
        for dim in 0..p.input_dim() {
            emit(&format!("rbf_activation_z{}.csv", dim + 1), rbf_activation_csv(&export_rbf_activation_map(p, dim, &grid)?))?;
        }
    }

    if trainer.setup.env == EnvKind::Socialnav && !trainer.tasks.test.is_empty() {
        let mut env = SocialNavEnv::new(trainer.setup.env_config.socialnav.clone())?;
        env.record_trajectory(true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        meta_test(&trainer.tasks.test[0], &trainer.agent, &mut env, trainer.config(), &mut rng)?;
        let mut buf = Vec::new();
        env.write_trajectory_csv(&mut buf)?;
        emit(TRAJECTORY_FILE, String::from_utf8_lossy(&buf).into_owned())?;
    }
    Ok(DiagnoseOutcome {
        collapsed_dims: collapsed,
        scatter_summary: summary,
        files,
    })
}

/// One run directory as seen by the report.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub environment: EnvKind,
    pub label: String,
    pub metrics: Option<MetricsTable>,
    pub baseline: Option<EvalReport>,
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let metrics_path = dir.join(METRICS_FILE);
        let baseline_path = dir.join(BASELINE_FILE);
        let metrics = if metrics_path.exists() {
            Some(MetricsTable::parse(&fs::read_to_string(&metrics_path)?)?)
        } else {
            None
        };
        let baseline = if baseline_path.exists() {
            Some(EvalReport::from_csv(BASELINE_LABEL, &fs::read_to_string(&baseline_path)?)?)
        } else {
            None
        };
        if metrics.is_none() && baseline.is_none() {
            return Err(Error::Config(format!("{} holds neither metrics nor baseline results", dir.display())));
        }
        let label = if metrics.is_some() { config.meta.variant.label().to_owned() } else { BASELINE_LABEL.to_owned() };
        Ok(RunArtifacts {
            dir: dir.to_path_buf(),
            environment: config.run.environment,
            label,
            metrics,
            baseline,
        })
    }

    /// Final test return: last metrics row, or the baseline mean.
    pub fn final_return(&self) -> Option<f64> {
        match (&self.metrics, &self.baseline) {
            (Some(m), _) => m.column("mean_test_return")?.last().copied(),
            (None, Some(b)) => Some(b.mean),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutcome {
    pub table: String,
    pub files: Vec<PathBuf>,
}

fn row_order(label: &str) -> usize {
    Variant::ALL
        .iter()
        .position(|v| v.label() == label)
        .unwrap_or(if label == BASELINE_LABEL { Variant::ALL.len() } else { usize::MAX })
}

/// Final-performance table: one row per algorithm, one column per
/// environment, cells `mean ± std` over seeds.
pub fn final_table(runs: &[RunArtifacts]) -> String {
    let mut cells: BTreeMap<(String, &'static str), Vec<f64>> = BTreeMap::new();
    let mut envs: Vec<&'static str> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for r in runs {
        let env = r.environment.key();
        if !envs.contains(&env) {
            envs.push(env);
        }
        if !labels.contains(&r.label) {
            labels.push(r.label.clone());
        }
        if let Some(v) = r.final_return() {
            cells.entry((r.label.clone(), env)).or_default().push(v);
        }
    }
    labels.sort_by_key(|l| (row_order(l), l.clone()));
    let mut out = format!("{:<16}", "algorithm");
    for e in &envs {
        let _ = write!(out, " {e:>22}");
    }
    out.push('\n');
    for l in &labels {
        let _ = write!(out, "{l:<16}");
        for e in &envs {
            let cell = match cells.get(&(l.clone(), *e)) {
                Some(v) => {
                    let (m, s) = mean_sample_std(v);
                    format!("{m:.1} ± {s:.1}")
                }
                None => "-".into(),
            };
            let _ = write!(out, " {cell:>22}");
        }
        out.push('\n');
    }
    out
}

/// Per-step mean and sample std of a metrics column over seeds, truncated to
/// the shortest run.
pub fn seed_band(tables: &[&MetricsTable], column: &str) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let cols: Vec<Vec<f64>> = tables.iter().map(|t| t.column(column)).collect::<Option<_>>()?;
    let steps = tables.first()?.column("env_steps")?;
    let len = cols.iter().map(Vec::len).min()?.min(steps.len());
    let (mut mean, mut std) = (Vec::with_capacity(len), Vec::with_capacity(len));
    for i in 0..len {
        let (m, s) = mean_sample_std(&cols.iter().map(|c| c[i]).collect::<Vec<_>>());
        mean.push(m);
        std.push(s);
    }
    Some((steps[..len].to_vec(), mean, std))
}

/// Learning curves, KL/variance curves, latent scatters, trajectories and
/// the final-performance table for a set of run directories.
pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> Result<ReportOutcome> {
    let runs: Vec<RunArtifacts> = run_dirs.iter().map(|d| RunArtifacts::load(d)).collect::<Result<_>>()?;
    let mut files = Vec::new();
    let mut emit = |name: String, body: String| -> Result<()> {
        let p = out.join(name);
        write(&p, body)?;
        files.push(p);
        Ok(())
    };
    let mut by_env: BTreeMap<&'static str, BTreeMap<String, Vec<&RunArtifacts>>> = BTreeMap::new();
    for r in &runs {
        by_env.entry(r.environment.key()).or_default().entry(r.label.clone()).or_default().push(r);
    }
    for (env, groups) in &by_env {
        let mut curves = Vec::new();
        let mut ordered: Vec<_> = groups.iter().collect();
        ordered.sort_by_key(|(l, _)| (row_order(l), (*l).clone()));
        let max_steps = runs
            .iter()
            .filter_map(|r| r.metrics.as_ref()?.column("env_steps")?.last().copied())
            .fold(0.0, f64::max);
        for (label, group) in &ordered {
            let tables: Vec<&MetricsTable> = group.iter().filter_map(|r| r.metrics.as_ref()).collect();
            if let Some((x, y, sd)) = seed_band(&tables, "mean_test_return") {
                curves.push(svg::Series {
                    band: Some(sd),
                    ..svg::Series::line(*label, x, y)
                });
                let d = tables[0].latent_dim();
                let mut kl_series = Vec::new();
                for i in 1..=d {
                    if let Some((x, kl, _)) = seed_band(&tables, &format!("kl_{i}")) {
                        kl_series.push(svg::Series::line(format!("KL z{i}"), x, kl));
                    }
                    if let Some((x, var, _)) = seed_band(&tables, &format!("var_{i}")) {
                        kl_series.push(svg::Series {
                            dashed: true,
                            ..svg::Series::line(format!("var z{i}"), x, var)
                        });
                    }
                }
                emit(
                    format!("{env}_{}_kl.svg", file_key(label)),
                    svg::line_plot(&format!("{label} on {env}: posterior KL and variance"), "environment steps", "nats / variance", &kl_series),
                )?;
            } else {
                let finals: Vec<f64> = group.iter().filter_map(|r| r.final_return()).collect();
                let (m, _) = mean_sample_std(&finals);
                curves.push(svg::Series {
                    dashed: true,
                    ..svg::Series::line(*label, vec![0.0, max_steps.max(1.0)], vec![m, m])
                });
            }
        }
        emit(
            format!("{env}_learning_curve.svg"),
            svg::line_plot(&format!("{env}: average test-task return"), "environment steps", "return", &curves),
        )?;
    }
    for r in &runs {
        let name = r.dir.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
        let scatter = r.dir.join(SCATTER_FILE);
        if scatter.exists() {
            let pts = read_scatter(&fs::read_to_string(&scatter)?)?;
            emit(format!("{name}_latent_scatter.svg"), svg::scatter_plot(&format!("{name}: task representations"), "z1", "z2", &pts))?;
        }
        let traj = r.dir.join(TRAJECTORY_FILE);
        if traj.exists() {
            let paths = read_trajectory(&fs::read_to_string(&traj)?)?;
            emit(format!("{name}_trajectory.svg"), svg::path_plot(&format!("{name}: adapted trajectory"), &paths))?;
        }
    }
    let table = final_table(&runs);
    emit("final_performance.txt".into(), table.clone())?;
    Ok(ReportOutcome { table, files })
}

fn file_key(label: &str) -> String {
    label.to_lowercase().replace(|c: char| !c.is_ascii_alphanumeric(), "_")
}

fn parse_row(line: &str, n: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("malformed csv row {n}"))))
        .collect()
}

/// `(z1, z2, label)` triples from a latent scatter CSV; a one-dimensional
/// latent is plotted against zero.
fn read_scatter(text: &str) -> Result<Vec<(f64, f64, usize)>> {
    text.lines()
        .skip(1)
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            let r = parse_row(l, n + 1)?;
            let z2 = r.get(3).copied().unwrap_or(0.0);
            Ok((r.get(2).copied().unwrap_or(0.0), z2, r[1] as usize))
        })
        .collect()
}

fn read_trajectory(text: &str) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let humans = header.iter().filter(|h| h.ends_with("_x") && h.starts_with('h')).count();
    let mut paths: Vec<(String, Vec<(f64, f64)>)> = std::iter::once("robot".to_string())
        .chain((0..humans).map(|i| format!("human {}", i + 1)))
        .map(|n| (n, Vec::new()))
        .collect();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let r = parse_row(line, n + 1)?;
        paths[0].1.push((r[1], r[2]));
        for i in 0..humans {
            paths[i + 1].1.push((r[4 + 2 * i], r[5 + 2 * i]));
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_task_stderr_is_zero() {
        let r = EvalReport::new(
            "x",
            vec![TaskReturn {
                task_id: 3,
                exploration_return: Some(1.0),
                ret: 7.5,
            }],
        );
        assert_eq!((r.mean, r.stderr), (7.5, 0.0));
    }

    #[test]
    fn eval_csv_round_trips() {
        let rows = vec![
            TaskReturn {
                task_id: 1000,
                exploration_return: Some(-1.25),
                ret: 0.1 + 0.2,
            },
            TaskReturn {
                task_id: 1001,
                exploration_return: None,
                ret: 4.0,
            },
        ];
        let r = EvalReport::new("x", rows);
        let back = EvalReport::from_csv("x", &r.to_csv()).unwrap();
        assert_eq!(back, r);
        let (m, se) = mean_stderr(&[0.1 + 0.2, 4.0]);
        assert_eq!((back.mean, back.stderr), (m, se));
    }

    #[test]
    fn mean_stderr_oracle() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn trajectory_reader_splits_agents() {
        let csv = "t,robot_x,robot_y,robot_heading,h0_x,h0_y,r_goal,r_collision,r_social,r_approach,r_velocity\n0,1,2,0,3,4,0,0,0,0,0\n1,1.5,2,0,3,4.5,0,0,0,0,0\n";
        let p = read_trajectory(csv).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].1, vec![(1.0, 2.0), (1.5, 2.0)]);
        assert_eq!(p[1].1, vec![(3.0, 4.0), (3.0, 4.5)]);
    }
}
