//! Report writing and the `generate`, `run` and `sweep` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fcl_core::engine::{self, RunOutput};
use fcl_core::kv::KeyValues;
use fcl_core::metrics::{self, PerformanceMatrix};
use fcl_core::scenario;
use fcl_core::{ExperimentConfig, FclError, Family, ScenarioSource};
use rayon::prelude::*;

pub const PMATRIX_FILE: &str = "pmatrix.csv";
pub const METRICS_FILE: &str = "metrics.txt";
pub const TRAINLOG_FILE: &str = "trainlog.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] FclError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("grid: {0}")]
    Grid(String),
}

impl CliError {
    /// 3 for numerical divergence, 1 for file-system failures, 2 for
    /// everything that is wrong with the configuration or inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(FclError::Divergence { .. }) => 3,
            CliError::Core(FclError::Io { .. }) | CliError::Io { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Reads the config file (defaults when absent) and applies a seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(io_err(p))?,
        None => String::new(),
    };
    let config = ExperimentConfig::parse(&text)?;
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

/// Writes the synthetic scenario of `config` in line-record form.
pub fn cmd_generate(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let ScenarioSource::Synthetic(s) = &config.scenario else {
        return Err(FclError::Config("generate needs a synthetic scenario".into()).into());
    };
    let raw = scenario::generate_raw(s)?;
    write(out, &raw.to_records())
}

fn fmt_metric(v: fcl_core::Result<f64>) -> String {
    v.map_or_else(|_| "n/a".to_string(), |x| x.to_string())
}

/// Flat `key = value` summary of one run, ending with the resolved config.
pub fn metrics_text(config: &ExperimentConfig, out: &RunOutput) -> String {
    let p = &out.performance;
    let family = config.algorithm.family;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("amse", metrics::amse(p).to_string());
    kv("bwt", fmt_metric(metrics::bwt(p)));
    kv("fwt", fmt_metric(metrics::fwt(p)));
    kv("static", out.params.static_count.to_string());
    kv("static_formula", metrics::static_formula(family).to_string());
    kv("trainable", out.params.trainable_count.to_string());
    kv("param_count", out.param_count.to_string());
    kv("messages.star", out.messages.star.to_string());
    kv("messages.p2p", out.messages.peer_to_peer.to_string());
    kv("audit.post_consolidation_reads", out.audit.post_consolidation_reads().to_string());
    if family == Family::Stl {
        kv("stl.off_diagonal_comparable", "false".into());
    }
    for line in config.to_text().lines() {
        let _ = writeln!(s, "config.{line}");
    }
    s
}

/// Summary of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub amse: f64,
    pub bwt: Option<f64>,
    pub fwt: Option<f64>,
    pub performance: PerformanceMatrix,
    pub post_consolidation_reads: usize,
}

/// Runs one experiment and writes its three report files into `out_dir`.
pub fn cmd_run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let out = engine::run_experiment(config)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write(&out_dir.join(PMATRIX_FILE), &out.performance.to_csv())?;
    write(&out_dir.join(METRICS_FILE), &metrics_text(config, &out))?;
    write(&out_dir.join(TRAINLOG_FILE), &out.log.to_csv())?;
    Ok(RunSummary {
        amse: metrics::amse(&out.performance),
        bwt: metrics::bwt(&out.performance).ok(),
        fwt: metrics::fwt(&out.performance).ok(),
        post_consolidation_reads: out.audit.post_consolidation_reads(),
        performance: out.performance,
    })
}

const LAMBDA_KEYS: [&str; 3] = ["algorithm.lambda1", "algorithm.lambda2", "algorithm.lambda3"];

/// Swept parameters and their values, e.g.
///
/// ```text
/// algorithm.lambda1 = 0, 0.05, 0.5
/// train_fraction = 0.2, 0.6, 1.0
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<(String, Vec<f64>)>,
}

impl Grid {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let mut axes = Vec::new();
        for key in kv.keys() {
            let values: Vec<f64> = kv.require_list(key)?;
            if values.is_empty() {
                return Err(CliError::Grid(format!("'{key}' has no values")));
            }
            axes.push((key.to_string(), values));
        }
        if axes.is_empty() {
            return Err(CliError::Grid("no parameters to sweep".into()));
        }
        Ok(Self { axes })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.axes.iter().map(|(k, _)| k.as_str())
    }

    /// Every combination, as `(key, value)` lists in axis order.
    pub fn points(&self) -> Vec<Vec<(String, f64)>> {
        let mut points = vec![Vec::new()];
        for (key, values) in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.clone(), *v));
                        q
                    })
                })
                .collect();
        }
        points
    }
}

/// Applies grid values on top of `base` through its canonical text form, so
/// unknown keys are rejected by the config parser.
pub fn apply_point(base: &ExperimentConfig, point: &[(String, f64)]) -> Result<ExperimentConfig> {
    let mut lines: Vec<String> = base.to_text().lines().map(str::to_string).collect();
    let mut seed = None;
    for (key, value) in point {
        if key == "seed" {
            if value.fract() != 0.0 || *value < 0.0 {
                return Err(CliError::Grid(format!("seed must be a non-negative integer, got {value}")));
            }
            seed = Some(*value as u64);
            continue;
        }
        let line = format!("{key} = {value}");
        match lines.iter_mut().find(|l| l.split('=').next().map(str::trim) == Some(key.as_str())) {
            Some(existing) => *existing = line,
            None => lines.push(line),
        }
    }
    let config = ExperimentConfig::parse(&lines.join("\n")).map_err(|e| match e {
        FclError::Parse { message, .. } if message.starts_with("unknown key") => CliError::Grid(message),
        other => other.into(),
    })?;
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// λ1, λ2, λ3 of the run, then every other swept value in grid order.
    pub key: Vec<f64>,
    pub amse: f64,
    pub bwt: Option<f64>,
    pub fwt: Option<f64>,
}

fn point_dir(point: &[(String, f64)]) -> String {
    let parts: Vec<String> = point.iter().map(|(k, v)| format!("{}={v}", k.rsplit('.').next().unwrap())).collect();
    parts.join("_")
}

/// Runs every grid point (in parallel), writes each point's reports into its
/// own subdirectory and the sorted table into `sweep.csv`.
pub fn cmd_sweep(base: &ExperimentConfig, grid: &Grid, out_dir: &Path) -> Result<Vec<SweepRow>> {
    let points = grid.points();
    let configs = points
        .iter()
        .map(|p| apply_point(base, p))
        .collect::<Result<Vec<_>>>()?;
    let extra: Vec<String> = grid.keys().filter(|k| !LAMBDA_KEYS.contains(k)).map(str::to_string).collect();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut rows = points
        .par_iter()
        .zip(configs.par_iter())
        .map(|(point, config)| {
            let summary = cmd_run(config, &out_dir.join(point_dir(point)))?;
            let l = config.algorithm.lambdas;
            let mut key = vec![l.lambda1, l.lambda2, l.lambda3];
            key.extend(extra.iter().map(|k| point.iter().find(|(pk, _)| pk == k).unwrap().1));
            Ok(SweepRow {
                key,
                amse: summary.amse,
                bwt: summary.bwt,
                fwt: summary.fwt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        a.key
            .iter()
            .zip(&b.key)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut csv = String::from("lambda1,lambda2,lambda3");
    for k in &extra {
        csv.push(',');
        csv.push_str(k);
    }
    csv.push_str(",amse,bwt,fwt\n");
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| x.to_string());
    for r in &rows {
        let key: Vec<String> = r.key.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(csv, "{},{},{},{}", key.join(","), r.amse, opt(r.bwt), opt(r.fwt));
    }
    write(&out_dir.join(SWEEP_FILE), &csv)?;
    Ok(rows)
}
