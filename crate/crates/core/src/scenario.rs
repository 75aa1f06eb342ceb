//! Client-task data scenarios.
//!
//! A scenario is a `clients x tasks` grid of cells. Each cell belongs to one
//! client during one task and is split into train/validation/test parts.
//! Cells come either from the seeded synthetic generator, which emulates
//! users whose preferences partially agree, or from a pre-featurized
//! line-record file.
//!
//! Line-record format (7-bit decimal text):
//!
//! ```text
//! #fcl-v1,d=<feature dim>
//! <client id>,<task id>,<label in [0,1]>,<f1>,...,<fd>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{FclError, Result};
use crate::kv::KeyValues;
use crate::numeric::LabeledSet;
use crate::seed::{self, Stream};

pub const MIN_CELL_SIZE: usize = 10;
pub const DEFAULT_SPLIT: [f64; 3] = [0.70, 0.15, 0.15];

/// Pre-split cell sizes for three clients over four tasks, following the
/// strongly imbalanced pattern of the reference navigation benchmark
/// (46 to 2,500 samples per cell).
pub const DEFAULT_SIZE_TABLE: [[usize; 4]; 3] = [
    [159, 1117, 597, 124],
    [123, 522, 2500, 616],
    [2500, 148, 66, 808],
];

/// Optional training-set augmentation: each training row gets `copies`
/// extra jittered duplicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub copies: usize,
    pub feature_noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub clients: usize,
    pub tasks: usize,
    /// `size_table[c][t]`: total samples of the cell before splitting.
    pub size_table: Vec<Vec<usize>>,
    pub feature_dim: usize,
    /// 0 = every cell shares one labeling function, 1 = independent users.
    pub heterogeneity: f64,
    pub label_noise: f64,
    /// Standard deviation of the pre-link score `w . x`.
    pub signal_scale: f64,
    pub split: [f64; 3],
    pub augmentation: Option<Augmentation>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            clients: 3,
            tasks: 4,
            size_table: DEFAULT_SIZE_TABLE.iter().map(|r| r.to_vec()).collect(),
            feature_dim: 16,
            heterogeneity: 0.5,
            label_noise: 0.05,
            signal_scale: 1.5,
            split: DEFAULT_SPLIT,
            augmentation: None,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Uniform cell size over a `clients x tasks` grid.
    pub fn uniform(clients: usize, tasks: usize, cell_size: usize) -> Self {
        Self {
            clients,
            tasks,
            size_table: vec![vec![cell_size; tasks]; clients],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.tasks == 0 {
            return Err(FclError::config("scenario needs at least one client and one task"));
        }
        if self.feature_dim == 0 {
            return Err(FclError::config("feature_dim must be >= 1"));
        }
        if self.size_table.len() != self.clients || self.size_table.iter().any(|r| r.len() != self.tasks) {
            return Err(FclError::config(format!(
                "size table must be {} rows of {} entries",
                self.clients, self.tasks
            )));
        }
        if let Some(n) = self.size_table.iter().flatten().find(|&&n| n < MIN_CELL_SIZE) {
            return Err(FclError::config(format!("cell size {n} below minimum {MIN_CELL_SIZE}")));
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return Err(FclError::config("heterogeneity must lie in [0, 1]"));
        }
        if !(self.label_noise >= 0.0) || !self.label_noise.is_finite() {
            return Err(FclError::config("label_noise must be >= 0"));
        }
        if !(self.signal_scale > 0.0) || !self.signal_scale.is_finite() {
            return Err(FclError::config("signal_scale must be > 0"));
        }
        check_ratios(&self.split)?;
        if let Some(aug) = self.augmentation {
            if !(aug.feature_noise >= 0.0) || !aug.feature_noise.is_finite() {
                return Err(FclError::config("augmentation noise must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.size_table.iter().flatten().sum()
    }
}

fn check_ratios(r: &[f64; 3]) -> Result<()> {
    if r.iter().any(|x| !(*x >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(FclError::config(format!("split ratios {r:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// The data of one client during one task.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientTaskDataset {
    pub client: usize,
    pub task: usize,
    pub train: LabeledSet,
    pub validation: LabeledSet,
    pub test: LabeledSet,
}

/// Unsplit cell contents.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCell {
    pub client: usize,
    pub task: usize,
    pub samples: LabeledSet,
}

/// Cells before splitting, in client-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScenario {
    pub clients: usize,
    pub tasks: usize,
    pub dim: usize,
    /// External identifiers written to record files, indexed by position.
    pub client_ids: Vec<u64>,
    pub task_ids: Vec<u64>,
    pub cells: Vec<RawCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub clients: usize,
    pub tasks: usize,
    pub dim: usize,
    cells: Vec<ClientTaskDataset>,
}

impl Scenario {
    pub fn new(clients: usize, tasks: usize, dim: usize, cells: Vec<ClientTaskDataset>) -> Result<Self> {
        if cells.len() != clients * tasks {
            return Err(FclError::InvalidDataset(format!(
                "{} cells for a {clients}x{tasks} grid",
                cells.len()
            )));
        }
        for (k, cell) in cells.iter().enumerate() {
            if (cell.client, cell.task) != (k / tasks, k % tasks) {
                return Err(FclError::InvalidDataset("cells must be in client-major order".into()));
            }
            for part in [&cell.train, &cell.validation, &cell.test] {
                if part.dim() != dim {
                    return Err(FclError::DimensionMismatch {
                        expected: dim,
                        actual: part.dim(),
                    });
                }
            }
        }
        Ok(Self {
            clients,
            tasks,
            dim,
            cells,
        })
    }

    pub fn cell(&self, client: usize, task: usize) -> &ClientTaskDataset {
        &self.cells[client * self.tasks + task]
    }

    pub fn cells(&self) -> &[ClientTaskDataset] {
        &self.cells
    }

    pub fn into_cells(self) -> Vec<ClientTaskDataset> {
        self.cells
    }

    /// Test splits of one task across all clients, in client order.
    pub fn pooled_test(&self, task: usize) -> Result<LabeledSet> {
        LabeledSet::concat(self.dim, (0..self.clients).map(|c| &self.cell(c, task).test))
    }
}

impl RawScenario {
    pub fn cell(&self, client: usize, task: usize) -> &RawCell {
        &self.cells[client * self.tasks + task]
    }

    pub fn total_samples(&self) -> usize {
        self.cells.iter().map(|c| c.samples.len()).sum()
    }

    /// Splits every cell with its own derived seed.
    pub fn split(&self, ratios: [f64; 3], seed: u64) -> Result<Scenario> {
        let cells = self
            .cells
            .iter()
            .map(|cell| {
                let cell_seed = seed::derive(seed, Stream::Split, &[cell.client as u64, cell.task as u64]);
                let (train, validation, test) = split(&cell.samples, ratios, cell_seed)?;
                Ok(ClientTaskDataset {
                    client: cell.client,
                    task: cell.task,
                    train,
                    validation,
                    test,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Scenario::new(self.clients, self.tasks, self.dim, cells)
    }

    /// Line-record text of every sample, header first.
    pub fn to_records(&self) -> String {
        let mut out = format!("#fcl-v1,d={}\n", self.dim);
        for cell in &self.cells {
            let client = self.client_ids[cell.client];
            let task = self.task_ids[cell.task];
            for i in 0..cell.samples.len() {
                let _ = write!(out, "{client},{task},{}", cell.samples.label(i));
                for v in cell.samples.row(i) {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Seeded shuffle, then a contiguous cut. Validation and test sizes are
/// `floor(n * ratio)`; the remainder goes to training.
pub fn split(samples: &LabeledSet, ratios: [f64; 3], seed: u64) -> Result<(LabeledSet, LabeledSet, LabeledSet)> {
    check_ratios(&ratios)?;
    let n = samples.len();
    if n < MIN_CELL_SIZE {
        return Err(FclError::TooFewSamples { n, min: MIN_CELL_SIZE });
    }
    let portion = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let n_val = portion(ratios[1]);
    let n_test = portion(ratios[2]);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, Stream::Split, &[]));
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((samples.select(train), samples.select(val), samples.select(test)))
}

/// Keeps `ceil(f * n)` training rows per cell. The kept rows are a prefix of
/// one seeded permutation per cell, so smaller fractions select subsets of
/// larger ones. Validation and test parts are untouched.
pub fn scale_train_fraction(scenario: &Scenario, fraction: f64, seed: u64) -> Result<Scenario> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FclError::config(format!("train fraction {fraction} outside (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(scenario.clone());
    }
    let cells = scenario
        .cells
        .iter()
        .map(|cell| {
            let n = cell.train.len();
            let keep = (((n as f64) * fraction - 1e-9).ceil() as usize).clamp(1, n.max(1));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seed::rng(seed, Stream::Subsample, &[cell.client as u64, cell.task as u64]));
            let mut kept = order[..keep.min(n)].to_vec();
            kept.sort_unstable();
            ClientTaskDataset {
                train: cell.train.select(&kept),
                ..cell.clone()
            }
        })
        .collect();
    Scenario::new(scenario.clients, scenario.tasks, scenario.dim, cells)
}

/// Draws every cell of the synthetic scenario without splitting it.
///
/// Cell `(c, t)` labels points with the preference vector
/// `w = sqrt(1 - rho) * w_shared + sqrt(rho) * w_own(c, t)` through
/// `clamp(0.5 + 0.5 * tanh(w . x) + noise, 0, 1)`, with features uniform in
/// `[-1, 1]^d`. Weight entries are Gaussian with variance `3 s^2 / d`, so that
/// `w . x` has standard deviation `s` (`signal_scale`).
pub fn generate_raw(config: &ScenarioConfig) -> Result<RawScenario> {
    config.validate()?;
    let d = config.feature_dim;
    let weight_dist = Normal::new(0.0, (3.0 / d as f64).sqrt() * config.signal_scale)
        .map_err(|e| FclError::config(e.to_string()))?;
    let noise = Normal::new(0.0, config.label_noise).map_err(|e| FclError::config(e.to_string()))?;
    let shared_part = (1.0 - config.heterogeneity).sqrt();
    let own_part = config.heterogeneity.sqrt();

    let mut shared_rng = seed::rng(config.seed, Stream::Scenario, &[u64::MAX]);
    let shared: Vec<f64> = (0..d).map(|_| weight_dist.sample(&mut shared_rng)).collect();

    let mut cells = Vec::with_capacity(config.clients * config.tasks);
    for c in 0..config.clients {
        for t in 0..config.tasks {
            let mut rng = seed::rng(config.seed, Stream::Scenario, &[c as u64, t as u64]);
            let w: Vec<f64> = shared
                .iter()
                .map(|s| shared_part * s + own_part * weight_dist.sample(&mut rng))
                .collect();
            let n = config.size_table[c][t];
            let mut features = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let start = features.len();
                features.extend((0..d).map(|_| rng.random_range(-1.0..=1.0)));
                let score: f64 = features[start..].iter().zip(&w).map(|(x, w)| x * w).sum();
                let y = 0.5 + 0.5 * score.tanh() + noise.sample(&mut rng);
                labels.push(y.clamp(0.0, 1.0));
            }
            cells.push(RawCell {
                client: c,
                task: t,
                samples: LabeledSet::new(d, features, labels)?,
            });
        }
    }
    Ok(RawScenario {
        clients: config.clients,
        tasks: config.tasks,
        dim: d,
        client_ids: (1..=config.clients as u64).collect(),
        task_ids: (1..=config.tasks as u64).collect(),
        cells,
    })
}

pub fn generate_synthetic(config: &ScenarioConfig) -> Result<Scenario> {
    let scenario = generate_raw(config)?.split(config.split, config.seed)?;
    match config.augmentation {
        Some(aug) => augment(&scenario, aug, config.seed),
        None => Ok(scenario),
    }
}

/// Appends jittered duplicates of every training row; labels are copied.
pub fn augment(scenario: &Scenario, aug: Augmentation, seed: u64) -> Result<Scenario> {
    let jitter = Normal::new(0.0, aug.feature_noise).map_err(|e| FclError::config(e.to_string()))?;
    let cells = scenario
        .cells
        .iter()
        .map(|cell| {
            let train = &cell.train;
            let mut rng = seed::rng(seed, Stream::Scenario, &[cell.client as u64, cell.task as u64, 1 << 32]);
            let next_id = train.ids().iter().max().map_or(0, |m| m + 1) + 1_000_000;
            let mut features = Vec::new();
            let mut labels = Vec::new();
            let mut ids = Vec::new();
            for copy in 0..aug.copies {
                for i in 0..train.len() {
                    features.extend(train.row(i).iter().map(|v| v + jitter.sample(&mut rng)));
                    labels.push(train.label(i));
                    ids.push(next_id + (copy * train.len() + i) as u64);
                }
            }
            let extra = LabeledSet::with_ids(train.dim(), features, labels, ids)?;
            Ok(ClientTaskDataset {
                train: LabeledSet::concat(train.dim(), [train, &extra])?,
                ..cell.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Scenario::new(scenario.clients, scenario.tasks, scenario.dim, cells)
}

/// One parsed line of a record file.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub line: usize,
    pub client_id: u64,
    pub task_id: u64,
    pub label: f64,
    pub features: Vec<f64>,
}

/// Parses line-record text. Blank lines are ignored.
pub fn parse_records(text: &str) -> Result<(usize, Vec<Record>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(FclError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let dim = header
        .trim()
        .strip_prefix("#fcl-v1,d=")
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| FclError::Parse {
            line: 1,
            message: format!("expected header '#fcl-v1,d=<int>', got '{header}'"),
        })?;

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let bad = |message: String| FclError::Parse { line: line_no, message };
        if !line.is_ascii() {
            return Err(bad("non-ASCII content".into()));
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 3 {
            return Err(bad(format!("expected {} fields, found {}", dim + 3, fields.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("'{s}': {e}")));
        let real = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("'{s}' is not a finite decimal")))
        };
        let label = real(fields[2])?;
        if !(0.0..=1.0).contains(&label) {
            return Err(bad(format!("label {label} outside [0, 1]")));
        }
        records.push(Record {
            line: line_no,
            client_id: int(fields[0])?,
            task_id: int(fields[1])?,
            label,
            features: fields[3..].iter().map(|s| real(s)).collect::<Result<_>>()?,
        });
    }
    if records.is_empty() {
        return Err(FclError::Parse {
            line: 1,
            message: "no records after header".into(),
        });
    }
    Ok((dim, records))
}

/// Declares the client and task identifiers of an external dataset. Listing
/// order fixes the internal client/task order.
///
/// ```text
/// clients = 1,2,3
/// tasks = 1,2,3,4
/// split = 0.7,0.15,0.15   # optional
/// seed = 0                # optional, split seed
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub client_ids: Vec<u64>,
    pub task_ids: Vec<u64>,
    pub split: [f64; 3],
    pub seed: u64,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let ids = |key: &str| -> Result<Vec<u64>> {
            let list: Vec<u64> = kv.require_list(key)?;
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if list.is_empty() || sorted.len() != list.len() {
                return Err(FclError::config(format!("manifest '{key}' must list distinct ids")));
            }
            Ok(list)
        };
        let split = match kv.get_list::<f64>("split")? {
            Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
            Some(_) => return Err(FclError::config("manifest 'split' needs three ratios")),
            None => DEFAULT_SPLIT,
        };
        check_ratios(&split)?;
        let manifest = Self {
            client_ids: ids("clients")?,
            task_ids: ids("tasks")?,
            split,
            seed: kv.get("seed")?.unwrap_or(0),
        };
        kv.reject_unused()?;
        Ok(manifest)
    }

    /// Groups records into cells. Records outside the manifest and manifest
    /// ids without any record are both errors.
    pub fn assemble(&self, dim: usize, records: &[Record]) -> Result<RawScenario> {
        let clients = self.client_ids.len();
        let tasks = self.task_ids.len();
        let mut features = vec![Vec::new(); clients * tasks];
        let mut labels = vec![Vec::new(); clients * tasks];
        let mut seen_clients = vec![false; clients];
        for r in records {
            let c = self.client_ids.iter().position(|&id| id == r.client_id).ok_or_else(|| FclError::Parse {
                line: r.line,
                message: format!("client id {} not declared in manifest", r.client_id),
            })?;
            let t = self.task_ids.iter().position(|&id| id == r.task_id).ok_or_else(|| FclError::Parse {
                line: r.line,
                message: format!("task id {} not declared in manifest", r.task_id),
            })?;
            seen_clients[c] = true;
            features[c * tasks + t].extend_from_slice(&r.features);
            labels[c * tasks + t].push(r.label);
        }
        if let Some(c) = seen_clients.iter().position(|s| !s) {
            return Err(FclError::config(format!(
                "manifest references unknown client id {} (no records)",
                self.client_ids[c]
            )));
        }
        let cells = features
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(k, (f, l))| {
                Ok(RawCell {
                    client: k / tasks,
                    task: k % tasks,
                    samples: LabeledSet::new(dim, f, l)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RawScenario {
            clients,
            tasks,
            dim,
            client_ids: self.client_ids.clone(),
            task_ids: self.task_ids.clone(),
            cells,
        })
    }
}

pub fn load_external(data_path: &Path, manifest_path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(data_path).map_err(|e| FclError::io(data_path, e))?;
    let manifest_text = std::fs::read_to_string(manifest_path).map_err(|e| FclError::io(manifest_path, e))?;
    let manifest = Manifest::parse(&manifest_text)?;
    let (dim, records) = parse_records(&text)?;
    manifest.assemble(dim, &records)?.split(manifest.split, manifest.seed)
}
