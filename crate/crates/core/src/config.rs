//! Declarative experiment description and its `key = value` form.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::algorithm::{Aggregation, AlgorithmSpec, Dropout, Family, Lambdas, RoundSchedule};
use crate::error::{FclError, Result};
use crate::kv::KeyValues;
use crate::numeric::{Activation, MlpSpec};
use crate::scenario::{Augmentation, ScenarioConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    Synthetic(ScenarioConfig),
    External { data: PathBuf, manifest: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSource,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub algorithm: AlgorithmSpec,
    pub schedule: RoundSchedule,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSource::Synthetic(ScenarioConfig::default()),
            hidden: vec![32, 32],
            activation: Activation::Relu,
            algorithm: AlgorithmSpec::new(Family::ElasticTransfer, Lambdas::new(0.0, 0.5, 0.0)),
            schedule: RoundSchedule {
                rounds_per_task: 25,
                epochs_per_round: 5,
                dropout: Dropout::DropOneUniform,
                seed: 0,
            },
            train_fraction: 1.0,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Default configuration for another family with the given weights.
    pub fn for_family(family: Family, lambdas: Lambdas) -> Self {
        let mut config = Self::default();
        config.algorithm.family = family;
        config.algorithm.lambdas = lambdas;
        config
    }

    /// Sets the experiment seed; a synthetic scenario follows it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.schedule.seed = seed;
        if let ScenarioSource::Synthetic(s) = &mut self.scenario {
            s.seed = seed;
        }
        self
    }

    pub fn synthetic(&self) -> Option<&ScenarioConfig> {
        match &self.scenario {
            ScenarioSource::Synthetic(s) => Some(s),
            ScenarioSource::External { .. } => None,
        }
    }

    pub fn synthetic_mut(&mut self) -> Option<&mut ScenarioConfig> {
        match &mut self.scenario {
            ScenarioSource::Synthetic(s) => Some(s),
            ScenarioSource::External { .. } => None,
        }
    }

    pub fn model_spec(&self, input_dim: usize) -> Result<MlpSpec> {
        MlpSpec::with_hidden(input_dim, &self.hidden, self.activation)
    }

    pub fn validate(&self) -> Result<()> {
        if let ScenarioSource::Synthetic(s) = &self.scenario {
            s.validate()?;
        }
        if self.hidden.contains(&0) {
            return Err(FclError::config("hidden layer sizes must be positive"));
        }
        self.algorithm.validate()?;
        self.schedule.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(FclError::config(format!(
                "train_fraction {} outside (0, 1]",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Parses configuration text. Missing keys keep their defaults; unknown
    /// keys are rejected. `seed` also seeds the synthetic scenario unless
    /// `scenario.seed` is given.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let mut c = ExperimentConfig::default();

        let seed = kv.get::<u64>("seed")?.unwrap_or(0);
        c = c.with_seed(seed);

        let data = kv.get::<String>("scenario.data")?;
        let manifest = kv.get::<String>("scenario.manifest")?;
        match (data, manifest) {
            (Some(data), Some(manifest)) => {
                c.scenario = ScenarioSource::External {
                    data: data.into(),
                    manifest: manifest.into(),
                };
            }
            (None, None) => {}
            _ => return Err(FclError::config("scenario.data and scenario.manifest go together")),
        }

        let synthetic_keys = [
            "scenario.clients",
            "scenario.tasks",
            "scenario.sizes",
            "scenario.feature_dim",
            "scenario.heterogeneity",
            "scenario.label_noise",
            "scenario.signal_scale",
            "scenario.split",
            "scenario.augment_copies",
            "scenario.augment_noise",
            "scenario.seed",
        ];
        match &mut c.scenario {
            ScenarioSource::Synthetic(s) => {
                if let Some(v) = kv.get("scenario.clients")? {
                    s.clients = v;
                }
                if let Some(v) = kv.get("scenario.tasks")? {
                    s.tasks = v;
                }
                match kv.get_table::<usize>("scenario.sizes")? {
                    Some(table) => s.size_table = table,
                    None if (s.clients, s.tasks) != (3, 4) => {
                        return Err(FclError::config(
                            "scenario.sizes is required unless the grid is 3 clients x 4 tasks",
                        ))
                    }
                    None => {}
                }
                if let Some(v) = kv.get("scenario.feature_dim")? {
                    s.feature_dim = v;
                }
                if let Some(v) = kv.get("scenario.heterogeneity")? {
                    s.heterogeneity = v;
                }
                if let Some(v) = kv.get("scenario.label_noise")? {
                    s.label_noise = v;
                }
                if let Some(v) = kv.get("scenario.signal_scale")? {
                    s.signal_scale = v;
                }
                if let Some(v) = kv.get_list::<f64>("scenario.split")? {
                    if v.len() != 3 {
                        return Err(FclError::config("scenario.split needs three ratios"));
                    }
                    s.split = [v[0], v[1], v[2]];
                }
                let copies = kv.get::<usize>("scenario.augment_copies")?.unwrap_or(0);
                let noise = kv.get::<f64>("scenario.augment_noise")?.unwrap_or(0.0);
                s.augmentation = (copies > 0).then_some(Augmentation {
                    copies,
                    feature_noise: noise,
                });
                if let Some(v) = kv.get("scenario.seed")? {
                    s.seed = v;
                }
            }
            ScenarioSource::External { .. } => {
                if let Some(key) = synthetic_keys.iter().find(|k| kv.raw(k).is_some()) {
                    return Err(FclError::config(format!("{key} does not apply to external data")));
                }
            }
        }

        if let Some(v) = kv.get_list::<usize>("model.hidden")? {
            c.hidden = v;
        }
        if let Some(v) = kv.get::<String>("model.activation")? {
            c.activation = Activation::parse(&v)?;
        }

        let a = &mut c.algorithm;
        if let Some(v) = kv.get::<String>("algorithm.family")? {
            a.family = Family::parse(&v)?;
            // weights default to zero once the family changes
            a.lambdas = Lambdas::default();
        }
        if let Some(v) = kv.get("algorithm.lambda1")? {
            a.lambdas.lambda1 = v;
        }
        if let Some(v) = kv.get("algorithm.lambda2")? {
            a.lambdas.lambda2 = v;
        }
        if let Some(v) = kv.get("algorithm.lambda3")? {
            a.lambdas.lambda3 = v;
        }
        if let Some(v) = kv.get("algorithm.lr")? {
            a.lr = v;
        }
        if let Some(v) = kv.get("algorithm.batch_size")? {
            a.batch_size = v;
        }
        if let Some(v) = kv.get::<String>("algorithm.aggregation")? {
            a.aggregation = Aggregation::parse(&v)?;
        }

        if let Some(v) = kv.get("schedule.rounds")? {
            c.schedule.rounds_per_task = v;
        }
        if let Some(v) = kv.get("schedule.epochs")? {
            c.schedule.epochs_per_round = v;
        }
        if let Some(v) = kv.get::<String>("schedule.dropout")? {
            c.schedule.dropout = Dropout::parse(&v)?;
        }
        if let Some(v) = kv.get("train_fraction")? {
            c.train_fraction = v;
        }

        kv.reject_unused()?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        line("seed", self.seed.to_string());
        match &self.scenario {
            ScenarioSource::Synthetic(s) => {
                line("scenario.clients", s.clients.to_string());
                line("scenario.tasks", s.tasks.to_string());
                line(
                    "scenario.sizes",
                    s.size_table.iter().map(|r| join(r)).collect::<Vec<_>>().join(";"),
                );
                line("scenario.feature_dim", s.feature_dim.to_string());
                line("scenario.heterogeneity", format!("{:?}", s.heterogeneity));
                line("scenario.label_noise", format!("{:?}", s.label_noise));
                line("scenario.signal_scale", format!("{:?}", s.signal_scale));
                line("scenario.split", format!("{:?},{:?},{:?}", s.split[0], s.split[1], s.split[2]));
                if let Some(aug) = s.augmentation {
                    line("scenario.augment_copies", aug.copies.to_string());
                    line("scenario.augment_noise", format!("{:?}", aug.feature_noise));
                }
                line("scenario.seed", s.seed.to_string());
            }
            ScenarioSource::External { data, manifest } => {
                line("scenario.data", data.display().to_string());
                line("scenario.manifest", manifest.display().to_string());
            }
        }
        line("model.hidden", join(&self.hidden));
        line("model.activation", self.activation.name().to_string());
        let a = &self.algorithm;
        line("algorithm.family", a.family.name().to_string());
        line("algorithm.lambda1", format!("{:?}", a.lambdas.lambda1));
        line("algorithm.lambda2", format!("{:?}", a.lambdas.lambda2));
        line("algorithm.lambda3", format!("{:?}", a.lambdas.lambda3));
        line("algorithm.lr", format!("{:?}", a.lr));
        line("algorithm.batch_size", a.batch_size.to_string());
        line("algorithm.aggregation", a.aggregation.name().to_string());
        line("schedule.rounds", self.schedule.rounds_per_task.to_string());
        line("schedule.epochs", self.schedule.epochs_per_round.to_string());
        line("schedule.dropout", self.schedule.dropout.name().to_string());
        line("train_fraction", format!("{:?}", self.train_fraction));
        out
    }
}
