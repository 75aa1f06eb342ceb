//! Round/task orchestration for every training regime.

pub mod audit;
pub mod client;
pub mod trace;

use crate::algorithm::{Family, RoundSchedule};
use crate::config::{ExperimentConfig, ScenarioSource};
use crate::error::Result;
use crate::metrics::{self, ParamAccount, PerformanceMatrix};
use crate::numeric::{self, LabeledSet, MlpSpec, ParameterVector};
use crate::penalty::{AnchorKind, Estimate};
use crate::scenario::{self, Scenario};
use crate::seed::{self, Stream};

pub use audit::{Access, AuditLog, Purpose};
pub use client::{
    aggregate, broadcast_refined, broadcast_rough, consolidate_task, penalty_for, select_clients, train_local,
    ClientState, LocalUpdate, RoughEstimate, RoundContext,
};
pub use trace::{Event, LogEntry, MessageCounts, Origin, TrainLog};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: TrainLog,
    pub performance: PerformanceMatrix,
    /// Per-client matrices of local families; empty otherwise.
    pub client_performance: Vec<PerformanceMatrix>,
    pub audit: AuditLog,
    pub messages: MessageCounts,
    pub events: Vec<Event>,
    pub params: ParamAccount,
    pub param_count: usize,
    /// Final global (or centralized) model; `None` for local families.
    pub global_model: Option<ParameterVector>,
    /// Final state of every client, for inspection.
    pub clients: Vec<ClientState>,
}

/// Builds the scenario described by `config`, applying the train fraction.
pub fn build_scenario(config: &ExperimentConfig) -> Result<Scenario> {
    let scenario = match &config.scenario {
        ScenarioSource::Synthetic(s) => scenario::generate_synthetic(s)?,
        ScenarioSource::External { data, manifest } => scenario::load_external(data, manifest)?,
    };
    scenario::scale_train_fraction(&scenario, config.train_fraction, config.seed)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let scenario = build_scenario(config)?;
    run_on_scenario(config, &scenario)
}

/// Runs `config` on an already built scenario; the config's scenario
/// section is ignored.
pub fn run_on_scenario(config: &ExperimentConfig, scenario: &Scenario) -> Result<RunOutput> {
    config.validate()?;
    let spec = config.model_spec(scenario.dim)?;
    let mut run = Run::new(config, scenario, spec);
    match config.algorithm.family {
        Family::Centralized => run.centralized()?,
        f if f.is_local() => run.local()?,
        _ => run.federated()?,
    }
    run.finish()
}

struct Run<'a> {
    config: &'a ExperimentConfig,
    scenario: &'a Scenario,
    spec: MlpSpec,
    initial: ParameterVector,
    clients: Vec<ClientState>,
    audit: AuditLog,
    log: TrainLog,
    events: Vec<Event>,
    messages: MessageCounts,
    /// Rows of the global matrix, or one set of rows per client.
    rows: Vec<Vec<Vec<f64>>>,
    global: Option<ParameterVector>,
}

impl<'a> Run<'a> {
    fn new(config: &'a ExperimentConfig, scenario: &'a Scenario, spec: MlpSpec) -> Self {
        let initial = numeric::init_model(&spec, seed::derive(config.seed, Stream::Init, &[]));
        let clients = (0..scenario.clients).map(|c| ClientState::new(c, initial.clone())).collect();
        Self {
            config,
            scenario,
            spec,
            initial,
            clients,
            audit: AuditLog::new(),
            log: TrainLog::default(),
            events: Vec::new(),
            messages: MessageCounts::default(),
            rows: Vec::new(),
            global: None,
        }
    }

    fn schedule(&self) -> RoundSchedule {
        self.config.schedule
    }

    fn ctx(&self, task: usize, round: usize) -> RoundContext {
        RoundContext {
            seed: self.schedule().seed,
            task,
            round,
        }
    }

    /// Consolidates the finished task on every client and hands out the
    /// data of `task`.
    fn task_boundary(&mut self, task: usize) -> Result<()> {
        self.events.push(Event::TaskStart { task });
        if task > 0 {
            for c in 0..self.clients.len() {
                let last_round = self.schedule().rounds_per_task.saturating_sub(1);
                consolidate_task(&mut self.clients[c], &self.spec, &mut self.audit)
                    .map_err(client::overflow_as_divergence(c, task - 1, last_round))?;
                self.events.push(Event::Consolidate { client: c, task: task - 1 });
            }
            if self.config.algorithm.family.uses_refined_exchange() {
                broadcast_refined(&mut self.clients);
                let n = self.clients.len();
                for c in 0..n {
                    self.events.push(Event::RefinedBroadcast {
                        task,
                        sender: c,
                        recipients: (0..n).filter(|&k| k != c).collect(),
                    });
                }
                self.messages.broadcast(n, n);
            }
        }
        for (c, client) in self.clients.iter_mut().enumerate() {
            client.rough_inbox.clear();
            let cell = self.scenario.cell(c, task);
            client.receive_task_data(task, cell.train.clone(), cell.validation.clone())?;
        }
        Ok(())
    }

    fn federated(&mut self) -> Result<()> {
        let algo = &self.config.algorithm;
        let family = algo.family;
        let schedule = self.schedule();
        let n = self.clients.len();
        let mut global = self.initial.clone();
        for task in 0..self.scenario.tasks {
            self.task_boundary(task)?;
            for round in 0..schedule.rounds_per_task {
                let selected = select_clients(n, schedule.dropout, schedule.seed, task, round);
                self.events.push(Event::Select {
                    task,
                    round,
                    clients: selected.clone(),
                });
                let mut updates = Vec::with_capacity(selected.len());
                let mut sizes = Vec::with_capacity(selected.len());
                let mut rough = Vec::new();
                for &c in &selected {
                    let client = &self.clients[c];
                    let penalties = penalty_for(client, &global, algo)?;
                    self.events.push(Event::TrainLocal {
                        task,
                        round,
                        client: c,
                        refined_from: client.refined_inbox.keys().copied().collect(),
                        rough_from: client.rough_inbox.values().map(|r| r.origin).collect(),
                        anchors: penalties.len() - penalties.count(AnchorKind::Proximal),
                    });
                    let (theta, loss, penalty) = client::train_local_params(
                        client,
                        &global,
                        schedule.epochs_per_round,
                        algo,
                        &self.spec,
                        &penalties,
                        self.ctx(task, round),
                        &mut self.audit,
                    )?;
                    sizes.push(client.train_size());
                    if family.uses_rough() {
                        let train = client.train_data(&mut self.audit, Purpose::Fisher)?;
                        let fisher = numeric::fisher_diagonal(&self.spec, &theta, train)
                            .map_err(client::overflow_as_divergence(c, task, round))?;
                        rough.push(RoughEstimate {
                            estimate: Estimate::new(theta.clone(), fisher)?,
                            origin: Origin { client: c, task, round },
                        });
                    }
                    self.log.push(LogEntry {
                        task,
                        round,
                        client: c,
                        train_loss: loss,
                        penalty,
                    });
                    self.clients[c].current_model = theta.clone();
                    updates.push((c, theta));
                }
                if family.uses_rough() {
                    broadcast_rough(&mut self.clients, &rough);
                    self.messages.broadcast(rough.len(), n);
                    self.events.push(Event::RoughBroadcast {
                        task,
                        round,
                        senders: selected.clone(),
                    });
                }
                let largest = updates
                    .iter()
                    .max_by(|a, b| peak(&a.1).total_cmp(&peak(&b.1)))
                    .map_or(0, |u| u.0);
                global = aggregate(&updates, algo.aggregation, Some(&sizes))
                    .map_err(client::overflow_as_divergence(largest, task, round))?;
                self.messages.aggregation(selected.len());
                self.events.push(Event::Aggregate {
                    task,
                    round,
                    participants: selected,
                });
            }
            self.events.push(Event::Evaluate { task });
            let row = self.evaluate_global(&global)?;
            push_row(&mut self.rows, 0, row);
        }
        self.global = Some(global);
        Ok(())
    }

    fn local(&mut self) -> Result<()> {
        let algo = &self.config.algorithm;
        let schedule = self.schedule();
        for task in 0..self.scenario.tasks {
            self.task_boundary(task)?;
            for c in 0..self.clients.len() {
                if algo.family == Family::Stl {
                    self.clients[c].current_model = self.initial.clone();
                }
                for round in 0..schedule.rounds_per_task {
                    let client = &self.clients[c];
                    let start = client.current_model.clone();
                    let penalties = penalty_for(client, &start, algo)?;
                    let (theta, loss, penalty) = client::train_local_params(
                        client,
                        &start,
                        schedule.epochs_per_round,
                        algo,
                        &self.spec,
                        &penalties,
                        self.ctx(task, round),
                        &mut self.audit,
                    )?;
                    self.log.push(LogEntry {
                        task,
                        round,
                        client: c,
                        train_loss: loss,
                        penalty,
                    });
                    self.clients[c].current_model = theta;
                }
            }
            self.events.push(Event::Evaluate { task });
            for c in 0..self.clients.len() {
                let model = &self.clients[c].current_model;
                let row = (0..self.scenario.tasks)
                    .map(|j| numeric::mse_loss(&self.spec, model, &self.scenario.cell(c, j).test))
                    .collect::<Result<Vec<_>>>()?;
                push_row(&mut self.rows, c, row);
            }
        }
        Ok(())
    }

    /// One model on the union of every client's training data seen so far,
    /// trained for `R * E` epochs per task.
    fn centralized(&mut self) -> Result<()> {
        let algo = &self.config.algorithm;
        let schedule = self.schedule();
        let mut pool: Vec<LabeledSet> = Vec::new();
        let mut learner = ClientState::new(0, self.initial.clone());
        for task in 0..self.scenario.tasks {
            self.events.push(Event::TaskStart { task });
            pool.extend((0..self.scenario.clients).map(|c| self.scenario.cell(c, task).train.clone()));
            let train = LabeledSet::concat(self.scenario.dim, &pool)?;
            learner.discard_data(&mut self.audit);
            learner.receive_task_data(task, train, LabeledSet::empty(self.scenario.dim))?;
            for round in 0..schedule.rounds_per_task {
                let start = learner.current_model.clone();
                let penalties = penalty_for(&learner, &start, algo)?;
                let (theta, loss, penalty) = client::train_local_params(
                    &learner,
                    &start,
                    schedule.epochs_per_round,
                    algo,
                    &self.spec,
                    &penalties,
                    self.ctx(task, round),
                    &mut self.audit,
                )?;
                self.log.push(LogEntry {
                    task,
                    round,
                    client: 0,
                    train_loss: loss,
                    penalty,
                });
                learner.current_model = theta;
            }
            self.events.push(Event::Evaluate { task });
            let row = self.evaluate_global(&learner.current_model)?;
            push_row(&mut self.rows, 0, row);
        }
        learner.discard_data(&mut self.audit);
        self.global = Some(learner.current_model);
        Ok(())
    }

    fn evaluate_global(&self, model: &ParameterVector) -> Result<Vec<f64>> {
        (0..self.scenario.tasks)
            .map(|j| numeric::mse_loss(&self.spec, model, &self.scenario.pooled_test(j)?))
            .collect()
    }

    fn finish(mut self) -> Result<RunOutput> {
        // the last task's data goes away with the run
        for client in &mut self.clients {
            client.discard_data(&mut self.audit);
        }
        let matrices = self
            .rows
            .into_iter()
            .map(PerformanceMatrix::from_rows)
            .collect::<Result<Vec<_>>>()?;
        let performance = PerformanceMatrix::mean(&matrices)?;
        let family = self.config.algorithm.family;
        let p = self.spec.param_count();
        Ok(RunOutput {
            log: self.log,
            performance,
            client_performance: if family.is_local() { matrices } else { Vec::new() },
            audit: self.audit,
            messages: self.messages,
            events: self.events,
            params: metrics::param_account(family, p, self.scenario.clients, self.scenario.tasks),
            param_count: p,
            global_model: self.global,
            clients: self.clients,
        })
    }
}

fn peak(theta: &ParameterVector) -> f64 {
    theta.as_slice().iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn push_row(rows: &mut Vec<Vec<Vec<f64>>>, owner: usize, row: Vec<f64>) {
    if rows.len() <= owner {
        rows.resize_with(owner + 1, Vec::new);
    }
    rows[owner].push(row);
}
