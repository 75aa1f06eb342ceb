//! Per-client state and the operations of one federated round.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::audit::{AuditLog, Purpose};
use super::trace::Origin;
use crate::algorithm::{Aggregation, AlgorithmSpec, Dropout, Family};
use crate::error::{FclError, Result};
use crate::numeric::{self, FisherDiagonal, LabeledSet, MlpSpec, ParameterVector, Scratch};
use crate::penalty::{self, Anchor, AnchorKind, Estimate, PenaltySet};
use crate::seed::{self, Stream};

/// Raw data a client holds for its current task. Once destroyed it cannot be
/// read again; there is no accessor for past tasks.
#[derive(Debug, Clone, Default)]
struct DataVault {
    active: Option<ActiveData>,
}

#[derive(Debug, Clone)]
struct ActiveData {
    task: usize,
    train: LabeledSet,
    validation: LabeledSet,
}

/// A rough estimate together with where and when it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RoughEstimate {
    pub estimate: Estimate,
    pub origin: Origin,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Latest parameters this client produced (or its private model).
    pub current_model: ParameterVector,
    /// Running sum of refined Fisher diagonals over completed tasks.
    pub online_fisher: FisherDiagonal,
    /// Parameters at the end of the most recent completed task.
    pub recentered_map: Option<ParameterVector>,
    /// Refined `(parameters, Fisher)` of each completed task, oldest first.
    pub task_history: Vec<Estimate>,
    pub refined_inbox: BTreeMap<usize, Estimate>,
    pub rough_inbox: BTreeMap<usize, RoughEstimate>,
    vault: DataVault,
}

impl ClientState {
    pub fn new(id: usize, initial: ParameterVector) -> Self {
        let p = initial.len();
        Self {
            id,
            current_model: initial,
            online_fisher: FisherDiagonal::zeros(p),
            recentered_map: None,
            task_history: Vec::new(),
            refined_inbox: BTreeMap::new(),
            rough_inbox: BTreeMap::new(),
            vault: DataVault::default(),
        }
    }

    /// Hands the client its data for `task`. Any previous task must have
    /// been consolidated or discarded first.
    pub fn receive_task_data(&mut self, task: usize, train: LabeledSet, validation: LabeledSet) -> Result<()> {
        if let Some(active) = &self.vault.active {
            return Err(FclError::config(format!(
                "client {} still holds data of task {}",
                self.id, active.task
            )));
        }
        self.vault.active = Some(ActiveData { task, train, validation });
        Ok(())
    }

    pub fn active_task(&self) -> Option<usize> {
        self.vault.active.as_ref().map(|a| a.task)
    }

    /// Training split of the active task; every call is audited.
    pub fn train_data(&self, audit: &mut AuditLog, purpose: Purpose) -> Result<&LabeledSet> {
        let active = self.vault.active.as_ref().ok_or(FclError::MissingData { client: self.id })?;
        if !audit.record(self.id, active.task, purpose) {
            return Err(FclError::DataDestroyed {
                client: self.id,
                task: active.task,
            });
        }
        Ok(&active.train)
    }

    /// Size of the active training split; not a read of the data itself.
    pub fn train_size(&self) -> usize {
        self.vault.active.as_ref().map_or(0, |a| a.train.len())
    }

    pub fn validation_size(&self) -> usize {
        self.vault.active.as_ref().map_or(0, |a| a.validation.len())
    }

    /// Attempts to read the training split of `task`, which fails once that
    /// task has been consolidated.
    pub fn read_task(&self, task: usize, audit: &mut AuditLog) -> Result<&LabeledSet> {
        match &self.vault.active {
            Some(active) if active.task == task => self.train_data(audit, Purpose::Train),
            _ => {
                audit.record(self.id, task, Purpose::Train);
                if audit.is_destroyed(self.id, task) {
                    Err(FclError::DataDestroyed { client: self.id, task })
                } else {
                    Err(FclError::MissingData { client: self.id })
                }
            }
        }
    }

    /// Drops the active data without consolidating it.
    pub fn discard_data(&mut self, audit: &mut AuditLog) {
        if let Some(active) = self.vault.active.take() {
            audit.mark_destroyed(self.id, active.task);
        }
    }

    pub fn own_refined(&self) -> Option<Estimate> {
        self.recentered_map.as_ref().map(|theta| Estimate {
            theta: theta.clone(),
            fisher: self.online_fisher.clone(),
        })
    }
}

/// Reclassifies overflow in derived quantities (Fisher, averages) as
/// divergence of the run that produced them.
pub(crate) fn overflow_as_divergence(client: usize, task: usize, round: usize) -> impl FnOnce(FclError) -> FclError {
    move |e| match e {
        FclError::NonFinite { .. } => FclError::Divergence {
            client,
            task,
            round,
            detail: e.to_string(),
        },
        other => other,
    }
}

/// Ends the active task: adds the Fisher of the final parameters to the
/// running sum, re-centres on those parameters and destroys the raw data.
pub fn consolidate_task(client: &mut ClientState, spec: &MlpSpec, audit: &mut AuditLog) -> Result<()> {
    let fisher = {
        let train = client.train_data(audit, Purpose::Consolidate)?;
        numeric::fisher_diagonal(spec, &client.current_model, train)?
    };
    client.online_fisher = client.online_fisher.add(&fisher)?;
    client.recentered_map = Some(client.current_model.clone());
    client.task_history.push(Estimate::new(client.current_model.clone(), fisher)?);
    client.discard_data(audit);
    Ok(())
}

/// Delivers every client's latest refined estimate to every other client.
pub fn broadcast_refined(clients: &mut [ClientState]) {
    let refined: Vec<(usize, Option<Estimate>)> = clients.iter().map(|c| (c.id, c.own_refined())).collect();
    for client in clients.iter_mut() {
        for (sender, estimate) in &refined {
            if *sender != client.id {
                if let Some(e) = estimate {
                    client.refined_inbox.insert(*sender, e.clone());
                }
            }
        }
    }
}

/// Replaces the inbox entries of this round's senders. Entries from clients
/// that did not participate stay as they were.
pub fn broadcast_rough(clients: &mut [ClientState], sent: &[RoughEstimate]) {
    for client in clients.iter_mut() {
        for r in sent {
            if r.origin.client != client.id {
                client.rough_inbox.insert(r.origin.client, r.clone());
            }
        }
    }
}

/// Clients taking part in `(task, round)`, ascending.
pub fn select_clients(clients: usize, dropout: Dropout, seed: u64, task: usize, round: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..clients).collect();
    match dropout {
        Dropout::None => all,
        Dropout::DropOneUniform if clients <= 1 => all,
        Dropout::DropOneUniform => {
            let mut rng = seed::rng(seed, Stream::Dropout, &[task as u64, round as u64]);
            let dropped = rng.random_range(0..clients);
            all.remove(dropped);
            all
        }
    }
}

/// Mean of the participants' parameters, reduced in ascending client order.
/// `weights` (one per update) switches to a weighted mean.
pub fn aggregate(updates: &[(usize, ParameterVector)], mode: Aggregation, sizes: Option<&[usize]>) -> Result<ParameterVector> {
    if updates.is_empty() {
        return Err(FclError::EmptyUpdates);
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&k| updates[k].0);
    let p = updates[0].1.len();
    if let Some(bad) = updates.iter().find(|u| u.1.len() != p) {
        return Err(FclError::LengthMismatch {
            expected: p,
            actual: bad.1.len(),
        });
    }
    match mode {
        Aggregation::Uniform => {
            let mut acc = updates[order[0]].1.as_slice().to_vec();
            for &k in &order[1..] {
                for (a, v) in acc.iter_mut().zip(updates[k].1.as_slice()) {
                    *a += v;
                }
            }
            let n = updates.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            ParameterVector::new(acc)
        }
        Aggregation::SizeWeighted => {
            let sizes = sizes.ok_or_else(|| FclError::config("size-weighted aggregation needs sizes"))?;
            if sizes.len() != updates.len() {
                return Err(FclError::LengthMismatch {
                    expected: updates.len(),
                    actual: sizes.len(),
                });
            }
            let total: usize = sizes.iter().sum();
            if total == 0 {
                return Err(FclError::EmptyUpdates);
            }
            let mut acc = vec![0.0; p];
            for &k in &order {
                let w = sizes[k] as f64 / total as f64;
                for (a, v) in acc.iter_mut().zip(updates[k].1.as_slice()) {
                    *a += w * v;
                }
            }
            ParameterVector::new(acc)
        }
    }
}

/// Penalty anchors the family imposes on this client's local objective.
pub fn penalty_for(client: &ClientState, global: &ParameterVector, algo: &AlgorithmSpec) -> Result<PenaltySet> {
    let l = algo.lambdas;
    let rough: Vec<Estimate> = client.rough_inbox.values().map(|r| r.estimate.clone()).collect();
    match algo.family {
        Family::Centralized | Family::Stl | Family::LocalSgd | Family::FedAvgSgd => Ok(PenaltySet::empty()),
        Family::LocalL2T => PenaltySet::new(
            client
                .task_history
                .iter()
                .map(|e| Anchor::isotropic(e.theta.clone(), l.lambda1, AnchorKind::OwnPreviousRefined))
                .collect::<Result<_>>()?,
        ),
        Family::LocalEwc | Family::FedAvgEwc => penalty::make_ewc_anchors(&client.task_history, l.lambda1),
        Family::LocalOnlineEwc => penalty::make_ewc_anchors(client.own_refined().as_slice(), l.lambda1),
        Family::FedProxSgd => proximal(global, l.lambda3),
        Family::FedProxEwc => penalty::make_ewc_anchors(&client.task_history, l.lambda1)?.extend(proximal(global, l.lambda3)?),
        Family::FedCurv => penalty::make_fedcurv_anchors(&rough, l.lambda3),
        Family::ElasticTransfer => {
            let peers: Vec<Estimate> = client.refined_inbox.values().cloned().collect();
            penalty::make_elastic_transfer_anchors(client.own_refined().as_ref(), &peers, &rough, l.transfer_weights())
        }
    }
}

fn proximal(global: &ParameterVector, mu: f64) -> Result<PenaltySet> {
    PenaltySet::new(vec![Anchor::isotropic(global.clone(), mu, AnchorKind::Proximal)?])
}

/// Position of a local training call inside the run, used to derive the
/// mini-batch shuffling streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundContext {
    pub seed: u64,
    pub task: usize,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub theta: ParameterVector,
    pub fisher: FisherDiagonal,
    pub train_loss: f64,
    pub penalty: f64,
}

/// Runs `epochs` epochs of mini-batch SGD on data loss plus the family's
/// penalty, starting from `start`. Returns the final parameters and the
/// empirical Fisher at them on the client's training split.
pub fn train_local(
    client: &ClientState,
    start: &ParameterVector,
    epochs: usize,
    algo: &AlgorithmSpec,
    spec: &MlpSpec,
    ctx: RoundContext,
    audit: &mut AuditLog,
) -> Result<LocalUpdate> {
    let penalties = penalty_for(client, start, algo)?;
    let (theta, train_loss, penalty) = run_sgd(client, start, epochs, algo, spec, &penalties, ctx, audit)?;
    let fisher = numeric::fisher_diagonal(spec, &theta, client.train_data(audit, Purpose::Fisher)?)?;
    Ok(LocalUpdate {
        theta,
        fisher,
        train_loss,
        penalty,
    })
}

/// [`train_local`] without the Fisher pass, for families that never send
/// rough estimates.
pub(crate) fn train_local_params(
    client: &ClientState,
    start: &ParameterVector,
    epochs: usize,
    algo: &AlgorithmSpec,
    spec: &MlpSpec,
    penalties: &PenaltySet,
    ctx: RoundContext,
    audit: &mut AuditLog,
) -> Result<(ParameterVector, f64, f64)> {
    run_sgd(client, start, epochs, algo, spec, penalties, ctx, audit)
}

#[allow(clippy::too_many_arguments)]
fn run_sgd(
    client: &ClientState,
    start: &ParameterVector,
    epochs: usize,
    algo: &AlgorithmSpec,
    spec: &MlpSpec,
    penalties: &PenaltySet,
    ctx: RoundContext,
    audit: &mut AuditLog,
) -> Result<(ParameterVector, f64, f64)> {
    if epochs == 0 {
        return Err(FclError::config("epochs must be >= 1"));
    }
    let data = client.train_data(audit, Purpose::Train)?;
    if data.is_empty() {
        return Err(FclError::EmptyDataset);
    }
    let diverged = |detail: String| FclError::Divergence {
        client: client.id,
        task: ctx.task,
        round: ctx.round,
        detail,
    };
    let lr = algo.lr;
    let mut theta = start.as_slice().to_vec();
    let mut grad = vec![0.0; theta.len()];
    let mut scratch = Scratch::new(spec);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = 0.0;
    for epoch in 0..epochs {
        order.sort_unstable();
        let mut rng = seed::rng(
            ctx.seed,
            Stream::Shuffle,
            &[client.id as u64, ctx.task as u64, ctx.round as u64, epoch as u64],
        );
        order.shuffle(&mut rng);
        epoch_loss = 0.0;
        for batch in order.chunks(algo.batch_size) {
            let loss = numeric::loss_and_grad_on(spec, &theta, data, batch, &mut scratch, &mut grad);
            if !loss.is_finite() {
                return Err(diverged(format!("non-finite data loss in epoch {epoch}")));
            }
            epoch_loss += loss * batch.len() as f64;
            penalties.add_grad_slice(&theta, &mut grad);
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= lr * g;
            }
        }
    }
    let penalty = penalties.value_slice(&theta);
    if !penalty.is_finite() {
        return Err(diverged("non-finite penalty".into()));
    }
    let theta = ParameterVector::new(theta).map_err(|e| diverged(e.to_string()))?;
    Ok((theta, epoch_loss / data.len() as f64, penalty))
}
