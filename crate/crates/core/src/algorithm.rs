//! Training regimes and their hyper-parameters.

use crate::error::{FclError, Result};
use crate::penalty::TransferWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    /// One model trained on the pooled data of every client.
    Centralized,
    /// A fresh model per client-task cell.
    Stl,
    LocalSgd,
    LocalL2T,
    LocalEwc,
    LocalOnlineEwc,
    FedAvgSgd,
    FedProxSgd,
    FedCurv,
    FedAvgEwc,
    FedProxEwc,
    ElasticTransfer,
}

impl Family {
    pub const ALL: [Family; 12] = [
        Family::Centralized,
        Family::Stl,
        Family::LocalSgd,
        Family::LocalL2T,
        Family::LocalEwc,
        Family::LocalOnlineEwc,
        Family::FedAvgSgd,
        Family::FedProxSgd,
        Family::FedCurv,
        Family::FedAvgEwc,
        Family::FedProxEwc,
        Family::ElasticTransfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Centralized => "centralized",
            Family::Stl => "stl",
            Family::LocalSgd => "local-sgd",
            Family::LocalL2T => "local-l2t",
            Family::LocalEwc => "local-ewc",
            Family::LocalOnlineEwc => "local-online-ewc",
            Family::FedAvgSgd => "fedavg-sgd",
            Family::FedProxSgd => "fedprox-sgd",
            Family::FedCurv => "fedcurv",
            Family::FedAvgEwc => "fedavg-ewc",
            Family::FedProxEwc => "fedprox-ewc",
            Family::ElasticTransfer => "elastic-transfer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| FclError::config(format!("unknown algorithm family '{s}'")))
    }

    /// Clients keep private models; no aggregation or broadcasts.
    pub fn is_local(self) -> bool {
        matches!(
            self,
            Family::Stl | Family::LocalSgd | Family::LocalL2T | Family::LocalEwc | Family::LocalOnlineEwc
        )
    }

    pub fn is_federated(self) -> bool {
        !self.is_local() && self != Family::Centralized
    }

    /// Peers exchange rough estimates every round.
    pub fn uses_rough(self) -> bool {
        matches!(self, Family::FedCurv | Family::ElasticTransfer)
    }

    /// Peers exchange refined estimates at task boundaries.
    pub fn uses_refined_exchange(self) -> bool {
        self == Family::ElasticTransfer
    }

    /// Which of the three weights the family reads: own-history,
    /// peer-refined, current-round cross-client (rough or proximal).
    fn relevant(self) -> [bool; 3] {
        match self {
            Family::LocalL2T | Family::LocalEwc | Family::LocalOnlineEwc | Family::FedAvgEwc => [true, false, false],
            Family::FedProxSgd | Family::FedCurv => [false, false, true],
            Family::FedProxEwc => [true, false, true],
            Family::ElasticTransfer => [true, true, true],
            Family::Centralized | Family::Stl | Family::LocalSgd | Family::FedAvgSgd => [false, false, false],
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The three penalty weights.
///
/// `lambda1` weighs the client's own history (EWC/L2T/online-EWC anchors),
/// `lambda2` the refined estimates of peers, `lambda3` the current-round
/// cross-client term (FedCurv rough anchors or the FedProx proximal anchor).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Lambdas {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Lambdas {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self { lambda1, lambda2, lambda3 }
    }

    fn as_array(self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }

    pub fn transfer_weights(self) -> TransferWeights {
        TransferWeights {
            own: self.lambda1,
            peer_refined: self.lambda2,
            peer_rough: self.lambda3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Plain mean over participating clients.
    Uniform,
    /// Mean weighted by each participant's training-set size.
    SizeWeighted,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Uniform => "uniform",
            Aggregation::SizeWeighted => "size-weighted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Aggregation::Uniform),
            "size-weighted" => Ok(Aggregation::SizeWeighted),
            other => Err(FclError::config(format!("unknown aggregation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSpec {
    pub family: Family,
    pub lambdas: Lambdas,
    pub lr: f64,
    pub batch_size: usize,
    pub aggregation: Aggregation,
}

impl AlgorithmSpec {
    /// Defaults: learning rate 5e-3, batch size 32, uniform aggregation.
    pub fn new(family: Family, lambdas: Lambdas) -> Self {
        Self {
            family,
            lambdas,
            lr: 5e-3,
            batch_size: 32,
            aggregation: Aggregation::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let relevant = self.family.relevant();
        for (k, (value, used)) in self.lambdas.as_array().into_iter().zip(relevant).enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(FclError::config(format!("lambda{} must be finite and >= 0, got {value}", k + 1)));
            }
            if !used && value != 0.0 {
                return Err(FclError::config(format!(
                    "lambda{} is not used by {} and must be 0, got {value}",
                    k + 1,
                    self.family
                )));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(FclError::config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(FclError::config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dropout {
    None,
    /// Exactly one uniformly chosen client sits out each round.
    DropOneUniform,
}

impl Dropout {
    pub fn name(self) -> &'static str {
        match self {
            Dropout::None => "none",
            Dropout::DropOneUniform => "drop-one",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Dropout::None),
            "drop-one" => Ok(Dropout::DropOneUniform),
            other => Err(FclError::config(format!("unknown dropout policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundSchedule {
    pub rounds_per_task: usize,
    pub epochs_per_round: usize,
    pub dropout: Dropout,
    pub seed: u64,
}

impl RoundSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.rounds_per_task == 0 || self.epochs_per_round == 0 {
            return Err(FclError::config("rounds and epochs per round must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for f in Family::ALL {
            assert_eq!(Family::parse(f.name()).unwrap(), f);
        }
        assert!(Family::parse("fedweit").is_err());
    }

    #[test]
    fn irrelevant_lambdas_rejected() {
        assert!(AlgorithmSpec::new(Family::FedAvgSgd, Lambdas::new(0.1, 0.0, 0.0)).validate().is_err());
        assert!(AlgorithmSpec::new(Family::LocalEwc, Lambdas::new(0.1, 0.0, 0.0)).validate().is_ok());
        assert!(AlgorithmSpec::new(Family::LocalEwc, Lambdas::new(0.1, 0.0, 0.2)).validate().is_err());
        assert!(AlgorithmSpec::new(Family::ElasticTransfer, Lambdas::new(0.1, 0.2, 0.3)).validate().is_ok());
        assert!(AlgorithmSpec::new(Family::ElasticTransfer, Lambdas::new(-0.1, 0.0, 0.0)).validate().is_err());
        assert!(AlgorithmSpec::new(Family::FedProxEwc, Lambdas::new(0.1, 0.0, 0.01)).validate().is_ok());
        let mut spec = AlgorithmSpec::new(Family::FedAvgSgd, Lambdas::default());
        spec.lr = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn family_classes() {
        assert!(Family::Stl.is_local());
        assert!(Family::FedCurv.is_federated());
        assert!(!Family::Centralized.is_federated() && !Family::Centralized.is_local());
        assert!(Family::ElasticTransfer.uses_rough() && Family::ElasticTransfer.uses_refined_exchange());
    }
}
