//! Quadratic anchor penalties.
//!
//! Every regularizer used by the algorithm family is a sum of terms
//! `(lambda / 2) * sum_k fisher[k] * (theta[k] - theta_ref[k])^2`.
//! EWC, online EWC, L2-transfer, FedProx, FedCurv and elastic transfer differ
//! only in which anchors they collect and which weight each anchor gets.

use crate::error::{FclError, Result};
use crate::numeric::{FisherDiagonal, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnchorKind {
    /// Refined estimate of this client's own earlier tasks.
    OwnPreviousRefined,
    /// Refined estimate broadcast by a peer at a task boundary.
    OtherPreviousRefined,
    /// Rough estimate broadcast by a peer during the current task.
    OtherCurrentRough,
    /// Isotropic pull toward the latest aggregate.
    Proximal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    theta_ref: ParameterVector,
    fisher: FisherDiagonal,
    lambda: f64,
    kind: AnchorKind,
}

impl Anchor {
    pub fn new(theta_ref: ParameterVector, fisher: FisherDiagonal, lambda: f64, kind: AnchorKind) -> Result<Self> {
        if theta_ref.len() != fisher.len() {
            return Err(FclError::LengthMismatch {
                expected: theta_ref.len(),
                actual: fisher.len(),
            });
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(FclError::config(format!("anchor weight must be finite and >= 0, got {lambda}")));
        }
        Ok(Self {
            theta_ref,
            fisher,
            lambda,
            kind,
        })
    }

    /// Unit-curvature anchor (L2-transfer, FedProx).
    pub fn isotropic(theta_ref: ParameterVector, lambda: f64, kind: AnchorKind) -> Result<Self> {
        let fisher = FisherDiagonal::ones(theta_ref.len());
        Self::new(theta_ref, fisher, lambda, kind)
    }

    pub fn theta_ref(&self) -> &ParameterVector {
        &self.theta_ref
    }

    pub fn fisher(&self) -> &FisherDiagonal {
        &self.fisher
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kind(&self) -> AnchorKind {
        self.kind
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let s: f64 = theta
            .iter()
            .zip(self.theta_ref.as_slice())
            .zip(self.fisher.as_slice())
            .map(|((t, r), f)| f * (t - r) * (t - r))
            .sum();
        0.5 * self.lambda * s
    }

    fn add_grad(&self, theta: &[f64], out: &mut [f64]) {
        for ((o, (t, r)), f) in out
            .iter_mut()
            .zip(theta.iter().zip(self.theta_ref.as_slice()))
            .zip(self.fisher.as_slice())
        {
            *o += self.lambda * f * (t - r);
        }
    }
}

/// Ordered collection of anchors sharing one parameter length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PenaltySet {
    anchors: Vec<Anchor>,
}

impl PenaltySet {
    pub fn new(anchors: Vec<Anchor>) -> Result<Self> {
        if let Some(first) = anchors.first() {
            let len = first.theta_ref.len();
            if let Some(bad) = anchors.iter().find(|a| a.theta_ref.len() != len) {
                return Err(FclError::LengthMismatch {
                    expected: len,
                    actual: bad.theta_ref.len(),
                });
            }
        }
        Ok(Self { anchors })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn count(&self, kind: AnchorKind) -> usize {
        self.anchors.iter().filter(|a| a.kind == kind).count()
    }

    /// Reals held by the anchors (reference plus curvature per anchor).
    pub fn stored_reals(&self) -> usize {
        self.anchors.iter().map(|a| a.theta_ref.len() + a.fisher.len()).sum()
    }

    pub fn push(&mut self, anchor: Anchor) -> Result<()> {
        if let Some(first) = self.anchors.first() {
            if first.theta_ref.len() != anchor.theta_ref.len() {
                return Err(FclError::LengthMismatch {
                    expected: first.theta_ref.len(),
                    actual: anchor.theta_ref.len(),
                });
            }
        }
        self.anchors.push(anchor);
        Ok(())
    }

    pub fn extend(mut self, other: PenaltySet) -> Result<Self> {
        for a in other.anchors {
            self.push(a)?;
        }
        Ok(self)
    }

    fn check(&self, len: usize) -> Result<()> {
        match self.anchors.first() {
            Some(a) if a.theta_ref.len() != len => Err(FclError::LengthMismatch {
                expected: a.theta_ref.len(),
                actual: len,
            }),
            _ => Ok(()),
        }
    }

    /// Anchors with zero weight are skipped so that a zero-weighted set is
    /// bitwise equivalent to no penalty at all.
    pub(crate) fn value_slice(&self, theta: &[f64]) -> f64 {
        self.anchors
            .iter()
            .filter(|a| a.lambda != 0.0)
            .fold(0.0, |acc, a| acc + a.value(theta))
    }

    pub(crate) fn add_grad_slice(&self, theta: &[f64], out: &mut [f64]) {
        for a in self.anchors.iter().filter(|a| a.lambda != 0.0) {
            a.add_grad(theta, out);
        }
    }
}

pub fn penalty_value(theta: &ParameterVector, ps: &PenaltySet) -> Result<f64> {
    ps.check(theta.len())?;
    Ok(ps.value_slice(theta.as_slice()))
}

pub fn penalty_grad(theta: &ParameterVector, ps: &PenaltySet) -> Result<ParameterVector> {
    ps.check(theta.len())?;
    let mut out = vec![0.0; theta.len()];
    ps.add_grad_slice(theta.as_slice(), &mut out);
    ParameterVector::new(out)
}

/// A converged (reference, curvature) pair from a completed task.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub theta: ParameterVector,
    pub fisher: FisherDiagonal,
}

impl Estimate {
    pub fn new(theta: ParameterVector, fisher: FisherDiagonal) -> Result<Self> {
        if theta.len() != fisher.len() {
            return Err(FclError::LengthMismatch {
                expected: theta.len(),
                actual: fisher.len(),
            });
        }
        Ok(Self { theta, fisher })
    }
}

fn anchors_from<'a>(
    estimates: impl IntoIterator<Item = &'a Estimate>,
    lambda: f64,
    kind: AnchorKind,
) -> Result<Vec<Anchor>> {
    estimates
        .into_iter()
        .map(|e| Anchor::new(e.theta.clone(), e.fisher.clone(), lambda, kind))
        .collect()
}

/// One anchor per completed task of this client.
pub fn make_ewc_anchors(history: &[Estimate], lambda: f64) -> Result<PenaltySet> {
    PenaltySet::new(anchors_from(history, lambda, AnchorKind::OwnPreviousRefined)?)
}

/// One anchor per peer rough estimate from the previous round.
pub fn make_fedcurv_anchors(peer_rough: &[Estimate], lambda: f64) -> Result<PenaltySet> {
    PenaltySet::new(anchors_from(peer_rough, lambda, AnchorKind::OtherCurrentRough)?)
}

/// The three weights of the elastic transfer objective.
///
/// `own` weighs this client's refined estimate, `peer_refined` the refined
/// estimates of other clients, `peer_rough` the rough estimates other clients
/// broadcast during the current task. Setting `peer_refined = own` gives the
/// two-weight form where all refined estimates share one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransferWeights {
    pub own: f64,
    pub peer_refined: f64,
    pub peer_rough: f64,
}

pub fn make_elastic_transfer_anchors(
    own_refined: Option<&Estimate>,
    peers_refined: &[Estimate],
    peers_rough: &[Estimate],
    weights: TransferWeights,
) -> Result<PenaltySet> {
    let mut anchors = anchors_from(own_refined, weights.own, AnchorKind::OwnPreviousRefined)?;
    anchors.extend(anchors_from(peers_refined, weights.peer_refined, AnchorKind::OtherPreviousRefined)?);
    anchors.extend(anchors_from(peers_rough, weights.peer_rough, AnchorKind::OtherCurrentRough)?);
    PenaltySet::new(anchors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    fn fd(v: &[f64]) -> FisherDiagonal {
        FisherDiagonal::new(v.to_vec()).unwrap()
    }

    fn est(t: &[f64], f: &[f64]) -> Estimate {
        Estimate::new(pv(t), fd(f)).unwrap()
    }

    #[test]
    fn hand_quadratic_form() {
        let ps = PenaltySet::new(vec![Anchor::new(pv(&[0.0, 0.0]), fd(&[1.0, 4.0]), 2.0, AnchorKind::OwnPreviousRefined).unwrap()]).unwrap();
        let theta = pv(&[1.0, 2.0]);
        assert_eq!(penalty_value(&theta, &ps).unwrap(), 17.0);
        assert_eq!(penalty_grad(&theta, &ps).unwrap().as_slice(), &[2.0, 16.0]);
    }

    #[test]
    fn zero_at_reference_and_for_zero_weights() {
        let a = est(&[0.3, -0.2], &[2.0, 5.0]);
        let ps = make_ewc_anchors(&[a.clone(), a.clone()], 1.5).unwrap();
        assert_eq!(penalty_value(&a.theta, &ps).unwrap(), 0.0);
        assert!(penalty_grad(&a.theta, &ps).unwrap().as_slice().iter().all(|&g| g == 0.0));

        let zero = make_ewc_anchors(&[a.clone()], 0.0).unwrap();
        assert_eq!(penalty_value(&pv(&[9.0, 9.0]), &zero).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let ps = make_ewc_anchors(&[est(&[0.0, 0.0], &[1.0, 1.0])], 1.0).unwrap();
        assert!(penalty_value(&pv(&[1.0]), &ps).is_err());
        assert!(penalty_grad(&pv(&[1.0, 2.0, 3.0]), &ps).is_err());
        assert!(Anchor::new(pv(&[0.0]), fd(&[1.0, 1.0]), 1.0, AnchorKind::Proximal).is_err());
        assert!(Anchor::new(pv(&[0.0]), fd(&[1.0]), -1.0, AnchorKind::Proximal).is_err());
        assert!(PenaltySet::new(vec![
            Anchor::isotropic(pv(&[0.0]), 1.0, AnchorKind::Proximal).unwrap(),
            Anchor::isotropic(pv(&[0.0, 1.0]), 1.0, AnchorKind::Proximal).unwrap(),
        ])
        .is_err());
    }

    #[test]
    fn ewc_anchor_counts() {
        assert!(make_ewc_anchors(&[], 1.0).unwrap().is_empty());
        let p = 7;
        let history: Vec<Estimate> = (0..4).map(|_| est(&vec![0.0; p], &vec![1.0; p])).collect();
        let ps = make_ewc_anchors(&history, 1.0).unwrap();
        assert_eq!(ps.len(), 4);
        assert_eq!(ps.stored_reals(), 8 * p);
    }

    #[test]
    fn unit_fisher_ewc_is_l2_transfer() {
        let refs = [[0.5, -1.0], [2.0, 0.25]];
        let history: Vec<Estimate> = refs.iter().map(|r| est(r, &[1.0, 1.0])).collect();
        let ewc = make_ewc_anchors(&history, 0.3).unwrap();
        let theta = [1.5, -0.5];
        // independent L2 evaluation
        let l2: f64 = refs
            .iter()
            .map(|r| 0.15 * ((theta[0] - r[0]).powi(2) + (theta[1] - r[1]).powi(2)))
            .sum();
        assert!((penalty_value(&pv(&theta), &ewc).unwrap() - l2).abs() < 1e-15);
    }

    #[test]
    fn fedcurv_anchor_counts() {
        assert!(make_fedcurv_anchors(&[], 1.0).unwrap().is_empty());
        let peers = [est(&[0.0], &[1.0]), est(&[1.0], &[2.0])];
        let ps = make_fedcurv_anchors(&peers, 1.0).unwrap();
        assert_eq!(ps.count(AnchorKind::OtherCurrentRough), 2);
    }

    #[test]
    fn unit_rough_anchor_is_fedprox() {
        let global = pv(&[0.1, 0.2, 0.3]);
        let mu = 0.01;
        let curv = make_fedcurv_anchors(&[Estimate::new(global.clone(), FisherDiagonal::ones(3)).unwrap()], mu).unwrap();
        let prox = PenaltySet::new(vec![Anchor::isotropic(global, mu, AnchorKind::Proximal).unwrap()]).unwrap();
        let theta = pv(&[-0.4, 0.9, 1.7]);
        assert_eq!(
            penalty_value(&theta, &curv).unwrap().to_bits(),
            penalty_value(&theta, &prox).unwrap().to_bits()
        );
        assert_eq!(penalty_grad(&theta, &curv).unwrap(), penalty_grad(&theta, &prox).unwrap());
    }

    #[test]
    fn elastic_transfer_structure() {
        let e = || est(&[0.0, 1.0], &[1.0, 1.0]);
        let zero = make_elastic_transfer_anchors(Some(&e()), &[e(), e()], &[e(), e()], TransferWeights::default()).unwrap();
        assert_eq!(penalty_value(&pv(&[5.0, -5.0]), &zero).unwrap(), 0.0);

        let w = TransferWeights { own: 0.5, peer_refined: 0.5, peer_rough: 0.05 };
        let first_task = make_elastic_transfer_anchors(None, &[], &[e(), e()], w).unwrap();
        assert_eq!(first_task.len(), 2);
        assert_eq!(first_task.count(AnchorKind::OtherCurrentRough), 2);

        let later = make_elastic_transfer_anchors(Some(&e()), &[e(), e()], &[e(), e()], w).unwrap();
        assert_eq!(later.len(), 5);
        assert_eq!(later.count(AnchorKind::OwnPreviousRefined), 1);
        assert_eq!(later.count(AnchorKind::OtherPreviousRefined), 2);
        assert_eq!(later.count(AnchorKind::OtherCurrentRough), 2);
        assert!(later.anchors().iter().all(|a| match a.kind() {
            AnchorKind::OwnPreviousRefined | AnchorKind::OtherPreviousRefined => a.lambda() == 0.5,
            _ => a.lambda() == 0.05,
        }));
    }
}
