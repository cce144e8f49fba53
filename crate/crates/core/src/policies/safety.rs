use crate::nn::{Head, HeadKind, LossKind, LossSpec, LossTerm, Model, NetSpec, Network};
use crate::sim::Action;
use crate::{Error, Result};

use super::primary::PRIMARY_HIDDEN;

pub const SAFETY_HIDDEN: [usize; 2] = [32, 32];
/// Index of the "safe" class in the safety network's softmax output.
pub const SAFE_CLASS: usize = 1;
const PROBABILITY_FLOOR: f64 = 1e-12;

/// Safety network over the primary's last shared layer: 64 → 32 → 32 → softmax(2).
pub fn safety_spec(seed: u64) -> NetSpec {
    NetSpec {
        input: PRIMARY_HIDDEN[PRIMARY_HIDDEN.len() - 1],
        hidden: SAFETY_HIDDEN.to_vec(),
        heads: vec![Head::new(HeadKind::Softmax, 2)],
        seed,
    }
}

pub fn safety_loss_spec() -> LossSpec {
    LossSpec { terms: vec![LossTerm { head: 0, kind: LossKind::CrossEntropy, weight: 1.0 }] }
}

/// Safety-network input for a feature vector. Features are stored and fed in
/// single precision so training and inference see identical inputs.
pub fn safety_input(features: &[f64]) -> Vec<f32> {
    features.iter().map(|&f| f as f32).collect()
}

/// One-hot training target for an optimal safety label.
pub fn safety_target(label: u8) -> [f64; 2] {
    if label == 1 {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    }
}

/// Squared steering difference; the brake is ignored.
pub fn deviation(primary: Action, reference: Action) -> f64 {
    let d = primary.steer() - reference.steer();
    d * d
}

/// 0 (unsafe) when the deviation exceeds τ, 1 otherwise.
pub fn optimal_safety_label(epsilon: f64, tau: f64) -> u8 {
    u8::from(epsilon <= tau)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SafetyPolicy {
    pub net: Network,
    pub tau: f64,
}

impl SafetyPolicy {
    pub fn new(net: Network, tau: f64) -> Result<SafetyPolicy> {
        if net.spec != safety_spec(net.spec.seed) {
            return Err(Error::NetSpec(format!("not a safety network:\n{}", net.spec)));
        }
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        Ok(SafetyPolicy { net, tau })
    }

    /// The network with τ and the role stored as metadata.
    pub fn to_model(&self) -> Model {
        let meta = [("role".to_string(), "safety".to_string()), ("tau".to_string(), self.tau.to_string())].into();
        Model { net: self.net.clone(), meta }
    }

    pub fn from_model(model: Model) -> Result<SafetyPolicy> {
        if let Some(role) = model.meta.get("role").filter(|r| *r != "safety") {
            return Err(Error::NetSpec(format!("expected a safety model, found role {role:?}")));
        }
        let tau = model
            .meta
            .get("tau")
            .ok_or_else(|| Error::Format("safety model without a tau entry".into()))?
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("bad tau: {e}")))?;
        SafetyPolicy::new(model.net, tau)
    }

    /// (p(unsafe), p(safe)) for the primary's features.
    pub fn probabilities(&self, features: &[f64]) -> [f64; 2] {
        let y = self.net.forward(&safety_input(features)).expect("feature width matches the safety spec").outputs;
        [y[0], y[1]]
    }

    pub fn p_safe(&self, features: &[f64]) -> f64 {
        self.probabilities(features)[SAFE_CLASS]
    }

    /// 1 (safe) iff p(safe) ≥ 0.5.
    pub fn classify(&self, features: &[f64]) -> u8 {
        u8::from(self.p_safe(features) >= 0.5)
    }
}

/// Mean Bernoulli negative log-likelihood of `labels` given the features.
pub fn safety_loss(safety: &SafetyPolicy, batch: &[(Vec<f64>, u8)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("safety batch"));
    }
    let total: f64 = batch
        .iter()
        .map(|(f, label)| {
            let p = safety.probabilities(f)[usize::from(*label)];
            -p.max(PROBABILITY_FLOOR).ln()
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// A calibrated threshold and the safe fraction it achieves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub tau: f64,
    pub safe_fraction: f64,
}

/// Smallest observed deviation `v` with `fraction(ε ≤ v) ≥ target`.
pub fn calibrate_tau(deviations: &[f64], target_safe_fraction: f64) -> Result<Calibration> {
    if deviations.is_empty() {
        return Err(Error::Empty("deviations"));
    }
    if !(target_safe_fraction > 0.0 && target_safe_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("target safe fraction {target_safe_fraction} not in (0, 1)")));
    }
    if deviations.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::InvalidArgument("deviations must be finite and non-negative".into()));
    }
    let mut sorted = deviations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // smallest count k with k / n ≥ target; the epsilon absorbs rounding in target * n
    let k = ((target_safe_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let tau = sorted[k - 1].max(f64::MIN_POSITIVE);
    let safe = sorted.partition_point(|&d| d <= tau);
    Ok(Calibration { tau, safe_fraction: safe as f64 / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviation_ignores_brake() {
        assert_eq!(deviation(Action::new(0.3, true), Action::new(0.3, false)), 0.0);
        assert!((deviation(Action::new(0.05, false), Action::new(0.0, false)) - 0.0025).abs() < 1e-18);
    }

    #[test]
    fn label_boundary() {
        assert_eq!(optimal_safety_label(0.003, 0.0025), 0);
        assert_eq!(optimal_safety_label(0.0, 0.0025), 1);
        assert_eq!(optimal_safety_label(0.0025, 0.0025), 1);
    }

    #[test]
    fn calibration_examples() {
        let mut d = vec![0.001; 8];
        d.extend([0.01, 0.01]);
        let c = calibrate_tau(&d, 0.8).unwrap();
        assert_eq!(c.tau, 0.001);
        assert_eq!(c.safe_fraction, 0.8);
        let c = calibrate_tau(&[0.2; 5], 0.3).unwrap();
        assert_eq!((c.tau, c.safe_fraction), (0.2, 1.0));
        assert!(calibrate_tau(&[], 0.5).is_err());
        assert!(calibrate_tau(&[0.1], 1.0).is_err());
    }

    #[test]
    fn uniform_predictor_loss_is_ln2() {
        let net = Network::zeros(safety_spec(0)).unwrap();
        let s = SafetyPolicy::new(net, 0.0025).unwrap();
        let batch = vec![(vec![0.5; 64], 0), (vec![0.1; 64], 1), (vec![0.0; 64], 1)];
        assert!((safety_loss(&s, &batch).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(s.classify(&[0.0; 64]), 1);
    }

    #[test]
    fn confident_prediction_loss() {
        // bias-only network: p(safe) = 0.9 everywhere
        let mut net = Network::zeros(safety_spec(0)).unwrap();
        let n = net.params.len();
        net.params[n - 1] = (0.9f64 / 0.1).ln();
        let s = SafetyPolicy::new(net, 0.0025).unwrap();
        assert!((s.p_safe(&[0.0; 64]) - 0.9).abs() < 1e-12);
        let loss = safety_loss(&s, &[(vec![0.0; 64], 1)]).unwrap();
        assert!((loss - (-(0.9f64).ln())).abs() < 1e-12);
        assert!((loss - 0.10536).abs() < 1e-5);
    }
}
