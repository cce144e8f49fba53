use rand::Rng;

use crate::perception::Observation;
use crate::reference::{query_reference, reference_action};
use crate::sim::{Action, CarId, ControllerTag, WorldState};
use crate::{Error, Result};

use super::primary::{PrimaryOutput, PrimaryPolicy};
use super::safety::{deviation, optimal_safety_label, SafetyPolicy};
use super::{QueryKind, QueryLedger};

/// The driver under evaluation or collection.
#[derive(Clone, Debug, PartialEq)]
pub enum Primary {
    /// The reference itself acting as the primary (a perfect primary for consistency checks).
    Reference,
    Learned(PrimaryPolicy),
}

/// The gate deciding whether the primary may drive.
#[derive(Clone, Debug, PartialEq)]
pub enum Safety {
    Learned(SafetyPolicy),
    /// Exact labels from the reference at threshold τ; each call is a metric query.
    Oracle { tau: f64 },
    AlwaysSafe,
    AlwaysUnsafe,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyBundle {
    pub primary: Primary,
    pub safety: Option<Safety>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    /// The reference drives; no queries are counted for driving.
    Reference,
    /// The primary alone.
    Naive,
    /// Per-step Bernoulli(β) choice of the reference (a takeover query) over the primary.
    Mixture { beta: f64 },
    /// The primary drives unless the safety gate says unsafe, then the reference takes over.
    Safe,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Reference => "reference",
            Strategy::Naive => "naive",
            Strategy::Mixture { .. } => "mixture",
            Strategy::Safe => "safe",
        }
    }
}

/// What happened at one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub action: Action,
    pub tag: ControllerTag,
    /// The primary's proposal, when it was computed.
    pub primary_action: Option<Action>,
    /// p(safe) from a learned safety policy, when consulted.
    pub p_safe: Option<f64>,
}

impl PolicyBundle {
    pub fn naive(primary: PrimaryPolicy) -> PolicyBundle {
        PolicyBundle { primary: Primary::Learned(primary), safety: None }
    }

    pub fn safe(primary: PrimaryPolicy, safety: SafetyPolicy) -> PolicyBundle {
        PolicyBundle { primary: Primary::Learned(primary), safety: Some(Safety::Learned(safety)) }
    }

    /// Checks that the bundle can drive under `strategy`.
    pub fn check(&self, strategy: Strategy) -> Result<()> {
        if let Strategy::Mixture { beta } = strategy {
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::InvalidArgument(format!("mixture beta {beta} not in [0, 1]")));
            }
        }
        match (&self.safety, strategy) {
            (None, Strategy::Safe) => Err(Error::MissingSafetyPolicy),
            (Some(Safety::Learned(_)), _) if self.primary == Primary::Reference => {
                Err(Error::InvalidArgument("a learned safety policy needs a learned primary".into()))
            }
            _ => Ok(()),
        }
    }

    /// Whether driving under `strategy` needs the observation.
    pub fn needs_observation(&self, strategy: Strategy) -> bool {
        strategy != Strategy::Reference && matches!(self.primary, Primary::Learned(_))
    }

    fn primary_output(&self, state: &WorldState, obs: Option<&Observation>) -> (Action, Option<PrimaryOutput>) {
        match &self.primary {
            Primary::Reference => (reference_action(state, CarId::Ego), None),
            Primary::Learned(p) => {
                let out = match obs {
                    Some(o) => p.act(o),
                    None => p.act(&crate::perception::observe(state)),
                };
                (out.action, Some(out))
            }
        }
    }

    /// One control step. `obs` may be supplied to avoid recomputing it.
    pub fn act<R: Rng>(
        &self,
        strategy: Strategy,
        state: &WorldState,
        obs: Option<&Observation>,
        rng: &mut R,
        ledger: &mut QueryLedger,
    ) -> Result<StepOutcome> {
        self.check(strategy)?;
        let takeover = |ledger: &mut QueryLedger, primary_action, p_safe| StepOutcome {
            action: query_reference(state, ledger, QueryKind::Takeover),
            tag: ControllerTag::Reference,
            primary_action,
            p_safe,
        };
        match strategy {
            Strategy::Reference => Ok(StepOutcome {
                action: reference_action(state, CarId::Ego),
                tag: ControllerTag::Reference,
                primary_action: None,
                p_safe: None,
            }),
            Strategy::Naive => {
                let (a, _) = self.primary_output(state, obs);
                Ok(StepOutcome { action: a, tag: ControllerTag::Primary, primary_action: Some(a), p_safe: None })
            }
            Strategy::Mixture { beta } => {
                // always draw, so the random stream does not depend on β
                let u: f64 = rng.random();
                if u < beta {
                    Ok(takeover(ledger, None, None))
                } else {
                    let (a, _) = self.primary_output(state, obs);
                    Ok(StepOutcome { action: a, tag: ControllerTag::Primary, primary_action: Some(a), p_safe: None })
                }
            }
            Strategy::Safe => {
                let (a, out) = self.primary_output(state, obs);
                let (safe, p_safe) = match self.safety.as_ref().expect("checked above") {
                    Safety::Learned(s) => {
                        let features = &out.as_ref().expect("learned safety implies learned primary").features;
                        let p = s.p_safe(features);
                        (p >= 0.5, Some(p))
                    }
                    Safety::Oracle { tau } => {
                        let r = query_reference(state, ledger, QueryKind::Metric);
                        (optimal_safety_label(deviation(a, r), *tau) == 1, None)
                    }
                    Safety::AlwaysSafe => (true, None),
                    Safety::AlwaysUnsafe => (false, None),
                };
                if safe {
                    Ok(StepOutcome { action: a, tag: ControllerTag::Primary, primary_action: Some(a), p_safe })
                } else {
                    Ok(takeover(ledger, Some(a), p_safe))
                }
            }
        }
    }
}

/// Safe-strategy step with a learned primary and safety policy.
pub fn safe_strategy_act(
    primary: &PrimaryPolicy,
    safety: &SafetyPolicy,
    obs: &Observation,
    state: &WorldState,
    ledger: &mut QueryLedger,
) -> (Action, ControllerTag) {
    let out = primary.act(obs);
    if safety.classify(&out.features) == 1 {
        (out.action, ControllerTag::Primary)
    } else {
        (query_reference(state, ledger, QueryKind::Takeover), ControllerTag::Reference)
    }
}

/// Mixture step: the reference with probability β (counted as a takeover), else the primary.
pub fn mixture_act<R: Rng>(
    primary: &PrimaryPolicy,
    beta: f64,
    obs: &Observation,
    state: &WorldState,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> (Action, ControllerTag) {
    let u: f64 = rng.random();
    if u < beta {
        (query_reference(state, ledger, QueryKind::Takeover), ControllerTag::Reference)
    } else {
        (primary.act(obs).action, ControllerTag::Primary)
    }
}
