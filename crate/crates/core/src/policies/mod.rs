//! Primary and safety policies, the deviation metric and driving strategies.

mod ledger;
mod primary;
mod safety;
mod strategy;

pub use ledger::{QueryCounts, QueryKind, QueryLedger};
pub use primary::{
    primary_act, primary_spec, primary_target, slot, supervised_loss_spec, PrimaryOutput, PrimaryPolicy, AUX_WEIGHT,
    PRIMARY_HIDDEN,
};
pub use safety::{
    calibrate_tau, deviation, optimal_safety_label, safety_input, safety_loss, safety_loss_spec, safety_spec,
    safety_target, Calibration, SafetyPolicy, SAFETY_HIDDEN, SAFE_CLASS,
};
pub use strategy::{mixture_act, safe_strategy_act, PolicyBundle, Primary, Safety, StepOutcome, Strategy};
