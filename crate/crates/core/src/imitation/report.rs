use std::fmt::Write as _;

use crate::policies::{Calibration, QueryLedger};

use super::Regime;

/// Per-iteration statistics of a run. Iteration 0 is the bootstrap.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationRecord {
    pub iteration: u32,
    /// States recorded during this iteration's collection.
    pub collected: usize,
    /// States labeled (kept by down-selection or subset selection).
    pub selected: usize,
    pub selection_fraction: f64,
    /// Aggregated training and validation sizes after this iteration.
    pub train_size: usize,
    pub valid_size: usize,
    /// Label queries issued during this iteration (bootstrap sets included at iteration 0).
    pub label_queries: u64,
    pub takeover_queries: u64,
    pub collection_steps: u64,
    /// Share of collection timesteps driven by the reference.
    pub takeover_fraction: f64,
    pub primary_epochs: usize,
    pub primary_best_valid: f64,
    pub primary_lr_drops: usize,
    /// Squared steering error on the aggregated validation part.
    pub steer_mse_valid: f64,
    /// Squared steering plus brake-output error on the aggregated validation part.
    pub control_mse_valid: f64,
    pub tau: Option<f64>,
    /// Share of safe labels in the safety training set.
    pub safe_fraction: Option<f64>,
    /// Safety-policy accuracy on its validation set.
    pub safety_accuracy: Option<f64>,
    pub safety_epochs: Option<usize>,
}

pub const REPORT_COLUMNS: [&str; 19] = [
    "iteration",
    "collected",
    "selected",
    "selection_fraction",
    "train_size",
    "valid_size",
    "label_queries",
    "takeover_queries",
    "cumulative_label_queries",
    "collection_steps",
    "takeover_fraction",
    "primary_epochs",
    "primary_best_valid",
    "primary_lr_drops",
    "steer_mse_valid",
    "control_mse_valid",
    "tau",
    "safe_fraction",
    "safety_accuracy",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub regime: Regime,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub ledger: QueryLedger,
    /// τ and the safe fraction it achieved on the initial training set (SafeDAgger).
    pub calibration: Option<Calibration>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl RunReport {
    /// One row per iteration; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut s = REPORT_COLUMNS.join(",");
        s.push('\n');
        let mut cumulative = 0;
        for r in &self.records {
            cumulative += r.label_queries;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.collected,
                r.selected,
                r.selection_fraction,
                r.train_size,
                r.valid_size,
                r.label_queries,
                r.takeover_queries,
                cumulative,
                r.collection_steps,
                r.takeover_fraction,
                r.primary_epochs,
                r.primary_best_valid,
                r.primary_lr_drops,
                r.steer_mse_valid,
                r.control_mse_valid,
                opt(r.tau),
                opt(r.safe_fraction),
                opt(r.safety_accuracy),
            );
        }
        s
    }

    /// Label queries after the bootstrap (iterations 1..M).
    pub fn iteration_label_queries(&self) -> u64 {
        self.records.iter().filter(|r| r.iteration > 0).map(|r| r.label_queries).sum()
    }

    pub fn total_label_queries(&self) -> u64 {
        self.records.iter().map(|r| r.label_queries).sum()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let totals = self.ledger.totals();
        let _ = writeln!(s, "regime: {}", self.regime.as_str());
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "iterations: {}", self.records.len().saturating_sub(1));
        if let Some(c) = self.calibration {
            let _ = writeln!(s, "tau: {} (safe fraction on the initial training set {:.4})", c.tau, c.safe_fraction);
        }
        let _ = writeln!(s, "label queries: {} (after bootstrap: {})", totals.label, self.iteration_label_queries());
        let _ = writeln!(s, "takeover queries: {}", totals.takeover);
        for r in &self.records {
            let _ = write!(
                s,
                "iteration {}: labeled {}/{} (selection {:.3}), |D| = {}+{}, takeover fraction {:.4}, valid steer mse {:.5}",
                r.iteration,
                r.selected,
                r.collected,
                r.selection_fraction,
                r.train_size,
                r.valid_size,
                r.takeover_fraction,
                r.steer_mse_valid,
            );
            if let Some(a) = r.safety_accuracy {
                let _ = write!(s, ", safety accuracy {a:.3}");
            }
            s.push('\n');
        }
        s
    }
}
