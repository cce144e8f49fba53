use std::fmt::Write as _;

use crate::imitation::RunReport;

use super::plot::{line_plot_svg, Series};
use super::EvalReport;

/// An evaluation of one iteration's policies under one strategy and traffic setting.
#[derive(Clone, Debug)]
pub struct IterationEval {
    pub iteration: u32,
    pub report: EvalReport,
}

pub const CURVE_COLUMNS: [&str; 9] = [
    "iteration",
    "strategy",
    "traffic",
    "avg_laps",
    "damage_per_lap",
    "steering_mse",
    "takeover_fraction",
    "label_queries",
    "cumulative_label_queries",
];

/// Metric-versus-iteration curves: one CSV and one SVG per metric.
#[derive(Clone, Debug, PartialEq)]
pub struct RunCurves {
    pub csv: String,
    /// (file stem, SVG document)
    pub plots: Vec<(String, String)>,
}

fn condition(e: &EvalReport) -> String {
    let traffic = if e.traffic == 0 { "no traffic".to_string() } else { format!("{} cars", e.traffic) };
    format!("{}, {traffic}", e.strategy.as_str())
}

/// Builds the curves from per-iteration evaluations, sorted by condition then iteration.
pub fn summarize_run(evals: &[IterationEval], run: &RunReport) -> RunCurves {
    let mut rows: Vec<&IterationEval> = evals.iter().collect();
    rows.sort_by(|a, b| {
        (a.report.strategy.as_str(), a.report.traffic, a.iteration).cmp(&(
            b.report.strategy.as_str(),
            b.report.traffic,
            b.iteration,
        ))
    });
    let queries = |it: u32| {
        let this = run.records.iter().find(|r| r.iteration == it).map(|r| r.label_queries);
        let cumulative: u64 = run.records.iter().filter(|r| r.iteration <= it).map(|r| r.label_queries).sum();
        (this, cumulative)
    };
    let mut csv = CURVE_COLUMNS.join(",");
    csv.push('\n');
    for e in &rows {
        let (this, cumulative) = queries(e.iteration);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            e.iteration,
            e.report.strategy.as_str(),
            e.report.traffic,
            e.report.avg_laps,
            e.report.damage_per_lap,
            e.report.steering_mse.map(|v| v.to_string()).unwrap_or_default(),
            e.report.takeover_fraction,
            this.map(|v| v.to_string()).unwrap_or_default(),
            cumulative
        );
    }

    let mut conditions: Vec<String> = rows.iter().map(|e| condition(&e.report)).collect();
    conditions.dedup();
    let series = |metric: &dyn Fn(&EvalReport) -> Option<f64>| -> Vec<Series> {
        conditions
            .iter()
            .map(|c| Series {
                name: c.clone(),
                points: rows
                    .iter()
                    .filter(|e| &condition(&e.report) == c)
                    .filter_map(|e| metric(&e.report).map(|v| (f64::from(e.iteration), v)))
                    .collect(),
            })
            .collect()
    };
    let plots = vec![
        (
            "avg_laps".to_string(),
            line_plot_svg("Average laps", "iteration", "laps", &series(&|r| Some(r.avg_laps))),
        ),
        (
            "damage_per_lap".to_string(),
            line_plot_svg("Damage per lap", "iteration", "damage / lap", &series(&|r| Some(r.damage_per_lap))),
        ),
        (
            "steering_mse".to_string(),
            line_plot_svg("Steering MSE (primary-driven steps)", "iteration", "mse", &series(&|r| r.steering_mse)),
        ),
        (
            "takeover_fraction".to_string(),
            line_plot_svg(
                "Portion of time driven by the reference",
                "iteration",
                "fraction",
                &series(&|r| Some(r.takeover_fraction)),
            ),
        ),
    ];
    RunCurves { csv, plots }
}
