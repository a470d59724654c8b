use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::compensated_sum;
use crate::flow::{overhead, read_runs, FlowRun, FlowState, StepName};

pub const TOTAL_DATA_DEFINITION: &str = "total_flow_runs x transfer_volume_mb / 1000";

/// Lower of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Range {
    pub fn of(values: &[f64]) -> Option<Self> {
        let median = median(values)?;
        Some(Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            median,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(compensated_sum(v) / values.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Overrides the start period inferred from flow start times.
    pub start_period_s: Option<f64>,
}

/// Benchmark summary plus the itemized per-step ranges. Statistics are
/// null when no flow succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub start_period_s: Option<f64>,
    /// Median bytes moved per flow, in units of 10^6 bytes.
    pub transfer_volume_mb: Option<f64>,
    pub total_data_gb: Option<f64>,
    pub total_data_definition: String,
    pub min_flow_runtime_s: Option<f64>,
    pub mean_flow_runtime_s: Option<f64>,
    pub max_flow_runtime_s: Option<f64>,
    pub median_flow_runtime_s: Option<f64>,
    pub median_overhead_s: Option<f64>,
    /// Median over flows of 100 x overhead / runtime.
    pub median_overhead_pct: Option<f64>,
    /// 100 x median overhead / median runtime.
    pub median_overhead_pct_of_median_runtime: Option<f64>,
    pub total_flow_runs: usize,
    pub failed_flow_runs: usize,
    /// Runtime of the earliest-started succeeded flow.
    pub first_flow_runtime_s: Option<f64>,
    pub per_step: Option<BTreeMap<StepName, Range>>,
    pub overhead: Option<Range>,
}

/// Pure function of the runs: the input order does not matter.
pub fn aggregate(runs: &[FlowRun], options: &ReportOptions) -> MetricsReport {
    let mut runs: Vec<&FlowRun> = runs.iter().collect();
    runs.sort_by(|a, b| {
        a.t_start
            .total_cmp(&b.t_start)
            .then(a.definition.flow_id.cmp(&b.definition.flow_id))
    });

    let started: Vec<f64> = runs.iter().map(|r| r.t_start).collect();
    let gaps: Vec<f64> = started.windows(2).map(|w| w[1] - w[0]).collect();
    let start_period_s = options.start_period_s.or_else(|| median(&gaps));

    let ok: Vec<&FlowRun> = runs
        .iter()
        .copied()
        .filter(|r| r.state == FlowState::Succeeded && r.t_end.is_some())
        .collect();
    let failed_flow_runs = runs.len() - ok.len();

    let totals: Vec<f64> = ok.iter().filter_map(|r| r.total_runtime()).collect();
    let overheads: Vec<f64> = ok.iter().filter_map(|r| overhead(r).ok()).collect();
    let ratios: Vec<f64> = totals
        .iter()
        .zip(&overheads)
        .map(|(t, o)| if *t > 0.0 { 100.0 * o / t } else { 0.0 })
        .collect();
    let bytes: Vec<f64> = ok
        .iter()
        .filter_map(|r| r.bytes_transferred.map(|b| b as f64 / 1e6))
        .collect();

    let transfer_volume_mb = median(&bytes);
    let median_total = median(&totals);
    let median_overhead_s = median(&overheads);
    let per_step = (!ok.is_empty()).then(|| {
        StepName::ALL
            .iter()
            .filter_map(|&step| {
                let active: Vec<f64> = ok
                    .iter()
                    .filter_map(|r| r.timing(step).map(|t| t.active()))
                    .collect();
                Range::of(&active).map(|r| (step, r))
            })
            .collect()
    });

    MetricsReport {
        start_period_s,
        transfer_volume_mb,
        total_data_gb: transfer_volume_mb.map(|mb| ok.len() as f64 * mb / 1000.0),
        total_data_definition: TOTAL_DATA_DEFINITION.to_string(),
        min_flow_runtime_s: Range::of(&totals).map(|r| r.min),
        mean_flow_runtime_s: mean(&totals),
        max_flow_runtime_s: Range::of(&totals).map(|r| r.max),
        median_flow_runtime_s: median_total,
        median_overhead_s,
        median_overhead_pct: median(&ratios),
        median_overhead_pct_of_median_runtime: match (median_overhead_s, median_total) {
            (Some(o), Some(t)) if t > 0.0 => Some(100.0 * o / t),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        },
        total_flow_runs: ok.len(),
        failed_flow_runs,
        first_flow_runtime_s: ok.first().and_then(|r| r.total_runtime()),
        per_step,
        overhead: Range::of(&overheads),
    }
}

pub fn aggregate_log(path: &Path, options: &ReportOptions) -> std::io::Result<MetricsReport> {
    Ok(aggregate(&read_runs(path)?, options))
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => "n/a".to_string(),
    }
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering: the headline metrics, then per-step
    /// active time ranges and the overhead range.
    pub fn to_table(&self) -> String {
        let rows: Vec<(&str, String)> = vec![
            ("Start period (s)", cell(self.start_period_s, 1)),
            ("Transfer volume (MB)", cell(self.transfer_volume_mb, 2)),
            ("Total data transfer (GB) [runs x volume]", cell(self.total_data_gb, 3)),
            ("Min flow runtime (s)", cell(self.min_flow_runtime_s, 2)),
            ("Mean flow runtime (s)", cell(self.mean_flow_runtime_s, 2)),
            ("Max flow runtime (s)", cell(self.max_flow_runtime_s, 2)),
            ("Median overhead (s)", cell(self.median_overhead_s, 2)),
            ("Median overhead (%)", cell(self.median_overhead_pct, 1)),
            ("Total flow runs", self.total_flow_runs.to_string()),
        ];
        let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let value_w = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<label_w$}  {:>value_w$}", "Metric", "Value");
        let _ = writeln!(out, "{}", "-".repeat(label_w + 2 + value_w));
        for (label, value) in &rows {
            let _ = writeln!(out, "{label:<label_w$}  {value:>value_w$}");
        }

        let mut steps: Vec<(String, Option<Range>)> = StepName::ALL
            .iter()
            .map(|s| {
                (
                    format!("{s:?} (active)"),
                    self.per_step.as_ref().and_then(|m| m.get(s).copied()),
                )
            })
            .collect();
        steps.push(("Overhead".to_string(), self.overhead));
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<20} {:>10} {:>10} {:>10}", "Step (s)", "min", "median", "max");
        for (name, range) in steps {
            let _ = writeln!(
                out,
                "{:<20} {:>10} {:>10} {:>10}",
                name,
                cell(range.map(|r| r.min), 3),
                cell(range.map(|r| r.median), 3),
                cell(range.map(|r| r.max), 3),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowDefinition, FlowKind, StepTiming};

    fn flow(t_start: f64, total: f64, active: [f64; 3]) -> FlowRun {
        let mut r = FlowRun::new(FlowDefinition::new("/x.emdl", "in", FlowKind::Hyperspectral), t_start);
        r.state = FlowState::Succeeded;
        r.t_end = Some(t_start + total);
        r.bytes_transferred = Some(5_000_000);
        let mut cursor = t_start;
        for (step, a) in StepName::ALL.into_iter().zip(active) {
            cursor += 0.5;
            r.timings.push(StepTiming {
                step,
                active_start: cursor,
                active_end: cursor + a,
            });
            cursor += a;
        }
        r
    }

    #[test]
    fn median_is_lower_middle() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[4.0, 1.0]), Some(1.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.0));
        assert_eq!(median(&[5.0, 1.0, 3.0]), Some(3.0));
    }

    #[test]
    fn single_flow() {
        let r = aggregate(&[flow(0.0, 40.0, [10.0, 8.0, 2.0])], &ReportOptions::default());
        assert_eq!(r.median_overhead_s, Some(20.0));
        assert_eq!(r.median_overhead_pct, Some(50.0));
        assert_eq!(r.total_flow_runs, 1);
        assert_eq!(r.start_period_s, None);
        assert_eq!(r.transfer_volume_mb, Some(5.0));
        assert_eq!(r.total_data_gb, Some(0.005));
    }

    #[test]
    fn three_flow_fixture() {
        // totals 30, 45, 60; actives 15, 30, 30 -> overheads 15, 15, 30
        let runs = vec![
            flow(20.0, 60.0, [20.0, 8.0, 2.0]),
            flow(0.0, 30.0, [10.0, 4.0, 1.0]),
            flow(10.0, 45.0, [20.0, 8.0, 2.0]),
        ];
        let mut failed = flow(30.0, 5.0, [1.0, 0.0, 0.0]);
        failed.state = FlowState::Failed {
            step: StepName::Analysis,
            reason: "x".into(),
        };
        let mut all = runs.clone();
        all.push(failed);
        let r = aggregate(&all, &ReportOptions::default());
        assert_eq!(r.total_flow_runs, 3);
        assert_eq!(r.failed_flow_runs, 1);
        assert_eq!(r.min_flow_runtime_s, Some(30.0));
        assert_eq!(r.mean_flow_runtime_s, Some(45.0));
        assert_eq!(r.max_flow_runtime_s, Some(60.0));
        assert_eq!(r.median_flow_runtime_s, Some(45.0));
        assert_eq!(r.median_overhead_s, Some(15.0));
        // ratios 50, 33.3, 50 -> median 50 ; ratio of medians 15/45
        assert_eq!(r.median_overhead_pct, Some(50.0));
        assert!((r.median_overhead_pct_of_median_runtime.unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.start_period_s, Some(10.0));
        assert_eq!(r.first_flow_runtime_s, Some(30.0));
        let steps = r.per_step.as_ref().unwrap();
        assert_eq!(steps[&StepName::Transfer], Range { min: 10.0, median: 20.0, max: 20.0 });
        assert_eq!(steps[&StepName::Publication], Range { min: 1.0, median: 2.0, max: 2.0 });
        assert_eq!(r.overhead, Some(Range { min: 15.0, median: 15.0, max: 30.0 }));

        let mut reversed = all.clone();
        reversed.reverse();
        assert_eq!(aggregate(&reversed, &ReportOptions::default()).to_json(), r.to_json());
    }

    #[test]
    fn empty_log_gives_null_statistics() {
        let r = aggregate(&[], &ReportOptions::default());
        assert_eq!(r.total_flow_runs, 0);
        assert!(r.mean_flow_runtime_s.is_none() && r.per_step.is_none() && r.overhead.is_none());
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(v["median_overhead_pct"].is_null());
        assert!(r.to_table().contains("n/a"));
    }

    #[test]
    fn period_override_and_table_rows() {
        let runs = vec![flow(0.0, 30.0, [10.0, 4.0, 1.0])];
        let r = aggregate(&runs, &ReportOptions { start_period_s: Some(30.0) });
        assert_eq!(r.start_period_s, Some(30.0));
        let table = r.to_table();
        let order = [
            "Start period (s)",
            "Transfer volume (MB)",
            "Total data transfer (GB)",
            "Min flow runtime (s)",
            "Mean flow runtime (s)",
            "Max flow runtime (s)",
            "Median overhead (s)",
            "Median overhead (%)",
            "Total flow runs",
            "Transfer (active)",
            "Analysis (active)",
            "Publication (active)",
            "Overhead",
        ];
        let mut at = 0;
        for label in order {
            let pos = table[at..].find(label).unwrap_or_else(|| panic!("{label} missing"));
            at += pos + label.len();
        }
    }

    #[test]
    fn aggregate_log_reads_file() {
        let dir = tempfile::tempdir().unwrap();
        let log = crate::flow::RunLog::open(dir.path().join("runs.jsonl")).unwrap();
        log.append(&flow(0.0, 40.0, [10.0, 8.0, 2.0])).unwrap();
        let a = aggregate_log(log.path(), &ReportOptions::default()).unwrap();
        let b = aggregate_log(log.path(), &ReportOptions::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.total_flow_runs, 1);
    }
}
