//! Run artifacts: the per-run training report (JSON + metric curve CSV)
//! and the variant-comparison table. Everything serialized here is
//! deterministic for a fixed config and seed; no wall-clock values are
//! written, timing goes to the console log instead.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One validation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    pub epoch: usize,
    /// Prefix fraction in effect during the preceding training interval.
    pub p: f64,
    pub metric: f64,
    pub improved: bool,
}

/// Schedule phase transition, as emitted to the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub event: String,
    pub step: u64,
    pub old_p: f64,
    pub new_p: f64,
}

impl PhaseEvent {
    pub fn new(step: u64, old_p: f64, new_p: f64) -> Self {
        PhaseEvent {
            event: "phase".to_string(),
            step,
            old_p,
            new_p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub epochs: usize,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub metric: String,
    pub records: Vec<ValidationRecord>,
    pub phase_events: Vec<PhaseEvent>,
    pub best_metric: f64,
    /// Relative to the run directory.
    pub best_checkpoint: String,
    pub totals: Totals,
    pub stopped_by: String,
    pub test_metrics: BTreeMap<String, f64>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("step,epoch,p,metric,improved\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.epoch, r.p, r.metric, r.improved
            ));
        }
        out
    }

    pub fn write_curve_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.curve_csv())?;
        Ok(())
    }
}

/// Aggregated row of the comparison table (means over seeds).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub exact_match: f64,
    pub bleu4: f64,
    pub rougel_f1: f64,
    pub epochs: f64,
    pub steps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One (variant, seed) run in the comparison detail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_metric: f64,
    pub epochs: usize,
    pub steps: u64,
    pub test_metrics: BTreeMap<String, f64>,
    pub report_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantDetail {
    pub variant: String,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<VariantRow>,
    pub details: Vec<VariantDetail>,
}

impl CompareReport {
    pub fn table_csv(&self) -> String {
        let mut out = String::from("variant,exact_match,bleu4,rougel_f1,epochs,steps\n");
        for r in &self.rows {
            if let Some(err) = &r.error {
                out.push_str(&format!("{},error: {}\n", r.variant, err.replace(',', ";")));
            } else {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.variant, r.exact_match, r.bleu4, r.rougel_f1, r.epochs, r.steps
                ));
            }
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("table.csv"), self.table_csv())?;
        fs::write(dir.join("compare.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_json_round_trips() {
        let report = TrainReport {
            metric: "loss".to_string(),
            records: vec![ValidationRecord {
                step: 10,
                epoch: 1,
                p: 0.5,
                metric: 2.25,
                improved: true,
            }],
            phase_events: vec![PhaseEvent::new(20, 0.5, 0.0)],
            best_metric: 2.25,
            best_checkpoint: "best.ckpt".to_string(),
            totals: Totals { epochs: 3, steps: 30 },
            stopped_by: "patience".to_string(),
            test_metrics: BTreeMap::from([("exact_match".to_string(), 0.5)]),
        };
        let text = report.to_json().unwrap();
        let back: TrainReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert!(report.curve_csv().contains("10,1,0.5,2.25,true"));
        assert_eq!(report.phase_events[0].event, "phase");
    }

    #[test]
    fn table_csv_has_one_row_per_variant() {
        let cmp = CompareReport {
            rows: vec![
                VariantRow {
                    variant: "wo_cl".to_string(),
                    exact_match: 0.5,
                    bleu4: 0.25,
                    rougel_f1: 0.75,
                    epochs: 8.0,
                    steps: 500.0,
                    error: None,
                },
                VariantRow {
                    variant: "icl_sc".to_string(),
                    exact_match: 0.5,
                    bleu4: 0.5,
                    rougel_f1: 0.8,
                    epochs: 9.0,
                    steps: 550.0,
                    error: None,
                },
            ],
            details: Vec::new(),
        };
        let csv = cmp.table_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("variant,exact_match,bleu4,rougel_f1,epochs,steps"));
    }
}
