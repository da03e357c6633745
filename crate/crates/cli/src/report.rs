//! Run and sweep reports, serialized as JSON plus results-table CSV.

use crate::config::ExperimentConfig;
use loralab::adaptation::AdaptationMethod;
use serde::{Deserialize, Serialize};

/// Everything measured in one adapt-and-evaluate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: AdaptationMethod,
    pub method_label: String,
    pub eer: f64,
    pub eer_threshold: f64,
    pub trainable_params: usize,
    pub total_params: usize,
    /// trainable(full finetune) / trainable(method).
    pub param_ratio: f64,
    /// Median wall time of the training epochs, milliseconds.
    pub epoch_time_ms: f64,
    /// Analytic count of resident 64-bit values while training.
    pub float_footprint: u64,
    pub best_epoch: Option<usize>,
    pub best_dev_eer: Option<f64>,
    pub seed: u64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: String,
    pub report: RunReport,
}

/// One row per axis value, in the canonical axis order (ascending for
/// numeric axes, table order for target subsets and methods).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// CSV with the column layout of the corresponding results table.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.axis.as_str() {
            "rank" => {
                out.push_str("r,#Parameters,EER%\n");
                for p in &self.points {
                    out.push_str(&format!(
                        "{},{},{:.2}\n",
                        p.value,
                        p.report.trainable_params,
                        100.0 * p.report.eer
                    ));
                }
            }
            "targets" => {
                out.push_str("Weight Type,#Parameters,EER%\n");
                for p in &self.points {
                    out.push_str(&format!(
                        "\"{}\",{},{:.2}\n",
                        p.value,
                        p.report.trainable_params,
                        100.0 * p.report.eer
                    ));
                }
            }
            "length" => {
                out.push_str("Length,Train Time(s),EER%\n");
                for p in &self.points {
                    out.push_str(&format!(
                        "{},{:.3},{:.2}\n",
                        p.value,
                        p.report.epoch_time_ms / 1e3,
                        100.0 * p.report.eer
                    ));
                }
            }
            "method" => {
                out.push_str("Methods,Train Time(s),#Parameters,EER%\n");
                for p in &self.points {
                    out.push_str(&format!(
                        "{},{:.3},{},{:.2}\n",
                        p.value,
                        p.report.epoch_time_ms / 1e3,
                        p.report.trainable_params,
                        100.0 * p.report.eer
                    ));
                }
            }
            other => {
                out.push_str("value,EER%\n");
                let _ = other;
                for p in &self.points {
                    out.push_str(&format!("{},{:.2}\n", p.value, 100.0 * p.report.eer));
                }
            }
        }
        out
    }
}

/// One cell of the efficiency grid: epoch wall time and footprint for both
/// methods at a (sequence length, batch size) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub seq_len: usize,
    pub batch_size: usize,
    pub finetune_epoch_ms: f64,
    pub lora_epoch_ms: f64,
    pub finetune_footprint: u64,
    pub lora_footprint: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub lengths: Vec<usize>,
    pub batches: Vec<usize>,
    pub trials_per_class: usize,
    pub cells: Vec<BenchCell>,
}

impl BenchResult {
    pub fn cell(&self, seq_len: usize, batch_size: usize) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.seq_len == seq_len && c.batch_size == batch_size)
    }

    /// Epoch-time grid, methods side by side per batch column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Length");
        for b in &self.batches {
            out.push_str(&format!(",finetune(batch={b}),lora(batch={b})"));
        }
        out.push('\n');
        for l in &self.lengths {
            out.push_str(&l.to_string());
            for b in &self.batches {
                match self.cell(*l, *b) {
                    Some(c) => out.push_str(&format!(
                        ",{:.1},{:.1}",
                        c.finetune_epoch_ms, c.lora_epoch_ms
                    )),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use loralab::adaptation::LoraConfig;

    fn dummy_report() -> RunReport {
        RunReport {
            method: AdaptationMethod::Lora(LoraConfig::new(4)),
            method_label: "lora(r=4,targets=q,v)".into(),
            eer: 0.0815,
            eer_threshold: 0.2,
            trainable_params: 2178,
            total_params: 101_634,
            param_ratio: 45.7,
            epoch_time_ms: 812.5,
            float_footprint: 1_234_567,
            best_epoch: Some(17),
            best_dev_eer: Some(0.09),
            seed: 7,
            config: ExperimentConfig::desk_scale(),
        }
    }

    #[test]
    fn run_report_roundtrips_identically_through_json() {
        let report = dummy_report();
        let text = serde_json::to_string_pretty(&report).unwrap();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, back);
        // Parse -> serialize is also value-stable.
        let text2 = serde_json::to_string_pretty(&back).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn rank_sweep_csv_has_the_table_layout() {
        let sweep = SweepResult {
            axis: "rank".into(),
            points: vec![SweepPoint {
                value: "4".into(),
                report: dummy_report(),
            }],
        };
        let csv = sweep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "r,#Parameters,EER%");
        assert_eq!(lines.next().unwrap(), "4,2178,8.15");
    }

    #[test]
    fn bench_csv_pairs_methods_per_batch() {
        let bench = BenchResult {
            lengths: vec![8],
            batches: vec![2, 4],
            trials_per_class: 16,
            cells: vec![
                BenchCell {
                    seq_len: 8,
                    batch_size: 2,
                    finetune_epoch_ms: 10.0,
                    lora_epoch_ms: 6.0,
                    finetune_footprint: 100,
                    lora_footprint: 50,
                },
                BenchCell {
                    seq_len: 8,
                    batch_size: 4,
                    finetune_epoch_ms: 9.0,
                    lora_epoch_ms: 5.0,
                    finetune_footprint: 120,
                    lora_footprint: 60,
                },
            ],
        };
        let csv = bench.to_csv();
        assert!(csv.starts_with("Length,finetune(batch=2),lora(batch=2),finetune(batch=4),lora(batch=4)\n"));
        assert!(csv.contains("8,10.0,6.0,9.0,5.0"));
    }
}
