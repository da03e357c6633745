//! Driver-level tests at tiny geometry: sweep structure, reproducibility
//! and the bench grid's accounting invariants.

use loralab::model::ModelConfig;
use loralab::training::TrainConfig;
use loralab_cli::config::{DataConfig, ExperimentConfig};
use loralab_cli::experiment::{run_bench, run_sweep, SweepAxis};

fn tiny_cfg() -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            n_classes: 2,
            max_seq_len: 8,
        },
        train: TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::desk_scale()
        },
        data: DataConfig {
            n_train_per_class: 12,
            n_dev_per_class: 6,
            n_eval_per_class: 8,
            ..DataConfig::default()
        },
    }
}

#[test]
fn targets_sweep_emits_the_seven_subsets_in_table_order() {
    let sweep = run_sweep(&tiny_cfg(), &SweepAxis::Targets, 5).unwrap();
    let values: Vec<&str> = sweep.points.iter().map(|p| p.value.as_str()).collect();
    assert_eq!(values, vec!["q", "k", "v", "q,v", "q,k", "k,v", "q,k,v"]);
    let csv = sweep.to_csv();
    assert!(csv.starts_with("Weight Type,#Parameters,EER%\n"));
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn method_sweep_params_are_ordered_lora_adapter_finetune() {
    // Needs a wide-enough FFN that the d_ff/8 adapter bottleneck outweighs
    // the rank-4 pairs, as in the default geometry.
    let mut cfg = tiny_cfg();
    cfg.model.d_ff = 64;
    let sweep = run_sweep(&cfg, &SweepAxis::Method, 6).unwrap();
    let param_of = |label: &str| {
        sweep
            .points
            .iter()
            .find(|p| p.value == label)
            .map(|p| p.report.trainable_params)
            .unwrap()
    };
    assert!(param_of("lora") < param_of("adapter"));
    assert!(param_of("adapter") < param_of("finetune"));
    assert!(param_of("fixed") < param_of("lora"));
}

#[test]
fn sweeps_are_bit_reproducible_for_a_fixed_master_seed() {
    let a = run_sweep(&tiny_cfg(), &SweepAxis::Rank(vec![2, 4]), 11).unwrap();
    let b = run_sweep(&tiny_cfg(), &SweepAxis::Rank(vec![2, 4]), 11).unwrap();
    for (pa, pb) in a.points.iter().zip(&b.points) {
        assert_eq!(pa.value, pb.value);
        assert_eq!(
            pa.report.eer.to_bits(),
            pb.report.eer.to_bits(),
            "rank {}: {} vs {}",
            pa.value,
            pa.report.eer,
            pb.report.eer
        );
    }
}

#[test]
fn length_sweep_shares_data_and_varies_the_model_window() {
    let sweep = run_sweep(&tiny_cfg(), &SweepAxis::Length(vec![4, 8]), 2).unwrap();
    assert_eq!(sweep.points.len(), 2);
    for p in &sweep.points {
        let l: usize = p.value.parse().unwrap();
        assert_eq!(p.report.config.model.max_seq_len, l);
    }
}

#[test]
fn bench_grid_footprints_and_columns_are_complete() {
    let mut cfg = tiny_cfg();
    cfg.data.n_train_per_class = 8;
    let lengths = [4usize, 8];
    let batches = [2usize, 4];
    let bench = run_bench(&cfg, &lengths, &batches, 3).unwrap();
    assert_eq!(bench.cells.len(), 4);
    for &l in &lengths {
        for &b in &batches {
            let cell = bench.cell(l, b).expect("cell exists");
            assert!(
                cell.lora_footprint < cell.finetune_footprint,
                "L={l} B={b}: footprint ordering violated"
            );
            assert!(cell.finetune_epoch_ms > 0.0 && cell.lora_epoch_ms > 0.0);
        }
    }
    // Activation term: footprint grows with batch at fixed length.
    let f_small = bench.cell(4, 2).unwrap().finetune_footprint;
    let f_large = bench.cell(4, 4).unwrap().finetune_footprint;
    assert!(f_large > f_small);
}
