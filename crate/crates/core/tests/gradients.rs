//! Finite-difference gradient verification across methods and seeds on a
//! tiny geometry.

use loralab::adaptation::{AdaptationMethod, LoraConfig, TargetSet};
use loralab::model::ModelConfig;
use loralab::training::grad_check;

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 16,
        n_classes: 2,
        max_seq_len: 4,
    }
}

fn assert_method_passes(method: &AdaptationMethod) {
    for seed in [3u64, 17, 29, 41, 53] {
        let report = grad_check(&tiny_cfg(), method, seed).unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "{} seed {seed}: max rel error {}",
            match method {
                AdaptationMethod::Fixed => "fixed",
                AdaptationMethod::FullFinetune => "finetune",
                AdaptationMethod::Lora(_) => "lora",
                AdaptationMethod::Adapter { .. } => "adapter",
            },
            report.max_rel_error
        );
        for tensor in &report.per_tensor {
            assert!(tensor.checked > 0, "{} never checked", tensor.name);
        }
    }
}

#[test]
fn finetune_gradients_match_finite_differences_over_five_seeds() {
    assert_method_passes(&AdaptationMethod::FullFinetune);
}

#[test]
fn lora_gradients_match_finite_differences_over_five_seeds() {
    let method = AdaptationMethod::Lora(LoraConfig::new(2).with_targets(TargetSet::qv()));
    assert_method_passes(&method);
}

#[test]
fn adapter_gradients_match_finite_differences_over_five_seeds() {
    assert_method_passes(&AdaptationMethod::Adapter { bottleneck: 4 });
}

#[test]
fn fixed_gradients_match_finite_differences_over_five_seeds() {
    assert_method_passes(&AdaptationMethod::Fixed);
}

#[test]
fn gradcheck_table_lists_only_trainable_tensors() {
    let method = AdaptationMethod::Lora(LoraConfig::new(2));
    let report = grad_check(&tiny_cfg(), &method, 1).unwrap();
    let names: Vec<&str> = report.per_tensor.iter().map(|t| t.name.as_str()).collect();
    assert!(names.iter().any(|n| n.contains("lora") && n.ends_with('A')));
    assert!(names.iter().any(|n| n.contains("lora") && n.ends_with('B')));
    assert!(names.contains(&"head.W_head"));
    assert!(
        names.iter().all(|n| n.contains("lora") || n.starts_with("head")),
        "frozen backbone tensors leaked into the table: {names:?}"
    );
}
