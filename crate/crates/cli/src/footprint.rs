//! Analytic accounting of resident 64-bit values during training.
//!
//! This is a deterministic count, not an OS memory probe: parameters, plus
//! gradients and two Adam moments for the trainable subset only (frozen
//! tensors carry neither), plus a batch-scaled activation workspace modeled
//! on the per-example forward cache and its backward mirror. The activation
//! term models a conventional batched trainer that holds every example's
//! intermediates at once, which is the regime where batch size drives
//! training out of memory.

use loralab::adaptation::{AdaptationMethod, AdaptationState};
use loralab::model::{ModelConfig, ModelParams};

/// Per-example activation scalars: the forward cache (norm caches,
/// projections, per-head attention probabilities, FFN hiddens, residual
/// stream copies, low-rank/adapter intermediates) doubled for the backward
/// flows of the same shapes.
pub fn activation_scalars_per_example(
    cfg: &ModelConfig,
    method: &AdaptationMethod,
    seq_len: usize,
) -> u64 {
    let l = seq_len as u64;
    let d = cfg.d_model as u64;
    let d_ff = cfg.d_ff as u64;
    let heads = cfg.n_heads as u64;

    let mut per_layer = 0u64;
    per_layer += l * d + l; // ln1 cache
    per_layer += l * d; // ln1 output
    per_layer += 3 * l * d; // q, k, v
    per_layer += heads * l * l; // attention probabilities
    per_layer += l * d; // head concat
    per_layer += l * d + l; // ln2 cache
    per_layer += l * d; // ln2 output
    per_layer += 2 * l * d_ff; // ffn pre-activation and activation
    per_layer += l * d; // post-ffn residual stream
    match method {
        AdaptationMethod::Lora(lora) => {
            per_layer += lora.targets.len() as u64 * l * lora.rank as u64;
        }
        AdaptationMethod::Adapter { bottleneck } => {
            per_layer += 2 * l * *bottleneck as u64;
        }
        _ => {}
    }

    let forward = l * d // input
        + cfg.n_layers as u64 * per_layer
        + d // pooled
        + cfg.n_classes as u64; // logits
    2 * forward
}

/// Total resident 64-bit values for one training configuration.
pub fn float_footprint(
    cfg: &ModelConfig,
    params: &ModelParams,
    state: &AdaptationState,
    batch_size: usize,
    seq_len: usize,
) -> u64 {
    let total_params = (params.store().total_scalars() + state.store().total_scalars()) as u64;
    let trainable =
        (params.store().trainable_scalars() + state.store().trainable_scalars()) as u64;
    let activations =
        batch_size as u64 * activation_scalars_per_example(cfg, state.method(), seq_len);
    total_params + 3 * trainable + activations
}

#[cfg(test)]
mod tests {
    use super::*;
    use loralab::adaptation::{instrument, LoraConfig};
    use loralab::model::ModelParams;
    use loralab::numerics::RngStream;

    fn instrumented(method: AdaptationMethod) -> (ModelConfig, ModelParams, AdaptationState) {
        let cfg = ModelConfig::default();
        let mut params = ModelParams::init(&cfg, &mut RngStream::new(0)).unwrap();
        let state = instrument(&mut params, &cfg, &method, &mut RngStream::new(1)).unwrap();
        (cfg, params, state)
    }

    #[test]
    fn lora_footprint_is_below_finetune_everywhere() {
        let (cfg, params_ft, ft) = instrumented(AdaptationMethod::FullFinetune);
        let (_, params_lora, lora) = instrumented(AdaptationMethod::Lora(LoraConfig::new(4)));
        for seq_len in [8, 16, 32, 64] {
            for batch in [2, 4, 8, 16, 32] {
                let f = float_footprint(&cfg, &params_ft, &ft, batch, seq_len);
                let l = float_footprint(&cfg, &params_lora, &lora, batch, seq_len);
                assert!(l < f, "L={seq_len} B={batch}: lora {l} !< finetune {f}");
            }
        }
    }

    #[test]
    fn footprint_is_affine_in_batch_size() {
        let (cfg, params, state) = instrumented(AdaptationMethod::Lora(LoraConfig::new(4)));
        let at = |b: usize| float_footprint(&cfg, &params, &state, b, 32);
        let slope = at(2) - at(1);
        for b in 2..12 {
            assert_eq!(at(b + 1) - at(b), slope, "activation term must be linear in batch");
        }
        let intercept = at(1) - slope;
        let expected_intercept = (params.store().total_scalars()
            + state.store().total_scalars()) as u64
            + 3 * (params.store().trainable_scalars() + state.store().trainable_scalars()) as u64;
        assert_eq!(intercept, expected_intercept, "parameter term must not depend on batch");
    }
}
