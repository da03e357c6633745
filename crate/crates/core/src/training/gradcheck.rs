//! Finite-difference verification of the analytic gradients.

use crate::adaptation::{instrument, AdaptationMethod, AdaptationState};
use crate::error::Result;
use crate::model::{backward, cross_entropy, forward, ModelConfig, ModelParams};
use crate::numerics::{Matrix, RngStream};
use serde::Serialize;

const STEP: f64 = 1e-5;
/// Above this many trainable scalars, a random 25% of entries is checked.
const FULL_SCAN_LIMIT: usize = 1000;
const GRAD_CHECK_BATCH: usize = 4;

#[derive(Debug, Clone, Serialize)]
pub struct TensorGradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_tensor: Vec<TensorGradCheck>,
}

fn batch_loss(
    cfg: &ModelConfig,
    params: &ModelParams,
    state: &AdaptationState,
    inputs: &[Matrix],
    labels: &[usize],
) -> Result<f64> {
    let logits = forward(cfg, params, state, inputs)?;
    cross_entropy(&logits, labels)
}

/// Moves the weights to a generic random point. The training init is a bad
/// place to difference at: near-zero scores make the attention-path
/// gradients second-order small, so finite-difference roundoff swamps the
/// relative error no matter how correct the analytic gradient is. Drawing
/// every tensor at O(1)-activation scale (fan-in for matrices, a small
/// spread for vectors, gamma centered at one, B nonzero) keeps every
/// gradient first-order.
fn randomize_test_point(
    params: &mut ModelParams,
    state: &mut AdaptationState,
    rng: &mut RngStream,
) {
    for t in params
        .store_mut()
        .iter_mut()
        .chain(state.store_mut().iter_mut())
    {
        let around_one = t.name.contains("gamma");
        let fan_in = t.value.cols();
        let vector = t.value.rows() == 1;
        for v in t.value.data_mut() {
            let g = rng.next_gaussian();
            *v = if around_one {
                1.0 + 0.2 * g
            } else if vector {
                0.2 * g
            } else {
                g / (fan_in as f64).sqrt()
            };
        }
    }
}

/// Compares every analytic gradient against central differences on a random
/// batch. Intended for tiny configs (d_model <= 16); the cost is two full
/// forward passes per checked scalar.
pub fn grad_check(
    cfg: &ModelConfig,
    method: &AdaptationMethod,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(seed);
    let mut params = ModelParams::init(cfg, &mut rng)?;
    let mut state = instrument(&mut params, cfg, method, &mut rng)?;
    randomize_test_point(&mut params, &mut state, &mut rng);

    let inputs: Vec<Matrix> = (0..GRAD_CHECK_BATCH)
        .map(|_| {
            let data = (0..cfg.max_seq_len * cfg.d_model)
                .map(|_| rng.next_gaussian())
                .collect();
            Matrix::from_vec(cfg.max_seq_len, cfg.d_model, data)
        })
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = (0..GRAD_CHECK_BATCH).map(|i| i % cfg.n_classes).collect();

    let (_, grads) = backward(cfg, &params, &state, &inputs, &labels)?;

    let trainable_scalars =
        params.store().trainable_scalars() + state.store().trainable_scalars();
    let full_scan = trainable_scalars <= FULL_SCAN_LIMIT;

    let trainable_names: Vec<String> = params
        .store()
        .iter()
        .chain(state.store().iter())
        .filter(|t| t.trainable)
        .map(|t| t.name.clone())
        .collect();

    let mut per_tensor = Vec::with_capacity(trainable_names.len());
    let mut overall: f64 = 0.0;
    for name in trainable_names {
        let analytic = grads
            .get(&name)
            .ok_or_else(|| crate::error::Error::contract(format!("no gradient for {name}")))?
            .clone();
        let len = analytic.len();
        let mut indices: Vec<usize> = if full_scan {
            (0..len).collect()
        } else {
            (0..len).filter(|_| rng.next_uniform() <= 0.25).collect()
        };
        if indices.is_empty() {
            indices.push(0);
        }

        let mut max_rel: f64 = 0.0;
        for idx in indices.iter().copied() {
            let original = perturb(&mut params, &mut state, &name, idx, STEP);
            let loss_plus = batch_loss(cfg, &params, &state, &inputs, &labels)?;
            restore(&mut params, &mut state, &name, idx, original - STEP);
            let loss_minus = batch_loss(cfg, &params, &state, &inputs, &labels)?;
            restore(&mut params, &mut state, &name, idx, original);

            let numeric = (loss_plus - loss_minus) / (2.0 * STEP);
            let a = analytic.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        overall = overall.max(max_rel);
        per_tensor.push(TensorGradCheck {
            name,
            checked: indices.len(),
            max_rel_error: max_rel,
        });
    }

    Ok(GradCheckReport {
        max_rel_error: overall,
        per_tensor,
    })
}

fn perturb(
    params: &mut ModelParams,
    state: &mut AdaptationState,
    name: &str,
    idx: usize,
    step: f64,
) -> f64 {
    let tensor = if params.store().contains(name) {
        params.store_mut().get_mut(name)
    } else {
        state.store_mut().get_mut(name)
    }
    .expect("trainable tensor exists");
    let original = tensor.value.data()[idx];
    tensor.value.data_mut()[idx] = original + step;
    original
}

fn restore(
    params: &mut ModelParams,
    state: &mut AdaptationState,
    name: &str,
    idx: usize,
    value: f64,
) {
    let tensor = if params.store().contains(name) {
        params.store_mut().get_mut(name)
    } else {
        state.store_mut().get_mut(name)
    }
    .expect("trainable tensor exists");
    tensor.value.data_mut()[idx] = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::LoraConfig;

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

    #[test]
    fn lora_gradients_pass_finite_differences() {
        let method = AdaptationMethod::Lora(LoraConfig::new(2));
        let report = grad_check(&tiny_cfg(), &method, 11).unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "max rel error {}",
            report.max_rel_error
        );
        assert!(report.per_tensor.iter().any(|t| t.name.contains("lora")));
        assert!(
            report.per_tensor.iter().all(|t| !t.name.contains("attn.W_q")),
            "frozen tensors must not appear"
        );
    }

    #[test]
    fn full_finetune_gradients_pass_finite_differences() {
        let report = grad_check(&tiny_cfg(), &AdaptationMethod::FullFinetune, 12).unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "max rel error {}",
            report.max_rel_error
        );
    }
}
