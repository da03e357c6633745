use super::TrainConfig;
use crate::adaptation::AdaptationState;
use crate::error::{Error, Result};
use crate::model::{GradientSet, ModelParams};
use crate::numerics::Matrix;
use std::collections::BTreeMap;

/// First/second moment estimates, allocated only for trainable tensors.
/// That restriction is exactly where the memory saving of freezing comes
/// from: frozen tensors carry no gradient and no optimizer state.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
    step: u64,
}

impl AdamState {
    /// Zero-initializes moments for every trainable tensor of the model and
    /// its adaptation state.
    pub fn init(params: &ModelParams, state: &AdaptationState) -> Self {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for t in params.store().iter().chain(state.store().iter()) {
            if t.trainable {
                let (r, c) = t.value.shape();
                first.insert(t.name.clone(), Matrix::zeros(r, c));
                second.insert(t.name.clone(), Matrix::zeros(r, c));
            }
        }
        AdamState {
            first,
            second,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of optimizer-state scalars (first plus second moments).
    pub fn scalar_count(&self) -> usize {
        self.first.values().map(Matrix::len).sum::<usize>()
            + self.second.values().map(Matrix::len).sum::<usize>()
    }

    pub fn tracked_tensors(&self) -> usize {
        self.first.len()
    }
}

fn lookup_mut<'a>(
    params: &'a mut ModelParams,
    state: &'a mut AdaptationState,
    name: &str,
) -> Option<&'a mut crate::model::NamedTensor> {
    if params.store().contains(name) {
        params.store_mut().get_mut(name)
    } else {
        state.store_mut().get_mut(name)
    }
}

/// One Adam update with bias correction over the trainable set.
///
/// `grads` must cover the trainable tensors exactly: a gradient for a frozen
/// or unknown tensor, or a trainable tensor without a gradient, is a
/// contract violation.
pub fn adam_step(
    adam: &mut AdamState,
    params: &mut ModelParams,
    state: &mut AdaptationState,
    grads: &GradientSet,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != adam.first.len() {
        let missing: Vec<&String> = adam
            .first
            .keys()
            .filter(|name| !grads.contains(name))
            .collect();
        if !missing.is_empty() {
            return Err(Error::contract(format!(
                "gradients missing for trainable tensors: {missing:?}"
            )));
        }
    }
    for name in grads.names() {
        if !adam.first.contains_key(name) {
            return Err(Error::contract(format!(
                "gradient supplied for frozen or unknown tensor {name}"
            )));
        }
    }

    adam.step += 1;
    let t = adam.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);

    for (name, grad) in grads.iter() {
        let m = adam.first.get_mut(name).expect("checked above");
        let v = adam.second.get_mut(name).expect("checked above");
        let tensor = lookup_mut(params, state, name)
            .ok_or_else(|| Error::contract(format!("tensor {name} disappeared")))?;
        if tensor.value.shape() != grad.shape() {
            return Err(Error::shape(
                "adam_step",
                tensor.value.shape_string(),
                grad.shape_string(),
            ));
        }
        let theta = tensor.value.data_mut();
        for i in 0..theta.len() {
            let g = grad.data()[i];
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * g;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::{instrument, AdaptationMethod};
    use crate::model::{names, ModelConfig};
    use crate::numerics::RngStream;

    fn scalar_setup() -> (ModelConfig, ModelParams, AdaptationState) {
        let cfg = ModelConfig {
            d_model: 4,
            n_heads: 1,
            n_layers: 1,
            d_ff: 4,
            n_classes: 2,
            max_seq_len: 2,
        };
        let mut params = ModelParams::init(&cfg, &mut RngStream::new(0)).unwrap();
        let state = instrument(
            &mut params,
            &cfg,
            &AdaptationMethod::Fixed,
            &mut RngStream::new(0),
        )
        .unwrap();
        (cfg, params, state)
    }

    fn head_bias_grad(value: f64) -> GradientSet {
        let mut grads = GradientSet::new();
        grads.accumulate(names::HEAD_BIAS, &Matrix::from_rows(&[&[value, value]]));
        grads
    }

    fn full_cover_grads(params: &ModelParams, bias_value: f64) -> GradientSet {
        let mut grads = GradientSet::new();
        for t in params.store().iter().filter(|t| t.trainable) {
            let mut g = Matrix::zeros(t.value.rows(), t.value.cols());
            if t.name == names::HEAD_BIAS {
                g.data_mut().fill(bias_value);
            }
            grads.accumulate(&t.name, &g);
        }
        grads
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (_, mut params, mut state) = scalar_setup();
        params.store_mut().get_mut(names::HEAD_BIAS).unwrap().value =
            Matrix::from_rows(&[&[1.0, 1.0]]);
        let mut adam = AdamState::init(&params, &state);
        let tcfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let grads = full_cover_grads(&params, 1.0);
        adam_step(&mut adam, &mut params, &mut state, &grads, &tcfg).unwrap();
        let theta = params.tensor(names::HEAD_BIAS).unwrap().get(0, 0);
        // After bias correction the first update is lr * g / (|g| + eps).
        assert!((theta - 0.9).abs() < 1e-8, "theta {theta}");
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (_, mut params, mut state) = scalar_setup();
        let before = params.tensor(names::HEAD_WEIGHT).unwrap().clone();
        let mut adam = AdamState::init(&params, &state);
        let grads = full_cover_grads(&params, 0.0);
        adam_step(&mut adam, &mut params, &mut state, &grads, &TrainConfig::default()).unwrap();
        assert_eq!(*params.tensor(names::HEAD_WEIGHT).unwrap(), before);
    }

    #[test]
    fn two_step_trace_matches_scalar_oracle() {
        // Hand-rolled scalar Adam on f(x) = x^2 / 2, so g = x.
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let mut x_oracle = 1.5f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut oracle_trace = Vec::new();
        for t in 1..=2 {
            let g = x_oracle;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            x_oracle -= lr * m_hat / (v_hat.sqrt() + eps);
            oracle_trace.push(x_oracle);
        }

        let (_, mut params, mut state) = scalar_setup();
        params.store_mut().get_mut(names::HEAD_BIAS).unwrap().value =
            Matrix::from_rows(&[&[1.5, 1.5]]);
        let mut adam = AdamState::init(&params, &state);
        let tcfg = TrainConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
            ..TrainConfig::default()
        };
        for expected in oracle_trace {
            let g = params.tensor(names::HEAD_BIAS).unwrap().get(0, 0);
            let grads = full_cover_grads(&params, g);
            adam_step(&mut adam, &mut params, &mut state, &grads, &tcfg).unwrap();
            let got = params.tensor(names::HEAD_BIAS).unwrap().get(0, 0);
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn gradient_for_frozen_tensor_is_contract_violation() {
        let (_, mut params, mut state) = scalar_setup();
        let mut adam = AdamState::init(&params, &state);
        let mut grads = full_cover_grads(&params, 0.0);
        grads.accumulate(
            &names::attn(0, "q"),
            &Matrix::zeros(4, 4), // frozen under Fixed
        );
        let err = adam_step(&mut adam, &mut params, &mut state, &grads, &TrainConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err}");
    }

    #[test]
    fn missing_gradient_is_contract_violation() {
        let (_, mut params, mut state) = scalar_setup();
        let mut adam = AdamState::init(&params, &state);
        let err = adam_step(
            &mut adam,
            &mut params,
            &mut state,
            &head_bias_grad(0.0),
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn state_scalars_are_twice_the_trainable_count() {
        let (_, params, state) = scalar_setup();
        let adam = AdamState::init(&params, &state);
        let trainable =
            params.store().trainable_scalars() + state.store().trainable_scalars();
        assert_eq!(adam.scalar_count(), 2 * trainable);
    }
}
