use super::store::TensorStore;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};
use serde::{Deserialize, Serialize};

/// Layer-norm epsilon used throughout the encoder.
pub const LN_EPS: f64 = 1e-5;

/// Standard deviation of the gaussian projection init.
pub const INIT_STD: f64 = 0.02;

/// Geometry of the toy transformer encoder classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub n_classes: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            n_classes: 2,
            max_seq_len: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(Error::config("all model dimensions must be at least 1"));
        }
        if self.max_seq_len == 0 {
            return Err(Error::config("max_seq_len must be at least 1"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_classes != 2 {
            return Err(Error::config("n_classes is fixed at 2 (genuine/spoof)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Stable tensor names. Everything that addresses a weight goes through
/// these so the checkpoint format and the optimizer agree on spelling.
pub mod names {
    pub fn attn(layer: usize, which: &str) -> String {
        format!("layer.{layer}.attn.W_{which}")
    }
    pub fn ln(layer: usize, idx: usize, which: &str) -> String {
        format!("layer.{layer}.ln{idx}.{which}")
    }
    pub fn ffn(layer: usize, which: &str) -> String {
        format!("layer.{layer}.ffn.{which}")
    }
    pub const HEAD_WEIGHT: &str = "head.W_head";
    pub const HEAD_BIAS: &str = "head.b_head";

    pub fn lora(layer: usize, target: &str, which: &str) -> String {
        format!("layer.{layer}.lora.{target}.{which}")
    }
    pub fn adapter(layer: usize, which: &str) -> String {
        format!("layer.{layer}.adapter.{which}")
    }
}

/// The base encoder weights: per layer the four attention projections, two
/// layer norms and the feed-forward pair, plus the classification head.
/// All tensors start trainable; adaptation methods adjust the flags.
#[derive(Debug, Clone)]
pub struct ModelParams {
    store: TensorStore,
}

fn gaussian_matrix(rng: &mut RngStream, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.next_gaussian() * std).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches by construction")
}

impl ModelParams {
    /// Random initialization: gaussian std 0.02 projections, zero biases,
    /// ones/zeros layer norm. The draw order (layers in order, projections
    /// then feed-forward, head last) is fixed so seeds reproduce exactly.
    pub fn init(cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut store = TensorStore::new();
        for layer in 0..cfg.n_layers {
            for which in ["q", "k", "v", "o"] {
                store.insert(names::attn(layer, which), gaussian_matrix(rng, d, d, INIT_STD), true)?;
            }
            for idx in [1, 2] {
                let mut gamma = Matrix::zeros(1, d);
                gamma.row_mut(0).fill(1.0);
                store.insert(names::ln(layer, idx, "gamma"), gamma, true)?;
                store.insert(names::ln(layer, idx, "beta"), Matrix::zeros(1, d), true)?;
            }
            store.insert(
                names::ffn(layer, "W_1"),
                gaussian_matrix(rng, cfg.d_ff, d, INIT_STD),
                true,
            )?;
            store.insert(names::ffn(layer, "b_1"), Matrix::zeros(1, cfg.d_ff), true)?;
            store.insert(
                names::ffn(layer, "W_2"),
                gaussian_matrix(rng, d, cfg.d_ff, INIT_STD),
                true,
            )?;
            store.insert(names::ffn(layer, "b_2"), Matrix::zeros(1, d), true)?;
        }
        store.insert(
            names::HEAD_WEIGHT,
            gaussian_matrix(rng, cfg.n_classes, d, INIT_STD),
            true,
        )?;
        store.insert(names::HEAD_BIAS, Matrix::zeros(1, cfg.n_classes), true)?;
        Ok(ModelParams { store })
    }

    pub fn from_store(store: TensorStore) -> Self {
        ModelParams { store }
    }

    pub fn store(&self) -> &TensorStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut TensorStore {
        &mut self.store
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.store.value(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn head_count_must_divide_width() {
        let cfg = ModelConfig {
            d_model: 10,
            n_heads: 4,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn init_creates_every_named_tensor() {
        let cfg = ModelConfig::default();
        let params = ModelParams::init(&cfg, &mut RngStream::new(0)).unwrap();
        for layer in 0..cfg.n_layers {
            for which in ["q", "k", "v", "o"] {
                assert!(params.store().contains(&names::attn(layer, which)));
            }
            assert!(params.store().contains(&names::ffn(layer, "W_1")));
            assert!(params.store().contains(&names::ln(layer, 2, "beta")));
        }
        assert!(params.store().contains(names::HEAD_WEIGHT));
        // Total scalar count for the default geometry:
        // 2 layers x (4*64^2 + 2*64*256 + 256 + 64 + 4*64) + (2*64 + 2)
        assert_eq!(params.store().total_scalars(), 99_586);
        assert_eq!(params.store().trainable_scalars(), 99_586);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(&cfg, &mut RngStream::new(5)).unwrap();
        let b = ModelParams::init(&cfg, &mut RngStream::new(5)).unwrap();
        for (x, y) in a.store().iter().zip(b.store().iter()) {
            assert_eq!(x, y);
        }
    }
}
