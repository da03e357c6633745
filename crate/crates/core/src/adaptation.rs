//! Adaptation methods over a frozen backbone.
//!
//! LoRA replaces the update of a projection `W` by a trainable low-rank pair:
//! the adapted output is `Wx + (alpha/r) * B(Ax)` with `A` of shape `r x d`
//! and `B` of shape `d x r`, while `W` itself stays frozen. With `B`
//! initialized to zero the adapted model starts out exactly equal to the
//! frozen one, and after training the product can be folded back into `W`,
//! so inference pays nothing for the adaptation.
//!
//! The adapter baseline inserts a bottleneck (down-projection, ReLU,
//! up-projection, residual) after each feed-forward block. `Fixed` trains
//! the classification head only; `FullFinetune` trains everything.

use crate::error::{Error, Result};
use crate::model::{names, ModelConfig, ModelParams, TensorStore};
use crate::numerics::{matmul, Matrix, RngStream};
use serde::{Deserialize, Serialize};

/// Attention projection a LoRA pair can attach to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Q,
    K,
    V,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Q, Target::K, Target::V];

    pub fn as_str(&self) -> &'static str {
        match self {
            Target::Q => "q",
            Target::K => "k",
            Target::V => "v",
        }
    }
}

/// Non-empty subset of `{Q, K, V}`, kept in canonical Q, K, V order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetSet {
    q: bool,
    k: bool,
    v: bool,
}

impl TargetSet {
    pub fn new(targets: &[Target]) -> Self {
        let mut s = TargetSet {
            q: false,
            k: false,
            v: false,
        };
        for t in targets {
            match t {
                Target::Q => s.q = true,
                Target::K => s.k = true,
                Target::V => s.v = true,
            }
        }
        s
    }

    /// The default from the ablation sweet spot: query and value.
    pub fn qv() -> Self {
        TargetSet::new(&[Target::Q, Target::V])
    }

    pub fn contains(&self, t: Target) -> bool {
        match t {
            Target::Q => self.q,
            Target::K => self.k,
            Target::V => self.v,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Target> + '_ {
        Target::ALL.into_iter().filter(|t| self.contains(*t))
    }

    pub fn len(&self) -> usize {
        [self.q, self.k, self.v].iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for TargetSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for t in self.iter() {
            if !first {
                f.write_str(",")?;
            }
            f.write_str(t.as_str())?;
            first = false;
        }
        Ok(())
    }
}

impl std::str::FromStr for TargetSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = TargetSet::new(&[]);
        for part in s.split(',') {
            match part.trim().to_ascii_lowercase().as_str() {
                "q" => set.q = true,
                "k" => set.k = true,
                "v" => set.v = true,
                other => {
                    return Err(Error::config(format!(
                        "unknown target {other:?}, expected a subset of q,k,v"
                    )))
                }
            }
        }
        if set.is_empty() {
            return Err(Error::config("target set must not be empty"));
        }
        Ok(set)
    }
}

impl Serialize for TargetSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TargetSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rank, scaling and injection sites for LoRA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    /// The low-rank contribution is scaled by `alpha / rank`; with
    /// `alpha == rank` (the default) the contribution enters unscaled.
    pub alpha: f64,
    pub targets: TargetSet,
}

impl LoraConfig {
    pub fn new(rank: usize) -> Self {
        LoraConfig {
            rank,
            alpha: rank as f64,
            targets: TargetSet::qv(),
        }
    }

    pub fn with_targets(mut self, targets: TargetSet) -> Self {
        self.targets = targets;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Which parameters a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdaptationMethod {
    /// Backbone frozen, classification head only.
    Fixed,
    /// Everything trainable.
    FullFinetune,
    Lora(LoraConfig),
    /// Bottleneck adapters of the given inner width after each FFN block.
    Adapter { bottleneck: usize },
}

impl AdaptationMethod {
    pub fn label(&self) -> String {
        match self {
            AdaptationMethod::Fixed => "fixed".into(),
            AdaptationMethod::FullFinetune => "finetune".into(),
            AdaptationMethod::Lora(cfg) => {
                format!("lora(r={},targets={})", cfg.rank, cfg.targets)
            }
            AdaptationMethod::Adapter { bottleneck } => format!("adapter(m={bottleneck})"),
        }
    }
}

/// The trainable tensors a method attaches to the model, plus the method
/// descriptor itself. Base-parameter trainability is flagged on
/// [`ModelParams`] directly; this store holds only the new tensors.
#[derive(Debug, Clone)]
pub struct AdaptationState {
    method: AdaptationMethod,
    store: TensorStore,
}

impl AdaptationState {
    pub fn method(&self) -> &AdaptationMethod {
        &self.method
    }

    pub fn store(&self) -> &TensorStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut TensorStore {
        &mut self.store
    }

    /// Rebuilds a state from a method descriptor and tensors loaded from a
    /// delta checkpoint.
    pub fn from_parts(method: AdaptationMethod, store: TensorStore) -> Self {
        AdaptationState { method, store }
    }

    pub fn lora_config(&self) -> Option<&LoraConfig> {
        match &self.method {
            AdaptationMethod::Lora(cfg) => Some(cfg),
            _ => None,
        }
    }

    /// The `(A, B, scale)` triple for one injection site, if instrumented.
    pub fn lora_pair(&self, layer: usize, target: Target) -> Option<(&Matrix, &Matrix, f64)> {
        let cfg = self.lora_config()?;
        if !cfg.targets.contains(target) {
            return None;
        }
        let a = &self.store.get(&names::lora(layer, target.as_str(), "A"))?.value;
        let b = &self.store.get(&names::lora(layer, target.as_str(), "B"))?.value;
        Some((a, b, cfg.scale()))
    }

    /// Adapter tensors `(W_down, b_down, W_up, b_up)` for one layer.
    pub fn adapter_tensors(&self, layer: usize) -> Option<AdapterTensors<'_>> {
        if !matches!(self.method, AdaptationMethod::Adapter { .. }) {
            return None;
        }
        Some(AdapterTensors {
            w_down: &self.store.get(&names::adapter(layer, "W_down"))?.value,
            b_down: &self.store.get(&names::adapter(layer, "b_down"))?.value,
            w_up: &self.store.get(&names::adapter(layer, "W_up"))?.value,
            b_up: &self.store.get(&names::adapter(layer, "b_up"))?.value,
        })
    }
}

pub struct AdapterTensors<'a> {
    pub w_down: &'a Matrix,
    pub b_down: &'a Matrix,
    pub w_up: &'a Matrix,
    pub b_up: &'a Matrix,
}

/// Adapted projection of a single vector: `Wx + (alpha/r) * B(Ax)`, computed
/// as two small matrix-vector products. `BA` is never materialized.
pub fn lora_forward(w: &Matrix, a: &Matrix, b: &Matrix, alpha: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_lora_shapes("lora_forward", w, a, b)?;
    if x.len() != w.cols() {
        return Err(Error::shape(
            "lora_forward",
            w.shape_string(),
            format!("x len {}", x.len()),
        ));
    }
    let rank = a.rows();
    let scale = alpha / rank as f64;

    let mut out = mat_vec(w, x);
    let ax = mat_vec(a, x);
    for (i, o) in out.iter_mut().enumerate() {
        let mut delta = 0.0;
        for (r, axr) in ax.iter().enumerate() {
            delta += b.get(i, r) * axr;
        }
        *o += scale * delta;
    }
    Ok(out)
}

/// Folds the low-rank update into the base matrix:
/// `W' = W + (alpha/r) * B * A`, so `W'x == lora_forward(W, A, B, alpha, x)`.
pub fn lora_merge(w: &Matrix, a: &Matrix, b: &Matrix, alpha: f64) -> Result<Matrix> {
    check_lora_shapes("lora_merge", w, a, b)?;
    let rank = a.rows();
    let scale = alpha / rank as f64;
    let mut merged = w.clone();
    let delta = matmul(b, a)?;
    merged.add_scaled(&delta, scale)?;
    Ok(merged)
}

fn check_lora_shapes(op: &'static str, w: &Matrix, a: &Matrix, b: &Matrix) -> Result<()> {
    let (d_out, d_in) = w.shape();
    if b.shape() != (d_out, a.rows()) || a.cols() != d_in {
        return Err(Error::shape(
            op,
            format!("W {}", w.shape_string()),
            format!("B {} / A {}", b.shape_string(), a.shape_string()),
        ));
    }
    if a.rows() == 0 {
        return Err(Error::shape(op, "rank 0 decomposition", w.shape_string()));
    }
    Ok(())
}

fn mat_vec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
        .collect()
}

/// Sets the base-parameter trainability flags for a method: everything for
/// full fine-tuning, head-only for the rest.
pub fn apply_flags(params: &mut ModelParams, method: &AdaptationMethod) {
    let all = matches!(method, AdaptationMethod::FullFinetune);
    params.store_mut().set_all_trainable(all);
    // The classification head is the downstream task surface and always
    // receives gradients.
    params.store_mut().set_trainable(names::HEAD_WEIGHT, true).expect("head exists");
    params.store_mut().set_trainable(names::HEAD_BIAS, true).expect("head exists");
}

/// Attaches a method to a model: flags the base parameters and creates the
/// method's trainable tensors. LoRA pairs start with `A` gaussian of std
/// `1/sqrt(r)` and `B` zero, so the adapted model initially equals the
/// frozen one. Adapter projections start gaussian with std 0.02 and zero
/// biases.
pub fn instrument(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    method: &AdaptationMethod,
    rng: &mut RngStream,
) -> Result<AdaptationState> {
    cfg.validate()?;
    let mut store = TensorStore::new();
    match method {
        AdaptationMethod::Fixed | AdaptationMethod::FullFinetune => {}
        AdaptationMethod::Lora(lora) => {
            if lora.rank == 0 || lora.rank > cfg.d_model {
                return Err(Error::config(format!(
                    "lora rank {} outside 1..={}",
                    lora.rank, cfg.d_model
                )));
            }
            if lora.targets.is_empty() {
                return Err(Error::config("lora target set must not be empty"));
            }
            if lora.alpha <= 0.0 {
                return Err(Error::config("lora alpha must be positive"));
            }
            let std = 1.0 / (lora.rank as f64).sqrt();
            for layer in 0..cfg.n_layers {
                for target in lora.targets.iter() {
                    let a_data = (0..lora.rank * cfg.d_model)
                        .map(|_| rng.next_gaussian() * std)
                        .collect();
                    let a = Matrix::from_vec(lora.rank, cfg.d_model, a_data)?;
                    store.insert(names::lora(layer, target.as_str(), "A"), a, true)?;
                    store.insert(
                        names::lora(layer, target.as_str(), "B"),
                        Matrix::zeros(cfg.d_model, lora.rank),
                        true,
                    )?;
                }
            }
        }
        AdaptationMethod::Adapter { bottleneck } => {
            let m = *bottleneck;
            if m == 0 || m > cfg.d_ff {
                return Err(Error::config(format!(
                    "adapter bottleneck {m} outside 1..={}",
                    cfg.d_ff
                )));
            }
            for layer in 0..cfg.n_layers {
                let w_down_data = (0..m * cfg.d_model)
                    .map(|_| rng.next_gaussian() * 0.02)
                    .collect();
                store.insert(
                    names::adapter(layer, "W_down"),
                    Matrix::from_vec(m, cfg.d_model, w_down_data)?,
                    true,
                )?;
                store.insert(names::adapter(layer, "b_down"), Matrix::zeros(1, m), true)?;
                let w_up_data = (0..cfg.d_model * m)
                    .map(|_| rng.next_gaussian() * 0.02)
                    .collect();
                store.insert(
                    names::adapter(layer, "W_up"),
                    Matrix::from_vec(cfg.d_model, m, w_up_data)?,
                    true,
                )?;
                store.insert(
                    names::adapter(layer, "b_up"),
                    Matrix::zeros(1, cfg.d_model),
                    true,
                )?;
            }
        }
    }
    apply_flags(params, method);
    Ok(AdaptationState {
        method: *method,
        store,
    })
}

/// Parameter accounting for one instrumented model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParamReport {
    pub total: usize,
    pub trainable: usize,
    pub frozen: usize,
    /// `trainable(full finetune) / trainable(this method)`.
    pub ratio: f64,
}

pub fn count_params(params: &ModelParams, state: &AdaptationState) -> ParamReport {
    let base_total = params.store().total_scalars();
    let total = base_total + state.store().total_scalars();
    let trainable = params.store().trainable_scalars() + state.store().trainable_scalars();
    ParamReport {
        total,
        trainable,
        frozen: total - trainable,
        ratio: base_total as f64 / trainable as f64,
    }
}

/// Folds every LoRA pair into its base projection, leaving a plain model
/// whose forward pass no longer needs the adaptation tensors.
pub fn merge_into_params(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    state: &AdaptationState,
) -> Result<()> {
    let Some(lora) = state.lora_config() else {
        return Err(Error::contract(format!(
            "merge requires a lora state, got {}",
            state.method.label()
        )));
    };
    for layer in 0..cfg.n_layers {
        for target in lora.targets.iter() {
            let (a, b, _) = state
                .lora_pair(layer, target)
                .ok_or_else(|| Error::contract(format!("missing lora pair at layer {layer}")))?;
            let name = names::attn(layer, target.as_str());
            let merged = lora_merge(params.tensor(&name)?, a, b, lora.alpha)?;
            params.store_mut().get_mut(&name).expect("checked above").value = merged;
        }
    }
    Ok(())
}
