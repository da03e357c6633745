use super::params::{names, ModelConfig, ModelParams, LN_EPS};
use crate::adaptation::{AdaptationState, Target};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, matmul, matmul_nt, softmax_in_place, softmax_rows, Matrix};

/// Scaled dot-product attention over row-stacked queries, keys and values:
/// `softmax(Q K^T / sqrt(d_h)) V`. The head dimension is `Q.cols()`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    if q.cols() != k.cols() {
        return Err(Error::shape("attention", q.shape_string(), k.shape_string()));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape("attention", k.shape_string(), v.shape_string()));
    }
    let mut scores = matmul_nt(q, k)?;
    scores.scale(1.0 / (q.cols() as f64).sqrt());
    let probs = softmax_rows(&scores);
    matmul(&probs, v)
}

/// Per-row layer-norm cache: the normalized values and the reciprocal of the
/// per-row standard deviation, which the backward pass reuses.
pub(crate) struct NormCache {
    pub xhat: Matrix,
    pub inv_sigma: Vec<f64>,
}

pub(crate) struct LayerCache {
    pub ln1: NormCache,
    pub ln1_out: Matrix,
    /// `ln1_out * A^T` per instrumented target, in Q, K, V order.
    pub lora_z: [Option<Matrix>; 3],
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Attention probabilities per head, each seq_len x seq_len.
    pub head_probs: Vec<Matrix>,
    /// Concatenated per-head outputs, input of the output projection.
    pub concat: Matrix,
    pub ln2: NormCache,
    pub ln2_out: Matrix,
    /// FFN hidden pre-activation (seq_len x d_ff).
    pub ffn_pre: Matrix,
    /// FFN hidden after ReLU.
    pub ffn_act: Matrix,
    /// After the FFN residual; the adapter's input when one is attached.
    pub x2: Matrix,
    /// Adapter bottleneck pre-activation / activation, when instrumented.
    pub adapter_pre: Option<Matrix>,
    pub adapter_act: Option<Matrix>,
}

pub(crate) struct ExampleCache {
    pub layers: Vec<LayerCache>,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

fn norm_rows(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> (NormCache, Matrix) {
    let (rows, cols) = x.shape();
    let mut xhat = Matrix::zeros(rows, cols);
    let mut out = Matrix::zeros(rows, cols);
    let mut inv_sigma = Vec::with_capacity(rows);
    let g = gamma.row(0);
    let b = beta.row(0);
    let n = cols as f64;
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_sigma.push(inv);
        let xhat_row = xhat.row_mut(i);
        for (j, v) in row.iter().enumerate() {
            xhat_row[j] = (v - mean) * inv;
        }
        let out_row = out.row_mut(i);
        for j in 0..cols {
            out_row[j] = xhat_row[j] * g[j] + b[j];
        }
    }
    (NormCache { xhat, inv_sigma }, out)
}

/// `x * W^T (+ lora delta)`, returning the cached `z = x * A^T` when a pair
/// is attached.
fn project(
    x: &Matrix,
    w: &Matrix,
    lora: Option<(&Matrix, &Matrix, f64)>,
) -> Result<(Matrix, Option<Matrix>)> {
    let mut out = matmul_nt(x, w)?;
    match lora {
        None => Ok((out, None)),
        Some((a, b, scale)) => {
            let z = matmul_nt(x, a)?;
            let delta = matmul_nt(&z, b)?;
            out.add_scaled(&delta, scale)?;
            Ok((out, Some(z)))
        }
    }
}

fn add_bias(m: &mut Matrix, bias: &Matrix) {
    let b = bias.row(0);
    for i in 0..m.rows() {
        for (v, bj) in m.row_mut(i).iter_mut().zip(b) {
            *v += bj;
        }
    }
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub(crate) fn head_columns(m: &Matrix, head: usize, d_h: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), d_h);
    let start = head * d_h;
    for i in 0..m.rows() {
        out.row_mut(i).copy_from_slice(&m.row(i)[start..start + d_h]);
    }
    out
}

fn place_head_columns(dst: &mut Matrix, src: &Matrix, head: usize) {
    let d_h = src.cols();
    let start = head * d_h;
    for i in 0..src.rows() {
        dst.row_mut(i)[start..start + d_h].copy_from_slice(src.row(i));
    }
}

pub(crate) fn forward_one(
    cfg: &ModelConfig,
    params: &ModelParams,
    state: &AdaptationState,
    x: &Matrix,
) -> Result<ExampleCache> {
    if x.shape() != (cfg.max_seq_len, cfg.d_model) {
        return Err(Error::shape(
            "forward",
            format!("input {}", x.shape_string()),
            format!("expected {}x{}", cfg.max_seq_len, cfg.d_model),
        ));
    }
    let d_h = cfg.head_dim();
    let inv_sqrt_dh = 1.0 / (d_h as f64).sqrt();
    let store = params.store();

    let mut layers = Vec::with_capacity(cfg.n_layers);
    let mut current = x.clone();
    for layer in 0..cfg.n_layers {
        let (ln1, ln1_out) = norm_rows(
            &current,
            store.value(&names::ln(layer, 1, "gamma"))?,
            store.value(&names::ln(layer, 1, "beta"))?,
        );

        let mut lora_z: [Option<Matrix>; 3] = [None, None, None];
        let mut projected = Vec::with_capacity(3);
        for (slot, target) in Target::ALL.into_iter().enumerate() {
            let w = store.value(&names::attn(layer, target.as_str()))?;
            let (out, z) = project(&ln1_out, w, state.lora_pair(layer, target))?;
            lora_z[slot] = z;
            projected.push(out);
        }
        let v = projected.pop().expect("three projections");
        let k = projected.pop().expect("three projections");
        let q = projected.pop().expect("three projections");

        let mut head_probs = Vec::with_capacity(cfg.n_heads);
        let mut concat = Matrix::zeros(cfg.max_seq_len, cfg.d_model);
        for head in 0..cfg.n_heads {
            let q_h = head_columns(&q, head, d_h);
            let k_h = head_columns(&k, head, d_h);
            let v_h = head_columns(&v, head, d_h);
            let mut scores = matmul_nt(&q_h, &k_h)?;
            scores.scale(inv_sqrt_dh);
            let probs = softmax_rows(&scores);
            let out_h = matmul(&probs, &v_h)?;
            place_head_columns(&mut concat, &out_h, head);
            head_probs.push(probs);
        }
        let attn_out = matmul_nt(&concat, store.value(&names::attn(layer, "o"))?)?;

        let mut x1 = current;
        x1.add_scaled(&attn_out, 1.0)?;

        let (ln2, ln2_out) = norm_rows(
            &x1,
            store.value(&names::ln(layer, 2, "gamma"))?,
            store.value(&names::ln(layer, 2, "beta"))?,
        );
        let mut ffn_pre = matmul_nt(&ln2_out, store.value(&names::ffn(layer, "W_1"))?)?;
        add_bias(&mut ffn_pre, store.value(&names::ffn(layer, "b_1"))?);
        let ffn_act = relu(&ffn_pre);
        let mut ffn_out = matmul_nt(&ffn_act, store.value(&names::ffn(layer, "W_2"))?)?;
        add_bias(&mut ffn_out, store.value(&names::ffn(layer, "b_2"))?);

        let mut x2 = x1.clone();
        x2.add_scaled(&ffn_out, 1.0)?;

        let (adapter_pre, adapter_act, output) = match state.adapter_tensors(layer) {
            None => (None, None, x2.clone()),
            Some(t) => {
                let mut pre = matmul_nt(&x2, t.w_down)?;
                add_bias(&mut pre, t.b_down);
                let act = relu(&pre);
                let mut up = matmul_nt(&act, t.w_up)?;
                add_bias(&mut up, t.b_up);
                let mut out = x2.clone();
                out.add_scaled(&up, 1.0)?;
                (Some(pre), Some(act), out)
            }
        };

        current = output;
        layers.push(LayerCache {
            ln1,
            ln1_out,
            lora_z,
            q,
            k,
            v,
            head_probs,
            concat,
            ln2,
            ln2_out,
            ffn_pre,
            ffn_act,
            x2,
            adapter_pre,
            adapter_act,
        });
    }

    // Mean-pool over frames, then the linear head.
    let frames = cfg.max_seq_len as f64;
    let mut pooled = vec![0.0; cfg.d_model];
    for t in 0..cfg.max_seq_len {
        for (p, v) in pooled.iter_mut().zip(current.row(t)) {
            *p += v;
        }
    }
    for p in &mut pooled {
        *p /= frames;
    }
    let w_head = store.value(names::HEAD_WEIGHT)?;
    let b_head = store.value(names::HEAD_BIAS)?;
    let logits: Vec<f64> = (0..cfg.n_classes)
        .map(|c| {
            w_head
                .row(c)
                .iter()
                .zip(&pooled)
                .map(|(w, p)| w * p)
                .sum::<f64>()
                + b_head.row(0)[c]
        })
        .collect();

    Ok(ExampleCache {
        layers,
        pooled,
        logits,
    })
}

/// Runs the encoder over a batch of sequences (each already fitted to
/// `max_seq_len` frames) and returns the logits, one row per example.
pub fn forward(
    cfg: &ModelConfig,
    params: &ModelParams,
    state: &AdaptationState,
    inputs: &[Matrix],
) -> Result<Matrix> {
    let mut logits = Matrix::zeros(inputs.len(), cfg.n_classes);
    for (i, x) in inputs.iter().enumerate() {
        let cache = forward_one(cfg, params, state, x)?;
        logits.row_mut(i).copy_from_slice(&cache.logits);
    }
    Ok(logits)
}

/// Mean negative log-likelihood of the labels under the row-softmax of the
/// logits, in nats.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} logit rows", logits.rows()),
            format!("{} labels", labels.len()),
        ));
    }
    if labels.is_empty() {
        return Err(Error::domain("cross_entropy over an empty batch"));
    }
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        if label >= row.len() {
            return Err(Error::domain(format!(
                "label {label} out of range for {} classes",
                row.len()
            )));
        }
        total += log_sum_exp(row) - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Per-row softmax gradient seed for the mean cross-entropy loss:
/// `(softmax(logits) - onehot(label)) / batch`.
pub(crate) fn loss_gradient(logits_row: &[f64], label: usize, batch: usize) -> Vec<f64> {
    let mut g = logits_row.to_vec();
    softmax_in_place(&mut g);
    g[label] -= 1.0;
    let inv = 1.0 / batch as f64;
    for v in &mut g {
        *v *= inv;
    }
    g
}
