use super::forward::{forward_one, head_columns, loss_gradient, ExampleCache, NormCache};
use super::params::{names, ModelConfig, ModelParams};
use crate::adaptation::{AdaptationState, Target};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, matmul, matmul_nt, matmul_tn, Matrix};
use std::collections::BTreeMap;

/// Gradients keyed by tensor name. Only tensors flagged trainable appear;
/// frozen tensors have no entry at all.
#[derive(Debug, Clone, Default)]
pub struct GradientSet {
    grads: BTreeMap<String, Matrix>,
}

impl GradientSet {
    pub fn new() -> Self {
        GradientSet::default()
    }

    pub fn accumulate(&mut self, name: &str, delta: &Matrix) {
        match self.grads.get_mut(name) {
            Some(g) => g.add_scaled(delta, 1.0).expect("accumulated shapes match"),
            None => {
                self.grads.insert(name.to_string(), delta.clone());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.grads.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.grads.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.grads.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.grads.keys()
    }

    /// Largest absolute gradient entry across all tensors.
    pub fn max_abs(&self) -> f64 {
        self.grads.values().fold(0.0, |m, g| m.max(g.max_abs()))
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        let row = m.row(i);
        for (o, v) in out.row_mut(0).iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn relu_mask(grad: &Matrix, pre: &Matrix) -> Matrix {
    let mut out = grad.clone();
    for (g, p) in out.data_mut().iter_mut().zip(pre.data()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// Backward through one layer-norm application. Returns the gradient with
/// respect to the norm input and optionally accumulates gamma/beta grads.
fn norm_backward(
    cache: &NormCache,
    gamma: &Matrix,
    g_out: &Matrix,
    mut g_gamma: Option<&mut Matrix>,
    mut g_beta: Option<&mut Matrix>,
) -> Matrix {
    let (rows, cols) = g_out.shape();
    let n = cols as f64;
    let g = gamma.row(0);
    let mut g_x = Matrix::zeros(rows, cols);
    let mut g_xhat = vec![0.0; cols];
    for i in 0..rows {
        let go_row = g_out.row(i);
        let xhat_row = cache.xhat.row(i);
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for j in 0..cols {
            let gh = go_row[j] * g[j];
            g_xhat[j] = gh;
            mean_g += gh;
            mean_gx += gh * xhat_row[j];
        }
        mean_g /= n;
        mean_gx /= n;
        if let Some(gg) = g_gamma.as_deref_mut() {
            for (j, acc) in gg.row_mut(0).iter_mut().enumerate() {
                *acc += go_row[j] * xhat_row[j];
            }
        }
        if let Some(gb) = g_beta.as_deref_mut() {
            for (j, acc) in gb.row_mut(0).iter_mut().enumerate() {
                *acc += go_row[j];
            }
        }
        let inv = cache.inv_sigma[i];
        let gx_row = g_x.row_mut(i);
        for j in 0..cols {
            gx_row[j] = inv * (g_xhat[j] - mean_g - xhat_row[j] * mean_gx);
        }
    }
    g_x
}

fn place_head_grad(dst: &mut Matrix, src: &Matrix, head: usize) {
    let d_h = src.cols();
    let start = head * d_h;
    for i in 0..src.rows() {
        let dst_row = &mut dst.row_mut(i)[start..start + d_h];
        for (d, s) in dst_row.iter_mut().zip(src.row(i)) {
            *d += s;
        }
    }
}

/// Accumulates gradients from one example into `grads` and returns the
/// gradient with respect to the layer-stack input (discarded by callers,
/// but computed along the way).
fn backward_one(
    cfg: &ModelConfig,
    params: &ModelParams,
    state: &AdaptationState,
    cache: &ExampleCache,
    g_logits: &[f64],
    grads: &mut GradientSet,
) -> Result<()> {
    let store = params.store();
    let d_h = cfg.head_dim();
    let inv_sqrt_dh = 1.0 / (d_h as f64).sqrt();
    let seq = cfg.max_seq_len;

    // Head.
    let w_head = store.value(names::HEAD_WEIGHT)?;
    if store.is_trainable(names::HEAD_WEIGHT) {
        let mut g_w = Matrix::zeros(cfg.n_classes, cfg.d_model);
        for c in 0..cfg.n_classes {
            for (j, gw) in g_w.row_mut(c).iter_mut().enumerate() {
                *gw = g_logits[c] * cache.pooled[j];
            }
        }
        grads.accumulate(names::HEAD_WEIGHT, &g_w);
    }
    if store.is_trainable(names::HEAD_BIAS) {
        let g_b = Matrix::from_vec(1, cfg.n_classes, g_logits.to_vec())?;
        grads.accumulate(names::HEAD_BIAS, &g_b);
    }
    let mut g_pooled = vec![0.0; cfg.d_model];
    for c in 0..cfg.n_classes {
        for (j, gp) in g_pooled.iter_mut().enumerate() {
            *gp += g_logits[c] * w_head.get(c, j);
        }
    }

    // Mean-pool spreads the pooled gradient evenly over frames.
    let mut g_current = Matrix::zeros(seq, cfg.d_model);
    let inv_frames = 1.0 / seq as f64;
    for t in 0..seq {
        for (g, gp) in g_current.row_mut(t).iter_mut().zip(&g_pooled) {
            *g = gp * inv_frames;
        }
    }

    for (layer, lc) in cache.layers.iter().enumerate().rev() {
        // Adapter bottleneck (sits after the FFN residual).
        let g_x2 = match state.adapter_tensors(layer) {
            None => g_current,
            Some(t) => {
                let pre = lc.adapter_pre.as_ref().expect("adapter cache");
                let act = lc.adapter_act.as_ref().expect("adapter cache");
                let g_out = &g_current;
                if state.store().is_trainable(&names::adapter(layer, "W_up")) {
                    grads.accumulate(&names::adapter(layer, "W_up"), &matmul_tn(g_out, act)?);
                }
                if state.store().is_trainable(&names::adapter(layer, "b_up")) {
                    grads.accumulate(&names::adapter(layer, "b_up"), &column_sums(g_out));
                }
                let g_act = matmul(g_out, t.w_up)?;
                let g_pre = relu_mask(&g_act, pre);
                if state.store().is_trainable(&names::adapter(layer, "W_down")) {
                    grads.accumulate(&names::adapter(layer, "W_down"), &matmul_tn(&g_pre, &lc.x2)?);
                }
                if state.store().is_trainable(&names::adapter(layer, "b_down")) {
                    grads.accumulate(&names::adapter(layer, "b_down"), &column_sums(&g_pre));
                }
                let mut g_x2 = g_current.clone();
                g_x2.add_scaled(&matmul(&g_pre, t.w_down)?, 1.0)?;
                g_x2
            }
        };

        // FFN block: x2 = x1 + W_2 relu(W_1 ln2(x1) + b_1) + b_2.
        let w1_name = names::ffn(layer, "W_1");
        let w2_name = names::ffn(layer, "W_2");
        let w_1 = store.value(&w1_name)?;
        let w_2 = store.value(&w2_name)?;
        if store.is_trainable(&w2_name) {
            grads.accumulate(&w2_name, &matmul_tn(&g_x2, &lc.ffn_act)?);
        }
        if store.is_trainable(&names::ffn(layer, "b_2")) {
            grads.accumulate(&names::ffn(layer, "b_2"), &column_sums(&g_x2));
        }
        let g_ffn_act = matmul(&g_x2, w_2)?;
        let g_ffn_pre = relu_mask(&g_ffn_act, &lc.ffn_pre);
        if store.is_trainable(&w1_name) {
            grads.accumulate(&w1_name, &matmul_tn(&g_ffn_pre, &lc.ln2_out)?);
        }
        if store.is_trainable(&names::ffn(layer, "b_1")) {
            grads.accumulate(&names::ffn(layer, "b_1"), &column_sums(&g_ffn_pre));
        }
        let g_ln2_out = matmul(&g_ffn_pre, w_1)?;

        let ln2_gamma_name = names::ln(layer, 2, "gamma");
        let ln2_beta_name = names::ln(layer, 2, "beta");
        let gamma2 = store.value(&ln2_gamma_name)?;
        let mut g_gamma2 = Matrix::zeros(1, cfg.d_model);
        let mut g_beta2 = Matrix::zeros(1, cfg.d_model);
        let g_x1_from_ln = norm_backward(
            &lc.ln2,
            gamma2,
            &g_ln2_out,
            Some(&mut g_gamma2),
            Some(&mut g_beta2),
        );
        if store.is_trainable(&ln2_gamma_name) {
            grads.accumulate(&ln2_gamma_name, &g_gamma2);
        }
        if store.is_trainable(&ln2_beta_name) {
            grads.accumulate(&ln2_beta_name, &g_beta2);
        }
        let mut g_x1 = g_x2;
        g_x1.add_scaled(&g_x1_from_ln, 1.0)?;

        // Attention block: x1 = input + W_o concat(heads(q, k, v)).
        let wo_name = names::attn(layer, "o");
        let w_o = store.value(&wo_name)?;
        if store.is_trainable(&wo_name) {
            grads.accumulate(&wo_name, &matmul_tn(&g_x1, &lc.concat)?);
        }
        let g_concat = matmul(&g_x1, w_o)?;

        let mut g_q = Matrix::zeros(seq, cfg.d_model);
        let mut g_k = Matrix::zeros(seq, cfg.d_model);
        let mut g_v = Matrix::zeros(seq, cfg.d_model);
        for head in 0..cfg.n_heads {
            let probs = &lc.head_probs[head];
            let g_o_h = head_columns(&g_concat, head, d_h);
            let q_h = head_columns(&lc.q, head, d_h);
            let k_h = head_columns(&lc.k, head, d_h);
            let v_h = head_columns(&lc.v, head, d_h);

            let g_probs = matmul_nt(&g_o_h, &v_h)?;
            place_head_grad(&mut g_v, &matmul_tn(probs, &g_o_h)?, head);

            // Softmax backward per row: p * (g - <g, p>).
            let mut g_scores = Matrix::zeros(seq, seq);
            for i in 0..seq {
                let p_row = probs.row(i);
                let gp_row = g_probs.row(i);
                let dot: f64 = p_row.iter().zip(gp_row).map(|(p, g)| p * g).sum();
                for (j, gs) in g_scores.row_mut(i).iter_mut().enumerate() {
                    *gs = p_row[j] * (gp_row[j] - dot);
                }
            }
            g_scores.scale(inv_sqrt_dh);
            place_head_grad(&mut g_q, &matmul(&g_scores, &k_h)?, head);
            place_head_grad(&mut g_k, &matmul_tn(&g_scores, &q_h)?, head);
        }

        // Q/K/V projections, with the low-rank path where instrumented.
        let mut g_ln1_out = Matrix::zeros(seq, cfg.d_model);
        for (target, g_proj) in Target::ALL.into_iter().zip([&g_q, &g_k, &g_v]) {
            let w_name = names::attn(layer, target.as_str());
            let w = store.value(&w_name)?;
            if store.is_trainable(&w_name) {
                grads.accumulate(&w_name, &matmul_tn(g_proj, &lc.ln1_out)?);
            }
            if let Some((a, b, scale)) = state.lora_pair(layer, target) {
                let z = lc.lora_z[target as usize]
                    .as_ref()
                    .ok_or_else(|| Error::contract("missing lora activation cache"))?;
                let a_name = names::lora(layer, target.as_str(), "A");
                let b_name = names::lora(layer, target.as_str(), "B");
                if state.store().is_trainable(&b_name) {
                    let mut g_b = matmul_tn(g_proj, z)?;
                    g_b.scale(scale);
                    grads.accumulate(&b_name, &g_b);
                }
                let mut g_z = matmul(g_proj, b)?;
                g_z.scale(scale);
                if state.store().is_trainable(&a_name) {
                    grads.accumulate(&a_name, &matmul_tn(&g_z, &lc.ln1_out)?);
                }
                g_ln1_out.add_scaled(&matmul(&g_z, a)?, 1.0)?;
            }
            g_ln1_out.add_scaled(&matmul(g_proj, w)?, 1.0)?;
        }

        let ln1_gamma_name = names::ln(layer, 1, "gamma");
        let ln1_beta_name = names::ln(layer, 1, "beta");
        let gamma1 = store.value(&ln1_gamma_name)?;
        let mut g_gamma1 = Matrix::zeros(1, cfg.d_model);
        let mut g_beta1 = Matrix::zeros(1, cfg.d_model);
        let g_input_from_ln = norm_backward(
            &lc.ln1,
            gamma1,
            &g_ln1_out,
            Some(&mut g_gamma1),
            Some(&mut g_beta1),
        );
        if store.is_trainable(&ln1_gamma_name) {
            grads.accumulate(&ln1_gamma_name, &g_gamma1);
        }
        if store.is_trainable(&ln1_beta_name) {
            grads.accumulate(&ln1_beta_name, &g_beta1);
        }

        let mut g_input = g_x1;
        g_input.add_scaled(&g_input_from_ln, 1.0)?;
        g_current = g_input;
    }

    Ok(())
}

/// Mean cross-entropy loss over the batch and the gradient of every tensor
/// whose trainable flag is set. Frozen tensors receive no entry.
pub fn backward(
    cfg: &ModelConfig,
    params: &ModelParams,
    state: &AdaptationState,
    inputs: &[Matrix],
    labels: &[usize],
) -> Result<(f64, GradientSet)> {
    if inputs.len() != labels.len() {
        return Err(Error::shape(
            "backward",
            format!("{} inputs", inputs.len()),
            format!("{} labels", labels.len()),
        ));
    }
    if inputs.is_empty() {
        return Err(Error::domain("backward over an empty batch"));
    }
    let batch = inputs.len();
    let mut grads = GradientSet::new();
    let mut loss = 0.0;
    for (x, &label) in inputs.iter().zip(labels) {
        if label >= cfg.n_classes {
            return Err(Error::domain(format!(
                "label {label} out of range for {} classes",
                cfg.n_classes
            )));
        }
        let cache = forward_one(cfg, params, state, x)?;
        loss += (log_sum_exp(&cache.logits) - cache.logits[label]) / batch as f64;
        let g_logits = loss_gradient(&cache.logits, label, batch);
        backward_one(cfg, params, state, &cache, &g_logits, &mut grads)?;
    }
    Ok((loss, grads))
}
