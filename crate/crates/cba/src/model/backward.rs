//! Manual backpropagation through the forward pass.
//!
//! The adapter path receives two gradient sources: a gradient on the output
//! logits (the character loss) and a direct gradient on the attention matrix
//! (guidance and balance losses). Both are pushed back into the trainable
//! adapter parameters; the backbone stays frozen, so gradients stop at
//! H_aco.

use super::{lstm_backward, AdapterParams, BackboneParams, ForwardCache};
use crate::numerics::Tensor2;

/// Row-wise softmax backward: given the softmax output `p` and a gradient
/// `dp` on it, return the gradient on the pre-softmax logits.
pub fn softmax_backward_rows(p: &Tensor2, dp: &Tensor2) -> Tensor2 {
    assert_eq!((p.rows(), p.cols()), (dp.rows(), dp.cols()));
    let mut out = Tensor2::zeros(p.rows(), p.cols());
    for t in 0..p.rows() {
        let pr = p.row(t);
        let dr = dp.row(t);
        let inner: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for (o, (&pv, &dv)) in out.row_mut(t).iter_mut().zip(pr.iter().zip(dr)) {
            *o = pv * (dv - inner);
        }
    }
    out
}

/// Backpropagate through the adapter. `d_logits` is the gradient on
/// `cache.logits` (already scaled by its loss weight), `d_attention` the
/// direct gradient on `cache.attention` (likewise scaled). Either may be
/// absent. Returns the parameter gradients in an
/// [`AdapterParams`]-shaped container.
pub fn adapter_backward(
    cache: &ForwardCache,
    d_logits: Option<&Tensor2>,
    d_attention: Option<&Tensor2>,
    backbone: &BackboneParams,
    adapter: &AdapterParams,
) -> AdapterParams {
    let d = adapter.width();
    let t_frames = cache.attention.rows();
    let s_hat = cache.attention.cols();
    let mut grads = adapter.zeros_like();

    let mut d_att = match d_attention {
        Some(da) => da.clone(),
        None => Tensor2::zeros(t_frames, s_hat),
    };
    let mut d_v = Tensor2::zeros(s_hat, d);

    if let Some(dl) = d_logits {
        // logits = H_fused * head_weight + bias; fusion is additive, so the
        // biasing matrix receives dH_fused unchanged.
        let d_b = dl.matmul_transpose_b(&backbone.head_weight);
        d_v = cache.attention.matmul_transpose_a(&d_b);
        d_att.add_assign(&d_b.matmul_transpose_b(&cache.v));
    }

    // Through the attention softmax into the scaled scores.
    let d_scores = softmax_backward_rows(&cache.attention, &d_att);
    let scale = 1.0 / (d as f64).sqrt();
    let mut d_q = d_scores.matmul(&cache.k);
    d_q.scale(scale);
    let mut d_k = d_scores.matmul_transpose_a(&cache.q);
    d_k.scale(scale);

    grads.w_q = cache.h_aco.matmul_transpose_a(&d_q);
    grads.w_k = cache.h_ctx.matmul_transpose_a(&d_k);
    grads.w_v = cache.h_ctx.matmul_transpose_a(&d_v);

    // dH_ctx = dK W_K^T + dV W_V^T; H_aco belongs to the frozen backbone.
    let mut d_hctx = d_k.matmul_transpose_b(&adapter.w_k);
    d_hctx.add_assign(&d_v.matmul_transpose_b(&adapter.w_v));

    for (g, &v) in grads
        .no_context_embed
        .iter_mut()
        .zip(d_hctx.row(0).iter())
    {
        *g += v;
    }

    let h = adapter.lstm_hidden();
    for s in 1..s_hat {
        let entry = cache.ctx_caches[s]
            .as_ref()
            .expect("context cache for non-sentinel entry");
        let d_row = d_hctx.row(s);

        // Projection: row = cat * proj + bias.
        for (gb, &dv) in grads.proj_bias.iter_mut().zip(d_row) {
            *gb += dv;
        }
        let mut d_cat = vec![0.0; 2 * h];
        for (j, (&c, dc)) in entry.cat.iter().zip(d_cat.iter_mut()).enumerate() {
            let proj_row = adapter.proj.row(j);
            let g_row = grads.proj.row_mut(j);
            let mut acc = 0.0;
            for ((g, &p), &dv) in g_row.iter_mut().zip(proj_row).zip(d_row) {
                *g += c * dv;
                acc += p * dv;
            }
            *dc = acc;
        }

        let embeds: Vec<&[f64]> = entry
            .char_ids
            .iter()
            .map(|&i| adapter.char_embed.row(i))
            .collect();
        let char_ids = &entry.char_ids;
        let char_grads = &mut grads.char_embed;
        // Forward direction reads the characters left to right.
        lstm_backward(
            &adapter.lstm_fwd,
            &entry.fwd_steps,
            &embeds,
            &d_cat[..h],
            &mut grads.lstm_fwd,
            |t, dx| accumulate_row(char_grads, char_ids[t], dx),
        );
        // Backward direction reads them reversed; step t consumed the
        // character at position len-1-t.
        let rev: Vec<&[f64]> = embeds.iter().rev().copied().collect();
        let last = char_ids.len() - 1;
        lstm_backward(
            &adapter.lstm_bwd,
            &entry.bwd_steps,
            &rev,
            &d_cat[h..],
            &mut grads.lstm_bwd,
            |t, dx| accumulate_row(char_grads, char_ids[last - t], dx),
        );
    }
    grads
}

fn accumulate_row(t: &mut Tensor2, row: usize, values: &[f64]) {
    for (g, &v) in t.row_mut(row).iter_mut().zip(values) {
        *g += v;
    }
}

/// Backpropagate the pretraining path (no adapter), where
/// logits = tanh(frames W_e + b_e) W_h + b_h. Returns gradients in a
/// [`BackboneParams`]-shaped container.
pub fn backbone_backward(
    frames: &Tensor2,
    h_aco: &Tensor2,
    d_logits: &Tensor2,
    backbone: &BackboneParams,
) -> BackboneParams {
    let mut grads = BackboneParams {
        enc_weight: Tensor2::zeros(backbone.enc_weight.rows(), backbone.enc_weight.cols()),
        enc_bias: vec![0.0; backbone.enc_bias.len()],
        head_weight: Tensor2::zeros(backbone.head_weight.rows(), backbone.head_weight.cols()),
        head_bias: vec![0.0; backbone.head_bias.len()],
    };
    grads.head_weight = h_aco.matmul_transpose_a(d_logits);
    for t in 0..d_logits.rows() {
        for (g, &v) in grads.head_bias.iter_mut().zip(d_logits.row(t)) {
            *g += v;
        }
    }
    let d_h = d_logits.matmul_transpose_b(&backbone.head_weight);
    // Through tanh.
    let mut d_pre = d_h;
    for (dp, &hv) in d_pre.data_mut().iter_mut().zip(h_aco.data()) {
        *dp *= 1.0 - hv * hv;
    }
    grads.enc_weight = frames.matmul_transpose_a(&d_pre);
    for t in 0..d_pre.rows() {
        for (g, &v) in grads.enc_bias.iter_mut().zip(d_pre.row(t)) {
            *g += v;
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, softmax_rows, RngStream};

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = RngStream::new(12);
        let logits = Tensor2::from_fn(3, 4, |_, _| rng.gaussian());
        let dp = Tensor2::from_fn(3, 4, |_, _| rng.gaussian());

        let mut p = logits.clone();
        softmax_rows(&mut p).unwrap();
        let dl = softmax_backward_rows(&p, &dp);

        let loss = |theta: &[f64]| {
            let mut m = Tensor2::from_vec(3, 4, theta.to_vec()).unwrap();
            softmax_rows(&mut m).unwrap();
            Ok(m.data().iter().zip(dp.data()).map(|(a, b)| a * b).sum())
        };
        let err = grad_check(loss, dl.data(), logits.data(), 1e-6).unwrap();
        assert!(err < 1e-7, "softmax backward err {err}");
    }
}
