//! The frozen toy backbone (affine-tanh acoustic encoder + character-CTC
//! head) and the trainable contextual adapter (BiLSTM context encoder,
//! scaled dot-product cross-attention, additive biasing fusion).

mod backward;
mod lstm;

pub use backward::{adapter_backward, backbone_backward, softmax_backward_rows};
pub use lstm::{lstm_backward, lstm_forward, LstmParams, LstmStep};

use crate::context::ContextSubset;
use crate::corpus::char_index;
use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, RngStream, Tensor2};

/// Architecture dimensions shared by backbone and adapter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Model width D: acoustic/context embedding size.
    pub width: usize,
    /// Character embedding size E in the context encoder.
    pub char_embed_dim: usize,
    /// BiLSTM hidden size h per direction.
    pub lstm_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 32,
            char_embed_dim: 16,
            lstm_hidden: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("model.width", self.width),
            ("model.char_embed_dim", self.char_embed_dim),
            ("model.lstm_hidden", self.lstm_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Frozen recognizer: affine + tanh encoder and a linear character head
/// whose last column is the character blank.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    /// Encoder weights (feature_dim x D).
    pub enc_weight: Tensor2,
    pub enc_bias: Vec<f64>,
    /// Head weights (D x charset_size + 1).
    pub head_weight: Tensor2,
    pub head_bias: Vec<f64>,
}

impl BackboneParams {
    pub fn init(feature_dim: usize, width: usize, charset_size: usize, rng: &mut RngStream) -> Self {
        let enc_weight = Tensor2::from_fn(feature_dim, width, |_, _| rng.gaussian() * 0.1);
        let enc_bias = vec![0.0; width];
        let head_weight = Tensor2::from_fn(width, charset_size + 1, |_, _| rng.gaussian() * 0.1);
        let head_bias = vec![0.0; charset_size + 1];
        BackboneParams {
            enc_weight,
            enc_bias,
            head_weight,
            head_bias,
        }
    }

    pub fn width(&self) -> usize {
        self.enc_weight.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.enc_weight.rows()
    }

    /// Number of output classes including the blank.
    pub fn n_classes(&self) -> usize {
        self.head_weight.cols()
    }

    /// Index of the character blank (last column).
    pub fn blank(&self) -> usize {
        self.n_classes() - 1
    }
}

/// Trainable adapter parameters: the only weights updated during adapter
/// training.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// Character embeddings (charset_size x E).
    pub char_embed: Tensor2,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    /// Context projection (2h x D).
    pub proj: Tensor2,
    pub proj_bias: Vec<f64>,
    /// Embedding of the `<no-context>` sentinel (length D).
    pub no_context_embed: Vec<f64>,
    pub w_q: Tensor2,
    pub w_k: Tensor2,
    pub w_v: Tensor2,
}

impl AdapterParams {
    /// Character embeddings and LSTM weights start at sigma 0.1 (forget
    /// bias 1.0); the projection and attention maps start at unit scale so
    /// the initial attention logits are O(1) instead of vanishing, which is
    /// what makes the guidance objective bite within the short training
    /// budget.
    pub fn init(charset_size: usize, cfg: &ModelConfig, rng: &mut RngStream) -> Self {
        let d = cfg.width;
        let e = cfg.char_embed_dim;
        let h = cfg.lstm_hidden;
        let gauss = |rng: &mut RngStream, rows, cols: usize, sigma: f64| {
            Tensor2::from_fn(rows, cols, |_, _| rng.gaussian() * sigma)
        };
        AdapterParams {
            char_embed: gauss(rng, charset_size, e, 0.1),
            lstm_fwd: LstmParams::init(e, h, rng),
            lstm_bwd: LstmParams::init(e, h, rng),
            proj: gauss(rng, 2 * h, d, 1.0),
            proj_bias: vec![0.0; d],
            no_context_embed: (0..d).map(|_| rng.gaussian() * 0.3).collect(),
            w_q: gauss(rng, d, d, 2.0),
            w_k: gauss(rng, d, d, 2.0),
            w_v: gauss(rng, d, d, 1.0),
        }
    }

    pub fn zeros_like(&self) -> Self {
        AdapterParams {
            char_embed: Tensor2::zeros(self.char_embed.rows(), self.char_embed.cols()),
            lstm_fwd: self.lstm_fwd.zeros_like(),
            lstm_bwd: self.lstm_bwd.zeros_like(),
            proj: Tensor2::zeros(self.proj.rows(), self.proj.cols()),
            proj_bias: vec![0.0; self.proj_bias.len()],
            no_context_embed: vec![0.0; self.no_context_embed.len()],
            w_q: Tensor2::zeros(self.w_q.rows(), self.w_q.cols()),
            w_k: Tensor2::zeros(self.w_k.rows(), self.w_k.cols()),
            w_v: Tensor2::zeros(self.w_v.rows(), self.w_v.cols()),
        }
    }

    pub fn width(&self) -> usize {
        self.w_q.rows()
    }

    pub fn lstm_hidden(&self) -> usize {
        self.lstm_fwd.hidden()
    }
}

/// Per-entry context-encoder activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EntryCache {
    pub char_ids: Vec<usize>,
    pub fwd_steps: Vec<LstmStep>,
    pub bwd_steps: Vec<LstmStep>,
    /// Concatenated [fwd last hidden ; bwd last hidden], length 2h.
    pub cat: Vec<f64>,
}

/// Every intermediate tensor of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub h_aco: Tensor2,
    pub h_ctx: Tensor2,
    /// Attention P(c_s | x_t), (T x S_hat); rows sum to 1.
    pub attention: Tensor2,
    pub b_aco: Tensor2,
    /// H_aco + B_aco.
    pub h_fused: Tensor2,
    /// (T x charset_size + 1).
    pub logits: Tensor2,
    pub(crate) q: Tensor2,
    pub(crate) k: Tensor2,
    pub(crate) v: Tensor2,
    pub(crate) ctx_caches: Vec<Option<EntryCache>>,
}

/// H_aco[t] = tanh(frames[t] * enc_weight + enc_bias).
pub fn encode_acoustic(frames: &Tensor2, backbone: &BackboneParams) -> Result<Tensor2> {
    if frames.cols() != backbone.feature_dim() {
        return Err(Error::DimensionMismatch {
            context: "encode_acoustic",
            expected: format!("{} feature columns", backbone.feature_dim()),
            got: format!("{}", frames.cols()),
        });
    }
    let mut h = frames.matmul(&backbone.enc_weight);
    h.add_row_vector(&backbone.enc_bias);
    for v in h.data_mut() {
        *v = v.tanh();
    }
    Ok(h)
}

/// Character logits of the frozen head for a (fused or raw) encoding.
pub fn head_logits(h: &Tensor2, backbone: &BackboneParams) -> Tensor2 {
    let mut logits = h.matmul(&backbone.head_weight);
    logits.add_row_vector(&backbone.head_bias);
    logits
}

/// Encode the subset entries: row 0 is the `<no-context>` embedding, row
/// s > 0 the projected BiLSTM encoding of the entry word's characters.
pub fn encode_context(
    subset: &ContextSubset,
    adapter: &AdapterParams,
) -> Result<(Tensor2, Vec<Option<EntryCache>>)> {
    let d = adapter.width();
    let charset_size = adapter.char_embed.rows();
    let mut h_ctx = Tensor2::zeros(subset.len(), d);
    let mut caches: Vec<Option<EntryCache>> = Vec::with_capacity(subset.len());

    h_ctx.row_mut(0).copy_from_slice(&adapter.no_context_embed);
    caches.push(None);

    for (s, word) in subset.entries.iter().enumerate().skip(1) {
        let char_ids: Vec<usize> = word
            .chars()
            .map(|c| char_index(c, charset_size))
            .collect::<Result<_>>()?;
        let embeds: Vec<&[f64]> = char_ids.iter().map(|&i| adapter.char_embed.row(i)).collect();
        let (fwd_steps, h_fwd) = lstm_forward(&adapter.lstm_fwd, &embeds);
        let rev: Vec<&[f64]> = embeds.iter().rev().copied().collect();
        let (bwd_steps, h_bwd) = lstm_forward(&adapter.lstm_bwd, &rev);

        let mut cat = h_fwd;
        cat.extend_from_slice(&h_bwd);
        let row = h_ctx.row_mut(s);
        row.copy_from_slice(&adapter.proj_bias);
        for (j, &c) in cat.iter().enumerate() {
            if c != 0.0 {
                for (r, &p) in row.iter_mut().zip(adapter.proj.row(j)) {
                    *r += c * p;
                }
            }
        }
        caches.push(Some(EntryCache {
            char_ids,
            fwd_steps,
            bwd_steps,
            cat,
        }));
    }
    Ok((h_ctx, caches))
}

/// Scaled dot-product cross-attention and additive fusion.
/// Returns (attention, B_aco, H_fused, Q, K, V).
pub fn cross_attend(
    h_aco: &Tensor2,
    h_ctx: &Tensor2,
    adapter: &AdapterParams,
) -> Result<(Tensor2, Tensor2, Tensor2, Tensor2, Tensor2, Tensor2)> {
    let d = adapter.width();
    if h_aco.cols() != d || h_ctx.cols() != d {
        return Err(Error::DimensionMismatch {
            context: "cross_attend",
            expected: format!("width {d}"),
            got: format!("{} / {}", h_aco.cols(), h_ctx.cols()),
        });
    }
    if h_ctx.rows() == 0 {
        return Err(Error::EmptyDistribution);
    }
    let q = h_aco.matmul(&adapter.w_q);
    let k = h_ctx.matmul(&adapter.w_k);
    let v = h_ctx.matmul(&adapter.w_v);

    let mut attention = q.matmul_transpose_b(&k);
    attention.scale(1.0 / (d as f64).sqrt());
    softmax_rows(&mut attention)?;

    let b_aco = attention.matmul(&v);
    let h_fused = h_aco.add(&b_aco);
    Ok((attention, b_aco, h_fused, q, k, v))
}

/// Full forward pass; the cache retains every intermediate for
/// backpropagation and diagnostics.
pub fn forward_full(
    frames: &Tensor2,
    subset: &ContextSubset,
    backbone: &BackboneParams,
    adapter: &AdapterParams,
) -> Result<ForwardCache> {
    let h_aco = encode_acoustic(frames, backbone)?;
    let (h_ctx, ctx_caches) = encode_context(subset, adapter)?;
    let (attention, b_aco, h_fused, q, k, v) = cross_attend(&h_aco, &h_ctx, adapter)?;
    let logits = head_logits(&h_fused, backbone);
    logits.assert_finite("forward logits")?;
    Ok(ForwardCache {
        h_aco,
        h_ctx,
        attention,
        b_aco,
        h_fused,
        logits,
        q,
        k,
        v,
        ctx_caches,
    })
}

/// Per-frame argmax with ties resolved to the lowest index.
pub fn argmax_path(logits: &Tensor2) -> Vec<usize> {
    (0..logits.rows())
        .map(|t| {
            let row = logits.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// CTC best-path decode: argmax per frame, collapse adjacent repeats,
/// remove the blank.
pub fn greedy_decode(logits: &Tensor2, blank: usize) -> Vec<usize> {
    collapse_path(&argmax_path(logits), blank)
}

/// Decode only the frame rows in [start, end).
pub fn greedy_decode_span(logits: &Tensor2, start: usize, end: usize, blank: usize) -> Vec<usize> {
    let path: Vec<usize> = argmax_path(logits)[start..end].to_vec();
    collapse_path(&path, blank)
}

fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Render decoded class indices as corpus characters.
pub fn ids_to_string(ids: &[usize]) -> String {
    ids.iter().map(|&i| (b'a' + i as u8) as char).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{ContextSubset, RefOccurrence, NO_CONTEXT};
    use crate::corpus::Span;

    fn test_subset(words: &[&str]) -> ContextSubset {
        let refs: Vec<RefOccurrence> = Vec::new();
        let fill: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        ContextSubset::from_entries(&fill, &refs)
    }

    fn small_adapter(seed: u64) -> AdapterParams {
        let cfg = ModelConfig {
            width: 6,
            char_embed_dim: 4,
            lstm_hidden: 3,
        };
        AdapterParams::init(26, &cfg, &mut RngStream::new(seed))
    }

    #[test]
    fn acoustic_encoding_shapes_and_range() {
        let mut rng = RngStream::new(2);
        let backbone = BackboneParams::init(5, 7, 26, &mut rng);
        let frames = Tensor2::from_fn(9, 5, |_, _| rng.gaussian());
        let h = encode_acoustic(&frames, &backbone).unwrap();
        assert_eq!((h.rows(), h.cols()), (9, 7));
        assert!(h.data().iter().all(|&v| v > -1.0 && v < 1.0));

        let empty = encode_acoustic(&Tensor2::zeros(0, 5), &backbone).unwrap();
        assert_eq!(empty.rows(), 0);

        let zero = encode_acoustic(&Tensor2::zeros(3, 5), &BackboneParams {
            enc_bias: vec![0.0; 7],
            ..backbone.clone()
        })
        .unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        assert!(encode_acoustic(&Tensor2::zeros(3, 4), &backbone).is_err());
    }

    #[test]
    fn context_row_zero_is_the_sentinel_embedding() {
        let adapter = small_adapter(4);
        let subset = test_subset(&["ab", "cd"]);
        let (h_ctx, _) = encode_context(&subset, &adapter).unwrap();
        assert_eq!(h_ctx.row(0), adapter.no_context_embed.as_slice());
    }

    #[test]
    fn zero_adapter_encodes_everything_to_zero() {
        let zeroed = small_adapter(4).zeros_like();
        let subset = test_subset(&["ab", "cde"]);
        let (h_ctx, _) = encode_context(&subset, &zeroed).unwrap();
        assert!(h_ctx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn context_encoding_is_position_free_and_permutation_equivariant() {
        let adapter = small_adapter(11);
        let a = test_subset(&["ab", "cd", "ef"]);
        let b = test_subset(&["ef", "cd", "ab"]);
        let (ha, _) = encode_context(&a, &adapter).unwrap();
        let (hb, _) = encode_context(&b, &adapter).unwrap();
        assert_eq!(ha.row(1), hb.row(3));
        assert_eq!(ha.row(2), hb.row(2));
        assert_eq!(ha.row(3), hb.row(1));
    }

    #[test]
    fn unknown_character_in_entry_is_an_error() {
        let cfg = ModelConfig {
            width: 6,
            char_embed_dim: 4,
            lstm_hidden: 3,
        };
        let adapter = AdapterParams::init(3, &cfg, &mut RngStream::new(4));
        let subset = test_subset(&["az"]);
        assert!(matches!(
            encode_context(&subset, &adapter),
            Err(Error::UnknownCharacter('z'))
        ));
    }

    #[test]
    fn attention_rows_are_distributions_and_uniform_for_identical_keys() {
        let adapter = small_adapter(21);
        let mut rng = RngStream::new(3);
        let h_aco = Tensor2::from_fn(4, 6, |_, _| rng.gaussian());
        // Identical context rows give identical keys, so uniform attention.
        let h_ctx = Tensor2::from_fn(3, 6, |_, c| 0.3 * (c as f64) - 0.5);
        let (att, _, _, _, _, _) = cross_attend(&h_aco, &h_ctx, &adapter).unwrap();
        for t in 0..att.rows() {
            let row = att.row(t);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for &p in row {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_values_make_fusion_a_no_op() {
        let mut adapter = small_adapter(31);
        adapter.w_v = Tensor2::zeros(6, 6);
        let mut rng = RngStream::new(5);
        let h_aco = Tensor2::from_fn(4, 6, |_, _| rng.gaussian());
        let h_ctx = Tensor2::from_fn(3, 6, |_, _| rng.gaussian());
        let (_, b, fused, _, _, _) = cross_attend(&h_aco, &h_ctx, &adapter).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
        assert_eq!(fused.data(), h_aco.data());
    }

    #[test]
    fn scalar_cross_attention_matches_hand_evaluation() {
        // D = 1: attention row = softmax([q*k1, q*k2]) with q = h_aco * w_q.
        let cfg = ModelConfig {
            width: 1,
            char_embed_dim: 2,
            lstm_hidden: 1,
        };
        let mut adapter = AdapterParams::init(26, &cfg, &mut RngStream::new(0));
        adapter.w_q = Tensor2::from_vec(1, 1, vec![2.0]).unwrap();
        adapter.w_k = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        adapter.w_v = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let h_aco = Tensor2::from_vec(2, 1, vec![0.5, -0.25]).unwrap();
        let h_ctx = Tensor2::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        let (att, _, _, _, _, _) = cross_attend(&h_aco, &h_ctx, &adapter).unwrap();

        for t in 0..2 {
            let qt = 2.0 * h_aco.get(t, 0);
            let logits = [qt, -qt];
            let m = logits[0].max(logits[1]);
            let e0 = (logits[0] - m).exp();
            let e1 = (logits[1] - m).exp();
            assert!((att.get(t, 0) - e0 / (e0 + e1)).abs() < 1e-15);
            assert!((att.get(t, 1) - e1 / (e0 + e1)).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_full_shapes_and_determinism() {
        let mut rng = RngStream::new(6);
        let backbone = BackboneParams::init(5, 6, 26, &mut rng);
        let adapter = small_adapter(7);
        let frames = Tensor2::from_fn(10, 5, |_, _| rng.gaussian());
        let mut subset = test_subset(&["ab", "cd", "ef"]);
        subset.ref_indices = vec![1];
        subset.ref_sequence = vec![(1, Span { start: 2, end: 8 })];

        let a = forward_full(&frames, &subset, &backbone, &adapter).unwrap();
        let b = forward_full(&frames, &subset, &backbone, &adapter).unwrap();
        assert_eq!((a.attention.rows(), a.attention.cols()), (10, 4));
        assert_eq!((a.logits.rows(), a.logits.cols()), (10, 27));
        assert_eq!(a.logits.data(), b.logits.data());
        assert_eq!(a.attention.data(), b.attention.data());
    }

    #[test]
    fn wv_zero_means_logits_equal_backbone_logits_bitwise() {
        let mut rng = RngStream::new(16);
        let backbone = BackboneParams::init(5, 6, 26, &mut rng);
        let mut adapter = small_adapter(8);
        adapter.w_v = Tensor2::zeros(6, 6);
        let frames = Tensor2::from_fn(12, 5, |_, _| rng.gaussian());
        let subset = test_subset(&["ab", "cd"]);

        let cache = forward_full(&frames, &subset, &backbone, &adapter).unwrap();
        let h = encode_acoustic(&frames, &backbone).unwrap();
        let base_logits = head_logits(&h, &backbone);
        assert_eq!(cache.logits.data(), base_logits.data());
    }

    #[test]
    fn greedy_decode_collapse_rules() {
        // Path [a, a, blank, b] -> "ab".
        let blank = 2;
        let path_logits = |path: &[usize], k: usize| {
            Tensor2::from_fn(path.len(), k, |t, c| if c == path[t] { 1.0 } else { 0.0 })
        };
        assert_eq!(greedy_decode(&path_logits(&[0, 0, 2, 1], 3), blank), vec![0, 1]);
        assert_eq!(greedy_decode(&path_logits(&[2, 2, 2], 3), blank), Vec::<usize>::new());
        assert_eq!(greedy_decode(&path_logits(&[0, 2, 0], 3), blank), vec![0, 0]);
        // Ties resolve to the lowest index: all-zero logits give blank-free
        // runs of class 0, collapsed to a single 0.
        assert_eq!(greedy_decode(&Tensor2::zeros(4, 3), blank), vec![0]);
    }

    #[test]
    fn subset_entry_name_constant() {
        assert_eq!(NO_CONTEXT, "<no-context>");
    }
}
