//! Training objectives and their gradients: effective-number class-balanced
//! weights, the context-balance loss over frame-averaged attention priors,
//! log-space CTC (used both as the backbone character loss and as attention
//! guidance with `<no-context>` as the blank), and the combined objective.

use crate::context::ContextSubset;
use crate::corpus::{FreqTable, Utterance};
use crate::error::{Error, Result};
use crate::model::{
    adapter_backward, softmax_backward_rows, AdapterParams, BackboneParams, ForwardCache,
};
use crate::numerics::{logsumexp2, logsumexp3, Tensor2};

/// Mixing weights of the combined objective plus the re-weighting strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    /// When set, a reference word occurring twice contributes one guidance
    /// CTC label instead of two.
    pub dedupe_ctc_labels: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.5,
            lambda2: 0.5,
            alpha: 0.9,
            dedupe_ctc_labels: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda1) {
            return Err(Error::Config("lambda1 out of range [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda2) {
            return Err(Error::Config("lambda2 out of range [0,1]".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config("alpha out of range [0,1)".into()));
        }
        Ok(())
    }
}

/// All loss terms of one utterance plus the flat adapter gradient.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub aed: f64,
    pub ctc: f64,
    pub balance: f64,
    pub total: f64,
    /// Gradient of `total` with respect to the flattened [`AdapterParams`].
    pub grads: Vec<f64>,
}

/// Effective-number class-balanced weight (1 - alpha) / (1 - alpha^n).
///
/// alpha = 0 gives uniform weighting; alpha -> 1 approaches inverse word
/// frequency. Undefined at n = 0 (the limit diverges).
pub fn cb_weight(n: u64, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::UnseenWordWeight);
    }
    if n == 1 {
        return Ok(1.0);
    }
    // 1 - alpha^n via expm1 keeps precision as alpha -> 1.
    let denom = -f64::exp_m1(n as f64 * alpha.ln());
    Ok((1.0 - alpha) / denom)
}

/// Context-balance loss: with the frame-averaged prior
/// P(c_s) = (1/T) sum_t attention[t,s], the loss is
/// -sum over reference columns of w_s ln P(c_s). Returns the loss and its
/// gradient with respect to the attention matrix.
pub fn balance_loss(
    attention: &Tensor2,
    ref_indices: &[usize],
    weights: &[f64],
) -> Result<(f64, Tensor2)> {
    assert_eq!(ref_indices.len(), weights.len());
    let t_frames = attention.rows();
    assert!(t_frames >= 1, "balance_loss needs at least one frame");
    let mut grad = Tensor2::zeros(t_frames, attention.cols());
    if ref_indices.is_empty() {
        return Ok((0.0, grad));
    }

    let mut loss = 0.0;
    for (&s, &w) in ref_indices.iter().zip(weights) {
        debug_assert!(s > 0, "column 0 is the <no-context> sentinel");
        let mut prior = 0.0;
        for t in 0..t_frames {
            prior += attention.get(t, s);
        }
        prior /= t_frames as f64;
        if prior <= 0.0 {
            return Err(Error::VanishedPrior(s));
        }
        loss -= w * prior.ln();
        let g = -w / (t_frames as f64 * prior);
        for t in 0..t_frames {
            grad.set(t, s, g);
        }
    }
    Ok((loss, grad))
}

/// Log-space CTC negative log-likelihood of `labels` under row-stochastic
/// `posteriors`, with the standard blank-interleaved topology, plus the
/// gradient with respect to the posteriors (forward-backward occupancies
/// divided by the posterior).
pub fn ctc_loss(
    posteriors: &Tensor2,
    labels: &[usize],
    blank: usize,
) -> Result<(f64, Tensor2)> {
    let t_frames = posteriors.rows();
    let n_classes = posteriors.cols();
    for &l in labels {
        assert!(l != blank, "labels must exclude the blank");
        assert!(l < n_classes, "label out of range");
    }
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    if t_frames < labels.len() + repeats {
        return Err(Error::InfeasibleAlignment {
            frames: t_frames,
            labels: labels.len(),
            repeats,
        });
    }

    // Expanded sequence: blank, l1, blank, l2, ..., blank.
    let m = 2 * labels.len() + 1;
    let z = |j: usize| if j.is_multiple_of(2) { blank } else { labels[j / 2] };
    let logp = |t: usize, k: usize| posteriors.get(t, k).ln();

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; t_frames * m];
    alpha[0] = logp(0, z(0));
    if m > 1 {
        alpha[1] = logp(0, z(1));
    }
    for t in 1..t_frames {
        for j in 0..m {
            let stay = alpha[(t - 1) * m + j];
            let step = if j >= 1 { alpha[(t - 1) * m + j - 1] } else { neg };
            let skip = if j >= 2 && z(j) != blank && z(j) != z(j - 2) {
                alpha[(t - 1) * m + j - 2]
            } else {
                neg
            };
            let best = logsumexp3(stay, step, skip);
            alpha[t * m + j] = if best == neg { neg } else { logp(t, z(j)) + best };
        }
    }
    let last = (t_frames - 1) * m;
    let log_z = if m > 1 {
        logsumexp2(alpha[last + m - 1], alpha[last + m - 2])
    } else {
        alpha[last + m - 1]
    };
    if !log_z.is_finite() {
        return Err(Error::NonFinite("ctc likelihood"));
    }

    // Backward pass; beta excludes the emission at its own frame.
    let mut beta = vec![neg; t_frames * m];
    beta[last + m - 1] = 0.0;
    if m > 1 {
        beta[last + m - 2] = 0.0;
    }
    for t in (0..t_frames - 1).rev() {
        for j in 0..m {
            let stay = logp(t + 1, z(j)) + beta[(t + 1) * m + j];
            let step = if j + 1 < m {
                logp(t + 1, z(j + 1)) + beta[(t + 1) * m + j + 1]
            } else {
                neg
            };
            let skip = if j + 2 < m && z(j + 2) != blank && z(j + 2) != z(j) {
                logp(t + 1, z(j + 2)) + beta[(t + 1) * m + j + 2]
            } else {
                neg
            };
            beta[t * m + j] = logsumexp3(stay, step, skip);
        }
    }

    let mut grad = Tensor2::zeros(t_frames, n_classes);
    let mut occ = vec![neg; n_classes];
    for t in 0..t_frames {
        occ.iter_mut().for_each(|v| *v = neg);
        for j in 0..m {
            let g = alpha[t * m + j] + beta[t * m + j];
            if g != neg {
                let k = z(j);
                occ[k] = logsumexp2(occ[k], g);
            }
        }
        for (k, &o) in occ.iter().enumerate() {
            if o != neg {
                grad.set(t, k, -((o - log_z).exp()) / posteriors.get(t, k));
            }
        }
    }
    Ok((-log_z, grad))
}

/// Guidance CTC label sequence: the reference occurrences mapped to their
/// subset entry indices, optionally de-duplicated to one label per distinct
/// reference word (keeping first-occurrence order).
fn guidance_labels(subset: &ContextSubset, dedupe: bool) -> Vec<usize> {
    if dedupe {
        subset.ref_indices.clone()
    } else {
        subset.ref_sequence.iter().map(|&(idx, _)| idx).collect()
    }
}

/// Combined objective of Eq. 8 shape:
/// total = l1 * aed + (1 - l1) * (l2 * ctc + (1 - l2) * balance),
/// with gradients backpropagated to the adapter parameters only.
pub fn total_loss(
    cache: &ForwardCache,
    utterance: &Utterance,
    subset: &ContextSubset,
    freq: &FreqTable,
    config: &LossConfig,
    backbone: &BackboneParams,
    adapter: &AdapterParams,
) -> Result<LossBreakdown> {
    config.validate()?;
    let blank = backbone.blank();
    let charset_size = blank;

    // Character loss over the fused logits.
    let char_labels: Vec<usize> = utterance
        .chars
        .chars()
        .map(|c| crate::corpus::char_index(c, charset_size))
        .collect::<Result<_>>()?;
    let mut char_post = cache.logits.clone();
    crate::numerics::softmax_rows(&mut char_post)?;
    let (l_aed, d_char_post) = ctc_loss(&char_post, &char_labels, blank)?;

    // Attention-guidance CTC with <no-context> (column 0) as the blank.
    let g_labels = guidance_labels(subset, config.dedupe_ctc_labels);
    let (l_ctc, d_att_ctc) = ctc_loss(&cache.attention, &g_labels, 0)?;

    // Context-balance loss with effective-number weights from the training
    // counts.
    let weights: Vec<f64> = subset
        .ref_indices
        .iter()
        .map(|&s| cb_weight(freq.count(&subset.entries[s]), config.alpha))
        .collect::<Result<_>>()?;
    let (l_balance, d_att_bal) = balance_loss(&cache.attention, &subset.ref_indices, &weights)?;

    let total = config.lambda1 * l_aed
        + (1.0 - config.lambda1) * (config.lambda2 * l_ctc + (1.0 - config.lambda2) * l_balance);
    if !total.is_finite() {
        return Err(Error::NonFinite("total loss"));
    }

    // Combine the attention-side gradients with their Eq. 8 weights.
    let w_ctc = (1.0 - config.lambda1) * config.lambda2;
    let w_bal = (1.0 - config.lambda1) * (1.0 - config.lambda2);
    let mut d_att = Tensor2::zeros(cache.attention.rows(), cache.attention.cols());
    for ((o, &a), &b) in d_att
        .data_mut()
        .iter_mut()
        .zip(d_att_ctc.data())
        .zip(d_att_bal.data())
    {
        *o = w_ctc * a + w_bal * b;
    }

    // Character-loss gradient through the output softmax, scaled by l1.
    let mut d_logits = softmax_backward_rows(&char_post, &d_char_post);
    d_logits.scale(config.lambda1);

    let grads = adapter_backward(cache, Some(&d_logits), Some(&d_att), backbone, adapter);
    Ok(LossBreakdown {
        aed: l_aed,
        ctc: l_ctc,
        balance: l_balance,
        total,
        grads: crate::params::flatten_adapter(&grads),
    })
}

/// Small random instances with healthy gradient magnitudes for
/// finite-difference verification of the adapter backward pass. The
/// finite-difference oracle carries rounding noise around 5e-11 per
/// coordinate, so the construction keeps every parameter on a live path:
/// moderate weight scales (sigmoid/tanh unsaturated), unit-scale inputs,
/// and reference words covering multiple LSTM steps.
pub mod grad_instances {
    use super::{total_loss, LossBreakdown, LossConfig};
    use crate::context::{ContextSubset, RefOccurrence};
    use crate::corpus::{FreqTable, Span, Utterance};
    use crate::error::Result;
    use crate::model::{forward_full, AdapterParams, BackboneParams, LstmParams, ModelConfig};
    use crate::numerics::{RngStream, Tensor2};

    pub struct GradInstance {
        pub backbone: BackboneParams,
        pub adapter: AdapterParams,
        pub frames: Tensor2,
        pub utterance: Utterance,
        pub subset: ContextSubset,
        pub freq: FreqTable,
    }

    impl GradInstance {
        /// T = 5 frames, S_hat = 4 subset entries, D = 6.
        pub fn random(seed: u64) -> Self {
            let charset = 5;
            let cfg = ModelConfig {
                width: 6,
                char_embed_dim: 4,
                lstm_hidden: 3,
            };
            let mut rng = RngStream::new(0x6AD0_0000 ^ seed);
            let backbone = BackboneParams::init(3, cfg.width, charset, &mut rng);
            let adapter = random_adapter(&mut rng, &cfg, charset);
            let frames = Tensor2::from_fn(5, 3, |_, _| rng.gaussian());
            let utterance = Utterance {
                id: format!("grad-{seed}"),
                words: vec!["abc".into(), "de".into()],
                chars: "abcde".into(),
                frames: frames.clone(),
                word_spans: vec![Span { start: 0, end: 3 }, Span { start: 3, end: 5 }],
            };
            let refs = [
                RefOccurrence {
                    word: "abc".into(),
                    span: Span { start: 0, end: 3 },
                },
                RefOccurrence {
                    word: "de".into(),
                    span: Span { start: 3, end: 5 },
                },
            ];
            let subset =
                ContextSubset::from_entries(&["abc".into(), "de".into(), "ea".into()], &refs);
            let freq =
                FreqTable::from_word_iter(["abc", "abc", "abc", "de", "ea"].into_iter());
            GradInstance {
                backbone,
                adapter,
                frames,
                utterance,
                subset,
                freq,
            }
        }

        pub fn eval(&self, adapter: &AdapterParams, cfg: &LossConfig) -> Result<LossBreakdown> {
            let cache = forward_full(&self.frames, &self.subset, &self.backbone, adapter)?;
            total_loss(
                &cache,
                &self.utterance,
                &self.subset,
                &self.freq,
                cfg,
                &self.backbone,
                adapter,
            )
        }
    }

    fn random_adapter(rng: &mut RngStream, cfg: &ModelConfig, charset: usize) -> AdapterParams {
        let (d, e, h) = (cfg.width, cfg.char_embed_dim, cfg.lstm_hidden);
        let (s_lstm, s_attn) = (0.4, 0.6);
        fn t(rng: &mut RngStream, rows: usize, cols: usize, s: f64) -> Tensor2 {
            Tensor2::from_fn(rows, cols, |_, _| rng.gaussian() * s)
        }
        fn v(rng: &mut RngStream, n: usize, s: f64) -> Vec<f64> {
            (0..n).map(|_| rng.gaussian() * s).collect()
        }
        AdapterParams {
            char_embed: t(rng, charset, e, 1.0),
            lstm_fwd: LstmParams {
                w_ih: t(rng, 4 * h, e, s_lstm),
                w_hh: t(rng, 4 * h, h, s_lstm),
                bias: v(rng, 4 * h, 0.2),
            },
            lstm_bwd: LstmParams {
                w_ih: t(rng, 4 * h, e, s_lstm),
                w_hh: t(rng, 4 * h, h, s_lstm),
                bias: v(rng, 4 * h, 0.2),
            },
            proj: t(rng, 2 * h, d, s_attn),
            proj_bias: v(rng, d, 0.2),
            no_context_embed: v(rng, d, 1.0),
            w_q: t(rng, d, d, s_attn),
            w_k: t(rng, d, d, s_attn),
            w_v: t(rng, d, d, s_attn),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softmax_rows;

    // Brute-force CTC oracle: enumerate every K^T alignment string, collapse
    // repeats then remove blanks, and sum the probabilities of the strings
    // that collapse to the labels.
    pub(crate) fn ctc_brute_force(posteriors: &Tensor2, labels: &[usize], blank: usize) -> f64 {
        let t = posteriors.rows();
        let k = posteriors.cols();
        let mut total = 0.0;
        let mut path = vec![0usize; t];
        loop {
            let mut collapsed = Vec::new();
            let mut prev = None;
            for &c in &path {
                if Some(c) != prev && c != blank {
                    collapsed.push(c);
                }
                prev = Some(c);
            }
            if collapsed == labels {
                let mut p = 1.0;
                for (t_idx, &c) in path.iter().enumerate() {
                    p *= posteriors.get(t_idx, c);
                }
                total += p;
            }
            // Next path in lexicographic order.
            let mut pos = t;
            loop {
                if pos == 0 {
                    return -total.ln();
                }
                pos -= 1;
                path[pos] += 1;
                if path[pos] < k {
                    break;
                }
                path[pos] = 0;
            }
        }
    }

    fn random_posteriors(t: usize, k: usize, seed: u64) -> Tensor2 {
        let mut rng = crate::numerics::RngStream::new(seed);
        let mut m = Tensor2::from_fn(t, k, |_, _| rng.gaussian());
        softmax_rows(&mut m).unwrap();
        m
    }

    #[test]
    fn cb_weight_known_values() {
        for alpha in [0.0, 0.5, 0.9, 0.9999] {
            assert_eq!(cb_weight(1, alpha).unwrap(), 1.0);
        }
        for n in 1..=100 {
            assert_eq!(cb_weight(n, 0.0).unwrap(), 1.0);
        }
        let w = cb_weight(2, 0.9).unwrap();
        assert!((w - 0.1 / 0.19).abs() < 1e-12, "{w}");
        // Near alpha -> 1 the weight approaches inverse frequency.
        let w = cb_weight(5, 0.999999).unwrap();
        assert!((w - 0.2).abs() < 1e-4, "{w}");
    }

    #[test]
    fn cb_weight_is_strictly_decreasing_and_bounded() {
        // Ranges short of the point where alpha^n underflows and the weight
        // numerically saturates at its limit 1 - alpha.
        for (alpha, n_max) in [(0.3, 25), (0.9, 200), (0.99, 200)] {
            let mut prev = f64::INFINITY;
            for n in 1..=n_max {
                let w = cb_weight(n, alpha).unwrap();
                assert!(w < prev, "not decreasing at n={n}, alpha={alpha}");
                assert!(w >= 1.0 - alpha && w <= 1.0);
                prev = w;
            }
        }
    }

    #[test]
    fn cb_weight_rejects_unseen_words() {
        assert!(matches!(cb_weight(0, 0.9), Err(Error::UnseenWordWeight)));
    }

    #[test]
    fn balance_loss_uniform_attention() {
        // Uniform attention over 4 columns, one reference with weight 1:
        // loss = -ln(1/4).
        let att = Tensor2::from_fn(5, 4, |_, _| 0.25);
        let (loss, grad) = balance_loss(&att, &[2], &[1.0]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        // d/datt[t,2] = -1 / (T * 0.25).
        for t in 0..5 {
            assert!((grad.get(t, 2) + 1.0 / (5.0 * 0.25)).abs() < 1e-12);
            assert_eq!(grad.get(t, 0), 0.0);
        }
    }

    #[test]
    fn balance_loss_empty_refs_and_perfect_prior() {
        let att = Tensor2::from_fn(3, 4, |_, _| 0.25);
        let (loss, grad) = balance_loss(&att, &[], &[]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));

        let concentrated = Tensor2::from_fn(3, 4, |_, c| if c == 1 { 1.0 } else { 0.0 });
        let (loss, _) = balance_loss(&concentrated, &[1], &[0.7]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn balance_loss_gradient_matches_finite_differences() {
        // T = 3 frames, S_hat = 3 columns, gradient taken directly in the
        // attention matrix.
        let mut att = Tensor2::from_fn(3, 3, |_, _| 0.0);
        let mut rng = crate::numerics::RngStream::new(5);
        for v in att.data_mut() {
            *v = 0.05 + rng.uniform01();
        }
        let (_, grad) = balance_loss(&att, &[1, 2], &[0.8, 0.3]).unwrap();
        let err = crate::numerics::grad_check(
            |theta| {
                let m = Tensor2::from_vec(3, 3, theta.to_vec()).unwrap();
                balance_loss(&m, &[1, 2], &[0.8, 0.3]).map(|(l, _)| l)
            },
            grad.data(),
            att.data(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "balance grad err {err}");
    }

    #[test]
    fn balance_loss_vanished_prior_is_an_error() {
        let att = Tensor2::from_fn(3, 4, |_, c| if c == 0 { 1.0 } else { 0.0 });
        assert!(matches!(
            balance_loss(&att, &[2], &[1.0]),
            Err(Error::VanishedPrior(2))
        ));
    }

    #[test]
    fn ctc_empty_labels_is_blank_path() {
        let post = random_posteriors(4, 3, 9);
        let (loss, _) = ctc_loss(&post, &[], 2).unwrap();
        let expected: f64 = -(0..4).map(|t| post.get(t, 2).ln()).sum::<f64>();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn ctc_hand_worked_two_frame_example() {
        // T=2, K=2, labels=[0], blank=1, all posteriors 0.5:
        // alignments (0,0), (0,1), (1,0) each carry 0.25.
        let post = Tensor2::from_fn(2, 2, |_, _| 0.5);
        let (loss, _) = ctc_loss(&post, &[0], 1).unwrap();
        assert!((loss + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ctc_matches_brute_force_on_random_instances() {
        let cases = [
            (2, 2, vec![0]),
            (3, 3, vec![1, 0]),
            (4, 3, vec![0, 0]),
            (5, 4, vec![2, 1, 2]),
            (6, 4, vec![2, 2, 1]),
            (6, 2, vec![0, 0, 0]),
        ];
        for (i, (t, k, labels)) in cases.iter().enumerate() {
            let blank = k - 1;
            let post = random_posteriors(*t, *k, 100 + i as u64);
            let (loss, _) = ctc_loss(&post, labels, blank).unwrap();
            let oracle = ctc_brute_force(&post, labels, blank);
            assert!(
                (loss - oracle).abs() < 1e-9,
                "case {i}: {loss} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn ctc_gradient_matches_finite_differences() {
        let post = random_posteriors(4, 3, 33);
        let labels = vec![0, 1];
        let (_, grad) = ctc_loss(&post, &labels, 2).unwrap();
        let err = crate::numerics::grad_check(
            |theta| {
                let m = Tensor2::from_vec(4, 3, theta.to_vec()).unwrap();
                ctc_loss(&m, &labels, 2).map(|(l, _)| l)
            },
            grad.data(),
            post.data(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "ctc grad err {err}");
    }

    #[test]
    fn total_loss_gradients_match_finite_differences() {
        use crate::numerics::grad_check;
        use crate::params::{adapter_from_flat, flatten_adapter};
        use grad_instances::GradInstance;

        // The finite-difference oracle has noise around 5e-11 per
        // coordinate, so checkable instances need every nonzero gradient
        // comfortably above that; the shared generator is built for this.
        let cases = [
            (1.0, 0.5, "aed only"),
            (0.0, 1.0, "guidance only"),
            (0.0, 0.0, "balance only"),
            (0.5, 0.5, "mixed"),
        ];
        for seed in 0..3u64 {
            let inst = GradInstance::random(seed);
            for (lambda1, lambda2, label) in cases {
                let cfg = LossConfig {
                    lambda1,
                    lambda2,
                    alpha: 0.9,
                    dedupe_ctc_labels: false,
                };
                let breakdown = inst.eval(&inst.adapter, &cfg).unwrap();
                let flat = flatten_adapter(&inst.adapter);
                let err = grad_check(
                    |theta| {
                        let a = adapter_from_flat(&inst.adapter, theta);
                        inst.eval(&a, &cfg).map(|b| b.total)
                    },
                    &breakdown.grads,
                    &flat,
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "seed {seed} {label}: grad err {err}");
            }
        }
    }

    #[test]
    fn guidance_label_dedupe_flag() {
        use crate::context::{ContextSubset, RefOccurrence};
        use crate::corpus::Span;

        // The word "ab" occurs twice; with the flag off it contributes two
        // guidance labels, with the flag on just one.
        let refs = [
            RefOccurrence {
                word: "ab".into(),
                span: Span { start: 0, end: 3 },
            },
            RefOccurrence {
                word: "de".into(),
                span: Span { start: 3, end: 6 },
            },
            RefOccurrence {
                word: "ab".into(),
                span: Span { start: 6, end: 9 },
            },
        ];
        let subset = ContextSubset::from_entries(&["ab".into(), "de".into()], &refs);
        assert_eq!(guidance_labels(&subset, false), vec![1, 2, 1]);
        assert_eq!(guidance_labels(&subset, true), vec![1, 2]);
    }

    #[test]
    fn combined_objective_weights_hand_example() {
        // Parts (aed, ctc, balance) = (2, 1, 4) at lambda1 = lambda2 = 0.5
        // combine to 1 + 0.5 * (0.5 + 2.0) = 2.25.
        let (l1, l2) = (0.5, 0.5);
        let total = l1 * 2.0 + (1.0 - l1) * (l2 * 1.0 + (1.0 - l2) * 4.0);
        assert_eq!(total, 2.25);
    }

    #[test]
    fn total_loss_recombination_and_degenerate_weights() {
        use crate::context::{ContextSubset, RefOccurrence};
        use crate::corpus::{FreqTable, Span, Utterance};
        use crate::model::{forward_full, AdapterParams, BackboneParams, ModelConfig};
        use crate::numerics::RngStream;

        let charset = 5;
        let model_cfg = ModelConfig {
            width: 6,
            char_embed_dim: 4,
            lstm_hidden: 3,
        };
        let mut rng = RngStream::new(77);
        let backbone = BackboneParams::init(3, model_cfg.width, charset, &mut rng);
        let adapter = AdapterParams::init(charset, &model_cfg, &mut rng);
        let frames = crate::numerics::Tensor2::from_fn(6, 3, |_, _| rng.gaussian());
        let utterance = Utterance {
            id: "u".into(),
            words: vec!["ab".into()],
            chars: "ab".into(),
            frames: frames.clone(),
            word_spans: vec![Span { start: 2, end: 5 }],
        };
        let refs = [RefOccurrence {
            word: "ab".into(),
            span: Span { start: 2, end: 5 },
        }];
        let subset = ContextSubset::from_entries(&["ab".into(), "ce".into()], &refs);
        let freq = FreqTable::from_word_iter(["ab", "ab", "ce"].into_iter());
        let cache = forward_full(&frames, &subset, &backbone, &adapter).unwrap();

        let eval = |l1: f64, l2: f64| {
            let cfg = LossConfig {
                lambda1: l1,
                lambda2: l2,
                alpha: 0.9,
                dedupe_ctc_labels: false,
            };
            total_loss(&cache, &utterance, &subset, &freq, &cfg, &backbone, &adapter).unwrap()
        };

        // lambda1 = 1 reduces to the character loss alone.
        let b = eval(1.0, 0.3);
        assert_eq!(b.total, b.aed);
        // The plain-adapter configuration drops the balance term.
        let b = eval(0.5, 1.0);
        assert!((b.total - 0.5 * (b.aed + b.ctc)).abs() < 1e-12);
        // Exact recombination at arbitrary weights.
        let b = eval(0.3, 0.6);
        let expected = 0.3 * b.aed + 0.7 * (0.6 * b.ctc + 0.4 * b.balance);
        assert!((b.total - expected).abs() < 1e-12);
    }

    #[test]
    fn ctc_infeasible_label_length_is_an_error() {
        let post = random_posteriors(2, 3, 1);
        assert!(matches!(
            ctc_loss(&post, &[0, 1, 0], 2),
            Err(Error::InfeasibleAlignment { .. })
        ));
        // Adjacent repeats need a separating blank frame.
        assert!(matches!(
            ctc_loss(&post, &[0, 0], 2),
            Err(Error::InfeasibleAlignment { .. })
        ));
    }
}
