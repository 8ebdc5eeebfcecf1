//! Two-stage training. Stage 0 pretrains the backbone with the character
//! loss alone; stage 1 freezes it and trains only the adapter under the
//! combined objective, resampling the context subset per utterance visit.

use std::fmt::Write as _;

use crate::context::{build_context_list, reference_context, sample_context_subset, RefOccurrence};
use crate::corpus::{Corpus, FreqTable, Utterance};
use crate::error::{Error, Result};
use crate::model::{
    backbone_backward, encode_acoustic, forward_full, head_logits, softmax_backward_rows,
    AdapterParams, BackboneParams, ModelConfig,
};
use crate::numerics::{softmax_rows, RngStream};
use crate::objectives::{ctc_loss, total_loss, LossConfig};
use crate::params;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Adapter,
}

/// How often the training context subset is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResamplePolicy {
    /// Fresh subset every time an utterance is visited (every epoch).
    PerVisit,
    /// One subset per utterance, drawn on the first epoch and reused.
    OncePerUtterance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: u64,
    pub s_hat: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub dedupe_ctc_labels: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub stage: Stage,
    pub resample: ResamplePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 1 << 16,
            s_hat: 32,
            lambda1: 0.5,
            lambda2: 0.5,
            alpha: 0.9,
            dedupe_ctc_labels: false,
            learning_rate: 5e-4,
            epochs: 20,
            batch_size: 1,
            seed: 1234,
            stage: Stage::Adapter,
            resample: ResamplePolicy::PerVisit,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if self.gamma < 1 {
            return Err(Error::Config("train.gamma must be >= 1".into()));
        }
        if self.s_hat < 2 {
            return Err(Error::Config("train.s_hat must be >= 2".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            alpha: self.alpha,
            dedupe_ctc_labels: self.dedupe_ctc_labels,
        }
    }
}

/// Adam accumulators over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        OptimizerState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), opt.m.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    opt.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(opt.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(opt.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        opt.m[i] = ADAM_BETA1 * opt.m[i] + (1.0 - ADAM_BETA1) * g;
        opt.v[i] = ADAM_BETA2 * opt.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = opt.m[i] / bc1;
        let v_hat = opt.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Per-epoch mean loss terms, serialized as one TAB-separated log line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub aed: f64,
    pub ctc: f64,
    pub balance: f64,
    pub total: f64,
}

pub fn format_epoch_log(stats: &[EpochStats]) -> String {
    let mut out = String::from("epoch\taed\tctc\tbalance\ttotal\n");
    for s in stats {
        writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            s.epoch, s.aed, s.ctc, s.balance, s.total
        )
        .unwrap();
    }
    out
}

/// Stage 0: train encoder and head with the character CTC loss only.
pub fn pretrain_backbone(
    train: &[Utterance],
    charset_size: usize,
    feature_dim: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(BackboneParams, Vec<EpochStats>)> {
    cfg.validate()?;
    model.validate()?;
    let mut rng = RngStream::new(cfg.seed);
    let backbone = BackboneParams::init(feature_dim, model.width, charset_size, &mut rng);
    let template = backbone.clone();
    let mut flat = params::flatten_backbone(&backbone);
    let mut opt = OptimizerState::new(flat.len());
    let mut stats = Vec::with_capacity(cfg.epochs);

    let char_labels: Vec<Vec<usize>> = train
        .iter()
        .map(|u| {
            u.chars
                .chars()
                .map(|c| crate::corpus::char_index(c, charset_size))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    for epoch in 1..=cfg.epochs {
        let mut sum_aed = 0.0;
        let mut batch_grads: Vec<f64> = vec![0.0; flat.len()];
        let mut in_batch = 0;
        for (u, labels) in train.iter().zip(&char_labels) {
            let backbone = params::backbone_from_flat(&template, &flat);
            let h_aco = encode_acoustic(&u.frames, &backbone)?;
            let logits = head_logits(&h_aco, &backbone);
            let mut post = logits;
            softmax_rows(&mut post)?;
            let (loss, d_post) = ctc_loss(&post, labels, backbone.blank())?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("pretrain loss at {}", u.id)));
            }
            sum_aed += loss;
            let d_logits = softmax_backward_rows(&post, &d_post);
            let grads = backbone_backward(&u.frames, &h_aco, &d_logits, &backbone);
            let gflat = params::flatten_backbone(&grads);
            for (b, g) in batch_grads.iter_mut().zip(&gflat) {
                *b += g;
            }
            in_batch += 1;
            if in_batch == cfg.batch_size {
                adam_step(&mut flat, &batch_grads, &mut opt, cfg.learning_rate)?;
                batch_grads.iter_mut().for_each(|g| *g = 0.0);
                in_batch = 0;
            }
        }
        if in_batch > 0 {
            adam_step(&mut flat, &batch_grads, &mut opt, cfg.learning_rate)?;
        }
        let mean = sum_aed / train.len() as f64;
        stats.push(EpochStats {
            epoch,
            aed: mean,
            ctc: 0.0,
            balance: 0.0,
            total: mean,
        });
    }
    Ok((params::backbone_from_flat(&template, &flat), stats))
}

/// Stage 1: freeze the backbone and train the adapter under the combined
/// objective, rebuilding the context list once and resampling subsets per
/// the policy.
pub fn train_adapter(
    corpus: &Corpus,
    freq: &FreqTable,
    backbone: &BackboneParams,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(AdapterParams, Vec<EpochStats>)> {
    cfg.validate()?;
    model.validate()?;
    let charset_size = backbone.blank();
    let list = build_context_list(freq, &corpus.vocab, cfg.gamma)?;
    let refs: Vec<Vec<RefOccurrence>> = corpus
        .train
        .iter()
        .map(|u| reference_context(u, &list))
        .collect();

    let mut rng = RngStream::new(cfg.seed);
    let adapter = AdapterParams::init(charset_size, model, &mut rng);
    let template = adapter.clone();
    let mut flat = params::flatten_adapter(&adapter);
    let mut opt = OptimizerState::new(flat.len());
    let loss_cfg = cfg.loss_config();
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut frozen_subsets = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut batch_grads: Vec<f64> = vec![0.0; flat.len()];
        let mut in_batch = 0;
        for (i, u) in corpus.train.iter().enumerate() {
            let subset = match cfg.resample {
                ResamplePolicy::PerVisit => {
                    sample_context_subset(&refs[i], &list, cfg.s_hat, &mut rng)?
                }
                ResamplePolicy::OncePerUtterance => {
                    if epoch == 1 {
                        frozen_subsets
                            .push(sample_context_subset(&refs[i], &list, cfg.s_hat, &mut rng)?);
                    }
                    frozen_subsets[i].clone()
                }
            };
            // Sampling never drops an utterance's own reference words.
            for r in &refs[i] {
                assert!(
                    subset.entries.contains(&r.word),
                    "reference {} missing from sampled subset",
                    r.word
                );
            }

            let adapter = params::adapter_from_flat(&template, &flat);
            let cache = forward_full(&u.frames, &subset, backbone, &adapter)?;
            let breakdown = total_loss(&cache, u, &subset, freq, &loss_cfg, backbone, &adapter)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Diverged(format!("adapter loss at {}", u.id)));
            }
            sums.0 += breakdown.aed;
            sums.1 += breakdown.ctc;
            sums.2 += breakdown.balance;
            sums.3 += breakdown.total;

            for (b, g) in batch_grads.iter_mut().zip(&breakdown.grads) {
                *b += g;
            }
            in_batch += 1;
            if in_batch == cfg.batch_size {
                adam_step(&mut flat, &batch_grads, &mut opt, cfg.learning_rate)?;
                batch_grads.iter_mut().for_each(|g| *g = 0.0);
                in_batch = 0;
            }
        }
        if in_batch > 0 {
            adam_step(&mut flat, &batch_grads, &mut opt, cfg.learning_rate)?;
        }
        let n = corpus.train.len() as f64;
        stats.push(EpochStats {
            epoch,
            aed: sums.0 / n,
            ctc: sums.1 / n,
            balance: sums.2 / n,
            total: sums.3 / n,
        });
    }
    Ok((params::adapter_from_flat(&template, &flat), stats))
}
