//! Corpus generation: vocabulary, Zipf sampling, frame synthesis.

use std::collections::BTreeSet;

use super::{char_index, Corpus, CorpusConfig, FreqTable, Span, Utterance};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor2};

/// Scale of the per-character prototype vectors, calibrated against the
/// default noise_sigma so the frozen backbone is competent but leaves
/// rare-word headroom for context biasing to close.
const PROTOTYPE_SCALE: f64 = 0.15;

/// How many test utterances each zero-shot word is spliced into.
const ZERO_SHOT_TEST_OCCURRENCES: usize = 4;

/// Generate the full corpus from a config. All randomness comes from
/// `config.seed`; identical configs yield bitwise-identical corpora.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    if config.vocab_size < config.n_zero_shot_words {
        return Err(Error::ZeroShotExceedsVocab {
            vocab: config.vocab_size,
            requested: config.n_zero_shot_words,
        });
    }
    let mut rng = RngStream::new(config.seed);

    // Distinct words; the first vocab_size are the training vocabulary in
    // Zipf rank order, the remainder are held out as zero-shot words.
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(config.vocab_size + config.n_zero_shot_words);
    while words.len() < config.vocab_size + config.n_zero_shot_words {
        let w = random_word(config, &mut rng);
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    let zero_shot_words = words.split_off(config.vocab_size);
    let vocab = words;

    let prototypes = build_prototypes(config, &mut rng);

    // Cumulative Zipf distribution over ranks 1..=vocab_size.
    let cdf = zipf_cdf(config.vocab_size, config.zipf_exponent);

    let mut train = Vec::with_capacity(config.n_train);
    for i in 0..config.n_train {
        let words = draw_word_sequence(config, &cdf, &vocab, &mut rng);
        train.push(build_utterance(
            format!("train-{i:05}"),
            words,
            &prototypes,
            config,
            &mut rng,
        )?);
    }
    let freq = FreqTable::from_word_iter(
        train.iter().flat_map(|u| u.words.iter().map(|w| w.as_str())),
    );

    // Test word sequences first, then zero-shot splicing, then synthesis.
    let mut test_word_lists: Vec<Vec<String>> = (0..config.n_test)
        .map(|_| draw_word_sequence(config, &cdf, &vocab, &mut rng))
        .collect();
    for zw in &zero_shot_words {
        for _ in 0..ZERO_SHOT_TEST_OCCURRENCES {
            let u = rng.uniform_usize(config.n_test);
            let pos = rng.uniform_usize(test_word_lists[u].len() + 1);
            test_word_lists[u].insert(pos, zw.clone());
        }
    }
    let mut test = Vec::with_capacity(config.n_test);
    for (i, words) in test_word_lists.into_iter().enumerate() {
        test.push(build_utterance(
            format!("test-{i:05}"),
            words,
            &prototypes,
            config,
            &mut rng,
        )?);
    }

    Ok(Corpus {
        train,
        test,
        prototypes,
        freq,
        vocab,
        zero_shot_words,
    })
}

/// Emit the feature frames for a word sequence: `frames_per_char` noisy
/// prototype frames per character, with `silence_frames` noise-only frames
/// before the first word, between words and after the last word.
pub fn synthesize_frames(
    words: &[String],
    prototypes: &Tensor2,
    config: &CorpusConfig,
    rng: &mut RngStream,
) -> Result<(Tensor2, Vec<Span>)> {
    let total_chars: usize = words.iter().map(|w| w.chars().count()).sum();
    let t = config.silence_frames * (words.len() + 1) + config.frames_per_char * total_chars;
    let f = config.feature_dim;
    let mut frames = Tensor2::zeros(t, f);
    let mut spans = Vec::with_capacity(words.len());

    let mut row = 0;
    let emit_silence = |frames: &mut Tensor2, row: &mut usize, rng: &mut RngStream| {
        for _ in 0..config.silence_frames {
            for v in frames.row_mut(*row) {
                *v = rng.gaussian() * config.noise_sigma;
            }
            *row += 1;
        }
    };

    emit_silence(&mut frames, &mut row, rng);
    for word in words {
        let start = row;
        for c in word.chars() {
            let idx = char_index(c, prototypes.rows())?;
            for _ in 0..config.frames_per_char {
                let proto = prototypes.row(idx).to_vec();
                for (v, p) in frames.row_mut(row).iter_mut().zip(&proto) {
                    *v = p + rng.gaussian() * config.noise_sigma;
                }
                row += 1;
            }
        }
        spans.push(Span { start, end: row });
        emit_silence(&mut frames, &mut row, rng);
    }
    debug_assert_eq!(row, t);
    Ok((frames, spans))
}

fn build_utterance(
    id: String,
    words: Vec<String>,
    prototypes: &Tensor2,
    config: &CorpusConfig,
    rng: &mut RngStream,
) -> Result<Utterance> {
    let (frames, word_spans) = synthesize_frames(&words, prototypes, config, rng)?;
    let chars = words.concat();
    Ok(Utterance {
        id,
        words,
        chars,
        frames,
        word_spans,
    })
}

fn build_prototypes(config: &CorpusConfig, rng: &mut RngStream) -> Tensor2 {
    Tensor2::from_fn(config.charset_size, config.feature_dim, |_, _| {
        rng.gaussian() * PROTOTYPE_SCALE
    })
}

fn random_word(config: &CorpusConfig, rng: &mut RngStream) -> String {
    let len =
        config.word_len_min + rng.uniform_usize(config.word_len_max - config.word_len_min + 1);
    (0..len)
        .map(|_| (b'a' + rng.uniform_usize(config.charset_size) as u8) as char)
        .collect()
}

/// Cumulative probabilities of the rank distribution p(rank r) ~ 1 / r^s.
pub(crate) fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let mut cdf: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let mut acc = 0.0;
    for v in &mut cdf {
        acc += *v;
        *v = acc;
    }
    let norm = acc;
    for v in &mut cdf {
        *v /= norm;
    }
    cdf
}

fn draw_word_sequence(
    config: &CorpusConfig,
    cdf: &[f64],
    vocab: &[String],
    rng: &mut RngStream,
) -> Vec<String> {
    let len = config.utterance_len_min
        + rng.uniform_usize(config.utterance_len_max - config.utterance_len_min + 1);
    (0..len)
        .map(|_| {
            let u = rng.uniform01();
            let rank = cdf.partition_point(|&c| c <= u);
            vocab[rank.min(vocab.len() - 1)].clone()
        })
        .collect()
}
