//! Synthetic long-tailed corpus: Zipfian word frequencies, multi-character
//! words, prototype-based "acoustic" frames with silence, zero-shot test
//! words, frequency statistics, shot buckets and the context/no-context
//! imbalance rate.

mod gen;
mod io;

pub use gen::{generate_corpus, synthesize_frames};
pub use io::{load_prototypes, load_split, save_freq_tsv, save_prototypes, save_split};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// Half-open frame interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.start && t < self.end
    }
}

/// Word -> training occurrence count, with the grand total.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FreqTable {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl FreqTable {
    pub fn from_word_iter<'a>(words: impl Iterator<Item = &'a str>) -> Self {
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for w in words {
            *counts.entry(w.to_string()).or_insert(0) += 1;
            total += 1;
        }
        FreqTable { counts, total }
    }

    /// Occurrence count; absent words return 0 (that is what defines
    /// zero-shot).
    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(w, &n)| (w.as_str(), n))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Frequency stratum of a word under the shot-bucket thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShotBucket {
    Many,
    Medium,
    Few,
    Zero,
}

impl ShotBucket {
    pub const ALL: [ShotBucket; 4] = [
        ShotBucket::Many,
        ShotBucket::Medium,
        ShotBucket::Few,
        ShotBucket::Zero,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShotBucket::Many => "many",
            ShotBucket::Medium => "medium",
            ShotBucket::Few => "few",
            ShotBucket::Zero => "zero",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            ShotBucket::Many => 0,
            ShotBucket::Medium => 1,
            ShotBucket::Few => 2,
            ShotBucket::Zero => 3,
        }
    }
}

/// Bucket a training count: many (n > 100), medium (100 >= n > 20),
/// few (20 >= n > 0), zero (n = 0).
pub fn shot_bucket(n: u64) -> ShotBucket {
    if n > 100 {
        ShotBucket::Many
    } else if n > 20 {
        ShotBucket::Medium
    } else if n > 0 {
        ShotBucket::Few
    } else {
        ShotBucket::Zero
    }
}

/// One synthetic utterance: the word sequence, its character sequence, the
/// feature frames and the gold frame span of every word.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub words: Vec<String>,
    pub chars: String,
    pub frames: Tensor2,
    pub word_spans: Vec<Span>,
}

impl Utterance {
    /// Character span of word `u` inside `chars` (character indices, not
    /// frames). Words are ASCII so indices are byte offsets too.
    pub fn char_span_of_word(&self, u: usize) -> Span {
        let start: usize = self.words[..u].iter().map(|w| w.chars().count()).sum();
        Span {
            start,
            end: start + self.words[u].chars().count(),
        }
    }

    /// Check the structural invariants: chars is the concatenation of the
    /// words, spans are disjoint, ordered and inside [0, T), every word has
    /// at least two characters.
    pub fn validate(&self) -> Result<()> {
        let concat: String = self.words.concat();
        if concat != self.chars {
            return Err(Error::CorpusFormat(format!(
                "{}: chars do not match word concatenation",
                self.id
            )));
        }
        if self.word_spans.len() != self.words.len() {
            return Err(Error::CorpusFormat(format!(
                "{}: {} spans for {} words",
                self.id,
                self.word_spans.len(),
                self.words.len()
            )));
        }
        let t = self.frames.rows();
        let mut prev_end = 0;
        for (w, span) in self.words.iter().zip(&self.word_spans) {
            if w.chars().count() < 2 {
                return Err(Error::CorpusFormat(format!(
                    "{}: single-character word {w:?}",
                    self.id
                )));
            }
            if span.is_empty() || span.start < prev_end || span.end > t {
                return Err(Error::CorpusFormat(format!(
                    "{}: span {}-{} out of order or out of bounds (T = {t})",
                    self.id, span.start, span.end
                )));
            }
            prev_end = span.end;
        }
        Ok(())
    }
}

/// Generation parameters for the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub charset_size: usize,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub word_len_min: usize,
    pub word_len_max: usize,
    pub utterance_len_min: usize,
    pub utterance_len_max: usize,
    pub frames_per_char: usize,
    pub silence_frames: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_zero_shot_words: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    /// Desk defaults: trains in minutes while leaving non-empty
    /// many/medium/few/zero buckets.
    fn default() -> Self {
        CorpusConfig {
            charset_size: 26,
            vocab_size: 200,
            zipf_exponent: 1.0,
            word_len_min: 2,
            word_len_max: 4,
            utterance_len_min: 3,
            utterance_len_max: 8,
            frames_per_char: 3,
            silence_frames: 2,
            feature_dim: 16,
            noise_sigma: 0.1,
            n_train: 2000,
            n_test: 200,
            n_zero_shot_words: 20,
            seed: 17,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("charset_size", self.charset_size),
            ("vocab_size", self.vocab_size),
            ("word_len_min", self.word_len_min),
            ("word_len_max", self.word_len_max),
            ("utterance_len_min", self.utterance_len_min),
            ("utterance_len_max", self.utterance_len_max),
            ("frames_per_char", self.frames_per_char),
            ("silence_frames", self.silence_frames),
            ("feature_dim", self.feature_dim),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("corpus.{name} must be positive")));
            }
        }
        if self.word_len_min < 2 {
            return Err(Error::Config(
                "corpus.word_len_min must be >= 2 (multi-character words only)".into(),
            ));
        }
        if self.word_len_max < self.word_len_min {
            return Err(Error::Config("corpus word length range is inverted".into()));
        }
        if self.utterance_len_max < self.utterance_len_min {
            return Err(Error::Config(
                "corpus utterance length range is inverted".into(),
            ));
        }
        if self.charset_size > 26 {
            return Err(Error::Config(
                "corpus.charset_size is capped at 26 (letters a-z)".into(),
            ));
        }
        if self.zipf_exponent < 0.0 || !self.zipf_exponent.is_finite() {
            return Err(Error::Config(
                "corpus.zipf_exponent must be finite and non-negative".into(),
            ));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::Config(
                "corpus.noise_sigma must be finite and non-negative".into(),
            ));
        }
        // Distinct-word headroom so vocabulary sampling terminates.
        let mut possible: usize = 0;
        for len in self.word_len_min..=self.word_len_max {
            possible = possible.saturating_add(self.charset_size.saturating_pow(len as u32));
            if possible > 4 * (self.vocab_size + self.n_zero_shot_words) {
                break;
            }
        }
        if possible < 2 * (self.vocab_size + self.n_zero_shot_words) {
            return Err(Error::Config(format!(
                "charset/word-length combination admits only {possible} distinct words; \
                 cannot draw {} vocabulary + {} zero-shot words",
                self.vocab_size, self.n_zero_shot_words
            )));
        }
        Ok(())
    }

    /// Letter alphabet used for word characters.
    pub fn charset(&self) -> impl Iterator<Item = char> {
        (0..self.charset_size).map(|i| (b'a' + i as u8) as char)
    }
}

/// Map a corpus character to its class index; errors on characters outside
/// the generating alphabet.
pub fn char_index(c: char, charset_size: usize) -> Result<usize> {
    let idx = (c as u32).wrapping_sub('a' as u32) as usize;
    if c.is_ascii_lowercase() && idx < charset_size {
        Ok(idx)
    } else {
        Err(Error::UnknownCharacter(c))
    }
}

/// A fully generated corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
    /// Per-character prototype feature vectors, indexed by character class.
    pub prototypes: Tensor2,
    pub freq: FreqTable,
    /// Training vocabulary in rank order (rank 1 first).
    pub vocab: Vec<String>,
    /// Held-out words that never occur in training.
    pub zero_shot_words: Vec<String>,
}

/// Context/no-context imbalance rate n_nctx / n_ctx at threshold `gamma`,
/// where n_ctx sums the occurrences of words with n_w <= gamma.
pub fn imbalance_rate(freq: &FreqTable, gamma: u64) -> Result<f64> {
    assert!(gamma >= 1, "gamma must be >= 1");
    let n_ctx: u64 = freq.iter().filter(|&(_, n)| n <= gamma).map(|(_, n)| n).sum();
    if n_ctx == 0 {
        return Err(Error::NoContextOccurrences);
    }
    let n_nctx = freq.total() - n_ctx;
    Ok(n_nctx as f64 / n_ctx as f64)
}

/// Imbalance rate over a gamma sweep. Thresholds at which no word qualifies
/// as a context word map to +inf: the rate diverges as gamma shrinks.
pub fn imbalance_curve(freq: &FreqTable, gammas: &[u64]) -> Vec<(u64, f64)> {
    gammas
        .iter()
        .map(|&g| (g, imbalance_rate(freq, g).unwrap_or(f64::INFINITY)))
        .collect()
}
