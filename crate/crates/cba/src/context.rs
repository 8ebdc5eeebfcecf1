//! Context lists and training context subsets.
//!
//! The full training context list holds every vocabulary word whose
//! training count is at most gamma. Per utterance, the reference context
//! words are the utterance words that appear in the list; the training
//! subset pads them with random distractors and the `<no-context>` sentinel
//! at index 0.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::corpus::{FreqTable, Span, Utterance};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Sentinel subset entry attended to when no context word is relevant. It
/// also serves as the blank of the attention-guidance CTC loss, which is why
/// it is pinned to index 0. Never serialized.
pub const NO_CONTEXT: &str = "<no-context>";

/// All biasing candidates at a given rarity threshold, sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextList {
    words: Vec<String>,
    gamma: u64,
}

impl ContextList {
    /// Build from pre-filtered words; sorts and deduplicates.
    pub fn new(mut words: Vec<String>, gamma: u64) -> Result<Self> {
        words.sort();
        words.dedup();
        if words.is_empty() {
            return Err(Error::EmptyContextList);
        }
        Ok(ContextList { words, gamma })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn gamma(&self) -> u64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.binary_search_by(|w| w.as_str().cmp(word)).is_ok()
    }

    /// One word per line, sorted; the sentinel is implicit and never written.
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn import(path: &Path, gamma: u64) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let words: Vec<String> = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        ContextList::new(words, gamma)
    }
}

/// All vocabulary words with training count n_w <= gamma, in lexicographic
/// order.
pub fn build_context_list(freq: &FreqTable, vocab: &[String], gamma: u64) -> Result<ContextList> {
    assert!(gamma >= 1, "gamma must be >= 1");
    let words: Vec<String> = vocab
        .iter()
        .filter(|w| freq.count(w) <= gamma)
        .cloned()
        .collect();
    ContextList::new(words, gamma)
}

/// One occurrence of a reference context word inside an utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefOccurrence {
    pub word: String,
    /// Gold frame span of this occurrence.
    pub span: Span,
}

/// The words of `utterance` that are members of `list`, in order and with
/// multiplicity, each paired with its gold span.
pub fn reference_context(utterance: &Utterance, list: &ContextList) -> Vec<RefOccurrence> {
    utterance
        .words
        .iter()
        .zip(&utterance.word_spans)
        .filter(|(w, _)| list.contains(w))
        .map(|(w, &span)| RefOccurrence {
            word: w.clone(),
            span,
        })
        .collect()
}

/// A sampled training subset: `<no-context>` at index 0, then the distinct
/// reference words, then random distractors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSubset {
    pub entries: Vec<String>,
    /// Entry indices holding reference words (always 1..=n_refs).
    pub ref_indices: Vec<usize>,
    /// Reference occurrences in utterance order, resolved to entry indices.
    pub ref_sequence: Vec<(usize, Span)>,
}

impl ContextSubset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Deterministic subset over the given entry words (sentinel prepended,
    /// duplicates dropped, order preserved). Reference occurrences whose word
    /// is absent from the entries are skipped: evaluation subsets are fixed
    /// slices of the inference list and need not cover every reference.
    pub fn from_entries(words: &[String], ref_seq: &[RefOccurrence]) -> Self {
        let mut entries = vec![NO_CONTEXT.to_string()];
        for w in words {
            if w != NO_CONTEXT && !entries.contains(w) {
                entries.push(w.clone());
            }
        }
        let ref_sequence: Vec<(usize, Span)> = ref_seq
            .iter()
            .filter_map(|r| {
                entries
                    .iter()
                    .position(|e| *e == r.word)
                    .map(|idx| (idx, r.span))
            })
            .collect();
        let mut ref_indices: Vec<usize> = ref_sequence.iter().map(|&(i, _)| i).collect();
        ref_indices.sort_unstable();
        ref_indices.dedup();
        ContextSubset {
            entries,
            ref_indices,
            ref_sequence,
        }
    }
}

/// Sample the training subset: sentinel + distinct references + distractors
/// drawn uniformly without replacement from the rest of the list, up to
/// `s_hat` total entries (fewer when the list runs out).
pub fn sample_context_subset(
    ref_seq: &[RefOccurrence],
    list: &ContextList,
    s_hat: usize,
    rng: &mut RngStream,
) -> Result<ContextSubset> {
    let mut distinct_refs: Vec<&str> = Vec::new();
    for r in ref_seq {
        if !distinct_refs.contains(&r.word.as_str()) {
            distinct_refs.push(&r.word);
        }
    }
    if distinct_refs.len() + 1 > s_hat {
        return Err(Error::SubsetCapacityExceeded {
            refs: distinct_refs.len(),
            s_hat,
        });
    }

    let ref_set: BTreeSet<&str> = distinct_refs.iter().copied().collect();
    let candidate_pool: Vec<&String> = list
        .words()
        .iter()
        .filter(|w| !ref_set.contains(w.as_str()))
        .collect();
    let union_size = candidate_pool.len() + distinct_refs.len();
    let target = s_hat.min(1 + union_size);
    let n_distractors = target - 1 - distinct_refs.len();

    let mut entries = Vec::with_capacity(target);
    entries.push(NO_CONTEXT.to_string());
    entries.extend(distinct_refs.iter().map(|w| w.to_string()));
    entries.extend(
        rng.sample_without_replacement(candidate_pool, n_distractors)
            .into_iter()
            .cloned(),
    );

    let ref_indices: Vec<usize> = (1..=distinct_refs.len()).collect();
    let ref_sequence: Vec<(usize, Span)> = ref_seq
        .iter()
        .map(|r| {
            let idx = entries
                .iter()
                .position(|e| *e == r.word)
                .expect("reference word placed in subset entries");
            (idx, r.span)
        })
        .collect();
    Ok(ContextSubset {
        entries,
        ref_indices,
        ref_sequence,
    })
}
