//! Scoring and diagnostics: character and word error rates, span-restricted
//! context CER, shot-bucketed word errors, inference context-list
//! construction and attention-mass summaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::context::{reference_context, ContextList, ContextSubset, RefOccurrence};
use crate::corpus::{shot_bucket, FreqTable, Span, Utterance};
use crate::error::{Error, Result};
use crate::model::{
    encode_acoustic, forward_full, greedy_decode, greedy_decode_span, head_logits, ids_to_string,
    AdapterParams, BackboneParams, ForwardCache,
};
use crate::numerics::Tensor2;

/// One step of an optimal edit-distance alignment. `Ins` records the
/// reference position the extra hypothesis item sits at (between reference
/// index `at - 1` and `at`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match { r: usize, h: usize },
    Sub { r: usize, h: usize },
    Del { r: usize },
    Ins { at: usize, h: usize },
}

/// Unit-cost Levenshtein distance with one optimal alignment. Backtrace
/// ties prefer substitution over insertion over deletion, which pins the
/// alignment (and everything derived from it) deterministically.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> (usize, Vec<EditOp>) {
    let n = reference.len();
    let m = hypothesis.len();
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for (j, cell) in d.iter_mut().enumerate().take(m + 1) {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let sub = d[(i - 1) * w + j - 1] + cost;
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if here == d[(i - 1) * w + j - 1] + cost {
                ops.push(if cost == 0 {
                    EditOp::Match { r: i - 1, h: j - 1 }
                } else {
                    EditOp::Sub { r: i - 1, h: j - 1 }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && here == d[i * w + j - 1] + 1 {
            ops.push(EditOp::Ins { at: i, h: j - 1 });
            j -= 1;
            continue;
        }
        ops.push(EditOp::Del { r: i - 1 });
        i -= 1;
    }
    ops.reverse();
    (d[n * w + m], ops)
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    align(a, b).0
}

/// Span-restricted edit counting for C-CER: substitutions and deletions at
/// reference positions inside a span, plus insertions whose alignment point
/// lies strictly inside a span. Returns (errors, total span length).
pub fn span_edit_counts(
    reference: &[char],
    hypothesis: &[char],
    spans: &[Span],
) -> (usize, usize) {
    let total: usize = spans.iter().map(Span::len).sum();
    if total == 0 {
        return (0, 0);
    }
    let in_span = |pos: usize| spans.iter().any(|s| s.contains(pos));
    let strictly_inside = |pos: usize| spans.iter().any(|s| pos > s.start && pos < s.end);
    let (_, ops) = align(reference, hypothesis);
    let mut errors = 0;
    for op in ops {
        match op {
            EditOp::Sub { r, .. } | EditOp::Del { r } => {
                if in_span(r) {
                    errors += 1;
                }
            }
            EditOp::Ins { at, .. } => {
                if strictly_inside(at) {
                    errors += 1;
                }
            }
            EditOp::Match { .. } => {}
        }
    }
    (errors, total)
}

/// Character error rate; with `spans` present, the span-restricted C-CER.
pub fn cer(reference: &str, hypothesis: &str, spans: Option<&[Span]>) -> Result<f64> {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    match spans {
        None => {
            if r.is_empty() {
                return Err(Error::EmptyReference);
            }
            Ok(levenshtein(&r, &h) as f64 / r.len() as f64)
        }
        Some(spans) => {
            for s in spans {
                if s.end > r.len() || s.is_empty() {
                    return Err(Error::EmptySpans);
                }
            }
            let (errors, total) = span_edit_counts(&r, &h, spans);
            if total == 0 {
                return Err(Error::EmptySpans);
            }
            Ok(errors as f64 / total as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BucketCount {
    pub refs: u64,
    pub errors: u64,
}

impl BucketCount {
    pub fn rate(&self) -> f64 {
        if self.refs == 0 {
            0.0
        } else {
            self.errors as f64 / self.refs as f64
        }
    }
}

/// Word-level and context word-level error tallies per shot bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BucketTally {
    pub word: [BucketCount; 4],
    pub context: [BucketCount; 4],
}

impl BucketTally {
    pub fn merge(&mut self, other: &BucketTally) {
        for k in 0..4 {
            self.word[k].refs += other.word[k].refs;
            self.word[k].errors += other.word[k].errors;
            self.context[k].refs += other.context[k].refs;
            self.context[k].errors += other.context[k].errors;
        }
    }
}

/// Word-level error rates under Levenshtein alignment: a reference word is
/// an error when substituted or deleted; insertions charge nothing. Bucketed
/// by the training count, with a parallel tally restricted to context-list
/// words.
pub fn bucketed_word_errors(
    ref_words: &[String],
    hyp_words: &[String],
    freq: &FreqTable,
    context_list: Option<&ContextList>,
) -> BucketTally {
    let mut tally = BucketTally::default();
    let (_, ops) = align(ref_words, hyp_words);
    for op in ops {
        let (r, is_error) = match op {
            EditOp::Match { r, .. } => (r, false),
            EditOp::Sub { r, .. } => (r, true),
            EditOp::Del { r } => (r, true),
            EditOp::Ins { .. } => continue,
        };
        let word = &ref_words[r];
        let k = shot_bucket(freq.count(word)).index();
        tally.word[k].refs += 1;
        tally.word[k].errors += u64::from(is_error);
        if context_list.is_some_and(|l| l.contains(word)) {
            tally.context[k].refs += 1;
            tally.context[k].errors += u64::from(is_error);
        }
    }
    tally
}

/// Inference context list: words occurring fewer than `threshold` times in
/// the test split, unioned with every zero-shot word.
pub fn build_inference_context_list(
    test: &[Utterance],
    zero_shot_words: &[String],
    threshold: u64,
) -> Result<ContextList> {
    let test_counts =
        FreqTable::from_word_iter(test.iter().flat_map(|u| u.words.iter().map(|w| w.as_str())));
    let mut words: Vec<String> = test_counts
        .iter()
        .filter(|&(_, n)| n < threshold)
        .map(|(w, _)| w.to_string())
        .collect();
    words.extend(zero_shot_words.iter().cloned());
    ContextList::new(words, threshold.saturating_sub(1).max(1))
        .map_err(|_| Error::EmptyInferenceList)
}

/// Mean mass of one attention column over a set of frame spans.
fn mean_column_mass(attention: &Tensor2, col: usize, spans: &[Span]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in spans {
        for t in s.start..s.end.min(attention.rows()) {
            sum += attention.get(t, col);
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Attention-mass diagnostics of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct AttentionSummary {
    /// (word, mean attention mass on its column within its gold span), one
    /// entry per reference occurrence.
    pub per_ref: Vec<(String, f64)>,
    /// Mean `<no-context>` mass within reference context spans.
    pub no_context_in_context: Option<f64>,
    /// Mean `<no-context>` mass within silence frames.
    pub no_context_in_silence: Option<f64>,
}

pub fn attention_summary(
    cache: &ForwardCache,
    subset: &ContextSubset,
    word_spans: &[Span],
) -> AttentionSummary {
    let att = &cache.attention;
    let per_ref: Vec<(String, f64)> = subset
        .ref_sequence
        .iter()
        .filter_map(|&(idx, span)| {
            mean_column_mass(att, idx, &[span]).map(|m| (subset.entries[idx].clone(), m))
        })
        .collect();
    let context_spans: Vec<Span> = subset.ref_sequence.iter().map(|&(_, s)| s).collect();
    let silence_spans = silence_spans(att.rows(), word_spans);
    AttentionSummary {
        per_ref,
        no_context_in_context: mean_column_mass(att, 0, &context_spans),
        no_context_in_silence: mean_column_mass(att, 0, &silence_spans),
    }
}

/// Frames outside every word span.
fn silence_spans(t_frames: usize, word_spans: &[Span]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut cursor = 0;
    for w in word_spans {
        if w.start > cursor {
            spans.push(Span {
                start: cursor,
                end: w.start,
            });
        }
        cursor = w.end;
    }
    if cursor < t_frames {
        spans.push(Span {
            start: cursor,
            end: t_frames,
        });
    }
    spans
}

/// How evaluation subsets are formed from the inference context list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Score against consecutive S_hat-sized chunks of the full list and
    /// decode from the chunk containing the most reference words. Headline
    /// metrics use this mode: it never peeks at the references to build a
    /// subset.
    Realistic,
    /// One subset per utterance with the reference words ranked first, then
    /// the rest of the list, truncated to S_hat.
    Diagnostic,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub s_hat: usize,
    pub mode: EvalMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            s_hat: 200,
            mode: EvalMode::Realistic,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BucketRate {
    pub refs: u64,
    pub errors: u64,
    pub rate: f64,
}

/// Corpus-level scoring report.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub cer: f64,
    pub c_cer: f64,
    pub bucket_rates: [BucketRate; 4],
    pub context_bucket_rates: [BucketRate; 4],
    pub n_utterances: usize,
}

/// Mean attention-mass diagnostics over a whole evaluation run.
#[derive(Debug, Clone, Default)]
pub struct AttentionAggregate {
    ref_mass_sum: f64,
    ref_mass_n: usize,
    noctx_ctx_sum: f64,
    noctx_ctx_n: usize,
    noctx_sil_sum: f64,
    noctx_sil_n: usize,
}

impl AttentionAggregate {
    fn add_summary(&mut self, s: &AttentionSummary) {
        for (_, m) in &s.per_ref {
            self.ref_mass_sum += m;
            self.ref_mass_n += 1;
        }
        if let Some(m) = s.no_context_in_context {
            self.noctx_ctx_sum += m;
            self.noctx_ctx_n += 1;
        }
        if let Some(m) = s.no_context_in_silence {
            self.noctx_sil_sum += m;
            self.noctx_sil_n += 1;
        }
    }

    pub fn mean_ref_mass(&self) -> Option<f64> {
        (self.ref_mass_n > 0).then(|| self.ref_mass_sum / self.ref_mass_n as f64)
    }

    pub fn mean_no_context_in_context(&self) -> Option<f64> {
        (self.noctx_ctx_n > 0).then(|| self.noctx_ctx_sum / self.noctx_ctx_n as f64)
    }

    pub fn mean_no_context_in_silence(&self) -> Option<f64> {
        (self.noctx_sil_n > 0).then(|| self.noctx_sil_sum / self.noctx_sil_n as f64)
    }
}

/// Decode and score one utterance against fixed subset entries; shared by
/// both eval modes.
struct UtteranceScore {
    hyp_chars: String,
    hyp_words: Vec<String>,
}

fn decode_utterance(logits: &Tensor2, spans: &[Span], blank: usize) -> UtteranceScore {
    let hyp_chars = ids_to_string(&greedy_decode(logits, blank));
    let hyp_words: Vec<String> = spans
        .iter()
        .map(|s| ids_to_string(&greedy_decode_span(logits, s.start, s.end, blank)))
        .filter(|w| !w.is_empty())
        .collect();
    UtteranceScore {
        hyp_chars,
        hyp_words,
    }
}

/// Evaluate a test split. `adapter` absent scores the raw backbone.
/// The training-set `freq` drives the shot buckets; `list` is the inference
/// context list.
pub fn evaluate_corpus(
    test: &[Utterance],
    freq: &FreqTable,
    backbone: &BackboneParams,
    adapter: Option<&AdapterParams>,
    list: &ContextList,
    opts: &EvalOptions,
) -> Result<(EvalReport, AttentionAggregate)> {
    if opts.s_hat < 2 {
        return Err(Error::Config("eval s_hat must be >= 2".into()));
    }
    let blank = backbone.blank();
    let mut edit_sum = 0usize;
    let mut ref_len_sum = 0usize;
    let mut span_err_sum = 0usize;
    let mut span_len_sum = 0usize;
    let mut tally = BucketTally::default();
    let mut attention = AttentionAggregate::default();

    for u in test {
        let refs = reference_context(u, list);
        let score = match adapter {
            None => {
                let h = encode_acoustic(&u.frames, backbone)?;
                let logits = head_logits(&h, backbone);
                decode_utterance(&logits, &u.word_spans, blank)
            }
            Some(adapter) => match opts.mode {
                EvalMode::Diagnostic => {
                    let subset = diagnostic_subset(&refs, list, opts.s_hat);
                    let cache = forward_full(&u.frames, &subset, backbone, adapter)?;
                    attention.add_summary(&attention_summary(&cache, &subset, &u.word_spans));
                    decode_utterance(&cache.logits, &u.word_spans, blank)
                }
                EvalMode::Realistic => {
                    let context_spans: Vec<Span> = refs.iter().map(|r| r.span).collect();
                    let silence = silence_spans(u.frames.rows(), &u.word_spans);
                    let chunks: Vec<&[String]> = list.words().chunks(opts.s_hat - 1).collect();
                    let mut best: Option<(usize, ForwardCache)> = None;
                    let mut best_refs = 0usize;
                    for (ci, chunk) in chunks.iter().enumerate() {
                        let subset = ContextSubset::from_entries(chunk, &refs);
                        let cache = forward_full(&u.frames, &subset, backbone, adapter)?;

                        // Per-ref masses come from the chunk holding the
                        // word; sentinel masses are averaged over chunks
                        // against the utterance-level context spans.
                        let mut summary = attention_summary(&cache, &subset, &u.word_spans);
                        summary.no_context_in_context =
                            mean_column_mass(&cache.attention, 0, &context_spans);
                        summary.no_context_in_silence =
                            mean_column_mass(&cache.attention, 0, &silence);
                        attention.add_summary(&summary);

                        let n_refs = subset.ref_sequence.len();
                        if best.is_none() || n_refs > best_refs {
                            best_refs = n_refs;
                            best = Some((ci, cache));
                        }
                    }
                    let (_, cache) = best.expect("context list is never empty");
                    decode_utterance(&cache.logits, &u.word_spans, blank)
                }
            },
        };

        let ref_chars: Vec<char> = u.chars.chars().collect();
        let hyp_chars: Vec<char> = score.hyp_chars.chars().collect();
        edit_sum += levenshtein(&ref_chars, &hyp_chars);
        ref_len_sum += ref_chars.len();

        let char_spans: Vec<Span> = u
            .words
            .iter()
            .enumerate()
            .filter(|(_, w)| list.contains(w))
            .map(|(i, _)| u.char_span_of_word(i))
            .collect();
        let (e, l) = span_edit_counts(&ref_chars, &hyp_chars, &char_spans);
        span_err_sum += e;
        span_len_sum += l;

        tally.merge(&bucketed_word_errors(
            &u.words,
            &score.hyp_words,
            freq,
            Some(list),
        ));
    }

    if ref_len_sum == 0 {
        return Err(Error::EmptyReference);
    }
    if span_len_sum == 0 {
        return Err(Error::EmptySpans);
    }
    let to_rates = |counts: &[BucketCount; 4]| {
        let mut out = [BucketRate::default(); 4];
        for (o, c) in out.iter_mut().zip(counts) {
            *o = BucketRate {
                refs: c.refs,
                errors: c.errors,
                rate: c.rate(),
            };
        }
        out
    };
    Ok((
        EvalReport {
            cer: edit_sum as f64 / ref_len_sum as f64,
            c_cer: span_err_sum as f64 / span_len_sum as f64,
            bucket_rates: to_rates(&tally.word),
            context_bucket_rates: to_rates(&tally.context),
            n_utterances: test.len(),
        },
        attention,
    ))
}

/// Greedy-decode CER of the bare backbone over the test utterances that
/// contain no zero-shot words; the stage-0 quality gate.
pub fn backbone_cer_on_seen(
    test: &[Utterance],
    zero_shot_words: &[String],
    backbone: &BackboneParams,
) -> Result<f64> {
    let blank = backbone.blank();
    let mut edits = 0usize;
    let mut len = 0usize;
    for u in test {
        if u.words.iter().any(|w| zero_shot_words.contains(w)) {
            continue;
        }
        let h = encode_acoustic(&u.frames, backbone)?;
        let logits = head_logits(&h, backbone);
        let hyp = ids_to_string(&greedy_decode(&logits, blank));
        let r: Vec<char> = u.chars.chars().collect();
        let hv: Vec<char> = hyp.chars().collect();
        edits += levenshtein(&r, &hv);
        len += r.len();
    }
    if len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(edits as f64 / len as f64)
}

/// Diagnostic-mode subset: references first, then the rest of the list,
/// truncated to `s_hat` entries including the sentinel.
fn diagnostic_subset(refs: &[RefOccurrence], list: &ContextList, s_hat: usize) -> ContextSubset {
    let mut words: Vec<String> = Vec::with_capacity(s_hat - 1);
    for r in refs {
        if !words.contains(&r.word) {
            words.push(r.word.clone());
        }
    }
    for w in list.words() {
        if words.len() + 1 >= s_hat {
            break;
        }
        if !words.contains(w) {
            words.push(w.clone());
        }
    }
    words.truncate(s_hat - 1);
    ContextSubset::from_entries(&words, refs)
}

/// Flat key = value serialization plus per-bucket TSVs. The C-CER counting
/// rule is documented in the header because it is a local convention.
pub fn write_report(dir: &Path, report: &EvalReport, attention: &AttentionAggregate) -> Result<()> {
    let mut out = String::new();
    out.push_str("# c-cer rule: substitutions and deletions at reference positions inside a\n");
    out.push_str("# context-word span count as errors, as do insertions whose alignment point\n");
    out.push_str("# falls strictly inside a span; the denominator is the total span length.\n");
    writeln!(out, "cer = {:.6}", report.cer).unwrap();
    writeln!(out, "c_cer = {:.6}", report.c_cer).unwrap();
    writeln!(out, "n_utterances = {}", report.n_utterances).unwrap();
    if let Some(m) = attention.mean_ref_mass() {
        writeln!(out, "mean_ref_attention_mass = {m:.6}").unwrap();
    }
    if let Some(m) = attention.mean_no_context_in_context() {
        writeln!(out, "mean_no_context_mass_in_context_spans = {m:.6}").unwrap();
    }
    if let Some(m) = attention.mean_no_context_in_silence() {
        writeln!(out, "mean_no_context_mass_in_silence = {m:.6}").unwrap();
    }
    std::fs::write(dir.join("report.txt"), out)?;

    let bucket_tsv = |rates: &[BucketRate; 4]| {
        let mut t = String::from("bucket\tref_count\terrors\trate\n");
        for (b, r) in crate::corpus::ShotBucket::ALL.iter().zip(rates) {
            writeln!(t, "{}\t{}\t{}\t{:.6}", b.name(), r.refs, r.errors, r.rate).unwrap();
        }
        t
    };
    std::fs::write(dir.join("buckets.tsv"), bucket_tsv(&report.bucket_rates))?;
    std::fs::write(
        dir.join("context_buckets.tsv"),
        bucket_tsv(&report.context_bucket_rates),
    )?;
    Ok(())
}

/// Raw attention matrix as a TSV heatmap: a header of subset words with the
/// sentinel rendered literally, then one probability row per frame.
pub fn attention_tsv(cache: &ForwardCache, subset: &ContextSubset) -> String {
    let mut out = subset.entries.join("\t");
    out.push('\n');
    for t in 0..cache.attention.rows() {
        let row: Vec<String> = cache
            .attention
            .row(t)
            .iter()
            .map(|p| format!("{p:.6}"))
            .collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}
