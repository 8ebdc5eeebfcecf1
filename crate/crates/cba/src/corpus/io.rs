//! Text serialization of corpus splits and prototype tables.
//!
//! Split format: one utterance per line with TAB-separated fields
//! `id`, space-joined words, base64 little-endian f64 frame block,
//! comma-joined word spans `start-end`. Prototype format: one line per
//! character, space-separated reals.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use super::{FreqTable, ShotBucket, Span, Utterance};
use crate::corpus::shot_bucket;
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub fn save_split(path: &Path, utterances: &[Utterance]) -> Result<()> {
    let mut out = String::new();
    for u in utterances {
        let mut frame_bytes = Vec::with_capacity(u.frames.data().len() * 8);
        for v in u.frames.data() {
            frame_bytes.extend_from_slice(&v.to_le_bytes());
        }
        let spans: Vec<String> = u
            .word_spans
            .iter()
            .map(|s| format!("{}-{}", s.start, s.end))
            .collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            u.id,
            u.words.join(" "),
            B64.encode(&frame_bytes),
            spans.join(",")
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_split(path: &Path, feature_dim: usize) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path)?;
    let mut utterances = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::CorpusFormat(format!(
                "{}:{}: expected 4 TAB-separated fields, found {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let id = fields[0].to_string();
        let words: Vec<String> = if fields[1].is_empty() {
            Vec::new()
        } else {
            fields[1].split(' ').map(str::to_string).collect()
        };
        let bytes = B64.decode(fields[2]).map_err(|e| {
            Error::CorpusFormat(format!("{}:{}: bad base64: {e}", path.display(), lineno + 1))
        })?;
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::CorpusFormat(format!(
                "{}:{}: frame block is not a whole number of f64s",
                path.display(),
                lineno + 1
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if feature_dim == 0 || !values.len().is_multiple_of(feature_dim) {
            return Err(Error::CorpusFormat(format!(
                "{}:{}: {} values do not form rows of width {feature_dim}",
                path.display(),
                lineno + 1,
                values.len()
            )));
        }
        let rows = values.len() / feature_dim;
        let frames = Tensor2::from_vec(rows, feature_dim, values)?;
        let word_spans: Vec<Span> = if fields[3].is_empty() {
            Vec::new()
        } else {
            fields[3]
                .split(',')
                .map(|s| {
                    let (a, b) = s.split_once('-').ok_or_else(|| {
                        Error::CorpusFormat(format!(
                            "{}:{}: bad span {s:?}",
                            path.display(),
                            lineno + 1
                        ))
                    })?;
                    let parse = |x: &str| {
                        x.parse::<usize>().map_err(|_| {
                            Error::CorpusFormat(format!(
                                "{}:{}: bad span bound {x:?}",
                                path.display(),
                                lineno + 1
                            ))
                        })
                    };
                    Ok(Span {
                        start: parse(a)?,
                        end: parse(b)?,
                    })
                })
                .collect::<Result<_>>()?
        };
        let chars = words.concat();
        utterances.push(Utterance {
            id,
            words,
            chars,
            frames,
            word_spans,
        });
    }
    Ok(utterances)
}

pub fn save_prototypes(path: &Path, prototypes: &Tensor2) -> Result<()> {
    let mut out = String::new();
    for r in 0..prototypes.rows() {
        let line: Vec<String> = prototypes.row(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_prototypes(path: &Path) -> Result<Tensor2> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(' ')
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    Error::CorpusFormat(format!(
                        "{}:{}: bad real {v:?}",
                        path.display(),
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::CorpusFormat(format!(
                    "{}:{}: ragged prototype row",
                    path.display(),
                    lineno + 1
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::CorpusFormat(format!(
            "{}: empty prototype file",
            path.display()
        )));
    }
    let cols = rows[0].len();
    Tensor2::from_vec(rows.len(), cols, rows.concat())
}

/// Frequency table dump: word, count and shot bucket, one word per line.
pub fn save_freq_tsv(path: &Path, freq: &FreqTable) -> Result<()> {
    let mut out = String::from("word\tcount\tbucket\n");
    let mut rows: Vec<(&str, u64)> = freq.iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    for (word, count) in rows {
        let bucket: ShotBucket = shot_bucket(count);
        out.push_str(&format!("{word}\t{count}\t{}\n", bucket.name()));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};

    #[test]
    fn split_round_trip_is_exact() {
        let cfg = CorpusConfig {
            vocab_size: 20,
            n_train: 8,
            n_test: 4,
            n_zero_shot_words: 2,
            seed: 11,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.tsv");
        save_split(&path, &corpus.train).unwrap();
        let loaded = load_split(&path, cfg.feature_dim).unwrap();
        assert_eq!(loaded, corpus.train);
    }

    #[test]
    fn prototype_round_trip_is_exact() {
        let cfg = CorpusConfig {
            vocab_size: 20,
            n_train: 4,
            n_test: 2,
            n_zero_shot_words: 0,
            seed: 11,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prototypes.txt");
        save_prototypes(&path, &corpus.prototypes).unwrap();
        let loaded = load_prototypes(&path).unwrap();
        assert_eq!(loaded, corpus.prototypes);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "id only two\tfields\n").unwrap();
        assert!(load_split(&path, 4).is_err());
        std::fs::write(&path, "id\tab cd\t!!!notbase64!!!\t2-8\n").unwrap();
        assert!(load_split(&path, 4).is_err());
    }
}
