//! Run configuration: a flat JSON object with dotted keys, strictly
//! validated. Unknown keys, type mismatches and constraint violations are
//! errors naming the key and line; an empty file means full defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::eval::EvalMode;
use crate::model::ModelConfig;
use crate::trainer::{ResamplePolicy, TrainConfig};

/// Evaluation options carried by the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub s_hat: usize,
    /// Words occurring fewer than this many times in the test split join the
    /// inference context list.
    pub test_count_threshold: u64,
    pub mode: EvalMode,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            s_hat: 200,
            test_count_threshold: 10,
            mode: EvalMode::Realistic,
        }
    }
}

/// Everything a run needs; defaults are the desk-scale configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Epochs for the pretraining stage (stage 0 has its own budget).
    pub pretrain_epochs: usize,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            pretrain_epochs: 10,
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn desk_default() -> Self {
        Self::default()
    }

    /// Training settings for stage 0. Pretraining is plain supervised
    /// learning and takes a healthier step size than the adapter stage's
    /// paper value.
    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            stage: crate::trainer::Stage::Pretrain,
            epochs: self.pretrain_epochs,
            learning_rate: 3e-3,
            ..self.train.clone()
        }
    }

    /// Override every seed in the config (corpus and training).
    pub fn override_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.s_hat < 2 {
            return Err(Error::Config("eval.s_hat must be >= 2".into()));
        }
        if self.eval.test_count_threshold < 1 {
            return Err(Error::Config(
                "eval.test_count_threshold must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Flat dotted-key view, used for the effective-config snapshot.
    pub fn to_flat_map(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        let c = &self.corpus;
        m.insert("corpus.charset_size".into(), c.charset_size.into());
        m.insert("corpus.vocab_size".into(), c.vocab_size.into());
        m.insert("corpus.zipf_exponent".into(), json_f64(c.zipf_exponent));
        m.insert("corpus.word_len_min".into(), c.word_len_min.into());
        m.insert("corpus.word_len_max".into(), c.word_len_max.into());
        m.insert("corpus.utterance_len_min".into(), c.utterance_len_min.into());
        m.insert("corpus.utterance_len_max".into(), c.utterance_len_max.into());
        m.insert("corpus.frames_per_char".into(), c.frames_per_char.into());
        m.insert("corpus.silence_frames".into(), c.silence_frames.into());
        m.insert("corpus.feature_dim".into(), c.feature_dim.into());
        m.insert("corpus.noise_sigma".into(), json_f64(c.noise_sigma));
        m.insert("corpus.n_train".into(), c.n_train.into());
        m.insert("corpus.n_test".into(), c.n_test.into());
        m.insert("corpus.n_zero_shot_words".into(), c.n_zero_shot_words.into());
        m.insert("corpus.seed".into(), c.seed.into());

        m.insert("model.width".into(), self.model.width.into());
        m.insert("model.char_embed_dim".into(), self.model.char_embed_dim.into());
        m.insert("model.lstm_hidden".into(), self.model.lstm_hidden.into());

        let t = &self.train;
        m.insert("train.gamma".into(), t.gamma.into());
        m.insert("train.s_hat".into(), t.s_hat.into());
        m.insert("train.lambda1".into(), json_f64(t.lambda1));
        m.insert("train.lambda2".into(), json_f64(t.lambda2));
        m.insert("train.alpha".into(), json_f64(t.alpha));
        m.insert("train.dedupe_ctc_labels".into(), t.dedupe_ctc_labels.into());
        m.insert("train.learning_rate".into(), json_f64(t.learning_rate));
        m.insert("train.epochs".into(), t.epochs.into());
        m.insert("train.pretrain_epochs".into(), self.pretrain_epochs.into());
        m.insert("train.batch_size".into(), t.batch_size.into());
        m.insert("train.seed".into(), t.seed.into());
        m.insert(
            "train.resample".into(),
            match t.resample {
                ResamplePolicy::PerVisit => "per-visit",
                ResamplePolicy::OncePerUtterance => "once",
            }
            .into(),
        );

        m.insert("eval.s_hat".into(), self.eval.s_hat.into());
        m.insert(
            "eval.test_count_threshold".into(),
            self.eval.test_count_threshold.into(),
        );
        m.insert(
            "eval.mode".into(),
            match self.eval.mode {
                EvalMode::Realistic => "realistic",
                EvalMode::Diagnostic => "diagnostic",
            }
            .into(),
        );
        m
    }

    /// Write the effective configuration next to a run's outputs.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let map = self.to_flat_map();
        let text = serde_json::to_string_pretty(&map).expect("config serializes");
        fs::write(dir.join("effective-config.json"), text + "\n")?;
        Ok(())
    }
}

fn json_f64(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

/// Parse a config file. The key set is closed; defaults fill whatever the
/// file leaves out.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&text, path)
}

pub fn parse_config_str(text: &str, path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::desk_default();
    if text.trim().is_empty() {
        return Ok(cfg);
    }
    let root: Value = serde_json::from_str(text).map_err(|e| {
        Error::Config(format!("{}:{}: {e}", path.display(), e.line()))
    })?;
    let Value::Object(map) = root else {
        return Err(Error::Config(format!(
            "{}: top level must be a JSON object of dotted keys",
            path.display()
        )));
    };

    let find_line = |key: &str| -> usize {
        let needle = format!("\"{key}\"");
        text.lines()
            .position(|l| l.contains(&needle))
            .map(|i| i + 1)
            .unwrap_or(0)
    };
    let fail = |key: &str, msg: &str| -> Error {
        Error::Config(format!(
            "{}:{}: key {key:?}: {msg}",
            path.display(),
            find_line(key)
        ))
    };

    for (key, value) in &map {
        apply_key(&mut cfg, key, value).map_err(|msg| fail(key, &msg))?;
    }
    cfg.validate()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

type ApplyResult = std::result::Result<(), String>;

fn apply_key(cfg: &mut RunConfig, key: &str, value: &Value) -> ApplyResult {
    let as_usize = |v: &Value| -> std::result::Result<usize, String> {
        v.as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| format!("expected a non-negative integer, found {v}"))
    };
    let as_u64 = |v: &Value| -> std::result::Result<u64, String> {
        v.as_u64()
            .ok_or_else(|| format!("expected a non-negative integer, found {v}"))
    };
    let as_f64 = |v: &Value| -> std::result::Result<f64, String> {
        v.as_f64()
            .ok_or_else(|| format!("expected a number, found {v}"))
    };
    let as_bool = |v: &Value| -> std::result::Result<bool, String> {
        v.as_bool()
            .ok_or_else(|| format!("expected a boolean, found {v}"))
    };

    match key {
        "corpus.charset_size" => cfg.corpus.charset_size = as_usize(value)?,
        "corpus.vocab_size" => cfg.corpus.vocab_size = as_usize(value)?,
        "corpus.zipf_exponent" => cfg.corpus.zipf_exponent = as_f64(value)?,
        "corpus.word_len_min" => cfg.corpus.word_len_min = as_usize(value)?,
        "corpus.word_len_max" => cfg.corpus.word_len_max = as_usize(value)?,
        "corpus.utterance_len_min" => cfg.corpus.utterance_len_min = as_usize(value)?,
        "corpus.utterance_len_max" => cfg.corpus.utterance_len_max = as_usize(value)?,
        "corpus.frames_per_char" => cfg.corpus.frames_per_char = as_usize(value)?,
        "corpus.silence_frames" => cfg.corpus.silence_frames = as_usize(value)?,
        "corpus.feature_dim" => cfg.corpus.feature_dim = as_usize(value)?,
        "corpus.noise_sigma" => cfg.corpus.noise_sigma = as_f64(value)?,
        "corpus.n_train" => cfg.corpus.n_train = as_usize(value)?,
        "corpus.n_test" => cfg.corpus.n_test = as_usize(value)?,
        "corpus.n_zero_shot_words" => cfg.corpus.n_zero_shot_words = as_usize(value)?,
        "corpus.seed" => cfg.corpus.seed = as_u64(value)?,

        "model.width" => cfg.model.width = as_usize(value)?,
        "model.char_embed_dim" => cfg.model.char_embed_dim = as_usize(value)?,
        "model.lstm_hidden" => cfg.model.lstm_hidden = as_usize(value)?,

        "train.gamma" => cfg.train.gamma = as_u64(value)?,
        "train.s_hat" => cfg.train.s_hat = as_usize(value)?,
        "train.lambda1" => {
            cfg.train.lambda1 = as_f64(value)?;
            if !(0.0..=1.0).contains(&cfg.train.lambda1) {
                return Err("lambda1 out of range [0,1]".into());
            }
        }
        "train.lambda2" => {
            cfg.train.lambda2 = as_f64(value)?;
            if !(0.0..=1.0).contains(&cfg.train.lambda2) {
                return Err("lambda2 out of range [0,1]".into());
            }
        }
        "train.alpha" => {
            cfg.train.alpha = as_f64(value)?;
            if !(0.0..1.0).contains(&cfg.train.alpha) {
                return Err("alpha out of range [0,1)".into());
            }
        }
        "train.dedupe_ctc_labels" => cfg.train.dedupe_ctc_labels = as_bool(value)?,
        "train.learning_rate" => cfg.train.learning_rate = as_f64(value)?,
        "train.epochs" => cfg.train.epochs = as_usize(value)?,
        "train.pretrain_epochs" => cfg.pretrain_epochs = as_usize(value)?,
        "train.batch_size" => cfg.train.batch_size = as_usize(value)?,
        "train.seed" => cfg.train.seed = as_u64(value)?,
        "train.resample" => {
            cfg.train.resample = match value.as_str() {
                Some("per-visit") => ResamplePolicy::PerVisit,
                Some("once") => ResamplePolicy::OncePerUtterance,
                _ => return Err(format!("expected \"per-visit\" or \"once\", found {value}")),
            }
        }

        "eval.s_hat" => cfg.eval.s_hat = as_usize(value)?,
        "eval.test_count_threshold" => cfg.eval.test_count_threshold = as_u64(value)?,
        "eval.mode" => {
            cfg.eval.mode = match value.as_str() {
                Some("realistic") => EvalMode::Realistic,
                Some("diagnostic") => EvalMode::Diagnostic,
                _ => {
                    return Err(format!(
                        "expected \"realistic\" or \"diagnostic\", found {value}"
                    ))
                }
            }
        }
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_str(text, &PathBuf::from("test.json"))
    }

    #[test]
    fn empty_file_gives_desk_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, RunConfig::desk_default());
        assert_eq!(cfg.corpus.vocab_size, 200);
        assert_eq!(cfg.train.epochs, 20);
        assert_eq!(cfg.train.learning_rate, 5e-4);
    }

    #[test]
    fn gamma_two_to_sixteen_parses() {
        let cfg = parse(r#"{"train.gamma": 65536}"#).unwrap();
        assert_eq!(cfg.train.gamma, 1 << 16);
    }

    #[test]
    fn alpha_out_of_range_names_key_and_line() {
        let err = parse("{\n  \"train.alpha\": 1.5\n}").unwrap_err().to_string();
        assert!(err.contains("train.alpha"), "{err}");
        assert!(err.contains(":2"), "{err}");
        assert!(err.contains("[0,1)"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = parse("{\n  \"corpus.bogus\": 3\n}").unwrap_err().to_string();
        assert!(err.contains("corpus.bogus"), "{err}");
        assert!(err.contains("unknown key"), "{err}");
        assert!(err.contains(":2"), "{err}");
    }

    #[test]
    fn type_mismatch_is_rejected() {
        let err = parse(r#"{"corpus.vocab_size": "many"}"#).unwrap_err().to_string();
        assert!(err.contains("corpus.vocab_size"), "{err}");
        assert!(err.contains("integer"), "{err}");
    }

    #[test]
    fn snapshot_round_trips_through_the_parser() {
        let mut cfg = RunConfig::desk_default();
        cfg.train.gamma = 16;
        cfg.train.lambda2 = 1.0;
        cfg.eval.mode = EvalMode::Diagnostic;
        cfg.train.resample = ResamplePolicy::OncePerUtterance;
        let text = serde_json::to_string_pretty(&cfg.to_flat_map()).unwrap();
        let back = parse(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn constraint_violations_surface_from_validate() {
        let err = parse(r#"{"corpus.word_len_min": 1}"#).unwrap_err().to_string();
        assert!(err.contains("word_len_min"), "{err}");
    }
}
