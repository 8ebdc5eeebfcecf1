//! Command-line orchestration: corpus generation, two-stage training,
//! evaluation, frequency statistics, attention dumps and the ablation grid.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use cba::checkpoint;
use cba::config::{parse_config, RunConfig};
use cba::context::{reference_context, ContextSubset};
use cba::corpus::{generate_corpus, imbalance_curve, save_freq_tsv, save_prototypes, save_split, Corpus};
use cba::error::{Error, Result};
use cba::eval::{
    attention_summary, attention_tsv, backbone_cer_on_seen, build_inference_context_list,
    evaluate_corpus, write_report, EvalOptions, EvalReport,
};
use cba::model::{forward_full, AdapterParams, BackboneParams};
use cba::trainer::{format_epoch_log, pretrain_backbone, train_adapter};

const USAGE: &str = "\
usage: cba <command> [--config PATH] [--out DIR] [--seed N] [--quiet] [options]

commands:
  gen-corpus        generate the synthetic corpus and write both splits
  pretrain          stage 0: train the backbone, write backbone.ckpt
  train-adapter     stage 1: train the adapter against a frozen backbone
  eval              score the test split; --baseline skips the adapter
  stats             frequency table and imbalance-rate curve
  attention-dump    attention heatmap for one test utterance (--utterance N)
  ablate            run the gamma/lambda2/alpha grid and tabulate it

options:
  --config PATH     JSON config of dotted keys (defaults when omitted)
  --out DIR         output directory (default ./out)
  --seed N          override corpus and training seeds
  --quiet           suppress progress lines
  --backbone PATH   backbone checkpoint (default OUT/backbone.ckpt)
  --adapter PATH    adapter checkpoint (default OUT/adapter.ckpt)
  --baseline        eval without any adapter
  --utterance N     test utterance index for attention-dump (default 0)
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run_command(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprint!("{msg}");
            ExitCode::from(2)
        }
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

enum CliError {
    Usage(String),
    Config(Error),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Config(e),
            other => CliError::Runtime(other),
        }
    }
}

struct Cli {
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    quiet: bool,
    backbone: Option<PathBuf>,
    adapter: Option<PathBuf>,
    baseline: bool,
    utterance: usize,
}

impl Cli {
    fn parse(args: &[String]) -> std::result::Result<(String, Cli), CliError> {
        let mut it = args.iter();
        let Some(command) = it.next() else {
            return Err(CliError::Usage(USAGE.to_string()));
        };
        let mut cli = Cli {
            config: None,
            out: PathBuf::from("out"),
            seed: None,
            quiet: false,
            backbone: None,
            adapter: None,
            baseline: false,
            utterance: 0,
        };
        while let Some(flag) = it.next() {
            let mut value = |name: &str| {
                it.next()
                    .cloned()
                    .ok_or_else(|| CliError::Usage(format!("missing value for {name}\n{USAGE}")))
            };
            match flag.as_str() {
                "--config" => cli.config = Some(PathBuf::from(value("--config")?)),
                "--out" => cli.out = PathBuf::from(value("--out")?),
                "--seed" => {
                    let v = value("--seed")?;
                    cli.seed = Some(v.parse().map_err(|_| {
                        CliError::Usage(format!("--seed expects an integer, got {v:?}\n"))
                    })?);
                }
                "--quiet" => cli.quiet = true,
                "--backbone" => cli.backbone = Some(PathBuf::from(value("--backbone")?)),
                "--adapter" => cli.adapter = Some(PathBuf::from(value("--adapter")?)),
                "--baseline" => cli.baseline = true,
                "--utterance" => {
                    let v = value("--utterance")?;
                    cli.utterance = v.parse().map_err(|_| {
                        CliError::Usage(format!("--utterance expects an index, got {v:?}\n"))
                    })?;
                }
                other => {
                    return Err(CliError::Usage(format!("unknown flag {other}\n{USAGE}")));
                }
            }
        }
        Ok((command.clone(), cli))
    }

    fn load_config(&self) -> std::result::Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(path).map_err(CliError::Config)?,
            None => RunConfig::desk_default(),
        };
        if let Some(seed) = self.seed {
            cfg.override_seed(seed);
        }
        Ok(cfg)
    }

    fn backbone_path(&self) -> PathBuf {
        self.backbone.clone().unwrap_or_else(|| self.out.join("backbone.ckpt"))
    }

    fn adapter_path(&self) -> PathBuf {
        self.adapter.clone().unwrap_or_else(|| self.out.join("adapter.ckpt"))
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn run_command(args: &[String]) -> std::result::Result<(), CliError> {
    let (command, cli) = Cli::parse(args)?;
    let cfg = cli.load_config()?;
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Runtime(e.into()))?;

    match command.as_str() {
        "gen-corpus" => cmd_gen_corpus(&cli, &cfg)?,
        "pretrain" => cmd_pretrain(&cli, &cfg)?,
        "train-adapter" => cmd_train_adapter(&cli, &cfg)?,
        "eval" => cmd_eval(&cli, &cfg)?,
        "stats" => cmd_stats(&cli, &cfg)?,
        "attention-dump" => cmd_attention_dump(&cli, &cfg)?,
        "ablate" => cmd_ablate(&cli, &cfg)?,
        other => {
            return Err(CliError::Usage(format!("unknown command {other:?}\n{USAGE}")));
        }
    }
    Ok(())
}

fn snapshot(cli: &Cli, cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    cfg.write_snapshot(dir)?;
    let _ = cli;
    Ok(())
}

fn cmd_gen_corpus(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let t0 = Instant::now();
    let corpus = generate_corpus(&cfg.corpus)?;
    snapshot(cli, cfg, &cli.out)?;
    save_split(&cli.out.join("train.tsv"), &corpus.train)?;
    save_split(&cli.out.join("test.tsv"), &corpus.test)?;
    save_prototypes(&cli.out.join("prototypes.txt"), &corpus.prototypes)?;
    save_freq_tsv(&cli.out.join("freq.tsv"), &corpus.freq)?;
    std::fs::write(
        cli.out.join("zero_shot_words.txt"),
        corpus.zero_shot_words.join("\n") + "\n",
    )?;
    cli.say(format!(
        "gen-corpus: {} train / {} test utterances, |vocab| {}, {} zero-shot words ({:.1?})",
        corpus.train.len(),
        corpus.test.len(),
        corpus.vocab.len(),
        corpus.zero_shot_words.len(),
        t0.elapsed()
    ));
    Ok(())
}

fn cmd_pretrain(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let t0 = Instant::now();
    let corpus = generate_corpus(&cfg.corpus)?;
    let (backbone, stats) = pretrain_backbone(
        &corpus.train,
        cfg.corpus.charset_size,
        cfg.corpus.feature_dim,
        &cfg.model,
        &cfg.pretrain_config(),
    )?;
    snapshot(cli, cfg, &cli.out)?;
    checkpoint::save_backbone(&cli.backbone_path(), &backbone)?;
    std::fs::write(cli.out.join("pretrain-log.tsv"), format_epoch_log(&stats))?;
    let cer = backbone_cer_on_seen(&corpus.test, &corpus.zero_shot_words, &backbone)?;
    std::fs::write(
        cli.out.join("pretrain-cer.txt"),
        format!("seen_word_test_cer = {cer:.6}\n"),
    )?;
    cli.say(format!(
        "pretrain: {} epochs, seen-word test CER {:.4} ({:.1?})",
        stats.len(),
        cer,
        t0.elapsed()
    ));
    Ok(())
}

fn cmd_train_adapter(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let t0 = Instant::now();
    let corpus = generate_corpus(&cfg.corpus)?;
    let backbone = checkpoint::load_backbone(&cli.backbone_path())?;
    let (adapter, stats) = train_adapter(&corpus, &corpus.freq, &backbone, &cfg.model, &cfg.train)?;
    snapshot(cli, cfg, &cli.out)?;
    checkpoint::save_adapter(&cli.adapter_path(), &adapter)?;
    std::fs::write(cli.out.join("adapter-log.tsv"), format_epoch_log(&stats))?;
    cli.say(format!(
        "train-adapter: {} epochs, final mean loss {:.4} ({:.1?})",
        stats.len(),
        stats.last().map(|s| s.total).unwrap_or(f64::NAN),
        t0.elapsed()
    ));
    Ok(())
}

fn eval_once(
    cfg: &RunConfig,
    corpus: &Corpus,
    backbone: &BackboneParams,
    adapter: Option<&AdapterParams>,
) -> Result<(EvalReport, cba::eval::AttentionAggregate)> {
    let list = build_inference_context_list(
        &corpus.test,
        &corpus.zero_shot_words,
        cfg.eval.test_count_threshold,
    )?;
    evaluate_corpus(
        &corpus.test,
        &corpus.freq,
        backbone,
        adapter,
        &list,
        &EvalOptions {
            s_hat: cfg.eval.s_hat,
            mode: cfg.eval.mode,
        },
    )
}

fn cmd_eval(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let t0 = Instant::now();
    let corpus = generate_corpus(&cfg.corpus)?;
    let backbone = checkpoint::load_backbone(&cli.backbone_path())?;
    let adapter = if cli.baseline {
        None
    } else {
        Some(checkpoint::load_adapter(&cli.adapter_path())?)
    };
    let (report, attention) = eval_once(cfg, &corpus, &backbone, adapter.as_ref())?;
    snapshot(cli, cfg, &cli.out)?;
    write_report(&cli.out, &report, &attention)?;
    cli.say(format!(
        "eval: CER {:.4}, C-CER {:.4}, zero-shot ctx rate {:.4} over {} utterances ({:.1?})",
        report.cer,
        report.c_cer,
        report.context_bucket_rates[3].rate,
        report.n_utterances,
        t0.elapsed()
    ));
    Ok(())
}

fn cmd_stats(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let corpus = generate_corpus(&cfg.corpus)?;
    snapshot(cli, cfg, &cli.out)?;
    save_freq_tsv(&cli.out.join("freq.tsv"), &corpus.freq)?;

    let gammas: Vec<u64> = (0..=16).map(|e| 1u64 << e).collect();
    let curve = imbalance_curve(&corpus.freq, &gammas);
    let mut tsv = String::from("log2_gamma\tgamma\tn_ctx\tn_nctx\timbalance_rate\n");
    for (log2, (gamma, rate)) in curve.iter().enumerate() {
        let n_ctx: u64 = corpus
            .freq
            .iter()
            .filter(|&(_, n)| n <= *gamma)
            .map(|(_, n)| n)
            .sum();
        let n_nctx = corpus.freq.total() - n_ctx;
        writeln!(tsv, "{log2}\t{gamma}\t{n_ctx}\t{n_nctx}\t{rate}").unwrap();
    }
    std::fs::write(cli.out.join("imbalance.tsv"), tsv)?;
    cli.say("stats: wrote freq.tsv and imbalance.tsv");
    Ok(())
}

fn cmd_attention_dump(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let corpus = generate_corpus(&cfg.corpus)?;
    let backbone = checkpoint::load_backbone(&cli.backbone_path())?;
    let adapter = checkpoint::load_adapter(&cli.adapter_path())?;
    let Some(utterance) = corpus.test.get(cli.utterance) else {
        return Err(Error::Config(format!(
            "--utterance {} out of range (test split holds {})",
            cli.utterance,
            corpus.test.len()
        )));
    };
    let list = build_inference_context_list(
        &corpus.test,
        &corpus.zero_shot_words,
        cfg.eval.test_count_threshold,
    )?;
    let refs = reference_context(utterance, &list);
    // References first so the heatmap always shows the interesting columns.
    let mut words: Vec<String> = Vec::new();
    for r in &refs {
        if !words.contains(&r.word) {
            words.push(r.word.clone());
        }
    }
    for w in list.words() {
        if words.len() + 1 >= cfg.eval.s_hat {
            break;
        }
        if !words.contains(w) {
            words.push(w.clone());
        }
    }
    let subset = ContextSubset::from_entries(&words, &refs);
    let cache = forward_full(&utterance.frames, &subset, &backbone, &adapter)?;

    snapshot(cli, cfg, &cli.out)?;
    std::fs::write(cli.out.join("attention.tsv"), attention_tsv(&cache, &subset))?;
    let summary = attention_summary(&cache, &subset, &utterance.word_spans);
    let mut text = String::new();
    writeln!(text, "utterance = {}", utterance.id).unwrap();
    writeln!(text, "words = {}", utterance.words.join(" ")).unwrap();
    for (word, mass) in &summary.per_ref {
        writeln!(text, "ref_mass\t{word}\t{mass:.6}").unwrap();
    }
    if let Some(m) = summary.no_context_in_context {
        writeln!(text, "no_context_mass_in_context_spans\t{m:.6}").unwrap();
    }
    if let Some(m) = summary.no_context_in_silence {
        writeln!(text, "no_context_mass_in_silence\t{m:.6}").unwrap();
    }
    std::fs::write(cli.out.join("attention-summary.txt"), text)?;
    cli.say(format!("attention-dump: wrote heatmap for {}", utterance.id));
    Ok(())
}

/// Table-2-shaped grid: four gamma rows at lambda2 = 1, four at
/// (0.5, alpha 0.9), and the alpha sweep at gamma = 2^16.
fn ablation_grid() -> Vec<(u64, f64, Option<f64>)> {
    let mut rows = Vec::new();
    for gamma in [4u64, 16, 256, 65536] {
        rows.push((gamma, 1.0, None));
    }
    for gamma in [4u64, 16, 256, 65536] {
        rows.push((gamma, 0.5, Some(0.9)));
    }
    for alpha in [0.99, 0.999, 0.9999] {
        rows.push((65536, 0.5, Some(alpha)));
    }
    rows
}

fn cmd_ablate(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let corpus = generate_corpus(&cfg.corpus)?;
    let ablate_dir = cli.out.join("ablate");
    std::fs::create_dir_all(&ablate_dir)?;
    snapshot(cli, cfg, &cli.out)?;

    // One shared frozen backbone; rebuilt deterministically when missing so
    // any deleted piece of the output reproduces bitwise.
    let backbone_path = ablate_dir.join("backbone.ckpt");
    let backbone = if backbone_path.exists() {
        checkpoint::load_backbone(&backbone_path)?
    } else {
        let (backbone, _) = pretrain_backbone(
            &corpus.train,
            cfg.corpus.charset_size,
            cfg.corpus.feature_dim,
            &cfg.model,
            &cfg.pretrain_config(),
        )?;
        checkpoint::save_backbone(&backbone_path, &backbone)?;
        backbone
    };

    let mut table = String::from(
        "gamma\tlambda2\talpha\tcer\tc_cer\tmany\tmedium\tfew\tzero\n",
    );
    for (gamma, lambda2, alpha) in ablation_grid() {
        let alpha_label = alpha.map_or("-".to_string(), |a| format!("{a}"));
        let cell_name = format!("g{gamma}_l{lambda2}_a{alpha_label}");
        let cell_dir = ablate_dir.join(&cell_name);
        let report_path = cell_dir.join("report.txt");

        let mut cell_cfg = cfg.clone();
        cell_cfg.train.gamma = gamma;
        cell_cfg.train.lambda2 = lambda2;
        cell_cfg.train.alpha = alpha.unwrap_or(0.0);

        if !report_path.exists() {
            let t0 = Instant::now();
            std::fs::create_dir_all(&cell_dir)?;
            let (adapter, stats) = train_adapter(
                &corpus,
                &corpus.freq,
                &backbone,
                &cell_cfg.model,
                &cell_cfg.train,
            )?;
            checkpoint::save_adapter(&cell_dir.join("adapter.ckpt"), &adapter)?;
            std::fs::write(cell_dir.join("adapter-log.tsv"), format_epoch_log(&stats))?;
            let (report, attention) = eval_once(&cell_cfg, &corpus, &backbone, Some(&adapter))?;
            write_report(&cell_dir, &report, &attention)?;
            cell_cfg.write_snapshot(&cell_dir)?;
            cli.say(format!("ablate {cell_name}: done in {:.1?}", t0.elapsed()));
        } else {
            cli.say(format!("ablate {cell_name}: reusing existing cell"));
        }

        let report = read_report_line(&report_path, &cell_dir)?;
        writeln!(
            table,
            "{gamma}\t{lambda2}\t{alpha_label}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}",
            report.0, report.1, report.2[0], report.2[1], report.2[2], report.2[3]
        )
        .unwrap();
    }
    std::fs::write(cli.out.join("ablate.tsv"), table)?;
    cli.say("ablate: wrote ablate.tsv");
    Ok(())
}

/// Pull (cer, c_cer, per-bucket "word/context" rate cells) back out of a
/// cell's report files.
fn read_report_line(report_path: &Path, cell_dir: &Path) -> Result<(f64, f64, [String; 4])> {
    let text = std::fs::read_to_string(report_path)?;
    let grab = |key: &str| -> Result<f64> {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("missing {key} in {}", report_path.display())))
    };
    let cer = grab("cer")?;
    let c_cer = grab("c_cer")?;

    let parse_rates = |name: &str| -> Result<[f64; 4]> {
        let text = std::fs::read_to_string(cell_dir.join(name))?;
        let mut out = [0.0; 4];
        for (i, line) in text.lines().skip(1).enumerate().take(4) {
            let rate = line
                .rsplit('\t')
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad bucket line in {name}")))?;
            out[i] = rate;
        }
        Ok(out)
    };
    let word = parse_rates("buckets.tsv")?;
    let ctx = parse_rates("context_buckets.tsv")?;
    let cells = [
        format!("{:.4}/{:.4}", word[0], ctx[0]),
        format!("{:.4}/{:.4}", word[1], ctx[1]),
        format!("{:.4}/{:.4}", word[2], ctx[2]),
        format!("{:.4}/{:.4}", word[3], ctx[3]),
    ];
    Ok((cer, c_cer, cells))
}
