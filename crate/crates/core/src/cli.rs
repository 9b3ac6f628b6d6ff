//! `paramine gen|train|eval|report`.
//!
//! Every command that writes artifacts also writes `<command>.manifest.json`
//! next to them, recording the resolved config, the seed, and sha256
//! digests of inputs and outputs. Timestamps appear only in the manifest, so
//! all other outputs are byte-identical across runs with the same inputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{self, KeyValues};
use crate::dataset::{self, generate_synthetic, Dataset, PairCounts, Split};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, ThresholdStrategy, UniformScope, REPORT_FILE};
use crate::mining::MiningStrategy;
use crate::par;
use crate::trainer::{self, ProjectionHead, BEST_HEAD_FILE, HEAD_FILE, HISTORY_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "paramine",
    version,
    about = "Paraphrase bi-encoder training with hard-negative mining"
)]
pub struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multilingual corpus with base embeddings.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a projection head and write head.bin, best_head.bin, history.tsv.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mining: Option<MiningFlag>,
    },
    /// Calibrate a threshold on dev, evaluate on test, write report.tsv.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "max_acc")]
        strategy: ThresholdStrategy,
        /// Points used for the uniformity metric.
        #[arg(long, value_enum, default_value = "all")]
        uniform_scope: ScopeFlag,
    },
    /// Print report.tsv and history.tsv from a run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MiningFlag {
    #[value(name = "top_n")]
    TopN,
    Threshold,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeFlag {
    All,
    Positives,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: KeyValues,
    /// sha256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn manifest_file(command: &str) -> String {
    format!("{command}.manifest.json")
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}

struct Run {
    command: &'static str,
    started: f64,
    seed: Option<u64>,
    config: KeyValues,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            started: now(),
            seed: None,
            config: KeyValues::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn finish(self, out: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
            started_unix: self.started,
            finished_unix: now(),
        };
        let json =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        write_file(&out.join(manifest_file(self.command)), |w| {
            writeln!(w, "{json}")
        })
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    body(&mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_config(path: Option<&Path>) -> Result<KeyValues> {
    match path {
        Some(p) => config::read_key_values(p),
        None => Ok(KeyValues::new()),
    }
}

fn data_files(dir: &Path) -> Vec<PathBuf> {
    [
        dataset::SENTENCES_FILE,
        dataset::PAIRS_FILE,
        dataset::EMBEDDINGS_FILE,
        dataset::EMBEDDING_IDS_FILE,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect()
}

pub fn cmd_gen(
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    log: &mut dyn Write,
) -> Result<()> {
    let mut run = Run::new("gen");
    let mut kv = load_config(config_path)?;
    if let Some(seed) = seed {
        kv.insert("seed".into(), seed.to_string());
    }
    let cfg = config::synthetic_config(&kv)?;
    let data = generate_synthetic(&cfg)?;
    data.save(out)?;

    let counts = PairCounts::from_records(&data.records);
    for split in Split::ALL {
        let _ = writeln!(
            log,
            "{split}: {} positive, {} negative",
            counts.get(split, true),
            counts.get(split, false)
        );
    }
    run.seed = Some(cfg.seed);
    run.config = config::synthetic_key_values(&cfg);
    run.inputs = config_path.map(Path::to_path_buf).into_iter().collect();
    run.outputs = data_files(out);
    run.finish(out)
}

pub fn cmd_train(
    data_dir: &Path,
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    mining: Option<MiningFlag>,
    log: &mut dyn Write,
) -> Result<()> {
    let mut run = Run::new("train");
    let mut kv = load_config(config_path)?;
    if let Some(seed) = seed {
        kv.insert("seed".into(), seed.to_string());
    }
    if let Some(flag) = mining {
        let name = match flag {
            MiningFlag::TopN => "top_n",
            MiningFlag::Threshold => "threshold",
            MiningFlag::None => "none",
        };
        kv.insert("mining".into(), name.into());
    }
    let cfg = config::train_config(&kv)?;
    let data = Dataset::load(data_dir)?;
    create_dir(out)?;

    let outcome = trainer::fit(&data.corpus, &data.records, &data.embeddings, &cfg)?;
    write_file(&out.join(HEAD_FILE), |w| outcome.head.write(w))?;
    write_file(&out.join(BEST_HEAD_FILE), |w| outcome.best_head.write(w))?;
    write_file(&out.join(HISTORY_FILE), |w| outcome.history.write_tsv(w))?;

    if let Some(last) = outcome.history.epochs.last() {
        let mining = cfg.mining.as_ref().map_or("none", MiningStrategy::name);
        let _ = writeln!(
            log,
            "{} epochs ({mining}): final loss {:.4}, dev accuracy {:.4}; best dev accuracy at epoch {}",
            cfg.epochs, last.loss, last.dev_accuracy, outcome.best_epoch
        );
    }
    run.seed = Some(cfg.seed);
    run.config = config::train_key_values(&cfg);
    run.inputs = data_files(data_dir);
    run.inputs.extend(config_path.map(Path::to_path_buf));
    run.outputs = [HEAD_FILE, BEST_HEAD_FILE, HISTORY_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    run.finish(out)
}

pub fn cmd_eval(
    data_dir: &Path,
    head_path: &Path,
    out: &Path,
    strategy: ThresholdStrategy,
    scope: UniformScope,
    log: &mut dyn Write,
) -> Result<()> {
    let mut run = Run::new("eval");
    let file = std::fs::File::open(head_path).map_err(|e| Error::io(head_path, e))?;
    let head = ProjectionHead::read(std::io::BufReader::new(file))?;
    let data = Dataset::load(data_dir)?;
    if head.d_in() != data.embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.embeddings.dim(),
            actual: head.d_in(),
        });
    }
    let (dev, test) = (data.split(Split::Dev), data.split(Split::Test));
    if dev.is_empty() {
        return Err(Error::EmptyInput("dev split is empty"));
    }
    if test.is_empty() {
        return Err(Error::EmptyInput("test split is empty"));
    }

    let dev_scored = eval::score_pairs(&head, &data.embeddings, &data.corpus, &dev)?;
    let calibration = eval::calibrate_threshold(&dev_scored, strategy)?;
    assert_eq!(
        calibration.calibrated_on,
        Some(Split::Dev),
        "threshold must be fit on dev only"
    );

    let test_scored = eval::score_pairs(&head, &data.embeddings, &data.corpus, &test)?;
    let mut report = eval::evaluate(&test_scored, calibration.threshold)?;
    let (align, uniform) = eval::embedding_quality(&head, &data.embeddings, &test, scope)?;
    report.align = align;
    report.uniform = uniform;

    create_dir(out)?;
    write_file(&out.join(REPORT_FILE), |w| report.write_tsv(w))?;
    let _ = writeln!(
        log,
        "threshold {:.6} ({strategy} on dev, achieved {:.4})",
        calibration.threshold, calibration.achieved
    );
    let _ = print_report(&report, log);

    run.config = [
        ("strategy", strategy.as_str().to_string()),
        (
            "uniform_scope",
            match scope {
                UniformScope::All => "all",
                UniformScope::Positives => "positives",
            }
            .to_string(),
        ),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    run.inputs = data_files(data_dir);
    run.inputs.push(head_path.to_path_buf());
    run.outputs = vec![out.join(REPORT_FILE)];
    run.finish(out)
}

fn print_report(report: &EvalReport, log: &mut dyn Write) -> std::io::Result<()> {
    writeln!(log, "{:<20} {:>9} {:>7}", "class", "accuracy", "pairs")?;
    writeln!(
        log,
        "{:<20} {:>9.4} {:>7}",
        "overall", report.overall.accuracy, report.overall.count
    )?;
    for (class, acc) in &report.per_class {
        writeln!(
            log,
            "{:<20} {:>9.4} {:>7}",
            class.as_str(),
            acc.accuracy,
            acc.count
        )?;
    }
    if let Some((v, n)) = report.align {
        writeln!(log, "align   {v:.4} over {n} positive pairs")?;
    }
    if let Some((v, n)) = report.uniform {
        writeln!(log, "uniform {v:.4} over {n} sentences")?;
    }
    Ok(())
}

/// Read-only: prints whatever of report.tsv and history.tsv exists in `dir`.
pub fn cmd_report(dir: &Path, log: &mut dyn Write) -> Result<()> {
    let report_path = dir.join(REPORT_FILE);
    let history_path = dir.join(HISTORY_FILE);
    if !report_path.exists() && !history_path.exists() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no report.tsv or history.tsv"),
        ));
    }
    let io = |e| Error::io(dir, e);
    if history_path.exists() {
        let text =
            std::fs::read_to_string(&history_path).map_err(|e| Error::io(&history_path, e))?;
        let rows = read_history(&text)?;
        let best = rows
            .iter()
            .fold(None, |best: Option<(usize, f64)>, r| match best {
                Some(b) if b.1 >= r.dev_accuracy => Some(b),
                _ => Some((r.epoch, r.dev_accuracy)),
            });
        writeln!(log, "{} epochs in {HISTORY_FILE}", rows.len()).map_err(io)?;
        if let Some((epoch, acc)) = best {
            writeln!(log, "best dev accuracy {acc:.4} at epoch {epoch}").map_err(io)?;
        }
    }
    if report_path.exists() {
        let file = std::fs::File::open(&report_path).map_err(|e| Error::io(&report_path, e))?;
        let report = EvalReport::read_tsv(std::io::BufReader::new(file))?;
        writeln!(log, "threshold {:.6}", report.threshold).map_err(io)?;
        print_report(&report, log).map_err(io)?;
    }
    Ok(())
}

pub fn run(cli: Cli, log: &mut dyn Write) -> Result<()> {
    par::configure_threads(cli.threads);
    match cli.command {
        Command::Gen { config, out, seed } => cmd_gen(config.as_deref(), &out, seed, log),
        Command::Train {
            data,
            config,
            out,
            seed,
            mining,
        } => cmd_train(&data, config.as_deref(), &out, seed, mining, log),
        Command::Eval {
            data,
            head,
            out,
            strategy,
            uniform_scope,
        } => {
            let scope = match uniform_scope {
                ScopeFlag::All => UniformScope::All,
                ScopeFlag::Positives => UniformScope::Positives,
            };
            cmd_eval(&data, &head, &out, strategy, scope, log)
        }
        Command::Report { out } => cmd_report(&out, log),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub dev_accuracy: f64,
    pub align: f64,
    pub uniform: f64,
}

/// Parses a history.tsv written by `train`.
pub fn read_history(text: &str) -> Result<Vec<HistoryRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("epoch\tloss\tdev_acc\talign\tuniform") {
        return Err(Error::MalformedLine {
            file: HISTORY_FILE.into(),
            line: 1,
            reason: "missing history header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let bad = |reason: String| Error::MalformedLine {
                file: HISTORY_FILE.into(),
                line: i + 2,
                reason,
            };
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("bad number `{s}`")))
            };
            Ok(HistoryRow {
                epoch: f[0]
                    .parse()
                    .map_err(|_| bad(format!("bad epoch `{}`", f[0])))?,
                loss: num(f[1])?,
                dev_accuracy: num(f[2])?,
                align: num(f[3])?,
                uniform: num(f[4])?,
            })
        })
        .collect()
}
