//! The `plm` command line: `pretrain`, `learn`, `forget`, `recall-dump`, `eval`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use super::config::{parse_bias, RunConfig};
use super::output::{render_svg, write_csv, RunManifest};
use crate::data::{export_image_pgm, split_groups, Dataset75, NUM_CLASSES};
use crate::engine::{
    classify, evaluate_groups, load_checkpoint, pretrain, recall_errors, run_selective_forgetting,
    run_selective_learning, save_checkpoint, storage_errors, synthesize, PlmPair, RunAborted,
};
use crate::error::{PlmError, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_DIVERGENCE: i32 = 5;

pub fn exit_code(e: &PlmError) -> i32 {
    match e {
        PlmError::Config(_) | PlmError::Range(_) => EXIT_USAGE,
        PlmError::Format(_) => EXIT_FORMAT,
        PlmError::Io(_) => EXIT_IO,
        PlmError::Divergence { .. } | PlmError::Numeric(_) => EXIT_DIVERGENCE,
        PlmError::Shape(_) => EXIT_INTERNAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "plm", version, about = "Perpetual Learning Machine experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a fresh storage/recall pair on the 75 digits and write a checkpoint.
    Pretrain(CommonArgs),
    /// Biased SGD of a fresh storage network; writes error curves.
    Learn(CommonArgs),
    /// Biased perpetual SGD from a checkpoint; writes error curves.
    Forget(CommonArgs),
    /// Write recalled digits as PGM images.
    RecallDump(RecallDumpArgs),
    /// Report per-group errors of a checkpoint.
    Eval(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// MNIST directory or train-images-idx3-ubyte file
    #[arg(long)]
    pub mnist: Option<PathBuf>,
    /// Checkpoint to write (pretrain) or read (other commands)
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Seed for initialization, sampling and dither
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the 25/25/25 group split
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Group probabilities a,b,c for this command
    #[arg(long)]
    pub bias: Option<String>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Storage learning rate (perpetual-training rate for `forget`)
    #[arg(long)]
    pub lr: Option<f64>,
    /// Recall learning rate (pretraining, or perpetual training for `forget`)
    #[arg(long)]
    pub recall_lr: Option<f64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Dither peak-to-peak amplitude
    #[arg(long)]
    pub dither: Option<f64>,
    /// Dropout rate for hidden layers
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Also dither the recall network's class input
    #[arg(long)]
    pub dither_class_input: Option<bool>,
    /// Flat key = value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RecallDumpArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Classes to dump, e.g. `0-9` or `0,5,10-12`
    #[arg(long, default_value = "0-9")]
    pub classes: String,
    /// Also write the original digits (needs --mnist)
    #[arg(long)]
    pub with_originals: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Which {
    Pretrain,
    Learn,
    Forget,
    Other,
}

/// Defaults, then `--config`, then flags.
fn resolve(args: &CommonArgs, which: Which) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_text(&fs::read_to_string(path)?)?;
    }
    if let Some(m) = &args.mnist {
        cfg.mnist = m.clone();
    }
    if let Some(s) = args.seed {
        cfg.seeds.init = s;
        cfg.seeds.sampler = s;
        cfg.seeds.dither = s;
    }
    if let Some(s) = args.split_seed {
        cfg.seeds.split = s;
    }
    if let Some(b) = &args.bias {
        let p = parse_bias(b)?;
        match which {
            Which::Learn => cfg.learn_bias = p,
            Which::Forget => cfg.forget_bias = p,
            _ => return Err(PlmError::config("--bias only applies to learn and forget")),
        }
    }
    if let Some(n) = args.iters {
        match which {
            Which::Learn => cfg.learn_iters = n,
            Which::Forget => cfg.forget_iters = n,
            _ => return Err(PlmError::config("--iters only applies to learn and forget")),
        }
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = args.lr {
        match which {
            Which::Forget => cfg.forget_learning_rate = v,
            _ => cfg.learning_rate = v,
        }
    }
    if let Some(v) = args.recall_lr {
        match which {
            Which::Forget => cfg.forget_recall_learning_rate = v,
            _ => cfg.recall_learning_rate = v,
        }
    }
    if let Some(v) = args.replicas {
        cfg.replicas = v;
    }
    if let Some(v) = args.dither {
        cfg.dither = v;
    }
    if let Some(v) = args.dropout {
        cfg.dropout = v;
    }
    if let Some(v) = args.dither_class_input {
        cfg.dither_class_input = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `0-9`, `3`, `1,4,10-12` into class ids.
pub fn parse_classes(spec: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|_| PlmError::config(format!("bad class {s:?}")))
        };
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (num(a)?, num(b)?),
            None => (num(part)?, num(part)?),
        };
        if lo > hi {
            return Err(PlmError::config(format!("empty class range {part:?}")));
        }
        for c in lo..=hi {
            if c >= NUM_CLASSES {
                return Err(PlmError::range(format!("class {c} outside 0..{NUM_CLASSES}")));
            }
            out.push(c);
        }
    }
    if out.is_empty() {
        return Err(PlmError::config("no classes requested"));
    }
    Ok(out)
}

fn load_data(cfg: &RunConfig) -> Result<Dataset75> {
    Dataset75::from_idx(cfg.mnist_file())
}

fn require_ckpt(args: &CommonArgs) -> Result<&Path> {
    args.ckpt
        .as_deref()
        .ok_or_else(|| PlmError::config("--ckpt is required"))
}

/// Loads an input checkpoint; a missing or unreadable file counts as a format error.
fn load_input_checkpoint(path: &Path) -> Result<PlmPair> {
    load_checkpoint(path).map_err(|e| match e {
        PlmError::Io(io) => PlmError::format(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other,
    })
}

fn manifest_for(command: &str, cfg: &RunConfig, extra: &[(&str, String)]) -> RunManifest {
    let mut text = cfg.to_text();
    for (k, v) in extra {
        text.push_str(&format!("{k} = {v}\n"));
    }
    RunManifest::new(command, text)
}

fn write_timing(out: &Path, started: Instant) -> Result<()> {
    fs::write(
        out.join("timing.txt"),
        format!("wall_clock_seconds = {:.3}\n", started.elapsed().as_secs_f64()),
    )?;
    Ok(())
}

fn unwrap_run<T>(r: std::result::Result<T, RunAborted>, out: &Path) -> Result<T> {
    r.map_err(|aborted| {
        // Keep whatever was logged before the failure.
        let _ = write_csv(&aborted.log, out.join("curves.csv"));
        aborted.error
    })
}

fn cmd_pretrain(args: &CommonArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = resolve(args, Which::Pretrain)?;
    let data = load_data(&cfg)?;
    fs::create_dir_all(&args.out)?;
    let ckpt = args
        .ckpt
        .clone()
        .unwrap_or_else(|| args.out.join("pretrained.ckpt"));
    let mut pair = PlmPair::new(cfg.seeds.init)?;
    pretrain(&mut pair, &data, cfg.epochs, &cfg.train_config()?, cfg.seeds.sampler)?;
    save_checkpoint(&pair, &ckpt)?;
    let s_err = storage_errors(&pair.storage, &data)?;
    let r_err = recall_errors(&pair)?;
    println!("storage_err={s_err}/{NUM_CLASSES} recall_err={r_err}/{NUM_CLASSES}");

    let mut manifest = manifest_for("pretrain", &cfg, &[]);
    manifest.add_checksum("mnist", cfg.mnist_file())?;
    manifest.add_checksum("checkpoint", &ckpt)?;
    manifest.write(args.out.join("manifest.txt"))?;
    write_timing(&args.out, started)
}

fn emit_curves(
    command: &str,
    cfg: &RunConfig,
    extra: &[(&str, String)],
    log: &crate::engine::MetricsLog,
    bias: [f64; 3],
    title: &str,
    out: &Path,
) -> Result<RunManifest> {
    let csv = out.join("curves.csv");
    let svg = out.join("curves.svg");
    write_csv(log, &csv)?;
    render_svg(log, bias, title, &svg)?;
    let mut manifest = manifest_for(command, cfg, extra);
    manifest.add_checksum("mnist", cfg.mnist_file())?;
    manifest.add_checksum("curves.csv", &csv)?;
    manifest.add_checksum("curves.svg", &svg)?;
    Ok(manifest)
}

fn print_summary(log: &crate::engine::MetricsLog) {
    if let Some(last) = log.last() {
        println!(
            "iterations={} err_g1={:.4} err_g2={:.4} err_g3={:.4}",
            last.iteration, last.errors[0], last.errors[1], last.errors[2]
        );
    }
}

fn cmd_learn(args: &CommonArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = resolve(args, Which::Learn)?;
    let data = load_data(&cfg)?;
    fs::create_dir_all(&args.out)?;
    let groups = split_groups(cfg.seeds.split);
    let exp = cfg.learning_experiment()?;
    let log = unwrap_run(run_selective_learning(&exp, &data, &groups), &args.out)?;
    for g in 1..=3 {
        match log.first_zero_iteration(g) {
            Some(it) => println!("group {g}: first zero error at iteration {it}"),
            None => println!("group {g}: never reached zero error"),
        }
    }
    print_summary(&log);
    let manifest = emit_curves(
        "learn",
        &cfg,
        &[],
        &log,
        cfg.learn_bias,
        "Selective learning: storage error per group",
        &args.out,
    )?;
    manifest.write(args.out.join("manifest.txt"))?;
    write_timing(&args.out, started)
}

fn cmd_forget(args: &CommonArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = resolve(args, Which::Forget)?;
    let ckpt = require_ckpt(args)?;
    let pair = load_input_checkpoint(ckpt)?;
    let data = load_data(&cfg)?;
    fs::create_dir_all(&args.out)?;
    let groups = split_groups(cfg.seeds.split);
    let exp = cfg.forgetting_experiment()?;
    let (log, pair) = unwrap_run(run_selective_forgetting(pair, &exp, &data, &groups), &args.out)?;
    print_summary(&log);
    let final_ckpt = args.out.join("final.ckpt");
    save_checkpoint(&pair, &final_ckpt)?;
    let mut manifest = emit_curves(
        "forget",
        &cfg,
        &[("input.ckpt", ckpt.display().to_string())],
        &log,
        cfg.forget_bias,
        "Selective forgetting: storage error per group during PSGD",
        &args.out,
    )?;
    manifest.add_checksum("input.ckpt", ckpt)?;
    manifest.add_checksum("final.ckpt", &final_ckpt)?;
    manifest.write(args.out.join("manifest.txt"))?;
    write_timing(&args.out, started)
}

fn cmd_recall_dump(args: &RecallDumpArgs) -> Result<()> {
    let cfg = resolve(&args.common, Which::Other)?;
    let classes = parse_classes(&args.classes)?;
    let pair = load_input_checkpoint(require_ckpt(&args.common)?)?;
    let data = if args.with_originals {
        Some(load_data(&cfg)?)
    } else {
        None
    };
    let out = &args.common.out;
    fs::create_dir_all(out)?;
    let mut correct = 0;
    for &c in &classes {
        let img = synthesize(&pair.recall, c)?;
        export_image_pgm(img.as_slice(), out.join(format!("recall_{c:03}.pgm")))?;
        if let Some(data) = &data {
            export_image_pgm(data.image(c).as_slice(), out.join(format!("original_{c:03}.pgm")))?;
        }
        if classify(&pair.storage, img.as_slice())? == c {
            correct += 1;
        }
    }
    println!(
        "dumped {} classes; storage recognizes {correct}/{} recalled images",
        classes.len(),
        classes.len()
    );
    Ok(())
}

fn cmd_eval(args: &CommonArgs) -> Result<()> {
    let cfg = resolve(args, Which::Other)?;
    let pair = load_input_checkpoint(require_ckpt(args)?)?;
    let data = load_data(&cfg)?;
    let groups = split_groups(cfg.seeds.split);
    let e = evaluate_groups(&pair.storage, &data, &groups)?;
    println!(
        "storage_err={}/{NUM_CLASSES} recall_err={}/{NUM_CLASSES}",
        storage_errors(&pair.storage, &data)?,
        recall_errors(&pair)?
    );
    println!("err_g1={:.4} err_g2={:.4} err_g3={:.4}", e[0], e[1], e[2]);
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Forget(a) => cmd_forget(a),
        Command::RecallDump(a) => cmd_recall_dump(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
