//! Command-line driver: synthetic data, splits, training, evaluation,
//! sweeps, receptive-field maps, random-label probes and scaling plots.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use scalelab::arch::checkpoint;
use scalelab::arch::rf::architecture_rf;
use scalelab::arch::{build_network, Architecture, ArchConfig};
use scalelab::erf::{compute_erf, erf_stats, export_erf};
use scalelab::frontend::{Frontend, FrontendConfig};
use scalelab::harness::plot::points_from_summary;
use scalelab::harness::summary::{read_summary_csv, write_summary_csv};
use scalelab::harness::{
    desk_frontend, evaluate, generate_synth_dataset, load_train_set, make_split, plot_scaling_curve, randomize_labels,
    run_sweep, summarize, DatasetManifest, SplitPlan, Strategy, SweepConfig, SynthSpec,
};
use scalelab::train::{train, NoHooks, PruningPlan, RunRecord, TrainConfig};

#[derive(Parser)]
#[command(name = "scalelab", version, about = "Scaling, damping and sparsification experiments for audio CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic device-shift dataset (WAVs + manifest.csv).
    GenSynth(GenSynthArgs),
    /// Build a device-disjoint split plan from a manifest.
    MakeSplit(MakeSplitArgs),
    /// Train one network and write run.jsonl, sparsity.jsonl and checkpoints.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on the seen- and unseen-device test sets.
    Evaluate(EvaluateArgs),
    /// Train a scaling sweep end to end and write its summary and plot.
    Sweep(SweepArgs),
    /// Effective receptive field of a checkpoint or a freshly initialized net.
    Erf(ErfArgs),
    /// Fit randomized training labels to probe memorization capacity.
    RandomLabels(RandomLabelArgs),
    /// Pool the last ten epochs of run records into a summary CSV.
    Summarize(SummarizeArgs),
    /// Plot accuracy against parameter count from a summary CSV.
    Plot(PlotArgs),
    /// Parameter counts and receptive field of a configuration.
    CountParams(CountParamsArgs),
}

#[derive(Args, Clone, Serialize)]
struct ArchArgs {
    /// Base channel width W.
    #[arg(long, default_value_t = 32)]
    width: usize,
    /// Number of 3x3 residual blocks at 2W channels.
    #[arg(long, default_value_t = 1)]
    depth: usize,
    /// Number of 1x1 residual blocks at 4W channels.
    #[arg(long = "k-blocks", default_value_t = 1)]
    k_blocks: usize,
    /// Damp every convolution taller than one bin, with this floor.
    #[arg(long)]
    damping: Option<f64>,
}

impl ArchArgs {
    fn config(&self, classes: usize) -> ArchConfig {
        let mut cfg = ArchConfig::new(self.width, self.depth, self.k_blocks);
        cfg.num_classes = classes;
        match self.damping {
            Some(floor) => cfg.with_damping(floor),
            None => cfg,
        }
    }
}

#[derive(Args, Clone, Serialize)]
struct TrainArgsCommon {
    #[arg(long, default_value_t = 250)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 32)]
    batch_size: usize,
    #[arg(long = "max-lr", default_value_t = 1e-4)]
    max_lr: f64,
    #[arg(long = "final-lr", default_value_t = 1e-6)]
    final_lr: f64,
    #[arg(long = "warmup-epochs", default_value_t = 20)]
    warmup_epochs: usize,
    /// Mixup Beta parameter; 0 disables mixing.
    #[arg(long = "mixup-alpha", default_value_t = 0.3)]
    mixup_alpha: f64,
    /// Disable the random circular time shift.
    #[arg(long = "no-time-roll")]
    no_time_roll: bool,
    #[arg(long = "checkpoint-every", default_value_t = 25)]
    checkpoint_every: usize,
}

impl TrainArgsCommon {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            max_lr: self.max_lr,
            final_lr: self.final_lr,
            warmup_epochs: self.warmup_epochs,
            mixup_alpha: self.mixup_alpha,
            time_roll: !self.no_time_roll,
            checkpoint_every: self.checkpoint_every,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Clone, Serialize)]
struct DataArgs {
    /// Manifest CSV with columns path,scene,city,device.
    #[arg(long)]
    manifest: PathBuf,
    /// Split plan JSON written by make-split.
    #[arg(long)]
    split: PathBuf,
    /// Mel bands of the frontend.
    #[arg(long, default_value_t = 64)]
    mels: usize,
}

impl DataArgs {
    fn frontend(&self) -> FrontendConfig {
        FrontendConfig {
            n_mels: self.mels,
            ..desk_frontend()
        }
    }

    fn load(&self) -> Result<(DatasetManifest, SplitPlan, scalelab::train::TrainSet)> {
        let manifest = DatasetManifest::read_csv(&self.manifest).with_context(|| format!("reading {:?}", self.manifest))?;
        let split = SplitPlan::load(&self.split).with_context(|| format!("reading {:?}", self.split))?;
        split.check(&manifest)?;
        let data = load_train_set(&manifest, &split, self.frontend())?;
        Ok((manifest, split, data))
    }
}

#[derive(Args, Serialize)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    cities: usize,
    #[arg(long, default_value_t = 3)]
    devices: usize,
    /// Clips per (class, city, device).
    #[arg(long = "clips-per", default_value_t = 2)]
    clips_per: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct MakeSplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fraction of each scene's cities held out for testing.
    #[arg(long, default_value_t = 0.3)]
    holdout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    train: TrainArgsCommon,
    /// Prune to the prunable-weight count of this width.
    #[arg(long = "prune-to-width")]
    prune_to_width: Option<usize>,
    /// Pruning method when --prune-to-width is given.
    #[arg(long, value_parser = ["static", "iterative"], default_value = "iterative")]
    prune: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Optional JSON output for the accuracy tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recorded for provenance; evaluation itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    /// width, depth, depth-1x1, width-sparse-static or width-sparse-iterative.
    #[arg(long)]
    strategy: String,
    /// Comma-separated widths, depths or 1x1-block counts.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Width whose prunable count the sparse strategies prune to.
    #[arg(long = "reference-width", default_value_t = 32)]
    reference_width: usize,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    train: TrainArgsCommon,
    /// Dataset directory; a synthetic set is generated there if it has no
    /// manifest.csv yet.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    holdout: f64,
    #[arg(long, default_value_t = 64)]
    mels: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    cities: usize,
    #[arg(long, default_value_t = 3)]
    devices: usize,
    #[arg(long = "clips-per", default_value_t = 2)]
    clips_per: usize,
    /// Metric plotted against parameter count.
    #[arg(long, default_value = "unseen_acc")]
    metric: String,
    #[arg(long)]
    out: PathBuf,
    /// Seed for data generation and the split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct ErfArgs {
    /// Trained checkpoint; without it a network is initialized from --seed.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Use at most this many test clips.
    #[arg(long = "max-clips")]
    max_clips: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct RandomLabelArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    train: TrainArgsCommon,
    /// Seed of the label randomization.
    #[arg(long = "label-seed", default_value_t = 0)]
    label_seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct SummarizeArgs {
    /// Directory searched recursively for run.jsonl files.
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct PlotArgs {
    #[arg(long)]
    summary: PathBuf,
    #[arg(long, default_value = "unseen_acc")]
    metric: String,
    /// Output path without extension; .png and .csv are written.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct CountParamsArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenSynth(a) => gen_synth(&a),
        Command::MakeSplit(a) => make_split_cmd(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::Erf(a) => erf_cmd(&a),
        Command::RandomLabels(a) => random_labels_cmd(&a),
        Command::Summarize(a) => summarize_cmd(&a),
        Command::Plot(a) => plot_cmd(&a),
        Command::CountParams(a) => count_params_cmd(&a),
    }
}

/// Writes the invocation's full configuration next to its outputs.
fn echo_config(dir: &Path, command: &str, args: &impl Serialize) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {:?}", dir))?;
    let path = dir.join(format!("{}.config.json", command));
    let body = serde_json::json!({ "command": command, "args": args });
    fs::write(&path, serde_json::to_vec_pretty(&body)?).with_context(|| format!("writing {:?}", path))?;
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let spec = SynthSpec::new(a.classes, a.cities, a.devices, a.clips_per, a.seed);
    let manifest = generate_synth_dataset(&spec, &a.out)?;
    echo_config(&a.out, "gen-synth", a)?;
    println!("wrote {} clips to {:?}", manifest.entries.len(), a.out);
    Ok(())
}

fn make_split_cmd(a: &MakeSplitArgs) -> Result<()> {
    let manifest = DatasetManifest::read_csv(&a.manifest).with_context(|| format!("reading {:?}", a.manifest))?;
    let split = make_split(&manifest, a.holdout, a.seed)?;
    split.save(&a.out)?;
    echo_config(&parent_dir(&a.out), "make-split", a)?;
    println!(
        "train {} / seen {} / unseen {} clips -> {:?}",
        split.train.len(),
        split.test_seen.len(),
        split.test_unseen.len(),
        a.out
    );
    Ok(())
}

fn pruning_plan(a: &TrainArgs, arch: &ArchConfig, epochs: usize) -> Result<Option<PruningPlan>> {
    let Some(w) = a.prune_to_width else { return Ok(None) };
    let reference = ArchConfig { width: w, ..arch.clone() };
    let target = Architecture::plan(&reference)?.prunable_count();
    Ok(Some(match a.prune.as_str() {
        "static" => PruningPlan::Static { target },
        _ => PruningPlan::iterative_default(target, epochs),
    }))
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let (_, _, data) = a.data.load()?;
    let arch = a.arch.config(data.num_classes);
    let mut cfg = a.train.config(a.seed);
    cfg.pruning = pruning_plan(a, &arch, cfg.epochs)?;
    cfg.output_dir = Some(a.out.clone());
    echo_config(&a.out, "train", a)?;
    let mut net = build_network(&arch, a.seed)?;
    let record = train(&mut net, &data, &cfg, &mut NoHooks)?;
    print_last_epoch(&record);
    Ok(())
}

fn print_last_epoch(record: &RunRecord) {
    if let Some(e) = record.epochs.last() {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.3}", v));
        println!(
            "epoch {}: loss {:.4} train {:.3} seen {} unseen {} retained {}",
            e.epoch,
            e.train_loss,
            e.train_acc,
            fmt(e.seen_acc),
            fmt(e.unseen_acc),
            e.retained
        );
    }
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let (net, _) = checkpoint::load(&a.checkpoint)?;
    let (_, _, data) = a.data.load()?;
    let frontend = Frontend::new(data.frontend.clone())?;
    let mut tables = serde_json::Map::new();
    for (name, clips) in [("seen", &data.test_seen), ("unseen", &data.test_unseen)] {
        if clips.is_empty() {
            continue;
        }
        let table = evaluate(&net, clips, &frontend)?;
        println!("{}: {:.3} ({} / {})", name, table.overall.accuracy, table.overall.correct, table.overall.total);
        for (device, acc) in &table.per_device {
            println!("  device {}: {:.3} ({} clips)", device, acc.accuracy, acc.total);
        }
        tables.insert(name.to_string(), serde_json::to_value(&table)?);
    }
    if let Some(out) = &a.out {
        let body = serde_json::json!({ "config": a, "results": tables });
        fs::write(out, serde_json::to_vec_pretty(&body)?).with_context(|| format!("writing {:?}", out))?;
    }
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let strategy: Strategy = a.strategy.parse()?;
    let manifest_path = a.data.join("manifest.csv");
    if !manifest_path.exists() {
        log::info!("no manifest in {:?}; generating a synthetic dataset", a.data);
        generate_synth_dataset(&SynthSpec::new(a.classes, a.cities, a.devices, a.clips_per, a.seed), &a.data)?;
    }
    let manifest = DatasetManifest::read_csv(&manifest_path)?;
    let split = make_split(&manifest, a.holdout, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {:?}", a.out))?;
    split.save(&a.out.join("split.json"))?;
    let frontend = FrontendConfig {
        n_mels: a.mels,
        ..desk_frontend()
    };
    let data = load_train_set(&manifest, &split, frontend)?;
    let cfg = SweepConfig {
        strategy,
        values: a.values.clone(),
        base: a.arch.config(data.num_classes),
        seeds: a.seeds.clone(),
        train: a.train.config(0),
        reference_width: a.reference_width,
    };
    echo_config(&a.out, "sweep", a)?;
    fs::write(a.out.join("sweep_config.json"), serde_json::to_vec_pretty(&cfg)?)?;
    let records = run_sweep(&cfg, &data, Some(&a.out.join("runs")))?;
    let rows = summarize(&records)?;
    write_summary_csv(&rows, &a.out.join("summary.csv"))?;
    for r in rows.iter().filter(|r| r.metric == a.metric) {
        println!("{:<36} params {:>9}  {} {:.3} +- {:.3}", r.config, r.params, r.metric, r.mean, r.std);
    }
    let points = points_from_summary(&rows, &a.metric);
    if points.len() >= 2 {
        let png = a.out.join("scaling.png");
        if !plot_scaling_curve(&points, &png, &a.out.join("scaling.csv"))? {
            log::warn!("plot image not written; the CSV is in {:?}", a.out);
        }
    } else {
        log::warn!("fewer than two sweep points; no plot");
    }
    Ok(())
}

fn erf_cmd(a: &ErfArgs) -> Result<()> {
    let (_, _, data) = a.data.load()?;
    let net = match &a.checkpoint {
        Some(path) => checkpoint::load(path)?.0,
        None => build_network(&a.arch.config(data.num_classes), a.seed)?,
    };
    let frontend = Frontend::new(data.frontend.clone())?;
    let mut clips: Vec<_> = data.test_seen.iter().chain(&data.test_unseen).collect();
    if clips.is_empty() {
        clips = data.train.iter().collect();
    }
    if let Some(n) = a.max_clips {
        clips.truncate(n);
    }
    if clips.is_empty() {
        bail!("no clips to compute the receptive field from");
    }
    let specs = clips.iter().map(|c| frontend.compute(&c.wave)).collect::<scalelab::Result<Vec<_>>>()?;
    let map = compute_erf(&net, &specs)?;
    let stats = erf_stats(&map);
    let (csv, pgm) = export_erf(&stats, &a.out, &net.config().tag(), a.seed)?;
    echo_config(&a.out, "erf", a)?;
    fs::write(a.out.join("erf_summary.json"), serde_json::to_vec_pretty(&stats)?)?;
    println!(
        "{} clips: centroid ({:.1}, {:.1}), std freq {:.2} time {:.2}; wrote {:?} and {:?}",
        clips.len(),
        stats.centroid.0,
        stats.centroid.1,
        stats.std_freq,
        stats.std_time,
        csv,
        pgm
    );
    Ok(())
}

fn random_labels_cmd(a: &RandomLabelArgs) -> Result<()> {
    let manifest = DatasetManifest::read_csv(&a.data.manifest)?;
    let split = randomize_labels(&SplitPlan::load(&a.data.split)?, a.label_seed);
    split.check(&manifest)?;
    let data = load_train_set(&manifest, &split, a.data.frontend())?;
    let arch = a.arch.config(data.num_classes);
    let mut cfg = a.train.config(a.seed);
    cfg.output_dir = Some(a.out.clone());
    echo_config(&a.out, "random-labels", a)?;
    split.save(&a.out.join("random_split.json"))?;
    let mut net = build_network(&arch, a.seed)?;
    let record = train(&mut net, &data, &cfg, &mut NoHooks)?;
    let peak = record.epochs.iter().map(|e| e.train_acc).fold(0.0, f64::max);
    println!(
        "random-label fit: peak train accuracy {:.3} (chance {:.3})",
        peak,
        1.0 / data.num_classes as f64
    );
    print_last_epoch(&record);
    Ok(())
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("listing {:?}", dir))?
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_runs(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "run.jsonl") {
            out.push(p);
        }
    }
    Ok(())
}

fn summarize_cmd(a: &SummarizeArgs) -> Result<()> {
    let mut paths = Vec::new();
    find_runs(&a.runs, &mut paths)?;
    if paths.is_empty() {
        bail!("no run.jsonl under {:?}", a.runs);
    }
    let records = paths.iter().map(|p| RunRecord::read_jsonl(p)).collect::<scalelab::Result<Vec<_>>>()?;
    let rows = summarize(&records)?;
    write_summary_csv(&rows, &a.out)?;
    echo_config(&parent_dir(&a.out), "summarize", a)?;
    println!("{} runs -> {} rows in {:?}", records.len(), rows.len(), a.out);
    Ok(())
}

fn plot_cmd(a: &PlotArgs) -> Result<()> {
    let rows = read_summary_csv(&a.summary)?;
    let points = points_from_summary(&rows, &a.metric);
    let png = a.out.with_extension("png");
    let csv = a.out.with_extension("csv");
    let drew = plot_scaling_curve(&points, &png, &csv)?;
    echo_config(&parent_dir(&a.out), "plot", a)?;
    println!("{} points -> {:?}{}", points.len(), csv, if drew { format!(" and {:?}", png) } else { String::new() });
    Ok(())
}

fn count_params_cmd(a: &CountParamsArgs) -> Result<()> {
    let arch = Architecture::plan(&a.arch.config(a.classes))?;
    let rf = architecture_rf(&arch);
    let report = serde_json::json!({
        "config": arch.config,
        "params": arch.param_count(),
        "prunable": arch.prunable_count(),
        "blocks": arch.block_count(),
        "receptive_field": rf,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
