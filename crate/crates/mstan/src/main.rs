//! Command-line surface: generate synthetic cohorts, train and evaluate
//! the risk model, check gradients, and run the temperature and
//! history-length sensitivity sweeps. Every command is deterministic
//! under --seed and every output CSV names the config hash it came from.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mstan::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use mstan::config::{load_config_file, RunConfig};
use mstan::data::{load_records, make_batch, write_records, Dataset};
use mstan::metrics::{evaluate, MetricsReport};
use mstan::model::{forward, ModelConfig, ModelParams};
use mstan::synth::generate_dataset;
use mstan::train::{grad_check, preprocess_with_stats, stratified_split, train};

#[derive(Parser)]
#[command(
    name = "mstan",
    version,
    about = "Multi-scale temporal alignment network for risk prediction on irregular time series"
)]
struct Cli {
    /// Flat key=value config file; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the shared random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the command's primary output path
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a single config key, e.g. --set epochs=10 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and write it as JSONL
    Generate,
    /// Train on the configured dataset; writes a checkpoint and a history CSV
    Train {
        /// Train a reduced variant instead of the full model
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
    },
    /// Score a dataset with a saved checkpoint
    Eval {
        /// Decision threshold for the confusion counts
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Compare analytic gradients against finite differences
    Gradcheck,
    /// Train one model per attention temperature and tabulate test metrics
    SweepTau {
        /// Evaluate this fixed checkpoint across the grid instead of retraining
        #[arg(long, value_name = "CHECKPOINT")]
        frozen: Option<PathBuf>,
    },
    /// Train one model per history-length cap and tabulate test metrics
    SweepLmax,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ablation {
    /// Single temporal scale: S = {1}
    SingleScale,
    /// Alignment replaced by the identity
    NoAlign,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => load_config_file(path)?,
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        let (key, value) = pair
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{pair}`"))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if let Command::Train {
        ablation: Some(ablation),
    } = &cli.command
    {
        match ablation {
            Ablation::SingleScale => config.model.scales = vec![1],
            Ablation::NoAlign => config.model.align_identity = true,
        }
    }
    config.validate()?;
    let hash = config.hash();
    println!("config_hash={hash}");

    match cli.command {
        Command::Generate => cmd_generate(&config, cli.out.as_deref()),
        Command::Train { .. } => cmd_train(&config, cli.out.as_deref(), &hash),
        Command::Eval { threshold } => cmd_eval(&config, cli.out.as_deref(), &hash, threshold),
        Command::Gradcheck => cmd_gradcheck(&config),
        Command::SweepTau { frozen } => {
            cmd_sweep_tau(&config, cli.out.as_deref(), &hash, frozen.as_deref())
        }
        Command::SweepLmax => cmd_sweep_lmax(&config, cli.out.as_deref(), &hash),
    }
}

fn feature_schema(config: &RunConfig) -> Vec<String> {
    (0..config.model.d).map(|j| format!("f{j}")).collect()
}

fn cmd_generate(config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let path = out.unwrap_or(&config.data_path);
    let dataset = generate_dataset(&config.gen)?;
    write_records(path, &dataset)?;
    println!("wrote {} items to {}", dataset.len(), path.display());
    Ok(())
}

fn load_input(config: &RunConfig) -> Result<Dataset> {
    let schema = feature_schema(config);
    load_records(&config.data_path, &schema)
        .with_context(|| format!("reading dataset {}", config.data_path.display()))
}

/// Forward a preprocessed dataset and also report the mean entropy of
/// the pooling weights, the sweep's measure of attention sharpness.
fn score_items(
    model_config: &ModelConfig,
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<u8>, f64)> {
    let mut y_hat = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    let mut entropy_sum = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let items: Vec<&(mstan::data::IrregularSeries, u8)> =
            chunk.iter().map(|&i| &dataset.items[i]).collect();
        let batch = make_batch(&items, model_config.l_max);
        let (y, cache) = forward(model_config, params, &batch)?;
        y_hat.extend(y);
        labels.extend(batch.labels.iter().copied());
        for bi in 0..batch.b {
            let row = &cache.gamma[bi * batch.l..(bi + 1) * batch.l];
            entropy_sum += -row
                .iter()
                .filter(|&&g| g > 0.0)
                .map(|&g| g * g.ln())
                .sum::<f64>();
        }
    }
    let mean_entropy = entropy_sum / indices.len().max(1) as f64;
    Ok((y_hat, labels, mean_entropy))
}

fn format_report(report: &MetricsReport) -> String {
    format!(
        "accuracy={} precision={} recall={} f1={} (threshold {}, tp={} fp={} tn={} fn={})",
        report.accuracy,
        report.precision,
        report.recall,
        report.f1,
        report.threshold,
        report.tp,
        report.fp,
        report.tn,
        report.fn_
    )
}

fn write_csv(path: &Path, hash: &str, header: &str, rows: &[String]) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))?,
    );
    writeln!(out, "# config_hash={hash}")?;
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn cmd_train(config: &RunConfig, out: Option<&Path>, hash: &str) -> Result<()> {
    let dataset = load_input(config)?;
    let outcome = train(&config.model, &config.train, &dataset)?;
    let checkpoint_path = out.unwrap_or(&config.checkpoint_path);
    save_checkpoint(
        checkpoint_path,
        &Checkpoint::new(
            config.model.clone(),
            outcome.params.clone(),
            outcome.stats.clone(),
            feature_schema(config),
        ),
    )?;
    mstan::train::write_history_csv(&config.results_path, &outcome.history, hash)?;

    let best = &outcome.history.epochs[outcome.history.best_epoch];
    println!(
        "trained {} epochs; best epoch {} val_f1={}",
        outcome.history.epochs.len(),
        best.epoch,
        best.val_metrics.f1
    );
    if !outcome.split.test.is_empty() {
        let ds = preprocess_with_stats(&dataset, &outcome.stats)?;
        let (y_hat, labels, _) = score_items(
            &config.model,
            &outcome.params,
            &ds,
            &outcome.split.test,
            config.train.batch_size,
        )?;
        let report = evaluate(&y_hat, &labels, 0.5)?;
        println!("test: {}", format_report(&report));
    }
    println!("checkpoint -> {}", checkpoint_path.display());
    println!("history -> {}", config.results_path.display());
    Ok(())
}

fn cmd_eval(config: &RunConfig, out: Option<&Path>, hash: &str, threshold: f64) -> Result<()> {
    let cp = load_checkpoint(&config.checkpoint_path)?;
    let dataset = load_records(&config.data_path, &cp.schema)
        .with_context(|| format!("reading dataset {}", config.data_path.display()))?;
    let ds = preprocess_with_stats(&dataset, &cp.stats)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let (y_hat, labels, _) = score_items(
        &cp.config,
        &cp.params,
        &ds,
        &all,
        config.train.batch_size,
    )?;
    let report = evaluate(&y_hat, &labels, threshold)?;
    println!("{}", format_report(&report));
    let path = out.unwrap_or(&config.results_path);
    write_csv(
        path,
        hash,
        "threshold,accuracy,precision,recall,f1,tp,fp,tn,fn",
        &[format!(
            "{},{},{},{},{},{},{},{},{}",
            report.threshold,
            report.accuracy,
            report.precision,
            report.recall,
            report.f1,
            report.tp,
            report.fp,
            report.tn,
            report.fn_
        )],
    )?;
    println!("report -> {}", path.display());
    Ok(())
}

fn cmd_gradcheck(config: &RunConfig) -> Result<()> {
    let mut worst = 0.0f64;
    for learnable in [false, true] {
        let mut mc = config.model.clone();
        mc.tau_learnable = learnable;
        let err = grad_check(&mc, mc.seed)?;
        let mode = if learnable { "learnable" } else { "fixed" };
        println!("max relative gradient error ({mode} temperature): {err:.3e}");
        worst = worst.max(err);
    }
    if worst >= 1e-4 {
        bail!("gradient check failed: max relative error {worst:.3e} >= 1e-4");
    }
    println!("gradient check passed");
    Ok(())
}

/// Train one model at the given settings and report test metrics plus
/// mean pooling entropy on the test split.
fn train_and_score(
    model_config: &ModelConfig,
    config: &RunConfig,
    dataset: &Dataset,
) -> Result<(MetricsReport, f64)> {
    let outcome = train(model_config, &config.train, dataset)?;
    let ds = preprocess_with_stats(dataset, &outcome.stats)?;
    let (y_hat, labels, entropy) = score_items(
        model_config,
        &outcome.params,
        &ds,
        &outcome.split.test,
        config.train.batch_size,
    )?;
    Ok((evaluate(&y_hat, &labels, 0.5)?, entropy))
}

const SWEEP_HEADER: &str = "tau,accuracy,precision,recall,f1,mean_attention_entropy";

fn cmd_sweep_tau(
    config: &RunConfig,
    out: Option<&Path>,
    hash: &str,
    frozen: Option<&Path>,
) -> Result<()> {
    let path = out.unwrap_or(&config.results_path);
    let mut rows = Vec::new();
    match frozen {
        None => {
            let dataset = load_input(config)?;
            for &tau in &config.tau_grid {
                let mut mc = config.model.clone();
                mc.tau = tau;
                mc.tau_learnable = false;
                let (report, entropy) = train_and_score(&mc, config, &dataset)?;
                println!(
                    "tau={tau}: recall={} f1={} entropy={entropy}",
                    report.recall, report.f1
                );
                rows.push(format!(
                    "{tau},{},{},{},{},{entropy}",
                    report.accuracy, report.precision, report.recall, report.f1
                ));
            }
        }
        Some(checkpoint) => {
            let cp = load_checkpoint(checkpoint)?;
            let dataset = load_records(&config.data_path, &cp.schema)
                .with_context(|| format!("reading dataset {}", config.data_path.display()))?;
            let ds = preprocess_with_stats(&dataset, &cp.stats)?;
            let labels: Vec<u8> = ds.items.iter().map(|(_, l)| *l).collect();
            let split = stratified_split(
                &labels,
                config.train.train_frac,
                config.train.val_frac,
                config.train.seed,
            );
            // The grid temperature must take effect, so the frozen
            // parameters drop any learned temperature coordinate.
            let mut params = cp.params.clone();
            params.tau_raw = None;
            for &tau in &config.tau_grid {
                let mut mc = cp.config.clone();
                mc.tau = tau;
                mc.tau_learnable = false;
                let (y_hat, item_labels, entropy) = score_items(
                    &mc,
                    &params,
                    &ds,
                    &split.test,
                    config.train.batch_size,
                )?;
                let report = evaluate(&y_hat, &item_labels, 0.5)?;
                println!(
                    "tau={tau}: recall={} f1={} entropy={entropy}",
                    report.recall, report.f1
                );
                rows.push(format!(
                    "{tau},{},{},{},{},{entropy}",
                    report.accuracy, report.precision, report.recall, report.f1
                ));
            }
        }
    }
    write_csv(path, hash, SWEEP_HEADER, &rows)?;
    println!("sweep -> {}", path.display());
    Ok(())
}

fn cmd_sweep_lmax(config: &RunConfig, out: Option<&Path>, hash: &str) -> Result<()> {
    let path = out.unwrap_or(&config.results_path);
    let dataset = load_input(config)?;
    let mut rows = Vec::new();
    for &l_max in &config.lmax_grid {
        let mut mc = config.model.clone();
        mc.l_max = l_max;
        let (report, _) = train_and_score(&mc, config, &dataset)?;
        println!("lmax={l_max}: f1={}", report.f1);
        rows.push(format!(
            "{l_max},{},{},{},{}",
            report.accuracy, report.precision, report.recall, report.f1
        ));
    }
    write_csv(path, hash, "lmax,accuracy,precision,recall,f1", &rows)?;
    println!("sweep -> {}", path.display());
    Ok(())
}
