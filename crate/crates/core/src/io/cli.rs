//! `idmix` command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::config::RunConfig;
use super::dataset::{load_node_dataset, load_tu_dataset, save_node_dataset, NodeDataset};
use super::params::{load_params, save_params};
use super::trace::{format_sig6, write_trace, Report};
use crate::error::{Error, Result};
use crate::graph::{sbm_generate, FeatureMode};
use crate::numcore::Rng;
use crate::pipeline::{
    embed, gradient_check, kfold_graph_probe, linear_probe, pretrain_with, Dataset, MetricProbe, Split, Task,
};

#[derive(Parser, Debug)]
#[command(
    name = "idmix",
    version,
    about = "Graph contrastive pretraining with identity-label mixup"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain an encoder; writes params.json, trace.csv and checkpoints
    Pretrain(RunArgs),
    /// Evaluate saved parameters with a linear probe; writes report.json
    Probe(RunArgs),
    /// Recompute alignment and uniformity for every saved checkpoint
    Metrics(RunArgs),
    /// Finite-difference check of a full training step
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Write a stochastic block model dataset in node format
    GenSynthetic(GenArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lr=0.001`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set train.seed=N`
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FeatureArg {
    OnehotBlockNoisy,
    Random,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Block sizes, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    blocks: Vec<usize>,
    #[arg(long)]
    p_in: f64,
    #[arg(long)]
    p_out: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "onehot-block-noisy")]
    features: FeatureArg,
    #[arg(long, default_value_t = 0.1)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    /// Output directory
    #[arg(long, default_value = "sbm")]
    out: PathBuf,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Pretrain(args) => cmd_pretrain(&resolve(&args)?),
        Command::Probe(args) => cmd_probe(&resolve(&args)?),
        Command::Metrics(args) => cmd_metrics(&resolve(&args)?),
        Command::Gradcheck { seed, eps } => cmd_gradcheck(seed, eps),
        Command::GenSynthetic(args) => cmd_gen(&args),
    }
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    RunConfig::load(args.config.as_deref(), &overrides)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if cfg.dataset.as_os_str().is_empty() {
        return Err(Error::Config("no dataset directory configured (set `dataset`)".into()));
    }
    Ok(match cfg.task {
        Task::Node => {
            let NodeDataset { graph, split } = load_node_dataset(&cfg.dataset)?;
            Dataset::Node { graph, split }
        }
        Task::Graph => Dataset::Graphs(load_tu_dataset(&cfg.dataset)?),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn checkpoint_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("checkpoints")
}

fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    create_dir(&cfg.output_dir)?;
    let echo = cfg.output_dir.join("resolved_config.toml");
    fs::write(&echo, cfg.to_toml()).map_err(|e| Error::io(&echo, e))?;
    let ckdir = checkpoint_dir(cfg);
    if cfg.checkpoint_every > 0 {
        create_dir(&ckdir)?;
    }
    let epochs = cfg.train.epochs;
    let (params, trace) = pretrain_with(&data, &cfg.train, |epoch, params| {
        if cfg.checkpoint_every > 0 && (epoch % cfg.checkpoint_every == 0 || epoch == epochs) {
            save_params(&ckdir.join(format!("epoch_{epoch:05}.json")), params)?;
        }
        Ok(())
    })?;
    save_params(&cfg.output_dir.join("params.json"), &params)?;
    write_trace(&trace, &cfg.output_dir.join("trace.csv"))?;
    if let (Some(first), Some(last)) = (trace.records.first(), trace.records.last()) {
        println!(
            "pretrained {} epochs: loss {} -> {}, align {} -> {}, uniform {} -> {}",
            epochs,
            format_sig6(first.loss),
            format_sig6(last.loss),
            format_sig6(first.align),
            format_sig6(last.align),
            format_sig6(first.uniform),
            format_sig6(last.uniform)
        );
    }
    Ok(())
}

/// Probe the parameters in `output_dir/params.json` and build the report.
pub fn probe_report(cfg: &RunConfig) -> Result<Report> {
    let data = load_dataset(cfg)?;
    let params = load_params(&cfg.output_dir.join("params.json"))?;
    let embeddings = embed(&data, &params)?;
    let labels = data.labels()?;
    let rng = Rng::new(cfg.train.seed).split("probe");
    let p = &cfg.probe;
    let probe = match &data {
        Dataset::Node { split, .. } => linear_probe(&embeddings, &labels, split, p.l2, p.runs, &rng)?,
        Dataset::Graphs(_) => kfold_graph_probe(&embeddings, &labels, p.folds, p.cv_runs, p.l2, &rng)?,
    };
    let resolved = serde_json::to_value(cfg).expect("config serializes");
    Ok(Report::new(data.task(), &probe, resolved))
}

fn cmd_probe(cfg: &RunConfig) -> Result<()> {
    let report = probe_report(cfg)?;
    report.write(&cfg.output_dir.join("report.json"))?;
    println!(
        "accuracy {:.4} ± {:.4} over {} values",
        report.accuracy_mean,
        report.accuracy_std,
        report.accuracies.len()
    );
    Ok(())
}

fn cmd_metrics(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let ckdir = checkpoint_dir(cfg);
    let mut checkpoints: Vec<(usize, PathBuf)> = fs::read_dir(&ckdir)
        .map_err(|e| Error::io(&ckdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let epoch = p
                .file_name()?
                .to_str()?
                .strip_prefix("epoch_")?
                .strip_suffix(".json")?
                .parse()
                .ok()?;
            Some((epoch, p))
        })
        .collect();
    if checkpoints.is_empty() {
        return Err(Error::Schema(format!("no checkpoints in {}", ckdir.display())));
    }
    checkpoints.sort();
    let probe = MetricProbe::new(&data, &cfg.train)?;
    let mut out = String::from("epoch,align,uniform\n");
    for (epoch, path) in checkpoints {
        let params = load_params(&path)?;
        let (align, uniform) = probe.measure(&params, &cfg.train.metrics, cfg.train.metric_space)?;
        let line = format!("{epoch},{},{}\n", format_sig6(align), format_sig6(uniform));
        print!("{line}");
        out.push_str(&line);
    }
    let path = cfg.output_dir.join("metrics.csv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

fn cmd_gradcheck(seed: u64, eps: f64) -> Result<()> {
    let report = gradient_check(seed, eps)?;
    println!(
        "max relative error {:.3e} over {} coordinates",
        report.max_rel_error, report.coordinates
    );
    if let Some((name, index)) = &report.worst {
        println!("worst coordinate {name}[{index}]");
    }
    if report.max_rel_error >= 1e-4 {
        return Err(Error::Numeric(format!(
            "analytic and numeric gradients disagree: {:.3e}",
            report.max_rel_error
        )));
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mode = match args.features {
        FeatureArg::OnehotBlockNoisy => FeatureMode::OnehotBlockNoisy,
        FeatureArg::Random => FeatureMode::Random,
    };
    if !(0.0..=1.0).contains(&args.train_frac)
        || !(0.0..=1.0).contains(&args.val_frac)
        || args.train_frac + args.val_frac > 1.0
    {
        return Err(Error::Config(
            "train and validation fractions must lie in [0, 1] and sum to at most 1".into(),
        ));
    }
    let root = Rng::new(args.seed);
    let graph = sbm_generate(&args.blocks, args.p_in, args.p_out, mode, &mut root.split("graph"))?;
    let labels = graph.node_labels().expect("generator labels nodes").to_vec();
    let split = Split::stratified(&labels, args.train_frac, args.val_frac, &mut root.split("split"));
    save_node_dataset(&args.out, &NodeDataset { graph, split })?;
    println!("wrote {} nodes to {}", labels.len(), args.out.display());
    Ok(())
}
