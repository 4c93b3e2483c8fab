use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tscnet::arch::{LayerGraph, VariantKind};
use tscnet::data::{generate_split, save_samples, Split};
use tscnet::erf::{empirical_erf, erf_support_stats, save_heatmap, write_erf_csv, ErfRecord, Probe, UnitTarget};
use tscnet::train::{self, ablation, evaluate, load_model, Condition, TrainConfig};
use tscnet::{Error, Result};

#[derive(Parser)]
#[command(name = "tscnet", version, about = "Segmentation networks with translated skip connections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as PNG files under <out>/train and <out>/val.
    GenData(Overrides),
    /// Train one network; writes curves.csv and model.json to --out.
    Train(Overrides),
    /// Train U-Net and TscNet with and without coordinates over several seeds.
    Ablation(Overrides),
    /// Report the MIoU of a trained model on the validation data.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        /// model.json written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Measure effective receptive fields of untrained networks.
    Erf {
        #[command(flatten)]
        overrides: Overrides,
        /// Probe image side length.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Support thresholds, as fractions of the maximum.
        #[arg(long, value_delimiter = ',', default_value = "0.01")]
        tau: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Measure every variant instead of only the configured one.
        #[arg(long)]
        all: bool,
    },
    /// Print the number of learnable parameters.
    Params {
        #[command(flatten)]
        overrides: Overrides,
        /// List every variant.
        #[arg(long)]
        all: bool,
    },
}

/// Configuration file plus per-key overrides; flags win over the file and
/// `--set` wins over flags.
#[derive(Args)]
struct Overrides {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// unet, dilated2, dilated3, bnet or tscnet.
    #[arg(long)]
    variant: Option<String>,
    /// Downsampling levels.
    #[arg(long)]
    depth: Option<String>,
    /// Width of the first level.
    #[arg(long)]
    base: Option<String>,
    /// Append coordinate channels (true/false).
    #[arg(long)]
    ote: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Runs per condition (ablation).
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<String>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    /// Run seed (dataset seed for gen-data).
    #[arg(long)]
    seed: Option<String>,
    /// Directory with train/ and val/ PNG pairs; generated in memory if absent.
    #[arg(long)]
    data: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

impl Overrides {
    /// Builds the config. `seed_key` is the key `--seed` sets.
    fn resolve(&self, seed_key: &str) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        let flags = [
            ("variant", &self.variant),
            ("depth", &self.depth),
            ("base", &self.base),
            ("ote", &self.ote),
            ("epochs", &self.epochs),
            ("runs", &self.runs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("optimizer", &self.optimizer),
            (seed_key, &self.seed),
            ("data", &self.data),
            ("out", &self.out),
        ];
        cfg.apply(flags.iter().filter_map(|(k, v)| v.as_deref().map(|v| (*k, v))), "command line")?;
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config { path: "command line".into(), msg: format!("`--set {s}`: expected KEY=VALUE") })?;
            cfg.apply([(k.trim(), v.trim())], "command line")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &TrainConfig) -> Result<&Path> {
    cfg.out_dir.as_deref().ok_or_else(|| Error::Config { path: "command line".into(), msg: "--out is required".into() })
}

fn gen_data(cfg: &TrainConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    for (split, name) in [(Split::Train, "train"), (Split::Validation, "val")] {
        let samples = generate_split(&cfg.dataset, split)?;
        save_samples(&out.join(name), &samples)?;
        println!("{}: {} samples", out.join(name).display(), samples.len());
    }
    Ok(())
}

fn run_train(cfg: &TrainConfig) -> Result<()> {
    let label = cfg.condition().to_string();
    let record = train::train_observed(cfg, &mut |r| {
        eprintln!("{label} epoch {:>3}  loss {:.5}  val miou {:.4}", r.epoch, r.train_loss, r.val_miou);
    })?;
    println!("max validation miou {:.4} ({:.1}s)", record.max_val_miou, record.wall_time);
    Ok(())
}

fn run_ablation(cfg: &TrainConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let seeds: Vec<u64> = (0..cfg.runs as u64).map(|r| cfg.seed + r).collect();
    let result = ablation(cfg, &Condition::ABLATION, &seeds, &mut |c, run, r| {
        eprintln!("{c} run {run} epoch {:>3}  loss {:.5}  val miou {:.4}", r.epoch, r.train_loss, r.val_miou);
    })?;
    result.write(out)?;
    for row in result.summary()? {
        println!("{:<16} {:.4} +- {:.4}", row.condition, row.mean_max_miou, row.stderr);
    }
    Ok(())
}

fn run_eval(cfg: &TrainConfig, model: &Path) -> Result<()> {
    let graph = load_model(model)?;
    let data = cfg.load_data()?;
    let report = evaluate(&graph, &data.val)?;
    for (c, iou) in report.per_class.iter().enumerate() {
        match iou {
            Some(v) => println!("class {c}: {v:.4}"),
            None => println!("class {c}: absent"),
        }
    }
    println!("miou: {:.4}", report.mean);
    Ok(())
}

fn run_erf(cfg: &TrainConfig, size: usize, taus: &[f64], samples: usize, all: bool) -> Result<()> {
    let out = out_dir(cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    let variants: Vec<VariantKind> = if all { VariantKind::ALL.to_vec() } else { vec![cfg.arch.variant] };
    let mut records = Vec::new();
    for v in variants {
        let mut spec = cfg.arch.clone();
        spec.variant = v;
        let graph = LayerGraph::build(&spec, cfg.seed)?;
        let probe = Probe::new(size, size).with_samples(samples).with_seed(cfg.seed);
        let map = empirical_erf(&graph, &probe, UnitTarget::center(size, size, 0))?;
        save_heatmap(&map, &out.join(format!("erf_{v}_d{}.png", spec.depth)))?;
        for &tau in taus {
            let stats = erf_support_stats(&map, tau)?;
            println!("{v:<10} depth {} tau {tau}: {} pixels ({:.4})", spec.depth, stats.count, stats.fraction);
            records.push(ErfRecord::new(v, spec.depth, tau, stats));
        }
    }
    let path = out.join("erf.csv");
    let file = fs::File::create(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    write_erf_csv(&records, file)
}

fn run_params(cfg: &TrainConfig, all: bool) -> Result<()> {
    if !all {
        println!("{}", LayerGraph::build(&cfg.arch, 0)?.count_params());
        return Ok(());
    }
    for v in VariantKind::ALL {
        let mut spec = cfg.arch.clone();
        spec.variant = v;
        let graph = LayerGraph::build(&spec, 0)?;
        println!("{v:<10} {:>9}  widths {:?}", graph.count_params(), graph.widths());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(o) => gen_data(&o.resolve("data_seed")?),
        Command::Train(o) => run_train(&o.resolve("seed")?),
        Command::Ablation(o) => run_ablation(&o.resolve("seed")?),
        Command::Eval { overrides, model } => run_eval(&overrides.resolve("seed")?, &model),
        Command::Erf { overrides, size, tau, samples, all } => run_erf(&overrides.resolve("seed")?, size, &tau, samples, all),
        Command::Params { overrides, all } => run_params(&overrides.resolve("seed")?, all),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
