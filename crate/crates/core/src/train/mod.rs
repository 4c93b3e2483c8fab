//! Training, evaluation and the coordinate-channel ablation.

mod ablation;
pub mod config;
mod optim;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use ablation::{ablation, AblationResult, Condition, ConditionResult, MeanCurveRow};
pub use optim::{Optimizer, OptimizerKind};

use crate::arch::{ArchitectureSpec, LayerGraph, Parameter, VariantKind};
use crate::data::dataset::splitmix64;
use crate::data::{generate_dataset, load_dir, ConfusionMatrix, Dataset, DatasetConfig, MiouReport, SegmentationSample};
use crate::error::{Error, Result};
use crate::tensor::{cross_entropy_per_sample, softmax_cross_entropy, Shape, Tensor};

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchitectureSpec,
    pub epochs: usize,
    /// Runs per condition in an ablation.
    pub runs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Generator settings, used when `data_dir` is unset.
    pub dataset: DatasetConfig,
    /// Directory holding `train/` and `val/` sample folders.
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    /// TscNet with coordinates at desk scale: 20 epochs, 3 runs, batches of
    /// 8, Adam at 1e-3, on the default generated dataset.
    fn default() -> Self {
        TrainConfig {
            arch: ArchitectureSpec::desk_default(VariantKind::TscNet).with_ote(true),
            epochs: 20,
            runs: 3,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            seed: 0,
            dataset: DatasetConfig::default(),
            data_dir: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.epochs == 0 || self.runs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs, runs and batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} is not a finite non-negative number", self.learning_rate)));
        }
        if self.data_dir.is_none() {
            self.dataset.validate()?;
        }
        Ok(())
    }

    /// Reads `data_dir`, or generates the dataset.
    pub fn load_data(&self) -> Result<Dataset> {
        match &self.data_dir {
            Some(dir) => Ok(Dataset {
                train: load_dir(&dir.join("train"), self.arch.num_classes)?,
                val: load_dir(&dir.join("val"), self.arch.num_classes)?,
            }),
            None => generate_dataset(&self.dataset),
        }
    }

    pub fn condition(&self) -> Condition {
        Condition { variant: self.arch.variant, ote: self.arch.ote }
    }
}

/// Per-epoch history of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub train_loss: Vec<f64>,
    pub val_miou: Vec<f64>,
    /// Seconds; not part of any written output.
    pub wall_time: f64,
    pub max_val_miou: f64,
}

impl RunRecord {
    /// Mean validation MIoU over the last `k` epochs.
    pub fn final_mean(&self, k: usize) -> f64 {
        let tail = &self.val_miou[self.val_miou.len().saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
}

/// Stacks samples `idx` into a batch and row-major per-pixel targets.
pub fn stack(samples: &[SegmentationSample], idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let first = samples[idx[0]].image.shape();
    let mut data = Vec::with_capacity(idx.len() * first.numel());
    let mut targets = Vec::with_capacity(idx.len() * first.plane());
    for &i in idx {
        let s = &samples[i];
        if s.image.shape() != first {
            return Err(Error::shape("stack", format!("sample {i} is {}, sample {} is {first}", s.image.shape(), idx[0])));
        }
        data.extend_from_slice(s.image.data());
        targets.extend(s.mask.targets());
    }
    Ok((Tensor::from_vec(Shape::new(idx.len(), first.c, first.h, first.w), data)?, targets))
}

/// Most likely class of every pixel, row-major per sample; ties go to the lower class.
pub fn predict(graph: &LayerGraph, images: &Tensor) -> Result<Vec<u8>> {
    let logits = graph.forward(images)?;
    let s = logits.shape();
    let d = logits.data();
    let mut out = Vec::with_capacity(s.n * s.plane());
    for n in 0..s.n {
        for p in 0..s.plane() {
            let at = |c: usize| d[(n * s.c + c) * s.plane() + p];
            let best = (1..s.c).fold(0, |b, c| if at(c) > at(b) { c } else { b });
            out.push(best as u8);
        }
    }
    Ok(out)
}

const EVAL_BATCH: usize = 8;

/// MIoU of the network's predictions over `samples`, from one confusion
/// matrix pooled across all pixels.
pub fn evaluate(graph: &LayerGraph, samples: &[SegmentationSample]) -> Result<MiouReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut cm: Option<ConfusionMatrix> = None;
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = stack(samples, chunk)?;
        let pred = predict(graph, &x)?;
        let classes = graph.spec().map_or(crate::data::NUM_CLASSES, |s| s.num_classes);
        let cm = cm.get_or_insert_with(|| ConfusionMatrix::new(classes));
        let truth: Vec<u8> = chunk.iter().flat_map(|&i| samples[i].mask.data.iter().copied()).collect();
        cm.add(&pred, &truth)?;
    }
    cm.expect("at least one batch").report()
}

/// Initialization and shuffling seeds of a run with base seed `seed`.
fn run_seeds(seed: u64) -> (u64, u64) {
    (splitmix64(seed ^ 0x696e_6974), splitmix64(seed ^ 0x7368_7566))
}

/// Trains one network from scratch and returns it with its history.
/// Deterministic for a given config, data and seed.
pub fn train_run(
    config: &TrainConfig,
    data: &Dataset,
    seed: u64,
    observer: &mut dyn FnMut(&EpochReport),
) -> Result<(RunRecord, LayerGraph)> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let start = Instant::now();
    let (init_seed, shuffle_seed) = run_seeds(seed);
    let mut graph = LayerGraph::build(&config.arch, init_seed)?;
    let mut opt = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        graph.params().iter().map(|p| p.data.len()),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut record = RunRecord { train_loss: Vec::new(), val_miou: Vec::new(), wall_time: 0.0, max_val_miou: f64::MIN };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; order.len()];
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, targets) = stack(&data.train, chunk)?;
            let params = graph.param_tensors(true);
            let logits = graph.forward_with(&x, &params)?;
            let loss = softmax_cross_entropy(&logits, &targets)?;
            if !loss.item()?.is_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1 });
            }
            for (&i, l) in chunk.iter().zip(cross_entropy_per_sample(&logits, &targets)?) {
                losses[i] = l;
            }
            loss.backward()?;
            let grads: Vec<Vec<f64>> =
                params.iter().map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()])).collect();
            let mut slots: Vec<&mut [f64]> = graph.params_mut().iter_mut().map(|p| p.data.as_mut_slice()).collect();
            opt.step(&mut slots, &grads);
        }
        // Summed in sample order, so the value does not depend on batching.
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let val_miou = evaluate(&graph, &data.val)?.mean;
        record.train_loss.push(train_loss);
        record.val_miou.push(val_miou);
        record.max_val_miou = record.max_val_miou.max(val_miou);
        observer(&EpochReport { epoch, train_loss, val_miou });
    }
    record.wall_time = start.elapsed().as_secs_f64();
    Ok((record, graph))
}

/// Trains one run with the config's seed. With `out_dir` set, writes
/// `curves.csv` and the trained `model.json` there.
pub fn train(config: &TrainConfig) -> Result<RunRecord> {
    train_observed(config, &mut |_| {})
}

pub fn train_observed(config: &TrainConfig, observer: &mut dyn FnMut(&EpochReport)) -> Result<RunRecord> {
    config.validate()?;
    let data = config.load_data()?;
    let (record, graph) = train_run(config, &data, config.seed, observer)?;
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rows = curve_rows(&config.condition().to_string(), 0, &record);
        write_csv(&dir.join("curves.csv"), &rows)?;
        save_model(&graph, &dir.join("model.json"))?;
    }
    Ok(record)
}

/// One line of `curves.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub condition: String,
    pub run: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: String,
    pub mean_max_miou: f64,
    pub stderr: f64,
}

pub fn curve_rows(condition: &str, run: usize, record: &RunRecord) -> Vec<CurveRow> {
    record
        .train_loss
        .iter()
        .zip(&record.val_miou)
        .enumerate()
        .map(|(e, (&train_loss, &val_miou))| CurveRow {
            condition: condition.to_string(),
            run,
            epoch: e + 1,
            train_loss,
            val_miou,
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format { path: path.to_path_buf(), msg: e.to_string() }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    arch: ArchitectureSpec,
    params: Vec<Parameter>,
}

/// Writes the architecture and parameters of a built network as JSON.
pub fn save_model(graph: &LayerGraph, path: &Path) -> Result<()> {
    let arch = graph.spec().ok_or_else(|| Error::invalid("only built architectures can be saved"))?.clone();
    let file = ModelFile { arch, params: graph.params().to_vec() };
    let text = serde_json::to_string(&file).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<LayerGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    let mut graph = LayerGraph::build(&file.arch, 0)?;
    graph.set_params(file.params).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    Ok(graph)
}
