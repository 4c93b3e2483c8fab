//! Python bindings. Tensors cross the boundary as flat row-major lists plus
//! an `(n, c, h, w)` shape tuple, so the module needs no array library.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use tscnet::arch::{ArchitectureSpec, LayerGraph, VariantKind};
use tscnet::data::{generate_sample as gen_sample, miou as miou_of, DatasetConfig, Split};
use tscnet::erf::{analytic_rf, empirical_erf, Probe, UnitTarget};
use tscnet::train::{self, load_model, save_model, TrainConfig};
use tscnet::tsc::{translate as translate_tensor, Direction, Fraction};
use tscnet::{Error, Shape, Tensor};

type Dims = (usize, usize, usize, usize);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn tensor(data: Vec<f64>, shape: Dims) -> PyResult<Tensor> {
    Tensor::from_vec([shape.0, shape.1, shape.2, shape.3], data).map_err(py_err)
}

fn dims(s: Shape) -> Dims {
    (s.n, s.c, s.h, s.w)
}

fn spec(variant: &str, depth: usize, base: usize, ote: bool, widths: Option<Vec<usize>>) -> PyResult<ArchitectureSpec> {
    let v: VariantKind = variant.parse().map_err(py_err)?;
    let mut s = ArchitectureSpec::new(v, depth, base, tscnet::data::NUM_CLASSES).with_ote(ote);
    if let Some(w) = widths {
        s = s.with_widths(w);
    }
    s.validate().map_err(py_err)?;
    Ok(s)
}

/// A built segmentation network.
#[pyclass(name = "Network", module = "tscnet_py")]
struct PyNetwork {
    graph: LayerGraph,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (variant, depth = 3, base = 8, ote = false, widths = None, seed = 0))]
    fn new(variant: &str, depth: usize, base: usize, ote: bool, widths: Option<Vec<usize>>, seed: u64) -> PyResult<Self> {
        let graph = LayerGraph::build(&spec(variant, depth, base, ote, widths)?, seed).map_err(py_err)?;
        Ok(PyNetwork { graph })
    }

    /// Reads a `model.json` written by `save` or the `train` command.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork { graph: load_model(&path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.graph, &path).map_err(py_err)
    }

    fn count_params(&self) -> usize {
        self.graph.count_params()
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.graph.widths().to_vec()
    }

    /// Logits for a batch of images; returns `(values, shape)`.
    fn forward(&self, data: Vec<f64>, shape: Dims) -> PyResult<(Vec<f64>, Dims)> {
        let y = self.graph.forward(&tensor(data, shape)?).map_err(py_err)?;
        Ok((y.to_vec(), dims(y.shape())))
    }

    /// Per-pixel argmax class of every image, row-major per sample.
    fn predict(&self, data: Vec<f64>, shape: Dims) -> PyResult<Vec<u8>> {
        train::predict(&self.graph, &tensor(data, shape)?).map_err(py_err)
    }

    /// Mean `|d logit / d pixel|` over random probes; returns an `h * w` list.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (height, width, row, col, class_index = 0, samples = 8, seed = 0))]
    fn erf(&self, height: usize, width: usize, row: usize, col: usize, class_index: usize, samples: usize, seed: u64) -> PyResult<Vec<f64>> {
        let probe = Probe::new(height, width).with_samples(samples).with_seed(seed);
        let map = empirical_erf(&self.graph, &probe, UnitTarget::new(row, col, class_index)).map_err(py_err)?;
        Ok(map.values().to_vec())
    }

    /// Row-major mask of input pixels that can influence the logit at `(row, col)`.
    fn analytic_rf(&self, height: usize, width: usize, row: usize, col: usize) -> PyResult<Vec<bool>> {
        Ok(analytic_rf(&self.graph, height, width, row, col).map_err(py_err)?.mask())
    }

    fn __repr__(&self) -> String {
        match self.graph.spec() {
            Some(s) => format!("Network({}, depth={}, widths={:?}, ote={})", s.variant, s.depth, self.graph.widths(), s.ote),
            None => "Network(custom)".into(),
        }
    }
}

/// Learnable parameters of a variant without building it by hand.
#[pyfunction]
#[pyo3(signature = (variant, depth = 3, base = 8, ote = false, widths = None))]
fn count_params(variant: &str, depth: usize, base: usize, ote: bool, widths: Option<Vec<usize>>) -> PyResult<usize> {
    let g = LayerGraph::build(&spec(variant, depth, base, ote, widths)?, 0).map_err(py_err)?;
    Ok(g.count_params())
}

/// Cyclic shift of every plane by `round(num / den * size)`.
#[pyfunction]
fn translate(data: Vec<f64>, shape: Dims, direction: &str, num: usize, den: usize) -> PyResult<Vec<f64>> {
    let d = match direction {
        "left" => Direction::Left,
        "up" => Direction::Up,
        "diag" | "up-left" => Direction::DiagUpLeft,
        other => return Err(PyValueError::new_err(format!("unknown direction `{other}` (left, up, diag)"))),
    };
    let q = Fraction::new(num, den).map_err(py_err)?;
    Ok(translate_tensor(&tensor(data, shape)?, d, q).to_vec())
}

/// One synthetic sample: `(image values, image shape, mask values)`.
#[pyfunction]
#[pyo3(signature = (index, split = "train", height = 64, width = 64, seed = 0))]
fn generate_sample(index: usize, split: &str, height: usize, width: usize, seed: u64) -> PyResult<(Vec<f64>, Dims, Vec<u8>)> {
    let split = match split {
        "train" => Split::Train,
        "val" => Split::Validation,
        other => return Err(PyValueError::new_err(format!("unknown split `{other}` (train, val)"))),
    };
    let cfg = DatasetConfig { height, width, seed, ..DatasetConfig::default() };
    let s = gen_sample(&cfg, split, index).map_err(py_err)?;
    Ok((s.image.to_vec(), dims(s.image.shape()), s.mask.data))
}

/// `(mean IoU, per-class IoU)`; classes absent from both masks are `None`.
#[pyfunction]
#[pyo3(signature = (pred, truth, num_classes = 3))]
fn miou(pred: Vec<u8>, truth: Vec<u8>, num_classes: usize) -> PyResult<(f64, Vec<Option<f64>>)> {
    let r = miou_of(&pred, &truth, num_classes).map_err(py_err)?;
    Ok((r.mean, r.per_class))
}

/// Trains one network. Keyword arguments are configuration keys, as in a
/// config file; returns `(train_loss, val_miou)` per epoch.
#[pyfunction]
#[pyo3(signature = (**options))]
fn train_network(options: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let mut cfg = TrainConfig::default();
    if let Some(opts) = options {
        for (k, v) in opts.iter() {
            let key: String = k.extract()?;
            // Sequences become the comma-separated form config files use.
            let value = match v.extract::<Vec<Bound<'_, PyAny>>>() {
                Ok(items) if !v.is_instance_of::<pyo3::types::PyString>() => {
                    items.iter().map(|i| i.str().map(|s| s.to_string())).collect::<PyResult<Vec<_>>>()?.join(",")
                }
                _ => v.str()?.to_string(),
            };
            cfg.set(&key, &value).map_err(PyValueError::new_err)?;
        }
    }
    let record = train::train(&cfg).map_err(py_err)?;
    Ok((record.train_loss, record.val_miou))
}

#[pymodule]
fn tscnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(translate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_sample, m)?)?;
    m.add_function(wrap_pyfunction!(miou, m)?)?;
    m.add_function(wrap_pyfunction!(train_network, m)?)?;
    m.add("VARIANTS", VariantKind::ALL.map(|v| v.to_string()).to_vec())?;
    Ok(())
}
