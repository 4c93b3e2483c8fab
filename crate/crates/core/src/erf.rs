//! Effective receptive fields.
//!
//! [`empirical_erf`] measures which input pixels move a chosen logit, by
//! averaging absolute input gradients over random probes. [`analytic_rf`]
//! bounds the same set from the graph alone: it walks the layers backwards
//! and tracks, per layer, rectangles of that layer's own grid. Translated
//! skip connections copy every rectangle to its cyclically shifted position
//! and tag the copy with the shift.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Luma};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::arch::{LayerGraph, LayerOp, VariantKind};
use crate::error::{Error, Result};
use crate::tensor::{weighted_sum, ConvSpec, Shape, Tensor};
use crate::tsc::Direction;

/// One logit: output row, column and class channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UnitTarget {
    pub row: usize,
    pub col: usize,
    pub class: usize,
}

impl UnitTarget {
    pub fn new(row: usize, col: usize, class: usize) -> Self {
        UnitTarget { row, col, class }
    }

    /// The unit at the center of an `h x w` map.
    pub fn center(h: usize, w: usize, class: usize) -> Self {
        UnitTarget { row: h / 2, col: w / 2, class }
    }
}

/// Non-negative sensitivity of one output unit to every input pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ErfMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    target: UnitTarget,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("threshold {tau} is outside (0, 1)")));
    }
    Ok(())
}

impl ErfMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, target: UnitTarget) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("erf_map", format!("{} values for {height}x{width}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("erf values must be finite and non-negative, found {v}")));
        }
        Ok(ErfMap { height, width, values, target })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn target(&self) -> UnitTarget {
        self.target
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Row-major mask of pixels whose value exceeds `tau * max`.
    pub fn support(&self, tau: f64) -> Result<Vec<bool>> {
        check_tau(tau)?;
        let max = self.max();
        if max == 0.0 {
            return Err(Error::invalid("support of an all-zero map is undefined"));
        }
        Ok(self.values.iter().map(|&v| v > tau * max).collect())
    }
}

/// Size of an ERF support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportStats {
    pub count: usize,
    /// `count` over the number of input pixels.
    pub fraction: f64,
}

pub fn erf_support_stats(map: &ErfMap, tau: f64) -> Result<SupportStats> {
    let count = map.support(tau)?.iter().filter(|&&s| s).count();
    Ok(SupportStats { count, fraction: count as f64 / map.values.len() as f64 })
}

/// Random-normal probe inputs for [`empirical_erf`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Probe {
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Probe {
    /// Eight samples, seed 0.
    pub fn new(height: usize, width: usize) -> Self {
        Probe { height, width, samples: 8, seed: 0 }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Mean over probes and image channels of `|d logit / d pixel|` for the
/// target logit. Coordinate channels are added inside the graph and so never
/// appear in the map.
pub fn empirical_erf(graph: &LayerGraph, probe: &Probe, target: UnitTarget) -> Result<ErfMap> {
    if probe.samples == 0 {
        return Err(Error::invalid("empirical_erf needs at least one probe sample"));
    }
    let (h, w) = (probe.height, probe.width);
    let (oh, ow) = *graph.spatial_sizes(h, w)?.last().expect("graph has layers");
    if target.row >= oh || target.col >= ow {
        return Err(Error::invalid(format!(
            "target ({}, {}) outside the {oh}x{ow} logit map",
            target.row, target.col
        )));
    }
    let c = graph.input_channels();
    let shape = Shape::new(probe.samples, c, h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let data: Vec<f64> = (0..shape.numel()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = Tensor::parameter(shape, data)?;
    let y = graph.forward_with(&x, &graph.param_tensors(false))?;
    let ys = y.shape();
    if target.class >= ys.c {
        return Err(Error::invalid(format!(
            "target class {} but the network has {} output channels",
            target.class, ys.c
        )));
    }
    // Probes are independent samples of one batch, so the gradient of the
    // summed target logits splits into per-sample gradients.
    let mut pick = vec![0.0; ys.numel()];
    for n in 0..ys.n {
        pick[ys.index(n, target.class, target.row, target.col)] = 1.0;
    }
    weighted_sum(&y, &pick)?.backward()?;
    let grad = x.grad().expect("input requires grad");

    let plane = h * w;
    let mut values = vec![0.0; plane];
    for chunk in grad.chunks(plane) {
        for (v, g) in values.iter_mut().zip(chunk) {
            *v += g.abs();
        }
    }
    let norm = (probe.samples * c) as f64;
    values.iter_mut().for_each(|v| *v /= norm);
    ErfMap::new(h, w, values, target)
}

/// Writes `map` as a 16-bit grayscale PNG with the maximum at 65535.
pub fn save_heatmap(map: &ErfMap, path: &Path) -> Result<()> {
    let max = map.max();
    if max == 0.0 {
        return Err(Error::invalid("cannot normalize an all-zero heatmap"));
    }
    let pixels: Vec<u16> = map.values.iter().map(|v| (v / max * 65535.0).round() as u16).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, pixels).expect("size matches");
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Reads a heatmap written by [`save_heatmap`]: `(height, width, pixels)`.
pub fn load_heatmap(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let gray = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("heatmap must be 16-bit grayscale, found {:?}", other.color()),
            })
        }
    };
    Ok((gray.height() as usize, gray.width() as usize, gray.into_raw()))
}

/// One line of an ERF size report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErfRecord {
    pub variant: String,
    pub depth: usize,
    pub tau: f64,
    pub support_count: usize,
    pub support_fraction: f64,
}

impl ErfRecord {
    pub fn new(variant: VariantKind, depth: usize, tau: f64, stats: SupportStats) -> Self {
        ErfRecord {
            variant: variant.to_string(),
            depth,
            tau,
            support_count: stats.count,
            support_fraction: stats.fraction,
        }
    }
}

/// Writes records as CSV with header `variant,depth,tau,support_count,support_fraction`.
pub fn write_erf_csv(records: &[ErfRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::invalid(format!("writing erf csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("erf csv", e))
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..=self.bottom).contains(&y) && (self.left..=self.right).contains(&x)
    }

    fn covers(&self, other: &Rect) -> bool {
        self.top <= other.top && self.left <= other.left && self.bottom >= other.bottom && self.right >= other.right
    }
}

/// One rectangle of a receptive field. `route` lists the translated skip
/// copies (layer index, direction) it passed through; `offset` is their
/// total shift in input pixels, reduced modulo the input size.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RfComponent {
    pub rect: Rect,
    pub offset: (usize, usize),
    pub route: Vec<(usize, Direction)>,
}

/// Theoretical support of one output unit.
#[derive(Clone, Debug, PartialEq)]
pub struct RfRegion {
    height: usize,
    width: usize,
    components: Vec<RfComponent>,
}

impl RfRegion {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn components(&self) -> &[RfComponent] {
        &self.components
    }

    /// Distinct translation routes that reach the input.
    pub fn routes(&self) -> BTreeSet<&[(usize, Direction)]> {
        self.components.iter().map(|c| c.route.as_slice()).collect()
    }

    /// Distinct offsets of the components.
    pub fn offsets(&self) -> BTreeSet<(usize, usize)> {
        self.components.iter().map(|c| c.offset).collect()
    }

    /// Row-major membership mask of the union of all rectangles.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.height * self.width];
        for c in &self.components {
            for y in c.rect.top..=c.rect.bottom {
                m[y * self.width + c.rect.left..=y * self.width + c.rect.right].fill(true);
            }
        }
        m
    }

    pub fn area(&self) -> usize {
        self.mask().iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.components.iter().any(|c| c.rect.contains(y, x))
    }

    /// Whether every `true` pixel of a row-major mask lies in the region.
    pub fn contains_mask(&self, mask: &[bool]) -> bool {
        let own = self.mask();
        mask.len() == own.len() && mask.iter().zip(&own).all(|(&m, &o)| !m || o)
    }
}

/// Input interval `[lo, hi]` reaching outputs `[a, b]` of a convolution.
fn conv_back(a: usize, b: usize, len: usize, k: usize, spec: &ConvSpec) -> Option<(usize, usize)> {
    let (s, p, span) = (spec.stride as i64, spec.padding as i64, (spec.span(k) - 1) as i64);
    clip(a as i64 * s - p, b as i64 * s - p + span, len)
}

/// Input interval reaching outputs `[a, b]` of a transposed convolution,
/// whose input `i` feeds outputs `i*s - p + t*d` for `t < k`.
fn conv_t_back(a: usize, b: usize, len: usize, k: usize, spec: &ConvSpec) -> Option<(usize, usize)> {
    let (s, p, span) = (spec.stride as i64, spec.padding as i64, (spec.span(k) - 1) as i64);
    let lo = -(-(a as i64 + p - span)).div_euclid(s);
    let hi = (b as i64 + p).div_euclid(s);
    clip(lo, hi, len)
}

fn clip(lo: i64, hi: i64, len: usize) -> Option<(usize, usize)> {
    let (lo, hi) = (lo.max(0), hi.min(len as i64 - 1));
    (lo <= hi).then_some((lo as usize, hi as usize))
}

/// `[a, b]` moved by `shift` on a cycle of `len`, split where it wraps.
fn wrap(a: usize, b: usize, shift: usize, len: usize) -> Vec<(usize, usize)> {
    if shift == 0 || b - a + 1 >= len {
        return vec![(a, b)];
    }
    let (a2, b2) = (a + shift, b + shift);
    if b2 < len {
        vec![(a2, b2)]
    } else if a2 >= len {
        vec![(a2 - len, b2 - len)]
    } else {
        vec![(a2, len - 1), (0, b2 - len)]
    }
}

/// Drops duplicates and rectangles covered by another one with the same route.
fn prune(mut comps: Vec<RfComponent>) -> Vec<RfComponent> {
    comps.sort();
    comps.dedup();
    let keep: Vec<bool> = comps
        .iter()
        .enumerate()
        .map(|(i, c)| {
            !comps.iter().enumerate().any(|(j, o)| {
                j != i && o.route == c.route && o.rect.covers(&c.rect) && (o.rect != c.rect || j < i)
            })
        })
        .collect();
    comps.into_iter().zip(keep).filter_map(|(c, k)| k.then_some(c)).collect()
}

/// Receptive field of logit `(row, col)` for an `h x w` input: every input
/// pixel with a path of nonzero weight to it. Channels are not tracked, so
/// the region is the same for every class.
pub fn analytic_rf(graph: &LayerGraph, h: usize, w: usize, row: usize, col: usize) -> Result<RfRegion> {
    let sizes = graph.spatial_sizes(h, w)?;
    let layers = graph.layers();
    let last = layers.len() - 1;
    let (oh, ow) = sizes[last];
    if row >= oh || col >= ow {
        return Err(Error::invalid(format!("target ({row}, {col}) outside the {oh}x{ow} logit map")));
    }
    let mut pending: Vec<Vec<RfComponent>> = vec![Vec::new(); layers.len()];
    pending[last].push(RfComponent {
        rect: Rect { top: row, left: col, bottom: row, right: col },
        offset: (0, 0),
        route: Vec::new(),
    });
    let mut at_input = Vec::new();
    for i in (0..layers.len()).rev() {
        let comps = prune(std::mem::take(&mut pending[i]));
        if comps.is_empty() {
            continue;
        }
        let params = graph.params();
        let mut send = |to: usize, c: RfComponent| pending[to].push(c);
        match &layers[i].op {
            LayerOp::Input => at_input = comps,
            LayerOp::CoordInject(s) | LayerOp::Relu(s) => comps.into_iter().for_each(|c| send(*s, c)),
            LayerOp::Concat(srcs) => {
                for &s in srcs {
                    comps.iter().for_each(|c| send(s, c.clone()));
                }
            }
            LayerOp::MaxPool(s) => {
                let (ih, iw) = sizes[*s];
                for c in comps {
                    let r = c.rect;
                    let rect = Rect {
                        top: 2 * r.top,
                        left: 2 * r.left,
                        bottom: (2 * r.bottom + 1).min(ih - 1),
                        right: (2 * r.right + 1).min(iw - 1),
                    };
                    send(*s, RfComponent { rect, ..c });
                }
            }
            LayerOp::Conv { src, weight, spec, .. } | LayerOp::ConvTransposed { src, weight, spec, .. } => {
                let k = params[*weight].shape.h;
                let (ih, iw) = sizes[*src];
                let back = if matches!(layers[i].op, LayerOp::Conv { .. }) { conv_back } else { conv_t_back };
                for c in comps {
                    let r = c.rect;
                    if let (Some((top, bottom)), Some((left, right))) =
                        (back(r.top, r.bottom, ih, k, spec), back(r.left, r.right, iw, k, spec))
                    {
                        send(*src, RfComponent { rect: Rect { top, left, bottom, right }, ..c });
                    }
                }
            }
            LayerOp::Tsc { decoder, skip, config } => {
                let (sh, sw) = sizes[*skip];
                let (stride_y, stride_x) = (h / sh, w / sw);
                for c in comps {
                    send(*decoder, c.clone());
                    for dir in Direction::ALL {
                        let (dy, dx) = dir.shifts(config.factor(), sh, sw);
                        let mut route = c.route.clone();
                        route.push((i, dir));
                        let offset = ((c.offset.0 + dy * stride_y) % h, (c.offset.1 + dx * stride_x) % w);
                        for (top, bottom) in wrap(c.rect.top, c.rect.bottom, dy, sh) {
                            for (left, right) in wrap(c.rect.left, c.rect.right, dx, sw) {
                                send(
                                    *skip,
                                    RfComponent { rect: Rect { top, left, bottom, right }, offset, route: route.clone() },
                                );
                            }
                        }
                    }
                    send(*skip, c);
                }
            }
        }
    }
    Ok(RfRegion { height: h, width: w, components: at_input })
}
