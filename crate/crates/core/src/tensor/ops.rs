use super::{GradFn, Shape, Tensor};
use crate::error::{Error, Result};

struct AddBackward;

impl GradFn for AddBackward {
    fn backward(&self, inputs: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        inputs.iter().map(|t| t.requires_grad().then(|| grad_out.to_vec())).collect()
    }
}

/// Element-wise sum of two tensors of identical shape.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{} vs {}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(a.shape(), data, &[a, b], AddBackward))
}

struct ReluBackward;

impl GradFn for ReluBackward {
    fn backward(&self, inputs: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = inputs[0]
            .data()
            .iter()
            .zip(grad_out)
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        vec![Some(g)]
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_op(x.shape(), data, &[x], ReluBackward)
}

struct ScaleBackward(f64);

impl GradFn for ScaleBackward {
    fn backward(&self, _: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad_out.iter().map(|g| g * self.0).collect())]
    }
}

/// `factor * x`.
pub fn scale(x: &Tensor, factor: f64) -> Tensor {
    let data = x.data().iter().map(|v| v * factor).collect();
    Tensor::from_op(x.shape(), data, &[x], ScaleBackward(factor))
}

struct ConcatBackward {
    channels: Vec<usize>,
}

impl GradFn for ConcatBackward {
    fn backward(&self, inputs: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let s = inputs[0].shape();
        let total: usize = self.channels.iter().sum();
        let plane = s.plane();
        let mut start = 0;
        inputs
            .iter()
            .zip(&self.channels)
            .map(|(t, &c)| {
                let range = start..start + c;
                start += c;
                t.requires_grad().then(|| {
                    let mut g = Vec::with_capacity(s.n * c * plane);
                    for n in 0..s.n {
                        let base = (n * total + range.start) * plane;
                        g.extend_from_slice(&grad_out[base..base + c * plane]);
                    }
                    g
                })
            })
            .collect()
    }
}

/// Stack tensors along the channel axis. All parts must share N, H and W.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let Some(first) = parts.first() else {
        return Err(Error::invalid("concat_channels needs at least one part"));
    };
    let s0 = first.shape();
    for (i, p) in parts.iter().enumerate() {
        let s = p.shape();
        if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
            return Err(Error::shape(
                "concat_channels",
                format!("part {i} has shape {s}, part 0 has {s0}; N, H and W must agree"),
            ));
        }
    }
    let channels: Vec<usize> = parts.iter().map(|p| p.shape().c).collect();
    let total: usize = channels.iter().sum();
    let plane = s0.plane();
    let mut data = Vec::with_capacity(s0.n * total * plane);
    for n in 0..s0.n {
        for p in parts {
            let c = p.shape().c;
            data.extend_from_slice(&p.data()[n * c * plane..(n + 1) * c * plane]);
        }
    }
    Ok(Tensor::from_op(
        Shape::new(s0.n, total, s0.h, s0.w),
        data,
        parts,
        ConcatBackward { channels },
    ))
}

struct SumBackward;

impl GradFn for SumBackward {
    fn backward(&self, inputs: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![grad_out[0]; inputs[0].numel()])]
    }
}

/// Sum of all elements as a scalar tensor.
pub fn sum(x: &Tensor) -> Tensor {
    let total = x.data().iter().sum();
    Tensor::from_op(Shape::scalar(), vec![total], &[x], SumBackward)
}

struct WeightedSumBackward {
    weights: Vec<f64>,
}

impl GradFn for WeightedSumBackward {
    fn backward(&self, _: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(self.weights.iter().map(|w| w * grad_out[0]).collect())]
    }
}

/// `sum(x * weights)` with constant weights of the same length as `x`.
/// A one-hot weight vector selects a single unit.
pub fn weighted_sum(x: &Tensor, weights: &[f64]) -> Result<Tensor> {
    if weights.len() != x.numel() {
        return Err(Error::shape(
            "weighted_sum",
            format!("{} weights for a tensor of {} elements", weights.len(), x.numel()),
        ));
    }
    let total = x.data().iter().zip(weights).map(|(a, b)| a * b).sum();
    Ok(Tensor::from_op(
        Shape::scalar(),
        vec![total],
        &[x],
        WeightedSumBackward { weights: weights.to_vec() },
    ))
}
