use super::{GradFn, Shape, Tensor};
use crate::error::{Error, Result};

struct CrossEntropyBackward {
    // (softmax - onehot) / count, laid out like the logits.
    grad: Vec<f64>,
}

impl GradFn for CrossEntropyBackward {
    fn backward(&self, _: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(self.grad.iter().map(|g| g * grad_out[0]).collect())]
    }
}

/// Mean over batch and pixels of `-log softmax(logits)[target]`.
///
/// `targets` holds one class index per (n, y, x), row-major, so its length
/// is `N * H * W`; the channel count of `logits` is the number of classes.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let s = logits.shape();
    let pixels = s.n * s.plane();
    if targets.len() != pixels {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} targets for logits of shape {s}", targets.len()),
        ));
    }
    if let Some(bad) = targets.iter().find(|&&t| t >= s.c) {
        return Err(Error::invalid(format!(
            "class index {bad} out of range for {} classes",
            s.c
        )));
    }
    let data = logits.data();
    let plane = s.plane();
    let inv = 1.0 / pixels as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; data.len()];
    let mut probs = vec![0.0; s.c];
    for n in 0..s.n {
        for p in 0..plane {
            let at = |c: usize| (n * s.c + c) * plane + p;
            let max = (0..s.c).map(|c| data[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (data[at(c)] - max).exp();
                z += *pr;
            }
            let target = targets[n * plane + p];
            loss += z.ln() - (data[at(target)] - max);
            for (c, pr) in probs.iter().enumerate() {
                let onehot = if c == target { 1.0 } else { 0.0 };
                grad[at(c)] = (pr / z - onehot) * inv;
            }
        }
    }
    Ok(Tensor::from_op(
        Shape::scalar(),
        vec![loss * inv],
        &[logits],
        CrossEntropyBackward { grad },
    ))
}

/// Mean cross-entropy of each sample separately. Each value depends only on
/// that sample's logits, never on the rest of the batch. Records nothing.
pub fn cross_entropy_per_sample(logits: &Tensor, targets: &[usize]) -> Result<Vec<f64>> {
    let s = logits.shape();
    let plane = s.plane();
    (0..s.n)
        .map(|n| {
            let one = Tensor::from_vec(
                Shape::new(1, s.c, s.h, s.w),
                logits.data()[n * s.c * plane..][..s.c * plane].to_vec(),
            )?;
            let t = targets.get(n * plane..(n + 1) * plane).ok_or_else(|| {
                Error::shape("cross_entropy_per_sample", format!("{} targets for logits of shape {s}", targets.len()))
            })?;
            softmax_cross_entropy(&one, t)?.item()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 3, 7] {
            let logits = Tensor::full([2, k, 3, 3], 0.4);
            let loss = softmax_cross_entropy(&logits, &[1; 18]).unwrap();
            assert!((loss.item().unwrap() - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_logits_give_zero_loss() {
        let mut d = vec![0.0; 3];
        d[2] = 100.0;
        let logits = Tensor::from_vec([1, 3, 1, 1], d).unwrap();
        let loss = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.item().unwrap().abs() < 1e-6);
    }

    #[test]
    fn matches_direct_summation() {
        // 1x2x2x2, oracle computed term by term without max-shifting.
        let d = vec![0.3, -1.2, 0.8, 2.0, -0.5, 0.1, 0.9, -0.7];
        let targets = [0, 1, 1, 0];
        let logits = Tensor::from_vec([1, 2, 2, 2], d.clone()).unwrap();
        let loss = softmax_cross_entropy(&logits, &targets).unwrap().item().unwrap();
        let mut oracle = 0.0;
        for p in 0..4 {
            let (a, b) = (d[p], d[4 + p]);
            let chosen = if targets[p] == 0 { a } else { b };
            oracle += -(chosen.exp() / (a.exp() + b.exp())).ln();
        }
        assert!((loss - oracle / 4.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_class() {
        let logits = Tensor::zeros([1, 2, 1, 1]);
        assert!(softmax_cross_entropy(&logits, &[2]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0, 0]).is_err());
    }

    #[test]
    fn per_sample_losses_average_to_batch_loss() {
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| ((i * 7) % 5) as f64 * 0.3).collect();
        let logits = Tensor::from_vec([2, 3, 2, 2], data).unwrap();
        let targets = [0, 1, 2, 1, 2, 2, 0, 0];
        let per = cross_entropy_per_sample(&logits, &targets).unwrap();
        let batch = softmax_cross_entropy(&logits, &targets).unwrap().item().unwrap();
        assert!(((per[0] + per[1]) / 2.0 - batch).abs() < 1e-14);
        assert!(cross_entropy_per_sample(&logits, &targets[..5]).is_err());
    }
}
