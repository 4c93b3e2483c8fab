use super::{GradFn, Shape, Tensor};
use crate::error::{Error, Result};

struct MaxPoolBackward {
    // Flat input index of each output's winner.
    argmax: Vec<usize>,
}

impl GradFn for MaxPoolBackward {
    fn backward(&self, inputs: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut g = vec![0.0; inputs[0].numel()];
        for (&src, &go) in self.argmax.iter().zip(grad_out) {
            g[src] += go;
        }
        vec![Some(g)]
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first element in
/// row-major order within the window.
pub fn maxpool2d(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(
            "maxpool2d",
            format!("height and width must be even, got {}x{}", s.h, s.w),
        ));
    }
    let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let d = x.data();
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let top = base + 2 * oy * s.w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + s.w, top + s.w + 1] {
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Tensor::from_op(out_shape, out, &[x], MaxPoolBackward { argmax }))
}
