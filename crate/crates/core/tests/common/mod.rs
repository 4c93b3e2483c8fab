//! Reference loops and gradient checks shared by the test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscnet::arch::{ArchitectureSpec, LayerGraph, VariantKind};
use tscnet::tensor::*;
use tscnet::tsc::{coord_inject, translate, tsc_block, Direction, Fraction, TscBlockConfig};
use tscnet::{Result, Shape, Tensor};

pub fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_vec(shape, weights(rng, shape.numel())).unwrap()
}

pub fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug)]
pub struct Case {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub spec: ConvSpec,
}

/// Cases cycle through strides {1, 2} and dilations {1, 2, 3}, with random
/// sizes and padding.
pub fn cases(count: usize, seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let stride = 1 + i % 2;
            let dilation = 1 + (i / 2) % 3;
            let k = rng.gen_range(1..=3);
            let spec = ConvSpec::new(stride, dilation, rng.gen_range(0..=dilation * (k - 1)));
            Case {
                n: rng.gen_range(1..=2),
                cin: rng.gen_range(1..=4),
                cout: rng.gen_range(1..=4),
                h: rng.gen_range(dilation * (k - 1) + 1..=11),
                w: rng.gen_range(dilation * (k - 1) + 1..=11),
                k,
                spec,
            }
        })
        .collect()
}

/// Input index read by output `o` through tap `t`, if inside the input.
fn tap(o: usize, t: usize, sp: ConvSpec, len: usize) -> Option<usize> {
    let i = (o * sp.stride + t * sp.dilation) as isize - sp.padding as isize;
    (i >= 0 && (i as usize) < len).then_some(i as usize)
}

/// Direct convolution; `wt` is (Cout, Cin, k, k).
pub fn naive_conv(x: &Tensor, wt: &Tensor, b: &[f64], sp: ConvSpec) -> (Shape, Vec<f64>) {
    let (xs, ws) = (x.shape(), wt.shape());
    let os = Shape::new(xs.n, ws.n, sp.output_len(xs.h, ws.h).unwrap(), sp.output_len(xs.w, ws.w).unwrap());
    let mut out = vec![0.0; os.numel()];
    for n in 0..xs.n {
        for o in 0..ws.n {
            for y in 0..os.h {
                for xo in 0..os.w {
                    let mut acc = b[o];
                    for c in 0..xs.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                if let (Some(iy), Some(ix)) = (tap(y, ky, sp, xs.h), tap(xo, kx, sp, xs.w)) {
                                    acc += x.at(n, c, iy, ix) * wt.at(o, c, ky, kx);
                                }
                            }
                        }
                    }
                    out[os.index(n, o, y, xo)] = acc;
                }
            }
        }
    }
    (os, out)
}

/// Gradients of `sum(r * conv(x, wt))` with respect to `x` and `wt`, by the same loops.
pub fn naive_conv_grads(x: &Tensor, wt: &Tensor, r: &Tensor, sp: ConvSpec) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws, rs) = (x.shape(), wt.shape(), r.shape());
    let mut gx = vec![0.0; xs.numel()];
    let mut gw = vec![0.0; ws.numel()];
    for n in 0..xs.n {
        for o in 0..ws.n {
            for y in 0..rs.h {
                for xo in 0..rs.w {
                    let g = r.at(n, o, y, xo);
                    for c in 0..xs.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                if let (Some(iy), Some(ix)) = (tap(y, ky, sp, xs.h), tap(xo, kx, sp, xs.w)) {
                                    gx[xs.index(n, c, iy, ix)] += g * wt.at(o, c, ky, kx);
                                    gw[ws.index(o, c, ky, kx)] += g * x.at(n, c, iy, ix);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw)
}

/// Scatter form of the transposed convolution; `wt` is (Cin, Cout, k, k).
pub fn naive_conv_transposed(x: &Tensor, wt: &Tensor, b: &[f64], sp: ConvSpec) -> (Shape, Vec<f64>) {
    let (xs, ws) = (x.shape(), wt.shape());
    let os = Shape::new(
        xs.n,
        ws.c,
        sp.transposed_output_len(xs.h, ws.h).unwrap(),
        sp.transposed_output_len(xs.w, ws.w).unwrap(),
    );
    let mut out = vec![0.0; os.numel()];
    for n in 0..xs.n {
        for o in 0..ws.c {
            out[os.index(n, o, 0, 0)..][..os.plane()].fill(b[o]);
        }
        for c in 0..xs.c {
            for y in 0..xs.h {
                for xi in 0..xs.w {
                    for o in 0..ws.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                if let (Some(oy), Some(ox)) = (tap(y, ky, sp, os.h), tap(xi, kx, sp, os.w)) {
                                    out[os.index(n, o, oy, ox)] += x.at(n, c, y, xi) * wt.at(c, o, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (os, out)
}

/// Gradients of `sum(r * f(x, w))` from the library's backward pass.
pub fn library_grads<F>(f: F, x: &Tensor, w: &Tensor, r: &[f64]) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&Tensor, &Tensor) -> Tensor,
{
    let (x, w) = (x.detached(true), w.detached(true));
    weighted_sum(&f(&x, &w), r).unwrap().backward().unwrap();
    (x.grad().unwrap(), w.grad().unwrap())
}

/// Largest deviation of `conv2d` (forward, input and weight gradients) from the loops.
pub fn conv_case_error(c: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let x = random(rng, Shape::new(c.n, c.cin, c.h, c.w));
    let w = random(rng, Shape::new(c.cout, c.cin, c.k, c.k));
    let b = random(rng, Shape::new(1, c.cout, 1, 1));
    let y = conv2d(&x, &w, Some(&b), c.spec).unwrap();
    let (os, want) = naive_conv(&x, &w, b.data(), c.spec);
    assert_eq!(y.shape(), os, "{c:?}");
    let r = random(rng, os);
    let (gx, gw) = library_grads(|x, w| conv2d(x, w, None, c.spec).unwrap(), &x, &w, r.data());
    let (wx, ww) = naive_conv_grads(&x, &w, &r, c.spec);
    max_abs_diff(y.data(), &want).max(max_abs_diff(&gx, &wx)).max(max_abs_diff(&gw, &ww))
}

/// Largest deviation of `conv2d_transposed` from the scatter loops, and of
/// its input gradient from the forward convolution it is the adjoint of.
pub fn conv_transposed_case_error(c: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let x = random(rng, Shape::new(c.n, c.cin, c.h, c.w));
    let w = random(rng, Shape::new(c.cin, c.cout, c.k, c.k));
    let b = random(rng, Shape::new(1, c.cout, 1, 1));
    let y = conv2d_transposed(&x, &w, Some(&b), c.spec).unwrap();
    let (os, want) = naive_conv_transposed(&x, &w, b.data(), c.spec);
    assert_eq!(y.shape(), os, "{c:?}");
    let r = random(rng, os);
    let (gx, _) = library_grads(|x, w| conv2d_transposed(x, w, None, c.spec).unwrap(), &x, &w, r.data());
    let (adj_shape, adj) = naive_conv(&r, &w, &vec![0.0; c.cin], c.spec);
    assert_eq!(adj_shape, x.shape(), "{c:?}");
    max_abs_diff(y.data(), &want).max(max_abs_diff(&gx, &adj))
}

/// Largest deviation of `maxpool2d` and its gradient from the loops, on
/// quantized inputs where ties are common.
pub fn maxpool_case_error(rng: &mut ChaCha8Rng) -> f64 {
    let s = Shape::new(rng.gen_range(1..=2), rng.gen_range(1..=3), 2 * rng.gen_range(1..=6), 2 * rng.gen_range(1..=6));
    let x = Tensor::from_vec(s, (0..s.numel()).map(|_| rng.gen_range(0..4) as f64).collect()).unwrap();
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let r = weights(rng, os.numel());
    let mut want = vec![0.0; os.numel()];
    let mut want_g = vec![0.0; s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    // First maximum in row-major window order.
                    let mut best = (f64::NEG_INFINITY, 0);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x.at(n, c, 2 * oy + dy, 2 * ox + dx);
                            if v > best.0 {
                                best = (v, s.index(n, c, 2 * oy + dy, 2 * ox + dx));
                            }
                        }
                    }
                    want[os.index(n, c, oy, ox)] = best.0;
                    want_g[best.1] += r[os.index(n, c, oy, ox)];
                }
            }
        }
    }
    let leaf = x.detached(true);
    let y = maxpool2d(&leaf).unwrap();
    assert_eq!(y.shape(), os);
    weighted_sum(&y, &r).unwrap().backward().unwrap();
    max_abs_diff(y.data(), &want).max(max_abs_diff(&leaf.grad().unwrap(), &want_g))
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

fn fd<F: Fn(&Tensor) -> Result<Tensor>>(out: &mut Vec<(String, f64)>, what: String, f: F, x: &Tensor) {
    out.push((what, finite_difference_check(f, x, FD_STEP).unwrap()));
}

/// Relative finite-difference error of every differentiable primitive.
pub fn primitive_fd_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, dilation, padding, k) in [(1, 1, 1, 3), (2, 1, 1, 3), (1, 2, 2, 3), (1, 3, 3, 3), (2, 2, 1, 3), (2, 1, 0, 2), (1, 1, 0, 1)] {
        let sp = ConvSpec::new(stride, dilation, padding);
        let x = random(&mut rng, Shape::new(2, 2, 8, 8));
        let w = random(&mut rng, Shape::new(3, 2, k, k));
        let b = random(&mut rng, Shape::new(1, 3, 1, 1));
        let r = weights(&mut rng, conv2d(&x, &w, None, sp).unwrap().numel());
        fd(&mut out, format!("conv2d {sp:?} input"), |t| weighted_sum(&conv2d(t, &w, Some(&b), sp)?, &r), &x);
        fd(&mut out, format!("conv2d {sp:?} weight"), |t| weighted_sum(&conv2d(&x, t, Some(&b), sp)?, &r), &w);
        fd(&mut out, format!("conv2d {sp:?} bias"), |t| weighted_sum(&conv2d(&x, &w, Some(t), sp)?, &r), &b);

        let wt = random(&mut rng, Shape::new(2, 3, k, k));
        let r = weights(&mut rng, conv2d_transposed(&x, &wt, None, sp).unwrap().numel());
        let tag = format!("conv2d_transposed {sp:?}");
        fd(&mut out, format!("{tag} input"), |t| weighted_sum(&conv2d_transposed(t, &wt, Some(&b), sp)?, &r), &x);
        fd(&mut out, format!("{tag} weight"), |t| weighted_sum(&conv2d_transposed(&x, t, Some(&b), sp)?, &r), &wt);
        fd(&mut out, format!("{tag} bias"), |t| weighted_sum(&conv2d_transposed(&x, &wt, Some(t), sp)?, &r), &b);
    }

    let s = Shape::new(2, 3, 8, 8);
    let (x, y) = (random(&mut rng, s), random(&mut rng, s));
    let r = weights(&mut rng, s.numel());
    fd(&mut out, "relu".into(), |t| weighted_sum(&relu(t), &r), &x);
    fd(&mut out, "add lhs".into(), |t| weighted_sum(&add(t, &y)?, &r), &x);
    fd(&mut out, "add rhs".into(), |t| weighted_sum(&add(&y, t)?, &r), &x);
    fd(&mut out, "scale".into(), |t| weighted_sum(&scale(t, -0.7), &r), &x);
    fd(&mut out, "sum".into(), |t| Ok(sum(t)), &x);
    fd(&mut out, "weighted_sum".into(), |t| weighted_sum(t, &r), &x);
    let r3 = weights(&mut rng, 3 * s.numel());
    fd(&mut out, "concat".into(), |t| weighted_sum(&concat_channels(&[&y, t, t])?, &r3), &x);
    let rp = weights(&mut rng, s.numel() / 4);
    fd(&mut out, "maxpool2d".into(), |t| weighted_sum(&maxpool2d(t)?, &rp), &x);
    let targets: Vec<usize> = (0..2 * 64).map(|_| rng.gen_range(0..3)).collect();
    fd(&mut out, "softmax_cross_entropy".into(), |t| softmax_cross_entropy(t, &targets), &x);

    let s = Shape::new(1, 2, 8, 8);
    let (x, f) = (random(&mut rng, s), random(&mut rng, s));
    let r = weights(&mut rng, s.numel());
    for d in Direction::ALL {
        for (num, den) in [(1, 4), (1, 3), (2, 3), (1, 2)] {
            let q = Fraction::new(num, den).unwrap();
            fd(&mut out, format!("translate {d:?} {q}"), |t| weighted_sum(&translate(t, d, q), &r), &x);
        }
    }
    let r4 = weights(&mut rng, 4 * s.numel());
    for level in 1..=3 {
        let cfg = TscBlockConfig::new(2, level, 3).unwrap();
        fd(&mut out, format!("tsc_block level {level} skip"), |t| weighted_sum(&tsc_block(&f, t, &cfg)?, &r4), &x);
        fd(&mut out, format!("tsc_block level {level} decoder"), |t| weighted_sum(&tsc_block(t, &x, &cfg)?, &r4), &f);
    }
    let img = random(&mut rng, Shape::new(1, 3, 8, 8));
    let rc = weights(&mut rng, 5 * 64);
    fd(&mut out, "coord_inject".into(), |t| weighted_sum(&coord_inject(t)?, &rc), &img);
    out
}

/// Width-2 network of the given variant.
pub fn tiny(variant: VariantKind, depth: usize, ote: bool) -> ArchitectureSpec {
    ArchitectureSpec::new(variant, depth, 2, 3).with_widths(vec![2; depth + 1]).with_ote(ote)
}

/// Relative finite-difference error of the loss gradient with respect to an
/// 8x8 input and to every parameter tensor.
pub fn network_fd_errors(spec: &ArchitectureSpec, seed: u64) -> Vec<(String, f64)> {
    let mut graph = LayerGraph::build(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Zero-initialized biases leave pre-activations exactly on the ReLU kink
    // wherever a whole receptive field is dead; random biases avoid that.
    for p in graph.params_mut().iter_mut().filter(|p| p.name.ends_with("bias")) {
        p.data.iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
    }
    let x = random(&mut rng, Shape::new(1, 3, 8, 8));
    let targets: Vec<usize> = (0..64).map(|_| rng.gen_range(0..3)).collect();
    let params = graph.param_tensors(false);
    let tag = format!("{} depth {} ote {}", spec.variant, spec.depth, spec.ote);
    let mut out = Vec::new();
    fd(&mut out, format!("{tag} input"), |t| softmax_cross_entropy(&graph.forward_with(t, &params)?, &targets), &x);
    for (i, p) in params.iter().enumerate() {
        let loss = |t: &Tensor| {
            let mut ps = params.clone();
            ps[i] = t.clone();
            softmax_cross_entropy(&graph.forward_with(&x, &ps)?, &targets)
        };
        fd(&mut out, format!("{tag} {}", graph.params()[i].name), loss, p);
    }
    out
}

/// Every variant at depths 2 and 3, with and without coordinates.
pub fn all_network_fd_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for variant in VariantKind::ALL {
        for depth in [2, 3] {
            for ote in [false, true] {
                out.extend(network_fd_errors(&tiny(variant, depth, ote), 10 + depth as u64));
            }
        }
    }
    out
}
