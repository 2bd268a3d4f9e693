//! Shared helpers for the integration suites: brute-force reference
//! implementations of the structured ops, written as plain index loops
//! over flat buffers so they share nothing with the library's kernels,
//! plus a central-finite-difference gradient checker.

#![allow(dead_code)]

use websal::rng::SplitMix64;
use websal::{Shape, Tensor};

/// Output spatial size of a strided, padded, dilated convolution;
/// 0 when the dilated kernel does not fit at all.
pub fn conv_out(dim: usize, k: usize, stride: usize, pad: usize, dil: usize) -> usize {
    let span = dim as i64 + 2 * pad as i64 - (dil * (k - 1)) as i64 - 1;
    if span < 0 {
        0
    } else {
        span as usize / stride + 1
    }
}

/// Dense convolution by definition: six nested loops, nothing shared
/// with the library kernel.
pub fn conv2d_oracle(
    x: &[f64],
    (n, ci, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
    dil: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = conv_out(h, kh, stride, pad, dil);
    let ow = conv_out(w, kw, stride, pad, dil);
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for oc in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dil) as i64 - pad as i64;
                                let ix = (ox * stride + kx * dil) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let xi = ((b * ci + ic) * h + iy as usize) * w + ix as usize;
                                let wi = ((oc * ci + ic) * kh + ky) * kw + kx;
                                acc += x[xi] * wgt[wi];
                            }
                        }
                    }
                    out[((b * co + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Transposed convolution by scatter: every input cell throws its value
/// through the kernel onto the output grid.
pub fn conv_transpose2d_oracle(
    x: &[f64],
    (n, ci, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (w - 1) * stride + kw - 2 * pad;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for oc in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[((b * co + oc) * oh + oy) * ow + ox] = bias[oc];
                }
            }
        }
        for ic in 0..ci {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x[((b * ci + ic) * h + iy) * w + ix];
                    for oc in 0..co {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (iy * stride + ky) as i64 - pad as i64;
                                let ox = (ix * stride + kx) as i64 - pad as i64;
                                if oy < 0 || ox < 0 || oy >= oh as i64 || ox >= ow as i64 {
                                    continue;
                                }
                                let oi = ((b * co + oc) * oh + oy as usize) * ow + ox as usize;
                                let wi = ((ic * co + oc) * kh + ky) * kw + kx;
                                out[oi] += v * wgt[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// Max pooling by definition; strict `>` so ties keep the first
/// (row-major) position, matching the library's documented rule.
pub fn maxpool2d_oracle(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: usize,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = vec![0.0; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let v = x[((b * c + ch) * h + oy * stride + ky) * w + ox * stride + kx];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[((b * c + ch) * oh + oy) * ow + ox] = best;
                }
            }
        }
    }
    (out, oh, ow)
}

/// A tensor of standard normal draws.
pub fn randn(shape: impl Into<Shape>, rng: &mut SplitMix64) -> Tensor {
    let shape = shape.into();
    let data: Vec<f64> = (0..shape.len()).map(|_| rng.next_normal()).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Normal draws pushed away from zero (|v| >= margin), for kinked ops.
pub fn randn_away_from_zero(shape: impl Into<Shape>, margin: f64, rng: &mut SplitMix64) -> Tensor {
    let shape = shape.into();
    let data: Vec<f64> = (0..shape.len())
        .map(|_| {
            let v = rng.next_normal();
            v + margin * v.signum()
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Relative error with a floor: near-zero gradients are judged on an
/// absolute scale instead of blowing the ratio up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-3, a.abs().max(b.abs()))
}

/// Central-finite-difference check of `d loss / d inputs[target]`.
///
/// `loss_of` must rebuild the computation from scratch on every call
/// (fresh batchnorm running stats and the like), return a scalar, and
/// treat its arguments as constants. The check probes `n_probes` random
/// coordinates of the target input and returns the worst relative error
/// between the analytic gradient and the two-sided difference quotient.
pub fn gradcheck(
    loss_of: &dyn Fn(&[Tensor]) -> Tensor,
    inputs: &[Tensor],
    target: usize,
    n_probes: usize,
    rng: &mut SplitMix64,
) -> f64 {
    let eps = 1e-5;

    // analytic pass: the target becomes a trainable leaf
    let leaves: Vec<Tensor> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let t = Tensor::from_vec(t.shape(), t.to_vec()).unwrap();
            if i == target {
                t.trainable()
            } else {
                t
            }
        })
        .collect();
    let loss = loss_of(&leaves);
    loss.backward().expect("scalar loss backward");
    let analytic = leaves[target].grad().expect("target gradient");

    let base = inputs[target].to_vec();
    let mut worst = 0.0f64;
    for _ in 0..n_probes {
        let coord = rng.next_below(base.len());
        let probe = |delta: f64| -> f64 {
            let shifted: Vec<Tensor> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut data = t.to_vec();
                    if i == target {
                        data[coord] += delta;
                    }
                    Tensor::from_vec(t.shape(), data).unwrap()
                })
                .collect();
            loss_of(&shifted).item()
        };
        let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[coord], numeric));
    }
    worst
}
