//! Batch normalization with running statistics.
//!
//! Statistics are per-channel over (batch, height, width). Variance is the
//! population form (divide by the count, not count-1) both for the batch
//! moments and the running buffers.

use std::collections::HashMap;

use super::{accumulate, Mode, Op, Shape, Tensor, TensorError};

pub(super) const EPS: f64 = 1e-5;
pub(super) const MOMENTUM: f64 = 0.1;

fn check_param(
    name: &'static str,
    t: &Tensor,
    channels: usize,
) -> Result<(), TensorError> {
    if t.shape() != Shape::new(1, channels, 1, 1) {
        return Err(TensorError::ShapeMismatch {
            op: "batchnorm2d",
            detail: format!(
                "{} has shape {} but input has {} channels",
                name,
                t.shape(),
                channels
            ),
        });
    }
    Ok(())
}

pub(super) fn batchnorm2d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: Mode,
) -> Result<Tensor, TensorError> {
    let s = input.shape();
    check_param("gamma", gamma, s.c)?;
    check_param("beta", beta, s.c)?;
    check_param("running_mean", running_mean, s.c)?;
    check_param("running_var", running_var, s.c)?;
    let count = s.n * s.h * s.w;

    let (mean, var, batch_stats) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(TensorError::SingleElementChannel { count });
            }
            let mut mean = vec![0.0; s.c];
            let mut var = vec![0.0; s.c];
            input.with_data(|xs| {
                let plane = s.h * s.w;
                for c in 0..s.c {
                    let mut sum = 0.0;
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        sum += xs[base..base + plane].iter().sum::<f64>();
                    }
                    let mu = sum / count as f64;
                    let mut sq = 0.0;
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        for &v in &xs[base..base + plane] {
                            let d = v - mu;
                            sq += d * d;
                        }
                    }
                    mean[c] = mu;
                    var[c] = sq / count as f64;
                }
            });
            // fold the batch moments into the running buffers
            running_mean.update_data(|r| {
                for c in 0..s.c {
                    r[c] = (1.0 - MOMENTUM) * r[c] + MOMENTUM * mean[c];
                }
            });
            running_var.update_data(|r| {
                for c in 0..s.c {
                    r[c] = (1.0 - MOMENTUM) * r[c] + MOMENTUM * var[c];
                }
            });
            (mean, var, true)
        }
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), false),
    };

    let mut out = vec![0.0; s.len()];
    input.with_data(|xs| {
        gamma.with_data(|gs| {
            beta.with_data(|bs| {
                let plane = s.h * s.w;
                for n in 0..s.n {
                    for c in 0..s.c {
                        let base = (n * s.c + c) * plane;
                        let inv = 1.0 / (var[c] + EPS).sqrt();
                        let (g, b, mu) = (gs[c], bs[c], mean[c]);
                        for i in base..base + plane {
                            out[i] = g * (xs[i] - mu) * inv + b;
                        }
                    }
                }
            });
        });
    });

    Ok(Tensor::from_op(
        s,
        out,
        Op::BatchNorm {
            input: input.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            mean,
            var,
            batch_stats,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub(super) fn batchnorm2d_backward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
    batch_stats: bool,
    grad: &[f64],
    flow: &mut HashMap<usize, Vec<f64>>,
) {
    let s = input.shape();
    let plane = s.h * s.w;
    let count = (s.n * plane) as f64;

    // Per-channel reductions shared by all three gradients.
    let mut sum_dy = vec![0.0; s.c];
    let mut sum_dy_xhat = vec![0.0; s.c];
    input.with_data(|xs| {
        for c in 0..s.c {
            let inv = 1.0 / (var[c] + EPS).sqrt();
            let mut a = 0.0;
            let mut b = 0.0;
            for n in 0..s.n {
                let base = (n * s.c + c) * plane;
                for i in base..base + plane {
                    let dy = grad[i];
                    a += dy;
                    b += dy * (xs[i] - mean[c]) * inv;
                }
            }
            sum_dy[c] = a;
            sum_dy_xhat[c] = b;
        }
    });

    accumulate(flow, beta, |buf| {
        for c in 0..s.c {
            buf[c] += sum_dy[c];
        }
    });
    accumulate(flow, gamma, |buf| {
        for c in 0..s.c {
            buf[c] += sum_dy_xhat[c];
        }
    });

    input.with_data(|xs| {
        gamma.with_data(|gs| {
            accumulate(flow, input, |buf| {
                for c in 0..s.c {
                    let inv = 1.0 / (var[c] + EPS).sqrt();
                    let g_inv = gs[c] * inv;
                    if batch_stats {
                        // batch moments depend on x, so corrections apply
                        let mean_dy = sum_dy[c] / count;
                        let mean_dy_xhat = sum_dy_xhat[c] / count;
                        for n in 0..s.n {
                            let base = (n * s.c + c) * plane;
                            for i in base..base + plane {
                                let xhat = (xs[i] - mean[c]) * inv;
                                buf[i] +=
                                    g_inv * (grad[i] - mean_dy - xhat * mean_dy_xhat);
                            }
                        }
                    } else {
                        // eval mode treats the moments as constants
                        for n in 0..s.n {
                            let base = (n * s.c + c) * plane;
                            for i in base..base + plane {
                                buf[i] += g_inv * grad[i];
                            }
                        }
                    }
                }
            });
        });
    });
}
