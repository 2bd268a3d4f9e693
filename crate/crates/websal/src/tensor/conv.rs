//! Convolution, transposed convolution and max pooling.
//!
//! Kernels are plain single-threaded loops arranged so the innermost pass
//! runs along contiguous rows (a scaled row add or a row dot product),
//! which the compiler vectorizes. Accumulation order is fixed, so results
//! are bit-identical run to run.

use std::collections::HashMap;

use super::{accumulate, Op, Shape, Tensor, TensorError};

/// Output extent for a strided window op; negative means degenerate.
fn out_extent(input: usize, window: i64, stride: usize, padding: usize) -> i64 {
    let num = input as i64 + 2 * padding as i64 - window;
    if num < 0 {
        -1
    } else {
        num / stride as i64 + 1
    }
}

fn check_ge1(op: &'static str, arg: &'static str, value: usize) -> Result<(), TensorError> {
    if value == 0 {
        return Err(TensorError::BadArg {
            op,
            arg,
            value: 0,
        });
    }
    Ok(())
}

/// Inclusive output-index range `[lo, hi]` such that `o*stride + off` stays
/// inside `[0, limit)`; empty ranges come back as `None`.
fn valid_range(off: i64, stride: usize, limit: usize, out_len: usize) -> Option<(usize, usize)> {
    let s = stride as i64;
    let lo = (-off).div_euclid(s) + if (-off).rem_euclid(s) != 0 { 1 } else { 0 };
    let hi = (limit as i64 - 1 - off).div_euclid(s);
    let lo = lo.max(0);
    let hi = hi.min(out_len as i64 - 1);
    if lo > hi {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

pub(super) fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<Tensor, TensorError> {
    check_ge1("conv2d", "stride", stride)?;
    check_ge1("conv2d", "dilation", dilation)?;
    let x = input.shape();
    let w = weight.shape(); // (outC, inC, kH, kW)
    if w.c != x.c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "input has {} channels but weight {} expects {}",
                x.c, w, w.c
            ),
        });
    }
    if bias.shape() != Shape::new(1, w.n, 1, 1) {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "bias {} should be (1,{},1,1) to match weight {}",
                bias.shape(),
                w.n,
                w
            ),
        });
    }
    let eff_h = dilation as i64 * (w.h as i64 - 1) + 1;
    let eff_w = dilation as i64 * (w.w as i64 - 1) + 1;
    let oh = out_extent(x.h, eff_h, stride, padding);
    if oh < 1 {
        return Err(TensorError::DegenerateOutput {
            op: "conv2d",
            dim: "height",
            size: oh,
        });
    }
    let ow = out_extent(x.w, eff_w, stride, padding);
    if ow < 1 {
        return Err(TensorError::DegenerateOutput {
            op: "conv2d",
            dim: "width",
            size: ow,
        });
    }
    let (oh, ow) = (oh as usize, ow as usize);
    let out_shape = Shape::new(x.n, w.n, oh, ow);
    let mut out = vec![0.0; out_shape.len()];

    input.with_data(|xs| {
        weight.with_data(|ws| {
            bias.with_data(|bs| {
                for n in 0..x.n {
                    for oc in 0..w.n {
                        let o_base = (n * w.n + oc) * oh * ow;
                        out[o_base..o_base + oh * ow].fill(bs[oc]);
                        for ic in 0..x.c {
                            let x_base = (n * x.c + ic) * x.h * x.w;
                            for kh in 0..w.h {
                                let off_h = (kh * dilation) as i64 - padding as i64;
                                for kw in 0..w.w {
                                    let off_w = (kw * dilation) as i64 - padding as i64;
                                    let wv = ws[((oc * w.c + ic) * w.h + kh) * w.w + kw];
                                    if wv == 0.0 {
                                        continue;
                                    }
                                    let Some((w_lo, w_hi)) = valid_range(off_w, stride, x.w, ow)
                                    else {
                                        continue;
                                    };
                                    for oy in 0..oh {
                                        let iy = oy as i64 * stride as i64 + off_h;
                                        if iy < 0 || iy >= x.h as i64 {
                                            continue;
                                        }
                                        let in_row = x_base + iy as usize * x.w;
                                        let out_row = o_base + oy * ow;
                                        if stride == 1 {
                                            let src = &xs[(in_row as i64 + w_lo as i64 + off_w)
                                                as usize
                                                ..(in_row as i64 + w_hi as i64 + off_w) as usize
                                                    + 1];
                                            let dst = &mut out[out_row + w_lo..=out_row + w_hi];
                                            for (d, s) in dst.iter_mut().zip(src) {
                                                *d += wv * s;
                                            }
                                        } else {
                                            for ox in w_lo..=w_hi {
                                                let ix = (ox * stride) as i64 + off_w;
                                                out[out_row + ox] +=
                                                    wv * xs[in_row + ix as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        });
    });

    Ok(Tensor::from_op(
        out_shape,
        out,
        Op::Conv2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            stride,
            padding,
            dilation,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward(
    node: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    dilation: usize,
    grad: &[f64],
    flow: &mut HashMap<usize, Vec<f64>>,
) {
    let x = input.shape();
    let w = weight.shape();
    let o = node.shape();
    let (oh, ow) = (o.h, o.w);

    // d/d bias: sum of the output gradient over batch and space.
    accumulate(flow, bias, |buf| {
        for n in 0..o.n {
            for oc in 0..o.c {
                let base = (n * o.c + oc) * oh * ow;
                buf[oc] += grad[base..base + oh * ow].iter().sum::<f64>();
            }
        }
    });

    // d/d weight: correlate input against the output gradient.
    input.with_data(|xs| {
        accumulate(flow, weight, |buf| {
            for n in 0..x.n {
                for oc in 0..w.n {
                    let o_base = (n * w.n + oc) * oh * ow;
                    for ic in 0..x.c {
                        let x_base = (n * x.c + ic) * x.h * x.w;
                        for kh in 0..w.h {
                            let off_h = (kh * dilation) as i64 - padding as i64;
                            for kw in 0..w.w {
                                let off_w = (kw * dilation) as i64 - padding as i64;
                                let Some((w_lo, w_hi)) = valid_range(off_w, stride, x.w, ow)
                                else {
                                    continue;
                                };
                                let mut acc = 0.0;
                                for oy in 0..oh {
                                    let iy = oy as i64 * stride as i64 + off_h;
                                    if iy < 0 || iy >= x.h as i64 {
                                        continue;
                                    }
                                    let in_row = x_base + iy as usize * x.w;
                                    let out_row = o_base + oy * ow;
                                    if stride == 1 {
                                        let src = &xs[(in_row as i64 + w_lo as i64 + off_w)
                                            as usize
                                            ..(in_row as i64 + w_hi as i64 + off_w) as usize + 1];
                                        let g = &grad[out_row + w_lo..=out_row + w_hi];
                                        for (a, b) in src.iter().zip(g) {
                                            acc += a * b;
                                        }
                                    } else {
                                        for ox in w_lo..=w_hi {
                                            let ix = (ox * stride) as i64 + off_w;
                                            acc += xs[in_row + ix as usize] * grad[out_row + ox];
                                        }
                                    }
                                }
                                buf[((oc * w.c + ic) * w.h + kh) * w.w + kw] += acc;
                            }
                        }
                    }
                }
            }
        });
    });

    // d/d input: scatter the output gradient back through the kernel.
    weight.with_data(|ws| {
        accumulate(flow, input, |buf| {
            for n in 0..x.n {
                for oc in 0..w.n {
                    let o_base = (n * w.n + oc) * oh * ow;
                    for ic in 0..x.c {
                        let x_base = (n * x.c + ic) * x.h * x.w;
                        for kh in 0..w.h {
                            let off_h = (kh * dilation) as i64 - padding as i64;
                            for kw in 0..w.w {
                                let off_w = (kw * dilation) as i64 - padding as i64;
                                let wv = ws[((oc * w.c + ic) * w.h + kh) * w.w + kw];
                                if wv == 0.0 {
                                    continue;
                                }
                                let Some((w_lo, w_hi)) = valid_range(off_w, stride, x.w, ow)
                                else {
                                    continue;
                                };
                                for oy in 0..oh {
                                    let iy = oy as i64 * stride as i64 + off_h;
                                    if iy < 0 || iy >= x.h as i64 {
                                        continue;
                                    }
                                    let in_row = x_base + iy as usize * x.w;
                                    let out_row = o_base + oy * ow;
                                    if stride == 1 {
                                        let dst_start =
                                            (in_row as i64 + w_lo as i64 + off_w) as usize;
                                        let dst = &mut buf
                                            [dst_start..dst_start + (w_hi - w_lo) + 1];
                                        let g = &grad[out_row + w_lo..=out_row + w_hi];
                                        for (d, s) in dst.iter_mut().zip(g) {
                                            *d += wv * s;
                                        }
                                    } else {
                                        for ox in w_lo..=w_hi {
                                            let ix = (ox * stride) as i64 + off_w;
                                            buf[in_row + ix as usize] +=
                                                wv * grad[out_row + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    });
}

pub(super) fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    check_ge1("conv_transpose2d", "stride", stride)?;
    let x = input.shape();
    let w = weight.shape(); // (inC, outC, kH, kW)
    if w.n != x.c {
        return Err(TensorError::ShapeMismatch {
            op: "conv_transpose2d",
            detail: format!(
                "input has {} channels but weight {} expects {}",
                x.c, w, w.n
            ),
        });
    }
    if bias.shape() != Shape::new(1, w.c, 1, 1) {
        return Err(TensorError::ShapeMismatch {
            op: "conv_transpose2d",
            detail: format!(
                "bias {} should be (1,{},1,1) to match weight {}",
                bias.shape(),
                w.c,
                w
            ),
        });
    }
    let oh = (x.h as i64 - 1) * stride as i64 - 2 * padding as i64 + w.h as i64;
    if oh < 1 {
        return Err(TensorError::DegenerateOutput {
            op: "conv_transpose2d",
            dim: "height",
            size: oh,
        });
    }
    let ow = (x.w as i64 - 1) * stride as i64 - 2 * padding as i64 + w.w as i64;
    if ow < 1 {
        return Err(TensorError::DegenerateOutput {
            op: "conv_transpose2d",
            dim: "width",
            size: ow,
        });
    }
    let (oh, ow) = (oh as usize, ow as usize);
    let out_shape = Shape::new(x.n, w.c, oh, ow);
    let mut out = vec![0.0; out_shape.len()];

    input.with_data(|xs| {
        weight.with_data(|ws| {
            bias.with_data(|bs| {
                for n in 0..x.n {
                    for oc in 0..w.c {
                        let o_base = (n * w.c + oc) * oh * ow;
                        out[o_base..o_base + oh * ow].fill(bs[oc]);
                        for ic in 0..x.c {
                            let x_base = (n * x.c + ic) * x.h * x.w;
                            for kh in 0..w.h {
                                let off_h = kh as i64 - padding as i64;
                                for kw in 0..w.w {
                                    let off_w = kw as i64 - padding as i64;
                                    let wv = ws[((ic * w.c + oc) * w.h + kh) * w.w + kw];
                                    if wv == 0.0 {
                                        continue;
                                    }
                                    // y = iy*stride + off_h must land in [0, oh)
                                    let Some((w_lo, w_hi)) = valid_range(off_w, stride, ow, x.w)
                                    else {
                                        continue;
                                    };
                                    for iy in 0..x.h {
                                        let yy = iy as i64 * stride as i64 + off_h;
                                        if yy < 0 || yy >= oh as i64 {
                                            continue;
                                        }
                                        let in_row = x_base + iy * x.w;
                                        let out_row = o_base + yy as usize * ow;
                                        for ix in w_lo..=w_hi {
                                            let xx = (ix * stride) as i64 + off_w;
                                            out[out_row + xx as usize] +=
                                                wv * xs[in_row + ix];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        });
    });

    Ok(Tensor::from_op(
        out_shape,
        out,
        Op::ConvTranspose2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            stride,
            padding,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv_transpose2d_backward(
    node: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    grad: &[f64],
    flow: &mut HashMap<usize, Vec<f64>>,
) {
    let x = input.shape();
    let w = weight.shape();
    let o = node.shape();
    let (oh, ow) = (o.h, o.w);

    accumulate(flow, bias, |buf| {
        for n in 0..o.n {
            for oc in 0..o.c {
                let base = (n * o.c + oc) * oh * ow;
                buf[oc] += grad[base..base + oh * ow].iter().sum::<f64>();
            }
        }
    });

    // d/d weight mirrors the forward scatter: every (input pixel, output
    // pixel) pair a tap touched contributes input * grad_out.
    input.with_data(|xs| {
        accumulate(flow, weight, |buf| {
            for n in 0..x.n {
                for oc in 0..w.c {
                    let o_base = (n * w.c + oc) * oh * ow;
                    for ic in 0..x.c {
                        let x_base = (n * x.c + ic) * x.h * x.w;
                        for kh in 0..w.h {
                            let off_h = kh as i64 - padding as i64;
                            for kw in 0..w.w {
                                let off_w = kw as i64 - padding as i64;
                                let Some((w_lo, w_hi)) = valid_range(off_w, stride, ow, x.w)
                                else {
                                    continue;
                                };
                                let mut acc = 0.0;
                                for iy in 0..x.h {
                                    let yy = iy as i64 * stride as i64 + off_h;
                                    if yy < 0 || yy >= oh as i64 {
                                        continue;
                                    }
                                    let in_row = x_base + iy * x.w;
                                    let out_row = o_base + yy as usize * ow;
                                    for ix in w_lo..=w_hi {
                                        let xx = (ix * stride) as i64 + off_w;
                                        acc += xs[in_row + ix] * grad[out_row + xx as usize];
                                    }
                                }
                                buf[((ic * w.c + oc) * w.h + kh) * w.w + kw] += acc;
                            }
                        }
                    }
                }
            }
        });
    });

    // d/d input: gather grad_out through the kernel (a plain correlation).
    weight.with_data(|ws| {
        accumulate(flow, input, |buf| {
            for n in 0..x.n {
                for oc in 0..w.c {
                    let o_base = (n * w.c + oc) * oh * ow;
                    for ic in 0..x.c {
                        let x_base = (n * x.c + ic) * x.h * x.w;
                        for kh in 0..w.h {
                            let off_h = kh as i64 - padding as i64;
                            for kw in 0..w.w {
                                let off_w = kw as i64 - padding as i64;
                                let wv = ws[((ic * w.c + oc) * w.h + kh) * w.w + kw];
                                if wv == 0.0 {
                                    continue;
                                }
                                let Some((w_lo, w_hi)) = valid_range(off_w, stride, ow, x.w)
                                else {
                                    continue;
                                };
                                for iy in 0..x.h {
                                    let yy = iy as i64 * stride as i64 + off_h;
                                    if yy < 0 || yy >= oh as i64 {
                                        continue;
                                    }
                                    let in_row = x_base + iy * x.w;
                                    let out_row = o_base + yy as usize * ow;
                                    for ix in w_lo..=w_hi {
                                        let xx = (ix * stride) as i64 + off_w;
                                        buf[in_row + ix] +=
                                            wv * grad[out_row + xx as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    });
}

pub(super) fn maxpool2d(
    input: &Tensor,
    kernel: usize,
    stride: usize,
) -> Result<Tensor, TensorError> {
    check_ge1("maxpool2d", "kernel", kernel)?;
    check_ge1("maxpool2d", "stride", stride)?;
    let x = input.shape();
    if kernel > x.h || kernel > x.w {
        return Err(TensorError::WindowTooLarge {
            kernel,
            h: x.h,
            w: x.w,
        });
    }
    let oh = (x.h - kernel) / stride + 1;
    let ow = (x.w - kernel) / stride + 1;
    let out_shape = Shape::new(x.n, x.c, oh, ow);
    let mut out = vec![0.0; out_shape.len()];
    let mut argmax = vec![0usize; out_shape.len()];

    input.with_data(|xs| {
        let mut o = 0;
        for nc in 0..x.n * x.c {
            let base = nc * x.h * x.w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..kernel {
                        let row = base + (oy * stride + ky) * x.w + ox * stride;
                        for kx in 0..kernel {
                            let v = xs[row + kx];
                            // strict comparison keeps the first of any ties
                            if v > best {
                                best = v;
                                best_idx = row + kx;
                            }
                        }
                    }
                    out[o] = best;
                    argmax[o] = best_idx;
                    o += 1;
                }
            }
        }
    });

    Ok(Tensor::from_op(
        out_shape,
        out,
        Op::MaxPool2d {
            input: input.clone(),
            argmax,
        },
    ))
}
