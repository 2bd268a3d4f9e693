//! Dense 4-D tensors with reverse-mode automatic differentiation.
//!
//! The engine covers exactly the operations the saliency networks need:
//! convolution (plain, transposed, dilated), max pooling, batch
//! normalization, a small elementwise family, channel concatenation, and a
//! few fused loss kernels. Values are f64 throughout; shapes are always
//! `(batch, channels, height, width)` in row-major order.
//!
//! Gradients are tracked through a dynamically recorded graph. Calling
//! [`Tensor::backward`] on a scalar loss walks the graph in reverse
//! topological order and accumulates `d loss / d t` into every tensor that
//! requires gradients. Leaf gradients persist across backward calls and
//! accumulate until explicitly zeroed.

mod batchnorm;
mod conv;
pub mod checkpoint;
pub mod optim;
pub mod params;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

/// Tensor dimensions: batch, channels, height, width.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The scalar shape used by losses.
    pub fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape {
    fn from(t: (usize, usize, usize, usize)) -> Self {
        Shape::new(t.0, t.1, t.2, t.3)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: computed output {dim} is {size}; no valid positions for this kernel/stride/padding")]
    DegenerateOutput {
        op: &'static str,
        dim: &'static str,
        size: i64,
    },
    #[error("maxpool2d: {kernel}x{kernel} window larger than {h}x{w} input")]
    WindowTooLarge { kernel: usize, h: usize, w: usize },
    #[error("batchnorm2d: train mode needs >= 2 values per channel, got {count}")]
    SingleElementChannel { count: usize },
    #[error("backward: loss must have shape (1,1,1,1), got {shape}")]
    NonScalarLoss { shape: Shape },
    #[error("{op}: {len} data values do not fill shape {shape} ({expected} expected)")]
    DataLength {
        op: &'static str,
        len: usize,
        shape: Shape,
        expected: usize,
    },
    #[error("{op}: {arg} must be >= 1, got {value}")]
    BadArg {
        op: &'static str,
        arg: &'static str,
        value: i64,
    },
    #[error("optimizer: parameter '{name}' has no gradient; run backward() first")]
    MissingGrad { name: String },
    #[error("param store: name '{name}' {problem}")]
    BadName { name: String, problem: &'static str },
}

/// Train/eval switch; batch normalization is the only op that cares.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording the autograd graph. Forward passes made inside
/// produce detached tensors, which keeps inference from retaining graphs.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) enum Op {
    Leaf,
    Relu {
        x: Tensor,
    },
    Sigmoid {
        x: Tensor,
    },
    Square {
        x: Tensor,
    },
    Scale {
        x: Tensor,
        factor: f64,
    },
    AddScalar {
        x: Tensor,
    },
    Add {
        a: Tensor,
        b: Tensor,
    },
    Sub {
        a: Tensor,
        b: Tensor,
    },
    MeanAll {
        x: Tensor,
    },
    SumAll {
        x: Tensor,
    },
    MeanPerSample {
        x: Tensor,
    },
    ConcatChannels {
        parts: Vec<Tensor>,
    },
    Conv2d {
        input: Tensor,
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
        dilation: usize,
    },
    ConvTranspose2d {
        input: Tensor,
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: Tensor,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Tensor,
        gamma: Tensor,
        beta: Tensor,
        /// Per-channel statistics the forward pass normalized with, and
        /// whether they were batch moments (train) or running ones (eval).
        mean: Vec<f64>,
        var: Vec<f64>,
        batch_stats: bool,
    },
    TotalVariation {
        x: Tensor,
        alpha: f64,
    },
    BceMean {
        x: Tensor,
        target: f64,
    },
}

pub(crate) struct TensorInner {
    shape: Shape,
    data: Rc<RefCell<Vec<f64>>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
}

/// A dense (n, c, h, w) array of f64 with an optional gradient record.
/// Cloning is cheap; clones share storage and identity.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<TensorInner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor{} requires_grad={}",
            self.shape(),
            self.requires_grad()
        )
    }
}

impl Tensor {
    fn new(shape: Shape, data: Vec<f64>, requires_grad: bool, op: Op) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Tensor {
            inner: Rc::new(TensorInner {
                shape,
                data: Rc::new(RefCell::new(data)),
                requires_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    fn from_op(shape: Shape, data: Vec<f64>, op: Op) -> Self {
        // Ops are recorded only while gradients are enabled and at least one
        // parent needs them; otherwise the result is a plain detached value.
        let wants = grad_enabled() && op.parents().iter().any(|p| p.requires_grad());
        if wants {
            Tensor::new(shape, data, true, op)
        } else {
            Tensor::new(shape, data, false, Op::Leaf)
        }
    }

    /// New leaf tensor from explicit values.
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if data.len() != shape.len() {
            return Err(TensorError::DataLength {
                op: "from_vec",
                len: data.len(),
                shape,
                expected: shape.len(),
            });
        }
        Ok(Tensor::new(shape, data, false, Op::Leaf))
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        Tensor::new(shape, vec![0.0; shape.len()], false, Op::Leaf)
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        Tensor::new(shape, vec![value; shape.len()], false, Op::Leaf)
    }

    /// 1x1x1x1 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor::new(Shape::scalar(), vec![value], false, Op::Leaf)
    }

    /// Mark a leaf as trainable. Gradients will accumulate into it.
    pub fn trainable(self) -> Self {
        debug_assert!(matches!(self.inner.op, Op::Leaf));
        Tensor {
            inner: Rc::new(TensorInner {
                shape: self.inner.shape,
                data: Rc::clone(&self.inner.data),
                requires_grad: true,
                grad: RefCell::new(None),
                op: Op::Leaf,
            }),
        }
    }

    /// A leaf view of the same storage, cut off from the graph.
    pub fn detach(&self) -> Self {
        Tensor {
            inner: Rc::new(TensorInner {
                shape: self.inner.shape,
                data: Rc::clone(&self.inner.data),
                requires_grad: false,
                grad: RefCell::new(None),
                op: Op::Leaf,
            }),
        }
    }

    pub fn shape(&self) -> Shape {
        self.inner.shape
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Copy of the underlying values.
    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Run `f` over the raw values.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.data.borrow())
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.shape(),
            Shape::scalar(),
            "item() called on non-scalar tensor {}",
            self.shape()
        );
        self.inner.data.borrow()[0]
    }

    /// Value at (n, c, h, w).
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        let s = self.shape();
        self.inner.data.borrow()[((n * s.c + c) * s.h + h) * s.w + w]
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Mutate the stored values in place.
    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.data.borrow_mut());
    }

    /// Identity of the underlying storage; aliased parameters compare equal.
    pub(crate) fn storage_id(&self) -> usize {
        Rc::as_ptr(&self.inner.data) as usize
    }

    fn node_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    // ----- elementwise family -----

    pub fn relu(&self) -> Tensor {
        let data = self.with_data(|x| x.iter().map(|v| v.max(0.0)).collect());
        Tensor::from_op(self.shape(), data, Op::Relu { x: self.clone() })
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self.with_data(|x| x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect());
        Tensor::from_op(self.shape(), data, Op::Sigmoid { x: self.clone() })
    }

    pub fn square(&self) -> Tensor {
        let data = self.with_data(|x| x.iter().map(|v| v * v).collect());
        Tensor::from_op(self.shape(), data, Op::Square { x: self.clone() })
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.with_data(|x| x.iter().map(|v| v * factor).collect());
        Tensor::from_op(
            self.shape(),
            data,
            Op::Scale {
                x: self.clone(),
                factor,
            },
        )
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, offset: f64) -> Tensor {
        let data = self.with_data(|x| x.iter().map(|v| v + offset).collect());
        Tensor::from_op(self.shape(), data, Op::AddScalar { x: self.clone() })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same_shape("add", other)?;
        let data = self.with_data(|a| {
            other.with_data(|b| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>())
        });
        Ok(Tensor::from_op(
            self.shape(),
            data,
            Op::Add {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same_shape("sub", other)?;
        let data = self.with_data(|a| {
            other.with_data(|b| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
        });
        Ok(Tensor::from_op(
            self.shape(),
            data,
            Op::Sub {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    fn check_same_shape(&self, op: &'static str, other: &Tensor) -> Result<(), TensorError> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("shapes {} and {} differ", self.shape(), other.shape()),
            });
        }
        Ok(())
    }

    /// Mean over every element, as a scalar tensor.
    pub fn mean_all(&self) -> Tensor {
        let n = self.shape().len() as f64;
        let total = self.with_data(|x| x.iter().sum::<f64>());
        Tensor::from_op(
            Shape::scalar(),
            vec![total / n],
            Op::MeanAll { x: self.clone() },
        )
    }

    /// Sum over every element, as a scalar tensor.
    pub fn sum_all(&self) -> Tensor {
        let total = self.with_data(|x| x.iter().sum::<f64>());
        Tensor::from_op(Shape::scalar(), vec![total], Op::SumAll { x: self.clone() })
    }

    /// Per-sample mean over (c, h, w); output shape (n, 1, 1, 1).
    pub fn mean_per_sample(&self) -> Tensor {
        let s = self.shape();
        let per = s.c * s.h * s.w;
        let data = self.with_data(|x| {
            (0..s.n)
                .map(|i| x[i * per..(i + 1) * per].iter().sum::<f64>() / per as f64)
                .collect::<Vec<_>>()
        });
        Tensor::from_op(
            Shape::new(s.n, 1, 1, 1),
            data,
            Op::MeanPerSample { x: self.clone() },
        )
    }

    /// Concatenate along the channel axis. All inputs must agree on
    /// (n, h, w).
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                detail: "no inputs".into(),
            });
        }
        let first = parts[0].shape();
        let mut channels = 0;
        for p in parts {
            let s = p.shape();
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    detail: format!("input {} disagrees with {} on (n,h,w)", s, first),
                });
            }
            channels += s.c;
        }
        let out_shape = Shape::new(first.n, channels, first.h, first.w);
        let plane = first.h * first.w;
        let mut data = vec![0.0; out_shape.len()];
        for n in 0..first.n {
            let mut c_off = 0;
            for p in parts {
                let pc = p.shape().c;
                p.with_data(|x| {
                    let src = &x[n * pc * plane..(n + 1) * pc * plane];
                    let dst_start = (n * channels + c_off) * plane;
                    data[dst_start..dst_start + pc * plane].copy_from_slice(src);
                });
                c_off += pc;
            }
        }
        Ok(Tensor::from_op(
            out_shape,
            data,
            Op::ConcatChannels {
                parts: parts.iter().map(|p| (*p).clone()).collect(),
            },
        ))
    }

    /// Total-variation penalty: per sample, sum over pixels of
    /// `(dh^2 + dv^2)^(1/alpha)` where dh/dv are forward differences
    /// (missing neighbors at the far edges contribute zero), then averaged
    /// over the batch.
    pub fn total_variation(&self, alpha: f64) -> Tensor {
        let s = self.shape();
        let value = self.with_data(|x| {
            let plane = s.h * s.w;
            let mut total = 0.0;
            for nc in 0..s.n * s.c {
                let base = nc * plane;
                for i in 0..s.h {
                    for j in 0..s.w {
                        let v = x[base + i * s.w + j];
                        let mut u = 0.0;
                        if j + 1 < s.w {
                            let d = x[base + i * s.w + j + 1] - v;
                            u += d * d;
                        }
                        if i + 1 < s.h {
                            let d = x[base + (i + 1) * s.w + j] - v;
                            u += d * d;
                        }
                        if u > 0.0 {
                            total += u.powf(1.0 / alpha);
                        }
                    }
                }
            }
            total / s.n as f64
        });
        Tensor::from_op(
            Shape::scalar(),
            vec![value],
            Op::TotalVariation {
                x: self.clone(),
                alpha,
            },
        )
    }

    /// Mean binary cross-entropy of probabilities against a constant 0/1
    /// target. Probabilities are clamped to [1e-12, 1-1e-12] inside the log.
    pub fn bce_mean(&self, target: f64) -> Tensor {
        let n = self.shape().len() as f64;
        let value = self.with_data(|x| {
            x.iter()
                .map(|&p| {
                    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n
        });
        Tensor::from_op(
            Shape::scalar(),
            vec![value],
            Op::BceMean {
                x: self.clone(),
                target,
            },
        )
    }

    // ----- structured ops (implemented in sibling modules) -----

    /// 2-D convolution. `weight` is (outC, inC, kH, kW); `bias` is
    /// (1, outC, 1, 1).
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Tensor, TensorError> {
        conv::conv2d(self, weight, bias, stride, padding, dilation)
    }

    /// Transposed 2-D convolution. `weight` is (inC, outC, kH, kW); `bias`
    /// is (1, outC, 1, 1). Output spatial size is `(in-1)*stride - 2p + k`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor, TensorError> {
        conv::conv_transpose2d(self, weight, bias, stride, padding)
    }

    /// Max pooling with square window; ties go to the first (row-major)
    /// position.
    pub fn maxpool2d(&self, kernel: usize, stride: usize) -> Result<Tensor, TensorError> {
        conv::maxpool2d(self, kernel, stride)
    }

    /// Batch normalization over (n, h, w) per channel. In train mode the
    /// batch moments are used and `running_mean`/`running_var` are updated
    /// in place; in eval mode the running moments are used as constants.
    pub fn batchnorm2d(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &Tensor,
        running_var: &Tensor,
        mode: Mode,
    ) -> Result<Tensor, TensorError> {
        batchnorm::batchnorm2d(self, gamma, beta, running_mean, running_var, mode)
    }

    // ----- backward -----

    /// Reverse-mode sweep from a scalar loss. Accumulates into the `grad`
    /// buffer of every tensor with `requires_grad` reachable from the loss;
    /// calling twice without zeroing doubles the gradients.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.shape() != Shape::scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(),
            });
        }
        let order = self.topo_order();
        let mut flow: HashMap<usize, Vec<f64>> = HashMap::new();
        flow.insert(self.node_id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = flow.remove(&node.node_id()) else {
                continue;
            };
            if node.requires_grad() {
                let mut slot = node.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(buf) => {
                        for (b, v) in buf.iter_mut().zip(&g) {
                            *b += v;
                        }
                    }
                    None => *slot = Some(g.clone()),
                }
            }
            node.inner.op.backprop(node, &g, &mut flow);
        }
        Ok(())
    }

    /// Iterative DFS post-order over parents; result lists every node after
    /// all of its parents, so the reverse pass sees consumers first.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashMap<usize, ()> = HashMap::new();
        // (tensor, parents_expanded)
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if visited.contains_key(&node.node_id()) || !node.requires_grad() {
                continue;
            }
            visited.insert(node.node_id(), ());
            stack.push((node.clone(), true));
            for p in node.inner.op.parents() {
                stack.push((p.clone(), false));
            }
        }
        order
    }
}

const BCE_EPS: f64 = 1e-12;

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::Square { x }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::MeanAll { x }
            | Op::SumAll { x }
            | Op::MeanPerSample { x }
            | Op::TotalVariation { x, .. }
            | Op::BceMean { x, .. } => vec![x],
            Op::Add { a, b } | Op::Sub { a, b } => vec![a, b],
            Op::ConcatChannels { parts } => parts.iter().collect(),
            Op::Conv2d {
                input, weight, bias, ..
            } => vec![input, weight, bias],
            Op::ConvTranspose2d {
                input, weight, bias, ..
            } => vec![input, weight, bias],
            Op::MaxPool2d { input, .. } => vec![input],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![input, gamma, beta],
        }
    }

    /// Push this node's gradient into its parents' flow buffers.
    fn backprop(&self, node: &Tensor, grad: &[f64], flow: &mut HashMap<usize, Vec<f64>>) {
        match self {
            Op::Leaf => {}
            Op::Relu { x } => {
                x.with_data(|xs| {
                    accumulate(flow, x, |buf| {
                        for i in 0..buf.len() {
                            if xs[i] > 0.0 {
                                buf[i] += grad[i];
                            }
                        }
                    });
                });
            }
            Op::Sigmoid { x } => {
                node.with_data(|ys| {
                    accumulate(flow, x, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += grad[i] * ys[i] * (1.0 - ys[i]);
                        }
                    });
                });
            }
            Op::Square { x } => {
                x.with_data(|xs| {
                    accumulate(flow, x, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += grad[i] * 2.0 * xs[i];
                        }
                    });
                });
            }
            Op::Scale { x, factor } => {
                accumulate(flow, x, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i] * factor;
                    }
                });
            }
            Op::AddScalar { x } => {
                accumulate(flow, x, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i];
                    }
                });
            }
            Op::Add { a, b } => {
                for t in [a, b] {
                    accumulate(flow, t, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += grad[i];
                        }
                    });
                }
            }
            Op::Sub { a, b } => {
                accumulate(flow, a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i];
                    }
                });
                accumulate(flow, b, |buf| {
                    for i in 0..buf.len() {
                        buf[i] -= grad[i];
                    }
                });
            }
            Op::MeanAll { x } => {
                let g = grad[0] / x.shape().len() as f64;
                accumulate(flow, x, |buf| {
                    for b in buf.iter_mut() {
                        *b += g;
                    }
                });
            }
            Op::SumAll { x } => {
                let g = grad[0];
                accumulate(flow, x, |buf| {
                    for b in buf.iter_mut() {
                        *b += g;
                    }
                });
            }
            Op::MeanPerSample { x } => {
                let s = x.shape();
                let per = s.c * s.h * s.w;
                accumulate(flow, x, |buf| {
                    for n in 0..s.n {
                        let g = grad[n] / per as f64;
                        for b in &mut buf[n * per..(n + 1) * per] {
                            *b += g;
                        }
                    }
                });
            }
            Op::ConcatChannels { parts } => {
                let out_c: usize = parts.iter().map(|p| p.shape().c).sum();
                let first = parts[0].shape();
                let plane = first.h * first.w;
                let mut c_off = 0;
                for p in parts {
                    let pc = p.shape().c;
                    accumulate(flow, p, |buf| {
                        for n in 0..first.n {
                            let src = (n * out_c + c_off) * plane;
                            let dst = n * pc * plane;
                            for i in 0..pc * plane {
                                buf[dst + i] += grad[src + i];
                            }
                        }
                    });
                    c_off += pc;
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
                dilation,
            } => {
                conv::conv2d_backward(
                    node, input, weight, bias, *stride, *padding, *dilation, grad, flow,
                );
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                conv::conv_transpose2d_backward(
                    node, input, weight, bias, *stride, *padding, grad, flow,
                );
            }
            Op::MaxPool2d { input, argmax } => {
                accumulate(flow, input, |buf| {
                    for (out_idx, &in_idx) in argmax.iter().enumerate() {
                        buf[in_idx] += grad[out_idx];
                    }
                });
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                var,
                batch_stats,
            } => {
                batchnorm::batchnorm2d_backward(
                    input,
                    gamma,
                    beta,
                    mean,
                    var,
                    *batch_stats,
                    grad,
                    flow,
                );
            }
            Op::TotalVariation { x, alpha } => {
                let s = x.shape();
                let g0 = grad[0] / s.n as f64;
                let inv_a = 1.0 / alpha;
                x.with_data(|xs| {
                    accumulate(flow, x, |buf| {
                        let plane = s.h * s.w;
                        for nc in 0..s.n * s.c {
                            let base = nc * plane;
                            for i in 0..s.h {
                                for j in 0..s.w {
                                    let idx = base + i * s.w + j;
                                    let v = xs[idx];
                                    let mut u = 0.0;
                                    let mut dh = 0.0;
                                    let mut dv = 0.0;
                                    if j + 1 < s.w {
                                        dh = xs[idx + 1] - v;
                                        u += dh * dh;
                                    }
                                    if i + 1 < s.h {
                                        dv = xs[idx + s.w] - v;
                                        u += dv * dv;
                                    }
                                    if u == 0.0 {
                                        continue;
                                    }
                                    // d/du u^(1/a) applied through both diffs.
                                    let outer = inv_a * u.powf(inv_a - 1.0) * g0;
                                    if j + 1 < s.w {
                                        buf[idx + 1] += outer * 2.0 * dh;
                                        buf[idx] -= outer * 2.0 * dh;
                                    }
                                    if i + 1 < s.h {
                                        buf[idx + s.w] += outer * 2.0 * dv;
                                        buf[idx] -= outer * 2.0 * dv;
                                    }
                                }
                            }
                        }
                    });
                });
            }
            Op::BceMean { x, target } => {
                let n = x.shape().len() as f64;
                x.with_data(|xs| {
                    accumulate(flow, x, |buf| {
                        for i in 0..buf.len() {
                            let p = xs[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                            buf[i] += grad[0] * (-target / p + (1.0 - target) / (1.0 - p)) / n;
                        }
                    });
                });
            }
        }
    }
}

/// Fetch-or-create the flow buffer for `t` and let `f` add into it.
/// Tensors that do not require gradients are skipped, pruning the walk.
pub(crate) fn accumulate(
    flow: &mut HashMap<usize, Vec<f64>>,
    t: &Tensor,
    f: impl FnOnce(&mut Vec<f64>),
) {
    if !t.requires_grad() {
        return;
    }
    let buf = flow
        .entry(t.node_id())
        .or_insert_with(|| vec![0.0; t.shape().len()]);
    f(buf);
}
