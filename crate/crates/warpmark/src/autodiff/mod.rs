//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tensor`] handles
//! index into it. Calling [`Tensor::backward`] on a scalar walks the tape in
//! reverse, accumulating gradients into every tensor created with
//! `requires_grad = true`. Gradients of multiply-used tensors sum over all
//! consuming branches.
//!
//! The primitive set is exactly what the warping pipeline needs: elementwise
//! arithmetic, matrix multiply, reductions, pointwise nonlinearities, 2-D
//! convolution and average pooling, shape surgery, row-wise 2-vector norms,
//! clamping, and a differentiable bilinear grid sampler.
//!
//! A tape and its tensors belong to one logical thread; separate tapes may
//! run on separate threads. Construct tensors either in `f32` (training
//! default) or `f64` (verification).

mod gradcheck;
mod kernels;

pub use gradcheck::{grad_check, grad_check_multi};

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Scalar types the engine runs on.
pub trait Real:
    num_traits::Float + num_traits::NumAssignOps + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Floor applied to squared distances before `ln` in the TPS kernel,
    /// far below any squared pixel distance that matters.
    fn squared_dist_floor() -> Self;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 needs 4 bytes"))
    }
    fn squared_dist_floor() -> Self {
        1e-30
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 needs 8 bytes"))
    }
    fn squared_dist_floor() -> Self {
        1e-280
    }
}

/// Shorthand for lifting an `f64` literal into the working precision.
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x)
}

/// A plain shape + row-major buffer, detached from any tape.
///
/// Used for parameters, dataset tensors, and anything that outlives a
/// forward/backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> TensorData<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Usage(format!(
                "tensor data has {} elements, shape {:?} wants {}",
                data.len(),
                shape,
                numel(&shape)
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Border handling for [`Tensor::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by `k - 1`.
    Valid,
    /// Zero-fill borders; output keeps the input size (odd kernels only).
    Zero,
    /// Repeat edge pixels; output keeps the input size (odd kernels only).
    Replicate,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    Square(usize),
    Sqrt(usize),
    Ln(usize),
    Exp(usize),
    Relu(usize),
    Tanh(usize),
    Conv2d {
        input: usize,
        kernel: usize,
        pad: Padding,
    },
    AvgPool2(usize),
    Reshape(usize),
    Concat {
        axis: usize,
        parts: Vec<usize>,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
        len: usize,
    },
    RowNorm2(usize),
    Clamp {
        input: usize,
        lo: T,
        hi: T,
    },
    GridSample {
        image: usize,
        coords: usize,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    op: Op<T>,
}

struct TapeInner<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// The recording graph. Cheap to clone (shared handle).
#[derive(Clone)]
pub struct Tape<T> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: Vec::new(),
            })),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Op<T>) -> Result<Tensor<T>> {
        debug_assert_eq!(numel(&shape), data.len());
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        inner.grads.push(None);
        Ok(Tensor {
            tape: self.clone(),
            idx,
        })
    }

    fn push_checked(&self, op_name: &'static str, shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Op<T>) -> Result<Tensor<T>> {
        ensure_finite(op_name, &data)?;
        self.push(shape, data, requires_grad, op)
    }

    /// New differentiable or constant tensor on this tape.
    pub fn leaf(&self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Tensor<T>> {
        if numel(&shape) != data.len() {
            return Err(Error::Usage(format!(
                "leaf data has {} elements, shape {:?} wants {}",
                data.len(),
                shape,
                numel(&shape)
            )));
        }
        self.push_checked("leaf", shape, data, requires_grad, Op::Leaf)
    }

    /// Leaf from detached storage.
    pub fn input(&self, data: &TensorData<T>, requires_grad: bool) -> Result<Tensor<T>> {
        self.leaf(data.shape.clone(), data.data.clone(), requires_grad)
    }

    /// Non-differentiable tensor.
    pub fn constant(&self, shape: Vec<usize>, data: Vec<T>) -> Result<Tensor<T>> {
        self.leaf(shape, data, false)
    }

    pub fn scalar(&self, value: T) -> Result<Tensor<T>> {
        self.constant(vec![], vec![value])
    }

    pub fn zeros(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let n = numel(&shape);
        self.constant(shape, vec![T::zero(); n])
    }

    pub fn ones(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let n = numel(&shape);
        self.constant(shape, vec![T::one(); n])
    }

    /// Concatenates tensors along `axis`. All other dimensions must agree.
    pub fn concat(&self, axis: usize, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of zero tensors".into()));
        }
        for p in parts {
            if !Rc::ptr_eq(&self.inner, &p.tape.inner) {
                return Err(Error::Usage("concat: tensor from a different graph".into()));
            }
        }
        let inner = self.inner.borrow();
        let first = &inner.nodes[parts[0].idx];
        let rank = first.shape.len();
        if axis >= rank {
            return Err(Error::Usage(format!("concat: axis {axis} out of range for rank {rank}")));
        }
        let mut out_shape = first.shape.clone();
        let mut axis_total = 0;
        for p in parts {
            let n = &inner.nodes[p.idx];
            if n.shape.len() != rank
                || n.shape
                    .iter()
                    .enumerate()
                    .any(|(d, &s)| d != axis && s != first.shape[d])
            {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: n.shape.clone(),
                });
            }
            axis_total += n.shape[axis];
        }
        out_shape[axis] = axis_total;

        // outer = product of dims before axis, inner = product after.
        let outer: usize = first.shape[..axis].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for p in parts {
                let n = &inner.nodes[p.idx];
                let chunk = n.data.len() / outer;
                data.extend_from_slice(&n.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = parts.iter().any(|p| inner.nodes[p.idx].requires_grad);
        let part_idx: Vec<usize> = parts.iter().map(|p| p.idx).collect();
        drop(inner);
        self.push_checked("concat", out_shape, data, rg, Op::Concat { axis, parts: part_idx })
    }
}

/// Handle to one tensor on a tape.
#[derive(Clone)]
pub struct Tensor<T> {
    tape: Tape<T>,
    idx: usize,
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("idx", &self.idx)
            .field("shape", &self.shape())
            .finish()
    }
}

fn ensure_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{op}: non-finite value in output")));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.idx].data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.idx].requires_grad
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Vec<T> {
        self.tape.inner.borrow().nodes[self.idx].data.clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.idx];
        assert_eq!(n.data.len(), 1, "item() on non-scalar tensor");
        n.data[0]
    }

    /// Borrowing access, avoiding a copy.
    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.idx].data)
    }

    /// Gradient accumulated by the last [`Tensor::backward`] on this tape;
    /// `None` for non-differentiable tensors or before any backward pass.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.tape.inner.borrow().grads[self.idx].clone()
    }

    pub fn detached(&self) -> TensorData<T> {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.idx];
        TensorData {
            shape: n.shape.clone(),
            data: n.data.clone(),
        }
    }

    fn same_tape(&self, rhs: &Tensor<T>, op: &'static str) -> Result<()> {
        if !Rc::ptr_eq(&self.tape.inner, &rhs.tape.inner) {
            return Err(Error::Usage(format!(
                "{op}: tensors belong to different graphs (detached operand)"
            )));
        }
        Ok(())
    }

    fn binary_same_shape(
        &self,
        rhs: &Tensor<T>,
        op_name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl Fn(usize, usize) -> Op<T>,
    ) -> Result<Tensor<T>> {
        self.same_tape(rhs, op_name)?;
        let (shape, data, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let b = &inner.nodes[rhs.idx];
            if a.shape != b.shape {
                return Err(Error::Shape {
                    op: op_name,
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let data: Vec<T> = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), data, a.requires_grad || b.requires_grad)
        };
        self.tape
            .push_checked(op_name, shape, data, rg, op(self.idx, rhs.idx))
    }

    fn unary(
        &self,
        op_name: &'static str,
        f: impl Fn(T) -> T,
        op: impl Fn(usize) -> Op<T>,
    ) -> Result<Tensor<T>> {
        let (shape, data, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let data: Vec<T> = a.data.iter().map(|&x| f(x)).collect();
            (a.shape.clone(), data, a.requires_grad)
        };
        self.tape.push_checked(op_name, shape, data, rg, op(self.idx))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_same_shape(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_same_shape(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_same_shape(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    /// Multiplication by a compile-time-known scalar.
    pub fn scale(&self, c: T) -> Result<Tensor<T>> {
        self.unary("scale", |x| x * c, |i| Op::Scale(i, c))
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.scale(-T::one())
    }

    /// Adds a constant to every element (recorded as an `add` with a
    /// constant operand).
    pub fn add_scalar(&self, c: T) -> Result<Tensor<T>> {
        let shape = self.shape();
        let n = numel(&shape);
        let cst = self.tape.constant(shape, vec![c; n])?;
        self.add(&cst)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_tape(rhs, "matmul")?;
        let (shape, data, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let b = &inner.nodes[rhs.idx];
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            (
                vec![m, n],
                kernels::matmul(&a.data, &b.data, m, k, n),
                a.requires_grad || b.requires_grad,
            )
        };
        self.tape
            .push_checked("matmul", shape, data, rg, Op::MatMul(self.idx, rhs.idx))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Result<Tensor<T>> {
        let (data, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let mut acc = T::zero();
            for &x in &a.data {
                acc += x;
            }
            (vec![acc], a.requires_grad)
        };
        self.tape.push_checked("sum", vec![], data, rg, Op::Sum(self.idx))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self) -> Result<Tensor<T>> {
        let (data, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            if a.data.is_empty() {
                return Err(Error::Usage("mean of empty tensor".into()));
            }
            let mut acc = T::zero();
            for &x in &a.data {
                acc += x;
            }
            (vec![acc / lit::<T>(a.data.len() as f64)], a.requires_grad)
        };
        self.tape.push_checked("mean", vec![], data, rg, Op::Mean(self.idx))
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        self.unary("square", |x| x * x, Op::Square)
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        {
            let inner = self.tape.inner.borrow();
            if inner.nodes[self.idx].data.iter().any(|x| *x < T::zero()) {
                return Err(Error::Domain {
                    op: "sqrt",
                    msg: "negative input".into(),
                });
            }
        }
        self.unary("sqrt", |x| x.sqrt(), Op::Sqrt)
    }

    /// Natural log. Requires strictly positive input.
    pub fn ln(&self) -> Result<Tensor<T>> {
        {
            let inner = self.tape.inner.borrow();
            if inner.nodes[self.idx].data.iter().any(|x| *x <= T::zero()) {
                return Err(Error::Domain {
                    op: "ln",
                    msg: "non-positive input".into(),
                });
            }
        }
        self.unary("ln", |x| x.ln(), Op::Ln)
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        self.unary("exp", |x| x.exp(), Op::Exp)
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        self.unary("relu", |x| x.max(T::zero()), Op::Relu)
    }

    pub fn tanh(&self) -> Result<Tensor<T>> {
        self.unary("tanh", |x| x.tanh(), Op::Tanh)
    }

    /// Logistic squash built from `tanh`: `0.5 + 0.5 * tanh(x / 2)`.
    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        self.scale(lit(0.5))?.tanh()?.scale(lit(0.5))?.add_scalar(lit(0.5))
    }

    /// Clamps every element into `[lo, hi]`. Gradient passes where the input
    /// lies inside the interval (inclusive) and is zero outside.
    pub fn clamp(&self, lo: T, hi: T) -> Result<Tensor<T>> {
        if lo > hi {
            return Err(Error::Usage(format!("clamp: lo {lo} > hi {hi}")));
        }
        self.unary("clamp", |x| x.min(hi).max(lo), |i| Op::Clamp { input: i, lo, hi })
    }

    /// 2-D cross-correlation, stride 1. Input `(C_in, H, W)`, kernel
    /// `(C_out, C_in, KH, KW)`; output `(C_out, H', W')` where the spatial
    /// size depends on [`Padding`].
    pub fn conv2d(&self, kernel: &Tensor<T>, pad: Padding) -> Result<Tensor<T>> {
        self.same_tape(kernel, "conv2d")?;
        let (shape, data, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let k = &inner.nodes[kernel.idx];
            let dims = kernels::conv_dims("conv2d", &a.shape, &k.shape, pad)?;
            let padded = kernels::pad_input(&a.data, &dims, pad);
            let out = kernels::conv2d_forward(&padded, &k.data, &dims);
            (
                vec![dims.c_out, dims.h_out, dims.w_out],
                out,
                a.requires_grad || k.requires_grad,
            )
        };
        self.tape.push_checked(
            "conv2d",
            shape,
            data,
            rg,
            Op::Conv2d {
                input: self.idx,
                kernel: kernel.idx,
                pad,
            },
        )
    }

    /// 2×2 average pooling with stride 2 over `(C, H, W)`; H and W must be even.
    pub fn avg_pool2(&self) -> Result<Tensor<T>> {
        let (shape, data, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            if a.shape.len() != 3 || a.shape[1] % 2 != 0 || a.shape[2] % 2 != 0 {
                return Err(Error::Shape {
                    op: "avg_pool2",
                    lhs: a.shape.clone(),
                    rhs: vec![],
                });
            }
            let (c, h, w) = (a.shape[0], a.shape[1], a.shape[2]);
            (
                vec![c, h / 2, w / 2],
                kernels::avg_pool2_forward(&a.data, c, h, w),
                a.requires_grad,
            )
        };
        self.tape
            .push_checked("avg_pool2", shape, data, rg, Op::AvgPool2(self.idx))
    }

    /// Reinterpretation with a new shape of identical element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let (data, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            if numel(&shape) != a.data.len() {
                return Err(Error::Shape {
                    op: "reshape",
                    lhs: a.shape.clone(),
                    rhs: shape.clone(),
                });
            }
            (a.data.clone(), a.requires_grad)
        };
        self.tape.push(shape, data, rg, Op::Reshape(self.idx))
    }

    /// Contiguous range `start..start+len` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let (shape, data, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            if axis >= a.shape.len() || start + len > a.shape[axis] || len == 0 {
                return Err(Error::Usage(format!(
                    "slice: range {}..{} on axis {} of shape {:?}",
                    start,
                    start + len,
                    axis,
                    a.shape
                )));
            }
            let mut shape = a.shape.clone();
            shape[axis] = len;
            let outer: usize = a.shape[..axis].iter().product();
            let inner_sz: usize = a.shape[axis + 1..].iter().product();
            let src_span = a.shape[axis] * inner_sz;
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                let base = o * src_span + start * inner_sz;
                data.extend_from_slice(&a.data[base..base + len * inner_sz]);
            }
            (shape, data, a.requires_grad)
        };
        self.tape.push(
            shape,
            data,
            rg,
            Op::Slice {
                input: self.idx,
                axis,
                start,
                len,
            },
        )
    }

    /// Row-wise Euclidean norm of an `(N, 2)` tensor, giving `(N,)`.
    pub fn row_norm2(&self) -> Result<Tensor<T>> {
        let (shape, data, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            if a.shape.len() != 2 || a.shape[1] != 2 {
                return Err(Error::Shape {
                    op: "row_norm2",
                    lhs: a.shape.clone(),
                    rhs: vec![a.shape.first().copied().unwrap_or(0), 2],
                });
            }
            let n = a.shape[0];
            let data: Vec<T> = (0..n)
                .map(|i| {
                    let dx = a.data[2 * i];
                    let dy = a.data[2 * i + 1];
                    (dx * dx + dy * dy).sqrt()
                })
                .collect();
            (vec![n], data, a.requires_grad)
        };
        self.tape
            .push_checked("row_norm2", shape, data, rg, Op::RowNorm2(self.idx))
    }

    /// Bilinear sampling of a `(H, W)` image at `(N, 2)` continuous `(u, v)`
    /// coordinates, giving `(N,)`. Coordinates are clamped to the image
    /// rectangle, so out-of-bounds samples take the border value (with zero
    /// coordinate gradient there).
    pub fn grid_sample(&self, coords: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_tape(coords, "grid_sample")?;
        let (shape, data, rg) = {
            let inner = self.tape.inner.borrow();
            let img = &inner.nodes[self.idx];
            let co = &inner.nodes[coords.idx];
            if img.shape.len() != 2 || co.shape.len() != 2 || co.shape[1] != 2 {
                return Err(Error::Shape {
                    op: "grid_sample",
                    lhs: img.shape.clone(),
                    rhs: co.shape.clone(),
                });
            }
            let n = co.shape[0];
            let out = kernels::grid_sample_forward(&img.data, img.shape[0], img.shape[1], &co.data, n);
            (vec![n], out, img.requires_grad || co.requires_grad)
        };
        self.tape.push_checked(
            "grid_sample",
            shape,
            data,
            rg,
            Op::GridSample {
                image: self.idx,
                coords: coords.idx,
            },
        )
    }

    /// Reverse pass from a scalar. Gradients land on every tensor of this
    /// tape that was created with `requires_grad = true`; tensors consumed by
    /// several branches accumulate the sum of branch gradients.
    pub fn backward(&self) -> Result<()> {
        let mut inner = self.tape.inner.borrow_mut();
        let TapeInner { nodes, grads } = &mut *inner;
        if nodes[self.idx].data.len() != 1 {
            return Err(Error::Usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                nodes[self.idx].shape
            )));
        }
        for (g, node) in grads.iter_mut().zip(nodes.iter()) {
            *g = if node.requires_grad {
                Some(vec![T::zero(); node.data.len()])
            } else {
                None
            };
        }
        if !nodes[self.idx].requires_grad {
            // Loss does not depend on any differentiable leaf; all gradients
            // stay zero.
            return Ok(());
        }
        grads[self.idx].as_mut().expect("seeded")[0] = T::one();

        for i in (0..=self.idx).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let (head, tail) = grads.split_at_mut(i);
            let go = tail[0].as_ref().expect("grad allocated").clone();
            backward_step(nodes, head, i, &go);
        }
        Ok(())
    }
}

/// Propagates `go`, the gradient at node `i`, into the gradients of its
/// parents (all of which have indices `< i`).
fn backward_step<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, go: &[T]) {
    let add_into = |grads: &mut [Option<Vec<T>>], idx: usize, contrib: &[T]| {
        if let Some(g) = grads[idx].as_mut() {
            for (g, c) in g.iter_mut().zip(contrib) {
                *g += *c;
            }
        }
    };
    let wants = |grads: &[Option<Vec<T>>], idx: usize| grads[idx].is_some();

    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_into(grads, *a, go);
            add_into(grads, *b, go);
        }
        Op::Sub(a, b) => {
            add_into(grads, *a, go);
            if let Some(g) = grads[*b].as_mut() {
                for (g, c) in g.iter_mut().zip(go) {
                    *g -= *c;
                }
            }
        }
        Op::Mul(a, b) => {
            if wants(grads, *a) {
                let contrib: Vec<T> = go.iter().zip(&nodes[*b].data).map(|(&g, &y)| g * y).collect();
                add_into(grads, *a, &contrib);
            }
            if wants(grads, *b) {
                let contrib: Vec<T> = go.iter().zip(&nodes[*a].data).map(|(&g, &x)| g * x).collect();
                add_into(grads, *b, &contrib);
            }
        }
        Op::Scale(a, c) => {
            if let Some(g) = grads[*a].as_mut() {
                for (g, &v) in g.iter_mut().zip(go) {
                    *g += v * *c;
                }
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[1];
            if wants(grads, *a) {
                let da = kernels::matmul_grad_lhs(go, &nodes[*b].data, m, k, n);
                add_into(grads, *a, &da);
            }
            if wants(grads, *b) {
                let db = kernels::matmul_grad_rhs(&nodes[*a].data, go, m, k, n);
                add_into(grads, *b, &db);
            }
        }
        Op::Sum(a) => {
            if let Some(g) = grads[*a].as_mut() {
                for g in g.iter_mut() {
                    *g += go[0];
                }
            }
        }
        Op::Mean(a) => {
            if let Some(g) = grads[*a].as_mut() {
                let c = go[0] / lit::<T>(g.len() as f64);
                for g in g.iter_mut() {
                    *g += c;
                }
            }
        }
        Op::Square(a) => {
            if wants(grads, *a) {
                let two = lit::<T>(2.0);
                let contrib: Vec<T> = go.iter().zip(&nodes[*a].data).map(|(&g, &x)| g * two * x).collect();
                add_into(grads, *a, &contrib);
            }
        }
        Op::Sqrt(a) => {
            if wants(grads, *a) {
                // d sqrt = 1 / (2 sqrt); subgradient 0 at exactly zero.
                let contrib: Vec<T> = go
                    .iter()
                    .zip(&nodes[i].data)
                    .map(|(&g, &y)| {
                        if y > T::zero() {
                            g / (y + y)
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                add_into(grads, *a, &contrib);
            }
        }
        Op::Ln(a) => {
            if wants(grads, *a) {
                let contrib: Vec<T> = go.iter().zip(&nodes[*a].data).map(|(&g, &x)| g / x).collect();
                add_into(grads, *a, &contrib);
            }
        }
        Op::Exp(a) => {
            if wants(grads, *a) {
                let contrib: Vec<T> = go.iter().zip(&nodes[i].data).map(|(&g, &y)| g * y).collect();
                add_into(grads, *a, &contrib);
            }
        }
        Op::Relu(a) => {
            if wants(grads, *a) {
                let contrib: Vec<T> = go
                    .iter()
                    .zip(&nodes[*a].data)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                add_into(grads, *a, &contrib);
            }
        }
        Op::Tanh(a) => {
            if wants(grads, *a) {
                let contrib: Vec<T> = go
                    .iter()
                    .zip(&nodes[i].data)
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect();
                add_into(grads, *a, &contrib);
            }
        }
        Op::Conv2d { input, kernel, pad } => {
            let dims = kernels::conv_dims("conv2d", &nodes[*input].shape, &nodes[*kernel].shape, *pad)
                .expect("validated at forward");
            let padded = kernels::pad_input(&nodes[*input].data, &dims, *pad);
            if wants(grads, *kernel) {
                let dk = kernels::conv2d_grad_kernel(&padded, go, &dims);
                add_into(grads, *kernel, &dk);
            }
            if wants(grads, *input) {
                let dp = kernels::conv2d_grad_padded(&nodes[*kernel].data, go, &dims);
                let di = kernels::fold_padding(&dp, &dims, *pad);
                add_into(grads, *input, &di);
            }
        }
        Op::AvgPool2(a) => {
            if wants(grads, *a) {
                let (c, h, w) = (nodes[*a].shape[0], nodes[*a].shape[1], nodes[*a].shape[2]);
                let di = kernels::avg_pool2_grad(go, c, h, w);
                add_into(grads, *a, &di);
            }
        }
        Op::Reshape(a) => add_into(grads, *a, go),
        Op::Concat { axis, parts } => {
            let outer: usize = nodes[i].shape[..*axis].iter().product();
            let mut offsets = vec![0usize; parts.len()];
            let total_chunk = nodes[i].data.len() / outer;
            let mut cursor = 0usize;
            let chunks: Vec<usize> = parts.iter().map(|&p| nodes[p].data.len() / outer).collect();
            for o in 0..outer {
                for (pi, &p) in parts.iter().enumerate() {
                    let chunk = chunks[pi];
                    if let Some(g) = grads[p].as_mut() {
                        let dst = &mut g[offsets[pi]..offsets[pi] + chunk];
                        let src = &go[cursor..cursor + chunk];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                    offsets[pi] += chunk;
                    cursor += chunk;
                }
                debug_assert_eq!(cursor, (o + 1) * total_chunk);
            }
        }
        Op::Slice {
            input,
            axis,
            start,
            len,
        } => {
            if let Some(g) = grads[*input].as_mut() {
                let src_shape = &nodes[*input].shape;
                let outer: usize = src_shape[..*axis].iter().product();
                let inner_sz: usize = src_shape[*axis + 1..].iter().product();
                let src_span = src_shape[*axis] * inner_sz;
                for o in 0..outer {
                    let dst = o * src_span + start * inner_sz;
                    let src = o * len * inner_sz;
                    for j in 0..len * inner_sz {
                        g[dst + j] += go[src + j];
                    }
                }
            }
        }
        Op::RowNorm2(a) => {
            if wants(grads, *a) {
                let mut contrib = vec![T::zero(); nodes[*a].data.len()];
                for (j, &g) in go.iter().enumerate() {
                    let r = nodes[i].data[j];
                    if r > T::zero() {
                        contrib[2 * j] = g * nodes[*a].data[2 * j] / r;
                        contrib[2 * j + 1] = g * nodes[*a].data[2 * j + 1] / r;
                    }
                }
                add_into(grads, *a, &contrib);
            }
        }
        Op::Clamp { input, lo, hi } => {
            if wants(grads, *input) {
                let contrib: Vec<T> = go
                    .iter()
                    .zip(&nodes[*input].data)
                    .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { T::zero() })
                    .collect();
                add_into(grads, *input, &contrib);
            }
        }
        Op::GridSample { image, coords } => {
            let (h, w) = (nodes[*image].shape[0], nodes[*image].shape[1]);
            let n = nodes[*coords].shape[0];
            let (dimg, dco) = kernels::grid_sample_grad(
                &nodes[*image].data,
                h,
                w,
                &nodes[*coords].data,
                n,
                go,
                wants(grads, *image),
                wants(grads, *coords),
            );
            if let Some(d) = dimg {
                add_into(grads, *image, &d);
            }
            if let Some(d) = dco {
                add_into(grads, *coords, &d);
            }
        }
    }
}

#[cfg(test)]
mod tests;
