//! Tape-based reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Operations append nodes in
//! execution order, so the tape is already topologically sorted and
//! [`Graph::backward`] walks it once in reverse. Leaves created with
//! [`Graph::param`] keep their gradients across repeated `backward` calls,
//! which is how gradients accumulate.
//!
//! Most operations are defined on matrices (rank 2). Element-wise operations
//! accept any shape, and `softmax`/`layer_norm` work over the last axis.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type the engine computes in. Implemented for `f32` (training) and
/// `f64` (gradient checks).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + 'static
{
    /// `c = alpha * a·b + beta * c` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:ident) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                // SAFETY: every caller passes buffers whose extents match the
                // stated dimensions and strides (asserted above for the dense case).
                unsafe {
                    matrixmultiply::$gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, sgemm);
impl_real!(f64, dgemm);

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of rows when viewed as a matrix over the last axis.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor rank >= 1")
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Element-type conversion, e.g. `f32` parameters into an `f64` check.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    fn matrix_dims(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Embedding { table: Var, ids: Vec<usize> },
    Softmax(Var),
    LayerNorm { a: Var, rstd: Vec<f64> },
    Gelu(Var),
    Mean { a: Var, axis: usize },
    Sum(Var),
    Im2Col { a: Var, kernel: usize, stride: usize, pad: usize },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, count: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op,
}

/// Single-threaded computation tape.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

const GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: its gradient is kept after `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        let requires_grad = inputs.iter().any(|&v| self.rg(v));
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- forward operations ----

    /// `a · b` for matrices `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for matrices `[m, k] · [n, k]ᵀ`, without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.value(a).matrix_dims("matmul")?;
        let (br, bc) = self.value(b).matrix_dims("matmul")?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: [{m}, {k}] x [{br}, {bc}]{}",
                if trans_b { "^T" } else { "" }
            )));
        }
        let mut out = vec![T::zero(); m * n];
        let (rsb, csb) = if trans_b {
            (1, k as isize)
        } else {
            (n as isize, 1)
        };
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            rsb,
            csb,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::new(vec![m, n], out)?;
        self.push(value, Op::MatMul { a, b, trans_b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a vector of length `cols` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let cols = self.check_row(a, row, "add_row")?;
        let r = self.value(row).data().to_vec();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r[i % cols])
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every row of `a` element-wise by a vector of length `cols`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let cols = self.check_row(a, row, "mul_row")?;
        let r = self.value(row).data().to_vec();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * r[i % cols])
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let s = T::lit(c);
        let data = self.value(a).data().iter().map(|&x| x * s).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).matrix_dims("transpose")?;
        let value = Tensor::new(vec![c, r], transpose_buf(self.value(a).data(), r, c))?;
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape.to_vec(), self.value(a).data().to_vec())?;
        self.push(value, Op::Reshape(a), &[a])
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).matrix_dims("slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::shape(format!(
                "slice_rows {start}..{} out of {r} rows",
                start + len
            )));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        self.push(Tensor::new(vec![len, c], data)?, Op::SliceRows { a, start }, &[a])
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).matrix_dims("slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::shape(format!(
                "slice_cols {start}..{} out of {c} columns",
                start + len
            )));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        self.push(Tensor::new(vec![r, len], data)?, Op::SliceCols { a, start }, &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let (_, c) = self.value(first).matrix_dims("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, pc) = self.value(p).matrix_dims("concat_rows")?;
            if pc != c {
                return Err(Error::shape(format!("concat_rows: {pc} columns vs {c}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        self.push(
            Tensor::new(vec![rows, c], data)?,
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let (r, _) = self.value(first).matrix_dims("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).matrix_dims("concat_cols")?;
            if pr != r {
                return Err(Error::shape(format!("concat_cols: {pr} rows vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(
            Tensor::new(vec![r, total], data)?,
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    /// Gathers rows of `table` (`[vocab, d]`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).matrix_dims("embedding")?;
        if ids.is_empty() {
            return Err(Error::shape("embedding lookup of zero ids"));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::shape(format!("token id {id} outside vocabulary {v}")));
            }
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Softmax over the last axis; each row is shifted by its maximum first.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::Softmax(a), &[a])
    }

    /// Normalizes each row (last axis) to zero mean and unit variance. No affine.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(t.numel());
        let mut rstds = Vec::with_capacity(t.rows());
        for row in t.data().chunks(c) {
            let n = c as f64;
            let mean = row.iter().map(|x| x.to_f64().unwrap()).sum::<f64>() / n;
            let var = row
                .iter()
                .map(|x| {
                    let d = x.to_f64().unwrap() - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            let rstd = 1.0 / (var + eps).sqrt();
            rstds.push(rstd);
            data.extend(row.iter().map(|x| T::lit((x.to_f64().unwrap() - mean) * rstd)));
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::LayerNorm { a, rstd: rstds }, &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let half = T::lit(0.5);
        let k = T::lit(SQRT_2_OVER_PI);
        let c = T::lit(GELU_C);
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| half * x * (T::one() + (k * (x + c * x * x * x)).tanh()))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, Op::Gelu(a), &[a])
    }

    /// Mean of a matrix over `axis` (0: over rows, giving `[cols]`; 1: over
    /// columns, giving `[rows]`).
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.value(a).matrix_dims("mean")?;
        let src = self.value(a).data();
        let data = match axis {
            0 => {
                let inv = T::lit(1.0 / r as f64);
                (0..c)
                    .map(|j| (0..r).map(|i| src[i * c + j]).sum::<T>() * inv)
                    .collect::<Vec<_>>()
            }
            1 => {
                let inv = T::lit(1.0 / c as f64);
                src.chunks(c).map(|row| row.iter().copied().sum::<T>() * inv).collect()
            }
            _ => return Err(Error::shape(format!("mean over axis {axis} of a matrix"))),
        };
        let len = data.len();
        self.push(Tensor::new(vec![len], data)?, Op::Mean { a, axis }, &[a])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Unfolds a time-major signal `[len, channels]` into overlapping windows
    /// `[out_len, kernel * channels]` so a 1-D convolution becomes a matmul.
    /// Out-of-range taps read zero.
    pub fn im2col(&mut self, a: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (len, ch) = self.value(a).matrix_dims("im2col")?;
        if kernel == 0 || stride == 0 || len + 2 * pad < kernel {
            return Err(Error::shape(format!(
                "im2col kernel {kernel} stride {stride} pad {pad} on length {len}"
            )));
        }
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let src = self.value(a).data();
        let mut data = vec![T::zero(); out_len * kernel * ch];
        for t in 0..out_len {
            for j in 0..kernel {
                let pos = (t * stride + j) as isize - pad as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let p = pos as usize;
                let dst = t * kernel * ch + j * ch;
                data[dst..dst + ch].copy_from_slice(&src[p * ch..(p + 1) * ch]);
            }
        }
        self.push(
            Tensor::new(vec![out_len, kernel * ch], data)?,
            Op::Im2Col {
                a,
                kernel,
                stride,
                pad,
            },
            &[a],
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`[T, V]`). Positions whose target equals `ignore_index` do
    /// not contribute.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_index: usize,
    ) -> Result<Var> {
        let (t_len, v) = self.value(logits).matrix_dims("cross_entropy")?;
        if targets.len() != t_len {
            return Err(Error::shape(format!(
                "cross_entropy: {} targets for {t_len} positions",
                targets.len()
            )));
        }
        let mut kept = Vec::with_capacity(t_len);
        for &t in targets {
            if t == ignore_index {
                kept.push(None);
            } else if t >= v {
                return Err(Error::shape(format!("target {t} outside vocabulary {v}")));
            } else {
                kept.push(Some(t));
            }
        }
        let count = kept.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::DegenerateBatch);
        }
        let src = self.value(logits).data();
        let mut total = 0.0f64;
        for (row, tgt) in src.chunks(v).zip(&kept) {
            if let Some(t) = *tgt {
                total += log_sum_exp(row) - row[t].to_f64().unwrap();
            }
        }
        let loss = T::lit(total / count as f64);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: kept,
                count,
            },
            &[logits],
        )
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn check_row(&self, a: Var, row: Var, what: &str) -> Result<usize> {
        let cols = self.value(a).cols();
        if self.value(row).numel() != cols {
            return Err(Error::shape(format!(
                "{what}: row of {} elements for {cols} columns",
                self.value(row).numel()
            )));
        }
        Ok(cols)
    }

    // ---- reverse pass ----

    /// Propagates d(root)/d(node) to every node that requires a gradient and
    /// adds the result into the stored gradient of each trainable leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape(format!(
                "backward from non-scalar of shape {:?}",
                self.shape(root)
            )));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient flowing into {}",
                    op_name(&node.op)
                )));
            }
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                op => self.propagate(op, &node.value, g, &mut grads),
            }
        }

        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, out: &Tensor<T>, g: Vec<T>, grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape[0], av.shape[1]);
                let n = out.shape[1];
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    // dA = dC · Bᵀ   (or dC · B when the forward used Bᵀ)
                    let (rsb, csb) = if *trans_b {
                        (k as isize, 1)
                    } else {
                        (1, n as isize)
                    };
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        &g,
                        n as isize,
                        1,
                        bv.data(),
                        rsb,
                        csb,
                        T::zero(),
                        &mut da,
                        k as isize,
                        1,
                    );
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    if *trans_b {
                        // dB[n, k] = dCᵀ · A
                        T::gemm(
                            n,
                            m,
                            k,
                            T::one(),
                            &g,
                            1,
                            n as isize,
                            av.data(),
                            k as isize,
                            1,
                            T::zero(),
                            &mut db,
                            k as isize,
                            1,
                        );
                    } else {
                        // dB[k, n] = Aᵀ · dC
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            av.data(),
                            1,
                            k as isize,
                            &g,
                            n as isize,
                            1,
                            T::zero(),
                            &mut db,
                            n as isize,
                            1,
                        );
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.clone());
                }
                self.accumulate(grads, *a, g);
            }
            Op::AddRow(a, row) => {
                if self.rg(*row) {
                    let cols = out.cols();
                    let mut dr = vec![T::zero(); cols];
                    for chunk in g.chunks(cols) {
                        dr.iter_mut().zip(chunk).for_each(|(d, &x)| *d = *d + x);
                    }
                    self.accumulate(grads, *row, dr);
                }
                self.accumulate(grads, *a, g);
            }
            Op::MulRow(a, row) => {
                let cols = out.cols();
                let rv = self.value(*row).data();
                if self.rg(*row) {
                    let av = self.value(*a).data();
                    let mut dr = vec![T::zero(); cols];
                    for (gc, ac) in g.chunks(cols).zip(av.chunks(cols)) {
                        for j in 0..cols {
                            dr[j] = dr[j] + gc[j] * ac[j];
                        }
                    }
                    self.accumulate(grads, *row, dr);
                }
                if self.rg(*a) {
                    let da = g.iter().enumerate().map(|(i, &x)| x * rv[i % cols]).collect();
                    self.accumulate(grads, *a, da);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let da = zip_map(&g, self.value(*b).data(), |x, y| x * y);
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let db = zip_map(&g, self.value(*a).data(), |x, y| x * y);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale(a, c) => {
                let s = T::lit(*c);
                self.accumulate(grads, *a, g.into_iter().map(|x| x * s).collect());
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape[0], out.shape[1]);
                self.accumulate(grads, *a, transpose_buf(&g, r, c));
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g),
            Op::SliceRows { a, start } => {
                let src = self.value(*a);
                let c = src.cols();
                let mut da = vec![T::zero(); src.numel()];
                da[start * c..start * c + g.len()].copy_from_slice(&g);
                self.accumulate(grads, *a, da);
            }
            Op::SliceCols { a, start } => {
                let src = self.value(*a);
                let (r, c) = (src.shape[0], src.shape[1]);
                let w = out.shape[1];
                let mut da = vec![T::zero(); r * c];
                for i in 0..r {
                    da[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *a, da);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.rg(p) {
                        self.accumulate(grads, p, g[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let r = out.shape[0];
                let total = out.shape[1];
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).shape[1];
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            dp.extend_from_slice(&g[i * total + col..i * total + col + w]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    col += w;
                }
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let d = tv.cols();
                let mut dt = vec![T::zero(); tv.numel()];
                for (row, &id) in g.chunks(d).zip(ids) {
                    let dst = &mut dt[id * d..(id + 1) * d];
                    dst.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                }
                self.accumulate(grads, *table, dt);
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let mut da = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(out.data().chunks(c)) {
                    let dot: T = gr.iter().zip(yr).map(|(&x, &y)| x * y).sum();
                    da.extend(gr.iter().zip(yr).map(|(&x, &y)| y * (x - dot)));
                }
                self.accumulate(grads, *a, da);
            }
            Op::LayerNorm { a, rstd } => {
                let c = out.cols();
                let n = T::lit(c as f64);
                let mut da = Vec::with_capacity(g.len());
                for ((gr, xh), &rs) in g.chunks(c).zip(out.data().chunks(c)).zip(rstd) {
                    let sum_g: T = gr.iter().copied().sum();
                    let sum_gx: T = gr.iter().zip(xh).map(|(&x, &y)| x * y).sum();
                    let k = T::lit(rs) / n;
                    da.extend(gr.iter().zip(xh).map(|(&gi, &xi)| k * (n * gi - sum_g - xi * sum_gx)));
                }
                self.accumulate(grads, *a, da);
            }
            Op::Gelu(a) => {
                let half = T::lit(0.5);
                let k = T::lit(SQRT_2_OVER_PI);
                let c = T::lit(GELU_C);
                let c3 = T::lit(3.0 * GELU_C);
                let da = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(&gi, &x)| {
                        let t = (k * (x + c * x * x * x)).tanh();
                        let d = half * (T::one() + t)
                            + half * x * (T::one() - t * t) * k * (T::one() + c3 * x * x);
                        gi * d
                    })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Mean { a, axis } => {
                let src = self.value(*a);
                let (r, c) = (src.shape[0], src.shape[1]);
                let mut da = vec![T::zero(); r * c];
                if *axis == 0 {
                    let inv = T::lit(1.0 / r as f64);
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = g[j] * inv;
                        }
                    }
                } else {
                    let inv = T::lit(1.0 / c as f64);
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = g[i] * inv;
                        }
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Im2Col {
                a,
                kernel,
                stride,
                pad,
            } => {
                let src = self.value(*a);
                let (len, ch) = (src.shape[0], src.shape[1]);
                let out_len = out.shape[0];
                let mut da = vec![T::zero(); len * ch];
                for t in 0..out_len {
                    for j in 0..*kernel {
                        let pos = (t * stride + j) as isize - *pad as isize;
                        if pos < 0 || pos as usize >= len {
                            continue;
                        }
                        let p = pos as usize;
                        let s = t * kernel * ch + j * ch;
                        for q in 0..ch {
                            da[p * ch + q] = da[p * ch + q] + g[s + q];
                        }
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::CrossEntropy {
                logits,
                targets,
                count,
            } => {
                let lv = self.value(*logits);
                let v = lv.cols();
                let scale = g[0] / T::lit(*count as f64);
                let mut dl = vec![T::zero(); lv.numel()];
                for ((row, drow), tgt) in lv.data().chunks(v).zip(dl.chunks_mut(v)).zip(targets) {
                    if let Some(t) = *tgt {
                        drow.copy_from_slice(row);
                        softmax_in_place(drow);
                        drow[t] = drow[t] - T::one();
                        drow.iter_mut().for_each(|x| *x = *x * scale);
                    }
                }
                self.accumulate(grads, *logits, dl);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::MulRow(..) => "mul_row",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Transpose(_) => "transpose",
        Op::Reshape(_) => "reshape",
        Op::SliceRows { .. } => "slice_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatRows(_) => "concat_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::Embedding { .. } => "embedding",
        Op::Softmax(_) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Gelu(_) => "gelu",
        Op::Mean { .. } => "mean",
        Op::Sum(_) => "sum",
        Op::Im2Col { .. } => "im2col",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}

fn zip_map<T: Copy>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn transpose_buf<T: Copy>(src: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for j in 0..c {
        for i in 0..r {
            out.push(src[i * c + j]);
        }
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|x| *x = *x * inv);
}

fn log_sum_exp<T: Real>(row: &[T]) -> f64 {
    let max = row
        .iter()
        .map(|x| x.to_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    max + row
        .iter()
        .map(|x| (x.to_f64().unwrap() - max).exp())
        .sum::<f64>()
        .ln()
}
