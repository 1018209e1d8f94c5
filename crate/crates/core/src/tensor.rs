//! The tensor-train data model.
//!
//! A [`TtTensor`] of order `N` stores cores `X_1..X_N`, core `i` holding an
//! order-3 array of shape `(r_{i-1}, d_i, r_i)` with `r_0 = r_N = 1`. Entry
//! `(s_1, .., s_N)` is the matrix product `X_1(s_1) X_2(s_2) .. X_N(s_N)` of the
//! core slices `X_i(s_i) = X_i(:, s_i, :)`.
//!
//! Linearization follows a single convention everywhere: the first mode varies
//! fastest, so the 1-based multi-index `(s_1, .., s_N)` sits at
//! `s_1 + d_1 (s_2 - 1) + .. + d_1 .. d_{N-1} (s_N - 1)`. Unfoldings, the
//! block Kronecker product and all contractions derive from it.
//!
//! Each core is kept as its left unfolding `L(X_i)`, a `(r_{i-1} d_i) x r_i`
//! matrix whose rows are the slices `X_i(1); ..; X_i(d_i)` stacked with the
//! slice index as the slow row index.

use std::fmt;

use nalgebra::DMatrixView;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TtError};
use crate::linalg::Matrix;

/// Default ceiling on the number of entries a densification may produce.
pub const DEFAULT_ELEMENT_BUDGET: usize = 100_000_000;

fn product(dims: &[usize]) -> u128 {
    dims.iter().map(|&d| d as u128).product()
}

fn check_budget(needed: u128, budget: usize) -> Result<usize> {
    if needed > budget as u128 {
        Err(TtError::Resource { needed, budget })
    } else {
        Ok(needed as usize)
    }
}

/// Converts a 1-based multi-index into the 0-based linear offset.
pub fn linear_index(shape: &[usize], index: &[usize]) -> Result<usize> {
    if index.len() != shape.len() {
        return Err(TtError::domain(format!(
            "index has {} entries, tensor has order {}",
            index.len(),
            shape.len()
        )));
    }
    let mut offset = 0usize;
    let mut stride = 1usize;
    for (k, (&s, &d)) in index.iter().zip(shape).enumerate() {
        if s == 0 || s > d {
            return Err(TtError::domain(format!(
                "index {s} out of range 1..={d} in mode {}",
                k + 1
            )));
        }
        offset += (s - 1) * stride;
        stride *= d;
    }
    Ok(offset)
}

/// Inverse of [`linear_index`], returning a 0-based multi-index.
pub fn unravel_index(shape: &[usize], mut offset: usize) -> Vec<usize> {
    shape
        .iter()
        .map(|&d| {
            let s = offset % d;
            offset /= d;
            s
        })
        .collect()
}

/// Largest admissible bond ranks `min(r, d_1..d_i, d_{i+1}..d_N)` for each bond.
pub fn feasible_ranks(dims: &[usize], rank: usize) -> Vec<usize> {
    (1..dims.len())
        .map(|i| {
            let left = product(&dims[..i]);
            let right = product(&dims[i..]);
            (rank as u128).min(left).min(right) as usize
        })
        .collect()
}

/// A full tensor stored as a flat array, first mode fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TtError::domain(format!("invalid shape {shape:?}")));
        }
        if product(&shape) != data.len() as u128 {
            return Err(TtError::domain(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::zeros_with_budget(shape, DEFAULT_ELEMENT_BUDGET)
    }

    pub fn zeros_with_budget(shape: Vec<usize>, budget: usize) -> Result<Self> {
        let n = check_budget(product(&shape), budget)?;
        DenseTensor::new(shape, vec![0.0; n])
    }

    /// Builds a tensor from a function of the 0-based multi-index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = check_budget(product(&shape), DEFAULT_ELEMENT_BUDGET)?;
        let data = (0..n).map(|k| f(&unravel_index(&shape, k))).collect();
        DenseTensor::new(shape, data)
    }

    /// I.i.d. standard normal entries.
    pub fn random_normal<R: Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Result<Self> {
        let n = check_budget(product(&shape), DEFAULT_ELEMENT_BUDGET)?;
        let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        DenseTensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Entries in linear order; this is `vec(X)`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Entry at a 1-based multi-index.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[linear_index(&self.shape, index)?])
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, c: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(TtError::domain(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// One order-3 TT core, stored as its left unfolding.
#[derive(Debug, Clone, PartialEq)]
pub struct Core {
    left: usize,
    dim: usize,
    right: usize,
    unfolding: Matrix,
}

impl Core {
    /// Builds a core from values laid out row-major over `(left, dim, right)`.
    pub fn from_row_major(left: usize, dim: usize, right: usize, values: &[f64]) -> Result<Self> {
        if left == 0 || dim == 0 || right == 0 {
            return Err(TtError::domain("core dimensions must be positive"));
        }
        if values.len() != left * dim * right {
            return Err(TtError::domain(format!(
                "core ({left}, {dim}, {right}) needs {} values, got {}",
                left * dim * right,
                values.len()
            )));
        }
        let mut unfolding = Matrix::zeros(left * dim, right);
        for a in 0..left {
            for s in 0..dim {
                for b in 0..right {
                    unfolding[(s * left + a, b)] = values[(a * dim + s) * right + b];
                }
            }
        }
        Ok(Core {
            left,
            dim,
            right,
            unfolding,
        })
    }

    /// Wraps a left unfolding `L(X)` of shape `(left * dim) x right`.
    pub fn from_left_unfolding(left: usize, dim: usize, unfolding: Matrix) -> Result<Self> {
        let right = unfolding.ncols();
        if left == 0 || dim == 0 || right == 0 || unfolding.nrows() != left * dim {
            return Err(TtError::domain(format!(
                "left unfolding {}x{} does not fit left rank {left} and dim {dim}",
                unfolding.nrows(),
                unfolding.ncols()
            )));
        }
        Ok(Core {
            left,
            dim,
            right,
            unfolding,
        })
    }

    pub fn zeros(left: usize, dim: usize, right: usize) -> Self {
        Core {
            left,
            dim,
            right,
            unfolding: Matrix::zeros(left * dim, right),
        }
    }

    pub fn random<R: Rng + ?Sized>(left: usize, dim: usize, right: usize, rng: &mut R) -> Self {
        let unfolding = Matrix::from_fn(left * dim, right, |_, _| rng.sample(StandardNormal));
        Core {
            left,
            dim,
            right,
            unfolding,
        }
    }

    pub fn left_rank(&self) -> usize {
        self.left
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn right_rank(&self) -> usize {
        self.right
    }

    /// Entry `(a, s, b)`, 0-based.
    pub fn get(&self, a: usize, s: usize, b: usize) -> f64 {
        self.unfolding[(s * self.left + a, b)]
    }

    /// The slice `X(:, s, :)` as a `left x right` view, `s` 0-based.
    pub fn slice(&self, s: usize) -> DMatrixView<'_, f64> {
        self.unfolding.rows(s * self.left, self.left)
    }

    pub fn left_unfolding(&self) -> &Matrix {
        &self.unfolding
    }

    pub fn into_left_unfolding(self) -> Matrix {
        self.unfolding
    }

    /// `R(X) = [X(1) .. X(d)]`, a `left x (dim * right)` matrix.
    pub fn right_unfolding(&self) -> Matrix {
        let mut out = Matrix::zeros(self.left, self.dim * self.right);
        for s in 0..self.dim {
            out.columns_mut(s * self.right, self.right).copy_from(&self.slice(s));
        }
        out
    }

    /// Values row-major over `(left, dim, right)`.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.left * self.dim * self.right);
        for a in 0..self.left {
            for s in 0..self.dim {
                for b in 0..self.right {
                    out.push(self.get(a, s, b));
                }
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Core {
        Core {
            unfolding: &self.unfolding * c,
            ..self.clone()
        }
    }
}

/// A tensor in TT format.
#[derive(Debug, Clone, PartialEq)]
pub struct TtTensor {
    cores: Vec<Core>,
}

impl TtTensor {
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(TtError::domain("a TT tensor needs at least one core"));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(TtError::domain("boundary ranks r_0 and r_N must be 1"));
        }
        for (i, pair) in cores.windows(2).enumerate() {
            if pair[0].right != pair[1].left {
                return Err(TtError::domain(format!(
                    "core {} has right rank {} but core {} has left rank {}",
                    i + 1,
                    pair[0].right,
                    i + 2,
                    pair[1].left
                )));
            }
        }
        Ok(TtTensor { cores })
    }

    /// Random Gaussian cores with the given dims and bond ranks `(r_1..r_{N-1})`.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], bond_ranks: &[usize], rng: &mut R) -> Result<Self> {
        if dims.is_empty() || bond_ranks.len() + 1 != dims.len() {
            return Err(TtError::domain(format!(
                "{} bond ranks given for order {}",
                bond_ranks.len(),
                dims.len()
            )));
        }
        let ranks = full_ranks(bond_ranks);
        let cores = dims
            .iter()
            .enumerate()
            .map(|(i, &d)| Core::random(ranks[i], d, ranks[i + 1], rng))
            .collect();
        TtTensor::new(cores)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dim).collect()
    }

    /// `(r_0, .., r_N)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.cores.len() + 1);
        r.push(1);
        r.extend(self.cores.iter().map(|c| c.right));
        r
    }

    /// Interior ranks `(r_1, .., r_{N-1})`.
    pub fn bond_ranks(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1].iter().map(|c| c.right).collect()
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, i: usize) -> &Core {
        &self.cores[i]
    }

    pub fn into_cores(self) -> Vec<Core> {
        self.cores
    }

    /// Replaces core `i` (0-based) by one of identical shape.
    pub fn set_left_unfolding(&mut self, i: usize, unfolding: Matrix) -> Result<()> {
        let core = &mut self.cores[i];
        if unfolding.shape() != core.unfolding.shape() {
            return Err(TtError::domain(format!(
                "core {} expects a {:?} unfolding, got {:?}",
                i + 1,
                core.unfolding.shape(),
                unfolding.shape()
            )));
        }
        core.unfolding = unfolding;
        Ok(())
    }

    pub fn numel(&self) -> u128 {
        product(&self.dims())
    }

    /// Entry at a 1-based multi-index.
    pub fn eval(&self, index: &[usize]) -> Result<f64> {
        linear_index(&self.dims(), index)?;
        Ok(self.eval_unchecked(index.iter().map(|&s| s - 1)))
    }

    /// Entry at a 0-based multi-index that is known to be in range.
    pub(crate) fn eval_unchecked(&self, index: impl IntoIterator<Item = usize>) -> f64 {
        let mut row = vec![1.0];
        for (core, s) in self.cores.iter().zip(index) {
            let slice = core.slice(s);
            let mut next = vec![0.0; core.right];
            for (b, out) in next.iter_mut().enumerate() {
                *out = row.iter().enumerate().map(|(a, v)| v * slice[(a, b)]).sum();
            }
            row = next;
        }
        row[0]
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.to_dense_with_budget(DEFAULT_ELEMENT_BUDGET)
    }

    /// Materializes the tensor by contracting cores left to right.
    pub fn to_dense_with_budget(&self, budget: usize) -> Result<DenseTensor> {
        check_budget(self.numel(), budget)?;
        // `prefix` holds X^{<=k} as a (d_1..d_k) x r_k matrix, rows first-mode fastest.
        let mut prefix = self.cores[0].unfolding.clone();
        for core in &self.cores[1..] {
            let rows = prefix.nrows();
            let mut next = Matrix::zeros(rows * core.dim, core.right);
            for s in 0..core.dim {
                next.rows_mut(s * rows, rows).copy_from(&(&prefix * core.slice(s)));
            }
            prefix = next;
        }
        DenseTensor::new(self.dims(), prefix.as_slice().to_vec())
    }

    /// Sum in TT format: boundary cores concatenated, interior cores block-diagonal.
    pub fn add(&self, other: &TtTensor) -> Result<TtTensor> {
        if self.dims() != other.dims() {
            return Err(TtError::domain(format!(
                "dims mismatch: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let n = self.order();
        if n == 1 {
            let unfolding = &self.cores[0].unfolding + &other.cores[0].unfolding;
            return TtTensor::new(vec![Core::from_left_unfolding(1, self.cores[0].dim, unfolding)?]);
        }
        let mut cores = Vec::with_capacity(n);
        for (i, (a, b)) in self.cores.iter().zip(&other.cores).enumerate() {
            let left = if i == 0 { 1 } else { a.left + b.left };
            let right = if i == n - 1 { 1 } else { a.right + b.right };
            let mut unfolding = Matrix::zeros(left * a.dim, right);
            for s in 0..a.dim {
                let mut block = unfolding.rows_mut(s * left, left);
                // row/col offsets of the second summand's block
                let (r0, c0) = match i {
                    0 => (0, a.right),
                    _ if i == n - 1 => (a.left, 0),
                    _ => (a.left, a.right),
                };
                block.view_mut((0, 0), (a.left, a.right)).copy_from(&a.slice(s));
                block.view_mut((r0, c0), (b.left, b.right)).copy_from(&b.slice(s));
            }
            cores.push(Core::from_left_unfolding(left, a.dim, unfolding)?);
        }
        TtTensor::new(cores)
    }

    pub fn scaled(&self, c: f64) -> TtTensor {
        let mut out = self.clone();
        let last = out.cores.len() - 1;
        out.cores[last] = out.cores[last].scaled(c);
        out
    }

    pub fn neg(&self) -> TtTensor {
        self.scaled(-1.0)
    }

    /// `⟨self, other⟩` by transfer-matrix contraction, never densifying.
    pub fn inner(&self, other: &TtTensor) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(TtError::domain("dims mismatch in TT inner product"));
        }
        let mut transfer = Matrix::from_element(1, 1, 1.0);
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let mut next = Matrix::zeros(a.right, b.right);
            for s in 0..a.dim {
                next += a.slice(s).transpose() * &transfer * b.slice(s);
            }
            transfer = next;
        }
        Ok(transfer[(0, 0)])
    }

    /// Frobenius norm by transfer matrices.
    pub fn norm(&self) -> f64 {
        self.inner(self).expect("same dims").max(0.0).sqrt()
    }
}

/// Pads bond ranks with the unit boundary ranks.
pub fn full_ranks(bond_ranks: &[usize]) -> Vec<usize> {
    let mut r = Vec::with_capacity(bond_ranks.len() + 2);
    r.push(1);
    r.extend_from_slice(bond_ranks);
    r.push(1);
    r
}

impl fmt::Display for TtTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "TT order={} dims={:?} ranks={:?}",
            self.order(),
            self.dims(),
            self.ranks()
        )?;
        for (i, core) in self.cores.iter().enumerate() {
            writeln!(f, "core {} ({}, {}, {})", i + 1, core.left, core.dim, core.right)?;
            for s in 0..core.dim {
                write!(f, "  s={}:", s + 1)?;
                for a in 0..core.left {
                    write!(f, " [")?;
                    for b in 0..core.right {
                        if b > 0 {
                            write!(f, ", ")?;
                        }
                        write!(f, "{:?}", core.get(a, s, b))?;
                    }
                    write!(f, "]")?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

/// What an [`Unfolding`] was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnfoldingKind {
    /// `L(X_i)`
    Left,
    /// `R(X_i)`
    Right,
    /// `X^<i>`, with the split position.
    Tensor(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unfolding {
    pub kind: UnfoldingKind,
    pub matrix: Matrix,
}

impl Unfolding {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

pub fn left_unfold(core: &Core) -> Unfolding {
    Unfolding {
        kind: UnfoldingKind::Left,
        matrix: core.left_unfolding().clone(),
    }
}

pub fn right_unfold(core: &Core) -> Unfolding {
    Unfolding {
        kind: UnfoldingKind::Right,
        matrix: core.right_unfolding(),
    }
}

/// Inverse of [`left_unfold`].
pub fn fold_left(left_rank: usize, dim: usize, unfolding: &Unfolding) -> Result<Core> {
    if unfolding.kind != UnfoldingKind::Left {
        return Err(TtError::domain("fold_left expects a left unfolding"));
    }
    Core::from_left_unfolding(left_rank, dim, unfolding.matrix.clone())
}

/// `X^<i>`: rows indexed by `(s_1..s_i)`, columns by `(s_{i+1}..s_N)`, both
/// first-index fastest. With first-mode-fastest storage this is a plain
/// column-major reinterpretation of the data.
pub fn tensor_unfold(dense: &DenseTensor, i: usize) -> Result<Unfolding> {
    let n = dense.order();
    if i == 0 || i >= n {
        return Err(TtError::domain(format!(
            "unfolding position {i} outside 1..={}",
            n.saturating_sub(1)
        )));
    }
    let rows: usize = dense.shape()[..i].iter().product();
    let cols: usize = dense.shape()[i..].iter().product();
    Ok(Unfolding {
        kind: UnfoldingKind::Tensor(i),
        matrix: Matrix::from_column_slice(rows, cols, dense.data()),
    })
}

/// A matrix viewed as a vertical stack of equally sized blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStack {
    blocks: usize,
    matrix: Matrix,
}

impl BlockStack {
    pub fn new(blocks: usize, matrix: Matrix) -> Result<Self> {
        if blocks == 0 || !matrix.nrows().is_multiple_of(blocks) {
            return Err(TtError::domain(format!(
                "{} rows cannot be split into {blocks} blocks",
                matrix.nrows()
            )));
        }
        Ok(BlockStack { blocks, matrix })
    }

    /// `L(X_i)` viewed as the stack of its `d_i` slices.
    pub fn from_core(core: &Core) -> Self {
        BlockStack {
            blocks: core.dim,
            matrix: core.left_unfolding().clone(),
        }
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_rows(&self) -> usize {
        self.matrix.nrows() / self.blocks
    }

    pub fn block(&self, k: usize) -> DMatrixView<'_, f64> {
        let p = self.block_rows();
        self.matrix.rows(k * p, p)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

/// Block Kronecker product: block `a + d_A b` of the result is `A_a B_b`, so
/// `B`'s block index runs slowest.
pub fn kron_block(a: &BlockStack, b: &BlockStack) -> Result<BlockStack> {
    let q = b.block_rows();
    if a.matrix.ncols() != q {
        return Err(TtError::domain(format!(
            "inner dimensions differ: A blocks have {} columns, B blocks have {q} rows",
            a.matrix.ncols()
        )));
    }
    let p = a.block_rows();
    let t = b.matrix.ncols();
    let mut out = Matrix::zeros(p * a.blocks * b.blocks, t);
    for jb in 0..b.blocks {
        let bb = b.block(jb);
        for ja in 0..a.blocks {
            let k = ja + a.blocks * jb;
            out.rows_mut(k * p, p).copy_from(&(a.block(ja) * bb));
        }
    }
    BlockStack::new(a.blocks * b.blocks, out)
}

/// `L(X_1) ⊗̄ .. ⊗̄ L(X_N)`, which equals `vec(X)` as a column.
pub fn kron_chain(tt: &TtTensor) -> BlockStack {
    let mut acc = BlockStack::from_core(&tt.cores[0]);
    for core in &tt.cores[1..] {
        acc = kron_block(&acc, &BlockStack::from_core(core)).expect("chained shapes agree");
    }
    acc
}

/// `⟨dense, tt⟩` computed by absorbing one core at a time into the dense
/// tensor, without materializing `tt`.
pub fn tt_inner_dense(dense: &DenseTensor, tt: &TtTensor) -> Result<f64> {
    if dense.shape() != tt.dims().as_slice() {
        return Err(TtError::domain(format!(
            "shape mismatch: dense {:?} vs tt {:?}",
            dense.shape(),
            tt.dims()
        )));
    }
    Ok(contract_flat(dense.data(), tt))
}

/// Contraction kernel behind [`tt_inner_dense`]; `data` is `vec(A)`.
///
/// After absorbing cores `1..i` the working buffer is an `r_i x (d_{i+1}..d_N)`
/// column-major matrix, which reinterpreted as `(r_i d_{i+1}) x (..)` lines up
/// with the row order of `L(X_{i+1})`.
pub(crate) fn contract_flat(data: &[f64], tt: &TtTensor) -> f64 {
    let mut rest = data.len();
    let mut buf: Vec<f64> = Vec::new();
    let mut next: Vec<f64> = Vec::new();
    for (i, core) in tt.cores.iter().enumerate() {
        let rows = core.left * core.dim;
        rest /= core.dim;
        let lmat = core.unfolding.as_slice();
        let src: &[f64] = if i == 0 { data } else { &buf };
        next.clear();
        next.resize(core.right * rest, 0.0);
        for c in 0..rest {
            let col = &src[c * rows..(c + 1) * rows];
            for b in 0..core.right {
                let lcol = &lmat[b * rows..(b + 1) * rows];
                let mut acc = 0.0;
                for (x, y) in lcol.iter().zip(col) {
                    acc += x * y;
                }
                next[b + core.right * c] = acc;
            }
        }
        std::mem::swap(&mut buf, &mut next);
    }
    buf[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Independent oracle: explicit triple loop over slice products.
    fn loop_eval(tt: &TtTensor, index: &[usize]) -> f64 {
        let mut row = vec![1.0];
        for (core, &s) in tt.cores().iter().zip(index) {
            let mut next = vec![0.0; core.right_rank()];
            for b in 0..core.right_rank() {
                for a in 0..core.left_rank() {
                    next[b] += row[a] * core.get(a, s - 1, b);
                }
            }
            row = next;
        }
        row[0]
    }

    #[test]
    fn eval_of_all_ones_rank_one_is_one() {
        let cores = (0..3)
            .map(|_| Core::from_row_major(1, 2, 1, &[1.0, 1.0]).unwrap())
            .collect();
        let tt = TtTensor::new(cores).unwrap();
        assert_eq!(tt.eval(&[2, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn eval_with_zero_core_is_zero() {
        let mut tt = TtTensor::random(&[2, 3, 2], &[2, 2], &mut rng(1)).unwrap();
        tt.set_left_unfolding(1, Matrix::zeros(6, 2)).unwrap();
        assert_eq!(tt.eval(&[1, 3, 2]).unwrap(), 0.0);
    }

    #[test]
    fn eval_matches_loop_oracle() {
        let tt = TtTensor::random(&[2, 2, 2], &[2, 2], &mut rng(7)).unwrap();
        for k in 0..8 {
            let idx: Vec<usize> = unravel_index(&[2, 2, 2], k).iter().map(|s| s + 1).collect();
            let got = tt.eval(&idx).unwrap();
            let want = loop_eval(&tt, &idx);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300));
        }
    }

    #[test]
    fn eval_rejects_out_of_range() {
        let tt = TtTensor::random(&[2, 2], &[1], &mut rng(1)).unwrap();
        assert!(matches!(tt.eval(&[3, 1]), Err(TtError::Domain(_))));
        assert!(matches!(tt.eval(&[0, 1]), Err(TtError::Domain(_))));
        assert!(matches!(tt.eval(&[1]), Err(TtError::Domain(_))));
    }

    #[test]
    fn rank_one_dense_is_outer_product() {
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 4.0];
        let tt = TtTensor::new(vec![
            Core::from_row_major(1, 3, 1, &u).unwrap(),
            Core::from_row_major(1, 2, 1, &v).unwrap(),
        ])
        .unwrap();
        let dense = tt.to_dense().unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(dense.get(&[i + 1, j + 1]).unwrap(), u[i] * v[j]);
            }
        }
    }

    #[test]
    fn dense_matches_eval_everywhere() {
        let tt = TtTensor::random(&[3, 2, 4, 2], &[2, 3, 2], &mut rng(3)).unwrap();
        let dense = tt.to_dense().unwrap();
        for k in 0..dense.len() {
            let idx: Vec<usize> = unravel_index(dense.shape(), k).iter().map(|s| s + 1).collect();
            assert!((dense.data()[k] - tt.eval(&idx).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn densify_respects_budget() {
        let tt = TtTensor::random(&[10, 10, 10], &[2, 2], &mut rng(3)).unwrap();
        assert!(matches!(tt.to_dense_with_budget(999), Err(TtError::Resource { .. })));
        assert!(tt.to_dense_with_budget(1000).is_ok());
    }

    #[test]
    fn add_bookkeeps_ranks() {
        let a = TtTensor::random(&[3, 3], &[2], &mut rng(1)).unwrap();
        let b = TtTensor::random(&[3, 3], &[3], &mut rng(2)).unwrap();
        assert_eq!(a.add(&b).unwrap().ranks(), vec![1, 5, 1]);
        let c = TtTensor::random(&[2, 2, 2, 2], &[1, 2, 3], &mut rng(3)).unwrap();
        let d = TtTensor::random(&[2, 2, 2, 2], &[2, 2, 2], &mut rng(4)).unwrap();
        assert_eq!(c.add(&d).unwrap().ranks(), vec![1, 3, 4, 5, 1]);
    }

    #[test]
    fn add_matches_dense_sum() {
        let a = TtTensor::random(&[2, 2, 2], &[2, 2], &mut rng(11)).unwrap();
        let b = TtTensor::random(&[2, 2, 2], &[1, 2], &mut rng(12)).unwrap();
        let sum = a.add(&b).unwrap().to_dense().unwrap();
        let want = a.to_dense().unwrap().add(&b.to_dense().unwrap()).unwrap();
        for (x, y) in sum.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn add_with_negation_vanishes() {
        let a = TtTensor::random(&[3, 2, 3], &[2, 2], &mut rng(5)).unwrap();
        let z = a.add(&a.neg()).unwrap().to_dense().unwrap();
        assert!(z.data().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn add_rejects_dim_mismatch() {
        let a = TtTensor::random(&[3, 2], &[2], &mut rng(5)).unwrap();
        let b = TtTensor::random(&[2, 3], &[2], &mut rng(5)).unwrap();
        assert!(matches!(a.add(&b), Err(TtError::Domain(_))));
    }

    #[test]
    fn kron_block_with_identity_blocks() {
        let a = BlockStack::new(2, Matrix::from_row_slice(4, 2, &[1., 0., 0., 1., 1., 0., 0., 1.])).unwrap();
        let bm = Matrix::from_row_slice(4, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]);
        let b = BlockStack::new(2, bm.clone()).unwrap();
        let out = kron_block(&a, &b).unwrap();
        assert_eq!(out.blocks(), 4);
        assert_eq!(out.block(0), bm.rows(0, 2));
        assert_eq!(out.block(1), bm.rows(0, 2));
        assert_eq!(out.block(2), bm.rows(2, 2));
        assert_eq!(out.block(3), bm.rows(2, 2));
    }

    #[test]
    fn kron_block_scalar_ordering() {
        let a = BlockStack::new(2, Matrix::from_column_slice(2, 1, &[2.0, 3.0])).unwrap();
        let b = BlockStack::new(2, Matrix::from_column_slice(2, 1, &[5.0, 7.0])).unwrap();
        let out = kron_block(&a, &b).unwrap();
        assert_eq!(out.matrix().as_slice(), &[10.0, 15.0, 14.0, 21.0]);
    }

    #[test]
    fn kron_block_dimension_mismatch() {
        let a = BlockStack::new(2, Matrix::zeros(4, 3)).unwrap();
        let b = BlockStack::new(2, Matrix::zeros(4, 2)).unwrap();
        assert!(matches!(kron_block(&a, &b), Err(TtError::Domain(_))));
    }

    #[test]
    fn kron_chain_is_vectorization() {
        let tt = TtTensor::random(&[2, 3, 2], &[2, 2], &mut rng(8)).unwrap();
        let chain = kron_chain(&tt);
        let dense = tt.to_dense().unwrap();
        assert_eq!(chain.matrix().ncols(), 1);
        for (x, y) in chain.matrix().iter().zip(dense.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_core_unfoldings() {
        let core = Core::from_row_major(1, 3, 2, &[1., 2., 3., 4., 5., 6.]).unwrap();
        let l = left_unfold(&core);
        assert_eq!(l.matrix, Matrix::from_row_slice(3, 2, &[1., 2., 3., 4., 5., 6.]));
        let r = right_unfold(&core);
        assert_eq!(r.matrix, Matrix::from_row_slice(1, 6, &[1., 2., 3., 4., 5., 6.]));
        assert_eq!(fold_left(1, 3, &l).unwrap(), core);
    }

    #[test]
    fn tensor_unfold_rejects_bad_position() {
        let d = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(tensor_unfold(&d, 0).is_err());
        assert!(tensor_unfold(&d, 3).is_err());
        assert_eq!(tensor_unfold(&d, 2).unwrap().matrix.shape(), (4, 2));
    }

    #[test]
    fn tensor_unfold_factors_into_left_and_right_parts() {
        let tt = TtTensor::random(&[2, 3, 2, 2], &[2, 3, 2], &mut rng(21)).unwrap();
        let dense = tt.to_dense().unwrap();
        for i in 1..4 {
            let unf = tensor_unfold(&dense, i).unwrap().matrix;
            let left = TtTensor::new_prefix(&tt, i);
            let right = TtTensor::new_suffix(&tt, i);
            assert!((unf - left * right).norm() < 1e-12);
        }
    }

    impl TtTensor {
        // X^{<=i}: rows (s_1..s_i), each row X_1(s_1)..X_i(s_i)
        fn new_prefix(tt: &TtTensor, i: usize) -> Matrix {
            let dims = tt.dims();
            let rows: usize = dims[..i].iter().product();
            let r = tt.core(i - 1).right_rank();
            let mut m = Matrix::zeros(rows, r);
            for k in 0..rows {
                let idx = unravel_index(&dims[..i], k);
                let mut row = Matrix::from_element(1, 1, 1.0);
                for (c, s) in idx.iter().enumerate() {
                    row = &row * tt.core(c).slice(*s);
                }
                m.set_row(k, &row.row(0));
            }
            m
        }

        // X^{>=i+1}: columns (s_{i+1}..s_N), each column X_{i+1}(s_{i+1})..X_N(s_N)
        fn new_suffix(tt: &TtTensor, i: usize) -> Matrix {
            let dims = tt.dims();
            let cols: usize = dims[i..].iter().product();
            let r = tt.core(i).left_rank();
            let mut m = Matrix::zeros(r, cols);
            for k in 0..cols {
                let idx = unravel_index(&dims[i..], k);
                let mut col = Matrix::identity(r, r);
                for (c, s) in idx.iter().enumerate() {
                    col = &col * tt.core(i + c).slice(*s);
                }
                m.set_column(k, &col.column(0));
            }
            m
        }
    }

    #[test]
    fn inner_dense_of_own_densification_is_squared_norm() {
        let tt = TtTensor::random(&[3, 4, 2], &[2, 2], &mut rng(4)).unwrap();
        let dense = tt.to_dense().unwrap();
        let got = tt_inner_dense(&dense, &tt).unwrap();
        let want = dense.norm().powi(2);
        assert!((got - want).abs() <= 1e-10 * want);
    }

    #[test]
    fn inner_dense_of_zero_is_zero() {
        let tt = TtTensor::random(&[3, 3], &[2], &mut rng(4)).unwrap();
        let z = DenseTensor::zeros(vec![3, 3]).unwrap();
        assert_eq!(tt_inner_dense(&z, &tt).unwrap(), 0.0);
    }

    #[test]
    fn inner_dense_matches_naive() {
        let mut g = rng(19);
        let tt = TtTensor::random(&[3, 3, 3, 3], &[2, 2, 2], &mut g).unwrap();
        let dense = DenseTensor::random_normal(vec![3, 3, 3, 3], &mut g).unwrap();
        let naive = dense.inner(&tt.to_dense().unwrap()).unwrap();
        let got = tt_inner_dense(&dense, &tt).unwrap();
        assert!((got - naive).abs() <= 1e-12 * naive.abs());
        assert!(tt_inner_dense(&DenseTensor::zeros(vec![3, 3, 9]).unwrap(), &tt).is_err());
    }

    #[test]
    fn tt_inner_matches_dense_inner() {
        let mut g = rng(23);
        let a = TtTensor::random(&[2, 3, 4], &[2, 3], &mut g).unwrap();
        let b = TtTensor::random(&[2, 3, 4], &[1, 2], &mut g).unwrap();
        let want = a.to_dense().unwrap().inner(&b.to_dense().unwrap()).unwrap();
        assert!((a.inner(&b).unwrap() - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn invalid_chains_are_rejected() {
        let c1 = Core::zeros(1, 2, 2);
        let c2 = Core::zeros(3, 2, 1);
        assert!(TtTensor::new(vec![c1.clone(), c2]).is_err());
        assert!(TtTensor::new(vec![Core::zeros(2, 2, 1)]).is_err());
        assert!(TtTensor::new(vec![c1]).is_err());
    }

    #[test]
    fn feasible_ranks_clamp_to_unfolding_sizes() {
        assert_eq!(feasible_ranks(&[4, 4, 4], 6), vec![4, 4]);
        assert_eq!(feasible_ranks(&[4, 4, 4, 4], 6), vec![4, 6, 4]);
        assert_eq!(feasible_ranks(&[2, 3], 1), vec![1]);
    }
}
