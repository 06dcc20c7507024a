//! Dense linear-algebra primitives.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Matrices are flattened
//! with the **column-major** `vec` convention throughout the crate:
//! `vec(A) = [A[:,0]; A[:,1]; ...; A[:,d2-1]]`, which is exactly the storage
//! order of `DMatrix::as_slice`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{input_err, Error, Result};

/// Eigenvalues below this are clamped before inversion in [`sym_inv_sqrt`].
const EIGEN_FLOOR: f64 = 1e-12;

/// Full singular value decomposition `A = U diag(σ) Vᵀ` with square orthogonal
/// `U` (d1×d1) and `V` (d2×d2).
///
/// Singular values are non-increasing. Signs are fixed so that the
/// largest-magnitude entry of each column of `U` is non-negative (lowest row
/// index wins ties); paired columns of `V` are flipped along with `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    /// `U diag(σ) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(|s| s)
    }

    /// `U diag(f(σ)) Vᵀ`, only touching the leading min(d1, d2) columns.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let m = self.singular_values.len();
        let mut us = self.u.columns(0, m).into_owned();
        for (j, s) in self.singular_values.iter().enumerate() {
            let fs = f(*s);
            us.column_mut(j).scale_mut(fs);
        }
        us * self.v.columns(0, m).transpose()
    }
}

fn check_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        input_err(format!("{what} has non-finite entries"))
    }
}

/// Index of the largest-magnitude entry; earliest index on exact ties.
fn argmax_abs(col: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, x) in col.enumerate() {
        if x.abs() > best_val {
            best_val = x.abs();
            best = i;
        }
    }
    best
}

/// Extend the orthonormal columns of `q` (n×m) to an n×n orthogonal matrix.
///
/// New columns are Gram-Schmidt residuals of standard basis vectors, picking
/// the candidate with the largest residual at each step so the result is
/// deterministic and well conditioned.
pub(crate) fn complete_basis(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let m = q.ncols();
    let mut cols: Vec<DVector<f64>> = q.column_iter().map(|c| c.into_owned()).collect();
    while cols.len() < n {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for j in 0..n {
            let mut r = DVector::<f64>::zeros(n);
            r[j] = 1.0;
            // two passes of classical Gram-Schmidt
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&r);
                    r.axpy(-proj, c, 1.0);
                }
            }
            let nr = r.norm();
            if best.as_ref().is_none_or(|(bn, _)| nr > *bn) {
                best = Some((nr, r));
            }
        }
        let (nr, r) = best.expect("n > 0 candidates");
        cols.push(r / nr);
    }
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    debug_assert_eq!(out.ncols(), n.max(m));
    out
}

/// Full SVD of an arbitrary finite matrix.
pub fn full_svd(a: &DMatrix<f64>) -> Result<SvdFactors> {
    check_finite(a, "matrix")?;
    let (d1, d2) = a.shape();
    if d1 == 0 || d2 == 0 {
        return input_err("cannot decompose an empty matrix");
    }
    // Decompose the tall orientation so the thin factor on the long side is
    // the only one that needs completing.
    let transposed = d1 < d2;
    let tall = if transposed { a.transpose() } else { a.clone() };
    let svd = nalgebra::SVD::new(tall, true, true);
    let thin_u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let sigma = svd.singular_values;
    let square_v = vt.transpose();
    let (mut u, mut v) =
        if transposed { (square_v, complete_basis(&thin_u)) } else { (complete_basis(&thin_u), square_v) };

    let m = sigma.len();
    for j in 0..m {
        let i = argmax_abs(u.column(j).iter().copied());
        if u[(i, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    for j in m..d1 {
        let i = argmax_abs(u.column(j).iter().copied());
        if u[(i, j)] < 0.0 {
            u.column_mut(j).neg_mut();
        }
    }
    for j in m..d2 {
        let i = argmax_abs(v.column(j).iter().copied());
        if v[(i, j)] < 0.0 {
            v.column_mut(j).neg_mut();
        }
    }
    // nalgebra can leave tiny negative zeros; singular values are non-negative.
    let singular_values = sigma.map(|s| s.max(0.0));
    Ok(SvdFactors { u, singular_values, v })
}

/// Symmetric inverse square root together with the smallest eigenvalue of the
/// input.
#[derive(Debug, Clone)]
pub struct InvSqrt {
    pub root: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

/// `M^{-1/2}` for a symmetric positive-definite `M`, via eigendecomposition.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_inv_sqrt_with_min(m).map(|r| r.root)
}

/// Same as [`sym_inv_sqrt`] but also reports `λ_min(M)`.
pub fn sym_inv_sqrt_with_min(m: &DMatrix<f64>) -> Result<InvSqrt> {
    check_finite(m, "matrix")?;
    if !m.is_square() {
        return input_err(format!("inverse square root needs a square matrix, got {:?}", m.shape()));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return input_err(format!("matrix is not symmetric (max asymmetry {asym:e})"));
    }
    let eig = SymmetricEigen::new(m.clone());
    let min_eigenvalue = eig.eigenvalues.min();
    if min_eigenvalue <= 0.0 {
        return Err(Error::Numerical { what: "matrix is not positive definite".into(), value: min_eigenvalue });
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(EIGEN_FLOOR).sqrt());
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, s) in inv_sqrt.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    let mut root = scaled * q.transpose();
    // symmetrize away roundoff
    let rt = root.transpose();
    root += rt;
    root.scale_mut(0.5);
    Ok(InvSqrt { root, min_eigenvalue })
}

/// Sum of singular values.
pub fn nuclear_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().singular_values().sum()
}

/// Proximal operator of `k·‖·‖_nuc`: shrink every singular value by `k`.
pub fn svd_soft_threshold(theta: &DMatrix<f64>, k: f64) -> Result<DMatrix<f64>> {
    if !(k >= 0.0) || !k.is_finite() {
        return input_err(format!("soft-threshold level must be finite and >= 0, got {k}"));
    }
    let svd = full_svd(theta)?;
    Ok(svd.reconstruct_with(|s| (s - k).max(0.0)))
}

/// Column and row bases split at an effective rank.
///
/// The full orthogonal rotations `[Û | Û⊥]` and `[V̂ | V̂⊥]` are stored; the
/// leading `rank` columns of each are the estimated subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceSplit {
    u_full: DMatrix<f64>,
    v_full: DMatrix<f64>,
    rank: usize,
}

/// Lengths of the four rotated blocks in the order they are concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSizes {
    pub top_left: usize,
    pub top_right: usize,
    pub bottom_left: usize,
    pub complement: usize,
}

impl SubspaceSplit {
    /// Split from square orthogonal rotations. Orthogonality is checked to 1e-8.
    pub fn new(u_full: DMatrix<f64>, v_full: DMatrix<f64>, rank: usize) -> Result<Self> {
        if !u_full.is_square() || !v_full.is_square() {
            return input_err("subspace rotations must be square");
        }
        let d = u_full.nrows().min(v_full.nrows());
        if rank == 0 || rank > d {
            return input_err(format!("effective rank {rank} outside 1..={d}"));
        }
        for (name, q) in [("column", &u_full), ("row", &v_full)] {
            let err = (q.transpose() * q - DMatrix::identity(q.nrows(), q.nrows())).norm();
            if err > 1e-8 {
                return input_err(format!("{name} rotation is not orthogonal (error {err:e})"));
            }
        }
        Ok(Self { u_full, v_full, rank })
    }

    /// Split an SVD at `rank`.
    pub fn from_svd(svd: &SvdFactors, rank: usize) -> Result<Self> {
        Self::new(svd.u.clone(), svd.v.clone(), rank)
    }

    /// Identity rotations of the given shape.
    pub fn identity(d1: usize, d2: usize, rank: usize) -> Result<Self> {
        Self::new(DMatrix::identity(d1, d1), DMatrix::identity(d2, d2), rank)
    }

    pub fn d1(&self) -> usize {
        self.u_full.nrows()
    }

    pub fn d2(&self) -> usize {
        self.v_full.nrows()
    }

    pub fn effective_rank(&self) -> usize {
        self.rank
    }

    /// `p = d1·d2`.
    pub fn total_dim(&self) -> usize {
        self.d1() * self.d2()
    }

    /// `k = p − (d1 − r̂)(d2 − r̂)`.
    pub fn effective_dim(&self) -> usize {
        effective_dim(self.d1(), self.d2(), self.rank)
    }

    pub fn col_basis(&self) -> DMatrix<f64> {
        self.u_full.columns(0, self.rank).into_owned()
    }

    pub fn col_complement(&self) -> DMatrix<f64> {
        self.u_full.columns(self.rank, self.d1() - self.rank).into_owned()
    }

    pub fn row_basis(&self) -> DMatrix<f64> {
        self.v_full.columns(0, self.rank).into_owned()
    }

    pub fn row_complement(&self) -> DMatrix<f64> {
        self.v_full.columns(self.rank, self.d2() - self.rank).into_owned()
    }

    pub fn block_sizes(&self) -> BlockSizes {
        let r = self.rank;
        let (d1, d2) = (self.d1(), self.d2());
        BlockSizes {
            top_left: r * r,
            top_right: r * (d2 - r),
            bottom_left: (d1 - r) * r,
            complement: (d1 - r) * (d2 - r),
        }
    }

    /// Rotate and rearrange a matrix into a p-vector.
    ///
    /// With `Y = [Û,Û⊥]ᵀ X [V̂,V̂⊥]` the output is
    /// `[vec(Y₁₁), vec(Y₁₂), vec(Y₂₁), vec(Y₂₂)]` where `Y₁₁` is r̂×r̂ and
    /// `Y₂₂` is the (d1−r̂)×(d2−r̂) complement block. The first `k` entries
    /// are the active coordinates.
    pub fn rotate_and_vectorize(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.shape() != (self.d1(), self.d2()) {
            return input_err(format!(
                "matrix shape {:?} does not match split {:?}",
                x.shape(),
                (self.d1(), self.d2())
            ));
        }
        let y = self.u_full.transpose() * x * &self.v_full;
        let mut out = Vec::with_capacity(self.total_dim());
        for (r0, c0, nr, nc) in self.block_ranges() {
            out.extend(y.view((r0, c0), (nr, nc)).iter().copied());
        }
        Ok(DVector::from_vec(out))
    }

    /// Rotate the parameter matrix with the same rearrangement as arms, so that
    /// `⟨X, Θ⟩ = x·θ`. The trailing `p − k` entries are the complement block.
    pub fn rotate_parameter(&self, theta: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.rotate_and_vectorize(theta)
    }

    /// Inverse of [`Self::rotate_and_vectorize`].
    pub fn restore_matrix(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        if v.len() != self.total_dim() {
            return input_err(format!("vector length {} != p = {}", v.len(), self.total_dim()));
        }
        let mut y = DMatrix::<f64>::zeros(self.d1(), self.d2());
        let mut pos = 0;
        for (r0, c0, nr, nc) in self.block_ranges() {
            let n = nr * nc;
            y.view_mut((r0, c0), (nr, nc)).copy_from_slice(&v.as_slice()[pos..pos + n]);
            pos += n;
        }
        Ok(&self.u_full * y * self.v_full.transpose())
    }

    fn block_ranges(&self) -> [(usize, usize, usize, usize); 4] {
        let r = self.rank;
        let (d1, d2) = (self.d1(), self.d2());
        [(0, 0, r, r), (0, r, r, d2 - r), (r, 0, d1 - r, r), (r, r, d1 - r, d2 - r)]
    }
}

/// `k = d1·d2 − (d1 − r)(d2 − r)`.
pub fn effective_dim(d1: usize, d2: usize, rank: usize) -> usize {
    d1 * d2 - (d1 - rank) * (d2 - rank)
}

/// Free-function form of [`SubspaceSplit::rotate_and_vectorize`].
pub fn rotate_and_vectorize(x: &DMatrix<f64>, split: &SubspaceSplit) -> Result<DVector<f64>> {
    split.rotate_and_vectorize(x)
}

/// Free-function form of [`SubspaceSplit::rotate_parameter`].
pub fn rotate_parameter(theta: &DMatrix<f64>, split: &SubspaceSplit) -> Result<DVector<f64>> {
    split.rotate_parameter(theta)
}

/// Trace inner product `⟨A, B⟩ = Σ A_ij B_ij`.
pub fn trace_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// `vec(A)` in column-major order.
pub fn vec_col_major(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec_col_major`].
pub fn unvec_col_major(v: &DVector<f64>, d1: usize, d2: usize) -> Result<DMatrix<f64>> {
    if v.len() != d1 * d2 {
        return input_err(format!("vector length {} != {d1}x{d2}", v.len()));
    }
    Ok(DMatrix::from_column_slice(d1, d2, v.as_slice()))
}
