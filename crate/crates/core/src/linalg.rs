//! Dense matrix helpers built on nalgebra: rank-revealing symmetric
//! eigendecomposition, rank-1 SVD factors, polar factors and orthonormal
//! completion.
//!
//! Singular value decompositions go through faer; nalgebra's SVD returns
//! inaccurate singular vectors for some rank-deficient inputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative eigenvalue threshold used for rank detection unless overridden.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Columns shorter than this after projection are redrawn during completion.
const COMPLETION_RESIDUAL: f64 = 1e-8;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Flips `v` so its largest-magnitude entry is positive (lowest index wins ties).
/// Returns the applied sign.
pub fn normalize_sign(v: &mut DVector<f64>) -> f64 {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
        -1.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues sorted by decreasing magnitude.
    pub values: DVector<f64>,
    /// Matching unit eigenvectors as columns, sign-normalized.
    pub vectors: DMatrix<f64>,
    /// Number of eigenvalues above `rank_tol · max|σ|`.
    pub rank: usize,
}

impl SymEig {
    /// The `rank` leading eigenpairs.
    pub fn leading(&self) -> (DVector<f64>, DMatrix<f64>) {
        (
            self.values.rows(0, self.rank).into_owned(),
            self.vectors.columns(0, self.rank).into_owned(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a: f64, &b| a.max(b.abs()))
    }
}

/// Full eigendecomposition of `(M + Mᵀ)/2` with relative rank detection.
pub fn symmetric_eig_rank(m: &DMatrix<f64>, rank_tol: f64) -> Result<SymEig> {
    if !m.is_square() {
        return Err(Error::DimensionError(format!(
            "eigendecomposition of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalError("non-finite entry in symmetric matrix".into()));
    }
    let n = m.nrows();
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps nalgebra's order among equal magnitudes.
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].abs().partial_cmp(&eig.eigenvalues[a].abs()).unwrap()
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[i];
        let mut v = eig.eigenvectors.column(i).into_owned();
        normalize_sign(&mut v);
        vectors.set_column(k, &v);
    }
    let max = values.iter().fold(0.0, |a: f64, &b| a.max(b.abs()));
    let rank = if max == 0.0 {
        0
    } else {
        values.iter().filter(|x| x.abs() > rank_tol * max).count()
    };
    Ok(SymEig { values, vectors, rank })
}

/// Best rank-1 factorization `R ≈ λ μᵀ` with `λ = τζ`, `μ = η` taken from the
/// leading singular triplet. `μ` is sign-normalized; a zero `R` yields `λ = 0`.
pub fn rank_one_svd_factor(r: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let (rows, cols) = r.shape();
    if r.iter().all(|&x| x == 0.0) {
        let mut mu = DVector::zeros(cols);
        if cols > 0 {
            mu[0] = 1.0;
        }
        return Ok((DVector::zeros(rows), mu));
    }
    let svd = thin_svd(r)?;
    let mut lambda = svd.u.column(0) * svd.s[0];
    let mut mu = svd.v.column(0).into_owned();
    if normalize_sign(&mut mu) < 0.0 {
        lambda.neg_mut();
    }
    Ok((lambda, mu))
}

/// Thin SVD `A = U diag(s) Vᵀ`, singular values non-increasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn thin_svd(a: &DMatrix<f64>) -> Result<Svd> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd { u: DMatrix::zeros(m, 0), s: DVector::zeros(0), v: DMatrix::zeros(n, 0) });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalError("non-finite entry in SVD input".into()));
    }
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = fa
        .thin_svd()
        .map_err(|e| Error::NumericalError(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Ok(Svd {
        u: DMatrix::from_fn(m, k, |i, j| u[(i, j)]),
        s: DVector::from_fn(k, |i, _| s[i]),
        v: DMatrix::from_fn(n, k, |i, j| v[(i, j)]),
    })
}

/// Orthogonal polar factor of an `m × p` matrix (`m ≥ p`): `U Wᵀ` from the thin
/// SVD `A = U Σ Wᵀ`. Directions belonging to zero singular values are replaced by
/// a deterministic completion from the identity.
pub fn polar_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, p) = a.shape();
    assert!(m >= p, "polar factor needs at least as many rows as columns");
    let svd = thin_svd(a)?;
    let mut u = svd.u;
    let smax = if p == 0 { 0.0 } else { svd.s[0] };
    let cutoff = smax * (m.max(p) as f64) * f64::EPSILON;
    let deficient: Vec<usize> =
        (0..p).filter(|&k| !(svd.s[k] > cutoff)).collect();
    if !deficient.is_empty() {
        let keep: Vec<usize> = (0..p).filter(|k| !deficient.contains(k)).collect();
        let mut basis: Vec<DVector<f64>> =
            keep.iter().map(|&k| u.column(k).into_owned()).collect();
        let mut candidate = 0;
        for &k in &deficient {
            loop {
                let mut e = DVector::zeros(m);
                e[candidate % m] = 1.0;
                candidate += 1;
                if let Some(q) = orthogonalize(&e, &basis) {
                    u.set_column(k, &q);
                    basis.push(q);
                    break;
                }
            }
        }
    }
    Ok(u * svd.v.transpose())
}

/// Modified Gram-Schmidt of `v` against `basis`; `None` if the residual is
/// below the completion threshold.
fn orthogonalize(v: &DVector<f64>, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
    let mut w = v.clone();
    let scale = v.norm();
    // Two passes keep the result orthogonal to working precision.
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&w);
            w.axpy(-c, b, 1.0);
        }
    }
    let norm = w.norm();
    if norm <= COMPLETION_RESIDUAL * scale.max(1.0) {
        None
    } else {
        Some(w / norm)
    }
}

/// Extends the orthonormal columns of `x` (`n × r`) to an `n × n` orthogonal
/// matrix whose first `r` columns are `x`, appending Gaussian columns.
pub fn complete_orthonormal<R: Rng + ?Sized>(x: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let (n, r) = x.shape();
    let mut basis: Vec<DVector<f64>> = (0..r).map(|k| x.column(k).into_owned()).collect();
    while basis.len() < n {
        let g = gaussian_vector(n, rng);
        if let Some(q) = orthogonalize(&g, &basis) {
            basis.push(q);
        }
    }
    DMatrix::from_columns(&basis)
}

/// `n × r` matrix with orthonormal columns from a Gaussian draw.
pub fn random_orthonormal<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(r <= n, "cannot fit {r} orthonormal vectors in dimension {n}");
    let empty = DMatrix::zeros(n, 0);
    complete_orthonormal(&empty, rng).columns(0, r).into_owned()
}

pub fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Row-major fill so the draw order does not depend on nalgebra's layout.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Moore-Penrose pseudoinverse with singular values below `rtol · σ_max` dropped.
pub fn pinv(m: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    let mut out = DMatrix::zeros(cols, rows);
    if rows == 0 || cols == 0 {
        return Ok(out);
    }
    let svd = thin_svd(m)?;
    let smax = svd.s[0];
    if smax == 0.0 {
        return Ok(out);
    }
    for (k, &s) in svd.s.iter().enumerate() {
        if s > rtol * smax {
            out += svd.v.column(k) * svd.u.column(k).transpose() / s;
        }
    }
    Ok(out)
}

/// Frobenius norm of `Q Qᵀ − I` divided by `√d`.
pub fn orthogonality_error(q: &DMatrix<f64>) -> f64 {
    let d = q.nrows();
    let g = q * q.transpose() - DMatrix::<f64>::identity(d, d);
    g.norm() / (d as f64).sqrt()
}
