//! Symmetric length-2 trains: slice eigendecompositions, with an optional
//! whitening pass for non-orthogonal carriages.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{Decomposition, Meta};
use crate::linalg::{gaussian_matrix, rank_one_svd_factor, symmetric_eig_rank, DEFAULT_RANK_TOL};
use crate::tensor::{multilinear_contract, weighted_slice_sum, DenseTensor, ModeMap};
use crate::train::{SymmetricCarriage, TrainDecomposition};

pub const DEFAULT_PSD_ATTEMPTS: usize = 200;
/// Inner products at or below this magnitude violate genericity.
pub const DEFAULT_DENOM_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct SymmTt2Options {
    pub seed: u64,
    pub rank_tol: f64,
    pub whiten: bool,
    pub psd_attempts: usize,
    pub denom_tol: f64,
    pub contracted_edges: u32,
}

impl Default for SymmTt2Options {
    fn default() -> Self {
        Self {
            seed: 0,
            rank_tol: DEFAULT_RANK_TOL,
            whiten: false,
            psd_attempts: DEFAULT_PSD_ATTEMPTS,
            denom_tol: DEFAULT_DENOM_TOL,
            contracted_edges: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WhiteningMaps {
    /// `D_A^{-1/2} X_Aᵀ`, `r_A × n`.
    pub w_a: DMatrix<f64>,
    pub w_b: DMatrix<f64>,
    /// `X_A D_A^{1/2}`, `n × r_A`.
    pub pinv_a: DMatrix<f64>,
    pub pinv_b: DMatrix<f64>,
    pub attempts: usize,
}

fn check_four_way(t: &DenseTensor) -> Result<usize> {
    let s = t.shape();
    if s.len() != 4 || s.iter().any(|&k| k != s[0]) {
        return Err(Error::DimensionError(format!("expected an n×n×n×n tensor, got {s:?}")));
    }
    Ok(s[0])
}

fn generic_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DenseTensor> {
    let w = gaussian_matrix(n, n, rng);
    Ok(DenseTensor::from_matrix(&w))
}

/// Slice sums over modes (2,3) and (0,1) with fresh generic weights.
fn slice_pair<R: Rng + ?Sized>(t: &DenseTensor, n: usize, rng: &mut R) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let alpha = generic_weights(n, rng)?;
    let beta = generic_weights(n, rng)?;
    let s_a = weighted_slice_sum(t, (0, 1), &alpha)?;
    let s_b = weighted_slice_sum(t, (2, 3), &beta)?;
    Ok((s_a, s_b))
}

/// Whitens `t` with the skinny eigendecompositions of a PSD pair of generic
/// slice sums, redrawing the weights until both sums are PSD.
pub fn whiten<R: Rng + ?Sized>(
    t: &DenseTensor,
    max_attempts: usize,
    rank_tol: f64,
    rng: &mut R,
) -> Result<(DenseTensor, WhiteningMaps)> {
    let n = check_four_way(t)?;
    for attempt in 1..=max_attempts {
        let (c_a, c_b) = slice_pair(t, n, rng)?;
        let ea = symmetric_eig_rank(&c_a, rank_tol)?;
        let eb = symmetric_eig_rank(&c_b, rank_tol)?;
        if !is_psd(&ea.values, ea.max_abs()) || !is_psd(&eb.values, eb.max_abs()) {
            continue;
        }
        let (da, xa) = ea.leading();
        let (db, xb) = eb.leading();
        let w_a = whitening_map(&da, &xa);
        let w_b = whitening_map(&db, &xb);
        let pinv_a = &xa * DMatrix::from_diagonal(&da.map(f64::sqrt));
        let pinv_b = &xb * DMatrix::from_diagonal(&db.map(f64::sqrt));
        let tbar = multilinear_contract(
            t,
            &[
                ModeMap::Matrix(&w_a),
                ModeMap::Matrix(&w_a),
                ModeMap::Matrix(&w_b),
                ModeMap::Matrix(&w_b),
            ],
        )?;
        return Ok((tbar, WhiteningMaps { w_a, w_b, pinv_a, pinv_b, attempts: attempt }));
    }
    Err(Error::PsdSearchFailed { attempts: max_attempts })
}

fn is_psd(values: &DVector<f64>, max_abs: f64) -> bool {
    values.iter().all(|&s| s >= -PSD_TOL * max_abs)
}

fn whitening_map(d: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&d.map(|s| 1.0 / s.sqrt())) * x.transpose()
}

/// `R_ij = T(U_i, U_i, V_j, V_j) / ⟨inner_u_i, inner_v_j⟩^p`.
///
/// The contraction uses `u`, `v` (possibly whitened); the denominators use the
/// original-space `inner_u`, `inner_v`.
pub fn coefficient_matrix(
    t: &DenseTensor,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    inner_u: &DMatrix<f64>,
    inner_v: &DMatrix<f64>,
    p: u32,
    denom_tol: f64,
) -> Result<DMatrix<f64>> {
    check_four_way_loose(t)?;
    let (ut, vt) = (u.transpose(), v.transpose());
    let full = multilinear_contract(
        t,
        &[ModeMap::Matrix(&ut), ModeMap::Matrix(&ut), ModeMap::Matrix(&vt), ModeMap::Matrix(&vt)],
    )?;
    let gram = inner_u.transpose() * inner_v;
    let (ra, rb) = (u.ncols(), v.ncols());
    if gram.shape() != (ra, rb) {
        return Err(Error::DimensionError(format!(
            "denominator vectors give a {:?} Gram matrix, expected ({ra}, {rb})",
            gram.shape()
        )));
    }
    let mut r = DMatrix::zeros(ra, rb);
    for i in 0..ra {
        for j in 0..rb {
            let g = gram[(i, j)];
            if g.abs() <= denom_tol {
                return Err(Error::DegenerateInnerProduct { row: i, col: j, value: g });
            }
            r[(i, j)] = full.get(&[i, i, j, j]) / g.powi(p as i32);
        }
    }
    Ok(r)
}

fn check_four_way_loose(t: &DenseTensor) -> Result<()> {
    if t.order() != 4 {
        return Err(Error::DimensionError(format!("expected a 4-way tensor, got {:?}", t.shape())));
    }
    Ok(())
}

/// Recovers both carriages of a symmetric length-2 train.
pub fn decompose_symm_tt2(t: &DenseTensor, opts: &SymmTt2Options) -> Result<Decomposition> {
    let n = check_four_way(t)?;
    if !t.is_finite() {
        return Err(Error::NumericalError("input tensor has non-finite entries".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut meta = Meta {
        seed: opts.seed,
        rank_tol: opts.rank_tol,
        whitened: Some(opts.whiten),
        contracted_edges: Some(opts.contracted_edges),
        ..Meta::default()
    };

    let (work, maps) = if opts.whiten {
        let (tbar, maps) = whiten(t, opts.psd_attempts, opts.rank_tol, &mut rng)?;
        meta.psd_attempts = Some(maps.attempts);
        if maps.w_a.nrows() == 0 || maps.w_b.nrows() == 0 {
            return Err(Error::EmptyDecomposition);
        }
        (tbar, Some(maps))
    } else {
        (t.clone(), None)
    };

    let m = work.shape()[0];
    let m_b = work.shape()[2];
    let alpha = generic_weights(m_b, &mut rng)?;
    let beta = generic_weights(m, &mut rng)?;
    let s_a = weighted_slice_sum(&work, (0, 1), &alpha)?;
    let s_b = weighted_slice_sum(&work, (2, 3), &beta)?;
    let (_, ubar) = symmetric_eig_rank(&s_a, opts.rank_tol)?.leading();
    let (_, vbar) = symmetric_eig_rank(&s_b, opts.rank_tol)?.leading();
    if ubar.ncols() == 0 || vbar.ncols() == 0 {
        return Err(Error::EmptyDecomposition);
    }

    let (u, v, scale_u, scale_v) = match &maps {
        None => {
            let ones_u = DVector::from_element(ubar.ncols(), 1.0);
            let ones_v = DVector::from_element(vbar.ncols(), 1.0);
            (ubar.clone(), vbar.clone(), ones_u, ones_v)
        }
        Some(maps) => {
            let (u, su) = pull_back(&maps.pinv_a, &ubar);
            let (v, sv) = pull_back(&maps.pinv_b, &vbar);
            (u, v, su, sv)
        }
    };
    debug_assert_eq!(u.nrows(), n);

    let r = coefficient_matrix(&work, &ubar, &vbar, &u, &v, opts.contracted_edges, opts.denom_tol)?;
    let (lambda, mu) = rank_one_svd_factor(&r)?;
    let lambda = lambda.component_mul(&scale_u);
    let mu = mu.component_mul(&scale_v);
    if lambda.iter().chain(mu.iter()).any(|&c| c == 0.0) {
        return Err(Error::NumericalError("recovered a zero coefficient".into()));
    }

    let train = TrainDecomposition::new(
        vec![
            crate::train::Carriage::Symmetric(SymmetricCarriage { coefficients: lambda, vectors: u }),
            crate::train::Carriage::Symmetric(SymmetricCarriage { coefficients: mu, vectors: v }),
        ],
        opts.contracted_edges,
    )?;
    Ok(Decomposition { train, meta })
}

/// `u_i = W†ū_i / ‖W†ū_i‖`, also returning the squared norms used to rescale
/// the whitened coefficients.
fn pull_back(pinv: &DMatrix<f64>, whitened: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut u = pinv * whitened;
    let mut scale = DVector::zeros(u.ncols());
    for (i, mut col) in u.column_iter_mut().enumerate() {
        let norm = col.norm();
        scale[i] = norm * norm;
        col /= norm;
    }
    (u, scale)
}
