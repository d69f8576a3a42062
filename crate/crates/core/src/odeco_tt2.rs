//! Non-symmetric odeco trains of length 2, by reduction to DODD.
//!
//! For `T = Σ_ij λ_i μ_j ⟨c_i, f_j⟩ a_i ⊗ b_i ⊗ d_j ⊗ e_j` with orthonormal sets
//! `{a}, {b}, {c}` and `{d}, {e}, {f}`, the outer sets come from generic slice
//! sums (each is a thin SVD `A diag(s) Bᵀ`). Contracting against them gives
//!
//! ```text
//! X̄_ij = T(a_i, b_i, d_j, e_j) = λ_i ⟨c_i, f_j⟩ μ_j,   i.e.  X̄ = Λ (CᵀF) M,
//! ```
//!
//! and `CᵀF` is the top-left block of an orthogonal matrix, so the zero-inflated
//! `X̄` has a DODD `ΛQM`. The bond itself is invisible in `T`, so any bond
//! vectors with `⟨c_i, f_j⟩ = Q_ij` reproduce it: rows of `Q` on the left and
//! standard basis vectors on the right.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dodd::{
    general_dodd, procrustes_square_dodd, sinkhorn_square_dodd, zero_inflate, DoddFactors,
    DoddMethod, ProcrustesOptions, SinkhornOptions,
};
use crate::error::{Error, Result};
use crate::io::{Decomposition, DoddSummary, Meta};
use crate::linalg::{gaussian_matrix, symmetric_eig_rank, DEFAULT_RANK_TOL};
use crate::tensor::{multilinear_contract, weighted_slice_sum, DenseTensor, ModeMap};
use crate::train::{Carriage, OdecoCarriage, TrainDecomposition};

#[derive(Debug, Clone, Copy)]
pub struct OdecoTt2Options {
    pub seed: u64,
    pub rank_tol: f64,
    /// Inflation size; `max(m, n)` when unset.
    pub d: Option<usize>,
    /// `None` picks Sinkhorn for square full inflation, the general solver otherwise.
    pub method: Option<DoddMethod>,
    pub sinkhorn: SinkhornOptions,
    pub procrustes: ProcrustesOptions,
}

impl Default for OdecoTt2Options {
    fn default() -> Self {
        Self {
            seed: 0,
            rank_tol: DEFAULT_RANK_TOL,
            d: None,
            method: None,
            sinkhorn: SinkhornOptions::default(),
            procrustes: ProcrustesOptions::general(),
        }
    }
}

/// Orthonormal factors of a slice sum `S = A diag(s) Bᵀ`, read from the
/// eigendecomposition of `SSᵀ`. Rank counts `s_i > rank_tol · max s`.
fn outer_pair(s: &DMatrix<f64>, rank_tol: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = symmetric_eig_rank(&(s * s.transpose()), 0.0)?;
    let st = s.transpose();
    let images: Vec<DVector<f64>> = eig.vectors.column_iter().map(|a| &st * a).collect();
    let top = images.iter().fold(0.0_f64, |m, b| m.max(b.norm()));
    if top == 0.0 {
        return Err(Error::EmptyDecomposition);
    }
    let rank = images.iter().take_while(|b| b.norm() > rank_tol * top).count();
    let a = eig.vectors.columns(0, rank).into_owned();
    let b = DMatrix::from_columns(
        &images[..rank].iter().map(|b| b / b.norm()).collect::<Vec<_>>(),
    );
    Ok((a, b))
}

fn weights<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseTensor {
    DenseTensor::from_matrix(&gaussian_matrix(rows, cols, rng))
}

/// The `m × n` coupling matrix `X̄_ij = T(a_i, b_i, d_j, e_j)`.
pub fn coupling_matrix(
    t: &DenseTensor,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    d: &DMatrix<f64>,
    e: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (at, bt, dt, et) = (a.transpose(), b.transpose(), d.transpose(), e.transpose());
    let full = multilinear_contract(
        t,
        &[ModeMap::Matrix(&at), ModeMap::Matrix(&bt), ModeMap::Matrix(&dt), ModeMap::Matrix(&et)],
    )?;
    if a.ncols() != b.ncols() || d.ncols() != e.ncols() {
        return Err(Error::DimensionError("paired vector sets differ in rank".into()));
    }
    Ok(DMatrix::from_fn(a.ncols(), d.ncols(), |i, j| full.get(&[i, i, j, j])))
}

fn run_dodd(x_bar: &DMatrix<f64>, d: usize, method: DoddMethod, opts: &OdecoTt2Options) -> Result<DoddFactors> {
    let (m, n) = x_bar.shape();
    match method {
        DoddMethod::Sinkhorn | DoddMethod::Procrustes if m != n || d != m => {
            Err(Error::DimensionError(format!(
                "square DODD needs m = n = d, got {m}x{n} with d = {d}"
            )))
        }
        DoddMethod::Sinkhorn => sinkhorn_square_dodd(x_bar, &opts.sinkhorn),
        DoddMethod::Procrustes => procrustes_square_dodd(x_bar, &opts.procrustes),
        DoddMethod::General => general_dodd(x_bar, d, &opts.procrustes),
    }
}

pub fn decompose_odeco_tt2(t: &DenseTensor, opts: &OdecoTt2Options) -> Result<Decomposition> {
    if t.order() != 4 {
        return Err(Error::DimensionError(format!("expected a 4-way tensor, got {:?}", t.shape())));
    }
    if !t.is_finite() {
        return Err(Error::NumericalError("input tensor has non-finite entries".into()));
    }
    let shape = t.shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let left = weighted_slice_sum(t, (0, 1), &weights(shape[2], shape[3], &mut rng))?;
    let right = weighted_slice_sum(t, (2, 3), &weights(shape[0], shape[1], &mut rng))?;
    let (a, b) = outer_pair(&left, opts.rank_tol)?;
    let (dv, ev) = outer_pair(&right, opts.rank_tol)?;

    let x_bar = coupling_matrix(t, &a, &b, &dv, &ev)?;
    let (m, n) = x_bar.shape();
    let d = opts.d.unwrap_or(m.max(n));
    let method = opts.method.unwrap_or(if m == n && d == m {
        DoddMethod::Sinkhorn
    } else {
        DoddMethod::General
    });
    let factors = run_dodd(&x_bar, d, method, opts)?;
    let inflated = zero_inflate(&x_bar, d)?;

    let bond_left = factors.q.rows(0, m).transpose();
    let bond_right = DMatrix::<f64>::identity(d, n);
    let lambda = factors.lambda.rows(0, m).into_owned();
    let mu = factors.mu.rows(0, n).into_owned();
    let train = TrainDecomposition::new(
        vec![
            Carriage::Odeco(OdecoCarriage::new(lambda, a, b, bond_left)?),
            Carriage::Odeco(OdecoCarriage::new(mu, dv, ev, bond_right)?),
        ],
        1,
    )?;
    let meta = Meta {
        seed: opts.seed,
        rank_tol: opts.rank_tol,
        dodd: Some(DoddSummary {
            method: format!("{method:?}").to_lowercase(),
            d,
            iterations: factors.iterations,
            converged: factors.converged,
            reconstruction_error: factors.reconstruction_error(&inflated),
        }),
        ..Meta::default()
    };
    Ok(Decomposition { train, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthonormal;
    use crate::tensor::relative_error;
    use crate::train::assemble_train;

    fn instance(dims: [usize; 4], bond: usize, m: usize, n: usize, seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coef = |r: usize| DVector::from_fn(r, |i, _| 0.5 + i as f64 * 0.37);
        let l = OdecoCarriage::new(
            coef(m),
            random_orthonormal(dims[0], m, &mut rng),
            random_orthonormal(dims[1], m, &mut rng),
            random_orthonormal(bond, m, &mut rng),
        )
        .unwrap();
        let r = OdecoCarriage::new(
            coef(n),
            random_orthonormal(dims[2], n, &mut rng),
            random_orthonormal(dims[3], n, &mut rng),
            random_orthonormal(bond, n, &mut rng),
        )
        .unwrap();
        assemble_train(&TrainDecomposition::new(vec![Carriage::Odeco(l), Carriage::Odeco(r)], 1).unwrap())
            .unwrap()
    }

    #[test]
    fn rank_one_standard_basis() {
        let e = |n: usize| {
            let mut m = DMatrix::zeros(n, 1);
            m[(0, 0)] = 1.0;
            m
        };
        let one = DVector::from_element(1, 1.0);
        let l = OdecoCarriage::new(one.clone(), e(2), e(2), e(2)).unwrap();
        let r = OdecoCarriage::new(one, e(2), e(2), e(2)).unwrap();
        let t = assemble_train(&TrainDecomposition::new(vec![Carriage::Odeco(l), Carriage::Odeco(r)], 1).unwrap())
            .unwrap();
        let out = decompose_odeco_tt2(&t, &OdecoTt2Options::default()).unwrap();
        let back = assemble_train(&out.train).unwrap();
        assert!(relative_error(&back, &t).unwrap() < 1e-14);
    }

    #[test]
    fn full_rank_square_uses_sinkhorn() {
        let t = instance([3, 3, 3, 3], 3, 3, 3, 5);
        let out = decompose_odeco_tt2(&t, &OdecoTt2Options::default()).unwrap();
        assert_eq!(out.meta.dodd.as_ref().unwrap().method, "sinkhorn");
        let back = assemble_train(&out.train).unwrap();
        assert!(relative_error(&back, &t).unwrap() < 1e-8);
    }

    #[test]
    fn rectangular_with_bond_inflation() {
        let t = instance([4, 3, 3, 4], 6, 3, 2, 2);
        let opts = OdecoTt2Options { d: Some(12), ..Default::default() };
        let out = decompose_odeco_tt2(&t, &opts).unwrap();
        let back = assemble_train(&out.train).unwrap();
        assert!(relative_error(&back, &t).unwrap() < 1e-8);
    }

    #[test]
    fn square_method_rejects_rectangular() {
        let t = instance([4, 3, 3, 4], 6, 3, 2, 2);
        let opts = OdecoTt2Options { method: Some(DoddMethod::Sinkhorn), ..Default::default() };
        assert!(matches!(decompose_odeco_tt2(&t, &opts), Err(Error::DimensionError(_))));
    }
}
