//! Symmetric orthogonal trains of length `L ≥ 3` under the decreasing ranks
//! condition.
//!
//! Mode layout of the `(L+2)`-way input: carriage 1 owns modes 0 and 1,
//! carriage `j` (1 < j < L) owns mode `j`, carriage `L` owns modes `L` and `L+1`.
//! Both end vector sets come from a single eigendecomposition each; interior
//! sets are found by two sweeps of kernel completion, one from each end, and
//! the higher-rank result wins at each position.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{Decomposition, Direction, Meta, PositionProvenance};
use crate::linalg::{
    complete_orthonormal, gaussian_vector, normalize_sign, pinv, symmetric_eig_rank, thin_svd,
    DEFAULT_RANK_TOL,
};
use crate::symm_tt2::DEFAULT_DENOM_TOL;
use crate::tensor::{multilinear_contract, DenseTensor, ModeMap};
use crate::train::{Carriage, SymmetricCarriage, TrainDecomposition};

/// Fresh generic vectors tried before giving up on an end contraction.
pub const END_VECTOR_ATTEMPTS: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct SymmTtlOptions {
    pub seed: u64,
    pub rank_tol: f64,
    pub denom_tol: f64,
    /// Largest accepted `σ_min / σ_max` of the symmetrizer system.
    pub symmetrizer_tol: f64,
    pub als_max_iter: usize,
    pub als_tol: f64,
}

impl Default for SymmTtlOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            rank_tol: DEFAULT_RANK_TOL,
            denom_tol: DEFAULT_DENOM_TOL,
            symmetrizer_tol: 1e-4,
            als_max_iter: 100,
            als_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub direction: Direction,
    /// Vector set of the end carriage the sweep starts from.
    pub end: DMatrix<f64>,
    /// Sets for carriages `2..=L−1`, in carriage order. Empty (`n × 0`) from
    /// the termination point on.
    pub interior: Vec<DMatrix<f64>>,
    /// 1-based carriage index where the rank went up, if it did.
    pub terminated_at: Option<usize>,
    /// Nullity of the symmetrizer system at each step, in sweep order.
    pub nullities: Vec<usize>,
}

impl SweepResult {
    /// Rank found for carriage `j` (1-based interior index).
    pub fn rank_at(&self, j: usize) -> usize {
        self.interior[j - 2].ncols()
    }
}

fn train_length(t: &DenseTensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 5 {
        return Err(Error::DimensionError(format!(
            "a train of length >= 3 needs >= 5 modes, got {s:?}"
        )));
    }
    if s.iter().any(|&k| k != s[0]) {
        return Err(Error::DimensionError(format!("all modes must share one size, got {s:?}")));
    }
    Ok((s.len() - 2, s[0]))
}

/// Contracts every mode except `free` with `v`, returning the `free.0 × free.1` matrix.
fn two_mode_slice(t: &DenseTensor, free: (usize, usize), v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let maps: Vec<ModeMap<'_>> = (0..t.order())
        .map(|k| if k == free.0 || k == free.1 { ModeMap::Free } else { ModeMap::Vector(v) })
        .collect();
    multilinear_contract(t, &maps)?.to_matrix()
}

/// Orthonormal vectors of an end carriage, from the nonzero eigenpairs of
/// `T(·,·,v,…,v)` (left) or `T(v,…,v,·,·)` (right).
pub fn extract_end_vectors<R: Rng + ?Sized>(
    t: &DenseTensor,
    side: Side,
    rank_tol: f64,
    rng: &mut R,
) -> Result<(usize, DMatrix<f64>)> {
    let (l, n) = train_length(t)?;
    let free = match side {
        Side::Left => (0, 1),
        Side::Right => (l, l + 1),
    };
    let floor = t.norm() * f64::EPSILON;
    for _ in 0..END_VECTOR_ATTEMPTS {
        let v = gaussian_vector(n, rng);
        let m = two_mode_slice(t, free, &v)?;
        if m.amax() <= floor {
            continue;
        }
        let eig = symmetric_eig_rank(&m, rank_tol)?;
        let (_, x) = eig.leading();
        return Ok((eig.rank, x));
    }
    Err(Error::DegenerateContraction { attempts: END_VECTOR_ATTEMPTS })
}

#[derive(Debug, Clone)]
pub struct Symmetrizer {
    /// Unit-norm nullspace vector, sign-normalized.
    pub ell: DVector<f64>,
    pub nullity: usize,
    /// `σ_min / max(σ_max, max|T̄|)` of the system (0 when it vanishes).
    pub ratio: f64,
}

/// Relative singular-value threshold for counting the nullity.
const NULLITY_TOL: f64 = 1e-10;

/// Row scaling that makes `diag(ℓ) · T̄` symmetric.
///
/// One row per pair `i < j`, with `T̄_ij` in column `i` and `−T̄_ji` in column `j`;
/// `ℓ` is the right singular vector of the smallest singular value.
pub fn symmetrizing_scaling(tbar: &DMatrix<f64>, max_ratio: f64) -> Result<Symmetrizer> {
    let r = tbar.nrows();
    if r == 0 || !tbar.is_square() {
        return Err(Error::DimensionError(format!("symmetrizer of a {:?} block", tbar.shape())));
    }
    if r == 1 {
        return Ok(Symmetrizer { ell: DVector::from_element(1, 1.0), nullity: 1, ratio: 0.0 });
    }
    let pairs = r * (r - 1) / 2;
    // Zero rows pad the system so the SVD yields all `r` right singular vectors.
    let mut sys = DMatrix::zeros(pairs.max(r), r);
    let mut row = 0;
    for i in 0..r {
        for j in i + 1..r {
            sys[(row, i)] = tbar[(i, j)];
            sys[(row, j)] = -tbar[(j, i)];
            row += 1;
        }
    }
    let svd = thin_svd(&sys)?;
    let s = &svd.s;
    // Measured against the block itself, so a system that vanishes up to
    // rounding (e.g. `T̄ = I`) counts as fully null.
    let scale = s[0].max(tbar.amax());
    let nullity = if scale == 0.0 { r } else { s.iter().filter(|&&x| x <= NULLITY_TOL * scale).count() };
    let k = s.imin();
    let ratio = if scale == 0.0 { 0.0 } else { s[k] / scale };
    if ratio > max_ratio {
        return Err(Error::NoSymmetrizer { ratio });
    }
    let mut ell = svd.v.column(k).into_owned();
    ell /= ell.norm();
    normalize_sign(&mut ell);
    Ok(Symmetrizer { ell, nullity, ratio })
}

/// Fills the unknown bottom-right `(n−r) × (n−r)` block of `s` so every row
/// lies in the row space of the first `r` rows.
///
/// The first `r` rows and columns must already be filled and consistent.
/// Equivalent to `S[r:, r:] = S[r:, :r] · K⁺ · S[:r, r:]` with `K = S[:r, :r]`.
pub fn kernel_complete(s: &DMatrix<f64>, r: usize, rank_tol: f64) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    if !s.is_square() || r > n {
        return Err(Error::DimensionError(format!("cannot complete {:?} from {r} rows", s.shape())));
    }
    if r == n {
        return Ok(s.clone());
    }
    if r == 0 {
        return Err(Error::CompletionAmbiguous("no known rows".into()));
    }
    let k = s.view((0, 0), (r, r)).into_owned();
    let lower = s.view((r, 0), (n - r, r)).into_owned();
    let upper = s.view((0, r), (r, n - r)).into_owned();
    let k_pinv = pinv(&k, rank_tol)?;
    // Combination coefficients of each unknown row in terms of the known rows.
    let coeffs = &lower * &k_pinv;
    let residual = (&coeffs * &k - &lower).norm();
    let scale = s.norm();
    if residual > 1e-6 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::CompletionAmbiguous(format!(
            "known columns are inconsistent with the row space (residual {residual:.3e})"
        )));
    }
    let fill = &coeffs * &upper;
    let mut out = s.clone();
    for i in r..n {
        for j in r..n {
            out[(i, j)] = 0.5 * (fill[(i - r, j - r)] + fill[(j - r, i - r)]);
        }
    }
    Ok(out)
}

/// One direction of kernel completion across the interior carriages.
pub fn directional_sweep<R: Rng + ?Sized>(
    t: &DenseTensor,
    direction: Direction,
    end: &DMatrix<f64>,
    opts: &SymmTtlOptions,
    rng: &mut R,
) -> Result<SweepResult> {
    let (l, n) = train_length(t)?;
    let mut interior = vec![DMatrix::zeros(n, 0); l - 2];
    let mut nullities = Vec::new();
    let mut prev = end.clone();
    let positions: Vec<usize> = match direction {
        Direction::Lr => (2..l).collect(),
        Direction::Rl => (2..l).rev().collect(),
    };
    let mut terminated_at = None;
    for &j in &positions {
        let r = prev.ncols();
        if r == 0 {
            return Err(Error::EmptyDecomposition);
        }
        let a = complete_orthonormal(&prev, rng);
        let v = gaussian_vector(n, rng);
        // Rows always index the previous carriage's mode.
        let m = match direction {
            Direction::Lr => two_mode_slice(t, (j - 1, j), &v)?,
            Direction::Rl => two_mode_slice(t, (j, j + 1), &v)?.transpose(),
        };
        let mut s = a.transpose() * m * &a;
        let sym = symmetrizing_scaling(&s.view((0, 0), (r, r)).into_owned(), opts.symmetrizer_tol)?;
        nullities.push(sym.nullity);
        for i in 0..r {
            let li = sym.ell[i];
            s.row_mut(i).scale_mut(li);
        }
        for i in 0..r {
            for c in r..n {
                s[(c, i)] = s[(i, c)];
            }
        }
        for i in 0..r {
            for c in 0..i {
                let avg = 0.5 * (s[(i, c)] + s[(c, i)]);
                s[(i, c)] = avg;
                s[(c, i)] = avg;
            }
        }
        for i in r..n {
            for c in r..n {
                s[(i, c)] = 0.0;
            }
        }
        let completed = kernel_complete(&s, r, opts.rank_tol)?;
        let eig = symmetric_eig_rank(&(&a * completed * a.transpose()), opts.rank_tol)?;
        let (_, next) = eig.leading();
        if next.ncols() == 0 {
            return Err(Error::EmptyDecomposition);
        }
        if next.ncols() > r {
            terminated_at = Some(j);
            break;
        }
        interior[j - 2] = next.clone();
        prev = next;
    }
    Ok(SweepResult { direction, end: end.clone(), interior, terminated_at, nullities })
}

/// Rank-1 alternating least squares. Starts every factor from the fiber through
/// the largest-magnitude entry, so an exact rank-1 input is fit in one sweep.
///
/// Factors after the first are unit-norm and sign-normalized.
pub fn rank_one_als(r: &DenseTensor, max_iter: usize, tol: f64) -> Vec<DVector<f64>> {
    let shape = r.shape().to_vec();
    let order = shape.len();
    let (best, &peak) = r
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .expect("tensor has at least one entry");
    if peak == 0.0 {
        return shape.iter().map(|&n| DVector::zeros(n)).collect();
    }
    let mut index = vec![0usize; order];
    let mut rem = best;
    for k in (0..order).rev() {
        index[k] = rem % shape[k];
        rem /= shape[k];
    }
    let mut factors: Vec<DVector<f64>> = (0..order)
        .map(|k| {
            DVector::from_fn(shape[k], |i, _| {
                let mut idx = index.clone();
                idx[k] = i;
                r.get(&idx)
            })
        })
        .collect();

    let mut last = f64::INFINITY;
    for _ in 0..max_iter.max(1) {
        for k in 0..order {
            let maps: Vec<ModeMap<'_>> = (0..order)
                .map(|m| if m == k { ModeMap::Free } else { ModeMap::Vector(&factors[m]) })
                .collect();
            let proj = multilinear_contract(r, &maps).expect("factor sizes match the tensor");
            let denom: f64 =
                (0..order).filter(|&m| m != k).map(|m| factors[m].norm_squared()).product();
            factors[k] = DVector::from_column_slice(proj.data()) / denom;
        }
        let refs: Vec<&[f64]> = factors.iter().map(|f| f.as_slice()).collect();
        let fit = DenseTensor::outer(&refs);
        let err = crate::tensor::relative_error(&fit, r).unwrap_or(0.0);
        if err <= tol || (last - err).abs() <= tol * last.max(1.0) {
            break;
        }
        last = err;
    }

    for k in 1..order {
        let norm = factors[k].norm();
        if norm > 0.0 {
            factors[k] /= norm;
            factors[0] *= norm;
        }
        if normalize_sign(&mut factors[k]) < 0.0 {
            factors[0].neg_mut();
        }
    }
    factors
}

/// `R[i_1..i_L] = T(x¹_{i_1}, x¹_{i_1}, x²_{i_2}, …, x^L_{i_L}, x^L_{i_L}) / ∏⟨x^k, x^{k+1}⟩`.
pub fn coefficient_tensor(t: &DenseTensor, sets: &[DMatrix<f64>], denom_tol: f64) -> Result<DenseTensor> {
    let l = sets.len();
    if t.order() != l + 2 {
        return Err(Error::DimensionError(format!(
            "{l} vector sets for a {}-way tensor",
            t.order()
        )));
    }
    let transposed: Vec<DMatrix<f64>> = sets.iter().map(|x| x.transpose()).collect();
    let mut maps = Vec::with_capacity(l + 2);
    maps.push(ModeMap::Matrix(&transposed[0]));
    for x in &transposed {
        maps.push(ModeMap::Matrix(x));
    }
    maps.push(ModeMap::Matrix(&transposed[l - 1]));
    let full = multilinear_contract(t, &maps)?;
    let grams: Vec<DMatrix<f64>> =
        sets.windows(2).map(|w| w[0].transpose() * &w[1]).collect();

    let ranks: Vec<usize> = sets.iter().map(|x| x.ncols()).collect();
    let mut out = DenseTensor::zeros(&ranks);
    let mut idx = vec![0usize; l];
    let mut full_idx = vec![0usize; l + 2];
    for value in out.data_mut().iter_mut() {
        full_idx[0] = idx[0];
        full_idx[1..=l].copy_from_slice(&idx);
        full_idx[l + 1] = idx[l - 1];
        let mut denom = 1.0;
        for (k, g) in grams.iter().enumerate() {
            let ip = g[(idx[k], idx[k + 1])];
            if ip.abs() <= denom_tol {
                return Err(Error::DegenerateInnerProduct { row: idx[k], col: idx[k + 1], value: ip });
            }
            denom *= ip;
        }
        *value = full.get(&full_idx) / denom;
        crate::tensor::increment(&mut idx, &ranks);
    }
    Ok(out)
}

/// Decreasing ranks condition: every rank is the tail of a non-increasing run
/// from the left end or the head of a non-decreasing run to the right end.
pub fn satisfies_drc(ranks: &[usize]) -> bool {
    let l = ranks.len();
    (0..l).all(|j| {
        ranks[..=j].windows(2).all(|w| w[0] >= w[1]) || ranks[j..].windows(2).all(|w| w[0] <= w[1])
    })
}

/// Recovers every carriage of a symmetric orthogonal train of length `L ≥ 3`.
pub fn decompose_symm_ttl(t: &DenseTensor, opts: &SymmTtlOptions) -> Result<Decomposition> {
    let (l, _) = train_length(t)?;
    if !t.is_finite() {
        return Err(Error::NumericalError("input tensor has non-finite entries".into()));
    }
    // Independent streams keep the two sweeps reproducible in isolation.
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(s);
        rng
    };
    let mut rng_ends = stream(0);
    let (_, left) = extract_end_vectors(t, Side::Left, opts.rank_tol, &mut rng_ends)?;
    let (_, right) = extract_end_vectors(t, Side::Right, opts.rank_tol, &mut rng_ends)?;
    if left.ncols() == 0 || right.ncols() == 0 {
        return Err(Error::EmptyDecomposition);
    }
    let lr = directional_sweep(t, Direction::Lr, &left, opts, &mut stream(1))?;
    let rl = directional_sweep(t, Direction::Rl, &right, opts, &mut stream(2))?;

    let mut sets = vec![left];
    let mut positions = Vec::with_capacity(l - 2);
    for j in 2..l {
        let (a, b) = (lr.rank_at(j), rl.rank_at(j));
        if a == 0 && b == 0 {
            return Err(Error::DecompositionFailed(format!(
                "both sweeps terminated before carriage {j}"
            )));
        }
        let (direction, set) = if a >= b {
            (Direction::Lr, lr.interior[j - 2].clone())
        } else {
            (Direction::Rl, rl.interior[j - 2].clone())
        };
        positions.push(PositionProvenance { position: j, direction, rank: set.ncols() });
        sets.push(set);
    }
    sets.push(right);

    let r = coefficient_tensor(t, &sets, opts.denom_tol)?;
    let factors = rank_one_als(&r, opts.als_max_iter, opts.als_tol);
    let carriages = sets
        .into_iter()
        .zip(factors)
        .map(|(vectors, coefficients)| {
            if coefficients.iter().any(|&c| c == 0.0) {
                return Err(Error::NumericalError("recovered a zero coefficient".into()));
            }
            Ok(Carriage::Symmetric(SymmetricCarriage { coefficients, vectors }))
        })
        .collect::<Result<Vec<_>>>()?;
    let train = TrainDecomposition::new(carriages, 1)?;
    let meta = Meta {
        seed: opts.seed,
        rank_tol: opts.rank_tol,
        positions: Some(positions),
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

    pub(crate) fn instance(n: usize, ranks: &[usize], seed: u64) -> (DenseTensor, Vec<DMatrix<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sets = Vec::new();
        let carriages: Vec<SymmetricCarriage> = ranks
            .iter()
            .map(|&r| {
                let x = random_orthonormal(n, r, &mut rng);
                sets.push(x.clone());
                let lam = DVector::from_fn(r, |_, _| {
                    let m: f64 = rng.random_range(0.5..2.0);
                    if rng.random::<bool>() { m } else { -m }
                });
                SymmetricCarriage::new(lam, x).unwrap()
            })
            .collect();
        let t = assemble_train(&TrainDecomposition::symmetric(carriages).unwrap()).unwrap();
        (t, sets)
    }

    /// Largest principal-angle sine between two column spaces of equal dimension.
    fn subspace_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        assert_eq!(a.ncols(), b.ncols());
        let proj = b * b.transpose();
        (a - proj * a).norm()
    }

    #[test]
    fn drc_examples() {
        assert!(satisfies_drc(&[2, 2, 2]));
        assert!(satisfies_drc(&[2, 3, 4]));
        assert!(satisfies_drc(&[4, 2, 3]));
        assert!(!satisfies_drc(&[2, 4, 3]));
        assert!(!satisfies_drc(&[1, 3, 2, 3, 1]));
    }

    #[test]
    fn rank_one_end_vector() {
        let mut e = DMatrix::zeros(2, 1);
        e[(0, 0)] = 1.0;
        let c = SymmetricCarriage::new(DVector::from_element(1, 1.0), e.clone()).unwrap();
        let t = assemble_train(&TrainDecomposition::symmetric(vec![c.clone(), c.clone(), c]).unwrap())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (rank, x) = extract_end_vectors(&t, Side::Left, DEFAULT_RANK_TOL, &mut rng).unwrap();
        assert_eq!(rank, 1);
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn end_vectors_span_generator() {
        let (t, sets) = instance(4, &[2, 2, 2], 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (rank, x) = extract_end_vectors(&t, Side::Left, DEFAULT_RANK_TOL, &mut rng).unwrap();
        assert_eq!(rank, 2);
        assert!(subspace_gap(&x, &sets[0]) < 1e-8);
        let (_, y) = extract_end_vectors(&t, Side::Right, DEFAULT_RANK_TOL, &mut rng).unwrap();
        assert!(subspace_gap(&y, &sets[2]) < 1e-8);
    }

    #[test]
    fn zero_tensor_is_degenerate() {
        let t = DenseTensor::zeros(&[2; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = extract_end_vectors(&t, Side::Left, DEFAULT_RANK_TOL, &mut rng).unwrap_err();
        assert!(matches!(err, Error::DegenerateContraction { attempts: END_VECTOR_ATTEMPTS }));
    }

    #[test]
    fn symmetrizer_counterexamples() {
        let t = DMatrix::from_row_slice(2, 2, &[1.7, 0.0, 0.0, 0.0]);
        assert_eq!(symmetrizing_scaling(&t, 1e-4).unwrap().nullity, 2);
        let t = DMatrix::<f64>::identity(3, 3);
        assert_eq!(symmetrizing_scaling(&t, 1e-4).unwrap().nullity, 3);
        let t = DMatrix::from_element(1, 1, 4.0);
        assert_eq!(symmetrizing_scaling(&t, 1e-4).unwrap().ell[0], 1.0);
    }

    #[test]
    fn symmetrizer_rejects_generic_matrix() {
        let t = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, -4.0, 5.0, 6.0, 7.0, 8.0, -9.0]);
        assert!(matches!(symmetrizing_scaling(&t, 1e-4), Err(Error::NoSymmetrizer { .. })));
    }

    #[test]
    fn completion_of_full_block_is_identity() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(kernel_complete(&s, 2, DEFAULT_RANK_TOL).unwrap(), s);
    }

    #[test]
    fn completion_recovers_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_orthonormal(4, 4, &mut rng);
        let m = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.3, -0.4, 0.0, 0.0]));
        let full = &q * m * q.transpose();
        let mut s = full.clone();
        s.view_mut((2, 2), (2, 2)).fill(0.0);
        let done = kernel_complete(&s, 2, DEFAULT_RANK_TOL).unwrap();
        assert!((done - full).amax() < 1e-9);
    }

    #[test]
    fn completion_rank_one_inner() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_orthonormal(4, 4, &mut rng);
        let x1 = random_orthonormal(4, 4, &mut rng);
        let m = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 0.0, 0.0, 0.0]));
        let full = &q * m * q.transpose();
        let mut s = full.clone();
        s.view_mut((2, 2), (2, 2)).fill(0.0);
        let done = kernel_complete(&s, 2, DEFAULT_RANK_TOL).unwrap();
        let eig = symmetric_eig_rank(&(&x1 * done * x1.transpose()), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(eig.rank, 1);
    }

    #[test]
    fn full_rank_sweep_recovers_middle() {
        let (t, sets) = instance(4, &[4, 4, 4], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, left) = extract_end_vectors(&t, Side::Left, DEFAULT_RANK_TOL, &mut rng).unwrap();
        let sweep =
            directional_sweep(&t, Direction::Lr, &left, &SymmTtlOptions::default(), &mut rng).unwrap();
        assert_eq!(sweep.rank_at(2), 4);
        // Full-rank sets span everything; compare vectors up to sign and order.
        let g = sweep.interior[0].transpose() * &sets[1];
        for i in 0..4 {
            let best = g.row(i).iter().fold(0.0_f64, |a, b| a.max(b.abs()));
            assert!((best - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn increasing_ranks_pick_right_to_left() {
        let (t, sets) = instance(4, &[2, 3, 4], 12);
        let out = decompose_symm_ttl(&t, &SymmTtlOptions { seed: 2, ..Default::default() }).unwrap();
        let pos = out.meta.positions.as_ref().unwrap();
        assert_eq!(pos[0].direction, Direction::Rl);
        assert_eq!(pos[0].rank, 3);
        if let Carriage::Symmetric(c) = &out.train.carriages[1] {
            assert!(subspace_gap(&c.vectors, &sets[1]) < 1e-8);
        }
        let back = assemble_train(&out.train).unwrap();
        assert!(relative_error(&back, &t).unwrap() < 1e-10);
    }

    #[test]
    fn rank_one_everywhere() {
        let (t, _) = instance(2, &[1, 1, 1], 4);
        let out = decompose_symm_ttl(&t, &SymmTtlOptions::default()).unwrap();
        assert!(out.train.carriages.iter().all(|c| c.rank() == 1));
        let back = assemble_train(&out.train).unwrap();
        assert!(relative_error(&back, &t).unwrap() < 1e-12);
    }

    #[test]
    fn roundtrip_seed_7() {
        let (t, _) = instance(4, &[2, 2, 2], 7);
        let out = decompose_symm_ttl(&t, &SymmTtlOptions::default()).unwrap();
        let back = assemble_train(&out.train).unwrap();
        assert!(relative_error(&back, &t).unwrap() < 1e-10);
    }

    #[test]
    fn longer_train() {
        let (t, _) = instance(3, &[3, 2, 2, 3], 5);
        let out = decompose_symm_ttl(&t, &SymmTtlOptions::default()).unwrap();
        let back = assemble_train(&out.train).unwrap();
        assert!(relative_error(&back, &t).unwrap() < 1e-9);
    }

    #[test]
    fn als_all_ones() {
        let r = DenseTensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        let f = rank_one_als(&r, 1, 0.0);
        let refs: Vec<&[f64]> = f.iter().map(|v| v.as_slice()).collect();
        assert!(relative_error(&DenseTensor::outer(&refs), &r).unwrap() < 1e-14);
    }

    #[test]
    fn als_zero() {
        let r = DenseTensor::zeros(&[2, 3]);
        assert!(rank_one_als(&r, 5, 0.0).iter().all(|f| f.norm() == 0.0));
    }
}
