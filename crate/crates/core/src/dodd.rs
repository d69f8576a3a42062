//! Diagonal-orthogonal-diagonal decomposition `X = Λ Q M`.
//!
//! Three solvers share the [`DoddFactors`] output:
//!
//! - [`sinkhorn_square_dodd`] balances `X∘X` to a doubly stochastic matrix and
//!   reads `Q` off its entrywise square root and the sign pattern of `X`.
//! - [`procrustes_square_dodd`] alternates Tandem Procrustes fits of the rows
//!   and columns of `Q`, moving the fitted diagonals into `Λ` and `M`.
//! - [`general_dodd`] runs the same alternation on the `d × d` zero-inflation of
//!   an `m × n` block, re-imposing the known block and refreshing the unknown
//!   entries of `Q` from the latest orthogonal fit every `learn_rate` rounds.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, orthogonality_error, polar_factor};

/// Stopping threshold shared by the square solvers and the general solver.
pub const DEFAULT_TOL: f64 = 1e-28;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct DoddFactors {
    /// Diagonal of `Λ`; zero beyond the first `m` entries.
    pub lambda: DVector<f64>,
    /// Diagonal of `M`; zero beyond the first `n` entries.
    pub mu: DVector<f64>,
    pub q: DMatrix<f64>,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    /// Sinkhorn sweeps, or Tandem Procrustes rounds for the Procrustes solvers.
    pub iterations: usize,
    pub converged: bool,
    /// Solver-specific final residual: Sinkhorn deviation or `‖Q − VD‖²`.
    pub residual: f64,
}

impl DoddFactors {
    /// `diag(λ) Q diag(μ)`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.d, |i, j| self.lambda[i] * self.q[(i, j)] * self.mu[j])
    }

    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.q)
    }

    /// `‖ΛQM − X‖ / ‖X‖` against the zero-inflated input.
    pub fn reconstruction_error(&self, inflated: &DMatrix<f64>) -> f64 {
        let denom = inflated.norm();
        let diff = (self.reconstruct() - inflated).norm();
        if denom == 0.0 {
            diff
        } else {
            diff / denom
        }
    }

    /// Rescales so the largest `|λ_i|` is 1, with `μ` absorbing the factor.
    fn normalize_gauge(&mut self) {
        let top = self.lambda.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        if top > 0.0 && top.is_finite() {
            self.lambda /= top;
            self.mu *= top;
        }
    }
}

/// Embeds `x_bar` in the top-left corner of a `d × d` zero matrix.
pub fn zero_inflate(x_bar: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let (m, n) = x_bar.shape();
    if d < m.max(n) {
        return Err(Error::InvalidInflation { d, m, n });
    }
    let mut x = DMatrix::zeros(d, d);
    x.view_mut((0, 0), (m, n)).copy_from(x_bar);
    Ok(x)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SinkhornOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

/// Sinkhorn-based square DODD. Requires every entry of `x` to be nonzero.
pub fn sinkhorn_square_dodd(x: &DMatrix<f64>, opts: &SinkhornOptions) -> Result<DoddFactors> {
    let d = x.nrows();
    let ones = DVector::from_element(d, 1.0);
    sinkhorn_square_dodd_from(x, &ones, &ones, opts)
}

/// As [`sinkhorn_square_dodd`], starting from positive row/column scalings.
pub fn sinkhorn_square_dodd_from(
    x: &DMatrix<f64>,
    row_init: &DVector<f64>,
    col_init: &DVector<f64>,
    opts: &SinkhornOptions,
) -> Result<DoddFactors> {
    if !x.is_square() {
        return Err(Error::DimensionError(format!(
            "square DODD needs a square matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let d = x.nrows();
    if row_init.len() != d || col_init.len() != d {
        return Err(Error::DimensionError("initial scalings must have length d".into()));
    }
    for j in 0..d {
        for i in 0..d {
            if x[(i, j)] == 0.0 {
                return Err(Error::ZeroEntry { row: i, col: j });
            }
        }
    }
    let sq = x.map(|v| v * v);
    let mut row = row_init.clone();
    let mut col = col_init.clone();
    let mut iterations = 0;
    let mut deviation = f64::INFINITY;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        for i in 0..d {
            let s: f64 = (0..d).map(|j| row[i] * sq[(i, j)] * col[j]).sum();
            row[i] /= s;
        }
        for j in 0..d {
            let s: f64 = (0..d).map(|i| row[i] * sq[(i, j)] * col[j]).sum();
            col[j] /= s;
        }
        deviation = sinkhorn_deviation(&sq, &row, &col);
        if deviation < opts.tol {
            converged = true;
            break;
        }
    }

    let q = DMatrix::from_fn(d, d, |i, j| {
        let mag = (row[i] * sq[(i, j)] * col[j]).sqrt();
        if x[(i, j)] > 0.0 {
            mag
        } else {
            -mag
        }
    });
    let mut factors = DoddFactors {
        lambda: row.map(|r| 1.0 / r.sqrt()),
        mu: col.map(|c| 1.0 / c.sqrt()),
        q,
        d,
        m: d,
        n: d,
        iterations,
        converged,
        residual: deviation,
    };
    factors.normalize_gauge();
    if converged {
        Ok(factors)
    } else {
        Err(Error::NotConverged(Box::new(factors)))
    }
}

/// `Σ(rowSum − 1)² + Σ(colSum − 1)²` of `diag(row) · sq · diag(col)`.
fn sinkhorn_deviation(sq: &DMatrix<f64>, row: &DVector<f64>, col: &DVector<f64>) -> f64 {
    let d = sq.nrows();
    let mut dev = 0.0;
    for i in 0..d {
        let s: f64 = (0..d).map(|j| row[i] * sq[(i, j)] * col[j]).sum();
        dev += (s - 1.0) * (s - 1.0);
    }
    for j in 0..d {
        let s: f64 = (0..d).map(|i| row[i] * sq[(i, j)] * col[j]).sum();
        dev += (s - 1.0) * (s - 1.0);
    }
    dev
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TandemOptions {
    /// Stop once the residual drops by at most `tol · previous` in one step.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TandemOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct TandemResult {
    /// `m × p` with orthonormal columns.
    pub v: DMatrix<f64>,
    /// Diagonal of `D`.
    pub d: DVector<f64>,
    /// Final `‖A − V D B‖²`.
    pub residual: f64,
    /// Residual after every iteration.
    pub history: Vec<f64>,
}

/// Locally minimizes `‖A − V D B‖²` over orthonormal-column `V` and diagonal `D`.
///
/// `A` is `m × n`, `B` is `p × n` with `m ≥ p`. The `D` update is the exact
/// minimizer when the rows of `B` are mutually orthogonal, which holds for
/// every caller in this crate (`B = I`).
pub fn tandem_procrustes(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    opts: &TandemOptions,
) -> Result<TandemResult> {
    let (m, n) = a.shape();
    let p = b.nrows();
    if b.ncols() != n {
        return Err(Error::DimensionError(format!(
            "A is {m}x{n} but B is {p}x{}",
            b.ncols()
        )));
    }
    if m < p {
        return Err(Error::DimensionError(format!(
            "V would need {p} orthonormal columns in dimension {m}"
        )));
    }
    let row_sq: Vec<f64> = (0..p).map(|k| b.row(k).norm_squared()).collect();
    if let Some(row) = row_sq.iter().position(|&s| s == 0.0) {
        return Err(Error::DegenerateStart { row });
    }
    let abt = a * b.transpose();
    let mut dg = DVector::from_element(p, 1.0);
    let mut v = DMatrix::zeros(m, p);
    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..opts.max_iter.max(1) {
        let mut scaled = abt.clone();
        for k in 0..p {
            scaled.column_mut(k).scale_mut(dg[k]);
        }
        v = polar_factor(&scaled)?;
        for k in 0..p {
            dg[k] = abt.column(k).dot(&v.column(k)) / row_sq[k];
        }
        let res = tandem_residual(a, b, &v, &dg);
        history.push(res);
        if res == 0.0 || prev - res <= opts.tol * prev {
            break;
        }
        prev = res;
    }
    let residual = *history.last().expect("at least one iteration");
    Ok(TandemResult { v, d: dg, residual, history })
}

fn tandem_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, v: &DMatrix<f64>, dg: &DVector<f64>) -> f64 {
    let mut db = b.clone();
    for k in 0..db.nrows() {
        db.row_mut(k).scale_mut(dg[k]);
    }
    (a - v * db).norm_squared()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProcrustesOptions {
    /// Converged once the latest Tandem Procrustes residual `‖Q − VD‖²` is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Tandem Procrustes rounds between refreshes of the unknown region.
    pub learn_rate: usize,
    pub tandem: TandemOptions,
    /// Seed for the Gaussian fill of the unknown region of `Q`.
    pub seed: u64,
}

impl Default for ProcrustesOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            learn_rate: 1,
            tandem: TandemOptions::default(),
            seed: 0,
        }
    }
}

impl ProcrustesOptions {
    pub fn general() -> Self {
        Self { learn_rate: 2, ..Self::default() }
    }
}

/// Procrustes-based square DODD.
pub fn procrustes_square_dodd(x: &DMatrix<f64>, opts: &ProcrustesOptions) -> Result<DoddFactors> {
    if !x.is_square() {
        return Err(Error::DimensionError(format!(
            "square DODD needs a square matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let d = x.nrows();
    let mut state = ProcrustesState {
        lambda: DVector::from_element(d, 1.0),
        mu: DVector::from_element(d, 1.0),
        q: x.clone(),
    };
    let run = state.run(opts, |_, _| {})?;
    state.finish(d, d, d, run)
}

/// Procrustes-based DODD of the `d × d` zero-inflation of `x_bar`.
pub fn general_dodd(x_bar: &DMatrix<f64>, d: usize, opts: &ProcrustesOptions) -> Result<DoddFactors> {
    let (m, n) = x_bar.shape();
    if d < m.max(n) {
        return Err(Error::InvalidInflation { d, m, n });
    }
    if opts.learn_rate == 0 {
        return Err(Error::InvalidConfig("learning rate must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q = gaussian_matrix(d, d, &mut rng);
    q.view_mut((0, 0), (m, n)).copy_from(x_bar);
    let mut state = ProcrustesState {
        lambda: DVector::from_fn(d, |i, _| if i < m { 1.0 } else { 0.0 }),
        mu: DVector::from_fn(d, |j, _| if j < n { 1.0 } else { 0.0 }),
        q,
    };
    let run = state.run(opts, |state, v| {
        // Unknown region from the latest orthogonal fit, known block from X̄.
        for j in 0..d {
            for i in 0..d {
                state.q[(i, j)] = if i < m && j < n {
                    x_bar[(i, j)] / (state.lambda[i] * state.mu[j])
                } else {
                    v[(i, j)]
                };
            }
        }
    })?;
    state.finish(d, m, n, run)
}

struct ProcrustesState {
    lambda: DVector<f64>,
    mu: DVector<f64>,
    q: DMatrix<f64>,
}

struct RunInfo {
    iterations: usize,
    converged: bool,
    residual: f64,
}

impl ProcrustesState {
    /// One row-side and one column-side Tandem Procrustes fit. Returns the
    /// column-side `V` and its residual.
    fn tandem_round(&mut self, opts: &TandemOptions) -> Result<(DMatrix<f64>, f64)> {
        let d = self.q.nrows();
        let eye = DMatrix::identity(d, d);

        let rows = tandem_procrustes(&self.q.transpose(), &eye, opts)?;
        if let Some(index) = rows.d.iter().position(|&x| x == 0.0 || !x.is_finite()) {
            return Err(Error::SingularScaling { index });
        }
        for i in 0..d {
            self.lambda[i] *= rows.d[i];
            self.q.row_mut(i).unscale_mut(rows.d[i]);
        }

        let cols = tandem_procrustes(&self.q, &eye, opts)?;
        if let Some(index) = cols.d.iter().position(|&x| x == 0.0 || !x.is_finite()) {
            return Err(Error::SingularScaling { index });
        }
        for j in 0..d {
            self.mu[j] *= cols.d[j];
            self.q.column_mut(j).unscale_mut(cols.d[j]);
        }
        Ok((cols.v, cols.residual))
    }

    fn run<F>(&mut self, opts: &ProcrustesOptions, mut refresh: F) -> Result<RunInfo>
    where
        F: FnMut(&mut Self, &DMatrix<f64>),
    {
        // The iteration budget counts Tandem Procrustes rounds, not refreshes.
        let rounds = opts.learn_rate.max(1);
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            let mut latest = None;
            for _ in 0..rounds {
                if iterations == opts.max_iter {
                    break;
                }
                let (v, res) = self.tandem_round(&opts.tandem)?;
                iterations += 1;
                residual = res;
                latest = Some(v);
            }
            if let Some(v) = latest {
                refresh(self, &v);
            }
            if residual < opts.tol {
                return Ok(RunInfo { iterations, converged: true, residual });
            }
        }
        Ok(RunInfo { iterations, converged: false, residual })
    }

    fn finish(self, d: usize, m: usize, n: usize, run: RunInfo) -> Result<DoddFactors> {
        let mut factors = DoddFactors {
            lambda: self.lambda,
            mu: self.mu,
            q: self.q,
            d,
            m,
            n,
            iterations: run.iterations,
            converged: run.converged,
            residual: run.residual,
        };
        factors.normalize_gauge();
        if run.converged {
            Ok(factors)
        } else {
            Err(Error::NotConverged(Box::new(factors)))
        }
    }
}

/// Which DODD solver to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoddMethod {
    Sinkhorn,
    Procrustes,
    General,
}

impl std::str::FromStr for DoddMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sinkhorn" => Ok(Self::Sinkhorn),
            "procrustes" => Ok(Self::Procrustes),
            "general" => Ok(Self::General),
            other => Err(format!("unknown DODD method `{other}`")),
        }
    }
}

/// Factors of a possibly unconverged run, or the hard error.
pub fn factors_of(result: Result<DoddFactors>) -> Result<DoddFactors> {
    match result {
        Ok(f) => Ok(f),
        Err(Error::NotConverged(f)) => Ok(*f),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthonormal;

    fn hadamard_instance() -> (DMatrix<f64>, DMatrix<f64>) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))
            * &q
            * DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        (x, q)
    }

    #[test]
    fn inflation_examples() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(zero_inflate(&x, 2).unwrap(), x);
        let one = DMatrix::from_element(1, 1, 1.0);
        let big = zero_inflate(&one, 3).unwrap();
        assert_eq!(big.sum(), 1.0);
        assert_eq!(big[(0, 0)], 1.0);
        let wide = DMatrix::from_fn(6, 5, |i, j| (i * 5 + j) as f64 + 1.0);
        let inflated = zero_inflate(&wide, 30).unwrap();
        assert_eq!(inflated.view((0, 0), (6, 5)), wide);
        assert_eq!(inflated.sum(), wide.sum());
        assert!(matches!(zero_inflate(&wide, 5), Err(Error::InvalidInflation { .. })));
    }

    #[test]
    fn sinkhorn_on_orthogonal_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_orthonormal(4, 4, &mut rng);
        let f = sinkhorn_square_dodd(&q, &SinkhornOptions::default()).unwrap();
        assert!((&f.q - &q).norm() < 1e-12);
        assert!(f.lambda.iter().all(|&x| x > 0.0) && f.mu.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn sinkhorn_hadamard_instance() {
        let (x, q) = hadamard_instance();
        let f = sinkhorn_square_dodd(&x, &SinkhornOptions::default()).unwrap();
        assert!((f.reconstruct() - &x).norm() < 1e-12);
        assert!((&f.q - &q).norm() < 1e-12 || (&f.q + &q).norm() < 1e-12);
    }

    #[test]
    fn sinkhorn_zero_entry() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            sinkhorn_square_dodd(&x, &SinkhornOptions::default()),
            Err(Error::ZeroEntry { row: 0, col: 1 })
        ));
    }

    #[test]
    fn tandem_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_orthonormal(5, 3, &mut rng);
        let eye = DMatrix::identity(3, 3);
        let r = tandem_procrustes(&q, &eye, &TandemOptions::default()).unwrap();
        assert!((&r.v - &q).norm() < 1e-12);
        assert!((&r.d - DVector::from_element(3, 1.0)).norm() < 1e-12);

        let r = tandem_procrustes(&(&q * 2.0), &eye, &TandemOptions::default()).unwrap();
        assert!((&r.v - &q).norm() < 1e-12);
        assert!((&r.d - DVector::from_element(3, 2.0)).norm() < 1e-12);
        assert!(r.residual < 1e-24);
    }

    #[test]
    fn tandem_zero_row_in_start() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            tandem_procrustes(&a, &b, &TandemOptions::default()),
            Err(Error::DegenerateStart { row: 1 })
        ));
    }

    #[test]
    fn procrustes_on_orthogonal_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_orthonormal(4, 4, &mut rng);
        let f = procrustes_square_dodd(&q, &ProcrustesOptions::default()).unwrap();
        assert_eq!(f.iterations, 1);
        assert!((&f.q - &q).norm() < 1e-12);
    }

    #[test]
    fn procrustes_hadamard_instance() {
        let (x, _) = hadamard_instance();
        let f = procrustes_square_dodd(&x, &ProcrustesOptions::default()).unwrap();
        assert!(f.reconstruction_error(&x) < 1e-10);
        assert!(f.orthogonality_error() < 1e-10);
    }

    #[test]
    fn general_with_square_block_behaves_like_square() {
        let (x, _) = hadamard_instance();
        let f = general_dodd(&x, 2, &ProcrustesOptions::general()).unwrap();
        assert!(f.reconstruction_error(&x) < 1e-10);
        assert!(f.orthogonality_error() < 1e-10);
    }

    #[test]
    fn general_rejects_small_inflation() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(
            general_dodd(&x, 2, &ProcrustesOptions::general()),
            Err(Error::InvalidInflation { d: 2, m: 3, n: 2 })
        ));
    }
}
