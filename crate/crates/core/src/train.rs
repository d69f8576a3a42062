//! Carriages, train decompositions, and dense assembly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

const UNIT_TOL: f64 = 1e-10;

/// `Σ λ_i u_i^{⊗3}` with unit vectors `u_i` as the columns of `vectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricCarriage {
    pub coefficients: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymmetricCarriage {
    pub fn new(coefficients: DVector<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        let c = Self { coefficients, vectors };
        c.validate()?;
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.coefficients.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vectors.ncols() != self.coefficients.len() {
            return Err(Error::InvalidTrain(format!(
                "{} coefficients for {} vectors",
                self.coefficients.len(),
                self.vectors.ncols()
            )));
        }
        if let Some(i) = self.coefficients.iter().position(|&c| c == 0.0) {
            return Err(Error::InvalidTrain(format!("coefficient {i} is zero")));
        }
        check_unit_columns(&self.vectors)
    }

    /// Whether the vectors are pairwise orthogonal within `1e-10`.
    pub fn is_orthogonal(&self) -> bool {
        is_orthonormal(&self.vectors)
    }
}

/// `Σ λ_i a_i ⊗ b_i ⊗ c_i` with three orthonormal column sets. The `c` set
/// carries the bond.
#[derive(Debug, Clone, PartialEq)]
pub struct OdecoCarriage {
    pub coefficients: DVector<f64>,
    pub vectors_a: DMatrix<f64>,
    pub vectors_b: DMatrix<f64>,
    pub vectors_c: DMatrix<f64>,
}

impl OdecoCarriage {
    pub fn new(
        coefficients: DVector<f64>,
        vectors_a: DMatrix<f64>,
        vectors_b: DMatrix<f64>,
        vectors_c: DMatrix<f64>,
    ) -> Result<Self> {
        let c = Self { coefficients, vectors_a, vectors_b, vectors_c };
        c.validate()?;
        Ok(c)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.vectors_a.nrows(), self.vectors_b.nrows(), self.vectors_c.nrows())
    }

    pub fn rank(&self) -> usize {
        self.coefficients.len()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.coefficients.len();
        for (name, m) in [("a", &self.vectors_a), ("b", &self.vectors_b), ("c", &self.vectors_c)] {
            if m.ncols() != r {
                return Err(Error::InvalidTrain(format!(
                    "{r} coefficients but {} {name}-vectors",
                    m.ncols()
                )));
            }
            check_unit_columns(m)?;
            if !is_orthonormal(m) {
                return Err(Error::InvalidTrain(format!("{name}-vectors are not orthonormal")));
            }
        }
        if let Some(i) = self.coefficients.iter().position(|&c| c == 0.0) {
            return Err(Error::InvalidTrain(format!("coefficient {i} is zero")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Carriage {
    Symmetric(SymmetricCarriage),
    Odeco(OdecoCarriage),
}

impl Carriage {
    pub fn rank(&self) -> usize {
        match self {
            Carriage::Symmetric(c) => c.rank(),
            Carriage::Odeco(c) => c.rank(),
        }
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        match self {
            Carriage::Symmetric(c) => &c.coefficients,
            Carriage::Odeco(c) => &c.coefficients,
        }
    }

    fn bond_vectors(&self) -> &DMatrix<f64> {
        match self {
            Carriage::Symmetric(c) => &c.vectors,
            Carriage::Odeco(c) => &c.vectors_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainDecomposition {
    pub carriages: Vec<Carriage>,
    /// Number of parallel edges `p` at every junction.
    pub contracted_edges: u32,
}

impl TrainDecomposition {
    pub fn new(carriages: Vec<Carriage>, contracted_edges: u32) -> Result<Self> {
        let t = Self { carriages, contracted_edges };
        t.validate()?;
        Ok(t)
    }

    pub fn symmetric(carriages: Vec<SymmetricCarriage>) -> Result<Self> {
        Self::new(carriages.into_iter().map(Carriage::Symmetric).collect(), 1)
    }

    pub fn len(&self) -> usize {
        self.carriages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.carriages.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.carriages.len();
        if l < 2 {
            return Err(Error::InvalidTrain(format!("train length {l} < 2")));
        }
        if self.contracted_edges == 0 {
            return Err(Error::InvalidTrain("at least one contracted edge is required".into()));
        }
        let odeco = self.carriages.iter().filter(|c| matches!(c, Carriage::Odeco(_))).count();
        if odeco > 0 && (l != 2 || odeco != 2) {
            return Err(Error::InvalidTrain(
                "odeco carriages are only supported as both ends of a length-2 train".into(),
            ));
        }
        for c in &self.carriages {
            match c {
                Carriage::Symmetric(s) => s.validate()?,
                Carriage::Odeco(o) => o.validate()?,
            }
        }
        for (k, pair) in self.carriages.windows(2).enumerate() {
            let (left, right) = (pair[0].bond_vectors().nrows(), pair[1].bond_vectors().nrows());
            if left != right {
                return Err(Error::InvalidTrain(format!(
                    "junction {k}: bond dimensions {left} and {right} differ"
                )));
            }
        }
        Ok(())
    }

    /// Shape of the assembled tensor.
    pub fn shape(&self) -> Vec<usize> {
        let l = self.carriages.len();
        let mut shape = Vec::with_capacity(l + 2);
        for (k, c) in self.carriages.iter().enumerate() {
            match c {
                Carriage::Symmetric(s) => {
                    let reps = if k == 0 || k == l - 1 { 2 } else { 1 };
                    shape.extend(std::iter::repeat(s.dim()).take(reps));
                }
                Carriage::Odeco(o) => shape.extend([o.vectors_a.nrows(), o.vectors_b.nrows()]),
            }
        }
        shape
    }
}

/// Dense tensor generated by the train.
///
/// Contracts left to right, keeping the running partial tensor with one
/// trailing index over the terms of the current carriage.
pub fn assemble_train(train: &TrainDecomposition) -> Result<DenseTensor> {
    train.validate()?;
    let l = train.carriages.len();
    let p = train.contracted_edges as i32;

    let outer_of = |c: &Carriage, k: usize| -> Vec<DMatrix<f64>> {
        match c {
            Carriage::Symmetric(s) if k == 0 || k == l - 1 => vec![s.vectors.clone(); 2],
            Carriage::Symmetric(s) => vec![s.vectors.clone()],
            Carriage::Odeco(o) => vec![o.vectors_a.clone(), o.vectors_b.clone()],
        }
    };

    // state[(outer index) * r + i]
    let first = &train.carriages[0];
    let r0 = first.rank();
    let mut state: Vec<f64> = vec![0.0; r0];
    state.copy_from_slice(first.coefficients().as_slice());
    let mut shape: Vec<usize> = Vec::new();
    for m in outer_of(first, 0) {
        state = append_mode(&state, r0, &m);
        shape.push(m.nrows());
    }
    let mut r = r0;

    for k in 1..l {
        let prev = &train.carriages[k - 1];
        let cur = &train.carriages[k];
        let gram = (prev.bond_vectors().transpose() * cur.bond_vectors()).map(|g| g.powi(p));
        let rc = cur.rank();
        let outer = state.len() / r;
        let mut next = vec![0.0; outer * rc];
        for a in 0..outer {
            let src = &state[a * r..(a + 1) * r];
            let dst = &mut next[a * rc..(a + 1) * rc];
            for (j, d) in dst.iter_mut().enumerate() {
                let s: f64 = src.iter().enumerate().map(|(i, &x)| x * gram[(i, j)]).sum();
                *d = s * cur.coefficients()[j];
            }
        }
        state = next;
        r = rc;
        for m in outer_of(cur, k) {
            state = append_mode(&state, r, &m);
            shape.push(m.nrows());
        }
    }

    // Sum out the last term index.
    let outer = state.len() / r;
    let data: Vec<f64> = (0..outer).map(|a| state[a * r..(a + 1) * r].iter().sum()).collect();
    DenseTensor::new(shape, data)
}

/// Inserts a mode of size `n` before the trailing term index, weighting term
/// `i` by column `i` of `vectors`.
fn append_mode(state: &[f64], r: usize, vectors: &DMatrix<f64>) -> Vec<f64> {
    let n = vectors.nrows();
    let outer = state.len() / r;
    let mut out = vec![0.0; outer * n * r];
    for a in 0..outer {
        for c in 0..n {
            let base = (a * n + c) * r;
            for i in 0..r {
                out[base + i] = state[a * r + i] * vectors[(c, i)];
            }
        }
    }
    out
}

fn check_unit_columns(m: &DMatrix<f64>) -> Result<()> {
    for (i, col) in m.column_iter().enumerate() {
        let norm = col.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidTrain(format!("vector {i} has norm {norm}")));
        }
    }
    Ok(())
}

fn is_orthonormal(m: &DMatrix<f64>) -> bool {
    let g = m.transpose() * m;
    (g - DMatrix::identity(m.ncols(), m.ncols())).amax() <= UNIT_TOL
}

// ---------------------------------------------------------------------------
// JSON

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CarriageJson {
    pub coefficients: Vec<f64>,
    /// Column-major: each inner list is one vector.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vectors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vectors_a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vectors_b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vectors_c: Vec<Vec<f64>>,
}

pub fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

pub fn from_columns(cols: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = cols.first().map_or(0, |c| c.len());
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidTrain("vectors of unequal length".into()));
    }
    let data: Vec<f64> = cols.iter().flatten().copied().collect();
    Ok(DMatrix::from_column_slice(n, cols.len(), &data))
}

impl From<&Carriage> for CarriageJson {
    fn from(c: &Carriage) -> Self {
        match c {
            Carriage::Symmetric(s) => CarriageJson {
                coefficients: s.coefficients.iter().copied().collect(),
                vectors: columns(&s.vectors),
                vectors_a: Vec::new(),
                vectors_b: Vec::new(),
                vectors_c: Vec::new(),
            },
            Carriage::Odeco(o) => CarriageJson {
                coefficients: o.coefficients.iter().copied().collect(),
                vectors: Vec::new(),
                vectors_a: columns(&o.vectors_a),
                vectors_b: columns(&o.vectors_b),
                vectors_c: columns(&o.vectors_c),
            },
        }
    }
}

impl TryFrom<&CarriageJson> for Carriage {
    type Error = Error;

    fn try_from(j: &CarriageJson) -> Result<Self> {
        let coefficients = DVector::from_vec(j.coefficients.clone());
        if !j.vectors_c.is_empty() {
            Ok(Carriage::Odeco(OdecoCarriage::new(
                coefficients,
                from_columns(&j.vectors_a)?,
                from_columns(&j.vectors_b)?,
                from_columns(&j.vectors_c)?,
            )?))
        } else {
            Ok(Carriage::Symmetric(SymmetricCarriage::new(coefficients, from_columns(&j.vectors)?)?))
        }
    }
}
