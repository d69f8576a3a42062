//! Dense row-major tensors and the multilinear primitives the solvers share.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real tensor stored row-major (last index fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for DenseTensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        DenseTensor::new(raw.shape, raw.data)
    }
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::DimensionError(format!("zero-sized mode in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::DimensionError(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// Outer product `v1 ⊗ v2 ⊗ ... ⊗ vk`.
    pub fn outer(vectors: &[&[f64]]) -> Self {
        let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
        let mut data = vec![1.0];
        for v in vectors {
            let mut next = Vec::with_capacity(data.len() * v.len());
            for &a in &data {
                next.extend(v.iter().map(|&b| a * b));
            }
            data = next;
        }
        Self { shape, data }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self { shape: vec![m.nrows(), m.ncols()], data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order() != 2 {
            return Err(Error::DimensionError(format!(
                "expected a 2-way tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(DMatrix::from_row_slice(self.shape[0], self.shape[1], &self.data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
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

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for k in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.shape[k + 1];
        }
        strides
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &s)| acc * s + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|x| x * factor).collect() }
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &DenseTensor, factor: f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::DimensionError(format!(
                "cannot add shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + factor * b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Moves mode `from` to position `to`, shifting the modes in between.
    pub fn move_mode(&self, from: usize, to: usize) -> Self {
        let mut perm: Vec<usize> = (0..self.order()).collect();
        let m = perm.remove(from);
        perm.insert(to, m);
        self.permute(&perm)
    }

    /// Output mode `k` is input mode `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = self.strides();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut index = vec![0usize; shape.len()];
        for _ in 0..self.data.len() {
            let o: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[o]);
            increment(&mut index, &shape);
        }
        Self { shape, data }
    }
}

/// Advances a row-major multi-index; returns false on wrap-around.
pub(crate) fn increment(index: &mut [usize], shape: &[usize]) -> bool {
    for k in (0..index.len()).rev() {
        index[k] += 1;
        if index[k] < shape[k] {
            return true;
        }
        index[k] = 0;
    }
    false
}

/// What to contract a single mode with.
#[derive(Debug, Clone, Copy)]
pub enum ModeMap<'a> {
    /// Leave the mode untouched.
    Free,
    /// Replace the mode of size `n` by one of size `rows` via `W (rows x n)`.
    Matrix(&'a DMatrix<f64>),
    /// Contract the mode away against a vector.
    Vector(&'a DVector<f64>),
}

/// Contracts every mode `k` of `t` with `maps[k]`.
///
/// A matrix map `W` sends mode `k` to `W`'s row count, i.e. computes
/// `T(W_1, ..., W_d)`; a vector map removes the mode.
pub fn multilinear_contract(t: &DenseTensor, maps: &[ModeMap<'_>]) -> Result<DenseTensor> {
    if maps.len() != t.order() {
        return Err(Error::DimensionError(format!(
            "{} mode maps supplied for a {}-way tensor",
            maps.len(),
            t.order()
        )));
    }
    for (k, map) in maps.iter().enumerate() {
        let cols = match map {
            ModeMap::Free => continue,
            ModeMap::Matrix(w) => w.ncols(),
            ModeMap::Vector(v) => v.len(),
        };
        if cols != t.shape[k] {
            return Err(Error::DimensionError(format!(
                "mode {k} has size {}, map expects {cols}",
                t.shape[k]
            )));
        }
    }

    let mut shape = t.shape.clone();
    let mut data = t.data.clone();
    // Removed modes are tracked so later mode indices still line up.
    let mut removed = vec![false; maps.len()];
    for (k, map) in maps.iter().enumerate() {
        let pos = k - removed[..k].iter().filter(|&&r| r).count();
        let n = shape[pos];
        let pre: usize = shape[..pos].iter().product();
        let post: usize = shape[pos + 1..].iter().product();
        match map {
            ModeMap::Free => {}
            ModeMap::Matrix(w) => {
                let rows = w.nrows();
                let mut out = vec![0.0; pre * rows * post];
                for a in 0..pre {
                    for j in 0..n {
                        let src = &data[(a * n + j) * post..(a * n + j + 1) * post];
                        for i in 0..rows {
                            let wij = w[(i, j)];
                            if wij == 0.0 {
                                continue;
                            }
                            let dst = &mut out[(a * rows + i) * post..(a * rows + i + 1) * post];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wij * s;
                            }
                        }
                    }
                }
                shape[pos] = rows;
                data = out;
            }
            ModeMap::Vector(v) => {
                let mut out = vec![0.0; pre * post];
                for a in 0..pre {
                    let dst = &mut out[a * post..(a + 1) * post];
                    for j in 0..n {
                        let vj = v[j];
                        let src = &data[(a * n + j) * post..(a * n + j + 1) * post];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += vj * s;
                        }
                    }
                }
                shape.remove(pos);
                removed[k] = true;
                data = out;
            }
        }
    }
    Ok(DenseTensor { shape, data })
}

/// Weighted sum of the 2-D slices of `t` that keep `free_modes` open:
/// `Σ weights[idx] · T(.., :, .., :, ..)[idx]` over all indices of the other modes.
///
/// `weights` has the shape of the summed modes, in increasing mode order.
/// Rows of the result follow `free_modes.0`, columns `free_modes.1`.
pub fn weighted_slice_sum(
    t: &DenseTensor,
    free_modes: (usize, usize),
    weights: &DenseTensor,
) -> Result<DMatrix<f64>> {
    let (a, b) = free_modes;
    let d = t.order();
    if d < 3 {
        return Err(Error::DimensionError(format!("slice sums need >= 3 modes, got {d}")));
    }
    if a >= d || b >= d || a == b {
        return Err(Error::DimensionError(format!(
            "free modes ({a}, {b}) invalid for a {d}-way tensor"
        )));
    }
    let summed: Vec<usize> = (0..d).filter(|&k| k != a && k != b).collect();
    let expected: Vec<usize> = summed.iter().map(|&k| t.shape[k]).collect();
    if weights.shape != expected {
        return Err(Error::DimensionError(format!(
            "weights have shape {:?}, summed modes need {expected:?}",
            weights.shape
        )));
    }
    let mut out = DMatrix::zeros(t.shape[a], t.shape[b]);
    let mut index = vec![0usize; d];
    let mut widx = vec![0usize; summed.len()];
    for &value in &t.data {
        for (slot, &k) in widx.iter_mut().zip(&summed) {
            *slot = index[k];
        }
        out[(index[a], index[b])] += weights.get(&widx) * value;
        increment(&mut index, &t.shape);
    }
    Ok(out)
}

/// `‖a − b‖ / ‖b‖` in the Frobenius norm.
pub fn relative_error(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::DimensionError(format!(
            "relative error between shapes {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let denom = b.norm();
    if denom == 0.0 {
        return Err(Error::DivisionByZero("reference tensor has zero norm".into()));
    }
    let diff: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(diff.sqrt() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1_pow4() -> DenseTensor {
        let e1 = [1.0, 0.0];
        DenseTensor::outer(&[&e1, &e1, &e1, &e1])
    }

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn json_reader_rejects_length_mismatch() {
        let bad = r#"{"shape":[2,2],"data":[1,2,3]}"#;
        assert!(serde_json::from_str::<DenseTensor>(bad).is_err());
        let good = r#"{"shape":[2,2],"data":[1,2,3,4]}"#;
        let t: DenseTensor = serde_json::from_str(good).unwrap();
        assert_eq!(t.get(&[1, 0]), 3.0);
    }

    #[test]
    fn full_contraction_of_e1_power() {
        let t = e1_pow4();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let maps = [ModeMap::Vector(&e1); 4];
        let s = multilinear_contract(&t, &maps).unwrap();
        assert!(s.shape().is_empty());
        assert_eq!(s.data(), &[1.0]);
    }

    #[test]
    fn partial_contraction_leaves_matrix() {
        let t = e1_pow4();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let maps = [ModeMap::Free, ModeMap::Free, ModeMap::Vector(&e1), ModeMap::Vector(&e1)];
        let m = multilinear_contract(&t, &maps).unwrap().to_matrix().unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn identity_contraction_is_noop() {
        let t = DenseTensor::new(vec![2, 3, 2], (0..12).map(|x| x as f64).collect()).unwrap();
        let i2 = DMatrix::identity(2, 2);
        let i3 = DMatrix::identity(3, 3);
        let out = multilinear_contract(
            &t,
            &[ModeMap::Matrix(&i2), ModeMap::Matrix(&i3), ModeMap::Matrix(&i2)],
        )
        .unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn contraction_size_mismatch() {
        let t = e1_pow4();
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let maps = [ModeMap::Vector(&v), ModeMap::Free, ModeMap::Free, ModeMap::Free];
        assert!(matches!(multilinear_contract(&t, &maps), Err(Error::DimensionError(_))));
    }

    #[test]
    fn slice_sum_examples() {
        let t = e1_pow4();
        let ones = DenseTensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        let s = weighted_slice_sum(&t, (0, 1), &ones).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));

        let alpha = DenseTensor::new(vec![2, 2], vec![5.0, 0.0, 0.0, 0.0]).unwrap();
        let s = weighted_slice_sum(&t, (2, 3), &alpha).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn slice_sum_rejects_bad_modes() {
        let t = e1_pow4();
        let ones = DenseTensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        assert!(weighted_slice_sum(&t, (0, 4), &ones).is_err());
        assert!(weighted_slice_sum(&t, (1, 1), &ones).is_err());
    }

    #[test]
    fn relative_error_examples() {
        let b = DenseTensor::new(vec![3], vec![1.0, -2.0, 2.0]).unwrap();
        assert_eq!(relative_error(&b, &b).unwrap(), 0.0);
        assert!((relative_error(&b.scale(2.0), &b).unwrap() - 1.0).abs() < 1e-15);
        assert!((relative_error(&b.scale(1.01), &b).unwrap() - 0.01).abs() < 1e-14);
        let z = DenseTensor::zeros(&[3]);
        assert!(matches!(relative_error(&b, &z), Err(Error::DivisionByZero(_))));
        let other = DenseTensor::zeros(&[4]);
        assert!(matches!(relative_error(&b, &other), Err(Error::DimensionError(_))));
    }

    #[test]
    fn permute_roundtrip() {
        let t = DenseTensor::new(vec![2, 3, 4], (0..24).map(|x| x as f64).collect()).unwrap();
        let p = t.permute(&[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), t.get(&[1, 2, 3]));
        assert_eq!(t.move_mode(0, 2).get(&[2, 3, 1]), t.get(&[1, 2, 3]));
    }
}
