//! JSON documents exchanged with the command line and the harness.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dodd::DoddFactors;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use crate::train::{Carriage, CarriageJson, TrainDecomposition};

/// Which sweep supplied the vectors at an interior position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Lr,
    Rl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionProvenance {
    /// 1-based carriage index.
    pub position: usize,
    pub direction: Direction,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DoddSummary {
    pub method: String,
    pub d: usize,
    pub iterations: usize,
    pub converged: bool,
    pub reconstruction_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Meta {
    pub seed: u64,
    pub rank_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whitened: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psd_attempts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contracted_edges: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<PositionProvenance>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dodd: Option<DoddSummary>,
}

/// A recovered train together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub train: TrainDecomposition,
    pub meta: Meta,
}

#[derive(Serialize, Deserialize)]
struct DecompositionJson {
    carriages: Vec<CarriageJson>,
    meta: Meta,
}

impl Decomposition {
    pub fn to_json(&self) -> Result<String> {
        let doc = DecompositionJson {
            carriages: self.train.carriages.iter().map(CarriageJson::from).collect(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DecompositionJson = serde_json::from_str(text)?;
        let carriages =
            doc.carriages.iter().map(Carriage::try_from).collect::<Result<Vec<_>>>()?;
        let p = doc.meta.contracted_edges.unwrap_or(1);
        Ok(Self { train: TrainDecomposition::new(carriages, p)?, meta: doc.meta })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DoddJson {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// Row-major `d × d`.
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub d: usize,
    pub iterations: usize,
    pub converged: bool,
    pub reconstruction_error: f64,
    pub orthogonality_error: f64,
}

impl DoddJson {
    pub fn new(f: &DoddFactors, inflated: &DMatrix<f64>) -> Self {
        Self {
            lambda: f.lambda.iter().copied().collect(),
            mu: f.mu.iter().copied().collect(),
            q: f.q.row_iter().map(|r| r.iter().copied().collect()).collect(),
            d: f.d,
            iterations: f.iterations,
            converged: f.converged,
            reconstruction_error: f.reconstruction_error(inflated),
            orthogonality_error: f.orthogonality_error(),
        }
    }
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    fs::write(path, serde_json::to_string(t)?)?;
    Ok(())
}

/// Reads a 2-way tensor JSON as a matrix.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let t = read_tensor(path)?;
    if t.order() != 2 {
        return Err(Error::DimensionError(format!("expected a matrix, got shape {:?}", t.shape())));
    }
    t.to_matrix()
}
