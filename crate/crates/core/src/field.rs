use nalgebra::DMatrix;

use crate::{Error, Result};

/// Where the unknowns of a [`SourceField`] live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// Heart nodes of the volume mesh (volumetric sources).
    HeartVolume,
    /// Vertices of the heart surface (epicardial potentials).
    HeartSurface,
}

/// Scalar field over heart nodes × time samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceField {
    /// Nodes × samples.
    pub values: DMatrix<f64>,
    /// Mesh node index of every row.
    pub nodes: Vec<usize>,
    pub domain: Domain,
    pub sample_rate: f64,
    pub time_zero: f64,
}

impl SourceField {
    pub fn new(values: DMatrix<f64>, nodes: Vec<usize>, domain: Domain, sample_rate: f64) -> Result<Self> {
        if values.nrows() != nodes.len() {
            return Err(Error::Dimension {
                context: "source field rows",
                expected: nodes.len(),
                found: values.nrows(),
            });
        }
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidInput(format!("sample rate must be positive, got {sample_rate}")));
        }
        Ok(SourceField {
            values,
            nodes,
            domain,
            sample_rate,
            time_zero: 0.0,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }
}
