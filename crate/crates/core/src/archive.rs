//! Weight serialization as a structured, human-readable text document.
//!
//! Matrices are stored as nested row-major arrays of decimal reals with
//! explicit shape metadata. JSON's shortest-round-trip float formatting
//! makes `load(save(w))` reproduce every finite double bit-exactly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attention::{HeadWeights, MsaWeights, OmegaBank};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixData {
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
}

impl MatrixData {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixData {
            rows: m.nrows(),
            cols: m.ncols(),
            data: (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect(),
        }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows || self.data.iter().any(|r| r.len() != self.cols) {
            return Err(Error::Archive(format!(
                "matrix payload does not match declared shape {}×{}",
                self.rows, self.cols
            )));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| {
            self.data[i][j]
        }))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeadData {
    wq: MatrixData,
    wk: MatrixData,
    wv: MatrixData,
}

/// On-disk weight archive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightArchive {
    pub format_version: u32,
    pub seed: u64,
    beta: f64,
    heads: Vec<HeadData>,
    wo: MatrixData,
    #[serde(default)]
    omegas: Option<Vec<MatrixData>>,
}

impl WeightArchive {
    pub fn from_weights(w: &MsaWeights, bank: Option<&OmegaBank>, seed: u64) -> Self {
        WeightArchive {
            format_version: FORMAT_VERSION,
            seed,
            beta: w.beta,
            heads: w
                .heads
                .iter()
                .map(|h| HeadData {
                    wq: MatrixData::from_matrix(&h.wq),
                    wk: MatrixData::from_matrix(&h.wk),
                    wv: MatrixData::from_matrix(&h.wv),
                })
                .collect(),
            wo: MatrixData::from_matrix(&w.wo),
            omegas: bank.map(|b| b.blocks().iter().map(MatrixData::from_matrix).collect()),
        }
    }

    pub fn to_weights(&self) -> Result<(MsaWeights, Option<OmegaBank>)> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Archive(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let heads = self
            .heads
            .iter()
            .map(|h| HeadWeights::new(h.wq.to_matrix()?, h.wk.to_matrix()?, h.wv.to_matrix()?))
            .collect::<Result<Vec<_>>>()?;
        let msa = MsaWeights::new(heads, self.wo.to_matrix()?, self.beta)?;
        let bank = match &self.omegas {
            Some(blocks) => Some(OmegaBank::new(
                blocks
                    .iter()
                    .map(|b| b.to_matrix())
                    .collect::<Result<Vec<_>>>()?,
            )?),
            None => None,
        };
        Ok((msa, bank))
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("archive serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Archive(format!("bad archive: {e}")))
    }
}

/// Serializes weights to the archive text format.
pub fn save_weights(w: &MsaWeights, bank: Option<&OmegaBank>, seed: u64) -> String {
    WeightArchive::from_weights(w, bank, seed).to_text()
}

/// Parses an archive document back into weights.
pub fn load_weights(text: &str) -> Result<(MsaWeights, Option<OmegaBank>, u64)> {
    let archive = WeightArchive::from_text(text)?;
    let seed = archive.seed;
    let (w, bank) = archive.to_weights()?;
    Ok((w, bank, seed))
}
