//! The trained artifact: an N x d embedding table aligned with the panel's
//! asset order, with CSV and binary persistence.

use std::io::{Read, Write};
use std::path::Path;

use super::TrainError;
use crate::mat::Mat;

const EMBED_MAGIC: &[u8; 4] = b"EMBD";
const EMBED_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    asset_ids: Vec<String>,
    vectors: Mat,
}

impl EmbeddingMatrix {
    pub fn new(asset_ids: Vec<String>, vectors: Mat) -> Result<Self, TrainError> {
        if vectors.rows() != asset_ids.len() {
            return Err(TrainError::DimensionMismatch {
                expected: asset_ids.len(),
                found: vectors.rows(),
            });
        }
        if vectors.cols() < 2 {
            return Err(TrainError::BadDimension(vectors.cols()));
        }
        if vectors.data().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteEmbedding);
        }
        Ok(EmbeddingMatrix { asset_ids, vectors })
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    #[inline]
    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn vectors(&self) -> &Mat {
        &self.vectors
    }

    pub fn index_of(&self, asset_id: &str) -> Option<usize> {
        self.asset_ids.iter().position(|id| id == asset_id)
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.vector(i).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// CSV layout `asset_id,e_0,...,e_{d-1}` with full-precision values.
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["asset_id".to_string()];
        header.extend((0..self.dim()).map(|c| format!("e_{c}")));
        writer.write_record(&header)?;
        for (i, id) in self.asset_ids.iter().enumerate() {
            let mut record = vec![id.clone()];
            record.extend(self.vector(i).iter().map(|v| format!("{v}")));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, TrainError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let dim = reader.headers()?.len().saturating_sub(1);
        let mut asset_ids = Vec::new();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            asset_ids.push(record[0].to_string());
            let row: Result<Vec<f64>, _> = record.iter().skip(1).map(str::parse::<f64>).collect();
            let row = row.map_err(|_| TrainError::BadEmbeddingFile)?;
            if row.len() != dim {
                return Err(TrainError::BadEmbeddingFile);
            }
            rows.push(row);
        }
        EmbeddingMatrix::new(asset_ids, Mat::from_rows(&rows))
    }

    /// Binary layout: magic `EMBD`, version byte, N and d as little-endian
    /// u32, then row-major little-endian f64 values.
    pub fn write_binary(&self, path: &Path) -> Result<(), TrainError> {
        let mut buf = Vec::with_capacity(13 + self.vectors.data().len() * 8);
        buf.extend_from_slice(EMBED_MAGIC);
        buf.push(EMBED_VERSION);
        buf.extend_from_slice(&(self.n_assets() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for value in self.vectors.data() {
            buf.extend_from_slice(&value.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    /// Reads the binary form; ids are not stored there, so the caller
    /// provides them in panel order.
    pub fn read_binary(path: &Path, asset_ids: Vec<String>) -> Result<Self, TrainError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 13 || &bytes[0..4] != EMBED_MAGIC {
            return Err(TrainError::BadEmbeddingFile);
        }
        if bytes[4] != EMBED_VERSION {
            return Err(TrainError::BadEmbeddingFile);
        }
        let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let body = &bytes[13..];
        if n != asset_ids.len() || body.len() != n * dim * 8 {
            return Err(TrainError::BadEmbeddingFile);
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingMatrix::new(asset_ids, Mat::from_vec(data, n, dim))
    }
}

#[cfg(test)]
#[allow(clippy::excessive_precision)] // frozen reference constants
mod tests {
    use super::*;

    fn sample() -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            vec!["A".into(), "B".into(), "C".into()],
            Mat::from_rows(&[
                vec![0.1, -0.2, 0.3],
                vec![1e-17, 2.5, -0.75],
                vec![0.123456789012345678, 0.0, 1.0],
            ]),
        )
        .unwrap()
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let emb = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        emb.write_csv(&path).unwrap();
        let back = EmbeddingMatrix::read_csv(&path).unwrap();
        assert_eq!(back.asset_ids(), emb.asset_ids());
        for i in 0..emb.n_assets() {
            for (a, b) in back.vector(i).iter().zip(emb.vector(i)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let emb = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        emb.write_binary(&path).unwrap();
        let back = EmbeddingMatrix::read_binary(&path, emb.asset_ids().to_vec()).unwrap();
        assert_eq!(back, emb);
        assert!(EmbeddingMatrix::read_binary(&path, vec!["X".into()]).is_err());
    }

    #[test]
    fn rejects_non_finite_and_tiny_dims() {
        assert!(matches!(
            EmbeddingMatrix::new(
                vec!["A".into()],
                Mat::from_rows(&[vec![f64::INFINITY, 0.0]])
            ),
            Err(TrainError::NonFiniteEmbedding)
        ));
        assert!(matches!(
            EmbeddingMatrix::new(vec!["A".into()], Mat::from_rows(&[vec![1.0]])),
            Err(TrainError::BadDimension(1))
        ));
    }
}
