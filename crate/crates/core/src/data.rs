//! Labelled datasets and the `EVDS` file format.
//!
//! ```text
//! "EVDS"  u32 version  u64 n_samples  u32 dim
//! f64 data[n_samples × dim]   (row-major)
//! u8  labels[n_samples]       (0 or 1)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::losses::ModelPriorRatio;
use crate::models::ModelPair;
use crate::rng;

pub const MAGIC: &[u8; 4] = b"EVDS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    data: Array2<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(data: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        if data.nrows() != labels.len() {
            return Err(invalid(format!("{} rows but {} labels", data.nrows(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&m| m > 1) {
            return Err(invalid(format!("labels must be 0 or 1, found {bad}")));
        }
        Ok(Dataset { data, labels })
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// `(count of label 1, count of label 0)`.
    pub fn label_counts(&self) -> (usize, usize) {
        let ones = self.labels.iter().filter(|&&m| m == 1).count();
        (ones, self.len() - ones)
    }

    /// The prior ratio to decode with. Unequal label counts require an
    /// explicit declaration.
    pub fn prior_ratio(&self, declared: Option<ModelPriorRatio>) -> Result<ModelPriorRatio> {
        if let Some(p) = declared {
            return Ok(p);
        }
        let (n1, n0) = self.label_counts();
        if n1 != n0 {
            return Err(invalid(format!(
                "labels are imbalanced ({n1} vs {n0}); declare a model prior ratio to train on them"
            )));
        }
        Ok(ModelPriorRatio::EQUAL)
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            data: self.data.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<u8>) {
        (self.data, self.labels)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.labels)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 20];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("not an EVDS dataset".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported EVDS version {version}")));
        }
        let n = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
        let dim = u32::from_le_bytes(head[16..20].try_into().expect("4 bytes")) as usize;
        let mut bytes = vec![0u8; n * dim * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let data = Array2::from_shape_vec((n, dim), values).map_err(|e| Error::Format(e.to_string()))?;
        let mut labels = vec![0u8; n];
        r.read_exact(&mut labels)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after dataset".into()));
        }
        Dataset::new(data, labels).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

/// `n_per_model` rows from each model of `pair`, shuffled. Label 1 marks the
/// first model.
pub fn generate_training_set(pair: &ModelPair, n_per_model: usize, seed: u64) -> Result<Dataset> {
    if n_per_model == 0 {
        return Err(invalid("n_per_model must be at least 1"));
    }
    let x1 = pair.sample(1, &mut rng::stream(seed, rng::STREAM_MODEL_1), n_per_model)?;
    let x0 = pair.sample(0, &mut rng::stream(seed, rng::STREAM_MODEL_0), n_per_model)?;
    let data = concatenate(Axis(0), &[x1.view(), x0.view()]).expect("same width");
    let mut labels = vec![1u8; n_per_model];
    labels.resize(2 * n_per_model, 0);
    let mut order: Vec<usize> = (0..2 * n_per_model).collect();
    order.shuffle(&mut rng::stream(seed, rng::STREAM_SHUFFLE));
    Dataset::new(data, labels).map(|d| d.select(&order))
}

/// The batch followed by its negation, with labels repeated.
pub fn augment_sign_flip(batch: ArrayView2<f64>, labels: &[u8]) -> (Array2<f64>, Vec<u8>) {
    let flipped = batch.mapv(|v| -v);
    let data = concatenate(Axis(0), &[batch, flipped.view()]).expect("same width");
    let mut out = labels.to_vec();
    out.extend_from_slice(labels);
    (data, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn evds_round_trip() {
        let d = Dataset::new(
            array![[1.0, -2.5], [f64::MIN_POSITIVE, 3.0], [0.0, -0.0]],
            vec![1, 0, 1],
        )
        .unwrap();
        let bytes = d.to_bytes();
        assert_eq!(&bytes[..4], b"EVDS");
        assert_eq!(bytes.len(), 20 + 3 * 2 * 8 + 3);
        let back = Dataset::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.labels(), d.labels());
    }

    #[test]
    fn evds_rejects_corruption() {
        let d = Dataset::new(array![[1.0]], vec![1]).unwrap();
        let mut bytes = d.to_bytes();
        assert!(Dataset::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
        let last = bytes.len() - 1;
        bytes[last] = 7;
        assert!(matches!(
            Dataset::read_from(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
        bytes[0] = b'Z';
        assert!(Dataset::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn construction_checks() {
        assert!(Dataset::new(Array2::zeros((2, 1)), vec![0]).is_err());
        assert!(Dataset::new(Array2::zeros((1, 1)), vec![2]).is_err());
    }

    #[test]
    fn generated_sets_are_balanced_and_reproducible() {
        let pair = ModelPair::time_series(20).unwrap();
        let d = generate_training_set(&pair, 1000, 3).unwrap();
        assert_eq!(d.len(), 2000);
        assert_eq!(d.label_counts(), (1000, 1000));
        assert_eq!(d.to_bytes(), generate_training_set(&pair, 1000, 3).unwrap().to_bytes());
        assert_eq!(d.prior_ratio(None).unwrap(), ModelPriorRatio::EQUAL);

        let r = generate_training_set(&ModelPair::rastrigin(2, 1.0 / 16.0).unwrap(), 500, 1).unwrap();
        assert_eq!((r.len(), r.dim()), (1000, 2));
    }

    #[test]
    fn imbalance_needs_declaration() {
        let d = Dataset::new(Array2::zeros((3, 1)), vec![1, 1, 0]).unwrap();
        assert!(d.prior_ratio(None).is_err());
        let p = ModelPriorRatio::from_counts(2, 1).unwrap();
        assert_eq!(d.prior_ratio(Some(p)).unwrap(), p);
    }

    #[test]
    fn sign_flip() {
        let (x, m) = augment_sign_flip(array![[1.0, -2.0]].view(), &[1]);
        assert_eq!(x, array![[1.0, -2.0], [-1.0, 2.0]]);
        assert_eq!(m, vec![1, 1]);
    }
}
