//! Embedding (`IEMB`) and label (`ILBL`) files.
//!
//! ```text
//! "IEMB" | u16 version | u32 dim | u64 count | count x dim f32
//!        [| count x (u32 len | UTF-8 id)]        optional id table
//! "ILBL" | u16 version | u32 classes | u64 count | count x i32 label (-1 unlabeled)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"IEMB";
pub const EMBEDDING_VERSION: u16 = 1;
pub const LABEL_MAGIC: &[u8; 4] = b"ILBL";
pub const LABEL_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    dim: usize,
    data: Vec<f32>,
    ids: Option<Vec<String>>,
}

impl EmbeddingFile {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            ids: None,
        }
    }

    /// Builds a file from row-major data; `ids`, when given, names every row.
    pub fn from_rows(dim: usize, data: Vec<f32>, ids: Option<Vec<String>>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        if let Some(ids) = &ids {
            if ids.len() != data.len() / dim {
                return Err(Error::InvalidArgument(format!(
                    "{} ids for {} rows",
                    ids.len(),
                    data.len() / dim
                )));
            }
        }
        Ok(Self { dim, data, ids })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn has_ids(&self) -> bool {
        self.ids.is_some()
    }

    /// Id of row `i`: the stored id, or the row index when the file has none.
    pub fn id(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => i.to_string(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_bytes(EMBEDDING_MAGIC);
        w.put_u16(EMBEDDING_VERSION);
        w.put_u32(self.dim as u32);
        w.put_u64(self.len() as u64);
        self.data.iter().for_each(|&v| w.put_f32(v));
        if let Some(ids) = &self.ids {
            ids.iter().for_each(|id| w.put_str(id));
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "embedding file");
        r.header(EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        if dim == 0 {
            return Err(Error::corrupt("embedding file", "zero dimension"));
        }
        let n = r.check_count(count, 4 * dim)?;
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            data.push(r.f32()?);
        }
        let ids = if r.remaining() == 0 {
            None
        } else {
            let ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
            r.finish()?;
            Some(ids)
        };
        Ok(Self { dim, data, ids })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    num_classes: usize,
    labels: Vec<i32>,
}

impl LabelFile {
    pub fn new(num_classes: usize, labels: Vec<i32>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l < -1 || l >= num_classes as i32) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside -1..{num_classes}"
            )));
        }
        Ok(Self { num_classes, labels })
    }

    /// From class indices where every row is labeled.
    pub fn from_classes(num_classes: usize, classes: &[usize]) -> Result<Self> {
        Self::new(num_classes, classes.iter().map(|&c| c as i32).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.labels.get(i).and_then(|&l| usize::try_from(l).ok())
    }

    pub fn raw(&self) -> &[i32] {
        &self.labels
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_bytes(LABEL_MAGIC);
        w.put_u16(LABEL_VERSION);
        w.put_u32(self.num_classes as u32);
        w.put_u64(self.labels.len() as u64);
        self.labels.iter().for_each(|&l| w.put_i32(l));
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "label file");
        r.header(LABEL_MAGIC, LABEL_VERSION)?;
        let classes = r.u32()? as usize;
        let count = r.u64()?;
        let n = r.check_count(count, 4)?;
        let labels = (0..n).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(classes, labels).map_err(|e| Error::corrupt("label file", e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn embedding_ids_default_to_row_indices() {
        let f = EmbeddingFile::from_rows(2, vec![1.0, 2.0, 3.0, 4.0], None).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.id(1), "1");
        assert_eq!(f.row(1), &[3.0, 4.0]);
        let back = EmbeddingFile::from_bytes(&f.to_bytes()).unwrap();
        assert!(!back.has_ids());
        assert_eq!(back, f);
    }

    #[test]
    fn embedding_shape_errors() {
        assert!(EmbeddingFile::from_rows(3, vec![1.0; 4], None).is_err());
        assert!(EmbeddingFile::from_rows(2, vec![1.0; 4], Some(vec!["a".into()])).is_err());
        let f = EmbeddingFile::from_rows(2, vec![1.0; 4], Some(vec!["a".into(), "b".into()])).unwrap();
        let bytes = f.to_bytes();
        for cut in [3, 10, 20, bytes.len() - 1] {
            assert!(EmbeddingFile::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(EmbeddingFile::from_bytes(&extra).is_err());
    }

    #[test]
    fn label_values_are_checked() {
        assert!(LabelFile::new(3, vec![-1, 0, 2]).is_ok());
        assert!(LabelFile::new(3, vec![3]).is_err());
        assert!(LabelFile::new(3, vec![-2]).is_err());
        let f = LabelFile::new(3, vec![-1, 2]).unwrap();
        assert_eq!(f.get(0), None);
        assert_eq!(f.get(1), Some(2));
        let mut bytes = f.to_bytes();
        *bytes.last_mut().unwrap() = 0x7f;
        assert!(matches!(LabelFile::from_bytes(&bytes), Err(Error::Corrupt { .. })));
    }

    proptest! {
        #[test]
        fn embedding_files_round_trip_bit_exactly(
            dim in 1usize..6,
            bits in prop::collection::vec(any::<u32>(), 0..40),
            with_ids in any::<bool>(),
        ) {
            let n = bits.len() / dim;
            let data: Vec<f32> = bits[..n * dim].iter().map(|&b| f32::from_bits(b)).collect();
            let ids = with_ids.then(|| (0..n).map(|i| format!("id-{i}")).collect());
            let f = EmbeddingFile::from_rows(dim, data, ids).unwrap();
            let bytes = f.to_bytes();
            let back = EmbeddingFile::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }

        #[test]
        fn label_files_round_trip(classes in 1usize..20, raw in prop::collection::vec(-1i32..20, 0..50)) {
            let labels: Vec<i32> = raw.into_iter().map(|l| l.min(classes as i32 - 1)).collect();
            let f = LabelFile::new(classes, labels).unwrap();
            let bytes = f.to_bytes();
            prop_assert_eq!(LabelFile::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        }
    }
}
