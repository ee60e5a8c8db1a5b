//! The entity/relation lookup table and its `KGE-TABLE v1` text format.
//!
//! ```text
//! KGE-TABLE v1 <n_entities> <n_relations> <d_e> <d_r>
//! <entity label>\t<hex-float components separated by spaces>
//! ...
//! <relation label>\t<...>
//! ```

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::Vocab;
use crate::error::{Error, Result};
use crate::hexfloat;

const MAGIC: &str = "KGE-TABLE v1";

/// One vector per entity and per relation, rows aligned with the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub entity_labels: Vocab,
    pub relation_labels: Vocab,
    pub entity_vectors: Array2<f64>,
    pub relation_vectors: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(
        entity_labels: Vocab,
        relation_labels: Vocab,
        entity_vectors: Array2<f64>,
        relation_vectors: Array2<f64>,
    ) -> Result<Self> {
        let table = Self { entity_labels, relation_labels, entity_vectors, relation_vectors };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        if self.entity_vectors.nrows() != self.entity_labels.len()
            || self.relation_vectors.nrows() != self.relation_labels.len()
        {
            return Err(Error::Format("row count does not match vocabulary size".into()));
        }
        if self.entity_vectors.ncols() == 0 || self.relation_vectors.ncols() == 0 {
            return Err(Error::Format("embedding dimensions must be positive".into()));
        }
        if self.entity_vectors.iter().chain(self.relation_vectors.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite component".into()));
        }
        Ok(())
    }

    pub fn entity_dim(&self) -> usize {
        self.entity_vectors.ncols()
    }

    pub fn relation_dim(&self) -> usize {
        self.relation_vectors.ncols()
    }

    pub fn num_entities(&self) -> usize {
        self.entity_vectors.nrows()
    }

    /// Entity row by label.
    pub fn lookup(&self, label: &str) -> Result<ndarray::ArrayView1<'_, f64>> {
        let i = self
            .entity_labels
            .get(label)
            .ok_or_else(|| Error::Lookup(format!("entity `{label}` not in embedding table")))?;
        Ok(self.entity_vectors.row(i))
    }

    pub fn write_to(&self, mut sink: impl Write) -> Result<()> {
        writeln!(
            sink,
            "{MAGIC} {} {} {} {}",
            self.num_entities(),
            self.relation_vectors.nrows(),
            self.entity_dim(),
            self.relation_dim()
        )?;
        for (label, row) in self.entity_labels.labels().iter().zip(self.entity_vectors.rows()) {
            writeln!(sink, "{label}\t{}", hexfloat::format_row(row.iter().copied()))?;
        }
        for (label, row) in self.relation_labels.labels().iter().zip(self.relation_vectors.rows()) {
            writeln!(sink, "{label}\t{}", hexfloat::format_row(row.iter().copied()))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("labels are UTF-8")
    }

    pub fn from_text(source: &str) -> Result<Self> {
        let mut lines = source.lines();
        let header = lines.next().ok_or_else(|| Error::Format("missing header".into()))?;
        let dims = header
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Format(format!("expected `{MAGIC}` header")))?;
        let dims: Vec<usize> = dims
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| Error::Format(format!("bad header field `{d}`"))))
            .collect::<Result<_>>()?;
        let [n_e, n_r, d_e, d_r] = dims[..] else {
            return Err(Error::Format("header needs 4 integers".into()));
        };
        let mut read_block = |n: usize, d: usize| -> Result<(Vocab, Array2<f64>)> {
            let mut labels = Vec::with_capacity(n);
            let mut data = Vec::with_capacity(n * d);
            for _ in 0..n {
                let line = lines.next().ok_or_else(|| Error::Format("truncated table".into()))?;
                let (label, row) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::Format("row without label separator".into()))?;
                data.extend(hexfloat::parse_row(row, d)?);
                labels.push(label.to_owned());
            }
            let matrix = Array2::from_shape_vec((n, d), data).expect("shape checked per row");
            Ok((Vocab::from_labels(labels)?, matrix))
        };
        let (entity_labels, entity_vectors) = read_block(n_e, d_e)?;
        let (relation_labels, relation_vectors) = read_block(n_r, d_r)?;
        if lines.any(|l| !l.is_empty()) {
            return Err(Error::Format("trailing data after table".into()));
        }
        Self::new(entity_labels, relation_labels, entity_vectors, relation_vectors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
