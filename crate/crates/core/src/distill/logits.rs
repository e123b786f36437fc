//! Precomputed teacher logits keyed by sample id.
//!
//! CSV layout: header `sample_id,logit_0,...,logit_{M-1}`, one row per
//! sample, UTF-8, `.` as decimal point.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogitsTable {
    pub num_classes: usize,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl LogitsTable {
    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("sample_id") || headers.len() < 2 {
            return Err(Error::Data("logits table header must start with 'sample_id'".into()));
        }
        for (i, h) in headers.iter().skip(1).enumerate() {
            if h != format!("logit_{i}") {
                return Err(Error::Data(format!("logits column {} should be 'logit_{i}', found '{h}'", i + 1)));
            }
        }
        let num_classes = headers.len() - 1;
        let mut rows = BTreeMap::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let id = record[0].to_string();
            let logits = record
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                        Error::Data(format!("row {} (sample '{id}'): bad logit '{v}'", line + 2))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if rows.insert(id.clone(), logits).is_some() {
                return Err(Error::Data(format!("duplicate sample id '{id}' in logits table")));
            }
        }
        Ok(Self { num_classes, rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["sample_id".to_string()];
        header.extend((0..self.num_classes).map(|i| format!("logit_{i}")));
        w.write_record(&header)?;
        for (id, logits) in &self.rows {
            let mut rec = vec![id.clone()];
            // shortest round-trip representation
            rec.extend(logits.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<logits csv>", e))?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(file)
    }

    /// Runs `teacher` over the given samples.
    pub fn from_model(teacher: &Model, dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for &i in indices {
            let s = &dataset.samples[i];
            rows.insert(s.id.clone(), teacher.logits(&s.image)?.into_data());
        }
        Ok(Self {
            num_classes: teacher.num_classes(),
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut rows = BTreeMap::new();
        rows.insert("000001".to_string(), vec![0.1, -2.5e-7, 1.0 / 3.0]);
        rows.insert("a/b.png".to_string(), vec![3.0, 4.0, -0.0]);
        let table = LogitsTable { num_classes: 3, rows };
        let mut buf = Vec::new();
        table.to_writer(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sample_id,logit_0,logit_1,logit_2\n"));
        assert_eq!(LogitsTable::from_reader(buf.as_slice()).unwrap(), table);
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(LogitsTable::from_reader("id,logit_0\nx,1\n".as_bytes()).is_err());
        assert!(LogitsTable::from_reader("sample_id,logit_1\nx,1\n".as_bytes()).is_err());
        assert!(LogitsTable::from_reader("sample_id,logit_0\nx,abc\n".as_bytes()).is_err());
        assert!(LogitsTable::from_reader("sample_id,logit_0\nx,1\nx,2\n".as_bytes()).is_err());
        assert!(LogitsTable::from_reader("sample_id,logit_0,logit_1\nx,1\n".as_bytes()).is_err());
    }
}
