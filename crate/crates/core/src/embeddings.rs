//! Sentence-embedding files: JSON Lines with a header record followed by
//! one `{"subject_id", "round", "vector"}` record per document.
//!
//! `round: null` keys the full-history document; `round: n` keys the
//! cumulative document through the subject's n-th message.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::EmbeddingError;
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub encoder: String,
    pub pooling: String,
    pub dimension: usize,
    pub max_length: usize,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BodyRecord {
    subject_id: String,
    round: Option<usize>,
    vector: Vec<f64>,
}

pub type EmbeddingKey = (String, Option<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub header: EmbeddingHeader,
    vectors: BTreeMap<EmbeddingKey, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(header: EmbeddingHeader) -> Self {
        EmbeddingTable {
            header,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.header.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(
        &mut self,
        subject_id: impl Into<String>,
        round: Option<usize>,
        vector: Vec<f64>,
    ) -> Result<(), EmbeddingError> {
        let line = self.vectors.len() + 2;
        if vector.len() != self.header.dimension {
            return Err(EmbeddingError::Dimension {
                line,
                expected: self.header.dimension,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { line });
        }
        let key = (subject_id.into(), round);
        if self.vectors.contains_key(&key) {
            return Err(EmbeddingError::Duplicate {
                line,
                subject_id: key.0,
                round: key.1,
            });
        }
        self.vectors.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, subject_id: &str, round: Option<usize>) -> Option<&[f64]> {
        self.vectors
            .get(&(subject_id.to_string(), round))
            .map(Vec::as_slice)
    }

    /// Full-history vector, falling back to the subject's last round.
    pub fn full(&self, subject_id: &str, n_messages: usize) -> Result<&[f64], EmbeddingError> {
        self.get(subject_id, None)
            .or_else(|| self.get(subject_id, Some(n_messages)))
            .ok_or_else(|| EmbeddingError::Missing {
                subject_id: subject_id.to_string(),
                round: None,
            })
    }

    pub fn round(&self, subject_id: &str, round: usize) -> Result<&[f64], EmbeddingError> {
        self.get(subject_id, Some(round))
            .ok_or_else(|| EmbeddingError::Missing {
                subject_id: subject_id.to_string(),
                round: Some(round),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EmbeddingKey, &Vec<f64>)> {
        self.vectors.iter()
    }

    /// Stacks vectors into an n×d matrix.
    pub fn matrix<'a>(
        &self,
        keys: impl IntoIterator<Item = &'a [f64]>,
    ) -> Matrix {
        let rows: Vec<&[f64]> = keys.into_iter().collect();
        Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(0, self.dimension()))
    }

    pub fn read(reader: impl BufRead) -> Result<Self, EmbeddingError> {
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, line)) if line.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
                Some((i, line)) => {
                    let line = line?;
                    break serde_json::from_str::<EmbeddingHeader>(&line).map_err(|e| {
                        EmbeddingError::Format {
                            line: i + 1,
                            message: format!("bad header: {e}"),
                        }
                    })?;
                }
                None => {
                    return Err(EmbeddingError::Format {
                        line: 1,
                        message: "missing header record".into(),
                    })
                }
            }
        };
        let mut table = EmbeddingTable::new(header);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: BodyRecord =
                serde_json::from_str(&line).map_err(|e| EmbeddingError::Format {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            table
                .insert(record.subject_id, record.round, record.vector)
                .map_err(|e| relabel_line(e, i + 1))?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let file = fs::File::open(path)?;
        EmbeddingTable::read(std::io::BufReader::new(file))
    }

    /// Writes the header then records ordered by (subject, round), with
    /// `round: null` first.
    pub fn write(&self, mut out: impl Write) -> Result<(), EmbeddingError> {
        serde_json::to_writer(&mut out, &self.header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for ((subject_id, round), vector) in &self.vectors {
            let record = BodyRecord {
                subject_id: subject_id.clone(),
                round: *round,
                vector: vector.clone(),
            };
            serde_json::to_writer(&mut out, &record).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }
}

fn relabel_line(e: EmbeddingError, line: usize) -> EmbeddingError {
    match e {
        EmbeddingError::Dimension { expected, got, .. } => EmbeddingError::Dimension {
            line,
            expected,
            got,
        },
        EmbeddingError::Duplicate {
            subject_id, round, ..
        } => EmbeddingError::Duplicate {
            line,
            subject_id,
            round,
        },
        EmbeddingError::NonFinite { .. } => EmbeddingError::NonFinite { line },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(d: usize) -> EmbeddingHeader {
        EmbeddingHeader {
            encoder: "test".into(),
            pooling: "mean".into(),
            dimension: d,
            max_length: 512,
            created_at: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn round_trip_preserves_bits() {
        let mut t = EmbeddingTable::new(header(3));
        t.insert("b", None, vec![0.1, 1.0 / 3.0, -2.5e-300]).unwrap();
        t.insert("a", Some(2), vec![f64::MAX, f64::MIN_POSITIVE, 0.0]).unwrap();
        t.insert("a", None, vec![1e-17, -0.0, 7.0]).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = EmbeddingTable::read(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        for ((_, v1), (_, v2)) in t.iter().zip(back.iter()) {
            for (x, y) in v1.iter().zip(v2) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with(r#"{"subject_id":"a","round":null"#));
        assert!(lines[2].contains(r#""round":2"#));
    }

    #[test]
    fn rejects_malformed_files() {
        let h = serde_json::to_string(&header(2)).unwrap();
        let dim = format!("{h}\n{{\"subject_id\":\"a\",\"round\":null,\"vector\":[1.0]}}\n");
        assert!(matches!(
            EmbeddingTable::read(dim.as_bytes()),
            Err(EmbeddingError::Dimension { line: 2, expected: 2, got: 1 })
        ));
        let rec = r#"{"subject_id":"a","round":1,"vector":[1.0,2.0]}"#;
        let dup = format!("{h}\n{rec}\n{rec}\n");
        assert!(matches!(
            EmbeddingTable::read(dup.as_bytes()),
            Err(EmbeddingError::Duplicate { line: 3, .. })
        ));
        assert!(matches!(
            EmbeddingTable::read("".as_bytes()),
            Err(EmbeddingError::Format { .. })
        ));
        assert!(matches!(
            EmbeddingTable::read(format!("{h}\nnot json\n").as_bytes()),
            Err(EmbeddingError::Format { line: 2, .. })
        ));
    }

    #[test]
    fn full_falls_back_to_last_round() {
        let mut t = EmbeddingTable::new(header(1));
        t.insert("a", Some(3), vec![3.0]).unwrap();
        assert_eq!(t.full("a", 3).unwrap(), &[3.0]);
        assert!(t.full("a", 4).is_err());
        assert!(t.round("a", 1).is_err());
    }
}
