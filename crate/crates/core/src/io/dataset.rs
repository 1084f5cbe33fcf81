use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::format::{to_writer, Precise};
use crate::error::{Error, Result};
use crate::hmm::Sequence;
use crate::scalar::Scalar;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    obs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// One dataset line: a sequence (carrying its id) and an optional label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence<T> {
    pub sequence: Sequence<T>,
    pub label: Option<String>,
}

/// Streams records from line-delimited JSON, checking that every record has
/// the dimension of the first. Blank lines are skipped.
pub struct DatasetReader<R> {
    lines: std::io::Lines<R>,
    source_name: String,
    line_no: usize,
    dim: Option<usize>,
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(reader: R, source_name: impl Into<String>) -> Self {
        Self { lines: reader.lines(), source_name: source_name.into(), line_no: 0, dim: None }
    }

    fn parse<T: Scalar>(&mut self, line: &str) -> Result<LabeledSequence<T>> {
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            source_name: self.source_name.clone(),
            line: self.line_no,
            column: e.column(),
            message: e.to_string(),
        })?;
        let at = |field: &str| format!("{} line {} ({}).{field}", self.source_name, self.line_no, rec.id);
        if rec.obs.is_empty() {
            return Err(Error::Validation { path: at("obs"), message: "has no observations".into() });
        }
        let d = rec.obs[0].len();
        if d == 0 {
            return Err(Error::Validation { path: at("obs[0]"), message: "is empty".into() });
        }
        if let Some(t) = rec.obs.iter().position(|row| row.len() != d) {
            return Err(Error::Validation {
                path: at(&format!("obs[{t}]")),
                message: format!("has {} values, expected {d}", rec.obs[t].len()),
            });
        }
        match self.dim {
            Some(expected) if expected != d => {
                return Err(Error::Validation {
                    path: at("obs"),
                    message: format!("dimension {d} differs from earlier records ({expected})"),
                })
            }
            _ => self.dim = Some(d),
        }
        if let Some(t) = rec.obs.iter().position(|row| row.iter().any(|x| !x.is_finite())) {
            return Err(Error::Validation { path: at(&format!("obs[{t}]")), message: "is not finite".into() });
        }
        let obs = Array2::from_shape_fn((rec.obs.len(), d), |(t, k)| T::of(rec.obs[t][k]));
        Ok(LabeledSequence { sequence: Sequence::new(obs)?.with_id(rec.id), label: rec.label })
    }

    pub fn next_record<T: Scalar>(&mut self) -> Option<Result<LabeledSequence<T>>> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&line));
        }
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<LabeledSequence<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record()
    }
}

pub fn read_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<LabeledSequence<T>>> {
    let path = path.as_ref();
    let mut reader = DatasetReader::new(BufReader::new(File::open(path)?), path.display().to_string());
    let mut out = Vec::new();
    while let Some(rec) = reader.next_record() {
        out.push(rec?);
    }
    Ok(out)
}

/// Writes one record per line. Sequences without an id get `seq-<index>`.
pub fn write_dataset<T: Scalar, W: Write>(mut writer: W, records: &[LabeledSequence<T>]) -> Result<()> {
    for (k, r) in records.iter().enumerate() {
        let obs = r.sequence.observations();
        let rec = Record {
            id: r.sequence.id.clone().unwrap_or_else(|| format!("seq-{k}")),
            obs: obs.rows().into_iter().map(|row| row.iter().map(|x| x.to_f64_lossy()).collect()).collect(),
            label: r.label.clone(),
        };
        to_writer(&mut writer, Precise::compact(), &rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_dataset<T: Scalar>(path: impl AsRef<Path>, records: &[LabeledSequence<T>]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn read(text: &str) -> Result<Vec<LabeledSequence<f64>>> {
        DatasetReader::new(text.as_bytes(), "mem").collect()
    }

    #[test]
    fn round_trip_with_and_without_labels() {
        let recs = vec![
            LabeledSequence {
                sequence: Sequence::new(array![[0.1, 2.0], [1.0 / 3.0, -4.5]]).unwrap().with_id("a"),
                label: Some("x".into()),
            },
            LabeledSequence { sequence: Sequence::new(array![[7.0, 8.0]]).unwrap().with_id("b"), label: None },
        ];
        let mut out = Vec::new();
        write_dataset(&mut out, &recs).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.lines().nth(1).unwrap().contains("label"));
        assert_eq!(read(&text).unwrap(), recs);
    }

    #[test]
    fn blank_lines_are_skipped_and_lines_counted() {
        let text = "{\"id\":\"a\",\"obs\":[[1.0]]}\n\n{\"id\":\"b\",\"obs\":[[1.0]\n";
        match read(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_dimension_is_rejected() {
        let text = "{\"id\":\"a\",\"obs\":[[1.0, 2.0]]}\n{\"id\":\"b\",\"obs\":[[1.0]]}\n";
        match read(text) {
            Err(Error::Validation { path, .. }) => assert_eq!(path, "mem line 2 (b).obs"),
            other => panic!("unexpected {other:?}"),
        }
        let ragged = "{\"id\":\"a\",\"obs\":[[1.0, 2.0], [3.0]]}\n";
        assert!(matches!(read(ragged), Err(Error::Validation { .. })));
        assert!(matches!(read("{\"id\":\"a\",\"obs\":[]}"), Err(Error::Validation { .. })));
    }
}
