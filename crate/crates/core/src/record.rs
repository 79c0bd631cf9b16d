//! Transformation records and the append-only JSONL record log.
//!
//! One JSON object per line:
//!
//! ```text
//! {"program":"<SOS> f0 f1 multiply <EOS>","score":0.91,"provenance":"rl"}
//! ```
//!
//! A truncated final line (a crash mid-write) is ignored on reload; a
//! malformed line anywhere else is an error.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::PostfixProgram;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Rl,
    Random,
    Augmented,
}

/// A program paired with the downstream score of the feature space it
/// produces.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformationRecord {
    pub program: PostfixProgram,
    pub score: f64,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    program: String,
    score: f64,
    provenance: Provenance,
}

impl TransformationRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&RecordLine {
            program: self.program.to_string(),
            score: self.score,
            provenance: self.provenance,
        })
        .expect("records always serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let r: RecordLine =
            serde_json::from_str(line).map_err(|e| Error::Input(format!("bad record: {e}")))?;
        Ok(Self {
            program: r.program.parse()?,
            score: r.score,
            provenance: r.provenance,
        })
    }
}

/// Appends records to a log, flushing after every line.
pub struct RecordWriter {
    out: BufWriter<File>,
    path: String,
}

impl RecordWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let file = File::create(p).map_err(|e| Error::io(p, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: p.display().to_string(),
        })
    }

    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .map_err(|e| Error::io(p, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: p.display().to_string(),
        })
    }

    pub fn write(&mut self, r: &TransformationRecord) -> Result<()> {
        let io = |e| Error::io(&self.path, e);
        writeln!(self.out, "{}", r.to_json_line()).map_err(io)?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[TransformationRecord]) -> Result<()> {
    let mut w = RecordWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TransformationRecord>> {
    let p = path.as_ref();
    let file = File::open(p).map_err(|e| Error::io(p, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        lines.push(line.map_err(|e| Error::io(p, e))?);
    }
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match TransformationRecord::from_json_line(line) {
            Ok(r) => out.push(r),
            Err(_) if Some(i) == last => {
                log::warn!("{}: ignoring truncated final line {}", p.display(), i + 1);
            }
            Err(e) => {
                return Err(Error::Input(format!("{}: line {}: {e}", p.display(), i + 1)));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p: &str, v: f64) -> TransformationRecord {
        TransformationRecord {
            program: p.parse().unwrap(),
            score: v,
            provenance: Provenance::Rl,
        }
    }

    #[test]
    fn line_format() {
        let line = rec("<SOS> f0 f1 plus <EOS>", 0.5).to_json_line();
        assert_eq!(line, r#"{"program":"<SOS> f0 f1 plus <EOS>","score":0.5,"provenance":"rl"}"#);
    }

    #[test]
    fn log_round_trip_and_truncated_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let records = vec![rec("<SOS> f0 <EOS>", 0.1), rec("<SOS> f1 log <EOS>", 0.123456789012345)];
        write_records(&path, &records).unwrap();
        assert_eq!(read_records(&path).unwrap(), records);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str(r#"{"program":"<SOS> f"#);
        std::fs::write(&path, &text).unwrap();
        assert_eq!(read_records(&path).unwrap(), records);

        let corrupt = format!("garbage\n{text}");
        std::fs::write(&path, corrupt).unwrap();
        assert!(read_records(&path).is_err());
    }
}
