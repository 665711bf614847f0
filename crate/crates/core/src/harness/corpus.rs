//! Corpus persistence: one JSON scenario per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::world::Scenario;

pub fn write_corpus(path: &Path, corpus: &[Scenario]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_corpus_to(&mut w, corpus)?;
    w.flush()?;
    Ok(())
}

pub fn write_corpus_to<W: Write>(w: &mut W, corpus: &[Scenario]) -> Result<()> {
    for s in corpus {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a corpus; blank lines are skipped and every record is validated.
pub fn read_corpus(path: &Path) -> Result<Vec<Scenario>> {
    let f = File::open(path)?;
    read_corpus_from(BufReader::new(f), path)
}

pub fn read_corpus_from<R: BufRead>(r: R, path: &Path) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Scenario = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_corpus, Difficulty};

    #[test]
    fn corpus_round_trips_bit_exactly() {
        let corpus = generate_corpus(12, Difficulty::Hard, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_corpus(&p, &corpus).unwrap();
        let back = read_corpus(&p).unwrap();
        assert_eq!(back, corpus);
        let q = dir.path().join("d.jsonl");
        write_corpus(&q, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn bad_line_reports_position() {
        let corpus = generate_corpus(2, Difficulty::Easy, 5).unwrap();
        let mut buf = Vec::new();
        write_corpus_to(&mut buf, &corpus).unwrap();
        buf.extend_from_slice(b"{\"seed\": 1}\n");
        let err = read_corpus_from(&buf[..], Path::new("x.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }
}
