use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::engine::ReconstructionAttempt;
use crate::error::{Error, Result};

/// Writes attempts as JSON lines `{field_id, attempt, tokens, p, g}`.
pub fn write_attempts(path: &Path, attempts: &[ReconstructionAttempt]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for a in attempts {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_attempts(path: &Path) -> Result<Vec<ReconstructionAttempt>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = vec![ReconstructionAttempt {
            field_id: "d1#0".into(),
            attempt: 3,
            tokens: vec![7, 8],
            p: vec![0.5, 0.25],
            g: vec![0.1, 0.2],
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        write_attempts(&p, &a).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text.trim(),
            r#"{"field_id":"d1#0","attempt":3,"tokens":[7,8],"p":[0.5,0.25],"g":[0.1,0.2]}"#
        );
        assert_eq!(read_attempts(&p).unwrap(), a);
    }
}
