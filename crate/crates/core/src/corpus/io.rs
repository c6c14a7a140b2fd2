//! Corpus files: JSON lines for documents, P5 graymaps for page images.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::document::{BBox, Document, Field, FieldType, Image, TemplateKind};
use super::vocab::TokenId;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct FieldRecord {
    /// `[start, len]`
    span: [usize; 2],
    field_type: FieldType,
    label: u32,
    selected: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    id: String,
    template_kind: TemplateKind,
    tokens: Vec<TokenId>,
    boxes: Vec<BBox>,
    fields: Vec<FieldRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duplicate_of: Option<String>,
}

/// Writes `docs` as JSON lines to `path`. Images go to `images/<id>.pgm`
/// next to the corpus file and are referenced by relative path.
pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for d in docs {
        let image_path = match &d.image {
            Some(img) => {
                let rel = format!("images/{}.pgm", d.id);
                let full = dir.join(&rel);
                if let Some(p) = full.parent() {
                    fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
                }
                write_pgm(&full, img)?;
                Some(rel)
            }
            None => None,
        };
        let rec = DocRecord {
            id: d.id.clone(),
            template_kind: d.template_kind,
            tokens: d.tokens.clone(),
            boxes: d.boxes.clone(),
            fields: d
                .fields
                .iter()
                .map(|f| FieldRecord {
                    span: [f.start, f.len],
                    field_type: f.field_type,
                    label: f.label,
                    selected: f.selected,
                })
                .collect(),
            image_path,
            duplicate_of: d.duplicate_of.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        let image = match &rec.image_path {
            Some(p) => Some(read_pgm(&dir.join(p))?),
            None => None,
        };
        let doc = Document {
            id: rec.id,
            template_kind: rec.template_kind,
            tokens: rec.tokens,
            boxes: rec.boxes,
            image,
            fields: rec
                .fields
                .into_iter()
                .map(|f| Field {
                    start: f.span[0],
                    len: f.span[1],
                    field_type: f.field_type,
                    label: f.label,
                    selected: f.selected,
                })
                .collect(),
            duplicate_of: rec.duplicate_of,
        };
        doc.validate(usize::MAX)?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(
        img.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::Data(format!("{}: not a P5 graymap", path.display()));
    // header: magic, width, height, maxval separated by whitespace
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos..pos + width * height).ok_or_else(bad)?;
    Ok(Image {
        width,
        height,
        pixels: data.iter().map(|&b| b as f32 / 255.0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate::{generate_corpus, CorpusSpec};

    #[test]
    fn corpus_round_trip_with_images() {
        let docs = generate_corpus(&CorpusSpec {
            n_docs: 5,
            seed: 2,
            duplication_rate: 0.2,
            ..CorpusSpec::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("corpus.jsonl");
        write_corpus(&p, &docs).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), docs);
        let first = fs::read_to_string(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        assert!(v["fields"][0]["span"].is_array());
        assert!(v["boxes"][0].as_array().unwrap().len() == 4);
    }

    #[test]
    fn malformed_line_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        fs::write(&p, "{\"id\": 3}\n").unwrap();
        assert!(matches!(read_corpus(&p), Err(Error::Data(_))));
    }
}
