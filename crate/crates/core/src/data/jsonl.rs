use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, Document, Split};
use crate::error::{Error, Result};

/// Reads a JSON Lines dataset. The dataset name is the file stem, and the
/// split tag is set when the stem is `train`, `dev` or `test`.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let documents = parse_jsonl(&text, &path.display().to_string())?;
    let ds = Dataset::new(stem.clone(), Split::from_name(&stem), documents);
    ds.validate()?;
    Ok(ds)
}

/// Parses JSON Lines text; blank lines are skipped. `origin` labels errors.
pub fn parse_jsonl(text: &str, origin: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn to_jsonl(docs: &[Document]) -> Result<String> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_jsonl(&ds.documents)?.as_bytes())?;
    Ok(())
}
