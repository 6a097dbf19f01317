//! JSONL and JSON file helpers with line-numbered schema errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: schema violation: {detail}")]
    SchemaViolation { path: PathBuf, line: usize, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> InputError + '_ {
    move |source| InputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses JSONL text. Blank lines are skipped; `origin` names the source
/// in errors.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<Vec<T>, InputError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| InputError::SchemaViolation {
            path: origin.to_path_buf(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, InputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_jsonl(&text, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, InputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| InputError::SchemaViolation {
        path: path.to_path_buf(),
        line: e.line(),
        detail: e.to_string(),
    })
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("records serialize to JSON"));
        out.push('\n');
    }
    out
}

/// Writes through a sibling temporary file so readers never see a partial
/// artifact.
pub fn write_text(path: &Path, text: &str) -> Result<(), InputError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), InputError> {
    write_text(path, &to_jsonl(items))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), InputError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize to JSON");
    text.push('\n');
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, serde::Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Row {
        id: u32,
    }

    #[test]
    fn reports_the_offending_line() {
        let err = parse_jsonl::<Row>("{\"id\": 1}\n\n{\"id\": 2, \"x\": 0}\n", Path::new("rows.jsonl")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("rows.jsonl:3: schema violation"), "{msg}");
        let ok = parse_jsonl::<Row>("{\"id\": 1}\n  \n{\"id\": 2}", Path::new("r")).unwrap();
        assert_eq!(ok, vec![Row { id: 1 }, Row { id: 2 }]);
    }

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.jsonl");
        write_jsonl(&path, &[1u8, 2, 3]).unwrap();
        assert_eq!(read_jsonl::<u8>(&path).unwrap(), vec![1, 2, 3]);
        assert!(!path.with_extension("jsonl.tmp").exists());
    }
}
