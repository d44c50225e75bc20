//! Line-delimited JSON. Records serialize with their declared field order,
//! one per line, `\n` terminated, UTF-8.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::IoError;

pub fn to_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(record).expect("record types always serialize")
}

/// Serialize records to a JSONL byte buffer.
pub fn to_bytes<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(to_line(r).as_bytes());
        out.push(b'\n');
    }
    out
}

pub fn write<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<Vec<u8>, IoError> {
    let bytes = to_bytes(records);
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| IoError::io(parent, e))?;
    }
    fs::write(path, &bytes).map_err(|e| IoError::io(path, e))?;
    Ok(bytes)
}

pub fn parse_str<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IoError::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        b: u32,
        a: String,
    }

    #[test]
    fn key_order_follows_declaration() {
        let line = to_line(&Rec { b: 1, a: "x".into() });
        assert_eq!(line, r#"{"b":1,"a":"x"}"#);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = parse_str::<Rec>("{\"b\":1,\"a\":\"x\"}\n\n{oops}\n", "mem").unwrap_err();
        match err {
            IoError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn reserialization_is_byte_stable() {
        let recs = vec![Rec { b: 3, a: "é".into() }, Rec { b: 0, a: String::new() }];
        let bytes = to_bytes(&recs);
        let back: Vec<Rec> = parse_str(std::str::from_utf8(&bytes).unwrap(), "mem").unwrap();
        assert_eq!(to_bytes(&back), bytes);
    }
}
