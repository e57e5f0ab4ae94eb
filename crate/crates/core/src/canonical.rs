//! Canonical text form for every persisted artifact.
//!
//! Objects are written with sorted keys, floats with exactly six decimals and
//! integers verbatim, so identical values always produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Multi-line canonical form with two-space indentation and a trailing newline.
pub fn to_canonical_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, Some(0))?;
    out.push('\n');
    Ok(out)
}

/// Single-line canonical form, used for line-delimited record files.
pub fn to_canonical_line<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, None)?;
    Ok(out)
}

pub fn from_text<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

pub fn format_float(f: f64) -> Result<String> {
    if !f.is_finite() {
        return Err(Error::invalid(format!("non-finite float {f} cannot be serialized")));
    }
    let s = format!("{f:.6}");
    if s == "-0.000000" {
        Ok("0.000000".to_string())
    } else {
        Ok(s)
    }
}

fn write_value(out: &mut String, v: &Value, indent: Option<usize>) -> Result<()> {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN))?);
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s)?),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return Ok(());
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, indent.map(|d| d + 1));
                write_value(out, item, indent.map(|d| d + 1))?;
            }
            newline(out, indent);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return Ok(());
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, indent.map(|d| d + 1));
                out.push_str(&serde_json::to_string(key)?);
                out.push(':');
                if indent.is_some() {
                    out.push(' ');
                }
                write_value(out, &map[*key], indent.map(|d| d + 1))?;
            }
            newline(out, indent);
            out.push('}');
        }
    }
    Ok(())
}

fn newline(out: &mut String, indent: Option<usize>) {
    if let Some(depth) = indent {
        out.push('\n');
        for _ in 0..depth {
            out.push_str("  ");
        }
    }
}

/// Writes `contents` to `path` via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents.as_bytes())
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_pretty<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_canonical_pretty(value)?)
}

pub fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&to_canonical_line(r)?);
        text.push('\n');
    }
    write_atomic(path, &text)
}

pub fn read_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_floats_fixed() {
        let v = json!({"b": 0.5, "a": [1, 2.25], "c": {"z": null, "y": "s"}});
        assert_eq!(
            to_canonical_line(&v).unwrap(),
            r#"{"a":[1,2.250000],"b":0.500000,"c":{"y":"s","z":null}}"#
        );
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(format_float(-0.0000001).unwrap(), "0.000000");
    }

    #[test]
    fn pretty_reparses_to_the_same_bytes() {
        let v = json!({"w": {"x": 0.1234567, "y": 1.0}, "n": 3, "e": [], "o": {}});
        let once = to_canonical_pretty(&v).unwrap();
        let back: Value = from_text(&once).unwrap();
        assert_eq!(to_canonical_pretty(&back).unwrap(), once);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(format_float(f64::INFINITY).is_err());
    }
}
