//! Deterministic result serialization.
//!
//! Result JSON and trial CSV files must be byte-identical across runs and
//! thread counts. Floats are written with 17 significant digits (exact
//! round-trip); object keys come out sorted because `serde_json`'s map is a
//! BTreeMap. Non-finite floats appear as `null` in JSON and as
//! `inf`/`-inf`/`nan` in the CSV.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::Value;

use steinbound_core::sim::TrialRecord;

/// 17-significant-digit float formatting; exact f64 round-trip.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

fn write_json(out: &mut String, value: &Value) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format!("{:.16e}", n.as_f64().unwrap()));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).unwrap()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_json(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (key, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).unwrap());
                out.push(':');
                write_json(out, item);
            }
            out.push('}');
        }
    }
}

/// Canonical JSON text: sorted keys, 17-digit floats, trailing newline.
pub fn to_canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_json(&mut out, value);
    out.push('\n');
    out
}

pub fn result_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

pub fn csv_path(base: &Path) -> PathBuf {
    base.with_extension("csv")
}

pub fn manifest_path(base: &Path) -> PathBuf {
    base.with_extension("manifest.json")
}

fn ensure_parent(path: &Path) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

pub fn write_result(base: &Path, doc: &Value) -> io::Result<PathBuf> {
    let path = result_path(base);
    ensure_parent(&path)?;
    fs::write(&path, to_canonical_json(doc))?;
    Ok(path)
}

/// Frozen column order: trial_index, bound_value, target_quantity,
/// violated, error_flag. Booleans and flags are 0/1.
pub fn write_trials_csv(base: &Path, records: &[TrialRecord]) -> io::Result<PathBuf> {
    let path = csv_path(base);
    ensure_parent(&path)?;
    let mut out = String::from("trial_index,bound_value,target_quantity,violated,error_flag\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.trial_index,
            fmt_f64(r.bound_value),
            fmt_f64(r.target_quantity),
            u8::from(r.violated),
            u8::from(r.error.is_some()),
        ));
    }
    fs::write(&path, out)?;
    Ok(path)
}

/// The manifest records wall time and is the one output not covered by the
/// byte-identical determinism contract.
pub fn write_manifest(base: &Path, doc: &Value) -> io::Result<PathBuf> {
    let path = manifest_path(base);
    ensure_parent(&path)?;
    fs::write(&path, to_canonical_json(doc))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 123456.789] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[test]
    fn canonical_json_sorts_keys_and_formats_floats() {
        let doc = json!({"b": 0.5, "a": [1, true, "x"], "c": {"z": 2u64, "y": null}});
        assert_eq!(
            to_canonical_json(&doc),
            "{\"a\":[1,true,\"x\"],\"b\":5.0000000000000000e-1,\"c\":{\"y\":null,\"z\":2}}\n"
        );
    }
}
