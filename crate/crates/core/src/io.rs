//! File formats.
//!
//! * Probability matrices: CSV (one row per example, optional header line) or
//!   the binary `.rcm` layout: `b"RCM1"`, little-endian `u64` rows, `u64`
//!   columns, then row-major little-endian `f64` values.
//! * Labels: one 0-based class index per line.
//! * Prediction sets: `row_index,set_size,m1;m2;...` per line.
//! * Models, metrics and reports: JSON with floats printed to 17 significant
//!   digits and infinite thresholds written as `"inf"`.
//!
//! Every writer ends its output with a newline.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::calibration::CalibrationModel;
use crate::data::{LabelVector, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, RankFrequency, SigmaEntry};
use crate::prediction::PredictionSet;

pub const RCM_MAGIC: &[u8; 4] = b"RCM1";
const RCM_HEADER_LEN: usize = 4 + 8 + 8;

/// Formats a float like C's `%.17g`.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let all_digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let digits = all_digits.trim_end_matches('0');

    let mut out = String::new();
    if x < 0.0 {
        out.push('-');
    }
    if !(-5..17).contains(&exp) {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        let sign = if exp < 0 { '-' } else { '+' };
        let _ = write!(out, "e{sign}{:02}", exp.abs());
    } else if exp < 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(digits);
    } else {
        let int_len = exp as usize + 1;
        if digits.len() <= int_len {
            out.push_str(digits);
            out.extend(std::iter::repeat_n('0', int_len - digits.len()));
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    }
    out
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    const STEP: usize = 2;
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&fmt_g17(n.as_f64().expect("f64 number")));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                out.push_str(if i == 0 { "\n" } else { ",\n" });
                out.extend(std::iter::repeat_n(' ', indent + STEP));
                write_value(out, item, indent + STEP);
            }
            out.push('\n');
            out.extend(std::iter::repeat_n(' ', indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (key, item)) in map.iter().enumerate() {
                out.push_str(if i == 0 { "\n" } else { ",\n" });
                out.extend(std::iter::repeat_n(' ', indent + STEP));
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, indent + STEP);
            }
            out.push('\n');
            out.extend(std::iter::repeat_n(' ', indent));
            out.push('}');
        }
    }
}

/// Pretty JSON with 17-significant-digit floats and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

pub fn model_to_json(model: &CalibrationModel) -> Result<String> {
    to_json_string(model)
}

/// Parses and structurally validates a model.
pub fn parse_model_json(text: &str) -> Result<CalibrationModel> {
    let model: CalibrationModel = serde_json::from_str(text)?;
    model.validate()?;
    Ok(model)
}

pub fn read_model(path: &Path) -> Result<CalibrationModel> {
    parse_model_json(&read_text(path)?)
}

pub fn write_model(path: &Path, model: &CalibrationModel) -> Result<()> {
    write_text(path, &model_to_json(model)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value)?)
}

/// Parses a CSV probability matrix. A first line containing any non-numeric
/// field is treated as a header and skipped.
pub fn parse_matrix_csv(bytes: &[u8], source: &str) -> Result<ProbabilityMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut values = Vec::new();
    let mut k = None;
    let mut n = 0usize;
    for (ordinal, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let loc = e.position().map_or_else(
                || "unknown position".to_string(),
                |p| format!("line {}", p.line()),
            );
            Error::parse(source, loc, e.to_string())
        })?;
        let line = record.position().map_or(ordinal as u64 + 1, |p| p.line());
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if ordinal == 0 => continue,
            Err(e) => {
                return Err(Error::parse(source, format!("line {line}"), e.to_string()));
            }
        };
        match k {
            None => k = Some(row.len()),
            Some(k) if k != row.len() => {
                return Err(Error::parse(
                    source,
                    format!("line {line}"),
                    format!("expected {k} fields, found {}", row.len()),
                ));
            }
            _ => {}
        }
        values.extend(row);
        n += 1;
    }
    let k = k.ok_or_else(|| Error::parse(source, "end of input", "no data rows"))?;
    ProbabilityMatrix::new(n, k, values)
}

pub fn matrix_to_csv(m: &ProbabilityMatrix) -> String {
    let mut out = String::with_capacity(m.values().len() * 20);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_g17(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Decodes the binary `.rcm` matrix layout.
pub fn decode_rcm(bytes: &[u8], source: &str) -> Result<ProbabilityMatrix> {
    if bytes.len() < RCM_HEADER_LEN {
        return Err(Error::parse(
            source,
            format!("offset {}", bytes.len()),
            "truncated header",
        ));
    }
    if &bytes[..4] != RCM_MAGIC {
        return Err(Error::parse(source, "offset 0", "bad magic, expected RCM1"));
    }
    let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let n = read_u64(4);
    let k = read_u64(12);
    let expected = usize::try_from(n)
        .ok()
        .zip(usize::try_from(k).ok())
        .and_then(|(n, k)| n.checked_mul(k))
        .and_then(|nk| nk.checked_mul(8))
        .and_then(|b| b.checked_add(RCM_HEADER_LEN))
        .ok_or_else(|| Error::parse(source, "offset 4", format!("{n}x{k} matrix is too large")))?;
    if bytes.len() != expected {
        return Err(Error::parse(
            source,
            format!("offset {}", bytes.len().min(expected)),
            format!(
                "expected {expected} bytes for a {n}x{k} matrix, found {}",
                bytes.len()
            ),
        ));
    }
    let values = bytes[RCM_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ProbabilityMatrix::new(n as usize, k as usize, values)
}

pub fn encode_rcm(m: &ProbabilityMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(RCM_HEADER_LEN + m.values().len() * 8);
    out.extend_from_slice(RCM_MAGIC);
    out.extend_from_slice(&(m.n_rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.n_classes() as u64).to_le_bytes());
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("rcm"))
}

/// Reads a matrix, choosing the binary layout for `.rcm` files and CSV
/// otherwise.
pub fn read_probability_matrix(path: &Path) -> Result<ProbabilityMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_binary(path) {
        decode_rcm(&bytes, &source_name(path))
    } else {
        parse_matrix_csv(&bytes, &source_name(path))
    }
}

pub fn write_probability_matrix(path: &Path, m: &ProbabilityMatrix) -> Result<()> {
    if is_binary(path) {
        fs::write(path, encode_rcm(m)).map_err(|e| Error::io(path, e))
    } else {
        write_text(path, &matrix_to_csv(m))
    }
}

/// Parses one class index per line; blank lines are ignored.
pub fn parse_labels(text: &str, source: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| Error::parse(source, format!("line {}", i + 1), format!("'{}': {e}", l.trim())))
        })
        .collect()
}

/// Reads labels and validates them against `n_classes`.
pub fn read_labels(path: &Path, n_classes: usize) -> Result<LabelVector> {
    let raw = parse_labels(&read_text(path)?, &source_name(path))?;
    LabelVector::new(raw, n_classes)
}

pub fn labels_to_text(labels: &[usize]) -> String {
    labels.iter().map(|y| format!("{y}\n")).collect()
}

pub fn write_labels(path: &Path, labels: &LabelVector) -> Result<()> {
    write_text(path, &labels_to_text(labels.as_slice()))
}

pub fn sets_to_csv(sets: &[PredictionSet]) -> String {
    let mut out = String::new();
    for s in sets {
        let members: Vec<String> = s.members.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{},{},{}", s.index, s.len(), members.join(";"));
    }
    out
}

/// Parses a prediction-set file. Rows must be numbered 0, 1, 2, ... and each
/// member list must be strictly ascending and agree with its size field.
pub fn parse_sets(text: &str, source: &str) -> Result<Vec<PredictionSet>> {
    let mut sets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let loc = || format!("line {}", i + 1);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let (Some(idx), Some(size), Some(members)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::parse(source, loc(), "expected row_index,set_size,members"));
        };
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|e| Error::parse(source, loc(), format!("row index: {e}")))?;
        let size: usize = size
            .trim()
            .parse()
            .map_err(|e| Error::parse(source, loc(), format!("set size: {e}")))?;
        let members = members.trim();
        let members: Vec<usize> = if members.is_empty() {
            Vec::new()
        } else {
            members
                .split(';')
                .map(|m| m.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(source, loc(), format!("member: {e}")))?
        };
        if idx != sets.len() {
            return Err(Error::parse(
                source,
                loc(),
                format!("expected row index {}, found {idx}", sets.len()),
            ));
        }
        if size != members.len() {
            return Err(Error::parse(
                source,
                loc(),
                format!("set size {size} but {} members", members.len()),
            ));
        }
        if members.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::parse(source, loc(), "members must be strictly ascending"));
        }
        sets.push(PredictionSet { index: idx, members });
    }
    Ok(sets)
}

pub fn read_sets(path: &Path) -> Result<Vec<PredictionSet>> {
    parse_sets(&read_text(path)?, &source_name(path))
}

pub fn write_sets(path: &Path, sets: &[PredictionSet]) -> Result<()> {
    write_text(path, &sets_to_csv(sets))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_g17).unwrap_or_default()
}

/// One row per class plus a `summary` row carrying the class-averaged
/// metrics.
pub fn metrics_to_csv(r: &MetricsReport) -> String {
    let mut out = String::from("class,n_test,coverage,mean_size,ucr,apss,ucg\n");
    for c in &r.per_class {
        let _ = writeln!(
            out,
            "{},{},{},{},,,",
            c.class,
            c.n_test,
            opt(c.coverage),
            opt(c.mean_size)
        );
    }
    let _ = writeln!(
        out,
        "summary,{},{},{},{},{},{}",
        r.n_test,
        fmt_g17(r.marginal_coverage),
        fmt_g17(r.mean_size),
        fmt_g17(r.ucr),
        fmt_g17(r.apss),
        fmt_g17(r.ucg)
    );
    out
}

/// Rank-frequency table, one column per labelled histogram.
pub fn rank_freq_to_csv(columns: &[(&str, &RankFrequency)]) -> String {
    let mut out = String::from("k");
    for (name, _) in columns {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    let k = columns.first().map_or(0, |(_, rf)| rf.freq.len());
    for j in 0..k {
        let _ = write!(out, "{}", j + 1);
        for (_, rf) in columns {
            let _ = write!(out, ",{}", fmt_g17(rf.freq[j]));
        }
        out.push('\n');
    }
    out
}

pub fn sigma_to_csv(entries: &[SigmaEntry]) -> String {
    let mut out = String::from("class,sigma,numerator,denominator\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.class,
            opt(e.sigma),
            e.numerator,
            e.denominator
        );
    }
    out
}

pub fn write_text_file(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}
