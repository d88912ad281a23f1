//! Minimal delimiter-separated text reading and writing: quoted fields with
//! doubled inner quotes, full-precision floats that re-parse to the same bits.

use crate::error::{CliError, CliResult};

/// Split one line on `delim`, honoring double-quoted fields.
pub fn split_line(line: &str, delim: char) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        if quoted {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    cur.push('"');
                    chars.next();
                } else {
                    quoted = false;
                }
            } else {
                cur.push(c);
            }
        } else if c == '"' && cur.is_empty() {
            quoted = true;
        } else if c == delim {
            fields.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    fields.push(cur);
    fields
}

/// Quote a field when it contains the delimiter, a quote, or a newline.
pub fn escape_field(field: &str, delim: char) -> String {
    if field.contains(delim) || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Join fields into one CSV line.
pub fn join_line(fields: &[String], delim: char) -> String {
    fields
        .iter()
        .map(|f| escape_field(f, delim))
        .collect::<Vec<_>>()
        .join(&delim.to_string())
}

/// 17 significant digits: enough to reproduce any f64 exactly on re-parse.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_f64(s: &str, what: &str) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::Config(format!("cannot parse {what} value {s:?} as a number")))
}

pub fn parse_usize(s: &str, what: &str) -> CliResult<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| CliError::Config(format!("cannot parse {what} value {s:?} as an integer")))
}

pub fn parse_u64(s: &str, what: &str) -> CliResult<u64> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| CliError::Config(format!("cannot parse {what} value {s:?} as an integer")))
}

pub fn parse_bool(s: &str, what: &str) -> CliResult<bool> {
    match s.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(CliError::Config(format!("cannot parse {what} value {other:?} as a bool"))),
    }
}

/// Pick the delimiter (comma, tab, or semicolon) that splits the header into
/// the most fields; ties prefer the comma.
pub fn detect_delimiter(header: &str) -> char {
    let mut best = (',', split_line(header, ',').len());
    for cand in ['\t', ';'] {
        let n = split_line(header, cand).len();
        if n > best.1 {
            best = (cand, n);
        }
    }
    best.0
}
