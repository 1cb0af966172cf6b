//! Plain-text policy checkpoint:
//!
//! ```text
//! mapo-policy v1 <rows> <cols> <temperature>
//! <row 0: cols space-separated floats>
//! ...
//! ```

use std::io::{BufRead, Write};

use super::FormatError;
use crate::policy::{Matrix, PolicyParams};

const MAGIC: &str = "mapo-policy";
const VERSION: &str = "v1";

pub fn write_policy<W: Write>(policy: &PolicyParams, mut out: W) -> Result<(), FormatError> {
    let w = policy.weights();
    writeln!(
        out,
        "{MAGIC} {VERSION} {} {} {}",
        w.rows(),
        w.cols(),
        policy.temperature()
    )?;
    for r in 0..w.rows() {
        let row: Vec<String> = w.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_policy<R: BufRead>(input: R) -> Result<PolicyParams, FormatError> {
    let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let parse_err = |line: usize, message: String| FormatError::Parse { line, message };

    let (n, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty checkpoint".into()))?;
    let header = header?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != MAGIC || fields[1] != VERSION {
        return Err(parse_err(
            n,
            format!("expected `{MAGIC} {VERSION} <rows> <cols> <temperature>`, got `{header}`"),
        ));
    }
    let rows: usize = fields[2]
        .parse()
        .map_err(|e| parse_err(n, format!("rows: {e}")))?;
    let cols: usize = fields[3]
        .parse()
        .map_err(|e| parse_err(n, format!("cols: {e}")))?;
    let temperature: f64 = fields[4]
        .parse()
        .map_err(|e| parse_err(n, format!("temperature: {e}")))?;

    let mut data = Vec::with_capacity(rows);
    for r in 0..rows {
        let (n, line) = lines.next().ok_or_else(|| {
            parse_err(n + r + 1, format!("expected {rows} weight rows, found {r}"))
        })?;
        let line = line?;
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| parse_err(n, format!("`{t}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != cols {
            return Err(parse_err(
                n,
                format!("expected {cols} values, found {}", row.len()),
            ));
        }
        data.push(row);
    }
    if let Some((n, _)) = lines.next() {
        return Err(parse_err(
            n,
            "trailing data after the last weight row".into(),
        ));
    }
    Ok(PolicyParams::new(Matrix::from_rows(data)?, temperature)?)
}
