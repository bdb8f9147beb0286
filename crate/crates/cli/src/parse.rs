//! Grid and schedule syntax: comma lists whose items may be `a:step:b` ranges.

use std::path::Path;

/// Range endpoints are reached up to this relative slack, and generated
/// values are rounded to 12 decimals so `0.1:0.1:0.3` gives `0.3`, not
/// `0.30000000000000004`.
const RANGE_SLACK: f64 = 1e-9;

fn round12(v: f64) -> f64 {
    let r = (v * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_nan() {
        return Err("NaN is not allowed".into());
    }
    Ok(v)
}

/// `a:step:b` inclusive of `b`.
fn expand_range(parts: &[&str]) -> Result<Vec<f64>, String> {
    let (a, step, b) = match parts {
        [a, b] => (parse_f64(a)?, 1.0, parse_f64(b)?),
        [a, s, b] => (parse_f64(a)?, parse_f64(s)?, parse_f64(b)?),
        _ => return Err("ranges are written a:b or a:step:b".into()),
    };
    if !(step > 0.0 && step.is_finite() && a.is_finite() && b.is_finite()) {
        return Err(format!("bad range {a}:{step}:{b}"));
    }
    if b < a {
        return Err(format!("range end {b} is below its start {a}"));
    }
    let count = ((b - a) / step * (1.0 + RANGE_SLACK)).floor() as usize + 1;
    if count > 1_000_000 {
        return Err("range has too many points".into());
    }
    Ok((0..count).map(|i| round12(a + i as f64 * step)).collect())
}

pub fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim) {
        if item.is_empty() {
            return Err(format!("empty item in `{s}`"));
        }
        let parts: Vec<&str> = item.split(':').collect();
        if parts.len() == 1 {
            out.push(parse_f64(item)?);
        } else {
            out.extend(expand_range(&parts)?);
        }
    }
    Ok(out)
}

pub fn parse_counts(s: &str) -> Result<Vec<usize>, String> {
    parse_floats(s)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(format!("{v} is not a nonnegative integer"))
            }
        })
        .collect()
}

/// One float per line; blank lines and lines starting with `#` are skipped.
pub fn read_steps_file(path: &Path) -> Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_f64)
        .collect()
}
