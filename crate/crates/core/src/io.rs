//! DOTA annotation ingestion, curve sweeps, config files and report output.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::audit::MetricReport;
use crate::baselines::Codec;
use crate::error::{invalid, Error, Result};
use crate::geom::{canonical_order, min_area_rect, OrientedBox, Point2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotaRecord {
    pub quad: [Point2; 4],
    pub category: String,
    pub difficulty: i64,
}

impl DotaRecord {
    /// Minimum-area rectangle around the annotated quad.
    pub fn fit(&self) -> Result<OrientedBox> {
        min_area_rect(&self.quad)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses `x1 y1 x2 y2 x3 y3 x4 y4 category difficulty`.
pub fn parse_dota_line(text: &str, line: usize) -> Result<DotaRecord> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 10 {
        return Err(parse_err(line, format!("expected 10 tokens, found {}", tokens.len())));
    }
    let mut coords = [0.0; 8];
    for (i, tok) in tokens[..8].iter().enumerate() {
        let v: f64 = tok
            .parse()
            .map_err(|_| parse_err(line, format!("coordinate '{tok}' is not a number")))?;
        if !v.is_finite() {
            return Err(parse_err(line, format!("coordinate '{tok}' is not finite")));
        }
        coords[i] = v;
    }
    let difficulty = tokens[9]
        .parse()
        .map_err(|_| parse_err(line, format!("difficulty '{}' is not an integer", tokens[9])))?;
    let quad = canonical_order([0, 1, 2, 3].map(|i| Point2::new(coords[2 * i], coords[2 * i + 1])));
    Ok(DotaRecord {
        quad,
        category: tokens[8].to_string(),
        difficulty,
    })
}

fn is_metadata(line: &str) -> bool {
    let t = line.trim_start();
    t.is_empty() || t.starts_with("imagesource") || t.starts_with("gsd")
}

/// A line the reader could not use.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub line: usize,
    pub reason: String,
}

/// Records keyed by line number, plus the lines that were skipped.
pub type Parsed = (Vec<(usize, DotaRecord)>, Vec<Skipped>);

/// Parses annotation text into `(line number, record)` pairs; malformed lines
/// are skipped and reported.
pub fn parse_dota(text: &str) -> Parsed {
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if is_metadata(line) {
            continue;
        }
        match parse_dota_line(line, i + 1) {
            Ok(r) => records.push((i + 1, r)),
            Err(e) => skipped.push(Skipped {
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    (records, skipped)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_dota(path: &Path) -> Result<Parsed> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(parse_dota(&text))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Fits, encodes and writes one CSV row per usable record. Returns the row count.
pub fn convert_annotations(input: &Path, codec: &dyn Codec, output: &Path) -> Result<usize> {
    let (records, mut skipped) = read_dota(input)?;
    let mut out = String::from("category,difficulty");
    for n in codec.component_names() {
        out.push(',');
        out.push_str(&n);
    }
    out.push('\n');
    let mut rows = 0;
    for (line, r) in &records {
        let encoded = r.fit().and_then(|b| codec.encode_values(&b));
        match encoded {
            Ok(values) => {
                out.push_str(&r.category);
                let _ = write!(out, ",{}", r.difficulty);
                for v in values {
                    out.push(',');
                    out.push_str(&fmt_f64(v));
                }
                out.push('\n');
                rows += 1;
            }
            Err(e) => skipped.push(Skipped {
                line: *line,
                reason: e.to_string(),
            }),
        }
    }
    skipped.sort_by_key(|s| s.line);
    for s in &skipped {
        warn!("{}: skipped line {}: {}", input.display(), s.line, s.reason);
    }
    write_text(output, &out)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Sweep {
    /// Absolute angle over `[0, 2π)` in `samples` equal steps.
    Rotation { samples: usize },
    /// Width scaled by each ratio of a uniform grid, height fixed.
    Aspect { from: f64, to: f64, samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub x: f64,
    pub values: Vec<f64>,
}

pub fn curve_data(codec: &dyn Codec, sweep: Sweep, base: &OrientedBox) -> Result<Vec<CurveRow>> {
    match sweep {
        Sweep::Rotation { samples } => {
            if samples < 2 {
                return Err(invalid("rotation sweep needs at least 2 samples"));
            }
            (0..samples)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / samples as f64;
                    let b = OrientedBox::new(base.cx(), base.cy(), base.w_side(), base.h_side(), t)?;
                    Ok(CurveRow {
                        x: t,
                        values: codec.encode_values(&b)?,
                    })
                })
                .collect()
        }
        Sweep::Aspect { from, to, samples } => {
            if samples < 2 || !(from.is_finite() && to.is_finite()) || from <= 0.0 || to <= from {
                return Err(invalid("aspect sweep needs 0 < from < to and at least 2 samples"));
            }
            (0..samples)
                .map(|i| {
                    let r = from + (to - from) * i as f64 / (samples - 1) as f64;
                    let b = OrientedBox::new(base.cx(), base.cy(), base.w_side() * r, base.h_side(), base.theta())?;
                    Ok(CurveRow {
                        x: r,
                        values: codec.encode_values(&b)?,
                    })
                })
                .collect()
        }
    }
}

pub fn curves_to_csv(codec: &dyn Codec, sweep: Sweep, rows: &[CurveRow]) -> String {
    let mut out = String::from(match sweep {
        Sweep::Rotation { .. } => "theta",
        Sweep::Aspect { .. } => "ratio",
    });
    for n in codec.component_names() {
        out.push(',');
        out.push_str(&n);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&fmt_f64(r.x));
        for v in &r.values {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Writes the sweep as CSV and returns the number of data rows.
pub fn emit_curves(codec: &dyn Codec, sweep: Sweep, base: &OrientedBox, output: &Path) -> Result<usize> {
    let rows = curve_data(codec, sweep, base)?;
    write_text(output, &curves_to_csv(codec, sweep, &rows))?;
    Ok(rows.len())
}

/// Grid positions where a column moves by more than `lipschitz * dx`.
pub fn find_jumps(rows: &[CurveRow], column: usize, lipschitz: f64) -> Vec<(f64, f64)> {
    rows.windows(2)
        .filter_map(|w| {
            let d = w[1].values[column] - w[0].values[column];
            let dx = w[1].x - w[0].x;
            (d.abs() > lipschitz * dx).then_some((0.5 * (w[0].x + w[1].x), d))
        })
        .collect()
}

/// Flat `key = value` text. `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(i + 1, format!("expected key=value, got '{line}'")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(parse_err(i + 1, "empty key"));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

/// A single report serializes as an object, several as an array.
pub fn reports_to_json(reports: &[MetricReport]) -> String {
    let text = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])
    } else {
        serde_json::to_string_pretty(reports)
    };
    let mut text = text.expect("reports contain only finite numbers and strings");
    text.push('\n');
    text
}

pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("codec,seed,metric,delta,gap,verdict\n");
    for r in reports {
        for m in &r.metrics {
            let verdict = match m.verdict {
                crate::audit::Verdict::Pass => "pass",
                crate::audit::Verdict::Fail => "fail",
            };
            for s in &m.steps {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.codec,
                    r.seed,
                    m.name,
                    fmt_f64(s.delta),
                    fmt_f64(s.gap),
                    verdict
                );
            }
        }
    }
    out
}
