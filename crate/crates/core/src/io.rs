//! File formats and read-count ingestion.
//!
//! Vectors and matrices are plain comma-separated text with `#` comments.
//! Matrix files start with a `rows,cols` line. Floats are written with 17
//! significant digits so that every value survives a write/parse round trip.
//!
//! Result and posterior files are `key = value` lines followed by named
//! blocks:
//!
//! ```text
//! # strainsolve result
//! method = global
//! m = 3
//! n = 2
//! p = 2
//! objective = 1.0000000000000000e-2
//! certified = true
//! gap = 0.0000000000000000e0
//! [weights]
//! 5.9999999999999998e-1,4.0000000000000002e-1
//! [end]
//! [matrix]
//! 3,2
//! 0,1
//! 1,0
//! 1,1
//! [end]
//! ```
//!
//! `gap = none` marks a solver without a bound. The same data can be written
//! as JSON instead ([`OutputFormat::Json`]); the parsers accept either.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::MapBackend;
use crate::bcd::{BcdConfig, MoiEstimate};
use crate::error::{Error, Result};
use crate::eval::{BackendKind, BenchmarkResult, BenchmarkRow, DimsCell, ErrorCell};
use crate::global::GlobalConfig;
use crate::model::{FrequencyVector, Measurement, NoiseModel, ProblemDims, Reconstruction, StrainMatrix};
use crate::posterior::{EntropyCell, PosteriorStats};

fn fmt_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Format { line, msg: msg.into() }
}

/// Formats a float with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| fmt_err(line, format!("not a number: {:?}", s.trim())))
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| fmt_err(line, format!("not a nonnegative integer: {:?}", s.trim())))
}

fn parse_u64(s: &str, line: usize) -> Result<u64> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| fmt_err(line, format!("not a nonnegative integer: {:?}", s.trim())))
}

fn parse_bool(s: &str, line: usize) -> Result<bool> {
    match s.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(fmt_err(line, format!("expected true or false, got {other:?}"))),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Comment line with the current Unix time, for output headers.
pub fn timestamp_line() -> String {
    format!("# created unix={}", now_secs())
}

// ---------------------------------------------------------------- vectors

/// One value per line.
pub fn write_vector(values: &[f64]) -> String {
    let mut out = String::new();
    for v in values {
        out.push_str(&format_f64(*v));
        out.push('\n');
    }
    out
}

fn parse_vector_lines(lines: &[(usize, &str)]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &(no, line) in lines {
        for field in line.split(',') {
            out.push(parse_f64(field, no)?);
        }
    }
    Ok(out)
}

/// Values separated by commas and/or newlines.
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    parse_vector_lines(&data_lines(text))
}

pub fn read_vector_file(path: &Path) -> Result<Vec<f64>> {
    parse_vector(&read_text(path)?)
}

// --------------------------------------------------------------- matrices

/// Row-major values with a `rows,cols` header.
pub fn write_matrix(rows: usize, cols: usize, values: &[f64]) -> String {
    let mut out = format!("{rows},{cols}\n");
    for row in values.chunks(cols.max(1)) {
        out.push_str(&row.iter().map(|v| format_f64(*v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn parse_matrix_lines(lines: &[(usize, &str)], end_line: usize) -> Result<(usize, usize, Vec<f64>)> {
    let (&(hno, header), body) = lines
        .split_first()
        .ok_or_else(|| fmt_err(end_line, "missing rows,cols header"))?;
    let dims: Vec<&str> = header.split(',').collect();
    if dims.len() != 2 {
        return Err(fmt_err(hno, "header must be rows,cols"));
    }
    let rows = parse_usize(dims[0], hno)?;
    let cols = parse_usize(dims[1], hno)?;
    if body.len() != rows {
        return Err(fmt_err(
            body.last().map_or(hno, |l| l.0),
            format!("expected {rows} rows, found {}", body.len()),
        ));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for &(no, line) in body {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(fmt_err(no, format!("expected {cols} columns, found {}", fields.len())));
        }
        for f in fields {
            values.push(parse_f64(f, no)?);
        }
    }
    Ok((rows, cols, values))
}

pub fn parse_matrix(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    parse_matrix_lines(&data_lines(text), text.lines().count())
}

/// A strain matrix with 0/1 entries.
pub fn write_strain_matrix(matrix: &StrainMatrix) -> String {
    let dims = matrix.dims();
    let mut out = format!("{},{}\n", dims.q(), dims.n());
    for i in 0..dims.q() {
        out.push_str(&matrix.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn strain_matrix_from(rows: usize, cols: usize, values: &[f64], p: usize, line: usize) -> Result<StrainMatrix> {
    if p < 2 || rows % (p - 1) != 0 {
        return Err(fmt_err(line, format!("{rows} rows do not split into blocks of {}", p.saturating_sub(1))));
    }
    let entries = values
        .iter()
        .map(|&v| match v {
            v if v == 0.0 => Ok(0u8),
            v if v == 1.0 => Ok(1u8),
            _ => Err(fmt_err(line, format!("strain matrix entry {v} is not 0 or 1"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    let dims = ProblemDims::new(rows / (p - 1), cols, p)?;
    StrainMatrix::from_entries(dims, entries).map_err(|e| fmt_err(line, e.to_string()))
}

pub fn parse_strain_matrix(text: &str, p: usize) -> Result<StrainMatrix> {
    let (rows, cols, values) = parse_matrix(text)?;
    let line = data_lines(text).first().map_or(1, |l| l.0);
    strain_matrix_from(rows, cols, &values, p, line)
}

// ------------------------------------------------------------ read counts

/// Read counts at one site: reference class first, then one count per alternate class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteRecord {
    pub site_id: String,
    pub ref_count: u64,
    pub alt_counts: Vec<u64>,
}

impl SiteRecord {
    pub fn depth(&self) -> u64 {
        self.ref_count + self.alt_counts.iter().sum::<u64>()
    }
}

/// Parses a counts table: a `site<TAB>ref<TAB>alt1[<TAB>alt2 ...]` header,
/// then one record per line. `#` lines are comments.
pub fn parse_counts(text: &str) -> Result<Vec<SiteRecord>> {
    let mut lines = data_lines(text).into_iter();
    let Some((hno, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "site" || cols[1] != "ref" {
        return Err(fmt_err(hno, "header must be site, ref, alt1 [, alt2 ...] separated by tabs"));
    }
    let alts = cols.len() - 2;
    let mut out = Vec::new();
    for (no, line) in lines {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(fmt_err(
                no,
                format!("expected {} tab-separated fields, found {}", cols.len(), fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(fmt_err(no, "empty site id"));
        }
        out.push(SiteRecord {
            site_id: fields[0].to_string(),
            ref_count: parse_u64(fields[1], no)?,
            alt_counts: fields[2..2 + alts].iter().map(|f| parse_u64(f, no)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

pub fn parse_counts_file(path: &Path) -> Result<Vec<SiteRecord>> {
    parse_counts(&read_text(path)?)
}

/// A site left out of an ingested measurement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DroppedSite {
    pub index: usize,
    pub site_id: String,
    pub depth: u64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    /// Carries `n = 1`; set the strain count with [`Measurement::with_n`].
    pub measurement: Measurement,
    /// Input positions of the kept sites, in input order.
    pub kept: Vec<usize>,
    pub dropped: Vec<DroppedSite>,
}

/// Alternate-class frequencies `alt_c / depth` for every site with depth at least `min_depth`.
///
/// Zero-depth sites are always dropped, whatever `min_depth` is.
pub fn ingest_read_counts(records: &[SiteRecord], min_depth: u64) -> Result<Ingested> {
    let Some(first) = records.first() else {
        return Err(Error::InvalidArgument("no sites to ingest".into()));
    };
    let alts = first.alt_counts.len();
    if alts == 0 {
        return Err(fmt_err(1, format!("site {} has no alternate counts", first.site_id)));
    }
    let mut data = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (index, r) in records.iter().enumerate() {
        if r.alt_counts.len() != alts {
            return Err(fmt_err(
                index + 1,
                format!("site {} has {} alternate counts, expected {alts}", r.site_id, r.alt_counts.len()),
            ));
        }
        let depth = r.depth();
        let reason = if depth == 0 {
            Some("zero depth".to_string())
        } else if depth < min_depth {
            Some(format!("depth {depth} below {min_depth}"))
        } else {
            None
        };
        match reason {
            Some(reason) => dropped.push(DroppedSite {
                index,
                site_id: r.site_id.clone(),
                depth,
                reason,
            }),
            None => {
                kept.push(index);
                data.extend(r.alt_counts.iter().map(|&a| a as f64 / depth as f64));
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::InvalidArgument("every site was dropped".into()));
    }
    let dims = ProblemDims::new(kept.len(), 1, alts + 1)?;
    Ok(Ingested {
        measurement: Measurement::new(dims, data)?,
        kept,
        dropped,
    })
}

// ------------------------------------------------------- key-value files

/// Output flavour for result-like files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

struct Sections<'a> {
    keys: BTreeMap<String, (usize, &'a str)>,
    blocks: BTreeMap<String, (usize, Vec<(usize, &'a str)>)>,
    last_line: usize,
}

impl<'a> Sections<'a> {
    fn parse(text: &'a str) -> Result<Self> {
        let mut keys = BTreeMap::new();
        let mut blocks = BTreeMap::new();
        let mut open: Option<(String, usize, Vec<(usize, &'a str)>)> = None;
        for (no, line) in data_lines(text) {
            if let Some((name, start, mut body)) = open.take() {
                if line == "[end]" {
                    blocks.insert(name, (start, body));
                } else {
                    body.push((no, line));
                    open = Some((name, start, body));
                }
            } else if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if blocks.contains_key(name) {
                    return Err(fmt_err(no, format!("duplicate block [{name}]")));
                }
                open = Some((name.to_string(), no, Vec::new()));
            } else if let Some((k, v)) = line.split_once('=') {
                if keys.insert(k.trim().to_string(), (no, v.trim())).is_some() {
                    return Err(fmt_err(no, format!("duplicate key {}", k.trim())));
                }
            } else {
                return Err(fmt_err(no, format!("expected key = value or [block], got {line:?}")));
            }
        }
        if let Some((name, start, _)) = open {
            return Err(fmt_err(start, format!("block [{name}] is not closed by [end]")));
        }
        Ok(Self {
            keys,
            blocks,
            last_line: text.lines().count(),
        })
    }

    fn key(&self, k: &str) -> Result<(usize, &'a str)> {
        self.keys
            .get(k)
            .copied()
            .ok_or_else(|| fmt_err(self.last_line, format!("missing key {k}")))
    }

    fn block(&self, name: &str) -> Result<(usize, &[(usize, &'a str)])> {
        self.blocks
            .get(name)
            .map(|(s, b)| (*s, b.as_slice()))
            .ok_or_else(|| fmt_err(self.last_line, format!("missing block [{name}]")))
    }

    fn usize_key(&self, k: &str) -> Result<usize> {
        let (no, v) = self.key(k)?;
        parse_usize(v, no)
    }

    fn f64_key(&self, k: &str) -> Result<f64> {
        let (no, v) = self.key(k)?;
        parse_f64(v, no)
    }

    fn dims(&self) -> Result<ProblemDims> {
        let (no, _) = self.key("m")?;
        ProblemDims::new(self.usize_key("m")?, self.usize_key("n")?, self.usize_key("p")?)
            .map_err(|e| fmt_err(no, e.to_string()))
    }

    fn vector(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        let (start, body) = self.block(name)?;
        let v = parse_vector_lines(body)?;
        if v.len() != len {
            return Err(fmt_err(start, format!("[{name}] has {} values, expected {len}", v.len())));
        }
        Ok(v)
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let (start, body) = self.block(name)?;
        let (r, c, v) = parse_matrix_lines(body, start)?;
        if (r, c) != (rows, cols) {
            return Err(fmt_err(start, format!("[{name}] is {r}x{c}, expected {rows}x{cols}")));
        }
        Ok(v)
    }
}

fn push_key(out: &mut String, k: &str, v: impl std::fmt::Display) {
    let _ = writeln!(out, "{k} = {v}");
}

fn push_block(out: &mut String, name: &str, body: &str) {
    let _ = writeln!(out, "[{name}]");
    out.push_str(body);
    out.push_str("[end]\n");
}

fn is_json(text: &str) -> bool {
    text.trim_start().starts_with('{')
}

fn json_err(e: serde_json::Error) -> Error {
    fmt_err(e.line(), e.to_string())
}

// ----------------------------------------------------------- MAP results

/// A MAP estimate with the name of the solver that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultFile {
    pub method: String,
    pub reconstruction: Reconstruction,
    /// Unix seconds, when a timestamp was written.
    pub created: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct ResultJson {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    created: Option<u64>,
    method: String,
    m: usize,
    n: usize,
    p: usize,
    objective: f64,
    certified: bool,
    gap: Option<f64>,
    weights: Vec<f64>,
    /// One row per measurement entry.
    matrix: Vec<Vec<u8>>,
}

/// Seconds since the Unix epoch.
pub fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn write_result(result: &ResultFile, format: OutputFormat) -> String {
    let rec = &result.reconstruction;
    let dims = rec.matrix.dims();
    match format {
        OutputFormat::Json => {
            let j = ResultJson {
                created: result.created,
                method: result.method.clone(),
                m: dims.m(),
                n: dims.n(),
                p: dims.p(),
                objective: rec.objective,
                certified: rec.certified,
                gap: rec.gap,
                weights: rec.weights.values().to_vec(),
                matrix: (0..dims.q()).map(|i| rec.matrix.row(i).to_vec()).collect(),
            };
            serde_json::to_string_pretty(&j).expect("result serializes") + "\n"
        }
        OutputFormat::Text => {
            let mut out = String::from("# strainsolve result\n");
            if let Some(t) = result.created {
                let _ = writeln!(out, "# created unix={t}");
            }
            push_key(&mut out, "method", &result.method);
            push_key(&mut out, "m", dims.m());
            push_key(&mut out, "n", dims.n());
            push_key(&mut out, "p", dims.p());
            push_key(&mut out, "objective", format_f64(rec.objective));
            push_key(&mut out, "certified", rec.certified);
            push_key(&mut out, "gap", rec.gap.map_or("none".to_string(), format_f64));
            push_block(
                &mut out,
                "weights",
                &(rec.weights.values().iter().map(|v| format_f64(*v)).collect::<Vec<_>>().join(",") + "\n"),
            );
            push_block(&mut out, "matrix", &write_strain_matrix(&rec.matrix));
            out
        }
    }
}

fn created_from_comment(text: &str) -> Option<u64> {
    text.lines()
        .filter_map(|l| l.trim().strip_prefix("# created unix="))
        .find_map(|v| v.trim().parse().ok())
}

pub fn parse_result(text: &str) -> Result<ResultFile> {
    let (method, dims, objective, certified, gap, weights, entries, created, line) = if is_json(text) {
        let j: ResultJson = serde_json::from_str(text).map_err(json_err)?;
        let dims = ProblemDims::new(j.m, j.n, j.p)?;
        if j.matrix.len() != dims.q() || j.matrix.iter().any(|r| r.len() != dims.n()) {
            return Err(fmt_err(1, "matrix shape does not match m, n, p"));
        }
        let entries: Vec<u8> = j.matrix.concat();
        (j.method, dims, j.objective, j.certified, j.gap, j.weights, entries, j.created, 1)
    } else {
        let s = Sections::parse(text)?;
        let (mno, method) = s.key("method")?;
        let dims = s.dims()?;
        let objective = s.f64_key("objective")?;
        let (gno, gap) = s.key("gap")?;
        let gap = if gap == "none" { None } else { Some(parse_f64(gap, gno)?) };
        let (cno, certified) = s.key("certified")?;
        let weights = s.vector("weights", dims.n())?;
        let entries = s
            .matrix("matrix", dims.q(), dims.n())?
            .into_iter()
            .map(|v| if v == 0.0 { Ok(0) } else if v == 1.0 { Ok(1) } else { Err(()) })
            .collect::<std::result::Result<Vec<u8>, ()>>()
            .map_err(|_| fmt_err(s.block("matrix").map_or(1, |b| b.0), "matrix entries must be 0 or 1"))?;
        let certified = parse_bool(certified, cno)?;
        (method.to_string(), dims, objective, certified, gap, weights, entries, created_from_comment(text), mno)
    };
    let matrix = StrainMatrix::from_entries(dims, entries).map_err(|e| fmt_err(line, e.to_string()))?;
    let weights = FrequencyVector::new(weights).map_err(|e| fmt_err(line, e.to_string()))?;
    Ok(ResultFile {
        method,
        reconstruction: Reconstruction {
            matrix,
            weights,
            objective,
            certified,
            gap,
        },
        created,
    })
}

// ------------------------------------------------------ posterior output

pub fn write_posterior(stats: &PosteriorStats, format: OutputFormat, created: Option<u64>) -> String {
    match format {
        OutputFormat::Json => {
            let mut v = serde_json::to_value(stats).expect("posterior serializes");
            if let (Some(t), Some(obj)) = (created, v.as_object_mut()) {
                obj.insert("created".into(), t.into());
            }
            serde_json::to_string_pretty(&v).expect("posterior serializes") + "\n"
        }
        OutputFormat::Text => {
            let (q, n) = (stats.dims.q(), stats.dims.n());
            let mut out = String::from("# strainsolve posterior\n");
            if let Some(t) = created {
                let _ = writeln!(out, "# created unix={t}");
            }
            push_key(&mut out, "m", stats.dims.m());
            push_key(&mut out, "n", n);
            push_key(&mut out, "p", stats.dims.p());
            push_key(&mut out, "node_count", stats.node_count);
            push_key(&mut out, "rng_seed", stats.rng_seed);
            push_block(&mut out, "m_mean", &write_matrix(q, n, &stats.m_mean));
            push_block(&mut out, "m_std", &write_matrix(q, n, &stats.m_std));
            push_block(&mut out, "w_mean", &write_vector(&stats.w_mean));
            push_block(&mut out, "w_std", &write_vector(&stats.w_std));
            out
        }
    }
}

pub fn parse_posterior(text: &str) -> Result<PosteriorStats> {
    if is_json(text) {
        return serde_json::from_str(text).map_err(json_err);
    }
    let s = Sections::parse(text)?;
    let dims = s.dims()?;
    let (q, n) = (dims.q(), dims.n());
    let (sno, seed) = s.key("rng_seed")?;
    Ok(PosteriorStats {
        dims,
        m_mean: s.matrix("m_mean", q, n)?,
        m_std: s.matrix("m_std", q, n)?,
        w_mean: s.vector("w_mean", n)?,
        w_std: s.vector("w_std", n)?,
        node_count: s.usize_key("node_count")?,
        rng_seed: parse_u64(seed, sno)?,
    })
}

// ---------------------------------------------------------- MOI output

pub fn write_moi(est: &MoiEstimate) -> String {
    let mut out = String::from("# strainsolve moi\n");
    push_key(&mut out, "n", est.n);
    push_key(&mut out, "reached", est.reached);
    push_block(&mut out, "discrepancies", &write_vector(&est.discrepancies));
    out
}

/// Returns `(n, reached, discrepancies)`.
pub fn parse_moi(text: &str) -> Result<(usize, bool, Vec<f64>)> {
    let s = Sections::parse(text)?;
    let (rno, reached) = s.key("reached")?;
    let (_, body) = s.block("discrepancies")?;
    Ok((s.usize_key("n")?, parse_bool(reached, rno)?, parse_vector_lines(body)?))
}

// ----------------------------------------------------------------- tables

fn check_header(lines: &[(usize, &str)], expected: &str) -> Result<()> {
    match lines.first() {
        Some(&(_, h)) if h == expected => Ok(()),
        Some(&(no, h)) => Err(fmt_err(no, format!("expected header {expected:?}, got {h:?}"))),
        None => Err(fmt_err(1, format!("missing header {expected:?}"))),
    }
}

fn row_fields<'a>(no: usize, line: &'a str, count: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != count {
        return Err(fmt_err(no, format!("expected {count} fields, found {}", f.len())));
    }
    Ok(f)
}

const ENTROPY_HEADER: &str = "w1,w2,w3,entropy";

pub fn write_entropy_table(cells: &[EntropyCell]) -> String {
    let mut out = format!("{ENTROPY_HEADER}\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_f64(c.w[0]),
            format_f64(c.w[1]),
            format_f64(c.w[2]),
            format_f64(c.entropy)
        );
    }
    out
}

pub fn parse_entropy_table(text: &str) -> Result<Vec<EntropyCell>> {
    let lines = data_lines(text);
    check_header(&lines, ENTROPY_HEADER)?;
    lines[1..]
        .iter()
        .map(|&(no, line)| {
            let f = row_fields(no, line, 4)?;
            Ok(EntropyCell {
                w: [parse_f64(f[0], no)?, parse_f64(f[1], no)?, parse_f64(f[2], no)?],
                entropy: parse_f64(f[3], no)?,
            })
        })
        .collect()
}

const ERROR_MAP_HEADER: &str = "gamma,w1,w2,w3,error";

pub fn write_error_map(cells: &[ErrorCell]) -> String {
    let mut out = format!("{ERROR_MAP_HEADER}\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            format_f64(c.gamma),
            format_f64(c.w[0]),
            format_f64(c.w[1]),
            format_f64(c.w[2]),
            format_f64(c.error)
        );
    }
    out
}

pub fn parse_error_map(text: &str) -> Result<Vec<ErrorCell>> {
    let lines = data_lines(text);
    check_header(&lines, ERROR_MAP_HEADER)?;
    lines[1..]
        .iter()
        .map(|&(no, line)| {
            let f = row_fields(no, line, 5)?;
            Ok(ErrorCell {
                gamma: parse_f64(f[0], no)?,
                w: [parse_f64(f[1], no)?, parse_f64(f[2], no)?, parse_f64(f[3], no)?],
                error: parse_f64(f[4], no)?,
            })
        })
        .collect()
}

const BENCH_HEADER: &str = "m,n,p,gamma,sample,backend,error,objective,certified,failure";
const SUMMARY_HEADER: &str = "m,n,p,gamma,backend,count,failures,mean,median,q10,q90,baseline";
const TIMING_HEADER: &str = "m,n,p,gamma,sample,backend,wall_time";

fn opt_f64(v: Option<f64>) -> String {
    v.map_or(String::new(), format_f64)
}

/// Per-solve rows. Wall-clock times go to [`write_benchmark_timings`] so that
/// this table is reproducible byte for byte.
pub fn write_benchmark_rows(result: &BenchmarkResult) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in &result.rows {
        let failure = r.failure.as_deref().unwrap_or("").replace([',', '\n', '\r'], ";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.cell.m,
            r.cell.n,
            r.cell.p,
            format_f64(r.gamma),
            r.sample,
            r.backend.name(),
            opt_f64(r.error),
            opt_f64(r.objective),
            r.certified,
            failure
        );
    }
    out
}

fn parse_backend(s: &str, no: usize) -> Result<BackendKind> {
    match s {
        "bcd" => Ok(BackendKind::Bcd),
        "global" => Ok(BackendKind::Global),
        "hybrid" => Ok(BackendKind::Hybrid),
        other => Err(fmt_err(no, format!("unknown backend {other:?}"))),
    }
}

/// Parses [`write_benchmark_rows`] output; wall times come back as zero.
pub fn parse_benchmark_rows(text: &str) -> Result<Vec<BenchmarkRow>> {
    let lines = data_lines(text);
    check_header(&lines, BENCH_HEADER)?;
    let opt = |s: &str, no| if s.is_empty() { Ok(None) } else { parse_f64(s, no).map(Some) };
    lines[1..]
        .iter()
        .map(|&(no, line)| {
            let f = row_fields(no, line, 10)?;
            Ok(BenchmarkRow {
                cell: DimsCell {
                    m: parse_usize(f[0], no)?,
                    n: parse_usize(f[1], no)?,
                    p: parse_usize(f[2], no)?,
                },
                gamma: parse_f64(f[3], no)?,
                sample: parse_usize(f[4], no)?,
                backend: parse_backend(f[5], no)?,
                error: opt(f[6], no)?,
                objective: opt(f[7], no)?,
                certified: parse_bool(f[8], no)?,
                failure: (!f[9].is_empty()).then(|| f[9].to_string()),
                wall_time: 0.0,
            })
        })
        .collect()
}

pub fn write_benchmark_summary(result: &BenchmarkResult) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for s in &result.summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.cell.m,
            s.cell.n,
            s.cell.p,
            format_f64(s.gamma),
            s.backend.name(),
            s.sorted_errors.len(),
            s.failures,
            format_f64(s.mean),
            format_f64(s.median),
            format_f64(s.q10),
            format_f64(s.q90),
            format_f64(s.baseline)
        );
    }
    out
}

pub fn write_benchmark_timings(result: &BenchmarkResult) -> String {
    let mut out = format!("{TIMING_HEADER}\n");
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.cell.m,
            r.cell.n,
            r.cell.p,
            format_f64(r.gamma),
            r.sample,
            r.backend.name(),
            format_f64(r.wall_time)
        );
    }
    out
}

// ------------------------------------------------------------ run config

/// Everything needed to run one solver on one measurement file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub p: usize,
    /// One value for uniform noise, otherwise one per measurement entry.
    pub gamma: Vec<f64>,
    pub method: BackendKind,
    #[serde(default)]
    pub bcd: BcdConfig,
    #[serde(default = "default_mip_gap")]
    pub mip_gap: f64,
    #[serde(default = "default_nodes")]
    pub posterior_nodes: usize,
    #[serde(default)]
    pub rng_seed: u64,
    pub input: PathBuf,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_mip_gap() -> f64 {
    GlobalConfig::default().mip_gap
}

fn default_nodes() -> usize {
    10_000
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_empty() || self.gamma.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidArgument("noise levels must be positive and finite".into()));
        }
        if !(self.mip_gap >= 0.0) {
            return Err(Error::InvalidArgument("mip_gap must be nonnegative".into()));
        }
        if self.posterior_nodes == 0 {
            return Err(Error::InvalidArgument("posterior node count must be positive".into()));
        }
        if !self.input.is_file() {
            return Err(Error::InvalidArgument(format!("input file {} not found", self.input.display())));
        }
        self.bcd.validate()
    }

    /// Reads the input vector and derives `m` from its length.
    pub fn load(&self) -> Result<(Measurement, NoiseModel, ProblemDims)> {
        self.validate()?;
        let data = read_vector_file(&self.input)?;
        let block = self.p.saturating_sub(1).max(1);
        if data.is_empty() || data.len() % block != 0 {
            return Err(fmt_err(
                1,
                format!("{} values do not split into sites of {block} entries", data.len()),
            ));
        }
        let dims = ProblemDims::new(data.len() / block, self.n, self.p)?;
        let noise = match self.gamma.as_slice() {
            [g] => NoiseModel::uniform(dims.q(), *g)?,
            many => NoiseModel::new(many.to_vec())?,
        };
        if noise.len() != dims.q() {
            return Err(Error::Shape(format!("{} noise levels for {} entries", noise.len(), dims.q())));
        }
        Ok((Measurement::new(dims, data)?, noise, dims))
    }

    pub fn backend(&self) -> MapBackend {
        let global = GlobalConfig {
            mip_gap: self.mip_gap,
            ..GlobalConfig::default()
        };
        let bcd = BcdConfig {
            rng_seed: self.rng_seed,
            ..self.bcd
        };
        match self.method {
            BackendKind::Bcd => MapBackend::Bcd(bcd),
            BackendKind::Global => MapBackend::Global(global),
            BackendKind::Hybrid => MapBackend::Hybrid { bcd, global },
        }
    }
}

/// Parses a TOML run configuration.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| toml_err(text, e))
}

pub(crate) fn toml_err(text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    fmt_err(line, e.message().to_string())
}
