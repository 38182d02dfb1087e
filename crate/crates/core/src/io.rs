//! Prediction, embedding and parameter files.
//!
//! Prediction CSV: a header row, an optional `id` column, `p0..p{K-1}`, an
//! optional `label`, and optional logits `l0..l{K-1}`. Prediction JSONL: one
//! object per line, `{"id"?, "probs": [...], "label"?, "logits"?: [...]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EmbeddingTable, PredictionTable, StudentParams};

/// Maximum deviation of a raw row sum from 1 before normalisation.
pub const ROW_SUM_GATE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl` / `.ndjson` are JSON lines; everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

struct RawRows {
    ids: Vec<Option<String>>,
    probs: Vec<Vec<f64>>,
    labels: Vec<Option<usize>>,
    logits: Vec<Option<Vec<f64>>>,
}

pub fn load_predictions(path: &Path, format: Format) -> Result<PredictionTable> {
    let raw = match format {
        Format::Csv => read_csv_rows(path)?,
        Format::Jsonl => read_jsonl_rows(path)?,
    };
    assemble(path, raw)
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn check_row(path: &Path, line: u64, probs: &[f64]) -> Result<()> {
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(parse_err(path, line, format!("invalid probability {p}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_GATE + 1e-12 {
        return Err(parse_err(path, line, format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

fn indexed_columns(headers: &csv::StringRecord, prefix: char) -> Vec<(usize, usize)> {
    headers
        .iter()
        .enumerate()
        .filter_map(|(col, h)| {
            let h = h.trim();
            let rest = h.strip_prefix(prefix)?;
            rest.parse::<usize>().ok().map(|k| (k, col))
        })
        .collect()
}

fn read_csv_rows(path: &Path) -> Result<RawRows> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let mut p_cols = indexed_columns(&headers, 'p');
    let mut l_cols = indexed_columns(&headers, 'l');
    p_cols.sort();
    l_cols.sort();
    if p_cols.len() < 2 || p_cols.iter().enumerate().any(|(i, &(k, _))| i != k) {
        return Err(parse_err(path, 1, "expected probability columns p0..p{K-1}"));
    }
    if !l_cols.is_empty()
        && (l_cols.len() != p_cols.len() || l_cols.iter().enumerate().any(|(i, &(k, _))| i != k))
    {
        return Err(parse_err(path, 1, "logit columns must be l0..l{K-1} matching p columns"));
    }
    let id_col = headers.iter().position(|h| h.trim() == "id");
    let label_col = headers.iter().position(|h| h.trim() == "label");

    let mut raw = RawRows {
        ids: Vec::new(),
        probs: Vec::new(),
        labels: Vec::new(),
        logits: Vec::new(),
    };
    for rec in reader.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(pos) => parse_err(path, pos.line(), e.to_string()),
            None => Error::csv(path, e),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |col: usize| -> Result<f64> {
            let s = rec.get(col).unwrap_or("");
            s.parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("column {} is not a number: {s:?}", col + 1)))
        };
        let probs = p_cols.iter().map(|&(_, c)| num(c)).collect::<Result<Vec<_>>>()?;
        check_row(path, line, &probs)?;
        raw.probs.push(probs);
        raw.ids.push(id_col.and_then(|c| rec.get(c)).map(str::to_string));
        raw.labels.push(match label_col.and_then(|c| rec.get(c)) {
            Some(s) if !s.is_empty() => Some(
                s.parse::<usize>()
                    .map_err(|_| parse_err(path, line, format!("bad label {s:?}")))?,
            ),
            _ => None,
        });
        raw.logits.push(if l_cols.is_empty() {
            None
        } else {
            Some(l_cols.iter().map(|&(_, c)| num(c)).collect::<Result<Vec<_>>>()?)
        });
    }
    Ok(raw)
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<f64>>,
}

fn read_jsonl_rows(path: &Path) -> Result<RawRows> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = RawRows {
        ids: Vec::new(),
        probs: Vec::new(),
        labels: Vec::new(),
        logits: Vec::new(),
    };
    let mut width = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow =
            serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let k = *width.get_or_insert(row.probs.len());
        if row.probs.len() != k || row.logits.as_ref().is_some_and(|l| l.len() != k) {
            return Err(parse_err(path, line_no, format!("expected {k} classes")));
        }
        check_row(path, line_no, &row.probs)?;
        raw.ids.push(row.id);
        raw.probs.push(row.probs);
        raw.labels.push(row.label);
        raw.logits.push(row.logits);
    }
    Ok(raw)
}

fn all_or_none<T: Clone>(path: &Path, what: &str, xs: &[Option<T>]) -> Result<Option<Vec<T>>> {
    let present = xs.iter().filter(|x| x.is_some()).count();
    if present == 0 {
        return Ok(None);
    }
    if present != xs.len() {
        let first_missing = xs.iter().position(Option::is_none).unwrap_or(0);
        return Err(parse_err(
            path,
            first_missing as u64 + 1,
            format!("{what} given for some rows but not all"),
        ));
    }
    Ok(Some(xs.iter().map(|x| x.clone().expect("checked")).collect()))
}

fn assemble(path: &Path, raw: RawRows) -> Result<PredictionTable> {
    if raw.probs.is_empty() {
        return Err(parse_err(path, 1, "no prediction rows"));
    }
    let mut table = PredictionTable::from_rows(&raw.probs)?;
    if let Some(ids) = all_or_none(path, "id", &raw.ids)? {
        table = table.with_row_ids(ids)?;
    }
    if let Some(labels) = all_or_none(path, "label", &raw.labels)? {
        table = table.with_labels(labels)?;
    }
    if let Some(logits) = all_or_none(path, "logits", &raw.logits)? {
        table = table.with_logits(&logits)?;
    }
    Ok(table)
}

pub fn write_predictions(table: &PredictionTable, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_predictions_csv(table, path),
        Format::Jsonl => write_predictions_jsonl(table, path),
    }
}

fn write_predictions_csv(table: &PredictionTable, path: &Path) -> Result<()> {
    let k = table.n_classes();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..k).map(|c| format!("p{c}")));
    if table.labels().is_some() {
        header.push("label".into());
    }
    if table.has_logits() {
        header.extend((0..k).map(|c| format!("l{c}")));
    }
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for i in 0..table.n_rows() {
        let mut rec = vec![table.row_ids()[i].clone()];
        rec.extend(table.row(i).iter().map(|p| p.to_string()));
        if let Some(l) = table.labels() {
            rec.push(l[i].to_string());
        }
        if let Some(l) = table.logit_row(i) {
            rec.extend(l.iter().map(|x| x.to_string()));
        }
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_predictions_jsonl(table: &PredictionTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..table.n_rows() {
        let row = JsonRow {
            id: Some(table.row_ids()[i].clone()),
            probs: table.row(i).to_vec(),
            label: table.labels().map(|l| l[i]),
            logits: table.logit_row(i).map(<[f64]>::to_vec),
        };
        serde_json::to_writer(&mut w, &row).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRow {
    id: String,
    x: f64,
    y: f64,
}

pub fn write_embedding(emb: &EmbeddingTable, ids: &[String], path: &Path) -> Result<()> {
    if ids.len() != emb.len() {
        return Err(Error::Alignment(format!("{} ids for {} points", ids.len(), emb.len())));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for (id, p) in ids.iter().zip(emb.points()) {
        w.serialize(EmbeddingRow {
            id: id.clone(),
            x: p[0],
            y: p[1],
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `id,x,y` rows; returns the table and the ids.
pub fn read_embedding(path: &Path) -> Result<(EmbeddingTable, Vec<String>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut ids = Vec::new();
    let mut pts = Vec::new();
    for rec in r.deserialize() {
        let row: EmbeddingRow = rec.map_err(|e| Error::csv(path, e))?;
        ids.push(row.id);
        pts.push([row.x, row.y]);
    }
    Ok((EmbeddingTable::new(pts)?, ids))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))
}

pub fn read_student(path: &Path) -> Result<StudentParams> {
    let p: StudentParams = read_json(path)?;
    p.validate()?;
    Ok(p)
}
