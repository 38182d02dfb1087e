//! The JSON run artifact read by the viewer, and the selection document the
//! viewer writes back.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::contour::ContourSet;
use crate::error::{Error, Result};
use crate::model::{EmbeddingTable, PredictionTable, Spd2, StudentParams};

pub const ARTIFACT_VERSION: &str = "darkviz-artifact/1";

/// Number of largest probabilities kept per point; the rest is summed into
/// `other`.
pub const TOP_N: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub id: String,
    pub x: f64,
    pub y: f64,
    /// Teacher argmax.
    pub pred: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    /// `(class, probability)`, largest first.
    pub top: Vec<(usize, f64)>,
    pub other: f64,
    /// Confidence score per fitted model name.
    #[serde(default)]
    pub conf: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub means: Vec<[f64; 2]>,
    pub scales: Vec<Spd2>,
    pub nu: f64,
    /// Prior logits; the prior is their softmax.
    pub prior: Vec<f64>,
}

impl From<&StudentParams> for StudentRecord {
    fn from(p: &StudentParams) -> Self {
        Self {
            means: p.means.clone(),
            scales: p.scales.clone(),
            nu: p.dof,
            prior: p.prior_logits.clone(),
        }
    }
}

impl From<&StudentRecord> for StudentParams {
    fn from(r: &StudentRecord) -> Self {
        Self {
            means: r.means.clone(),
            scales: r.scales.clone(),
            dof: r.nu,
            prior_logits: r.prior.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub version: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; omitted for deterministic runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<u64>,
    pub config: Value,
    pub classes: Vec<String>,
    pub points: Vec<PointRecord>,
    pub student: StudentRecord,
    #[serde(default)]
    pub metrics: Map<String, Value>,
    #[serde(default)]
    pub contours: Vec<ContourSet>,
}

/// Everything [`RunArtifact::build`] needs.
pub struct ArtifactInputs<'a> {
    pub preds: &'a PredictionTable,
    pub emb: &'a EmbeddingTable,
    pub params: &'a StudentParams,
    pub seed: u64,
    pub deterministic: bool,
    pub config: Value,
    /// Defaults to the class indices as strings.
    pub class_names: Option<Vec<String>>,
    /// `(model name, per-row score)`.
    pub confidence: Vec<(String, Vec<f64>)>,
    pub metrics: Map<String, Value>,
    pub contours: Vec<ContourSet>,
}

/// The `n` largest entries as `(class, p)`, ties to the lower class, and the
/// remaining mass.
pub fn top_probabilities(row: &[f64], n: usize) -> (Vec<(usize, f64)>, f64) {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let top: Vec<(usize, f64)> = idx.iter().take(n).map(|&c| (c, row[c])).collect();
    let other = idx.iter().skip(n).map(|&c| row[c]).sum();
    (top, other)
}

impl RunArtifact {
    pub fn build(inp: ArtifactInputs<'_>) -> Result<Self> {
        let n = inp.preds.n_rows();
        let k = inp.preds.n_classes();
        inp.emb.check_aligned(inp.preds)?;
        inp.params.validate()?;
        if inp.params.n_classes() != k {
            return Err(Error::Alignment(format!(
                "student has {} classes, predictions have {k}",
                inp.params.n_classes()
            )));
        }
        let classes = inp
            .class_names
            .unwrap_or_else(|| (0..k).map(|c| c.to_string()).collect());
        if classes.len() != k {
            return Err(Error::Alignment(format!("{} class names for {k} classes", classes.len())));
        }
        for (name, scores) in &inp.confidence {
            if scores.len() != n {
                return Err(Error::Alignment(format!("{name}: {} scores for {n} rows", scores.len())));
            }
        }
        let argmax = inp.preds.argmax();
        let points = (0..n)
            .map(|i| {
                let (top, other) = top_probabilities(inp.preds.row(i), TOP_N);
                let [x, y] = inp.emb.points()[i];
                PointRecord {
                    id: inp.preds.row_ids()[i].clone(),
                    x,
                    y,
                    pred: argmax[i],
                    label: inp.preds.labels().map(|l| l[i]),
                    top,
                    other,
                    conf: inp.confidence.iter().map(|(m, s)| (m.clone(), s[i])).collect(),
                }
            })
            .collect();
        let created = if inp.deterministic {
            None
        } else {
            SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
        };
        let artifact = Self {
            version: ARTIFACT_VERSION.to_string(),
            seed: inp.seed,
            created,
            config: inp.config,
            classes,
            points,
            student: inp.params.into(),
            metrics: inp.metrics,
            contours: inp.contours,
        };
        artifact.validate()?;
        Ok(artifact)
    }

    pub fn embedding(&self) -> Result<EmbeddingTable> {
        EmbeddingTable::new(self.points.iter().map(|p| [p.x, p.y]).collect())
    }

    pub fn student_params(&self) -> StudentParams {
        (&self.student).into()
    }

    /// Checks the structural invariants a consumer relies on.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(format!("artifact: {msg}")));
        if self.version.is_empty() {
            return bad("missing version".into());
        }
        let k = self.classes.len();
        if k < 2 {
            return bad(format!("{k} classes"));
        }
        self.student_params().validate()?;
        if self.student.means.len() != k {
            return bad(format!("student has {} classes, artifact {k}", self.student.means.len()));
        }
        if self.points.is_empty() {
            return bad("no points".into());
        }
        let conf_keys: BTreeSet<&String> = self.points[0].conf.keys().collect();
        let mut ids = BTreeSet::new();
        for p in &self.points {
            if !ids.insert(p.id.as_str()) {
                return bad(format!("duplicate point id {:?}", p.id));
            }
            if !(p.x.is_finite() && p.y.is_finite()) {
                return bad(format!("point {:?} has a non-finite coordinate", p.id));
            }
            if p.pred >= k || p.label.is_some_and(|l| l >= k) {
                return bad(format!("point {:?} names a class outside [0, {k})", p.id));
            }
            if p.top.is_empty() || p.top.len() > TOP_N || p.top.iter().any(|&(c, q)| c >= k || !(0.0..=1.0).contains(&q)) {
                return bad(format!("point {:?} has a malformed top list", p.id));
            }
            let mass: f64 = p.top.iter().map(|t| t.1).sum::<f64>() + p.other;
            if (mass - 1.0).abs() > 1e-9 {
                return bad(format!("point {:?} probabilities sum to {mass}", p.id));
            }
            if p.conf.keys().collect::<BTreeSet<_>>() != conf_keys {
                return bad(format!("point {:?} has a different set of confidence scores", p.id));
            }
            if p.conf.values().any(|s| !s.is_finite()) {
                return bad(format!("point {:?} has a non-finite confidence score", p.id));
            }
        }
        for c in &self.contours {
            if !(c.level > 0.0) {
                return bad(format!("contour level {}", c.level));
            }
        }
        Ok(())
    }

    /// Compact JSON; floats are written with round-trip precision.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let a: Self = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))?;
        a.validate()?;
        Ok(a)
    }
}

/// Ids of a region selection with its predicted-class histogram and the mean
/// of one confidence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub ids: Vec<String>,
    pub histogram: BTreeMap<String, usize>,
    pub mean_conf: Option<f64>,
}

/// Points inside the axis-aligned rectangle `min..=max`, in artifact order.
pub fn select_rect(artifact: &RunArtifact, min: [f64; 2], max: [f64; 2], conf: Option<&str>) -> Selection {
    let picked: Vec<&PointRecord> = artifact
        .points
        .iter()
        .filter(|p| p.x >= min[0] && p.x <= max[0] && p.y >= min[1] && p.y <= max[1])
        .collect();
    let mut histogram = BTreeMap::new();
    for p in &picked {
        *histogram.entry(artifact.classes[p.pred].clone()).or_insert(0) += 1;
    }
    let mean_conf = conf.and_then(|key| {
        let vals: Vec<f64> = picked.iter().filter_map(|p| p.conf.get(key).copied()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    });
    Selection {
        ids: picked.iter().map(|p| p.id.clone()).collect(),
        histogram,
        mean_conf,
    }
}
