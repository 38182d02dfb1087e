//! Visualisation quality: Jensen-Shannon distance, k-nearest-neighbour local
//! fidelity, compression quality and the confusion matrix.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EmbeddingTable, PredictionTable, Student, StudentParams};
use crate::objective::loss;
use crate::special::argmax;

/// Square root of the Jensen-Shannon divergence (natural log).
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / m).ln();
        }
    }
    acc.max(0.0).sqrt()
}

/// Indices of the `k` nearest neighbours of row `i` (self excluded), by
/// Euclidean distance with ties broken by row index.
pub fn nearest_neighbours(points: &[[f64; 2]], i: usize, k: usize) -> Vec<usize> {
    let yi = points[i];
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| ((p[0] - yi[0]).powi(2) + (p[1] - yi[1]).powi(2), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Mean over rows of the average JS distance between a row's student
/// posterior and those of its `k` nearest embedded neighbours.
pub fn local_fidelity(emb: &EmbeddingTable, params: &StudentParams, k: usize) -> Result<f64> {
    let n = emb.len();
    if k == 0 || k >= n {
        return Err(Error::Domain(format!("k must be in [1, {n}), got {k}")));
    }
    let student = Student::new(params)?;
    let posts: Vec<Vec<f64>> = emb.points().par_iter().map(|&y| student.posterior(y)).collect();
    let per_row: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            nearest_neighbours(emb.points(), i, k)
                .iter()
                .map(|&j| jsd(&posts[i], &posts[j]))
                .sum::<f64>()
                / k as f64
        })
        .collect();
    Ok(per_row.iter().sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionQuality {
    pub kl_sym_final: f64,
    pub acc_ground: Option<f64>,
    pub acc_teacher: f64,
}

pub fn compression_quality(
    preds: &PredictionTable,
    emb: &EmbeddingTable,
    params: &StudentParams,
) -> Result<CompressionQuality> {
    let report = loss(preds, emb, params, 1.0)?;
    let student = Student::new(params)?;
    let predicted = student_argmax(&student, emb);
    let n = preds.n_rows() as f64;
    let teacher = preds.argmax();
    let acc_teacher = predicted.iter().zip(&teacher).filter(|(a, b)| a == b).count() as f64 / n;
    let acc_ground = preds
        .labels()
        .map(|l| predicted.iter().zip(l).filter(|(a, b)| a == b).count() as f64 / n);
    Ok(CompressionQuality {
        kl_sym_final: report.total,
        acc_ground,
        acc_teacher,
    })
}

fn student_argmax(student: &Student, emb: &EmbeddingTable) -> Vec<usize> {
    let mut lj = vec![0.0; student.n_classes()];
    emb.points()
        .iter()
        .map(|&y| {
            student.log_joint(y, &mut lj);
            argmax(&lj)
        })
        .collect()
}

/// Student predicted class for every embedded row.
pub fn student_predictions(emb: &EmbeddingTable, params: &StudentParams) -> Result<Vec<usize>> {
    Ok(student_argmax(&Student::new(params)?, emb))
}

/// `counts[predicted][true]`: rows are predicted classes, columns true labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion_matrix(labels: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if labels.len() != predicted.len() {
        return Err(Error::Alignment(format!(
            "{} labels, {} predictions",
            labels.len(),
            predicted.len()
        )));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&l, &p) in labels.iter().zip(predicted) {
        if l >= n_classes || p >= n_classes {
            return Err(Error::Domain(format!(
                "class pair ({p}, {l}) is outside [0, {n_classes})"
            )));
        }
        counts[p][l] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// CSV with a header of class names and one row per predicted class.
    pub fn write_csv(&self, path: &Path, class_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec!["predicted".to_string()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for (name, row) in class_names.iter().zip(&self.counts) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the CSV written by [`ConfusionMatrix::write_csv`]; returns the
    /// matrix and the class names from the header.
    pub fn read_csv(path: &Path) -> Result<(Self, Vec<String>)> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let names: Vec<String> = r
            .headers()
            .map_err(|e| Error::csv(path, e))?
            .iter()
            .skip(1)
            .map(|s| s.trim().to_string())
            .collect();
        let mut counts = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let row = rec
                .iter()
                .skip(1)
                .map(|c| {
                    c.trim().parse::<u64>().map_err(|_| Error::Parse {
                        path: path.display().to_string(),
                        line,
                        message: format!("bad count {c:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != names.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line,
                    message: format!("{} counts for {} classes", row.len(), names.len()),
                });
            }
            counts.push(row);
        }
        Ok((Self { counts }, names))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kl_sym_final: f64,
    pub acc_ground: Option<f64>,
    pub acc_teacher: f64,
    pub local_fidelity: BTreeMap<usize, f64>,
    /// Teacher predictions against true labels, when labels are known.
    pub confusion: Option<ConfusionMatrix>,
}

/// Computes every metric for a trained run.
pub fn metrics_report(
    preds: &PredictionTable,
    emb: &EmbeddingTable,
    params: &StudentParams,
    ks: &[usize],
) -> Result<MetricsReport> {
    let q = compression_quality(preds, emb, params)?;
    let mut local = BTreeMap::new();
    for &k in ks {
        local.insert(k, local_fidelity(emb, params, k)?);
    }
    let confusion = preds
        .labels()
        .map(|l| confusion_matrix(l, &preds.argmax(), preds.n_classes()))
        .transpose()?;
    Ok(MetricsReport {
        kl_sym_final: q.kl_sym_final,
        acc_ground: q.acc_ground,
        acc_teacher: q.acc_teacher,
        local_fidelity: local,
        confusion,
    })
}
