//! Domain tables, the Student's-t naive Bayes student, and teacher-side
//! transforms (temperature, class subsets, entropy).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{argmax, ln_gamma, log_softmax_in_place, log_sum_exp, softmax};

/// Lower bound applied to teacher probabilities on ingestion.
pub const PROB_FLOOR: f64 = 1e-8;

/// Degrees of freedom of the class-conditional t distributions.
pub const DEFAULT_DOF: f64 = 2.0;

/// Teacher prediction vectors, one row per input, row-major `n_rows × n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    n_classes: usize,
    probs: Vec<f64>,
    labels: Option<Vec<usize>>,
    logits: Option<Vec<f64>>,
    row_ids: Vec<String>,
}

impl PredictionTable {
    /// Builds a table from probability rows. Every row is clamped to
    /// [`PROB_FLOOR`] and renormalised; row ids default to the row index.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_classes = rows.first().map(Vec::len).unwrap_or(0);
        if n_classes < 2 {
            return Err(Error::Domain(format!(
                "a prediction table needs at least 2 classes, got {n_classes}"
            )));
        }
        let mut probs = Vec::with_capacity(rows.len() * n_classes);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_classes {
                return Err(Error::Alignment(format!(
                    "row {i} has {} entries, expected {n_classes}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Domain(format!(
                    "row {i} contains a negative or non-finite probability"
                )));
            }
            probs.extend(clamp_row(row));
        }
        let row_ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Ok(Self {
            n_classes,
            probs,
            labels: None,
            logits: None,
            row_ids,
        })
    }

    /// Builds a table from teacher logits; probabilities are their softmax.
    pub fn from_logits(rows: &[Vec<f64>]) -> Result<Self> {
        let probs: Vec<Vec<f64>> = rows.iter().map(|r| softmax(r)).collect();
        let table = Self::from_rows(&probs)?;
        table.with_logits(rows)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n_rows() {
            return Err(Error::Alignment(format!(
                "{} labels for {} rows",
                labels.len(),
                self.n_rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::Domain(format!(
                "label {bad} is outside [0, {})",
                self.n_classes
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_logits(mut self, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != self.n_rows() {
            return Err(Error::Alignment(format!(
                "{} logit rows for {} rows",
                rows.len(),
                self.n_rows()
            )));
        }
        let mut flat = Vec::with_capacity(rows.len() * self.n_classes);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != self.n_classes {
                return Err(Error::Alignment(format!(
                    "logit row {i} has {} entries, expected {}",
                    row.len(),
                    self.n_classes
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("logit row {i} is not finite")));
            }
            flat.extend_from_slice(row);
        }
        self.logits = Some(flat);
        Ok(self)
    }

    pub fn with_row_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_rows() {
            return Err(Error::Alignment(format!(
                "{} row ids for {} rows",
                ids.len(),
                self.n_rows()
            )));
        }
        self.row_ids = ids;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.probs.len() / self.n_classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.n_classes)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn has_logits(&self) -> bool {
        self.logits.is_some()
    }

    pub fn logit_row(&self, i: usize) -> Option<&[f64]> {
        self.logits
            .as_ref()
            .map(|l| &l[i * self.n_classes..(i + 1) * self.n_classes])
    }

    /// Row-major logit matrix: the stored logits, or `ln π` of the clamped
    /// probabilities when none were supplied.
    pub fn logit_matrix(&self) -> Vec<f64> {
        match &self.logits {
            Some(l) => l.clone(),
            None => self.probs.iter().map(|p| p.ln()).collect(),
        }
    }

    /// Teacher predicted class per row.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    /// Restricts every row to the kept classes and renormalises. Labels are
    /// remapped when every label lies in the subset and dropped otherwise.
    pub fn apply_subset_mask(&self, mask: &SubsetMask) -> Result<Self> {
        if mask.len() != self.n_classes {
            return Err(Error::Alignment(format!(
                "mask has {} entries for {} classes",
                mask.len(),
                self.n_classes
            )));
        }
        let rows = self
            .rows()
            .map(|r| apply_subset_mask(r, mask))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::from_rows(&rows)?.with_row_ids(self.row_ids.clone())?;
        let remap = mask.index_map();
        if let Some(labels) = &self.labels {
            let mapped: Option<Vec<usize>> = labels.iter().map(|&l| remap[l]).collect();
            match mapped {
                Some(m) => out = out.with_labels(m)?,
                None => log::warn!("some labels fall outside the class subset; labels dropped"),
            }
        }
        if self.logits.is_some() {
            let rows: Vec<Vec<f64>> = (0..self.n_rows())
                .map(|i| {
                    let l = self.logit_row(i).expect("logits present");
                    mask.kept().map(|k| l[k]).collect()
                })
                .collect();
            out = out.with_logits(&rows)?;
        }
        Ok(out)
    }
}

/// Clamps to [`PROB_FLOOR`] and renormalises. The sum runs over sorted
/// entries so permuted rows normalise to permuted results.
fn clamp_row(row: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = row.iter().map(|&p| p.max(PROB_FLOOR)).collect();
    let mut sorted = clamped.clone();
    sorted.sort_by(f64::total_cmp);
    let sum: f64 = sorted.iter().sum();
    clamped.into_iter().map(|p| p / sum).collect()
}

/// Row-aligned 2-D coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingTable {
    points: Vec<[f64; 2]>,
}

impl EmbeddingTable {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::Domain(format!("embedding row {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub(crate) fn points_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.points
    }

    pub fn check_aligned(&self, preds: &PredictionTable) -> Result<()> {
        if self.len() != preds.n_rows() {
            return Err(Error::Alignment(format!(
                "embedding has {} rows, predictions have {}",
                self.len(),
                preds.n_rows()
            )));
        }
        Ok(())
    }
}

/// Symmetric positive-definite 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Spd2(pub [[f64; 2]; 2]);

impl Spd2 {
    pub fn scaled_identity(s: f64) -> Self {
        Spd2([[s, 0.0], [0.0, s]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.0;
        if m.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Domain("scale matrix is not finite".into()));
        }
        if (m[0][1] - m[1][0]).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "scale matrix is not symmetric: {m:?}"
            )));
        }
        // Both eigenvalues positive ⇔ positive trace and determinant.
        if m[0][0] <= 0.0 || self.det() <= 0.0 {
            return Err(Error::Domain(format!(
                "scale matrix is not positive definite: {m:?}"
            )));
        }
        Ok(())
    }

    pub fn inverse(&self) -> [[f64; 2]; 2] {
        let m = &self.0;
        let d = self.det();
        [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
    }

    pub fn rotated(&self, r: [[f64; 2]; 2]) -> Self {
        // R Σ Rᵀ
        let m = &self.0;
        let mut rm = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                rm[i][j] = r[i][0] * m[0][j] + r[i][1] * m[1][j];
            }
        }
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = rm[i][0] * r[j][0] + rm[i][1] * r[j][1];
            }
        }
        let off = 0.5 * (out[0][1] + out[1][0]);
        out[0][1] = off;
        out[1][0] = off;
        Spd2(out)
    }
}

/// Student parameters: per-class means and fixed scale matrices, shared
/// degrees of freedom, and unconstrained prior logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentParams {
    pub means: Vec<[f64; 2]>,
    pub scales: Vec<Spd2>,
    pub dof: f64,
    pub prior_logits: Vec<f64>,
}

impl StudentParams {
    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if self.scales.len() != k || self.prior_logits.len() != k {
            return Err(Error::Alignment(format!(
                "{} means, {} scales, {} prior logits",
                k,
                self.scales.len(),
                self.prior_logits.len()
            )));
        }
        if !(self.dof > 0.0 && self.dof.is_finite()) {
            return Err(Error::Domain(format!(
                "degrees of freedom must be positive, got {}",
                self.dof
            )));
        }
        for s in &self.scales {
            s.validate()?;
        }
        if self
            .means
            .iter()
            .flatten()
            .chain(&self.prior_logits)
            .any(|x| !x.is_finite())
        {
            return Err(Error::Domain("student parameters are not finite".into()));
        }
        Ok(())
    }

    /// `log softmax(θ_p)`.
    pub fn log_prior(&self) -> Vec<f64> {
        let mut lp = self.prior_logits.clone();
        log_softmax_in_place(&mut lp);
        lp
    }

    pub fn prior(&self) -> Vec<f64> {
        softmax(&self.prior_logits)
    }
}

/// A t component with its precision and normalising constant precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TComponent {
    pub mean: [f64; 2],
    pub precision: [[f64; 2]; 2],
    pub log_norm: f64,
}

impl TComponent {
    fn new(mean: [f64; 2], scale: &Spd2, nu: f64) -> Self {
        let log_norm = ln_gamma(0.5 * (nu + 2.0))
            - ln_gamma(0.5 * nu)
            - (nu * PI).ln()
            - 0.5 * scale.det().ln();
        Self {
            mean,
            precision: scale.inverse(),
            log_norm,
        }
    }

    /// Squared Mahalanobis distance and the offset `y − μ`.
    #[inline]
    pub fn mahalanobis(&self, y: [f64; 2]) -> (f64, [f64; 2]) {
        let d = [y[0] - self.mean[0], y[1] - self.mean[1]];
        let p = &self.precision;
        let m = d[0] * (p[0][0] * d[0] + p[0][1] * d[1]) + d[1] * (p[1][0] * d[0] + p[1][1] * d[1]);
        (m, d)
    }
}

/// The student classifier with per-class constants cached.
#[derive(Debug, Clone)]
pub(crate) struct Student {
    pub nu: f64,
    pub components: Vec<TComponent>,
    pub log_prior: Vec<f64>,
}

impl Student {
    pub fn new(params: &StudentParams) -> Result<Self> {
        params.validate()?;
        Ok(Self::new_unchecked(params))
    }

    pub fn new_unchecked(params: &StudentParams) -> Self {
        let components = params
            .means
            .iter()
            .zip(&params.scales)
            .map(|(m, s)| TComponent::new(*m, s, params.dof))
            .collect();
        Self {
            nu: params.dof,
            components,
            log_prior: params.log_prior(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.components.len()
    }

    /// Writes the per-class log joints `log t(y; μ_k, Σ_k, ν) + log prior_k`.
    #[inline]
    pub fn log_joint(&self, y: [f64; 2], out: &mut [f64]) {
        let half = 0.5 * (self.nu + 2.0);
        for ((o, c), lp) in out.iter_mut().zip(&self.components).zip(&self.log_prior) {
            let (m, _) = c.mahalanobis(y);
            *o = c.log_norm - half * (m / self.nu).ln_1p() + lp;
        }
    }

    pub fn posterior(&self, y: [f64; 2]) -> Vec<f64> {
        let mut l = vec![0.0; self.n_classes()];
        self.log_joint(y, &mut l);
        log_softmax_in_place(&mut l);
        l.iter_mut().for_each(|x| *x = x.exp());
        l
    }

    /// `log Σ_k prior_k · t(y; μ_k, Σ_k, ν)`.
    pub fn log_marginal(&self, y: [f64; 2]) -> f64 {
        let mut l = vec![0.0; self.n_classes()];
        self.log_joint(y, &mut l);
        log_sum_exp(&l)
    }
}

/// Log-density of the bivariate Student's t with location `mu`, scale
/// matrix `scale` and `nu` degrees of freedom.
pub fn t_log_density(y: [f64; 2], mu: [f64; 2], scale: &Spd2, nu: f64) -> Result<f64> {
    scale.validate()?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!(
            "degrees of freedom must be positive, got {nu}"
        )));
    }
    let c = TComponent::new(mu, scale, nu);
    let (m, _) = c.mahalanobis(y);
    Ok(c.log_norm - 0.5 * (nu + 2.0) * (m / nu).ln_1p())
}

/// Naive Bayes posterior over classes at embedding point `y`.
pub fn student_posterior(y: [f64; 2], params: &StudentParams) -> Result<Vec<f64>> {
    Ok(Student::new(params)?.posterior(y))
}

/// Tempered teacher row `softmax(ln p / T)`.
pub fn apply_temperature(row: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return row.to_vec();
    }
    let logits: Vec<f64> = row.iter().map(|p| p.ln() / temperature).collect();
    softmax(&logits)
}

/// Kept-class indicator with at least two kept classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetMask {
    keep: Vec<bool>,
}

impl SubsetMask {
    pub fn new(keep: Vec<bool>) -> Result<Self> {
        let kept = keep.iter().filter(|&&b| b).count();
        if kept < 2 {
            return Err(Error::Domain(format!(
                "a subset mask must keep at least 2 classes, keeps {kept}"
            )));
        }
        Ok(Self { keep })
    }

    pub fn from_indices(n_classes: usize, kept: &[usize]) -> Result<Self> {
        let mut keep = vec![false; n_classes];
        for &k in kept {
            if k >= n_classes {
                return Err(Error::Domain(format!(
                    "class {k} is outside [0, {n_classes})"
                )));
            }
            keep[k] = true;
        }
        Self::new(keep)
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|&&b| b).count()
    }

    pub fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// Maps an original class index to its index in the subset.
    fn index_map(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.keep
            .iter()
            .map(|&b| {
                b.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }
}

/// Keeps the masked entries of a probability row and renormalises them.
pub fn apply_subset_mask(row: &[f64], mask: &SubsetMask) -> Result<Vec<f64>> {
    if row.len() != mask.len() {
        return Err(Error::Alignment(format!(
            "row has {} entries, mask has {}",
            row.len(),
            mask.len()
        )));
    }
    let kept: Vec<f64> = mask.kept().map(|k| row[k]).collect();
    let mass: f64 = kept.iter().sum();
    let floor = PROB_FLOOR * row.len() as f64;
    if mass < floor {
        return Err(Error::DegenerateMask { mass, floor });
    }
    Ok(kept.into_iter().map(|p| p / mass).collect())
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
///
/// Terms are summed in sorted order, so the result is bitwise identical for
/// any reordering of the entries.
pub fn predictive_entropy(row: &[f64]) -> f64 {
    let mut terms: Vec<f64> = row
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Every parameter group is updated on every step.
    #[default]
    Joint,
    /// Odd epochs update means and prior, even epochs update embeddings.
    Coordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Random,
    #[default]
    ClusterCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_means: f64,
    pub lr_prior: f64,
    pub lr_embed: f64,
    pub mode: TrainMode,
    /// `(epoch, T)` breakpoints; empty means a constant `T = 1`.
    pub temperature_schedule: Vec<(f64, f64)>,
    pub seed: u64,
    pub deterministic: bool,
    pub init: InitMode,
    pub dof: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 1000,
            lr_means: 1e-3,
            lr_prior: 5e-3,
            lr_embed: 1e-6,
            mode: TrainMode::Joint,
            temperature_schedule: Vec::new(),
            seed: 0,
            deterministic: true,
            init: InitMode::ClusterCenter,
            dof: DEFAULT_DOF,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be positive".into()));
        }
        for (name, lr) in [
            ("lr_means", self.lr_means),
            ("lr_prior", self.lr_prior),
            ("lr_embed", self.lr_embed),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.dof > 0.0 && self.dof.is_finite()) {
            return Err(Error::Domain(format!(
                "degrees of freedom must be positive, got {}",
                self.dof
            )));
        }
        validate_schedule(&self.temperature_schedule)
    }
}

pub fn validate_schedule(schedule: &[(f64, f64)]) -> Result<()> {
    if schedule.is_empty() {
        return Ok(());
    }
    if schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Domain(
            "temperature schedule epochs must be strictly increasing".into(),
        ));
    }
    if let Some(&(e, t)) = schedule.iter().find(|(_, t)| !(*t >= 1.0 && t.is_finite())) {
        return Err(Error::Domain(format!(
            "temperature at epoch {e} must be >= 1, got {t}"
        )));
    }
    let last = schedule[schedule.len() - 1].1;
    if last != 1.0 {
        return Err(Error::Domain(format!(
            "temperature schedule must end at T = 1, ends at {last}"
        )));
    }
    Ok(())
}
