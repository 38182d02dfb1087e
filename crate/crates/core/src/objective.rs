//! Symmetric-KL distillation loss and its analytic gradients.
//!
//! For one row with teacher target `p` and student posterior
//! `q = softmax(ℓ)`, the loss `½ KL(p‖q) + ½ KL(q‖p)` has
//!
//! ```text
//! ∂/∂ℓ_j = ½ (q_j − p_j) + ½ q_j (r_j − Σ_k q_k r_k),   r_k = ln q_k − ln p_k
//! ```
//!
//! and each log joint `ℓ_j = log t(y; μ_j, Σ_j, ν) + log softmax(θ)_j`
//! contributes `∓ (ν + 2) Σ_j⁻¹ (y − μ_j) / (ν + m_j)` to the embedding and
//! mean gradients, `m_j` being the squared Mahalanobis distance.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{apply_temperature, EmbeddingTable, PredictionTable, Student, StudentParams};
use crate::special::log_softmax_in_place;

/// ½ (KL(p‖q) + KL(q‖p)) in nats. Both rows must be strictly positive.
pub fn sym_kl(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .map(|(&a, &b)| (a - b) * (a.ln() - b.ln()))
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_row: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_embed: Vec<[f64; 2]>,
    pub d_means: Vec<[f64; 2]>,
    pub d_prior: Vec<f64>,
}

/// Teacher targets at temperature `t`, row-major.
pub(crate) fn tempered_targets(preds: &PredictionTable, t: f64) -> Vec<f64> {
    if t == 1.0 {
        return preds.rows().flatten().copied().collect();
    }
    preds.rows().flat_map(|r| apply_temperature(r, t)).collect()
}

/// Mean symmetric KL between tempered teacher rows and the student.
pub fn loss(
    preds: &PredictionTable,
    emb: &EmbeddingTable,
    params: &StudentParams,
    temperature: f64,
) -> Result<LossReport> {
    check_shapes(preds, emb, params)?;
    check_temperature(temperature)?;
    let student = Student::new(params)?;
    let k = preds.n_classes();
    let mut lq = vec![0.0; k];
    let per_row: Vec<f64> = preds
        .rows()
        .zip(emb.points())
        .map(|(row, &y)| {
            let target = apply_temperature(row, temperature);
            student.log_joint(y, &mut lq);
            log_softmax_in_place(&mut lq);
            0.5 * target
                .iter()
                .zip(&lq)
                .map(|(&p, &l)| (p - l.exp()) * (p.ln() - l))
                .sum::<f64>()
        })
        .collect();
    let total = per_row.iter().sum::<f64>() / per_row.len().max(1) as f64;
    Ok(LossReport { total, per_row })
}

/// Gradients of the batch-mean loss. `batch` is a multiset of row indices;
/// rows outside it get a zero embedding gradient.
pub fn gradients(
    preds: &PredictionTable,
    emb: &EmbeddingTable,
    params: &StudentParams,
    temperature: f64,
    batch: &[usize],
) -> Result<GradientBundle> {
    check_shapes(preds, emb, params)?;
    check_temperature(temperature)?;
    if batch.is_empty() {
        return Err(Error::Domain("gradient batch is empty".into()));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= preds.n_rows()) {
        return Err(Error::Alignment(format!(
            "batch row {bad} is outside the {} rows",
            preds.n_rows()
        )));
    }
    let student = Student::new(params)?;
    let targets = tempered_targets(preds, temperature);
    let acc = accumulate(&student, &targets, emb.points(), batch, false);
    let mut d_embed = vec![[0.0; 2]; emb.len()];
    for (&i, g) in batch.iter().zip(&acc.d_batch) {
        d_embed[i][0] += g[0];
        d_embed[i][1] += g[1];
    }
    Ok(GradientBundle {
        d_embed,
        d_means: acc.d_means,
        d_prior: acc.d_prior,
    })
}

fn check_shapes(preds: &PredictionTable, emb: &EmbeddingTable, params: &StudentParams) -> Result<()> {
    emb.check_aligned(preds)?;
    if params.n_classes() != preds.n_classes() {
        return Err(Error::Alignment(format!(
            "student has {} classes, predictions have {}",
            params.n_classes(),
            preds.n_classes()
        )));
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t >= 1.0 && t.is_finite()) {
        return Err(Error::Domain(format!("temperature must be >= 1, got {t}")));
    }
    Ok(())
}

/// Batch-mean loss and gradients; `d_batch` is aligned with the batch.
pub(crate) struct BatchTerms {
    pub loss_sum: f64,
    pub per_row_loss: Vec<f64>,
    pub d_batch: Vec<[f64; 2]>,
    pub d_means: Vec<[f64; 2]>,
    pub d_prior: Vec<f64>,
}

struct RowTerms {
    loss: f64,
    d_y: [f64; 2],
    d_means: Vec<[f64; 2]>,
    d_prior: Vec<f64>,
}

fn row_terms(student: &Student, target: &[f64], y: [f64; 2]) -> RowTerms {
    let k = student.n_classes();
    let nu = student.nu;
    let mut lq = vec![0.0; k];
    student.log_joint(y, &mut lq);
    log_softmax_in_place(&mut lq);

    let q: Vec<f64> = lq.iter().map(|l| l.exp()).collect();
    let r: Vec<f64> = lq.iter().zip(target).map(|(l, p)| l - p.ln()).collect();
    let r_bar: f64 = q.iter().zip(&r).map(|(a, b)| a * b).sum();
    let loss = 0.5 * target.iter().zip(&q).zip(&r).map(|((p, qk), rk)| (qk - p) * rk).sum::<f64>();

    let g: Vec<f64> = (0..k)
        .map(|j| 0.5 * (q[j] - target[j]) + 0.5 * q[j] * (r[j] - r_bar))
        .collect();

    let mut d_y = [0.0; 2];
    let mut d_means = vec![[0.0; 2]; k];
    for (j, c) in student.components.iter().enumerate() {
        let (m, d) = c.mahalanobis(y);
        let w = g[j] * (nu + 2.0) / (nu + m);
        let p = &c.precision;
        let v = [
            w * (p[0][0] * d[0] + p[0][1] * d[1]),
            w * (p[1][0] * d[0] + p[1][1] * d[1]),
        ];
        d_y[0] -= v[0];
        d_y[1] -= v[1];
        d_means[j] = v;
    }
    // ∂ log softmax(θ)_j / ∂θ_m = δ_jm − π_m
    let g_sum: f64 = g.iter().sum();
    let d_prior = g
        .iter()
        .zip(&student.log_prior)
        .map(|(gj, lp)| gj - lp.exp() * g_sum)
        .collect();
    RowTerms {
        loss,
        d_y,
        d_means,
        d_prior,
    }
}

/// Accumulates batch-mean gradients. With `parallel` unset, the reduction
/// runs in batch order; with it set, row terms are computed on the rayon
/// pool and still reduced in batch order.
pub(crate) fn accumulate(
    student: &Student,
    targets: &[f64],
    points: &[[f64; 2]],
    batch: &[usize],
    parallel: bool,
) -> BatchTerms {
    let k = student.n_classes();
    let eval = |&i: &usize| row_terms(student, &targets[i * k..(i + 1) * k], points[i]);
    let rows: Vec<RowTerms> = if parallel {
        batch.par_iter().map(eval).collect()
    } else {
        batch.iter().map(eval).collect()
    };
    let scale = 1.0 / batch.len() as f64;
    let mut d_means = vec![[0.0; 2]; k];
    let mut d_prior = vec![0.0; k];
    let mut loss_sum = 0.0;
    let mut per_row_loss = Vec::with_capacity(rows.len());
    let mut d_batch = Vec::with_capacity(rows.len());
    for t in &rows {
        loss_sum += t.loss;
        per_row_loss.push(t.loss);
        d_batch.push([t.d_y[0] * scale, t.d_y[1] * scale]);
        for j in 0..k {
            d_means[j][0] += t.d_means[j][0];
            d_means[j][1] += t.d_means[j][1];
            d_prior[j] += t.d_prior[j];
        }
    }
    for j in 0..k {
        d_means[j][0] *= scale;
        d_means[j][1] *= scale;
        d_prior[j] *= scale;
    }
    BatchTerms {
        loss_sum,
        per_row_loss,
        d_batch,
        d_means,
        d_prior,
    }
}
