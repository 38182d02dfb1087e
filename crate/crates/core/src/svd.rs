//! Closed-form rank-2 variant: the teacher logit matrix `L` (N × K) is
//! factored as `Y · W` with `Y = U₂Σ₂` (N × 2) and `W = V₂ᵀ` (2 × K), the
//! best rank-2 approximation in Frobenius norm. The implied student is
//! `softmax(Y_i · W)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{argmax, softmax};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdModel {
    pub n_classes: usize,
    /// N × 2 embedding.
    pub embed: Vec<[f64; 2]>,
    /// 2 × K, row-major.
    pub weights: [Vec<f64>; 2],
    pub singular_values: [f64; 2],
    /// ‖L − Y·W‖_F
    pub residual: f64,
}

/// Eigen-decomposition of a symmetric `n × n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the matching
/// unit eigenvectors as rows.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(a.len(), n * n);
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&j| (0..n).map(|k| v[k * n + j]).collect())
        .collect();
    (values, vectors)
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Best rank-2 factorisation of the row-major `n_rows × n_classes` matrix.
pub fn fit_svd(logits: &[f64], n_rows: usize, n_classes: usize) -> Result<SvdModel> {
    if n_rows < 2 || n_classes < 2 {
        return Err(Error::Domain(format!(
            "rank-2 factorisation needs at least 2 rows and 2 classes, got {n_rows} × {n_classes}"
        )));
    }
    if logits.len() != n_rows * n_classes {
        return Err(Error::Alignment(format!(
            "{} entries for a {n_rows} × {n_classes} matrix",
            logits.len()
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("logit matrix is not finite".into()));
    }
    let k = n_classes;
    // Gram matrix LᵀL, accumulated in row order.
    let mut gram = vec![0.0; k * k];
    for row in logits.chunks_exact(k) {
        for i in 0..k {
            for j in i..k {
                gram[i * k + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            gram[i * k + j] = gram[j * k + i];
        }
    }
    let (values, mut vectors) = symmetric_eigen(&gram, k);
    vectors.truncate(2);
    for v in vectors.iter_mut() {
        fix_sign(v);
    }

    let mut embed: Vec<[f64; 2]> = logits
        .chunks_exact(k)
        .map(|row| {
            let a = row.iter().zip(&vectors[0]).map(|(x, v)| x * v).sum();
            let b = row.iter().zip(&vectors[1]).map(|(x, v)| x * v).sum();
            [a, b]
        })
        .collect();
    // ‖L v_j‖ is accurate for small σ_j where √λ_j would amplify round-off.
    let col_norm = |c: usize, e: &[[f64; 2]]| e.iter().map(|y| y[c] * y[c]).sum::<f64>().sqrt();
    let mut sigma = [col_norm(0, &embed), col_norm(1, &embed)];
    if values[1] <= 0.0 || sigma[1] <= 1e-12 * sigma[0] {
        log::warn!(
            "logit matrix is rank-deficient (λ₂ = {:e}); second embedding axis set to 0",
            values[1]
        );
        embed.iter_mut().for_each(|y| y[1] = 0.0);
        sigma[1] = 0.0;
    }

    let weights = [vectors[0].clone(), vectors[1].clone()];
    let residual = logits
        .chunks_exact(k)
        .zip(&embed)
        .map(|(row, y)| {
            row.iter()
                .enumerate()
                .map(|(c, x)| {
                    let r = x - y[0] * weights[0][c] - y[1] * weights[1][c];
                    r * r
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt();
    Ok(SvdModel {
        n_classes,
        embed,
        weights,
        singular_values: sigma,
        residual,
    })
}

impl SvdModel {
    /// Reconstructed logit row `Y_i · W`.
    pub fn reconstruct_row(&self, row: usize) -> Vec<f64> {
        let y = self.embed[row];
        (0..self.n_classes)
            .map(|c| y[0] * self.weights[0][c] + y[1] * self.weights[1][c])
            .collect()
    }

    /// Number of rows whose student argmax equals the argmax of the logits.
    pub fn teacher_agreement(&self, logits: &[f64]) -> usize {
        logits
            .chunks_exact(self.n_classes)
            .enumerate()
            .filter(|(i, row)| argmax(&self.reconstruct_row(*i)) == argmax(row))
            .count()
    }
}

/// Student posterior of the rank-2 model for one row.
pub fn svd_student_posterior(model: &SvdModel, row: usize) -> Vec<f64> {
    softmax(&model.reconstruct_row(row))
}
