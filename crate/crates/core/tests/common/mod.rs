#![allow(dead_code)]

use darkviz::{EmbeddingTable, PredictionTable, Spd2, StudentParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0f64).powi(3)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

pub fn random_preds(rng: &mut ChaCha8Rng, n: usize, k: usize) -> PredictionTable {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(rng, k)).collect();
    PredictionTable::from_rows(&rows).unwrap()
}

pub fn random_embedding(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> EmbeddingTable {
    EmbeddingTable::new(
        (0..n)
            .map(|_| [rng.random_range(-spread..spread), rng.random_range(-spread..spread)])
            .collect(),
    )
    .unwrap()
}

/// Random means, anisotropic rotated scales and an optional random prior.
pub fn random_params(rng: &mut ChaCha8Rng, k: usize, nonuniform_prior: bool) -> StudentParams {
    let means = (0..k)
        .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect();
    let scales = (0..k)
        .map(|_| {
            let a: f64 = rng.random_range(0.5..2.0);
            let b: f64 = rng.random_range(0.5..2.0);
            let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (s, c) = t.sin_cos();
            Spd2([[a, 0.0], [0.0, b]]).rotated([[c, -s], [s, c]])
        })
        .collect();
    let prior_logits = (0..k)
        .map(|_| if nonuniform_prior { rng.random_range(-1.5..1.5) } else { 0.0 })
        .collect();
    StudentParams {
        means,
        scales,
        dof: 2.0,
        prior_logits,
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64 + 1.0;
            for &t in &idx[i..=j] {
                r[t] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Worst relative error of analytic gradients against central differences of
/// the full-batch loss. Denominators are floored at `1e-7`.
pub fn worst_fd_error(preds: &PredictionTable, emb: &EmbeddingTable, params: &StudentParams, h: f64) -> f64 {
    use darkviz::objective::{gradients, loss};
    let all: Vec<usize> = (0..preds.n_rows()).collect();
    let g = gradients(preds, emb, params, 1.0, &all).unwrap();
    let f = |e: &EmbeddingTable, p: &StudentParams| loss(preds, e, p, 1.0).unwrap().total;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-7);
    let mut worst = 0.0f64;

    for i in 0..emb.len() {
        for d in 0..2 {
            let mut plus = emb.points().to_vec();
            let mut minus = plus.clone();
            plus[i][d] += h;
            minus[i][d] -= h;
            let fd = (f(&EmbeddingTable::new(plus).unwrap(), params)
                - f(&EmbeddingTable::new(minus).unwrap(), params))
                / (2.0 * h);
            worst = worst.max(rel(g.d_embed[i][d], fd));
        }
    }
    for k in 0..params.n_classes() {
        for d in 0..2 {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.means[k][d] += h;
            minus.means[k][d] -= h;
            let fd = (f(emb, &plus) - f(emb, &minus)) / (2.0 * h);
            worst = worst.max(rel(g.d_means[k][d], fd));
        }
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.prior_logits[k] += h;
        minus.prior_logits[k] -= h;
        let fd = (f(emb, &plus) - f(emb, &minus)) / (2.0 * h);
        worst = worst.max(rel(g.d_prior[k], fd));
    }
    worst
}
