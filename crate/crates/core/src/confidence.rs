//! Density-based confidence scores and accuracy-vs-kept-fraction curves.
//!
//! Scores are log-densities (or negative entropy): higher means the teacher's
//! prediction for that row is more trustworthy.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predictive_entropy, EmbeddingTable, PredictionTable};
use crate::special::{digamma, inv_digamma, ln_gamma, log_sum_exp};

const BANDWIDTH_FLOOR: f64 = 1e-6;
const COVARIANCE_FLOOR: f64 = 1e-6;
const CONCENTRATION_FLOOR: f64 = 1e-3;
const EM_TOL: f64 = 1e-6;
const EM_MAX_ITER: usize = 500;
const GMM_RESTARTS: usize = 3;
const MINKA_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceKind {
    Kde,
    Gmm,
    Dmm,
    Entropy,
}

impl ConfidenceKind {
    pub fn name(self) -> &'static str {
        match self {
            ConfidenceKind::Kde => "kde",
            ConfidenceKind::Gmm => "gmm",
            ConfidenceKind::Dmm => "dmm",
            ConfidenceKind::Entropy => "entropy",
        }
    }
}

impl std::str::FromStr for ConfidenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "kde" => Ok(ConfidenceKind::Kde),
            "gmm" => Ok(ConfidenceKind::Gmm),
            "dmm" => Ok(ConfidenceKind::Dmm),
            "entropy" => Ok(ConfidenceKind::Entropy),
            other => Err(Error::Usage(format!("unknown confidence model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub bandwidth: [f64; 2],
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub covariances: Vec<[[f64; 2]; 2]>,
    /// Total log-likelihood after each EM iteration of the kept restart.
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dmm {
    pub weights: Vec<f64>,
    pub concentrations: Vec<Vec<f64>>,
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConfidenceModel {
    Kde(Kde),
    Gmm(Gmm),
    Dmm(Dmm),
    Entropy,
}

impl ConfidenceModel {
    pub fn kind(&self) -> ConfidenceKind {
        match self {
            ConfidenceModel::Kde(_) => ConfidenceKind::Kde,
            ConfidenceModel::Gmm(_) => ConfidenceKind::Gmm,
            ConfidenceModel::Dmm(_) => ConfidenceKind::Dmm,
            ConfidenceModel::Entropy => ConfidenceKind::Entropy,
        }
    }
}

// ---------------------------------------------------------------------------
// KDE

/// Gaussian-kernel KDE with per-axis Scott bandwidth `σ̂_d · N^{-1/6}`.
pub fn fit_kde(emb: &EmbeddingTable) -> Result<ConfidenceModel> {
    let n = emb.len();
    if n < 2 {
        return Err(Error::Domain(format!("KDE needs at least 2 points, got {n}")));
    }
    let factor = (n as f64).powf(-1.0 / 6.0);
    let mut bandwidth = [0.0; 2];
    for (axis, h) in bandwidth.iter_mut().enumerate() {
        let mean = emb.points().iter().map(|p| p[axis]).sum::<f64>() / n as f64;
        let var = emb
            .points()
            .iter()
            .map(|p| (p[axis] - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        *h = var.sqrt() * factor;
        if !(*h >= BANDWIDTH_FLOOR) {
            log::warn!("embedding axis {axis} has no spread; KDE bandwidth floored at {BANDWIDTH_FLOOR:e}");
            *h = BANDWIDTH_FLOOR;
        }
    }
    fit_kde_with_bandwidth(emb, bandwidth)
}

pub fn fit_kde_with_bandwidth(emb: &EmbeddingTable, bandwidth: [f64; 2]) -> Result<ConfidenceModel> {
    if emb.is_empty() {
        return Err(Error::Domain("KDE needs at least one point".into()));
    }
    if !(bandwidth[0] > 0.0 && bandwidth[1] > 0.0) {
        return Err(Error::Domain(format!("KDE bandwidths must be positive: {bandwidth:?}")));
    }
    Ok(ConfidenceModel::Kde(Kde {
        bandwidth,
        points: emb.points().to_vec(),
    }))
}

impl Kde {
    pub fn log_density(&self, y: [f64; 2]) -> f64 {
        let [hx, hy] = self.bandwidth;
        // Streaming log-sum-exp over the reference points.
        let mut max = f64::NEG_INFINITY;
        let mut acc = 0.0;
        for p in &self.points {
            let u = (y[0] - p[0]) / hx;
            let v = (y[1] - p[1]) / hy;
            let e = -0.5 * (u * u + v * v);
            if e > max {
                acc = acc * (max - e).exp() + 1.0;
                max = e;
            } else {
                acc += (e - max).exp();
            }
        }
        max + acc.ln() - (self.points.len() as f64).ln() - (2.0 * PI * hx * hy).ln()
    }
}

// ---------------------------------------------------------------------------
// Gaussian mixture

fn gauss_log_pdf(y: [f64; 2], mean: [f64; 2], cov: &[[f64; 2]; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let dx = y[0] - mean[0];
    let dy = y[1] - mean[1];
    let m = (cov[1][1] * dx * dx - 2.0 * cov[0][1] * dx * dy + cov[0][0] * dy * dy) / det;
    -0.5 * m - (2.0 * PI).ln() - 0.5 * det.ln()
}

/// Raises both eigenvalues of a symmetric 2×2 matrix to at least `floor`.
fn floor_covariance(c: [[f64; 2]; 2], floor: f64) -> [[f64; 2]; 2] {
    let a = c[0][0];
    let b = 0.5 * (c[0][1] + c[1][0]);
    let d = c[1][1];
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mid + rad, mid - rad);
    if l2 >= floor && l2.is_finite() {
        return [[a, b], [b, d]];
    }
    if rad == 0.0 || !rad.is_finite() {
        let l = l1.max(floor);
        return [[l, 0.0], [0.0, l]];
    }
    // Eigenvector of l1: (b, l1 − a) or (l1 − d, b), whichever is larger.
    let (mut ux, mut uy) = if (l1 - a).abs() > (l1 - d).abs() {
        (b, l1 - a)
    } else {
        (l1 - d, b)
    };
    let norm = (ux * ux + uy * uy).sqrt();
    ux /= norm;
    uy /= norm;
    let (e1, e2) = (l1.max(floor), l2.max(floor));
    // e1 u uᵀ + e2 w wᵀ with w ⟂ u
    let xx = e1 * ux * ux + e2 * uy * uy;
    let yy = e1 * uy * uy + e2 * ux * ux;
    let xy = (e1 - e2) * ux * uy;
    [[xx, xy], [xy, yy]]
}

fn kmeans_pp<T, F>(points: &[T], c: usize, rng: &mut ChaCha8Rng, dist2: F) -> Vec<usize>
where
    F: Fn(&T, &T) -> f64,
{
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[chosen[0]])).collect();
    while chosen.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // All remaining mass is on already chosen points.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &points[next]));
        }
    }
    chosen
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// E-step: log responsibilities (row-major N × C) and total log-likelihood.
fn gmm_e_step(points: &[[f64; 2]], g: &Gmm, resp: &mut [f64]) -> f64 {
    let c = g.weights.len();
    let mut ll = 0.0;
    for (y, r) in points.iter().zip(resp.chunks_exact_mut(c)) {
        for j in 0..c {
            r[j] = g.weights[j].ln() + gauss_log_pdf(*y, g.means[j], &g.covariances[j]);
        }
        let lse = log_sum_exp(r);
        ll += lse;
        r.iter_mut().for_each(|x| *x = (*x - lse).exp());
    }
    ll
}

fn gmm_m_step(points: &[[f64; 2]], g: &mut Gmm, resp: &[f64]) {
    let c = g.weights.len();
    let n = points.len();
    for j in 0..c {
        let nk: f64 = resp.chunks_exact(c).map(|r| r[j]).sum();
        if nk < 1e-10 {
            // Re-seed from the point farthest from every current mean.
            let far = (0..n)
                .max_by(|&a, &b| {
                    let da = g.means.iter().map(|m| dist2(&points[a], m)).fold(f64::INFINITY, f64::min);
                    let db = g.means.iter().map(|m| dist2(&points[b], m)).fold(f64::INFINITY, f64::min);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .unwrap_or(0);
            log::debug!("GMM component {j} emptied; re-seeded at row {far}");
            g.means[j] = points[far];
            g.covariances[j] = floor_covariance(data_covariance(points), COVARIANCE_FLOOR);
            g.weights[j] = 1.0 / n as f64;
            continue;
        }
        let mut mean = [0.0; 2];
        for (y, r) in points.iter().zip(resp.chunks_exact(c)) {
            mean[0] += r[j] * y[0];
            mean[1] += r[j] * y[1];
        }
        mean[0] /= nk;
        mean[1] /= nk;
        let mut cov = [[0.0; 2]; 2];
        for (y, r) in points.iter().zip(resp.chunks_exact(c)) {
            let d = [y[0] - mean[0], y[1] - mean[1]];
            cov[0][0] += r[j] * d[0] * d[0];
            cov[0][1] += r[j] * d[0] * d[1];
            cov[1][1] += r[j] * d[1] * d[1];
        }
        cov[0][0] /= nk;
        cov[0][1] /= nk;
        cov[1][1] /= nk;
        cov[1][0] = cov[0][1];
        g.means[j] = mean;
        g.covariances[j] = floor_covariance(cov, COVARIANCE_FLOOR);
        g.weights[j] = nk / n as f64;
    }
    let total: f64 = g.weights.iter().sum();
    g.weights.iter_mut().for_each(|w| *w /= total);
}

fn data_covariance(points: &[[f64; 2]]) -> [[f64; 2]; 2] {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - mx, p[1] - my];
        c[0][0] += d[0] * d[0];
        c[0][1] += d[0] * d[1];
        c[1][1] += d[1] * d[1];
    }
    c[0][0] /= n;
    c[0][1] /= n;
    c[1][1] /= n;
    c[1][0] = c[0][1];
    c
}

fn gmm_single(points: &[[f64; 2]], components: usize, rng: &mut ChaCha8Rng) -> Gmm {
    let n = points.len();
    let seeds = kmeans_pp(points, components, rng, dist2);
    let cov0 = floor_covariance(data_covariance(points), COVARIANCE_FLOOR);
    let mut g = Gmm {
        weights: vec![1.0 / components as f64; components],
        means: seeds.iter().map(|&i| points[i]).collect(),
        covariances: vec![cov0; components],
        log_likelihood: Vec::new(),
    };
    let mut resp = vec![0.0; n * components];
    let mut prev = gmm_e_step(points, &g, &mut resp);
    for _ in 0..EM_MAX_ITER {
        gmm_m_step(points, &mut g, &resp);
        let ll = gmm_e_step(points, &g, &mut resp);
        g.log_likelihood.push(ll);
        if (ll - prev).abs() / n as f64 <= EM_TOL {
            break;
        }
        prev = ll;
    }
    g
}

/// Gaussian mixture on the embedding: k-means++ seeding, EM, best of three
/// restarts by final log-likelihood.
pub fn fit_gmm(emb: &EmbeddingTable, components: usize, seed: u64) -> Result<ConfidenceModel> {
    if components == 0 || components > emb.len() {
        return Err(Error::Domain(format!(
            "GMM components must be in [1, {}], got {components}",
            emb.len()
        )));
    }
    let mut best: Option<Gmm> = None;
    for restart in 0..GMM_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let g = gmm_single(emb.points(), components, &mut rng);
        let ll = g.log_likelihood.last().copied().unwrap_or(f64::NEG_INFINITY);
        let better = best
            .as_ref()
            .is_none_or(|b| ll > b.log_likelihood.last().copied().unwrap_or(f64::NEG_INFINITY));
        if better {
            best = Some(g);
        }
    }
    Ok(ConfidenceModel::Gmm(best.expect("at least one restart")))
}

impl Gmm {
    pub fn log_density(&self, y: [f64; 2]) -> f64 {
        let terms: Vec<f64> = (0..self.weights.len())
            .map(|j| self.weights[j].ln() + gauss_log_pdf(y, self.means[j], &self.covariances[j]))
            .collect();
        log_sum_exp(&terms)
    }
}

// ---------------------------------------------------------------------------
// Dirichlet mixture

pub fn dirichlet_log_pdf(log_p: &[f64], alpha: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
        + alpha.iter().zip(log_p).map(|(a, l)| (a - 1.0) * l).sum::<f64>()
}

/// Weighted Dirichlet MLE by Minka's fixed point
/// `α_k ← ψ⁻¹(ψ(Σα) + mean_log_p_k)`, starting from `alpha`.
pub fn fit_dirichlet(mean_log_p: &[f64], alpha: &mut [f64]) {
    for _ in 0..MINKA_MAX_ITER {
        let psi_total = digamma(alpha.iter().sum());
        let mut change = 0.0f64;
        for (a, &s) in alpha.iter_mut().zip(mean_log_p) {
            let mut next = inv_digamma(psi_total + s);
            if !next.is_finite() || next < CONCENTRATION_FLOOR {
                next = CONCENTRATION_FLOOR;
            }
            change = change.max((next - *a).abs() / a.max(1e-12));
            *a = next;
        }
        if change < 1e-10 {
            break;
        }
    }
}

/// Moment-matching starting point for the fixed point.
fn dirichlet_moments(rows: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for (row, w) in rows.iter().zip(weights) {
        for c in 0..k {
            mean[c] += w * row[c];
            sq[c] += w * row[c] * row[c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    sq.iter_mut().for_each(|s| *s /= total);
    let var0 = (sq[0] - mean[0] * mean[0]).max(1e-12);
    let precision = ((mean[0] * (1.0 - mean[0]) / var0) - 1.0).clamp(0.1, 1e4);
    mean.iter().map(|m| (m * precision).max(CONCENTRATION_FLOOR)).collect()
}

pub(crate) fn dmm_e_step(log_rows: &[Vec<f64>], d: &Dmm, resp: &mut [f64]) -> f64 {
    let c = d.weights.len();
    let mut ll = 0.0;
    for (lp, r) in log_rows.iter().zip(resp.chunks_exact_mut(c)) {
        for j in 0..c {
            r[j] = d.weights[j].ln() + dirichlet_log_pdf(lp, &d.concentrations[j]);
        }
        let lse = log_sum_exp(r);
        ll += lse;
        r.iter_mut().for_each(|x| *x = (*x - lse).exp());
    }
    ll
}

pub(crate) fn dmm_m_step(log_rows: &[Vec<f64>], d: &mut Dmm, resp: &[f64]) {
    let c = d.weights.len();
    let n = log_rows.len();
    let k = log_rows[0].len();
    for j in 0..c {
        let nk: f64 = resp.chunks_exact(c).map(|r| r[j]).sum();
        if nk < 1e-10 {
            d.weights[j] = 1e-10;
            continue;
        }
        let mut mean_log = vec![0.0; k];
        for (lp, r) in log_rows.iter().zip(resp.chunks_exact(c)) {
            for (m, l) in mean_log.iter_mut().zip(lp) {
                *m += r[j] * l;
            }
        }
        mean_log.iter_mut().for_each(|m| *m /= nk);
        fit_dirichlet(&mean_log, &mut d.concentrations[j]);
        d.weights[j] = nk / n as f64;
    }
    let total: f64 = d.weights.iter().sum();
    d.weights.iter_mut().for_each(|w| *w /= total);
}

/// Dirichlet mixture on the teacher prediction vectors, EM with k-means++
/// hard-assignment initialisation.
pub fn fit_dmm(preds: &PredictionTable, components: usize, seed: u64) -> Result<ConfidenceModel> {
    let n = preds.n_rows();
    if components == 0 || components > n {
        return Err(Error::Domain(format!(
            "DMM components must be in [1, {n}], got {components}"
        )));
    }
    let rows: Vec<&[f64]> = preds.rows().collect();
    let log_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l2 = |a: &&[f64], b: &&[f64]| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
    let seeds = kmeans_pp(&rows, components, &mut rng, l2);
    let assign: Vec<usize> = rows
        .iter()
        .map(|r| {
            (0..components)
                .min_by(|&a, &b| l2(r, &rows[seeds[a]]).total_cmp(&l2(r, &rows[seeds[b]])))
                .expect("components > 0")
        })
        .collect();
    let mut d = Dmm {
        weights: vec![0.0; components],
        concentrations: Vec::with_capacity(components),
        log_likelihood: Vec::new(),
    };
    for j in 0..components {
        let w: Vec<f64> = assign.iter().map(|&a| if a == j { 1.0 } else { 1e-6 }).collect();
        d.concentrations.push(dirichlet_moments(&rows, &w));
        d.weights[j] = w.iter().sum::<f64>();
    }
    let total: f64 = d.weights.iter().sum();
    d.weights.iter_mut().for_each(|w| *w /= total);

    let mut resp = vec![0.0; n * components];
    let mut prev = dmm_e_step(&log_rows, &d, &mut resp);
    for _ in 0..EM_MAX_ITER {
        dmm_m_step(&log_rows, &mut d, &resp);
        let ll = dmm_e_step(&log_rows, &d, &mut resp);
        d.log_likelihood.push(ll);
        if (ll - prev).abs() / n as f64 <= EM_TOL {
            break;
        }
        prev = ll;
    }
    Ok(ConfidenceModel::Dmm(d))
}

impl Dmm {
    pub fn log_density(&self, row: &[f64]) -> f64 {
        let lp: Vec<f64> = row.iter().map(|p| p.ln()).collect();
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.concentrations)
            .map(|(w, a)| w.ln() + dirichlet_log_pdf(&lp, a))
            .collect();
        log_sum_exp(&terms)
    }
}

// ---------------------------------------------------------------------------
// Scoring and rejection

/// Per-row confidence. Embedding models need `emb`; the Dirichlet mixture and
/// entropy need `preds`.
pub fn score(
    model: &ConfidenceModel,
    emb: Option<&EmbeddingTable>,
    preds: Option<&PredictionTable>,
) -> Result<Vec<f64>> {
    let need_emb = || {
        emb.ok_or_else(|| {
            Error::Usage(format!("{} confidence needs an embedding", model.kind().name()))
        })
    };
    let need_preds = || {
        preds.ok_or_else(|| {
            Error::Usage(format!("{} confidence needs prediction vectors", model.kind().name()))
        })
    };
    Ok(match model {
        ConfidenceModel::Kde(k) => need_emb()?.points().par_iter().map(|&y| k.log_density(y)).collect(),
        ConfidenceModel::Gmm(g) => need_emb()?.points().par_iter().map(|&y| g.log_density(y)).collect(),
        ConfidenceModel::Dmm(d) => {
            let p = need_preds()?;
            if d.concentrations.first().map(Vec::len) != Some(p.n_classes()) {
                return Err(Error::Usage("Dirichlet mixture was fitted on a different class count".into()));
            }
            p.rows().map(|r| d.log_density(r)).collect()
        }
        ConfidenceModel::Entropy => need_preds()?.rows().map(|r| -predictive_entropy(r)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionPoint {
    pub fraction: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    pub points: Vec<RejectionPoint>,
}

/// Fractions `1/steps, 2/steps, …, 1`.
pub fn uniform_grid(steps: usize) -> Vec<f64> {
    (1..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// Number of rows kept at fraction `f`: `⌈f·N⌉`, ignoring round-off above an
/// exact integer.
pub fn kept_count(f: f64, n: usize) -> usize {
    let x = f * n as f64;
    let r = x.round();
    let kept = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (kept as usize).clamp(1, n)
}

/// Accuracy on the `⌈fN⌉` highest-scoring rows for each fraction `f`, ties
/// broken by ascending row index.
pub fn rejection_curve(
    scores: &[f64],
    labels: Option<&[usize]>,
    predicted: &[usize],
    grid: &[f64],
) -> Result<RejectionCurve> {
    let labels = labels.ok_or_else(|| Error::Usage("rejection curves need true labels".into()))?;
    let n = scores.len();
    if labels.len() != n || predicted.len() != n {
        return Err(Error::Alignment(format!(
            "{n} scores, {} labels, {} predictions",
            labels.len(),
            predicted.len()
        )));
    }
    if n == 0 {
        return Err(Error::Domain("rejection curve over zero rows".into()));
    }
    if grid.is_empty()
        || grid.iter().any(|&f| !(f > 0.0 && f <= 1.0))
        || grid.windows(2).any(|w| w[1] <= w[0])
        || *grid.last().expect("non-empty") != 1.0
    {
        return Err(Error::Domain(
            "fraction grid must be strictly increasing in (0, 1] and end at 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut correct_prefix = Vec::with_capacity(n + 1);
    correct_prefix.push(0usize);
    for &i in &order {
        let last = *correct_prefix.last().expect("non-empty");
        correct_prefix.push(last + usize::from(predicted[i] == labels[i]));
    }
    let points = grid
        .iter()
        .map(|&f| {
            let kept = kept_count(f, n);
            RejectionPoint {
                fraction: f,
                accuracy: correct_prefix[kept] as f64 / kept as f64,
            }
        })
        .collect();
    Ok(RejectionCurve { points })
}

impl RejectionCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["fraction", "accuracy"]).map_err(|e| Error::csv(path, e))?;
        for p in &self.points {
            w.write_record([p.fraction.to_string(), p.accuracy.to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let points = r
            .deserialize()
            .collect::<std::result::Result<Vec<RejectionPoint>, _>>()
            .map_err(|e| Error::csv(path, e))?;
        Ok(Self { points })
    }

    pub fn accuracy_at(&self, fraction: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.fraction - fraction).abs() < 1e-12)
            .map(|p| p.accuracy)
    }
}
