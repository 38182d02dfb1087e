//! Synthetic teachers: class blobs in a latent plane, turned into prediction
//! vectors by a distance softmax.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PredictionTable;
use crate::special::{log_softmax_in_place, log_sum_exp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub n: usize,
    /// `(i, j, strength)`: centres `i` and `j` move toward their midpoint by
    /// `strength` of their distance to it.
    pub confusable_pairs: Vec<(usize, usize, f64)>,
    pub outlier_fraction: f64,
    /// Radius of the circle carrying the class centres.
    pub radius: f64,
    /// Per-axis standard deviation of each class blob.
    pub spread: f64,
    /// Softmax temperature on negative squared distances.
    pub tau: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            n: 2000,
            confusable_pairs: Vec::new(),
            outlier_fraction: 0.0,
            radius: 10.0,
            spread: 1.0,
            tau: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Domain(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.n == 0 {
            return Err(Error::Domain("need at least one row".into()));
        }
        for &(i, j, s) in &self.confusable_pairs {
            if i >= self.classes || j >= self.classes || i == j {
                return Err(Error::Domain(format!("bad confusable pair ({i}, {j})")));
            }
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Domain(format!("pair strength must be in (0, 1), got {s}")));
            }
        }
        if !(0.0..=0.1).contains(&self.outlier_fraction) {
            return Err(Error::Domain(format!(
                "outlier fraction must be in [0, 0.1], got {}",
                self.outlier_fraction
            )));
        }
        for (name, v) in [("radius", self.radius), ("spread", self.spread), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Class centres after the confusable-pair pulls.
    pub fn centres(&self) -> Vec<[f64; 2]> {
        let k = self.classes;
        let mut c: Vec<[f64; 2]> = (0..k)
            .map(|i| {
                let a = TAU * i as f64 / k as f64;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect();
        for &(i, j, s) in &self.confusable_pairs {
            let mid = [0.5 * (c[i][0] + c[j][0]), 0.5 * (c[i][1] + c[j][1])];
            for idx in [i, j] {
                c[idx][0] += s * (mid[0] - c[idx][0]);
                c[idx][1] += s * (mid[1] - c[idx][1]);
            }
        }
        c
    }
}

fn logits_at(z: [f64; 2], centres: &[[f64; 2]], tau: f64) -> Vec<f64> {
    centres
        .iter()
        .map(|c| -((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2)) / tau)
        .collect()
}

/// Classes two or more steps away from `a` around the circle.
fn non_adjacent(a: usize, k: usize) -> Vec<usize> {
    (0..k)
        .filter(|&b| {
            let d = (a + k - b) % k;
            d > 1 && d < k - 1
        })
        .collect()
}

/// Draws a labelled table; row `i` belongs to class `i mod K`.
///
/// Outlier rows average the prediction vectors of a draw from their own blob
/// and a draw from a non-adjacent class (any other class when K < 4).
pub fn synth_teacher(cfg: &SynthConfig) -> Result<PredictionTable> {
    cfg.validate()?;
    let k = cfg.classes;
    let centres = cfg.centres();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_out = (cfg.outlier_fraction * cfg.n as f64).round() as usize;
    let mut is_outlier = vec![false; cfg.n];
    for i in sample(&mut rng, cfg.n, n_out) {
        is_outlier[i] = true;
    }

    let draw = |rng: &mut ChaCha8Rng, class: usize| -> [f64; 2] {
        let c = centres[class];
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        [c[0] + cfg.spread * a, c[1] + cfg.spread * b]
    };

    let mut logits = Vec::with_capacity(cfg.n);
    let mut labels = Vec::with_capacity(cfg.n);
    for (i, &outlier) in is_outlier.iter().enumerate() {
        let class = i % k;
        labels.push(class);
        let own = logits_at(draw(&mut rng, class), &centres, cfg.tau);
        if !outlier {
            logits.push(own);
            continue;
        }
        let far = non_adjacent(class, k);
        let other = if far.is_empty() {
            (class + 1 + rng.random_range(0..k - 1)) % k
        } else {
            far[rng.random_range(0..far.len())]
        };
        let lambda: f64 = rng.random_range(0.4..0.6);
        // mix in log space; far classes underflow otherwise
        let mut la = own;
        let mut lb = logits_at(draw(&mut rng, other), &centres, cfg.tau);
        log_softmax_in_place(&mut la);
        log_softmax_in_place(&mut lb);
        let (wa, wb) = (lambda.ln(), (1.0 - lambda).ln());
        let mixed: Vec<f64> = la.iter().zip(&lb).map(|(a, b)| log_sum_exp(&[wa + a, wb + b])).collect();
        logits.push(mixed);
    }
    PredictionTable::from_logits(&logits)?.with_labels(labels)
}

/// A cluster of `n_cluster` identical rows predicting `main` with `0.95` and
/// `second` with `0.03`, followed by one row identical except that the
/// `0.03` sits on `odd`. Remaining mass is spread evenly. Labels are `main`.
pub fn dark_knowledge_table(
    classes: usize,
    n_cluster: usize,
    main: usize,
    second: usize,
    odd: usize,
) -> Result<PredictionTable> {
    if classes < 3 || [main, second, odd].iter().any(|&c| c >= classes) || main == second || main == odd || second == odd {
        return Err(Error::Domain("need three distinct classes below K".into()));
    }
    let rest = 0.02 / (classes - 2) as f64;
    let row = |hot: usize| -> Vec<f64> {
        (0..classes)
            .map(|c| match c {
                c if c == main => 0.95,
                c if c == hot => 0.03,
                _ => rest,
            })
            .collect()
    };
    let mut rows = vec![row(second); n_cluster];
    rows.push(row(odd));
    PredictionTable::from_rows(&rows)?.with_labels(vec![main; n_cluster + 1])
}
