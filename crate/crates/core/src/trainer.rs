//! Minibatch Adam optimisation of the embedding and student parameters.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    EmbeddingTable, InitMode, PredictionTable, Spd2, Student, StudentParams, TrainConfig,
    TrainMode,
};
use crate::objective::{accumulate, tempered_targets};
use crate::special::argmax;

/// Standard deviation of the jitter added in cluster-centre initialisation.
const CLUSTER_JITTER_SD: f64 = 0.1;

/// Adam moments for one flat parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        debug_assert_eq!(params.len(), self.first_moment.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((x, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub temperature: f64,
    /// Mean per-row loss over the epoch's minibatches.
    pub loss: f64,
    pub acc_teacher: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["epoch", "temperature", "loss", "acc_teacher"])
            .map_err(|e| Error::csv(path, e))?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.temperature.to_string(),
                r.loss.to_string(),
                r.acc_teacher.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut records = Vec::new();
        for rec in r.deserialize() {
            records.push(rec.map_err(|e| Error::csv(path, e))?);
        }
        Ok(Self { records })
    }
}

/// Piecewise-linear temperature at `epoch`, clamped to the end values.
pub fn anneal_temperature(schedule: &[(f64, f64)], epoch: f64) -> f64 {
    let (Some(first), Some(last)) = (schedule.first(), schedule.last()) else {
        return 1.0;
    };
    if epoch <= first.0 {
        return first.1.max(1.0);
    }
    if epoch >= last.0 {
        return last.1.max(1.0);
    }
    let seg = schedule
        .windows(2)
        .find(|w| epoch <= w[1].0)
        .expect("epoch lies inside the schedule");
    let (e0, t0) = seg[0];
    let (e1, t1) = seg[1];
    (t0 + (t1 - t0) * (epoch - e0) / (e1 - e0)).max(1.0)
}

/// Parses `"1:20,500:1"` into schedule breakpoints.
pub fn parse_schedule(s: &str) -> Result<Vec<(f64, f64)>> {
    let schedule = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (e, t) = p
                .split_once(':')
                .ok_or_else(|| Error::Usage(format!("bad schedule breakpoint {p:?}")))?;
            let e: f64 = e
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad epoch in {p:?}")))?;
            let t: f64 = t
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad temperature in {p:?}")))?;
            Ok((e, t))
        })
        .collect::<Result<Vec<_>>>()?;
    crate::model::validate_schedule(&schedule)?;
    Ok(schedule)
}

/// Initial embedding and student parameters.
///
/// Means and embeddings are drawn from one seeded stream: means first, then
/// the per-row embedding noise.
pub fn initialize(preds: &PredictionTable, cfg: &TrainConfig) -> Result<(EmbeddingTable, StudentParams)> {
    let k = preds.n_classes();
    if k < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let means: Vec<[f64; 2]> = (0..k).map(|_| [normal(), normal()]).collect();
    let scale = Spd2::scaled_identity((k as f64).ln().sqrt());
    let params = StudentParams {
        means,
        scales: vec![scale; k],
        dof: cfg.dof,
        prior_logits: vec![0.0; k],
    };
    let points = match cfg.init {
        InitMode::Random => (0..preds.n_rows()).map(|_| [normal(), normal()]).collect(),
        InitMode::ClusterCenter => preds
            .rows()
            .map(|row| {
                let c = params.means[argmax(row)];
                [
                    c[0] + CLUSTER_JITTER_SD * normal(),
                    c[1] + CLUSTER_JITTER_SD * normal(),
                ]
            })
            .collect(),
    };
    Ok((EmbeddingTable::new(points)?, params))
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Fraction of rows whose student argmax equals the teacher argmax.
pub(crate) fn teacher_agreement(student: &Student, preds: &PredictionTable, points: &[[f64; 2]]) -> f64 {
    let k = preds.n_classes();
    let mut lj = vec![0.0; k];
    let hits = preds
        .rows()
        .zip(points)
        .filter(|(row, &y)| {
            student.log_joint(y, &mut lj);
            argmax(&lj) == argmax(row)
        })
        .count();
    hits as f64 / preds.n_rows().max(1) as f64
}

struct Groups {
    embed: bool,
    student: bool,
}

fn groups_for(mode: TrainMode, epoch: usize) -> Groups {
    match mode {
        TrainMode::Joint => Groups {
            embed: true,
            student: true,
        },
        TrainMode::Coordinate => Groups {
            embed: epoch % 2 == 0,
            student: epoch % 2 == 1,
        },
    }
}

/// Runs `cfg.epochs` epochs of minibatch Adam from [`initialize`].
pub fn train(
    preds: &PredictionTable,
    cfg: &TrainConfig,
) -> Result<(EmbeddingTable, StudentParams, TrainTrace)> {
    cfg.validate()?;
    let (emb, params) = initialize(preds, cfg)?;
    train_from(preds, cfg, emb, params)
}

/// Like [`train`], starting from the given embedding and parameters.
pub fn train_from(
    preds: &PredictionTable,
    cfg: &TrainConfig,
    mut emb: EmbeddingTable,
    mut params: StudentParams,
) -> Result<(EmbeddingTable, StudentParams, TrainTrace)> {
    cfg.validate()?;
    emb.check_aligned(preds)?;
    params.validate()?;
    let n = preds.n_rows();
    let k = preds.n_classes();
    if cfg.batch_size > n {
        return Err(Error::Domain(format!(
            "batch size {} exceeds the {n} rows",
            cfg.batch_size
        )));
    }

    let mut adam_embed = AdamState::new(2 * n);
    let mut adam_means = AdamState::new(2 * k);
    let mut adam_prior = AdamState::new(k);
    let mut grad_embed = vec![0.0; 2 * n];
    let mut trace = TrainTrace::default();

    for epoch in 1..=cfg.epochs {
        let temperature = anneal_temperature(&cfg.temperature_schedule, epoch as f64);
        let targets = tempered_targets(preds, temperature);
        let order = epoch_order(n, cfg.seed, epoch);
        let groups = groups_for(cfg.mode, epoch);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let student = Student::new_unchecked(&params);
            let terms = accumulate(&student, &targets, emb.points(), batch, !cfg.deterministic);
            if !terms.loss_sum.is_finite() {
                let pos = terms
                    .per_row_loss
                    .iter()
                    .position(|l| !l.is_finite())
                    .unwrap_or(0);
                let row = batch[pos];
                log::error!(
                    "loss is {} at row {row} (id {:?}) in epoch {epoch}",
                    terms.per_row_loss[pos],
                    preds.row_ids()[row]
                );
                return Err(Error::NonFiniteLoss { epoch, row });
            }
            epoch_loss += terms.loss_sum;

            if groups.embed {
                grad_embed.iter_mut().for_each(|g| *g = 0.0);
                for (&i, g) in batch.iter().zip(&terms.d_batch) {
                    grad_embed[2 * i] += g[0];
                    grad_embed[2 * i + 1] += g[1];
                }
                let flat = emb.points_mut().as_flattened_mut();
                adam_embed.update(flat, &grad_embed, cfg.lr_embed);
            }
            if groups.student {
                let grad_means: Vec<f64> = terms.d_means.iter().flatten().copied().collect();
                adam_means.update(params.means.as_flattened_mut(), &grad_means, cfg.lr_means);
                adam_prior.update(&mut params.prior_logits, &terms.d_prior, cfg.lr_prior);
            }
        }

        let student = Student::new_unchecked(&params);
        trace.records.push(EpochRecord {
            epoch,
            temperature,
            loss: epoch_loss / n as f64,
            acc_teacher: teacher_agreement(&student, preds, emb.points()),
        });
        if epoch % 100 == 0 {
            log::debug!(
                "epoch {epoch}: T={temperature:.3} loss={:.5} acc_teacher={:.4}",
                epoch_loss / n as f64,
                trace.records[epoch - 1].acc_teacher
            );
        }
    }
    Ok((emb, params, trace))
}
