//! One PASS/FAIL line per primary criterion. Exits nonzero if any fail.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{random_embedding, random_params, random_preds, rng, spearman, worst_fd_error};
use darkviz::confidence::{fit_kde, rejection_curve, score, uniform_grid};
use darkviz::fidelity::{compression_quality, jsd, local_fidelity, student_predictions};
use darkviz::model::predictive_entropy;
use darkviz::svd::fit_svd;
use darkviz::synth::{dark_knowledge_table, synth_teacher, SynthConfig};
use darkviz::trainer::train;
use darkviz::{EmbeddingTable, PredictionTable, StudentParams, TrainConfig, TrainMode};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

struct DeskRun {
    preds: PredictionTable,
    emb: EmbeddingTable,
    params: StudentParams,
    elapsed: Duration,
}

fn desk_run(mode: TrainMode) -> DeskRun {
    let preds = synth_teacher(&SynthConfig {
        classes: 10,
        n: 2000,
        seed: 0,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig { mode, ..TrainConfig::default() };
    let t = Instant::now();
    let (emb, params, _) = single_threaded(|| train(&preds, &cfg).unwrap());
    DeskRun {
        preds,
        emb,
        params,
        elapsed: t.elapsed(),
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut r = rng(11);
    let (p, e, s) = (random_preds(&mut r, 16, 5), random_embedding(&mut r, 16, 2.5), random_params(&mut r, 5, false));
    let a = worst_fd_error(&p, &e, &s, 1e-5);
    let mut r = rng(12);
    let (p, e, s) = (random_preds(&mut r, 8, 3), random_embedding(&mut r, 8, 2.5), random_params(&mut r, 3, true));
    let b = worst_fd_error(&p, &e, &s, 1e-5);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        a < 1e-4 && b < 1e-4 && secs < 5.0,
        format!("worst rel err N16K5 {a:.2e}, N8K3 {b:.2e} (< 1e-4); {secs:.2}s (< 5s)"),
    )
}

fn desk_scale(run: &DeskRun) -> Outcome {
    let q = compression_quality(&run.preds, &run.emb, &run.params).unwrap();
    let secs = run.elapsed.as_secs_f64();
    outcome(
        q.acc_teacher >= 0.98 && q.kl_sym_final <= 0.15 && secs < 300.0,
        format!(
            "acc_teacher {:.4} (>= 0.98), kl_sym_final {:.4} (<= 0.15), {secs:.1}s single-threaded (< 300s)",
            q.acc_teacher, q.kl_sym_final
        ),
    )
}

fn coordinate_vs_joint(joint: &DeskRun, coord: &DeskRun) -> Outcome {
    let qj = compression_quality(&joint.preds, &joint.emb, &joint.params).unwrap();
    let qc = compression_quality(&coord.preds, &coord.emb, &coord.params).unwrap();
    let ratio = coord.elapsed.as_secs_f64() / joint.elapsed.as_secs_f64();
    outcome(
        qj.acc_teacher >= 0.98 && qc.acc_teacher >= 0.98 && ratio <= 2.5,
        format!(
            "acc_teacher joint {:.4}, coordinate {:.4} (>= 0.98); per-epoch time ratio {ratio:.2} (<= 2.5)",
            qj.acc_teacher, qc.acc_teacher
        ),
    )
}

fn svd_variant() -> Outcome {
    let (n, k) = (200, 10);
    let mut worst_tail = 0.0f64;
    let mut slowest = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(500 + seed);
        let l: Vec<f64> = (0..n * k).map(|_| StandardNormal.sample(&mut r)).collect();
        let t = Instant::now();
        let m = fit_svd(&l, n, k).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        let s = DMatrix::from_row_slice(n, k, &l).singular_values();
        let mut s: Vec<f64> = s.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = s[2..].iter().map(|x| x * x).sum();
        worst_tail = worst_tail.max((m.residual.powi(2) - tail).abs() / tail);
    }

    let mut r = rng(600);
    let u: Vec<f64> = (0..2 * n).map(|_| StandardNormal.sample(&mut r)).collect();
    let v: Vec<f64> = (0..2 * k).map(|_| StandardNormal.sample(&mut r)).collect();
    let l: Vec<f64> = (0..n)
        .flat_map(|i| (0..k).map(move |c| (i, c)))
        .map(|(i, c)| 4.0 * u[2 * i] * v[2 * c] + u[2 * i + 1] * v[2 * c + 1])
        .collect();
    let m = fit_svd(&l, n, k).unwrap();
    let scale = l.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut recon = 0.0f64;
    for i in 0..n {
        for c in 0..k {
            let y = m.embed[i][0] * m.weights[0][c] + m.embed[i][1] * m.weights[1][c];
            recon = recon.max((y - l[i * k + c]).abs() / scale);
        }
    }
    outcome(
        worst_tail < 1e-6 && recon < 1e-8 && slowest < 1.0,
        format!(
            "worst tail rel err {worst_tail:.2e} (< 1e-6), rank-2 reconstruction {recon:.2e} (< 1e-8), slowest {slowest:.3}s (< 1s)"
        ),
    )
}

fn cluster_preservation(run: &DeskRun) -> Outcome {
    let teacher = run.preds.argmax();
    let dist: Vec<f64> = run
        .emb
        .points()
        .iter()
        .zip(&teacher)
        .map(|(y, &c)| {
            let m = run.params.means[c];
            (y[0] - m[0]).hypot(y[1] - m[1])
        })
        .collect();
    let entropy: Vec<f64> = run.preds.rows().map(predictive_entropy).collect();
    let rho = spearman(&dist, &entropy);
    outcome(rho > 0.3, format!("Spearman rho {rho:.4} (> 0.3)"))
}

fn dark_knowledge() -> Outcome {
    // cat = 3, dog = 5, airplane = 0
    let preds = dark_knowledge_table(10, 500, 3, 5, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: preds.n_rows(),
        lr_embed: 1e-2,
        ..TrainConfig::default()
    };
    let (emb, _, _) = train(&preds, &cfg).unwrap();
    let kde = fit_kde(&emb).unwrap();
    let s = score(&kde, Some(&emb), None).unwrap();
    let mut cluster = s[..500].to_vec();
    cluster.sort_by(f64::total_cmp);
    let p5 = cluster[25];
    let odd = s[500];
    let h_odd = predictive_entropy(preds.row(500));
    let h_equal = (0..500).all(|i| predictive_entropy(preds.row(i)).to_bits() == h_odd.to_bits());
    outcome(
        odd < p5 && h_equal,
        format!("anomalous log-density {odd:.3} vs cluster 5th percentile {p5:.3}; entropies identical: {h_equal}"),
    )
}

fn rejection(run: &DeskRun) -> Outcome {
    let labels = run.preds.labels().unwrap();
    let predicted = student_predictions(&run.emb, &run.params).unwrap();
    let q = compression_quality(&run.preds, &run.emb, &run.params).unwrap();
    let grid = uniform_grid(20);
    let kde = fit_kde(&run.emb).unwrap();
    let scores = score(&kde, Some(&run.emb), None).unwrap();
    let curve = rejection_curve(&scores, Some(labels), &predicted, &grid).unwrap();
    let a90 = curve.accuracy_at(0.9).unwrap();
    let a100 = curve.accuracy_at(1.0).unwrap();
    let ground = q.acc_ground.unwrap();

    let oracle: Vec<f64> = labels
        .iter()
        .zip(&predicted)
        .map(|(l, p)| f64::from(u8::from(l == p)))
        .collect();
    let oc = rejection_curve(&oracle, Some(labels), &predicted, &grid).unwrap();
    let oracle_ok = oc.points.iter().filter(|p| p.fraction <= ground).all(|p| p.accuracy == 1.0);
    outcome(
        a90 >= a100 && a100 == ground && oracle_ok,
        format!("acc@90% {a90:.4} >= acc@100% {a100:.4}; acc@100% == acc_ground {ground:.4}: {}; oracle curve: {oracle_ok}", a100 == ground),
    )
}

fn fidelity() -> Outcome {
    let mut r = rng(71);
    let n = 150;
    let emb = random_embedding(&mut r, n, 3.0);
    let params = random_params(&mut r, 6, true);
    let pts = emb.points();
    let q: Vec<Vec<f64>> = pts.iter().map(|&y| darkviz::student_posterior(y, &params).unwrap()).collect();
    let mut worst = 0.0f64;
    for k in [1, 5, 10] {
        let mut total = 0.0;
        for i in 0..n {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((pts[j][0] - pts[i][0]).powi(2) + (pts[j][1] - pts[i][1]).powi(2), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            total += d[..k].iter().map(|&(_, j)| jsd(&q[i], &q[j])).sum::<f64>() / k as f64;
        }
        worst = worst.max((local_fidelity(&emb, &params, k).unwrap() - total / n as f64).abs());
    }
    let same = EmbeddingTable::new(vec![[1.0, 2.0]; 20]).unwrap();
    let zero = local_fidelity(&same, &params, 5).unwrap();
    let endpoint = (jsd(&[1.0, 0.0], &[0.0, 1.0]) - 2f64.ln().sqrt()).abs();
    outcome(
        worst < 1e-12 && zero == 0.0 && endpoint < 1e-12,
        format!("oracle gap {worst:.1e} (< 1e-12), identical embedding {zero}, sqrt(ln 2) gap {endpoint:.1e}"),
    )
}

fn pipeline(dir: &Path, threads: &str) -> Vec<Vec<u8>> {
    let steps: [&[&str]; 5] = [
        &["synth", "--classes", "6", "--n", "600", "--outliers", "0.02"],
        &["fit", "--epochs", "40", "--batch-size", "200", "--lr-embed", "1e-3"],
        &["confidence", "--steps", "10"],
        &["metrics"],
        &["export"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_darkviz"))
            .args(["--quiet", "--deterministic", "--seed", "17", "--threads", threads, "--run-dir"])
            .arg(dir)
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    ["embedding.csv", "student.json", "artifact.json"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

fn determinism() -> Outcome {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let a = pipeline(dirs[0].path(), "4");
    let b = pipeline(dirs[1].path(), "4");
    let c = pipeline(dirs[2].path(), "1");
    outcome(
        a == b && a == c,
        format!("repeat run identical: {}; 1 vs 4 threads identical: {}", a == b, a == c),
    )
}

fn main() {
    let joint = desk_run(TrainMode::Joint);
    let coord = desk_run(TrainMode::Coordinate);
    let checks: Vec<(&str, Outcome)> = vec![
        ("gradient correctness", gradients()),
        ("desk-scale distillation", desk_scale(&joint)),
        ("coordinate vs joint", coordinate_vs_joint(&joint, &coord)),
        ("svd variant", svd_variant()),
        ("cluster preservation", cluster_preservation(&joint)),
        ("dark-knowledge confidence", dark_knowledge()),
        ("rejection curves", rejection(&joint)),
        ("local fidelity", fidelity()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, o) in &checks {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
