mod common;

use common::{random_embedding, random_preds, rng};
use darkviz::confidence::{
    fit_dmm, fit_gmm, fit_kde, fit_kde_with_bandwidth, kept_count, rejection_curve, score, uniform_grid,
    ConfidenceModel, RejectionCurve,
};
use darkviz::{EmbeddingTable, Error, PredictionTable};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

fn blob(seed: u64, n: usize, centre: [f64; 2], sd: f64) -> Vec<[f64; 2]> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            [centre[0] + sd * a, centre[1] + sd * b]
        })
        .collect()
}

fn kde(model: &ConfidenceModel) -> &darkviz::confidence::Kde {
    match model {
        ConfidenceModel::Kde(k) => k,
        _ => unreachable!(),
    }
}

#[test]
fn kde_point_mass_dominates() {
    let emb = EmbeddingTable::new(vec![[0.0, 0.0]; 50]).unwrap();
    let m = fit_kde(&emb).unwrap();
    let k = kde(&m);
    assert_eq!(k.bandwidth, [1e-6, 1e-6]);
    let near = k.log_density([0.0, 0.0]);
    let far = k.log_density([10.0, 0.0]);
    assert!(near - far > 1e6f64.ln());
}

#[test]
fn kde_integrates_to_one() {
    let mut pts = blob(1, 200, [-4.0, 0.0], 0.7);
    pts.extend(blob(2, 200, [4.0, 1.0], 0.7));
    let m = fit_kde(&EmbeddingTable::new(pts).unwrap()).unwrap();
    let k = kde(&m);
    let (lo, hi, steps) = (-12.0, 12.0, 480);
    let h = (hi - lo) / steps as f64;
    let mut total = 0.0;
    for i in 0..steps {
        for j in 0..steps {
            let y = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
            total += k.log_density(y).exp() * h * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-2, "integral {total}");
}

#[test]
fn kde_with_fixed_bandwidth_ignores_duplication() {
    let pts = blob(3, 80, [0.0, 0.0], 1.0);
    let doubled: Vec<[f64; 2]> = pts.iter().chain(&pts).copied().collect();
    let h = [0.4, 0.6];
    let a = fit_kde_with_bandwidth(&EmbeddingTable::new(pts).unwrap(), h).unwrap();
    let b = fit_kde_with_bandwidth(&EmbeddingTable::new(doubled).unwrap(), h).unwrap();
    for y in blob(4, 50, [0.0, 0.0], 2.0) {
        let (da, db) = (kde(&a).log_density(y).exp(), kde(&b).log_density(y).exp());
        assert!((da - db).abs() <= 1e-12 * da.max(1e-300), "{da} vs {db}");
    }
}

#[test]
fn gmm_single_component_is_the_sample_mle() {
    let pts = blob(5, 400, [1.5, -2.0], 0.8);
    let n = pts.len() as f64;
    let mean = [
        pts.iter().map(|p| p[0]).sum::<f64>() / n,
        pts.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let mut cov = [[0.0; 2]; 2];
    for p in &pts {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for a in 0..2 {
            for b in 0..2 {
                cov[a][b] += d[a] * d[b] / n;
            }
        }
    }
    let ConfidenceModel::Gmm(g) = fit_gmm(&EmbeddingTable::new(pts).unwrap(), 1, 0).unwrap() else {
        unreachable!()
    };
    assert_eq!(g.weights, vec![1.0]);
    for d in 0..2 {
        assert!((g.means[0][d] - mean[d]).abs() < 1e-9);
        // within three standard errors of the generating mean
        assert!((g.means[0][d] - [1.5, -2.0][d]).abs() < 3.0 * 0.8 / n.sqrt());
        for e in 0..2 {
            assert!((g.covariances[0][d][e] - cov[d][e]).abs() < 1e-9);
        }
    }
}

fn non_decreasing(ll: &[f64]) -> bool {
    ll.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
}

#[test]
fn gmm_log_likelihood_never_decreases() {
    let mut pts = blob(6, 150, [0.0, 0.0], 1.0);
    pts.extend(blob(7, 150, [3.0, 0.5], 0.6));
    pts.extend(blob(8, 100, [-1.0, 4.0], 0.9));
    let emb = EmbeddingTable::new(pts).unwrap();
    let ConfidenceModel::Gmm(g) = fit_gmm(&emb, 3, 42).unwrap() else { unreachable!() };
    assert!(g.log_likelihood.len() > 1);
    assert!(non_decreasing(&g.log_likelihood), "{:?}", g.log_likelihood);
    assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let scores = score(&ConfidenceModel::Gmm(g), Some(&emb), None).unwrap();
    assert!(scores.iter().all(|s| s.is_finite()));
}

#[test]
fn gmm_with_one_component_per_point_stays_finite() {
    let emb = EmbeddingTable::new(blob(9, 12, [0.0, 0.0], 1.0)).unwrap();
    let m = fit_gmm(&emb, 12, 1).unwrap();
    let ConfidenceModel::Gmm(g) = &m else { unreachable!() };
    for c in &g.covariances {
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        assert!(det.is_finite() && det > 0.0);
    }
    assert!(score(&m, Some(&emb), None).unwrap().iter().all(|s| s.is_finite()));
    assert!(fit_gmm(&emb, 13, 1).is_err());
    assert!(fit_gmm(&emb, 0, 1).is_err());
}

#[test]
fn dmm_on_uniform_rows_has_uniform_mean() {
    let rows = vec![vec![0.25; 4]; 30];
    let preds = PredictionTable::from_rows(&rows).unwrap();
    let ConfidenceModel::Dmm(d) = fit_dmm(&preds, 1, 0).unwrap() else { unreachable!() };
    let a0: f64 = d.concentrations[0].iter().sum();
    for a in &d.concentrations[0] {
        assert!((a / a0 - 0.25).abs() < 1e-6);
    }
}

#[test]
fn dmm_recovers_dirichlet_parameters() {
    let alpha = [2.0, 5.0, 3.0];
    let mut r = rng(77);
    let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let rows: Vec<Vec<f64>> = (0..5000)
        .map(|_| {
            let g: Vec<f64> = gammas.iter().map(|d| d.sample(&mut r)).collect();
            let s: f64 = g.iter().sum();
            g.iter().map(|x| x / s).collect()
        })
        .collect();
    let preds = PredictionTable::from_rows(&rows).unwrap();
    let ConfidenceModel::Dmm(d) = fit_dmm(&preds, 1, 0).unwrap() else { unreachable!() };
    for (got, want) in d.concentrations[0].iter().zip(alpha) {
        assert!((got - want).abs() < 0.1 * want, "{:?}", d.concentrations[0]);
    }
}

#[test]
fn dmm_weights_normalised_and_likelihood_monotone() {
    let mut r = rng(31);
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|i| {
            let hot = i % 3;
            let mut row: Vec<f64> = (0..3).map(|_| r.random_range(0.01..0.2)).collect();
            row[hot] += 1.0;
            let s: f64 = row.iter().sum();
            row.iter().map(|x| x / s).collect()
        })
        .collect();
    let preds = PredictionTable::from_rows(&rows).unwrap();
    let m = fit_dmm(&preds, 3, 5).unwrap();
    let ConfidenceModel::Dmm(d) = &m else { unreachable!() };
    assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(non_decreasing(&d.log_likelihood), "{:?}", d.log_likelihood);
    assert!(d.concentrations.iter().flatten().all(|&a| a >= 1e-3));
    assert!(score(&m, None, Some(&preds)).unwrap().iter().all(|s| s.is_finite()));
}

#[test]
fn fitted_densities_are_positive_at_training_points() {
    let mut r = rng(50);
    let emb = random_embedding(&mut r, 60, 3.0);
    let preds = random_preds(&mut r, 60, 4);
    for m in [
        fit_kde(&emb).unwrap(),
        fit_gmm(&emb, 4, 0).unwrap(),
        fit_dmm(&preds, 4, 0).unwrap(),
    ] {
        let s = score(&m, Some(&emb), Some(&preds)).unwrap();
        assert!(s.iter().all(|x| x.exp() > 0.0), "{:?}", m.kind());
    }
}

#[test]
fn entropy_scores_order_and_relabeling() {
    let rows = vec![vec![1.0, 0.0, 0.0], vec![1.0 / 3.0; 3], vec![0.7, 0.2, 0.1]];
    let preds = PredictionTable::from_rows(&rows).unwrap();
    let s = score(&ConfidenceModel::Entropy, None, Some(&preds)).unwrap();
    assert!(s[0] > s[2] && s[2] > s[1]);
    let relabeled: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
    let t = score(
        &ConfidenceModel::Entropy,
        None,
        Some(&PredictionTable::from_rows(&relabeled).unwrap()),
    )
    .unwrap();
    assert_eq!(s, t);
}

#[test]
fn scores_follow_row_permutations() {
    let mut r = rng(12);
    let emb = random_embedding(&mut r, 40, 2.0);
    let model = fit_kde(&emb).unwrap();
    let perm: Vec<usize> = (0..40).rev().collect();
    let permuted = EmbeddingTable::new(perm.iter().map(|&i| emb.points()[i]).collect()).unwrap();
    let a = score(&model, Some(&emb), None).unwrap();
    let b = score(&model, Some(&permuted), None).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        assert_eq!(a[i], b[j]);
    }
}

#[test]
fn missing_inputs_are_usage_errors() {
    let mut r = rng(13);
    let emb = random_embedding(&mut r, 10, 1.0);
    let preds = random_preds(&mut r, 10, 3);
    let kde = fit_kde(&emb).unwrap();
    let dmm = fit_dmm(&preds, 2, 0).unwrap();
    assert!(matches!(score(&kde, None, Some(&preds)), Err(Error::Usage(_))));
    assert!(matches!(score(&dmm, Some(&emb), None), Err(Error::Usage(_))));
    assert!(matches!(score(&ConfidenceModel::Entropy, Some(&emb), None), Err(Error::Usage(_))));
    let grid = uniform_grid(4);
    assert!(matches!(
        rejection_curve(&[0.0; 10], None, &[0; 10], &grid),
        Err(Error::Usage(_))
    ));
}

#[test]
fn rejection_full_fraction_is_overall_accuracy() {
    let labels = [0, 1, 2, 1, 0, 2, 2, 1];
    let predicted = [0, 1, 1, 1, 2, 2, 0, 1];
    let scores = [0.3, 0.9, 0.1, 0.5, 0.5, 0.7, 0.2, 0.8];
    let c = rejection_curve(&scores, Some(&labels), &predicted, &uniform_grid(8)).unwrap();
    assert_eq!(c.points.last().unwrap().fraction, 1.0);
    assert_eq!(c.accuracy_at(1.0), Some(5.0 / 8.0));
    // top three by score are rows 1, 7, 5: all correct
    assert_eq!(c.accuracy_at(3.0 / 8.0), Some(1.0));
    assert!(c.points.iter().all(|p| (0.0..=1.0).contains(&p.accuracy)));
}

#[test]
fn oracle_scores_give_perfect_kept_sets() {
    let mut r = rng(14);
    let n = 97;
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
    let predicted: Vec<usize> = labels
        .iter()
        .map(|&l| if r.random_bool(0.7) { l } else { (l + 1) % 4 })
        .collect();
    let correct: Vec<f64> = labels
        .iter()
        .zip(&predicted)
        .map(|(l, p)| if l == p { 1.0 } else { 0.0 })
        .collect();
    let overall = correct.iter().sum::<f64>() / n as f64;
    let grid = uniform_grid(50);
    let c = rejection_curve(&correct, Some(&labels), &predicted, &grid).unwrap();
    for p in &c.points {
        if p.fraction <= overall {
            assert_eq!(p.accuracy, 1.0, "fraction {}", p.fraction);
        }
    }
}

#[test]
fn constant_scores_keep_the_row_prefix() {
    let labels = [0, 0, 1, 1, 1, 0, 1, 0, 1, 1];
    let predicted = [0, 0, 0, 1, 0, 0, 1, 1, 1, 1];
    let grid = uniform_grid(10);
    let c = rejection_curve(&[0.5; 10], Some(&labels), &predicted, &grid).unwrap();
    for p in &c.points {
        let kept = kept_count(p.fraction, 10);
        let hits = (0..kept).filter(|&i| labels[i] == predicted[i]).count();
        assert_eq!(p.accuracy, hits as f64 / kept as f64);
    }
}

#[test]
fn kept_count_is_a_ceiling() {
    assert_eq!(kept_count(0.3, 10), 3);
    assert_eq!(kept_count(0.31, 10), 4);
    assert_eq!(kept_count(0.7, 2000), 1400);
    assert_eq!(kept_count(1.0, 7), 7);
    assert_eq!(kept_count(0.01, 7), 1);
}

#[test]
fn rejection_csv_round_trip() {
    let c = rejection_curve(&[0.2, 0.4, 0.1], Some(&[1, 0, 1]), &[1, 1, 1], &uniform_grid(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    c.write_csv(&path).unwrap();
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("fraction,accuracy\n"));
    assert_eq!(RejectionCurve::read_csv(&path).unwrap(), c);
}

#[test]
fn rejects_invalid_grids() {
    let s = [0.1, 0.2];
    for grid in [vec![0.5], vec![0.0, 1.0], vec![0.6, 0.5, 1.0], vec![0.5, 1.5]] {
        assert!(rejection_curve(&s, Some(&[0, 0]), &[0, 0], &grid).is_err(), "{grid:?}");
    }
}
