use std::f64::consts::PI;

use darkviz::contour::{polygon_area, trace_contour, BBox, ContourSet};
use darkviz::model::t_log_density;
use darkviz::{EmbeddingTable, Spd2, StudentParams};

fn single() -> StudentParams {
    StudentParams {
        means: vec![[0.5, -0.25]],
        scales: vec![Spd2::scaled_identity(1.0)],
        dof: 2.0,
        prior_logits: vec![0.0],
    }
}

/// Density of the unit-scale bivariate t with ν = 2 at radius `r`.
fn radial_density(r: f64) -> f64 {
    (1.0 + r * r / 2.0).powi(-2) / (2.0 * PI)
}

fn only_loop(set: &ContourSet) -> &[[f64; 2]] {
    assert_eq!(set.polylines.len(), 1, "expected one loop");
    let l = &set.polylines[0];
    assert_eq!(l.first(), l.last(), "loop is not closed");
    l
}

#[test]
fn single_component_gives_a_circle() {
    let params = single();
    let level = radial_density(2.0);
    let bbox = BBox::new([-4.0, -4.0], [4.0, 4.0]).unwrap();
    let set = trace_contour(&params, level, bbox, 200).unwrap();
    assert_eq!(set.level, level);
    let l = only_loop(&set);
    let radii: Vec<f64> = l
        .iter()
        .map(|p| (p[0] - 0.5).hypot(p[1] + 0.25))
        .collect();
    let lo = radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = radii.iter().cloned().fold(0.0, f64::max);
    assert!((hi - lo) / 2.0 < 0.02, "radii {lo}..{hi}");
    assert!((lo - 2.0).abs() < 0.02 && (hi - 2.0).abs() < 0.02);
    let area = polygon_area(&l[..l.len() - 1]);
    assert!((area - 4.0 * PI).abs() < 0.01 * 4.0 * PI, "area {area}");
}

fn marginal(y: [f64; 2], params: &StudentParams) -> f64 {
    let prior = params.prior();
    (0..params.means.len())
        .map(|c| prior[c] * t_log_density(y, params.means[c], &params.scales[c], params.dof).unwrap().exp())
        .sum()
}

#[test]
fn vertices_lie_on_the_level() {
    let params = StudentParams {
        means: vec![[-2.0, 0.0], [2.0, 0.5], [0.0, 3.0]],
        scales: vec![
            Spd2([[1.2, 0.3], [0.3, 0.8]]),
            Spd2::scaled_identity(0.9),
            Spd2([[0.6, -0.2], [-0.2, 1.5]]),
        ],
        dof: 2.0,
        prior_logits: vec![0.2, -0.1, 0.0],
    };
    let level = 0.01;
    let bbox = BBox::new([-8.0, -8.0], [8.0, 10.0]).unwrap();
    let set = trace_contour(&params, level, bbox, 150).unwrap();
    assert!(!set.polylines.is_empty());
    for p in set.polylines.iter().flatten() {
        let d = marginal(*p, &params);
        assert!((d - level).abs() < 0.05 * level, "{p:?}: {d}");
    }
}

#[test]
fn refining_the_grid_barely_moves_the_area() {
    let params = StudentParams {
        means: vec![[-1.5, 0.0], [1.5, 0.0]],
        scales: vec![Spd2([[1.0, 0.4], [0.4, 0.7]]), Spd2::scaled_identity(1.3)],
        dof: 2.0,
        prior_logits: vec![0.0, 0.5],
    };
    let bbox = BBox::new([-7.0, -6.0], [7.0, 6.0]).unwrap();
    let area = |res| {
        let set = trace_contour(&params, 0.02, bbox, res).unwrap();
        set.polylines
            .iter()
            .map(|l| polygon_area(&l[..l.len() - 1]))
            .sum::<f64>()
    };
    let (a, b) = (area(100), area(200));
    assert!(a > 0.0);
    assert!((a - b).abs() < 0.01 * b, "{a} vs {b}");
}

#[test]
fn level_above_peak_is_empty() {
    let params = single();
    let bbox = BBox::new([-3.0, -3.0], [3.0, 3.0]).unwrap();
    let set = trace_contour(&params, 1.0, bbox, 50).unwrap();
    assert!(set.polylines.is_empty());
}

#[test]
fn bad_arguments_are_rejected() {
    let params = single();
    let bbox = BBox::new([-3.0, -3.0], [3.0, 3.0]).unwrap();
    assert!(trace_contour(&params, 0.0, bbox, 50).is_err());
    assert!(trace_contour(&params, -1.0, bbox, 50).is_err());
    assert!(trace_contour(&params, 0.01, bbox, 1).is_err());
    let elsewhere = BBox::new([5.0, 5.0], [6.0, 6.0]).unwrap();
    assert!(trace_contour(&params, 0.01, elsewhere, 50).is_err());
    assert!(BBox::new([0.0, 0.0], [0.0, 1.0]).is_err());
}

#[test]
fn grown_box_holds_the_whole_level_set() {
    let params = single();
    let emb = EmbeddingTable::new(vec![[0.5, -0.25], [0.6, -0.2]]).unwrap();
    let tight = BBox::around(&emb, &params, 0.1).unwrap();
    let level = radial_density(3.0);
    let grown = tight.grown_to_level(&params, level).unwrap();
    assert!(grown.contains([3.6, -0.25]) && grown.contains([-2.6, -0.25]));
    let set = trace_contour(&params, level, grown, 200).unwrap();
    only_loop(&set);
}

#[test]
fn serialises_with_paths_key() {
    let set = ContourSet {
        level: 0.5,
        polylines: vec![vec![[0.0, 1.0], [1.0, 0.0]]],
    };
    let v = serde_json::to_value(&set).unwrap();
    assert_eq!(v["paths"][0][1][0], 1.0);
    assert_eq!(serde_json::from_value::<ContourSet>(v).unwrap(), set);
}
