//! Iso-curves of the student marginal `Σ_k prior_k · t(y; μ_k, Σ_k, ν)` by
//! marching squares, with crossings refined by bisection along cell edges.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EmbeddingTable, Student, StudentParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BBox {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        let ok = (0..2).all(|d| min[d].is_finite() && max[d].is_finite() && min[d] < max[d]);
        if !ok {
            return Err(Error::Domain(format!("invalid bounding box {min:?}..{max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|d| p[d] >= self.min[d] && p[d] <= self.max[d])
    }

    /// Smallest box holding every embedded point and mean, padded on each
    /// side by `margin` times its extent (at least `margin` in absolute terms).
    pub fn around(emb: &EmbeddingTable, params: &StudentParams, margin: f64) -> Result<Self> {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in emb.points().iter().chain(&params.means) {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        for d in 0..2 {
            let pad = ((max[d] - min[d]) * margin).max(margin);
            min[d] -= pad;
            max[d] += pad;
        }
        Self::new(min, max)
    }

    /// Grows the box by half its extent per side until the marginal density
    /// sampled along its border is below `level` (at most 20 rounds).
    pub fn grown_to_level(self, params: &StudentParams, level: f64) -> Result<Self> {
        let student = Student::new(params)?;
        let mut b = self;
        for _ in 0..20 {
            let border_max = (0..=64)
                .flat_map(|i| {
                    let t = i as f64 / 64.0;
                    let x = b.min[0] + t * (b.max[0] - b.min[0]);
                    let y = b.min[1] + t * (b.max[1] - b.min[1]);
                    [[x, b.min[1]], [x, b.max[1]], [b.min[0], y], [b.max[0], y]]
                })
                .map(|p| student.log_marginal(p).exp())
                .fold(0.0, f64::max);
            if border_max < level {
                break;
            }
            let pad = [0.5 * (b.max[0] - b.min[0]), 0.5 * (b.max[1] - b.min[1])];
            b = Self::new([b.min[0] - pad[0], b.min[1] - pad[1]], [b.max[0] + pad[0], b.max[1] + pad[1]])?;
        }
        Ok(b)
    }
}

/// Polylines at one density level. Closed loops repeat their first point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourSet {
    pub level: f64,
    #[serde(rename = "paths")]
    pub polylines: Vec<Vec<[f64; 2]>>,
}

/// Absolute shoelace area of a polyline read as a closed polygon.
pub fn polygon_area(path: &[[f64; 2]]) -> f64 {
    let n = path.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let a = path[i];
            let b = path[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// Edge ids: horizontal edges are even, vertical edges odd.
fn h_edge(ix: usize, iy: usize, nv: usize) -> u64 {
    2 * (iy * nv + ix) as u64
}

fn v_edge(ix: usize, iy: usize, nv: usize) -> u64 {
    2 * (iy * nv + ix) as u64 + 1
}

/// Marching squares over a `resolution × resolution` cell grid.
pub fn trace_contour(params: &StudentParams, level: f64, bbox: BBox, resolution: usize) -> Result<ContourSet> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::Domain(format!("contour level must be positive, got {level}")));
    }
    if resolution < 2 {
        return Err(Error::Domain(format!("resolution must be at least 2, got {resolution}")));
    }
    let student = Student::new(params)?;
    if let Some(m) = params.means.iter().find(|m| !bbox.contains(**m)) {
        return Err(Error::Domain(format!("bounding box does not contain mean {m:?}")));
    }
    let nv = resolution + 1;
    let step = [
        (bbox.max[0] - bbox.min[0]) / resolution as f64,
        (bbox.max[1] - bbox.min[1]) / resolution as f64,
    ];
    let at = |ix: usize, iy: usize| [bbox.min[0] + ix as f64 * step[0], bbox.min[1] + iy as f64 * step[1]];
    let density = |y: [f64; 2]| student.log_marginal(y).exp();

    let field: Vec<f64> = (0..nv * nv)
        .into_par_iter()
        .map(|i| density(at(i % nv, i / nv)) - level)
        .collect();
    let g = |ix: usize, iy: usize| field[iy * nv + ix];

    let peak = field
        .iter()
        .map(|v| v + level)
        .chain(params.means.iter().map(|&m| density(m)))
        .fold(0.0, f64::max);
    if level > peak {
        log::warn!("contour level {level:e} exceeds the peak density {peak:e}; no contour");
        return Ok(ContourSet {
            level,
            polylines: Vec::new(),
        });
    }

    let mut segments: Vec<[u64; 2]> = Vec::new();
    let mut crossings: HashMap<u64, [[f64; 2]; 2]> = HashMap::new();
    for cy in 0..resolution {
        for cx in 0..resolution {
            let corners = [(cx, cy), (cx + 1, cy), (cx + 1, cy + 1), (cx, cy + 1)];
            let inside: [bool; 4] = corners.map(|(x, y)| g(x, y) > 0.0);
            // Edge e_i joins corner i to corner i+1 (mod 4).
            let edges = [
                h_edge(cx, cy, nv),
                v_edge(cx + 1, cy, nv),
                h_edge(cx, cy + 1, nv),
                v_edge(cx, cy, nv),
            ];
            let crossed: Vec<usize> = (0..4).filter(|&e| inside[e] != inside[(e + 1) % 4]).collect();
            for &e in &crossed {
                let (a, b) = (corners[e], corners[(e + 1) % 4]);
                crossings.entry(edges[e]).or_insert([at(a.0, a.1), at(b.0, b.1)]);
            }
            match crossed.len() {
                2 => segments.push([edges[crossed[0]], edges[crossed[1]]]),
                4 => {
                    // Saddle: cut off the corners whose side differs from the centre.
                    let centre = density([
                        bbox.min[0] + (cx as f64 + 0.5) * step[0],
                        bbox.min[1] + (cy as f64 + 0.5) * step[1],
                    ]) > level;
                    for c in 0..4 {
                        if inside[c] != centre {
                            segments.push([edges[(c + 3) % 4], edges[c]]);
                        }
                    }
                }
                _ => {}
            }
        }
    }

    let points: HashMap<u64, [f64; 2]> = crossings
        .into_par_iter()
        .map(|(id, [a, b])| (id, bisect(&density, level, a, b)))
        .collect();
    let polylines = join_segments(&segments)
        .into_iter()
        .map(|ids| ids.iter().map(|id| points[id]).collect())
        .collect();
    Ok(ContourSet { level, polylines })
}

/// Root of `f − level` on the segment `a..b`, where the sign differs at the ends.
fn bisect(f: &impl Fn([f64; 2]) -> f64, level: f64, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let lerp = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let inside_a = f(a) > level;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if (f(lerp(mid)) > level) == inside_a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lerp(0.5 * (lo + hi))
}

/// Chains segments sharing an edge id into maximal paths, in first-seen order.
fn join_segments(segments: &[[u64; 2]]) -> Vec<Vec<u64>> {
    let mut by_edge: HashMap<u64, Vec<usize>> = HashMap::new();
    for (s, seg) in segments.iter().enumerate() {
        for &e in seg {
            by_edge.entry(e).or_default().push(s);
        }
    }
    let mut used = vec![false; segments.len()];
    let next = |edge: u64, used: &[bool]| -> Option<usize> {
        by_edge[&edge].iter().copied().find(|&s| !used[s])
    };
    let mut paths = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut path = vec![segments[start][0], segments[start][1]];
        let mut closed = false;
        while let Some(s) = next(*path.last().expect("non-empty"), &used) {
            used[s] = true;
            let tail = *path.last().expect("non-empty");
            let other = if segments[s][0] == tail { segments[s][1] } else { segments[s][0] };
            path.push(other);
            if other == path[0] {
                closed = true;
                break;
            }
        }
        if !closed {
            let mut head = Vec::new();
            let mut cur = path[0];
            while let Some(s) = next(cur, &used) {
                used[s] = true;
                cur = if segments[s][0] == cur { segments[s][1] } else { segments[s][0] };
                head.push(cur);
            }
            head.reverse();
            head.extend(path);
            path = head;
        }
        paths.push(path);
    }
    paths
}
