//! Vertex/facet conversion for low-dimensional point sets and halfspace systems.

use nalgebra::{DMatrix, DVector};

use super::{DEDUP_TOL, FACET_TOL};

/// Facet description of a convex hull together with its extreme points.
#[derive(Debug, Clone)]
pub(crate) struct Hull {
    pub normals: Vec<DVector<f64>>,
    pub offsets: Vec<f64>,
    pub vertices: Vec<DVector<f64>>,
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Removes points within `DEDUP_TOL` (max-norm) of an earlier point.
pub(crate) fn dedup_points(points: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut sorted: Vec<&DVector<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(points.len());
    let mut window_start = 0;
    for p in sorted {
        while window_start < out.len() && out[window_start][0] < p[0] - DEDUP_TOL {
            window_start += 1;
        }
        if !out[window_start..]
            .iter()
            .any(|q| max_abs_diff(p, q) <= DEDUP_TOL)
        {
            out.push(p.clone());
        }
    }
    out
}

/// Convex hull of a nonempty point set in ambient dimension `dim`.
///
/// The hull may be lower-dimensional; its affine hull is then encoded by pairs of
/// opposite facets. Returned normals have unit length.
pub(crate) fn convex_hull(dim: usize, points: &[DVector<f64>]) -> Hull {
    debug_assert!(!points.is_empty());
    let n = points.len() as f64;
    let centroid = points.iter().fold(DVector::zeros(dim), |acc, p| acc + p) / n;

    let centered = DMatrix::from_fn(points.len(), dim, |i, j| points[i][j] - centroid[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let directions: Vec<DVector<f64>> = (0..v_t.nrows())
        .map(|i| v_t.row(i).transpose().normalize())
        .collect();

    // Rank by geometric extent rather than by singular value, so the threshold
    // does not depend on the number of points.
    let (mut span, mut flat): (Vec<DVector<f64>>, Vec<DVector<f64>>) = (Vec::new(), Vec::new());
    for d in directions {
        let (lo, hi) = extent(points, &d);
        if hi - lo > DEDUP_TOL {
            span.push(d);
        } else {
            flat.push(d);
        }
    }
    // svd may return fewer than `dim` directions when there are few points.
    if span.len() + flat.len() < dim {
        flat.extend(orthogonal_complement(dim, &span, &flat));
    }

    let mut normals = Vec::new();
    let mut offsets = Vec::new();
    for d in &flat {
        let (lo, hi) = extent(points, d);
        normals.push(d.clone());
        offsets.push(hi);
        normals.push(-d.clone());
        offsets.push(-lo);
    }

    let rank = span.len();
    let basis = if rank > 0 {
        DMatrix::from_columns(&span)
    } else {
        DMatrix::zeros(dim, 0)
    };
    let projected: Vec<DVector<f64>> = points
        .iter()
        .map(|p| basis.transpose() * (p - &centroid))
        .collect();

    let (local_normals, local_vertices) = match rank {
        0 => (Vec::new(), vec![DVector::zeros(0)]),
        1 => hull_1d(&projected),
        2 => hull_2d(&projected),
        _ => hull_nd(rank, &projected),
    };

    let vertices: Vec<DVector<f64>> = local_vertices
        .iter()
        .map(|y| &centroid + &basis * y)
        .collect();
    for ln in local_normals {
        let normal = (&basis * ln).normalize();
        // Offset from the extreme points themselves keeps every input point inside
        // even when the normal carries rounding error.
        let offset = points
            .iter()
            .map(|p| normal.dot(p))
            .fold(f64::NEG_INFINITY, f64::max);
        normals.push(normal);
        offsets.push(offset);
    }
    Hull {
        normals,
        offsets,
        vertices,
    }
}

fn extent(points: &[DVector<f64>], d: &DVector<f64>) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let v = d.dot(p);
        (lo.min(v), hi.max(v))
    })
}

fn orthogonal_complement(
    dim: usize,
    a: &[DVector<f64>],
    b: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = a.iter().chain(b.iter()).cloned().collect();
    let mut extra = Vec::new();
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        for q in &basis {
            let c = q.dot(&e);
            e -= q * c;
        }
        if e.norm() > 1e-6 {
            let e = e.normalize();
            basis.push(e.clone());
            extra.push(e);
        }
        if basis.len() == dim {
            break;
        }
    }
    extra
}

fn hull_1d(points: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo = lo.min(p[0]);
        hi = hi.max(p[0]);
    }
    (
        vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        vec![DVector::from_element(1, lo), DVector::from_element(1, hi)],
    )
}

fn cross(o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; returns outward edge normals and counter-clockwise vertices.
fn hull_2d(points: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() <= DEDUP_TOL && (a[1] - b[1]).abs() <= DEDUP_TOL);

    // Pop the middle point when it lies within a tiny distance of the chord.
    let keeps_turn = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        let chord = ((b[0] - o[0]).powi(2) + (b[1] - o[1]).powi(2)).sqrt();
        cross(o, a, b) > 1e-11 * chord
    };
    let mut chain: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for p in pts.iter() {
        while chain.len() >= 2 && !keeps_turn(&chain[chain.len() - 2], &chain[chain.len() - 1], p) {
            chain.pop();
        }
        chain.push(*p);
    }
    let lower_len = chain.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while chain.len() >= lower_len
            && !keeps_turn(&chain[chain.len() - 2], &chain[chain.len() - 1], p)
        {
            chain.pop();
        }
        chain.push(*p);
    }
    chain.pop();

    // Merge near-coincident neighbours left over from the tolerance tests.
    let mut verts: Vec<[f64; 2]> = Vec::with_capacity(chain.len());
    for p in chain {
        if verts
            .last()
            .is_none_or(|q| (p[0] - q[0]).abs() > DEDUP_TOL || (p[1] - q[1]).abs() > DEDUP_TOL)
        {
            verts.push(p);
        }
    }
    while verts.len() > 1 {
        let (f, l) = (verts[0], verts[verts.len() - 1]);
        if (f[0] - l[0]).abs() <= DEDUP_TOL && (f[1] - l[1]).abs() <= DEDUP_TOL {
            verts.pop();
        } else {
            break;
        }
    }

    let m = verts.len();
    let mut normals = Vec::with_capacity(m);
    for i in 0..m {
        let a = verts[i];
        let b = verts[(i + 1) % m];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt();
        if len > 0.0 {
            normals.push(DVector::from_vec(vec![dy / len, -dx / len]));
        }
    }
    let vertices = verts
        .into_iter()
        .map(|p| DVector::from_vec(p.to_vec()))
        .collect();
    (normals, vertices)
}

/// Brute-force facet enumeration for full-dimensional point sets in dimension ≥ 3.
fn hull_nd(dim: usize, points: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let pts = dedup_points(points);
    let mut normals: Vec<DVector<f64>> = Vec::new();
    let mut offsets: Vec<f64> = Vec::new();

    for combo in Combinations::new(pts.len(), dim) {
        let base = &pts[combo[0]];
        let diffs = DMatrix::from_fn(dim - 1, dim, |r, c| pts[combo[r + 1]][c] - base[c]);
        let Some(normal) = null_vector(&diffs) else {
            continue;
        };
        let offset = normal.dot(base);
        let scale = 1.0 + offset.abs();
        let mut above = false;
        let mut below = false;
        for p in &pts {
            let s = normal.dot(p) - offset;
            above |= s > FACET_TOL * scale;
            below |= s < -FACET_TOL * scale;
            if above && below {
                break;
            }
        }
        let (normal, offset) = match (above, below) {
            (false, _) => (normal, offset),
            (true, false) => (-normal, -offset),
            (true, true) => continue,
        };
        let duplicate = normals
            .iter()
            .zip(&offsets)
            .any(|(n, &o)| max_abs_diff(n, &normal) <= DEDUP_TOL && (o - offset).abs() <= DEDUP_TOL);
        if !duplicate {
            normals.push(normal);
            offsets.push(offset);
        }
    }

    let vertices = pts
        .into_iter()
        .filter(|p| {
            let tight: Vec<DVector<f64>> = normals
                .iter()
                .zip(&offsets)
                .filter(|(n, &o)| (n.dot(p) - o).abs() <= FACET_TOL * (1.0 + o.abs()))
                .map(|(n, _)| n.clone())
                .collect();
            tight.len() >= dim && DMatrix::from_columns(&tight).rank(1e-9) == dim
        })
        .collect();
    (normals, vertices)
}

/// Unit vector spanning the null space of a `(d-1) × d` matrix of full row rank.
fn null_vector(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let d = m.ncols();
    let mut sq = DMatrix::zeros(d, d);
    sq.view_mut((0, 0), (d - 1, d)).copy_from(m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let smax = sv[order[0]];
    if smax == 0.0 || sv[order[d - 2]] <= 1e-10 * smax {
        return None;
    }
    Some(v_t.row(order[d - 1]).transpose().normalize())
}

/// Vertices of `{x : normals·x ≤ offsets}` by exhaustive basis enumeration.
///
/// Rows are expected to have unit norm. Returns an empty list when the system is
/// infeasible.
pub(crate) fn enumerate_vertices(normals: &DMatrix<f64>, offsets: &DVector<f64>) -> Vec<DVector<f64>> {
    let (m, d) = normals.shape();
    if d == 0 {
        return if offsets.iter().all(|&o| o >= -FACET_TOL) {
            vec![DVector::zeros(0)]
        } else {
            Vec::new()
        };
    }
    let feasible = |x: &DVector<f64>| {
        (0..m).all(|i| super::row_dot(normals, i, x) <= offsets[i] + FACET_TOL * (1.0 + offsets[i].abs()))
    };
    let mut found: Vec<DVector<f64>> = Vec::new();
    for combo in Combinations::new(m, d) {
        let sub = DMatrix::from_fn(d, d, |r, c| normals[(combo[r], c)]);
        let lu = sub.lu();
        if lu.determinant().abs() <= 1e-12 {
            continue;
        }
        let rhs = DVector::from_fn(d, |r, _| offsets[combo[r]]);
        let Some(x) = lu.solve(&rhs) else { continue };
        if feasible(&x) && !found.iter().any(|q| max_abs_diff(q, &x) <= DEDUP_TOL) {
            found.push(x);
        }
    }
    found
}

/// Lexicographic `k`-subsets of `0..n`.
pub(crate) struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            idx: (0..k).collect(),
            done: k > n || k == 0,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}
