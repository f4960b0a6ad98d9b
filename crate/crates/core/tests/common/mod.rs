#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rollout_mpc::mpc::{synth_terminal, Controller, NcsModel, NcsState};
use rollout_mpc::network::{BucketParams, Schedule};
use rollout_mpc::tube::{synthesize_tube, tighten, TightenedSets, TubeTemplate};
use rollout_mpc::qpsolve::{solve, QpStatus, QuadraticProgram, SolverSettings};
use rollout_mpc::Polytope;

pub fn di_model() -> NcsModel {
    NcsModel::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.005, 0.1]),
        Polytope::symmetric_box(&[8.0, 8.0]).unwrap(),
        Polytope::symmetric_box(&[15.0]).unwrap(),
        Polytope::symmetric_box(&[0.02, 0.02]).unwrap(),
        BucketParams::new(1, 3, 10).unwrap(),
        DMatrix::identity(2, 2) * 10.0,
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1) * 1e-6,
    )
    .unwrap()
}

pub fn di_controller() -> Controller {
    let model = di_model();
    let tube = synthesize_tube(
        &model.a,
        &model.b,
        &model.q,
        &model.r,
        &model.w_p_set,
        5,
        &TubeTemplate::default(),
        None,
    )
    .unwrap();
    let tightened = tighten(&model.x_p_set, &model.u_p_set, &tube).unwrap();
    let terminal = synth_terminal(&model, &tightened).unwrap();
    Controller::new(model, tube, tightened, terminal, 6, 5).unwrap()
}

/// Schedule constraint written exactly as the set definition: transmission instants
/// `τ(0) < … < τ(n−1)`, first within `H−s−1`, gaps at most `H`, end gap at most `H`,
/// or a horizon short enough to need no transmission.
#[allow(clippy::int_plus_one)]
pub fn gamma_definition(bits: &[bool], hold: usize, s: usize) -> bool {
    let n = bits.len() as i64;
    let (h, s) = (hold as i64, s as i64);
    let tau: Vec<i64> = (0..n).filter(|&j| bits[j as usize]).collect();
    let short = n <= h - s - 1;
    let constrained = !tau.is_empty()
        && tau[0] <= h - s - 1
        && tau.windows(2).all(|w| w[1] - w[0] <= h)
        && n - tau[tau.len() - 1] <= h;
    constrained || short
}

/// Bucket levels by direct evaluation of `min(β + g − γc, b)`; `None` if a level goes negative.
pub fn bucket_levels(beta0: u32, bits: &[bool], p: &BucketParams) -> Option<Vec<i64>> {
    let mut out = vec![beta0 as i64];
    for &bit in bits {
        let prev = *out.last().unwrap();
        let next = (prev + p.g as i64 - if bit { p.c as i64 } else { 0 }).min(p.b as i64);
        if next < 0 {
            return None;
        }
        out.push(next);
    }
    Some(out)
}

pub fn all_bitstrings(n: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..1u64 << n).map(move |idx| (0..n).map(|i| idx >> (n - 1 - i) & 1 == 1).collect())
}

/// `min ½xᵀPx + qᵀx + c0  s.t.  l ≤ Ax ≤ u` (equalities have `l = u`).
pub struct BoxQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub c0: f64,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

/// Optimal value of `qp`, certified in this function: an optimal answer must satisfy the KKT
/// conditions and an infeasible answer must carry a valid Farkas certificate. Panics if the
/// solver's answer cannot be certified.
pub fn certified_value(qp: &BoxQp) -> Option<f64> {
    let n = qp.q.len();
    let eq: Vec<usize> = (0..qp.l.len()).filter(|&i| qp.l[i] == qp.u[i]).collect();
    let up: Vec<usize> = (0..qp.l.len()).filter(|&i| qp.l[i] != qp.u[i] && qp.u[i].is_finite()).collect();
    let lo: Vec<usize> = (0..qp.l.len()).filter(|&i| qp.l[i] != qp.u[i] && qp.l[i].is_finite()).collect();
    let eq_lhs = DMatrix::from_fn(eq.len(), n, |r, c| qp.a[(eq[r], c)]);
    let eq_rhs = DVector::from_iterator(eq.len(), eq.iter().map(|&i| qp.l[i]));
    let g = DMatrix::from_fn(up.len() + lo.len(), n, |r, c| {
        if r < up.len() { qp.a[(up[r], c)] } else { -qp.a[(lo[r - up.len()], c)] }
    });
    let h = DVector::from_iterator(
        up.len() + lo.len(),
        up.iter().map(|&i| qp.u[i]).chain(lo.iter().map(|&i| -qp.l[i])),
    );
    let lib_qp = QuadraticProgram::new(qp.p.clone(), qp.q.clone(), qp.c0, eq_lhs.clone(), eq_rhs.clone(), g.clone(), h.clone())
        .expect("well-formed QP");
    let sol = solve(&lib_qp, &SolverSettings { tol: 1e-9, max_iterations: 2000 });
    match sol.status {
        QpStatus::Optimal => {
            let x = &sol.point;
            let (nu, lam) = (&sol.eq_multipliers, &sol.ineq_multipliers);
            let scale = 1.0 + h.amax().max(eq_rhs.amax());
            let eq_res = (&eq_lhs * x - &eq_rhs).amax();
            let gx = &g * x;
            let ineq_res = (0..h.len()).map(|i| gx[i] - h[i]).fold(0.0, f64::max);
            assert!(eq_res.max(ineq_res) <= 1e-8 * scale, "primal residual {}", eq_res.max(ineq_res));
            assert!(lam.iter().all(|&v| v >= -1e-9), "negative inequality multiplier");
            let stat = &qp.p * x + &qp.q + eq_lhs.transpose() * nu + g.transpose() * lam;
            let gscale = 1.0 + (&qp.p * x).amax() + lam.amax() + nu.amax();
            assert!(stat.amax() <= 1e-7 * gscale, "stationarity residual {}", stat.amax());
            let comp = (0..h.len()).map(|i| (lam[i] * (h[i] - gx[i])).abs()).fold(0.0, f64::max);
            assert!(comp <= 1e-6 * scale, "complementarity residual {comp}");
            Some(0.5 * x.dot(&(&qp.p * x)) + qp.q.dot(x) + qp.c0)
        }
        QpStatus::Infeasible => {
            let cert = sol.certificate.as_ref().expect("infeasible result carries a certificate");
            assert!(cert.ineq.iter().all(|&v| v >= -1e-12), "certificate sign");
            let combo = eq_lhs.transpose() * &cert.eq + g.transpose() * &cert.ineq;
            let gap = eq_rhs.dot(&cert.eq) + h.dot(&cert.ineq);
            let size = cert.eq.amax().max(cert.ineq.amax()).max(1e-300);
            assert!(gap < 0.0 && combo.amax() <= 1e-7 * size * (1.0 + g.amax()), "invalid Farkas certificate");
            None
        }
        QpStatus::MaxIterations => panic!("oracle QP hit the iteration cap"),
        QpStatus::NumericalFailure => panic!("oracle QP ended at an infeasible point"),
    }
}

/// Uncondensed formulation of the fixed-schedule problem: every predicted plant state and held
/// input is a variable, tied together by equality constraints. The input applied at step `i`
/// is the held value `ū_s(i+1)`, which equals the previous one unless step `i` transmits.
pub fn simultaneous_qp(ctrl: &Controller, x: &NcsState, xbar: &NcsState, bits: &[bool]) -> BoxQp {
    let model = &ctrl.model;
    let (n, m, len) = (model.state_dim(), model.input_dim(), bits.len());
    let xp = |i: usize| i * n;
    let us = |i: usize| (len + 1) * n + i * m;
    let nv = (len + 1) * (n + m);

    let mut rows: Vec<(DVector<f64>, f64, f64)> = Vec::new();
    let inf = f64::INFINITY;
    let row = || DVector::<f64>::zeros(nv);
    let eq = |rows: &mut Vec<(DVector<f64>, f64, f64)>, r: DVector<f64>, b: f64| rows.push((r, b, b));

    if !bits[0] {
        for j in 0..n {
            let mut r = row();
            r[xp(0) + j] = 1.0;
            eq(&mut rows, r, xbar.x_p[j]);
        }
        for j in 0..m {
            let mut r = row();
            r[us(0) + j] = 1.0;
            eq(&mut rows, r, xbar.u_s[j]);
        }
    }
    for i in 0..len {
        if !bits[i] {
            for j in 0..m {
                let mut r = row();
                r[us(i + 1) + j] = 1.0;
                r[us(i) + j] = -1.0;
                eq(&mut rows, r, 0.0);
            }
        }
        for j in 0..n {
            let mut r = row();
            r[xp(i + 1) + j] = 1.0;
            for c in 0..n {
                r[xp(i) + c] -= model.a[(j, c)];
            }
            for c in 0..m {
                r[us(i + 1) + c] -= model.b[(j, c)];
            }
            eq(&mut rows, r, 0.0);
        }
    }
    // `N (sign·v + shift) ≤ h` for the variable block starting at `at`.
    let member = |rows: &mut Vec<(DVector<f64>, f64, f64)>, set: &Polytope, at: usize, sign: f64, shift: &DVector<f64>| {
        for f in 0..set.num_facets() {
            let mut r = row();
            let mut rhs = set.offsets()[f];
            for c in 0..set.dim() {
                r[at + c] = sign * set.normals()[(f, c)];
                rhs -= set.normals()[(f, c)] * shift[c];
            }
            rows.push((r, -inf, rhs));
        }
    };
    if bits[0] {
        member(&mut rows, &ctrl.tube.omega_p, xp(0), -1.0, &x.x_p);
        member(&mut rows, &ctrl.tube.k_omega_p, us(0), -1.0, &x.u_s);
    }
    let zn = DVector::zeros(n);
    let zm = DVector::zeros(m);
    for i in 0..len {
        member(&mut rows, &ctrl.tightened.x_p, xp(i), 1.0, &zn);
        member(&mut rows, &ctrl.tightened.u_p, us(i), 1.0, &zm);
    }
    member(&mut rows, &ctrl.terminal.x_f_p, xp(len), 1.0, &zn);
    member(&mut rows, &ctrl.tightened.u_p, us(len), 1.0, &zm);

    let mut p = DMatrix::zeros(nv, nv);
    let put = |p: &mut DMatrix<f64>, at: usize, w: &DMatrix<f64>| {
        let d = w.nrows();
        let blk = p.view((at, at), (d, d)) + w * 2.0;
        p.view_mut((at, at), (d, d)).copy_from(&blk);
    };
    put(&mut p, us(0), &model.s);
    for i in 0..len {
        put(&mut p, xp(i), &model.q);
        put(&mut p, us(i + 1), &model.r);
    }
    put(&mut p, xp(len), &ctrl.terminal.p_f);

    let a = DMatrix::from_fn(rows.len(), nv, |i, j| rows[i].0[j]);
    let l = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let u = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    BoxQp { p, q: DVector::zeros(nv), c0: 0.0, a, l, u }
}

/// Exhaustive optimum over all `2^N` bit strings, filtered by the definitional schedule
/// constraint, a directly simulated bucket and the terminal token interval.
pub fn brute_force_value(
    ctrl: &Controller,
    x: &NcsState,
    xbar: &NcsState,
    s: usize,
    k: usize,
    force: bool,
) -> Option<(f64, Schedule)> {
    let len = ctrl.horizon(k);
    let p = ctrl.model.bucket;
    let mut best: Option<(f64, Schedule)> = None;
    for bits in all_bitstrings(len) {
        if force && !bits[0] {
            continue;
        }
        if !gamma_definition(&bits, ctrl.hold, s) {
            continue;
        }
        let Some(levels) = bucket_levels(x.beta, &bits, &p) else { continue };
        let last = *levels.last().unwrap();
        if last < p.c as i64 - p.g as i64 {
            continue;
        }
        if let Some(v) = certified_value(&simultaneous_qp(ctrl, x, xbar, &bits)) {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, Schedule::new(bits)));
            }
        }
    }
    best
}

pub type P2 = [f64; 2];

fn cross(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull by gift wrapping, counter-clockwise, collinear points dropped.
pub fn gift_wrap(points: &[P2]) -> Vec<P2> {
    let mut pts: Vec<P2> = Vec::new();
    for p in points {
        if !pts.iter().any(|q| (q[0] - p[0]).abs() < 1e-10 && (q[1] - p[1]).abs() < 1e-10) {
            pts.push(*p);
        }
    }
    if pts.len() < 3 {
        return pts;
    }
    let start = (0..pts.len())
        .min_by(|&i, &j| pts[i][0].total_cmp(&pts[j][0]).then(pts[i][1].total_cmp(&pts[j][1])))
        .unwrap();
    let mut hull = vec![];
    let mut cur = start;
    loop {
        hull.push(pts[cur]);
        let mut cand = (cur + 1) % pts.len();
        for i in 0..pts.len() {
            if i == cur {
                continue;
            }
            let c = cross(pts[cur], pts[cand], pts[i]);
            let d = |k: usize| (pts[k][0] - pts[cur][0]).hypot(pts[k][1] - pts[cur][1]);
            if c < -1e-12 || (c.abs() <= 1e-12 && d(i) > d(cand)) {
                cand = i;
            }
        }
        cur = cand;
        if cur == start || hull.len() > pts.len() {
            break;
        }
    }
    hull
}

/// Point in a counter-clockwise convex polygon, up to `tol` distance outside.
pub fn in_polygon(poly: &[P2], p: P2, tol: f64) -> bool {
    let k = poly.len();
    match k {
        0 => false,
        1 => (poly[0][0] - p[0]).hypot(poly[0][1] - p[1]) <= tol,
        _ => (0..k).all(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % k]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            k == 2 && len == 0.0 || cross(a, b, p) >= -tol * len
        }) && (k > 2 || {
            let (a, b) = (poly[0], poly[1]);
            let t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]))
                / ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2));
            (-1e-9..=1.0 + 1e-9).contains(&t)
        }),
    }
}

/// Edge halfplanes `(n, h)` with unit outward normals of a counter-clockwise polygon.
pub fn edges(poly: &[P2]) -> Vec<(P2, f64)> {
    let k = poly.len();
    (0..k)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % k]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            let n = [dy / len, -dx / len];
            (n, n[0] * a[0] + n[1] * a[1])
        })
        .collect()
}

/// Vertices of `{x : nᵢ·x ≤ hᵢ}` by intersecting every pair of lines.
pub fn halfplane_vertices(planes: &[(P2, f64)]) -> Vec<P2> {
    let mut out = Vec::new();
    for i in 0..planes.len() {
        for j in i + 1..planes.len() {
            let ((a, ha), (b, hb)) = (planes[i], planes[j]);
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() < 1e-12 {
                continue;
            }
            let p = [(ha * b[1] - hb * a[1]) / det, (a[0] * hb - b[0] * ha) / det];
            if planes.iter().all(|(n, h)| n[0] * p[0] + n[1] * p[1] <= h + 1e-9) {
                out.push(p);
            }
        }
    }
    gift_wrap(&out)
}

pub fn to_p2(v: &DVector<f64>) -> P2 {
    [v[0], v[1]]
}

pub fn p2_vertices(p: &Polytope) -> Vec<P2> {
    p.vertices().iter().map(to_p2).collect()
}

/// Same finite point sets up to `tol`.
pub fn same_points(a: &[P2], b: &[P2], tol: f64) -> bool {
    let covered = |x: &[P2], y: &[P2]| x.iter().all(|p| y.iter().any(|q| (p[0] - q[0]).abs() <= tol && (p[1] - q[1]).abs() <= tol));
    covered(a, b) && covered(b, a)
}

/// Random point of a polytope as a random convex combination of its vertices.
pub fn random_point(rng: &mut ChaCha8Rng, verts: &[DVector<f64>]) -> DVector<f64> {
    let w: Vec<f64> = verts.iter().map(|_| rng.random::<f64>().powi(3)).collect();
    let total: f64 = w.iter().sum();
    verts.iter().zip(&w).fold(DVector::zeros(verts[0].len()), |acc, (v, wi)| acc + v * (wi / total))
}

pub fn random_instance(rng: &mut ChaCha8Rng, ctrl: &Controller) -> (NcsState, NcsState, usize, usize) {
    let x_p = DVector::from_vec(vec![rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)]);
    let u_s = DVector::from_vec(vec![rng.random_range(-10.0..10.0)]);
    let beta = rng.random_range(2..=10);
    let e_p = random_point(rng, ctrl.tube.omega_p.vertices());
    let e_u = random_point(rng, ctrl.tube.k_omega_p.vertices());
    let x = NcsState::new(x_p.clone(), u_s.clone(), beta);
    let xbar = NcsState::new(x_p - e_p, u_s - e_u, beta);
    (x, xbar, rng.random_range(0..5), rng.random_range(0..3))
}

/// Random controllable two-state plant with a random bucket, box constraints used directly
/// as the tightened sets. Plants whose lifted pair is uncontrollable are redrawn.
pub fn random_terminal_plant(rng: &mut ChaCha8Rng) -> (NcsModel, TightenedSets) {
    loop {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.2..1.2));
        let b = DMatrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0));
        let c = rng.random_range(1..=3u32);
        let bucket = BucketParams::new(1, c, rng.random_range(c..=10)).unwrap();
        let hold = bucket.cycle_length();
        let l = rollout_mpc::tube::lift(&a, &b, hold).unwrap();
        let (b1, ab) = (&l.b[hold], &l.a[hold] * &l.b[hold]);
        if (b1[0] * ab[1] - b1[1] * ab[0]).abs() < 1e-3 {
            continue;
        }
        let qd = [rng.random_range(0.5..10.0), rng.random_range(0.5..10.0)];
        let r = rng.random_range(0.1..5.0);
        let x_box = Polytope::symmetric_box(&[rng.random_range(2.0..8.0), rng.random_range(2.0..8.0)]).unwrap();
        let u_box = Polytope::symmetric_box(&[rng.random_range(1.0..10.0)]).unwrap();
        let model = NcsModel::new(
            a,
            b,
            x_box.clone(),
            u_box.clone(),
            Polytope::symmetric_box(&[0.01, 0.01]).unwrap(),
            bucket,
            DMatrix::from_diagonal(&DVector::from_vec(qd.to_vec())),
            DMatrix::from_element(1, 1, r),
            DMatrix::from_element(1, 1, r * rng.random_range(0.0..1.0)),
        )
        .unwrap();
        return (model, TightenedSets { x_p: x_box, u_p: u_box });
    }
}

pub fn di_run_config(steps: usize) -> rollout_mpc::sim::RunConfig {
    rollout_mpc::sim::RunConfig {
        steps,
        x0: DVector::from_vec(vec![6.0, -2.0]),
        u_s0: DVector::zeros(1),
        beta0: 10,
    }
}

/// Re-derives the token levels of a log from its first level and the logged transmissions,
/// then checks them against the logged levels, the interval `[0, b]` and the budget
/// `c·Σγ ≤ β(0) + T·g`. Returns a description of the first mismatch.
pub fn audit_tokens(log: &rollout_mpc::sim::ClosedLoopLog, p: &BucketParams) -> Result<(), String> {
    let recs = &log.records;
    let Some(first) = recs.first() else { return Ok(()) };
    let bits: Vec<bool> = recs.iter().map(|r| r.gamma).collect();
    let levels = bucket_levels(first.x.beta, &bits, p).ok_or("token level went negative")?;
    for (r, &l) in recs.iter().zip(&levels) {
        if i64::from(r.x.beta) != l {
            return Err(format!("step {}: logged β = {}, replayed {l}", r.k, r.x.beta));
        }
    }
    if let Some(l) = levels.iter().find(|&&l| !(0..=i64::from(p.b)).contains(&l)) {
        return Err(format!("level {l} outside [0, {}]", p.b));
    }
    let spent = i64::from(p.c) * bits.iter().filter(|&&b| b).count() as i64;
    let budget = i64::from(first.x.beta) + recs.len() as i64 * i64::from(p.g);
    if spent > budget {
        return Err(format!("spent {spent} tokens with budget {budget}"));
    }
    Ok(())
}
