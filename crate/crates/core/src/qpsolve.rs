//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize     ½ xᵀ H x + cᵀ x + c₀
//!     subject to   A_eq x  = b_eq
//!                  A_in x ≤ b_in
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. Singular PSD hessians are
//! handled with a tiny Tikhonov shift, which selects the minimum-norm minimizer.
//! Infeasible problems return a Farkas certificate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{min_symmetric_eigenvalue, row_dot};

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub eq_lhs: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_lhs: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QuadraticProgram {
    /// Validates shapes, symmetry and positive semidefiniteness.
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        constant: f64,
        eq_lhs: DMatrix<f64>,
        eq_rhs: DVector<f64>,
        ineq_lhs: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
    ) -> Result<Self> {
        let n = linear.len();
        let shape_err = |context, expected, got| Error::DimensionMismatch {
            context,
            expected,
            got,
        };
        if hessian.shape() != (n, n) {
            return Err(shape_err("qp hessian", n, hessian.nrows()));
        }
        if eq_lhs.ncols() != n || eq_lhs.nrows() != eq_rhs.len() {
            return Err(shape_err("qp equality system", n, eq_lhs.ncols()));
        }
        if ineq_lhs.ncols() != n || ineq_lhs.nrows() != ineq_rhs.len() {
            return Err(shape_err("qp inequality system", n, ineq_lhs.ncols()));
        }
        if (&hessian - hessian.transpose()).amax() > 1e-12 * hessian.amax().max(1.0) {
            return Err(Error::InvalidModel("qp hessian is not symmetric".into()));
        }
        if n > 0 && min_symmetric_eigenvalue(&hessian) < -1e-10 {
            return Err(Error::InvalidModel("qp hessian is not positive semidefinite".into()));
        }
        Ok(QuadraticProgram {
            hessian,
            linear,
            constant,
            eq_lhs,
            eq_rhs,
            ineq_lhs,
            ineq_rhs,
        })
    }

    /// Unconstrained problem with the given objective; add constraints via the public fields.
    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let n = linear.len();
        Self::new(
            hessian,
            linear,
            0.0,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x) + self.constant
    }

    /// Largest violation over all constraints (zero when feasible).
    pub fn primal_residual(&self, x: &DVector<f64>) -> f64 {
        let eq = (0..self.eq_rhs.len())
            .map(|i| (row_dot(&self.eq_lhs, i, x) - self.eq_rhs[i]).abs())
            .fold(0.0, f64::max);
        let ineq = (0..self.ineq_rhs.len())
            .map(|i| row_dot(&self.ineq_lhs, i, x) - self.ineq_rhs[i])
            .fold(0.0, f64::max);
        eq.max(ineq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    /// The active-set iteration ended at a point that violates the constraints.
    NumericalFailure,
}

/// Largest scaled constraint violation accepted at termination.
const FEASIBILITY_GUARD: f64 = 1e-7;

/// Multipliers `y = (y_eq, y_in)` with `y_in ≥ 0`, `A_eqᵀy_eq + A_inᵀy_in = 0` and
/// `b_eqᵀy_eq + b_inᵀy_in = −1`, proving that no feasible point exists.
#[derive(Debug, Clone)]
pub struct FarkasCertificate {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

impl FarkasCertificate {
    /// Residual `‖A_eqᵀy_eq + A_inᵀy_in‖∞`; the certificate is valid when this is small,
    /// `y_in ≥ 0`, and the right-hand side combination is `−1`.
    pub fn residual(&self, qp: &QuadraticProgram) -> f64 {
        let combo = qp.eq_lhs.transpose() * &self.eq + qp.ineq_lhs.transpose() * &self.ineq;
        let rhs = qp.eq_rhs.dot(&self.eq) + qp.ineq_rhs.dot(&self.ineq);
        let sign = self.ineq.iter().copied().fold(0.0, |m: f64, v| m.max(-v));
        combo.amax().max((rhs + 1.0).abs()).max(sign)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub point: DVector<f64>,
    pub value: f64,
    pub status: QpStatus,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub certificate: Option<FarkasCertificate>,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// KKT residuals of a candidate primal-dual pair.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub dual: f64,
}

pub fn kkt_residuals(qp: &QuadraticProgram, sol: &QpSolution) -> KktResiduals {
    let x = &sol.point;
    let grad = &qp.hessian * x
        + &qp.linear
        + qp.eq_lhs.transpose() * &sol.eq_multipliers
        + qp.ineq_lhs.transpose() * &sol.ineq_multipliers;
    let complementarity = (0..qp.ineq_rhs.len())
        .map(|i| (sol.ineq_multipliers[i] * (qp.ineq_rhs[i] - row_dot(&qp.ineq_lhs, i, x))).abs())
        .fold(0.0, f64::max);
    let dual = sol.ineq_multipliers.iter().fold(0.0, |m: f64, &v| m.max(-v));
    KktResiduals {
        primal: qp.primal_residual(x),
        stationarity: if grad.is_empty() { 0.0 } else { grad.amax() },
        complementarity,
        dual,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    /// Constraint violation accepted as feasible.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-9,
            max_iterations: 200,
        }
    }
}

/// One constraint in the solver's internal form `nᵀx ≥ b` with `‖n‖ = 1`.
struct Row {
    normal: DVector<f64>,
    rhs: f64,
    scale: f64,
    equality: bool,
    /// Orientation applied to an equality row (`±1`).
    orient: f64,
    /// Position in the caller's `eq` or `ineq` block.
    source: usize,
}

pub fn solve(qp: &QuadraticProgram, settings: &SolverSettings) -> QpSolution {
    Solver::new(qp, settings).run()
}

struct Solver<'a> {
    qp: &'a QuadraticProgram,
    settings: &'a SolverSettings,
    rows: Vec<Row>,
    ginv: DMatrix<f64>,
    x: DVector<f64>,
    active: Vec<usize>,
    duals: Vec<f64>,
    /// Equality rows found to be consistent and linearly dependent on the active set.
    dependent: Vec<bool>,
    iterations: usize,
}

enum Step {
    Added,
    Infeasible(FarkasCertificate),
    Stalled,
}

impl<'a> Solver<'a> {
    fn new(qp: &'a QuadraticProgram, settings: &'a SolverSettings) -> Self {
        let n = qp.num_vars();
        let mut g = qp.hessian.clone();
        if n > 0 {
            let scale = g.amax().max(1.0);
            if min_symmetric_eigenvalue(&g) <= 1e-12 * scale {
                for i in 0..n {
                    g[(i, i)] += 1e-10 * scale;
                }
            }
        }
        let ginv = match g.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => g.pseudo_inverse(1e-14).unwrap_or_else(|_| DMatrix::zeros(n, n)),
        };
        let x = -(&ginv * &qp.linear);
        Solver {
            qp,
            settings,
            rows: Vec::new(),
            ginv,
            x,
            active: Vec::new(),
            duals: Vec::new(),
            dependent: Vec::new(),
            iterations: 0,
        }
    }

    fn finish(&self, status: QpStatus, certificate: Option<FarkasCertificate>) -> QpSolution {
        let mut eq = DVector::zeros(self.qp.eq_rhs.len());
        let mut ineq = DVector::zeros(self.qp.ineq_rhs.len());
        if status == QpStatus::Optimal {
            for (&r, &u) in self.active.iter().zip(&self.duals) {
                let row = &self.rows[r];
                if row.equality {
                    eq[row.source] = -u * row.orient / row.scale;
                } else {
                    ineq[row.source] = u / row.scale;
                }
            }
        }
        QpSolution {
            value: self.qp.objective(&self.x),
            point: self.x.clone(),
            status,
            eq_multipliers: eq,
            ineq_multipliers: ineq,
            certificate,
            iterations: self.iterations,
        }
    }

    /// Certificate for a constant row `0ᵀx ≤ rhs` (or `= rhs`) that is violated.
    fn constant_row_certificate(&self, equality: bool, source: usize, rhs: f64) -> FarkasCertificate {
        let mut eq = DVector::zeros(self.qp.eq_rhs.len());
        let mut ineq = DVector::zeros(self.qp.ineq_rhs.len());
        if equality {
            eq[source] = -1.0 / rhs;
        } else {
            ineq[source] = -1.0 / rhs;
        }
        FarkasCertificate { eq, ineq }
    }

    fn run(mut self) -> QpSolution {
        let qp = self.qp;
        let tol = self.settings.tol;
        for i in 0..qp.eq_rhs.len() {
            let a = qp.eq_lhs.row(i).transpose();
            let norm = a.norm();
            if norm <= 1e-14 {
                if qp.eq_rhs[i].abs() > tol {
                    let cert = self.constant_row_certificate(true, i, qp.eq_rhs[i]);
                    return self.finish(QpStatus::Infeasible, Some(cert));
                }
                continue;
            }
            self.rows.push(Row {
                normal: a / norm,
                rhs: qp.eq_rhs[i] / norm,
                scale: norm,
                equality: true,
                orient: 1.0,
                source: i,
            });
        }
        for i in 0..qp.ineq_rhs.len() {
            let a = qp.ineq_lhs.row(i).transpose();
            let norm = a.norm();
            if norm <= 1e-14 {
                if qp.ineq_rhs[i] < -tol {
                    let cert = self.constant_row_certificate(false, i, qp.ineq_rhs[i]);
                    return self.finish(QpStatus::Infeasible, Some(cert));
                }
                continue;
            }
            self.rows.push(Row {
                normal: -a / norm,
                rhs: -qp.ineq_rhs[i] / norm,
                scale: norm,
                equality: false,
                orient: 1.0,
                source: i,
            });
        }
        self.dependent = vec![false; self.rows.len()];

        loop {
            let Some(p) = self.pick_violated() else {
                self.polish();
                let scale = 1.0 + qp.eq_rhs.amax().max(qp.ineq_rhs.amax());
                if qp.primal_residual(&self.x) > FEASIBILITY_GUARD * scale {
                    return self.finish(QpStatus::NumericalFailure, None);
                }
                return self.finish(QpStatus::Optimal, None);
            };
            match self.add_constraint(p) {
                Step::Added => {}
                Step::Infeasible(cert) => return self.finish(QpStatus::Infeasible, Some(cert)),
                Step::Stalled => return self.finish(QpStatus::MaxIterations, None),
            }
        }
    }

    /// Re-solves the KKT system of the final active set directly; the incremental inverse
    /// updates lose accuracy when the Hessian is ill-conditioned.
    fn polish(&mut self) {
        let (n, q) = (self.x.len(), self.active.len());
        if q == 0 {
            return;
        }
        let mut kkt = DMatrix::zeros(n + q, n + q);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.qp.hessian);
        let mut rhs = DVector::zeros(n + q);
        rhs.rows_mut(0, n).copy_from(&(-&self.qp.linear));
        for (j, &r) in self.active.iter().enumerate() {
            let row = &self.rows[r];
            for i in 0..n {
                kkt[(i, n + j)] = -row.normal[i];
                kkt[(n + j, i)] = row.normal[i];
            }
            rhs[n + j] = row.rhs;
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            return;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return;
        }
        let x = sol.rows(0, n).into_owned();
        let duals: Vec<f64> = sol.rows(n, q).iter().copied().collect();
        let dual_ok = self
            .active
            .iter()
            .zip(&duals)
            .all(|(&r, &u)| self.rows[r].equality || u >= -self.settings.tol);
        if dual_ok && self.qp.primal_residual(&x) <= self.qp.primal_residual(&self.x) {
            self.x = x;
            self.duals = duals;
        }
    }

    fn slack(&self, r: usize) -> f64 {
        let row = &self.rows[r];
        row.normal.dot(&self.x) - row.rhs
    }

    /// Next constraint to enter: pending equalities first, then the most violated inequality.
    fn pick_violated(&mut self) -> Option<usize> {
        let tol = self.settings.tol;
        for r in 0..self.rows.len() {
            if self.rows[r].equality && !self.dependent[r] && !self.active.contains(&r) {
                if self.slack(r) > 0.0 {
                    let row = &mut self.rows[r];
                    row.normal = -row.normal.clone();
                    row.rhs = -row.rhs;
                    row.orient = -row.orient;
                }
                return Some(r);
            }
        }
        let mut worst: Option<(usize, f64)> = None;
        for r in 0..self.rows.len() {
            if self.rows[r].equality || self.active.contains(&r) {
                continue;
            }
            let s = self.slack(r);
            if s < -tol && worst.is_none_or(|(_, w)| s < w) {
                worst = Some((r, s));
            }
        }
        worst.map(|(r, _)| r)
    }

    fn add_constraint(&mut self, p: usize) -> Step {
        let tol = self.settings.tol;
        let mut u_p = 0.0;
        loop {
            self.iterations += 1;
            if self.iterations > self.settings.max_iterations {
                return Step::Stalled;
            }
            let np = &self.rows[p].normal;
            let q = self.active.len();
            let ginv_np = &self.ginv * np;
            let ginv_np_norm = ginv_np.amax();
            let (z, r) = if q == 0 {
                (ginv_np, DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_fn(np.len(), q, |i, j| self.rows[self.active[j]].normal[i]);
                let w = &self.ginv * &nmat;
                let m = nmat.transpose() * &w;
                let rhs = w.transpose() * np;
                let r = match m.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => match m.lu().solve(&rhs) {
                        Some(r) => r,
                        None => return Step::Stalled,
                    },
                };
                (ginv_np - &w * &r, r)
            };

            // A genuine step lies in the null space of the active rows; anything else is roundoff.
            let off_null = (0..q)
                .map(|j| self.rows[self.active[j]].normal.dot(&z).abs())
                .fold(0.0, f64::max);
            let z_is_zero = q >= np.len()
                || z.amax() <= 1e-12 * (1.0 + ginv_np_norm)
                || off_null > 1e-6 * z.amax();

            // Partial step: largest dual step keeping active inequality multipliers ≥ 0.
            let mut t1 = f64::INFINITY;
            let mut drop_idx = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 1e-14 && !self.rows[self.active[j]].equality {
                    let ratio = self.duals[j] / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_idx = Some(j);
                    }
                }
            }
            let s_p = self.slack(p);
            let t2 = if z_is_zero {
                f64::INFINITY
            } else {
                -s_p / z.dot(np)
            };

            if z_is_zero && t1.is_infinite() {
                if self.rows[p].equality && s_p.abs() <= tol {
                    self.dependent[p] = true;
                    return Step::Added;
                }
                return Step::Infeasible(self.certificate(p, &r));
            }

            let t = t1.min(t2);
            if !z_is_zero {
                self.x += &z * t;
            }
            for (u, rj) in self.duals.iter_mut().zip(r.iter()) {
                *u -= t * rj;
            }
            u_p += t;

            if t2 <= t1 {
                self.active.push(p);
                self.duals.push(u_p);
                return Step::Added;
            }
            let j = drop_idx.expect("partial step has a blocking constraint");
            self.active.remove(j);
            self.duals.remove(j);
        }
    }

    fn certificate(&self, p: usize, r: &DVector<f64>) -> FarkasCertificate {
        let mut eq = DVector::zeros(self.qp.eq_rhs.len());
        let mut ineq = DVector::zeros(self.qp.ineq_rhs.len());
        let weights = std::iter::once((p, 1.0)).chain(self.active.iter().zip(r.iter()).map(|(&a, &rj)| (a, -rj)));
        for (idx, mu) in weights {
            let row = &self.rows[idx];
            if row.equality {
                eq[row.source] -= mu * row.orient / row.scale;
            } else {
                ineq[row.source] += mu / row.scale;
            }
        }
        let rhs = self.qp.eq_rhs.dot(&eq) + self.qp.ineq_rhs.dot(&ineq);
        if rhs < 0.0 {
            eq /= -rhs;
            ineq /= -rhs;
        }
        for v in ineq.iter_mut() {
            *v = v.max(0.0);
        }
        FarkasCertificate { eq, ineq }
    }
}
