use nalgebra::{DMatrix, DVector};

use super::{horizon_length, NcsInput, NcsModel, NcsState, TerminalIngredients};
use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::network::{enumerate_feasible_schedules, Schedule};
use crate::qpsolve::{solve, QuadraticProgram, SolverSettings};
use crate::tube::{TightenedSets, TubeParams};

/// Values within this distance are treated as tied when choosing a schedule.
const TIE_TOL: f64 = 1e-9;

/// `lin · z + off`.
#[derive(Debug, Clone)]
struct Affine {
    lin: DMatrix<f64>,
    off: DVector<f64>,
}

impl Affine {
    fn constant(off: DVector<f64>, nz: usize) -> Self {
        Affine {
            lin: DMatrix::zeros(off.len(), nz),
            off,
        }
    }

    fn variable(dim: usize, at: usize, nz: usize) -> Self {
        let mut lin = DMatrix::zeros(dim, nz);
        lin.view_mut((0, at), (dim, dim)).fill_with_identity();
        Affine {
            lin,
            off: DVector::zeros(dim),
        }
    }

    fn map(&self, m: &DMatrix<f64>) -> Affine {
        Affine {
            lin: m * &self.lin,
            off: m * &self.off,
        }
    }

    fn add(&self, other: &Affine) -> Affine {
        Affine {
            lin: &self.lin + &other.lin,
            off: &self.off + &other.off,
        }
    }

    fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.lin * z + &self.off
    }
}

/// QP for one fixed schedule, with the affine maps needed to rebuild trajectories.
#[derive(Debug, Clone)]
pub struct FixedScheduleQp {
    pub qp: QuadraticProgram,
    pub schedule: Schedule,
    pub betas: Vec<i64>,
    x_p: Vec<Affine>,
    u_s: Vec<Affine>,
    u_c: Vec<Affine>,
}

impl FixedScheduleQp {
    /// Nominal states `x̄(0..=N)` and inputs `ū(0..N)` for a decision vector `z`.
    pub fn trajectories(&self, z: &DVector<f64>) -> (Vec<NcsState>, Vec<NcsInput>) {
        let states = (0..self.x_p.len())
            .map(|i| NcsState::new(self.x_p[i].eval(z), self.u_s[i].eval(z), self.betas[i].max(0) as u32))
            .collect();
        let inputs = (0..self.u_c.len())
            .map(|i| NcsInput::new(self.u_c[i].eval(z), self.schedule.get(i)))
            .collect();
        (states, inputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub status: OcpStatus,
    pub schedule: Schedule,
    pub xbar_traj: Vec<NcsState>,
    pub ubar_traj: Vec<NcsInput>,
    pub value: f64,
    /// Schedules whose QP was solved.
    pub candidates: usize,
}

impl OcpSolution {
    fn infeasible(candidates: usize) -> Self {
        OcpSolution {
            status: OcpStatus::Infeasible,
            schedule: Schedule::zeros(0),
            xbar_traj: Vec::new(),
            ubar_traj: Vec::new(),
            value: f64::INFINITY,
            candidates,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == OcpStatus::Optimal
    }
}

/// Model, tube and terminal ingredients with the horizon parameters of the controller.
#[derive(Debug, Clone)]
pub struct Controller {
    pub model: NcsModel,
    pub tube: TubeParams,
    pub tightened: TightenedSets,
    pub terminal: TerminalIngredients,
    pub n_max: usize,
    pub hold: usize,
    pub settings: SolverSettings,
}

/// Appends `P ∋ e` as rows of `G z ≤ h`.
fn push_membership(rows: &mut Vec<(DVector<f64>, f64)>, set: &Polytope, e: &Affine) {
    if set.is_empty() {
        rows.push((DVector::zeros(e.lin.ncols()), -1.0));
        return;
    }
    let g = set.normals() * &e.lin;
    let h = set.offsets() - set.normals() * &e.off;
    for i in 0..g.nrows() {
        rows.push((g.row(i).transpose(), h[i]));
    }
}

/// Adds `eᵀ W e` to the objective `½ zᵀHz + cᵀz + c0`.
fn add_quadratic(h: &mut DMatrix<f64>, c: &mut DVector<f64>, c0: &mut f64, w: &DMatrix<f64>, e: &Affine) {
    let wl = w * &e.lin;
    *h += e.lin.transpose() * &wl * 2.0;
    *c += wl.transpose() * &e.off * 2.0;
    *c0 += e.off.dot(&(w * &e.off));
}

impl Controller {
    pub fn new(
        model: NcsModel,
        tube: TubeParams,
        tightened: TightenedSets,
        terminal: TerminalIngredients,
        n_max: usize,
        hold: usize,
    ) -> Result<Self> {
        let m = model.cycle_length();
        if !(n_max >= hold && hold >= m) {
            return Err(Error::InvalidModel(format!(
                "horizons must satisfy N_max ≥ H ≥ M (got {n_max}, {hold}, {m})"
            )));
        }
        if terminal.m != m {
            return Err(Error::InvalidModel("terminal cycle length differs from ⌈c/g⌉".into()));
        }
        if tube.hold < hold {
            return Err(Error::InvalidModel(format!(
                "tube certified for {} held steps, controller needs {hold}",
                tube.hold
            )));
        }
        Ok(Controller {
            model,
            tube,
            tightened,
            terminal,
            n_max,
            hold,
            settings: SolverSettings::default(),
        })
    }

    pub fn horizon(&self, k: usize) -> usize {
        horizon_length(k, self.n_max, self.model.cycle_length())
    }

    /// Condensed QP for a fixed schedule.
    ///
    /// Decision variables are `x̄_p(0)` and `ū_s(0)` when the schedule transmits at step 0
    /// (otherwise the nominal state is fixed to `xbar`), followed by `ū_c(i)` for each
    /// transmission step. Values of `ū_c` at idle steps are zero and do not appear.
    pub fn build_fixed_schedule_qp(
        &self,
        x: &NcsState,
        xbar: &NcsState,
        sched: &Schedule,
    ) -> Result<FixedScheduleQp> {
        let model = &self.model;
        let (n, m, len) = (model.state_dim(), model.input_dim(), sched.len());
        let reinit = sched.get(0);
        let head = if reinit { n + m } else { 0 };
        let nz = head + m * sched.count();

        let mut x_p = Vec::with_capacity(len + 1);
        let mut u_s = Vec::with_capacity(len + 1);
        let mut u_c = Vec::with_capacity(len);
        if reinit {
            x_p.push(Affine::variable(n, 0, nz));
            u_s.push(Affine::variable(m, n, nz));
        } else {
            x_p.push(Affine::constant(xbar.x_p.clone(), nz));
            u_s.push(Affine::constant(xbar.u_s.clone(), nz));
        }
        let mut next_var = head;
        for i in 0..len {
            let applied = if sched.get(i) {
                let v = Affine::variable(m, next_var, nz);
                next_var += m;
                u_c.push(v.clone());
                v
            } else {
                u_c.push(Affine::constant(DVector::zeros(m), nz));
                u_s[i].clone()
            };
            x_p.push(x_p[i].map(&model.a).add(&applied.map(&model.b)));
            u_s.push(applied);
        }

        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        if reinit {
            let neg = -DMatrix::<f64>::identity(n, n);
            let e_p = Affine { lin: &neg * &x_p[0].lin, off: x.x_p.clone() };
            push_membership(&mut rows, &self.tube.omega_p, &e_p);
            let neg = -DMatrix::<f64>::identity(m, m);
            let e_u = Affine { lin: &neg * &u_s[0].lin, off: x.u_s.clone() };
            push_membership(&mut rows, &self.tube.k_omega_p, &e_u);
        }
        for i in 0..len {
            push_membership(&mut rows, &self.tightened.x_p, &x_p[i]);
            push_membership(&mut rows, &self.tightened.u_p, &u_s[i]);
            push_membership(&mut rows, &self.tightened.u_p, &u_s[i + 1]);
        }
        push_membership(&mut rows, &self.terminal.x_f_p, &x_p[len]);
        push_membership(&mut rows, &self.tightened.u_p, &u_s[len]);

        let bucket = &model.bucket;
        let traj = bucket.trajectory(x.beta, sched);
        let beta_end = *traj.levels.last().expect("trajectory has an initial level");
        let beta_ok = traj.feasible
            && beta_end >= i64::from(bucket.c) - i64::from(bucket.g)
            && beta_end <= i64::from(bucket.b);
        if !beta_ok {
            rows.push((DVector::zeros(nz), -1.0));
        }

        let mut h = DMatrix::zeros(nz, nz);
        let mut c = DVector::zeros(nz);
        let mut c0 = 0.0;
        add_quadratic(&mut h, &mut c, &mut c0, &model.s, &u_s[0]);
        for i in 0..len {
            add_quadratic(&mut h, &mut c, &mut c0, &model.q, &x_p[i]);
            add_quadratic(&mut h, &mut c, &mut c0, &model.r, &u_s[i + 1]);
        }
        add_quadratic(&mut h, &mut c, &mut c0, &self.terminal.p_f, &x_p[len]);
        let h = (&h + h.transpose()) * 0.5;

        let ineq_lhs = DMatrix::from_fn(rows.len(), nz, |i, j| rows[i].0[j]);
        let ineq_rhs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let qp = QuadraticProgram::new(h, c, c0, DMatrix::zeros(0, nz), DVector::zeros(0), ineq_lhs, ineq_rhs)?;
        Ok(FixedScheduleQp {
            qp,
            schedule: sched.clone(),
            betas: traj.levels,
            x_p,
            u_s,
            u_c,
        })
    }

    /// Exact solution of the mixed-integer problem by enumerating admissible schedules.
    ///
    /// With `force_transmission` only schedules transmitting at step 0 are considered.
    /// Ties within `1e-9` go to fewer transmissions, then the lexicographically smallest
    /// schedule.
    pub fn solve_ocp(
        &self,
        x: &NcsState,
        xbar: &NcsState,
        s: usize,
        k: usize,
        force_transmission: bool,
    ) -> Result<OcpSolution> {
        let len = self.horizon(k);
        let schedules = enumerate_feasible_schedules(len, self.hold, s, x.beta, &self.model.bucket)?;
        let mut results = Vec::new();
        let mut candidates = 0;
        for sched in schedules {
            if force_transmission && !sched.get(0) {
                continue;
            }
            candidates += 1;
            let fixed = self.build_fixed_schedule_qp(x, xbar, &sched)?;
            let sol = solve(&fixed.qp, &self.settings);
            if sol.is_optimal() {
                let value = fixed.qp.objective(&sol.point);
                results.push((value, fixed, sol.point));
            }
        }
        let Some(best) = results.iter().map(|r| r.0).reduce(f64::min) else {
            return Ok(OcpSolution::infeasible(candidates));
        };
        let (value, fixed, z) = results
            .into_iter()
            .filter(|r| r.0 <= best + TIE_TOL)
            .min_by(|a, b| {
                (a.1.schedule.count(), a.1.schedule.bits()).cmp(&(b.1.schedule.count(), b.1.schedule.bits()))
            })
            .expect("at least one candidate within tolerance");
        let (xbar_traj, ubar_traj) = fixed.trajectories(&z);
        Ok(OcpSolution {
            status: OcpStatus::Optimal,
            schedule: fixed.schedule,
            xbar_traj,
            ubar_traj,
            value,
            candidates,
        })
    }
}
