//! Networked control system model, costs, terminal ingredients and the optimal control problem.

mod ocp;
mod terminal;

pub use ocp::{Controller, FixedScheduleQp, OcpSolution, OcpStatus};
pub use terminal::{synth_terminal, terminal_control, terminal_cost_residual, verify_terminal, TerminalIngredients};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::linalg::{is_positive_definite, min_symmetric_eigenvalue};
use crate::network::BucketParams;

/// Plant, constraint sets, traffic specification and cost weights.
#[derive(Debug, Clone)]
pub struct NcsModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub x_p_set: Polytope,
    pub u_p_set: Polytope,
    pub w_p_set: Polytope,
    pub bucket: BucketParams,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl NcsModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        x_p_set: Polytope,
        u_p_set: Polytope,
        w_p_set: Polytope,
        bucket: BucketParams,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        s: DMatrix<f64>,
    ) -> Result<Self> {
        let model = NcsModel {
            a,
            b,
            x_p_set,
            u_p_set,
            w_p_set,
            bucket,
            q,
            r,
            s,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        let dims = [
            ("A columns", n, self.a.ncols()),
            ("B rows", n, self.b.nrows()),
            ("X_p dimension", n, self.x_p_set.dim()),
            ("U_p dimension", m, self.u_p_set.dim()),
            ("W_p dimension", n, self.w_p_set.dim()),
            ("Q rows", n, self.q.nrows()),
            ("Q columns", n, self.q.ncols()),
            ("R rows", m, self.r.nrows()),
            ("R columns", m, self.r.ncols()),
            ("S rows", m, self.s.nrows()),
            ("S columns", m, self.s.ncols()),
        ];
        for (context, expected, got) in dims {
            if expected != got {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    got,
                });
            }
        }
        self.bucket.validate()?;
        for (name, w) in [("Q", &self.q), ("R", &self.r), ("S", &self.s)] {
            if !is_positive_definite(w) {
                return Err(Error::InvalidModel(format!("{name} must be symmetric positive definite")));
            }
        }
        if min_symmetric_eigenvalue(&(&self.r - &self.s)) < -1e-12 {
            return Err(Error::InvalidModel("R − S must be positive semidefinite".into()));
        }
        for (name, set) in [("X_p", &self.x_p_set), ("U_p", &self.u_p_set), ("W_p", &self.w_p_set)] {
            if set.is_empty() {
                return Err(Error::InvalidModel(format!("{name} is empty")));
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Cycle length `M = ⌈c/g⌉`.
    pub fn cycle_length(&self) -> usize {
        self.bucket.cycle_length()
    }
}

/// Plant state, held actuator value and token level.
#[derive(Debug, Clone, PartialEq)]
pub struct NcsState {
    pub x_p: DVector<f64>,
    pub u_s: DVector<f64>,
    pub beta: u32,
}

impl NcsState {
    pub fn new(x_p: DVector<f64>, u_s: DVector<f64>, beta: u32) -> Self {
        NcsState { x_p, u_s, beta }
    }

    pub fn origin(n: usize, m: usize, beta: u32) -> Self {
        NcsState::new(DVector::zeros(n), DVector::zeros(m), beta)
    }
}

/// Controller output: a value to transmit and whether to transmit it.
#[derive(Debug, Clone, PartialEq)]
pub struct NcsInput {
    pub u_c: DVector<f64>,
    pub gamma: bool,
}

impl NcsInput {
    pub fn new(u_c: DVector<f64>, gamma: bool) -> Self {
        NcsInput { u_c, gamma }
    }

    pub fn hold(m: usize) -> Self {
        NcsInput::new(DVector::zeros(m), false)
    }

    /// Input reaching the plant: `u_c` after a transmission, the held value otherwise.
    pub fn applied<'a>(&'a self, x: &'a NcsState) -> &'a DVector<f64> {
        if self.gamma {
            &self.u_c
        } else {
            &x.u_s
        }
    }
}

/// Undisturbed NCS update.
pub fn ncs_step(x: &NcsState, u: &NcsInput, model: &NcsModel) -> Result<NcsState> {
    ncs_step_disturbed(x, u, &DVector::zeros(model.state_dim()), model)
}

/// NCS update with additive plant disturbance `w`.
pub fn ncs_step_disturbed(
    x: &NcsState,
    u: &NcsInput,
    w: &DVector<f64>,
    model: &NcsModel,
) -> Result<NcsState> {
    let beta = model
        .bucket
        .step(x.beta, u.gamma)
        .map_err(|v| Error::TokenViolation { raw: v.raw })?;
    let applied = u.applied(x).clone();
    let x_p = &model.a * &x.x_p + &model.b * &applied + w;
    Ok(NcsState::new(x_p, applied, beta))
}

/// `x_pᵀQx_p + uᵀRu` at the applied input.
pub fn stage_cost(x: &NcsState, u: &NcsInput, model: &NcsModel) -> f64 {
    let applied = u.applied(x);
    x.x_p.dot(&(&model.q * &x.x_p)) + applied.dot(&(&model.r * applied))
}

/// Storage `λ(x) = u_sᵀSu_s`.
pub fn storage(x: &NcsState, model: &NcsModel) -> f64 {
    x.u_s.dot(&(&model.s * &x.u_s))
}

/// Stage cost rotated by the storage function: `ℓ + λ(x) − λ(x⁺)`.
pub fn rotated_stage_cost(x: &NcsState, u: &NcsInput, model: &NcsModel) -> f64 {
    let next_us = u.applied(x);
    stage_cost(x, u, model) + storage(x, model) - next_us.dot(&(&model.s * next_us))
}

/// Cyclic prediction horizon `N_max − (k mod M)`.
pub fn horizon_length(k: usize, n_max: usize, m: usize) -> usize {
    assert!(m >= 1 && n_max >= m, "horizon requires N_max ≥ M ≥ 1");
    n_max - k % m
}
