use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{NcsInput, NcsModel, NcsState};
use crate::error::{Error, Result};
use crate::geometry::{Polytope, FACET_TOL};
use crate::linalg::{
    controllability_rank, lqr_gain, matrix_from_rows, matrix_to_rows, min_symmetric_eigenvalue,
    solve_discrete_lyapunov, spectral_radius,
};
use crate::tube::{lift, LiftedMatrices, TightenedSets};

const LYAPUNOV_MARGIN: f64 = 1e-8;
const MAX_INVARIANT_ITERATIONS: usize = 100;
const TERMINAL_TOL: f64 = 1e-9;

/// Terminal gain, cost and region for the `M`-step cycle `κ_0 = (K_f x_p, 1)`, `κ_i = (0, 0)`.
#[derive(Debug, Clone)]
pub struct TerminalIngredients {
    pub k_f: DMatrix<f64>,
    pub p_f: DMatrix<f64>,
    pub x_f_p: Polytope,
    pub m: usize,
}

#[derive(Serialize, Deserialize)]
struct TerminalJson {
    #[serde(rename = "K_f")]
    k_f: Vec<Vec<f64>>,
    #[serde(rename = "P_f")]
    p_f: Vec<Vec<f64>>,
    x_f_p: Polytope,
    #[serde(rename = "M")]
    m: usize,
}

impl Serialize for TerminalIngredients {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TerminalJson {
            k_f: matrix_to_rows(&self.k_f),
            p_f: matrix_to_rows(&self.p_f),
            x_f_p: self.x_f_p.clone(),
            m: self.m,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TerminalIngredients {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = TerminalJson::deserialize(d)?;
        Ok(TerminalIngredients {
            k_f: matrix_from_rows(&raw.k_f).map_err(serde::de::Error::custom)?,
            p_f: matrix_from_rows(&raw.p_f).map_err(serde::de::Error::custom)?,
            x_f_p: raw.x_f_p,
            m: raw.m,
        })
    }
}

/// `Σ_{i<M} (A_i+B_iK)ᵀQ(A_i+B_iK) + M KᵀRK`: the cost accrued over one terminal cycle.
fn cycle_cost(lifted: &LiftedMatrices, k: &DMatrix<f64>, model: &NcsModel, m: usize) -> DMatrix<f64> {
    let mut acc = k.transpose() * &model.r * k * m as f64;
    for i in 0..m {
        let phi = lifted.closed_loop(i, k);
        acc += phi.transpose() * &model.q * &phi;
    }
    acc
}

/// `{x : Gᵢ x ∈ Pᵢ ∀i}` for a list of linear maps and sets.
fn stacked_preimages(dim: usize, parts: &[(DMatrix<f64>, &Polytope)]) -> Result<Polytope> {
    let rows: usize = parts.iter().map(|(_, p)| p.num_facets()).sum();
    let mut normals = DMatrix::zeros(rows, dim);
    let mut offsets = DVector::zeros(rows);
    let mut at = 0;
    for (map, set) in parts {
        let f = set.num_facets();
        normals.view_mut((at, 0), (f, dim)).copy_from(&(set.normals() * map));
        offsets.rows_mut(at, f).copy_from(set.offsets());
        at += f;
    }
    let p = Polytope::from_halfspaces(normals, offsets)?;
    Ok(if p.is_empty() || p.vertices().is_empty() {
        Polytope::empty(dim)
    } else {
        p.minimal()
    })
}

/// Terminal gain from the lifted LQ problem, Lyapunov terminal cost and maximal admissible
/// invariant terminal region.
pub fn synth_terminal(model: &NcsModel, tightened: &TightenedSets) -> Result<TerminalIngredients> {
    let m = model.cycle_length();
    let n = model.state_dim();
    let lifted = lift(&model.a, &model.b, m)?;
    let (a_m, b_m) = (&lifted.a[m], &lifted.b[m]);
    if controllability_rank(a_m, b_m) < n {
        return Err(Error::TerminalSynthesis("lifted pair (A_M, B_M) is not controllable".into()));
    }
    let k_f = lqr_gain(a_m, b_m, &model.q, &(&model.r * m as f64))?;
    let phi = lifted.closed_loop(m, &k_f);
    if spectral_radius(&phi) >= 1.0 {
        return Err(Error::TerminalSynthesis("terminal gain is not stabilizing".into()));
    }
    let rhs = cycle_cost(&lifted, &k_f, model, m) + DMatrix::identity(n, n) * LYAPUNOV_MARGIN;
    let p_f = solve_discrete_lyapunov(&phi, &rhs)?;

    let mut parts: Vec<(DMatrix<f64>, &Polytope)> = vec![
        (DMatrix::identity(n, n), &tightened.x_p),
        (k_f.clone(), &tightened.u_p),
    ];
    for i in 1..m {
        parts.push((lifted.closed_loop(i, &k_f), &tightened.x_p));
    }
    let admissible = stacked_preimages(n, &parts)?;
    if admissible.is_empty() {
        return Err(Error::TerminalSynthesis("admissible terminal region is empty".into()));
    }
    let mut region = admissible.clone();
    for _ in 0..MAX_INVARIANT_ITERATIONS {
        let mut step = parts.clone();
        step.push((phi.clone(), &region));
        let next = stacked_preimages(n, &step)?;
        if next.is_empty() {
            return Err(Error::TerminalSynthesis("terminal region collapsed to the empty set".into()));
        }
        if region.is_subset_of(&next, TERMINAL_TOL) {
            if next.origin_margin() <= FACET_TOL {
                return Err(Error::TerminalSynthesis(
                    "terminal region does not contain the origin in its interior".into(),
                ));
            }
            return Ok(TerminalIngredients {
                k_f,
                p_f,
                x_f_p: next,
                m,
            });
        }
        region = next;
    }
    Err(Error::TerminalSynthesis(format!(
        "invariant-set recursion did not converge within {MAX_INVARIANT_ITERATIONS} iterations"
    )))
}

/// Smallest eigenvalue of `P_f − ΦᵀP_fΦ − Σ_{i<M}(A_i+B_iK_f)ᵀQ(A_i+B_iK_f) − M K_fᵀRK_f`.
pub fn terminal_cost_residual(ti: &TerminalIngredients, model: &NcsModel) -> Result<f64> {
    let lifted = lift(&model.a, &model.b, ti.m)?;
    let phi = lifted.closed_loop(ti.m, &ti.k_f);
    let residual = &ti.p_f - phi.transpose() * &ti.p_f * &phi - cycle_cost(&lifted, &ti.k_f, model, ti.m);
    Ok(min_symmetric_eigenvalue(&residual))
}

/// Checks the terminal-set containments and the terminal-cost decrease condition.
pub fn verify_terminal(ti: &TerminalIngredients, model: &NcsModel, tightened: &TightenedSets) -> bool {
    let n = model.state_dim();
    if ti.m != model.cycle_length()
        || ti.x_f_p.dim() != n
        || ti.k_f.shape() != (model.input_dim(), n)
        || ti.p_f.shape() != (n, n)
        || ti.x_f_p.is_empty()
    {
        return false;
    }
    let Ok(lifted) = lift(&model.a, &model.b, ti.m) else {
        return false;
    };
    let contained = |map: &DMatrix<f64>, target: &Polytope| match ti.x_f_p.affine_image(map) {
        Ok(img) => img.is_subset_of(target, TERMINAL_TOL),
        Err(_) => false,
    };
    if !ti.x_f_p.is_subset_of(&tightened.x_p, TERMINAL_TOL) || !contained(&ti.k_f, &tightened.u_p) {
        return false;
    }
    if !(1..ti.m).all(|i| contained(&lifted.closed_loop(i, &ti.k_f), &tightened.x_p)) {
        return false;
    }
    if !contained(&lifted.closed_loop(ti.m, &ti.k_f), &ti.x_f_p) {
        return false;
    }
    matches!(terminal_cost_residual(ti, model), Ok(e) if e >= -TERMINAL_TOL)
}

/// Terminal control law at cycle position `i`: transmit `K_f x̄_p` at `i = 0`, hold otherwise.
pub fn terminal_control(xbar: &NcsState, ti: &TerminalIngredients, i: usize) -> NcsInput {
    assert!(i < ti.m, "cycle position must be below M");
    if i == 0 {
        NcsInput::new(&ti.k_f * &xbar.x_p, true)
    } else {
        NcsInput::hold(ti.k_f.nrows())
    }
}
