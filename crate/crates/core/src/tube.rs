//! Multi-step robust invariant tubes for zero-order-held error feedback.
//!
//! After a transmission at step 0 the actuator holds `v̄_c + K(x_p − x̄_p)` for up to `H`
//! steps. With `A_i = Aⁱ` and `B_i = Σ_{j<i} Aʲ B`, the plant error after `i` held steps is
//! `(A_i + B_i K) e_p(0) + Σ_{j<i} Aʲ w(i−1−j)`, so `Ω_p` keeps the error bounded when
//!
//! ```text
//!     (A_i + B_i K) Ω_p ⊕ D_i ⊆ Ω_p   for i = 1..H,   D_i = W_p ⊕ A W_p ⊕ … ⊕ A^{i−1} W_p.
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Polytope, FACET_TOL};
use crate::linalg::{lqr_gain, matrix_from_rows, matrix_to_rows};

/// `A_i` and `B_i` for `i = 0..=H`.
#[derive(Debug, Clone)]
pub struct LiftedMatrices {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

impl LiftedMatrices {
    pub fn hold(&self) -> usize {
        self.a.len() - 1
    }

    /// `A_i + B_i K`.
    pub fn closed_loop(&self, i: usize, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a[i] + &self.b[i] * k
    }
}

fn check_plant(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "plant A must be square",
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch {
            context: "plant B rows",
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    Ok(())
}

pub fn lift(a: &DMatrix<f64>, b: &DMatrix<f64>, hold: usize) -> Result<LiftedMatrices> {
    check_plant(a, b)?;
    if hold < 1 {
        return Err(Error::InvalidModel("hold length H must be ≥ 1".into()));
    }
    let n = a.nrows();
    let mut a_list = vec![DMatrix::identity(n, n)];
    let mut b_list = vec![DMatrix::zeros(n, b.ncols())];
    for i in 0..hold {
        a_list.push(a * &a_list[i]);
        b_list.push(a * &b_list[i] + b);
    }
    Ok(LiftedMatrices {
        a: a_list,
        b: b_list,
    })
}

/// Accumulated disturbance sets `[D_1, …, D_H]`.
pub fn disturbance_sums(a: &DMatrix<f64>, w_p: &Polytope, hold: usize) -> Result<Vec<Polytope>> {
    if w_p.dim() != a.nrows() {
        return Err(Error::DimensionMismatch {
            context: "disturbance set",
            expected: a.nrows(),
            got: w_p.dim(),
        });
    }
    let mut out = Vec::with_capacity(hold);
    let mut power = DMatrix::identity(a.nrows(), a.ncols());
    let mut acc = w_p.clone();
    out.push(acc.clone());
    for _ in 1..hold {
        power = a * &power;
        acc = acc.minkowski_sum(&w_p.affine_image(&power)?)?;
        out.push(acc.clone());
    }
    Ok(out)
}

/// Checks `(A_i + B_i K) Ω_p ⊕ D_i ⊆ Ω_p` for every `i ∈ [1, H]`.
pub fn verify_rci(
    omega_p: &Polytope,
    k: &DMatrix<f64>,
    hold: usize,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w_p: &Polytope,
    tol: f64,
) -> Result<bool> {
    let lifted = lift(a, b, hold)?;
    let sums = disturbance_sums(a, w_p, hold)?;
    for i in 1..=hold {
        let image = omega_p
            .affine_image(&lifted.closed_loop(i, k))?
            .minkowski_sum(&sums[i - 1])?;
        if !image.is_subset_of(omega_p, tol) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Smallest `ρ > 0` such that `ρ·template` satisfies the multi-step invariance condition.
///
/// Per facet `(e, h_e)` and step `i` this needs `ρ σ_T((A_i+B_iK)ᵀe) + σ_{D_i}(e) ≤ ρ h_e`,
/// solved in closed form; the answer is the maximum over all pairs.
pub fn rci_scaling(
    template: &Polytope,
    k: &DMatrix<f64>,
    hold: usize,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w_p: &Polytope,
) -> Result<f64> {
    if template.is_empty() {
        return Err(Error::TubeSynthesis("empty template".into()));
    }
    let lifted = lift(a, b, hold)?;
    let sums = disturbance_sums(a, w_p, hold)?;
    let mut rho: f64 = 0.0;
    for i in 1..=hold {
        let phi_t = lifted.closed_loop(i, k).transpose();
        for f in 0..template.num_facets() {
            let e = template.normals().row(f).transpose();
            let h = template.offsets()[f];
            if h <= FACET_TOL {
                return Err(Error::TubeSynthesis(
                    "template must contain the origin in its interior".into(),
                ));
            }
            let contraction = template.support(&(&phi_t * &e))? / h;
            if contraction >= 1.0 {
                return Err(Error::TubeSynthesis(format!(
                    "template is not contracted at hold step {i} (coefficient {contraction:.4} ≥ 1); \
                     try a different gain or template"
                )));
            }
            rho = rho.max(sums[i - 1].support(&e)? / (h - contraction * h));
        }
    }
    Ok(rho)
}

/// Minimal uniform scaling of `template` satisfying the multi-step invariance condition.
pub fn synth_rci_scaled_template(
    template: &Polytope,
    k: &DMatrix<f64>,
    hold: usize,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w_p: &Polytope,
) -> Result<Polytope> {
    let rho = rci_scaling(template, k, hold, a, b, w_p)?;
    let omega = template.scaled(rho);
    if !verify_rci(&omega, k, hold, a, b, w_p, 1e-8)? {
        return Err(Error::TubeSynthesis(format!(
            "scaled template (ρ = {rho}) failed verification"
        )));
    }
    Ok(omega)
}

/// Outer limit of the error sets reachable under held feedback, used as a template shape.
///
/// Starting from `W_p`, repeatedly forms `hull(T ∪ ⋃_i ((A_i+B_iK) T ⊕ D_i))` until the
/// set grows by less than `rel_tol` relative to its size. The result is nearly invariant,
/// so scaling it with [`synth_rci_scaled_template`] yields `ρ` close to one.
/// Facet normals closer than this are merged in hull templates; nearly parallel neighbours
/// make the vertex representation ill-conditioned.
const FACET_MERGE_TOL: f64 = 1e-5;

/// Drops every facet whose unit normal lies within `tol` of an already kept one. The result
/// contains `p`.
fn merge_near_parallel_facets(p: &Polytope, tol: f64) -> Result<Polytope> {
    let normals = p.normals();
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..p.num_facets() {
        let close = kept.iter().any(|&j| (normals.row(i) - normals.row(j)).norm() <= tol);
        if !close {
            kept.push(i);
        }
    }
    if kept.len() == p.num_facets() {
        return Ok(p.clone());
    }
    let rows: Vec<_> = kept.iter().map(|&i| normals.row(i)).collect();
    let offsets = DVector::from_iterator(kept.len(), kept.iter().map(|&i| p.offsets()[i]));
    Polytope::from_halfspaces(DMatrix::from_rows(&rows), offsets)
}

pub fn reachable_hull_template(
    k: &DMatrix<f64>,
    hold: usize,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w_p: &Polytope,
    max_iterations: usize,
    rel_tol: f64,
) -> Result<Polytope> {
    let lifted = lift(a, b, hold)?;
    let sums = disturbance_sums(a, w_p, hold)?;
    let maps: Vec<DMatrix<f64>> = (1..=hold).map(|i| lifted.closed_loop(i, k)).collect();
    let dim = a.nrows();
    let mut current = w_p.minimal();
    for _ in 0..max_iterations {
        let mut points: Vec<DVector<f64>> = current.vertices().to_vec();
        for (phi, d) in maps.iter().zip(&sums) {
            for v in current.vertices() {
                let image = phi * v;
                for dv in d.vertices() {
                    points.push(&image + dv);
                }
            }
        }
        let next = Polytope::from_vertices(dim, &points)?;
        let size = current.offsets().iter().copied().fold(0.0, f64::max);
        let grown = next
            .vertices()
            .iter()
            .map(|v| current.max_violation(v))
            .fold(f64::NEG_INFINITY, f64::max);
        current = next;
        if !size.is_finite() || size > 1e12 {
            break;
        }
        if grown <= rel_tol * size {
            return merge_near_parallel_facets(&current, FACET_MERGE_TOL);
        }
    }
    Err(Error::TubeSynthesis(format!(
        "reachable error hull did not settle within {max_iterations} iterations"
    )))
}

/// Held feedback `v_c + K (x_p − x̄_p)`.
pub fn error_feedback(
    v_c: &DVector<f64>,
    x_p: &DVector<f64>,
    xbar_p: &DVector<f64>,
    k: &DMatrix<f64>,
) -> DVector<f64> {
    v_c + k * (x_p - xbar_p)
}

/// Ancillary gain, error set and admissible hold length.
#[derive(Debug, Clone)]
pub struct TubeParams {
    pub k: DMatrix<f64>,
    pub omega_p: Polytope,
    pub k_omega_p: Polytope,
    pub hold: usize,
}

impl TubeParams {
    pub fn new(k: DMatrix<f64>, omega_p: Polytope, hold: usize) -> Result<Self> {
        if k.ncols() != omega_p.dim() {
            return Err(Error::DimensionMismatch {
                context: "tube gain columns",
                expected: omega_p.dim(),
                got: k.ncols(),
            });
        }
        if !omega_p.contains(&DVector::zeros(omega_p.dim()), FACET_TOL) {
            return Err(Error::TubeSynthesis("Ω_p must contain the origin".into()));
        }
        let k_omega_p = omega_p.affine_image(&k)?;
        Ok(TubeParams {
            k,
            omega_p,
            k_omega_p,
            hold,
        })
    }

    /// Whether `(e_p, e_u)` lies in `Ω_p × KΩ_p`.
    pub fn contains_error(&self, e_p: &DVector<f64>, e_u: &DVector<f64>, tol: f64) -> bool {
        self.omega_p.contains(e_p, tol) && self.k_omega_p.contains(e_u, tol)
    }
}

#[derive(Serialize, Deserialize)]
struct TubeParamsJson {
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    omega_p: Polytope,
    k_omega_p: Polytope,
    #[serde(rename = "H")]
    hold: usize,
}

impl Serialize for TubeParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TubeParamsJson {
            k: matrix_to_rows(&self.k),
            omega_p: self.omega_p.clone(),
            k_omega_p: self.k_omega_p.clone(),
            hold: self.hold,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TubeParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = TubeParamsJson::deserialize(d)?;
        let k = matrix_from_rows(&raw.k).map_err(serde::de::Error::custom)?;
        let mut tube = TubeParams::new(k, raw.omega_p, raw.hold).map_err(serde::de::Error::custom)?;
        tube.k_omega_p = raw.k_omega_p;
        Ok(tube)
    }
}

/// Shape family used to synthesize `Ω_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TubeTemplate {
    /// Unit box in plant-state coordinates.
    Box,
    /// Converged hull of reachable held-feedback errors.
    ReachableHull {
        #[serde(default = "default_hull_iterations")]
        max_iterations: usize,
        #[serde(default = "default_hull_tol")]
        rel_tol: f64,
    },
}

fn default_hull_iterations() -> usize {
    500
}

fn default_hull_tol() -> f64 {
    1e-7
}

impl Default for TubeTemplate {
    fn default() -> Self {
        TubeTemplate::ReachableHull {
            max_iterations: default_hull_iterations(),
            rel_tol: default_hull_tol(),
        }
    }
}

/// Full tube design: LQ gain (unless given), template, minimal scaling, verification.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_tube(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    w_p: &Polytope,
    hold: usize,
    template: &TubeTemplate,
    gain: Option<DMatrix<f64>>,
) -> Result<TubeParams> {
    check_plant(a, b)?;
    let k = match gain {
        Some(k) => k,
        None => lqr_gain(a, b, q, r)?,
    };
    let shape = match template {
        TubeTemplate::Box => Polytope::symmetric_box(&vec![1.0; a.nrows()])?,
        TubeTemplate::ReachableHull {
            max_iterations,
            rel_tol,
        } => reachable_hull_template(&k, hold, a, b, w_p, *max_iterations, *rel_tol)?,
    };
    let omega = synth_rci_scaled_template(&shape, &k, hold, a, b, w_p)?;
    TubeParams::new(k, omega, hold)
}

/// State and input sets shrunk by the tube.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TightenedSets {
    pub x_p: Polytope,
    pub u_p: Polytope,
}

/// `(X_p ⊖ Ω_p, U_p ⊖ KΩ_p)`; both must keep the origin in their interior.
pub fn tighten(x_p_set: &Polytope, u_p_set: &Polytope, tube: &TubeParams) -> Result<TightenedSets> {
    let x_p = x_p_set.pontryagin_diff(&tube.omega_p)?;
    let u_p = u_p_set.pontryagin_diff(&tube.k_omega_p)?;
    for (name, set) in [("X_p ⊖ Ω_p", &x_p), ("U_p ⊖ KΩ_p", &u_p)] {
        if set.is_empty() {
            return Err(Error::Tightening(format!("{name} is empty; the tube is too large")));
        }
        if set.origin_margin() <= FACET_TOL {
            return Err(Error::Tightening(format!(
                "{name} does not contain the origin in its interior; the tube is too large"
            )));
        }
    }
    Ok(TightenedSets { x_p, u_p })
}

/// Error sequence `(e_p(i), e_u(i))`, `i = 1..=len(w)`, after a transmission at step 0
/// that sets the input error to `K e_p(0)`; the input error is then held.
pub fn error_trajectory(
    k: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e0_p: &DVector<f64>,
    disturbances: &[DVector<f64>],
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let e_u = k * e0_p;
    let mut e_p = e0_p.clone();
    let mut out = Vec::with_capacity(disturbances.len());
    for w in disturbances {
        e_p = a * &e_p + b * &e_u + w;
        out.push((e_p.clone(), e_u.clone()));
    }
    out
}

/// Simulates the error recursion over `H` held steps and reports whether every error
/// stays in `Ω_p × KΩ_p`.
pub fn error_containment_trial(
    tube: &TubeParams,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e0_p: &DVector<f64>,
    disturbances: &[DVector<f64>],
    tol: f64,
) -> bool {
    error_trajectory(&tube.k, a, b, e0_p, disturbances)
        .iter()
        .all(|(e_p, e_u)| tube.contains_error(e_p, e_u, tol))
}
