//! Closed-loop execution of the rollout controller, disturbance sources and log monitors.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::mpc::{ncs_step_disturbed, rotated_stage_cost, stage_cost, Controller, NcsInput, NcsModel, NcsState};
use crate::network::counter_update;
use crate::tube::{error_feedback, TubeParams};

const MAX_REJECTIONS: usize = 100_000;

/// How plant disturbances are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceKind {
    Zero,
    UniformBox { seed: u64 },
    VertexAdversarial { seed: u64 },
    Trace { path: String },
}

impl DisturbanceKind {
    pub fn with_seed(&self, seed: u64) -> DisturbanceKind {
        match self {
            DisturbanceKind::UniformBox { .. } => DisturbanceKind::UniformBox { seed },
            DisturbanceKind::VertexAdversarial { .. } => DisturbanceKind::VertexAdversarial { seed },
            other => other.clone(),
        }
    }
}

/// Stateful disturbance generator; every sample lies in `W_p`.
#[derive(Debug, Clone)]
pub struct DisturbanceModel {
    w_p_set: Polytope,
    source: Source,
}

#[derive(Debug, Clone)]
enum Source {
    Zero,
    Uniform(ChaCha8Rng),
    Vertex(ChaCha8Rng),
    Trace(Vec<DVector<f64>>),
}

impl DisturbanceModel {
    pub fn zero(w_p_set: Polytope) -> Self {
        DisturbanceModel { w_p_set, source: Source::Zero }
    }

    pub fn uniform(w_p_set: Polytope, seed: u64) -> Self {
        DisturbanceModel { w_p_set, source: Source::Uniform(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn vertex_adversarial(w_p_set: Polytope, seed: u64) -> Self {
        DisturbanceModel { w_p_set, source: Source::Vertex(ChaCha8Rng::seed_from_u64(seed)) }
    }

    /// Replays the given samples; each must lie in `W_p`.
    pub fn trace(w_p_set: Polytope, samples: Vec<DVector<f64>>) -> Result<Self> {
        for (k, w) in samples.iter().enumerate() {
            if w.len() != w_p_set.dim() || !w_p_set.contains(w, 1e-12) {
                return Err(Error::config("disturbance.trace", format!("sample {k} lies outside W_p")));
            }
        }
        Ok(DisturbanceModel { w_p_set, source: Source::Trace(samples) })
    }

    /// Reads a headerless CSV trace, one disturbance per row.
    pub fn trace_file(w_p_set: Polytope, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
        let mut samples = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| Error::config("disturbance.trace", e.to_string()))?;
            samples.push(DVector::from_vec(vals));
        }
        Self::trace(w_p_set, samples)
    }

    pub fn from_kind(kind: &DisturbanceKind, w_p_set: Polytope, base: &Path) -> Result<Self> {
        match kind {
            DisturbanceKind::Zero => Ok(Self::zero(w_p_set)),
            DisturbanceKind::UniformBox { seed } => Ok(Self::uniform(w_p_set, *seed)),
            DisturbanceKind::VertexAdversarial { seed } => Ok(Self::vertex_adversarial(w_p_set, *seed)),
            DisturbanceKind::Trace { path } => Self::trace_file(w_p_set, &base.join(path)),
        }
    }

    /// Disturbance at step `k`. Random sources must be sampled in order.
    pub fn sample(&mut self, k: usize) -> Result<DVector<f64>> {
        let dim = self.w_p_set.dim();
        match &mut self.source {
            Source::Zero => Ok(DVector::zeros(dim)),
            Source::Trace(samples) => samples.get(k).cloned().ok_or(Error::TraceExhausted(k)),
            Source::Vertex(rng) => {
                let verts = self.w_p_set.vertices();
                Ok(verts[rng.random_range(0..verts.len())].clone())
            }
            Source::Uniform(rng) => {
                let (lo, hi) = self.w_p_set.bounding_box()?;
                for _ in 0..MAX_REJECTIONS {
                    let w = DVector::from_fn(dim, |j, _| {
                        if hi[j] > lo[j] {
                            rng.random_range(lo[j]..=hi[j])
                        } else {
                            lo[j]
                        }
                    });
                    if self.w_p_set.contains(&w, 0.0) {
                        return Ok(w);
                    }
                }
                Err(Error::InvalidModel("W_p too thin for rejection sampling".into()))
            }
        }
    }
}

/// Initial condition and length of a closed-loop run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub steps: usize,
    pub x0: DVector<f64>,
    pub u_s0: DVector<f64>,
    pub beta0: u32,
}

/// One closed-loop step: state before the update, the decision taken and its costs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: NcsState,
    pub xbar: NcsState,
    /// Transmitted value (zero when `gamma` is false).
    pub u_c: DVector<f64>,
    pub gamma: bool,
    pub s: usize,
    pub horizon: usize,
    pub ocp_value: f64,
    pub rotated_value: f64,
    pub stage_cost: f64,
    pub feasible: bool,
}

impl StepRecord {
    pub fn applied_input(&self) -> &DVector<f64> {
        if self.gamma {
            &self.u_c
        } else {
            &self.x.u_s
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClosedLoopLog {
    pub records: Vec<StepRecord>,
}

/// Runs the rollout controller against the disturbed plant.
///
/// The first step is forced to transmit and starts the nominal state at the real one.
/// An infeasible optimization ends the run with a final record marked infeasible.
pub fn run_closed_loop(
    ctrl: &Controller,
    config: &RunConfig,
    disturbance: &mut DisturbanceModel,
) -> Result<ClosedLoopLog> {
    let model = &ctrl.model;
    let (n, m) = (model.state_dim(), model.input_dim());
    if config.x0.len() != n || config.u_s0.len() != m {
        return Err(Error::config("sim", "x0 / u_s0 dimensions do not match the plant"));
    }
    if config.beta0 > model.bucket.b || config.beta0 + model.bucket.g < model.bucket.c {
        return Err(Error::config("sim.beta0", "initial token level must lie in [c − g, b]"));
    }
    let mut x = NcsState::new(config.x0.clone(), config.u_s0.clone(), config.beta0);
    let mut xbar = x.clone();
    let mut s = 0;
    let mut log = ClosedLoopLog::default();
    for k in 0..config.steps {
        let sol = ctrl.solve_ocp(&x, &xbar, s, k, k == 0)?;
        let horizon = ctrl.horizon(k);
        if !sol.is_optimal() {
            log.records.push(StepRecord {
                k,
                x: x.clone(),
                xbar: xbar.clone(),
                u_c: DVector::zeros(m),
                gamma: false,
                s,
                horizon,
                ocp_value: f64::INFINITY,
                rotated_value: f64::NAN,
                stage_cost: f64::NAN,
                feasible: false,
            });
            break;
        }
        let nominal = &sol.ubar_traj[0];
        let gamma = nominal.gamma;
        let u_c = if gamma {
            error_feedback(&nominal.u_c, &x.x_p, &sol.xbar_traj[0].x_p, &ctrl.tube.k)
        } else {
            DVector::zeros(m)
        };
        let input = NcsInput::new(u_c.clone(), gamma);
        let w = disturbance.sample(k)?;
        let next = ncs_step_disturbed(&x, &input, &w, model)?;
        log.records.push(StepRecord {
            k,
            x: x.clone(),
            xbar: xbar.clone(),
            u_c,
            gamma,
            s,
            horizon,
            ocp_value: sol.value,
            rotated_value: rotated_stage_cost(&sol.xbar_traj[0], nominal, model),
            stage_cost: stage_cost(&x, &input, model),
            feasible: true,
        });
        x = next;
        xbar = sol.xbar_traj[1].clone();
        s = counter_update(s, gamma);
    }
    Ok(log)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

impl ClosedLoopLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn all_feasible(&self) -> bool {
        self.records.iter().all(|r| r.feasible)
    }

    fn header(n: usize, m: usize) -> Vec<String> {
        let mut h = vec!["k".to_string()];
        h.extend((0..n).map(|i| format!("xp{i}")));
        h.extend((0..m).map(|i| format!("us{i}")));
        for f in ["beta", "gamma", "s", "N", "ocp_value", "rotated_value", "stage_cost", "feasible"] {
            h.push(f.into());
        }
        h.extend((0..n).map(|i| format!("xbarp{i}")));
        h.extend((0..m).map(|i| format!("xbarus{i}")));
        h.push("xbarbeta".into());
        h.extend((0..m).map(|i| format!("uc{i}")));
        h
    }

    /// CSV with one row per step; floats carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (n, m) = match self.records.first() {
            Some(r) => (r.x.x_p.len(), r.x.u_s.len()),
            None => return Err(Error::Log("cannot serialize an empty log".into())),
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header(n, m))?;
        for r in &self.records {
            let mut row = vec![r.k.to_string()];
            row.extend(r.x.x_p.iter().map(|&v| fmt_f(v)));
            row.extend(r.x.u_s.iter().map(|&v| fmt_f(v)));
            row.push(r.x.beta.to_string());
            row.push(u8::from(r.gamma).to_string());
            row.push(r.s.to_string());
            row.push(r.horizon.to_string());
            row.push(fmt_f(r.ocp_value));
            row.push(fmt_f(r.rotated_value));
            row.push(fmt_f(r.stage_cost));
            row.push(u8::from(r.feasible).to_string());
            row.extend(r.xbar.x_p.iter().map(|&v| fmt_f(v)));
            row.extend(r.xbar.u_s.iter().map(|&v| fmt_f(v)));
            row.push(r.xbar.beta.to_string());
            row.extend(r.u_c.iter().map(|&v| fmt_f(v)));
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| h.strip_prefix(prefix).is_some_and(|t| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit())))
                .count()
        };
        let (n, m) = (count("xp"), count("us"));
        if n == 0 || m == 0 || header != Self::header(n, m) {
            return Err(Error::Log("unexpected header".into()));
        }
        let mut records = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::Log(format!("row {}: bad {what}", line + 1));
            let mut it = rec.iter();
            let mut next = |what: &str| it.next().ok_or_else(|| bad(what)).map(str::to_string);
            let int = |s: String, what: &str| s.parse::<usize>().map_err(|_| bad(what));
            let float = |s: String, what: &str| s.parse::<f64>().map_err(|_| bad(what));
            let k = int(next("k")?, "k")?;
            let x_p = (0..n).map(|_| float(next("xp")?, "xp")).collect::<Result<Vec<_>>>()?;
            let u_s = (0..m).map(|_| float(next("us")?, "us")).collect::<Result<Vec<_>>>()?;
            let beta = int(next("beta")?, "beta")? as u32;
            let gamma = int(next("gamma")?, "gamma")?;
            let s = int(next("s")?, "s")?;
            let horizon = int(next("N")?, "N")?;
            let ocp_value = float(next("ocp_value")?, "ocp_value")?;
            let rotated_value = float(next("rotated_value")?, "rotated_value")?;
            let stage_cost = float(next("stage_cost")?, "stage_cost")?;
            let feasible = int(next("feasible")?, "feasible")?;
            let xbar_p = (0..n).map(|_| float(next("xbarp")?, "xbarp")).collect::<Result<Vec<_>>>()?;
            let xbar_us = (0..m).map(|_| float(next("xbarus")?, "xbarus")).collect::<Result<Vec<_>>>()?;
            let xbar_beta = int(next("xbarbeta")?, "xbarbeta")? as u32;
            let u_c = (0..m).map(|_| float(next("uc")?, "uc")).collect::<Result<Vec<_>>>()?;
            if gamma > 1 || feasible > 1 {
                return Err(bad("flag"));
            }
            records.push(StepRecord {
                k,
                x: NcsState::new(DVector::from_vec(x_p), DVector::from_vec(u_s), beta),
                xbar: NcsState::new(DVector::from_vec(xbar_p), DVector::from_vec(xbar_us), xbar_beta),
                u_c: DVector::from_vec(u_c),
                gamma: gamma == 1,
                s,
                horizon,
                ocp_value,
                rotated_value,
                stage_cost,
                feasible: feasible == 1,
            });
        }
        Ok(ClosedLoopLog { records })
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Monitor results for a closed-loop log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub steps: usize,
    pub all_feasible: bool,
    /// Fewest transmissions in any window of `H` consecutive steps (`None` if the log is shorter).
    pub window_min: Option<usize>,
    pub constraint_violations: usize,
    /// Steps at which the real-minus-nominal error leaves `Ω_p × KΩ_p × {0}`.
    pub tube_violations: Vec<usize>,
    pub tail_xbar_norm: f64,
    pub tail_us_norm: f64,
    pub transmissions: usize,
    pub tokens_spent: u64,
    pub token_budget: u64,
    /// Records inconsistent with the step index, counter recurrence or bucket update.
    pub bookkeeping_errors: Vec<usize>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.all_feasible
            && self.window_min.is_none_or(|w| w >= 1)
            && self.constraint_violations == 0
            && self.tube_violations.is_empty()
            && self.tokens_spent <= self.token_budget
            && self.bookkeeping_errors.is_empty()
    }
}

/// Tolerance used by the log monitors for set membership.
pub const CHECK_TOL: f64 = 1e-8;

/// Re-verifies transmission windows, constraints, tube membership, convergence and tokens.
pub fn check_log(log: &ClosedLoopLog, model: &NcsModel, tube: &TubeParams, hold: usize) -> CheckReport {
    let recs = &log.records;
    let steps = recs.len();
    let gammas: Vec<usize> = recs.iter().map(|r| usize::from(r.gamma)).collect();
    let window_min = (hold >= 1 && steps >= hold)
        .then(|| gammas.windows(hold).map(|w| w.iter().sum()).min().unwrap_or(0));

    let bucket = &model.bucket;
    let mut constraint_violations = 0;
    let mut tube_violations = Vec::new();
    let mut bookkeeping_errors = Vec::new();
    for (i, r) in recs.iter().enumerate() {
        let x_ok = model.x_p_set.contains(&r.x.x_p, CHECK_TOL);
        let us_ok = model.u_p_set.contains(&r.x.u_s, CHECK_TOL);
        let u_ok = !r.feasible || model.u_p_set.contains(r.applied_input(), CHECK_TOL);
        let beta_ok = r.x.beta <= bucket.b;
        constraint_violations += [x_ok, us_ok, u_ok, beta_ok].iter().filter(|ok| !**ok).count();

        let e_p = &r.x.x_p - &r.xbar.x_p;
        let e_u = &r.x.u_s - &r.xbar.u_s;
        if !tube.contains_error(&e_p, &e_u, CHECK_TOL) || r.x.beta != r.xbar.beta {
            tube_violations.push(r.k);
        }

        let mut consistent = r.k == i;
        if i > 0 {
            let prev = &recs[i - 1];
            consistent &= r.s == counter_update(prev.s, prev.gamma);
            consistent &= bucket.step(prev.x.beta, prev.gamma) == Ok(r.x.beta);
            consistent &= r.x.u_s == *prev.applied_input();
        } else {
            consistent &= r.s == 0;
        }
        if !consistent {
            bookkeeping_errors.push(r.k);
        }
    }

    let tail_start = steps.saturating_sub(10);
    let tail = &recs[tail_start..];
    let tail_xbar_norm = tail.iter().map(|r| r.xbar.x_p.norm()).fold(0.0, f64::max);
    let tail_us_norm = tail.iter().map(|r| r.xbar.u_s.norm()).fold(0.0, f64::max);
    let transmissions = gammas.iter().sum::<usize>();
    let beta0 = recs.first().map_or(0, |r| u64::from(r.x.beta));
    CheckReport {
        steps,
        all_feasible: log.all_feasible(),
        window_min,
        constraint_violations,
        tube_violations,
        tail_xbar_norm,
        tail_us_norm,
        transmissions,
        tokens_spent: u64::from(bucket.c) * transmissions as u64,
        token_budget: beta0 + steps as u64 * u64::from(bucket.g),
        bookkeeping_errors,
    }
}
