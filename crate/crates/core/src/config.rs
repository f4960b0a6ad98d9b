//! Experiment configuration files.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::linalg::{is_positive_definite, matrix_from_rows, min_symmetric_eigenvalue};
use crate::mpc::{synth_terminal, verify_terminal, Controller, NcsModel, TerminalIngredients};
use crate::network::BucketParams;
use crate::sim::{DisturbanceKind, DisturbanceModel, RunConfig};
use crate::tube::{synthesize_tube, tighten, verify_rci, TightenedSets, TubeParams, TubeTemplate};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetsJson {
    x_p: Polytope,
    u_p: Polytope,
    w_p: Polytope,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsJson {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    s: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HorizonsJson {
    #[serde(rename = "N_max")]
    n_max: usize,
    #[serde(rename = "H")]
    hold: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimJson {
    #[serde(rename = "T_steps")]
    steps: usize,
    x0: Vec<f64>,
    u_s0: Vec<f64>,
    beta0: u32,
    disturbance: DisturbanceKind,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TubeJson {
    #[serde(default)]
    template: TubeTemplate,
    #[serde(rename = "K", default)]
    gain: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArtifactsJson {
    tube: Option<PathBuf>,
    terminal: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigJson {
    plant: PlantJson,
    sets: SetsJson,
    bucket: BucketParams,
    weights: WeightsJson,
    horizons: HorizonsJson,
    sim: SimJson,
    #[serde(default)]
    tube: TubeJson,
    #[serde(default)]
    artifacts: ArtifactsJson,
}

/// Validated experiment: model, horizons, simulation settings and optional precomputed artifacts.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: NcsModel,
    pub n_max: usize,
    pub hold: usize,
    /// Cycle length `⌈c/g⌉`.
    pub m: usize,
    pub run: RunConfig,
    pub disturbance: DisturbanceKind,
    pub template: TubeTemplate,
    pub gain: Option<DMatrix<f64>>,
    pub tube_path: Option<PathBuf>,
    pub terminal_path: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    matrix_from_rows(rows).map_err(|e| Error::config(field, e.to_string()))
}

fn expect_shape(field: &str, m: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::config(
            field,
            format!("expected {}x{} matrix, got {}x{}", shape.0, shape.1, m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn expect_len(field: &str, len: usize, expected: usize) -> Result<()> {
    if len != expected {
        return Err(Error::config(field, format!("expected dimension {expected}, got {len}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: ConfigJson = serde_json::from_str(text).map_err(|e| Error::config("<json>", e.to_string()))?;
        Self::from_raw(raw, base_dir)
    }

    fn from_raw(raw: ConfigJson, base_dir: &Path) -> Result<Self> {
        let a = matrix("plant.A", &raw.plant.a)?;
        let n = a.nrows();
        expect_shape("plant.A", &a, (n, n))?;
        let b = matrix("plant.B", &raw.plant.b)?;
        let m = b.ncols();
        expect_shape("plant.B", &b, (n, m))?;
        expect_len("sets.x_p", raw.sets.x_p.dim(), n)?;
        expect_len("sets.u_p", raw.sets.u_p.dim(), m)?;
        expect_len("sets.w_p", raw.sets.w_p.dim(), n)?;
        raw.bucket.validate().map_err(|e| Error::config("bucket", e.to_string()))?;

        let q = matrix("weights.Q", &raw.weights.q)?;
        expect_shape("weights.Q", &q, (n, n))?;
        let r = matrix("weights.R", &raw.weights.r)?;
        expect_shape("weights.R", &r, (m, m))?;
        let s = matrix("weights.S", &raw.weights.s)?;
        expect_shape("weights.S", &s, (m, m))?;
        for (field, w) in [("weights.Q", &q), ("weights.R", &r), ("weights.S", &s)] {
            if !is_positive_definite(w) {
                return Err(Error::config(field, "must be symmetric positive definite"));
            }
        }
        if min_symmetric_eigenvalue(&(&r - &s)) < -1e-12 {
            return Err(Error::config("weights.S", "R − S must be positive semidefinite (S ⪯ R)"));
        }

        let cycle = raw.bucket.cycle_length();
        let (n_max, hold) = (raw.horizons.n_max, raw.horizons.hold);
        if hold < cycle {
            return Err(Error::config(
                "horizons.H",
                format!("H = {hold} is below the cycle length M = ⌈c/g⌉ = {cycle}"),
            ));
        }
        if n_max < hold {
            return Err(Error::config("horizons.N_max", format!("N_max = {n_max} must be ≥ H = {hold}")));
        }

        expect_len("sim.x0", raw.sim.x0.len(), n)?;
        expect_len("sim.u_s0", raw.sim.u_s0.len(), m)?;
        let bucket = raw.bucket;
        if raw.sim.beta0 > bucket.b || raw.sim.beta0 + bucket.g < bucket.c {
            return Err(Error::config(
                "sim.beta0",
                format!("must lie in [c − g, b] = [{}, {}]", bucket.c - bucket.g, bucket.b),
            ));
        }
        let x0 = DVector::from_vec(raw.sim.x0);
        let u_s0 = DVector::from_vec(raw.sim.u_s0);
        if !raw.sets.x_p.contains(&x0, 0.0) {
            return Err(Error::config("sim.x0", "initial plant state lies outside X_p"));
        }
        if !raw.sets.u_p.contains(&u_s0, 0.0) {
            return Err(Error::config("sim.u_s0", "initial held input lies outside U_p"));
        }

        let gain = match &raw.tube.gain {
            Some(rows) => {
                let k = matrix("tube.K", rows)?;
                expect_shape("tube.K", &k, (m, n))?;
                Some(k)
            }
            None => None,
        };

        let model = NcsModel::new(a, b, raw.sets.x_p, raw.sets.u_p, raw.sets.w_p, bucket, q, r, s)
            .map_err(|e| Error::config("model", e.to_string()))?;
        Ok(ExperimentConfig {
            model,
            n_max,
            hold,
            m: cycle,
            run: RunConfig { steps: raw.sim.steps, x0, u_s0, beta0: raw.sim.beta0 },
            disturbance: raw.sim.disturbance,
            template: raw.tube.template,
            gain,
            tube_path: raw.artifacts.tube,
            terminal_path: raw.artifacts.terminal,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Tube from the artifact file when configured (re-verified), otherwise synthesized.
    pub fn tube(&self) -> Result<TubeParams> {
        let model = &self.model;
        if let Some(path) = &self.tube_path {
            let text = std::fs::read_to_string(self.base_dir.join(path))?;
            let tube: TubeParams = serde_json::from_str(&text)?;
            if tube.hold < self.hold
                || !verify_rci(&tube.omega_p, &tube.k, self.hold, &model.a, &model.b, &model.w_p_set, 1e-8)?
            {
                return Err(Error::TubeSynthesis(format!("tube file {} failed verification", path.display())));
            }
            return Ok(tube);
        }
        synthesize_tube(
            &model.a,
            &model.b,
            &model.q,
            &model.r,
            &model.w_p_set,
            self.hold,
            &self.template,
            self.gain.clone(),
        )
    }

    pub fn tightened(&self, tube: &TubeParams) -> Result<TightenedSets> {
        tighten(&self.model.x_p_set, &self.model.u_p_set, tube)
    }

    /// Terminal ingredients from the artifact file when configured (re-verified), otherwise synthesized.
    pub fn terminal(&self, tightened: &TightenedSets) -> Result<TerminalIngredients> {
        if let Some(path) = &self.terminal_path {
            let text = std::fs::read_to_string(self.base_dir.join(path))?;
            let ti: TerminalIngredients = serde_json::from_str(&text)?;
            if !verify_terminal(&ti, &self.model, tightened) {
                return Err(Error::TerminalSynthesis(format!(
                    "terminal file {} failed verification",
                    path.display()
                )));
            }
            return Ok(ti);
        }
        synth_terminal(&self.model, tightened)
    }

    pub fn controller(&self) -> Result<Controller> {
        let tube = self.tube()?;
        let tightened = self.tightened(&tube)?;
        let terminal = self.terminal(&tightened)?;
        Controller::new(self.model.clone(), tube, tightened, terminal, self.n_max, self.hold)
    }

    pub fn disturbance_model(&self, seed: Option<u64>) -> Result<DisturbanceModel> {
        let kind = match seed {
            Some(s) => self.disturbance.with_seed(s),
            None => self.disturbance.clone(),
        };
        DisturbanceModel::from_kind(&kind, self.model.w_p_set.clone(), &self.base_dir)
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    ExperimentConfig::from_json_str(&text, &base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> String {
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/double_integrator.json")).unwrap()
    }

    fn with(edit: impl FnOnce(&mut serde_json::Value)) -> Result<ExperimentConfig> {
        let mut v: serde_json::Value = serde_json::from_str(&example()).unwrap();
        edit(&mut v);
        ExperimentConfig::from_json_str(&v.to_string(), Path::new("."))
    }

    fn field_of(r: Result<ExperimentConfig>) -> String {
        match r {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bundled_example_loads() {
        let cfg = load_config(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/double_integrator.json"))).unwrap();
        assert_eq!(cfg.m, 3);
        assert_eq!((cfg.n_max, cfg.hold), (6, 5));
        assert_eq!(cfg.run.steps, 100);
        assert_eq!(cfg.run.beta0, 10);
        assert_eq!(cfg.model.w_p_set, Polytope::symmetric_box(&[0.02, 0.02]).unwrap());
    }

    #[test]
    fn hold_below_cycle_rejected() {
        assert_eq!(field_of(with(|v| v["horizons"]["H"] = 2.into())), "horizons.H");
    }

    #[test]
    fn storage_weight_above_input_weight_rejected() {
        assert_eq!(field_of(with(|v| v["weights"]["S"] = serde_json::json!([[2.0]]))), "weights.S");
    }

    #[test]
    fn other_rejections() {
        assert_eq!(field_of(with(|v| v["horizons"]["N_max"] = 4.into())), "horizons.N_max");
        assert_eq!(field_of(with(|v| v["sim"]["beta0"] = 1.into())), "sim.beta0");
        assert_eq!(field_of(with(|v| v["sim"]["x0"] = serde_json::json!([1.0]))), "sim.x0");
        assert_eq!(field_of(with(|v| v["plant"]["B"] = serde_json::json!([[1.0]]))), "plant.B");
        assert_eq!(field_of(with(|v| v["weights"]["Q"] = serde_json::json!([[0, 0], [0, 1]]))), "weights.Q");
        assert_eq!(field_of(with(|v| v["bucket"]["g"] = 0.into())), "bucket");
        assert_eq!(field_of(with(|v| v["extra"] = 1.into())), "<json>");
        assert_eq!(field_of(with(|v| v["sim"]["x0"] = serde_json::json!([9.0, 0.0]))), "sim.x0");
    }
}
