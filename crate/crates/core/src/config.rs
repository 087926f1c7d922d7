//! Plain-text (TOML) configuration for systems and experiment plans.
//!
//! A system config:
//!
//! ```toml
//! seed = 7
//! n = 500
//! mode = "direct"          # or "indirect"
//! epsilon = 0.0
//! target_radius = 0.9
//!
//! [dims]
//! d_x = 2
//! d_u = 2
//!
//! [noise]
//! family = "gaussian"      # | "bimodal_gaussian" | "time_varying_laplacian"
//! sigma = 1.0              # mu, sigma_w / sigma_w, horizon for the mixtures
//!
//! [lqr]
//! q = 1.0
//! v = 1.0
//!
//! [sps]
//! m = 100
//! q = 10
//!
//! [matrices]               # optional; A and B are drawn at random otherwise
//! a = [[0.5, 0.1], [0.0, 0.3]]
//! b = [[1.0, 2.0], [3.0, 4.0]]
//! k = [[0.0, 0.0], [0.0, 0.0]]   # optional; LQR gain otherwise
//! ```
//!
//! A plan adds `s`, `dims = [[d_x, d_u], ..]`, `methods`, and optional sweep
//! lists `epsilons`, `n_list`, `lqr_weights = [[q, v], ..]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{ExperimentPlan, Method, TrialData};
use crate::model::{random_stable_system, simulate, synthesize_lqr, NoiseModel, SystemSpec};
use crate::regression::{build, build_instruments, build_instruments_from, Mode};
use crate::seed;
use crate::sps::SpsConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d_x: usize,
    pub d_u: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrWeights {
    pub q: f64,
    pub v: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        LqrWeights { q: 1.0, v: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpsSection {
    pub m: usize,
    pub q: usize,
}

impl Default for SpsSection {
    fn default() -> Self {
        let d = SpsConfig::default();
        SpsSection { m: d.m, q: d.q }
    }
}

/// Noise section; the Laplacian horizon defaults to the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSection {
    Gaussian {
        sigma: f64,
    },
    BimodalGaussian {
        mu: f64,
        sigma_w: f64,
    },
    TimeVaryingLaplacian {
        sigma_w: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<usize>,
    },
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection::Gaussian { sigma: 1.0 }
    }
}

impl NoiseSection {
    pub fn resolve(&self, n: usize) -> NoiseModel {
        match *self {
            NoiseSection::Gaussian { sigma } => NoiseModel::Gaussian { sigma },
            NoiseSection::BimodalGaussian { mu, sigma_w } => NoiseModel::BimodalGaussian { mu, sigma_w },
            NoiseSection::TimeVaryingLaplacian { sigma_w, horizon } => {
                NoiseModel::TimeVaryingLaplacian { sigma_w, horizon: horizon.unwrap_or(n) }
            }
        }
    }

    pub fn from_model(model: NoiseModel) -> Self {
        match model {
            NoiseModel::Gaussian { sigma } => NoiseSection::Gaussian { sigma },
            NoiseModel::BimodalGaussian { mu, sigma_w } => NoiseSection::BimodalGaussian { mu, sigma_w },
            NoiseModel::TimeVaryingLaplacian { sigma_w, horizon } => {
                NoiseSection::TimeVaryingLaplacian { sigma_w, horizon: Some(horizon) }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrices {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<Vec<f64>>>,
}

fn default_radius() -> f64 {
    0.9
}

fn default_mode() -> String {
    "direct".into()
}

/// Single-system configuration used by `simulate`, `indicator` and `eoa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default)]
    pub seed: u64,
    pub n: usize,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_radius")]
    pub target_radius: f64,
    #[serde(default)]
    pub two_sample_instruments: bool,
    pub dims: Dims,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub lqr: LqrWeights,
    #[serde(default)]
    pub sps: SpsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Matrices>,
}

fn to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("matrix `{name}` must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl SystemConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn mode(&self) -> Result<Mode> {
        self.mode.parse()
    }

    pub fn sps_config(&self) -> Result<SpsConfig> {
        SpsConfig::new(self.sps.m, self.sps.q, seed::derive(self.seed, &[seed::SPS]))
    }

    /// Resolves the true system: explicit matrices if present, otherwise a
    /// random stable pair drawn from the seed; `K` from LQR unless given.
    pub fn system(&self) -> Result<SystemSpec> {
        let (a, b) = match &self.matrices {
            Some(m) => (to_matrix(&m.a, "a")?, to_matrix(&m.b, "b")?),
            None => random_stable_system(
                self.dims.d_x,
                self.dims.d_u,
                self.target_radius,
                seed::derive(self.seed, &[seed::SYSTEM]),
            )?,
        };
        if a.nrows() != self.dims.d_x || b.ncols() != self.dims.d_u {
            return Err(Error::Config(format!(
                "matrices are {}x{} / {}x{} but dims say d_x = {}, d_u = {}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                self.dims.d_x,
                self.dims.d_u
            )));
        }
        let k = match self.matrices.as_ref().and_then(|m| m.k.as_ref()) {
            Some(k) => to_matrix(k, "k")?,
            None => synthesize_lqr(&a, &b, self.lqr.q, self.lqr.v)?,
        };
        SystemSpec::new(a, b, k, self.epsilon, self.noise.resolve(self.n))
    }

    /// Resolves the system, simulates `n` steps from rest and builds the
    /// regression data with instruments, as a Monte Carlo trial would.
    pub fn draw(&self) -> Result<TrialData> {
        let spec = self.system()?;
        let mode = self.mode()?;
        let x0 = DVector::zeros(spec.d_x());
        let trajectory = simulate(&spec, self.n, &x0, seed::derive(self.seed, &[seed::TRAJECTORY]))?;
        let (raw, truth) = build(&trajectory, &spec, mode)?;
        let data = if self.two_sample_instruments {
            let aux = simulate(&spec, self.n, &x0, seed::derive(self.seed, &[seed::AUX_TRAJECTORY]))?;
            build_instruments_from(&raw, &trajectory, &build(&aux, &spec, mode)?.0)?
        } else {
            build_instruments(&raw, &trajectory)?
        };
        Ok(TrialData { spec, trajectory, data, truth, seed: self.seed })
    }

    /// Config that pins down `spec` exactly, with explicit matrices.
    pub fn from_system(spec: &SystemSpec, n: usize, seed: u64, mode: Mode, sps: SpsSection) -> Self {
        SystemConfig {
            seed,
            n,
            mode: mode.as_str().into(),
            epsilon: spec.epsilon,
            target_radius: default_radius(),
            two_sample_instruments: false,
            dims: Dims { d_x: spec.d_x(), d_u: spec.d_u() },
            noise: NoiseSection::from_model(spec.noise),
            lqr: LqrWeights::default(),
            sps,
            matrices: Some(Matrices { a: to_rows(&spec.a), b: to_rows(&spec.b), k: Some(to_rows(&spec.k)) }),
        }
    }
}

fn default_true() -> bool {
    true
}

/// Experiment plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    pub s: usize,
    pub dims: Vec<[usize; 2]>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub modes: Option<Vec<String>>,
    #[serde(default)]
    pub mode: Option<String>,
    pub methods: Vec<String>,
    #[serde(default = "default_radius")]
    pub target_radius: f64,
    #[serde(default = "default_true")]
    pub fresh_system_per_trial: bool,
    #[serde(default)]
    pub two_sample_instruments: bool,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub sps: SpsSection,
    #[serde(default)]
    pub lqr: LqrWeights,
    #[serde(default)]
    pub lqr_weights: Option<Vec<[f64; 2]>>,
}

impl PlanConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_plan(&self) -> Result<ExperimentPlan> {
        let sample_sizes = match (&self.n_list, self.n) {
            (Some(list), _) if !list.is_empty() => list.clone(),
            (_, Some(n)) => vec![n],
            _ => return Err(Error::Config("plan needs `n` or a non-empty `n_list`".into())),
        };
        let epsilons = match (&self.epsilons, self.epsilon) {
            (Some(list), _) if !list.is_empty() => list.clone(),
            (_, Some(e)) => vec![e],
            _ => vec![0.0],
        };
        let modes = match (&self.modes, &self.mode) {
            (Some(list), _) if !list.is_empty() => list.iter().map(|m| m.parse()).collect::<Result<Vec<Mode>>>()?,
            (_, Some(m)) => vec![m.parse()?],
            _ => vec![Mode::Direct],
        };
        let methods = self.methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>>>()?;
        let controllers = match &self.lqr_weights {
            Some(list) if !list.is_empty() => list.iter().map(|&[q, v]| LqrWeights { q, v }).collect(),
            _ => vec![self.lqr],
        };
        let plan = ExperimentPlan {
            dims: self.dims.iter().map(|&[d_x, d_u]| Dims { d_x, d_u }).collect(),
            sample_sizes,
            s: self.s,
            epsilons,
            noise: self.noise,
            modes,
            methods,
            seed: self.seed,
            sps: SpsConfig::new(self.sps.m, self.sps.q, 0)?,
            controllers,
            target_radius: self.target_radius,
            fresh_system_per_trial: self.fresh_system_per_trial,
            two_sample_instruments: self.two_sample_instruments,
        };
        plan.validate()?;
        Ok(plan)
    }
}
