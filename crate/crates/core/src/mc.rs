//! Monte Carlo coverage studies, parameter sweeps and the structural
//! benchmark of the two outer-approximation pipelines.
//!
//! Every trial draws its data from a seed derived from the master seed and
//! the trial index only, so all methods (and all `ε`, modes and controllers
//! of a sweep) see common random numbers. Trials run in parallel and are
//! tallied in index order; apart from `wall_ms` a report depends on nothing
//! but the plan.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::{Dims, LqrWeights, NoiseSection};
use crate::eoa::{matrix_block_size, outer_approximation, vectorized_block_size, vectorized_outer_approximation};
use crate::error::{Error, Result};
use crate::estimators::asymptotic_region;
use crate::model::{random_stable_system, simulate, synthesize_lqr, SystemSpec, Trajectory};
use crate::regression::{
    build, build_instruments, build_instruments_from, vectorize, Mode, ParameterMatrix, RegressionData,
};
use crate::seed;
use crate::sps::{SpsConfig, SpsRandomness, SpsRegion};

/// Extra attempts after a degenerate draw before a trial is marked invalid.
pub const MAX_RETRIES: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Asymptotic chi-square ellipsoid around the vectorized IV estimate.
    As,
    /// Exact matrix-variate SPS indicator.
    In,
    /// Outer ellipsoid of the vectorized (scalar) SPS region.
    IvEoa,
    /// Outer ellipsoid of the matrix-variate SPS region.
    MivEoa,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::As, Method::In, Method::IvEoa, Method::MivEoa];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::As => "AS",
            Method::In => "IN",
            Method::IvEoa => "IV_EOA",
            Method::MivEoa => "MIV_EOA",
        }
    }

    /// Schur block side for the EOA methods.
    pub fn block_size(&self, dims: Dims) -> Option<usize> {
        match self {
            Method::IvEoa => Some(vectorized_block_size(dims.d_x, dims.d_u)),
            Method::MivEoa => Some(matrix_block_size(dims.d_x, dims.d_u)),
            _ => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected AS, IN, IV_EOA or MIV_EOA)")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grid of experiments; a report row is produced for every combination of
/// dims, sample size, `ε`, mode, controller and method.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub dims: Vec<Dims>,
    pub sample_sizes: Vec<usize>,
    pub s: usize,
    pub epsilons: Vec<f64>,
    pub noise: NoiseSection,
    pub modes: Vec<Mode>,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// `m` and `q`; the seed field is ignored, per-trial seeds are derived.
    pub sps: SpsConfig,
    pub controllers: Vec<LqrWeights>,
    pub target_radius: f64,
    pub fresh_system_per_trial: bool,
    /// Take the instruments' least-squares pre-estimate from an independent
    /// trajectory instead of the identification sample.
    pub two_sample_instruments: bool,
}

impl ExperimentPlan {
    /// Single-cell plan with the defaults used throughout the tests.
    pub fn single(dims: Dims, n: usize, s: usize, methods: &[Method]) -> Self {
        ExperimentPlan {
            dims: vec![dims],
            sample_sizes: vec![n],
            s,
            epsilons: vec![0.0],
            noise: NoiseSection::default(),
            modes: vec![Mode::Direct],
            methods: methods.to_vec(),
            seed: 0,
            sps: SpsConfig::default(),
            controllers: vec![LqrWeights::default()],
            target_radius: 0.9,
            fresh_system_per_trial: true,
            two_sample_instruments: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.s == 0 {
            return fail("`s` must be at least 1");
        }
        if self.dims.is_empty() || self.dims.iter().any(|d| d.d_x == 0 || d.d_u == 0) {
            return fail("`dims` must be a non-empty list of positive [d_x, d_u] pairs");
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return fail("sample sizes must be positive");
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return fail("every epsilon must lie in [0, 1]");
        }
        if self.modes.is_empty() || self.methods.is_empty() || self.controllers.is_empty() {
            return fail("modes, methods and controllers must be non-empty");
        }
        if self.controllers.iter().any(|c| !(c.q > 0.0 && c.v > 0.0)) {
            return fail("LQR weights must be positive");
        }
        if !(self.target_radius > 0.0 && self.target_radius < 1.0) {
            return fail("`target_radius` must lie in (0, 1)");
        }
        SpsConfig::new(self.sps.m, self.sps.q, 0).map_err(|e| Error::Config(e.to_string()))?;
        self.noise.resolve(1).validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &dims in &self.dims {
            for &n in &self.sample_sizes {
                for &epsilon in &self.epsilons {
                    for &mode in &self.modes {
                        for &lqr in &self.controllers {
                            cells.push(Cell { dims, n, epsilon, mode, lqr });
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    dims: Dims,
    n: usize,
    epsilon: f64,
    mode: Mode,
    lqr: LqrWeights,
}

/// One data set of a trial.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub spec: SystemSpec,
    pub trajectory: Trajectory,
    /// Regression data with instruments attached.
    pub data: RegressionData,
    pub truth: ParameterMatrix,
    pub seed: u64,
}

/// Recipe for drawing trial data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub dims: Dims,
    pub n: usize,
    pub epsilon: f64,
    pub noise: NoiseSection,
    pub mode: Mode,
    pub lqr: LqrWeights,
    pub target_radius: f64,
    pub two_sample_instruments: bool,
    /// Seed of the system shared by all trials; `None` redraws per trial.
    pub fixed_system: Option<u64>,
}

impl Scenario {
    /// Open-loop, direct, standard-Gaussian scenario with a fresh system
    /// per trial.
    pub fn gaussian(d_x: usize, d_u: usize, n: usize) -> Self {
        Scenario {
            dims: Dims { d_x, d_u },
            n,
            epsilon: 0.0,
            noise: NoiseSection::default(),
            mode: Mode::Direct,
            lqr: LqrWeights::default(),
            target_radius: 0.9,
            two_sample_instruments: false,
            fixed_system: None,
        }
    }

    pub fn system(&self, seed: u64) -> Result<SystemSpec> {
        let system_seed = self.fixed_system.unwrap_or(seed::derive(seed, &[seed::SYSTEM]));
        let (a, b) = random_stable_system(self.dims.d_x, self.dims.d_u, self.target_radius, system_seed)?;
        let k = synthesize_lqr(&a, &b, self.lqr.q, self.lqr.v)?;
        SystemSpec::new(a, b, k, self.epsilon, self.noise.resolve(self.n))
    }

    /// Draws system, trajectory, regression data and instruments.
    pub fn draw(&self, seed: u64) -> Result<TrialData> {
        let spec = self.system(seed)?;
        let x0 = DVector::zeros(self.dims.d_x);
        let trajectory = simulate(&spec, self.n, &x0, seed::derive(seed, &[seed::TRAJECTORY]))?;
        let (raw, truth) = build(&trajectory, &spec, self.mode)?;
        let data = if self.two_sample_instruments {
            let aux = simulate(&spec, self.n, &x0, seed::derive(seed, &[seed::AUX_TRAJECTORY]))?;
            let (aux_data, _) = build(&aux, &spec, self.mode)?;
            build_instruments_from(&raw, &trajectory, &aux_data)?
        } else {
            build_instruments(&raw, &trajectory)?
        };
        Ok(TrialData { spec, trajectory, data, truth, seed })
    }

    /// Seed of attempt `attempt` of trial `trial`; independent of the
    /// sample size, `ε`, mode and controller.
    pub fn trial_seed(&self, master: u64, trial: usize, attempt: u64) -> u64 {
        seed::derive(master, &[self.dims.d_x as u64, self.dims.d_u as u64, trial as u64, attempt])
    }

    /// Draws the data of a trial, re-seeding up to [`MAX_RETRIES`] times on
    /// degenerate draws.
    pub fn draw_trial(&self, master: u64, trial: usize) -> Result<TrialData> {
        retry(|attempt| self.draw(self.trial_seed(master, trial, attempt)))
    }
}

fn retry<T>(mut f: impl FnMut(u64) -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match f(attempt) {
            Err(e) if e.is_degenerate_draw() && attempt < MAX_RETRIES => attempt += 1,
            other => return other,
        }
    }
}

/// Membership of the truth under one method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodOutcome {
    pub hit: bool,
    /// Radius of the region when it has one (`NaN` for the indicator).
    pub radius_sq: f64,
    pub nanos: u128,
}

/// Evaluates `methods` on one data set, in the given order.
pub fn evaluate_methods(trial: &TrialData, methods: &[Method], sps: SpsConfig) -> Result<Vec<MethodOutcome>> {
    let sps_seed = seed::derive(trial.seed, &[seed::SPS]);
    let config = SpsConfig::new(sps.m, sps.q, sps_seed)?;
    let needs_region = methods.iter().any(|m| matches!(m, Method::In | Method::MivEoa));
    let region = if needs_region { Some(SpsRegion::init(&trial.data, config)?) } else { None };
    let needs_vec = methods.iter().any(|m| matches!(m, Method::As | Method::IvEoa));
    let vec_problem = if needs_vec { Some(vectorize(&trial.data)?) } else { None };

    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let start = Instant::now();
        let (hit, radius_sq) = match method {
            Method::In => (region.as_ref().expect("region").contains(&trial.truth)?, f64::NAN),
            Method::MivEoa => {
                let ell = outer_approximation(region.as_ref().expect("region"))?;
                (ell.contains_parameter(&trial.truth), ell.radius_sq)
            }
            Method::IvEoa => {
                let problem = vec_problem.as_ref().expect("vectorized problem");
                let randomness =
                    SpsRandomness::generate(sps.m, problem.rows(), seed::derive(trial.seed, &[seed::VEC_SPS]));
                let ell = vectorized_outer_approximation(problem, config, randomness)?;
                let theta = DMatrix::from_column_slice(problem.d_theta(), 1, trial.truth.to_vector().as_slice());
                (ell.contains(&theta), ell.radius_sq)
            }
            Method::As => {
                let ell = asymptotic_region(vec_problem.as_ref().expect("vectorized problem"), sps.p())?;
                (ell.contains_matrix(&trial.truth), ell.radius_sq)
            }
        };
        out.push(MethodOutcome { hit, radius_sq, nanos: start.elapsed().as_nanos() });
    }
    Ok(out)
}

/// Runs one trial end to end; `None` marks an invalid trial.
pub fn run_trial(
    scenario: &Scenario,
    methods: &[Method],
    sps: SpsConfig,
    master: u64,
    trial: usize,
) -> Option<Vec<MethodOutcome>> {
    retry(|attempt| {
        let data = scenario.draw(scenario.trial_seed(master, trial, attempt))?;
        evaluate_methods(&data, methods, sps)
    })
    .ok()
}

/// One line of a coverage report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dims: Dims,
    pub method: Method,
    /// Set when the plan sweeps over several controllers.
    pub controller: Option<LqrWeights>,
    pub noise: String,
    pub mode: Mode,
    pub epsilon: f64,
    pub n: usize,
    pub s: usize,
    pub hits: usize,
    pub invalid: usize,
    pub median_radius_sq: f64,
    pub wall_ms: f64,
    pub block_size: Option<usize>,
}

impl ReportRow {
    pub fn params(&self) -> usize {
        self.dims.d_x * (self.dims.d_x + self.dims.d_u)
    }

    pub fn valid(&self) -> usize {
        self.s - self.invalid
    }

    /// `hits / valid trials`; `NaN` without valid trials.
    pub fn p_hat(&self) -> f64 {
        if self.valid() == 0 {
            f64::NAN
        } else {
            self.hits as f64 / self.valid() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoverageReport {
    pub rows: Vec<ReportRow>,
}

impl CoverageReport {
    /// First row matching the method, `d_x` and `ε`.
    pub fn find(&self, method: Method, d_x: usize, epsilon: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.dims.d_x == d_x && r.epsilon == epsilon)
    }

    /// Rows of one method, in report order.
    pub fn method_rows(&self, method: Method) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Same report with timings zeroed, for determinism checks.
    pub fn without_timing(&self) -> CoverageReport {
        CoverageReport { rows: self.rows.iter().map(|r| ReportRow { wall_ms: 0.0, ..r.clone() }).collect() }
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.retain(|v| !v.is_nan());
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Runs every cell of the plan.
pub fn run_coverage(plan: &ExperimentPlan) -> Result<CoverageReport> {
    plan.validate()?;
    let mut rows = Vec::new();
    for cell in plan.cells() {
        let scenario = Scenario {
            dims: cell.dims,
            n: cell.n,
            epsilon: cell.epsilon,
            noise: plan.noise,
            mode: cell.mode,
            lqr: cell.lqr,
            target_radius: plan.target_radius,
            two_sample_instruments: plan.two_sample_instruments,
            fixed_system: (!plan.fresh_system_per_trial)
                .then(|| seed::derive(plan.seed, &[cell.dims.d_x as u64, cell.dims.d_u as u64, seed::SYSTEM])),
        };
        let outcomes: Vec<Option<Vec<MethodOutcome>>> =
            (0..plan.s).into_par_iter().map(|t| run_trial(&scenario, &plan.methods, plan.sps, plan.seed, t)).collect();
        let invalid = outcomes.iter().filter(|o| o.is_none()).count();
        let noise = plan.noise.resolve(cell.n).tag().to_string();
        for (j, &method) in plan.methods.iter().enumerate() {
            let valid = outcomes.iter().flatten().map(|o| o[j]);
            let hits = valid.clone().filter(|o| o.hit).count();
            let nanos: u128 = valid.clone().map(|o| o.nanos).sum();
            rows.push(ReportRow {
                dims: cell.dims,
                method,
                controller: (plan.controllers.len() > 1).then_some(cell.lqr),
                noise: noise.clone(),
                mode: cell.mode,
                epsilon: cell.epsilon,
                n: cell.n,
                s: plan.s,
                hits,
                invalid,
                median_radius_sq: median(valid.map(|o| o.radius_sq).collect()),
                wall_ms: nanos as f64 / 1e6,
                block_size: method.block_size(cell.dims),
            });
        }
    }
    Ok(CoverageReport { rows })
}

/// Coverage as a function of the exploitation rate.
pub fn run_epsilon_sweep(plan: &ExperimentPlan) -> Result<CoverageReport> {
    if plan.epsilons.len() < 2 {
        return Err(Error::Config("an epsilon sweep needs at least two values in `epsilons`".into()));
    }
    run_coverage(plan)
}

/// Coverage and median radius as functions of the sample size.
pub fn run_sample_sweep(plan: &ExperimentPlan) -> Result<CoverageReport> {
    if plan.sample_sizes.len() < 2 {
        return Err(Error::Config("a sample-size sweep needs at least two values in `n_list`".into()));
    }
    run_coverage(plan)
}

/// Whether the median radii of `method` strictly decrease with `n` within
/// every other fixed key.
pub fn radius_decreases_with_n(report: &CoverageReport, method: Method) -> bool {
    let rows: Vec<&ReportRow> = report.method_rows(method).collect();
    rows.iter().all(|a| {
        rows.iter()
            .filter(|b| {
                b.dims == a.dims
                    && b.epsilon == a.epsilon
                    && b.mode == a.mode
                    && b.controller == a.controller
                    && b.n > a.n
            })
            .all(|b| b.median_radius_sq < a.median_radius_sq)
    })
}

/// Timing of both outer-approximation pipelines for one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub dims: Dims,
    pub params: usize,
    pub matrix_block: usize,
    pub vectorized_block: usize,
    pub matrix_ms: f64,
    pub vectorized_ms: f64,
    pub trials: usize,
}

impl BenchmarkRow {
    /// Matrix-variate time relative to the vectorized baseline.
    pub fn relative_time(&self) -> f64 {
        self.matrix_ms / self.vectorized_ms
    }
}

/// Times both EOA pipelines on identical data: `s` trials per dimension.
pub fn run_benchmark(dims: &[Dims], n: usize, s: usize, sps: SpsConfig, master: u64) -> Result<Vec<BenchmarkRow>> {
    if s == 0 {
        return Err(Error::Config("`s` must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &d in dims {
        let scenario = Scenario::gaussian(d.d_x, d.d_u, n);
        let (mut matrix_ms, mut vectorized_ms, mut trials) = (0.0, 0.0, 0);
        for t in 0..s {
            let Ok(data) = scenario.draw_trial(master, t) else { continue };
            let Ok(out) = evaluate_methods(&data, &[Method::MivEoa, Method::IvEoa], sps) else { continue };
            matrix_ms += out[0].nanos as f64 / 1e6;
            vectorized_ms += out[1].nanos as f64 / 1e6;
            trials += 1;
        }
        rows.push(BenchmarkRow {
            dims: d,
            params: d.d_x * (d.d_x + d.d_u),
            matrix_block: matrix_block_size(d.d_x, d.d_u),
            vectorized_block: vectorized_block_size(d.d_x, d.d_u),
            matrix_ms,
            vectorized_ms,
            trials,
        });
    }
    Ok(rows)
}
