//! Matrix-variate and vectorized regression problems built from trajectories,
//! plus the two-stage instrument construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators;
use crate::linalg::{condition_number, CONDITION_LIMIT};
use crate::model::{SystemSpec, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Regress on `(x_k, u_k)` to recover `(A, B)`.
    Direct,
    /// Regress on `(x_k, r_k)` to recover the closed-loop `(C, D)`.
    Indirect,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Indirect => "indirect",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Mode::Direct),
            "indirect" => Ok(Mode::Indirect),
            other => Err(Error::Config(format!("unknown identification mode `{other}`"))),
        }
    }
}

/// Parameter matrix `Θ = [Aᵀ; Bᵀ]` (or `[Cᵀ; Dᵀ]`), of shape `d x d_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMatrix(pub DMatrix<f64>);

impl ParameterMatrix {
    /// Stacks `[Aᵀ; Bᵀ]`.
    pub fn from_blocks(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Self {
        let (d_x, d_in) = (a.nrows(), b.ncols());
        let mut theta = DMatrix::zeros(d_x + d_in, d_x);
        theta.rows_mut(0, d_x).copy_from(&a.transpose());
        theta.rows_mut(d_x, d_in).copy_from(&b.transpose());
        ParameterMatrix(theta)
    }

    pub fn d_x(&self) -> usize {
        self.0.ncols()
    }

    /// Splits back into `(A, B)`.
    pub fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d_x = self.d_x();
        let d_in = self.0.nrows() - d_x;
        (self.0.rows(0, d_x).transpose(), self.0.rows(d_x, d_in).transpose())
    }

    /// `θ = (a_1, .., a_dx, b_1, .., b_dx)` where `a_i`, `b_i` are the rows
    /// of the two blocks (the columns of `Θ`).
    pub fn to_vector(&self) -> DVector<f64> {
        let d_x = self.d_x();
        let d_in = self.0.nrows() - d_x;
        let mut out = Vec::with_capacity(self.0.len());
        for i in 0..d_x {
            out.extend((0..d_x).map(|j| self.0[(j, i)]));
        }
        for i in 0..d_x {
            out.extend((0..d_in).map(|j| self.0[(d_x + j, i)]));
        }
        DVector::from_vec(out)
    }

    pub fn from_vector(theta: &DVector<f64>, d_x: usize, d_in: usize) -> Result<Self> {
        if theta.len() != d_x * (d_x + d_in) {
            return Err(Error::Dimension(format!(
                "parameter vector of length {} does not match d_x = {d_x}, d_in = {d_in}",
                theta.len()
            )));
        }
        let mut m = DMatrix::zeros(d_x + d_in, d_x);
        for i in 0..d_x {
            for j in 0..d_x {
                m[(j, i)] = theta[i * d_x + j];
            }
            for j in 0..d_in {
                m[(d_x + j, i)] = theta[d_x * d_x + i * d_in + j];
            }
        }
        Ok(ParameterMatrix(m))
    }
}

/// `Y = Φ Θ + W` together with the instrument matrix `Ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub y: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub psi: Option<DMatrix<f64>>,
    pub mode: Mode,
}

impl RegressionData {
    pub fn new(y: DMatrix<f64>, phi: DMatrix<f64>, psi: Option<DMatrix<f64>>, mode: Mode) -> Result<Self> {
        if y.nrows() != phi.nrows() {
            return Err(Error::Dimension(format!("Y has {} rows but Φ has {}", y.nrows(), phi.nrows())));
        }
        if phi.ncols() <= y.ncols() {
            return Err(Error::Dimension("Φ must have more columns than Y".into()));
        }
        if let Some(psi) = &psi {
            if psi.shape() != phi.shape() {
                return Err(Error::Dimension(format!(
                    "Ψ is {}x{} but Φ is {}x{}",
                    psi.nrows(),
                    psi.ncols(),
                    phi.nrows(),
                    phi.ncols()
                )));
            }
        }
        let d = phi.ncols();
        if y.nrows() < d {
            return Err(Error::Underdetermined { rows: y.nrows(), params: d });
        }
        Ok(RegressionData { y, phi, psi, mode })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn d_x(&self) -> usize {
        self.y.ncols()
    }

    /// Width of the exogenous block (`d_u` or `d_r`).
    pub fn d_in(&self) -> usize {
        self.phi.ncols() - self.d_x()
    }

    pub fn d(&self) -> usize {
        self.phi.ncols()
    }

    pub fn psi(&self) -> Result<&DMatrix<f64>> {
        self.psi.as_ref().ok_or_else(|| Error::InvalidArgument("regression data has no instruments".into()))
    }

    /// Condition number of `ΨᵀΦ`.
    pub fn instrument_condition(&self) -> Result<f64> {
        Ok(condition_number(&(self.psi()?.transpose() * &self.phi)))
    }

    /// Column names of `Φ` (and `Ψ`) in storage order.
    pub fn regressor_names(&self) -> Vec<String> {
        let exo = match self.mode {
            Mode::Direct => "u",
            Mode::Indirect => "r",
        };
        (0..self.d_x()).map(|i| format!("x{i}")).chain((0..self.d_in()).map(|i| format!("{exo}{i}"))).collect()
    }
}

fn check_length(traj: &Trajectory, d: usize) -> Result<()> {
    if traj.len() < d {
        Err(Error::Underdetermined { rows: traj.len(), params: d })
    } else {
        Ok(())
    }
}

fn hstack(left: DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, l) = left.shape();
    let mut out = left.resize_horizontally(l + right.ncols(), 0.0);
    out.columns_mut(l, right.ncols()).copy_from(right);
    debug_assert_eq!(out.nrows(), n);
    out
}

/// Direct regression: rows `x_{k+1}ᵀ` against `(x_kᵀ, u_kᵀ)`.
pub fn build_direct(traj: &Trajectory) -> Result<RegressionData> {
    let n = traj.len();
    let d_x = traj.states.ncols();
    check_length(traj, d_x + traj.inputs.ncols())?;
    let y = traj.states.rows(1, n).into_owned();
    let phi = hstack(traj.states.rows(0, n).into_owned(), &traj.inputs);
    RegressionData::new(y, phi, None, Mode::Direct)
}

/// Indirect regression against `(x_kᵀ, r_kᵀ)`; also returns the true
/// closed-loop matrices `C = A + εBK`, `D = (1 - ε)B`.
pub fn build_indirect(traj: &Trajectory, spec: &SystemSpec) -> Result<(RegressionData, DMatrix<f64>, DMatrix<f64>)> {
    let n = traj.len();
    let d_x = traj.states.ncols();
    check_length(traj, d_x + traj.references.ncols())?;
    let y = traj.states.rows(1, n).into_owned();
    let phi = hstack(traj.states.rows(0, n).into_owned(), &traj.references);
    let data = RegressionData::new(y, phi, None, Mode::Indirect)?;
    Ok((data, spec.closed_loop(), spec.closed_loop_input()))
}

/// Builds regression data in the requested mode together with the true
/// parameter matrix it should recover.
pub fn build(traj: &Trajectory, spec: &SystemSpec, mode: Mode) -> Result<(RegressionData, ParameterMatrix)> {
    match mode {
        Mode::Direct => Ok((build_direct(traj)?, ParameterMatrix::from_blocks(&spec.a, &spec.b))),
        Mode::Indirect => {
            let (data, c, d) = build_indirect(traj, spec)?;
            Ok((data, ParameterMatrix::from_blocks(&c, &d)))
        }
    }
}

/// Instruments from a least-squares pre-estimate on the same sample.
pub fn build_instruments(data: &RegressionData, traj: &Trajectory) -> Result<RegressionData> {
    build_instruments_from(data, traj, data)
}

/// Instruments whose least-squares pre-estimate comes from `estimate_source`,
/// typically data of an independent second trajectory in the same mode.
///
/// With `(Â, B̂)` the split estimate, the noiseless states follow
/// `x̄_{k+1} = Â x̄_k + B̂ r_k` from `x̄_0 = 0`, and `ψ_k = (x̄_k, r_k)`.
pub fn build_instruments_from(
    data: &RegressionData,
    traj: &Trajectory,
    estimate_source: &RegressionData,
) -> Result<RegressionData> {
    if traj.len() != data.n() || traj.references.ncols() != data.d_in() {
        return Err(Error::Dimension("trajectory does not match the regression data".into()));
    }
    if estimate_source.d() != data.d() || estimate_source.d_x() != data.d_x() {
        return Err(Error::Dimension("estimate source has different dimensions".into()));
    }
    let theta = estimators::ls_estimate(estimate_source)?;
    let (a_hat, b_hat) = theta.blocks();
    let (n, d_x, d_in) = (data.n(), data.d_x(), data.d_in());

    let mut psi = DMatrix::zeros(n, d_x + d_in);
    let mut x_bar = DVector::zeros(d_x);
    for k in 0..n {
        let r = traj.references.row(k).transpose();
        psi.view_mut((k, 0), (1, d_x)).copy_from(&x_bar.transpose());
        psi.view_mut((k, d_x), (1, d_in)).copy_from(&r.transpose());
        x_bar = &a_hat * &x_bar + &b_hat * &r;
        if !x_bar.iter().all(|v| v.is_finite()) {
            return Err(Error::InstrumentDegeneracy { matrix: "Ψ", condition: f64::INFINITY });
        }
    }
    let out = RegressionData { psi: Some(psi), ..data.clone() };
    let condition = out.instrument_condition()?;
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::InstrumentDegeneracy { matrix: "ΨᵀΦ", condition });
    }
    Ok(out)
}

/// Scalar linear-regression form `y = Ξ θ + w` with block-structured
/// instruments, row `(k, i)` at index `k·d_x + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedProblem {
    pub y: DVector<f64>,
    pub xi: DMatrix<f64>,
    pub zeta: DMatrix<f64>,
    pub d_x: usize,
    pub d_in: usize,
}

impl VectorizedProblem {
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn d_theta(&self) -> usize {
        self.xi.ncols()
    }
}

/// Places a `(x, u)` row into the `i`-th blocks of a `d_θ`-wide row.
fn place_blocks(src: &DMatrix<f64>, d_x: usize, d_in: usize) -> DMatrix<f64> {
    let n = src.nrows();
    let d_theta = d_x * (d_x + d_in);
    let mut out = DMatrix::zeros(n * d_x, d_theta);
    for k in 0..n {
        for i in 0..d_x {
            let row = k * d_x + i;
            for j in 0..d_x {
                out[(row, i * d_x + j)] = src[(k, j)];
            }
            for j in 0..d_in {
                out[(row, d_x * d_x + i * d_in + j)] = src[(k, d_x + j)];
            }
        }
    }
    out
}

pub fn vectorize(data: &RegressionData) -> Result<VectorizedProblem> {
    let (n, d_x, d_in) = (data.n(), data.d_x(), data.d_in());
    let psi = data.psi()?;
    let y = DVector::from_fn(n * d_x, |row, _| data.y[(row / d_x, row % d_x)]);
    Ok(VectorizedProblem { y, xi: place_blocks(&data.phi, d_x, d_in), zeta: place_blocks(psi, d_x, d_in), d_x, d_in })
}
