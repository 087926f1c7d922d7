//! CSV import and export of every artifact: matrices, regression data,
//! trajectories, SPS randomness, ellipsoids and reports.
//!
//! Dialect: comma separated, `.` decimal point, LF line endings, mandatory
//! header. Floats are written in shortest round-trip form, so reloading any
//! artifact reproduces it bit for bit.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;

use crate::config::{Dims, LqrWeights};
use crate::eoa::Ellipsoid;
use crate::error::{Error, Result};
use crate::mc::{BenchmarkRow, CoverageReport, Method, ReportRow};
use crate::model::Trajectory;
use crate::regression::{Mode, RegressionData};
use crate::sps::SpsRandomness;

pub const REPORT_HEADER: [&str; 14] = [
    "dim",
    "params",
    "method",
    "noise",
    "mode",
    "epsilon",
    "n",
    "s",
    "hits",
    "invalid",
    "p_hat",
    "median_radius_sq",
    "wall_ms",
    "block_size",
];

pub const BENCHMARK_HEADER: [&str; 8] =
    ["dim", "params", "matrix_block", "vectorized_block", "matrix_ms", "vectorized_ms", "relative_time", "trials"];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::InvalidArgument(format!("cannot parse `{s}` as a number in {what}")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::InvalidArgument(format!("cannot parse `{s}` as a count in {what}")))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).from_path(path)?)
}

/// Writes `m` under the given column names.
pub fn write_matrix(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::Dimension(format!("{} column names for {} columns", header.len(), m.ncols())));
    }
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV, returning the header and the matrix.
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut r = reader(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let what = path.display().to_string();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in r.records() {
        let record = record?;
        for field in record.iter() {
            values.push(parse_f64(field, &what)?);
        }
        rows += 1;
    }
    Ok((header.clone(), DMatrix::from_row_slice(rows, header.len(), &values)))
}

fn names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

/// Parameter matrix `Θ` with columns `theta0..`.
pub fn write_theta(path: &Path, theta: &DMatrix<f64>) -> Result<()> {
    write_matrix(path, &names("theta", theta.ncols()), theta)
}

pub fn read_theta(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(path).map(|(_, m)| m)
}

/// Writes `Y.csv`, `Phi.csv` and, when present, `Psi.csv` into `dir`.
pub fn write_regression(dir: &Path, data: &RegressionData) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix(&dir.join("Y.csv"), &names("y", data.d_x()), &data.y)?;
    let regressors = data.regressor_names();
    write_matrix(&dir.join("Phi.csv"), &regressors, &data.phi)?;
    if let Some(psi) = &data.psi {
        let inst: Vec<String> = regressors.iter().map(|n| format!("psi_{n}")).collect();
        write_matrix(&dir.join("Psi.csv"), &inst, psi)?;
    }
    Ok(())
}

pub fn read_regression(dir: &Path, mode: Mode) -> Result<RegressionData> {
    let (_, y) = read_matrix(&dir.join("Y.csv"))?;
    let (_, phi) = read_matrix(&dir.join("Phi.csv"))?;
    let psi_path = dir.join("Psi.csv");
    let psi = if psi_path.exists() { Some(read_matrix(&psi_path)?.1) } else { None };
    RegressionData::new(y, phi, psi, mode)
}

/// One row per time step `k = 0..=n`; inputs, references and noises are
/// empty on the final row.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let (d_x, d_u, d_r) = (traj.states.ncols(), traj.inputs.ncols(), traj.references.ncols());
    let mut w = writer(path)?;
    let mut header = vec!["k".to_string()];
    header.extend(names("x", d_x));
    header.extend(names("u", d_u));
    header.extend(names("r", d_r));
    header.extend(names("w", d_x));
    w.write_record(&header)?;
    let n = traj.len();
    for k in 0..=n {
        let mut rec = vec![k.to_string()];
        rec.extend(traj.states.row(k).iter().map(|&v| fmt_f64(v)));
        for m in [&traj.inputs, &traj.references, &traj.noises] {
            if k < n {
                rec.extend(m.row(k).iter().map(|&v| fmt_f64(v)));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), m.ncols()));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut r = reader(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let count = |p: char| header.iter().filter(|h| h.starts_with(p) && h[1..].parse::<usize>().is_ok()).count();
    let (d_x, d_u, d_r) = (count('x'), count('u'), count('r'));
    if header.len() != 1 + 2 * d_x + d_u + d_r {
        return Err(Error::InvalidArgument(format!("unexpected trajectory header in {}", path.display())));
    }
    let what = path.display().to_string();
    let records: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
    if records.len() < 2 {
        return Err(Error::InvalidArgument(format!("{what} holds fewer than two time steps")));
    }
    let n = records.len() - 1;
    let mut states = DMatrix::zeros(n + 1, d_x);
    let mut inputs = DMatrix::zeros(n, d_u);
    let mut references = DMatrix::zeros(n, d_r);
    let mut noises = DMatrix::zeros(n, d_x);
    for (k, rec) in records.iter().enumerate() {
        let field = |j: usize| parse_f64(rec.get(j).unwrap_or(""), &what);
        for i in 0..d_x {
            states[(k, i)] = field(1 + i)?;
        }
        if k < n {
            for i in 0..d_u {
                inputs[(k, i)] = field(1 + d_x + i)?;
            }
            for i in 0..d_r {
                references[(k, i)] = field(1 + d_x + d_u + i)?;
            }
            for i in 0..d_x {
                noises[(k, i)] = field(1 + d_x + d_u + d_r + i)?;
            }
        }
    }
    Ok(Trajectory { states, inputs, references, noises })
}

/// Writes `signs.csv` (row `i - 1` holds the signs of perturbation `i`) and
/// `pi.csv` into `dir`.
pub fn write_randomness(dir: &Path, randomness: &SpsRandomness) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = writer(&dir.join("signs.csv"))?;
    w.write_record(names("k", randomness.len()))?;
    for i in 1..randomness.m() {
        w.write_record(randomness.signs(i).iter().map(|s| s.to_string()))?;
    }
    w.flush()?;
    let mut w = writer(&dir.join("pi.csv"))?;
    w.write_record(["index", "pi"])?;
    for (i, p) in randomness.pi().iter().enumerate() {
        w.write_record([i.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_randomness(dir: &Path) -> Result<SpsRandomness> {
    let mut r = reader(&dir.join("signs.csv"))?;
    let len = r.headers()?.len();
    let mut signs = Vec::new();
    for rec in r.records() {
        for field in rec?.iter() {
            signs.push(field.trim().parse::<i8>().map_err(|_| Error::InvalidArgument(format!("bad sign `{field}`")))?);
        }
    }
    let mut r = reader(&dir.join("pi.csv"))?;
    let mut pi = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if parse_usize(&rec[0], "pi.csv")? != i {
            return Err(Error::InvalidArgument("pi.csv indices must be 0, 1, .. in order".into()));
        }
        pi.push(parse_usize(&rec[1], "pi.csv")?);
    }
    SpsRandomness::from_parts(signs, pi, len)
}

/// Long format `kind,row,col,value` with kinds `center`, `map`,
/// `radius_sq` and `unbounded`.
pub fn write_ellipsoid(path: &Path, ell: &Ellipsoid) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["kind", "row", "col", "value"])?;
    for (kind, m) in [("center", &ell.center), ("map", &ell.map)] {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_record([kind.to_string(), i.to_string(), j.to_string(), fmt_f64(m[(i, j)])])?;
            }
        }
    }
    w.write_record(["radius_sq", "0", "0", &fmt_f64(ell.radius_sq)])?;
    w.write_record(["unbounded", "0", "0", if ell.unbounded { "1" } else { "0" }])?;
    w.flush()?;
    Ok(())
}

pub fn read_ellipsoid(path: &Path) -> Result<Ellipsoid> {
    let what = path.display().to_string();
    let mut entries: Vec<(String, usize, usize, f64)> = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::InvalidArgument(format!("{what}: expected 4 fields per row")));
        }
        entries.push((
            rec[0].to_string(),
            parse_usize(&rec[1], &what)?,
            parse_usize(&rec[2], &what)?,
            parse_f64(&rec[3], &what)?,
        ));
    }
    let block = |kind: &str| -> Result<DMatrix<f64>> {
        let items: Vec<_> = entries.iter().filter(|e| e.0 == kind).collect();
        let rows = items.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        let cols = items.iter().map(|e| e.2 + 1).max().unwrap_or(0);
        if rows * cols != items.len() || items.is_empty() {
            return Err(Error::InvalidArgument(format!("{what}: `{kind}` entries do not form a full matrix")));
        }
        let mut m = DMatrix::zeros(rows, cols);
        for e in items {
            m[(e.1, e.2)] = e.3;
        }
        Ok(m)
    };
    let scalar = |kind: &str| -> Result<f64> {
        entries
            .iter()
            .find(|e| e.0 == kind)
            .map(|e| e.3)
            .ok_or_else(|| Error::InvalidArgument(format!("{what}: missing `{kind}`")))
    };
    Ok(Ellipsoid {
        center: block("center")?,
        map: block("map")?,
        radius_sq: scalar("radius_sq")?,
        unbounded: scalar("unbounded")? != 0.0,
    })
}

fn dim_label(d: Dims) -> String {
    if d.d_x == d.d_u {
        d.d_x.to_string()
    } else {
        format!("{}x{}", d.d_x, d.d_u)
    }
}

fn parse_dim(s: &str) -> Result<Dims> {
    let parts: Vec<&str> = s.split('x').collect();
    match parts.as_slice() {
        [d] => {
            let d = parse_usize(d, "dim")?;
            Ok(Dims { d_x: d, d_u: d })
        }
        [a, b] => Ok(Dims { d_x: parse_usize(a, "dim")?, d_u: parse_usize(b, "dim")? }),
        _ => Err(Error::InvalidArgument(format!("bad dim `{s}`"))),
    }
}

/// Method label, suffixed with `@q=..;v=..` when the row belongs to one of
/// several controllers.
pub fn method_label(row: &ReportRow) -> String {
    match row.controller {
        Some(c) => format!("{}@q={};v={}", row.method, fmt_f64(c.q), fmt_f64(c.v)),
        None => row.method.to_string(),
    }
}

fn parse_method_label(s: &str) -> Result<(Method, Option<LqrWeights>)> {
    let Some((method, weights)) = s.split_once('@') else {
        return Ok((s.parse()?, None));
    };
    let mut q = None;
    let mut v = None;
    for part in weights.split(';') {
        match part.split_once('=') {
            Some(("q", x)) => q = Some(parse_f64(x, "method label")?),
            Some(("v", x)) => v = Some(parse_f64(x, "method label")?),
            _ => return Err(Error::InvalidArgument(format!("bad method label `{s}`"))),
        }
    }
    match (q, v) {
        (Some(q), Some(v)) => Ok((method.parse()?, Some(LqrWeights { q, v }))),
        _ => Err(Error::InvalidArgument(format!("bad method label `{s}`"))),
    }
}

pub fn report_record(row: &ReportRow) -> Vec<String> {
    vec![
        dim_label(row.dims),
        row.params().to_string(),
        method_label(row),
        row.noise.clone(),
        row.mode.as_str().to_string(),
        fmt_f64(row.epsilon),
        row.n.to_string(),
        row.s.to_string(),
        row.hits.to_string(),
        row.invalid.to_string(),
        fmt_f64(row.p_hat()),
        fmt_f64(row.median_radius_sq),
        fmt_f64(row.wall_ms),
        row.block_size.map(|b| b.to_string()).unwrap_or_default(),
    ]
}

pub fn write_report(path: &Path, report: &CoverageReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(REPORT_HEADER)?;
    for row in &report.rows {
        w.write_record(report_record(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<CoverageReport> {
    let mut r = reader(path)?;
    if r.headers()?.iter().ne(REPORT_HEADER) {
        return Err(Error::InvalidArgument(format!("{} does not carry the report header", path.display())));
    }
    let what = path.display().to_string();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let (method, controller) = parse_method_label(&rec[2])?;
        let block = rec[13].trim();
        rows.push(ReportRow {
            dims: parse_dim(&rec[0])?,
            method,
            controller,
            noise: rec[3].to_string(),
            mode: rec[4].parse()?,
            epsilon: parse_f64(&rec[5], &what)?,
            n: parse_usize(&rec[6], &what)?,
            s: parse_usize(&rec[7], &what)?,
            hits: parse_usize(&rec[8], &what)?,
            invalid: parse_usize(&rec[9], &what)?,
            median_radius_sq: parse_f64(&rec[11], &what)?,
            wall_ms: parse_f64(&rec[12], &what)?,
            block_size: if block.is_empty() { None } else { Some(parse_usize(block, &what)?) },
        });
    }
    Ok(CoverageReport { rows })
}

pub fn write_benchmark(path: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(BENCHMARK_HEADER)?;
    for r in rows {
        w.write_record([
            dim_label(r.dims),
            r.params.to_string(),
            r.matrix_block.to_string(),
            r.vectorized_block.to_string(),
            fmt_f64(r.matrix_ms),
            fmt_f64(r.vectorized_ms),
            fmt_f64(r.relative_time()),
            r.trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, NoiseModel, SystemSpec};
    use nalgebra::DVector;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn floats_round_trip_bitwise() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, f64::MIN_POSITIVE, f64::INFINITY, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert!(fmt_f64(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tmp();
        let spec = SystemSpec::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]),
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[-0.1, 0.0]),
            0.4,
            NoiseModel::BimodalGaussian { mu: 1.0, sigma_w: 0.5 },
        )
        .unwrap();
        let traj = simulate(&spec, 25, &DVector::zeros(2), 9).unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory(&path, &traj).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back, traj);
        assert!(back.replays_exactly(&spec));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("k,x0,x1,u0,r0,w0,w1\n") && !text.contains('\r'));
    }

    #[test]
    fn randomness_round_trip() {
        let dir = tmp();
        let r = SpsRandomness::generate(7, 13, 4);
        write_randomness(dir.path(), &r).unwrap();
        assert_eq!(read_randomness(dir.path()).unwrap(), r);
    }

    #[test]
    fn ellipsoid_round_trip() {
        let dir = tmp();
        let ell = Ellipsoid {
            center: DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 / 7.0),
            map: DMatrix::from_fn(3, 3, |i, j| if i == j { 1.5 } else { 0.1 / (1 + i + j) as f64 }),
            radius_sq: 0.123456789,
            unbounded: false,
        };
        let path = dir.path().join("e.csv");
        write_ellipsoid(&path, &ell).unwrap();
        assert_eq!(read_ellipsoid(&path).unwrap(), ell);
        let inf = Ellipsoid { radius_sq: f64::INFINITY, unbounded: true, ..ell };
        write_ellipsoid(&path, &inf).unwrap();
        assert_eq!(read_ellipsoid(&path).unwrap(), inf);
    }

    #[test]
    fn report_round_trip() {
        let dir = tmp();
        let row = ReportRow {
            dims: Dims { d_x: 2, d_u: 3 },
            method: Method::MivEoa,
            controller: Some(LqrWeights { q: 1.0, v: 10.0 }),
            noise: "gaussian".into(),
            mode: Mode::Indirect,
            epsilon: 0.25,
            n: 500,
            s: 10,
            hits: 9,
            invalid: 1,
            median_radius_sq: 0.5,
            wall_ms: 12.5,
            block_size: Some(7),
        };
        let report = CoverageReport {
            rows: vec![
                row.clone(),
                ReportRow { method: Method::In, controller: None, block_size: None, median_radius_sq: f64::NAN, ..row },
            ],
        };
        let path = dir.path().join("r.csv");
        write_report(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&(REPORT_HEADER.join(",") + "\n")));
        assert!(
            text.contains("2x3,10,MIV_EOA@q=1.0;v=10.0,gaussian,indirect,0.25,500,10,9,1,1.0,0.5,12.5,7\n"),
            "{text}"
        );
        let back = read_report(&path).unwrap();
        assert_eq!(back.rows[0], report.rows[0]);
        assert!(back.rows[1].median_radius_sq.is_nan() && back.rows[1].block_size.is_none());
    }

    #[test]
    fn regression_round_trip() {
        let dir = tmp();
        let y = DMatrix::from_fn(6, 1, |i, _| i as f64 * 0.3);
        let phi = DMatrix::from_fn(6, 2, |i, j| ((i * 3 + j * 5) % 7) as f64 - 2.0);
        let psi = DMatrix::from_fn(6, 2, |i, j| ((i + j) % 3) as f64 + 0.5);
        let data = RegressionData::new(y, phi, Some(psi), Mode::Direct).unwrap();
        write_regression(dir.path(), &data).unwrap();
        assert_eq!(read_regression(dir.path(), Mode::Direct).unwrap(), data);
        let (header, _) = read_matrix(&dir.path().join("Phi.csv")).unwrap();
        assert_eq!(header, vec!["x0", "u0"]);
    }
}
