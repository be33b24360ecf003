//! File formats: long-format series CSV, JSON model files and TOML configs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{NoiseSpec, SimulationConfig, Structure};
use crate::error::{Error, Result};
use crate::model::{AdditiveMarParams, MatrixSeries, Penalties};
use crate::selection::{GridMode, LambdaGrid};
use crate::solver::FitReport;
use crate::Matrix;

pub const SERIES_HEADER: &str = "t,i,j,value";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Shortest decimal that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

/// Rows `t,i,j,value` ordered by `t`, then `i`, then `j`, with `t` starting at `t0`.
pub fn write_matrices(matrices: &[Matrix], t0: usize) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for (k, m) in matrices.iter().enumerate() {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                writeln!(out, "{},{},{},{}", t0 + k, i, j, format_value(m[(i, j)])).expect("write to string");
            }
        }
    }
    out
}

pub fn write_series_string(series: &MatrixSeries) -> String {
    write_matrices(series.matrices(), 0)
}

pub fn write_series(path: &Path, series: &MatrixSeries) -> Result<()> {
    fs::write(path, write_series_string(series))?;
    Ok(())
}

fn parse_index(field: &str, name: &str, line: usize) -> Result<usize> {
    let v: i64 = field.trim().parse().map_err(|_| Error::Parse {
        row: line,
        message: format!("{name} `{field}` is not an integer"),
    })?;
    if v < 0 {
        return Err(Error::Parse {
            row: line,
            message: format!("negative index {name} = {v}"),
        });
    }
    Ok(v as usize)
}

/// Parses a long-format series; `line` numbers in errors count the header as line 1.
pub fn parse_series_reader<R: Read>(reader: R) -> Result<MatrixSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse {
        row: 1,
        message: e.to_string(),
    })?;
    let names: Vec<&str> = headers.iter().collect();
    if names != ["t", "i", "j", "value"] {
        return Err(Error::Parse {
            row: 1,
            message: format!("expected header `{SERIES_HEADER}`, got `{}`", names.join(",")),
        });
    }

    let mut cells: BTreeMap<(usize, usize, usize), (f64, usize)> = BTreeMap::new();
    let (mut tmax, mut imax, mut jmax) = (0usize, 0usize, 0usize);
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row: line,
            message: e.to_string(),
        })?;
        if rec.len() != 4 {
            return Err(Error::Parse {
                row: line,
                message: format!("expected 4 fields, got {}", rec.len()),
            });
        }
        let t = parse_index(&rec[0], "t", line)?;
        let i = parse_index(&rec[1], "i", line)?;
        let j = parse_index(&rec[2], "j", line)?;
        let value: f64 = rec[3].parse().map_err(|_| Error::Parse {
            row: line,
            message: format!("value `{}` is not a number", &rec[3]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                row: line,
                message: format!("value `{}` is not finite", &rec[3]),
            });
        }
        if let Some((_, first)) = cells.insert((t, i, j), (value, line)) {
            return Err(Error::Parse {
                row: line,
                message: format!("duplicate cell (t={t}, i={i}, j={j}), first seen on line {first}"),
            });
        }
        tmax = tmax.max(t);
        imax = imax.max(i);
        jmax = jmax.max(j);
    }
    if cells.is_empty() {
        return Err(Error::Parse {
            row: 1,
            message: "no data rows".into(),
        });
    }
    let (n_t, d1, d2) = (tmax + 1, imax + 1, jmax + 1);
    let mut data = vec![Matrix::zeros(d1, d2); n_t];
    for t in 0..n_t {
        for i in 0..d1 {
            for j in 0..d2 {
                match cells.get(&(t, i, j)) {
                    Some((v, _)) => data[t][(i, j)] = *v,
                    None => {
                        return Err(Error::Parse {
                            row: 0,
                            message: format!("missing cell (t={t}, i={i}, j={j})"),
                        })
                    }
                }
            }
        }
    }
    MatrixSeries::new(data)
}

pub fn parse_series_str(s: &str) -> Result<MatrixSeries> {
    parse_series_reader(s.as_bytes())
}

pub fn parse_series(path: &Path) -> Result<MatrixSeries> {
    let f = fs::File::open(path)?;
    parse_series_reader(std::io::BufReader::new(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltiesRecord {
    pub lambda_l1: f64,
    pub lambda_s1: f64,
    pub lambda_l2: f64,
    pub lambda_s2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverRecord {
    pub iters: usize,
    pub converged: bool,
    pub objective: f64,
}

/// On-disk model. Blocks are flat row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub d1: usize,
    pub d2: usize,
    #[serde(rename = "L1")]
    pub l1: Vec<f64>,
    #[serde(rename = "S1")]
    pub s1: Vec<f64>,
    #[serde(rename = "L2")]
    pub l2: Vec<f64>,
    #[serde(rename = "S2")]
    pub s2: Vec<f64>,
    pub penalties: Option<PenaltiesRecord>,
    pub solver: Option<SolverRecord>,
}

fn row_major(m: &Matrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(v: &[f64], d: usize, name: &str) -> Result<Matrix> {
    if v.len() != d * d {
        return Err(Error::Format(format!("{name} has {} entries, expected {}", v.len(), d * d)));
    }
    Ok(Matrix::from_row_slice(d, d, v))
}

impl ModelFile {
    pub fn from_params(params: &AdditiveMarParams) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            d1: params.d1(),
            d2: params.d2(),
            l1: row_major(&params.l1),
            s1: row_major(&params.s1),
            l2: row_major(&params.l2),
            s2: row_major(&params.s2),
            penalties: None,
            solver: None,
        }
    }

    pub fn from_report(report: &FitReport) -> Self {
        let p = report.penalties;
        Self {
            penalties: Some(PenaltiesRecord {
                lambda_l1: p.lambda_l1,
                lambda_s1: p.lambda_s1,
                lambda_l2: p.lambda_l2,
                lambda_s2: p.lambda_s2,
            }),
            solver: Some(SolverRecord {
                iters: report.outer_iters,
                converged: report.converged,
                objective: report.final_objective(),
            }),
            ..Self::from_params(&report.params)
        }
    }

    pub fn params(&self) -> Result<AdditiveMarParams> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format_version {}", self.format_version)));
        }
        AdditiveMarParams::new(
            from_row_major(&self.l1, self.d1, "L1")?,
            from_row_major(&self.s1, self.d1, "S1")?,
            from_row_major(&self.l2, self.d2, "L2")?,
            from_row_major(&self.s2, self.d2, "S2")?,
        )
    }

    pub fn penalties(&self) -> Result<Option<Penalties>> {
        self.penalties
            .map(|p| Penalties::new(p.lambda_l1, p.lambda_s1, p.lambda_l2, p.lambda_s2))
            .transpose()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("model file: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseRecord {
    kind: String,
    sigma: Option<f64>,
    sigma1: Option<Vec<Vec<f64>>>,
    sigma2: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationRecord {
    d1: usize,
    d2: usize,
    #[serde(alias = "T")]
    t: usize,
    #[serde(default, alias = "R1")]
    r1: usize,
    #[serde(default, alias = "R2")]
    r2: usize,
    #[serde(default)]
    e1: f64,
    #[serde(default)]
    e2: f64,
    rho_target: Option<f64>,
    seed: Option<u64>,
    burn_in: Option<usize>,
    structure: Option<String>,
    noise: Option<NoiseRecord>,
}

fn nested_matrix(rows: &[Vec<f64>], name: &str) -> Result<Matrix> {
    let d = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Format(format!("{name} must be a square array of rows")));
    }
    Ok(Matrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn noise_from_record(rec: &NoiseRecord) -> Result<NoiseSpec> {
    let unexpected = |field: &str| Error::Format(format!("noise kind `{}` does not take `{field}`", rec.kind));
    match rec.kind.as_str() {
        "iid" => {
            if rec.sigma1.is_some() || rec.sigma2.is_some() {
                return Err(unexpected("sigma1/sigma2"));
            }
            let sigma = rec.sigma.ok_or_else(|| Error::Format("noise kind `iid` needs `sigma`".into()))?;
            Ok(NoiseSpec::Iid { sigma })
        }
        "kronecker_sum" => {
            if rec.sigma.is_some() {
                return Err(unexpected("sigma"));
            }
            let need = |m: &Option<Vec<Vec<f64>>>, name: &str| {
                m.as_deref()
                    .ok_or_else(|| Error::Format(format!("noise kind `kronecker_sum` needs `{name}`")))
                    .and_then(|rows| nested_matrix(rows, name))
            };
            Ok(NoiseSpec::KroneckerSum {
                sigma1: need(&rec.sigma1, "sigma1")?,
                sigma2: need(&rec.sigma2, "sigma2")?,
            })
        }
        "random_kronecker_sum" => {
            if rec.sigma.is_some() || rec.sigma1.is_some() || rec.sigma2.is_some() {
                return Err(unexpected("sigma"));
            }
            Ok(NoiseSpec::RandomKroneckerSum)
        }
        other => Err(Error::Format(format!("unknown noise kind `{other}`"))),
    }
}

/// Parses a TOML simulation config. Missing optional keys take the library defaults.
pub fn parse_simulation_config(s: &str) -> Result<SimulationConfig> {
    let rec: SimulationRecord = toml::from_str(s).map_err(|e| Error::Format(format!("simulation config: {e}")))?;
    let mut cfg = SimulationConfig::new(rec.d1, rec.d2, rec.t, rec.r1, rec.r2, rec.e1, rec.e2, rec.seed.unwrap_or(0));
    if let Some(r) = rec.rho_target {
        cfg.rho_target = r;
    }
    if let Some(b) = rec.burn_in {
        cfg.burn_in = b;
    }
    if let Some(s) = &rec.structure {
        cfg.structure = Structure::parse(s)?;
    }
    if let Some(n) = &rec.noise {
        cfg.noise = noise_from_record(n)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRecord {
    mode: Option<String>,
    lambda_l1: Vec<f64>,
    lambda_s1: Vec<f64>,
    lambda_l2: Vec<f64>,
    lambda_s2: Vec<f64>,
}

pub fn parse_grid_mode(s: &str) -> Result<GridMode> {
    match s {
        "coupled_pairs" => Ok(GridMode::CoupledPairs),
        "full_cross" => Ok(GridMode::FullCross),
        other => Err(Error::arg(format!("unknown grid mode `{other}`"))),
    }
}

/// Parses a TOML penalty grid with one array per penalty and an optional `mode`.
pub fn parse_grid(s: &str) -> Result<LambdaGrid> {
    let rec: GridRecord = toml::from_str(s).map_err(|e| Error::Format(format!("grid file: {e}")))?;
    let mode = rec.mode.as_deref().map(parse_grid_mode).transpose()?.unwrap_or_default();
    LambdaGrid::new(rec.lambda_l1, rec.lambda_s1, rec.lambda_l2, rec.lambda_s2, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_series() -> MatrixSeries {
        MatrixSeries::new(vec![
            Matrix::from_row_slice(2, 2, &[1.0, -2.5, 0.1, 3.0]),
            Matrix::from_row_slice(2, 2, &[0.0, 1e-300, -7.25, 1.0 / 3.0]),
        ])
        .unwrap()
    }

    #[test]
    fn series_round_trip_and_layout() {
        let s = small_series();
        let text = write_series_string(&s);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SERIES_HEADER);
        assert_eq!(lines[1], "0,0,0,1.0");
        assert_eq!(lines[2], "0,0,1,-2.5");
        assert_eq!(lines.len(), 9);
        let back = parse_series_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!((back.d1(), back.d2(), back.len()), (2, 2, 2));
    }

    #[test]
    fn rows_may_come_in_any_order() {
        let text = "t,i,j,value\n1,0,0,4\n0,0,0,1\n1,1,0,5\n0,1,0,2\n";
        let s = parse_series_str(text).unwrap();
        assert_eq!(s.get(1)[(1, 0)], 5.0);
        assert_eq!((s.d1(), s.d2()), (2, 1));
    }

    fn parse_err(text: &str) -> (usize, String) {
        match parse_series_str(text) {
            Err(Error::Parse { row, message }) => (row, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs_name_the_problem() {
        let full = write_series_string(&small_series());
        let missing: String = full.lines().filter(|l| *l != full.lines().last().unwrap()).map(|l| format!("{l}\n")).collect();
        let (_, msg) = parse_err(&missing);
        assert!(msg.contains("t=1, i=1, j=1"), "{msg}");

        let dup = format!("{full}0,0,0,9\n");
        let (row, msg) = parse_err(&dup);
        assert_eq!(row, 10);
        assert!(msg.contains("duplicate"));

        let (row, msg) = parse_err("t,i,j,value\n0,0,0,abc\n");
        assert_eq!(row, 2);
        assert!(msg.contains("abc"));

        let (row, msg) = parse_err("t,i,j,value\n0,-1,0,1\n");
        assert_eq!(row, 2);
        assert!(msg.contains("negative"));

        assert!(parse_series_str("a,b,c,d\n0,0,0,1\n").is_err());
        assert!(parse_series_str("t,i,j,value\n").is_err());
        // a single time point is not a series
        assert!(parse_series_str("t,i,j,value\n0,0,0,1\n").is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let p = AdditiveMarParams::new(
            Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            Matrix::from_row_slice(2, 2, &[0.0, -0.5, 0.0, 0.0]),
            Matrix::from_element(1, 1, 0.25),
            Matrix::from_element(1, 1, 0.0),
        )
        .unwrap();
        let f = ModelFile::from_params(&p);
        assert_eq!(f.l1, vec![1.0, 2.0, 3.0, 4.0]);
        let json = f.to_json();
        let order = ["format_version", "d1", "d2", "L1", "S1", "L2", "S2", "penalties", "solver"];
        let pos: Vec<usize> = order.iter().map(|k| json.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ModelFile::from_json(&json).unwrap().params().unwrap(), p);

        let mut bad = f.clone();
        bad.s2 = vec![];
        assert!(bad.params().is_err());
        assert!(ModelFile::from_json("{\"d1\": 1}").is_err());
    }

    #[test]
    fn simulation_config_parsing() {
        let cfg = parse_simulation_config("d1 = 3\nd2 = 2\nT = 40\nr1 = 1\nr2 = 1\ne1 = 0.2\ne2 = 0.3\nseed = 9\n").unwrap();
        assert_eq!((cfg.d1, cfg.d2, cfg.t, cfg.seed), (3, 2, 40, 9));
        assert_eq!(cfg.rho_target, 0.8);
        assert_eq!(cfg.noise, NoiseSpec::default_for(3, 2));

        let cfg = parse_simulation_config(
            "d1 = 2\nd2 = 2\nt = 10\nstructure = \"sparse_only\"\n[noise]\nkind = \"kronecker_sum\"\nsigma1 = [[1.0, 0.0], [0.0, 1.0]]\nsigma2 = [[2.0, 0.0], [0.0, 2.0]]\n",
        )
        .unwrap();
        assert_eq!(cfg.structure, Structure::SparseOnly);
        assert!(matches!(cfg.noise, NoiseSpec::KroneckerSum { .. }));

        assert!(parse_simulation_config("d1 = 2\nd2 = 2\nt = 10\nbogus = 1\n").is_err());
        assert!(parse_simulation_config("d1 = 2\nd2 = 2\nt = 10\nr1 = 3\n").is_err());
        assert!(parse_simulation_config("d1 = 2\nd2 = 2\nt = 10\n[noise]\nkind = \"iid\"\n").is_err());
        assert!(parse_simulation_config("d1 = 2\nd2 = 2\nt = 10\n[noise]\nkind = \"iid\"\nsigma = 1.0\nsigma1 = [[1.0]]\n").is_err());
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("lambda_l1 = [0.01, 0.1]\nlambda_s1 = [0.1]\nlambda_l2 = [0.1]\nlambda_s2 = [0.02, 0.2]\n").unwrap();
        assert_eq!(g.mode, GridMode::CoupledPairs);
        assert_eq!(g.full_cross().len(), 4);
        let g = parse_grid("mode = \"full_cross\"\nlambda_l1 = [1.0]\nlambda_s1 = [1.0]\nlambda_l2 = [1.0]\nlambda_s2 = [1.0]\n").unwrap();
        assert_eq!(g.mode, GridMode::FullCross);
        assert!(parse_grid("lambda_l1 = [-1.0]\nlambda_s1 = [1.0]\nlambda_l2 = [1.0]\nlambda_s2 = [1.0]\n").is_err());
        assert!(parse_grid("lambda_l1 = [1.0]\n").is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 12)) {
            let data: Vec<Matrix> = vals.chunks(4).map(|c| Matrix::from_row_slice(2, 2, c)).collect();
            let s = MatrixSeries::new(data).unwrap();
            let back = parse_series_str(&write_series_string(&s)).unwrap();
            for (a, b) in back.matrices().iter().zip(s.matrices()) {
                for (x, y) in a.iter().zip(b.iter()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }

        #[test]
        fn model_json_round_trips_bitwise(vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 16)) {
            let m = |k: usize| Matrix::from_row_slice(2, 2, &vals[4 * k..4 * k + 4]);
            let p = AdditiveMarParams::new(m(0), m(1), m(2), m(3)).unwrap();
            let back = ModelFile::from_json(&ModelFile::from_params(&p).to_json()).unwrap().params().unwrap();
            for (a, b) in [(&back.l1, &p.l1), (&back.s1, &p.s1), (&back.l2, &p.l2), (&back.s2, &p.s2)] {
                for (x, y) in a.iter().zip(b.iter()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
