//! File formats and IO: dataset CSV, model JSON, scenario TOML, and the
//! CSV tables written by select, decode, bootstrap, and mc.
//!
//! Every float lands in a file through either serde_json or the csv
//! serializer, both of which print the shortest decimal string that parses
//! back to the identical bits, so saved artifacts round-trip losslessly.

use betagam::emission::{PhiBounds, StateEmission};
use betagam::fit::{FitResult, ModelParams};
use betagam::hmm::ChainParams;
use betagam::select::{Criteria, DiagnosticReport, Edf};
use betagam::sim::ScenarioConfig;
use betagam::spline::KnotVector;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::path::Path;

/// Command failure carrying the process exit code.
#[derive(Debug)]
pub enum CmdError {
    /// Bad input file, flag value, or malformed content. Exit 4.
    Input(String),
    /// Estimation ran but did not converge. Exit 2.
    NonConvergence(String),
    /// Every candidate was flagged degenerate. Exit 3.
    Degenerate(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::NonConvergence(_) => 2,
            CmdError::Degenerate(_) => 3,
            CmdError::Input(_) => 4,
        }
    }
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CmdError::Input(msg) => write!(f, "{msg}"),
            CmdError::NonConvergence(msg) => write!(f, "did not converge: {msg}"),
            CmdError::Degenerate(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<betagam::Error> for CmdError {
    fn from(e: betagam::Error) -> Self {
        use betagam::Error;
        match &e {
            Error::AllStartsFailed(_) | Error::NonFiniteLikelihood => {
                CmdError::NonConvergence(e.to_string())
            }
            Error::AllCellsDegenerate | Error::TooFewValidReplicates { .. } => {
                CmdError::Degenerate(e.to_string())
            }
            _ => CmdError::Input(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CmdError>;

fn io_err(path: &Path, e: impl fmt::Display) -> CmdError {
    CmdError::Input(format!("{}: {e}", path.display()))
}

/// A loaded observation panel: index column, clipped proportions, and the
/// covariate columns in file order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub t: Vec<i64>,
    pub y: Array1<f64>,
    pub x_cols: Vec<Vec<f64>>,
    /// Observations moved into [ε, 1−ε] on load.
    pub n_clipped: usize,
}

/// Read a `t,y,x1..xp` CSV: header required, t consecutive, y in [0, 1]
/// before clipping. Parse failures report the 1-based file line.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[0] != "t" || cols[1] != "y" {
        return Err(CmdError::Input(format!(
            "{}: line 1: header must be t,y,x1,... (got {:?})",
            path.display(),
            cols
        )));
    }
    let p = cols.len() - 2;
    for (j, name) in cols[2..].iter().enumerate() {
        let want = format!("x{}", j + 1);
        if *name != want {
            return Err(CmdError::Input(format!(
                "{}: line 1: covariate column {} must be named {want} (got {name})",
                path.display(),
                j + 3
            )));
        }
    }

    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut x_cols: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut n_clipped = 0usize;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| io_err(path, e))?;
        if record.len() != cols.len() {
            return Err(CmdError::Input(format!(
                "{}: line {line}: {} fields, expected {}",
                path.display(),
                record.len(),
                cols.len()
            )));
        }
        let field = |idx: usize, name: &str| -> Result<f64> {
            record[idx].parse::<f64>().map_err(|_| {
                CmdError::Input(format!(
                    "{}: line {line}: bad {name} value {:?}",
                    path.display(),
                    &record[idx]
                ))
            })
        };
        let ti = record[0].parse::<i64>().map_err(|_| {
            CmdError::Input(format!(
                "{}: line {line}: bad t value {:?}",
                path.display(),
                &record[0]
            ))
        })?;
        if let Some(&prev) = t.last() {
            if ti != prev + 1 {
                return Err(CmdError::Input(format!(
                    "{}: line {line}: t jumps from {prev} to {ti}; rows must be consecutive",
                    path.display()
                )));
            }
        }
        t.push(ti);
        let yi = field(1, "y")?;
        if !(0.0..=1.0).contains(&yi) {
            return Err(CmdError::Input(format!(
                "{}: line {line}: y = {yi} outside [0, 1]",
                path.display()
            )));
        }
        let clipped = betagam::numeric::clip_unit(yi, betagam::numeric::CLIP_EPS);
        if clipped != yi {
            n_clipped += 1;
        }
        y.push(clipped);
        for j in 0..p {
            x_cols[j].push(field(2 + j, &format!("x{}", j + 1))?);
        }
    }
    if y.is_empty() {
        return Err(CmdError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(Dataset {
        t,
        y: Array1::from_vec(y),
        x_cols,
        n_clipped,
    })
}

/// Write a dataset CSV with t = 1..T.
pub fn write_dataset(path: &Path, y: &Array1<f64>, x_cols: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = vec!["t".to_string(), "y".to_string()];
    for j in 0..x_cols.len() {
        header.push(format!("x{}", j + 1));
    }
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for i in 0..y.len() {
        let mut row = vec![(i + 1).to_string(), format!("{}", y[i])];
        for col in x_cols {
            row.push(format!("{}", col[i]));
        }
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Write the simulation truth sidecar: the latent path (1-based) and every
/// state's true mean at each time point.
pub fn write_truth(path: &Path, z: &[usize], true_means: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let k = true_means.ncols();
    let mut header = vec!["t".to_string(), "z".to_string()];
    for s in 0..k {
        header.push(format!("mu{}", s + 1));
    }
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for (i, &zi) in z.iter().enumerate() {
        let mut row = vec![(i + 1).to_string(), (zi + 1).to_string()];
        for s in 0..k {
            row.push(format!("{}", true_means[(i, s)]));
        }
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Saved model document. Every parameter needed to rebuild the fit exactly,
/// plus the fit summary a reader needs to judge it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub software_version: String,
    pub k: usize,
    pub lambda: f64,
    pub penalty_order: usize,
    pub phi_bounds: PhiBounds,
    pub knots: Vec<KnotVector>,
    pub pi: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub seed: u64,
    pub converged: bool,
    pub n_iter: usize,
    pub log_likelihood: f64,
    pub penalized_log_likelihood: f64,
    pub diagnostics: Option<DiagnosticReport>,
    pub edf: Option<Edf>,
    pub criteria: Option<Criteria>,
}

pub const SCHEMA_VERSION: u32 = 1;

impl ModelFile {
    pub fn from_fit(
        fit: &FitResult,
        diagnostics: Option<DiagnosticReport>,
        edf: Option<Edf>,
        criteria: Option<Criteria>,
    ) -> Self {
        let p = &fit.params;
        ModelFile {
            schema_version: SCHEMA_VERSION,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            k: p.n_states(),
            lambda: p.lambda,
            penalty_order: p.penalty_order,
            phi_bounds: p.states[0].bounds,
            knots: p.knots.clone(),
            pi: p.chain.pi.to_vec(),
            a: p.chain.a.rows().into_iter().map(|r| r.to_vec()).collect(),
            beta: p.states.iter().map(|s| s.beta.to_vec()).collect(),
            phi: p.states.iter().map(|s| s.phi).collect(),
            seed: fit.seed,
            converged: fit.converged,
            n_iter: fit.n_iter,
            log_likelihood: fit.log_likelihood,
            penalized_log_likelihood: fit.penalized_log_likelihood,
            diagnostics,
            edf,
            criteria,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let k = self.k;
        if self.pi.len() != k
            || self.a.len() != k
            || self.beta.len() != k
            || self.phi.len() != k
            || self.a.iter().any(|row| row.len() != k)
        {
            return Err(CmdError::Input(format!(
                "model file: k = {k} does not match parameter shapes"
            )));
        }
        let p_m: usize = self.knots.iter().map(|kv| kv.n_basis()).sum();
        for (s, b) in self.beta.iter().enumerate() {
            if b.len() != p_m {
                return Err(CmdError::Input(format!(
                    "model file: state {} has {} coefficients, basis needs {p_m}",
                    s + 1,
                    b.len()
                )));
            }
        }
        let chain = ChainParams {
            pi: Array1::from_vec(self.pi.clone()),
            a: Array2::from_shape_vec((k, k), self.a.concat())
                .map_err(|e| CmdError::Input(format!("model file: {e}")))?,
        };
        chain
            .validate()
            .map_err(|e| CmdError::Input(format!("model file: {e}")))?;
        let states = self
            .beta
            .iter()
            .zip(&self.phi)
            .map(|(b, &phi)| StateEmission::new(Array1::from_vec(b.clone()), phi, self.phi_bounds))
            .collect();
        Ok(ModelParams {
            chain,
            states,
            knots: self.knots.clone(),
            penalty_order: self.penalty_order,
            lambda: self.lambda,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body =
            serde_json::to_string_pretty(self).map_err(|e| CmdError::Input(e.to_string()))?;
        body.push('\n');
        fs::write(path, body).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let model: ModelFile =
            serde_json::from_str(&body).map_err(|e| io_err(path, e))?;
        if model.schema_version != SCHEMA_VERSION {
            return Err(CmdError::Input(format!(
                "{}: schema version {} unsupported (expected {SCHEMA_VERSION})",
                path.display(),
                model.schema_version
            )));
        }
        Ok(model)
    }
}

/// Load a scenario TOML into a config, reporting parse position on failure.
pub fn read_scenario(path: &Path) -> Result<ScenarioConfig> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let config: ScenarioConfig = toml::from_str(&body).map_err(|e| io_err(path, e))?;
    config
        .validate()
        .map_err(|e| CmdError::Input(format!("{}: {e}", path.display())))?;
    Ok(config)
}

/// One row of the (K, λ) grid table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub k: usize,
    pub lambda: f64,
    pub log_likelihood: f64,
    pub edf: f64,
    pub aic: f64,
    pub bic: f64,
    pub icl: f64,
    pub n_sat: usize,
    pub delta_tail: f64,
    pub min_occupancy: f64,
    pub flagged: bool,
    /// Pipe-joined flag reasons, empty when clean.
    pub reasons: String,
    pub converged: bool,
}

pub fn write_grid(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub k: usize,
    pub lambda: f64,
    pub message: String,
}

pub fn write_failures(path: &Path, rows: &[FailureRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    if rows.is_empty() {
        // serde never sees a record, so emit the header by hand.
        w.write_record(["k", "lambda", "message"])
            .map_err(|e| io_err(path, e))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Decoded path plus smoothed posteriors, one row per time point.
pub fn write_decoded(
    path: &Path,
    t: &[i64],
    states: &[usize],
    gamma: &Array2<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let k = gamma.ncols();
    let mut header = vec!["t".to_string(), "state".to_string()];
    for s in 0..k {
        header.push(format!("gamma{}", s + 1));
    }
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for i in 0..states.len() {
        let mut row = vec![t[i].to_string(), (states[i] + 1).to_string()];
        for s in 0..k {
            row.push(format!("{}", gamma[(i, s)]));
        }
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn write_intervals(path: &Path, rows: &[betagam::bootstrap::IntervalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn write_curve_bands(path: &Path, rows: &[betagam::bootstrap::CurveBandRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// One bootstrap replicate's parameters in the ensemble archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReplicate {
    pub pi: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub converged: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub b: usize,
    pub base_seed: u64,
    pub replicates: Vec<EnsembleReplicate>,
}

impl EnsembleFile {
    pub fn from_ensemble(ensemble: &betagam::bootstrap::BootstrapEnsemble) -> Self {
        let replicates = ensemble
            .replicates
            .iter()
            .zip(&ensemble.converged_flags)
            .zip(&ensemble.degenerate_flags)
            .map(|((params, &converged), &degenerate)| EnsembleReplicate {
                pi: params.chain.pi.to_vec(),
                a: params.chain.a.rows().into_iter().map(|r| r.to_vec()).collect(),
                beta: params.states.iter().map(|s| s.beta.to_vec()).collect(),
                phi: params.states.iter().map(|s| s.phi).collect(),
                converged,
                degenerate,
            })
            .collect();
        EnsembleFile {
            b: ensemble.b,
            base_seed: ensemble.base_seed,
            replicates,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body =
            serde_json::to_string_pretty(self).map_err(|e| CmdError::Input(e.to_string()))?;
        body.push('\n');
        fs::write(path, body).map_err(|e| io_err(path, e))
    }
}

pub fn write_mc_records(path: &Path, records: &[betagam::sim::ReplicateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for rec in records {
        w.serialize(rec).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Aggregate block of a Monte Carlo run; per-replicate rows live in the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub r: usize,
    pub n_valid: usize,
    pub lambda_tally: Vec<(f64, usize)>,
    pub mean_curve_rmse: f64,
    pub sd_curve_rmse: f64,
    pub mean_phi_rmse: f64,
    pub sd_phi_rmse: f64,
    pub mean_a_rmse: f64,
    pub sd_a_rmse: f64,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
}

impl McSummary {
    pub fn from_report(report: &betagam::sim::McReport) -> Self {
        McSummary {
            r: report.records.len(),
            n_valid: report.n_valid,
            lambda_tally: report.lambda_tally.clone(),
            mean_curve_rmse: report.mean_curve_rmse,
            sd_curve_rmse: report.sd_curve_rmse,
            mean_phi_rmse: report.mean_phi_rmse,
            sd_phi_rmse: report.sd_phi_rmse,
            mean_a_rmse: report.mean_a_rmse,
            sd_a_rmse: report.sd_a_rmse,
            mean_accuracy: report.mean_accuracy,
            sd_accuracy: report.sd_accuracy,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body =
            serde_json::to_string_pretty(self).map_err(|e| CmdError::Input(e.to_string()))?;
        body.push('\n');
        fs::write(path, body).map_err(|e| io_err(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("betagam-fmt-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn model_file_round_trips_bitwise() {
        let awkward = vec![1.0 / 3.0, 0.1, 1e-300, f64::MIN_POSITIVE, 0.49999999999999994];
        let model = ModelFile {
            schema_version: SCHEMA_VERSION,
            software_version: "0.0.0".into(),
            k: 2,
            lambda: 0.30000000000000004,
            penalty_order: 2,
            phi_bounds: PhiBounds { min: 1.0, max: 500.0 },
            knots: vec![KnotVector {
                degree: 3,
                inner: awkward.clone(),
                lo: -1.9999999999999998,
                hi: 2.0000000000000004,
            }],
            pi: vec![2.0 / 3.0, 1.0 / 3.0],
            a: vec![vec![0.7, 0.30000000000000004], vec![0.1 + 0.2, 0.7]],
            beta: vec![awkward.clone(), awkward.iter().map(|v| -v).collect()],
            phi: vec![9.999999999999998, 499.99999999999994],
            seed: u64::MAX,
            converged: true,
            n_iter: 17,
            log_likelihood: -1234.5678901234567,
            penalized_log_likelihood: -1240.0000000000002,
            diagnostics: None,
            edf: None,
            criteria: None,
        };
        let path = tmp("model.json");
        model.save(&path).unwrap();
        let loaded = ModelFile::load(&path).unwrap();
        assert_eq!(loaded, model);
        for (a, b) in loaded.beta[0].iter().zip(&model.beta[0]) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(loaded.phi[1].to_bits(), model.phi[1].to_bits());
        assert_eq!(loaded.lambda.to_bits(), model.lambda.to_bits());
    }

    #[test]
    fn truth_sidecar_has_one_based_states() {
        let z = vec![0usize, 2, 1, 1];
        let means = Array2::from_shape_fn((4, 3), |(i, j)| 0.1 + 0.2 * i as f64 + 0.01 * j as f64);
        let path = tmp("truth.csv");
        write_truth(&path, &z, &means).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,z,mu1,mu2,mu3");
        let states: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(states, vec!["1", "3", "2", "2"]);
    }

    #[test]
    fn dataset_round_trips_bitwise() {
        let y = Array1::from_vec(vec![0.25, 0.5, 1.0 / 3.0, 0.123456789012345]);
        let x = vec![vec![-2.0, -0.1, 0.7, 1.9]];
        let path = tmp("roundtrip.csv");
        write_dataset(&path, &y, &x).unwrap();
        let ds = read_dataset(&path).unwrap();
        assert_eq!(ds.t, vec![1, 2, 3, 4]);
        assert_eq!(ds.n_clipped, 0);
        for i in 0..4 {
            assert_eq!(ds.y[i].to_bits(), y[i].to_bits());
            assert_eq!(ds.x_cols[0][i].to_bits(), x[0][i].to_bits());
        }
    }

    #[test]
    fn boundary_observations_clip_with_count() {
        let path = tmp("clip.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "t,y,x1\n1,0.0,0.1\n2,0.5,0.2\n3,1.0,0.3").unwrap();
        let ds = read_dataset(&path).unwrap();
        assert_eq!(ds.n_clipped, 2);
        assert!(ds.y[0] > 0.0 && ds.y[2] < 1.0);
        assert_eq!(ds.y[1], 0.5);
    }

    #[test]
    fn gap_in_t_reports_line() {
        let path = tmp("gap.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "t,y,x1\n1,0.5,0.1\n3,0.5,0.2").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(matches!(err, CmdError::Input(_)));
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn bad_float_reports_line_and_column() {
        let path = tmp("badfloat.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "t,y,x1\n1,0.5,0.1\n2,oops,0.2").unwrap();
        let err = read_dataset(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains('y'), "{msg}");
    }

    #[test]
    fn y_outside_unit_interval_rejected() {
        let path = tmp("range.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "t,y,x1\n1,1.5,0.1").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
    }

    #[test]
    fn wrong_header_rejected() {
        let path = tmp("header.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "time,y,x1\n1,0.5,0.1").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn exit_codes_match_contract() {
        assert_eq!(CmdError::Input("x".into()).exit_code(), 4);
        assert_eq!(CmdError::NonConvergence("x".into()).exit_code(), 2);
        assert_eq!(CmdError::Degenerate("x".into()).exit_code(), 3);
    }

    #[test]
    fn library_errors_classify_by_exit_code() {
        let nc: CmdError = betagam::Error::AllStartsFailed(3).into();
        assert_eq!(nc.exit_code(), 2);
        let deg: CmdError = betagam::Error::AllCellsDegenerate.into();
        assert_eq!(deg.exit_code(), 3);
        let input: CmdError = betagam::Error::EmptyInput("y").into();
        assert_eq!(input.exit_code(), 4);
    }
}
