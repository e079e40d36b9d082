//! Command-line surface for Beta-GAM hidden Markov models: simulate,
//! fit, select, decode, bootstrap, and mc map onto the library pipeline.
//!
//! Every command is a pure function of its input files, flags, and seed;
//! rerunning with identical inputs writes byte-identical outputs under any
//! worker count. Exit codes: 0 success, 2 non-convergence, 3 every
//! candidate degenerate, 4 bad input.

mod formats;

use betagam::emission::PhiBounds;
use betagam::fit::{multi_start_fit, FitOptions, FitResult};
use betagam::hmm::forward_backward;
use betagam::select::{
    criteria, diagnose, effective_dof, grid_cells, select_from_cells, CellRecord,
    DiagnosticConfig, DiagnosticReport, GridCell,
};
use betagam::sim::{generate_dataset, run_monte_carlo, FitSpec};
use betagam::spline::SplineDesign;
use clap::{Args, Parser, Subcommand};
use formats::{CmdError, Dataset, ModelFile, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "betagam",
    version,
    about = "Hidden Markov models with Beta emissions and spline mean curves"
)]
struct Cli {
    /// Worker threads for grid cells and replicates
    /// (default: $BETAGAM_WORKERS, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct SplineArgs {
    /// Inner knots per covariate.
    #[arg(long, default_value_t = 6)]
    inner_knots: usize,
    /// B-spline degree.
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// Difference-penalty order.
    #[arg(long, default_value_t = 2)]
    penalty_order: usize,
}

#[derive(Args, Debug, Clone)]
struct DiagArgs {
    /// Precision ceiling; both the optimizer bound and the saturation
    /// threshold. The (2000, 500, 1000) regime suits very high precision
    /// data.
    #[arg(long, default_value_t = 500.0)]
    phi_max: f64,
    /// Largest tolerated single gap between ordered precisions.
    #[arg(long, default_value_t = 50.0)]
    delta_abs: f64,
    /// Largest tolerated sum of tail gaps.
    #[arg(long, default_value_t = 100.0)]
    delta_sum: f64,
}

impl DiagArgs {
    fn config(&self) -> DiagnosticConfig {
        DiagnosticConfig {
            phi_max: self.phi_max,
            delta_abs: self.delta_abs,
            delta_sum: self.delta_sum,
            ..DiagnosticConfig::simulation()
        }
    }
}

#[derive(Args, Debug, Clone)]
struct EmArgs {
    /// EM iteration cap.
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    /// Inner quasi-Newton iteration cap per state M-step.
    #[arg(long, default_value_t = 200)]
    max_inner: usize,
}

impl EmArgs {
    fn options(&self, phi_max: f64) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            max_inner: self.max_inner,
            phi_bounds: PhiBounds::with_max(phi_max),
            ..FitOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw one dataset from a scenario config; writes the data CSV and a
    /// truth sidecar next to it.
    Simulate {
        /// Scenario TOML.
        #[arg(long)]
        config: PathBuf,
        /// RNG seed (overrides any seed in the config).
        #[arg(long)]
        seed: u64,
        /// Output dataset CSV; the sidecar gets a .truth.csv suffix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a K-state model at fixed λ and save it as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 5)]
        n_starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spline: SplineArgs,
        #[command(flatten)]
        diag: DiagArgs,
        #[command(flatten)]
        em: EmArgs,
    },
    /// Grid search over (K, λ) with the two-stage rule; writes the grid
    /// table, failures, and the chosen model.
    Select {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated state counts, e.g. 2,3,4,5.
        #[arg(long)]
        k_set: String,
        /// Comma-separated λ values, e.g. 0.1,0.5,1,5,10.
        #[arg(long)]
        lambda_set: String,
        #[arg(long, default_value_t = 5)]
        n_starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        spline: SplineArgs,
        #[command(flatten)]
        diag: DiagArgs,
        #[command(flatten)]
        em: EmArgs,
    },
    /// Viterbi-decode a dataset under a saved model; writes path and
    /// posteriors.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parametric bootstrap around a saved model; writes percentile
    /// intervals, curve bands, and the replicate archive.
    Bootstrap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        b: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        diag: DiagArgs,
        #[command(flatten)]
        em: EmArgs,
    },
    /// Monte Carlo study over a scenario: R replicates, λ selected per
    /// replicate by AIC at the true K.
    Mc {
        /// Scenario TOML.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        r: usize,
        /// RNG seed (overrides any seed in the scenario).
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated λ candidates per replicate.
        #[arg(long, default_value = "0.005,0.05,0.5,1,5,10")]
        lambda_grid: String,
        #[arg(long, default_value_t = 5)]
        n_starts: usize,
        #[arg(long, default_value_t = 6)]
        inner_knots: usize,
        #[command(flatten)]
        em: EmArgs,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let workers = cli
        .workers
        .or_else(|| {
            std::env::var("BETAGAM_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build_global()
        .expect("worker pool is built once");

    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, seed, out } => cmd_simulate(&config, seed, &out),
        Command::Fit {
            data,
            k,
            lambda,
            n_starts,
            seed,
            out,
            spline,
            diag,
            em,
        } => cmd_fit(&data, k, lambda, n_starts, seed, &out, &spline, &diag, &em),
        Command::Select {
            data,
            k_set,
            lambda_set,
            n_starts,
            seed,
            out_dir,
            spline,
            diag,
            em,
        } => cmd_select(
            &data, &k_set, &lambda_set, n_starts, seed, &out_dir, &spline, &diag, &em,
        ),
        Command::Decode { model, data, out } => cmd_decode(&model, &data, &out),
        Command::Bootstrap {
            model,
            data,
            b,
            alpha,
            seed,
            out_dir,
            diag,
            em,
        } => cmd_bootstrap(&model, &data, b, alpha, seed, &out_dir, &diag, &em),
        Command::Mc {
            scenario,
            r,
            seed,
            out_dir,
            lambda_grid,
            n_starts,
            inner_knots,
            em,
        } => cmd_mc(
            &scenario,
            r,
            seed,
            &out_dir,
            &lambda_grid,
            n_starts,
            inner_knots,
            &em,
        ),
    }
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    let items: std::result::Result<Vec<T>, _> =
        raw.split(',').map(|s| s.trim().parse::<T>()).collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CmdError::Input(format!("bad {what} list: {raw:?}"))),
    }
}

fn truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    out.with_file_name(format!("{stem}.truth.csv"))
}

fn cmd_simulate(config_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let config = formats::read_scenario(config_path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate_dataset(&config, &mut rng)?;
    formats::write_dataset(out, &data.y, std::slice::from_ref(&data.x))?;
    let sidecar = truth_path(out);
    formats::write_truth(&sidecar, &data.z_true, &data.true_means)?;
    println!(
        "wrote {} ({} rows) and {}",
        out.display(),
        data.y.len(),
        sidecar.display()
    );
    Ok(())
}

/// Fit, diagnose, and score a dataset at fixed (K, λ).
fn fit_dataset(
    ds: &Dataset,
    k: usize,
    lambda: f64,
    n_starts: usize,
    seed: u64,
    spline: &SplineArgs,
    diag: &DiagnosticConfig,
    opts: &FitOptions,
) -> Result<(FitResult, DiagnosticReport, betagam::select::Edf, betagam::select::Criteria, SplineDesign)>
{
    let design = SplineDesign::from_covariates(
        &ds.x_cols,
        spline.inner_knots,
        spline.degree,
        spline.penalty_order,
    )?;
    let ms = multi_start_fit(&ds.y, &design, k, lambda, n_starts, seed, opts)?;
    let fit = ms.best;
    let phi: Vec<f64> = fit.params.states.iter().map(|s| s.phi).collect();
    let report = diagnose(&phi, &fit.posteriors, diag);
    let edf = effective_dof(&design, &fit.posteriors, &fit.params.states, lambda)?;
    let crit = criteria(&fit, edf.total);
    Ok((fit, report, edf, crit, design))
}

fn print_fit_report(model: &ModelFile, report: &DiagnosticReport) {
    println!(
        "K = {}, lambda = {}, converged = {} ({} EM iterations)",
        model.k, model.lambda, model.converged, model.n_iter
    );
    println!(
        "log-likelihood {:.4}, penalized {:.4}",
        model.log_likelihood, model.penalized_log_likelihood
    );
    if let (Some(edf), Some(crit)) = (&model.edf, &model.criteria) {
        println!(
            "edf {:.2}, AIC {:.2}, BIC {:.2}, ICL {:.2}",
            edf.total, crit.aic, crit.bic, crit.icl
        );
    }
    println!("phi: {:?}", model.phi);
    println!("A:");
    for row in &model.a {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        println!("  [{}]", cells.join(", "));
    }
    if report.flagged {
        println!("diagnostics: FLAGGED {:?}", report.reasons);
    } else {
        println!("diagnostics: clean");
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    data_path: &Path,
    k: usize,
    lambda: f64,
    n_starts: usize,
    seed: u64,
    out: &Path,
    spline: &SplineArgs,
    diag: &DiagArgs,
    em: &EmArgs,
) -> Result<()> {
    if k == 0 {
        return Err(CmdError::Input("k must be at least 1".into()));
    }
    let ds = formats::read_dataset(data_path)?;
    if ds.n_clipped > 0 {
        println!("clipped {} boundary observations on load", ds.n_clipped);
    }
    let config = diag.config();
    let opts = em.options(diag.phi_max);
    let (fit, report, edf, crit, _design) =
        fit_dataset(&ds, k, lambda, n_starts, seed, spline, &config, &opts)?;
    let model = ModelFile::from_fit(&fit, Some(report.clone()), Some(edf), Some(crit));
    model.save(out)?;
    print_fit_report(&model, &report);
    println!("model written to {}", out.display());
    if !fit.converged {
        return Err(CmdError::NonConvergence(format!(
            "EM stopped after {} iterations; partial model saved to {}",
            fit.n_iter,
            out.display()
        )));
    }
    Ok(())
}

fn grid_row(cell: &GridCell) -> formats::GridRow {
    let reasons: Vec<String> = cell.report.reasons.iter().map(|r| r.to_string()).collect();
    let min_occ = cell
        .report
        .occupancy
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    formats::GridRow {
        k: cell.k,
        lambda: cell.lambda,
        log_likelihood: cell.fit.log_likelihood,
        edf: cell.edf.total,
        aic: cell.criteria.aic,
        bic: cell.criteria.bic,
        icl: cell.criteria.icl,
        n_sat: cell.report.n_sat,
        delta_tail: cell.report.delta_tail,
        min_occupancy: min_occ,
        flagged: cell.report.flagged,
        reasons: reasons.join("|"),
        converged: cell.fit.converged,
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_select(
    data_path: &Path,
    k_set_raw: &str,
    lambda_set_raw: &str,
    n_starts: usize,
    seed: u64,
    out_dir: &Path,
    spline: &SplineArgs,
    diag: &DiagArgs,
    em: &EmArgs,
) -> Result<()> {
    let k_set: Vec<usize> = parse_list(k_set_raw, "K")?;
    let lambda_set: Vec<f64> = parse_list(lambda_set_raw, "lambda")?;
    let ds = formats::read_dataset(data_path)?;
    if ds.n_clipped > 0 {
        println!("clipped {} boundary observations on load", ds.n_clipped);
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CmdError::Input(format!("{}: {e}", out_dir.display())))?;
    let config = diag.config();
    for &k in &k_set {
        config.validate(k)?;
    }
    let opts = em.options(diag.phi_max);
    let design = SplineDesign::from_covariates(
        &ds.x_cols,
        spline.inner_knots,
        spline.degree,
        spline.penalty_order,
    )?;

    let (cells, failures) = grid_cells(
        &ds.y, &design, &k_set, &lambda_set, &config, n_starts, seed, &opts,
    );
    let rows: Vec<formats::GridRow> = cells.iter().map(grid_row).collect();
    formats::write_grid(&out_dir.join("grid.csv"), &rows)?;
    let failure_rows: Vec<formats::FailureRow> = failures
        .iter()
        .map(|f| formats::FailureRow {
            k: f.k,
            lambda: f.lambda,
            message: f.message.clone(),
        })
        .collect();
    formats::write_failures(&out_dir.join("failures.csv"), &failure_rows)?;

    let records: Vec<CellRecord> = cells
        .iter()
        .map(|c| CellRecord {
            k: c.k,
            lambda: c.lambda,
            aic: c.criteria.aic,
            bic: c.criteria.bic,
            flagged: c.report.flagged,
        })
        .collect();
    let Some((k_star, lambda_star)) = select_from_cells(&records, 2.0) else {
        return Err(CmdError::Degenerate(format!(
            "all {} candidates flagged degenerate; table written to {}",
            records.len(),
            out_dir.join("grid.csv").display()
        )));
    };
    let chosen = cells
        .iter()
        .find(|c| c.k == k_star && c.lambda == lambda_star)
        .expect("chosen cell is in the table");
    let model = ModelFile::from_fit(
        &chosen.fit,
        Some(chosen.report.clone()),
        Some(chosen.edf.clone()),
        Some(chosen.criteria),
    );
    model.save(&out_dir.join("model.json"))?;
    println!(
        "grid: {} cells fitted, {} failed; chose K = {k_star}, lambda = {lambda_star}",
        cells.len(),
        failures.len()
    );
    print_fit_report(&model, &chosen.report);
    Ok(())
}

fn cmd_decode(model_path: &Path, data_path: &Path, out: &Path) -> Result<()> {
    let model = ModelFile::load(model_path)?;
    let params = model.to_params()?;
    let ds = formats::read_dataset(data_path)?;
    if ds.x_cols.len() != params.knots.len() {
        return Err(CmdError::Input(format!(
            "model has {} covariate blocks but data has {} covariates",
            params.knots.len(),
            ds.x_cols.len()
        )));
    }
    let design = SplineDesign::from_knots(&params.knots, &ds.x_cols, params.penalty_order)?;
    let logdens = betagam::emission::log_density_matrix(&ds.y, &design, &params.states)?;
    let path = betagam::hmm::viterbi(&logdens, &params.chain)?;
    let posteriors = forward_backward(&logdens, &params.chain)?;
    formats::write_decoded(out, &ds.t, &path, &posteriors.gamma)?;
    println!(
        "decoded {} time points into {} states; wrote {}",
        path.len(),
        params.n_states(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bootstrap(
    model_path: &Path,
    data_path: &Path,
    b: usize,
    alpha: f64,
    seed: u64,
    out_dir: &Path,
    diag: &DiagArgs,
    em: &EmArgs,
) -> Result<()> {
    let model = ModelFile::load(model_path)?;
    let params = model.to_params()?;
    let ds = formats::read_dataset(data_path)?;
    let design = SplineDesign::from_knots(&params.knots, &ds.x_cols, params.penalty_order)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CmdError::Input(format!("{}: {e}", out_dir.display())))?;
    let config = diag.config();
    let opts = em.options(diag.phi_max);
    let (ensemble, table) =
        betagam::bootstrap::bootstrap(&params, &design, b, alpha, seed, &config, &opts)?;
    formats::write_intervals(&out_dir.join("intervals.csv"), &table.rows)?;
    formats::write_curve_bands(&out_dir.join("curves.csv"), &table.curves)?;
    formats::EnsembleFile::from_ensemble(&ensemble).save(&out_dir.join("ensemble.json"))?;
    let n_valid = ensemble.valid_indices().len();
    println!(
        "bootstrap: {b} replicates, {n_valid} valid; {:.0}% intervals written to {}",
        table.level * 100.0,
        out_dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_mc(
    scenario_path: &Path,
    r: usize,
    seed: u64,
    out_dir: &Path,
    lambda_grid_raw: &str,
    n_starts: usize,
    inner_knots: usize,
    em: &EmArgs,
) -> Result<()> {
    let config = formats::read_scenario(scenario_path)?;
    let lambda_grid: Vec<f64> = parse_list(lambda_grid_raw, "lambda")?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CmdError::Input(format!("{}: {e}", out_dir.display())))?;
    let fit_spec = FitSpec {
        lambda_grid,
        n_starts,
        inner_knots,
        opts: FitOptions {
            max_iter: em.max_iter,
            max_inner: em.max_inner,
            ..FitOptions::default()
        },
    };
    let report = run_monte_carlo(&config, r, &fit_spec, seed)?;
    formats::write_mc_records(&out_dir.join("replicates.csv"), &report.records)?;
    let summary = formats::McSummary::from_report(&report);
    summary.save(&out_dir.join("summary.json"))?;
    println!(
        "mc: {}/{} valid replicates; accuracy {:.3} ({:.3}), curve RMSE {:.4} ({:.4}), \
         phi RMSE {:.3} ({:.3}), A RMSE {:.4} ({:.4})",
        report.n_valid,
        r,
        report.mean_accuracy,
        report.sd_accuracy,
        report.mean_curve_rmse,
        report.sd_curve_rmse,
        report.mean_phi_rmse,
        report.sd_phi_rmse,
        report.mean_a_rmse,
        report.sd_a_rmse
    );
    for (lambda, count) in &report.lambda_tally {
        println!("lambda {lambda}: chosen {count} times");
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}
