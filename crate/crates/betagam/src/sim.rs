//! Scenario generator for synthetic proportion series with latent regimes,
//! and the Monte Carlo harness measuring curve, precision, transition, and
//! decoding recovery.

use crate::bootstrap::curve_permutation;
use crate::error::{Error, Result};
use crate::fit::{multi_start_fit, permute_model, FitOptions, FitResult, ModelParams};
use crate::hmm::{viterbi, ChainParams};
use crate::numeric::{clip_unit, derive_seed, logistic, CLIP_EPS};
use crate::select::{diagnose, effective_dof, DiagnosticConfig};
use crate::spline::{evaluate_basis, SplineDesign};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Points on the recovery-metric grid over the covariate range.
pub const METRIC_GRID: usize = 200;

/// Parametric logit-scale mean function families for scenario configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanFn {
    /// a + b·sin(c·x)
    Sine { a: f64, b: f64, c: f64 },
    /// a + b·x + c·x²
    Quadratic { a: f64, b: f64, c: f64 },
    /// a + b·exp(c·x)
    Exponential { a: f64, b: f64, c: f64 },
    /// a + b·x + c·sin(d·x)
    LinearSine { a: f64, b: f64, c: f64, d: f64 },
}

impl MeanFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            MeanFn::Sine { a, b, c } => a + b * (c * x).sin(),
            MeanFn::Quadratic { a, b, c } => a + b * x + c * x * x,
            MeanFn::Exponential { a, b, c } => a + b * (c * x).exp(),
            MeanFn::LinearSine { a, b, c, d } => a + b * x + c * (d * x).sin(),
        }
    }
}

/// Mutually separated but locally overlapping logit-scale quartet used by
/// the stock scenarios.
pub fn quartet() -> Vec<MeanFn> {
    vec![
        MeanFn::Sine { a: 0.0, b: 1.0, c: 1.5 },
        MeanFn::Quadratic { a: -0.5, b: 0.0, c: 0.4 },
        MeanFn::Exponential { a: 0.8, b: -0.3, c: 0.5 },
        MeanFn::LinearSine { a: -1.0, b: 0.5, c: 0.5, d: 2.0 },
    ]
}

/// Full description of a synthetic data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub t_len: usize,
    pub k_true: usize,
    /// Diagonal persistence; off-diagonal mass is (1−δ)/(K−1) per entry.
    pub delta: f64,
    pub phi_true: Vec<f64>,
    pub covariate_range: (f64, f64),
    pub mean_functions: Vec<MeanFn>,
    pub inner_knots: usize,
    /// Optional default seed; command-line seeds take precedence.
    pub seed: Option<u64>,
}

impl ScenarioConfig {
    /// Long persistent series: T = 2500, δ = 0.95, φ = (10, 18, 28, 40).
    pub fn baseline() -> Self {
        ScenarioConfig {
            t_len: 2500,
            k_true: 4,
            delta: 0.95,
            phi_true: vec![10.0, 18.0, 28.0, 40.0],
            covariate_range: (-2.0, 2.0),
            mean_functions: quartet(),
            inner_knots: 6,
            seed: None,
        }
    }

    /// Shorter, less persistent series: T = 1500, δ = 0.85.
    pub fn hard() -> Self {
        ScenarioConfig {
            t_len: 1500,
            delta: 0.85,
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_true == 0 {
            return Err(Error::InvalidParameter("k_true must be at least 1".into()));
        }
        if self.phi_true.len() != self.k_true || self.mean_functions.len() != self.k_true {
            return Err(Error::InvalidParameter(format!(
                "k_true = {} but {} precisions and {} mean functions",
                self.k_true,
                self.phi_true.len(),
                self.mean_functions.len()
            )));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidParameter(format!("delta {} outside (0, 1]", self.delta)));
        }
        if self.phi_true.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidParameter("phi_true entries must be positive".into()));
        }
        if !(self.covariate_range.0 < self.covariate_range.1) {
            return Err(Error::InvalidParameter("empty covariate range".into()));
        }
        if self.t_len < self.k_true {
            return Err(Error::InvalidParameter(format!(
                "t_len {} cannot support {} states",
                self.t_len, self.k_true
            )));
        }
        Ok(())
    }

    /// True transition matrix implied by the persistence δ.
    pub fn chain(&self) -> ChainParams {
        ChainParams::persistent(self.k_true, self.delta)
    }
}

/// One simulated dataset with its generating truth.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub x: Vec<f64>,
    pub y: Array1<f64>,
    pub z_true: Vec<usize>,
    /// μ_k(x_t) for every state, row t column k.
    pub true_means: Array2<f64>,
}

/// Draw a latent path from the persistent chain (uniform initial state),
/// covariates iid uniform on the range, and Beta observations around the
/// state's mean curve.
pub fn generate_dataset(config: &ScenarioConfig, rng: &mut impl Rng) -> Result<GeneratedData> {
    config.validate()?;
    let t_len = config.t_len;
    let k = config.k_true;
    let (lo, hi) = config.covariate_range;

    let mut z = Vec::with_capacity(t_len);
    z.push(rng.random_range(0..k));
    for t in 1..t_len {
        let prev = z[t - 1];
        let u: f64 = rng.random();
        let next = if u < config.delta {
            prev
        } else if k > 1 {
            // Uniform over the K−1 other states.
            let step = 1 + ((u - config.delta) / (1.0 - config.delta) * (k - 1) as f64) as usize;
            (prev + step.min(k - 1)) % k
        } else {
            prev
        };
        z.push(next);
    }

    let x: Vec<f64> = (0..t_len).map(|_| rng.random_range(lo..hi)).collect();
    let mut true_means = Array2::<f64>::zeros((t_len, k));
    for t in 0..t_len {
        for s in 0..k {
            true_means[(t, s)] = logistic(config.mean_functions[s].eval(x[t]));
        }
    }
    let mut y = Array1::<f64>::zeros(t_len);
    for t in 0..t_len {
        let mu = true_means[(t, z[t])];
        let phi = config.phi_true[z[t]];
        let dist = rand_distr::Beta::new(mu * phi, (1.0 - mu) * phi)
            .expect("interior mean and positive precision");
        y[t] = clip_unit(rng.sample(dist), CLIP_EPS);
    }

    Ok(GeneratedData {
        x,
        y,
        z_true: z,
        true_means,
    })
}

/// Equally spaced metric grid over the scenario's covariate range.
pub fn metric_grid(config: &ScenarioConfig, n: usize) -> Vec<f64> {
    let (lo, hi) = config.covariate_range;
    (0..n).map(|g| lo + (hi - lo) * g as f64 / (n - 1) as f64).collect()
}

/// True state mean curves on a grid: G×K of logistic(f_k(x)).
pub fn true_curves(config: &ScenarioConfig, grid: &[f64]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((grid.len(), config.k_true));
    for (g, &x) in grid.iter().enumerate() {
        for s in 0..config.k_true {
            out[(g, s)] = logistic(config.mean_functions[s].eval(x));
        }
    }
    out
}

/// Fitted state mean curves on an explicit grid. Scenario fits are
/// univariate, so the single covariate block carries the whole predictor.
pub fn fitted_curves(params: &ModelParams, grid: &[f64]) -> Array2<f64> {
    debug_assert_eq!(params.knots.len(), 1, "scenario fits are univariate");
    let basis = evaluate_basis(&params.knots[0], grid);
    let k = params.n_states();
    let mut out = Array2::<f64>::zeros((grid.len(), k));
    for (s, state) in params.states.iter().enumerate() {
        let eta = basis.dot(&state.beta);
        for g in 0..grid.len() {
            out[(g, s)] = logistic(eta[g]);
        }
    }
    out
}

/// How each replicate is fitted inside the Monte Carlo loop.
#[derive(Debug, Clone)]
pub struct FitSpec {
    /// λ candidates; the replicate keeps the AIC minimizer.
    pub lambda_grid: Vec<f64>,
    pub n_starts: usize,
    pub inner_knots: usize,
    pub opts: FitOptions,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            lambda_grid: vec![0.005, 0.05, 0.5, 1.0, 5.0, 10.0],
            n_starts: 5,
            inner_knots: 6,
            opts: FitOptions::default(),
        }
    }
}

/// Recovery metrics and bookkeeping for one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub lambda: f64,
    pub curve_rmse: f64,
    pub phi_rmse: f64,
    pub a_rmse: f64,
    pub viterbi_accuracy: f64,
    pub valid: bool,
    pub error: Option<String>,
}

/// Aggregated Monte Carlo output. Means and standard deviations cover the
/// valid replicates only; every replicate keeps its own row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub records: Vec<ReplicateRecord>,
    /// (λ, times chosen) over valid replicates, in grid order.
    pub lambda_tally: Vec<(f64, usize)>,
    pub n_valid: usize,
    pub mean_curve_rmse: f64,
    pub sd_curve_rmse: f64,
    pub mean_phi_rmse: f64,
    pub sd_phi_rmse: f64,
    pub mean_a_rmse: f64,
    pub sd_a_rmse: f64,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Pure recovery metrics for one fitted replicate against its truth. The fit
/// is aligned to the true curves before anything is compared.
pub fn replicate_metrics(
    fit: &FitResult,
    data: &GeneratedData,
    config: &ScenarioConfig,
    design: &SplineDesign,
) -> Result<(f64, f64, f64, f64)> {
    let grid = metric_grid(config, METRIC_GRID);
    let truth = true_curves(config, &grid);
    let cand = fitted_curves(&fit.params, &grid);
    let perm = curve_permutation(&cand, &truth);
    let aligned = permute_model(&fit.params, &perm);

    let aligned_curves = fitted_curves(&aligned, &grid);
    let k = config.k_true;
    let mut acc = 0.0;
    for g in 0..grid.len() {
        for s in 0..k {
            let d = aligned_curves[(g, s)] - truth[(g, s)];
            acc += d * d;
        }
    }
    let curve_rmse = (acc / (grid.len() * k) as f64).sqrt();

    let phi_sq = (0..k)
        .map(|s| {
            let d = aligned.states[s].phi - config.phi_true[s];
            d * d
        })
        .sum::<f64>();
    let phi_rmse = (phi_sq / k as f64).sqrt();

    let a_true = config.chain().a;
    let mut a_acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            let d = aligned.chain.a[(i, j)] - a_true[(i, j)];
            a_acc += d * d;
        }
    }
    let a_rmse = (a_acc / (k * k) as f64).sqrt();

    let logdens = crate::emission::log_density_matrix(&data.y, design, &aligned.states)?;
    let path = viterbi(&logdens, &aligned.chain)?;
    let hits = path
        .iter()
        .zip(&data.z_true)
        .filter(|(a, b)| a == b)
        .count();
    let accuracy = hits as f64 / data.z_true.len() as f64;

    Ok((curve_rmse, phi_rmse, a_rmse, accuracy))
}

/// Run R independent replicates: generate, fit over the λ grid at the true
/// K, keep the AIC minimizer, align to truth, and score. Replicates carry
/// derived seeds, so the report is identical under any worker count.
pub fn run_monte_carlo(
    config: &ScenarioConfig,
    r: usize,
    fit_spec: &FitSpec,
    seed: u64,
) -> Result<McReport> {
    config.validate()?;
    if r == 0 {
        return Err(Error::EmptyInput("zero Monte Carlo replicates"));
    }
    if fit_spec.lambda_grid.is_empty() {
        return Err(Error::EmptyInput("empty lambda grid"));
    }

    let records: Vec<ReplicateRecord> = (0..r)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(seed, rep as u64);
            run_replicate(config, fit_spec, rep, rep_seed)
        })
        .collect();

    let valid: Vec<&ReplicateRecord> = records.iter().filter(|r| r.valid).collect();
    let n_valid = valid.len();
    let lambda_tally: Vec<(f64, usize)> = fit_spec
        .lambda_grid
        .iter()
        .map(|&l| (l, valid.iter().filter(|r| r.lambda == l).count()))
        .collect();
    let pull = |f: fn(&ReplicateRecord) -> f64| -> Vec<f64> { valid.iter().map(|r| f(r)).collect() };
    let (mean_curve_rmse, sd_curve_rmse) = mean_sd(&pull(|r| r.curve_rmse));
    let (mean_phi_rmse, sd_phi_rmse) = mean_sd(&pull(|r| r.phi_rmse));
    let (mean_a_rmse, sd_a_rmse) = mean_sd(&pull(|r| r.a_rmse));
    let (mean_accuracy, sd_accuracy) = mean_sd(&pull(|r| r.viterbi_accuracy));

    Ok(McReport {
        records,
        lambda_tally,
        n_valid,
        mean_curve_rmse,
        sd_curve_rmse,
        mean_phi_rmse,
        sd_phi_rmse,
        mean_a_rmse,
        sd_a_rmse,
        mean_accuracy,
        sd_accuracy,
    })
}

fn run_replicate(
    config: &ScenarioConfig,
    fit_spec: &FitSpec,
    rep: usize,
    rep_seed: u64,
) -> ReplicateRecord {
    let failed = |msg: String| ReplicateRecord {
        replicate: rep,
        seed: rep_seed,
        lambda: f64::NAN,
        curve_rmse: f64::NAN,
        phi_rmse: f64::NAN,
        a_rmse: f64::NAN,
        viterbi_accuracy: f64::NAN,
        valid: false,
        error: Some(msg),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, 0));
    let data = match generate_dataset(config, &mut rng) {
        Ok(d) => d,
        Err(e) => return failed(e.to_string()),
    };
    let design = match SplineDesign::from_covariates(
        std::slice::from_ref(&data.x),
        fit_spec.inner_knots,
        3,
        2,
    ) {
        Ok(d) => d,
        Err(e) => return failed(e.to_string()),
    };

    // Stage-1 selection at the true K: keep the λ with the smallest AIC.
    let mut best: Option<(f64, f64, FitResult)> = None;
    let mut last_err = String::new();
    for (li, &lambda) in fit_spec.lambda_grid.iter().enumerate() {
        let ms = multi_start_fit(
            &data.y,
            &design,
            config.k_true,
            lambda,
            fit_spec.n_starts,
            derive_seed(rep_seed, 1 + li as u64),
            &fit_spec.opts,
        );
        match ms {
            Ok(ms) => {
                let fit = ms.best;
                let edf = match effective_dof(&design, &fit.posteriors, &fit.params.states, lambda)
                {
                    Ok(e) => e,
                    Err(e) => {
                        last_err = e.to_string();
                        continue;
                    }
                };
                let aic = -2.0 * fit.log_likelihood + 2.0 * edf.total;
                if best.as_ref().is_none_or(|(a, _, _)| aic < *a) {
                    best = Some((aic, lambda, fit));
                }
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    let Some((_aic, lambda, fit)) = best else {
        return failed(format!("all lambda cells failed: {last_err}"));
    };

    // A replicate counts as valid when EM converged and the diagnostic
    // screen finds no excess states; summaries pool valid replicates only.
    let phi: Vec<f64> = fit.params.states.iter().map(|s| s.phi).collect();
    let report = diagnose(&phi, &fit.posteriors, &DiagnosticConfig::simulation());

    match replicate_metrics(&fit, &data, config, &design) {
        Ok((curve_rmse, phi_rmse, a_rmse, viterbi_accuracy)) => ReplicateRecord {
            replicate: rep,
            seed: rep_seed,
            lambda,
            curve_rmse,
            phi_rmse,
            a_rmse,
            viterbi_accuracy,
            valid: fit.converged && !report.flagged,
            error: None,
        },
        Err(e) => failed(e.to_string()),
    }
}
