//! Effective degrees of freedom, penalized-likelihood criteria on the EDF
//! scale, boundary diagnostics for degenerate fits, and the two-stage
//! (K, λ) grid search.

use crate::error::{Error, Result};
use crate::fit::{multi_start_fit, FitOptions, FitResult};
use crate::hmm::Posteriors;
use crate::linalg::cholesky;
use crate::numeric::{derive_seed, logistic};
use crate::spline::SplineDesign;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Thresholds for the precision-explosion and occupancy filter.
///
/// Two stock regimes: `simulation()` for proportions with moderate noise,
/// `mortality()` for very high precision data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticConfig {
    /// Upper optimizer bound for φ.
    pub phi_max: f64,
    /// Saturation slack: φ counts as at the bound when φ ≥ φ_max − eps_sat.
    pub eps_sat: f64,
    /// Minimum number of saturated precisions that triggers the flag.
    pub s_thresh: usize,
    /// Single tail-gap threshold.
    pub delta_abs: f64,
    /// Summed tail-gap threshold.
    pub delta_sum: f64,
    /// Minimum posterior occupancy share per state.
    pub occupancy_min: f64,
}

impl DiagnosticConfig {
    /// Thresholds used for simulated proportion data: (φ_max, Δ_abs, Δ_sum)
    /// = (500, 50, 100).
    pub fn simulation() -> Self {
        DiagnosticConfig {
            phi_max: 500.0,
            eps_sat: 1e-6,
            s_thresh: 2,
            delta_abs: 50.0,
            delta_sum: 100.0,
            occupancy_min: 0.05,
        }
    }

    /// Thresholds for high-precision mortality-style data:
    /// (2000, 500, 1000).
    pub fn mortality() -> Self {
        DiagnosticConfig {
            phi_max: 2000.0,
            eps_sat: 1e-6,
            s_thresh: 2,
            delta_abs: 500.0,
            delta_sum: 1000.0,
            occupancy_min: 0.05,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.delta_abs < self.delta_sum) {
            return Err(Error::InvalidParameter(format!(
                "delta_abs {} must be below delta_sum {}",
                self.delta_abs, self.delta_sum
            )));
        }
        if k > 0 && !(self.occupancy_min > 0.0 && self.occupancy_min < 1.0 / k as f64) {
            return Err(Error::InvalidParameter(format!(
                "occupancy_min {} outside (0, 1/{k})",
                self.occupancy_min
            )));
        }
        Ok(())
    }
}

/// Which rule tripped the degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    /// At least s_thresh precisions at the optimizer ceiling.
    Saturation,
    /// A single ordered-φ gap in the tail exceeds delta_abs.
    TailGap,
    /// The summed tail gaps exceed delta_sum.
    TailSum,
    /// Some state holds less posterior mass than occupancy_min.
    Occupancy,
}

impl std::fmt::Display for FlagReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FlagReason::Saturation => "saturation",
            FlagReason::TailGap => "tail_gap",
            FlagReason::TailSum => "tail_sum",
            FlagReason::Occupancy => "occupancy",
        };
        f.write_str(s)
    }
}

/// Outcome of the degeneracy filter for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    /// Number of precisions within eps_sat of the ceiling.
    pub n_sat: usize,
    /// All K−1 gaps of the φ values sorted ascending.
    pub tail_deltas: Vec<f64>,
    /// Sum of the last min(3, K−1) gaps.
    pub delta_tail: f64,
    /// Posterior mass share per state.
    pub occupancy: Vec<f64>,
    pub flagged: bool,
    pub reasons: Vec<FlagReason>,
}

/// Apply the explosion/occupancy rules to a fitted model's precisions and
/// posteriors. Pure: identical inputs produce identical reports.
pub fn diagnose(phi_hat: &[f64], posteriors: &Posteriors, config: &DiagnosticConfig) -> DiagnosticReport {
    let k = phi_hat.len();
    let t_len = posteriors.gamma.nrows();

    let n_sat = phi_hat
        .iter()
        .filter(|&&phi| phi >= config.phi_max - config.eps_sat)
        .count();

    let mut sorted: Vec<f64> = phi_hat.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail_deltas: Vec<f64> = sorted.windows(2).map(|w| w[1] - w[0]).collect();
    let m = k.saturating_sub(1).min(3);
    let delta_tail: f64 = tail_deltas.iter().rev().take(m).sum();

    let occupancy: Vec<f64> = (0..k)
        .map(|s| posteriors.gamma.column(s).sum() / t_len as f64)
        .collect();

    let mut reasons = Vec::new();
    if n_sat >= config.s_thresh {
        reasons.push(FlagReason::Saturation);
    }
    if tail_deltas.iter().rev().take(m).any(|d| *d > config.delta_abs) {
        reasons.push(FlagReason::TailGap);
    }
    if delta_tail > config.delta_sum {
        reasons.push(FlagReason::TailSum);
    }
    if occupancy.iter().any(|o| *o < config.occupancy_min) {
        reasons.push(FlagReason::Occupancy);
    }

    DiagnosticReport {
        n_sat,
        tail_deltas,
        delta_tail,
        occupancy,
        flagged: !reasons.is_empty(),
        reasons,
    }
}

/// Effective degrees of freedom of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edf {
    /// ν_k = tr[(𝓑ᵀW_k𝓑 + λP)⁻¹ 𝓑ᵀW_k𝓑] per state.
    pub per_state: Vec<f64>,
    /// Σ_k ν_k + K + K(K−1).
    pub total: f64,
    /// Whether the 1e−10 ridge fallback was needed for any state.
    pub ridge_fallback: bool,
}

/// Hat-matrix trace EDF with W_k = diag(γ_tk μ_kt(1−μ_kt)).
pub fn effective_dof(
    design: &SplineDesign,
    posteriors: &Posteriors,
    states: &[crate::emission::StateEmission],
    lambda: f64,
) -> Result<Edf> {
    let k = states.len();
    let p_m = design.n_cols();
    let t_len = design.n_rows();
    if posteriors.gamma.nrows() != t_len {
        return Err(Error::DimensionMismatch(format!(
            "posteriors cover {} rows, design has {t_len}",
            posteriors.gamma.nrows()
        )));
    }
    let mut per_state = Vec::with_capacity(k);
    let mut ridge_fallback = false;
    for (s_idx, state) in states.iter().enumerate() {
        let eta = design.basis.dot(&state.beta);
        let mut h = Array2::<f64>::zeros((p_m, p_m));
        for t in 0..t_len {
            let mu = logistic(eta[t]);
            let w = posteriors.gamma[(t, s_idx)] * mu * (1.0 - mu);
            if w == 0.0 {
                continue;
            }
            let row = design.basis.row(t);
            for i in 0..p_m {
                let wi = w * row[i];
                for j in i..p_m {
                    h[(i, j)] += wi * row[j];
                }
            }
        }
        for i in 0..p_m {
            for j in 0..i {
                h[(i, j)] = h[(j, i)];
            }
        }
        let mut s_mat = &h + &(&design.penalty * lambda);
        let factor = match cholesky(&s_mat) {
            Some(f) => f,
            None => {
                ridge_fallback = true;
                for i in 0..p_m {
                    s_mat[(i, i)] += 1e-10;
                }
                cholesky(&s_mat).ok_or(Error::NonFiniteLikelihood)?
            }
        };
        // tr(S⁻¹H) by solving one column at a time.
        let mut trace = 0.0;
        for col in 0..p_m {
            let rhs = h.column(col).to_owned();
            let x = crate::linalg::cholesky_solve(&factor, &rhs);
            trace += x[col];
        }
        per_state.push(trace);
    }
    let kf = k as f64;
    let total = per_state.iter().sum::<f64>() + kf + kf * (kf - 1.0);
    Ok(Edf {
        per_state,
        total,
        ridge_fallback,
    })
}

/// AIC/BIC/ICL on the effective-dimension scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub aic: f64,
    pub bic: f64,
    pub icl: f64,
}

/// Compute the three criteria from the unpenalized log-likelihood, the
/// posterior entropy, and ν. The entropy term uses 0·log 0 = 0.
pub fn criteria(fit: &FitResult, nu: f64) -> Criteria {
    let ll = fit.log_likelihood;
    let t_len = fit.posteriors.gamma.nrows() as f64;
    let aic = -2.0 * ll + 2.0 * nu;
    let bic = -2.0 * ll + nu * t_len.ln();
    let mut entropy = 0.0;
    for g in fit.posteriors.gamma.iter() {
        if *g > 0.0 {
            entropy -= 2.0 * g * g.ln();
        }
    }
    Criteria {
        aic,
        bic,
        icl: bic + entropy,
    }
}

/// One fitted grid cell with its criteria and diagnostics.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub k: usize,
    pub lambda: f64,
    pub fit: FitResult,
    pub edf: Edf,
    pub criteria: Criteria,
    pub report: DiagnosticReport,
}

/// Minimal per-cell record sufficient to replay the two-stage selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub k: usize,
    pub lambda: f64,
    pub aic: f64,
    pub bic: f64,
    pub flagged: bool,
}

/// A cell that could not be fitted at all.
#[derive(Debug, Clone)]
pub struct CellFailure {
    pub k: usize,
    pub lambda: f64,
    pub message: String,
}

/// Full grid-search output.
#[derive(Debug, Clone)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    pub failures: Vec<CellFailure>,
    /// Indices into `cells` of the unflagged members.
    pub valid_set: Vec<usize>,
    /// Selected (K*, λ*).
    pub chosen: (usize, f64),
    /// Index into `cells` of the chosen cell.
    pub chosen_idx: usize,
}

/// Replay the two-stage rule over stored records: per K, the valid λ with
/// the lowest AIC; across K, the largest K whose BIC is within `bic_tol` of
/// the minimum. Returns None when no record is valid.
pub fn select_from_cells(records: &[CellRecord], bic_tol: f64) -> Option<(usize, f64)> {
    let mut ks: Vec<usize> = records.iter().filter(|r| !r.flagged).map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return None;
    }
    // Stage 1: λ*(K) by AIC among valid cells; ties keep the smaller λ.
    let mut stage1: Vec<(usize, f64, f64)> = Vec::new();
    for &k in &ks {
        let mut best: Option<(f64, f64)> = None;
        for r in records.iter().filter(|r| !r.flagged && r.k == k) {
            let better = match best {
                None => true,
                Some((aic, lambda)) => {
                    r.aic < aic || (r.aic == aic && r.lambda < lambda)
                }
            };
            if better {
                best = Some((r.aic, r.lambda));
            }
        }
        let (_, lambda) = best.expect("k came from a valid record");
        let bic = records
            .iter()
            .find(|r| r.k == k && r.lambda == lambda)
            .expect("cell exists")
            .bic;
        stage1.push((k, lambda, bic));
    }
    // Stage 2: the largest K within bic_tol of the best BIC.
    let bic_min = stage1.iter().map(|(_, _, b)| *b).fold(f64::INFINITY, f64::min);
    stage1
        .iter()
        .filter(|(_, _, b)| *b <= bic_min + bic_tol)
        .max_by_key(|(k, _, _)| *k)
        .map(|(k, lambda, _)| (*k, *lambda))
}

/// Fit every (K, λ) cell with multi-start EM, attach criteria and
/// Fit every (K, λ) cell and score it; failed cells are recorded, not
/// fatal. Cell seeds derive from `seed` by cell index and cells are
/// independent, so the ordered parallel collect yields the same grid under
/// any worker count.
#[allow(clippy::too_many_arguments)]
pub fn grid_cells(
    y: &Array1<f64>,
    design: &SplineDesign,
    k_set: &[usize],
    lambda_set: &[f64],
    config: &DiagnosticConfig,
    n_starts: usize,
    seed: u64,
    opts: &FitOptions,
) -> (Vec<GridCell>, Vec<CellFailure>) {
    let grid: Vec<(usize, f64)> = k_set
        .iter()
        .flat_map(|&k| lambda_set.iter().map(move |&l| (k, l)))
        .collect();

    let outcomes: Vec<std::result::Result<GridCell, CellFailure>> = grid
        .par_iter()
        .enumerate()
        .map(|(cell_idx, &(k, lambda))| {
            let cell_seed = derive_seed(seed, cell_idx as u64);
            multi_start_fit(y, design, k, lambda, n_starts, cell_seed, opts)
                .and_then(|ms| {
                    let fit = ms.best;
                    let phi: Vec<f64> = fit.params.states.iter().map(|s| s.phi).collect();
                    let edf = effective_dof(design, &fit.posteriors, &fit.params.states, lambda)?;
                    let crit = criteria(&fit, edf.total);
                    let report = diagnose(&phi, &fit.posteriors, config);
                    Ok(GridCell {
                        k,
                        lambda,
                        fit,
                        edf,
                        criteria: crit,
                        report,
                    })
                })
                .map_err(|e| CellFailure {
                    k,
                    lambda,
                    message: e.to_string(),
                })
        })
        .collect();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(cell) => cells.push(cell),
            Err(fail) => failures.push(fail),
        }
    }
    (cells, failures)
}

/// Fit the full (K, λ) grid via `grid_cells`, score and diagnose each cell,
/// and apply the two-stage selection rule.
pub fn grid_search(
    y: &Array1<f64>,
    design: &SplineDesign,
    k_set: &[usize],
    lambda_set: &[f64],
    config: &DiagnosticConfig,
    n_starts: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<GridResult> {
    if k_set.is_empty() || lambda_set.is_empty() {
        return Err(Error::EmptyInput("empty K or lambda grid"));
    }
    for &k in k_set {
        config.validate(k)?;
    }

    let (cells, failures) = grid_cells(y, design, k_set, lambda_set, config, n_starts, seed, opts);

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
    let chosen = select_from_cells(&records, 2.0).ok_or(Error::AllCellsDegenerate)?;
    let valid_set: Vec<usize> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.report.flagged)
        .map(|(i, _)| i)
        .collect();
    let chosen_idx = cells
        .iter()
        .position(|c| c.k == chosen.0 && c.lambda == chosen.1)
        .expect("chosen cell exists");

    Ok(GridResult {
        cells,
        failures,
        valid_set,
        chosen,
        chosen_idx,
    })
}
