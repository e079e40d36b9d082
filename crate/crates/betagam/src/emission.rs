//! Beta emission model: state-specific linear predictors, means,
//! log-densities, and the analytic gradients used by the M-step.
//!
//! Observations live in (0, 1) and follow a mean-precision Beta law:
//! `y ~ Beta(μφ, (1−μ)φ)` with `logit(μ) = 𝓑β`. Gradients are returned in
//! the optimizer's coordinates: β directly, precision through log φ.

use crate::error::{Error, Result};
use crate::numeric::{digamma, log_gamma, logistic};
use crate::spline::SplineDesign;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Lower precision bound, fixed throughout.
pub const PHI_MIN: f64 = 1.0;

/// Box bounds for the precision parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiBounds {
    pub min: f64,
    pub max: f64,
}

impl PhiBounds {
    /// Bounds `[PHI_MIN, max]` for a given ceiling.
    pub fn with_max(max: f64) -> Self {
        PhiBounds { min: PHI_MIN, max }
    }

    /// Clamp a precision into the box.
    pub fn clamp(&self, phi: f64) -> f64 {
        phi.max(self.min).min(self.max)
    }
}

/// Emission parameters for one hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEmission {
    /// Spline coefficients, length pM.
    pub beta: Array1<f64>,
    /// Precision, in `[bounds.min, bounds.max]`.
    pub phi: f64,
    pub bounds: PhiBounds,
}

impl StateEmission {
    pub fn new(beta: Array1<f64>, phi: f64, bounds: PhiBounds) -> Self {
        StateEmission {
            beta,
            phi: bounds.clamp(phi),
            bounds,
        }
    }
}

/// Per-state evaluation over all time points.
#[derive(Debug, Clone)]
pub struct EmissionEval {
    /// Linear predictor η = 𝓑β.
    pub eta: Array1<f64>,
    /// Mean μ = logistic(η), clipped away from {0, 1}.
    pub mu: Array1<f64>,
    /// Beta log-density of each observation.
    pub logdens: Array1<f64>,
}

/// Log-density of the mean-precision Beta law at one point.
///
/// `y` and `mu` are assumed already clipped into `[ε, 1−ε]`.
pub fn beta_log_density(y: f64, mu: f64, phi: f64) -> f64 {
    let a = mu * phi;
    let b = (1.0 - mu) * phi;
    log_gamma(phi) - log_gamma(a) - log_gamma(b) + (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln()
}

/// Evaluate one state's predictor, mean, and log-density along the series.
pub fn eval_state(y: &Array1<f64>, design: &SplineDesign, state: &StateEmission) -> Result<EmissionEval> {
    if y.len() != design.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations but design has {} rows",
            y.len(),
            design.n_rows()
        )));
    }
    if state.beta.len() != design.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} coefficients but design has {} columns",
            state.beta.len(),
            design.n_cols()
        )));
    }
    let eta = design.basis.dot(&state.beta);
    let mu = eta.mapv(logistic);
    let logdens = Array1::from_iter(
        y.iter()
            .zip(mu.iter())
            .map(|(&yt, &mt)| beta_log_density(yt, mt, state.phi)),
    );
    Ok(EmissionEval { eta, mu, logdens })
}

/// T x K matrix of Beta log-densities, one column per state.
pub fn log_density_matrix(
    y: &Array1<f64>,
    design: &SplineDesign,
    states: &[StateEmission],
) -> Result<Array2<f64>> {
    if states.is_empty() {
        return Err(Error::EmptyInput("log_density_matrix needs at least one state"));
    }
    let mut out = Array2::<f64>::zeros((y.len(), states.len()));
    for (k, state) in states.iter().enumerate() {
        let eval = eval_state(y, design, state)?;
        out.column_mut(k).assign(&eval.logdens);
    }
    Ok(out)
}

/// Weighted penalized emission objective for one state:
/// `Σ_t γ_tk log f(y_t; μ_kt, φ_k) − λ βᵀPβ`.
pub fn penalized_objective(
    y: &Array1<f64>,
    gamma_k: &Array1<f64>,
    design: &SplineDesign,
    state: &StateEmission,
    lambda: f64,
) -> Result<f64> {
    let eval = eval_state(y, design, state)?;
    let weighted: f64 = gamma_k
        .iter()
        .zip(eval.logdens.iter())
        .map(|(&g, &ld)| g * ld)
        .sum();
    Ok(weighted - lambda * design.penalty_form(&state.beta))
}

/// Gradient of the penalized objective with respect to β.
pub fn grad_beta(
    y: &Array1<f64>,
    gamma_k: &Array1<f64>,
    design: &SplineDesign,
    state: &StateEmission,
    lambda: f64,
) -> Result<Array1<f64>> {
    let eval = eval_state(y, design, state)?;
    let phi = state.phi;
    let mut w = Array1::<f64>::zeros(y.len());
    for t in 0..y.len() {
        let mu = eval.mu[t];
        let yt = y[t];
        let bracket = (yt / (1.0 - yt)).ln() - digamma(mu * phi) + digamma((1.0 - mu) * phi);
        w[t] = gamma_k[t] * phi * bracket * mu * (1.0 - mu);
    }
    let data_grad = design.basis.t().dot(&w);
    let penalty_grad = design.penalty.dot(&state.beta) * (2.0 * lambda);
    Ok(data_grad - penalty_grad)
}

/// Per-series constants shared by repeated objective evaluations: the data
/// logs never change inside an M-step.
#[derive(Debug, Clone)]
pub struct ObjectiveWorkspace {
    ln_y: Array1<f64>,
    ln_1my: Array1<f64>,
}

impl ObjectiveWorkspace {
    pub fn new(y: &Array1<f64>) -> Self {
        ObjectiveWorkspace {
            ln_y: y.mapv(f64::ln),
            ln_1my: y.mapv(|v| (1.0 - v).ln()),
        }
    }

    pub fn len(&self) -> usize {
        self.ln_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln_y.is_empty()
    }
}

/// Penalized objective and, on request, its gradient in (β, log φ)
/// coordinates, computed in a single pass over the series. Equivalent to
/// `penalized_objective` / `grad_beta` / `grad_log_phi` but shares the
/// predictor, digamma, and log-gamma work, which dominates M-step cost.
pub fn value_and_grad(
    gamma_k: &Array1<f64>,
    design: &SplineDesign,
    ws: &ObjectiveWorkspace,
    state: &StateEmission,
    lambda: f64,
    want_grad: bool,
) -> Result<(f64, Option<(Array1<f64>, f64)>)> {
    let t_len = design.n_rows();
    if ws.len() != t_len || gamma_k.len() != t_len {
        return Err(Error::DimensionMismatch(format!(
            "workspace {} / weights {} rows against design {t_len}",
            ws.len(),
            gamma_k.len()
        )));
    }
    if state.beta.len() != design.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} coefficients but design has {} columns",
            state.beta.len(),
            design.n_cols()
        )));
    }
    let phi = state.phi;
    let eta = design.basis.dot(&state.beta);
    let lg_phi = log_gamma(phi);
    let dg_phi = if want_grad { digamma(phi) } else { 0.0 };

    let mut value = 0.0;
    let mut w = if want_grad {
        Array1::<f64>::zeros(t_len)
    } else {
        Array1::<f64>::zeros(0)
    };
    let mut phi_total = 0.0;
    for t in 0..t_len {
        let g = gamma_k[t];
        if g == 0.0 {
            continue;
        }
        let mu = logistic(eta[t]);
        let a = mu * phi;
        let b = (1.0 - mu) * phi;
        let ld = lg_phi - log_gamma(a) - log_gamma(b)
            + (a - 1.0) * ws.ln_y[t]
            + (b - 1.0) * ws.ln_1my[t];
        value += g * ld;
        if want_grad {
            let da = digamma(a);
            let db = digamma(b);
            let bracket_beta = (ws.ln_y[t] - ws.ln_1my[t]) - da + db;
            w[t] = g * phi * bracket_beta * mu * (1.0 - mu);
            let bracket_phi =
                dg_phi - mu * da - (1.0 - mu) * db + mu * ws.ln_y[t] + (1.0 - mu) * ws.ln_1my[t];
            phi_total += g * bracket_phi;
        }
    }
    value -= lambda * design.penalty_form(&state.beta);
    if !want_grad {
        return Ok((value, None));
    }
    let data_grad = design.basis.t().dot(&w);
    let penalty_grad = design.penalty.dot(&state.beta) * (2.0 * lambda);
    Ok((value, Some((data_grad - penalty_grad, phi * phi_total))))
}

/// Gradient of the weighted objective with respect to log φ (chain-rule
/// factor φ applied). The penalty does not involve φ.
pub fn grad_log_phi(
    y: &Array1<f64>,
    gamma_k: &Array1<f64>,
    design: &SplineDesign,
    state: &StateEmission,
) -> Result<f64> {
    let eval = eval_state(y, design, state)?;
    let phi = state.phi;
    let dig_phi = digamma(phi);
    let mut total = 0.0;
    for t in 0..y.len() {
        let mu = eval.mu[t];
        let yt = y[t];
        let bracket = dig_phi - mu * digamma(mu * phi) - (1.0 - mu) * digamma((1.0 - mu) * phi)
            + mu * yt.ln()
            + (1.0 - mu) * (1.0 - yt).ln();
        total += gamma_k[t] * bracket;
    }
    Ok(phi * total)
}
