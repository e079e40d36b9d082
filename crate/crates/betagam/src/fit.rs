//! Penalized generalized-EM driver: E-step via the forward-backward sweep,
//! per-state quasi-Newton M-steps, multi-start, and canonical relabeling.
//!
//! The M-step improves rather than exactly maximizes the expected penalized
//! complete-data objective, so the penalized observed-data log-likelihood is
//! non-decreasing across iterations; the trace is kept and any numerical
//! violation beyond 1e-8 is counted, not hidden.

use crate::emission::{self, PhiBounds, StateEmission};
use crate::error::{Error, Result};
use crate::hmm::{self, ChainParams, Posteriors};
use crate::numeric::{clip_unit, derive_seed, CLIP_EPS};
use crate::optim::{maximize_bounded, Bounds};
use crate::spline::{KnotVector, SplineDesign};
use ndarray::{Array1, Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Complete parameter set of a fitted model.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub chain: ChainParams,
    /// Emission parameters, canonically ordered by increasing φ after a fit.
    pub states: Vec<StateEmission>,
    /// Knot vectors of the design the model was fitted on.
    pub knots: Vec<KnotVector>,
    pub penalty_order: usize,
    pub lambda: f64,
}

impl ModelParams {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Total roughness penalty λ Σ_k β_kᵀ P β_k under the given design.
    pub fn penalty_value(&self, design: &SplineDesign) -> f64 {
        self.lambda
            * self
                .states
                .iter()
                .map(|s| design.penalty_form(&s.beta))
                .sum::<f64>()
    }
}

/// Convergence controls for one EM run.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// EM iteration cap.
    pub max_iter: usize,
    /// Relative tolerance on the penalized log-likelihood change.
    pub tol: f64,
    /// Box for every state's precision.
    pub phi_bounds: PhiBounds,
    /// Inner quasi-Newton iteration cap per state M-step.
    pub max_inner: usize,
    /// Inner gradient ∞-norm tolerance.
    pub inner_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 300,
            tol: 1e-6,
            phi_bounds: PhiBounds::with_max(500.0),
            max_inner: 200,
            inner_tol: 1e-6,
        }
    }
}

/// One completed EM run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Unpenalized marginal log-likelihood at the final parameters.
    pub log_likelihood: f64,
    pub penalized_log_likelihood: f64,
    /// Posteriors at the final parameters (relabeled consistently).
    pub posteriors: Posteriors,
    /// Number of completed EM iterations (M-steps).
    pub n_iter: usize,
    pub converged: bool,
    /// Penalized log-likelihood after each E-step, starting at the
    /// initialization.
    pub ll_trace: Vec<f64>,
    /// Count of trace steps that decreased by more than 1e-8.
    pub trace_violations: usize,
    /// Count of state M-steps that failed to improve without converging.
    pub m_step_warnings: usize,
    /// RNG seed this fit was started from (0 when initialized externally).
    pub seed: u64,
}

/// Outcome of a multi-start run.
#[derive(Debug, Clone)]
pub struct MultiStartResult {
    /// The start with the highest penalized log-likelihood.
    pub best: FitResult,
    /// Final penalized log-likelihood per start; None for failed starts.
    pub start_lls: Vec<Option<f64>>,
    /// Gap between the best and the median successful start.
    pub best_median_gap: f64,
}

/// Maximize one state's weighted penalized emission objective over
/// (β, log φ) with a warm start at `init`.
///
/// Returns the improved state and a warning flag set when the optimizer
/// neither improved the objective nor certified stationarity. With zero
/// weights the init is returned untouched.
pub fn m_step_state(
    y: &Array1<f64>,
    gamma_k: &Array1<f64>,
    design: &SplineDesign,
    init: &StateEmission,
    lambda: f64,
    opts: &FitOptions,
) -> Result<(StateEmission, bool)> {
    if gamma_k.sum() <= 0.0 {
        return Ok((init.clone(), false));
    }
    let p_m = design.n_cols();
    let bounds_box = {
        let mut lower = Array1::from_elem(p_m + 1, f64::NEG_INFINITY);
        let mut upper = Array1::from_elem(p_m + 1, f64::INFINITY);
        lower[p_m] = init.bounds.min.ln();
        upper[p_m] = init.bounds.max.ln();
        Bounds { lower, upper }
    };
    let mut x0 = Array1::<f64>::zeros(p_m + 1);
    x0.slice_mut(ndarray::s![..p_m]).assign(&init.beta);
    x0[p_m] = init.bounds.clamp(init.phi).ln();

    let phi_bounds = init.bounds;
    let unpack = |x: &Array1<f64>| StateEmission {
        beta: x.slice(ndarray::s![..p_m]).to_owned(),
        phi: x[p_m].exp(),
        bounds: phi_bounds,
    };
    let ws = emission::ObjectiveWorkspace::new(y);
    let objective = |x: &Array1<f64>, want_grad: bool| {
        let state = unpack(x);
        let (value, grads) = emission::value_and_grad(gamma_k, design, &ws, &state, lambda, want_grad)
            .expect("dimensions fixed by caller");
        let grad = grads.map(|(gb, gp)| {
            let mut grad = Array1::<f64>::zeros(p_m + 1);
            grad.slice_mut(ndarray::s![..p_m]).assign(&gb);
            grad[p_m] = gp;
            grad
        });
        (value, grad)
    };

    let start_value = emission::penalized_objective(y, gamma_k, design, init, lambda)?;
    let res = maximize_bounded(objective, &x0, &bounds_box, opts.max_inner, opts.inner_tol);
    if res.value < start_value || !res.value.is_finite() {
        return Ok((init.clone(), true));
    }
    if !res.improved {
        // Stationary warm start is fine; anything else deserves a flag.
        return Ok((init.clone(), !res.converged));
    }
    Ok((unpack(&res.x), false))
}

/// Sort order for canonical labels: increasing φ, ties broken by the average
/// fitted mean over the design rows, then by the original index.
fn canonical_permutation(states: &[StateEmission], design: &SplineDesign) -> Vec<usize> {
    let mut keyed: Vec<(usize, f64, f64)> = states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mean_avg = design.basis.dot(&s.beta).mapv(crate::numeric::logistic).mean().unwrap_or(0.5);
            (k, s.phi, mean_avg)
        })
        .collect();
    keyed.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap()
            .then(a.2.partial_cmp(&b.2).unwrap())
            .then(a.0.cmp(&b.0))
    });
    keyed.into_iter().map(|(k, _, _)| k).collect()
}

/// Reorder a model's states by `perm` (new index i takes old state
/// `perm[i]`), permuting π and both axes of A consistently.
pub fn permute_model(params: &ModelParams, perm: &[usize]) -> ModelParams {
    let k = params.n_states();
    assert_eq!(perm.len(), k);
    let states: Vec<StateEmission> = perm.iter().map(|&j| params.states[j].clone()).collect();
    let pi = Array1::from_iter(perm.iter().map(|&j| params.chain.pi[j]));
    let mut a = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = params.chain.a[(perm[i], perm[j])];
        }
    }
    ModelParams {
        chain: ChainParams { pi, a },
        states,
        knots: params.knots.clone(),
        penalty_order: params.penalty_order,
        lambda: params.lambda,
    }
}

fn permute_posteriors(post: &Posteriors, perm: &[usize]) -> Posteriors {
    let (t_len, k) = post.gamma.dim();
    let mut gamma = Array2::<f64>::zeros((t_len, k));
    for t in 0..t_len {
        for i in 0..k {
            gamma[(t, i)] = post.gamma[(t, perm[i])];
        }
    }
    let n_xi = post.xi.dim().0;
    let mut xi = Array3::<f64>::zeros((n_xi, k, k));
    for t in 0..n_xi {
        for i in 0..k {
            for j in 0..k {
                xi[(t, i, j)] = post.xi[(t, perm[i], perm[j])];
            }
        }
    }
    Posteriors {
        gamma,
        xi,
        log_likelihood: post.log_likelihood,
    }
}

/// Run penalized EM from `init` until the relative change of the penalized
/// log-likelihood drops below `opts.tol` or `opts.max_iter` iterations pass.
/// The returned states are relabeled by increasing φ with everything
/// permuted consistently.
pub fn em_fit(
    y: &Array1<f64>,
    design: &SplineDesign,
    init: ModelParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    let k = init.n_states();
    if k == 0 {
        return Err(Error::EmptyInput("model with zero states"));
    }
    if y.len() < k {
        return Err(Error::InvalidParameter(format!(
            "{} observations cannot support {k} states",
            y.len()
        )));
    }
    init.chain.validate()?;
    let y = y.mapv(|v| clip_unit(v, CLIP_EPS));

    let mut params = init;
    for s in &mut params.states {
        s.phi = s.bounds.clamp(s.phi);
    }

    let mut log_emissions = emission::log_density_matrix(&y, design, &params.states)?;
    let mut post = hmm::forward_backward(&log_emissions, &params.chain)?;
    let mut pll = post.log_likelihood - params.penalty_value(design);
    if !pll.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }

    let mut ll_trace = vec![pll];
    let mut trace_violations = 0;
    let mut m_step_warnings = 0;
    let mut converged = false;
    let mut n_iter = 0;

    for _ in 0..opts.max_iter {
        let (chain, _empty_rows) = hmm::update_chain(&post);
        params.chain = chain;
        for state_idx in 0..k {
            let gamma_k = post.gamma.column(state_idx).to_owned();
            let (new_state, warned) = m_step_state(
                &y,
                &gamma_k,
                design,
                &params.states[state_idx],
                params.lambda,
                opts,
            )?;
            if warned {
                m_step_warnings += 1;
            }
            params.states[state_idx] = new_state;
        }
        n_iter += 1;

        log_emissions = emission::log_density_matrix(&y, design, &params.states)?;
        post = hmm::forward_backward(&log_emissions, &params.chain)?;
        let new_pll = post.log_likelihood - params.penalty_value(design);
        if !new_pll.is_finite() {
            return Err(Error::NonFiniteLikelihood);
        }
        ll_trace.push(new_pll);
        if new_pll < pll - 1e-8 {
            trace_violations += 1;
        }
        let delta = (new_pll - pll).abs();
        pll = new_pll;
        if delta < opts.tol * (1.0 + pll.abs()) {
            converged = true;
            break;
        }
    }

    let perm = canonical_permutation(&params.states, design);
    let params = permute_model(&params, &perm);
    let post = permute_posteriors(&post, &perm);

    Ok(FitResult {
        log_likelihood: post.log_likelihood,
        penalized_log_likelihood: pll,
        posteriors: post,
        params,
        n_iter,
        converged,
        ll_trace,
        trace_violations,
        m_step_warnings,
        seed: 0,
    })
}

/// How a random start anchors its per-state moments before jitter.
///
/// `Levels` slices the sorted observations into quantile bands, so states
/// start at distinct response levels. `Segments` assigns observations by a
/// simulated persistent random path, so states start from time-contiguous
/// mixtures instead. Level starts converge fast when states separate by
/// level; segment starts reach basins that level banding cannot, which
/// matters when state mean curves cross.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitFlavor {
    Levels,
    Segments,
}

/// Random initialization: per-state flat mean levels and method-of-moments
/// precisions anchored per `flavor`, both jittered; the chain starts uniform
/// with strong diagonal persistence.
pub fn initialize_params(
    y: &Array1<f64>,
    design: &SplineDesign,
    k: usize,
    lambda: f64,
    phi_bounds: PhiBounds,
    rng: &mut ChaCha8Rng,
    flavor: InitFlavor,
) -> ModelParams {
    assert!(k >= 1, "need at least one state");
    let t_len = y.len();
    let clipped: Vec<f64> = y.iter().map(|v| clip_unit(*v, CLIP_EPS)).collect();

    let groups: Vec<Vec<f64>> = match flavor {
        InitFlavor::Levels => {
            let mut sorted = clipped;
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (0..k)
                .map(|slice_idx| {
                    let lo = slice_idx * t_len / k;
                    let hi = ((slice_idx + 1) * t_len / k).max(lo + 1);
                    sorted[lo..hi.min(t_len)].to_vec()
                })
                .collect()
        }
        InitFlavor::Segments => {
            let mut groups = vec![Vec::new(); k];
            let mut state = rng.random_range(0..k);
            for &v in &clipped {
                if rng.random::<f64>() >= 0.9 {
                    state = rng.random_range(0..k);
                }
                groups[state].push(v);
            }
            // A state left empty by the path falls back to the full sample.
            for g in groups.iter_mut() {
                if g.is_empty() {
                    g.extend_from_slice(&clipped);
                }
            }
            groups
        }
    };

    let p_m = design.n_cols();
    let mut states = Vec::with_capacity(k);
    for slice in &groups {
        let n = slice.len() as f64;
        let mean = slice.iter().sum::<f64>() / n;
        let var = if slice.len() > 1 {
            slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mean = clip_unit(mean, 1e-4);
        let eta = (mean / (1.0 - mean)).ln();
        // Beta method of moments: Var = μ(1−μ)/(1+φ).
        let phi_mom = if var > 1e-12 {
            (mean * (1.0 - mean) / var - 1.0).max(phi_bounds.min)
        } else {
            phi_bounds.max
        };
        let mut beta = Array1::<f64>::from_elem(p_m, eta);
        for b in beta.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *b += 0.25 * z;
        }
        let z: f64 = rng.sample(StandardNormal);
        let phi = phi_bounds.clamp((phi_mom.ln() + 0.4 * z).exp());
        states.push(StateEmission::new(beta, phi, phi_bounds));
    }

    let chain = {
        let mut a = Array2::<f64>::from_elem((k, k), 0.1 / k as f64);
        for i in 0..k {
            a[(i, i)] += 0.9;
        }
        ChainParams {
            pi: Array1::from_elem(k, 1.0 / k as f64),
            a,
        }
    };

    ModelParams {
        chain,
        states,
        knots: design.knots.clone(),
        penalty_order: design.penalty_order,
        lambda,
    }
}

/// Fit from `n_starts` independent random initializations (seeds derived
/// from `seed`) and keep the best penalized log-likelihood. Starts alternate
/// between level and segment anchoring so the pool covers both basin
/// families. Ties and the reduction order are deterministic: candidates are
/// compared in start order.
pub fn multi_start_fit(
    y: &Array1<f64>,
    design: &SplineDesign,
    k: usize,
    lambda: f64,
    n_starts: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<MultiStartResult> {
    assert!(n_starts >= 1, "need at least one start");
    let mut results: Vec<Option<FitResult>> = Vec::with_capacity(n_starts);
    for start in 0..n_starts {
        let start_seed = derive_seed(seed, start as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(start_seed);
        let flavor = if start % 2 == 0 {
            InitFlavor::Levels
        } else {
            InitFlavor::Segments
        };
        let init = initialize_params(y, design, k, lambda, opts.phi_bounds, &mut rng, flavor);
        match em_fit(y, design, init, opts) {
            Ok(mut fit) => {
                fit.seed = start_seed;
                results.push(Some(fit));
            }
            Err(_) => results.push(None),
        }
    }

    let start_lls: Vec<Option<f64>> = results
        .iter()
        .map(|r| r.as_ref().map(|f| f.penalized_log_likelihood))
        .collect();
    let mut successes: Vec<f64> = start_lls.iter().flatten().copied().collect();
    if successes.is_empty() {
        return Err(Error::AllStartsFailed(n_starts));
    }
    successes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if successes.len() % 2 == 1 {
        successes[successes.len() / 2]
    } else {
        0.5 * (successes[successes.len() / 2 - 1] + successes[successes.len() / 2])
    };

    let mut best_idx = None;
    let mut best_ll = f64::NEG_INFINITY;
    for (idx, r) in results.iter().enumerate() {
        if let Some(f) = r {
            if f.penalized_log_likelihood > best_ll {
                best_ll = f.penalized_log_likelihood;
                best_idx = Some(idx);
            }
        }
    }
    let best = results[best_idx.expect("at least one success")].take().expect("checked");

    Ok(MultiStartResult {
        best_median_gap: best.penalized_log_likelihood - median,
        best,
        start_lls,
    })
}

/// Copy of `reference` with β and log φ perturbed by small Gaussian noise;
/// the chain is kept. Used to diversify warm restarts around a known fit.
pub fn jitter_params(reference: &ModelParams, rng: &mut impl Rng) -> ModelParams {
    let states: Vec<StateEmission> = reference
        .states
        .iter()
        .map(|s| {
            let beta = s.beta.mapv(|b| b + 0.05 * rng.sample::<f64, _>(StandardNormal));
            let phi = (s.phi.ln() + 0.1 * rng.sample::<f64, _>(StandardNormal)).exp();
            StateEmission::new(beta, phi, s.bounds)
        })
        .collect();
    ModelParams {
        chain: reference.chain.clone(),
        states,
        knots: reference.knots.clone(),
        penalty_order: reference.penalty_order,
        lambda: reference.lambda,
    }
}

/// Fit from `n_starts` warm initializations around `reference`: the first
/// start is the reference itself, the rest are jittered copies. Selection
/// and tie-breaking follow `multi_start_fit`.
pub fn multi_start_warm(
    y: &Array1<f64>,
    design: &SplineDesign,
    reference: &ModelParams,
    n_starts: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<MultiStartResult> {
    assert!(n_starts >= 1, "need at least one start");
    let mut results: Vec<Option<FitResult>> = Vec::with_capacity(n_starts);
    for start in 0..n_starts {
        let start_seed = derive_seed(seed, start as u64);
        let init = if start == 0 {
            reference.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(start_seed);
            jitter_params(reference, &mut rng)
        };
        match em_fit(y, design, init, opts) {
            Ok(mut fit) => {
                fit.seed = start_seed;
                results.push(Some(fit));
            }
            Err(_) => results.push(None),
        }
    }

    let start_lls: Vec<Option<f64>> = results
        .iter()
        .map(|r| r.as_ref().map(|f| f.penalized_log_likelihood))
        .collect();
    let mut successes: Vec<f64> = start_lls.iter().flatten().copied().collect();
    if successes.is_empty() {
        return Err(Error::AllStartsFailed(n_starts));
    }
    successes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if successes.len() % 2 == 1 {
        successes[successes.len() / 2]
    } else {
        0.5 * (successes[successes.len() / 2 - 1] + successes[successes.len() / 2])
    };
    let mut best_idx = None;
    let mut best_ll = f64::NEG_INFINITY;
    for (idx, r) in results.iter().enumerate() {
        if let Some(f) = r {
            if f.penalized_log_likelihood > best_ll {
                best_ll = f.penalized_log_likelihood;
                best_idx = Some(idx);
            }
        }
    }
    let best = results[best_idx.expect("at least one success")].take().expect("checked");
    Ok(MultiStartResult {
        best_median_gap: best.penalized_log_likelihood - median,
        best,
        start_lls,
    })
}
