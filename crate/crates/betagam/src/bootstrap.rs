//! Parametric bootstrap: resimulate from a fitted model, refit with warm
//! starts at the fixed (K, λ), align each replicate to the reference by
//! integrated curve distance, and form percentile intervals.

use crate::error::{Error, Result};
use crate::fit::{multi_start_warm, permute_model, FitOptions, ModelParams};
use crate::numeric::{clip_unit, derive_seed, logistic, quantile, CLIP_EPS};
use crate::select::{diagnose, DiagnosticConfig};
use crate::spline::{evaluate_basis, SplineDesign};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Warm restarts per bootstrap replicate.
pub const BOOTSTRAP_STARTS: usize = 5;
/// Points per covariate block on the alignment / band grid.
pub const CURVE_GRID: usize = 200;

/// Draw one dataset from a fitted model at the original covariates: a latent
/// path from the fitted chain, then Beta draws around the fitted mean curves.
pub fn simulate_from_model(
    params: &ModelParams,
    design: &SplineDesign,
    rng: &mut impl Rng,
) -> (Array1<f64>, Vec<usize>) {
    let t_len = design.n_rows();
    let k = params.n_states();
    let mut mu = Array2::<f64>::zeros((t_len, k));
    for (s, state) in params.states.iter().enumerate() {
        let eta = design.basis.dot(&state.beta);
        for t in 0..t_len {
            mu[(t, s)] = logistic(eta[t]);
        }
    }

    let mut z = Vec::with_capacity(t_len);
    let mut y = Array1::<f64>::zeros(t_len);
    for t in 0..t_len {
        let state = if t == 0 {
            sample_categorical(params.chain.pi.as_slice().unwrap(), rng)
        } else {
            let row = params.chain.a.row(z[t - 1]);
            sample_categorical(row.as_slice().unwrap(), rng)
        };
        z.push(state);
        let m = mu[(t, state)];
        let phi = params.states[state].phi;
        let dist = rand_distr::Beta::new(m * phi, (1.0 - m) * phi)
            .expect("fitted means are interior and phi positive");
        y[t] = clip_unit(rng.sample(dist), CLIP_EPS);
    }
    (y, z)
}

fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// State mean curves μ_k on a fixed grid per covariate block, stacked over
/// blocks into one (blocks·grid) × K matrix. With a single covariate this is
/// exactly the fitted mean curve on its 200-point grid.
pub fn state_mean_curves(params: &ModelParams, n_grid: usize) -> Array2<f64> {
    let k = params.n_states();
    let n_blocks = params.knots.len();
    let mut out = Array2::<f64>::zeros((n_blocks * n_grid, k));
    let mut offset = 0usize;
    for (b_idx, knots) in params.knots.iter().enumerate() {
        let grid: Vec<f64> = (0..n_grid)
            .map(|g| knots.lo + (knots.hi - knots.lo) * g as f64 / (n_grid - 1) as f64)
            .collect();
        let basis = evaluate_basis(knots, &grid);
        for (s, state) in params.states.iter().enumerate() {
            let beta_block = state.beta.slice(ndarray::s![offset..offset + knots.n_basis()]);
            let eta = basis.dot(&beta_block);
            for g in 0..n_grid {
                out[(b_idx * n_grid + g, s)] = logistic(eta[g]);
            }
        }
        offset += knots.n_basis();
    }
    out
}

/// Permutation σ minimizing Σ_k mean over the grid of
/// (candidate_{σ(k)} − reference_k)²; σ[i] is the candidate column assigned
/// to reference slot i. Ties keep the lexicographically smallest σ.
pub fn curve_permutation(candidate: &Array2<f64>, reference: &Array2<f64>) -> Vec<usize> {
    let k = reference.ncols();
    assert_eq!(candidate.ncols(), k);
    assert_eq!(candidate.nrows(), reference.nrows());
    let g = reference.nrows() as f64;
    // Pairwise costs once; K ≤ 6 keeps the K! sweep trivial.
    let mut cost = Array2::<f64>::zeros((k, k));
    for c in 0..k {
        for r in 0..k {
            let mut acc = 0.0;
            for row in 0..reference.nrows() {
                let d = candidate[(row, c)] - reference[(row, r)];
                acc += d * d;
            }
            cost[(c, r)] = acc / g;
        }
    }
    let mut best_perm: Vec<usize> = (0..k).collect();
    let mut best_cost = f64::INFINITY;
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; k];
    fn walk(
        slot: usize,
        k: usize,
        cost: &Array2<f64>,
        current: &mut Vec<usize>,
        used: &mut [bool],
        best_cost: &mut f64,
        best_perm: &mut Vec<usize>,
    ) {
        if slot == k {
            let total: f64 = current.iter().enumerate().map(|(r, &c)| cost[(c, r)]).sum();
            if total < *best_cost {
                *best_cost = total;
                best_perm.clone_from(current);
            }
            return;
        }
        for c in 0..k {
            if !used[c] {
                used[c] = true;
                current.push(c);
                walk(slot + 1, k, cost, current, used, best_cost, best_perm);
                current.pop();
                used[c] = false;
            }
        }
    }
    walk(0, k, &cost, &mut current, &mut used, &mut best_cost, &mut best_perm);
    best_perm
}

/// Undo label switching: permute the candidate's states so its mean curves
/// match the reference's as closely as possible in integrated squared
/// distance on a 200-point grid over the covariate range.
pub fn align_to_reference(
    candidate: &ModelParams,
    reference: &ModelParams,
    design: &SplineDesign,
) -> ModelParams {
    debug_assert_eq!(candidate.n_states(), reference.n_states());
    debug_assert_eq!(candidate.knots.len(), design.knots.len());
    let cand_curves = state_mean_curves(candidate, CURVE_GRID);
    let ref_curves = state_mean_curves(reference, CURVE_GRID);
    let perm = curve_permutation(&cand_curves, &ref_curves);
    permute_model(candidate, &perm)
}

/// Aligned refits of resimulated datasets.
#[derive(Debug, Clone)]
pub struct BootstrapEnsemble {
    /// Aligned parameters per replicate, in replicate order.
    pub replicates: Vec<ModelParams>,
    pub converged_flags: Vec<bool>,
    pub degenerate_flags: Vec<bool>,
    pub b: usize,
    pub base_seed: u64,
}

impl BootstrapEnsemble {
    /// Replicate indices entering the quantiles: converged and not flagged.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.replicates.len())
            .filter(|&i| self.converged_flags[i] && !self.degenerate_flags[i])
            .collect()
    }
}

/// One percentile interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    /// "phi_k", "a_ij", or "pi_k" with 1-based indices.
    pub parameter: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Confidence level 1 − α.
    pub level: f64,
    /// Set when the point estimate escapes its own interval; reported as a
    /// bootstrap-bias warning rather than an error.
    pub bias_warning: bool,
}

/// One pointwise band value on the curve grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBandRow {
    /// 1-based state index.
    pub state: usize,
    pub x: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile intervals for every scalar parameter plus mean-curve bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTable {
    pub rows: Vec<IntervalRow>,
    pub curves: Vec<CurveBandRow>,
    pub level: f64,
}

fn percentile_pair(values: &mut Vec<f64>, alpha: f64) -> (f64, f64) {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        quantile(values, alpha / 2.0),
        quantile(values, 1.0 - alpha / 2.0),
    )
}

/// Percentile intervals over the valid replicates of an ensemble, with point
/// estimates from the reference fit.
pub fn intervals_from_ensemble(
    reference: &ModelParams,
    ensemble: &BootstrapEnsemble,
    alpha: f64,
) -> Result<IntervalTable> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let valid = ensemble.valid_indices();
    let needed = needed_valid(ensemble.b);
    if valid.len() < needed {
        return Err(Error::TooFewValidReplicates {
            valid: valid.len(),
            total: ensemble.b,
            needed,
        });
    }
    let k = reference.n_states();
    let level = 1.0 - alpha;
    let mut rows = Vec::new();
    let mut push = |parameter: String, estimate: f64, values: &mut Vec<f64>| {
        let (lower, upper) = percentile_pair(values, alpha);
        rows.push(IntervalRow {
            parameter,
            estimate,
            lower,
            upper,
            level,
            bias_warning: !(lower <= estimate && estimate <= upper),
        });
    };

    for s in 0..k {
        let mut vals: Vec<f64> = valid.iter().map(|&i| ensemble.replicates[i].states[s].phi).collect();
        push(format!("phi_{}", s + 1), reference.states[s].phi, &mut vals);
    }
    for i in 0..k {
        for j in 0..k {
            let mut vals: Vec<f64> = valid
                .iter()
                .map(|&r| ensemble.replicates[r].chain.a[(i, j)])
                .collect();
            push(
                format!("a_{}{}", i + 1, j + 1),
                reference.chain.a[(i, j)],
                &mut vals,
            );
        }
    }
    for s in 0..k {
        let mut vals: Vec<f64> = valid
            .iter()
            .map(|&r| ensemble.replicates[r].chain.pi[s])
            .collect();
        push(format!("pi_{}", s + 1), reference.chain.pi[s], &mut vals);
    }

    // Pointwise curve bands on the same grid the alignment uses.
    let ref_curves = state_mean_curves(reference, CURVE_GRID);
    let rep_curves: Vec<Array2<f64>> = valid
        .iter()
        .map(|&r| state_mean_curves(&ensemble.replicates[r], CURVE_GRID))
        .collect();
    let mut curves = Vec::new();
    for (b_idx, knots) in reference.knots.iter().enumerate() {
        for g in 0..CURVE_GRID {
            let x = knots.lo + (knots.hi - knots.lo) * g as f64 / (CURVE_GRID - 1) as f64;
            let row = b_idx * CURVE_GRID + g;
            for s in 0..k {
                let mut vals: Vec<f64> = rep_curves.iter().map(|c| c[(row, s)]).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                curves.push(CurveBandRow {
                    state: s + 1,
                    x,
                    mean: ref_curves[(row, s)],
                    lower: quantile(&vals, alpha / 2.0),
                    upper: quantile(&vals, 1.0 - alpha / 2.0),
                });
            }
        }
    }

    Ok(IntervalTable {
        rows,
        curves,
        level,
    })
}

/// Minimum number of valid replicates for interval formation. The B/4 rule
/// is capped at B so tiny diagnostic runs (B = 2) remain expressible.
pub fn needed_valid(b: usize) -> usize {
    10usize.max(b / 4).min(b)
}

/// Full parametric bootstrap around a fitted model: B resimulated datasets,
/// warm multi-start refits at the same (K, λ), curve alignment, diagnostics,
/// and percentile intervals at level 1 − α.
pub fn bootstrap(
    params: &ModelParams,
    design: &SplineDesign,
    b: usize,
    alpha: f64,
    seed: u64,
    config: &DiagnosticConfig,
    opts: &FitOptions,
) -> Result<(BootstrapEnsemble, IntervalTable)> {
    if b < 2 {
        return Err(Error::InvalidParameter(format!("B = {b} is below 2")));
    }
    let seeds: Vec<u64> = (0..b).map(|r| derive_seed(seed, r as u64)).collect();
    let ensemble = bootstrap_ensemble(params, design, &seeds, seed, config, opts, BOOTSTRAP_STARTS)?;
    let table = intervals_from_ensemble(params, &ensemble, alpha)?;
    Ok((ensemble, table))
}

/// Ensemble construction with explicit per-replicate seeds. Replicates are
/// independent given their seed, so any execution order yields the same
/// ensemble; results are assembled in replicate order.
pub fn bootstrap_ensemble(
    params: &ModelParams,
    design: &SplineDesign,
    seeds: &[u64],
    base_seed: u64,
    config: &DiagnosticConfig,
    opts: &FitOptions,
    n_starts: usize,
) -> Result<BootstrapEnsemble> {
    let reference = params;
    let b = seeds.len();
    // Replicates depend only on their own seed, so the parallel map with an
    // ordered collect reproduces the sequential ensemble under any worker
    // count.
    let outcomes: Vec<(ModelParams, bool, bool)> = seeds
        .par_iter()
        .map(|&rep_seed| {
            let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, 0));
            let (y_star, _z_star) = simulate_from_model(reference, design, &mut data_rng);
            let refit = multi_start_warm(
                &y_star,
                design,
                reference,
                n_starts,
                derive_seed(rep_seed, 1),
                opts,
            );
            match refit {
                Ok(ms) => {
                    let best = ms.best;
                    let phi: Vec<f64> = best.params.states.iter().map(|s| s.phi).collect();
                    let report = diagnose(&phi, &best.posteriors, config);
                    let aligned = align_to_reference(&best.params, reference, design);
                    (aligned, best.converged, report.flagged)
                }
                // A fully failed refit keeps its slot so indices stay stable.
                Err(_) => (reference.clone(), false, true),
            }
        })
        .collect();
    let mut replicates = Vec::with_capacity(b);
    let mut converged_flags = Vec::with_capacity(b);
    let mut degenerate_flags = Vec::with_capacity(b);
    for (params, converged, degenerate) in outcomes {
        replicates.push(params);
        converged_flags.push(converged);
        degenerate_flags.push(degenerate);
    }
    Ok(BootstrapEnsemble {
        replicates,
        converged_flags,
        degenerate_flags,
        b,
        base_seed,
    })
}

/// Single-replicate refit used by tests and by callers that parallelize at a
/// higher level: resimulate with `rep_seed`, refit warm, align.
pub fn bootstrap_replicate(
    params: &ModelParams,
    design: &SplineDesign,
    rep_seed: u64,
    config: &DiagnosticConfig,
    opts: &FitOptions,
    n_starts: usize,
) -> Result<(ModelParams, bool, bool)> {
    let reference = params;
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, 0));
    let (y_star, _z) = simulate_from_model(reference, design, &mut data_rng);
    let ms = multi_start_warm(
        &y_star,
        design,
        reference,
        n_starts,
        derive_seed(rep_seed, 1),
        opts,
    )?;
    let best = ms.best;
    let phi: Vec<f64> = best.params.states.iter().map(|s| s.phi).collect();
    let report = diagnose(&phi, &best.posteriors, config);
    let aligned = align_to_reference(&best.params, reference, design);
    Ok((aligned, best.converged, report.flagged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::{PhiBounds, StateEmission};
    use crate::fit::{multi_start_fit, FitResult};
    use crate::hmm::ChainParams;
    use crate::spline::SplineDesign;
    use ndarray::array;

    fn toy_params(k: usize, t_len: usize, seed: u64) -> (ModelParams, SplineDesign) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let design = SplineDesign::from_covariates(&[x], 3, 3, 2).unwrap();
        let p = design.n_cols();
        let states = (0..k)
            .map(|s| {
                let beta = Array1::from_iter((0..p).map(|j| {
                    -1.0 + s as f64 * 0.8 + 0.1 * ((j + s) as f64).sin()
                }));
                StateEmission::new(beta, 10.0 + 15.0 * s as f64, PhiBounds::with_max(500.0))
            })
            .collect();
        let params = ModelParams {
            chain: ChainParams::persistent(k, 0.9),
            states,
            knots: design.knots.clone(),
            penalty_order: 2,
            lambda: 1.0,
        };
        (params, design)
    }

    #[test]
    fn absorbing_chain_freezes_the_path() {
        let (mut params, design) = toy_params(2, 60, 1);
        params.chain.pi = array![1.0, 0.0];
        params.chain.a = array![[1.0, 0.0], [0.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (y, z) = simulate_from_model(&params, &design, &mut rng);
        assert!(z.iter().all(|&s| s == 0));
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn latent_transition_frequencies_match_the_chain() {
        let t_len = 100_000;
        let (mut params, design) = toy_params(2, t_len, 2);
        params.chain = ChainParams::persistent(2, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (_y, z) = simulate_from_model(&params, &design, &mut rng);
        let mut counts = [[0usize; 2]; 2];
        for w in z.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        for i in 0..2 {
            let total = (counts[i][0] + counts[i][1]) as f64;
            let diag = counts[i][i] as f64 / total;
            assert!((diag - 0.9).abs() < 0.01, "state {i}: {diag}");
        }
    }

    #[test]
    fn beta_draws_match_moments_at_the_bound() {
        let t_len = 40_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let design = SplineDesign::from_covariates(&[x], 3, 3, 2).unwrap();
        let p = design.n_cols();
        let params = ModelParams {
            chain: ChainParams::persistent(1, 1.0),
            states: vec![StateEmission::new(
                Array1::zeros(p),
                500.0,
                PhiBounds::with_max(500.0),
            )],
            knots: design.knots.clone(),
            penalty_order: 2,
            lambda: 0.0,
        };
        let (y, _z) = simulate_from_model(&params, &design, &mut rng);
        let mean = y.mean().unwrap();
        let var = y.mapv(|v| (v - mean) * (v - mean)).sum() / (t_len - 1) as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
        let want = 0.25 / 501.0;
        assert!((var - want).abs() < 0.1 * want, "var {var} vs {want}");
    }

    #[test]
    fn identity_alignment_for_identical_models() {
        let (params, design) = toy_params(3, 80, 4);
        let aligned = align_to_reference(&params, &params, &design);
        for s in 0..3 {
            assert_eq!(aligned.states[s].phi, params.states[s].phi);
            assert_eq!(aligned.states[s].beta, params.states[s].beta);
        }
    }

    #[test]
    fn swap_alignment_is_undone_exactly() {
        let (params, design) = toy_params(3, 80, 6);
        let swapped = permute_model(&params, &[2, 0, 1]);
        let aligned = align_to_reference(&swapped, &params, &design);
        for s in 0..3 {
            assert_eq!(aligned.states[s].phi, params.states[s].phi);
            assert_eq!(aligned.states[s].beta, params.states[s].beta);
            assert_eq!(aligned.chain.pi[s], params.chain.pi[s]);
        }
        assert_eq!(aligned.chain.a, params.chain.a);
    }

    #[test]
    fn permutation_beats_every_other_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = 40;
        let k = 3;
        let cand = Array2::from_shape_fn((g, k), |_| rng.random::<f64>());
        let refc = Array2::from_shape_fn((g, k), |_| rng.random::<f64>());
        let perm = curve_permutation(&cand, &refc);
        let cost = |p: &[usize]| -> f64 {
            let mut acc = 0.0;
            for (r, &c) in p.iter().enumerate() {
                for row in 0..g {
                    let d = cand[(row, c)] - refc[(row, r)];
                    acc += d * d;
                }
            }
            acc
        };
        let all: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let best = cost(&perm);
        for p in &all {
            assert!(best <= cost(p) + 1e-12);
        }
    }

    #[test]
    fn alignment_is_idempotent() {
        let (reference, design) = toy_params(3, 80, 7);
        let (other, _) = toy_params(3, 80, 8);
        let once = align_to_reference(&other, &reference, &design);
        let twice = align_to_reference(&once, &reference, &design);
        for s in 0..3 {
            assert_eq!(once.states[s].phi, twice.states[s].phi);
            assert_eq!(once.states[s].beta, twice.states[s].beta);
        }
    }

    fn small_reference_fit(seed: u64, t_len: usize) -> (FitResult, SplineDesign) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = vec![0usize; t_len];
        for t in 1..t_len {
            let u: f64 = rng.random();
            z[t] = if u < 0.92 { z[t - 1] } else { 1 - z[t - 1] };
        }
        let x: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = Array1::from_iter((0..t_len).map(|t| {
            let mu = if z[t] == 0 { 0.3 } else { 0.7 };
            let phi = if z[t] == 0 { 15.0 } else { 45.0 };
            let d = rand_distr::Beta::new(mu * phi, (1.0 - mu) * phi).unwrap();
            clip_unit(rng.sample(d), CLIP_EPS)
        }));
        let design = SplineDesign::from_covariates(&[x], 3, 3, 2).unwrap();
        let opts = FitOptions::default();
        let ms = multi_start_fit(&y, &design, 2, 1.0, 2, derive_seed(seed, 99), &opts).unwrap();
        (ms.best, design)
    }

    #[test]
    fn identical_seeds_collapse_the_intervals() {
        let (fit, design) = small_reference_fit(21, 150);
        let opts = FitOptions::default();
        let config = DiagnosticConfig::simulation();
        let seeds = [derive_seed(5, 0), derive_seed(5, 0)];
        let ensemble =
            bootstrap_ensemble(&fit.params, &design, &seeds, 5, &config, &opts, 1).unwrap();
        let table = intervals_from_ensemble(&fit.params, &ensemble, 0.05).unwrap();
        assert!(ensemble.valid_indices().len() == 2);
        for row in &table.rows {
            assert_eq!(row.lower, row.upper, "{}", row.parameter);
        }
    }

    #[test]
    fn narrower_level_nests_inside_wider() {
        let (fit, design) = small_reference_fit(22, 150);
        let opts = FitOptions::default();
        let config = DiagnosticConfig::simulation();
        let seeds: Vec<u64> = (0..12).map(|r| derive_seed(31, r)).collect();
        let ensemble =
            bootstrap_ensemble(&fit.params, &design, &seeds, 31, &config, &opts, 1).unwrap();
        let t90 = intervals_from_ensemble(&fit.params, &ensemble, 0.10).unwrap();
        let t95 = intervals_from_ensemble(&fit.params, &ensemble, 0.05).unwrap();
        for (narrow, wide) in t90.rows.iter().zip(&t95.rows) {
            assert_eq!(narrow.parameter, wide.parameter);
            assert!(narrow.lower >= wide.lower - 1e-15);
            assert!(narrow.upper <= wide.upper + 1e-15);
        }
    }

    #[test]
    fn ensembles_reproduce_bitwise_under_the_same_seed() {
        let (fit, design) = small_reference_fit(23, 120);
        let opts = FitOptions::default();
        let config = DiagnosticConfig::simulation();
        let seeds: Vec<u64> = (0..3).map(|r| derive_seed(77, r)).collect();
        let e1 = bootstrap_ensemble(&fit.params, &design, &seeds, 77, &config, &opts, 2).unwrap();
        let e2 = bootstrap_ensemble(&fit.params, &design, &seeds, 77, &config, &opts, 2).unwrap();
        for (a, b) in e1.replicates.iter().zip(&e2.replicates) {
            for s in 0..2 {
                assert_eq!(a.states[s].phi.to_bits(), b.states[s].phi.to_bits());
                for (x, y) in a.states[s].beta.iter().zip(b.states[s].beta.iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            assert_eq!(a.chain.a, b.chain.a);
        }
    }

    #[test]
    fn too_few_valid_replicates_is_an_error() {
        let (fit, design) = small_reference_fit(24, 120);
        let seeds: Vec<u64> = (0..3).map(|r| derive_seed(13, r)).collect();
        let opts = FitOptions::default();
        let config = DiagnosticConfig::simulation();
        let mut ensemble =
            bootstrap_ensemble(&fit.params, &design, &seeds, 13, &config, &opts, 1).unwrap();
        // needed = min(10, 3) = 3; force two valid, knock the third out.
        ensemble.converged_flags = vec![true, false, true];
        ensemble.degenerate_flags = vec![false, false, false];
        let err = intervals_from_ensemble(&fit.params, &ensemble, 0.05).unwrap_err();
        match err {
            Error::TooFewValidReplicates { valid, total, needed } => {
                assert_eq!((valid, total, needed), (2, 3, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn coverage_of_persistent_transition_is_sane() {
        // Binomial sanity band, not a calibration claim: the 95% interval
        // for a_11 should cover the truth in at least 40 of 50 small runs.
        let mut covered = 0usize;
        let n_runs = 50;
        for run in 0..n_runs {
            let seed = derive_seed(1000, run as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t_len = 160;
            let truth_a11 = 0.9;
            let mut z = vec![0usize; t_len];
            for t in 1..t_len {
                let u: f64 = rng.random();
                z[t] = if u < truth_a11 { z[t - 1] } else { 1 - z[t - 1] };
            }
            let x: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = Array1::from_iter((0..t_len).map(|t| {
                let mu = if z[t] == 0 { 0.25 } else { 0.72 };
                let phi = if z[t] == 0 { 18.0 } else { 50.0 };
                let d = rand_distr::Beta::new(mu * phi, (1.0 - mu) * phi).unwrap();
                clip_unit(rng.sample(d), CLIP_EPS)
            }));
            let design = SplineDesign::from_covariates(&[x], 2, 3, 2).unwrap();
            let opts = FitOptions::default();
            let Ok(ms) = multi_start_fit(&y, &design, 2, 1.0, 3, derive_seed(seed, 7), &opts)
            else {
                continue;
            };
            let fit = ms.best;
            let seeds: Vec<u64> = (0..40).map(|r| derive_seed(seed, 100 + r)).collect();
            let config = DiagnosticConfig::simulation();
            let Ok(ensemble) =
                bootstrap_ensemble(&fit.params, &design, &seeds, seed, &config, &opts, 1)
            else {
                continue;
            };
            let Ok(table) = intervals_from_ensemble(&fit.params, &ensemble, 0.05) else {
                continue;
            };
            // States are relabeled by φ, so state 1 is the low-precision one
            // generated with a_11 = 0.9 regardless of sampling order.
            let row = table.rows.iter().find(|r| r.parameter == "a_11").unwrap();
            if row.lower <= truth_a11 && truth_a11 <= row.upper {
                covered += 1;
            }
        }
        assert!(covered >= 40, "covered {covered} of {n_runs}");
    }
}
