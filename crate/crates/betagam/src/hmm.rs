//! Log-space forward-backward recursions, smoothed and pairwise posteriors,
//! marginal log-likelihood, Viterbi decoding, and the chain M-step update.
//!
//! All recursions run on log scale with log-sum-exp reductions; probabilities
//! of zero enter as −∞ and propagate correctly.

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use ndarray::{Array1, Array2, Array3};

/// Initial distribution and transition matrix of the hidden chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainParams {
    /// Initial state probabilities, length K.
    pub pi: Array1<f64>,
    /// Row-stochastic K x K transition matrix.
    pub a: Array2<f64>,
}

impl ChainParams {
    /// Uniform initial distribution with a persistence-δ transition matrix:
    /// diagonal δ, off-diagonal mass split evenly.
    pub fn persistent(k: usize, delta: f64) -> Self {
        let off = if k > 1 { (1.0 - delta) / (k - 1) as f64 } else { 0.0 };
        let mut a = Array2::from_elem((k, k), off);
        for i in 0..k {
            a[(i, i)] = if k > 1 { delta } else { 1.0 };
        }
        ChainParams {
            pi: Array1::from_elem(k, 1.0 / k as f64),
            a,
        }
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    /// Check stochasticity: non-negative entries, π and every row of A
    /// summing to 1 within 1e−12.
    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        if k == 0 {
            return Err(Error::EmptyInput("chain with zero states"));
        }
        if self.a.shape() != [k, k] {
            return Err(Error::DimensionMismatch(format!(
                "pi has {k} states but A is {}x{}",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        if self.pi.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidParameter("negative or non-finite entry in pi".into()));
        }
        if (self.pi.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "pi sums to {}, expected 1",
                self.pi.sum()
            )));
        }
        for i in 0..k {
            let row = self.a.row(i);
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                return Err(Error::InvalidParameter(format!("negative or non-finite entry in A row {i}")));
            }
            if (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "A row {i} sums to {}, expected 1",
                    row.sum()
                )));
            }
        }
        Ok(())
    }
}

/// Smoothed posteriors from one forward-backward sweep.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// T x K smoothed state probabilities γ_tk.
    pub gamma: Array2<f64>,
    /// (T−1) x K x K pairwise posteriors ξ_tij.
    pub xi: Array3<f64>,
    /// Marginal log-likelihood log p(y_1..T).
    pub log_likelihood: f64,
}

fn check_emissions(log_emissions: &Array2<f64>, k: usize) -> Result<()> {
    if log_emissions.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "log-emission matrix has {} columns for {k} states",
            log_emissions.ncols()
        )));
    }
    if log_emissions.nrows() == 0 {
        return Err(Error::EmptyInput("empty observation sequence"));
    }
    for (t, row) in log_emissions.rows().into_iter().enumerate() {
        if row.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::ImpossibleObservation { t });
        }
    }
    Ok(())
}

fn log_forward(log_emissions: &Array2<f64>, chain: &ChainParams, ln_a: &Array2<f64>) -> Array2<f64> {
    let (t_len, k) = log_emissions.dim();
    let mut la = Array2::<f64>::zeros((t_len, k));
    for j in 0..k {
        la[(0, j)] = chain.pi[j].ln() + log_emissions[(0, j)];
    }
    let mut buf = vec![0.0; k];
    for t in 1..t_len {
        for j in 0..k {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = la[(t - 1, i)] + ln_a[(i, j)];
            }
            la[(t, j)] = log_emissions[(t, j)] + log_sum_exp(&buf);
        }
    }
    la
}

/// Forward-backward sweep producing γ, ξ, and the marginal log-likelihood.
pub fn forward_backward(log_emissions: &Array2<f64>, chain: &ChainParams) -> Result<Posteriors> {
    chain.validate()?;
    let k = chain.n_states();
    check_emissions(log_emissions, k)?;
    let t_len = log_emissions.nrows();

    let ln_a = chain.a.mapv(f64::ln);
    let la = log_forward(log_emissions, chain, &ln_a);

    let mut lb = Array2::<f64>::zeros((t_len, k));
    let mut buf = vec![0.0; k];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..k {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = ln_a[(i, j)] + log_emissions[(t + 1, j)] + lb[(t + 1, j)];
            }
            lb[(t, i)] = log_sum_exp(&buf);
        }
    }

    let last_row: Vec<f64> = (0..k).map(|j| la[(t_len - 1, j)]).collect();
    let log_likelihood = log_sum_exp(&last_row);
    if !log_likelihood.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }

    let mut gamma = Array2::<f64>::zeros((t_len, k));
    for t in 0..t_len {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = la[(t, j)] + lb[(t, j)];
        }
        let norm = log_sum_exp(&buf);
        if !norm.is_finite() {
            return Err(Error::ImpossibleObservation { t });
        }
        for j in 0..k {
            gamma[(t, j)] = (buf[j] - norm).exp();
        }
    }

    let n_xi = t_len - 1;
    let mut xi = Array3::<f64>::zeros((n_xi, k, k));
    let mut pair = vec![0.0; k * k];
    for t in 0..n_xi {
        for i in 0..k {
            for j in 0..k {
                pair[i * k + j] =
                    la[(t, i)] + ln_a[(i, j)] + log_emissions[(t + 1, j)] + lb[(t + 1, j)];
            }
        }
        let norm = log_sum_exp(&pair);
        if !norm.is_finite() {
            return Err(Error::ImpossibleObservation { t });
        }
        for i in 0..k {
            for j in 0..k {
                xi[(t, i, j)] = (pair[i * k + j] - norm).exp();
            }
        }
    }

    Ok(Posteriors {
        gamma,
        xi,
        log_likelihood,
    })
}

/// Marginal log-likelihood via the forward pass alone.
pub fn marginal_log_likelihood(log_emissions: &Array2<f64>, chain: &ChainParams) -> Result<f64> {
    chain.validate()?;
    let k = chain.n_states();
    check_emissions(log_emissions, k)?;
    let ln_a = chain.a.mapv(f64::ln);
    let la = log_forward(log_emissions, chain, &ln_a);
    let t_last = log_emissions.nrows() - 1;
    let last: Vec<f64> = (0..k).map(|j| la[(t_last, j)]).collect();
    let ll = log_sum_exp(&last);
    if !ll.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }
    Ok(ll)
}

/// Most probable state path; ties break toward the lowest state index.
pub fn viterbi(log_emissions: &Array2<f64>, chain: &ChainParams) -> Result<Vec<usize>> {
    chain.validate()?;
    let k = chain.n_states();
    check_emissions(log_emissions, k)?;
    let t_len = log_emissions.nrows();
    let ln_a = chain.a.mapv(f64::ln);

    let mut delta = Array2::<f64>::zeros((t_len, k));
    let mut psi = Array2::<usize>::zeros((t_len, k));
    for j in 0..k {
        delta[(0, j)] = chain.pi[j].ln() + log_emissions[(0, j)];
    }
    for t in 1..t_len {
        for j in 0..k {
            let mut best_i = 0;
            let mut best = delta[(t - 1, 0)] + ln_a[(0, j)];
            for i in 1..k {
                let v = delta[(t - 1, i)] + ln_a[(i, j)];
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            delta[(t, j)] = log_emissions[(t, j)] + best;
            psi[(t, j)] = best_i;
        }
    }

    let mut last = 0;
    let mut best = delta[(t_len - 1, 0)];
    for j in 1..k {
        if delta[(t_len - 1, j)] > best {
            best = delta[(t_len - 1, j)];
            last = j;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::NonFiniteLikelihood);
    }

    let mut path = vec![0usize; t_len];
    path[t_len - 1] = last;
    for t in (0..t_len - 1).rev() {
        path[t] = psi[(t + 1, path[t + 1])];
    }
    Ok(path)
}

/// Closed-form chain M-step: π̂ = γ_1, Â_ij = Σ_t ξ_tij / Σ_t γ_ti.
///
/// Rows with zero posterior mass fall back to uniform; their indices are
/// returned so callers can surface a warning.
pub fn update_chain(posteriors: &Posteriors) -> (ChainParams, Vec<usize>) {
    let k = posteriors.gamma.ncols();
    let n_xi = posteriors.xi.dim().0;
    let pi = posteriors.gamma.row(0).to_owned();
    let mut a = Array2::<f64>::zeros((k, k));
    let mut flagged = Vec::new();
    for i in 0..k {
        let denom: f64 = (0..n_xi).map(|t| posteriors.gamma[(t, i)]).sum();
        if denom <= 0.0 {
            for j in 0..k {
                a[(i, j)] = 1.0 / k as f64;
            }
            flagged.push(i);
            continue;
        }
        for j in 0..k {
            let num: f64 = (0..n_xi).map(|t| posteriors.xi[(t, i, j)]).sum();
            a[(i, j)] = num / denom;
        }
        let row_sum: f64 = a.row(i).sum();
        for j in 0..k {
            a[(i, j)] /= row_sum;
        }
    }
    (ChainParams { pi, a }, flagged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::beta_log_density;
    use crate::numeric::log_sum_exp;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive path-sum oracle: log-likelihood, γ, and a best path by
    /// direct enumeration of all K^T state sequences.
    fn enumerate_oracle(
        le: &Array2<f64>,
        chain: &ChainParams,
    ) -> (f64, Array2<f64>, Vec<usize>, f64) {
        let (t_len, k) = le.dim();
        let n_paths = k.pow(t_len as u32);
        let mut path_logs = Vec::with_capacity(n_paths);
        let mut best_path = vec![0usize; t_len];
        let mut best_log = f64::NEG_INFINITY;
        let mut path = vec![0usize; t_len];
        for idx in 0..n_paths {
            let mut rem = idx;
            for slot in path.iter_mut() {
                *slot = rem % k;
                rem /= k;
            }
            let mut lp = chain.pi[path[0]].ln() + le[(0, path[0])];
            for t in 1..t_len {
                lp += chain.a[(path[t - 1], path[t])].ln() + le[(t, path[t])];
            }
            path_logs.push((lp, path.clone()));
            if lp > best_log {
                best_log = lp;
                best_path = path.clone();
            }
        }
        let all: Vec<f64> = path_logs.iter().map(|(lp, _)| *lp).collect();
        let ll = log_sum_exp(&all);
        let mut gamma = Array2::<f64>::zeros((t_len, k));
        for (lp, p) in &path_logs {
            let w = (lp - ll).exp();
            for (t, &state) in p.iter().enumerate() {
                gamma[(t, state)] += w;
            }
        }
        (ll, gamma, best_path, best_log)
    }

    fn random_instance(rng: &mut ChaCha8Rng, t_len: usize, k: usize) -> (Array2<f64>, ChainParams) {
        let mut le = Array2::<f64>::zeros((t_len, k));
        for v in le.iter_mut() {
            *v = rng.random_range(-6.0..1.0);
        }
        let mut pi = Array1::<f64>::zeros(k);
        for v in pi.iter_mut() {
            *v = rng.random_range(0.05..1.0);
        }
        let s = pi.sum();
        pi.mapv_inplace(|v| v / s);
        let mut a = Array2::<f64>::zeros((k, k));
        for i in 0..k {
            let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            for (j, v) in row.iter().enumerate() {
                a[(i, j)] = *v;
            }
        }
        (le, ChainParams { pi, a })
    }

    #[test]
    fn single_state_posteriors() {
        let le = array![[-0.3], [-1.2], [0.4]];
        let chain = ChainParams::persistent(1, 1.0);
        let post = forward_backward(&le, &chain).unwrap();
        assert!(post.gamma.iter().all(|g| (*g - 1.0).abs() < 1e-15));
        let want: f64 = le.iter().sum();
        assert!((post.log_likelihood - want).abs() < 1e-12);
        assert_eq!(viterbi(&le, &chain).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn single_time_point_posterior_is_weighted_prior() {
        let le = array![[-0.5, -2.0, -0.1]];
        let chain = ChainParams {
            pi: array![0.5, 0.3, 0.2],
            a: Array2::from_elem((3, 3), 1.0 / 3.0),
        };
        let post = forward_backward(&le, &chain).unwrap();
        let unnorm: Vec<f64> = (0..3).map(|kk| chain.pi[kk] * le[(0, kk)].exp()).collect();
        let total: f64 = unnorm.iter().sum();
        for kk in 0..3 {
            assert!((post.gamma[(0, kk)] - unnorm[kk] / total).abs() < 1e-12);
        }
        assert_eq!(post.xi.dim(), (0, 3, 3));
    }

    #[test]
    fn uniform_emissions_have_zero_log_likelihood() {
        let le = Array2::<f64>::zeros((7, 3));
        let chain = ChainParams::persistent(3, 0.8);
        assert!(marginal_log_likelihood(&le, &chain).unwrap().abs() < 1e-12);
    }

    #[test]
    fn matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let k = rng.random_range(1..=3);
            let t_len = rng.random_range(2..=8);
            let (le, chain) = random_instance(&mut rng, t_len, k);
            let (ll_oracle, gamma_oracle, _, best_log) = enumerate_oracle(&le, &chain);

            let post = forward_backward(&le, &chain).unwrap();
            assert!(
                (post.log_likelihood - ll_oracle).abs() < 1e-10,
                "trial {trial}: ll {} vs oracle {ll_oracle}",
                post.log_likelihood
            );
            let ml = marginal_log_likelihood(&le, &chain).unwrap();
            assert_eq!(ml, post.log_likelihood);
            for t in 0..t_len {
                for kk in 0..k {
                    assert!(
                        (post.gamma[(t, kk)] - gamma_oracle[(t, kk)]).abs() < 1e-10,
                        "trial {trial} gamma[{t},{kk}]"
                    );
                }
            }

            let path = viterbi(&le, &chain).unwrap();
            let mut lp = chain.pi[path[0]].ln() + le[(0, path[0])];
            for t in 1..t_len {
                lp += chain.a[(path[t - 1], path[t])].ln() + le[(t, path[t])];
            }
            assert!(
                (lp - best_log).abs() < 1e-10,
                "trial {trial}: viterbi path log-prob {lp} vs best {best_log}"
            );
        }
    }

    #[test]
    fn posterior_normalization_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (le, chain) = random_instance(&mut rng, 60, 3);
        let post = forward_backward(&le, &chain).unwrap();
        for t in 0..60 {
            assert!((post.gamma.row(t).sum() - 1.0).abs() < 1e-10);
        }
        for t in 0..59 {
            let slice_sum: f64 = post.xi.index_axis(ndarray::Axis(0), t).sum();
            assert!((slice_sum - 1.0).abs() < 1e-10);
            for i in 0..3 {
                let marg: f64 = (0..3).map(|j| post.xi[(t, i, j)]).sum();
                assert!((marg - post.gamma[(t, i)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dominant_diagonal_viterbi_follows_rowwise_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t_len = 30;
        let k = 3;
        let mut le = Array2::<f64>::zeros((t_len, k));
        for t in 0..t_len {
            let hot = rng.random_range(0..k);
            for kk in 0..k {
                le[(t, kk)] = if kk == hot { 0.0 } else { -50.0 };
            }
        }
        let chain = ChainParams::persistent(k, 0.4);
        let path = viterbi(&le, &chain).unwrap();
        for t in 0..t_len {
            let argmax = (0..k).max_by(|&a, &b| le[(t, a)].partial_cmp(&le[(t, b)]).unwrap()).unwrap();
            assert_eq!(path[t], argmax, "t={t}");
        }
    }

    #[test]
    fn viterbi_ties_break_low() {
        let le = Array2::<f64>::zeros((5, 3));
        let chain = ChainParams {
            pi: Array1::from_elem(3, 1.0 / 3.0),
            a: Array2::from_elem((3, 3), 1.0 / 3.0),
        };
        assert_eq!(viterbi(&le, &chain).unwrap(), vec![0; 5]);
    }

    #[test]
    fn impossible_row_is_rejected() {
        let mut le = Array2::<f64>::zeros((4, 2));
        le[(2, 0)] = f64::NEG_INFINITY;
        le[(2, 1)] = f64::NEG_INFINITY;
        let chain = ChainParams::persistent(2, 0.9);
        assert!(matches!(
            forward_backward(&le, &chain),
            Err(Error::ImpossibleObservation { t: 2 })
        ));
    }

    #[test]
    fn invalid_chain_is_rejected() {
        let le = Array2::<f64>::zeros((3, 2));
        let chain = ChainParams {
            pi: array![0.7, 0.7],
            a: Array2::from_elem((2, 2), 0.5),
        };
        assert!(matches!(
            forward_backward(&le, &chain),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn update_chain_single_state() {
        let le = array![[-0.2], [-0.4]];
        let chain = ChainParams::persistent(1, 1.0);
        let post = forward_backward(&le, &chain).unwrap();
        let (updated, flagged) = update_chain(&post);
        assert!(flagged.is_empty());
        assert_eq!(updated.pi, array![1.0]);
        assert_eq!(updated.a, array![[1.0]]);
    }

    #[test]
    fn update_chain_counts_hard_path_transitions() {
        // Hard path 0,0,1,1,1,0: transitions 0->0 once, 0->1 once, 1->1 twice, 1->0 once.
        let path = [0usize, 0, 1, 1, 1, 0];
        let t_len = path.len();
        let k = 2;
        let mut gamma = Array2::<f64>::zeros((t_len, k));
        for (t, &s) in path.iter().enumerate() {
            gamma[(t, s)] = 1.0;
        }
        let mut xi = Array3::<f64>::zeros((t_len - 1, k, k));
        for t in 0..t_len - 1 {
            xi[(t, path[t], path[t + 1])] = 1.0;
        }
        let post = Posteriors {
            gamma,
            xi,
            log_likelihood: 0.0,
        };
        let (chain, flagged) = update_chain(&post);
        assert!(flagged.is_empty());
        assert_eq!(chain.pi, array![1.0, 0.0]);
        // From state 0 (2 visits before the end): one self-loop, one exit.
        assert!((chain.a[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((chain.a[(0, 1)] - 0.5).abs() < 1e-15);
        // From state 1 (3 visits before the end): two self-loops, one exit.
        assert!((chain.a[(1, 1)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((chain.a[(1, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn update_chain_flags_empty_state() {
        let mut gamma = Array2::<f64>::zeros((3, 2));
        gamma[(0, 0)] = 1.0;
        gamma[(1, 0)] = 1.0;
        gamma[(2, 0)] = 1.0;
        let mut xi = Array3::<f64>::zeros((2, 2, 2));
        xi[(0, 0, 0)] = 1.0;
        xi[(1, 0, 0)] = 1.0;
        let post = Posteriors {
            gamma,
            xi,
            log_likelihood: 0.0,
        };
        let (chain, flagged) = update_chain(&post);
        assert_eq!(flagged, vec![1]);
        assert!((chain.a[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((chain.a[(1, 1)] - 0.5).abs() < 1e-15);
        chain.validate().unwrap();
    }

    #[test]
    fn recovers_persistence_from_simulated_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let t_len = 2500;
        let k = 4;
        let chain = ChainParams::persistent(k, 0.95);
        let mus = [0.2, 0.4, 0.6, 0.8];
        let phi = 60.0;
        let mut z = vec![0usize; t_len];
        z[0] = rng.random_range(0..k);
        for t in 1..t_len {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = k - 1;
            for j in 0..k {
                acc += chain.a[(z[t - 1], j)];
                if u < acc {
                    next = j;
                    break;
                }
            }
            z[t] = next;
        }
        let mut le = Array2::<f64>::zeros((t_len, k));
        for t in 0..t_len {
            let mu = mus[z[t]];
            let dist = rand_distr::Beta::new(mu * phi, (1.0 - mu) * phi).unwrap();
            let y: f64 = rng.sample(dist);
            for kk in 0..k {
                le[(t, kk)] = beta_log_density(y, mus[kk], phi);
            }
        }
        let post = forward_backward(&le, &chain).unwrap();
        let (updated, flagged) = update_chain(&post);
        assert!(flagged.is_empty());
        for i in 0..k {
            assert!(
                (updated.a[(i, i)] - 0.95).abs() <= 0.02,
                "diagonal {i}: {}",
                updated.a[(i, i)]
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn emission_scaling_invariance(seed in 0u64..1000, c in -300.0f64..300.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t_len = 12;
            let k = 3;
            let (le, chain) = random_instance(&mut rng, t_len, k);
            let shifted = le.mapv(|v| v + c);
            let base = forward_backward(&le, &chain).unwrap();
            let moved = forward_backward(&shifted, &chain).unwrap();
            prop_assert!((moved.log_likelihood - base.log_likelihood - t_len as f64 * c).abs() < 1e-7);
            for (g0, g1) in base.gamma.iter().zip(moved.gamma.iter()) {
                prop_assert!((g0 - g1).abs() < 1e-9);
            }
            for (x0, x1) in base.xi.iter().zip(moved.xi.iter()) {
                prop_assert!((x0 - x1).abs() < 1e-9);
            }
            prop_assert_eq!(viterbi(&le, &chain).unwrap(), viterbi(&shifted, &chain).unwrap());
        }
    }
}
