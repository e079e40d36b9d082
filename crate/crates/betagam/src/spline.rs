//! Cubic B-spline design matrices and discrete difference penalties for the
//! additive predictor.
//!
//! Smoothness is controlled P-spline style: a moderately rich basis plus a
//! quadratic penalty `λ βᵀ Dᵈᵀ Dᵈ β` on adjacent coefficients, rather than by
//! the number of knots.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Clamped knot vector for one covariate.
///
/// Boundary knots sit at the covariate min/max and are replicated
/// `degree + 1` times; inner knots are strictly increasing and strictly
/// inside the boundary. The basis dimension is `inner.len() + degree + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    pub degree: usize,
    pub inner: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl KnotVector {
    /// Number of basis functions M.
    pub fn n_basis(&self) -> usize {
        self.inner.len() + self.degree + 1
    }

    /// Full knot sequence with replicated boundary knots.
    pub fn full_knots(&self) -> Vec<f64> {
        let p = self.degree;
        let mut full = Vec::with_capacity(self.inner.len() + 2 * (p + 1));
        full.extend(std::iter::repeat(self.lo).take(p + 1));
        full.extend_from_slice(&self.inner);
        full.extend(std::iter::repeat(self.hi).take(p + 1));
        full
    }
}

/// Assembled design for the additive predictor: concatenated per-covariate
/// basis matrices and the block-diagonal difference penalty.
#[derive(Debug, Clone)]
pub struct SplineDesign {
    /// T x pM basis matrix.
    pub basis: Array2<f64>,
    /// Column range of each covariate block.
    pub blocks: Vec<Range<usize>>,
    /// Knot vector per covariate.
    pub knots: Vec<KnotVector>,
    /// pM x pM block-diagonal penalty.
    pub penalty: Array2<f64>,
    /// Difference order d shared by all blocks.
    pub penalty_order: usize,
}

/// Place `inner_count` inner knots at equally spaced quantiles of
/// `x_values`, with boundary knots at the data min/max.
pub fn build_knots(x_values: &[f64], inner_count: usize, degree: usize) -> Result<KnotVector> {
    let mut sorted: Vec<f64> = x_values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite covariate"));
    sorted.dedup();
    if sorted.len() < degree + 2 {
        return Err(Error::TooFewDistinctValues {
            needed: degree + 2,
            found: sorted.len(),
        });
    }
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];

    let mut all: Vec<f64> = x_values.to_vec();
    all.sort_by(|a, b| a.partial_cmp(b).expect("non-finite covariate"));
    let mut inner = Vec::with_capacity(inner_count);
    for i in 1..=inner_count {
        let q = crate::numeric::quantile(&all, i as f64 / (inner_count + 1) as f64);
        inner.push(q);
    }
    let strictly_inside = inner.iter().all(|&k| k > lo && k < hi);
    let strictly_increasing = inner.windows(2).all(|w| w[0] < w[1]);
    if !(strictly_inside && strictly_increasing) {
        return Err(Error::CoincidentKnots);
    }
    Ok(KnotVector {
        degree,
        inner,
        lo,
        hi,
    })
}

/// Knot span index for the Cox-de Boor recursion; `x` is assumed clamped to
/// `[lo, hi]`.
fn find_span(full: &[f64], degree: usize, n_basis: usize, x: f64) -> usize {
    let n = n_basis - 1;
    if x >= full[n + 1] {
        return n;
    }
    let mut lo = degree;
    let mut hi = n + 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < full[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Evaluate the `degree + 1` non-zero basis functions at `x` (clamped).
/// Returns the index of the first non-zero basis function and the values.
fn basis_at(knots: &KnotVector, full: &[f64], x: f64) -> (usize, Vec<f64>) {
    let p = knots.degree;
    let x = x.max(knots.lo).min(knots.hi);
    let span = find_span(full, p, knots.n_basis(), x);
    let mut values = vec![0.0; p + 1];
    values[0] = 1.0;
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    for j in 1..=p {
        left[j] = x - full[span + 1 - j];
        right[j] = full[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = values[r] / (right[r + 1] + left[j - r]);
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
    (span - p, values)
}

/// Evaluate the basis design matrix at the given covariate values. Values
/// outside the knot range are clamped to the boundary.
pub fn evaluate_basis(knots: &KnotVector, x: &[f64]) -> Array2<f64> {
    let full = knots.full_knots();
    let m = knots.n_basis();
    let mut out = Array2::<f64>::zeros((x.len(), m));
    for (t, &xt) in x.iter().enumerate() {
        let (first, values) = basis_at(knots, &full, xt);
        for (j, v) in values.iter().enumerate() {
            out[(t, first + j)] = *v;
        }
    }
    out
}

/// The (M-d) x M d-th order difference operator with binomial coefficients
/// `(-1)^j C(d, j)` on each row.
pub fn difference_matrix(m: usize, d: usize) -> Result<Array2<f64>> {
    if d == 0 || d >= m {
        return Err(Error::InvalidPenaltyOrder { order: d, size: m });
    }
    let mut coeff = vec![0.0_f64; d + 1];
    coeff[0] = 1.0;
    for row in 1..=d {
        for j in (1..=row).rev() {
            coeff[j] -= coeff[j - 1];
        }
    }
    let mut dm = Array2::<f64>::zeros((m - d, m));
    for i in 0..(m - d) {
        for (j, c) in coeff.iter().enumerate() {
            dm[(i, i + j)] = *c;
        }
    }
    Ok(dm)
}

/// Difference penalty `P = Dᵈᵀ Dᵈ`.
pub fn difference_penalty(m: usize, d: usize) -> Result<Array2<f64>> {
    let dm = difference_matrix(m, d)?;
    Ok(dm.t().dot(&dm))
}

/// One covariate's contribution to the design.
#[derive(Debug, Clone)]
pub struct CovariateBlock {
    pub basis: Array2<f64>,
    pub penalty: Array2<f64>,
    pub knots: KnotVector,
}

/// Concatenate per-covariate blocks column-wise and stack their penalties
/// block-diagonally.
pub fn assemble_design(per_covariate: Vec<CovariateBlock>, penalty_order: usize) -> Result<SplineDesign> {
    if per_covariate.is_empty() {
        return Err(Error::EmptyInput("assemble_design needs at least one covariate"));
    }
    let t_rows = per_covariate[0].basis.nrows();
    for (j, block) in per_covariate.iter().enumerate() {
        if block.basis.nrows() != t_rows {
            return Err(Error::DimensionMismatch(format!(
                "covariate {j} has {} rows, expected {t_rows}",
                block.basis.nrows()
            )));
        }
        if block.penalty.nrows() != block.basis.ncols() || block.penalty.ncols() != block.basis.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "covariate {j}: penalty is {}x{}, basis has {} columns",
                block.penalty.nrows(),
                block.penalty.ncols(),
                block.basis.ncols()
            )));
        }
    }
    let total_cols: usize = per_covariate.iter().map(|b| b.basis.ncols()).sum();
    let mut basis = Array2::<f64>::zeros((t_rows, total_cols));
    let mut penalty = Array2::<f64>::zeros((total_cols, total_cols));
    let mut blocks = Vec::with_capacity(per_covariate.len());
    let mut knots = Vec::with_capacity(per_covariate.len());
    let mut offset = 0;
    for block in per_covariate {
        let m = block.basis.ncols();
        basis
            .slice_mut(ndarray::s![.., offset..offset + m])
            .assign(&block.basis);
        penalty
            .slice_mut(ndarray::s![offset..offset + m, offset..offset + m])
            .assign(&block.penalty);
        blocks.push(offset..offset + m);
        knots.push(block.knots);
        offset += m;
    }
    Ok(SplineDesign {
        basis,
        blocks,
        knots,
        penalty,
        penalty_order,
    })
}

impl SplineDesign {
    /// Build the full design from raw covariate columns: quantile knots,
    /// cubic-by-default basis, and a d-th order difference penalty per block.
    pub fn from_covariates(
        x_cols: &[Vec<f64>],
        inner_count: usize,
        degree: usize,
        penalty_order: usize,
    ) -> Result<Self> {
        let mut per = Vec::with_capacity(x_cols.len());
        for col in x_cols {
            let knots = build_knots(col, inner_count, degree)?;
            let basis = evaluate_basis(&knots, col);
            let penalty = difference_penalty(knots.n_basis(), penalty_order)?;
            per.push(CovariateBlock {
                basis,
                penalty,
                knots,
            });
        }
        assemble_design(per, penalty_order)
    }

    /// Rebuild a design from stored knot vectors, e.g. when decoding new data
    /// with a saved model. Out-of-range covariate values clamp to the
    /// boundary.
    pub fn from_knots(knots: &[KnotVector], x_cols: &[Vec<f64>], penalty_order: usize) -> Result<Self> {
        if knots.len() != x_cols.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} knot vectors for {} covariate columns",
                knots.len(),
                x_cols.len()
            )));
        }
        let mut per = Vec::with_capacity(knots.len());
        for (kv, col) in knots.iter().zip(x_cols) {
            let basis = evaluate_basis(kv, col);
            let penalty = difference_penalty(kv.n_basis(), penalty_order)?;
            per.push(CovariateBlock {
                basis,
                penalty,
                knots: kv.clone(),
            });
        }
        assemble_design(per, penalty_order)
    }

    /// Number of rows (time points).
    pub fn n_rows(&self) -> usize {
        self.basis.nrows()
    }

    /// Total number of columns pM.
    pub fn n_cols(&self) -> usize {
        self.basis.ncols()
    }

    /// Penalty quadratic form βᵀ P β.
    pub fn penalty_form(&self, beta: &Array1<f64>) -> f64 {
        beta.dot(&self.penalty.dot(beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn knot_counting_rule() {
        let x: Vec<f64> = (0..101).map(|i| -2.0 + 4.0 * i as f64 / 100.0).collect();
        let kv = build_knots(&x, 6, 3).unwrap();
        assert_eq!(kv.n_basis(), 10);
        let kv0 = build_knots(&x, 0, 3).unwrap();
        assert_eq!(kv0.n_basis(), 4);
    }

    #[test]
    fn single_inner_knot_at_median() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let kv = build_knots(&x, 1, 3).unwrap();
        assert_eq!(kv.inner.len(), 1);
        assert!((kv.inner[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_distinct_points() {
        let x = vec![0.0, 1.0, 1.0, 0.0];
        assert!(matches!(
            build_knots(&x, 0, 3),
            Err(Error::TooFewDistinctValues { .. })
        ));
    }

    #[test]
    fn degree_zero_indicator_basis() {
        let kv = KnotVector {
            degree: 0,
            inner: vec![0.5],
            lo: 0.0,
            hi: 1.0,
        };
        let b = evaluate_basis(&kv, &[0.25]);
        assert_eq!(b.shape(), &[1, 2]);
        assert_eq!(b[(0, 0)], 1.0);
        assert_eq!(b[(0, 1)], 0.0);
    }

    #[test]
    fn cubic_partition_of_unity() {
        let x: Vec<f64> = (0..200).map(|i| -2.0 + 4.0 * i as f64 / 199.0).collect();
        let kv = build_knots(&x, 6, 3).unwrap();
        let b = evaluate_basis(&kv, &x);
        for t in 0..x.len() {
            let s: f64 = b.row(t).sum();
            assert!((s - 1.0).abs() <= 1e-12, "row {t} sums to {s}");
            assert!(b.row(t).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn endpoint_rows_are_unit_vectors() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let kv = build_knots(&x, 4, 3).unwrap();
        let b = evaluate_basis(&kv, &[kv.lo, kv.hi]);
        let m = kv.n_basis();
        assert!((b[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(b.row(0).iter().skip(1).all(|v| v.abs() < 1e-14));
        assert!((b[(1, m - 1)] - 1.0).abs() < 1e-14);
        assert!(b.row(1).iter().take(m - 1).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn out_of_range_clamps() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let kv = build_knots(&x, 4, 3).unwrap();
        let b = evaluate_basis(&kv, &[-10.0, 100.0]);
        let at_bounds = evaluate_basis(&kv, &[kv.lo, kv.hi]);
        assert_eq!(b, at_bounds);
    }

    #[test]
    fn second_difference_penalty_worked_example() {
        let d2 = difference_matrix(4, 2).unwrap();
        assert_eq!(d2, array![[1.0, -2.0, 1.0, 0.0], [0.0, 1.0, -2.0, 1.0]]);
        let p = difference_penalty(4, 2).unwrap();
        assert_eq!(p[(0, 0)], 1.0);
        assert_eq!(p[(1, 1)], 5.0);
        assert_eq!(p[(1, 2)], -4.0);
    }

    #[test]
    fn first_difference_matrix() {
        let d1 = difference_matrix(3, 1).unwrap();
        assert_eq!(d1, array![[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]]);
    }

    #[test]
    fn penalty_annihilates_affine_sequences() {
        let p = difference_penalty(9, 2).unwrap();
        let ones = Array1::from_elem(9, 1.0);
        let ramp = Array1::from_iter((0..9).map(|i| i as f64));
        assert!(p.dot(&ones).iter().all(|v| v.abs() < 1e-12));
        assert!(p.dot(&ramp).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn invalid_penalty_order() {
        assert!(matches!(
            difference_penalty(4, 4),
            Err(Error::InvalidPenaltyOrder { .. })
        ));
    }

    #[test]
    fn penalty_form_matches_explicit_differencing() {
        let m = 11;
        for d in 1..=3usize {
            let p = difference_penalty(m, d).unwrap();
            // Fixed pseudo-random coefficients.
            let beta: Vec<f64> = (0..m).map(|i| ((i * 37 + 11) % 17) as f64 / 7.0 - 1.0).collect();
            let mut diff = beta.clone();
            for _ in 0..d {
                diff = diff.windows(2).map(|w| w[1] - w[0]).collect();
            }
            // Sign convention flips relative to the binomial rows for odd d
            // but squares are identical.
            let explicit: f64 = diff.iter().map(|v| v * v).sum();
            let b = Array1::from_vec(beta);
            let quad = b.dot(&p.dot(&b));
            assert!((quad - explicit).abs() <= 1e-12 * explicit.max(1.0), "d={d}");
        }
    }

    // Jacobi eigenvalue sweep; test-only oracle for the penalty null space.
    fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[(p, q)].abs() < 1e-15 {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                }
            }
        }
        (0..n).map(|i| m[(i, i)]).collect()
    }

    #[test]
    fn penalty_null_space_dimension_via_eigenproblem() {
        let p = difference_penalty(8, 2).unwrap();
        let mut eig = jacobi_eigenvalues(&p);
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let zeros = eig.iter().filter(|v| v.abs() < 1e-10).count();
        assert_eq!(zeros, 2);
        assert!(eig.iter().all(|v| *v > -1e-10));
    }

    #[test]
    fn assemble_single_block_is_identity() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let kv = build_knots(&x, 3, 3).unwrap();
        let basis = evaluate_basis(&kv, &x);
        let penalty = difference_penalty(kv.n_basis(), 2).unwrap();
        let d = assemble_design(
            vec![CovariateBlock {
                basis: basis.clone(),
                penalty: penalty.clone(),
                knots: kv,
            }],
            2,
        )
        .unwrap();
        assert_eq!(d.basis, basis);
        assert_eq!(d.penalty, penalty);
        assert_eq!(d.blocks, vec![0..7]);
    }

    #[test]
    fn assemble_two_covariates() {
        let x: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let design = SplineDesign::from_covariates(&[x.clone(), x.clone()], 6, 3, 2).unwrap();
        assert_eq!(design.n_cols(), 20);
        assert_eq!(design.penalty.shape(), &[20, 20]);
        assert_eq!(design.blocks, vec![0..10, 10..20]);
        // Off-diagonal blocks of the penalty are zero.
        for i in 0..10 {
            for j in 10..20 {
                assert_eq!(design.penalty[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn assemble_empty_errors() {
        assert!(matches!(
            assemble_design(vec![], 2),
            Err(Error::EmptyInput(_))
        ));
    }

    proptest! {
        #[test]
        fn partition_of_unity_random(
            n_inner in 0usize..8,
            xs in proptest::collection::vec(0.0_f64..1.0, 30..60),
        ) {
            let grid: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
            let mut data = xs.clone();
            data.extend_from_slice(&grid); // guarantee enough distinct points
            if let Ok(kv) = build_knots(&data, n_inner, 3) {
                let b = evaluate_basis(&kv, &grid);
                for t in 0..grid.len() {
                    let s: f64 = b.row(t).sum();
                    prop_assert!((s - 1.0).abs() <= 1e-12);
                }
            }
        }
    }
}
