//! Box-constrained quasi-Newton maximizer for the M-step.
//!
//! Limited-memory BFGS with gradient projection: search directions come from
//! the two-loop recursion, steps are projected onto the box, and an Armijo
//! backtracking line search guarantees the objective never decreases. That
//! monotone-ascent guarantee is what the generalized-EM contract needs.

use ndarray::Array1;

/// Per-coordinate box; use ±∞ for unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
}

impl Bounds {
    /// Unbounded box of dimension n.
    pub fn free(n: usize) -> Self {
        Bounds {
            lower: Array1::from_elem(n, f64::NEG_INFINITY),
            upper: Array1::from_elem(n, f64::INFINITY),
        }
    }

    fn project(&self, x: &mut Array1<f64>) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.max(self.lower[i]).min(self.upper[i]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Array1<f64>,
    pub value: f64,
    /// Projected-gradient ∞-norm at the final point.
    pub grad_norm: f64,
    pub n_iter: usize,
    /// Whether the projected-gradient tolerance was met.
    pub converged: bool,
    /// Whether the final value strictly improved on the starting value.
    pub improved: bool,
}

const MEMORY: usize = 8;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Projected gradient (ascent convention): zero out components that point
/// outside the box at active bounds.
fn projected_gradient(x: &Array1<f64>, grad: &Array1<f64>, bounds: &Bounds) -> Array1<f64> {
    let mut pg = grad.clone();
    for i in 0..x.len() {
        if x[i] <= bounds.lower[i] && grad[i] < 0.0 {
            pg[i] = 0.0;
        }
        if x[i] >= bounds.upper[i] && grad[i] > 0.0 {
            pg[i] = 0.0;
        }
    }
    pg
}

fn inf_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Maximize `f` over the box, starting at `x0`, until the projected gradient
/// ∞-norm drops below `grad_tol` or `max_iter` iterations pass. The iterate
/// sequence is monotone in `f`.
///
/// `f(x, want_grad)` returns the value and, when asked, the ascent gradient.
/// Line-search probes request no gradient, which keeps backtracking cheap
/// for objectives whose gradient dominates the evaluation cost.
pub fn maximize_bounded<F>(
    mut f: F,
    x0: &Array1<f64>,
    bounds: &Bounds,
    max_iter: usize,
    grad_tol: f64,
) -> OptimResult
where
    F: FnMut(&Array1<f64>, bool) -> (f64, Option<Array1<f64>>),
{
    let full = |x: &Array1<f64>, f: &mut F| -> (f64, Array1<f64>) {
        let (v, g) = f(x, true);
        (v, g.expect("gradient requested"))
    };
    let mut x = x0.clone();
    bounds.project(&mut x);
    let (mut value, mut grad) = full(&x, &mut f);
    let start_value = value;

    let mut s_mem: Vec<Array1<f64>> = Vec::new();
    let mut y_mem: Vec<Array1<f64>> = Vec::new();
    let mut rho_mem: Vec<f64> = Vec::new();

    let mut n_iter = 0;
    let mut converged = inf_norm(&projected_gradient(&x, &grad, bounds)) < grad_tol;

    while !converged && n_iter < max_iter {
        n_iter += 1;

        // Two-loop recursion on the ascent gradient.
        let mut q = grad.clone();
        let mut alphas = vec![0.0; s_mem.len()];
        for i in (0..s_mem.len()).rev() {
            alphas[i] = rho_mem[i] * s_mem[i].dot(&q);
            q = &q - &(&y_mem[i] * alphas[i]);
        }
        if let (Some(s), Some(y)) = (s_mem.last(), y_mem.last()) {
            let scale = s.dot(y) / y.dot(y);
            q *= scale;
        }
        for i in 0..s_mem.len() {
            let beta = rho_mem[i] * y_mem[i].dot(&q);
            q = &q + &(&s_mem[i] * (alphas[i] - beta));
        }
        let mut direction = q;
        if direction.dot(&grad) <= 0.0 {
            direction = grad.clone();
        }

        // Armijo backtracking along the projected path; probes are
        // value-only, the gradient is computed once at the accepted point.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand = &x + &(&direction * step);
            bounds.project(&mut cand);
            let dx = &cand - &x;
            let dx_norm = inf_norm(&dx);
            if dx_norm == 0.0 {
                break;
            }
            let (cand_value, _) = f(&cand, false);
            if cand_value >= value + ARMIJO_C1 * grad.dot(&dx) && cand_value > f64::NEG_INFINITY {
                let (cand_value, cand_grad) = full(&cand, &mut f);
                accepted = Some((cand, cand_value, cand_grad, dx));
                break;
            }
            step *= 0.5;
        }

        let Some((new_x, new_value, new_grad, dx)) = accepted else {
            // Retry once along the raw gradient before giving up.
            if direction != grad {
                let mut step = 1.0;
                let mut found = None;
                for _ in 0..MAX_BACKTRACKS {
                    let mut cand = &x + &(&grad * step);
                    bounds.project(&mut cand);
                    let dx = &cand - &x;
                    if inf_norm(&dx) == 0.0 {
                        break;
                    }
                    let (cand_value, _) = f(&cand, false);
                    if cand_value >= value + ARMIJO_C1 * grad.dot(&dx) {
                        let (cand_value, cand_grad) = full(&cand, &mut f);
                        found = Some((cand, cand_value, cand_grad, dx));
                        break;
                    }
                    step *= 0.5;
                }
                if let Some((nx, nv, ng, dx)) = found {
                    let dg = &ng - &grad;
                    let sy = dx.dot(&dg);
                    if sy < -1e-12 * inf_norm(&dx) * inf_norm(&dg) {
                        s_mem.push(dx);
                        y_mem.push(dg.mapv(|v| -v));
                        rho_mem.push(1.0 / -sy);
                        if s_mem.len() > MEMORY {
                            s_mem.remove(0);
                            y_mem.remove(0);
                            rho_mem.remove(0);
                        }
                    }
                    x = nx;
                    value = nv;
                    grad = ng;
                    converged = inf_norm(&projected_gradient(&x, &grad, bounds)) < grad_tol;
                    continue;
                }
            }
            break;
        };

        // Curvature update in minimization convention: y = −(g_new − g_old so
        // that sᵀy > 0 on accepted ascent steps with curvature.
        let dg = &new_grad - &grad;
        let sy = dx.dot(&dg);
        if sy < -1e-12 * inf_norm(&dx) * inf_norm(&dg) {
            s_mem.push(dx);
            y_mem.push(dg.mapv(|v| -v));
            rho_mem.push(1.0 / -sy);
            if s_mem.len() > MEMORY {
                s_mem.remove(0);
                y_mem.remove(0);
                rho_mem.remove(0);
            }
        } else {
            s_mem.clear();
            y_mem.clear();
            rho_mem.clear();
        }

        x = new_x;
        value = new_value;
        grad = new_grad;
        converged = inf_norm(&projected_gradient(&x, &grad, bounds)) < grad_tol;
    }

    let grad_norm = inf_norm(&projected_gradient(&x, &grad, bounds));
    OptimResult {
        x,
        value,
        grad_norm,
        n_iter,
        converged,
        improved: value > start_value,
    }
}
