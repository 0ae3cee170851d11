//! BFGS with Armijo backtracking on an unconstrained space.
//!
//! The objective may refuse a point (returns `None`), e.g. when the implied
//! covariance leaves the positive definite cone; the line search treats such
//! points as infinitely bad and shrinks the step.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence when `max |grad| <= grad_tol`.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl BfgsOutcome {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().fold(0.0f64, |a, g| a.max(g.abs()))
    }
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

pub fn minimize<F>(mut objective: F, x0: &[f64], opts: &BfgsOptions) -> Option<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut f, g) = objective(x.as_slice())?;
    let mut g = DVector::from_vec(g);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh_h = true;
    let mut iterations = 0;

    let inf_norm = |v: &DVector<f64>| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));

    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol {
            break;
        }
        iterations += 1;

        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            fresh_h = true;
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        // keep the first step of a fresh inverse Hessian modest
        let mut alpha = if fresh_h {
            (1.0 / dir.norm()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial = &x + &dir * alpha;
            if let Some((ft, gt)) = objective(trial.as_slice()) {
                if ft.is_finite() && ft <= f + ARMIJO_C1 * alpha * slope {
                    accepted = Some((trial, ft, DVector::from_vec(gt)));
                    break;
                }
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh_h {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh_h = true;
            continue;
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh_h {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (H y s' + s y' H) + (rho^2 y'Hy + rho) s s'
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
            fresh_h = false;
        }

        let f_change = (f - f_new).abs();
        x = x_new;
        f = f_new;
        g = g_new;
        if f_change <= 1e-15 * (1.0 + f.abs()) && inf_norm(&g) > opts.grad_tol {
            // stalled: restart curvature once more before giving up
            if fresh_h {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh_h = true;
        }
    }

    let converged = inf_norm(&g) <= opts.grad_tol;
    Some(BfgsOutcome {
        x: x.as_slice().to_vec(),
        f,
        grad: g.as_slice().to_vec(),
        iterations,
        converged,
    })
}
