//! Projected damped-Newton ascent for the concave barrier on `{|x| <= radius}`.

use nalgebra::{DMatrix, DVector};

use crate::barrier::{BarrierError, BarrierEval, CompositeBarrier};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    pub max_iters: usize,
    /// Stop once `|∇| <= grad_tol`.
    pub grad_tol: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub bound_weight: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Target {
    /// `x ↦ 𝔟(x, t)` with the activity set at `t`.
    At(f64),
    /// `x ↦ lim_{τ→s⁻} 𝔟(x, τ)`.
    LeftLimit(f64),
}

pub(crate) fn maximize(
    cb: &CompositeBarrier,
    target: Target,
    start: &[f64],
    radius: f64,
    opts: &AscentOptions,
) -> Result<AscentOutcome, BarrierError> {
    let n = start.len();
    let mut hess = vec![0.0; n * n];
    let eval = |x: &[f64], h: &mut [f64]| -> Result<BarrierEval, BarrierError> {
        match target {
            Target::At(t) => cb.with_hessian(x, t, h),
            Target::LeftLimit(s) => cb.left_limit_with_hessian(x, s, h),
        }
    };
    let value_only = |x: &[f64]| -> Result<f64, BarrierError> {
        match target {
            Target::At(t) => cb.value(x, t),
            Target::LeftLimit(s) => cb.left_limit_value(x, s),
        }
    };

    let mut x = start.to_vec();
    project(&mut x, radius);
    let mut e = eval(&x, &mut hess)?;
    let mut iterations = 0;
    let mut converged = false;
    // affine-dominated regions have a near-zero Hessian; clip steps to a trust radius
    let mut trust = 1.0 + 0.1 * norm(&x);
    while iterations < opts.max_iters {
        let gnorm = norm(&e.grad_x);
        if gnorm <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let dir = newton_direction(&hess, &e.grad_x, n);
        let slope: f64 = dir.iter().zip(&e.grad_x).map(|(d, g)| d * g).sum();
        let mut dir = if slope > 0.0 { dir } else { e.grad_x.clone() };
        let dnorm = norm(&dir);
        let clipped = dnorm > trust;
        if clipped {
            dir.iter_mut().for_each(|d| *d *= trust / dnorm);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut trial = vec![0.0; n];
        while alpha > 1e-14 {
            for i in 0..n {
                trial[i] = x[i] + alpha * dir[i];
            }
            project(&mut trial, radius);
            let v = value_only(&trial)?;
            let gain: f64 = trial.iter().zip(&x).zip(&e.grad_x).map(|((a, b), g)| (a - b) * g).sum();
            if v >= e.value + 1e-4 * gain && v.is_finite() {
                accepted = Some(v);
                break;
            }
            // near the optimum the value is flat to rounding; accept if the gradient still shrinks
            if v >= e.value - 4.0 * f64::EPSILON * (1.0 + e.value.abs()) {
                let mut scratch = vec![0.0; n * n];
                let te = eval(&trial, &mut scratch)?;
                if norm(&te.grad_x) < gnorm {
                    accepted = Some(v);
                    break;
                }
            }
            alpha *= 0.5;
        }
        if accepted.is_none() {
            // no ascent step found: stationary up to rounding
            converged = gnorm <= 1e-8;
            break;
        }
        if alpha == 1.0 {
            if clipped {
                trust *= 2.0;
            }
        } else {
            trust = (alpha * norm(&dir)).max(1e-12);
        }
        let moved = trial.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x.copy_from_slice(&trial);
        e = eval(&x, &mut hess)?;
        if moved == 0.0 {
            converged = norm(&e.grad_x) <= 1e-8;
            break;
        }
    }
    let grad_norm = norm(&e.grad_x);
    if !converged && grad_norm <= opts.grad_tol {
        converged = true;
    }
    Ok(AscentOutcome {
        x,
        value: e.value,
        grad_norm,
        bound_weight: e.bound_weight,
        iterations,
        converged,
    })
}

/// Solves `(−H + λI) d = g`, raising `λ` until the system is positive definite.
fn newton_direction(hess: &[f64], grad: &[f64], n: usize) -> Vec<f64> {
    let neg_h = DMatrix::from_row_slice(n, n, hess).map(|v| -v);
    let g = DVector::from_column_slice(grad);
    let scale = (0..n).map(|i| neg_h[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    let mut lambda = 1e-12 * scale;
    for _ in 0..30 {
        let mut m = neg_h.clone();
        for i in 0..n {
            m[(i, i)] += lambda;
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(&g);
            if d.iter().all(|v| v.is_finite()) {
                return d.iter().copied().collect();
            }
        }
        lambda = (lambda * 10.0).max(1e-12);
    }
    grad.to_vec()
}

fn project(x: &mut [f64], radius: f64) {
    let n = norm(x);
    if n > radius && n > 0.0 {
        let s = radius / n;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{build_barrier, GammaParams};
    use crate::stl::{Interval, OperatorUnit, Predicate, StateLayout, UnitKind};

    #[test]
    fn one_dimensional_affine_meets_bound_term() {
        // max_x LSE(x, D − |x|) sits where x = D − x, i.e. x = D/2
        let layout = StateLayout::new(&[(1, 1)]).unwrap();
        let u = OperatorUnit {
            kind: UnitKind::Always,
            predicate: Predicate::affine(vec![1.0], 0.0, &layout),
            interval: Interval { lo: 0.0, hi: 5.0 },
        };
        let g = GammaParams::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let cb = build_barrier(vec![u], vec![g], 10.0, 4.0).unwrap();
        let out = maximize(&cb, Target::LeftLimit(5.0), &[0.3], 4.0, &AscentOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 2.0).abs() < 1e-9, "{:?}", out);
        assert!((out.value - (2.0 - 2f64.ln() / 10.0)).abs() < 1e-9);
    }

    #[test]
    fn ball_center_is_found() {
        let layout = StateLayout::new(&[(1, 2)]).unwrap();
        let u = OperatorUnit {
            kind: UnitKind::Always,
            predicate: Predicate::quad_ball(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![-1.0, 2.0], 1.0, &layout),
            interval: Interval { lo: 0.0, hi: 5.0 },
        };
        let g = GammaParams::new(0.0, 0.5, 0.0, 0.0).unwrap();
        let cb = build_barrier(vec![u], vec![g], 20.0, 100.0).unwrap();
        let out = maximize(&cb, Target::At(1.0), &[5.0, 5.0], 100.0, &AscentOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-8 && (out.x[1] + 2.0).abs() < 1e-8);
        assert!(out.grad_norm < 1e-6);
    }
}
