//! Iterative minimizers for smooth strongly convex subproblems.
//!
//! Every method counts one iteration per gradient pass that moves the iterate,
//! and stops early once `||grad|| <= tol`. Line-search trial evaluations are not
//! counted as iterations.

use crate::linalg::{axpy, dot, norm_sq};
use crate::problems::SmoothObjective;

const WOLFE_C1: f64 = 1e-4;
const MAX_LINE_SEARCH: usize = 40;
const LBFGS_MEMORY: usize = 10;

#[derive(Clone, Debug)]
pub struct Minimized {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Fixed-step gradient descent with step `1 / lipschitz_bound`.
pub fn fixed_step_gd<O: SmoothObjective + ?Sized>(
    obj: &O,
    x0: &[f64],
    max_iter: usize,
    tol: f64,
) -> Minimized {
    let step = 1.0 / obj.lipschitz_bound();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    let mut it = 0;
    loop {
        obj.gradient_into(&x, &mut g);
        let gn = norm_sq(&g).sqrt();
        if gn <= tol || it == max_iter || !gn.is_finite() {
            return Minimized {
                x,
                iterations: it,
                grad_norm: gn,
            };
        }
        axpy(-step, &g, &mut x);
        it += 1;
    }
}

struct Probe {
    step: f64,
    value: f64,
    slope: f64,
    grad: Vec<f64>,
}

fn probe<O: SmoothObjective + ?Sized>(obj: &O, x: &[f64], d: &[f64], step: f64) -> Probe {
    let mut trial = x.to_vec();
    axpy(step, d, &mut trial);
    let mut grad = vec![0.0; x.len()];
    obj.gradient_into(&trial, &mut grad);
    Probe {
        step,
        value: obj.value(&trial),
        slope: dot(&grad, d),
        grad,
    }
}

fn cubic_min(a: &Probe, b: &Probe) -> f64 {
    let (lo, hi) = if a.step < b.step {
        (a.step, b.step)
    } else {
        (b.step, a.step)
    };
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc >= 0.0 {
        let d2 = disc.sqrt();
        let t = if a.step <= b.step {
            b.step - (b.step - a.step) * ((b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2))
        } else {
            a.step - (a.step - b.step) * ((a.slope + d2 - d1) / (a.slope - b.slope + 2.0 * d2))
        };
        if t.is_finite() {
            return t.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

/// Strong Wolfe line search along a descent direction `d`.
/// Returns `None` when no acceptable step was found.
fn strong_wolfe<O: SmoothObjective + ?Sized>(
    obj: &O,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    initial: f64,
    c2: f64,
) -> Option<Probe> {
    let slope0 = dot(g, d);
    if slope0 >= 0.0 {
        return None;
    }
    let armijo = |p: &Probe| p.value <= fx + WOLFE_C1 * p.step * slope0;
    let curvature = |p: &Probe| p.slope.abs() <= -c2 * slope0;

    let mut prev = Probe {
        step: 0.0,
        value: fx,
        slope: slope0,
        grad: g.to_vec(),
    };
    let mut cur = probe(obj, x, d, initial);
    let mut evals = 1;
    let (mut lo, mut hi) = loop {
        if !cur.value.is_finite() {
            let step = 0.5 * (prev.step + cur.step);
            cur = probe(obj, x, d, step);
        } else if !armijo(&cur) || (evals > 1 && cur.value >= prev.value) {
            break (prev, cur);
        } else if curvature(&cur) {
            return Some(cur);
        } else if cur.slope >= 0.0 {
            break (cur, prev);
        } else {
            let step = cur.step * 2.0;
            prev = cur;
            cur = probe(obj, x, d, step);
        }
        evals += 1;
        if evals >= MAX_LINE_SEARCH {
            return armijo(&cur).then_some(cur);
        }
    };
    // Zoom: `lo` satisfies Armijo with the lowest value seen, `hi` brackets.
    while evals < MAX_LINE_SEARCH {
        let width = (hi.step - lo.step).abs();
        let mut t = cubic_min(&lo, &hi);
        let margin = 0.1 * width;
        let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
        if t - a < margin || b - t < margin {
            t = 0.5 * (a + b);
        }
        let p = probe(obj, x, d, t);
        evals += 1;
        if !armijo(&p) || p.value >= lo.value {
            hi = p;
        } else {
            if curvature(&p) {
                return Some(p);
            }
            if p.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
        if width < 1e-16 * lo.step.abs().max(1.0) {
            break;
        }
    }
    (lo.step > 0.0).then_some(lo)
}

fn gradient_fallback<O: SmoothObjective + ?Sized>(obj: &O, x: &mut [f64], g: &[f64]) -> f64 {
    axpy(-1.0 / obj.lipschitz_bound(), g, x);
    obj.value(x)
}

/// Nonlinear conjugate gradient (Polak-Ribiere+, restarted when the direction
/// stops being a descent direction).
pub fn conjugate_gradient<O: SmoothObjective + ?Sized>(
    obj: &O,
    x0: &[f64],
    max_iter: usize,
    tol: f64,
) -> Minimized {
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    obj.gradient_into(&x, &mut g);
    let mut fx = obj.value(&x);
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut step = 1.0 / obj.lipschitz_bound();
    let mut it = 0;
    loop {
        let gn2 = norm_sq(&g);
        if gn2.sqrt() <= tol || it == max_iter || !gn2.is_finite() {
            return Minimized {
                x,
                iterations: it,
                grad_norm: gn2.sqrt(),
            };
        }
        let g_new = match strong_wolfe(obj, &x, fx, &g, &d, step, 0.1) {
            Some(p) => {
                axpy(p.step, &d, &mut x);
                fx = p.value;
                step = p.step;
                p.grad
            }
            None => {
                fx = gradient_fallback(obj, &mut x, &g);
                step = 1.0 / obj.lipschitz_bound();
                let mut gg = vec![0.0; x.len()];
                obj.gradient_into(&x, &mut gg);
                d = gg.iter().map(|v| -v).collect();
                g = gg;
                it += 1;
                continue;
            }
        };
        let diff: f64 = g_new.iter().zip(&g).map(|(a, b)| a * (a - b)).sum();
        let beta = (diff / gn2).max(0.0);
        for k in 0..d.len() {
            d[k] = -g_new[k] + beta * d[k];
        }
        if dot(&d, &g_new) >= 0.0 {
            d = g_new.iter().map(|v| -v).collect();
        }
        g = g_new;
        it += 1;
    }
}

/// Limited-memory BFGS (memory 10) with a strong Wolfe line search.
pub fn lbfgs<O: SmoothObjective + ?Sized>(
    obj: &O,
    x0: &[f64],
    max_iter: usize,
    tol: f64,
) -> Minimized {
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    obj.gradient_into(&x, &mut g);
    let mut fx = obj.value(&x);
    let mut pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut it = 0;
    loop {
        let gn = norm_sq(&g).sqrt();
        if gn <= tol || it == max_iter || !gn.is_finite() {
            return Minimized {
                x,
                iterations: it,
                grad_norm: gn,
            };
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push(a);
        }
        let h0 = match pairs.last() {
            Some((s, y, _)) => dot(s, y) / norm_sq(y),
            None => 1.0 / obj.lipschitz_bound(),
        };
        q.iter_mut().for_each(|v| *v *= h0);
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(a - b, s, &mut q);
        }
        let d: Vec<f64> = q.iter().map(|v| -v).collect();
        let x_old = x.clone();
        let g_old = g.clone();
        match strong_wolfe(obj, &x, fx, &g, &d, 1.0, 0.9) {
            Some(p) => {
                axpy(p.step, &d, &mut x);
                fx = p.value;
                g = p.grad;
            }
            None => {
                pairs.clear();
                fx = gradient_fallback(obj, &mut x, &g);
                obj.gradient_into(&x, &mut g);
            }
        }
        let s: Vec<f64> = x.iter().zip(&x_old).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&g_old).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if pairs.len() == LBFGS_MEMORY {
                pairs.remove(0);
            }
            pairs.push((s, y, 1.0 / sy));
        }
        it += 1;
    }
}
