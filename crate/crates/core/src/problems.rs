//! Finite-sum objectives `f(x) = (1/n) sum_i f_i(x)` with per-client oracles.
//!
//! Three kinds are supported: l2-regularized logistic regression, logistic
//! regression with the smooth nonconvex penalty `lambda * sum_j x_j^2 / (1 + x_j^2)`,
//! and separable quadratics `f_i(x) = 1/2 (x - c_i)^T diag(h_i) (x - c_i)`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::datasets::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{norm, norm_sq};

/// Default strength of the nonconvex penalty.
pub const DEFAULT_NONCONVEX_LAMBDA: f64 = 0.1;
/// Default gradient-norm tolerance of the reference solver.
pub const REFERENCE_TOL: f64 = 1e-12;
/// Default local-optimality threshold for personalized models.
pub const DEFAULT_EPS_LOC: f64 = 1e-6;
const MAX_SOLVER_ITERATIONS: usize = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    L2Logistic,
    NonconvexLogistic,
    Quadratic,
}

impl ProblemKind {
    pub fn is_convex(self) -> bool {
        !matches!(self, ProblemKind::NonconvexLogistic)
    }
}

/// One client's share of a logistic problem, rows stored sparse with 0-based indices.
#[derive(Clone, Debug)]
pub struct LogisticClient {
    rows: Vec<Vec<(usize, f64)>>,
    labels: Vec<f64>,
    sq_norm_sum: f64,
}

impl LogisticClient {
    pub fn new(rows: Vec<Vec<(usize, f64)>>, labels: Vec<f64>) -> Self {
        let sq_norm_sum = rows
            .iter()
            .map(|r| r.iter().map(|(_, v)| v * v).sum::<f64>())
            .sum();
        Self {
            rows,
            labels,
            sq_norm_sum,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn margin(&self, j: usize, x: &[f64]) -> f64 {
        self.labels[j] * self.rows[j].iter().map(|&(k, v)| v * x[k]).sum::<f64>()
    }
}

/// `f_i(x) = 1/2 sum_j curvature_j (x_j - center_j)^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticClient {
    pub curvature: Vec<f64>,
    pub center: Vec<f64>,
}

impl QuadraticClient {
    pub fn isotropic(mu: f64, center: Vec<f64>) -> Self {
        Self {
            curvature: vec![mu; center.len()],
            center,
        }
    }
}

#[derive(Clone, Debug)]
enum Clients {
    Logistic(Vec<LogisticClient>),
    Quadratic(Vec<QuadraticClient>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub l_i: Vec<f64>,
    pub mu_i: Vec<f64>,
    /// `sqrt((1/n) sum L_i^2)`
    pub l_tilde: f64,
    /// `sqrt(sum L_i^2)`, the convention without the `1/n` factor.
    pub l_tilde_sum: f64,
    pub l_max: f64,
    /// Smoothness constant used for `f` in stepsize formulas (set to `l_tilde`).
    pub l_global: f64,
    /// Strong convexity (PL) constant of `f` itself.
    pub mu_global: f64,
    pub kappa_max: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "strength", rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    Zero,
    L2(f64),
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::L2(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::invalid(format!("l2 strength must be >= 0, got {s}")))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L2(s) => 0.5 * s * norm_sq(x),
        }
    }

    pub fn add_gradient(&self, x: &[f64], out: &mut [f64]) {
        if let Regularizer::L2(s) = *self {
            for (o, v) in out.iter_mut().zip(x) {
                *o += s * v;
            }
        }
    }

    pub fn strength(&self) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L2(s) => s,
        }
    }
}

/// Proximity operator of `gamma * R`.
pub fn prox_reg(reg: &Regularizer, gamma: f64, x: &[f64]) -> Vec<f64> {
    match *reg {
        Regularizer::Zero => x.to_vec(),
        Regularizer::L2(s) => {
            let c = 1.0 + gamma * s;
            x.iter().map(|v| v / c).collect()
        }
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
pub struct Problem {
    kind: ProblemKind,
    dim: usize,
    mu: f64,
    clients: Clients,
    constants: OnceLock<ProblemConstants>,
}

impl Problem {
    pub fn l2_logistic(ds: &Dataset, partition: &ClientPartition, mu: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::invalid(format!(
                "l2 logistic requires mu > 0, got {mu}"
            )));
        }
        Self::logistic(ProblemKind::L2Logistic, ds, partition, mu)
    }

    pub fn nonconvex_logistic(ds: &Dataset, partition: &ClientPartition, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        Self::logistic(ProblemKind::NonconvexLogistic, ds, partition, lambda)
    }

    fn logistic(kind: ProblemKind, ds: &Dataset, partition: &ClientPartition, mu: f64) -> Result<Self> {
        let mut clients = Vec::with_capacity(partition.assignments.len());
        for (i, idx) in partition.assignments.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::invalid(format!("client {i} has no examples")));
            }
            let mut rows = Vec::with_capacity(idx.len());
            let mut labels = Vec::with_capacity(idx.len());
            for &e in idx {
                let ex = ds
                    .examples()
                    .get(e)
                    .ok_or_else(|| Error::invalid(format!("example index {e} out of range")))?;
                rows.push(ex.features.clone());
                labels.push(f64::from(ex.label));
            }
            clients.push(LogisticClient::new(rows, labels));
        }
        Self::from_logistic_clients(kind, ds.dim(), clients, mu)
    }

    pub fn from_logistic_clients(
        kind: ProblemKind,
        dim: usize,
        clients: Vec<LogisticClient>,
        mu: f64,
    ) -> Result<Self> {
        if kind == ProblemKind::Quadratic {
            return Err(Error::invalid("quadratic kind needs quadratic clients"));
        }
        if clients.is_empty() || clients.iter().any(|c| c.is_empty()) {
            return Err(Error::invalid("every client needs at least one example"));
        }
        if kind == ProblemKind::L2Logistic && !(mu > 0.0) {
            return Err(Error::invalid("l2 logistic requires mu > 0"));
        }
        for c in &clients {
            for row in &c.rows {
                if row.iter().any(|&(k, _)| k >= dim) {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: row.iter().map(|&(k, _)| k + 1).max().unwrap_or(0),
                    });
                }
            }
        }
        Ok(Self {
            kind,
            dim,
            mu,
            clients: Clients::Logistic(clients),
            constants: OnceLock::new(),
        })
    }

    pub fn quadratic(clients: Vec<QuadraticClient>) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::invalid("quadratic problem needs at least one client"))?;
        let dim = first.center.len();
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        for (i, c) in clients.iter().enumerate() {
            if c.center.len() != dim || c.curvature.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.center.len().max(c.curvature.len()),
                });
            }
            if c.curvature.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
                return Err(Error::invalid(format!(
                    "client {i}: curvatures must be positive"
                )));
            }
        }
        Ok(Self {
            kind: ProblemKind::Quadratic,
            dim,
            mu: 0.0,
            clients: Clients::Quadratic(clients),
            constants: OnceLock::new(),
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        match &self.clients {
            Clients::Logistic(c) => c.len(),
            Clients::Quadratic(c) => c.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Regularization strength: `mu` for l2 logistic, `lambda` for the nonconvex kind.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn quadratic_clients(&self) -> Option<&[QuadraticClient]> {
        match &self.clients {
            Clients::Quadratic(c) => Some(c),
            Clients::Logistic(_) => None,
        }
    }

    fn check(&self, client: usize, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if client >= self.n() {
            return Err(Error::invalid(format!(
                "client {client} out of range (n = {})",
                self.n()
            )));
        }
        Ok(())
    }

    pub fn eval_loss(&self, client: usize, x: &[f64]) -> Result<f64> {
        self.check(client, x)?;
        Ok(self.loss(client, x))
    }

    pub fn eval_grad(&self, client: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check(client, x)?;
        Ok(self.grad(client, x))
    }

    /// `f_i(x)` without argument validation.
    pub fn loss(&self, client: usize, x: &[f64]) -> f64 {
        match &self.clients {
            Clients::Logistic(cs) => {
                let c = &cs[client];
                let data: f64 = (0..c.len()).map(|j| softplus(-c.margin(j, x))).sum::<f64>()
                    / c.len() as f64;
                data + self.penalty(x)
            }
            Clients::Quadratic(cs) => {
                let c = &cs[client];
                0.5 * c
                    .curvature
                    .iter()
                    .zip(x.iter().zip(&c.center))
                    .map(|(h, (v, m))| h * (v - m) * (v - m))
                    .sum::<f64>()
            }
        }
    }

    pub fn grad(&self, client: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_into(client, x, &mut out);
        out
    }

    /// Writes `grad f_i(x)` into `out` (overwriting it).
    pub fn grad_into(&self, client: usize, x: &[f64], out: &mut [f64]) {
        match &self.clients {
            Clients::Logistic(cs) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let c = &cs[client];
                let inv = 1.0 / c.len() as f64;
                for j in 0..c.len() {
                    let coef = -c.labels[j] * sigmoid(-c.margin(j, x)) * inv;
                    for &(k, v) in &c.rows[j] {
                        out[k] += coef * v;
                    }
                }
                self.add_penalty_grad(x, out);
            }
            Clients::Quadratic(cs) => {
                let c = &cs[client];
                for (k, o) in out.iter_mut().enumerate() {
                    *o = c.curvature[k] * (x[k] - c.center[k]);
                }
            }
        }
    }

    /// Number of local data points `n_i` (1 for quadratic clients).
    pub fn local_count(&self, client: usize) -> usize {
        match &self.clients {
            Clients::Logistic(cs) => cs[client].len(),
            Clients::Quadratic(_) => 1,
        }
    }

    /// Gradient of the single-datum function `f_{i,j}`, whose average over `j` is `f_i`.
    pub fn sample_grad_into(&self, client: usize, sample: usize, x: &[f64], out: &mut [f64]) {
        match &self.clients {
            Clients::Logistic(cs) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let c = &cs[client];
                let coef = -c.labels[sample] * sigmoid(-c.margin(sample, x));
                for &(k, v) in &c.rows[sample] {
                    out[k] += coef * v;
                }
                self.add_penalty_grad(x, out);
            }
            Clients::Quadratic(_) => self.grad_into(client, x, out),
        }
    }

    fn penalty(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::L2Logistic => 0.5 * self.mu * norm_sq(x),
            ProblemKind::NonconvexLogistic => {
                self.mu * x.iter().map(|v| v * v / (1.0 + v * v)).sum::<f64>()
            }
            ProblemKind::Quadratic => 0.0,
        }
    }

    fn add_penalty_grad(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            ProblemKind::L2Logistic => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o += self.mu * v;
                }
            }
            ProblemKind::NonconvexLogistic => {
                for (o, v) in out.iter_mut().zip(x) {
                    let q = 1.0 + v * v;
                    *o += 2.0 * self.mu * v / (q * q);
                }
            }
            ProblemKind::Quadratic => {}
        }
    }

    /// `f(x) = (1/n) sum_i f_i(x)`.
    pub fn full_loss(&self, x: &[f64]) -> f64 {
        (0..self.n()).map(|i| self.loss(i, x)).sum::<f64>() / self.n() as f64
    }

    pub fn full_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut buf = vec![0.0; self.dim];
        for i in 0..self.n() {
            self.grad_into(i, x, &mut buf);
            for (o, g) in out.iter_mut().zip(&buf) {
                *o += g;
            }
        }
        let n = self.n() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Smoothness and strong-convexity constants, computed once.
    pub fn constants(&self) -> &ProblemConstants {
        self.constants.get_or_init(|| self.compute_constants())
    }

    fn compute_constants(&self) -> ProblemConstants {
        let (l_i, mu_i, mu_global): (Vec<f64>, Vec<f64>, f64) = match &self.clients {
            Clients::Logistic(cs) => {
                let extra = match self.kind {
                    ProblemKind::NonconvexLogistic => 2.0 * self.mu,
                    _ => self.mu,
                };
                let l = cs
                    .iter()
                    .map(|c| c.sq_norm_sum / (4.0 * c.len() as f64) + extra)
                    .collect();
                let m = match self.kind {
                    ProblemKind::L2Logistic => self.mu,
                    _ => 0.0,
                };
                (l, vec![m; cs.len()], m)
            }
            Clients::Quadratic(cs) => {
                let l = cs
                    .iter()
                    .map(|c| c.curvature.iter().cloned().fold(f64::MIN, f64::max))
                    .collect();
                let m = cs
                    .iter()
                    .map(|c| c.curvature.iter().cloned().fold(f64::MAX, f64::min))
                    .collect();
                let n = cs.len() as f64;
                let mg = (0..self.dim)
                    .map(|k| cs.iter().map(|c| c.curvature[k]).sum::<f64>() / n)
                    .fold(f64::MAX, f64::min);
                (l, m, mg)
            }
        };
        let n = l_i.len() as f64;
        let sum_sq: f64 = l_i.iter().map(|l| l * l).sum();
        let l_tilde = (sum_sq / n).sqrt();
        let l_max = l_i.iter().cloned().fold(f64::MIN, f64::max);
        let kappa_max = l_i
            .iter()
            .zip(&mu_i)
            .map(|(l, m)| if *m > 0.0 { l / m } else { f64::INFINITY })
            .fold(f64::MIN, f64::max);
        ProblemConstants {
            l_i,
            mu_i,
            l_tilde,
            l_tilde_sum: sum_sq.sqrt(),
            l_max,
            l_global: l_tilde,
            mu_global,
            kappa_max,
        }
    }
}

/// A differentiable objective that the deterministic solvers can minimize.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);
    /// An upper bound on the gradient's Lipschitz constant.
    fn lipschitz_bound(&self) -> f64;
}

/// `f + R` with `R` smooth (zero or l2).
pub struct FullObjective<'a> {
    pub problem: &'a Problem,
    pub reg: Regularizer,
}

impl SmoothObjective for FullObjective<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.problem.full_loss(x) + self.reg.value(x)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let g = self.problem.full_grad(x);
        out.copy_from_slice(&g);
        self.reg.add_gradient(x, out);
    }
    fn lipschitz_bound(&self) -> f64 {
        let c = self.problem.constants();
        c.l_i.iter().sum::<f64>() / c.l_i.len() as f64 + self.reg.strength()
    }
}

pub struct ClientObjective<'a> {
    pub problem: &'a Problem,
    pub client: usize,
}

impl SmoothObjective for ClientObjective<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.problem.loss(self.client, x)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.problem.grad_into(self.client, x, out)
    }
    fn lipschitz_bound(&self) -> f64 {
        self.problem.constants().l_i[self.client]
    }
}

#[derive(Clone, Debug)]
pub struct SolverOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Full-gradient descent with Armijo backtracking, stopping once `||grad|| <= tol`
/// (or `< tol` when `strict`).
///
/// The trial step doubles after every accepted step. Backtracking never goes
/// below `1 / lipschitz_bound`, which is a guaranteed-descent step; this keeps the
/// iteration moving when objective differences fall under floating-point resolution.
pub fn gradient_descent<O: SmoothObjective + ?Sized>(
    obj: &O,
    x0: &[f64],
    tol: f64,
    strict: bool,
    max_iterations: usize,
) -> Result<SolverOutcome> {
    let dim = obj.dim();
    if x0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x0.len(),
        });
    }
    let min_step = 1.0 / obj.lipschitz_bound();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    let mut step = min_step;
    let mut fx = obj.value(&x);
    for it in 0..=max_iterations {
        obj.gradient_into(&x, &mut g);
        let gn2 = norm_sq(&g);
        let gn = gn2.sqrt();
        let done = if strict { gn < tol } else { gn <= tol };
        if done {
            return Ok(SolverOutcome {
                x,
                iterations: it,
                grad_norm: gn,
            });
        }
        if !gn.is_finite() || !fx.is_finite() {
            return Err(Error::Diverged {
                round: it,
                value: fx,
            });
        }
        if it == max_iterations {
            break;
        }
        step = (2.0 * step).max(min_step);
        loop {
            for k in 0..dim {
                trial[k] = x[k] - step * g[k];
            }
            let ft = obj.value(&trial);
            if ft <= fx - 0.5 * step * gn2 || step <= min_step {
                fx = ft;
                break;
            }
            step = (0.5 * step).max(min_step);
        }
        std::mem::swap(&mut x, &mut trial);
    }
    Err(Error::NotConverged {
        tol,
        iterations: max_iterations,
    })
}

/// High-precision minimizer of `f + R` (convex kinds only).
pub fn reference_solution(p: &Problem, reg: &Regularizer, tol: f64) -> Result<Vec<f64>> {
    reference_solution_from(p, reg, tol, &vec![0.0; p.dim()])
}

pub fn reference_solution_from(
    p: &Problem,
    reg: &Regularizer,
    tol: f64,
    x0: &[f64],
) -> Result<Vec<f64>> {
    if !p.kind().is_convex() {
        return Err(Error::invalid(
            "reference solution is only defined for convex problems",
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    reg.validate()?;
    if let Some(cs) = p.quadratic_clients() {
        let n = cs.len() as f64;
        let s = reg.strength();
        return Ok((0..p.dim())
            .map(|k| {
                let num: f64 = cs.iter().map(|c| c.curvature[k] * c.center[k]).sum();
                let den: f64 = cs.iter().map(|c| c.curvature[k]).sum::<f64>() + n * s;
                num / den
            })
            .collect());
    }
    let obj = FullObjective { problem: p, reg: *reg };
    Ok(gradient_descent(&obj, x0, tol, false, MAX_SOLVER_ITERATIONS)?.x)
}

#[derive(Clone, Debug)]
pub struct LocalSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
}

/// Minimizer of a single `f_i`, certified by `||grad f_i(x)|| < eps_loc`.
pub fn local_minimizer(p: &Problem, client: usize, eps_loc: f64) -> Result<LocalSolution> {
    if !p.kind().is_convex() {
        return Err(Error::invalid("local minimizers need a convex problem"));
    }
    if !(eps_loc > 0.0) {
        return Err(Error::invalid("eps_loc must be positive"));
    }
    if client >= p.n() {
        return Err(Error::invalid(format!("client {client} out of range")));
    }
    if let Some(cs) = p.quadratic_clients() {
        return Ok(LocalSolution {
            x: cs[client].center.clone(),
            iterations: 1,
        });
    }
    let obj = ClientObjective { problem: p, client };
    let out = gradient_descent(&obj, &vec![0.0; p.dim()], eps_loc, true, MAX_SOLVER_ITERATIONS)?;
    Ok(LocalSolution {
        x: out.x,
        iterations: out.iterations,
    })
}

/// `||(1/n) sum_i grad f_i(x) + grad R(x)||`.
pub fn stationarity(p: &Problem, reg: &Regularizer, x: &[f64]) -> f64 {
    let mut g = p.full_grad(x);
    reg.add_gradient(x, &mut g);
    norm(&g)
}
