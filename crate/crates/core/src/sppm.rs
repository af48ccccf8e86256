//! Stochastic proximal point with arbitrary cohort sampling (SPPM-AS), its
//! FedProx/FedAvg-style variants, LocalGD baselines and cost accounting.
//!
//! A cohort `C` carries weights `v_i = 1/(n p_i)` and objective
//! `f_C(x) = sum_{i in C} v_i f_i(x)`, so `E[f_C] = f` for every proper scheme.
//! One SPPM-AS round is `x <- prox_{gamma f_C}(x)`.

use itertools::Itertools;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::linalg::{dist_sq, norm_sq};
use crate::minimize::{conjugate_gradient, fixed_step_gd, lbfgs};
use crate::problems::{Problem, ProblemKind, SmoothObjective};
use crate::rng::{self, StreamRng};
use crate::trace::{Record, Trace, TraceMeta};

/// Largest `n` for which cohorts are enumerated.
pub const ENUMERATION_LIMIT: usize = 20;
/// Largest `n` for brute-force stratified clustering.
pub const BRUTE_FORCE_LIMIT: usize = 10;
/// Allowed norm of the mean optimum gradient.
pub const MEAN_GRAD_TOL: f64 = 1e-8;
const DIVERGENCE: f64 = 1e12;
const SUMS_TO_ONE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingKind {
    Full,
    /// One client per round, client `i` with probability `p[i]`.
    Nonuniform { p: Vec<f64> },
    /// Uniform subsets of size `tau`.
    Nice { tau: usize },
    /// Block `j` with probability `q[j]`.
    Block { blocks: Vec<Vec<usize>>, q: Vec<f64> },
    /// One uniformly chosen member from every block.
    Stratified { blocks: Vec<Vec<usize>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    /// Sorted client indices.
    pub members: Vec<usize>,
    /// `1 / (n p_i)` for each member.
    pub weights: Vec<f64>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn singleton(i: usize) -> Self {
        Self {
            members: vec![i],
            weights: vec![1.0],
        }
    }

    fn sorted(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let (members, weights) = pairs.into_iter().unzip();
        Self { members, weights }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingScheme {
    kind: SamplingKind,
    n: usize,
}

fn check_partition(blocks: &[Vec<usize>], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for b in blocks {
        if b.is_empty() {
            return Err(Error::Partition("empty block".into()));
        }
        for &i in b {
            if i >= n {
                return Err(Error::Partition(format!("client {i} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Partition(format!("client {i} appears twice")));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Partition(format!("client {i} is in no block")));
    }
    Ok(())
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid(format!("{what} must be positive")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUMS_TO_ONE_TOL {
        return Err(Error::invalid(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl SamplingScheme {
    pub fn new(kind: SamplingKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sampling needs at least one client"));
        }
        match &kind {
            SamplingKind::Full => {}
            SamplingKind::Nonuniform { p } => {
                if p.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: p.len(),
                    });
                }
                check_distribution(p, "p")?;
            }
            SamplingKind::Nice { tau } => {
                if *tau == 0 || *tau > n {
                    return Err(Error::invalid(format!("nice sampling needs 1 <= tau <= {n}, got {tau}")));
                }
            }
            SamplingKind::Block { blocks, q } => {
                check_partition(blocks, n)?;
                if q.len() != blocks.len() {
                    return Err(Error::DimensionMismatch {
                        expected: blocks.len(),
                        got: q.len(),
                    });
                }
                check_distribution(q, "q")?;
            }
            SamplingKind::Stratified { blocks } => check_partition(blocks, n)?,
        }
        Ok(Self { kind, n })
    }

    pub fn full(n: usize) -> Self {
        Self {
            kind: SamplingKind::Full,
            n,
        }
    }

    pub fn nice(tau: usize, n: usize) -> Result<Self> {
        Self::new(SamplingKind::Nice { tau }, n)
    }

    pub fn stratified(blocks: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        Self::new(SamplingKind::Stratified { blocks }, n)
    }

    /// Block sampling with `q_j` proportional to block size.
    pub fn block(blocks: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let q = blocks.iter().map(|b| b.len() as f64 / n as f64).collect();
        Self::new(SamplingKind::Block { blocks, q }, n)
    }

    pub fn kind(&self) -> &SamplingKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn label(&self) -> String {
        match &self.kind {
            SamplingKind::Full => "full".into(),
            SamplingKind::Nonuniform { .. } => "nonuniform".into(),
            SamplingKind::Nice { tau } => format!("nice({tau})"),
            SamplingKind::Block { blocks, .. } => format!("block(b={})", blocks.len()),
            SamplingKind::Stratified { blocks } => format!("stratified(b={})", blocks.len()),
        }
    }

    /// Inclusion probabilities `p_i = P(i in S)`.
    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        let n = self.n;
        match &self.kind {
            SamplingKind::Full => vec![1.0; n],
            SamplingKind::Nonuniform { p } => p.clone(),
            SamplingKind::Nice { tau } => vec![*tau as f64 / n as f64; n],
            SamplingKind::Block { blocks, q } => {
                let mut p = vec![0.0; n];
                for (b, qj) in blocks.iter().zip(q) {
                    b.iter().for_each(|&i| p[i] = *qj);
                }
                p
            }
            SamplingKind::Stratified { blocks } => {
                let mut p = vec![0.0; n];
                for b in blocks {
                    b.iter().for_each(|&i| p[i] = 1.0 / b.len() as f64);
                }
                p
            }
        }
    }

    fn block_cohort(&self, j: usize) -> Cohort {
        let n = self.n as f64;
        match &self.kind {
            SamplingKind::Block { blocks, q } => {
                let w = 1.0 / (n * q[j]);
                Cohort::sorted(blocks[j].iter().map(|&i| (i, w)).collect())
            }
            _ => unreachable!("block_cohort on a non-block scheme"),
        }
    }

    fn stratified_cohort(&self, picks: &[usize]) -> Cohort {
        let n = self.n as f64;
        match &self.kind {
            SamplingKind::Stratified { blocks } => Cohort::sorted(
                blocks
                    .iter()
                    .zip(picks)
                    .map(|(b, &i)| (i, b.len() as f64 / n))
                    .collect(),
            ),
            _ => unreachable!("stratified_cohort on a non-stratified scheme"),
        }
    }

    fn full_cohort(&self) -> Cohort {
        let w = 1.0 / self.n as f64;
        Cohort {
            members: (0..self.n).collect(),
            weights: vec![w; self.n],
        }
    }

    fn nice_cohort(&self, members: Vec<usize>, tau: usize) -> Cohort {
        let w = 1.0 / tau as f64;
        Cohort::sorted(members.into_iter().map(|i| (i, w)).collect())
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Cohort {
        let n = self.n;
        match &self.kind {
            SamplingKind::Full => self.full_cohort(),
            SamplingKind::Nonuniform { p } => {
                let i = WeightedIndex::new(p).expect("validated").sample(rng);
                Cohort {
                    members: vec![i],
                    weights: vec![1.0 / (n as f64 * p[i])],
                }
            }
            SamplingKind::Nice { tau } => {
                let picked = rand::seq::index::sample(rng, n, *tau).into_vec();
                self.nice_cohort(picked, *tau)
            }
            SamplingKind::Block { q, .. } => {
                let j = WeightedIndex::new(q).expect("validated").sample(rng);
                self.block_cohort(j)
            }
            SamplingKind::Stratified { blocks } => {
                let picks: Vec<usize> = blocks
                    .iter()
                    .map(|b| b[rng.random_range(0..b.len())])
                    .collect();
                self.stratified_cohort(&picks)
            }
        }
    }

    /// Every cohort with positive probability, with its probability.
    pub fn enumerate(&self) -> Result<Vec<(f64, Cohort)>> {
        let n = self.n;
        if n > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge(format!(
                "cohort enumeration is limited to n <= {ENUMERATION_LIMIT}, got {n}"
            )));
        }
        Ok(match &self.kind {
            SamplingKind::Full => vec![(1.0, self.full_cohort())],
            SamplingKind::Nonuniform { p } => p
                .iter()
                .enumerate()
                .map(|(i, &pi)| {
                    (
                        pi,
                        Cohort {
                            members: vec![i],
                            weights: vec![1.0 / (n as f64 * pi)],
                        },
                    )
                })
                .collect(),
            SamplingKind::Nice { tau } => {
                let subsets: Vec<Vec<usize>> = (0..n).combinations(*tau).collect();
                let prob = 1.0 / subsets.len() as f64;
                subsets
                    .into_iter()
                    .map(|s| (prob, self.nice_cohort(s, *tau)))
                    .collect()
            }
            SamplingKind::Block { q, .. } => q
                .iter()
                .enumerate()
                .map(|(j, &qj)| (qj, self.block_cohort(j)))
                .collect(),
            SamplingKind::Stratified { blocks } => {
                let prob: f64 = blocks.iter().map(|b| 1.0 / b.len() as f64).product();
                blocks
                    .iter()
                    .map(|b| b.iter().copied())
                    .multi_cartesian_product()
                    .map(|picks| (prob, self.stratified_cohort(&picks)))
                    .collect()
            }
        })
    }
}

pub fn sample_cohort(scheme: &SamplingScheme, rng: &mut StreamRng) -> Cohort {
    scheme.sample(rng)
}

/// `f_C` as an oracle over a problem.
pub struct CohortObjective<'a> {
    pub problem: &'a Problem,
    pub cohort: &'a Cohort,
}

impl<'a> CohortObjective<'a> {
    pub fn new(problem: &'a Problem, cohort: &'a Cohort) -> Result<Self> {
        if cohort.is_empty() {
            return Err(Error::invalid("empty cohort"));
        }
        if cohort.members.len() != cohort.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: cohort.members.len(),
                got: cohort.weights.len(),
            });
        }
        if cohort.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("cohort weights must be positive"));
        }
        if let Some(&i) = cohort.members.iter().find(|&&i| i >= problem.n()) {
            return Err(Error::invalid(format!("cohort member {i} out of range")));
        }
        Ok(Self { problem, cohort })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.cohort
            .members
            .iter()
            .zip(&self.cohort.weights)
            .map(|(&i, w)| w * self.problem.loss(i, x))
            .sum()
    }

    /// Member gradients are computed in parallel and summed in member order.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let grads: Vec<Vec<f64>> = if self.cohort.len() > 1 {
            self.cohort
                .members
                .par_iter()
                .map(|&i| self.problem.grad(i, x))
                .collect()
        } else {
            vec![self.problem.grad(self.cohort.members[0], x)]
        };
        out.iter_mut().for_each(|o| *o = 0.0);
        for (g, w) in grads.iter().zip(&self.cohort.weights) {
            for (o, v) in out.iter_mut().zip(g) {
                *o += w * v;
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.problem.dim()];
        self.gradient_into(x, &mut out);
        out
    }

    /// `mu_C = sum_{i in C} v_i mu_i`.
    pub fn mu(&self) -> f64 {
        let c = self.problem.constants();
        self.cohort
            .members
            .iter()
            .zip(&self.cohort.weights)
            .map(|(&i, w)| w * c.mu_i[i])
            .sum()
    }

    pub fn smoothness(&self) -> f64 {
        let c = self.problem.constants();
        self.cohort
            .members
            .iter()
            .zip(&self.cohort.weights)
            .map(|(&i, w)| w * c.l_i[i])
            .sum()
    }
}

pub fn cohort_objective<'a>(p: &'a Problem, cohort: &'a Cohort) -> Result<CohortObjective<'a>> {
    CohortObjective::new(p, cohort)
}

/// The prox subproblem `f_C(z) + ||z - anchor||^2 / (2 gamma)`.
struct ProxObjective<'a> {
    cohort: &'a CohortObjective<'a>,
    gamma: f64,
    anchor: &'a [f64],
}

impl SmoothObjective for ProxObjective<'_> {
    fn dim(&self) -> usize {
        self.anchor.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.cohort.value(x) + dist_sq(x, self.anchor) / (2.0 * self.gamma)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.cohort.gradient_into(x, out);
        for k in 0..out.len() {
            out[k] += (x[k] - self.anchor[k]) / self.gamma;
        }
    }
    fn lipschitz_bound(&self) -> f64 {
        self.cohort.smoothness() + 1.0 / self.gamma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxSolverKind {
    ClosedFormQuadratic,
    GradientDescent,
    ConjugateGradient,
    QuasiNewton,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxSolverSpec {
    pub kind: ProxSolverKind,
    /// Local communication rounds allowed per prox evaluation.
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub inner_tol: f64,
}

impl ProxSolverSpec {
    pub fn exact() -> Self {
        Self {
            kind: ProxSolverKind::ClosedFormQuadratic,
            k: 1,
            inner_tol: 0.0,
        }
    }

    pub fn iterative(kind: ProxSolverKind, k: usize, inner_tol: f64) -> Self {
        Self { kind, k, inner_tol }
    }

    pub fn validate(&self, p: &Problem) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("solver.K", "needs at least one local round"));
        }
        if !(self.inner_tol >= 0.0 && self.inner_tol.is_finite()) {
            return Err(Error::config("solver.inner_tol", "must be finite and nonnegative"));
        }
        if self.kind == ProxSolverKind::ClosedFormQuadratic && p.kind() != ProblemKind::Quadratic {
            return Err(Error::config(
                "solver.kind",
                "closed_form_quadratic needs a quadratic problem",
            ));
        }
        Ok(())
    }
}

fn closed_form_prox(obj: &CohortObjective, gamma: f64, anchor: &[f64]) -> Result<Vec<f64>> {
    let clients = obj
        .problem
        .quadratic_clients()
        .ok_or_else(|| Error::invalid("closed-form prox needs quadratic clients"))?;
    let inv = 1.0 / gamma;
    Ok((0..anchor.len())
        .map(|k| {
            let mut num = anchor[k] * inv;
            let mut den = inv;
            for (&i, w) in obj.cohort.members.iter().zip(&obj.cohort.weights) {
                let h = w * clients[i].curvature[k];
                num += h * clients[i].center[k];
                den += h;
            }
            num / den
        })
        .collect())
}

/// `argmin_z f_C(z) + ||z - anchor||^2 / (2 gamma)` and the local rounds spent.
pub fn prox_solve(
    obj: &CohortObjective,
    gamma: f64,
    anchor: &[f64],
    solver: &ProxSolverSpec,
) -> Result<(Vec<f64>, usize)> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("prox needs gamma > 0, got {gamma}")));
    }
    if anchor.len() != obj.problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.problem.dim(),
            got: anchor.len(),
        });
    }
    solver.validate(obj.problem)?;
    let sub = ProxObjective {
        cohort: obj,
        gamma,
        anchor,
    };
    let out = match solver.kind {
        ProxSolverKind::ClosedFormQuadratic => return Ok((closed_form_prox(obj, gamma, anchor)?, 1)),
        ProxSolverKind::GradientDescent => fixed_step_gd(&sub, anchor, solver.k, solver.inner_tol),
        ProxSolverKind::ConjugateGradient => {
            conjugate_gradient(&sub, anchor, solver.k, solver.inner_tol)
        }
        ProxSolverKind::QuasiNewton => lbfgs(&sub, anchor, solver.k, solver.inner_tol),
    };
    Ok((out.x, out.iterations))
}

/// Prox computed as accurately as the problem allows: closed form for
/// quadratics, otherwise L-BFGS to `1e-12`.
pub fn exact_prox(obj: &CohortObjective, gamma: f64, anchor: &[f64]) -> Result<Vec<f64>> {
    if obj.problem.kind() == ProblemKind::Quadratic {
        return closed_form_prox(obj, gamma, anchor);
    }
    let sub = ProxObjective {
        cohort: obj,
        gamma,
        anchor,
    };
    let out = lbfgs(&sub, anchor, 100_000, 1e-12);
    if out.grad_norm > 1e-12 {
        return Err(Error::NotConverged {
            tol: 1e-12,
            iterations: out.iterations,
        });
    }
    Ok(out.x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMethod {
    Enumeration,
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingStats {
    pub mu_as: f64,
    pub sigma_star_as_sq: f64,
    /// Within-block gradient variances `sigma_j^2` (stratified only).
    pub cluster_sigma_sq: Option<Vec<f64>>,
    pub method: StatsMethod,
}

fn check_mean_gradient(grads: &[Vec<f64>]) -> Result<()> {
    if grads.is_empty() {
        return Err(Error::invalid("no gradients"));
    }
    let m = crate::linalg::mean(grads);
    let nm = norm_sq(&m).sqrt();
    if nm > MEAN_GRAD_TOL {
        return Err(Error::invalid(format!(
            "gradients at the optimum must average to zero, mean norm is {nm:e}"
        )));
    }
    Ok(())
}

fn weighted_sum(cohort: &Cohort, vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vectors[0].len()];
    for (&i, w) in cohort.members.iter().zip(&cohort.weights) {
        for (o, v) in out.iter_mut().zip(&vectors[i]) {
            *o += w * v;
        }
    }
    out
}

fn cohort_mu(cohort: &Cohort, mu_i: &[f64]) -> f64 {
    cohort
        .members
        .iter()
        .zip(&cohort.weights)
        .map(|(&i, w)| w * mu_i[i])
        .sum()
}

/// `mu_AS = min over supported cohorts of mu_C`, by enumeration.
pub fn mu_as(scheme: &SamplingScheme, mu_i: &[f64]) -> Result<f64> {
    if mu_i.len() != scheme.n() {
        return Err(Error::DimensionMismatch {
            expected: scheme.n(),
            got: mu_i.len(),
        });
    }
    Ok(scheme
        .enumerate()?
        .iter()
        .map(|(_, c)| cohort_mu(c, mu_i))
        .fold(f64::INFINITY, f64::min))
}

/// `sigma^2_{*,AS} = sum_C p_C ||grad f_C(x*)||^2`, by enumeration.
pub fn sigma_star_as(scheme: &SamplingScheme, grads: &[Vec<f64>]) -> Result<f64> {
    if grads.len() != scheme.n() {
        return Err(Error::DimensionMismatch {
            expected: scheme.n(),
            got: grads.len(),
        });
    }
    check_mean_gradient(grads)?;
    let cohorts = scheme.enumerate()?;
    let terms: Vec<f64> = cohorts
        .par_iter()
        .map(|(pc, c)| pc * norm_sq(&weighted_sum(c, grads)))
        .collect();
    let value: f64 = terms.iter().sum();
    if let SamplingKind::Nice { tau } = scheme.kind() {
        let closed = nice_sigma(grads, *tau);
        debug_assert!((value - closed).abs() <= 1e-9 * closed.max(1.0));
    }
    Ok(value)
}

fn mean_and_spread(grads: &[Vec<f64>], members: &[usize]) -> (Vec<f64>, f64) {
    let sub: Vec<Vec<f64>> = members.iter().map(|&i| grads[i].clone()).collect();
    let m = crate::linalg::mean(&sub);
    let spread = sub.iter().map(|g| dist_sq(g, &m)).sum::<f64>() / sub.len() as f64;
    (m, spread)
}

fn nice_sigma(grads: &[Vec<f64>], tau: usize) -> f64 {
    let n = grads.len();
    let all: Vec<usize> = (0..n).collect();
    let (m, spread) = mean_and_spread(grads, &all);
    if n == 1 {
        return norm_sq(&m);
    }
    let factor = (n - tau) as f64 / (tau as f64 * (n - 1) as f64);
    norm_sq(&m) + factor * spread
}

fn stratified_sigma(grads: &[Vec<f64>], blocks: &[Vec<usize>]) -> (f64, Vec<f64>) {
    let n = grads.len() as f64;
    let all: Vec<usize> = (0..grads.len()).collect();
    let (m, _) = mean_and_spread(grads, &all);
    let mut total = norm_sq(&m);
    let mut per = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (_, s) = mean_and_spread(grads, b);
        let share = b.len() as f64 / n;
        total += share * share * s;
        per.push(s);
    }
    (total, per)
}

impl SamplingStats {
    pub fn enumerated(scheme: &SamplingScheme, mu_i: &[f64], grads: &[Vec<f64>]) -> Result<Self> {
        let sigma = sigma_star_as(scheme, grads)?;
        let cluster_sigma_sq = match scheme.kind() {
            SamplingKind::Stratified { blocks } => Some(stratified_sigma(grads, blocks).1),
            _ => None,
        };
        Ok(Self {
            mu_as: mu_as(scheme, mu_i)?,
            sigma_star_as_sq: sigma,
            cluster_sigma_sq,
            method: StatsMethod::Enumeration,
        })
    }

    /// Closed forms; valid for any `n`.
    pub fn closed_form(scheme: &SamplingScheme, mu_i: &[f64], grads: &[Vec<f64>]) -> Result<Self> {
        let n = scheme.n();
        if mu_i.len() != n || grads.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if mu_i.len() != n { mu_i.len() } else { grads.len() },
            });
        }
        check_mean_gradient(grads)?;
        let nf = n as f64;
        let mut cluster_sigma_sq = None;
        let (mu, sigma) = match scheme.kind() {
            SamplingKind::Full => {
                let all: Vec<usize> = (0..n).collect();
                let (m, _) = mean_and_spread(grads, &all);
                (mu_i.iter().sum::<f64>() / nf, norm_sq(&m))
            }
            SamplingKind::Nonuniform { p } => (
                (0..n)
                    .map(|i| mu_i[i] / (nf * p[i]))
                    .fold(f64::INFINITY, f64::min),
                (0..n).map(|i| norm_sq(&grads[i]) / (nf * nf * p[i])).sum(),
            ),
            SamplingKind::Nice { tau } => {
                let mut sorted = mu_i.to_vec();
                sorted.sort_by(f64::total_cmp);
                (
                    sorted[..*tau].iter().sum::<f64>() / *tau as f64,
                    nice_sigma(grads, *tau),
                )
            }
            SamplingKind::Block { blocks, q } => {
                let mut mu = f64::INFINITY;
                let mut sigma = 0.0;
                for (b, qj) in blocks.iter().zip(q) {
                    mu = mu.min(b.iter().map(|&i| mu_i[i]).sum::<f64>() / (nf * qj));
                    let mut s = vec![0.0; grads[0].len()];
                    for &i in b {
                        for (o, v) in s.iter_mut().zip(&grads[i]) {
                            *o += v;
                        }
                    }
                    sigma += norm_sq(&s) / (nf * nf * qj);
                }
                (mu, sigma)
            }
            SamplingKind::Stratified { blocks } => {
                let mu = blocks
                    .iter()
                    .map(|b| {
                        let lo = b.iter().map(|&i| mu_i[i]).fold(f64::INFINITY, f64::min);
                        b.len() as f64 / nf * lo
                    })
                    .sum();
                let (sigma, per) = stratified_sigma(grads, blocks);
                cluster_sigma_sq = Some(per);
                (mu, sigma)
            }
        };
        Ok(Self {
            mu_as: mu,
            sigma_star_as_sq: sigma,
            cluster_sigma_sq,
            method: StatsMethod::ClosedForm,
        })
    }
}

/// Per-client gradients `grad f_i(x)`.
pub fn client_gradients(p: &Problem, x: &[f64]) -> Vec<Vec<f64>> {
    (0..p.n()).into_par_iter().map(|i| p.grad(i, x)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub value: f64,
    pub neighborhood: f64,
}

/// `(1/(1+gamma mu))^{2t} dist0^2 + gamma sigma^2 / (gamma mu^2 + 2 mu)`.
pub fn convergence_bound(gamma: f64, mu: f64, sigma_sq: f64, dist0_sq: f64, t: usize) -> Bound {
    let rate = (1.0 / (1.0 + gamma * mu)).powi(2);
    let neighborhood = gamma * sigma_sq / (gamma * mu * mu + 2.0 * mu);
    Bound {
        value: rate.powi(t as i32) * dist0_sq + neighborhood,
        neighborhood,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complexity {
    pub gamma: f64,
    /// The real-valued lower bound on `T`.
    pub rounds: f64,
    /// `eps <= sigma^2 / mu^2`.
    pub in_regime: bool,
}

impl Complexity {
    pub fn rounds_ceil(&self) -> usize {
        self.rounds.ceil().max(0.0) as usize
    }
}

/// `gamma = eps mu / sigma^2` and `T >= (sigma^2/(2 eps mu^2) + 1/2) log(2 dist0^2 / eps)`.
pub fn iteration_complexity(eps: f64, mu: f64, sigma_sq: f64, dist0_sq: f64) -> Result<Complexity> {
    if !(eps > 0.0 && mu > 0.0 && dist0_sq > 0.0) {
        return Err(Error::invalid("eps, mu and dist0^2 must be positive"));
    }
    if !(sigma_sq > 0.0) {
        return Err(Error::invalid("iteration complexity needs sigma^2 > 0"));
    }
    Ok(Complexity {
        gamma: eps * mu / sigma_sq,
        rounds: (sigma_sq / (2.0 * eps * mu * mu) + 0.5) * (2.0 * dist0_sq / eps).ln(),
        in_regime: eps <= sigma_sq / (mu * mu),
    })
}

/// Bound for SPPM with prox errors `||x~ - prox||^2 <= b`, valid for
/// `0 < s < gamma^2 mu^2 + 2 gamma mu`.
#[allow(clippy::too_many_arguments)]
pub fn inexact_bound(
    gamma: f64,
    mu: f64,
    sigma_sq: f64,
    b: f64,
    s: f64,
    t: usize,
    dist0_sq: f64,
) -> Result<f64> {
    let gm = gamma * mu;
    let hi = gm * gm + 2.0 * gm;
    if !(s > 0.0 && s < hi) {
        return Err(Error::invalid(format!("s must lie in (0, {hi}), got {s}")));
    }
    if b < 0.0 {
        return Err(Error::invalid("prox error bound must be nonnegative"));
    }
    let a = (1.0 + s) / ((1.0 + gm) * (1.0 + gm));
    let tail = (1.0 + s) * (gamma * gamma * sigma_sq + b * (1.0 + gm) * (1.0 + gm) / s) / (hi - s);
    Ok(a.powi(t as i32) * dist0_sq + tail)
}

/// `A_S` and `B_S` of FedProx-SPPM-AS, by enumeration.
pub fn fedprox_constants(
    scheme: &SamplingScheme,
    mu_i: &[f64],
    grads: &[Vec<f64>],
    gamma: f64,
) -> Result<(f64, f64)> {
    let mut a = 0.0;
    let mut b = 0.0;
    for (pc, c) in scheme.enumerate()? {
        let m = c.len() as f64;
        a += pc * c.members.iter().map(|&i| 1.0 / (1.0 + gamma * mu_i[i])).sum::<f64>() / m;
        b += pc
            * c.members
                .iter()
                .map(|&i| gamma * norm_sq(&grads[i]) / ((1.0 + gamma * mu_i[i]) * mu_i[i]))
                .sum::<f64>()
            / m;
    }
    Ok((a, b))
}

pub fn fedprox_bound(a_s: f64, b_s: f64, dist0_sq: f64, t: usize) -> f64 {
    a_s.powi(t as i32) * dist0_sq + b_s / (1.0 - a_s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c1: f64,
    pub c2: f64,
}

impl CostModel {
    pub fn standard() -> Self {
        Self { c1: 1.0, c2: 0.0 }
    }

    pub fn hierarchical() -> Self {
        Self { c1: 0.1, c2: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("cost.c1", self.c1), ("cost.c2", self.c2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, "must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    pub fn round_cost(&self, k: usize) -> f64 {
        self.c1 * k as f64 + self.c2
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::standard()
    }
}

/// Sum of `c1 K_t + c2` over the trace's global rounds.
pub fn comm_cost(trace: &Trace, cost: &CostModel) -> f64 {
    let mut total = 0.0;
    for r in &trace.records {
        if let Some(k) = r.k_used {
            total += cost.round_cost(k);
        }
    }
    total
}

/// First record with `dist_sq < eps`: `(global rounds, cost so far)`.
pub fn rounds_to_target(trace: &Trace, eps: f64) -> Option<(usize, f64)> {
    trace
        .first_where(|r| r.dist_sq.is_some_and(|d| d < eps))
        .map(|r| (r.round, r.cost_cum.unwrap_or(f64::NAN)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringMode {
    BruteForce,
    Kmeans,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedClustering {
    pub blocks: Vec<Vec<usize>>,
    pub sigma_sq: f64,
}

fn equal_partitions(items: &[usize], size: usize, out: &mut Vec<Vec<Vec<usize>>>, acc: &mut Vec<Vec<usize>>) {
    if items.is_empty() {
        out.push(acc.clone());
        return;
    }
    let first = items[0];
    for rest in items[1..].iter().copied().combinations(size - 1) {
        let mut block = vec![first];
        block.extend(&rest);
        let remaining: Vec<usize> = items.iter().copied().filter(|i| !block.contains(i)).collect();
        acc.push(block);
        equal_partitions(&remaining, size, out, acc);
        acc.pop();
    }
}

/// The clustering into `b` blocks minimizing the stratified variance.
/// `BruteForce` scans all partitions into equal blocks (first minimizer
/// wins); `Kmeans` clusters the gradient vectors.
pub fn optimal_stratified_clustering(
    grads: &[Vec<f64>],
    b: usize,
    mode: ClusteringMode,
    seed: u64,
) -> Result<StratifiedClustering> {
    let n = grads.len();
    if b == 0 || b > n {
        return Err(Error::invalid(format!("need 1 <= b <= {n}, got {b}")));
    }
    match mode {
        ClusteringMode::BruteForce => {
            if n > BRUTE_FORCE_LIMIT {
                return Err(Error::EnumerationTooLarge(format!(
                    "brute-force clustering is limited to n <= {BRUTE_FORCE_LIMIT}, got {n}"
                )));
            }
            if n % b != 0 {
                return Err(Error::invalid(format!("{n} clients do not split into {b} equal blocks")));
            }
            let mut all = Vec::new();
            let items: Vec<usize> = (0..n).collect();
            equal_partitions(&items, n / b, &mut all, &mut Vec::new());
            let mut best: Option<StratifiedClustering> = None;
            for blocks in all {
                let (sigma_sq, _) = stratified_sigma(grads, &blocks);
                if best.as_ref().is_none_or(|c| sigma_sq < c.sigma_sq) {
                    best = Some(StratifiedClustering { blocks, sigma_sq });
                }
            }
            Ok(best.expect("at least one partition"))
        }
        ClusteringMode::Kmeans => {
            let mut r = rng::server_stream(seed, 0);
            let clustering = kmeans(grads, b, &mut r)?;
            let blocks: Vec<Vec<usize>> = clustering
                .members()
                .into_iter()
                .filter(|m| !m.is_empty())
                .collect();
            let (sigma_sq, _) = stratified_sigma(grads, &blocks);
            Ok(StratifiedClustering { blocks, sigma_sq })
        }
    }
}

/// Options shared by the SPPM-family runners.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub rounds: usize,
    pub cost: CostModel,
    pub seed: u64,
    /// Stop once `||x_t - x*||^2 < target`.
    pub target: Option<f64>,
    pub x0: Option<Vec<f64>>,
}

impl RunOptions {
    pub fn new(rounds: usize, seed: u64) -> Self {
        Self {
            rounds,
            cost: CostModel::standard(),
            seed,
            target: None,
            x0: None,
        }
    }

    fn validate(&self, p: &Problem) -> Result<()> {
        self.cost.validate()?;
        if let Some(x0) = &self.x0 {
            if x0.len() != p.dim() {
                return Err(Error::DimensionMismatch {
                    expected: p.dim(),
                    got: x0.len(),
                });
            }
        }
        if let Some(t) = self.target {
            if !(t > 0.0) {
                return Err(Error::config("target", "must be positive"));
            }
        }
        Ok(())
    }
}

fn check_setup(p: &Problem, scheme: &SamplingScheme, x_star: &[f64], opts: &RunOptions) -> Result<()> {
    if !p.kind().is_convex() {
        return Err(Error::invalid("SPPM-type methods need a convex problem"));
    }
    if scheme.n() != p.n() {
        return Err(Error::DimensionMismatch {
            expected: p.n(),
            got: scheme.n(),
        });
    }
    if x_star.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: x_star.len(),
        });
    }
    opts.validate(p)
}

/// Runs `step(t, x) -> K_t` for the configured rounds and records the trace.
fn drive(
    p: &Problem,
    x_star: &[f64],
    meta: TraceMeta,
    opts: &RunOptions,
    mut step: impl FnMut(u64, &mut Vec<f64>) -> Result<usize>,
) -> Result<Trace> {
    let f_star = p.full_loss(x_star);
    let mut x = opts.x0.clone().unwrap_or_else(|| vec![0.0; p.dim()]);
    let mut trace = Trace::new(meta);
    let mut cost_cum = 0.0;
    let record = |round: usize, x: &[f64], k: Option<usize>, cost_cum: f64| Record {
        round,
        f_gap: Some(p.full_loss(x) - f_star),
        dist_sq: Some(dist_sq(x, x_star)),
        k_used: k,
        cost_cum: Some(cost_cum),
        comm_rounds: Some(round as u64),
        ..Record::default()
    };
    trace.push(record(0, &x, None, cost_cum));
    let reached = |r: &Record| match (opts.target, r.dist_sq) {
        (Some(eps), Some(d)) => d < eps,
        _ => false,
    };
    if reached(trace.last().expect("pushed")) {
        return Ok(trace);
    }
    for t in 0..opts.rounds {
        let k = step(t as u64, &mut x)?;
        cost_cum += opts.cost.round_cost(k);
        let r = record(t + 1, &x, Some(k), cost_cum);
        let d = r.dist_sq.expect("set");
        if !d.is_finite() || d > DIVERGENCE {
            return Err(Error::Diverged {
                round: t + 1,
                value: d,
            });
        }
        let stop = reached(&r);
        trace.push(r);
        if stop {
            break;
        }
    }
    Ok(trace)
}

fn base_meta(algorithm: &str, seed: u64, gamma: f64, opts: &RunOptions) -> TraceMeta {
    let mut meta = TraceMeta::new(algorithm, seed);
    meta.scalars.insert("gamma".into(), gamma);
    meta.scalars.insert("c1".into(), opts.cost.c1);
    meta.scalars.insert("c2".into(), opts.cost.c2);
    meta
}

#[derive(Clone, Debug, PartialEq)]
pub struct SppmConfig {
    pub scheme: SamplingScheme,
    pub gamma: f64,
    pub solver: ProxSolverSpec,
    pub options: RunOptions,
    /// Also compute the exact prox each round and keep the largest squared
    /// error in the `max_prox_err_sq` meta scalar.
    pub instrument: bool,
}

/// SPPM-AS: `x <- prox_{gamma f_{S_t}}(x)` with `S_t` drawn from the server stream.
pub fn run_sppm_as(p: &Problem, cfg: &SppmConfig, x_star: &[f64]) -> Result<Trace> {
    check_setup(p, &cfg.scheme, x_star, &cfg.options)?;
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        return Err(Error::config("gamma", "must be positive"));
    }
    cfg.solver.validate(p)?;
    let seed = cfg.options.seed;
    let mut max_err: f64 = 0.0;
    let mut meta = base_meta("sppm_as", seed, cfg.gamma, &cfg.options);
    let mut trace = drive(p, x_star, meta.clone(), &cfg.options, |t, x| {
        let cohort = cfg.scheme.sample(&mut rng::server_stream(seed, t));
        let obj = CohortObjective::new(p, &cohort)?;
        let (next, k) = prox_solve(&obj, cfg.gamma, x, &cfg.solver)?;
        if cfg.instrument {
            let exact = exact_prox(&obj, cfg.gamma, x)?;
            max_err = max_err.max(dist_sq(&next, &exact));
        }
        *x = next;
        Ok(k)
    })?;
    if cfg.instrument {
        meta.scalars.insert("max_prox_err_sq".into(), max_err);
        trace.meta = meta;
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalGdConfig {
    pub scheme: SamplingScheme,
    pub stepsize: f64,
    pub local_steps: usize,
    pub options: RunOptions,
}

/// LocalGD with partial participation: every cohort member runs `local_steps`
/// gradient steps from the broadcast point, the server takes the weighted
/// average (weights `v_i` normalized). Costs `c1 + c2` per round.
pub fn run_localgd(p: &Problem, cfg: &LocalGdConfig, x_star: &[f64]) -> Result<Trace> {
    let name = if cfg.local_steps == 1 { "mbgd" } else { "localgd" };
    local_gd(p, cfg, x_star, name)
}

/// MiniBatch GD: LocalGD with one local step.
pub fn run_mbgd(p: &Problem, scheme: &SamplingScheme, stepsize: f64, options: &RunOptions, x_star: &[f64]) -> Result<Trace> {
    let cfg = LocalGdConfig {
        scheme: scheme.clone(),
        stepsize,
        local_steps: 1,
        options: options.clone(),
    };
    local_gd(p, &cfg, x_star, "mbgd")
}

fn local_gd(p: &Problem, cfg: &LocalGdConfig, x_star: &[f64], name: &str) -> Result<Trace> {
    check_setup(p, &cfg.scheme, x_star, &cfg.options)?;
    if cfg.local_steps == 0 {
        return Err(Error::config("local_steps", "must be at least 1"));
    }
    if !(cfg.stepsize > 0.0 && cfg.stepsize.is_finite()) {
        return Err(Error::config("stepsize", "must be positive"));
    }
    let seed = cfg.options.seed;
    let mut meta = base_meta(name, seed, cfg.stepsize, &cfg.options);
    meta.scalars.insert("local_steps".into(), cfg.local_steps as f64);
    drive(p, x_star, meta, &cfg.options, |t, x| {
        let cohort = cfg.scheme.sample(&mut rng::server_stream(seed, t));
        let locals: Vec<Vec<f64>> = cohort
            .members
            .par_iter()
            .map(|&i| {
                let mut y = x.clone();
                let mut g = vec![0.0; y.len()];
                for _ in 0..cfg.local_steps {
                    p.grad_into(i, &y, &mut g);
                    crate::linalg::axpy(-cfg.stepsize, &g, &mut y);
                }
                y
            })
            .collect();
        let total: f64 = cohort.weights.iter().sum();
        x.iter_mut().for_each(|v| *v = 0.0);
        for (y, w) in locals.iter().zip(&cohort.weights) {
            crate::linalg::axpy(w / total, y, x);
        }
        Ok(1)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedProxConfig {
    pub scheme: SamplingScheme,
    pub gamma: f64,
    /// Averaging repetitions per global round.
    pub k: usize,
    /// Solver for the individual `prox_{gamma f_i}`.
    pub solver: ProxSolverSpec,
    pub options: RunOptions,
}

fn averaged_prox(
    p: &Problem,
    members: &[usize],
    step: f64,
    anchor: impl Fn(&[f64]) -> Vec<f64> + Sync,
    y: &[f64],
    solver: &ProxSolverSpec,
) -> Result<Vec<f64>> {
    let outs: Vec<Vec<f64>> = members
        .par_iter()
        .map(|&i| {
            let c = Cohort::singleton(i);
            let obj = CohortObjective::new(p, &c)?;
            prox_solve(&obj, step, &anchor(y), solver).map(|(z, _)| z)
        })
        .collect::<Result<_>>()?;
    Ok(crate::linalg::mean(&outs))
}

/// FedProx-SPPM-AS: `K` repetitions of `x <- mean_{i in S} prox_{gamma f_i}(x)`.
pub fn run_fedprox_sppm(p: &Problem, cfg: &FedProxConfig, x_star: &[f64]) -> Result<Trace> {
    check_setup(p, &cfg.scheme, x_star, &cfg.options)?;
    if cfg.k == 0 {
        return Err(Error::config("K", "must be at least 1"));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        return Err(Error::config("gamma", "must be positive"));
    }
    cfg.solver.validate(p)?;
    let seed = cfg.options.seed;
    let meta = base_meta("fedprox_sppm", seed, cfg.gamma, &cfg.options);
    drive(p, x_star, meta, &cfg.options, |t, x| {
        let cohort = cfg.scheme.sample(&mut rng::server_stream(seed, t));
        for _ in 0..cfg.k {
            *x = averaged_prox(p, &cohort.members, cfg.gamma, |y| y.to_vec(), x, &cfg.solver)?;
        }
        Ok(cfg.k)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedAvgConfig {
    pub scheme: SamplingScheme,
    pub gamma: f64,
    pub alpha_loc: f64,
    pub k: usize,
    pub solver: ProxSolverSpec,
    pub options: RunOptions,
}

/// `prox_{alpha f~_{i,t}}(y)` with `f~_{i,t} = f_i + ||. - x_t||^2/(2 gamma)`,
/// written as `prox_{beta f_i}(beta (x_t/gamma + y/alpha))`,
/// `beta = gamma alpha / (gamma + alpha)`.
pub fn fedavg_local_prox(
    p: &Problem,
    client: usize,
    gamma: f64,
    alpha: f64,
    x_t: &[f64],
    y: &[f64],
    solver: &ProxSolverSpec,
) -> Result<Vec<f64>> {
    let beta = fedavg_beta(gamma, alpha);
    let anchor: Vec<f64> = x_t
        .iter()
        .zip(y)
        .map(|(a, b)| beta * (a / gamma + b / alpha))
        .collect();
    let c = Cohort::singleton(client);
    let obj = CohortObjective::new(p, &c)?;
    prox_solve(&obj, beta, &anchor, solver).map(|(z, _)| z)
}

pub fn fedavg_beta(gamma: f64, alpha: f64) -> f64 {
    if alpha.is_infinite() {
        gamma
    } else {
        gamma * alpha / (gamma + alpha)
    }
}

/// FedAvg-SPPM-AS: `K` inner rounds of `y <- mean_{i in S} prox_{alpha f~_{i,t}}(y)`
/// starting from `y = x_t`.
pub fn run_fedavg_sppm(p: &Problem, cfg: &FedAvgConfig, x_star: &[f64]) -> Result<Trace> {
    check_setup(p, &cfg.scheme, x_star, &cfg.options)?;
    if cfg.k == 0 {
        return Err(Error::config("K", "must be at least 1"));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        return Err(Error::config("gamma", "must be positive"));
    }
    if !(cfg.alpha_loc > 0.0) {
        return Err(Error::config("alpha_loc", "must be positive"));
    }
    cfg.solver.validate(p)?;
    let seed = cfg.options.seed;
    let beta = fedavg_beta(cfg.gamma, cfg.alpha_loc);
    let mut meta = base_meta("fedavg_sppm", seed, cfg.gamma, &cfg.options);
    meta.scalars.insert("alpha_loc".into(), cfg.alpha_loc);
    drive(p, x_star, meta, &cfg.options, |t, x| {
        let cohort = cfg.scheme.sample(&mut rng::server_stream(seed, t));
        let x_t = x.clone();
        let anchor = |y: &[f64]| -> Vec<f64> {
            x_t.iter()
                .zip(y)
                .map(|(a, b)| {
                    if cfg.alpha_loc.is_infinite() {
                        *a
                    } else {
                        beta * (a / cfg.gamma + b / cfg.alpha_loc)
                    }
                })
                .collect()
        };
        for _ in 0..cfg.k {
            *x = averaged_prox(p, &cohort.members, beta, anchor, x, &cfg.solver)?;
        }
        Ok(cfg.k)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{random_quadratic, synth_quadratic, unit_cross, unit_cross_problem};
    use rand::SeedableRng;

    fn grads_at_opt(p: &Problem) -> (Vec<f64>, Vec<Vec<f64>>) {
        let x = crate::problems::reference_solution(p, &crate::problems::Regularizer::Zero, 1e-13)
            .unwrap();
        let g = client_gradients(p, &x);
        (x, g)
    }

    #[test]
    fn nice_mu_examples() {
        let mu = [1.0, 2.0, 3.0, 4.0];
        let v = |tau| mu_as(&SamplingScheme::nice(tau, 4).unwrap(), &mu).unwrap();
        assert_eq!(v(1), 1.0);
        assert_eq!(v(2), 1.5);
        assert_eq!(v(4), 2.5);
        assert_eq!(mu_as(&SamplingScheme::full(4), &mu).unwrap(), 2.5);
    }

    #[test]
    fn counterexample_values() {
        let g = unit_cross();
        let ss = SamplingScheme::stratified(vec![vec![0, 2], vec![1, 3]], 4).unwrap();
        assert!((sigma_star_as(&ss, &g).unwrap() - 0.5).abs() < 1e-15);
        let nice = SamplingScheme::nice(2, 4).unwrap();
        assert!((sigma_star_as(&nice, &g).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let best = optimal_stratified_clustering(&g, 2, ClusteringMode::BruteForce, 0).unwrap();
        assert_eq!(best.blocks, vec![vec![0, 1], vec![2, 3]]);
        assert!((best.sigma_sq - 0.25).abs() < 1e-15);
        let (_, gp) = grads_at_opt(&unit_cross_problem());
        for (a, b) in gp.iter().zip(&g) {
            assert!(dist_sq(a, b) < 1e-20);
        }
    }

    #[test]
    fn extreme_schemes_give_full_cohort() {
        let mut r = rng::server_stream(1, 0);
        let full: Vec<usize> = (0..5).collect();
        let strat = SamplingScheme::stratified((0..5).map(|i| vec![i]).collect(), 5).unwrap();
        let block = SamplingScheme::block(vec![full.clone()], 5).unwrap();
        let nice = SamplingScheme::nice(5, 5).unwrap();
        for s in [strat, block, nice] {
            let c = s.sample(&mut r);
            assert_eq!(c.members, full);
            for w in c.weights {
                assert!((w - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn enumeration_and_closed_forms_agree() {
        let mu: Vec<f64> = (0..6).map(|i| 0.5 + i as f64 * 0.3).collect();
        let p = random_quadratic(&mu, 3, 2.0, 9).unwrap();
        let (_, g) = grads_at_opt(&p);
        let mu_i = p.constants().mu_i.clone();
        let blocks = vec![vec![0, 3], vec![1, 4, 5], vec![2]];
        let schemes = vec![
            SamplingScheme::full(6),
            SamplingScheme::new(
                SamplingKind::Nonuniform {
                    p: vec![0.1, 0.2, 0.3, 0.1, 0.15, 0.15],
                },
                6,
            )
            .unwrap(),
            SamplingScheme::nice(1, 6).unwrap(),
            SamplingScheme::nice(4, 6).unwrap(),
            SamplingScheme::new(
                SamplingKind::Block {
                    blocks: blocks.clone(),
                    q: vec![0.5, 0.3, 0.2],
                },
                6,
            )
            .unwrap(),
            SamplingScheme::stratified(blocks, 6).unwrap(),
        ];
        for s in &schemes {
            let e = SamplingStats::enumerated(s, &mu_i, &g).unwrap();
            let c = SamplingStats::closed_form(s, &mu_i, &g).unwrap();
            assert!((e.mu_as - c.mu_as).abs() < 1e-12, "{}", s.label());
            assert!(
                (e.sigma_star_as_sq - c.sigma_star_as_sq).abs() < 1e-12,
                "{}: {} vs {}",
                s.label(),
                e.sigma_star_as_sq,
                c.sigma_star_as_sq
            );
        }
    }

    #[test]
    fn sampling_is_unbiased_and_inclusion_matches_weights() {
        let mu: Vec<f64> = vec![1.0; 5];
        let p = random_quadratic(&mu, 2, 1.0, 3).unwrap();
        let x = vec![0.3, -0.7];
        let scheme = SamplingScheme::stratified(vec![vec![0, 4], vec![1, 2, 3]], 5).unwrap();
        let pi = scheme.inclusion_probabilities();
        let mut total = 0.0;
        let mut prob = 0.0;
        for (pc, c) in scheme.enumerate().unwrap() {
            prob += pc;
            for (&i, w) in c.members.iter().zip(&c.weights) {
                assert!((w - 1.0 / (5.0 * pi[i])).abs() < 1e-15);
            }
            total += pc * CohortObjective::new(&p, &c).unwrap().value(&x);
        }
        assert!((prob - 1.0).abs() < 1e-12);
        assert!((total - p.full_loss(&x)).abs() < 1e-12);
    }

    #[test]
    fn mean_gradient_check_rejects_non_optimal_points() {
        let g = vec![vec![1.0], vec![1.0]];
        assert!(sigma_star_as(&SamplingScheme::full(2), &g).is_err());
    }

    #[test]
    fn scheme_validation() {
        assert!(SamplingScheme::nice(0, 3).is_err());
        assert!(SamplingScheme::stratified(vec![vec![0], vec![0, 1, 2]], 3).is_err());
        assert!(SamplingScheme::stratified(vec![vec![0], vec![2]], 3).is_err());
        assert!(SamplingScheme::new(
            SamplingKind::Block {
                blocks: vec![vec![0], vec![1]],
                q: vec![0.5, 0.6]
            },
            2
        )
        .is_err());
        let big = SamplingScheme::nice(2, 21).unwrap();
        assert!(matches!(big.enumerate(), Err(Error::EnumerationTooLarge(_))));
    }

    #[test]
    fn bound_examples() {
        let b = convergence_bound(1.0 / 2.0, 2.0, 3.0, 5.0, 0);
        assert!((b.neighborhood - 3.0 / (3.0 * 4.0)).abs() < 1e-15);
        assert!((b.value - 5.0 - b.neighborhood).abs() < 1e-15);
        let b = convergence_bound(7.0, 0.5, 0.0, 5.0, 400);
        assert!(b.value < 1e-100);
        let c = iteration_complexity(4.0, 1.0, 4.0, 3.0).unwrap();
        assert!((c.rounds - (1.5f64).ln()).abs() < 1e-15);
        assert!(c.in_regime);
        assert!(iteration_complexity(1.0, 1.0, 0.0, 1.0).is_err());
        let c1 = iteration_complexity(1e-3, 1.0, 1.0, 1.0).unwrap();
        let c2 = iteration_complexity(1e-3, 1.0, 2.0, 1.0).unwrap();
        let lead = |c: Complexity| c.rounds / (2.0e3f64).ln() - 0.5;
        assert!((lead(c2) / lead(c1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn inexact_bound_limits() {
        let (g, m, s2, d0) = (0.5, 2.0, 0.3, 4.0);
        let exact = convergence_bound(g, m, s2, d0, 7).value;
        let near = inexact_bound(g, m, s2, 0.0, 1e-10, 7, d0).unwrap();
        assert!((near - exact).abs() < 1e-8);
        let b1 = inexact_bound(g, m, s2, 1e-3, 0.5, 7, d0).unwrap();
        let b2 = inexact_bound(g, m, s2, 2e-3, 0.5, 7, d0).unwrap();
        assert!(b2 > b1);
        assert!(inexact_bound(g, m, s2, 0.0, 3.0, 7, d0).is_err());
    }

    #[test]
    fn quadratic_prox_closed_form() {
        let c = vec![1.0, -2.0];
        let p = synth_quadratic(&[1.0], &[c.clone()]).unwrap();
        let cohort = Cohort::singleton(0);
        let obj = CohortObjective::new(&p, &cohort).unwrap();
        let a = vec![3.0, 0.5];
        let gamma = 0.7;
        let (x, k) = prox_solve(&obj, gamma, &a, &ProxSolverSpec::exact()).unwrap();
        assert_eq!(k, 1);
        for i in 0..2 {
            assert!((x[i] - (a[i] + gamma * c[i]) / (1.0 + gamma)).abs() < 1e-15);
        }
        let (x, _) = prox_solve(&obj, 1e12, &a, &ProxSolverSpec::exact()).unwrap();
        assert!(dist_sq(&x, &c) < 1e-20);
    }

    #[test]
    fn iterative_solvers_match_closed_form() {
        let mu: Vec<f64> = vec![0.5, 1.0, 4.0];
        let p = random_quadratic(&mu, 4, 1.0, 5).unwrap();
        let cohort = SamplingScheme::full(3).sample(&mut rng::server_stream(0, 0));
        let obj = CohortObjective::new(&p, &cohort).unwrap();
        let a = vec![1.0, 2.0, -1.0, 0.0];
        let (exact, _) = prox_solve(&obj, 2.0, &a, &ProxSolverSpec::exact()).unwrap();
        for kind in [
            ProxSolverKind::GradientDescent,
            ProxSolverKind::ConjugateGradient,
            ProxSolverKind::QuasiNewton,
        ] {
            let spec = ProxSolverSpec::iterative(kind, 200, 1e-10);
            let (x, k) = prox_solve(&obj, 2.0, &a, &spec).unwrap();
            assert!(k <= 200);
            for i in 0..4 {
                assert!((x[i] - exact[i]).abs() < 1e-8, "{kind:?}");
            }
        }
        let spec = ProxSolverSpec::iterative(ProxSolverKind::GradientDescent, 3, 0.0);
        assert_eq!(prox_solve(&obj, 2.0, &a, &spec).unwrap().1, 3);
    }

    #[test]
    fn closed_form_rejects_logistic() {
        let p = crate::datasets::SynthClassification {
            clients: 2,
            per_client: 5,
            dim: 3,
            heterogeneity: 1.0,
            groups: 0,
            feature_condition: 1.0,
            sample_jitter: None,
            seed: 1,
        }
        .problem(ProblemKind::L2Logistic, 0.1)
        .unwrap();
        assert!(ProxSolverSpec::exact().validate(&p).is_err());
    }

    #[test]
    fn full_sampling_ppm_decreases_strictly() {
        let mu: Vec<f64> = vec![0.5, 1.0, 2.0];
        let p = random_quadratic(&mu, 3, 1.0, 2).unwrap();
        let (x_star, _) = grads_at_opt(&p);
        let cfg = SppmConfig {
            scheme: SamplingScheme::full(3),
            gamma: 0.5,
            solver: ProxSolverSpec::exact(),
            options: RunOptions {
                x0: Some(vec![5.0, -5.0, 5.0]),
                ..RunOptions::new(20, 0)
            },
            instrument: false,
        };
        let t = run_sppm_as(&p, &cfg, &x_star).unwrap();
        for w in t.records.windows(2) {
            assert!(w[1].dist_sq.unwrap() < w[0].dist_sq.unwrap());
        }
        assert_eq!(comm_cost(&t, &cfg.options.cost), t.last().unwrap().cost_cum.unwrap());
    }

    #[test]
    fn interpolation_one_step() {
        let centers = vec![vec![1.0, 2.0]; 4];
        let p = synth_quadratic(&[1.0, 2.0, 3.0, 4.0], &centers).unwrap();
        let cfg = SppmConfig {
            scheme: SamplingScheme::nice(1, 4).unwrap(),
            gamma: 1e3,
            solver: ProxSolverSpec::exact(),
            options: RunOptions::new(1, 3),
            instrument: false,
        };
        let t = run_sppm_as(&p, &cfg, &centers[0]).unwrap();
        let d0 = t.records[0].dist_sq.unwrap();
        assert!(t.records[1].dist_sq.unwrap() <= 1e-6 * d0);
    }

    #[test]
    fn comm_cost_examples() {
        let mut t = Trace::new(TraceMeta::new("x", 0));
        t.push(Record::default());
        for r in 1..=4 {
            t.push(Record {
                round: r,
                k_used: Some(3),
                ..Record::default()
            });
        }
        assert_eq!(comm_cost(&t, &CostModel::standard()), 12.0);
        assert_eq!(comm_cost(&t, &CostModel { c1: 0.0, c2: 1.0 }), 4.0);
    }

    #[test]
    fn localgd_one_step_full_is_gd() {
        let mu: Vec<f64> = vec![0.5, 1.0, 2.0];
        let p = random_quadratic(&mu, 2, 1.0, 4).unwrap();
        let (x_star, _) = grads_at_opt(&p);
        let opts = RunOptions::new(5, 0);
        let t = run_mbgd(&p, &SamplingScheme::full(3), 0.3, &opts, &x_star).unwrap();
        let mut x = vec![0.0; 2];
        for _ in 0..5 {
            let g = p.full_grad(&x);
            crate::linalg::axpy(-0.3, &g, &mut x);
        }
        assert!((t.last().unwrap().dist_sq.unwrap() - dist_sq(&x, &x_star)).abs() < 1e-14);
        let bad = LocalGdConfig {
            scheme: SamplingScheme::full(3),
            stepsize: 0.3,
            local_steps: 0,
            options: opts,
        };
        assert!(matches!(run_localgd(&p, &bad, &x_star), Err(Error::Config { .. })));
    }

    #[test]
    fn fedprox_singletons_match_sppm() {
        let mu: Vec<f64> = vec![0.5, 1.0, 2.0, 3.0];
        let p = random_quadratic(&mu, 3, 1.0, 6).unwrap();
        let (x_star, _) = grads_at_opt(&p);
        let scheme = SamplingScheme::nice(1, 4).unwrap();
        let opts = RunOptions::new(30, 11);
        let a = run_sppm_as(
            &p,
            &SppmConfig {
                scheme: scheme.clone(),
                gamma: 0.8,
                solver: ProxSolverSpec::exact(),
                options: opts.clone(),
                instrument: false,
            },
            &x_star,
        )
        .unwrap();
        let b = run_fedprox_sppm(
            &p,
            &FedProxConfig {
                scheme,
                gamma: 0.8,
                k: 1,
                solver: ProxSolverSpec::exact(),
                options: opts,
            },
            &x_star,
        )
        .unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn fedprox_uniform_mu_constant() {
        let mu = vec![2.0; 4];
        let g = vec![vec![0.0]; 4];
        let (a, _) =
            fedprox_constants(&SamplingScheme::nice(2, 4).unwrap(), &mu, &g, 0.5).unwrap();
        assert!((a - 1.0 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fedavg_local_prox_matches_direct_minimization() {
        let mu = vec![0.5, 2.0];
        let p = random_quadratic(&mu, 3, 1.0, 8).unwrap();
        let (gamma, alpha) = (0.7, 0.3);
        let x_t = vec![1.0, -1.0, 0.5];
        let y = vec![0.2, 0.4, -0.3];
        let z = fedavg_local_prox(&p, 1, gamma, alpha, &x_t, &y, &ProxSolverSpec::exact()).unwrap();
        struct Direct<'a> {
            p: &'a Problem,
            gamma: f64,
            alpha: f64,
            x_t: &'a [f64],
            y: &'a [f64],
        }
        impl SmoothObjective for Direct<'_> {
            fn dim(&self) -> usize {
                3
            }
            fn value(&self, z: &[f64]) -> f64 {
                self.p.loss(1, z)
                    + dist_sq(z, self.x_t) / (2.0 * self.gamma)
                    + dist_sq(z, self.y) / (2.0 * self.alpha)
            }
            fn gradient_into(&self, z: &[f64], out: &mut [f64]) {
                self.p.grad_into(1, z, out);
                for k in 0..3 {
                    out[k] += (z[k] - self.x_t[k]) / self.gamma + (z[k] - self.y[k]) / self.alpha;
                }
            }
            fn lipschitz_bound(&self) -> f64 {
                self.p.constants().l_i[1] + 1.0 / self.gamma + 1.0 / self.alpha
            }
        }
        let d = Direct {
            p: &p,
            gamma,
            alpha,
            x_t: &x_t,
            y: &y,
        };
        let direct = lbfgs(&d, &y, 500, 1e-13).x;
        assert!(dist_sq(&z, &direct) < 1e-20);
    }

    #[test]
    fn fedavg_fixed_point_with_interpolation() {
        let centers = vec![vec![1.0, -1.0]; 4];
        let p = synth_quadratic(&[1.0, 2.0, 3.0, 4.0], &centers).unwrap();
        let cfg = FedAvgConfig {
            scheme: SamplingScheme::nice(2, 4).unwrap(),
            gamma: 0.5,
            alpha_loc: 0.2,
            k: 3,
            solver: ProxSolverSpec::exact(),
            options: RunOptions {
                x0: Some(centers[0].clone()),
                ..RunOptions::new(5, 1)
            },
        };
        let t = run_fedavg_sppm(&p, &cfg, &centers[0]).unwrap();
        for r in &t.records {
            assert!(r.dist_sq.unwrap() < 1e-28);
        }
    }

    #[test]
    fn stratified_clustering_extremes() {
        let g = unit_cross();
        let singles = optimal_stratified_clustering(&g, 4, ClusteringMode::BruteForce, 0).unwrap();
        assert_eq!(singles.sigma_sq, 0.0);
        let homog = vec![vec![1.0], vec![1.0], vec![-1.0], vec![-1.0]];
        let best = optimal_stratified_clustering(&homog, 2, ClusteringMode::BruteForce, 0).unwrap();
        assert_eq!(best.sigma_sq, 0.0);
        let km = optimal_stratified_clustering(&homog, 2, ClusteringMode::Kmeans, 0).unwrap();
        assert_eq!(km.blocks.len(), 2);
        assert!(optimal_stratified_clustering(&vec![vec![0.0]; 11], 1, ClusteringMode::BruteForce, 0).is_err());
    }

    #[test]
    fn nice_sampling_draws_distinct_members() {
        let s = SamplingScheme::nice(3, 7).unwrap();
        let mut r = StreamRng::seed_from_u64(0);
        for _ in 0..50 {
            let c = s.sample(&mut r);
            assert_eq!(c.len(), 3);
            assert!(c.members.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
