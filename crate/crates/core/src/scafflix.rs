//! FLIX personalization and the Scafflix / i-Scaffnew local-training methods.
//!
//! The FLIX objective is `f~(x) = (1/n) sum_i f_i(alpha_i x + (1 - alpha_i) x_i*)`
//! where `x_i*` minimizes `f_i`. Scafflix runs local steps with individual
//! stepsizes and communicates when a shared coin with bias `p` comes up heads.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm_sq};
use crate::problems::{
    gradient_descent, local_minimizer, reference_solution, Problem, Regularizer, SmoothObjective,
    REFERENCE_TOL,
};
use crate::rng;
use crate::trace::{Record, Trace, TraceMeta};

const DIVERGENCE: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct FlixInstance {
    base: Problem,
    alpha: Vec<f64>,
    x_loc: Vec<Option<Vec<f64>>>,
    eps_loc: f64,
    local_iterations: usize,
}

impl FlixInstance {
    /// Solves the local problems of every client with `alpha_i < 1`.
    pub fn build(base: &Problem, alpha: &[f64], eps_loc: f64) -> Result<Self> {
        if alpha.len() != base.n() {
            return Err(Error::DimensionMismatch {
                expected: base.n(),
                got: alpha.len(),
            });
        }
        if let Some(a) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid(format!("alpha_i must lie in [0, 1], got {a}")));
        }
        if !base.kind().is_convex() {
            return Err(Error::invalid("FLIX needs a convex base problem"));
        }
        let solved: Vec<Option<(Vec<f64>, usize)>> = (0..base.n())
            .into_par_iter()
            .map(|i| {
                if alpha[i] == 1.0 {
                    Ok(None)
                } else {
                    local_minimizer(base, i, eps_loc).map(|s| Some((s.x, s.iterations)))
                }
            })
            .collect::<Result<_>>()?;
        let local_iterations = solved.iter().flatten().map(|(_, it)| it).sum();
        Ok(Self {
            base: base.clone(),
            alpha: alpha.to_vec(),
            x_loc: solved.into_iter().map(|s| s.map(|(x, _)| x)).collect(),
            eps_loc,
            local_iterations,
        })
    }

    pub fn base(&self) -> &Problem {
        &self.base
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn x_loc(&self, i: usize) -> Option<&[f64]> {
        self.x_loc[i].as_deref()
    }

    pub fn eps_loc(&self) -> f64 {
        self.eps_loc
    }

    /// Total solver iterations spent on local minimizers (0 when `alpha = 1`).
    pub fn local_iterations(&self) -> usize {
        self.local_iterations
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// `alpha_i x + (1 - alpha_i) x_i*`, or `x` itself when `alpha_i = 1`.
    pub fn personalize(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let a = self.alpha[i];
        match &self.x_loc[i] {
            None => x.to_vec(),
            Some(xl) => x.iter().zip(xl).map(|(v, l)| a * v + (1.0 - a) * l).collect(),
        }
    }

    pub fn flix_eval(&self, x: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mixtures: Vec<Vec<f64>> = (0..self.n()).map(|i| self.personalize(i, x)).collect();
        let value = self.value_at(&mixtures);
        Ok((value, mixtures))
    }

    fn value_at(&self, mixtures: &[Vec<f64>]) -> f64 {
        mixtures
            .iter()
            .enumerate()
            .map(|(i, m)| self.base.loss(i, m))
            .sum::<f64>()
            / self.n() as f64
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mixtures: Vec<Vec<f64>> = (0..self.n()).map(|i| self.personalize(i, x)).collect();
        self.value_at(&mixtures)
    }

    /// `(1/n) sum_i alpha_i grad f_i(x~_i)`.
    pub fn flix_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let mut buf = vec![0.0; self.dim()];
        for i in 0..self.n() {
            self.base.grad_into(i, &self.personalize(i, x), &mut buf);
            for (o, g) in out.iter_mut().zip(&buf) {
                *o += self.alpha[i] * g;
            }
        }
        let n = self.n() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Minimizer of the FLIX objective and the personalized optimal models.
    pub fn reference(&self) -> Result<FlixReference> {
        let x = if self.alpha.iter().all(|&a| a == 1.0) {
            reference_solution(&self.base, &Regularizer::Zero, REFERENCE_TOL)?
        } else if let Some(cs) = self.base.quadratic_clients() {
            (0..self.dim())
                .map(|k| {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for (i, c) in cs.iter().enumerate() {
                        let w = self.alpha[i] * self.alpha[i] * c.curvature[k];
                        num += w * c.center[k];
                        den += w;
                    }
                    if den > 0.0 {
                        num / den
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            gradient_descent(self, &vec![0.0; self.dim()], REFERENCE_TOL, false, 2_000_000)?.x
        };
        let personalized: Vec<Vec<f64>> = (0..self.n()).map(|i| self.personalize(i, &x)).collect();
        let grads = personalized
            .iter()
            .enumerate()
            .map(|(i, m)| self.base.grad(i, m))
            .collect();
        let value = self.value_at(&personalized);
        Ok(FlixReference {
            x,
            value,
            personalized,
            grads,
        })
    }

    fn alpha_summary(&self) -> String {
        let min = self.alpha.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = self.alpha.iter().sum::<f64>() / self.n() as f64;
        format!("{min};{mean};{max}")
    }
}

impl SmoothObjective for FlixInstance {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        FlixInstance::value(self, x)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.flix_grad(x));
    }
    fn lipschitz_bound(&self) -> f64 {
        let c = self.base.constants();
        let s: f64 = self
            .alpha
            .iter()
            .zip(&c.l_i)
            .map(|(a, l)| a * a * l)
            .sum();
        (s / self.n() as f64).max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlixReference {
    pub x: Vec<f64>,
    pub value: f64,
    /// `x~_i* = alpha_i x* + (1 - alpha_i) x_i*`
    pub personalized: Vec<Vec<f64>>,
    /// `grad f_i(x~_i*)`
    pub grads: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    #[default]
    Exact,
    /// One uniformly sampled local datum per step.
    SingleSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScafflixConfig {
    pub gamma_i: Vec<f64>,
    pub p: f64,
    pub rounds: usize,
    #[serde(default)]
    pub grad_mode: GradMode,
    pub seed: u64,
}

impl ScafflixConfig {
    /// `gamma_i = 1 / A_i` with `A_i = L_i` (exact) or `2 L_i` (single sample).
    pub fn individual(p: &Problem, p_comm: f64, grad_mode: GradMode, rounds: usize, seed: u64) -> Self {
        let factor = match grad_mode {
            GradMode::Exact => 1.0,
            GradMode::SingleSample => 2.0,
        };
        Self {
            gamma_i: p.constants().l_i.iter().map(|l| 1.0 / (factor * l)).collect(),
            p: p_comm,
            rounds,
            grad_mode,
            seed,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.gamma_i.len() != n {
            return Err(Error::config(
                "gamma_i",
                format!("expected {n} stepsizes, got {}", self.gamma_i.len()),
            ));
        }
        if let Some(g) = self.gamma_i.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(Error::config("gamma_i", format!("stepsizes must be positive, got {g}")));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::config("p", format!("must lie in (0, 1], got {}", self.p)));
        }
        Ok(())
    }

    pub fn gamma_min(&self) -> f64 {
        self.gamma_i.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Server stepsize `((1/n) sum alpha_i^2 / gamma_i)^{-1}`.
pub fn server_gamma(alpha: &[f64], gamma_i: &[f64]) -> f64 {
    let s: f64 = alpha.iter().zip(gamma_i).map(|(a, g)| a * a / g).sum();
    alpha.len() as f64 / s
}

/// Contraction factor `zeta = min(min_i gamma_i mu_i, p^2)`.
pub fn rate(gamma_i: &[f64], mu_i: &[f64], p: f64) -> f64 {
    gamma_i
        .iter()
        .zip(mu_i)
        .map(|(g, m)| g * m)
        .fold(p * p, f64::min)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScafflixState {
    pub x: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub round: usize,
    pub comm_rounds: u64,
}

pub struct Scafflix<'a> {
    inst: &'a FlixInstance,
    cfg: ScafflixConfig,
    gamma: f64,
    state: ScafflixState,
}

impl<'a> Scafflix<'a> {
    /// Starts from `x_i = 0`, `h_i = 0`.
    pub fn new(inst: &'a FlixInstance, cfg: ScafflixConfig) -> Result<Self> {
        let n = inst.n();
        let d = inst.dim();
        Self::with_state(
            inst,
            cfg,
            ScafflixState {
                x: vec![vec![0.0; d]; n],
                h: vec![vec![0.0; d]; n],
                round: 0,
                comm_rounds: 0,
            },
        )
    }

    pub fn with_state(inst: &'a FlixInstance, cfg: ScafflixConfig, state: ScafflixState) -> Result<Self> {
        cfg.validate(inst.n())?;
        if let Some(i) = inst.alpha.iter().position(|&a| a == 0.0) {
            return Err(Error::config(
                "alpha",
                format!("alpha_{i} = 0 makes the local step gamma_i / alpha_i undefined"),
            ));
        }
        if state.x.len() != inst.n() || state.h.len() != inst.n() {
            return Err(Error::invalid("state must hold one x_i and h_i per client"));
        }
        let gamma = server_gamma(&inst.alpha, &cfg.gamma_i);
        Ok(Self {
            inst,
            cfg,
            gamma,
            state,
        })
    }

    pub fn state(&self) -> &ScafflixState {
        &self.state
    }

    pub fn server_gamma(&self) -> f64 {
        self.gamma
    }

    /// `(gamma / n) sum alpha_i^2 / gamma_i x_i`, the server's view of the model.
    pub fn average(&self) -> Vec<f64> {
        weighted_average(&self.state.x, self.inst.alpha(), &self.cfg.gamma_i, self.gamma)
    }

    pub fn lyapunov(&self, r: &FlixReference) -> f64 {
        let inst = self.inst;
        let n = inst.n() as f64;
        let gmin = self.cfg.gamma_min();
        let mut a = 0.0;
        let mut b = 0.0;
        for i in 0..inst.n() {
            let g = self.cfg.gamma_i[i];
            a += gmin / g * dist_sq(&inst.personalize(i, &self.state.x[i]), &r.personalized[i]);
            b += g * dist_sq(&self.state.h[i], &r.grads[i]);
        }
        a / n + gmin / (self.cfg.p * self.cfg.p) * b / n
    }

    pub fn step(&mut self) -> Result<()> {
        let t = self.state.round as u64;
        let inst = self.inst;
        let cfg = &self.cfg;
        let coin = rng::server_stream(cfg.seed, t).random::<f64>() < cfg.p;
        let x_hat: Vec<Vec<f64>> = (0..inst.n())
            .into_par_iter()
            .map(|i| {
                let xt = inst.personalize(i, &self.state.x[i]);
                let g = local_gradient(inst.base(), i, &xt, cfg.grad_mode, cfg.seed, t);
                let step = cfg.gamma_i[i] / inst.alpha[i];
                self.state.x[i]
                    .iter()
                    .zip(g.iter().zip(&self.state.h[i]))
                    .map(|(x, (gk, hk))| x - step * (gk - hk))
                    .collect()
            })
            .collect();
        if coin {
            let x_bar = weighted_average(&x_hat, &inst.alpha, &cfg.gamma_i, self.gamma);
            for i in 0..inst.n() {
                let c = cfg.p * inst.alpha[i] / cfg.gamma_i[i];
                for (hk, (b, xh)) in self.state.h[i].iter_mut().zip(x_bar.iter().zip(&x_hat[i])) {
                    *hk += c * (b - xh);
                }
                self.state.x[i].clone_from(&x_bar);
            }
            self.state.comm_rounds += 1;
        } else {
            self.state.x = x_hat;
        }
        self.state.round += 1;
        Ok(())
    }

    fn record(&self, r: &FlixReference) -> Result<Record> {
        let xa = self.average();
        let gap = self.inst.value(&xa) - r.value;
        let lyap = self.lyapunov(r);
        check_finite(self.state.round, gap, lyap)?;
        Ok(Record {
            round: self.state.round,
            f_gap: Some(gap),
            dist_sq: Some(dist_sq(&xa, &r.x)),
            lyapunov: Some(lyap),
            scalars_sent: Some(self.state.comm_rounds * (self.inst.n() * self.inst.dim()) as u64),
            comm_rounds: Some(self.state.comm_rounds),
            alpha_summary: Some(self.inst.alpha_summary()),
            ..Record::default()
        })
    }

    pub fn run(mut self, r: &FlixReference) -> Result<Trace> {
        let mut meta = TraceMeta::new("scafflix", self.cfg.seed);
        meta.scalars.insert("p".into(), self.cfg.p);
        meta.scalars.insert("server_gamma".into(), self.gamma);
        let mut trace = Trace::new(meta);
        trace.push(self.record(r)?);
        for _ in 0..self.cfg.rounds {
            self.step()?;
            trace.push(self.record(r)?);
        }
        Ok(trace)
    }
}

fn check_finite(round: usize, gap: f64, lyap: f64) -> Result<()> {
    for v in [gap, lyap] {
        if !v.is_finite() || v > DIVERGENCE {
            return Err(Error::Diverged { round, value: v });
        }
    }
    Ok(())
}

fn weighted_average(xs: &[Vec<f64>], alpha: &[f64], gamma_i: &[f64], gamma: f64) -> Vec<f64> {
    let mut s = vec![0.0; xs[0].len()];
    for (j, x) in xs.iter().enumerate() {
        let w = alpha[j] * alpha[j] / gamma_i[j];
        for (sk, xk) in s.iter_mut().zip(x) {
            *sk += w * xk;
        }
    }
    let c = gamma / xs.len() as f64;
    s.iter_mut().for_each(|v| *v *= c);
    s
}

fn local_gradient(p: &Problem, i: usize, x: &[f64], mode: GradMode, seed: u64, t: u64) -> Vec<f64> {
    match mode {
        GradMode::Exact => p.grad(i, x),
        GradMode::SingleSample => {
            let j = rng::stream(seed, i as u64, t).random_range(0..p.local_count(i));
            let mut g = vec![0.0; p.dim()];
            p.sample_grad_into(i, j, x, &mut g);
            g
        }
    }
}

/// Builds the FLIX instance, its reference and runs Scafflix.
pub fn run_scafflix(inst: &FlixInstance, cfg: ScafflixConfig) -> Result<Trace> {
    let r = inst.reference()?;
    Scafflix::new(inst, cfg)?.run(&r)
}

/// i-Scaffnew on the plain finite sum, written out on its own: stepsizes
/// `gamma_i`, server stepsize the harmonic mean of the `gamma_i`.
///
/// The recorded Lyapunov value is `(1/n) sum (gamma_min/gamma_i) ||x_i - x*||^2
/// + (gamma_min/p^2)(1/n) sum gamma_i ||h_i - grad f_i(x*)||^2`, i.e. the
/// unnormalized form scaled by `gamma_min / n`, so it lines up with Scafflix.
pub fn run_iscaffnew(p: &Problem, cfg: ScafflixConfig) -> Result<Trace> {
    let n = p.n();
    let d = p.dim();
    cfg.validate(n)?;
    let x_star = reference_solution(p, &Regularizer::Zero, REFERENCE_TOL)?;
    let f_star = p.full_loss(&x_star);
    let g_star: Vec<Vec<f64>> = (0..n).map(|i| p.grad(i, &x_star)).collect();
    let inv_sum: f64 = cfg.gamma_i.iter().map(|g| 1.0 / g).sum();
    let gamma = n as f64 / inv_sum;
    let gmin = cfg.gamma_min();
    let mut x = vec![vec![0.0; d]; n];
    let mut h = vec![vec![0.0; d]; n];
    let mut comm = 0u64;

    let snapshot = |t: usize, x: &[Vec<f64>], h: &[Vec<f64>], comm: u64| -> Result<Record> {
        let mut avg = vec![0.0; d];
        for j in 0..n {
            let w = 1.0 / cfg.gamma_i[j];
            for k in 0..d {
                avg[k] += w * x[j][k];
            }
        }
        let c = gamma / n as f64;
        for v in avg.iter_mut() {
            *v *= c;
        }
        let gap = p.full_loss(&avg) - f_star;
        let mut a = 0.0;
        let mut b = 0.0;
        for i in 0..n {
            a += gmin / cfg.gamma_i[i] * dist_sq(&x[i], &x_star);
            b += cfg.gamma_i[i] * dist_sq(&h[i], &g_star[i]);
        }
        let lyap = a / n as f64 + gmin / (cfg.p * cfg.p) * b / n as f64;
        check_finite(t, gap, lyap)?;
        Ok(Record {
            round: t,
            f_gap: Some(gap),
            dist_sq: Some(dist_sq(&avg, &x_star)),
            lyapunov: Some(lyap),
            scalars_sent: Some(comm * (n * d) as u64),
            comm_rounds: Some(comm),
            alpha_summary: Some("1;1;1".into()),
            ..Record::default()
        })
    };

    let mut meta = TraceMeta::new("iscaffnew", cfg.seed);
    meta.scalars.insert("p".into(), cfg.p);
    meta.scalars.insert("server_gamma".into(), gamma);
    let mut trace = Trace::new(meta);
    trace.push(snapshot(0, &x, &h, comm)?);
    for t in 0..cfg.rounds {
        let theta = rng::server_stream(cfg.seed, t as u64).random::<f64>() < cfg.p;
        let mut x_hat = Vec::with_capacity(n);
        for i in 0..n {
            let g = local_gradient(p, i, &x[i], cfg.grad_mode, cfg.seed, t as u64);
            let xi: Vec<f64> = (0..d).map(|k| x[i][k] - cfg.gamma_i[i] * (g[k] - h[i][k])).collect();
            x_hat.push(xi);
        }
        if theta {
            let mut x_bar = vec![0.0; d];
            for j in 0..n {
                let w = 1.0 / cfg.gamma_i[j];
                for k in 0..d {
                    x_bar[k] += w * x_hat[j][k];
                }
            }
            let c = gamma / n as f64;
            for v in x_bar.iter_mut() {
                *v *= c;
            }
            for i in 0..n {
                let c = cfg.p / cfg.gamma_i[i];
                for k in 0..d {
                    h[i][k] += c * (x_bar[k] - x_hat[i][k]);
                }
                x[i] = x_bar.clone();
            }
            comm += 1;
        } else {
            x = x_hat;
        }
        trace.push(snapshot(t + 1, &x, &h, comm)?);
    }
    Ok(trace)
}

/// Distributed gradient descent on the FLIX objective; every round communicates.
pub fn run_flix_gd(inst: &FlixInstance, gamma: f64, rounds: usize) -> Result<Trace> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::config("gamma", "must be positive"));
    }
    let r = inst.reference()?;
    let mut x = vec![0.0; inst.dim()];
    let mut trace = Trace::new(TraceMeta::new("flix_gd", 0));
    trace.meta.scalars.insert("gamma".into(), gamma);
    let per_round = (inst.n() * inst.dim()) as u64;
    for t in 0..=rounds {
        if t > 0 {
            let g = inst.flix_grad(&x);
            for (xk, gk) in x.iter_mut().zip(&g) {
                *xk -= gamma * gk;
            }
        }
        let gap = inst.value(&x) - r.value;
        check_finite(t, gap, 0.0)?;
        trace.push(Record {
            round: t,
            f_gap: Some(gap),
            dist_sq: Some(dist_sq(&x, &r.x)),
            scalars_sent: Some(t as u64 * per_round),
            comm_rounds: Some(t as u64),
            alpha_summary: Some(inst.alpha_summary()),
            ..Record::default()
        });
    }
    Ok(trace)
}

/// Communication rounds spent when `f_gap <= eps` first holds.
pub fn comm_rounds_to(trace: &Trace, eps: f64) -> Option<u64> {
    trace
        .first_where(|r| r.f_gap.is_some_and(|g| g <= eps))
        .and_then(|r| r.comm_rounds)
}

/// `sum_i alpha_i h_i`, which every Scafflix round leaves unchanged.
pub fn weighted_control_sum(inst: &FlixInstance, state: &ScafflixState) -> Vec<f64> {
    let mut s = vec![0.0; inst.dim()];
    for (a, h) in inst.alpha.iter().zip(&state.h) {
        for (sk, hk) in s.iter_mut().zip(h) {
            *sk += a * hk;
        }
    }
    s
}

pub fn grad_norm_sq(inst: &FlixInstance, x: &[f64]) -> f64 {
    norm_sq(&inst.flix_grad(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::random_quadratic;

    fn fixture() -> Problem {
        random_quadratic(&[1.0, 2.0, 4.0, 0.5, 1.5], 3, 1.0, 9).unwrap()
    }

    #[test]
    fn alpha_one_skips_local_solves() {
        let p = fixture();
        let inst = FlixInstance::build(&p, &[1.0; 5], 1e-6).unwrap();
        assert!((0..5).all(|i| inst.x_loc(i).is_none()));
        assert_eq!(inst.local_iterations(), 0);
        let x = [0.3, -0.2, 0.9];
        assert_eq!(inst.value(&x), p.full_loss(&x));
    }

    #[test]
    fn alpha_zero_is_constant() {
        let p = fixture();
        let inst = FlixInstance::build(&p, &[0.0; 5], 1e-6).unwrap();
        assert_eq!(inst.value(&[0.0; 3]), inst.value(&[5.0, -3.0, 1.0]));
        let cs = p.quadratic_clients().unwrap();
        for i in 0..5 {
            assert_eq!(inst.x_loc(i).unwrap(), &cs[i].center[..]);
        }
    }

    #[test]
    fn personalized_point_of_zero_alpha() {
        let p = fixture();
        let inst = FlixInstance::build(&p, &[0.0, 0.5, 0.5, 0.5, 0.5], 1e-6).unwrap();
        let xl = inst.x_loc(0).unwrap().to_vec();
        let (_, mix) = inst.flix_eval(&xl).unwrap();
        assert_eq!(mix[0], xl);
    }

    #[test]
    fn server_gamma_of_equal_stepsizes() {
        assert_eq!(server_gamma(&[1.0; 4], &[0.25; 4]), 0.25);
    }

    #[test]
    fn zero_alpha_is_rejected_by_scafflix() {
        let p = fixture();
        let inst = FlixInstance::build(&p, &[0.0, 1.0, 1.0, 1.0, 1.0], 1e-6).unwrap();
        let cfg = ScafflixConfig::individual(&p, 0.5, GradMode::Exact, 10, 0);
        assert!(matches!(Scafflix::new(&inst, cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn p_one_communicates_every_round() {
        let p = fixture();
        let inst = FlixInstance::build(&p, &[0.5; 5], 1e-6).unwrap();
        let cfg = ScafflixConfig::individual(&p, 1.0, GradMode::Exact, 25, 0);
        let t = run_scafflix(&inst, cfg).unwrap();
        assert_eq!(t.last().unwrap().comm_rounds, Some(25));
    }

    #[test]
    fn flix_gd_fixed_point() {
        let p = fixture();
        let inst = FlixInstance::build(&p, &[0.3, 0.6, 0.9, 1.0, 0.2], 1e-6).unwrap();
        let r = inst.reference().unwrap();
        assert!(norm_sq(&inst.flix_grad(&r.x)) < 1e-24);
    }
}
