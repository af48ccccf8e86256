//! EF-BV: compressed distributed proximal gradient descent with control variates.
//!
//! Each round client `i` sends `d_i = C_i(grad f_i(x) - h_i)` and sets
//! `h_i += lambda d_i`; the master forms `g = h + nu mean(d_i)`, advances
//! `h += lambda mean(d_i)` and steps `x = prox_{gamma R}(x - gamma g)`.
//! EF21 is the setting `nu = lambda`, DIANA is `nu = 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compressors::{optimal_scaling, EnsembleSpec};
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm_sq};
use crate::problems::{prox_reg, reference_solution, Problem, Regularizer, REFERENCE_TOL};
use crate::trace::{Record, Trace, TraceMeta};

/// Objective gap beyond which a run is declared divergent.
pub const DIVERGENCE_GAP: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub r: f64,
    pub r_av: f64,
    pub s_star: f64,
    pub theta_star: f64,
    pub s_ncvx: f64,
    pub theta_ncvx: f64,
}

impl DerivedParams {
    /// `sqrt(r_av / r)`, taken as 1 when both vanish.
    pub fn ratio(&self) -> f64 {
        if self.r == 0.0 {
            1.0
        } else {
            (self.r_av / self.r).sqrt()
        }
    }

    /// Per-round contraction factor `max(1 - gamma mu, (r + 1) / 2)` of the Lyapunov function.
    pub fn contraction(&self, gamma: f64, mu: f64) -> f64 {
        (1.0 - gamma * mu).max((self.r + 1.0) / 2.0)
    }
}

fn theta(s: f64, r: f64, r_av: f64) -> f64 {
    if s.is_infinite() || r_av == 0.0 {
        f64::INFINITY
    } else {
        s * (1.0 + s) * r / r_av
    }
}

pub fn derived_params(eta: f64, omega: f64, omega_ran: f64, lambda: f64, nu: f64) -> Result<DerivedParams> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta must lie in [0, 1), got {eta}")));
    }
    if !(omega >= 0.0 && omega_ran >= 0.0) {
        return Err(Error::invalid("omega and omega_ran must be >= 0"));
    }
    for (name, v) in [("lambda", lambda), ("nu", nu)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::invalid(format!("{name} must lie in (0, 1], got {v}")));
        }
    }
    let b = 1.0 - lambda + lambda * eta;
    let r = b * b + lambda * lambda * omega;
    if r >= 1.0 {
        return Err(Error::RateInvalid { lambda, r });
    }
    let c = 1.0 - nu + nu * eta;
    let r_av = c * c + nu * nu * omega_ran;
    let (s_star, s_ncvx) = if r == 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (((1.0 + r) / (2.0 * r)).sqrt() - 1.0, 1.0 / r.sqrt() - 1.0)
    };
    Ok(DerivedParams {
        r,
        r_av,
        s_star,
        theta_star: theta(s_star, r, r_av),
        s_ncvx,
        theta_ncvx: theta(s_ncvx, r, r_av),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Pl,
    Kl,
    Nonconvex,
}

/// Largest stepsize for which the convergence guarantee of the regime holds.
pub fn stepsize_bound(l: f64, l_tilde: f64, dp: &DerivedParams, regime: Regime) -> f64 {
    let lead = match regime {
        Regime::Kl => 2.0 * l,
        Regime::Pl | Regime::Nonconvex => l,
    };
    if dp.r == 0.0 {
        return 1.0 / lead;
    }
    let s = match regime {
        Regime::Nonconvex => dp.s_ncvx,
        _ => dp.s_star,
    };
    1.0 / (lead + l_tilde * dp.ratio() / s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Efbv,
    Ef21,
    Diana,
    Custom,
}

/// Which aggregate smoothness constant feeds the stepsize formula.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LConvention {
    /// `L = L_global`, `L~ = sqrt((1/n) sum L_i^2)`
    #[default]
    RootMean,
    /// `L = L~ = sqrt(sum L_i^2)`
    RootSum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfbvConfig {
    pub ensemble: EnsembleSpec,
    pub lambda: f64,
    pub nu: f64,
    pub gamma: f64,
    #[serde(default)]
    pub regularizer: Regularizer,
    pub rounds: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Starting point; zero when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

impl EfbvConfig {
    /// Theory defaults: `lambda*`, then `nu` per mode (`nu*`, `lambda*` or 1), then
    /// the largest admissible stepsize for `regime`.
    pub fn theory(
        p: &Problem,
        ensemble: EnsembleSpec,
        mode: Mode,
        regime: Regime,
        convention: LConvention,
        rounds: usize,
        seed: u64,
    ) -> Result<Self> {
        let lambda = optimal_scaling(ensemble.eta(), ensemble.omega());
        let nu = match mode {
            Mode::Efbv | Mode::Custom => optimal_scaling(ensemble.eta(), ensemble.omega_ran),
            Mode::Ef21 => lambda,
            Mode::Diana => 1.0,
        };
        let dp = derived_params(ensemble.eta(), ensemble.omega(), ensemble.omega_ran, lambda, nu)?;
        let c = p.constants();
        let (l, lt) = match convention {
            LConvention::RootMean => (c.l_global, c.l_tilde),
            LConvention::RootSum => (c.l_tilde_sum, c.l_tilde_sum),
        };
        Ok(Self {
            ensemble,
            lambda,
            nu,
            gamma: stepsize_bound(l, lt, &dp, regime),
            regularizer: Regularizer::Zero,
            rounds,
            seed,
            mode,
            x0: None,
        })
    }

    pub fn derived(&self) -> Result<DerivedParams> {
        derived_params(
            self.ensemble.eta(),
            self.ensemble.omega(),
            self.ensemble.omega_ran,
            self.lambda,
            self.nu,
        )
    }

    pub fn validate(&self, p: &Problem) -> Result<DerivedParams> {
        if self.ensemble.n() != p.n() {
            return Err(Error::config(
                "ensemble",
                format!("{} compressors for {} clients", self.ensemble.n(), p.n()),
            ));
        }
        if self.ensemble.dim() != p.dim() {
            return Err(Error::config(
                "ensemble",
                format!("compressor dimension {} != problem dimension {}", self.ensemble.dim(), p.dim()),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma", "must be positive"));
        }
        match self.mode {
            Mode::Ef21 if self.nu != self.lambda => {
                return Err(Error::config("nu", "ef21 mode requires nu = lambda"));
            }
            Mode::Diana if self.nu != 1.0 => {
                return Err(Error::config("nu", "diana mode requires nu = 1"));
            }
            _ => {}
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != p.dim() {
                return Err(Error::DimensionMismatch {
                    expected: p.dim(),
                    got: x0.len(),
                });
            }
        }
        self.regularizer.validate()?;
        self.derived()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EfbvState {
    pub x: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub h_bar: Vec<f64>,
    pub round: usize,
    pub scalars_sent: u64,
}

/// Minimizer and optimal value of `f + R`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub x: Vec<f64>,
    pub value: f64,
}

impl Reference {
    pub fn compute(p: &Problem, reg: &Regularizer) -> Result<Self> {
        let x = reference_solution(p, reg, REFERENCE_TOL)?;
        let value = p.full_loss(&x) + reg.value(&x);
        Ok(Self { x, value })
    }
}

/// Round-by-round EF-BV driver.
pub struct Efbv<'a> {
    problem: &'a Problem,
    cfg: EfbvConfig,
    derived: DerivedParams,
    state: EfbvState,
    grads: Vec<Vec<f64>>,
    uncompressed: bool,
}

impl<'a> Efbv<'a> {
    /// Starts at `x0` with `h_i = grad f_i(x0)`.
    pub fn new(problem: &'a Problem, cfg: EfbvConfig) -> Result<Self> {
        let derived = cfg.validate(problem)?;
        let x = cfg.x0.clone().unwrap_or_else(|| vec![0.0; problem.dim()]);
        let grads = client_grads(problem, &x);
        let h = grads.clone();
        let h_bar = crate::linalg::mean(&h);
        let uncompressed = cfg.lambda == 1.0
            && cfg.nu == 1.0
            && cfg.ensemble.per_client.iter().all(|c| c.is_identity());
        Ok(Self {
            uncompressed,
            problem,
            cfg,
            derived,
            state: EfbvState {
                x,
                h,
                h_bar,
                round: 0,
                scalars_sent: 0,
            },
            grads,
        })
    }

    pub fn state(&self) -> &EfbvState {
        &self.state
    }

    pub fn config(&self) -> &EfbvConfig {
        &self.cfg
    }

    pub fn derived(&self) -> &DerivedParams {
        &self.derived
    }

    /// `(1/n) sum ||grad f_i(x) - h_i||^2` at the current state.
    pub fn control_error(&self) -> f64 {
        self.grads
            .iter()
            .zip(&self.state.h)
            .map(|(g, h)| dist_sq(g, h))
            .sum::<f64>()
            / self.problem.n() as f64
    }

    /// `||grad f(x)||^2` at the current iterate.
    pub fn grad_norm_sq(&self) -> f64 {
        norm_sq(&crate::linalg::mean(&self.grads))
    }

    pub fn objective(&self) -> f64 {
        self.problem.full_loss(&self.state.x) + self.cfg.regularizer.value(&self.state.x)
    }

    /// `F(x) - F* + gamma / (2 theta) * (1/n) sum ||grad f_i(x) - h_i||^2`.
    pub fn lyapunov(&self, f_star: f64, theta: f64) -> f64 {
        let weight = if theta.is_infinite() {
            0.0
        } else {
            self.cfg.gamma / (2.0 * theta)
        };
        self.objective() - f_star + weight * self.control_error()
    }

    pub fn step(&mut self) -> Result<()> {
        let t = self.state.round as u64;
        let n = self.problem.n();
        let dim = self.problem.dim();
        let cfg = &self.cfg;
        if self.uncompressed {
            // h_i + (grad_i - h_i) is grad_i, so skip the round-off of the difference
            self.state.h.clone_from(&self.grads);
            self.state.h_bar = crate::linalg::mean(&self.state.h);
            self.state.scalars_sent += (n * dim) as u64;
            let g = self.state.h_bar.clone();
            return self.finish_step(&g);
        }
        let selection = cfg.ensemble.joint_selection(cfg.seed, t);
        let messages: Vec<(Vec<f64>, usize)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let diff: Vec<f64> = self.grads[i]
                    .iter()
                    .zip(&self.state.h[i])
                    .map(|(g, h)| g - h)
                    .collect();
                cfg.ensemble.compress(i, &diff, cfg.seed, t, selection.as_deref())
            })
            .collect::<Result<_>>()?;
        let lambda = cfg.lambda;
        let nu = cfg.nu;
        for (h, (d, _)) in self.state.h.iter_mut().zip(&messages) {
            for (hk, dk) in h.iter_mut().zip(d) {
                *hk += lambda * dk;
            }
        }
        let mut g = vec![0.0; dim];
        if nu == lambda {
            // the scaled increments are what a plain EF21 master would average
            let mut inc = vec![0.0; dim];
            for (d, _) in &messages {
                for (s, dk) in inc.iter_mut().zip(d) {
                    *s += lambda * dk;
                }
            }
            for k in 0..dim {
                inc[k] /= n as f64;
                g[k] = self.state.h_bar[k] + inc[k];
                self.state.h_bar[k] += inc[k];
            }
        } else {
            let mut dbar = vec![0.0; dim];
            for (d, _) in &messages {
                for (s, dk) in dbar.iter_mut().zip(d) {
                    *s += dk;
                }
            }
            for k in 0..dim {
                dbar[k] /= n as f64;
                g[k] = self.state.h_bar[k] + nu * dbar[k];
                self.state.h_bar[k] += lambda * dbar[k];
            }
        }
        self.state.scalars_sent += messages.iter().map(|(_, s)| *s as u64).sum::<u64>();
        self.finish_step(&g)
    }

    fn finish_step(&mut self, g: &[f64]) -> Result<()> {
        let cfg = &self.cfg;
        let gamma = cfg.gamma;
        let moved: Vec<f64> = self
            .state
            .x
            .iter()
            .zip(g)
            .map(|(x, gk)| x - gamma * gk)
            .collect();
        self.state.x = prox_reg(&cfg.regularizer, gamma, &moved);
        self.state.round += 1;
        self.grads = client_grads(self.problem, &self.state.x);
        Ok(())
    }

    fn record(&self, reference: Option<&Reference>) -> Result<Record> {
        let round = self.state.round;
        let mut rec = Record {
            round,
            scalars_sent: Some(self.state.scalars_sent),
            ..Record::default()
        };
        let value = self.objective();
        if !value.is_finite() {
            return Err(Error::Diverged { round, value });
        }
        if let Some(r) = reference {
            let gap = value - r.value;
            if gap > DIVERGENCE_GAP {
                return Err(Error::Diverged { round, value: gap });
            }
            rec.f_gap = Some(gap);
            rec.dist_sq = Some(dist_sq(&self.state.x, &r.x));
            rec.lyapunov = Some(self.lyapunov(r.value, self.derived.theta_star));
        }
        Ok(rec)
    }

    /// Runs the configured number of rounds, recording the state before the first
    /// round and after each one.
    pub fn run(mut self, reference: Option<&Reference>) -> Result<Trace> {
        let mut meta = TraceMeta::new(mode_name(self.cfg.mode), self.cfg.seed);
        meta.scalars.insert("gamma".into(), self.cfg.gamma);
        meta.scalars.insert("lambda".into(), self.cfg.lambda);
        meta.scalars.insert("nu".into(), self.cfg.nu);
        meta.scalars.insert("r".into(), self.derived.r);
        meta.scalars.insert("r_av".into(), self.derived.r_av);
        let mut trace = Trace::new(meta);
        trace.push(self.record(reference)?);
        for _ in 0..self.cfg.rounds {
            self.step()?;
            trace.push(self.record(reference)?);
        }
        Ok(trace)
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Efbv => "efbv",
        Mode::Ef21 => "ef21",
        Mode::Diana => "diana",
        Mode::Custom => "efbv_custom",
    }
}

fn client_grads(p: &Problem, x: &[f64]) -> Vec<Vec<f64>> {
    (0..p.n()).into_par_iter().map(|i| p.grad(i, x)).collect()
}

/// Runs EF-BV, computing the reference solution when the problem is convex.
pub fn run(p: &Problem, cfg: EfbvConfig) -> Result<Trace> {
    let reference = if p.kind().is_convex() {
        Some(Reference::compute(p, &cfg.regularizer)?)
    } else {
        None
    };
    Efbv::new(p, cfg)?.run(reference.as_ref())
}

/// Cumulative scalars transmitted when `f_gap <= eps` first holds.
pub fn scalars_to_accuracy(trace: &Trace, eps: f64) -> Option<u64> {
    trace
        .first_where(|r| r.f_gap.is_some_and(|g| g <= eps))
        .and_then(|r| r.scalars_sent)
}
