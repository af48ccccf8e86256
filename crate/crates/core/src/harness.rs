//! Experiment configs, deterministic execution, sweeps and summaries.
//!
//! A config is a TOML file naming one algorithm, one problem and the knobs of
//! that algorithm's family (tables `[efbv]`, `[scafflix]`, `[sppm]`). Every run
//! is keyed by `(config hash, seed)`; rerunning the same pair rewrites the same
//! bytes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compressors::{CompressorKind, CompressorSpec, EnsembleSpec};
use crate::datasets::{self, PartitionScheme, SynthClassification};
use crate::efbv::{self, EfbvConfig, LConvention, Mode, Reference, Regime};
use crate::error::{Error, Result};
use crate::problems::{
    reference_solution, Problem, ProblemKind, QuadraticClient, Regularizer, REFERENCE_TOL,
};
use crate::scafflix::{self, FlixInstance, GradMode, ScafflixConfig};
use crate::sppm::{
    self, ClusteringMode, CostModel, FedAvgConfig, FedProxConfig, LocalGdConfig, ProxSolverSpec,
    RunOptions, SamplingKind, SamplingScheme, SamplingStats, SppmConfig,
};
use crate::trace::Trace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Efbv,
    Ef21,
    Diana,
    Scafflix,
    Iscaffnew,
    FlixGd,
    SppmAs,
    Localgd,
    Mbgd,
    FedproxSppm,
    FedavgSppm,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Efbv => "efbv",
            Algorithm::Ef21 => "ef21",
            Algorithm::Diana => "diana",
            Algorithm::Scafflix => "scafflix",
            Algorithm::Iscaffnew => "iscaffnew",
            Algorithm::FlixGd => "flix_gd",
            Algorithm::SppmAs => "sppm_as",
            Algorithm::Localgd => "localgd",
            Algorithm::Mbgd => "mbgd",
            Algorithm::FedproxSppm => "fedprox_sppm",
            Algorithm::FedavgSppm => "fedavg_sppm",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Algorithm::Efbv | Algorithm::Ef21 | Algorithm::Diana => Family::Efbv,
            Algorithm::Scafflix | Algorithm::Iscaffnew | Algorithm::FlixGd => Family::Scafflix,
            _ => Family::Sppm,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Efbv,
    Scafflix,
    Sppm,
}

fn default_mu() -> f64 {
    0.1
}

fn default_objective() -> ProblemKind {
    ProblemKind::L2Logistic
}

fn default_heterogeneity() -> f64 {
    1.0
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Synthetic heterogeneous classification.
    Synthetic {
        clients: usize,
        per_client: usize,
        dim: usize,
        #[serde(default = "default_heterogeneity")]
        heterogeneity: f64,
        #[serde(default)]
        groups: usize,
        #[serde(default = "default_one")]
        feature_condition: f64,
        #[serde(default)]
        sample_jitter: Option<f64>,
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "default_objective")]
        objective: ProblemKind,
        /// l2 strength for `l2_logistic`, nonconvex penalty weight otherwise.
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// A LibSVM file split across clients.
    Libsvm {
        path: PathBuf,
        clients: usize,
        partition: PartitionScheme,
        #[serde(default)]
        partition_seed: u64,
        #[serde(default = "default_objective")]
        objective: ProblemKind,
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// Isotropic quadratics `mu_i/2 ||x - c_i||^2`; centers explicit or random.
    Quadratic {
        mu: Vec<f64>,
        #[serde(default)]
        centers: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default = "default_one")]
        spread: f64,
        #[serde(default)]
        data_seed: u64,
    },
    /// Four clients with optimum gradients `+-e_1, +-e_2`.
    UnitCross,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        match self {
            ProblemSpec::Synthetic {
                clients,
                per_client,
                dim,
                heterogeneity,
                groups,
                feature_condition,
                sample_jitter,
                data_seed,
                objective,
                mu,
            } => SynthClassification {
                heterogeneity: *heterogeneity,
                groups: *groups,
                feature_condition: *feature_condition,
                sample_jitter: *sample_jitter,
                ..SynthClassification::new(*clients, *per_client, *dim, *data_seed)
            }
            .problem(*objective, *mu),
            ProblemSpec::Libsvm {
                path,
                clients,
                partition,
                partition_seed,
                objective,
                mu,
            } => {
                let ds = datasets::load_libsvm(path)?;
                let part = datasets::partition(&ds, *partition, *clients, *partition_seed)?;
                match objective {
                    ProblemKind::L2Logistic => Problem::l2_logistic(&ds, &part, *mu),
                    ProblemKind::NonconvexLogistic => Problem::nonconvex_logistic(&ds, &part, *mu),
                    ProblemKind::Quadratic => Err(Error::config(
                        "problem.objective",
                        "LibSVM data gives logistic objectives",
                    )),
                }
            }
            ProblemSpec::Quadratic {
                mu,
                centers,
                dim,
                spread,
                data_seed,
            } => match (centers, dim) {
                (Some(c), _) => datasets::synth_quadratic(mu, c),
                (None, Some(d)) => datasets::random_quadratic(mu, *d, *spread, *data_seed),
                (None, None) => Err(Error::config(
                    "problem",
                    "quadratic problems need `centers` or `dim`",
                )),
            },
            ProblemSpec::UnitCross => Ok(datasets::unit_cross_problem()),
        }
    }

    /// Client groups of the synthetic fixture, when it has any.
    fn groups(&self) -> Option<Vec<Vec<usize>>> {
        match self {
            ProblemSpec::Synthetic {
                clients, groups, ..
            } if *groups > 0 => Some(
                SynthClassification {
                    groups: *groups,
                    ..SynthClassification::new(*clients, 1, 1, 0)
                }
                .group_members(),
            ),
            _ => None,
        }
    }

    fn data_path(&self) -> Option<&Path> {
        match self {
            ProblemSpec::Libsvm { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeSpec {
    #[default]
    Pl,
    Kl,
    Nonconvex,
}

impl From<RegimeSpec> for Regime {
    fn from(r: RegimeSpec) -> Self {
        match r {
            RegimeSpec::Pl => Regime::Pl,
            RegimeSpec::Kl => Regime::Kl,
            RegimeSpec::Nonconvex => Regime::Nonconvex,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfbvSection {
    /// Compressor string such as `comp:k=1,kp=5` or `top:k=2`.
    pub compressor: String,
    /// Draw a joint m-nice participation pattern instead of independent compressors.
    #[serde(default)]
    pub m_nice: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Multiplies the theory stepsize when `gamma` is absent.
    #[serde(default = "default_one")]
    pub gamma_scale: f64,
    #[serde(default)]
    pub regime: RegimeSpec,
    #[serde(default)]
    pub convention: LConvention,
    #[serde(default)]
    pub regularizer: Regularizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScafflixSection {
    /// One factor for every client, or one per client.
    pub alpha: AlphaSpec,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Common stepsize; individual `1/L_i` stepsizes when absent.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub grad_mode: GradMode,
    #[serde(default = "default_eps_loc")]
    pub eps_loc: f64,
}

fn default_p() -> f64 {
    0.2
}

fn default_eps_loc() -> f64 {
    crate::problems::DEFAULT_EPS_LOC
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Uniform(f64),
    PerClient(Vec<f64>),
}

impl AlphaSpec {
    fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            AlphaSpec::Uniform(a) => Ok(vec![*a; n]),
            AlphaSpec::PerClient(v) if v.len() == n => Ok(v.clone()),
            AlphaSpec::PerClient(v) => Err(Error::config(
                "scafflix.alpha",
                format!("expected {n} factors, got {}", v.len()),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingSpec {
    Full,
    Nonuniform {
        p: Vec<f64>,
    },
    Nice {
        tau: usize,
    },
    /// Blocks given explicitly, or the synthetic fixture's groups.
    Block {
        #[serde(default)]
        blocks: Option<Vec<Vec<usize>>>,
        #[serde(default)]
        q: Option<Vec<f64>>,
    },
    /// Blocks given explicitly, the synthetic groups (`groups = true`) or
    /// k-means clusters of the optimum gradients (`kmeans = b`).
    Stratified {
        #[serde(default)]
        blocks: Option<Vec<Vec<usize>>>,
        #[serde(default)]
        groups: bool,
        #[serde(default)]
        kmeans: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SppmSection {
    pub sampling: SamplingSpec,
    /// Prox parameter (SPPM family) or local stepsize (LocalGD / MB-GD).
    pub gamma: f64,
    #[serde(default = "ProxSolverSpec::exact")]
    pub solver: ProxSolverSpec,
    #[serde(default)]
    pub cost: CostModel,
    /// Local steps for LocalGD.
    #[serde(default)]
    pub local_steps: Option<usize>,
    /// Averaging repetitions for FedProx / FedAvg-SPPM.
    #[serde(default, rename = "K")]
    pub k: Option<usize>,
    #[serde(default)]
    pub alpha_loc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub problem: ProblemSpec,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: PathBuf,
    /// Accuracy for summaries: `f - f* <= target`, or `||x - x*||^2 < target` for
    /// the SPPM family (which also stops there).
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default)]
    pub efbv: Option<EfbvSection>,
    #[serde(default)]
    pub scafflix: Option<ScafflixSection>,
    #[serde(default)]
    pub sppm: Option<SppmSection>,
}

impl ExperimentConfig {
    /// Parses a config. Errors name the offending key as a dotted path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let line_of = |e: &toml::de::Error| e.span().map(|s| text[..s.start].lines().count().max(1));
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
            field: line_of(&e).map_or_else(|| "config".into(), |l| format!("line {l}")),
            message: e.message().to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = match e.path().to_string() {
                p if p == "." => "config".to_string(),
                p => p,
            };
            let inner = e.into_inner();
            Error::Config {
                field,
                message: match line_of(&inner) {
                    Some(l) => format!("{} (line {l})", inner.message()),
                    None => inner.message().to_string(),
                },
            }
        })
    }

    /// Reads a config; relative data paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let ProblemSpec::Libsvm { path: data, .. } = &mut cfg.problem {
            if data.is_relative() {
                *data = base.join(&*data);
            }
        }
        if cfg.output.is_relative() && !cfg.output.as_os_str().is_empty() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "needs at least one seed"));
        }
        if let Some(path) = self.problem.data_path() {
            if !path.exists() {
                return Err(Error::config(
                    "problem.path",
                    format!("{} does not exist", path.display()),
                ));
            }
        }
        if let Some(t) = self.target {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("target", "must be positive"));
            }
        }
        let (name, present) = match self.algorithm.family() {
            Family::Efbv => ("efbv", self.efbv.is_some()),
            Family::Scafflix => ("scafflix", self.scafflix.is_some()),
            Family::Sppm => ("sppm", self.sppm.is_some()),
        };
        if !present {
            return Err(Error::config(
                name,
                format!("algorithm `{}` needs a [{name}] table", self.algorithm),
            ));
        }
        if let Some(s) = &self.sppm {
            if !(s.gamma > 0.0 && s.gamma.is_finite()) {
                return Err(Error::config("sppm.gamma", "must be positive"));
            }
            s.cost.validate()?;
            match self.algorithm {
                Algorithm::Localgd if s.local_steps.is_none_or(|k| k == 0) => {
                    return Err(Error::config("sppm.local_steps", "localgd needs local_steps >= 1"));
                }
                Algorithm::FedproxSppm | Algorithm::FedavgSppm if s.k.is_none_or(|k| k == 0) => {
                    return Err(Error::config("sppm.K", "needs K >= 1"));
                }
                Algorithm::FedavgSppm if s.alpha_loc.is_none_or(|a| !(a > 0.0)) => {
                    return Err(Error::config("sppm.alpha_loc", "fedavg_sppm needs alpha_loc > 0"));
                }
                _ => {}
            }
        }
        if let Some(s) = &self.scafflix {
            if !(s.p > 0.0 && s.p <= 1.0) {
                return Err(Error::config("scafflix.p", "must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form (output path excluded), plus the
    /// bytes of any data file.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canonical)?);
        if let Some(path) = self.problem.data_path() {
            h.update(fs::read(path)?);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// A problem with its reference point, shared by every seed of a config.
pub struct Prepared {
    pub problem: Problem,
    pub x_star: Vec<f64>,
    pub flix: Option<FlixInstance>,
    pub groups: Option<Vec<Vec<usize>>>,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let problem = cfg.problem.build()?;
        let flix = match (&cfg.scafflix, cfg.algorithm) {
            (Some(s), Algorithm::Scafflix | Algorithm::FlixGd) => Some(FlixInstance::build(
                &problem,
                &s.alpha.resolve(problem.n())?,
                s.eps_loc,
            )?),
            _ => None,
        };
        let x_star = match (&flix, cfg.algorithm.family()) {
            (Some(f), _) => f.reference()?.x,
            (None, Family::Efbv) => {
                let reg = cfg.efbv.as_ref().map(|e| e.regularizer).unwrap_or_default();
                if problem.kind().is_convex() {
                    reference_solution(&problem, &reg, REFERENCE_TOL)?
                } else {
                    vec![0.0; problem.dim()]
                }
            }
            (None, _) => reference_solution(&problem, &Regularizer::Zero, REFERENCE_TOL)?,
        };
        Ok(Self {
            groups: cfg.problem.groups(),
            problem,
            x_star,
            flix,
        })
    }

    pub fn scheme(&self, spec: &SamplingSpec) -> Result<SamplingScheme> {
        let n = self.problem.n();
        let pick_blocks = |explicit: &Option<Vec<Vec<usize>>>, groups: bool, kmeans: Option<usize>| {
            match (explicit, groups, kmeans) {
                (Some(b), false, None) => Ok(b.clone()),
                (None, true, None) | (None, false, None) => self.groups.clone().ok_or_else(|| {
                    Error::config("sppm.sampling", "no blocks given and the problem has no groups")
                }),
                (None, false, Some(b)) => {
                    let grads = sppm::client_gradients(&self.problem, &self.x_star);
                    Ok(sppm::optimal_stratified_clustering(&grads, b, ClusteringMode::Kmeans, 0)?.blocks)
                }
                _ => Err(Error::config(
                    "sppm.sampling",
                    "give exactly one of blocks, groups or kmeans",
                )),
            }
        };
        let kind = match spec {
            SamplingSpec::Full => SamplingKind::Full,
            SamplingSpec::Nonuniform { p } => SamplingKind::Nonuniform { p: p.clone() },
            SamplingSpec::Nice { tau } => SamplingKind::Nice { tau: *tau },
            SamplingSpec::Block { blocks, q } => {
                let blocks = pick_blocks(blocks, false, None)?;
                let q = q.clone().unwrap_or_else(|| {
                    blocks.iter().map(|b| b.len() as f64 / n as f64).collect()
                });
                SamplingKind::Block { blocks, q }
            }
            SamplingSpec::Stratified {
                blocks,
                groups,
                kmeans,
            } => SamplingKind::Stratified {
                blocks: pick_blocks(blocks, *groups, *kmeans)?,
            },
        };
        SamplingScheme::new(kind, n).map_err(|e| Error::config("sppm.sampling", e.to_string()))
    }
}

fn efbv_config(cfg: &ExperimentConfig, prep: &Prepared, seed: u64) -> Result<EfbvConfig> {
    let sec = cfg.efbv.as_ref().expect("validated");
    let p = &prep.problem;
    let kind = CompressorKind::from_str(&sec.compressor)
        .map_err(|e| Error::config("efbv.compressor", e.to_string()))?;
    let ensemble = match sec.m_nice {
        Some(m) => EnsembleSpec::m_nice(m, p.n(), p.dim())?,
        None => EnsembleSpec::independent(CompressorSpec::new(kind, p.dim())?, p.n())?,
    };
    let mode = match cfg.algorithm {
        Algorithm::Ef21 => Mode::Ef21,
        Algorithm::Diana => Mode::Diana,
        _ if sec.lambda.is_some() || sec.nu.is_some() => Mode::Custom,
        _ => Mode::Efbv,
    };
    let theory_mode = if mode == Mode::Custom { Mode::Efbv } else { mode };
    let mut c = EfbvConfig::theory(
        p,
        ensemble,
        theory_mode,
        sec.regime.into(),
        sec.convention,
        cfg.rounds,
        seed,
    )?;
    c.mode = mode;
    if let Some(l) = sec.lambda {
        c.lambda = l;
        if mode == Mode::Ef21 {
            c.nu = l;
        }
    }
    if let Some(nu) = sec.nu {
        c.nu = nu;
    }
    if sec.lambda.is_some() || sec.nu.is_some() {
        let dp = c.derived()?;
        let k = p.constants();
        let (l, lt) = match sec.convention {
            LConvention::RootMean => (k.l_global, k.l_tilde),
            LConvention::RootSum => (k.l_tilde_sum, k.l_tilde_sum),
        };
        c.gamma = efbv::stepsize_bound(l, lt, &dp, sec.regime.into());
    }
    c.gamma = sec.gamma.unwrap_or(c.gamma * sec.gamma_scale);
    c.regularizer = sec.regularizer;
    Ok(c)
}

fn scafflix_config(cfg: &ExperimentConfig, prep: &Prepared, seed: u64) -> ScafflixConfig {
    let sec = cfg.scafflix.as_ref().expect("validated");
    let mut c = ScafflixConfig::individual(&prep.problem, sec.p, sec.grad_mode, cfg.rounds, seed);
    if let Some(g) = sec.gamma {
        c.gamma_i = vec![g; prep.problem.n()];
    }
    c
}

fn run_options(cfg: &ExperimentConfig, seed: u64) -> RunOptions {
    RunOptions {
        rounds: cfg.rounds,
        cost: cfg.sppm.as_ref().map(|s| s.cost).unwrap_or_default(),
        seed,
        target: cfg.target,
        x0: None,
    }
}

/// Runs one seed of a prepared config and stamps the trace metadata.
pub fn run_seed(cfg: &ExperimentConfig, prep: &Prepared, seed: u64) -> Result<Trace> {
    let p = &prep.problem;
    let mut trace = match cfg.algorithm.family() {
        Family::Efbv => {
            let c = efbv_config(cfg, prep, seed)?;
            let reference = p.kind().is_convex().then(|| Reference {
                value: p.full_loss(&prep.x_star) + c.regularizer.value(&prep.x_star),
                x: prep.x_star.clone(),
            });
            let mut t = efbv::Efbv::new(p, c)?.run(reference.as_ref())?;
            t.meta.algorithm = cfg.algorithm.name().into();
            t
        }
        Family::Scafflix => {
            let c = scafflix_config(cfg, prep, seed);
            match cfg.algorithm {
                Algorithm::Scafflix => scafflix::run_scafflix(prep.flix.as_ref().expect("built"), c)?,
                Algorithm::Iscaffnew => scafflix::run_iscaffnew(p, c)?,
                _ => {
                    let inst = prep.flix.as_ref().expect("built");
                    let gamma = cfg
                        .scafflix
                        .as_ref()
                        .and_then(|s| s.gamma)
                        .unwrap_or_else(|| 1.0 / scafflix_flix_smoothness(inst));
                    scafflix::run_flix_gd(inst, gamma, cfg.rounds)?
                }
            }
        }
        Family::Sppm => {
            let sec = cfg.sppm.as_ref().expect("validated");
            let scheme = prep.scheme(&sec.sampling)?;
            let options = run_options(cfg, seed);
            match cfg.algorithm {
                Algorithm::SppmAs => sppm::run_sppm_as(
                    p,
                    &SppmConfig {
                        scheme,
                        gamma: sec.gamma,
                        solver: sec.solver,
                        options,
                        instrument: false,
                    },
                    &prep.x_star,
                )?,
                Algorithm::Localgd | Algorithm::Mbgd => {
                    let local_steps = match cfg.algorithm {
                        Algorithm::Mbgd => 1,
                        _ => sec.local_steps.unwrap_or(0),
                    };
                    sppm::run_localgd(
                        p,
                        &LocalGdConfig {
                            scheme,
                            stepsize: sec.gamma,
                            local_steps,
                            options,
                        },
                        &prep.x_star,
                    )?
                }
                Algorithm::FedproxSppm => sppm::run_fedprox_sppm(
                    p,
                    &FedProxConfig {
                        scheme,
                        gamma: sec.gamma,
                        k: sec.k.unwrap_or(0),
                        solver: sec.solver,
                        options,
                    },
                    &prep.x_star,
                )?,
                _ => sppm::run_fedavg_sppm(
                    p,
                    &FedAvgConfig {
                        scheme,
                        gamma: sec.gamma,
                        alpha_loc: sec.alpha_loc.unwrap_or(0.0),
                        k: sec.k.unwrap_or(0),
                        solver: sec.solver,
                        options,
                    },
                    &prep.x_star,
                )?,
            }
        }
    };
    trace.meta.seed = seed;
    trace.meta.config_hash = cfg.hash()?;
    trace.validate()?;
    Ok(trace)
}

fn scafflix_flix_smoothness(inst: &FlixInstance) -> f64 {
    use crate::problems::SmoothObjective;
    inst.lipschitz_bound()
}

pub fn trace_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output.join(format!("{}_seed{seed}.csv", cfg.algorithm))
}

/// Runs every seed and writes one trace file per seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let prep = Prepared::new(cfg)?;
    let traces: Vec<Trace> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, &prep, s))
        .collect::<Result<_>>()?;
    if !cfg.output.as_os_str().is_empty() {
        fs::create_dir_all(&cfg.output)?;
    }
    let mut paths = Vec::with_capacity(traces.len());
    for (seed, trace) in cfg.seeds.iter().zip(&traces) {
        let path = trace_path(cfg, *seed);
        trace.write(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Runs every seed in memory.
pub fn run_traces(cfg: &ExperimentConfig) -> Result<Vec<Trace>> {
    cfg.validate()?;
    let prep = Prepared::new(cfg)?;
    cfg.seeds.par_iter().map(|&s| run_seed(cfg, &prep, s)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrid {
    pub name: String,
    pub values: Vec<f64>,
}

impl FromStr for ParamGrid {
    type Err = Error;

    /// `name=a..b` (integer range, inclusive) or `name=v1,v2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, spec) = s
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("grid `{s}` is not name=values")))?;
        let bad = |v: &str| Error::invalid(format!("bad grid value `{v}` in `{s}`"));
        let values = if let Some((a, b)) = spec.split_once("..") {
            let a: i64 = a.trim().parse().map_err(|_| bad(a))?;
            let b: i64 = b.trim().parse().map_err(|_| bad(b))?;
            (a..=b).map(|v| v as f64).collect()
        } else {
            spec.split(',')
                .filter(|v| !v.trim().is_empty())
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad(v)))
                .collect::<Result<Vec<_>>>()?
        };
        if values.is_empty() {
            return Err(Error::invalid(format!("grid `{s}` is empty")));
        }
        Ok(Self {
            name: name.trim().to_string(),
            values,
        })
    }
}

fn as_count(field: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::config(field, format!("needs a whole number, got {v}")))
    }
}

/// Returns a copy of `cfg` with the named knob set to `value`.
pub fn with_param(cfg: &ExperimentConfig, name: &str, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    let missing = |t: &str| Error::config(name, format!("no [{t}] table to apply it to"));
    match name {
        "rounds" => c.rounds = as_count(name, value)?,
        "target" => c.target = Some(value),
        "K" => {
            let s = c.sppm.as_mut().ok_or_else(|| missing("sppm"))?;
            let k = as_count(name, value)?;
            match cfg.algorithm {
                Algorithm::FedproxSppm | Algorithm::FedavgSppm => s.k = Some(k),
                _ => s.solver.k = k,
            }
        }
        "gamma" | "stepsize" => match cfg.algorithm.family() {
            Family::Sppm => c.sppm.as_mut().ok_or_else(|| missing("sppm"))?.gamma = value,
            Family::Efbv => c.efbv.as_mut().ok_or_else(|| missing("efbv"))?.gamma = Some(value),
            Family::Scafflix => {
                c.scafflix.as_mut().ok_or_else(|| missing("scafflix"))?.gamma = Some(value)
            }
        },
        "local_steps" => {
            c.sppm.as_mut().ok_or_else(|| missing("sppm"))?.local_steps =
                Some(as_count(name, value)?)
        }
        "tau" => {
            c.sppm.as_mut().ok_or_else(|| missing("sppm"))?.sampling = SamplingSpec::Nice {
                tau: as_count(name, value)?,
            }
        }
        "alpha_loc" => c.sppm.as_mut().ok_or_else(|| missing("sppm"))?.alpha_loc = Some(value),
        "c1" => c.sppm.as_mut().ok_or_else(|| missing("sppm"))?.cost.c1 = value,
        "c2" => c.sppm.as_mut().ok_or_else(|| missing("sppm"))?.cost.c2 = value,
        "inner_tol" => c.sppm.as_mut().ok_or_else(|| missing("sppm"))?.solver.inner_tol = value,
        "alpha" => {
            c.scafflix.as_mut().ok_or_else(|| missing("scafflix"))?.alpha = AlphaSpec::Uniform(value)
        }
        "p" => c.scafflix.as_mut().ok_or_else(|| missing("scafflix"))?.p = value,
        "lambda" => c.efbv.as_mut().ok_or_else(|| missing("efbv"))?.lambda = Some(value),
        "nu" => c.efbv.as_mut().ok_or_else(|| missing("efbv"))?.nu = Some(value),
        "gamma_scale" => c.efbv.as_mut().ok_or_else(|| missing("efbv"))?.gamma_scale = value,
        _ => return Err(Error::config(name, "unknown sweep parameter")),
    }
    Ok(c)
}

/// Mean, standard error and median over seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std_err: f64,
    pub median: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                std_err: f64::NAN,
                median: f64::NAN,
                count,
            };
        }
        let n = count as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_err = if count > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if count % 2 == 1 {
            sorted[count / 2]
        } else {
            0.5 * (sorted[count / 2 - 1] + sorted[count / 2])
        };
        Self {
            mean,
            std_err,
            median,
            count,
        }
    }
}

/// Rounds and cost at which a trace first reaches the target, per family.
pub fn time_to_target(trace: &Trace, family: Family, eps: f64) -> Option<(f64, f64)> {
    let hit = trace.first_where(|r| match family {
        Family::Sppm => r.dist_sq.is_some_and(|d| d < eps),
        _ => r.f_gap.is_some_and(|g| g <= eps),
    })?;
    let rounds = hit.comm_rounds.map(|c| c as f64).unwrap_or(hit.round as f64);
    let cost = hit
        .cost_cum
        .or(hit.scalars_sent.map(|s| s as f64))
        .unwrap_or(rounds);
    Some((rounds, cost))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// Over the seeds that reached the target.
    pub rounds_to_target: Summary,
    pub total_cost: Summary,
    pub final_gap: Summary,
    pub reached: usize,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub param: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},reached,seeds,rounds_mean,rounds_se,rounds_median,cost_mean,cost_se,cost_median,final_gap_mean,final_gap_se\n",
            self.param
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{:e},{:e}\n",
                r.value,
                r.reached,
                r.seeds,
                r.rounds_to_target.mean,
                r.rounds_to_target.std_err,
                r.rounds_to_target.median,
                r.total_cost.mean,
                r.total_cost.std_err,
                r.total_cost.median,
                r.final_gap.mean,
                r.final_gap.std_err
            ));
        }
        out
    }

    /// The grid value with the smallest mean cost among rows where every seed
    /// reached the target.
    pub fn best_by_cost(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.reached == r.seeds)
            .min_by(|a, b| a.total_cost.mean.total_cmp(&b.total_cost.mean))
    }
}

/// Runs every grid point (in parallel) and summarizes the seeds.
pub fn sweep(cfg: &ExperimentConfig, grid: &ParamGrid) -> Result<SweepTable> {
    if grid.values.is_empty() {
        return Err(Error::invalid("empty sweep grid"));
    }
    let eps = cfg
        .target
        .ok_or_else(|| Error::config("target", "sweeps need a target accuracy"))?;
    let family = cfg.algorithm.family();
    let rows = grid
        .values
        .par_iter()
        .map(|&v| {
            let c = with_param(cfg, &grid.name, v)?;
            let traces = run_traces(&c).map_err(|e| {
                Error::invalid(format!("grid point {}={v}: {e}", grid.name))
            })?;
            let mut rounds = Vec::new();
            let mut costs = Vec::new();
            let mut gaps = Vec::new();
            for t in &traces {
                if let Some((r, k)) = time_to_target(t, family, eps) {
                    rounds.push(r);
                    costs.push(k);
                }
                let last = t.last().expect("nonempty trace");
                gaps.push(match family {
                    Family::Sppm => last.dist_sq.unwrap_or(f64::NAN),
                    _ => last.f_gap.unwrap_or(f64::NAN),
                });
            }
            Ok(SweepRow {
                value: v,
                rounds_to_target: Summary::of(&rounds),
                total_cost: Summary::of(&costs),
                final_gap: Summary::of(&gaps),
                reached: rounds.len(),
                seeds: traces.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        param: grid.name.clone(),
        rows,
    })
}

/// `mu_AS` and `sigma^2_{*,AS}` of the config's sampling scheme, enumerated
/// when `n <= 20` and from closed forms otherwise.
pub fn sampling_stats(cfg: &ExperimentConfig) -> Result<(SamplingScheme, SamplingStats)> {
    let sec = cfg
        .sppm
        .as_ref()
        .ok_or_else(|| Error::config("sppm", "stats need a [sppm] table"))?;
    let prep = Prepared::new(cfg)?;
    let scheme = prep.scheme(&sec.sampling)?;
    let grads = sppm::client_gradients(&prep.problem, &prep.x_star);
    let mu_i = &prep.problem.constants().mu_i;
    let stats = if scheme.n() <= sppm::ENUMERATION_LIMIT {
        SamplingStats::enumerated(&scheme, mu_i, &grads)?
    } else {
        SamplingStats::closed_form(&scheme, mu_i, &grads)?
    };
    Ok((scheme, stats))
}

/// Builds the quadratic fixture config used by the docs and tests.
pub fn quadratic_clients(mu: &[f64], centers: &[Vec<f64>]) -> Vec<QuadraticClient> {
    mu.iter()
        .zip(centers)
        .map(|(m, c)| QuadraticClient::isotropic(*m, c.clone()))
        .collect()
}
