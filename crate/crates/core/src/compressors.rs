//! Sparsifying compressors with certified membership in the class `C(eta, omega)`:
//! `||E[C(x)] - x|| <= eta ||x||` and `E||C(x) - E[C(x)]||^2 <= omega ||x||^2`.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm, norm_sq};
use crate::rng::{self, StreamRng};

/// Number of random directions probed by [`estimate_params`].
pub const ESTIMATE_INPUTS: usize = 16;
const MAX_OUTCOMES: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompressorKind {
    Identity,
    RandK { k: usize },
    TopK { k: usize },
    /// top-`k` plus `kp` uniformly chosen other coordinates, all unscaled
    Mix { k: usize, kp: usize },
    /// top-`kp`, then rand-`k` among the survivors scaled by `kp / k`
    Comp { k: usize, kp: usize },
    /// `(n / m) x` when the client is in the size-`m` cohort, `0` otherwise
    ParticipationNice { m: usize, n: usize },
    Scaled { inner: Box<CompressorKind>, lambda: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub eta: f64,
    pub omega: f64,
}

impl Certificate {
    /// `eta^2 + omega`, the bound on `E||C(x) - x||^2 / ||x||^2`.
    pub fn total_error(&self) -> f64 {
        self.eta * self.eta + self.omega
    }
}

fn range_err(what: &str) -> Error {
    Error::invalid(what.to_string())
}

/// Closed-form `(eta, omega)` for a kind on dimension `d`.
pub fn certified_params(kind: &CompressorKind, d: usize) -> Result<Certificate> {
    if d == 0 {
        return Err(range_err("dimension must be positive"));
    }
    let df = d as f64;
    Ok(match *kind {
        CompressorKind::Identity => Certificate { eta: 0.0, omega: 0.0 },
        CompressorKind::RandK { k } => {
            if k == 0 || k > d {
                return Err(range_err(&format!("rand_k needs 1 <= k <= {d}, got {k}")));
            }
            Certificate {
                eta: 0.0,
                omega: df / k as f64 - 1.0,
            }
        }
        CompressorKind::TopK { k } => {
            if k == 0 || k > d {
                return Err(range_err(&format!("top_k needs 1 <= k <= {d}, got {k}")));
            }
            Certificate {
                eta: (1.0 - k as f64 / df).sqrt(),
                omega: 0.0,
            }
        }
        CompressorKind::Mix { k, kp } => {
            if k == 0 || kp == 0 || k + kp > d {
                return Err(range_err(&format!(
                    "mix needs k, kp >= 1 and k + kp <= {d}, got ({k}, {kp})"
                )));
            }
            let (k, kp) = (k as f64, kp as f64);
            Certificate {
                eta: (df - k - kp) / ((df - k) * df).sqrt(),
                omega: kp * (df - k - kp) / ((df - k) * df),
            }
        }
        CompressorKind::Comp { k, kp } => {
            if k == 0 || k > kp || kp > d {
                return Err(range_err(&format!(
                    "comp needs 1 <= k <= kp <= {d}, got ({k}, {kp})"
                )));
            }
            Certificate {
                eta: ((df - kp as f64) / df).sqrt(),
                omega: (kp - k) as f64 / k as f64,
            }
        }
        CompressorKind::ParticipationNice { m, n } => {
            if m == 0 || m > n {
                return Err(range_err(&format!(
                    "participation needs 1 <= m <= n, got (m, n) = ({m}, {n})"
                )));
            }
            Certificate {
                eta: 0.0,
                omega: (n - m) as f64 / m as f64,
            }
        }
        CompressorKind::Scaled { ref inner, lambda } => {
            check_lambda(lambda)?;
            let c = certified_params(inner, d)?;
            Certificate {
                eta: lambda * c.eta + 1.0 - lambda,
                omega: lambda * lambda * c.omega,
            }
        }
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(range_err(&format!("scaling lambda must lie in (0, 1], got {lambda}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    pub dim: usize,
    pub certified: Certificate,
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind, dim: usize) -> Result<Self> {
        let certified = certified_params(&kind, dim)?;
        Ok(Self {
            kind,
            dim,
            certified,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(CompressorKind::Identity, dim).expect("identity is always valid")
    }

    pub fn eta(&self) -> f64 {
        self.certified.eta
    }

    pub fn omega(&self) -> f64 {
        self.certified.omega
    }

    pub fn is_identity(&self) -> bool {
        self.kind == CompressorKind::Identity
    }

    /// Applies the compressor; participation kinds flip their own Bernoulli(m/n) coin.
    pub fn apply(&self, x: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(self.apply_counted(x, rng, None)?.0)
    }

    /// Applies the compressor and reports the number of transmitted scalars.
    /// `selected` overrides the participation coin with a joint cohort draw.
    pub fn apply_counted(
        &self,
        x: &[f64],
        rng: &mut StreamRng,
        selected: Option<bool>,
    ) -> Result<(Vec<f64>, usize)> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(apply_kind(&self.kind, x, rng, selected))
    }

    /// Every possible output with its probability. Participation kinds use their
    /// marginal selection probability `m / n`.
    pub fn outcomes(&self, x: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        outcomes_kind(&self.kind, x)
    }
}

fn top_indices(x: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn keep(x: &[f64], idx: &[usize], factor: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for &i in idx {
        out[i] = factor * x[i];
    }
    out
}

fn apply_kind(
    kind: &CompressorKind,
    x: &[f64],
    rng: &mut StreamRng,
    selected: Option<bool>,
) -> (Vec<f64>, usize) {
    let d = x.len();
    match *kind {
        CompressorKind::Identity => (x.to_vec(), d),
        CompressorKind::RandK { k } => {
            let idx = index::sample(rng, d, k).into_vec();
            (keep(x, &idx, d as f64 / k as f64), k)
        }
        CompressorKind::TopK { k } => (keep(x, &top_indices(x, k), 1.0), k),
        CompressorKind::Mix { k, kp } => {
            let top = top_indices(x, k);
            let mut rest: Vec<usize> = (0..d).filter(|i| !top.contains(i)).collect();
            rest.sort_unstable();
            let mut idx = top;
            idx.extend(index::sample(rng, rest.len(), kp).into_iter().map(|j| rest[j]));
            (keep(x, &idx, 1.0), k + kp)
        }
        CompressorKind::Comp { k, kp } => {
            let mut top = top_indices(x, kp);
            top.sort_unstable();
            let idx: Vec<usize> = index::sample(rng, kp, k).into_iter().map(|j| top[j]).collect();
            (keep(x, &idx, kp as f64 / k as f64), k)
        }
        CompressorKind::ParticipationNice { m, n } => {
            let on = selected.unwrap_or_else(|| rng.random_range(0..n) < m);
            if on {
                (x.iter().map(|v| v * (n as f64 / m as f64)).collect(), d)
            } else {
                (vec![0.0; d], 0)
            }
        }
        CompressorKind::Scaled { ref inner, lambda } => {
            let (mut v, s) = apply_kind(inner, x, rng, selected);
            v.iter_mut().for_each(|e| *e *= lambda);
            (v, s)
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn subsets_guarded(n: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if binomial(n, k) > MAX_OUTCOMES as f64 {
        return Err(Error::EnumerationTooLarge(format!("C({n}, {k}) supports")));
    }
    Ok((0..n).combinations(k).collect())
}

fn outcomes_kind(kind: &CompressorKind, x: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
    let d = x.len();
    Ok(match *kind {
        CompressorKind::Identity => vec![(1.0, x.to_vec())],
        CompressorKind::RandK { k } => {
            let subsets = subsets_guarded(d, k)?;
            let p = 1.0 / subsets.len() as f64;
            subsets
                .iter()
                .map(|s| (p, keep(x, s, d as f64 / k as f64)))
                .collect()
        }
        CompressorKind::TopK { k } => vec![(1.0, keep(x, &top_indices(x, k), 1.0))],
        CompressorKind::Mix { k, kp } => {
            let top = top_indices(x, k);
            let rest: Vec<usize> = (0..d).filter(|i| !top.contains(i)).collect();
            let subsets = subsets_guarded(rest.len(), kp)?;
            let p = 1.0 / subsets.len() as f64;
            subsets
                .iter()
                .map(|s| {
                    let mut idx = top.clone();
                    idx.extend(s.iter().map(|&j| rest[j]));
                    (p, keep(x, &idx, 1.0))
                })
                .collect()
        }
        CompressorKind::Comp { k, kp } => {
            let mut top = top_indices(x, kp);
            top.sort_unstable();
            let subsets = subsets_guarded(kp, k)?;
            let p = 1.0 / subsets.len() as f64;
            subsets
                .iter()
                .map(|s| {
                    let idx: Vec<usize> = s.iter().map(|&j| top[j]).collect();
                    (p, keep(x, &idx, kp as f64 / k as f64))
                })
                .collect()
        }
        CompressorKind::ParticipationNice { m, n } => {
            let q = m as f64 / n as f64;
            let on = x.iter().map(|v| v * (n as f64 / m as f64)).collect();
            if m == n {
                vec![(1.0, on)]
            } else {
                vec![(q, on), (1.0 - q, vec![0.0; d])]
            }
        }
        CompressorKind::Scaled { ref inner, lambda } => outcomes_kind(inner, x)?
            .into_iter()
            .map(|(p, v)| (p, v.into_iter().map(|e| e * lambda).collect()))
            .collect(),
    })
}

/// Probability-weighted mean and variance `E||C(x) - E C(x)||^2` of an outcome list.
pub fn outcome_moments(outcomes: &[(f64, Vec<f64>)]) -> (Vec<f64>, f64) {
    let d = outcomes[0].1.len();
    let mut mean = vec![0.0; d];
    for (p, v) in outcomes {
        for (m, e) in mean.iter_mut().zip(v) {
            *m += p * e;
        }
    }
    let var = outcomes.iter().map(|(p, v)| p * dist_sq(v, &mean)).sum();
    (mean, var)
}

/// Prop.-style scaling: `eta' = lambda eta + 1 - lambda`, `omega' = lambda^2 omega`.
pub fn scale_spec(spec: &CompressorSpec, lambda: f64) -> Result<CompressorSpec> {
    check_lambda(lambda)?;
    if lambda == 1.0 {
        return Ok(spec.clone());
    }
    CompressorSpec::new(
        CompressorKind::Scaled {
            inner: Box::new(spec.kind.clone()),
            lambda,
        },
        spec.dim,
    )
}

/// `P(lambda) = (1 - lambda + lambda eta)^2 + lambda^2 v`.
pub fn scaled_error(eta: f64, variance: f64, lambda: f64) -> f64 {
    let b = 1.0 - lambda + lambda * eta;
    b * b + lambda * lambda * variance
}

/// Minimizer of [`scaled_error`] over `(0, 1]`, for `eta in [0, 1)` and `variance >= 0`.
pub fn optimal_scaling(eta: f64, variance: f64) -> f64 {
    let a = 1.0 - eta;
    (a / (a * a + variance)).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dependence {
    Independent,
    /// A uniformly random size-`m` cohort is drawn jointly each round.
    MNiceJoint { m: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub per_client: Vec<CompressorSpec>,
    pub dependence: Dependence,
    pub omega_ran: f64,
}

impl EnsembleSpec {
    pub fn independent(spec: CompressorSpec, n: usize) -> Result<Self> {
        Self::from_parts(vec![spec; n], Dependence::Independent)
    }

    pub fn m_nice(m: usize, n: usize, dim: usize) -> Result<Self> {
        let spec = CompressorSpec::new(CompressorKind::ParticipationNice { m, n }, dim)?;
        Self::from_parts(vec![spec; n], Dependence::MNiceJoint { m })
    }

    pub fn from_parts(per_client: Vec<CompressorSpec>, dependence: Dependence) -> Result<Self> {
        let n = per_client.len();
        let first = per_client
            .first()
            .ok_or_else(|| Error::invalid("ensemble needs at least one client"))?;
        if per_client
            .iter()
            .any(|s| s.dim != first.dim || s.certified != first.certified)
        {
            return Err(Error::invalid(
                "ensemble members must share dimension and (eta, omega)",
            ));
        }
        let omega_ran = match dependence {
            Dependence::Independent => first.omega() / n as f64,
            Dependence::MNiceJoint { m } => {
                let ok = per_client.iter().all(|s| {
                    matches!(s.kind, CompressorKind::ParticipationNice { m: mm, n: nn } if mm == m && nn == n)
                });
                if !ok {
                    return Err(Error::invalid(format!(
                        "m-nice ensemble needs participation_nice(m = {m}, n = {n}) on every client"
                    )));
                }
                nice_omega_ran(m, n)
            }
        };
        Ok(Self {
            per_client,
            dependence,
            omega_ran,
        })
    }

    pub fn n(&self) -> usize {
        self.per_client.len()
    }

    pub fn dim(&self) -> usize {
        self.per_client[0].dim
    }

    pub fn eta(&self) -> f64 {
        self.per_client[0].eta()
    }

    pub fn omega(&self) -> f64 {
        self.per_client[0].omega()
    }

    /// The joint cohort mask for one round, if the ensemble is jointly sampled.
    pub fn joint_selection(&self, seed: u64, round: u64) -> Option<Vec<bool>> {
        match self.dependence {
            Dependence::Independent => None,
            Dependence::MNiceJoint { m } => {
                let n = self.n();
                let mut rng = rng::server_stream(seed, round);
                let mut mask = vec![false; n];
                for i in index::sample(&mut rng, n, m) {
                    mask[i] = true;
                }
                Some(mask)
            }
        }
    }

    /// Compresses client `client`'s vector on its own `(seed, client, round)` stream.
    pub fn compress(
        &self,
        client: usize,
        x: &[f64],
        seed: u64,
        round: u64,
        selection: Option<&[bool]>,
    ) -> Result<(Vec<f64>, usize)> {
        let mut rng = rng::stream(seed, client as u64, round);
        self.per_client[client].apply_counted(x, &mut rng, selection.map(|s| s[client]))
    }
}

/// `(n - m) / (m (n - 1))`, and `0` for `n = m = 1`.
pub fn nice_omega_ran(m: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (n - m) as f64 / (m as f64 * (n - 1) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub input: Vec<f64>,
    pub relative_bias: f64,
    pub relative_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub eta_hat: f64,
    pub omega_hat: f64,
    pub slack: f64,
    pub violations: Vec<Violation>,
}

/// Monte-Carlo audit of the certificate on random unit inputs.
///
/// Each of [`ESTIMATE_INPUTS`] inputs is compressed `trials` times; the maxima of
/// the empirical relative bias and variance are reported. An input violates the
/// certificate when its bias exceeds `eta + slack (1 + sqrt(omega))` or its
/// variance exceeds `omega (1 + slack) + slack`, with `slack = 3 / sqrt(trials)`.
pub fn estimate_params(spec: &CompressorSpec, trials: usize, rng: &mut StreamRng) -> Result<ParamEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let d = spec.dim;
    let slack = 3.0 / (trials as f64).sqrt();
    let c = spec.certified;
    let mut eta_hat: f64 = 0.0;
    let mut omega_hat: f64 = 0.0;
    let mut violations = Vec::new();
    for _ in 0..ESTIMATE_INPUTS {
        let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let nx = norm(&x);
        if nx == 0.0 {
            continue;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let mut sum = vec![0.0; d];
        let mut sum_sq = 0.0;
        for _ in 0..trials {
            let (y, _) = apply_kind(&spec.kind, &x, rng, None);
            sum_sq += norm_sq(&y);
            for (s, v) in sum.iter_mut().zip(&y) {
                *s += v;
            }
        }
        let t = trials as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / t).collect();
        let bias = dist_sq(&mean, &x).sqrt();
        let var = (sum_sq / t - norm_sq(&mean)).max(0.0);
        eta_hat = eta_hat.max(bias);
        omega_hat = omega_hat.max(var);
        if bias > c.eta + slack * (1.0 + c.omega.sqrt()) || var > c.omega * (1.0 + slack) + slack {
            violations.push(Violation {
                input: x,
                relative_bias: bias,
                relative_variance: var,
            });
        }
    }
    Ok(ParamEstimate {
        eta_hat,
        omega_hat,
        slack,
        violations,
    })
}

impl fmt::Display for CompressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressorKind::Identity => write!(f, "identity"),
            CompressorKind::RandK { k } => write!(f, "rand_k:k={k}"),
            CompressorKind::TopK { k } => write!(f, "top_k:k={k}"),
            CompressorKind::Mix { k, kp } => write!(f, "mix:k={k},kp={kp}"),
            CompressorKind::Comp { k, kp } => write!(f, "comp:k={k},kp={kp}"),
            CompressorKind::ParticipationNice { m, n } => {
                write!(f, "participation_nice:m={m},n={n}")
            }
            CompressorKind::Scaled { inner, lambda } => {
                write!(f, "scaled:lambda={lambda},inner={inner}")
            }
        }
    }
}

/// Parses config strings such as `comp:k=1,kp=56` or `scaled:lambda=0.5,inner=rand_k:k=2`.
impl FromStr for CompressorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let bad = |m: &str| Error::invalid(format!("compressor `{s}`: {m}"));
        if name == "scaled" {
            let (head, inner) = rest
                .split_once(",inner=")
                .ok_or_else(|| bad("expected `lambda=<v>,inner=<compressor>`"))?;
            let lambda = head
                .strip_prefix("lambda=")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("expected `lambda=<v>`"))?;
            return Ok(CompressorKind::Scaled {
                inner: Box::new(inner.parse()?),
                lambda,
            });
        }
        let mut args = std::collections::BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(&format!("malformed argument `{part}`")))?;
            let v: usize = v
                .trim()
                .parse()
                .map_err(|_| bad(&format!("`{k}` is not a nonnegative integer")))?;
            args.insert(k.trim().to_string(), v);
        }
        let mut take = |key: &str| args.remove(key).ok_or_else(|| bad(&format!("missing `{key}`")));
        let kind = match name {
            "identity" => CompressorKind::Identity,
            "rand_k" => CompressorKind::RandK { k: take("k")? },
            "top_k" => CompressorKind::TopK { k: take("k")? },
            "mix" => CompressorKind::Mix {
                k: take("k")?,
                kp: take("kp")?,
            },
            "comp" => CompressorKind::Comp {
                k: take("k")?,
                kp: take("kp")?,
            },
            "participation_nice" => CompressorKind::ParticipationNice {
                m: take("m")?,
                n: take("n")?,
            },
            other => return Err(bad(&format!("unknown kind `{other}`"))),
        };
        if let Some(extra) = args.keys().next() {
            return Err(bad(&format!("unexpected argument `{extra}`")));
        }
        Ok(kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> StreamRng {
        rng::stream(1, 0, 0)
    }

    #[test]
    fn top1_keeps_largest_magnitude() {
        let s = CompressorSpec::new(CompressorKind::TopK { k: 1 }, 2).unwrap();
        assert_eq!(s.apply(&[3.0, -4.0], &mut rng()).unwrap(), vec![0.0, -4.0]);
    }

    #[test]
    fn top_k_ties_go_to_lowest_index() {
        let s = CompressorSpec::new(CompressorKind::TopK { k: 2 }, 4).unwrap();
        assert_eq!(
            s.apply(&[1.0, -2.0, 2.0, 2.0], &mut rng()).unwrap(),
            vec![0.0, -2.0, 2.0, 0.0]
        );
    }

    #[test]
    fn rand1_outcomes() {
        let s = CompressorSpec::new(CompressorKind::RandK { k: 1 }, 2).unwrap();
        let out = s.outcomes(&[2.0, 4.0]).unwrap();
        assert_eq!(out, vec![(0.5, vec![4.0, 0.0]), (0.5, vec![0.0, 8.0])]);
        let (mean, var) = outcome_moments(&out);
        assert_eq!(mean, vec![2.0, 4.0]);
        assert_eq!(var, 20.0);
        for _ in 0..20 {
            let y = s.apply(&[2.0, 4.0], &mut rng()).unwrap();
            assert!(out.iter().any(|(_, v)| *v == y));
        }
    }

    #[test]
    fn comp_1_2_outcomes() {
        let s = CompressorSpec::new(CompressorKind::Comp { k: 1, kp: 2 }, 3).unwrap();
        let out = s.outcomes(&[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(out, vec![(0.5, vec![6.0, 0.0, 0.0]), (0.5, vec![0.0, 4.0, 0.0])]);
    }

    #[test]
    fn table_certificate() {
        let c = certified_params(&CompressorKind::Comp { k: 1, kp: 56 }, 112).unwrap();
        assert!((c.eta - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.omega, 55.0);
    }

    #[test]
    fn mix_1_1_on_three() {
        let c = certified_params(&CompressorKind::Mix { k: 1, kp: 1 }, 3).unwrap();
        assert!((c.eta - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((c.omega - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn comp_k_k_is_top_k() {
        let a = certified_params(&CompressorKind::Comp { k: 2, kp: 2 }, 5).unwrap();
        let b = certified_params(&CompressorKind::TopK { k: 2 }, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_parameters() {
        assert!(certified_params(&CompressorKind::RandK { k: 0 }, 3).is_err());
        assert!(certified_params(&CompressorKind::TopK { k: 4 }, 3).is_err());
        assert!(certified_params(&CompressorKind::Mix { k: 2, kp: 2 }, 3).is_err());
        assert!(certified_params(&CompressorKind::Comp { k: 3, kp: 2 }, 3).is_err());
    }

    #[test]
    fn scaling_rules() {
        let s = CompressorSpec::new(CompressorKind::RandK { k: 1 }, 2).unwrap();
        assert_eq!(scale_spec(&s, 1.0).unwrap(), s);
        let h = scale_spec(&s, 0.5).unwrap();
        assert_eq!(h.certified, Certificate { eta: 0.5, omega: 0.25 });
        assert_eq!(h.certified.total_error(), 0.5);
        let tiny = scale_spec(&s, 1e-9).unwrap();
        assert!(1.0 - tiny.eta() < 1e-8 && tiny.omega() < 1e-17);
        assert!(scale_spec(&s, 0.0).is_err());
        assert!(scale_spec(&s, 1.5).is_err());
    }

    #[test]
    fn optimal_scaling_values() {
        assert!((optimal_scaling(0.0, 3.0) - 0.25).abs() < 1e-15);
        assert_eq!(optimal_scaling(0.3, 0.0), 1.0);
        assert!((optimal_scaling(0.707, 55.0) - 5.32e-3).abs() < 0.01 * 5.32e-3);
    }

    #[test]
    fn omega_ran_modes() {
        let s = CompressorSpec::new(CompressorKind::Comp { k: 1, kp: 56 }, 112).unwrap();
        let e = EnsembleSpec::independent(s, 1000).unwrap();
        assert!((e.omega_ran - 0.055).abs() < 1e-15);
        assert_eq!(EnsembleSpec::m_nice(4, 4, 3).unwrap().omega_ran, 0.0);
        let e = EnsembleSpec::m_nice(5, 10, 3).unwrap();
        assert_eq!(e.omega(), 1.0);
        assert!((e.omega_ran - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn joint_selection_has_m_members() {
        let e = EnsembleSpec::m_nice(3, 7, 2).unwrap();
        for r in 0..10 {
            let mask = e.joint_selection(5, r).unwrap();
            assert_eq!(mask.iter().filter(|&&b| b).count(), 3);
        }
    }

    #[test]
    fn identity_estimate_is_zero() {
        let est = estimate_params(&CompressorSpec::identity(4), 10, &mut rng()).unwrap();
        assert!(est.eta_hat < 1e-15);
        assert!(est.omega_hat < 1e-15);
        assert!(est.violations.is_empty());
    }

    #[test]
    fn config_strings_round_trip() {
        for s in [
            "identity",
            "rand_k:k=3",
            "top_k:k=1",
            "mix:k=1,kp=2",
            "comp:k=1,kp=56",
            "participation_nice:m=2,n=5",
            "scaled:lambda=0.25,inner=comp:k=1,kp=4",
        ] {
            let k: CompressorKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("rand_k:q=1".parse::<CompressorKind>().is_err());
        assert!("blah".parse::<CompressorKind>().is_err());
    }
}
