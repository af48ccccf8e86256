//! LibSVM parsing, synthetic fixtures and client partitioning.
//!
//! Feature indices are 1-based on the wire and 0-based in memory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::problems::{LogisticClient, Problem, ProblemKind, QuadraticClient};
use crate::rng::{self, StreamRng};

/// Default concentration for the Dirichlet quantity skew.
pub const DEFAULT_DIRICHLET_ALPHA: f64 = 0.5;
const DIRICHLET_RETRIES: u64 = 10_000;
const KMEANS_RETRIES: u64 = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub label: i8,
    /// `(index, value)` pairs, 0-based, strictly increasing in index.
    pub features: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, dim: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("dataset has no examples"));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        for (n, ex) in examples.iter().enumerate() {
            if ex.label != 1 && ex.label != -1 {
                return Err(Error::invalid(format!(
                    "example {n}: label {} is not +-1",
                    ex.label
                )));
            }
            let mut prev: Option<usize> = None;
            for &(k, v) in &ex.features {
                if k >= dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: k + 1,
                    });
                }
                if prev.is_some_and(|p| p >= k) {
                    return Err(Error::invalid(format!(
                        "example {n}: feature indices not increasing"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::invalid(format!("example {n}: non-finite value")));
                }
                prev = Some(k);
            }
        }
        Ok(Self { examples, dim })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn count(&self) -> usize {
        self.examples.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dense_row(&self, idx: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.dim];
        for &(k, v) in &self.examples[idx].features {
            row[k] = v;
        }
        row
    }

    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.label > 0).count()
    }

    /// Serializes back to LibSVM text; values use the shortest round-trip form.
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(if ex.label > 0 { "+1" } else { "-1" });
            for &(k, v) in &ex.features {
                let _ = write!(out, " {}:{}", k + 1, v);
            }
            out.push('\n');
        }
        out
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses LibSVM text.
///
/// Labels in `{-1, +1}` are kept, `{0, 1}` maps `0 -> -1`, and any other file
/// with exactly two distinct label values maps the smaller one to `-1`.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut raw: Vec<(usize, f64, Vec<(usize, f64)>)> = Vec::new();
    let mut dim = 0usize;
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(lineno, format!("malformed label `{label_tok}`")))?;
        let mut features = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("malformed token `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed index in `{tok}`")))?;
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(lineno, format!("malformed value in `{tok}`")))?;
            if idx == 0 {
                return Err(parse_err(lineno, "feature indices start at 1"));
            }
            if idx <= prev {
                return Err(parse_err(
                    lineno,
                    format!("index {idx} is not greater than previous index {prev}"),
                ));
            }
            prev = idx;
            dim = dim.max(idx);
            features.push((idx - 1, val));
        }
        raw.push((lineno, label, features));
    }
    if raw.is_empty() {
        return Err(parse_err(0, "no examples"));
    }
    let threshold = label_threshold(&raw)?;
    let examples = raw
        .into_iter()
        .map(|(_, l, features)| Example {
            label: if l > threshold { 1 } else { -1 },
            features,
        })
        .collect();
    Dataset::new(examples, dim.max(1))
}

/// Returns the threshold above which a raw label maps to `+1`.
fn label_threshold(raw: &[(usize, f64, Vec<(usize, f64)>)]) -> Result<f64> {
    let is = |set: &[f64]| raw.iter().all(|(_, l, _)| set.contains(l));
    if is(&[-1.0, 1.0]) {
        return Ok(0.0);
    }
    if is(&[0.0, 1.0]) {
        return Ok(0.5);
    }
    let mut distinct: Vec<f64> = Vec::new();
    for (line, l, _) in raw {
        if !distinct.contains(l) {
            if distinct.len() == 2 {
                return Err(parse_err(*line, format!("unmappable label {l}")));
            }
            distinct.push(*l);
        }
    }
    if distinct.len() < 2 {
        return Err(parse_err(raw[0].0, format!("unmappable label {}", raw[0].1)));
    }
    Ok(0.5 * (distinct[0] + distinct[1]))
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset> {
    parse_libsvm(text.as_bytes())
}

pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    parse_libsvm(std::io::BufReader::new(file))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    Labelwise,
    FeatureKmeans,
    DirichletQuantity { alpha: f64 },
}

impl PartitionScheme {
    pub fn tag(&self) -> &'static str {
        match self {
            PartitionScheme::Iid => "iid",
            PartitionScheme::Labelwise => "labelwise",
            PartitionScheme::FeatureKmeans => "feature_kmeans",
            PartitionScheme::DirichletQuantity { .. } => "dirichlet_quantity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientPartition {
    pub assignments: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
}

impl ClientPartition {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Checks nonempty, disjoint lists of in-range indices.
    pub fn validate(&self, count: usize) -> Result<()> {
        let mut seen = vec![false; count];
        for (i, list) in self.assignments.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Partition(format!("client {i} is empty")));
            }
            for &e in list {
                if e >= count {
                    return Err(Error::Partition(format!("index {e} out of range")));
                }
                if std::mem::replace(&mut seen[e], true) {
                    return Err(Error::Partition(format!("index {e} assigned twice")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str, count: usize) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate(count)?;
        Ok(p)
    }
}

pub fn partition(
    ds: &Dataset,
    scheme: PartitionScheme,
    n: usize,
    seed: u64,
) -> Result<ClientPartition> {
    let count = ds.count();
    if n == 0 {
        return Err(Error::invalid("client count must be >= 1"));
    }
    if n > count {
        return Err(Error::Partition(format!(
            "{n} clients but only {count} examples"
        )));
    }
    let mut rng = rng::server_stream(seed, 0);
    let assignments = match scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..count).collect();
            idx.shuffle(&mut rng);
            let base = count / n;
            let mut sizes = vec![base; n];
            sizes[n - 1] += count - base * n;
            cut(&idx, &sizes)
        }
        PartitionScheme::Labelwise => labelwise(ds, n, &mut rng)?,
        PartitionScheme::FeatureKmeans => feature_kmeans(ds, n, seed)?,
        PartitionScheme::DirichletQuantity { alpha } => dirichlet(count, n, alpha, seed)?,
    };
    let p = ClientPartition {
        assignments,
        scheme,
    };
    p.validate(count)?;
    Ok(p)
}

fn cut(idx: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        let mut chunk = idx[start..start + s].to_vec();
        chunk.sort_unstable();
        out.push(chunk);
        start += s;
    }
    out
}

/// Client `i` (0-based) receives `m` examples with positive fraction `(i + 1) / n`.
/// `m` is the largest common size the label pools support; leftovers stay unassigned.
fn labelwise(ds: &Dataset, n: usize, rng: &mut StreamRng) -> Result<Vec<Vec<usize>>> {
    let mut pos: Vec<usize> = (0..ds.count()).filter(|&e| ds.examples[e].label > 0).collect();
    let mut neg: Vec<usize> = (0..ds.count()).filter(|&e| ds.examples[e].label < 0).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let n_pos = |m: usize, i: usize| ((m * (i + 1)) as f64 / n as f64).round() as usize;
    let mut m = ds.count() / n;
    loop {
        if m == 0 {
            return Err(Error::Partition(
                "label pools too small for a labelwise split".into(),
            ));
        }
        let need_pos: usize = (0..n).map(|i| n_pos(m, i)).sum();
        let need_neg = m * n - need_pos;
        if need_pos <= pos.len() && need_neg <= neg.len() {
            break;
        }
        m -= 1;
    }
    let (mut p, mut q) = (0, 0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = n_pos(m, i);
        let mut list: Vec<usize> = pos[p..p + k].to_vec();
        list.extend_from_slice(&neg[q..q + m - k]);
        list.sort_unstable();
        p += k;
        q += m - k;
        out.push(list);
    }
    Ok(out)
}

fn feature_kmeans(ds: &Dataset, n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let rows: Vec<Vec<f64>> = (0..ds.count()).map(|e| ds.dense_row(e)).collect();
    for attempt in 0..KMEANS_RETRIES {
        let mut rng = rng::server_stream(seed, 1 + attempt);
        let c = kmeans(&rows, n, &mut rng)?;
        if c.cluster_sizes().iter().all(|&s| s > 0) {
            return Ok(c.members());
        }
    }
    Err(Error::Partition(format!(
        "k-means left a cluster empty after {KMEANS_RETRIES} attempts"
    )))
}

fn dirichlet(count: usize, n: usize, alpha: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("dirichlet alpha must be > 0, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    for attempt in 0..DIRICHLET_RETRIES {
        let mut rng = rng::server_stream(seed, 1 + attempt);
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        if !(total > 0.0) {
            continue;
        }
        let sizes = largest_remainder(&draws, total, count);
        if sizes.iter().all(|&s| s > 0) {
            let mut idx: Vec<usize> = (0..count).collect();
            idx.shuffle(&mut rng);
            return Ok(cut(&idx, &sizes));
        }
    }
    Err(Error::Partition(format!(
        "a client stayed empty after {DIRICHLET_RETRIES} Dirichlet draws"
    )))
}

fn largest_remainder(weights: &[f64], total: f64, count: usize) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * count as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(count.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Quadratic clients `f_i(x) = (mu_i / 2) ||x - c_i||^2`.
///
/// The minimizer is `sum mu_i c_i / sum mu_i` and `grad f_i(x*) = mu_i (x* - c_i)`.
pub fn synth_quadratic(mu: &[f64], centers: &[Vec<f64>]) -> Result<Problem> {
    if mu.len() != centers.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            got: centers.len(),
        });
    }
    if let Some(bad) = mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::invalid(format!("mu_i must be positive, got {bad}")));
    }
    Problem::quadratic(
        mu.iter()
            .zip(centers)
            .map(|(&m, c)| QuadraticClient::isotropic(m, c.clone()))
            .collect(),
    )
}

/// Closed-form minimizer of an isotropic quadratic fixture.
pub fn quadratic_optimum(mu: &[f64], centers: &[Vec<f64>]) -> Vec<f64> {
    let total: f64 = mu.iter().sum();
    let mut x = vec![0.0; centers[0].len()];
    for (m, c) in mu.iter().zip(centers) {
        for (xk, ck) in x.iter_mut().zip(c) {
            *xk += m * ck;
        }
    }
    x.iter_mut().for_each(|v| *v /= total);
    x
}

/// The vectors `(0,1), (1,0), (0,-1), (-1,0)`.
pub fn unit_cross() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 1.0],
        vec![1.0, 0.0],
        vec![0.0, -1.0],
        vec![-1.0, 0.0],
    ]
}

/// Four unit-curvature quadratics centered at `-a_i`, so `x* = 0` and
/// `grad f_i(x*) = a_i` for the unit-cross vectors `a_i`.
pub fn unit_cross_problem() -> Problem {
    let centers: Vec<Vec<f64>> = unit_cross()
        .into_iter()
        .map(|a| a.into_iter().map(|v| -v).collect())
        .collect();
    synth_quadratic(&[1.0; 4], &centers).expect("fixture is valid")
}

/// Random isotropic quadratics with the given curvatures and centers drawn from
/// `N(0, spread^2 I)`.
pub fn random_quadratic(mu: &[f64], dim: usize, spread: f64, seed: u64) -> Result<Problem> {
    let mut rng = rng::server_stream(seed, 0);
    let centers: Vec<Vec<f64>> = mu
        .iter()
        .map(|_| {
            (0..dim)
                .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    synth_quadratic(mu, &centers)
}

/// Knobs for the synthetic heterogeneous binary classification fixture.
///
/// Every client has its own feature mean and its own labeling vector, both
/// perturbed from shared ones by `heterogeneity`. With `groups > 0` the clients
/// are split into that many contiguous groups sharing mean and labeling vector,
/// so clients differ within a group only through their samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthClassification {
    pub clients: usize,
    pub per_client: usize,
    pub dim: usize,
    #[serde(default = "default_heterogeneity")]
    pub heterogeneity: f64,
    #[serde(default)]
    pub groups: usize,
    /// Ratio of the largest to the smallest per-coordinate feature variance.
    #[serde(default = "default_condition")]
    pub feature_condition: f64,
    /// With groups, clients of one group share their samples up to this much
    /// per-feature jitter (labels shared too). `None` draws independent samples.
    #[serde(default)]
    pub sample_jitter: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_condition() -> f64 {
    1.0
}

fn default_heterogeneity() -> f64 {
    1.0
}

impl SynthClassification {
    /// Heterogeneity 1, no groups, isotropic features.
    pub fn new(clients: usize, per_client: usize, dim: usize, seed: u64) -> Self {
        Self {
            clients,
            per_client,
            dim,
            heterogeneity: default_heterogeneity(),
            groups: 0,
            feature_condition: default_condition(),
            sample_jitter: None,
            seed,
        }
    }

    /// Returns the pooled dataset and the client partition (client `i` owns a
    /// contiguous block of `per_client` examples).
    pub fn generate(&self) -> Result<(Dataset, ClientPartition)> {
        if self.clients == 0 || self.per_client == 0 || self.dim == 0 {
            return Err(Error::invalid("clients, per_client and dim must be positive"));
        }
        if !(self.heterogeneity >= 0.0) {
            return Err(Error::invalid("heterogeneity must be >= 0"));
        }
        if !(self.feature_condition >= 1.0 && self.feature_condition.is_finite()) {
            return Err(Error::invalid("feature_condition must be >= 1"));
        }
        if self.groups > self.clients {
            return Err(Error::invalid("more groups than clients"));
        }
        if let Some(j) = self.sample_jitter {
            if !(j >= 0.0 && j.is_finite()) || self.groups == 0 {
                return Err(Error::invalid("sample_jitter needs groups and a value >= 0"));
            }
        }
        let d = self.dim;
        let mut g = rng::server_stream(self.seed, 0);
        let w0: Vec<f64> = (0..d).map(|_| g.sample(StandardNormal)).collect();
        let base = 1.0 / (d as f64).sqrt();
        let scale: Vec<f64> = (0..d)
            .map(|k| {
                let frac = if d > 1 { k as f64 / (d - 1) as f64 } else { 0.0 };
                base * self.feature_condition.powf(-0.5 * frac)
            })
            .collect();
        let mut examples = Vec::with_capacity(self.clients * self.per_client);
        let mut assignments = Vec::with_capacity(self.clients);
        for i in 0..self.clients {
            let owner = self.group_of(i).unwrap_or(i);
            let mut r = rng::stream(self.seed, owner as u64, 0);
            let w: Vec<f64> = w0
                .iter()
                .map(|v| v + self.heterogeneity * r.sample::<f64, _>(StandardNormal))
                .collect();
            let shift: Vec<f64> = (0..d)
                .map(|_| self.heterogeneity * r.sample::<f64, _>(StandardNormal))
                .collect();
            let shared = self.sample_jitter.is_some();
            let mut r = rng::stream(self.seed, if shared { owner } else { i } as u64, 1);
            let mut jr = rng::stream(self.seed, i as u64, 2);
            let jitter = self.sample_jitter.unwrap_or(0.0);
            let start = examples.len();
            for _ in 0..self.per_client {
                let a: Vec<f64> = shift
                    .iter()
                    .zip(&scale)
                    .map(|(s, c)| {
                        let mut v = s + r.sample::<f64, _>(StandardNormal);
                        if shared {
                            v += jitter * jr.sample::<f64, _>(StandardNormal);
                        }
                        c * v
                    })
                    .collect();
                let z: f64 = a.iter().zip(&w).map(|(x, y)| x * y).sum();
                let p = 1.0 / (1.0 + (-z).exp());
                let label = if r.random::<f64>() < p { 1 } else { -1 };
                examples.push(Example {
                    label,
                    features: a.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect(),
                });
            }
            assignments.push((start..examples.len()).collect());
        }
        let ds = Dataset::new(examples, d)?;
        Ok((
            ds,
            ClientPartition {
                assignments,
                scheme: PartitionScheme::FeatureKmeans,
            },
        ))
    }

    pub fn group_of(&self, client: usize) -> Option<usize> {
        (self.groups > 0).then(|| client * self.groups / self.clients)
    }

    /// Client indices per group (empty when `groups == 0`).
    pub fn group_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.groups];
        for i in 0..self.clients {
            if let Some(g) = self.group_of(i) {
                out[g].push(i);
            }
        }
        out
    }

    pub fn problem(&self, kind: ProblemKind, mu: f64) -> Result<Problem> {
        let (ds, part) = self.generate()?;
        match kind {
            ProblemKind::L2Logistic => Problem::l2_logistic(&ds, &part, mu),
            ProblemKind::NonconvexLogistic => Problem::nonconvex_logistic(&ds, &part, mu),
            ProblemKind::Quadratic => Err(Error::invalid("classification fixture is logistic")),
        }
    }
}

/// Builds a logistic problem directly from explicit client rows (0-based indices).
pub fn logistic_from_rows(
    kind: ProblemKind,
    dim: usize,
    clients: Vec<(Vec<Vec<(usize, f64)>>, Vec<f64>)>,
    mu: f64,
) -> Result<Problem> {
    Problem::from_logistic_clients(
        kind,
        dim,
        clients
            .into_iter()
            .map(|(rows, labels)| LogisticClient::new(rows, labels))
            .collect(),
        mu,
    )
}

/// Distinct labels present in the dataset (sorted).
pub fn label_set(ds: &Dataset) -> BTreeSet<i8> {
    ds.examples.iter().map(|e| e.label).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{reference_solution, Regularizer, REFERENCE_TOL};

    #[test]
    fn parses_single_line() {
        let ds = parse_libsvm_str("+1 1:0.5 3:-2.0").unwrap();
        assert_eq!(ds.count(), 1);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.examples()[0].label, 1);
        assert_eq!(ds.examples()[0].features, vec![(0, 0.5), (2, -2.0)]);
    }

    #[test]
    fn rejects_nonincreasing_index() {
        match parse_libsvm_str("+1 3:1 2:1") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_tokens_carry_line_number() {
        for bad in ["+1 1:0.5\n-1 x:1", "+1 1:0.5\n-1 2", "+1 1:0.5\nfoo 1:1", "+1 1:1\n-1 0:1"] {
            match parse_libsvm_str(bad) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, 2, "{bad}"),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn label_mappings() {
        let ds = parse_libsvm_str("0 1:1\n1 2:1\n").unwrap();
        assert_eq!(label_set(&ds), [-1, 1].into_iter().collect());
        assert_eq!(ds.examples()[0].label, -1);
        let ds = parse_libsvm_str("2 1:1\n1 2:1\n").unwrap();
        assert_eq!(ds.examples()[0].label, 1);
        assert_eq!(ds.examples()[1].label, -1);
        assert!(parse_libsvm_str("1 1:1\n2 1:1\n3 1:1").is_err());
        assert!(parse_libsvm_str("5 1:1").is_err());
    }

    #[test]
    fn round_trip_exact() {
        let text = "+1 1:0.1 4:-3.25e-7\n-1 2:1\n-1 1:0.30000000000000004 5:2\n";
        let ds = parse_libsvm_str(text).unwrap();
        let again = parse_libsvm_str(&ds.to_libsvm()).unwrap();
        assert_eq!(ds, again);
    }

    fn toy(count: usize) -> Dataset {
        let examples = (0..count)
            .map(|i| Example {
                label: if i % 3 == 0 { 1 } else { -1 },
                features: vec![(0, i as f64), (1, (i % 7) as f64 + 1.0)],
            })
            .collect();
        Dataset::new(examples, 2).unwrap()
    }

    #[test]
    fn iid_one_per_client() {
        let ds = toy(12);
        let p = partition(&ds, PartitionScheme::Iid, 12, 3).unwrap();
        assert!(p.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn too_many_clients_is_an_error() {
        assert!(partition(&toy(5), PartitionScheme::Iid, 6, 0).is_err());
    }

    #[test]
    fn labelwise_fractions() {
        let examples = (0..400)
            .map(|i| Example {
                label: if i % 2 == 0 { 1 } else { -1 },
                features: vec![(0, 1.0)],
            })
            .collect();
        let ds = Dataset::new(examples, 1).unwrap();
        let p = partition(&ds, PartitionScheme::Labelwise, 2, 9).unwrap();
        let frac = |list: &Vec<usize>| {
            list.iter().filter(|&&e| ds.examples()[e].label > 0).count() as f64 / list.len() as f64
        };
        assert!((frac(&p.assignments[0]) - 0.5).abs() < 0.01);
        assert_eq!(frac(&p.assignments[1]), 1.0);
    }

    #[test]
    fn dirichlet_sizes_cover_everything() {
        let ds = toy(1000);
        let p = partition(
            &ds,
            PartitionScheme::DirichletQuantity { alpha: 0.5 },
            10,
            4,
        )
        .unwrap();
        assert_eq!(p.sizes().iter().sum::<usize>(), 1000);
        assert!(p.sizes().iter().all(|&s| s >= 1));
    }

    #[test]
    fn feature_kmeans_partition_is_valid() {
        let ds = toy(60);
        let p = partition(&ds, PartitionScheme::FeatureKmeans, 3, 1).unwrap();
        p.validate(60).unwrap();
        assert_eq!(p.n(), 3);
    }

    #[test]
    fn partition_json_round_trip() {
        let ds = toy(30);
        let p = partition(&ds, PartitionScheme::Iid, 4, 2).unwrap();
        let back = ClientPartition::from_json(&p.to_json().unwrap(), 30).unwrap();
        assert_eq!(p, back);
        let bad = r#"{"assignments":[[0,1],[1]],"scheme":{"kind":"iid"}}"#;
        assert!(ClientPartition::from_json(bad, 30).is_err());
    }

    #[test]
    fn synth_quadratic_optima() {
        let p = synth_quadratic(&[1.0, 1.0], &[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(reference_solution(&p, &Regularizer::Zero, REFERENCE_TOL).unwrap(), vec![1.0]);
        let one = synth_quadratic(&[3.0], &[vec![4.0, -1.0]]).unwrap();
        assert_eq!(
            reference_solution(&one, &Regularizer::Zero, REFERENCE_TOL).unwrap(),
            vec![4.0, -1.0]
        );
        assert!(synth_quadratic(&[1.0, 0.0], &[vec![0.0], vec![1.0]]).is_err());
    }

    #[test]
    fn unit_cross_gradients_are_the_vectors() {
        let p = unit_cross_problem();
        let x = reference_solution(&p, &Regularizer::Zero, REFERENCE_TOL).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        for (i, a) in unit_cross().iter().enumerate() {
            assert_eq!(&p.grad(i, &x), a);
        }
    }

    #[test]
    fn synth_classification_is_deterministic() {
        let cfg = SynthClassification {
            clients: 5,
            per_client: 20,
            dim: 8,
            heterogeneity: 1.0,
            groups: 0,
            feature_condition: 1.0,
            sample_jitter: None,
            seed: 11,
        };
        let (a, pa) = cfg.generate().unwrap();
        let (b, pb) = cfg.generate().unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.count(), 100);
    }
}
