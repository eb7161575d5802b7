//! Discrete structural causal models over gender `G`, a gender-neutral
//! context `W`, a latent `Z := f_z(W, G, U_z)`, dataset selection `S`,
//! text `X` and the gendered target `Y`.
//!
//! Everything is finite, so claims about selection-induced dependence are
//! checked by exact enumeration of the joint distribution. Sampling exists
//! as a Monte Carlo counterpart.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

/// Largest domain allowed for any single variable or noise term.
pub const MAX_DOMAIN: usize = 16;
/// Largest joint table `enumerate_joint` will build.
pub const MAX_JOINT_CELLS: usize = 10_000_000;
/// Mutual information (nats) above which an exact table counts as dependent.
pub const TABLE_MI_THRESHOLD: f64 = 1e-9;
/// Significance level of the G-test on samples.
pub const SAMPLE_ALPHA: f64 = 0.01;
/// Agreement required between algebraically equal exact quantities.
pub const EXACT_TOLERANCE: f64 = 1e-12;

const PROB_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CausalError {
    #[error("{pointer}: {message}")]
    Validation { pointer: String, message: String },
    #[error("joint table would have {cells} cells (limit {MAX_JOINT_CELLS})")]
    TooLarge { cells: usize },
    #[error("conditioning event {0} has probability zero")]
    ZeroProbability(String),
    #[error("positivity violated: P(X={x}, G={g}) = 0 while P(G={g}) > 0")]
    Positivity { x: usize, g: usize },
    #[error("value {value} out of range for {var} (domain size {size})")]
    OutOfRange { var: Var, value: usize, size: usize },
    #[error("dataset is empty")]
    EmptyDataset,
}

pub type Result<T, E = CausalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    G,
    W,
    Z,
    X,
    Y,
    S,
}

impl Var {
    pub const ALL: [Var; 6] = [Var::G, Var::W, Var::Z, Var::X, Var::Y, Var::S];

    fn axis(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Which population's mechanism for `Z` applies. Only switches `f_z`; no
/// estimator consumes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    #[default]
    Source,
    Target,
}

fn default_unit_noise() -> Vec<f64> {
    vec![1.0]
}

/// A finite SCM. Maps are nested arrays indexed in argument order:
/// `f_z[w][g][u_z]`, `x_map[w][z][u_x]`, `y_map[x][g]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    #[serde(default)]
    pub name: String,
    /// P(G = 1).
    pub g_prior: f64,
    pub w_prior: Vec<f64>,
    pub u_z: Vec<f64>,
    pub z_size: usize,
    pub f_z: Vec<Vec<Vec<usize>>>,
    /// Mechanism for Z in the target population.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_z_target: Option<Vec<Vec<Vec<usize>>>>,
    #[serde(default)]
    pub domain: DomainTag,
    /// P(S = 1 | Z = z).
    pub selection: Vec<f64>,
    #[serde(default = "default_unit_noise")]
    pub u_x: Vec<f64>,
    pub x_size: usize,
    pub x_map: Vec<Vec<Vec<usize>>>,
    pub y_size: usize,
    pub y_map: Vec<Vec<usize>>,
    /// Transport reweighting term; recorded, never used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

fn invalid(pointer: impl Into<String>, message: impl Into<String>) -> CausalError {
    CausalError::Validation {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn check_distribution(pointer: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() || probs.len() > MAX_DOMAIN {
        return Err(invalid(
            pointer,
            format!("needs 1..={MAX_DOMAIN} entries, has {}", probs.len()),
        ));
    }
    for (i, p) in probs.iter().enumerate() {
        if !(p.is_finite() && *p >= 0.0) {
            return Err(invalid(format!("{pointer}/{i}"), format!("{p} is not a probability")));
        }
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(invalid(pointer, format!("sums to {total}, not 1")));
    }
    Ok(())
}

fn check_probability(pointer: &str, p: f64) -> Result<()> {
    if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
        return Err(invalid(pointer, format!("{p} is not a probability")));
    }
    Ok(())
}

fn check_size(pointer: &str, size: usize) -> Result<()> {
    if size == 0 || size > MAX_DOMAIN {
        return Err(invalid(pointer, format!("domain size must be 1..={MAX_DOMAIN}")));
    }
    Ok(())
}

fn check_map3(pointer: &str, map: &[Vec<Vec<usize>>], dims: [usize; 3], range: usize) -> Result<()> {
    if map.len() != dims[0] {
        return Err(invalid(
            pointer,
            format!("expected {} rows, found {}", dims[0], map.len()),
        ));
    }
    for (i, plane) in map.iter().enumerate() {
        if plane.len() != dims[1] {
            return Err(invalid(
                format!("{pointer}/{i}"),
                format!("expected {} entries, found {}", dims[1], plane.len()),
            ));
        }
        for (j, row) in plane.iter().enumerate() {
            if row.len() != dims[2] {
                return Err(invalid(
                    format!("{pointer}/{i}/{j}"),
                    format!("expected {} entries, found {}", dims[2], row.len()),
                ));
            }
            for (k, v) in row.iter().enumerate() {
                if *v >= range {
                    return Err(invalid(
                        format!("{pointer}/{i}/{j}/{k}"),
                        format!("value {v} outside domain of size {range}"),
                    ));
                }
            }
        }
    }
    Ok(())
}

impl DgpSpec {
    /// Parses and validates a JSON document. Errors carry a JSON pointer to
    /// the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: DgpSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            invalid(pointer, e.into_inner().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn w_size(&self) -> usize {
        self.w_prior.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("/g_prior", self.g_prior)?;
        check_distribution("/w_prior", &self.w_prior)?;
        check_distribution("/u_z", &self.u_z)?;
        check_distribution("/u_x", &self.u_x)?;
        check_size("/z_size", self.z_size)?;
        check_size("/x_size", self.x_size)?;
        check_size("/y_size", self.y_size)?;
        let nw = self.w_size();
        check_map3("/f_z", &self.f_z, [nw, 2, self.u_z.len()], self.z_size)?;
        if let Some(target) = &self.f_z_target {
            check_map3("/f_z_target", target, [nw, 2, self.u_z.len()], self.z_size)?;
        } else if self.domain == DomainTag::Target {
            return Err(invalid("/f_z_target", "required when domain is `target`"));
        }
        if self.selection.len() != self.z_size {
            return Err(invalid(
                "/selection",
                format!("expected {} entries, found {}", self.z_size, self.selection.len()),
            ));
        }
        for (i, p) in self.selection.iter().enumerate() {
            check_probability(&format!("/selection/{i}"), *p)?;
        }
        check_map3("/x_map", &self.x_map, [nw, self.z_size, self.u_x.len()], self.x_size)?;
        if self.y_map.len() != self.x_size {
            return Err(invalid(
                "/y_map",
                format!("expected {} rows, found {}", self.x_size, self.y_map.len()),
            ));
        }
        for (x, row) in self.y_map.iter().enumerate() {
            if row.len() != 2 {
                return Err(invalid(format!("/y_map/{x}"), "expected 2 entries (one per G)"));
            }
            for (g, y) in row.iter().enumerate() {
                if *y >= self.y_size {
                    return Err(invalid(
                        format!("/y_map/{x}/{g}"),
                        format!("value {y} outside domain of size {}", self.y_size),
                    ));
                }
            }
        }
        if let Some(gamma) = self.gamma {
            if !gamma.is_finite() {
                return Err(invalid("/gamma", "must be finite"));
            }
        }
        Ok(())
    }

    /// The `Z` mechanism selected by the domain tag.
    pub fn active_f_z(&self) -> &[Vec<Vec<usize>>] {
        match (self.domain, &self.f_z_target) {
            (DomainTag::Target, Some(t)) => t,
            _ => &self.f_z,
        }
    }

    fn g_probs(&self) -> [f64; 2] {
        [1.0 - self.g_prior, self.g_prior]
    }

    pub fn sizes(&self) -> [usize; 6] {
        [2, self.w_size(), self.z_size, self.x_size, self.y_size, 2]
    }

    /// Whether `f_z` varies with `W` (resp. `G`) for some other arguments fixed.
    pub fn f_z_dependence(&self) -> (bool, bool) {
        let f = self.active_f_z();
        let nu = self.u_z.len();
        let mut on_w = false;
        let mut on_g = false;
        for w in 0..self.w_size() {
            for u in 0..nu {
                on_g |= f[w][0][u] != f[w][1][u];
                for g in 0..2 {
                    on_w |= f[w][g][u] != f[0][g][u];
                }
            }
        }
        (on_w, on_g)
    }

    /// Deterministic OR/XOR-style collider: G, W ~ Bernoulli(½),
    /// Z = gate(G, W), S = Z, X = W, Y = G.
    pub fn binary_gate(name: &str, gate: impl Fn(usize, usize) -> usize, selection: [f64; 2]) -> Self {
        Self {
            name: name.to_string(),
            g_prior: 0.5,
            w_prior: vec![0.5, 0.5],
            u_z: vec![1.0],
            z_size: 2,
            f_z: (0..2).map(|w| (0..2).map(|g| vec![gate(g, w)]).collect()).collect(),
            f_z_target: None,
            domain: DomainTag::Source,
            selection: selection.to_vec(),
            u_x: vec![1.0],
            x_size: 2,
            x_map: (0..2).map(|w| (0..2).map(|_| vec![w]).collect()).collect(),
            y_size: 2,
            y_map: (0..2).map(|_| vec![0, 1]).collect(),
            gamma: None,
        }
    }

    /// Threshold-logistic collider `Z = 1{σ(a·W + b·G + c·U_z) > ½}` with
    /// binary `Z`, `Y = G` and text `X = 2·W + Z'`, where `Z'` is `Z` flipped
    /// with probability `report_flip`.
    pub fn threshold_logistic(params: &ThresholdLogistic) -> Self {
        let nw = params.w_levels.len();
        let f_z = params
            .w_levels
            .iter()
            .map(|&w| {
                (0..2)
                    .map(|g| {
                        params
                            .u_levels
                            .iter()
                            .map(|&u| usize::from(params.a * w + params.b * g as f64 + params.c * u > 0.0))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            name: params.name.clone(),
            g_prior: params.g_prior,
            w_prior: params.w_prior.clone(),
            u_z: params.u_probs.clone(),
            z_size: 2,
            f_z,
            f_z_target: None,
            domain: DomainTag::Source,
            selection: params.selection.to_vec(),
            u_x: if params.report_flip > 0.0 {
                vec![1.0 - params.report_flip, params.report_flip]
            } else {
                vec![1.0]
            },
            x_size: 2 * nw,
            x_map: (0..nw)
                .map(|w| {
                    (0..2)
                        .map(|z| {
                            let mut row = vec![2 * w + z];
                            if params.report_flip > 0.0 {
                                row.push(2 * w + 1 - z);
                            }
                            row
                        })
                        .collect()
                })
                .collect(),
            y_size: 2,
            y_map: (0..2 * nw).map(|_| vec![0, 1]).collect(),
            gamma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdLogistic {
    pub name: String,
    pub g_prior: f64,
    pub w_levels: Vec<f64>,
    pub w_prior: Vec<f64>,
    pub u_levels: Vec<f64>,
    pub u_probs: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub selection: [f64; 2],
    pub report_flip: f64,
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        "/".into()
    } else {
        out
    }
}

/// Exact joint over `(G, W, Z, X, Y, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    sizes: [usize; 6],
    strides: [usize; 6],
    probs: Vec<f64>,
}

fn strides_for(sizes: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; sizes.len()];
    for i in (0..sizes.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * sizes[i + 1];
    }
    strides
}

impl JointTable {
    fn zeros(sizes: [usize; 6]) -> Result<Self> {
        let cells = sizes.iter().try_fold(1usize, |acc, s| acc.checked_mul(*s));
        let cells = match cells {
            Some(c) if c <= MAX_JOINT_CELLS => c,
            Some(c) => return Err(CausalError::TooLarge { cells: c }),
            None => return Err(CausalError::TooLarge { cells: usize::MAX }),
        };
        let s = strides_for(&sizes);
        Ok(Self {
            sizes,
            strides: [s[0], s[1], s[2], s[3], s[4], s[5]],
            probs: vec![0.0; cells],
        })
    }

    pub fn sizes(&self) -> [usize; 6] {
        self.sizes
    }

    fn offset(&self, values: [usize; 6]) -> usize {
        values.iter().zip(self.strides).map(|(v, s)| v * s).sum()
    }

    fn decode(&self, mut offset: usize) -> [usize; 6] {
        let mut out = [0; 6];
        for i in 0..6 {
            out[i] = offset / self.strides[i];
            offset %= self.strides[i];
        }
        out
    }

    /// Probability of one full assignment, in `Var::ALL` order.
    pub fn prob(&self, values: [usize; 6]) -> f64 {
        self.probs[self.offset(values)]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = ([usize; 6], f64)> + '_ {
        self.probs.iter().enumerate().map(|(i, p)| (self.decode(i), *p))
    }

    /// Half the L1 distance between two tables of the same shape.
    pub fn total_variation(&self, other: &JointTable) -> f64 {
        assert_eq!(self.sizes, other.sizes, "tables differ in shape");
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    fn check_assignment(&self, var: Var, value: usize) -> Result<()> {
        let size = self.sizes[var.axis()];
        if value >= size {
            return Err(CausalError::OutOfRange { var, value, size });
        }
        Ok(())
    }
}

/// Exact joint distribution of the model.
pub fn enumerate_joint(spec: &DgpSpec) -> Result<JointTable> {
    spec.validate()?;
    let mut table = JointTable::zeros(spec.sizes())?;
    let f_z = spec.active_f_z();
    for (g, pg) in spec.g_probs().into_iter().enumerate() {
        for (w, pw) in spec.w_prior.iter().enumerate() {
            for (uz, pu) in spec.u_z.iter().enumerate() {
                let z = f_z[w][g][uz];
                let sel = spec.selection[z];
                for (ux, pux) in spec.u_x.iter().enumerate() {
                    let x = spec.x_map[w][z][ux];
                    let y = spec.y_map[x][g];
                    let base = pg * pw * pu * pux;
                    let o0 = table.offset([g, w, z, x, y, 0]);
                    let o1 = table.offset([g, w, z, x, y, 1]);
                    table.probs[o0] += base * (1.0 - sel);
                    table.probs[o1] += base * sel;
                }
            }
        }
    }
    Ok(table)
}

/// A distribution over a subset of variables, stored densely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub vars: Vec<Var>,
    pub sizes: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn get(&self, values: &[usize]) -> f64 {
        let strides = strides_for(&self.sizes);
        self.probs[values.iter().zip(strides).map(|(v, s)| v * s).sum::<usize>()]
    }
}

fn describe(condition: &[(Var, usize)]) -> String {
    let parts: Vec<String> = condition.iter().map(|(v, x)| format!("{v}={x}")).collect();
    format!("{{{}}}", parts.join(", "))
}

/// `P(keep | condition)`, exactly.
pub fn marginalize(table: &JointTable, keep: &[Var], condition: &[(Var, usize)]) -> Result<Distribution> {
    for (var, value) in condition {
        table.check_assignment(*var, *value)?;
    }
    let sizes: Vec<usize> = keep.iter().map(|v| table.sizes[v.axis()]).collect();
    let strides = strides_for(&sizes);
    let mut probs = vec![0.0; sizes.iter().product()];
    let mut mass = 0.0;
    for (values, p) in table.iter() {
        if p == 0.0 || condition.iter().any(|(v, x)| values[v.axis()] != *x) {
            continue;
        }
        let idx: usize = keep.iter().zip(&strides).map(|(v, s)| values[v.axis()] * s).sum();
        probs[idx] += p;
        mass += p;
    }
    if mass <= 0.0 {
        return Err(CausalError::ZeroProbability(describe(condition)));
    }
    for p in &mut probs {
        *p /= mass;
    }
    Ok(Distribution {
        vars: keep.to_vec(),
        sizes,
        probs,
    })
}

fn event_prob(table: &JointTable, event: &[(Var, usize)]) -> f64 {
    table
        .iter()
        .filter(|(values, _)| event.iter().all(|(v, x)| values[v.axis()] == *x))
        .map(|(_, p)| p)
        .sum()
}

/// One ancestral draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub g: usize,
    pub w: usize,
    pub z: usize,
    pub x: usize,
    pub y: usize,
    pub s: usize,
}

impl Record {
    fn values(&self) -> [usize; 6] {
        [self.g, self.w, self.z, self.x, self.y, self.s]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sizes: [usize; 6],
    pub records: Vec<Record>,
}

impl Dataset {
    /// Relative frequencies as a table comparable with `enumerate_joint`.
    pub fn empirical(&self) -> Result<JointTable> {
        if self.records.is_empty() {
            return Err(CausalError::EmptyDataset);
        }
        let mut table = JointTable::zeros(self.sizes)?;
        let w = 1.0 / self.records.len() as f64;
        for r in &self.records {
            let o = table.offset(r.values());
            table.probs[o] += w;
        }
        Ok(table)
    }
}

/// `n` i.i.d. draws in topological order `G, W, U_z, Z, S, U_x, X, Y`.
pub fn sample(spec: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weighted =
        |probs: &[f64], ptr: &str| WeightedIndex::new(probs).map_err(|e| invalid(ptr.to_string(), e.to_string()));
    let w_dist = weighted(&spec.w_prior, "/w_prior")?;
    let uz_dist = weighted(&spec.u_z, "/u_z")?;
    let ux_dist = weighted(&spec.u_x, "/u_x")?;
    let f_z = spec.active_f_z();
    let records = (0..n)
        .map(|_| {
            let g = usize::from(rng.random::<f64>() < spec.g_prior);
            let w = w_dist.sample(&mut rng);
            let z = f_z[w][g][uz_dist.sample(&mut rng)];
            let s = usize::from(rng.random::<f64>() < spec.selection[z]);
            let x = spec.x_map[w][z][ux_dist.sample(&mut rng)];
            let y = spec.y_map[x][g];
            Record { g, w, z, x, y, s }
        })
        .collect();
    Ok(Dataset {
        sizes: spec.sizes(),
        records,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum DependenceSource<'a> {
    Table(&'a JointTable),
    Dataset(&'a Dataset),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceReport {
    /// Nats; exact on tables, plug-in on samples.
    pub mutual_information: f64,
    /// `2·N·MI`, only defined for samples.
    pub g_test_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub degrees_of_freedom: usize,
    pub n: Option<usize>,
    pub dependent: bool,
}

fn mutual_information(joint: &[f64], na: usize, nb: usize) -> f64 {
    let mut pa = vec![0.0; na];
    let mut pb = vec![0.0; nb];
    for i in 0..na {
        for j in 0..nb {
            pa[i] += joint[i * nb + j];
            pb[j] += joint[i * nb + j];
        }
    }
    let mut mi = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let p = joint[i * nb + j];
            if p > 0.0 {
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Dependence between `a` and `b`, optionally within a conditioning slice.
pub fn test_independence(
    source: DependenceSource<'_>,
    a: Var,
    b: Var,
    conditioning: &[(Var, usize)],
) -> Result<DependenceReport> {
    match source {
        DependenceSource::Table(table) => {
            let dist = marginalize(table, &[a, b], conditioning)?;
            let mi = mutual_information(&dist.probs, dist.sizes[0], dist.sizes[1]);
            Ok(DependenceReport {
                mutual_information: mi,
                g_test_statistic: None,
                p_value: None,
                degrees_of_freedom: (dist.sizes[0] - 1) * (dist.sizes[1] - 1),
                n: None,
                dependent: mi > TABLE_MI_THRESHOLD,
            })
        }
        DependenceSource::Dataset(data) => {
            let (na, nb) = (data.sizes[a.axis()], data.sizes[b.axis()]);
            let mut counts = vec![0usize; na * nb];
            for r in &data.records {
                let v = r.values();
                if conditioning.iter().all(|(var, x)| v[var.axis()] == *x) {
                    counts[v[a.axis()] * nb + v[b.axis()]] += 1;
                }
            }
            let n: usize = counts.iter().sum();
            if n == 0 {
                return Err(CausalError::ZeroProbability(describe(conditioning)));
            }
            let joint: Vec<f64> = counts.iter().map(|c| *c as f64 / n as f64).collect();
            let mi = mutual_information(&joint, na, nb);
            let g = 2.0 * n as f64 * mi;
            let df = (na - 1) * (nb - 1);
            let p_value = if df == 0 {
                1.0
            } else {
                ChiSquared::new(df as f64).expect("df > 0").sf(g)
            };
            Ok(DependenceReport {
                mutual_information: mi,
                g_test_statistic: Some(g),
                p_value: Some(p_value),
                degrees_of_freedom: df,
                n: Some(n),
                dependent: p_value < SAMPLE_ALPHA,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColliderStatus {
    /// All three checks hold.
    Verified,
    /// Selection induces no G–W dependence (f_z effects cancel or are absent).
    Degenerate,
    /// A check that must hold for every model failed.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColliderReport {
    pub status: ColliderStatus,
    pub f_z_depends_on_w: bool,
    pub f_z_depends_on_g: bool,
    /// MI(G; W) in the full population.
    pub unselected: DependenceReport,
    /// MI(G; W | S = 1).
    pub selected: DependenceReport,
    /// Largest |P(G | X, S=1) − Σ_z P(G | X, z, S=1) P(z | X, S=1)|.
    pub latent_expansion_gap: f64,
    pub independent_unselected: bool,
    pub dependent_under_selection: bool,
    pub latent_expansion_consistent: bool,
}

/// Checks that selection on a descendant of `Z` turns independent `G`, `W`
/// dependent, and that conditioning on `X` alone equals averaging over
/// the latent `Z` within the selected data.
pub fn verify_selection_collider(spec: &DgpSpec) -> Result<ColliderReport> {
    let table = enumerate_joint(spec)?;
    let (on_w, on_g) = spec.f_z_dependence();
    let unselected = test_independence(DependenceSource::Table(&table), Var::G, Var::W, &[])?;
    let selected = test_independence(DependenceSource::Table(&table), Var::G, Var::W, &[(Var::S, 1)])?;

    let mut gap: f64 = 0.0;
    for x in 0..spec.x_size {
        let Ok(direct) = marginalize(&table, &[Var::G], &[(Var::X, x), (Var::S, 1)]) else {
            continue;
        };
        let z_given_x = marginalize(&table, &[Var::Z], &[(Var::X, x), (Var::S, 1)])?;
        for g in 0..2 {
            let mut via = 0.0;
            for z in 0..spec.z_size {
                let pz = z_given_x.probs[z];
                if pz == 0.0 {
                    continue;
                }
                let g_given = marginalize(&table, &[Var::G], &[(Var::X, x), (Var::Z, z), (Var::S, 1)])?;
                via += g_given.probs[g] * pz;
            }
            gap = gap.max((direct.probs[g] - via).abs());
        }
    }

    let independent_unselected = !unselected.dependent;
    let dependent_under_selection = selected.dependent;
    let latent_expansion_consistent = gap <= EXACT_TOLERANCE;
    let status = if !dependent_under_selection {
        ColliderStatus::Degenerate
    } else if independent_unselected && latent_expansion_consistent {
        ColliderStatus::Verified
    } else {
        ColliderStatus::Failed
    };
    Ok(ColliderReport {
        status,
        f_z_depends_on_w: on_w,
        f_z_depends_on_g: on_g,
        unselected,
        selected,
        latent_expansion_gap: gap,
        independent_unselected,
        dependent_under_selection,
        latent_expansion_consistent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverabilityReport {
    /// max over (x, y) of |P(y | x, S=1) − P(y | x)|.
    pub max_gap: f64,
    /// The maximizing `(x, y)`.
    pub witness: Option<(usize, usize)>,
    pub recoverable: bool,
    /// Values of `x` skipped because P(x, S=1) = 0.
    pub skipped: Vec<String>,
}

/// Compares the selected and unselected conditionals of `Y` given `X`.
/// A nonzero gap witnesses that `Y` and `S` are dependent given `X`.
pub fn check_recoverability(spec: &DgpSpec) -> Result<RecoverabilityReport> {
    let table = enumerate_joint(spec)?;
    let mut max_gap: f64 = 0.0;
    let mut witness = None;
    let mut skipped = Vec::new();
    for x in 0..spec.x_size {
        let Ok(selected) = marginalize(&table, &[Var::Y], &[(Var::X, x), (Var::S, 1)]) else {
            skipped.push(format!("P(X={x}, S=1) = 0"));
            continue;
        };
        let population = marginalize(&table, &[Var::Y], &[(Var::X, x)])?;
        for y in 0..spec.y_size {
            let gap = (selected.probs[y] - population.probs[y]).abs();
            if witness.is_none() || gap > max_gap {
                max_gap = gap;
                witness = Some((x, y));
            }
        }
    }
    Ok(RecoverabilityReport {
        max_gap,
        witness,
        recoverable: max_gap < EXACT_TOLERANCE,
        skipped,
    })
}

/// `P(Y | do(X = x)) = Σ_g P(Y | x, g) P(g)` on the unselected joint.
pub fn backdoor_adjust(table: &JointTable, x_value: usize) -> Result<Vec<f64>> {
    table.check_assignment(Var::X, x_value)?;
    let g_marginal = marginalize(table, &[Var::G], &[])?;
    let ny = table.sizes[Var::Y.axis()];
    let mut out = vec![0.0; ny];
    for (g, pg) in g_marginal.probs.iter().enumerate() {
        if *pg == 0.0 {
            continue;
        }
        if event_prob(table, &[(Var::X, x_value), (Var::G, g)]) <= 0.0 {
            return Err(CausalError::Positivity { x: x_value, g });
        }
        let y_given = marginalize(table, &[Var::Y], &[(Var::X, x_value), (Var::G, g)])?;
        for (acc, p) in out.iter_mut().zip(&y_given.probs) {
            *acc += p * pg;
        }
    }
    Ok(out)
}

/// `P(Y | do(X = x))` by truncated factorization: re-enumerates the model
/// with the `X` mechanism replaced by the constant `x`.
pub fn interventional_y(spec: &DgpSpec, x_value: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if x_value >= spec.x_size {
        return Err(CausalError::OutOfRange {
            var: Var::X,
            value: x_value,
            size: spec.x_size,
        });
    }
    let mut out = vec![0.0; spec.y_size];
    let f_z = spec.active_f_z();
    for (g, pg) in spec.g_probs().into_iter().enumerate() {
        for (w, pw) in spec.w_prior.iter().enumerate() {
            for (uz, pu) in spec.u_z.iter().enumerate() {
                let z = f_z[w][g][uz];
                for s in 0..2 {
                    let ps = if s == 1 {
                        spec.selection[z]
                    } else {
                        1.0 - spec.selection[z]
                    };
                    out[spec.y_map[x_value][g]] += pg * pw * pu * ps;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentRow {
    pub x: usize,
    pub adjusted: Option<Vec<f64>>,
    pub interventional: Vec<f64>,
    pub max_abs_diff: Option<f64>,
    pub error: Option<String>,
}

/// Back-door estimate and truncated-factorization value for every `x`.
pub fn adjustment_table(spec: &DgpSpec) -> Result<Vec<AdjustmentRow>> {
    let table = enumerate_joint(spec)?;
    (0..spec.x_size)
        .map(|x| {
            let interventional = interventional_y(spec, x)?;
            Ok(match backdoor_adjust(&table, x) {
                Ok(adjusted) => {
                    let diff = adjusted
                        .iter()
                        .zip(&interventional)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    AdjustmentRow {
                        x,
                        adjusted: Some(adjusted),
                        interventional,
                        max_abs_diff: Some(diff),
                        error: None,
                    }
                }
                Err(e) => AdjustmentRow {
                    x,
                    adjusted: None,
                    interventional,
                    max_abs_diff: None,
                    error: Some(e.to_string()),
                },
            })
        })
        .collect()
}

/// Models shipped with the crate, by file name.
pub fn shipped_specs() -> Vec<(&'static str, DgpSpec)> {
    [
        ("or_gate.json", include_str!("../data/specs/or_gate.json")),
        ("xor_gate.json", include_str!("../data/specs/xor_gate.json")),
        (
            "access_threshold.json",
            include_str!("../data/specs/access_threshold.json"),
        ),
        (
            "constant_selection.json",
            include_str!("../data/specs/constant_selection.json"),
        ),
        (
            "gender_free_access.json",
            include_str!("../data/specs/gender_free_access.json"),
        ),
    ]
    .into_iter()
    .map(|(name, text)| (name, DgpSpec::from_json(text).expect("shipped spec is valid")))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn or_spec() -> DgpSpec {
        DgpSpec::binary_gate("or", |g, w| g | w, [0.0, 1.0])
    }

    fn cond(table: &JointTable, g: usize, given: &[(Var, usize)]) -> f64 {
        marginalize(table, &[Var::G], given).unwrap().probs[g]
    }

    #[test]
    fn or_gate_enumeration() {
        let t = enumerate_joint(&or_spec()).unwrap();
        assert_abs_diff_eq!(t.total(), 1.0, epsilon = 1e-12);
        let ps = marginalize(&t, &[Var::S], &[]).unwrap();
        assert_abs_diff_eq!(ps.probs[1], 0.75, epsilon = 1e-15);
        let gw = marginalize(&t, &[Var::G, Var::W], &[(Var::S, 1)]).unwrap();
        assert_abs_diff_eq!(gw.get(&[1, 1]), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gw.get(&[0, 0]), 0.0);
    }

    #[test]
    fn or_gate_conditionals() {
        let t = enumerate_joint(&or_spec()).unwrap();
        assert_abs_diff_eq!(cond(&t, 1, &[(Var::W, 1), (Var::S, 1)]), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cond(&t, 1, &[(Var::W, 0), (Var::S, 1)]), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cond(&t, 1, &[(Var::W, 1)]), 0.5, epsilon = 1e-15);
        assert!(matches!(
            marginalize(&t, &[Var::G], &[(Var::Z, 0), (Var::S, 1)]),
            Err(CausalError::ZeroProbability(_))
        ));
        assert!(matches!(
            marginalize(&t, &[Var::G], &[(Var::W, 5)]),
            Err(CausalError::OutOfRange { .. })
        ));
    }

    #[test]
    fn or_gate_dependence() {
        let t = enumerate_joint(&or_spec()).unwrap();
        let free = test_independence(DependenceSource::Table(&t), Var::G, Var::W, &[]).unwrap();
        assert!(free.mutual_information.abs() < 1e-15);
        assert!(!free.dependent);
        assert_eq!(free.degrees_of_freedom, 1);
        let sel = test_independence(DependenceSource::Table(&t), Var::G, Var::W, &[(Var::S, 1)]).unwrap();
        // Uniform over three cells with both marginals (1/3, 2/3).
        let oracle = (1.0f64 / 3.0) * (2.0 * (1.5f64).ln() + (0.75f64).ln());
        assert_abs_diff_eq!(sel.mutual_information, oracle, epsilon = 1e-12);
        assert!(sel.dependent);
    }

    #[test]
    fn factorized_table_has_zero_mi() {
        let mut t = JointTable::zeros([2, 3, 1, 1, 1, 1]).unwrap();
        let pa = [0.3, 0.7];
        let pb = [0.2, 0.5, 0.3];
        for g in 0..2 {
            for w in 0..3 {
                let o = t.offset([g, w, 0, 0, 0, 0]);
                t.probs[o] = pa[g] * pb[w];
            }
        }
        let r = test_independence(DependenceSource::Table(&t), Var::G, Var::W, &[]).unwrap();
        assert!(r.mutual_information < 1e-15);
        assert!(!r.dependent);
        assert_eq!(r.degrees_of_freedom, 2);
    }

    #[test]
    fn collider_verification() {
        let or = verify_selection_collider(&or_spec()).unwrap();
        assert_eq!(or.status, ColliderStatus::Verified);
        assert!(or.latent_expansion_gap <= 1e-12);

        let xor = verify_selection_collider(&DgpSpec::binary_gate("xor", |g, w| g ^ w, [0.0, 1.0])).unwrap();
        assert_eq!(xor.status, ColliderStatus::Verified);
        assert_abs_diff_eq!(xor.selected.mutual_information, 2f64.ln(), epsilon = 1e-12);

        let no_g = verify_selection_collider(&DgpSpec::binary_gate("w only", |_, w| w, [0.0, 1.0])).unwrap();
        assert_eq!(no_g.status, ColliderStatus::Degenerate);
        assert!(!no_g.f_z_depends_on_g);
        assert!(no_g.f_z_depends_on_w);
    }

    #[test]
    fn recoverability_examples() {
        let or = check_recoverability(&or_spec()).unwrap();
        assert!(!or.recoverable);
        assert_abs_diff_eq!(or.max_gap, 0.5, epsilon = 1e-15);
        assert_eq!(or.witness.map(|w| w.0), Some(0));

        let flat = check_recoverability(&DgpSpec::binary_gate("flat", |g, w| g | w, [0.4, 0.4])).unwrap();
        assert!(flat.recoverable);
        assert!(flat.max_gap < 1e-15);

        // Z = 2W + G and X = Z: the text reveals G, so selection adds nothing.
        let mut exposed = or_spec();
        exposed.z_size = 4;
        exposed.f_z = (0..2).map(|w| (0..2).map(|g| vec![2 * w + g]).collect()).collect();
        exposed.selection = vec![0.2, 0.9, 0.5, 0.7];
        exposed.x_size = 4;
        exposed.x_map = (0..2).map(|_| (0..4).map(|z| vec![z]).collect()).collect();
        exposed.y_map = (0..4).map(|x| vec![x % 2, x % 2]).collect();
        let r = check_recoverability(&exposed).unwrap();
        assert!(r.recoverable, "gap {}", r.max_gap);
        // X determines G, so no back-door estimate exists.
        let t = enumerate_joint(&exposed).unwrap();
        assert!(matches!(
            backdoor_adjust(&t, 0),
            Err(CausalError::Positivity { x: 0, g: 1 })
        ));
    }

    #[test]
    fn skipped_conditions_are_noted() {
        let mut spec = or_spec();
        spec.x_map = (0..2).map(|_| vec![vec![0], vec![1]]).collect(); // X = Z
        spec.selection = vec![0.0, 1.0];
        let r = check_recoverability(&spec).unwrap();
        assert_eq!(r.skipped.len(), 1);
    }

    #[test]
    fn backdoor_matches_truncated_factorization() {
        for (name, spec) in shipped_specs() {
            let rows = adjustment_table(&spec).unwrap();
            for row in rows {
                let diff = row.max_abs_diff.unwrap_or_else(|| panic!("{name}: {:?}", row.error));
                assert!(diff <= 1e-12, "{name} x={} diff {diff}", row.x);
            }
        }
    }

    #[test]
    fn backdoor_without_confounding_equals_conditional() {
        let mut spec = or_spec();
        spec.y_map = (0..2).map(|x| vec![x, x]).collect();
        let t = enumerate_joint(&spec).unwrap();
        for x in 0..2 {
            let adjusted = backdoor_adjust(&t, x).unwrap();
            let conditional = marginalize(&t, &[Var::Y], &[(Var::X, x)]).unwrap();
            for (a, b) in adjusted.iter().zip(&conditional.probs) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn threshold_family_confounds_x_and_y() {
        let (_, spec) = shipped_specs()
            .into_iter()
            .find(|(n, _)| *n == "access_threshold.json")
            .unwrap();
        let t = enumerate_joint(&spec).unwrap();
        let observed = marginalize(&t, &[Var::Y], &[(Var::X, 0)]).unwrap();
        let causal = interventional_y(&spec, 0).unwrap();
        assert!((observed.probs[1] - causal[1]).abs() > 1e-3);
        assert_eq!(
            verify_selection_collider(&spec).unwrap().status,
            ColliderStatus::Verified
        );
        assert!(!check_recoverability(&spec).unwrap().recoverable);
    }

    #[test]
    fn threshold_constructor_reproduces_shipped_spec() {
        let (_, shipped) = shipped_specs()
            .into_iter()
            .find(|(n, _)| *n == "access_threshold.json")
            .unwrap();
        let built = DgpSpec::threshold_logistic(&ThresholdLogistic {
            name: shipped.name.clone(),
            g_prior: 0.5,
            w_levels: vec![0.0, 1.0, 2.0],
            w_prior: shipped.w_prior.clone(),
            u_levels: vec![-2.5, -1.5, -0.5, 0.5, 1.5],
            u_probs: vec![0.2; 5],
            a: 1.0,
            b: -1.0,
            c: 1.0,
            selection: [0.1, 0.9],
            report_flip: 0.2,
        });
        assert_eq!(built, shipped);
        built.validate().unwrap();
    }

    #[test]
    fn sampling_basics() {
        let spec = or_spec();
        let one = sample(&spec, 1, 9).unwrap();
        assert_eq!(one.records.len(), 1);
        assert_eq!(sample(&spec, 500, 42).unwrap(), sample(&spec, 500, 42).unwrap());
        assert_ne!(sample(&spec, 500, 42).unwrap(), sample(&spec, 500, 43).unwrap());

        let data = sample(&spec, 400_000, 1).unwrap();
        let p_s = data.records.iter().filter(|r| r.s == 1).count() as f64 / 4e5;
        assert!((p_s - 0.75).abs() < 0.005, "{p_s}");
    }

    #[test]
    fn sample_dependence_tests() {
        let spec = or_spec();
        let data = sample(&spec, 20_000, 5).unwrap();
        let free = test_independence(DependenceSource::Dataset(&data), Var::G, Var::W, &[]).unwrap();
        let sel = test_independence(DependenceSource::Dataset(&data), Var::G, Var::W, &[(Var::S, 1)]).unwrap();
        assert!(sel.dependent);
        assert!(sel.p_value.unwrap() < 1e-10);
        let g = sel.g_test_statistic.unwrap();
        assert_abs_diff_eq!(g, 2.0 * sel.n.unwrap() as f64 * sel.mutual_information, epsilon = 1e-9);
        assert!(free.p_value.unwrap() > 1e-4);
        assert!(matches!(
            test_independence(
                DependenceSource::Dataset(&data),
                Var::G,
                Var::W,
                &[(Var::Z, 0), (Var::S, 1)]
            ),
            Err(CausalError::ZeroProbability(_))
        ));
    }

    #[test]
    fn validation_pointers() {
        let good = or_spec().to_json();
        assert_eq!(DgpSpec::from_json(&good).unwrap(), or_spec());

        let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
        v["f_z"][1][0][0] = 7.into();
        let err = DgpSpec::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().starts_with("/f_z/1/0/0:"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
        v["w_prior"] = serde_json::json!([0.5, 0.6]);
        assert!(DgpSpec::from_json(&v.to_string())
            .unwrap_err()
            .to_string()
            .starts_with("/w_prior:"));

        let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
        v["selection"][1] = "high".into();
        let err = DgpSpec::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().starts_with("/selection/1:"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
        v["domain"] = "target".into();
        assert!(DgpSpec::from_json(&v.to_string())
            .unwrap_err()
            .to_string()
            .starts_with("/f_z_target:"));
    }

    #[test]
    fn target_domain_switches_mechanism() {
        let mut spec = or_spec();
        spec.f_z_target = Some((0..2).map(|w| (0..2).map(|g| vec![g & w]).collect()).collect());
        spec.domain = DomainTag::Target;
        let t = enumerate_joint(&spec).unwrap();
        let ps = marginalize(&t, &[Var::S], &[]).unwrap();
        assert_abs_diff_eq!(ps.probs[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn shipped_specs_behave_as_labelled() {
        for (name, spec) in shipped_specs() {
            let c = verify_selection_collider(&spec).unwrap();
            let r = check_recoverability(&spec).unwrap();
            match name {
                "constant_selection.json" => {
                    assert_eq!(c.status, ColliderStatus::Degenerate);
                    assert!(r.recoverable);
                }
                "gender_free_access.json" => assert_eq!(c.status, ColliderStatus::Degenerate),
                _ => {
                    assert_eq!(c.status, ColliderStatus::Verified, "{name}");
                    assert!(!r.recoverable, "{name}");
                }
            }
        }
    }

    fn arb_probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, n).prop_map(|ws| {
            let total: f64 = ws.iter().sum();
            let mut ps: Vec<f64> = ws.iter().map(|w| w / total).collect();
            let rest: f64 = ps[1..].iter().sum();
            ps[0] = 1.0 - rest;
            ps
        })
    }

    prop_compose! {
        fn arb_spec()(nw in 1usize..4, nz in 1usize..4, nu in 1usize..3, nx in 1usize..4, ny in 1usize..3)
            (g_prior in 0.05f64..0.95,
             w_prior in arb_probs(nw),
             u_z in arb_probs(nu),
             u_x in arb_probs(2),
             f_z in prop::collection::vec(prop::collection::vec(prop::collection::vec(0..nz, nu), 2), nw),
             selection in prop::collection::vec(0.0f64..1.0, nz),
             x_map in prop::collection::vec(prop::collection::vec(prop::collection::vec(0..nx, 2), nz), nw),
             y_map in prop::collection::vec(prop::collection::vec(0..ny, 2), nx),
             nz in Just(nz), nx in Just(nx), ny in Just(ny))
            -> DgpSpec {
            DgpSpec {
                name: "random".into(), g_prior, w_prior, u_z, z_size: nz, f_z, f_z_target: None,
                domain: DomainTag::Source, selection, u_x, x_size: nx, x_map, y_size: ny, y_map, gamma: None,
            }
        }
    }

    proptest! {
        #[test]
        fn joint_is_normalized_and_mi_nonnegative(spec in arb_spec()) {
            let t = enumerate_joint(&spec).unwrap();
            prop_assert!((t.total() - 1.0).abs() < 1e-12);
            for (a, b) in [(Var::G, Var::W), (Var::X, Var::Y), (Var::Z, Var::G)] {
                let r = test_independence(DependenceSource::Table(&t), a, b, &[]).unwrap();
                prop_assert!(r.mutual_information >= 0.0);
            }
            let r = test_independence(DependenceSource::Table(&t), Var::G, Var::W, &[]).unwrap();
            prop_assert!(!r.dependent);
        }

        #[test]
        fn constant_selection_is_recoverable(mut spec in arb_spec(), c in 0.05f64..1.0) {
            spec.selection = vec![c; spec.z_size];
            let r = check_recoverability(&spec).unwrap();
            prop_assert!(r.recoverable, "gap {}", r.max_gap);
        }

        #[test]
        fn backdoor_equals_intervention(spec in arb_spec()) {
            let t = enumerate_joint(&spec).unwrap();
            for x in 0..spec.x_size {
                match backdoor_adjust(&t, x) {
                    Ok(adjusted) => {
                        let oracle = interventional_y(&spec, x).unwrap();
                        for (a, b) in adjusted.iter().zip(&oracle) {
                            prop_assert!((a - b).abs() <= 1e-12);
                        }
                    }
                    Err(CausalError::Positivity { .. }) => {}
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            }
        }

        #[test]
        fn latent_expansion_always_consistent(spec in arb_spec()) {
            if let Ok(report) = verify_selection_collider(&spec) {
                prop_assert!(report.latent_expansion_gap <= 1e-12);
                prop_assert!(report.independent_unselected);
                prop_assert!(report.status != ColliderStatus::Failed);
            }
        }
    }
}
