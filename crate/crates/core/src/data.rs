//! Deterministic synthetic datasets.
//!
//! Grouped tasks share one base classification problem (Gaussian noise around
//! unit-norm class prototypes) and differ by a bijective feature transform per
//! group. The tabular generator plants a dependence of the label on a binary
//! protected attribute.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Batch;
use crate::seed;

/// Row-major labelled samples, optionally tagged with a protected attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub n_classes: usize,
    pub attributes: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, n_classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} features for {} rows of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {y} >= {n_classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            dim,
            n_classes,
            attributes: None,
        })
    }

    pub fn with_attributes(mut self, attributes: Vec<u8>) -> Result<Self> {
        if attributes.len() != self.len() {
            return Err(Error::ShapeMismatch("attribute count differs from row count".into()));
        }
        self.attributes = Some(attributes);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_batch(&self) -> Result<Batch<'_>> {
        Batch::new(&self.features, &self.labels, self.dim)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            n_classes: self.n_classes,
            attributes: self.attributes.as_ref().map(|a| idx.iter().map(|&i| a[i]).collect()),
        }
    }

    /// Rows whose attribute equals `value`; empty when no attributes are present.
    pub fn with_attribute_value(&self, value: u8) -> Dataset {
        let idx: Vec<usize> = match &self.attributes {
            Some(a) => (0..self.len()).filter(|&i| a[i] == value).collect(),
            None => Vec::new(),
        };
        self.subset(&idx)
    }

    /// Distinct attribute values present, ascending.
    pub fn attribute_values(&self) -> Vec<u8> {
        let mut v: Vec<u8> = self.attributes.clone().unwrap_or_default();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Splits off the first `round(train_frac * len)` rows after a seeded shuffle.
    pub fn split(&self, train_frac: f64, rng: &mut ChaCha8Rng) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let cut = (train_frac * self.len() as f64).round() as usize;
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }
}

/// A participant with a private train/test split and a ground-truth group.
#[derive(Debug, Clone, PartialEq)]
pub struct Client {
    pub id: usize,
    pub group: usize,
    pub train: Dataset,
    pub test: Dataset,
}

/// Bijective feature transform applied to one group's samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupTransform {
    Identity,
    /// `out[i] = in[perm[i]]`.
    Permutation(Vec<usize>),
    /// Rotates each consecutive coordinate pair `(2j, 2j+1)` by the angle (radians).
    PlanarRotation(f64),
}

impl GroupTransform {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            GroupTransform::Identity => x.to_vec(),
            GroupTransform::Permutation(p) => p.iter().map(|&j| x[j]).collect(),
            GroupTransform::PlanarRotation(theta) => rotate_pairs(x, *theta),
        }
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        match self {
            GroupTransform::Identity => y.to_vec(),
            GroupTransform::Permutation(p) => {
                let mut x = vec![0.0; y.len()];
                for (i, &j) in p.iter().enumerate() {
                    x[j] = y[i];
                }
                x
            }
            GroupTransform::PlanarRotation(theta) => rotate_pairs(y, -theta),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if let GroupTransform::Permutation(p) = self {
            let mut seen = vec![false; dim];
            if p.len() != dim || p.iter().any(|&j| j >= dim || std::mem::replace(&mut seen[j], true)) {
                return Err(Error::InvalidArgument(format!(
                    "permutation transform is not a bijection on {dim} coordinates"
                )));
            }
        }
        Ok(())
    }
}

fn rotate_pairs(x: &[f64], theta: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    let mut out = x.to_vec();
    for j in 0..x.len() / 2 {
        let (a, b) = (x[2 * j], x[2 * j + 1]);
        out[2 * j] = c * a - s * b;
        out[2 * j + 1] = s * a + c * b;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    #[default]
    CoordinatePermutation,
    PlanarRotation,
}

/// Group sizes and per-group transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub client_counts: Vec<usize>,
    pub transforms: Vec<GroupTransform>,
}

impl GroupSpec {
    /// Group 0 keeps the base task; every other group gets a transform of `kind`
    /// (a seeded random coordinate permutation, or a rotation by `g * 2π / n_groups`).
    pub fn new(client_counts: Vec<usize>, kind: TransformKind, dim: usize, seed: u64) -> Self {
        let n = client_counts.len();
        let transforms = (0..n)
            .map(|g| match (g, kind) {
                (0, _) => GroupTransform::Identity,
                (_, TransformKind::CoordinatePermutation) => {
                    let mut p: Vec<usize> = (0..dim).collect();
                    p.shuffle(&mut seed::rng(seed, &[seed::tag::GROUP_INIT, g as u64]));
                    GroupTransform::Permutation(p)
                }
                (_, TransformKind::PlanarRotation) => {
                    GroupTransform::PlanarRotation(g as f64 * std::f64::consts::TAU / n as f64)
                }
            })
            .collect();
        Self {
            client_counts,
            transforms,
        }
    }

    pub fn identity(client_counts: Vec<usize>) -> Self {
        let transforms = vec![GroupTransform::Identity; client_counts.len()];
        Self {
            client_counts,
            transforms,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.client_counts.len()
    }

    pub fn n_clients(&self) -> usize {
        self.client_counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataSpec {
    pub groups: GroupSpec,
    pub samples_per_client: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub train_fraction: f64,
}

/// Unit-norm Gaussian class prototypes.
pub fn class_prototypes(base_seed: u64, n_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(base_seed, &[seed::tag::DATA, 0]);
    (0..n_classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Draws `n` i.i.d. samples of the base task passed through `transform`.
pub fn sample_task(
    prototypes: &[Vec<f64>],
    transform: &GroupTransform,
    n: usize,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let n_classes = prototypes.len();
    let dim = prototypes[0].len();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..n_classes);
        let x: Vec<f64> = prototypes[y]
            .iter()
            .map(|&p| {
                let z: f64 = rng.sample(StandardNormal);
                p + noise_std * z
            })
            .collect();
        features.extend(transform.apply(&x));
        labels.push(y);
    }
    Dataset {
        features,
        labels,
        dim,
        n_classes,
        attributes: None,
    }
}

/// One client per slot of `spec.groups.client_counts`, ids assigned group by group.
pub fn make_grouped_dataset(base_seed: u64, spec: &GroupedDataSpec) -> Result<Vec<Client>> {
    if spec.feature_dim < 2 {
        return Err(Error::InvalidArgument("feature_dim must be at least 2".into()));
    }
    if spec.n_classes < 2 {
        return Err(Error::InvalidArgument("n_classes must be at least 2".into()));
    }
    if spec.samples_per_client < 2 {
        return Err(Error::InvalidArgument("samples_per_client must be at least 2".into()));
    }
    let g = &spec.groups;
    if g.client_counts.is_empty() || g.client_counts.contains(&0) {
        return Err(Error::InvalidArgument("every group needs at least one client".into()));
    }
    if g.transforms.len() != g.client_counts.len() {
        return Err(Error::InvalidArgument("one transform per group required".into()));
    }
    for t in &g.transforms {
        t.validate(spec.feature_dim)?;
    }
    let protos = class_prototypes(base_seed, spec.n_classes, spec.feature_dim);
    let mut clients = Vec::with_capacity(g.n_clients());
    for (group, (&count, transform)) in g.client_counts.iter().zip(&g.transforms).enumerate() {
        for _ in 0..count {
            let id = clients.len();
            let mut rng = seed::rng(base_seed, &[seed::tag::DATA, 1, id as u64]);
            let all = sample_task(&protos, transform, spec.samples_per_client, spec.noise_std, &mut rng);
            let (train, test) = all.split(spec.train_fraction, &mut rng);
            if train.is_empty() || test.is_empty() {
                return Err(Error::InvalidArgument("train/test split leaves an empty side".into()));
            }
            clients.push(Client { id, group, train, test });
        }
    }
    Ok(clients)
}

/// Splits `pool` across clients with per-class proportions drawn from a
/// symmetric Dirichlet(`alpha`).
pub fn dirichlet_partition(pool: &Dataset, n_clients: usize, alpha: f64, seed_value: u64) -> Result<Vec<Dataset>> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if n_clients == 0 || pool.len() < n_clients {
        return Err(Error::InvalidArgument(format!(
            "pool of {} samples cannot cover {n_clients} clients",
            pool.len()
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed::rng(seed_value, &[seed::tag::SPLIT]);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); pool.n_classes];
    for (i, &y) in pool.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for idx in by_class.iter_mut() {
        idx.shuffle(&mut rng);
    }

    let mut assignment: Vec<Vec<usize>> = Vec::new();
    for _attempt in 0..100 {
        assignment = vec![Vec::new(); n_clients];
        for idx in &by_class {
            let props = loop {
                let g: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = g.iter().sum();
                if total > 0.0 {
                    break g.into_iter().map(|x| x / total).collect::<Vec<_>>();
                }
            };
            let counts = apportion(idx.len(), &props);
            let mut start = 0;
            for (c, &k) in counts.iter().enumerate() {
                assignment[c].extend_from_slice(&idx[start..start + k]);
                start += k;
            }
        }
        if assignment.iter().all(|a| !a.is_empty()) {
            break;
        }
    }
    // Fallback: move one sample from the largest client into each empty one.
    while let Some(empty) = assignment.iter().position(Vec::is_empty) {
        let largest = (0..n_clients).max_by_key(|&c| (assignment[c].len(), usize::MAX - c)).unwrap();
        let moved = assignment[largest].pop().unwrap();
        assignment[empty].push(moved);
    }
    Ok(assignment
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            pool.subset(&idx)
        })
        .collect())
}

/// Largest-remainder apportionment of `total` items by `props` (ties to lower index).
fn apportion(total: usize, props: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

/// Binary task with a planted dependence on a protected attribute `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularBiasSpec {
    pub n_samples: usize,
    pub p_attr: f64,
    pub p_pos_given_attr1: f64,
    pub p_pos_given_attr0: f64,
    pub feature_dim: usize,
    /// Mean offset along coordinate 0 between the two labels.
    pub class_separation: f64,
    /// Mean offset along coordinate 1 between the two attribute values.
    pub attribute_shift: f64,
    pub noise_std: f64,
}

impl Default for TabularBiasSpec {
    fn default() -> Self {
        Self {
            n_samples: 48_842,
            p_attr: 0.675,
            p_pos_given_attr1: 0.314,
            p_pos_given_attr0: 0.113,
            feature_dim: 8,
            class_separation: 2.0,
            attribute_shift: 1.0,
            noise_std: 1.0,
        }
    }
}

pub fn make_biased_tabular(spec: &TabularBiasSpec, seed_value: u64) -> Result<Dataset> {
    for (name, p) in [
        ("p_attr", spec.p_attr),
        ("p_pos_given_attr1", spec.p_pos_given_attr1),
        ("p_pos_given_attr0", spec.p_pos_given_attr0),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")));
        }
    }
    if spec.feature_dim < 2 {
        return Err(Error::InvalidArgument("tabular feature_dim must be at least 2".into()));
    }
    let mut rng = seed::rng(seed_value, &[seed::tag::DATA, 2]);
    let n = spec.n_samples;
    let mut features = Vec::with_capacity(n * spec.feature_dim);
    let mut labels = Vec::with_capacity(n);
    let mut attrs = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.random_bool(spec.p_attr);
        let p_pos = if a { spec.p_pos_given_attr1 } else { spec.p_pos_given_attr0 };
        let y = rng.random_bool(p_pos);
        for j in 0..spec.feature_dim {
            let mean = match j {
                0 => spec.class_separation * if y { 0.5 } else { -0.5 },
                1 => spec.attribute_shift * if a { 0.5 } else { -0.5 },
                _ => 0.0,
            };
            let z: f64 = rng.sample(StandardNormal);
            features.push(mean + spec.noise_std * z);
        }
        labels.push(y as usize);
        attrs.push(a as u8);
    }
    Dataset::new(features, labels, spec.feature_dim, 2)?.with_attributes(attrs)
}

const MAGIC: &[u8; 4] = b"E2DS";
const VERSION: u32 = 1;

/// Flat binary layout (all integers little-endian):
/// `"E2DS" | u32 version | u64 rows | u32 dim | u32 n_classes | u8 has_attributes`,
/// then `rows * dim` f32 features row-major, `rows` label bytes, and `rows`
/// attribute bytes when present. Features are stored at 32-bit precision.
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.n_classes > 256 {
        return Err(Error::InvalidArgument("label bytes hold at most 256 classes".into()));
    }
    let mut out = Vec::with_capacity(25 + ds.features.len() * 4 + ds.len() * 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim as u32).to_le_bytes());
    out.extend_from_slice(&(ds.n_classes as u32).to_le_bytes());
    out.push(ds.attributes.is_some() as u8);
    for &x in &ds.features {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out.extend(ds.labels.iter().map(|&y| y as u8));
    if let Some(a) = &ds.attributes {
        out.extend_from_slice(a);
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let err = |m: &str| Error::Decode(m.to_string());
    if bytes.len() < 25 || &bytes[..4] != MAGIC {
        return Err(err("missing dataset header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(err("unsupported dataset version"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dim = u32_at(16) as usize;
    let n_classes = u32_at(20) as usize;
    let has_attr = bytes[24] != 0;
    let body = &bytes[25..];
    let expected = rows
        .checked_mul(dim)
        .and_then(|f| f.checked_mul(4))
        .and_then(|f| f.checked_add(rows * (1 + has_attr as usize)))
        .ok_or_else(|| err("dataset size overflow"))?;
    if body.len() != expected {
        return Err(err("dataset body length mismatch"));
    }
    let (feat, rest) = body.split_at(rows * dim * 4);
    let features = feat
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let labels = rest[..rows].iter().map(|&b| b as usize).collect();
    let ds = Dataset::new(features, labels, dim, n_classes)?;
    if has_attr {
        ds.with_attributes(rest[rows..].to_vec())
    } else {
        Ok(ds)
    }
}
