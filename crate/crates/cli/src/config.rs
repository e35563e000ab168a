//! Experiment configuration files (TOML, strict).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use e2fl_core::data::{TabularBiasSpec, TransformKind};
use e2fl_core::{Algorithm, FederationConfig, GroupCount, InferenceMode, NetSpec, RankingCoding, WireSizeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    /// Output root; `--out` and `E2FL_OUT` take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub federation: FederationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Grouped(GroupedConfig),
    Tabular(TabularConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupedConfig {
    pub client_counts: Vec<usize>,
    #[serde(default)]
    pub transform: TransformKind,
    #[serde(default = "d_samples")]
    pub samples_per_client: usize,
    #[serde(default = "d_classes")]
    pub n_classes: usize,
    #[serde(default = "d_dim")]
    pub feature_dim: usize,
    #[serde(default = "d_noise")]
    pub noise_std: f64,
    #[serde(default = "d_train")]
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularConfig {
    pub n_clients: usize,
    /// Dirichlet concentration of the label split across clients.
    pub alpha: f64,
    #[serde(default = "d_train")]
    pub train_fraction: f64,
    #[serde(default)]
    pub bias: TabularBiasSpec,
}

fn d_samples() -> usize {
    200
}
fn d_classes() -> usize {
    4
}
fn d_dim() -> usize {
    16
}
fn d_noise() -> f64 {
    0.3
}
fn d_train() -> f64 {
    0.8
}

/// Training parameters. Omitted keys take the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    /// Hidden layer widths; input and output widths follow from the dataset.
    pub hidden: Vec<usize>,
    pub rounds: usize,
    pub local_epochs: usize,
    pub clients_per_round: usize,
    pub groups: GroupCount,
    pub k_percent: f64,
    pub lr: f64,
    pub dense_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub inference: InferenceMode,
    /// Defaults to 0.7 ln(classes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub epsilon: f64,
    pub cluster_iterations: usize,
    pub ranking_coding: RankingCoding,
    pub eval_every: usize,
}

impl Default for FederationSection {
    fn default() -> Self {
        let base = FederationConfig::new(NetSpec::new(vec![16, 32, 4]).expect("valid shape"));
        Self {
            hidden: vec![32],
            rounds: base.rounds,
            local_epochs: base.local_epochs,
            clients_per_round: base.clients_per_round,
            groups: base.groups,
            k_percent: base.k_percent,
            lr: base.lr,
            dense_lr: base.dense_lr,
            batch_size: base.batch_size,
            momentum: base.momentum,
            weight_decay: base.weight_decay,
            inference: base.inference,
            tau: None,
            epsilon: base.epsilon,
            cluster_iterations: base.cluster_iterations,
            ranking_coding: base.wire.ranking,
            eval_every: base.eval_every,
        }
    }
}

impl DatasetConfig {
    pub fn n_clients(&self) -> usize {
        match self {
            DatasetConfig::Grouped(g) => g.client_counts.iter().sum(),
            DatasetConfig::Tabular(t) => t.n_clients,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            DatasetConfig::Grouped(g) => g.feature_dim,
            DatasetConfig::Tabular(t) => t.bias.feature_dim,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            DatasetConfig::Grouped(g) => g.n_classes,
            DatasetConfig::Tabular(_) => 2,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Fills defaults that depend on other keys.
    fn resolve(&mut self) {
        let c = self.dataset.n_classes() as f64;
        self.federation.tau.get_or_insert(0.7 * c.ln());
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn federation_config(&self, seed: u64) -> anyhow::Result<FederationConfig> {
        let f = &self.federation;
        let mut sizes = vec![self.dataset.feature_dim()];
        sizes.extend(&f.hidden);
        sizes.push(self.dataset.n_classes());
        Ok(FederationConfig {
            net: NetSpec::new(sizes)?,
            rounds: f.rounds,
            local_epochs: f.local_epochs,
            clients_per_round: f.clients_per_round,
            groups: f.groups,
            k_percent: f.k_percent,
            lr: f.lr,
            dense_lr: f.dense_lr,
            batch_size: f.batch_size,
            momentum: f.momentum,
            weight_decay: f.weight_decay,
            seed,
            inference: f.inference,
            tau: f.tau.unwrap_or(f64::INFINITY),
            epsilon: f.epsilon,
            cluster_iterations: f.cluster_iterations,
            wire: WireSizeModel {
                ranking: f.ranking_coding,
                ..WireSizeModel::default()
            },
            eval_every: f.eval_every,
        })
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if self.algorithms.is_empty() {
            bail!("algorithms must not be empty");
        }
        let mut algs = self.algorithms.clone();
        algs.sort_by_key(|a| a.name());
        algs.dedup();
        if algs.len() != self.algorithms.len() {
            bail!("algorithms contains duplicates");
        }
        match &self.dataset {
            DatasetConfig::Grouped(g) => {
                if g.client_counts.is_empty() || g.client_counts.contains(&0) {
                    bail!("dataset.client_counts must be non-empty with every count at least 1");
                }
                if !(g.train_fraction > 0.0 && g.train_fraction < 1.0) {
                    bail!("dataset.train_fraction must be in (0, 1)");
                }
                if g.noise_std.is_nan() || g.noise_std < 0.0 {
                    bail!("dataset.noise_std must be non-negative");
                }
            }
            DatasetConfig::Tabular(t) => {
                if t.n_clients == 0 {
                    bail!("dataset.n_clients must be at least 1");
                }
                if t.alpha.is_nan() || t.alpha <= 0.0 {
                    bail!("dataset.alpha must be positive");
                }
                if !(t.train_fraction > 0.0 && t.train_fraction < 1.0) {
                    bail!("dataset.train_fraction must be in (0, 1)");
                }
                if self.federation.inference == InferenceMode::Known && self.federation.groups != GroupCount::Fixed(1) {
                    bail!("tabular clients have no group ids; use inference = \"aware\" or a single group");
                }
            }
        }
        if self.federation.inference == InferenceMode::Aware {
            if !matches!(self.dataset, DatasetConfig::Tabular(_)) {
                bail!("aware inference needs attribute-tagged (tabular) data");
            }
            if self.federation.groups != GroupCount::Fixed(2) {
                bail!("aware inference uses one group per attribute value: set groups = 2");
            }
        }
        if let DatasetConfig::Grouped(g) = &self.dataset {
            if self.federation.inference == InferenceMode::Known {
                if let GroupCount::Fixed(q) = self.federation.groups {
                    if q < g.client_counts.len() {
                        bail!("known inference needs groups >= {} (one per dataset group)", g.client_counts.len());
                    }
                }
            }
        }
        let cfg = self.federation_config(self.seeds[0])?;
        cfg.validate(self.dataset.n_clients())?;
        if self.algorithms.contains(&Algorithm::Ifca) && self.federation.groups == GroupCount::Auto {
            bail!("ifca needs a fixed number of groups");
        }
        Ok(())
    }
}
