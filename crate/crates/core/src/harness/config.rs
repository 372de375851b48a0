//! JSON experiment description.
//!
//! ```json
//! {
//!   "data": { "synth": { "num_coarse": 20, "fines_per_coarse": 5 } },
//!   "pretrain": { "hidden": [128, 64], "train": { "epochs": 12 }, "noise_p": 0.5 },
//!   "clusterfit": { "kmeans": { "k": 400 }, "strategy": "unsupervised" },
//!   "baselines": { "npre2x": true, "distill": { "temperature": 20.0, "alpha": 0.75 } },
//!   "probe": { "lr_grid": [0.1, 0.03] },
//!   "seed": 0
//! }
//! ```
//!
//! Omitted fields take their defaults. Every random choice in a run derives
//! from the top-level `seed` mixed with the per-component seeds.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthSpec;
use crate::error::{Error, Result};
use crate::kmeans::KMeansConfig;
use crate::nnet::{DistillConfig, TrainConfig};
use crate::probe::ProbeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthSpec),
    Files(FileData),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthSpec::default())
    }
}

/// Pre-extracted inputs on disk (`CFF1` features, `CFL1` labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub pretrain_inputs: PathBuf,
    pub pretrain_labels: PathBuf,
    /// Defaults to the pre-training split.
    #[serde(default)]
    pub clusterfit_inputs: Option<PathBuf>,
    #[serde(default)]
    pub clusterfit_labels: Option<PathBuf>,
    pub targets: Vec<FileTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileTarget {
    pub name: String,
    pub train_inputs: PathBuf,
    pub train_labels: PathBuf,
    pub eval_inputs: PathBuf,
    pub eval_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Uniform label-noise rate applied to the pre-training labels.
    pub noise_p: f64,
    /// Multiplier on the hidden widths of the pre-trained network only.
    pub capacity: f64,
    /// Keep only the `m` most frequent pre-training labels.
    pub top_m: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            train: TrainConfig::default(),
            noise_p: 0.0,
            capacity: 1.0,
            top_m: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelabelStrategy {
    Unsupervised,
    PerLabel,
    Prototype,
}

impl RelabelStrategy {
    pub fn method_name(self) -> &'static str {
        match self {
            RelabelStrategy::Unsupervised => "cf",
            RelabelStrategy::PerLabel => "cf-per-label",
            RelabelStrategy::Prototype => "prototype",
        }
    }
}

impl std::str::FromStr for RelabelStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unsupervised" => Ok(Self::Unsupervised),
            "per-label" => Ok(Self::PerLabel),
            "prototype" => Ok(Self::Prototype),
            other => Err(Error::Config(format!(
                "unknown relabel strategy {other:?} (unsupervised | per-label | prototype)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterfitConfig {
    /// `k` is the total cluster count for every strategy except prototype.
    pub kmeans: KMeansConfig,
    pub strategy: RelabelStrategy,
    pub hidden: Vec<usize>,
    /// Epochs should match the pre-training run.
    pub train: TrainConfig,
    pub l2_normalize: bool,
}

impl Default for ClusterfitConfig {
    fn default() -> Self {
        Self {
            // four clusters per fine class of the default synthetic task
            kmeans: KMeansConfig::new(400, 0),
            strategy: RelabelStrategy::Unsupervised,
            hidden: vec![128, 64],
            train: TrainConfig::default(),
            l2_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineToggles {
    pub npre: bool,
    /// Pre-training network trained for twice the epochs.
    pub npre2x: bool,
    pub distill: Option<DistillConfig>,
    pub prototype: bool,
}

impl Default for BaselineToggles {
    fn default() -> Self {
        Self {
            npre: true,
            npre2x: false,
            distill: None,
            prototype: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub config: ProbeConfig,
    /// Learning rates to try; the best eval top-1 is reported.
    pub lr_grid: Vec<f64>,
    /// Synthetic targets to probe: `fine` and/or `coarse`. File targets are
    /// always all probed.
    pub targets: Vec<String>,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            config: ProbeConfig::default(),
            lr_grid: vec![],
            targets: vec!["fine".into(), "coarse".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub pretrain: PretrainConfig,
    pub clusterfit: ClusterfitConfig,
    pub baselines: BaselineToggles,
    pub probe: ProbeSettings,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            pretrain: PretrainConfig::default(),
            clusterfit: ClusterfitConfig::default(),
            baselines: BaselineToggles::default(),
            probe: ProbeSettings::default(),
            seed: 0,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Synth(spec) => {
                spec.validate()?;
                for t in &self.probe.targets {
                    if t != "fine" && t != "coarse" {
                        return Err(Error::Config(format!(
                            "unknown synthetic target {t:?} (fine | coarse)"
                        )));
                    }
                }
            }
            DataSource::Files(files) => {
                let mut paths = vec![&files.pretrain_inputs, &files.pretrain_labels];
                paths.extend(files.clusterfit_inputs.iter());
                paths.extend(files.clusterfit_labels.iter());
                for t in &files.targets {
                    paths.extend([
                        &t.train_inputs,
                        &t.train_labels,
                        &t.eval_inputs,
                        &t.eval_labels,
                    ]);
                }
                if let Some(missing) = paths.iter().find(|p| !p.exists()) {
                    return Err(Error::Config(format!(
                        "referenced file {} does not exist",
                        missing.display()
                    )));
                }
                if files.targets.is_empty() {
                    return Err(Error::Config("no probe targets configured".into()));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.pretrain.noise_p) {
            return Err(Error::Config(format!(
                "noise_p {} is outside [0, 1]",
                self.pretrain.noise_p
            )));
        }
        if !(self.pretrain.capacity > 0.0) {
            return Err(Error::Config(format!(
                "capacity {} must be positive",
                self.pretrain.capacity
            )));
        }
        if self.pretrain.top_m == Some(0) {
            return Err(Error::Config("top_m must be at least 1".into()));
        }
        self.pretrain.train.validate()?;
        self.clusterfit.train.validate()?;
        self.clusterfit.kmeans.validate()?;
        if let Some(d) = &self.baselines.distill {
            d.validate()?;
        }
        self.probe.config.validate()?;
        Ok(())
    }
}

/// Mixes the run seed with a component tag and that component's own seed.
pub fn derive_seed(master: u64, tag: &str, component: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h) ^ component)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
