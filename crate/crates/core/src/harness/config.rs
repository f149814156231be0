use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradients::{DifferentiationMode, OptimizerConfig};
use crate::objective::{LossWeights, TrialReduction};
use crate::plasticity::{mask_for_family, LearningMask};
use crate::snn::NetworkConfig;
use crate::tasks::{PeriodSchedule, TaskFamily};

/// Which intrinsic property groups a run may train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// The family's own mask.
    #[default]
    Ip2,
    /// Nothing learnable: mask `000`, point neurons.
    Vanilla,
    /// An explicit mask given by the `mask` key.
    RandomMask,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ip2" => Ok(Variant::Ip2),
            "vanilla" => Ok(Variant::Vanilla),
            "random-mask" => Ok(Variant::RandomMask),
            _ => Err(Error::Config(format!("unknown variant `{s}` (ip2, vanilla, random-mask)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Convergence threshold on the total training loss. Required.
    pub threshold: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    #[serde(default = "defaults::min_iters")]
    pub min_iters: usize,
    #[serde(default = "defaults::early_stop_failures")]
    pub early_stop_failures: usize,
    /// Keep a checkpoint after every N-th task (0 keeps only the last two).
    #[serde(default = "defaults::checkpoint_every")]
    pub checkpoint_every: u64,
    /// Keep noiseless recordings after every N-th task (0 keeps only the last two).
    #[serde(default = "defaults::record_every")]
    pub record_every: u64,
}

impl TrainingConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            max_iters: defaults::max_iters(),
            min_iters: defaults::min_iters(),
            early_stop_failures: defaults::early_stop_failures(),
            checkpoint_every: defaults::checkpoint_every(),
            record_every: defaults::record_every(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub reduction: TrialReduction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: TaskFamily,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<LearningMask>,
    #[serde(default = "defaults::n_tasks")]
    pub n_tasks: u64,
    /// Root of the seed hierarchy; also overrides `network.rng_seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    pub training: TrainingConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub gradient: DifferentiationMode,
}

mod defaults {
    use std::path::PathBuf;

    pub fn max_iters() -> usize {
        5000
    }
    pub fn min_iters() -> usize {
        50
    }
    pub fn early_stop_failures() -> usize {
        3
    }
    pub fn checkpoint_every() -> u64 {
        100
    }
    pub fn record_every() -> u64 {
        50
    }
    pub fn n_tasks() -> u64 {
        1000
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs")
    }
}

impl ExperimentConfig {
    /// Defaults for a family, with the family's convergence threshold.
    pub fn for_family(family: TaskFamily) -> Self {
        Self {
            family,
            variant: Variant::Ip2,
            mask: None,
            n_tasks: defaults::n_tasks(),
            seed: 0,
            output_dir: defaults::output_dir(),
            training: TrainingConfig::with_threshold(family.default_threshold()),
            network: NetworkConfig::default(),
            optimizer: OptimizerConfig::default(),
            loss: LossConfig::default(),
            gradient: DifferentiationMode::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Hex sha256 of the serialized config.
    pub fn hash(&self) -> Result<String> {
        Ok(hash_bytes(self.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        if !(t.threshold > 0.0 && t.threshold.is_finite()) {
            return Err(Error::Config(format!("training.threshold must be > 0, got {}", t.threshold)));
        }
        if t.max_iters == 0 {
            return Err(Error::Config("training.max_iters must be > 0".into()));
        }
        if t.min_iters > t.max_iters {
            return Err(Error::Config(format!(
                "training.min_iters ({}) exceeds training.max_iters ({})",
                t.min_iters, t.max_iters
            )));
        }
        if t.early_stop_failures == 0 {
            return Err(Error::Config("training.early_stop_failures must be > 0".into()));
        }
        if self.n_tasks == 0 {
            return Err(Error::Config("n_tasks must be > 0".into()));
        }
        match (self.variant, self.mask) {
            (Variant::RandomMask, None) => {
                return Err(Error::Config("variant random-mask needs a `mask` key".into()));
            }
            (Variant::Ip2 | Variant::Vanilla, Some(_)) => {
                return Err(Error::Config("`mask` is only allowed with variant random-mask".into()));
            }
            _ => {}
        }
        if self.mask().tau_d && self.network.n_dendrites == 0 {
            return Err(Error::Config("network.n_dendrites must be > 0 when tau_d is learnable".into()));
        }
        self.network.validate()?;
        self.optimizer.validate()?;
        self.loss.weights.validate()?;
        self.gradient.validate()?;
        self.schedule()?;
        Ok(())
    }

    /// The mask in force for the whole run.
    pub fn mask(&self) -> LearningMask {
        match self.variant {
            Variant::Ip2 => mask_for_family(self.family),
            Variant::Vanilla => LearningMask::NONE,
            Variant::RandomMask => self.mask.unwrap_or(LearningMask::NONE),
        }
    }

    pub fn provenance(&self) -> String {
        match self.variant {
            Variant::Ip2 => self.family.as_str().to_string(),
            Variant::Vanilla => "vanilla".to_string(),
            Variant::RandomMask => format!("random-mask-{}", self.mask()),
        }
    }

    /// Network config as simulated: seeded from `seed`, with branches only
    /// when dendritic decays are learnable.
    pub fn effective_network(&self) -> NetworkConfig {
        let mut net = self.network.clone();
        net.rng_seed = self.seed;
        if !self.mask().tau_d {
            net.n_dendrites = 0;
        }
        net
    }

    pub fn schedule(&self) -> Result<PeriodSchedule> {
        PeriodSchedule::from_dt(self.network.dt_ms).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
