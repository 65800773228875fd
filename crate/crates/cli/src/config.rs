use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spinewalker::labeling::DEFAULT_SIGMA;
use spinewalker::lossmath::LossConfig;
use spinewalker::sampler::SamplerConfig;
use spinewalker::{PhantomSpec, TraversalConfig};

/// Which segmenter answers traversal requests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Answers from ground truth; needs `--truth`.
    Oracle {
        #[serde(default)]
        noise_sigma: f64,
    },
    /// Child process speaking the binary frame protocol on stdin/stdout.
    External {
        #[serde(default)]
        command: Vec<String>,
        #[serde(default = "default_timeout_s")]
        timeout_s: f64,
    },
}

fn default_timeout_s() -> f64 {
    spinewalker::segbackend::DEFAULT_TIMEOUT.as_secs_f64()
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Oracle { noise_sigma: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    /// Standard deviation of the per-instance level likelihood.
    pub sigma: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self { sigma: DEFAULT_SIGMA }
    }
}

/// Everything a run needs besides paths, which always come from flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub sampler: SamplerConfig,
    pub traversal: TraversalConfig,
    pub labeling: LabelingConfig,
    pub loss: LossConfig,
    pub backend: BackendConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate().context("phantom")?;
        self.sampler.validate().context("sampler")?;
        self.traversal.validate().context("traversal")?;
        self.loss.validate().context("loss")?;
        if !(self.labeling.sigma.is_finite() && self.labeling.sigma > 0.0) {
            bail!("labeling.sigma must be positive, got {}", self.labeling.sigma);
        }
        match &self.backend {
            BackendConfig::Oracle { noise_sigma } if !(noise_sigma.is_finite() && *noise_sigma >= 0.0) => {
                bail!("backend.noise_sigma must be non-negative, got {noise_sigma}")
            }
            BackendConfig::External { timeout_s, .. } if !(timeout_s.is_finite() && *timeout_s > 0.0) => {
                bail!("backend.timeout_s must be positive, got {timeout_s}")
            }
            _ => Ok(()),
        }
    }
}
