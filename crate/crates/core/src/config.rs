//! Run configuration: one TOML document covering every module. Missing keys
//! take their defaults; validation reports every violated invariant at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{MfimError, Result};
use crate::generator::GeneratorConfig;
use crate::objectives::{LossWeights, LANDMARK_SUBSET_ONE_BASED};
use crate::roi::RoiMaskSpec;
use crate::surrogates::SurrogateConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV manifest of training images.
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub surrogates: SurrogateConfig,
    pub roi: RoiMaskSpec,
    pub data: DataConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Parses and validates. `path` is only used in error messages.
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| MfimError::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.generator.violations();
        v.extend(self.encoder.violations());
        v.extend(self.train.violations());
        v.extend(self.loss.violations());
        v.extend(self.surrogates.violations());
        v.extend(self.roi.violations());

        let r = self.generator.resolution;
        if self.encoder.input_size != r {
            v.push(format!(
                "encoder.input_size = {} must equal generator.resolution = {r}",
                self.encoder.input_size
            ));
        }
        let sizes = self.encoder.pyramid_sizes();
        for m in self.generator.style_map_resolutions {
            if !sizes.contains(&m) {
                v.push(format!(
                    "generator.style_map_resolutions entry {m} has no encoder pyramid level (levels are {sizes:?})"
                ));
            }
        }
        let max_kp = LANDMARK_SUBSET_ONE_BASED.iter().copied().max().unwrap_or(0);
        if self.loss.landmark > 0.0 && self.surrogates.landmarks < max_kp {
            v.push(format!(
                "loss.landmark > 0 needs at least {max_kp} landmarks, surrogates.landmarks = {}",
                self.surrogates.landmarks
            ));
        }
        if self.roi.violations().is_empty() {
            let scaled = self.roi.for_canvas(r);
            for e in scaled.violations() {
                v.push(format!("roi rescaled to {r}: {e}"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(MfimError::Validation(v))
        }
    }

    /// Train settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| MfimError::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml_str(&text, path)
}
