//! Pipeline configuration: one JSON file, every key optional.

use std::path::{Path, PathBuf};

use octa_core::binarize::BinarizeParams;
use octa_core::eval::{ComparisonConfig, Method};
use octa_core::fusion::FusionParams;
use octa_core::preprocess::DEFAULT_Z_THRESH;
use octa_core::registration::RegParams;
use octa_core::vesselness::VesselnessParams;
use octa_core::AugmentationSpec;
use octa_net::LifeConfig;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    /// Motion-artifact removal; when off the input is used as is.
    pub preprocess: bool,
    /// When off, `checkpoint` must name an existing model.
    pub train: bool,
    /// Needs `ground_truth`.
    pub eval: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self { preprocess: true, train: true, eval: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessParams {
    pub z_thresh: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self { z_thresh: DEFAULT_Z_THRESH }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingParams {
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub data_parallel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Loaded when it exists, otherwise the trained model is saved here
    /// (default `<output_dir>/model.ckpt`).
    pub checkpoint: Option<PathBuf>,
    /// Seeds both the model and the patch sampler.
    pub seed: u64,
    pub stages: StageToggles,
    pub preprocess: PreprocessParams,
    pub fusion: FusionParams,
    pub registration: RegParams,
    pub augmentation: AugmentationSpec,
    pub model: LifeConfig,
    pub training: TrainingParams,
    pub binarize: BinarizeParams,
    pub vesselness: VesselnessParams,
    pub methods: Vec<Method>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            ground_truth: None,
            output_dir: PathBuf::from("out"),
            checkpoint: None,
            seed: 0,
            stages: StageToggles::default(),
            preprocess: PreprocessParams::default(),
            fusion: FusionParams::default(),
            registration: RegParams::default(),
            augmentation: AugmentationSpec::default(),
            model: LifeConfig::default(),
            training: TrainingParams::default(),
            binarize: BinarizeParams::default(),
            vesselness: VesselnessParams::default(),
            methods: Method::TABLE.to_vec(),
        }
    }
}

impl PipelineConfig {
    /// Reads a config; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.input.as_mut().map(resolve);
        cfg.ground_truth.as_mut().map(resolve);
        cfg.checkpoint.as_mut().map(resolve);
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.output_dir.join("model.ckpt"))
    }

    /// The model config with the pipeline seed applied.
    pub fn seeded_model(&self) -> LifeConfig {
        LifeConfig { seed: self.seed, ..self.model.clone() }
    }

    pub fn seeded_augmentation(&self) -> AugmentationSpec {
        AugmentationSpec { seed: self.seed, ..self.augmentation.clone() }
    }

    pub fn comparison(&self) -> ComparisonConfig {
        ComparisonConfig {
            binarize: self.binarize.clone(),
            vesselness: self.vesselness.clone(),
            fusion: self.fusion.clone(),
            registration: self.registration.clone(),
        }
    }

    /// Everything that can be checked before work starts.
    pub fn validate(&self) -> Result<()> {
        let input = self.input.as_ref().ok_or_else(|| CliError::Validation("missing input path".into()))?;
        require_volume(input, "input")?;
        if let Some(gt) = &self.ground_truth {
            require_volume(gt, "ground_truth")?;
        }
        if !self.stages.train && !self.checkpoint_path().is_file() {
            return Err(CliError::Validation(format!(
                "training disabled but checkpoint {} does not exist",
                self.checkpoint_path().display()
            )));
        }
        if !(self.preprocess.z_thresh > 0.0) {
            return Err(CliError::Validation(format!("z_thresh must be > 0, got {}", self.preprocess.z_thresh)));
        }
        invalid(self.fusion.validate())?;
        invalid(self.registration.validate())?;
        invalid(self.model.validate())?;
        invalid(self.binarize.diffusion.validate())?;
        invalid(self.vesselness.validate())?;
        if self.stages.eval && self.ground_truth.is_some() && self.methods.is_empty() {
            return Err(CliError::Validation("methods is empty".into()));
        }
        if self.training.max_steps == Some(0) {
            return Err(CliError::Validation("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// A volume argument must point at an existing `.raw`/`.json` pair.
pub fn require_volume(path: &Path, role: &str) -> Result<()> {
    let (json, raw) = octa_core::volume::volume_paths(path);
    if json.is_file() && raw.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{role}: no volume at {}", path.display())))
    }
}
