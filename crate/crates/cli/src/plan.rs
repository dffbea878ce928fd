//! Experiment plans: one JSON document per configuration.

use std::path::{Path, PathBuf};

use mdlsel_core::dataio::load_digit_source;
use mdlsel_core::nnet::{MlpArchitecture, TrainConfig};
use mdlsel_core::prequential::{MlpLearner, PrequentialPlan, ReplicatePolicy};
use mdlsel_core::taskgen::{DigitSource, FeatureStatus, GlyphStyle, SourceKind, SyntheticDigits};
use mdlsel_core::{Feature, TaskConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigitSpec {
    /// Procedural glyphs; `difficulty` scales every geometric deformation.
    Synthetic { difficulty: f64 },
    Idx { images: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrequentialSettings {
    /// Samples coded per candidate.
    pub n: usize,
    pub first_block: usize,
    pub ratio: f64,
    pub val_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub val_size: usize,
    pub test_size: usize,
    pub n_repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub task: TaskConfig,
    pub train: TrainConfig,
    pub model: ModelShape,
    pub digits: DigitSpec,
    /// Training sizes of the sweep, also the grid transitions snap to.
    pub sizes: Vec<usize>,
    pub replicates: ReplicatePolicy,
    /// Candidates to isolate; empty means every informative feature.
    #[serde(default)]
    pub features: Vec<Feature>,
    pub prequential: PrequentialSettings,
    pub sweep: SweepSettings,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Glyph deformation used by the presets. Color tasks need digits that
/// take a few hundred samples to learn, otherwise the shortcut never wins;
/// watermark tasks need the digit to be cheaper than a small bank, which
/// only clean glyphs are.
pub fn preset_difficulty(task: &TaskConfig) -> f64 {
    if task.has_watermark() {
        0.0
    } else {
        0.6
    }
}

fn pow2_sizes(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|e| 1usize << e).collect()
}

impl ExperimentPlan {
    pub fn preset(preset: Preset, name: &str, task: TaskConfig) -> Self {
        match preset {
            Preset::Desk => Self::desk(name, task),
            Preset::Full => Self::full(name, task),
        }
    }

    /// 16×16 images, 64-unit MLPs, three replicates everywhere.
    pub fn desk(name: &str, task: TaskConfig) -> Self {
        let task = task.at_side(16);
        ExperimentPlan {
            name: name.into(),
            digits: DigitSpec::Synthetic {
                difficulty: preset_difficulty(&task),
            },
            task,
            train: TrainConfig::default(),
            model: ModelShape {
                hidden_dim: 64,
                n_hidden_layers: 2,
            },
            sizes: pow2_sizes(6, 13),
            replicates: ReplicatePolicy::uniform(3),
            features: Vec::new(),
            prequential: PrequentialSettings {
                n: 8192,
                first_block: 16,
                ratio: 2.0,
                val_size: 1024,
                test_size: 2048,
            },
            sweep: SweepSettings {
                val_size: 1024,
                test_size: 2048,
                n_repeats: 5,
            },
            seed: 0,
            jobs: None,
            out_dir: None,
        }
    }

    /// The training setup of the original study: 32×32 images, two
    /// 256-unit layers, ten replicates up to 500 samples and three above.
    pub fn full(name: &str, task: TaskConfig) -> Self {
        let mut plan = Self::desk(name, task);
        plan.task = plan.task.at_side(32);
        plan.model.hidden_dim = 256;
        plan.replicates = ReplicatePolicy::default();
        plan.sizes = pow2_sizes(6, 15);
        plan.prequential.n = 1 << 15;
        plan
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        self.architecture().validate()?;
        let bad = |msg: String| Err(CliError::Plan(msg));
        if self.sizes.is_empty() || self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("sizes must be positive and strictly increasing: {:?}", self.sizes));
        }
        let r = &self.replicates;
        if r.small == 0 || r.large == 0 {
            return bad("replicate counts must be positive".into());
        }
        if self.sweep.n_repeats == 0 || self.sweep.test_size == 0 || self.sweep.val_size == 0 {
            return bad("sweep sizes and repeats must be positive".into());
        }
        let p = &self.prequential;
        if p.val_size == 0 || p.test_size == 0 {
            return bad("prequential evaluation sets must be non-empty".into());
        }
        if let DigitSpec::Synthetic { difficulty } = self.digits {
            if !(0.0..=1.5).contains(&difficulty) {
                return bad(format!("glyph difficulty {difficulty} is outside [0, 1.5]"));
            }
        }
        if matches!(self.digits, DigitSpec::Idx { .. }) != (self.task.source == SourceKind::IdxFiles) {
            return bad("task.source must match the digit spec".into());
        }
        for &f in &self.features {
            if self.task.feature_status(f) == FeatureStatus::Absent {
                return Err(mdlsel_core::Error::FeatureAbsent(f).into());
            }
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive".into());
        }
        Ok(())
    }

    pub fn architecture(&self) -> MlpArchitecture {
        MlpArchitecture::new(self.task.input_dim(), self.model.hidden_dim, self.model.n_hidden_layers)
    }

    pub fn learner(&self) -> MlpLearner {
        MlpLearner {
            architecture: self.architecture(),
            train: self.train.clone(),
        }
    }

    pub fn prequential_plan(&self) -> PrequentialPlan {
        let p = &self.prequential;
        PrequentialPlan {
            n: p.n,
            first_block: p.first_block,
            ratio: p.ratio,
            replicates: self.replicates,
            val_size: p.val_size,
            test_size: p.test_size,
            seed: self.seed,
        }
    }

    /// Candidates to isolate, in canonical order.
    pub fn candidate_features(&self) -> Vec<Feature> {
        let wanted = |f: Feature| {
            if self.features.is_empty() {
                self.task.feature_status(f) == FeatureStatus::Informative
            } else {
                self.features.contains(&f)
            }
        };
        Feature::ALL.into_iter().filter(|&f| wanted(f)).collect()
    }

    /// Switches the digit source to IDX files.
    pub fn with_idx(mut self, images: PathBuf, labels: PathBuf) -> Self {
        self.digits = DigitSpec::Idx { images, labels };
        self.task.source = SourceKind::IdxFiles;
        self
    }

    pub fn digit_source(&self) -> Result<Box<dyn DigitSource>> {
        let side = self.task.image_side;
        Ok(match &self.digits {
            DigitSpec::Synthetic { difficulty } => {
                Box::new(SyntheticDigits::with_style(side, GlyphStyle::scaled(*difficulty)))
            }
            DigitSpec::Idx { images, labels } => Box::new(load_digit_source(images, labels, side)?),
        })
    }

    /// SHA-256 of the plan without its execution-only fields.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.jobs = None;
        canonical.out_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("plans serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_round_trips() {
        let plan = ExperimentPlan::desk("a", TaskConfig::scenario_a(0.25));
        plan.validate().unwrap();
        assert_eq!(plan.sizes, vec![64, 128, 256, 512, 1024, 2048, 4096, 8192]);
        assert_eq!(plan.candidate_features(), vec![Feature::Digit, Feature::Color]);
        let text = serde_json::to_string_pretty(&plan).unwrap();
        assert_eq!(ExperimentPlan::from_json(&text).unwrap(), plan);
    }

    #[test]
    fn hash_ignores_execution_fields() {
        let plan = ExperimentPlan::desk("b", TaskConfig::scenario_b(0.15, 8));
        let mut other = plan.clone();
        other.jobs = Some(4);
        other.out_dir = Some("/tmp/x".into());
        assert_eq!(plan.config_hash(), other.config_hash());
        other.seed = 1;
        assert_ne!(plan.config_hash(), other.config_hash());
        assert_eq!(plan.config_hash().len(), 64);
    }

    #[test]
    fn rejects_bad_plans() {
        let mut plan = ExperimentPlan::desk("a", TaskConfig::scenario_a(0.25));
        plan.sizes = vec![64, 64];
        assert!(plan.validate().is_err());
        let mut plan = ExperimentPlan::desk("a", TaskConfig::scenario_a(0.25));
        plan.features = vec![Feature::Watermark];
        assert!(plan.validate().is_err());
        assert!(ExperimentPlan::from_json("{\"name\": \"x\"}").is_err());
    }
}
