//! Experiment configuration, read from TOML and validated before any work.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use maskaudit_core::data::{SplitConfig, SyntheticConfig};
use maskaudit_core::evaluation::{Subgroup, DEFAULT_DILATION_FACTORS};
use maskaudit_core::mask_ops::PreprocessConfig;
use maskaudit_core::training::TrainConfig;
use maskaudit_core::MaskingStrategy;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DATA_ROOT_ENV: &str = "MASKAUDIT_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default)]
    pub seed: u64,
    /// Where datasets are generated or read; overridden by `MASKAUDIT_DATA_ROOT`.
    pub data_root: PathBuf,
    /// Run directory: checkpoints, config snapshot and results.
    pub output_root: PathBuf,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<MaskingStrategy>,
    #[serde(default = "default_factors")]
    pub dilation_factors: Vec<i64>,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub analysis: AnalysisToggles,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub embeddings: EmbeddingSection,
    #[serde(default)]
    pub attribution: AttributionSection,
    #[serde(default)]
    pub ood: OodSection,
    #[serde(default)]
    pub study: StudySection,
}

fn default_run_id() -> String {
    "run".into()
}

fn all_strategies() -> Vec<MaskingStrategy> {
    MaskingStrategy::ALL.to_vec()
}

fn default_factors() -> Vec<i64> {
    DEFAULT_DILATION_FACTORS.to_vec()
}

fn default_image_size() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSection {
    Synthetic { synthetic: SyntheticConfig },
    /// Manifest CSV with image and mask paths relative to the data root.
    Manifest { manifest: PathBuf },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainPreset {
    #[default]
    Desk,
    Chest,
    Fundus,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub preset: TrainPreset,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisToggles {
    #[serde(default = "yes")]
    pub embeddings: bool,
    #[serde(default = "yes")]
    pub attribution: bool,
    #[serde(default = "yes")]
    pub ood: bool,
    #[serde(default = "yes")]
    pub study: bool,
}

fn yes() -> bool {
    true
}

impl Default for AnalysisToggles {
    fn default() -> Self {
        Self {
            embeddings: true,
            attribution: true,
            ood: true,
            study: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Strategies whose own models are swept.
    pub strategies: Vec<MaskingStrategy>,
    pub subgroups: Vec<Subgroup>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            strategies: vec![MaskingStrategy::OnlyRoi, MaskingStrategy::NoRoi],
            subgroups: vec![Subgroup::All, Subgroup::PositivesOnly, Subgroup::NegativesOnly],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub model_strategy: MaskingStrategy,
    pub fold: usize,
    pub max_images: usize,
    /// t-SNE perplexity; needs at least 3x as many points.
    pub perplexity: f64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            model_strategy: MaskingStrategy::Full,
            fold: 0,
            max_images: 200,
            perplexity: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionSection {
    pub model_strategies: Vec<MaskingStrategy>,
    pub fold: usize,
    /// Test positives explained per model.
    pub n_images: usize,
    pub segments: usize,
    pub n_evaluations: usize,
}

impl Default for AttributionSection {
    fn default() -> Self {
        Self {
            model_strategies: vec![MaskingStrategy::Full, MaskingStrategy::NoRoi],
            fold: 0,
            n_images: 4,
            segments: 16,
            n_evaluations: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSection {
    /// External manifest relative to the data root; synthetic runs generate
    /// an inverted-tag split instead when absent.
    pub manifest: Option<PathBuf>,
    pub n_samples: usize,
}

impl Default for OodSection {
    fn default() -> Self {
        Self {
            manifest: None,
            n_samples: 500,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    /// Parses and validates; every problem is reported, not just the first.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        let problems = cfg.problems();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths are relative to the config file
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.data_root, &mut cfg.output_root] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV).filter(|v| !v.is_empty()) {
            cfg.data_root = PathBuf::from(root);
        }
        Ok(cfg)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable as TOML")
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.run_id.is_empty() || !self.run_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            out.push(format!("run_id `{}`: use letters, digits, `-`, `_` or `.`", self.run_id));
        }
        if self.strategies.is_empty() {
            out.push("strategies: at least one masking strategy is required".into());
        }
        if self.strategies.iter().collect::<BTreeSet<_>>().len() != self.strategies.len() {
            out.push("strategies: duplicates".into());
        }
        if self.dilation_factors.is_empty() || self.dilation_factors.iter().any(|&f| f < 0) {
            out.push("dilation_factors: need at least one non-negative factor".into());
        }
        if self.dilation_factors.windows(2).any(|w| w[0] >= w[1]) {
            out.push("dilation_factors: must be strictly increasing".into());
        }
        if self.image_size < 8 {
            out.push(format!("image_size {}: must be at least 8", self.image_size));
        }
        if let DatasetSection::Synthetic { synthetic } = &self.dataset {
            if let Err(e) = synthetic.validate() {
                out.push(format!("dataset.synthetic: {e}"));
            }
        }
        if let Some(s) = &self.split {
            if s.k < 2 {
                out.push(format!("split.k {}: need at least 2 folds", s.k));
            }
            if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) {
                out.push(format!("split.test_fraction {}: must be in (0, 1)", s.test_fraction));
            }
        }
        if let Some(lr) = self.train.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                out.push(format!("train.learning_rate {lr}: must be positive"));
            }
        }
        if self.train.batch_size == Some(0) || self.train.max_epochs == Some(0) {
            out.push("train: batch_size and max_epochs must be positive".into());
        }
        let k = self.split_config().k;
        for (name, strategies) in [
            ("sweep.strategies", &self.sweep.strategies),
            ("attribution.model_strategies", &self.attribution.model_strategies),
        ] {
            for s in strategies {
                if !self.strategies.contains(s) {
                    out.push(format!("{name}: {s} is not in `strategies`"));
                }
            }
        }
        if self.analysis.embeddings {
            if !self.strategies.contains(&self.embeddings.model_strategy) {
                out.push(format!("embeddings.model_strategy: {} is not trained", self.embeddings.model_strategy));
            }
            if !self.strategies.contains(&MaskingStrategy::Full) {
                out.push("embeddings: comparisons are against FULL, which is not in `strategies`".into());
            }
            if self.embeddings.fold >= k {
                out.push(format!("embeddings.fold {}: only {k} folds", self.embeddings.fold));
            }
            if self.embeddings.max_images < 4 {
                out.push("embeddings.max_images: need at least 4".into());
            }
            let points = self.embeddings.max_images * self.strategies.len().max(1);
            let p = self.embeddings.perplexity;
            if !(p >= 1.0) || 3.0 * p > points as f64 {
                out.push(format!(
                    "embeddings.perplexity {p}: must be >= 1 and at most a third of the {points} projected points"
                ));
            }
        }
        if self.analysis.attribution {
            let a = &self.attribution;
            if a.fold >= k {
                out.push(format!("attribution.fold {}: only {k} folds", a.fold));
            }
            if a.segments < 2 || a.n_evaluations < a.segments + 2 {
                out.push("attribution: need segments >= 2 and n_evaluations >= segments + 2".into());
            }
        }
        if self.analysis.ood && self.ood.manifest.is_none() {
            match &self.dataset {
                DatasetSection::Synthetic { .. } if self.ood.n_samples < 10 => {
                    out.push("ood.n_samples: need at least 10".into())
                }
                DatasetSection::Manifest { .. } => {
                    out.push("ood: manifest datasets need `ood.manifest` (or disable analysis.ood)".into())
                }
                _ => {}
            }
        }
        out
    }

    pub fn split_config(&self) -> SplitConfig {
        self.split.clone().unwrap_or(SplitConfig {
            seed: self.seed,
            ..SplitConfig::default()
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let base = match t.preset {
            TrainPreset::Desk => TrainConfig::desk(),
            TrainPreset::Chest => TrainConfig::chest(),
            TrainPreset::Fundus => TrainConfig::fundus(),
        };
        TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            max_epochs: t.max_epochs.unwrap_or(base.max_epochs),
            early_stop_patience: t.early_stop_patience.unwrap_or(base.early_stop_patience),
            seed: self.seed,
            ..base
        }
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            target_size: self.image_size,
        }
    }

    pub fn study_seed(&self) -> u64 {
        self.study.seed.unwrap_or(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        data_root = "data"
        output_root = "runs/a"
        [dataset]
        source = "synthetic"
        [dataset.synthetic]
        n_samples = 100
        roi_feature_strength = 1.0
        shortcut_strength = 1.0
        size_confound = 0.0
        seed = 1
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.strategies, MaskingStrategy::ALL.to_vec());
        assert_eq!(c.dilation_factors, DEFAULT_DILATION_FACTORS.to_vec());
        assert_eq!(c.train_config(), TrainConfig { seed: 0, ..TrainConfig::desk() });
        // snapshot round trip
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn all_problems_are_reported() {
        let bad = MINIMAL.replace("output_root = \"runs/a\"", "output_root = \"runs/a\"\nstrategies = []\ndilation_factors = [5, 0]");
        match ExperimentConfig::from_toml(&bad) {
            Err(CliError::Config(p)) => assert!(p.len() >= 3, "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("data_root", "colour = 1\ndata_root");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(CliError::Config(_))));
    }
}
