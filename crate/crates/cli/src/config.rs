//! Pipeline configuration (TOML). Unknown keys are rejected so typos surface
//! as config errors with their field path instead of silently using defaults.

use std::path::{Path, PathBuf};

use reputa::augment::{GanConfig, Method};
use reputa::features::OutlierScope;
use reputa::gbdt::GbdtHyperparams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Mandatory, either here or via `--seed`.
    pub seed: Option<u64>,
    /// Where stage directories are created; `--out` overrides. Not part of
    /// any config hash, so the same experiment can be run into two places.
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub augmentation: AugmentationSection,
    #[serde(default)]
    pub gbdt: GbdtSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub cae: CaeSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Fixture directory (one JSON file per contract plus labels.csv).
    pub fixture_dir: Option<PathBuf>,
    /// CSV of `address,label` to download instead; needs the API key env var.
    pub fetch_list: Option<PathBuf>,
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_rps")]
    pub requests_per_second: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_base_url() -> String {
    reputa::ingest::DEFAULT_BASE_URL.to_string()
}
fn default_rps() -> f64 {
    5.0
}
fn default_test_fraction() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            dim: 50,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSection {
    pub methods: Vec<Method>,
    /// Minority size after augmentation; absent means match the majority.
    pub target_count: Option<usize>,
    pub k_neighbors: usize,
    pub gan: GanConfig,
}

impl PartialEq for AugmentationSection {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

impl Default for AugmentationSection {
    fn default() -> Self {
        AugmentationSection {
            methods: vec![Method::Smote, Method::Adasyn, Method::Gan],
            target_count: None,
            k_neighbors: 5,
            gan: GanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtSection {
    pub learning_rates: Vec<f64>,
    pub max_depths: Vec<usize>,
    pub n_estimators: Vec<usize>,
    pub subsample: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub min_samples_leaf: usize,
    pub n_bins: usize,
    pub cv_folds: usize,
}

impl Default for GbdtSection {
    fn default() -> Self {
        let hp = GbdtHyperparams::default();
        GbdtSection {
            learning_rates: vec![0.2, 0.1, 0.01],
            max_depths: (2..=8).collect(),
            n_estimators: vec![100, 200, 300],
            subsample: hp.subsample,
            reg_alpha: hp.reg_alpha,
            reg_lambda: hp.reg_lambda,
            min_samples_leaf: hp.min_samples_leaf,
            n_bins: hp.n_bins,
            cv_folds: 5,
        }
    }
}

impl GbdtSection {
    pub fn grid(&self, seed: u64) -> Vec<GbdtHyperparams> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &max_depth in &self.max_depths {
                for &n_estimators in &self.n_estimators {
                    out.push(GbdtHyperparams {
                        learning_rate,
                        max_depth,
                        subsample: self.subsample,
                        reg_alpha: self.reg_alpha,
                        reg_lambda: self.reg_lambda,
                        n_estimators,
                        min_samples_leaf: self.min_samples_leaf,
                        n_bins: self.n_bins,
                        seed,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub window: usize,
    pub stride: usize,
    pub outlier_k: f64,
    pub outlier_scope: OutlierScope,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            window: 24,
            stride: 1,
            outlier_k: 3.0,
            outlier_scope: OutlierScope::Global,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaeSection {
    pub projection_width: usize,
    pub bottleneck: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for CaeSection {
    fn default() -> Self {
        CaeSection {
            projection_width: 8,
            bottleneck: 8,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Percentile used for the reported anomaly verdicts.
    pub percentile: f64,
    /// Percentiles compared by the sweep.
    pub sweep: Vec<f64>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            percentile: 90.0,
            sweep: reputa::eval::DEFAULT_PERCENTILES.to_vec(),
        }
    }
}

fn config_err(field: &str, msg: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        msg: msg.into(),
    }
}

impl PipelineConfig {
    /// Parses TOML; relative data paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_err("<syntax>", e.message().to_string()))?;
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path == "." { "<root>" } else { &path }, e.inner().message().to_string())
        })?;
        for p in [&mut cfg.data.fixture_dir, &mut cfg.data.fetch_list].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(o) = &mut cfg.output_dir {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    /// Checks everything that can be checked before any stage runs.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed.is_none() {
            return Err(config_err("seed", "a seed is required (config `seed` or --seed)"));
        }
        match (&self.data.fixture_dir, &self.data.fetch_list) {
            (Some(_), Some(_)) => return Err(config_err("data", "set only one of fixture_dir and fetch_list")),
            (None, None) => return Err(config_err("data", "one of fixture_dir or fetch_list is required")),
            (Some(d), None) if !d.is_dir() => {
                return Err(config_err("data.fixture_dir", format!("{} is not a directory", d.display())))
            }
            (None, Some(f)) if !f.is_file() => {
                return Err(config_err("data.fetch_list", format!("{} does not exist", f.display())))
            }
            _ => {}
        }
        let d = &self.data;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(config_err("data.test_fraction", "must lie in (0, 1)"));
        }
        if !(d.requests_per_second > 0.0) {
            return Err(config_err("data.requests_per_second", "must be positive"));
        }
        let e = &self.embedding;
        if e.dim == 0 || e.epochs == 0 || e.batch_size == 0 || !(e.learning_rate > 0.0) {
            return Err(config_err("embedding", "dim, epochs, batch_size and learning_rate must be positive"));
        }
        if self.augmentation.k_neighbors == 0 {
            return Err(config_err("augmentation.k_neighbors", "must be positive"));
        }
        let g = &self.gbdt;
        for (name, empty) in [
            ("gbdt.learning_rates", g.learning_rates.is_empty()),
            ("gbdt.max_depths", g.max_depths.is_empty()),
            ("gbdt.n_estimators", g.n_estimators.is_empty()),
        ] {
            if empty {
                return Err(config_err(name, "grid axis is empty"));
            }
        }
        if g.cv_folds < 2 {
            return Err(config_err("gbdt.cv_folds", "need at least 2 folds"));
        }
        for (i, hp) in g.grid(0).iter().enumerate() {
            hp.validate().map_err(|e| config_err("gbdt", format!("grid entry {i}: {e}")))?;
        }
        let f = &self.features;
        if f.window == 0 || !f.window.is_multiple_of(4) {
            return Err(config_err("features.window", "must be a positive multiple of 4"));
        }
        if f.stride == 0 {
            return Err(config_err("features.stride", "must be positive"));
        }
        if !(f.outlier_k > 0.0) {
            return Err(config_err("features.outlier_k", "must be positive"));
        }
        let c = &self.cae;
        if c.epochs == 0 || c.batch_size == 0 || c.bottleneck == 0 || c.projection_width == 0 || !(c.learning_rate > 0.0) {
            return Err(config_err("cae", "epochs, batch_size, bottleneck, projection_width and learning_rate must be positive"));
        }
        let in_range = |p: f64| (75.0..=90.0).contains(&p);
        if !in_range(self.evaluation.percentile) {
            return Err(config_err("evaluation.percentile", "must lie in [75, 90]"));
        }
        if self.evaluation.sweep.is_empty() {
            return Err(config_err("evaluation.sweep", "no percentiles given"));
        }
        if let Some(p) = self.evaluation.sweep.iter().find(|p| !in_range(**p)) {
            return Err(config_err("evaluation.sweep", format!("{p} is outside [75, 90]")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_path_in_errors() {
        let err = PipelineConfig::from_toml("seed = 1\n[data]\nfixture_dir = \"x\"\n[cae]\nepochs = \"many\"\n", Path::new("."))
            .unwrap_err();
        match err {
            CliError::Config { field, .. } => assert_eq!(field, "cae.epochs"),
            other => panic!("{other:?}"),
        }
        let err = PipelineConfig::from_toml("seed = 1\n[data]\nfixture_dir = \"x\"\n[gbdt]\ndepth = 3\n", Path::new("."))
            .unwrap_err();
        assert!(matches!(&err, CliError::Config { field, .. } if field.starts_with("gbdt")), "{err:?}");
    }

    #[test]
    fn defaults_match_module_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 1\n[data]\nfixture_dir = \"x\"\n", Path::new("/base")).unwrap();
        assert_eq!(cfg.data.fixture_dir.as_deref(), Some(Path::new("/base/x")));
        assert_eq!(cfg.gbdt.grid(0).len(), 63);
        assert_eq!(cfg.features.window, 24);
        assert_eq!(cfg.evaluation.sweep, vec![75.0, 80.0, 85.0, 90.0]);
    }
}
