//! Run configuration. One TOML file, every key optional; command-line flags
//! are applied on top before validation.

use std::path::{Path, PathBuf};

use kdlens::data::{ImageDirOptions, Split, SynthSpec, SYNTH_CLASSES};
use kdlens::distill::SoftMode;
use kdlens::evaluate::FidelityMethod;
use kdlens::explain::PatchGrid;
use kdlens::models::{TEACHER_DEFAULT_DEPTH, TEACHER_MIN_DEPTH};
use kdlens::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SPLIT: [f64; 3] = [0.7, 0.2, 0.1];
/// Train/val ratios when the IDX source brings its own test files.
pub const DEFAULT_SPLIT_WITH_TEST: [f64; 2] = [0.8, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    pub split: SplitConfig,
    pub teacher: TeacherConfig,
    pub distill: DistillGrid,
    pub explain: ExplainConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: None,
            dataset: DatasetSource::Synth(SynthParams::default()),
            split: SplitConfig::default(),
            teacher: TeacherConfig::default(),
            distill: DistillGrid::default(),
            explain: ExplainConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSource {
    Synth(SynthParams),
    Idx(IdxPaths),
    ImageDir(ImageDirParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub image_size: usize,
    pub blob_sigma: f64,
    pub noise_sigma: f64,
    pub samples_per_class: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        let d = SynthSpec::default();
        Self {
            image_size: d.image_size,
            blob_sigma: d.blob_sigma,
            noise_sigma: d.noise_sigma,
            samples_per_class: d.samples_per_class,
        }
    }
}

impl SynthParams {
    pub fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            image_size: self.image_size,
            num_classes: SYNTH_CLASSES,
            blob_sigma: self.blob_sigma,
            noise_sigma: self.noise_sigma,
            samples_per_class: self.samples_per_class,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDirParams {
    pub root: PathBuf,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default = "thirty_two")]
    pub height: usize,
    #[serde(default = "thirty_two")]
    pub width: usize,
}

fn one() -> usize {
    1
}

fn thirty_two() -> usize {
    32
}

impl ImageDirParams {
    pub fn options(&self) -> ImageDirOptions {
        ImageDirOptions {
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Train/val(/test) fractions; defaults depend on the dataset source.
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Trained teacher used by `distill`, `evaluate` and `export-logits`.
    pub model: Option<PathBuf>,
    /// Precomputed teacher logits, an alternative teacher for `distill`.
    pub logits: Option<PathBuf>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            depth: TEACHER_DEFAULT_DEPTH,
            epochs: 15,
            batch_size: 16,
            learning_rate: 1e-4,
            model: None,
            logits: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillGrid {
    pub alphas: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub soft_mode: SoftMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Grid cells trained concurrently.
    pub jobs: usize,
}

impl Default for DistillGrid {
    fn default() -> Self {
        Self {
            alphas: vec![0.7],
            temperatures: vec![10.0],
            soft_mode: SoftMode::TeacherVsStudent,
            epochs: 15,
            batch_size: 16,
            learning_rate: 1e-4,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainMethod {
    AvgFeatureMaps,
    GradCam,
    ShapleyPatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub model: Option<PathBuf>,
    pub methods: Vec<ExplainMethod>,
    /// PNG files to explain. When empty, samples come from the dataset.
    pub images: Vec<PathBuf>,
    /// Dataset sample ids; when empty the first `count` samples of `split`.
    pub ids: Vec<String>,
    pub split: Split,
    pub count: usize,
    pub patch_size: usize,
    pub baseline: f64,
    pub permutations: usize,
    pub alpha_blend: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        let grid = PatchGrid::default();
        Self {
            model: None,
            methods: vec![ExplainMethod::AvgFeatureMaps, ExplainMethod::GradCam, ExplainMethod::ShapleyPatch],
            images: Vec::new(),
            ids: Vec::new(),
            split: Split::Test,
            count: 1,
            patch_size: grid.patch_size,
            baseline: grid.baseline,
            permutations: 16,
            alpha_blend: 0.5,
        }
    }
}

impl ExplainConfig {
    pub fn grid(&self) -> PatchGrid {
        PatchGrid {
            patch_size: self.patch_size,
            baseline: self.baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub student: Option<PathBuf>,
    pub split: Split,
    pub epsilons: Vec<f64>,
    pub quantile: f64,
    pub fidelity_methods: Vec<FidelityMethod>,
    /// Only the first this many samples of the split enter the fidelity table.
    pub fidelity_limit: Option<usize>,
    pub excluded_classes: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub positive_class: usize,
    pub efficiency: bool,
    pub warmup: usize,
    pub runs: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            student: None,
            split: Split::Test,
            epsilons: vec![0.02],
            quantile: 0.8,
            fidelity_methods: FidelityMethod::ALL.to_vec(),
            fidelity_limit: None,
            excluded_classes: Vec::new(),
            thresholds: (1..100).map(|i| i as f64 / 100.0).collect(),
            positive_class: 0,
            efficiency: true,
            warmup: 3,
            runs: 20,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// Parses TOML. Relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSource::Synth(_) => {}
            DatasetSource::Idx(p) => {
                fix(&mut p.train_images);
                fix(&mut p.train_labels);
                p.test_images.iter_mut().for_each(fix);
                p.test_labels.iter_mut().for_each(fix);
            }
            DatasetSource::ImageDir(p) => fix(&mut p.root),
        }
        self.output_dir.iter_mut().for_each(fix);
        self.teacher.model.iter_mut().for_each(fix);
        self.teacher.logits.iter_mut().for_each(fix);
        self.explain.model.iter_mut().for_each(fix);
        self.explain.images.iter_mut().for_each(fix);
        self.evaluate.student.iter_mut().for_each(fix);
    }

    pub fn split_ratios(&self) -> Vec<f64> {
        match (&self.split.ratios, &self.dataset) {
            (Some(r), _) => r.clone(),
            (None, DatasetSource::Idx(IdxPaths { test_images: Some(_), .. })) => DEFAULT_SPLIT_WITH_TEST.to_vec(),
            (None, _) => DEFAULT_SPLIT.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSource::Synth(p) => p.spec(self.seed).validate()?,
            DatasetSource::Idx(p) => {
                if p.test_images.is_some() != p.test_labels.is_some() {
                    return Err(config_err("dataset.test_images and dataset.test_labels go together"));
                }
            }
            DatasetSource::ImageDir(p) => {
                if !matches!(p.channels, 1 | 3) || p.height == 0 || p.width == 0 {
                    return Err(config_err("image-dir needs 1 or 3 channels and a non-zero size"));
                }
            }
        }
        let ratios = self.split_ratios();
        if let DatasetSource::Idx(IdxPaths { test_images: Some(_), .. }) = self.dataset {
            if ratios.len() != 2 {
                return Err(config_err("with IDX test files, split.ratios must be [train, val]"));
            }
        }
        if !(2..=3).contains(&ratios.len()) || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(config_err(format!("split.ratios must be 2 or 3 fractions, got {ratios:?}")));
        }
        if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config_err(format!("split.ratios must sum to 1, got {ratios:?}")));
        }

        let t = &self.teacher;
        if t.depth < TEACHER_MIN_DEPTH {
            return Err(config_err(format!("teacher.depth must be ≥ {TEACHER_MIN_DEPTH}, got {}", t.depth)));
        }
        if t.epochs == 0 || t.batch_size == 0 || !(t.learning_rate > 0.0) {
            return Err(config_err("teacher epochs and batch_size must be ≥ 1, learning_rate > 0"));
        }

        let d = &self.distill;
        if d.alphas.is_empty() || d.temperatures.is_empty() {
            return Err(config_err("distill.alphas and distill.temperatures must be non-empty"));
        }
        if let Some(a) = d.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(config_err(format!("alpha must lie in [0,1], got {a}")));
        }
        if let Some(t) = d.temperatures.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(config_err(format!("temperature must be positive, got {t}")));
        }
        if d.epochs == 0 || d.batch_size == 0 || d.jobs == 0 || !(d.learning_rate > 0.0) {
            return Err(config_err("distill epochs, batch_size and jobs must be ≥ 1, learning_rate > 0"));
        }

        let x = &self.explain;
        if x.methods.is_empty() {
            return Err(config_err("explain.methods is empty"));
        }
        if x.patch_size == 0 || x.permutations == 0 {
            return Err(config_err("explain.patch_size and explain.permutations must be ≥ 1"));
        }
        if !(0.0..=1.0).contains(&x.alpha_blend) || !(0.0..=1.0).contains(&x.baseline) {
            return Err(config_err("explain.alpha_blend and explain.baseline must lie in [0,1]"));
        }

        let e = &self.evaluate;
        if let Some(eps) = e.epsilons.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(config_err(format!("epsilon must be ≥ 0, got {eps}")));
        }
        if !(0.0..=1.0).contains(&e.quantile) {
            return Err(config_err(format!("quantile must lie in [0,1], got {}", e.quantile)));
        }
        if let Some(t) = e.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(config_err(format!("thresholds must lie in (0,1), got {t}")));
        }
        if e.efficiency && e.runs == 0 {
            return Err(config_err("evaluate.runs must be ≥ 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }
}
