//! TOML run configuration. Unknown keys are rejected; every field has a
//! default, so an empty file is a valid config.

use std::path::{Path, PathBuf};

use ldgd_core::train::TrainConfig;
use ldgd_core::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub decode: DecodeSection,
    pub cv: CvSection,
    pub features: FeatureSection,
    pub synth: SynthConfig,
    pub gradcheck: GradCheckSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Input table for every command except `synth`, which writes it.
    pub dataset: Option<PathBuf>,
    /// Model read by infer/decode. Defaults to `<output_dir>/model.json`.
    pub model_in: Option<PathBuf>,
    /// Model written by train. Defaults to `<output_dir>/model.json`.
    pub model_out: Option<PathBuf>,
    /// Predictions read by eval. Defaults to `<output_dir>/predictions.csv`.
    pub predictions: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            model_in: None,
            model_out: None,
            predictions: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: usize,
    /// Defaults to `min(15, N / 2)`.
    pub num_inducing: Option<usize>,
    pub lengthscale_init: f64,
    pub variance_init: f64,
    /// Initial noise standard deviation as a fraction of each feature's.
    pub noise_init_scale: f64,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            num_inducing: None,
            lengthscale_init: 1.0,
            variance_init: 1.0,
            noise_init_scale: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentInit {
    Nearest,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub n_samples: usize,
    /// Discrete draws per step when labels take part (infer).
    pub mc_samples_discrete: usize,
    pub init: LatentInit,
    pub seed: u64,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = TrainConfig::decode_default();
        Self {
            iterations: d.max_iters,
            learning_rate: d.learning_rate,
            n_samples: 100,
            mc_samples_discrete: d.mc_samples_discrete,
            init: LatentInit::Nearest,
            seed: 0,
        }
    }
}

impl DecodeSection {
    pub fn optimizer(&self) -> TrainConfig {
        TrainConfig {
            max_iters: self.iterations,
            learning_rate: self.learning_rate,
            mc_samples_discrete: self.mc_samples_discrete,
            seed: self.seed,
            ..TrainConfig::decode_default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub k_folds: usize,
    pub seed: u64,
    /// Run folds on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl Default for CvSection {
    fn default() -> Self {
        Self {
            k_folds: 5,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// Features kept by point-biserial ranking; values at or above D keep
    /// every column.
    pub k_features: usize,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self { k_features: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    /// Tiny models are built from seeds `0..seeds`.
    pub seeds: u64,
    pub h: f64,
    pub tol: f64,
    /// Test hook: add 1 to one analytic gradient entry per model.
    pub corrupt: bool,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        Self {
            seeds: 10,
            h: 1e-5,
            tol: 1e-4,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Write measured per-iteration wall time into the trace table (off by
    /// default so repeated runs produce identical files).
    pub wall_time: bool,
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(CliError::Config(format!("{name} must be positive")));
    }
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        p.output_dir = resolve(base, &p.output_dir);
        for slot in [&mut p.dataset, &mut p.model_in, &mut p.model_out, &mut p.predictions] {
            if let Some(v) = slot.as_mut() {
                *v = resolve(base, v);
            }
        }
    }

    /// Sets every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.decode.seed = seed;
        self.cv.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        positive("model.latent_dim", self.model.latent_dim)?;
        if self.model.num_inducing == Some(0) {
            return Err(CliError::Config("model.num_inducing must be positive".into()));
        }
        for (name, v) in [
            ("model.lengthscale_init", self.model.lengthscale_init),
            ("model.variance_init", self.model.variance_init),
            ("model.noise_init_scale", self.model.noise_init_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{name} must be positive and finite")));
            }
        }
        self.train.validate()?;
        self.decode.optimizer().validate()?;
        positive("decode.n_samples", self.decode.n_samples)?;
        positive("features.k_features", self.features.k_features)?;
        if self.cv.k_folds < 2 {
            return Err(CliError::Config("cv.k_folds must be at least 2".into()));
        }
        self.synth.validate()?;
        positive("gradcheck.seeds", self.gradcheck.seeds as usize)?;
        if !(self.gradcheck.h > 0.0 && self.gradcheck.tol > 0.0) {
            return Err(CliError::Config(
                "gradcheck.h and gradcheck.tol must be positive".into(),
            ));
        }
        let p = &self.paths;
        if let Some(d) = &p.dataset {
            for (name, other) in [("model_out", &p.model_out), ("predictions", &p.predictions)] {
                if other.as_ref() == Some(d) {
                    return Err(CliError::Config(format!("paths.{name} must differ from paths.dataset")));
                }
            }
        }
        Ok(())
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.paths
            .dataset
            .as_deref()
            .ok_or_else(|| CliError::Config("paths.dataset is required for this command".into()))
    }

    pub fn model_in(&self) -> PathBuf {
        self.paths
            .model_in
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("model.json"))
    }

    pub fn model_out(&self) -> PathBuf {
        self.paths
            .model_out
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("model.json"))
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.paths
            .predictions
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("predictions.csv"))
    }

    /// Effective configuration as TOML, defaults filled in.
    pub fn dump(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}
