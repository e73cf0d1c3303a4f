//! Run configuration: a flat `key = value` file format, command-line
//! overrides, resolution against defaults, and a stable content hash that
//! every artifact embeds.
//!
//! Precedence, highest first: command-line flag, config file, the
//! `NOISECURATOR_SEED` environment variable (seed only), built-in default.
//! Unknown and duplicate keys are rejected by name, and every parse or
//! validation error names the offending key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use noisecurator_core::baselines::FilterMethod;
use noisecurator_core::bilevel::{BilevelConfig, Optimizer, TrainConfig};
use noisecurator_core::data::SplitSpec;
use noisecurator_core::derive_seed;
use noisecurator_core::eval::GridSpec;
use noisecurator_core::losses::{LossKind, RobustLoss};
use noisecurator_core::model::{Arch, FeatureSpec};
use noisecurator_core::noise::{NoiseModel, NoiseSpec};
use sha2::{Digest, Sha256};

/// Environment variable consulted for `seed` when neither a flag nor the
/// config file sets one.
pub const SEED_ENV_VAR: &str = "NOISECURATOR_SEED";

/// Every key the config file and the override flags may set.
pub const KEYS: &[&str] = &[
    "arch",
    "blob_classes",
    "blob_dim",
    "blob_per_class",
    "blob_separation",
    "budget",
    "dataset",
    "feature_dim",
    "features",
    "filter_method",
    "hidden",
    "inner_batch_size",
    "inner_epochs",
    "inner_optimizer",
    "inner_step",
    "ngram_order",
    "noise",
    "noise_matrix",
    "noise_max_rate",
    "noise_rate",
    "noise_tau",
    "out_dir",
    "outer_iterations",
    "outer_loss",
    "outer_step",
    "rce_a",
    "sampler",
    "seed",
    "surface_losses",
    "surface_range",
    "surface_steps",
    "test_dataset",
    "train_batch_size",
    "train_epochs",
    "train_fraction",
    "train_optimizer",
    "train_step",
    "warm_start",
    "weight_optimizer",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line} is not `key = value`: `{content}`")]
    MalformedLine { line: usize, content: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("duplicate config key `{key}`")]
    DuplicateKey { key: String },
    #[error("config key `{key}` expects {expected}, got `{value}`")]
    TypeMismatch { key: String, expected: &'static str, value: String },
    #[error("missing required config key `{key}` ({reason})")]
    MissingKey { key: &'static str, reason: &'static str },
    #[error("config key `{key}` is invalid: {reason}")]
    InvalidValue { key: &'static str, reason: String },
    #[error("config key `{key}` references `{path}`, which does not exist")]
    MissingFile { key: &'static str, path: PathBuf },
}

/// Defines a config-side enum with its `key = value` spelling plus parse and
/// render helpers, so file values and flag values go through one code path.
macro_rules! choice {
    ($(#[$doc:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant,)+
        }

        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text,)+
                }
            }

            fn parse(key: &str, value: &str) -> Result<Self, ConfigError> {
                match value {
                    $($text => Ok($name::$variant),)+
                    _ => Err(ConfigError::TypeMismatch {
                        key: key.to_string(),
                        expected: concat!("one of ", $("`", $text, "` "),+),
                        value: value.to_string(),
                    }),
                }
            }
        }
    };
}

choice! {
    /// Which first-order optimizer to use (Adam runs with its usual
    /// 0.9/0.999/1e-8 constants).
    OptimizerChoice { Sgd => "sgd", Adam => "adam" }
}

choice! {
    /// Classifier architecture; `one_hidden` takes its width from `hidden`.
    ArchChoice { Linear => "linear", OneHidden => "one_hidden" }
}

choice! {
    /// The robust outer objective measured on the validation split.
    OuterLossChoice { Rce => "rce", Mae => "mae" }
}

choice! {
    /// How raw examples become the dense vectors the classifier consumes.
    FeatureChoice { Identity => "identity", HashedNgram => "hashed_ngram" }
}

choice! {
    /// The label-corruption model, or `none` to leave labels untouched.
    NoiseChoice {
        None => "none",
        Uniform => "uniform",
        ClassDependent => "class_dependent",
        InstanceDependent => "instance_dependent",
    }
}

choice! {
    /// How the budgeted subset is drawn from the learned weights.
    SamplerChoice { Bernoulli => "bernoulli", TopK => "top_k" }
}

choice! {
    /// Which classical filtering baseline the `filter` command runs.
    FilterChoice { SmallLoss => "small_loss", Confidence => "confidence" }
}

choice! {
    /// Loss kinds a surface probe may evaluate.
    SurfaceLossChoice { Ce => "ce", Rce => "rce", Mae => "mae" }
}

/// A fully-resolved run configuration: the union of the bilevel settings,
/// featurization, noise model, subset budget, dataset paths, output
/// directory, and the one global seed every stochastic component derives
/// its own stream from.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Dataset to ingest; Gaussian blobs are generated when absent.
    pub dataset: Option<PathBuf>,
    /// Optional held-out evaluation set with trusted labels.
    pub test_dataset: Option<PathBuf>,
    pub blob_per_class: usize,
    pub blob_classes: usize,
    pub blob_dim: usize,
    pub blob_separation: f64,
    pub features: FeatureChoice,
    pub feature_dim: Option<usize>,
    pub ngram_order: usize,
    pub noise: NoiseChoice,
    pub noise_rate: f64,
    pub noise_matrix: Option<Vec<Vec<f64>>>,
    pub noise_max_rate: f64,
    pub noise_tau: f64,
    pub train_fraction: f64,
    pub outer_iterations: usize,
    pub outer_step: f64,
    pub weight_optimizer: OptimizerChoice,
    pub inner_epochs: usize,
    pub inner_step: f64,
    pub inner_batch_size: usize,
    pub inner_optimizer: OptimizerChoice,
    pub outer_loss: OuterLossChoice,
    pub rce_a: f64,
    pub warm_start: bool,
    pub arch: ArchChoice,
    pub hidden: usize,
    /// Subset size; defaults to half the train split when unset.
    pub budget: Option<usize>,
    pub sampler: SamplerChoice,
    pub filter_method: FilterChoice,
    pub train_epochs: usize,
    pub train_step: f64,
    pub train_batch_size: usize,
    pub train_optimizer: OptimizerChoice,
    pub surface_steps: usize,
    pub surface_range: f64,
    pub surface_losses: Vec<SurfaceLossChoice>,
}

/// Values taken from command-line flags; any `Some` beats the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub blob_per_class: Option<usize>,
    pub blob_classes: Option<usize>,
    pub blob_dim: Option<usize>,
    pub blob_separation: Option<f64>,
    pub features: Option<String>,
    pub feature_dim: Option<usize>,
    pub ngram_order: Option<usize>,
    pub noise: Option<String>,
    pub noise_rate: Option<f64>,
    pub noise_matrix: Option<String>,
    pub noise_max_rate: Option<f64>,
    pub noise_tau: Option<f64>,
    pub train_fraction: Option<f64>,
    pub outer_iterations: Option<usize>,
    pub outer_step: Option<f64>,
    pub weight_optimizer: Option<String>,
    pub inner_epochs: Option<usize>,
    pub inner_step: Option<f64>,
    pub inner_batch_size: Option<usize>,
    pub inner_optimizer: Option<String>,
    pub outer_loss: Option<String>,
    pub rce_a: Option<f64>,
    pub warm_start: Option<bool>,
    pub arch: Option<String>,
    pub hidden: Option<usize>,
    pub budget: Option<usize>,
    pub sampler: Option<String>,
    pub filter_method: Option<String>,
    pub train_epochs: Option<usize>,
    pub train_step: Option<f64>,
    pub train_batch_size: Option<usize>,
    pub train_optimizer: Option<String>,
    pub surface_steps: Option<usize>,
    pub surface_range: Option<f64>,
    pub surface_losses: Option<String>,
}

/// Parses a config file into raw key/value strings, rejecting malformed
/// lines and duplicate keys. Blank lines and lines starting with `#` are
/// ignored.
fn parse_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::MalformedLine { line: i + 1, content: line.to_string() })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::MalformedLine { line: i + 1, content: line.to_string() });
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(ConfigError::DuplicateKey { key });
        }
    }
    for key in map.keys() {
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { key: key.clone() });
        }
    }
    Ok(map)
}

fn get_usize(map: &BTreeMap<String, String>, key: &str) -> Result<Option<usize>, ConfigError> {
    map.get(key)
        .map(|v| {
            v.parse().map_err(|_| ConfigError::TypeMismatch {
                key: key.to_string(),
                expected: "an unsigned integer",
                value: v.clone(),
            })
        })
        .transpose()
}

fn get_u64(map: &BTreeMap<String, String>, key: &str) -> Result<Option<u64>, ConfigError> {
    map.get(key)
        .map(|v| {
            v.parse().map_err(|_| ConfigError::TypeMismatch {
                key: key.to_string(),
                expected: "an unsigned integer",
                value: v.clone(),
            })
        })
        .transpose()
}

fn get_f64(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>, ConfigError> {
    map.get(key)
        .map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ConfigError::TypeMismatch {
                    key: key.to_string(),
                    expected: "a finite number",
                    value: v.clone(),
                })
        })
        .transpose()
}

fn get_bool(map: &BTreeMap<String, String>, key: &str) -> Result<Option<bool>, ConfigError> {
    map.get(key)
        .map(|v| match v.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(ConfigError::TypeMismatch {
                key: key.to_string(),
                expected: "`true` or `false`",
                value: v.clone(),
            }),
        })
        .transpose()
}

fn get_path(map: &BTreeMap<String, String>, key: &str) -> Option<PathBuf> {
    map.get(key).map(PathBuf::from)
}

/// Resolves one choice-typed key: the override wins, otherwise the file
/// value is parsed, otherwise `None` (the caller supplies the default).
fn parse_choice<T>(
    map: &BTreeMap<String, String>,
    key: &'static str,
    ov_value: &Option<String>,
    parse: fn(&str, &str) -> Result<T, ConfigError>,
) -> Result<Option<T>, ConfigError> {
    match ov_value {
        Some(v) => Ok(Some(parse(key, v)?)),
        None => map.get(key).map(|v| parse(key, v)).transpose(),
    }
}

/// Parses `0.7,0.3;0.2,0.8` into rows of a transition matrix. Shape and
/// row-sum constraints are checked later, against the actual class count.
fn parse_matrix(key: &str, value: &str) -> Result<Vec<Vec<f64>>, ConfigError> {
    let mismatch = || ConfigError::TypeMismatch {
        key: key.to_string(),
        expected: "rows of comma-separated numbers joined by `;`",
        value: value.to_string(),
    };
    value
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|cell| cell.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(mismatch)
        })
        .collect()
}

fn parse_surface_losses(key: &str, value: &str) -> Result<Vec<SurfaceLossChoice>, ConfigError> {
    value.split(',').map(|item| SurfaceLossChoice::parse(key, item.trim())).collect()
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key, reason: reason.into() }
}

fn check_positive(key: &'static str, value: usize) -> Result<(), ConfigError> {
    if value == 0 {
        return Err(invalid(key, "must be at least 1"));
    }
    Ok(())
}

fn check_positive_step(key: &'static str, value: f64) -> Result<(), ConfigError> {
    if value <= 0.0 {
        return Err(invalid(key, format!("must be positive, got {value}")));
    }
    Ok(())
}

fn check_rate(key: &'static str, value: f64) -> Result<(), ConfigError> {
    if !(0.0..1.0).contains(&value) {
        return Err(invalid(key, format!("must lie in [0, 1), got {value}")));
    }
    Ok(())
}

/// Loads and resolves a run configuration from an optional file plus
/// overrides. Checks that every referenced dataset file exists.
pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig, ConfigError> {
    let map = match path {
        Some(p) => parse_file(p)?,
        None => BTreeMap::new(),
    };

    let seed = match ov.seed.or(get_u64(&map, "seed")?) {
        Some(s) => s,
        None => match std::env::var(SEED_ENV_VAR) {
            Ok(v) => v.parse().map_err(|_| ConfigError::TypeMismatch {
                key: SEED_ENV_VAR.to_string(),
                expected: "an unsigned integer",
                value: v,
            })?,
            Err(_) => 0,
        },
    };

    let config = RunConfig {
        seed,
        out_dir: ov.out_dir.clone().or(get_path(&map, "out_dir")).unwrap_or_else(|| "out".into()),
        dataset: ov.dataset.clone().or(get_path(&map, "dataset")),
        test_dataset: ov.test_dataset.clone().or(get_path(&map, "test_dataset")),
        blob_per_class: ov.blob_per_class.or(get_usize(&map, "blob_per_class")?).unwrap_or(500),
        blob_classes: ov.blob_classes.or(get_usize(&map, "blob_classes")?).unwrap_or(2),
        blob_dim: ov.blob_dim.or(get_usize(&map, "blob_dim")?).unwrap_or(2),
        blob_separation: ov.blob_separation.or(get_f64(&map, "blob_separation")?).unwrap_or(4.0),
        features: parse_choice(&map, "features", &ov.features, FeatureChoice::parse)?
            .unwrap_or(FeatureChoice::Identity),
        feature_dim: ov.feature_dim.or(get_usize(&map, "feature_dim")?),
        ngram_order: ov.ngram_order.or(get_usize(&map, "ngram_order")?).unwrap_or(2),
        noise: parse_choice(&map, "noise", &ov.noise, NoiseChoice::parse)?
            .unwrap_or(NoiseChoice::Uniform),
        noise_rate: ov.noise_rate.or(get_f64(&map, "noise_rate")?).unwrap_or(0.3),
        noise_matrix: match &ov.noise_matrix {
            Some(v) => Some(parse_matrix("noise_matrix", v)?),
            None => map.get("noise_matrix").map(|v| parse_matrix("noise_matrix", v)).transpose()?,
        },
        noise_max_rate: ov.noise_max_rate.or(get_f64(&map, "noise_max_rate")?).unwrap_or(0.4),
        noise_tau: ov.noise_tau.or(get_f64(&map, "noise_tau")?).unwrap_or(1.0),
        train_fraction: ov.train_fraction.or(get_f64(&map, "train_fraction")?).unwrap_or(0.8),
        outer_iterations: ov
            .outer_iterations
            .or(get_usize(&map, "outer_iterations")?)
            .unwrap_or(50),
        outer_step: ov.outer_step.or(get_f64(&map, "outer_step")?).unwrap_or(0.1),
        weight_optimizer: parse_choice(
            &map,
            "weight_optimizer",
            &ov.weight_optimizer,
            OptimizerChoice::parse,
        )?
        .unwrap_or(OptimizerChoice::Sgd),
        inner_epochs: ov.inner_epochs.or(get_usize(&map, "inner_epochs")?).unwrap_or(1),
        inner_step: ov.inner_step.or(get_f64(&map, "inner_step")?).unwrap_or(0.1),
        inner_batch_size: ov
            .inner_batch_size
            .or(get_usize(&map, "inner_batch_size")?)
            .unwrap_or(32),
        inner_optimizer: parse_choice(
            &map,
            "inner_optimizer",
            &ov.inner_optimizer,
            OptimizerChoice::parse,
        )?
        .unwrap_or(OptimizerChoice::Sgd),
        outer_loss: parse_choice(&map, "outer_loss", &ov.outer_loss, OuterLossChoice::parse)?
            .unwrap_or(OuterLossChoice::Rce),
        rce_a: ov.rce_a.or(get_f64(&map, "rce_a")?).unwrap_or(-4.0),
        warm_start: ov.warm_start.or(get_bool(&map, "warm_start")?).unwrap_or(true),
        arch: parse_choice(&map, "arch", &ov.arch, ArchChoice::parse)?.unwrap_or(ArchChoice::Linear),
        hidden: ov.hidden.or(get_usize(&map, "hidden")?).unwrap_or(16),
        budget: ov.budget.or(get_usize(&map, "budget")?),
        sampler: parse_choice(&map, "sampler", &ov.sampler, SamplerChoice::parse)?
            .unwrap_or(SamplerChoice::Bernoulli),
        filter_method: parse_choice(&map, "filter_method", &ov.filter_method, FilterChoice::parse)?
            .unwrap_or(FilterChoice::SmallLoss),
        train_epochs: ov.train_epochs.or(get_usize(&map, "train_epochs")?).unwrap_or(30),
        train_step: ov.train_step.or(get_f64(&map, "train_step")?).unwrap_or(0.1),
        train_batch_size: ov
            .train_batch_size
            .or(get_usize(&map, "train_batch_size")?)
            .unwrap_or(32),
        train_optimizer: parse_choice(
            &map,
            "train_optimizer",
            &ov.train_optimizer,
            OptimizerChoice::parse,
        )?
        .unwrap_or(OptimizerChoice::Sgd),
        surface_steps: ov.surface_steps.or(get_usize(&map, "surface_steps")?).unwrap_or(21),
        surface_range: ov.surface_range.or(get_f64(&map, "surface_range")?).unwrap_or(1.0),
        surface_losses: match &ov.surface_losses {
            Some(v) => parse_surface_losses("surface_losses", v)?,
            None => map
                .get("surface_losses")
                .map(|v| parse_surface_losses("surface_losses", v))
                .transpose()?
                .unwrap_or_else(|| vec![SurfaceLossChoice::Ce, SurfaceLossChoice::Rce]),
        },
    };

    validate(&config)?;
    Ok(config)
}

fn validate(config: &RunConfig) -> Result<(), ConfigError> {
    check_positive("blob_per_class", config.blob_per_class)?;
    check_positive("blob_classes", config.blob_classes)?;
    check_positive("blob_dim", config.blob_dim)?;
    if config.blob_separation < 0.0 {
        return Err(invalid("blob_separation", "must be non-negative"));
    }
    check_positive("ngram_order", config.ngram_order)?;
    if let Some(dim) = config.feature_dim {
        check_positive("feature_dim", dim)?;
    }
    if config.features == FeatureChoice::HashedNgram && config.feature_dim.is_none() {
        return Err(ConfigError::MissingKey {
            key: "feature_dim",
            reason: "hashed n-gram features need an explicit dimension",
        });
    }
    check_rate("noise_rate", config.noise_rate)?;
    check_rate("noise_max_rate", config.noise_max_rate)?;
    check_positive_step("noise_tau", config.noise_tau)?;
    if config.noise == NoiseChoice::ClassDependent && config.noise_matrix.is_none() {
        return Err(ConfigError::MissingKey {
            key: "noise_matrix",
            reason: "class-dependent noise needs a transition matrix",
        });
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(invalid("train_fraction", "must lie strictly between 0 and 1"));
    }
    check_positive("outer_iterations", config.outer_iterations)?;
    check_positive_step("outer_step", config.outer_step)?;
    check_positive("inner_epochs", config.inner_epochs)?;
    check_positive_step("inner_step", config.inner_step)?;
    check_positive("inner_batch_size", config.inner_batch_size)?;
    if config.rce_a >= 0.0 {
        return Err(invalid("rce_a", "must be a negative number"));
    }
    check_positive("hidden", config.hidden)?;
    if let Some(budget) = config.budget {
        check_positive("budget", budget)?;
    }
    check_positive("train_epochs", config.train_epochs)?;
    check_positive_step("train_step", config.train_step)?;
    check_positive("train_batch_size", config.train_batch_size)?;
    if config.surface_steps < 3 {
        return Err(invalid("surface_steps", "must be at least 3"));
    }
    if !(config.surface_range > 0.0 && config.surface_range <= 1.0) {
        return Err(invalid("surface_range", "must lie in (0, 1]"));
    }
    if config.surface_losses.is_empty() {
        return Err(invalid("surface_losses", "must name at least one loss"));
    }

    for (key, path) in
        [("dataset", &config.dataset), ("test_dataset", &config.test_dataset)]
    {
        if let Some(p) = path {
            if !p.exists() {
                return Err(ConfigError::MissingFile { key, path: p.clone() });
            }
        }
    }
    Ok(())
}

impl RunConfig {
    /// The canonical `key = value` rendering of the resolved config, one
    /// sorted line per key; unset optional keys render an empty value. The
    /// config hash is the SHA-256 of exactly this text.
    pub fn canonical(&self) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        };
        let matrix = |m: &Option<Vec<Vec<f64>>>| match m {
            None => String::new(),
            Some(rows) => rows
                .iter()
                .map(|row| {
                    row.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
                })
                .collect::<Vec<_>>()
                .join(";"),
        };
        let losses = self
            .surface_losses
            .iter()
            .map(|l| l.as_str())
            .collect::<Vec<_>>()
            .join(",");

        // Alphabetical by key; `KEYS` is the authoritative order.
        let lines: [(&str, String); 39] = [
            ("arch", self.arch.as_str().to_string()),
            ("blob_classes", self.blob_classes.to_string()),
            ("blob_dim", self.blob_dim.to_string()),
            ("blob_per_class", self.blob_per_class.to_string()),
            ("blob_separation", self.blob_separation.to_string()),
            ("budget", self.budget.map(|b| b.to_string()).unwrap_or_default()),
            ("dataset", path(&self.dataset)),
            ("feature_dim", self.feature_dim.map(|d| d.to_string()).unwrap_or_default()),
            ("features", self.features.as_str().to_string()),
            ("filter_method", self.filter_method.as_str().to_string()),
            ("hidden", self.hidden.to_string()),
            ("inner_batch_size", self.inner_batch_size.to_string()),
            ("inner_epochs", self.inner_epochs.to_string()),
            ("inner_optimizer", self.inner_optimizer.as_str().to_string()),
            ("inner_step", self.inner_step.to_string()),
            ("ngram_order", self.ngram_order.to_string()),
            ("noise", self.noise.as_str().to_string()),
            ("noise_matrix", matrix(&self.noise_matrix)),
            ("noise_max_rate", self.noise_max_rate.to_string()),
            ("noise_rate", self.noise_rate.to_string()),
            ("noise_tau", self.noise_tau.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("outer_iterations", self.outer_iterations.to_string()),
            ("outer_loss", self.outer_loss.as_str().to_string()),
            ("outer_step", self.outer_step.to_string()),
            ("rce_a", self.rce_a.to_string()),
            ("sampler", self.sampler.as_str().to_string()),
            ("seed", self.seed.to_string()),
            ("surface_losses", losses),
            ("surface_range", self.surface_range.to_string()),
            ("surface_steps", self.surface_steps.to_string()),
            ("test_dataset", path(&self.test_dataset)),
            ("train_batch_size", self.train_batch_size.to_string()),
            ("train_epochs", self.train_epochs.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("train_optimizer", self.train_optimizer.as_str().to_string()),
            ("train_step", self.train_step.to_string()),
            ("warm_start", self.warm_start.to_string()),
            ("weight_optimizer", self.weight_optimizer.as_str().to_string()),
        ];
        let mut out = String::new();
        for (key, value) in lines {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Hex SHA-256 of [`RunConfig::canonical`]; every artifact embeds it.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seed for one named stochastic component, derived from the global
    /// seed so that every stage gets an independent stream.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage, 0)
    }

    pub fn arch_spec(&self) -> Arch {
        match self.arch {
            ArchChoice::Linear => Arch::Linear,
            ArchChoice::OneHidden => Arch::OneHidden { hidden: self.hidden },
        }
    }

    /// The robust outer objective. `rce_a` was validated at load time.
    pub fn outer_loss_spec(&self) -> RobustLoss {
        match self.outer_loss {
            OuterLossChoice::Rce => {
                RobustLoss::rce(self.rce_a).expect("rce_a validated at config load")
            }
            OuterLossChoice::Mae => RobustLoss::mae(),
        }
    }

    pub fn bilevel_config(&self) -> BilevelConfig {
        BilevelConfig {
            outer_iterations: self.outer_iterations,
            outer_step: self.outer_step,
            weight_optimizer: optimizer(self.weight_optimizer),
            inner_epochs_per_outer: self.inner_epochs,
            inner_step: self.inner_step,
            inner_batch_size: self.inner_batch_size,
            inner_optimizer: optimizer(self.inner_optimizer),
            outer_loss: self.outer_loss_spec(),
            warm_start_inner: self.warm_start,
            arch: self.arch_spec(),
            seed: self.stage_seed("bilevel"),
        }
    }

    /// Training configuration for the final classifier and the filter
    /// scorers; the seed is derived per stage.
    pub fn train_config(&self, stage: &str) -> TrainConfig {
        TrainConfig {
            arch: self.arch_spec(),
            epochs: self.train_epochs,
            step_size: self.train_step,
            batch_size: self.train_batch_size,
            optimizer: optimizer(self.train_optimizer),
            seed: self.stage_seed(stage),
        }
    }

    /// The noise spec, or `None` when `noise = none`.
    pub fn noise_spec(&self) -> Option<NoiseSpec> {
        let model = match self.noise {
            NoiseChoice::None => return None,
            NoiseChoice::Uniform => NoiseModel::Uniform { rate: self.noise_rate },
            NoiseChoice::ClassDependent => NoiseModel::ClassDependent {
                matrix: self.noise_matrix.clone().expect("matrix validated at config load"),
            },
            NoiseChoice::InstanceDependent => NoiseModel::InstanceDependent {
                max_rate: self.noise_max_rate,
                tau: self.noise_tau,
            },
        };
        Some(NoiseSpec { model, seed: self.stage_seed("noise") })
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { train_fraction: self.train_fraction, seed: self.stage_seed("split") }
    }

    pub fn core_filter_method(&self) -> FilterMethod {
        match self.filter_method {
            FilterChoice::SmallLoss => FilterMethod::SmallLoss,
            FilterChoice::Confidence => FilterMethod::Confidence,
        }
    }

    /// Featurization to apply to a freshly loaded dataset. Identity needs
    /// the data's own dimension, so it is resolved against `data_dim`.
    pub fn feature_spec(&self, data_dim: Option<usize>) -> Option<FeatureSpec> {
        match self.features {
            FeatureChoice::Identity => {
                let dim = self.feature_dim.or(data_dim)?;
                Some(FeatureSpec::Identity { dim })
            }
            FeatureChoice::HashedNgram => Some(FeatureSpec::HashedNgram {
                dim: self.feature_dim.expect("feature_dim validated at config load"),
                order: self.ngram_order,
            }),
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec { steps: self.surface_steps, range: self.surface_range }
    }

    pub fn surface_kinds(&self) -> Vec<LossKind> {
        self.surface_losses
            .iter()
            .map(|l| match l {
                SurfaceLossChoice::Ce => LossKind::CrossEntropy,
                SurfaceLossChoice::Rce => {
                    LossKind::rce(self.rce_a).expect("rce_a validated at config load")
                }
                SurfaceLossChoice::Mae => LossKind::MeanAbsoluteError,
            })
            .collect()
    }

    /// The subset budget against an actual train-split size: the configured
    /// value, or half the split (at least 1) when unset.
    pub fn resolve_budget(&self, train_len: usize) -> usize {
        self.budget.unwrap_or_else(|| (train_len / 2).max(1))
    }
}

fn optimizer(choice: OptimizerChoice) -> Optimizer {
    match choice {
        OptimizerChoice::Sgd => Optimizer::Sgd,
        OptimizerChoice::Adam => Optimizer::adam(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_config(contents: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file
    }

    /// Overrides with an explicit seed, so tests never read the process
    /// environment (one dedicated test mutates it concurrently).
    fn seeded() -> Overrides {
        Overrides { seed: Some(0), ..Overrides::default() }
    }

    #[test]
    fn empty_config_resolves_to_documented_defaults() {
        let config = load(None, &seeded()).unwrap();
        assert_eq!(config.outer_iterations, 50);
        assert_eq!(config.outer_step, 0.1);
        assert_eq!(config.inner_epochs, 1);
        assert_eq!(config.inner_step, 0.1);
        assert_eq!(config.inner_batch_size, 32);
        assert!(config.warm_start);
        assert_eq!(config.outer_loss, OuterLossChoice::Rce);
        assert_eq!(config.rce_a, -4.0);
        assert_eq!(config.arch, ArchChoice::Linear);
        assert_eq!(config.noise, NoiseChoice::Uniform);
        assert_eq!(config.noise_rate, 0.3);
        assert_eq!(config.train_fraction, 0.8);
        assert_eq!(config.budget, None);
        assert_eq!(config.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn file_values_are_parsed_and_typed() {
        let file = write_config(
            "# comment line\n\
             outer_step = 0.5\n\
             outer_iterations = 7\n\
             warm_start = false\n\
             arch = one_hidden\n\
             hidden = 8\n\
             noise = class_dependent\n\
             noise_matrix = 0.7,0.3;0.2,0.8\n\
             surface_losses = ce,mae\n",
        );
        let config = load(Some(file.path()), &seeded()).unwrap();
        assert_eq!(config.outer_step, 0.5);
        assert_eq!(config.outer_iterations, 7);
        assert!(!config.warm_start);
        assert_eq!(config.arch_spec(), Arch::OneHidden { hidden: 8 });
        assert_eq!(
            config.noise_matrix,
            Some(vec![vec![0.7, 0.3], vec![0.2, 0.8]])
        );
        assert_eq!(
            config.surface_losses,
            vec![SurfaceLossChoice::Ce, SurfaceLossChoice::Mae]
        );
    }

    #[test]
    fn flag_overrides_beat_file_values() {
        let file = write_config("outer_step = 0.5\nseed = 3\n");
        let ov = Overrides { outer_step: Some(0.25), ..Overrides::default() };
        let config = load(Some(file.path()), &ov).unwrap();
        assert_eq!(config.outer_step, 0.25, "the flag must win over the file");
        assert_eq!(config.seed, 3, "untouched keys still come from the file");
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let file = write_config("outersteps = 0.2\n");
        let err = load(Some(file.path()), &seeded()).unwrap_err();
        assert!(
            matches!(&err, ConfigError::UnknownKey { key } if key == "outersteps"),
            "expected an unknown-key error naming `outersteps`, got {err}"
        );
    }

    #[test]
    fn duplicate_and_malformed_lines_are_rejected() {
        let file = write_config("seed = 1\nseed = 2\n");
        assert!(matches!(
            load(Some(file.path()), &Overrides::default()),
            Err(ConfigError::DuplicateKey { key }) if key == "seed"
        ));

        let file = write_config("just some words\n");
        assert!(matches!(
            load(Some(file.path()), &seeded()),
            Err(ConfigError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn type_mismatches_name_the_key() {
        let file = write_config("outer_step = fast\n");
        let err = load(Some(file.path()), &seeded()).unwrap_err();
        assert!(matches!(&err, ConfigError::TypeMismatch { key, .. } if key == "outer_step"));

        let file = write_config("arch = resnet\n");
        let err = load(Some(file.path()), &seeded()).unwrap_err();
        assert!(matches!(&err, ConfigError::TypeMismatch { key, .. } if key == "arch"));
        assert!(err.to_string().contains("linear"), "the error should list the choices");

        let file = write_config("outer_step = inf\n");
        assert!(matches!(
            load(Some(file.path()), &seeded()),
            Err(ConfigError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn conditional_keys_are_required() {
        let file = write_config("features = hashed_ngram\n");
        let err = load(Some(file.path()), &seeded()).unwrap_err();
        assert!(matches!(err, ConfigError::MissingKey { key: "feature_dim", .. }));

        let file = write_config("noise = class_dependent\n");
        let err = load(Some(file.path()), &seeded()).unwrap_err();
        assert!(matches!(err, ConfigError::MissingKey { key: "noise_matrix", .. }));
    }

    #[test]
    fn out_of_range_values_name_the_key() {
        let file = write_config("noise_rate = 1.5\n");
        let err = load(Some(file.path()), &seeded()).unwrap_err();
        assert!(matches!(err, ConfigError::InvalidValue { key: "noise_rate", .. }));

        let file = write_config("rce_a = 2\n");
        let err = load(Some(file.path()), &seeded()).unwrap_err();
        assert!(matches!(err, ConfigError::InvalidValue { key: "rce_a", .. }));

        let file = write_config("train_fraction = 1\n");
        let err = load(Some(file.path()), &seeded()).unwrap_err();
        assert!(matches!(err, ConfigError::InvalidValue { key: "train_fraction", .. }));
    }

    #[test]
    fn referenced_files_must_exist_at_load_time() {
        let ov = Overrides {
            dataset: Some(PathBuf::from("definitely/not/here.jsonl")),
            ..seeded()
        };
        let err = load(None, &ov).unwrap_err();
        assert!(matches!(err, ConfigError::MissingFile { key: "dataset", .. }));
    }

    #[test]
    fn canonical_rendering_covers_every_key_once() {
        let config = load(None, &seeded()).unwrap();
        let canonical = config.canonical();
        for key in KEYS {
            let needle = format!("{key} = ");
            assert_eq!(
                canonical.matches(&needle).count(),
                1,
                "key `{key}` must appear exactly once"
            );
        }
        assert!(canonical.contains("outer_iterations = 50"));
        assert!(canonical.contains("budget = \n"), "unset options render empty");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = load(None, &seeded()).unwrap();
        let b = load(None, &seeded()).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64, "hex SHA-256");

        let ov = Overrides { outer_step: Some(0.25), ..seeded() };
        let c = load(None, &ov).unwrap();
        assert_ne!(a.hash(), c.hash(), "changing a value must change the hash");
    }

    #[test]
    fn environment_seed_is_a_fallback_only() {
        // One test covers all env interactions to avoid races between
        // tests mutating the same process environment.
        std::env::set_var(SEED_ENV_VAR, "77");
        let config = load(None, &Overrides::default()).unwrap();
        assert_eq!(config.seed, 77, "env var fills in a missing seed");

        let ov = Overrides { seed: Some(5), ..Overrides::default() };
        let config = load(None, &ov).unwrap();
        assert_eq!(config.seed, 5, "an explicit flag beats the env var");

        let file = write_config("seed = 6\n");
        let config = load(Some(file.path()), &Overrides::default()).unwrap();
        assert_eq!(config.seed, 6, "a file value beats the env var");

        std::env::set_var(SEED_ENV_VAR, "not-a-number");
        let err = load(None, &Overrides::default()).unwrap_err();
        assert!(matches!(&err, ConfigError::TypeMismatch { key, .. } if key == SEED_ENV_VAR));
        std::env::remove_var(SEED_ENV_VAR);
    }

    #[test]
    fn stage_seeds_are_distinct_per_stage() {
        let config = load(None, &seeded()).unwrap();
        let tags = ["blobs", "test-blobs", "noise", "split", "bilevel", "subset", "train"];
        let seeds: Vec<u64> = tags.iter().map(|t| config.stage_seed(t)).collect();
        for i in 0..seeds.len() {
            for j in (i + 1)..seeds.len() {
                assert_ne!(seeds[i], seeds[j], "stages {} and {} share a seed", tags[i], tags[j]);
            }
        }
    }

    #[test]
    fn budget_defaults_to_half_the_train_split() {
        let config = load(None, &seeded()).unwrap();
        assert_eq!(config.resolve_budget(100), 50);
        assert_eq!(config.resolve_budget(1), 1, "never resolves to zero");
        let ov = Overrides { budget: Some(7), ..seeded() };
        let config = load(None, &ov).unwrap();
        assert_eq!(config.resolve_budget(100), 7);
    }
}
