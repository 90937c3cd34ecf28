//! TOML run configuration: one section per module, every field defaulted,
//! unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use demixgan::corruption::CorruptionSpec;
use demixgan::data::synthetic::SyntheticSource;
use demixgan::eval::{ClassifierDescriptor, ClassifierTraining};
use demixgan::ica::{IcaOptions, MixingRule};
use demixgan::inversion::InversionOptions;
use demixgan::nets::ArchitectureDescriptor;
use demixgan::rng;
use demixgan::train::{AdamConfig, TrainConfig, ZLink};
use serde::{Deserialize, Serialize};
use toml::de::{DeTable, DeValue};

use crate::CliError;

/// One image component of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Component {
    HorizontalLines { count: usize },
    VerticalLines { count: usize },
    Sines { count: usize },
    /// MNIST digits restricted to `classes` (all digits when empty).
    Mnist {
        #[serde(default)]
        classes: Vec<u8>,
    },
}

impl Component {
    pub fn synthetic(&self) -> Option<SyntheticSource> {
        match *self {
            Self::HorizontalLines { count } => Some(SyntheticSource::HorizontalLines { count }),
            Self::VerticalLines { count } => Some(SyntheticSource::VerticalLines { count }),
            Self::Sines { count } => Some(SyntheticSource::Sines { count }),
            Self::Mnist { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Clean signal (denoising) or first mixture component (demixing).
    pub a: Component,
    /// Second mixture component.
    pub b: Component,
    pub shape: (usize, usize),
    /// Training observations (mixtures or corrupted images).
    pub train_count: usize,
    /// Held-out images for inversion and baselines.
    pub test_count: usize,
    /// Directory holding the four MNIST IDX files. Empty means
    /// `$MNIST_DIR`, then `data/mnist`.
    pub mnist_dir: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            a: Component::HorizontalLines { count: 3 },
            b: Component::VerticalLines { count: 3 },
            shape: (16, 16),
            train_count: 16384,
            test_count: 16,
            mnist_dir: String::new(),
        }
    }
}

impl DataConfig {
    pub fn mnist_dir(&self) -> PathBuf {
        if !self.mnist_dir.is_empty() {
            return PathBuf::from(&self.mnist_dir);
        }
        std::env::var_os("MNIST_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }
}

/// Compressed-sensing sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsConfig {
    pub measurements: Vec<usize>,
    pub lambda: f64,
    pub lasso_iterations: usize,
    /// Signals for `cs-lasso`: `"sparse"` draws `sparsity`-sparse vectors,
    /// `"data"` uses held-out images of component `a`.
    pub signal: SignalKind,
    pub sparsity: usize,
    pub signal_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Sparse,
    Data,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            measurements: vec![10, 50, 100, 300, 750],
            lambda: 0.1,
            lasso_iterations: 2000,
            signal: SignalKind::Sparse,
            sparsity: 10,
            signal_len: 784,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcaSection {
    pub options: IcaOptions,
    pub mixing: MixingRule,
}

impl Default for IcaSection {
    fn default() -> Self {
        Self {
            options: IcaOptions::default(),
            mixing: MixingRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub descriptor: ClassifierDescriptor,
    pub training: ClassifierTraining,
    /// Cap on training images (0 = all).
    pub train_limit: usize,
    /// Cap on test images (0 = all).
    pub test_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub support: usize,
    pub trials: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { support: 16, trials: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub z_links: Vec<ZLink>,
    /// Degrees by which component `b` is rotated, one run each.
    pub rotations: Vec<u32>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            z_links: vec![ZLink::Independent, ZLink::Shared, ZLink::Scaled { alpha: 0.1 }],
            rotations: demixgan::corruption::ROTATION_ANGLES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// IDX image file of estimates for `eval-metrics`.
    pub estimates: String,
    /// IDX image file of ground truth for `eval-metrics`.
    pub truth: String,
    /// Optional classifier directory and IDX label file for accuracy.
    pub classifier: String,
    pub labels: String,
}

/// Everything a subcommand may read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every module seed below is derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub inversion: InversionOptions,
    pub cs: CsConfig,
    pub ica: IcaSection,
    pub classifier: ClassifierSection,
    pub theory: TheoryConfig,
    pub ablation: AblationConfig,
    pub eval: EvalConfig,
}

/// Training defaults for the small synthetic task.
pub fn synthetic_train_config() -> TrainConfig {
    let mut arch = ArchitectureDescriptor::custom((16, 16), 8);
    arch.gen_hidden = 64;
    arch.gen_channels = 8;
    TrainConfig {
        arch,
        epochs: 20,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        corruption: CorruptionSpec::lines_with(1, 0),
        checkpoint_epochs: vec![20],
        grid_epochs: vec![1, 2, 5, 20],
        ..TrainConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            train: synthetic_train_config(),
            inversion: InversionOptions {
                iterations: 1000,
                ..InversionOptions::default()
            },
            cs: CsConfig::default(),
            ica: IcaSection::default(),
            classifier: ClassifierSection::default(),
            theory: TheoryConfig::default(),
            ablation: AblationConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Seeds fanned out from the root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub dataset: u64,
    pub training: u64,
    pub inversion: u64,
    pub ica: u64,
    pub sensing: u64,
    pub classifier: u64,
}

impl Seeds {
    pub fn from_root(root: u64) -> Self {
        Self {
            root,
            dataset: rng::derive_seed(root, "dataset"),
            training: rng::derive_seed(root, "training"),
            inversion: rng::derive_seed(root, "inversion"),
            ica: rng::derive_seed(root, "ica"),
            sensing: rng::derive_seed(root, "sensing"),
            classifier: rng::derive_seed(root, "classifier"),
        }
    }
}

impl RunConfig {
    /// Derives the per-module seeds from `seed` and writes them into the
    /// sections that carry one.
    pub fn resolve_seeds(&mut self) -> Seeds {
        let seeds = Seeds::from_root(self.seed);
        self.train.seed = seeds.training;
        self.inversion.seed = seeds.inversion;
        self.ica.options.seed = seeds.ica;
        seeds
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Serialize(e.to_string()))
    }
}

/// Parses TOML text into a config, naming the offending key on failure.
///
/// Keys missing from the file keep their [`RunConfig::default`] values, also
/// inside a partially given section. A table that names its `kind` replaces
/// the default table instead of being merged into it.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let parse_err = |e: toml::de::Error| CliError::Parse(e.message().to_string());
    let defaults = RunConfig::default().to_toml()?;
    let mut merged = DeTable::parse(&defaults).map_err(parse_err)?;
    let user = DeTable::parse(text).map_err(parse_err)?;
    merge(merged.get_mut(), user.into_inner());
    serde_path_to_error::deserialize(toml::Deserializer::from(merged)).map_err(|err| {
        let path = err.path().to_string();
        let message = err.inner().message().to_string();
        if let Some(field) = message.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
            let key = if path == "." || path.is_empty() {
                field.to_string()
            } else if path == field || path.ends_with(&format!(".{field}")) {
                path
            } else {
                format!("{path}.{field}")
            };
            CliError::UnknownKey(key)
        } else {
            CliError::Type { key: path, message }
        }
    })
}

fn merge<'i>(base: &mut DeTable<'i>, user: DeTable<'i>) {
    for (key, value) in user {
        let replaces = match value.get_ref() {
            DeValue::Table(u) => u.keys().any(|k| k.get_ref() == "kind"),
            _ => true,
        };
        match (base.get_mut(&key).map(|b| b.get_mut()), value.into_inner()) {
            (Some(DeValue::Table(b)), DeValue::Table(u)) if !replaces => merge(b, u),
            (_, v) => {
                let span = key.span();
                base.insert(key, toml::Spanned::new(span, v));
            }
        }
    }
}

/// Reads and parses a config file; `None` gives the defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Io(p.display().to_string(), e))?;
            parse_config(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn wrong_type_names_the_key() {
        match parse_config("[train]\nepochs = \"sixty\"\n") {
            Err(CliError::Type { key, .. }) => assert_eq!(key, "train.epochs"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        match parse_config("[train]\nepoch = 3\n") {
            Err(CliError::UnknownKey(key)) => assert_eq!(key, "train.epoch"),
            other => panic!("{other:?}"),
        }
        match parse_config("sede = 3\n") {
            Err(CliError::UnknownKey(key)) => assert_eq!(key, "sede"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_sections_keep_the_run_defaults() {
        let c = parse_config("[train]\nepochs = 3\n[train.adam]\nbeta1 = 0.9\n").unwrap();
        let d = RunConfig::default();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.arch, d.train.arch);
        assert_eq!(c.train.adam.lr, d.train.adam.lr);
        assert_eq!(c.train.adam.beta1, 0.9);
        // A component naming its kind starts from that kind's own fields.
        let c = parse_config("[data.a]\nkind = \"mnist\"\n").unwrap();
        assert_eq!(c.data.a, Component::Mnist { classes: vec![] });
        assert_eq!(c.data.b, d.data.b);
    }

    #[test]
    fn syntax_errors_are_parse_errors() {
        assert!(matches!(parse_config("[train\n"), Err(CliError::Parse(_))));
    }

    #[test]
    fn serialized_config_reloads_equal() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.train.z_link = ZLink::Scaled { alpha: 0.1 };
        c.data.a = Component::Mnist { classes: vec![2, 8] };
        c.resolve_seeds();
        let text = c.to_toml().unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
    }
}
