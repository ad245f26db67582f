use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::roster::{build_exp_series, ExpSeries, RoleCounts};
use super::HarnessError;
use crate::baselines::AggregatorKind;
use crate::clients::UnreliableProfile;
use crate::data::{DataError, DatasetName, LabelMapping};
use crate::defense::DefenseConfig;
use crate::model::TrainerConfig;

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub n_clients: usize,
    pub rounds: usize,
    pub aggregator: AggregatorKind,
    #[serde(default = "default_eta")]
    pub eta_server: f64,
    /// Where reports go; the CLI can override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub roster: RosterConfig,
    #[serde(default)]
    pub unreliable: UnreliableProfile,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_eta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Keep this many training samples (drawn without replacement).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subsample: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subsample: Option<usize>,
    #[serde(default = "default_beta")]
    pub dirichlet_beta: f64,
}

fn default_beta() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        n_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
    },
    /// IDX image/label files, optionally gzipped. Without test files the
    /// last `holdout` training samples (after shuffling) become the test set.
    Idx {
        name: DatasetName,
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        holdout: usize,
    },
}

/// Either a series generator or explicit per-role counts; the rest of the
/// clients are normal. Roles go to client ids in the order unreliable,
/// additive noise, sign flip, label flip, multi-label flip, normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosterConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series: Option<ExpSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub unreliable: usize,
    pub additive_noise: usize,
    pub sign_flip: usize,
    pub label_flip: usize,
    pub multi_label_flip: usize,
    pub noise_sigma: f64,
    pub label_flip_mapping: LabelMapping,
    pub multi_label_flip_mapping: LabelMapping,
}

impl Default for RosterConfig {
    fn default() -> Self {
        Self {
            series: None,
            index: None,
            unreliable: 0,
            additive_noise: 0,
            sign_flip: 0,
            label_flip: 0,
            multi_label_flip: 0,
            noise_sigma: 0.01,
            label_flip_mapping: LabelMapping::new([(1, 7)]),
            multi_label_flip_mapping: LabelMapping::new([(1, 7), (2, 7), (3, 7)]),
        }
    }
}

impl RosterConfig {
    pub fn counts(&self, n_clients: usize) -> Result<RoleCounts, HarnessError> {
        let explicit = RoleCounts {
            unreliable: self.unreliable,
            additive_noise: self.additive_noise,
            sign_flip: self.sign_flip,
            label_flip: self.label_flip,
            multi_label_flip: self.multi_label_flip,
            normal: 0,
        };
        match (self.series, self.index) {
            (Some(series), Some(i)) => {
                if explicit.attackers_and_unreliable() != 0 {
                    return Err(HarnessError::Config(
                        "roster: give either series/index or explicit counts, not both".into(),
                    ));
                }
                build_exp_series(series, i, n_clients)
            }
            (None, None) => explicit.fill_normal(n_clients),
            _ => Err(HarnessError::Config(
                "roster: series and index must be given together".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    /// Dataset generation, subsampling and partitioning.
    pub data: u64,
    /// Initial global model.
    pub init: u64,
    /// Client-side randomness (local shuffles, noise, blur) and detector ties.
    pub run: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            data: 1,
            init: 2,
            run: 3,
        }
    }
}

impl SeedConfig {
    /// All three seeds derived from one number.
    pub fn from_base(base: u64) -> Self {
        Self {
            data: crate::seed::derive(base, &[1]),
            init: crate::seed::derive(base, &[2]),
            run: crate::seed::derive(base, &[3]),
        }
    }
}

/// Named starting points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 20 clients, 20 rounds, 12k training samples from the IDX files in `data_dir`.
    Desk,
    /// Desk scale on generated blobs; needs no files.
    DeskSynthetic,
    /// 40 clients, 40 rounds, full training set.
    Full,
}

impl std::str::FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "desk-synthetic" => Ok(Preset::DeskSynthetic),
            "full" => Ok(Preset::Full),
            _ => Err(HarnessError::Config(format!("unknown preset {s:?}"))),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, data_dir: &Path) -> Self {
        let idx = |holdout| DataSource::Idx {
            name: DatasetName::Mnist,
            train_images: data_dir.join("images-idx3-ubyte.gz"),
            train_labels: data_dir.join("labels-idx1-ubyte.gz"),
            test_images: None,
            test_labels: None,
            holdout,
        };
        let base = |source, n_clients, rounds, train_subsample| ExperimentConfig {
            name: "experiment".into(),
            n_clients,
            rounds,
            aggregator: AggregatorKind::MudHog,
            eta_server: 1.0,
            out_dir: None,
            dataset: DatasetConfig {
                source,
                train_subsample,
                test_subsample: None,
                dirichlet_beta: 0.9,
            },
            roster: RosterConfig::default(),
            unreliable: UnreliableProfile::default(),
            model: ModelConfig { hidden: vec![32] },
            trainer: TrainerConfig::mnist(),
            defense: DefenseConfig::default(),
            seeds: SeedConfig::default(),
        };
        match preset {
            Preset::Desk => base(idx(2_000), 20, 20, Some(12_000)),
            Preset::DeskSynthetic => {
                let mut cfg = base(
                    DataSource::Synthetic {
                        n_classes: 10,
                        dim: 64,
                        train_per_class: 120,
                        test_per_class: 50,
                        spread: 0.3,
                    },
                    20,
                    20,
                    None,
                );
                cfg.trainer.learning_rate = 0.05;
                cfg
            }
            Preset::Full => {
                let mut cfg = base(
                    DataSource::Idx {
                        name: DatasetName::Mnist,
                        train_images: data_dir.join("train-images-idx3-ubyte"),
                        train_labels: data_dir.join("train-labels-idx1-ubyte"),
                        test_images: Some(data_dir.join("t10k-images-idx3-ubyte")),
                        test_labels: Some(data_dir.join("t10k-labels-idx1-ubyte")),
                        holdout: 0,
                    },
                    40,
                    40,
                    None,
                );
                cfg.model.hidden = vec![200, 100];
                cfg
            }
        }
    }

    /// Scale fields a preset controls, leaving roster, dataset source and
    /// hyper-parameters alone.
    pub fn apply_scale(&mut self, preset: Preset) {
        match preset {
            Preset::Desk | Preset::DeskSynthetic => {
                self.n_clients = 20;
                self.rounds = 20;
                if matches!(self.dataset.source, DataSource::Idx { .. }) {
                    self.dataset.train_subsample = Some(12_000);
                }
            }
            Preset::Full => {
                self.n_clients = 40;
                self.rounds = 40;
                self.dataset.train_subsample = None;
            }
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Reads a config file; relative dataset paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| {
            HarnessError::Data(DataError::Io {
                path: path.display().to_string(),
                source,
            })
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &mut self.dataset.source
        {
            for p in [train_images, train_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            for p in [test_images, test_labels].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn role_counts(&self) -> Result<RoleCounts, HarnessError> {
        self.roster.counts(self.n_clients)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_clients == 0 {
            return bad("n_clients must be positive".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if !(self.eta_server >= 0.0 && self.eta_server.is_finite()) {
            return bad("eta_server must be finite and non-negative".into());
        }
        if !(self.dataset.dirichlet_beta > 0.0 && self.dataset.dirichlet_beta.is_finite()) {
            return bad("dirichlet_beta must be positive".into());
        }
        if let DataSource::Idx {
            test_images,
            test_labels,
            holdout,
            ..
        } = &self.dataset.source
        {
            if test_images.is_some() != test_labels.is_some() {
                return bad("test_images and test_labels go together".into());
            }
            if test_images.is_none() && *holdout == 0 {
                return bad("without test files a positive holdout is required".into());
            }
        }
        if self.model.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        let counts = self.role_counts()?;
        if counts.malicious() >= counts.normal + counts.unreliable {
            return bad(format!(
                "{} malicious clients must be fewer than the {} others",
                counts.malicious(),
                counts.normal + counts.unreliable
            ));
        }
        if !(self.roster.noise_sigma >= 0.0 && self.roster.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        let p = &self.unreliable;
        if !(0.0..=1.0).contains(&p.blur_fraction)
            || !(p.train_fraction > 0.0 && p.train_fraction <= 1.0)
        {
            return bad(
                "unreliable fractions must lie in [0, 1] (train_fraction in (0, 1])".into(),
            );
        }
        if p.blur_kernel.is_multiple_of(2) || !(p.blur_sigma > 0.0) {
            return bad("blur_kernel must be odd and blur_sigma positive".into());
        }
        self.trainer
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.defense
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.aggregator
            .validate(self.n_clients)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ExperimentConfig {
        ExperimentConfig::preset(Preset::DeskSynthetic, Path::new("data"))
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut cfg = ExperimentConfig::preset(Preset::Desk, Path::new("/tmp/mnist"));
        cfg.roster.sign_flip = 2;
        cfg.roster.noise_sigma = 0.0123;
        cfg.aggregator = AggregatorKind::MultiKrum {
            f: Some(3),
            m_select: None,
        };
        cfg.defense.weight_by_all_clients = true;
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let synth = desk();
        assert_eq!(
            ExperimentConfig::from_toml(&synth.to_toml()).unwrap(),
            synth
        );
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let text = r#"
            n_clients = 10
            rounds = 5
            aggregator = "fedavg"

            [dataset.source]
            kind = "synthetic"
            n_classes = 3
            dim = 16
            train_per_class = 20
            test_per_class = 5
            spread = 0.2

            [roster]
            series = "exp1"
            index = 1

            [model]
            hidden = [8]

            [trainer]
            learning_rate = 0.01
            momentum = 0.5
            weight_decay = 0.0
            local_epochs = 1
            batch_size = 8
        "#;
        let err = ExperimentConfig::from_toml(text).unwrap_err();
        // exp1 needs more than 10 clients
        assert!(err.to_string().contains("clients"), "{err}");
        let cfg =
            ExperimentConfig::from_toml(&text.replace("n_clients = 10", "n_clients = 40")).unwrap();
        assert_eq!(cfg.defense, DefenseConfig::default());
        assert_eq!(cfg.eta_server, 1.0);
        assert_eq!(cfg.dataset.dirichlet_beta, 0.9);
        assert_eq!(cfg.role_counts().unwrap().normal, 34);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = desk();
        cfg.roster.sign_flip = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = desk();
        cfg.roster.series = Some(ExpSeries::Exp1);
        assert!(cfg.validate().is_err());
        let mut cfg = desk();
        cfg.defense.alpha = 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = desk();
        cfg.rounds = 0;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml("n_clients = 3\nbogus = 1").is_err());
    }

    #[test]
    fn malicious_must_be_a_minority() {
        let mut cfg = desk();
        cfg.roster.sign_flip = 9;
        cfg.roster.unreliable = 1;
        assert!(cfg.validate().is_ok());
        cfg.roster.unreliable = 0;
        cfg.roster.sign_flip = 10;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut cfg = ExperimentConfig::preset(Preset::Desk, Path::new("mnist"));
        cfg.resolve_paths(Path::new("/etc/runs"));
        match cfg.dataset.source {
            DataSource::Idx { train_images, .. } => {
                assert_eq!(
                    train_images,
                    Path::new("/etc/runs/mnist/images-idx3-ubyte.gz")
                )
            }
            _ => unreachable!(),
        }
    }
}
