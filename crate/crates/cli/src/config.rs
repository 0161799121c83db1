//! Run configuration file (TOML).
//!
//! ```toml
//! [generator]
//! seed = 7
//! samples = 12
//! depth = 8
//! height = 8
//! width = 8
//! noise = 0.1
//! [generator.injections]
//! label_permutation = 2
//!
//! [corpus]
//! dir = "corpus"        # relative paths resolve against the config file
//!
//! [preprocess]
//! foreground_threshold = 0.0
//!
//! [model]
//! hidden = 16
//!
//! [train]
//! mode = "dynamic"
//! delta = 0.2
//! epochs = 10
//! batch_size = 4
//! seed = 1
//!
//! [loss]
//! variant = "hybrid_focal"
//!
//! [optimizer]
//! learning_rate = 0.01
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dynbatch_core::data::{GeneratorSpec, Injections};
use dynbatch_core::losses::LossConfig;
use dynbatch_core::model::AdamConfig;
use dynbatch_core::scheduler::{TrainConfig, TrainMode};
use serde::Deserialize;

const MAX_HIDDEN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub seed: u64,
    pub samples: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub modalities: Option<Vec<String>>,
    pub noise: Option<f64>,
    #[serde(default)]
    pub injections: Injections,
}

impl GeneratorSection {
    pub fn spec(&self) -> GeneratorSpec {
        let mut spec = GeneratorSpec::new(self.samples, self.depth, self.height, self.width);
        if let Some(m) = &self.modalities {
            spec.modalities = m.clone();
        }
        if let Some(n) = self.noise {
            spec.noise = n;
        }
        spec.injections = self.injections.clone();
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    16
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    /// Voxels strictly above this raw intensity count as brain for z-scoring.
    #[serde(default)]
    pub foreground_threshold: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            foreground_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

fn default_delta() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub generator: Option<GeneratorSection>,
    pub corpus: Option<CorpusSection>,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub model: ModelSection,
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Directory of the file it was loaded from; relative paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg =
            Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if let Some(g) = &self.generator {
            g.spec().validate()?;
        }
        if !self.preprocess.foreground_threshold.is_finite() {
            bail!("preprocess.foreground_threshold must be finite");
        }
        if self.model.hidden == 0 || self.model.hidden > MAX_HIDDEN {
            bail!(
                "model.hidden must lie in [1, {MAX_HIDDEN}], got {}",
                self.model.hidden
            );
        }
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.train.is_some() {
            self.train_config()?.validate()?;
        }
        Ok(())
    }

    pub fn generator(&self) -> Result<&GeneratorSection> {
        self.generator
            .as_ref()
            .context("config has no [generator] section")
    }

    pub fn corpus_dir(&self) -> Result<PathBuf> {
        let c = self
            .corpus
            .as_ref()
            .context("config has no [corpus] section")?;
        Ok(self.base_dir.join(&c.dir))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = self.train.context("config has no [train] section")?;
        Ok(TrainConfig {
            delta: t.delta,
            epochs: t.epochs,
            batch_size: t.batch_size,
            loss: self.loss,
            optimizer: self.optimizer,
            seed: t.seed,
            mode: t.mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dynbatch_core::losses::LossVariant;

    const FULL: &str = r#"
[generator]
seed = 3
samples = 4
depth = 4
height = 8
width = 8
noise = 0.1
[generator.injections]
label_permutation = 1

[corpus]
dir = "c"

[train]
mode = "dynamic"
delta = 0.5
epochs = 4
batch_size = 2
seed = 9

[loss]
variant = "mean_fp_focal"
"#;

    #[test]
    fn parses_full_file() {
        let cfg = RunConfigFile::parse(FULL).unwrap();
        let g = cfg.generator().unwrap();
        assert_eq!(g.seed, 3);
        let spec = g.spec();
        assert_eq!(spec.injections.label_permutation, 1);
        assert_eq!(spec.modalities.len(), 3);
        assert_eq!(spec.noise, 0.1);
        let t = cfg.train_config().unwrap();
        assert_eq!(t.mode, TrainMode::Dynamic);
        assert_eq!(t.delta, 0.5);
        assert_eq!(t.loss.variant, LossVariant::MeanFpFocal);
        assert_eq!(t.loss.c_weight, 10.0);
        assert_eq!(cfg.model.hidden, 16);
        assert_eq!(cfg.preprocess.foreground_threshold, 0.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = FULL.replace("seed = 9", "seed = 9\nsede = 1");
        assert!(RunConfigFile::parse(&bad).is_err());
        let bad = format!("{FULL}\n[extra]\nx = 1\n");
        assert!(RunConfigFile::parse(&bad).is_err());
        let bad = FULL.replace("noise = 0.1", "noise = 0.1\ncolor = 2");
        assert!(RunConfigFile::parse(&bad).is_err());
    }

    #[test]
    fn missing_required_key_rejected() {
        let bad = FULL.replace("epochs = 4\n", "");
        assert!(RunConfigFile::parse(&bad).is_err());
    }

    #[test]
    fn ranges_checked_at_load() {
        for (from, to) in [
            ("delta = 0.5", "delta = 0.0"),
            ("delta = 0.5", "delta = 1.5"),
            ("epochs = 4", "epochs = 0"),
            ("batch_size = 2", "batch_size = 0"),
            ("height = 8", "height = 3"),
            ("label_permutation = 1", "label_permutation = 9"),
        ] {
            let bad = FULL.replace(from, to);
            assert!(RunConfigFile::parse(&bad).is_err(), "{to} accepted");
        }
        let bad = format!("{FULL}\n[optimizer]\nlearning_rate = -1.0\n");
        assert!(RunConfigFile::parse(&bad).is_err());
        let bad = format!("{FULL}\n[model]\nhidden = 0\n");
        assert!(RunConfigFile::parse(&bad).is_err());
    }

    #[test]
    fn sections_are_optional_until_used() {
        let cfg = RunConfigFile::parse("[corpus]\ndir = \"x\"\n").unwrap();
        assert!(cfg.generator().is_err());
        assert!(cfg.train_config().is_err());
        assert_eq!(cfg.corpus_dir().unwrap(), PathBuf::from("x"));
    }
}
