//! Experiment configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetConfig, DEFAULT_SNR_SET_DB};
use crate::error::{Error, Result};
use crate::geometry::SceneGeometry;
use crate::irs::TrainingConfig;
use crate::ml_estimator::SearchGrid;
use crate::phase_design::ManifoldOptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MlSnrMax,
    MlCrlbMin,
    LearnedFc,
    /// FC regressor trained with the IRS phases held at their initialization.
    LearnedFcFrozenIrs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::MlSnrMax => "ml-snr-max",
            Method::MlCrlbMin => "ml-crlb-min",
            Method::LearnedFc => "learned-fc",
            Method::LearnedFcFrozenIrs => "learned-fc-frozen-irs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Method::MlSnrMax,
            Method::MlCrlbMin,
            Method::LearnedFc,
            Method::LearnedFcFrozenIrs,
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::LearnedFc | Method::LearnedFcFrozenIrs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// Monte Carlo trials per evaluation point.
    pub trials: usize,
    pub snr_set_db: Vec<f64>,
    pub snapshot_sweep: Vec<usize>,
    pub snapshot_sweep_snr_db: f64,
    pub scatter_snr_db: f64,
    /// Evaluate the ML methods on noiseless signals.
    pub noiseless: bool,
    pub phase_design: ManifoldOptimizerConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::MlSnrMax, Method::MlCrlbMin, Method::LearnedFc],
            trials: 1_000,
            snr_set_db: DEFAULT_SNR_SET_DB.to_vec(),
            snapshot_sweep: (1..=10).collect(),
            snapshot_sweep_snr_db: 0.0,
            scatter_snr_db: 20.0,
            noiseless: false,
            phase_design: ManifoldOptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; overrides the seeds of the sections below.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub geometry: SceneGeometry,
    pub dataset: DatasetConfig,
    pub training: TrainingConfig,
    pub grid: SearchGrid,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: None,
            geometry: SceneGeometry::preset(),
            dataset: DatasetConfig::default(),
            training: TrainingConfig::default(),
            grid: SearchGrid::default(),
            eval: EvalConfig::default(),
        }
    }
}

pub const OUTPUT_DIR_ENV: &str = "IRSDOA_OUTPUT_DIR";

impl ExperimentConfig {
    /// Laptop-scale preset: 100 trials, 5,000 training examples, 20 epochs.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.apply_desk();
        cfg
    }

    pub fn apply_desk(&mut self) {
        self.eval.trials = 100;
        self.dataset.n_train = 5_000;
        self.dataset.n_test = 100;
        self.training.epochs = 20;
        self.training.learning_rate = DESK_LEARNING_RATE;
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.dataset.validate()?;
        self.training.validate()?;
        self.grid.validate()?;
        self.eval.phase_design.validate()?;
        if self.eval.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.eval.trials == 0 {
            return Err(Error::Config("trial count must be at least 1".into()));
        }
        if self.eval.snr_set_db.is_empty() || self.eval.snr_set_db.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("evaluation SNR set must be nonempty".into()));
        }
        if self.eval.snapshot_sweep.is_empty() || self.eval.snapshot_sweep.contains(&0) {
            return Err(Error::Config(
                "snapshot sweep must hold positive counts".into(),
            ));
        }
        Ok(())
    }

    /// Copy with every section seed set from the root seed.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.dataset.seed = self.seed;
        c.training.seed = self.seed;
        c.eval.phase_design.seed = self.seed;
        c
    }

    /// Output directory: explicit setting, then the environment, then `out`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// First 8 bytes of the SHA-256 of the canonical JSON form, hex encoded.
    /// The output directory does not take part.
    pub fn content_hash(&self) -> String {
        let mut c = self.seeded();
        c.output_dir = None;
        let json = serde_json::to_vec(&c).expect("configuration serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Learning rate of the desk preset. The full-scale value does not train
/// the FC regressor reliably on 5,000 examples with random source phases.
pub const DESK_LEARNING_RATE: f64 = 0.003;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::desk();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.content_hash(), cfg.content_hash());
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 4\n[eval]\ntrials = 7\nmethods = [\"learned-fc\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.eval.trials, 7);
        assert_eq!(cfg.eval.methods, vec![Method::LearnedFc]);
        assert_eq!(cfg.grid, SearchGrid::default());
        assert!(ExperimentConfig::from_toml_str("[eval]\ntrials = 0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[eval]\nmethods = []\n").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn hash_tracks_seed_not_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.content_hash(), b.content_hash());
        b.seed = 1;
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 16);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::MlSnrMax,
            Method::MlCrlbMin,
            Method::LearnedFc,
            Method::LearnedFcFrozenIrs,
        ] {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse("music"), None);
    }
}
