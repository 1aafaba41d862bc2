//! Versioned experiment configuration.
//!
//! One TOML file fixes every input of every command; together with the
//! master seed it determines all outputs. Derived seeds:
//!
//! | stream                 | seed         |
//! |------------------------|--------------|
//! | training pairs         | `seed`       |
//! | held-out test pairs    | `seed + 1`   |
//! | network initialization | `seed`       |
//! | batch shuffles         | `seed`       |
//! | scene noise, value `k` | `seed + 2 + k` |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use striae::dataset::DatasetSpec;
use striae::nliw::{NliwKind, SceneTimeline};
use striae::nn::{NetworkSpec, TrainConfig};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Snr,
    Amplitude,
    Width,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Snr => "snr",
            SweepParameter::Amplitude => "amplitude",
            SweepParameter::Width => "width",
        }
    }
}

/// Values of the parameters that are not being swept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedValues {
    pub snr_db: f64,
    pub amplitude: f64,
    pub sech_width: f64,
    pub rect_width: f64,
}

impl Default for FixedValues {
    fn default() -> Self {
        Self { snr_db: 10.0, amplitude: 6.0, sech_width: 75.0, rect_width: 200.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    /// Empty means the default test range for the parameter.
    #[serde(default)]
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn resolved_values(&self, kind: NliwKind) -> Vec<f64> {
        if !self.values.is_empty() {
            return self.values.clone();
        }
        match (self.parameter, kind) {
            (SweepParameter::Snr, _) => vec![-15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
            (SweepParameter::Amplitude, _) => vec![1.0, 5.0, 9.0, 13.0, 18.0],
            (SweepParameter::Width, NliwKind::Sech) => vec![10.0, 45.0, 75.0, 115.0, 150.0],
            (SweepParameter::Width, NliwKind::Rect) => vec![50.0, 200.0, 350.0, 550.0, 750.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestProtocol {
    pub nliw: NliwKind,
    pub sweep: SweepSpec,
    #[serde(default)]
    pub fixed: FixedValues,
    /// Moving source and wave for the ranging evaluation.
    pub timeline: SceneTimeline,
    /// Fixed source, moving wave for the parameter sweep.
    pub sweep_timeline: SceneTimeline,
    /// Number of PGM triptychs written per run.
    pub triptychs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Waveguide invariant used for ranging.
    pub ranging_beta: f64,
    /// `r_l` window (m) for the averaged curves.
    pub window: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Environment TOML, relative to the config file; the built-in default
    /// when absent.
    #[serde(default)]
    pub environment: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSpec,
    pub test_samples: u64,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
    pub test: TestProtocol,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let paper = preset == Preset::Paper;
        let dataset = if paper { DatasetSpec::paper() } else { DatasetSpec::desk() };
        let network = if paper { NetworkSpec::paper() } else { NetworkSpec::desk() };
        let train = if paper {
            TrainConfig::default()
        } else {
            TrainConfig { batch_size: 16, max_epochs: 12, ..TrainConfig::default() }
        };
        Self {
            version: CONFIG_VERSION,
            environment: None,
            seed: 0,
            out: PathBuf::from(if paper { "runs/paper" } else { "runs/desk" }),
            dataset,
            test_samples: if paper { 1000 } else { 50 },
            network,
            train,
            analysis: AnalysisConfig { ranging_beta: 2.17, window: (5e3, 15e3) },
            test: TestProtocol {
                nliw: NliwKind::Rect,
                sweep: SweepSpec { parameter: SweepParameter::Amplitude, values: Vec::new() },
                fixed: FixedValues::default(),
                timeline: SceneTimeline { duration: 22_200.0, ..SceneTimeline::default() },
                sweep_timeline: SceneTimeline {
                    source_speed: 0.0,
                    source_start: 35e3,
                    duration: 54_600.0,
                    ..SceneTimeline::default()
                },
                triptychs: 4,
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        #[derive(Deserialize)]
        struct Version {
            version: Option<u32>,
        }
        let v: Version = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        match v.version {
            Some(CONFIG_VERSION) => {}
            Some(other) => return Err(CliError::Config(format!("config version {other}, expected {CONFIG_VERSION}"))),
            None => return Err(CliError::Config("missing `version`".into())),
        }
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(env) = &cfg.environment {
            if env.is_relative() {
                cfg.environment = Some(path.parent().unwrap_or(Path::new(".")).join(env));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Pushes the master seed into every component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dataset.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: String| Err(CliError::Config(e));
        self.dataset.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.network.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.test.timeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.test.sweep_timeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.network.input_size != self.dataset.image_size {
            return cfg(format!("network input {} differs from image size {}", self.network.input_size, self.dataset.image_size));
        }
        if self.analysis.ranging_beta.is_nan() || self.analysis.ranging_beta <= 0.0 {
            return cfg("ranging_beta must be positive".into());
        }
        if self.analysis.window.0 >= self.analysis.window.1 {
            return cfg(format!("empty averaging window {:?}", self.analysis.window));
        }
        if self.test.sweep.resolved_values(self.test.nliw).iter().any(|v| !v.is_finite()) {
            return cfg("sweep values must be finite".into());
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<striae::Environment, CliError> {
        match &self.environment {
            None => Ok(striae::config::default_environment()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                let env = striae::config::EnvironmentConfig::parse(&text).map_err(|e| CliError::Config(e.to_string()))?;
                env.build().map_err(|e| CliError::Config(e.to_string()))
            }
        }
    }

    pub fn test_spec(&self) -> DatasetSpec {
        DatasetSpec { sample_count: self.test_samples, seed: self.seed.wrapping_add(1), ..self.dataset.clone() }
    }

    pub fn width_for(&self, kind: NliwKind) -> f64 {
        match kind {
            NliwKind::Sech => self.test.fixed.sech_width,
            NliwKind::Rect => self.test.fixed.rect_width,
        }
    }
}
