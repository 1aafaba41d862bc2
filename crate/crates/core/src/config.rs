//! Environment description files (TOML).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modes::{Bottom, HalfSpace, ModeError, SoundSpeedProfile, WaveguideEnv};
use crate::scalar::Real;

pub const ENVIRONMENT_VERSION: u32 = 1;

/// The shipped background environment.
pub const DEFAULT_ENVIRONMENT: &str = include_str!("../configs/environment.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse environment file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported environment version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mode(#[from] ModeError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub version: u32,
    pub water_depth: f64,
    #[serde(default = "one")]
    pub water_density: f64,
    pub ssp: SspTable,
    pub bottom: BottomTable,
    pub thermocline: ThermoclineTable,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SspTable {
    pub depths: Vec<f64>,
    pub speeds: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BottomKind {
    HalfSpace,
    Rigid,
    PressureRelease,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BottomTable {
    pub kind: BottomKind,
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub density: f64,
    #[serde(default)]
    pub attenuation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoclineTable {
    pub top: f64,
    pub merge_depth: f64,
}

/// Depth interval moved by internal-wave displacement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thermocline<T> {
    pub top: T,
    pub merge_depth: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Environment<T> {
    pub waveguide: WaveguideEnv<T>,
    pub thermocline: Thermocline<T>,
}

impl EnvironmentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        if cfg.version != ENVIRONMENT_VERSION {
            return Err(ConfigError::Version { found: cfg.version, expected: ENVIRONMENT_VERSION });
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("environment tables serialize")
    }

    pub fn build<T: Real>(&self) -> Result<Environment<T>, ConfigError> {
        if self.ssp.depths.len() != self.ssp.speeds.len() {
            return Err(ConfigError::Invalid("ssp depths and speeds differ in length".into()));
        }
        let samples = self.ssp.depths.iter().zip(&self.ssp.speeds).map(|(z, c)| (T::lit(*z), T::lit(*c))).collect();
        let ssp = SoundSpeedProfile::new(samples)?;
        let bottom = match self.bottom.kind {
            BottomKind::HalfSpace => Bottom::HalfSpace(HalfSpace {
                speed: T::lit(self.bottom.speed),
                density: T::lit(self.bottom.density),
                attenuation: T::lit(self.bottom.attenuation),
            }),
            BottomKind::Rigid => Bottom::Rigid,
            BottomKind::PressureRelease => Bottom::PressureRelease,
        };
        let mut waveguide = WaveguideEnv::new(ssp, T::lit(self.water_depth), bottom)?;
        waveguide.water_density = T::lit(self.water_density);
        waveguide.validate()?;
        let th = &self.thermocline;
        if !(th.top > 0.0 && th.top < th.merge_depth && th.merge_depth < self.water_depth) {
            return Err(ConfigError::Invalid(format!(
                "thermocline needs 0 < top ({}) < merge_depth ({}) < water_depth ({})",
                th.top, th.merge_depth, self.water_depth
            )));
        }
        Ok(Environment { waveguide, thermocline: Thermocline { top: T::lit(th.top), merge_depth: T::lit(th.merge_depth) } })
    }
}

pub fn default_environment<T: Real>() -> Environment<T> {
    EnvironmentConfig::parse(DEFAULT_ENVIRONMENT)
        .and_then(|c| c.build())
        .expect("shipped environment is valid")
}
