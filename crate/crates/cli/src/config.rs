//! Run configuration. Every field has a default, so an empty file (or no
//! file) gives the reference parameterization.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use wavecip::adaptive::AdaptiveConfig;
use wavecip::adjoint::CutoffZdelta;
use wavecip::data::ImmersingConfig;
use wavecip::geometry::{DomainSpec, TimeGrid};
use wavecip::optimize::CgConfig;
use wavecip::wave::{ForwardConfig, SourceWaveform};
use wavecip::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the twin-data noise generator.
    pub seed: u64,
    pub domain: DomainConfig,
    pub waveform: WaveformConfig,
    pub time: TimeConfig,
    pub physics: PhysicsConfig,
    pub tikhonov: TikhonovSection,
    pub cg: CgConfig<f64>,
    pub adaptive: AdaptiveSection,
    pub pipeline: PipelineConfig,
    pub twin: TwinConfig,
    pub paths: PathsConfig,
    pub output: OutputConfig,
}

/// `G = (-x,x)×(-y,y)×(-z,z0)`, `Ω = (-a,a)×(-b,b)×(-c,c1)`, base cell `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub z0: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub c1: f64,
    pub h: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        // laboratory box; the incident plane sits at 0.12 instead of 0.1 so
        // that the two layers above Γ are whole 0.04 cells
        Self { x: 0.56, y: 0.56, z: 0.16, z0: 0.12, a: 0.5, b: 0.5, c: 0.1, c1: 0.04, h: 0.04 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    pub omega: f64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self { omega: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    pub dt: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t_final: 1.2, dt: 0.003 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub s: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self { s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TikhonovSection {
    pub gamma: f64,
    /// `WSMESH1` file with an `eps` field on the base mesh; `ε ≡ 1` if unset.
    pub eps_glob: Option<PathBuf>,
}

impl Default for TikhonovSection {
    fn default() -> Self {
        Self { gamma: 0.01, eps_glob: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveSection {
    pub beta1: f64,
    pub max_refinements: usize,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        let d = AdaptiveConfig::<f64>::default();
        Self { beta1: d.beta1, max_refinements: d.max_refinements }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Immersing threshold `β`.
    pub beta: f64,
    /// Cutoff width `δ` as a fraction of `T`.
    pub delta_fraction: f64,
    /// Relative multiplicative noise of synthesized data.
    pub noise_level: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { beta: 0.5, delta_fraction: 0.1, noise_level: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub eps: f64,
}

/// Synthetic truth used by `synthesize` when no coefficient file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinConfig {
    pub inclusions: Vec<Inclusion>,
    /// Gaussian width of the smoothed prior written next to the truth.
    pub glob_sigma: f64,
    /// Peak of that prior as a fraction of the true peak.
    pub glob_peak_fraction: f64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            inclusions: vec![Inclusion { lo: [-0.04, -0.04, -0.08], hi: [0.04, 0.04, 0.0], eps: 4.0 }],
            glob_sigma: 0.04,
            glob_peak_fraction: 0.92,
        }
    }
}

/// Inputs; unset entries fall back to the conventional names in `--out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Coefficient for `forward` (and the truth for `synthesize`).
    pub eps: Option<PathBuf>,
    /// Detector-plane data for `preprocess` (`.txt` grid or `WSBND1`).
    pub measured: Option<PathBuf>,
    /// Boundary record for `invert`.
    pub boundary: Option<PathBuf>,
    /// Reconstruction for `report`.
    pub result: Option<PathBuf>,
    /// Known coefficient for `report` comparisons.
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Number of VTK field snapshots written by `forward`.
    pub snapshots: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { snapshots: 4 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            domain: DomainConfig::default(),
            waveform: WaveformConfig::default(),
            time: TimeConfig::default(),
            physics: PhysicsConfig::default(),
            tikhonov: TikhonovSection::default(),
            cg: CgConfig::default(),
            adaptive: AdaptiveSection::default(),
            pipeline: PipelineConfig::default(),
            twin: TwinConfig::default(),
            paths: PathsConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn domain_spec(&self) -> Result<DomainSpec<f64>> {
        let d = &self.domain;
        DomainSpec::from_half_widths(d.x, d.y, d.z, d.z0, d.a, d.b, d.c, d.c1)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn waveform(&self) -> SourceWaveform<f64> {
        SourceWaveform::new(self.waveform.omega)
    }

    pub fn forward_config(&self) -> Result<ForwardConfig<f64>> {
        let time = TimeGrid::new(self.time.t_final, self.time.dt, self.waveform().t1)?;
        ForwardConfig::new(self.physics.s, time)
    }

    pub fn cutoff(&self) -> Result<CutoffZdelta<f64>> {
        CutoffZdelta::new(self.pipeline.delta_fraction * self.time.t_final, self.time.t_final)
    }

    pub fn adaptive_config(&self) -> Result<AdaptiveConfig<f64>> {
        let cfg = AdaptiveConfig { beta1: self.adaptive.beta1, max_refinements: self.adaptive.max_refinements, cg: self.cg };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn immersing(&self) -> Result<ImmersingConfig<f64>> {
        let cfg = ImmersingConfig { beta: self.pipeline.beta };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching files.
    pub fn validate(&self) -> Result<()> {
        self.domain_spec()?;
        if !(self.domain.h > 0.0) {
            return Err(Error::Config("base cell size must be positive".into()));
        }
        if !(self.waveform.omega > 0.0) {
            return Err(Error::Config("ω must be positive".into()));
        }
        self.forward_config()?;
        self.cutoff()?;
        self.adaptive_config()?;
        self.immersing()?;
        if !(self.tikhonov.gamma > 0.0) {
            return Err(Error::Config("γ must be positive".into()));
        }
        if !(self.pipeline.noise_level >= 0.0) {
            return Err(Error::Config("noise level must be non-negative".into()));
        }
        for inc in &self.twin.inclusions {
            if !(inc.eps >= 1.0 && inc.eps <= 25.0) || (0..3).any(|d| inc.hi[d] <= inc.lo[d]) {
                return Err(Error::Config(format!("invalid inclusion {inc:?}")));
            }
        }
        if !(self.twin.glob_sigma > 0.0 && self.twin.glob_peak_fraction > 0.0) {
            return Err(Error::Config("twin prior parameters must be positive".into()));
        }
        Ok(())
    }
}
