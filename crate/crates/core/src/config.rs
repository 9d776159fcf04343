//! Resolved run configuration shared by the command line and the HTTP
//! service. Loadable from TOML; every section and field is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{build_bank, GaborBank, SigmaPolicy, DEFAULT_CONFIDENCE, DEFAULT_FREQUENCIES, DEFAULT_ORIENTATIONS};
use crate::surface::{DecomposeConfig, FitKind, DEFAULT_ALPHA, DEFAULT_MARGIN, DEFAULT_PCT_HI, DEFAULT_PCT_LO};
use crate::tvflow::{FlowParams, TimeGrid, DEFAULT_STEPS, DEFAULT_T_MAX, DEFAULT_T_MIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Uniform,
    Geometric,
}

impl std::str::FromStr for GridKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(GridKind::Uniform),
            "geometric" => Ok(GridKind::Geometric),
            other => Err(Error::Parameter(format!("unknown grid {other:?} (expected uniform or geometric)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub kind: GridKind,
    /// First positive time of a geometric grid; unused by uniform grids.
    pub t_min: f64,
    pub t_max: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { kind: GridKind::Geometric, t_min: DEFAULT_T_MIN, t_max: DEFAULT_T_MAX, steps: DEFAULT_STEPS }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<TimeGrid> {
        if self.steps < 2 {
            return Err(Error::Parameter(format!("steps must be at least 2, got {}", self.steps)));
        }
        match self.kind {
            GridKind::Geometric => TimeGrid::geometric(self.t_min, self.t_max, self.steps),
            GridKind::Uniform => TimeGrid::uniform(self.t_max, self.steps),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    pub fit: FitKind,
    pub alpha: f64,
    pub pct_lo: f64,
    pub pct_hi: f64,
    pub margin: usize,
    /// Local-fit bandwidth in pixels; image diagonal / 6 when absent.
    pub bandwidth: Option<f64>,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            fit: FitKind::Plane,
            alpha: DEFAULT_ALPHA,
            pct_lo: DEFAULT_PCT_LO,
            pct_hi: DEFAULT_PCT_HI,
            margin: DEFAULT_MARGIN,
            bandwidth: None,
        }
    }
}

impl SurfaceConfig {
    pub fn decompose_config(&self) -> DecomposeConfig {
        DecomposeConfig {
            fit: self.fit,
            alpha: self.alpha,
            pct_lo: self.pct_lo,
            pct_hi: self.pct_hi,
            margin: self.margin,
            bandwidth: self.bandwidth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaborConfig {
    pub orientations: usize,
    pub frequencies: Vec<f64>,
    pub confidence: f64,
}

impl Default for GaborConfig {
    fn default() -> Self {
        Self {
            orientations: DEFAULT_ORIENTATIONS,
            frequencies: DEFAULT_FREQUENCIES.to_vec(),
            confidence: DEFAULT_CONFIDENCE,
        }
    }
}

impl GaborConfig {
    pub fn bank(&self) -> Result<GaborBank> {
        build_bank(self.orientations, &self.frequencies, SigmaPolicy::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManipulateConfig {
    pub gain: f64,
    pub mask: Option<PathBuf>,
    pub clamp: bool,
}

impl Default for ManipulateConfig {
    fn default() -> Self {
        Self { gain: 1.0, mask: None, clamp: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub band_lo: Option<f64>,
    pub band_hi: Option<f64>,
    pub out: Option<PathBuf>,
    pub grid: GridConfig,
    pub flow: FlowParams,
    pub surface: SurfaceConfig,
    pub gabor: GaborConfig,
    pub manipulate: ManipulateConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parameter(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The band, when both ends are set.
    pub fn band(&self) -> Result<(f64, f64)> {
        match (self.band_lo, self.band_hi) {
            (Some(lo), Some(hi)) => Ok((lo, hi)),
            _ => Err(Error::Parameter("both --band-lo and --band-hi are required".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        self.flow.validate()?;
        if let (Some(lo), Some(hi)) = (self.band_lo, self.band_hi) {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
                return Err(Error::Parameter(format!("band needs 0 <= band-lo < band-hi, got [{lo}, {hi}]")));
            }
        }
        let s = &self.surface;
        if !(s.alpha.is_finite() && s.alpha >= 0.0) {
            return Err(Error::Parameter(format!("alpha must be non-negative, got {}", s.alpha)));
        }
        if !(0.0 <= s.pct_lo && s.pct_lo <= s.pct_hi && s.pct_hi <= 100.0) {
            return Err(Error::Parameter(format!(
                "percentiles need 0 <= pct-lo <= pct-hi <= 100, got {} and {}",
                s.pct_lo, s.pct_hi
            )));
        }
        if let Some(bw) = s.bandwidth {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(Error::Parameter(format!("bandwidth must be positive, got {bw}")));
            }
        }
        self.gabor.bank()?;
        if !(0.0..=1.0).contains(&self.gabor.confidence) {
            return Err(Error::Parameter(format!("confidence must lie in [0, 1], got {}", self.gabor.confidence)));
        }
        if !self.manipulate.gain.is_finite() {
            return Err(Error::Parameter(format!("gain must be finite, got {}", self.manipulate.gain)));
        }
        Ok(())
    }
}
