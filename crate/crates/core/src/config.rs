//! Experiment configuration: a TOML file with one table per block.
//!
//! Every key is optional; missing keys take the reference link defaults
//! (60 GHz, 2 GHz bandwidth, −20 dBm, 8 dB noise figure, 15 m, 27×27
//! elements at 2 cm). Unknown keys are rejected. Command-line overrides
//! are applied on top of the file, so the precedence is
//! flag > file > built-in default.
//!
//! ```toml
//! [link]
//! carrier_frequency_hz = 60e9
//! wavelength_m = 0.005        # or "derived" for c / f
//!
//! [array]
//! half_index = 13
//! spacing_m = 0.02
//!
//! [beam]
//! waist = "optimal"           # or a waist in meters
//!
//! [algorithm]
//! epsilon_relative = 1e-3
//! estimation = "noiseless"    # or "ls"
//! pattern = "isotropic"       # or "directional"
//!
//! [output]
//! dir = "beamcap-out"
//! ```

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::array_geometry::{ArraySpec, ElementPattern};
use crate::capacity::{Tolerance, DEFAULT_HARD_CAP};
use crate::error::{Error, Result};
use crate::hg_beams::{optimal_waist, BeamParameters};
use crate::native_channel::{LinkBudget, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Derived {
    Derived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimal {
    Optimal,
}

/// A wavelength in meters, or `"derived"` for `c / f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WavelengthSetting {
    Meters(f64),
    Keyword(Derived),
}

/// A waist in meters, or `"optimal"` for the symmetric-placement optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WaistSetting {
    Meters(f64),
    Keyword(Optimal),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Estimation {
    #[default]
    Noiseless,
    Ls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    #[default]
    Isotropic,
    Directional,
}

impl PatternKind {
    pub fn pattern(self) -> ElementPattern {
        match self {
            PatternKind::Isotropic => ElementPattern::Isotropic,
            PatternKind::Directional => ElementPattern::directional(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub distance_m: f64,
    pub wavelength_m: WavelengthSetting,
    pub speed_of_light_m_s: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            carrier_frequency_hz: 60e9,
            bandwidth_hz: 2e9,
            tx_power_dbm: -20.0,
            noise_figure_db: 8.0,
            distance_m: 15.0,
            wavelength_m: WavelengthSetting::Meters(0.005),
            speed_of_light_m_s: SPEED_OF_LIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    /// Elements run from −N to N along each axis.
    pub half_index: usize,
    pub spacing_m: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self { half_index: 13, spacing_m: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub waist: WaistSetting,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { waist: WaistSetting::Keyword(Optimal::Optimal) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// Stop when the spectral efficiency moves by less than this fraction.
    pub epsilon_relative: f64,
    /// Absolute stopping threshold in bits/s/Hz; replaces the relative one.
    pub epsilon_absolute: Option<f64>,
    pub hard_cap: usize,
    pub estimation: Estimation,
    pub repetitions: usize,
    pub seed: u64,
    pub pattern: PatternKind,
    /// Per-mode rate clamp in bits/s/Hz.
    pub mcs_cap: Option<f64>,
    pub drop_tol: f64,
    /// Also decompose the antenna-domain channel for reference.
    pub compare_native: bool,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            epsilon_relative: 1e-3,
            epsilon_absolute: None,
            hard_cap: DEFAULT_HARD_CAP,
            estimation: Estimation::Noiseless,
            repetitions: 1,
            seed: 0,
            pattern: PatternKind::Isotropic,
            mcs_cap: None,
            drop_tol: crate::beamspace::DEFAULT_DROP_TOL,
            compare_native: true,
        }
    }
}

impl AlgorithmConfig {
    pub fn tolerance(&self) -> Tolerance {
        match self.epsilon_absolute {
            Some(eps) => Tolerance::Absolute(eps),
            None => Tolerance::Relative(self.epsilon_relative),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Largest frontier in the residual sweep.
    pub residual_l_max: usize,
    /// Number of leading singular modes whose residuals are reported.
    pub residual_modes: usize,
    pub capture_max_order: usize,
    pub capture_a_over_w_max: f64,
    pub capture_points: usize,
    /// Frontier at which beamspace and native spectra are compared.
    pub beamspace_l_max: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            residual_l_max: 12,
            residual_modes: 200,
            capture_max_order: 8,
            capture_a_over_w_max: 3.0,
            capture_points: 61,
            beamspace_l_max: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("beamcap-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub link: LinkConfig,
    pub array: ArrayConfig,
    pub beam: BeamConfig,
    pub algorithm: AlgorithmConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

/// Values given on the command line; each replaces one config key.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Absolute tolerance in bits/s/Hz.
    pub epsilon: Option<f64>,
    /// Largest frontier the capacity search may reach.
    pub lmax_cap: Option<usize>,
    pub estimation: Option<Estimation>,
    pub pattern: Option<PatternKind>,
    pub mcs_cap: Option<f64>,
}

/// Source text kept around to point validation errors at a line.
struct Source<'a> {
    name: &'a str,
    text: &'a str,
}

impl Source<'_> {
    /// 1-based line of `key` inside `[table]`, if present.
    fn line_of(&self, table: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (n, line) in self.text.lines().enumerate() {
            let t = line.trim();
            if let Some(h) = t.strip_prefix('[').and_then(|h| h.split(']').next()) {
                current = h.trim().to_string();
                continue;
            }
            let Some((k, _)) = t.split_once('=') else { continue };
            let k = k.trim().trim_matches('"');
            if k == key && current == table || k == format!("{table}.{key}") && current.is_empty() {
                return Some(n + 1);
            }
        }
        None
    }

    fn error(&self, table: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        match self.line_of(table, key) {
            Some(line) => Error::Config(format!("{}:{line}: {table}.{key}: {msg}", self.name)),
            None => Error::Config(format!("{}: {table}.{key}: {msg}", self.name)),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates `text`; `name` labels error messages.
    pub fn from_toml(text: &str, name: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!(":{line}")
                })
                .unwrap_or_default();
            Error::Config(format!("{name}{at}: {}", e.message()))
        })?;
        cfg.validate_source(&Source { name, text })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: cannot read config: {e}", path.display())))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.algorithm.seed = seed;
        }
        if let Some(eps) = o.epsilon {
            self.algorithm.epsilon_absolute = Some(eps);
        }
        if let Some(cap) = o.lmax_cap {
            self.algorithm.hard_cap = cap;
        }
        if let Some(e) = o.estimation {
            self.algorithm.estimation = e;
        }
        if let Some(p) = o.pattern {
            self.algorithm.pattern = p;
        }
        if let Some(c) = o.mcs_cap {
            self.algorithm.mcs_cap = Some(c);
        }
        self.validate_source(&Source { name: "command line", text: "" })
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_source(&Source { name: "config", text: "" })
    }

    fn validate_source(&self, src: &Source) -> Result<()> {
        let positive = |table: &str, key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(src.error(table, key, format!("must be a positive number, got {v}")))
            }
        };
        let finite = |table: &str, key: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(src.error(table, key, format!("must be finite, got {v}")))
            }
        };
        let l = &self.link;
        positive("link", "carrier_frequency_hz", l.carrier_frequency_hz)?;
        positive("link", "bandwidth_hz", l.bandwidth_hz)?;
        finite("link", "tx_power_dbm", l.tx_power_dbm)?;
        finite("link", "noise_figure_db", l.noise_figure_db)?;
        positive("link", "distance_m", l.distance_m)?;
        positive("link", "speed_of_light_m_s", l.speed_of_light_m_s)?;
        if let WavelengthSetting::Meters(w) = l.wavelength_m {
            positive("link", "wavelength_m", w)?;
        }
        positive("array", "spacing_m", self.array.spacing_m)?;
        if self.array.half_index > 60 {
            return Err(src.error("array", "half_index", "at most 60 (14641 elements) is supported"));
        }
        if let WaistSetting::Meters(w) = self.beam.waist {
            positive("beam", "waist", w)?;
        }
        let a = &self.algorithm;
        positive("algorithm", "epsilon_relative", a.epsilon_relative)?;
        if let Some(eps) = a.epsilon_absolute {
            positive("algorithm", "epsilon_absolute", eps)?;
        }
        if a.hard_cap < 1 {
            return Err(src.error("algorithm", "hard_cap", "must be at least 1"));
        }
        if a.repetitions < 1 {
            return Err(src.error("algorithm", "repetitions", "must be at least 1"));
        }
        if let Some(c) = a.mcs_cap {
            positive("algorithm", "mcs_cap", c)?;
        }
        if !(0.0..1.0).contains(&a.drop_tol) {
            return Err(src.error("algorithm", "drop_tol", format!("must lie in [0, 1), got {}", a.drop_tol)));
        }
        let s = &self.sweep;
        positive("sweep", "capture_a_over_w_max", s.capture_a_over_w_max)?;
        if s.capture_points < 2 {
            return Err(src.error("sweep", "capture_points", "must be at least 2"));
        }
        if s.residual_modes < 1 {
            return Err(src.error("sweep", "residual_modes", "must be at least 1"));
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(src.error("output", "dir", "must not be empty"));
        }
        self.link_budget().map_err(|e| src.error("link", "wavelength_m", e))?;
        Ok(())
    }

    pub fn link_budget(&self) -> Result<LinkBudget> {
        let l = &self.link;
        let link = LinkBudget::with_speed_of_light(
            l.carrier_frequency_hz,
            l.bandwidth_hz,
            l.tx_power_dbm,
            l.noise_figure_db,
            l.distance_m,
            l.speed_of_light_m_s,
        )?;
        match l.wavelength_m {
            WavelengthSetting::Meters(w) => link.with_wavelength(w),
            WavelengthSetting::Keyword(Derived::Derived) => Ok(link),
        }
    }

    /// TX at `−D/2` facing +z, RX at `+D/2` facing −z.
    pub fn arrays(&self) -> Result<(ArraySpec, ArraySpec)> {
        let half = 0.5 * self.link.distance_m;
        Ok((
            ArraySpec::transmitter(self.array.half_index, self.array.spacing_m, -half)?,
            ArraySpec::receiver(self.array.half_index, self.array.spacing_m, half)?,
        ))
    }

    pub fn beam_parameters(&self) -> Result<BeamParameters> {
        let link = self.link_budget()?;
        match self.beam.waist {
            WaistSetting::Keyword(Optimal::Optimal) => optimal_waist(link.wavelength(), link.distance()),
            WaistSetting::Meters(w) => BeamParameters::symmetric(w, link.wavelength(), link.distance()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let cfg = ExperimentConfig::from_toml("", "t.toml").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let link = cfg.link_budget().unwrap();
        assert_eq!(link.wavelength(), 0.005);
        assert_eq!(link.distance(), 15.0);
        let (tx, rx) = cfg.arrays().unwrap();
        assert_eq!(tx.element_count(), 729);
        assert_eq!((tx.z_position(), rx.z_position()), (-7.5, 7.5));
        assert!((cfg.beam_parameters().unwrap().waist() - 0.10925).abs() < 1e-5);
        assert_eq!(cfg.algorithm.tolerance(), Tolerance::Relative(1e-3));
    }

    #[test]
    fn keywords_and_numbers_both_parse() {
        let cfg = ExperimentConfig::from_toml(
            "[link]\nwavelength_m = \"derived\"\n[beam]\nwaist = 0.2\n[algorithm]\nestimation = \"ls\"\npattern = \"directional\"\nmcs_cap = 5.5547\n",
            "t.toml",
        )
        .unwrap();
        assert_eq!(cfg.link.wavelength_m, WavelengthSetting::Keyword(Derived::Derived));
        assert!((cfg.link_budget().unwrap().wavelength() - SPEED_OF_LIGHT / 60e9).abs() < 1e-15);
        assert_eq!(cfg.beam.waist, WaistSetting::Meters(0.2));
        assert_eq!(cfg.algorithm.estimation, Estimation::Ls);
        assert_eq!(cfg.algorithm.pattern, PatternKind::Directional);
        assert_eq!(cfg.algorithm.mcs_cap, Some(5.5547));
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ExperimentConfig::from_toml("[array]\nhalf_index = 2\n\nbogus = 1\n", "t.toml").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("t.toml:4"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let msg = ExperimentConfig::from_toml("[link]\n\ndistance_m = = 3\n", "t.toml").unwrap_err().to_string();
        assert!(msg.contains("t.toml:3"), "{msg}");
    }

    #[test]
    fn invalid_value_reports_line() {
        let err = ExperimentConfig::from_toml("[link]\nbandwidth_hz = 1e9\n[array]\n# c\nspacing_m = -0.1\n", "t.toml")
            .unwrap_err()
            .to_string();
        assert!(err.contains("t.toml:5: array.spacing_m"), "{err}");
        let err = ExperimentConfig::from_toml("[algorithm]\nhard_cap = 0\n", "t.toml").unwrap_err().to_string();
        assert!(err.contains("t.toml:2"), "{err}");
        let err = ExperimentConfig::from_toml("[beam]\nwaist = \"widest\"\n", "t.toml").unwrap_err().to_string();
        assert!(err.contains("t.toml:2"), "{err}");
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = ExperimentConfig::from_toml("[algorithm]\nseed = 3\nhard_cap = 9\n", "t.toml").unwrap();
        cfg.apply(&Overrides {
            out: Some("elsewhere".into()),
            seed: Some(11),
            epsilon: Some(1e-4),
            lmax_cap: Some(4),
            estimation: Some(Estimation::Ls),
            pattern: Some(PatternKind::Directional),
            mcs_cap: Some(4.0),
        })
        .unwrap();
        assert_eq!(cfg.output.dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.algorithm.seed, 11);
        assert_eq!(cfg.algorithm.hard_cap, 4);
        assert_eq!(cfg.algorithm.tolerance(), Tolerance::Absolute(1e-4));
        assert_eq!(cfg.algorithm.estimation, Estimation::Ls);
        assert_eq!(cfg.algorithm.mcs_cap, Some(4.0));
        assert!(cfg.apply(&Overrides { epsilon: Some(-1.0), ..Default::default() }).is_err());
    }
}
