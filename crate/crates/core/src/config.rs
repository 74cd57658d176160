//! Experiment configuration (TOML) and the figure presets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::default_escape_radius;
use crate::floquet::{Axis, Family};
use crate::models::{HopfParams, KineticSignature, ModelError, ModulationProfile, PotentialField, Sinusoid, SystemSpec};
use crate::ode::{IntegratorConfig, State};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {rule}")]
    Invalid { field: &'static str, rule: String },
    #[error("missing `{0}`")]
    Missing(&'static str),
    #[error("invalid `modulation`: {0}")]
    Model(#[from] ModelError),
}

fn invalid(field: &'static str, rule: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, rule: rule.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Oscillator,
    Mathieu,
    NonlinearMathieu,
    Kapitza,
    MonkeyKapitza,
    MathieuKapitza,
    Hopf,
}

impl SystemKind {
    pub fn dim(self) -> usize {
        match self {
            Self::Oscillator | Self::Mathieu | Self::NonlinearMathieu => 1,
            Self::Kapitza | Self::MonkeyKapitza | Self::MathieuKapitza => 2,
            Self::Hopf => 3,
        }
    }
}

/// `α₁, α₂` of the cubic-quartic potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialParams {
    pub alpha1: f64,
    pub alpha2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    /// Defaults to the start of `t_span`.
    #[serde(default)]
    pub t: Option<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Filled from the initial state when absent.
    pub escape_radius: Option<f64>,
    pub per_coordinate: bool,
    pub invariants: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { escape_radius: None, per_coordinate: true, invariants: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Prefix of every file written by a run.
    pub stem: String,
    /// Evenly spaced dense-output samples per run.
    pub samples: usize,
    pub format: Format,
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { stem: "run".into(), samples: 2000, format: Format::Csv, svg: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopfConfig {
    #[serde(default = "one")]
    pub mu: f64,
    pub epsilon: f64,
    pub forcing: Sinusoid,
    pub omega0: f64,
    #[serde(default = "unit_x")]
    pub start: [f64; 2],
    pub horizon: f64,
}

fn one() -> f64 {
    1.0
}

fn unit_x() -> [f64; 2] {
    [1.0, 0.0]
}

impl HopfConfig {
    pub fn params(&self) -> HopfParams {
        HopfParams { mu: self.mu, epsilon: self.epsilon, forcing: self.forcing }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub family: Family,
    pub a: Axis,
    pub q: Axis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    #[serde(default)]
    pub modulation: Option<ModulationProfile>,
    #[serde(default)]
    pub potential: Option<PotentialParams>,
    #[serde(default)]
    pub initial: Option<InitialState>,
    #[serde(default)]
    pub t_span: Option<[f64; 2]>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub hopf: Option<HopfConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

/// Parses and validates a TOML document, filling derived defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validated()
}

impl ExperimentConfig {
    /// Checks every domain rule and fills the escape radius.
    pub fn validated(mut self) -> Result<Self, ConfigError> {
        self.integrator.validate().map_err(|e| invalid("integrator", e.to_string()))?;
        if self.output.samples < 2 {
            return Err(invalid("output.samples", "at least 2"));
        }
        if self.output.stem.is_empty() || self.output.stem.contains(['/', '\\']) {
            return Err(invalid("output.stem", "a non-empty file name prefix"));
        }
        if let Some(sweep) = &self.sweep {
            for (field, axis) in [("sweep.a", &sweep.a), ("sweep.q", &sweep.q)] {
                if axis.count == 0 || !(axis.min.is_finite() && axis.max.is_finite()) || axis.max < axis.min {
                    return Err(invalid(field, "finite min <= max and count >= 1"));
                }
            }
        }
        if self.system == SystemKind::Hopf {
            let h = self.hopf.as_ref().ok_or(ConfigError::Missing("hopf"))?;
            if !(h.horizon > 0.0 && h.horizon.is_finite()) {
                return Err(invalid("hopf.horizon", "positive and finite"));
            }
            if h.start == [0.0, 0.0] || !h.start.iter().all(|x| x.is_finite()) {
                return Err(invalid("hopf.start", "finite and off the origin"));
            }
            if ![h.mu, h.epsilon, h.omega0, h.forcing.amplitude, h.forcing.frequency, h.forcing.phase]
                .iter()
                .all(|x| x.is_finite())
            {
                return Err(invalid("hopf", "all parameters finite"));
            }
            for (field, present) in [("modulation", self.modulation.is_some()), ("potential", self.potential.is_some()), ("initial", self.initial.is_some())] {
                if present {
                    return Err(invalid(field, "not used by the hopf system"));
                }
            }
            return Ok(self);
        }
        if self.hopf.is_some() {
            return Err(invalid("hopf", "only valid with system = \"hopf\""));
        }
        let sys = self.build_system()?;
        let [t0, t1] = self.t_span.ok_or(ConfigError::Missing("t_span"))?;
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(invalid("t_span", "finite with start < end"));
        }
        sys.profile().check_window(t0, t1)?;
        let s0 = self.initial_state()?;
        if s0.dim() != sys.dim() {
            return Err(invalid("initial", format!("q and v need {} entries", sys.dim())));
        }
        if !(t0..=t1).contains(&s0.t) {
            return Err(invalid("initial.t", "inside t_span"));
        }
        match self.analysis.escape_radius {
            Some(r) if !(r > 0.0 && r.is_finite()) => return Err(invalid("analysis.escape_radius", "positive")),
            Some(_) => {}
            None => self.analysis.escape_radius = Some(default_escape_radius(&s0)),
        }
        Ok(self)
    }

    /// The mechanical system described by `system`, `modulation`, `potential`.
    pub fn build_system(&self) -> Result<SystemSpec, ConfigError> {
        let profile = self.modulation.ok_or(ConfigError::Missing("modulation"))?;
        let (potential, signature) = match self.system {
            SystemKind::Oscillator | SystemKind::Mathieu => (PotentialField::Harmonic, KineticSignature::positive(1)),
            SystemKind::NonlinearMathieu => {
                let p = self.potential.ok_or(ConfigError::Missing("potential"))?;
                (PotentialField::CubicQuartic { alpha1: p.alpha1, alpha2: p.alpha2 }, KineticSignature::positive(1))
            }
            SystemKind::Kapitza | SystemKind::MathieuKapitza => (PotentialField::SimpleSaddlePair, KineticSignature::saddle()),
            SystemKind::MonkeyKapitza => (PotentialField::MonkeySaddlePair, KineticSignature::saddle()),
            SystemKind::Hopf => return Err(invalid("system", "hopf is not a mechanical system")),
        };
        if self.potential.is_some() && self.system != SystemKind::NonlinearMathieu {
            return Err(invalid("potential", "only used by nonlinear-mathieu"));
        }
        SystemSpec::new(profile, potential, signature).map_err(ConfigError::from)
    }

    pub fn initial_state(&self) -> Result<State, ConfigError> {
        let init = self.initial.as_ref().ok_or(ConfigError::Missing("initial"))?;
        let t = init.t.or(self.t_span.map(|s| s[0])).ok_or(ConfigError::Missing("t_span"))?;
        State::new(t, init.q.clone(), init.v.clone()).map_err(|e| invalid("initial", e.to_string()))
    }

    pub fn escape_radius(&self) -> f64 {
        self.analysis.escape_radius.expect("validated config fills the escape radius")
    }
}

/// A figure's parameters as printed in its caption, and the runnable
/// configurations derived from them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigurePreset {
    pub figure: u8,
    /// Every number listed in the caption.
    pub caption: BTreeMap<String, f64>,
    /// The caption numbers mapped onto the catalog; may fail validation.
    pub as_printed: ExperimentConfig,
    /// Replacement when `as_printed` violates positivity.
    pub adjusted: Option<ExperimentConfig>,
}

impl FigurePreset {
    /// Validation outcome of the as-printed parameters.
    pub fn as_printed_check(&self) -> Result<ExperimentConfig, ConfigError> {
        self.as_printed.clone().validated()
    }

    /// The configuration to run: adjusted when present, else as printed.
    pub fn runnable(&self) -> Result<ExperimentConfig, ConfigError> {
        self.adjusted.clone().unwrap_or_else(|| self.as_printed.clone()).validated()
    }
}

fn record(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn figure_config(system: SystemKind, profile: ModulationProfile, potential: Option<PotentialParams>, q: Vec<f64>, v: Vec<f64>, stem: &str) -> ExperimentConfig {
    ExperimentConfig {
        system,
        modulation: Some(profile),
        potential,
        initial: Some(InitialState { t: Some(0.0), q, v }),
        t_span: Some([-50.0, 50.0]),
        integrator: IntegratorConfig::default(),
        analysis: AnalysisConfig::default(),
        output: OutputConfig { stem: stem.into(), ..OutputConfig::default() },
        hopf: None,
        sweep: None,
    }
}

/// Positivity-adjusted `a` for the `cos 2t` figures.
pub const ADJUSTED_A: f64 = 0.25;

/// Presets for figures 1–3; `None` for any other number.
pub fn preset_figure(which: u8) -> Option<FigurePreset> {
    let sqrt_cos = |a: f64| ModulationProfile::SqrtCosine { a, q: 0.1 };
    Some(match which {
        1 => FigurePreset {
            figure: 1,
            caption: record(&[("q", 0.1), ("a", 0.01), ("b", 0.01), ("alpha1", 0.01), ("alpha2", 0.01), ("Omega", 0.01), ("x0", 0.0), ("vx0", 0.1)]),
            as_printed: figure_config(
                SystemKind::Mathieu,
                ModulationProfile::CosineSquared { a: 0.01, b: 0.01, freq: 0.01 },
                None,
                vec![0.0],
                vec![0.1],
                "figure1",
            ),
            adjusted: None,
        },
        2 => {
            let alphas = Some(PotentialParams { alpha1: 0.1, alpha2: 0.1 });
            let mk = |a| figure_config(SystemKind::NonlinearMathieu, sqrt_cos(a), alphas, vec![0.0], vec![0.1], "figure2");
            FigurePreset {
                figure: 2,
                caption: record(&[("q", 0.1), ("a", 0.01), ("alpha1", 0.1), ("alpha2", 0.1), ("x0", 0.0), ("vx0", 0.1)]),
                as_printed: mk(0.01),
                adjusted: Some(mk(ADJUSTED_A)),
            }
        }
        3 => {
            let mk = |a| figure_config(SystemKind::MathieuKapitza, sqrt_cos(a), None, vec![0.0, 0.0], vec![0.1, 0.1], "figure3");
            FigurePreset {
                figure: 3,
                caption: record(&[("q", 0.1), ("a", 0.01), ("x0", 0.0), ("vx0", 0.1), ("y0", 0.0), ("vy0", 0.1)]),
                as_printed: mk(0.01),
                adjusted: Some(mk(ADJUSTED_A)),
            }
        }
        _ => return None,
    })
}

/// The frequency-adaptation experiment: `sin(30t)`, `ω₀ = 25`, `ε = 0.9`.
pub fn hopf_preset() -> ExperimentConfig {
    ExperimentConfig {
        system: SystemKind::Hopf,
        modulation: None,
        potential: None,
        initial: None,
        t_span: None,
        integrator: IntegratorConfig::adaptive(1e-8, 1e-10),
        analysis: AnalysisConfig::default(),
        output: OutputConfig { stem: "hopf".into(), ..OutputConfig::default() },
        hopf: Some(HopfConfig {
            mu: 1.0,
            epsilon: 0.9,
            forcing: Sinusoid::new(1.0, 30.0, 0.0),
            omega0: 25.0,
            start: [1.0, 0.0],
            horizon: 2000.0,
        }),
        sweep: None,
    }
}
