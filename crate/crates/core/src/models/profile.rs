use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::quadrature;

/// Time-dependent frequency `ω(t)` of an integrable modulation.
///
/// The variants differ in whether the cosine expression is `ω²` or `ω`
/// itself. Every variant gives `ω`, `ω̇` in closed form; the phase
/// `Φ(t) = ∫₀ᵗ ω ds` is closed-form where possible and adaptive quadrature
/// otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModulationProfile {
    /// `ω(t) = ω₀`
    Constant { omega0: f64 },
    /// `ω(t) = √(a + b cos Ωt)`, with `Ω` stored as `freq`
    CosineSquared { a: f64, b: f64, freq: f64 },
    /// `ω(t) = a + 2q cos 2t`
    CosineDirect { a: f64, q: f64 },
    /// `ω(t) = √(a + 2q cos 2t)`
    SqrtCosine { a: f64, q: f64 },
}

/// `ω` and `ω̇` at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulation {
    pub omega: f64,
    pub omega_dot: f64,
}

/// Result of [`ModulationProfile::omega_eval`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    pub omega: f64,
    pub omega_dot: f64,
    pub phase: f64,
}

const PHASE_TOL: f64 = 1e-14;

/// Minimum of `cos θ` over `[θ0, θ1]`.
fn min_cos(theta0: f64, theta1: f64) -> f64 {
    let (lo, hi) = if theta0 <= theta1 { (theta0, theta1) } else { (theta1, theta0) };
    // odd multiples of π inside the interval reach -1
    let k = ((lo - PI) / (2.0 * PI)).ceil();
    if PI + 2.0 * PI * k <= hi {
        -1.0
    } else {
        lo.cos().min(hi.cos())
    }
}

impl ModulationProfile {
    pub fn constant(omega0: f64) -> Result<Self, ModelError> {
        let p = Self::Constant { omega0 };
        p.validate()?;
        Ok(p)
    }

    pub fn cosine_squared(a: f64, b: f64, freq: f64) -> Result<Self, ModelError> {
        let p = Self::CosineSquared { a, b, freq };
        p.validate()?;
        Ok(p)
    }

    pub fn cosine_direct(a: f64, q: f64) -> Result<Self, ModelError> {
        let p = Self::CosineDirect { a, q };
        p.validate()?;
        Ok(p)
    }

    pub fn sqrt_cosine(a: f64, q: f64) -> Result<Self, ModelError> {
        let p = Self::SqrtCosine { a, q };
        p.validate()?;
        Ok(p)
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::CosineSquared { .. } => "cosine-squared",
            Self::CosineDirect { .. } => "cosine-direct",
            Self::SqrtCosine { .. } => "sqrt-cosine",
        }
    }

    fn invalid(&self, rule: impl Into<String>) -> ModelError {
        ModelError::InvalidProfile { variant: self.variant_name(), rule: rule.into() }
    }

    /// Parameter rules that keep `ω` positive.
    ///
    /// `cosine-squared` accepts `a = |b|`: such a profile touches zero once per
    /// period and is only usable on windows that avoid those instants, which
    /// [`ModulationProfile::check_window`] verifies.
    pub fn validate(&self) -> Result<(), ModelError> {
        let params: &[f64] = match self {
            Self::Constant { omega0 } => &[*omega0],
            Self::CosineSquared { a, b, freq } => &[*a, *b, *freq],
            Self::CosineDirect { a, q } | Self::SqrtCosine { a, q } => &[*a, *q],
        };
        if params.iter().any(|p| !p.is_finite()) {
            return Err(self.invalid("parameters must be finite"));
        }
        match *self {
            Self::Constant { omega0 } if omega0 <= 0.0 => Err(self.invalid("omega0 > 0")),
            Self::CosineSquared { a, b, .. } if !(a > 0.0 && a >= b.abs()) => {
                Err(self.invalid("a > b > 0 (a >= |b| with a > 0)"))
            }
            Self::CosineSquared { freq, .. } if freq < 0.0 => Err(self.invalid("freq >= 0")),
            Self::CosineDirect { a, q } | Self::SqrtCosine { a, q } if a <= 2.0 * q.abs() => {
                Err(self.invalid("a > 2|q|"))
            }
            _ => Ok(()),
        }
    }

    /// Smallest value of the expression under the root (or of `ω` itself for
    /// the direct variants) over the closed window `[t0, t1]`.
    pub fn window_minimum(&self, t0: f64, t1: f64) -> f64 {
        match *self {
            Self::Constant { omega0 } => omega0,
            Self::CosineSquared { a, b, freq } => {
                if b >= 0.0 {
                    a + b * min_cos(freq * t0, freq * t1)
                } else {
                    a + b * -min_cos(freq * t0 + PI, freq * t1 + PI)
                }
            }
            Self::CosineDirect { a, q } | Self::SqrtCosine { a, q } => {
                if q >= 0.0 {
                    a + 2.0 * q * min_cos(2.0 * t0, 2.0 * t1)
                } else {
                    a - 2.0 * q * min_cos(2.0 * t0 + PI, 2.0 * t1 + PI)
                }
            }
        }
    }

    /// Rejects windows on which `ω` reaches zero.
    pub fn check_window(&self, t0: f64, t1: f64) -> Result<(), ModelError> {
        self.validate()?;
        if self.window_minimum(t0, t1) > 0.0 {
            Ok(())
        } else {
            Err(self.invalid(format!("omega must stay positive on [{t0}, {t1}]")))
        }
    }

    /// `ω(t)` and `ω̇(t)` without the positivity check.
    #[inline]
    pub fn at(&self, t: f64) -> Modulation {
        match *self {
            Self::Constant { omega0 } => Modulation { omega: omega0, omega_dot: 0.0 },
            Self::CosineSquared { a, b, freq } => {
                let (s, c) = (freq * t).sin_cos();
                let omega = (a + b * c).sqrt();
                Modulation { omega, omega_dot: -b * freq * s / (2.0 * omega) }
            }
            Self::CosineDirect { a, q } => {
                let (s, c) = (2.0 * t).sin_cos();
                Modulation { omega: a + 2.0 * q * c, omega_dot: -4.0 * q * s }
            }
            Self::SqrtCosine { a, q } => {
                let (s, c) = (2.0 * t).sin_cos();
                let omega = (a + 2.0 * q * c).sqrt();
                Modulation { omega, omega_dot: -2.0 * q * s / omega }
            }
        }
    }

    #[inline]
    pub fn omega(&self, t: f64) -> f64 {
        self.at(t).omega
    }

    /// Period of `ω`, or `None` when `ω` is constant.
    pub fn period(&self) -> Option<f64> {
        match *self {
            Self::Constant { .. } => None,
            Self::CosineSquared { b, freq, .. } => (b != 0.0 && freq > 0.0).then(|| 2.0 * PI / freq),
            Self::CosineDirect { q, .. } | Self::SqrtCosine { q, .. } => (q != 0.0).then_some(PI),
        }
    }

    /// True when `ω(t + period) = ω(t)` for all t.
    pub fn is_periodic_with(&self, period: f64) -> bool {
        if !(period > 0.0 && period.is_finite()) {
            return false;
        }
        match self.period() {
            None => true,
            Some(p) => {
                let ratio = period / p;
                ratio.round() >= 1.0 && (ratio - ratio.round()).abs() < 1e-9
            }
        }
    }

    /// `Φ(t) = ∫₀ᵗ ω(s) ds`.
    pub fn phase(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { omega0 } => omega0 * t,
            Self::CosineDirect { a, q } => a * t + q * (2.0 * t).sin(),
            Self::CosineSquared { a, b, freq } => {
                if b == 0.0 || freq == 0.0 {
                    (a + b).sqrt() * t
                } else {
                    self.periodic_phase(t, 2.0 * PI / freq)
                }
            }
            Self::SqrtCosine { a, q } => {
                if q == 0.0 {
                    a.sqrt() * t
                } else {
                    self.periodic_phase(t, PI)
                }
            }
        }
    }

    fn periodic_phase(&self, t: f64, period: f64) -> f64 {
        let f = |s: f64| self.omega(s);
        let n = (t / period).round();
        let rest = t - n * period;
        let mut total = quadrature::integrate(f, 0.0, rest, PHASE_TOL);
        if n != 0.0 {
            total += n * quadrature::integrate(f, 0.0, period, PHASE_TOL);
        }
        total
    }

    /// `(ω, ω̇, Φ)` at `t`, failing if `ω(t)` is not positive.
    pub fn omega_eval(&self, t: f64) -> Result<ProfileSample, ModelError> {
        self.validate()?;
        let m = self.at(t);
        if !(m.omega > 0.0 && m.omega_dot.is_finite()) {
            return Err(ModelError::NonPositive { variant: self.variant_name(), t });
        }
        Ok(ProfileSample { omega: m.omega, omega_dot: m.omega_dot, phase: self.phase(t) })
    }
}
