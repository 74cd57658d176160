//! Closed-form solutions of the modulated oscillator in terms of the phase
//! `Φ(t) = ∫₀ᵗ ω ds`.

use super::ModulationProfile;

/// Sign choice `±Φ(t)` in the level-set solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// `x(t) = A cos(Φ(t) + φ)`.
pub fn closed_form_oscillator(profile: &ModulationProfile, amplitude: f64, phase0: f64, t: f64) -> f64 {
    if amplitude == 0.0 {
        return 0.0;
    }
    amplitude * (profile.phase(t) + phase0).cos()
}

/// `(A, φ)` such that the oscillator solution passes through `(x0, v0)` at `t = 0`.
pub fn fit_oscillator(profile: &ModulationProfile, x0: f64, v0: f64) -> (f64, f64) {
    let u = v0 / profile.omega(0.0);
    (x0.hypot(u), (-u).atan2(x0))
}

/// Level-set constants `(C₁, C₂)` of the modulated Mathieu solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MathieuLevelSet {
    pub c1: f64,
    pub c2: f64,
    pub branch: Branch,
}

impl MathieuLevelSet {
    /// Constants matching `x(0) = x0`, `ẋ(0) = v0` on the `+Φ` branch.
    pub fn fit(profile: &ModulationProfile, x0: f64, v0: f64) -> Self {
        let u = v0 / profile.omega(0.0);
        Self { c1: 0.5 * (u * u + x0 * x0), c2: x0.atan2(u), branch: Branch::Plus }
    }

    pub fn eval(&self, profile: &ModulationProfile, t: f64) -> f64 {
        closed_form_modulated_mathieu(self.c1, self.c2, self.branch, profile, t)
    }
}

/// `x(t) = √(2C₁) sin(±Φ(t) + C₂)` on the level set `I = C₁`.
pub fn closed_form_modulated_mathieu(
    c1: f64,
    c2: f64,
    branch: Branch,
    profile: &ModulationProfile,
    t: f64,
) -> f64 {
    assert!(c1 >= 0.0, "level C1 must be non-negative");
    if c1 == 0.0 {
        return 0.0;
    }
    (2.0 * c1).sqrt() * (branch.sign() * profile.phase(t) + c2).sin()
}
