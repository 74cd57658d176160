use serde::{Deserialize, Serialize};

use super::{ModelError, ModulationProfile, PotentialField};
use crate::ode::State;

/// Signs `σᵢ = ±1` on the kinetic terms `½σᵢ(ẋᵢ/ω)²` of the Lagrangian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct KineticSignature(Vec<f64>);

impl KineticSignature {
    pub fn new(signs: &[i8]) -> Result<Self, ModelError> {
        if signs.is_empty() || signs.iter().any(|s| s.abs() != 1) {
            return Err(ModelError::InvalidSignature(signs.to_vec()));
        }
        Ok(Self(signs.iter().map(|&s| f64::from(s)).collect()))
    }

    /// All `+1`.
    pub fn positive(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    /// `(+1, -1)`, the anisotropic signature of the saddle pairs.
    pub fn saddle() -> Self {
        Self(vec![1.0, -1.0])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<i8>> for KineticSignature {
    type Error = ModelError;

    fn try_from(v: Vec<i8>) -> Result<Self, Self::Error> {
        Self::new(&v)
    }
}

impl From<KineticSignature> for Vec<i8> {
    fn from(s: KineticSignature) -> Self {
        s.0.iter().map(|&x| x as i8).collect()
    }
}

/// Canonical coordinates `(q, p)` with `pᵢ = σᵢ ẋᵢ / ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut y = self.q.clone();
        y.extend_from_slice(&self.p);
        y
    }

    pub fn from_flat(t: f64, y: &[f64]) -> Self {
        let d = y.len() / 2;
        Self { t, q: y[..d].to_vec(), p: y[d..].to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue {
    /// `𝓗 = ω(t)·H`, not conserved.
    pub modulated: f64,
    /// `H = ½Σσᵢpᵢ² + U(q)`, conserved.
    pub frozen: f64,
}

/// A modulated mechanical system `d/dt(ẋᵢ/ω) + σᵢ ω ∂U/∂xᵢ = 0`.
///
/// Expanded, this is `ẍᵢ = (ω̇/ω)ẋᵢ - σᵢω²∂U/∂xᵢ`; in canonical form
/// `ẋᵢ = ωσᵢpᵢ`, `ṗᵢ = -ω∂U/∂xᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    profile: ModulationProfile,
    potential: PotentialField,
    signature: KineticSignature,
}

/// Validates and assembles a [`SystemSpec`].
pub fn build_system(
    profile: ModulationProfile,
    potential: PotentialField,
    signature: KineticSignature,
) -> Result<SystemSpec, ModelError> {
    SystemSpec::new(profile, potential, signature)
}

impl SystemSpec {
    pub fn new(
        profile: ModulationProfile,
        potential: PotentialField,
        signature: KineticSignature,
    ) -> Result<Self, ModelError> {
        profile.validate()?;
        if !potential.is_finite() {
            return Err(ModelError::InvalidPotential(format!("{potential:?}")));
        }
        if potential.dim() != signature.len() {
            return Err(ModelError::DimensionMismatch {
                potential: potential.dim(),
                signature: signature.len(),
            });
        }
        Ok(Self { profile, potential, signature })
    }

    /// 1-D modulated oscillator.
    pub fn oscillator(profile: ModulationProfile) -> Result<Self, ModelError> {
        Self::new(profile, PotentialField::Harmonic, KineticSignature::positive(1))
    }

    /// Parametric Kapitza system on the simple saddle pair.
    pub fn kapitza(profile: ModulationProfile) -> Result<Self, ModelError> {
        Self::new(profile, PotentialField::SimpleSaddlePair, KineticSignature::saddle())
    }

    /// Generalized parametric Kapitza system on the monkey saddle pair.
    pub fn monkey(profile: ModulationProfile) -> Result<Self, ModelError> {
        Self::new(profile, PotentialField::MonkeySaddlePair, KineticSignature::saddle())
    }

    pub fn nonlinear_mathieu(
        profile: ModulationProfile,
        alpha1: f64,
        alpha2: f64,
    ) -> Result<Self, ModelError> {
        Self::new(
            profile,
            PotentialField::CubicQuartic { alpha1, alpha2 },
            KineticSignature::positive(1),
        )
    }

    pub fn profile(&self) -> &ModulationProfile {
        &self.profile
    }

    pub fn potential(&self) -> &PotentialField {
        &self.potential
    }

    pub fn signature(&self) -> &KineticSignature {
        &self.signature
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    /// Acceleration `ẍ` at `(t, q, v)` into `acc`.
    #[inline]
    pub fn acceleration(&self, t: f64, q: &[f64], v: &[f64], acc: &mut [f64]) {
        let m = self.profile.at(t);
        self.potential.gradient(q, acc);
        let damping = m.omega_dot / m.omega;
        let w2 = m.omega * m.omega;
        for i in 0..acc.len() {
            acc[i] = damping * v[i] - self.signature.0[i] * w2 * acc[i];
        }
    }

    /// Newtonian right-hand side: the acceleration vector at `s`.
    pub fn rhs_newtonian(&self, s: &State) -> Result<Vec<f64>, ModelError> {
        self.check_positive(s.t)?;
        let mut acc = vec![0.0; self.dim()];
        self.acceleration(s.t, &s.q, &s.v, &mut acc);
        Ok(acc)
    }

    /// First-order field on the flat layout `[q, v]`.
    pub fn newtonian_field(&self) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
        let d = self.dim();
        move |t, y, dy| {
            let (q, v) = y.split_at(d);
            let (dq, dv) = dy.split_at_mut(d);
            dq.copy_from_slice(v);
            self.acceleration(t, q, v, dv);
        }
    }

    /// Canonical field on the flat layout `[q, p]`.
    pub fn hamiltonian_field(&self) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
        let d = self.dim();
        move |t, y, dy| {
            let (q, p) = y.split_at(d);
            let (dq, dp) = dy.split_at_mut(d);
            let w = self.profile.omega(t);
            for i in 0..d {
                dq[i] = w * self.signature.0[i] * p[i];
            }
            self.potential.gradient(q, dp);
            for g in dp.iter_mut() {
                *g *= -w;
            }
        }
    }

    /// Hamiltonian right-hand side `(q̇, ṗ)` at `ps`, flattened.
    pub fn rhs_hamiltonian(&self, ps: &PhaseState) -> Result<Vec<f64>, ModelError> {
        self.check_positive(ps.t)?;
        let mut dy = vec![0.0; 2 * self.dim()];
        (self.hamiltonian_field())(ps.t, &ps.to_flat(), &mut dy);
        Ok(dy)
    }

    fn check_positive(&self, t: f64) -> Result<(), ModelError> {
        if self.profile.omega(t) > 0.0 {
            Ok(())
        } else {
            Err(ModelError::NonPositive { variant: self.profile.variant_name(), t })
        }
    }

    pub fn to_phase(&self, s: &State) -> PhaseState {
        let w = self.profile.omega(s.t);
        let p = s.v.iter().zip(&self.signature.0).map(|(v, sg)| sg * v / w).collect();
        PhaseState { t: s.t, q: s.q.clone(), p }
    }

    pub fn to_state(&self, ps: &PhaseState) -> State {
        let w = self.profile.omega(ps.t);
        let v = ps.p.iter().zip(&self.signature.0).map(|(p, sg)| sg * p * w).collect();
        State { t: ps.t, q: ps.q.clone(), v }
    }

    /// Frozen Hamiltonian `H(q, p) = ½Σσᵢpᵢ² + U(q)`.
    pub fn frozen_hamiltonian(&self, q: &[f64], p: &[f64]) -> f64 {
        let kinetic: f64 = p.iter().zip(&self.signature.0).map(|(p, s)| 0.5 * s * p * p).sum();
        kinetic + self.potential.value(q)
    }

    pub fn hamiltonian_value(&self, ps: &PhaseState) -> Result<HamiltonianValue, ModelError> {
        self.check_positive(ps.t)?;
        let frozen = self.frozen_hamiltonian(&ps.q, &ps.p);
        Ok(HamiltonianValue { modulated: self.profile.omega(ps.t) * frozen, frozen })
    }
}
