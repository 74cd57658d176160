//! Floquet analysis of the linear periodic members of the catalog.
//!
//! Monodromy matrices are built in canonical coordinates `(q, p)`, where the
//! flow is Hamiltonian, so `det M = 1` and the spectrum is reciprocal.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelError, ModulationProfile, SystemSpec};
use crate::ode::{integrate, IntegratorConfig, OdeError};

/// `|λ|` above `1 + UNSTABLE_TOL` is genuine growth.
pub const UNSTABLE_TOL: f64 = 1e-8;
/// Distance to `±1` under which two eigenvalues count as the repeated root.
pub const MARGINAL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FloquetError {
    #[error("monodromy requires a linear potential, got {0}")]
    Nonlinear(&'static str),
    #[error("profile is not periodic with period {0}")]
    NotPeriodic(f64),
    #[error("zero eigenvalue in monodromy spectrum")]
    ZeroEigenvalue,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    BoundedOscillatory,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonodromyResult {
    pub period: f64,
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<Complex64>,
    pub exponents: Vec<Complex64>,
    pub classification: Stability,
}

impl MonodromyResult {
    fn from_matrix(matrix: DMatrix<f64>, period: f64) -> Result<Self, FloquetError> {
        let mut eigenvalues: Vec<Complex64> = matrix.complex_eigenvalues().iter().copied().collect();
        eigenvalues.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(a.arg().total_cmp(&b.arg())));
        let exponents = exponents(&eigenvalues, period)?;
        let classification = classify(&eigenvalues);
        Ok(Self { period, matrix, eigenvalues, exponents, classification })
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }

    pub fn max_modulus(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    pub fn reciprocity_error(&self) -> f64 {
        reciprocity_error(&self.eigenvalues)
    }
}

/// Period map of a linear first-order field on `R^n`, column `j` being the
/// solution at `t0 + period` from the `j`-th basis vector at `t0`.
pub fn period_map<F>(field: F, n: usize, t0: f64, period: f64, cfg: &IntegratorConfig) -> Result<DMatrix<f64>, FloquetError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let cfg = cfg.clone().with_dense(false);
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let traj = integrate(&field, t0, &e, t0 + period, &cfg)?.into_result()?;
        let end = traj.states().last().expect("non-empty trajectory");
        m.set_column(j, &nalgebra::DVector::from_column_slice(end));
    }
    Ok(m)
}

/// Monodromy over one period `T` of a linear system, in `(q, p)` coordinates.
pub fn monodromy(sys: &SystemSpec, period: f64, cfg: &IntegratorConfig) -> Result<MonodromyResult, FloquetError> {
    if !sys.potential().is_linear() {
        return Err(FloquetError::Nonlinear(sys.potential().name()));
    }
    if !sys.profile().is_periodic_with(period) {
        return Err(FloquetError::NotPeriodic(period));
    }
    let m = period_map(sys.hamiltonian_field(), 2 * sys.dim(), 0.0, period, cfg)?;
    MonodromyResult::from_matrix(m, period)
}

/// Monodromy of Hill's form `ẍ + (a + 2q cos 2t)x = 0` over `T = π`, in `(x, ẋ)`.
pub fn standard_mathieu_monodromy(a: f64, q: f64, cfg: &IntegratorConfig) -> Result<MonodromyResult, FloquetError> {
    let field = move |t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -(a + 2.0 * q * (2.0 * t).cos()) * y[0];
    };
    MonodromyResult::from_matrix(period_map(field, 2, 0.0, PI, cfg)?, PI)
}

/// `μ = -i log(λ)/T` on the principal branch, so `Re μ ∈ (-π/T, π/T]`.
pub fn exponents(eigenvalues: &[Complex64], period: f64) -> Result<Vec<Complex64>, FloquetError> {
    eigenvalues
        .iter()
        .map(|l| {
            if l.norm() == 0.0 {
                return Err(FloquetError::ZeroEigenvalue);
            }
            Ok(Complex64::new(l.arg(), -l.norm().ln()) / period)
        })
        .collect()
}

pub fn classify(eigenvalues: &[Complex64]) -> Stability {
    if eigenvalues.iter().any(|l| l.norm() > 1.0 + UNSTABLE_TOL) {
        return Stability::Unstable;
    }
    let near = |target: f64| eigenvalues.iter().filter(|l| (**l - target).norm() < MARGINAL_TOL).count();
    if near(1.0) >= 2 || near(-1.0) >= 2 {
        Stability::Marginal
    } else {
        Stability::BoundedOscillatory
    }
}

/// Largest `|λλ' - 1|` over a greedy reciprocal pairing of the spectrum.
pub fn reciprocity_error(eigenvalues: &[Complex64]) -> f64 {
    let mut left: Vec<Complex64> = eigenvalues.to_vec();
    let mut worst: f64 = 0.0;
    while let Some(l) = left.pop() {
        let Some((k, err)) = left
            .iter()
            .enumerate()
            .map(|(k, m)| (k, (l * m - 1.0).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
        else {
            // odd count: unpaired eigenvalue
            return f64::INFINITY;
        };
        left.swap_remove(k);
        worst = worst.max(err);
    }
    worst
}

/// Roots of `det((λ² + b)𝕀 + A) = 0`, `A = [[0, a], [-a, 0]]`, i.e. the
/// Kapitza pair `ẍ + bx + ay = 0`, `ÿ - ax + by = 0`: `λ² = -b ± ia`.
pub fn kapitza_characteristic_roots(a: f64, b: f64) -> [Complex64; 4] {
    let r1 = Complex64::new(-b, a).sqrt();
    let r2 = Complex64::new(-b, -a).sqrt();
    [r1, -r1, r2, -r2]
}

/// Linear periodic families parameterised by `(a, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Integrably modulated oscillator, `ω = √(a + 2q cos 2t)`.
    ModulatedMathieu,
    /// Kapitza pair with `ω = √(a + 2q cos 2t)`.
    MathieuKapitza,
    /// Hill's form `ẍ + (a + 2q cos 2t)x = 0` (no positivity requirement).
    StandardMathieu,
}

impl Family {
    pub fn period(self) -> f64 {
        PI
    }

    pub fn monodromy(self, a: f64, q: f64, cfg: &IntegratorConfig) -> Result<MonodromyResult, FloquetError> {
        match self {
            Family::StandardMathieu => standard_mathieu_monodromy(a, q, cfg),
            Family::ModulatedMathieu => monodromy(&SystemSpec::oscillator(ModulationProfile::sqrt_cosine(a, q)?)?, PI, cfg),
            Family::MathieuKapitza => monodromy(&SystemSpec::kapitza(ModulationProfile::sqrt_cosine(a, q)?)?, PI, cfg),
        }
    }

    fn in_domain(self, a: f64, q: f64) -> bool {
        match self {
            Family::StandardMathieu => a.is_finite() && q.is_finite(),
            _ => ModulationProfile::sqrt_cosine(a, q).is_ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, min: f64, max: f64, count: usize) -> Self {
        Self { name: name.into(), min, max, count }
    }

    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            n => crate::ode::uniform_grid(self.min, self.max, n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellClass {
    BoundedOscillatory,
    Unstable,
    Marginal,
    OutOfDomain,
    Failed,
}

impl From<Stability> for CellClass {
    fn from(s: Stability) -> Self {
        match s {
            Stability::BoundedOscillatory => CellClass::BoundedOscillatory,
            Stability::Unstable => CellClass::Unstable,
            Stability::Marginal => CellClass::Marginal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub a: f64,
    pub q: f64,
    pub class: CellClass,
    pub max_modulus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Cells in row-major order: `cells[i * q_axis.count + j]` is `(a_i, q_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityGrid {
    pub family: Family,
    pub a_axis: Axis,
    pub q_axis: Axis,
    pub cells: Vec<Cell>,
}

impl StabilityGrid {
    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[i * self.q_axis.count + j]
    }
}

/// Classifies every `(a, q)` cell; cells run in parallel and failures are
/// recorded in-cell.
pub fn stability_sweep(family: Family, a_axis: Axis, q_axis: Axis, cfg: &IntegratorConfig) -> StabilityGrid {
    let (av, qv) = (a_axis.values(), q_axis.values());
    let cells = (0..av.len() * qv.len())
        .into_par_iter()
        .map(|k| {
            let (a, q) = (av[k / qv.len()], qv[k % qv.len()]);
            if !family.in_domain(a, q) {
                return Cell { a, q, class: CellClass::OutOfDomain, max_modulus: None, error: None };
            }
            match family.monodromy(a, q, cfg) {
                Ok(m) => Cell { a, q, class: m.classification.into(), max_modulus: Some(m.max_modulus()), error: None },
                Err(e) => Cell { a, q, class: CellClass::Failed, max_modulus: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    StabilityGrid { family, a_axis, q_axis, cells }
}

/// Tolerances used for monodromy work unless configured otherwise.
pub fn default_config() -> IntegratorConfig {
    IntegratorConfig::adaptive(1e-12, 1e-14)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PotentialField;
    use std::f64::consts::TAU;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Distance between exponents modulo the `2π/T` branch shift.
    fn exponent_gap(mu: Complex64, target: f64, period: f64) -> f64 {
        let shift = TAU / period;
        let d = (mu.re - target) / shift;
        ((d - d.round()) * shift).abs().max(mu.im.abs())
    }

    fn assert_structure(m: &MonodromyResult) {
        assert!((m.determinant() - 1.0).abs() <= 1e-9, "det {}", m.determinant());
        assert!(m.reciprocity_error() <= 1e-8, "pairing {}", m.reciprocity_error());
    }

    #[test]
    fn full_period_of_the_unit_oscillator_is_identity() {
        let sys = SystemSpec::oscillator(ModulationProfile::constant(1.0).unwrap()).unwrap();
        let m = monodromy(&sys, TAU, &default_config()).unwrap();
        assert!((&m.matrix - DMatrix::identity(2, 2)).amax() < 1e-9);
        for l in &m.eigenvalues {
            assert!((l - 1.0).norm() < 1e-6);
        }
        assert_eq!(m.classification, Stability::Marginal);
        assert_structure(&m);
    }

    #[test]
    fn zero_b_reduces_to_constant_frequency() {
        let sys = SystemSpec::oscillator(ModulationProfile::cosine_squared(4.0, 0.0, 2.0).unwrap()).unwrap();
        let m = monodromy(&sys, PI, &default_config()).unwrap();
        for l in &m.eigenvalues {
            assert!((l - 1.0).norm() < 1e-6);
        }

        let sys = SystemSpec::oscillator(ModulationProfile::cosine_squared(2.25, 0.0, 1.0).unwrap()).unwrap();
        let m = monodromy(&sys, TAU, &default_config()).unwrap();
        assert_structure(&m);
        for mu in &m.exponents {
            let gap = exponent_gap(*mu, 1.5, TAU).min(exponent_gap(*mu, -1.5, TAU));
            assert!(gap <= 1e-8, "{mu}");
        }
        assert_ne!(m.classification, Stability::Unstable);
    }

    #[test]
    fn exponent_examples() {
        let mu = exponents(&[c(0.0, 1.0), c(0.0, -1.0)], PI).unwrap();
        assert!((mu[0] - 0.5).norm() < 1e-15 && (mu[1] + 0.5).norm() < 1e-15);
        let mu = exponents(&[c(-1.0, 0.0), c(-1.0, 0.0)], PI).unwrap();
        assert!((mu[0].re.abs() - 1.0).abs() < 1e-15);
        assert_eq!(classify(&[c(-1.0, 0.0), c(-1.0, 0.0)]), Stability::Marginal);
        assert_eq!(classify(&[c(0.0, 1.0), c(0.0, -1.0)]), Stability::BoundedOscillatory);
        assert_eq!(classify(&[c(2.0, 0.0), c(0.5, 0.0)]), Stability::Unstable);
        assert!(matches!(exponents(&[c(0.0, 0.0)], 1.0), Err(FloquetError::ZeroEigenvalue)));
    }

    #[test]
    fn mathieu_kapitza_structure() {
        let sys = SystemSpec::kapitza(ModulationProfile::sqrt_cosine(2.0, 0.05).unwrap()).unwrap();
        let m = monodromy(&sys, PI, &default_config()).unwrap();
        assert_eq!(m.matrix.shape(), (4, 4));
        assert_structure(&m);
        assert_eq!(m.classification, Stability::Unstable);
    }

    #[test]
    fn constant_kapitza_matches_characteristic_roots() {
        for w0 in [0.5, 1.0, 2.0] {
            let sys = SystemSpec::kapitza(ModulationProfile::constant(w0).unwrap()).unwrap();
            let m = monodromy(&sys, PI, &default_config()).unwrap();
            assert_structure(&m);
            let k = w0 * w0;
            let expected = kapitza_characteristic_roots(k, k).iter().map(|r| (r * PI).exp().norm()).fold(0.0, f64::max);
            assert!(m.max_modulus() > 1.0);
            assert!((m.max_modulus() - expected).abs() <= 1e-6 * expected.max(1.0), "{} vs {expected}", m.max_modulus());
        }
    }

    #[test]
    fn characteristic_roots_of_equal_coefficients() {
        // Re √(-1 + i) = 2^{1/4} cos(3π/8)
        let growth = 2f64.powf(0.25) * (3.0 * PI / 8.0).cos();
        let roots = kapitza_characteristic_roots(1.0, 1.0);
        let best = roots.iter().map(|r| r.re).fold(f64::MIN, f64::max);
        assert!((best - growth).abs() < 1e-15);
        for r in roots {
            let l2 = r * r;
            assert!(((l2 + 1.0) * (l2 + 1.0) + 1.0).norm() < 1e-14);
        }
    }

    #[test]
    fn two_periods_compose() {
        let sys = SystemSpec::kapitza(ModulationProfile::sqrt_cosine(1.0, 0.2).unwrap()).unwrap();
        let cfg = default_config();
        let m = monodromy(&sys, PI, &cfg).unwrap();
        let m2 = monodromy(&sys, TAU, &cfg).unwrap();
        let err = (&m.matrix * &m.matrix - &m2.matrix).amax();
        assert!(err <= 1e-7 * m2.matrix.amax().max(1.0), "{err:e}");

        let osc = SystemSpec::oscillator(ModulationProfile::sqrt_cosine(1.3, 0.4).unwrap()).unwrap();
        let m = monodromy(&osc, PI, &cfg).unwrap();
        let m2 = monodromy(&osc, TAU, &cfg).unwrap();
        assert!((&m.matrix * &m.matrix - &m2.matrix).amax() <= 1e-7);
    }

    #[test]
    fn preconditions() {
        let nl = SystemSpec::monkey(ModulationProfile::constant(1.0).unwrap()).unwrap();
        assert!(matches!(monodromy(&nl, PI, &default_config()), Err(FloquetError::Nonlinear(_))));
        let sys = SystemSpec::oscillator(ModulationProfile::sqrt_cosine(1.0, 0.1).unwrap()).unwrap();
        assert!(matches!(monodromy(&sys, 1.0, &default_config()), Err(FloquetError::NotPeriodic(_))));
        assert!(PotentialField::SimpleSaddlePair.is_linear());
    }

    #[test]
    fn modulated_mathieu_rotates_by_the_phase_over_a_period() {
        // In Sundman time the modulated oscillator is a unit rotation,
        // so the eigenvalues are e^{±iΦ(T)}.
        let profile = ModulationProfile::sqrt_cosine(1.2, 0.3).unwrap();
        let m = monodromy(&SystemSpec::oscillator(profile).unwrap(), PI, &default_config()).unwrap();
        let phi = profile.phase(PI);
        for l in &m.eigenvalues {
            assert!((l.norm() - 1.0).abs() < 1e-9);
            let gap = (l.arg().abs() - Complex64::from_polar(1.0, phi).arg().abs()).abs();
            assert!(gap < 1e-9, "{l} vs Φ = {phi}");
        }
    }

    #[test]
    fn sweep_q_zero_column_is_never_unstable() {
        let grid = stability_sweep(
            Family::ModulatedMathieu,
            Axis::new("a", 0.25, 4.0, 8),
            Axis::new("q", 0.0, 0.0, 1),
            &default_config(),
        );
        assert_eq!(grid.cells.len(), 8);
        for cell in &grid.cells {
            assert!(matches!(cell.class, CellClass::BoundedOscillatory | CellClass::Marginal), "{cell:?}");
        }
    }

    #[test]
    fn sweep_marks_out_of_domain_cells() {
        let grid = stability_sweep(
            Family::MathieuKapitza,
            Axis::new("a", 0.1, 1.0, 3),
            Axis::new("q", 0.0, 0.3, 4),
            &default_config(),
        );
        assert_eq!(grid.cells.len(), 12);
        for cell in &grid.cells {
            if cell.a <= 2.0 * cell.q.abs() {
                assert_eq!(cell.class, CellClass::OutOfDomain);
            } else {
                assert_eq!(cell.class, CellClass::Unstable, "{cell:?}");
            }
        }
        assert_eq!(grid.cell(2, 3).a, 1.0);
        assert_eq!(grid.cell(2, 3).q, 0.3);
    }

    #[test]
    fn standard_mathieu_tongue_opens_near_a_equal_one() {
        let cfg = default_config();
        let grid = stability_sweep(
            Family::StandardMathieu,
            Axis::new("a", 1.0, 1.0, 1),
            Axis::new("q", 0.0, 0.4, 5),
            &cfg,
        );
        let classes: Vec<_> = grid.cells.iter().map(|c| c.class).collect();
        assert_eq!(classes[0], CellClass::Marginal);
        assert!(classes[1..].iter().all(|c| *c == CellClass::Unstable), "{classes:?}");
        let growth: Vec<f64> = grid.cells[1..].iter().map(|c| c.max_modulus.unwrap()).collect();
        assert!(growth.windows(2).all(|w| w[1] > w[0]));
        // away from resonance, small q stays bounded
        let m = standard_mathieu_monodromy(2.0, 0.1, &cfg).unwrap();
        assert_eq!(m.classification, Stability::BoundedOscillatory);
        assert_structure(&m);
    }
}
