//! Trajectory diagnostics: trapping, phase portraits, the Eisenhart closedness
//! residual and the Hopf frequency-adaptation experiment.

use serde::Serialize;
use thiserror::Error;

use crate::models::{hopf_field, ModelError, ModulationProfile, HopfParams};
use crate::ode::{integrate, uniform_grid, IntegratorConfig, NumericalFailure, OdeError, State, Trajectory};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("coordinate {index} out of range for dimension {dim}")]
    NoSuchCoordinate { index: usize, dim: usize },
    #[error("escape radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("numerical failure: {0}")]
    Numerical(NumericalFailure),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Trapped,
    Escaped,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateVerdict {
    pub index: usize,
    pub verdict: Verdict,
    /// First sample time (in time order) with `|u| > R`.
    pub escape_time: Option<f64>,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrapVerdict {
    pub coordinates: Vec<CoordinateVerdict>,
    pub overall: Verdict,
    /// Largest `|q|` reached.
    pub max_radius: f64,
    pub threshold: f64,
}

impl TrapVerdict {
    pub fn coordinate(&self, index: usize) -> Option<&CoordinateVerdict> {
        self.coordinates.iter().find(|c| c.index == index)
    }
}

/// `R = 50‖s₀‖`, floored at 1.
pub fn default_escape_radius(s0: &State) -> f64 {
    (50.0 * s0.norm()).max(1.0)
}

/// Samples with all entries finite, in increasing time order.
fn finite_samples(traj: &Trajectory) -> Vec<(f64, &[f64])> {
    let mut out: Vec<(f64, &[f64])> = traj
        .times()
        .iter()
        .zip(traj.states())
        .take_while(|(t, y)| t.is_finite() && y.iter().all(|v| v.is_finite()))
        .map(|(t, y)| (*t, y.as_slice()))
        .collect();
    if traj.len() > 1 && traj.t_end() < traj.t_start() {
        out.reverse();
    }
    out
}

/// Radius-threshold trap/escape classification of the position coordinates.
///
/// With `per_coordinate` each `|qᵢ|` is tested against `R`; otherwise the
/// Euclidean norm `‖q‖` is tested as a single coordinate (reported as index 0).
pub fn classify_trapping(traj: &Trajectory, radius: f64, per_coordinate: bool) -> Result<TrapVerdict, AnalysisError> {
    if !(radius > 0.0) {
        return Err(AnalysisError::InvalidRadius(radius));
    }
    let dim = traj.width() / 2;
    let samples = finite_samples(traj);
    let norm = |y: &[f64]| y[..dim].iter().map(|x| x * x).sum::<f64>().sqrt();
    let probes: Vec<Box<dyn Fn(&[f64]) -> f64>> = if per_coordinate {
        (0..dim).map(|i| Box::new(move |y: &[f64]| y[i].abs()) as Box<dyn Fn(&[f64]) -> f64>).collect()
    } else {
        vec![Box::new(norm)]
    };
    let coordinates: Vec<CoordinateVerdict> = probes
        .iter()
        .enumerate()
        .map(|(index, probe)| {
            let escape_time = samples.iter().find(|(_, y)| probe(y) > radius).map(|(t, _)| *t);
            let max_abs = samples.iter().map(|(_, y)| probe(y)).fold(0.0, f64::max);
            let verdict = if escape_time.is_some() { Verdict::Escaped } else { Verdict::Trapped };
            CoordinateVerdict { index, verdict, escape_time, max_abs }
        })
        .collect();
    let escaped = coordinates.iter().filter(|c| c.verdict == Verdict::Escaped).count();
    let overall = match escaped {
        0 => Verdict::Trapped,
        n if n == coordinates.len() => Verdict::Escaped,
        _ => Verdict::Mixed,
    };
    let max_radius = samples.iter().map(|(_, y)| norm(y)).fold(0.0, f64::max);
    Ok(TrapVerdict { coordinates, overall, max_radius, threshold: radius })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    pub u_min: f64,
    pub u_max: f64,
    pub du_min: f64,
    pub du_max: f64,
}

/// `(uᵢ, u̇ᵢ)` pairs of one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhasePortrait {
    pub coordinate: usize,
    pub points: Vec<(f64, f64)>,
    /// `None` for an empty portrait.
    pub bounds: Option<BoundingBox>,
}

impl PhasePortrait {
    pub fn from_points(coordinate: usize, points: Vec<(f64, f64)>) -> Self {
        let bounds = (!points.is_empty()).then(|| {
            points.iter().fold(
                BoundingBox { u_min: f64::INFINITY, u_max: f64::NEG_INFINITY, du_min: f64::INFINITY, du_max: f64::NEG_INFINITY },
                |b, &(u, du)| BoundingBox {
                    u_min: b.u_min.min(u),
                    u_max: b.u_max.max(u),
                    du_min: b.du_min.min(du),
                    du_max: b.du_max.max(du),
                },
            )
        });
        Self { coordinate, points, bounds }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Portrait of coordinate `index` at every sample, truncated at the first
/// non-finite entry.
pub fn phase_portrait(traj: &Trajectory, index: usize) -> Result<PhasePortrait, AnalysisError> {
    let dim = traj.width() / 2;
    if index >= dim {
        return Err(AnalysisError::NoSuchCoordinate { index, dim });
    }
    let points = traj
        .states()
        .iter()
        .map(|y| (y[index], y[dim + index]))
        .take_while(|(u, du)| u.is_finite() && du.is_finite())
        .collect();
    Ok(PhasePortrait::from_points(index, points))
}

/// Max of `|d/dt(m ẏ) + m ω² y|` over interior samples of the first
/// coordinate, by the second-order stencil
/// `[m₊(y₊ - y)/h₊ - m₋(y - y₋)/h₋] / h̄ + m ω² y` with `m` at half steps.
pub fn eisenhart_residual<M>(m: M, profile: &ModulationProfile, y_traj: &Trajectory) -> Result<f64, AnalysisError>
where
    M: Fn(f64) -> f64,
{
    eisenhart_residual_with(|y| y, m, profile, y_traj)
}

/// [`eisenhart_residual`] of `F(y)`: `d/dt(m Ḟ) + m ω² F`.
pub fn eisenhart_residual_with<F, M>(f: F, m: M, profile: &ModulationProfile, y_traj: &Trajectory) -> Result<f64, AnalysisError>
where
    F: Fn(f64) -> f64,
    M: Fn(f64) -> f64,
{
    let n = y_traj.len();
    if n < 3 {
        return Err(AnalysisError::TooFewSamples(n));
    }
    let t = y_traj.times();
    let u: Vec<f64> = y_traj.states().iter().map(|s| f(s[0])).collect();
    let mut worst: f64 = 0.0;
    for k in 1..n - 1 {
        let (hp, hm) = (t[k + 1] - t[k], t[k] - t[k - 1]);
        let flux_p = m(t[k] + 0.5 * hp) * (u[k + 1] - u[k]) / hp;
        let flux_m = m(t[k] - 0.5 * hm) * (u[k] - u[k - 1]) / hm;
        let w = profile.omega(t[k]);
        let r = (flux_p - flux_m) / (0.5 * (hp + hm)) + m(t[k]) * w * w * u[k];
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopfOutcome {
    pub times: Vec<f64>,
    pub omega: Vec<f64>,
    pub final_omega: f64,
    /// Mean of `ω` over the last 10% of the horizon.
    pub terminal_mean: f64,
}

/// Integrates the adaptive Hopf oscillator from `(x₀, y₀, ω₀)` over
/// `[0, horizon]`, reporting `ω` at `samples` evenly spaced times.
pub fn hopf_adaptation_experiment(
    params: HopfParams,
    start: [f64; 2],
    omega0: f64,
    horizon: f64,
    samples: usize,
    cfg: &IntegratorConfig,
) -> Result<HopfOutcome, AnalysisError> {
    if start == [0.0, 0.0] {
        return Err(ModelError::HopfOrigin { t: 0.0 }.into());
    }
    let cfg = cfg.clone().with_dense(true);
    let traj = integrate(hopf_field(params), 0.0, &[start[0], start[1], omega0], horizon, &cfg)?;
    if let Some(f) = traj.failure() {
        return Err(AnalysisError::Numerical(*f));
    }
    let times = uniform_grid(0.0, horizon, samples.max(2));
    let omega = times.iter().map(|&t| traj.interpolate(t).map(|y| y[2])).collect::<Result<Vec<_>, _>>()?;
    // a dense window resolving the forcing period
    let window = uniform_grid(0.9 * horizon, horizon, 20_001);
    let tail: Vec<f64> = window.iter().map(|&t| traj.interpolate(t).map(|y| y[2])).collect::<Result<_, _>>()?;
    let terminal_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok(HopfOutcome { final_omega: traj.states().last().expect("non-empty")[2], times, omega, terminal_mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Sinusoid, SystemSpec};

    fn harmonic(amplitude: f64, t_end: f64) -> Trajectory {
        let sys = SystemSpec::oscillator(ModulationProfile::constant(1.0).unwrap()).unwrap();
        integrate(sys.newtonian_field(), 0.0, &[amplitude, 0.0], t_end, &IntegratorConfig::default()).unwrap()
    }

    fn kapitza_escape() -> Trajectory {
        let w0 = 1.0;
        let sys = SystemSpec::kapitza(ModulationProfile::constant(w0).unwrap()).unwrap();
        integrate(sys.newtonian_field(), 0.0, &[0.0, 0.0, 0.1 * w0, 0.1 * w0], 30.0, &IntegratorConfig::default()).unwrap()
    }

    #[test]
    fn harmonic_is_trapped() {
        let v = classify_trapping(&harmonic(1.0, 20.0), 10.0, true).unwrap();
        assert_eq!(v.overall, Verdict::Trapped);
        assert!(v.coordinates[0].escape_time.is_none());
        assert!((v.max_radius - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_kapitza_escapes_in_both_coordinates() {
        let v = classify_trapping(&kapitza_escape(), 10.0, true).unwrap();
        assert_eq!(v.overall, Verdict::Escaped);
        assert!(v.coordinates.iter().all(|c| c.verdict == Verdict::Escaped && c.escape_time.is_some()));
        let norm = classify_trapping(&kapitza_escape(), 10.0, false).unwrap();
        assert_eq!(norm.coordinates.len(), 1);
        assert_eq!(norm.overall, Verdict::Escaped);
    }

    #[test]
    fn mixed_requires_one_of_each() {
        // x bounded, y linear drift
        let times = uniform_grid(0.0, 10.0, 101);
        let states = times.iter().map(|&t| vec![t.sin(), t, t.cos(), 1.0]).collect();
        let v = classify_trapping(&Trajectory::from_samples(times, states), 5.0, true).unwrap();
        assert_eq!(v.overall, Verdict::Mixed);
        assert_eq!(v.coordinate(0).unwrap().verdict, Verdict::Trapped);
        let y = v.coordinate(1).unwrap();
        assert_eq!(y.verdict, Verdict::Escaped);
        assert!((y.escape_time.unwrap() - 5.1).abs() < 1e-12);
    }

    #[test]
    fn enlarging_the_radius_never_creates_escapes() {
        let traj = kapitza_escape();
        let mut last = classify_trapping(&traj, 0.5, true).unwrap();
        for r in [1.0, 5.0, 50.0, 1e3, 1e6, 1e12] {
            let v = classify_trapping(&traj, r, true).unwrap();
            for (a, b) in last.coordinates.iter().zip(&v.coordinates) {
                assert!(!(a.verdict == Verdict::Trapped && b.verdict == Verdict::Escaped));
            }
            last = v;
        }
    }

    #[test]
    fn escape_is_not_a_single_sample_glitch() {
        let traj = kapitza_escape().resample_uniform(2000).unwrap();
        let r = 10.0;
        let v = classify_trapping(&traj, r, true).unwrap();
        for c in &v.coordinates {
            let t = c.escape_time.unwrap();
            let k = traj.times().iter().position(|&s| s == t).unwrap();
            assert!(traj.states()[k][c.index].abs() >= r);
            assert!(traj.states()[k + 1][c.index].abs() >= r);
        }
    }

    #[test]
    fn rejects_bad_radius() {
        assert!(matches!(classify_trapping(&harmonic(1.0, 1.0), 0.0, true), Err(AnalysisError::InvalidRadius(_))));
    }

    #[test]
    fn portrait_of_unit_circle() {
        let p = phase_portrait(&harmonic(1.0, 10.0), 0).unwrap();
        assert!(!p.is_empty());
        for (u, du) in &p.points {
            assert!((u * u + du * du - 1.0).abs() < 1e-8);
        }
        let b = p.bounds.unwrap();
        assert!(b.u_max <= 1.0 + 1e-9 && b.u_min >= -1.0 - 1e-9);
        assert!(matches!(phase_portrait(&harmonic(1.0, 1.0), 1), Err(AnalysisError::NoSuchCoordinate { .. })));
    }

    #[test]
    fn portrait_truncates_at_non_finite() {
        let times = vec![0.0, 1.0, 2.0];
        let states = vec![vec![1.0, 0.0], vec![f64::NAN, 0.0], vec![1.0, 1.0]];
        let p = phase_portrait(&Trajectory::from_samples(times, states), 0).unwrap();
        assert_eq!(p.points, vec![(1.0, 0.0)]);
        let empty = PhasePortrait::from_points(0, Vec::new());
        assert!(empty.bounds.is_none());
    }

    #[test]
    fn portrait_is_stable_under_denser_resampling() {
        let traj = harmonic(1.0, 10.0);
        let coarse = phase_portrait(&traj.resample_uniform(101).unwrap(), 0).unwrap();
        let fine = phase_portrait(&traj.resample_uniform(201).unwrap(), 0).unwrap();
        for (k, p) in coarse.points.iter().enumerate() {
            let q = fine.points[2 * k];
            assert!((p.0 - q.0).abs() <= 1e-7 && (p.1 - q.1).abs() <= 1e-7);
        }
    }

    fn cosine_samples(h: f64) -> Trajectory {
        let n = (10.0 / h).round() as usize + 1;
        let times = uniform_grid(0.0, 10.0, n);
        let states = times.iter().map(|t| vec![t.cos(), -t.sin()]).collect();
        Trajectory::from_samples(times, states)
    }

    #[test]
    fn eisenhart_residual_is_second_order() {
        let unit = ModulationProfile::constant(1.0).unwrap();
        let r: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&h| eisenhart_residual(|_| 1.0, &unit, &cosine_samples(h)).unwrap())
            .collect();
        for w in r.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn eisenhart_needs_three_samples() {
        let t = Trajectory::from_samples(vec![0.0, 1.0], vec![vec![0.0, 0.0]; 2]);
        let unit = ModulationProfile::constant(1.0).unwrap();
        assert!(matches!(eisenhart_residual(|_| 1.0, &unit, &t), Err(AnalysisError::TooFewSamples(2))));
    }

    #[test]
    fn eisenhart_modulated_oscillator() {
        let profile = ModulationProfile::cosine_squared(2.0, 1.0, 1.0).unwrap();
        let sys = SystemSpec::oscillator(profile).unwrap();
        let traj = integrate(sys.newtonian_field(), 0.0, &[1.0, 0.0], 10.0, &IntegratorConfig::rk4(1e-3)).unwrap();
        let r = eisenhart_residual(|t| 1.0 / profile.omega(t), &profile, &traj).unwrap();
        assert!(r <= 1e-6, "{r:e}");
    }

    #[test]
    fn eisenhart_generalized_cubic() {
        // G = F(y) solves the linear equation; y = ∛G.
        let profile = ModulationProfile::cosine_squared(2.0, 1.0, 1.0).unwrap();
        let sys = SystemSpec::oscillator(profile).unwrap();
        let g = integrate(sys.newtonian_field(), 0.0, &[0.8, 0.3], 10.0, &IntegratorConfig::rk4(1e-3)).unwrap();
        let y = Trajectory::from_samples(g.times().to_vec(), g.states().iter().map(|s| vec![s[0].cbrt(), 0.0]).collect());
        let r = eisenhart_residual_with(|y| y.powi(3), |t| 1.0 / profile.omega(t), &profile, &y).unwrap();
        assert!(r <= 1e-6, "{r:e}");
    }

    fn quiet_hopf(epsilon: f64, amplitude: f64) -> HopfParams {
        HopfParams { mu: 1.0, epsilon, forcing: Sinusoid::new(amplitude, 30.0, 0.0) }
    }

    #[test]
    fn hopf_without_forcing_keeps_omega() {
        let cfg = IntegratorConfig::adaptive(1e-9, 1e-11);
        for p in [quiet_hopf(0.0, 1.0), quiet_hopf(0.9, 0.0)] {
            let out = hopf_adaptation_experiment(p, [1.0, 0.0], 25.0, 20.0, 50, &cfg).unwrap();
            assert!(out.omega.iter().all(|&w| w == 25.0));
            assert_eq!(out.terminal_mean, 25.0);
        }
    }

    #[test]
    fn hopf_origin_is_rejected() {
        let cfg = IntegratorConfig::default();
        let r = hopf_adaptation_experiment(quiet_hopf(0.9, 1.0), [0.0, 0.0], 25.0, 10.0, 10, &cfg);
        assert!(matches!(r, Err(AnalysisError::Model(ModelError::HopfOrigin { .. }))));
    }
}
