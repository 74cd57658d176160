use serde::{Deserialize, Serialize};

use super::ModelError;

/// Forcing `F(t) = amplitude · sin(frequency · t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Sinusoid {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self { amplitude, frequency, phase }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t + self.phase).sin()
    }
}

/// Adaptive-frequency Hopf oscillator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopfParams {
    pub mu: f64,
    pub epsilon: f64,
    pub forcing: Sinusoid,
}

/// `(ẋ, ẏ, ω̇)` of the adaptive Hopf oscillator at `(x, y, ω)`.
pub fn adaptive_hopf_rhs(state: [f64; 3], params: &HopfParams, t: f64) -> Result<[f64; 3], ModelError> {
    let [x, y, omega] = state;
    let r2 = x * x + y * y;
    if r2 == 0.0 {
        return Err(ModelError::HopfOrigin { t });
    }
    let f = params.epsilon * params.forcing.eval(t);
    let growth = params.mu - r2;
    Ok([growth * x - omega * y + f, growth * y + omega * x, -f * y / r2.sqrt()])
}

/// First-order field for the integrators; writes NaN at the origin so the
/// integrator reports a non-finite derivative with its time.
pub fn hopf_field(params: HopfParams) -> impl Fn(f64, &[f64], &mut [f64]) {
    move |t, y, dy| match adaptive_hopf_rhs([y[0], y[1], y[2]], &params, t) {
        Ok(d) => dy.copy_from_slice(&d),
        Err(_) => dy.fill(f64::NAN),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unforced(mu: f64) -> HopfParams {
        HopfParams { mu, epsilon: 0.0, forcing: Sinusoid::new(1.0, 30.0, 0.0) }
    }

    #[test]
    fn unforced_substitution() {
        let d = adaptive_hopf_rhs([1.0, 0.0, 2.0], &unforced(1.0), 0.3).unwrap();
        assert_eq!(d, [0.0, 2.0, 0.0]);
    }

    #[test]
    fn limit_cycle_radius_is_stationary() {
        let mu: f64 = 2.0;
        for angle in [0.0, 0.7, 2.0, 4.0] {
            let (x, y) = (mu.sqrt() * f64::cos(angle), mu.sqrt() * f64::sin(angle));
            let d = adaptive_hopf_rhs([x, y, 5.0], &unforced(mu), 1.0).unwrap();
            // radial velocity (x ẋ + y ẏ) / r
            assert!((x * d[0] + y * d[1]).abs() < 1e-13);
            assert_eq!(d[2], 0.0);
        }
    }

    #[test]
    fn origin_is_a_domain_error() {
        assert_eq!(
            adaptive_hopf_rhs([0.0, 0.0, 1.0], &unforced(1.0), 4.5),
            Err(ModelError::HopfOrigin { t: 4.5 })
        );
    }
}
