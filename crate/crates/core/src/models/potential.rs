use serde::{Deserialize, Serialize};

/// Potentials of the catalog.
///
/// The saddle pairs are sums `U = g + gʳ` of a saddle surface `g` and its
/// rotated partner `gʳ`. The same two surfaces enter the second first
/// integral as `gʳ - g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialField {
    /// `U = x²/2`
    Harmonic,
    /// `U = x²/2 + (α₁/3)x³ + (α₂/4)x⁴`
    CubicQuartic { alpha1: f64, alpha2: f64 },
    /// `g = (x² - y²)/2`, `gʳ = xy`
    SimpleSaddlePair,
    /// `g = x³/3 - xy²`, `gʳ = x²y - y³/3`
    MonkeySaddlePair,
}

impl PotentialField {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Harmonic => "harmonic",
            Self::CubicQuartic { .. } => "cubic-quartic",
            Self::SimpleSaddlePair => "simple-saddle-pair",
            Self::MonkeySaddlePair => "monkey-saddle-pair",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Harmonic | Self::CubicQuartic { .. } => 1,
            Self::SimpleSaddlePair | Self::MonkeySaddlePair => 2,
        }
    }

    /// Linear force law (quadratic potential).
    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Harmonic | Self::SimpleSaddlePair)
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::CubicQuartic { alpha1, alpha2 } => alpha1.is_finite() && alpha2.is_finite(),
            _ => true,
        }
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        match *self {
            Self::Harmonic => 0.5 * q[0] * q[0],
            Self::CubicQuartic { alpha1, alpha2 } => {
                let x = q[0];
                let x2 = x * x;
                0.5 * x2 + alpha1 / 3.0 * x2 * x + alpha2 / 4.0 * x2 * x2
            }
            Self::SimpleSaddlePair | Self::MonkeySaddlePair => {
                let (g, gr) = self.saddle_parts(q).expect("saddle potential");
                g + gr
            }
        }
    }

    /// Writes `∂U/∂qᵢ` into `out`.
    #[inline]
    pub fn gradient(&self, q: &[f64], out: &mut [f64]) {
        match *self {
            Self::Harmonic => out[0] = q[0],
            Self::CubicQuartic { alpha1, alpha2 } => {
                let x = q[0];
                out[0] = x + alpha1 * x * x + alpha2 * x * x * x;
            }
            Self::SimpleSaddlePair => {
                let (x, y) = (q[0], q[1]);
                out[0] = x + y;
                out[1] = x - y;
            }
            Self::MonkeySaddlePair => {
                let (x, y) = (q[0], q[1]);
                let d = x * x - y * y;
                out[0] = d + 2.0 * x * y;
                out[1] = d - 2.0 * x * y;
            }
        }
    }

    pub fn gradient_vec(&self, q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(q, &mut g);
        g
    }

    /// `(g, gʳ)` for the saddle pairs, `None` otherwise.
    pub fn saddle_parts(&self, q: &[f64]) -> Option<(f64, f64)> {
        match *self {
            Self::SimpleSaddlePair => {
                let (x, y) = (q[0], q[1]);
                Some((0.5 * (x * x - y * y), x * y))
            }
            Self::MonkeySaddlePair => {
                let (x, y) = (q[0], q[1]);
                Some((x * x * x / 3.0 - x * y * y, x * x * y - y * y * y / 3.0))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [PotentialField; 4] = [
        PotentialField::Harmonic,
        PotentialField::CubicQuartic { alpha1: 0.3, alpha2: -0.7 },
        PotentialField::SimpleSaddlePair,
        PotentialField::MonkeySaddlePair,
    ];

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for pot in ALL {
            for _ in 0..100 {
                let q: Vec<f64> = (0..pot.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let g = pot.gradient_vec(&q);
                for i in 0..pot.dim() {
                    let h = 1e-5;
                    let (mut qp, mut qm) = (q.clone(), q.clone());
                    qp[i] += h;
                    qm[i] -= h;
                    let fd = (pot.value(&qp) - pot.value(&qm)) / (2.0 * h);
                    let scale = g[i].abs().max(1.0);
                    assert!((fd - g[i]).abs() / scale < 1e-6, "{pot:?} at {q:?}: {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn known_values() {
        let m = PotentialField::MonkeySaddlePair;
        assert!((m.value(&[1.0, 0.0]) - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.value(&[0.0, 1.0]) + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.gradient_vec(&[1.0, 1.0]), vec![2.0, -2.0]);
        assert_eq!(PotentialField::SimpleSaddlePair.value(&[1.0, 0.0]), 0.5);
        let cq = PotentialField::CubicQuartic { alpha1: 3.0, alpha2: 4.0 };
        assert_eq!(cq.value(&[1.0]), 0.5 + 1.0 + 1.0);
    }
}
