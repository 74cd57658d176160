//! First integrals of the catalog, drift monitoring and numeric Poisson brackets.

use serde::Serialize;

use crate::models::{ModelError, ModulationProfile, PhaseState, PotentialField, SystemSpec};
use crate::ode::{State, Trajectory};

/// Denominator floor for relative drift, so `I₀ ≈ 0` does not blow up.
pub const RELATIVE_FLOOR: f64 = 1e-12;

/// `½Σσᵢ(ẋᵢ/ω)² + U(q)`; equals the frozen Hamiltonian at the matched phase state.
pub fn generic_integral(sys: &SystemSpec, s: &State) -> Result<f64, ModelError> {
    let w = sys.profile().omega_eval(s.t)?.omega;
    Ok(generic_at(sys, s, w))
}

fn generic_at(sys: &SystemSpec, s: &State, omega: f64) -> f64 {
    let kinetic: f64 = s
        .v
        .iter()
        .zip(sys.signature().as_slice())
        .map(|(v, sg)| {
            let u = v / omega;
            0.5 * sg * u * u
        })
        .sum();
    kinetic + sys.potential().value(&s.q)
}

/// `(½(u² - w²) + g + gʳ, uw + gʳ - g)` with `u = ẋ/ω`, `w = ẏ/ω`.
fn saddle_integrals(g: f64, gr: f64, u: f64, w: f64) -> (f64, f64) {
    (0.5 * (u * u - w * w) + g + gr, u * w + gr - g)
}

fn pair_integrals(potential: PotentialField, s: &State, omega: f64) -> (f64, f64) {
    let (g, gr) = potential.saddle_parts(&s.q).expect("saddle potential");
    saddle_integrals(g, gr, s.v[0] / omega, s.v[1] / omega)
}

/// `(I₁, I₂)` of the parametric Kapitza system (also the Mathieu–Kapitza pair).
pub fn kapitza_integrals(s: &State, omega: f64) -> (f64, f64) {
    pair_integrals(PotentialField::SimpleSaddlePair, s, omega)
}

/// `(I₁, I₂)` of the monkey-saddle Kapitza system.
pub fn monkey_integrals(s: &State, omega: f64) -> (f64, f64) {
    pair_integrals(PotentialField::MonkeySaddlePair, s, omega)
}

/// `(Ĩ₁, Ĩ₂)` of a saddle pair in canonical coordinates (`σ = (+1, -1)`),
/// i.e. the integrals with `ẋ/ω = pₓ`, `ẏ/ω = -p_y`.
pub fn saddle_phase_integrals(potential: PotentialField, ps: &PhaseState) -> Option<(f64, f64)> {
    let (g, gr) = potential.saddle_parts(&ps.q)?;
    Some(saddle_integrals(g, gr, ps.p[0], -ps.p[1]))
}

pub type Evaluator = Box<dyn Fn(&State, f64) -> f64 + Send + Sync>;

/// Named first integrals, each a function of `(state, ω(t))`.
pub struct InvariantSet {
    labels: Vec<String>,
    evaluators: Vec<Evaluator>,
}

impl std::fmt::Debug for InvariantSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InvariantSet").field("labels", &self.labels).finish_non_exhaustive()
    }
}

impl InvariantSet {
    pub fn empty() -> Self {
        Self { labels: Vec::new(), evaluators: Vec::new() }
    }

    pub fn with(mut self, label: impl Into<String>, f: impl Fn(&State, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.labels.push(label.into());
        self.evaluators.push(Box::new(f));
        self
    }

    /// The listed integrals of a system: `I1, I2` for the saddle pairs, the
    /// generic integral `I` otherwise.
    pub fn for_system(sys: &SystemSpec) -> Self {
        match *sys.potential() {
            PotentialField::SimpleSaddlePair => {
                Self::empty().with("I1", |s, w| kapitza_integrals(s, w).0).with("I2", |s, w| kapitza_integrals(s, w).1)
            }
            PotentialField::MonkeySaddlePair => {
                Self::empty().with("I1", |s, w| monkey_integrals(s, w).0).with("I2", |s, w| monkey_integrals(s, w).1)
            }
            _ => {
                let sys = sys.clone();
                Self::empty().with("I", move |s, w| generic_at(&sys, s, w))
            }
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn eval(&self, s: &State, omega: f64) -> Vec<f64> {
        self.evaluators.iter().map(|f| f(s, omega)).collect()
    }

    /// Every invariant at every sample, row-major by sample.
    pub fn samples(&self, traj: &Trajectory, profile: &ModulationProfile) -> Vec<Vec<f64>> {
        traj.iter_states().map(|s| self.eval(&s, profile.omega(s.t))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantDrift {
    pub label: String,
    pub initial: f64,
    pub max_abs_drift: f64,
    pub max_rel_drift: f64,
    /// Sample time of the largest drift.
    pub time_of_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub samples: usize,
    pub invariants: Vec<InvariantDrift>,
}

impl InvariantReport {
    pub fn get(&self, label: &str) -> Option<&InvariantDrift> {
        self.invariants.iter().find(|d| d.label == label)
    }

    /// Largest relative drift over all invariants (0 for an empty set).
    pub fn max_rel_drift(&self) -> f64 {
        self.invariants.iter().map(|d| d.max_rel_drift).fold(0.0, f64::max)
    }
}

/// Drift of each invariant relative to its value at the first sample.
pub fn drift_report(traj: &Trajectory, set: &InvariantSet, profile: &ModulationProfile) -> InvariantReport {
    drift_from_samples(traj.times(), &set.samples(traj, profile), set.labels())
}

/// [`drift_report`] over precomputed invariant rows (e.g. read back from a file).
pub fn drift_from_samples(times: &[f64], rows: &[Vec<f64>], labels: &[String]) -> InvariantReport {
    let invariants = labels
        .iter()
        .enumerate()
        .map(|(k, label)| {
            let initial = rows.first().map_or(0.0, |r| r[k]);
            let mut worst = (0.0_f64, times.first().copied().unwrap_or(0.0));
            for (t, r) in times.iter().zip(rows) {
                let d = (r[k] - initial).abs();
                // NaN compares false; force it through so corruption is visible
                if d > worst.0 || d.is_nan() && !worst.0.is_nan() {
                    worst = (d, *t);
                }
            }
            InvariantDrift {
                label: label.clone(),
                initial,
                max_abs_drift: worst.0,
                max_rel_drift: worst.0 / initial.abs().max(RELATIVE_FLOOR),
                time_of_max: worst.1,
            }
        })
        .collect();
    InvariantReport { samples: rows.len(), invariants }
}

/// Central-difference `(∂f/∂q, ∂f/∂p)` with step `h`.
fn gradient<F: Fn(&PhaseState) -> f64>(f: &F, ps: &PhaseState, h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut y = ps.to_flat();
    let grad: Vec<f64> = (0..y.len())
        .map(|k| {
            let orig = y[k];
            y[k] = orig + h;
            let fp = f(&PhaseState::from_flat(ps.t, &y));
            y[k] = orig - h;
            let fm = f(&PhaseState::from_flat(ps.t, &y));
            y[k] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect();
    let d = ps.q.len();
    (grad[..d].to_vec(), grad[d..].to_vec())
}

fn richardson<F: Fn(&PhaseState) -> f64>(f: &F, ps: &PhaseState, h: f64) -> (Vec<f64>, Vec<f64>) {
    let (q1, p1) = gradient(f, ps, h);
    let (q2, p2) = gradient(f, ps, 0.5 * h);
    let extrapolate = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(b).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
    (extrapolate(q1, q2), extrapolate(p1, p2))
}

/// `{f, g} = Σᵢ (∂f/∂qᵢ ∂g/∂pᵢ - ∂f/∂pᵢ ∂g/∂qᵢ)` by central differences at
/// steps `h` and `h/2` combined by Richardson extrapolation.
pub fn poisson_bracket<F, G>(f: F, g: G, ps: &PhaseState, h: f64) -> f64
where
    F: Fn(&PhaseState) -> f64,
    G: Fn(&PhaseState) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let (fq, fp) = richardson(&f, ps, h);
    let (gq, gp) = richardson(&g, ps, h);
    (0..ps.q.len()).map(|i| fq[i] * gp[i] - fp[i] * gq[i]).sum()
}
