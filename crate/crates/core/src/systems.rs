//! Retarded plants `ẋ(t) = f(x_t, u(t-d))`, `y(t) = h(x(t-τ))` and the
//! benchmark systems shipped with the crate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dde::{BlockId, Stage};
use crate::history::norm;
use crate::observer::ObserverFunctional;

/// Tolerance for the `f(0,0) = 0`, `h(0) = 0`, `α(0) = 0` construction checks.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("delay `{name}` must be nonnegative and finite, got {value}")]
    BadDelay { name: &'static str, value: f64 },
    #[error("{what} does not vanish at the origin (norm {norm:e})")]
    NotAtEquilibrium { what: &'static str, norm: f64 },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("Lipschitz constant `{name}` must be finite and nonnegative, got {value}")]
    BadLipschitz { name: &'static str, value: f64 },
}

/// Read access to a state history segment: `at(lag)` is `x(t - lag)`.
pub trait Segment {
    fn at(&self, lag: f64) -> Vec<f64>;
}

/// A segment that is the same vector at every lag.
pub struct ConstantSegment<'a>(pub &'a [f64]);

impl Segment for ConstantSegment<'_> {
    fn at(&self, _lag: f64) -> Vec<f64> {
        self.0.to_vec()
    }
}

/// Segment view of one block of a running coupled system.
pub struct BlockSegment<'a, 's> {
    pub stage: &'a Stage<'s>,
    pub block: BlockId,
}

impl Segment for BlockSegment<'_, '_> {
    fn at(&self, lag: f64) -> Vec<f64> {
        self.stage.delayed(self.block, lag)
    }
}

pub type Dynamics = Arc<dyn Fn(&dyn Segment, &[f64]) -> Vec<f64> + Send + Sync>;
pub type OutputMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Declared structural hypotheses. They gate which chain builders accept a plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    /// Globally Lipschitz in state and input.
    Glc,
    /// A GLC feedback makes the delay-free loop globally exponentially stable.
    GesStabilizable,
    /// A global exponential observer exists for the undelayed output.
    ExpObserver,
    /// Globally Lipschitz in state, uniformly in the input.
    GlcInState,
    /// A locally Lipschitz feedback makes the loop ISS w.r.t. measurement error.
    IssStabilizable,
    /// An asymptotic observer exists for the undelayed output.
    AsymptoticObserver,
}

/// Which arguments the declared `L_f` covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LipschitzScope {
    /// `‖f(φ,u) - f(φ̄,v)‖ ≤ L_f (‖φ-φ̄‖_c + ‖u-v‖)`
    StateAndInput,
    /// `‖f(φ,u) - f(φ̄,u)‖ ≤ L_f ‖φ-φ̄‖_c`
    StateOnly,
}

/// State, input and output delays in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Delays {
    pub state: f64,
    pub input: f64,
    pub output: f64,
}

impl Delays {
    fn validate(&self) -> Result<(), SystemError> {
        for (name, value) in [
            ("state_delay", self.state),
            ("input_delay", self.input),
            ("output_delay", self.output),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(SystemError::BadDelay { name, value });
            }
        }
        Ok(())
    }
}

/// A nonlinear retarded plant with input and output delays.
#[derive(Clone)]
pub struct RetardedPlant {
    name: String,
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    dynamics: Dynamics,
    output: OutputMap,
    lipschitz_f: f64,
    lipschitz_h: f64,
    scope: LipschitzScope,
    delays: Delays,
    tags: BTreeSet<Assumption>,
    params: BTreeMap<String, f64>,
}

impl fmt::Debug for RetardedPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RetardedPlant")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("lipschitz_f", &self.lipschitz_f)
            .field("lipschitz_h", &self.lipschitz_h)
            .field("delays", &self.delays)
            .field("tags", &self.tags)
            .finish()
    }
}

/// Everything needed to construct a [`RetardedPlant`].
pub struct PlantDefinition {
    pub name: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub dynamics: Dynamics,
    pub output: OutputMap,
    pub lipschitz_f: f64,
    pub lipschitz_h: f64,
    pub scope: LipschitzScope,
    pub delays: Delays,
    pub tags: BTreeSet<Assumption>,
    pub params: BTreeMap<String, f64>,
}

impl RetardedPlant {
    /// Validates dimensions, delays, constants and the equilibrium at the origin.
    pub fn new(def: PlantDefinition) -> Result<Self, SystemError> {
        for (name, value) in [("state_dim", def.state_dim), ("input_dim", def.input_dim), ("output_dim", def.output_dim)] {
            if value == 0 {
                return Err(SystemError::NonPositive { name, value: 0.0 });
            }
        }
        def.delays.validate()?;
        for (name, value) in [("lipschitz_f", def.lipschitz_f), ("lipschitz_h", def.lipschitz_h)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(SystemError::BadLipschitz { name, value });
            }
        }
        let zero_x = vec![0.0; def.state_dim];
        let zero_u = vec![0.0; def.input_dim];
        let f0 = (def.dynamics)(&ConstantSegment(&zero_x), &zero_u);
        if f0.len() != def.state_dim {
            return Err(SystemError::Dimension {
                what: format!("dynamics of `{}`", def.name),
                expected: def.state_dim,
                got: f0.len(),
            });
        }
        if norm(&f0) >= EQUILIBRIUM_TOL {
            return Err(SystemError::NotAtEquilibrium {
                what: "f(0, 0)",
                norm: norm(&f0),
            });
        }
        let h0 = (def.output)(&zero_x);
        if h0.len() != def.output_dim {
            return Err(SystemError::Dimension {
                what: format!("output map of `{}`", def.name),
                expected: def.output_dim,
                got: h0.len(),
            });
        }
        if norm(&h0) >= EQUILIBRIUM_TOL {
            return Err(SystemError::NotAtEquilibrium {
                what: "h(0)",
                norm: norm(&h0),
            });
        }
        Ok(Self {
            name: def.name,
            state_dim: def.state_dim,
            input_dim: def.input_dim,
            output_dim: def.output_dim,
            dynamics: def.dynamics,
            output: def.output,
            lipschitz_f: def.lipschitz_f,
            lipschitz_h: def.lipschitz_h,
            scope: def.scope,
            delays: def.delays,
            tags: def.tags,
            params: def.params,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
    pub fn lipschitz_f(&self) -> f64 {
        self.lipschitz_f
    }
    pub fn lipschitz_h(&self) -> f64 {
        self.lipschitz_h
    }
    pub fn lipschitz_scope(&self) -> LipschitzScope {
        self.scope
    }
    pub fn delays(&self) -> Delays {
        self.delays
    }
    pub fn tags(&self) -> &BTreeSet<Assumption> {
        &self.tags
    }
    pub fn has(&self, tag: Assumption) -> bool {
        self.tags.contains(&tag)
    }
    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// `f(x_t, u)`.
    pub fn dynamics(&self, history: &dyn Segment, u: &[f64]) -> Vec<f64> {
        (self.dynamics)(history, u)
    }

    /// `h(x)`.
    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        (self.output)(x)
    }

    pub fn dynamics_fn(&self) -> Dynamics {
        Arc::clone(&self.dynamics)
    }

    pub fn output_fn(&self) -> OutputMap {
        Arc::clone(&self.output)
    }

    /// Same plant with a different declared `L_f`.
    pub fn with_lipschitz_f(mut self, value: f64) -> Result<Self, SystemError> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(SystemError::BadLipschitz {
                name: "lipschitz_f",
                value,
            });
        }
        self.lipschitz_f = value;
        Ok(self)
    }

    /// Same plant with different delays.
    pub fn with_delays(mut self, delays: Delays) -> Result<Self, SystemError> {
        delays.validate()?;
        self.delays = delays;
        Ok(self)
    }
}

/// Static state feedback `u = α(x)` with `α(0) = 0`.
#[derive(Clone)]
pub struct FeedbackLaw {
    state_dim: usize,
    input_dim: usize,
    description: String,
    alpha: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl fmt::Debug for FeedbackLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeedbackLaw")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("description", &self.description)
            .finish()
    }
}

impl FeedbackLaw {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        description: impl Into<String>,
        alpha: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self, SystemError> {
        let a0 = alpha(&vec![0.0; state_dim]);
        if a0.len() != input_dim {
            return Err(SystemError::Dimension {
                what: "feedback output".into(),
                expected: input_dim,
                got: a0.len(),
            });
        }
        if norm(&a0) >= EQUILIBRIUM_TOL {
            return Err(SystemError::NotAtEquilibrium {
                what: "α(0)",
                norm: norm(&a0),
            });
        }
        Ok(Self {
            state_dim,
            input_dim,
            description: description.into(),
            alpha: Arc::new(alpha),
        })
    }

    /// `u = K x` with `K` given row by row (one row per input).
    pub fn linear(gain: Vec<Vec<f64>>) -> Result<Self, SystemError> {
        let input_dim = gain.len();
        let state_dim = gain.first().map_or(0, Vec::len);
        if input_dim == 0 || state_dim == 0 {
            return Err(SystemError::Dimension {
                what: "feedback gain".into(),
                expected: 1,
                got: 0,
            });
        }
        if let Some(bad) = gain.iter().find(|r| r.len() != state_dim) {
            return Err(SystemError::Dimension {
                what: "feedback gain row".into(),
                expected: state_dim,
                got: bad.len(),
            });
        }
        let description = format!("u = K x, K = {gain:?}");
        Self::new(state_dim, input_dim, description, move |x| {
            gain.iter()
                .map(|row| row.iter().zip(x).map(|(k, xi)| k * xi).sum())
                .collect()
        })
    }

    /// `u ≡ 0`.
    pub fn zero(state_dim: usize, input_dim: usize) -> Self {
        Self {
            state_dim,
            input_dim,
            description: "u = 0".into(),
            alpha: Arc::new(move |_| vec![0.0; input_dim]),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.alpha)(x)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

/// Physical parameters of the delayed pendulum
/// `J θ̈(t) + ζ θ̇(t-δ) - M g l sin θ(t) = u(t-d)`, `J = M l²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub state_delay: f64,
    pub input_delay: f64,
    #[serde(default)]
    pub output_delay: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 0.1,
            length: 10.0,
            gravity: 9.8,
            damping: 0.5,
            state_delay: 1.0,
            input_delay: 2.0,
            output_delay: 0.0,
        }
    }
}

/// Coefficients of the pendulum's second state equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumCoefficients {
    /// `1/(M l²)`
    pub input: f64,
    /// `ζ/(M l²)`
    pub damping: f64,
    /// `g/l`
    pub gravity: f64,
}

impl PendulumParams {
    pub fn coefficients(&self) -> PendulumCoefficients {
        let inertia = self.mass * self.length * self.length;
        PendulumCoefficients {
            input: 1.0 / inertia,
            damping: self.damping / inertia,
            gravity: self.gravity / self.length,
        }
    }
}

/// Declared `L_f` of the pendulum.
pub const PENDULUM_LIPSCHITZ_F: f64 = 1.0;

/// The delayed pendulum in state-space form with `y = x_1(t-τ)`:
///
/// ```text
/// ẋ_1(t) = x_2(t)
/// ẋ_2(t) = u(t-d)/(M l²) - ζ x_2(t-δ)/(M l²) + (g/l) sin x_1(t)
/// ```
pub fn make_pendulum(p: &PendulumParams) -> Result<RetardedPlant, SystemError> {
    if !(p.mass > 0.0) {
        return Err(SystemError::NonPositive {
            name: "mass",
            value: p.mass,
        });
    }
    if !(p.length > 0.0) {
        return Err(SystemError::NonPositive {
            name: "length",
            value: p.length,
        });
    }
    let c = p.coefficients();
    let delta = p.state_delay;
    let dynamics: Dynamics = Arc::new(move |x: &dyn Segment, u: &[f64]| {
        let now = x.at(0.0);
        let past = if delta == 0.0 { now.clone() } else { x.at(delta) };
        vec![
            now[1],
            c.input * u[0] - c.damping * past[1] + c.gravity * now[0].sin(),
        ]
    });
    let params = BTreeMap::from([
        ("mass".to_string(), p.mass),
        ("length".to_string(), p.length),
        ("gravity".to_string(), p.gravity),
        ("damping".to_string(), p.damping),
    ]);
    RetardedPlant::new(PlantDefinition {
        name: "pendulum".into(),
        state_dim: 2,
        input_dim: 1,
        output_dim: 1,
        dynamics,
        output: Arc::new(|x: &[f64]| vec![x[0]]),
        lipschitz_f: PENDULUM_LIPSCHITZ_F,
        lipschitz_h: 1.0,
        scope: LipschitzScope::StateAndInput,
        delays: Delays {
            state: p.state_delay,
            input: p.input_delay,
            output: p.output_delay,
        },
        tags: BTreeSet::from([
            Assumption::Glc,
            Assumption::GesStabilizable,
            Assumption::ExpObserver,
        ]),
        params,
    })
}

/// `u = -25 (x_1 + x_2)`, the delay-free stabilizer used with the pendulum.
pub fn pendulum_feedback() -> FeedbackLaw {
    FeedbackLaw::linear(vec![vec![-25.0, -25.0]]).expect("constant gain is well formed")
}

/// Declared state-Lipschitz constant of `sin(x⁵)/(1+x⁴)`.
pub const SCALAR_ISS_LIPSCHITZ_X: f64 = 5.0;

/// The drift of the scalar ISS example, `sin(x⁵)/(1+x⁴)`.
pub fn scalar_iss_drift(x: f64) -> f64 {
    (x.powi(5)).sin() / (1.0 + x.powi(4))
}

/// Scalar non-affine plant `ẋ(t) = sin(x⁵)/(1+x⁴) + u³(t-d)` together with
/// its delay-free feedback `α(x) = -x`.
///
/// The plant is Lipschitz in the state only; it is ISS-stabilizable but not
/// exponentially stabilizable.
pub fn make_scalar_iss_example(d: f64) -> Result<(RetardedPlant, FeedbackLaw), SystemError> {
    let dynamics: Dynamics = Arc::new(|x: &dyn Segment, u: &[f64]| {
        let now = x.at(0.0)[0];
        vec![scalar_iss_drift(now) + u[0].powi(3)]
    });
    let plant = RetardedPlant::new(PlantDefinition {
        name: "scalar_iss".into(),
        state_dim: 1,
        input_dim: 1,
        output_dim: 1,
        dynamics,
        output: Arc::new(|x: &[f64]| vec![x[0]]),
        lipschitz_f: SCALAR_ISS_LIPSCHITZ_X,
        lipschitz_h: 1.0,
        scope: LipschitzScope::StateOnly,
        delays: Delays {
            state: 0.0,
            input: d,
            output: 0.0,
        },
        tags: BTreeSet::from([Assumption::GlcInState, Assumption::IssStabilizable]),
        params: BTreeMap::new(),
    })?;
    let feedback = FeedbackLaw::linear(vec![vec![-1.0]])?;
    Ok((plant, feedback))
}

/// Scalar linear plant `ẋ(t) = a x(t) + c x(t-δ) + b u(t-d)`, `y = x(t-τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearScalarParams {
    #[serde(default)]
    pub current: f64,
    #[serde(default)]
    pub delayed: f64,
    #[serde(default)]
    pub input: f64,
    #[serde(default)]
    pub state_delay: f64,
    #[serde(default)]
    pub input_delay: f64,
    #[serde(default)]
    pub output_delay: f64,
    /// Declared `L_f`; defaults to `|a| + |c| + |b|`.
    #[serde(default)]
    pub lipschitz_f: Option<f64>,
}

pub fn make_linear_scalar(p: &LinearScalarParams) -> Result<RetardedPlant, SystemError> {
    let LinearScalarParams {
        current,
        delayed,
        input,
        state_delay,
        ..
    } = *p;
    let dynamics: Dynamics = Arc::new(move |x: &dyn Segment, u: &[f64]| {
        let now = x.at(0.0)[0];
        let past = if delayed == 0.0 { 0.0 } else { x.at(state_delay)[0] };
        vec![current * now + delayed * past + input * u[0]]
    });
    let lipschitz_f = p
        .lipschitz_f
        .unwrap_or(current.abs() + delayed.abs() + input.abs());
    RetardedPlant::new(PlantDefinition {
        name: "linear".into(),
        state_dim: 1,
        input_dim: 1,
        output_dim: 1,
        dynamics,
        output: Arc::new(|x: &[f64]| vec![x[0]]),
        lipschitz_f,
        lipschitz_h: 1.0,
        scope: LipschitzScope::StateAndInput,
        delays: Delays {
            state: p.state_delay,
            input: p.input_delay,
            output: p.output_delay,
        },
        tags: BTreeSet::from([
            Assumption::Glc,
            Assumption::GesStabilizable,
            Assumption::ExpObserver,
        ]),
        params: BTreeMap::from([
            ("current".to_string(), current),
            ("delayed".to_string(), delayed),
            ("input".to_string(), input),
        ]),
    })
}

/// Coefficients of one strict-feedback nonlinearity
/// `φ_i = Σ_j current_j x_j(t) + delayed_j x_j(t-δ) + sine_j sin x_j(t)`,
/// where `j` ranges over the first `i` states.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSpec {
    #[serde(default)]
    pub current: Vec<f64>,
    #[serde(default)]
    pub delayed: Vec<f64>,
    #[serde(default)]
    pub sine: Vec<f64>,
}

impl PhiSpec {
    fn width(&self) -> usize {
        self.current.len().max(self.delayed.len()).max(self.sine.len())
    }

    /// Lipschitz constant w.r.t. the sup norm of the state segment.
    pub fn lipschitz(&self) -> f64 {
        self.current
            .iter()
            .chain(&self.delayed)
            .chain(&self.sine)
            .map(|c| c.abs())
            .sum()
    }

    pub fn eval(&self, now: &[f64], past: &[f64]) -> f64 {
        let lin: f64 = self.current.iter().zip(now).map(|(c, x)| c * x).sum();
        let del: f64 = self.delayed.iter().zip(past).map(|(c, x)| c * x).sum();
        let sin: f64 = self.sine.iter().zip(now).map(|(c, x)| c * x.sin()).sum();
        lin + del + sin
    }
}

/// A plant in strict-feedback form, its linear state feedback and its
/// Luenberger-type retarded observer.
#[derive(Clone, Debug)]
pub struct StrictFeedbackSystem {
    pub plant: RetardedPlant,
    pub feedback: FeedbackLaw,
    pub observer: ObserverFunctional,
}

/// Builds
///
/// ```text
/// ẋ_i(t) = x_{i+1}(t) + φ_i(x¹_t, …, x^i_t),  i < n
/// ẋ_n(t) = u(t-d) + φ_n(x¹_t, …, x^n_t)
/// y(t)   = x_1(t-τ)
/// ```
///
/// with `u = K x` and the observer
/// `x̂̇_i = x̂_{i+1} + φ_i(x̂) + l_i (y - x̂_1)`. Gains are not synthesized.
pub fn make_strict_feedback(
    phis: &[PhiSpec],
    k: &[f64],
    l: &[f64],
    delays: Delays,
) -> Result<StrictFeedbackSystem, SystemError> {
    let n = phis.len();
    if n == 0 {
        return Err(SystemError::NonPositive {
            name: "n",
            value: 0.0,
        });
    }
    for (i, phi) in phis.iter().enumerate() {
        if phi.width() > i + 1 {
            return Err(SystemError::Dimension {
                what: format!("phi_{} (may only depend on x_1..x_{})", i + 1, i + 1),
                expected: i + 1,
                got: phi.width(),
            });
        }
    }
    for (what, v) in [("K", k), ("L", l)] {
        if v.len() != n {
            return Err(SystemError::Dimension {
                what: what.into(),
                expected: n,
                got: v.len(),
            });
        }
    }
    let phis: Arc<Vec<PhiSpec>> = Arc::new(phis.to_vec());
    let delta = delays.state;
    let phi_bound = phis.iter().map(|p| p.lipschitz().powi(2)).sum::<f64>().sqrt();

    let drift = {
        let phis = Arc::clone(&phis);
        move |x: &dyn Segment| -> (Vec<f64>, Vec<f64>) {
            let now = x.at(0.0);
            let past = if delta == 0.0 { now.clone() } else { x.at(delta) };
            let phi = phis.iter().map(|p| p.eval(&now, &past)).collect();
            (now, phi)
        }
    };
    let plant_drift = drift.clone();
    let dynamics: Dynamics = Arc::new(move |x: &dyn Segment, u: &[f64]| {
        let (now, phi) = plant_drift(x);
        (0..n)
            .map(|i| {
                let chain = if i + 1 < n { now[i + 1] } else { u[0] };
                chain + phi[i]
            })
            .collect()
    });
    let plant = RetardedPlant::new(PlantDefinition {
        name: "strict_feedback".into(),
        state_dim: n,
        input_dim: 1,
        output_dim: 1,
        dynamics,
        output: Arc::new(|x: &[f64]| vec![x[0]]),
        lipschitz_f: 1.0 + phi_bound,
        lipschitz_h: 1.0,
        scope: LipschitzScope::StateAndInput,
        delays,
        tags: BTreeSet::from([
            Assumption::Glc,
            Assumption::GesStabilizable,
            Assumption::ExpObserver,
        ]),
        params: BTreeMap::from([("n".to_string(), n as f64)]),
    })?;
    let feedback = FeedbackLaw::linear(vec![k.to_vec()])?;
    let gains = l.to_vec();
    let l_norm = norm(&gains);
    let observer = ObserverFunctional::new(
        n,
        1,
        1,
        1.0 + phi_bound + l_norm,
        move |x: &dyn Segment, u: &[f64], y: &[f64]| {
            let (now, phi) = drift(x);
            let innovation = y[0] - now[0];
            (0..n)
                .map(|i| {
                    let chain = if i + 1 < n { now[i + 1] } else { u[0] };
                    chain + phi[i] + gains[i] * innovation
                })
                .collect()
        },
    )?;
    Ok(StrictFeedbackSystem {
        plant,
        feedback,
        observer,
    })
}

/// Largest observed difference quotient against its declared constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantCheck {
    pub declared: f64,
    pub max_ratio: f64,
    pub passed: bool,
    /// Pair of points realizing `max_ratio`, flattened as `[x, x̄, u, v]`.
    pub witness: Option<Vec<Vec<f64>>>,
}

impl ConstantCheck {
    pub(crate) fn new(declared: f64) -> Self {
        Self {
            declared,
            max_ratio: 0.0,
            passed: true,
            witness: None,
        }
    }

    pub(crate) fn observe(&mut self, ratio: f64, witness: impl FnOnce() -> Vec<Vec<f64>>) {
        if ratio.is_nan() {
            return;
        }
        if ratio > self.max_ratio {
            self.max_ratio = ratio;
            self.witness = Some(witness());
        }
    }

    pub(crate) fn finish(&mut self) {
        self.passed = self.max_ratio <= self.declared * (1.0 + 1e-9);
    }
}

/// Monte-Carlo Lipschitz report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
    pub f: ConstantCheck,
    pub h: ConstantCheck,
    pub passed: bool,
}

pub(crate) fn uniform_vec(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-radius..=radius)).collect()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Samples pairs of constant histories and inputs in `[-radius, radius]`
/// and reports the largest difference quotients of `f` and `h`.
///
/// Constant histories make `‖φ - φ̄‖_c` the pointwise distance, so the
/// check is sound but not complete.
pub fn verify_lipschitz(
    plant: &RetardedPlant,
    samples: usize,
    radius: f64,
    seed: u64,
) -> LipschitzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f_check = ConstantCheck::new(plant.lipschitz_f);
    let mut h_check = ConstantCheck::new(plant.lipschitz_h);
    let (n, p) = (plant.state_dim, plant.input_dim);
    for _ in 0..samples {
        let x = uniform_vec(&mut rng, n, radius);
        let xb = uniform_vec(&mut rng, n, radius);
        let u = uniform_vec(&mut rng, p, radius);
        let v = match plant.scope {
            LipschitzScope::StateAndInput => uniform_vec(&mut rng, p, radius),
            LipschitzScope::StateOnly => u.clone(),
        };
        let fx = plant.dynamics(&ConstantSegment(&x), &u);
        let fxb = plant.dynamics(&ConstantSegment(&xb), &v);
        let denom = distance(&x, &xb) + distance(&u, &v);
        if denom > 0.0 {
            f_check.observe(distance(&fx, &fxb) / denom, || {
                vec![x.clone(), xb.clone(), u.clone(), v.clone()]
            });
        }
        let dx = distance(&x, &xb);
        if dx > 0.0 {
            let ratio = distance(&plant.output(&x), &plant.output(&xb)) / dx;
            h_check.observe(ratio, || vec![x.clone(), xb.clone()]);
        }
    }
    f_check.finish();
    h_check.finish();
    let passed = f_check.passed && h_check.passed;
    LipschitzReport {
        samples,
        radius,
        seed,
        f: f_check,
        h: h_check,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pendulum() -> RetardedPlant {
        make_pendulum(&PendulumParams::default()).unwrap()
    }

    #[test]
    fn pendulum_coefficients() {
        let c = PendulumParams::default().coefficients();
        assert!((c.input - 0.1).abs() < 1e-15);
        assert!((c.damping - 0.05).abs() < 1e-15);
        assert!((c.gravity - 0.98).abs() < 1e-15);
    }

    #[test]
    fn pendulum_equilibrium_and_upright_torque() {
        let p = pendulum();
        assert_eq!(p.dynamics(&ConstantSegment(&[0.0, 0.0]), &[0.0]), vec![0.0, 0.0]);
        let f = p.dynamics(&ConstantSegment(&[std::f64::consts::FRAC_PI_2, 0.0]), &[0.0]);
        assert_eq!(f[0], 0.0);
        assert!((f[1] - 0.98).abs() < 1e-15);
        assert_eq!((p.state_dim(), p.input_dim(), p.output_dim()), (2, 1, 1));
        assert_eq!(p.lipschitz_f(), 1.0);
        assert_eq!(p.lipschitz_h(), 1.0);
    }

    #[test]
    fn pendulum_rejects_bad_geometry() {
        let mut p = PendulumParams::default();
        p.mass = 0.0;
        assert!(matches!(make_pendulum(&p), Err(SystemError::NonPositive { name: "mass", .. })));
        let mut p = PendulumParams::default();
        p.length = -1.0;
        assert!(matches!(make_pendulum(&p), Err(SystemError::NonPositive { name: "length", .. })));
    }

    #[test]
    fn scalar_iss_values() {
        let (p, alpha) = make_scalar_iss_example(1.0).unwrap();
        assert_eq!(p.dynamics(&ConstantSegment(&[0.0]), &[0.0]), vec![0.0]);
        let f = p.dynamics(&ConstantSegment(&[1.0]), &[0.0])[0];
        assert!((f - 1f64.sin() / 2.0).abs() < 1e-15);
        assert!((f - 0.420735).abs() < 1e-6);
        let f = p.dynamics(&ConstantSegment(&[1.0]), &[-1.0])[0];
        assert!((f - (1f64.sin() / 2.0 - 1.0)).abs() < 1e-15);
        assert!(p.has(Assumption::GlcInState) && p.has(Assumption::IssStabilizable));
        assert!(!p.has(Assumption::GesStabilizable));
        assert_eq!(alpha.eval(&[2.0]), vec![-2.0]);
    }

    #[test]
    fn scalar_iss_drift_is_bounded() {
        for k in -20000..=20000 {
            let x = k as f64 * 5e-4;
            assert!(scalar_iss_drift(x).abs() <= 1.0);
        }
    }

    #[test]
    fn strict_feedback_delay_free_loop_is_hurwitz() {
        // K = (-2, -3) closes ẋ = [[0,1],[-2,-3]] x with spectrum {-1, -2}.
        let sys = make_strict_feedback(
            &[PhiSpec::default(), PhiSpec::default()],
            &[-2.0, -3.0],
            &[3.0, 2.0],
            Delays::default(),
        )
        .unwrap();
        let (a, b, c, d) = (0.0, 1.0, -2.0, -3.0);
        let tr: f64 = a + d;
        let det: f64 = a * d - b * c;
        let disc = (tr * tr - 4.0 * det).sqrt();
        let (l1, l2) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
        assert!((l1 + 1.0).abs() < 1e-12 && (l2 + 2.0).abs() < 1e-12);
        // and the assembled vector field agrees with that matrix
        let x = [0.7, -0.3];
        let u = sys.feedback.eval(&x);
        let f = sys.plant.dynamics(&ConstantSegment(&x), &u);
        assert!((f[0] - (a * x[0] + b * x[1])).abs() < 1e-15);
        assert!((f[1] - (c * x[0] + d * x[1])).abs() < 1e-15);
        assert_eq!(sys.plant.dynamics(&ConstantSegment(&[0.0, 0.0]), &[0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn strict_feedback_delayed_phi() {
        let phi = PhiSpec {
            delayed: vec![0.5],
            ..Default::default()
        };
        let sys = make_strict_feedback(
            &[phi],
            &[-1.0],
            &[1.0],
            Delays {
                state: 0.5,
                input: 0.0,
                output: 0.0,
            },
        )
        .unwrap();
        // n = 1: ẋ = u + 0.5 x(t-δ)
        let f = sys.plant.dynamics(&ConstantSegment(&[1.0]), &[0.0]);
        assert_eq!(f, vec![0.5]);
    }

    #[test]
    fn strict_feedback_dimension_errors() {
        let wide = PhiSpec {
            current: vec![1.0, 1.0],
            ..Default::default()
        };
        assert!(make_strict_feedback(&[wide, PhiSpec::default()], &[1.0, 1.0], &[1.0, 1.0], Delays::default()).is_err());
        assert!(make_strict_feedback(&[PhiSpec::default()], &[1.0, 1.0], &[1.0], Delays::default()).is_err());
    }

    #[test]
    fn lipschitz_pendulum_sits_just_above_declared() {
        // sup over x1 of the spectral norm of [[0, 1], [0.98 cos x1, -0.05]]
        let jac: [[f64; 2]; 2] = [[0.0, 1.0], [0.98, -0.05]];
        let a = jac[0][0] * jac[0][0] + jac[1][0] * jac[1][0];
        let b = jac[0][0] * jac[0][1] + jac[1][0] * jac[1][1];
        let c = jac[0][1] * jac[0][1] + jac[1][1] * jac[1][1];
        let exact = (0.5 * (a + c) + (0.25 * (a - c).powi(2) + b * b).sqrt()).sqrt();
        assert!((exact - 1.0172).abs() < 1e-4);

        let r = verify_lipschitz(&pendulum(), 10_000, 10.0, 7);
        assert!(r.f.max_ratio > 1.0 && r.f.max_ratio <= exact + 1e-12, "{r:?}");
        assert!(!r.f.passed);
        assert!(r.h.passed && r.h.max_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn lipschitz_flags_understated_constant() {
        let plant = make_linear_scalar(&LinearScalarParams {
            current: 2.0,
            delayed: 0.0,
            input: 0.0,
            state_delay: 0.0,
            input_delay: 0.0,
            output_delay: 0.0,
            lipschitz_f: Some(1.0),
        })
        .unwrap();
        let r = verify_lipschitz(&plant, 2_000, 10.0, 1);
        assert!(!r.f.passed);
        assert!(r.f.max_ratio <= 2.0 + 1e-12 && r.f.max_ratio > 1.9, "{}", r.f.max_ratio);
        assert!(r.f.witness.is_some());
    }

    #[test]
    fn factories_pass_their_own_constants() {
        let (iss, _) = make_scalar_iss_example(1.0).unwrap();
        let strict = make_strict_feedback(
            &[
                PhiSpec::default(),
                PhiSpec {
                    current: vec![0.0, 0.0],
                    delayed: vec![0.0, -0.1],
                    sine: vec![0.1],
                },
            ],
            &[-2.0, -3.0],
            &[3.0, 2.0],
            Delays {
                state: 0.5,
                input: 0.5,
                output: 0.0,
            },
        )
        .unwrap();
        for plant in [pendulum(), iss, strict.plant] {
            let r = verify_lipschitz(&plant, 10_000, 10.0, 42);
            assert!(r.passed, "{}: {r:?}", plant.name());
        }
    }

    #[test]
    fn feedback_must_vanish_at_origin() {
        assert!(FeedbackLaw::new(1, 1, "bias", |x| vec![x[0] + 1.0]).is_err());
        assert!(FeedbackLaw::linear(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        let k = pendulum_feedback();
        assert_eq!(k.eval(&[1.0, 0.0]), vec![-25.0]);
    }
}
