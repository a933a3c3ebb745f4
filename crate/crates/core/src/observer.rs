//! Output-feedback chains: an observer stage `ẑ_0` reconstructing
//! `x(t - τ)` from the delayed measurement, followed by `m` predictor
//! stages spanning `d + τ`.
//!
//! ```text
//! ẑ̇_0(t) = F(ẑ_t^0, u(t - d - τ), y(t))
//! ẑ̇_i(t) = F(ẑ_t^i, u(t - d - τ + i s), h(ẑ_i(t))) - g (ẑ_i(t - s) - ẑ_{i-1}(t))
//! u(t)   = α(ẑ_m(t)),     s = (d + τ)/m,     g = L_F + L_F L_h + ε
//! ```

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dde::{BlockRhs, CoupledSystem, SimulationTrace, Stage};
use crate::history::norm;
use crate::predictor::{
    check_feedback, check_gate, grid_shift, plant_block, shifted_difference, PredictorError,
    StageErrors,
};
use crate::systems::{
    distance, uniform_vec, Assumption, BlockSegment, ConstantCheck, ConstantSegment, FeedbackLaw,
    PendulumParams, RetardedPlant, Segment, SystemError, EQUILIBRIUM_TOL,
};

/// Default `ε` for output-feedback chains.
pub const DEFAULT_OUTPUT_EPSILON: f64 = 0.1;

/// Declared `L_F` of the pendulum observer.
pub const PENDULUM_OBSERVER_LIPSCHITZ: f64 = 1.5;

type ObserverFn = Arc<dyn Fn(&dyn Segment, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Observer vector field `F(x̂_t, u, y)` with its declared Lipschitz constant.
#[derive(Clone)]
pub struct ObserverFunctional {
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    lipschitz: f64,
    eval: ObserverFn,
}

impl fmt::Debug for ObserverFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObserverFunctional")
            .field("state_dim", &self.state_dim)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl ObserverFunctional {
    /// Checks `F(0, 0, 0) = 0` and the output dimension.
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        lipschitz: f64,
        eval: impl Fn(&dyn Segment, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self, SystemError> {
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return Err(SystemError::BadLipschitz {
                name: "lipschitz_F",
                value: lipschitz,
            });
        }
        let zero = vec![0.0; state_dim];
        let f0 = eval(&ConstantSegment(&zero), &vec![0.0; input_dim], &vec![0.0; output_dim]);
        if f0.len() != state_dim {
            return Err(SystemError::Dimension {
                what: "observer vector field".into(),
                expected: state_dim,
                got: f0.len(),
            });
        }
        if norm(&f0) >= EQUILIBRIUM_TOL {
            return Err(SystemError::NotAtEquilibrium {
                what: "F(0, 0, 0)",
                norm: norm(&f0),
            });
        }
        Ok(Self {
            state_dim,
            input_dim,
            output_dim,
            lipschitz,
            eval: Arc::new(eval),
        })
    }

    pub fn eval(&self, history: &dyn Segment, u: &[f64], y: &[f64]) -> Vec<f64> {
        (self.eval)(history, u, y)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
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
}

/// Pendulum observer
/// `x̂̇ = A x̂ + B u + g_0(x̂(t), x̂(t-δ)) + L (y - x̂_1)`
/// with `A = [[0,1],[0,0]]`, `B = [0, 1/(M l²)]` and
/// `g_0 = [0, (g/l) sin x̂_1(t) - (ζ/(M l²)) x̂_2(t-δ)]`.
///
/// The innovation enters with a plus sign so that the estimation error
/// obeys `ė = (A - L C) e + G_0`; `L = (1, 1.5)` makes `A - LC` Hurwitz.
pub fn make_pendulum_observer(
    params: &PendulumParams,
    gain: [f64; 2],
) -> Result<ObserverFunctional, SystemError> {
    let c = params.coefficients();
    let delta = params.state_delay;
    ObserverFunctional::new(
        2,
        1,
        1,
        PENDULUM_OBSERVER_LIPSCHITZ,
        move |x: &dyn Segment, u: &[f64], y: &[f64]| {
            let now = x.at(0.0);
            let past = if delta == 0.0 { now.clone() } else { x.at(delta) };
            let innovation = y[0] - now[0];
            vec![
                now[1] + gain[0] * innovation,
                c.input * u[0] + c.gravity * now[0].sin() - c.damping * past[1]
                    + gain[1] * innovation,
            ]
        },
    )
}

/// Monte-Carlo check of `‖F(φ,u,y) - F(φ̄,u,ȳ)‖ ≤ L_F (‖φ-φ̄‖ + ‖y-ȳ‖)`
/// over constant histories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObserverLipschitzReport {
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
    pub check: ConstantCheck,
}

pub fn verify_observer_lipschitz(
    observer: &ObserverFunctional,
    samples: usize,
    radius: f64,
    seed: u64,
) -> ObserverLipschitzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut check = ConstantCheck::new(observer.lipschitz);
    for _ in 0..samples {
        let x = uniform_vec(&mut rng, observer.state_dim, radius);
        let xb = uniform_vec(&mut rng, observer.state_dim, radius);
        let u = uniform_vec(&mut rng, observer.input_dim, radius);
        let y = uniform_vec(&mut rng, observer.output_dim, radius);
        let yb = uniform_vec(&mut rng, observer.output_dim, radius);
        let a = observer.eval(&ConstantSegment(&x), &u, &y);
        let b = observer.eval(&ConstantSegment(&xb), &u, &yb);
        let denom = distance(&x, &xb) + distance(&y, &yb);
        if denom > 0.0 {
            check.observe(distance(&a, &b) / denom, || {
                vec![x.clone(), xb.clone(), u.clone(), y.clone(), yb.clone()]
            });
        }
    }
    check.finish();
    ObserverLipschitzReport {
        samples,
        radius,
        seed,
        check,
    }
}

/// Parameters of an output-feedback predictor chain.
#[derive(Debug, Clone)]
pub struct OutputPredictorChain {
    m: usize,
    sub_delay: f64,
    gain: f64,
    epsilon: f64,
    input_delay: f64,
    output_delay: f64,
    state_dim: usize,
    observer: ObserverFunctional,
    feedback: FeedbackLaw,
    stage_initial: Option<Vec<f64>>,
}

impl OutputPredictorChain {
    pub fn m(&self) -> usize {
        self.m
    }
    /// `(d + τ)/m`
    pub fn sub_delay(&self) -> f64 {
        self.sub_delay
    }
    /// `L_F + L_F L_h + ε`
    pub fn gain(&self) -> f64 {
        self.gain
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn total_delay(&self) -> f64 {
        self.input_delay + self.output_delay
    }
    pub fn observer(&self) -> &ObserverFunctional {
        &self.observer
    }

    pub fn with_stage_initial(mut self, initial: Vec<f64>) -> Result<Self, PredictorError> {
        if initial.len() != self.state_dim {
            return Err(PredictorError::Dimension {
                what: "observer initial".into(),
                expected: self.state_dim,
                got: initial.len(),
            });
        }
        self.stage_initial = Some(initial);
        Ok(self)
    }

    /// `zhat0..zhatm`
    pub fn stage_names(&self) -> Vec<String> {
        (0..=self.m).map(|i| format!("zhat{i}")).collect()
    }
}

pub fn build_output_chain(
    plant: &RetardedPlant,
    observer: ObserverFunctional,
    feedback: FeedbackLaw,
    m: usize,
    epsilon: f64,
) -> Result<OutputPredictorChain, PredictorError> {
    let needed = vec![Assumption::ExpObserver, Assumption::AsymptoticObserver];
    if !needed.iter().any(|a| plant.has(*a)) {
        return Err(PredictorError::MissingAssumption {
            plant: plant.name().to_string(),
            needed,
        });
    }
    check_feedback(plant, &feedback)?;
    if observer.state_dim != plant.state_dim()
        || observer.input_dim != plant.input_dim()
        || observer.output_dim != plant.output_dim()
    {
        return Err(PredictorError::Dimension {
            what: "observer".into(),
            expected: plant.state_dim(),
            got: observer.state_dim,
        });
    }
    let delays = plant.delays();
    let total = delays.input + delays.output;
    if total == 0.0 {
        return Err(PredictorError::NoDelay);
    }
    let lf = observer.lipschitz;
    let effective = lf + lf * plant.lipschitz_h();
    check_gate(m, effective, epsilon, total)?;
    Ok(OutputPredictorChain {
        m,
        sub_delay: total / m as f64,
        gain: effective + epsilon,
        epsilon,
        input_delay: delays.input,
        output_delay: delays.output,
        state_dim: plant.state_dim(),
        observer,
        feedback,
        stage_initial: None,
    })
}

/// Closed loop `[x, ẑ_0, …, ẑ_m]` with `u(t) = α(ẑ_m(t))` and a recorded
/// measurement probe `y(t) = h(x(t - τ))`.
pub fn assemble_output_closed_loop(
    plant: &RetardedPlant,
    chain: &OutputPredictorChain,
    plant_initial: &[f64],
) -> Result<CoupledSystem, PredictorError> {
    let n = plant.state_dim();
    if plant_initial.len() != n {
        return Err(PredictorError::Dimension {
            what: "plant initial".into(),
            expected: n,
            got: plant_initial.len(),
        });
    }
    let stage_initial = chain
        .stage_initial
        .clone()
        .unwrap_or_else(|| plant_initial.to_vec());
    let placeholder: BlockRhs = Arc::new(|_: &Stage<'_>, out: &mut [f64]| out.fill(0.0));

    let mut sys = CoupledSystem::new();
    let x = sys.add_block("x", plant_initial.to_vec(), Arc::clone(&placeholder))?;
    let mut stages = Vec::with_capacity(chain.m + 1);
    for name in chain.stage_names() {
        stages.push(sys.add_block(&name, stage_initial.clone(), Arc::clone(&placeholder))?);
    }
    let last = stages[chain.m];
    let alpha = chain.feedback.clone();
    let u = sys.add_signal(
        "u",
        plant.input_dim(),
        Arc::new(move |snap| alpha.eval(snap.block(last))),
    )?;
    sys.set_rhs(x, plant_block(plant, x, u));

    let tau = chain.output_delay;
    let s = chain.sub_delay;
    let gain = chain.gain;
    let h = plant.output_fn();
    let m = chain.m;

    // stage 0: the only reader of the plant (through y)
    {
        let f = chain.observer.eval.clone();
        let h = Arc::clone(&h);
        let z0 = stages[0];
        let lag_u = m as f64 * s;
        sys.set_rhs(
            z0,
            Arc::new(move |stage: &Stage<'_>, out: &mut [f64]| {
                let y = h(&stage.delayed(x, tau));
                let seg = BlockSegment { stage, block: z0 };
                out.copy_from_slice(&f(&seg, &stage.signal(u, lag_u), &y));
            }),
        );
    }
    for i in 1..=m {
        let f = chain.observer.eval.clone();
        let h = Arc::clone(&h);
        let zi = stages[i];
        let prev = stages[i - 1];
        let lag_u = (m - i) as f64 * s;
        sys.set_rhs(
            zi,
            Arc::new(move |stage: &Stage<'_>, out: &mut [f64]| {
                let now = stage.current(zi);
                let seg = BlockSegment { stage, block: zi };
                let drift = f(&seg, &stage.signal(u, lag_u), &h(now));
                let lagged = stage.delayed(zi, s);
                let before = stage.current(prev);
                for j in 0..out.len() {
                    out[j] = drift[j] - gain * (lagged[j] - before[j]);
                }
            }),
        );
    }
    {
        let h = Arc::clone(&h);
        sys.add_probe(
            "y",
            plant.output_dim(),
            Arc::new(move |stage: &Stage<'_>| h(&stage.delayed(x, tau))),
        )?;
    }

    let delays = plant.delays();
    sys.add_delays([delays.state, delays.input, tau, s]);
    sys.add_delays((0..=m).map(|i| (m - i) as f64 * s));
    sys.set_metadata("controller", "output-chain");
    sys.set_metadata("m", chain.m);
    sys.set_metadata("gain", chain.gain);
    sys.set_metadata("epsilon", chain.epsilon);
    sys.set_metadata("sub_delay", chain.sub_delay);
    Ok(sys)
}

/// `ẽ_0(t) = ẑ_0(t) - x(t - τ)`, `ẽ_i(t) = ẑ_i(t) - ẑ_{i-1}(t + s)` and
/// `P̂(t) = ẑ_m(t) - x(t + d)`, with the residual of
/// `ẑ_m(t) - x(t + d) = Σ_{j=0}^{m} ẽ_{m-j}(t + j s)`.
pub fn extract_output_stage_errors(
    trace: &SimulationTrace,
    chain: &OutputPredictorChain,
) -> Result<StageErrors, PredictorError> {
    let k = grid_shift(trace, chain.sub_delay)?;
    let k_tau = grid_shift(trace, chain.output_delay)?;
    let k_d = grid_shift(trace, chain.input_delay)?;
    let rows = trace.len();
    let x = trace.require("x")?;
    let dim = x.dim;
    let mut zs = Vec::with_capacity(chain.m + 1);
    for name in chain.stage_names() {
        zs.push(&trace.require(&name)?.data);
    }
    let mut channels = Vec::with_capacity(chain.m + 1);
    channels.push((
        "etilde0".to_string(),
        dim,
        shifted_difference(zs[0], &x.data, dim, rows, -(k_tau as isize)),
    ));
    for i in 1..=chain.m {
        channels.push((
            format!("etilde{i}"),
            dim,
            shifted_difference(zs[i], zs[i - 1], dim, rows, k as isize),
        ));
    }
    let prediction = shifted_difference(zs[chain.m], &x.data, dim, rows, k_d as isize);

    let mut residual = 0.0_f64;
    let span = k * chain.m;
    for r in 0..rows {
        if r + span >= rows || r + k_d >= rows {
            break;
        }
        for c in 0..dim {
            let lhs = prediction[r * dim + c];
            let mut sum = 0.0;
            let mut scale = lhs.abs();
            for j in 0..=chain.m {
                let v = channels[chain.m - j].2[(r + j * k) * dim + c];
                sum += v;
                scale = scale.max(v.abs());
            }
            if sum.is_nan() {
                continue;
            }
            residual = residual.max((lhs - sum).abs() / (1.0 + scale));
        }
    }
    Ok(StageErrors {
        channels,
        prediction,
        dim,
        identity_residual: residual,
    })
}
