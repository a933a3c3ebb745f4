//! State-feedback sequential predictors.
//!
//! A chain of `m` stages, each predicting the previous one `d/m` seconds
//! ahead:
//!
//! ```text
//! ż_i(t) = f(z_t^i, u(t - d + i d/m)) - (L_f + ε)(z_i(t - d/m) - z_{i-1}(t)),   z_0 = x
//! u(t)   = α(z_m(t))
//! ```
//!
//! so that `z_m(t)` approximates `x(t + d)` without any distributed
//! (integral) terms. The gate `m > (L_f + ε)² d` makes the error cascade
//! contract.

use std::sync::Arc;

use thiserror::Error;

use crate::dde::{BlockId, BlockRhs, CoupledSystem, DdeError, SimulationTrace, Stage};
use crate::systems::{Assumption, BlockSegment, FeedbackLaw, RetardedPlant, SystemError};

/// Default `ε` for state-feedback chains.
pub const DEFAULT_STATE_EPSILON: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictorError {
    #[error("epsilon must lie in (0, 1], got {0}")]
    EpsilonOutOfRange(f64),
    #[error("Lipschitz constant and delay must be nonnegative (L = {lipschitz}, delay = {delay})")]
    NegativeArgument { lipschitz: f64, delay: f64 },
    #[error("chain length m = {m} violates m > (L + ε)² · D = {bound:.6}; need m ≥ {required}")]
    ChainTooShort { m: usize, bound: f64, required: usize },
    #[error("total delay is zero; no predictor chain is needed")]
    NoDelay,
    #[error("plant `{plant}` is not tagged with any of {needed:?}")]
    MissingAssumption {
        plant: String,
        needed: Vec<Assumption>,
    },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("delay {delay} is not a whole number of recorded rows (spacing {spacing})")]
    GridMisaligned { delay: f64, spacing: f64 },
    #[error(transparent)]
    Integrator(#[from] DdeError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// `(L + ε)² · D`, the quantity the chain length must exceed.
pub fn chain_bound(lipschitz: f64, epsilon: f64, total_delay: f64) -> f64 {
    (lipschitz + epsilon).powi(2) * total_delay
}

/// Smallest integer strictly greater than `(L + ε)² · D`, and at least 1.
pub fn min_chain_length(lipschitz: f64, epsilon: f64, total_delay: f64) -> Result<usize, PredictorError> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(PredictorError::EpsilonOutOfRange(epsilon));
    }
    if !(lipschitz >= 0.0 && total_delay >= 0.0) || !lipschitz.is_finite() || !total_delay.is_finite() {
        return Err(PredictorError::NegativeArgument {
            lipschitz,
            delay: total_delay,
        });
    }
    let bound = chain_bound(lipschitz, epsilon, total_delay);
    Ok((bound.floor() as usize + 1).max(1))
}

pub(crate) fn check_gate(m: usize, lipschitz: f64, epsilon: f64, total_delay: f64) -> Result<(), PredictorError> {
    let required = min_chain_length(lipschitz, epsilon, total_delay)?;
    if m < required {
        return Err(PredictorError::ChainTooShort {
            m,
            bound: chain_bound(lipschitz, epsilon, total_delay),
            required,
        });
    }
    Ok(())
}

/// Parameters of a state-feedback predictor chain.
#[derive(Debug, Clone)]
pub struct StatePredictorChain {
    m: usize,
    sub_delay: f64,
    gain: f64,
    epsilon: f64,
    input_delay: f64,
    state_dim: usize,
    feedback: FeedbackLaw,
    stage_initial: Option<Vec<f64>>,
}

impl StatePredictorChain {
    pub fn m(&self) -> usize {
        self.m
    }
    /// `d/m`
    pub fn sub_delay(&self) -> f64 {
        self.sub_delay
    }
    /// `L_f + ε`
    pub fn gain(&self) -> f64 {
        self.gain
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn input_delay(&self) -> f64 {
        self.input_delay
    }
    pub fn feedback(&self) -> &FeedbackLaw {
        &self.feedback
    }

    /// Constant initial function shared by every stage. Without it stages
    /// start from the plant's initial vector.
    pub fn with_stage_initial(mut self, initial: Vec<f64>) -> Result<Self, PredictorError> {
        if initial.len() != self.state_dim {
            return Err(PredictorError::Dimension {
                what: "predictor initial".into(),
                expected: self.state_dim,
                got: initial.len(),
            });
        }
        self.stage_initial = Some(initial);
        Ok(self)
    }

    pub fn stage_initial(&self) -> Option<&[f64]> {
        self.stage_initial.as_deref()
    }

    /// Names of the stage channels, `z1..zm`.
    pub fn stage_names(&self) -> Vec<String> {
        (1..=self.m).map(|i| format!("z{i}")).collect()
    }
}

pub(crate) fn check_feedback(plant: &RetardedPlant, feedback: &FeedbackLaw) -> Result<(), PredictorError> {
    if feedback.state_dim() != plant.state_dim() {
        return Err(PredictorError::Dimension {
            what: "feedback state dimension".into(),
            expected: plant.state_dim(),
            got: feedback.state_dim(),
        });
    }
    if feedback.input_dim() != plant.input_dim() {
        return Err(PredictorError::Dimension {
            what: "feedback input dimension".into(),
            expected: plant.input_dim(),
            got: feedback.input_dim(),
        });
    }
    Ok(())
}

/// Builds an `m`-stage chain with gain `L_f + ε` for `plant`.
pub fn build_state_chain(
    plant: &RetardedPlant,
    feedback: FeedbackLaw,
    m: usize,
    epsilon: f64,
) -> Result<StatePredictorChain, PredictorError> {
    let needed = vec![Assumption::GesStabilizable, Assumption::IssStabilizable];
    if !needed.iter().any(|a| plant.has(*a)) {
        return Err(PredictorError::MissingAssumption {
            plant: plant.name().to_string(),
            needed,
        });
    }
    check_feedback(plant, &feedback)?;
    let d = plant.delays().input;
    if d == 0.0 {
        return Err(PredictorError::NoDelay);
    }
    check_gate(m, plant.lipschitz_f(), epsilon, d)?;
    Ok(StatePredictorChain {
        m,
        sub_delay: d / m as f64,
        gain: plant.lipschitz_f() + epsilon,
        epsilon,
        input_delay: d,
        state_dim: plant.state_dim(),
        feedback,
        stage_initial: None,
    })
}

/// Plant block fed by the delayed control `u(t - d)`.
pub(crate) fn plant_block(plant: &RetardedPlant, x: BlockId, u: crate::dde::SignalId) -> BlockRhs {
    let f = plant.dynamics_fn();
    let d = plant.delays().input;
    Arc::new(move |stage: &Stage<'_>, out: &mut [f64]| {
        let seg = BlockSegment { stage, block: x };
        let ud = stage.signal(u, d);
        out.copy_from_slice(&f(&seg, &ud));
    })
}

/// Closed loop `[x, z_1, …, z_m]` with `u(t) = α(z_m(t))`.
pub fn assemble_closed_loop(
    plant: &RetardedPlant,
    chain: &StatePredictorChain,
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
    let mut stages = Vec::with_capacity(chain.m);
    for name in chain.stage_names() {
        stages.push(sys.add_block(&name, stage_initial.clone(), Arc::clone(&placeholder))?);
    }
    let last = *stages.last().expect("m >= 1");
    let alpha = chain.feedback.clone();
    let u = sys.add_signal(
        "u",
        plant.input_dim(),
        Arc::new(move |snap| alpha.eval(snap.block(last))),
    )?;

    sys.set_rhs(x, plant_block(plant, x, u));
    let s = chain.sub_delay;
    let gain = chain.gain;
    for (k, &zi) in stages.iter().enumerate() {
        let i = k + 1;
        let prev = if i == 1 { x } else { stages[k - 1] };
        let lag_u = (chain.m - i) as f64 * s;
        let f = plant.dynamics_fn();
        sys.set_rhs(
            zi,
            Arc::new(move |stage: &Stage<'_>, out: &mut [f64]| {
                let seg = BlockSegment { stage, block: zi };
                let drift = f(&seg, &stage.signal(u, lag_u));
                let lagged = stage.delayed(zi, s);
                let before = stage.current(prev);
                for j in 0..out.len() {
                    out[j] = drift[j] - gain * (lagged[j] - before[j]);
                }
            }),
        );
    }

    let delays = plant.delays();
    sys.add_delays([delays.state, delays.input, s]);
    sys.add_delays((0..chain.m).map(|i| (chain.m - i) as f64 * s));
    sys.set_metadata("controller", "state-chain");
    sys.set_metadata("m", chain.m);
    sys.set_metadata("gain", chain.gain);
    sys.set_metadata("epsilon", chain.epsilon);
    sys.set_metadata("sub_delay", chain.sub_delay);
    Ok(sys)
}

/// Error channels derived from a recorded trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StageErrors {
    /// `(name, dim, row-major data)`; rows where a term is undefined are NaN.
    pub channels: Vec<(String, usize, Vec<f64>)>,
    /// Total prediction error `z_m(t) - x(t + d)` (NaN where undefined).
    pub prediction: Vec<f64>,
    pub dim: usize,
    /// Largest relative residual of the telescoping identity over all rows
    /// where every term is defined.
    pub identity_residual: f64,
}

impl StageErrors {
    /// Appends `e*` channels and `P` to the trace.
    pub fn append_to(&self, trace: &mut SimulationTrace) -> Result<(), DdeError> {
        for (name, dim, data) in &self.channels {
            trace.push_channel(name, *dim, data.clone())?;
        }
        trace.push_channel("P", self.dim, self.prediction.clone())
    }

    /// Euclidean norm of `P` per row (NaN where undefined).
    pub fn prediction_norms(&self) -> Vec<f64> {
        self.prediction
            .chunks(self.dim)
            .map(crate::history::norm)
            .collect()
    }
}

/// Number of recorded rows spanning `delay`.
pub fn grid_shift(trace: &SimulationTrace, delay: f64) -> Result<usize, PredictorError> {
    let spacing = trace.spacing().unwrap_or(f64::NAN);
    let ratio = delay / spacing;
    if !ratio.is_finite() || ratio < 0.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
        return Err(PredictorError::GridMisaligned { delay, spacing });
    }
    Ok(ratio.round() as usize)
}

pub(crate) fn shifted_difference(
    a: &[f64],
    b: &[f64],
    dim: usize,
    rows: usize,
    shift_b: isize,
) -> Vec<f64> {
    let mut out = vec![f64::NAN; rows * dim];
    for r in 0..rows {
        let rb = r as isize + shift_b;
        if rb < 0 || rb as usize >= rows {
            continue;
        }
        let rb = rb as usize;
        for j in 0..dim {
            out[r * dim + j] = a[r * dim + j] - b[rb * dim + j];
        }
    }
    out
}

/// `e_i(t) = z_i(t) - z_{i-1}(t + d/m)` and `P(t) = z_m(t) - x(t + d)`.
pub fn extract_stage_errors(
    trace: &SimulationTrace,
    chain: &StatePredictorChain,
) -> Result<StageErrors, PredictorError> {
    let k = grid_shift(trace, chain.sub_delay)? as isize;
    let rows = trace.len();
    let x = trace.require("x")?;
    let dim = x.dim;
    let names = chain.stage_names();
    let mut stage_data = vec![&x.data];
    for name in &names {
        stage_data.push(&trace.require(name)?.data);
    }
    let mut channels = Vec::with_capacity(chain.m);
    for i in 1..=chain.m {
        let e = shifted_difference(stage_data[i], stage_data[i - 1], dim, rows, k);
        channels.push((format!("e{i}"), dim, e));
    }
    let prediction = shifted_difference(stage_data[chain.m], &x.data, dim, rows, k * chain.m as isize);

    // z_m(t) - x(t+d) = Σ_{j=0}^{m-1} e_{m-j}(t + j d/m)
    let mut residual = 0.0_f64;
    for r in 0..rows {
        if r as isize + k * chain.m as isize >= rows as isize {
            break;
        }
        for c in 0..dim {
            let lhs = prediction[r * dim + c];
            let mut sum = 0.0;
            let mut scale = lhs.abs();
            for j in 0..chain.m {
                let v = channels[chain.m - j - 1].2[(r + j * k as usize) * dim + c];
                sum += v;
                scale = scale.max(v.abs());
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dde::{integrate, IntegratorConfig};
    use crate::systems::{make_pendulum, pendulum_feedback, PendulumParams};

    fn pendulum(d: f64, delta: f64) -> RetardedPlant {
        make_pendulum(&PendulumParams {
            state_delay: delta,
            input_delay: d,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn chain_length_values() {
        assert_eq!(min_chain_length(1.0, 0.3, 2.0).unwrap(), 4);
        assert_eq!(min_chain_length(3.0, 0.1, 2.0).unwrap(), 20);
        assert_eq!(min_chain_length(7.0, 0.5, 0.0).unwrap(), 1);
        assert!(matches!(min_chain_length(1.0, 0.0, 1.0), Err(PredictorError::EpsilonOutOfRange(_))));
        assert!(min_chain_length(1.0, 1.5, 1.0).is_err());
        assert_eq!(min_chain_length(0.0, 1.0, 2.0).unwrap(), 3);
    }

    #[test]
    fn builds_reference_chains() {
        let c = build_state_chain(&pendulum(2.0, 1.0), pendulum_feedback(), 4, 0.3).unwrap();
        assert_eq!(c.m(), 4);
        assert_eq!(c.sub_delay(), 0.5);
        assert_eq!(c.gain(), 1.3);
        let c = build_state_chain(&pendulum(4.0, 2.0), pendulum_feedback(), 8, 0.3).unwrap();
        assert_eq!(c.sub_delay(), 0.5);
        assert_eq!(c.gain(), 1.3);
    }

    #[test]
    fn gate_rejects_short_chain() {
        let err = build_state_chain(&pendulum(2.0, 1.0), pendulum_feedback(), 3, 0.3).unwrap_err();
        match err {
            PredictorError::ChainTooShort { m, bound, required } => {
                assert_eq!(m, 3);
                assert!((bound - 3.38).abs() < 1e-12);
                assert_eq!(required, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("3.38"));
    }

    #[test]
    fn zero_input_delay_is_rejected() {
        let err = build_state_chain(&pendulum(0.0, 1.0), pendulum_feedback(), 4, 0.3).unwrap_err();
        assert_eq!(err, PredictorError::NoDelay);
    }

    #[test]
    fn delay_set_enumerates_input_lags() {
        let plant = pendulum(2.0, 1.0);
        let chain = build_state_chain(&plant, pendulum_feedback(), 4, 0.3).unwrap();
        let sys = assemble_closed_loop(&plant, &chain, &[1.0, 0.0]).unwrap();
        for want in [1.0, 0.5, 1.5, 2.0] {
            assert!(sys.delay_set().iter().any(|d| (d - want).abs() < 1e-12), "{want}");
        }
        assert_eq!(sys.block_count(), 5);
    }

    #[test]
    fn equilibrium_stays_put() {
        let plant = pendulum(2.0, 1.0);
        let chain = build_state_chain(&plant, pendulum_feedback(), 4, 0.3)
            .unwrap()
            .with_stage_initial(vec![0.0, 0.0])
            .unwrap();
        let sys = assemble_closed_loop(&plant, &chain, &[0.0, 0.0]).unwrap();
        let trace = integrate(&sys, &IntegratorConfig::new(0.01, 5.0, 10)).unwrap();
        for c in &trace.channels {
            assert!(c.data.iter().all(|v| *v == 0.0), "{}", c.name);
        }
    }

    #[test]
    fn perfect_prediction_has_zero_errors() {
        // Synthetic trace with z_i(t) = x(t + i d/m) for x(t) = sin t.
        let (m, d, sp) = (4usize, 2.0, 0.05);
        let rows = 400;
        let times: Vec<f64> = (0..rows).map(|r| r as f64 * sp).collect();
        let mut trace = SimulationTrace {
            times: times.clone(),
            ..Default::default()
        };
        trace.metadata.insert("record_spacing".into(), sp.to_string());
        let shift = |i: usize| -> Vec<f64> {
            // exact grid shift: sample the same table offset by whole rows
            (0..rows).map(|r| ((r + i * 10) as f64 * sp).sin()).collect()
        };
        trace.push_channel("x", 1, shift(0)).unwrap();
        for i in 1..=m {
            trace.push_channel(&format!("z{i}"), 1, shift(i)).unwrap();
        }
        let plant = make_crate_linear(d);
        let chain = build_state_chain(&plant, FeedbackLaw::zero(1, 1), m, 0.3).unwrap();
        let errs = extract_stage_errors(&trace, &chain).unwrap();
        for (_, _, e) in &errs.channels {
            assert!(e.iter().filter(|v| !v.is_nan()).all(|v| *v == 0.0));
        }
        assert!(errs.prediction.iter().filter(|v| !v.is_nan()).all(|v| *v == 0.0));
        assert_eq!(errs.identity_residual, 0.0);
    }

    #[test]
    fn misaligned_grid_is_an_error() {
        let mut trace = SimulationTrace {
            times: vec![0.0, 0.3, 0.6],
            ..Default::default()
        };
        trace.metadata.insert("record_spacing".into(), "0.3".into());
        trace.push_channel("x", 1, vec![0.0; 3]).unwrap();
        let plant = make_crate_linear(1.0);
        let chain = build_state_chain(&plant, FeedbackLaw::zero(1, 1), 2, 0.3).unwrap();
        assert!(matches!(
            extract_stage_errors(&trace, &chain),
            Err(PredictorError::GridMisaligned { .. })
        ));
    }

    fn make_crate_linear(d: f64) -> RetardedPlant {
        crate::systems::make_linear_scalar(&crate::systems::LinearScalarParams {
            current: 0.0,
            delayed: -1.0,
            input: 1.0,
            state_delay: 1.0,
            input_delay: d,
            output_delay: 0.0,
            lipschitz_f: Some(1.0),
        })
        .unwrap()
    }
}
