//! Named end-to-end experiments: a plant, a controller, an integrator
//! configuration and the checks to run on the resulting trace.
//!
//! Scenarios are plain TOML. Unknown keys are rejected.
//!
//! ```toml
//! name = "pendulum-sf-d2"
//!
//! [plant]
//! kind = "pendulum"
//! state_delay = 1.0
//! input_delay = 2.0
//!
//! [controller]
//! kind = "state-chain"
//!
//! [predictor]
//! m = 4            # or "auto"
//! epsilon = 0.3
//! initial = [0.2, 0.1]
//!
//! [initial]
//! plant = [1.0, 0.0]
//! ```

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{check_gas, check_iss, AnalysisError, GasReport, IssReport, IssSettings};
use crate::dde::{integrate, CoupledSystem, DdeError, IntegratorConfig, SimulationTrace, Stage};
use crate::observer::{
    assemble_output_closed_loop, build_output_chain, extract_output_stage_errors,
    make_pendulum_observer, ObserverFunctional, DEFAULT_OUTPUT_EPSILON,
};
use crate::predictor::{
    assemble_closed_loop, build_state_chain, extract_stage_errors, min_chain_length, plant_block,
    PredictorError, StageErrors, DEFAULT_STATE_EPSILON,
};
use crate::systems::{
    make_linear_scalar, make_pendulum, make_scalar_iss_example, make_strict_feedback, Delays,
    FeedbackLaw, LinearScalarParams, PendulumParams, PhiSpec, RetardedPlant, SystemError,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{name}`; built-ins: {}", available.join(", "))]
    Unknown { name: String, available: Vec<String> },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key.path=value")]
    Override(String),
    #[error("scenario `{scenario}`: {message}")]
    Config { scenario: String, message: String },
    #[error("scenario `{scenario}`: {source}")]
    Predictor {
        scenario: String,
        #[source]
        source: PredictorError,
    },
    #[error("scenario `{scenario}`: {source}")]
    Integrator {
        scenario: String,
        #[source]
        source: DdeError,
    },
    #[error("scenario `{scenario}`: {source}")]
    System {
        scenario: String,
        #[source]
        source: SystemError,
    },
    #[error("scenario `{scenario}`: {source}")]
    Analysis {
        scenario: String,
        #[source]
        source: AnalysisError,
    },
}

/// Plant factory and its parameters, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    Pendulum(PendulumParams),
    ScalarIss {
        #[serde(default)]
        input_delay: f64,
    },
    LinearScalar(LinearScalarParams),
    StrictFeedback(StrictFeedbackSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrictFeedbackSpec {
    pub phis: Vec<PhiSpec>,
    /// State gain `K`.
    pub k: Vec<f64>,
    /// Observer gain `L`.
    pub l: Vec<f64>,
    #[serde(default)]
    pub state_delay: f64,
    #[serde(default)]
    pub input_delay: f64,
    #[serde(default)]
    pub output_delay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    StateChain,
    OutputChain,
    /// `u(t) = α(x(t) + μ(t))`
    DirectFeedback,
    OpenLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AutoTag {
    Auto,
}

/// Number of chain stages: fixed, or the smallest admissible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainLength {
    Fixed(usize),
    #[serde(with = "auto_tag")]
    Auto,
}

mod auto_tag {
    use super::AutoTag;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        AutoTag::Auto.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        AutoTag::deserialize(d).map(|_| ())
    }
}

impl Default for ChainLength {
    fn default() -> Self {
        ChainLength::Auto
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    #[serde(default)]
    pub m: ChainLength,
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Constant initial history of every stage; defaults to the plant's.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ObserverSpec {
    /// Observer gain `L`; required for the pendulum.
    #[serde(default)]
    pub gain: Option<Vec<f64>>,
    #[serde(default)]
    pub m: ChainLength,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

/// Overrides the factory's feedback with `u = G x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSpec {
    pub gain: Vec<Vec<f64>>,
}

/// Additive measurement disturbance `μ(t) = A` or `A sin(ωt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub amplitude: f64,
    #[serde(default)]
    pub frequency: Option<f64>,
}

impl DisturbanceSpec {
    pub fn eval(&self, t: f64) -> f64 {
        match self.frequency {
            Some(w) => self.amplitude * (w * t).sin(),
            None => self.amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// Constant plant history on `[-max delay, 0]`.
    pub plant: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasCheckSpec {
    #[serde(default = "default_channel")]
    pub channel: String,
    pub settle_fraction: f64,
    pub horizon_fraction: f64,
}

/// Sup of `‖channel‖` over its last `window` seconds of defined values must
/// stay below `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowCheckSpec {
    pub channel: String,
    pub window: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChecksSpec {
    #[serde(default)]
    pub gas: Option<GasCheckSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub final_window: Vec<WindowCheckSpec>,
    /// Bound on the telescoping-identity residual of the chain.
    #[serde(default)]
    pub identity: Option<f64>,
    #[serde(default)]
    pub iss: Option<IssSettings>,
}

fn default_channel() -> String {
    "x".to_string()
}

pub const DEFAULT_STEP: f64 = 0.005;
pub const DEFAULT_T_END: f64 = 60.0;
pub const DEFAULT_STRIDE: usize = 10;

fn default_integrator() -> IntegratorConfig {
    IntegratorConfig::new(DEFAULT_STEP, DEFAULT_T_END, DEFAULT_STRIDE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub plant: PlantSpec,
    pub controller: ControllerSpec,
    #[serde(default)]
    pub predictor: Option<PredictorSpec>,
    #[serde(default)]
    pub observer: Option<ObserverSpec>,
    #[serde(default)]
    pub feedback: Option<FeedbackSpec>,
    #[serde(default)]
    pub disturbance: Option<DisturbanceSpec>,
    #[serde(default = "default_integrator")]
    pub integrator: IntegratorConfig,
    pub initial: InitialSpec,
    #[serde(default)]
    pub checks: ChecksSpec,
}

/// Plant, feedback and (where the factory provides one) observer.
#[derive(Debug, Clone)]
pub struct BuiltPlant {
    pub plant: RetardedPlant,
    pub feedback: FeedbackLaw,
    pub observer: Option<ObserverFunctional>,
}

/// The assembled closed loop plus whatever chain it contains.
pub struct Assembly {
    pub plant: BuiltPlant,
    pub system: CoupledSystem,
    chain: ChainKind,
}

enum ChainKind {
    None,
    State(crate::predictor::StatePredictorChain),
    Output(crate::observer::OutputPredictorChain),
}

impl Assembly {
    /// Stage count of the chain, if any.
    pub fn chain_length(&self) -> Option<usize> {
        match &self.chain {
            ChainKind::None => None,
            ChainKind::State(c) => Some(c.m()),
            ChainKind::Output(c) => Some(c.m()),
        }
    }

    pub fn chain_gain(&self) -> Option<f64> {
        match &self.chain {
            ChainKind::None => None,
            ChainKind::State(c) => Some(c.gain()),
            ChainKind::Output(c) => Some(c.gain()),
        }
    }

    pub fn sub_delay(&self) -> Option<f64> {
        match &self.chain {
            ChainKind::None => None,
            ChainKind::State(c) => Some(c.sub_delay()),
            ChainKind::Output(c) => Some(c.sub_delay()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub channel: String,
    pub window: f64,
    pub threshold: f64,
    pub sup: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Everything the checks of one scenario produced.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ScenarioReport {
    pub scenario: String,
    pub chain_length: Option<usize>,
    pub chain_gain: Option<f64>,
    pub gas: Option<GasReport>,
    pub final_window: Vec<WindowReport>,
    pub identity: Option<IdentityReport>,
    pub iss: Option<IssReport>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub trace: SimulationTrace,
    pub report: ScenarioReport,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn config_error(&self, message: impl fmt::Display) -> ScenarioError {
        ScenarioError::Config {
            scenario: self.name.clone(),
            message: message.to_string(),
        }
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML,
    /// falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ScenarioError> {
        let mut root = toml::Table::try_from(self).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (path, value) = raw
                .split_once('=')
                .ok_or_else(|| ScenarioError::Override(raw.to_string()))?;
            let keys: Vec<&str> = path.trim().split('.').collect();
            if keys.iter().any(|k| k.is_empty()) {
                return Err(ScenarioError::Override(raw.to_string()));
            }
            let value = parse_value(value.trim());
            let mut table = &mut root;
            for key in &keys[..keys.len() - 1] {
                let entry = table
                    .entry(key.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                table = entry
                    .as_table_mut()
                    .ok_or_else(|| ScenarioError::Override(raw.to_string()))?;
            }
            table.insert(keys[keys.len() - 1].to_string(), value);
        }
        root.try_into()
            .map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))
    }

    /// Same scenario with every initial history set to zero.
    pub fn zero_initial(&self) -> Self {
        let mut s = self.clone();
        s.name = format!("{}-zero", self.name);
        s.initial.plant.iter_mut().for_each(|v| *v = 0.0);
        if let Some(p) = &mut s.predictor {
            if let Some(init) = &mut p.initial {
                init.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        if let Some(o) = &mut s.observer {
            if let Some(init) = &mut o.initial {
                init.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        s
    }

    pub fn build_plant(&self) -> Result<BuiltPlant, ScenarioError> {
        let sys = |source| ScenarioError::System {
            scenario: self.name.clone(),
            source,
        };
        let mut built = match &self.plant {
            PlantSpec::Pendulum(p) => {
                let plant = make_pendulum(p).map_err(sys)?;
                let observer = match self.observer.as_ref().and_then(|o| o.gain.as_ref()) {
                    Some(g) => {
                        let gain: [f64; 2] = g.as_slice().try_into().map_err(|_| {
                            self.config_error("pendulum observer gain needs 2 entries")
                        })?;
                        Some(make_pendulum_observer(p, gain).map_err(sys)?)
                    }
                    None => None,
                };
                BuiltPlant {
                    plant,
                    feedback: crate::systems::pendulum_feedback(),
                    observer,
                }
            }
            PlantSpec::ScalarIss { input_delay } => {
                let (plant, feedback) = make_scalar_iss_example(*input_delay).map_err(sys)?;
                BuiltPlant {
                    plant,
                    feedback,
                    observer: None,
                }
            }
            PlantSpec::LinearScalar(p) => BuiltPlant {
                plant: make_linear_scalar(p).map_err(sys)?,
                feedback: FeedbackLaw::zero(1, 1),
                observer: None,
            },
            PlantSpec::StrictFeedback(spec) => {
                let delays = Delays {
                    state: spec.state_delay,
                    input: spec.input_delay,
                    output: spec.output_delay,
                };
                let s = make_strict_feedback(&spec.phis, &spec.k, &spec.l, delays).map_err(sys)?;
                BuiltPlant {
                    plant: s.plant,
                    feedback: s.feedback,
                    observer: Some(s.observer),
                }
            }
        };
        if let Some(fb) = &self.feedback {
            built.feedback = FeedbackLaw::linear(fb.gain.clone()).map_err(sys)?;
        }
        Ok(built)
    }

    /// Builds the closed loop without integrating it.
    pub fn assemble(&self) -> Result<Assembly, ScenarioError> {
        let built = self.build_plant()?;
        let pred = |source| ScenarioError::Predictor {
            scenario: self.name.clone(),
            source,
        };
        let plant = &built.plant;
        let x0 = &self.initial.plant;
        if x0.len() != plant.state_dim() {
            return Err(self.config_error(format!(
                "initial.plant has {} entries, plant dimension is {}",
                x0.len(),
                plant.state_dim()
            )));
        }
        let (system, chain) = match self.controller.kind {
            ControllerKind::StateChain => {
                let spec = self.predictor.clone().unwrap_or_default();
                let eps = spec.epsilon.unwrap_or(DEFAULT_STATE_EPSILON);
                let m = match spec.m {
                    ChainLength::Fixed(m) => m,
                    ChainLength::Auto => {
                        min_chain_length(plant.lipschitz_f(), eps, plant.delays().input)
                            .map_err(pred)?
                    }
                };
                let mut chain =
                    build_state_chain(plant, built.feedback.clone(), m, eps).map_err(pred)?;
                if let Some(init) = spec.initial {
                    chain = chain.with_stage_initial(init).map_err(pred)?;
                }
                let system = assemble_closed_loop(plant, &chain, x0).map_err(pred)?;
                (system, ChainKind::State(chain))
            }
            ControllerKind::OutputChain => {
                let spec = self.observer.clone().unwrap_or_default();
                let observer = built
                    .observer
                    .clone()
                    .ok_or_else(|| self.config_error("output-chain needs an observer gain"))?;
                let eps = spec.epsilon.unwrap_or(DEFAULT_OUTPUT_EPSILON);
                let m = match spec.m {
                    ChainLength::Fixed(m) => m,
                    ChainLength::Auto => {
                        let l = observer.lipschitz();
                        let d = plant.delays();
                        min_chain_length(l + l * plant.lipschitz_h(), eps, d.input + d.output)
                            .map_err(pred)?
                    }
                };
                let mut chain = build_output_chain(plant, observer, built.feedback.clone(), m, eps)
                    .map_err(pred)?;
                if let Some(init) = spec.initial {
                    chain = chain.with_stage_initial(init).map_err(pred)?;
                }
                let system = assemble_output_closed_loop(plant, &chain, x0).map_err(pred)?;
                (system, ChainKind::Output(chain))
            }
            ControllerKind::DirectFeedback | ControllerKind::OpenLoop => {
                let open = self.controller.kind == ControllerKind::OpenLoop;
                let system = direct_loop(plant, &built.feedback, self.disturbance.clone(), open, x0)
                    .map_err(|source| ScenarioError::Integrator {
                        scenario: self.name.clone(),
                        source,
                    })?;
                (system, ChainKind::None)
            }
        };
        Ok(Assembly {
            plant: built,
            system,
            chain,
        })
    }

    /// Assembles the loop and checks the integrator grid against its delays.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let a = self.assemble()?;
        self.integrator
            .validate(a.system.delay_set())
            .map_err(|source| ScenarioError::Integrator {
                scenario: self.name.clone(),
                source,
            })
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// `u(t) = α(x(t) + μ(t))`, or `u ≡ 0` when `open`.
fn direct_loop(
    plant: &RetardedPlant,
    feedback: &FeedbackLaw,
    disturbance: Option<DisturbanceSpec>,
    open: bool,
    x0: &[f64],
) -> Result<CoupledSystem, DdeError> {
    let mut sys = CoupledSystem::new();
    let placeholder = Arc::new(|_: &Stage<'_>, out: &mut [f64]| out.fill(0.0));
    let x = sys.add_block("x", x0.to_vec(), placeholder)?;
    let alpha = feedback.clone();
    let p = plant.input_dim();
    let u = sys.add_signal(
        "u",
        p,
        Arc::new(move |snap| {
            if open {
                return vec![0.0; p];
            }
            let mu = disturbance.as_ref().map_or(0.0, |d| d.eval(snap.time()));
            let shifted: Vec<f64> = snap.block(x).iter().map(|v| v + mu).collect();
            alpha.eval(&shifted)
        }),
    )?;
    sys.set_rhs(x, plant_block(plant, x, u));
    let d = plant.delays();
    sys.add_delays([d.state, d.input]);
    sys.set_metadata("controller", if open { "open-loop" } else { "direct-feedback" });
    Ok(sys)
}

fn window_sup(trace: &SimulationTrace, norms: &[f64], window: f64) -> f64 {
    let Some(last) = norms.iter().rposition(|v| !v.is_nan()) else {
        return f64::NAN;
    };
    let end = trace.times[last];
    let tol = 1e-9 * (1.0 + end.abs());
    trace.times[..=last]
        .iter()
        .zip(norms)
        .filter(|(t, v)| **t >= end - window - tol && !v.is_nan())
        .map(|(_, v)| *v)
        .fold(0.0, f64::max)
}

/// Integrates a scenario, appends error channels and runs its checks.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioOutcome, ScenarioError> {
    let integ = |source| ScenarioError::Integrator {
        scenario: s.name.clone(),
        source,
    };
    let analysis = |source| ScenarioError::Analysis {
        scenario: s.name.clone(),
        source,
    };
    let assembly = s.assemble()?;
    let mut trace = integrate(&assembly.system, &s.integrator).map_err(integ)?;
    trace.metadata.insert("scenario".into(), s.name.clone());

    let errors: Option<StageErrors> = match &assembly.chain {
        ChainKind::None => None,
        ChainKind::State(c) => Some(extract_stage_errors(&trace, c)),
        ChainKind::Output(c) => Some(extract_output_stage_errors(&trace, c)),
    }
    .transpose()
    .map_err(|source| ScenarioError::Predictor {
        scenario: s.name.clone(),
        source,
    })?;
    if let Some(e) = &errors {
        e.append_to(&mut trace).map_err(integ)?;
    }

    let mut report = ScenarioReport {
        scenario: s.name.clone(),
        chain_length: assembly.chain_length(),
        chain_gain: assembly.chain_gain(),
        passed: true,
        ..Default::default()
    };
    if let Some(g) = &s.checks.gas {
        let r = check_gas(&trace, &g.channel, g.settle_fraction, g.horizon_fraction)
            .map_err(analysis)?;
        report.passed &= r.passed;
        report.gas = Some(r);
    }
    for w in &s.checks.final_window {
        let ch = trace
            .require(&w.channel)
            .map_err(|e| analysis(AnalysisError::Trace(e)))?;
        let sup = window_sup(&trace, &ch.norms(), w.window);
        let passed = sup < w.threshold;
        report.passed &= passed;
        report.final_window.push(WindowReport {
            channel: w.channel.clone(),
            window: w.window,
            threshold: w.threshold,
            sup,
            passed,
        });
    }
    if let Some(tol) = s.checks.identity {
        let residual = errors.as_ref().map_or(f64::NAN, |e| e.identity_residual);
        let passed = residual < tol;
        report.passed &= passed;
        report.identity = Some(IdentityReport {
            residual,
            tolerance: tol,
            passed,
        });
    }
    if let Some(settings) = &s.checks.iss {
        let base = s.disturbance.as_ref().map_or(0.0, |d| d.amplitude);
        let r = check_iss(settings, |mu| {
            if mu == base && s.disturbance.as_ref().is_none_or(|d| d.frequency.is_none()) {
                return Ok(trace.clone());
            }
            let mut variant = s.clone();
            variant.disturbance = Some(DisturbanceSpec {
                amplitude: mu,
                frequency: s.disturbance.as_ref().and_then(|d| d.frequency),
            });
            variant.checks = ChecksSpec::default();
            if let Some(t_end) = settings.disturbed_t_end {
                variant.integrator.t_end = t_end;
            }
            run_scenario(&variant).map(|o| o.trace)
        })
        .map_err(analysis)?;
        report.passed &= r.passed;
        report.iss = Some(r);
    }
    Ok(ScenarioOutcome { trace, report })
}

fn pendulum_gas() -> GasCheckSpec {
    GasCheckSpec {
        channel: "x".into(),
        settle_fraction: 0.05,
        horizon_fraction: 10.0 / 60.0,
    }
}

fn window(channel: &str, threshold: f64) -> WindowCheckSpec {
    WindowCheckSpec {
        channel: channel.into(),
        window: 10.0,
        threshold,
    }
}

/// The reference pendulum experiments plus the scalar ISS example and a
/// strict-feedback demonstration.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let pendulum_state = |name: &str, d: f64, delta: f64, m: usize, p_threshold: f64| Scenario {
        name: name.into(),
        description: format!("pendulum, state-feedback chain, d={d}, delta={delta}, m={m}"),
        plant: PlantSpec::Pendulum(PendulumParams {
            state_delay: delta,
            input_delay: d,
            ..Default::default()
        }),
        controller: ControllerSpec {
            kind: ControllerKind::StateChain,
        },
        predictor: Some(PredictorSpec {
            m: ChainLength::Fixed(m),
            epsilon: Some(0.3),
            initial: Some(vec![0.2, 0.1]),
        }),
        observer: None,
        feedback: None,
        disturbance: None,
        integrator: default_integrator(),
        initial: InitialSpec {
            plant: vec![1.0, 0.0],
        },
        checks: ChecksSpec {
            gas: Some(pendulum_gas()),
            final_window: vec![window("x", 0.05), window("u", 0.5), window("P", p_threshold)],
            identity: Some(1e-9),
            iss: None,
        },
    };
    vec![
        pendulum_state("pendulum-sf-d2", 2.0, 1.0, 4, 0.02),
        pendulum_state("pendulum-sf-d4", 4.0, 2.0, 8, 0.05),
        Scenario {
            name: "pendulum-of-d1t1".into(),
            description: "pendulum, output-feedback chain, d=tau=1, delta=2, m=20".into(),
            plant: PlantSpec::Pendulum(PendulumParams {
                state_delay: 2.0,
                input_delay: 1.0,
                output_delay: 1.0,
                ..Default::default()
            }),
            controller: ControllerSpec {
                kind: ControllerKind::OutputChain,
            },
            predictor: None,
            observer: Some(ObserverSpec {
                gain: Some(vec![1.0, 1.5]),
                m: ChainLength::Fixed(20),
                epsilon: Some(0.1),
                initial: Some(vec![0.2, 0.1]),
            }),
            feedback: None,
            disturbance: None,
            integrator: default_integrator(),
            initial: InitialSpec {
                plant: vec![1.0, 0.0],
            },
            checks: ChecksSpec {
                gas: Some(pendulum_gas()),
                final_window: vec![window("P", 0.05)],
                identity: Some(1e-9),
                iss: None,
            },
        },
        Scenario {
            name: "scalar-iss".into(),
            description: "x' = sin(x^5)/(1+x^4) + u^3 with u = -(x + mu)".into(),
            plant: PlantSpec::ScalarIss { input_delay: 0.0 },
            controller: ControllerSpec {
                kind: ControllerKind::DirectFeedback,
            },
            predictor: None,
            observer: None,
            feedback: None,
            disturbance: Some(DisturbanceSpec {
                amplitude: 0.0,
                frequency: None,
            }),
            // decay near the origin is only polynomial (x' ≈ -x³)
            integrator: IntegratorConfig::new(0.008, 8000.0, 2500),
            initial: InitialSpec { plant: vec![10.0] },
            checks: ChecksSpec {
                iss: Some(IssSettings {
                    disturbed_t_end: Some(400.0),
                    ..Default::default()
                }),
                ..Default::default()
            },
        },
        Scenario {
            name: "strict-feedback-demo".into(),
            description: "two-state strict-feedback plant, K = (-2, -3), state chain".into(),
            plant: PlantSpec::StrictFeedback(StrictFeedbackSpec {
                phis: vec![
                    PhiSpec {
                        sine: vec![0.1],
                        ..Default::default()
                    },
                    PhiSpec {
                        delayed: vec![0.0, 0.2],
                        ..Default::default()
                    },
                ],
                k: vec![-2.0, -3.0],
                l: vec![3.0, 2.0],
                state_delay: 0.5,
                input_delay: 2.0,
                output_delay: 0.0,
            }),
            controller: ControllerSpec {
                kind: ControllerKind::StateChain,
            },
            predictor: Some(PredictorSpec {
                m: ChainLength::Auto,
                epsilon: Some(0.3),
                initial: Some(vec![0.0, 0.0]),
            }),
            observer: None,
            feedback: None,
            disturbance: None,
            integrator: default_integrator(),
            initial: InitialSpec {
                plant: vec![1.0, -0.5],
            },
            checks: ChecksSpec {
                gas: Some(pendulum_gas()),
                final_window: vec![window("x", 0.05)],
                identity: Some(1e-9),
                iss: None,
            },
        },
    ]
}

/// Built-in scenario by name.
pub fn builtin(name: &str) -> Result<Scenario, ScenarioError> {
    let all = builtin_scenarios();
    let available = all.iter().map(|s| s.name.clone()).collect();
    all.into_iter()
        .find(|s| s.name == name)
        .ok_or(ScenarioError::Unknown {
            name: name.to_string(),
            available,
        })
}
