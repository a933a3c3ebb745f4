//! Halanay rates and envelopes, KL-bound composition, and trajectory-level
//! GAS / ISS checks.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dde::{DdeError, SimulationTrace};

/// Relative slack used by the envelope and monotonicity checks.
pub const CHECK_SLACK: f64 = 1e-6;

const BISECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("Halanay's inequality needs a > b >= 0, got a = {a}, b = {b}")]
    HalanayHypothesis { a: f64, b: f64 },
    #[error("delay must be finite and nonnegative, got {0}")]
    BadDelay(f64),
    #[error("series value {value} at t = {t} is negative")]
    NegativeSeries { t: f64, value: f64 },
    #[error("series has {times} times but {values} values")]
    LengthMismatch { times: usize, values: usize },
    #[error("series starts at {start}, after the required {required}")]
    SeriesTooShort { start: f64, required: f64 },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("{name} must lie in (0, 1], got {value}")]
    BadFraction { name: &'static str, value: f64 },
    #[error(transparent)]
    Trace(#[from] DdeError),
}

/// Coefficients of `ẇ(t) ≤ -a w(t) + b max_{θ∈[-δ,0]} w(t+θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HalanayParams {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

impl HalanayParams {
    pub fn new(a: f64, b: f64, delta: f64) -> Result<Self, AnalysisError> {
        let p = Self { a, b, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.b >= 0.0 && self.a > self.b && self.a.is_finite()) {
            return Err(AnalysisError::HalanayHypothesis {
                a: self.a,
                b: self.b,
            });
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(AnalysisError::BadDelay(self.delta));
        }
        Ok(())
    }

    /// `φ(λ) = λ + b e^{λδ} - a`
    pub fn characteristic(&self, lambda: f64) -> f64 {
        lambda + self.b * (lambda * self.delta).exp() - self.a
    }
}

/// Positive root of `λ + b e^{λδ} = a`, by bisection on `[0, a]`.
pub fn halanay_rate(params: &HalanayParams) -> Result<f64, AnalysisError> {
    params.validate()?;
    if params.b == 0.0 {
        return Ok(params.a);
    }
    let (mut lo, mut hi) = (0.0_f64, params.a);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if params.characteristic(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `w(t) ≤ initial_sup · e^{-λ(t - t0)}`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayEnvelope {
    pub t0: f64,
    pub initial_sup: f64,
    pub lambda: f64,
}

impl DecayEnvelope {
    pub fn eval(&self, t: f64) -> f64 {
        self.initial_sup * (-self.lambda * (t - self.t0)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub holds: bool,
    /// Smallest `(envelope - w) / initial_sup` over grid points `t ≥ t0`.
    pub margin: f64,
    pub first_violation: Option<f64>,
    pub envelope: DecayEnvelope,
}

/// Tests a sampled nonnegative series against the Halanay envelope.
pub fn check_halanay_envelope(
    times: &[f64],
    w: &[f64],
    params: &HalanayParams,
    t0: f64,
) -> Result<EnvelopeReport, AnalysisError> {
    if times.len() != w.len() {
        return Err(AnalysisError::LengthMismatch {
            times: times.len(),
            values: w.len(),
        });
    }
    let lambda = halanay_rate(params)?;
    let Some(&start) = times.first() else {
        return Err(AnalysisError::EmptyTrace);
    };
    let required = t0 - params.delta;
    if start > required + 1e-9 * (1.0 + required.abs()) {
        return Err(AnalysisError::SeriesTooShort { start, required });
    }
    if let Some((t, v)) = times.iter().zip(w).find(|(_, v)| **v < 0.0) {
        return Err(AnalysisError::NegativeSeries { t: *t, value: *v });
    }
    let tol = 1e-9 * (1.0 + t0.abs());
    let initial_sup = times
        .iter()
        .zip(w)
        .filter(|(t, _)| **t >= required - tol && **t <= t0 + tol)
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    let envelope = DecayEnvelope {
        t0,
        initial_sup,
        lambda,
    };
    let scale = if initial_sup > 0.0 { initial_sup } else { 1.0 };
    let mut margin = f64::INFINITY;
    let mut first_violation = None;
    for (&t, &v) in times.iter().zip(w) {
        if t < t0 - tol {
            continue;
        }
        let env = envelope.eval(t);
        margin = margin.min((env - v) / scale);
        if first_violation.is_none() && v > env * (1.0 + CHECK_SLACK) {
            first_violation = Some(t);
        }
    }
    Ok(EnvelopeReport {
        holds: first_violation.is_none(),
        margin,
        first_violation,
        envelope,
    })
}

type KlFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type KFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Class-K function.
#[derive(Clone)]
pub enum KFunction {
    Zero,
    /// `γ(r) = c r`
    Linear(f64),
    Custom(KFn),
}

impl fmt::Debug for KFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KFunction::Zero => write!(f, "Zero"),
            KFunction::Linear(c) => write!(f, "Linear({c})"),
            KFunction::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl KFunction {
    pub fn identity() -> Self {
        KFunction::Linear(1.0)
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            KFunction::Zero => 0.0,
            KFunction::Linear(c) => c * r,
            KFunction::Custom(g) => g(r),
        }
    }
}

/// Class-KL bound `β(r, t)`.
#[derive(Clone)]
pub enum KLBound {
    Zero,
    /// `β(r, t) = c r e^{-λt}`
    Exponential { c: f64, lambda: f64 },
    Custom(KlFn),
}

impl fmt::Debug for KLBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KLBound::Zero => write!(f, "Zero"),
            KLBound::Exponential { c, lambda } => {
                write!(f, "Exponential {{ c: {c}, lambda: {lambda} }}")
            }
            KLBound::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Outcome of sampling the KL shape conditions on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KlGridReport {
    pub nondecreasing_in_r: bool,
    pub nonincreasing_in_t: bool,
    pub zero_at_zero: bool,
}

impl KlGridReport {
    pub fn holds(&self) -> bool {
        self.nondecreasing_in_r && self.nonincreasing_in_t && self.zero_at_zero
    }
}

impl KLBound {
    pub fn eval(&self, r: f64, t: f64) -> f64 {
        match self {
            KLBound::Zero => 0.0,
            KLBound::Exponential { c, lambda } => c * r * (-lambda * t).exp(),
            KLBound::Custom(b) => b(r, t),
        }
    }

    /// Checks monotonicity and `β(0, t) = 0` on `rs × ts` (both sorted ascending).
    pub fn check_on_grid(&self, rs: &[f64], ts: &[f64]) -> KlGridReport {
        let tol = |a: f64, b: f64| 1e-12 * (1.0 + a.abs().max(b.abs()));
        let mut report = KlGridReport {
            nondecreasing_in_r: true,
            nonincreasing_in_t: true,
            zero_at_zero: true,
        };
        for &t in ts {
            if self.eval(0.0, t).abs() > 0.0 {
                report.zero_at_zero = false;
            }
            for w in rs.windows(2) {
                let (lo, hi) = (self.eval(w[0], t), self.eval(w[1], t));
                if lo > hi + tol(lo, hi) {
                    report.nondecreasing_in_r = false;
                }
            }
        }
        for &r in rs {
            for w in ts.windows(2) {
                let (early, late) = (self.eval(r, w[0]), self.eval(r, w[1]));
                if late > early + tol(early, late) {
                    report.nonincreasing_in_t = false;
                }
            }
        }
        report
    }
}

/// Ingredients of the cascade bound. The barred functions are supplied by
/// the caller rather than derived.
#[derive(Debug, Clone)]
pub struct KlComposition {
    pub beta1: KLBound,
    pub beta1_bar: KLBound,
    pub gamma1: KFunction,
    pub gamma1_bar: KFunction,
    pub beta2_bar: KLBound,
}

/// `β(r,t) = β̄₁(β₁(r,t/2) + γ₁(β̄₂(r,0)), t/2) + γ̄₁(β̄₂(r,t/2)) + β̄₂(r,t)`
pub fn compose_kl(parts: KlComposition) -> KLBound {
    KLBound::Custom(Arc::new(move |r, t| {
        let half = 0.5 * t;
        let p = &parts;
        let inner = p.beta1.eval(r, half) + p.gamma1.eval(p.beta2_bar.eval(r, 0.0));
        p.beta1_bar.eval(inner, half)
            + p.gamma1_bar.eval(p.beta2_bar.eval(r, half))
            + p.beta2_bar.eval(r, t)
    }))
}

/// Result of [`check_gas`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GasReport {
    pub channel: String,
    pub passed: bool,
    pub settled: bool,
    pub monotone: bool,
    /// Norm of the channel at the first recorded time; histories start constant.
    pub initial_sup: f64,
    /// Sup over the final `horizon_fraction` of the run.
    pub final_sup: f64,
    pub threshold: f64,
    /// Sups over consecutive windows of length `horizon_fraction · T`.
    pub window_sups: Vec<f64>,
    /// Largest increase between consecutive window sups after the peak window.
    pub worst_increase: f64,
}

/// Empirical GAS test on one trace channel.
///
/// Passes when the sup over the final window is below
/// `settle_fraction · initial_sup` and, from the window holding the overall
/// peak onwards, the window sups never increase by more than
/// `1e-6 · max(initial_sup, peak)`. Transient overshoot before the peak is
/// allowed; a rebound after it is not.
pub fn check_gas(
    trace: &SimulationTrace,
    channel: &str,
    settle_fraction: f64,
    horizon_fraction: f64,
) -> Result<GasReport, AnalysisError> {
    for (name, value) in [
        ("settle_fraction", settle_fraction),
        ("horizon_fraction", horizon_fraction),
    ] {
        if !(value > 0.0 && value <= 1.0) {
            return Err(AnalysisError::BadFraction { name, value });
        }
    }
    let ch = trace.require(channel)?;
    if trace.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let norms = ch.norms();
    let t_start = trace.times[0];
    let t_end = *trace.times.last().expect("nonempty");
    let width = horizon_fraction * (t_end - t_start);
    let initial_sup = norms[0];

    let tol = 1e-9 * (1.0 + t_end.abs());
    let windows = ((t_end - t_start) / width - 1e-9).ceil().max(1.0) as usize;
    let mut window_sups = vec![0.0_f64; windows];
    for (&t, &v) in trace.times.iter().zip(&norms) {
        if v.is_nan() {
            continue;
        }
        // windows counted backwards from the end so the last one is exact
        let back = ((t_end - t) / width - tol / width).max(0.0).floor() as usize;
        let idx = windows - 1 - back.min(windows - 1);
        window_sups[idx] = window_sups[idx].max(v);
    }
    let final_sup = trace
        .times
        .iter()
        .zip(&norms)
        .filter(|(t, v)| **t >= t_end - width - tol && !v.is_nan())
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    let threshold = settle_fraction * initial_sup;
    let settled = final_sup < threshold;
    let peak = window_sups
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > window_sups[best] { i } else { best });
    let slack = CHECK_SLACK * initial_sup.max(window_sups[peak]);
    let worst_increase = window_sups[peak..]
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let monotone = worst_increase <= slack && final_sup.is_finite();
    Ok(GasReport {
        channel: channel.to_string(),
        passed: settled && monotone,
        settled,
        monotone,
        initial_sup,
        final_sup,
        threshold,
        window_sups,
        worst_increase,
    })
}

/// Settings for [`check_iss`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IssSettings {
    pub channel: String,
    pub amplitudes: Vec<f64>,
    /// Fraction of each run, counted from the end, defining the ultimate bound.
    pub tail_fraction: f64,
    /// Zero-disturbance run must end below `zero_tolerance · ‖x(0)‖`.
    pub zero_tolerance: f64,
    /// Horizon of the disturbed runs, if shorter than the base run's.
    pub disturbed_t_end: Option<f64>,
}

impl Default for IssSettings {
    fn default() -> Self {
        Self {
            channel: "x".into(),
            amplitudes: vec![0.1, 0.5, 1.0],
            tail_fraction: 0.1,
            zero_tolerance: 1e-3,
            disturbed_t_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IssRun {
    pub amplitude: f64,
    pub ultimate_bound: f64,
    pub final_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IssReport {
    pub passed: bool,
    pub zero_converged: bool,
    pub zero_final_ratio: f64,
    pub bounds_nondecreasing: bool,
    pub runs: Vec<IssRun>,
    /// Amplitude of the first run that failed or produced non-finite values.
    pub divergence: Option<f64>,
    pub message: Option<String>,
}

/// Runs `simulate(μ)` for `μ = 0` and each amplitude and checks the ISS
/// signature: the undisturbed run converges and ultimate bounds are finite
/// and nondecreasing in the amplitude.
pub fn check_iss<E: fmt::Display>(
    settings: &IssSettings,
    mut simulate: impl FnMut(f64) -> Result<SimulationTrace, E>,
) -> Result<IssReport, AnalysisError> {
    if !(settings.tail_fraction > 0.0 && settings.tail_fraction <= 1.0) {
        return Err(AnalysisError::BadFraction {
            name: "tail_fraction",
            value: settings.tail_fraction,
        });
    }
    let mut amplitudes = vec![0.0];
    amplitudes.extend(settings.amplitudes.iter().copied());
    let mut runs = Vec::with_capacity(amplitudes.len());
    let mut report = IssReport {
        passed: false,
        zero_converged: false,
        zero_final_ratio: f64::NAN,
        bounds_nondecreasing: false,
        runs: Vec::new(),
        divergence: None,
        message: None,
    };
    for &mu in &amplitudes {
        let trace = match simulate(mu) {
            Ok(t) => t,
            Err(e) => {
                report.divergence = Some(mu);
                report.message = Some(e.to_string());
                report.runs = runs;
                return Ok(report);
            }
        };
        if trace.is_empty() {
            return Err(AnalysisError::EmptyTrace);
        }
        let norms = trace.require(&settings.channel)?.norms();
        let t_end = *trace.times.last().expect("nonempty");
        let from = t_end - settings.tail_fraction * (t_end - trace.times[0]);
        let ultimate = trace
            .times
            .iter()
            .zip(&norms)
            .filter(|(t, _)| **t >= from)
            .map(|(_, v)| *v)
            .fold(0.0, |acc: f64, v| if v.is_nan() { f64::NAN } else { acc.max(v) });
        let final_norm = *norms.last().expect("nonempty");
        if !ultimate.is_finite() || !final_norm.is_finite() {
            report.divergence = Some(mu);
            report.message = Some("non-finite state".into());
            report.runs = runs;
            return Ok(report);
        }
        if mu == 0.0 {
            let ratio = if norms[0] > 0.0 {
                final_norm / norms[0]
            } else {
                final_norm
            };
            report.zero_final_ratio = ratio;
            report.zero_converged = ratio < settings.zero_tolerance;
        }
        runs.push(IssRun {
            amplitude: mu,
            ultimate_bound: ultimate,
            final_norm,
        });
    }
    report.bounds_nondecreasing = runs[1..]
        .windows(2)
        .all(|w| w[1].ultimate_bound >= w[0].ultimate_bound);
    report.passed = report.zero_converged && report.bounds_nondecreasing;
    report.runs = runs;
    Ok(report)
}
