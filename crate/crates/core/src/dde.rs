//! Fixed-step RK4 for coupled retarded systems by the method of steps.
//!
//! A [`CoupledSystem`] is a list of state blocks (plant, predictor stages,
//! observer stages) plus algebraic signals such as the control `u`. Delayed
//! arguments inside each RK stage are read from per-block
//! [`HistorySignal`]s at `stage time - lag`; after every accepted step the
//! new value and its derivative are appended to every history.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::history::{norm, HistoryError, HistorySignal, InitialFunction};

/// Any state component above this magnitude aborts the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Relative tolerance for "step divides delay".
const DIVISIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DdeError {
    #[error("integrator step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("integration end time must be positive and finite, got {0}")]
    BadEnd(f64),
    #[error("record stride must be at least 1")]
    BadStride,
    #[error("step {step} does not divide delay {delay}")]
    DelayNotMultiple { delay: f64, step: f64 },
    #[error("step {step} exceeds the smallest delay {delay}")]
    StepTooLarge { step: f64, delay: f64 },
    #[error("block `{block}` has initial vector of length {got}, expected {expected}")]
    InitialDimension {
        block: String,
        expected: usize,
        got: usize,
    },
    #[error("state diverged at t = {t} in block `{block}`")]
    Divergence { t: f64, block: String },
    #[error("history read failed at t = {t}: {source}")]
    History {
        t: f64,
        #[source]
        source: HistoryError,
    },
    #[error("duplicate channel name `{0}`")]
    DuplicateName(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
}

/// Step size, end time and recording stride for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub step: f64,
    pub t_end: f64,
    pub record_stride: usize,
}

impl IntegratorConfig {
    pub fn new(step: f64, t_end: f64, record_stride: usize) -> Self {
        Self {
            step,
            t_end,
            record_stride,
        }
    }

    /// Number of RK steps needed to reach `t_end`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.step).round() as usize
    }

    /// Checks step/stride sanity and that the step divides every nonzero delay.
    pub fn validate(&self, delays: &[f64]) -> Result<(), DdeError> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(DdeError::BadStep(self.step));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(DdeError::BadEnd(self.t_end));
        }
        if self.record_stride == 0 {
            return Err(DdeError::BadStride);
        }
        for &delay in delays.iter().filter(|d| **d > 0.0) {
            if self.step > delay * (1.0 + DIVISIBILITY_TOL) {
                return Err(DdeError::StepTooLarge {
                    step: self.step,
                    delay,
                });
            }
            let ratio = delay / self.step;
            if (ratio - ratio.round()).abs() > DIVISIBILITY_TOL * ratio.max(1.0) {
                return Err(DdeError::DelayNotMultiple {
                    delay,
                    step: self.step,
                });
            }
        }
        Ok(())
    }
}

/// Index of a state block inside a [`CoupledSystem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub usize);

/// Index of an algebraic signal inside a [`CoupledSystem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignalId(pub usize);

/// What a block right-hand side read during an audited evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dependency {
    Block(BlockId),
    Signal(SignalId),
}

/// Current block values at a given time.
pub struct Snapshot<'a> {
    t: f64,
    values: &'a [f64],
    offsets: &'a [usize],
}

impl<'a> Snapshot<'a> {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn block(&self, id: BlockId) -> &'a [f64] {
        &self.values[self.offsets[id.0]..self.offsets[id.0 + 1]]
    }
}

/// Read access handed to block right-hand sides during one RK stage.
pub struct Stage<'a> {
    snapshot: Snapshot<'a>,
    histories: &'a [HistorySignal],
    signal_histories: &'a [HistorySignal],
    signal_now: &'a [Vec<f64>],
    // Set for the last RK stage of a step, whose integrand lives to the
    // left of the stage time.
    left_limit: bool,
    // Whether a signal read landed on the jump at t = 0.
    touched: Cell<bool>,
    fault: RefCell<Option<HistoryError>>,
    audit: Option<RefCell<BTreeSet<Dependency>>>,
}

impl<'a> Stage<'a> {
    pub fn time(&self) -> f64 {
        self.snapshot.t
    }

    fn note(&self, dep: Dependency) {
        if let Some(audit) = &self.audit {
            audit.borrow_mut().insert(dep);
        }
    }

    fn record_fault(&self, err: HistoryError) {
        let mut slot = self.fault.borrow_mut();
        if slot.is_none() {
            *slot = Some(err);
        }
    }

    /// Value of block `id` at the current stage time.
    pub fn current(&self, id: BlockId) -> &'a [f64] {
        self.note(Dependency::Block(id));
        self.snapshot.block(id)
    }

    /// Value of block `id` at `t - lag`; `lag == 0` reads the stage value.
    pub fn delayed_into(&self, id: BlockId, lag: f64, out: &mut [f64]) {
        if lag == 0.0 {
            out.copy_from_slice(self.current(id));
            return;
        }
        self.note(Dependency::Block(id));
        if let Err(e) = self.histories[id.0].eval_into(self.snapshot.t - lag, out) {
            out.fill(0.0);
            self.record_fault(e);
        }
    }

    pub fn delayed(&self, id: BlockId, lag: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.histories[id.0].dimension()];
        self.delayed_into(id, lag, &mut out);
        out
    }

    /// Value of signal `id` at `t - lag`; `lag == 0` reads the stage value.
    ///
    /// Signals are zero before `t = 0` and generally jump there. A read that
    /// lands on `0` from the end of a step returns the left limit.
    pub fn signal(&self, id: SignalId, lag: f64) -> Vec<f64> {
        self.note(Dependency::Signal(id));
        if lag == 0.0 {
            return self.signal_now[id.0].clone();
        }
        let hist = &self.signal_histories[id.0];
        let mut out = vec![0.0; hist.dimension()];
        let at = self.snapshot.t - lag;
        let slack = 1e-10 * (1.0 + self.snapshot.t.abs());
        if at.abs() <= slack {
            self.touched.set(true);
        }
        if self.left_limit && at <= slack {
            return out;
        }
        if let Err(e) = hist.eval_into(at, &mut out) {
            out.fill(0.0);
            self.record_fault(e);
        }
        out
    }

    /// Max of `‖block(s)‖` over `s ∈ [t - window, t]`, including the stage value.
    pub fn window_sup(&self, id: BlockId, window: f64) -> f64 {
        let now = norm(self.current(id));
        let hist = &self.histories[id.0];
        let Some(latest) = hist.latest_time() else {
            return now;
        };
        let start = self.snapshot.t - window;
        if start > latest {
            return now;
        }
        let past = hist.sup_norm_segment(start, latest.min(self.snapshot.t));
        match past {
            Ok(p) => p.max(now),
            Err(e) => {
                self.record_fault(e);
                now
            }
        }
    }
}

pub type BlockRhs = Arc<dyn Fn(&Stage<'_>, &mut [f64]) + Send + Sync>;
pub type SignalFn = Arc<dyn Fn(&Snapshot<'_>) -> Vec<f64> + Send + Sync>;
pub type ProbeFn = Arc<dyn Fn(&Stage<'_>) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
struct Block {
    name: String,
    dim: usize,
    initial: Vec<f64>,
    rhs: BlockRhs,
}

#[derive(Clone)]
struct Signal {
    name: String,
    dim: usize,
    eval: SignalFn,
}

#[derive(Clone)]
struct Probe {
    name: String,
    dim: usize,
    eval: ProbeFn,
}

/// Closed-loop interconnection of state blocks and algebraic signals.
///
/// Signals (the control `u`, a disturbance) are functions of the current
/// block values; they are zero before `t = 0` and their past values are kept
/// in their own histories. Probes are recorded into the trace but never fed
/// back.
#[derive(Clone, Default)]
pub struct CoupledSystem {
    blocks: Vec<Block>,
    signals: Vec<Signal>,
    probes: Vec<Probe>,
    delays: Vec<f64>,
    metadata: BTreeMap<String, String>,
}

impl CoupledSystem {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_name(&self, name: &str) -> Result<(), DdeError> {
        let taken = self.blocks.iter().any(|b| b.name == name)
            || self.signals.iter().any(|s| s.name == name)
            || self.probes.iter().any(|p| p.name == name);
        if taken {
            Err(DdeError::DuplicateName(name.to_string()))
        } else {
            Ok(())
        }
    }

    /// Adds a state block with a constant initial function.
    pub fn add_block(
        &mut self,
        name: &str,
        initial: Vec<f64>,
        rhs: BlockRhs,
    ) -> Result<BlockId, DdeError> {
        self.check_name(name)?;
        if initial.is_empty() {
            return Err(DdeError::InitialDimension {
                block: name.to_string(),
                expected: 1,
                got: 0,
            });
        }
        self.blocks.push(Block {
            name: name.to_string(),
            dim: initial.len(),
            initial,
            rhs,
        });
        Ok(BlockId(self.blocks.len() - 1))
    }

    /// Replaces the right-hand side of a block. Used to close loops whose
    /// blocks reference each other.
    pub fn set_rhs(&mut self, id: BlockId, rhs: BlockRhs) {
        self.blocks[id.0].rhs = rhs;
    }

    pub fn add_signal(&mut self, name: &str, dim: usize, eval: SignalFn) -> Result<SignalId, DdeError> {
        self.check_name(name)?;
        self.signals.push(Signal {
            name: name.to_string(),
            dim,
            eval,
        });
        Ok(SignalId(self.signals.len() - 1))
    }

    pub fn add_probe(&mut self, name: &str, dim: usize, eval: ProbeFn) -> Result<(), DdeError> {
        self.check_name(name)?;
        self.probes.push(Probe {
            name: name.to_string(),
            dim,
            eval,
        });
        Ok(())
    }

    /// Registers delays used by delayed reads. Duplicates are merged.
    pub fn add_delays(&mut self, delays: impl IntoIterator<Item = f64>) {
        for d in delays {
            if d > 0.0 && !self.delays.iter().any(|x| (x - d).abs() <= 1e-12 * d.max(1.0)) {
                self.delays.push(d);
            }
        }
        self.delays.sort_by(f64::total_cmp);
    }

    pub fn delay_set(&self) -> &[f64] {
        &self.delays
    }

    pub fn set_metadata(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn block_names(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.name.as_str()).collect()
    }

    pub fn block_id(&self, name: &str) -> Option<BlockId> {
        self.blocks.iter().position(|b| b.name == name).map(BlockId)
    }

    pub fn signal_id(&self, name: &str) -> Option<SignalId> {
        self.signals.iter().position(|s| s.name == name).map(SignalId)
    }

    pub fn total_dimension(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.blocks.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for b in &self.blocks {
            acc += b.dim;
            offsets.push(acc);
        }
        offsets
    }

    /// Evaluates every block once at `t = 0` on the initial data and reports
    /// which blocks and signals each right-hand side read.
    pub fn audit_dependencies(&self) -> Result<BTreeMap<String, BTreeSet<String>>, DdeError> {
        let mut engine = Engine::new(self, 1.0)?;
        let y: Vec<f64> = self.blocks.iter().flat_map(|b| b.initial.clone()).collect();
        let mut out = BTreeMap::new();
        for (k, block) in self.blocks.iter().enumerate() {
            let deps = engine.audit_block(0.0, &y, k)?;
            let names = deps
                .into_iter()
                .map(|d| match d {
                    Dependency::Block(b) => self.blocks[b.0].name.clone(),
                    Dependency::Signal(s) => self.signals[s.0].name.clone(),
                })
                .collect();
            out.insert(block.name.clone(), names);
        }
        Ok(out)
    }
}

struct Engine<'s> {
    system: &'s CoupledSystem,
    offsets: Vec<usize>,
    histories: Vec<HistorySignal>,
    signal_histories: Vec<HistorySignal>,
    signal_now: Vec<Vec<f64>>,
}

impl<'s> Engine<'s> {
    fn new(system: &'s CoupledSystem, step: f64) -> Result<Self, DdeError> {
        let max_delay = system.delays.iter().copied().fold(0.0, f64::max);
        let horizon = max_delay + 2.0 * step;
        let hist_err = |source| DdeError::History { t: 0.0, source };
        let histories = system
            .blocks
            .iter()
            .map(|b| {
                let initial = if b.initial.iter().all(|c| *c == 0.0) {
                    InitialFunction::Zero
                } else {
                    InitialFunction::Constant(b.initial.clone())
                };
                HistorySignal::with_initial(b.dim, horizon, initial)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(hist_err)?;
        let signal_histories = system
            .signals
            .iter()
            .map(|s| HistorySignal::new(s.dim, horizon))
            .collect::<Result<Vec<_>, _>>()
            .map_err(hist_err)?;
        Ok(Self {
            system,
            offsets: system.offsets(),
            histories,
            signal_histories,
            signal_now: Vec::new(),
        })
    }

    fn compute_signals(&self, t: f64, y: &[f64]) -> Vec<Vec<f64>> {
        let snap = Snapshot {
            t,
            values: y,
            offsets: &self.offsets,
        };
        self.system.signals.iter().map(|s| (s.eval)(&snap)).collect()
    }

    fn stage<'b>(&'b self, t: f64, y: &'b [f64], audit: bool, left_limit: bool) -> Stage<'b> {
        Stage {
            snapshot: Snapshot {
                t,
                values: y,
                offsets: &self.offsets,
            },
            histories: &self.histories,
            signal_histories: &self.signal_histories,
            signal_now: &self.signal_now,
            left_limit,
            touched: Cell::new(false),
            fault: RefCell::new(None),
            audit: audit.then(|| RefCell::new(BTreeSet::new())),
        }
    }

    /// Full right-hand side at `(t, y)` written into `dy`. Returns whether a
    /// signal read touched the jump at `t = 0`.
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64], left_limit: bool) -> Result<bool, DdeError> {
        self.signal_now = self.compute_signals(t, y);
        let stage = self.stage(t, y, false, left_limit);
        for (k, block) in self.system.blocks.iter().enumerate() {
            let out = &mut dy[self.offsets[k]..self.offsets[k + 1]];
            (block.rhs)(&stage, out);
        }
        let touched = stage.touched.get();
        if let Some(source) = stage.fault.into_inner() {
            return Err(DdeError::History { t, source });
        }
        Ok(touched)
    }

    fn audit_block(&mut self, t: f64, y: &[f64], k: usize) -> Result<BTreeSet<Dependency>, DdeError> {
        self.signal_now = self.compute_signals(t, y);
        let stage = self.stage(t, y, true, false);
        let block = &self.system.blocks[k];
        let mut out = vec![0.0; block.dim];
        (block.rhs)(&stage, &mut out);
        if let Some(source) = stage.fault.into_inner() {
            return Err(DdeError::History { t, source });
        }
        Ok(stage.audit.map(|a| a.into_inner()).unwrap_or_default())
    }

    /// Appends `(t, y, dy)` to every block history and the signal values to
    /// the signal histories.
    /// Stores the accepted point. `left` is the derivative from the past
    /// when it differs from `dy`.
    fn push(&mut self, t: f64, y: &[f64], dy: &[f64], left: Option<&[f64]>) -> Result<(), DdeError> {
        let err = |source| DdeError::History { t, source };
        let dl = left.unwrap_or(dy);
        for (k, hist) in self.histories.iter_mut().enumerate() {
            let range = self.offsets[k]..self.offsets[k + 1];
            hist.push_with_left(t, &y[range.clone()], &dy[range.clone()], &dl[range])
                .map_err(err)?;
        }
        if self.system.signals.is_empty() {
            return Ok(());
        }
        let now = self.compute_signals(t, y);
        let right = self.signal_derivatives(t, y, dy, &now);
        let left = match left {
            Some(dl) => self.signal_derivatives(t, y, dl, &now),
            None => right.clone(),
        };
        for (j, hist) in self.signal_histories.iter_mut().enumerate() {
            hist.push_with_left(t, &now[j], &right[j], &left[j]).map_err(err)?;
        }
        self.signal_now = now;
        Ok(())
    }

    /// Signal derivatives along the direction `dy`. At t = 0 the past is
    /// the zero pre-history, so a forward difference is used there.
    fn signal_derivatives(&self, t: f64, y: &[f64], dy: &[f64], now: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let eta = 1e-6 * (1.0 + t.abs());
        let fwd: Vec<f64> = y.iter().zip(dy).map(|(v, d)| v + eta * d).collect();
        let plus = self.compute_signals(t + eta, &fwd);
        if t - eta < 0.0 {
            return plus
                .iter()
                .zip(now)
                .map(|(p, n)| p.iter().zip(n).map(|(p, n)| (p - n) / eta).collect())
                .collect();
        }
        let bwd: Vec<f64> = y.iter().zip(dy).map(|(v, d)| v - eta * d).collect();
        let minus = self.compute_signals(t - eta, &bwd);
        plus.iter()
            .zip(&minus)
            .map(|(p, m)| p.iter().zip(m).map(|(p, m)| (p - m) / (2.0 * eta)).collect())
            .collect()
    }

    fn check_finite(&self, t: f64, y: &[f64]) -> Result<(), DdeError> {
        for (k, block) in self.system.blocks.iter().enumerate() {
            let bad = y[self.offsets[k]..self.offsets[k + 1]]
                .iter()
                .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD);
            if bad {
                return Err(DdeError::Divergence {
                    t,
                    block: block.name.clone(),
                });
            }
        }
        Ok(())
    }
}

/// One recorded vector channel of a [`SimulationTrace`], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Channel {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    /// Euclidean norm per row.
    pub fn norms(&self) -> Vec<f64> {
        self.data.chunks(self.dim).map(norm).collect()
    }
}

/// Dense record of every block, signal and probe on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    pub channels: Vec<Channel>,
    pub metadata: BTreeMap<String, String>,
}

impl SimulationTrace {
    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Channel, DdeError> {
        self.channel(name)
            .ok_or_else(|| DdeError::UnknownChannel(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Time between consecutive recorded rows.
    pub fn spacing(&self) -> Option<f64> {
        if let Some(s) = self.metadata.get("record_spacing") {
            return s.parse().ok();
        }
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }

    /// Adds a channel computed after the run. `data` must have one row per time.
    pub fn push_channel(&mut self, name: &str, dim: usize, data: Vec<f64>) -> Result<(), DdeError> {
        if self.channel(name).is_some() {
            return Err(DdeError::DuplicateName(name.to_string()));
        }
        assert_eq!(data.len(), dim * self.times.len(), "channel `{name}` has wrong length");
        self.channels.push(Channel {
            name: name.to_string(),
            dim,
            data,
        });
        Ok(())
    }

    /// Column header names, `t` first, then `channel.k` with 1-based components.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for c in &self.channels {
            h.extend((1..=c.dim).map(|k| format!("{}.{}", c.name, k)));
        }
        h
    }
}

struct Recorder {
    times: Vec<f64>,
    data: Vec<Vec<f64>>,
}

/// Integrates `system` with classic RK4 and records a [`SimulationTrace`].
pub fn integrate(
    system: &CoupledSystem,
    config: &IntegratorConfig,
) -> Result<SimulationTrace, DdeError> {
    config.validate(&system.delays)?;
    let h = config.step;
    let n_steps = config.steps();
    let mut engine = Engine::new(system, h)?;
    let dim = system.total_dimension();

    let mut y: Vec<f64> = system.blocks.iter().flat_map(|b| b.initial.clone()).collect();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    let n_channels = system.blocks.len() + system.signals.len() + system.probes.len();
    let mut rec = Recorder {
        times: Vec::with_capacity(n_steps / config.record_stride + 1),
        data: vec![Vec::new(); n_channels],
    };

    engine.check_finite(0.0, &y)?;
    engine.rhs(0.0, &y, &mut k1, false)?;
    engine.push(0.0, &y, &k1, None)?;
    record(&engine, &mut rec, 0.0, &y)?;

    for n in 0..n_steps {
        let t = n as f64 * h;
        // k1 holds f(t, y), computed when y was accepted.
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        engine.rhs(t + 0.5 * h, &tmp, &mut k2, false)?;
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        engine.rhs(t + 0.5 * h, &tmp, &mut k3, false)?;
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        let t_next = (n + 1) as f64 * h;
        engine.rhs(t_next, &tmp, &mut k4, true)?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        engine.check_finite(t_next, &y)?;
        // A read on the jump at t = 0 means the derivative itself jumps here,
        // so the interval ending at t_next needs the left derivative.
        let left = if engine.rhs(t_next, &y, &mut k1, false)? {
            engine.rhs(t_next, &y, &mut k4, true)?;
            Some(k4.as_slice())
        } else {
            None
        };
        engine.push(t_next, &y, &k1, left)?;
        if (n + 1) % config.record_stride == 0 {
            record(&engine, &mut rec, t_next, &y)?;
        }
    }

    let mut channels = Vec::with_capacity(n_channels);
    let mut data = rec.data.into_iter();
    for b in &system.blocks {
        channels.push(Channel {
            name: b.name.clone(),
            dim: b.dim,
            data: data.next().unwrap_or_default(),
        });
    }
    for s in &system.signals {
        channels.push(Channel {
            name: s.name.clone(),
            dim: s.dim,
            data: data.next().unwrap_or_default(),
        });
    }
    for p in &system.probes {
        channels.push(Channel {
            name: p.name.clone(),
            dim: p.dim,
            data: data.next().unwrap_or_default(),
        });
    }
    let mut metadata = system.metadata.clone();
    metadata.insert("step".into(), config.step.to_string());
    metadata.insert("t_end".into(), config.t_end.to_string());
    metadata.insert("record_stride".into(), config.record_stride.to_string());
    metadata.insert(
        "record_spacing".into(),
        (config.step * config.record_stride as f64).to_string(),
    );
    Ok(SimulationTrace {
        times: rec.times,
        channels,
        metadata,
    })
}

fn record(engine: &Engine<'_>, rec: &mut Recorder, t: f64, y: &[f64]) -> Result<(), DdeError> {
    rec.times.push(t);
    let nb = engine.system.blocks.len();
    for k in 0..nb {
        rec.data[k].extend_from_slice(&y[engine.offsets[k]..engine.offsets[k + 1]]);
    }
    let ns = engine.system.signals.len();
    for j in 0..ns {
        rec.data[nb + j].extend_from_slice(&engine.signal_now[j]);
    }
    if !engine.system.probes.is_empty() {
        let stage = engine.stage(t, y, false, false);
        for (p, probe) in engine.system.probes.iter().enumerate() {
            let v = (probe.eval)(&stage);
            rec.data[nb + ns + p].extend_from_slice(&v);
        }
        if let Some(source) = stage.fault.into_inner() {
            return Err(DdeError::History { t, source });
        }
    }
    Ok(())
}
