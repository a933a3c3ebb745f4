//! Sliding-window storage for vector signals with Hermite read-back.
//!
//! Every delayed term in a retarded system (`x(t - δ)`, `z_i(t - d/m)`,
//! `u(t - d)`) is answered by a [`HistorySignal`]. Samples carry both the
//! value and the time derivative, so reads between samples use cubic
//! Hermite interpolation and stay fourth-order accurate.

use std::collections::VecDeque;

use thiserror::Error;

/// Subdivisions per inter-sample interval used by [`HistorySignal::sup_norm_segment`].
const SUP_SUBDIVISIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistoryError {
    #[error("sample time {t} is not after the latest stored time {latest}")]
    NonMonotone { t: f64, latest: f64 },
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("query at t = {t} lies beyond the latest stored time {latest}")]
    Future { t: f64, latest: f64 },
    #[error("query at t = {t} is older than the retained window (oldest allowed {oldest})")]
    TooOld { t: f64, oldest: f64 },
    #[error("invalid segment [{t0}, {t1}]")]
    InvalidWindow { t0: f64, t1: f64 },
    #[error("history dimension must be positive")]
    ZeroDimension,
    #[error("history horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("non-finite sample time or value")]
    NonFinite,
}

/// Values returned for times before the first stored sample.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialFunction {
    Zero,
    Constant(Vec<f64>),
}

impl InitialFunction {
    fn write(&self, out: &mut [f64]) {
        match self {
            InitialFunction::Zero => out.fill(0.0),
            InitialFunction::Constant(v) => out.copy_from_slice(v),
        }
    }
}

/// Time-indexed record of a vector signal over a bounded look-back horizon.
#[derive(Debug, Clone)]
pub struct HistorySignal {
    dim: usize,
    horizon: f64,
    initial: InitialFunction,
    times: VecDeque<f64>,
    values: VecDeque<f64>,
    /// Right derivatives, used when a sample is the lower end of an interval.
    derivatives: VecDeque<f64>,
    /// Left derivatives, used at the upper end. They differ from the right
    /// ones only at breakpoints of the solution.
    left_derivatives: VecDeque<f64>,
    evicted: bool,
}

impl HistorySignal {
    /// Empty signal with a zero initial function.
    pub fn new(dim: usize, horizon: f64) -> Result<Self, HistoryError> {
        Self::with_initial(dim, horizon, InitialFunction::Zero)
    }

    pub fn with_initial(
        dim: usize,
        horizon: f64,
        initial: InitialFunction,
    ) -> Result<Self, HistoryError> {
        if dim == 0 {
            return Err(HistoryError::ZeroDimension);
        }
        if horizon.is_nan() || horizon <= 0.0 {
            return Err(HistoryError::BadHorizon(horizon));
        }
        if let InitialFunction::Constant(v) = &initial {
            if v.len() != dim {
                return Err(HistoryError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(HistoryError::NonFinite);
            }
        }
        Ok(Self {
            dim,
            horizon,
            initial,
            times: VecDeque::new(),
            values: VecDeque::new(),
            derivatives: VecDeque::new(),
            left_derivatives: VecDeque::new(),
            evicted: false,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial(&self) -> &InitialFunction {
        &self.initial
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn latest_time(&self) -> Option<f64> {
        self.times.back().copied()
    }

    pub fn oldest_time(&self) -> Option<f64> {
        self.times.front().copied()
    }

    /// Appends a sample. `t` must be strictly later than the latest stored time.
    pub fn push(&mut self, t: f64, value: &[f64], derivative: &[f64]) -> Result<(), HistoryError> {
        self.push_with_left(t, value, derivative, derivative)
    }

    /// Appends a sample at a point where the derivative jumps: `left` is the
    /// derivative from the past, `right` the one going forward.
    pub fn push_with_left(
        &mut self,
        t: f64,
        value: &[f64],
        right: &[f64],
        left: &[f64],
    ) -> Result<(), HistoryError> {
        for v in [value, right, left] {
            if v.len() != self.dim {
                return Err(HistoryError::DimensionMismatch {
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        if !t.is_finite() {
            return Err(HistoryError::NonFinite);
        }
        if let Some(latest) = self.latest_time() {
            if t <= latest {
                return Err(HistoryError::NonMonotone { t, latest });
            }
        }
        self.times.push_back(t);
        self.values.extend(value.iter().copied());
        self.derivatives.extend(right.iter().copied());
        self.left_derivatives.extend(left.iter().copied());
        self.evict(t);
        Ok(())
    }

    // Drop samples older than the horizon, always keeping the last one at or
    // before the boundary so reads at exactly `latest - horizon` interpolate.
    fn evict(&mut self, latest: f64) {
        let boundary = latest - self.horizon;
        while self.times.len() >= 2 && self.times[1] <= boundary {
            self.times.pop_front();
            self.values.drain(..self.dim);
            self.derivatives.drain(..self.dim);
            self.left_derivatives.drain(..self.dim);
            self.evicted = true;
        }
    }

    fn slack(latest: f64) -> f64 {
        1e-10 * (1.0 + latest.abs())
    }

    /// Clamps `t` onto the valid window, rejecting future and stale reads.
    fn admissible(&self, t: f64) -> Result<f64, HistoryError> {
        if t.is_nan() {
            return Err(HistoryError::NonFinite);
        }
        let Some(latest) = self.latest_time() else {
            return Ok(t);
        };
        let slack = Self::slack(latest);
        if t > latest {
            if t - latest <= slack {
                return Ok(latest);
            }
            return Err(HistoryError::Future { t, latest });
        }
        let oldest = latest - self.horizon;
        if t < oldest - slack {
            return Err(HistoryError::TooOld { t, oldest });
        }
        Ok(t)
    }

    /// Writes the signal value at time `t` into `out`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), HistoryError> {
        if out.len() != self.dim {
            return Err(HistoryError::DimensionMismatch {
                expected: self.dim,
                got: out.len(),
            });
        }
        let t = self.admissible(t)?;
        let n = self.times.len();
        if n == 0 || t < self.times[0] {
            if self.evicted {
                return Err(HistoryError::TooOld {
                    t,
                    oldest: self.times[0],
                });
            }
            self.initial.write(out);
            return Ok(());
        }
        // index of the first sample with time > t
        let upper = self.times.partition_point(|&s| s <= t);
        let k = upper - 1;
        if self.times[k] == t || upper == n {
            let base = k * self.dim;
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.values[base + i];
            }
            return Ok(());
        }
        let (t0, t1) = (self.times[k], self.times[upper]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let base0 = k * self.dim;
        let base1 = upper * self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            *o = h00 * self.values[base0 + i]
                + h10 * h * self.derivatives[base0 + i]
                + h01 * self.values[base1 + i]
                + h11 * h * self.left_derivatives[base1 + i];
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>, HistoryError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Sup of the Euclidean norm over `[t0, t1]`, sampled on the interior
    /// sample points, both endpoints and eight subdivisions per interval.
    pub fn sup_norm_segment(&self, t0: f64, t1: f64) -> Result<f64, HistoryError> {
        if t0.is_nan() || t1.is_nan() || t0 > t1 {
            return Err(HistoryError::InvalidWindow { t0, t1 });
        }
        let t0 = self.admissible(t0)?;
        let t1 = self.admissible(t1)?;
        let mut breaks = vec![t0];
        breaks.extend(self.times.iter().copied().filter(|&s| s > t0 && s < t1));
        breaks.push(t1);
        let mut buf = vec![0.0; self.dim];
        let mut best = 0.0_f64;
        let mut probe = |t: f64, buf: &mut [f64]| -> Result<(), HistoryError> {
            self.eval_into(t, buf)?;
            best = best.max(norm(buf));
            Ok(())
        };
        if t0 == t1 {
            probe(t0, &mut buf)?;
            return Ok(best);
        }
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            for j in 0..SUP_SUBDIVISIONS {
                let t = a + (b - a) * j as f64 / SUP_SUBDIVISIONS as f64;
                probe(t, &mut buf)?;
            }
        }
        probe(t1, &mut buf)?;
        Ok(best)
    }

    /// Iterator over stored `(time, value, derivative)` triples.
    pub fn samples(&self) -> impl Iterator<Item = (f64, Vec<f64>, Vec<f64>)> + '_ {
        (0..self.times.len()).map(move |k| {
            let base = k * self.dim;
            let v = (0..self.dim).map(|i| self.values[base + i]).collect();
            let d = (0..self.dim).map(|i| self.derivatives[base + i]).collect();
            (self.times[k], v, d)
        })
    }
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}
