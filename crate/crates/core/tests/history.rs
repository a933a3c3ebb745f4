use proptest::prelude::*;
use seqpred::history::{HistoryError, HistorySignal, InitialFunction};

fn cubic(t: f64) -> (f64, f64) {
    (0.5 * t * t * t - t * t + 2.0, 1.5 * t * t - 2.0 * t)
}

#[test]
fn initial_function_before_first_sample() {
    let mut h = HistorySignal::with_initial(2, 5.0, InitialFunction::Constant(vec![1.0, -2.0])).unwrap();
    assert_eq!(h.eval(-3.0).unwrap(), vec![1.0, -2.0]);
    h.push(0.0, &[1.0, -2.0], &[0.0, 0.0]).unwrap();
    assert_eq!(h.eval(-0.5).unwrap(), vec![1.0, -2.0]);
}

#[test]
fn rejects_bad_input() {
    assert_eq!(HistorySignal::new(0, 1.0).unwrap_err(), HistoryError::ZeroDimension);
    assert!(matches!(HistorySignal::new(1, 0.0), Err(HistoryError::BadHorizon(_))));
    let mut h = HistorySignal::new(1, 1.0).unwrap();
    h.push(0.0, &[0.0], &[0.0]).unwrap();
    assert!(matches!(h.push(0.0, &[1.0], &[0.0]), Err(HistoryError::NonMonotone { .. })));
    assert!(matches!(h.push(1.0, &[1.0, 2.0], &[0.0]), Err(HistoryError::DimensionMismatch { .. })));
    assert!(matches!(h.eval(0.5), Err(HistoryError::Future { .. })));
}

#[test]
fn eviction_keeps_the_horizon_readable() {
    let mut h = HistorySignal::new(1, 1.0).unwrap();
    for k in 0..=100 {
        let t = k as f64 * 0.1;
        h.push(t, &[t], &[1.0]).unwrap();
    }
    assert!(h.len() < 20);
    assert!((h.eval(9.0).unwrap()[0] - 9.0).abs() < 1e-12);
    assert!((h.eval(9.05).unwrap()[0] - 9.05).abs() < 1e-12);
    assert!(matches!(h.eval(8.5), Err(HistoryError::TooOld { .. })));
    // a read before the first retained sample is stale, not the initial function
    assert!(h.eval(-1.0).is_err());
}

#[test]
fn sup_norm_over_segment() {
    let mut h = HistorySignal::new(1, 10.0).unwrap();
    // sin on a fine grid: the sup over [0, π] is 1 at π/2
    let n = 64;
    for k in 0..=n {
        let t = std::f64::consts::PI * k as f64 / n as f64;
        h.push(t, &[t.sin()], &[t.cos()]).unwrap();
    }
    let s = h.sup_norm_segment(0.0, std::f64::consts::PI).unwrap();
    assert!((s - 1.0).abs() < 1e-6);
    assert!(h.sup_norm_segment(1.0, 0.5).is_err());
}

proptest! {
    #[test]
    fn stored_samples_read_back_exactly(values in prop::collection::vec(-1e6f64..1e6, 2..60), step in 0.001f64..2.0) {
        let mut h = HistorySignal::new(1, 1e9).unwrap();
        for (k, v) in values.iter().enumerate() {
            h.push(k as f64 * step, &[*v], &[0.0]).unwrap();
        }
        for (k, v) in values.iter().enumerate() {
            prop_assert_eq!(h.eval(k as f64 * step).unwrap()[0], *v);
        }
    }

    #[test]
    fn cubics_are_reproduced(t0 in -5.0f64..5.0, step in 0.01f64..1.0, frac in 0.0f64..1.0) {
        let mut h = HistorySignal::new(1, 100.0).unwrap();
        for k in 0..6 {
            let t = t0 + k as f64 * step;
            let (v, d) = cubic(t);
            h.push(t, &[v], &[d]).unwrap();
        }
        let t = t0 + (2.0 + frac) * step;
        let got = h.eval(t).unwrap()[0];
        let want = cubic(t).0;
        prop_assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()));
    }

    #[test]
    fn reads_are_deterministic(values in prop::collection::vec(-10.0f64..10.0, 3..30), q in 0.0f64..1.0) {
        let build = || {
            let mut h = HistorySignal::new(1, 1e3).unwrap();
            for (k, v) in values.iter().enumerate() {
                h.push(k as f64, &[*v], &[-v]).unwrap();
            }
            h
        };
        let t = q * (values.len() - 1) as f64;
        prop_assert_eq!(build().eval(t).unwrap()[0].to_bits(), build().eval(t).unwrap()[0].to_bits());
    }
}
