use std::sync::Arc;

use proptest::prelude::*;

use seqpred::analysis::{
    check_gas, check_halanay_envelope, check_iss, compose_kl, halanay_rate, HalanayParams, IssSettings,
    KFunction, KLBound, KlComposition,
};
use seqpred::dde::{integrate, CoupledSystem, DdeError, IntegratorConfig, SimulationTrace, Stage};

/// Two-level grid scan for the sign change of λ + b e^{λδ} - a on [0, a].
fn scan_root(a: f64, b: f64, delta: f64) -> f64 {
    let phi = |l: f64| l + b * (l * delta).exp() - a;
    let mut lo = 0.0;
    let mut width = a;
    for _ in 0..4 {
        let n = 1000;
        let h = width / n as f64;
        let k = (0..n).find(|&k| phi(lo + (k + 1) as f64 * h) >= 0.0).unwrap();
        lo += k as f64 * h;
        width = h;
    }
    lo + 0.5 * width
}

#[test]
fn rate_matches_grid_scan() {
    for (a, b, delta) in [(2.0, 1.0, 1.0), (3.0, 0.5, 2.0), (1.0, 0.9, 0.1), (5.0, 4.0, 0.01)] {
        let p = HalanayParams::new(a, b, delta).unwrap();
        let lambda = halanay_rate(&p).unwrap();
        assert!(p.characteristic(lambda).abs() < 1e-10);
        assert!((lambda - scan_root(a, b, delta)).abs() < 1e-6, "{a} {b} {delta}");
    }
    let lambda = halanay_rate(&HalanayParams::new(2.0, 1.0, 1.0).unwrap()).unwrap();
    assert!((lambda - 0.44285).abs() < 1e-5);
    assert_eq!(halanay_rate(&HalanayParams::new(2.5, 0.0, 3.0).unwrap()).unwrap(), 2.5);
    assert!(HalanayParams::new(1.0, 1.0, 1.0).is_err());
}

/// ẇ = -a w + b sup_{[t-δ, t]} w with w ≡ w0 on [-δ, 0].
fn halanay_system(a: f64, b: f64, delta: f64, w0: f64) -> SimulationTrace {
    let mut sys = CoupledSystem::new();
    let w = sys
        .add_block("w", vec![w0], Arc::new(|_: &Stage<'_>, out: &mut [f64]| out.fill(0.0)))
        .unwrap();
    sys.set_rhs(
        w,
        Arc::new(move |s: &Stage<'_>, out: &mut [f64]| {
            out[0] = -a * s.current(w)[0] + b * s.window_sup(w, delta);
        }),
    );
    sys.add_delays([delta]);
    integrate(&sys, &IntegratorConfig::new(0.01, 20.0, 1)).unwrap()
}

#[test]
fn simulated_halanay_system_respects_envelope() {
    for (a, b, delta, w0) in [(2.0, 1.0, 1.0, 1.0), (1.0, 0.8, 0.5, 3.0), (4.0, 3.5, 2.0, 0.2)] {
        let trace = halanay_system(a, b, delta, w0);
        let w = &trace.channel("w").unwrap().data;
        // prepend the constant initial history
        let mut times = vec![-delta];
        times.extend(&trace.times);
        let mut values = vec![w0];
        values.extend(w);
        let p = HalanayParams::new(a, b, delta).unwrap();
        let report = check_halanay_envelope(&times, &values, &p, 0.0).unwrap();
        assert!(report.holds, "{a} {b} {delta}: {report:?}");
        assert!(report.margin > -1e-6);
        assert_eq!(report.envelope.initial_sup, w0);
    }
}

#[test]
fn envelope_rejects_slow_decay() {
    let p = HalanayParams::new(2.0, 1.0, 1.0).unwrap();
    let times: Vec<f64> = (-100..=1000).map(|k| k as f64 * 0.01).collect();
    let slow: Vec<f64> = times.iter().map(|t| (-0.3 * t.max(0.0)).exp()).collect();
    let fast: Vec<f64> = times.iter().map(|t| (-0.5 * t.max(0.0)).exp()).collect();
    assert!(!check_halanay_envelope(&times, &slow, &p, 0.0).unwrap().holds);
    assert!(check_halanay_envelope(&times, &fast, &p, 0.0).unwrap().holds);
    assert!(check_halanay_envelope(&times[200..], &fast[200..], &p, 0.0).is_err());
}

fn exp_bound(c: f64, lambda: f64) -> KLBound {
    KLBound::Exponential { c, lambda }
}

#[test]
fn composition_examples() {
    let unit = || exp_bound(1.0, 1.0);
    let beta = compose_kl(KlComposition {
        beta1: unit(),
        beta1_bar: unit(),
        gamma1: KFunction::identity(),
        gamma1_bar: KFunction::identity(),
        beta2_bar: unit(),
    });
    assert!((beta.eval(1.0, 0.0) - 4.0).abs() < 1e-15);
    // by hand at t = 2: e^{-1}(e^{-1} + 1) + e^{-1} + e^{-2}
    let e = std::f64::consts::E;
    let expect = (1.0 / e + 1.0) / e + 1.0 / e + 1.0 / (e * e);
    assert!((beta.eval(1.0, 2.0) - expect).abs() < 1e-14);

    let zero = compose_kl(KlComposition {
        beta1: KLBound::Zero,
        beta1_bar: KLBound::Zero,
        gamma1: KFunction::Zero,
        gamma1_bar: KFunction::Zero,
        beta2_bar: KLBound::Zero,
    });
    for r in [0.0, 1.0, 10.0] {
        for t in [0.0, 1.0, 5.0] {
            assert_eq!(zero.eval(r, t), 0.0);
        }
    }
}

proptest! {
    #[test]
    fn composition_stays_class_kl(
        c in prop::array::uniform3(0.1f64..5.0),
        l in prop::array::uniform3(0.05f64..3.0),
        g in prop::array::uniform2(0.0f64..4.0),
    ) {
        let beta = compose_kl(KlComposition {
            beta1: exp_bound(c[0], l[0]),
            beta1_bar: exp_bound(c[1], l[1]),
            gamma1: KFunction::Linear(g[0]),
            gamma1_bar: KFunction::Linear(g[1]),
            beta2_bar: exp_bound(c[2], l[2]),
        });
        let rs: Vec<f64> = (0..20).map(|k| k as f64 * 0.5).collect();
        let ts: Vec<f64> = (0..20).map(|k| k as f64 * 0.7).collect();
        prop_assert!(beta.check_on_grid(&rs, &ts).holds());
    }
}

fn synthetic(values: impl Fn(f64) -> f64) -> SimulationTrace {
    let times: Vec<f64> = (0..=600).map(|k| k as f64 * 0.1).collect();
    let data = times.iter().map(|t| values(*t)).collect();
    let mut trace = SimulationTrace {
        times,
        ..Default::default()
    };
    trace.push_channel("x", 1, data).unwrap();
    trace
}

#[test]
fn gas_on_synthetic_channels() {
    let decaying = check_gas(&synthetic(|t| 2.0 * (-0.2 * t).exp()), "x", 0.05, 1.0 / 6.0).unwrap();
    assert!(decaying.passed && decaying.settled && decaying.monotone);
    assert_eq!(decaying.initial_sup, 2.0);
    assert_eq!(decaying.window_sups.len(), 6);

    let constant = check_gas(&synthetic(|_| 1.0), "x", 0.05, 1.0 / 6.0).unwrap();
    assert!(!constant.passed && !constant.settled);

    // converges, then grows again: settled fails first, monotone fails too
    let rebound = check_gas(&synthetic(|t| if t < 40.0 { (-0.3 * t).exp() } else { 1e-3 * (t - 39.0) }), "x", 0.05, 1.0 / 6.0)
        .unwrap();
    assert!(!rebound.monotone);
    assert!(!rebound.passed);

    assert!(check_gas(&synthetic(|_| 1.0), "nope", 0.05, 0.1).is_err());
    assert!(check_gas(&synthetic(|_| 1.0), "x", 0.0, 0.1).is_err());
}

/// ẋ = a x + μ on one block.
fn linear_run(a: f64, mu: f64) -> Result<SimulationTrace, DdeError> {
    let mut sys = CoupledSystem::new();
    let x = sys
        .add_block("x", vec![1.0], Arc::new(|_: &Stage<'_>, out: &mut [f64]| out.fill(0.0)))
        .unwrap();
    sys.set_rhs(
        x,
        Arc::new(move |s: &Stage<'_>, out: &mut [f64]| out[0] = a * s.current(x)[0] + mu),
    );
    integrate(&sys, &IntegratorConfig::new(0.01, 20.0, 10))
}

#[test]
fn iss_separates_stable_and_unstable() {
    let settings = IssSettings::default();
    let stable = check_iss(&settings, |mu| linear_run(-1.0, mu)).unwrap();
    assert!(stable.passed, "{stable:?}");
    assert!(stable.bounds_nondecreasing);
    // ultimate bound of ẋ = -x + μ is μ
    for run in &stable.runs[1..] {
        assert!((run.ultimate_bound - run.amplitude).abs() < 1e-6);
    }

    let unstable = check_iss(&settings, |mu| linear_run(1.0, mu)).unwrap();
    assert!(!unstable.passed);
    assert!(!unstable.zero_converged);

    let broken = check_iss(&settings, |mu| {
        if mu > 0.4 {
            Err("solver blew up")
        } else {
            linear_run(-1.0, mu).map_err(|_| "x")
        }
    })
    .unwrap();
    assert!(!broken.passed);
    assert_eq!(broken.divergence, Some(0.5));
}
