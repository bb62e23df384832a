//! Monte Carlo checks of the churn generator against closed-form M/M/inf
//! quantities: exponential holding times, Poisson arrivals, stable size.

use dynex_core::churn::{build_schedule, survival, ChurnConfig, Schedule};

fn big(seed: u64) -> Schedule {
    build_schedule(&ChurnConfig::new(1.0, 1000, 100_000, seed)).unwrap()
}

#[test]
fn mean_holding_time_is_n_over_lambda() {
    let s = big(3);
    let h: Vec<f64> = s.lifetimes.iter().map(|l| l.holding).collect();
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    assert!(h.len() > 90_000);
    assert!((mean - 1000.0).abs() < 0.05 * 1000.0, "mean holding {mean}");
}

#[test]
fn survival_follows_the_exponential_tail() {
    let s = big(4);
    let n = 1000.0f64;
    for t in [n / 2.0, n, 2.0 * n, n * n.ln()] {
        let (p, se) = survival(&s.lifetimes, t);
        let expect = (-t / n).exp();
        assert!(
            (p - expect).abs() <= 3.0 * se.max(1e-4),
            "t={t}: {p} vs {expect} (se {se})"
        );
    }
    // The lifetime that outlasts n ln n has probability 1/n.
    let count = s.lifetimes.iter().filter(|l| l.holding > n * n.ln()).count() as f64;
    let trials = s.lifetimes.len() as f64;
    let sd = (trials / n).sqrt();
    assert!((count - trials / n).abs() <= 3.0 * sd, "{count} long-lived of {trials}");
}

#[test]
fn inter_arrival_mean_is_one_over_lambda() {
    let s = build_schedule(&ChurnConfig::new(2.5, 500, 40_000, 9)).unwrap();
    let mut arrivals: Vec<f64> = s.lifetimes.iter().map(|l| l.arrival).collect();
    arrivals.sort_by(f64::total_cmp);
    let gaps: Vec<f64> = arrivals.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!((mean - 0.4).abs() < 0.02 * 0.4, "mean gap {mean}");
    assert!(gaps.iter().all(|&g| g >= 0.0));
}

#[test]
fn alive_count_settles_near_n() {
    let s = build_schedule(&ChurnConfig::new(1.0, 1000, 20_000, 5)).unwrap();
    let counts = s.alive_counts();
    let tail = &counts[5000..];
    let mean = tail.iter().sum::<usize>() as f64 / tail.len() as f64;
    assert!((mean - 1000.0).abs() < 50.0, "mean alive {mean}");
}

#[test]
fn round_spans_agree_with_continuous_draws() {
    let s = build_schedule(&ChurnConfig::new(1.0, 200, 3000, 6)).unwrap();
    for (span, l) in s.spans().iter().zip(&s.lifetimes) {
        assert_eq!(span.join, l.arrival.floor() as u64);
        let leave = l.arrival + l.holding;
        if leave < 3001.0 {
            assert_eq!(span.leave, Some(leave.floor() as u64));
        } else {
            assert_eq!(span.leave, None);
        }
    }
}

#[test]
fn schedules_are_a_function_of_the_seed() {
    let cfg = ChurnConfig::new(1.0, 300, 2000, 8);
    let a = build_schedule(&cfg).unwrap();
    let b = build_schedule(&cfg).unwrap();
    assert_eq!(a.events, b.events);
    let c = build_schedule(&ChurnConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(a.events, c.events);
}
