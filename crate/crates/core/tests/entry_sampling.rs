//! Chi-square checks on entry-manager sampling and eviction.

use rand::SeedableRng;

use dynex_core::churn::{build_schedule, ChurnConfig, EventKind};
use dynex_core::entry::EntryState;
use dynex_core::rng::SimRng;
use dynex_core::NodeId;

// Upper 0.1% and 1% points of the chi-square distribution.
const CHI2_999_DF49: f64 = 85.35;
const CHI2_999_DF99: f64 = 148.23;
const CHI2_99_DF49: f64 = 74.92;

fn chi_square(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expect = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum()
}

fn full(n: u32, rng: &mut SimRng) -> EntryState {
    let mut e = EntryState::new(n as usize);
    for i in 0..n {
        e.register(NodeId(i), rng);
    }
    e
}

#[test]
fn candidates_are_uniform_over_the_list() {
    let mut rng = SimRng::seed_from_u64(21);
    let e = full(100, &mut rng);
    let mut counts = vec![0u64; 100];
    for _ in 0..20_000 {
        for c in e.query(NodeId(5_000), 12, &mut rng) {
            counts[c.index()] += 1;
        }
    }
    let x2 = chi_square(&counts);
    assert!(x2 < CHI2_999_DF99, "chi-square {x2}");
}

#[test]
fn listed_querier_never_sees_itself_and_others_stay_uniform() {
    let mut rng = SimRng::seed_from_u64(22);
    let e = full(50, &mut rng);
    let mut counts = vec![0u64; 50];
    for _ in 0..10_000 {
        for c in e.query(NodeId(7), 12, &mut rng) {
            counts[c.index()] += 1;
        }
    }
    assert_eq!(counts[7], 0);
    counts.remove(7);
    // 49 cells, 48 degrees of freedom; the df 49 point is slightly looser.
    let x2 = chi_square(&counts);
    assert!(x2 < CHI2_999_DF49, "chi-square {x2}");
}

#[test]
fn eviction_is_uniform_over_residents() {
    let mut rng = SimRng::seed_from_u64(23);
    let mut counts = vec![0u64; 50];
    for _ in 0..100_000 {
        let mut e = full(50, &mut rng);
        let gone = e.register(NodeId(999), &mut rng).expect("full list evicts");
        counts[gone.index()] += 1;
    }
    let x2 = chi_square(&counts);
    assert!(x2 < CHI2_99_DF49, "chi-square {x2}");
}

// A list entry's age and the node's residual lifetime are both exponential
// with rate lambda / n, so a stable-regime candidate is alive w.p. 1/2.
#[test]
fn half_of_the_candidates_are_alive_in_the_stable_regime() {
    let n = 200u64;
    let s = build_schedule(&ChurnConfig::new(1.0, n, 4000, 24)).unwrap();
    let mut rng = SimRng::seed_from_u64(25);
    let mut e = EntryState::new(n as usize);
    let (mut alive, mut total) = (0u64, 0u64);
    for t in 0..=4000 {
        for ev in s.events_at(t) {
            if ev.kind == EventKind::Join {
                e.register(ev.node, &mut rng);
            }
        }
        if t >= 1000 {
            for c in e.query(NodeId(u32::MAX), 12, &mut rng) {
                total += 1;
                alive += u64::from(s.span(c).unwrap().alive_at(t));
            }
        }
    }
    let frac = alive as f64 / total as f64;
    assert!((frac - 0.5).abs() < 0.05, "alive candidate fraction {frac}");
}
