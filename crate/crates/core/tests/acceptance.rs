//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run a subset by number: `cargo test --release --test acceptance -- 3 4`.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};

use dynex_core::churn::{build_schedule, stability_fraction, validate_arrival_concentration, ChurnConfig, EventKind};
use dynex_core::engine::{run, RunConfig};
use dynex_core::entry::EntryState;
use dynex_core::events::{audit, Event};
use dynex_core::metrics::{conductance_estimate, random_regular_graph, Graph};
use dynex_core::overlay::{Caps, Envelope, LinkOutcome, NodeRecord, Overlay};
use dynex_core::rng::SimRng;
use dynex_core::walk::harness::StaticHarness;
use dynex_core::walk::{RoundReport, TokenArena, TokenFate, WalkBatch, WalkParams, WalkState};
use dynex_core::NodeId;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> Verdict,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        f64::INFINITY
    } else {
        a as f64 / b as f64
    }
}

// 1. |V_t| within [0.75n, 1.25n] on at least 99% of rounds in [3000, 5000].
fn churn_stability() -> Verdict {
    let mut worst = 1.0f64;
    for seed in 1..=20 {
        let s = build_schedule(&ChurnConfig::new(1.0, 1000, 5000, seed)).expect("schedule");
        worst = worst.min(stability_fraction(&s, 3000..=5000, 0.75, 1.25));
    }
    Verdict::new(
        worst >= 0.99,
        format!("worst in-band fraction over 20 seeds = {worst:.4} (need >= 0.99)"),
    )
}

// 2. 100 disjoint windows of length n: |N - n'| <= 4 sqrt(n' ln n).
fn arrival_concentration() -> Verdict {
    let windows: Vec<(u64, u64)> = (0..5).map(|i| (i * 1000, (i + 1) * 1000)).collect();
    let (mut pass, mut total, mut worst_dev) = (0usize, 0usize, 0.0f64);
    for seed in 1..=20 {
        let s = build_schedule(&ChurnConfig::new(1.0, 1000, 5000, seed)).expect("schedule");
        let rep = validate_arrival_concentration(&s, &windows);
        for w in &rep.windows {
            total += 1;
            pass += usize::from(w.pass);
            worst_dev = worst_dev.max((w.window.count as f64 - w.expected).abs() / w.bound);
        }
    }
    let frac = pass as f64 / total as f64;
    Verdict::new(
        total == 100 && frac >= 0.98,
        format!("{pass}/{total} windows within bound, worst |N - n'| / bound = {worst_dev:.3} (need >= 0.98)"),
    )
}

fn overlay_from_graph(g: &Graph) -> Overlay {
    let max_deg = (0..g.len()).map(|v| g.degree(v)).max().unwrap_or(0);
    let mut o = Overlay::new(Caps {
        max_out: max_deg,
        max_in: max_deg,
    });
    for v in 0..g.len() {
        o.insert_node(NodeRecord::new(NodeId(v as u32), 0, false));
    }
    for (a, b) in g.edges() {
        assert_eq!(o.add_link(NodeId(a as u32), NodeId(b as u32)), LinkOutcome::Established);
    }
    o
}

// 3. Endpoint distribution on a static random 4-regular graph, n = 256.
fn walk_mixing() -> Verdict {
    let n = 256usize;
    let mut rng = SimRng::seed_from_u64(2024);
    let g = random_regular_graph(n, 4, &mut rng);
    let numtokens = 100_000usize.div_ceil(n);
    let rw_length = 4 * 8;
    let params = WalkParams {
        numtokens,
        cap: 4 * numtokens,
        rw_length,
        scale: 1.0,
    };
    let mut h = StaticHarness::new(overlay_from_graph(&g), params, 7);
    let out = h.run_phase(0, 4 * rw_length as u64 + 16);

    let mut counts = vec![0u64; n];
    for e in &out.endpoints {
        counts[e.index()] += 1;
    }
    let total: u64 = counts.iter().sum();
    let two_m: usize = (0..n).map(|v| g.degree(v)).sum();
    let tv = 0.5
        * (0..n)
            .map(|v| (counts[v] as f64 / total as f64 - g.degree(v) as f64 / two_m as f64).abs())
            .sum::<f64>();
    Verdict::new(
        total >= 100_000 && tv <= 0.05,
        format!(
            "{total} verified endpoints of {} started, rw_length {rw_length}, TV = {tv:.4} (need <= 0.05)",
            numtokens * n
        ),
    )
}

fn batch(from: u32, to: u32, forward: Vec<dynex_core::walk::TokenRef>) -> Envelope<WalkBatch> {
    Envelope {
        from: NodeId(from),
        to: NodeId(to),
        epoch: 0,
        msg: WalkBatch {
            phase: 0,
            forward,
            returns: Vec::new(),
        },
    }
}

// 4. cap + 1 tokens in one round blacklist the sender; exactly cap does not.
fn blacklisting() -> Verdict {
    let cap = 6;
    let params = WalkParams {
        numtokens: 2,
        cap,
        rw_length: 8,
        scale: 1.0,
    };
    let mut arena = TokenArena::new();
    arena.reset(0);
    let mint =
        |k: usize, arena: &mut TokenArena| -> Vec<_> { (0..k).map(|_| arena.create(NodeId(9), true, 8)).collect() };

    // Sender 1 sends exactly cap, sender 2 sends cap + 1.
    let ok = mint(cap, &mut arena);
    let over = mint(cap + 1, &mut arena);
    let inbox = vec![batch(1, 0, ok.clone()), batch(2, 0, over.clone())];
    let mut bl = BTreeSet::new();
    let mut rep = RoundReport::default();
    let kept = WalkState::screen(NodeId(0), &inbox, &mut bl, &params, &mut arena, &mut rep);
    let cap_accepted = kept.len() == 1 && kept[0].from == NodeId(1) && !bl.contains(&NodeId(1));
    let over_blacklisted = bl.contains(&NodeId(2))
        && rep.newly_blacklisted == vec![NodeId(2)]
        && over.iter().all(|&t| arena.fate(t) == TokenFate::DroppedBlacklist);

    // Later traffic from the blacklisted sender, even a single token, is ignored.
    let mut ignored_later = true;
    for _ in 0..3 {
        let later = mint(1, &mut arena);
        let inbox = vec![batch(2, 0, later.clone()), batch(1, 0, mint(cap, &mut arena))];
        let mut rep = RoundReport::default();
        let kept = WalkState::screen(NodeId(0), &inbox, &mut bl, &params, &mut arena, &mut rep);
        ignored_later &= kept.len() == 1
            && kept[0].from == NodeId(1)
            && rep.ignored_blacklisted == 1
            && arena.fate(later[0]) == TokenFate::DroppedBlacklist;
    }
    Verdict::new(
        cap_accepted && over_blacklisted && ignored_later,
        format!("exact cap accepted: {cap_accepted}, cap+1 blacklisted: {over_blacklisted}, later traffic ignored: {ignored_later}"),
    )
}

fn config_512(seed: u64, adversary: &str, extra: &str) -> RunConfig {
    let text = format!(
        "seed = {seed}\n\
         [churn]\nlambda = 1.0\nn_stable = 512\nhorizon = 2560\n\
         [protocol]\nd = 4\nwalk_scale = 0.125\n\
         [adversary]\n{adversary}\n\
         [metrics]\ncheck_invariants = true\n{extra}\n"
    );
    RunConfig::from_toml_str(&text).expect("acceptance config parses")
}

const BYZ_BASE: &str =
    "beta = 0.02\ncorruption = { kind = \"random_on_join\", p = 1.0 }\nlifetime_override = \"persist\"";

// 5. No honest in-link is accepted without a verified record or new-node status.
fn conn_flood() -> Verdict {
    let cfg = config_512(
        1,
        &format!("{BYZ_BASE}\nstrategy = {{ kind = \"conn_flood\" }}"),
        "log_verifications = true",
    );
    let res = match run(&cfg, None) {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, format!("run failed: {e}")),
    };
    let rep = audit(&res.events, 4);
    let byz: BTreeSet<NodeId> = res
        .events
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Join {
                node, byzantine: true, ..
            } => Some(*node),
            _ => None,
        })
        .collect();
    let (mut byz_requests, mut byz_established, mut flooded) = (0u64, 0u64, 0u64);
    for e in &res.events.events {
        if let Event::Request { from, outcome, .. } = e {
            if byz.contains(from) {
                byz_requests += 1;
                byz_established += u64::from(*outcome == LinkOutcome::Established);
                flooded += u64::from(*outcome == LinkOutcome::RejectedFlooded);
            }
        }
    }
    let pass = rep.is_clean() && rep.unchecked_verified == 0 && byz_requests > 0;
    Verdict::new(
        pass,
        format!(
            "{} violations; accepted verified {} (all matched), accepted new-node {} (all joined this phase); \
             Byzantine requests {byz_requests}, flooded-rejected {flooded}, established {byz_established}",
            rep.violations.len(),
            rep.accepted_verified,
            rep.accepted_new_node,
        ),
    )
}

// 6. Expansion maintenance under Absorb, 10 seeds.
fn expansion() -> Verdict {
    let mut hard_ok = true;
    let mut good_seeds = 0;
    let mut notes = Vec::new();
    let (mut min_phi, mut min_comp) = (f64::INFINITY, f64::INFINITY);
    for seed in 1..=10u64 {
        let cfg = config_512(seed, &format!("{BYZ_BASE}\nstrategy = {{ kind = \"absorb\" }}"), "");
        let res = cfg.resolved().expect("resolves");
        if (res.walk.numtokens as u64) < res.log_n * res.log_n {
            return Verdict::new(false, format!("numtokens {} below log2(n)^2", res.walk.numtokens));
        }
        let out = match run(&cfg, None) {
            Ok(r) => r,
            Err(e) => {
                hard_ok = false;
                notes.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let warmup = cfg.warmup().expect("warmup");
        let mut seed_ok = !out.reports.is_empty();
        for r in out.reports.iter().filter(|r| r.t_start >= warmup) {
            hard_ok &= r.max_honest_out <= 12 && r.max_honest_in <= 24;
            let comp = r.honest_component_fraction.unwrap_or(0.0);
            let phi = r.phi_estimate.unwrap_or(0.0);
            min_comp = min_comp.min(comp);
            min_phi = min_phi.min(phi);
            if comp < 0.95 || phi < 0.05 {
                seed_ok = false;
                notes.push(format!(
                    "seed {seed} phase {}: component {comp:.3}, phi {phi:.3}",
                    r.phase
                ));
            }
        }
        good_seeds += usize::from(seed_ok);
    }
    let mut detail = format!(
        "caps held: {hard_ok}; {good_seeds}/10 seeds pass every phase (need >= 9); min component {min_comp:.3}, min phi {min_phi:.3}"
    );
    if !notes.is_empty() {
        detail.push_str(&format!("; {}", notes.join("; ")));
    }
    Verdict::new(hard_ok && good_seeds >= 9, detail)
}

// 7. Entry-manager sampling frequency among nodes alive throughout the window.
fn entry_uniformity() -> Verdict {
    let n = 200u64;
    let t0 = 5 * n;
    let window = 8u64;
    let samples = 100_000usize;
    let per_query = 12usize;
    let queries = samples.div_ceil(per_query);
    let schedule = build_schedule(&ChurnConfig::new(1.0, n, t0 + window, 11)).expect("schedule");
    let mut entry = EntryState::new(n as usize);
    let mut rng = SimRng::seed_from_u64(12);
    let outsider = NodeId(u32::MAX);
    let mut counts: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut listed_throughout: Option<BTreeSet<NodeId>> = None;
    let mut drawn = 0usize;
    for t in 0..t0 + window {
        for ev in schedule.events_at(t) {
            if ev.kind == EventKind::Join {
                entry.register(ev.node, &mut rng);
            }
        }
        if t < t0 {
            continue;
        }
        let listed: BTreeSet<NodeId> = entry.nodes().iter().copied().collect();
        listed_throughout = Some(match listed_throughout {
            None => listed,
            Some(prev) => prev.intersection(&listed).copied().collect(),
        });
        let here = (queries * (t - t0 + 1) as usize / window as usize) - drawn;
        for _ in 0..here {
            for c in entry.query(outsider, per_query, &mut rng) {
                *counts.entry(c).or_default() += 1;
            }
        }
        drawn += here;
    }
    let population: Vec<NodeId> = schedule
        .spans()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.join <= t0 && s.leave.is_none_or(|l| l >= t0 + window))
        .map(|(i, _)| NodeId(i as u32))
        .collect();
    let listed_throughout = listed_throughout.unwrap_or_default();
    let freq = |ids: &mut dyn Iterator<Item = &NodeId>| -> (u64, u64) {
        ids.fold((u64::MAX, 0), |(lo, hi), id| {
            let c = counts.get(id).copied().unwrap_or(0);
            (lo.min(c), hi.max(c))
        })
    };
    let (lo, hi) = freq(&mut population.iter());
    let never = population.iter().filter(|id| !counts.contains_key(id)).count();
    let (llo, lhi) = freq(&mut population.iter().filter(|id| listed_throughout.contains(id)));
    let listed_pop = population.iter().filter(|id| listed_throughout.contains(id)).count();
    let r = ratio(hi, lo);
    Verdict::new(
        r <= 4.0,
        format!(
            "{drawn} queries x {per_query} over rounds [{t0}, {}); {} nodes alive throughout, {never} never sampled \
             (not on the list); max/min = {r:.2} (need <= 4); among the {listed_pop} listed throughout max/min = {:.2}",
            t0 + window,
            population.len(),
            ratio(lhi, llo),
        ),
    )
}

// 8. In-core verified walks return at least 90% per phase, no adversary.
fn verified_return() -> Verdict {
    let cfg = config_512(
        1,
        "beta = 0.0\ncorruption = { kind = \"none\" }\nstrategy = { kind = \"silent\" }",
        "",
    );
    let out = match run(&cfg, None) {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, format!("run failed: {e}")),
    };
    let mut worst = f64::INFINITY;
    let mut undefined = Vec::new();
    let mut defined = 0;
    let (mut walks, mut returned) = (0u64, 0u64);
    for r in &out.reports {
        walks += r.core_walks_verified;
        returned += r.core_walks_returned;
        match r.core_return_fraction() {
            Some(f) => {
                defined += 1;
                worst = worst.min(f);
            }
            None => undefined.push(r.phase),
        }
    }
    let overall: u64 = out.reports.iter().map(|r| r.tokens_initiated).sum();
    let all_returned: u64 = out.reports.iter().map(|r| r.tokens_returned).sum();
    Verdict::new(
        defined > 0 && worst >= 0.9,
        format!(
            "{defined} phases defined, worst in-core return {worst:.3} (need >= 0.9), {returned}/{walks} in-core walks returned; \
             undefined phases (no in-core walk) {undefined:?}; all tokens returned {all_returned}/{overall}"
        ),
    )
}

fn oracle_phi(n: usize, edges: &[(usize, usize)]) -> f64 {
    let mut deg = vec![0usize; n];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    let total: usize = deg.iter().sum();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) - 1 {
        let inside = |v: usize| mask >> v & 1 == 1;
        let vol: usize = (0..n).filter(|&v| inside(v)).map(|v| deg[v]).sum();
        let cut = edges.iter().filter(|&&(u, v)| inside(u) != inside(v)).count();
        let denom = vol.min(total - vol);
        if denom > 0 {
            best = best.min(cut as f64 / denom as f64);
        }
    }
    best
}

// 9. Cheeger bracket contains exact phi; sweep never beats exact.
fn metrics_oracle() -> Verdict {
    let mut rng = SimRng::seed_from_u64(909);
    let (mut graphs, mut bracket_fail, mut sweep_fail) = (0, 0, 0);
    while graphs < 200 {
        let n = rng.random_range(3..=12usize);
        let p = rng.random_range(0.2..0.9);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::from_edges(n, &edges);
        if !g.is_connected() {
            continue;
        }
        graphs += 1;
        let exact = oracle_phi(n, &edges);
        let est = conductance_estimate(&g).expect("connected graph has an estimate");
        bracket_fail += usize::from(!est.brackets(exact, 1e-9));
        sweep_fail += usize::from(est.phi < exact - 1e-12);
    }
    Verdict::new(
        bracket_fail == 0 && sweep_fail == 0,
        format!("{graphs} connected graphs, bracket misses {bracket_fail}, sweep below exact {sweep_fail}"),
    )
}

// 10. Identical config and seed give identical bytes.
fn determinism() -> Verdict {
    let text = "seed = 77\n[churn]\nlambda = 1.0\nn_stable = 256\nhorizon = 1280\n\
                [adversary]\nbeta = 0.02\ncorruption = { kind = \"random_on_join\", p = 0.5 }\nstrategy = { kind = \"walk_bias\" }\n\
                [metrics]\nlog_verifications = true\n";
    let cfg = RunConfig::from_toml_str(text).expect("config");
    let a = run(&cfg, None);
    let b = run(&cfg, None);
    match (a, b) {
        (Ok(a), Ok(b)) => {
            let same_events = a.events.to_jsonl() == b.events.to_jsonl();
            let same_reports = a.reports_csv() == b.reports_csv();
            let same_walks = a.walk_stats_csv() == b.walk_stats_csv();
            Verdict::new(
                same_events && same_reports && same_walks && !a.reports.is_empty(),
                format!(
                    "{} events, {} reports; event log identical: {same_events}, reports identical: {same_reports}, walk stats identical: {same_walks}",
                    a.events.len(),
                    a.reports.len()
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => Verdict::new(false, format!("run failed: {e}")),
    }
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion {
            id: 1,
            name: "churn stability",
            budget: Some(secs(10)),
            check: churn_stability,
        },
        Criterion {
            id: 2,
            name: "arrival concentration",
            budget: Some(secs(5)),
            check: arrival_concentration,
        },
        Criterion {
            id: 3,
            name: "walk mixing",
            budget: Some(secs(60)),
            check: walk_mixing,
        },
        Criterion {
            id: 4,
            name: "blacklisting",
            budget: Some(secs(1)),
            check: blacklisting,
        },
        Criterion {
            id: 5,
            name: "connection-flood resistance",
            budget: Some(secs(300)),
            check: conn_flood,
        },
        Criterion {
            id: 6,
            name: "expansion maintenance",
            budget: Some(secs(900)),
            check: expansion,
        },
        Criterion {
            id: 7,
            name: "entry near-uniformity",
            budget: Some(secs(10)),
            check: entry_uniformity,
        },
        Criterion {
            id: 8,
            name: "verified-return success",
            budget: Some(secs(300)),
            check: verified_return,
        },
        Criterion {
            id: 9,
            name: "metrics oracle",
            budget: Some(secs(30)),
            check: metrics_oracle,
        },
        Criterion {
            id: 10,
            name: "determinism",
            budget: None,
            check: determinism,
        },
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let v = (c.check)();
        let took = start.elapsed();
        let in_time = c.budget.is_none_or(|b| took <= b);
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        let budget = c.budget.map(|b| format!(" of {}s", b.as_secs())).unwrap_or_default();
        let late = if in_time { "" } else { " OVER BUDGET" };
        println!(
            "{} [{:>2}] {}: {} ({:.1}s{budget}{late})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            v.detail,
            took.as_secs_f64(),
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
