//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::panic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blemesh::channel::{is_neighbor, path_loss, ChannelParams, Position};
use blemesh::config::{Protocol, ScenarioConfig};
use blemesh::discovery::{ideal_discovery, HopCount, NeighborTable};
use blemesh::recovery::{choose_recovery, hb_latency, mp_latency, AdaptiveParams, RecoveryMethod, RecoveryMode};
use blemesh::routing::{ideal_gsa, trace_route};
use blemesh::scenario::{case1_config, case2_config, case3_config, mean_node_power, preinstall, run, run_once, RunOutput};
use blemesh::topology::{generate_paper_topology, ConnectivityGraph, NodeId, NodeSpec};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=20;
const K: usize = 5;

/// Degrees of nodes #1..#31 on the office building, from the brute-force
/// evaluation in `criterion_3`.
const FROZEN_DEGREES: [usize; 31] =
    [10, 7, 10, 12, 10, 7, 7, 10, 12, 10, 7, 10, 15, 16, 15, 10, 10, 15, 16, 15, 10, 7, 10, 12, 10, 7, 7, 10, 12, 10, 7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Loss formula with inline constants: 2400 MHz, N = 22, 6 dB per floor,
/// 4 m floors, distances floored at 1 m.
fn oracle_loss(a: &Position, b: &Position) -> f64 {
    let floor = |z: f64| ((z / 4.0).ceil() - 1.0).max(0.0);
    let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt().max(1.0);
    20.0 * 2400f64.log10() + 22.0 * d.log10() + 6.0 * (floor(a.z) - floor(b.z)).abs() - 28.0
}

fn oracle_adjacency(specs: &[NodeSpec]) -> BTreeMap<NodeId, Vec<NodeId>> {
    specs
        .iter()
        .map(|a| (a.id, specs.iter().filter(|b| b.id != a.id && oracle_loss(&a.position, &b.position) <= 70.0).map(|b| b.id).collect()))
        .collect()
}

fn oracle_bfs(adj: &BTreeMap<NodeId, Vec<NodeId>>, heads: &[NodeId]) -> BTreeMap<NodeId, u32> {
    let mut dist: BTreeMap<NodeId, u32> = heads.iter().map(|&h| (h, 0)).collect();
    let mut q: VecDeque<NodeId> = heads.iter().copied().collect();
    while let Some(n) = q.pop_front() {
        let d = dist[&n];
        for &m in &adj[&n] {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(m) {
                e.insert(d + 1);
                q.push_back(m);
            }
        }
    }
    dist
}

fn runs(cfg: &ScenarioConfig) -> Vec<RunOutput> {
    SEEDS.map(|s| run_once(cfg, s).unwrap_or_else(|e| panic!("seed {s}: {e}"))).collect()
}

fn criterion_1() -> Outcome {
    let p = |x| AdaptiveParams { z: 5, x, alpha: 0.0, beta: 0.0, r: 2.3, gamma: 0.5 };
    let checks = [(hb_latency(&p(3)), 3.8), (mp_latency(&p(3)), 3.5), (hb_latency(&p(4)), 3.3), (mp_latency(&p(4)), 4.0)];
    let exact = checks.iter().all(|(got, want)| (got - want).abs() <= 1e-9);
    let switch = choose_recovery(&p(3)) == RecoveryMethod::Mp && choose_recovery(&p(4)) == RecoveryMethod::Hb;
    outcome(
        exact && switch,
        format!(
            "HB(3)={} MP(3)={} HB(4)={} MP(4)={}, X=3 {:?}, X=4 {:?}",
            checks[0].0,
            checks[1].0,
            checks[2].0,
            checks[3].0,
            choose_recovery(&p(3)),
            choose_recovery(&p(4))
        ),
    )
}

fn criterion_2() -> Outcome {
    let p = ChannelParams::default();
    let a = Position::new(0.0, 0.0, 1.2);
    let b = Position::new(12.0, 0.0, 1.2);
    let got = path_loss(&a, &b, &p);
    let want = oracle_loss(&a, &b);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pos = |r: &mut ChaCha8Rng| Position::new(r.gen_range(-60.0..60.0), r.gen_range(-60.0..60.0), r.gen_range(0.5..12.0));
    let mut violations = 0;
    for _ in 0..10_000 {
        let (u, v) = (pos(&mut rng), pos(&mut rng));
        if path_loss(&u, &v, &p) != path_loss(&v, &u, &p) || is_neighbor(&u, &v, &p) != is_neighbor(&v, &u, &p) {
            violations += 1;
        }
        let step = rng.gen_range(0.0..30.0);
        let w = Position::new(v.x + (v.x - u.x).signum() * step, v.y, v.z);
        if u.z == v.z && path_loss(&u, &w, &p) < path_loss(&u, &v, &p) - 1e-12 && (w.x - u.x).abs() >= (v.x - u.x).abs() {
            violations += 1;
        }
        if (path_loss(&u, &v, &p) - oracle_loss(&u, &v)).abs() > 1e-9 {
            violations += 1;
        }
    }
    outcome(
        (got - want).abs() <= 0.01 && violations == 0,
        format!("L(12 m) = {got:.4} dB, oracle {want:.4} dB (stated figure 63.36); {violations} property violations in 10^4 pairs"),
    )
}

fn criterion_3() -> Outcome {
    let specs = generate_paper_topology();
    let adj = oracle_adjacency(&specs);
    let oracle: Vec<usize> = specs.iter().map(|s| adj[&s.id].len()).collect();
    let graph = ConnectivityGraph::build(&specs, &ChannelParams::default());
    let built: Vec<usize> = specs.iter().map(|s| graph.degree(s.id)).collect();
    let ble = &built[1..];
    let (lo, hi) = (*ble.iter().min().unwrap(), *ble.iter().max().unwrap());
    let frozen = built == oracle && built == FROZEN_DEGREES;
    outcome(frozen && lo >= 11 && hi <= 17, format!("fixture match {frozen}; BLE node degrees {lo}..{hi}, wanted within 11..17"))
}

fn criterion_4() -> Outcome {
    let specs = generate_paper_topology();
    let graph = ConnectivityGraph::build(&specs, &ChannelParams::default());
    let bfs = oracle_bfs(&oracle_adjacency(&specs), &[NodeId(1)]);
    let ideal = ideal_discovery(&graph, 3);
    let agree = specs.iter().filter(|s| ideal[&s.id].my_hop().value().map(u32::from) == bfs.get(&s.id).copied()).count();

    let cfg = case1_config();
    let per_seed: Vec<f64> =
        runs(&cfg).iter().map(|r| mean(&r.kpi.nodes.iter().filter_map(|n| n.discovery_delay_s).collect::<Vec<_>>())).collect();
    let m = mean(&per_seed);
    let (lo, hi) = (per_seed.iter().cloned().fold(f64::MAX, f64::min), per_seed.iter().cloned().fold(f64::MIN, f64::max));
    outcome(
        agree == specs.len() && (4.5..=7.0).contains(&m),
        format!(
            "ideal hop = BFS for {agree}/{}; discovery delay mean {m:.3} s over {} seeds (per-seed {lo:.3}..{hi:.3}), band [4.5, 7.0]",
            specs.len(),
            per_seed.len()
        ),
    )
}

fn simple_paths(adj: &BTreeMap<NodeId, Vec<NodeId>>, from: NodeId, head: NodeId) -> Vec<Vec<NodeId>> {
    fn walk(adj: &BTreeMap<NodeId, Vec<NodeId>>, head: NodeId, path: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
        let cur = *path.last().unwrap();
        if cur == head {
            out.push(path.clone());
            return;
        }
        for &nb in &adj[&cur] {
            if !path.contains(&nb) {
                path.push(nb);
                walk(adj, head, path, out);
                path.pop();
            }
        }
    }
    let mut out = vec![];
    walk(adj, head, &mut vec![from], &mut out);
    out
}

/// Every family of internally disjoint paths that no other path can join
/// (or that already holds K paths).
fn maximal_families(all: &[Vec<NodeId>]) -> Vec<BTreeSet<Vec<NodeId>>> {
    fn inner(p: &[NodeId]) -> &[NodeId] {
        &p[1..p.len() - 1]
    }
    fn fits(p: &[NodeId], chosen: &[&Vec<NodeId>]) -> bool {
        chosen.iter().all(|q| *q != p && inner(p).iter().all(|n| !inner(q).contains(n)))
    }
    fn go<'a>(all: &'a [Vec<NodeId>], i: usize, chosen: &mut Vec<&'a Vec<NodeId>>, out: &mut Vec<BTreeSet<Vec<NodeId>>>) {
        if i == all.len() || chosen.len() == K {
            if chosen.len() == K || all.iter().all(|p| !fits(p, chosen)) {
                out.push(chosen.iter().map(|p| (*p).clone()).collect());
            }
            return;
        }
        if fits(&all[i], chosen) {
            chosen.push(&all[i]);
            go(all, i + 1, chosen, out);
            chosen.pop();
        }
        go(all, i + 1, chosen, out);
    }
    let mut out = vec![];
    go(all, 0, &mut vec![], &mut out);
    out
}

fn toy_graphs() -> (usize, usize, usize, Vec<String>) {
    let (mut origins, mut matched, mut below_best) = (0, 0, 0);
    let mut errors = vec![];
    for n in 3..=6u32 {
        let pairs: Vec<(u32, u32)> = (1..=n).flat_map(|a| (a + 1..=n).map(move |b| (a, b))).collect();
        for mask in 0u32..1 << pairs.len() {
            let edges: Vec<(u32, u32)> = pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e).collect();
            let ids: Vec<NodeId> = (1..=n).map(NodeId).collect();
            let mut adj: BTreeMap<NodeId, Vec<NodeId>> = ids.iter().map(|&i| (i, vec![])).collect();
            for &(a, b) in &edges {
                adj.get_mut(&NodeId(a)).unwrap().push(NodeId(b));
                adj.get_mut(&NodeId(b)).unwrap().push(NodeId(a));
            }
            let bfs = oracle_bfs(&adj, &[NodeId(1)]);
            if bfs.len() < ids.len() {
                continue;
            }
            let g = ConnectivityGraph::from_edges(&ids, &[NodeId(1)], &edges);
            let tables: BTreeMap<NodeId, NeighborTable> = ids.iter().map(|&i| (i, NeighborTable::from_graph(&g, i, &bfs))).collect();
            let hops = ids.iter().map(|&i| (i, HopCount(bfs[&i] as u8))).collect();
            let agents = ideal_gsa(&tables, g.heads(), &hops, K, true);
            for &origin in &ids[1..] {
                origins += 1;
                let st = agents[&origin].origin_state().unwrap();
                let paths: Vec<Vec<NodeId>> = st.routes.iter().filter_map(|&r| trace_route(&agents, r)).collect();
                let all = simple_paths(&adj, origin, NodeId(1));
                let families = maximal_families(&all);
                let set: BTreeSet<Vec<NodeId>> = paths.iter().cloned().collect();
                let shortest = paths.first().is_some_and(|p| p.len() as u32 - 1 == bfs[&origin]);
                if set.len() == paths.len() && shortest && families.contains(&set) {
                    matched += 1;
                } else if errors.len() < 3 {
                    errors.push(format!("n={n} edges={edges:?} origin {origin:?}: {paths:?}"));
                }
                if families.iter().any(|f| f.len() > set.len()) {
                    below_best += 1;
                }
            }
        }
    }
    (origins, matched, below_best, errors)
}

fn criterion_5() -> Outcome {
    let cfg = case2_config(0, false, Protocol::Proposed);
    let specs = cfg.nodes().unwrap();
    let graph = ConnectivityGraph::build(&specs, &cfg.channel);
    let bfs = oracle_bfs(&oracle_adjacency(&specs), &[NodeId(1)]);
    let pre = preinstall(&graph, &cfg);
    let mut bad = vec![];
    for s in specs.iter().filter(|s| !s.is_head()) {
        let st = pre.gsa[&s.id].origin_state().unwrap();
        let paths: Vec<Vec<NodeId>> = st.routes.iter().filter_map(|&r| trace_route(&pre.gsa, r)).collect();
        let mut seen = BTreeSet::new();
        let disjoint = paths.iter().all(|p| p[1..p.len() - 1].iter().all(|n| seen.insert(*n)));
        let ok = paths.len() == K
            && disjoint
            && paths.iter().all(|p| *p.last().unwrap() == NodeId(1))
            && paths[0].len() as u32 - 1 == bfs[&s.id];
        if !ok {
            bad.push(s.id.0);
        }
    }
    let (origins, matched, below_best, errors) = toy_graphs();

    let phase: Vec<f64> =
        runs(&case1_config()).iter().map(|r| mean(&r.kpi.nodes.iter().filter_map(|n| n.all_phase_s).collect::<Vec<_>>())).collect();
    let m = mean(&phase);
    let max = phase.iter().cloned().fold(f64::MIN, f64::max);
    outcome(
        bad.is_empty() && matched == origins && (35.0..=70.0).contains(&m),
        format!(
            "building bad origins {bad:?}; toy graphs {matched}/{origins} origins match a maximal disjoint family \
             ({below_best} below the largest one) {errors:?}; all-phase mean {m:.2} s (seed max {max:.2} s), band [35, 70]"
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut lines = vec![];
    let mut pass = true;
    let mut mp_mean = vec![];
    let mut hb_mean = vec![];
    for x in 1..=4 {
        let adaptive = runs(&case3_config(x, RecoveryMode::Adaptive, Protocol::Proposed));
        let mp = runs(&case3_config(x, RecoveryMode::MpOnly, Protocol::Proposed));
        let hb = runs(&case3_config(x, RecoveryMode::HbOnly, Protocol::Proposed));
        let lat = |r: &RunOutput| r.kpi.packets[0].recovery_latency_s.unwrap_or(f64::INFINITY);
        let mut wins = 0;
        for i in 0..adaptive.len() {
            let (m, h) = (lat(&mp[i]), lat(&hb[i]));
            let won = match adaptive[i].kpi.packets[0].recovery.as_deref() {
                Some("mp") => m <= h,
                Some("hb") => h <= m,
                _ => false,
            };
            wins += usize::from(won);
        }
        let rate = wins as f64 / adaptive.len() as f64;
        let chosen = adaptive[0].kpi.packets[0].recovery.clone().unwrap_or_default();
        let m = mean(&mp.iter().map(lat).collect::<Vec<_>>());
        let h = mean(&hb.iter().map(lat).collect::<Vec<_>>());
        mp_mean.push(m);
        hb_mean.push(h);
        if x != 3 && rate < 0.9 {
            pass = false;
        }
        lines.push(format!("X={x} chose {chosen} wins {:.0}% MP {m:.2}s HB {h:.2}s", rate * 100.0));
    }
    // distance from the head is Z - X: MP gets no slower as it grows, HB no faster
    let mp_ok = mp_mean.windows(2).all(|w| w[1] >= w[0]);
    let hb_ok = hb_mean.windows(2).all(|w| w[1] <= w[0]);
    outcome(pass && mp_ok && hb_ok, format!("{}; MP trend ok {mp_ok}, HB trend ok {hb_ok}", lines.join("; ")))
}

fn avg_power(cfg: &ScenarioConfig) -> f64 {
    mean(&runs(cfg).iter().filter_map(|r| mean_node_power(&r.kpi.nodes)).collect::<Vec<_>>())
}

fn criterion_7() -> Outcome {
    let latency = |protocol| {
        let rs = runs(&case2_config(3, true, protocol));
        mean(&rs.iter().flat_map(|r| r.kpi.packets.iter().filter_map(|p| p.latency_s)).collect::<Vec<_>>())
    };
    let (lp, lf) = (latency(Protocol::Proposed), latency(Protocol::Flooding));
    let mut pass = lp < lf;
    let mut lines = vec![format!("case2 3 acked latency proposed {lp:.3}s flooding {lf:.3}s")];
    for packets in [1, 3, 5] {
        for ack in [false, true] {
            let p = avg_power(&case2_config(packets, ack, Protocol::Proposed));
            let f = avg_power(&case2_config(packets, ack, Protocol::Flooding));
            pass &= f > p;
            lines.push(format!("case2 {packets}p ack={ack} {p:.3}/{f:.3} mW"));
        }
    }
    for x in 1..=4 {
        let p = avg_power(&case3_config(x, RecoveryMode::Adaptive, Protocol::Proposed));
        let f = avg_power(&case3_config(x, RecoveryMode::Adaptive, Protocol::Flooding));
        pass &= f > 3.0 * p;
        lines.push(format!("case3 X={x} {p:.3}/{f:.3} mW ratio {:.1}", f / p));
    }
    outcome(pass, lines.join("; "))
}

fn criterion_8() -> Outcome {
    let mut c1 = case1_config();
    c1.runs = 2;
    let configs = [c1, case2_config(3, true, Protocol::Flooding), case3_config(2, RecoveryMode::Adaptive, Protocol::Proposed)];
    let mut same = 0;
    for cfg in &configs {
        let bytes = || {
            let dir = tempfile::tempdir().unwrap();
            run(cfg).unwrap().export(dir.path()).unwrap();
            ["packets.csv", "nodes.csv", "summary.csv"].map(|f| fs::read(dir.path().join(f)).unwrap())
        };
        same += usize::from(bytes() == bytes());
    }
    outcome(same == configs.len(), format!("{same}/{} scenarios byte-identical", configs.len()))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("1 recovery equations", criterion_1),
        ("2 channel oracle", criterion_2),
        ("3 topology degrees", criterion_3),
        ("4 discovery", criterion_4),
        ("5 GSA disjointness and all-phase time", criterion_5),
        ("6 failure recovery", criterion_6),
        ("7 flooding comparison", criterion_7),
        ("8 determinism", criterion_8),
    ];
    panic::set_hook(Box::new(|_| {}));
    let results: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|(_, f)| s.spawn(move || panic::catch_unwind(f))).collect();
        handles
            .into_iter()
            .map(|h| match h.join().unwrap() {
                Ok(o) => o,
                Err(e) => {
                    let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                    outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
                }
            })
            .collect()
    });
    let mut failed = 0;
    for ((name, _), r) in criteria.iter().zip(&results) {
        println!("{} criterion {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
