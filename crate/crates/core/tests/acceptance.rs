//! Acceptance gate. One `#[test]` runs every criterion in order and prints a
//! PASS/FAIL line per criterion; the test fails if any criterion fails.
//!
//! Run with `cargo test -p qassa-core --test acceptance -- --nocapture` to see
//! the report.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use qassa_core::adaptation::{adapt, AdaptContext, AdaptationOutcome, ExecutionState, Fault};
use qassa_core::aggregation::{aggregate, AggregationApproach};
use qassa_core::dependency_prep::{preprocess, Dependency, Endpoint, InterLink};
use qassa_core::distsim::{run_distributed, Charge, Scenario};
use qassa_core::global_selection::{crs_select_observed, CompositionSolution, CrsObserver, WorkingScore};
use qassa_core::local_selection::{cluster_activity, local_select_all, select_qos_class};
use qassa_core::model::{
    unconstrained, ActivityId, Direction, LinkPattern, PropertySet, QosVector, ServiceCandidate, ValidatedInstance,
};
use qassa_core::oracle::{exhaustive_optimal, DEFAULT_BUDGET};
use qassa_core::pipeline::{instance_bounds, prepare, select, SelectConfig, DEFAULT_TOP_K};
use qassa_core::workload::{
    derive_constraints, generate, project, qws_descriptors, synthetic_qws, ConstraintMode, GeneratorConfig,
    InstanceFile, PatternMix,
};

const FEASIBILITY_RUNS: u64 = 10_000;
const LOCAL_ACTIVITIES: u64 = 2_000;
const GRID_A: [usize; 3] = [4, 5, 6];
const GRID_K: [usize; 3] = [6, 8, 10];
const GRID_N: [usize; 4] = [2, 3, 4, 5];
const GRID_SEEDS: u64 = 20;
/// Local classes kept per activity in the quality grid (benchmark default).
const GRID_TOP_K: usize = 1;
const MIN_MEAN_OPTIMALITY: f64 = 0.85;
const TIMING_REPEATS: u64 = 20;
const MAX_MEDIAN_MS: f64 = 500.0;
/// Relative slack absorbing timer jitter between adjacent sweep cells.
const MONOTONE_SLACK: f64 = 0.05;
const MODE_RUNTIME_TOLERANCE: f64 = 0.25;
const APPROACH_SLACK: f64 = 0.02;
const DIST_INSTANCES: u64 = 50;
const DEPENDENCY_INSTANCES: u64 = 1_000;
const ADAPT_INSTANCES: u64 = 300;
const BUDGET_INSTANCES: u64 = 500;

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        let line = format!("{} C{id:<2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

struct Env {
    props: PropertySet,
    source: Vec<QosVector>,
}

impl Env {
    fn new() -> Self {
        let desc = qws_descriptors();
        Self {
            props: PropertySet::new(&desc).unwrap(),
            source: project(&synthetic_qws(2_500, 7), &desc).unwrap().vectors(),
        }
    }

    fn file(&self, cfg: &GeneratorConfig, n: usize) -> InstanceFile {
        generate(cfg, &self.props.truncated(n), &self.source).unwrap()
    }

    fn instance(
        &self,
        cfg: &GeneratorConfig,
        n: usize,
        mode: ConstraintMode,
        approach: AggregationApproach,
    ) -> ValidatedInstance {
        let inst = self.file(cfg, n).validate().unwrap();
        let c = derive_constraints(&inst, mode, approach);
        inst.with_constraints(c).unwrap()
    }
}

fn within(q: f64, bound: f64, d: Direction) -> bool {
    match d {
        Direction::Negative => q <= bound,
        Direction::Positive => q >= bound,
    }
}

fn independently_feasible(q: &[f64], inst: &ValidatedInstance) -> bool {
    inst.properties()
        .iter()
        .zip(q.iter().zip(inst.constraints()))
        .all(|(p, (&v, &c))| within(v, c, p.direction))
}

fn random_mix(rng: &mut ChaCha8Rng) -> PatternMix {
    match rng.random_range(0..4) {
        0 => PatternMix::sequence_only(),
        1 => PatternMix {
            sequence: 1.0,
            parallel: 1.0,
            looped: 0.0,
        },
        _ => PatternMix::default(),
    }
}

fn random_approach(rng: &mut ChaCha8Rng) -> AggregationApproach {
    AggregationApproach::ALL[rng.random_range(0..3)]
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// NaN for an empty sample.
fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn criterion_1(env: &Env, report: &mut Report) {
    let failures: Vec<String> = (0..FEASIBILITY_RUNS)
        .into_par_iter()
        .filter_map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(run);
            let a = rng.random_range(1..=20);
            let k = rng.random_range(1..=50);
            let n = rng.random_range(1..=5);
            let mut cfg = GeneratorConfig::new(a, k, run);
            cfg.mix = random_mix(&mut rng);
            let approach = random_approach(&mut rng);
            let mode = if rng.random_bool(0.5) {
                ConstraintMode::Mean
            } else {
                ConstraintMode::MeanPlusSigma
            };
            let inst = env.instance(&cfg, n, mode, approach);
            let g = prepare(&inst, run).unwrap();
            let sc = SelectConfig {
                approach,
                top_k: rng.random_range(1..=3),
                seed: run,
                ..Default::default()
            };
            let out = select(&inst, &g, &sc).unwrap();
            for s in &out.archive.solutions {
                if !independently_feasible(&s.qos.0, &inst) {
                    return Some(format!("run {run}: infeasible archived composition"));
                }
                let q = aggregate(inst.task(), inst.properties(), &s.binding, approach).unwrap();
                if q != s.qos {
                    return Some(format!("run {run}: stored QoS does not re-aggregate"));
                }
            }
            None
        })
        .collect();
    report.record(
        1,
        "feasibility soundness",
        failures.is_empty(),
        format!(
            "{FEASIBILITY_RUNS} runs, {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    );
}

fn criterion_2(env: &Env, report: &mut Report) {
    let mut mismatches = 0;
    for i in 0..LOCAL_ACTIVITIES {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000_000 + i);
        let n = rng.random_range(1..=5);
        let g = rng.random_range(1..=5);
        let k = rng.random_range(1..=60);
        let props = env.props.truncated(n);
        let cands: Vec<ServiceCandidate> = (0..k)
            .map(|s| {
                let row = &env.source[rng.random_range(0..env.source.len())];
                ServiceCandidate::new(format!("s{s}"), row.0[..n].to_vec())
            })
            .collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let seed = rng.random::<u64>();

        let chosen = select_qos_class(&cands, &props, &weights, g, seed).unwrap();
        let clustering = cluster_activity(&cands, &props, g, seed).unwrap();
        let mut best = f64::NEG_INFINITY;
        let mut enumerated = 0;
        for level in 1..=g {
            for mask in 1u32..(1 << n) {
                enumerated += 1;
                let covered: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
                let nonempty = clustering
                    .levels
                    .iter()
                    .any(|row| covered.iter().all(|&j| row[j] == level));
                if nonempty {
                    let sum: f64 = covered.iter().map(|&j| weights[j]).sum();
                    best = best.max(level as f64 * covered.len() as f64 * sum);
                }
            }
        }
        assert_eq!(enumerated, g * ((1 << n) - 1));
        let members_ok = chosen
            .members
            .iter()
            .all(|&s| chosen.covered.iter().all(|&j| clustering.levels[s][j] == chosen.level));
        if chosen.score != best || !members_ok {
            mismatches += 1;
        }
    }
    report.record(
        2,
        "local-selection exactness",
        mismatches == 0,
        format!("{LOCAL_ACTIVITIES} activities, {mismatches} mismatches"),
    );
}

/// Optimality of one run, or `None` when the oracle finds no feasible binding.
fn optimality_run(inst: &ValidatedInstance, approach: AggregationApproach, top_k: usize, seed: u64) -> Option<f64> {
    let g = prepare(inst, seed).unwrap();
    let cfg = SelectConfig {
        approach,
        top_k,
        seed,
        ..Default::default()
    };
    let out = select(inst, &g, &cfg).unwrap();
    let oracle = exhaustive_optimal(inst, approach, &out.bounds, DEFAULT_BUDGET).unwrap();
    let opt = oracle.f_opt?;
    let f = out.archive.best().map(|s| s.utility);
    Some(match f {
        None => 0.0,
        Some(_) if opt <= 0.0 => 1.0,
        Some(f) => f / opt,
    })
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Variant {
    Worst,
    MeanValue,
    Best,
    Sigma,
    /// Worst-case, Mean constraints, library default class retention.
    WorstWide,
}

struct GridCell {
    a: usize,
    k: usize,
    variant: Variant,
    values: Vec<f64>,
    excluded: usize,
}

fn run_grid(env: &Env) -> Vec<GridCell> {
    let mut jobs = Vec::new();
    for &a in &GRID_A {
        for &k in &GRID_K {
            for &n in &GRID_N {
                for seed in 0..GRID_SEEDS {
                    for v in [Variant::Worst, Variant::MeanValue, Variant::Best, Variant::Sigma, Variant::WorstWide] {
                        jobs.push((a, k, n, seed, v));
                    }
                }
            }
        }
    }
    let results: Vec<((usize, usize, Variant), Option<f64>)> = jobs
        .par_iter()
        .map(|&(a, k, n, seed, v)| {
            let (approach, mode) = match v {
                Variant::Worst => (AggregationApproach::WorstCase, ConstraintMode::Mean),
                Variant::MeanValue => (AggregationApproach::MeanValue, ConstraintMode::Mean),
                Variant::Best => (AggregationApproach::BestCase, ConstraintMode::Mean),
                Variant::Sigma => (AggregationApproach::WorstCase, ConstraintMode::MeanPlusSigma),
                Variant::WorstWide => (AggregationApproach::WorstCase, ConstraintMode::Mean),
            };
            let top_k = if v == Variant::WorstWide { DEFAULT_TOP_K } else { GRID_TOP_K };
            let cfg = GeneratorConfig::new(a, k, 10_000 + seed * 97 + (a * 100 + k * 10 + n) as u64);
            let inst = env.instance(&cfg, n, mode, approach);
            ((a, k, v), optimality_run(&inst, approach, top_k, seed))
        })
        .collect();
    let mut cells: BTreeMap<(usize, usize, Variant), (Vec<f64>, usize)> = BTreeMap::new();
    for (key, r) in results {
        let e = cells.entry(key).or_default();
        match r {
            Some(x) => e.0.push(x),
            None => e.1 += 1,
        }
    }
    cells
        .into_iter()
        .map(|((a, k, variant), (values, excluded))| GridCell {
            a,
            k,
            variant,
            values,
            excluded,
        })
        .collect()
}

fn pooled(cells: &[GridCell], v: Variant) -> Vec<f64> {
    cells
        .iter()
        .filter(|c| c.variant == v)
        .flat_map(|c| c.values.iter().copied())
        .collect()
}

fn cell_mean(cells: &[GridCell], a: usize, k: usize, v: Variant) -> f64 {
    let c = cells.iter().find(|c| c.a == a && c.k == k && c.variant == v).unwrap();
    mean(&c.values)
}

fn criterion_3(cells: &[GridCell], report: &mut Report) {
    let all = pooled(cells, Variant::Worst);
    let m = mean(&all);
    let worst_cells: Vec<&GridCell> = cells.iter().filter(|c| c.variant == Variant::Worst).collect();
    let with_max = worst_cells
        .iter()
        .filter(|c| c.values.iter().any(|&x| x >= 1.0 - 1e-12))
        .count();
    let excluded: usize = worst_cells.iter().map(|c| c.excluded).sum();
    let found: Vec<f64> = all.iter().copied().filter(|&x| x > 0.0).collect();
    let low_k = mean(
        &worst_cells
            .iter()
            .filter(|c| c.k == GRID_K[0])
            .flat_map(|c| c.values.iter().copied())
            .collect::<Vec<_>>(),
    );
    let wide = mean(&pooled(cells, Variant::WorstWide));
    let pass = m >= MIN_MEAN_OPTIMALITY && with_max >= 1;
    report.record(
        3,
        "optimality at desk scale",
        pass,
        format!(
            "mean {m:.4} over {} runs with top_k={GRID_TOP_K} ({excluded} without a feasible binding excluded), \
             {with_max} cells attain 1.0; heuristic found a feasible composition in {} runs, mean {:.4} over those; \
             k={} cells mean {low_k:.4}; top_k={DEFAULT_TOP_K} mean {wide:.4}",
            all.len(),
            found.len(),
            mean(&found),
            GRID_K[0]
        ),
    );
    for c in &worst_cells {
        println!("      a={} k={:<2} mean {:.4} over {} runs", c.a, c.k, mean(&c.values), c.values.len());
    }
}

fn criterion_6(cells: &[GridCell], report: &mut Report) {
    let m = mean(&pooled(cells, Variant::Worst));
    let s = mean(&pooled(cells, Variant::Sigma));
    let (a0, k0) = (GRID_A[0], GRID_K[0]);
    let (a1, k1) = (GRID_A[2], GRID_K[2]);
    let gap_small = cell_mean(cells, a0, k0, Variant::Worst) - cell_mean(cells, a0, k0, Variant::Sigma);
    let gap_large = cell_mean(cells, a1, k1, Variant::Worst) - cell_mean(cells, a1, k1, Variant::Sigma);
    let sigma_excluded: usize = cells.iter().filter(|c| c.variant == Variant::Sigma).map(|c| c.excluded).sum();
    report.record(
        6,
        "constraint-mode optimality degradation",
        s <= m && gap_small >= gap_large,
        format!(
            "mean {m:.4} vs mean+sigma {s:.4} ({sigma_excluded} sigma runs without a feasible binding), \
             gap at (a={a0},k={k0}) {gap_small:.4}, at (a={a1},k={k1}) {gap_large:.4}"
        ),
    );
}

fn criterion_7(cells: &[GridCell], report: &mut Report) {
    let w = mean(&pooled(cells, Variant::Worst));
    let mv = mean(&pooled(cells, Variant::MeanValue));
    let b = mean(&pooled(cells, Variant::Best));
    report.record(
        7,
        "aggregation-approach trend",
        w + APPROACH_SLACK >= mv && mv + APPROACH_SLACK >= b,
        format!("worst {w:.4}, mean-value {mv:.4}, best {b:.4}"),
    );
}

/// Mean end-to-end select time in ms over `TIMING_REPEATS` instances.
fn timed_cell(env: &Env, a: usize, k: usize, n: usize, mode: ConstraintMode) -> Vec<f64> {
    (0..TIMING_REPEATS)
        .map(|r| {
            let cfg = GeneratorConfig::new(a, k, 50_000 + r);
            let inst = env.instance(&cfg, n, mode, AggregationApproach::WorstCase);
            let g = prepare(&inst, r).unwrap();
            let sc = SelectConfig {
                seed: r,
                top_k: 1,
                ..Default::default()
            };
            let t = Instant::now();
            let out = select(&inst, &g, &sc).unwrap();
            let ms = t.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(out);
            ms
        })
        .collect()
}

fn criterion_4(env: &Env, report: &mut Report) {
    let headline = median(timed_cell(env, 50, 200, 5, ConstraintMode::Mean));
    let mut breaks = Vec::new();
    for a in (10..=50).step_by(10) {
        let mut prev: Option<(usize, f64)> = None;
        for k in (50..=200).step_by(50) {
            let t = mean(&timed_cell(env, a, k, 5, ConstraintMode::Mean));
            if let Some((pk, pt)) = prev {
                if t < pt * (1.0 - MONOTONE_SLACK) {
                    breaks.push(format!("a={a} k {pk}->{k}: {pt:.2}->{t:.2} ms"));
                }
            }
            prev = Some((k, t));
        }
        let mut prev: Option<(usize, f64)> = None;
        for n in GRID_N {
            let t = mean(&timed_cell(env, a, 200, n, ConstraintMode::Mean));
            if let Some((pn, pt)) = prev {
                if t < pt * (1.0 - MONOTONE_SLACK) {
                    breaks.push(format!("a={a} n {pn}->{n}: {pt:.2}->{t:.2} ms"));
                }
            }
            prev = Some((n, t));
        }
    }
    report.record(
        4,
        "timeliness",
        headline < MAX_MEDIAN_MS && breaks.is_empty(),
        format!(
            "median {headline:.2} ms at a=50 k=200 n=5, {} monotonicity breaks{}",
            breaks.len(),
            breaks.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    );
}

fn criterion_5(env: &Env, report: &mut Report) {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (a, k) in [(10, 100), (30, 200), (50, 200)] {
        let m = median(timed_cell(env, a, k, 5, ConstraintMode::Mean));
        let s = median(timed_cell(env, a, k, 5, ConstraintMode::MeanPlusSigma));
        let rel = (m - s).abs() / m.min(s);
        worst = worst.max(rel);
        detail.push(format!("a={a} k={k}: {m:.2}/{s:.2} ms"));
    }
    report.record(
        5,
        "constraint-mode runtime insensitivity",
        worst < MODE_RUNTIME_TOLERANCE,
        format!("largest relative difference {:.1}% ({})", worst * 100.0, detail.join(", ")),
    );
}

fn criterion_8(env: &Env, report: &mut Report) {
    let mut mismatched = 0;
    let mut slower = 0;
    for i in 0..DIST_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200_000 + i);
        let a = rng.random_range(2..=20);
        let k = rng.random_range(5..=50);
        let mut cfg = GeneratorConfig::new(a, k, 200_000 + i);
        cfg.mix = random_mix(&mut rng);
        let inst = env.instance(&cfg, 5, ConstraintMode::Mean, AggregationApproach::WorstCase);
        let g = prepare(&inst, i).unwrap();
        let sc = SelectConfig {
            seed: i,
            top_k: rng.random_range(1..=3),
            ..Default::default()
        };
        let central = select(&inst, &g, &sc).unwrap();
        let helpers = rng.random_range(1..=8);
        let dist = run_distributed(&inst, &g, &sc, &Scenario::perfect(helpers)).unwrap();
        if dist.archive != central.archive || dist.local != central.local {
            mismatched += 1;
        }
        let modeled = |h: usize| {
            let mut s = Scenario::perfect(h);
            s.charge = Charge::Modeled;
            run_distributed(&inst, &g, &sc, &s).unwrap().metrics.local_phase_us
        };
        if modeled(a) > modeled(1) {
            slower += 1;
        }
    }
    report.record(
        8,
        "distributed equivalence",
        mismatched == 0 && slower == 0,
        format!("{DIST_INSTANCES} instances, {mismatched} archive mismatches, {slower} with z helpers slower than 1"),
    );
}

/// A generated instance with one intra and one inter dependency injected.
fn with_dependencies(env: &Env, i: u64) -> (ValidatedInstance, Vec<Dependency>, Vec<ActivityId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(300_000 + i);
    let a = rng.random_range(3..=8);
    let k = rng.random_range(3..=10);
    let n = rng.random_range(1..=5);
    let mut cfg = GeneratorConfig::new(a, k, 300_000 + i);
    cfg.mix = random_mix(&mut rng);
    let mut file = env.file(&cfg, n);
    let ids: Vec<ActivityId> = file.request.task.activities();

    let mut order: Vec<usize> = (0..a).collect();
    for j in (1..a).rev() {
        order.swap(j, rng.random_range(0..=j));
    }
    let group_len = if a >= 4 && rng.random_bool(0.3) { 3 } else { 2 };
    let group: Vec<ActivityId> = order[..group_len].iter().map(|&j| ids[j].clone()).collect();
    // Every group member gets copies of the first member's first `shared` ids.
    let shared = rng.random_range(1..=k);
    let shared_ids: Vec<String> = file.candidates[&group[0]][..shared].iter().map(|c| c.id.0.clone()).collect();
    for member in &group[1..] {
        let pool = file.candidates.get_mut(member).unwrap();
        for (c, id) in pool.iter_mut().zip(&shared_ids) {
            c.id = id.as_str().into();
        }
    }

    // Inter pair: `q` sits outside the intra group, `p` may sit inside it.
    let q = ids[order[group_len]].clone();
    let p = if group_len + 1 < a && rng.random_bool(0.5) {
        ids[order[group_len + 1]].clone()
    } else {
        group[rng.random_range(0..group_len)].clone()
    };
    let services = |act: &ActivityId, rng: &mut ChaCha8Rng| -> String {
        if group.contains(act) {
            shared_ids[rng.random_range(0..shared)].clone()
        } else {
            let pool = &file.candidates[act];
            pool[rng.random_range(0..pool.len())].id.0.clone()
        }
    };
    let links: Vec<InterLink> = (0..rng.random_range(1..=3))
        .map(|_| InterLink {
            from: Endpoint {
                activity: p.clone(),
                service: services(&p, &mut rng).as_str().into(),
            },
            to: Endpoint {
                activity: q.clone(),
                service: services(&q, &mut rng).as_str().into(),
            },
        })
        .collect();
    let pattern = if rng.random_bool(0.5) { LinkPattern::Sequence } else { LinkPattern::Parallel };
    let deps = vec![
        Dependency::Intra { activities: group.clone() },
        Dependency::Inter { links, pattern },
    ];
    let inst = file.validate().unwrap();
    let inst = if rng.random_bool(0.5) {
        let c = unconstrained(inst.properties());
        inst.with_constraints(c).unwrap()
    } else {
        inst
    };
    (inst, deps, group)
}

fn criterion_9(env: &Env, report: &mut Report) {
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for i in 0..DEPENDENCY_INSTANCES {
        let (inst, deps, group) = with_dependencies(env, i);
        let approach = AggregationApproach::ALL[(i % 3) as usize];
        let prep = preprocess(&inst, &deps, approach).unwrap();
        let g = prepare(&prep.reduced, i).unwrap();
        let sc = SelectConfig {
            approach,
            seed: i,
            ..Default::default()
        };
        let out = select(&prep.reduced, &g, &sc).unwrap();
        let task = prep.table.expanded_task(prep.reduced.task());
        for s in &out.archive.solutions {
            let assigned = qassa_core::dependency_prep::expand_fictive(&s.binding, &prep.table).unwrap();
            if assigned.len() != inst.activity_count() {
                failures.push(format!("instance {i}: expansion misses activities"));
                continue;
            }
            let binding: BTreeMap<ActivityId, ServiceCandidate> = assigned
                .iter()
                .map(|(act, sid)| {
                    let c = inst.candidates()[act].iter().find(|c| &c.id == sid).unwrap().clone();
                    (act.clone(), c)
                })
                .collect();
            let q = aggregate(&task, inst.properties(), &binding, approach).unwrap();
            if q != s.qos {
                failures.push(format!("instance {i}: re-aggregated QoS differs"));
            }
            let first = &assigned[&group[0]];
            let common = group.iter().all(|m| {
                &assigned[m] == first && inst.candidates()[m].iter().any(|c| &c.id == first)
            });
            if !common {
                failures.push(format!("instance {i}: intra group not bound to a common service"));
            }
            checked += 1;
        }
    }
    report.record(
        9,
        "dependency round-trip",
        failures.is_empty() && checked > 0,
        format!(
            "{DEPENDENCY_INSTANCES} instances, {checked} compositions checked, {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    );
}

fn binding_with_actual(
    binding: &BTreeMap<ActivityId, ServiceCandidate>,
    state: &ExecutionState,
) -> BTreeMap<ActivityId, ServiceCandidate> {
    binding
        .iter()
        .map(|(act, c)| {
            let mut c = c.clone();
            if let Some(q) = state.actual_qos.get(act) {
                c = state.composition.binding[act].clone();
                c.qos = q.clone();
            }
            (act.clone(), c)
        })
        .collect()
}

fn criterion_10(env: &Env, report: &mut Report) {
    let mut points = 0usize;
    let mut recoverable = 0usize;
    let mut false_relax = 0usize;
    let mut unsound = 0usize;
    for i in 0..ADAPT_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400_000 + i);
        let a = rng.random_range(2..=5);
        let k = rng.random_range(2..=6);
        let capacity = rng.random_range(1..=5);
        let mut cfg = GeneratorConfig::new(a, k, 400_000 + i);
        cfg.mix = random_mix(&mut rng);
        let approach = random_approach(&mut rng);
        let inst = env.instance(&cfg, rng.random_range(1..=5), ConstraintMode::Mean, approach);
        let g = prepare(&inst, i).unwrap();
        let sc = SelectConfig {
            approach,
            capacity,
            seed: i,
            top_k: 3,
        };
        let out = select(&inst, &g, &sc).unwrap();
        let Some(running) = out.archive.best().cloned() else { continue };
        let ctx = AdaptContext {
            instance: &inst,
            pools: &out.local.pools,
            approach,
            bounds: &out.bounds,
            table: None,
        };
        let order = inst.activities().to_vec();
        for executed in 0..order.len() {
            let mut state = ExecutionState::new(running.clone());
            for act in &order[..executed] {
                let advertised = &running.binding[act].qos;
                let observed: Vec<f64> = inst
                    .properties()
                    .iter()
                    .zip(&advertised.0)
                    .map(|(p, &v)| match p.direction {
                        Direction::Negative => v * rng.random_range(1.0..1.5),
                        Direction::Positive => v * rng.random_range(0.7..1.0),
                    })
                    .collect();
                state.execute(act, Some(QosVector(observed)));
            }
            for (fi, faulty) in order.iter().enumerate().skip(executed) {
                points += 1;
                let failed = &running.binding[faulty].id;
                let mut options: Vec<BTreeMap<ActivityId, ServiceCandidate>> = Vec::new();
                for &c in &out.local.pools[fi] {
                    let cand = &inst.pool(fi)[c];
                    if &cand.id != failed {
                        let mut b = running.binding.clone();
                        b.insert(faulty.clone(), cand.clone());
                        options.push(b);
                    }
                }
                for entry in &out.archive.solutions {
                    if &entry.binding[faulty].id != failed {
                        let mut b = entry.binding.clone();
                        for act in &order[..executed] {
                            b.insert(act.clone(), running.binding[act].clone());
                        }
                        options.push(b);
                    }
                }
                let feasible_exists = options.iter().any(|b| {
                    let q = aggregate(inst.task(), inst.properties(), &binding_with_actual(b, &state), approach).unwrap();
                    independently_feasible(&q.0, &inst)
                });
                let result = adapt(&ctx, &state, &Fault { activity: faulty.clone() }, &out.archive).unwrap();
                match result {
                    AdaptationOutcome::NewComposition { composition, .. } => {
                        if !sound_adaptation(&inst, &state, &composition, faulty, failed, approach, &order[..executed]) {
                            unsound += 1;
                        }
                    }
                    AdaptationOutcome::RelaxationNeeded { .. } => {
                        if feasible_exists {
                            false_relax += 1;
                        }
                    }
                }
                if feasible_exists {
                    recoverable += 1;
                }
            }
        }
    }
    report.record(
        10,
        "adaptation completeness",
        false_relax == 0 && unsound == 0 && points > 0,
        format!(
            "{points} fault points ({recoverable} recoverable), {false_relax} false relaxation requests, \
             {unsound} unsound compositions"
        ),
    );
}

fn sound_adaptation(
    inst: &ValidatedInstance,
    state: &ExecutionState,
    composition: &CompositionSolution,
    faulty: &ActivityId,
    failed: &qassa_core::model::ServiceId,
    approach: AggregationApproach,
    executed: &[ActivityId],
) -> bool {
    let keeps_executed = executed
        .iter()
        .all(|act| composition.binding[act].id == state.composition.binding[act].id);
    let q = aggregate(inst.task(), inst.properties(), &binding_with_actual(&composition.binding, state), approach).unwrap();
    keeps_executed && &composition.binding[faulty].id != failed && independently_feasible(&q.0, inst)
}

struct Counter(usize);

impl CrsObserver for Counter {
    fn on_iteration(&mut self, _iteration: usize, _working: &WorkingScore) {
        self.0 += 1;
    }
}

fn criterion_11(env: &Env, report: &mut Report) {
    let mut wrong = 0;
    let mut shapes = std::collections::BTreeSet::new();
    for i in 0..BUDGET_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500_000 + i);
        let a = rng.random_range(1..=12);
        let k = rng.random_range(1..=30);
        let mut cfg = GeneratorConfig::new(a, k, 500_000 + i);
        cfg.mix = random_mix(&mut rng);
        let inst = env.instance(&cfg, rng.random_range(1..=5), ConstraintMode::Mean, AggregationApproach::WorstCase);
        let g = prepare(&inst, i).unwrap();
        let local = local_select_all(&inst, &g, i, rng.random_range(1..=4)).unwrap();
        // Also exercise arbitrary pools, including single-candidate ones.
        let pools: Vec<Vec<usize>> = if rng.random_bool(0.5) {
            local.pools
        } else {
            (0..a)
                .map(|j| {
                    let m = inst.pool(j).len();
                    (0..rng.random_range(1..=m)).collect()
                })
                .collect()
        };
        let total: usize = pools.iter().map(Vec::len).sum();
        let bounds = instance_bounds(&inst, AggregationApproach::WorstCase);
        let mut counter = Counter(0);
        let (_, stats) = crs_select_observed(&inst, &pools, AggregationApproach::WorstCase, &bounds, i, 10, &mut counter);
        let expected = total - a + 1;
        if counter.0 != expected || stats.iterations != expected {
            wrong += 1;
        }
        shapes.insert((total, a));
    }
    report.record(
        11,
        "budget exactness",
        wrong == 0,
        format!("{} distinct (T, Z) pairs, {wrong} wrong iteration counts", shapes.len()),
    );
}

#[test]
fn acceptance() {
    let env = Env::new();
    let mut report = Report { lines: Vec::new() };
    criterion_1(&env, &mut report);
    criterion_2(&env, &mut report);
    let grid = run_grid(&env);
    criterion_3(&grid, &mut report);
    criterion_4(&env, &mut report);
    criterion_5(&env, &mut report);
    criterion_6(&grid, &mut report);
    criterion_7(&grid, &mut report);
    criterion_8(&env, &mut report);
    criterion_9(&env, &mut report);
    criterion_10(&env, &mut report);
    criterion_11(&env, &mut report);

    let failed: Vec<&String> = report.lines.iter().filter(|(p, _)| !p).map(|(_, l)| l).collect();
    println!("{} of {} criteria passed", report.lines.len() - failed.len(), report.lines.len());
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
}
