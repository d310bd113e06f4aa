//! Global phase: controlled random search over the locally selected pools.
//!
//! A working composition is improved by single-service replacements; every
//! feasible composition evaluated along the way competes for a place in a
//! bounded archive of alternatives.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{feasible, utility, violation, AggregationApproach, UtilityBounds};
use crate::model::{ActivityId, QosVector, ServiceCandidate, ServiceId, ValidatedInstance};
use crate::seed;

pub const DEFAULT_ARCHIVE_CAPACITY: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSolution {
    pub binding: BTreeMap<ActivityId, ServiceCandidate>,
    pub qos: QosVector,
    pub utility: f64,
}

impl CompositionSolution {
    /// Bound service ids in the given activity order.
    pub fn ids_in(&self, order: &[ActivityId]) -> Vec<&ServiceId> {
        order.iter().map(|a| &self.binding[a].id).collect()
    }
}

/// Descending utility, then lexicographic service ids in graph order.
pub fn solution_order(a: &CompositionSolution, b: &CompositionSolution, order: &[ActivityId]) -> Ordering {
    b.utility
        .total_cmp(&a.utility)
        .then_with(|| a.ids_in(order).cmp(&b.ids_in(order)))
}

/// Ranked, duplicate-free, bounded list of feasible compositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionArchive {
    pub capacity: usize,
    pub solutions: Vec<CompositionSolution>,
}

impl SolutionArchive {
    pub fn empty(capacity: usize) -> Self {
        Self {
            capacity,
            solutions: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn best(&self) -> Option<&CompositionSolution> {
        self.solutions.first()
    }
}

/// Sorts solutions by [`solution_order`].
pub fn rank(mut solutions: Vec<CompositionSolution>, order: &[ActivityId]) -> Vec<CompositionSolution> {
    solutions.sort_by(|a, b| solution_order(a, b, order));
    solutions
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CrsStats {
    /// Mutation steps performed: `T − Z + 1` unless a budget was given.
    pub iterations: usize,
    /// Compositions evaluated, including the initial one.
    pub evaluated: usize,
    pub feasible_evaluated: usize,
    /// Mutations adopted as the working composition.
    pub accepted: usize,
    /// `T`: total pool size over all activities.
    pub pool_total: usize,
}

/// Where the working composition stands, compared lexicographically:
/// feasible beats infeasible; among feasible, higher utility; among
/// infeasible, smaller violation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkingScore {
    pub feasible: bool,
    pub utility: f64,
    pub violation: f64,
}

impl WorkingScore {
    /// Strict improvement test used to accept a mutation.
    pub fn improves_on(&self, current: &WorkingScore) -> bool {
        match (self.feasible, current.feasible) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.utility > current.utility,
            (false, false) => self.violation < current.violation,
        }
    }
}

struct Entry {
    picks: Vec<usize>,
    qos: Vec<f64>,
    utility: f64,
}

/// Evaluates compositions given as one pick per activity from `pools`.
pub struct Evaluator<'a> {
    instance: &'a ValidatedInstance,
    pools: &'a [Vec<usize>],
    approach: AggregationApproach,
    bounds: &'a UtilityBounds,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        instance: &'a ValidatedInstance,
        pools: &'a [Vec<usize>],
        approach: AggregationApproach,
        bounds: &'a UtilityBounds,
    ) -> Self {
        Self {
            instance,
            pools,
            approach,
            bounds,
        }
    }

    pub fn candidate(&self, activity: usize, pick: usize) -> &'a ServiceCandidate {
        &self.instance.pool(activity)[self.pools[activity][pick]]
    }

    pub fn evaluate(&self, picks: &[usize], out: &mut [f64]) -> WorkingScore {
        let instance = self.instance;
        instance.compiled().aggregate_into(
            instance.properties(),
            self.approach,
            |i| self.candidate(i, picks[i]).qos.values(),
            out,
        );
        let props = instance.properties();
        let ok = feasible(out, instance.constraints(), props);
        WorkingScore {
            feasible: ok,
            utility: utility(out, instance.weights(), self.bounds, props),
            violation: if ok {
                0.0
            } else {
                violation(out, instance.constraints(), self.bounds, props)
            },
        }
    }

    pub fn solution(&self, picks: &[usize], qos: Vec<f64>, utility: f64) -> CompositionSolution {
        let binding = self
            .instance
            .activities()
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), self.candidate(i, picks[i]).clone()))
            .collect();
        CompositionSolution {
            binding,
            qos: QosVector(qos),
            utility,
        }
    }

    fn ids(&self, picks: &[usize]) -> Vec<&'a ServiceId> {
        picks
            .iter()
            .enumerate()
            .map(|(i, &p)| &self.candidate(i, p).id)
            .collect()
    }
}

struct Archive<'e, 'a> {
    capacity: usize,
    entries: Vec<Entry>,
    members: HashSet<Vec<usize>>,
    eval: &'e Evaluator<'a>,
}

impl Archive<'_, '_> {
    fn order(&self, a: &Entry, b: &Entry) -> Ordering {
        b.utility
            .total_cmp(&a.utility)
            .then_with(|| self.eval.ids(&a.picks).cmp(&self.eval.ids(&b.picks)))
    }

    fn offer(&mut self, picks: &[usize], qos: &[f64], utility: f64) {
        if self.capacity == 0 || self.members.contains(picks) {
            return;
        }
        let entry = Entry {
            picks: picks.to_vec(),
            qos: qos.to_vec(),
            utility,
        };
        let pos = self
            .entries
            .partition_point(|e| self.order(e, &entry) == Ordering::Less);
        if pos >= self.capacity {
            return;
        }
        self.members.insert(entry.picks.clone());
        self.entries.insert(pos, entry);
        if self.entries.len() > self.capacity {
            let evicted = self.entries.pop().expect("over capacity");
            self.members.remove(&evicted.picks);
        }
    }
}

/// Observer hook for instrumented runs.
pub trait CrsObserver {
    fn on_iteration(&mut self, _iteration: usize, _working: &WorkingScore) {}
}

impl CrsObserver for () {}

/// Controlled random search.
///
/// `pools[i]` lists candidate indices of activity `i` (graph order) that the
/// local phase kept. The initial composition picks uniformly per activity;
/// then exactly `T − Z + 1` mutation steps replace one service of a uniformly
/// chosen activity (among those with alternatives) by a uniformly chosen
/// alternative. A mutation becomes the working composition only if it
/// strictly improves it ([`WorkingScore::improves_on`]).
pub fn crs_select(
    instance: &ValidatedInstance,
    pools: &[Vec<usize>],
    approach: AggregationApproach,
    bounds: &UtilityBounds,
    seed: u64,
    capacity: usize,
) -> (SolutionArchive, CrsStats) {
    crs_select_observed(instance, pools, approach, bounds, seed, capacity, &mut ())
}

pub fn crs_select_observed(
    instance: &ValidatedInstance,
    pools: &[Vec<usize>],
    approach: AggregationApproach,
    bounds: &UtilityBounds,
    seed: u64,
    capacity: usize,
    observer: &mut impl CrsObserver,
) -> (SolutionArchive, CrsStats) {
    let budget = pools.iter().map(Vec::len).sum::<usize>() + 1 - pools.len();
    crs_select_budget(instance, pools, approach, bounds, seed, capacity, budget, observer)
}

/// CRS with an explicit number of mutation steps in place of `T − Z + 1`.
#[allow(clippy::too_many_arguments)]
pub fn crs_select_budget(
    instance: &ValidatedInstance,
    pools: &[Vec<usize>],
    approach: AggregationApproach,
    bounds: &UtilityBounds,
    seed: u64,
    capacity: usize,
    iterations: usize,
    observer: &mut impl CrsObserver,
) -> (SolutionArchive, CrsStats) {
    assert_eq!(pools.len(), instance.activity_count(), "one pool per activity");
    assert!(pools.iter().all(|p| !p.is_empty()), "pools must be non-empty");

    let eval = Evaluator::new(instance, pools, approach, bounds);
    let mut archive = Archive {
        capacity,
        entries: Vec::new(),
        members: HashSet::new(),
        eval: &eval,
    };
    let mut rng = seed::rng(seed::derive(seed, seed::GLOBAL_PHASE, 0));
    let n = instance.properties().len();
    let z = pools.len();
    let total: usize = pools.iter().map(Vec::len).sum();
    let mut stats = CrsStats {
        pool_total: total,
        ..Default::default()
    };

    let mut working: Vec<usize> = pools.iter().map(|p| rng.random_range(0..p.len())).collect();
    let mut qos = vec![0.0; n];
    let mut score = eval.evaluate(&working, &mut qos);
    stats.evaluated += 1;
    if score.feasible {
        stats.feasible_evaluated += 1;
        archive.offer(&working, &qos, score.utility);
    }

    let mutable: Vec<usize> = (0..z).filter(|&i| pools[i].len() > 1).collect();
    let mut trial = working.clone();
    let mut trial_qos = vec![0.0; n];
    for iteration in 0..iterations {
        stats.iterations += 1;
        if mutable.is_empty() {
            observer.on_iteration(iteration, &score);
            continue;
        }
        let activity = mutable[rng.random_range(0..mutable.len())];
        let len = pools[activity].len();
        let mut alt = rng.random_range(0..len - 1);
        if alt >= working[activity] {
            alt += 1;
        }
        trial.copy_from_slice(&working);
        trial[activity] = alt;
        let trial_score = eval.evaluate(&trial, &mut trial_qos);
        stats.evaluated += 1;
        if trial_score.feasible {
            stats.feasible_evaluated += 1;
            archive.offer(&trial, &trial_qos, trial_score.utility);
        }
        if trial_score.improves_on(&score) {
            working.copy_from_slice(&trial);
            qos.copy_from_slice(&trial_qos);
            score = trial_score;
            stats.accepted += 1;
        }
        observer.on_iteration(iteration, &score);
    }

    let solutions = archive
        .entries
        .iter()
        .map(|e| eval.solution(&e.picks, e.qos.clone(), e.utility))
        .collect();
    (
        SolutionArchive {
            capacity,
            solutions,
        },
        stats,
    )
}
