//! Run-time adaptation of a composition whose service failed mid-execution.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{feasible, utility, violated, AggregationApproach, UtilityBounds};
use crate::dependency_prep::ExpansionTable;
use crate::global_selection::{CompositionSolution, SolutionArchive};
use crate::model::{ActivityId, Constituent, QosVector, ServiceCandidate, ValidatedInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionState {
    pub composition: CompositionSolution,
    pub executed: BTreeSet<ActivityId>,
    /// Observed QoS of each executed activity.
    pub actual_qos: BTreeMap<ActivityId, QosVector>,
}

impl ExecutionState {
    pub fn new(composition: CompositionSolution) -> Self {
        Self {
            composition,
            executed: BTreeSet::new(),
            actual_qos: BTreeMap::new(),
        }
    }

    /// Marks `activity` executed, recording the observed QoS (the advertised
    /// one when nothing was observed).
    pub fn execute(&mut self, activity: &ActivityId, observed: Option<QosVector>) {
        let qos = observed.unwrap_or_else(|| self.composition.binding[activity].qos.clone());
        self.executed.insert(activity.clone());
        self.actual_qos.insert(activity.clone(), qos);
    }
}

/// A failed activity. `activity` may be an activity of the instance being
/// adapted or, with an expansion table, an original activity hidden inside a
/// coarse one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub activity: ActivityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    SingleSubstitution,
    SubComposition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome")]
pub enum AdaptationOutcome {
    NewComposition {
        strategy: Strategy,
        composition: CompositionSolution,
    },
    RelaxationNeeded {
        /// Property ids whose constraints blocked every option.
        violated: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdaptError {
    #[error("activity {0} is not part of the composition")]
    UnknownActivity(ActivityId),
    #[error("activity {0} has already executed")]
    AlreadyExecuted(ActivityId),
    #[error("no alternative service keeps the composition feasible")]
    NoFeasibleSubstitute { violated: Vec<usize> },
    #[error("no archived alternative keeps the composition feasible")]
    NoFeasibleSubcomposition { violated: Vec<usize> },
}

/// Everything adaptation needs besides the state.
pub struct AdaptContext<'a> {
    pub instance: &'a ValidatedInstance,
    /// Local pools: candidate indices per activity, graph order.
    pub pools: &'a [Vec<usize>],
    pub approach: AggregationApproach,
    pub bounds: &'a UtilityBounds,
    pub table: Option<&'a ExpansionTable>,
}

/// The faulty activity's index and the concrete services that failed.
struct Located {
    index: usize,
    faulty: Vec<Constituent>,
}

impl AdaptContext<'_> {
    fn assignments(&self, activity: &ActivityId, c: &ServiceCandidate) -> Vec<Constituent> {
        match self.table {
            Some(t) => t
                .assignments(activity, &c.id)
                .expect("candidates of the reduced instance expand"),
            None => vec![Constituent {
                activity: activity.clone(),
                service: c.id.clone(),
            }],
        }
    }

    fn locate(&self, state: &ExecutionState, fault: &Fault) -> Result<Located, AdaptError> {
        let (owner, narrowed) = match self.instance.activity_index(&fault.activity) {
            Some(_) => (fault.activity.clone(), false),
            None => match self.table.map(|t| t.owner_of(&fault.activity)) {
                Some(o) if self.instance.activity_index(o).is_some() => (o.clone(), true),
                _ => return Err(AdaptError::UnknownActivity(fault.activity.clone())),
            },
        };
        if state.executed.contains(&owner) {
            return Err(AdaptError::AlreadyExecuted(owner));
        }
        let index = self.instance.activity_index(&owner).expect("checked");
        let bound = state
            .composition
            .binding
            .get(&owner)
            .ok_or_else(|| AdaptError::UnknownActivity(owner.clone()))?;
        let mut faulty = self.assignments(&owner, bound);
        if narrowed {
            faulty.retain(|c| c.activity == fault.activity);
        }
        Ok(Located { index, faulty })
    }

    fn involves_fault(&self, activity: &ActivityId, c: &ServiceCandidate, faulty: &[Constituent]) -> bool {
        self.assignments(activity, c).iter().any(|x| faulty.contains(x))
    }

    /// Aggregates `binding`, using observed QoS for executed activities.
    fn evaluate(&self, state: &ExecutionState, binding: &[&ServiceCandidate]) -> (Vec<f64>, bool, f64) {
        let inst = self.instance;
        let acts = inst.activities();
        let q = inst
            .compiled()
            .aggregate_with(inst.properties(), self.approach, |i| {
                match state.actual_qos.get(&acts[i]) {
                    Some(actual) if state.executed.contains(&acts[i]) => actual.values(),
                    _ => binding[i].qos.values(),
                }
            })
            .0;
        let ok = feasible(&q, inst.constraints(), inst.properties());
        let u = utility(&q, inst.weights(), self.bounds, inst.properties());
        (q, ok, u)
    }

    fn solution(&self, binding: &[&ServiceCandidate], qos: Vec<f64>, utility: f64) -> CompositionSolution {
        CompositionSolution {
            binding: self
                .instance
                .activities()
                .iter()
                .cloned()
                .zip(binding.iter().map(|c| (*c).clone()))
                .collect(),
            qos: QosVector(qos),
            utility,
        }
    }

    fn current<'s>(&self, state: &'s ExecutionState) -> Vec<&'s ServiceCandidate> {
        self.instance
            .activities()
            .iter()
            .map(|a| &state.composition.binding[a])
            .collect()
    }
}

/// Best feasible replacement of the faulty activity's service from its pool.
pub fn substitute_single(
    ctx: &AdaptContext<'_>,
    state: &ExecutionState,
    fault: &Fault,
) -> Result<CompositionSolution, AdaptError> {
    let loc = ctx.locate(state, fault)?;
    single(ctx, state, &loc)
}

fn single(ctx: &AdaptContext<'_>, state: &ExecutionState, loc: &Located) -> Result<CompositionSolution, AdaptError> {
    let activity = &ctx.instance.activities()[loc.index];
    let pool = ctx.instance.pool(loc.index);
    let mut binding = ctx.current(state);
    let mut best: Option<(Vec<f64>, f64, &ServiceCandidate)> = None;
    let mut blocked = BTreeSet::new();
    for &k in &ctx.pools[loc.index] {
        let c = &pool[k];
        if ctx.involves_fault(activity, c, &loc.faulty) {
            continue;
        }
        binding[loc.index] = c;
        let (q, ok, u) = ctx.evaluate(state, &binding);
        if !ok {
            blocked.extend(violated(&q, ctx.instance.constraints(), ctx.instance.properties()));
        } else if best.as_ref().is_none_or(|(_, bu, _)| u > *bu) {
            best = Some((q, u, c));
        }
    }
    match best {
        Some((q, u, c)) => {
            binding[loc.index] = c;
            Ok(ctx.solution(&binding, q, u))
        }
        None => Err(AdaptError::NoFeasibleSubstitute {
            violated: blocked.into_iter().collect(),
        }),
    }
}

/// Best feasible hybrid of the executed prefix and one archived composition's
/// remaining bindings.
pub fn substitute_subcomposition(
    ctx: &AdaptContext<'_>,
    state: &ExecutionState,
    fault: &Fault,
    archive: &SolutionArchive,
) -> Result<CompositionSolution, AdaptError> {
    let loc = ctx.locate(state, fault)?;
    subcomposition(ctx, state, &loc, archive)
}

fn subcomposition(
    ctx: &AdaptContext<'_>,
    state: &ExecutionState,
    loc: &Located,
    archive: &SolutionArchive,
) -> Result<CompositionSolution, AdaptError> {
    let acts = ctx.instance.activities();
    let faulty_activity = &acts[loc.index];
    let current = ctx.current(state);
    let mut best: Option<(Vec<f64>, f64, Vec<&ServiceCandidate>)> = None;
    let mut blocked = BTreeSet::new();
    for entry in &archive.solutions {
        let Some(replacement) = entry.binding.get(faulty_activity) else {
            continue;
        };
        if ctx.involves_fault(faulty_activity, replacement, &loc.faulty) {
            continue;
        }
        let hybrid: Vec<&ServiceCandidate> = acts
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if state.executed.contains(a) {
                    current[i]
                } else {
                    entry.binding.get(a).unwrap_or(current[i])
                }
            })
            .collect();
        let (q, ok, u) = ctx.evaluate(state, &hybrid);
        if !ok {
            blocked.extend(violated(&q, ctx.instance.constraints(), ctx.instance.properties()));
        } else if best.as_ref().is_none_or(|(_, bu, _)| u > *bu) {
            best = Some((q, u, hybrid));
        }
    }
    match best {
        Some((q, u, hybrid)) => Ok(ctx.solution(&hybrid, q, u)),
        None => Err(AdaptError::NoFeasibleSubcomposition {
            violated: blocked.into_iter().collect(),
        }),
    }
}

/// Single substitution, then sub-composition substitution, then a request to
/// relax the constraints that blocked every option.
pub fn adapt(
    ctx: &AdaptContext<'_>,
    state: &ExecutionState,
    fault: &Fault,
    archive: &SolutionArchive,
) -> Result<AdaptationOutcome, AdaptError> {
    let loc = ctx.locate(state, fault)?;
    let single_blocked = match single(ctx, state, &loc) {
        Ok(composition) => {
            return Ok(AdaptationOutcome::NewComposition {
                strategy: Strategy::SingleSubstitution,
                composition,
            })
        }
        Err(AdaptError::NoFeasibleSubstitute { violated }) => violated,
        Err(e) => return Err(e),
    };
    match subcomposition(ctx, state, &loc, archive) {
        Ok(composition) => Ok(AdaptationOutcome::NewComposition {
            strategy: Strategy::SubComposition,
            composition,
        }),
        Err(AdaptError::NoFeasibleSubcomposition { violated }) => {
            let all: BTreeSet<usize> = single_blocked.into_iter().chain(violated).collect();
            Ok(AdaptationOutcome::RelaxationNeeded {
                violated: all.into_iter().collect(),
            })
        }
        Err(e) => Err(e),
    }
}
