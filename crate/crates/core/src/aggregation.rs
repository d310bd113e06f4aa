//! End-to-end QoS of a composition over the pattern tree, plus utility and
//! feasibility.
//!
//! Operator table (per property category):
//!
//! | pattern  | time | cost | multiplicative | bottleneck |
//! |----------|------|------|----------------|------------|
//! | sequence | sum  | sum  | product        | min        |
//! | parallel | max  | sum  | product        | min        |
//! | loop     | L·v  | L·v  | v^L            | v          |
//!
//! The aggregation approach only changes the loop iteration count `L`:
//! `max_iter` (worst case), `min_iter` (best case) or `mean_iter` (mean value).
//!
//! Children are folded with `reduce`, never from an identity element, so a
//! subtree folded on its own and then spliced into a parent yields bit-identical
//! results to folding the whole tree. Fictive services rely on this.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ActivityId, CandidateMap, Category, Direction, ModelError, PatternNode, PropertySet,
    QosVector, ServiceCandidate, TaskGraph,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationApproach {
    #[default]
    #[serde(alias = "worst")]
    WorstCase,
    #[serde(alias = "best")]
    BestCase,
    #[serde(alias = "mean")]
    MeanValue,
}

impl AggregationApproach {
    pub const ALL: [AggregationApproach; 3] = [
        AggregationApproach::WorstCase,
        AggregationApproach::MeanValue,
        AggregationApproach::BestCase,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            AggregationApproach::WorstCase => "worst",
            AggregationApproach::BestCase => "best",
            AggregationApproach::MeanValue => "mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("activity `{0}` has no bound service")]
    UnboundActivity(ActivityId),
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(usize),
    Sequence(Vec<Node>),
    Parallel(Vec<Node>),
    Loop {
        body: Box<Node>,
        min: f64,
        mean: f64,
        max: f64,
    },
}

/// A task tree with activities resolved to dense indices (graph order).
#[derive(Debug, Clone)]
pub struct CompiledTask {
    activities: Vec<ActivityId>,
    index: HashMap<ActivityId, usize>,
    root: Node,
}

impl CompiledTask {
    pub fn compile(task: &TaskGraph) -> Result<Self, ModelError> {
        let mut activities = Vec::new();
        let mut index = HashMap::new();
        let root = Self::compile_node(&task.root, &mut activities, &mut index)?;
        Ok(Self {
            activities,
            index,
            root,
        })
    }

    fn compile_node(
        node: &PatternNode,
        activities: &mut Vec<ActivityId>,
        index: &mut HashMap<ActivityId, usize>,
    ) -> Result<Node, ModelError> {
        Ok(match node {
            PatternNode::Activity(a) => {
                if index.contains_key(a) {
                    return Err(ModelError::DuplicateActivity(a.clone()));
                }
                index.insert(a.clone(), activities.len());
                activities.push(a.clone());
                Node::Leaf(activities.len() - 1)
            }
            PatternNode::Sequence(ch) => Node::Sequence(
                ch.iter()
                    .map(|c| Self::compile_node(c, activities, index))
                    .collect::<Result<_, _>>()?,
            ),
            PatternNode::Parallel(ch) => Node::Parallel(
                ch.iter()
                    .map(|c| Self::compile_node(c, activities, index))
                    .collect::<Result<_, _>>()?,
            ),
            PatternNode::Loop {
                body,
                min_iter,
                mean_iter,
                max_iter,
            } => Node::Loop {
                body: Box::new(Self::compile_node(body, activities, index)?),
                min: f64::from(*min_iter),
                mean: *mean_iter,
                max: f64::from(*max_iter),
            },
        })
    }

    pub fn activities(&self) -> &[ActivityId] {
        &self.activities
    }

    pub fn index_of(&self, activity: &ActivityId) -> Option<usize> {
        self.index.get(activity).copied()
    }

    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.is_empty()
    }

    /// Folds property `property` (of category `category`) over the tree.
    /// `value(i)` returns activity `i`'s value for that property.
    pub fn fold_property(
        &self,
        category: Category,
        approach: AggregationApproach,
        value: &impl Fn(usize) -> f64,
    ) -> f64 {
        fold(&self.root, category, approach, value)
    }

    /// Aggregates every property; `qos(i)` returns activity `i`'s vector.
    pub fn aggregate_with<'a>(
        &self,
        properties: &PropertySet,
        approach: AggregationApproach,
        qos: impl Fn(usize) -> &'a [f64],
    ) -> QosVector {
        let mut out = vec![0.0; properties.len()];
        self.aggregate_into(properties, approach, qos, &mut out);
        QosVector(out)
    }

    pub fn aggregate_into<'a>(
        &self,
        properties: &PropertySet,
        approach: AggregationApproach,
        qos: impl Fn(usize) -> &'a [f64],
        out: &mut [f64],
    ) {
        for (j, prop) in properties.iter().enumerate() {
            out[j] = self.fold_property(prop.category, approach, &|i| qos(i)[j]);
        }
    }
}

fn fold(
    node: &Node,
    category: Category,
    approach: AggregationApproach,
    value: &impl Fn(usize) -> f64,
) -> f64 {
    match node {
        Node::Leaf(i) => value(*i),
        Node::Sequence(ch) => ch
            .iter()
            .map(|c| fold(c, category, approach, value))
            .reduce(|a, b| sequence_op(category, a, b))
            .expect("validated patterns are non-empty"),
        Node::Parallel(ch) => ch
            .iter()
            .map(|c| fold(c, category, approach, value))
            .reduce(|a, b| parallel_op(category, a, b))
            .expect("validated patterns are non-empty"),
        Node::Loop {
            body,
            min,
            mean,
            max,
        } => {
            let v = fold(body, category, approach, value);
            let l = match approach {
                AggregationApproach::WorstCase => *max,
                AggregationApproach::BestCase => *min,
                AggregationApproach::MeanValue => *mean,
            };
            loop_op(category, v, l)
        }
    }
}

fn sequence_op(category: Category, a: f64, b: f64) -> f64 {
    match category {
        Category::Time | Category::Cost => a + b,
        Category::Multiplicative => a * b,
        Category::Bottleneck => a.min(b),
    }
}

fn parallel_op(category: Category, a: f64, b: f64) -> f64 {
    match category {
        Category::Time => a.max(b),
        Category::Cost => a + b,
        Category::Multiplicative => a * b,
        Category::Bottleneck => a.min(b),
    }
}

fn loop_op(category: Category, v: f64, iterations: f64) -> f64 {
    match category {
        Category::Time | Category::Cost => iterations * v,
        Category::Multiplicative => v.powf(iterations),
        Category::Bottleneck => v,
    }
}

/// Aggregated QoS of `binding` over `task`.
pub fn aggregate(
    task: &TaskGraph,
    properties: &PropertySet,
    binding: &BTreeMap<ActivityId, ServiceCandidate>,
    approach: AggregationApproach,
) -> Result<QosVector, AggregationError> {
    let compiled = CompiledTask::compile(task).map_err(|e| match e {
        ModelError::DuplicateActivity(a) => AggregationError::UnboundActivity(a),
        other => unreachable!("compile only reports duplicates: {other}"),
    })?;
    let mut slots = Vec::with_capacity(compiled.len());
    for a in compiled.activities() {
        let c = binding
            .get(a)
            .ok_or_else(|| AggregationError::UnboundActivity(a.clone()))?;
        slots.push(c.qos.values());
    }
    Ok(compiled.aggregate_with(properties, approach, |i| slots[i]))
}

/// Per-property `(q_min, q_max)` normalization basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Aggregates the per-activity extreme values through the task. Every
/// operator is monotone non-decreasing in each argument over non-negative
/// values, so every binding's aggregate lies in `[min, max]`.
pub fn compute_bounds(
    compiled: &CompiledTask,
    pools: &[Vec<ServiceCandidate>],
    properties: &PropertySet,
    approach: AggregationApproach,
) -> UtilityBounds {
    let n = properties.len();
    let lows: Vec<Vec<f64>> = pools
        .iter()
        .map(|pool| {
            (0..n)
                .map(|j| pool.iter().map(|c| c.qos[j]).fold(f64::INFINITY, f64::min))
                .collect()
        })
        .collect();
    let highs: Vec<Vec<f64>> = pools
        .iter()
        .map(|pool| {
            (0..n)
                .map(|j| {
                    pool.iter()
                        .map(|c| c.qos[j])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        })
        .collect();
    let min = compiled
        .aggregate_with(properties, approach, |i| &lows[i])
        .0;
    let max = compiled
        .aggregate_with(properties, approach, |i| &highs[i])
        .0;
    UtilityBounds { min, max }
}

/// Bounds over a task and candidate map.
pub fn compute_bounds_for(
    task: &TaskGraph,
    candidates: &CandidateMap,
    properties: &PropertySet,
    approach: AggregationApproach,
) -> Result<UtilityBounds, AggregationError> {
    let compiled = CompiledTask::compile(task).map_err(|e| match e {
        ModelError::DuplicateActivity(a) => AggregationError::UnboundActivity(a),
        other => unreachable!("{other}"),
    })?;
    let pools = compiled
        .activities()
        .iter()
        .map(|a| {
            candidates
                .get(a)
                .cloned()
                .ok_or_else(|| AggregationError::UnboundActivity(a.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(compute_bounds(&compiled, &pools, properties, approach))
}

/// Normalized value of one property: 1 at the best bound, 0 at the worst.
pub fn normalize(q: f64, lo: f64, hi: f64, direction: Direction) -> f64 {
    if hi <= lo {
        return 1.0;
    }
    let r = match direction {
        Direction::Positive => (q - lo) / (hi - lo),
        Direction::Negative => (hi - q) / (hi - lo),
    };
    r.clamp(0.0, 1.0)
}

/// Weighted sum of normalized property values, in `[0, 1]`.
pub fn utility(
    q: &[f64],
    weights: &[f64],
    bounds: &UtilityBounds,
    properties: &PropertySet,
) -> f64 {
    properties
        .iter()
        .enumerate()
        .map(|(j, p)| weights[j] * normalize(q[j], bounds.min[j], bounds.max[j], p.direction))
        .sum()
}

pub fn satisfies(q: f64, bound: f64, direction: Direction) -> bool {
    match direction {
        Direction::Negative => q <= bound,
        Direction::Positive => q >= bound,
    }
}

/// True iff every property meets its global constraint.
pub fn feasible(q: &[f64], constraints: &[f64], properties: &PropertySet) -> bool {
    properties
        .iter()
        .enumerate()
        .all(|(j, p)| satisfies(q[j], constraints[j], p.direction))
}

/// Indices of the properties whose constraint `q` violates.
pub fn violated(q: &[f64], constraints: &[f64], properties: &PropertySet) -> Vec<usize> {
    properties
        .iter()
        .enumerate()
        .filter(|(j, p)| !satisfies(q[*j], constraints[*j], p.direction))
        .map(|(j, _)| j)
        .collect()
}

/// Sum of constraint violations, each scaled by its property's bound range.
pub fn violation(
    q: &[f64],
    constraints: &[f64],
    bounds: &UtilityBounds,
    properties: &PropertySet,
) -> f64 {
    properties
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let gap = match p.direction {
                Direction::Negative => q[j] - constraints[j],
                Direction::Positive => constraints[j] - q[j],
            };
            if gap <= 0.0 || !gap.is_finite() {
                return 0.0;
            }
            let range = bounds.max[j] - bounds.min[j];
            if range > 0.0 {
                gap / range
            } else {
                gap
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PropertyDescriptor;
    use proptest::prelude::*;

    fn props(cats: &[Category]) -> PropertySet {
        let d: Vec<_> = cats
            .iter()
            .enumerate()
            .map(|(i, c)| PropertyDescriptor {
                name: format!("p{i}"),
                direction: c.expected_direction(),
                category: *c,
                column: None,
                scale: None,
            })
            .collect();
        PropertySet::new(&d).unwrap()
    }

    fn bind(pairs: &[(&str, Vec<f64>)]) -> BTreeMap<ActivityId, ServiceCandidate> {
        pairs
            .iter()
            .map(|(a, q)| (ActivityId::from(*a), ServiceCandidate::new(format!("s-{a}"), q.clone())))
            .collect()
    }

    /// Independent tree interpreter over the operator table, written against
    /// `PatternNode` directly.
    fn interpret(
        node: &PatternNode,
        cat: Category,
        approach: AggregationApproach,
        vals: &BTreeMap<&str, f64>,
    ) -> f64 {
        match node {
            PatternNode::Activity(a) => vals[a.as_str()],
            PatternNode::Sequence(ch) => {
                let xs: Vec<f64> = ch.iter().map(|c| interpret(c, cat, approach, vals)).collect();
                match cat {
                    Category::Time | Category::Cost => xs.iter().sum(),
                    Category::Multiplicative => xs.iter().product(),
                    Category::Bottleneck => xs.iter().cloned().fold(f64::INFINITY, f64::min),
                }
            }
            PatternNode::Parallel(ch) => {
                let xs: Vec<f64> = ch.iter().map(|c| interpret(c, cat, approach, vals)).collect();
                match cat {
                    Category::Time => xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    Category::Cost => xs.iter().sum(),
                    Category::Multiplicative => xs.iter().product(),
                    Category::Bottleneck => xs.iter().cloned().fold(f64::INFINITY, f64::min),
                }
            }
            PatternNode::Loop {
                body,
                min_iter,
                mean_iter,
                max_iter,
            } => {
                let v = interpret(body, cat, approach, vals);
                let l = match approach {
                    AggregationApproach::WorstCase => *max_iter as f64,
                    AggregationApproach::BestCase => *min_iter as f64,
                    AggregationApproach::MeanValue => *mean_iter,
                };
                match cat {
                    Category::Time | Category::Cost => v * l,
                    Category::Multiplicative => v.powf(l),
                    Category::Bottleneck => v,
                }
            }
        }
    }

    #[test]
    fn sequence_sums_times() {
        let p = props(&[Category::Time]);
        let task = TaskGraph::sequence(["A", "B"]);
        let q = aggregate(&task, &p, &bind(&[("A", vec![10.0]), ("B", vec![20.0])]), Default::default()).unwrap();
        assert_eq!(q.0, vec![30.0]);
    }

    #[test]
    fn sequence_multiplies_availability() {
        let p = props(&[Category::Multiplicative]);
        let task = TaskGraph::sequence(["A", "B"]);
        let q = aggregate(&task, &p, &bind(&[("A", vec![0.9]), ("B", vec![0.8])]), Default::default()).unwrap();
        assert!((q[0] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn parallel_and_loop_examples() {
        let p = props(&[Category::Time]);
        let task = TaskGraph::new(PatternNode::Parallel(vec![
            PatternNode::activity("A"),
            PatternNode::activity("B"),
        ]));
        let b = bind(&[("A", vec![10.0]), ("B", vec![25.0])]);
        assert_eq!(aggregate(&task, &p, &b, AggregationApproach::WorstCase).unwrap().0, vec![25.0]);

        let p = props(&[Category::Cost]);
        let task = TaskGraph::new(PatternNode::looped(PatternNode::activity("A"), 1, 2.0, 3));
        let b = bind(&[("A", vec![5.0])]);
        let got: Vec<f64> = [
            AggregationApproach::BestCase,
            AggregationApproach::MeanValue,
            AggregationApproach::WorstCase,
        ]
        .iter()
        .map(|&ap| aggregate(&task, &p, &b, ap).unwrap()[0])
        .collect();
        assert_eq!(got, vec![5.0, 10.0, 15.0]);
        // cross-check against the reference interpreter
        let vals = BTreeMap::from([("A", 5.0)]);
        for (ap, want) in [
            (AggregationApproach::BestCase, 5.0),
            (AggregationApproach::MeanValue, 10.0),
            (AggregationApproach::WorstCase, 15.0),
        ] {
            assert_eq!(interpret(&task.root, Category::Cost, ap, &vals), want);
        }
    }

    #[test]
    fn unbound_activity_reported() {
        let p = props(&[Category::Time]);
        let task = TaskGraph::sequence(["A", "B"]);
        let err = aggregate(&task, &p, &bind(&[("A", vec![1.0])]), Default::default()).unwrap_err();
        assert_eq!(err, AggregationError::UnboundActivity("B".into()));
    }

    #[test]
    fn bounds_examples() {
        let p = props(&[Category::Time]);
        let task = TaskGraph::sequence(["A"]);
        let c: CandidateMap = [(
            ActivityId::from("A"),
            vec![ServiceCandidate::new("x", vec![10.0]), ServiceCandidate::new("y", vec![50.0])],
        )]
        .into();
        let b = compute_bounds_for(&task, &c, &p, Default::default()).unwrap();
        assert_eq!((b.min[0], b.max[0]), (10.0, 50.0));

        let task = TaskGraph::sequence(["A", "B"]);
        let mut c = c;
        c.insert(
            "B".into(),
            vec![ServiceCandidate::new("u", vec![5.0]), ServiceCandidate::new("v", vec![5.0])],
        );
        let b = compute_bounds_for(&task, &c, &p, Default::default()).unwrap();
        // the four compositions total 15, 15, 55, 55
        assert_eq!((b.min[0], b.max[0]), (15.0, 55.0));
    }

    #[test]
    fn single_candidate_pool_has_degenerate_bounds() {
        let p = props(&[Category::Time, Category::Multiplicative]);
        let task = TaskGraph::sequence(["A", "B"]);
        let c: CandidateMap = [
            ("A".into(), vec![ServiceCandidate::new("x", vec![3.0, 0.9])]),
            ("B".into(), vec![ServiceCandidate::new("y", vec![4.0, 0.5])]),
        ]
        .into();
        let b = compute_bounds_for(&task, &c, &p, Default::default()).unwrap();
        assert_eq!(b.min, b.max);
        assert_eq!(utility(&b.min, &[0.5, 0.5], &b, &p), 1.0);
    }

    #[test]
    fn utility_endpoints() {
        let p = props(&[Category::Time, Category::Multiplicative]);
        let bounds = UtilityBounds {
            min: vec![10.0, 0.5],
            max: vec![50.0, 0.9],
        };
        let w = [0.5, 0.5];
        assert_eq!(utility(&[10.0, 0.9], &w, &bounds, &p), 1.0);
        assert_eq!(utility(&[50.0, 0.5], &w, &bounds, &p), 0.0);
        assert_eq!(utility(&[10.0, 0.5], &w, &bounds, &p), 0.5);
    }

    #[test]
    fn feasibility_examples() {
        let p = props(&[Category::Time]);
        assert!(feasible(&[30.0], &[40.0], &p));
        assert!(!feasible(&[41.0], &[40.0], &p));
        let p = props(&[Category::Multiplicative]);
        assert!(feasible(&[0.95], &[0.9], &p));
        assert!(feasible(&[0.95], &[f64::NEG_INFINITY], &p));
    }

    fn arb_tree(depth: u32) -> impl Strategy<Value = PatternNode> {
        // leaves get renamed afterwards so activity ids stay unique
        let leaf = Just(PatternNode::activity("_"));
        leaf.prop_recursive(depth, 12, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..4).prop_map(PatternNode::Sequence),
                prop::collection::vec(inner.clone(), 1..4).prop_map(PatternNode::Parallel),
                (inner, 1u32..3, 0u32..3, 0.0f64..1.0).prop_map(|(b, lo, extra, t)| {
                    let hi = lo + extra;
                    PatternNode::looped(b, lo, lo as f64 + t * extra as f64, hi)
                }),
            ]
        })
    }

    fn rename(node: &mut PatternNode, next: &mut usize) {
        match node {
            PatternNode::Activity(a) => {
                *a = ActivityId(format!("A{next}"));
                *next += 1;
            }
            PatternNode::Sequence(ch) | PatternNode::Parallel(ch) => {
                ch.iter_mut().for_each(|c| rename(c, next))
            }
            PatternNode::Loop { body, .. } => rename(body, next),
        }
    }

    const CATS: [Category; 4] = [
        Category::Time,
        Category::Cost,
        Category::Multiplicative,
        Category::Bottleneck,
    ];

    proptest! {
        #[test]
        fn compiled_fold_matches_interpreter(
            mut tree in arb_tree(3),
            seed_vals in prop::collection::vec(0.0f64..1.0, 64),
        ) {
            let mut next = 0;
            rename(&mut tree, &mut next);
            let task = TaskGraph::new(tree);
            let compiled = CompiledTask::compile(&task).unwrap();
            let names: Vec<String> = compiled.activities().iter().map(|a| a.0.clone()).collect();
            let vals: BTreeMap<&str, f64> =
                names.iter().enumerate().map(|(i, a)| (a.as_str(), seed_vals[i % 64])).collect();
            for cat in CATS {
                for ap in AggregationApproach::ALL {
                    let got = compiled.fold_property(cat, ap, &|i| seed_vals[i % 64]);
                    let want = interpret(&task.root, cat, ap, &vals);
                    prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }
        }

        #[test]
        fn approaches_are_ordered(
            mut tree in arb_tree(3),
            seed_vals in prop::collection::vec(0.0f64..1.0, 64),
        ) {
            let mut next = 0;
            rename(&mut tree, &mut next);
            let compiled = CompiledTask::compile(&TaskGraph::new(tree)).unwrap();
            for cat in CATS {
                let f = |ap| compiled.fold_property(cat, ap, &|i| seed_vals[i % 64]);
                let (w, m, b) = (
                    f(AggregationApproach::WorstCase),
                    f(AggregationApproach::MeanValue),
                    f(AggregationApproach::BestCase),
                );
                let slack = 1e-12;
                match cat.expected_direction() {
                    Direction::Negative => prop_assert!(w >= m - slack && m >= b - slack),
                    Direction::Positive => prop_assert!(w <= m + slack && m <= b + slack),
                }
            }
        }

        #[test]
        fn sequence_is_associative(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let left = TaskGraph::new(PatternNode::Sequence(vec![
                PatternNode::activity("a"),
                PatternNode::Sequence(vec![PatternNode::activity("b"), PatternNode::activity("c")]),
            ]));
            let right = TaskGraph::new(PatternNode::Sequence(vec![
                PatternNode::Sequence(vec![PatternNode::activity("a"), PatternNode::activity("b")]),
                PatternNode::activity("c"),
            ]));
            let v = [a, b, c];
            for cat in CATS {
                let l = CompiledTask::compile(&left).unwrap().fold_property(cat, Default::default(), &|i| v[i]);
                let r = CompiledTask::compile(&right).unwrap().fold_property(cat, Default::default(), &|i| v[i]);
                prop_assert!((l - r).abs() <= 1e-15 * l.abs().max(1.0));
            }
        }

        #[test]
        fn utility_is_monotone(
            q in prop::collection::vec(0.0f64..1.0, 3),
            j in 0usize..3,
            step in 0.0f64..0.5,
        ) {
            let p = props(&[Category::Time, Category::Multiplicative, Category::Bottleneck]);
            let bounds = UtilityBounds { min: vec![0.0; 3], max: vec![1.0; 3] };
            let w = [0.2, 0.3, 0.5];
            let mut better = q.clone();
            match p.get(j).direction {
                Direction::Negative => better[j] = (q[j] - step).max(0.0),
                Direction::Positive => better[j] = (q[j] + step).min(1.0),
            }
            prop_assert!(utility(&better, &w, &bounds, &p) >= utility(&q, &w, &bounds, &p));
        }
    }

    #[test]
    fn bounds_are_sound_by_enumeration() {
        use rand::{Rng, SeedableRng};
        let p = props(&CATS);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let z = rng.random_range(1..=4);
            let k = rng.random_range(1..=5);
            let mut children: Vec<PatternNode> =
                (0..z).map(|i| PatternNode::activity(format!("A{i}"))).collect();
            if z > 1 && rng.random_bool(0.5) {
                let last = children.pop().unwrap();
                let prev = children.pop().unwrap();
                children.push(PatternNode::Parallel(vec![
                    last,
                    PatternNode::looped(prev, 1, 1.5, 2),
                ]));
            }
            let task = TaskGraph::new(PatternNode::Sequence(children));
            let compiled = CompiledTask::compile(&task).unwrap();
            let pools: Vec<Vec<ServiceCandidate>> = (0..z)
                .map(|i| {
                    (0..k)
                        .map(|s| {
                            ServiceCandidate::new(
                                format!("s{i}_{s}"),
                                vec![
                                    rng.random_range(0.0..100.0),
                                    rng.random_range(0.0..50.0),
                                    rng.random_range(0.5..1.0),
                                    rng.random_range(1.0..20.0),
                                ],
                            )
                        })
                        .collect()
                })
                .collect();
            for ap in AggregationApproach::ALL {
                let b = compute_bounds(&compiled, &pools, &p, ap);
                let mut idx = vec![0usize; z];
                loop {
                    let q = compiled.aggregate_with(&p, ap, |i| pools[i][idx[i]].qos.values());
                    for j in 0..4 {
                        assert!(b.min[j] <= q[j] && q[j] <= b.max[j]);
                    }
                    let mut pos = 0;
                    while pos < z {
                        idx[pos] += 1;
                        if idx[pos] < k {
                            break;
                        }
                        idx[pos] = 0;
                        pos += 1;
                    }
                    if pos == z {
                        break;
                    }
                }
            }
        }
    }
}
