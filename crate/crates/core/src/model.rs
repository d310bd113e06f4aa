//! Domain types shared by every phase, and request validation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::CompiledTask;

/// Tolerance on `Σ w_i = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Higher is better.
    Positive,
    /// Lower is better.
    Negative,
}

/// Drives which operator folds a property over the pattern tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    #[serde(alias = "time-like", alias = "time_like")]
    Time,
    #[serde(alias = "cost-like", alias = "cost_like")]
    Cost,
    Multiplicative,
    Bottleneck,
}

impl Category {
    /// The only direction a property of this category may take.
    pub fn expected_direction(self) -> Direction {
        match self {
            Category::Time | Category::Cost => Direction::Negative,
            Category::Multiplicative | Category::Bottleneck => Direction::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosProperty {
    pub id: usize,
    pub name: String,
    pub direction: Direction,
    pub category: Category,
}

/// One entry of a property-set descriptor file. `column` and `scale` only
/// matter when loading a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyDescriptor {
    pub name: String,
    pub direction: Direction,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropertyError {
    #[error("property set is empty")]
    Empty,
    #[error("duplicate property name `{0}`")]
    DuplicateName(String),
    #[error("property `{name}` has category {category:?} but direction {direction:?}")]
    InconsistentDirection {
        name: String,
        category: Category,
        direction: Direction,
    },
}

/// Ordered set of QoS properties; a property's id is its position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PropertyDescriptor>", into = "Vec<PropertyDescriptor>")]
pub struct PropertySet {
    props: Vec<QosProperty>,
}

impl PropertySet {
    pub fn new(descriptors: &[PropertyDescriptor]) -> Result<Self, PropertyError> {
        if descriptors.is_empty() {
            return Err(PropertyError::Empty);
        }
        let mut seen = HashSet::new();
        let mut props = Vec::with_capacity(descriptors.len());
        for (id, d) in descriptors.iter().enumerate() {
            if !seen.insert(d.name.as_str()) {
                return Err(PropertyError::DuplicateName(d.name.clone()));
            }
            if d.category.expected_direction() != d.direction {
                return Err(PropertyError::InconsistentDirection {
                    name: d.name.clone(),
                    category: d.category,
                    direction: d.direction,
                });
            }
            props.push(QosProperty {
                id,
                name: d.name.clone(),
                direction: d.direction,
                category: d.category,
            });
        }
        Ok(Self { props })
    }

    pub fn len(&self) -> usize {
        self.props.len()
    }

    pub fn is_empty(&self) -> bool {
        self.props.is_empty()
    }

    pub fn get(&self, id: usize) -> &QosProperty {
        &self.props[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &QosProperty> {
        self.props.iter()
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.props.iter().map(|p| p.direction).collect()
    }

    pub fn categories(&self) -> Vec<Category> {
        self.props.iter().map(|p| p.category).collect()
    }

    /// Keeps the first `n` properties.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            props: self.props[..n.min(self.props.len())].to_vec(),
        }
    }

    pub fn descriptors(&self) -> Vec<PropertyDescriptor> {
        self.props
            .iter()
            .map(|p| PropertyDescriptor {
                name: p.name.clone(),
                direction: p.direction,
                category: p.category,
                column: None,
                scale: None,
            })
            .collect()
    }
}

impl TryFrom<Vec<PropertyDescriptor>> for PropertySet {
    type Error = PropertyError;

    fn try_from(value: Vec<PropertyDescriptor>) -> Result<Self, Self::Error> {
        PropertySet::new(&value)
    }
}

impl From<PropertySet> for Vec<PropertyDescriptor> {
    fn from(value: PropertySet) -> Self {
        value.descriptors()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QosVector(pub Vec<f64>);

impl QosVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for QosVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(ServiceId);
string_id!(ActivityId);

/// How two linked services combine when a fictive service is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkPattern {
    #[default]
    Sequence,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Constituent {
    pub activity: ActivityId,
    pub service: ServiceId,
}

/// Where a fictive service came from: two services joined by a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FictiveOrigin {
    pub link: LinkPattern,
    pub parts: Vec<Constituent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceCandidate {
    pub id: ServiceId,
    pub qos: QosVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<FictiveOrigin>,
}

impl ServiceCandidate {
    pub fn new(id: impl Into<String>, qos: Vec<f64>) -> Self {
        Self {
            id: ServiceId(id.into()),
            qos: QosVector(qos),
            origin: None,
        }
    }

    pub fn is_fictive(&self) -> bool {
        self.origin.is_some()
    }

    pub fn constituents(&self) -> &[Constituent] {
        self.origin.as_ref().map(|o| o.parts.as_slice()).unwrap_or(&[])
    }
}

/// Node of the task's execution-pattern tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternNode {
    Activity(ActivityId),
    Sequence(Vec<PatternNode>),
    Parallel(Vec<PatternNode>),
    Loop {
        body: Box<PatternNode>,
        min_iter: u32,
        mean_iter: f64,
        max_iter: u32,
    },
}

impl PatternNode {
    pub fn activity(id: impl Into<String>) -> Self {
        PatternNode::Activity(ActivityId(id.into()))
    }

    pub fn looped(body: PatternNode, min_iter: u32, mean_iter: f64, max_iter: u32) -> Self {
        PatternNode::Loop {
            body: Box::new(body),
            min_iter,
            mean_iter,
            max_iter,
        }
    }

    /// Activities in depth-first (graph) order.
    pub fn activities(&self) -> Vec<ActivityId> {
        let mut out = Vec::new();
        self.collect_activities(&mut out);
        out
    }

    fn collect_activities(&self, out: &mut Vec<ActivityId>) {
        match self {
            PatternNode::Activity(a) => out.push(a.clone()),
            PatternNode::Sequence(ch) | PatternNode::Parallel(ch) => {
                ch.iter().for_each(|c| c.collect_activities(out))
            }
            PatternNode::Loop { body, .. } => body.collect_activities(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskGraph {
    pub root: PatternNode,
}

impl TaskGraph {
    pub fn new(root: PatternNode) -> Self {
        Self { root }
    }

    /// A flat sequence over the given activity names.
    pub fn sequence<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Self {
        Self::new(PatternNode::Sequence(
            ids.into_iter().map(PatternNode::activity).collect(),
        ))
    }

    pub fn activities(&self) -> Vec<ActivityId> {
        self.root.activities()
    }

    pub fn activity_count(&self) -> usize {
        self.activities().len()
    }
}

/// Per-activity candidate lists.
pub type CandidateMap = BTreeMap<ActivityId, Vec<ServiceCandidate>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRequest {
    pub task: TaskGraph,
    /// One bound per property; the property's direction sets the inequality
    /// sense. Infinite bounds mean "unconstrained" and appear in JSON as
    /// `"inf"` / `"-inf"`.
    #[serde(with = "bounds_json")]
    pub constraints: Vec<f64>,
    pub weights: Vec<f64>,
}

mod bounds_json {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Bound {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|&x| match x {
                f64::INFINITY => Bound::Named("inf".into()),
                f64::NEG_INFINITY => Bound::Named("-inf".into()),
                x => Bound::Finite(x),
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Bound>::deserialize(d)?
            .into_iter()
            .map(|b| match b {
                Bound::Finite(x) => Ok(x),
                Bound::Named(s) => match s.as_str() {
                    "inf" | "+inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    other => Err(serde::de::Error::custom(format!("invalid bound `{other}`"))),
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("weights sum to {sum}, expected 1")]
    WeightSumViolation { sum: f64 },
    #[error("weight {index} is negative or not finite ({value})")]
    InvalidWeight { index: usize, value: f64 },
    #[error("{what}: expected {expected} values, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("service `{service}` at `{activity}`: property {property} has invalid value {value}")]
    InvalidQosValue {
        activity: ActivityId,
        service: ServiceId,
        property: usize,
        value: f64,
    },
    #[error("constraint {index} is NaN")]
    InvalidConstraint { index: usize },
    #[error("activity `{0}` has no candidate services")]
    EmptyCandidateList(ActivityId),
    #[error("candidates given for `{0}`, which is not in the task")]
    UnknownActivity(ActivityId),
    #[error("duplicate service `{service}` in the candidates of `{activity}`")]
    DuplicateService {
        activity: ActivityId,
        service: ServiceId,
    },
    #[error("loop over {first_activity} has invalid bounds ({min}, {mean}, {max})")]
    InvalidLoopBounds {
        first_activity: String,
        min: u32,
        mean: f64,
        max: u32,
    },
    #[error("activity `{0}` appears more than once in the task")]
    DuplicateActivity(ActivityId),
    #[error("empty sequence or parallel pattern")]
    EmptyPattern,
}

/// A request whose invariants have all been checked, plus the candidate pools
/// indexed by activity position (graph order).
#[derive(Debug, Clone)]
pub struct ValidatedInstance {
    properties: PropertySet,
    request: UserRequest,
    candidates: CandidateMap,
    compiled: CompiledTask,
    pools: Vec<Vec<ServiceCandidate>>,
}

/// Checks, in order: weights, dimensions, candidates, task structure and loop
/// bounds. The first violation found is returned.
pub fn validate_request(
    properties: &PropertySet,
    request: UserRequest,
    candidates: CandidateMap,
) -> Result<ValidatedInstance, ModelError> {
    let n = properties.len();

    for (index, &w) in request.weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(ModelError::InvalidWeight { index, value: w });
        }
    }
    let sum: f64 = request.weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(ModelError::WeightSumViolation { sum });
    }

    if request.weights.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "weights".into(),
            expected: n,
            found: request.weights.len(),
        });
    }
    if request.constraints.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "constraints".into(),
            expected: n,
            found: request.constraints.len(),
        });
    }
    if let Some(index) = request.constraints.iter().position(|u| u.is_nan()) {
        return Err(ModelError::InvalidConstraint { index });
    }
    let order = request.task.activities();
    for activity in &order {
        for cand in candidates.get(activity).into_iter().flatten() {
            check_vector(properties, activity, cand)?;
        }
    }
    for (activity, list) in &candidates {
        if !order.contains(activity) {
            // dimension-check stray entries too before reporting them
            for cand in list {
                check_vector(properties, activity, cand)?;
            }
        }
    }

    for activity in &order {
        match candidates.get(activity) {
            Some(list) if !list.is_empty() => {
                let mut ids = HashSet::new();
                for c in list {
                    if !ids.insert(&c.id) {
                        return Err(ModelError::DuplicateService {
                            activity: activity.clone(),
                            service: c.id.clone(),
                        });
                    }
                }
            }
            _ => return Err(ModelError::EmptyCandidateList(activity.clone())),
        }
    }
    if let Some(stray) = candidates.keys().find(|a| !order.contains(a)) {
        return Err(ModelError::UnknownActivity(stray.clone()));
    }

    check_structure(&request.task.root)?;
    let compiled = CompiledTask::compile(&request.task)?;

    let pools = compiled
        .activities()
        .iter()
        .map(|a| candidates[a].clone())
        .collect();
    Ok(ValidatedInstance {
        properties: properties.clone(),
        request,
        candidates,
        compiled,
        pools,
    })
}

fn check_vector(
    properties: &PropertySet,
    activity: &ActivityId,
    cand: &ServiceCandidate,
) -> Result<(), ModelError> {
    if cand.qos.len() != properties.len() {
        return Err(ModelError::DimensionMismatch {
            what: format!("QoS vector of `{}` at `{}`", cand.id, activity),
            expected: properties.len(),
            found: cand.qos.len(),
        });
    }
    for (property, (&value, prop)) in cand.qos.values().iter().zip(properties.iter()).enumerate() {
        let ok = value.is_finite()
            && match prop.category {
                Category::Multiplicative => (0.0..=1.0).contains(&value),
                _ => value >= 0.0,
            };
        if !ok {
            return Err(ModelError::InvalidQosValue {
                activity: activity.clone(),
                service: cand.id.clone(),
                property,
                value,
            });
        }
    }
    Ok(())
}

fn check_structure(node: &PatternNode) -> Result<(), ModelError> {
    match node {
        PatternNode::Activity(_) => Ok(()),
        PatternNode::Sequence(ch) | PatternNode::Parallel(ch) => {
            if ch.is_empty() {
                return Err(ModelError::EmptyPattern);
            }
            ch.iter().try_for_each(check_structure)
        }
        PatternNode::Loop {
            body,
            min_iter,
            mean_iter,
            max_iter,
        } => {
            let ok = *min_iter >= 1
                && mean_iter.is_finite()
                && f64::from(*min_iter) <= *mean_iter
                && *mean_iter <= f64::from(*max_iter);
            if !ok {
                return Err(ModelError::InvalidLoopBounds {
                    first_activity: body
                        .activities()
                        .first()
                        .map(|a| a.to_string())
                        .unwrap_or_default(),
                    min: *min_iter,
                    mean: *mean_iter,
                    max: *max_iter,
                });
            }
            check_structure(body)
        }
    }
}

impl ValidatedInstance {
    pub fn properties(&self) -> &PropertySet {
        &self.properties
    }

    pub fn request(&self) -> &UserRequest {
        &self.request
    }

    pub fn task(&self) -> &TaskGraph {
        &self.request.task
    }

    pub fn weights(&self) -> &[f64] {
        &self.request.weights
    }

    pub fn constraints(&self) -> &[f64] {
        &self.request.constraints
    }

    pub fn candidates(&self) -> &CandidateMap {
        &self.candidates
    }

    pub fn compiled(&self) -> &CompiledTask {
        &self.compiled
    }

    /// Activities in graph order; pool `i` belongs to `activities()[i]`.
    pub fn activities(&self) -> &[ActivityId] {
        self.compiled.activities()
    }

    pub fn activity_index(&self, activity: &ActivityId) -> Option<usize> {
        self.compiled.index_of(activity)
    }

    pub fn pools(&self) -> &[Vec<ServiceCandidate>] {
        &self.pools
    }

    pub fn pool(&self, activity: usize) -> &[ServiceCandidate] {
        &self.pools[activity]
    }

    pub fn activity_count(&self) -> usize {
        self.pools.len()
    }

    /// Π m_i, saturating.
    pub fn binding_space(&self) -> u128 {
        self.pools
            .iter()
            .fold(1u128, |acc, p| acc.saturating_mul(p.len() as u128))
    }

    /// Same instance under new global constraints.
    pub fn with_constraints(&self, constraints: Vec<f64>) -> Result<Self, ModelError> {
        if constraints.len() != self.properties.len() {
            return Err(ModelError::DimensionMismatch {
                what: "constraints".into(),
                expected: self.properties.len(),
                found: constraints.len(),
            });
        }
        if let Some(index) = constraints.iter().position(|u| u.is_nan()) {
            return Err(ModelError::InvalidConstraint { index });
        }
        let mut out = self.clone();
        out.request.constraints = constraints;
        Ok(out)
    }

    /// Same instance under new weights (re-checked).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self, ModelError> {
        let request = UserRequest {
            weights,
            ..self.request.clone()
        };
        validate_request(&self.properties, request, self.candidates.clone())
    }
}

/// Bounds that every aggregated vector satisfies.
pub fn unconstrained(properties: &PropertySet) -> Vec<f64> {
    properties
        .iter()
        .map(|p| match p.direction {
            Direction::Negative => f64::INFINITY,
            Direction::Positive => f64::NEG_INFINITY,
        })
        .collect()
}
