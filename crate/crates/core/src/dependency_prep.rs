//! Dependency pre-processing.
//!
//! Intra-dependent activities (to be fulfilled by one common service) are
//! merged into a coarse activity whose candidates are the services they
//! share. Inter-dependent activities (whose concrete services must co-occur)
//! are merged into a coarse activity whose candidates are fictive services,
//! one per link. After selection, fictive bindings are expanded back onto the
//! original activities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{aggregate, AggregationApproach, CompiledTask};
use crate::global_selection::CompositionSolution;
use crate::model::{
    validate_request, ActivityId, CandidateMap, Constituent, FictiveOrigin, LinkPattern,
    ModelError, PatternNode, QosVector, ServiceCandidate, ServiceId, TaskGraph, UserRequest,
    ValidatedInstance,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub activity: ActivityId,
    pub service: ServiceId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterLink {
    pub from: Endpoint,
    pub to: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dependency {
    Intra {
        activities: Vec<ActivityId>,
    },
    Inter {
        links: Vec<InterLink>,
        #[serde(default)]
        pattern: LinkPattern,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DependencyError {
    #[error("intra dependency needs at least two distinct activities")]
    TooFewActivities,
    #[error("dependency references unknown activity {0}")]
    UnknownActivity(ActivityId),
    #[error("dependency references unknown service {service} of activity {activity}")]
    UnknownService {
        activity: ActivityId,
        service: ServiceId,
    },
    #[error("inter link joins activity {0} to itself")]
    SelfLink(ActivityId),
    #[error("no service is common to activities {0:?}")]
    EmptyIntersection(Vec<ActivityId>),
    #[error("inter dependency has no usable links")]
    NoLinks,
    #[error("activity {0} is claimed by dependency groups that cannot be merged")]
    ConflictingDependencies(ActivityId),
    #[error("service {service} is not a known candidate of coarse activity {activity}")]
    UnknownFictiveId {
        activity: ActivityId,
        service: ServiceId,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrepWarning {
    /// Merged activities were not contiguous siblings; the coarse activity
    /// took the position of the first one.
    NonAdjacentMerge(Vec<ActivityId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoarseEntry {
    Intra {
        members: Vec<ActivityId>,
    },
    Inter {
        first: ActivityId,
        second: ActivityId,
        link: LinkPattern,
    },
}

/// How to map reduced bindings back onto original activities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTable {
    pub coarse: BTreeMap<ActivityId, CoarseEntry>,
    /// Per inter-coarse activity: fictive id → its two parts.
    pub fictive: BTreeMap<ActivityId, BTreeMap<ServiceId, [Constituent; 2]>>,
    /// Original activity → reduced activity that now carries it.
    pub owner: BTreeMap<ActivityId, ActivityId>,
}

impl ExpansionTable {
    pub fn is_empty(&self) -> bool {
        self.coarse.is_empty()
    }

    /// Reduced activity carrying `original`.
    pub fn owner_of<'a>(&'a self, original: &'a ActivityId) -> &'a ActivityId {
        self.owner.get(original).unwrap_or(original)
    }

    /// Original activities realised by `activity` (itself when not coarse).
    pub fn originals(&self, activity: &ActivityId) -> Vec<ActivityId> {
        match self.coarse.get(activity) {
            None => vec![activity.clone()],
            Some(CoarseEntry::Intra { members }) => members.clone(),
            Some(CoarseEntry::Inter { first, second, .. }) => {
                let mut out = self.originals(first);
                out.extend(self.originals(second));
                out
            }
        }
    }

    /// Concrete (original activity, service) pairs behind binding `service`
    /// to `activity`.
    pub fn assignments(
        &self,
        activity: &ActivityId,
        service: &ServiceId,
    ) -> Result<Vec<Constituent>, DependencyError> {
        let mut out = Vec::new();
        self.expand_into(activity, service, &mut out)?;
        Ok(out)
    }

    fn expand_into(
        &self,
        activity: &ActivityId,
        service: &ServiceId,
        out: &mut Vec<Constituent>,
    ) -> Result<(), DependencyError> {
        match self.coarse.get(activity) {
            None => out.push(Constituent {
                activity: activity.clone(),
                service: service.clone(),
            }),
            Some(CoarseEntry::Intra { members }) => {
                out.extend(members.iter().map(|m| Constituent {
                    activity: m.clone(),
                    service: service.clone(),
                }))
            }
            Some(CoarseEntry::Inter { .. }) => {
                let parts = self
                    .fictive
                    .get(activity)
                    .and_then(|f| f.get(service))
                    .ok_or_else(|| DependencyError::UnknownFictiveId {
                        activity: activity.clone(),
                        service: service.clone(),
                    })?;
                for p in parts {
                    self.expand_into(&p.activity, &p.service, out)?;
                }
            }
        }
        Ok(())
    }

    /// The pattern that `activity` stands for, over original activities.
    /// An intra group is represented by its first member, since one service
    /// invocation fulfils all of them.
    pub fn expanded_node(&self, activity: &ActivityId) -> PatternNode {
        match self.coarse.get(activity) {
            None => PatternNode::Activity(activity.clone()),
            Some(CoarseEntry::Intra { members }) => PatternNode::Activity(members[0].clone()),
            Some(CoarseEntry::Inter { first, second, link }) => {
                let children = vec![self.expanded_node(first), self.expanded_node(second)];
                match link {
                    LinkPattern::Sequence => PatternNode::Sequence(children),
                    LinkPattern::Parallel => PatternNode::Parallel(children),
                }
            }
        }
    }

    /// `task` with every coarse activity replaced by [`Self::expanded_node`].
    pub fn expanded_task(&self, task: &TaskGraph) -> TaskGraph {
        TaskGraph::new(self.expand_tree(&task.root))
    }

    fn expand_tree(&self, node: &PatternNode) -> PatternNode {
        match node {
            PatternNode::Activity(a) => self.expanded_node(a),
            PatternNode::Sequence(ch) => {
                PatternNode::Sequence(ch.iter().map(|c| self.expand_tree(c)).collect())
            }
            PatternNode::Parallel(ch) => {
                PatternNode::Parallel(ch.iter().map(|c| self.expand_tree(c)).collect())
            }
            PatternNode::Loop {
                body,
                min_iter,
                mean_iter,
                max_iter,
            } => PatternNode::looped(self.expand_tree(body), *min_iter, *mean_iter, *max_iter),
        }
    }
}

/// Bindings of a reduced composition mapped onto original activities.
pub fn expand_fictive(
    binding: &BTreeMap<ActivityId, ServiceCandidate>,
    table: &ExpansionTable,
) -> Result<BTreeMap<ActivityId, ServiceId>, DependencyError> {
    let mut out = BTreeMap::new();
    for (activity, candidate) in binding {
        for c in table.assignments(activity, &candidate.id)? {
            out.insert(c.activity, c.service);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedComposition {
    pub binding: BTreeMap<ActivityId, ServiceCandidate>,
    /// QoS re-aggregated from the original services over the expanded task.
    pub qos: QosVector,
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub original: ValidatedInstance,
    pub reduced: ValidatedInstance,
    pub table: ExpansionTable,
    pub warnings: Vec<PrepWarning>,
}

impl Preprocessed {
    /// Expands `solution` and re-aggregates it from the original services.
    pub fn expand(
        &self,
        solution: &CompositionSolution,
        approach: AggregationApproach,
    ) -> Result<ExpandedComposition, DependencyError> {
        let assigned = expand_fictive(&solution.binding, &self.table)?;
        let mut binding = BTreeMap::new();
        for (activity, service) in assigned {
            let candidate = find(self.original.candidates(), &activity, &service)?;
            binding.insert(activity, candidate.clone());
        }
        let task = self.table.expanded_task(self.reduced.task());
        let qos = aggregate(&task, self.original.properties(), &binding, approach)
            .expect("expanded task binds only original activities");
        Ok(ExpandedComposition { binding, qos })
    }
}

fn find<'a>(
    candidates: &'a CandidateMap,
    activity: &ActivityId,
    service: &ServiceId,
) -> Result<&'a ServiceCandidate, DependencyError> {
    candidates
        .get(activity)
        .ok_or_else(|| DependencyError::UnknownActivity(activity.clone()))?
        .iter()
        .find(|c| &c.id == service)
        .ok_or_else(|| DependencyError::UnknownService {
            activity: activity.clone(),
            service: service.clone(),
        })
}

struct Work {
    root: PatternNode,
    candidates: CandidateMap,
    table: ExpansionTable,
    warnings: Vec<PrepWarning>,
}

impl Work {
    fn order(&self) -> Vec<ActivityId> {
        self.root.activities()
    }

    fn position(&self, a: &ActivityId) -> usize {
        self.order().iter().position(|x| x == a).expect("activity in tree")
    }

    /// Replaces `members` by `coarse` at the first member's position.
    fn replace(&mut self, members: &[ActivityId], coarse: &ActivityId) {
        if !contiguous_siblings(&self.root, members) {
            self.warnings
                .push(PrepWarning::NonAdjacentMerge(members.to_vec()));
        }
        let mut map: BTreeMap<ActivityId, Option<ActivityId>> =
            members.iter().map(|m| (m.clone(), None)).collect();
        map.insert(members[0].clone(), Some(coarse.clone()));
        self.root = rewrite(&self.root, &map).expect("coarse leaf survives");
        for m in members {
            self.candidates.remove(m);
        }
        for owner in self.table.owner.values_mut() {
            if members.contains(owner) {
                *owner = coarse.clone();
            }
        }
    }

    fn owner(&self, original: &ActivityId) -> ActivityId {
        self.table.owner_of(original).clone()
    }

    /// Indices of `activity`'s current candidates realising `endpoint`.
    fn matching(&self, activity: &ActivityId, endpoint: &Endpoint) -> Result<Vec<usize>, DependencyError> {
        let mut out = Vec::new();
        for (i, c) in self.candidates[activity].iter().enumerate() {
            let parts = self.table.assignments(activity, &c.id)?;
            if parts
                .iter()
                .any(|p| p.activity == endpoint.activity && p.service == endpoint.service)
            {
                out.push(i);
            }
        }
        Ok(out)
    }
}

fn rewrite(node: &PatternNode, map: &BTreeMap<ActivityId, Option<ActivityId>>) -> Option<PatternNode> {
    match node {
        PatternNode::Activity(a) => match map.get(a) {
            None => Some(node.clone()),
            Some(r) => r.clone().map(PatternNode::Activity),
        },
        PatternNode::Sequence(ch) => {
            let kept: Vec<_> = ch.iter().filter_map(|c| rewrite(c, map)).collect();
            (!kept.is_empty()).then_some(PatternNode::Sequence(kept))
        }
        PatternNode::Parallel(ch) => {
            let kept: Vec<_> = ch.iter().filter_map(|c| rewrite(c, map)).collect();
            (!kept.is_empty()).then_some(PatternNode::Parallel(kept))
        }
        PatternNode::Loop {
            body,
            min_iter,
            mean_iter,
            max_iter,
        } => rewrite(body, map).map(|b| PatternNode::looped(b, *min_iter, *mean_iter, *max_iter)),
    }
}

/// True when all `ids` are leaf children of one composite node, side by side.
fn contiguous_siblings(node: &PatternNode, ids: &[ActivityId]) -> bool {
    match node {
        PatternNode::Activity(_) => false,
        PatternNode::Loop { body, .. } => contiguous_siblings(body, ids),
        PatternNode::Sequence(ch) | PatternNode::Parallel(ch) => {
            let pos: Vec<usize> = ch
                .iter()
                .enumerate()
                .filter(|(_, c)| matches!(c, PatternNode::Activity(a) if ids.contains(a)))
                .map(|(i, _)| i)
                .collect();
            if pos.len() == ids.len() {
                return pos.windows(2).all(|w| w[1] == w[0] + 1);
            }
            ch.iter().any(|c| contiguous_siblings(c, ids))
        }
    }
}

fn compound(a: &ActivityId, table: &ExpansionTable) -> String {
    if table.coarse.contains_key(a) {
        format!("({a})")
    } else {
        a.to_string()
    }
}

/// QoS of two services joined by `link`, folded by the aggregation module.
pub fn link_qos(
    x: &ServiceCandidate,
    y: &ServiceCandidate,
    link: LinkPattern,
    instance: &ValidatedInstance,
    approach: AggregationApproach,
) -> Vec<f64> {
    let leaves = vec![PatternNode::activity("x"), PatternNode::activity("y")];
    let root = match link {
        LinkPattern::Sequence => PatternNode::Sequence(leaves),
        LinkPattern::Parallel => PatternNode::Parallel(leaves),
    };
    let compiled = CompiledTask::compile(&TaskGraph::new(root)).expect("two distinct leaves");
    let parts = [x.qos.values(), y.qos.values()];
    compiled
        .aggregate_with(instance.properties(), approach, |i| parts[i])
        .0
}

/// Applies all intra merges, then all inter merges, in list order.
pub fn preprocess(
    instance: &ValidatedInstance,
    dependencies: &[Dependency],
    approach: AggregationApproach,
) -> Result<Preprocessed, DependencyError> {
    check_references(instance, dependencies)?;
    let mut work = Work {
        root: instance.task().root.clone(),
        candidates: instance.candidates().clone(),
        table: ExpansionTable {
            owner: instance
                .activities()
                .iter()
                .map(|a| (a.clone(), a.clone()))
                .collect(),
            ..Default::default()
        },
        warnings: Vec::new(),
    };

    for group in intra_groups(instance, dependencies)? {
        merge_intra(&mut work, &group)?;
    }
    for dep in dependencies {
        if let Dependency::Inter { links, pattern } = dep {
            merge_inter(&mut work, links, *pattern, instance, approach)?;
        }
    }
    work.table.owner.retain(|k, v| k != v);

    let reduced = if work.table.is_empty() {
        instance.clone()
    } else {
        validate_request(
            instance.properties(),
            UserRequest {
                task: TaskGraph::new(work.root),
                constraints: instance.constraints().to_vec(),
                weights: instance.weights().to_vec(),
            },
            work.candidates,
        )?
    };
    Ok(Preprocessed {
        original: instance.clone(),
        reduced,
        table: work.table,
        warnings: work.warnings,
    })
}

fn check_references(instance: &ValidatedInstance, dependencies: &[Dependency]) -> Result<(), DependencyError> {
    let known = |a: &ActivityId| {
        instance
            .activity_index(a)
            .map(|_| ())
            .ok_or_else(|| DependencyError::UnknownActivity(a.clone()))
    };
    for dep in dependencies {
        match dep {
            Dependency::Intra { activities } => {
                activities.iter().try_for_each(known)?;
                let distinct: BTreeSet<_> = activities.iter().collect();
                if distinct.len() < 2 {
                    return Err(DependencyError::TooFewActivities);
                }
            }
            Dependency::Inter { links, .. } => {
                if links.is_empty() {
                    return Err(DependencyError::NoLinks);
                }
                for link in links {
                    for e in [&link.from, &link.to] {
                        known(&e.activity)?;
                        find(instance.candidates(), &e.activity, &e.service)?;
                    }
                    if link.from.activity == link.to.activity {
                        return Err(DependencyError::SelfLink(link.from.activity.clone()));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Transitive closure of the intra dependencies, each group in graph order,
/// groups ordered by their first member.
fn intra_groups(
    instance: &ValidatedInstance,
    dependencies: &[Dependency],
) -> Result<Vec<Vec<ActivityId>>, DependencyError> {
    let z = instance.activity_count();
    let mut parent: Vec<usize> = (0..z).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut involved = vec![false; z];
    for dep in dependencies {
        if let Dependency::Intra { activities } = dep {
            let idx: Vec<usize> = activities
                .iter()
                .map(|a| instance.activity_index(a).expect("checked"))
                .collect();
            for &i in &idx {
                involved[i] = true;
                let (ra, rb) = (root(&mut parent, idx[0]), root(&mut parent, i));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<ActivityId>> = BTreeMap::new();
    for i in (0..z).filter(|&i| involved[i]) {
        let r = root(&mut parent, i);
        groups
            .entry(r)
            .or_default()
            .push(instance.activities()[i].clone());
    }
    Ok(groups.into_values().collect())
}

fn merge_intra(work: &mut Work, members: &[ActivityId]) -> Result<(), DependencyError> {
    let coarse = ActivityId::new(
        members
            .iter()
            .map(ActivityId::as_str)
            .collect::<Vec<_>>()
            .join("+"),
    );
    let merged = intersect(members, &work.candidates)?;
    work.replace(members, &coarse);
    work.candidates.insert(coarse.clone(), merged);
    work.table.coarse.insert(
        coarse,
        CoarseEntry::Intra {
            members: members.to_vec(),
        },
    );
    Ok(())
}

/// Services common to every member (by id), in the first member's order and
/// carrying the first member's QoS.
pub fn intersect(
    members: &[ActivityId],
    candidates: &CandidateMap,
) -> Result<Vec<ServiceCandidate>, DependencyError> {
    let sets: Vec<BTreeSet<&ServiceId>> = members[1..]
        .iter()
        .map(|m| candidates[m].iter().map(|c| &c.id).collect())
        .collect();
    let merged: Vec<ServiceCandidate> = candidates[&members[0]]
        .iter()
        .filter(|c| sets.iter().all(|s| s.contains(&c.id)))
        .cloned()
        .collect();
    if merged.is_empty() {
        return Err(DependencyError::EmptyIntersection(members.to_vec()));
    }
    Ok(merged)
}

fn merge_inter(
    work: &mut Work,
    links: &[InterLink],
    pattern: LinkPattern,
    instance: &ValidatedInstance,
    approach: AggregationApproach,
) -> Result<(), DependencyError> {
    let mut pending: Vec<&InterLink> = links.iter().collect();
    while !pending.is_empty() {
        let head = pending[0];
        let (x, y) = (work.owner(&head.from.activity), work.owner(&head.to.activity));
        if x == y {
            return Err(DependencyError::ConflictingDependencies(head.from.activity.clone()));
        }
        let (first, second) = if work.position(&x) <= work.position(&y) {
            (x, y)
        } else {
            (y, x)
        };
        let (batch, rest): (Vec<&InterLink>, Vec<&InterLink>) =
            std::mem::take(&mut pending).into_iter().partition(|l| {
            let pair = [work.owner(&l.from.activity), work.owner(&l.to.activity)];
            pair.contains(&first) && pair.contains(&second)
        });

        let mut fictive: Vec<ServiceCandidate> = Vec::new();
        let mut parts_table = BTreeMap::new();
        for link in batch {
            let (ef, es) = if work.owner(&link.from.activity) == first {
                (&link.from, &link.to)
            } else {
                (&link.to, &link.from)
            };
            for i in work.matching(&first, ef)? {
                for j in work.matching(&second, es)? {
                    let sx = &work.candidates[&first][i];
                    let sy = &work.candidates[&second][j];
                    let id = ServiceId::new(format!("{}*{}", sx.id, sy.id));
                    if parts_table.contains_key(&id) {
                        continue;
                    }
                    let parts = [
                        Constituent {
                            activity: first.clone(),
                            service: sx.id.clone(),
                        },
                        Constituent {
                            activity: second.clone(),
                            service: sy.id.clone(),
                        },
                    ];
                    fictive.push(ServiceCandidate {
                        id: id.clone(),
                        qos: QosVector(link_qos(sx, sy, pattern, instance, approach)),
                        origin: Some(FictiveOrigin {
                            link: pattern,
                            parts: parts.to_vec(),
                        }),
                    });
                    parts_table.insert(id, parts);
                }
            }
        }
        if fictive.is_empty() {
            return Err(DependencyError::NoLinks);
        }

        let coarse = ActivityId::new(format!(
            "{}*{}",
            compound(&first, &work.table),
            compound(&second, &work.table)
        ));
        work.replace(&[first.clone(), second.clone()], &coarse);
        work.candidates.insert(coarse.clone(), fictive);
        work.table.fictive.insert(coarse.clone(), parts_table);
        work.table.coarse.insert(
            coarse,
            CoarseEntry::Inter {
                first,
                second,
                link: pattern,
            },
        );
        pending = rest;
    }
    Ok(())
}
