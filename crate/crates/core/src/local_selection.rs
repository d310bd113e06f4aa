//! Per-activity local selection: cluster candidates per property, build QoS
//! levels and classes, and keep the classes with the highest quality
//! indicator.
//!
//! A class `QC(l, S)` is the set of candidates sitting in the rank-`l` cluster
//! of every property in `S`. Its quality indicator is `l · |S| · Σ_{j∈S} w_j`.

use std::cmp::Ordering;

use thiserror::Error;

use crate::clustering::{choose_g, kmeans_1d, ClusterError, Clustering};
use crate::model::{PropertySet, ServiceCandidate, ServiceId, ValidatedInstance};
use crate::seed;

const KMEANS_PROPERTY: u64 = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalError {
    #[error("activity has no candidates")]
    NoCandidates,
    #[error("cluster count must be at least 1")]
    ZeroLevels,
    #[error("expected {expected} cluster counts, got {got}")]
    LevelCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// The rank-`level` cluster of each property (member candidate indices).
#[derive(Debug, Clone, PartialEq)]
pub struct QosLevel {
    pub level: usize,
    pub clusters: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QosClass {
    pub level: usize,
    /// Covered property ids, ascending.
    pub covered: Vec<usize>,
    /// Candidate indices into the activity's candidate list, ascending.
    pub members: Vec<usize>,
    pub score: f64,
}

impl QosClass {
    pub fn epsilon(&self) -> usize {
        self.covered.len()
    }

    pub fn services<'a>(&self, candidates: &'a [ServiceCandidate]) -> Vec<&'a ServiceId> {
        self.members.iter().map(|&i| &candidates[i].id).collect()
    }
}

/// `l · ε · Σ_{j ∈ covered} w_j`, summing in ascending property order.
pub fn quality_indicator(level: usize, covered: &[usize], weights: &[f64]) -> f64 {
    let sum: f64 = covered.iter().map(|&j| weights[j]).sum();
    level as f64 * covered.len() as f64 * sum
}

/// Total order used to rank classes: higher score, then higher level, then
/// more covered properties, then the lexicographically smaller property set,
/// then the larger service set.
pub fn class_order(a: &QosClass, b: &QosClass) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.level.cmp(&a.level))
        .then(b.covered.len().cmp(&a.covered.len()))
        .then(a.covered.cmp(&b.covered))
        .then(b.members.len().cmp(&a.members.len()))
}

/// Per-property clusterings of one activity's candidates, with every
/// candidate's level per property.
#[derive(Debug, Clone)]
pub struct ActivityClustering {
    pub g: usize,
    pub per_property: Vec<Clustering<usize>>,
    /// `levels[candidate][property]`.
    pub levels: Vec<Vec<usize>>,
}

impl ActivityClustering {
    pub fn qos_level(&self, level: usize) -> QosLevel {
        let n = self.per_property.len();
        let clusters = (0..n)
            .map(|j| {
                (0..self.levels.len())
                    .filter(|&s| self.levels[s][j] == level)
                    .collect()
            })
            .collect();
        QosLevel { level, clusters }
    }

    /// Candidates in the level-`level` cluster of every property of `covered`.
    pub fn class_members(&self, level: usize, covered: &[usize]) -> Vec<usize> {
        (0..self.levels.len())
            .filter(|&s| covered.iter().all(|&j| self.levels[s][j] == level))
            .collect()
    }
}

/// Clusters `candidates` into `g` levels per property.
///
/// When a property has fewer distinct values than `g`, its clusters take the
/// top ranks: the best cluster is always level `g`.
pub fn cluster_activity(
    candidates: &[ServiceCandidate],
    properties: &PropertySet,
    g: usize,
    seed: u64,
) -> Result<ActivityClustering, LocalError> {
    if candidates.is_empty() {
        return Err(LocalError::NoCandidates);
    }
    if g == 0 {
        return Err(LocalError::ZeroLevels);
    }
    let mut levels = vec![vec![0; properties.len()]; candidates.len()];
    let mut per_property = Vec::with_capacity(properties.len());
    for (j, prop) in properties.iter().enumerate() {
        let values: Vec<(usize, f64)> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.qos[j]))
            .collect();
        let clustering = kmeans_1d(
            &values,
            g.min(values.len()),
            seed::derive(seed, KMEANS_PROPERTY, j as u64),
            prop.direction,
        )?;
        let offset = g - clustering.effective_g();
        for cluster in &clustering.clusters {
            for &s in &cluster.members {
                levels[s][j] = cluster.rank + offset;
            }
        }
        per_property.push(clustering);
    }
    Ok(ActivityClustering {
        g,
        per_property,
        levels,
    })
}

/// Every non-empty class, in [`class_order`].
pub fn enumerate_classes(clustering: &ActivityClustering, weights: &[f64]) -> Vec<QosClass> {
    let n = clustering.per_property.len();
    let mut classes = Vec::new();
    for level in (1..=clustering.g).rev() {
        let masks: Vec<u64> = clustering
            .levels
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &l)| l == level)
                    .fold(0u64, |m, (j, _)| m | (1 << j))
            })
            .collect();
        for eps in (1..=n).rev() {
            for covered in combinations(n, eps) {
                let want = covered.iter().fold(0u64, |m, &j| m | (1 << j));
                let members: Vec<usize> = masks
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m & want == want)
                    .map(|(s, _)| s)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let score = quality_indicator(level, &covered, weights);
                classes.push(QosClass {
                    level,
                    covered,
                    members,
                    score,
                });
            }
        }
    }
    classes.sort_by(class_order);
    classes
}

/// Size-`k` subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // rightmost position that can still advance
        let mut i = k;
        while i > 0 && cur[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// The `top_k` best classes of one activity.
pub fn select_top_classes(
    clustering: &ActivityClustering,
    weights: &[f64],
    top_k: usize,
) -> Vec<QosClass> {
    let n = clustering.per_property.len();
    if top_k == 1 {
        // QC(g, n) scores g·n·Σw, which bounds every other class.
        let all: Vec<usize> = (0..n).collect();
        let members = clustering.class_members(clustering.g, &all);
        if !members.is_empty() {
            let score = quality_indicator(clustering.g, &all, weights);
            return vec![QosClass {
                level: clustering.g,
                covered: all,
                members,
                score,
            }];
        }
    }
    let mut classes = enumerate_classes(clustering, weights);
    assert!(
        !classes.is_empty(),
        "every candidate sits in some cluster of every property"
    );
    classes.truncate(top_k.max(1));
    classes
}

/// The single best class of one activity.
pub fn select_qos_class(
    candidates: &[ServiceCandidate],
    properties: &PropertySet,
    weights: &[f64],
    g: usize,
    seed: u64,
) -> Result<QosClass, LocalError> {
    let clustering = cluster_activity(candidates, properties, g, seed)?;
    Ok(select_top_classes(&clustering, weights, 1).remove(0))
}

/// Candidate indices covered by `classes`, in class order, first occurrence
/// kept.
pub fn pool_from_classes(classes: &[QosClass]) -> Vec<usize> {
    let mut pool = Vec::new();
    for c in classes {
        for &m in &c.members {
            if !pool.contains(&m) {
                pool.push(m);
            }
        }
    }
    pool
}

/// Local selection for one activity, as run by a helper on an elementary
/// request.
pub fn select_for_activity(
    candidates: &[ServiceCandidate],
    properties: &PropertySet,
    weights: &[f64],
    g: usize,
    activity_seed: u64,
    top_k: usize,
) -> Result<Vec<QosClass>, LocalError> {
    let clustering = cluster_activity(candidates, properties, g, activity_seed)?;
    Ok(select_top_classes(&clustering, weights, top_k))
}

/// Seed used for activity `index` under run seed `seed`.
pub fn activity_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, seed::LOCAL_ACTIVITY, index as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSelection {
    /// Per activity (graph order), best classes first.
    pub classes: Vec<Vec<QosClass>>,
    /// Per activity, candidate indices handed to the global phase.
    pub pools: Vec<Vec<usize>>,
}

impl LocalSelection {
    pub fn from_classes(classes: Vec<Vec<QosClass>>) -> Self {
        let pools = classes.iter().map(|c| pool_from_classes(c)).collect();
        Self { classes, pools }
    }

    /// Σ |pool|.
    pub fn total_pool_size(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }
}

/// Runs local selection independently for every activity.
pub fn local_select_all(
    instance: &ValidatedInstance,
    g: &[usize],
    seed: u64,
    top_k: usize,
) -> Result<LocalSelection, LocalError> {
    if g.len() != instance.activity_count() {
        return Err(LocalError::LevelCountMismatch {
            expected: instance.activity_count(),
            got: g.len(),
        });
    }
    let classes = instance
        .pools()
        .iter()
        .enumerate()
        .map(|(i, pool)| {
            select_for_activity(
                pool,
                instance.properties(),
                instance.weights(),
                g[i],
                activity_seed(seed, i),
                top_k,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LocalSelection::from_classes(classes))
}

/// Cluster count for one activity: each property votes with its
/// Davies-Bouldin choice over `range` (clipped to the candidate count); the
/// most common vote wins, ties to the smaller count.
pub fn learn_g(
    candidates: &[ServiceCandidate],
    properties: &PropertySet,
    range: (usize, usize),
    seed: u64,
) -> Result<usize, LocalError> {
    if candidates.is_empty() {
        return Err(LocalError::NoCandidates);
    }
    let m = candidates.len();
    let hi = range.1.min(m);
    let lo = range.0.min(hi);
    let mut votes = vec![0usize; hi.max(1) + 1];
    for (j, prop) in properties.iter().enumerate() {
        let choice = if lo < 2 {
            hi.max(1)
        } else {
            let values: Vec<(usize, f64)> = candidates
                .iter()
                .enumerate()
                .map(|(i, c)| (i, c.qos[j]))
                .collect();
            choose_g(
                &values,
                (lo, hi),
                seed::derive(seed, seed::CHOOSE_G, j as u64),
                prop.direction,
            )?
        };
        votes[choice] += 1;
    }
    let best = votes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(g, _)| g)
        .expect("non-empty votes");
    Ok(best)
}

/// [`learn_g`] for every activity of an instance.
pub fn learn_g_all(
    instance: &ValidatedInstance,
    range: (usize, usize),
    seed: u64,
) -> Result<Vec<usize>, LocalError> {
    instance
        .pools()
        .iter()
        .enumerate()
        .map(|(i, pool)| {
            learn_g(
                pool,
                instance.properties(),
                range,
                seed::derive(seed, seed::CHOOSE_G, i as u64),
            )
        })
        .collect()
}
