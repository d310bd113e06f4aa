//! One-dimensional K-means++ and Davies-Bouldin cluster-count selection.

use rand::Rng;
use thiserror::Error;

use crate::model::Direction;
use crate::seed;

/// Lloyd iteration cap.
pub const MAX_LLOYD_ITERATIONS: usize = 100;
/// Independent K-means++ seedings per clustering; the lowest-inertia one wins.
pub const RESTARTS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("cannot build {g} clusters from {got} values")]
    TooFewValues { g: usize, got: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("value at position {0} is not finite")]
    NonFinite(usize),
    #[error("Davies-Bouldin index needs at least two clusters")]
    SingleCluster,
    #[error("clusters {0} and {1} share a centroid")]
    CoincidentCentroids(usize, usize),
    #[error("invalid cluster-count range [{lo}, {hi}] for {len} values")]
    InvalidRange { lo: usize, hi: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T> {
    pub members: Vec<T>,
    pub centroid: f64,
    /// Mean absolute deviation of the members from the centroid.
    pub scatter: f64,
    /// 1 = worst values for the property, `g` = best.
    pub rank: usize,
}

impl<T> Cluster<T> {
    /// Builds an unranked cluster from explicit members.
    pub fn from_values(members: Vec<(T, f64)>) -> Self {
        let n = members.len() as f64;
        let centroid = members.iter().map(|(_, v)| v).sum::<f64>() / n;
        let scatter = members.iter().map(|(_, v)| (v - centroid).abs()).sum::<f64>() / n;
        Self {
            members: members.into_iter().map(|(t, _)| t).collect(),
            centroid,
            scatter,
            rank: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Clustering<T> {
    /// Ordered by rank, worst first.
    pub clusters: Vec<Cluster<T>>,
    /// The cluster count asked for; larger than `clusters.len()` when the
    /// input had fewer distinct values.
    pub requested: usize,
    /// Within-cluster sum of squared deviations of the kept restart.
    pub inertia: f64,
    /// Inertia after each Lloyd update of the kept restart.
    pub inertia_trace: Vec<f64>,
}

impl<T> Clustering<T> {
    pub fn effective_g(&self) -> usize {
        self.clusters.len()
    }

    pub fn reduced(&self) -> bool {
        self.clusters.len() < self.requested
    }
}

struct Run {
    assign: Vec<usize>,
    centroids: Vec<f64>,
    inertia: f64,
    trace: Vec<f64>,
}

/// K-means++ seeding followed by Lloyd iterations, best of [`RESTARTS`].
///
/// If the input has fewer distinct values than `g`, `g` is reduced to the
/// distinct count (see [`Clustering::reduced`]).
pub fn kmeans_1d<T: Clone>(
    values: &[(T, f64)],
    g: usize,
    seed: u64,
    direction: Direction,
) -> Result<Clustering<T>, ClusterError> {
    if g == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if values.len() < g {
        return Err(ClusterError::TooFewValues {
            g,
            got: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|(_, v)| !v.is_finite()) {
        return Err(ClusterError::NonFinite(i));
    }
    let xs: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    let k = g.min(distinct_count(&xs));

    let best = if k == 1 {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        Run {
            assign: vec![0; xs.len()],
            centroids: vec![mean],
            inertia: xs.iter().map(|x| (x - mean).powi(2)).sum(),
            trace: Vec::new(),
        }
    } else {
        let mut best: Option<Run> = None;
        for r in 0..RESTARTS {
            let mut rng = seed::rng(seed::derive(seed, seed::KMEANS_RESTART, r));
            let init = plus_plus(&xs, k, &mut rng);
            let run = lloyd(&xs, init);
            if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
                best = Some(run);
            }
        }
        best.expect("at least one restart")
    };

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| best.centroids[a].total_cmp(&best.centroids[b]));
    let mut clusters: Vec<Cluster<T>> = order
        .iter()
        .enumerate()
        .map(|(pos, &c)| {
            let members: Vec<(T, f64)> = values
                .iter()
                .zip(&best.assign)
                .filter(|(_, &a)| a == c)
                .map(|((t, v), _)| (t.clone(), *v))
                .collect();
            let mut cluster = Cluster::from_values(members);
            cluster.rank = match direction {
                Direction::Positive => pos + 1,
                Direction::Negative => k - pos,
            };
            cluster
        })
        .collect();
    clusters.sort_by_key(|c| c.rank);

    Ok(Clustering {
        clusters,
        requested: g,
        inertia: best.inertia,
        inertia_trace: best.trace,
    })
}

fn distinct_count(xs: &[f64]) -> usize {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted.len()
}

/// D² seeding. Requires at least `k` distinct values.
fn plus_plus(xs: &[f64], k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut centroids = vec![xs[rng.random_range(0..xs.len())]];
    let mut d2: Vec<f64> = xs.iter().map(|x| (x - centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let c = xs[pick.expect("distinct values remain")];
        centroids.push(c);
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min((x - c).powi(2));
        }
    }
    centroids
}

fn nearest(x: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, &m) in centroids.iter().enumerate() {
        let d = (x - m).abs();
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn inertia(xs: &[f64], assign: &[usize], centroids: &[f64]) -> f64 {
    xs.iter()
        .zip(assign)
        .map(|(x, &a)| (x - centroids[a]).powi(2))
        .sum()
}

fn update(xs: &[f64], assign: &[usize], centroids: &mut [f64]) -> Vec<usize> {
    let k = centroids.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in xs.iter().zip(assign) {
        sums[a] += x;
        counts[a] += 1;
    }
    let mut empty = Vec::new();
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c] / counts[c] as f64;
        } else {
            empty.push(c);
        }
    }
    empty
}

fn lloyd(xs: &[f64], mut centroids: Vec<f64>) -> Run {
    let k = centroids.len();
    let mut assign = vec![usize::MAX; xs.len()];
    let mut trace = Vec::new();
    for iteration in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        for (i, &x) in xs.iter().enumerate() {
            let c = nearest(x, &centroids);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let empty = update(xs, &assign, &mut centroids);
        // Reseed empty clusters on the points worst served by their centroid;
        // the next assignment step picks them up.
        let mut taken = Vec::new();
        for c in empty {
            let far = (0..xs.len())
                .filter(|i| !taken.contains(i))
                .max_by(|&a, &b| {
                    let da = (xs[a] - centroids[assign[a]]).abs();
                    let db = (xs[b] - centroids[assign[b]]).abs();
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("more points than clusters");
            taken.push(far);
            centroids[c] = xs[far];
        }
        trace.push(inertia(xs, &assign, &centroids));
        if iteration + 1 == MAX_LLOYD_ITERATIONS {
            break;
        }
    }
    // A reseed on the last permitted iteration can leave a cluster empty;
    // hand it the farthest point of a cluster that can spare one.
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let donor = (0..xs.len())
            .filter(|&i| counts[assign[i]] > 1)
            .max_by(|&a, &b| {
                let da = (xs[a] - centroids[assign[a]]).abs();
                let db = (xs[b] - centroids[assign[b]]).abs();
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("more points than clusters");
        assign[donor] = empty;
        update(xs, &assign, &mut centroids);
    }
    let inertia = inertia(xs, &assign, &centroids);
    Run {
        assign,
        centroids,
        inertia,
        trace,
    }
}

/// Mean over clusters of the worst `(σ_i + σ_j) / |μ_i − μ_j|` ratio.
pub fn davies_bouldin<T>(clusters: &[Cluster<T>]) -> Result<f64, ClusterError> {
    if clusters.len() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let mut total = 0.0;
    for (i, ci) in clusters.iter().enumerate() {
        let mut worst = 0.0f64;
        for (j, cj) in clusters.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = (ci.centroid - cj.centroid).abs();
            if d == 0.0 {
                return Err(ClusterError::CoincidentCentroids(i.min(j), i.max(j)));
            }
            worst = worst.max((ci.scatter + cj.scatter) / d);
        }
        total += worst;
    }
    Ok(total / clusters.len() as f64)
}

/// Davies-Bouldin index for every `g` in the range; undefined indices are
/// reported as `+∞`.
pub fn davies_bouldin_profile<T: Clone>(
    values: &[(T, f64)],
    range: (usize, usize),
    seed: u64,
    direction: Direction,
) -> Result<Vec<(usize, f64)>, ClusterError> {
    let (lo, hi) = range;
    if lo < 2 || lo > hi || hi > values.len() {
        return Err(ClusterError::InvalidRange {
            lo,
            hi,
            len: values.len(),
        });
    }
    (lo..=hi)
        .map(|g| {
            let clustering = kmeans_1d(values, g, seed, direction)?;
            let db = davies_bouldin(&clustering.clusters).unwrap_or(f64::INFINITY);
            Ok((g, db))
        })
        .collect()
}

/// The `g` in `range` with the lowest Davies-Bouldin index; ties go to the
/// smaller `g`.
pub fn choose_g<T: Clone>(
    values: &[(T, f64)],
    range: (usize, usize),
    seed: u64,
    direction: Direction,
) -> Result<usize, ClusterError> {
    let profile = davies_bouldin_profile(values, range, seed, direction)?;
    let mut best = profile[0];
    for &(g, db) in &profile[1..] {
        if db < best.1 {
            best = (g, db);
        }
    }
    Ok(best.0)
}
