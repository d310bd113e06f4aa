//! Synthetic instances: random task trees, candidates drawn from a QoS
//! dataset, and constraints derived from candidate statistics.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggregationApproach, CompiledTask};
use crate::dependency_prep::Dependency;
use crate::model::{
    validate_request, ActivityId, CandidateMap, Category, Direction, ModelError, PatternNode,
    PropertyDescriptor, PropertySet, QosVector, ServiceCandidate, TaskGraph, UserRequest,
    ValidatedInstance,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("QoS source has {available} vectors but {needed} are needed without replacement")]
    SourceExhausted { needed: usize, available: usize },
    #[error("QoS source is empty")]
    EmptySource,
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("property `{0}` has no dataset column")]
    UnmappedProperty(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternMix {
    pub sequence: f64,
    pub parallel: f64,
    #[serde(rename = "loop")]
    pub looped: f64,
}

impl Default for PatternMix {
    fn default() -> Self {
        Self {
            sequence: 1.0,
            parallel: 1.0,
            looped: 1.0,
        }
    }
}

impl PatternMix {
    pub fn sequence_only() -> Self {
        Self {
            sequence: 1.0,
            parallel: 0.0,
            looped: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub activities: usize,
    pub services: usize,
    #[serde(default)]
    pub mix: PatternMix,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub with_replacement: bool,
}

fn default_depth() -> usize {
    3
}

fn default_true() -> bool {
    true
}

impl GeneratorConfig {
    pub fn new(activities: usize, services: usize, seed: u64) -> Self {
        Self {
            activities,
            services,
            mix: PatternMix::default(),
            max_depth: default_depth(),
            seed,
            with_replacement: true,
        }
    }

    fn check(&self) -> Result<(), WorkloadError> {
        let m = self.mix;
        let weights = [m.sequence, m.parallel, m.looped];
        if self.activities == 0 || self.services == 0 {
            return Err(WorkloadError::InvalidConfig("a and k must be at least 1".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(WorkloadError::InvalidConfig(
                "pattern mix weights must be non-negative and not all zero".into(),
            ));
        }
        if m.sequence + m.parallel <= 0.0 && self.activities > 1 {
            return Err(WorkloadError::InvalidConfig(
                "more than one activity needs sequence or parallel weight".into(),
            ));
        }
        Ok(())
    }
}

const SEED_TREE: u64 = 0;
const SEED_BINDING: u64 = 1;

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Sequence,
    Parallel,
    Loop,
}

fn pick_kind(rng: &mut impl Rng, mix: &PatternMix, allow_loop: bool, allow_composite: bool) -> Option<Kind> {
    let options = [
        (Kind::Sequence, if allow_composite { mix.sequence } else { 0.0 }),
        (Kind::Parallel, if allow_composite { mix.parallel } else { 0.0 }),
        (Kind::Loop, if allow_loop { mix.looped } else { 0.0 }),
    ];
    let total: f64 = options.iter().map(|o| o.1).sum();
    if total <= 0.0 {
        return None;
    }
    let mut r = rng.random_range(0.0..total);
    for (k, w) in options {
        if r < w {
            return Some(k);
        }
        r -= w;
    }
    options.iter().rev().find(|o| o.1 > 0.0).map(|o| o.0)
}

fn random_loop(rng: &mut impl Rng, body: PatternNode) -> PatternNode {
    let min = rng.random_range(1..=2u32);
    let max = rng.random_range(min..=min + 2);
    PatternNode::looped(body, min, f64::from(min + max) / 2.0, max)
}

fn build(ids: &[ActivityId], depth: usize, in_loop: bool, cfg: &GeneratorConfig, rng: &mut impl Rng) -> PatternNode {
    let can_nest = depth < cfg.max_depth;
    if ids.len() == 1 {
        let leaf = PatternNode::Activity(ids[0].clone());
        return match pick_kind(rng, &cfg.mix, can_nest && !in_loop, true) {
            Some(Kind::Loop) => random_loop(rng, leaf),
            _ => leaf,
        };
    }
    let kind = pick_kind(rng, &cfg.mix, can_nest && !in_loop, true).expect("checked mix");
    if kind == Kind::Loop {
        let body = build(ids, depth + 1, true, cfg, rng);
        return random_loop(rng, body);
    }
    let parts: Vec<&[ActivityId]> = if can_nest {
        let c = rng.random_range(2..=ids.len().min(4));
        let mut cuts: Vec<usize> = (1..ids.len()).collect();
        cuts.shuffle(rng);
        cuts.truncate(c - 1);
        cuts.sort_unstable();
        let mut parts = Vec::with_capacity(c);
        let mut start = 0;
        for cut in cuts.into_iter().chain([ids.len()]) {
            parts.push(&ids[start..cut]);
            start = cut;
        }
        parts
    } else {
        ids.chunks(1).collect()
    };
    let children = parts
        .into_iter()
        .map(|p| build(p, depth + 1, false, cfg, rng))
        .collect();
    flatten(match kind {
        Kind::Sequence => PatternNode::Sequence(children),
        _ => PatternNode::Parallel(children),
    })
}

/// Splices same-kind children into their parent.
fn flatten(node: PatternNode) -> PatternNode {
    match node {
        PatternNode::Sequence(ch) => PatternNode::Sequence(
            ch.into_iter()
                .flat_map(|c| match c {
                    PatternNode::Sequence(inner) => inner,
                    other => vec![other],
                })
                .collect(),
        ),
        PatternNode::Parallel(ch) => PatternNode::Parallel(
            ch.into_iter()
                .flat_map(|c| match c {
                    PatternNode::Parallel(inner) => inner,
                    other => vec![other],
                })
                .collect(),
        ),
        other => other,
    }
}

/// Random pattern tree over activities `A0..A{a-1}`.
pub fn generate_task(cfg: &GeneratorConfig) -> Result<TaskGraph, WorkloadError> {
    cfg.check()?;
    let ids: Vec<ActivityId> = (0..cfg.activities).map(|i| ActivityId::new(format!("A{i}"))).collect();
    let mut rng = seed::rng(seed::derive(cfg.seed, SEED_TREE, 0));
    Ok(TaskGraph::new(build(&ids, 0, false, cfg, &mut rng)))
}

/// `k` candidates per activity, `s{i}_{j}`, with QoS drawn from `source`.
pub fn bind_candidates(
    task: &TaskGraph,
    cfg: &GeneratorConfig,
    source: &[QosVector],
) -> Result<CandidateMap, WorkloadError> {
    let activities = task.activities();
    let needed = activities.len() * cfg.services;
    if source.is_empty() {
        return Err(WorkloadError::EmptySource);
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, SEED_BINDING, 0));
    let picks: Vec<usize> = if cfg.with_replacement {
        (0..needed).map(|_| rng.random_range(0..source.len())).collect()
    } else {
        if needed > source.len() {
            return Err(WorkloadError::SourceExhausted {
                needed,
                available: source.len(),
            });
        }
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(&mut rng);
        order.truncate(needed);
        order
    };
    Ok(activities
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let list = (0..cfg.services)
                .map(|j| ServiceCandidate {
                    id: format!("s{i}_{j}").as_str().into(),
                    qos: source[picks[i * cfg.services + j]].clone(),
                    origin: None,
                })
                .collect();
            (a.clone(), list)
        })
        .collect())
}

/// Serializable instance: properties, request, candidates, dependencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub properties: PropertySet,
    pub request: UserRequest,
    pub candidates: CandidateMap,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dependencies: Vec<Dependency>,
}

impl InstanceFile {
    pub fn validate(&self) -> Result<ValidatedInstance, ModelError> {
        validate_request(&self.properties, self.request.clone(), self.candidates.clone())
    }

    pub fn read(path: &Path) -> Result<Self, WorkloadError> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }

    pub fn to_json(&self) -> Result<String, WorkloadError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Uniform weights over `n` properties.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Random instance with uniform weights and mean-derived worst-case constraints.
pub fn generate(
    cfg: &GeneratorConfig,
    properties: &PropertySet,
    source: &[QosVector],
) -> Result<InstanceFile, WorkloadError> {
    let task = generate_task(cfg)?;
    let n = properties.len();
    let source: Vec<QosVector> = source.iter().map(|q| QosVector(q.0[..n].to_vec())).collect();
    let candidates = bind_candidates(&task, cfg, &source)?;
    let compiled = CompiledTask::compile(&task)?;
    let pools: Vec<Vec<ServiceCandidate>> = compiled
        .activities()
        .iter()
        .map(|a| candidates[a].clone())
        .collect();
    let constraints = derive_constraints_for(
        &compiled,
        &pools,
        properties,
        ConstraintMode::Mean,
        AggregationApproach::WorstCase,
    );
    Ok(InstanceFile {
        properties: properties.clone(),
        request: UserRequest {
            task,
            constraints,
            weights: uniform_weights(n),
        },
        candidates,
        dependencies: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    Mean,
    MeanPlusSigma,
}

impl ConstraintMode {
    pub fn short_name(self) -> &'static str {
        match self {
            ConstraintMode::Mean => "mean",
            ConstraintMode::MeanPlusSigma => "mean-sigma",
        }
    }
}

/// Arithmetic mean and population standard deviation.
pub fn mean_sigma(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-activity statistic: the mean, or the mean moved one standard
/// deviation toward the stricter side of the property's direction.
pub fn activity_statistic(values: &[f64], direction: Direction, category: Category, mode: ConstraintMode) -> f64 {
    let (m, s) = mean_sigma(values);
    match mode {
        ConstraintMode::Mean => m,
        ConstraintMode::MeanPlusSigma => match direction {
            Direction::Negative => m - s,
            Direction::Positive if category == Category::Multiplicative => (m + s).min(1.0),
            Direction::Positive => m + s,
        },
    }
}

pub fn derive_constraints(
    instance: &ValidatedInstance,
    mode: ConstraintMode,
    approach: AggregationApproach,
) -> Vec<f64> {
    derive_constraints_for(instance.compiled(), instance.pools(), instance.properties(), mode, approach)
}

/// Aggregates per-activity statistics through the task tree.
pub fn derive_constraints_for(
    compiled: &CompiledTask,
    pools: &[Vec<ServiceCandidate>],
    properties: &PropertySet,
    mode: ConstraintMode,
    approach: AggregationApproach,
) -> Vec<f64> {
    let stats: Vec<Vec<f64>> = pools
        .iter()
        .map(|pool| {
            properties
                .iter()
                .map(|p| {
                    let values: Vec<f64> = pool.iter().map(|c| c.qos[p.id]).collect();
                    activity_statistic(&values, p.direction, p.category, mode)
                })
                .collect()
        })
        .collect();
    compiled.aggregate_with(properties, approach, |i| &stats[i]).0
}

/// A QoS table as read from a delimited file; `raw` keeps the file's values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    scales: Vec<f64>,
    pub raw: Vec<Vec<f64>>,
}

impl Dataset {
    /// Rows as QoS vectors, with each column's scale applied.
    pub fn vectors(&self) -> Vec<QosVector> {
        self.raw
            .iter()
            .map(|r| QosVector(r.iter().zip(&self.scales).map(|(v, s)| v * s).collect()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CsvFormat {
    pub delimiter: u8,
    pub has_headers: bool,
}

impl Default for CsvFormat {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_headers: true,
        }
    }
}

/// Reads the columns named by each descriptor's `column` (a header name,
/// or a 0-based index when the file has no header row). Lines starting
/// with `#` are skipped.
pub fn read_dataset(
    reader: impl Read,
    descriptors: &[PropertyDescriptor],
    format: CsvFormat,
) -> Result<Dataset, WorkloadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(format.has_headers)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = if format.has_headers {
        rdr.headers()?.iter().map(str::to_owned).collect()
    } else {
        Vec::new()
    };
    let mut columns = Vec::with_capacity(descriptors.len());
    let mut index = Vec::with_capacity(descriptors.len());
    for d in descriptors {
        let col = d
            .column
            .clone()
            .ok_or_else(|| WorkloadError::UnmappedProperty(d.name.clone()))?;
        let pos = match headers.iter().position(|h| *h == col) {
            Some(p) => Some(p),
            None if !format.has_headers => col.parse::<usize>().ok(),
            None => None,
        };
        match pos {
            Some(p) => index.push(p),
            None if format.has_headers && headers.is_empty() => index.push(usize::MAX),
            None => return Err(WorkloadError::UnmappedProperty(d.name.clone())),
        }
        columns.push(col);
    }
    let scales = descriptors.iter().map(|d| d.scale.unwrap_or(1.0)).collect();
    let mut raw = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(index.len());
        for (&i, col) in index.iter().zip(&columns) {
            let field = record.get(i).ok_or_else(|| WorkloadError::MalformedRow {
                line,
                reason: format!("missing column `{col}`"),
            })?;
            let v: f64 = field.parse().map_err(|_| WorkloadError::MalformedRow {
                line,
                reason: format!("column `{col}` holds `{field}`, not a number"),
            })?;
            if !v.is_finite() {
                return Err(WorkloadError::MalformedRow {
                    line,
                    reason: format!("column `{col}` is not finite"),
                });
            }
            row.push(v);
        }
        raw.push(row);
    }
    Ok(Dataset { columns, scales, raw })
}

pub fn load_dataset(path: &Path, descriptors: &[PropertyDescriptor], format: CsvFormat) -> Result<Dataset, WorkloadError> {
    read_dataset(std::fs::File::open(path)?, descriptors, format)
}

/// Writes the mapped columns back with a header row.
pub fn write_dataset(writer: impl Write, dataset: &Dataset) -> Result<(), WorkloadError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&dataset.columns)?;
    for row in &dataset.raw {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// Column names of the QWS-style table.
pub const QWS_COLUMNS: [&str; 9] = [
    "response_time",
    "availability",
    "throughput",
    "successability",
    "reliability",
    "compliance",
    "best_practices",
    "latency",
    "documentation",
];

/// Default five-property mapping onto [`QWS_COLUMNS`].
pub fn qws_descriptors() -> Vec<PropertyDescriptor> {
    let d = |name: &str, category: Category, scale: Option<f64>| PropertyDescriptor {
        name: name.into(),
        direction: category.expected_direction(),
        category,
        column: Some(name.into()),
        scale,
    };
    vec![
        d("response_time", Category::Time, None),
        d("availability", Category::Multiplicative, Some(0.01)),
        d("throughput", Category::Bottleneck, None),
        d("reliability", Category::Multiplicative, Some(0.01)),
        d("latency", Category::Time, None),
    ]
}

/// Synthetic table shaped like the QWS measurements (rounded to 2 decimals).
pub fn synthetic_qws(rows: usize, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed);
    let round = |v: f64| (v * 100.0).round() / 100.0;
    let pct = |rng: &mut rand_chacha::ChaCha8Rng, mean: f64, sd: f64, lo: f64| {
        round(Normal::new(mean, sd).expect("sd > 0").sample(rng).clamp(lo, 100.0))
    };
    let rt = LogNormal::<f64>::new(5.5, 0.8).expect("valid");
    let tp = LogNormal::<f64>::new(2.0, 0.9).expect("valid");
    let lat = LogNormal::<f64>::new(2.8, 1.2).expect("valid");
    let raw = (0..rows)
        .map(|_| {
            vec![
                round(rt.sample(&mut rng).max(1.0)),
                pct(&mut rng, 86.0, 12.0, 7.0),
                round(tp.sample(&mut rng).max(0.1)),
                pct(&mut rng, 88.0, 11.0, 8.0),
                pct(&mut rng, 68.0, 9.0, 33.0),
                pct(&mut rng, 92.0, 7.0, 33.0),
                pct(&mut rng, 80.0, 8.0, 5.0),
                round(lat.sample(&mut rng).max(0.25)),
                round(rng.random_range(1.0..97.0)),
            ]
        })
        .collect();
    Dataset {
        columns: QWS_COLUMNS.iter().map(|c| c.to_string()).collect(),
        scales: vec![1.0; QWS_COLUMNS.len()],
        raw,
    }
}

/// Maps a full QWS-style table onto `descriptors` (by column name).
pub fn project(dataset: &Dataset, descriptors: &[PropertyDescriptor]) -> Result<Dataset, WorkloadError> {
    let mut cols = Vec::new();
    for d in descriptors {
        let name = d
            .column
            .as_ref()
            .ok_or_else(|| WorkloadError::UnmappedProperty(d.name.clone()))?;
        cols.push(
            dataset
                .columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| WorkloadError::UnmappedProperty(d.name.clone()))?,
        );
    }
    Ok(Dataset {
        columns: cols.iter().map(|&i| dataset.columns[i].clone()).collect(),
        scales: descriptors.iter().map(|d| d.scale.unwrap_or(1.0)).collect(),
        raw: dataset
            .raw
            .iter()
            .map(|r| cols.iter().map(|&i| r[i]).collect())
            .collect(),
    })
}

/// Activity id → its candidates' QoS on one property (test and report helper).
pub fn column_by_activity(instance: &ValidatedInstance, property: usize) -> BTreeMap<ActivityId, Vec<f64>> {
    instance
        .activities()
        .iter()
        .zip(instance.pools())
        .map(|(a, p)| (a.clone(), p.iter().map(|c| c.qos[property]).collect()))
        .collect()
}
