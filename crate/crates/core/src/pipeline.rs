//! End-to-end selection: local phase, then global phase, with timings.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{compute_bounds, AggregationApproach, UtilityBounds};
use crate::dependency_prep::{preprocess, Dependency, DependencyError, ExpandedComposition, Preprocessed};
use crate::global_selection::{crs_select, CrsStats, SolutionArchive, DEFAULT_ARCHIVE_CAPACITY};
use crate::local_selection::{learn_g_all, local_select_all, LocalError, LocalSelection};
use crate::model::ValidatedInstance;

pub const DEFAULT_G_RANGE: (usize, usize) = (2, 5);
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub approach: AggregationApproach,
    pub top_k: usize,
    pub capacity: usize,
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            approach: AggregationApproach::WorstCase,
            top_k: DEFAULT_TOP_K,
            capacity: DEFAULT_ARCHIVE_CAPACITY,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub local_ns: u64,
    pub global_ns: u64,
}

impl PhaseTimings {
    pub fn total_ns(&self) -> u64 {
        self.local_ns + self.global_ns
    }
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub local: LocalSelection,
    pub archive: SolutionArchive,
    pub stats: CrsStats,
    pub bounds: UtilityBounds,
    pub timings: PhaseTimings,
}

/// Cluster counts per activity, learned once per instance.
pub fn prepare(instance: &ValidatedInstance, seed: u64) -> Result<Vec<usize>, LocalError> {
    learn_g_all(instance, DEFAULT_G_RANGE, seed)
}

/// Utility bounds over the full candidate lists.
pub fn instance_bounds(instance: &ValidatedInstance, approach: AggregationApproach) -> UtilityBounds {
    compute_bounds(instance.compiled(), instance.pools(), instance.properties(), approach)
}

/// Global phase on already selected local pools.
pub fn global_phase(
    instance: &ValidatedInstance,
    pools: &[Vec<usize>],
    cfg: &SelectConfig,
) -> (SolutionArchive, CrsStats, UtilityBounds) {
    let bounds = instance_bounds(instance, cfg.approach);
    let (archive, stats) = crs_select(instance, pools, cfg.approach, &bounds, cfg.seed, cfg.capacity);
    (archive, stats, bounds)
}

pub fn select(instance: &ValidatedInstance, g: &[usize], cfg: &SelectConfig) -> Result<SelectionOutcome, LocalError> {
    let t0 = Instant::now();
    let local = local_select_all(instance, g, cfg.seed, cfg.top_k)?;
    let t1 = Instant::now();
    let (archive, stats, bounds) = global_phase(instance, &local.pools, cfg);
    let t2 = Instant::now();
    Ok(SelectionOutcome {
        local,
        archive,
        stats,
        bounds,
        timings: PhaseTimings {
            local_ns: (t1 - t0).as_nanos() as u64,
            global_ns: (t2 - t1).as_nanos() as u64,
        },
    })
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dependency(#[from] DependencyError),
    #[error(transparent)]
    Local(#[from] LocalError),
}

#[derive(Debug, Clone)]
pub struct FullOutcome {
    pub prep: Preprocessed,
    pub g: Vec<usize>,
    pub outcome: SelectionOutcome,
    /// The archive mapped back onto the original activities, same order.
    pub expanded: Vec<ExpandedComposition>,
}

/// Dependency pre-processing, selection on the reduced instance, expansion.
pub fn run(
    instance: &ValidatedInstance,
    dependencies: &[Dependency],
    cfg: &SelectConfig,
) -> Result<FullOutcome, PipelineError> {
    let prep = preprocess(instance, dependencies, cfg.approach)?;
    let g = prepare(&prep.reduced, cfg.seed)?;
    let outcome = select(&prep.reduced, &g, cfg)?;
    let expanded = outcome
        .archive
        .solutions
        .iter()
        .map(|s| prep.expand(s, cfg.approach))
        .collect::<Result<_, _>>()?;
    Ok(FullOutcome {
        prep,
        g,
        outcome,
        expanded,
    })
}
