//! Discrete-event simulation of distributed selection.
//!
//! A requester broadcasts for helpers, hands each helper elementary requests
//! (one activity's candidates plus constraints and weights), collects the
//! locally selected classes within a session timeout, re-dispatches what went
//! missing and finally runs the global phase itself.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::global_selection::{CrsStats, SolutionArchive};
use crate::local_selection::{activity_seed, select_for_activity, LocalError, LocalSelection, QosClass};
use crate::model::{ActivityId, ServiceCandidate, ValidatedInstance};
use crate::pipeline::{global_phase, SelectConfig};
use crate::seed;

/// Simulated time in microseconds.
pub type Micros = u64;

fn ms(v: f64) -> Micros {
    (v * 1000.0).round().max(0.0) as Micros
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Requester,
    Helper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimNode {
    pub id: usize,
    pub role: Role,
    /// Relative speed: processing time is divided by this factor. Zero means
    /// the node cannot take work.
    #[serde(default = "one")]
    pub compute_factor: f64,
    /// Down intervals `[start_ms, end_ms)`.
    #[serde(default)]
    pub down: Vec<(f64, f64)>,
}

fn one() -> f64 {
    1.0
}

impl SimNode {
    pub fn helper(id: usize, compute_factor: f64) -> Self {
        Self {
            id,
            role: Role::Helper,
            compute_factor,
            down: Vec::new(),
        }
    }

    pub fn requester(id: usize) -> Self {
        Self {
            id,
            role: Role::Requester,
            compute_factor: 1.0,
            down: Vec::new(),
        }
    }

    fn alive_at(&self, t: Micros) -> bool {
        !self.down.iter().any(|&(a, b)| ms(a) <= t && t < ms(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    Fixed { ms: f64 },
    Uniform { min_ms: f64, max_ms: f64 },
}

impl Default for Latency {
    fn default() -> Self {
        Latency::Fixed { ms: 0.0 }
    }
}

/// How helper computation is charged to the virtual clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Charge {
    /// Measured wall time of the local selection.
    #[default]
    WallClock,
    /// One microsecond per candidate per property per cluster.
    Modeled,
}

/// A helper that drops its first attempt at an activity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedDrop {
    pub node: usize,
    pub activity: ActivityId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub nodes: Vec<SimNode>,
    #[serde(default)]
    pub latency: Latency,
    #[serde(default)]
    pub failure_prob: f64,
    pub timeout_ms: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// How long the requester waits for help replies.
    #[serde(default = "default_discovery")]
    pub discovery_ms: f64,
    #[serde(default)]
    pub charge: Charge,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forced_drops: Vec<ForcedDrop>,
}

fn default_retries() -> u32 {
    2
}

fn default_discovery() -> f64 {
    50.0
}

impl Scenario {
    /// Zero latency, no failures, `helpers` equal helpers plus requester 0.
    pub fn perfect(helpers: usize) -> Self {
        let mut nodes = vec![SimNode::requester(0)];
        nodes.extend((1..=helpers).map(|i| SimNode::helper(i, 1.0)));
        Self {
            nodes,
            latency: Latency::default(),
            failure_prob: 0.0,
            timeout_ms: 60_000.0,
            seed: 0,
            max_retries: default_retries(),
            discovery_ms: default_discovery(),
            charge: Charge::default(),
            forced_drops: Vec::new(),
        }
    }

    fn check(&self) -> Result<usize, DistError> {
        let requesters: Vec<usize> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.role == Role::Requester)
            .map(|(i, _)| i)
            .collect();
        if requesters.len() != 1 {
            return Err(DistError::InvalidScenario(format!(
                "expected exactly one requester, found {}",
                requesters.len()
            )));
        }
        if self.timeout_ms.is_nan() || self.timeout_ms <= 0.0 {
            return Err(DistError::InvalidScenario("timeout must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.failure_prob) {
            return Err(DistError::InvalidScenario("failure probability outside [0, 1]".into()));
        }
        if self.nodes.iter().any(|n| !n.compute_factor.is_finite() || n.compute_factor < 0.0) {
            return Err(DistError::InvalidScenario("compute factors must be finite and >= 0".into()));
        }
        let mut ids: Vec<usize> = self.nodes.iter().map(|n| n.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(DistError::InvalidScenario("duplicate node id".into()));
        }
        if let Latency::Uniform { min_ms, max_ms } = self.latency {
            if !(0.0 <= min_ms && min_ms <= max_ms) {
                return Err(DistError::InvalidScenario("latency range is invalid".into()));
            }
        }
        Ok(requesters[0])
    }
}

#[derive(Debug, Error)]
pub enum DistError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no helper replied")]
    NoHelpers,
    #[error(transparent)]
    Local(#[from] LocalError),
}

/// One activity's share of the request, as sent to a helper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementaryRequest {
    pub activity: ActivityId,
    pub candidates: Vec<ServiceCandidate>,
    pub constraints: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn elementary_request(instance: &ValidatedInstance, index: usize) -> ElementaryRequest {
    ElementaryRequest {
        activity: instance.activities()[index].clone(),
        candidates: instance.pool(index).to_vec(),
        constraints: instance.constraints().to_vec(),
        weights: instance.weights().to_vec(),
    }
}

/// Weighted-fair assignment of `activities` activities to `(helper id,
/// compute factor)` pairs: each activity goes to the helper whose load after
/// taking it, divided by its factor, is smallest (ties to the lower id).
pub fn split_request(activities: usize, helpers: &[(usize, f64)]) -> Result<Vec<usize>, DistError> {
    let usable: Vec<(usize, f64)> = helpers.iter().copied().filter(|h| h.1 > 0.0).collect();
    if usable.is_empty() {
        return Err(DistError::NoHelpers);
    }
    let mut load = vec![0usize; usable.len()];
    Ok((0..activities)
        .map(|_| {
            let best = (0..usable.len())
                .min_by(|&a, &b| {
                    let ka = (load[a] + 1) as f64 / usable[a].1;
                    let kb = (load[b] + 1) as f64 / usable[b].1;
                    ka.total_cmp(&kb).then(usable[a].0.cmp(&usable[b].0))
                })
                .expect("non-empty");
            load[best] += 1;
            usable[best].0
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounts {
    pub help: u64,
    pub help_reply: u64,
    pub elementary_request: u64,
    pub elementary_result: u64,
    pub session_timeout: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    /// End of the global phase.
    pub makespan_us: Micros,
    /// Time at which every activity's classes were available.
    pub local_phase_us: Micros,
    pub global_us: Micros,
    pub messages: MessageCounts,
    pub helpers_replied: usize,
    pub retries: u64,
    /// Activities the requester had to select for itself.
    pub local_fallbacks: u64,
    pub late_results: u64,
    pub no_helpers: bool,
    /// Final executor per activity (graph order).
    pub executors: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DistributedOutcome {
    pub local: LocalSelection,
    pub archive: SolutionArchive,
    pub stats: CrsStats,
    pub metrics: SimMetrics,
}

#[derive(Debug, Clone)]
enum Event {
    HelpArrives { helper: usize },
    ReplyArrives { helper: usize },
    DiscoveryOver,
    RequestArrives { helper: usize, activity: usize, attempt: u32 },
    Done { activity: usize, attempt: u32, ok: bool },
    ResultArrives { activity: usize, attempt: u32 },
    SessionTimeout { round: u32 },
}

struct Sim<'a> {
    instance: &'a ValidatedInstance,
    scenario: &'a Scenario,
    g: &'a [usize],
    cfg: &'a SelectConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<(Micros, usize, u64)>>,
    events: BTreeMap<u64, Event>,
    seq: u64,
    now: Micros,
    requester: usize,
    free_at: BTreeMap<usize, Micros>,
    results: Vec<Option<Vec<QosClass>>>,
    cache: Vec<Option<(Vec<QosClass>, u64)>>,
    attempts: Vec<u32>,
    tried: Vec<Vec<usize>>,
    executors: Vec<usize>,
    outstanding: BTreeMap<usize, u32>,
    round: u32,
    helpers: Vec<usize>,
    metrics: SimMetrics,
}

impl Sim<'_> {
    fn node(&self, id: usize) -> &SimNode {
        self.scenario
            .nodes
            .iter()
            .find(|n| n.id == id)
            .expect("known node")
    }

    fn schedule(&mut self, at: Micros, target: usize, e: Event) {
        self.seq += 1;
        self.events.insert(self.seq, e);
        self.queue.push(Reverse((at, target, self.seq)));
    }

    fn latency(&mut self) -> Micros {
        match self.scenario.latency {
            Latency::Fixed { ms: v } => ms(v),
            Latency::Uniform { min_ms, max_ms } => {
                if max_ms > min_ms {
                    ms(self.rng.random_range(min_ms..max_ms))
                } else {
                    ms(min_ms)
                }
            }
        }
    }

    /// Runs (or reuses) the local selection of `activity`; returns the
    /// charged processing time on `node`.
    fn compute(&mut self, activity: usize, node: usize) -> Result<Micros, LocalError> {
        if self.cache[activity].is_none() {
            let req = elementary_request(self.instance, activity);
            let t = Instant::now();
            let classes = select_for_activity(
                &req.candidates,
                self.instance.properties(),
                &req.weights,
                self.g[activity],
                activity_seed(self.cfg.seed, activity),
                self.cfg.top_k,
            )?;
            let ns = t.elapsed().as_nanos() as u64;
            self.cache[activity] = Some((classes, ns));
        }
        let base_us = match self.scenario.charge {
            Charge::WallClock => self.cache[activity].as_ref().expect("cached").1 as f64 / 1000.0,
            Charge::Modeled => {
                (self.instance.pool(activity).len() * self.instance.properties().len() * self.g[activity]) as f64
            }
        };
        let factor = self.node(node).compute_factor.max(f64::MIN_POSITIVE);
        Ok((base_us / factor).ceil() as Micros)
    }

    fn dispatch(&mut self, activity: usize, helper: usize) {
        self.attempts[activity] += 1;
        let attempt = self.attempts[activity];
        self.tried[activity].push(helper);
        self.outstanding.insert(activity, attempt);
        self.metrics.messages.elementary_request += 1;
        let at = self.now + self.latency();
        self.schedule(at, helper, Event::RequestArrives { helper, activity, attempt });
    }

    fn run_locally(&mut self, activity: usize) -> Result<(), LocalError> {
        let start = self.now.max(*self.free_at.get(&self.requester).unwrap_or(&0));
        let dur = self.compute(activity, self.requester)?;
        self.free_at.insert(self.requester, start + dur);
        self.metrics.local_fallbacks += 1;
        self.executors[activity] = self.requester;
        self.results[activity] = self.cache[activity].as_ref().map(|c| c.0.clone());
        self.metrics.local_phase_us = self.metrics.local_phase_us.max(start + dur);
        Ok(())
    }

    fn start_round(&mut self, assignment: Vec<(usize, usize)>) {
        self.round += 1;
        for (activity, helper) in assignment {
            self.dispatch(activity, helper);
        }
        self.metrics.messages.session_timeout += 1;
        let at = self.now + ms(self.scenario.timeout_ms);
        self.schedule(at, self.requester, Event::SessionTimeout { round: self.round });
    }

    fn fails(&mut self, helper: usize, activity: usize, attempt: u32) -> bool {
        let forced = attempt == 1
            && self
                .scenario
                .forced_drops
                .iter()
                .any(|d| d.node == helper && d.activity == self.instance.activities()[activity]);
        let p = self.scenario.failure_prob;
        let random = p > 0.0 && {
            let mut r = seed::rng(seed::derive(self.scenario.seed, activity as u64, u64::from(attempt)));
            r.random_bool(p)
        };
        forced || random
    }

    /// Re-dispatches every outstanding activity, or runs it on the requester
    /// once its retries are used up.
    fn reschedule_missing(&mut self) -> Result<(), LocalError> {
        let missing: Vec<usize> = self.outstanding.keys().copied().collect();
        self.outstanding.clear();
        let mut next = Vec::new();
        for activity in missing {
            let retries = self.attempts[activity] - 1;
            let candidates: Vec<(usize, f64)> = self
                .helpers
                .iter()
                .copied()
                .filter(|h| !self.tried[activity].contains(h))
                .map(|h| (h, self.node(h).compute_factor))
                .collect();
            if retries >= self.scenario.max_retries || candidates.is_empty() {
                self.run_locally(activity)?;
                continue;
            }
            self.metrics.retries += 1;
            let helper = split_request(1, &candidates).expect("non-empty")[0];
            next.push((activity, helper));
        }
        if !next.is_empty() {
            self.start_round(next);
        }
        Ok(())
    }

    fn step(&mut self, e: Event) -> Result<(), LocalError> {
        match e {
            Event::HelpArrives { helper } => {
                let node = self.node(helper);
                if node.alive_at(self.now) && node.compute_factor > 0.0 {
                    self.metrics.messages.help_reply += 1;
                    let at = self.now + self.latency();
                    self.schedule(at, self.requester, Event::ReplyArrives { helper });
                }
            }
            Event::ReplyArrives { helper } => {
                if self.round == 0 && !self.helpers.contains(&helper) {
                    self.helpers.push(helper);
                    let all = self
                        .scenario
                        .nodes
                        .iter()
                        .filter(|n| n.role == Role::Helper)
                        .count();
                    if self.helpers.len() == all {
                        self.begin()?;
                    }
                }
            }
            Event::DiscoveryOver => {
                if self.round == 0 {
                    self.begin()?;
                }
            }
            Event::RequestArrives { helper, activity, attempt } => {
                if !self.node(helper).alive_at(self.now) {
                    return Ok(());
                }
                let start = self.now.max(*self.free_at.get(&helper).unwrap_or(&0));
                let dur = self.compute(activity, helper)?;
                let finish = start + dur;
                self.free_at.insert(helper, finish);
                let ok = self.node(helper).alive_at(finish) && !self.fails(helper, activity, attempt);
                self.schedule(finish, helper, Event::Done { activity, attempt, ok });
            }
            Event::Done { activity, attempt, ok } => {
                if ok {
                    self.metrics.messages.elementary_result += 1;
                    let at = self.now + self.latency();
                    self.schedule(at, self.requester, Event::ResultArrives { activity, attempt });
                }
            }
            Event::ResultArrives { activity, attempt } => {
                if self.outstanding.get(&activity) == Some(&attempt) {
                    self.outstanding.remove(&activity);
                    self.results[activity] = self.cache[activity].as_ref().map(|c| c.0.clone());
                    self.executors[activity] = *self.tried[activity].last().expect("dispatched");
                    self.metrics.local_phase_us = self.metrics.local_phase_us.max(self.now);
                } else {
                    self.metrics.late_results += 1;
                }
            }
            Event::SessionTimeout { round } => {
                if round == self.round && !self.outstanding.is_empty() {
                    self.reschedule_missing()?;
                }
            }
        }
        Ok(())
    }

    /// Splits the request among the helpers that replied.
    fn begin(&mut self) -> Result<(), LocalError> {
        self.helpers.sort_unstable();
        self.metrics.helpers_replied = self.helpers.len();
        let offered: Vec<(usize, f64)> = self
            .helpers
            .iter()
            .map(|&h| (h, self.node(h).compute_factor))
            .collect();
        match split_request(self.instance.activity_count(), &offered) {
            Ok(assignment) => {
                self.start_round(assignment.into_iter().enumerate().collect());
            }
            Err(_) => {
                self.round = 1;
                self.metrics.no_helpers = true;
                for activity in 0..self.instance.activity_count() {
                    self.run_locally(activity)?;
                }
            }
        }
        Ok(())
    }
}

/// Simulates the distributed protocol and runs the global phase on the
/// requester.
pub fn run_distributed(
    instance: &ValidatedInstance,
    g: &[usize],
    cfg: &SelectConfig,
    scenario: &Scenario,
) -> Result<DistributedOutcome, DistError> {
    let requester_pos = scenario.check()?;
    let requester = scenario.nodes[requester_pos].id;
    let z = instance.activity_count();
    if g.len() != z {
        return Err(LocalError::LevelCountMismatch {
            expected: z,
            got: g.len(),
        }
        .into());
    }
    let mut sim = Sim {
        instance,
        scenario,
        g,
        cfg,
        rng: seed::rng(seed::derive(scenario.seed, u64::MAX, 0)),
        queue: BinaryHeap::new(),
        events: BTreeMap::new(),
        seq: 0,
        now: 0,
        requester,
        free_at: BTreeMap::new(),
        results: vec![None; z],
        cache: vec![None; z],
        attempts: vec![0; z],
        tried: vec![Vec::new(); z],
        executors: vec![requester; z],
        outstanding: BTreeMap::new(),
        round: 0,
        helpers: Vec::new(),
        metrics: SimMetrics::default(),
    };

    let helper_ids: Vec<usize> = scenario
        .nodes
        .iter()
        .filter(|n| n.role == Role::Helper)
        .map(|n| n.id)
        .collect();
    for &h in &helper_ids {
        sim.metrics.messages.help += 1;
        let at = sim.latency();
        sim.schedule(at, h, Event::HelpArrives { helper: h });
    }
    if helper_ids.is_empty() {
        sim.begin()?;
    } else {
        sim.schedule(ms(scenario.discovery_ms), requester, Event::DiscoveryOver);
    }

    while let Some(Reverse((t, _, id))) = sim.queue.pop() {
        sim.now = t;
        let e = sim.events.remove(&id).expect("scheduled event");
        sim.step(e)?;
        if sim.round > 0 && sim.outstanding.is_empty() && sim.results.iter().all(Option::is_some) {
            break;
        }
    }
    debug_assert!(sim.results.iter().all(Option::is_some), "fallback covers every activity");

    let classes: Vec<Vec<QosClass>> = sim.results.into_iter().map(|r| r.expect("covered")).collect();
    let local = LocalSelection::from_classes(classes);
    let t = Instant::now();
    let (archive, stats, _) = global_phase(instance, &local.pools, cfg);
    let global_ns = t.elapsed().as_nanos() as u64;
    let mut metrics = sim.metrics;
    metrics.global_us = match scenario.charge {
        Charge::WallClock => global_ns / 1000,
        Charge::Modeled => stats.evaluated as u64 * instance.properties().len() as u64,
    };
    let ready = metrics.local_phase_us.max(sim.now);
    metrics.makespan_us = ready + metrics.global_us;
    metrics.executors = sim.executors;
    Ok(DistributedOutcome {
        local,
        archive,
        stats,
        metrics,
    })
}
