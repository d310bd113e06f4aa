use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use qassa_core::aggregation::AggregationApproach;
use qassa_core::dependency_prep::{preprocess, Dependency, PrepWarning};
use qassa_core::distsim::{run_distributed, Scenario, SimMetrics};
use qassa_core::global_selection::{CompositionSolution, CrsStats};
use qassa_core::model::{ActivityId, PropertySet, ServiceId, ValidatedInstance};
use qassa_core::pipeline::{prepare, run, PhaseTimings, SelectConfig};
use qassa_core::workload::{
    derive_constraints, generate, synthetic_qws, write_dataset, GeneratorConfig, InstanceFile, PatternMix,
    QWS_COLUMNS,
};

use crate::args::{Constraints, DistsimArgs, GenerateArgs, SelectArgs, SelectionArgs, SynthArgs};
use crate::error::{CliError, Result};

pub fn parse_mix(s: &str) -> Result<PatternMix> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::input(format!("pattern mix `{s}`"), e))?;
    match parts[..] {
        [sequence, parallel, looped] => Ok(PatternMix {
            sequence,
            parallel,
            looped,
        }),
        _ => Err(CliError::Input(format!(
            "pattern mix `{s}` needs three weights: sequence,parallel,loop"
        ))),
    }
}

pub fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::input(path.display(), e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Internal(e.to_string()))
        }
    }
}

/// JSON form of a constraint bound; infinities become `"inf"` / `"-inf"`.
pub fn bound_json(v: f64) -> Value {
    if v == f64::INFINITY {
        Value::from("inf")
    } else if v == f64::NEG_INFINITY {
        Value::from("-inf")
    } else {
        Value::from(v)
    }
}

pub fn generate_cmd(args: &GenerateArgs) -> Result<()> {
    let source = args.source.load()?;
    let props = PropertySet::new(&source.properties).map_err(|e| CliError::input("property file", e))?;
    if args.properties == 0 || args.properties > props.len() {
        return Err(CliError::Input(format!(
            "--properties must be between 1 and {}",
            props.len()
        )));
    }
    let props = props.truncated(args.properties);
    let cfg = GeneratorConfig {
        activities: args.activities,
        services: args.services,
        mix: parse_mix(&args.mix)?,
        max_depth: args.max_depth,
        seed: args.seed,
        with_replacement: !args.unique_rows,
    };
    let mut file = generate(&cfg, &props, &source.vectors)?;
    let inst = file.validate()?;
    file.request.constraints = derive_constraints(&inst, args.constraints.into(), args.approach.into());
    write_output(args.out.as_deref(), &(file.to_json()? + "\n"))
}

/// A validated instance with the requested constraints applied, plus its
/// dependencies.
pub fn load_instance(sel: &SelectionArgs) -> Result<(ValidatedInstance, Vec<Dependency>)> {
    let file = InstanceFile::read(&sel.instance).map_err(|e| CliError::input(sel.instance.display(), e))?;
    let inst = file.validate().map_err(|e| CliError::input(sel.instance.display(), e))?;
    let approach: AggregationApproach = sel.approach.into();
    let inst = match sel.constraints {
        Constraints::File => inst,
        Constraints::Mean => {
            let c = derive_constraints(&inst, qassa_core::workload::ConstraintMode::Mean, approach);
            inst.with_constraints(c)?
        }
        Constraints::MeanSigma => {
            let c = derive_constraints(&inst, qassa_core::workload::ConstraintMode::MeanPlusSigma, approach);
            inst.with_constraints(c)?
        }
    };
    Ok((inst, file.dependencies))
}

pub fn select_config(sel: &SelectionArgs) -> Result<SelectConfig> {
    if sel.top_k == 0 {
        return Err(CliError::Input("--top-k must be at least 1".into()));
    }
    if sel.archive == 0 {
        return Err(CliError::Input("--archive must be at least 1".into()));
    }
    Ok(SelectConfig {
        approach: sel.approach.into(),
        top_k: sel.top_k,
        capacity: sel.archive,
        seed: sel.seed,
    })
}

#[derive(Debug, Serialize)]
pub struct RankedSolution {
    pub rank: usize,
    pub utility: f64,
    pub qos: Vec<f64>,
    pub binding: BTreeMap<ActivityId, ServiceId>,
}

#[derive(Debug, Serialize)]
pub struct SelectReport {
    /// `feasible` when the archive is non-empty, `infeasible` otherwise.
    pub status: &'static str,
    pub approach: &'static str,
    pub seed: u64,
    pub top_k: usize,
    pub archive_capacity: usize,
    pub properties: Vec<String>,
    pub constraints: Vec<Value>,
    pub weights: Vec<f64>,
    pub levels: BTreeMap<ActivityId, usize>,
    pub pool_sizes: BTreeMap<ActivityId, usize>,
    pub stats: CrsStats,
    pub timings_ns: TimingsOut,
    pub warnings: Vec<PrepWarning>,
    pub solutions: Vec<RankedSolution>,
}

#[derive(Debug, Serialize)]
pub struct TimingsOut {
    pub local: u64,
    pub global: u64,
    pub total: u64,
}

impl From<PhaseTimings> for TimingsOut {
    fn from(t: PhaseTimings) -> Self {
        Self {
            local: t.local_ns,
            global: t.global_ns,
            total: t.total_ns(),
        }
    }
}

pub fn status(solutions: usize) -> &'static str {
    if solutions == 0 {
        "infeasible"
    } else {
        "feasible"
    }
}

fn ranked(solutions: &[CompositionSolution], expanded: Option<&[BTreeMap<ActivityId, ServiceId>]>) -> Vec<RankedSolution> {
    solutions
        .iter()
        .enumerate()
        .map(|(i, s)| RankedSolution {
            rank: i + 1,
            utility: s.utility,
            qos: s.qos.0.clone(),
            binding: match expanded {
                Some(e) => e[i].clone(),
                None => s.binding.iter().map(|(a, c)| (a.clone(), c.id.clone())).collect(),
            },
        })
        .collect()
}

pub fn select_report(sel: &SelectionArgs) -> Result<SelectReport> {
    let (inst, deps) = load_instance(sel)?;
    let cfg = select_config(sel)?;
    let full = run(&inst, &deps, &cfg).map_err(|e| match e {
        qassa_core::pipeline::PipelineError::Dependency(d) => CliError::input(sel.instance.display(), d),
        qassa_core::pipeline::PipelineError::Local(l) => CliError::from(l),
    })?;
    let reduced = &full.prep.reduced;
    let expanded: Vec<BTreeMap<ActivityId, ServiceId>> = full
        .expanded
        .iter()
        .map(|e| e.binding.iter().map(|(a, c)| (a.clone(), c.id.clone())).collect())
        .collect();
    for (e, s) in full.expanded.iter().zip(&full.outcome.archive.solutions) {
        if e.qos != s.qos {
            return Err(CliError::Internal("expanded composition does not re-aggregate".into()));
        }
    }
    let activities = reduced.activities();
    Ok(SelectReport {
        status: status(full.outcome.archive.len()),
        approach: cfg.approach.short_name(),
        seed: cfg.seed,
        top_k: cfg.top_k,
        archive_capacity: cfg.capacity,
        properties: inst.properties().iter().map(|p| p.name.clone()).collect(),
        constraints: inst.constraints().iter().map(|&c| bound_json(c)).collect(),
        weights: inst.weights().to_vec(),
        levels: activities.iter().cloned().zip(full.g.iter().copied()).collect(),
        pool_sizes: activities
            .iter()
            .cloned()
            .zip(full.outcome.local.pools.iter().map(Vec::len))
            .collect(),
        stats: full.outcome.stats,
        timings_ns: full.outcome.timings.into(),
        warnings: full.prep.warnings.clone(),
        solutions: ranked(&full.outcome.archive.solutions, Some(&expanded)),
    })
}

pub fn select_cmd(args: &SelectArgs) -> Result<()> {
    let report = select_report(&args.selection)?;
    let text = if args.json {
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))? + "\n"
    } else {
        render_select(&report)
    };
    write_output(None, &text)
}

fn render_select(r: &SelectReport) -> String {
    let mut s = format!(
        "status: {}  approach: {}  seed: {}  top-k: {}\n\
         local {:.3} ms, global {:.3} ms, {} iterations over {} pooled services\n",
        r.status,
        r.approach,
        r.seed,
        r.top_k,
        r.timings_ns.local as f64 / 1e6,
        r.timings_ns.global as f64 / 1e6,
        r.stats.iterations,
        r.stats.pool_total,
    );
    for w in &r.warnings {
        s += &format!("warning: {w:?}\n");
    }
    if r.solutions.is_empty() {
        s += "no feasible composition found\n";
    }
    for sol in &r.solutions {
        let binding: Vec<String> = sol.binding.iter().map(|(a, v)| format!("{a}={v}")).collect();
        s += &format!("#{:<2} F={:.6}  {}\n", sol.rank, sol.utility, binding.join(" "));
    }
    s
}

#[derive(Debug, Serialize)]
pub struct DistsimReport {
    pub status: &'static str,
    pub approach: &'static str,
    pub seed: u64,
    pub scenario: Scenario,
    pub metrics: SimMetrics,
    pub stats: CrsStats,
    pub pool_sizes: BTreeMap<ActivityId, usize>,
    pub solutions: Vec<RankedSolution>,
}

pub fn distsim_report(args: &DistsimArgs) -> Result<DistsimReport> {
    let sel = &args.selection;
    let (inst, deps) = load_instance(sel)?;
    let cfg = select_config(sel)?;
    let scenario = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))?;
            serde_json::from_str(&text).map_err(|e| CliError::input(path.display(), e))?
        }
        None => Scenario::perfect(args.helpers),
    };
    let prep = preprocess(&inst, &deps, cfg.approach).map_err(|e| CliError::input(sel.instance.display(), e))?;
    let g = prepare(&prep.reduced, cfg.seed)?;
    let out = run_distributed(&prep.reduced, &g, &cfg, &scenario)?;
    let expanded: Vec<BTreeMap<ActivityId, ServiceId>> = out
        .archive
        .solutions
        .iter()
        .map(|s| {
            prep.expand(s, cfg.approach)
                .map(|e| e.binding.iter().map(|(a, c)| (a.clone(), c.id.clone())).collect())
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(DistsimReport {
        status: status(out.archive.len()),
        approach: cfg.approach.short_name(),
        seed: cfg.seed,
        scenario,
        metrics: out.metrics,
        stats: out.stats,
        pool_sizes: prep
            .reduced
            .activities()
            .iter()
            .cloned()
            .zip(out.local.pools.iter().map(Vec::len))
            .collect(),
        solutions: ranked(&out.archive.solutions, Some(&expanded)),
    })
}

pub fn distsim_cmd(args: &DistsimArgs) -> Result<()> {
    let report = distsim_report(args)?;
    write_output(
        None,
        &(serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))? + "\n"),
    )
}

pub fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let data = synthetic_qws(args.rows, args.seed);
    debug_assert_eq!(data.columns.len(), QWS_COLUMNS.len());
    let mut buf = Vec::new();
    buf.extend_from_slice(
        format!(
            "# Synthetic QWS-like QoS table (not measured data), rows={} seed={}\n",
            args.rows, args.seed
        )
        .as_bytes(),
    );
    write_dataset(&mut buf, &data)?;
    write_output(args.out.as_deref(), &String::from_utf8(buf).expect("CSV output is UTF-8"))
}
