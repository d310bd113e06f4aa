//! Parameter sweeps and their reports.
//!
//! Every run is one [`BenchRow`]; rows of the same configuration form a
//! [`CellSummary`]. Reports are written as row CSV, cell CSV and JSON, and
//! read back by [`read_rows_csv`] and [`BenchReport::from_json`].

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use qassa_core::aggregation::AggregationApproach;
use qassa_core::distsim::{run_distributed, Charge, Scenario};
use qassa_core::model::PropertySet;
use qassa_core::oracle::exhaustive_optimal;
use qassa_core::pipeline::{prepare, select, SelectConfig};
use qassa_core::seed;
use qassa_core::workload::{derive_constraints, generate, ConstraintMode, GeneratorConfig};

use crate::args::BenchArgs;
use crate::commands::{parse_mix, write_output};
use crate::error::{CliError, Result};

/// Seed stream for per-repeat instance seeds.
const BENCH_INSTANCE: u64 = 100;

/// A list of values given as `lo..hi:step`, `lo..hi` (step 1), `a,b,c` or `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sweep(pub Vec<usize>);

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
        let values = if let Some((lo, rest)) = s.split_once("..") {
            let (hi, step) = match rest.split_once(':') {
                Some((hi, step)) => (num(hi)?, num(step)?),
                None => (num(rest)?, 1),
            };
            let lo = num(lo)?;
            if step == 0 || hi < lo {
                return Err(format!("empty or invalid range `{s}`"));
            }
            (lo..=hi).step_by(step).collect()
        } else {
            s.split(',').map(num).collect::<std::result::Result<Vec<_>, _>>()?
        };
        if values.is_empty() {
            return Err(format!("no values in `{s}`"));
        }
        Ok(Sweep(values))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub a: usize,
    pub k: usize,
    pub n: usize,
    pub approach: String,
    pub constraint_mode: String,
    pub seed: u64,
    pub repeat: u32,
    pub instance_seed: u64,
    pub local_ns: u64,
    pub global_ns: u64,
    pub total_ns: u64,
    pub pool_total: usize,
    pub iterations: usize,
    pub archive_size: usize,
    pub best_utility: Option<f64>,
    /// `skipped`, `feasible` or `infeasible`.
    pub oracle: String,
    pub f_opt: Option<f64>,
    pub optimality: Option<f64>,
    pub dist_helpers: Option<usize>,
    pub dist_local_phase_us: Option<u64>,
    pub dist_makespan_us: Option<u64>,
    pub dist_messages: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub a: usize,
    pub k: usize,
    pub n: usize,
    pub approach: String,
    pub constraint_mode: String,
    pub runs: usize,
    pub mean_local_ns: f64,
    pub median_local_ns: f64,
    pub mean_global_ns: f64,
    pub median_global_ns: f64,
    pub mean_total_ns: f64,
    pub median_total_ns: f64,
    /// Runs with a non-empty archive.
    pub feasible_runs: usize,
    /// Runs where the oracle found a feasible binding.
    pub optimality_runs: usize,
    pub mean_optimality: Option<f64>,
    pub min_optimality: Option<f64>,
    pub max_optimality: Option<f64>,
    pub mean_dist_local_phase_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples_total_ns: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub activities: Vec<usize>,
    pub services: Vec<usize>,
    pub properties: Vec<usize>,
    pub approaches: Vec<String>,
    pub constraint_modes: Vec<String>,
    pub repeats: u32,
    pub oracle_max: u128,
    pub seed: u64,
    pub top_k: usize,
    pub archive: usize,
    pub helpers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub cells: Vec<CellSummary>,
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn stats(rows: &[&BenchRow], field: impl Fn(&BenchRow) -> u64) -> (f64, f64) {
    let mut xs: Vec<f64> = rows.iter().map(|r| field(r) as f64).collect();
    (mean(&xs), median(&mut xs))
}

/// Groups rows by configuration, in first-appearance order.
pub fn summarize(rows: &[BenchRow]) -> Vec<CellSummary> {
    let key = |r: &BenchRow| (r.a, r.k, r.n, r.approach.clone(), r.constraint_mode.clone());
    let mut keys = Vec::new();
    for r in rows {
        if !keys.contains(&key(r)) {
            keys.push(key(r));
        }
    }
    keys.into_iter()
        .map(|k| {
            let cell: Vec<&BenchRow> = rows.iter().filter(|r| key(r) == k).collect();
            let (mean_local_ns, median_local_ns) = stats(&cell, |r| r.local_ns);
            let (mean_global_ns, median_global_ns) = stats(&cell, |r| r.global_ns);
            let (mean_total_ns, median_total_ns) = stats(&cell, |r| r.total_ns);
            let opt: Vec<f64> = cell.iter().filter_map(|r| r.optimality).collect();
            let dist: Vec<f64> = cell.iter().filter_map(|r| r.dist_local_phase_us.map(|x| x as f64)).collect();
            CellSummary {
                a: k.0,
                k: k.1,
                n: k.2,
                approach: k.3,
                constraint_mode: k.4,
                runs: cell.len(),
                mean_local_ns,
                median_local_ns,
                mean_global_ns,
                median_global_ns,
                mean_total_ns,
                median_total_ns,
                feasible_runs: cell.iter().filter(|r| r.archive_size > 0).count(),
                optimality_runs: opt.len(),
                mean_optimality: (!opt.is_empty()).then(|| mean(&opt)),
                min_optimality: opt.iter().copied().reduce(f64::min),
                max_optimality: opt.iter().copied().reduce(f64::max),
                mean_dist_local_phase_us: (!dist.is_empty()).then(|| mean(&dist)),
                samples_total_ns: cell.iter().map(|r| r.total_ns).collect(),
            }
        })
        .collect()
}

pub fn write_rows_csv(writer: impl Write, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::Internal(e.to_string()))
}

pub fn read_rows_csv(reader: impl Read) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Cell CSV without the raw samples.
pub fn write_cells_csv(writer: impl Write, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in cells {
        let c = CellSummary {
            samples_total_ns: Vec::new(),
            ..c.clone()
        };
        w.serialize(c)?;
    }
    w.flush().map_err(|e| CliError::Internal(e.to_string()))
}

pub fn read_cells_csv(reader: impl Read) -> Result<Vec<CellSummary>> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn mode_name(m: ConstraintMode) -> &'static str {
    m.short_name()
}

/// Runs the sweep. Cells run one after another so timings do not contend.
pub fn run_bench(args: &BenchArgs) -> Result<BenchReport> {
    if args.repeats == 0 {
        return Err(CliError::Input("--repeats must be at least 1".into()));
    }
    if args.top_k == 0 || args.archive == 0 {
        return Err(CliError::Input("--top-k and --archive must be at least 1".into()));
    }
    let source = args.source.load()?;
    let props = PropertySet::new(&source.properties).map_err(|e| CliError::input("property file", e))?;
    if let Some(&n) = args.properties.0.iter().find(|&&n| n == 0 || n > props.len()) {
        return Err(CliError::Input(format!("{n} properties requested, {} available", props.len())));
    }
    let mix = parse_mix(&args.mix)?;
    let approaches: Vec<AggregationApproach> = args.approaches.iter().map(|&a| a.into()).collect();
    let modes: Vec<ConstraintMode> = args.constraint_modes.iter().map(|&m| m.into()).collect();

    let mut rows = Vec::new();
    for &a in &args.activities.0 {
        for &k in &args.services.0 {
            for &n in &args.properties.0 {
                let props = props.truncated(n);
                for &approach in &approaches {
                    for &mode in &modes {
                        for repeat in 0..args.repeats {
                            let instance_seed = seed::derive(args.seed, BENCH_INSTANCE, repeat as u64);
                            let mut cfg = GeneratorConfig::new(a, k, instance_seed);
                            cfg.mix = mix;
                            let base = generate(&cfg, &props, &source.vectors)?.validate()?;
                            let inst = base.with_constraints(derive_constraints(&base, mode, approach))?;
                            rows.push(bench_run(args, &inst, approach, mode, repeat, instance_seed)?);
                        }
                    }
                }
            }
        }
    }
    let cells = summarize(&rows);
    Ok(BenchReport {
        config: BenchConfig {
            activities: args.activities.0.clone(),
            services: args.services.0.clone(),
            properties: args.properties.0.clone(),
            approaches: approaches.iter().map(|a| a.short_name().to_string()).collect(),
            constraint_modes: modes.iter().map(|&m| mode_name(m).to_string()).collect(),
            repeats: args.repeats,
            oracle_max: args.oracle_max,
            seed: args.seed,
            top_k: args.top_k,
            archive: args.archive,
            helpers: args.helpers,
        },
        rows,
        cells,
    })
}

fn bench_run(
    args: &BenchArgs,
    inst: &qassa_core::model::ValidatedInstance,
    approach: AggregationApproach,
    mode: ConstraintMode,
    repeat: u32,
    instance_seed: u64,
) -> Result<BenchRow> {
    let cfg = SelectConfig {
        approach,
        top_k: args.top_k,
        capacity: args.archive,
        seed: seed::derive(args.seed, seed::GLOBAL_PHASE, repeat as u64),
    };
    let g = prepare(inst, cfg.seed)?;
    let out = select(inst, &g, &cfg)?;
    let best_utility = out.archive.best().map(|s| s.utility);
    let (oracle, f_opt, optimality) = if inst.binding_space() <= args.oracle_max {
        let res = exhaustive_optimal(inst, approach, &out.bounds, args.oracle_max)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        match res.f_opt {
            Some(opt) => {
                let ratio = match best_utility {
                    None => 0.0,
                    Some(_) if opt <= 0.0 => 1.0,
                    Some(f) => f / opt,
                };
                ("feasible", Some(opt), Some(ratio))
            }
            None => ("infeasible", None, None),
        }
    } else {
        ("skipped", None, None)
    };
    let dist = match args.helpers {
        Some(h) => {
            let mut scenario = Scenario::perfect(h);
            scenario.charge = Charge::Modeled;
            let d = run_distributed(inst, &g, &cfg, &scenario)?;
            if d.archive != out.archive {
                return Err(CliError::Internal("distributed archive differs from centralized".into()));
            }
            Some(d.metrics)
        }
        None => None,
    };
    Ok(BenchRow {
        a: inst.activity_count(),
        k: inst.pool(0).len(),
        n: inst.properties().len(),
        approach: approach.short_name().into(),
        constraint_mode: mode_name(mode).into(),
        seed: cfg.seed,
        repeat,
        instance_seed,
        local_ns: out.timings.local_ns,
        global_ns: out.timings.global_ns,
        total_ns: out.timings.total_ns(),
        pool_total: out.stats.pool_total,
        iterations: out.stats.iterations,
        archive_size: out.archive.len(),
        best_utility,
        oracle: oracle.into(),
        f_opt,
        optimality,
        dist_helpers: args.helpers,
        dist_local_phase_us: dist.as_ref().map(|m| m.local_phase_us),
        dist_makespan_us: dist.as_ref().map(|m| m.makespan_us),
        dist_messages: dist.as_ref().map(|m| {
            let c = &m.messages;
            c.help + c.help_reply + c.elementary_request + c.elementary_result + c.session_timeout
        }),
    })
}

pub fn bench_cmd(args: &BenchArgs) -> Result<()> {
    let report = run_bench(args)?;
    if let Some(path) = &args.csv {
        let f = std::fs::File::create(path).map_err(|e| CliError::input(path.display(), e))?;
        write_rows_csv(f, &report.rows)?;
    }
    if let Some(path) = &args.summary_csv {
        let f = std::fs::File::create(path).map_err(|e| CliError::input(path.display(), e))?;
        write_cells_csv(f, &report.cells)?;
    }
    if let Some(path) = &args.json {
        write_output(Some(path), &(report.to_json()? + "\n"))?;
    }
    let mut out = Vec::new();
    write_cells_csv(&mut out, &report.cells)?;
    write_output(None, &String::from_utf8(out).expect("CSV output is UTF-8"))
}

/// Reads a JSON report or a row CSV and prints the cell summary CSV.
pub fn report_cmd(path: &std::path::Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))?;
    let cells = if path.extension().is_some_and(|e| e == "json") {
        BenchReport::from_json(&text)?.cells
    } else {
        summarize(&read_rows_csv(text.as_bytes())?)
    };
    let mut out = Vec::new();
    write_cells_csv(&mut out, &cells)?;
    write_output(None, &String::from_utf8(out).expect("CSV output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(a: usize, total: u64, opt: Option<f64>) -> BenchRow {
        BenchRow {
            a,
            k: 6,
            n: 3,
            approach: "worst".into(),
            constraint_mode: "mean".into(),
            seed: 1,
            repeat: 0,
            instance_seed: 9,
            local_ns: total / 2,
            global_ns: total - total / 2,
            total_ns: total,
            pool_total: 10,
            iterations: 7,
            archive_size: usize::from(opt.is_some()),
            best_utility: opt.map(|o| o * 0.731),
            oracle: if opt.is_some() { "feasible" } else { "skipped" }.into(),
            f_opt: opt.map(|_| 0.731),
            optimality: opt,
            dist_helpers: None,
            dist_local_phase_us: None,
            dist_makespan_us: None,
            dist_messages: None,
        }
    }

    #[test]
    fn sweeps_parse() {
        assert_eq!("10..50:10".parse::<Sweep>().unwrap().0, vec![10, 20, 30, 40, 50]);
        assert_eq!("2..5".parse::<Sweep>().unwrap().0, vec![2, 3, 4, 5]);
        assert_eq!("4,5,6".parse::<Sweep>().unwrap().0, vec![4, 5, 6]);
        assert_eq!("7".parse::<Sweep>().unwrap().0, vec![7]);
        assert!("5..2".parse::<Sweep>().is_err());
        assert!("1..3:0".parse::<Sweep>().is_err());
        assert!("x".parse::<Sweep>().is_err());
    }

    #[test]
    fn cells_average_and_take_medians() {
        let rows = vec![row(4, 10, Some(1.0)), row(4, 30, Some(0.5)), row(4, 20, None), row(5, 7, None)];
        let cells = summarize(&rows);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].runs, 3);
        assert_eq!(cells[0].mean_total_ns, 20.0);
        assert_eq!(cells[0].median_total_ns, 20.0);
        assert_eq!(cells[0].mean_optimality, Some(0.75));
        assert_eq!(cells[0].optimality_runs, 2);
        assert_eq!(cells[0].samples_total_ns, vec![10, 30, 20]);
        assert_eq!(cells[1].mean_optimality, None);
    }

    #[test]
    fn row_csv_round_trips() {
        let rows = vec![row(4, 12_345, Some(0.1 + 0.2)), row(5, 1, None)];
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_rows_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn cell_csv_and_json_round_trip() {
        let rows = vec![row(4, 10, Some(1.0 / 3.0)), row(4, 11, None)];
        let cells = summarize(&rows);
        let mut buf = Vec::new();
        write_cells_csv(&mut buf, &cells).unwrap();
        let back = read_cells_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0].mean_optimality, cells[0].mean_optimality);
        assert!(back[0].samples_total_ns.is_empty());
        let report = BenchReport {
            config: BenchConfig {
                activities: vec![4],
                services: vec![6],
                properties: vec![3],
                approaches: vec!["worst".into()],
                constraint_modes: vec!["mean".into()],
                repeats: 2,
                oracle_max: u128::MAX,
                seed: 1,
                top_k: 1,
                archive: 10,
                helpers: None,
            },
            rows,
            cells,
        };
        assert_eq!(BenchReport::from_json(&report.to_json().unwrap()).unwrap(), report);
    }
}
