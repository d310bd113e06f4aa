//! Step-by-step execution of a composition against a fault script.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use qassa_core::adaptation::{adapt, AdaptContext, AdaptError, AdaptationOutcome, ExecutionState, Fault, Strategy};
use qassa_core::aggregation::{aggregate, feasible};
use qassa_core::dependency_prep::expand_fictive;
use qassa_core::model::{ActivityId, QosVector, ServiceId};
use qassa_core::pipeline::run;

use crate::args::AdaptArgs;
use crate::commands::{load_instance, select_config, write_output};
use crate::error::{CliError, Result};

/// Faults fire, in list order, just before their activity would execute.
/// `observed_qos` replaces the advertised QoS of an activity once executed.
/// Activities may be named by original or coarse id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultScript {
    #[serde(default)]
    pub observed_qos: BTreeMap<ActivityId, Vec<f64>>,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceStep {
    Executed {
        activity: ActivityId,
        service: ServiceId,
    },
    Fault {
        activity: ActivityId,
        failed: ServiceId,
        /// `single-substitution`, `sub-composition` or `RelaxationNeeded`.
        result: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        replacement: Option<BTreeMap<ActivityId, ServiceId>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        violated: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptTrace {
    /// `completed`, `RelaxationNeeded` or `no-initial-composition`.
    pub status: String,
    pub adaptations: usize,
    pub initial: Option<BTreeMap<ActivityId, ServiceId>>,
    pub steps: Vec<TraceStep>,
    pub final_binding: Option<BTreeMap<ActivityId, ServiceId>>,
    pub final_qos: Option<Vec<f64>>,
    pub final_feasible: bool,
}

const RELAXATION: &str = "RelaxationNeeded";

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::SingleSubstitution => "single-substitution",
        Strategy::SubComposition => "sub-composition",
    }
}

pub fn adapt_trace(args: &AdaptArgs) -> Result<AdaptTrace> {
    let sel = &args.selection;
    let text = std::fs::read_to_string(&args.faults).map_err(|e| CliError::input(args.faults.display(), e))?;
    let script: FaultScript = serde_json::from_str(&text).map_err(|e| CliError::input(args.faults.display(), e))?;
    let (inst, deps) = load_instance(sel)?;
    let cfg = select_config(sel)?;
    let full = run(&inst, &deps, &cfg).map_err(|e| CliError::input(sel.instance.display(), e))?;
    let reduced = &full.prep.reduced;
    let table = &full.prep.table;
    let names: Vec<String> = inst.properties().iter().map(|p| p.name.clone()).collect();

    let owner = |a: &ActivityId| -> Result<ActivityId> {
        if reduced.activity_index(a).is_some() {
            return Ok(a.clone());
        }
        let o = table.owner_of(a);
        if reduced.activity_index(o).is_some() {
            Ok(o.clone())
        } else {
            Err(CliError::Input(format!("fault script names unknown activity `{a}`")))
        }
    };
    let mut pending: BTreeMap<ActivityId, VecDeque<Fault>> = BTreeMap::new();
    for f in &script.faults {
        pending.entry(owner(&f.activity)?).or_default().push_back(f.clone());
    }
    let mut observed: BTreeMap<ActivityId, QosVector> = BTreeMap::new();
    for (a, q) in &script.observed_qos {
        if q.len() != inst.properties().len() {
            return Err(CliError::Input(format!(
                "observed QoS for `{a}` has {} values, expected {}",
                q.len(),
                inst.properties().len()
            )));
        }
        observed.insert(owner(a)?, QosVector(q.clone()));
    }

    let expand = |binding: &BTreeMap<ActivityId, qassa_core::model::ServiceCandidate>| {
        expand_fictive(binding, table).map_err(|e| CliError::Internal(e.to_string()))
    };
    let Some(best) = full.outcome.archive.best().cloned() else {
        return Ok(AdaptTrace {
            status: "no-initial-composition".into(),
            adaptations: 0,
            initial: None,
            steps: Vec::new(),
            final_binding: None,
            final_qos: None,
            final_feasible: false,
        });
    };
    let ctx = AdaptContext {
        instance: reduced,
        pools: &full.outcome.local.pools,
        approach: cfg.approach,
        bounds: &full.outcome.bounds,
        table: (!table.is_empty()).then_some(table),
    };
    let initial = expand(&best.binding)?;
    let mut state = ExecutionState::new(best);
    let mut steps = Vec::new();
    let mut adaptations = 0;
    let mut status = "completed";

    'run: for activity in reduced.activities() {
        for fault in pending.remove(activity).unwrap_or_default() {
            let failed = state.composition.binding[activity].id.clone();
            match adapt(&ctx, &state, &fault, &full.outcome.archive) {
                Ok(AdaptationOutcome::NewComposition { strategy, composition }) => {
                    adaptations += 1;
                    steps.push(TraceStep::Fault {
                        activity: fault.activity.clone(),
                        failed,
                        result: strategy_name(strategy).into(),
                        replacement: Some(expand(&composition.binding)?),
                        violated: Vec::new(),
                    });
                    state.composition = composition;
                }
                Ok(AdaptationOutcome::RelaxationNeeded { violated }) => {
                    steps.push(TraceStep::Fault {
                        activity: fault.activity.clone(),
                        failed,
                        result: RELAXATION.into(),
                        replacement: None,
                        violated: violated.iter().map(|&j| names[j].clone()).collect(),
                    });
                    status = RELAXATION;
                    break 'run;
                }
                Err(e @ (AdaptError::UnknownActivity(_) | AdaptError::AlreadyExecuted(_))) => {
                    return Err(CliError::Input(e.to_string()))
                }
                Err(e) => return Err(CliError::Internal(e.to_string())),
            }
        }
        steps.push(TraceStep::Executed {
            activity: activity.clone(),
            service: state.composition.binding[activity].id.clone(),
        });
        state.execute(activity, observed.get(activity).cloned());
    }

    let actual: BTreeMap<_, _> = state
        .composition
        .binding
        .iter()
        .map(|(a, c)| {
            let mut c = c.clone();
            if let Some(q) = state.actual_qos.get(a) {
                c.qos = q.clone();
            }
            (a.clone(), c)
        })
        .collect();
    let qos = aggregate(reduced.task(), reduced.properties(), &actual, cfg.approach)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(AdaptTrace {
        status: status.into(),
        adaptations,
        initial: Some(initial),
        steps,
        final_binding: Some(expand(&state.composition.binding)?),
        final_feasible: status == "completed" && feasible(&qos.0, reduced.constraints(), reduced.properties()),
        final_qos: Some(qos.0),
    })
}

pub fn adapt_cmd(args: &AdaptArgs) -> Result<()> {
    let trace = adapt_trace(args)?;
    let text = serde_json::to_string_pretty(&trace).map_err(|e| CliError::Internal(e.to_string()))?;
    write_output(None, &(text + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_sections_are_optional() {
        let s: FaultScript = serde_json::from_str("{}").unwrap();
        assert_eq!(s, FaultScript::default());
        let s: FaultScript = serde_json::from_str(r#"{"faults":[{"activity":"A1"}]}"#).unwrap();
        assert_eq!(s.faults[0].activity, ActivityId::from("A1"));
        assert!(s.observed_qos.is_empty());
    }
}
