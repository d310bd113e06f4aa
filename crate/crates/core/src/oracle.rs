//! Exact solver by exhaustive enumeration of all bindings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{feasible, utility, AggregationApproach, UtilityBounds};
use crate::global_selection::{CompositionSolution, Evaluator};
use crate::model::{ServiceId, ValidatedInstance};

pub const DEFAULT_BUDGET: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("binding space of {space} exceeds the enumeration budget of {budget}")]
    BudgetExceeded { space: u128, budget: u128 },
    #[error("optimality is undefined without a positive optimal utility")]
    UndefinedOptimality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best: Option<CompositionSolution>,
    pub f_opt: Option<f64>,
    pub evaluated: u64,
    pub feasible: u64,
}

#[derive(Clone)]
struct Best {
    picks: Vec<usize>,
    qos: Vec<f64>,
    utility: f64,
}

#[derive(Clone, Default)]
struct Partial {
    best: Option<Best>,
    evaluated: u64,
    feasible: u64,
}

/// Enumerates every binding of the full candidate lists.
pub fn exhaustive_optimal(
    instance: &ValidatedInstance,
    approach: AggregationApproach,
    bounds: &UtilityBounds,
    budget: u128,
) -> Result<OracleResult, OracleError> {
    let pools: Vec<Vec<usize>> = instance.pools().iter().map(|p| (0..p.len()).collect()).collect();
    exhaustive_over(instance, &pools, approach, bounds, budget)
}

/// Enumerates every binding drawn from `pools` (candidate indices per activity).
pub fn exhaustive_over(
    instance: &ValidatedInstance,
    pools: &[Vec<usize>],
    approach: AggregationApproach,
    bounds: &UtilityBounds,
    budget: u128,
) -> Result<OracleResult, OracleError> {
    let space: u128 = pools.iter().map(|p| p.len() as u128).product();
    if space > budget {
        return Err(OracleError::BudgetExceeded { space, budget });
    }
    let eval = Evaluator::new(instance, pools, approach, bounds);
    let z = pools.len();
    let n = instance.properties().len();

    let partials: Vec<Partial> = (0..pools[0].len())
        .into_par_iter()
        .map(|first| {
            let mut part = Partial::default();
            let mut picks = vec![0usize; z];
            picks[0] = first;
            let mut qos = vec![0.0; n];
            loop {
                let score = eval.evaluate(&picks, &mut qos);
                part.evaluated += 1;
                if score.feasible {
                    part.feasible += 1;
                    let better = match &part.best {
                        None => true,
                        Some(b) => beats(&eval, score.utility, &picks, b),
                    };
                    if better {
                        part.best = Some(Best {
                            picks: picks.clone(),
                            qos: qos.clone(),
                            utility: score.utility,
                        });
                    }
                }
                if !advance(&mut picks[1..], &pools[1..]) {
                    break;
                }
            }
            part
        })
        .collect();

    let mut total = Partial::default();
    for part in partials {
        total.evaluated += part.evaluated;
        total.feasible += part.feasible;
        if let Some(b) = part.best {
            let better = match &total.best {
                None => true,
                Some(cur) => beats(&eval, b.utility, &b.picks, cur),
            };
            if better {
                total.best = Some(b);
            }
        }
    }
    let best = total
        .best
        .map(|b| eval.solution(&b.picks, b.qos, b.utility));
    Ok(OracleResult {
        f_opt: best.as_ref().map(|b| b.utility),
        best,
        evaluated: total.evaluated,
        feasible: total.feasible,
    })
}

/// Higher utility wins; equal utilities go to the lexicographically smaller ids.
fn beats(eval: &Evaluator<'_>, utility: f64, picks: &[usize], other: &Best) -> bool {
    match utility.total_cmp(&other.utility) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => ids(eval, picks) < ids(eval, &other.picks),
    }
}

fn ids<'a>(eval: &Evaluator<'a>, picks: &[usize]) -> Vec<&'a ServiceId> {
    picks
        .iter()
        .enumerate()
        .map(|(i, &p)| &eval.candidate(i, p).id)
        .collect()
}

/// Odometer step; false once every combination has been produced.
fn advance(picks: &mut [usize], pools: &[Vec<usize>]) -> bool {
    for i in (0..picks.len()).rev() {
        picks[i] += 1;
        if picks[i] < pools[i].len() {
            return true;
        }
        picks[i] = 0;
    }
    false
}

/// `F / F_opt`.
pub fn optimality(f: f64, f_opt: Option<f64>) -> Result<f64, OracleError> {
    match f_opt {
        Some(opt) if opt > 0.0 => Ok(f / opt),
        _ => Err(OracleError::UndefinedOptimality),
    }
}

/// Counts feasible bindings over the full candidate lists without tracking the best.
pub fn count_feasible(instance: &ValidatedInstance, approach: AggregationApproach, budget: u128) -> Result<u64, OracleError> {
    let space = instance.binding_space();
    if space > budget {
        return Err(OracleError::BudgetExceeded { space, budget });
    }
    let pools = instance.pools();
    let props = instance.properties();
    let n = props.len();
    let z = pools.len();
    let count = (0..pools[0].len())
        .into_par_iter()
        .map(|first| {
            let mut picks = vec![0usize; z];
            picks[0] = first;
            let mut qos = vec![0.0; n];
            let mut count = 0u64;
            loop {
                instance
                    .compiled()
                    .aggregate_into(props, approach, |i| pools[i][picks[i]].qos.values(), &mut qos);
                if feasible(&qos, instance.constraints(), props) {
                    count += 1;
                }
                let mut i = z;
                let mut more = false;
                while i > 1 {
                    i -= 1;
                    picks[i] += 1;
                    if picks[i] < pools[i].len() {
                        more = true;
                        break;
                    }
                    picks[i] = 0;
                }
                if !more {
                    break;
                }
            }
            count
        })
        .sum();
    Ok(count)
}

/// Reference utility of an arbitrary binding, for cross-checks.
pub fn utility_of(
    instance: &ValidatedInstance,
    picks: &[usize],
    approach: AggregationApproach,
    bounds: &UtilityBounds,
) -> (Vec<f64>, bool, f64) {
    let props = instance.properties();
    let q = instance
        .compiled()
        .aggregate_with(props, approach, |i| instance.pool(i)[picks[i]].qos.values())
        .0;
    let ok = feasible(&q, instance.constraints(), props);
    let u = utility(&q, instance.weights(), bounds, props);
    (q, ok, u)
}
