//! Sequential reach-avoid chaining: a list of goal stages planned one by
//! one, with the handover containment `final states of stage i ⊆ feasible
//! initial states of stage i+1` verified. Intermediate stage goals pair the
//! goal boxes with moving primitives so the next stage can take over
//! mid-flight; in `Once` mode the last stage ends on holding primitives,
//! in `Loop` mode the last stage hands back to the first.

use super::ndd::{extract_optimal_policy, ndd_value};
use super::search::{astar_between, greedy_between, path_policy, PathPolicy, SearchError};
use super::{initial_state_set, ControlPolicy, ValueMap};
use crate::ma::ManeuverAutomaton;
use crate::product::{CostModel, ExplicitPa, GoalRule, PaError, PaGraph};
use crate::workspace::{enumerate_ots, GridSpec, WorkspaceError};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainMode {
    Once,
    Loop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Ndd,
    Astar,
    Greedy,
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("no goal stages given")]
    Empty,
    #[error("stage {stage}: {source}")]
    StageFailed {
        stage: usize,
        source: SearchError,
    },
    #[error("stage {stage}: goal {goal:?} is unreachable (no finite-value state)")]
    UnreachableGoal { stage: usize, goal: Vec<i64> },
    #[error("containment violated between stage {stage} and the next: state {witness} not coverable")]
    Containment { stage: usize, witness: String },
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Pa(#[from] PaError),
}

/// One planned stage.
pub enum StagePlan {
    Ndd {
        value: ValueMap,
        policy: ControlPolicy,
        initial: Vec<u32>,
        finals: Vec<u32>,
    },
    Path {
        policy: PathPolicy,
        expanded: usize,
    },
}

pub struct StageResult {
    /// Joint goal location of the stage.
    pub goal: Vec<i64>,
    pub plan: StagePlan,
}

pub struct ChainOutput {
    /// The shared explicit product automaton (value-iteration planner only).
    pub pa: Option<ExplicitPa>,
    pub stages: Vec<StageResult>,
}

/// Plan a sequence of reach-avoid goals. `stage_goals[i]` is the joint goal
/// location of stage `i` (per-vehicle goal blocks concatenated). A single
/// stage in `Once` mode is plain reach-avoid planning.
pub fn chain_specs(
    spec: &GridSpec,
    ma: &ManeuverAutomaton,
    stage_goals: &[Vec<i64>],
    mode: ChainMode,
    algo: Algo,
    state_budget: usize,
    cost: &CostModel,
) -> Result<ChainOutput, ChainError> {
    if stage_goals.is_empty() {
        return Err(ChainError::Empty);
    }
    for (i, g) in stage_goals.iter().enumerate() {
        if !spec.joint_location_safe(g)? {
            return Err(ChainError::UnreachableGoal {
                stage: i,
                goal: g.clone(),
            });
        }
    }
    match algo {
        Algo::Ndd => chain_ndd(spec, ma, stage_goals, mode, state_budget, cost),
        Algo::Astar => chain_path(spec, stage_goals, mode, true),
        Algo::Greedy => chain_path(spec, stage_goals, mode, false),
    }
}

fn chain_ndd(
    spec: &GridSpec,
    ma: &ManeuverAutomaton,
    stage_goals: &[Vec<i64>],
    mode: ChainMode,
    state_budget: usize,
    cost: &CostModel,
) -> Result<ChainOutput, ChainError> {
    let ots = enumerate_ots(spec, state_budget)?;
    let mut pa = ExplicitPa::build(ots, ma.clone(), state_budget)?.with_cost(cost.clone());
    let k = stage_goals.len();
    let mut stages = Vec::with_capacity(k);
    for (i, goal) in stage_goals.iter().enumerate() {
        let last = i + 1 == k;
        let rule = if last && mode == ChainMode::Once {
            GoalRule::HoldOnly
        } else {
            GoalRule::MovingOnly
        };
        pa.set_final(goal, rule)?;
        let finals = pa.final_states().to_vec();
        let value = ndd_value(&pa);
        let policy = extract_optimal_policy(&pa, &value);
        let initial = initial_state_set(&pa, &policy);
        // A stage no state outside its own final set can solve is vacuous.
        if initial.iter().all(|q| finals.binary_search(q).is_ok()) {
            return Err(ChainError::UnreachableGoal {
                stage: i,
                goal: goal.clone(),
            });
        }
        stages.push(StageResult {
            goal: goal.clone(),
            plan: StagePlan::Ndd {
                value,
                policy,
                initial,
                finals,
            },
        });
    }
    // Handover containment between consecutive stages.
    let pairs: Vec<(usize, usize)> = match mode {
        ChainMode::Once => (0..k.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        ChainMode::Loop => (0..k).map(|i| (i, (i + 1) % k)).collect(),
    };
    for (i, j) in pairs {
        let StagePlan::Ndd { finals, .. } = &stages[i].plan else {
            unreachable!()
        };
        let StagePlan::Ndd { initial, .. } = &stages[j].plan else {
            unreachable!()
        };
        for &q in finals {
            if initial.binary_search(&q).is_err() {
                let st = pa.state(q);
                return Err(ChainError::Containment {
                    stage: i,
                    witness: format!(
                        "location {:?}, primitive {}",
                        pa.ots.location(st.location),
                        pa.ma
                            .primitive_name(&pa.ma.primitive_tuple(st.primitive as usize))
                    ),
                });
            }
        }
    }
    Ok(ChainOutput {
        pa: Some(pa),
        stages,
    })
}

fn chain_path(
    spec: &GridSpec,
    stage_goals: &[Vec<i64>],
    mode: ChainMode,
    optimal: bool,
) -> Result<ChainOutput, ChainError> {
    let k = stage_goals.len();
    let mut stages: Vec<StageResult> = Vec::with_capacity(k);
    let mut start = spec.joint_start()?;
    for (i, goal) in stage_goals.iter().enumerate() {
        let plan = if optimal {
            astar_between(spec, &start, goal)
        } else {
            greedy_between(spec, &start, goal)
        }
        .map_err(|source| ChainError::StageFailed { stage: i, source })?;
        let policy = path_policy(spec, &plan);
        stages.push(StageResult {
            goal: goal.clone(),
            plan: StagePlan::Path {
                policy,
                expanded: plan.expanded,
            },
        });
        start = goal.clone();
    }
    // Stitch stage handovers: the terminal box of stage i runs the first
    // primitive of the next stage, making the final product state of stage
    // i exactly the initial product state of stage i+1.
    let pairs: Vec<(usize, usize)> = match mode {
        ChainMode::Once => (0..k.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        ChainMode::Loop => (0..k).map(|i| (i, (i + 1) % k)).collect(),
    };
    for (i, j) in &pairs {
        let (first_box, first_step) = {
            let StagePlan::Path { policy, .. } = &stages[*j].plan else {
                unreachable!()
            };
            let b = policy.path[0].clone();
            (b.clone(), policy.steps[&b].clone())
        };
        let StagePlan::Path { policy, .. } = &mut stages[*i].plan else {
            unreachable!()
        };
        let last = policy.path.last().expect("nonempty path").clone();
        if last != first_box {
            return Err(ChainError::Containment {
                stage: *i,
                witness: format!("stage ends at {last:?} but the next starts at {first_box:?}"),
            });
        }
        policy.steps.insert(last, first_step);
    }
    Ok(ChainOutput { pa: None, stages })
}
