//! Control-policy generation on product automata.
//!
//! Three generators are provided: non-deterministic Dijkstra value iteration
//! with optimal-policy extraction (complete and optimal over the whole
//! product), deterministic A* over joint grid boxes with single-axis moves
//! (optimal paths from a fixed start), and greedy best-first descent on the
//! Manhattan distance (fast, incomplete). Policies are evaluated by a
//! worst-case cost-to-go that treats event labels as uncontrollable.

pub mod chain;
pub mod ndd;
pub mod search;

pub use chain::{chain_specs, ChainError, ChainMode, StageResult};
pub use ndd::{extract_optimal_policy, ndd_value};
pub use search::{astar_plan, greedy_plan, path_policy, PathPlan, PathPolicy, SearchError};

use crate::product::PaGraph;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("state {0} is reachable under the policy but has no assignment")]
    UncoveredState(u32),
    #[error("state index {0} out of range")]
    BadState(u32),
}

/// Cost-to-go values per product state.
#[derive(Debug, Clone)]
pub struct ValueMap {
    pub values: Vec<f64>,
}

impl ValueMap {
    pub fn get(&self, q: u32) -> f64 {
        self.values[q as usize]
    }

    pub fn finite_states(&self) -> Vec<u32> {
        (0..self.values.len() as u32)
            .filter(|&q| self.values[q as usize].is_finite())
            .collect()
    }
}

/// A control assignment per (state, event): the chosen successor state.
/// With the deterministic grid layer a successor fixes the next primitive,
/// so this is the `c(q, σ)` table in successor form.
#[derive(Debug, Clone, Default)]
pub struct ControlPolicy {
    pub choices: HashMap<(u32, u64), u32>,
}

impl ControlPolicy {
    pub fn next(&self, q: u32, sigma: u64) -> Option<u32> {
        self.choices.get(&(q, sigma)).copied()
    }

    pub fn is_admissible(&self, pa: &impl PaGraph) -> bool {
        self.choices
            .iter()
            .all(|(&(q, sigma), &q2)| pa.successors(q, sigma).contains(&q2))
    }

    /// States with at least one assignment.
    pub fn covered_states(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.choices.keys().map(|&(q, _)| q).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Worst-case cost of one state under a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyValue {
    Finite(f64),
    Infinite,
    /// A reachable state is missing an assignment for some possible event.
    Uncovered,
}

/// Evaluate the worst-case cost-to-go of every state under `policy`: the
/// maximum over induced runs of the accumulated edge cost up to the first
/// final state plus its terminal cost. Runs that can avoid the final set
/// forever (dead ends or cycles off the goal) give `Infinite`; states from
/// which an unassigned (state, event) pair is reachable give `Uncovered`.
pub fn evaluate_policy(pa: &impl PaGraph, policy: &ControlPolicy) -> Vec<PolicyValue> {
    let n = pa.num_states();
    // Policy-induced successor lists, cut at final states (runs stop
    // accumulating there; later transitions never matter for the cost).
    let mut succs: Vec<Vec<(u64, u32)>> = vec![Vec::new(); n];
    let mut uncovered_here = vec![false; n];
    for q in 0..n as u32 {
        if pa.is_final(q) {
            continue;
        }
        for sigma in pa.labels(q) {
            match policy.next(q, sigma) {
                Some(q2) => succs[q as usize].push((sigma, q2)),
                None => uncovered_here[q as usize] = true,
            }
        }
    }

    // Pass 1: states that can reach an unassigned pair are errors.
    let mut rev: Vec<Vec<u32>> = vec![Vec::new(); n];
    for q in 0..n {
        for &(_, q2) in &succs[q] {
            rev[q2 as usize].push(q as u32);
        }
    }
    let mut status: Vec<Option<PolicyValue>> = vec![None; n];
    let mut stack: Vec<u32> = (0..n as u32)
        .filter(|&q| uncovered_here[q as usize] && !pa.is_final(q))
        .collect();
    for &q in &stack {
        status[q as usize] = Some(PolicyValue::Uncovered);
    }
    while let Some(q) = stack.pop() {
        for &p in &rev[q as usize] {
            if status[p as usize].is_none() && !pa.is_final(p) {
                status[p as usize] = Some(PolicyValue::Uncovered);
                stack.push(p);
            }
        }
    }

    // Pass 2: resolve the rest. Final states carry their terminal cost;
    // dead ends off the goal and anything feeding an infinite state are
    // infinite; a state becomes finite once all successors are finite.
    let mut value = vec![0.0f64; n];
    let mut queue: Vec<u32> = Vec::new();
    for q in 0..n as u32 {
        if status[q as usize].is_some() {
            continue;
        }
        if pa.is_final(q) {
            status[q as usize] = Some(PolicyValue::Finite(pa.terminal_cost(q)));
            value[q as usize] = pa.terminal_cost(q);
            queue.push(q);
        } else if succs[q as usize].is_empty() {
            status[q as usize] = Some(PolicyValue::Infinite);
            queue.push(q);
        }
    }
    while let Some(q) = queue.pop() {
        let q_status = status[q as usize].expect("resolved before queueing");
        for &p in &rev[q as usize] {
            let pi = p as usize;
            if status[pi].is_some() || pa.is_final(p) {
                continue;
            }
            match q_status {
                PolicyValue::Infinite => {
                    status[pi] = Some(PolicyValue::Infinite);
                    queue.push(p);
                }
                PolicyValue::Finite(_) => {
                    // Accumulate max over resolved successors; multiple
                    // edges into q are all accounted by scanning succs.
                    let mut all = true;
                    let mut m = f64::NEG_INFINITY;
                    for &(sigma, q2) in &succs[pi] {
                        match status[q2 as usize] {
                            Some(PolicyValue::Finite(v2)) => {
                                m = m.max(pa.edge_cost(p, sigma) + v2);
                            }
                            _ => {
                                all = false;
                                break;
                            }
                        }
                    }
                    if all {
                        status[pi] = Some(PolicyValue::Finite(m));
                        value[pi] = m;
                        queue.push(p);
                    }
                }
                PolicyValue::Uncovered => unreachable!("errors handled in pass 1"),
            }
        }
    }
    // Whatever never resolved sits on or feeds an off-goal cycle.
    status
        .into_iter()
        .map(|s| s.unwrap_or(PolicyValue::Infinite))
        .collect()
}

/// Worst-case cost-to-go of one state; `Err` when an unassigned pair is
/// reachable, `f64::INFINITY` when some induced run never reaches the goal.
pub fn cost_to_go(pa: &impl PaGraph, policy: &ControlPolicy, q: u32) -> Result<f64, PlanError> {
    if q as usize >= pa.num_states() {
        return Err(PlanError::BadState(q));
    }
    match evaluate_policy(pa, policy)[q as usize] {
        PolicyValue::Finite(v) => Ok(v),
        PolicyValue::Infinite => Ok(f64::INFINITY),
        PolicyValue::Uncovered => Err(PlanError::UncoveredState(q)),
    }
}

/// The feasible initial set of a policy: states from which every induced
/// run reaches the final set.
pub fn initial_state_set(pa: &impl PaGraph, policy: &ControlPolicy) -> Vec<u32> {
    evaluate_policy(pa, policy)
        .iter()
        .enumerate()
        .filter_map(|(q, v)| match v {
            PolicyValue::Finite(_) => Some(q as u32),
            _ => None,
        })
        .collect()
}

/// Runtime interface between a policy and the hybrid execution: the next
/// primitive tuple for a (location, primitive, event) query, or `None` when
/// the policy does not cover it.
pub trait PolicyQuery {
    fn next_primitive(
        &self,
        location: &[i64],
        primitive: &[usize],
        sigma: &[i8],
    ) -> Option<Vec<usize>>;
}

/// Product-automaton policy bound to its automaton.
pub struct PaPolicy<'a> {
    pub pa: &'a crate::product::ExplicitPa,
    pub policy: &'a ControlPolicy,
}

impl PolicyQuery for PaPolicy<'_> {
    fn next_primitive(
        &self,
        location: &[i64],
        primitive: &[usize],
        sigma: &[i8],
    ) -> Option<Vec<usize>> {
        let l_idx = self.pa.ots.index_of(location)?;
        let m_idx = self.pa.ma.primitive_index(primitive) as u32;
        let q = self.pa.state_index(l_idx, m_idx)?;
        let q2 = self
            .policy
            .next(q, crate::workspace::encode_offset(sigma))?;
        let st = self.pa.state(q2);
        Some(self.pa.ma.primitive_tuple(st.primitive as usize))
    }
}

impl PolicyQuery for search::PathPolicy {
    fn next_primitive(
        &self,
        location: &[i64],
        primitive: &[usize],
        sigma: &[i8],
    ) -> Option<Vec<usize>> {
        let step = self.steps.get(location)?;
        if step.primitive != primitive || step.sigma.as_deref() != Some(sigma) {
            return None;
        }
        let next: Vec<i64> = location
            .iter()
            .zip(sigma)
            .map(|(&c, &s)| c + s as i64)
            .collect();
        Some(self.steps.get(&next)?.primitive.clone())
    }
}
