//! Deterministic planners over joint grid boxes.
//!
//! Both planners restrict motion to the pruned primitive set: one vehicle
//! moves along one axis per step while everything else holds, plus the
//! all-hold primitive. A* explores with the summed per-output box distance
//! as an admissible heuristic and returns shortest paths; greedy best-first
//! extends the path into the first feasible neighbor that strictly
//! decreases that distance and fails when no such neighbor exists.

use crate::workspace::{GridSpec, WorkspaceError};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no path between the start and goal configurations")]
    NoPath,
    #[error("greedy search stuck at {at:?}: no feasible distance-decreasing move")]
    Stuck { at: Vec<i64> },
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
}

/// A joint box path plus search statistics.
#[derive(Debug, Clone)]
pub struct PathPlan {
    pub path: Vec<Vec<i64>>,
    pub expanded: usize,
}

/// Summed per-output box distance to the goal.
fn manhattan(l: &[i64], goal: &[i64]) -> u64 {
    l.iter()
        .zip(goal)
        .map(|(a, b)| a.abs_diff(*b))
        .sum()
}

#[derive(PartialEq, Eq)]
struct OpenEntry {
    f: u64,
    seq: u64,
    loc: Vec<i64>,
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (f, insertion order).
        other
            .f
            .cmp(&self.f)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Single-axis neighbor moves in deterministic order (output-major, then
/// negative before positive direction).
fn neighbors(spec: &GridSpec, l: &[i64]) -> Vec<(usize, i8, Vec<i64>)> {
    let p = spec.p();
    let mut out = Vec::with_capacity(2 * p);
    for axis in 0..p {
        for dir in [-1i8, 1] {
            let mut next = l.to_vec();
            next[axis] += dir as i64;
            if spec.joint_location_safe(&next).unwrap_or(false) {
                out.push((axis, dir, next));
            }
        }
    }
    out
}

/// Shortest joint box path from the vehicle starts to the goals under unit
/// step cost, or [`SearchError::NoPath`] after exhausting the reachable set.
pub fn astar_plan(spec: &GridSpec) -> Result<PathPlan, SearchError> {
    astar_between(spec, &spec.joint_start()?, &spec.joint_goal())
}

/// A* between explicit joint configurations (used by stage chaining).
pub fn astar_between(
    spec: &GridSpec,
    start: &[i64],
    goal: &[i64],
) -> Result<PathPlan, SearchError> {
    if !spec.joint_location_safe(start)? || !spec.joint_location_safe(goal)? {
        return Err(SearchError::NoPath);
    }
    let mut open = BinaryHeap::new();
    let mut g: HashMap<Vec<i64>, u64> = HashMap::new();
    let mut parent: HashMap<Vec<i64>, Vec<i64>> = HashMap::new();
    let mut seq = 0u64;
    g.insert(start.to_vec(), 0);
    open.push(OpenEntry {
        f: manhattan(start, goal),
        seq,
        loc: start.to_vec(),
    });
    let mut expanded = 0usize;
    while let Some(OpenEntry { loc, .. }) = open.pop() {
        let g_loc = g[&loc];
        if loc == goal {
            let mut path = vec![loc.clone()];
            let mut cur = loc;
            while let Some(prev) = parent.get(&cur) {
                path.push(prev.clone());
                cur = prev.clone();
            }
            path.reverse();
            return Ok(PathPlan { path, expanded });
        }
        expanded += 1;
        for (_, _, next) in neighbors(spec, &loc) {
            let tentative = g_loc + 1;
            if g.get(&next).map_or(true, |&old| tentative < old) {
                g.insert(next.clone(), tentative);
                parent.insert(next.clone(), loc.clone());
                seq += 1;
                open.push(OpenEntry {
                    f: tentative + manhattan(&next, goal),
                    seq,
                    loc: next,
                });
            }
        }
    }
    Err(SearchError::NoPath)
}

/// Greedy best-first descent: from the current configuration take the first
/// feasible single-axis move that strictly decreases the distance, axis
/// order x,y,z and vehicle order within an axis.
pub fn greedy_plan(spec: &GridSpec) -> Result<PathPlan, SearchError> {
    greedy_between(spec, &spec.joint_start()?, &spec.joint_goal())
}

pub fn greedy_between(
    spec: &GridSpec,
    start: &[i64],
    goal: &[i64],
) -> Result<PathPlan, SearchError> {
    if !spec.joint_location_safe(start)? || !spec.joint_location_safe(goal)? {
        return Err(SearchError::Stuck { at: start.to_vec() });
    }
    let dims = spec.dims;
    let n = spec.num_vehicles();
    let mut cur = start.to_vec();
    let mut path = vec![cur.clone()];
    let mut expanded = 0usize;
    while cur != goal {
        let mut moved = false;
        'search: for axis in 0..dims {
            for v in 0..n {
                let out = v * dims + axis;
                if cur[out] == goal[out] {
                    continue;
                }
                let dir = if goal[out] > cur[out] { 1 } else { -1 };
                let mut next = cur.clone();
                next[out] += dir;
                expanded += 1;
                if spec.joint_location_safe(&next)? {
                    cur = next;
                    path.push(cur.clone());
                    moved = true;
                    break 'search;
                }
            }
        }
        if !moved {
            return Err(SearchError::Stuck { at: cur });
        }
    }
    Ok(PathPlan { path, expanded })
}

/// Control policy along a box path: each box is assigned the unique pruned
/// primitive leading to the next box (all-hold at the terminal box).
#[derive(Debug, Clone)]
pub struct PathPolicy {
    pub path: Vec<Vec<i64>>,
    /// Per box: the primitive tuple to run there and the event toward the
    /// next box (`None` at the terminal box).
    pub steps: HashMap<Vec<i64>, PathStep>,
}

#[derive(Debug, Clone)]
pub struct PathStep {
    pub primitive: Vec<usize>,
    pub sigma: Option<Vec<i8>>,
}

/// Primitive tuple indices for the pruned set, matching the integrator
/// family layout: hold, forward, backward.
const PRIM_HOLD: usize = 0;
const PRIM_FORWARD: usize = 1;
const PRIM_BACKWARD: usize = 2;

/// Mover tuple for a single-axis offset.
pub fn mover_tuple(p: usize, sigma: &[i8]) -> Vec<usize> {
    let mut tuple = vec![PRIM_HOLD; p];
    for (i, &s) in sigma.iter().enumerate() {
        tuple[i] = match s {
            1 => PRIM_FORWARD,
            -1 => PRIM_BACKWARD,
            _ => PRIM_HOLD,
        };
    }
    tuple
}

pub fn path_policy(spec: &GridSpec, plan: &PathPlan) -> PathPolicy {
    let p = spec.p();
    let mut steps = HashMap::new();
    for (k, b) in plan.path.iter().enumerate() {
        if k + 1 < plan.path.len() {
            let next = &plan.path[k + 1];
            let sigma: Vec<i8> = b
                .iter()
                .zip(next)
                .map(|(a, c)| (c - a) as i8)
                .collect();
            steps.insert(
                b.clone(),
                PathStep {
                    primitive: mover_tuple(p, &sigma),
                    sigma: Some(sigma),
                },
            );
        } else {
            steps.insert(
                b.clone(),
                PathStep {
                    primitive: vec![PRIM_HOLD; p],
                    sigma: None,
                },
            );
        }
    }
    PathPolicy {
        path: plan.path.clone(),
        steps,
    }
}
