//! Gridded workspace: per-vehicle boxes, obstacle and goal labeling, and the
//! output transition system (OTS) over joint locations.
//!
//! A joint location concatenates one integer box coordinate block per
//! vehicle. Safety of a joint location combines per-block bounds and
//! obstacle checks with two inter-vehicle constraints: no two vehicles in
//! the same box, and (in 3-D grids) no two vehicles in boxes that differ
//! only in the vertical axis, which models downwash interference.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("grid dims must be between 1 and 3, got {0}")]
    BadDims(usize),
    #[error("axis counts must all be at least 1")]
    BadCounts,
    #[error("box lengths must be positive")]
    BadLengths,
    #[error("{what} {coords:?} is out of bounds")]
    OutOfBounds { what: String, coords: Vec<i64> },
    #[error("goal {0:?} lies on an obstacle")]
    GoalOnObstacle(Vec<i64>),
    #[error("joint {what} configuration is unsafe (collision or downwash)")]
    UnsafeJointConfiguration { what: String },
    #[error("location has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{needed} candidate joint locations exceed the budget of {budget}; use lazy successors")]
    BudgetExceeded { needed: u128, budget: usize },
    #[error("no vehicles in scenario")]
    NoVehicles,
    #[error("vehicle {0} has no start box but the planner requires one")]
    MissingStart(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    /// Start box; optional, required by the deterministic planners.
    pub start: Option<Vec<i64>>,
    pub goal: Vec<i64>,
}

/// Physical grid plus per-vehicle task data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Physical axes per vehicle (1, 2 or 3).
    pub dims: usize,
    /// Boxes per axis.
    pub counts: Vec<usize>,
    /// Box edge lengths per axis.
    pub box_lengths: Vec<f64>,
    /// Physical obstacle boxes.
    pub obstacles: Vec<Vec<i64>>,
    pub vehicles: Vec<VehicleSpec>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), WorkspaceError> {
        if !(1..=3).contains(&self.dims) {
            return Err(WorkspaceError::BadDims(self.dims));
        }
        if self.counts.len() != self.dims || self.counts.iter().any(|&c| c == 0) {
            return Err(WorkspaceError::BadCounts);
        }
        if self.box_lengths.len() != self.dims || self.box_lengths.iter().any(|&d| !(d > 0.0)) {
            return Err(WorkspaceError::BadLengths);
        }
        if self.vehicles.is_empty() {
            return Err(WorkspaceError::NoVehicles);
        }
        for o in &self.obstacles {
            if !self.block_in_bounds(o) {
                return Err(WorkspaceError::OutOfBounds {
                    what: "obstacle".into(),
                    coords: o.clone(),
                });
            }
        }
        let mut joint_goal = Vec::new();
        for (v, veh) in self.vehicles.iter().enumerate() {
            if !self.block_in_bounds(&veh.goal) {
                return Err(WorkspaceError::OutOfBounds {
                    what: format!("goal of vehicle {v}"),
                    coords: veh.goal.clone(),
                });
            }
            if self.is_obstacle(&veh.goal) {
                return Err(WorkspaceError::GoalOnObstacle(veh.goal.clone()));
            }
            joint_goal.extend_from_slice(&veh.goal);
            if let Some(start) = &veh.start {
                if !self.block_in_bounds(start) {
                    return Err(WorkspaceError::OutOfBounds {
                        what: format!("start of vehicle {v}"),
                        coords: start.clone(),
                    });
                }
            }
        }
        if !self.joint_location_safe(&joint_goal)? {
            return Err(WorkspaceError::UnsafeJointConfiguration {
                what: "goal".into(),
            });
        }
        if self.vehicles.iter().all(|v| v.start.is_some()) {
            let joint_start: Vec<i64> = self
                .vehicles
                .iter()
                .flat_map(|v| v.start.clone().unwrap())
                .collect();
            if !self.joint_location_safe(&joint_start)? {
                return Err(WorkspaceError::UnsafeJointConfiguration {
                    what: "start".into(),
                });
            }
        }
        Ok(())
    }

    pub fn num_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    /// Joint output dimension `p = dims · N`.
    pub fn p(&self) -> usize {
        self.dims * self.vehicles.len()
    }

    pub fn block_in_bounds(&self, block: &[i64]) -> bool {
        block.len() == self.dims
            && block
                .iter()
                .zip(&self.counts)
                .all(|(&c, &n)| c >= 0 && (c as usize) < n)
    }

    pub fn is_obstacle(&self, block: &[i64]) -> bool {
        self.obstacles.iter().any(|o| o == block)
    }

    /// Safety of a joint location: every block in bounds and off obstacles,
    /// all blocks distinct, and no two blocks stacked vertically (3-D only).
    pub fn joint_location_safe(&self, l: &[i64]) -> Result<bool, WorkspaceError> {
        let p = self.p();
        if l.len() != p {
            return Err(WorkspaceError::DimensionMismatch {
                expected: p,
                got: l.len(),
            });
        }
        let n = self.vehicles.len();
        for v in 0..n {
            let block = &l[v * self.dims..(v + 1) * self.dims];
            if !self.block_in_bounds(block) || self.is_obstacle(block) {
                return Ok(false);
            }
        }
        for a in 0..n {
            for b in (a + 1)..n {
                let ba = &l[a * self.dims..(a + 1) * self.dims];
                let bb = &l[b * self.dims..(b + 1) * self.dims];
                if ba == bb {
                    return Ok(false);
                }
                if self.dims == 3 && ba[0] == bb[0] && ba[1] == bb[1] {
                    // Same (x, y), different z: downwash.
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn joint_start(&self) -> Result<Vec<i64>, WorkspaceError> {
        let mut l = Vec::with_capacity(self.p());
        for (v, veh) in self.vehicles.iter().enumerate() {
            let s = veh.start.as_ref().ok_or(WorkspaceError::MissingStart(v))?;
            l.extend_from_slice(s);
        }
        Ok(l)
    }

    pub fn joint_goal(&self) -> Vec<i64> {
        self.vehicles.iter().flat_map(|v| v.goal.clone()).collect()
    }

    /// Box lengths of the joint output space (vehicle-repeated).
    pub fn joint_box_lengths(&self) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.p());
        for _ in 0..self.vehicles.len() {
            d.extend_from_slice(&self.box_lengths);
        }
        d
    }

    /// Number of obstacle-free physical boxes.
    pub fn safe_box_count(&self) -> usize {
        let total: usize = self.counts.iter().product();
        total - self.obstacles.len()
    }
}

/// Lazy OTS successor: `l + σ` when that joint location is safe.
pub fn ots_successor(spec: &GridSpec, l: &[i64], sigma: &[i8]) -> Option<Vec<i64>> {
    if sigma.iter().all(|&s| s == 0) {
        return None;
    }
    let next: Vec<i64> = l.iter().zip(sigma).map(|(&c, &s)| c + s as i64).collect();
    match spec.joint_location_safe(&next) {
        Ok(true) => Some(next),
        _ => None,
    }
}

/// Explicit output transition system over the safe joint locations.
#[derive(Debug, Clone)]
pub struct Ots {
    pub spec: GridSpec,
    /// Safe joint locations in lexicographic order.
    pub locations: Vec<Vec<i64>>,
    index: HashMap<Vec<i64>, u32>,
    /// Index of the joint goal location, when it is safe.
    pub goal: Option<u32>,
    /// Dense lookup over a one-box-padded coordinate grid: offset arithmetic
    /// can step outside the grid without wrapping onto another cell.
    dense: Vec<u32>,
    /// Per-output strides into the padded grid.
    weights: Vec<i64>,
    /// Padded dense key per safe location.
    keys: Vec<i64>,
}

impl Ots {
    /// Largest padded table the dense path may allocate; beyond this the
    /// hash fallback handles successor queries.
    const DENSE_CAP: i64 = 200_000_000;

    fn build_dense(&mut self) {
        let p = self.spec.p();
        let mut weights = vec![0i64; p];
        let mut stride = 1i64;
        for i in (0..p).rev() {
            weights[i] = stride;
            let axis = i % self.spec.dims;
            stride = stride.saturating_mul(self.spec.counts[axis] as i64 + 2);
            if stride > Self::DENSE_CAP {
                return;
            }
        }
        let total = stride as usize;
        let mut dense = vec![u32::MAX; total];
        let key_of = |coords: &[i64]| -> i64 {
            coords
                .iter()
                .zip(&weights)
                .map(|(&c, &w)| (c + 1) * w)
                .sum()
        };
        let mut keys = Vec::with_capacity(self.locations.len());
        for (idx, l) in self.locations.iter().enumerate() {
            let k = key_of(l);
            dense[k as usize] = idx as u32;
            keys.push(k);
        }
        self.dense = dense;
        self.weights = weights;
        self.keys = keys;
    }

    pub fn weights(&self) -> &[i64] {
        &self.weights
    }

    pub fn key_of(&self, idx: u32) -> i64 {
        self.keys[idx as usize]
    }

    /// Location index at a padded dense key, if safe.
    pub fn at_key(&self, key: i64) -> Option<u32> {
        if key < 0 || key as usize >= self.dense.len() {
            return None;
        }
        let v = self.dense[key as usize];
        (v != u32::MAX).then_some(v)
    }
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn index_of(&self, l: &[i64]) -> Option<u32> {
        self.index.get(l).copied()
    }

    pub fn location(&self, idx: u32) -> &[i64] {
        &self.locations[idx as usize]
    }

    /// Deterministic successor under an offset label.
    pub fn successor(&self, idx: u32, sigma: &[i8]) -> Option<u32> {
        if sigma.iter().all(|&s| s == 0) {
            return None;
        }
        if self.dense.is_empty() {
            let next = ots_successor(&self.spec, self.location(idx), sigma)?;
            return self.index_of(&next);
        }
        let delta: i64 = sigma
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| s as i64 * w)
            .sum();
        self.at_key(self.keys[idx as usize] + delta)
    }

    /// Whether dense key arithmetic is available for fast successor paths.
    pub fn has_dense(&self) -> bool {
        !self.dense.is_empty()
    }

    /// All edges `(l, σ, l')`; quadratic in the grid, for tests and dumps.
    pub fn edges(&self) -> Vec<(u32, Vec<i8>, u32)> {
        let p = self.spec.p();
        let n_offsets: u64 = 3u64.pow(p as u32);
        let mut out = Vec::new();
        for idx in 0..self.locations.len() as u32 {
            for code in 0..n_offsets {
                let sigma = decode_offset(code, p);
                if sigma.iter().all(|&s| s == 0) {
                    continue;
                }
                if let Some(next) = self.successor(idx, &sigma) {
                    out.push((idx, sigma, next));
                }
            }
        }
        out
    }
}

/// Base-3 encoding of an offset vector (component values shifted to 0..2).
pub fn encode_offset(sigma: &[i8]) -> u64 {
    let mut code = 0u64;
    for &s in sigma.iter().rev() {
        code = code * 3 + (s + 1) as u64;
    }
    code
}

pub fn decode_offset(mut code: u64, p: usize) -> Vec<i8> {
    let mut sigma = Vec::with_capacity(p);
    for _ in 0..p {
        sigma.push((code % 3) as i8 - 1);
        code /= 3;
    }
    sigma
}

/// Enumerate every safe joint location. The candidate count
/// `(safe boxes)^N` is checked against `budget` before any allocation.
pub fn enumerate_ots(spec: &GridSpec, budget: usize) -> Result<Ots, WorkspaceError> {
    spec.validate()?;
    let n = spec.vehicles.len();
    let safe = spec.safe_box_count() as u128;
    let candidates = safe.checked_pow(n as u32).unwrap_or(u128::MAX);
    if candidates > budget as u128 {
        return Err(WorkspaceError::BudgetExceeded {
            needed: candidates,
            budget,
        });
    }

    // Safe physical boxes in lexicographic order.
    let mut boxes: Vec<Vec<i64>> = Vec::new();
    let mut cursor = vec![0i64; spec.dims];
    loop {
        if !spec.is_obstacle(&cursor) {
            boxes.push(cursor.clone());
        }
        let mut axis = spec.dims;
        while axis > 0 {
            axis -= 1;
            cursor[axis] += 1;
            if (cursor[axis] as usize) < spec.counts[axis] {
                break;
            }
            cursor[axis] = 0;
            if axis == 0 {
                axis = usize::MAX;
                break;
            }
        }
        if axis == usize::MAX {
            break;
        }
    }

    let mut locations = Vec::new();
    let mut pick = vec![0usize; n];
    'outer: loop {
        let mut joint = Vec::with_capacity(spec.p());
        for v in 0..n {
            joint.extend_from_slice(&boxes[pick[v]]);
        }
        if spec.joint_location_safe(&joint)? {
            locations.push(joint);
        }
        let mut v = n;
        loop {
            if v == 0 {
                break 'outer;
            }
            v -= 1;
            pick[v] += 1;
            if pick[v] < boxes.len() {
                break;
            }
            pick[v] = 0;
        }
    }
    locations.sort();
    let index: HashMap<Vec<i64>, u32> = locations
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i as u32))
        .collect();
    let goal = index.get(&spec.joint_goal()).copied();
    let mut ots = Ots {
        spec: spec.clone(),
        locations,
        index,
        goal,
        dense: Vec::new(),
        weights: Vec::new(),
        keys: Vec::new(),
    };
    ots.build_dense();
    Ok(ots)
}
