//! Synchronous product of the OTS and the discrete part of a maneuver
//! automaton.
//!
//! A product state pairs a joint grid location with a composite primitive.
//! The state is valid when every event the primitive can emit has an OTS
//! successor, so a run can never request a motion the grid forbids. The
//! explicit product uses dense integer indexing (location-major, primitive
//! minor) with a compact rank map for value arrays; successor and
//! predecessor edges are recomputed from the factored automaton on demand
//! rather than materialized.

use crate::ma::{MaError, ManeuverAutomaton};
use crate::workspace::{decode_offset, encode_offset, Ots, WorkspaceError};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PaError {
    #[error("{candidates} candidate product states exceed the hard cap {cap}")]
    CandidateCap { candidates: u128, cap: u128 },
    #[error("{states} product states exceed the state budget {budget}; use the deterministic astar planner, which explores lazily")]
    BudgetExceeded { states: usize, budget: usize },
    #[error("grid output dimension {grid_p} does not match automaton output dimension {ma_p}")]
    OutputMismatch { grid_p: usize, ma_p: usize },
    #[error("goal location {0:?} is not a safe grid location")]
    BadGoal(Vec<i64>),
    #[error("label {0} is not an event of this state")]
    NotAnEvent(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Ma(#[from] MaError),
}

/// A location/primitive pair, by index into the OTS and the primitive
/// enumeration of the automaton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProductState {
    pub location: u32,
    pub primitive: u32,
}

/// Which primitives may sit on a goal location in the final set: holding
/// primitives (no events) for plain reach-avoid, moving primitives (some
/// event) for the intermediate stages of a reach-avoid sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalRule {
    HoldOnly,
    MovingOnly,
}

/// Graph view of a product automaton for the policy generators. Labels are
/// base-3 encoded offset vectors; successor lists are sorted by primitive
/// index so argmin ties resolve to the lowest index.
pub trait PaGraph {
    fn num_states(&self) -> usize;
    fn final_states(&self) -> &[u32];
    fn is_final(&self, q: u32) -> bool;
    /// Sorted event labels with at least one valid successor.
    fn labels(&self, q: u32) -> Vec<u64>;
    fn successors(&self, q: u32, sigma: u64) -> Vec<u32>;
    fn for_each_predecessor(&self, q: u32, f: &mut dyn FnMut(u32, u64));
    fn edge_cost(&self, q: u32, sigma: u64) -> f64;
    fn terminal_cost(&self, q: u32) -> f64;
    /// Offset vector of an encoded label (for reports and policy files).
    fn label_vec(&self, sigma: u64) -> Vec<i8>;
}

/// Edge costs per label plus a terminal cost, shared by the planners.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub edge_default: f64,
    pub per_label: HashMap<Vec<i8>, f64>,
    pub terminal: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            edge_default: 1.0,
            per_label: HashMap::new(),
            terminal: 0.0,
        }
    }
}

impl CostModel {
    pub fn edge(&self, sigma: &[i8]) -> f64 {
        self.per_label
            .get(sigma)
            .copied()
            .unwrap_or(self.edge_default)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.edge_default > 0.0) {
            return Err("edge cost must be positive".into());
        }
        for (l, &c) in &self.per_label {
            if !(c > 0.0) {
                return Err(format!("cost of label {l:?} must be positive"));
            }
        }
        Ok(())
    }
}

/// Validity of a location/primitive pair: every possible event has an OTS
/// successor.
pub fn pa_state_valid(
    ots: &Ots,
    ma: &ManeuverAutomaton,
    location: u32,
    tuple: &[usize],
) -> Result<bool, PaError> {
    for sigma in ma.sigma_ma(tuple)? {
        if ots.successor(location, &sigma.0).is_none() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Precomputed pieces of one component's local label code: its weighted
/// contribution to the composite code, the weighted contribution of the
/// negated label, and the dense-key displacement of the offset.
#[derive(Clone, Copy)]
struct LocalInfo {
    sigma_contrib: u64,
    neg_contrib: u64,
    key_delta: i64,
    is_eps: bool,
}

/// Per-component move tables used for fast product edge recomputation.
struct ComponentTables {
    /// Output offset of the component inside the composite label.
    out_offset: usize,
    p: usize,
    /// Weight of this component's primitive index in the mixed radix.
    prim_weight: usize,
    /// `(local label code, targets)` per primitive, ε first.
    moves: Vec<Vec<(u64, Vec<usize>)>>,
    /// `(local label code, predecessors)` per primitive, ε (switch) first.
    preds: Vec<Vec<(u64, Vec<usize>)>>,
    /// Indexed by local label code.
    info: Vec<LocalInfo>,
}

/// Explicit product automaton.
pub struct ExplicitPa {
    pub ots: Ots,
    pub ma: ManeuverAutomaton,
    pub cost: CostModel,
    n_prims: usize,
    /// Σ_MA per primitive, encoded and sorted.
    prim_sigma: Vec<Vec<u64>>,
    tables: Vec<ComponentTables>,
    /// Dense (location-major) index -> compact rank, u32::MAX when invalid.
    compact: Vec<u32>,
    /// Compact rank -> state.
    states: Vec<ProductState>,
    finals: Vec<u32>,
    final_mask: Vec<bool>,
    p: usize,
    /// Safe-offset bitset: bit (location · 3^p + code) is set when the
    /// location has an OTS successor under that offset.
    safe_bits: Vec<u64>,
    n_offsets: usize,
}

/// Hard cap on candidate (location × primitive) pairs scanned during the
/// explicit build.
const CANDIDATE_CAP: u128 = 200_000_000;

impl ExplicitPa {
    /// Build the explicit product automaton: filter valid states and set the
    /// final set to the goal location with [`GoalRule::HoldOnly`].
    pub fn build(
        ots: Ots,
        ma: ManeuverAutomaton,
        budget: usize,
    ) -> Result<Self, PaError> {
        let grid_p = ots.spec.p();
        if grid_p != ma.p() {
            return Err(PaError::OutputMismatch {
                grid_p,
                ma_p: ma.p(),
            });
        }
        let n_prims = ma.num_primitives();
        let candidates = ots.len() as u128 * n_prims as u128;
        if candidates > CANDIDATE_CAP || !ots.has_dense() {
            return Err(PaError::CandidateCap {
                candidates,
                cap: CANDIDATE_CAP,
            });
        }

        // Per-primitive encoded event sets.
        let mut prim_sigma = Vec::with_capacity(n_prims);
        for m_idx in 0..n_prims {
            let tuple = ma.primitive_tuple(m_idx);
            let mut codes: Vec<u64> = ma
                .sigma_ma(&tuple)?
                .iter()
                .map(|s| encode_offset(&s.0))
                .collect();
            codes.sort_unstable();
            prim_sigma.push(codes);
        }

        // Per-location safe-offset bitset drives the validity filter and
        // the edge recomputation later on.
        let p = grid_p;
        let n_offsets = 3usize.pow(p as u32);
        let words = n_offsets.div_ceil(64);
        let mut safe_bits = vec![0u64; ots.len() * words];
        {
            let mut sigma = vec![0i8; p];
            for l_idx in 0..ots.len() as u32 {
                let row = l_idx as usize * words;
                for code in 0..n_offsets {
                    let mut c = code as u64;
                    let mut eps = true;
                    for s in sigma.iter_mut() {
                        *s = (c % 3) as i8 - 1;
                        eps &= *s == 0;
                        c /= 3;
                    }
                    if !eps && ots.successor(l_idx, &sigma).is_some() {
                        safe_bits[row + code / 64] |= 1u64 << (code % 64);
                    }
                }
            }
        }
        let bit = |bits: &[u64], l: usize, code: u64| -> bool {
            let i = l * words + (code as usize) / 64;
            bits[i] >> (code % 64) & 1 == 1
        };

        let mut compact = vec![u32::MAX; ots.len() * n_prims];
        let mut states = Vec::new();
        for l_idx in 0..ots.len() {
            for (m_idx, sigmas) in prim_sigma.iter().enumerate() {
                if sigmas.iter().all(|&c| bit(&safe_bits, l_idx, c)) {
                    let dense = l_idx * n_prims + m_idx;
                    if states.len() >= budget {
                        return Err(PaError::BudgetExceeded {
                            states: states.len() + 1,
                            budget,
                        });
                    }
                    compact[dense] = states.len() as u32;
                    states.push(ProductState {
                        location: l_idx as u32,
                        primitive: m_idx as u32,
                    });
                }
            }
        }

        let tables = build_tables(&ma, &ots);
        let mut pa = Self {
            ots,
            ma,
            cost: CostModel::default(),
            n_prims,
            prim_sigma,
            tables,
            compact,
            states,
            finals: Vec::new(),
            final_mask: Vec::new(),
            p,
            safe_bits,
            n_offsets,
        };
        let goal = pa.ots.spec.joint_goal();
        pa.set_final(&goal, GoalRule::HoldOnly)?;
        Ok(pa)
    }

    #[inline]
    fn safe_offset(&self, location: u32, code: u64) -> bool {
        let words = self.n_offsets.div_ceil(64);
        let i = location as usize * words + (code as usize) / 64;
        self.safe_bits[i] >> (code % 64) & 1 == 1
    }

    /// Point the final set at a (joint) goal location. States there qualify
    /// when their primitive matches the rule.
    pub fn set_final(&mut self, goal: &[i64], rule: GoalRule) -> Result<(), PaError> {
        let l_idx = self
            .ots
            .index_of(goal)
            .ok_or_else(|| PaError::BadGoal(goal.to_vec()))?;
        let mut finals = Vec::new();
        for m_idx in 0..self.n_prims {
            let hold = self.prim_sigma[m_idx].is_empty();
            let wanted = match rule {
                GoalRule::HoldOnly => hold,
                GoalRule::MovingOnly => !hold,
            };
            if !wanted {
                continue;
            }
            let dense = l_idx as usize * self.n_prims + m_idx;
            if self.compact[dense] != u32::MAX {
                finals.push(self.compact[dense]);
            }
        }
        finals.sort_unstable();
        let mut mask = vec![false; self.states.len()];
        for &q in &finals {
            mask[q as usize] = true;
        }
        self.finals = finals;
        self.final_mask = mask;
        Ok(())
    }

    pub fn with_cost(mut self, cost: CostModel) -> Self {
        self.cost = cost;
        self
    }

    pub fn num_valid(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, q: u32) -> ProductState {
        self.states[q as usize]
    }

    pub fn state_index(&self, location: u32, primitive: u32) -> Option<u32> {
        let dense = location as usize * self.n_prims + primitive as usize;
        match self.compact.get(dense) {
            Some(&c) if c != u32::MAX => Some(c),
            _ => None,
        }
    }

    /// Upper bound `(Π counts)^N · 3^p` on the number of product states.
    pub fn size_bound(&self) -> u128 {
        let boxes: u128 = self
            .ots
            .spec
            .counts
            .iter()
            .map(|&c| c as u128)
            .product();
        let per_vehicle = boxes.pow(self.ots.spec.num_vehicles() as u32);
        per_vehicle * (self.n_prims as u128)
    }

    pub fn size_bound_ok(&self) -> bool {
        (self.num_valid() as u128) < self.size_bound()
    }

    /// Total number of labeled product edges (full sweep; linear in the
    /// edge count).
    pub fn count_edges(&self) -> u64 {
        let mut total = 0u64;
        for q in 0..self.states.len() as u32 {
            for sigma in self.labels(q) {
                total += self.successors(q, sigma).len() as u64;
            }
        }
        total
    }

    /// Admissible next primitives for one event.
    pub fn admissible_primitives(&self, q: u32, sigma: u64) -> Result<Vec<u32>, PaError> {
        if !self.labels(q).contains(&sigma) {
            let v = self.label_vec(sigma);
            return Err(PaError::NotAnEvent(format!("{v:?}")));
        }
        Ok(self
            .successors(q, sigma)
            .iter()
            .map(|&q2| self.states[q2 as usize].primitive)
            .collect())
    }

    /// All admissible control assignments at `q`: the cartesian product of
    /// the per-event admissible primitive sets. Terminal states yield one
    /// empty assignment.
    pub fn admissible_assignments(&self, q: u32) -> Result<Vec<Vec<u32>>, PaError> {
        let labels = self.labels(q);
        let mut out: Vec<Vec<u32>> = vec![Vec::new()];
        for &sigma in &labels {
            let options = self.admissible_primitives(q, sigma)?;
            let mut next = Vec::with_capacity(out.len() * options.len());
            for prefix in &out {
                for &m in &options {
                    let mut v = prefix.clone();
                    v.push(m);
                    next.push(v);
                }
            }
            out = next;
        }
        Ok(out)
    }

    fn compact_of(&self, location: u32, primitive: usize) -> Option<u32> {
        let dense = location as usize * self.n_prims + primitive;
        let c = self.compact[dense];
        (c != u32::MAX).then_some(c)
    }
}

fn build_tables(ma: &ManeuverAutomaton, ots: &Ots) -> Vec<ComponentTables> {
    let mut tables = Vec::with_capacity(ma.components.len());
    let mut out_offset = 0;
    // Mixed-radix weights of the primitive index (component 0 most
    // significant).
    let mut prim_weights = vec![1usize; ma.components.len()];
    for j in (0..ma.components.len().saturating_sub(1)).rev() {
        prim_weights[j] = prim_weights[j + 1] * ma.components[j + 1].primitives.len();
    }
    for (j, c) in ma.components.iter().enumerate() {
        let n_prims = c.primitives.len();
        let eps_code = encode_offset(&vec![0i8; c.p]);
        let mut moves: Vec<Vec<(u64, Vec<usize>)>> = Vec::with_capacity(n_prims);
        for m in 0..n_prims {
            let mut opts = vec![(eps_code, ma.eps_targets[j][m].clone())];
            for sigma in c.sigma(m).expect("primitive exists") {
                opts.push((encode_offset(&sigma.0), c.targets(m, &sigma)));
            }
            moves.push(opts);
        }
        // Invert for predecessor iteration.
        let mut preds: Vec<HashMap<u64, Vec<usize>>> = vec![HashMap::new(); n_prims];
        for (m, opts) in moves.iter().enumerate() {
            for (code, targets) in opts {
                for &t in targets {
                    preds[t].entry(*code).or_default().push(m);
                }
            }
        }
        let preds = preds
            .into_iter()
            .map(|map| {
                let mut v: Vec<(u64, Vec<usize>)> = map.into_iter().collect();
                v.sort_unstable_by_key(|(code, _)| *code);
                for (_, sources) in v.iter_mut() {
                    sources.sort_unstable();
                }
                v
            })
            .collect();
        // Weighted code contributions and dense-key displacements per local
        // label code.
        let local_count = 3usize.pow(c.p as u32);
        let weight = 3u64.pow(out_offset as u32);
        let full = local_count as u64 - 1;
        let mut info = Vec::with_capacity(local_count);
        for local in 0..local_count as u64 {
            let mut key_delta = 0i64;
            let mut rem = local;
            let mut is_eps = true;
            for i in 0..c.p {
                let digit = (rem % 3) as i64 - 1;
                rem /= 3;
                is_eps &= digit == 0;
                key_delta += digit * ots.weights().get(out_offset + i).copied().unwrap_or(0);
            }
            info.push(LocalInfo {
                sigma_contrib: local * weight,
                neg_contrib: (full - local) * weight,
                key_delta,
                is_eps,
            });
        }
        tables.push(ComponentTables {
            out_offset,
            p: c.p,
            prim_weight: prim_weights[j],
            moves,
            preds,
            info,
        });
        out_offset += c.p;
    }
    tables
}

impl ExplicitPa {
    /// Per-component target lists of `(m, σ)`, or `None` when some
    /// component has no move under its label part.
    fn target_lists(&self, tuple: &[usize], sigma: u64) -> Option<Vec<&[usize]>> {
        let mut per_component: Vec<&[usize]> = Vec::with_capacity(self.tables.len());
        for (j, table) in self.tables.iter().enumerate() {
            let local = local_code(sigma, table.out_offset, table.p);
            match table.moves[tuple[j]].iter().find(|(c, _)| *c == local) {
                Some((_, targets)) if !targets.is_empty() => per_component.push(targets),
                _ => return None,
            }
        }
        Some(per_component)
    }

    /// Location index reached from `location` under an encoded offset.
    #[inline]
    fn location_after(&self, location: u32, sigma: u64) -> Option<u32> {
        if !self.safe_offset(location, sigma) {
            return None;
        }
        let mut delta = 0i64;
        for table in &self.tables {
            let local = local_code(sigma, table.out_offset, table.p);
            delta += table.info[local as usize].key_delta;
        }
        self.ots.at_key(self.ots.key_of(location) + delta)
    }

    /// Whether `(l2, (m, σ))` has at least one valid successor state.
    fn has_valid_successor(&self, l2: u32, tuple: &[usize], sigma: u64) -> bool {
        let Some(per_component) = self.target_lists(tuple, sigma) else {
            return false;
        };
        let mut pick = vec![0usize; per_component.len()];
        loop {
            let mut m_idx = 0usize;
            for (j, t) in self.tables.iter().enumerate() {
                m_idx += t.prim_weight * per_component[j][pick[j]];
            }
            if self.compact_of(l2, m_idx).is_some() {
                return true;
            }
            let mut j = per_component.len();
            loop {
                if j == 0 {
                    return false;
                }
                j -= 1;
                pick[j] += 1;
                if pick[j] < per_component[j].len() {
                    break;
                }
                pick[j] = 0;
            }
        }
    }
}

impl PaGraph for ExplicitPa {
    fn num_states(&self) -> usize {
        self.states.len()
    }

    fn final_states(&self) -> &[u32] {
        &self.finals
    }

    fn is_final(&self, q: u32) -> bool {
        self.final_mask[q as usize]
    }

    fn labels(&self, q: u32) -> Vec<u64> {
        let st = self.states[q as usize];
        let tuple = self.ma.primitive_tuple(st.primitive as usize);
        self.prim_sigma[st.primitive as usize]
            .iter()
            .copied()
            .filter(|&code| match self.location_after(st.location, code) {
                Some(l2) => self.has_valid_successor(l2, &tuple, code),
                None => false,
            })
            .collect()
    }

    fn successors(&self, q: u32, sigma: u64) -> Vec<u32> {
        let st = self.states[q as usize];
        let Some(l2) = self.location_after(st.location, sigma) else {
            return Vec::new();
        };
        let tuple = self.ma.primitive_tuple(st.primitive as usize);
        let Some(per_component) = self.target_lists(&tuple, sigma) else {
            return Vec::new();
        };
        // Component-major odometer yields ascending primitive indices.
        let mut out = Vec::new();
        let mut pick = vec![0usize; per_component.len()];
        'outer: loop {
            let mut m_idx = 0usize;
            for (j, t) in self.tables.iter().enumerate() {
                m_idx += t.prim_weight * per_component[j][pick[j]];
            }
            if let Some(c) = self.compact_of(l2, m_idx) {
                out.push(c);
            }
            let mut j = per_component.len();
            loop {
                if j == 0 {
                    break 'outer;
                }
                j -= 1;
                pick[j] += 1;
                if pick[j] < per_component[j].len() {
                    break;
                }
                pick[j] = 0;
            }
        }
        out
    }

    fn for_each_predecessor(&self, q: u32, f: &mut dyn FnMut(u32, u64)) {
        let st = self.states[q as usize];
        let tuple = self.ma.primitive_tuple(st.primitive as usize);
        let l2_key = self.ots.key_of(st.location);
        // Product of per-component (label, sources) options; skip all-ε.
        let options: Vec<&[(u64, Vec<usize>)]> = self
            .tables
            .iter()
            .enumerate()
            .map(|(j, t)| t.preds[tuple[j]].as_slice())
            .collect();
        if options.iter().any(|o| o.is_empty()) {
            return;
        }
        let k = options.len();
        let mut pick = vec![0usize; k];
        let mut sources: Vec<&[usize]> = vec![&[]; k];
        let mut spick = vec![0usize; k];
        'outer: loop {
            let mut sigma_code = 0u64;
            let mut neg_code = 0u64;
            let mut key_delta = 0i64;
            let mut all_eps = true;
            for (j, t) in self.tables.iter().enumerate() {
                let (local, _) = &options[j][pick[j]];
                let info = t.info[*local as usize];
                all_eps &= info.is_eps;
                sigma_code += info.sigma_contrib;
                neg_code += info.neg_contrib;
                key_delta += info.key_delta;
            }
            // The predecessor location l = l2 − σ exists exactly when the
            // negated offset is safe from l2.
            if !all_eps && self.safe_offset(st.location, neg_code) {
                if let Some(l_idx) = self.ots.at_key(l2_key - key_delta) {
                    for j in 0..k {
                        sources[j] = options[j][pick[j]].1.as_slice();
                        spick[j] = 0;
                    }
                    'sources: loop {
                        let mut m_idx = 0usize;
                        for (j, t) in self.tables.iter().enumerate() {
                            m_idx += t.prim_weight * sources[j][spick[j]];
                        }
                        if let Some(cq) = self.compact_of(l_idx, m_idx) {
                            f(cq, sigma_code);
                        }
                        let mut j = k;
                        loop {
                            if j == 0 {
                                break 'sources;
                            }
                            j -= 1;
                            spick[j] += 1;
                            if spick[j] < sources[j].len() {
                                break;
                            }
                            spick[j] = 0;
                        }
                    }
                }
            }
            let mut j = k;
            loop {
                if j == 0 {
                    break 'outer;
                }
                j -= 1;
                pick[j] += 1;
                if pick[j] < options[j].len() {
                    break;
                }
                pick[j] = 0;
            }
        }
    }

    fn edge_cost(&self, _q: u32, sigma: u64) -> f64 {
        if self.cost.per_label.is_empty() {
            return self.cost.edge_default;
        }
        self.cost.edge(&decode_offset(sigma, self.p))
    }

    fn terminal_cost(&self, _q: u32) -> f64 {
        self.cost.terminal
    }

    fn label_vec(&self, sigma: u64) -> Vec<i8> {
        decode_offset(sigma, self.p)
    }
}

/// Digits `[offset, offset+p)` of a base-3 code.
fn local_code(code: u64, offset: usize, p: usize) -> u64 {
    (code / 3u64.pow(offset as u32)) % 3u64.pow(p as u32)
}

/// Successor product states under one event (they all share one location by
/// OTS determinism).
pub fn pa_successors(pa: &ExplicitPa, q: u32, sigma: u64) -> Vec<ProductState> {
    pa.successors(q, sigma)
        .into_iter()
        .map(|c| pa.state(c))
        .collect()
}

/// Convenience wrapper: build the OTS and the explicit PA with a reporting
/// summary.
pub struct PaStats {
    pub states: usize,
    pub edges: Option<u64>,
    pub size_bound: u128,
}

pub fn enumerate_pa(
    ots: Ots,
    ma: ManeuverAutomaton,
    budget: usize,
    count_edges: bool,
) -> Result<(ExplicitPa, PaStats), PaError> {
    let pa = ExplicitPa::build(ots, ma, budget)?;
    let stats = PaStats {
        states: pa.num_valid(),
        edges: count_edges.then(|| pa.count_edges()),
        size_bound: pa.size_bound(),
    };
    Ok((pa, stats))
}
