//! Shared test support: random product automata with independent
//! brute-force oracles for the value recursion, and the worked three-box
//! example with its hand-assigned policy.

use boxmotion::geometry::PolytopicSet;
use boxmotion::ma::double_integrator::build_double_integrator_ma;
use boxmotion::ma::{Label, MaEdge, ManeuverAutomaton};
use boxmotion::product::{ExplicitPa, GoalRule, PaGraph};
use boxmotion::workspace::{enumerate_ots, GridSpec, VehicleSpec};
use rand::Rng;
use std::collections::HashMap;

// ---------------------------------------------------------------------
// Random product automata
// ---------------------------------------------------------------------

/// A randomly generated product automaton honoring the structural rules:
/// deterministic location layer, per-primitive event sets, validity filter.
pub struct RandomPa {
    pub n_loc: usize,
    pub n_prims: usize,
    pub n_labels: usize,
    /// ots_succ[l][σ]
    pub ots_succ: Vec<Vec<Option<u32>>>,
    /// ma_targets[m][σ] -> next primitives (empty = no edge)
    pub ma_targets: Vec<Vec<Vec<u32>>>,
    pub states: Vec<(u32, u32)>,
    pub compact: HashMap<(u32, u32), u32>,
    pub finals: Vec<u32>,
    pub final_mask: Vec<bool>,
    /// Integer-valued edge cost per label (exact f64 arithmetic).
    pub label_cost: Vec<f64>,
    pub terminal: f64,
    pub preds: Vec<Vec<(u32, u64)>>,
}

impl RandomPa {
    pub fn generate(rng: &mut impl Rng, max_states: usize, policy_cap: u128) -> Self {
        loop {
            let n_loc = rng.gen_range(2..=(max_states / 2).clamp(2, 60));
            let n_prims = rng.gen_range(2..=6usize);
            let n_labels = rng.gen_range(1..=4usize);
            let mut ots_succ = vec![vec![None; n_labels]; n_loc];
            for l in 0..n_loc {
                for s in 0..n_labels {
                    if rng.gen_bool(0.7) {
                        ots_succ[l][s] = Some(rng.gen_range(0..n_loc) as u32);
                    }
                }
            }
            let mut ma_targets = vec![vec![Vec::new(); n_labels]; n_prims];
            for targets in ma_targets.iter_mut() {
                for t in targets.iter_mut() {
                    if rng.gen_bool(0.55) {
                        let k = rng.gen_range(1..=3usize);
                        let mut opts: Vec<u32> = (0..n_prims as u32).collect();
                        for _ in 0..(n_prims - k.min(n_prims)) {
                            let i = rng.gen_range(0..opts.len());
                            opts.remove(i);
                        }
                        opts.sort_unstable();
                        *t = opts;
                    }
                }
            }
            let mut pa = Self::assemble(n_loc, n_prims, n_labels, ots_succ, ma_targets, rng);
            if pa.states.is_empty() || pa.states.len() > max_states {
                continue;
            }
            pa.prune_to_policy_cap(rng, policy_cap);
            if pa.finals.is_empty() {
                continue;
            }
            pa.rebuild_preds();
            return pa;
        }
    }

    fn assemble(
        n_loc: usize,
        n_prims: usize,
        n_labels: usize,
        ots_succ: Vec<Vec<Option<u32>>>,
        ma_targets: Vec<Vec<Vec<u32>>>,
        rng: &mut impl Rng,
    ) -> Self {
        // Validity: every event of the primitive must have an OTS successor.
        let mut states = Vec::new();
        let mut compact = HashMap::new();
        for l in 0..n_loc as u32 {
            for m in 0..n_prims as u32 {
                let ok = (0..n_labels).all(|s| {
                    ma_targets[m as usize][s].is_empty() || ots_succ[l as usize][s].is_some()
                });
                if ok {
                    compact.insert((l, m), states.len() as u32);
                    states.push((l, m));
                }
            }
        }
        let mut finals = Vec::new();
        let mut final_mask = vec![false; states.len()];
        for q in 0..states.len() as u32 {
            if rng.gen_bool(0.15) {
                finals.push(q);
                final_mask[q as usize] = true;
            }
        }
        if finals.is_empty() && !states.is_empty() {
            let q = rng.gen_range(0..states.len()) as u32;
            finals.push(q);
            final_mask[q as usize] = true;
        }
        finals.sort_unstable();
        let label_cost = (0..n_labels)
            .map(|_| rng.gen_range(1..=3) as f64)
            .collect();
        Self {
            n_loc,
            n_prims,
            n_labels,
            ots_succ,
            ma_targets,
            states,
            compact,
            finals,
            final_mask,
            label_cost,
            terminal: 0.0,
            preds: Vec::new(),
        }
    }

    fn rebuild_preds(&mut self) {
        let mut preds = vec![Vec::new(); self.states.len()];
        for p in 0..self.states.len() as u32 {
            for sigma in self.labels(p) {
                for q2 in self.successors(p, sigma) {
                    preds[q2 as usize].push((p, sigma));
                }
            }
        }
        self.preds = preds;
    }

    /// Number of admissible policies: product over (state, event) of the
    /// admissible successor count.
    pub fn policy_count(&self) -> u128 {
        let mut count = 1u128;
        for q in 0..self.states.len() as u32 {
            if self.is_final(q) {
                continue;
            }
            for sigma in self.labels(q) {
                let k = self.successors(q, sigma).len() as u128;
                count = count.saturating_mul(k.max(1));
            }
        }
        count
    }

    /// Remove successor choices at random until the policy space fits.
    fn prune_to_policy_cap(&mut self, rng: &mut impl Rng, cap: u128) {
        while self.policy_count() > cap {
            // Pick a branchy (state, event) and drop one admissible target
            // from the underlying automaton edge set.
            let q = rng.gen_range(0..self.states.len()) as u32;
            if self.is_final(q) {
                continue;
            }
            let (_, m) = self.states[q as usize];
            let labels: Vec<usize> = (0..self.n_labels)
                .filter(|&s| !self.ma_targets[m as usize][s].is_empty())
                .collect();
            if labels.is_empty() {
                continue;
            }
            let s = labels[rng.gen_range(0..labels.len())];
            if self.ma_targets[m as usize][s].len() > 1 {
                let i = rng.gen_range(0..self.ma_targets[m as usize][s].len());
                self.ma_targets[m as usize][s].remove(i);
            }
        }
    }
}

impl PaGraph for RandomPa {
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
        let (_, m) = self.states[q as usize];
        (0..self.n_labels as u64)
            .filter(|&s| {
                !self.ma_targets[m as usize][s as usize].is_empty()
                    && !self.successors(q, s).is_empty()
            })
            .collect()
    }

    fn successors(&self, q: u32, sigma: u64) -> Vec<u32> {
        let (l, m) = self.states[q as usize];
        let Some(l2) = self.ots_succ[l as usize][sigma as usize] else {
            return Vec::new();
        };
        self.ma_targets[m as usize][sigma as usize]
            .iter()
            .filter_map(|&m2| self.compact.get(&(l2, m2)).copied())
            .collect()
    }

    fn for_each_predecessor(&self, q: u32, f: &mut dyn FnMut(u32, u64)) {
        for &(p, sigma) in &self.preds[q as usize] {
            f(p, sigma);
        }
    }

    fn edge_cost(&self, _q: u32, sigma: u64) -> f64 {
        self.label_cost[sigma as usize]
    }

    fn terminal_cost(&self, _q: u32) -> f64 {
        self.terminal
    }

    fn label_vec(&self, sigma: u64) -> Vec<i8> {
        vec![sigma as i8]
    }
}

// ---------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------

/// Worst-case cost of every state under one explicit successor choice,
/// evaluated by depth-first search with cycle detection: a run that can
/// cycle without touching the final set costs infinity; otherwise the value
/// is the maximum accumulated cost to the first final state.
pub fn j_eval_oracle(pa: &impl PaGraph, choice: &HashMap<(u32, u64), u32>) -> Vec<f64> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    fn dfs(
        pa: &impl PaGraph,
        choice: &HashMap<(u32, u64), u32>,
        q: u32,
        color: &mut [Color],
        memo: &mut [f64],
    ) -> f64 {
        match color[q as usize] {
            Color::Black => return memo[q as usize],
            // A gray hit closes a cycle off the final set: infinite cost.
            Color::Gray => return f64::INFINITY,
            Color::White => {}
        }
        if pa.is_final(q) {
            color[q as usize] = Color::Black;
            memo[q as usize] = pa.terminal_cost(q);
            return memo[q as usize];
        }
        color[q as usize] = Color::Gray;
        let labels = pa.labels(q);
        let mut worst = if labels.is_empty() {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        for sigma in labels {
            let q2 = choice[&(q, sigma)];
            let below = dfs(pa, choice, q2, color, memo);
            worst = worst.max(pa.edge_cost(q, sigma) + below);
        }
        color[q as usize] = Color::Black;
        memo[q as usize] = worst;
        worst
    }
    let n = pa.num_states();
    let mut color = vec![Color::White; n];
    let mut memo = vec![f64::INFINITY; n];
    for q in 0..n as u32 {
        if color[q as usize] == Color::White {
            dfs(pa, choice, q, &mut color, &mut memo);
        }
    }
    memo
}

/// Enumerate every admissible policy, evaluate each with the depth-first
/// oracle, and take the pointwise minimum.
pub fn all_policy_min_oracle(pa: &impl PaGraph) -> Vec<f64> {
    // Choice points: (q, σ, successors).
    let mut points: Vec<(u32, u64, Vec<u32>)> = Vec::new();
    for q in 0..pa.num_states() as u32 {
        if pa.is_final(q) {
            continue;
        }
        for sigma in pa.labels(q) {
            points.push((q, sigma, pa.successors(q, sigma)));
        }
    }
    let mut best = vec![f64::INFINITY; pa.num_states()];
    let mut counter = vec![0usize; points.len()];
    let mut choice: HashMap<(u32, u64), u32> = points
        .iter()
        .map(|(q, s, opts)| ((*q, *s), opts[0]))
        .collect();
    loop {
        let values = j_eval_oracle(pa, &choice);
        for (b, v) in best.iter_mut().zip(&values) {
            *b = b.min(*v);
        }
        // Odometer over choice points, updating only the touched entries.
        let mut i = points.len();
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            counter[i] += 1;
            if counter[i] < points[i].2.len() {
                let (q, s, opts) = &points[i];
                choice.insert((*q, *s), opts[counter[i]]);
                break;
            }
            counter[i] = 0;
            let (q, s, opts) = &points[i];
            choice.insert((*q, *s), opts[0]);
        }
    }
}

/// Fixed point of the min-over-assignments / max-over-events recursion,
/// computed by plain value iteration with explicit assignment enumeration.
pub fn minmax_value_oracle(pa: &impl PaGraph) -> Vec<f64> {
    let n = pa.num_states();
    let mut v = vec![f64::INFINITY; n];
    for &q in pa.final_states() {
        v[q as usize] = pa.terminal_cost(q);
    }
    let per_state: Vec<(Vec<u64>, Vec<Vec<u32>>)> = (0..n as u32)
        .map(|q| {
            let labels = pa.labels(q);
            let succs = labels.iter().map(|&s| pa.successors(q, s)).collect();
            (labels, succs)
        })
        .collect();
    for _ in 0..=n + 1 {
        let mut changed = false;
        for q in 0..n as u32 {
            if pa.is_final(q) {
                continue;
            }
            let (labels, succs) = &per_state[q as usize];
            if labels.is_empty() {
                continue;
            }
            // Enumerate assignment vectors (one successor per event).
            let mut counter = vec![0usize; labels.len()];
            let mut best = f64::INFINITY;
            'assignments: loop {
                let mut worst = f64::NEG_INFINITY;
                for (i, &sigma) in labels.iter().enumerate() {
                    let q2 = succs[i][counter[i]];
                    worst = worst.max(pa.edge_cost(q, sigma) + v[q2 as usize]);
                }
                best = best.min(worst);
                let mut i = labels.len();
                loop {
                    if i == 0 {
                        break 'assignments;
                    }
                    i -= 1;
                    counter[i] += 1;
                    if counter[i] < succs[i].len() {
                        break;
                    }
                    counter[i] = 0;
                }
            }
            if best < v[q as usize] {
                v[q as usize] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    v
}

// ---------------------------------------------------------------------
// The worked three-box example
// ---------------------------------------------------------------------

/// Integrator family with the full six-edge transition diagram (Forward and
/// Backward may hand over to every primitive).
pub fn six_edge_ma() -> ManeuverAutomaton {
    let mut ma = build_double_integrator_ma(1.0, 1.0).unwrap();
    let c = &mut ma.components[0];
    let fwd_guard: PolytopicSet = c.guard_of(1, &Label(vec![1])).unwrap().clone();
    let bwd_guard: PolytopicSet = c.guard_of(2, &Label(vec![-1])).unwrap().clone();
    c.edges.push(MaEdge {
        source: 1,
        label: Label(vec![1]),
        target: 2,
        guard: fwd_guard,
    });
    c.edges.push(MaEdge {
        source: 2,
        label: Label(vec![-1]),
        target: 1,
        guard: bwd_guard,
    });
    ma
}

/// Seven-state product over three boxes with the final set `{(l3, B)}`.
pub fn fig7_pa() -> ExplicitPa {
    let spec = GridSpec {
        dims: 1,
        counts: vec![3],
        box_lengths: vec![1.0],
        obstacles: vec![],
        vehicles: vec![VehicleSpec {
            start: Some(vec![0]),
            goal: vec![2],
        }],
    };
    let ots = enumerate_ots(&spec, 1000).unwrap();
    let mut pa = ExplicitPa::build(ots, six_edge_ma(), 1000).unwrap();
    pa.set_final(&[2], GoalRule::MovingOnly).unwrap();
    pa
}

/// Compact indices of the paper-numbered states q1..q7.
pub fn fig7_states(pa: &ExplicitPa) -> [u32; 7] {
    let find = |l: u32, m: u32| pa.state_index(l, m).unwrap();
    [
        find(0, 1), // q1 = (l1, F)
        find(0, 0), // q2 = (l1, H)
        find(1, 1), // q3 = (l2, F)
        find(1, 0), // q4 = (l2, H)
        find(1, 2), // q5 = (l2, B)
        find(2, 0), // q6 = (l3, H)
        find(2, 2), // q7 = (l3, B)
    ]
}
