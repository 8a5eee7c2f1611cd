//! Non-deterministic Dijkstra: backward value propagation from the final
//! states where event labels are adversarial (max over events) and the next
//! primitive is chosen (min over admissible successors).
//!
//! The value satisfies, at every non-final state with events,
//! `V(q) = max_σ min_{q'} ( D(q,σ) + V(q') )`. Because edge costs are
//! positive and uniform within an event group, the group minimum is fixed by
//! the first successor the queue finalizes, and a state's value is complete
//! once every event group of the state has been resolved.

use super::{ControlPolicy, ValueMap};
use crate::product::PaGraph;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

#[derive(PartialEq)]
struct HeapEntry {
    value: f64,
    state: u32,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (value, state): reverse the natural order. Ties break
        // on the state index for determinism.
        other
            .value
            .partial_cmp(&self.value)
            .expect("finite values")
            .then_with(|| other.state.cmp(&self.state))
    }
}

struct Node {
    resolved: HashSet<u64>,
    remaining: usize,
    best: f64,
}

/// Backward fixed point of the max-min dynamic programming form, computed
/// with a priority queue so every state is finalized exactly once.
pub fn ndd_value(pa: &impl PaGraph) -> ValueMap {
    let n = pa.num_states();
    let mut values = vec![f64::INFINITY; n];
    let mut finalized = vec![false; n];
    let mut nodes: HashMap<u32, Node> = HashMap::new();
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();

    for &qf in pa.final_states() {
        heap.push(HeapEntry {
            value: pa.terminal_cost(qf),
            state: qf,
        });
    }

    while let Some(HeapEntry { value, state }) = heap.pop() {
        if finalized[state as usize] {
            continue;
        }
        finalized[state as usize] = true;
        values[state as usize] = value;

        pa.for_each_predecessor(state, &mut |p, sigma| {
            if finalized[p as usize] || pa.is_final(p) {
                return;
            }
            let node = nodes.entry(p).or_insert_with(|| {
                let labels = pa.labels(p);
                Node {
                    resolved: HashSet::with_capacity(labels.len()),
                    remaining: labels.len(),
                    best: f64::NEG_INFINITY,
                }
            });
            if node.remaining == 0 || !node.resolved.insert(sigma) {
                return;
            }
            // First finalized successor of this event group: because the
            // queue pops in nondecreasing order and the cost is uniform
            // within the group, this is the group minimum.
            let group_min = pa.edge_cost(p, sigma) + value;
            node.best = node.best.max(group_min);
            node.remaining -= 1;
            if node.remaining == 0 {
                heap.push(HeapEntry {
                    value: node.best,
                    state: p,
                });
            }
        });
    }

    ValueMap { values }
}

/// The argmin policy of a value map: for every finite non-final state and
/// every event, the admissible successor minimizing `D + V`, ties resolved
/// to the lowest primitive index (successor lists are sorted).
pub fn extract_optimal_policy(pa: &impl PaGraph, value: &ValueMap) -> ControlPolicy {
    let mut policy = ControlPolicy::default();
    for q in 0..pa.num_states() as u32 {
        if pa.is_final(q) || !value.get(q).is_finite() {
            continue;
        }
        for sigma in pa.labels(q) {
            let mut best: Option<(f64, u32)> = None;
            for q2 in pa.successors(q, sigma) {
                let v = pa.edge_cost(q, sigma) + value.get(q2);
                if best.map_or(true, |(bv, _)| v < bv) {
                    best = Some((v, q2));
                }
            }
            if let Some((_, q2)) = best {
                policy.choices.insert((q, sigma), q2);
            }
        }
    }
    policy
}
