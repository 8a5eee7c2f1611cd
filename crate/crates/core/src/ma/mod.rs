//! Maneuver automata: motion primitives with polytopic invariants, guarded
//! and reset edges over the faces of a canonical box.
//!
//! An automaton is stored as a list of *components*, each an atomic automaton
//! over its own state space. A single-component automaton is the plain case;
//! multi-component automata arise from parallel composition and keep their
//! guards and invariants factored per component (products are never expanded
//! into one high-dimensional halfspace system). Composite primitives are
//! tuples of per-component primitive indices, composite labels are
//! concatenations of per-component labels.

pub mod check;
pub mod double_integrator;
pub mod flow;

use crate::geometry::{GeometryError, Halfspace, PolytopicSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label component {0} outside {{-1,0,1}}")]
    BadLabelComponent(i8),
    #[error("unknown primitive index {0}")]
    UnknownPrimitive(usize),
    #[error("edge endpoint {0} does not exist")]
    BadEdgeEndpoint(usize),
    #[error("box lengths must be positive, got {0}")]
    NonpositiveLength(f64),
    #[error("parameter must be positive, got {0}")]
    NonpositiveParameter(f64),
    #[error("output index map is not injective or out of range")]
    BadOutputMap,
    #[error("state {state:?} violates guard of edge {edge}")]
    GuardViolation { edge: usize, state: Vec<f64> },
    #[error("invariant of primitive {0} is unbounded")]
    UnboundedInvariant(String),
    #[error("guard of edge {edge} not contained in {requirement}")]
    GuardContainment { edge: usize, requirement: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Face/transition direction: an offset vector in `{-1,0,1}^p`. The all-zero
/// label is the empty event ε.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label(pub Vec<i8>);

impl Label {
    pub fn new(offsets: Vec<i8>) -> Result<Self, MaError> {
        for &c in &offsets {
            if !(-1..=1).contains(&c) {
                return Err(MaError::BadLabelComponent(c));
            }
        }
        Ok(Self(offsets))
    }

    pub fn epsilon(p: usize) -> Self {
        Self(vec![0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_epsilon(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// Concatenation, the label of a product automaton.
    pub fn concat(&self, other: &Label) -> Label {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Label(v)
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Edge lengths of the canonical box, one per output axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxGeometry {
    pub lengths: Vec<f64>,
}

impl BoxGeometry {
    pub fn new(lengths: Vec<f64>) -> Result<Self, MaError> {
        for &d in &lengths {
            if !(d > 0.0) {
                return Err(MaError::NonpositiveLength(d));
            }
        }
        Ok(Self { lengths })
    }

    pub fn p(&self) -> usize {
        self.lengths.len()
    }
}

/// The face of the canonical box associated with a label: coordinate `i` is
/// pinned to `0` when `σ_i = -1`, to `d_i` when `σ_i = 1`, and ranges over
/// `[0, d_i]` when `σ_i = 0`. Lives in output space.
pub fn face_of_label(sigma: &Label, d: &BoxGeometry) -> Result<PolytopicSet, MaError> {
    if sigma.len() != d.p() {
        return Err(MaError::DimensionMismatch {
            expected: d.p(),
            got: sigma.len(),
        });
    }
    let p = d.p();
    let mut hs = Vec::new();
    for i in 0..p {
        let mut lo = vec![0.0; p];
        lo[i] = -1.0;
        let mut hi = vec![0.0; p];
        hi[i] = 1.0;
        let (low, high) = match sigma.0[i] {
            -1 => (0.0, 0.0),
            1 => (d.lengths[i], d.lengths[i]),
            _ => (0.0, d.lengths[i]),
        };
        hs.push(Halfspace::closed(lo, -low)?);
        hs.push(Halfspace::closed(hi, high)?);
    }
    Ok(PolytopicSet::new(p, hs)?)
}

/// An affine feedback primitive: `u = K x + g` over a polytopic invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPrimitive {
    pub name: String,
    /// Feedback gain, one row per control input.
    pub gain: Vec<Vec<f64>>,
    /// Feedback offset, one entry per control input.
    pub bias: Vec<f64>,
    pub invariant: PolytopicSet,
}

/// A guarded, reset edge between primitives of one component. The reset is
/// always the translation `x ↦ x − h_o^{-1}(d ∘ σ)` so only the label is
/// stored with the guard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaEdge {
    pub source: usize,
    pub label: Label,
    pub target: usize,
    pub guard: PolytopicSet,
}

/// One atomic maneuver automaton over an affine system
/// `ẋ = A x + B u`, `y_i = x_{o(i)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaComponent {
    pub p: usize,
    pub n: usize,
    /// Output index map `o`: output `i` reads state coordinate `output_map[i]`.
    pub output_map: Vec<usize>,
    pub geometry: BoxGeometry,
    /// Drift matrix A (n×n).
    pub drift: Vec<Vec<f64>>,
    /// Input matrix B (n×μ).
    pub input: Vec<Vec<f64>>,
    pub primitives: Vec<MotionPrimitive>,
    pub edges: Vec<MaEdge>,
}

impl MaComponent {
    /// Structural validation: injective output map, edge endpoints exist,
    /// guards contained in source invariants and in their label's face,
    /// invariants bounded and inside the canonical box.
    pub fn validate(&self) -> Result<(), MaError> {
        let mut seen = vec![false; self.n];
        if self.output_map.len() != self.p || self.geometry.p() != self.p {
            return Err(MaError::BadOutputMap);
        }
        for &o in &self.output_map {
            if o >= self.n || seen[o] {
                return Err(MaError::BadOutputMap);
            }
            seen[o] = true;
        }
        let box_preimage = self.face_preimage(&Label::epsilon(self.p))?;
        for (idx, prim) in self.primitives.iter().enumerate() {
            if prim.invariant.dim != self.n {
                return Err(MaError::DimensionMismatch {
                    expected: self.n,
                    got: prim.invariant.dim,
                });
            }
            if !prim.invariant.is_bounded()? {
                return Err(MaError::UnboundedInvariant(prim.name.clone()));
            }
            if !prim.invariant.is_subset_of(&box_preimage)? {
                return Err(MaError::GuardContainment {
                    edge: idx,
                    requirement: "invariant inside h^{-1}(Y*)".into(),
                });
            }
        }
        for (idx, e) in self.edges.iter().enumerate() {
            if e.source >= self.primitives.len() {
                return Err(MaError::BadEdgeEndpoint(e.source));
            }
            if e.target >= self.primitives.len() {
                return Err(MaError::BadEdgeEndpoint(e.target));
            }
            if e.label.len() != self.p {
                return Err(MaError::DimensionMismatch {
                    expected: self.p,
                    got: e.label.len(),
                });
            }
            if !e.guard.is_subset_of(&self.primitives[e.source].invariant)? {
                return Err(MaError::GuardContainment {
                    edge: idx,
                    requirement: "source invariant".into(),
                });
            }
            if !e.guard.is_subset_of(&self.face_preimage(&e.label)?)? {
                return Err(MaError::GuardContainment {
                    edge: idx,
                    requirement: "face preimage h^{-1}(F_sigma)".into(),
                });
            }
        }
        Ok(())
    }

    /// `h^{-1}(F_σ)` in state space: output coordinates constrained to the
    /// face, the remaining coordinates free.
    pub fn face_preimage(&self, sigma: &Label) -> Result<PolytopicSet, MaError> {
        let face = face_of_label(sigma, &self.geometry)?;
        let mut hs = Vec::new();
        for h in &face.halfspaces {
            let mut n = vec![0.0; self.n];
            for (i, &coef) in h.normal.iter().enumerate() {
                n[self.output_map[i]] = coef;
            }
            hs.push(Halfspace {
                normal: n,
                offset: h.offset,
                strict: h.strict,
            });
        }
        Ok(PolytopicSet::new(self.n, hs)?)
    }

    /// Labels on outgoing edges of primitive `m`, sorted and deduplicated.
    pub fn sigma(&self, m: usize) -> Result<Vec<Label>, MaError> {
        if m >= self.primitives.len() {
            return Err(MaError::UnknownPrimitive(m));
        }
        let mut labels: Vec<Label> = self
            .edges
            .iter()
            .filter(|e| e.source == m)
            .map(|e| e.label.clone())
            .collect();
        labels.sort();
        labels.dedup();
        Ok(labels)
    }

    /// Targets of edges `(m, σ, ·)`, sorted by primitive index.
    pub fn targets(&self, m: usize, sigma: &Label) -> Vec<usize> {
        let mut t: Vec<usize> = self
            .edges
            .iter()
            .filter(|e| e.source == m && &e.label == sigma)
            .map(|e| e.target)
            .collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    /// The guard shared by all edges `(m, σ, ·)`; the conformance
    /// conditions make it independent of the target.
    pub fn guard_of(&self, m: usize, sigma: &Label) -> Option<&PolytopicSet> {
        self.edges
            .iter()
            .find(|e| e.source == m && &e.label == sigma)
            .map(|e| &e.guard)
    }

    /// Reset translation `−h_o^{-1}(d ∘ σ)` as a state-space vector.
    pub fn reset_vector(&self, sigma: &Label) -> Vec<f64> {
        let mut t = vec![0.0; self.n];
        for i in 0..self.p {
            t[self.output_map[i]] = -self.geometry.lengths[i] * sigma.0[i] as f64;
        }
        t
    }

    /// Apply the reset of edge `edge` to `x`. Checked mode verifies guard
    /// membership first.
    pub fn apply_reset(&self, edge: usize, x: &[f64], checked: bool) -> Result<Vec<f64>, MaError> {
        let e = self
            .edges
            .get(edge)
            .ok_or(MaError::BadEdgeEndpoint(edge))?;
        if x.len() != self.n {
            return Err(MaError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        if checked && !e.guard.contains(x) {
            return Err(MaError::GuardViolation {
                edge,
                state: x.to_vec(),
            });
        }
        let t = self.reset_vector(&e.label);
        Ok(x.iter().zip(&t).map(|(a, b)| a + b).collect())
    }

    /// Closed-loop vector field of primitive `m` at state `x`:
    /// `ẋ = A x + B (K x + g)`.
    pub fn closed_loop_field(&self, m: usize, x: &[f64]) -> Result<Vec<f64>, MaError> {
        if m >= self.primitives.len() {
            return Err(MaError::UnknownPrimitive(m));
        }
        if x.len() != self.n {
            return Err(MaError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let prim = &self.primitives[m];
        let mu = prim.bias.len();
        let mut u = prim.bias.clone();
        for (k, row) in prim.gain.iter().enumerate() {
            u[k] += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut dx = vec![0.0; self.n];
        for i in 0..self.n {
            dx[i] = self.drift[i].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            for k in 0..mu {
                dx[i] += self.input[i][k] * u[k];
            }
        }
        Ok(dx)
    }

    /// Closed-loop affine form `(A + B K, B g)` of primitive `m`.
    pub fn closed_loop_affine(&self, m: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let prim = &self.primitives[m];
        let mu = prim.bias.len();
        let mut acl = self.drift.clone();
        let mut bcl = vec![0.0; self.n];
        for i in 0..self.n {
            for k in 0..mu {
                for j in 0..self.n {
                    acl[i][j] += self.input[i][k] * prim.gain[k][j];
                }
                bcl[i] += self.input[i][k] * prim.bias[k];
            }
        }
        (acl, bcl)
    }
}

/// A maneuver automaton as an ordered list of components. Composite guards,
/// invariants, resets and labels all act blockwise on the components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverAutomaton {
    pub components: Vec<MaComponent>,
    /// Per component and primitive: the targets admitted for an ε-switch in
    /// a parallel composition (always contains the self-loop). Populated by
    /// the composition module; a fresh atomic automaton only carries its
    /// self-loops.
    pub eps_targets: Vec<Vec<Vec<usize>>>,
}

impl ManeuverAutomaton {
    pub fn from_component(component: MaComponent) -> Result<Self, MaError> {
        component.validate()?;
        let selfloops = (0..component.primitives.len()).map(|m| vec![m]).collect();
        Ok(Self {
            components: vec![component],
            eps_targets: vec![selfloops],
        })
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn p(&self) -> usize {
        self.components.iter().map(|c| c.p).sum()
    }

    pub fn n(&self) -> usize {
        self.components.iter().map(|c| c.n).sum()
    }

    /// Box lengths of the composite canonical box (component concatenation).
    pub fn geometry(&self) -> BoxGeometry {
        BoxGeometry {
            lengths: self
                .components
                .iter()
                .flat_map(|c| c.geometry.lengths.iter().copied())
                .collect(),
        }
    }

    /// Global output index map: component maps shifted by the state offsets.
    pub fn output_map(&self) -> Vec<usize> {
        let mut map = Vec::with_capacity(self.p());
        let mut state_off = 0;
        for c in &self.components {
            map.extend(c.output_map.iter().map(|&o| o + state_off));
            state_off += c.n;
        }
        map
    }

    /// Number of composite primitives `Π_j |M_j|`.
    pub fn num_primitives(&self) -> usize {
        self.components.iter().map(|c| c.primitives.len()).product()
    }

    /// Mixed-radix encoding of a primitive tuple (component 0 is the most
    /// significant digit).
    pub fn primitive_index(&self, tuple: &[usize]) -> usize {
        debug_assert_eq!(tuple.len(), self.components.len());
        let mut idx = 0;
        for (j, &t) in tuple.iter().enumerate() {
            idx = idx * self.components[j].primitives.len() + t;
        }
        idx
    }

    pub fn primitive_tuple(&self, mut index: usize) -> Vec<usize> {
        let k = self.components.len();
        let mut tuple = vec![0; k];
        for j in (0..k).rev() {
            let base = self.components[j].primitives.len();
            tuple[j] = index % base;
            index /= base;
        }
        tuple
    }

    pub fn primitive_name(&self, tuple: &[usize]) -> String {
        let parts: Vec<&str> = tuple
            .iter()
            .zip(&self.components)
            .map(|(&t, c)| c.primitives[t].name.as_str())
            .collect();
        if parts.len() == 1 {
            parts[0].to_string()
        } else {
            format!("({})", parts.join(","))
        }
    }

    /// Split a composite label into per-component labels.
    pub fn split_label<'a>(&self, sigma: &'a Label) -> Vec<Label> {
        let mut out = Vec::with_capacity(self.components.len());
        let mut off = 0;
        for c in &self.components {
            out.push(Label(sigma.0[off..off + c.p].to_vec()));
            off += c.p;
        }
        out
    }

    /// Per-component move options of a primitive tuple: for each component,
    /// the list of `(label, targets)` pairs including the ε option. Composite
    /// edges are exactly the products of these options minus the all-ε
    /// combination.
    pub fn move_options(&self, tuple: &[usize]) -> Result<Vec<Vec<(Label, Vec<usize>)>>, MaError> {
        let mut per_component = Vec::with_capacity(self.components.len());
        for (j, c) in self.components.iter().enumerate() {
            let m = tuple[j];
            if m >= c.primitives.len() {
                return Err(MaError::UnknownPrimitive(m));
            }
            let mut opts = vec![(Label::epsilon(c.p), self.eps_targets[j][m].clone())];
            for sigma in c.sigma(m)? {
                let targets = c.targets(m, &sigma);
                opts.push((sigma, targets));
            }
            per_component.push(opts);
        }
        Ok(per_component)
    }

    /// The set of possible events `Σ_MA(m)` of a composite primitive: label
    /// products over the per-component options, minus ε. Derived from the
    /// edges, never stored.
    pub fn sigma_ma(&self, tuple: &[usize]) -> Result<Vec<Label>, MaError> {
        let opts = self.move_options(tuple)?;
        let mut labels = vec![Label(Vec::new())];
        for comp_opts in &opts {
            let mut next = Vec::with_capacity(labels.len() * comp_opts.len());
            for prefix in &labels {
                for (sigma, targets) in comp_opts {
                    if targets.is_empty() {
                        continue;
                    }
                    next.push(prefix.concat(sigma));
                }
            }
            labels = next;
        }
        labels.retain(|l| !l.is_epsilon());
        labels.sort();
        labels.dedup();
        Ok(labels)
    }

    /// Target primitive tuples of composite edges `(m, σ, ·)`, in tuple
    /// (mixed-radix) order.
    pub fn edge_targets(&self, tuple: &[usize], sigma: &Label) -> Result<Vec<Vec<usize>>, MaError> {
        if sigma.is_epsilon() {
            return Ok(Vec::new());
        }
        if sigma.len() != self.p() {
            return Err(MaError::DimensionMismatch {
                expected: self.p(),
                got: sigma.len(),
            });
        }
        let parts = self.split_label(sigma);
        let mut per_component: Vec<Vec<usize>> = Vec::with_capacity(self.components.len());
        for (j, c) in self.components.iter().enumerate() {
            let m = tuple[j];
            let targets = if parts[j].is_epsilon() {
                self.eps_targets[j][m].clone()
            } else {
                let t = c.targets(m, &parts[j]);
                if t.is_empty() {
                    return Ok(Vec::new());
                }
                t
            };
            per_component.push(targets);
        }
        let mut out: Vec<Vec<usize>> = vec![Vec::new()];
        for targets in &per_component {
            let mut next = Vec::with_capacity(out.len() * targets.len());
            for prefix in &out {
                for &t in targets {
                    let mut v = prefix.clone();
                    v.push(t);
                    next.push(v);
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// Reset translation for a composite label, on the stacked state space.
    pub fn reset_vector(&self, sigma: &Label) -> Vec<f64> {
        let parts = self.split_label(sigma);
        let mut t = Vec::with_capacity(self.n());
        for (c, part) in self.components.iter().zip(&parts) {
            t.extend(c.reset_vector(part));
        }
        t
    }

    pub fn apply_reset(&self, sigma: &Label, x: &[f64]) -> Vec<f64> {
        let t = self.reset_vector(sigma);
        x.iter().zip(&t).map(|(a, b)| a + b).collect()
    }

    /// Stacked closed-loop field of a composite primitive.
    pub fn closed_loop_field(&self, tuple: &[usize], x: &[f64]) -> Result<Vec<f64>, MaError> {
        if x.len() != self.n() {
            return Err(MaError::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        let mut dx = Vec::with_capacity(self.n());
        let mut off = 0;
        for (j, c) in self.components.iter().enumerate() {
            dx.extend(c.closed_loop_field(tuple[j], &x[off..off + c.n])?);
            off += c.n;
        }
        Ok(dx)
    }

    /// Membership of a stacked state in the (factored) composite invariant.
    pub fn invariant_contains(&self, tuple: &[usize], x: &[f64]) -> bool {
        let mut off = 0;
        for (j, c) in self.components.iter().enumerate() {
            if !c.primitives[tuple[j]].invariant.contains(&x[off..off + c.n]) {
                return false;
            }
            off += c.n;
        }
        true
    }

    /// Enumerate all composite edges `(source, σ, target)`. Intended for
    /// checks and debug dumps on small automata.
    pub fn enumerate_edges(&self) -> Result<Vec<(Vec<usize>, Label, Vec<usize>)>, MaError> {
        let mut out = Vec::new();
        for m_idx in 0..self.num_primitives() {
            let tuple = self.primitive_tuple(m_idx);
            for sigma in self.sigma_ma(&tuple)? {
                for target in self.edge_targets(&tuple, &sigma)? {
                    out.push((tuple.clone(), sigma.clone(), target));
                }
            }
        }
        Ok(out)
    }

    /// Lossless structured-text form (components and ε-switch tables).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("maneuver automaton serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
