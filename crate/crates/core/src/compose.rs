//! Parallel composition of maneuver automata.
//!
//! The composite of two automata runs them side by side: composite labels
//! are label concatenations, and a component that does not cross a face
//! during a transition contributes the empty label ε. A primitive may switch
//! on ε only when its inner invariant (invariant minus all outgoing guards)
//! is contained in the target invariant and touches none of the target's
//! guards; those admitted switches form the augmented edge set from which
//! composite edges are built.

use crate::geometry::{witness_avoiding, GeometryError, PolytopicSet};
use crate::ma::{Label, MaComponent, MaError, ManeuverAutomaton};
use serde::{Deserialize, Serialize};

/// A primitive's invariant with its outgoing guard sets removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerInvariant {
    pub base: PolytopicSet,
    pub removed: Vec<PolytopicSet>,
}

impl InnerInvariant {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.base.contains(x) && !self.removed.iter().any(|g| g.contains(x))
    }

    pub fn translate(&self, t: &[f64]) -> Self {
        Self {
            base: self.base.translate(t),
            removed: self.removed.iter().map(|g| g.translate(t)).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &PolytopicSet) -> Result<bool, GeometryError> {
        let avoid: Vec<&PolytopicSet> = self.removed.iter().collect();
        for h in &other.halfspaces {
            let flipped = crate::geometry::Halfspace {
                normal: h.normal.iter().map(|v| -v).collect(),
                offset: -h.offset,
                strict: !h.strict,
            };
            let mut hs = self.base.halfspaces.clone();
            hs.push(flipped);
            if witness_avoiding(self.base.dim, &hs, &self.base.excluded, &avoid)?.is_some() {
                return Ok(false);
            }
        }
        for z in &other.excluded {
            if self.contains(z) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn is_disjoint_from(&self, other: &PolytopicSet) -> Result<bool, GeometryError> {
        let avoid: Vec<&PolytopicSet> = self.removed.iter().collect();
        let mut hs = self.base.halfspaces.clone();
        hs.extend(other.halfspaces.iter().cloned());
        let mut excl = self.base.excluded.clone();
        excl.extend(other.excluded.iter().cloned());
        Ok(witness_avoiding(self.base.dim, &hs, &excl, &avoid)?.is_none())
    }

    pub fn is_disjoint_from_inner(&self, other: &InnerInvariant) -> Result<bool, GeometryError> {
        let avoid: Vec<&PolytopicSet> =
            self.removed.iter().chain(other.removed.iter()).collect();
        let mut hs = self.base.halfspaces.clone();
        hs.extend(other.base.halfspaces.iter().cloned());
        let mut excl = self.base.excluded.clone();
        excl.extend(other.base.excluded.iter().cloned());
        Ok(witness_avoiding(self.base.dim, &hs, &excl, &avoid)?.is_none())
    }

    pub fn set_eq(&self, other: &InnerInvariant) -> Result<bool, GeometryError> {
        Ok(self.subset_of_inner(other)? && other.subset_of_inner(self)?)
    }

    pub fn subset_of_inner(&self, other: &InnerInvariant) -> Result<bool, GeometryError> {
        if !self.is_subset_of(&other.base)? {
            return Ok(false);
        }
        for g in &other.removed {
            if !self.is_disjoint_from(g)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// One factor of a composite guard: a crossing component contributes its
/// guard face, an ε component contributes its inner invariant (identity
/// reset).
#[derive(Debug, Clone)]
pub enum GuardFactor {
    Face(PolytopicSet),
    Inner(InnerInvariant),
}

impl GuardFactor {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            GuardFactor::Face(g) => g.contains(x),
            GuardFactor::Inner(i) => i.contains(x),
        }
    }

    pub fn translate(&self, t: &[f64]) -> Self {
        match self {
            GuardFactor::Face(g) => GuardFactor::Face(g.translate(t)),
            GuardFactor::Inner(i) => GuardFactor::Inner(i.translate(t)),
        }
    }

    pub fn is_disjoint_from(&self, other: &GuardFactor) -> Result<bool, GeometryError> {
        match (self, other) {
            (GuardFactor::Face(a), GuardFactor::Face(b)) => a.is_disjoint(b),
            (GuardFactor::Face(a), GuardFactor::Inner(b)) => b.is_disjoint_from(a),
            (GuardFactor::Inner(a), GuardFactor::Face(b)) => a.is_disjoint_from(b),
            (GuardFactor::Inner(a), GuardFactor::Inner(b)) => a.is_disjoint_from_inner(b),
        }
    }

    pub fn is_subset_of(&self, other: &PolytopicSet) -> Result<bool, GeometryError> {
        match self {
            GuardFactor::Face(a) => a.is_subset_of(other),
            GuardFactor::Inner(a) => a.is_subset_of(other),
        }
    }

    pub fn set_eq(&self, other: &GuardFactor) -> Result<bool, GeometryError> {
        match (self, other) {
            (GuardFactor::Face(a), GuardFactor::Face(b)) => a.set_eq(b),
            (GuardFactor::Inner(a), GuardFactor::Inner(b)) => a.set_eq(b),
            _ => Ok(false),
        }
    }
}

/// Inner invariant of one component primitive: the invariant minus the union
/// of its outgoing guards, kept as base-plus-removed rather than expanded.
pub fn component_inner(component: &MaComponent, m: usize) -> Result<InnerInvariant, MaError> {
    if m >= component.primitives.len() {
        return Err(MaError::UnknownPrimitive(m));
    }
    let mut removed = Vec::new();
    for sigma in component.sigma(m)? {
        if let Some(g) = component.guard_of(m, &sigma) {
            removed.push(g.clone());
        }
    }
    Ok(InnerInvariant {
        base: component.primitives[m].invariant.clone(),
        removed,
    })
}

/// Inner invariant of a composite primitive, one factor per component.
pub fn inner_invariant(
    ma: &ManeuverAutomaton,
    tuple: &[usize],
) -> Result<Vec<InnerInvariant>, MaError> {
    tuple
        .iter()
        .zip(&ma.components)
        .map(|(&m, c)| component_inner(c, m))
        .collect()
}

/// Factored guard of a composite edge `(m, σ, ·)`.
pub fn edge_guard_factors(
    ma: &ManeuverAutomaton,
    tuple: &[usize],
    sigma: &Label,
) -> Result<Vec<GuardFactor>, MaError> {
    let parts = ma.split_label(sigma);
    let mut factors = Vec::with_capacity(ma.components.len());
    for (j, c) in ma.components.iter().enumerate() {
        let m = tuple[j];
        if parts[j].is_epsilon() {
            factors.push(GuardFactor::Inner(component_inner(c, m)?));
        } else {
            let g = c
                .guard_of(m, &parts[j])
                .ok_or(MaError::UnknownPrimitive(m))?;
            factors.push(GuardFactor::Face(g.clone()));
        }
    }
    Ok(factors)
}

/// ε-switch targets of every primitive of one component: `m'` is admitted
/// when `I(m) ⊆ I_MA(m')` and `I(m)` misses every outgoing guard of `m'`.
/// The self-loop is always admitted.
pub fn component_eps_targets(component: &MaComponent) -> Result<Vec<Vec<usize>>, MaError> {
    let n_prims = component.primitives.len();
    let inners: Vec<InnerInvariant> = (0..n_prims)
        .map(|m| component_inner(component, m))
        .collect::<Result<_, _>>()?;
    let mut tables = Vec::with_capacity(n_prims);
    for m in 0..n_prims {
        let mut targets = Vec::new();
        'next_target: for m2 in 0..n_prims {
            if !inners[m].is_subset_of(&component.primitives[m2].invariant)? {
                continue;
            }
            for sigma in component.sigma(m2)? {
                if let Some(g) = component.guard_of(m2, &sigma) {
                    if !inners[m].is_disjoint_from(g)? {
                        continue 'next_target;
                    }
                }
            }
            targets.push(m2);
        }
        tables.push(targets);
    }
    Ok(tables)
}

/// Base edges plus the admitted ε-switch pairs of an automaton.
#[derive(Debug, Clone)]
pub struct AugmentedEdgeSet {
    pub base: Vec<(Vec<usize>, Label, Vec<usize>)>,
    /// Admitted ε-switches `(m, m')`, self-loops included.
    pub epsilon: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Compute the augmented edge set of an automaton by the admission rule. For
/// a composite automaton the rule is evaluated on the factored sets: a
/// product misses a product guard exactly when some factor pair is disjoint.
pub fn augmented_edges(ma: &ManeuverAutomaton) -> Result<AugmentedEdgeSet, MaError> {
    let base = ma.enumerate_edges()?;
    let n_prims = ma.num_primitives();
    let inners: Vec<Vec<InnerInvariant>> = (0..n_prims)
        .map(|i| inner_invariant(ma, &ma.primitive_tuple(i)))
        .collect::<Result<_, _>>()?;
    let mut epsilon = Vec::new();
    for m_idx in 0..n_prims {
        let m = ma.primitive_tuple(m_idx);
        'target: for m2_idx in 0..n_prims {
            let m2 = ma.primitive_tuple(m2_idx);
            for (j, c) in ma.components.iter().enumerate() {
                if !inners[m_idx][j].is_subset_of(&c.primitives[m2[j]].invariant)? {
                    continue 'target;
                }
            }
            for sigma in ma.sigma_ma(&m2)? {
                let factors = edge_guard_factors(ma, &m2, &sigma)?;
                let mut disjoint_somewhere = false;
                for (j, f) in factors.iter().enumerate() {
                    let miss = match f {
                        GuardFactor::Face(g) => inners[m_idx][j].is_disjoint_from(g)?,
                        GuardFactor::Inner(i) => inners[m_idx][j].is_disjoint_from_inner(i)?,
                    };
                    if miss {
                        disjoint_somewhere = true;
                        break;
                    }
                }
                if !disjoint_somewhere {
                    continue 'target;
                }
            }
            epsilon.push((m.clone(), m2));
        }
    }
    Ok(AugmentedEdgeSet { base, epsilon })
}

/// Parallel composition. Components are concatenated and every component's
/// ε-switch table is computed from its geometry; composite edges are derived
/// on demand as products of per-component moves (minus the all-ε move).
pub fn parallel_compose(
    ma1: &ManeuverAutomaton,
    ma2: &ManeuverAutomaton,
) -> Result<ManeuverAutomaton, MaError> {
    let mut components = Vec::with_capacity(ma1.components.len() + ma2.components.len());
    components.extend(ma1.components.iter().cloned());
    components.extend(ma2.components.iter().cloned());
    for c in &components {
        for e in &c.edges {
            if e.label.is_epsilon() {
                return Err(MaError::BadLabelComponent(0));
            }
        }
    }
    let eps_targets = components
        .iter()
        .map(component_eps_targets)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ManeuverAutomaton {
        components,
        eps_targets,
    })
}

/// Left fold of `parallel_compose` with `k` copies of `ma`.
pub fn compose_n(ma: &ManeuverAutomaton, k: usize) -> Result<ManeuverAutomaton, MaError> {
    if k == 0 {
        return Err(MaError::NonpositiveParameter(0.0));
    }
    let mut acc = ma.clone();
    for _ in 1..k {
        acc = parallel_compose(&acc, ma)?;
    }
    Ok(acc)
}

/// Left fold over a list of automata (used to stack distinct per-axis
/// automata before replicating them per vehicle).
pub fn compose_all(mas: &[ManeuverAutomaton]) -> Result<ManeuverAutomaton, MaError> {
    let (first, rest) = mas
        .split_first()
        .ok_or(MaError::NonpositiveParameter(0.0))?;
    let mut acc = first.clone();
    for ma in rest {
        acc = parallel_compose(&acc, ma)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Halfspace, PolytopicSet};
    use crate::ma::double_integrator::{build_double_integrator_ma, BACKWARD, FORWARD, HOLD};
    use crate::ma::{BoxGeometry, MaEdge, MotionPrimitive};

    fn di() -> ManeuverAutomaton {
        build_double_integrator_ma(1.0, 1.0).unwrap()
    }

    #[test]
    fn inner_invariants_of_the_integrator_family() {
        let ma = di();
        let c = &ma.components[0];
        // Hold has no guards: I(H) = I_MA(H).
        let ih = component_inner(c, HOLD).unwrap();
        assert!(ih.removed.is_empty());
        assert!(ih.contains(&[0.5, 0.1]));
        // Forward loses its exit face {1} x (0,1].
        let iff = component_inner(c, FORWARD).unwrap();
        assert!(iff.contains(&[0.5, 0.5]));
        assert!(iff.contains(&[1.0, -0.5]));
        assert!(!iff.contains(&[1.0, 0.5]));
        // Backward loses {0} x [-1,0).
        let ib = component_inner(c, BACKWARD).unwrap();
        assert!(ib.contains(&[0.5, -0.5]));
        assert!(!ib.contains(&[0.0, -0.5]));
        assert!(ib.contains(&[0.0, 0.5]));
    }

    #[test]
    fn augmented_edges_match_the_integrator_table() {
        let ma = di();
        let aug = augmented_edges(&ma).unwrap();
        assert_eq!(aug.base.len(), 4);
        let mut eps: Vec<(usize, usize)> =
            aug.epsilon.iter().map(|(a, b)| (a[0], b[0])).collect();
        eps.sort_unstable();
        // Self-loops plus the two Hold switches.
        let mut expected = vec![
            (HOLD, HOLD),
            (FORWARD, FORWARD),
            (BACKWARD, BACKWARD),
            (HOLD, FORWARD),
            (HOLD, BACKWARD),
        ];
        expected.sort_unstable();
        assert_eq!(eps, expected);
    }

    fn single_primitive_ma() -> ManeuverAutomaton {
        // One hold-style primitive, no edges.
        let inv = PolytopicSet::from_polygon(&[[0.0, 0.0], [1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
            .unwrap();
        let comp = MaComponent {
            p: 1,
            n: 2,
            output_map: vec![0],
            geometry: BoxGeometry::new(vec![1.0]).unwrap(),
            drift: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            input: vec![vec![0.0], vec![1.0]],
            primitives: vec![MotionPrimitive {
                name: "S".into(),
                gain: vec![vec![-2.0, -2.0]],
                bias: vec![1.0],
                invariant: inv,
            }],
            edges: vec![],
        };
        ManeuverAutomaton::from_component(comp).unwrap()
    }

    #[test]
    fn single_primitive_augments_to_a_self_loop() {
        let ma = single_primitive_ma();
        let aug = augmented_edges(&ma).unwrap();
        assert!(aug.base.is_empty());
        assert_eq!(aug.epsilon, vec![(vec![0], vec![0])]);
    }

    #[test]
    fn mutant_hold_touching_a_guard_loses_the_switch() {
        // Widen Hold's invariant to the Forward quad: its inner invariant
        // then meets Forward's guard and the ε-switch (H,0,F) is rejected.
        let mut ma = di();
        let fwd_inv = ma.components[0].primitives[FORWARD].invariant.clone();
        ma.components[0].primitives[HOLD].invariant = fwd_inv;
        let tables = component_eps_targets(&ma.components[0]).unwrap();
        assert!(!tables[HOLD].contains(&FORWARD));
        assert!(tables[HOLD].contains(&HOLD));
    }

    #[test]
    fn di_pair_has_nine_primitives_and_the_turn_edge() {
        let ma2 = parallel_compose(&di(), &di()).unwrap();
        assert_eq!(ma2.num_primitives(), 9);
        // ((F,H),(1,0),(H,F)) encodes a turn from Right to Up.
        let targets = ma2
            .edge_targets(&[FORWARD, HOLD], &Label::new(vec![1, 0]).unwrap())
            .unwrap();
        assert!(targets.contains(&vec![HOLD, FORWARD]));
    }

    #[test]
    fn composing_with_inert_side_appends_epsilon() {
        let ma = parallel_compose(&di(), &single_primitive_ma()).unwrap();
        let edges = ma.enumerate_edges().unwrap();
        // Exactly the integrator edges with (σ², m²) = (ε, S) appended.
        assert_eq!(edges.len(), 4);
        for (_, sigma, target) in &edges {
            assert_eq!(sigma.0[1], 0);
            assert_eq!(target[1], 0);
        }
    }

    /// Independent enumeration of the pair composition from the published
    /// augmented-move tables of the integrator family.
    fn brute_force_pair_edges() -> Vec<(Vec<usize>, Vec<i8>, Vec<usize>)> {
        // Per primitive: (label, targets) options including ε.
        let options: [Vec<(i8, Vec<usize>)>; 3] = [
            vec![(0, vec![HOLD, FORWARD, BACKWARD])],
            vec![(0, vec![FORWARD]), (1, vec![HOLD, FORWARD])],
            vec![(0, vec![BACKWARD]), (-1, vec![HOLD, BACKWARD])],
        ];
        let mut edges = Vec::new();
        for m1 in 0..3usize {
            for m2 in 0..3usize {
                for (s1, t1s) in &options[m1] {
                    for (s2, t2s) in &options[m2] {
                        if *s1 == 0 && *s2 == 0 {
                            continue;
                        }
                        for &t1 in t1s {
                            for &t2 in t2s {
                                edges.push((vec![m1, m2], vec![*s1, *s2], vec![t1, t2]));
                            }
                        }
                    }
                }
            }
        }
        edges
    }

    #[test]
    fn pair_edge_set_matches_brute_force_enumeration() {
        let ma2 = parallel_compose(&di(), &di()).unwrap();
        let mut got: Vec<(Vec<usize>, Vec<i8>, Vec<usize>)> = ma2
            .enumerate_edges()
            .unwrap()
            .into_iter()
            .map(|(m, s, t)| (m, s.0, t))
            .collect();
        let mut expected = brute_force_pair_edges();
        got.sort();
        expected.sort();
        assert_eq!(got.len(), 56);
        assert_eq!(got, expected);
    }

    #[test]
    fn compose_n_sizes() {
        let ma = di();
        let same = compose_n(&ma, 1).unwrap();
        assert_eq!(same, ma);
        let pair = compose_n(&ma, 2).unwrap();
        assert_eq!(pair, parallel_compose(&ma, &ma).unwrap());
        let triple = compose_n(&ma, 3).unwrap();
        assert_eq!(triple.num_primitives(), 27);
        assert_eq!(triple.p(), 3);
        let edges = triple.enumerate_edges().unwrap();
        assert_eq!(edges.len(), 604);
        assert!(compose_n(&ma, 0).is_err());
    }

    #[test]
    fn epsilon_never_labels_a_composite_edge() {
        let ma2 = parallel_compose(&di(), &di()).unwrap();
        for (_, sigma, _) in ma2.enumerate_edges().unwrap() {
            assert!(!sigma.is_epsilon());
        }
    }

    #[test]
    fn associativity_up_to_flattening() {
        let a = di();
        let b = build_double_integrator_ma(2.0, 1.0).unwrap();
        let c = build_double_integrator_ma(1.0, 2.0).unwrap();
        let left = parallel_compose(&parallel_compose(&a, &b).unwrap(), &c).unwrap();
        let right = parallel_compose(&a, &parallel_compose(&b, &c).unwrap()).unwrap();
        assert_eq!(left.num_primitives(), right.num_primitives());
        let mut el = left.enumerate_edges().unwrap();
        let mut er = right.enumerate_edges().unwrap();
        el.sort();
        er.sort();
        assert_eq!(el, er);
    }

    #[test]
    fn composite_guards_decompose_blockwise() {
        use rand::Rng;
        use rand::SeedableRng;
        let ma2 = parallel_compose(&di(), &di()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let sigma = Label::new(vec![1, 0]).unwrap();
        let factors = edge_guard_factors(&ma2, &[FORWARD, HOLD], &sigma).unwrap();
        let g1 = ma2.components[0]
            .guard_of(FORWARD, &Label(vec![1]))
            .unwrap()
            .clone();
        let i2 = component_inner(&ma2.components[1], HOLD).unwrap();
        for _ in 0..500 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let in_factors = factors[0].contains(&x[0..2]) && factors[1].contains(&x[2..4]);
            let expected = g1.contains(&x[0..2]) && i2.contains(&x[2..4]);
            assert_eq!(in_factors, expected);
        }
        // Reset acts blockwise: composite reset of (1,0) shifts only block 1.
        let x = vec![1.0, 0.4, 0.7, -0.2];
        let y = ma2.apply_reset(&sigma, &x);
        assert_eq!(y, vec![0.0, 0.4, 0.7, -0.2]);
    }

    #[test]
    fn reject_components_with_epsilon_edges() {
        let mut bad = di();
        let guard = bad.components[0].edges[0].guard.clone();
        bad.components[0].edges.push(MaEdge {
            source: HOLD,
            label: Label::epsilon(1),
            target: HOLD,
            guard,
        });
        assert!(parallel_compose(&bad, &di()).is_err());
    }
}
