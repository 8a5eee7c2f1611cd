//! The double-integrator primitive family: Hold, Forward, Backward over one
//! box axis, with affine feedbacks derived from reach control design.

use super::{BoxGeometry, Label, MaComponent, MaEdge, ManeuverAutomaton, MotionPrimitive, MaError};
use crate::geometry::{Halfspace, PolytopicSet};

/// Index of the Hold primitive in the built automaton.
pub const HOLD: usize = 0;
/// Index of the Forward primitive.
pub const FORWARD: usize = 1;
/// Index of the Backward primitive.
pub const BACKWARD: usize = 2;

/// Build the three-primitive automaton for `ẋ₁ = x₂, ẋ₂ = u` with output
/// `y = x₁` over a segment of length `d` and control bound `u_max`.
///
/// With `ū = √(d·u_max)` and the six vertices
/// `(0,±ū), (0,0), (d,±ū), (d,0)`:
/// Hold stabilizes inside `co{(0,0),(0,ū),(d,−ū),(d,0)}`, Forward drives
/// trajectories out through `{d}×(0,ū]`, Backward out through `{0}×[−ū,0)`.
/// The points `(0,0)` and `(d,0)` are excluded from every invariant.
pub fn build_double_integrator_ma(d: f64, u_max: f64) -> Result<ManeuverAutomaton, MaError> {
    if !(d > 0.0) {
        return Err(MaError::NonpositiveParameter(d));
    }
    if !(u_max > 0.0) {
        return Err(MaError::NonpositiveParameter(u_max));
    }
    let ubar = (d * u_max).sqrt();
    let excluded = vec![vec![0.0, 0.0], vec![d, 0.0]];

    let hold_inv = PolytopicSet::from_polygon(&[[0.0, 0.0], [d, -ubar], [d, 0.0], [0.0, ubar]])?
        .with_excluded(excluded.clone());
    let fwd_inv = PolytopicSet::from_polygon(&[[0.0, 0.0], [d, -ubar], [d, ubar], [0.0, ubar]])?
        .with_excluded(excluded.clone());
    let bwd_inv = PolytopicSet::from_polygon(&[[0.0, -ubar], [d, -ubar], [d, 0.0], [0.0, ubar]])?
        .with_excluded(excluded.clone());

    let k_vel = -2.0 * u_max / ubar;
    let hold = MotionPrimitive {
        name: "H".into(),
        gain: vec![vec![-2.0 * u_max / d, k_vel]],
        bias: vec![u_max],
        invariant: hold_inv,
    };
    let forward = MotionPrimitive {
        name: "F".into(),
        gain: vec![vec![0.0, k_vel]],
        bias: vec![u_max],
        invariant: fwd_inv,
    };
    let backward = MotionPrimitive {
        name: "B".into(),
        gain: vec![vec![0.0, k_vel]],
        bias: vec![-u_max],
        invariant: bwd_inv,
    };

    // Exit face of Forward: {d} x (0, ū].
    let fwd_guard = PolytopicSet::new(
        2,
        vec![
            Halfspace::closed(vec![1.0, 0.0], d)?,
            Halfspace::closed(vec![-1.0, 0.0], -d)?,
            Halfspace::closed(vec![0.0, 1.0], ubar)?,
            Halfspace::strict(vec![0.0, -1.0], 0.0)?,
        ],
    )?;
    // Exit face of Backward: {0} x [−ū, 0).
    let bwd_guard = PolytopicSet::new(
        2,
        vec![
            Halfspace::closed(vec![1.0, 0.0], 0.0)?,
            Halfspace::closed(vec![-1.0, 0.0], 0.0)?,
            Halfspace::closed(vec![0.0, -1.0], ubar)?,
            Halfspace::strict(vec![0.0, 1.0], 0.0)?,
        ],
    )?;

    let plus = Label::new(vec![1])?;
    let minus = Label::new(vec![-1])?;
    let edges = vec![
        MaEdge {
            source: FORWARD,
            label: plus.clone(),
            target: HOLD,
            guard: fwd_guard.clone(),
        },
        MaEdge {
            source: FORWARD,
            label: plus,
            target: FORWARD,
            guard: fwd_guard,
        },
        MaEdge {
            source: BACKWARD,
            label: minus.clone(),
            target: HOLD,
            guard: bwd_guard.clone(),
        },
        MaEdge {
            source: BACKWARD,
            label: minus,
            target: BACKWARD,
            guard: bwd_guard,
        },
    ];

    let component = MaComponent {
        p: 1,
        n: 2,
        output_map: vec![0],
        geometry: BoxGeometry::new(vec![d])?,
        drift: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        input: vec![vec![0.0], vec![1.0]],
        primitives: vec![hold, forward, backward],
        edges,
    };
    ManeuverAutomaton::from_component(component)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ubar_from_parameters() {
        let ma = build_double_integrator_ma(4.0, 1.0).unwrap();
        let c = &ma.components[0];
        // ū = sqrt(4*1) = 2: the Forward guard top sits at velocity 2.
        let g = c.guard_of(FORWARD, &Label(vec![1])).unwrap();
        assert!(g.contains(&[4.0, 2.0]));
        assert!(!g.contains(&[4.0, 2.1]));
        assert!(build_double_integrator_ma(0.0, 1.0).is_err());
        assert!(build_double_integrator_ma(1.0, -1.0).is_err());
    }

    #[test]
    fn invariants_match_the_stated_hulls() {
        let ma = build_double_integrator_ma(1.0, 1.0).unwrap();
        let c = &ma.components[0];
        let hold = &c.primitives[HOLD].invariant;
        // co{(0,0),(0,1),(1,-1),(1,0)} minus the two excluded points.
        assert!(hold.contains(&[0.5, 0.2]));
        assert!(hold.contains(&[1.0, -1.0]));
        assert!(hold.contains(&[0.0, 1.0]));
        assert!(!hold.contains(&[0.0, 0.0]));
        assert!(!hold.contains(&[1.0, 0.0]));
        assert!(!hold.contains(&[0.5, 0.8])); // above the top edge
        assert!(!hold.contains(&[0.2, -0.5])); // below the bottom edge

        let fwd = &c.primitives[FORWARD].invariant;
        assert!(fwd.contains(&[0.5, 1.0]));
        assert!(fwd.contains(&[1.0, -1.0]));
        assert!(!fwd.contains(&[0.2, -0.5]));

        let bwd = &c.primitives[BACKWARD].invariant;
        assert!(bwd.contains(&[0.5, -1.0]));
        assert!(bwd.contains(&[0.0, 1.0]));
        assert!(!bwd.contains(&[0.5, 0.8]));
    }

    #[test]
    fn guards_are_the_half_open_faces() {
        let ma = build_double_integrator_ma(1.0, 1.0).unwrap();
        let c = &ma.components[0];
        let gf = c.guard_of(FORWARD, &Label(vec![1])).unwrap();
        assert!(gf.contains(&[1.0, 1.0]));
        assert!(gf.contains(&[1.0, 0.5]));
        assert!(!gf.contains(&[1.0, 0.0]));
        assert!(!gf.contains(&[0.9, 0.5]));
        let gb = c.guard_of(BACKWARD, &Label(vec![-1])).unwrap();
        assert!(gb.contains(&[0.0, -1.0]));
        assert!(!gb.contains(&[0.0, 0.0]));
        // Both edges with the same label share the guard set.
        let guards: Vec<_> = c
            .edges
            .iter()
            .filter(|e| e.source == FORWARD)
            .map(|e| &e.guard)
            .collect();
        assert!(guards[0].set_eq(guards[1]).unwrap());
    }

    #[test]
    fn four_edges_per_transition_diagram() {
        let ma = build_double_integrator_ma(1.0, 1.0).unwrap();
        let c = &ma.components[0];
        assert_eq!(c.edges.len(), 4);
        assert_eq!(c.targets(FORWARD, &Label(vec![1])), vec![HOLD, FORWARD]);
        assert_eq!(c.targets(BACKWARD, &Label(vec![-1])), vec![HOLD, BACKWARD]);
        assert!(c.targets(HOLD, &Label(vec![1])).is_empty());
    }

    #[test]
    fn guard_subset_invariant_and_face() {
        // Structural validation covers guard ⊆ invariant and ⊆ h^{-1}(F_σ);
        // rebuilding through from_component exercises it.
        let ma = build_double_integrator_ma(2.0, 0.5).unwrap();
        assert!(ma.components[0].validate().is_ok());
    }
}
