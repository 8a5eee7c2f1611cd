//! Conformance checks for the seven structural conditions on maneuver
//! automata: no ε events, target-independent guards, disjoint guards for
//! distinct labels, no guard re-entry after a reset, resets landing inside
//! the next invariant, hold-style invariance, and guaranteed guard exit.
//!
//! Conditions (i)-(v) are decided exactly with the polytope algebra (on the
//! factored per-component sets for composites). Conditions (vi) and (vii)
//! cannot be decided symbolically for arbitrary automata, so they are
//! certified by exhaustive sampled simulation and reported as `SampledPass`.

use super::flow::{locate_crossing, AffineFlow};
use super::{MaError, ManeuverAutomaton};
use crate::compose::edge_guard_factors;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Slack allowed on invariant membership along simulated trajectories;
/// trajectories may slide along faces and the integrator is not exact.
const TRAJ_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimCheckConfig {
    /// Initial states sampled per invariant for conditions (vi)/(vii).
    pub samples: usize,
    /// Integration step; defaults to `min_i d_i / (200 · v_out)` where
    /// `v_out` bounds the output speed over the invariants.
    pub dt: Option<f64>,
    /// Simulation horizon; defaults to `50 · max_i d_i / v_out`.
    pub t_max: Option<f64>,
    pub seed: u64,
}

impl Default for SimCheckConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            dt: None,
            t_max: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionStatus {
    Pass,
    SampledPass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub status: ConditionStatus,
    pub witnesses: Vec<String>,
}

impl ConditionReport {
    fn pass() -> Self {
        Self {
            status: ConditionStatus::Pass,
            witnesses: Vec::new(),
        }
    }

    fn ok(&self) -> bool {
        matches!(
            self.status,
            ConditionStatus::Pass | ConditionStatus::SampledPass
        )
    }
}

/// Per-condition outcome of the conformance suite, indexed (i) through (vii).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub conditions: Vec<ConditionReport>,
}

impl AssumptionReport {
    pub fn condition(&self, number: usize) -> &ConditionReport {
        &self.conditions[number - 1]
    }

    pub fn all_ok(&self) -> bool {
        self.conditions.iter().all(|c| c.ok())
    }

    pub fn summary(&self) -> String {
        let names = ["i", "ii", "iii", "iv", "v", "vi", "vii"];
        self.conditions
            .iter()
            .zip(names)
            .map(|(c, n)| format!("({n}) {:?}", c.status))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Characteristic output speed of a component: the largest output-coordinate
/// derivative over the invariant hull vertices (affine fields attain their
/// extrema at vertices).
fn output_speed_bound(ma: &ManeuverAutomaton, component: usize) -> Result<f64, MaError> {
    let c = &ma.components[component];
    let mut v_out = 0.0f64;
    for m in 0..c.primitives.len() {
        for v in c.primitives[m].invariant.hull_vertices()? {
            let dx = c.closed_loop_field(m, &v)?;
            for &o in &c.output_map {
                v_out = v_out.max(dx[o].abs());
            }
        }
    }
    Ok(v_out.max(1e-12))
}

/// Default integration step for an automaton.
pub fn default_dt(ma: &ManeuverAutomaton) -> Result<f64, MaError> {
    let mut dt = f64::INFINITY;
    for j in 0..ma.components.len() {
        let v = output_speed_bound(ma, j)?;
        for &d in &ma.components[j].geometry.lengths {
            dt = dt.min(d / (200.0 * v));
        }
    }
    Ok(dt)
}

/// Default simulation horizon for an automaton.
pub fn default_t_max(ma: &ManeuverAutomaton) -> Result<f64, MaError> {
    let mut t = 0.0f64;
    for j in 0..ma.components.len() {
        let v = output_speed_bound(ma, j)?;
        for &d in &ma.components[j].geometry.lengths {
            t = t.max(50.0 * d / v);
        }
    }
    Ok(t)
}

/// Identity of a guard factor for memoizing pairwise set computations.
fn factor_key(tuple: &[usize], sigma_part: &super::Label, j: usize) -> String {
    if sigma_part.is_epsilon() {
        format!("inner:{}", tuple[j])
    } else {
        format!("guard:{}:{}", tuple[j], sigma_part)
    }
}

/// Run the full conformance suite.
pub fn check_ma_assumptions(
    ma: &ManeuverAutomaton,
    cfg: &SimCheckConfig,
) -> Result<AssumptionReport, MaError> {
    let mut conditions = Vec::with_capacity(7);

    // (i) The empty label never occurs on an edge.
    let mut c1 = ConditionReport::pass();
    for (j, comp) in ma.components.iter().enumerate() {
        for e in &comp.edges {
            if e.label.is_epsilon() {
                c1.status = ConditionStatus::Fail;
                c1.witnesses.push(format!(
                    "component {j}: edge ({}, eps, {})",
                    comp.primitives[e.source].name, comp.primitives[e.target].name
                ));
            }
        }
    }
    conditions.push(c1);

    // (ii) Guards with equal source and label are set-equal. Composite
    // guards factor over (source, label) pairs, so the component edges carry
    // the whole condition.
    let mut c2 = ConditionReport::pass();
    for (j, comp) in ma.components.iter().enumerate() {
        for m in 0..comp.primitives.len() {
            for sigma in comp.sigma(m)? {
                let guards: Vec<_> = comp
                    .edges
                    .iter()
                    .filter(|e| e.source == m && e.label == sigma)
                    .collect();
                for e in guards.iter().skip(1) {
                    if !guards[0].guard.set_eq(&e.guard)? {
                        c2.status = ConditionStatus::Fail;
                        c2.witnesses.push(format!(
                            "component {j}: guards of ({}, {sigma}) differ",
                            comp.primitives[m].name
                        ));
                    }
                }
            }
        }
    }
    conditions.push(c2);

    // (iii) Guards of distinct labels from one source are disjoint.
    let mut c3 = ConditionReport::pass();
    let mut disjoint_cache: HashMap<(usize, String, String), bool> = HashMap::new();
    {
        let n_prims = ma.num_primitives();
        for m_idx in 0..n_prims {
            let tuple = ma.primitive_tuple(m_idx);
            let labels = ma.sigma_ma(&tuple)?;
            for a in 0..labels.len() {
                for b in (a + 1)..labels.len() {
                    let fa = edge_guard_factors(ma, &tuple, &labels[a])?;
                    let fb = edge_guard_factors(ma, &tuple, &labels[b])?;
                    let pa = ma.split_label(&labels[a]);
                    let pb = ma.split_label(&labels[b]);
                    let mut disjoint = false;
                    for j in 0..ma.components.len() {
                        let key = (
                            j,
                            factor_key(&tuple, &pa[j], j),
                            factor_key(&tuple, &pb[j], j),
                        );
                        let d = if let Some(&v) = disjoint_cache.get(&key) {
                            v
                        } else {
                            let v = fa[j].is_disjoint_from(&fb[j])?;
                            disjoint_cache.insert(key, v);
                            v
                        };
                        if d {
                            disjoint = true;
                            break;
                        }
                    }
                    if !disjoint {
                        c3.status = ConditionStatus::Fail;
                        c3.witnesses.push(format!(
                            "{}: guards of {} and {} intersect",
                            ma.primitive_name(&tuple),
                            labels[a],
                            labels[b]
                        ));
                    }
                }
            }
        }
    }
    conditions.push(c3);

    // Composite edges drive (iv) and (v).
    let edges = ma.enumerate_edges()?;

    // (iv) A reset image never lands on a guard of the next primitive.
    let mut c4 = ConditionReport::pass();
    let mut c4_cache: HashMap<(usize, String, String), bool> = HashMap::new();
    for (m1, s1, m2) in &edges {
        let p1 = ma.split_label(s1);
        let f1 = edge_guard_factors(ma, m1, s1)?;
        for s2 in ma.sigma_ma(m2)? {
            let p2 = ma.split_label(&s2);
            let f2 = edge_guard_factors(ma, m2, &s2)?;
            let mut disjoint = false;
            for (j, comp) in ma.components.iter().enumerate() {
                let key = (
                    j,
                    format!("{}>{}", factor_key(m1, &p1[j], j), p1[j]),
                    factor_key(m2, &p2[j], j),
                );
                let d = if let Some(&v) = c4_cache.get(&key) {
                    v
                } else {
                    let shifted = f1[j].translate(&comp.reset_vector(&p1[j]));
                    let v = shifted.is_disjoint_from(&f2[j])?;
                    c4_cache.insert(key, v);
                    v
                };
                if d {
                    disjoint = true;
                    break;
                }
            }
            if !disjoint {
                c4.status = ConditionStatus::Fail;
                c4.witnesses.push(format!(
                    "reset of ({}, {s1}) meets guard ({}, {s2})",
                    ma.primitive_name(m1),
                    ma.primitive_name(m2)
                ));
            }
        }
    }
    conditions.push(c4);

    // (v) Reset images are contained in the target invariant.
    let mut c5 = ConditionReport::pass();
    let mut c5_cache: HashMap<(usize, String, usize), bool> = HashMap::new();
    for (m1, s1, m2) in &edges {
        let p1 = ma.split_label(s1);
        let f1 = edge_guard_factors(ma, m1, s1)?;
        for (j, comp) in ma.components.iter().enumerate() {
            let key = (j, factor_key(m1, &p1[j], j), m2[j]);
            let ok = if let Some(&v) = c5_cache.get(&key) {
                v
            } else {
                let shifted = f1[j].translate(&comp.reset_vector(&p1[j]));
                let v = shifted.is_subset_of(&comp.primitives[m2[j]].invariant)?;
                c5_cache.insert(key, v);
                v
            };
            if !ok {
                c5.status = ConditionStatus::Fail;
                c5.witnesses.push(format!(
                    "reset of ({}, {s1}) leaves invariant of {} (component {j})",
                    ma.primitive_name(m1),
                    ma.primitive_name(m2)
                ));
            }
        }
    }
    conditions.push(c5);

    // (vi)/(vii) by sampled simulation of the stacked closed loop.
    let dt = match cfg.dt {
        Some(v) => v,
        None => default_dt(ma)?,
    };
    let t_max = match cfg.t_max {
        Some(v) => v,
        None => default_t_max(ma)?,
    };
    let (c6, c7) = sampled_flow_checks(ma, cfg, dt, t_max)?;
    conditions.push(c6);
    conditions.push(c7);

    Ok(AssumptionReport { conditions })
}

/// Monitored exit faces of one component primitive: for each outgoing label,
/// the pinned coordinates as `(state index, plane, sign)` and the guard.
struct MonitoredLabel<'a> {
    label: super::Label,
    pins: Vec<(usize, f64, f64)>,
    guard: &'a crate::geometry::PolytopicSet,
}

fn monitored_labels<'a>(
    comp: &'a super::MaComponent,
    m: usize,
) -> Result<Vec<MonitoredLabel<'a>>, MaError> {
    let mut out = Vec::new();
    for sigma in comp.sigma(m)? {
        let mut pins = Vec::new();
        for i in 0..comp.p {
            match sigma.0[i] {
                1 => pins.push((comp.output_map[i], comp.geometry.lengths[i], 1.0)),
                -1 => pins.push((comp.output_map[i], 0.0, -1.0)),
                _ => {}
            }
        }
        let guard = comp.guard_of(m, &sigma).expect("label from sigma has an edge");
        out.push(MonitoredLabel {
            label: sigma,
            pins,
            guard,
        });
    }
    Ok(out)
}

/// Crossing indicator: non-negative once every pinned coordinate has reached
/// its face plane.
fn pin_gap(pins: &[(usize, f64, f64)], x: &[f64]) -> f64 {
    pins.iter()
        .map(|&(i, plane, sign)| sign * (x[i] - plane))
        .fold(f64::INFINITY, f64::min)
}

/// Project the pinned coordinates of a located crossing state exactly onto
/// their face planes. The bisection is time-tolerance based, so the raw
/// state can overshoot the plane by speed × tolerance, which would defeat
/// the guard membership margin.
fn snap_pins(pins: &[(usize, f64, f64)], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for &(i, plane, _) in pins {
        y[i] = plane;
    }
    y
}

fn sampled_flow_checks(
    ma: &ManeuverAutomaton,
    cfg: &SimCheckConfig,
    dt: f64,
    t_max: f64,
) -> Result<(ConditionReport, ConditionReport), MaError> {
    let mut c6 = ConditionReport {
        status: ConditionStatus::SampledPass,
        witnesses: Vec::new(),
    };
    let mut c7 = ConditionReport {
        status: ConditionStatus::SampledPass,
        witnesses: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = (t_max / dt).ceil() as usize;

    for m_idx in 0..ma.num_primitives() {
        let tuple = ma.primitive_tuple(m_idx);
        let stationary = ma.sigma_ma(&tuple)?.is_empty();
        let flows: Vec<AffineFlow> = tuple
            .iter()
            .zip(&ma.components)
            .map(|(&m, c)| AffineFlow::from_primitive(c, m))
            .collect();
        let monitored: Vec<Vec<MonitoredLabel>> = tuple
            .iter()
            .zip(&ma.components)
            .map(|(&m, c)| monitored_labels(c, m))
            .collect::<Result<_, _>>()?;

        for sample in 0..cfg.samples {
            // Factor-wise uniform sample of the composite invariant.
            let mut xs: Vec<Vec<f64>> = Vec::with_capacity(ma.components.len());
            for (&m, c) in tuple.iter().zip(&ma.components) {
                xs.push(c.primitives[m].invariant.sample_uniform(&mut rng, 10_000)?);
            }

            if stationary {
                // (vi): must never leave the invariant.
                let mut ok = true;
                'steps6: for _ in 0..steps {
                    for (j, c) in ma.components.iter().enumerate() {
                        xs[j] = flows[j].rk4(&xs[j], dt);
                        if !c.primitives[tuple[j]]
                            .invariant
                            .contains_with(&xs[j], TRAJ_TOL)
                        {
                            ok = false;
                            break 'steps6;
                        }
                    }
                }
                if !ok {
                    c6.status = ConditionStatus::Fail;
                    if c6.witnesses.len() < 8 {
                        c6.witnesses.push(format!(
                            "{} sample {sample}: trajectory left the invariant",
                            ma.primitive_name(&tuple)
                        ));
                    }
                }
                continue;
            }

            // (vii): must exit through exactly one guard within the horizon.
            match run_until_exit(ma, &tuple, &flows, &monitored, xs, dt, steps) {
                Ok(Some(_)) => {}
                Ok(None) => {
                    if c7.status == ConditionStatus::SampledPass {
                        c7.status = ConditionStatus::Inconclusive;
                    }
                    if c7.witnesses.len() < 8 {
                        c7.witnesses.push(format!(
                            "{} sample {sample}: no guard reached within t_max={t_max}",
                            ma.primitive_name(&tuple)
                        ));
                    }
                }
                Err(msg) => {
                    c7.status = ConditionStatus::Fail;
                    if c7.witnesses.len() < 8 {
                        c7.witnesses.push(format!(
                            "{} sample {sample}: {msg}",
                            ma.primitive_name(&tuple)
                        ));
                    }
                }
            }
        }
    }
    Ok((c6, c7))
}

/// Integrate one sample until a guard exit. `Ok(Some((label, time)))` on a
/// clean exit, `Ok(None)` when the horizon runs out, `Err` describing any
/// violation (invariant exit without a guard, ambiguous guard hit).
#[allow(clippy::too_many_arguments)]
fn run_until_exit(
    ma: &ManeuverAutomaton,
    tuple: &[usize],
    flows: &[AffineFlow],
    monitored: &[Vec<MonitoredLabel>],
    mut xs: Vec<Vec<f64>>,
    dt: f64,
    steps: usize,
) -> Result<Option<(super::Label, f64)>, String> {
    let mut t = 0.0;
    for _ in 0..steps {
        // A state already sitting in a guard exits immediately (samples may
        // start exactly on an exit face).
        for (j, labels) in monitored.iter().enumerate() {
            for ml in labels {
                if pin_gap(&ml.pins, &xs[j]) >= -1e-12
                    && ml.guard.contains(&snap_pins(&ml.pins, &xs[j]))
                {
                    let mut sigma = super::Label::epsilon(0);
                    for (jj, c) in ma.components.iter().enumerate() {
                        let part = if jj == j {
                            ml.label.clone()
                        } else {
                            super::Label::epsilon(c.p)
                        };
                        sigma = sigma.concat(&part);
                    }
                    return Ok(Some((sigma, t)));
                }
            }
        }
        // Earliest face crossing across all components in this step.
        let mut best: Option<f64> = None;
        for (j, labels) in monitored.iter().enumerate() {
            for ml in labels.iter() {
                if pin_gap(&ml.pins, &xs[j]) >= 0.0 {
                    continue;
                }
                if let Some((tau, _)) =
                    locate_crossing(&flows[j], &xs[j], dt, |x| pin_gap(&ml.pins, x))
                {
                    if best.map_or(true, |bt| tau < bt) {
                        best = Some(tau);
                    }
                }
            }
        }
        if let Some(tau) = best {
            // States of every component at the crossing instant.
            let at_tau: Vec<Vec<f64>> = xs
                .iter()
                .zip(flows)
                .map(|(x, f)| f.rk4(x, tau))
                .collect();
            // Components whose guard contains the (plane-snapped) crossing
            // state form the composite label; simultaneous crossings merge.
            let mut parts: Vec<super::Label> = Vec::with_capacity(ma.components.len());
            let mut hits = 0;
            for (j, labels) in monitored.iter().enumerate() {
                let mut part = super::Label::epsilon(ma.components[j].p);
                let mut local_hits = 0;
                for ml in labels {
                    if pin_gap(&ml.pins, &at_tau[j]) >= -TRAJ_TOL
                        && ml.guard.contains(&snap_pins(&ml.pins, &at_tau[j]))
                    {
                        part = ml.label.clone();
                        local_hits += 1;
                    }
                }
                if local_hits > 1 {
                    return Err(format!(
                        "state {:?} lies in several guards of component {j}",
                        at_tau[j]
                    ));
                }
                hits += local_hits;
                parts.push(part);
            }
            if hits > 0 {
                let mut sigma = parts[0].clone();
                for part in &parts[1..] {
                    sigma = sigma.concat(part);
                }
                // Non-crossing components must still sit in their invariant.
                for (j, c) in ma.components.iter().enumerate() {
                    if parts[j].is_epsilon()
                        && !c.primitives[tuple[j]]
                            .invariant
                            .contains_with(&at_tau[j], TRAJ_TOL)
                    {
                        return Err(format!(
                            "component {j} left its invariant at the exit instant"
                        ));
                    }
                }
                return Ok(Some((sigma, t + tau)));
            }
            // Crossing located but no guard hit (e.g. an excluded boundary
            // point): fall through to a plain step and re-examine.
        }
        for (j, c) in ma.components.iter().enumerate() {
            xs[j] = flows[j].rk4(&xs[j], dt);
            if !c.primitives[tuple[j]]
                .invariant
                .contains_with(&xs[j], TRAJ_TOL)
            {
                return Err(format!(
                    "component {j} left its invariant at state {:?} without a guard hit",
                    xs[j]
                ));
            }
        }
        t += dt;
    }
    Ok(None)
}
