//! Hybrid closed-loop execution: world-frame integration of the active
//! primitive's feedback, guard event detection in the canonical box frame,
//! policy-driven primitive switches, and reach-avoid verification of the
//! resulting traces.
//!
//! The world-frame state never jumps: at an event only the discrete
//! location and primitive change. A shadow copy of the canonical-frame
//! trajectory (which does undergo the face-to-face resets) is integrated
//! independently; the difference between `world − d∘l` and the shadow is
//! tracked as the translation error, which ties the physical trajectory to
//! the box-frame execution.

use crate::geometry::EPS_GEO;
use crate::ma::check::default_dt;
use crate::ma::flow::{locate_crossing, AffineFlow};
use crate::ma::{MaError, ManeuverAutomaton};
use crate::planning::PolicyQuery;
use crate::product::{ExplicitPa, PaGraph};
use crate::workspace::GridSpec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Membership slack along integrated trajectories.
const TRAJ_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Integration step; `None` derives `min_i d_i / (200 v_out)`.
    pub dt: Option<f64>,
    pub t_max: f64,
    /// Crossings within this window of the earliest one merge into a joint
    /// event; also the bisection refinement target.
    pub event_tol: f64,
    /// Zeno guard: more transitions than this within one time unit trips
    /// the flag.
    pub max_transitions_per_unit_time: usize,
    /// Dwell period after which a hold primitive on the goal confirms the
    /// reach condition (also the early-termination dwell).
    pub dwell_time: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: None,
            t_max: 60.0,
            event_tol: 1e-9,
            max_transitions_per_unit_time: 50,
            dwell_time: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceInterval {
    pub start: f64,
    pub end: f64,
    pub location: Vec<i64>,
    pub primitive: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub sigma: Vec<i8>,
    pub from_location: Vec<i64>,
    pub from_primitive: Vec<usize>,
    pub to_location: Vec<i64>,
    pub to_primitive: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    /// World-frame stacked state (per component block).
    pub state: Vec<f64>,
    /// Interval index the sample belongs to.
    pub interval: usize,
}

/// A complete hybrid execution record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridTrace {
    pub intervals: Vec<TraceInterval>,
    pub events: Vec<TraceEvent>,
    pub samples: Vec<TraceSample>,
    pub zeno: bool,
    /// Largest deviation between `world − d∘l` and the independently
    /// integrated canonical trajectory, measured at event times.
    pub translation_error: f64,
    /// True when the run ended in a hold primitive that dwelt for the
    /// configured confirmation period.
    pub settled: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("initial state lies outside the invariant of {0}")]
    StartOutsideInvariant(String),
    #[error("state left the invariant at t={t} (component {component}) without a guard hit")]
    InvariantExit {
        t: f64,
        component: usize,
        prefix: Box<HybridTrace>,
    },
    #[error("policy has no assignment at t={t} for location {location:?}, primitive {primitive}, event {sigma:?}")]
    PolicyMiss {
        t: f64,
        location: Vec<i64>,
        primitive: String,
        sigma: Vec<i8>,
    },
    #[error("crossing state lies in several guards of component {component} at t={t}")]
    AmbiguousCrossing { t: f64, component: usize },
    #[error("event leads outside the safe set at t={t}")]
    UnsafeTransition { t: f64 },
    #[error(transparent)]
    Ma(#[from] MaError),
}

/// Draw initial conditions from the feasible product states: a state is
/// picked uniformly, then a continuous state is sampled uniformly from the
/// primitive's invariant and translated into the state's box.
pub fn sample_initial_conditions(
    pa: &ExplicitPa,
    pa0: &[u32],
    count: usize,
    seed: u64,
) -> Result<Vec<(Vec<i64>, Vec<usize>, Vec<f64>)>, SimError> {
    if pa0.is_empty() {
        return Err(SimError::StartOutsideInvariant("empty initial set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ma = &pa.ma;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let q = pa0[rng.gen_range(0..pa0.len())];
        let st = pa.state(q);
        let location = pa.ots.location(st.location).to_vec();
        let tuple = ma.primitive_tuple(st.primitive as usize);
        let mut world = Vec::with_capacity(ma.n());
        let mut out_off = 0;
        for (j, c) in ma.components.iter().enumerate() {
            let canonical = c.primitives[tuple[j]]
                .invariant
                .sample_uniform(&mut rng, 10_000)
                .map_err(MaError::from)?;
            let mut block = canonical;
            for i in 0..c.p {
                block[c.output_map[i]] +=
                    c.geometry.lengths[i] * location[out_off + i] as f64;
            }
            world.extend(block);
            out_off += c.p;
        }
        out.push((location, tuple, world));
    }
    Ok(out)
}

/// Exit-face monitor of one component primitive.
struct Monitor {
    sigma: Vec<i8>,
    pins: Vec<(usize, f64, f64)>,
    guard: crate::geometry::PolytopicSet,
}

fn monitors_for(ma: &ManeuverAutomaton, j: usize, m: usize) -> Result<Vec<Monitor>, MaError> {
    let c = &ma.components[j];
    let mut out = Vec::new();
    for sigma in c.sigma(m)? {
        let mut pins = Vec::new();
        for i in 0..c.p {
            match sigma.0[i] {
                1 => pins.push((c.output_map[i], c.geometry.lengths[i], 1.0)),
                -1 => pins.push((c.output_map[i], 0.0, -1.0)),
                _ => {}
            }
        }
        let guard = c
            .guard_of(m, &sigma)
            .expect("event label has an edge")
            .clone();
        out.push(Monitor {
            sigma: sigma.0.clone(),
            pins,
            guard,
        });
    }
    Ok(out)
}

fn pin_gap(pins: &[(usize, f64, f64)], x: &[f64]) -> f64 {
    pins.iter()
        .map(|&(i, plane, sign)| sign * (x[i] - plane))
        .fold(f64::INFINITY, f64::min)
}

fn snap_pins(pins: &[(usize, f64, f64)], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for &(i, plane, _) in pins {
        y[i] = plane;
    }
    y
}

/// Per-component runtime pieces of the active primitive.
struct ActivePrimitive {
    tuple: Vec<usize>,
    world_flows: Vec<AffineFlow>,
    canon_flows: Vec<AffineFlow>,
    monitors: Vec<Vec<Monitor>>,
    stationary: bool,
}

struct Frame<'a> {
    ma: &'a ManeuverAutomaton,
    /// Per component: offset of its output block inside the location vector.
    out_offsets: Vec<usize>,
}

impl<'a> Frame<'a> {
    fn new(ma: &'a ManeuverAutomaton) -> Self {
        let mut out_offsets = Vec::with_capacity(ma.components.len());
        let mut off = 0;
        for c in &ma.components {
            out_offsets.push(off);
            off += c.p;
        }
        Self { ma, out_offsets }
    }

    /// World translation `h_o^{-1}(d ∘ l)` of one component block.
    fn shift(&self, j: usize, location: &[i64]) -> Vec<f64> {
        let c = &self.ma.components[j];
        let mut s = vec![0.0; c.n];
        for i in 0..c.p {
            s[c.output_map[i]] =
                c.geometry.lengths[i] * location[self.out_offsets[j] + i] as f64;
        }
        s
    }

    fn activate(&self, tuple: &[usize], location: &[i64]) -> Result<ActivePrimitive, MaError> {
        let mut world_flows = Vec::new();
        let mut canon_flows = Vec::new();
        let mut monitors = Vec::new();
        for (j, c) in self.ma.components.iter().enumerate() {
            let canon = AffineFlow::from_primitive(c, tuple[j]);
            // World flow of the translated feedback: same linear part with
            // the bias shifted by -A_cl s.
            let s = self.shift(j, location);
            let mut b = canon.b.clone();
            for (i, row) in canon.a.iter().enumerate() {
                b[i] -= row.iter().zip(&s).map(|(a, v)| a * v).sum::<f64>();
            }
            world_flows.push(AffineFlow {
                a: canon.a.clone(),
                b,
            });
            canon_flows.push(canon);
            monitors.push(monitors_for(self.ma, j, tuple[j])?);
        }
        let stationary = self.ma.sigma_ma(tuple)?.is_empty();
        Ok(ActivePrimitive {
            tuple: tuple.to_vec(),
            world_flows,
            canon_flows,
            monitors,
            stationary,
        })
    }
}

/// When a run terminates: on a confirmed dwell in a hold primitive, or as
/// soon as an event lands on a target location (stage handover).
#[derive(Debug, Clone, PartialEq)]
pub enum StopCondition {
    Settle,
    ReachLocation(Vec<i64>),
}

/// Continuous and discrete state at the end of a run, for stage chaining.
#[derive(Debug, Clone)]
pub struct EndState {
    pub t: f64,
    pub location: Vec<i64>,
    pub primitive: Vec<usize>,
    pub world: Vec<f64>,
    /// Whether the stop condition was met (false means the horizon ran out).
    pub stopped: bool,
}

/// Integrate one closed-loop execution under a policy.
///
/// The start is a product state plus a world-frame continuous state inside
/// the translated invariant. Events switch the primitive according to the
/// policy and advance the location; the world state continues unchanged.
pub fn simulate_execution(
    ma: &ManeuverAutomaton,
    grid: &GridSpec,
    policy: &dyn PolicyQuery,
    start_location: &[i64],
    start_primitive: &[usize],
    start_world: &[f64],
    cfg: &SimConfig,
) -> Result<HybridTrace, SimError> {
    simulate_with_stop(
        ma,
        grid,
        policy,
        start_location,
        start_primitive,
        start_world,
        cfg,
        StopCondition::Settle,
    )
    .map(|(trace, _)| trace)
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_with_stop(
    ma: &ManeuverAutomaton,
    grid: &GridSpec,
    policy: &dyn PolicyQuery,
    start_location: &[i64],
    start_primitive: &[usize],
    start_world: &[f64],
    cfg: &SimConfig,
    stop: StopCondition,
) -> Result<(HybridTrace, EndState), SimError> {
    let frame = Frame::new(ma);
    let dt = match cfg.dt {
        Some(v) => v,
        None => default_dt(ma)?,
    };
    let mut location = start_location.to_vec();
    let mut active = frame.activate(start_primitive, &location)?;

    // Split the world state per component and derive the canonical shadow.
    let mut world: Vec<Vec<f64>> = Vec::new();
    let mut canon: Vec<Vec<f64>> = Vec::new();
    {
        let mut off = 0;
        for (j, c) in ma.components.iter().enumerate() {
            let block = start_world[off..off + c.n].to_vec();
            let s = frame.shift(j, &location);
            let cb: Vec<f64> = block.iter().zip(&s).map(|(a, b)| a - b).collect();
            if !c.primitives[start_primitive[j]]
                .invariant
                .contains_with(&cb, TRAJ_TOL)
            {
                return Err(SimError::StartOutsideInvariant(
                    ma.primitive_name(start_primitive),
                ));
            }
            world.push(block);
            canon.push(cb);
            off += c.n;
        }
    }

    let mut trace = HybridTrace {
        intervals: vec![TraceInterval {
            start: 0.0,
            end: 0.0,
            location: location.clone(),
            primitive: active.tuple.clone(),
        }],
        events: Vec::new(),
        samples: Vec::new(),
        zeno: false,
        translation_error: 0.0,
        settled: false,
    };
    let mut t = 0.0;
    let mut dwell_since = 0.0;
    let mut recent_events: Vec<f64> = Vec::new();
    push_sample(&mut trace, t, &world);

    // A degenerate stage may target the location the run starts in.
    if let StopCondition::ReachLocation(target) = &stop {
        if &location == target {
            let end = EndState {
                t,
                location,
                primitive: active.tuple.clone(),
                world: world.iter().flatten().copied().collect(),
                stopped: true,
            };
            return Ok((trace, end));
        }
    }

    while t < cfg.t_max {
        // A crossing may already be sitting on a guard (instant event).
        let mut event: Option<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
        let mut immediate = false;
        for (j, mons) in active.monitors.iter().enumerate() {
            for mon in mons {
                if pin_gap(&mon.pins, &canon[j]) >= -1e-12
                    && mon.guard.contains(&snap_pins(&mon.pins, &canon[j]))
                {
                    immediate = true;
                }
            }
        }
        if immediate {
            event = Some((0.0, canon.clone(), world.clone()));
        } else if !active.stationary {
            // Earliest crossing within the step across all components.
            let mut tau_min: Option<f64> = None;
            for (j, mons) in active.monitors.iter().enumerate() {
                for mon in mons {
                    if pin_gap(&mon.pins, &canon[j]) >= 0.0 {
                        continue;
                    }
                    if let Some((tau, _)) =
                        locate_crossing(&active.canon_flows[j], &canon[j], dt, |x| {
                            pin_gap(&mon.pins, x)
                        })
                    {
                        if tau_min.map_or(true, |b| tau < b) {
                            tau_min = Some(tau);
                        }
                    }
                }
            }
            if let Some(tau) = tau_min {
                let canon_at: Vec<Vec<f64>> = canon
                    .iter()
                    .zip(&active.canon_flows)
                    .map(|(x, f)| f.rk4(x, tau))
                    .collect();
                let world_at: Vec<Vec<f64>> = world
                    .iter()
                    .zip(&active.world_flows)
                    .map(|(x, f)| f.rk4(x, tau))
                    .collect();
                event = Some((tau, canon_at, world_at));
            }
        }

        if let Some((tau, canon_at, world_at)) = event {
            // Classify which components crossed: their guard must contain
            // the (plane-snapped) crossing state.
            let mut sigma: Vec<i8> = Vec::with_capacity(ma.p());
            let mut hits = 0;
            for (j, c) in ma.components.iter().enumerate() {
                let mut part: Option<Vec<i8>> = None;
                let mut local = 0;
                for mon in &active.monitors[j] {
                    if pin_gap(&mon.pins, &canon_at[j]) >= -TRAJ_TOL
                        && mon.guard.contains(&snap_pins(&mon.pins, &canon_at[j]))
                    {
                        part = Some(mon.sigma.clone());
                        local += 1;
                    }
                }
                if local > 1 {
                    return Err(SimError::AmbiguousCrossing {
                        t: t + tau,
                        component: j,
                    });
                }
                hits += local;
                sigma.extend(part.unwrap_or_else(|| vec![0; c.p]));
            }
            if hits == 0 {
                // A located crossing that is not a guard hit (for example
                // the excluded corner of a face): take the plain step and
                // let the invariant check decide.
                step_plain(
                    ma, &frame, &mut active, &mut world, &mut canon, &location, dt, t, &trace,
                )?;
                t += dt;
                push_sample(&mut trace, t, &world);
                advance_interval_end(&mut trace, t);
                continue;
            }

            let t_event = t + tau;
            // Policy lookup and discrete update.
            let next_tuple = policy
                .next_primitive(&location, &active.tuple, &sigma)
                .ok_or_else(|| SimError::PolicyMiss {
                    t: t_event,
                    location: location.clone(),
                    primitive: ma.primitive_name(&active.tuple),
                    sigma: sigma.clone(),
                })?;
            let next_location: Vec<i64> = location
                .iter()
                .zip(&sigma)
                .map(|(&c, &s)| c + s as i64)
                .collect();
            if !grid.joint_location_safe(&next_location).unwrap_or(false) {
                return Err(SimError::UnsafeTransition { t: t_event });
            }

            // Canonical shadow resets on crossing components; the world
            // state continues. Track the translation identity.
            let mut new_canon = canon_at.clone();
            let mut err = 0.0f64;
            let mut out_off = 0;
            for (j, c) in ma.components.iter().enumerate() {
                let part = &sigma[out_off..out_off + c.p];
                if part.iter().any(|&s| s != 0) {
                    let r = c.reset_vector(&crate::ma::Label(part.to_vec()));
                    for i in 0..c.n {
                        new_canon[j][i] += r[i];
                    }
                }
                let s = frame.shift(j, &next_location);
                for i in 0..c.n {
                    err = err.max((world_at[j][i] - s[i] - new_canon[j][i]).abs());
                }
                out_off += c.p;
            }
            trace.translation_error = trace.translation_error.max(err);

            trace.events.push(TraceEvent {
                t: t_event,
                sigma: sigma.clone(),
                from_location: location.clone(),
                from_primitive: active.tuple.clone(),
                to_location: next_location.clone(),
                to_primitive: next_tuple.clone(),
            });
            advance_interval_end(&mut trace, t_event);
            trace.intervals.push(TraceInterval {
                start: t_event,
                end: t_event,
                location: next_location.clone(),
                primitive: next_tuple.clone(),
            });

            // Zeno guard: transitions within the trailing unit window.
            recent_events.push(t_event);
            recent_events.retain(|&te| t_event - te <= 1.0);
            if recent_events.len() > cfg.max_transitions_per_unit_time {
                trace.zeno = true;
                let end = EndState {
                    t: t_event,
                    location: next_location,
                    primitive: next_tuple,
                    world: world_at.iter().flatten().copied().collect(),
                    stopped: false,
                };
                return Ok((trace, end));
            }

            location = next_location;
            active = frame.activate(&next_tuple, &location)?;
            canon = new_canon;
            world = world_at;
            t = t_event;
            dwell_since = t;
            push_sample(&mut trace, t, &world);

            // New primitive must accept the carried-over state.
            for (j, c) in ma.components.iter().enumerate() {
                if !c.primitives[active.tuple[j]]
                    .invariant
                    .contains_with(&canon[j], TRAJ_TOL)
                {
                    return Err(SimError::InvariantExit {
                        t,
                        component: j,
                        prefix: Box::new(trace.clone()),
                    });
                }
            }
            if let StopCondition::ReachLocation(target) = &stop {
                if &location == target {
                    let end = EndState {
                        t,
                        location: location.clone(),
                        primitive: active.tuple.clone(),
                        world: world.iter().flatten().copied().collect(),
                        stopped: true,
                    };
                    return Ok((trace, end));
                }
            }
            continue;
        }

        // Plain step.
        step_plain(
            ma, &frame, &mut active, &mut world, &mut canon, &location, dt, t, &trace,
        )?;
        t += dt;
        push_sample(&mut trace, t, &world);
        advance_interval_end(&mut trace, t);

        if active.stationary && t - dwell_since >= cfg.dwell_time {
            trace.settled = true;
            break;
        }
    }
    let stopped = match &stop {
        StopCondition::Settle => trace.settled,
        StopCondition::ReachLocation(target) => &location == target,
    };
    let end = EndState {
        t,
        location,
        primitive: active.tuple.clone(),
        world: world.iter().flatten().copied().collect(),
        stopped,
    };
    Ok((trace, end))
}

#[allow(clippy::too_many_arguments)]
fn step_plain(
    ma: &ManeuverAutomaton,
    _frame: &Frame,
    active: &mut ActivePrimitive,
    world: &mut [Vec<f64>],
    canon: &mut [Vec<f64>],
    _location: &[i64],
    dt: f64,
    t: f64,
    trace: &HybridTrace,
) -> Result<(), SimError> {
    for (j, c) in ma.components.iter().enumerate() {
        world[j] = active.world_flows[j].rk4(&world[j], dt);
        canon[j] = active.canon_flows[j].rk4(&canon[j], dt);
        if !c.primitives[active.tuple[j]]
            .invariant
            .contains_with(&canon[j], TRAJ_TOL)
        {
            return Err(SimError::InvariantExit {
                t: t + dt,
                component: j,
                prefix: Box::new(trace.clone()),
            });
        }
    }
    Ok(())
}

fn push_sample(trace: &mut HybridTrace, t: f64, world: &[Vec<f64>]) {
    let state: Vec<f64> = world.iter().flatten().copied().collect();
    trace.samples.push(TraceSample {
        t,
        state,
        interval: trace.intervals.len() - 1,
    });
}

fn advance_interval_end(trace: &mut HybridTrace, t: f64) {
    if let Some(iv) = trace.intervals.last_mut() {
        iv.end = t;
    }
}

/// Reach-avoid verdict over a trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub avoid_ok: bool,
    /// Time of the first avoid violation, when any.
    pub first_violation: Option<f64>,
    pub reach_ok: bool,
    /// Time after which every sample sits in the goal box.
    pub t_reach: Option<f64>,
    pub zeno: bool,
    pub pass: bool,
}

/// Output (position) vector of a stacked world state.
fn outputs(ma: &ManeuverAutomaton, state: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(ma.p());
    let mut off = 0;
    for c in &ma.components {
        for i in 0..c.p {
            y.push(state[off + c.output_map[i]]);
        }
        off += c.n;
    }
    y
}

/// Joint boxes an output point may occupy, with the shared-face tolerance:
/// a coordinate within `EPS_GEO` of a face belongs to both adjacent boxes.
fn candidate_boxes(y: &[f64], d: &[f64]) -> Vec<Vec<i64>> {
    let mut per_axis: Vec<Vec<i64>> = Vec::with_capacity(y.len());
    for (i, &v) in y.iter().enumerate() {
        let lo = ((v - EPS_GEO) / d[i]).floor() as i64;
        let hi = ((v + EPS_GEO) / d[i]).floor() as i64;
        if lo == hi {
            per_axis.push(vec![lo]);
        } else {
            per_axis.push(vec![lo, hi]);
        }
    }
    let mut out: Vec<Vec<i64>> = vec![Vec::new()];
    for axis in &per_axis {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &k in axis {
                let mut v = prefix.clone();
                v.push(k);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn in_goal_box(y: &[f64], d: &[f64], goal: &[i64]) -> bool {
    y.iter().zip(d).zip(goal).all(|((&v, &di), &g)| {
        v >= g as f64 * di - EPS_GEO && v <= (g + 1) as f64 * di + EPS_GEO
    })
}

/// Check the avoid and reach conditions of a trace against the grid and a
/// joint goal location.
pub fn verify_reach_avoid(
    trace: &HybridTrace,
    ma: &ManeuverAutomaton,
    grid: &GridSpec,
    goal: &[i64],
    cfg: &SimConfig,
) -> Verdict {
    let d = grid.joint_box_lengths();
    let mut avoid_ok = true;
    let mut first_violation = None;
    for s in &trace.samples {
        let y = outputs(ma, &s.state);
        let safe = candidate_boxes(&y, &d)
            .iter()
            .any(|b| grid.joint_location_safe(b).unwrap_or(false));
        if !safe {
            avoid_ok = false;
            first_violation = Some(s.t);
            break;
        }
    }

    // Earliest time after which every sample sits in the goal box.
    let mut t_reach: Option<f64> = None;
    for s in trace.samples.iter().rev() {
        let y = outputs(ma, &s.state);
        if in_goal_box(&y, &d, goal) {
            t_reach = Some(s.t);
        } else {
            break;
        }
    }
    let end = trace.samples.last().map_or(0.0, |s| s.t);
    let reach_ok = match t_reach {
        Some(tr) => trace.settled && end - tr >= cfg.dwell_time - 1e-9,
        None => false,
    };
    Verdict {
        avoid_ok,
        first_violation,
        reach_ok,
        t_reach,
        zeno: trace.zeno,
        pass: avoid_ok && reach_ok && !trace.zeno,
    }
}

/// Concatenate stage traces into one timeline: interval, event and sample
/// times shift by the accumulated end time of the previous parts.
pub fn merge_traces(mut parts: Vec<HybridTrace>) -> HybridTrace {
    if parts.len() <= 1 {
        return parts.pop().unwrap_or(HybridTrace {
            intervals: Vec::new(),
            events: Vec::new(),
            samples: Vec::new(),
            zeno: false,
            translation_error: 0.0,
            settled: false,
        });
    }
    let mut out = HybridTrace {
        intervals: Vec::new(),
        events: Vec::new(),
        samples: Vec::new(),
        zeno: false,
        translation_error: 0.0,
        settled: false,
    };
    let mut t_off = 0.0;
    for part in parts {
        let interval_off = out.intervals.len();
        let part_end = part.samples.last().map_or(0.0, |s| s.t);
        for mut iv in part.intervals {
            iv.start += t_off;
            iv.end += t_off;
            out.intervals.push(iv);
        }
        for mut e in part.events {
            e.t += t_off;
            out.events.push(e);
        }
        for mut s in part.samples {
            s.t += t_off;
            s.interval += interval_off;
            out.samples.push(s);
        }
        out.zeno |= part.zeno;
        out.translation_error = out.translation_error.max(part.translation_error);
        out.settled = part.settled;
        t_off += part_end;
    }
    out
}

/// Re-check every logged transition of a trace against the product
/// automaton edges (trace/run consistency).
pub fn validate_trace_transitions(trace: &HybridTrace, pa: &ExplicitPa) -> Result<(), String> {
    for e in &trace.events {
        let l = pa
            .ots
            .index_of(&e.from_location)
            .ok_or_else(|| format!("unknown location {:?}", e.from_location))?;
        let m = pa.ma.primitive_index(&e.from_primitive) as u32;
        let q = pa
            .state_index(l, m)
            .ok_or_else(|| format!("invalid product state at t={}", e.t))?;
        let code = crate::workspace::encode_offset(&e.sigma);
        let succ = pa.successors(q, code);
        let l2 = pa
            .ots
            .index_of(&e.to_location)
            .ok_or_else(|| format!("unknown location {:?}", e.to_location))?;
        let m2 = pa.ma.primitive_index(&e.to_primitive) as u32;
        let q2 = pa
            .state_index(l2, m2)
            .ok_or_else(|| format!("invalid successor state at t={}", e.t))?;
        if !succ.contains(&q2) {
            return Err(format!("transition at t={} is not a product edge", e.t));
        }
    }
    Ok(())
}

/// CSV export: `time` column, per-output position and velocity columns,
/// per-output box index columns, a primitive-name column, and an event
/// marker column (the event label at rows where a transition fired).
pub fn trace_to_csv(trace: &HybridTrace, ma: &ManeuverAutomaton) -> String {
    let p = ma.p();
    let mut head = vec!["time".to_string()];
    for i in 0..p {
        head.push(format!("pos{}", i));
    }
    for i in 0..p {
        head.push(format!("vel{}", i));
    }
    for i in 0..p {
        head.push(format!("box{}", i));
    }
    head.push("primitive".into());
    head.push("event".into());
    let mut lines = vec![head.join(",")];
    let mut event_iter = trace.events.iter().peekable();
    for s in &trace.samples {
        let iv = &trace.intervals[s.interval];
        let mut row = vec![format!("{:.9}", s.t)];
        let y = outputs(ma, &s.state);
        for v in &y {
            row.push(format!("{v:.9}"));
        }
        // Velocities: remaining state coordinate per (double-integrator
        // style) component block.
        let mut off = 0;
        for c in &ma.components {
            for i in 0..c.n {
                if !c.output_map.contains(&i) {
                    row.push(format!("{:.9}", s.state[off + i]));
                }
            }
            off += c.n;
        }
        for b in &iv.location {
            row.push(b.to_string());
        }
        row.push(ma.primitive_name(&iv.primitive));
        let mut marker = String::new();
        while let Some(e) = event_iter.peek() {
            if e.t <= s.t {
                marker = format!(
                    "{}",
                    crate::ma::Label(e.sigma.clone())
                );
                event_iter.next();
            } else {
                break;
            }
        }
        row.push(marker);
        lines.push(row.join(","));
    }
    lines.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ma::double_integrator::build_double_integrator_ma;
    use crate::planning::{extract_optimal_policy, ndd_value, initial_state_set, PaPolicy};
    use crate::product::GoalRule;
    use crate::workspace::{enumerate_ots, VehicleSpec};

    fn line_grid(n: usize, goal: i64) -> GridSpec {
        GridSpec {
            dims: 1,
            counts: vec![n],
            box_lengths: vec![1.0],
            obstacles: vec![],
            vehicles: vec![VehicleSpec {
                start: Some(vec![0]),
                goal: vec![goal],
            }],
        }
    }

    fn line_pa(n: usize, goal: i64) -> ExplicitPa {
        let grid = line_grid(n, goal);
        let ots = enumerate_ots(&grid, 10_000).unwrap();
        let ma = build_double_integrator_ma(1.0, 1.0).unwrap();
        let mut pa = ExplicitPa::build(ots, ma, 10_000).unwrap();
        pa.set_final(&[goal], GoalRule::HoldOnly).unwrap();
        pa
    }

    #[test]
    fn three_box_run_has_three_intervals_and_two_events() {
        let pa = line_pa(3, 2);
        let grid = pa.ots.spec.clone();
        let v = ndd_value(&pa);
        let policy = extract_optimal_policy(&pa, &v);
        let view = PaPolicy {
            pa: &pa,
            policy: &policy,
        };
        let cfg = SimConfig {
            t_max: 30.0,
            ..Default::default()
        };
        // Start in box 0 with the Forward primitive at mid-box, slow.
        let trace = simulate_execution(
            &pa.ma,
            &grid,
            &view,
            &[0],
            &[1],
            &[0.4, 0.3],
            &cfg,
        )
        .unwrap();
        assert_eq!(trace.events.len(), 2);
        assert_eq!(trace.intervals.len(), 3);
        assert!(trace.settled);
        assert!(!trace.zeno);
        assert_eq!(trace.intervals[2].location, vec![2]);
        assert_eq!(trace.intervals[2].primitive, vec![0]);
        for e in &trace.events {
            assert_eq!(e.sigma, vec![1]);
        }
        // Translation identity within integration tolerance.
        assert!(trace.translation_error < 1e-6);
        validate_trace_transitions(&trace, &pa).unwrap();
        let verdict = verify_reach_avoid(&trace, &pa.ma, &grid, &[2], &cfg);
        assert!(verdict.pass, "{verdict:?}");
        assert!(verdict.t_reach.is_some());
    }

    #[test]
    fn start_in_goal_with_hold_settles_without_events() {
        let pa = line_pa(3, 2);
        let grid = pa.ots.spec.clone();
        let v = ndd_value(&pa);
        let policy = extract_optimal_policy(&pa, &v);
        let view = PaPolicy {
            pa: &pa,
            policy: &policy,
        };
        let cfg = SimConfig::default();
        let trace = simulate_execution(
            &pa.ma,
            &grid,
            &view,
            &[2],
            &[0],
            &[2.5, 0.0],
            &cfg,
        )
        .unwrap();
        assert!(trace.events.is_empty());
        assert_eq!(trace.intervals.len(), 1);
        assert!(trace.settled);
        let verdict = verify_reach_avoid(&trace, &pa.ma, &grid, &[2], &cfg);
        assert!(verdict.pass);
        // Hold keeps the speed inside the design bound.
        for s in &trace.samples {
            assert!(s.state[1].abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn policy_miss_is_a_hard_error() {
        let pa = line_pa(3, 2);
        let grid = pa.ots.spec.clone();
        let empty = crate::planning::ControlPolicy::default();
        let view = PaPolicy {
            pa: &pa,
            policy: &empty,
        };
        let err = simulate_execution(
            &pa.ma,
            &grid,
            &view,
            &[0],
            &[1],
            &[0.4, 0.3],
            &SimConfig::default(),
        )
        .err()
        .expect("missing assignment");
        assert!(matches!(err, SimError::PolicyMiss { .. }));
    }

    #[test]
    fn sampled_initial_conditions_lie_in_translated_invariants() {
        let pa = line_pa(4, 3);
        let v = ndd_value(&pa);
        let policy = extract_optimal_policy(&pa, &v);
        let pa0 = initial_state_set(&pa, &policy);
        let samples = sample_initial_conditions(&pa, &pa0, 200, 7).unwrap();
        for (loc, tuple, world) in samples {
            // Membership re-check after inverse translation.
            let c = &pa.ma.components[0];
            let canonical = vec![world[0] - loc[0] as f64, world[1]];
            assert!(c.primitives[tuple[0]].invariant.contains(&canonical));
            // Positions live in the box of the location.
            assert!(world[0] >= loc[0] as f64 - 1e-9);
            assert!(world[0] <= (loc[0] + 1) as f64 + 1e-9);
        }
    }

    #[test]
    fn excluded_corner_is_not_a_guard_hit() {
        // The exit face of Forward is {d} x (0, ū]: the corner (d, 0) is
        // excluded, so a crossing state snapped there must not classify as
        // an event.
        let ma = build_double_integrator_ma(1.0, 1.0).unwrap();
        let g = ma.components[0]
            .guard_of(1, &crate::ma::Label(vec![1]))
            .unwrap();
        assert!(!g.contains(&[1.0, 0.0]));
        assert!(g.contains(&[1.0, 1e-6]));
        // And the Hold primitive never produces a crossing at all.
        let mons = monitors_for(&ma, 0, 0).unwrap();
        assert!(mons.is_empty());
    }

    #[test]
    fn obstacle_clip_fails_with_a_timestamp() {
        let mut grid = line_grid(3, 2);
        grid.obstacles.push(vec![1]);
        grid.vehicles[0].start = Some(vec![0]);
        // Hand-build a trace whose third sample sits inside the obstacle
        // box by more than the face tolerance.
        let ma = build_double_integrator_ma(1.0, 1.0).unwrap();
        let mk = |t: f64, pos: f64| TraceSample {
            t,
            state: vec![pos, 0.0],
            interval: 0,
        };
        let trace = HybridTrace {
            intervals: vec![TraceInterval {
                start: 0.0,
                end: 3.0,
                location: vec![0],
                primitive: vec![0],
            }],
            events: vec![],
            samples: vec![mk(0.0, 0.5), mk(1.0, 0.9), mk(2.0, 1.4), mk(3.0, 0.5)],
            zeno: false,
            translation_error: 0.0,
            settled: true,
        };
        let verdict = verify_reach_avoid(&trace, &ma, &grid, &[2], &SimConfig::default());
        assert!(!verdict.avoid_ok);
        assert_eq!(verdict.first_violation, Some(2.0));
        assert!(!verdict.pass);
    }

    #[test]
    fn consecutive_events_are_separated() {
        // Two transitions on the way to the goal: instantaneous double
        // transitions would violate the chattering exclusion.
        let pa = line_pa(3, 2);
        let grid = pa.ots.spec.clone();
        let v = ndd_value(&pa);
        let policy = extract_optimal_policy(&pa, &v);
        let view = PaPolicy {
            pa: &pa,
            policy: &policy,
        };
        let trace = simulate_execution(
            &pa.ma,
            &grid,
            &view,
            &[0],
            &[1],
            &[0.2, 0.1],
            &SimConfig::default(),
        )
        .unwrap();
        assert_eq!(trace.events.len(), 2);
        let dt_min = 1e-3;
        for w in trace.events.windows(2) {
            assert!(w[1].t - w[0].t > dt_min, "events {} and {}", w[0].t, w[1].t);
        }
    }

    #[test]
    fn trace_csv_has_fixed_columns() {
        let pa = line_pa(3, 2);
        let grid = pa.ots.spec.clone();
        let v = ndd_value(&pa);
        let policy = extract_optimal_policy(&pa, &v);
        let view = PaPolicy {
            pa: &pa,
            policy: &policy,
        };
        let trace = simulate_execution(
            &pa.ma,
            &grid,
            &view,
            &[0],
            &[1],
            &[0.4, 0.3],
            &SimConfig::default(),
        )
        .unwrap();
        let csv = trace_to_csv(&trace, &pa.ma);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "time,pos0,vel0,box0,primitive,event");
        assert!(lines.next().unwrap().starts_with("0.000000000,"));
    }
}
