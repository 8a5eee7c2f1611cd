//! Command-line entry points: scenario planning, closed-loop simulation
//! batches, automaton conformance checks, and composition dumps.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 planner failure (no path,
//! greedy stuck, unreachable stage, state budget exceeded), 3 failed
//! verification (conformance or reach-avoid verdict).

use crate::compose::{compose_all, compose_n};
use crate::ma::check::{check_ma_assumptions, SimCheckConfig};
use crate::ma::double_integrator::build_double_integrator_ma;
use crate::ma::{MaError, ManeuverAutomaton};
use crate::planning::chain::{chain_specs, Algo, ChainError, ChainMode, ChainOutput, StagePlan};
use crate::planning::{PaPolicy, PolicyQuery};
use crate::product::PaGraph;
use crate::scenario::{parse_scenario, ChainModeChoice, PlannerChoice, ScenarioDocument};
use crate::sim::{
    merge_traces, sample_initial_conditions, simulate_with_stop, trace_to_csv, verify_reach_avoid,
    HybridTrace, SimConfig, StopCondition,
};
use crate::workspace::GridSpec;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PLANNER: i32 = 2;
pub const EXIT_VERDICT: i32 = 3;

#[derive(Parser)]
#[command(
    name = "boxmotion",
    about = "Reach-avoid planning with feedback motion primitives on gridded workspaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a control policy for a scenario and write it with stats.
    Plan(PlanArgs),
    /// Plan, run seeded closed-loop executions, verify reach-avoid.
    Simulate(SimulateArgs),
    /// Run the structural conformance suite on an automaton or scenario.
    Check(CheckArgs),
    /// Build a composed maneuver automaton and serialize it.
    Compose(ComposeArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// Directory for output artifacts (fixed file names inside).
    #[arg(long, default_value = "out", env = "BOXMOTION_OUT_DIR")]
    pub out_dir: PathBuf,
    /// Override the scenario seed.
    #[arg(long, env = "BOXMOTION_SEED")]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct PlanArgs {
    pub scenario: PathBuf,
    /// Override the scenario's planner (ndd, astar, greedy).
    #[arg(long, env = "BOXMOTION_ALGO")]
    pub algo: Option<String>,
    /// Explicit product state budget for the value-iteration planner.
    #[arg(long, env = "BOXMOTION_BUDGET_STATES")]
    pub budget_states: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    #[arg(long, env = "BOXMOTION_ALGO")]
    pub algo: Option<String>,
    /// Number of sampled initial conditions.
    #[arg(long, default_value_t = 8, env = "BOXMOTION_SAMPLES")]
    pub samples: usize,
    /// Integration step override.
    #[arg(long, env = "BOXMOTION_DT")]
    pub dt: Option<f64>,
    /// Horizon override.
    #[arg(long, env = "BOXMOTION_T_MAX")]
    pub t_max: Option<f64>,
    #[arg(long, env = "BOXMOTION_BUDGET_STATES")]
    pub budget_states: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct CheckArgs {
    /// A serialized automaton (.ma) or a scenario (.scn).
    pub path: PathBuf,
    /// Samples per invariant for the flow conditions.
    #[arg(long, default_value_t = 1000, env = "BOXMOTION_SAMPLES")]
    pub samples: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct ComposeArgs {
    /// Box length per axis (repeat for several axes).
    #[arg(long = "d", required = true)]
    pub lengths: Vec<f64>,
    /// Acceleration bound of the per-axis family.
    #[arg(long, default_value_t = 1.0)]
    pub u_max: f64,
    /// Number of copies of the axis stack to compose (vehicles).
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Check(args) => cmd_check(args),
        Command::Compose(args) => cmd_compose(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error("{0}")]
    Ma(#[from] MaError),
    #[error("planning failed: {0}")]
    Chain(#[from] ChainError),
    #[error("simulation failed: {0}")]
    Sim(#[from] crate::sim::SimError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Chain(_) => EXIT_PLANNER,
            CliError::Sim(_) => EXIT_VERDICT,
            _ => EXIT_ERROR,
        }
    }
}

/// Per-axis feedback families composed over all axes and vehicles.
pub fn scenario_ma(grid: &GridSpec, u_max: f64) -> Result<ManeuverAutomaton, MaError> {
    let mut axes = Vec::with_capacity(grid.dims);
    for axis in 0..grid.dims {
        axes.push(build_double_integrator_ma(grid.box_lengths[axis], u_max)?);
    }
    let per_vehicle = compose_all(&axes)?;
    compose_n(&per_vehicle, grid.num_vehicles())
}

fn algo_of(doc: &ScenarioDocument, flag: &Option<String>) -> Result<Algo, CliError> {
    let choice = match flag.as_deref() {
        Some("ndd") => PlannerChoice::Ndd,
        Some("astar") => PlannerChoice::Astar,
        Some("greedy") => PlannerChoice::Greedy,
        Some(other) => return Err(CliError::Other(format!("unknown planner '{other}'"))),
        None => doc.planner,
    };
    Ok(match choice {
        PlannerChoice::Ndd => Algo::Ndd,
        PlannerChoice::Astar => Algo::Astar,
        PlannerChoice::Greedy => Algo::Greedy,
    })
}

fn load_scenario(path: &Path, seed_override: Option<u64>) -> Result<ScenarioDocument, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut prepared = text;
    if let Some(seed) = seed_override {
        // Re-parse with the override folded into the document so shuffles
        // and sampling all follow the flag.
        let mut value: serde_json::Value =
            serde_json::from_str(&prepared).map_err(crate::scenario::ScenarioError::from)?;
        if let Some(obj) = value.as_object_mut() {
            obj.insert("seed".into(), json!(seed));
        }
        prepared = serde_json::to_string(&value).expect("rewritable scenario");
    }
    Ok(parse_scenario(&prepared)?)
}

/// Atomic write: temp file in the target directory, then rename.
fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, std::io::Error> {
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents)?;
    let path = dir.join(name);
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}

pub fn plan_scenario(
    doc: &ScenarioDocument,
    algo: Algo,
    budget: usize,
) -> Result<(ManeuverAutomaton, ChainOutput), CliError> {
    let ma = scenario_ma(&doc.grid, doc.primitive.u_max)?;
    let stages = doc.stage_goal_list();
    let mode = match doc.chain_mode() {
        ChainModeChoice::Once => ChainMode::Once,
        ChainModeChoice::Loop => ChainMode::Loop,
    };
    let out = chain_specs(
        &doc.grid,
        &ma,
        &stages,
        mode,
        algo,
        budget,
        &doc.cost.to_model(),
    )?;
    Ok((ma, out))
}

/// Deterministic policy artifact, streamed state by state so large value
/// tables never sit in memory as one document tree.
pub fn policy_json(doc: &ScenarioDocument, algo: Algo, out: &ChainOutput) -> String {
    let algo_name = match algo {
        Algo::Ndd => "ndd",
        Algo::Astar => "astar",
        Algo::Greedy => "greedy",
    };
    let mut buf = String::new();
    let head = json!({
        "scenario": doc.name,
        "planner": algo_name,
        "seed": doc.seed,
        "cost": {
            "edge_default": doc.cost.edge_default,
            "per_label": doc.cost.per_label,
            "terminal": doc.cost.terminal,
        },
    });
    let head = serde_json::to_string(&head).expect("policy head serializes");
    buf.push_str(&head[..head.len() - 1]);
    buf.push_str(",\"stages\":[\n");
    for (si, stage) in out.stages.iter().enumerate() {
        if si > 0 {
            buf.push_str(",\n");
        }
        match &stage.plan {
            StagePlan::Ndd {
                value,
                policy,
                initial,
                finals,
            } => {
                let pa = out.pa.as_ref().expect("value planner keeps the product");
                buf.push_str(&format!(
                    "{{\"kind\":\"value\",\"goal\":{},\"final_states\":{},\"states\":[\n",
                    serde_json::to_string(&stage.goal).unwrap(),
                    finals.len()
                ));
                for (i, &q) in initial.iter().enumerate() {
                    let st = pa.state(q);
                    let mut assignments = Vec::new();
                    for sigma in pa.labels(q) {
                        if let Some(q2) = policy.next(q, sigma) {
                            let st2 = pa.state(q2);
                            assignments.push(json!({
                                "sigma": pa.label_vec(sigma),
                                "next": pa.ma.primitive_name(
                                    &pa.ma.primitive_tuple(st2.primitive as usize)),
                            }));
                        }
                    }
                    let state = json!({
                        "location": pa.ots.location(st.location),
                        "primitive": pa.ma.primitive_name(
                            &pa.ma.primitive_tuple(st.primitive as usize)),
                        "value": value.get(q),
                        "assignments": assignments,
                    });
                    if i > 0 {
                        buf.push_str(",\n");
                    }
                    buf.push_str(&serde_json::to_string(&state).unwrap());
                }
                buf.push_str("\n]}");
            }
            StagePlan::Path { policy, expanded } => {
                buf.push_str(&format!(
                    "{{\"kind\":\"path\",\"goal\":{},\"expanded\":{},\"steps\":[\n",
                    serde_json::to_string(&stage.goal).unwrap(),
                    expanded
                ));
                for (i, b) in policy.path.iter().enumerate() {
                    let step = &policy.steps[b];
                    let row = json!({
                        "box": b,
                        "primitive": step.primitive,
                        "sigma": step.sigma,
                    });
                    if i > 0 {
                        buf.push_str(",\n");
                    }
                    buf.push_str(&serde_json::to_string(&row).unwrap());
                }
                buf.push_str("\n]}");
            }
        }
    }
    buf.push_str("\n]}\n");
    buf
}

/// Structured text dump of a small explicit product automaton: states then
/// labeled edges, for golden-file comparisons.
pub fn pa_dump(pa: &crate::product::ExplicitPa) -> String {
    let mut lines = vec![format!("states {}", pa.num_states())];
    for q in 0..pa.num_states() as u32 {
        let st = pa.state(q);
        lines.push(format!(
            "state {q} location {:?} primitive {}",
            pa.ots.location(st.location),
            pa.ma.primitive_name(&pa.ma.primitive_tuple(st.primitive as usize))
        ));
    }
    for q in 0..pa.num_states() as u32 {
        for sigma in pa.labels(q) {
            for q2 in pa.successors(q, sigma) {
                lines.push(format!("edge {q} {:?} {q2}", pa.label_vec(sigma)));
            }
        }
    }
    lines.join("
") + "
"
}

fn stats_text(out: &ChainOutput, wall_ms: f64) -> String {
    let mut lines = vec![format!("wall_ms {wall_ms:.3}")];
    if let Some(pa) = &out.pa {
        lines.push(format!("pa_states {}", pa.num_valid()));
        lines.push(format!("pa_size_bound {}", pa.size_bound()));
        if pa.num_valid() < 200_000 {
            lines.push(format!("pa_edges {}", pa.count_edges()));
        }
    }
    for (i, stage) in out.stages.iter().enumerate() {
        match &stage.plan {
            StagePlan::Ndd {
                initial, finals, ..
            } => {
                lines.push(format!(
                    "stage{} kind=value initial={} finals={}",
                    i,
                    initial.len(),
                    finals.len()
                ));
            }
            StagePlan::Path { policy, expanded } => {
                lines.push(format!(
                    "stage{} kind=path length={} expanded={}",
                    i,
                    policy.path.len() - 1,
                    expanded
                ));
            }
        }
    }
    lines.join("\n") + "\n"
}

fn cmd_plan(args: PlanArgs) -> Result<i32, CliError> {
    let doc = load_scenario(&args.scenario, args.common.seed)?;
    let algo = algo_of(&doc, &args.algo)?;
    let budget = args
        .budget_states
        .or(doc.budget_states)
        .unwrap_or(5_000_000);
    let t0 = Instant::now();
    let (_ma, out) = plan_scenario(&doc, algo, budget)?;
    let wall = t0.elapsed().as_secs_f64() * 1e3;
    let policy = policy_json(&doc, algo, &out);
    write_artifact(&args.common.out_dir, "policy.json", &policy)?;
    write_artifact(&args.common.out_dir, "stats.txt", &stats_text(&out, wall))?;
    if let Some(pa) = &out.pa {
        if pa.num_valid() <= 5000 {
            write_artifact(&args.common.out_dir, "pa_dump.txt", &pa_dump(pa))?;
        }
    }
    println!(
        "planned {} stage(s) with {} in {:.1} ms",
        out.stages.len(),
        match algo {
            Algo::Ndd => "ndd",
            Algo::Astar => "astar",
            Algo::Greedy => "greedy",
        },
        wall
    );
    Ok(EXIT_OK)
}

/// One closed-loop rollout through every stage of a scenario.
pub struct StageRollout {
    pub trace: HybridTrace,
    pub reached: Vec<bool>,
    pub verdict_pass: bool,
    pub t_reach: Option<f64>,
}

/// Simulate all stages in sequence from one sampled start, switching the
/// policy at each stage goal.
pub fn rollout(
    doc: &ScenarioDocument,
    ma: &ManeuverAutomaton,
    out: &ChainOutput,
    start: (Vec<i64>, Vec<usize>, Vec<f64>),
    cfg: &SimConfig,
) -> Result<StageRollout, crate::sim::SimError> {
    let k = out.stages.len();
    let mut traces = Vec::new();
    let mut reached = Vec::with_capacity(k);
    let (mut loc, mut prim, mut world) = start;
    for (i, stage) in out.stages.iter().enumerate() {
        let last = i + 1 == k;
        let once = matches!(doc.chain_mode(), ChainModeChoice::Once);
        let stop = if last && once {
            StopCondition::Settle
        } else {
            StopCondition::ReachLocation(stage.goal.clone())
        };
        let policy: Box<dyn PolicyQuery + '_> = match &stage.plan {
            StagePlan::Ndd { policy, .. } => Box::new(PaPolicy {
                pa: out.pa.as_ref().expect("pa"),
                policy,
            }),
            StagePlan::Path { policy, .. } => Box::new(policy.clone()),
        };
        let (trace, end) = simulate_with_stop(
            ma, &doc.grid, policy.as_ref(), &loc, &prim, &world, cfg, stop,
        )?;
        reached.push(end.stopped);
        let stopped = end.stopped;
        traces.push(trace);
        loc = end.location;
        prim = end.primitive;
        world = end.world;
        if !stopped {
            break;
        }
    }
    let trace = merge_traces(traces);
    let all_reached = reached.len() == k && reached.iter().all(|&r| r);
    let verdict = verify_reach_avoid(
        &trace,
        ma,
        &doc.grid,
        out.stages.last().map(|s| s.goal.as_slice()).unwrap(),
        cfg,
    );
    let once = matches!(doc.chain_mode(), ChainModeChoice::Once);
    let pass = verdict.avoid_ok && !verdict.zeno && all_reached && (!once || verdict.reach_ok);
    Ok(StageRollout {
        trace,
        reached,
        verdict_pass: pass,
        t_reach: verdict.t_reach,
    })
}

/// Initial (location, primitive, world state) samples for a scenario.
pub fn sample_starts(
    _doc: &ScenarioDocument,
    ma: &ManeuverAutomaton,
    out: &ChainOutput,
    samples: usize,
    seed: u64,
) -> Result<Vec<(Vec<i64>, Vec<usize>, Vec<f64>)>, CliError> {
    match &out.stages[0].plan {
        StagePlan::Ndd { initial, .. } => {
            let pa = out.pa.as_ref().expect("pa");
            Ok(sample_initial_conditions(pa, initial, samples, seed)?)
        }
        StagePlan::Path { policy, .. } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let start_box = policy.path[0].clone();
            let tuple = policy.steps[&start_box].primitive.clone();
            let mut outp = Vec::with_capacity(samples);
            for _ in 0..samples {
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
                            c.geometry.lengths[i] * start_box[out_off + i] as f64;
                    }
                    world.extend(block);
                    out_off += c.p;
                }
                outp.push((start_box.clone(), tuple.clone(), world));
            }
            Ok(outp)
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32, CliError> {
    let doc = load_scenario(&args.scenario, args.common.seed)?;
    let algo = algo_of(&doc, &args.algo)?;
    let budget = args
        .budget_states
        .or(doc.budget_states)
        .unwrap_or(5_000_000);
    let t0 = Instant::now();
    let (ma, out) = plan_scenario(&doc, algo, budget)?;
    let wall = t0.elapsed().as_secs_f64() * 1e3;
    write_artifact(
        &args.common.out_dir,
        "policy.json",
        &policy_json(&doc, algo, &out),
    )?;

    let mut cfg = doc.sim.clone();
    if let Some(dt) = args.dt {
        cfg.dt = Some(dt);
    }
    if let Some(tm) = args.t_max {
        cfg.t_max = tm;
    }
    let starts = sample_starts(&doc, &ma, &out, args.samples, doc.seed)?;
    let traces_dir = args.common.out_dir.join("traces");
    std::fs::create_dir_all(&traces_dir)?;
    let mut verdicts = Vec::new();
    let mut all_pass = true;
    for (i, start) in starts.into_iter().enumerate() {
        let roll = rollout(&doc, &ma, &out, start, &cfg)?;
        let csv = trace_to_csv(&roll.trace, &ma);
        write_artifact(&traces_dir, &format!("trace_{i:03}.csv"), &csv)?;
        all_pass &= roll.verdict_pass;
        verdicts.push(json!({
            "sample": i,
            "pass": roll.verdict_pass,
            "stages_reached": roll.reached,
            "events": roll.trace.events.len(),
            "t_reach": roll.t_reach,
            "zeno": roll.trace.zeno,
            "translation_error": roll.trace.translation_error,
        }));
    }
    let summary = serde_json::to_string_pretty(&json!({
        "scenario": doc.name,
        "samples": verdicts.len(),
        "all_pass": all_pass,
        "verdicts": verdicts,
    }))
    .expect("verdicts serialize")
        + "\n";
    write_artifact(&args.common.out_dir, "verdicts.json", &summary)?;
    write_artifact(&args.common.out_dir, "stats.txt", &stats_text(&out, wall))?;
    println!(
        "simulated {} start(s): {}",
        args.samples,
        if all_pass { "all pass" } else { "FAILURES" }
    );
    Ok(if all_pass { EXIT_OK } else { EXIT_VERDICT })
}

fn report_lines(name: &str, report: &crate::ma::check::AssumptionReport) -> Vec<String> {
    let mut lines = vec![format!("{name}: {}", report.summary())];
    for c in &report.conditions {
        for w in &c.witnesses {
            lines.push(format!("  witness: {w}"));
        }
    }
    lines
}

fn cmd_check(args: CheckArgs) -> Result<i32, CliError> {
    let cfg = SimCheckConfig {
        samples: args.samples,
        seed: args.common.seed.unwrap_or(0),
        ..Default::default()
    };
    let text = std::fs::read_to_string(&args.path)?;
    let mut lines = Vec::new();
    let mut all_ok = true;

    if args.path.extension().and_then(|e| e.to_str()) == Some("scn") {
        let doc = parse_scenario(&text)?;
        for axis in 0..doc.grid.dims {
            let ma = build_double_integrator_ma(doc.grid.box_lengths[axis], doc.primitive.u_max)?;
            let report = check_ma_assumptions(&ma, &cfg)?;
            all_ok &= report.all_ok();
            lines.extend(report_lines(&format!("axis{axis}"), &report));
        }
        if doc.grid.dims > 1 {
            let mut axes = Vec::new();
            for axis in 0..doc.grid.dims {
                axes.push(build_double_integrator_ma(
                    doc.grid.box_lengths[axis],
                    doc.primitive.u_max,
                )?);
            }
            let composed = compose_all(&axes)?;
            let report = check_ma_assumptions(&composed, &cfg)?;
            all_ok &= report.all_ok();
            lines.extend(report_lines("per-vehicle composite", &report));
        }
    } else {
        let ma = ManeuverAutomaton::from_json(&text)
            .map_err(|e| CliError::Other(format!("cannot load automaton: {e}")))?;
        if ma.num_primitives() > 1000 {
            return Err(CliError::Other(format!(
                "{} composite primitives is too large for the full suite",
                ma.num_primitives()
            )));
        }
        let report = check_ma_assumptions(&ma, &cfg)?;
        all_ok &= report.all_ok();
        lines.extend(report_lines("automaton", &report));
    }
    let body = lines.join("\n") + "\n";
    print!("{body}");
    write_artifact(&args.common.out_dir, "check_report.txt", &body)?;
    Ok(if all_ok { EXIT_OK } else { EXIT_VERDICT })
}

fn cmd_compose(args: ComposeArgs) -> Result<i32, CliError> {
    let mut axes = Vec::new();
    for &d in &args.lengths {
        axes.push(build_double_integrator_ma(d, args.u_max)?);
    }
    let stack = compose_all(&axes)?;
    let ma = compose_n(&stack, args.k.max(1))?;
    write_artifact(&args.common.out_dir, "composed.ma", &ma.to_json())?;
    let n_edges_bound = 1_000_000usize;
    if ma.num_primitives() <= 1000 {
        let edges = ma.enumerate_edges()?;
        if edges.len() <= n_edges_bound {
            let mut lines = vec![format!(
                "p={} n={} primitives={} edges={}",
                ma.p(),
                ma.n(),
                ma.num_primitives(),
                edges.len()
            )];
            for (m, sigma, m2) in &edges {
                lines.push(format!(
                    "{} --{}--> {}",
                    ma.primitive_name(m),
                    sigma,
                    ma.primitive_name(m2)
                ));
            }
            write_artifact(
                &args.common.out_dir,
                "composed_edges.txt",
                &(lines.join("\n") + "\n"),
            )?;
        }
    }
    println!(
        "composed automaton: p={} primitives={}",
        ma.p(),
        ma.num_primitives()
    );
    Ok(EXIT_OK)
}
