//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line with its timing. Expected values come from the worked
//! examples and from independent oracles in `common`.

mod common;

use boxmotion::compose::compose_n;
use boxmotion::ma::check::{check_ma_assumptions, ConditionStatus, SimCheckConfig};
use boxmotion::ma::double_integrator::build_double_integrator_ma;
use boxmotion::ma::Label;
use boxmotion::planning::chain::{chain_specs, Algo, ChainError, ChainMode};
use boxmotion::planning::{
    cost_to_go, evaluate_policy, extract_optimal_policy, initial_state_set, ndd_value,
    ControlPolicy, PaPolicy, PolicyValue, SearchError,
};
use boxmotion::product::{CostModel, ExplicitPa, PaGraph};
use boxmotion::scenario::parse_scenario;
use boxmotion::sim::{
    sample_initial_conditions, simulate_execution, validate_trace_transitions, verify_reach_avoid,
    SimConfig,
};
use boxmotion::workspace::{encode_offset, enumerate_ots, GridSpec, VehicleSpec};
use common::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::time::Instant;

fn scenario_path(name: &str) -> String {
    format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn load(name: &str) -> boxmotion::scenario::ScenarioDocument {
    let text = std::fs::read_to_string(scenario_path(name)).expect("scenario file");
    parse_scenario(&text).expect("valid scenario")
}

fn pass(n: usize, t0: Instant, budget_s: f64, detail: &str) {
    let dt = t0.elapsed().as_secs_f64();
    println!("criterion {n} PASS ({dt:.2}s, budget {budget_s:.0}s) — {detail}");
    assert!(
        dt <= budget_s,
        "criterion {n} exceeded its time budget: {dt:.2}s > {budget_s}s"
    );
}

/// Criterion 1: the worked-example cost-to-go values under the hand policy.
#[test]
fn criterion_1_worked_example_cost_to_go() {
    let t0 = Instant::now();
    let pa = fig7_pa();
    let q = fig7_states(&pa);
    let plus = encode_offset(&[1]);
    let minus = encode_offset(&[-1]);
    let mut c1 = ControlPolicy::default();
    c1.choices.insert((q[0], plus), q[2]);
    c1.choices.insert((q[2], plus), q[6]);
    c1.choices.insert((q[4], minus), q[0]);
    c1.choices.insert((q[6], minus), q[4]);
    assert!(c1.is_admissible(&pa));
    assert_eq!(cost_to_go(&pa, &c1, q[0]).unwrap(), 2.0);
    assert_eq!(cost_to_go(&pa, &c1, q[4]).unwrap(), 3.0);
    assert_eq!(cost_to_go(&pa, &c1, q[2]).unwrap(), 1.0);
    assert_eq!(cost_to_go(&pa, &c1, q[6]).unwrap(), 0.0);
    for dead in [q[1], q[3], q[5]] {
        assert_eq!(cost_to_go(&pa, &c1, dead).unwrap(), f64::INFINITY);
    }
    pass(1, t0, 1.0, "J(q1)=2 J(q5)=3 J(q3)=1 J(q7)=0, rest infinite");
}

/// Criteria 2 and 3: value recursion equals the all-policy oracle and both
/// recursion forms agree; the extracted policy achieves the value.
#[test]
fn criterion_2_and_3_value_oracles() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let n_pas = 200;
    let mut max_states = 0;
    for k in 0..n_pas {
        let pa = RandomPa::generate(&mut rng, 200, 2048);
        max_states = max_states.max(pa.num_states());
        let v = ndd_value(&pa);
        let oracle = all_policy_min_oracle(&pa);
        let minmax = minmax_value_oracle(&pa);
        for q in 0..pa.num_states() {
            assert_eq!(
                v.values[q], oracle[q],
                "pa {k}: state {q} disagrees with the all-policy oracle"
            );
            assert_eq!(
                v.values[q], minmax[q],
                "pa {k}: state {q} disagrees between the two recursion forms"
            );
        }
        // Criterion 3: optimality of the extracted policy.
        let policy = extract_optimal_policy(&pa, &v);
        let eval = evaluate_policy(&pa, &policy);
        for q in 0..pa.num_states() {
            if v.values[q].is_finite() {
                match eval[q] {
                    PolicyValue::Finite(j) => assert_eq!(
                        j, v.values[q],
                        "pa {k}: extracted policy misses the value at {q}"
                    ),
                    other => panic!("pa {k}: state {q} not finite under c*: {other:?}"),
                }
            }
        }
    }
    pass(
        2,
        t0,
        60.0,
        &format!("{n_pas} random automata (largest {max_states} states), both oracles exact"),
    );
    println!("criterion 3 PASS — J(q, c*) = V(q) on every finite state of the same automata");
}

/// Criterion 4: grid search optimality against a breadth-first oracle.
#[test]
fn criterion_4_grid_search_matches_bfs() {
    use std::collections::VecDeque;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut solved = 0usize;
    for case in 0..100 {
        let two_vehicles = case % 3 == 2;
        let (nx, ny, nz) = if two_vehicles {
            (
                rng.gen_range(3..=7usize),
                rng.gen_range(3..=7usize),
                rng.gen_range(1..=2usize),
            )
        } else {
            (
                rng.gen_range(4..=20usize),
                rng.gen_range(4..=20usize),
                rng.gen_range(1..=3usize),
            )
        };
        let mut obstacles = Vec::new();
        for x in 0..nx as i64 {
            for y in 0..ny as i64 {
                for z in 0..nz as i64 {
                    if rng.gen_bool(0.15) {
                        obstacles.push(vec![x, y, z]);
                    }
                }
            }
        }
        let mut pick_free = |obs: &Vec<Vec<i64>>, used: &Vec<Vec<i64>>| loop {
            let c = vec![
                rng.gen_range(0..nx) as i64,
                rng.gen_range(0..ny) as i64,
                rng.gen_range(0..nz) as i64,
            ];
            if !obs.contains(&c) && !used.contains(&c) {
                return c;
            }
        };
        let n_veh = if two_vehicles { 2 } else { 1 };
        let mut starts: Vec<Vec<i64>> = Vec::new();
        let mut goals: Vec<Vec<i64>> = Vec::new();
        for _ in 0..n_veh {
            starts.push(pick_free(&obstacles, &starts));
            goals.push(pick_free(&obstacles, &goals));
        }
        let spec = GridSpec {
            dims: 3,
            counts: vec![nx, ny, nz],
            box_lengths: vec![1.0; 3],
            obstacles,
            vehicles: starts
                .iter()
                .zip(&goals)
                .map(|(s, g)| VehicleSpec {
                    start: Some(s.clone()),
                    goal: g.clone(),
                })
                .collect(),
        };
        if spec.validate().is_err() {
            continue;
        }
        let start = spec.joint_start().unwrap();
        let goal = spec.joint_goal();
        if !spec.joint_location_safe(&start).unwrap() || !spec.joint_location_safe(&goal).unwrap()
        {
            continue;
        }
        // Independent breadth-first oracle over the joint lattice.
        let oracle = {
            let mut seen: HashMap<Vec<i64>, usize> = HashMap::new();
            let mut queue = VecDeque::new();
            seen.insert(start.clone(), 0);
            queue.push_back(start.clone());
            let mut found = None;
            while let Some(cur) = queue.pop_front() {
                let d = seen[&cur];
                if cur == goal {
                    found = Some(d);
                    break;
                }
                for axis in 0..spec.p() {
                    for dir in [-1i64, 1] {
                        let mut next = cur.clone();
                        next[axis] += dir;
                        if spec.joint_location_safe(&next).unwrap_or(false)
                            && !seen.contains_key(&next)
                        {
                            seen.insert(next.clone(), d + 1);
                            queue.push_back(next);
                        }
                    }
                }
            }
            found
        };
        match boxmotion::planning::astar_plan(&spec) {
            Ok(plan) => {
                assert_eq!(Some(plan.path.len() - 1), oracle, "case {case}");
                solved += 1;
            }
            Err(SearchError::NoPath) => assert_eq!(oracle, None, "case {case}"),
            Err(e) => panic!("case {case}: {e}"),
        }
    }
    assert!(solved >= 50, "too few solvable cases: {solved}");
    pass(
        4,
        t0,
        60.0,
        &format!("100 random grids, {solved} solvable, path costs equal the oracle"),
    );
}

/// Criterion 5: the integrator family passes the structural suite.
#[test]
fn criterion_5_integrator_conformance() {
    let t0 = Instant::now();
    let ma = build_double_integrator_ma(1.0, 1.0).unwrap();
    let cfg = SimCheckConfig {
        samples: 1000,
        ..Default::default()
    };
    let report = check_ma_assumptions(&ma, &cfg).unwrap();
    for i in 1..=5 {
        assert_eq!(
            report.condition(i).status,
            ConditionStatus::Pass,
            "condition ({i}): {:?}",
            report.condition(i).witnesses
        );
    }
    for i in 6..=7 {
        assert_eq!(
            report.condition(i).status,
            ConditionStatus::SampledPass,
            "condition ({i}): {:?}",
            report.condition(i).witnesses
        );
        assert!(report.condition(i).witnesses.is_empty());
    }
    pass(
        5,
        t0,
        30.0,
        "(i)-(v) exact pass, (vi)-(vii) sampled over 1000 states each, zero violations",
    );
}

/// Criterion 6: composites of the integrator family keep every condition.
#[test]
fn criterion_6_composites_conform() {
    let t0 = Instant::now();
    let di = build_double_integrator_ma(1.0, 1.0).unwrap();
    let pair = compose_n(&di, 2).unwrap();
    let triple = compose_n(&di, 3).unwrap();

    // The turn edge ((F,H),(1,0),(H,F)) exists.
    let targets = pair
        .edge_targets(&[1, 0], &Label::new(vec![1, 0]).unwrap())
        .unwrap();
    assert!(targets.contains(&vec![0, 1]));

    // ε never labels a composite edge.
    for ma in [&pair, &triple] {
        for (_, sigma, _) in ma.enumerate_edges().unwrap() {
            assert!(!sigma.is_epsilon());
        }
    }

    let cfg_pair = SimCheckConfig {
        samples: 500,
        ..Default::default()
    };
    let report = check_ma_assumptions(&pair, &cfg_pair).unwrap();
    assert!(report.all_ok(), "pair: {}", report.summary());
    let cfg_triple = SimCheckConfig {
        samples: 250,
        ..Default::default()
    };
    let report = check_ma_assumptions(&triple, &cfg_triple).unwrap();
    assert!(report.all_ok(), "triple: {}", report.summary());
    pass(
        6,
        t0,
        60.0,
        "pair and triple composites pass the full suite; turn edge present; no empty labels",
    );
}

/// Criterion 7: end-to-end reach-avoid on the 15-box scenario.
#[test]
fn criterion_7_end_to_end_reach_avoid() {
    let t0 = Instant::now();
    let doc = load("fig3.scn");
    let ma = compose_n(&build_double_integrator_ma(1.0, 1.0).unwrap(), 2).unwrap();
    let ots = enumerate_ots(&doc.grid, 1_000_000).unwrap();
    assert_eq!(ots.len(), 15);
    let pa = ExplicitPa::build(ots, ma, 1_000_000).unwrap();
    let v = ndd_value(&pa);
    let policy = extract_optimal_policy(&pa, &v);
    let pa0 = initial_state_set(&pa, &policy);
    assert_eq!(pa0, v.finite_states());
    let starts = sample_initial_conditions(&pa, &pa0, 200, doc.seed).unwrap();
    let cfg = SimConfig {
        t_max: 120.0,
        ..Default::default()
    };
    let view = PaPolicy {
        pa: &pa,
        policy: &policy,
    };
    let mut worst_translation: f64 = 0.0;
    for (i, (loc, prim, world)) in starts.into_iter().enumerate() {
        let trace = simulate_execution(&pa.ma, &doc.grid, &view, &loc, &prim, &world, &cfg)
            .unwrap_or_else(|e| panic!("sample {i}: {e}"));
        assert!(!trace.zeno, "sample {i} tripped the Zeno guard");
        let verdict = verify_reach_avoid(&trace, &pa.ma, &doc.grid, &[3, 3], &cfg);
        assert!(verdict.pass, "sample {i}: {verdict:?}");
        validate_trace_transitions(&trace, &pa).unwrap();
        worst_translation = worst_translation.max(trace.translation_error);
    }
    assert!(worst_translation <= 1e-6);
    pass(
        7,
        t0,
        300.0,
        &format!(
            "200 sampled starts all avoid obstacles and settle in the goal \
             (worst frame deviation {worst_translation:.2e})"
        ),
    );
}

/// Criterion 8: qualitative scenario outcomes.
#[test]
fn criterion_8_scenario_outcomes() {
    let t0 = Instant::now();
    // Channel: value iteration and A* solve the two-stage loop, greedy
    // cannot coordinate the gatekeeper.
    let channel = load("channel.scn");
    let ma = {
        let mut axes = Vec::new();
        for axis in 0..channel.grid.dims {
            axes.push(
                build_double_integrator_ma(channel.grid.box_lengths[axis], 1.0).unwrap(),
            );
        }
        compose_n(&boxmotion::compose::compose_all(&axes).unwrap(), 3).unwrap()
    };
    let stages = channel.stage_goal_list();
    let cost = CostModel::default();
    let ndd_out = chain_specs(
        &channel.grid,
        &ma,
        &stages,
        ChainMode::Loop,
        Algo::Ndd,
        5_000_000,
        &cost,
    )
    .expect("channel solvable by value iteration");
    assert_eq!(ndd_out.stages.len(), 2);
    chain_specs(
        &channel.grid,
        &ma,
        &stages,
        ChainMode::Loop,
        Algo::Astar,
        5_000_000,
        &cost,
    )
    .expect("channel solvable by A*");
    match chain_specs(
        &channel.grid,
        &ma,
        &stages,
        ChainMode::Loop,
        Algo::Greedy,
        5_000_000,
        &cost,
    ) {
        Err(ChainError::StageFailed {
            source: SearchError::Stuck { .. },
            ..
        }) => {}
        Err(other) => panic!("greedy should get stuck on the channel, got {other}"),
        Ok(_) => panic!("greedy should get stuck on the channel"),
    }

    // Open room, four vehicles swapping corners: greedy succeeds with a
    // collision-free joint path.
    let open4 = load("open7x7x2_n4.scn");
    let greedy = boxmotion::planning::greedy_plan(&open4.grid).expect("greedy corner swap");
    for step in &greedy.path {
        assert!(open4.grid.joint_location_safe(step).unwrap());
    }
    assert_eq!(greedy.path.last().unwrap(), &open4.grid.joint_goal());

    // Sliding puzzle: A* solves a seeded solvable instance.
    let t_puzzle = Instant::now();
    let puzzle = load("puzzle8.scn");
    let plan = boxmotion::planning::astar_plan(&puzzle.grid).expect("puzzle solvable");
    assert!(t_puzzle.elapsed().as_secs_f64() < 60.0);
    assert_eq!(plan.path.last().unwrap(), &puzzle.grid.joint_goal());

    pass(
        8,
        t0,
        300.0,
        &format!(
            "channel: ndd+astar solve, greedy stuck; corner swap: greedy path {} steps; \
             puzzle solved in {} moves",
            greedy.path.len() - 1,
            plan.path.len() - 1
        ),
    );
}

/// Criterion 9: the product state count stays below the structural bound on
/// every bundled scenario whose product is enumerable.
#[test]
fn criterion_9_size_bounds() {
    let t0 = Instant::now();
    let mut checked = Vec::new();
    for name in [
        "fig3.scn",
        "fig7.scn",
        "open7x7x2_n1.scn",
        "open7x7x2_n2.scn",
        "channel.scn",
    ] {
        let doc = load(name);
        let mut axes = Vec::new();
        for axis in 0..doc.grid.dims {
            axes.push(
                build_double_integrator_ma(doc.grid.box_lengths[axis], doc.primitive.u_max)
                    .unwrap(),
            );
        }
        let ma = compose_n(
            &boxmotion::compose::compose_all(&axes).unwrap(),
            doc.grid.num_vehicles(),
        )
        .unwrap();
        let ots = enumerate_ots(&doc.grid, 30_000_000).unwrap();
        let pa = ExplicitPa::build(ots, ma, 30_000_000).unwrap();
        assert!(
            pa.size_bound_ok(),
            "{name}: {} states vs bound {}",
            pa.num_valid(),
            pa.size_bound()
        );
        checked.push(format!("{name}={}<{}", pa.num_valid(), pa.size_bound()));
    }
    pass(9, t0, 120.0, &checked.join(" "));
}

/// Criterion 10: identical seed and scenario produce byte-identical policy
/// and trace artifacts.
#[test]
fn criterion_10_determinism() {
    let t0 = Instant::now();
    let bin = env!("CARGO_BIN_EXE_boxmotion");
    let tmp = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for round in 0..2 {
        let dir = tmp.path().join(format!("round{round}"));
        let status = std::process::Command::new(bin)
            .args([
                "simulate",
                "--samples",
                "4",
                "--out-dir",
                dir.to_str().unwrap(),
                &scenario_path("fig3.scn"),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        let mut bundle = Vec::new();
        bundle.push(std::fs::read(dir.join("policy.json")).unwrap());
        bundle.push(std::fs::read(dir.join("verdicts.json")).unwrap());
        for i in 0..4 {
            bundle.push(std::fs::read(dir.join(format!("traces/trace_{i:03}.csv"))).unwrap());
        }
        digests.push(bundle);
    }
    assert_eq!(
        digests[0], digests[1],
        "artifacts differ between identical runs"
    );
    pass(
        10,
        t0,
        120.0,
        "two runs produced byte-identical policies, verdicts and traces",
    );
}
