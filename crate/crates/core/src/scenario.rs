//! Scenario documents: a versioned, schema-checked description of one
//! planning task (grid, vehicles, primitive parameters, planner choice,
//! cost overrides, goal stages, simulation settings, RNG seed).
//!
//! Documents are JSON with unknown fields rejected. Parsing is strict and
//! re-serialization is canonical, so parse -> serialize -> parse is the
//! identity byte for byte.

use crate::product::CostModel;
use crate::sim::SimConfig;
use crate::workspace::{GridSpec, WorkspaceError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported scenario version {0} (expected {SCENARIO_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("stage {stage}: {problem}")]
    BadStage { stage: usize, problem: String },
    #[error("cost model: {0}")]
    BadCost(String),
    #[error("puzzle shuffle needs exactly one free box, got {free}")]
    BadShuffle { free: i64 },
    #[error("planner '{0}' requires start boxes for every vehicle")]
    NeedStarts(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerChoice {
    Ndd,
    Astar,
    Greedy,
}

impl std::fmt::Display for PlannerChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PlannerChoice::Ndd => "ndd",
            PlannerChoice::Astar => "astar",
            PlannerChoice::Greedy => "greedy",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveParams {
    /// Acceleration bound of the per-axis feedback family.
    pub u_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelCost {
    pub offset: Vec<i8>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub edge_default: f64,
    pub per_label: Vec<LabelCost>,
    pub terminal: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            edge_default: 1.0,
            per_label: Vec::new(),
            terminal: 0.0,
        }
    }
}

impl CostSection {
    pub fn to_model(&self) -> CostModel {
        CostModel {
            edge_default: self.edge_default,
            per_label: self
                .per_label
                .iter()
                .map(|lc| (lc.offset.clone(), lc.cost))
                .collect(),
            terminal: self.terminal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageGoals {
    /// Goal box per vehicle.
    pub goals: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainModeChoice {
    Once,
    Loop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub version: u32,
    pub name: String,
    pub grid: GridSpec,
    pub primitive: PrimitiveParams,
    pub planner: PlannerChoice,
    #[serde(default)]
    pub cost: CostSection,
    /// Goal stages beyond the per-vehicle goals in `grid`; when absent the
    /// scenario is the single reach-avoid task given by those goals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<StageGoals>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_mode: Option<ChainModeChoice>,
    #[serde(default)]
    pub sim: SimConfig,
    /// Mandatory seed: all sampling and shuffling derives from it.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_states: Option<usize>,
    /// Generate vehicle starts as a seeded solvable permutation of the goal
    /// arrangement (sliding-puzzle scenarios).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub puzzle_shuffle: bool,
}

impl ScenarioDocument {
    /// Joint goal location of a stage (`None` selects the grid goals).
    pub fn stage_goal(&self, stage: Option<&StageGoals>) -> Vec<i64> {
        match stage {
            Some(s) => s.goals.iter().flatten().copied().collect(),
            None => self.grid.joint_goal(),
        }
    }

    /// Stage list: the grid goals when no explicit stages are given.
    pub fn stage_goal_list(&self) -> Vec<Vec<i64>> {
        match &self.stages {
            Some(stages) => stages.iter().map(|s| self.stage_goal(Some(s))).collect(),
            None => vec![self.grid.joint_goal()],
        }
    }

    pub fn chain_mode(&self) -> ChainModeChoice {
        self.chain_mode.unwrap_or(ChainModeChoice::Once)
    }
}

/// Parse and validate a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioDocument, ScenarioError> {
    let mut doc: ScenarioDocument = serde_json::from_str(text)?;
    if doc.version != SCENARIO_VERSION {
        return Err(ScenarioError::Version(doc.version));
    }
    if doc.puzzle_shuffle {
        shuffle_starts(&mut doc)?;
    }
    doc.grid.validate()?;
    if !(doc.primitive.u_max > 0.0) {
        return Err(ScenarioError::BadCost(format!(
            "u_max must be positive, got {}",
            doc.primitive.u_max
        )));
    }
    doc.cost
        .to_model()
        .validate()
        .map_err(ScenarioError::BadCost)?;
    if let Some(stages) = &doc.stages {
        for (i, stage) in stages.iter().enumerate() {
            if stage.goals.len() != doc.grid.num_vehicles() {
                return Err(ScenarioError::BadStage {
                    stage: i,
                    problem: format!(
                        "{} goals for {} vehicles",
                        stage.goals.len(),
                        doc.grid.num_vehicles()
                    ),
                });
            }
            let joint: Vec<i64> = stage.goals.iter().flatten().copied().collect();
            if !doc.grid.joint_location_safe(&joint)? {
                return Err(ScenarioError::BadStage {
                    stage: i,
                    problem: format!("joint goal {joint:?} is not safe"),
                });
            }
        }
    }
    if matches!(doc.planner, PlannerChoice::Astar | PlannerChoice::Greedy) {
        doc.grid
            .joint_start()
            .map_err(|_| ScenarioError::NeedStarts(format!("{:?}", doc.planner)))?;
    }
    Ok(doc)
}

/// Canonical serialization.
pub fn scenario_to_string(doc: &ScenarioDocument) -> String {
    serde_json::to_string_pretty(doc).expect("scenario serializes") + "\n"
}

/// Assign vehicle starts from a seeded solvable permutation of the goal
/// arrangement: all grid boxes except one are occupied, and moves slide a
/// vehicle into the free box. A permutation is solvable exactly when its
/// parity matches the parity of the free box displacement, so a random
/// permutation is fixed up by swapping two vehicles when needed.
fn shuffle_starts(doc: &mut ScenarioDocument) -> Result<(), ScenarioError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let grid = &mut doc.grid;
    let total: usize = grid.counts.iter().product();
    let free = total as i64 - grid.vehicles.len() as i64 - grid.obstacles.len() as i64;
    if free != 1 {
        return Err(ScenarioError::BadShuffle { free });
    }
    // All non-obstacle boxes in row-major order.
    let mut cells: Vec<Vec<i64>> = Vec::new();
    let mut cursor = vec![0i64; grid.dims];
    loop {
        if !grid.is_obstacle(&cursor) {
            cells.push(cursor.clone());
        }
        let mut axis = grid.dims;
        let mut done = false;
        while axis > 0 {
            axis -= 1;
            cursor[axis] += 1;
            if (cursor[axis] as usize) < grid.counts[axis] {
                break;
            }
            cursor[axis] = 0;
            if axis == 0 {
                done = true;
            }
        }
        if done {
            break;
        }
    }
    let cell_pos = |c: &Vec<i64>| cells.iter().position(|x| x == c).expect("cell");

    // Goal arrangement: permutation over cells, vehicles then the free box.
    let goal_blank = {
        let occupied: Vec<usize> = grid.vehicles.iter().map(|v| cell_pos(&v.goal)).collect();
        (0..cells.len())
            .find(|i| !occupied.contains(i))
            .expect("one free cell")
    };

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(doc.seed);
    let mut slots: Vec<usize> = (0..cells.len()).collect();
    slots.shuffle(&mut rng);
    // slots[v] is the start cell of vehicle v; the leftover is the blank.
    let start_blank = slots[cells.len() - 1];

    // Permutation taking the goal arrangement to the start arrangement,
    // over cell indices; identity on nothing since every cell is either a
    // vehicle or the blank.
    let mut perm = vec![usize::MAX; cells.len()];
    for (v, veh) in grid.vehicles.iter().enumerate() {
        perm[cell_pos(&veh.goal)] = slots[v];
    }
    perm[goal_blank] = start_blank;

    let mut parity = 0usize;
    let mut seen = vec![false; cells.len()];
    for i in 0..cells.len() {
        if seen[i] {
            continue;
        }
        let mut j = i;
        let mut len = 0;
        while !seen[j] {
            seen[j] = true;
            j = perm[j];
            len += 1;
        }
        parity += len - 1;
    }
    let blank_dist: i64 = cells[goal_blank]
        .iter()
        .zip(&cells[start_blank])
        .map(|(a, b)| (a - b).abs())
        .sum();
    if (parity % 2) != (blank_dist % 2) as usize {
        // Swap two vehicle starts to flip the permutation parity.
        slots.swap(0, 1);
    }
    for (v, veh) in grid.vehicles.iter_mut().enumerate() {
        veh.start = Some(cells[slots[v]].clone());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(planner: &str) -> String {
        format!(
            r#"{{
  "version": 1,
  "name": "test",
  "grid": {{
    "dims": 2,
    "counts": [4, 4],
    "box_lengths": [1.0, 1.0],
    "obstacles": [[2, 1]],
    "vehicles": [ {{ "start": [0, 0], "goal": [3, 3] }} ]
  }},
  "primitive": {{ "u_max": 1.0 }},
  "planner": "{planner}",
  "seed": 7
}}"#
        )
    }

    #[test]
    fn minimal_scenario_parses() {
        let doc = parse_scenario(&minimal("ndd")).unwrap();
        assert_eq!(doc.grid.safe_box_count(), 15);
        assert_eq!(doc.stage_goal_list(), vec![vec![3, 3]]);
        assert_eq!(doc.seed, 7);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = minimal("ndd").replace("\"seed\": 7", "\"seed\": 7, \"extra\": 1");
        assert!(matches!(
            parse_scenario(&bad),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn missing_required_field_names_it() {
        let bad = minimal("ndd").replace("\"goal\": [3, 3]", "\"goal2\": [3, 3]");
        let err = parse_scenario(&bad).err().expect("schema error");
        let msg = err.to_string();
        assert!(msg.contains("goal"), "{msg}");
    }

    #[test]
    fn seed_is_mandatory() {
        let bad = minimal("ndd").replace("  \"seed\": 7\n", "  \"name2\": 7\n");
        assert!(parse_scenario(&bad).is_err());
    }

    #[test]
    fn deterministic_planners_require_starts() {
        let text = minimal("astar").replace("\"start\": [0, 0]", "\"start\": null");
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::NeedStarts(_))
        ));
        // The exhaustive planner does not need them.
        let text = minimal("ndd").replace("\"start\": [0, 0]", "\"start\": null");
        assert!(parse_scenario(&text).is_ok());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let doc = parse_scenario(&minimal("astar")).unwrap();
        let text = scenario_to_string(&doc);
        let doc2 = parse_scenario(&text).unwrap();
        assert_eq!(doc, doc2);
        assert_eq!(text, scenario_to_string(&doc2));
    }

    #[test]
    fn puzzle_shuffle_generates_solvable_starts() {
        let text = r#"{
  "version": 1,
  "name": "puzzle",
  "grid": {
    "dims": 2,
    "counts": [3, 3],
    "box_lengths": [1.0, 1.0],
    "obstacles": [],
    "vehicles": [
      { "start": null, "goal": [0, 0] },
      { "start": null, "goal": [1, 0] },
      { "start": null, "goal": [2, 0] },
      { "start": null, "goal": [0, 1] },
      { "start": null, "goal": [1, 1] },
      { "start": null, "goal": [2, 1] },
      { "start": null, "goal": [0, 2] },
      { "start": null, "goal": [1, 2] }
    ]
  },
  "primitive": { "u_max": 1.0 },
  "planner": "astar",
  "seed": 42,
  "puzzle_shuffle": true
}"#;
        let doc = parse_scenario(text).unwrap();
        let starts: Vec<Vec<i64>> = doc
            .grid
            .vehicles
            .iter()
            .map(|v| v.start.clone().unwrap())
            .collect();
        // All distinct, all in bounds.
        for (i, s) in starts.iter().enumerate() {
            assert!(doc.grid.block_in_bounds(s));
            for s2 in &starts[i + 1..] {
                assert_ne!(s, s2);
            }
        }
        // Deterministic in the seed.
        let doc2 = parse_scenario(text).unwrap();
        assert_eq!(doc.grid, doc2.grid);
    }
}
