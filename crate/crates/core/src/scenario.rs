//! Scenario files and the headless meal runner.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acquire::sim::dataset_moments;
use crate::acquire::{
    compute_posthoc_context, k_medoids, select_action, ActionLibrary, BanditState,
    HapticNormalizer, HapticQuery, TrajectoryDataset, VisualContext, CONTEXT_DIM, DEFAULT_ALPHA,
    NUM_ACTIONS,
};
use crate::bt::{build_tree, TreeArgs, TreeName};
use crate::params::{ParamPatch, ParamSet};
use crate::runtime::{ActionState, Fault, Robot, RuntimeConfig, SafetyEvent, StartError};
use crate::safety::ViolationRecord;
use crate::sensors::SensorConfig;
use crate::world::kinematics::ArmModel;
use crate::world::{
    FoodItem, HeadModel, Obstacle, Plate, Stations, UserBehavior, WorldConfig, WorldError,
    WorldState,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Overrides of the reference world. Stations are re-solved when the arm,
/// plate or head change and no stations are given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub arm: Option<ArmModel>,
    pub plate: Option<Plate>,
    pub head: Option<HeadModel>,
    pub user: Option<UserBehavior>,
    pub sensors: Option<SensorConfig>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub torque_damping: Option<f64>,
    pub stations: Option<Stations>,
}

impl WorldSpec {
    pub fn build(&self) -> Result<WorldConfig, ScenarioError> {
        let mut cfg = WorldConfig::reference();
        let relayout = self.arm.is_some() || self.plate.is_some() || self.head.is_some();
        if let Some(a) = &self.arm {
            cfg.arm = a.clone();
        }
        if let Some(p) = &self.plate {
            cfg.plate = p.clone();
        }
        if let Some(h) = &self.head {
            cfg.head = h.clone();
        }
        if let Some(u) = &self.user {
            cfg.user = u.clone();
        }
        if let Some(s) = &self.sensors {
            cfg.sensors = s.clone();
        }
        if let Some(d) = self.torque_damping {
            cfg.torque_damping = d;
        }
        cfg.obstacles = self.obstacles.clone();
        cfg.stations = match &self.stations {
            Some(s) => s.clone(),
            None if relayout => Stations::solve(&cfg.arm, &cfg.plate, &cfg.head)?,
            None => cfg.stations,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum LibrarySpec {
    /// Cluster a synthetic expert dataset.
    Generate {
        #[serde(default = "default_dataset_size")]
        dataset_size: usize,
        #[serde(default)]
        dataset_seed: u64,
    },
    Inline {
        library: ActionLibrary,
    },
}

fn default_dataset_size() -> usize {
    crate::acquire::dataset::DEFAULT_DATASET_SIZE
}

impl Default for LibrarySpec {
    fn default() -> Self {
        LibrarySpec::Generate {
            dataset_size: default_dataset_size(),
            dataset_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditSpec {
    pub alpha: f64,
    pub query: HapticQuery,
}

impl Default for BanditSpec {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            query: HapticQuery::default(),
        }
    }
}

fn default_attempts() -> u32 {
    3
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum ScriptStep {
    /// Run one tree.
    Action {
        tree: TreeName,
        #[serde(default)]
        food_id: Option<String>,
        #[serde(default)]
        action_index: Option<usize>,
        #[serde(default = "default_timeout")]
        timeout: f64,
    },
    /// Above plate, bandit-chosen acquisition with retries, staging, transfer.
    Bite {
        food_id: String,
        #[serde(default = "default_attempts")]
        max_attempts: u32,
    },
    Wait {
        seconds: f64,
    },
    SetParams {
        patch: ParamPatch,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub world: WorldSpec,
    pub food: Vec<FoodItem>,
    #[serde(default)]
    pub params: ParamPatch,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default)]
    pub library: LibrarySpec,
    #[serde(default)]
    pub bandit: BanditSpec,
    pub script: Vec<ScriptStep>,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

impl Scenario {
    /// Parse and check the version before the body, so a newer file reports
    /// its version rather than an unknown field.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        #[derive(Deserialize)]
        struct Probe {
            schema_version: Option<u32>,
        }
        let probe: Probe =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        match probe.schema_version {
            None => return Err(ScenarioError::Parse("missing schema_version".into())),
            Some(v) if v != SCHEMA_VERSION => return Err(ScenarioError::SchemaVersion(v)),
            _ => {}
        }
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersion(self.schema_version));
        }
        let mut ids: Vec<&str> = self.food.iter().map(|f| f.id.as_str()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ScenarioError::Invalid("duplicate food ids".into()));
        }
        ParamSet::default()
            .patched(&self.params)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        for (i, step) in self.script.iter().enumerate() {
            let known = |id: &str| self.food.iter().any(|f| f.id == id);
            match step {
                ScriptStep::Bite { food_id, .. } if !known(food_id) => {
                    return Err(ScenarioError::Invalid(format!(
                        "step {i}: unknown food {food_id:?}"
                    )))
                }
                ScriptStep::Bite { max_attempts: 0, .. } => {
                    return Err(ScenarioError::Invalid(format!("step {i}: zero attempts")))
                }
                ScriptStep::Action {
                    food_id: Some(f), ..
                } if !known(f) => {
                    return Err(ScenarioError::Invalid(format!("step {i}: unknown food {f:?}")))
                }
                ScriptStep::Action {
                    action_index: Some(a),
                    ..
                } if *a >= NUM_ACTIONS => {
                    return Err(ScenarioError::Invalid(format!(
                        "step {i}: action index {a} out of range"
                    )))
                }
                ScriptStep::Action { timeout, .. } | ScriptStep::Wait { seconds: timeout }
                    if !(*timeout >= 0.0 && timeout.is_finite()) =>
                {
                    return Err(ScenarioError::Invalid(format!("step {i}: bad duration")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub step: usize,
    pub id: Option<u64>,
    pub tree: String,
    #[serde(flatten)]
    pub state: OutcomeState,
    pub started_at: f64,
    pub ended_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum OutcomeState {
    Finished { state: ActionState },
    Rejected { error: String },
    TimedOut,
}

impl OutcomeState {
    fn succeeded(&self) -> bool {
        matches!(
            self,
            OutcomeState::Finished {
                state: ActionState::Succeeded
            }
        )
    }

    /// A safety stop or lockout ends the meal.
    fn halts(&self) -> bool {
        match self {
            OutcomeState::Rejected { .. } | OutcomeState::TimedOut => true,
            OutcomeState::Finished {
                state: ActionState::Failed { reason },
            } => !reason.retryable(),
            OutcomeState::Finished { state } => *state == ActionState::Preempted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditTraceEntry {
    pub attempt: u64,
    pub food_id: String,
    pub food_class: String,
    pub arm: usize,
    pub scores: Vec<f64>,
    pub success: bool,
    pub haptic_z: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiteOutcome {
    pub food_id: String,
    pub attempts: u32,
    pub acquired: bool,
    pub transferred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub acquisitions_succeeded: usize,
    pub acquisition_attempts: usize,
    pub transfers_succeeded: usize,
    pub utensil_intact: bool,
    pub halted: bool,
    pub sim_time: f64,
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub schema_version: u32,
    pub seed: u64,
    pub library_hash: String,
    pub actions: Vec<ActionOutcome>,
    pub bites: Vec<BiteOutcome>,
    pub bandit_trace: Vec<BanditTraceEntry>,
    pub safety_events: Vec<SafetyEvent>,
    pub violations: Vec<ViolationRecord>,
    pub summary: Summary,
    /// SHA-256 of the report serialized with this field empty.
    pub hash: String,
}

impl ScenarioReport {
    pub fn compute_hash(&self) -> String {
        let mut copy = self.clone();
        copy.hash.clear();
        let bytes = serde_json::to_vec(&copy).expect("reports serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Wall-clock timing; kept out of the hashed report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub library_seconds: f64,
    pub meal_seconds: f64,
}

pub fn build_library(spec: &LibrarySpec) -> Result<(ActionLibrary, HapticNormalizer), ScenarioError> {
    match spec {
        LibrarySpec::Generate {
            dataset_size,
            dataset_seed,
        } => {
            let data = TrajectoryDataset::synthetic(*dataset_size, *dataset_seed);
            let lib = k_medoids(&data, NUM_ACTIONS, *dataset_seed)
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            Ok((lib, dataset_moments(&data, *dataset_seed)))
        }
        LibrarySpec::Inline { library } => {
            if library.len() != NUM_ACTIONS {
                return Err(ScenarioError::Invalid(format!(
                    "library has {} actions, expected {NUM_ACTIONS}",
                    library.len()
                )));
            }
            // Moments come from the default dataset when only medoids are given.
            let data = TrajectoryDataset::synthetic(default_dataset_size(), 0);
            Ok((library.clone(), dataset_moments(&data, 0)))
        }
    }
}

struct MealRunner<'a> {
    scenario: &'a Scenario,
    robot: Robot,
    moments: HapticNormalizer,
    bandit: BanditState,
    actions: Vec<ActionOutcome>,
    bites: Vec<BiteOutcome>,
    bandit_trace: Vec<BanditTraceEntry>,
    halted: bool,
}

impl MealRunner<'_> {
    fn run_tree(
        &mut self,
        step: usize,
        tree: TreeName,
        args: &TreeArgs,
        timeout: f64,
    ) -> Result<OutcomeState, ScenarioError> {
        let started_at = self.robot.world.time;
        let outcome = match build_tree(tree, args, &self.robot.world.plate) {
            Err(e) => (None, OutcomeState::Rejected { error: e.to_string() }),
            Ok(def) => match self.robot.start_action(&def) {
                Err(e @ StartError::Busy(_)) => {
                    return Err(ScenarioError::Invalid(format!("internal: {e}")))
                }
                Err(e) => (None, OutcomeState::Rejected { error: e.to_string() }),
                Ok(id) => {
                    let rec = self.robot.run_action(id, timeout)?;
                    if rec.state.is_terminal() {
                        (Some(id), OutcomeState::Finished { state: rec.state })
                    } else {
                        let _ = self.robot.preempt(id);
                        self.robot.step()?;
                        (Some(id), OutcomeState::TimedOut)
                    }
                }
            },
        };
        self.actions.push(ActionOutcome {
            step,
            id: outcome.0,
            tree: tree.as_str().into(),
            state: outcome.1.clone(),
            started_at,
            ended_at: self.robot.world.time,
        });
        if outcome.1.halts() {
            self.halted = true;
        }
        Ok(outcome.1)
    }

    fn attempt_acquisition(&mut self, step: usize, food_id: &str) -> Result<bool, ScenarioError> {
        let Some(food) = self.robot.world.food(food_id).cloned() else {
            return Ok(false);
        };
        let visual = VisualContext::from_food(&food)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let scores = self
            .bandit
            .scores(&visual)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let arm = select_action(&self.bandit, &visual)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let args = TreeArgs {
            food_id: Some(food_id.into()),
            action_index: Some(arm),
        };
        let outcome = self.run_tree(step, TreeName::AcquireFood, &args, default_timeout())?;
        let acquired = outcome.succeeded();
        let series = self
            .robot
            .blackboard()
            .and_then(|bb| bb.series("haptic_series"))
            .unwrap_or_default();
        // Attempts stopped before touching the food carry no haptic evidence.
        if let Ok(haptic) = compute_posthoc_context(&series, &self.moments) {
            self.bandit
                .update(arm, &visual, &haptic, acquired)
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            self.bandit_trace.push(BanditTraceEntry {
                attempt: self.bandit.attempts,
                food_id: food_id.into(),
                food_class: food.food_class.clone(),
                arm,
                scores,
                success: acquired,
                haptic_z: haptic.z,
            });
        }
        Ok(acquired)
    }

    fn bite(&mut self, step: usize, food_id: &str, max_attempts: u32) -> Result<(), ScenarioError> {
        let mut out = BiteOutcome {
            food_id: food_id.into(),
            attempts: 0,
            acquired: false,
            transferred: false,
        };
        let none = TreeArgs::default();
        while !self.halted && out.attempts < max_attempts && !out.acquired {
            if !self
                .run_tree(step, TreeName::MoveAbovePlate, &none, default_timeout())?
                .succeeded()
            {
                break;
            }
            out.attempts += 1;
            out.acquired = self.attempt_acquisition(step, food_id)?;
        }
        if out.acquired && !self.halted {
            let staged = self
                .run_tree(step, TreeName::MoveToStaging, &none, default_timeout())?
                .succeeded();
            if staged {
                out.transferred = self
                    .run_tree(step, TreeName::MoveToMouth, &none, default_timeout())?
                    .succeeded()
                    && self.robot.world.user.consumed.iter().any(|c| c == food_id);
            }
        }
        self.bites.push(out);
        Ok(())
    }

    fn run(&mut self) -> Result<(), ScenarioError> {
        // One tick so the receiver guard sees its first all-clear.
        self.robot.step()?;
        for (i, step) in self.scenario.script.iter().enumerate() {
            if self.halted {
                break;
            }
            match step {
                ScriptStep::Action {
                    tree,
                    food_id,
                    action_index,
                    timeout,
                } => {
                    let args = TreeArgs {
                        food_id: food_id.clone(),
                        action_index: *action_index,
                    };
                    self.run_tree(i, *tree, &args, *timeout)?;
                }
                ScriptStep::Bite {
                    food_id,
                    max_attempts,
                } => self.bite(i, food_id, *max_attempts)?,
                ScriptStep::Wait { seconds } => {
                    let end = self.robot.world.time + seconds;
                    while self.robot.world.time < end - 1e-9 {
                        self.robot.step()?;
                    }
                }
                ScriptStep::SetParams { patch } => {
                    self.robot
                        .set_params(patch)
                        .map_err(|e| ScenarioError::Invalid(format!("step {i}: {e}")))?;
                }
            }
        }
        Ok(())
    }
}

/// Build the robot a scenario describes, without running it.
pub fn build_robot(
    scenario: &Scenario,
    library: Option<ActionLibrary>,
) -> Result<Robot, ScenarioError> {
    let cfg = scenario.world.build()?;
    let q0 = cfg.stations.rest;
    let world = WorldState::new(cfg, scenario.food.clone(), q0, scenario.seed)?;
    let params = ParamSet::default()
        .patched(&scenario.params)
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    Ok(Robot::new(world, params, library, scenario.runtime)
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?
        .with_faults(scenario.faults.clone()))
}

/// Run the scripted meal. `seed` overrides the scenario's seed.
pub fn run_scenario(
    scenario: &Scenario,
    seed: Option<u64>,
) -> Result<(ScenarioReport, RunTiming), ScenarioError> {
    run_scenario_with(scenario, seed, None).map(|(r, t, _)| (r, t))
}

/// As [`run_scenario`], resuming from a bandit checkpoint and returning the
/// bandit's final state.
pub fn run_scenario_with(
    scenario: &Scenario,
    seed: Option<u64>,
    checkpoint: Option<BanditState>,
) -> Result<(ScenarioReport, RunTiming, BanditState), ScenarioError> {
    scenario.validate()?;
    let mut scenario = scenario.clone();
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let t0 = Instant::now();
    let (library, moments) = build_library(&scenario.library)?;
    let library_seconds = t0.elapsed().as_secs_f64();
    let library_hash = {
        let bytes = serde_json::to_vec(&library.medoids).expect("library serializes");
        hex::encode(Sha256::digest(&bytes))
    };
    let robot = build_robot(&scenario, Some(library))?;
    let bandit = match checkpoint {
        Some(b) => {
            if b.arms.len() != NUM_ACTIONS || b.dim() != CONTEXT_DIM {
                return Err(ScenarioError::Invalid(
                    "bandit checkpoint does not match the action library".into(),
                ));
            }
            b
        }
        None => BanditState::new(NUM_ACTIONS, CONTEXT_DIM, scenario.bandit.alpha)
            .with_query(scenario.bandit.query),
    };
    let mut runner = MealRunner {
        scenario: &scenario,
        robot,
        moments,
        bandit,
        actions: Vec::new(),
        bites: Vec::new(),
        bandit_trace: Vec::new(),
        halted: false,
    };
    let t1 = Instant::now();
    runner.run()?;
    let meal_seconds = t1.elapsed().as_secs_f64();
    let r = &runner.robot;
    let acquisitions: Vec<_> = runner
        .actions
        .iter()
        .filter(|a| a.tree == TreeName::AcquireFood.as_str())
        .collect();
    let summary = Summary {
        acquisitions_succeeded: acquisitions.iter().filter(|a| a.state.succeeded()).count(),
        acquisition_attempts: acquisitions.len(),
        transfers_succeeded: r.world.user.consumed.len(),
        utensil_intact: r.world.utensil.intact,
        halted: runner.halted,
        sim_time: r.world.time,
        ticks: r.world.tick,
    };
    let mut report = ScenarioReport {
        schema_version: SCHEMA_VERSION,
        seed: scenario.seed,
        library_hash,
        actions: runner.actions,
        bites: runner.bites,
        bandit_trace: runner.bandit_trace,
        safety_events: r.safety_events.clone(),
        violations: r.violation_log().to_vec(),
        summary,
        hash: String::new(),
    };
    report.hash = report.compute_hash();
    Ok((
        report,
        RunTiming {
            library_seconds,
            meal_seconds,
        },
        runner.bandit,
    ))
}
