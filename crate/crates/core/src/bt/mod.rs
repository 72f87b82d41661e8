//! Behavior-tree executor and the feeding trees.
//!
//! Sequences and fallbacks keep memory: a child that returned Success is not
//! re-ticked until the parent completes or is reset. A tick emits at most
//! one [`ControlIntent`]; the tick that makes an execution terminal always
//! emits `Hold`, and a terminal execution emits nothing.

pub mod actions;
pub mod blackboard;
pub mod trees;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blackboard::{BbType, BbValue, Blackboard};
pub use trees::{
    app_state_tree, build_acquire_food_tree, build_move_above_plate_tree,
    build_move_to_mouth_tree, build_move_to_staging_tree, build_retract_tree, build_stow_tree,
    build_tree, AppState, TreeArgs, TreeName,
};

use crate::acquire::{ActionLibrary, NUM_ACTIONS};
use crate::control::{AbortReason, ControlIntent, GateConfig, GateOutcome};
use crate::params::ParamSet;
use crate::safety::GuardState;
use crate::sensors::ForceTorqueReading;
use crate::transfer::{InteractionClass, MouthEstimate, ReadinessState, TransferPhase};
use crate::world::WorldState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Success,
    Failure,
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureReason {
    Preempted,
    ForceGateTripped { force: f64, torque: f64 },
    StaleReading,
    SafetyShutdown,
    Timeout,
    PlanningFailed { detail: String },
    ConditionFailed { condition: String },
    ActionFailed { detail: String },
}

impl FailureReason {
    /// Safety and operator stops are never retried.
    pub fn retryable(&self) -> bool {
        !matches!(
            self,
            FailureReason::Preempted
                | FailureReason::ForceGateTripped { .. }
                | FailureReason::StaleReading
                | FailureReason::SafetyShutdown
        )
    }

    pub fn from_abort(reason: &AbortReason) -> Self {
        match reason {
            AbortReason::ForceGateTripped { force, torque } => FailureReason::ForceGateTripped {
                force: *force,
                torque: *torque,
            },
            AbortReason::StaleReading { .. } => FailureReason::StaleReading,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BtError {
    #[error("action binding {0:?} is not registered")]
    UnboundAction(String),
    #[error("condition binding {0:?} is not registered")]
    UnboundCondition(String),
    #[error("invalid parameters for {binding}: {reason}")]
    InvalidParams { binding: String, reason: String },
    #[error("unknown food item {0:?}")]
    UnknownFood(String),
    #[error("action index {0} out of range (library has {NUM_ACTIONS})")]
    ActionIndexOutOfRange(usize),
    #[error("unknown tree {0:?}")]
    UnknownTree(String),
    #[error("execution is already terminal")]
    AlreadyTerminal,
    #[error("blackboard key {key:?} expects {expected:?}")]
    BlackboardType { key: String, expected: BbType },
    #[error("blackboard key {0:?} is not in the schema")]
    BlackboardKey(String),
    #[error("tree definition is invalid: {0}")]
    InvalidTree(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecoratorKind {
    /// Re-run the child after a retryable failure, up to `attempts` total.
    Retry { attempts: u32 },
    Timeout { seconds: f64 },
    /// Run the child with these gate thresholds.
    GateOverride { gate: GateConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeDef {
    Sequence {
        id: String,
        children: Vec<NodeDef>,
    },
    Fallback {
        id: String,
        children: Vec<NodeDef>,
    },
    Action {
        id: String,
        binding: String,
        #[serde(default)]
        params: serde_json::Value,
    },
    Condition {
        id: String,
        binding: String,
        #[serde(default)]
        params: serde_json::Value,
    },
    Decorator {
        id: String,
        decorator: DecoratorKind,
        child: Box<NodeDef>,
    },
}

impl NodeDef {
    pub fn id(&self) -> &str {
        match self {
            NodeDef::Sequence { id, .. }
            | NodeDef::Fallback { id, .. }
            | NodeDef::Action { id, .. }
            | NodeDef::Condition { id, .. }
            | NodeDef::Decorator { id, .. } => id,
        }
    }

    pub fn children(&self) -> Vec<&NodeDef> {
        match self {
            NodeDef::Sequence { children, .. } | NodeDef::Fallback { children, .. } => {
                children.iter().collect()
            }
            NodeDef::Decorator { child, .. } => vec![child.as_ref()],
            _ => Vec::new(),
        }
    }

    /// Node ids in depth-first order.
    pub fn ids(&self) -> Vec<String> {
        let mut out = vec![self.id().to_string()];
        for c in self.children() {
            out.extend(c.ids());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDefinition {
    pub name: String,
    pub root: NodeDef,
    pub blackboard_schema: BTreeMap<String, BbType>,
}

impl TreeDefinition {
    /// Node ids must be unique and decorators well-formed.
    pub fn validate(&self) -> Result<(), BtError> {
        let ids = self.root.ids();
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(BtError::InvalidTree("duplicate node ids".into()));
        }
        fn check(n: &NodeDef) -> Result<(), BtError> {
            match n {
                NodeDef::Sequence { children, .. } | NodeDef::Fallback { children, .. }
                    if children.is_empty() =>
                {
                    Err(BtError::InvalidTree(format!("{} has no children", n.id())))
                }
                NodeDef::Decorator {
                    decorator: DecoratorKind::Retry { attempts: 0 },
                    ..
                } => Err(BtError::InvalidTree(format!("{} retries zero times", n.id()))),
                NodeDef::Decorator {
                    decorator: DecoratorKind::Timeout { seconds },
                    ..
                } if !(*seconds > 0.0) => {
                    Err(BtError::InvalidTree(format!("{} has non-positive timeout", n.id())))
                }
                NodeDef::Decorator {
                    decorator: DecoratorKind::GateOverride { gate },
                    ..
                } => gate
                    .validate()
                    .map_err(|e| BtError::InvalidTree(format!("{}: {e}", n.id()))),
                _ => n.children().into_iter().try_for_each(check),
            }
        }
        check(&self.root)
    }
}

/// Perception outputs the runtime hands to behaviors each tick.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionSnapshot {
    pub mouth: Option<MouthEstimate>,
    pub readiness: ReadinessState,
    /// Most recent F/T readings, oldest first.
    pub ft_window: Vec<ForceTorqueReading>,
    /// The spasm detector fired within the classification window.
    pub spasm_in_window: bool,
}

impl Default for PerceptionSnapshot {
    fn default() -> Self {
        Self {
            mouth: None,
            readiness: ReadinessState::NotReady(crate::transfer::NotReadyReason::NoEstimate),
            ft_window: Vec::new(),
            spasm_in_window: false,
        }
    }
}

/// Read-only inputs to one tick.
pub struct TickInputs<'a> {
    pub world: &'a WorldState,
    pub ft: Option<&'a ForceTorqueReading>,
    pub guard: GuardState,
    /// Gate outcome of the command routed on the previous tick.
    pub last_gate: Option<&'a GateOutcome>,
    pub perception: &'a PerceptionSnapshot,
    pub params: &'a ParamSet,
    pub library: Option<&'a ActionLibrary>,
    pub now: f64,
    pub dt: f64,
}

impl TickInputs<'_> {
    /// Abort carried by the previous tick's gated command.
    pub fn gate_abort(&self) -> Option<FailureReason> {
        match self.last_gate {
            Some(GateOutcome::Abort(r)) => Some(FailureReason::from_abort(r)),
            _ => None,
        }
    }
}

/// Requests a behavior makes of the world beyond its arm command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldEffect {
    AttachFood { food_id: String },
}

/// Trace records emitted by behaviors, for audit logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Transfer {
        t: f64,
        phase: TransferPhase,
        interaction: Option<InteractionClass>,
        motion: bool,
    },
    Acquisition {
        t: f64,
        food_id: String,
        arm: usize,
        success: bool,
    },
}

pub struct TickContext<'a, 'b> {
    pub inputs: &'a TickInputs<'b>,
    pub blackboard: &'a mut Blackboard,
    /// Gate thresholds in force for the node being ticked.
    pub gate: GateConfig,
    intent: Option<ControlIntent>,
    pub failure: Option<FailureReason>,
    pub effects: Vec<WorldEffect>,
    pub events: Vec<TraceEvent>,
}

impl TickContext<'_, '_> {
    /// Set this tick's command. A second call in the same tick is a bug in
    /// the tree and is ignored with a warning.
    pub fn command(&mut self, intent: ControlIntent) {
        if self.intent.is_some() {
            log::warn!("second command in one tick ignored");
            return;
        }
        self.intent = Some(intent);
    }

    pub fn fail(&mut self, reason: FailureReason) -> NodeStatus {
        self.failure = Some(reason);
        NodeStatus::Failure
    }
}

/// A stateful leaf.
pub trait Behavior: Send {
    fn tick(&mut self, ctx: &mut TickContext<'_, '_>) -> NodeStatus;
    /// Stop; the next tick after a reset starts over.
    fn cancel(&mut self) {}
    fn reset(&mut self);
}

pub trait Predicate: Send {
    fn check(&self, inputs: &TickInputs<'_>, blackboard: &Blackboard) -> bool;
}

pub type ActionFactory = fn(&serde_json::Value) -> Result<Box<dyn Behavior>, BtError>;
pub type ConditionFactory = fn(&serde_json::Value) -> Result<Box<dyn Predicate>, BtError>;

#[derive(Clone, Default)]
pub struct Registry {
    actions: BTreeMap<String, ActionFactory>,
    conditions: BTreeMap<String, ConditionFactory>,
}

impl Registry {
    pub fn register_action(&mut self, name: &str, f: ActionFactory) {
        self.actions.insert(name.into(), f);
    }

    pub fn register_condition(&mut self, name: &str, f: ConditionFactory) {
        self.conditions.insert(name.into(), f);
    }

    pub fn action_names(&self) -> impl Iterator<Item = &str> {
        self.actions.keys().map(String::as_str)
    }

    /// The feeding behaviors.
    pub fn feeding() -> Self {
        let mut r = Self::default();
        actions::register_all(&mut r);
        r
    }

    fn build(&self, def: &NodeDef) -> Result<Node, BtError> {
        Ok(match def {
            NodeDef::Sequence { id, children } => Node::Sequence {
                id: id.clone(),
                children: children.iter().map(|c| self.build(c)).collect::<Result<_, _>>()?,
                cursor: 0,
            },
            NodeDef::Fallback { id, children } => Node::Fallback {
                id: id.clone(),
                children: children.iter().map(|c| self.build(c)).collect::<Result<_, _>>()?,
                cursor: 0,
            },
            NodeDef::Action {
                id,
                binding,
                params,
            } => {
                let f = self
                    .actions
                    .get(binding)
                    .ok_or_else(|| BtError::UnboundAction(binding.clone()))?;
                Node::Action {
                    id: id.clone(),
                    behavior: f(params)?,
                }
            }
            NodeDef::Condition {
                id,
                binding,
                params,
            } => {
                let f = self
                    .conditions
                    .get(binding)
                    .ok_or_else(|| BtError::UnboundCondition(binding.clone()))?;
                Node::Condition {
                    id: id.clone(),
                    binding: binding.clone(),
                    predicate: f(params)?,
                }
            }
            NodeDef::Decorator {
                id,
                decorator,
                child,
            } => Node::Decorator {
                id: id.clone(),
                kind: *decorator,
                child: Box::new(self.build(child)?),
                failures: 0,
                started: None,
            },
        })
    }

    /// Bind every node of `def`. Missing bindings are reported here rather
    /// than on first tick.
    pub fn instantiate(&self, def: &TreeDefinition, id: u64) -> Result<TreeExecution, BtError> {
        def.validate()?;
        Ok(TreeExecution {
            id,
            tree: def.name.clone(),
            root: self.build(&def.root)?,
            status: NodeStatus::Running,
            failure: None,
            preempt_requested: false,
            current_path: Vec::new(),
            blackboard: Blackboard::new(def.blackboard_schema.clone()),
        })
    }
}

enum Node {
    Sequence {
        id: String,
        children: Vec<Node>,
        cursor: usize,
    },
    Fallback {
        id: String,
        children: Vec<Node>,
        cursor: usize,
    },
    Action {
        id: String,
        behavior: Box<dyn Behavior>,
    },
    Condition {
        id: String,
        binding: String,
        predicate: Box<dyn Predicate>,
    },
    Decorator {
        id: String,
        kind: DecoratorKind,
        child: Box<Node>,
        failures: u32,
        started: Option<f64>,
    },
}

impl Node {
    fn reset(&mut self) {
        match self {
            Node::Sequence {
                children, cursor, ..
            }
            | Node::Fallback {
                children, cursor, ..
            } => {
                *cursor = 0;
                children.iter_mut().for_each(Node::reset);
            }
            Node::Action { behavior, .. } => behavior.reset(),
            Node::Condition { .. } => {}
            Node::Decorator {
                child,
                failures,
                started,
                ..
            } => {
                *failures = 0;
                *started = None;
                child.reset();
            }
        }
    }

    fn cancel(&mut self) {
        match self {
            Node::Sequence { children, .. } | Node::Fallback { children, .. } => {
                children.iter_mut().for_each(Node::cancel)
            }
            Node::Action { behavior, .. } => behavior.cancel(),
            Node::Condition { .. } => {}
            Node::Decorator { child, .. } => child.cancel(),
        }
    }

    fn tick(&mut self, ctx: &mut TickContext<'_, '_>, path: &mut Vec<String>) -> NodeStatus {
        match self {
            Node::Sequence {
                id,
                children,
                cursor,
            } => {
                path.push(id.clone());
                let depth = path.len();
                while *cursor < children.len() {
                    path.truncate(depth);
                    match children[*cursor].tick(ctx, path) {
                        NodeStatus::Success => *cursor += 1,
                        NodeStatus::Running => return NodeStatus::Running,
                        NodeStatus::Failure => {
                            *cursor = 0;
                            return NodeStatus::Failure;
                        }
                    }
                }
                *cursor = 0;
                NodeStatus::Success
            }
            Node::Fallback {
                id,
                children,
                cursor,
            } => {
                path.push(id.clone());
                let depth = path.len();
                while *cursor < children.len() {
                    path.truncate(depth);
                    match children[*cursor].tick(ctx, path) {
                        NodeStatus::Failure => {
                            if ctx.failure.as_ref().is_some_and(|f| !f.retryable()) {
                                *cursor = 0;
                                return NodeStatus::Failure;
                            }
                            if *cursor + 1 < children.len() {
                                ctx.failure = None;
                            }
                            *cursor += 1;
                        }
                        NodeStatus::Running => return NodeStatus::Running,
                        NodeStatus::Success => {
                            *cursor = 0;
                            return NodeStatus::Success;
                        }
                    }
                }
                *cursor = 0;
                NodeStatus::Failure
            }
            Node::Action { id, behavior } => {
                path.push(id.clone());
                // Only a leaf that keeps running commands the arm.
                let before = ctx.intent.is_some();
                let s = behavior.tick(ctx);
                if s != NodeStatus::Running && !before {
                    ctx.intent = None;
                }
                s
            }
            Node::Condition {
                id,
                binding,
                predicate,
            } => {
                path.push(id.clone());
                if predicate.check(ctx.inputs, ctx.blackboard) {
                    NodeStatus::Success
                } else {
                    ctx.fail(FailureReason::ConditionFailed {
                        condition: binding.clone(),
                    })
                }
            }
            Node::Decorator {
                id,
                kind,
                child,
                failures,
                started,
            } => {
                path.push(id.clone());
                match *kind {
                    DecoratorKind::GateOverride { gate } => {
                        let saved = std::mem::replace(&mut ctx.gate, gate);
                        let s = child.tick(ctx, path);
                        ctx.gate = saved;
                        s
                    }
                    DecoratorKind::Timeout { seconds } => {
                        let t0 = *started.get_or_insert(ctx.inputs.now);
                        if ctx.inputs.now - t0 > seconds + 1e-9 {
                            child.cancel();
                            *started = None;
                            return ctx.fail(FailureReason::Timeout);
                        }
                        let s = child.tick(ctx, path);
                        if s != NodeStatus::Running {
                            *started = None;
                        }
                        s
                    }
                    DecoratorKind::Retry { attempts } => {
                        let s = child.tick(ctx, path);
                        if s == NodeStatus::Failure
                            && ctx.failure.as_ref().is_none_or(FailureReason::retryable)
                            && *failures + 1 < attempts
                        {
                            *failures += 1;
                            log::info!("{id}: retry {} of {}", *failures, attempts - 1);
                            ctx.failure = None;
                            child.reset();
                            return NodeStatus::Running;
                        }
                        if s != NodeStatus::Running {
                            *failures = 0;
                        }
                        s
                    }
                }
            }
        }
    }
}

/// Everything a tick produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub status: NodeStatus,
    pub intent: Option<ControlIntent>,
    pub effects: Vec<WorldEffect>,
    pub events: Vec<TraceEvent>,
}

pub struct TreeExecution {
    pub id: u64,
    pub tree: String,
    root: Node,
    pub status: NodeStatus,
    pub failure: Option<FailureReason>,
    pub preempt_requested: bool,
    /// Node ids from the root to the leaf ticked last.
    pub current_path: Vec<String>,
    pub blackboard: Blackboard,
}

impl std::fmt::Debug for TreeExecution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TreeExecution")
            .field("id", &self.id)
            .field("tree", &self.tree)
            .field("status", &self.status)
            .field("failure", &self.failure)
            .field("current_path", &self.current_path)
            .finish()
    }
}

impl TreeExecution {
    pub fn is_terminal(&self) -> bool {
        self.status != NodeStatus::Running
    }

    /// Request preemption; observed on the next tick.
    pub fn preempt(&mut self) -> Result<(), BtError> {
        if self.is_terminal() {
            return Err(BtError::AlreadyTerminal);
        }
        self.preempt_requested = true;
        Ok(())
    }

    /// End the execution from outside the tree, e.g. on a safety stop.
    pub fn abort(&mut self, reason: FailureReason) {
        if !self.is_terminal() {
            self.root.cancel();
            self.status = NodeStatus::Failure;
            self.failure = Some(reason);
        }
    }

    pub fn tick(&mut self, inputs: &TickInputs<'_>) -> Result<TickOutput, BtError> {
        if self.is_terminal() {
            return Err(BtError::AlreadyTerminal);
        }
        if self.preempt_requested {
            self.root.cancel();
            self.status = NodeStatus::Failure;
            self.failure = Some(FailureReason::Preempted);
            return Ok(TickOutput {
                status: NodeStatus::Failure,
                intent: Some(ControlIntent::Hold),
                effects: Vec::new(),
                events: Vec::new(),
            });
        }
        let mut ctx = TickContext {
            inputs,
            blackboard: &mut self.blackboard,
            gate: inputs.params.gate(),
            intent: None,
            failure: None,
            effects: Vec::new(),
            events: Vec::new(),
        };
        let mut path = Vec::new();
        let status = self.root.tick(&mut ctx, &mut path);
        let TickContext {
            intent,
            failure,
            effects,
            events,
            ..
        } = ctx;
        self.current_path = path;
        self.status = status;
        let intent = match status {
            NodeStatus::Running => intent,
            NodeStatus::Success => Some(ControlIntent::Hold),
            NodeStatus::Failure => {
                self.root.cancel();
                self.failure = Some(failure.unwrap_or(FailureReason::ActionFailed {
                    detail: "unspecified".into(),
                }));
                Some(ControlIntent::Hold)
            }
        };
        Ok(TickOutput {
            status,
            intent,
            effects,
            events,
        })
    }
}

#[cfg(test)]
mod tests;
