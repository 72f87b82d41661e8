//! Definitions of the feeding trees and the app-state mapping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BbType, BtError, DecoratorKind, NodeDef, TreeDefinition};
use crate::acquire::NUM_ACTIONS;
use crate::control::GateConfig;
use crate::world::FoodItem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeName {
    MoveAbovePlate,
    AcquireFood,
    MoveToStaging,
    MoveToMouth,
    Retract,
    Stow,
}

impl TreeName {
    pub const ALL: [TreeName; 6] = [
        TreeName::MoveAbovePlate,
        TreeName::AcquireFood,
        TreeName::MoveToStaging,
        TreeName::MoveToMouth,
        TreeName::Retract,
        TreeName::Stow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TreeName::MoveAbovePlate => "move_above_plate",
            TreeName::AcquireFood => "acquire_food",
            TreeName::MoveToStaging => "move_to_staging",
            TreeName::MoveToMouth => "move_to_mouth",
            TreeName::Retract => "retract",
            TreeName::Stow => "stow",
        }
    }

    pub fn parse(s: &str) -> Result<Self, BtError> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| BtError::UnknownTree(s.into()))
    }
}

/// Force limit during extraction; lifting a skewered item loads the fork.
pub const EXTRACTION_GATE_FORCE: f64 = 10.0;

fn action(id: &str, binding: &str, params: serde_json::Value) -> NodeDef {
    NodeDef::Action {
        id: id.into(),
        binding: binding.into(),
        params,
    }
}

fn station_move(name: TreeName, station: &str) -> TreeDefinition {
    TreeDefinition {
        name: name.as_str().into(),
        root: action(
            "move",
            "move_to_configuration",
            json!({ "target": { "station": station } }),
        ),
        blackboard_schema: BTreeMap::new(),
    }
}

pub fn build_move_above_plate_tree() -> TreeDefinition {
    station_move(TreeName::MoveAbovePlate, "above_plate")
}

pub fn build_move_to_staging_tree() -> TreeDefinition {
    station_move(TreeName::MoveToStaging, "staging")
}

pub fn build_stow_tree() -> TreeDefinition {
    station_move(TreeName::Stow, "rest")
}

pub fn build_move_to_mouth_tree() -> TreeDefinition {
    TreeDefinition {
        name: TreeName::MoveToMouth.as_str().into(),
        root: action("transfer", "transfer", json!({})),
        blackboard_schema: [("bite_detected".to_string(), BbType::Bool)].into(),
    }
}

pub fn build_retract_tree() -> TreeDefinition {
    TreeDefinition {
        name: TreeName::Retract.as_str().into(),
        root: action("retract", "retract_to_staging", json!({})),
        blackboard_schema: BTreeMap::new(),
    }
}

/// `plate` is the current plate; the food must be on it.
pub fn build_acquire_food_tree(
    food_id: &str,
    action_index: usize,
    plate: &[FoodItem],
) -> Result<TreeDefinition, BtError> {
    if !plate.iter().any(|f| f.id == food_id) {
        return Err(BtError::UnknownFood(food_id.into()));
    }
    if action_index >= NUM_ACTIONS {
        return Err(BtError::ActionIndexOutOfRange(action_index));
    }
    let segment = |id: &str, s: &str| action(id, "schema_segment", json!({ "segment": s }));
    let root = NodeDef::Sequence {
        id: "acquire".into(),
        children: vec![
            action(
                "compute_frames",
                "compute_frames",
                json!({ "food_id": food_id, "action_index": action_index }),
            ),
            action(
                "move_to_approach",
                "move_to_configuration",
                json!({ "target": { "blackboard": "approach_q" } }),
            ),
            NodeDef::Sequence {
                id: "execute_schema".into(),
                children: vec![
                    segment("approach", "approach"),
                    segment("in_food", "in_food"),
                    NodeDef::Decorator {
                        id: "extraction_gate".into(),
                        decorator: DecoratorKind::GateOverride {
                            gate: GateConfig {
                                f_max: EXTRACTION_GATE_FORCE,
                                ..GateConfig::default()
                            },
                        },
                        child: Box::new(segment("extraction", "extraction")),
                    },
                ],
            },
            action(
                "move_to_rest",
                "move_to_configuration",
                json!({ "target": { "station": "above_plate" } }),
            ),
            NodeDef::Condition {
                id: "food_on_fork".into(),
                binding: "food_on_fork".into(),
                params: json!({}),
            },
        ],
    };
    let schema = [
        ("food_id", BbType::Text),
        ("action_index", BbType::Index),
        ("schema", BbType::Schema),
        ("flip", BbType::Bool),
        ("approach_q", BbType::Joints),
        ("haptic_series", BbType::Series),
        ("success", BbType::Bool),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    Ok(TreeDefinition {
        name: TreeName::AcquireFood.as_str().into(),
        root,
        blackboard_schema: schema,
    })
}

/// Arguments accepted by [`build_tree`]; only `acquire_food` uses them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeArgs {
    pub food_id: Option<String>,
    pub action_index: Option<usize>,
}

pub fn build_tree(
    name: TreeName,
    args: &TreeArgs,
    plate: &[FoodItem],
) -> Result<TreeDefinition, BtError> {
    Ok(match name {
        TreeName::MoveAbovePlate => build_move_above_plate_tree(),
        TreeName::MoveToStaging => build_move_to_staging_tree(),
        TreeName::MoveToMouth => build_move_to_mouth_tree(),
        TreeName::Retract => build_retract_tree(),
        TreeName::Stow => build_stow_tree(),
        TreeName::AcquireFood => {
            let food = args.food_id.as_deref().ok_or_else(|| BtError::InvalidParams {
                binding: "acquire_food".into(),
                reason: "food_id is required".into(),
            })?;
            let idx = args.action_index.ok_or_else(|| BtError::InvalidParams {
                binding: "acquire_food".into(),
                reason: "action_index is required".into(),
            })?;
            build_acquire_food_tree(food, idx, plate)?
        }
    })
}

/// Screens of the user interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppState {
    Home,
    BiteSelection,
    MovingAbovePlate,
    Acquiring,
    MovingToStaging,
    AwaitingReady,
    MovingToMouth,
    InMouthTransfer,
    Retracting,
    Stowing,
    Settings,
}

impl AppState {
    pub const ALL: [AppState; 11] = [
        AppState::Home,
        AppState::BiteSelection,
        AppState::MovingAbovePlate,
        AppState::Acquiring,
        AppState::MovingToStaging,
        AppState::AwaitingReady,
        AppState::MovingToMouth,
        AppState::InMouthTransfer,
        AppState::Retracting,
        AppState::Stowing,
        AppState::Settings,
    ];
}

/// The tree that runs while the interface shows `state`, if any.
pub fn app_state_tree(state: AppState) -> Option<TreeName> {
    match state {
        AppState::Home | AppState::BiteSelection | AppState::AwaitingReady | AppState::Settings => {
            None
        }
        AppState::MovingAbovePlate => Some(TreeName::MoveAbovePlate),
        AppState::Acquiring => Some(TreeName::AcquireFood),
        AppState::MovingToStaging => Some(TreeName::MoveToStaging),
        AppState::MovingToMouth | AppState::InMouthTransfer => Some(TreeName::MoveToMouth),
        AppState::Retracting => Some(TreeName::Retract),
        AppState::Stowing => Some(TreeName::Stow),
    }
}
