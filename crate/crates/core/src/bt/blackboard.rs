//! Typed key/value store shared by the nodes of one execution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BtError;
use crate::acquire::SchemaAction;
use crate::sensors::ForceTorqueReading;
use crate::world::pose::vec6_serde;
use crate::world::{Joints, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BbType {
    Pose,
    Joints,
    Text,
    Index,
    Bool,
    Schema,
    Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum BbValue {
    Pose(Pose),
    Joints(#[serde(with = "vec6_serde")] Joints),
    Text(String),
    Index(usize),
    Bool(bool),
    Schema(SchemaAction),
    Series(Vec<ForceTorqueReading>),
}

impl BbValue {
    pub fn ty(&self) -> BbType {
        match self {
            BbValue::Pose(_) => BbType::Pose,
            BbValue::Joints(_) => BbType::Joints,
            BbValue::Text(_) => BbType::Text,
            BbValue::Index(_) => BbType::Index,
            BbValue::Bool(_) => BbType::Bool,
            BbValue::Schema(_) => BbType::Schema,
            BbValue::Series(_) => BbType::Series,
        }
    }
}

/// Writes are checked against the schema; keys outside it are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Blackboard {
    schema: BTreeMap<String, BbType>,
    values: BTreeMap<String, BbValue>,
}

macro_rules! getter {
    ($name:ident, $variant:ident, $ty:ty) => {
        pub fn $name(&self, key: &str) -> Option<$ty> {
            match self.values.get(key) {
                Some(BbValue::$variant(v)) => Some(v.clone()),
                _ => None,
            }
        }
    };
}

impl Blackboard {
    pub fn new(schema: BTreeMap<String, BbType>) -> Self {
        Self {
            schema,
            values: BTreeMap::new(),
        }
    }

    pub fn schema(&self) -> &BTreeMap<String, BbType> {
        &self.schema
    }

    pub fn set(&mut self, key: &str, value: BbValue) -> Result<(), BtError> {
        let expected = *self
            .schema
            .get(key)
            .ok_or_else(|| BtError::BlackboardKey(key.into()))?;
        if value.ty() != expected {
            return Err(BtError::BlackboardType {
                key: key.into(),
                expected,
            });
        }
        self.values.insert(key.into(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&BbValue> {
        self.values.get(key)
    }

    getter!(pose, Pose, Pose);
    getter!(joints, Joints, Joints);
    getter!(text, Text, String);
    getter!(index, Index, usize);
    getter!(flag, Bool, bool);
    getter!(schema_action, Schema, SchemaAction);
    getter!(series, Series, Vec<ForceTorqueReading>);
}
