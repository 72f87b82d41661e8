//! User-adjustable runtime parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::GateConfig;
use crate::transfer::{TransferConfig, TransferMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamSet {
    /// Monotone; bumped on every accepted patch.
    pub revision: u64,
    /// In (0, 1].
    pub speed_scale: f64,
    pub transfer_mode: TransferMode,
    pub outside_distance: f64,
    pub gate_force: f64,
    pub gate_torque: f64,
    pub bite_threshold: f64,
    pub spasm_threshold: f64,
    pub interface_mode: String,
}

impl Default for ParamSet {
    fn default() -> Self {
        let t = TransferConfig::default();
        let g = GateConfig::default();
        Self {
            revision: 0,
            speed_scale: 1.0,
            transfer_mode: t.mode,
            outside_distance: t.outside_distance,
            gate_force: g.f_max,
            gate_torque: g.tau_max,
            bite_threshold: t.bite_threshold,
            spasm_threshold: t.spasm_threshold,
            interface_mode: "button_grid".into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid value for {field}: {reason}")]
pub struct ParamError {
    pub field: String,
    pub reason: String,
}

/// A partial update; absent fields keep their value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamPatch {
    pub speed_scale: Option<f64>,
    pub transfer_mode: Option<TransferMode>,
    pub outside_distance: Option<f64>,
    pub gate_force: Option<f64>,
    pub gate_torque: Option<f64>,
    pub bite_threshold: Option<f64>,
    pub spasm_threshold: Option<f64>,
    pub interface_mode: Option<String>,
}

impl ParamPatch {
    /// Fields set in `top` win over those in `self`.
    pub fn overlay(&self, top: &ParamPatch) -> ParamPatch {
        ParamPatch {
            speed_scale: top.speed_scale.or(self.speed_scale),
            transfer_mode: top.transfer_mode.or(self.transfer_mode),
            outside_distance: top.outside_distance.or(self.outside_distance),
            gate_force: top.gate_force.or(self.gate_force),
            gate_torque: top.gate_torque.or(self.gate_torque),
            bite_threshold: top.bite_threshold.or(self.bite_threshold),
            spasm_threshold: top.spasm_threshold.or(self.spasm_threshold),
            interface_mode: top.interface_mode.clone().or(self.interface_mode.clone()),
        }
    }
}

pub const INTERFACE_MODES: [&str; 3] = ["button_grid", "large_target", "switch_scan"];

fn err(field: &str, reason: impl Into<String>) -> ParamError {
    ParamError {
        field: field.into(),
        reason: reason.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), ParamError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(err(field, format!("{v} must be > 0")))
    }
}

impl ParamSet {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.speed_scale > 0.0 && self.speed_scale <= 1.0) {
            return Err(err("speed_scale", format!("{} not in (0, 1]", self.speed_scale)));
        }
        if !(self.outside_distance >= 0.0 && self.outside_distance <= 0.3) {
            return Err(err(
                "outside_distance",
                format!("{} not in [0, 0.3]", self.outside_distance),
            ));
        }
        positive("gate_force", self.gate_force)?;
        positive("gate_torque", self.gate_torque)?;
        positive("bite_threshold", self.bite_threshold)?;
        positive("spasm_threshold", self.spasm_threshold)?;
        if !INTERFACE_MODES.contains(&self.interface_mode.as_str()) {
            return Err(err(
                "interface_mode",
                format!("{:?} not one of {INTERFACE_MODES:?}", self.interface_mode),
            ));
        }
        Ok(())
    }

    /// Apply `patch` to a copy; the copy's revision is one higher. `self` is
    /// untouched when validation fails.
    pub fn patched(&self, patch: &ParamPatch) -> Result<ParamSet, ParamError> {
        let mut next = self.clone();
        macro_rules! take {
            ($f:ident) => {
                if let Some(v) = patch.$f.clone() {
                    next.$f = v;
                }
            };
        }
        take!(speed_scale);
        take!(transfer_mode);
        take!(outside_distance);
        take!(gate_force);
        take!(gate_torque);
        take!(bite_threshold);
        take!(spasm_threshold);
        take!(interface_mode);
        next.validate()?;
        next.revision = self.revision + 1;
        Ok(next)
    }

    pub fn gate(&self) -> GateConfig {
        GateConfig {
            f_max: self.gate_force,
            tau_max: self.gate_torque,
        }
    }

    pub fn transfer(&self) -> TransferConfig {
        TransferConfig {
            mode: self.transfer_mode,
            outside_distance: self.outside_distance,
            speed_scale: self.speed_scale,
            bite_threshold: self.bite_threshold,
            spasm_threshold: self.spasm_threshold,
        }
    }
}
