//! Rule-based classification of physical interactions during transfer.
//!
//! Rules are evaluated in priority order: Involuntary, NoContact,
//! IntentionalBite, InMouthManipulation, Incidental.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensors::ForceTorqueReading;
use crate::world::CONTROL_DT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionClass {
    NoContact,
    Incidental,
    Involuntary,
    InMouthManipulation,
    IntentionalBite,
}

impl InteractionClass {
    pub const ALL: [InteractionClass; 5] = [
        InteractionClass::NoContact,
        InteractionClass::Incidental,
        InteractionClass::Involuntary,
        InteractionClass::InMouthManipulation,
        InteractionClass::IntentionalBite,
    ];
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ClassifyError {
    #[error("window has {got} samples, need {needed}")]
    WindowTooShort { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Below this force magnitude (N) a sample is contact-free.
    pub contact_threshold: f64,
    /// Tine-normal force (N) that counts as biting.
    pub bite_threshold: f64,
    /// Seconds of sustained force for a bite or a manipulation.
    pub sustain: f64,
    /// Tine-normal force (N) under which a bite counts as released.
    pub release_threshold: f64,
    /// Off-normal force (N) that counts as manipulation.
    pub manipulation_threshold: f64,
    pub min_samples: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            contact_threshold: 0.2,
            bite_threshold: 1.0,
            sustain: 0.1,
            release_threshold: 0.2,
            manipulation_threshold: 0.5,
            min_samples: 20,
        }
    }
}

pub struct ClassifierInput<'a> {
    /// Oldest first, 100 Hz.
    pub ft: &'a [ForceTorqueReading],
    /// The spasm detector fired at some point within the window.
    pub spasm_fired: bool,
    pub in_mouth: bool,
    /// Unit direction, world frame, along which a bite presses on the tines.
    pub tine_normal: Vector3<f64>,
}

fn longest_run(flags: impl Iterator<Item = bool>) -> (usize, Option<usize>) {
    let (mut best, mut cur, mut best_end) = (0, 0, None);
    for (i, f) in flags.enumerate() {
        cur = if f { cur + 1 } else { 0 };
        if cur > best {
            best = cur;
            best_end = Some(i);
        }
    }
    (best, best_end)
}

fn sustained(samples: usize, cfg: &ClassifierConfig) -> bool {
    samples as f64 * CONTROL_DT >= cfg.sustain - 1e-9
}

pub fn classify_interaction(
    input: &ClassifierInput<'_>,
    cfg: &ClassifierConfig,
) -> Result<InteractionClass, ClassifyError> {
    let ft = input.ft;
    if ft.len() < cfg.min_samples {
        return Err(ClassifyError::WindowTooShort {
            needed: cfg.min_samples,
            got: ft.len(),
        });
    }
    if input.spasm_fired {
        return Ok(InteractionClass::Involuntary);
    }
    if ft.iter().all(|r| r.force_norm() < cfg.contact_threshold) {
        return Ok(InteractionClass::NoContact);
    }
    if !input.in_mouth {
        return Ok(InteractionClass::Incidental);
    }
    let n = input.tine_normal.normalize();
    let (press, press_end) = longest_run(ft.iter().map(|r| r.force.dot(&n) > cfg.bite_threshold));
    if let Some(end) = press_end {
        let released = ft[end + 1..]
            .iter()
            .any(|r| r.force.dot(&n) < cfg.release_threshold);
        if sustained(press, cfg) && released {
            return Ok(InteractionClass::IntentionalBite);
        }
    }
    let (off_normal, _) = longest_run(ft.iter().map(|r| {
        let f = r.force;
        (f - n * f.dot(&n)).norm() > cfg.manipulation_threshold
    }));
    if sustained(off_normal, cfg) {
        return Ok(InteractionClass::InMouthManipulation);
    }
    Ok(InteractionClass::Incidental)
}
