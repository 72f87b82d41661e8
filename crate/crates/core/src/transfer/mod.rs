//! Bite transfer: mouth perception, interaction classification and the
//! transfer phase policy.

pub mod classify;
pub mod filter;
pub mod fusion;
pub mod perception;
pub mod policy;
pub mod readiness;
pub mod spasm;

pub use classify::{
    classify_interaction, ClassifierConfig, ClassifierInput, ClassifyError, InteractionClass,
};
pub use filter::{filter_outliers, FilterVerdict, LikelyRange, RejectReason};
pub use fusion::{fuse_mouth_estimates, FusionError, MouthEstimate};
pub use perception::{Perception, PerceptionConfig, PerceptionFrame, PerceptionStats};
pub use policy::{
    servo_velocity, transfer_target, PolicyCommand, PolicyInputs, TransferConfig, TransferMode,
    TransferPhase, TransferPolicy,
};
pub use readiness::{check_readiness, NotReadyReason, ReadinessState};
pub use spasm::{detect_spasm, detect_spasm_smoothed, SpasmError};
