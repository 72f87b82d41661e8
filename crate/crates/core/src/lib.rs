//! Deterministic simulation of a robot-assisted feeding system.
//!
//! The crate is organized bottom-up: [`world`] holds simulation truth,
//! [`sensors`] samples it, [`control`] and [`safety`] turn intents into
//! bounded joint commands, [`bt`] sequences feeding actions, [`acquire`]
//! learns how to pick food up and [`transfer`] delivers it to the mouth.
//! [`runtime`] closes the loop at a fixed tick.

pub mod acquire;
pub mod bt;
pub mod control;
pub mod params;
pub mod runtime;
pub mod scenario;
pub mod safety;
pub mod sensors;
pub mod transfer;
pub mod world;
