//! Service boundary for the feeding simulator.

pub mod cli;
pub mod config;
pub mod http;
pub mod service;
