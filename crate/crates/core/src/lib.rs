//! Core runtime for multi-agent systems: node registry, lifecycle, scopes,
//! planner, tracer and asset bank.

pub mod bank;
pub mod config;
pub mod error;
pub mod ids;
pub mod lifecycle;
pub mod model;
pub mod node;
pub mod planner;
pub mod registry;
pub mod request;
pub mod runtime;
pub mod scopes;
pub mod tools;
pub mod tracer;
