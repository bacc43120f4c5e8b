//! Soft-error fault-injection laboratory.
//!
//! Benchmarks written in a small register IR ([`ir`]) run on a deterministic
//! multithreaded interpreter ([`vm`]). Campaigns ([`campaign`]) draw single-
//! and multi-bit upsets over dynamic instruction destinations ([`inject`]),
//! classify each trial against the fault-free run ([`outcome`]), and compare
//! the baseline architecture with a hybrid one where a planned subset of
//! registers, memory regions and functional units is fault-immune
//! ([`planner`]).

pub mod campaign;
pub mod corpus;
pub mod inject;
pub mod ir;
pub mod outcome;
pub mod planner;
pub mod profiler;
pub mod report;
pub mod seed;
pub mod vm;
