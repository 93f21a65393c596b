//! Deterministic discrete-event simulation of coordinated AUV fleets running
//! underwater pollution surveys.
//!
//! The crate is organised around a single-threaded [`engine::Engine`] that
//! dispatches timestamped events in canonical order and records every
//! dispatched event in an append-only log. Subsystems plug into the engine:
//!
//! - [`comms`]: lossy links with distance-dependent delivery curves.
//! - [`offload`]: master/worker micro-cloud frame processing.
//! - [`sensing`]: optical material classification pipeline and confusion model.
//! - [`mission`]: transect planning, fleet kinematics, energy and coverage.
//!
//! [`scenario`] ties them together from a JSON file, [`report`] derives run
//! summaries from the event log, and [`replay`] verifies recorded logs.
//!
//! Batch workloads (cross-validation folds, forest growth, seed sweeps) run on
//! rayon when the `parallel` feature is enabled and fall back to plain
//! iterators otherwise; see [`par`].

pub mod comms;
pub mod engine;
pub mod error;
pub mod mission;
pub mod model;
pub mod offload;
pub mod par;
pub mod replay;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sensing;

pub use crate::error::{Error, Result};
pub use crate::model::{MaterialClass, Vec3};
