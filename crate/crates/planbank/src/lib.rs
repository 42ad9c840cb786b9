//! Closed-loop motion planning with a lifelong memory of tuned driving behaviors.
//!
//! The crate is organized as a pipeline:
//!
//! * [`scenario`] — synthetic urban driving scenes in a vectorized map format,
//!   generated deterministically from `(class, seed)`.
//! * [`encoder`] — a small attention network (trained here from scratch, in
//!   plain `f64` with hand-written backprop) that maps a scene to a unit
//!   embedding via a prototype-margin objective.
//! * [`memory`] — an insert-only bank of scene embeddings clustered with
//!   incremental density-based clustering; each cluster carries the planner
//!   parameters tuned for it.
//! * [`planner`] — an intelligent-driver-model behavior planner with lateral
//!   offset candidates, plus grid search over its parameter space.
//! * [`sim`] — a 10 Hz closed-loop simulator with scripted agents and a
//!   composite driving score.
//! * [`reasoner`] — picks the memory cluster for a scene, either by nearest
//!   prototype or by asking a chat-completion endpoint (with a total fallback).
//! * [`pipeline`] — ties the stages together: adaptation, lifelong benchmark,
//!   ablations, reports.
//!
//! Everything downstream of a seed is deterministic: same inputs, same bytes.

pub mod codec;
pub mod encoder;
pub mod geometry;
pub mod memory;
pub mod pipeline;
pub mod planner;
pub mod reasoner;
pub mod scenario;
pub mod sim;
