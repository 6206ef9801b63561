//! Quorum-based read, write and repair coordination for regenerating-coded
//! distributed storage, with a deterministic discrete-event simulator and
//! the matching closed-form availability and queueing formulas.

pub mod analysis;
pub mod chunk_store;
pub mod code_model;
pub mod config;
pub mod coordinator;
pub mod ids;
pub mod placement;
pub mod routing;
pub mod scheduler;
pub mod sim;
pub mod trace;
pub mod verify;
