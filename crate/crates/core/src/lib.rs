//! Deterministic discrete-event simulation of bilateral 7-DOF leader/follower
//! teleoperation over pluggable network transports, with tracking-error
//! metrics and a nonparametric statistics battery for comparing transports.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: joint vectors, simulation time, packets and seeded RNG streams.
//! * [`dynamics`]: arm plant, the leader/follower control laws and the
//!   synthetic operator.
//! * [`transport`]: wired, Wi-Fi and cycle-scheduled delay models.
//! * [`sim`]: the event loop producing a [`sim::RunTrace`].
//! * [`trace_io`]: CSV serialization of run traces.
//! * [`metrics`]: error indices and timing statistics.
//! * [`stats`]: Kolmogorov-Smirnov, Friedman and Wilcoxon signed-rank tests.

pub mod dynamics;
mod error;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod stats;
pub mod trace_io;
pub mod transport;

pub use error::{Error, Result};
pub use model::{ControlPacket, Direction, JointVector, Payload, RngStream, SimTime, DOF};
