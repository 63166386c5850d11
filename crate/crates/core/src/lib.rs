//! Discrete modeling of multilevel hierarchical dynamic systems in a
//! control loop.
//!
//! Monitoring series become qualitative trends ([`trend`]), trends and
//! values place objects on canonical state diagrams ([`classify`]),
//! diagrams compose across hierarchy levels ([`compose`]), and control
//! scenarios are simulated, scored and planned against ([`scenario`]).
//! [`store`] holds the model bundle format and the monitoring event store;
//! [`retrospect`] runs the retrospective analysis pipeline over both.

pub mod classify;
pub mod compose;
pub mod model;
pub mod retrospect;
pub mod scenario;
pub mod store;
pub mod trend;
