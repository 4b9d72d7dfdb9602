//! Mesoscopic multimodal traffic simulation with an on-demand fleet
//! controller and network-level flow analytics.
//!
//! The crate is organized around the stages of a scenario study:
//!
//! * [`network`] — road network data model (nodes, links, segments, zones)
//!   and the segment-level speed–density relation.
//! * [`demand`] — trip tables, travel modes, fares, synthetic demand
//!   generation and a logit mode-shift rule.
//! * [`mesosim`] — the time-stepped supply engine: speed–density movement
//!   plus deterministic queuing at segment exits, scheduled buses, a
//!   timetable-based rail layer, and trajectory/stats collection.
//! * [`fleet`] — the on-demand service controller: request intake, batched
//!   assignment under wait/detour/seat constraints, shared-ride insertion
//!   and idle-vehicle rebalancing.
//! * [`equilibrium`] — within-day travel-time learning and day-to-day
//!   demand adjustment through skims.
//! * [`mfd`] — network-level observables (accumulation, production,
//!   density heterogeneity), exponential production models at vehicle and
//!   passenger level, hysteresis quantification and constrained
//!   least-squares model fitting.
//! * [`impact`] — well-to-wheels energy and NOx/PM emission accounting.
//! * [`scenario`] / [`pipeline`] — configuration, orchestration and
//!   bit-stable file outputs.

pub mod demand;
pub mod equilibrium;
pub mod error;
pub mod fleet;
pub mod impact;
pub mod mesosim;
pub mod mfd;
pub mod network;
pub mod pipeline;
pub mod routing;
pub mod scenario;

pub use error::{Error, Result};
pub use network::{Network, NodeId, Segment, SegmentId, Zone, ZoneId};
