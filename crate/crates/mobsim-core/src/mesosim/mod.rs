//! Time-stepped mesoscopic supply engine.
//!
//! Vehicles advance along segments at the speed given by the segment's
//! speed–density relation; segment exits are deterministic FIFO queues that
//! discharge at the segment's output capacity, subject to receiving space
//! downstream. Buses run scheduled lines with dwell stops, trains traverse
//! a timetable off the road network, and on-demand fleets are driven by
//! their controllers at batch boundaries. Every transition happens on the
//! step grid, which makes density integrals and trajectory legs count the
//! same vehicle-time exactly.

mod engine;
mod output;
mod transit;

pub use engine::{run_scenario, FleetSpec, ScenarioInputs, SimConfig};
pub use output::{
    load_events, load_segment_stats, load_trajectories, save_conservation, save_events,
    save_segment_stats, save_trajectories, save_unserved, ConservationRow, EntityKind, LegStatus,
    SegmentStatRow, SimOutput, TrajectoryLeg, TrajectoryRecord, Unserved, UnservedReason,
};
pub use transit::{
    load_bus_lines, load_rail_lines, save_bus_lines, save_rail_lines, BusConfig, BusLine,
    RailLeg, RailLine, RailTimetable, TransitSystem,
};
