//! Within-day travel-time learning and day-to-day demand adjustment.

mod loops;
mod skim;
mod table;

pub use loops::{
    day_to_day_loop, within_day_loop, ConvergenceStatus, ConvergenceTrace, DayResult,
    DayToDayResult, IterationStats, LearningConfig, MesoSupply, SupplyModel, SupplyRun,
    WithinDayResult,
};
pub use skim::{build_skims, observed_wait_min, save_skims, SkimCell, SkimConfig, SkimMatrix};
pub use table::{blend_travel_times, TravelTimeTable};
