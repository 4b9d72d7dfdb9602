//! Within-day route-choice learning and the day-to-day demand loop.

use serde::{Deserialize, Serialize};

use super::skim::{build_skims, SkimConfig, SkimMatrix};
use super::table::TravelTimeTable;
use crate::demand::{mode_shift, ChoiceParams, FareSchedule, TravelMode, Trip};
use crate::error::{Error, Result};
use crate::mesosim::{run_scenario, ScenarioInputs, SimOutput};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    /// Weight on the previous iterate: `t_next = t_prev*w + t_obs*(1-w)`.
    pub w: f64,
    /// Convergence threshold on the max relative elementwise change.
    pub tolerance: f64,
    pub max_iterations: u32,
    /// Keep every iterate (diagnostics only).
    #[serde(skip)]
    pub keep_iterates: bool,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig { w: 0.5, tolerance: 0.01, max_iterations: 20, keep_iterates: false }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.w) {
            return Err(Error::invalid_config("learning.w", "must satisfy 0 <= w < 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid_config("learning.tolerance", "must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid_config("learning.max_iterations", "must be >= 1"));
        }
        Ok(())
    }
}

/// One supply run: the travel times it produced and its full output.
pub struct SupplyRun {
    pub observed_tt: TravelTimeTable,
    pub output: SimOutput,
}

/// Anything that can simulate supply against a travel-time table.
pub trait SupplyModel {
    fn simulate(&mut self, tt: &TravelTimeTable) -> Result<SupplyRun>;
}

/// The mesoscopic engine as a supply model.
pub struct MesoSupply<'a> {
    pub inputs: ScenarioInputs<'a>,
    pub seed: u64,
}

impl SupplyModel for MesoSupply<'_> {
    fn simulate(&mut self, tt: &TravelTimeTable) -> Result<SupplyRun> {
        let output = run_scenario(&self.inputs, tt, self.seed)?;
        Ok(SupplyRun { observed_tt: output.observed_tt.clone(), output })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: u32,
    pub max_rel_gap: f64,
    pub mean_tt_s: f64,
}

pub type ConvergenceTrace = Vec<IterationStats>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceStatus {
    Converged,
    MaxIterations,
}

pub struct WithinDayResult {
    pub table: TravelTimeTable,
    pub output: SimOutput,
    pub trace: ConvergenceTrace,
    pub status: ConvergenceStatus,
    /// `[t_0, t_1, ...]` when `keep_iterates` is set.
    pub iterates: Vec<TravelTimeTable>,
}

/// Iterates {route on t_i -> simulate -> observe t_S -> blend} until the
/// max relative change drops below tolerance or iterations run out.
/// Non-convergence is a status, not an error.
pub fn within_day_loop(
    supply: &mut dyn SupplyModel,
    t0: TravelTimeTable,
    cfg: &LearningConfig,
) -> Result<WithinDayResult> {
    cfg.validate()?;
    let mut iterates = Vec::new();
    if cfg.keep_iterates {
        iterates.push(t0.clone());
    }
    let mut table = t0;
    let mut trace = ConvergenceTrace::new();
    let mut status = ConvergenceStatus::MaxIterations;
    let mut last_output = None;
    for iteration in 1..=cfg.max_iterations {
        let run = supply.simulate(&table)?;
        let next = table.blend(&run.observed_tt, cfg.w)?;
        let gap = next.max_rel_gap(&table)?;
        trace.push(IterationStats { iteration, max_rel_gap: gap, mean_tt_s: next.mean_s() });
        table = next;
        if cfg.keep_iterates {
            iterates.push(table.clone());
        }
        last_output = Some(run.output);
        if gap < cfg.tolerance {
            status = ConvergenceStatus::Converged;
            break;
        }
    }
    let output = last_output.ok_or_else(|| Error::Internal("no supply iteration ran".into()))?;
    Ok(WithinDayResult { table, output, trace, status, iterates })
}

pub struct DayResult {
    pub day: u32,
    pub within_day: WithinDayResult,
    pub skims: SkimMatrix,
    pub mode_shares: Vec<(TravelMode, f64)>,
    /// The demand simulated on this day.
    pub trips: Vec<Trip>,
}

pub struct DayToDayResult {
    pub days: Vec<DayResult>,
}

struct FnSupply<'t, F> {
    trips: &'t [Trip],
    run: &'t mut F,
}

impl<F> SupplyModel for FnSupply<'_, F>
where
    F: FnMut(&[Trip], &TravelTimeTable) -> Result<SupplyRun>,
{
    fn simulate(&mut self, tt: &TravelTimeTable) -> Result<SupplyRun> {
        (self.run)(self.trips, tt)
    }
}

/// Day-to-day loop: each day runs a within-day equilibration, rebuilds
/// zone-to-zone skims from the outputs, and (between days) re-draws trip
/// modes with the logit rule. The next day warm-starts from the previous
/// day's converged travel times.
#[allow(clippy::too_many_arguments)]
pub fn day_to_day_loop(
    days: u32,
    initial_trips: Vec<Trip>,
    t0: TravelTimeTable,
    learning: &LearningConfig,
    skim_cfg: &SkimConfig<'_>,
    choice: Option<(&ChoiceParams, &FareSchedule)>,
    seed: u64,
    mut run_supply: impl FnMut(&[Trip], &TravelTimeTable) -> Result<SupplyRun>,
) -> Result<DayToDayResult> {
    if days == 0 {
        return Err(Error::invalid_config("days", "must be >= 1"));
    }
    let mut trips = initial_trips;
    let mut table = t0;
    let mut results = Vec::new();
    for day in 1..=days {
        let within_day = {
            let mut supply = FnSupply { trips: &trips, run: &mut run_supply };
            within_day_loop(&mut supply, table.clone(), learning)?
        };
        table = within_day.table.clone();
        let skims = build_skims(&table, &within_day.output.events, skim_cfg)?;
        let mode_shares = shares_of(&trips);
        let next_trips = match (day < days, choice) {
            (true, Some((params, fares))) => Some(mode_shift(
                &trips,
                skim_cfg.net,
                &skims,
                fares,
                params,
                seed ^ day as u64,
            )?),
            _ => None,
        };
        results.push(DayResult { day, within_day, skims, mode_shares, trips: trips.clone() });
        if let Some(next) = next_trips {
            trips = next;
        }
    }
    Ok(DayToDayResult { days: results })
}

fn shares_of(trips: &[Trip]) -> Vec<(TravelMode, f64)> {
    let total = trips.len().max(1) as f64;
    TravelMode::ALL
        .iter()
        .map(|&mode| {
            let count = trips.iter().filter(|t| t.mode == mode).count();
            (mode, count as f64 / total)
        })
        .collect()
}
