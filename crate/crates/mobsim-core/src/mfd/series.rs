//! Per-interval network samples assembled from simulation output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{
    accumulation, accumulation_by_mode, gamma, passenger_accumulation, passenger_production,
    production,
};
use crate::demand::TravelMode;
use crate::error::{Error, Result};
use crate::mesosim::{SegmentStatRow, TrajectoryRecord};
use crate::network::{Network, SegmentId};

/// One time-interval observation of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MfdSample {
    pub t_s: u32,
    /// Vehicle accumulation A_V (veh).
    pub accumulation_veh: f64,
    /// Vehicle production P_V (veh-km/h).
    pub production_veh_km_h: f64,
    /// Spatial density spread (veh/km).
    pub gamma_veh_km: f64,
    /// Passenger accumulation A_P.
    pub passenger_accumulation: f64,
    /// Passenger production P_P (pass-km/h).
    pub passenger_production_km_h: f64,
    /// Per-mode vehicle accumulation (all modes present, zeros included).
    pub per_mode_accumulation: BTreeMap<TravelMode, f64>,
}

impl MfdSample {
    /// Internal consistency: the per-mode accumulations must reconcile with
    /// A_V within `rel_tol` relative (full sensor coverage assumed).
    pub fn check_reconciliation(&self, rel_tol: f64) -> Result<()> {
        let by_mode: f64 = self.per_mode_accumulation.values().sum();
        let denom = self.accumulation_veh.abs().max(1.0);
        if ((self.accumulation_veh - by_mode) / denom).abs() > rel_tol {
            return Err(Error::domain(format!(
                "accumulation {} does not reconcile with per-mode total {by_mode}",
                self.accumulation_veh
            )));
        }
        Ok(())
    }
}

/// Builds the interval series from segment stats and trajectories.
pub fn build_samples(
    stats: &[SegmentStatRow],
    trajectories: &[TrajectoryRecord],
    net: &Network,
    sensors: Option<&BTreeSet<SegmentId>>,
    interval_s: u32,
    horizon_s: u32,
) -> Result<Vec<MfdSample>> {
    let mut by_interval: BTreeMap<u32, Vec<&SegmentStatRow>> = BTreeMap::new();
    for row in stats {
        by_interval.entry(row.interval_start_s).or_default().push(row);
    }
    let mut samples = Vec::new();
    let mut t = 0u32;
    while t < horizon_s {
        let rows: Vec<SegmentStatRow> = by_interval
            .get(&t)
            .map(|rs| rs.iter().map(|r| **r).collect())
            .unwrap_or_default();
        if rows.is_empty() {
            return Err(Error::domain(format!("no segment stats for interval {t}")));
        }
        let window = (t as f64, (t + interval_s) as f64);
        let densities: Vec<f64> = rows
            .iter()
            .filter(|r| sensors.map_or(true, |s| s.contains(&r.segment_id)))
            .map(|r| r.k_veh_km)
            .collect();
        samples.push(MfdSample {
            t_s: t,
            accumulation_veh: accumulation(&rows, net, sensors)?,
            production_veh_km_h: production(&rows, net, sensors)?,
            gamma_veh_km: gamma(&densities)?,
            passenger_accumulation: passenger_accumulation(trajectories, window)?,
            passenger_production_km_h: passenger_production(trajectories, window)?,
            per_mode_accumulation: accumulation_by_mode(trajectories, window)?,
        });
        t += interval_s;
    }
    Ok(samples)
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    t_s: u32,
    #[serde(rename = "A_V")]
    a_v: f64,
    #[serde(rename = "P_V")]
    p_v: f64,
    gamma: f64,
    #[serde(rename = "A_P")]
    a_p: f64,
    #[serde(rename = "P_P")]
    p_p: f64,
    #[serde(rename = "A_car_carpool")]
    a_car_carpool: f64,
    #[serde(rename = "A_taxi")]
    a_taxi: f64,
    #[serde(rename = "A_mod")]
    a_mod: f64,
    #[serde(rename = "A_mod_op")]
    a_mod_op: f64,
    #[serde(rename = "A_amod")]
    a_amod: f64,
    #[serde(rename = "A_amod_op")]
    a_amod_op: f64,
    #[serde(rename = "A_bus")]
    a_bus: f64,
    #[serde(rename = "A_bus_op")]
    a_bus_op: f64,
    #[serde(rename = "A_rail")]
    a_rail: f64,
    #[serde(rename = "A_rail_op")]
    a_rail_op: f64,
    #[serde(rename = "A_other")]
    a_other: f64,
    #[serde(rename = "A_freight")]
    a_freight: f64,
}

pub fn save_samples(samples: &[MfdSample], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        let m = &s.per_mode_accumulation;
        let get = |mode: TravelMode| m.get(&mode).copied().unwrap_or(0.0);
        w.serialize(SampleRow {
            t_s: s.t_s,
            a_v: s.accumulation_veh,
            p_v: s.production_veh_km_h,
            gamma: s.gamma_veh_km,
            a_p: s.passenger_accumulation,
            p_p: s.passenger_production_km_h,
            a_car_carpool: get(TravelMode::CarCarpool),
            a_taxi: get(TravelMode::Taxi),
            a_mod: get(TravelMode::Mod),
            a_mod_op: get(TravelMode::ModOp),
            a_amod: get(TravelMode::Amod),
            a_amod_op: get(TravelMode::AmodOp),
            a_bus: get(TravelMode::Bus),
            a_bus_op: get(TravelMode::BusOp),
            a_rail: get(TravelMode::Rail),
            a_rail_op: get(TravelMode::RailOp),
            a_other: get(TravelMode::Other),
            a_freight: get(TravelMode::Freight),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<MfdSample>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut samples = Vec::new();
    for row in reader.deserialize::<SampleRow>() {
        let r = row?;
        let per_mode = BTreeMap::from([
            (TravelMode::CarCarpool, r.a_car_carpool),
            (TravelMode::Taxi, r.a_taxi),
            (TravelMode::Mod, r.a_mod),
            (TravelMode::ModOp, r.a_mod_op),
            (TravelMode::Amod, r.a_amod),
            (TravelMode::AmodOp, r.a_amod_op),
            (TravelMode::Bus, r.a_bus),
            (TravelMode::BusOp, r.a_bus_op),
            (TravelMode::Rail, r.a_rail),
            (TravelMode::RailOp, r.a_rail_op),
            (TravelMode::Other, r.a_other),
            (TravelMode::Freight, r.a_freight),
        ]);
        samples.push(MfdSample {
            t_s: r.t_s,
            accumulation_veh: r.a_v,
            production_veh_km_h: r.p_v,
            gamma_veh_km: r.gamma,
            passenger_accumulation: r.a_p,
            passenger_production_km_h: r.p_p,
            per_mode_accumulation: per_mode,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_round_trip_csv() {
        let per_mode: BTreeMap<TravelMode, f64> = TravelMode::ALL
            .iter()
            .enumerate()
            .map(|(i, &m)| (m, i as f64))
            .collect();
        let samples = vec![MfdSample {
            t_s: 300,
            accumulation_veh: 70.0,
            production_veh_km_h: 700.0,
            gamma_veh_km: 10.0,
            passenger_accumulation: 55.5,
            passenger_production_km_h: 900.0,
            per_mode_accumulation: per_mode,
        }];
        let file = tempfile::NamedTempFile::new().unwrap();
        save_samples(&samples, file.path()).unwrap();
        let loaded = load_samples(file.path()).unwrap();
        assert_eq!(loaded, samples);
    }
}
