//! Accumulation, production, heterogeneity and congestion indices.

use std::collections::{BTreeMap, BTreeSet};

use crate::demand::TravelMode;
use crate::error::{Error, Result};
use crate::mesosim::{EntityKind, SegmentStatRow, TrajectoryRecord};
use crate::network::{Network, SegmentId};

fn sensor_rows<'a>(
    rows: &'a [SegmentStatRow],
    sensors: Option<&'a BTreeSet<SegmentId>>,
) -> impl Iterator<Item = &'a SegmentStatRow> {
    rows.iter().filter(move |r| sensors.map_or(true, |s| s.contains(&r.segment_id)))
}

/// Vehicle accumulation over one interval's sensor readings:
/// the length-weighted mean density scaled by the total network length.
pub fn accumulation(
    rows: &[SegmentStatRow],
    net: &Network,
    sensors: Option<&BTreeSet<SegmentId>>,
) -> Result<f64> {
    weighted_total(rows, net, sensors, |r| r.k_veh_km)
}

/// Vehicle production (veh-km/h) over one interval's sensor readings.
pub fn production(
    rows: &[SegmentStatRow],
    net: &Network,
    sensors: Option<&BTreeSet<SegmentId>>,
) -> Result<f64> {
    weighted_total(rows, net, sensors, |r| r.q_veh_h)
}

fn weighted_total(
    rows: &[SegmentStatRow],
    net: &Network,
    sensors: Option<&BTreeSet<SegmentId>>,
    value: impl Fn(&SegmentStatRow) -> f64,
) -> Result<f64> {
    let mut num = 0.0;
    let mut len = 0.0;
    for row in sensor_rows(rows, sensors) {
        let idx = net
            .segment_index(row.segment_id)
            .ok_or_else(|| Error::domain(format!("unknown segment {}", row.segment_id)))?;
        let l = net.segments()[idx].length_km();
        num += value(row) * l;
        len += l;
    }
    if len <= 0.0 {
        return Err(Error::domain("no sensor-equipped segments in the interval"));
    }
    Ok(num / len * net.total_length_km())
}

/// Spatial spread of density: the sample standard deviation of segment
/// densities (needs at least two segments).
pub fn gamma(densities: &[f64]) -> Result<f64> {
    let n = densities.len();
    if n < 2 {
        return Err(Error::domain("heterogeneity needs at least two segments"));
    }
    let mean = densities.iter().sum::<f64>() / n as f64;
    let ss: f64 = densities.iter().map(|k| (k - mean).powi(2)).sum();
    Ok((ss / (n - 1) as f64).sqrt())
}

fn overlap_s(start: f64, end: f64, window: (f64, f64)) -> f64 {
    (end.min(window.1) - start.max(window.0)).max(0.0)
}

/// Time-weighted count of road vehicles active per mode over the window.
/// Modes that do not contribute vehicle flow are excluded from counting but
/// every mode gets an entry (possibly zero).
pub fn accumulation_by_mode(
    records: &[TrajectoryRecord],
    window: (f64, f64),
) -> Result<BTreeMap<TravelMode, f64>> {
    let len_s = window.1 - window.0;
    if !(len_s > 0.0) {
        return Err(Error::domain("empty accumulation window"));
    }
    let mut out: BTreeMap<TravelMode, f64> =
        TravelMode::ALL.iter().map(|&m| (m, 0.0)).collect();
    for record in records.iter().filter(|r| r.kind == EntityKind::Vehicle) {
        for leg in &record.legs {
            if !leg.mode.contributes_vehicle_flow() {
                continue;
            }
            let w = overlap_s(leg.start_s, leg.end_s, window);
            if w > 0.0 {
                *out.get_mut(&leg.mode).expect("all modes present") += w / len_s;
            }
        }
    }
    Ok(out)
}

/// Time-weighted count of travelers active over the window (any leg,
/// including waiting and walking).
pub fn passenger_accumulation(records: &[TrajectoryRecord], window: (f64, f64)) -> Result<f64> {
    let len_s = window.1 - window.0;
    if !(len_s > 0.0) {
        return Err(Error::domain("empty accumulation window"));
    }
    let mut total = 0.0;
    for record in records.iter().filter(|r| r.kind == EntityKind::Passenger) {
        let (Some(start), Some(end)) = (record.start_s(), record.end_s()) else { continue };
        total += overlap_s(start, end, window) / len_s;
    }
    Ok(total)
}

/// The mode a passenger journey is attributed to: its first passenger-flow
/// leg other than walking, falling back to walking.
pub fn trip_principal_mode(record: &TrajectoryRecord) -> TravelMode {
    record
        .legs
        .iter()
        .map(|l| l.mode)
        .find(|m| m.contributes_passenger_flow() && *m != TravelMode::Other)
        .unwrap_or(TravelMode::Other)
}

/// Passenger production (passenger-km/h) over the window: per passenger
/// mode, the trip completion rate times the mean distance of those
/// completed trips. No occupancy factors are involved.
pub fn passenger_production(records: &[TrajectoryRecord], window: (f64, f64)) -> Result<f64> {
    let len_h = (window.1 - window.0) / 3600.0;
    if !(len_h > 0.0) {
        return Err(Error::domain("empty production window"));
    }
    let mut by_mode: BTreeMap<TravelMode, (u64, f64)> = BTreeMap::new();
    for record in records.iter().filter(|r| r.kind == EntityKind::Passenger) {
        let Some(end) = record.end_s() else { continue };
        if end < window.0 || end >= window.1 {
            continue;
        }
        let mode = trip_principal_mode(record);
        if !mode.contributes_passenger_flow() {
            continue;
        }
        let entry = by_mode.entry(mode).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += record.total_distance_km();
    }
    let mut total = 0.0;
    for (_, (count, dist_sum)) in by_mode {
        let completion_rate = count as f64 / len_h;
        let mean_dist = dist_sum / count as f64;
        total += completion_rate * mean_dist;
    }
    Ok(total)
}

/// Normalized root mean square error between a predicted and observed
/// series: `sqrt(T * sum((p - o)^2)) / sum(o)`.
pub fn rmsn(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.len() != observed.len() || predicted.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "rmsn over {} predicted vs {} observed points",
            predicted.len(),
            observed.len()
        )));
    }
    let denom: f64 = observed.iter().sum();
    if denom <= 0.0 {
        return Err(Error::domain("rmsn needs a positive observed total"));
    }
    let t = predicted.len() as f64;
    let ss: f64 = predicted.iter().zip(observed).map(|(p, o)| (p - o).powi(2)).sum();
    Ok((t * ss).sqrt() / denom)
}

/// One completed trip's speed observation for the trip speed index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripSpeedRecord {
    pub distance_km: f64,
    pub speed_kmh: f64,
    pub free_flow_speed_kmh: f64,
}

/// Distance-weighted trip speed index: `sum(TD * TS/TS0) / sum(TD)`,
/// equal to 1 when every trip runs at free flow.
pub fn tsi(records: &[TripSpeedRecord]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in records {
        if !(r.free_flow_speed_kmh > 0.0) {
            return Err(Error::domain("trip with nonpositive free-flow speed"));
        }
        num += r.distance_km * (r.speed_kmh / r.free_flow_speed_kmh);
        den += r.distance_km;
    }
    if den <= 0.0 {
        return Err(Error::domain("tsi needs positive total distance"));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvdValue {
    pub minutes: f64,
    /// Set when a small negative difference was clamped to zero.
    pub clamped: bool,
}

/// In-vehicle delay: actual minus free-flow in-vehicle time, clamped at
/// zero (negative values can only arise from rounding).
pub fn ivd(ivtt_min: f64, ivtt_free_flow_min: f64) -> IvdValue {
    let delta = ivtt_min - ivtt_free_flow_min;
    if delta < 0.0 {
        IvdValue { minutes: 0.0, clamped: true }
    } else {
        IvdValue { minutes: delta, clamped: false }
    }
}
