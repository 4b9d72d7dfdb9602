//! Fleet service quality and mileage indicators from the controller log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ControllerEvent, EventKind, FleetKind};
use crate::demand::TravelMode;

/// One completed vehicle leg, as recorded in the trajectory output.
#[derive(Debug, Clone, Copy)]
pub struct VehicleLegSummary {
    pub mode: TravelMode,
    pub distance_km: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FleetKpis {
    pub requests: u64,
    pub served: u64,
    pub expired: u64,
    pub service_rate: f64,
    pub mean_wait_min: f64,
    pub max_wait_min: f64,
    pub total_vkt_km: f64,
    pub empty_vkt_km: f64,
    pub empty_vkt_share: f64,
    /// Share of total fleet vehicle-time spent carrying passengers.
    pub utilization: f64,
}

/// Waits pair REQUEST with PICKUP per request id; served counts dropoffs.
/// Empty VKT covers the operational legs (driving to pickup, cruising,
/// parking runs).
pub fn fleet_kpis(
    kind: FleetKind,
    events: &[ControllerEvent],
    legs: &[VehicleLegSummary],
    fleet_size: u64,
    horizon_s: f64,
) -> FleetKpis {
    let mut request_time: BTreeMap<u64, f64> = BTreeMap::new();
    let mut waits_min: Vec<f64> = Vec::new();
    let mut requests = 0u64;
    let mut served = 0u64;
    let mut expired = 0u64;
    for ev in events.iter().filter(|e| e.fleet == kind) {
        match ev.event {
            EventKind::Request => {
                requests += 1;
                if let Some(id) = ev.request_id {
                    request_time.insert(id, ev.time_s);
                }
            }
            EventKind::Pickup => {
                if let Some(id) = ev.request_id {
                    if let Some(t0) = request_time.get(&id) {
                        waits_min.push((ev.time_s - t0) / 60.0);
                    }
                }
            }
            EventKind::Dropoff => served += 1,
            EventKind::Expire => expired += 1,
            _ => {}
        }
    }

    let service_mode = kind.service_mode();
    let op_mode = kind.operational_mode();
    let mut total_vkt = 0.0;
    let mut empty_vkt = 0.0;
    let mut service_time_s = 0.0;
    for leg in legs {
        if leg.mode == service_mode {
            total_vkt += leg.distance_km;
            service_time_s += leg.duration_s;
        } else if leg.mode == op_mode {
            total_vkt += leg.distance_km;
            empty_vkt += leg.distance_km;
        }
    }

    let mean_wait_min = if waits_min.is_empty() {
        0.0
    } else {
        waits_min.iter().sum::<f64>() / waits_min.len() as f64
    };
    FleetKpis {
        requests,
        served,
        expired,
        service_rate: if requests > 0 { served as f64 / requests as f64 } else { 0.0 },
        mean_wait_min,
        max_wait_min: waits_min.iter().copied().fold(0.0, f64::max),
        total_vkt_km: total_vkt,
        empty_vkt_km: empty_vkt,
        empty_vkt_share: if total_vkt > 0.0 { empty_vkt / total_vkt } else { 0.0 },
        utilization: if fleet_size > 0 && horizon_s > 0.0 {
            service_time_s / (fleet_size as f64 * horizon_s)
        } else {
            0.0
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(event: EventKind, time_s: f64, request_id: u64) -> ControllerEvent {
        ControllerEvent {
            time_s,
            event,
            fleet: FleetKind::Amod,
            request_id: Some(request_id),
            vehicle_id: Some(1),
            node: Some(0),
        }
    }

    #[test]
    fn mean_wait_hand_value() {
        // Waits of 2, 4 and 6 minutes.
        let events = vec![
            event(EventKind::Request, 0.0, 1),
            event(EventKind::Request, 0.0, 2),
            event(EventKind::Request, 0.0, 3),
            event(EventKind::Pickup, 120.0, 1),
            event(EventKind::Pickup, 240.0, 2),
            event(EventKind::Pickup, 360.0, 3),
            event(EventKind::Dropoff, 500.0, 1),
            event(EventKind::Dropoff, 600.0, 2),
            event(EventKind::Dropoff, 700.0, 3),
        ];
        let kpis = fleet_kpis(FleetKind::Amod, &events, &[], 3, 3600.0);
        assert!((kpis.mean_wait_min - 4.0).abs() < 1e-12);
        assert_eq!(kpis.served, 3);
        assert!((kpis.service_rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn instant_service_means_zero_wait() {
        let events = vec![
            event(EventKind::Request, 10.0, 1),
            event(EventKind::Pickup, 10.0, 1),
            event(EventKind::Dropoff, 100.0, 1),
        ];
        let kpis = fleet_kpis(FleetKind::Amod, &events, &[], 1, 3600.0);
        assert_eq!(kpis.mean_wait_min, 0.0);
    }

    #[test]
    fn empty_share_counts_operational_legs() {
        let legs = vec![
            VehicleLegSummary { mode: TravelMode::Amod, distance_km: 6.0, duration_s: 600.0 },
            VehicleLegSummary { mode: TravelMode::AmodOp, distance_km: 2.0, duration_s: 200.0 },
            VehicleLegSummary { mode: TravelMode::CarCarpool, distance_km: 50.0, duration_s: 1.0 },
        ];
        let kpis = fleet_kpis(FleetKind::Amod, &[], &legs, 1, 1000.0);
        assert!((kpis.total_vkt_km - 8.0).abs() < 1e-12);
        assert!((kpis.empty_vkt_share - 0.25).abs() < 1e-12);
        assert!((kpis.utilization - 0.6).abs() < 1e-12);
    }
}
