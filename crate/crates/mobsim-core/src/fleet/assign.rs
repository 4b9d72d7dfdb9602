//! Batched greedy nearest-feasible assignment and shared-ride insertion.

use std::collections::{BTreeMap, BTreeSet};

use super::{
    ControllerConfig, FleetVehicle, ReleasePoint, RequestId, ServiceRequest, Stop, StopAction,
};
use crate::demand::ServiceType;
use crate::error::Result;
use crate::routing::TravelTimeOracle;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub request_id: RequestId,
    pub vehicle_id: u64,
    pub schedule: Vec<Stop>,
    pub predicted_pickup_s: f64,
    pub predicted_wait_s: f64,
    /// True for single rides: the vehicle is reserved until dropoff.
    pub exclusive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertionPlan {
    pub schedule: Vec<Stop>,
    pub pickup_time_s: f64,
    pub added_time_s: f64,
}

/// Arrival time at every stop of `stops` when leaving `release`. `None`
/// when any leg is unroutable.
pub fn schedule_times(
    release: ReleasePoint,
    stops: &[Stop],
    oracle: &dyn TravelTimeOracle,
) -> Option<Vec<f64>> {
    let mut times = Vec::with_capacity(stops.len());
    let mut clock = release.ready_at_s;
    let mut at = release.node;
    for stop in stops {
        if stop.node != at {
            clock += oracle.travel_time_s(at, stop.node, clock)?;
            at = stop.node;
        }
        times.push(clock);
    }
    Some(times)
}

fn occupancy_feasible(initial_onboard: usize, seats: u32, stops: &[Stop]) -> bool {
    let mut occupancy = initial_onboard as i64;
    for stop in stops {
        match stop.action {
            StopAction::Pickup(_) => occupancy += 1,
            StopAction::Dropoff(_) => occupancy -= 1,
        }
        if occupancy > seats as i64 {
            return false;
        }
    }
    true
}

/// Pickup/dropoff times per request along a timed schedule. Requests whose
/// pickup already happened (onboard) only have a dropoff entry.
fn stop_times_by_request(stops: &[Stop], times: &[f64]) -> BTreeMap<RequestId, (Option<f64>, Option<f64>)> {
    let mut map: BTreeMap<RequestId, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for (stop, &t) in stops.iter().zip(times) {
        match stop.action {
            StopAction::Pickup(id) => map.entry(id).or_default().0 = Some(t),
            StopAction::Dropoff(id) => map.entry(id).or_default().1 = Some(t),
        }
    }
    map
}

/// Minimum-added-time feasible insertion of `request` into the vehicle's
/// schedule, preserving the order of existing stops. Feasibility covers the
/// new passenger's wait, every passenger's added in-vehicle time (including
/// the new one, against its direct trip time) and seat occupancy at every
/// schedule point. Ties between equally good insertion positions break on
/// the earliest (pickup index, dropoff index).
pub fn insert_shared(
    vehicle: &FleetVehicle,
    release: ReleasePoint,
    request: &ServiceRequest,
    oracle: &dyn TravelTimeOracle,
    cfg: &ControllerConfig,
    now_s: f64,
) -> Option<InsertionPlan> {
    if request.service != ServiceType::Shared || vehicle.exclusive {
        return None;
    }
    let old = &vehicle.schedule;
    let old_times = schedule_times(release, old, oracle)?;
    let old_end = old_times.last().copied().unwrap_or(release.ready_at_s);
    let old_by_request = stop_times_by_request(old, &old_times);

    let mut best: Option<(f64, usize, usize, InsertionPlan)> = None;
    for i in 0..=old.len() {
        for j in i..=old.len() {
            let mut candidate = Vec::with_capacity(old.len() + 2);
            candidate.extend_from_slice(&old[..i]);
            candidate.push(Stop { node: request.pickup, action: StopAction::Pickup(request.id) });
            candidate.extend_from_slice(&old[i..j]);
            candidate.push(Stop { node: request.dropoff, action: StopAction::Dropoff(request.id) });
            candidate.extend_from_slice(&old[j..]);

            if !occupancy_feasible(vehicle.onboard.len(), vehicle.seats, &candidate) {
                continue;
            }
            let Some(times) = schedule_times(release, &candidate, oracle) else {
                continue;
            };
            let by_request = stop_times_by_request(&candidate, &times);
            let (pickup_t, dropoff_t) = by_request[&request.id];
            let pickup_t = pickup_t.expect("pickup in candidate");
            let dropoff_t = dropoff_t.expect("dropoff in candidate");

            // (i) the new passenger's wait.
            if pickup_t - now_s > cfg.max_wait_s() {
                continue;
            }
            // The new passenger's own detour against a direct ride.
            let direct = oracle.travel_time_s(request.pickup, request.dropoff, pickup_t)?;
            if (dropoff_t - pickup_t) - direct > cfg.max_detour_s() {
                continue;
            }
            // (ii) added in-vehicle time of every existing passenger.
            let mut ok = true;
            for (rid, (old_pick, old_drop)) in &old_by_request {
                let (new_pick, new_drop) = by_request[rid];
                let added = match (old_pick, old_drop) {
                    // Still waiting for pickup: compare ride durations.
                    (Some(op), Some(od)) => {
                        let np = new_pick.expect("pickup kept");
                        let nd = new_drop.expect("dropoff kept");
                        (nd - np) - (od - op)
                    }
                    // Already aboard: pickup is in the past, compare dropoffs.
                    (None, Some(od)) => new_drop.expect("dropoff kept") - od,
                    _ => 0.0,
                };
                if added > cfg.max_detour_s() {
                    ok = false;
                    break;
                }
            }
            if !ok {
                continue;
            }

            let end = times.last().copied().unwrap_or(release.ready_at_s);
            let added_time = end - old_end;
            let better = match &best {
                None => true,
                Some((best_added, bi, bj, _)) => {
                    added_time < *best_added
                        || (added_time == *best_added && (i, j) < (*bi, *bj))
                }
            };
            if better {
                best = Some((
                    added_time,
                    i,
                    j,
                    InsertionPlan {
                        schedule: candidate,
                        pickup_time_s: pickup_t,
                        added_time_s: added_time,
                    },
                ));
            }
        }
    }
    best.map(|(_, _, _, plan)| plan)
}

/// Single-ride plan for an idle vehicle: drive to pickup, then dropoff.
fn plan_single(
    vehicle: &FleetVehicle,
    release: ReleasePoint,
    request: &ServiceRequest,
    oracle: &dyn TravelTimeOracle,
    cfg: &ControllerConfig,
    now_s: f64,
) -> Option<InsertionPlan> {
    if !vehicle.is_idle() || vehicle.exclusive {
        return None;
    }
    let schedule = vec![
        Stop { node: request.pickup, action: StopAction::Pickup(request.id) },
        Stop { node: request.dropoff, action: StopAction::Dropoff(request.id) },
    ];
    let times = schedule_times(release, &schedule, oracle)?;
    let pickup_t = times[0];
    if pickup_t - now_s > cfg.max_wait_s() {
        return None;
    }
    Some(InsertionPlan {
        schedule,
        pickup_time_s: pickup_t,
        added_time_s: times[1] - release.ready_at_s,
    })
}

/// Batched greedy nearest-feasible assignment.
///
/// Requests are processed in (request time, id) order; each gets the
/// feasible vehicle with the earliest predicted pickup time, ties broken by
/// the lowest vehicle id, and each vehicle gains at most one new passenger
/// per batch. Unassignable requests simply stay pending.
pub fn assign_batch(
    pending: &[ServiceRequest],
    vehicles: &[FleetVehicle],
    releases: &BTreeMap<u64, ReleasePoint>,
    oracle: &dyn TravelTimeOracle,
    cfg: &ControllerConfig,
    now_s: f64,
) -> Result<Vec<Assignment>> {
    let mut order: Vec<&ServiceRequest> = pending.iter().collect();
    order.sort_by(|a, b| {
        a.request_time_s
            .total_cmp(&b.request_time_s)
            .then(a.id.cmp(&b.id))
    });
    let mut vehicle_order: Vec<&FleetVehicle> = vehicles.iter().collect();
    vehicle_order.sort_by_key(|v| v.id);

    let mut used: BTreeSet<u64> = BTreeSet::new();
    let mut assignments = Vec::new();
    for request in order {
        let mut best: Option<(f64, u64, InsertionPlan)> = None;
        for vehicle in &vehicle_order {
            if used.contains(&vehicle.id) {
                continue;
            }
            let release = releases[&vehicle.id];
            let plan = match request.service {
                ServiceType::Single => plan_single(vehicle, release, request, oracle, cfg, now_s),
                ServiceType::Shared => insert_shared(vehicle, release, request, oracle, cfg, now_s),
                ServiceType::None => None,
            };
            if let Some(plan) = plan {
                let better = match &best {
                    None => true,
                    Some((t, vid, _)) => {
                        plan.pickup_time_s < *t || (plan.pickup_time_s == *t && vehicle.id < *vid)
                    }
                };
                if better {
                    best = Some((plan.pickup_time_s, vehicle.id, plan));
                }
            }
        }
        if let Some((pickup_t, vehicle_id, plan)) = best {
            used.insert(vehicle_id);
            assignments.push(Assignment {
                request_id: request.id,
                vehicle_id,
                schedule: plan.schedule,
                predicted_pickup_s: pickup_t,
                predicted_wait_s: pickup_t - now_s,
                exclusive: request.service == ServiceType::Single,
            });
        }
    }
    Ok(assignments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::{FleetKind, RequestStatus};
    use crate::network::NodeId;

    /// Symmetric travel-time oracle over a small abstract node set.
    pub(crate) struct MatrixOracle {
        pub times: BTreeMap<(u64, u64), f64>,
    }

    impl TravelTimeOracle for MatrixOracle {
        fn travel_time_s(&self, from: NodeId, to: NodeId, _depart_s: f64) -> Option<f64> {
            if from == to {
                return Some(0.0);
            }
            self.times.get(&(from.0, to.0)).copied()
        }
    }

    fn oracle_from(entries: &[((u64, u64), f64)]) -> MatrixOracle {
        let mut times = BTreeMap::new();
        for ((a, b), t) in entries {
            times.insert((*a, *b), *t);
            times.insert((*b, *a), *t);
        }
        MatrixOracle { times }
    }

    fn request(id: u64, service: ServiceType, pickup: u64, dropoff: u64) -> ServiceRequest {
        ServiceRequest {
            id: RequestId(id),
            passenger_id: id,
            request_time_s: 0.0,
            service,
            pickup: NodeId(pickup),
            dropoff: NodeId(dropoff),
            status: RequestStatus::Pending,
        }
    }

    fn vehicle(id: u64, at: u64) -> FleetVehicle {
        FleetVehicle::new(id, 4, FleetKind::Amod, NodeId(at))
    }

    fn releases(vehicles: &[FleetVehicle]) -> BTreeMap<u64, ReleasePoint> {
        vehicles
            .iter()
            .map(|v| (v.id, ReleasePoint { node: v.location, ready_at_s: 0.0 }))
            .collect()
    }

    #[test]
    fn no_vehicles_leaves_requests_pending() {
        let oracle = oracle_from(&[]);
        let cfg = ControllerConfig::default();
        let pending = vec![request(1, ServiceType::Single, 1, 2)];
        let out = assign_batch(&pending, &[], &BTreeMap::new(), &oracle, &cfg, 0.0).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn nearest_feasible_vehicle_wins() {
        // Three idle vehicles at 2/4/6 minutes from the pickup, max_wait 5.
        let oracle = oracle_from(&[
            ((10, 1), 120.0),
            ((11, 1), 240.0),
            ((12, 1), 360.0),
            ((1, 2), 300.0),
        ]);
        let cfg = ControllerConfig { max_wait_min: 5.0, ..ControllerConfig::default() };
        let vehicles = vec![vehicle(1, 10), vehicle(2, 11), vehicle(3, 12)];
        let pending = vec![request(1, ServiceType::Single, 1, 2)];
        let out =
            assign_batch(&pending, &vehicles, &releases(&vehicles), &oracle, &cfg, 0.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].vehicle_id, 1);
        assert!((out[0].predicted_wait_s - 120.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_when_all_too_far() {
        let oracle = oracle_from(&[((10, 1), 400.0), ((1, 2), 300.0)]);
        let cfg = ControllerConfig { max_wait_min: 5.0, ..ControllerConfig::default() };
        let vehicles = vec![vehicle(1, 10)];
        let pending = vec![request(1, ServiceType::Single, 1, 2)];
        let out =
            assign_batch(&pending, &vehicles, &releases(&vehicles), &oracle, &cfg, 0.0).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn insert_into_empty_schedule_is_pickup_then_dropoff() {
        let oracle = oracle_from(&[((10, 1), 60.0), ((1, 2), 120.0)]);
        let cfg = ControllerConfig::default();
        let veh = vehicle(1, 10);
        let req = request(1, ServiceType::Shared, 1, 2);
        let plan = insert_shared(
            &veh,
            ReleasePoint { node: NodeId(10), ready_at_s: 0.0 },
            &req,
            &oracle,
            &cfg,
            0.0,
        )
        .unwrap();
        assert_eq!(
            plan.schedule,
            vec![
                Stop { node: NodeId(1), action: StopAction::Pickup(RequestId(1)) },
                Stop { node: NodeId(2), action: StopAction::Dropoff(RequestId(1)) },
            ]
        );
        assert!((plan.pickup_time_s - 60.0).abs() < 1e-12);
    }

    #[test]
    fn detour_budget_rejects_insertion() {
        // Vehicle drives 1 -> 2 with a passenger aboard (dropoff at 2,
        // 300 s away) and a new shared pair (3, 4) asks to join.
        //
        // Serving (3, 4) before the dropoff adds 10 min to the onboard
        // passenger (or 650 s of detour to the new one); serving it after
        // means a 550 s pickup wait. Tight limits (max_wait 6 min,
        // max_detour 5 min) reject all three insertions; looser ones pick
        // the zero-detour serve-after plan.
        let oracle = oracle_from(&[
            ((1, 2), 300.0),
            ((1, 3), 100.0),
            ((3, 4), 200.0),
            ((4, 2), 600.0),
            ((3, 2), 250.0),
            ((4, 1), 150.0),
            ((2, 4), 600.0),
        ]);
        let mut veh = vehicle(1, 1);
        veh.onboard.insert(RequestId(9));
        veh.schedule = vec![Stop { node: NodeId(2), action: StopAction::Dropoff(RequestId(9)) }];
        let req = request(1, ServiceType::Shared, 3, 4);
        let release = ReleasePoint { node: NodeId(1), ready_at_s: 0.0 };

        let tight = ControllerConfig { max_detour_min: 5.0, max_wait_min: 6.0, ..ControllerConfig::default() };
        assert!(insert_shared(&veh, release, &req, &oracle, &tight, 0.0).is_none());

        let loose = ControllerConfig { max_detour_min: 12.0, max_wait_min: 30.0, ..ControllerConfig::default() };
        let plan = insert_shared(&veh, release, &req, &oracle, &loose, 0.0).unwrap();
        // Best order keeps the onboard dropoff first: 1->2->3->4.
        assert_eq!(plan.schedule[0].node, NodeId(2));
        assert!((plan.added_time_s - 450.0).abs() < 1e-9);
    }

    #[test]
    fn seat_constraint_respected() {
        let oracle = oracle_from(&[((1, 2), 100.0), ((1, 3), 50.0), ((3, 2), 60.0), ((3, 1), 50.0), ((2, 3), 60.0)]);
        let mut veh = vehicle(1, 1);
        veh.seats = 1;
        veh.onboard.insert(RequestId(9));
        veh.schedule = vec![Stop { node: NodeId(2), action: StopAction::Dropoff(RequestId(9)) }];
        let req = request(1, ServiceType::Shared, 3, 2);
        let release = ReleasePoint { node: NodeId(1), ready_at_s: 0.0 };
        let cfg = ControllerConfig { max_wait_min: 60.0, max_detour_min: 60.0, ..ControllerConfig::default() };
        // Any insertion of a second passenger before the dropoff exceeds one
        // seat; the only feasible plans pick up after the dropoff.
        let plan = insert_shared(&veh, release, &req, &oracle, &cfg, 0.0).unwrap();
        assert_eq!(
            plan.schedule.first().map(|s| s.action),
            Some(StopAction::Dropoff(RequestId(9)))
        );
    }
}
