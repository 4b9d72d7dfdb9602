//! On-demand mobility service controller.
//!
//! The controller receives ride requests, batch-assigns fleet vehicles
//! under waiting-time / detour / seat constraints, inserts shared rides
//! into existing schedules and directs idle vehicles to cruise in demand
//! hot-spots or park. It is invoked synchronously by the simulation loop
//! at batch boundaries and is deterministic: requests are processed in
//! (request time, id) order and ties between vehicles break on the lowest
//! vehicle id.

mod assign;
mod kpis;
mod rebalance;

pub use assign::{assign_batch, insert_shared, schedule_times, Assignment, InsertionPlan};
pub use kpis::{fleet_kpis, FleetKpis, VehicleLegSummary};
pub use rebalance::rebalance_idle;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::demand::{ServiceType, TravelMode};
use crate::error::{Error, Result};
use crate::network::{NodeId, ZoneId};
use crate::routing::TravelTimeOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u64);

impl std::fmt::Display for RequestId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestStatus {
    Pending,
    Assigned,
    PickedUp,
    Completed,
    Expired,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub id: RequestId,
    pub passenger_id: u64,
    pub request_time_s: f64,
    pub service: ServiceType,
    pub pickup: NodeId,
    pub dropoff: NodeId,
    pub status: RequestStatus,
}

impl ServiceRequest {
    pub fn check(&self) -> Result<()> {
        if self.pickup == self.dropoff {
            return Err(Error::domain("request pickup equals dropoff"));
        }
        if self.service == ServiceType::None {
            return Err(Error::domain("request service type must be single or shared"));
        }
        Ok(())
    }
}

/// Human-driven (MOD) vs automated (AMOD) fleet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FleetKind {
    #[serde(rename = "MOD")]
    Mod,
    #[serde(rename = "AMOD")]
    Amod,
}

impl FleetKind {
    /// Mode while driving with passengers aboard.
    pub fn service_mode(self) -> TravelMode {
        match self {
            FleetKind::Mod => TravelMode::Mod,
            FleetKind::Amod => TravelMode::Amod,
        }
    }

    /// Mode for empty operational movement (pickup legs, cruising, parking).
    pub fn operational_mode(self) -> TravelMode {
        match self {
            FleetKind::Mod => TravelMode::ModOp,
            FleetKind::Amod => TravelMode::AmodOp,
        }
    }

    pub fn request_mode(self) -> TravelMode {
        self.service_mode()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleStatus {
    IdleParked,
    IdleCruising,
    DriveToPickup,
    DriveWithPassenger,
    DriveToPark,
}

impl VehicleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleStatus::IdleParked => "IDLE_PARKED",
            VehicleStatus::IdleCruising => "IDLE_CRUISING",
            VehicleStatus::DriveToPickup => "DRIVE_TO_PICKUP",
            VehicleStatus::DriveWithPassenger => "DRIVE_WITH_PASSENGER",
            VehicleStatus::DriveToPark => "DRIVE_TO_PARK",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopAction {
    Pickup(RequestId),
    Dropoff(RequestId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stop {
    pub node: NodeId,
    pub action: StopAction,
}

#[derive(Debug, Clone)]
pub struct FleetVehicle {
    pub id: u64,
    pub seats: u32,
    pub kind: FleetKind,
    /// Last node the controller knows the vehicle can be dispatched from.
    pub location: NodeId,
    pub status: VehicleStatus,
    pub schedule: Vec<Stop>,
    pub onboard: BTreeSet<RequestId>,
    /// Set while serving a single (exclusive) ride.
    pub exclusive: bool,
}

impl FleetVehicle {
    pub fn new(id: u64, seats: u32, kind: FleetKind, location: NodeId) -> Self {
        FleetVehicle {
            id,
            seats,
            kind,
            location,
            status: VehicleStatus::IdleParked,
            schedule: Vec::new(),
            onboard: BTreeSet::new(),
            exclusive: false,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.schedule.is_empty() && self.onboard.is_empty()
    }
}

/// Where and when a vehicle can start executing a new order: the node it
/// will next be able to turn at, and the clock time it gets there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleasePoint {
    pub node: NodeId,
    pub ready_at_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RebalancePolicy {
    #[serde(rename = "cruise_hotspot")]
    CruiseHotspot,
    #[serde(rename = "nearest_parking")]
    NearestParking,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub batch_interval_s: f64,
    pub max_wait_min: f64,
    pub max_detour_min: f64,
    pub policy: RebalancePolicy,
    pub parking_nodes: Vec<NodeId>,
    /// Demand hot-spot zones, best first.
    pub hotspot_zones: Vec<ZoneId>,
    /// Anchor node per hot-spot zone (the zone centroid), resolved against
    /// the network when the scenario is assembled.
    #[serde(skip)]
    pub hotspot_anchors: Vec<NodeId>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            batch_interval_s: 30.0,
            max_wait_min: 6.0,
            max_detour_min: 10.0,
            policy: RebalancePolicy::NearestParking,
            parking_nodes: Vec::new(),
            hotspot_zones: Vec::new(),
            hotspot_anchors: Vec::new(),
        }
    }
}

impl ControllerConfig {
    pub fn max_wait_s(&self) -> f64 {
        self.max_wait_min * 60.0
    }

    pub fn max_detour_s(&self) -> f64 {
        self.max_detour_min * 60.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.batch_interval_s > 0.0) {
            return Err(Error::invalid_config("controller.batch_interval_s", "must be > 0"));
        }
        if !(self.max_wait_min > 0.0) {
            return Err(Error::invalid_config("controller.max_wait_min", "must be > 0"));
        }
        if self.max_detour_min < 0.0 {
            return Err(Error::invalid_config("controller.max_detour_min", "must be >= 0"));
        }
        if self.policy == RebalancePolicy::NearestParking && self.parking_nodes.is_empty() {
            return Err(Error::invalid_config(
                "controller.parking_nodes",
                "nearest_parking policy needs at least one parking node",
            ));
        }
        if self.policy == RebalancePolicy::CruiseHotspot
            && !self.hotspot_anchors.is_empty()
            && self.hotspot_anchors.len() != self.hotspot_zones.len()
        {
            return Err(Error::invalid_config(
                "controller.hotspot_zones",
                "hot-spot anchors must match the zone ranking",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "REQUEST")]
    Request,
    #[serde(rename = "ASSIGN")]
    Assign,
    #[serde(rename = "PICKUP")]
    Pickup,
    #[serde(rename = "DROPOFF")]
    Dropoff,
    #[serde(rename = "EXPIRE")]
    Expire,
    #[serde(rename = "REBALANCE")]
    Rebalance,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Request => "REQUEST",
            EventKind::Assign => "ASSIGN",
            EventKind::Pickup => "PICKUP",
            EventKind::Dropoff => "DROPOFF",
            EventKind::Expire => "EXPIRE",
            EventKind::Rebalance => "REBALANCE",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerEvent {
    pub time_s: f64,
    pub event: EventKind,
    pub fleet: FleetKind,
    pub request_id: Option<u64>,
    pub vehicle_id: Option<u64>,
    pub node: Option<u64>,
}

/// Movement order issued to the supply engine.
#[derive(Debug, Clone, PartialEq)]
pub enum VehicleOrder {
    /// Start (or re-plan) schedule execution, driving to the first stop.
    BeginSchedule { vehicle: u64, first_target: NodeId },
    /// Cruise toward a hot-spot zone.
    Cruise { vehicle: u64, zone: ZoneId, target: NodeId },
    /// Drive to a parking node and go idle there.
    Park { vehicle: u64, target: NodeId },
}

/// What happened when a vehicle reached its schedule stop.
#[derive(Debug, Clone)]
pub struct ArrivalOutcome {
    /// (request id, passenger id) pairs boarded at this node.
    pub picked_up: Vec<(RequestId, u64)>,
    /// (request id, passenger id) pairs alighting at this node.
    pub dropped_off: Vec<(RequestId, u64)>,
    /// Next stop to drive to, if the schedule continues.
    pub next_target: Option<NodeId>,
    pub status: VehicleStatus,
}

impl Default for ArrivalOutcome {
    fn default() -> Self {
        ArrivalOutcome {
            picked_up: Vec::new(),
            dropped_off: Vec::new(),
            next_target: None,
            status: VehicleStatus::IdleParked,
        }
    }
}

pub struct Controller {
    pub kind: FleetKind,
    pub cfg: ControllerConfig,
    vehicles: Vec<FleetVehicle>,
    vehicle_pos: BTreeMap<u64, usize>,
    requests: BTreeMap<RequestId, ServiceRequest>,
    /// Pending request ids ordered by (request time, id).
    pending: Vec<RequestId>,
    events: Vec<ControllerEvent>,
    /// Round-robin cursor per cruising vehicle for hot-spot circulation.
    cruise_cursor: BTreeMap<u64, usize>,
}

impl Controller {
    pub fn new(kind: FleetKind, cfg: ControllerConfig, vehicles: Vec<FleetVehicle>) -> Result<Self> {
        cfg.validate()?;
        let vehicle_pos = vehicles.iter().enumerate().map(|(i, v)| (v.id, i)).collect();
        Ok(Controller {
            kind,
            cfg,
            vehicles,
            vehicle_pos,
            requests: BTreeMap::new(),
            pending: Vec::new(),
            events: Vec::new(),
            cruise_cursor: BTreeMap::new(),
        })
    }

    pub fn vehicles(&self) -> &[FleetVehicle] {
        &self.vehicles
    }

    pub fn vehicle(&self, id: u64) -> &FleetVehicle {
        &self.vehicles[self.vehicle_pos[&id]]
    }

    pub fn request(&self, id: RequestId) -> Option<&ServiceRequest> {
        self.requests.get(&id)
    }

    pub fn events(&self) -> &[ControllerEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<ControllerEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    fn push_event(
        &mut self,
        time_s: f64,
        event: EventKind,
        request_id: Option<u64>,
        vehicle_id: Option<u64>,
        node: Option<NodeId>,
    ) {
        self.events.push(ControllerEvent {
            time_s,
            event,
            fleet: self.kind,
            request_id,
            vehicle_id,
            node: node.map(|n| n.0),
        });
    }

    /// Accepts a well-formed request into the pending pool.
    pub fn submit_request(&mut self, mut request: ServiceRequest) -> Result<()> {
        request.check()?;
        if self.requests.contains_key(&request.id) {
            return Err(Error::domain(format!(
                "duplicate request id {}",
                request.id
            )));
        }
        request.status = RequestStatus::Pending;
        self.push_event(
            request.request_time_s,
            EventKind::Request,
            Some(request.id.0),
            None,
            Some(request.pickup),
        );
        let key = (request.request_time_s, request.id);
        let idx = self
            .pending
            .partition_point(|id| (self.requests[id].request_time_s, *id) <= key);
        self.pending.insert(idx, request.id);
        self.requests.insert(request.id, request);
        Ok(())
    }

    /// Expires requests pending longer than the wait threshold. Returns the
    /// expired (request id, passenger id) pairs.
    pub fn expire_stale(&mut self, now_s: f64) -> Vec<(RequestId, u64)> {
        let max_wait = self.cfg.max_wait_s();
        let mut expired = Vec::new();
        let mut keep = Vec::with_capacity(self.pending.len());
        for id in std::mem::take(&mut self.pending) {
            let req = &self.requests[&id];
            if now_s - req.request_time_s > max_wait {
                expired.push((id, req.passenger_id));
            } else {
                keep.push(id);
            }
        }
        self.pending = keep;
        for (id, _) in &expired {
            let node = self.requests[id].pickup;
            self.requests.get_mut(id).expect("known request").status = RequestStatus::Expired;
            self.push_event(now_s, EventKind::Expire, Some(id.0), None, Some(node));
        }
        expired
    }

    /// One controller batch: expire stale requests, assign the pending pool,
    /// rebalance idle vehicles. `release` reports where each vehicle can
    /// start a new route. Returns expirations and the movement orders the
    /// engine must apply.
    pub fn run_batch(
        &mut self,
        now_s: f64,
        release: &dyn Fn(u64) -> ReleasePoint,
        oracle: &dyn TravelTimeOracle,
    ) -> Result<(Vec<(RequestId, u64)>, Vec<VehicleOrder>)> {
        let expired = self.expire_stale(now_s);

        let pending: Vec<ServiceRequest> = self
            .pending
            .iter()
            .map(|id| self.requests[id].clone())
            .collect();
        let releases: BTreeMap<u64, ReleasePoint> = self
            .vehicles
            .iter()
            .map(|v| (v.id, release(v.id)))
            .collect();
        let assignments = assign_batch(&pending, &self.vehicles, &releases, oracle, &self.cfg, now_s)?;

        let mut orders = Vec::new();
        for assignment in assignments {
            let vidx = self.vehicle_pos[&assignment.vehicle_id];
            {
                let vehicle = &mut self.vehicles[vidx];
                vehicle.schedule = assignment.schedule.clone();
                vehicle.exclusive = assignment.exclusive;
                vehicle.status = if vehicle.onboard.is_empty() {
                    VehicleStatus::DriveToPickup
                } else {
                    VehicleStatus::DriveWithPassenger
                };
            }
            let req = self
                .requests
                .get_mut(&assignment.request_id)
                .expect("known request");
            req.status = RequestStatus::Assigned;
            let pickup = req.pickup;
            self.pending.retain(|id| *id != assignment.request_id);
            self.cruise_cursor.remove(&assignment.vehicle_id);
            self.push_event(
                now_s,
                EventKind::Assign,
                Some(assignment.request_id.0),
                Some(assignment.vehicle_id),
                Some(pickup),
            );
            let first = self.vehicles[vidx].schedule[0].node;
            orders.push(VehicleOrder::BeginSchedule {
                vehicle: assignment.vehicle_id,
                first_target: first,
            });
            let _ = pickup;
        }

        let rebalance_orders = rebalance_idle(&self.vehicles, &self.cfg, &releases, oracle)?;
        for order in &rebalance_orders {
            match order {
                VehicleOrder::Cruise { vehicle, zone, target } => {
                    let vidx = self.vehicle_pos[vehicle];
                    self.vehicles[vidx].status = VehicleStatus::IdleCruising;
                    self.push_event(now_s, EventKind::Rebalance, None, Some(*vehicle), Some(*target));
                    let _ = zone;
                }
                VehicleOrder::Park { vehicle, target } => {
                    let vidx = self.vehicle_pos[vehicle];
                    self.vehicles[vidx].status = VehicleStatus::DriveToPark;
                    self.push_event(now_s, EventKind::Rebalance, None, Some(*vehicle), Some(*target));
                }
                VehicleOrder::BeginSchedule { .. } => unreachable!("rebalance never schedules"),
            }
        }
        orders.extend(rebalance_orders);
        Ok((expired, orders))
    }

    /// Marks a cruising vehicle as having reached `node` and returns the next
    /// node of its hot-spot circuit.
    pub fn next_cruise_target(&mut self, vehicle_id: u64, zone_nodes: &[NodeId]) -> Option<NodeId> {
        if zone_nodes.is_empty() {
            return None;
        }
        let cursor = self.cruise_cursor.entry(vehicle_id).or_insert(0);
        let target = zone_nodes[*cursor % zone_nodes.len()];
        *cursor += 1;
        Some(target)
    }

    /// Processes every consecutive schedule stop at `node`: dropoffs first,
    /// then pickups. Returns what boarded/alighted and where to go next.
    pub fn vehicle_arrived(&mut self, vehicle_id: u64, node: NodeId, now_s: f64) -> ArrivalOutcome {
        let vidx = self.vehicle_pos[&vehicle_id];
        let mut outcome = ArrivalOutcome::default();
        loop {
            let vehicle = &self.vehicles[vidx];
            let Some(stop) = vehicle.schedule.first().copied() else {
                break;
            };
            if stop.node != node {
                break;
            }
            self.vehicles[vidx].schedule.remove(0);
            match stop.action {
                StopAction::Dropoff(req_id) => {
                    self.vehicles[vidx].onboard.remove(&req_id);
                    let req = self.requests.get_mut(&req_id).expect("known request");
                    req.status = RequestStatus::Completed;
                    let passenger = req.passenger_id;
                    outcome.dropped_off.push((req_id, passenger));
                    self.push_event(now_s, EventKind::Dropoff, Some(req_id.0), Some(vehicle_id), Some(node));
                }
                StopAction::Pickup(req_id) => {
                    self.vehicles[vidx].onboard.insert(req_id);
                    let req = self.requests.get_mut(&req_id).expect("known request");
                    req.status = RequestStatus::PickedUp;
                    let passenger = req.passenger_id;
                    outcome.picked_up.push((req_id, passenger));
                    self.push_event(now_s, EventKind::Pickup, Some(req_id.0), Some(vehicle_id), Some(node));
                }
            }
        }

        let vehicle = &mut self.vehicles[vidx];
        vehicle.location = node;
        if let Some(next) = vehicle.schedule.first() {
            vehicle.status = if vehicle.onboard.is_empty() {
                VehicleStatus::DriveToPickup
            } else {
                VehicleStatus::DriveWithPassenger
            };
            outcome.next_target = Some(next.node);
        } else {
            vehicle.exclusive = false;
            vehicle.status = VehicleStatus::IdleParked;
            outcome.next_target = None;
        }
        outcome.status = vehicle.status;
        outcome
    }

    /// Engine callback when a parking run finishes.
    pub fn parked(&mut self, vehicle_id: u64, node: NodeId) {
        let vidx = self.vehicle_pos[&vehicle_id];
        let vehicle = &mut self.vehicles[vidx];
        vehicle.location = node;
        vehicle.status = VehicleStatus::IdleParked;
        self.cruise_cursor.remove(&vehicle_id);
    }

    /// Engine callback to keep the controller's coarse location current.
    pub fn update_location(&mut self, vehicle_id: u64, node: NodeId) {
        let vidx = self.vehicle_pos[&vehicle_id];
        self.vehicles[vidx].location = node;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(id: u64, t: f64) -> ServiceRequest {
        ServiceRequest {
            id: RequestId(id),
            passenger_id: id,
            request_time_s: t,
            service: ServiceType::Single,
            pickup: NodeId(1),
            dropoff: NodeId(2),
            status: RequestStatus::Pending,
        }
    }

    fn controller() -> Controller {
        let cfg = ControllerConfig {
            policy: RebalancePolicy::CruiseHotspot,
            ..ControllerConfig::default()
        };
        Controller::new(FleetKind::Amod, cfg, vec![]).unwrap()
    }

    #[test]
    fn submit_grows_pending_pool() {
        let mut c = controller();
        c.submit_request(request(1, 0.0)).unwrap();
        assert_eq!(c.pending_len(), 1);
    }

    #[test]
    fn duplicate_request_rejected() {
        let mut c = controller();
        c.submit_request(request(1, 0.0)).unwrap();
        assert!(c.submit_request(request(1, 10.0)).is_err());
        assert_eq!(c.pending_len(), 1);
    }

    #[test]
    fn pickup_equals_dropoff_rejected() {
        let mut c = controller();
        let mut req = request(1, 0.0);
        req.dropoff = req.pickup;
        assert!(c.submit_request(req).is_err());
        assert_eq!(c.pending_len(), 0);
    }

    #[test]
    fn stale_requests_expire_once() {
        let mut c = controller();
        c.submit_request(request(1, 0.0)).unwrap();
        c.submit_request(request(2, 300.0)).unwrap();
        // max_wait is 6 min; at t=370 only request 1 has waited longer.
        let expired = c.expire_stale(370.0);
        assert_eq!(expired, vec![(RequestId(1), 1)]);
        assert_eq!(c.pending_len(), 1);
        assert_eq!(c.request(RequestId(1)).unwrap().status, RequestStatus::Expired);
        // Expired requests never reappear.
        assert!(c.expire_stale(10_000.0).iter().all(|(id, _)| *id != RequestId(1)));
    }
}
