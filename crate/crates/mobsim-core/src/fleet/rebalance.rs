//! Idle-vehicle repositioning: cruise in a demand hot-spot or drive to the
//! nearest parking node.

use std::collections::BTreeMap;

use super::{
    ControllerConfig, FleetVehicle, RebalancePolicy, ReleasePoint, VehicleOrder, VehicleStatus,
};
use crate::error::{Error, Result};
use crate::network::NodeId;
use crate::routing::TravelTimeOracle;

/// Orders for every idle vehicle that is not already executing the policy.
/// Under `CruiseHotspot` a vehicle heads for its nearest hot-spot zone (by
/// predicted travel time, ranking position on ties); under `NearestParking`
/// it heads for the nearest parking node.
pub fn rebalance_idle(
    vehicles: &[FleetVehicle],
    cfg: &ControllerConfig,
    releases: &BTreeMap<u64, ReleasePoint>,
    oracle: &dyn TravelTimeOracle,
) -> Result<Vec<VehicleOrder>> {
    let mut orders = Vec::new();
    let mut idle: Vec<&FleetVehicle> = vehicles
        .iter()
        .filter(|v| v.is_idle() && v.status == VehicleStatus::IdleParked)
        .collect();
    idle.sort_by_key(|v| v.id);

    match cfg.policy {
        RebalancePolicy::CruiseHotspot => {
            // Hot-spot targets are resolved against zone centroids by the
            // caller; here we only need the per-zone anchor nodes.
            for vehicle in idle {
                let release = releases[&vehicle.id];
                let mut best: Option<(f64, usize)> = None;
                for (rank, anchor) in cfg.hotspot_anchors.iter().enumerate() {
                    let Some(t) = oracle.travel_time_s(release.node, *anchor, release.ready_at_s)
                    else {
                        continue;
                    };
                    if best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, rank));
                    }
                }
                if let Some((_, rank)) = best {
                    orders.push(VehicleOrder::Cruise {
                        vehicle: vehicle.id,
                        zone: cfg.hotspot_zones[rank],
                        target: cfg.hotspot_anchors[rank],
                    });
                }
            }
        }
        RebalancePolicy::NearestParking => {
            if cfg.parking_nodes.is_empty() {
                return Err(Error::invalid_config(
                    "controller.parking_nodes",
                    "nearest_parking policy needs at least one parking node",
                ));
            }
            for vehicle in idle {
                let release = releases[&vehicle.id];
                if cfg.parking_nodes.contains(&release.node) {
                    // Already at a parking node; nothing to do.
                    continue;
                }
                let mut best: Option<(f64, NodeId)> = None;
                for &node in &cfg.parking_nodes {
                    let Some(t) = oracle.travel_time_s(release.node, node, release.ready_at_s)
                    else {
                        continue;
                    };
                    if best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, node));
                    }
                }
                if let Some((_, target)) = best {
                    orders.push(VehicleOrder::Park { vehicle: vehicle.id, target });
                }
            }
        }
    }
    Ok(orders)
}
