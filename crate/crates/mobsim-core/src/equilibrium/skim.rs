//! Zone-to-zone skims: in-vehicle time, waiting time and distance per mode
//! and period, rebuilt from a converged travel-time table and the
//! controller event log.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::table::TravelTimeTable;
use crate::demand::TravelMode;
use crate::error::{Error, Result};
use crate::fleet::{ControllerEvent, EventKind, FleetKind};
use crate::mesosim::TransitSystem;
use crate::network::{Network, ZoneId};
use crate::routing::Router;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkimCell {
    pub ivtt_min: f64,
    pub wait_min: f64,
    pub distance_km: f64,
}

/// Dense (mode, origin zone, destination zone, period) table. A cell with
/// non-finite in-vehicle time means the mode cannot serve that pair.
#[derive(Debug, Clone)]
pub struct SkimMatrix {
    period_s: u32,
    n_periods: usize,
    zones: Vec<ZoneId>,
    zone_pos: BTreeMap<ZoneId, usize>,
    cells: BTreeMap<TravelMode, Vec<SkimCell>>,
}

impl SkimMatrix {
    pub fn new(zones: Vec<ZoneId>, period_s: u32, n_periods: usize) -> Self {
        let zone_pos = zones.iter().enumerate().map(|(i, z)| (*z, i)).collect();
        SkimMatrix { period_s, n_periods, zones, zone_pos, cells: BTreeMap::new() }
    }

    pub fn zones(&self) -> &[ZoneId] {
        &self.zones
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn period_s(&self) -> u32 {
        self.period_s
    }

    pub fn period_of(&self, at_s: f64) -> usize {
        if at_s <= 0.0 {
            return 0;
        }
        ((at_s / self.period_s as f64) as usize).min(self.n_periods - 1)
    }

    fn slot(&self, o: usize, d: usize, p: usize) -> usize {
        (o * self.zones.len() + d) * self.n_periods + p
    }

    pub fn insert_mode(&mut self, mode: TravelMode, cells: Vec<SkimCell>) -> Result<()> {
        let expected = self.zones.len() * self.zones.len() * self.n_periods;
        if cells.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "skim for {mode}: {} cells, expected {expected}",
                cells.len()
            )));
        }
        self.cells.insert(mode, cells);
        Ok(())
    }

    pub fn get(
        &self,
        mode: TravelMode,
        origin: ZoneId,
        destination: ZoneId,
        period: usize,
    ) -> Option<SkimCell> {
        let o = *self.zone_pos.get(&origin)?;
        let d = *self.zone_pos.get(&destination)?;
        let cells = self.cells.get(&mode)?;
        cells.get(self.slot(o, d, period.min(self.n_periods - 1))).copied()
    }

    pub fn modes(&self) -> impl Iterator<Item = TravelMode> + '_ {
        self.cells.keys().copied()
    }
}

#[derive(Debug, Clone)]
pub struct SkimConfig<'a> {
    pub net: &'a Network,
    pub transit: &'a TransitSystem,
    pub period_s: u32,
    pub horizon_s: u32,
    /// Bus door-to-door time as a multiple of the car time.
    pub bus_time_factor: f64,
    pub taxi_wait_min: f64,
    /// Used when the event log has no observations for a fleet.
    pub default_on_demand_wait_min: f64,
    pub default_bus_wait_min: f64,
    /// Distance assumed for intra-zonal movements.
    pub intrazonal_km: f64,
    pub walk_speed_kmh: f64,
    pub walk_detour_factor: f64,
    /// Modes to build cells for.
    pub modes: Vec<TravelMode>,
}

impl<'a> SkimConfig<'a> {
    pub fn new(net: &'a Network, transit: &'a TransitSystem, horizon_s: u32) -> Self {
        SkimConfig {
            net,
            transit,
            period_s: 3600,
            horizon_s,
            bus_time_factor: 1.6,
            taxi_wait_min: 3.0,
            default_on_demand_wait_min: 5.0,
            default_bus_wait_min: 5.0,
            intrazonal_km: 0.5,
            walk_speed_kmh: 4.8,
            walk_detour_factor: 1.3,
            modes: vec![
                TravelMode::CarCarpool,
                TravelMode::Taxi,
                TravelMode::Mod,
                TravelMode::Amod,
                TravelMode::Bus,
                TravelMode::Rail,
                TravelMode::Other,
            ],
        }
    }
}

/// Mean wait (pickup - request) per fleet from the event log, in minutes.
pub fn observed_wait_min(events: &[ControllerEvent], kind: FleetKind) -> Option<f64> {
    let mut request_time: BTreeMap<u64, f64> = BTreeMap::new();
    let mut waits = Vec::new();
    for ev in events.iter().filter(|e| e.fleet == kind) {
        match ev.event {
            EventKind::Request => {
                if let Some(id) = ev.request_id {
                    request_time.insert(id, ev.time_s);
                }
            }
            EventKind::Pickup => {
                if let (Some(id), Some(t0)) =
                    (ev.request_id, ev.request_id.and_then(|id| request_time.get(&id)))
                {
                    waits.push((ev.time_s - t0) / 60.0);
                    let _ = id;
                }
            }
            _ => {}
        }
    }
    if waits.is_empty() {
        None
    } else {
        Some(waits.iter().sum::<f64>() / waits.len() as f64)
    }
}

/// Builds skims from routed costs on the converged table plus observed
/// on-demand waits. A pure function of its inputs.
pub fn build_skims(
    tt: &TravelTimeTable,
    events: &[ControllerEvent],
    cfg: &SkimConfig<'_>,
) -> Result<SkimMatrix> {
    let net = cfg.net;
    let zones: Vec<ZoneId> = net.zones().iter().map(|z| z.id).collect();
    let n_zones = zones.len();
    let n_periods = (cfg.horizon_s as usize).div_ceil(cfg.period_s as usize).max(1);
    let mut skim = SkimMatrix::new(zones.clone(), cfg.period_s, n_periods);
    let router = Router::new(net, tt);

    // Car travel times/distances per (o, d, period) via one search per
    // (origin zone, period).
    let n_cells = n_zones * n_zones * n_periods;
    let mut car_ivtt = vec![f64::INFINITY; n_cells];
    let mut car_dist = vec![f64::INFINITY; n_cells];
    for (o, zone) in net.zones().iter().enumerate() {
        for p in 0..n_periods {
            let depart = (p as f64 + 0.5) * cfg.period_s as f64;
            for (d, dest) in net.zones().iter().enumerate() {
                let slot = (o * n_zones + d) * n_periods + p;
                if o == d {
                    let v_kmh = 30.0_f64;
                    car_ivtt[slot] = cfg.intrazonal_km / v_kmh * 60.0;
                    car_dist[slot] = cfg.intrazonal_km;
                    continue;
                }
                if let Some(route) = router.route(zone.centroid, dest.centroid, depart) {
                    car_ivtt[slot] = route.travel_time_s / 60.0;
                    car_dist[slot] = route.distance_km;
                }
            }
        }
    }

    let mod_wait = observed_wait_min(events, FleetKind::Mod)
        .unwrap_or(cfg.default_on_demand_wait_min);
    let amod_wait = observed_wait_min(events, FleetKind::Amod)
        .unwrap_or(cfg.default_on_demand_wait_min);
    let bus_wait = if cfg.transit.bus_lines.is_empty() {
        cfg.default_bus_wait_min
    } else {
        cfg.transit.bus_lines.iter().map(|l| l.headway_min).sum::<f64>()
            / cfg.transit.bus_lines.len() as f64
            / 2.0
    };
    let rail_wait = cfg.transit.rail.mean_half_headway_min();

    for &mode in &cfg.modes {
        let mut cells = Vec::with_capacity(n_cells);
        for o in 0..n_zones {
            for d in 0..n_zones {
                for p in 0..n_periods {
                    let slot = (o * n_zones + d) * n_periods + p;
                    let ivtt = car_ivtt[slot];
                    let dist = car_dist[slot];
                    let cell = match mode {
                        TravelMode::CarCarpool => {
                            SkimCell { ivtt_min: ivtt, wait_min: 0.0, distance_km: dist }
                        }
                        TravelMode::Taxi => SkimCell {
                            ivtt_min: ivtt,
                            wait_min: cfg.taxi_wait_min,
                            distance_km: dist,
                        },
                        TravelMode::Mod => {
                            SkimCell { ivtt_min: ivtt, wait_min: mod_wait, distance_km: dist }
                        }
                        TravelMode::Amod => {
                            SkimCell { ivtt_min: ivtt, wait_min: amod_wait, distance_km: dist }
                        }
                        TravelMode::Bus => {
                            if cfg.transit.bus_lines.is_empty() {
                                SkimCell {
                                    ivtt_min: f64::INFINITY,
                                    wait_min: bus_wait,
                                    distance_km: dist,
                                }
                            } else {
                                SkimCell {
                                    ivtt_min: ivtt * cfg.bus_time_factor,
                                    wait_min: bus_wait,
                                    distance_km: dist,
                                }
                            }
                        }
                        TravelMode::Rail => match rail_wait {
                            None => SkimCell {
                                ivtt_min: f64::INFINITY,
                                wait_min: 0.0,
                                distance_km: dist,
                            },
                            Some(wait) => {
                                let cell =
                                    rail_cell(cfg, o, d, dist).unwrap_or(SkimCell {
                                        ivtt_min: f64::INFINITY,
                                        wait_min: wait,
                                        distance_km: dist,
                                    });
                                SkimCell { wait_min: wait, ..cell }
                            }
                        },
                        TravelMode::Other => {
                            let km = if o == d {
                                cfg.intrazonal_km
                            } else {
                                walk_dist_km(cfg, o, d)
                            };
                            SkimCell {
                                ivtt_min: km / cfg.walk_speed_kmh * 60.0,
                                wait_min: 0.0,
                                distance_km: km,
                            }
                        }
                        other => {
                            return Err(Error::domain(format!(
                                "skims are not defined for mode {other}"
                            )))
                        }
                    };
                    cells.push(cell);
                }
            }
        }
        skim.insert_mode(mode, cells)?;
    }
    Ok(skim)
}

fn walk_dist_km(cfg: &SkimConfig<'_>, o: usize, d: usize) -> f64 {
    let net = cfg.net;
    let a = net.zones()[o].centroid;
    let b = net.zones()[d].centroid;
    net.euclid_km(a, b).unwrap_or(f64::INFINITY) * cfg.walk_detour_factor
}

/// Rail in-vehicle time between the zones' nearest stations on a common
/// line, including access/egress walks.
fn rail_cell(cfg: &SkimConfig<'_>, o: usize, d: usize, road_dist: f64) -> Option<SkimCell> {
    let net = cfg.net;
    let origin = net.zones()[o].centroid;
    let destination = net.zones()[d].centroid;
    let radius = 10.0 * cfg.walk_detour_factor; // generous for centroid skims
    let mut best: Option<(f64, SkimCell)> = None;
    for line in &cfg.transit.rail.lines {
        for (i, a) in line.stations.iter().enumerate() {
            let walk_o = net.euclid_km(origin, *a)? * cfg.walk_detour_factor;
            if walk_o > radius {
                continue;
            }
            for (j, b) in line.stations.iter().enumerate().skip(i + 1) {
                let walk_d = net.euclid_km(destination, *b)? * cfg.walk_detour_factor;
                if walk_d > radius {
                    continue;
                }
                let run_s: f64 = line.runtimes_s[i..j].iter().sum();
                let ride_km: f64 = line.hops_km[i..j].iter().sum();
                let total_min = (walk_o + walk_d) / cfg.walk_speed_kmh * 60.0 + run_s / 60.0;
                let cell = SkimCell {
                    ivtt_min: total_min,
                    wait_min: 0.0,
                    distance_km: walk_o + ride_km + walk_d,
                };
                if best.as_ref().map_or(true, |(t, _)| total_min < *t) {
                    best = Some((total_min, cell));
                }
            }
        }
    }
    best.map(|(_, c)| c).or(Some(SkimCell {
        ivtt_min: f64::INFINITY,
        wait_min: 0.0,
        distance_km: road_dist,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
struct SkimRow {
    day: u32,
    period: usize,
    mode: TravelMode,
    origin_zone: u64,
    dest_zone: u64,
    ivtt_min: f64,
    wait_min: f64,
    dist_km: f64,
}

pub fn save_skims(skim: &SkimMatrix, day: u32, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for mode in skim.modes() {
        for &o in skim.zones() {
            for &d in skim.zones() {
                for p in 0..skim.n_periods() {
                    let cell = skim.get(mode, o, d, p).expect("dense skim");
                    w.serialize(SkimRow {
                        day,
                        period: p,
                        mode,
                        origin_zone: o.0,
                        dest_zone: d.0,
                        ivtt_min: cell.ivtt_min,
                        wait_min: cell.wait_min,
                        dist_km: cell.distance_km,
                    })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
