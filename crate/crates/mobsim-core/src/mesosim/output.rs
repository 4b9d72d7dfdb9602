//! Simulation output records and their CSV encodings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demand::TravelMode;
use crate::equilibrium::TravelTimeTable;
use crate::error::{Error, Result};
use crate::fleet::{ControllerEvent, EventKind, FleetKind};
use crate::network::{NodeId, SegmentId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityKind {
    #[serde(rename = "vehicle")]
    Vehicle,
    #[serde(rename = "passenger")]
    Passenger,
}

/// Activity tag of one trajectory leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LegStatus {
    #[serde(rename = "DRIVING")]
    Driving,
    #[serde(rename = "DRIVE_TO_PICKUP")]
    DriveToPickup,
    #[serde(rename = "DRIVE_WITH_PASSENGER")]
    DriveWithPassenger,
    #[serde(rename = "DRIVE_TO_PARK")]
    DriveToPark,
    #[serde(rename = "CRUISING")]
    Cruising,
    #[serde(rename = "WAITING")]
    Waiting,
    #[serde(rename = "RIDING")]
    Riding,
    #[serde(rename = "WALKING")]
    Walking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLeg {
    pub mode: TravelMode,
    pub status: LegStatus,
    pub origin: NodeId,
    pub destination: NodeId,
    pub start_s: f64,
    pub end_s: f64,
    pub distance_km: f64,
}

/// Journey of one vehicle or passenger as time-ordered legs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub entity_id: u64,
    pub kind: EntityKind,
    pub legs: Vec<TrajectoryLeg>,
}

impl TrajectoryRecord {
    pub fn total_distance_km(&self) -> f64 {
        self.legs.iter().map(|l| l.distance_km).sum()
    }

    pub fn start_s(&self) -> Option<f64> {
        self.legs.first().map(|l| l.start_s)
    }

    pub fn end_s(&self) -> Option<f64> {
        self.legs.last().map(|l| l.end_s)
    }
}

/// One per-interval sensor reading of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentStatRow {
    pub interval_start_s: u32,
    pub segment_id: SegmentId,
    pub k_veh_km: f64,
    pub q_veh_h: f64,
    pub v_kmh: f64,
}

/// Entity accounting at one statistics boundary; every row must satisfy
/// `not_departed + entry_wait + on_road + off_road + done == total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConservationRow {
    pub t_s: u32,
    pub vehicles_total: u64,
    pub vehicles_not_departed: u64,
    pub vehicles_entry_wait: u64,
    pub vehicles_on_road: u64,
    pub vehicles_off_road: u64,
    pub vehicles_done: u64,
    pub passengers_total: u64,
    pub passengers_not_departed: u64,
    pub passengers_active: u64,
    pub passengers_done: u64,
    pub passengers_unserved: u64,
}

impl ConservationRow {
    pub fn vehicles_balanced(&self) -> bool {
        self.vehicles_not_departed
            + self.vehicles_entry_wait
            + self.vehicles_on_road
            + self.vehicles_off_road
            + self.vehicles_done
            == self.vehicles_total
    }

    pub fn passengers_balanced(&self) -> bool {
        self.passengers_not_departed
            + self.passengers_active
            + self.passengers_done
            + self.passengers_unserved
            == self.passengers_total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnservedReason {
    /// No route or no transit service connects the trip ends.
    NoService,
    /// The on-demand request expired before assignment.
    ExpiredRequest,
    /// Still traveling (or waiting) when the horizon ended.
    NotCompleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unserved {
    pub person_id: u64,
    pub reason: UnservedReason,
}

/// Everything one supply run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trajectories: Vec<TrajectoryRecord>,
    pub segment_stats: Vec<SegmentStatRow>,
    pub events: Vec<ControllerEvent>,
    pub unserved: Vec<Unserved>,
    pub conservation: Vec<ConservationRow>,
    /// Travel times experienced on each (segment, entry period).
    pub observed_tt: TravelTimeTable,
    /// Largest per-step displacement over `v_f * dt` observed for any entity.
    pub max_step_displacement_ratio: f64,
    pub horizon_s: u32,
    pub stats_interval_s: u32,
}

impl SimOutput {
    /// Completed passenger trips (all legs closed before the horizon).
    pub fn completed_passengers(&self) -> impl Iterator<Item = &TrajectoryRecord> {
        let horizon = self.horizon_s as f64;
        self.trajectories.iter().filter(move |t| {
            t.kind == EntityKind::Passenger && t.end_s().map_or(false, |e| e < horizon)
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    entity_id: u64,
    kind: EntityKind,
    leg: usize,
    mode: TravelMode,
    status: LegStatus,
    origin_node: u64,
    dest_node: u64,
    start_s: f64,
    end_s: f64,
    distance_km: f64,
}

pub fn save_trajectories(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in records {
        for (i, leg) in rec.legs.iter().enumerate() {
            w.serialize(TrajectoryRow {
                entity_id: rec.entity_id,
                kind: rec.kind,
                leg: i,
                mode: leg.mode,
                status: leg.status,
                origin_node: leg.origin.0,
                dest_node: leg.destination.0,
                start_s: leg.start_s,
                end_s: leg.end_s,
                distance_km: leg.distance_km,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut records: Vec<TrajectoryRecord> = Vec::new();
    for row in reader.deserialize::<TrajectoryRow>() {
        let row = row?;
        let leg = TrajectoryLeg {
            mode: row.mode,
            status: row.status,
            origin: NodeId(row.origin_node),
            destination: NodeId(row.dest_node),
            start_s: row.start_s,
            end_s: row.end_s,
            distance_km: row.distance_km,
        };
        match records
            .last_mut()
            .filter(|r| r.entity_id == row.entity_id && r.kind == row.kind)
        {
            Some(rec) => rec.legs.push(leg),
            None => records.push(TrajectoryRecord {
                entity_id: row.entity_id,
                kind: row.kind,
                legs: vec![leg],
            }),
        }
    }
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentStatCsvRow {
    interval_start_s: u32,
    segment_id: u64,
    k_veh_km: f64,
    q_veh_h: f64,
    v_kmh: f64,
}

pub fn save_segment_stats(rows: &[SegmentStatRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(SegmentStatCsvRow {
            interval_start_s: r.interval_start_s,
            segment_id: r.segment_id.0,
            k_veh_km: r.k_veh_km,
            q_veh_h: r.q_veh_h,
            v_kmh: r.v_kmh,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_segment_stats(path: &Path) -> Result<Vec<SegmentStatRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<SegmentStatCsvRow>() {
        let r = row?;
        rows.push(SegmentStatRow {
            interval_start_s: r.interval_start_s,
            segment_id: SegmentId(r.segment_id),
            k_veh_km: r.k_veh_km,
            q_veh_h: r.q_veh_h,
            v_kmh: r.v_kmh,
        });
    }
    Ok(rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    time_s: f64,
    event: String,
    fleet: FleetKind,
    request_id: String,
    vehicle_id: String,
    node: String,
}

fn opt_to_str(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn str_to_opt(s: &str, file: &str) -> Result<Option<u64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Parse {
        file: file.to_string(),
        line: 0,
        message: format!("bad id `{s}`"),
    })
}

pub fn save_events(events: &[ControllerEvent], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in events {
        w.serialize(EventRow {
            time_s: e.time_s,
            event: e.event.as_str().to_string(),
            fleet: e.fleet,
            request_id: opt_to_str(e.request_id),
            vehicle_id: opt_to_str(e.vehicle_id),
            node: opt_to_str(e.node),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_events(path: &Path) -> Result<Vec<ControllerEvent>> {
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let mut events = Vec::new();
    for row in reader.deserialize::<EventRow>() {
        let r = row?;
        let event = match r.event.as_str() {
            "REQUEST" => EventKind::Request,
            "ASSIGN" => EventKind::Assign,
            "PICKUP" => EventKind::Pickup,
            "DROPOFF" => EventKind::Dropoff,
            "EXPIRE" => EventKind::Expire,
            "REBALANCE" => EventKind::Rebalance,
            other => {
                return Err(Error::Parse {
                    file,
                    line: 0,
                    message: format!("unknown event `{other}`"),
                })
            }
        };
        events.push(ControllerEvent {
            time_s: r.time_s,
            event,
            fleet: r.fleet,
            request_id: str_to_opt(&r.request_id, &file)?,
            vehicle_id: str_to_opt(&r.vehicle_id, &file)?,
            node: str_to_opt(&r.node, &file)?,
        });
    }
    Ok(events)
}

#[derive(Debug, Serialize, Deserialize)]
struct UnservedRow {
    person_id: u64,
    reason: UnservedReason,
}

pub fn save_unserved(unserved: &[Unserved], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for u in unserved {
        w.serialize(UnservedRow { person_id: u.person_id, reason: u.reason })?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_conservation(rows: &[ConservationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
