//! Scheduled transit: headway-operated bus lines on the road network and a
//! timetable-based rail layer that runs off it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NodeId;

/// Headway-operated bus line over an ordered stop list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusLine {
    pub id: u64,
    pub stops: Vec<NodeId>,
    pub headway_min: f64,
    pub first_dispatch_s: f64,
    pub last_dispatch_s: f64,
}

impl BusLine {
    pub fn validate(&self) -> Result<()> {
        if self.stops.len() < 2 {
            return Err(Error::invalid_config(
                format!("bus_line.{}", self.id),
                "a line needs at least two stops",
            ));
        }
        if !(self.headway_min > 0.0) {
            return Err(Error::invalid_config(
                format!("bus_line.{}", self.id),
                "headway must be > 0",
            ));
        }
        if self.last_dispatch_s < self.first_dispatch_s {
            return Err(Error::invalid_config(
                format!("bus_line.{}", self.id),
                "last dispatch before first dispatch",
            ));
        }
        Ok(())
    }

    /// Dispatch clock times: every headway tick from the first through the
    /// last dispatch time inclusive.
    pub fn dispatch_times(&self) -> Vec<f64> {
        let mut times = Vec::new();
        let headway_s = self.headway_min * 60.0;
        let mut t = self.first_dispatch_s;
        let mut k = 0u64;
        while t <= self.last_dispatch_s + 1e-9 {
            times.push(t);
            k += 1;
            t = self.first_dispatch_s + k as f64 * headway_s;
        }
        times
    }

    /// Positions of `node` in the stop list.
    pub fn stop_positions(&self, node: NodeId) -> impl Iterator<Item = usize> + '_ {
        self.stops
            .iter()
            .enumerate()
            .filter(move |(_, n)| **n == node)
            .map(|(i, _)| i)
    }
}

/// Dwell-time rule: `max(min_dwell, boarding_s_per_passenger * boardings)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BusConfig {
    pub min_dwell_s: f64,
    pub boarding_s_per_passenger: f64,
    pub seats: u32,
}

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig {
            min_dwell_s: 10.0,
            boarding_s_per_passenger: 2.0,
            seats: 60,
        }
    }
}

impl BusConfig {
    pub fn dwell_s(&self, boardings: usize) -> f64 {
        (self.boarding_s_per_passenger * boardings as f64).max(self.min_dwell_s)
    }
}

/// Rail line operated at a fixed headway; hop run times and distances are
/// part of the timetable, so trains never touch the road network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RailLine {
    pub id: u64,
    pub stations: Vec<NodeId>,
    /// Scheduled run time between consecutive stations (len = stations-1).
    pub runtimes_s: Vec<f64>,
    /// Track distance between consecutive stations (len = stations-1).
    pub hops_km: Vec<f64>,
    pub headway_min: f64,
    pub first_dispatch_s: f64,
    pub last_dispatch_s: f64,
}

impl RailLine {
    pub fn validate(&self) -> Result<()> {
        if self.stations.len() < 2 {
            return Err(Error::invalid_config(
                format!("rail_line.{}", self.id),
                "a line needs at least two stations",
            ));
        }
        if self.runtimes_s.len() != self.stations.len() - 1
            || self.hops_km.len() != self.stations.len() - 1
        {
            return Err(Error::invalid_config(
                format!("rail_line.{}", self.id),
                "runtimes and hop distances must have one entry per station pair",
            ));
        }
        if !(self.headway_min > 0.0) {
            return Err(Error::invalid_config(
                format!("rail_line.{}", self.id),
                "headway must be > 0",
            ));
        }
        Ok(())
    }

    fn station_pos(&self, node: NodeId) -> Option<usize> {
        self.stations.iter().position(|s| *s == node)
    }

    /// Scheduled offset of a station from the line's dispatch time.
    fn offset_s(&self, station_pos: usize) -> f64 {
        self.runtimes_s[..station_pos].iter().sum()
    }
}

/// Resolved rail leg: produced by the timetable, consumed as passenger legs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RailLeg {
    pub line_id: u64,
    pub departure_s: f64,
    pub arrival_s: f64,
    pub wait_s: f64,
    pub distance_km: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RailTimetable {
    pub lines: Vec<RailLine>,
}

impl RailTimetable {
    /// Next service from `origin` to `destination` boarding at
    /// `boarding_s`. `Ok(None)` means the stations are served but no train
    /// departs before the end of service (an unserved leg); `Err` means no
    /// line connects them at all.
    pub fn leg(
        &self,
        origin: NodeId,
        destination: NodeId,
        boarding_s: f64,
    ) -> Result<Option<RailLeg>> {
        let mut best: Option<RailLeg> = None;
        let mut connected = false;
        for line in &self.lines {
            let (Some(o), Some(d)) = (line.station_pos(origin), line.station_pos(destination))
            else {
                continue;
            };
            if o >= d {
                continue;
            }
            connected = true;
            let offset = line.offset_s(o);
            let headway_s = line.headway_min * 60.0;
            // First departure from this station at or after boarding.
            let k = ((boarding_s - line.first_dispatch_s - offset) / headway_s).ceil().max(0.0);
            let dispatch = line.first_dispatch_s + k * headway_s;
            if dispatch > line.last_dispatch_s + 1e-9 {
                continue;
            }
            let departure = dispatch + offset;
            let run: f64 = line.runtimes_s[o..d].iter().sum();
            let dist: f64 = line.hops_km[o..d].iter().sum();
            let leg = RailLeg {
                line_id: line.id,
                departure_s: departure,
                arrival_s: departure + run,
                wait_s: departure - boarding_s,
                distance_km: dist,
            };
            if best.map_or(true, |b| leg.arrival_s < b.arrival_s) {
                best = Some(leg);
            }
        }
        if best.is_none() && !connected {
            return Err(Error::domain(format!(
                "no rail line serves {origin} -> {destination}"
            )));
        }
        Ok(best)
    }

    /// Mean wait proxy for skims: half the mean headway over all lines.
    pub fn mean_half_headway_min(&self) -> Option<f64> {
        if self.lines.is_empty() {
            return None;
        }
        Some(self.lines.iter().map(|l| l.headway_min).sum::<f64>() / self.lines.len() as f64 / 2.0)
    }
}

/// Bus and rail supply for one scenario.
#[derive(Debug, Clone, Default)]
pub struct TransitSystem {
    pub bus_lines: Vec<BusLine>,
    pub bus_cfg: BusConfig,
    pub rail: RailTimetable,
}

impl TransitSystem {
    pub fn validate(&self) -> Result<()> {
        for line in &self.bus_lines {
            line.validate()?;
        }
        for line in &self.rail.lines {
            line.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BusLineRow {
    line_id: u64,
    headway_min: f64,
    first_dispatch_s: f64,
    last_dispatch_s: f64,
    /// Stop node ids joined with ';'.
    stops: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RailLineRow {
    line_id: u64,
    headway_min: f64,
    first_dispatch_s: f64,
    last_dispatch_s: f64,
    stations: String,
    runtimes_s: String,
    hops_km: String,
}

fn split_list<T: std::str::FromStr>(s: &str, file: &str, line: u64) -> Result<Vec<T>> {
    s.split(';')
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.trim().parse::<T>().map_err(|_| Error::Parse {
                file: file.to_string(),
                line,
                message: format!("bad list entry `{p}`"),
            })
        })
        .collect()
}

pub fn load_bus_lines(path: &Path) -> Result<Vec<BusLine>> {
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line_no = record.position().map(|p| p.line()).unwrap_or_default();
        let row: BusLineRow = record.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            file: file.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        let stops: Vec<u64> = split_list(&row.stops, &file, line_no)?;
        let line = BusLine {
            id: row.line_id,
            stops: stops.into_iter().map(NodeId).collect(),
            headway_min: row.headway_min,
            first_dispatch_s: row.first_dispatch_s,
            last_dispatch_s: row.last_dispatch_s,
        };
        line.validate()?;
        lines.push(line);
    }
    Ok(lines)
}

pub fn save_bus_lines(lines: &[BusLine], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in lines {
        w.serialize(BusLineRow {
            line_id: l.id,
            headway_min: l.headway_min,
            first_dispatch_s: l.first_dispatch_s,
            last_dispatch_s: l.last_dispatch_s,
            stops: l.stops.iter().map(|s| s.0.to_string()).collect::<Vec<_>>().join(";"),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_rail_lines(path: &Path) -> Result<RailTimetable> {
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line_no = record.position().map(|p| p.line()).unwrap_or_default();
        let row: RailLineRow = record.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            file: file.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        let line = RailLine {
            id: row.line_id,
            stations: split_list::<u64>(&row.stations, &file, line_no)?
                .into_iter()
                .map(NodeId)
                .collect(),
            runtimes_s: split_list(&row.runtimes_s, &file, line_no)?,
            hops_km: split_list(&row.hops_km, &file, line_no)?,
            headway_min: row.headway_min,
            first_dispatch_s: row.first_dispatch_s,
            last_dispatch_s: row.last_dispatch_s,
        };
        line.validate()?;
        lines.push(line);
    }
    Ok(RailTimetable { lines })
}

pub fn save_rail_lines(timetable: &RailTimetable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in &timetable.lines {
        w.serialize(RailLineRow {
            line_id: l.id,
            headway_min: l.headway_min,
            first_dispatch_s: l.first_dispatch_s,
            last_dispatch_s: l.last_dispatch_s,
            stations: l.stations.iter().map(|s| s.0.to_string()).collect::<Vec<_>>().join(";"),
            runtimes_s: l.runtimes_s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"),
            hops_km: l.hops_km.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_dispatches_per_hour_at_ten_minutes() {
        let line = BusLine {
            id: 1,
            stops: vec![NodeId(1), NodeId(2)],
            headway_min: 10.0,
            first_dispatch_s: 28_800.0,
            last_dispatch_s: 28_800.0 + 3599.0,
        };
        assert_eq!(line.dispatch_times().len(), 6);
    }

    #[test]
    fn single_dispatch_when_first_equals_last() {
        let line = BusLine {
            id: 1,
            stops: vec![NodeId(1), NodeId(2)],
            headway_min: 10.0,
            first_dispatch_s: 28_800.0,
            last_dispatch_s: 28_800.0,
        };
        assert_eq!(line.dispatch_times(), vec![28_800.0]);
    }

    #[test]
    fn dwell_floor_applies_without_boardings() {
        let cfg = BusConfig::default();
        assert_eq!(cfg.dwell_s(0), cfg.min_dwell_s);
        assert_eq!(cfg.dwell_s(20), 40.0);
    }

    fn rail() -> RailTimetable {
        RailTimetable {
            lines: vec![RailLine {
                id: 1,
                stations: vec![NodeId(1), NodeId(2), NodeId(3)],
                runtimes_s: vec![120.0, 180.0],
                hops_km: vec![2.0, 3.0],
                headway_min: 5.0,
                first_dispatch_s: 0.0,
                last_dispatch_s: 3600.0,
            }],
        }
    }

    #[test]
    fn boarding_at_departure_has_zero_wait() {
        let leg = rail().leg(NodeId(1), NodeId(3), 300.0).unwrap().unwrap();
        assert_eq!(leg.wait_s, 0.0);
        assert_eq!(leg.arrival_s, 600.0);
        assert_eq!(leg.distance_km, 5.0);
    }

    #[test]
    fn boarding_one_minute_late_waits_four() {
        let leg = rail().leg(NodeId(1), NodeId(3), 60.0).unwrap().unwrap();
        assert!((leg.wait_s - 240.0).abs() < 1e-9);
    }

    #[test]
    fn mid_line_station_offset_counts() {
        // Departures from station 2 occur at dispatch + 120 s.
        let leg = rail().leg(NodeId(2), NodeId(3), 130.0).unwrap().unwrap();
        assert!((leg.departure_s - 420.0).abs() < 1e-9);
        assert!((leg.wait_s - 290.0).abs() < 1e-9);
    }

    #[test]
    fn after_last_train_is_unserved() {
        assert!(rail().leg(NodeId(1), NodeId(3), 3601.0).unwrap().is_none());
    }

    #[test]
    fn unconnected_stations_error() {
        assert!(rail().leg(NodeId(3), NodeId(1), 0.0).is_err());
    }
}
