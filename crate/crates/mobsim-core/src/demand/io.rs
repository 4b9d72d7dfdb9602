//! Trip table CSV persistence.
//!
//! `trips.csv` columns: person_id, origin_node, dest_node, departure_s,
//! mode, service_type, activity. Structurally malformed files fail hard;
//! rows that parse but break trip invariants are collected as rejected rows
//! with their line numbers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActivityType, ServiceType, Trip, TravelMode};
use crate::error::{Error, Result};
use crate::network::NodeId;

#[derive(Debug, Serialize, Deserialize)]
struct TripRow {
    person_id: u64,
    origin_node: u64,
    dest_node: u64,
    departure_s: u32,
    mode: TravelMode,
    service_type: ServiceType,
    activity: ActivityType,
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct TripTable {
    pub trips: Vec<Trip>,
    pub rejected: Vec<RejectedRow>,
}

pub fn load_trips(path: &Path) -> Result<TripTable> {
    let file_name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        file: file_name.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| Error::Parse {
        file: file_name.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    let expected = [
        "person_id",
        "origin_node",
        "dest_node",
        "departure_s",
        "mode",
        "service_type",
        "activity",
    ];
    if headers.iter().ne(expected) {
        return Err(Error::Parse {
            file: file_name,
            line: 1,
            message: format!("unexpected header {headers:?}"),
        });
    }

    let headers = headers.clone();
    let mut table = TripTable::default();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or_default();
            Error::Parse { file: file_name.clone(), line, message: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or_default();
        let row: TripRow = record.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            file: file_name.clone(),
            line,
            message: e.to_string(),
        })?;
        let trip = Trip {
            person_id: row.person_id,
            origin: NodeId(row.origin_node),
            destination: NodeId(row.dest_node),
            departure_s: row.departure_s,
            mode: row.mode,
            service_type: row.service_type,
            activity: row.activity,
        };
        match trip.check() {
            Ok(()) => table.trips.push(trip),
            Err(e) => table.rejected.push(RejectedRow {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok(table)
}

pub fn save_trips(trips: &[Trip], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for t in trips {
        writer.serialize(TripRow {
            person_id: t.person_id,
            origin_node: t.origin.0,
            dest_node: t.destination.0,
            departure_s: t.departure_s,
            mode: t.mode,
            service_type: t.service_type,
            activity: t.activity,
        })?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "person_id,origin_node,dest_node,departure_s,mode,service_type,activity\n";

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), content).unwrap();
        file
    }

    #[test]
    fn empty_file_with_header_is_empty_table() {
        let file = write_csv(HEADER);
        let table = load_trips(file.path()).unwrap();
        assert!(table.trips.is_empty());
        assert!(table.rejected.is_empty());
    }

    #[test]
    fn valid_rows_load() {
        let file = write_csv(&format!(
            "{HEADER}1,10,20,3600,Car/Carpool,none,Work\n2,11,21,7200,AMOD,shared,Shopping\n3,12,22,60,Bus,none,Education\n"
        ));
        let table = load_trips(file.path()).unwrap();
        assert_eq!(table.trips.len(), 3);
        assert_eq!(table.trips[1].mode, TravelMode::Amod);
        assert_eq!(table.trips[1].service_type, ServiceType::Shared);
    }

    #[test]
    fn out_of_range_departure_is_rejected_with_line() {
        let file = write_csv(&format!(
            "{HEADER}1,10,20,3600,Taxi,none,Work\n2,11,21,90000,Taxi,none,Work\n"
        ));
        let table = load_trips(file.path()).unwrap();
        assert_eq!(table.trips.len(), 1);
        assert_eq!(table.rejected.len(), 1);
        assert_eq!(table.rejected[0].line, 3);
    }

    #[test]
    fn malformed_header_fails() {
        let file = write_csv("person,origin_node\n1,2\n");
        assert!(matches!(
            load_trips(file.path()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn round_trip_preserves_rows() {
        let trips = vec![
            Trip {
                person_id: 5,
                origin: NodeId(1),
                destination: NodeId(2),
                departure_s: 100,
                mode: TravelMode::Mod,
                service_type: ServiceType::Single,
                activity: ActivityType::Other,
            },
            Trip {
                person_id: 6,
                origin: NodeId(3),
                destination: NodeId(4),
                departure_s: 200,
                mode: TravelMode::Freight,
                service_type: ServiceType::None,
                activity: ActivityType::Work,
            },
        ];
        let file = tempfile::NamedTempFile::new().unwrap();
        save_trips(&trips, file.path()).unwrap();
        let table = load_trips(file.path()).unwrap();
        assert_eq!(table.trips, trips);
    }
}
