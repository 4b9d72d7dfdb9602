//! CSV persistence for networks.
//!
//! A network directory holds `nodes.csv`, `links.csv` and `segments.csv`,
//! plus an optional `zones.csv` with demand weights (weight defaults to 1).
//! Segment order within a link follows row order in `segments.csv`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Link, LinkId, Network, Node, NodeId, Segment, SegmentId, Zone, ZoneId};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct NodeRow {
    id: u64,
    x_m: f64,
    y_m: f64,
    zone: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LinkRow {
    id: u64,
    from_node: u64,
    to_node: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRow {
    id: u64,
    link_id: u64,
    length_m: f64,
    lanes: u32,
    v_f_kmh: f64,
    k_jam_veh_km_lane: f64,
    cap_veh_h: f64,
    alpha: f64,
    beta: f64,
    min_speed_kmh: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ZoneRow {
    id: u64,
    demand_weight: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file_name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        file: file_name.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for result in reader.deserialize() {
        match result {
            Ok(row) => rows.push(row),
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line())
                    .unwrap_or_default();
                return Err(Error::Parse {
                    file: file_name,
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

/// Loads a network from `nodes.csv`, `links.csv`, `segments.csv` and the
/// optional `zones.csv` in `dir`.
pub fn load_network(dir: &Path) -> Result<Network> {
    let node_rows: Vec<NodeRow> = read_rows(&dir.join("nodes.csv"))?;
    let link_rows: Vec<LinkRow> = read_rows(&dir.join("links.csv"))?;
    let segment_rows: Vec<SegmentRow> = read_rows(&dir.join("segments.csv"))?;
    let zone_weights: BTreeMap<u64, f64> = if dir.join("zones.csv").exists() {
        read_rows::<ZoneRow>(&dir.join("zones.csv"))?
            .into_iter()
            .map(|z| (z.id, z.demand_weight))
            .collect()
    } else {
        BTreeMap::new()
    };

    let nodes: Vec<Node> = node_rows
        .into_iter()
        .map(|r| Node {
            id: NodeId(r.id),
            x_m: r.x_m,
            y_m: r.y_m,
            zone: ZoneId(r.zone),
        })
        .collect();

    // Segment order within a link = row order in segments.csv.
    let mut link_segments: BTreeMap<u64, Vec<SegmentId>> = BTreeMap::new();
    let segments: Vec<Segment> = segment_rows
        .into_iter()
        .map(|r| {
            link_segments
                .entry(r.link_id)
                .or_default()
                .push(SegmentId(r.id));
            Segment {
                id: SegmentId(r.id),
                link_id: LinkId(r.link_id),
                length_m: r.length_m,
                lanes: r.lanes,
                free_flow_kmh: r.v_f_kmh,
                jam_density_veh_km_lane: r.k_jam_veh_km_lane,
                output_capacity_veh_h: r.cap_veh_h,
                sd_alpha: r.alpha,
                sd_beta: r.beta,
                min_speed_kmh: r.min_speed_kmh,
            }
        })
        .collect();

    let links: Vec<Link> = link_rows
        .into_iter()
        .map(|r| Link {
            id: LinkId(r.id),
            from: NodeId(r.from_node),
            to: NodeId(r.to_node),
            segments: link_segments.remove(&r.id).unwrap_or_default(),
        })
        .collect();

    let zones = build_zones(&nodes, &zone_weights);
    Network::new(nodes, links, segments, zones)
}

/// Groups nodes into zones; the centroid is the member node closest to the
/// mean coordinate (lowest id on ties).
pub(crate) fn build_zones(nodes: &[Node], weights: &BTreeMap<u64, f64>) -> Vec<Zone> {
    let mut members: BTreeMap<ZoneId, Vec<&Node>> = BTreeMap::new();
    for node in nodes {
        members.entry(node.zone).or_default().push(node);
    }
    members
        .into_iter()
        .map(|(id, nodes)| {
            let cx = nodes.iter().map(|n| n.x_m).sum::<f64>() / nodes.len() as f64;
            let cy = nodes.iter().map(|n| n.y_m).sum::<f64>() / nodes.len() as f64;
            let centroid = nodes
                .iter()
                .map(|n| {
                    let d2 = (n.x_m - cx).powi(2) + (n.y_m - cy).powi(2);
                    (d2, n.id)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, id)| id)
                .expect("zone has members");
            Zone {
                id,
                nodes: nodes.iter().map(|n| n.id).collect(),
                demand_weight: weights.get(&id.0).copied().unwrap_or(1.0),
                centroid,
            }
        })
        .collect()
}

/// Writes the network back out as the CSV set read by [`load_network`].
pub fn save_network(net: &Network, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("nodes.csv"))?;
    for n in net.nodes() {
        w.serialize(NodeRow {
            id: n.id.0,
            x_m: n.x_m,
            y_m: n.y_m,
            zone: n.zone.0,
        })?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("links.csv"))?;
    for l in net.links() {
        w.serialize(LinkRow {
            id: l.id.0,
            from_node: l.from.0,
            to_node: l.to.0,
        })?;
    }
    w.flush()?;

    // Emit segments grouped by link so row order encodes within-link order.
    let mut w = csv::Writer::from_path(dir.join("segments.csv"))?;
    for l in net.links() {
        for sid in &l.segments {
            let s = &net.segments()[net.segment_index(*sid).expect("segment exists")];
            w.serialize(SegmentRow {
                id: s.id.0,
                link_id: s.link_id.0,
                length_m: s.length_m,
                lanes: s.lanes,
                v_f_kmh: s.free_flow_kmh,
                k_jam_veh_km_lane: s.jam_density_veh_km_lane,
                cap_veh_h: s.output_capacity_veh_h,
                alpha: s.sd_alpha,
                beta: s.sd_beta,
                min_speed_kmh: s.min_speed_kmh,
            })?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("zones.csv"))?;
    for z in net.zones() {
        w.serialize(ZoneRow {
            id: z.id.0,
            demand_weight: z.demand_weight,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{grid_network, GridSpec};

    #[test]
    fn network_csv_round_trip() {
        let net = grid_network(&GridSpec::default());
        let dir = tempfile::tempdir().unwrap();
        save_network(&net, dir.path()).unwrap();
        let loaded = load_network(dir.path()).unwrap();
        assert_eq!(loaded.nodes().len(), net.nodes().len());
        assert_eq!(loaded.links().len(), net.links().len());
        assert_eq!(loaded.segments().len(), net.segments().len());
        assert!((loaded.total_length_km() - net.total_length_km()).abs() < 1e-12);
        assert!(loaded.validate().is_valid());
    }

    #[test]
    fn malformed_segment_row_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let net = grid_network(&GridSpec::default());
        save_network(&net, dir.path()).unwrap();
        std::fs::write(
            dir.path().join("segments.csv"),
            "id,link_id,length_m,lanes,v_f_kmh,k_jam_veh_km_lane,cap_veh_h,alpha,beta,min_speed_kmh\n1,1,oops,1,50,120,900,1,1.5,5\n",
        )
        .unwrap();
        let err = load_network(dir.path()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
