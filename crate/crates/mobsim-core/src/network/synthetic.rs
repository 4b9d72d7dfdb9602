//! Synthetic rectangular-grid networks for tests, benchmarks and demos.

use std::collections::BTreeMap;

use super::{Link, LinkId, Network, Node, NodeId, Segment, SegmentId, ZoneId};
use crate::network::io::build_zones;

/// Parameters of a grid network: `rows x cols` nodes at `spacing_m`, one
/// bidirectional link pair between orthogonal neighbors, one segment per
/// link, zones of `zone_block x zone_block` nodes.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub zone_block: usize,
    pub lanes: u32,
    pub free_flow_kmh: f64,
    pub jam_density_veh_km_lane: f64,
    pub capacity_veh_h: f64,
    pub sd_alpha: f64,
    pub sd_beta: f64,
    pub min_speed_kmh: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 4,
            cols: 4,
            spacing_m: 500.0,
            zone_block: 2,
            lanes: 1,
            free_flow_kmh: 50.0,
            jam_density_veh_km_lane: 120.0,
            capacity_veh_h: 900.0,
            sd_alpha: 1.0,
            sd_beta: 1.5,
            min_speed_kmh: 5.0,
        }
    }
}

impl GridSpec {
    pub fn node_id(&self, row: usize, col: usize) -> NodeId {
        NodeId((row * self.cols + col) as u64)
    }
}

pub fn grid_network(spec: &GridSpec) -> Network {
    assert!(spec.rows >= 1 && spec.cols >= 1, "grid must be non-empty");
    assert!(spec.zone_block >= 1, "zone_block must be >= 1");
    let zone_cols = spec.cols.div_ceil(spec.zone_block);

    let mut nodes = Vec::with_capacity(spec.rows * spec.cols);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let zone = (r / spec.zone_block) * zone_cols + c / spec.zone_block;
            nodes.push(Node {
                id: spec.node_id(r, c),
                x_m: c as f64 * spec.spacing_m,
                y_m: r as f64 * spec.spacing_m,
                zone: ZoneId(zone as u64),
            });
        }
    }

    let mut links = Vec::new();
    let mut segments = Vec::new();
    let mut next_id = 0u64;
    let mut add_link = |from: NodeId, to: NodeId, links: &mut Vec<Link>, segments: &mut Vec<Segment>| {
        next_id += 1;
        let link_id = LinkId(next_id);
        let seg_id = SegmentId(next_id);
        links.push(Link {
            id: link_id,
            from,
            to,
            segments: vec![seg_id],
        });
        segments.push(Segment {
            id: seg_id,
            link_id,
            length_m: spec.spacing_m,
            lanes: spec.lanes,
            free_flow_kmh: spec.free_flow_kmh,
            jam_density_veh_km_lane: spec.jam_density_veh_km_lane,
            output_capacity_veh_h: spec.capacity_veh_h,
            sd_alpha: spec.sd_alpha,
            sd_beta: spec.sd_beta,
            min_speed_kmh: spec.min_speed_kmh,
        });
    };

    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let here = spec.node_id(r, c);
            if c + 1 < spec.cols {
                let right = spec.node_id(r, c + 1);
                add_link(here, right, &mut links, &mut segments);
                add_link(right, here, &mut links, &mut segments);
            }
            if r + 1 < spec.rows {
                let down = spec.node_id(r + 1, c);
                add_link(here, down, &mut links, &mut segments);
                add_link(down, here, &mut links, &mut segments);
            }
        }
    }

    let zones = build_zones(&nodes, &BTreeMap::new());
    Network::new(nodes, links, segments, zones).expect("grid network is well-formed")
}
