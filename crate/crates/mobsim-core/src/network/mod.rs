//! Road network data model: nodes, links, segments and zones, plus the
//! segment-level speed–density relation used by the supply engine.
//!
//! Links are directed and decompose into one or more segments; segments
//! carry all flow-relevant attributes (lanes, jam density, capacity,
//! speed–density shape) and are the spatial unit of every sensor statistic.

mod io;
mod synthetic;

pub use io::{load_network, save_network};
pub use synthetic::{grid_network, GridSpec};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(NodeId);
id_type!(LinkId);
id_type!(SegmentId);
id_type!(ZoneId);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub x_m: f64,
    pub y_m: f64,
    pub zone: ZoneId,
}

/// Directed link between two nodes, decomposed into ordered segments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub segments: Vec<SegmentId>,
}

/// Directed road element carrying density/flow state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub link_id: LinkId,
    pub length_m: f64,
    pub lanes: u32,
    pub free_flow_kmh: f64,
    /// Jam density per lane (veh/km/lane).
    pub jam_density_veh_km_lane: f64,
    /// Exit (discharge) capacity in veh/h.
    pub output_capacity_veh_h: f64,
    /// Shape pair (alpha, beta) of the speed–density curve.
    pub sd_alpha: f64,
    pub sd_beta: f64,
    pub min_speed_kmh: f64,
}

impl Segment {
    pub fn length_km(&self) -> f64 {
        self.length_m / 1000.0
    }

    /// Jam density over all lanes (veh/km).
    pub fn jam_density_total(&self) -> f64 {
        self.jam_density_veh_km_lane * self.lanes as f64
    }

    /// Maximum number of vehicles the segment can physically store.
    pub fn max_vehicles(&self) -> f64 {
        self.jam_density_total() * self.length_km()
    }

    pub fn free_flow_traversal_s(&self) -> f64 {
        self.length_m / (self.free_flow_kmh / 3.6)
    }

    /// Speed (km/h) at the given density (veh/km, all lanes).
    ///
    /// v = v_f * (1 - (k / k_jam)^alpha)^beta, floored at `min_speed_kmh`;
    /// density is clamped to [0, jam]. Nonincreasing in density, equal to
    /// the free-flow speed at zero density and the floor speed at jam.
    pub fn speed_from_density(&self, density_veh_km: f64) -> f64 {
        let jam = self.jam_density_total();
        let k = density_veh_km.clamp(0.0, jam);
        let ratio = if jam > 0.0 { k / jam } else { 1.0 };
        let v = self.free_flow_kmh * (1.0 - ratio.powf(self.sd_alpha)).powf(self.sd_beta);
        v.max(self.min_speed_kmh)
    }

    fn check(&self, report: &mut ValidationReport) {
        let ent = format!("segment {}", self.id);
        if !(self.length_m > 0.0) {
            report.push(ViolationKind::SegmentGeometry, &ent, "length must be > 0");
        }
        if self.lanes < 1 {
            report.push(ViolationKind::SegmentGeometry, &ent, "lane_count must be >= 1");
        }
        if !(self.output_capacity_veh_h > 0.0) {
            report.push(ViolationKind::SegmentCapacity, &ent, "output_capacity must be > 0");
        }
        if !(self.min_speed_kmh > 0.0 && self.min_speed_kmh < self.free_flow_kmh) {
            report.push(
                ViolationKind::SegmentSpeed,
                &ent,
                "min_speed must satisfy 0 < min_speed < free_flow_speed",
            );
        }
        if !(self.jam_density_veh_km_lane > 0.0) {
            report.push(ViolationKind::SegmentSpeed, &ent, "jam_density must be > 0");
        }
        if !(self.sd_alpha > 0.0 && self.sd_beta > 0.0) {
            report.push(
                ViolationKind::SegmentSpeed,
                &ent,
                "speed-density shape (alpha, beta) must be positive",
            );
        }
    }
}

/// Group of nodes used for demand sampling and rebalancing hot-spots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Zone {
    pub id: ZoneId,
    pub nodes: Vec<NodeId>,
    pub demand_weight: f64,
    /// Representative node used for zone-to-zone skims and cruising targets.
    pub centroid: NodeId,
}

#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
    links: Vec<Link>,
    segments: Vec<Segment>,
    zones: Vec<Zone>,
    total_length_km: f64,
    node_pos: BTreeMap<NodeId, usize>,
    link_pos: BTreeMap<LinkId, usize>,
    segment_pos: BTreeMap<SegmentId, usize>,
    zone_pos: BTreeMap<ZoneId, usize>,
    /// Outgoing link indices per node index.
    out_links: Vec<Vec<usize>>,
}

impl Network {
    /// Assembles a network and its lookup indices. Referential integrity
    /// (ids resolving to declared entities) is enforced here; value-level
    /// invariants are reported by [`Network::validate`].
    pub fn new(
        nodes: Vec<Node>,
        links: Vec<Link>,
        segments: Vec<Segment>,
        zones: Vec<Zone>,
    ) -> Result<Network> {
        let node_pos: BTreeMap<_, _> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let link_pos: BTreeMap<_, _> = links.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        let segment_pos: BTreeMap<_, _> =
            segments.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        let zone_pos: BTreeMap<_, _> = zones.iter().enumerate().map(|(i, z)| (z.id, i)).collect();
        if node_pos.len() != nodes.len() {
            return Err(Error::domain("duplicate node ids"));
        }
        if link_pos.len() != links.len() {
            return Err(Error::domain("duplicate link ids"));
        }
        if segment_pos.len() != segments.len() {
            return Err(Error::domain("duplicate segment ids"));
        }
        if zone_pos.len() != zones.len() {
            return Err(Error::domain("duplicate zone ids"));
        }
        for link in &links {
            for end in [link.from, link.to] {
                if !node_pos.contains_key(&end) {
                    return Err(Error::domain(format!(
                        "link {} references unknown node {end}",
                        link.id
                    )));
                }
            }
            for seg in &link.segments {
                if !segment_pos.contains_key(seg) {
                    return Err(Error::domain(format!(
                        "link {} references unknown segment {seg}",
                        link.id
                    )));
                }
            }
        }
        for seg in &segments {
            if !link_pos.contains_key(&seg.link_id) {
                return Err(Error::domain(format!(
                    "segment {} references unknown link {}",
                    seg.id, seg.link_id
                )));
            }
        }
        for node in &nodes {
            if !zone_pos.contains_key(&node.zone) {
                return Err(Error::domain(format!(
                    "node {} references unknown zone {}",
                    node.id, node.zone
                )));
            }
        }
        for zone in &zones {
            if !node_pos.contains_key(&zone.centroid) {
                return Err(Error::domain(format!(
                    "zone {} centroid {} is not a node",
                    zone.id, zone.centroid
                )));
            }
        }
        let mut out_links = vec![Vec::new(); nodes.len()];
        for (i, link) in links.iter().enumerate() {
            out_links[node_pos[&link.from]].push(i);
        }
        let total_length_km: f64 = segments.iter().map(Segment::length_km).sum();
        Ok(Network {
            nodes,
            links,
            segments,
            zones,
            total_length_km,
            node_pos,
            link_pos,
            segment_pos,
            zone_pos,
            out_links,
        })
    }

    /// Total network length L_N in km (sum of segment lengths).
    pub fn total_length_km(&self) -> f64 {
        self.total_length_km
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.node_pos.get(&id).copied()
    }

    pub fn link_index(&self, id: LinkId) -> Option<usize> {
        self.link_pos.get(&id).copied()
    }

    pub fn segment_index(&self, id: SegmentId) -> Option<usize> {
        self.segment_pos.get(&id).copied()
    }

    pub fn zone_index(&self, id: ZoneId) -> Option<usize> {
        self.zone_pos.get(&id).copied()
    }

    pub fn out_links(&self, node_idx: usize) -> &[usize] {
        &self.out_links[node_idx]
    }

    pub fn zone_of_node(&self, id: NodeId) -> Option<ZoneId> {
        self.node_index(id).map(|i| self.nodes[i].zone)
    }

    /// Straight-line distance between two nodes in km.
    pub fn euclid_km(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let na = &self.nodes[self.node_index(a)?];
        let nb = &self.nodes[self.node_index(b)?];
        Some(((na.x_m - nb.x_m).powi(2) + (na.y_m - nb.y_m).powi(2)).sqrt() / 1000.0)
    }

    /// Reports every invariant violation; an empty report means valid.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for seg in &self.segments {
            seg.check(&mut report);
        }
        for link in &self.links {
            if link.segments.is_empty() {
                report.push(
                    ViolationKind::LinkEmpty,
                    &format!("link {}", link.id),
                    "link must decompose into at least one segment",
                );
            }
        }
        for zone in &self.zones {
            if !(zone.demand_weight >= 0.0) {
                report.push(
                    ViolationKind::ZoneWeight,
                    &format!("zone {}", zone.id),
                    "demand_weight must be >= 0",
                );
            }
        }
        let recomputed: f64 = self.segments.iter().map(Segment::length_km).sum();
        let denom = recomputed.abs().max(1e-30);
        if ((self.total_length_km - recomputed) / denom).abs() > 1e-9 {
            report.push(
                ViolationKind::TotalLengthMismatch,
                "network",
                "total_length does not match the sum of segment lengths",
            );
        }
        if !self.is_weakly_connected() {
            report.push(
                ViolationKind::Disconnected,
                "network",
                "graph is not weakly connected",
            );
        }
        report
    }

    fn is_weakly_connected(&self) -> bool {
        if self.nodes.len() <= 1 {
            return true;
        }
        let mut dsu: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(dsu: &mut Vec<usize>, x: usize) -> usize {
            let mut root = x;
            while dsu[root] != root {
                root = dsu[root];
            }
            let mut cur = x;
            while dsu[cur] != root {
                let next = dsu[cur];
                dsu[cur] = root;
                cur = next;
            }
            root
        }
        for link in &self.links {
            let a = find(&mut dsu, self.node_pos[&link.from]);
            let b = find(&mut dsu, self.node_pos[&link.to]);
            dsu[a] = b;
        }
        let root = find(&mut dsu, 0);
        (1..self.nodes.len()).all(|i| find(&mut dsu, i) == root)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    SegmentGeometry,
    SegmentSpeed,
    SegmentCapacity,
    LinkEmpty,
    ZoneWeight,
    TotalLengthMismatch,
    Disconnected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub entity: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, kind: ViolationKind, entity: &str, message: &str) {
        self.violations.push(Violation {
            kind,
            entity: entity.to_string(),
            message: message.to_string(),
        });
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::synthetic::{grid_network, GridSpec};

    fn segment(v_f: f64, k_jam_lane: f64, lanes: u32, alpha: f64, beta: f64, min: f64) -> Segment {
        Segment {
            id: SegmentId(1),
            link_id: LinkId(1),
            length_m: 1000.0,
            lanes,
            free_flow_kmh: v_f,
            jam_density_veh_km_lane: k_jam_lane,
            output_capacity_veh_h: 1800.0,
            sd_alpha: alpha,
            sd_beta: beta,
            min_speed_kmh: min,
        }
    }

    #[test]
    fn speed_at_zero_density_is_free_flow() {
        let seg = segment(60.0, 100.0, 2, 1.0, 1.5, 5.0);
        assert_eq!(seg.speed_from_density(0.0), 60.0);
    }

    #[test]
    fn speed_at_jam_density_is_floor() {
        let seg = segment(60.0, 100.0, 2, 1.0, 1.5, 5.0);
        assert_eq!(seg.speed_from_density(seg.jam_density_total()), 5.0);
        // Clamped above jam as well.
        assert_eq!(seg.speed_from_density(10.0 * seg.jam_density_total()), 5.0);
    }

    #[test]
    fn speed_half_jam_hand_value() {
        // v_f=60, k_jam*lanes=200, alpha=2, beta=1, k=100 -> 60*(1-0.25)=45.
        let seg = segment(60.0, 100.0, 2, 2.0, 1.0, 5.0);
        assert!((seg.speed_from_density(100.0) - 45.0).abs() < 1e-12);
    }

    #[test]
    fn speed_monotone_nonincreasing_sampled() {
        // 1000 density points per segment over a handful of shapes.
        let shapes = [(1.0, 1.5), (2.0, 1.0), (0.7, 2.3), (3.0, 0.5)];
        for (alpha, beta) in shapes {
            let seg = segment(80.0, 110.0, 3, alpha, beta, 4.0);
            let jam = seg.jam_density_total();
            let mut prev = f64::INFINITY;
            for i in 0..=1000 {
                let k = jam * i as f64 / 1000.0;
                let v = seg.speed_from_density(k);
                assert!(
                    v <= prev + 1e-12,
                    "speed increased at k={k} for shape ({alpha},{beta})"
                );
                prev = v;
            }
        }
    }

    #[test]
    fn total_length_sums_segments() {
        let net = grid_network(&GridSpec::default());
        let sum: f64 = net.segments().iter().map(Segment::length_km).sum();
        assert!((net.total_length_km() - sum).abs() < 1e-12);
    }

    #[test]
    fn total_length_permutation_invariant() {
        let spec = GridSpec::default();
        let net = grid_network(&spec);
        let mut nodes = net.nodes().to_vec();
        let mut links = net.links().to_vec();
        let mut segs = net.segments().to_vec();
        nodes.reverse();
        links.reverse();
        segs.reverse();
        let permuted = Network::new(nodes, links, segs, net.zones().to_vec()).unwrap();
        assert!((permuted.total_length_km() - net.total_length_km()).abs() < 1e-12);
    }

    #[test]
    fn validate_accepts_minimal_network() {
        let nodes = vec![
            Node { id: NodeId(1), x_m: 0.0, y_m: 0.0, zone: ZoneId(1) },
            Node { id: NodeId(2), x_m: 1000.0, y_m: 0.0, zone: ZoneId(1) },
        ];
        let links = vec![Link {
            id: LinkId(1),
            from: NodeId(1),
            to: NodeId(2),
            segments: vec![SegmentId(1)],
        }];
        let segs = vec![segment(60.0, 100.0, 1, 1.0, 1.5, 5.0)];
        let zones = vec![Zone {
            id: ZoneId(1),
            nodes: vec![NodeId(1), NodeId(2)],
            demand_weight: 1.0,
            centroid: NodeId(1),
        }];
        let net = Network::new(nodes, links, segs, zones).unwrap();
        assert!(net.validate().is_valid());
        assert!((net.total_length_km() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_flags_zero_length_segment() {
        let nodes = vec![
            Node { id: NodeId(1), x_m: 0.0, y_m: 0.0, zone: ZoneId(1) },
            Node { id: NodeId(2), x_m: 1000.0, y_m: 0.0, zone: ZoneId(1) },
        ];
        let links = vec![Link {
            id: LinkId(1),
            from: NodeId(1),
            to: NodeId(2),
            segments: vec![SegmentId(1)],
        }];
        let mut seg = segment(60.0, 100.0, 1, 1.0, 1.5, 5.0);
        seg.length_m = 0.0;
        let zones = vec![Zone {
            id: ZoneId(1),
            nodes: vec![NodeId(1), NodeId(2)],
            demand_weight: 1.0,
            centroid: NodeId(1),
        }];
        let net = Network::new(nodes, links, vec![seg], zones).unwrap();
        // Zero length also breaks the recomputed v_f traversal nowhere else;
        // exactly one geometry violation expected.
        let report = net.validate();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::SegmentGeometry);
    }

    #[test]
    fn validate_flags_disconnected_components() {
        // Two disjoint 1-link islands.
        let nodes = (1..=4)
            .map(|i| Node {
                id: NodeId(i),
                x_m: i as f64 * 100.0,
                y_m: 0.0,
                zone: ZoneId(1),
            })
            .collect::<Vec<_>>();
        let links = vec![
            Link { id: LinkId(1), from: NodeId(1), to: NodeId(2), segments: vec![SegmentId(1)] },
            Link { id: LinkId(2), from: NodeId(3), to: NodeId(4), segments: vec![SegmentId(2)] },
        ];
        let mut s1 = segment(60.0, 100.0, 1, 1.0, 1.5, 5.0);
        s1.id = SegmentId(1);
        let mut s2 = segment(60.0, 100.0, 1, 1.0, 1.5, 5.0);
        s2.id = SegmentId(2);
        s2.link_id = LinkId(2);
        let zones = vec![Zone {
            id: ZoneId(1),
            nodes: nodes.iter().map(|n| n.id).collect(),
            demand_weight: 1.0,
            centroid: NodeId(1),
        }];
        let net = Network::new(nodes, links, vec![s1, s2], zones).unwrap();
        let report = net.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::Disconnected));
    }
}
