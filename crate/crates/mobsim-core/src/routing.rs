//! Time-dependent shortest paths over the segment graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::equilibrium::TravelTimeTable;
use crate::network::{Network, NodeId};

/// A routed path, expressed in link and segment indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub links: Vec<usize>,
    pub segments: Vec<usize>,
    pub distance_km: f64,
    pub travel_time_s: f64,
}

/// Travel-time estimates used by the fleet controller; implemented by
/// [`Router`] for network queries and by test stubs.
pub trait TravelTimeOracle {
    fn travel_time_s(&self, from: NodeId, to: NodeId, depart_s: f64) -> Option<f64>;
}

pub struct Router<'a> {
    net: &'a Network,
    tt: &'a TravelTimeTable,
}

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (cost, node index); node index breaks ties so that
        // exploration order is fully deterministic.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> Router<'a> {
    pub fn new(net: &'a Network, tt: &'a TravelTimeTable) -> Self {
        Router { net, tt }
    }

    /// Traversal time of one link entered at `at_s`, advancing the clock
    /// segment by segment.
    fn link_time_s(&self, link_idx: usize, at_s: f64) -> f64 {
        let mut clock = at_s;
        for sid in &self.net.links()[link_idx].segments {
            let seg_idx = self.net.segment_index(*sid).expect("segment exists");
            clock += self.tt.time_s(seg_idx, clock);
        }
        clock - at_s
    }

    /// Time-dependent shortest path by travel time. Returns `None` when the
    /// destination is unreachable.
    pub fn route(&self, from: NodeId, to: NodeId, depart_s: f64) -> Option<Route> {
        let src = self.net.node_index(from)?;
        let dst = self.net.node_index(to)?;
        if src == dst {
            return Some(Route {
                links: Vec::new(),
                segments: Vec::new(),
                distance_km: 0.0,
                travel_time_s: 0.0,
            });
        }
        let n = self.net.nodes().len();
        let mut best = vec![f64::INFINITY; n];
        let mut via_link: Vec<Option<usize>> = vec![None; n];
        let mut settled = vec![false; n];
        let mut heap = BinaryHeap::new();
        best[src] = 0.0;
        heap.push(HeapEntry { cost: 0.0, node: src });

        while let Some(HeapEntry { cost, node }) = heap.pop() {
            if settled[node] {
                continue;
            }
            settled[node] = true;
            if node == dst {
                break;
            }
            for &link_idx in self.net.out_links(node) {
                let link = &self.net.links()[link_idx];
                let next = self.net.node_index(link.to).expect("node exists");
                if settled[next] {
                    continue;
                }
                let arrive = cost + self.link_time_s(link_idx, depart_s + cost);
                if arrive < best[next] {
                    best[next] = arrive;
                    via_link[next] = Some(link_idx);
                    heap.push(HeapEntry { cost: arrive, node: next });
                }
            }
        }

        if !best[dst].is_finite() {
            return None;
        }
        let mut links = Vec::new();
        let mut cur = dst;
        while cur != src {
            let link_idx = via_link[cur].expect("path is connected");
            links.push(link_idx);
            cur = self
                .net
                .node_index(self.net.links()[link_idx].from)
                .expect("node exists");
        }
        links.reverse();
        let mut segments = Vec::new();
        let mut distance_km = 0.0;
        for &link_idx in &links {
            for sid in &self.net.links()[link_idx].segments {
                let seg_idx = self.net.segment_index(*sid).expect("segment exists");
                distance_km += self.net.segments()[seg_idx].length_km();
                segments.push(seg_idx);
            }
        }
        Some(Route {
            links,
            segments,
            distance_km,
            travel_time_s: best[dst],
        })
    }
}

impl TravelTimeOracle for Router<'_> {
    fn travel_time_s(&self, from: NodeId, to: NodeId, depart_s: f64) -> Option<f64> {
        self.route(from, to, depart_s).map(|r| r.travel_time_s)
    }
}
