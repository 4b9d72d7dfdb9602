//! Shared fixtures and independent oracles for the acceptance suite.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use mobsim_core::demand::{ActivityType, DemandProfile, ServiceType, TravelMode, Trip};
use mobsim_core::equilibrium::{SupplyModel, SupplyRun, TravelTimeTable};
use mobsim_core::error::Result;
use mobsim_core::fleet::{
    Assignment, ControllerConfig, FleetKind, FleetVehicle, InsertionPlan, RebalancePolicy,
    ReleasePoint, RequestId, RequestStatus, ServiceRequest, Stop, StopAction,
};
use mobsim_core::mesosim::{
    run_scenario, LegStatus, ScenarioInputs, SimConfig, SimOutput, TrajectoryLeg,
    TrajectoryRecord, TransitSystem,
};
use mobsim_core::mfd::{eval_vmfd, Branch, MfdParams, MfdSample};
use mobsim_core::network::{
    grid_network, GridSpec, Link, LinkId, Network, Node, NodeId, Segment, SegmentId, Zone, ZoneId,
};
use mobsim_core::routing::TravelTimeOracle;

// ---------------------------------------------------------------------
// Small fixtures
// ---------------------------------------------------------------------

/// Two chained segments of 1 km and 3 km (L_N = 4 km).
pub fn two_segment_network() -> Network {
    let nodes = vec![
        Node { id: NodeId(1), x_m: 0.0, y_m: 0.0, zone: ZoneId(1) },
        Node { id: NodeId(2), x_m: 1000.0, y_m: 0.0, zone: ZoneId(1) },
        Node { id: NodeId(3), x_m: 4000.0, y_m: 0.0, zone: ZoneId(1) },
    ];
    let links = vec![
        Link { id: LinkId(1), from: NodeId(1), to: NodeId(2), segments: vec![SegmentId(1)] },
        Link { id: LinkId(2), from: NodeId(2), to: NodeId(3), segments: vec![SegmentId(2)] },
    ];
    let seg = |id: u64, link: u64, len: f64| Segment {
        id: SegmentId(id),
        link_id: LinkId(link),
        length_m: len,
        lanes: 1,
        free_flow_kmh: 50.0,
        jam_density_veh_km_lane: 120.0,
        output_capacity_veh_h: 900.0,
        sd_alpha: 1.0,
        sd_beta: 1.5,
        min_speed_kmh: 5.0,
    };
    let zones = vec![Zone {
        id: ZoneId(1),
        nodes: vec![NodeId(1), NodeId(2), NodeId(3)],
        demand_weight: 1.0,
        centroid: NodeId(2),
    }];
    Network::new(nodes, links, vec![seg(1, 1, 1000.0), seg(2, 2, 3000.0)], zones).unwrap()
}

pub fn stat_row(
    net: &Network,
    seg_idx: usize,
    k: f64,
    q: f64,
) -> mobsim_core::mesosim::SegmentStatRow {
    mobsim_core::mesosim::SegmentStatRow {
        interval_start_s: 0,
        segment_id: net.segments()[seg_idx].id,
        k_veh_km: k,
        q_veh_h: q,
        v_kmh: 50.0,
    }
}

/// A completed passenger journey of the given mode and distance.
pub fn pax_completion(id: u64, mode: TravelMode, dist_km: f64, end_s: f64) -> TrajectoryRecord {
    TrajectoryRecord {
        entity_id: id,
        kind: mobsim_core::mesosim::EntityKind::Passenger,
        legs: vec![TrajectoryLeg {
            mode,
            status: LegStatus::Riding,
            origin: NodeId(1),
            destination: NodeId(2),
            start_s: 0.0,
            end_s,
            distance_km: dist_km,
        }],
    }
}

// ---------------------------------------------------------------------
// Synthetic production samples (the fitting oracle)
// ---------------------------------------------------------------------

fn box_muller(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn synthetic_mfd_samples(
    params: &MfdParams,
    n: usize,
    a_max: f64,
    noise: f64,
    seed: u64,
) -> Vec<MfdSample> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let phase = i as f64 / n as f64;
            let a = a_max
                * (0.15
                    + 0.85
                        * ((phase * std::f64::consts::TAU).sin().abs() * 0.7
                            + (phase * 2.0 * std::f64::consts::TAU).sin().abs() * 0.3));
            let gamma = 5.0 + 0.05 * a;
            let truth = eval_vmfd(params, a, gamma).unwrap();
            let factor = if noise > 0.0 { 1.0 + noise * box_muller(&mut rng) } else { 1.0 };
            MfdSample {
                t_s: (i * 300) as u32,
                accumulation_veh: a,
                production_veh_km_h: truth * factor,
                gamma_veh_km: gamma,
                passenger_accumulation: 0.0,
                passenger_production_km_h: 0.0,
                per_mode_accumulation: BTreeMap::new(),
            }
        })
        .collect()
}

/// Triangle loop: loading P = A, unloading P = ratio * A over [0, a_max].
pub fn closed_form_loop(n: usize, a_max: f64, ratio: f64) -> (Branch, Branch) {
    let mut loading = Branch::default();
    let mut unloading = Branch::default();
    for i in 0..n {
        let a = a_max * i as f64 / (n - 1) as f64;
        loading.time_s.push(i as f64 * 60.0);
        loading.accumulation.push(a);
        loading.production.push(a);
    }
    for i in 0..n {
        let a = a_max * (n - 1 - i) as f64 / (n - 1) as f64;
        unloading.time_s.push((n + i) as f64 * 60.0);
        unloading.accumulation.push(a);
        unloading.production.push(ratio * a);
    }
    (loading, unloading)
}

// ---------------------------------------------------------------------
// Fleet oracles
// ---------------------------------------------------------------------

/// Symmetric random travel-time matrix over abstract nodes.
pub struct MatrixOracle {
    times: BTreeMap<(u64, u64), f64>,
}

impl MatrixOracle {
    pub fn random(rng: &mut ChaCha20Rng, n_nodes: u64) -> Self {
        let mut times = BTreeMap::new();
        for a in 0..n_nodes {
            for b in a + 1..n_nodes {
                let t = rng.gen_range(30.0..900.0);
                times.insert((a, b), t);
                times.insert((b, a), t);
            }
        }
        MatrixOracle { times }
    }
}

impl TravelTimeOracle for MatrixOracle {
    fn travel_time_s(&self, from: NodeId, to: NodeId, _depart_s: f64) -> Option<f64> {
        if from == to {
            return Some(0.0);
        }
        self.times.get(&(from.0, to.0)).copied()
    }
}

/// Independent schedule timing: walk stops accumulating oracle times.
fn walk_times(
    release: ReleasePoint,
    stops: &[Stop],
    oracle: &dyn TravelTimeOracle,
) -> Option<Vec<f64>> {
    let mut clock = release.ready_at_s;
    let mut at = release.node;
    let mut out = Vec::with_capacity(stops.len());
    for stop in stops {
        if stop.node != at {
            clock += oracle.travel_time_s(at, stop.node, clock)?;
            at = stop.node;
        }
        out.push(clock);
    }
    Some(out)
}

fn pick_drop(stops: &[Stop], times: &[f64]) -> BTreeMap<RequestId, (Option<f64>, Option<f64>)> {
    let mut map: BTreeMap<RequestId, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for (stop, &t) in stops.iter().zip(times) {
        match stop.action {
            StopAction::Pickup(id) => map.entry(id).or_default().0 = Some(t),
            StopAction::Dropoff(id) => map.entry(id).or_default().1 = Some(t),
        }
    }
    map
}

/// Exhaustive insertion oracle: every (pickup, dropoff) position pair,
/// feasibility re-derived from scratch.
pub fn oracle_insert(
    vehicle: &FleetVehicle,
    release: ReleasePoint,
    request: &ServiceRequest,
    oracle: &dyn TravelTimeOracle,
    cfg: &ControllerConfig,
    now: f64,
) -> Option<InsertionPlan> {
    if request.service != ServiceType::Shared || vehicle.exclusive {
        return None;
    }
    let old = &vehicle.schedule;
    let old_times = walk_times(release, old, oracle)?;
    let old_end = old_times.last().copied().unwrap_or(release.ready_at_s);
    let old_map = pick_drop(old, &old_times);

    let mut best: Option<((f64, usize, usize), InsertionPlan)> = None;
    for i in 0..=old.len() {
        for j in i..=old.len() {
            let mut cand: Vec<Stop> = Vec::new();
            cand.extend_from_slice(&old[..i]);
            cand.push(Stop { node: request.pickup, action: StopAction::Pickup(request.id) });
            cand.extend_from_slice(&old[i..j]);
            cand.push(Stop { node: request.dropoff, action: StopAction::Dropoff(request.id) });
            cand.extend_from_slice(&old[j..]);

            // Seats at every prefix.
            let mut occupancy = vehicle.onboard.len() as i64;
            let mut seat_ok = true;
            for stop in &cand {
                match stop.action {
                    StopAction::Pickup(_) => occupancy += 1,
                    StopAction::Dropoff(_) => occupancy -= 1,
                }
                if occupancy > vehicle.seats as i64 {
                    seat_ok = false;
                    break;
                }
            }
            if !seat_ok {
                continue;
            }
            let Some(times) = walk_times(release, &cand, oracle) else { continue };
            let map = pick_drop(&cand, &times);
            let (Some(pick), Some(drop)) = map[&request.id] else { continue };
            if pick - now > cfg.max_wait_s() {
                continue;
            }
            let Some(direct) = oracle.travel_time_s(request.pickup, request.dropoff, pick)
            else {
                continue;
            };
            if (drop - pick) - direct > cfg.max_detour_s() {
                continue;
            }
            let mut detour_ok = true;
            for (rid, (old_pick, old_drop)) in &old_map {
                let (new_pick, new_drop) = map[rid];
                let added = match (old_pick, old_drop) {
                    (Some(op), Some(od)) => {
                        (new_drop.unwrap() - new_pick.unwrap()) - (od - op)
                    }
                    (None, Some(od)) => new_drop.unwrap() - od,
                    _ => 0.0,
                };
                if added > cfg.max_detour_s() {
                    detour_ok = false;
                    break;
                }
            }
            if !detour_ok {
                continue;
            }
            let end = times.last().copied().unwrap_or(release.ready_at_s);
            let key = (end - old_end, i, j);
            let better = match &best {
                None => true,
                Some((bk, _)) => key.0 < bk.0 || (key.0 == bk.0 && (key.1, key.2) < (bk.1, bk.2)),
            };
            if better {
                best = Some((
                    key,
                    InsertionPlan {
                        schedule: cand,
                        pickup_time_s: pick,
                        added_time_s: end - old_end,
                    },
                ));
            }
        }
    }
    best.map(|(_, plan)| plan)
}

fn oracle_single_plan(
    vehicle: &FleetVehicle,
    release: ReleasePoint,
    request: &ServiceRequest,
    oracle: &dyn TravelTimeOracle,
    cfg: &ControllerConfig,
    now: f64,
) -> Option<InsertionPlan> {
    if !(vehicle.schedule.is_empty() && vehicle.onboard.is_empty()) || vehicle.exclusive {
        return None;
    }
    let schedule = vec![
        Stop { node: request.pickup, action: StopAction::Pickup(request.id) },
        Stop { node: request.dropoff, action: StopAction::Dropoff(request.id) },
    ];
    let times = walk_times(release, &schedule, oracle)?;
    if times[0] - now > cfg.max_wait_s() {
        return None;
    }
    Some(InsertionPlan {
        schedule,
        pickup_time_s: times[0],
        added_time_s: times[1] - release.ready_at_s,
    })
}

/// Greedy nearest-feasible assignment, re-derived exhaustively.
pub fn oracle_assign(
    requests: &[ServiceRequest],
    vehicles: &[FleetVehicle],
    releases: &BTreeMap<u64, ReleasePoint>,
    oracle: &dyn TravelTimeOracle,
    cfg: &ControllerConfig,
    now: f64,
) -> Vec<Assignment> {
    let mut order: Vec<&ServiceRequest> = requests.iter().collect();
    order.sort_by(|a, b| a.request_time_s.total_cmp(&b.request_time_s).then(a.id.cmp(&b.id)));
    let mut by_id: Vec<&FleetVehicle> = vehicles.iter().collect();
    by_id.sort_by_key(|v| v.id);

    let mut used = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for request in order {
        let mut best: Option<(f64, u64, InsertionPlan)> = None;
        for vehicle in &by_id {
            if used.contains(&vehicle.id) {
                continue;
            }
            let release = releases[&vehicle.id];
            let plan = match request.service {
                ServiceType::Single => {
                    oracle_single_plan(vehicle, release, request, oracle, cfg, now)
                }
                ServiceType::Shared => oracle_insert(vehicle, release, request, oracle, cfg, now),
                ServiceType::None => None,
            };
            if let Some(plan) = plan {
                let better = match &best {
                    None => true,
                    Some((t, vid, _)) => {
                        plan.pickup_time_s < *t || (plan.pickup_time_s == *t && vehicle.id < *vid)
                    }
                };
                if better {
                    best = Some((plan.pickup_time_s, vehicle.id, plan));
                }
            }
        }
        if let Some((pickup, vehicle_id, plan)) = best {
            used.insert(vehicle_id);
            out.push(Assignment {
                request_id: request.id,
                vehicle_id,
                schedule: plan.schedule,
                predicted_pickup_s: pickup,
                predicted_wait_s: pickup - now,
                exclusive: request.service == ServiceType::Single,
            });
        }
    }
    out
}

/// Independent replay of constraints (i)-(iii) for one assignment.
pub fn replay_constraints(
    assignment: &Assignment,
    vehicles: &[FleetVehicle],
    releases: &BTreeMap<u64, ReleasePoint>,
    oracle: &dyn TravelTimeOracle,
    cfg: &ControllerConfig,
    now: f64,
) {
    let vehicle = vehicles
        .iter()
        .find(|v| v.id == assignment.vehicle_id)
        .expect("assigned vehicle exists");
    let release = releases[&vehicle.id];
    let times = walk_times(release, &assignment.schedule, oracle).expect("schedule routable");
    let map = pick_drop(&assignment.schedule, &times);

    // (i) the new passenger's wait.
    let (pick, _drop) = map[&assignment.request_id];
    let pick = pick.expect("pickup scheduled");
    assert!(pick - now <= cfg.max_wait_s() + 1e-9, "wait constraint violated");

    // (ii) existing passengers' added in-vehicle time.
    let old_times = walk_times(release, &vehicle.schedule, oracle).expect("old schedule routable");
    let old_map = pick_drop(&vehicle.schedule, &old_times);
    for (rid, (old_pick, old_drop)) in &old_map {
        let (new_pick, new_drop) = map[rid];
        let added = match (old_pick, old_drop) {
            (Some(op), Some(od)) => (new_drop.unwrap() - new_pick.unwrap()) - (od - op),
            (None, Some(od)) => new_drop.unwrap() - od,
            _ => 0.0,
        };
        assert!(added <= cfg.max_detour_s() + 1e-9, "detour constraint violated");
    }

    // (iii) seat feasibility at every prefix.
    let mut occupancy = vehicle.onboard.len() as i64;
    for stop in &assignment.schedule {
        match stop.action {
            StopAction::Pickup(_) => occupancy += 1,
            StopAction::Dropoff(_) => occupancy -= 1,
        }
        assert!(occupancy <= vehicle.seats as i64, "seat constraint violated");
        assert!(occupancy >= 0, "negative occupancy");
    }
}

const INSTANCE_NODES: u64 = 14;

pub fn random_fleet_instance(
    rng: &mut ChaCha20Rng,
) -> (
    MatrixOracle,
    Vec<FleetVehicle>,
    Vec<ServiceRequest>,
    BTreeMap<u64, ReleasePoint>,
    ControllerConfig,
    f64,
) {
    let oracle = MatrixOracle::random(rng, INSTANCE_NODES);
    let now = 30.0;
    let n_vehicles = rng.gen_range(1..=10);
    let mut vehicles = Vec::new();
    let mut releases = BTreeMap::new();
    for id in 0..n_vehicles {
        let location = NodeId(rng.gen_range(0..INSTANCE_NODES));
        let seats = [1u32, 2, 4][rng.gen_range(0..3)];
        let mut vehicle = FleetVehicle::new(id, seats, FleetKind::Amod, location);
        match rng.gen_range(0..10) {
            0..=4 => {}
            5..=7 => {
                // One passenger aboard heading for a dropoff.
                let rid = RequestId(900 + id);
                vehicle.onboard.insert(rid);
                vehicle.schedule = vec![Stop {
                    node: NodeId(rng.gen_range(0..INSTANCE_NODES)),
                    action: StopAction::Dropoff(rid),
                }];
                vehicle.exclusive = rng.gen_bool(0.4);
            }
            _ => {
                // Assigned but not yet picked up.
                let rid = RequestId(800 + id);
                let a = rng.gen_range(0..INSTANCE_NODES);
                let b = (a + 1 + rng.gen_range(0..INSTANCE_NODES - 1)) % INSTANCE_NODES;
                vehicle.schedule = vec![
                    Stop { node: NodeId(a), action: StopAction::Pickup(rid) },
                    Stop { node: NodeId(b), action: StopAction::Dropoff(rid) },
                ];
                vehicle.exclusive = rng.gen_bool(0.4);
            }
        }
        releases.insert(id, ReleasePoint {
            node: location,
            ready_at_s: now + rng.gen_range(0.0..90.0),
        });
        vehicles.push(vehicle);
    }
    let n_requests = rng.gen_range(1..=5);
    let mut requests = Vec::new();
    for id in 0..n_requests {
        let pickup = rng.gen_range(0..INSTANCE_NODES);
        let dropoff = (pickup + 1 + rng.gen_range(0..INSTANCE_NODES - 1)) % INSTANCE_NODES;
        requests.push(ServiceRequest {
            id: RequestId(id),
            passenger_id: id,
            request_time_s: rng.gen_range(0.0..30.0),
            service: if rng.gen_bool(0.5) { ServiceType::Single } else { ServiceType::Shared },
            pickup: NodeId(pickup),
            dropoff: NodeId(dropoff),
            status: RequestStatus::Pending,
        });
    }
    let cfg = ControllerConfig {
        max_wait_min: 8.0,
        max_detour_min: 6.0,
        policy: RebalancePolicy::CruiseHotspot,
        ..ControllerConfig::default()
    };
    (oracle, vehicles, requests, releases, cfg, now)
}

pub fn random_insertion_instance(
    rng: &mut ChaCha20Rng,
) -> (MatrixOracle, FleetVehicle, ServiceRequest, ReleasePoint, ControllerConfig, f64) {
    let oracle = MatrixOracle::random(rng, INSTANCE_NODES);
    let now = 0.0;
    let location = NodeId(rng.gen_range(0..INSTANCE_NODES));
    let mut vehicle = FleetVehicle::new(0, rng.gen_range(2..=6), FleetKind::Amod, location);

    // Build a valid schedule of up to 6 stops: a few onboard dropoffs plus
    // assigned pickup/dropoff pairs in order.
    let onboard = rng.gen_range(0..=2usize);
    let mut schedule = Vec::new();
    for k in 0..onboard {
        let rid = RequestId(900 + k as u64);
        vehicle.onboard.insert(rid);
        schedule.push(Stop {
            node: NodeId(rng.gen_range(0..INSTANCE_NODES)),
            action: StopAction::Dropoff(rid),
        });
    }
    let pairs = rng.gen_range(0..=2usize);
    for k in 0..pairs {
        let rid = RequestId(800 + k as u64);
        let a = rng.gen_range(0..INSTANCE_NODES);
        let b = (a + 1 + rng.gen_range(0..INSTANCE_NODES - 1)) % INSTANCE_NODES;
        // Insert the pickup somewhere after existing stops, dropoff last.
        schedule.push(Stop { node: NodeId(a), action: StopAction::Pickup(rid) });
        schedule.push(Stop { node: NodeId(b), action: StopAction::Dropoff(rid) });
    }
    vehicle.schedule = schedule;

    let pickup = rng.gen_range(0..INSTANCE_NODES);
    let dropoff = (pickup + 1 + rng.gen_range(0..INSTANCE_NODES - 1)) % INSTANCE_NODES;
    let request = ServiceRequest {
        id: RequestId(7),
        passenger_id: 7,
        request_time_s: 0.0,
        service: ServiceType::Shared,
        pickup: NodeId(pickup),
        dropoff: NodeId(dropoff),
        status: RequestStatus::Pending,
    };
    let release = ReleasePoint { node: location, ready_at_s: rng.gen_range(0.0..60.0) };
    let cfg = ControllerConfig {
        max_wait_min: rng.gen_range(6.0..20.0),
        max_detour_min: rng.gen_range(3.0..15.0),
        policy: RebalancePolicy::CruiseHotspot,
        ..ControllerConfig::default()
    };
    (oracle, vehicle, request, release, cfg, now)
}

// ---------------------------------------------------------------------
// Supply-run fixtures
// ---------------------------------------------------------------------

/// 10x10 grid with `n` uniform car trips over the day.
pub fn grid_supply_run(n: u64) -> (SimOutput, Network, Vec<Trip>) {
    let spec = GridSpec { rows: 10, cols: 10, ..GridSpec::default() };
    let net = grid_network(&spec);
    let profile = DemandProfile::uniform(n, vec![(TravelMode::CarCarpool, 1.0)]);
    let trips = mobsim_core::demand::generate_trips(&profile, &net, 606).unwrap();
    let cfg = SimConfig::default();
    let tt = TravelTimeTable::free_flow(&net, 900, cfg.horizon_s);
    let transit = TransitSystem::default();
    let inputs =
        ScenarioInputs { net: &net, trips: &trips, transit: &transit, fleets: &[], cfg: &cfg };
    let out = run_scenario(&inputs, &tt, 606).unwrap();
    (out, net, trips)
}

/// All-pairs shortest path lengths (km) via petgraph, minimizing length.
pub fn petgraph_shortest_lengths(net: &Network) -> BTreeMap<(NodeId, NodeId), f64> {
    use petgraph::graph::DiGraph;

    let mut graph = DiGraph::<NodeId, f64>::new();
    let mut gnodes = Vec::new();
    for node in net.nodes() {
        gnodes.push(graph.add_node(node.id));
    }
    for link in net.links() {
        let a = net.node_index(link.from).unwrap();
        let b = net.node_index(link.to).unwrap();
        let km: f64 = link
            .segments
            .iter()
            .map(|sid| net.segments()[net.segment_index(*sid).unwrap()].length_km())
            .sum();
        graph.add_edge(gnodes[a], gnodes[b], km);
    }
    let mut out = BTreeMap::new();
    for (i, node) in net.nodes().iter().enumerate() {
        let costs = petgraph::algo::dijkstra(&graph, gnodes[i], None, |e| *e.weight());
        for (target, km) in costs {
            out.insert((node.id, graph[target]), km);
        }
    }
    out
}

/// Supply stub observing the same table every iteration.
pub struct ConstantSupplyStub {
    t_star: TravelTimeTable,
}

impl ConstantSupplyStub {
    pub fn new(t_star: TravelTimeTable) -> Self {
        ConstantSupplyStub { t_star }
    }
}

impl SupplyModel for ConstantSupplyStub {
    fn simulate(&mut self, _tt: &TravelTimeTable) -> Result<SupplyRun> {
        Ok(SupplyRun {
            observed_tt: self.t_star.clone(),
            output: SimOutput {
                trajectories: vec![],
                segment_stats: vec![],
                events: vec![],
                unserved: vec![],
                conservation: vec![],
                observed_tt: self.t_star.clone(),
                max_step_displacement_ratio: 0.0,
                horizon_s: 86_400,
                stats_interval_s: 300,
            },
        })
    }
}

/// Nonincreasing isotonic regression (pool adjacent violators).
pub fn pava_nonincreasing(y: &[f64]) -> Vec<f64> {
    // Fit a nondecreasing sequence to the reversed data, then reverse back.
    let reversed: Vec<f64> = y.iter().rev().copied().collect();
    let mut blocks: Vec<(f64, f64)> = Vec::new(); // (sum, count)
    for &v in &reversed {
        blocks.push((v, 1.0));
        while blocks.len() >= 2 {
            let (s2, c2) = blocks[blocks.len() - 1];
            let (s1, c1) = blocks[blocks.len() - 2];
            if s1 / c1 > s2 / c2 {
                blocks.pop();
                blocks.pop();
                blocks.push((s1 + s2, c1 + c2));
            } else {
                break;
            }
        }
    }
    let mut fitted = Vec::with_capacity(y.len());
    for (s, c) in blocks {
        for _ in 0..(c as usize) {
            fitted.push(s / c);
        }
    }
    fitted.reverse();
    fitted
}

/// Rook-move trip: origin and destination share a grid row or column, so
/// every trip is bus-servable by row/column lines.
pub fn rook_trip(
    spec: &GridSpec,
    rng: &mut ChaCha20Rng,
    person: u64,
    mode: TravelMode,
    depart: u32,
) -> Trip {
    let r = rng.gen_range(0..spec.rows);
    let c = rng.gen_range(0..spec.cols);
    let (to_r, to_c) = if rng.gen_bool(0.5) {
        let mut c2 = rng.gen_range(0..spec.cols);
        while c2 == c {
            c2 = rng.gen_range(0..spec.cols);
        }
        (r, c2)
    } else {
        let mut r2 = rng.gen_range(0..spec.rows);
        while r2 == r {
            r2 = rng.gen_range(0..spec.rows);
        }
        (r2, c)
    };
    Trip {
        person_id: person,
        origin: spec.node_id(r, c),
        destination: spec.node_id(to_r, to_c),
        departure_s: depart,
        mode,
        service_type: ServiceType::None,
        activity: ActivityType::Work,
    }
}

/// Triangular departure-time pulse over [start, end] peaking at the middle.
pub fn triangular_departure(rng: &mut ChaCha20Rng, start_s: u32, end_s: u32) -> u32 {
    let a = rng.gen_range(0.0..1.0f64);
    let b = rng.gen_range(0.0..1.0f64);
    let frac = (a + b) / 2.0; // triangular on [0, 1]
    start_s + ((end_s - start_s) as f64 * frac) as u32
}

/// Demand pulse for the shape-sanity run: triangular departures over the
/// window; uniform OD when `concentrated` is false, otherwise the same
/// origins but all destinations in the 2x2 corner block.
pub fn pulse_trips(
    spec: &GridSpec,
    total: u64,
    window: (u32, u32),
    concentrated: bool,
    seed: u64,
) -> Vec<Trip> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let corner = [
        spec.node_id(0, 0),
        spec.node_id(0, 1),
        spec.node_id(1, 0),
        spec.node_id(1, 1),
    ];
    (0..total)
        .map(|person| {
            let origin = spec.node_id(
                rng.gen_range(0..spec.rows),
                rng.gen_range(0..spec.cols),
            );
            let destination = loop {
                let candidate = if concentrated {
                    corner[rng.gen_range(0..corner.len())]
                } else {
                    spec.node_id(rng.gen_range(0..spec.rows), rng.gen_range(0..spec.cols))
                };
                if candidate != origin {
                    break candidate;
                }
            };
            Trip {
                person_id: person,
                origin,
                destination,
                departure_s: triangular_departure(&mut rng, window.0, window.1),
                mode: TravelMode::CarCarpool,
                service_type: ServiceType::None,
                activity: ActivityType::Work,
            }
        })
        .collect()
}

/// Runs a pulse scenario and returns its interval samples.
pub fn run_pulse(net: &Network, trips: &[Trip]) -> Vec<MfdSample> {
    let cfg = SimConfig::default();
    let tt = TravelTimeTable::free_flow(net, 900, cfg.horizon_s);
    let transit = TransitSystem::default();
    let inputs = ScenarioInputs { net, trips, transit: &transit, fleets: &[], cfg: &cfg };
    let out = run_scenario(&inputs, &tt, 8).unwrap();
    mobsim_core::mfd::build_samples(
        &out.segment_stats,
        &out.trajectories,
        net,
        None,
        cfg.stats_interval_s,
        cfg.horizon_s,
    )
    .unwrap()
}
