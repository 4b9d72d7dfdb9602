//! Run orchestration: simulate / analyze / fit / report, with bit-stable
//! file outputs and a reproducibility manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::demand::{load_trips, save_trips, TravelMode, Trip};
use crate::equilibrium::{
    day_to_day_loop, save_skims, SkimConfig, SupplyRun, TravelTimeTable,
};
use crate::error::{Error, Result};
use crate::fleet::{fleet_kpis, FleetKind, FleetKpis, VehicleLegSummary};
use crate::impact::impact_report;
use crate::mesosim::{
    load_bus_lines, load_events, load_rail_lines, load_segment_stats, load_trajectories,
    run_scenario, save_conservation, save_events, save_segment_stats, save_trajectories,
    save_unserved, EntityKind, LegStatus, ScenarioInputs, SimOutput, TrajectoryRecord,
    TransitSystem, UnservedReason,
};
use crate::mfd::{
    build_samples, fit_mfd, hysteresis, ivd, load_samples, save_samples, split_branches,
    tsi, FitConfig, FitReport, HysteresisResult, MfdKind, MfdSample, SplineConfig,
    TripSpeedRecord,
};
use crate::network::{load_network, SegmentId};
use crate::routing::Router;
use crate::scenario::{sha256_file, DemandSource, FileDigest, RunManifest, ScenarioConfig};

const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fraction of the daily accumulation peak that delimits congestion
/// episodes.
const EPISODE_THRESHOLD_FRACTION: f64 = 0.2;

/// Analysis peak windows (seconds of day).
const AM_PEAK: (f64, f64) = (7.0 * 3600.0, 9.0 * 3600.0);
const PM_PEAK: (f64, f64) = (17.0 * 3600.0, 19.0 * 3600.0);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimMeta {
    pub scenario: String,
    pub seed: u64,
    pub horizon_s: u32,
    pub stats_interval_s: u32,
    pub days: u32,
    pub tt_period_s: u32,
    pub trip_count: u64,
    pub unserved_count: u64,
    pub max_step_displacement_ratio: f64,
    pub sensors: Option<Vec<u64>>,
    pub fleet_sizes: BTreeMap<String, u64>,
    /// Network directory as given in the scenario config (resolved).
    pub network_dir: PathBuf,
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Runs one scenario end to end and writes every output plus the manifest
/// into `out_dir`. Returns the manifest.
pub fn run_simulate(config_path: &Path, out_dir: &Path) -> Result<RunManifest> {
    let config = ScenarioConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut wall = BTreeMap::new();
    let started = Instant::now();

    let network_dir = resolve(&base, &config.network_dir);
    let net = load_network(&network_dir)?;
    let report = net.validate();
    if !report.is_valid() {
        return Err(Error::invalid_config(
            "network_dir",
            format!("network has {} invariant violations", report.violations.len()),
        ));
    }

    let mut input_files: Vec<PathBuf> = ["nodes.csv", "links.csv", "segments.csv"]
        .iter()
        .map(|f| network_dir.join(f))
        .collect();
    if network_dir.join("zones.csv").exists() {
        input_files.push(network_dir.join("zones.csv"));
    }

    let mut trips: Vec<Trip> = match &config.demand {
        DemandSource::File(path) => {
            let path = resolve(&base, path);
            input_files.push(path.clone());
            let table = load_trips(&path)?;
            if !table.rejected.is_empty() {
                return Err(Error::invalid_config(
                    "demand.file",
                    format!(
                        "{} rows violate trip invariants (first at line {})",
                        table.rejected.len(),
                        table.rejected[0].line
                    ),
                ));
            }
            table.trips
        }
        DemandSource::Synthetic(profile) => {
            crate::demand::generate_trips(profile, &net, config.seed)?
        }
    };
    if let Some(path) = &config.freight_trips {
        let path = resolve(&base, path);
        input_files.push(path.clone());
        let table = load_trips(&path)?;
        trips.extend(table.trips);
    }

    let mut transit = TransitSystem { bus_cfg: config.transit.bus.clone(), ..Default::default() };
    if let Some(path) = &config.transit.bus_lines {
        let path = resolve(&base, path);
        input_files.push(path.clone());
        transit.bus_lines = load_bus_lines(&path)?;
    }
    if let Some(path) = &config.transit.rail_lines {
        let path = resolve(&base, path);
        input_files.push(path.clone());
        transit.rail = load_rail_lines(&path)?;
    }
    transit.validate()?;

    let mut fleet_specs = Vec::new();
    for (i, fleet) in config.fleets.iter().enumerate() {
        fleet_specs.push(fleet.build_spec(&net, i)?);
    }
    wall.insert("load".to_string(), started.elapsed().as_secs_f64());

    let sim_started = Instant::now();
    let t0 = TravelTimeTable::free_flow(&net, config.tt_period_s, config.sim.horizon_s);
    let mut skim_cfg = SkimConfig::new(&net, &transit, config.sim.horizon_s);
    skim_cfg.walk_speed_kmh = config.sim.walk_speed_kmh;
    skim_cfg.walk_detour_factor = config.sim.walk_detour_factor;
    let choice = config.choice_params();
    let seed = config.seed;
    let sim_cfg = config.sim.clone();
    let result = day_to_day_loop(
        config.days,
        trips,
        t0,
        &config.learning,
        &skim_cfg,
        Some((&choice, &config.fares)),
        seed,
        |day_trips, tt| {
            let inputs = ScenarioInputs {
                net: &net,
                trips: day_trips,
                transit: &transit,
                fleets: &fleet_specs,
                cfg: &sim_cfg,
            };
            let output = run_scenario(&inputs, tt, seed)?;
            Ok(SupplyRun { observed_tt: output.observed_tt.clone(), output })
        },
    )?;
    wall.insert("simulate".to_string(), sim_started.elapsed().as_secs_f64());

    let write_started = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let final_day = result.days.last().expect("at least one day");
    let output = &final_day.within_day.output;

    save_trajectories(&output.trajectories, &out_dir.join("trajectories.csv"))?;
    save_segment_stats(&output.segment_stats, &out_dir.join("segment_stats.csv"))?;
    save_events(&output.events, &out_dir.join("events.csv"))?;
    save_unserved(&output.unserved, &out_dir.join("unserved.csv"))?;
    save_conservation(&output.conservation, &out_dir.join("conservation.csv"))?;
    save_trips(&final_day.trips, &out_dir.join("trips_final.csv"))?;

    // Convergence trace over all days.
    {
        let mut w = csv::Writer::from_path(out_dir.join("convergence.csv"))?;
        #[derive(Serialize)]
        struct Row {
            day: u32,
            iteration: u32,
            max_rel_gap: f64,
            mean_tt_s: f64,
        }
        for day in &result.days {
            for stat in &day.within_day.trace {
                w.serialize(Row {
                    day: day.day,
                    iteration: stat.iteration,
                    max_rel_gap: stat.max_rel_gap,
                    mean_tt_s: stat.mean_tt_s,
                })?;
            }
        }
        w.flush()?;
    }
    for day in &result.days {
        save_skims(&day.skims, day.day, &out_dir.join(format!("skims_day{}.csv", day.day)))?;
    }
    {
        let mut w = csv::Writer::from_path(out_dir.join("mode_shares.csv"))?;
        #[derive(Serialize)]
        struct Row {
            day: u32,
            mode: TravelMode,
            share: f64,
        }
        for day in &result.days {
            for (mode, share) in &day.mode_shares {
                w.serialize(Row { day: day.day, mode: *mode, share: *share })?;
            }
        }
        w.flush()?;
    }

    let meta = SimMeta {
        scenario: config.name.clone(),
        seed,
        horizon_s: config.sim.horizon_s,
        stats_interval_s: config.sim.stats_interval_s,
        days: config.days,
        tt_period_s: config.tt_period_s,
        trip_count: final_day.trips.len() as u64,
        unserved_count: output.unserved.len() as u64,
        max_step_displacement_ratio: output.max_step_displacement_ratio,
        sensors: config.sensors.clone(),
        fleet_sizes: config
            .fleets
            .iter()
            .map(|f| (f.kind.service_mode().to_string(), f.fleet_size as u64))
            .collect(),
        network_dir: network_dir.clone(),
    };
    write_json(&meta, &out_dir.join("sim_meta.json"))?;
    wall.insert("write".to_string(), write_started.elapsed().as_secs_f64());

    // Manifest: inputs, then every produced file.
    let mut outputs = Vec::new();
    let mut names: Vec<String> = std::fs::read_dir(out_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    for name in names {
        outputs.push(FileDigest { path: name.clone(), sha256: sha256_file(&out_dir.join(&name))? });
    }
    let mut inputs = Vec::new();
    for path in input_files {
        inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(&path)?,
        });
    }
    let manifest = RunManifest {
        software_version: SOFTWARE_VERSION.to_string(),
        config_sha256: sha256_file(config_path)?,
        inputs,
        outputs,
        wall_clock_s: wall,
    };
    write_json(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub total_veh_km: f64,
    pub max_gap_veh_km_h: f64,
    pub loading_window_s: (f64, f64),
    pub unloading_window_s: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisKpis {
    pub scenario: String,
    pub tsi_daily: f64,
    pub tsi_am: f64,
    pub tsi_pm: f64,
    pub ivd_mean_min: f64,
    pub ivd_am_mean_min: f64,
    pub ivd_pm_mean_min: f64,
    pub ivd_clamped: u64,
    pub max_accumulation_veh: f64,
    pub max_production_veh_km_h: f64,
    pub max_gamma_veh_km: f64,
    pub max_passenger_production_km_h: f64,
    pub mean_passenger_production_km_h: f64,
    pub total_vkt_km: f64,
    pub vkt_by_mode_km: BTreeMap<TravelMode, f64>,
    pub passenger_trips_completed: u64,
    pub unserved_total: u64,
    pub hysteresis: Vec<EpisodeSummary>,
    pub hysteresis_total_veh_km: f64,
    pub fleet: BTreeMap<String, FleetKpis>,
    pub energy_fuel_kwh: f64,
    pub energy_electric_kwh: f64,
    pub nox_kg: f64,
    pub pm_kg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisMeta {
    pub scenario: String,
    pub horizon_s: u32,
    pub stats_interval_s: u32,
    pub n_samples: usize,
}

fn window_contains(window: (f64, f64), t: f64) -> bool {
    t >= window.0 && t < window.1
}

/// Derives analytics from a finished simulation directory.
pub fn run_analyze(sim_dir: &Path, out_dir: &Path) -> Result<()> {
    for required in ["sim_meta.json", "trajectories.csv", "segment_stats.csv", "events.csv"] {
        if !sim_dir.join(required).exists() {
            return Err(Error::invalid_config(
                "sim_dir",
                format!("missing {required} in {}", sim_dir.display()),
            ));
        }
    }
    let meta: SimMeta = read_json(&sim_dir.join("sim_meta.json"))?;
    let net = load_network(&meta.network_dir)?;
    let trajectories = load_trajectories(&sim_dir.join("trajectories.csv"))?;
    let stats = load_segment_stats(&sim_dir.join("segment_stats.csv"))?;
    let events = load_events(&sim_dir.join("events.csv"))?;
    let sensors: Option<BTreeSet<SegmentId>> =
        meta.sensors.as_ref().map(|s| s.iter().copied().map(SegmentId).collect());

    std::fs::create_dir_all(out_dir)?;
    let samples = build_samples(
        &stats,
        &trajectories,
        &net,
        sensors.as_ref(),
        meta.stats_interval_s,
        meta.horizon_s,
    )?;
    save_samples(&samples, &out_dir.join("mfd_samples.csv"))?;

    // Hysteresis per congestion episode.
    let episodes = split_branches(&samples, EPISODE_THRESHOLD_FRACTION);
    let spline_cfg = SplineConfig::default();
    let mut episode_summaries = Vec::new();
    let mut results: Vec<HysteresisResult> = Vec::new();
    for (i, episode) in episodes.iter().enumerate() {
        let result = hysteresis(&episode.loading, &episode.unloading, &spline_cfg)?;
        episode_summaries.push(EpisodeSummary {
            episode: i,
            total_veh_km: result.total_veh_km,
            max_gap_veh_km_h: result.max_gap(),
            loading_window_s: result.loading_window,
            unloading_window_s: result.unloading_window,
        });
        results.push(result);
    }
    {
        let mut w = csv::Writer::from_path(out_dir.join("hysteresis.csv"))?;
        #[derive(Serialize)]
        struct Row {
            episode: usize,
            #[serde(rename = "A")]
            a: f64,
            h: f64,
        }
        for (i, result) in results.iter().enumerate() {
            for (a, h) in result.grid_accumulation.iter().zip(&result.gap) {
                w.serialize(Row { episode: i, a: *a, h: *h })?;
            }
        }
        w.flush()?;
    }

    // Trip speed index and in-vehicle delay against free flow.
    let ff = TravelTimeTable::free_flow(&net, meta.tt_period_s.max(1), meta.horizon_s);
    let router = Router::new(&net, &ff);
    let horizon = meta.horizon_s as f64;
    let mut speed_records: Vec<(f64, TripSpeedRecord)> = Vec::new();
    let mut ivd_records: Vec<(f64, f64)> = Vec::new(); // (end_s, minutes)
    let mut ivd_clamped = 0u64;
    for record in &trajectories {
        match record.kind {
            EntityKind::Vehicle => {
                for leg in &record.legs {
                    let eligible = matches!(
                        leg.status,
                        LegStatus::Driving | LegStatus::DriveWithPassenger
                    );
                    let duration_h = (leg.end_s - leg.start_s) / 3600.0;
                    if !eligible || leg.end_s >= horizon || leg.distance_km <= 0.0 || duration_h <= 0.0
                    {
                        continue;
                    }
                    let Some(route) = router.route(leg.origin, leg.destination, leg.start_s)
                    else {
                        continue;
                    };
                    if route.travel_time_s <= 0.0 || route.distance_km <= 0.0 {
                        continue;
                    }
                    speed_records.push((
                        leg.end_s,
                        TripSpeedRecord {
                            distance_km: leg.distance_km,
                            speed_kmh: leg.distance_km / duration_h,
                            free_flow_speed_kmh: route.distance_km
                                / (route.travel_time_s / 3600.0),
                        },
                    ));
                }
            }
            EntityKind::Passenger => {
                for leg in &record.legs {
                    let road_ride = leg.status == LegStatus::Riding
                        && matches!(
                            leg.mode,
                            TravelMode::CarCarpool
                                | TravelMode::Taxi
                                | TravelMode::Mod
                                | TravelMode::Amod
                        );
                    if !road_ride || leg.end_s >= horizon {
                        continue;
                    }
                    let Some(route) = router.route(leg.origin, leg.destination, leg.start_s)
                    else {
                        continue;
                    };
                    let value = ivd((leg.end_s - leg.start_s) / 60.0, route.travel_time_s / 60.0);
                    if value.clamped {
                        ivd_clamped += 1;
                    }
                    ivd_records.push((leg.end_s, value.minutes));
                }
            }
        }
    }
    let tsi_over = |window: Option<(f64, f64)>| -> f64 {
        let subset: Vec<TripSpeedRecord> = speed_records
            .iter()
            .filter(|(end, _)| window.map_or(true, |w| window_contains(w, *end)))
            .map(|(_, r)| *r)
            .collect();
        tsi(&subset).unwrap_or(1.0)
    };
    let ivd_over = |window: Option<(f64, f64)>| -> f64 {
        let subset: Vec<f64> = ivd_records
            .iter()
            .filter(|(end, _)| window.map_or(true, |w| window_contains(w, *end)))
            .map(|(_, m)| *m)
            .collect();
        if subset.is_empty() {
            0.0
        } else {
            subset.iter().sum::<f64>() / subset.len() as f64
        }
    };

    // Mileage and impact.
    let mut vkt_by_mode: BTreeMap<TravelMode, f64> = BTreeMap::new();
    let mut impact_legs: Vec<(TravelMode, f64)> = Vec::new();
    let mut fleet_leg_summaries: Vec<VehicleLegSummary> = Vec::new();
    for record in trajectories.iter().filter(|r| r.kind == EntityKind::Vehicle) {
        for leg in &record.legs {
            if leg.distance_km <= 0.0 {
                continue;
            }
            *vkt_by_mode.entry(leg.mode).or_default() += leg.distance_km;
            impact_legs.push((leg.mode, leg.distance_km));
            fleet_leg_summaries.push(VehicleLegSummary {
                mode: leg.mode,
                distance_km: leg.distance_km,
                duration_s: leg.end_s - leg.start_s,
            });
        }
    }
    let tsi_daily = tsi_over(None);
    let impact = impact_report(&impact_legs, tsi_daily.clamp(1e-6, 1.0), &Default::default())?;
    write_json(&impact, &out_dir.join("impact_report.json"))?;

    let mut fleet_kpis_map: BTreeMap<String, FleetKpis> = BTreeMap::new();
    for kind in [FleetKind::Mod, FleetKind::Amod] {
        let size = meta.fleet_sizes.get(&kind.service_mode().to_string()).copied().unwrap_or(0);
        if size == 0 && !events.iter().any(|e| e.fleet == kind) {
            continue;
        }
        fleet_kpis_map.insert(
            kind.service_mode().to_string(),
            fleet_kpis(kind, &events, &fleet_leg_summaries, size, meta.horizon_s as f64),
        );
    }

    let completed = trajectories
        .iter()
        .filter(|t| t.kind == EntityKind::Passenger)
        .filter(|t| t.end_s().map_or(false, |e| e < horizon))
        .count() as u64;
    let unserved_total = meta.unserved_count;

    let kpis = AnalysisKpis {
        scenario: meta.scenario.clone(),
        tsi_daily,
        tsi_am: tsi_over(Some(AM_PEAK)),
        tsi_pm: tsi_over(Some(PM_PEAK)),
        ivd_mean_min: ivd_over(None),
        ivd_am_mean_min: ivd_over(Some(AM_PEAK)),
        ivd_pm_mean_min: ivd_over(Some(PM_PEAK)),
        ivd_clamped,
        max_accumulation_veh: samples.iter().map(|s| s.accumulation_veh).fold(0.0, f64::max),
        max_production_veh_km_h: samples
            .iter()
            .map(|s| s.production_veh_km_h)
            .fold(0.0, f64::max),
        max_gamma_veh_km: samples.iter().map(|s| s.gamma_veh_km).fold(0.0, f64::max),
        max_passenger_production_km_h: samples
            .iter()
            .map(|s| s.passenger_production_km_h)
            .fold(0.0, f64::max),
        mean_passenger_production_km_h: if samples.is_empty() {
            0.0
        } else {
            samples.iter().map(|s| s.passenger_production_km_h).sum::<f64>()
                / samples.len() as f64
        },
        total_vkt_km: vkt_by_mode
            .iter()
            .filter(|(m, _)| m.contributes_vehicle_flow())
            .map(|(_, v)| v)
            .sum(),
        vkt_by_mode_km: vkt_by_mode,
        passenger_trips_completed: completed,
        unserved_total,
        hysteresis_total_veh_km: episode_summaries.iter().map(|e| e.total_veh_km).sum(),
        hysteresis: episode_summaries,
        fleet: fleet_kpis_map,
        energy_fuel_kwh: impact.total_fuel_kwh,
        energy_electric_kwh: impact.total_electric_kwh,
        nox_kg: impact.total_nox_kg,
        pm_kg: impact.total_pm_kg,
    };
    write_json(&kpis, &out_dir.join("kpis.json"))?;
    write_json(
        &AnalysisMeta {
            scenario: meta.scenario,
            horizon_s: meta.horizon_s,
            stats_interval_s: meta.stats_interval_s,
            n_samples: samples.len(),
        },
        &out_dir.join("analysis_meta.json"),
    )?;
    Ok(())
}

/// Fits the production model to a sample file and writes the report.
pub fn run_fit(
    samples_path: &Path,
    kind: MfdKind,
    cfg: &FitConfig,
    out_path: &Path,
) -> Result<FitReport> {
    let samples = load_samples(samples_path)?;
    if samples.len() < 20 {
        return Err(Error::invalid_config(
            "samples",
            format!("need at least 20 samples, got {}", samples.len()),
        ));
    }
    let report = fit_mfd(&samples, kind, cfg)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_json(&report, out_path)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricComparison {
    pub values: BTreeMap<String, f64>,
    /// Difference against the first (reference) scenario.
    pub delta_vs_first: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenarios: Vec<String>,
    pub metrics: BTreeMap<String, MetricComparison>,
}

fn metric(values: Vec<(String, f64)>) -> MetricComparison {
    let first = values.first().map(|(_, v)| *v).unwrap_or(0.0);
    MetricComparison {
        delta_vs_first: values.iter().map(|(n, v)| (n.clone(), v - first)).collect(),
        values: values.into_iter().collect(),
    }
}

/// Side-by-side comparison of two or more analysis directories.
pub fn run_report(analysis_dirs: &[PathBuf], out_dir: &Path) -> Result<ComparisonReport> {
    if analysis_dirs.len() < 2 {
        return Err(Error::invalid_config(
            "analysis_dirs",
            "need at least two analyses to compare",
        ));
    }
    let mut metas: Vec<AnalysisMeta> = Vec::new();
    let mut kpis: Vec<AnalysisKpis> = Vec::new();
    let mut samples: Vec<Vec<MfdSample>> = Vec::new();
    for dir in analysis_dirs {
        metas.push(read_json(&dir.join("analysis_meta.json"))?);
        kpis.push(read_json(&dir.join("kpis.json"))?);
        samples.push(load_samples(&dir.join("mfd_samples.csv"))?);
    }
    let horizon = metas[0].horizon_s;
    let interval = metas[0].stats_interval_s;
    if metas.iter().any(|m| m.horizon_s != horizon || m.stats_interval_s != interval) {
        return Err(Error::invalid_config(
            "analysis_dirs",
            "analyses cover different horizons or intervals",
        ));
    }

    // Scenario display names, disambiguated if they collide.
    let mut names = Vec::new();
    for (i, meta) in metas.iter().enumerate() {
        let mut name = meta.scenario.clone();
        if names.contains(&name) {
            name = format!("{name}#{i}");
        }
        names.push(name);
    }

    let mut metrics: BTreeMap<String, MetricComparison> = BTreeMap::new();
    let collect = |f: &dyn Fn(&AnalysisKpis) -> f64| -> Vec<(String, f64)> {
        names.iter().cloned().zip(kpis.iter().map(|k| f(k))).collect()
    };
    metrics.insert("max_accumulation_veh".into(), metric(collect(&|k| k.max_accumulation_veh)));
    metrics.insert(
        "max_production_veh_km_h".into(),
        metric(collect(&|k| k.max_production_veh_km_h)),
    );
    metrics.insert("max_gamma_veh_km".into(), metric(collect(&|k| k.max_gamma_veh_km)));
    metrics.insert(
        "hysteresis_total_veh_km".into(),
        metric(collect(&|k| k.hysteresis_total_veh_km)),
    );
    metrics.insert("tsi_am".into(), metric(collect(&|k| k.tsi_am)));
    metrics.insert("tsi_pm".into(), metric(collect(&|k| k.tsi_pm)));
    metrics.insert("ivd_am_mean_min".into(), metric(collect(&|k| k.ivd_am_mean_min)));
    metrics.insert("ivd_pm_mean_min".into(), metric(collect(&|k| k.ivd_pm_mean_min)));
    metrics.insert("total_vkt_km".into(), metric(collect(&|k| k.total_vkt_km)));
    metrics.insert("energy_fuel_kwh".into(), metric(collect(&|k| k.energy_fuel_kwh)));
    metrics.insert("energy_electric_kwh".into(), metric(collect(&|k| k.energy_electric_kwh)));
    metrics.insert(
        "energy_total_kwh".into(),
        metric(collect(&|k| k.energy_fuel_kwh + k.energy_electric_kwh)),
    );
    metrics.insert("nox_kg".into(), metric(collect(&|k| k.nox_kg)));
    metrics.insert("pm_kg".into(), metric(collect(&|k| k.pm_kg)));
    metrics.insert(
        "max_passenger_production_km_h".into(),
        metric(collect(&|k| k.max_passenger_production_km_h)),
    );

    let report = ComparisonReport { scenarios: names.clone(), metrics };
    std::fs::create_dir_all(out_dir)?;
    write_json(&report, &out_dir.join("comparison.json"))?;

    // Plot-ready series: one column per scenario.
    let series = |pick: &dyn Fn(&MfdSample) -> f64, file: &str| -> Result<()> {
        let mut w = csv::Writer::from_path(out_dir.join(file))?;
        let mut header = vec!["t_s".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        let n = samples.iter().map(|s| s.len()).min().unwrap_or(0);
        for i in 0..n {
            let mut row = vec![samples[0][i].t_s.to_string()];
            for scenario in &samples {
                row.push(format!("{}", pick(&scenario[i])));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    series(&|s| s.production_veh_km_h, "production_by_time.csv")?;
    series(&|s| s.accumulation_veh, "accumulation_by_time.csv")?;
    series(&|s| s.passenger_production_km_h, "passenger_production_by_time.csv")?;
    {
        let mut w = csv::Writer::from_path(out_dir.join("mfd_points.csv"))?;
        #[derive(Serialize)]
        struct Row<'a> {
            scenario: &'a str,
            t_s: u32,
            #[serde(rename = "A_V")]
            a_v: f64,
            #[serde(rename = "P_V")]
            p_v: f64,
            gamma: f64,
        }
        for (name, scenario) in names.iter().zip(&samples) {
            for s in scenario {
                w.serialize(Row {
                    scenario: name,
                    t_s: s.t_s,
                    a_v: s.accumulation_veh,
                    p_v: s.production_veh_km_h,
                    gamma: s.gamma_veh_km,
                })?;
            }
        }
        w.flush()?;
    }
    Ok(report)
}

/// Loads and validates a network directory; returns its validation report.
pub fn run_validate(network_dir: &Path) -> Result<crate::network::ValidationReport> {
    let net = load_network(network_dir)?;
    Ok(net.validate())
}

/// Collects the vehicle trajectory output of a finished run for tests and
/// acceptance checks.
pub fn vehicle_records(output: &SimOutput) -> Vec<&TrajectoryRecord> {
    output.trajectories.iter().filter(|t| t.kind == EntityKind::Vehicle).collect()
}

/// Count unserved by reason.
pub fn unserved_by_reason(output: &SimOutput) -> BTreeMap<UnservedReason, u64> {
    let mut map = BTreeMap::new();
    for u in &output.unserved {
        *map.entry(u.reason).or_default() += 1;
    }
    map
}
