//! Scenario configuration and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand::{ChoiceParams, DemandProfile, FareSchedule, TravelMode};
use crate::equilibrium::LearningConfig;
use crate::error::{Error, Result};
use crate::fleet::{ControllerConfig, FleetKind, FleetVehicle};
use crate::impact::ImpactConfig;
use crate::mesosim::{BusConfig, FleetSpec, SimConfig};
use crate::network::{Network, NodeId};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DemandSource {
    /// Read trips.csv from this path.
    #[serde(rename = "file")]
    File(PathBuf),
    /// Generate trips from a profile.
    #[serde(rename = "synthetic")]
    Synthetic(DemandProfile),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitFiles {
    pub bus_lines: Option<PathBuf>,
    pub rail_lines: Option<PathBuf>,
    pub bus: BusConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    pub kind: FleetKind,
    pub fleet_size: u32,
    /// Four-seater count; `fleet_size` must equal `seats4 + seats6`.
    pub seats4: u32,
    pub seats6: u32,
    #[serde(default)]
    pub controller: ControllerConfig,
    /// Nodes the fleet starts at (round-robin). Defaults to the parking
    /// set, then to zone centroids.
    #[serde(default)]
    pub initial_nodes: Vec<u64>,
}

impl FleetConfig {
    fn validate(&self, index: usize) -> Result<()> {
        if self.fleet_size != self.seats4 + self.seats6 {
            return Err(Error::invalid_config(
                format!("fleets[{index}].fleet_size"),
                format!(
                    "fleet_size {} must equal seats4 + seats6 = {}",
                    self.fleet_size,
                    self.seats4 + self.seats6
                ),
            ));
        }
        self.controller.validate().map_err(|e| match e {
            Error::InvalidConfig { field, message } => Error::InvalidConfig {
                field: format!("fleets[{index}].{field}"),
                message,
            },
            other => other,
        })
    }

    /// Builds the initial vehicle placement against a network.
    pub fn build_vehicles(&self, net: &Network, index: usize) -> Result<Vec<FleetVehicle>> {
        let anchors: Vec<NodeId> = if !self.initial_nodes.is_empty() {
            self.initial_nodes.iter().copied().map(NodeId).collect()
        } else if !self.controller.parking_nodes.is_empty() {
            self.controller.parking_nodes.clone()
        } else {
            net.zones().iter().map(|z| z.centroid).collect()
        };
        if anchors.is_empty() {
            return Err(Error::invalid_config(
                format!("fleets[{index}].initial_nodes"),
                "no placement nodes available",
            ));
        }
        for n in &anchors {
            if net.node_index(*n).is_none() {
                return Err(Error::invalid_config(
                    format!("fleets[{index}].initial_nodes"),
                    format!("unknown node {n}"),
                ));
            }
        }
        let mut vehicles = Vec::with_capacity(self.fleet_size as usize);
        for i in 0..self.fleet_size {
            let seats = if i < self.seats4 { 4 } else { 6 };
            vehicles.push(FleetVehicle::new(
                i as u64,
                seats,
                self.kind,
                anchors[i as usize % anchors.len()],
            ));
        }
        Ok(vehicles)
    }

    /// Resolves hot-spot zone anchors and returns the runnable fleet spec.
    pub fn build_spec(&self, net: &Network, index: usize) -> Result<FleetSpec> {
        let mut cfg = self.controller.clone();
        cfg.hotspot_anchors = cfg
            .hotspot_zones
            .iter()
            .map(|z| {
                net.zones()
                    .iter()
                    .find(|zone| zone.id == *z)
                    .map(|zone| zone.centroid)
                    .ok_or_else(|| {
                        Error::invalid_config(
                            format!("fleets[{index}].controller.hotspot_zones"),
                            format!("unknown zone {z}"),
                        )
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FleetSpec { kind: self.kind, cfg, vehicles: self.build_vehicles(net, index)? })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub network_dir: PathBuf,
    pub demand: DemandSource,
    /// Background freight trip table, never re-chosen.
    #[serde(default)]
    pub freight_trips: Option<PathBuf>,
    /// Modes travelers may use in this scenario (the mode-choice set).
    pub modal_availability: Vec<TravelMode>,
    #[serde(default = "default_days")]
    pub days: u32,
    #[serde(default)]
    pub fares: FareSchedule,
    #[serde(default)]
    pub choice: ChoiceParams,
    #[serde(default)]
    pub learning: LearningConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub transit: TransitFiles,
    #[serde(default)]
    pub fleets: Vec<FleetConfig>,
    /// Sensor-equipped segment subset; all segments when omitted.
    #[serde(default)]
    pub sensors: Option<Vec<u64>>,
    #[serde(default)]
    pub impact: ImpactConfig,
    /// Travel-time table period (seconds).
    #[serde(default = "default_tt_period")]
    pub tt_period_s: u32,
}

fn default_days() -> u32 {
    1
}

fn default_tt_period() -> u32 {
    900
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: ScenarioConfig =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
                field: format!("{}:{}:{}", path.display(), e.line(), e.column()),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid_config("name", "must not be empty"));
        }
        if self.days == 0 {
            return Err(Error::invalid_config("days", "must be >= 1"));
        }
        if self.modal_availability.is_empty() {
            return Err(Error::invalid_config("modal_availability", "must not be empty"));
        }
        if self.tt_period_s == 0 {
            return Err(Error::invalid_config("tt_period_s", "must be > 0"));
        }
        self.sim.validate()?;
        self.fares.validate()?;
        self.learning.validate()?;
        if let DemandSource::Synthetic(profile) = &self.demand {
            profile.validate()?;
        }
        for (i, fleet) in self.fleets.iter().enumerate() {
            fleet.validate(i)?;
        }
        let mut kinds: Vec<FleetKind> = self.fleets.iter().map(|f| f.kind).collect();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != self.fleets.len() {
            return Err(Error::invalid_config("fleets", "at most one fleet per kind"));
        }
        Ok(())
    }

    /// The mode-choice parameters with availability applied.
    pub fn choice_params(&self) -> ChoiceParams {
        let mut params = self.choice.clone();
        params.available_modes = self.modal_availability.clone();
        params
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_s: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

impl RunManifest {
    /// Recomputes every output digest against the files on disk.
    pub fn verify(&self, base_dir: &Path) -> Result<bool> {
        for output in &self.outputs {
            let actual = sha256_file(&base_dir.join(&output.path))?;
            if actual != output.sha256 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config_json() -> String {
        r#"{
            "name": "demo",
            "seed": 7,
            "network_dir": "net",
            "demand": {"synthetic": {
                "total_trips": 0,
                "activity_shares": [["Work", 1.0]],
                "hourly_weights": {"Work": [0.25,0.25,0.25,0.25,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0]},
                "mode_shares": [["Car/Carpool", 1.0]]
            }},
            "modal_availability": ["Car/Carpool"]
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses() {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), minimal_config_json()).unwrap();
        let config = ScenarioConfig::load(file.path()).unwrap();
        assert_eq!(config.days, 1);
        assert_eq!(config.tt_period_s, 900);
    }

    #[test]
    fn fleet_size_mismatch_names_the_field() {
        let mut config: ScenarioConfig =
            serde_json::from_str(&minimal_config_json()).unwrap();
        config.fleets.push(FleetConfig {
            kind: FleetKind::Amod,
            fleet_size: 10,
            seats4: 4,
            seats6: 4,
            controller: ControllerConfig {
                policy: crate::fleet::RebalancePolicy::CruiseHotspot,
                ..ControllerConfig::default()
            },
            initial_nodes: vec![],
        });
        let err = config.validate().unwrap_err();
        match err {
            Error::InvalidConfig { field, .. } => assert_eq!(field, "fleets[0].fleet_size"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = minimal_config_json().replace("\"seed\": 7", "\"seed\": 7, \"tpyo\": 1");
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), text).unwrap();
        let err = ScenarioConfig::load(file.path()).unwrap_err();
        assert!(err.is_validation());
    }
}
