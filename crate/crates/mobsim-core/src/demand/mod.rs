//! Trip tables, travel modes, fares, synthetic demand generation and the
//! logit mode-shift rule.

mod choice;
mod generate;
mod io;

pub use choice::{mode_shift, ChoiceParams};
pub use generate::{generate_trips, DemandProfile};
pub use io::{load_trips, save_trips, RejectedRow, TripTable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NodeId;

/// Travel modes and their flow contributions.
///
/// `_OP` modes are empty operational movements of service vehicles (driving
/// to a pickup, cruising, parking runs); they carry vehicles but no
/// passengers. Trains run off the road network and count toward neither
/// flow level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TravelMode {
    #[serde(rename = "Car/Carpool")]
    CarCarpool,
    #[serde(rename = "Taxi")]
    Taxi,
    #[serde(rename = "MOD")]
    Mod,
    #[serde(rename = "MOD_OP")]
    ModOp,
    #[serde(rename = "AMOD")]
    Amod,
    #[serde(rename = "AMOD_OP")]
    AmodOp,
    #[serde(rename = "Bus")]
    Bus,
    #[serde(rename = "Bus_OP")]
    BusOp,
    #[serde(rename = "Rail")]
    Rail,
    #[serde(rename = "Rail_OP")]
    RailOp,
    #[serde(rename = "Other")]
    Other,
    #[serde(rename = "Freight")]
    Freight,
}

impl TravelMode {
    pub const ALL: [TravelMode; 12] = [
        TravelMode::CarCarpool,
        TravelMode::Taxi,
        TravelMode::Mod,
        TravelMode::ModOp,
        TravelMode::Amod,
        TravelMode::AmodOp,
        TravelMode::Bus,
        TravelMode::BusOp,
        TravelMode::Rail,
        TravelMode::RailOp,
        TravelMode::Other,
        TravelMode::Freight,
    ];

    pub fn contributes_vehicle_flow(self) -> bool {
        matches!(
            self,
            TravelMode::CarCarpool
                | TravelMode::Taxi
                | TravelMode::Mod
                | TravelMode::ModOp
                | TravelMode::Amod
                | TravelMode::AmodOp
                | TravelMode::BusOp
                | TravelMode::Freight
        )
    }

    pub fn contributes_passenger_flow(self) -> bool {
        matches!(
            self,
            TravelMode::CarCarpool
                | TravelMode::Taxi
                | TravelMode::Mod
                | TravelMode::Amod
                | TravelMode::Bus
                | TravelMode::Rail
                | TravelMode::Other
        )
    }

    /// Whether the mode's vehicles occupy the road network.
    pub fn road_based(self) -> bool {
        !matches!(self, TravelMode::Rail | TravelMode::RailOp | TravelMode::Other)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TravelMode::CarCarpool => "Car/Carpool",
            TravelMode::Taxi => "Taxi",
            TravelMode::Mod => "MOD",
            TravelMode::ModOp => "MOD_OP",
            TravelMode::Amod => "AMOD",
            TravelMode::AmodOp => "AMOD_OP",
            TravelMode::Bus => "Bus",
            TravelMode::BusOp => "Bus_OP",
            TravelMode::Rail => "Rail",
            TravelMode::RailOp => "Rail_OP",
            TravelMode::Other => "Other",
            TravelMode::Freight => "Freight",
        }
    }

    /// Short lowercase tag used in wide CSV column names.
    pub fn column_tag(self) -> &'static str {
        match self {
            TravelMode::CarCarpool => "car_carpool",
            TravelMode::Taxi => "taxi",
            TravelMode::Mod => "mod",
            TravelMode::ModOp => "mod_op",
            TravelMode::Amod => "amod",
            TravelMode::AmodOp => "amod_op",
            TravelMode::Bus => "bus",
            TravelMode::BusOp => "bus_op",
            TravelMode::Rail => "rail",
            TravelMode::RailOp => "rail_op",
            TravelMode::Other => "other",
            TravelMode::Freight => "freight",
        }
    }
}

impl std::fmt::Display for TravelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TravelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TravelMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown travel mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ServiceType {
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "shared")]
    Shared,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActivityType {
    Work,
    Education,
    Shopping,
    Other,
}

impl ActivityType {
    pub const ALL: [ActivityType; 4] = [
        ActivityType::Work,
        ActivityType::Education,
        ActivityType::Shopping,
        ActivityType::Other,
    ];
}

/// One person's trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub person_id: u64,
    pub origin: NodeId,
    pub destination: NodeId,
    /// Departure time as seconds of day, in [0, 86400).
    pub departure_s: u32,
    pub mode: TravelMode,
    pub service_type: ServiceType,
    pub activity: ActivityType,
}

impl Trip {
    pub fn check(&self) -> Result<()> {
        if self.departure_s >= 86400 {
            return Err(Error::domain(format!(
                "departure_s {} outside [0, 86400)",
                self.departure_s
            )));
        }
        if self.origin == self.destination {
            return Err(Error::domain("trip origin equals destination"));
        }
        Ok(())
    }
}

/// Taxi-style fare schedule plus the on-demand pricing knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FareSchedule {
    pub base_sgd: f64,
    /// Rate on the first `rate_threshold_km` km.
    pub per_km_low_sgd: f64,
    /// Rate on distance beyond the threshold.
    pub per_km_high_sgd: f64,
    pub rate_threshold_km: f64,
    pub per_min_sgd: f64,
    /// On-demand price as a fraction of the taxi fare.
    pub amod_pricing_factor: f64,
    /// Shared rides pay this fraction of the single-ride price.
    pub shared_discount: f64,
}

impl Default for FareSchedule {
    fn default() -> Self {
        FareSchedule {
            base_sgd: 3.2,
            per_km_low_sgd: 0.55,
            per_km_high_sgd: 0.63,
            rate_threshold_km: 10.0,
            per_min_sgd: 0.29,
            amod_pricing_factor: 1.0,
            shared_discount: 0.75,
        }
    }
}

impl FareSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("base_sgd", self.base_sgd),
            ("per_km_low_sgd", self.per_km_low_sgd),
            ("per_km_high_sgd", self.per_km_high_sgd),
            ("rate_threshold_km", self.rate_threshold_km),
            ("per_min_sgd", self.per_min_sgd),
            ("amod_pricing_factor", self.amod_pricing_factor),
            ("shared_discount", self.shared_discount),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid_config(
                    format!("fares.{name}"),
                    "must be > 0",
                ));
            }
        }
        Ok(())
    }

    /// Taxi fare: base + distance component + per-minute component. The
    /// distance component is piecewise: the low rate applies to the first
    /// `rate_threshold_km` km and the high rate only to the excess, which
    /// keeps the fare continuous in distance.
    pub fn taxi_fare(&self, distance_km: f64, duration_min: f64) -> Result<f64> {
        if distance_km < 0.0 || duration_min < 0.0 {
            return Err(Error::domain("fare inputs must be nonnegative"));
        }
        let low = distance_km.min(self.rate_threshold_km) * self.per_km_low_sgd;
        let high = (distance_km - self.rate_threshold_km).max(0.0) * self.per_km_high_sgd;
        Ok(self.base_sgd + low + high + duration_min * self.per_min_sgd)
    }

    /// On-demand fare derived from a taxi fare via the pricing factor, with
    /// the shared-ride discount applied on top when `shared`.
    pub fn amod_fare(&self, taxi_fare_sgd: f64, shared: bool) -> f64 {
        amod_fare(
            taxi_fare_sgd,
            self.amod_pricing_factor,
            if shared { self.shared_discount } else { 1.0 },
        )
    }
}

/// `taxi_fare * pricing_factor * shared_discount` (pass 1.0 for single rides).
pub fn amod_fare(taxi_fare_sgd: f64, pricing_factor: f64, shared_discount: f64) -> f64 {
    taxi_fare_sgd * pricing_factor * shared_discount
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The full flag matrix for all 12 modes.
    #[test]
    fn mode_flag_matrix() {
        use TravelMode::*;
        // (mode, vehicle flow, passenger flow, road based)
        let expected = [
            (CarCarpool, true, true, true),
            (Taxi, true, true, true),
            (Mod, true, true, true),
            (ModOp, true, false, true),
            (Amod, true, true, true),
            (AmodOp, true, false, true),
            (Bus, false, true, true),
            (BusOp, true, false, true),
            (Rail, false, true, false),
            (RailOp, false, false, false),
            (Other, false, true, false),
            (Freight, true, false, true),
        ];
        assert_eq!(expected.len(), TravelMode::ALL.len());
        for (mode, veh, pax, road) in expected {
            assert_eq!(mode.contributes_vehicle_flow(), veh, "{mode} vehicle flag");
            assert_eq!(mode.contributes_passenger_flow(), pax, "{mode} passenger flag");
            assert_eq!(mode.road_based(), road, "{mode} road flag");
        }
    }

    #[test]
    fn mode_string_round_trip() {
        for mode in TravelMode::ALL {
            let parsed: TravelMode = mode.as_str().parse().unwrap();
            assert_eq!(parsed, mode);
        }
        assert!("Hoverboard".parse::<TravelMode>().is_err());
    }

    #[test]
    fn taxi_fare_base_only() {
        let f = FareSchedule::default();
        assert!((f.taxi_fare(0.0, 0.0).unwrap() - 3.20).abs() < 1e-12);
    }

    #[test]
    fn taxi_fare_short_trip() {
        let f = FareSchedule::default();
        // 3.2 + 5*0.55 + 10*0.29 = 8.85
        assert!((f.taxi_fare(5.0, 10.0).unwrap() - 8.85).abs() < 1e-12);
    }

    #[test]
    fn taxi_fare_long_trip_piecewise() {
        let f = FareSchedule::default();
        // 3.2 + 10*0.55 + 2*0.63 + 20*0.29 = 15.76
        assert!((f.taxi_fare(12.0, 20.0).unwrap() - 15.76).abs() < 1e-12);
    }

    #[test]
    fn taxi_fare_negative_input_rejected() {
        let f = FareSchedule::default();
        assert!(f.taxi_fare(-1.0, 0.0).is_err());
        assert!(f.taxi_fare(0.0, -0.1).is_err());
    }

    #[test]
    fn amod_fare_hand_values() {
        let mut f = FareSchedule::default();
        assert!((f.amod_fare(8.85, false) - 8.85).abs() < 1e-12);
        f.amod_pricing_factor = 0.75;
        assert!((f.amod_fare(8.85, false) - 6.6375).abs() < 1e-12);
        assert!((f.amod_fare(8.85, true) - 4.978125).abs() < 1e-12);
    }

    #[test]
    fn shared_is_exactly_three_quarters_of_single() {
        let f = FareSchedule {
            amod_pricing_factor: 1.25,
            ..FareSchedule::default()
        };
        for fare in [0.0, 3.2, 8.85, 100.0] {
            assert_eq!(f.amod_fare(fare, true), 0.75 * f.amod_fare(fare, false));
        }
    }

    #[test]
    fn taxi_fare_monotone_and_continuous_at_threshold() {
        let f = FareSchedule::default();
        let mut prev = 0.0;
        for i in 0..=3000 {
            let d = i as f64 * 0.01;
            let fare = f.taxi_fare(d, 0.0).unwrap();
            assert!(fare >= prev);
            prev = fare;
        }
        let below = f.taxi_fare(10.0 - 1e-9, 7.0).unwrap();
        let above = f.taxi_fare(10.0 + 1e-9, 7.0).unwrap();
        assert!((above - below).abs() < 1e-6);
    }
}
