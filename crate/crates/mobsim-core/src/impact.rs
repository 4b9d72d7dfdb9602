//! Well-to-wheels energy and exhaust emission accounting from per-mode
//! vehicle-kilometers.
//!
//! Battery-electric fleets use a per-trip consumption rate that falls with
//! trip distance, scaled by the upstream production factor. Fuel vehicles
//! convert mileage through their gasoline-equivalent economy. NOx and PM
//! come from per-class emission rate ranges interpolated on the congestion
//! level: the high end applies in heavy congestion, the low end at free
//! flow.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::demand::TravelMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyFactors {
    /// BEV consumption (Wh/km) for trips up to `bev_short_max_km`.
    pub bev_short_wh_km: f64,
    /// ... for trips up to `bev_medium_max_km`.
    pub bev_medium_wh_km: f64,
    /// ... for longer trips.
    pub bev_long_wh_km: f64,
    pub bev_short_max_km: f64,
    pub bev_medium_max_km: f64,
    /// Well-to-wheels production factor on electric energy.
    pub wtw_production_factor: f64,
    pub mpge_gasoline: f64,
    pub mpge_diesel: f64,
    /// km/kWh equivalent of one MPGe.
    pub km_per_kwh_per_mpge: f64,
    pub fuel_ratio_gasoline: f64,
    pub fuel_ratio_diesel: f64,
}

impl Default for EnergyFactors {
    fn default() -> Self {
        EnergyFactors {
            bev_short_wh_km: 233.0,
            bev_medium_wh_km: 183.0,
            bev_long_wh_km: 166.0,
            bev_short_max_km: 2.0,
            bev_medium_max_km: 10.0,
            wtw_production_factor: 2.99,
            mpge_gasoline: 47.0,
            mpge_diesel: 52.0,
            km_per_kwh_per_mpge: 0.04775,
            fuel_ratio_gasoline: 1.17,
            fuel_ratio_diesel: 1.05,
        }
    }
}

impl EnergyFactors {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bev_short_wh_km", self.bev_short_wh_km),
            ("bev_medium_wh_km", self.bev_medium_wh_km),
            ("bev_long_wh_km", self.bev_long_wh_km),
            ("bev_short_max_km", self.bev_short_max_km),
            ("bev_medium_max_km", self.bev_medium_max_km),
            ("wtw_production_factor", self.wtw_production_factor),
            ("mpge_gasoline", self.mpge_gasoline),
            ("mpge_diesel", self.mpge_diesel),
            ("km_per_kwh_per_mpge", self.km_per_kwh_per_mpge),
            ("fuel_ratio_gasoline", self.fuel_ratio_gasoline),
            ("fuel_ratio_diesel", self.fuel_ratio_diesel),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::invalid_config(format!("energy.{name}"), "must be > 0"));
            }
        }
        if self.bev_short_wh_km < self.bev_medium_wh_km
            || self.bev_medium_wh_km < self.bev_long_wh_km
        {
            return Err(Error::invalid_config(
                "energy.bev tiers",
                "consumption tiers must be nonincreasing with distance",
            ));
        }
        if self.bev_short_max_km >= self.bev_medium_max_km {
            return Err(Error::invalid_config(
                "energy.bev tiers",
                "tier boundaries must increase",
            ));
        }
        Ok(())
    }

    /// Consumption rate (Wh/km) for one trip of the given length.
    pub fn bev_rate_wh_km(&self, trip_km: f64) -> f64 {
        if trip_km <= self.bev_short_max_km {
            self.bev_short_wh_km
        } else if trip_km <= self.bev_medium_max_km {
            self.bev_medium_wh_km
        } else {
            self.bev_long_wh_km
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FuelKind {
    #[serde(rename = "gasoline")]
    Gasoline,
    #[serde(rename = "diesel")]
    Diesel,
}

/// One electric fleet trip: its length and whether it was an empty
/// operational movement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevTrip {
    pub distance_km: f64,
    pub operational: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BevEnergy {
    pub service_kwh: f64,
    pub operational_kwh: f64,
}

impl BevEnergy {
    pub fn total_kwh(&self) -> f64 {
        self.service_kwh + self.operational_kwh
    }
}

/// Well-to-wheels electric energy over fleet trips, split into service and
/// operational movement.
pub fn bev_energy(trips: &[BevTrip], factors: &EnergyFactors) -> Result<BevEnergy> {
    let mut out = BevEnergy::default();
    for trip in trips {
        if trip.distance_km < 0.0 {
            return Err(Error::domain("negative trip distance"));
        }
        let wh = trip.distance_km * factors.bev_rate_wh_km(trip.distance_km)
            * factors.wtw_production_factor;
        let kwh = wh / 1000.0;
        if trip.operational {
            out.operational_kwh += kwh;
        } else {
            out.service_kwh += kwh;
        }
    }
    Ok(out)
}

/// Well-to-wheels fuel energy (kWh) for a mileage total:
/// `vkt / (MPGe * km_per_kwh_per_mpge) * energy_to_fuel_ratio`.
pub fn ice_energy(vkt_km: f64, fuel: FuelKind, factors: &EnergyFactors) -> Result<f64> {
    if vkt_km < 0.0 {
        return Err(Error::domain("negative mileage"));
    }
    let (mpge, ratio) = match fuel {
        FuelKind::Gasoline => (factors.mpge_gasoline, factors.fuel_ratio_gasoline),
        FuelKind::Diesel => (factors.mpge_diesel, factors.fuel_ratio_diesel),
    };
    Ok(vkt_km / (mpge * factors.km_per_kwh_per_mpge) * ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionRange {
    pub low_g_km: f64,
    pub high_g_km: f64,
}

impl EmissionRange {
    pub fn flat(v: f64) -> Self {
        EmissionRange { low_g_km: v, high_g_km: v }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.low_g_km < 0.0 || self.high_g_km < self.low_g_km {
            return Err(Error::invalid_config(
                format!("emissions.{name}"),
                "range must satisfy 0 <= low <= high",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VehicleClass {
    #[serde(rename = "car_petrol")]
    CarPetrol,
    #[serde(rename = "bus")]
    Bus,
    #[serde(rename = "truck")]
    Truck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassEmission {
    pub nox: EmissionRange,
    pub pm: EmissionRange,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmissionFactors {
    pub car_petrol: ClassEmission,
    pub bus: ClassEmission,
    pub truck: ClassEmission,
    /// Congestion level at (or below) which the high end of each range
    /// applies; rates fall linearly to the low end at free flow.
    pub tsi_low_anchor: f64,
}

impl Default for EmissionFactors {
    fn default() -> Self {
        EmissionFactors {
            car_petrol: ClassEmission {
                nox: EmissionRange { low_g_km: 0.043, high_g_km: 0.063 },
                pm: EmissionRange::flat(0.0037),
            },
            bus: ClassEmission {
                nox: EmissionRange { low_g_km: 0.69, high_g_km: 1.11 },
                pm: EmissionRange::flat(0.015),
            },
            truck: ClassEmission {
                nox: EmissionRange { low_g_km: 0.28, high_g_km: 0.44 },
                pm: EmissionRange { low_g_km: 0.0061, high_g_km: 0.010 },
            },
            tsi_low_anchor: 0.5,
        }
    }
}

impl EmissionFactors {
    pub fn validate(&self) -> Result<()> {
        for (name, class) in
            [("car_petrol", &self.car_petrol), ("bus", &self.bus), ("truck", &self.truck)]
        {
            class.nox.check(&format!("{name}.nox"))?;
            class.pm.check(&format!("{name}.pm"))?;
        }
        if !(self.tsi_low_anchor > 0.0 && self.tsi_low_anchor < 1.0) {
            return Err(Error::invalid_config(
                "emissions.tsi_low_anchor",
                "must lie strictly between 0 and 1",
            ));
        }
        Ok(())
    }

    fn class(&self, class: VehicleClass) -> &ClassEmission {
        match class {
            VehicleClass::CarPetrol => &self.car_petrol,
            VehicleClass::Bus => &self.bus,
            VehicleClass::Truck => &self.truck,
        }
    }

    /// Rate (g/km) at the given congestion level: the high end at or below
    /// the anchor, the low end at free flow, linear in between.
    pub fn rate_g_km(&self, range: &EmissionRange, tsi: f64) -> f64 {
        if tsi <= self.tsi_low_anchor {
            range.high_g_km
        } else {
            let f = (tsi - self.tsi_low_anchor) / (1.0 - self.tsi_low_anchor);
            range.high_g_km + (range.low_g_km - range.high_g_km) * f
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmissionTotals {
    pub nox_kg: f64,
    pub pm_kg: f64,
}

/// NOx and PM mass over per-class mileage at congestion level `tsi`.
pub fn emissions(
    vkt_by_class: &[(VehicleClass, f64)],
    tsi: f64,
    factors: &EmissionFactors,
) -> Result<EmissionTotals> {
    if !(tsi > 0.0 && tsi <= 1.0) {
        return Err(Error::domain(format!("tsi {tsi} outside (0, 1]")));
    }
    let mut out = EmissionTotals::default();
    for (class, vkt) in vkt_by_class {
        if *vkt < 0.0 {
            return Err(Error::domain("negative mileage"));
        }
        let spec = factors.class(*class);
        out.nox_kg += factors.rate_g_km(&spec.nox, tsi) * vkt / 1000.0;
        out.pm_kg += factors.rate_g_km(&spec.pm, tsi) * vkt / 1000.0;
    }
    Ok(out)
}

/// Table 5/6-shaped report: per-mode mileage, energy and emission columns
/// plus totals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpactReport {
    pub rows: Vec<ImpactRow>,
    pub total_fuel_kwh: f64,
    pub total_electric_kwh: f64,
    pub total_nox_kg: f64,
    pub total_pm_kg: f64,
    pub total_vkt_km: f64,
    pub tsi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpactRow {
    pub mode: TravelMode,
    pub vkt_km: f64,
    pub fuel_kwh: f64,
    pub electric_kwh: f64,
    pub nox_kg: f64,
    pub pm_kg: f64,
}

/// Per-mode propulsion/emission classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpactConfig {
    pub gasoline_modes: Vec<TravelMode>,
    pub diesel_modes: Vec<TravelMode>,
    /// Battery-electric modes (tiered per-trip rates).
    pub electric_modes: Vec<TravelMode>,
    pub emission_class: BTreeMap<TravelMode, VehicleClass>,
    pub energy: EnergyFactors,
    pub emissions: EmissionFactors,
}

impl Default for ImpactConfig {
    fn default() -> Self {
        ImpactConfig {
            gasoline_modes: vec![
                TravelMode::CarCarpool,
                TravelMode::Taxi,
                TravelMode::Mod,
                TravelMode::ModOp,
            ],
            diesel_modes: vec![TravelMode::BusOp, TravelMode::Freight],
            electric_modes: vec![TravelMode::Amod, TravelMode::AmodOp],
            emission_class: BTreeMap::from([
                (TravelMode::CarCarpool, VehicleClass::CarPetrol),
                (TravelMode::Taxi, VehicleClass::CarPetrol),
                (TravelMode::Mod, VehicleClass::CarPetrol),
                (TravelMode::ModOp, VehicleClass::CarPetrol),
                (TravelMode::BusOp, VehicleClass::Bus),
                (TravelMode::Freight, VehicleClass::Truck),
            ]),
            energy: EnergyFactors::default(),
            emissions: EmissionFactors::default(),
        }
    }
}

/// Builds the report from per-mode vehicle legs `(mode, distance_km)` and
/// the day's congestion level.
pub fn impact_report(
    legs: &[(TravelMode, f64)],
    tsi: f64,
    cfg: &ImpactConfig,
) -> Result<ImpactReport> {
    cfg.energy.validate()?;
    cfg.emissions.validate()?;
    let mut vkt_by_mode: BTreeMap<TravelMode, f64> = BTreeMap::new();
    let mut bev_by_mode: BTreeMap<TravelMode, Vec<BevTrip>> = BTreeMap::new();
    for (mode, km) in legs {
        if !mode.contributes_vehicle_flow() {
            continue;
        }
        *vkt_by_mode.entry(*mode).or_default() += km;
        if cfg.electric_modes.contains(mode) {
            bev_by_mode.entry(*mode).or_default().push(BevTrip {
                distance_km: *km,
                operational: *mode == TravelMode::AmodOp || *mode == TravelMode::ModOp,
            });
        }
    }

    let mut report = ImpactReport {
        rows: Vec::new(),
        total_fuel_kwh: 0.0,
        total_electric_kwh: 0.0,
        total_nox_kg: 0.0,
        total_pm_kg: 0.0,
        total_vkt_km: 0.0,
        tsi,
    };
    for mode in TravelMode::ALL {
        let vkt = vkt_by_mode.get(&mode).copied().unwrap_or(0.0);
        if vkt == 0.0 && !mode.contributes_vehicle_flow() {
            continue;
        }
        let mut row = ImpactRow {
            mode,
            vkt_km: vkt,
            fuel_kwh: 0.0,
            electric_kwh: 0.0,
            nox_kg: 0.0,
            pm_kg: 0.0,
        };
        if cfg.gasoline_modes.contains(&mode) {
            row.fuel_kwh = ice_energy(vkt, FuelKind::Gasoline, &cfg.energy)?;
        } else if cfg.diesel_modes.contains(&mode) {
            row.fuel_kwh = ice_energy(vkt, FuelKind::Diesel, &cfg.energy)?;
        } else if let Some(trips) = bev_by_mode.get(&mode) {
            row.electric_kwh = bev_energy(trips, &cfg.energy)?.total_kwh();
        }
        if let Some(class) = cfg.emission_class.get(&mode) {
            let totals = emissions(&[(*class, vkt)], tsi, &cfg.emissions)?;
            row.nox_kg = totals.nox_kg;
            row.pm_kg = totals.pm_kg;
        }
        report.total_fuel_kwh += row.fuel_kwh;
        report.total_electric_kwh += row.electric_kwh;
        report.total_nox_kg += row.nox_kg;
        report.total_pm_kg += row.pm_kg;
        report.total_vkt_km += row.vkt_km;
        report.rows.push(row);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bev_tier_hand_values() {
        let f = EnergyFactors::default();
        // One 5 km trip: 5 * 183 * 2.99 = 2735.85 Wh.
        let e = bev_energy(&[BevTrip { distance_km: 5.0, operational: false }], &f).unwrap();
        assert!((e.service_kwh - 2.73585).abs() < 1e-12);
        // 1 km + 20 km: (233*1 + 166*20) * 2.99 = 10623.47 Wh.
        let e = bev_energy(
            &[
                BevTrip { distance_km: 1.0, operational: false },
                BevTrip { distance_km: 20.0, operational: true },
            ],
            &f,
        )
        .unwrap();
        assert!((e.total_kwh() - 10.62347).abs() < 1e-9);
        assert!((e.service_kwh - 1.0 * 233.0 * 2.99 / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn bev_empty_is_zero() {
        let e = bev_energy(&[], &EnergyFactors::default()).unwrap();
        assert_eq!(e.total_kwh(), 0.0);
    }

    #[test]
    fn bev_tier_boundaries() {
        let f = EnergyFactors::default();
        assert_eq!(f.bev_rate_wh_km(2.0), 233.0);
        assert_eq!(f.bev_rate_wh_km(2.0 + 1e-12), 183.0);
        assert_eq!(f.bev_rate_wh_km(10.0), 183.0);
        assert_eq!(f.bev_rate_wh_km(10.0 + 1e-12), 166.0);
    }

    #[test]
    fn ice_hand_values() {
        let f = EnergyFactors::default();
        assert_eq!(ice_energy(0.0, FuelKind::Gasoline, &f).unwrap(), 0.0);
        // 100 km gasoline: 100/(47*0.04775)*1.17.
        let g = ice_energy(100.0, FuelKind::Gasoline, &f).unwrap();
        assert!((g - 100.0 / (47.0 * 0.04775) * 1.17).abs() < 1e-12);
        assert!((g - 52.13).abs() < 0.01);
        // 100 km diesel: 100/(52*0.04775)*1.05.
        let d = ice_energy(100.0, FuelKind::Diesel, &f).unwrap();
        assert!((d - 100.0 / (52.0 * 0.04775) * 1.05).abs() < 1e-12);
        assert!((d - 42.29).abs() < 0.01);
    }

    #[test]
    fn emissions_hand_values() {
        let f = EmissionFactors::default();
        let zero = emissions(&[(VehicleClass::CarPetrol, 0.0)], 1.0, &f).unwrap();
        assert_eq!(zero, EmissionTotals::default());
        // 1000 car-km at free flow: low-end NOx 0.043 g/km -> 0.043 kg.
        let e = emissions(&[(VehicleClass::CarPetrol, 1000.0)], 1.0, &f).unwrap();
        assert!((e.nox_kg - 0.043).abs() < 1e-12);
        assert!((e.pm_kg - 0.0037).abs() < 1e-12);
        // Heavy congestion uses the high end.
        let e = emissions(&[(VehicleClass::CarPetrol, 1000.0)], 0.4, &f).unwrap();
        assert!((e.nox_kg - 0.063).abs() < 1e-12);
    }

    #[test]
    fn emissions_monotone_in_tsi() {
        let f = EmissionFactors::default();
        let mut prev = f64::INFINITY;
        for i in 1..=20 {
            let tsi = i as f64 / 20.0;
            let e = emissions(&[(VehicleClass::Truck, 500.0)], tsi, &f).unwrap();
            assert!(e.nox_kg <= prev + 1e-15);
            prev = e.nox_kg;
        }
    }

    #[test]
    fn emissions_tsi_out_of_range_rejected() {
        let f = EmissionFactors::default();
        assert!(emissions(&[], 0.0, &f).is_err());
        assert!(emissions(&[], 1.1, &f).is_err());
    }

    #[test]
    fn report_totals_are_row_sums() {
        let legs = vec![
            (TravelMode::CarCarpool, 120.0),
            (TravelMode::BusOp, 60.0),
            (TravelMode::Amod, 9.0),
            (TravelMode::AmodOp, 4.0),
            (TravelMode::Freight, 30.0),
            (TravelMode::Rail, 99.0), // not road-based, ignored
        ];
        let report = impact_report(&legs, 0.8, &ImpactConfig::default()).unwrap();
        let fuel: f64 = report.rows.iter().map(|r| r.fuel_kwh).sum();
        let electric: f64 = report.rows.iter().map(|r| r.electric_kwh).sum();
        let nox: f64 = report.rows.iter().map(|r| r.nox_kg).sum();
        assert!((report.total_fuel_kwh - fuel).abs() < 1e-12);
        assert!((report.total_electric_kwh - electric).abs() < 1e-12);
        assert!((report.total_nox_kg - nox).abs() < 1e-12);
        assert!((report.total_vkt_km - 223.0).abs() < 1e-12);
    }
}
