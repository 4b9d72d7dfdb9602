//! Mode shift: a multinomial logit over the available modes, applied trip
//! by trip against the current skims.
//!
//! Sampling uses the random-utility form (Gumbel-max) with noise keyed by
//! (seed, person, mode). Keyed noise gives common random numbers across
//! scenario variants: improving one mode's systematic utility can only
//! grow the set of trips that choose it.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{FareSchedule, ServiceType, TravelMode, Trip};
use crate::equilibrium::SkimMatrix;
use crate::error::{Error, Result};
use crate::network::Network;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ChoiceParams {
    /// Modes travelers may choose from in this scenario.
    pub available_modes: Vec<TravelMode>,
    /// Generalized-cost weight on in-vehicle minutes.
    pub beta_ivtt: f64,
    /// Generalized-cost weight on waiting minutes.
    pub beta_wait: f64,
    pub value_of_time_sgd_h: f64,
    /// Logit scale on the negative generalized cost.
    pub scale: f64,
    pub flat_fares_sgd: BTreeMap<TravelMode, f64>,
    pub car_cost_per_km_sgd: f64,
    /// MOD price as a fraction of the taxi fare.
    pub mod_price_factor: f64,
    /// Probability that a chosen on-demand trip requests a shared ride.
    pub shared_ride_fraction: f64,
    /// Trip modes that are never re-chosen (fixed background demand).
    pub frozen_modes: Vec<TravelMode>,
}

impl Default for ChoiceParams {
    fn default() -> Self {
        ChoiceParams {
            available_modes: vec![
                TravelMode::CarCarpool,
                TravelMode::Taxi,
                TravelMode::Mod,
                TravelMode::Bus,
                TravelMode::Rail,
                TravelMode::Other,
            ],
            beta_ivtt: 1.0,
            beta_wait: 1.5,
            value_of_time_sgd_h: 15.0,
            scale: 0.3,
            flat_fares_sgd: BTreeMap::from([
                (TravelMode::Bus, 1.5),
                (TravelMode::Rail, 1.8),
                (TravelMode::Other, 0.0),
            ]),
            car_cost_per_km_sgd: 0.2,
            mod_price_factor: 1.0,
            shared_ride_fraction: 0.2,
            frozen_modes: vec![TravelMode::Freight],
        }
    }
}

impl ChoiceParams {
    pub fn validate(&self) -> Result<()> {
        if self.available_modes.is_empty() {
            return Err(Error::invalid_config("choice.available_modes", "must not be empty"));
        }
        if !(self.value_of_time_sgd_h > 0.0) {
            return Err(Error::invalid_config("choice.value_of_time_sgd_h", "must be > 0"));
        }
        if !(self.scale > 0.0) {
            return Err(Error::invalid_config("choice.scale", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.shared_ride_fraction) {
            return Err(Error::invalid_config(
                "choice.shared_ride_fraction",
                "must be in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Fare of one trip by mode, from skim distance/time.
    fn fare_sgd(
        &self,
        mode: TravelMode,
        distance_km: f64,
        ivtt_min: f64,
        fares: &FareSchedule,
    ) -> Result<f64> {
        Ok(match mode {
            TravelMode::CarCarpool => distance_km * self.car_cost_per_km_sgd,
            TravelMode::Taxi => fares.taxi_fare(distance_km, ivtt_min)?,
            TravelMode::Mod => fares.taxi_fare(distance_km, ivtt_min)? * self.mod_price_factor,
            TravelMode::Amod => {
                let taxi = fares.taxi_fare(distance_km, ivtt_min)?;
                fares.amod_fare(taxi, false)
            }
            other => self.flat_fares_sgd.get(&other).copied().unwrap_or(0.0),
        })
    }

    /// Systematic utility: negative scaled generalized cost in minutes.
    pub fn utility(
        &self,
        mode: TravelMode,
        ivtt_min: f64,
        wait_min: f64,
        distance_km: f64,
        fares: &FareSchedule,
    ) -> Result<f64> {
        let fare = self.fare_sgd(mode, distance_km, ivtt_min, fares)?;
        let vot_per_min = self.value_of_time_sgd_h / 60.0;
        let gc = self.beta_ivtt * ivtt_min + self.beta_wait * wait_min + fare / vot_per_min;
        Ok(-self.scale * gc)
    }

    /// Closed-form logit probabilities for a utility vector.
    pub fn probabilities(utilities: &[f64]) -> Vec<f64> {
        let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return vec![0.0; utilities.len()];
        }
        let exps: Vec<f64> = utilities
            .iter()
            .map(|u| if u.is_finite() { (u - max).exp() } else { 0.0 })
            .collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }
}

fn gumbel(seed: u64, person: u64, mode: TravelMode) -> f64 {
    let mode_idx = TravelMode::ALL.iter().position(|m| *m == mode).expect("known mode") as u64;
    let mut rng = ChaCha20Rng::seed_from_u64(
        seed ^ person.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (mode_idx << 56),
    );
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

fn shared_draw(seed: u64, person: u64, fraction: f64) -> bool {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ person.wrapping_mul(0xd134_2543_de82_ef95));
    rng.gen::<f64>() < fraction
}

/// Re-draws the mode of every non-frozen trip. Trip count, order, origins,
/// destinations and departure times are preserved. A missing skim entry for
/// an available mode is an error; a non-finite skim time makes the mode
/// unavailable for that trip; and if nothing is available the original mode
/// is kept.
pub fn mode_shift(
    trips: &[Trip],
    net: &Network,
    skims: &SkimMatrix,
    fares: &FareSchedule,
    params: &ChoiceParams,
    seed: u64,
) -> Result<Vec<Trip>> {
    params.validate()?;
    let mut out = Vec::with_capacity(trips.len());
    for trip in trips {
        if params.frozen_modes.contains(&trip.mode) {
            out.push(trip.clone());
            continue;
        }
        let (Some(o), Some(d)) =
            (net.zone_of_node(trip.origin), net.zone_of_node(trip.destination))
        else {
            return Err(Error::domain(format!(
                "trip {} has nodes outside the zone system",
                trip.person_id
            )));
        };
        let period = skims.period_of(trip.departure_s as f64);

        let mut best: Option<(f64, TravelMode)> = None;
        for &mode in &params.available_modes {
            let Some(cell) = skims.get(mode, o, d, period) else {
                return Err(Error::MissingSkim {
                    mode: mode.to_string(),
                    origin: o.0,
                    destination: d.0,
                });
            };
            if !cell.ivtt_min.is_finite() {
                continue;
            }
            let v = params.utility(mode, cell.ivtt_min, cell.wait_min, cell.distance_km, fares)?;
            let total = v + gumbel(seed, trip.person_id, mode);
            if best.map_or(true, |(b, _)| total > b) {
                best = Some((total, mode));
            }
        }
        let mut chosen = trip.clone();
        if let Some((_, mode)) = best {
            chosen.mode = mode;
            chosen.service_type = if matches!(mode, TravelMode::Mod | TravelMode::Amod) {
                if shared_draw(seed, trip.person_id, params.shared_ride_fraction) {
                    ServiceType::Shared
                } else {
                    ServiceType::Single
                }
            } else {
                ServiceType::None
            };
        }
        out.push(chosen);
    }
    Ok(out)
}
