//! Synthetic trip generation from an hourly demand profile.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{ActivityType, ServiceType, TravelMode, Trip};
use crate::error::{Error, Result};
use crate::network::{Network, NodeId};

/// Demand shape: per-activity hourly weights, activity and mode share
/// targets and the total trip count. Weights and shares must each sum to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemandProfile {
    pub total_trips: u64,
    /// Share of trips per activity; entries must sum to 1.
    pub activity_shares: Vec<(ActivityType, f64)>,
    /// 24 hourly weights per activity; each vector must sum to 1.
    pub hourly_weights: BTreeMap<ActivityType, Vec<f64>>,
    /// Share of trips per mode; entries must sum to 1.
    pub mode_shares: Vec<(TravelMode, f64)>,
    /// Fraction of on-demand trips requesting a shared ride.
    #[serde(default)]
    pub shared_ride_fraction: f64,
}

impl DemandProfile {
    /// Uniform-in-time profile over the given mode shares.
    pub fn uniform(total_trips: u64, mode_shares: Vec<(TravelMode, f64)>) -> Self {
        let hourly: Vec<f64> = vec![1.0 / 24.0; 24];
        DemandProfile {
            total_trips,
            activity_shares: ActivityType::ALL.iter().map(|&a| (a, 0.25)).collect(),
            hourly_weights: ActivityType::ALL
                .iter()
                .map(|&a| (a, hourly.clone()))
                .collect(),
            mode_shares,
            shared_ride_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let share_sum: f64 = self.activity_shares.iter().map(|(_, s)| s).sum();
        if (share_sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_config(
                "demand.activity_shares",
                format!("shares sum to {share_sum}, expected 1"),
            ));
        }
        for (activity, _) in &self.activity_shares {
            let weights = self.hourly_weights.get(activity).ok_or_else(|| {
                Error::invalid_config(
                    "demand.hourly_weights",
                    format!("missing weights for activity {activity:?}"),
                )
            })?;
            if weights.len() != 24 {
                return Err(Error::invalid_config(
                    "demand.hourly_weights",
                    "each weight vector needs 24 bins",
                ));
            }
            let sum: f64 = weights.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid_config(
                    "demand.hourly_weights",
                    format!("weights for {activity:?} sum to {sum}, expected 1"),
                ));
            }
            if weights.iter().any(|w| *w < 0.0) {
                return Err(Error::invalid_config(
                    "demand.hourly_weights",
                    "weights must be nonnegative",
                ));
            }
        }
        let mode_sum: f64 = self.mode_shares.iter().map(|(_, s)| s).sum();
        if (mode_sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_config(
                "demand.mode_shares",
                format!("shares sum to {mode_sum}, expected 1"),
            ));
        }
        if !(0.0..=1.0).contains(&self.shared_ride_fraction) {
            return Err(Error::invalid_config(
                "demand.shared_ride_fraction",
                "must be in [0, 1]",
            ));
        }
        Ok(())
    }
}

fn pick_weighted<'a, T>(items: &'a [(T, f64)], rng: &mut ChaCha20Rng) -> &'a T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut draw = rng.gen::<f64>() * total;
    for (item, w) in items {
        draw -= w;
        if draw <= 0.0 {
            return item;
        }
    }
    &items.last().expect("non-empty weights").0
}

/// Generates a deterministic trip table from the profile. Origins and
/// destinations are drawn zone-first by demand weight, then uniformly over
/// the zone's nodes; origin and destination nodes always differ.
pub fn generate_trips(profile: &DemandProfile, net: &Network, seed: u64) -> Result<Vec<Trip>> {
    profile.validate()?;
    if net.nodes().is_empty() || net.zones().is_empty() {
        return Err(Error::domain("cannot generate demand on an empty network"));
    }
    if net.nodes().len() < 2 && profile.total_trips > 0 {
        return Err(Error::domain(
            "need at least two nodes to draw distinct origin and destination",
        ));
    }
    let zone_weights: Vec<(usize, f64)> = net
        .zones()
        .iter()
        .enumerate()
        .map(|(i, z)| (i, z.demand_weight))
        .collect();
    if zone_weights.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
        return Err(Error::domain("all zone demand weights are zero"));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut trips = Vec::with_capacity(profile.total_trips as usize);
    for person in 0..profile.total_trips {
        let activity = *pick_weighted(&profile.activity_shares, &mut rng);
        let weights = &profile.hourly_weights[&activity];
        let hours: Vec<(u32, f64)> = (0u32..24).map(|h| (h, weights[h as usize])).collect();
        let hour = *pick_weighted(&hours, &mut rng);
        let departure_s = hour * 3600 + rng.gen_range(0..3600);
        let mode = *pick_weighted(&profile.mode_shares, &mut rng);
        let service_type = if matches!(mode, TravelMode::Mod | TravelMode::Amod) {
            if rng.gen::<f64>() < profile.shared_ride_fraction {
                ServiceType::Shared
            } else {
                ServiceType::Single
            }
        } else {
            ServiceType::None
        };

        let origin = draw_node(net, &zone_weights, &mut rng);
        let destination = loop {
            let dest = draw_node(net, &zone_weights, &mut rng);
            if dest != origin {
                break dest;
            }
        };

        trips.push(Trip {
            person_id: person,
            origin,
            destination,
            departure_s,
            mode,
            service_type,
            activity,
        });
    }
    Ok(trips)
}

fn draw_node(net: &Network, zone_weights: &[(usize, f64)], rng: &mut ChaCha20Rng) -> NodeId {
    loop {
        let zone_idx = *pick_weighted(zone_weights, rng);
        let zone = &net.zones()[zone_idx];
        if zone.demand_weight <= 0.0 || zone.nodes.is_empty() {
            continue;
        }
        return zone.nodes[rng.gen_range(0..zone.nodes.len())];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{grid_network, GridSpec};

    fn profile(total: u64) -> DemandProfile {
        DemandProfile::uniform(total, vec![(TravelMode::CarCarpool, 1.0)])
    }

    #[test]
    fn zero_total_gives_empty_table() {
        let net = grid_network(&GridSpec::default());
        let trips = generate_trips(&profile(0), &net, 7).unwrap();
        assert!(trips.is_empty());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let net = grid_network(&GridSpec::default());
        let a = generate_trips(&profile(500), &net, 42).unwrap();
        let b = generate_trips(&profile(500), &net, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_trips(&profile(500), &net, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn trips_satisfy_invariants() {
        let net = grid_network(&GridSpec::default());
        let trips = generate_trips(&profile(2000), &net, 1).unwrap();
        for trip in &trips {
            trip.check().unwrap();
        }
    }

    /// Hourly histogram matches the multinomial expectation: chi-square
    /// goodness of fit at the 0.01 level against uniform hourly weights.
    #[test]
    fn hourly_histogram_matches_multinomial() {
        let net = grid_network(&GridSpec::default());
        let total = 10_000u64;
        let trips = generate_trips(&profile(total), &net, 99).unwrap();
        let mut counts = [0f64; 24];
        for t in &trips {
            counts[(t.departure_s / 3600) as usize] += 1.0;
        }
        let expected = total as f64 / 24.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // Critical value of chi-square with 23 degrees of freedom at 0.01.
        let critical = {
            use statrs::distribution::{ChiSquared, ContinuousCDF};
            ChiSquared::new(23.0).unwrap().inverse_cdf(0.99)
        };
        assert!(
            chi2 < critical,
            "chi2 {chi2} exceeded critical value {critical}"
        );
    }

    #[test]
    fn empty_network_is_rejected() {
        let net = grid_network(&GridSpec { rows: 1, cols: 1, ..GridSpec::default() });
        assert!(generate_trips(&profile(10), &net, 0).is_err());
    }
}
