//! Shared benchmark fixtures.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use mobsim_core::demand::{ActivityType, ServiceType, TravelMode, Trip};
use mobsim_core::mfd::{eval_vmfd, MfdParams, MfdSample};
use mobsim_core::network::{grid_network, GridSpec, Network};

pub fn bench_grid(rows: usize, cols: usize) -> (GridSpec, Network) {
    let spec = GridSpec { rows, cols, ..GridSpec::default() };
    let net = grid_network(&spec);
    (spec, net)
}

/// Uniform random car trips over the grid.
pub fn car_trips(spec: &GridSpec, count: u64, seed: u64) -> Vec<Trip> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count)
        .map(|person_id| {
            let origin = spec.node_id(
                rng.gen_range(0..spec.rows),
                rng.gen_range(0..spec.cols),
            );
            let destination = loop {
                let candidate = spec.node_id(
                    rng.gen_range(0..spec.rows),
                    rng.gen_range(0..spec.cols),
                );
                if candidate != origin {
                    break candidate;
                }
            };
            Trip {
                person_id,
                origin,
                destination,
                departure_s: rng.gen_range(0..43_200),
                mode: TravelMode::CarCarpool,
                service_type: ServiceType::None,
                activity: ActivityType::Work,
            }
        })
        .collect()
}

/// Noisy synthetic samples drawn from a known production model.
pub fn synthetic_mfd_samples(n: usize, seed: u64) -> Vec<MfdSample> {
    let params = MfdParams::vehicle(0.5, 0.0, -1e-6, 0.0, -0.01);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let phase = i as f64 / n as f64;
            let a = 500.0 * (0.1 + 0.9 * (phase * std::f64::consts::PI).sin().abs());
            let gamma = 5.0 + 0.05 * a;
            let p = eval_vmfd(&params, a, gamma).unwrap() * (1.0 + rng.gen_range(-0.01..0.01));
            MfdSample {
                t_s: (i * 300) as u32,
                accumulation_veh: a,
                production_veh_km_h: p,
                gamma_veh_km: gamma,
                passenger_accumulation: 0.0,
                passenger_production_km_h: 0.0,
                per_mode_accumulation: Default::default(),
            }
        })
        .collect()
}
