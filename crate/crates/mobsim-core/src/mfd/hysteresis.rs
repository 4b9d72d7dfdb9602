//! Hysteresis quantification: the production gap between congestion
//! loading and unloading at equal accumulation.

use serde::{Deserialize, Serialize};

use super::series::MfdSample;
use super::spline::{Smoothing, SmoothingSpline};
use crate::error::Result;

/// One branch of a congestion episode, time-ordered.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Branch {
    pub time_s: Vec<f64>,
    pub accumulation: Vec<f64>,
    pub production: Vec<f64>,
}

impl Branch {
    fn push(&mut self, sample: &MfdSample) {
        self.time_s.push(sample.t_s as f64);
        self.accumulation.push(sample.accumulation_veh);
        self.production.push(sample.production_veh_km_h);
    }

    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }
}

/// Loading/unloading pair around one accumulation peak.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Episode {
    pub loading: Branch,
    pub unloading: Branch,
}

/// Splits a time-ordered sample series into congestion episodes.
///
/// Samples with accumulation at or below `threshold_fraction * max(A)`
/// delimit episodes; within an episode the apex (maximum accumulation,
/// first on ties) closes the loading branch and opens the unloading branch,
/// appearing in both.
pub fn split_branches(samples: &[MfdSample], threshold_fraction: f64) -> Vec<Episode> {
    let max_a = samples.iter().map(|s| s.accumulation_veh).fold(0.0, f64::max);
    if max_a <= 0.0 {
        return Vec::new();
    }
    let threshold = threshold_fraction * max_a;
    let mut episodes = Vec::new();
    let mut current: Vec<&MfdSample> = Vec::new();
    for sample in samples {
        if sample.accumulation_veh > threshold {
            current.push(sample);
        } else if !current.is_empty() {
            episodes.push(close_episode(&current));
            current.clear();
        }
    }
    if !current.is_empty() {
        episodes.push(close_episode(&current));
    }
    episodes
}

fn close_episode(samples: &[&MfdSample]) -> Episode {
    let apex = samples
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| {
            a.accumulation_veh
                .total_cmp(&b.accumulation_veh)
                .then(j.cmp(i))
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut episode = Episode::default();
    for (i, sample) in samples.iter().enumerate() {
        if i <= apex {
            episode.loading.push(sample);
        }
        if i >= apex {
            episode.unloading.push(sample);
        }
    }
    episode
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineConfig {
    pub smoothing: Smoothing,
    /// Number of points on the uniform gap-sampling grid.
    pub grid_points: usize,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig { smoothing: Smoothing::Gcv, grid_points: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HysteresisResult {
    /// Accumulation grid over the branches' common range.
    pub grid_accumulation: Vec<f64>,
    /// Production gap loading minus unloading on the grid.
    pub gap: Vec<f64>,
    /// Time integral of the gap along the unloading clock, in veh-km.
    pub total_veh_km: f64,
    pub loading_window: (f64, f64),
    pub unloading_window: (f64, f64),
    /// False when the branches do not overlap in accumulation.
    pub overlap: bool,
}

impl HysteresisResult {
    fn empty() -> Self {
        HysteresisResult {
            grid_accumulation: Vec::new(),
            gap: Vec::new(),
            total_veh_km: 0.0,
            loading_window: (0.0, 0.0),
            unloading_window: (0.0, 0.0),
            overlap: false,
        }
    }

    pub fn max_gap(&self) -> f64 {
        self.gap.iter().copied().fold(0.0, f64::max)
    }
}

/// Interpolates each branch with a smoothing spline over accumulation,
/// samples the gap `h(A) = P_loading(A) - P_unloading(A)` on a uniform grid
/// over the common range, and integrates it over the unloading branch's
/// clock (trapezoidal) for the total.
pub fn hysteresis(
    loading: &Branch,
    unloading: &Branch,
    cfg: &SplineConfig,
) -> Result<HysteresisResult> {
    if loading.len() < 2 || unloading.len() < 2 {
        return Ok(HysteresisResult::empty());
    }
    let spline_l = SmoothingSpline::fit(&loading.accumulation, &loading.production, cfg.smoothing)?;
    let spline_u =
        SmoothingSpline::fit(&unloading.accumulation, &unloading.production, cfg.smoothing)?;
    let (l_lo, l_hi) = spline_l.knot_range();
    let (u_lo, u_hi) = spline_u.knot_range();
    let lo = l_lo.max(u_lo);
    let hi = l_hi.min(u_hi);
    if !(hi > lo) {
        return Ok(HysteresisResult::empty());
    }

    let n = cfg.grid_points.max(2);
    let mut grid = Vec::with_capacity(n);
    let mut gap = Vec::with_capacity(n);
    for i in 0..n {
        let a = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        grid.push(a);
        gap.push(spline_l.eval(a) - spline_u.eval(a));
    }

    // Time integral along the unloading clock, clamping accumulation into
    // the common range.
    let h_at = |a: f64| {
        let a = a.clamp(lo, hi);
        spline_l.eval(a) - spline_u.eval(a)
    };
    let mut total = 0.0;
    for i in 1..unloading.len() {
        let dt_h = (unloading.time_s[i] - unloading.time_s[i - 1]) / 3600.0;
        let h0 = h_at(unloading.accumulation[i - 1]);
        let h1 = h_at(unloading.accumulation[i]);
        total += 0.5 * (h0 + h1) * dt_h;
    }

    Ok(HysteresisResult {
        grid_accumulation: grid,
        gap,
        total_veh_km: total,
        loading_window: (loading.time_s[0], *loading.time_s.last().expect("non-empty")),
        unloading_window: (unloading.time_s[0], *unloading.time_s.last().expect("non-empty")),
        overlap: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample(t_s: u32, a: f64, p: f64) -> MfdSample {
        MfdSample {
            t_s,
            accumulation_veh: a,
            production_veh_km_h: p,
            gamma_veh_km: 0.0,
            passenger_accumulation: 0.0,
            passenger_production_km_h: 0.0,
            per_mode_accumulation: BTreeMap::new(),
        }
    }

    #[test]
    fn monotone_series_has_loading_only() {
        let samples: Vec<MfdSample> =
            (0..10).map(|i| sample(i * 300, i as f64 * 10.0, i as f64 * 5.0)).collect();
        let episodes = split_branches(&samples, 0.2);
        assert_eq!(episodes.len(), 1);
        assert!(episodes[0].loading.len() >= 2);
        assert_eq!(episodes[0].unloading.len(), 1);
    }

    #[test]
    fn symmetric_triangle_splits_evenly_at_apex() {
        let a = [10.0, 40.0, 70.0, 100.0, 70.0, 40.0, 10.0];
        let samples: Vec<MfdSample> = a
            .iter()
            .enumerate()
            .map(|(i, &av)| sample(i as u32 * 300, av, av))
            .collect();
        let episodes = split_branches(&samples, 0.05);
        assert_eq!(episodes.len(), 1);
        let e = &episodes[0];
        assert_eq!(e.loading.len(), e.unloading.len());
        assert_eq!(e.loading.accumulation.last(), Some(&100.0));
        assert_eq!(e.unloading.accumulation.first(), Some(&100.0));
    }

    #[test]
    fn two_peak_day_gives_two_episodes() {
        let mut samples = Vec::new();
        let mut t = 0u32;
        for &a in &[5.0, 50.0, 90.0, 60.0, 8.0, 6.0, 55.0, 95.0, 50.0, 7.0] {
            samples.push(sample(t, a, a * 2.0));
            t += 300;
        }
        let episodes = split_branches(&samples, 0.2);
        assert_eq!(episodes.len(), 2);
    }

    #[test]
    fn no_traffic_no_episode() {
        let samples: Vec<MfdSample> = (0..5).map(|i| sample(i * 300, 0.0, 0.0)).collect();
        assert!(split_branches(&samples, 0.2).is_empty());
    }

    /// Closed-form loop: loading P = A, unloading P = 0.8 A on a uniform
    /// clock; h(A) = 0.2 A and the total matches a direct trapezoid.
    #[test]
    fn closed_form_loop_matches_oracle() {
        let n = 101;
        let mut loading = Branch::default();
        let mut unloading = Branch::default();
        for i in 0..n {
            let a = 100.0 * i as f64 / (n - 1) as f64;
            loading.time_s.push(i as f64 * 60.0);
            loading.accumulation.push(a);
            loading.production.push(a);
        }
        for i in 0..n {
            let a = 100.0 * (n - 1 - i) as f64 / (n - 1) as f64;
            unloading.time_s.push((n + i) as f64 * 60.0);
            unloading.accumulation.push(a);
            unloading.production.push(0.8 * a);
        }
        let result = hysteresis(&loading, &unloading, &SplineConfig::default()).unwrap();
        assert!(result.overlap);
        for (a, h) in result.grid_accumulation.iter().zip(&result.gap) {
            let expected = 0.2 * a;
            assert!(
                (h - expected).abs() <= 0.01 * expected.abs().max(1e-9),
                "h({a}) = {h}, expected {expected}"
            );
        }
        // Oracle: trapezoid of 0.2*A(t) over the unloading hour.
        let mut oracle = 0.0;
        for i in 1..n {
            let dt_h = 60.0 / 3600.0;
            oracle +=
                0.5 * (0.2 * unloading.accumulation[i - 1] + 0.2 * unloading.accumulation[i]) * dt_h;
        }
        assert!(
            (result.total_veh_km - oracle).abs() <= 0.01 * oracle,
            "{} vs oracle {oracle}",
            result.total_veh_km
        );
    }

    /// A branch against itself has identically zero gap for any smoothing.
    #[test]
    fn self_loop_is_exactly_zero() {
        let mut branch = Branch::default();
        for i in 0..40 {
            let a = 3.0 * i as f64 + (i as f64 * 0.7).sin() * 10.0;
            branch.time_s.push(i as f64 * 300.0);
            branch.accumulation.push(a.abs());
            branch.production.push(a.abs() * 2.0 + (i as f64).cos());
        }
        for cfg in [
            SplineConfig::default(),
            SplineConfig { smoothing: Smoothing::Fixed(10.0), grid_points: 64 },
            SplineConfig { smoothing: Smoothing::Fixed(1e-8), grid_points: 16 },
        ] {
            let result = hysteresis(&branch, &branch, &cfg).unwrap();
            assert!(result.gap.iter().all(|h| *h == 0.0));
            assert_eq!(result.total_veh_km, 0.0);
        }
    }

    #[test]
    fn disjoint_ranges_report_no_overlap() {
        let mut low = Branch::default();
        let mut high = Branch::default();
        for i in 0..5 {
            low.time_s.push(i as f64);
            low.accumulation.push(i as f64);
            low.production.push(1.0);
            high.time_s.push(i as f64);
            high.accumulation.push(100.0 + i as f64);
            high.production.push(1.0);
        }
        let result = hysteresis(&low, &high, &SplineConfig::default()).unwrap();
        assert!(!result.overlap);
        assert_eq!(result.total_veh_km, 0.0);
    }
}
