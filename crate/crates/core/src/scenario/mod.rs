//! Network realizations: geometry, channel gains and spatial traffic.

mod config;
mod layout;

pub use config::{db_to_linear, dbm_to_watts, linear_to_db, ScenarioConfig, TrafficConfig};
pub use layout::{inside_hexagon, rings_for_cluster, BaseStation, BsKind, Layout, Location, Point};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("cluster of {0} macro cells has no wrap-around group (supported: 1, 7, 19)")]
    UnsupportedCluster(usize),
    #[error("small cells at {distance_m} m fall outside the hexagon of radius {radius_m} m")]
    SmallCellOutsideHexagon { distance_m: f64, radius_m: f64 },
    #[error("hot-spot square around small cell {small_cell} contains no location")]
    EmptyHotspot { small_cell: usize },
}

/// Minimum distance at which the macro path-loss formula is applied.
pub const MACRO_MIN_DISTANCE_M: f64 = 35.0;
/// Minimum distance at which the small-cell path-loss formula is applied.
pub const SMALL_MIN_DISTANCE_M: f64 = 10.0;

/// Path loss in dB; distances below the formula's validity floor are clamped to it.
pub fn path_loss_db(kind: BsKind, distance_m: f64) -> f64 {
    match kind {
        BsKind::Macro => 128.0 + 37.6 * (distance_m.max(MACRO_MIN_DISTANCE_M) / 1000.0).log10(),
        BsKind::Small => 140.7 + 36.7 * (distance_m.max(SMALL_MIN_DISTANCE_M) / 1000.0).log10(),
    }
}

/// Linear power gains between every location and every physical base station.
#[derive(Clone, Debug, PartialEq)]
pub struct GainTable {
    n_bs: usize,
    gain: Vec<f64>,
}

impl GainTable {
    /// Row-major `[location][bs]` linear gains.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_bs = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_bs), "ragged gain rows");
        GainTable {
            n_bs,
            gain: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n_locations(&self) -> usize {
        if self.n_bs == 0 {
            0
        } else {
            self.gain.len() / self.n_bs
        }
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    #[inline]
    pub fn get(&self, loc: usize, bs: usize) -> f64 {
        self.gain[loc * self.n_bs + bs]
    }
}

/// Draws one independent shadowing value per (location, BS) pair, in
/// location-major order from a ChaCha8 stream seeded with `seed`.
pub fn sample_gains(layout: &Layout, config: &ScenarioConfig, seed: u64) -> GainTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadow = Normal::new(0.0, config.shadowing_std_db).expect("validated std");
    let n_bs = layout.base_stations.len();
    let mut gain = Vec::with_capacity(layout.locations.len() * n_bs);
    for loc in &layout.locations {
        for bs in &layout.base_stations {
            let d = layout.distance(loc.position, bs.position);
            let s = shadow.sample(&mut rng);
            let db = -path_loss_db(bs.kind, d) - s - config.penetration_loss_db
                + config.antenna_gain_ue_db;
            gain.push(db_to_linear(db));
        }
    }
    GainTable { n_bs, gain }
}

/// Per-location arrival weights, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficProfile {
    pub alpha: Vec<f64>,
}

impl TrafficProfile {
    pub fn homogeneous(n: usize) -> Self {
        TrafficProfile {
            alpha: vec![1.0 / n as f64; n],
        }
    }

    /// Hot locations weigh `ratio` times cold ones; weights are renormalized to sum to one.
    pub fn two_level(hot: &[bool], ratio: f64) -> Self {
        let (w_hot, w_cold) = hotspot_weights(hot.iter().filter(|&&h| h).count(), hot.len(), ratio);
        TrafficProfile {
            alpha: hot.iter().map(|&h| if h { w_hot } else { w_cold }).collect(),
        }
    }

    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

/// `(inside, outside)` weights for `n_hot` of `n_total` locations at the given ratio.
pub fn hotspot_weights(n_hot: usize, n_total: usize, ratio: f64) -> (f64, f64) {
    let cold = 1.0 / (ratio * n_hot as f64 + (n_total - n_hot) as f64);
    (ratio * cold, cold)
}

pub fn build_traffic(config: &ScenarioConfig, layout: &Layout) -> Result<TrafficProfile, ScenarioError> {
    match &config.traffic {
        TrafficConfig::Homogeneous => Ok(TrafficProfile::homogeneous(layout.locations.len())),
        TrafficConfig::Hotspot {
            side_m,
            weight_ratio,
            small_cell_index,
            ..
        } => {
            let b = config.small_cells_per_macro;
            let mut hot = vec![false; layout.locations.len()];
            for m in 0..layout.macro_count {
                let sc_id = layout.macro_count + m * b + small_cell_index;
                let sc = layout.base_stations[sc_id].position;
                let mut count = 0;
                for loc in layout.locations.iter().filter(|l| l.home_macro == m) {
                    let d = loc.position - sc;
                    if d.x.abs() < side_m / 2.0 && d.y.abs() < side_m / 2.0 {
                        hot[loc.id] = true;
                        count += 1;
                    }
                }
                if count == 0 {
                    return Err(ScenarioError::EmptyHotspot { small_cell: sc_id });
                }
            }
            Ok(TrafficProfile::two_level(&hot, *weight_ratio))
        }
    }
}

/// An immutable network realization.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub layout: Layout,
    pub gains: GainTable,
    pub traffic: TrafficProfile,
}

impl Scenario {
    pub fn build(config: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
        let layout = Layout::build(config)?;
        let gains = sample_gains(&layout, config, config.seed);
        let traffic = build_traffic(config, &layout)?;
        Ok(Scenario {
            config: config.clone(),
            layout,
            gains,
            traffic,
        })
    }

    pub fn n_locations(&self) -> usize {
        self.layout.locations.len()
    }

    /// Same locations, traffic and macro gains with every small cell removed.
    pub fn without_small_cells(&self) -> Scenario {
        let m = self.layout.macro_count;
        let mut layout = self.layout.clone();
        layout.base_stations.truncate(m);
        let rows = (0..self.n_locations())
            .map(|i| (0..m).map(|j| self.gains.get(i, j)).collect())
            .collect();
        Scenario {
            config: ScenarioConfig {
                small_cells_per_macro: 0,
                ..self.config.clone()
            },
            layout,
            gains: GainTable::from_rows(rows),
            traffic: self.traffic.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn path_loss_reference_values() {
        // 128 + 37.6 log10(0.5) and 140.7 + 36.7 log10(0.1), evaluated by hand.
        assert!((path_loss_db(BsKind::Macro, 500.0) - 116.681_272).abs() < 1e-5);
        assert!((path_loss_db(BsKind::Small, 100.0) - 104.0).abs() < 1e-9);
        assert_eq!(path_loss_db(BsKind::Macro, 1.0), path_loss_db(BsKind::Macro, 35.0));
        assert_eq!(path_loss_db(BsKind::Small, 0.0), path_loss_db(BsKind::Small, 10.0));
    }

    #[test]
    fn gains_are_deterministic_and_positive() {
        let c = ScenarioConfig {
            macro_count: 7,
            locations_per_cell: 30,
            ..ScenarioConfig::default()
        };
        let a = Scenario::build(&c).unwrap();
        let b = Scenario::build(&c).unwrap();
        assert_eq!(a.gains, b.gains);
        assert!(a.gains.gain.iter().all(|g| g.is_finite() && *g > 0.0));
        let other = Scenario::build(&c.with_seed(2)).unwrap();
        assert_ne!(a.gains, other.gains);
    }

    #[test]
    fn gain_decreases_with_distance_without_shadowing() {
        let c = ScenarioConfig {
            macro_count: 7,
            locations_per_cell: 60,
            shadowing_std_db: 0.0,
            ..ScenarioConfig::default()
        };
        let s = Scenario::build(&c).unwrap();
        for bs in 0..s.layout.base_stations.len() {
            let mut pts: Vec<(f64, f64)> = (0..s.n_locations())
                .map(|i| (s.layout.location_bs_distance(i, bs), s.gains.get(i, bs)))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let floor = match s.layout.base_stations[bs].kind {
                BsKind::Macro => MACRO_MIN_DISTANCE_M,
                BsKind::Small => SMALL_MIN_DISTANCE_M,
            };
            for w in pts.windows(2) {
                if w[0].0 >= floor && w[1].0 > w[0].0 + 1e-6 {
                    assert!(w[1].1 < w[0].1);
                }
            }
        }
    }

    #[test]
    fn macro_only_copy_keeps_macro_gains() {
        let c = ScenarioConfig {
            macro_count: 7,
            locations_per_cell: 20,
            ..ScenarioConfig::default()
        };
        let s = Scenario::build(&c).unwrap();
        let m = s.without_small_cells();
        assert_eq!(m.layout.base_stations.len(), 7);
        assert_eq!(m.gains.n_bs(), 7);
        assert_eq!(m.traffic, s.traffic);
        for i in 0..s.n_locations() {
            for j in 0..7 {
                assert_eq!(m.gains.get(i, j), s.gains.get(i, j));
            }
        }
    }

    #[test]
    fn homogeneous_weight_matches_reference_scale() {
        let t = TrafficProfile::homogeneous(2000 * 19);
        assert!((t.alpha[0] - 2.63e-5).abs() < 5e-8);
        assert!((t.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_hotspot_split() {
        // 500 hot locations in each of 19 cells of 2000 locations, ratio 5.
        let (hot, cold) = hotspot_weights(500 * 19, 2000 * 19, 5.0);
        assert!((hot - 6.58e-5).abs() < 5e-8, "{hot}");
        assert!((cold - 1.32e-5).abs() < 5e-8, "{cold}");
        let total = hot * 9500.0 + cold * 28500.0;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hotspot_profile_from_layout() {
        let c = ScenarioConfig {
            macro_count: 7,
            locations_per_cell: 200,
            traffic: TrafficConfig::Hotspot {
                side_m: 150.0,
                weight_ratio: 5.0,
                small_cell_index: 0,
                locations_in_hotspot: Some(50),
            },
            ..ScenarioConfig::default()
        };
        let s = Scenario::build(&c).unwrap();
        assert!((s.traffic.total() - 1.0).abs() < 1e-12);
        let n_hot = s
            .traffic
            .alpha
            .iter()
            .filter(|&&a| a > 1.5 / s.n_locations() as f64)
            .count();
        assert_eq!(n_hot, 7 * 50);
    }

    #[test]
    fn empty_hotspot_is_an_error() {
        let c = ScenarioConfig {
            macro_count: 1,
            locations_per_cell: 3,
            traffic: TrafficConfig::Hotspot {
                side_m: 1.0,
                weight_ratio: 5.0,
                small_cell_index: 0,
                locations_in_hotspot: None,
            },
            ..ScenarioConfig::default()
        };
        assert!(matches!(
            Scenario::build(&c),
            Err(ScenarioError::EmptyHotspot { .. })
        ));
    }

    proptest! {
        #[test]
        fn wrap_metric_symmetric_and_shorter(
            ax in -700.0f64..700.0, ay in -700.0f64..700.0,
            bx in -700.0f64..700.0, by in -700.0f64..700.0,
        ) {
            let c = ScenarioConfig { macro_count: 7, locations_per_cell: 1, ..ScenarioConfig::default() };
            let l = Layout::build(&c).unwrap();
            let (a, b) = (Point::new(ax, ay), Point::new(bx, by));
            let d1 = l.distance(a, b);
            let d2 = l.distance(b, a);
            prop_assert!((d1 - d2).abs() < 1e-9);
            prop_assert!(d1 <= (a - b).norm() + 1e-9);
        }

        #[test]
        fn traffic_sums_to_one(hot in proptest::collection::vec(any::<bool>(), 1..300), ratio in 0.1f64..20.0) {
            let t = TrafficProfile::two_level(&hot, ratio);
            prop_assert!((t.total() - 1.0).abs() < 1e-12);
        }
    }
}
