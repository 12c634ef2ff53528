use serde::{Deserialize, Serialize};

use super::ScenarioError;

/// Spatial arrival profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficConfig {
    /// Every location gets the same arrival weight.
    Homogeneous,
    /// One square hot-spot per macro cell, centred on one of its small cells.
    Hotspot {
        /// Side of the square, meters.
        #[serde(default = "default_hotspot_side")]
        side_m: f64,
        /// Ratio between the per-location weight inside and outside the square.
        #[serde(default = "default_weight_ratio")]
        weight_ratio: f64,
        /// Which small cell of each macro carries the hot-spot.
        #[serde(default)]
        small_cell_index: usize,
        /// When set, this many of each cell's locations are placed on a dedicated
        /// grid inside the square, the rest on a grid over the remainder of the hexagon.
        #[serde(default)]
        locations_in_hotspot: Option<usize>,
    },
}

fn default_hotspot_side() -> f64 {
    150.0
}

fn default_weight_ratio() -> f64 {
    5.0
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig::Homogeneous
    }
}

/// Declarative description of one network realization.
///
/// Every field has a default so a config file only needs to list overrides.
/// Unknown keys are rejected when deserializing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub macro_count: usize,
    pub small_cells_per_macro: usize,
    pub inter_site_distance_m: f64,
    pub sc_distance_from_center_m: f64,
    pub locations_per_cell: usize,
    pub shadowing_std_db: f64,
    pub penetration_loss_db: f64,
    pub antenna_gain_ue_db: f64,
    pub noise_psd_dbm_hz: f64,
    pub subchannel_bandwidth_hz: f64,
    pub total_subchannels_per_macro: usize,
    pub reuse_factor: usize,
    pub p_macro_dbm: f64,
    pub p_small_dbm: f64,
    pub mean_file_size_bits: f64,
    pub rho_bar: f64,
    pub traffic: TrafficConfig,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            macro_count: 19,
            small_cells_per_macro: 4,
            inter_site_distance_m: 500.0,
            sc_distance_from_center_m: 230.0,
            locations_per_cell: 2000,
            shadowing_std_db: 8.0,
            penetration_loss_db: 20.0,
            antenna_gain_ue_db: 0.0,
            noise_psd_dbm_hz: -174.0,
            subchannel_bandwidth_hz: 180e3,
            total_subchannels_per_macro: 100,
            reuse_factor: 3,
            p_macro_dbm: 46.0,
            p_small_dbm: 30.0,
            mean_file_size_bits: 1e6,
            rho_bar: 0.95,
            traffic: TrafficConfig::Homogeneous,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// The 7-cell, 100-locations-per-cell configuration used for desk-scale runs.
    pub fn desk_scale() -> Self {
        ScenarioConfig {
            macro_count: 7,
            locations_per_cell: 100,
            ..Self::default()
        }
    }

    /// Hexagon circumradius, `isd / sqrt(3)`.
    pub fn cell_radius_m(&self) -> f64 {
        self.inter_site_distance_m / 3f64.sqrt()
    }

    /// Thermal noise integrated over one sub-channel, in watts.
    pub fn noise_per_channel_w(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz + 10.0 * self.subchannel_bandwidth_hz.log10())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ScenarioConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::InvalidConfig(msg));
        if self.macro_count == 0 {
            return bad("macro_count must be positive".into());
        }
        if super::layout::rings_for_cluster(self.macro_count).is_none() {
            return Err(ScenarioError::UnsupportedCluster(self.macro_count));
        }
        if self.locations_per_cell == 0 {
            return bad("locations_per_cell must be positive".into());
        }
        let positive = [
            ("inter_site_distance_m", self.inter_site_distance_m),
            ("subchannel_bandwidth_hz", self.subchannel_bandwidth_hz),
            ("mean_file_size_bits", self.mean_file_size_bits),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let finite = [
            ("shadowing_std_db", self.shadowing_std_db),
            ("penetration_loss_db", self.penetration_loss_db),
            ("antenna_gain_ue_db", self.antenna_gain_ue_db),
            ("noise_psd_dbm_hz", self.noise_psd_dbm_hz),
            ("p_macro_dbm", self.p_macro_dbm),
            ("p_small_dbm", self.p_small_dbm),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if self.shadowing_std_db < 0.0 {
            return bad("shadowing_std_db must be non-negative".into());
        }
        if self.small_cells_per_macro > 0 {
            let d = self.sc_distance_from_center_m;
            if !(d.is_finite() && d > 0.0) {
                return bad(format!("sc_distance_from_center_m must be positive, got {d}"));
            }
            if d >= self.cell_radius_m() {
                return Err(ScenarioError::SmallCellOutsideHexagon {
                    distance_m: d,
                    radius_m: self.cell_radius_m(),
                });
            }
        }
        if self.total_subchannels_per_macro < 2 {
            return bad("total_subchannels_per_macro must be at least 2".into());
        }
        if self.reuse_factor == 0 {
            return bad("reuse_factor must be at least 1".into());
        }
        if !(self.rho_bar > 0.0 && self.rho_bar < 1.0) {
            return bad(format!("rho_bar must lie in (0,1), got {}", self.rho_bar));
        }
        // The PSD macro keeps p_macro - p_small for its dedicated band.
        if self.p_small_dbm >= self.p_macro_dbm {
            return bad("p_small_dbm must be below p_macro_dbm".into());
        }
        if let TrafficConfig::Hotspot {
            side_m,
            weight_ratio,
            small_cell_index,
            locations_in_hotspot,
        } = &self.traffic
        {
            if !(side_m.is_finite() && *side_m > 0.0) {
                return bad(format!("hotspot side_m must be positive, got {side_m}"));
            }
            if !(weight_ratio.is_finite() && *weight_ratio > 0.0) {
                return bad(format!("hotspot weight_ratio must be positive, got {weight_ratio}"));
            }
            if *small_cell_index >= self.small_cells_per_macro {
                return bad(format!(
                    "hotspot small_cell_index {small_cell_index} but only {} small cells per macro",
                    self.small_cells_per_macro
                ));
            }
            if let Some(n) = locations_in_hotspot {
                if *n == 0 || *n >= self.locations_per_cell {
                    return bad(format!(
                        "locations_in_hotspot must lie in 1..{}, got {n}",
                        self.locations_per_cell
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
