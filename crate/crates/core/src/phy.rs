//! Per-channel powers, interferer sets, SINR and MCS rates for each
//! (location, virtual base station) pair under a resource-allocation scheme.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{dbm_to_watts, linear_to_db, BsKind, GainTable, Scenario};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum PhyError {
    #[error("K = {k} outside 1..={max} for {kind:?}")]
    KOutOfRange { kind: RaKind, k: usize, max: usize },
    #[error("{0:?} requires a sub-channel split K")]
    MissingK(RaKind),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RaKind {
    /// Co-channel: every BS uses all M sub-channels.
    Ccd,
    /// Orthogonal: K sub-channels for the small cells, M-K for the macro.
    Od,
    /// Partially shared: K shared sub-channels, M-K macro-only.
    Psd,
}

impl RaKind {
    pub fn name(self) -> &'static str {
        match self {
            RaKind::Ccd => "ccd",
            RaKind::Od => "od",
            RaKind::Psd => "psd",
        }
    }
}

impl std::str::FromStr for RaKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ccd" => Ok(RaKind::Ccd),
            "od" => Ok(RaKind::Od),
            "psd" => Ok(RaKind::Psd),
            _ => Err(format!("unknown RA scheme `{s}` (expected ccd, od or psd)")),
        }
    }
}

/// A resource-allocation scheme with its split parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RaScheme {
    pub kind: RaKind,
    pub k: Option<usize>,
}

impl RaScheme {
    pub const fn ccd() -> Self {
        RaScheme {
            kind: RaKind::Ccd,
            k: None,
        }
    }

    pub const fn od(k: usize) -> Self {
        RaScheme {
            kind: RaKind::Od,
            k: Some(k),
        }
    }

    pub const fn psd(k: usize) -> Self {
        RaScheme {
            kind: RaKind::Psd,
            k: Some(k),
        }
    }

    pub fn new(kind: RaKind, k: Option<usize>) -> Self {
        match kind {
            RaKind::Ccd => RaScheme::ccd(),
            _ => RaScheme { kind, k },
        }
    }

    pub fn validate(&self, m: usize) -> Result<(), PhyError> {
        match (self.kind, self.k) {
            (RaKind::Ccd, _) => Ok(()),
            (kind, None) => Err(PhyError::MissingK(kind)),
            (kind, Some(k)) if k == 0 || k >= m => Err(PhyError::KOutOfRange {
                kind,
                k,
                max: m - 1,
            }),
            _ => Ok(()),
        }
    }

    /// All parameter values worth sweeping: CCD alone, or K = 1..M-1.
    pub fn sweep(kind: RaKind, m: usize) -> Vec<RaScheme> {
        match kind {
            RaKind::Ccd => vec![RaScheme::ccd()],
            _ => (1..m).map(|k| RaScheme { kind, k: Some(k) }).collect(),
        }
    }
}

impl std::fmt::Display for RaScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.k {
            Some(k) => write!(f, "{}(K={k})", self.kind.name()),
            None => write!(f, "{}", self.kind.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    /// All M sub-channels (CCD).
    Full,
    /// The K sub-channels used by small cells.
    Shared,
    /// The M-K sub-channels reserved for macros.
    Dedicated,
}

impl Band {
    pub fn overlaps(self, other: Band) -> bool {
        matches!(
            (self, other),
            (Band::Full, _) | (_, Band::Full) | (Band::Shared, Band::Shared) | (Band::Dedicated, Band::Dedicated)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Full => "full",
            Band::Shared => "shared",
            Band::Dedicated => "dedicated",
        }
    }
}

/// One queue: a physical base station on one band.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VirtualBs {
    pub id: usize,
    pub physical_bs: usize,
    pub kind: BsKind,
    pub band: Band,
    pub channels: usize,
    pub power_per_channel_w: f64,
    pub color: usize,
}

/// Expands physical BSs into queues. Under PSD each macro contributes its
/// dedicated-band queue followed by its shared-band queue.
pub fn expand_virtual(scenario: &Scenario, ra: RaScheme) -> Result<Vec<VirtualBs>, PhyError> {
    let cfg = &scenario.config;
    let m = cfg.total_subchannels_per_macro;
    ra.validate(m)?;
    let p_macro = dbm_to_watts(cfg.p_macro_dbm);
    let p_small = dbm_to_watts(cfg.p_small_dbm);
    let k = ra.k.unwrap_or(0);
    let mut out = Vec::new();
    let mut push = |bs: &crate::scenario::BaseStation, band, channels: usize, budget: f64| {
        out.push(VirtualBs {
            id: out.len(),
            physical_bs: bs.id,
            kind: bs.kind,
            band,
            channels,
            power_per_channel_w: budget / channels as f64,
            color: bs.color,
        });
    };
    for bs in &scenario.layout.base_stations {
        match (ra.kind, bs.kind) {
            (RaKind::Ccd, BsKind::Macro) => push(bs, Band::Full, m, p_macro),
            (RaKind::Ccd, BsKind::Small) => push(bs, Band::Full, m, p_small),
            (RaKind::Od, BsKind::Macro) => push(bs, Band::Dedicated, m - k, p_macro),
            (RaKind::Psd, BsKind::Macro) => {
                push(bs, Band::Dedicated, m - k, p_macro - p_small);
                push(bs, Band::Shared, k, p_small);
            }
            (_, BsKind::Small) => push(bs, Band::Shared, k, p_small),
        }
    }
    Ok(out)
}

/// Co-channel interferers of every queue: other queues on an overlapping band
/// in the same reuse group. Other physical BSs only; the two PSD bands of one
/// macro never overlap.
pub fn interferer_sets(virtuals: &[VirtualBs]) -> Vec<Vec<usize>> {
    virtuals
        .iter()
        .map(|v| {
            virtuals
                .iter()
                .filter(|h| {
                    h.id != v.id
                        && h.physical_bs != v.physical_bs
                        && h.color == v.color
                        && h.band.overlaps(v.band)
                })
                .map(|h| h.id)
                .collect()
        })
        .collect()
}

/// Row-major `[location][virtual]` linear SINR. Every queue transmits all the
/// time, so interference does not depend on load.
pub fn compute_sinr(
    gains: &GainTable,
    virtuals: &[VirtualBs],
    interferers: &[Vec<usize>],
    noise_w: f64,
) -> Vec<f64> {
    let n_v = virtuals.len();
    let mut out = Vec::with_capacity(gains.n_locations() * n_v);
    for i in 0..gains.n_locations() {
        for v in virtuals {
            let signal = v.power_per_channel_w * gains.get(i, v.physical_bs);
            let interference: f64 = interferers[v.id]
                .iter()
                .map(|&h| virtuals[h].power_per_channel_w * gains.get(i, virtuals[h].physical_bs))
                .sum();
            out.push(signal / (noise_w + interference));
        }
    }
    out
}

/// Discrete SINR-to-rate map.
#[derive(Clone, Debug, PartialEq)]
pub struct McsTable {
    pub thresholds_db: Vec<f64>,
    pub efficiencies: Vec<f64>,
    pub subcarriers: u32,
    pub symbols: u32,
    pub subframe_s: f64,
}

impl Default for McsTable {
    /// The 15-level LTE table.
    fn default() -> Self {
        McsTable {
            thresholds_db: vec![
                -6.5, -4.0, -2.6, -1.0, 1.0, 3.0, 6.6, 10.0, 11.4, 11.8, 13.0, 13.8, 15.6, 16.8, 17.6,
            ],
            efficiencies: vec![
                0.15, 0.23, 0.38, 0.60, 0.88, 1.18, 1.48, 1.91, 2.41, 2.73, 3.32, 3.90, 4.52, 5.12, 5.55,
            ],
            subcarriers: 12,
            symbols: 14,
            subframe_s: 1e-3,
        }
    }
}

/// Slack when comparing a dB value converted from linear against a threshold,
/// so that `db_to_linear(t)` maps back onto level `t`.
const THRESHOLD_SLACK_DB: f64 = 1e-9;

impl McsTable {
    /// Bits per second per unit of efficiency: 12 * 14 / 1 ms = 168000.
    pub fn symbol_rate(&self) -> f64 {
        (self.subcarriers * self.symbols) as f64 / self.subframe_s
    }

    /// Highest level whose threshold is at or below `sinr_db`.
    pub fn level(&self, sinr_db: f64) -> Option<usize> {
        self.thresholds_db
            .iter()
            .rposition(|&t| t <= sinr_db + THRESHOLD_SLACK_DB)
    }

    pub fn rate_db(&self, sinr_db: f64) -> f64 {
        self.level(sinr_db)
            .map_or(0.0, |l| self.symbol_rate() * self.efficiencies[l])
    }

    /// Per-sub-channel bit rate; zero below the lowest threshold.
    pub fn rate(&self, sinr: f64) -> f64 {
        if sinr <= 0.0 {
            return 0.0;
        }
        self.rate_db(linear_to_db(sinr))
    }

    /// Every rate the table can produce, including zero.
    pub fn rate_set(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.efficiencies.iter().map(|e| e * self.symbol_rate()))
            .collect()
    }
}

/// SINR and per-channel rate for every (location, queue) pair under one RA scheme.
#[derive(Clone, Debug)]
pub struct LinkTable {
    pub ra: RaScheme,
    pub virtuals: Vec<VirtualBs>,
    n_loc: usize,
    sinr: Vec<f64>,
    rate: Vec<f64>,
}

impl LinkTable {
    pub fn build(scenario: &Scenario, ra: RaScheme, mcs: &McsTable) -> Result<LinkTable, PhyError> {
        let virtuals = expand_virtual(scenario, ra)?;
        let interferers = interferer_sets(&virtuals);
        let sinr = compute_sinr(
            &scenario.gains,
            &virtuals,
            &interferers,
            scenario.config.noise_per_channel_w(),
        );
        let rate = sinr.iter().map(|&g| mcs.rate(g)).collect();
        Ok(LinkTable {
            ra,
            virtuals,
            n_loc: scenario.n_locations(),
            sinr,
            rate,
        })
    }

    /// Builds a table from explicit `[location][queue]` SINR rows.
    pub fn from_sinr_rows(ra: RaScheme, virtuals: Vec<VirtualBs>, rows: &[Vec<f64>], mcs: &McsTable) -> Self {
        assert!(rows.iter().all(|r| r.len() == virtuals.len()));
        let sinr: Vec<f64> = rows.iter().flatten().copied().collect();
        let rate = sinr.iter().map(|&g| mcs.rate(g)).collect();
        LinkTable {
            ra,
            virtuals,
            n_loc: rows.len(),
            sinr,
            rate,
        }
    }

    pub fn n_locations(&self) -> usize {
        self.n_loc
    }

    pub fn n_virtuals(&self) -> usize {
        self.virtuals.len()
    }

    #[inline]
    pub fn sinr(&self, loc: usize, v: usize) -> f64 {
        self.sinr[loc * self.virtuals.len() + v]
    }

    #[inline]
    pub fn rate(&self, loc: usize, v: usize) -> f64 {
        self.rate[loc * self.virtuals.len() + v]
    }

    pub fn channels(&self, v: usize) -> usize {
        self.virtuals[v].channels
    }

    pub fn covered(&self, loc: usize, v: usize) -> bool {
        self.rate(loc, v) > 0.0
    }
}
