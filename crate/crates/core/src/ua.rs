//! Physical-layer user association rules.
//!
//! All rules only consider covered pairs (positive rate) and break ties toward
//! the lowest queue id.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::{Band, LinkTable};
use crate::scenario::{linear_to_db, path_loss_db, Scenario};

#[derive(Debug, Error, PartialEq)]
pub enum UaError {
    #[error("location {0} is not covered by any base station")]
    Uncovered(usize),
}

/// Location -> serving queue.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Association {
    pub target: Vec<usize>,
}

impl Association {
    pub fn new(target: Vec<usize>) -> Self {
        Association { target }
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// True when every location targets a queue that covers it.
    pub fn is_valid_for(&self, link: &LinkTable) -> bool {
        self.target.len() == link.n_locations()
            && self
                .target
                .iter()
                .enumerate()
                .all(|(i, &j)| j < link.n_virtuals() && link.covered(i, j))
    }
}

/// Association rule identifiers, as used on the command line and in result tables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Rule {
    BestSinr,
    RangeExtension { prefer: PsdMacroBand },
    SmallCellFirst { beta_db: f64 },
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::BestSinr => "best-sinr",
            Rule::RangeExtension { .. } => "re",
            Rule::SmallCellFirst { .. } => "scf",
        }
    }

    pub fn apply(&self, scenario: &Scenario, link: &LinkTable) -> Result<Association, UaError> {
        match *self {
            Rule::BestSinr => best_sinr(link),
            Rule::RangeExtension { prefer } => range_extension(scenario, link, prefer),
            Rule::SmallCellFirst { beta_db } => small_cell_first(link, beta_db),
        }
    }
}

/// Argmax over `candidates` of `score`, lowest index on ties.
fn argmax_by(candidates: impl Iterator<Item = usize>, score: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in candidates {
        let s = score(j);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.map(|(j, _)| j)
}

fn covered(link: &LinkTable, i: usize) -> impl Iterator<Item = usize> + '_ {
    (0..link.n_virtuals()).filter(move |&j| link.covered(i, j))
}

pub fn best_sinr(link: &LinkTable) -> Result<Association, UaError> {
    (0..link.n_locations())
        .map(|i| argmax_by(covered(link, i), |j| link.sinr(i, j)).ok_or(UaError::Uncovered(i)))
        .collect::<Result<_, _>>()
        .map(Association::new)
}

/// Which of a PSD macro's two queues receives range-extension users; both share one path loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsdMacroBand {
    #[default]
    Dedicated,
    Shared,
}

/// Minimum path loss, shadowing and transmit power ignored.
pub fn range_extension(
    scenario: &Scenario,
    link: &LinkTable,
    prefer: PsdMacroBand,
) -> Result<Association, UaError> {
    let layout = &scenario.layout;
    let preferred_band = match prefer {
        PsdMacroBand::Dedicated => Band::Dedicated,
        PsdMacroBand::Shared => Band::Shared,
    };
    (0..link.n_locations())
        .map(|i| {
            let mut best: Option<(usize, f64, bool)> = None;
            for j in covered(link, i) {
                let v = &link.virtuals[j];
                let pl = path_loss_db(v.kind, layout.location_bs_distance(i, v.physical_bs));
                let preferred = v.band == preferred_band;
                let better = match best {
                    None => true,
                    Some((bj, bpl, bpref)) => {
                        pl < bpl
                            || (pl == bpl
                                && link.virtuals[bj].physical_bs == v.physical_bs
                                && preferred
                                && !bpref)
                    }
                };
                if better {
                    best = Some((j, pl, preferred));
                }
            }
            best.map(|(j, _, _)| j).ok_or(UaError::Uncovered(i))
        })
        .collect::<Result<_, _>>()
        .map(Association::new)
}

/// Best small cell when its SINR exceeds `beta_db`, best SINR overall otherwise.
/// `beta_db = -inf` keeps every covered small cell eligible.
pub fn small_cell_first(link: &LinkTable, beta_db: f64) -> Result<Association, UaError> {
    use crate::scenario::BsKind;
    (0..link.n_locations())
        .map(|i| {
            let sc = argmax_by(
                covered(link, i).filter(|&j| link.virtuals[j].kind == BsKind::Small),
                |j| link.sinr(i, j),
            );
            match sc {
                Some(j) if linear_to_db(link.sinr(i, j)) > beta_db => Ok(j),
                _ => argmax_by(covered(link, i), |j| link.sinr(i, j)).ok_or(UaError::Uncovered(i)),
            }
        })
        .collect::<Result<_, _>>()
        .map(Association::new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::{McsTable, RaScheme, VirtualBs};
    use crate::scenario::{db_to_linear, BsKind, ScenarioConfig};
    use proptest::prelude::*;

    fn virtuals(kinds: &[BsKind]) -> Vec<VirtualBs> {
        kinds
            .iter()
            .enumerate()
            .map(|(id, &kind)| VirtualBs {
                id,
                physical_bs: id,
                kind,
                band: Band::Full,
                channels: 10,
                power_per_channel_w: 1.0,
                color: 0,
            })
            .collect()
    }

    fn table(kinds: &[BsKind], rows: Vec<Vec<f64>>) -> LinkTable {
        LinkTable::from_sinr_rows(RaScheme::ccd(), virtuals(kinds), &rows, &McsTable::default())
    }

    #[test]
    fn best_sinr_argmax_and_tie() {
        let t = table(&[BsKind::Macro, BsKind::Small], vec![vec![3.0, 5.0], vec![2.0, 2.0]]);
        assert_eq!(best_sinr(&t).unwrap().target, vec![1, 0]);
    }

    #[test]
    fn uncovered_location_reported() {
        let t = table(&[BsKind::Macro], vec![vec![2.0], vec![0.01]]);
        assert_eq!(best_sinr(&t), Err(UaError::Uncovered(1)));
        assert_eq!(small_cell_first(&t, 3.0), Err(UaError::Uncovered(1)));
    }

    #[test]
    fn scf_prefers_small_cell_above_beta() {
        let m = BsKind::Macro;
        let s = BsKind::Small;
        let t = table(
            &[m, s],
            vec![
                vec![db_to_linear(20.0), db_to_linear(5.0)],
                vec![db_to_linear(10.0), db_to_linear(1.0)],
            ],
        );
        assert_eq!(small_cell_first(&t, 3.0).unwrap().target, vec![1, 0]);
    }

    #[test]
    fn scf_above_top_threshold_is_best_sinr() {
        let s = Scenario::build(&ScenarioConfig {
            macro_count: 7,
            locations_per_cell: 40,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let link = LinkTable::build(&s, RaScheme::psd(40), &McsTable::default()).unwrap();
        // No SINR in the table reaches 1000 dB, so SCF always falls back.
        assert_eq!(small_cell_first(&link, 1000.0).unwrap(), best_sinr(&link).unwrap());
    }

    #[test]
    fn range_extension_prefers_lower_path_loss() {
        // Location 50 m from a small cell and 400 m from its macro: the macro
        // formula gives 113.04 dB, the small-cell one 92.95 dB.
        let pl_small = 140.7 + 36.7 * (0.05f64).log10();
        let pl_macro = 128.0 + 37.6 * (0.4f64).log10();
        assert!((pl_small - 92.95).abs() < 5e-3 && (pl_macro - 113.04).abs() < 5e-3);
        assert!(pl_small < pl_macro);
        assert!((path_loss_db(BsKind::Macro, 400.0) - pl_macro).abs() < 1e-12);
        assert!((path_loss_db(BsKind::Small, 50.0) - pl_small).abs() < 1e-12);
    }

    #[test]
    fn range_extension_without_small_cells_picks_home_macro() {
        let s = Scenario::build(&ScenarioConfig {
            macro_count: 7,
            small_cells_per_macro: 0,
            locations_per_cell: 30,
            shadowing_std_db: 0.0,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let link = LinkTable::build(&s, RaScheme::ccd(), &McsTable::default()).unwrap();
        let a = range_extension(&s, &link, PsdMacroBand::Dedicated).unwrap();
        for (i, &j) in a.target.iter().enumerate() {
            assert_eq!(link.virtuals[j].physical_bs, s.layout.locations[i].home_macro);
        }
    }

    #[test]
    fn range_extension_psd_band_flag() {
        let s = Scenario::build(&ScenarioConfig {
            macro_count: 1,
            small_cells_per_macro: 0,
            locations_per_cell: 10,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let link = LinkTable::build(&s, RaScheme::psd(50), &McsTable::default()).unwrap();
        let ded = range_extension(&s, &link, PsdMacroBand::Dedicated).unwrap();
        let sh = range_extension(&s, &link, PsdMacroBand::Shared).unwrap();
        for i in 0..link.n_locations() {
            if link.covered(i, 0) && link.covered(i, 1) {
                assert_eq!(link.virtuals[ded.target[i]].band, Band::Dedicated);
                assert_eq!(link.virtuals[sh.target[i]].band, Band::Shared);
            }
        }
    }

    fn random_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(0.3f64..200.0, 3), 5)
    }

    proptest! {
        #[test]
        fn best_sinr_matches_exhaustive_argmax(rows in random_rows()) {
            let t = table(&[BsKind::Macro, BsKind::Small, BsKind::Small], rows.clone());
            let a = best_sinr(&t).unwrap();
            for (i, row) in rows.iter().enumerate() {
                let j = a.target[i];
                for (k, &g) in row.iter().enumerate() {
                    if t.covered(i, k) {
                        prop_assert!(g < row[j] || (g == row[j] && k >= j));
                    }
                }
            }
        }

        #[test]
        fn best_sinr_scale_invariant(rows in random_rows(), scale in 0.5f64..4.0) {
            let kinds = [BsKind::Macro, BsKind::Small, BsKind::Small];
            // Keep every entry above the coverage floor so coverage is scale independent.
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.into_iter().map(|g| g + 1.0).collect()).collect();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|g| g * scale).collect()).collect();
            prop_assert_eq!(best_sinr(&table(&kinds, rows)).unwrap(), best_sinr(&table(&kinds, scaled)).unwrap());
        }

        #[test]
        fn scf_minus_infinity_prefers_any_covered_small_cell(rows in random_rows()) {
            let kinds = [BsKind::Macro, BsKind::Small, BsKind::Small];
            let t = table(&kinds, rows.clone());
            let a = small_cell_first(&t, f64::NEG_INFINITY).unwrap();
            for i in 0..rows.len() {
                let sc: Vec<usize> = (1..3).filter(|&j| t.covered(i, j)).collect();
                let expected = if sc.is_empty() {
                    best_sinr(&t).unwrap().target[i]
                } else {
                    *sc.iter().fold(&sc[0], |b, j| if rows[i][*j] > rows[i][*b] { j } else { b })
                };
                prop_assert_eq!(a.target[i], expected);
            }
        }
    }
}
