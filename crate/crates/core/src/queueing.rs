//! Analytic performance of the per-queue multi-class M/G/1 processor-sharing model.
//!
//! Everything here works on a [`ServiceTable`]: the bare transmission time
//! `s_ij = F / (K_j r_ij)` of a mean-size file from queue `j` to location `i`,
//! plus the arrival weights `alpha_i`. Loads are `rho_j = lambda * sum_{i->j} alpha_i s_ij`
//! and the mean sojourn of class `i` at queue `j` is `s_ij / (1 - rho_j)`.

use serde::Serialize;
use thiserror::Error;

use crate::phy::LinkTable;
use crate::scenario::TrafficProfile;
use crate::ua::Association;

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("queue {queue} is unstable (rho = {rho})")]
    Unstable { queue: usize, rho: f64 },
    #[error("location {location} is assigned to queue {queue} which does not cover it")]
    Uncovered { location: usize, queue: usize },
}

/// Transmission times and arrival weights for one (scenario, RA scheme).
#[derive(Clone, Debug, PartialEq)]
pub struct ServiceTable {
    n_loc: usize,
    n_queues: usize,
    /// Row-major seconds; `INFINITY` marks uncovered pairs.
    secs: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl ServiceTable {
    pub fn from_link(link: &LinkTable, traffic: &TrafficProfile, file_bits: f64) -> Self {
        let n_loc = link.n_locations();
        let n_queues = link.n_virtuals();
        let mut secs = Vec::with_capacity(n_loc * n_queues);
        for i in 0..n_loc {
            for j in 0..n_queues {
                let r = link.rate(i, j);
                secs.push(if r > 0.0 {
                    file_bits / (link.channels(j) as f64 * r)
                } else {
                    f64::INFINITY
                });
            }
        }
        ServiceTable {
            n_loc,
            n_queues,
            secs,
            alpha: traffic.alpha.clone(),
        }
    }

    /// `rows[i][j]` seconds, `None` for uncovered pairs.
    pub fn from_rows(rows: &[Vec<Option<f64>>], alpha: Vec<f64>) -> Self {
        let n_queues = rows.first().map_or(0, Vec::len);
        assert_eq!(rows.len(), alpha.len());
        assert!(rows.iter().all(|r| r.len() == n_queues));
        ServiceTable {
            n_loc: rows.len(),
            n_queues,
            secs: rows
                .iter()
                .flatten()
                .map(|s| s.unwrap_or(f64::INFINITY))
                .collect(),
            alpha,
        }
    }

    pub fn n_locations(&self) -> usize {
        self.n_loc
    }

    pub fn n_queues(&self) -> usize {
        self.n_queues
    }

    /// `F / (K_j r_ij)`, infinite when uncovered.
    #[inline]
    pub fn secs(&self, i: usize, j: usize) -> f64 {
        self.secs[i * self.n_queues + j]
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.secs(i, j).is_finite()
    }

    /// Load contribution per unit arrival rate, `alpha_i s_ij`.
    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.alpha[i] * self.secs(i, j)
    }

    pub fn allowed_queues(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_queues).filter(move |&j| self.allowed(i, j))
    }

    pub fn total_weight(&self) -> f64 {
        self.alpha.iter().sum()
    }

    pub fn check(&self, assoc: &Association) -> Result<(), QueueError> {
        for (i, &j) in assoc.target.iter().enumerate() {
            if j >= self.n_queues || !self.allowed(i, j) {
                return Err(QueueError::Uncovered { location: i, queue: j });
            }
        }
        Ok(())
    }
}

/// `sum_{i->j} alpha_i s_ij` per queue, i.e. the load at unit arrival rate.
pub fn unit_loads(assoc: &Association, table: &ServiceTable) -> Vec<f64> {
    let mut w = vec![0.0; table.n_queues()];
    for (i, &j) in assoc.target.iter().enumerate() {
        w[j] += table.cost(i, j);
    }
    w
}

pub fn loads(assoc: &Association, table: &ServiceTable, lambda: f64) -> Vec<f64> {
    unit_loads(assoc, table).into_iter().map(|w| lambda * w).collect()
}

/// Every load within the engineering cap, boundary included.
pub fn is_stable(rho: &[f64], rho_bar: f64) -> bool {
    rho.iter().all(|&r| r <= rho_bar)
}

/// Largest arrival rate keeping every load at or below `rho_bar`; infinite without traffic.
pub fn lambda_max_of_rule(assoc: &Association, table: &ServiceTable, rho_bar: f64) -> f64 {
    let worst = unit_loads(assoc, table).into_iter().fold(0.0, f64::max);
    if worst > 0.0 {
        rho_bar / worst
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DelayReport {
    pub rho: Vec<f64>,
    /// Mean sojourn per location, seconds.
    pub t_per_class: Vec<f64>,
    /// Arrival-weighted mean sojourn.
    pub t_system: f64,
    /// Max over all locations, including zero-weight ones.
    pub t_max: f64,
    /// `sum_i lambda_i T_i`.
    pub weighted_sum: f64,
    /// `sum_j rho_j / (1 - rho_j)`.
    pub occupancy_sum: f64,
    /// Some load lies in `(rho_bar, 1)`: stable but above the engineering cap.
    pub above_cap: bool,
    /// Some location has zero arrival weight.
    pub has_zero_weight: bool,
}

pub fn delays(
    assoc: &Association,
    table: &ServiceTable,
    lambda: f64,
    rho_bar: f64,
) -> Result<DelayReport, QueueError> {
    table.check(assoc)?;
    let rho = loads(assoc, table, lambda);
    if let Some((queue, &r)) = rho.iter().enumerate().find(|(_, &r)| r >= 1.0) {
        return Err(QueueError::Unstable { queue, rho: r });
    }
    let t_per_class: Vec<f64> = assoc
        .target
        .iter()
        .enumerate()
        .map(|(i, &j)| table.secs(i, j) / (1.0 - rho[j]))
        .collect();
    let total = table.total_weight();
    let t_system = if total > 0.0 {
        t_per_class
            .iter()
            .zip(&table.alpha)
            .map(|(t, a)| a * t)
            .sum::<f64>()
            / total
    } else {
        0.0
    };
    let weighted_sum = t_per_class
        .iter()
        .zip(&table.alpha)
        .map(|(t, a)| lambda * a * t)
        .sum();
    let occupancy_sum = rho.iter().map(|r| r / (1.0 - r)).sum();
    Ok(DelayReport {
        t_max: t_per_class.iter().copied().fold(0.0, f64::max),
        above_cap: rho.iter().any(|&r| r > rho_bar),
        has_zero_weight: table.alpha.iter().any(|&a| a == 0.0),
        rho,
        t_per_class,
        t_system,
        weighted_sum,
        occupancy_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(secs: f64) -> ServiceTable {
        ServiceTable::from_rows(&[vec![Some(secs)]], vec![1.0])
    }

    #[test]
    fn load_reference_value() {
        // F = 1e6, K = 50, r = 168000 * 1.91 bits/s.
        let s = 1e6 / (50.0 * 320_880.0);
        let rho = loads(&Association::new(vec![0]), &single(s), 1.0);
        assert!((rho[0] - 0.062_328).abs() < 1e-6);
        assert_eq!(loads(&Association::new(vec![0]), &single(s), 0.0), vec![0.0]);
    }

    #[test]
    fn moving_a_location_moves_exactly_its_term() {
        let t = ServiceTable::from_rows(
            &[vec![Some(0.1), Some(0.1)], vec![Some(0.2), Some(0.3)]],
            vec![0.4, 0.6],
        );
        let a = loads(&Association::new(vec![0, 0]), &t, 2.0);
        let b = loads(&Association::new(vec![1, 0]), &t, 2.0);
        assert!((a[0] - b[0] - 2.0 * 0.4 * 0.1).abs() < 1e-15);
        assert!((b[1] - a[1] - 2.0 * 0.4 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn stability_boundary_inclusive() {
        assert!(is_stable(&[0.94, 0.95], 0.95));
        assert!(!is_stable(&[0.951], 0.95));
        assert!(is_stable(&[], 0.95));
    }

    #[test]
    fn lambda_max_inversion() {
        let a = Association::new(vec![0]);
        assert!((lambda_max_of_rule(&a, &single(0.05), 0.95) - 19.0).abs() < 1e-12);
        let t2 = single(0.1);
        assert!((lambda_max_of_rule(&a, &t2, 0.95) - 9.5).abs() < 1e-12);
        let empty = ServiceTable::from_rows(&[vec![Some(1.0)]], vec![0.0]);
        assert!(lambda_max_of_rule(&a, &empty, 0.95).is_infinite());
    }

    #[test]
    fn delay_reference_values() {
        let a = Association::new(vec![0]);
        // K r = 1e7 bits/s, F = 1e6 bits: s = 0.1 s; rho = 0.5 needs lambda = 5.
        let r = delays(&a, &single(0.1), 5.0, 0.95).unwrap();
        assert!((r.t_per_class[0] - 0.2).abs() < 1e-15);
        assert!((r.t_system - 0.2).abs() < 1e-15);
        let idle = delays(&a, &single(0.1), 0.0, 0.95).unwrap();
        assert_eq!(idle.t_per_class[0], 0.1);
    }

    #[test]
    fn unstable_queue_rejected() {
        let a = Association::new(vec![0]);
        assert_eq!(
            delays(&a, &single(0.1), 10.0, 0.95),
            Err(QueueError::Unstable { queue: 0, rho: 1.0 })
        );
        let r = delays(&a, &single(0.1), 9.7, 0.95).unwrap();
        assert!(r.above_cap);
    }

    #[test]
    fn uncovered_target_rejected() {
        let t = ServiceTable::from_rows(&[vec![None, Some(0.1)]], vec![1.0]);
        assert!(matches!(
            delays(&Association::new(vec![0]), &t, 1.0, 0.95),
            Err(QueueError::Uncovered { location: 0, queue: 0 })
        ));
    }

    #[test]
    fn zero_weight_location_counts_in_max_only() {
        let t = ServiceTable::from_rows(&[vec![Some(0.1)], vec![Some(5.0)]], vec![1.0, 0.0]);
        let r = delays(&Association::new(vec![0, 0]), &t, 1.0, 0.95).unwrap();
        assert!(r.has_zero_weight);
        assert!((r.t_max - 5.0 / 0.9).abs() < 1e-12);
        assert!((r.t_system - 0.1 / 0.9).abs() < 1e-12);
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<Option<f64>>>, Vec<f64>, Vec<usize>)> {
        (1usize..8, 1usize..4).prop_flat_map(|(l, q)| {
            (
                proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, q), l),
                proptest::collection::vec(0.01f64..1.0, l),
                proptest::collection::vec(0..q, l),
            )
                .prop_map(|(rows, w, t)| {
                    let s: f64 = w.iter().sum();
                    (
                        rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
                        w.into_iter().map(|x| x / s).collect(),
                        t,
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn delay_monotone_in_lambda((rows, alpha, target) in instance(), f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
            let t = ServiceTable::from_rows(&rows, alpha);
            let a = Association::new(target);
            let lmax = lambda_max_of_rule(&a, &t, 0.95);
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let d_lo = delays(&a, &t, lo * lmax, 0.95).unwrap();
            let d_hi = delays(&a, &t, hi * lmax, 0.95).unwrap();
            for (x, y) in d_lo.t_per_class.iter().zip(&d_hi.t_per_class) {
                prop_assert!(x <= y);
            }
        }

        #[test]
        fn lambda_max_is_the_stability_boundary((rows, alpha, target) in instance()) {
            let t = ServiceTable::from_rows(&rows, alpha);
            let a = Association::new(target);
            let lmax = lambda_max_of_rule(&a, &t, 0.95);
            prop_assert!(is_stable(&loads(&a, &t, lmax * (1.0 - 1e-12)), 0.95));
            prop_assert!(!is_stable(&loads(&a, &t, lmax * (1.0 + 1e-9)), 0.95));
        }
    }
}
