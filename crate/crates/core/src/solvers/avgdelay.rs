//! Lower bound on the minimum average system delay.
//!
//! Since `sum_i lambda_i T_i = sum_j rho_j / (1 - rho_j) = sum_j 1/(1 - rho_j) - N`
//! for `N` queues, minimizing the average delay is minimizing
//! `f(x) = sum_j 1/(1 - rho_j(x))`. Relaxing `x` to fractional assignments
//! gives a convex program whose optimum `q*` bounds the integer optimum from
//! below: `(q* - N) / (lambda sum alpha) <= min d2`.
//!
//! The relaxation is solved by block pairwise Frank-Wolfe steps (one location
//! at a time, mass moved from its worst active queue to its best queue with an
//! exact line search). Optimality is certified by the Lagrangian dual
//!
//! ```text
//! g(y) = sum_j min_{0 <= r <= rho_bar} (1/(1-r) - y_j r) + sum_i min_j y_j lambda alpha_i s_ij
//! ```
//!
//! which is a lower bound on `q*` for every `y >= 0`. It is evaluated at
//! `y = grad f` and, if that leaves a gap, improved by exact coordinate ascent.

use std::time::Instant;

use crate::queueing::ServiceTable;
use crate::ua::Association;

use super::minmax_load::{solve_minmax_load, MinMaxLoad};
use super::{Budget, Bundle, Certificate, MetricKind, OptResult, SolverError};

#[derive(Clone, Debug, PartialEq)]
pub struct AvgDelayBound {
    /// Reported lower bound on the minimum average system delay, seconds.
    pub bound: f64,
    /// Relaxed objective `sum_j 1/(1-rho_j)` at the final fractional point.
    pub primal: f64,
    /// Best dual value: a certified lower bound on the relaxed optimum.
    pub dual: f64,
    /// `primal - dual`.
    pub gap: f64,
    pub converged: bool,
    /// Relaxed loads at the final point.
    pub rho: Vec<f64>,
    pub passes: usize,
    pub n_queues: usize,
}

fn objective(rho: &[f64]) -> f64 {
    rho.iter().map(|r| 1.0 / (1.0 - r)).sum()
}

/// `min_{0 <= r <= rho_bar} 1/(1-r) - y r`.
fn conjugate_term(y: f64, rho_bar: f64) -> f64 {
    let r = best_load(y, rho_bar);
    1.0 / (1.0 - r) - y * r
}

fn best_load(y: f64, rho_bar: f64) -> f64 {
    if y <= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / y.sqrt()).min(rho_bar)
    }
}

struct Relaxation<'a> {
    table: &'a ServiceTable,
    lambda: f64,
    rho_bar: f64,
    /// Dense `[location][queue]` fractional assignment.
    x: Vec<f64>,
    rho: Vec<f64>,
}

impl Relaxation<'_> {
    fn nq(&self) -> usize {
        self.table.n_queues()
    }

    fn w(&self, i: usize, j: usize) -> f64 {
        self.lambda * self.table.cost(i, j)
    }

    fn dual(&self, y: &[f64]) -> f64 {
        let mut g: f64 = y.iter().map(|&v| conjugate_term(v, self.rho_bar)).sum();
        for i in 0..self.table.n_locations() {
            g += self
                .table
                .allowed_queues(i)
                .map(|j| y[j] * self.w(i, j))
                .fold(f64::INFINITY, f64::min);
        }
        g
    }

    fn gradient(&self) -> Vec<f64> {
        self.rho.iter().map(|r| 1.0 / ((1.0 - r) * (1.0 - r))).collect()
    }

    /// One sweep of pairwise steps over all locations.
    fn pass(&mut self) {
        let nq = self.nq();
        let full = self.rho_bar * (1.0 - 1e-14);
        for i in 0..self.table.n_locations() {
            if self.table.alpha[i] == 0.0 {
                continue;
            }
            let row = i * nq;
            let score = |j: usize, rho: &[f64]| self.table.secs(i, j) / ((1.0 - rho[j]) * (1.0 - rho[j]));
            let mut to = None::<(usize, f64)>;
            let mut from = None::<(usize, f64)>;
            for j in self.table.allowed_queues(i) {
                let s = score(j, &self.rho);
                if self.rho[j] < full && to.is_none_or(|b| s < b.1) {
                    to = Some((j, s));
                }
                if self.x[row + j] > 0.0 && from.is_none_or(|b| s > b.1) {
                    from = Some((j, s));
                }
            }
            let (Some((b, sb)), Some((a, sa))) = (to, from) else {
                continue;
            };
            if a == b || sb >= sa * (1.0 - 1e-15) {
                continue;
            }
            let u = self.w(i, a);
            let w = self.w(i, b);
            let (ra, rb) = (self.rho[a], self.rho[b]);
            // Stationary point of 1/(1 - ra + u d) + 1/(1 - rb - w d).
            let d_star = (u.sqrt() * (1.0 - rb) - w.sqrt() * (1.0 - ra)) / (w.sqrt() * u + u.sqrt() * w);
            let d = d_star.min(self.x[row + a]).min((self.rho_bar - rb) / w).max(0.0);
            if d <= 0.0 {
                continue;
            }
            if d >= self.x[row + a] {
                self.x[row + b] += self.x[row + a];
                self.x[row + a] = 0.0;
            } else {
                self.x[row + a] -= d;
                self.x[row + b] += d;
            }
            self.rho[a] = (ra - u * d).max(0.0);
            self.rho[b] = (rb + w * d).min(self.rho_bar);
        }
    }

    /// Recomputes loads from `x` to shed accumulated rounding.
    fn refresh(&mut self) {
        let nq = self.nq();
        self.rho.iter_mut().for_each(|r| *r = 0.0);
        for i in 0..self.table.n_locations() {
            for j in self.table.allowed_queues(i) {
                self.rho[j] += self.x[i * nq + j] * self.w(i, j);
            }
        }
    }

    /// Exact maximization of the dual along coordinate `j`.
    fn ascend(&self, y: &mut [f64], j: usize) {
        let mut total = 0.0;
        let mut breaks: Vec<(f64, f64)> = Vec::new();
        for i in 0..self.table.n_locations() {
            if !self.table.allowed(i, j) {
                continue;
            }
            let wj = self.w(i, j);
            if wj == 0.0 {
                continue;
            }
            let other = self
                .table
                .allowed_queues(i)
                .filter(|&k| k != j)
                .map(|k| y[k] * self.w(i, k))
                .fold(f64::INFINITY, f64::min);
            total += wj;
            breaks.push((other / wj, wj));
        }
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Slope is (load still preferring j) - best_load(y); load steps down at each break.
        let target = |load: f64| {
            if load < self.rho_bar {
                1.0 / ((1.0 - load) * (1.0 - load))
            } else {
                f64::INFINITY
            }
        };
        let mut load = total;
        let mut lo = 0.0;
        for &(b, wj) in &breaks {
            let y_star = target(load).max(lo);
            if y_star <= b {
                y[j] = y_star;
                return;
            }
            lo = b;
            load -= wj;
        }
        let y_star = target(load.max(0.0)).max(lo);
        if y_star.is_finite() {
            y[j] = y_star;
        }
    }
}

/// Certified lower bound on the minimum average system delay at arrival rate `lambda`.
///
/// The relaxation starts from the min-max-load association (which respects
/// every load cap whenever `lambda` is feasible). The bound is
/// `(dual - N) / (lambda sum alpha)` with the best dual value found; once the
/// gap is within `tol` that dual is at least `primal - tol`.
pub fn avgdelay_lower_bound(
    table: &ServiceTable,
    lambda: f64,
    rho_bar: f64,
    tol: f64,
    warm_starts: &[Association],
    budget: &Budget,
) -> Result<AvgDelayBound, SolverError> {
    let init = solve_minmax_load(table, warm_starts, budget)?;
    avgdelay_lower_bound_from(table, lambda, rho_bar, tol, &init, budget)
}

/// [`avgdelay_lower_bound`] starting from an already solved min-max-load problem on `table`.
pub fn avgdelay_lower_bound_from(
    table: &ServiceTable,
    lambda: f64,
    rho_bar: f64,
    tol: f64,
    init: &MinMaxLoad,
    budget: &Budget,
) -> Result<AvgDelayBound, SolverError> {
    assert!(tol > 0.0 && lambda > 0.0);
    if lambda * init.lower_bound > rho_bar * (1.0 + 1e-12) {
        return Err(SolverError::Infeasible {
            lambda,
            load_lower_bound: init.lower_bound,
        });
    }
    if lambda * init.value > rho_bar {
        return Err(SolverError::BudgetExceeded { lambda });
    }
    let nq = table.n_queues();
    let mut x = vec![0.0; table.n_locations() * nq];
    for (i, &j) in init.association.target.iter().enumerate() {
        x[i * nq + j] = 1.0;
    }
    let mut relax = Relaxation {
        table,
        lambda,
        rho_bar,
        x,
        rho: vec![0.0; nq],
    };
    relax.refresh();

    let mut primal = objective(&relax.rho);
    let mut dual = relax.dual(&relax.gradient());
    let mut passes = 0;
    while primal - dual > tol && passes < budget.relax_passes {
        relax.pass();
        passes += 1;
        if passes % 16 == 0 {
            relax.refresh();
        }
        primal = objective(&relax.rho);
        dual = dual.max(relax.dual(&relax.gradient()));
    }
    relax.refresh();
    primal = objective(&relax.rho);
    if primal - dual > tol {
        let mut y = relax.gradient();
        for _ in 0..20 {
            let before = relax.dual(&y);
            for j in 0..nq {
                relax.ascend(&mut y, j);
            }
            let after = relax.dual(&y);
            dual = dual.max(after);
            if primal - dual <= tol || after <= before * (1.0 + 1e-12) {
                break;
            }
        }
    }
    dual = dual.min(primal);
    let gap = primal - dual;
    let converged = gap <= tol;
    let arrivals = lambda * table.total_weight();
    Ok(AvgDelayBound {
        bound: (dual - nq as f64) / arrivals,
        primal,
        dual,
        gap,
        converged,
        rho: relax.rho,
        passes,
        n_queues: nq,
    })
}

/// [`avgdelay_lower_bound`] wrapped as an [`OptResult`].
pub fn avgdelay_result(
    bundle: &Bundle,
    lambda: f64,
    tol: f64,
    warm_starts: &[Association],
    budget: &Budget,
) -> Result<OptResult, SolverError> {
    let start = Instant::now();
    let r = avgdelay_lower_bound(&bundle.table, lambda, bundle.rho_bar, tol, warm_starts, budget)?;
    Ok(OptResult {
        kind: MetricKind::AvgdelayLb,
        ra: bundle.ra,
        value: r.bound,
        association: None,
        certificate: Certificate::LowerBound { gap: r.gap },
        iterations: r.passes as u64,
        wallclock: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]], alpha: &[f64]) -> ServiceTable {
        let rows: Vec<Vec<Option<f64>>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| (x > 0.0).then_some(x)).collect())
            .collect();
        ServiceTable::from_rows(&rows, alpha.to_vec())
    }

    #[test]
    fn single_queue_is_tight() {
        let t = table(&[&[0.2], &[0.1]], &[0.5, 0.5]);
        let lambda = 4.0;
        let rho = lambda * (0.5 * 0.2 + 0.5 * 0.1);
        let exact = rho / (1.0 - rho) / lambda;
        let tol = 1e-6;
        let r = avgdelay_lower_bound(&t, lambda, 0.95, tol, &[], &Budget::default()).unwrap();
        assert!(r.converged);
        assert!(r.bound <= exact);
        assert!(exact - r.bound <= tol / lambda + 1e-12);
    }

    #[test]
    fn symmetric_two_queue_equalizes_loads() {
        // Two identical queues; one location can use either. The relaxed
        // optimum splits it so the loads match.
        let t = table(&[&[0.1, 0.0], &[0.1, 0.1], &[0.0, 0.1]], &[0.5, 0.3, 0.2]);
        let lambda = 5.0;
        let r = avgdelay_lower_bound(&t, lambda, 0.95, 1e-10, &[], &Budget::default()).unwrap();
        // Total load 5 * 0.1 = 0.5, equal split 0.25 each.
        assert!((r.rho[0] - 0.25).abs() < 1e-4, "{:?}", r.rho);
        assert!((r.rho[1] - 0.25).abs() < 1e-4, "{:?}", r.rho);
        assert!(r.converged);
        assert!((r.primal - 2.0 / 0.75).abs() < 1e-8);
    }

    #[test]
    fn dual_never_exceeds_primal_under_cap() {
        // High load pushes a queue to the cap.
        let t = table(&[&[0.1, 0.4], &[0.1, 0.0], &[0.1, 0.5]], &[0.4, 0.3, 0.3]);
        let lambda = 9.0;
        let r = avgdelay_lower_bound(&t, lambda, 0.95, 1e-9, &[], &Budget::default()).unwrap();
        assert!(r.dual <= r.primal + 1e-12);
        assert!(r.rho.iter().all(|&x| x <= 0.95 + 1e-12));
    }

    #[test]
    fn conjugate_matches_bruteforce() {
        for &y in &[0.5, 1.0, 2.0, 10.0, 400.0, 1000.0] {
            let brute = (0..=95_000)
                .map(|k| {
                    let r = k as f64 * 1e-5;
                    1.0 / (1.0 - r) - y * r
                })
                .fold(f64::INFINITY, f64::min);
            assert!((conjugate_term(y, 0.95) - brute).abs() < 1e-6, "y={y}");
        }
    }
}
