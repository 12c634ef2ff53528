//! Min-max per-class delay by bisection over a delay-target feasibility problem.
//!
//! A target `t` is feasible when some association keeps every load at or below
//! `rho_bar` and every class within `t`: location `i` may use queue `j` only if
//! `s_ij <= t (1 - rho_j)`. So each queue's load is capped by
//! `min(rho_bar, 1 - max_{i->j} s_ij / t)`, a cap that tightens as slower
//! locations join. Feasibility is monotone in `t`, which makes bisection valid.

use std::time::Instant;

use crate::queueing::ServiceTable;
use crate::ua::Association;

use super::minmax_load::{check_coverage, solve_minmax_load, MinMaxLoad};
use super::{Budget, Bundle, Certificate, MetricKind, OptResult, SolverError};

#[derive(Clone, Debug, PartialEq)]
pub enum Feasibility {
    Feasible(Association),
    Infeasible,
    /// Neither a witness nor a proof was found within the budget.
    Unknown,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }
}

/// Feasibility problem for one delay target.
struct Target<'a> {
    table: &'a ServiceTable,
    lambda: f64,
    rho_bar: f64,
    t: f64,
}

impl Target<'_> {
    /// Load a single location puts on queue `j`.
    fn load(&self, i: usize, j: usize) -> f64 {
        self.lambda * self.table.cost(i, j)
    }

    /// Cap a member with transmission time `s` imposes on its queue.
    fn cap_from(&self, s: f64) -> f64 {
        (1.0 - s / self.t).min(self.rho_bar)
    }

    /// Pair usable even with nothing else on the queue.
    fn usable(&self, i: usize, j: usize) -> bool {
        let s = self.table.secs(i, j);
        s.is_finite() && self.load(i, j) <= self.cap_from(s)
    }

    fn satisfies(&self, target: &[usize]) -> bool {
        let nq = self.table.n_queues();
        let mut load = vec![0.0; nq];
        let mut cap = vec![self.rho_bar; nq];
        for (i, &j) in target.iter().enumerate() {
            if !self.table.allowed(i, j) {
                return false;
            }
            load[j] += self.load(i, j);
            cap[j] = cap[j].min(self.cap_from(self.table.secs(i, j)));
        }
        load.iter().zip(&cap).all(|(l, c)| l <= c)
    }
}

struct Exact<'a, 'b> {
    p: &'a Target<'b>,
    order: Vec<usize>,
    options: Vec<Vec<usize>>,
    load: Vec<f64>,
    cap: Vec<f64>,
    current: Vec<usize>,
    /// Location checks spent so far.
    work: u64,
    max_work: u64,
}

impl Exact<'_, '_> {
    fn fits(&self, i: usize, j: usize) -> bool {
        self.load[j] + self.p.load(i, j) <= self.cap[j].min(self.p.cap_from(self.p.table.secs(i, j)))
    }

    /// `Some(true)` found, `Some(false)` exhausted subtree, `None` out of budget.
    fn dfs(&mut self, depth: usize) -> Option<bool> {
        if self.work >= self.max_work {
            return None;
        }
        self.work += (self.order.len() - depth) as u64 + 1;
        if depth == self.order.len() {
            return Some(true);
        }
        // Every remaining location still needs some queue it fits on, and the
        // total spare capacity must cover their cheapest loads.
        let mut need = 0.0;
        for &k in &self.order[depth..] {
            let mut cheapest = f64::INFINITY;
            for &j in &self.options[k] {
                if self.fits(k, j) {
                    cheapest = cheapest.min(self.p.load(k, j));
                }
            }
            if cheapest.is_infinite() {
                return Some(false);
            }
            need += cheapest;
        }
        let spare: f64 = self.load.iter().zip(&self.cap).map(|(l, c)| (c - l).max(0.0)).sum();
        if need > spare {
            return Some(false);
        }
        let i = self.order[depth];
        let mut children: Vec<(usize, f64)> = self.options[i]
            .iter()
            .filter(|&&j| self.fits(i, j))
            .map(|&j| {
                let slack = self.cap[j].min(self.p.cap_from(self.p.table.secs(i, j)))
                    - self.load[j]
                    - self.p.load(i, j);
                (j, slack)
            })
            .collect();
        // Most remaining slack first.
        children.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (j, _) in children {
            let (old_load, old_cap) = (self.load[j], self.cap[j]);
            self.load[j] += self.p.load(i, j);
            self.cap[j] = old_cap.min(self.p.cap_from(self.p.table.secs(i, j)));
            self.current[i] = j;
            let r = self.dfs(depth + 1);
            self.load[j] = old_load;
            self.cap[j] = old_cap;
            match r {
                Some(false) => {}
                other => return other,
            }
        }
        Some(false)
    }
}

/// Local search on the total cap violation `sum_j max(0, load_j - cap_j)`.
fn repair(p: &Target, start: &[usize], max_moves: usize) -> Option<Vec<usize>> {
    let table = p.table;
    let nq = table.n_queues();
    let mut target = start.to_vec();
    // Locations whose current queue is unusable even alone go to their best usable one.
    for (i, j) in target.iter_mut().enumerate() {
        if !p.usable(i, *j) {
            *j = table
                .allowed_queues(i)
                .filter(|&k| p.usable(i, k))
                .min_by(|&a, &b| table.secs(i, a).total_cmp(&table.secs(i, b)))?;
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nq];
    for (i, &j) in target.iter().enumerate() {
        members[j].push(i);
    }
    let mut load = vec![0.0; nq];
    for (i, &j) in target.iter().enumerate() {
        load[j] += p.load(i, j);
    }
    // Two slowest transmission times per queue, to get the cap without any one member.
    let top2 = |members: &[usize], j: usize| {
        let mut a = (0.0f64, usize::MAX);
        let mut b = 0.0f64;
        for &i in members {
            let s = table.secs(i, j);
            if s > a.0 {
                b = a.0;
                a = (s, i);
            } else if s > b {
                b = s;
            }
        }
        (a, b)
    };
    let viol = |l: f64, c: f64| (l - c).max(0.0);
    for _ in 0..max_moves {
        let tops: Vec<((f64, usize), f64)> = (0..nq).map(|j| top2(&members[j], j)).collect();
        let cap: Vec<f64> = tops.iter().map(|t| p.cap_from(t.0 .0)).collect();
        let violation: Vec<f64> = (0..nq).map(|j| viol(load[j], cap[j])).collect();
        if violation.iter().all(|&v| v <= 0.0) {
            return p.satisfies(&target).then_some(target);
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for j in (0..nq).filter(|&j| violation[j] > 0.0) {
            for &i in &members[j] {
                let ((s_max, arg), s_second) = tops[j];
                let cap_without = if arg == i { p.cap_from(s_second) } else { p.cap_from(s_max) };
                let from_after = viol(load[j] - p.load(i, j), cap_without);
                for k in table.allowed_queues(i) {
                    if k == j || !p.usable(i, k) {
                        continue;
                    }
                    let to_cap = cap[k].min(p.cap_from(table.secs(i, k)));
                    let to_after = viol(load[k] + p.load(i, k), to_cap);
                    let delta = from_after + to_after - violation[j] - violation[k];
                    if delta < -1e-15 && best.is_none_or(|b| delta < b.2) {
                        best = Some((i, k, delta));
                    }
                }
            }
        }
        let (i, k, _) = best?;
        let j = target[i];
        load[j] -= p.load(i, j);
        load[k] += p.load(i, k);
        members[j].retain(|&x| x != i);
        members[k].push(i);
        target[i] = k;
    }
    None
}

/// Decides whether an association exists with every class delay at most `t`
/// and every load at most `rho_bar`.
///
/// Small instances are searched exhaustively (with propagation) within the
/// node budget. Otherwise the answer comes from a repair heuristic seeded with
/// `hints` (feasible witness) or from relaxation-based infeasibility proofs;
/// if neither settles it the result is [`Feasibility::Unknown`].
pub fn delay_feasible(
    table: &ServiceTable,
    lambda: f64,
    rho_bar: f64,
    t: f64,
    hints: &[Association],
    budget: &Budget,
) -> Feasibility {
    let p = Target {
        table,
        lambda,
        rho_bar,
        t,
    };
    let n_loc = table.n_locations();
    let options: Vec<Vec<usize>> = (0..n_loc)
        .map(|i| table.allowed_queues(i).filter(|&j| p.usable(i, j)).collect())
        .collect();
    if options.iter().any(Vec::is_empty) {
        return Feasibility::Infeasible;
    }
    for h in hints {
        if h.len() == n_loc && p.satisfies(&h.target) {
            return Feasibility::Feasible(h.clone());
        }
    }
    // Relaxation: only usable pairs, loads capped by rho_bar alone.
    let restricted = restrict(table, &options);
    let relaxed = solve_minmax_load(
        &restricted,
        &[],
        &Budget {
            max_nodes: 0,
            ..*budget
        },
    )
    .expect("every location has a usable queue");
    if lambda * relaxed.lower_bound > rho_bar * (1.0 + 1e-12) {
        return Feasibility::Infeasible;
    }
    if p.satisfies(&relaxed.association.target) {
        return Feasibility::Feasible(relaxed.association);
    }

    let mut starts: Vec<Vec<usize>> = hints.iter().filter(|h| h.len() == n_loc).map(|h| h.target.clone()).collect();
    starts.push(relaxed.association.target.clone());
    for s in &starts {
        if let Some(w) = repair(&p, s, budget.repair_moves) {
            debug_assert!(p.satisfies(&w));
            return Feasibility::Feasible(Association::new(w));
        }
    }

    let mut order: Vec<usize> = (0..n_loc).collect();
    order.sort_by(|&a, &b| options[a].len().cmp(&options[b].len()).then(a.cmp(&b)));
    let mut exact = Exact {
        p: &p,
        order,
        options,
        load: vec![0.0; table.n_queues()],
        cap: vec![rho_bar; table.n_queues()],
        current: vec![0; n_loc],
        work: 0,
        max_work: budget.search_work,
    };
    match exact.dfs(0) {
        Some(true) => Feasibility::Feasible(Association::new(exact.current)),
        Some(false) => Feasibility::Infeasible,
        None => Feasibility::Unknown,
    }
}

/// Copy of `table` with everything outside `options` marked uncovered.
fn restrict(table: &ServiceTable, options: &[Vec<usize>]) -> ServiceTable {
    let rows: Vec<Vec<Option<f64>>> = options
        .iter()
        .enumerate()
        .map(|(i, opts)| {
            (0..table.n_queues())
                .map(|j| opts.contains(&j).then(|| table.secs(i, j)))
                .collect()
        })
        .collect();
    ServiceTable::from_rows(&rows, table.alpha.clone())
}

fn max_delay(table: &ServiceTable, target: &[usize], lambda: f64) -> f64 {
    let mut load = vec![0.0; table.n_queues()];
    for (i, &j) in target.iter().enumerate() {
        load[j] += lambda * table.cost(i, j);
    }
    target
        .iter()
        .enumerate()
        .map(|(i, &j)| table.secs(i, j) / (1.0 - load[j]))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxDelay {
    pub association: Association,
    /// Max class delay of `association`.
    pub value: f64,
    /// Initial bracket upper end.
    pub t0: f64,
    /// Final bracket.
    pub lower: f64,
    pub upper: f64,
    /// Feasibility calls made.
    pub iterations: u64,
    /// Every infeasible verdict was proven (not just a failed search).
    pub proven: bool,
}

/// Bisection over the delay target on `[0, t0]`, where `t0` is the max class
/// delay of the min-max-load association, until the bracket is at most `epsilon` wide.
pub fn minmax_delay(
    table: &ServiceTable,
    lambda: f64,
    rho_bar: f64,
    epsilon: f64,
    warm_starts: &[Association],
    budget: &Budget,
) -> Result<MinMaxDelay, SolverError> {
    check_coverage(table)?;
    let init = solve_minmax_load(table, warm_starts, budget)?;
    minmax_delay_from(table, lambda, rho_bar, epsilon, &init, warm_starts, budget)
}

/// [`minmax_delay`] starting from an already solved min-max-load problem on `table`.
pub fn minmax_delay_from(
    table: &ServiceTable,
    lambda: f64,
    rho_bar: f64,
    epsilon: f64,
    init: &MinMaxLoad,
    warm_starts: &[Association],
    budget: &Budget,
) -> Result<MinMaxDelay, SolverError> {
    assert!(epsilon > 0.0 && lambda > 0.0);
    if lambda * init.lower_bound > rho_bar * (1.0 + 1e-12) {
        return Err(SolverError::Infeasible {
            lambda,
            load_lower_bound: init.lower_bound,
        });
    }
    if lambda * init.value > rho_bar * (1.0 + 1e-12) {
        return Err(SolverError::BudgetExceeded { lambda });
    }
    let mut best = init.association.clone();
    let t0 = max_delay(table, &best.target, lambda);
    for w in warm_starts {
        if table.check(w).is_ok() && lambda * super::minmax_load_value(table, w) <= rho_bar {
            let d = max_delay(table, &w.target, lambda);
            if d < max_delay(table, &best.target, lambda) {
                best = w.clone();
            }
        }
    }
    let (mut lo, mut hi) = (0.0, t0);
    let mut iterations = 0;
    let mut proven = true;
    while hi - lo > epsilon * (1.0 + 1e-12) {
        let mid = 0.5 * (lo + hi);
        iterations += 1;
        match delay_feasible(table, lambda, rho_bar, mid, std::slice::from_ref(&best), budget) {
            Feasibility::Feasible(w) => {
                hi = mid;
                best = w;
            }
            Feasibility::Infeasible => lo = mid,
            Feasibility::Unknown => {
                lo = mid;
                proven = false;
            }
        }
    }
    Ok(MinMaxDelay {
        value: max_delay(table, &best.target, lambda),
        association: best,
        t0,
        lower: lo,
        upper: hi,
        iterations,
        proven,
    })
}

/// [`minmax_delay`] wrapped as an [`OptResult`].
pub fn minmax_delay_result(
    bundle: &Bundle,
    lambda: f64,
    epsilon: f64,
    warm_starts: &[Association],
    budget: &Budget,
) -> Result<OptResult, SolverError> {
    let start = Instant::now();
    let r = minmax_delay(&bundle.table, lambda, bundle.rho_bar, epsilon, warm_starts, budget)?;
    let certificate = if r.proven {
        Certificate::WithinEpsilon { epsilon }
    } else {
        Certificate::Unproven
    };
    Ok(OptResult {
        kind: MetricKind::MinmaxDelay,
        ra: bundle.ra,
        value: r.value,
        association: Some(r.association),
        certificate,
        iterations: r.iterations,
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
    fn below_bare_transmission_time_is_infeasible() {
        let t = table(&[&[0.2, 0.4], &[0.3, 0.25]], &[0.5, 0.5]);
        let f = delay_feasible(&t, 1.0, 0.95, 0.19, &[], &Budget::default());
        assert_eq!(f, Feasibility::Infeasible);
    }

    #[test]
    fn witness_delay_is_feasible() {
        let t = table(&[&[0.2, 0.4], &[0.3, 0.25], &[0.5, 0.1]], &[0.3, 0.3, 0.4]);
        let a = Association::new(vec![0, 1, 1]);
        let t0 = max_delay(&t, &a.target, 1.5);
        match delay_feasible(&t, 1.5, 0.95, t0, &[], &Budget::default()) {
            Feasibility::Feasible(w) => assert!(max_delay(&t, &w.target, 1.5) <= t0 * (1.0 + 1e-12)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_queue_bisection() {
        let t = table(&[&[0.2], &[0.4], &[0.1]], &[0.2, 0.5, 0.3]);
        let lambda = 2.0;
        let rho = lambda * (0.2 * 0.2 + 0.5 * 0.4 + 0.3 * 0.1);
        let p_star = 0.4 / (1.0 - rho);
        let r = minmax_delay(&t, lambda, 0.95, 0.02, &[], &Budget::default()).unwrap();
        assert!((r.value - p_star).abs() < 1e-12);
        assert!(r.upper - p_star <= 0.02 + 1e-12);
        assert!(r.proven);
    }

    #[test]
    fn iteration_count_bound() {
        // t0 = 1.28, eps = 0.02: at most ceil(log2(64)) = 6 calls.
        let t = table(&[&[0.64]], &[1.0]);
        let r = minmax_delay(&t, 0.78125, 0.95, 0.02, &[], &Budget::default()).unwrap();
        assert!((r.t0 - 1.28).abs() < 1e-12);
        assert!(r.iterations <= 6);
    }

    #[test]
    fn infeasible_lambda_is_reported() {
        let t = table(&[&[0.5]], &[1.0]);
        assert!(matches!(
            minmax_delay(&t, 10.0, 0.95, 0.02, &[], &Budget::default()),
            Err(SolverError::Infeasible { .. })
        ));
    }
}
