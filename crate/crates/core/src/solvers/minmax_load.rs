//! Minimum makespan on unrelated machines: assign every location to a covering
//! queue so that the largest unit load `sum_{i->j} alpha_i s_ij` is minimal.
//!
//! Lower bounds come from Lagrangian multipliers `mu` on the unit simplex: for
//! any assignment, `max_j load_j >= sum_j mu_j load_j >= sum_i min_j mu_j c_ij`.
//! Upper bounds come from greedy and multiplier-guided assignments polished by
//! move/swap local search. A depth-first branch-and-bound closes the gap when
//! the node budget allows.

use crate::queueing::ServiceTable;
use crate::ua::Association;

use super::{Budget, SolverError};

/// Relative slack under which bound and incumbent are considered equal.
const CLOSE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxLoad {
    pub association: Association,
    /// Largest unit load of `association`, seconds.
    pub value: f64,
    /// Proven lower bound on the optimum.
    pub lower_bound: f64,
    pub optimal: bool,
    /// Branch-and-bound nodes expanded.
    pub nodes: u64,
}

pub(crate) fn check_coverage(table: &ServiceTable) -> Result<(), SolverError> {
    for i in 0..table.n_locations() {
        if table.allowed_queues(i).next().is_none() {
            return Err(SolverError::Uncoverable(i));
        }
    }
    Ok(())
}

fn unit_loads(table: &ServiceTable, target: &[usize]) -> Vec<f64> {
    let mut w = vec![0.0; table.n_queues()];
    for (i, &j) in target.iter().enumerate() {
        w[j] += table.cost(i, j);
    }
    w
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// `sum_i min_j mu_j c_ij` and the minimizing assignment.
fn lagrangian(table: &ServiceTable, mu: &[f64]) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut target = Vec::with_capacity(table.n_locations());
    for i in 0..table.n_locations() {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in table.allowed_queues(i) {
            let v = mu[j] * table.cost(i, j);
            if v < best.1 {
                best = (j, v);
            }
        }
        total += best.1;
        target.push(best.0);
    }
    (total, target)
}

/// Exponentiated-gradient ascent on the Lagrangian dual. Returns the best
/// bound, its multipliers, and the assignments visited along the way.
fn dual_ascent(table: &ServiceTable, iterations: usize) -> (f64, Vec<f64>, Vec<Vec<usize>>) {
    let n = table.n_queues();
    let mut mu = vec![1.0 / n as f64; n];
    let mut best = (f64::NEG_INFINITY, mu.clone());
    let mut visited = Vec::new();
    for t in 0..iterations.max(1) {
        let (g, target) = lagrangian(table, &mu);
        if g > best.0 {
            best = (g, mu.clone());
        }
        let loads = unit_loads(table, &target);
        let top = max_of(&loads);
        if t % 10 == 0 || t + 1 == iterations {
            visited.push(target);
        }
        if top <= 0.0 {
            break;
        }
        let eta = 2.0 / ((t + 1) as f64).sqrt();
        for j in 0..n {
            mu[j] *= (eta * (loads[j] / top - 1.0)).exp();
        }
        let s: f64 = mu.iter().sum();
        mu.iter_mut().for_each(|m| *m /= s);
    }
    (best.0, best.1, visited)
}

/// Each location, heaviest first, goes where it raises the max load least.
fn greedy(table: &ServiceTable) -> Vec<usize> {
    let mut order: Vec<usize> = (0..table.n_locations()).collect();
    let min_cost = |i: usize| {
        table
            .allowed_queues(i)
            .map(|j| table.cost(i, j))
            .fold(f64::INFINITY, f64::min)
    };
    order.sort_by(|&a, &b| min_cost(b).total_cmp(&min_cost(a)).then(a.cmp(&b)));
    let mut loads = vec![0.0; table.n_queues()];
    let mut target = vec![0; table.n_locations()];
    for i in order {
        let j = table
            .allowed_queues(i)
            .min_by(|&a, &b| {
                (loads[a] + table.cost(i, a))
                    .total_cmp(&(loads[b] + table.cost(i, b)))
                    .then(a.cmp(&b))
            })
            .expect("coverage checked");
        loads[j] += table.cost(i, j);
        target[i] = j;
    }
    target
}

/// Moves and swaps off the most loaded queue until neither lowers it below the
/// current maximum. The max load never increases.
pub(crate) fn local_search(table: &ServiceTable, target: &mut [usize]) {
    let nq = table.n_queues();
    let mut loads = unit_loads(table, target);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nq];
    for (i, &j) in target.iter().enumerate() {
        members[j].push(i);
    }
    let limit = 50 * table.n_locations() + 100;
    for _ in 0..limit {
        let (top, top_load) = loads
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (j, &l)| if l > b.1 { (j, l) } else { b });
        if top_load <= 0.0 {
            return;
        }
        // Best single move: minimize the larger of the two touched loads.
        let mut best: Option<(usize, usize, f64)> = None;
        for &i in &members[top] {
            for j in table.allowed_queues(i) {
                if j == top {
                    continue;
                }
                let after = (loads[top] - table.cost(i, top)).max(loads[j] + table.cost(i, j));
                if after < top_load * (1.0 - CLOSE) && best.is_none_or(|b| after < b.2) {
                    best = Some((i, j, after));
                }
            }
        }
        if let Some((i, j, _)) = best {
            loads[top] -= table.cost(i, top);
            loads[j] += table.cost(i, j);
            members[top].retain(|&x| x != i);
            members[j].push(i);
            target[i] = j;
            continue;
        }
        // Best swap between a location on the top queue and one elsewhere.
        let mut best: Option<(usize, usize, f64)> = None;
        for &i in &members[top] {
            for j in table.allowed_queues(i) {
                if j == top {
                    continue;
                }
                for &k in &members[j] {
                    if !table.allowed(k, top) {
                        continue;
                    }
                    let new_top = loads[top] - table.cost(i, top) + table.cost(k, top);
                    let new_j = loads[j] - table.cost(k, j) + table.cost(i, j);
                    let after = new_top.max(new_j);
                    if after < top_load * (1.0 - CLOSE) && best.is_none_or(|b| after < b.2) {
                        best = Some((i, k, after));
                    }
                }
            }
        }
        match best {
            Some((i, k, _)) => {
                let j = target[k];
                loads[top] += table.cost(k, top) - table.cost(i, top);
                loads[j] += table.cost(i, j) - table.cost(k, j);
                members[top].retain(|&x| x != i);
                members[j].retain(|&x| x != k);
                members[top].push(k);
                members[j].push(i);
                target[i] = j;
                target[k] = top;
            }
            None => return,
        }
    }
}

struct Search<'a> {
    table: &'a ServiceTable,
    order: Vec<usize>,
    /// `suffix[b][d]`: sum over order[d..] of min_j mu_b[j] c_ij, per multiplier vector b.
    suffix: Vec<Vec<f64>>,
    mus: Vec<Vec<f64>>,
    loads: Vec<f64>,
    current: Vec<usize>,
    best: Vec<usize>,
    best_value: f64,
    nodes: u64,
    max_nodes: u64,
    exhausted: bool,
}

impl Search<'_> {
    fn bound(&self, depth: usize, current_max: f64) -> f64 {
        let mut b = current_max;
        for (mu, suf) in self.mus.iter().zip(&self.suffix) {
            let fixed: f64 = mu.iter().zip(&self.loads).map(|(m, l)| m * l).sum();
            b = b.max(fixed + suf[depth]);
        }
        b
    }

    fn dfs(&mut self, depth: usize, current_max: f64) {
        if self.nodes >= self.max_nodes {
            self.exhausted = true;
            return;
        }
        self.nodes += 1;
        if depth == self.order.len() {
            if current_max < self.best_value {
                self.best_value = current_max;
                self.best.clone_from(&self.current);
            }
            return;
        }
        let i = self.order[depth];
        let mut children: Vec<(usize, f64)> = self
            .table
            .allowed_queues(i)
            .map(|j| (j, self.loads[j] + self.table.cost(i, j)))
            .collect();
        children.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for (j, new_load) in children {
            let new_max = current_max.max(new_load);
            if new_max >= self.best_value * (1.0 - CLOSE) {
                // Children are sorted by the load they create.
                break;
            }
            let c = self.table.cost(i, j);
            self.loads[j] += c;
            self.current[i] = j;
            if self.bound(depth + 1, new_max) < self.best_value * (1.0 - CLOSE) {
                self.dfs(depth + 1, new_max);
            }
            self.loads[j] -= c;
            if self.exhausted {
                return;
            }
        }
    }
}

/// Minimizes the largest unit load over all total assignments to covering queues.
///
/// The incumbent is the best of a greedy assignment, the multiplier-guided
/// assignments, and `warm_starts`, each polished by local search. The search
/// then branches on locations with the fewest covering queues first.
pub fn solve_minmax_load(
    table: &ServiceTable,
    warm_starts: &[Association],
    budget: &Budget,
) -> Result<MinMaxLoad, SolverError> {
    check_coverage(table)?;
    let n_loc = table.n_locations();
    let nq = table.n_queues();
    if n_loc == 0 {
        return Ok(MinMaxLoad {
            association: Association::new(vec![]),
            value: 0.0,
            lower_bound: 0.0,
            optimal: true,
            nodes: 0,
        });
    }

    let (dual_bound, mu, visited) = dual_ascent(table, budget.dual_iterations);
    let single_bound = (0..n_loc)
        .map(|i| {
            table
                .allowed_queues(i)
                .map(|j| table.cost(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let uniform = vec![1.0 / nq as f64; nq];
    let mut lower_bound = dual_bound.max(single_bound).max(lagrangian(table, &uniform).0);

    let mut candidates: Vec<Vec<usize>> = vec![greedy(table)];
    candidates.extend(visited);
    candidates.extend(
        warm_starts
            .iter()
            .filter(|a| table.check(a).is_ok())
            .map(|a| a.target.clone()),
    );
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mut c in candidates {
        local_search(table, &mut c);
        let v = max_of(&unit_loads(table, &c));
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, c));
        }
    }
    let (mut value, mut target) = best.expect("at least the greedy candidate");

    let mut nodes = 0;
    let mut optimal = lower_bound >= value * (1.0 - CLOSE);
    if !optimal && budget.max_nodes > 0 {
        let mut order: Vec<usize> = (0..n_loc).collect();
        let n_allowed = |i: usize| table.allowed_queues(i).count();
        let min_cost = |i: usize| {
            table
                .allowed_queues(i)
                .map(|j| table.cost(i, j))
                .fold(f64::INFINITY, f64::min)
        };
        order.sort_by(|&a, &b| {
            n_allowed(a)
                .cmp(&n_allowed(b))
                .then(min_cost(b).total_cmp(&min_cost(a)))
                .then(a.cmp(&b))
        });
        let mus = vec![mu, uniform];
        let suffix = mus
            .iter()
            .map(|m| {
                let mut s = vec![0.0; n_loc + 1];
                for d in (0..n_loc).rev() {
                    let i = order[d];
                    let v = table
                        .allowed_queues(i)
                        .map(|j| m[j] * table.cost(i, j))
                        .fold(f64::INFINITY, f64::min);
                    s[d] = s[d + 1] + v;
                }
                s
            })
            .collect();
        let mut search = Search {
            table,
            order,
            suffix,
            mus,
            loads: vec![0.0; nq],
            current: vec![0; n_loc],
            best: target.clone(),
            best_value: value,
            nodes: 0,
            max_nodes: budget.max_nodes,
            exhausted: false,
        };
        search.dfs(0, 0.0);
        nodes = search.nodes;
        if search.best_value < value {
            value = search.best_value;
            target = search.best;
        }
        if !search.exhausted {
            optimal = true;
            lower_bound = value;
        }
    }
    if optimal {
        lower_bound = value;
    }
    Ok(MinMaxLoad {
        association: Association::new(target),
        value,
        lower_bound: lower_bound.min(value),
        optimal,
        nodes,
    })
}
