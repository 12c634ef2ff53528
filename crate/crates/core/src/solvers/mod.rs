//! Optimal association and spectrum split.
//!
//! * [`minmax_load`]: exact (budgeted) minimization of the largest per-queue
//!   unit load, which yields the maximum stable arrival rate as `rho_bar / load`.
//! * [`delay`]: feasibility of a per-class delay target and bisection on it,
//!   which yields the min-max per-class delay.
//! * [`avgdelay`]: the continuous relaxation of the average-delay problem,
//!   solved with a duality-gap certificate, which yields a lower bound on the
//!   minimum average system delay.

pub mod avgdelay;
pub mod delay;
pub mod minmax_load;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::{LinkTable, McsTable, PhyError, RaScheme};
use crate::queueing::ServiceTable;
use crate::scenario::Scenario;
use crate::ua::Association;

pub use avgdelay::{avgdelay_lower_bound, avgdelay_lower_bound_from, AvgDelayBound};
pub use delay::{delay_feasible, minmax_delay, minmax_delay_from, Feasibility, MinMaxDelay};
pub use minmax_load::{solve_minmax_load, MinMaxLoad};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("location {0} has no covering base station")]
    Uncoverable(usize),
    #[error("arrival rate {lambda} is infeasible: best achievable max load {load_lower_bound} exceeds rho_bar/lambda")]
    Infeasible { lambda: f64, load_lower_bound: f64 },
    #[error("solver budget exhausted before a feasible association was found for lambda = {lambda}")]
    BudgetExceeded { lambda: f64 },
    #[error(transparent)]
    Phy(#[from] PhyError),
}

/// Work limits shared by the combinatorial searches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    /// Branch-and-bound nodes per search.
    pub max_nodes: u64,
    /// Dual ascent iterations for the Lagrangian load bound.
    pub dual_iterations: usize,
    /// Location checks in the exhaustive delay-feasibility search.
    pub search_work: u64,
    /// Local-search moves in the delay-feasibility repair heuristic.
    pub repair_moves: usize,
    /// Coordinate passes for the convex relaxation.
    pub relax_passes: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_nodes: 200_000,
            dual_iterations: 300,
            search_work: 2_000_000,
            repair_moves: 20_000,
            relax_passes: 2_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// Proven optimal.
    Optimal,
    /// Value within `epsilon` of the optimum.
    WithinEpsilon { epsilon: f64 },
    /// Value of a feasible solution with a proven bound on the optimum.
    WithinGap { bound: f64 },
    /// A valid lower bound whose underlying convex program was solved to `gap`.
    LowerBound { gap: f64 },
    /// Feasible value from a search that could not prove its infeasible verdicts.
    Unproven,
}

impl Certificate {
    pub fn label(&self) -> String {
        match self {
            Certificate::Optimal => "optimal".into(),
            Certificate::WithinEpsilon { epsilon } => format!("within_eps:{epsilon}"),
            Certificate::WithinGap { bound } => format!("within_gap:{bound}"),
            Certificate::LowerBound { gap } => format!("lower_bound:gap={gap}"),
            Certificate::Unproven => "unproven".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    LambdaMax,
    MinmaxDelay,
    AvgdelayLb,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::LambdaMax => "lambda_max",
            MetricKind::MinmaxDelay => "minmax_delay",
            MetricKind::AvgdelayLb => "avgdelay_lb",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptResult {
    pub kind: MetricKind,
    pub ra: RaScheme,
    pub value: f64,
    #[serde(skip)]
    pub association: Option<Association>,
    pub certificate: Certificate,
    pub iterations: u64,
    pub wallclock: Duration,
}

/// Everything the solvers need for one (scenario, RA scheme).
#[derive(Clone, Debug)]
pub struct Bundle {
    pub ra: RaScheme,
    pub link: LinkTable,
    pub table: ServiceTable,
    pub rho_bar: f64,
}

impl Bundle {
    pub fn new(scenario: &Scenario, ra: RaScheme, mcs: &McsTable) -> Result<Bundle, PhyError> {
        let link = LinkTable::build(scenario, ra, mcs)?;
        let table = ServiceTable::from_link(&link, &scenario.traffic, scenario.config.mean_file_size_bits);
        Ok(Bundle {
            ra,
            link,
            table,
            rho_bar: scenario.config.rho_bar,
        })
    }
}

/// Largest unit load `max_j sum_{i->j} alpha_i s_ij` of an association.
pub fn minmax_load_value(table: &ServiceTable, assoc: &Association) -> f64 {
    crate::queueing::unit_loads(assoc, table)
        .into_iter()
        .fold(0.0, f64::max)
}

/// Maximum stable arrival rate over all associations for one RA scheme.
///
/// `warm_starts` seed the incumbent, so the result never falls below any of them.
pub fn lambda_max_optimal(
    bundle: &Bundle,
    warm_starts: &[Association],
    budget: &Budget,
) -> Result<OptResult, SolverError> {
    let start = std::time::Instant::now();
    let sol = solve_minmax_load(&bundle.table, warm_starts, budget)?;
    let value = if sol.value > 0.0 {
        bundle.rho_bar / sol.value
    } else {
        f64::INFINITY
    };
    let certificate = if sol.optimal {
        Certificate::Optimal
    } else {
        Certificate::WithinGap {
            bound: bundle.rho_bar / sol.lower_bound,
        }
    };
    Ok(OptResult {
        kind: MetricKind::LambdaMax,
        ra: bundle.ra,
        value,
        association: Some(sol.association),
        certificate,
        iterations: sol.nodes,
        wallclock: start.elapsed(),
    })
}

/// [`lambda_max_optimal`] for every K of the scheme; returns all per-K results
/// and the index of the best one.
pub fn lambda_max_sweep(
    scenario: &Scenario,
    kind: crate::phy::RaKind,
    mcs: &McsTable,
    budget: &Budget,
) -> Result<(Vec<OptResult>, usize), SolverError> {
    use rayon::prelude::*;
    let schemes = RaScheme::sweep(kind, scenario.config.total_subchannels_per_macro);
    let results: Vec<OptResult> = schemes
        .par_iter()
        .map(|&ra| {
            let b = Bundle::new(scenario, ra, mcs)?;
            lambda_max_optimal(&b, &[], budget)
        })
        .collect::<Result<_, _>>()?;
    let best = results
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.value > results[b].value { i } else { b });
    Ok((results, best))
}
