//! Offline planning for heterogeneous cellular downlinks modelled as
//! independent multi-class M/G/1 processor-sharing queues.
//!
//! The pipeline is: [`scenario`] builds a network realization, [`phy`] turns
//! it into per-queue SINRs and rates for one resource-allocation scheme,
//! [`ua`] applies the physical-layer association rules, [`queueing`] evaluates
//! loads and delays analytically, [`solvers`] optimizes the association and
//! the spectrum split, and [`simulator`] checks the analytic model by
//! discrete-event simulation.

pub mod phy;
pub mod experiments;
pub mod queueing;
pub mod scenario;
pub mod simulator;
pub mod solvers;
pub mod ua;
