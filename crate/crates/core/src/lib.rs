//! Branch-flow SOC relaxations of optimal power flow, with voltage-angle
//! recovery and AC-feasibility checks on radial and meshed networks.
//!
//! The crate is organized around a two-step feasibility pipeline: a polar
//! Newton-Raphson power flow ([`acpf`]) produces an operating point, the
//! branch-flow re-parameterization of that point is checked as a linear
//! least-squares system, and the cycle consistency of the implied voltage
//! angle differences is tested on the network's fundamental cycles
//! ([`feascheck`]). Two conic OPF formulations ([`relaxations`]) are built
//! on a standard-form cone program ([`conic`]) and post-processed for
//! relaxation tightness and angle recovery.

pub mod acpf;
pub mod cases;
pub mod conic;
pub mod feascheck;
pub mod gridsearch;
pub mod netmodel;
pub mod relaxations;

pub use acpf::{pf_mismatch, solve_pf, OperatingPoint, PfError, PfOptions};
pub use netmodel::{
    cycle_space_dim, fundamental_cycles, incidence, parse_matpower, Branch, Bus, BusKind,
    IncidenceSet, Network, NetworkError,
};
