//! Mixed-integer DC optimal power flow with modeling-to-generate-alternatives.
//!
//! The crate solves linearized transmission switching (OTS) and unit
//! commitment (UC) problems with its own branch-and-bound engine, searches
//! for near-optimal alternative integer solutions with four MGA criteria,
//! and checks each alternative against nonlinear AC physics through a
//! penalized recovery problem.
//!
//! Module map:
//!
//! * [`network`]: data model, case-file ingestion, validation, connectivity.
//! * [`milp`]: bounded simplex LP solver and best-first branch-and-bound.
//! * [`formulations`]: DC-OPF, DC-OTS and DC-UC model builders.
//! * [`mga`]: HSJ variants, random vectors, Latin hypercube weights.
//! * [`ac`]: AC branch flows, Newton power flow, AC recovery, classification.
//! * [`baseline`]: greedy single-switch heuristic.
//! * [`pipeline`]: end-to-end orchestration and report emission.

// `!(x > 0.0)` style guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ac;
pub mod baseline;
pub mod formulations;
pub mod mga;
pub mod milp;
pub mod network;
pub mod pipeline;

/// `+∞` as JSON `null`, for costs of recoveries that produced no point.
pub(crate) mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub use network::Network;
