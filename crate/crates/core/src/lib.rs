//! Hierarchical mutual authentication between electric vehicles, charging
//! stations and a central aggregator, a speaker-rotation PBFT ledger for
//! reward transactions, and a deterministic network simulator with a
//! scriptable adversary.
//!
//! Curve-dependent code is generic over a [`FieldInt`] backend. The aliases
//! below pin the two shipped instantiations: `u64` for the exhaustively
//! checkable toy curve and `BigUint` for P-256.

pub mod consensus;
pub mod crypto;
pub mod entities;
pub mod report;
pub mod scenario;
pub mod simnet;

pub use crypto::{CurveParams, FieldInt, Point};

use num_bigint::BigUint;

pub type ToyCurve = CurveParams<u64>;
pub type ToyPoint = Point<u64>;
pub type P256Curve = CurveParams<BigUint>;
pub type P256Point = Point<BigUint>;
