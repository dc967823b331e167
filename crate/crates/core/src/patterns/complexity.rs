//! Asymptotic message and time complexity per mechanism and pattern.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Mechanism, PatternKind};

/// Symbolic big-O orders. `beta` is the CSMA expansion coefficient and
/// `n` the number of nodes still active after a reduce phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    LogN,
    N,
    NLogN,
    NLogNPlusN,
    NLogNPlusBetaActive,
    NSquared,
    NSquaredLogN,
    BetaN,
    BetaNLogBetaN,
    BetaNSquared,
    BetaNSquaredLogBetaN,
}

impl Order {
    /// Numeric value used to normalise measurements in scaling checks.
    pub fn eval(self, n: f64, beta: f64, active: f64) -> f64 {
        let lg = |x: f64| x.max(2.0).log2();
        match self {
            Order::LogN => lg(n),
            Order::N => n,
            Order::NLogN => n * lg(n),
            Order::NLogNPlusN => n * lg(n) + n,
            Order::NLogNPlusBetaActive => n * lg(n) + beta * active,
            Order::NSquared => n * n,
            Order::NSquaredLogN => n * n * lg(n),
            Order::BetaN => beta * n,
            Order::BetaNLogBetaN => beta * n * lg(beta * n),
            Order::BetaNSquared => (beta * n).powi(2),
            Order::BetaNSquaredLogBetaN => (beta * n).powi(2) * lg(beta * n),
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Order::LogN => "log N",
            Order::N => "N",
            Order::NLogN => "N log N",
            Order::NLogNPlusN => "N log N + N",
            Order::NLogNPlusBetaActive => "N log N + βn",
            Order::NSquared => "N²",
            Order::NSquaredLogN => "N² log N",
            Order::BetaN => "βN",
            Order::BetaNLogBetaN => "βN log βN",
            Order::BetaNSquared => "(βN)²",
            Order::BetaNSquaredLogBetaN => "(βN)² log βN",
        };
        f.write_str(s)
    }
}

/// `(message order, time order)` for a mechanism and pattern.
pub fn complexity_bound(mechanism: Mechanism, kind: PatternKind) -> (Order, Order) {
    use Mechanism::*;
    use Order::*;
    use PatternKind::*;
    match (mechanism, kind) {
        (CsmaAck, OneToN) | (CsmaAck, NToOne) => (NLogN, BetaNLogBetaN),
        (CsmaAck, NToN) => (NSquaredLogN, BetaNSquaredLogBetaN),
        (CsmaNack, OneToN) => (N, BetaN),
        (CsmaNack, NToOne) => (NLogN, BetaNLogBetaN),
        (CsmaNack, NToN) => (NSquared, BetaNSquared),
        (TdmaAck, OneToN) => (NLogN, NLogN),
        (TdmaAck, NToOne) => (NLogN, NLogNPlusN),
        (TdmaAck, NToN) => (NSquaredLogN, NSquaredLogN),
        (TdmaNack, OneToN) => (N, NLogN),
        (TdmaNack, NToOne) => (NLogN, NLogNPlusN),
        (TdmaNack, NToN) => (NSquared, NSquared),
        (ReduceCatch, OneToN) => (LogN, LogN),
        (ReduceCatch, NToOne) => (NLogN, NLogNPlusBetaActive),
        (ReduceCatch, NToN) => (NLogN, NLogN),
    }
}
