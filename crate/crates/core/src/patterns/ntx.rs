//! Choosing the reduce-phase repetition count.

use thiserror::Error;

use super::PatternKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NtxError {
    #[error("loss rate {0} leaves no finite NTX")]
    Unreachable(f64),
    #[error("invalid NTX query: {0}")]
    Invalid(String),
}

/// Expected active nodes after an N-to-N reduce phase:
/// `N - N (1 - alpha^ntx)^(2N-2)`.
pub fn predicted_active(alpha: f64, n: u32, ntx: u32) -> f64 {
    let n = f64::from(n);
    let miss = alpha.powi(ntx as i32);
    n - n * (1.0 - miss).powf(2.0 * n - 2.0)
}

/// Expected active nodes for any pattern kind over `n` participants.
///
/// In 1-to-N and N-to-1 each of the `n - 1` links stays broken with
/// probability `alpha^ntx`; the hub is active iff at least one link is.
pub fn predicted_active_for(kind: PatternKind, alpha: f64, n: u32, ntx: u32) -> f64 {
    match kind {
        PatternKind::NToN => predicted_active(alpha, n, ntx),
        PatternKind::OneToN | PatternKind::NToOne => {
            let links = f64::from(n.saturating_sub(1));
            let miss = alpha.powi(ntx as i32);
            links * miss + 1.0 - (1.0 - miss).powf(links)
        }
    }
}

const MAX_NTX: u32 = 1 << 16;

/// Smallest NTX whose predicted N-to-N active count is at most `target_active`.
pub fn ntx_recommend(alpha: f64, n: u32, target_active: f64) -> Result<(u32, f64), NtxError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(NtxError::Invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if alpha >= 1.0 {
        return Err(NtxError::Unreachable(alpha));
    }
    if n < 2 {
        return Err(NtxError::Invalid("need at least two nodes".into()));
    }
    if !(target_active > 0.0 && target_active <= f64::from(n)) {
        return Err(NtxError::Invalid(format!(
            "target {target_active} outside (0, {n}]"
        )));
    }
    for ntx in 1..=MAX_NTX {
        let predicted = predicted_active(alpha, n, ntx);
        if predicted <= target_active {
            return Ok((ntx, predicted));
        }
    }
    Err(NtxError::Unreachable(alpha))
}
