use serde::Serialize;

use super::GsResult;
use crate::error::{Error, Result};
use crate::free_energy::FreeEnergyEstimate;

/// Outcome of comparing `F_β` with `GS` on one instance (per-site units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeCheck {
    pub upper_ok: bool,
    pub lower_ok: bool,
    /// `GS/N - F_β/N`.
    pub gap: f64,
    /// `(C/β) log(2 + Pβ·GSbar/N)`.
    pub allowance: f64,
    /// `allowance + 3·stderr - gap`; negative when the lower bound fails.
    pub slack: f64,
}

/// Checks `F_β ≤ GS` and `GS - F_β ≤ (CN/β) log(2 + Pβ GSbar/N)`, both up to three standard errors.
pub fn gs_bridge_check(
    beta: f64,
    max_order: usize,
    fe: &FreeEnergyEstimate,
    gs: &GsResult,
    gs_bar: f64,
    audit_constant: f64,
) -> Result<BridgeCheck> {
    if !(beta >= 1.0) {
        return Err(Error::Domain(format!("bridge check needs beta >= 1, got {beta}")));
    }
    let n = gs.argmax.dim() as f64;
    let gs_site = gs.value / n;
    let margin = 3.0 * fe.std_error;
    let gap = gs_site - fe.value;
    let allowance = audit_constant / beta * (2.0 + max_order as f64 * beta * gs_bar.max(gs.value) / n).ln();
    Ok(BridgeCheck {
        upper_ok: fe.value <= gs_site + margin,
        lower_ok: gap <= allowance + margin,
        gap,
        allowance,
        slack: allowance + margin - gap,
    })
}
