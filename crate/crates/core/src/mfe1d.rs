//! The expansion on an interval: a single frequency rung, labels are integers.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mfe::{DefectReport, Expansion, InvariantSample, Options, Setup};
use crate::profiles::ProblemSpec;
use crate::spectral::ModeState;

/// Builds the expansion of the cutoff-J system on the window starting at τ₀.
pub fn build_modulation_1d(
    s0: &ModeState,
    spec: &ProblemSpec,
    cutoff: i32,
    order: usize,
    tau0: f64,
    opts: &Options,
) -> Result<Expansion> {
    let setup = Arc::new(Setup::one_d(spec, cutoff, order)?);
    Expansion::build(setup, spec, s0, tau0, opts)
}

/// g_{j,l}^k at Chebyshev node `node`; zero for l < 3 or labels never produced.
pub fn g_term(ex: &Expansion, j: i32, k: i32, l: usize, node: usize) -> Complex64 {
    if l < 3 || l >= ex.g.len() || j < 1 || j as usize > ex.g[l].len() {
        return Complex64::new(0.0, 0.0);
    }
    ex.g[l][(j - 1) as usize]
        .get(&(k as i128))
        .map(|v| v[node])
        .unwrap_or_default()
}

pub fn defect_1d(ex: &Expansion, taus: &[f64]) -> Result<DefectReport> {
    ex.defect_report(taus)
}

pub fn reconstruct_1d(ex: &Expansion, t: f64) -> Result<ModeState> {
    let (st, residue) = ex.reconstruct(t)?;
    let scale = st.u.iter().chain(&st.v).fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    if residue > 1e-10 * scale {
        return Err(Error::Internal(format!(
            "reconstruction has imaginary residue {residue:e}"
        )));
    }
    Ok(st)
}

pub fn almost_invariant_1d(ex: &Expansion, tau: f64) -> Result<InvariantSample> {
    let probe = ex.probe(&[tau])?;
    Ok(ex.invariant(&probe)[0])
}
