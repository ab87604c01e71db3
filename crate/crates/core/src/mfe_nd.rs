//! The expansion on a rectangle or box: labels live on the frequency ladder,
//! near-resonant labels feed the diagonal equations through rotating factors.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mfe::kernel::sign_variants;
use crate::mfe::{
    triple_product, Class, DefectReport, Expansion, InvariantSample, Label, ModeMap, Options, Packed, Setup,
};
use crate::par::Exec;
use crate::profiles::ProblemSpec;
use crate::spectral::{ModeState, MultiIndexK};

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);

/// Builds the expansion with near-resonance threshold ε^{1−α}.
#[allow(clippy::too_many_arguments)]
pub fn build_modulation_nd(
    s0: &ModeState,
    spec: &ProblemSpec,
    cutoff: i32,
    order: usize,
    alpha: f64,
    ladder_tol: Option<f64>,
    tau0: f64,
    opts: &Options,
) -> Result<Expansion> {
    let setup = Arc::new(Setup::multi_d(spec, cutoff, order, alpha, ladder_tol)?);
    Expansion::build(setup, spec, s0, tau0, opts)
}

/// w_j^k = exp(i(k·ω − Ω_j)φ/ε), given the phase value φ(τ).
pub fn w_factor(setup: &Setup, mode: usize, k: &MultiIndexK, phi: f64) -> C {
    let gap = k.dot(&setup.codec.omegas) - setup.modes.omegas[mode];
    if gap == 0.0 {
        return C::new(1.0, 0.0);
    }
    C::from_polar(1.0, gap * phi / setup.epsilon)
}

pub fn encode(setup: &Setup, k: &MultiIndexK) -> Label {
    setup.codec.encode(&k.to_dense(setup.codec.rungs()))
}

pub fn decode(setup: &Setup, code: Label) -> MultiIndexK {
    MultiIndexK::from_dense(&setup.codec.decode(code))
}

/// g_{j,l}^k at Chebyshev node `node`; zero below l = 3 or off the produced labels.
pub fn g_term_nd(ex: &Expansion, mode: usize, k: &MultiIndexK, l: usize, node: usize) -> C {
    if l < 3 || l >= ex.g.len() || mode >= ex.g[l].len() {
        return ZERO;
    }
    ex.g[l][mode]
        .get(&encode(&ex.setup, k))
        .map(|v| v[node])
        .unwrap_or_default()
}

pub fn defect_nd(ex: &Expansion, taus: &[f64]) -> Result<DefectReport> {
    ex.defect_report(taus)
}

/// e_j^{s⟨j⟩} at slow time τ.
pub fn near_resonant_force(ex: &Expansion, mode: usize, sign: i32, tau: f64) -> Result<C> {
    if mode >= ex.setup.modes.len() {
        return Err(Error::InvalidMode {
            mode: vec![mode as i64],
            reason: "mode index out of range".into(),
        });
    }
    let probe = ex.probe(&[tau])?;
    Ok(ex.near_force(&probe)[0][mode][if sign > 0 { 0 } else { 1 }])
}

/// Σ_{s,j} sΩ_j conj(y_j^{s⟨j⟩}) e_j^{s⟨j⟩} at slow time τ.
pub fn near_work(ex: &Expansion, tau: f64) -> Result<C> {
    let probe = ex.probe(&[tau])?;
    Ok(ex.near_work(&probe)[0])
}

pub fn almost_invariant_nd(ex: &Expansion, tau: f64) -> Result<InvariantSample> {
    let probe = ex.probe(&[tau])?;
    Ok(ex.invariant(&probe)[0])
}

pub fn reconstruct_nd(ex: &Expansion, t: f64) -> Result<ModeState> {
    let (st, residue) = ex.reconstruct(t)?;
    let scale = st.u.iter().chain(&st.v).fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    if residue > 1e-10 * scale {
        return Err(Error::Internal(format!(
            "reconstruction has imaginary residue {residue:e}"
        )));
    }
    Ok(st)
}

/// Off-diagonal labels of mode `mode` present in any layer.
pub fn member_labels(ex: &Expansion, mode: usize) -> Vec<MultiIndexK> {
    let mut codes: Vec<Label> = ex.layers[1..]
        .iter()
        .flat_map(|layer| layer[mode].keys().copied())
        .filter(|k| ex.setup.classify(mode, *k) == Class::Member)
        .collect();
    codes.sort_unstable();
    codes.dedup();
    codes.into_iter().map(|k| decode(&ex.setup, k)).collect()
}

/// 𝒰(y) = (a/4) Σ_{j,k} y_{−j}^{−k} (y∗y∗y)_j^k over the signed lattice.
pub fn quartic_potential(setup: &Setup, y: &ModeMap<C>, a: f64, exec: Exec) -> C {
    let packed = Packed::from_maps(
        &y.iter()
            .map(|m| m.iter().map(|(k, v)| (*k, vec![*v])).collect::<BTreeMap<_, _>>())
            .collect::<Vec<_>>(),
        1,
    );
    let conv = triple_product(&setup.lattice, &packed, &packed, &packed, None, exec);
    let dim = setup.modes.dim as i32;
    let mut acc = ZERO;
    for (m, map) in conv.iter().enumerate() {
        for (k, v) in map {
            if let Some(yk) = y[m].get(&-k) {
                acc += yk * v[0];
            }
        }
    }
    acc * (-2.0f64).powi(dim) * (a / 4.0)
}

/// The two sums Σ iκ y_{−j}^{−k} Ω_j²c² y_j^k and Σ iκ ẏ_{−j}^{−k} ẏ_j^k over the
/// signed lattice, for a table of (y, ẏ) pairs on the positive octant.
pub fn cancellation_sums(setup: &Setup, table: &ModeMap<(C, C)>, c: f64) -> [C; 2] {
    let modes = &setup.modes;
    let mut out = [ZERO; 2];
    for (m, map) in table.iter().enumerate() {
        let om2c2 = modes.omegas[m].powi(2) * c * c;
        for j in sign_variants(&modes.modes[m], modes.dim) {
            let mut neg = j;
            for x in neg.iter_mut() {
                *x = -*x;
            }
            let (sj, sn) = (modes.sign_of(&j), modes.sign_of(&neg));
            for (k, (y, yd)) in map {
                let Some((ym, ydm)) = map.get(&-k) else { continue };
                let ik = C::new(0.0, setup.codec.kappa(*k));
                out[0] += ik * (sn * ym) * om2c2 * (sj * y);
                out[1] += ik * (sn * ydm) * (sj * yd);
            }
        }
    }
    out
}
