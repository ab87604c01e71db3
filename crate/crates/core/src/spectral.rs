//! Sine-spectral modes, frequencies, norms and the frequency ladder.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mode index; components past the dimension are zero.
pub type Mode = [i32; 3];

pub fn omega(j: &[i32], lengths: &[f64]) -> Result<f64> {
    if j.len() != lengths.len() || j.contains(&0) {
        return Err(Error::InvalidMode {
            mode: j.iter().map(|&c| c as i64).collect(),
            reason: "every component must be nonzero".into(),
        });
    }
    Ok(j.iter()
        .zip(lengths)
        .map(|(&c, &l)| (c as f64 * PI / l).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Positive-octant modes 1 <= j_i <= J in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub dim: usize,
    pub cutoff: i32,
    pub lengths: Vec<f64>,
    pub modes: Vec<Mode>,
    pub omegas: Vec<f64>,
}

impl ModeSet {
    pub fn new(lengths: &[f64], cutoff: i32) -> Result<ModeSet> {
        let dim = lengths.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!("dimension {dim} not in 1..=3")));
        }
        if cutoff < 1 {
            return Err(Error::InvalidArgument("cutoff J must be >= 1".into()));
        }
        if lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidArgument("lengths must be positive".into()));
        }
        let count = (cutoff as usize).pow(dim as u32);
        let mut modes = Vec::with_capacity(count);
        for idx in 0..count {
            let mut m = [0i32; 3];
            let mut rest = idx;
            for axis in (0..dim).rev() {
                m[axis] = (rest % cutoff as usize) as i32 + 1;
                rest /= cutoff as usize;
            }
            modes.push(m);
        }
        let omegas = modes
            .iter()
            .map(|m| omega(&m[..dim], lengths))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModeSet {
            dim,
            cutoff,
            lengths: lengths.to_vec(),
            modes,
            omegas,
        })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Index of the positive-octant mode |j|, or None if outside the cutoff
    /// or on a coordinate plane.
    pub fn index_of_abs(&self, j: &Mode) -> Option<usize> {
        let mut idx = 0usize;
        for axis in 0..self.dim {
            let c = j[axis].unsigned_abs() as i32;
            if c == 0 || c > self.cutoff {
                return None;
            }
            idx = idx * self.cutoff as usize + (c - 1) as usize;
        }
        Some(idx)
    }

    /// Product of component signs.
    pub fn sign_of(&self, j: &Mode) -> f64 {
        let neg = j[..self.dim].iter().filter(|&&c| c < 0).count();
        if neg % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Multiplicity of the full signed lattice relative to the octant.
    pub fn mirror_factor(&self) -> f64 {
        (1u32 << self.dim) as f64
    }
}

/// Truncated state: real coefficients u_j, v_j = du_j/dt over a ModeSet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl ModeState {
    pub fn zeros(n: usize) -> ModeState {
        ModeState {
            t: 0.0,
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn check(&self, modes: &ModeSet) -> Result<()> {
        if self.u.len() != modes.len() || self.v.len() != modes.len() {
            return Err(Error::InvalidArgument(format!(
                "state has {} / {} entries, mode set has {}",
                self.u.len(),
                self.v.len(),
                modes.len()
            )));
        }
        if self.u.iter().chain(&self.v).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("state has non-finite entries".into()));
        }
        Ok(())
    }
}

/// (‖∇u‖, ‖∂ₜu‖) in coefficient space over the full signed lattice.
pub fn sobolev_norms(modes: &ModeSet, s: &ModeState) -> (f64, f64) {
    let f = modes.mirror_factor();
    let mut g = 0.0;
    let mut v = 0.0;
    for (i, w) in modes.omegas.iter().enumerate() {
        g += w * w * s.u[i] * s.u[i];
        v += s.v[i] * s.v[i];
    }
    ((f * g).sqrt(), (f * v).sqrt())
}

pub fn action(modes: &ModeSet, s: &ModeState, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("speed {c} must be positive")));
    }
    let (g, v) = sobolev_norms(modes, s);
    Ok((v * v + c * c * g * g) / (2.0 * c))
}

/// Sparse multi-index over ladder positions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MultiIndexK(pub Vec<(usize, i32)>);

impl MultiIndexK {
    pub fn unit(m: usize, s: i32) -> MultiIndexK {
        MultiIndexK(vec![(m, s)])
    }

    pub fn norm1(&self) -> i32 {
        self.0.iter().map(|(_, k)| k.abs()).sum()
    }

    pub fn dot(&self, omegas: &[f64]) -> f64 {
        self.0.iter().map(|&(m, k)| k as f64 * omegas[m]).sum()
    }

    pub fn neg(&self) -> MultiIndexK {
        MultiIndexK(self.0.iter().map(|&(m, k)| (m, -k)).collect())
    }

    pub fn from_dense(k: &[i32]) -> MultiIndexK {
        MultiIndexK(
            k.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0)
                .map(|(m, &v)| (m, v))
                .collect(),
        )
    }

    pub fn to_dense(&self, rungs: usize) -> Vec<i32> {
        let mut out = vec![0; rungs];
        for &(m, k) in &self.0 {
            out[m] = k;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyLadder {
    pub omegas: Vec<f64>,
    /// ladder position m(j) per mode of the ModeSet
    pub position: Vec<usize>,
    pub tol: f64,
    /// true when the dedup used exact integer arithmetic
    pub exact: bool,
}

impl FrequencyLadder {
    pub fn rungs(&self) -> usize {
        self.omegas.len()
    }

    pub fn diag_label(&self, mode: usize) -> MultiIndexK {
        MultiIndexK::unit(self.position[mode], 1)
    }
}

/// Detect ℓ/π = p/q with small q; returns (p, q).
fn rational_over_pi(l: f64) -> Option<(i64, i64)> {
    let x = l / PI;
    for q in 1..=64i64 {
        let p = (x * q as f64).round();
        if p >= 1.0 && (x - p / q as f64).abs() <= 1e-12 * x.max(1.0) {
            return Some((p as i64, q));
        }
    }
    None
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Exact Ω_j² scaled to integers when every ℓ_i is a rational multiple of π.
fn exact_scaled_omega2(modes: &ModeSet) -> Option<Vec<i128>> {
    let ratios = modes
        .lengths
        .iter()
        .map(|&l| rational_over_pi(l))
        .collect::<Option<Vec<_>>>()?;
    // jπ/ℓ = j q / p; multiply by lcm of the p's
    let lcm = ratios.iter().fold(1i64, |acc, &(p, _)| acc / gcd(acc, p) * p);
    Some(
        modes
            .modes
            .iter()
            .map(|m| {
                ratios
                    .iter()
                    .enumerate()
                    .map(|(axis, &(p, q))| {
                        let v = m[axis] as i128 * q as i128 * (lcm / p) as i128;
                        v * v
                    })
                    .sum()
            })
            .collect(),
    )
}

pub fn frequency_ladder(modes: &ModeSet, tol: Option<f64>) -> Result<FrequencyLadder> {
    let n = modes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| modes.omegas[a].total_cmp(&modes.omegas[b]).then(a.cmp(&b)));
    let min_omega = modes.omegas.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = tol.unwrap_or(1e-9 * min_omega);
    if tol < 0.0 {
        return Err(Error::InvalidArgument("ladder tolerance must be >= 0".into()));
    }
    let mut position = vec![0usize; n];
    let mut omegas = Vec::new();
    let exact = exact_scaled_omega2(modes);
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    if let Some(sq) = &exact {
        for &i in &order {
            match clusters.last_mut() {
                Some(c) if sq[c[0]] == sq[i] => c.push(i),
                _ => clusters.push(vec![i]),
            }
        }
    } else {
        for &i in &order {
            match clusters.last_mut() {
                Some(c) if modes.omegas[i] - modes.omegas[*c.last().unwrap()] <= tol => c.push(i),
                _ => clusters.push(vec![i]),
            }
        }
    }
    for c in &clusters {
        let lo = modes.omegas[c[0]];
        let hi = modes.omegas[*c.last().unwrap()];
        if exact.is_none() && hi - lo > 10.0 * tol {
            return Err(Error::LadderMerge { diameter: hi - lo, tol });
        }
        let mean = c.iter().map(|&i| modes.omegas[i]).sum::<f64>() / c.len() as f64;
        for &i in c {
            position[i] = omegas.len();
        }
        omegas.push(mean);
    }
    Ok(FrequencyLadder {
        omegas,
        position,
        tol,
        exact: exact.is_some(),
    })
}

/// Membership test of 𝒦_j away from the diagonal: ||κ| − Ω| ≥ threshold.
#[inline]
pub fn outside_band(kappa: f64, omega_j: f64, threshold: f64) -> bool {
    (kappa.abs() - omega_j).abs() >= threshold
}

/// Signed near-resonance predicate |κ ∓ Ω| < threshold.
#[inline]
pub fn near_signed(kappa: f64, omega_j: f64, threshold: f64, sign: i32) -> bool {
    (kappa - sign as f64 * omega_j).abs() < threshold
}

pub const DEFAULT_LABEL_CAP: usize = 2_000_000;

/// Every k over the ladder with ‖k‖₁ ≤ kmax, depth-first over rungs.
pub fn enumerate_labels(rungs: usize, kmax: i32, cap: usize) -> Result<Vec<MultiIndexK>> {
    fn rec(
        m: usize,
        rungs: usize,
        budget: i32,
        cur: &mut Vec<(usize, i32)>,
        out: &mut Vec<MultiIndexK>,
        cap: usize,
    ) -> Result<()> {
        if m == rungs {
            if out.len() >= cap {
                return Err(Error::Budget {
                    what: "enumerated labels".into(),
                    count: out.len() + 1,
                    cap,
                });
            }
            out.push(MultiIndexK(cur.clone()));
            return Ok(());
        }
        for k in -budget..=budget {
            if k != 0 {
                cur.push((m, k));
            }
            rec(m + 1, rungs, budget - k.abs(), cur, out, cap)?;
            if k != 0 {
                cur.pop();
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    rec(0, rungs, kmax, &mut Vec::new(), &mut out, cap)?;
    Ok(out)
}

/// Labels of 𝒦_j: the outside-band labels with ‖k‖₁ ≤ kmax plus ±⟨j⟩.
pub fn resonance_set(
    mode: usize,
    modes: &ModeSet,
    ladder: &FrequencyLadder,
    eps: f64,
    alpha: f64,
    kmax: i32,
    cap: usize,
) -> Result<Vec<MultiIndexK>> {
    if !(alpha > 0.0 && alpha < 1.0) || kmax < 1 {
        return Err(Error::InvalidArgument(
            "resonance set needs 0 < alpha < 1 and kmax >= 1".into(),
        ));
    }
    let th = eps.powf(1.0 - alpha);
    let om = modes.omegas[mode];
    let plus = ladder.diag_label(mode);
    let minus = plus.neg();
    Ok(enumerate_labels(ladder.rungs(), kmax, cap)?
        .into_iter()
        .filter(|k| *k == plus || *k == minus || outside_band(k.dot(&ladder.omegas), om, th))
        .collect())
}

/// Coefficients of one mode of an expansion layer, as needed by the norm.
#[derive(Debug, Clone)]
pub struct ModeLayer {
    pub omega: f64,
    pub plus: Complex64,
    pub minus: Complex64,
    /// (κ, z) for every off-diagonal label
    pub off: Vec<(f64, Complex64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfeNorm {
    pub diag: f64,
    pub off: f64,
    pub full: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormStyle {
    /// weights Ω² on the diagonal and |Ω² − κ²| off it
    OneD,
    /// weights 2Ω on the diagonal and |κ| + Ω off it
    MultiD,
}

pub fn mfe_norm(layer: &[ModeLayer], dim: usize, style: NormStyle) -> MfeNorm {
    let f = (1u32 << dim) as f64;
    let mut d2 = 0.0;
    let mut o2 = 0.0;
    for m in layer {
        let amp = m.plus.norm() + m.minus.norm();
        let off: f64 = match style {
            NormStyle::OneD => m
                .off
                .iter()
                .map(|(k, z)| (m.omega * m.omega - k * k).abs() * z.norm())
                .sum(),
            NormStyle::MultiD => m.off.iter().map(|(k, z)| (k.abs() + m.omega) * z.norm()).sum(),
        };
        let diag = match style {
            NormStyle::OneD => m.omega * amp,
            NormStyle::MultiD => 2.0 * m.omega * amp,
        };
        d2 += diag * diag;
        o2 += off * off;
    }
    MfeNorm {
        diag: (f * d2).sqrt(),
        off: (f * o2).sqrt(),
        full: (f * (d2 + o2)).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn omega_examples() {
        let pi3 = [PI; 3];
        assert!((omega(&[1, 1, 1], &pi3).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        assert!((omega(&[5], &[PI]).unwrap() - 5.0).abs() < 1e-15);
        assert!((omega(&[3, 4, 5], &pi3).unwrap() - 50f64.sqrt()).abs() < 1e-14);
        assert!(omega(&[1, 0, 1], &pi3).is_err());
    }

    #[test]
    fn mode_set_order_and_lookup() {
        let ms = ModeSet::new(&[PI, PI], 3).unwrap();
        assert_eq!(ms.modes[0], [1, 1, 0]);
        assert_eq!(ms.modes[1], [1, 2, 0]);
        assert_eq!(ms.modes[3], [2, 1, 0]);
        for (i, m) in ms.modes.iter().enumerate() {
            assert_eq!(ms.index_of_abs(m), Some(i));
            assert_eq!(ms.index_of_abs(&[-m[0], m[1], 0]), Some(i));
            assert!(m[..2].iter().all(|&c| c != 0));
        }
        assert_eq!(ms.index_of_abs(&[0, 1, 0]), None);
        assert_eq!(ms.index_of_abs(&[4, 1, 0]), None);
        assert_eq!(ms.sign_of(&[-1, 2, 0]), -1.0);
        assert_eq!(ms.sign_of(&[-1, -2, 0]), 1.0);
    }

    #[test]
    fn norms_and_action_examples() {
        let ms = ModeSet::new(&[PI], 4).unwrap();
        let z = ModeState::zeros(4);
        assert_eq!(sobolev_norms(&ms, &z), (0.0, 0.0));
        assert_eq!(action(&ms, &z, 1.0).unwrap(), 0.0);
        let mut s = ModeState::zeros(4);
        s.u[0] = 1e-2;
        let (g, v) = sobolev_norms(&ms, &s);
        assert!((g * g - 2e-4).abs() < 1e-18);
        assert_eq!(v, 0.0);
        assert!((action(&ms, &s, 2.0).unwrap() - 2e-4).abs() < 1e-18);
        assert!(action(&ms, &s, 0.0).is_err());
    }

    #[test]
    fn sobolev_norms_match_grid_quadrature() {
        let j_max = 8;
        let ms = ModeSet::new(&[PI], j_max).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut s = ModeState::zeros(ms.len());
        for i in 0..ms.len() {
            s.u[i] = rng.gen_range(-1.0..1.0);
            s.v[i] = rng.gen_range(-1.0..1.0);
        }
        // u(x) = i Σ_{signed} u_j e^{ijx} = -2 Σ_{j>0} u_j sin(jx) on the 2π-periodic odd extension
        let n = 1024;
        let (mut gq, mut vq) = (0.0, 0.0);
        for m in 0..n {
            let x = 2.0 * PI * m as f64 / n as f64;
            let (mut ux, mut vt) = (0.0, 0.0);
            for (i, mode) in ms.modes.iter().enumerate() {
                let j = mode[0] as f64;
                ux += -2.0 * s.u[i] * j * (j * x).cos();
                vt += -2.0 * s.v[i] * (j * x).sin();
            }
            gq += ux * ux;
            vq += vt * vt;
        }
        let h = 2.0 * PI / n as f64;
        let (gq, vq) = ((gq * h / (2.0 * PI)).sqrt(), (vq * h / (2.0 * PI)).sqrt());
        let (g, v) = sobolev_norms(&ms, &s);
        assert!((gq - g).abs() / g < 1e-10, "{gq} {g}");
        assert!((vq - v).abs() / v < 1e-10, "{vq} {v}");
    }

    #[test]
    fn ladder_examples() {
        let ms = ModeSet::new(&[PI], 4).unwrap();
        let l = frequency_ladder(&ms, None).unwrap();
        assert!(l.exact);
        assert_eq!(l.omegas, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(l.position, vec![0, 1, 2, 3]);

        let cube = ModeSet::new(&[PI; 3], 2).unwrap();
        let l = frequency_ladder(&cube, None).unwrap();
        let expect = [3f64.sqrt(), 6f64.sqrt(), 3.0, 12f64.sqrt()];
        assert_eq!(l.rungs(), 4);
        for (a, b) in l.omegas.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let p = |m: Mode| l.position[cube.index_of_abs(&m).unwrap()];
        assert_eq!(p([1, 1, 2]), p([1, 2, 1]));
        assert_eq!(p([1, 2, 1]), p([2, 1, 1]));
        assert_eq!(p([1, 1, 1]), 0);
        assert_eq!(p([2, 2, 2]), 3);

        let rect = ModeSet::new(&[PI, PI * 2f64.sqrt()], 2).unwrap();
        let l = frequency_ladder(&rect, Some(1e-12)).unwrap();
        assert!(!l.exact);
        assert_eq!(l.rungs(), 4);
    }

    #[test]
    fn ladder_merge_ambiguity_is_reported() {
        let ms = ModeSet::new(&[PI * 2f64.sqrt()], 12).unwrap();
        assert_eq!(frequency_ladder(&ms, Some(0.0)).unwrap().rungs(), 12);
        // a tolerance equal to the spacing chains all twelve frequencies together
        assert!(matches!(
            frequency_ladder(&ms, Some(0.5f64.sqrt() + 1e-9)),
            Err(Error::LadderMerge { .. })
        ));
    }

    #[test]
    fn resonance_examples() {
        let ms = ModeSet::new(&[PI], 4).unwrap();
        let l = frequency_ladder(&ms, None).unwrap();
        let set1 = resonance_set(0, &ms, &l, 0.1, 0.25, 3, DEFAULT_LABEL_CAP).unwrap();
        assert!(set1.contains(&MultiIndexK::unit(0, 1)));
        assert!(set1.contains(&MultiIndexK::unit(0, -1)));
        assert!(set1.contains(&MultiIndexK::unit(0, 3)));
        let set3 = resonance_set(2, &ms, &l, 0.1, 0.25, 3, DEFAULT_LABEL_CAP).unwrap();
        assert!(set3.contains(&MultiIndexK::unit(2, 1)));
        assert!(!set3.contains(&MultiIndexK(vec![(0, 1), (1, 1)])));
        assert!(matches!(
            resonance_set(0, &ms, &l, 0.1, 0.25, 3, 10),
            Err(Error::Budget { cap: 10, .. })
        ));
    }

    #[test]
    fn norm_examples() {
        let zero = vec![ModeLayer {
            omega: 1.0,
            plus: Complex64::new(0.0, 0.0),
            minus: Complex64::new(0.0, 0.0),
            off: vec![(3.0, Complex64::new(0.0, 0.0))],
        }];
        assert_eq!(
            mfe_norm(&zero, 1, NormStyle::OneD),
            MfeNorm {
                diag: 0.0,
                off: 0.0,
                full: 0.0
            }
        );
        let one = vec![ModeLayer {
            omega: 2.0,
            plus: Complex64::new(1.0, 0.0),
            minus: Complex64::new(0.0, 0.0),
            off: vec![],
        }];
        let n = mfe_norm(&one, 1, NormStyle::OneD);
        assert!((n.full - 8f64.sqrt()).abs() < 1e-15);
        let n = mfe_norm(&one, 3, NormStyle::MultiD);
        assert_eq!(n.off, 0.0);
        assert!((n.diag - (8.0f64 * 16.0).sqrt()).abs() < 1e-12);
    }

    fn random_state(seed: u64, n: usize) -> ModeState {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = ModeState::zeros(n);
        for i in 0..n {
            s.u[i] = rng.gen_range(-1.0..1.0);
            s.v[i] = rng.gen_range(-1.0..1.0);
        }
        s
    }

    proptest! {
        #[test]
        fn omega_homogeneous(lambda in 0.2f64..5.0, d in 1usize..=3) {
            let base = vec![PI, 1.3 * PI, 0.7 * PI][..d].to_vec();
            let scaled: Vec<f64> = base.iter().map(|l| l * lambda).collect();
            let a = ModeSet::new(&base, 3).unwrap();
            let b = ModeSet::new(&scaled, 3).unwrap();
            for (x, y) in a.omegas.iter().zip(&b.omegas) {
                prop_assert!((x / lambda - y).abs() <= 1e-12 * x);
            }
            let la = frequency_ladder(&a, None).unwrap();
            let lb = frequency_ladder(&b, None).unwrap();
            prop_assert_eq!(la.position, lb.position);
        }

        #[test]
        fn resonance_set_monotone_in_eps(e1 in 0.01f64..0.5, shrink in 0.1f64..1.0, mode in 0usize..8) {
            let cube = ModeSet::new(&[PI; 3], 2).unwrap();
            let l = frequency_ladder(&cube, None).unwrap();
            let big = resonance_set(mode, &cube, &l, e1, 0.25, 3, DEFAULT_LABEL_CAP).unwrap();
            let small = resonance_set(mode, &cube, &l, e1 * shrink, 0.25, 3, DEFAULT_LABEL_CAP).unwrap();
            for k in &big {
                prop_assert!(small.contains(k));
            }
        }

        #[test]
        fn action_sign_symmetric(seed in 0u64..500, c in 0.1f64..4.0) {
            let ms = ModeSet::new(&[PI, 2.0], 3).unwrap();
            let s = random_state(seed, ms.len());
            let mut f = s.clone();
            f.u.iter_mut().for_each(|x| *x = -*x);
            f.v.iter_mut().for_each(|x| *x = -*x);
            prop_assert_eq!(action(&ms, &s, c).unwrap(), action(&ms, &f, c).unwrap());
        }

        #[test]
        fn norm_split_is_exact(seed in 0u64..500, d in 1usize..=3) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut c = || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let layer: Vec<ModeLayer> = (0..5).map(|i| ModeLayer {
                omega: 1.0 + i as f64,
                plus: c(),
                minus: c(),
                off: (0..4).map(|k| (k as f64 * 0.7 - 1.0, c())).collect(),
            }).collect();
            for style in [NormStyle::OneD, NormStyle::MultiD] {
                let n = mfe_norm(&layer, d, style);
                prop_assert!((n.full * n.full - n.diag * n.diag - n.off * n.off).abs() <= 1e-12 * n.full * n.full);
            }
        }
    }
}
