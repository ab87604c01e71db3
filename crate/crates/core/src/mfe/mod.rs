//! Modulated Fourier expansion engine shared by the 1D and nD front ends.
//!
//! The expansion of mode j is Σ_l ε^l Σ_k z_{j,l}^k(τ) e^{iκ(k)φ(τ)/ε}, with
//! τ = εt and labels k drawn from a frequency ladder. Modulation functions are
//! represented by their values at Chebyshev-Lobatto nodes on one window
//! [τ₀, τ₀ + 1]; derivatives and integrals are spectral.

pub mod kernel;
pub mod phase;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::cheb::ChebGrid;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::profiles::ProblemSpec;
use crate::spectral::{
    frequency_ladder, mfe_norm, FrequencyLadder, MfeNorm, ModeLayer, ModeSet, ModeState, NormStyle, DEFAULT_LABEL_CAP,
};

pub use kernel::{triple_product, triple_product_capped, Label, Lattice, Packed};
use phase::PhaseIntegrator;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);
const I: C = C::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Kind {
    OneD,
    MultiD,
}

/// Integer encoding of ladder multi-indices in a balanced base.
#[derive(Debug, Clone)]
pub struct LabelCodec {
    pub base: i128,
    pub omegas: Vec<f64>,
}

impl LabelCodec {
    pub fn rungs(&self) -> usize {
        self.omegas.len()
    }

    pub fn encode(&self, k: &[i32]) -> Label {
        k.iter().rev().fold(0i128, |acc, &d| acc * self.base + d as i128)
    }

    pub fn decode(&self, code: Label) -> Vec<i32> {
        if self.rungs() == 1 {
            return vec![code as i32];
        }
        let half = self.base / 2;
        let mut rest = code;
        let mut out = Vec::with_capacity(self.rungs());
        for _ in 0..self.rungs() {
            let mut d = rest.rem_euclid(self.base);
            if d > half {
                d -= self.base;
            }
            out.push(d as i32);
            rest = (rest - d) / self.base;
        }
        out
    }

    pub fn kappa(&self, code: Label) -> f64 {
        if self.rungs() == 1 {
            return code as f64 * self.omegas[0];
        }
        self.decode(code)
            .iter()
            .zip(&self.omegas)
            .map(|(&k, w)| k as f64 * w)
            .sum()
    }

    pub fn norm1(&self, code: Label) -> i32 {
        self.decode(code).iter().map(|k| k.abs()).sum()
    }
}

/// Role of a label in the equations of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    /// ±⟨j⟩
    Diag(i32),
    /// off-diagonal label with an algebraic equation
    Member,
    /// near-resonant label feeding the diagonal equation of the given sign
    Near(i32),
}

/// Everything about an expansion that does not depend on the data.
#[derive(Debug, Clone)]
pub struct Setup {
    pub kind: Kind,
    pub modes: ModeSet,
    pub lattice: Lattice,
    pub codec: LabelCodec,
    pub ladder: Option<FrequencyLadder>,
    pub diag: Vec<Label>,
    pub epsilon: f64,
    pub order: usize,
    pub alpha: f64,
    /// ε^{1−α} in nD, zero in 1D
    pub threshold: f64,
    pub c0: f64,
}

impl Setup {
    pub fn one_d(spec: &ProblemSpec, cutoff: i32, order: usize) -> Result<Setup> {
        if spec.dimension != 1 {
            return Err(Error::InvalidArgument("one_d needs a 1D problem".into()));
        }
        let modes = ModeSet::new(&spec.lengths, cutoff)?;
        let codec = LabelCodec {
            base: 1 << 40,
            omegas: vec![std::f64::consts::PI / spec.lengths[0]],
        };
        let diag = modes.modes.iter().map(|m| m[0] as Label).collect();
        Ok(Setup {
            kind: Kind::OneD,
            lattice: Lattice::new(&modes),
            modes,
            codec,
            ladder: None,
            diag,
            epsilon: spec.epsilon,
            order,
            alpha: 0.0,
            threshold: 0.0,
            c0: spec.c0,
        })
    }

    pub fn multi_d(
        spec: &ProblemSpec,
        cutoff: i32,
        order: usize,
        alpha: f64,
        ladder_tol: Option<f64>,
    ) -> Result<Setup> {
        if spec.dimension < 2 {
            return Err(Error::InvalidArgument("multi_d needs a 2D or 3D problem".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} not in (0,1)")));
        }
        let modes = ModeSet::new(&spec.lengths, cutoff)?;
        let ladder = frequency_ladder(&modes, ladder_tol)?;
        let rungs = ladder.rungs();
        let base = (6 * (order + 1) + 3) as i128;
        let bits = rungs as f64 * (base as f64).log2();
        if bits > 120.0 {
            return Err(Error::Budget {
                what: "label code bits".into(),
                count: bits.ceil() as usize,
                cap: 120,
            });
        }
        let codec = LabelCodec {
            base,
            omegas: ladder.omegas.clone(),
        };
        let diag = (0..modes.len())
            .map(|m| codec.encode(&ladder.diag_label(m).to_dense(rungs)))
            .collect();
        Ok(Setup {
            kind: Kind::MultiD,
            lattice: Lattice::new(&modes),
            modes,
            codec,
            ladder: Some(ladder),
            diag,
            epsilon: spec.epsilon,
            order,
            alpha,
            threshold: spec.epsilon.powf(1.0 - alpha),
            c0: spec.c0,
        })
    }

    pub fn classify(&self, mode: usize, code: Label) -> Class {
        let d = self.diag[mode];
        if code == d {
            return Class::Diag(1);
        }
        if code == -d {
            return Class::Diag(-1);
        }
        if self.kind == Kind::OneD {
            return Class::Member;
        }
        let kap = self.codec.kappa(code);
        let om = self.modes.omegas[mode];
        if (kap.abs() - om).abs() >= self.threshold {
            Class::Member
        } else if (kap - om).abs() < self.threshold {
            Class::Near(1)
        } else {
            Class::Near(-1)
        }
    }

    /// κ of a label as seen by mode `mode` (exact ±Ω on the diagonal).
    pub fn kappa(&self, mode: usize, code: Label) -> f64 {
        match self.classify(mode, code) {
            Class::Diag(s) => s as f64 * self.modes.omegas[mode],
            _ => self.codec.kappa(code),
        }
    }

    pub fn norm_style(&self) -> NormStyle {
        match self.kind {
            Kind::OneD => NormStyle::OneD,
            Kind::MultiD => NormStyle::MultiD,
        }
    }

    pub fn mirror(&self) -> f64 {
        self.modes.mirror_factor()
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    /// Chebyshev polynomial degree per window
    pub nodes: usize,
    pub label_cap: usize,
    pub exec: Exec,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            nodes: 32,
            label_cap: DEFAULT_LABEL_CAP,
            exec: Exec::default(),
        }
    }
}

/// Values, first and second τ-derivatives of one modulation function.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub z: Vec<C>,
    pub zd: Vec<C>,
    pub zdd: Vec<C>,
}

impl Series {
    fn zeros(n: usize) -> Series {
        Series {
            z: vec![ZERO; n],
            zd: vec![ZERO; n],
            zdd: vec![ZERO; n],
        }
    }

    fn conj(&self) -> Series {
        let c = |v: &[C]| v.iter().map(C::conj).collect();
        Series {
            z: c(&self.z),
            zd: c(&self.zd),
            zdd: c(&self.zdd),
        }
    }

    fn axpy(&mut self, s: f64, other: &Series) {
        for (a, b) in self.z.iter_mut().zip(&other.z) {
            *a += b * s;
        }
        for (a, b) in self.zd.iter_mut().zip(&other.zd) {
            *a += b * s;
        }
        for (a, b) in self.zdd.iter_mut().zip(&other.zdd) {
            *a += b * s;
        }
    }
}

pub type ModeMap<T> = Vec<BTreeMap<Label, T>>;

/// Combined expansion and slow coefficients sampled at a set of τ values.
#[derive(Debug, Clone)]
pub struct Probe {
    pub tau: Vec<f64>,
    pub c: Vec<f64>,
    pub cd: Vec<f64>,
    pub a: Vec<f64>,
    pub phi: Vec<f64>,
    /// Σ_l ε^l z_l per mode and label
    pub z: ModeMap<Series>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantSample {
    pub tau: f64,
    pub value: f64,
    pub imag: f64,
    pub leading: f64,
}

#[derive(Debug, Clone)]
pub struct DefectReport {
    pub tau: Vec<f64>,
    pub norm: Vec<f64>,
    /// per mode and label; diagonal entries include the near-resonant sums
    pub entries: ModeMap<Vec<C>>,
}

/// Which of the two algebraically equivalent defect formulas to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefectForm {
    Direct,
    Prefactored,
}

/// A modulated Fourier expansion on one window.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub setup: Arc<Setup>,
    pub spec: ProblemSpec,
    pub tau0: f64,
    pub grid: ChebGrid,
    pub c: Vec<f64>,
    pub cd: Vec<f64>,
    pub a: Vec<f64>,
    pub phi: Vec<f64>,
    /// index l = 0..=N+1, entry 0 unused
    pub layers: Vec<ModeMap<Series>>,
    /// −a times the order-l convolution, index l, at the nodes
    pub g: Vec<ModeMap<Vec<C>>>,
    /// near-resonant labels per mode, [plus, minus]
    pub near: Vec<[BTreeSet<Label>; 2]>,
    pub start: ModeState,
    pub exec: Exec,
}

/// −a(τ) times the sum of triple convolutions over order splits l₁+l₂+l₃ = l.
///
/// `packed[m]` holds layer m at the evaluation points; `coupling` holds a(τ) there.
pub fn order_terms(
    setup: &Setup,
    packed: &[Option<Packed>],
    l: usize,
    coupling: &[f64],
    exec: Exec,
) -> ModeMap<Vec<C>> {
    order_terms_capped(setup, packed, l, coupling, exec, usize::MAX).expect("uncapped")
}

/// As [`order_terms`], with a budget on the labels of each convolution.
pub fn order_terms_capped(
    setup: &Setup,
    packed: &[Option<Packed>],
    l: usize,
    coupling: &[f64],
    exec: Exec,
    cap: usize,
) -> Result<ModeMap<Vec<C>>> {
    let nm = setup.modes.len();
    let mut total: ModeMap<Vec<C>> = vec![BTreeMap::new(); nm];
    for l1 in 1..=l {
        for l2 in l1..=l {
            if l1 + l2 >= l {
                break;
            }
            let l3 = l - l1 - l2;
            if l3 < l2 {
                continue;
            }
            let mult = if l1 == l3 {
                1.0
            } else if l1 == l2 || l2 == l3 {
                3.0
            } else {
                6.0
            };
            let (pa, pb, pc) = match (&packed[l1], &packed[l2], &packed[l3]) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => continue,
            };
            if pa.total_labels() == 0 || pb.total_labels() == 0 || pc.total_labels() == 0 {
                continue;
            }
            let r = triple_product_capped(&setup.lattice, pa, pb, pc, None, exec, cap)?;
            for (m, map) in r.into_iter().enumerate() {
                for (k, v) in map {
                    let dst = total[m].entry(k).or_insert_with(|| vec![ZERO; v.len()]);
                    for (d, x) in dst.iter_mut().zip(&v) {
                        *d += x * mult;
                    }
                }
            }
        }
    }
    for map in total.iter_mut() {
        for v in map.values_mut() {
            for (x, a) in v.iter_mut().zip(coupling) {
                *x *= -a;
            }
        }
        map.retain(|_, v| v.iter().any(|x| *x != ZERO));
    }
    Ok(total)
}

fn check_profile(spec: &ProblemSpec, tau: f64, c: f64, a: f64) -> Result<()> {
    if !c.is_finite() {
        return Err(Error::NonFinite {
            label: spec.speed.label.clone(),
            tau,
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite {
            label: spec.coupling.label.clone(),
            tau,
        });
    }
    Ok(())
}

impl Expansion {
    /// Builds orders 1..=N+1 on [τ₀, τ₀+1] from the mode state at t = τ₀/ε.
    pub fn build(
        setup: Arc<Setup>,
        spec: &ProblemSpec,
        s0: &ModeState,
        tau0: f64,
        opts: &Options,
    ) -> Result<Expansion> {
        s0.check(&setup.modes)?;
        let n_order = setup.order;
        if n_order == 0 {
            return Err(Error::InvalidArgument("truncation order must be at least 1".into()));
        }
        let grid = ChebGrid::new(tau0, 1.0, opts.nodes);
        let np = grid.points();
        let mut c = Vec::with_capacity(np);
        let mut cd = Vec::with_capacity(np);
        let mut a = Vec::with_capacity(np);
        for &t in &grid.tau {
            let cv = spec.speed.eval(t, 0)?;
            let av = spec.coupling.eval(t, 0)?;
            check_profile(spec, t, cv, av)?;
            if !(cv > 0.0) {
                return Err(Error::InvalidArgument(format!("speed not positive at tau = {t}")));
            }
            c.push(cv);
            cd.push(spec.speed.eval(t, 1)?);
            a.push(av);
        }
        let q = PhaseIntegrator::default();
        let mut phi = vec![0.0; np];
        for k in 1..np {
            phi[k] = phi[k - 1] + q.integral(&spec.speed, grid.tau[k - 1], grid.tau[k]);
        }
        let nm = setup.modes.len();
        let mut ex = Expansion {
            setup: setup.clone(),
            spec: spec.clone(),
            tau0,
            grid,
            c,
            cd,
            a,
            phi,
            layers: vec![vec![BTreeMap::new(); nm]; n_order + 2],
            g: vec![vec![BTreeMap::new(); nm]; n_order + 2],
            near: vec![[BTreeSet::new(), BTreeSet::new()]; nm],
            start: s0.clone(),
            exec: opts.exec,
        };
        let mut packed: Vec<Option<Packed>> = vec![None; n_order + 2];
        for l in 1..=n_order + 1 {
            let g = if l >= 3 {
                order_terms_capped(&setup, &packed, l, &ex.a, ex.exec, opts.label_cap)?
            } else {
                vec![BTreeMap::new(); nm]
            };
            for (m, gm) in g.iter().enumerate() {
                for k in gm.keys() {
                    if let Class::Near(s) = setup.classify(m, *k) {
                        ex.near[m][if s > 0 { 0 } else { 1 }].insert(*k);
                    }
                }
            }
            if l >= 2 {
                ex.solve_diagonal(l - 1, &g);
                packed[l - 1] = Some(ex.pack_layer(l - 1));
            }
            ex.off_diagonal(l, &g)?;
            let count: usize = ex.layers[l].iter().map(BTreeMap::len).sum();
            if count > opts.label_cap {
                return Err(Error::Budget {
                    what: format!("labels in layer {l}"),
                    count,
                    cap: opts.label_cap,
                });
            }
            ex.diagonal_start(l);
            ex.g[l] = g;
        }
        Ok(ex)
    }

    pub fn epsilon(&self) -> f64 {
        self.setup.epsilon
    }

    pub fn order(&self) -> usize {
        self.setup.order
    }

    fn pack_layer(&self, l: usize) -> Packed {
        let np = self.grid.points();
        let mut p = Packed::new(self.setup.modes.len(), np);
        for (m, map) in self.layers[l].iter().enumerate() {
            for (k, s) in map {
                p.push(m, *k, &s.z);
            }
        }
        p
    }

    fn weight(&self, mode: usize, k: Label, sign: i32, phi: f64) -> C {
        let om = self.setup.modes.omegas[mode];
        let kap = self.setup.kappa(mode, k);
        let gap = kap - sign as f64 * om;
        if gap == 0.0 {
            C::new(1.0, 0.0)
        } else {
            C::from_polar(1.0, gap * phi / self.epsilon())
        }
    }

    /// Integrates the ⟨j⟩ equations of layer `l` using G_{l+1}; −⟨j⟩ is the mirror.
    fn solve_diagonal(&mut self, l: usize, g: &ModeMap<Vec<C>>) {
        let np = self.grid.points();
        let setup = self.setup.clone();
        for m in 0..setup.modes.len() {
            let om = setup.modes.omegas[m];
            let dk = setup.diag[m];
            let mut r = vec![ZERO; np];
            if l >= 2 {
                if let Some(prev) = self.layers[l - 1][m].get(&dk) {
                    for (x, v) in r.iter_mut().zip(&prev.zdd) {
                        *x -= v;
                    }
                }
            }
            for (k, gv) in &g[m] {
                if matches!(setup.classify(m, *k), Class::Diag(1) | Class::Near(1)) {
                    for p in 0..np {
                        r[p] += self.weight(m, *k, 1, self.phi[p]) * gv[p];
                    }
                }
            }
            let z0 = self.layers[l][m].get(&dk).map(|x| x.z[0]).unwrap_or(ZERO);
            let integrand: Vec<C> = (0..np).map(|p| r[p] / (I * (2.0 * om * self.c[p].sqrt()))).collect();
            let q = self.grid.integral(&integrand);
            let root0 = self.c[0].sqrt();
            let z: Vec<C> = (0..np).map(|p| (z0 * root0 + q[p]) / self.c[p].sqrt()).collect();
            let zd: Vec<C> = (0..np)
                .map(|p| (r[p] / (I * om) - z[p] * self.cd[p]) / (2.0 * self.c[p]))
                .collect();
            let zdd = self.grid.derivative(&zd);
            let ser = Series { z, zd, zdd };
            self.layers[l][m].insert(-dk, ser.conj());
            self.layers[l][m].insert(dk, ser);
        }
    }

    fn off_diagonal(&mut self, l: usize, g: &ModeMap<Vec<C>>) -> Result<()> {
        let np = self.grid.points();
        let setup = self.setup.clone();
        let nm = setup.modes.len();
        for m in 0..nm {
            let om = setup.modes.omegas[m];
            let mut labels: BTreeSet<Label> = BTreeSet::new();
            for k in g[m].keys() {
                if setup.classify(m, *k) == Class::Member {
                    labels.insert(*k);
                }
            }
            for back in [1usize, 2] {
                if l > back {
                    for k in self.layers[l - back][m].keys() {
                        if setup.classify(m, *k) == Class::Member {
                            labels.insert(*k);
                        }
                    }
                }
            }
            for &k in &labels {
                if k < 0 && labels.contains(&-k) {
                    continue;
                }
                let kap = setup.codec.kappa(k);
                let mut z = vec![ZERO; np];
                if let Some(gv) = g[m].get(&k) {
                    z.copy_from_slice(gv);
                }
                if l > 2 {
                    if let Some(s2) = self.layers[l - 2][m].get(&k) {
                        for (x, v) in z.iter_mut().zip(&s2.zdd) {
                            *x -= v;
                        }
                    }
                }
                if l > 1 {
                    if let Some(s1) = self.layers[l - 1][m].get(&k) {
                        for p in 0..np {
                            z[p] -= I * kap * (2.0 * self.c[p] * s1.zd[p] + self.cd[p] * s1.z[p]);
                        }
                    }
                }
                for p in 0..np {
                    let den = (om * om - kap * kap) * self.c[p] * self.c[p];
                    if setup.kind == Kind::MultiD {
                        let floor = 0.5 * setup.threshold * (kap.abs() + om) * setup.c0 * setup.c0;
                        if den.abs() < floor {
                            return Err(Error::Internal(format!(
                                "off-diagonal denominator {den:e} below {floor:e} for mode {:?}",
                                setup.modes.modes[m]
                            )));
                        }
                    }
                    z[p] /= den;
                }
                let zd = self.grid.derivative(&z);
                let zdd = self.grid.derivative(&zd);
                let ser = Series { z, zd, zdd };
                if labels.contains(&-k) {
                    self.layers[l][m].insert(-k, ser.conj());
                }
                self.layers[l][m].insert(k, ser);
            }
        }
        Ok(())
    }

    /// Initial values of the diagonal entries of layer l, held constant until solved.
    fn diagonal_start(&mut self, l: usize) {
        let np = self.grid.points();
        let setup = self.setup.clone();
        let eps = self.epsilon();
        let c0 = self.c[0];
        for m in 0..setup.modes.len() {
            let om = setup.modes.omegas[m];
            let mut av = ZERO;
            let mut bv = ZERO;
            if l == 1 {
                av += self.start.u[m] / eps;
                bv += self.start.v[m] / eps;
            }
            for (k, s) in &self.layers[l][m] {
                if setup.classify(m, *k) == Class::Member {
                    av -= s.z[0];
                    bv -= I * setup.codec.kappa(*k) * c0 * s.z[0];
                }
            }
            if l >= 2 {
                for s in self.layers[l - 1][m].values() {
                    bv -= s.zd[0];
                }
            }
            let ratio = bv / (I * (om * c0));
            let zp = (av + ratio) * 0.5;
            let zm = zp.conj();
            for (s, v) in [(1, zp), (-1, zm)] {
                let dk = s as Label * setup.diag[m];
                let mut ser = Series::zeros(np);
                ser.z.iter_mut().for_each(|x| *x = v);
                self.layers[l][m].insert(dk, ser);
            }
        }
    }

    fn check_window(&self, tau: f64) -> Result<()> {
        let end = self.tau0 + 1.0;
        let slack = 1e-12 * end.abs().max(1.0);
        if !(tau >= self.tau0 - slack && tau <= end + slack) {
            return Err(Error::OutsideWindow {
                t: tau,
                start: self.tau0,
                end,
            });
        }
        Ok(())
    }

    /// Samples the combined expansion at the given τ values.
    pub fn probe(&self, taus: &[f64]) -> Result<Probe> {
        for &t in taus {
            self.check_window(t)?;
        }
        let rows: Vec<Vec<f64>> = taus.iter().map(|&t| self.grid.interp_row(t)).collect();
        let q = PhaseIntegrator::default();
        let mut c = Vec::new();
        let mut cd = Vec::new();
        let mut a = Vec::new();
        let mut phi = Vec::new();
        for &t in taus {
            c.push(self.spec.speed.eval(t, 0)?);
            cd.push(self.spec.speed.eval(t, 1)?);
            a.push(self.spec.coupling.eval(t, 0)?);
            match self.grid.tau.iter().position(|&x| x == t) {
                Some(i) => phi.push(self.phi[i]),
                None => phi.push(q.integral(&self.spec.speed, self.tau0, t)),
            }
        }
        let eps = self.epsilon();
        let npr = taus.len();
        let mut z: ModeMap<Series> = vec![BTreeMap::new(); self.setup.modes.len()];
        let mut w = 1.0;
        for l in 1..self.layers.len() {
            w *= eps;
            for (m, map) in self.layers[l].iter().enumerate() {
                for (k, s) in map {
                    let sampled = Series {
                        z: rows.iter().map(|r| ChebGrid::eval_row(r, &s.z)).collect(),
                        zd: rows.iter().map(|r| ChebGrid::eval_row(r, &s.zd)).collect(),
                        zdd: rows.iter().map(|r| ChebGrid::eval_row(r, &s.zdd)).collect(),
                    };
                    z[m].entry(*k).or_insert_with(|| Series::zeros(npr)).axpy(w, &sampled);
                }
            }
        }
        Ok(Probe {
            tau: taus.to_vec(),
            c,
            cd,
            a,
            phi,
            z,
        })
    }

    /// Labels at which the defect is formed: stored, diagonal and near-resonant.
    fn defect_targets(&self) -> Vec<Vec<Label>> {
        (0..self.setup.modes.len())
            .map(|m| {
                let mut set: BTreeSet<Label> = BTreeSet::new();
                for layer in &self.layers[1..] {
                    set.extend(layer[m].keys().copied());
                }
                set.insert(self.setup.diag[m]);
                set.insert(-self.setup.diag[m]);
                set.extend(self.near[m][0].iter().copied());
                set.extend(self.near[m][1].iter().copied());
                set.into_iter().collect()
            })
            .collect()
    }

    fn probe_conv(&self, probe: &Probe) -> ModeMap<Vec<C>> {
        let npr = probe.tau.len();
        let mut p = Packed::new(self.setup.modes.len(), npr);
        for (m, map) in probe.z.iter().enumerate() {
            for (k, s) in map {
                p.push(m, *k, &s.z);
            }
        }
        let targets = self.defect_targets();
        triple_product(&self.setup.lattice, &p, &p, &p, Some(&targets), self.exec)
    }

    /// Assembles per-label defects; diagonal keys carry the w-weighted sums.
    fn assemble_defect(
        &self,
        phi: &[f64],
        npr: usize,
        mut local: impl FnMut(usize, Label, f64, usize) -> C,
        tail: &ModeMap<Vec<C>>,
    ) -> ModeMap<Vec<C>> {
        let setup = &self.setup;
        let mut out: ModeMap<Vec<C>> = vec![BTreeMap::new(); setup.modes.len()];
        for m in 0..setup.modes.len() {
            let mut labels: BTreeSet<Label> = BTreeSet::new();
            for layer in &self.layers[1..] {
                labels.extend(layer[m].keys().copied());
            }
            for k in labels {
                let kap = setup.kappa(m, k);
                let mut d: Vec<C> = (0..npr).map(|p| local(m, k, kap, p)).collect();
                if let Some(t) = tail[m].get(&k) {
                    for (x, y) in d.iter_mut().zip(t) {
                        *x += y;
                    }
                }
                out[m].insert(k, d);
            }
            for (si, s) in [1i32, -1].into_iter().enumerate() {
                let dk = s as Label * setup.diag[m];
                let d = out[m].get_mut(&dk).expect("diagonal labels are always stored");
                for k in &self.near[m][si] {
                    if let Some(t) = tail[m].get(k) {
                        for p in 0..npr {
                            d[p] += self.weight(m, *k, s, phi[p]) * t[p];
                        }
                    }
                }
            }
        }
        out
    }

    /// Defect of the combined expansion at arbitrary τ, evaluated term by term.
    pub fn defect_direct(&self, probe: &Probe) -> ModeMap<Vec<C>> {
        let eps = self.epsilon();
        let npr = probe.tau.len();
        let mut conv = self.probe_conv(probe);
        for map in conv.iter_mut() {
            for v in map.values_mut() {
                for (x, a) in v.iter_mut().zip(&probe.a) {
                    *x *= *a;
                }
            }
        }
        let omegas = &self.setup.modes.omegas;
        self.assemble_defect(
            &probe.phi,
            npr,
            |m, k, kap, p| {
                let s = &probe.z[m][&k];
                let (c, cd) = (probe.c[p], probe.cd[p]);
                s.zdd[p] * (eps * eps)
                    + I * (2.0 * kap * eps * c) * s.zd[p]
                    + (I * (kap * eps * cd) + (omegas[m] * omegas[m] - kap * kap) * c * c) * s.z[p]
            },
            &conv,
        )
    }

    /// The ε^{N+2}-prefactored residual form at Chebyshev nodes.
    pub fn defect_prefactored(&self, nodes: &[usize]) -> Result<ModeMap<Vec<C>>> {
        if let Some(&bad) = nodes.iter().find(|&&i| i >= self.grid.points()) {
            return Err(Error::InvalidArgument(format!("node index {bad} out of range")));
        }
        let taus: Vec<f64> = nodes.iter().map(|&i| self.grid.tau[i]).collect();
        let probe = self.probe(&taus)?;
        let eps = self.epsilon();
        let n = self.order();
        let npr = nodes.len();
        let mut tail = self.probe_conv(&probe);
        for map in tail.iter_mut() {
            for v in map.values_mut() {
                for (x, a) in v.iter_mut().zip(&probe.a) {
                    *x *= *a;
                }
            }
        }
        for l in 3..=n + 1 {
            let w = eps.powi(l as i32);
            for (m, map) in self.g[l].iter().enumerate() {
                for (k, gv) in map {
                    let dst = tail[m].entry(*k).or_insert_with(|| vec![ZERO; npr]);
                    for (p, &i) in nodes.iter().enumerate() {
                        dst[p] += gv[i] * w;
                    }
                }
            }
        }
        let pre = eps.powi(n as i32 + 2);
        let top = &self.layers[n + 1];
        let below = &self.layers[n];
        let (c, cd) = (&self.c, &self.cd);
        Ok(self.assemble_defect(
            &probe.phi,
            npr,
            |m, k, kap, p| {
                let i = nodes[p];
                let mut v = ZERO;
                if let Some(s) = below[m].get(&k) {
                    v += s.zdd[i];
                }
                if let Some(s) = top[m].get(&k) {
                    v += I * kap * (2.0 * c[i] * s.zd[i] + cd[i] * s.z[i]) + s.zdd[i] * eps;
                }
                v * pre
            },
            &tail,
        ))
    }

    /// sqrt(2^d Σ_j (Σ_k |d_j^k|)²) at each evaluation point.
    pub fn defect_norm(&self, d: &ModeMap<Vec<C>>) -> Vec<f64> {
        let npr = d.iter().flat_map(|m| m.values()).map(Vec::len).next().unwrap_or(0);
        (0..npr)
            .map(|p| {
                let s: f64 = d
                    .iter()
                    .map(|m| {
                        let t: f64 = m.values().map(|v| v[p].norm()).sum();
                        t * t
                    })
                    .sum();
                (self.setup.mirror() * s).sqrt()
            })
            .collect()
    }

    /// Direct defect norm at the given τ values.
    pub fn defect(&self, taus: &[f64]) -> Result<Vec<f64>> {
        let probe = self.probe(taus)?;
        Ok(self.defect_norm(&self.defect_direct(&probe)))
    }

    pub fn defect_report(&self, taus: &[f64]) -> Result<DefectReport> {
        let probe = self.probe(taus)?;
        let entries = self.defect_direct(&probe);
        Ok(DefectReport {
            tau: taus.to_vec(),
            norm: self.defect_norm(&entries),
            entries,
        })
    }

    /// Largest relative gap between the two defect forms at the given nodes.
    pub fn defect_paths_gap(&self, nodes: &[usize]) -> Result<f64> {
        let a = self.defect_with(DefectForm::Direct, nodes)?;
        let b = self.defect_with(DefectForm::Prefactored, nodes)?;
        Ok(a.iter()
            .zip(&b)
            .map(|(x, y)| {
                let scale = x.abs().max(y.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (x - y).abs() / scale
                }
            })
            .fold(0.0, f64::max))
    }

    pub fn defect_with(&self, form: DefectForm, nodes: &[usize]) -> Result<Vec<f64>> {
        let d = match form {
            DefectForm::Direct => {
                let taus: Vec<f64> = nodes.iter().map(|&i| self.grid.tau[i]).collect();
                self.defect_direct(&self.probe(&taus)?)
            }
            DefectForm::Prefactored => self.defect_prefactored(nodes)?,
        };
        Ok(self.defect_norm(&d))
    }

    /// The almost-invariant and its leading term along the probe.
    pub fn invariant(&self, probe: &Probe) -> Vec<InvariantSample> {
        let eps = self.epsilon();
        let f = self.setup.mirror();
        (0..probe.tau.len())
            .map(|p| {
                let c = probe.c[p];
                let mut acc = ZERO;
                let mut lead = 0.0;
                for (m, map) in probe.z.iter().enumerate() {
                    for (k, s) in map {
                        let kap = self.setup.kappa(m, *k);
                        acc += kap * kap * c * s.z[p].norm_sqr() - I * (eps * kap) * s.z[p].conj() * s.zd[p];
                    }
                    if let Some(s) = map.get(&self.setup.diag[m]) {
                        let om = self.setup.modes.omegas[m];
                        lead += om * om * s.z[p].norm_sqr();
                    }
                }
                InvariantSample {
                    tau: probe.tau[p],
                    value: f * acc.re,
                    imag: f * acc.im,
                    leading: f * 2.0 * c * lead,
                }
            })
            .collect()
    }

    /// Reconstructed mode state at probe point p and the largest discarded imaginary part.
    pub fn reconstruct_at(&self, probe: &Probe, p: usize) -> (ModeState, f64) {
        let eps = self.epsilon();
        let nm = self.setup.modes.len();
        let mut st = ModeState::zeros(nm);
        st.t = probe.tau[p] / eps;
        let mut residue: f64 = 0.0;
        let c = probe.c[p];
        for (m, map) in probe.z.iter().enumerate() {
            let mut u = ZERO;
            let mut v = ZERO;
            for (k, s) in map {
                let kap = self.setup.kappa(m, *k);
                let e = C::from_polar(1.0, kap * probe.phi[p] / eps);
                u += s.z[p] * e;
                v += (s.zd[p] * eps + I * kap * c * s.z[p]) * e;
            }
            st.u[m] = u.re;
            st.v[m] = v.re;
            residue = residue.max(u.im.abs()).max(v.im.abs());
        }
        (st, residue)
    }

    /// Reconstruction at fast time t.
    pub fn reconstruct(&self, t: f64) -> Result<(ModeState, f64)> {
        let tau = self.epsilon() * t;
        let probe = self.probe(&[tau])?;
        let (mut st, r) = self.reconstruct_at(&probe, 0);
        st.t = t;
        Ok((st, r))
    }

    /// e_j^± at each probe point: −a Σ_{k∈𝒩^±} conv^k e^{iκφ/ε}.
    pub fn near_force(&self, probe: &Probe) -> Vec<Vec<[C; 2]>> {
        let eps = self.epsilon();
        let conv = self.probe_conv(probe);
        (0..probe.tau.len())
            .map(|p| {
                (0..self.setup.modes.len())
                    .map(|m| {
                        let mut out = [ZERO; 2];
                        for si in 0..2 {
                            for k in &self.near[m][si] {
                                if let Some(v) = conv[m].get(k) {
                                    let kap = self.setup.codec.kappa(*k);
                                    out[si] -= v[p] * probe.a[p] * C::from_polar(1.0, kap * probe.phi[p] / eps);
                                }
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect()
    }

    /// 2^d Σ_{j,s} sΩ_j conj(y_j^s) e_j^s at each probe point.
    pub fn near_work(&self, probe: &Probe) -> Vec<C> {
        let eps = self.epsilon();
        let force = self.near_force(probe);
        let f = self.setup.mirror();
        force
            .iter()
            .enumerate()
            .map(|(p, per_mode)| {
                let mut acc = ZERO;
                for (m, e) in per_mode.iter().enumerate() {
                    let om = self.setup.modes.omegas[m];
                    for (si, s) in [1.0, -1.0].into_iter().enumerate() {
                        let dk = if si == 0 {
                            self.setup.diag[m]
                        } else {
                            -self.setup.diag[m]
                        };
                        if let Some(zs) = probe.z[m].get(&dk) {
                            let y = zs.z[p] * C::from_polar(1.0, s * om * probe.phi[p] / eps);
                            acc += s * om * y.conj() * e[si];
                        }
                    }
                }
                acc * f
            })
            .collect()
    }

    fn mode_layers(&self, pick: impl Fn(usize, Label) -> Option<C>) -> Vec<ModeLayer> {
        (0..self.setup.modes.len())
            .map(|m| {
                let d = self.setup.diag[m];
                let mut labels: BTreeSet<Label> = BTreeSet::new();
                for layer in &self.layers[1..] {
                    labels.extend(layer[m].keys().copied());
                }
                ModeLayer {
                    omega: self.setup.modes.omegas[m],
                    plus: pick(m, d).unwrap_or(ZERO),
                    minus: pick(m, -d).unwrap_or(ZERO),
                    off: labels
                        .into_iter()
                        .filter(|k| self.setup.classify(m, *k) == Class::Member)
                        .filter_map(|k| pick(m, k).map(|z| (self.setup.codec.kappa(k), z)))
                        .collect(),
                }
            })
            .collect()
    }

    /// Norm of the combined expansion at probe point p.
    pub fn combined_norm(&self, probe: &Probe, p: usize) -> MfeNorm {
        let layers = self.mode_layers(|m, k| probe.z[m].get(&k).map(|s| s.z[p]));
        mfe_norm(&layers, self.setup.modes.dim, self.setup.norm_style())
    }

    /// Norm of one unscaled layer at node i.
    pub fn layer_norm(&self, l: usize, i: usize) -> MfeNorm {
        let layers = self.mode_layers(|m, k| self.layers[l][m].get(&k).map(|s| s.z[i]));
        mfe_norm(&layers, self.setup.modes.dim, self.setup.norm_style())
    }

    pub fn label_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.iter()).map(BTreeMap::len).sum()
    }

    pub fn snapshot(&self) -> Snapshot {
        let setup = &self.setup;
        let rungs = setup.codec.rungs();
        let modes = (0..setup.modes.len())
            .map(|m| {
                let mut entries = Vec::new();
                for (l, layer) in self.layers.iter().enumerate().skip(1) {
                    for (k, s) in &layer[m] {
                        entries.push(SnapshotEntry {
                            label: setup.codec.decode(*k),
                            layer: l,
                            kappa: setup.kappa(m, *k),
                            z: s.z.iter().map(|v| [v.re, v.im]).collect(),
                            zd: s.zd.iter().map(|v| [v.re, v.im]).collect(),
                        });
                    }
                }
                let list = |set: &BTreeSet<Label>| set.iter().map(|k| setup.codec.decode(*k)).collect();
                SnapshotMode {
                    mode: setup.modes.modes[m][..setup.modes.dim].to_vec(),
                    omega: setup.modes.omegas[m],
                    diagonal: setup.codec.decode(setup.diag[m]),
                    near_plus: list(&self.near[m][0]),
                    near_minus: list(&self.near[m][1]),
                    entries,
                }
            })
            .collect();
        Snapshot {
            kind: setup.kind,
            epsilon: setup.epsilon,
            order: setup.order,
            alpha: setup.alpha,
            threshold: setup.threshold,
            tau0: self.tau0,
            ladder: setup.codec.omegas.clone(),
            rungs,
            tau: self.grid.tau.clone(),
            phi: self.phi.clone(),
            modes,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotEntry {
    pub label: Vec<i32>,
    pub layer: usize,
    pub kappa: f64,
    pub z: Vec<[f64; 2]>,
    pub zd: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotMode {
    pub mode: Vec<i32>,
    pub omega: f64,
    pub diagonal: Vec<i32>,
    pub near_plus: Vec<Vec<i32>>,
    pub near_minus: Vec<Vec<i32>>,
    pub entries: Vec<SnapshotEntry>,
}

/// Serializable dump of an expansion at its Chebyshev nodes.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub kind: Kind,
    pub epsilon: f64,
    pub order: usize,
    pub alpha: f64,
    pub threshold: f64,
    pub tau0: f64,
    pub ladder: Vec<f64>,
    pub rungs: usize,
    pub tau: Vec<f64>,
    pub phi: Vec<f64>,
    pub modes: Vec<SnapshotMode>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::parse_profile;
    use std::f64::consts::PI;

    fn spec(lengths: Vec<f64>, c: &str, a: &str, eps: f64) -> ProblemSpec {
        ProblemSpec::new(lengths, parse_profile(c).unwrap(), parse_profile(a).unwrap(), eps, 0.5).unwrap()
    }

    #[test]
    fn codec_round_trip() {
        let codec = LabelCodec {
            base: 41,
            omegas: vec![1.0, 2f64.sqrt(), 3f64.sqrt()],
        };
        for k in [[0, 0, 0], [1, -2, 3], [-5, 0, 16], [-16, 16, -1]] {
            let code = codec.encode(&k);
            assert_eq!(codec.decode(code), k.to_vec());
            assert_eq!(codec.decode(-code), k.iter().map(|x| -x).collect::<Vec<_>>());
            let sum = codec.encode(&[2, 0, 1]) + code;
            assert_eq!(codec.decode(sum), vec![k[0] + 2, k[1], k[2] + 1]);
        }
    }

    #[test]
    fn linear_constant_case_is_exact() {
        let sp = spec(vec![PI], "2", "0", 0.1);
        let setup = Arc::new(Setup::one_d(&sp, 4, 3).unwrap());
        let mut s0 = ModeState::zeros(4);
        s0.u = vec![0.05, 0.0, 0.01, 0.0];
        s0.v = vec![0.02, 0.0, 0.0, -0.03];
        let ex = Expansion::build(setup, &sp, &s0, 0.0, &Options::default()).unwrap();
        let d = ex.defect(&[0.0, 0.3, 1.0]).unwrap();
        assert!(d.iter().all(|&x| x == 0.0), "{d:?}");
        for t in [0.0, 3.0, 10.0] {
            let (st, r) = ex.reconstruct(t).unwrap();
            assert!(r < 1e-14);
            for m in 0..4 {
                let j = (m + 1) as f64;
                let exact = s0.u[m] * (2.0 * j * t).cos() + s0.v[m] * (2.0 * j * t).sin() / (2.0 * j);
                assert!((st.u[m] - exact).abs() < 1e-12, "{t} {m}");
            }
        }
        let probe = ex.probe(&[0.5]).unwrap();
        let inv = ex.invariant(&probe)[0];
        assert!((inv.value - inv.leading).abs() <= 1e-14 * inv.value);
        assert!(ex.reconstruct(11.0).is_err());
    }

    #[test]
    fn cubic_expansion_identities() {
        let sp = spec(vec![PI], "1 + 0.2*sin(tau)", "1 + 0.5*tau", 0.1);
        let setup = Arc::new(Setup::one_d(&sp, 6, 3).unwrap());
        let mut s0 = ModeState::zeros(6);
        for m in 0..6 {
            let j = (m + 1) as f64;
            s0.u[m] = 0.1 / (j * j);
            s0.v[m] = 0.05 / j;
        }
        let ex = Expansion::build(setup.clone(), &sp, &s0, 0.0, &Options::default()).unwrap();
        let (st, _) = ex.reconstruct(0.0).unwrap();
        for m in 0..6 {
            assert!((st.u[m] - s0.u[m]).abs() < 1e-15);
        }
        for l in 1..=2 {
            for m in 0..6 {
                assert!(ex.layers[l][m].keys().all(|k| k.abs() == (m + 1) as i128));
            }
        }
        for l in 1..=4 {
            for (m, map) in ex.layers[l].iter().enumerate() {
                for (k, s) in map {
                    let mirror = &map[&-k];
                    for p in 0..s.z.len() {
                        assert!((s.z[p] - mirror.z[p].conj()).norm() < 1e-12);
                    }
                    assert!(k.abs() <= (6 * l) as i128 && (k - m as i128 - 1) % 2 == 0);
                }
            }
        }
        let nodes = [0, 7, 16, 32];
        let a = ex.defect_with(DefectForm::Direct, &nodes).unwrap();
        let b = ex.defect_with(DefectForm::Prefactored, &nodes).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10 * x.max(*y), "{x} {y}");
        }
        let seq = Expansion::build(
            setup,
            &sp,
            &s0,
            0.0,
            &Options {
                exec: Exec::Sequential,
                ..Options::default()
            },
        )
        .unwrap();
        assert_eq!(seq.layers, ex.layers);
    }

    #[test]
    fn multi_d_linear_constant_case() {
        let sp = spec(vec![PI, PI], "1.5", "0", 0.1);
        let setup = Arc::new(Setup::multi_d(&sp, 2, 4, 0.25, None).unwrap());
        let mut s0 = ModeState::zeros(4);
        s0.u = vec![0.03, -0.01, 0.02, 0.0];
        s0.v = vec![0.0, 0.01, 0.0, 0.02];
        let ex = Expansion::build(setup, &sp, &s0, 2.0, &Options::default()).unwrap();
        assert_eq!(ex.defect(&[2.0, 2.5, 3.0]).unwrap(), vec![0.0; 3]);
        let (st, _) = ex.reconstruct(20.0).unwrap();
        for m in 0..4 {
            assert!((st.u[m] - s0.u[m]).abs() < 1e-16);
        }
        let probe = ex.probe(&[2.7]).unwrap();
        let inv = ex.invariant(&probe)[0];
        assert!((inv.value - inv.leading).abs() <= 1e-14 * inv.value);
        assert_eq!(ex.near_work(&probe)[0], ZERO);
    }
}
