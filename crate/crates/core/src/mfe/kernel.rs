//! Triple convolution over signed modes and labels.
//!
//! For fields A, B, C indexed by positive-octant modes (odd extension implied)
//! and integer label codes, computes for every positive mode j and label k
//!
//!   Σ_{j1+j2+j3=j} Σ_{k1+k2+k3=k} A_{j1}^{k1} B_{j2}^{k2} C_{j3}^{k3}
//!
//! pointwise over a set of evaluation points. The pair sum over j1 + j2 = j12
//! is formed once per j12 and reused for every output mode.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::par::{map_ordered, Exec};
use crate::spectral::{Mode, ModeSet};

pub type Label = i128;
type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);
const CHUNK: usize = 4;
/// chunks reduced per round, bounding the live partial accumulators
const GROUP: usize = 8;

/// Per-mode labelled vectors of values at `npts` points.
#[derive(Debug, Clone)]
pub struct Packed {
    pub npts: usize,
    pub labels: Vec<Vec<Label>>,
    pub vals: Vec<Vec<C>>,
}

impl Packed {
    pub fn new(modes: usize, npts: usize) -> Packed {
        Packed {
            npts,
            labels: vec![Vec::new(); modes],
            vals: vec![Vec::new(); modes],
        }
    }

    pub fn push(&mut self, mode: usize, label: Label, vals: &[C]) {
        debug_assert_eq!(vals.len(), self.npts);
        self.labels[mode].push(label);
        self.vals[mode].extend_from_slice(vals);
    }

    pub fn from_maps(maps: &[BTreeMap<Label, Vec<C>>], npts: usize) -> Packed {
        let mut p = Packed::new(maps.len(), npts);
        for (m, map) in maps.iter().enumerate() {
            for (k, v) in map {
                p.push(m, *k, v);
            }
        }
        p
    }

    pub fn total_labels(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }

    fn row(&self, mode: usize, i: usize) -> &[C] {
        &self.vals[mode][i * self.npts..(i + 1) * self.npts]
    }
}

/// Precomputed signed-lattice bookkeeping for one ModeSet.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub n_modes: usize,
    /// (pair list, per-target third-factor list) per nonnegative pair sum
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct Block {
    pairs: Vec<(u32, u32, f64)>,
    thirds: Vec<Vec<(u32, f64)>>,
}

pub(crate) fn sign_variants(j: &Mode, dim: usize) -> Vec<Mode> {
    let mut out = vec![*j];
    for axis in 0..dim {
        if j[axis] != 0 {
            let flipped: Vec<Mode> = out
                .iter()
                .map(|m| {
                    let mut f = *m;
                    f[axis] = -f[axis];
                    f
                })
                .collect();
            out.extend(flipped);
        }
    }
    out
}

impl Lattice {
    pub fn new(modes: &ModeSet) -> Lattice {
        let dim = modes.dim;
        let jm = modes.cutoff;
        let mut signed: Vec<(Mode, usize, f64)> = Vec::new();
        for (i, m) in modes.modes.iter().enumerate() {
            for v in sign_variants(m, dim) {
                signed.push((v, i, modes.sign_of(&v)));
            }
        }
        let span = (2 * jm + 1) as usize;
        let count = span.pow(dim as u32);
        let mut blocks = Vec::new();
        for idx in 0..count {
            let mut j12 = [0i32; 3];
            let mut rest = idx;
            for axis in (0..dim).rev() {
                j12[axis] = (rest % span) as i32;
                rest /= span;
            }
            let mut pairs = Vec::new();
            for (j1, i1, s1) in &signed {
                let j2 = [j12[0] - j1[0], j12[1] - j1[1], j12[2] - j1[2]];
                if let Some(i2) = modes.index_of_abs(&j2) {
                    pairs.push((*i1 as u32, i2 as u32, s1 * modes.sign_of(&j2)));
                }
            }
            if pairs.is_empty() {
                continue;
            }
            let variants = sign_variants(&j12, dim);
            let thirds = modes
                .modes
                .iter()
                .map(|j| {
                    variants
                        .iter()
                        .filter_map(|v| {
                            let j3 = [j[0] - v[0], j[1] - v[1], j[2] - v[2]];
                            modes.index_of_abs(&j3).map(|i3| (i3 as u32, modes.sign_of(&j3)))
                        })
                        .collect()
                })
                .collect();
            blocks.push(Block { pairs, thirds });
        }
        Lattice {
            n_modes: modes.len(),
            blocks,
        }
    }
}

/// Label-indexed accumulator with insertion order preserved.
struct Acc {
    npts: usize,
    index: FxHashMap<Label, usize>,
    keys: Vec<Label>,
    vals: Vec<C>,
}

impl Acc {
    fn new(npts: usize) -> Acc {
        Acc {
            npts,
            index: FxHashMap::default(),
            keys: Vec::new(),
            vals: Vec::new(),
        }
    }

    #[inline]
    fn slot(&mut self, k: Label) -> usize {
        let npts = self.npts;
        let next = self.keys.len();
        let s = *self.index.entry(k).or_insert(next);
        if s == next {
            self.keys.push(k);
            self.vals.extend(std::iter::repeat_n(ZERO, npts));
        }
        s
    }

    fn row(&self, s: usize) -> &[C] {
        &self.vals[s * self.npts..(s + 1) * self.npts]
    }

    fn row_mut(&mut self, s: usize) -> &mut [C] {
        &mut self.vals[s * self.npts..(s + 1) * self.npts]
    }
}

#[inline]
fn fma3(dst: &mut [C], s: f64, a: &[C], b: &[C]) {
    for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
        *d += (x * y) * s;
    }
}

fn block_product(
    block: &Block,
    a: &Packed,
    b: &Packed,
    c: &Packed,
    targets: Option<&[FxHashMap<Label, ()>]>,
    out: &mut [Acc],
) {
    let npts = a.npts;
    let mut pair = Acc::new(npts);
    for &(i1, i2, s) in &block.pairs {
        let (i1, i2) = (i1 as usize, i2 as usize);
        if a.labels[i1].is_empty() || b.labels[i2].is_empty() {
            continue;
        }
        for (p1, &k1) in a.labels[i1].iter().enumerate() {
            let r1 = a.row(i1, p1);
            for (p2, &k2) in b.labels[i2].iter().enumerate() {
                let slot = pair.slot(k1 + k2);
                let r2 = b.row(i2, p2);
                let dst = &mut pair.vals[slot * npts..(slot + 1) * npts];
                fma3(dst, s, r1, r2);
            }
        }
    }
    if pair.keys.is_empty() {
        return;
    }
    for (t, thirds) in block.thirds.iter().enumerate() {
        let acc = &mut out[t];
        for &(i3, s3) in thirds {
            let i3 = i3 as usize;
            if c.labels[i3].is_empty() {
                continue;
            }
            match targets {
                Some(tg) if tg[t].len() <= pair.keys.len() => {
                    let mut tkeys: Vec<Label> = tg[t].keys().copied().collect();
                    tkeys.sort_unstable();
                    for k in tkeys {
                        for (p3, &k3) in c.labels[i3].iter().enumerate() {
                            if let Some(&ps) = pair.index.get(&(k - k3)) {
                                let slot = acc.slot(k);
                                let (pr, cr) = (pair.row(ps), c.row(i3, p3));
                                fma3(acc.row_mut(slot), s3, pr, cr);
                            }
                        }
                    }
                }
                _ => {
                    for (ps, &k12) in pair.keys.iter().enumerate() {
                        for (p3, &k3) in c.labels[i3].iter().enumerate() {
                            let k = k12 + k3;
                            if let Some(tg) = targets {
                                if !tg[t].contains_key(&k) {
                                    continue;
                                }
                            }
                            let slot = acc.slot(k);
                            let (pr, cr) = (pair.row(ps), c.row(i3, p3));
                            fma3(acc.row_mut(slot), s3, pr, cr);
                        }
                    }
                }
            }
        }
    }
}

/// Triple convolution; with `targets` only the listed output labels are formed.
pub fn triple_product(
    lat: &Lattice,
    a: &Packed,
    b: &Packed,
    c: &Packed,
    targets: Option<&[Vec<Label>]>,
    exec: Exec,
) -> Vec<BTreeMap<Label, Vec<C>>> {
    triple_product_capped(lat, a, b, c, targets, exec, usize::MAX).expect("uncapped")
}

/// As [`triple_product`], failing once the output holds more than `cap` labels.
pub fn triple_product_capped(
    lat: &Lattice,
    a: &Packed,
    b: &Packed,
    c: &Packed,
    targets: Option<&[Vec<Label>]>,
    exec: Exec,
    cap: usize,
) -> Result<Vec<BTreeMap<Label, Vec<C>>>> {
    let npts = a.npts;
    let n = lat.n_modes;
    let tg: Option<Vec<FxHashMap<Label, ()>>> =
        targets.map(|t| t.iter().map(|v| v.iter().map(|&k| (k, ())).collect()).collect());
    let chunks: Vec<&[Block]> = lat.blocks.chunks(CHUNK).collect();
    let mut result: Vec<BTreeMap<Label, Vec<C>>> = vec![BTreeMap::new(); n];
    let mut count = 0usize;
    for group in chunks.chunks(GROUP) {
        let partials = map_ordered(group, exec, |chunk| {
            let mut out: Vec<Acc> = (0..n).map(|_| Acc::new(npts)).collect();
            for block in chunk.iter() {
                block_product(block, a, b, c, tg.as_deref(), &mut out);
            }
            out
        });
        for part in partials {
            for (m, acc) in part.into_iter().enumerate() {
                for (s, k) in acc.keys.iter().enumerate() {
                    let dst = result[m].entry(*k).or_insert_with(|| {
                        count += 1;
                        vec![ZERO; npts]
                    });
                    for (d, v) in dst.iter_mut().zip(acc.row(s)) {
                        *d += v;
                    }
                }
            }
        }
        if count > cap {
            return Err(Error::Budget {
                what: "convolution output labels".into(),
                count,
                cap,
            });
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn random_packed(modes: usize, npts: usize, labels: &[Label], seed: u64) -> Packed {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut p = Packed::new(modes, npts);
        for m in 0..modes {
            for &k in labels {
                if rng.gen_bool(0.7) {
                    let v: Vec<C> = (0..npts)
                        .map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                        .collect();
                    p.push(m, k, &v);
                }
            }
        }
        p
    }

    fn lookup(p: &Packed, modes: &ModeSet, j: &Mode, k: Label, pt: usize) -> C {
        match modes.index_of_abs(j) {
            None => ZERO,
            Some(i) => match p.labels[i].iter().position(|&x| x == k) {
                None => ZERO,
                Some(pos) => p.row(i, pos)[pt] * modes.sign_of(j),
            },
        }
    }

    fn brute(modes: &ModeSet, a: &Packed, b: &Packed, c: &Packed, j: &Mode, k: Label, pt: usize) -> C {
        let jm = modes.cutoff;
        let dim = modes.dim;
        let mut signed = Vec::new();
        for x in -jm..=jm {
            for y in if dim > 1 { -jm..=jm } else { 0..=0 } {
                for z in if dim > 2 { -jm..=jm } else { 0..=0 } {
                    let m = [x, y, z];
                    if modes.index_of_abs(&m).is_some() {
                        signed.push(m);
                    }
                }
            }
        }
        let mut acc = ZERO;
        for j1 in &signed {
            let i1 = modes.index_of_abs(j1).unwrap();
            for j2 in &signed {
                let i2 = modes.index_of_abs(j2).unwrap();
                let j3 = [j[0] - j1[0] - j2[0], j[1] - j1[1] - j2[1], j[2] - j1[2] - j2[2]];
                if modes.index_of_abs(&j3).is_none() {
                    continue;
                }
                for &k1 in &a.labels[i1] {
                    for &k2 in &b.labels[i2] {
                        acc += lookup(a, modes, j1, k1, pt)
                            * lookup(b, modes, j2, k2, pt)
                            * lookup(c, modes, &j3, k - k1 - k2, pt);
                    }
                }
            }
        }
        acc
    }

    #[test]
    fn matches_brute_force_and_is_deterministic() {
        for (lengths, jm) in [(vec![PI], 4), (vec![PI, PI], 2), (vec![PI; 3], 2)] {
            let modes = ModeSet::new(&lengths, jm).unwrap();
            let lat = Lattice::new(&modes);
            let labels: Vec<Label> = vec![-3, -1, 0, 2, 5];
            let a = random_packed(modes.len(), 2, &labels, 1);
            let b = random_packed(modes.len(), 2, &labels, 2);
            let c = random_packed(modes.len(), 2, &labels, 3);
            let full = triple_product(&lat, &a, &b, &c, None, Exec::Sequential);
            let par = triple_product(&lat, &a, &b, &c, None, Exec::Parallel);
            assert_eq!(full, par);
            for (i, j) in modes.modes.iter().enumerate() {
                for k in [-9, -4, 0, 1, 7, 15] {
                    for pt in 0..2 {
                        let expect = brute(&modes, &a, &b, &c, j, k, pt);
                        let got = full[i].get(&k).map(|v| v[pt]).unwrap_or(ZERO);
                        assert!(
                            (expect - got).norm() < 1e-13 * expect.norm().max(1.0),
                            "{j:?} {k} {expect} {got}"
                        );
                    }
                }
            }
            let targets: Vec<Vec<Label>> = (0..modes.len()).map(|_| vec![-4, 1, 7, 100]).collect();
            let sub = triple_product(&lat, &a, &b, &c, Some(&targets), Exec::Parallel);
            for i in 0..modes.len() {
                for (k, v) in &sub[i] {
                    assert!(targets[i].contains(k));
                    for pt in 0..2 {
                        assert!((v[pt] - full[i][k][pt]).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn cap_reports_budget() {
        let modes = ModeSet::new(&[PI, PI], 2).unwrap();
        let lat = Lattice::new(&modes);
        let a = random_packed(modes.len(), 1, &[-3, -1, 0, 2, 5], 4);
        let full = triple_product(&lat, &a, &a, &a, None, Exec::Sequential);
        let total: usize = full.iter().map(BTreeMap::len).sum();
        let ok = triple_product_capped(&lat, &a, &a, &a, None, Exec::Sequential, total).unwrap();
        assert_eq!(ok, full);
        match triple_product_capped(&lat, &a, &a, &a, None, Exec::Sequential, total / 2) {
            Err(Error::Budget { cap, .. }) => assert_eq!(cap, total / 2),
            other => panic!("{other:?}"),
        }
    }
}
