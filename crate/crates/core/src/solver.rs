//! Reference integration of the truncated sine-coefficient system
//!
//!   u_j'' = -c(εt)² Ω_j² u_j - a(εt) Σ_{j1+j2+j3=j} u_{j1} u_{j2} u_{j3}
//!
//! with the convolution taken over the full signed lattice.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::ProblemSpec;
use crate::spectral::{action, sobolev_norms, ModeSet, ModeState};

/// Alias-free collocation of the cubic convolution on P = 2J+1 sine points per axis.
#[derive(Debug, Clone)]
pub struct Collocation {
    dim: usize,
    cutoff: usize,
    grid: usize,
    /// synth[m * J + j] = sin((j+1)(m+1)π/P)
    synth: Vec<f64>,
    /// analysis matrix, (2/P) times the transpose of synth
    analysis: Vec<f64>,
}

fn apply_axis(data: &[f64], shape: &[usize], axis: usize, mat: &[f64], rows: usize) -> (Vec<f64>, Vec<usize>) {
    let cols = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * rows * inner];
    for o in 0..outer {
        for r in 0..rows {
            let mrow = &mat[r * cols..(r + 1) * cols];
            let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
            for (c, &w) in mrow.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &data[(o * cols + c) * inner..(o * cols + c + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = rows;
    (out, new_shape)
}

impl Collocation {
    pub fn new(dim: usize, cutoff: usize) -> Collocation {
        let p = 2 * cutoff + 1;
        let pts = p - 1;
        let mut synth = vec![0.0; pts * cutoff];
        for m in 0..pts {
            for j in 0..cutoff {
                synth[m * cutoff + j] = (((j + 1) * (m + 1)) as f64 * PI / p as f64).sin();
            }
        }
        let mut analysis = vec![0.0; cutoff * pts];
        for j in 0..cutoff {
            for m in 0..pts {
                analysis[j * pts + m] = 2.0 / p as f64 * synth[m * cutoff + j];
            }
        }
        Collocation {
            dim,
            cutoff,
            grid: pts,
            synth,
            analysis,
        }
    }

    /// Σ_{j1+j2+j3=j} u u u over the signed lattice, for every stored j.
    pub fn convolution(&self, u: &[f64]) -> Vec<f64> {
        let mut data = u.to_vec();
        let mut shape = vec![self.cutoff; self.dim];
        for axis in 0..self.dim {
            (data, shape) = apply_axis(&data, &shape, axis, &self.synth, self.grid);
        }
        data.iter_mut().for_each(|x| *x = *x * *x * *x);
        for axis in 0..self.dim {
            (data, shape) = apply_axis(&data, &shape, axis, &self.analysis, self.cutoff);
        }
        let f = (-4.0f64).powi(self.dim as i32);
        data.iter_mut().for_each(|x| *x *= f);
        data
    }
}

/// O(J^{3d}) direct triple sum over the signed lattice.
pub fn direct_convolution(modes: &ModeSet, u: &[f64]) -> Vec<f64> {
    let d = modes.dim;
    let jm = modes.cutoff;
    let signed: Vec<[i32; 3]> = {
        let mut out = Vec::new();
        let range: Vec<i32> = (-jm..=jm).filter(|&c| c != 0).collect();
        let r3 = if d >= 3 { range.clone() } else { vec![0] };
        let r2 = if d >= 2 { range.clone() } else { vec![0] };
        for &a in &range {
            for &b in &r2 {
                for &c in &r3 {
                    out.push([a, b, c]);
                }
            }
        }
        out
    };
    let val = |j: &[i32; 3]| -> Option<f64> { modes.index_of_abs(j).map(|i| modes.sign_of(j) * u[i]) };
    let mut out = vec![0.0; modes.len()];
    for (idx, j) in modes.modes.iter().enumerate() {
        let mut acc = 0.0;
        for j1 in &signed {
            let v1 = val(j1).unwrap();
            if v1 == 0.0 {
                continue;
            }
            for j2 in &signed {
                let j3 = [j[0] - j1[0] - j2[0], j[1] - j1[1] - j2[1], j[2] - j1[2] - j2[2]];
                if let Some(v3) = val(&j3) {
                    acc += v1 * val(j2).unwrap() * v3;
                }
            }
        }
        out[idx] = acc;
    }
    out
}

/// Coefficients of u³ in the representation u = i Σ u_j e^{ij·x}; equals minus the convolution.
pub fn cubic_term(coll: &Collocation, s: &ModeState) -> Vec<f64> {
    coll.convolution(&s.u).into_iter().map(|x| -x).collect()
}

/// The truncated coefficient ODE system for one problem.
#[derive(Debug, Clone)]
pub struct WaveSystem {
    pub spec: ProblemSpec,
    pub modes: ModeSet,
    coll: Collocation,
    omega2: Vec<f64>,
}

impl WaveSystem {
    pub fn new(spec: ProblemSpec, cutoff: i32) -> Result<WaveSystem> {
        let modes = ModeSet::new(&spec.lengths, cutoff)?;
        let coll = Collocation::new(modes.dim, cutoff as usize);
        let omega2 = modes.omegas.iter().map(|w| w * w).collect();
        Ok(WaveSystem {
            spec,
            modes,
            coll,
            omega2,
        })
    }

    pub fn collocation(&self) -> &Collocation {
        &self.coll
    }

    fn deriv_into(&self, t: f64, u: &[f64], v: &[f64], du: &mut [f64], dv: &mut [f64]) {
        let tau = self.spec.epsilon * t;
        let c = self.spec.speed.value(tau);
        let a = self.spec.coupling.value(tau);
        du.copy_from_slice(v);
        let c2 = c * c;
        if a != 0.0 {
            let conv = self.coll.convolution(u);
            for i in 0..u.len() {
                dv[i] = -c2 * self.omega2[i] * u[i] - a * conv[i];
            }
        } else {
            for i in 0..u.len() {
                dv[i] = -c2 * self.omega2[i] * u[i];
            }
        }
    }

    pub fn rhs(&self, s: &ModeState, t: f64) -> ModeState {
        let n = s.u.len();
        let mut out = ModeState::zeros(n);
        out.t = t;
        self.deriv_into(t, &s.u, &s.v, &mut out.u, &mut out.v);
        out
    }

    fn metric(&self, eu: &[f64], ev: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..eu.len() {
            acc += self.omega2[i] * eu[i] * eu[i] + ev[i] * ev[i];
        }
        (self.modes.mirror_factor() * acc).sqrt()
    }

    pub fn action_at(&self, s: &ModeState) -> f64 {
        let c = self.spec.speed.value(self.spec.epsilon * s.t);
        action(&self.modes, s, c).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejected: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ModeState>,
    pub action: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub vel_norm: Vec<f64>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn last(&self) -> &ModeState {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,I,grad_norm,vel_norm\n");
        for i in 0..self.times.len() {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], self.action[i], self.grad_norm[i], self.vel_norm[i]
            );
        }
        s
    }
}

// Dormand-Prince 5(4)
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn sample_times(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let span = t1 - t0;
    let k = (span / dt).round();
    if (k * dt - span).abs() <= 1e-9 * span {
        (0..=k as usize)
            .map(|i| if i == k as usize { t1 } else { t0 + i as f64 * dt })
            .collect()
    } else {
        let mut out: Vec<f64> = (0..).map(|i| t0 + i as f64 * dt).take_while(|&t| t < t1).collect();
        out.push(t1);
        out
    }
}

/// Adaptive Dormand-Prince integration with samples every `sample_every`.
pub fn integrate(sys: &WaveSystem, s0: &ModeState, t1: f64, tol: f64, sample_every: f64) -> Result<Trajectory> {
    s0.check(&sys.modes)?;
    let t0 = s0.t;
    if !(t1 > t0) || !(tol > 0.0) || !(sample_every > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "integrate needs t1 > t0, tol > 0, sample step > 0 (t0={t0}, t1={t1}, tol={tol})"
        )));
    }
    let n = s0.u.len();
    let dim = 2 * n;
    let samples = sample_times(t0, t1, sample_every);

    let mut y = vec![0.0; dim];
    y[..n].copy_from_slice(&s0.u);
    y[n..].copy_from_slice(&s0.v);
    let init_norm = {
        let (g, v) = sobolev_norms(&sys.modes, s0);
        g + v
    };
    let limit = 1e3 * init_norm;

    let f = |t: f64, y: &[f64], out: &mut [f64]| {
        let (du, dv) = out.split_at_mut(n);
        sys.deriv_into(t, &y[..n], &y[n..], du, dv);
    };

    let mut traj = Trajectory {
        times: Vec::with_capacity(samples.len()),
        states: Vec::with_capacity(samples.len()),
        action: Vec::with_capacity(samples.len()),
        grad_norm: Vec::with_capacity(samples.len()),
        vel_norm: Vec::with_capacity(samples.len()),
        stats: IntegratorStats {
            tol,
            ..Default::default()
        },
    };
    let record = |t: f64, y: &[f64], traj: &mut Trajectory| {
        let st = ModeState {
            t,
            u: y[..n].to_vec(),
            v: y[n..].to_vec(),
        };
        let (g, v) = sobolev_norms(&sys.modes, &st);
        traj.times.push(t);
        traj.action.push(sys.action_at(&st));
        traj.grad_norm.push(g);
        traj.vel_norm.push(v);
        traj.states.push(st);
    };
    record(t0, &y, &mut traj);

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    let mut err = vec![0.0; dim];

    let mut t = t0;
    f(t, &y, &mut k1);
    // initial step from the fastest frequency
    let wmax = sys.modes.omegas.iter().cloned().fold(0.0, f64::max);
    let cmax = sys.spec.speed.value(sys.spec.epsilon * t0).abs().max(sys.spec.c0);
    let mut h_try = (0.1 / (wmax * cmax).max(1.0)).min(sample_every);
    let mut next = 1usize;

    while next < samples.len() {
        let target = samples[next];
        let mut hit = false;
        let mut h = h_try;
        if t + h >= target - 1e-14 * target.abs().max(1.0) {
            h = target - t;
            hit = true;
        }
        if h < 1e-13 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t });
        }
        for i in 0..dim {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &tmp, &mut k4);
        for i in 0..dim {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &tmp, &mut k5);
        for i in 0..dim {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &tmp, &mut k6);
        for i in 0..dim {
            ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        f(t + h, &ynew, &mut k7);
        for i in 0..dim {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        // error per unit step
        let allowed = tol * h.min(1.0);
        let e = sys.metric(&err[..n], &err[n..]);
        let fac = if e == 0.0 {
            5.0
        } else {
            (0.9 * (allowed / e).powf(0.25)).clamp(0.2, 5.0)
        };
        if e <= allowed {
            t = if hit { target } else { t + h };
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            traj.stats.steps += 1;
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp {
                    t,
                    norm: f64::INFINITY,
                    limit,
                });
            }
            if hit {
                record(t, &y, &mut traj);
                next += 1;
                let (g, v) = (*traj.grad_norm.last().unwrap(), *traj.vel_norm.last().unwrap());
                if init_norm > 0.0 && g + v > limit {
                    return Err(Error::BlowUp { t, norm: g + v, limit });
                }
            }
            // a step shortened to land on a sample says little about the next one
            if !(hit && h < h_try) {
                h_try = h * fac;
            }
        } else {
            traj.stats.rejected += 1;
            h_try = h * fac.min(1.0);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{parse_profile, SlowProfile};
    use rand::{Rng, SeedableRng};

    fn spec(lengths: Vec<f64>, c: &str, a: &str, eps: f64) -> ProblemSpec {
        ProblemSpec::new(lengths, parse_profile(c).unwrap(), parse_profile(a).unwrap(), eps, 0.1).unwrap()
    }

    fn random_u(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn cubic_term_examples() {
        let ms = ModeSet::new(&[PI], 4).unwrap();
        let coll = Collocation::new(1, 4);
        let zero = ModeState::zeros(4);
        assert!(cubic_term(&coll, &zero).iter().all(|&x| x == 0.0));
        let eps = 0.1;
        let mut s = ModeState::zeros(4);
        s.u[0] = eps;
        let c = cubic_term(&coll, &s);
        assert!((c[0] - 3.0 * eps.powi(3)).abs() < 1e-16);
        assert!(c[1].abs() < 1e-16);
        assert!((c[2] + eps.powi(3)).abs() < 1e-16);
        assert!(c[3].abs() < 1e-16);
        let d = direct_convolution(&ms, &s.u);
        assert!((d[2] - eps.powi(3)).abs() < 1e-18);
    }

    #[test]
    fn collocation_matches_direct_sum() {
        for (lengths, j) in [
            (vec![PI], 16),
            (vec![PI, 2.0], 4),
            (vec![PI; 3], 3),
            (vec![1.0, 2.0, 3.0], 2),
        ] {
            let ms = ModeSet::new(&lengths, j).unwrap();
            let coll = Collocation::new(ms.dim, j as usize);
            for seed in 0..5 {
                let u: Vec<f64> = random_u(seed, ms.len()).iter().map(|x| 0.1 * x).collect();
                let a = coll.convolution(&u);
                let b = direct_convolution(&ms, &u);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() <= 1e-12, "{x} {y}");
                }
            }
        }
    }

    #[test]
    fn rhs_examples() {
        let sys = WaveSystem::new(spec(vec![PI], "1", "0", 0.1), 4).unwrap();
        let s = ModeState {
            t: 0.0,
            u: vec![0.1, 0.2, 0.0, -0.1],
            v: vec![1.0, 0.0, 0.0, 0.0],
        };
        let d = sys.rhs(&s, 0.0);
        assert_eq!(d.u, s.v);
        for i in 0..4 {
            assert!((d.v[i] + ((i + 1) * (i + 1)) as f64 * s.u[i]).abs() < 1e-15);
        }
        assert!(sys.rhs(&ModeState::zeros(4), 0.3).v.iter().all(|&x| x == 0.0));

        let sys = WaveSystem::new(spec(vec![PI], "2", "1", 0.1), 4).unwrap();
        let u1 = 0.05;
        let mut s = ModeState::zeros(4);
        s.u[0] = u1;
        let d = sys.rhs(&s, 0.0);
        assert!((d.v[0] - (-4.0 * u1 + 3.0 * u1.powi(3))).abs() < 1e-16);
        assert!((d.v[2] + u1.powi(3)).abs() < 1e-17);
    }

    #[test]
    fn harmonic_single_mode() {
        let sys = WaveSystem::new(spec(vec![PI], "1", "0", 0.1), 1).unwrap();
        let s0 = ModeState {
            t: 0.0,
            u: vec![0.01],
            v: vec![0.02],
        };
        let tol = 1e-10;
        let tr = integrate(&sys, &s0, 10.0, tol, 0.5).unwrap();
        assert_eq!(tr.times.len(), 21);
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let exact = 0.01 * t.cos() + 0.02 * t.sin();
            assert!((s.u[0] - exact).abs() < tol * 1e2, "{t}");
        }
    }

    fn rk4_fixed(sys: &WaveSystem, s0: &ModeState, t1: f64, h: f64) -> ModeState {
        let steps = ((t1 - s0.t) / h).round() as usize;
        let mut s = s0.clone();
        let add = |s: &ModeState, k: &ModeState, w: f64| ModeState {
            t: s.t + w,
            u: s.u.iter().zip(&k.u).map(|(a, b)| a + w * b).collect(),
            v: s.v.iter().zip(&k.v).map(|(a, b)| a + w * b).collect(),
        };
        for _ in 0..steps {
            let k1 = sys.rhs(&s, s.t);
            let s2 = add(&s, &k1, h / 2.0);
            let k2 = sys.rhs(&s2, s2.t);
            let s3 = add(&s, &k2, h / 2.0);
            let k3 = sys.rhs(&s3, s3.t);
            let s4 = add(&s, &k3, h);
            let k4 = sys.rhs(&s4, s4.t);
            for i in 0..s.u.len() {
                s.u[i] += h / 6.0 * (k1.u[i] + 2.0 * k2.u[i] + 2.0 * k3.u[i] + k4.u[i]);
                s.v[i] += h / 6.0 * (k1.v[i] + 2.0 * k2.v[i] + 2.0 * k3.v[i] + k4.v[i]);
            }
            s.t += h;
        }
        s
    }

    #[test]
    fn slowly_varying_speed_matches_fine_fixed_step() {
        let sys = WaveSystem::new(spec(vec![PI], "1 + 0.5*sin(tau)", "0", 0.1), 1).unwrap();
        let s0 = ModeState {
            t: 0.0,
            u: vec![0.01],
            v: vec![0.0],
        };
        let tr = integrate(&sys, &s0, 10.0, 1e-12, 10.0).unwrap();
        let oracle = rk4_fixed(&sys, &s0, 10.0, 1e-4);
        assert!((tr.last().u[0] - oracle.u[0]).abs() < 1e-8);
        assert!((tr.last().v[0] - oracle.v[0]).abs() < 1e-8);
    }

    #[test]
    fn cubic_action_self_consistency() {
        let eps = 0.1;
        let sys = WaveSystem::new(spec(vec![PI], "1 + 0.1*sin(tau)", "1", eps), 8).unwrap();
        let mut s0 = ModeState::zeros(8);
        for i in 0..8 {
            let j = (i + 1) as f64;
            s0.u[i] = eps / (j * j);
            s0.v[i] = 0.5 * eps / j;
        }
        let tr = integrate(&sys, &s0, 1.0 / eps, 1e-10, 0.05).unwrap();
        let i0 = tr.action[0];
        let dev = tr.action.iter().map(|i| (i - i0).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-2 * i0, "relative drift {}", dev / i0);
    }

    #[test]
    fn linear_constant_conservation() {
        let sys = WaveSystem::new(spec(vec![PI], "1.3", "0", 0.1), 16).unwrap();
        let u = random_u(3, 16);
        let v = random_u(4, 16);
        let s0 = ModeState {
            t: 0.0,
            u: u.iter().map(|x| 0.01 * x).collect(),
            v: v.iter().map(|x| 0.01 * x).collect(),
        };
        let tol = 1e-10;
        let tr = integrate(&sys, &s0, 10.0, tol, 0.05).unwrap();
        for i in &tr.action {
            assert!(
                (i - tr.action[0]).abs() <= 10.0 * tol * tr.action[0].max(1.0),
                "{} {}",
                i,
                tr.action[0]
            );
        }
    }

    #[test]
    fn linear_growth_bounded_across_eps() {
        let mut ratios = Vec::new();
        for eps in [0.2, 0.1, 0.05] {
            let sys = WaveSystem::new(spec(vec![PI], "1 + 0.5*sin(tau)", "0", eps), 4).unwrap();
            let s0 = ModeState {
                t: 0.0,
                u: vec![0.01, 0.005, 0.0, 0.001],
                v: vec![0.0, 0.01, 0.0, 0.0],
            };
            let tr = integrate(&sys, &s0, 1.0 / eps, 1e-10, 0.1).unwrap();
            let max = tr.action.iter().cloned().fold(0.0, f64::max);
            ratios.push(max / tr.action[0]);
        }
        for r in &ratios {
            assert!(*r < 2.0, "{ratios:?}");
        }
    }

    #[test]
    fn blow_up_guard_and_errors() {
        let sys = WaveSystem::new(
            ProblemSpec::new(
                vec![PI],
                SlowProfile::constant(1.0, "c"),
                SlowProfile::constant(50.0, "a"),
                0.1,
                0.5,
            )
            .unwrap(),
            2,
        )
        .unwrap();
        let s0 = ModeState {
            t: 0.0,
            u: vec![1.0, 0.0],
            v: vec![0.0, 0.0],
        };
        let r = integrate(&sys, &s0, 10.0, 1e-8, 1.0);
        assert!(
            matches!(r, Err(Error::BlowUp { .. }) | Err(Error::StepUnderflow { .. })),
            "{r:?}"
        );
        assert!(integrate(&sys, &s0, -1.0, 1e-8, 1.0).is_err());
    }

    #[test]
    fn samples_include_endpoints() {
        assert_eq!(sample_times(0.0, 1.0, 0.25), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let s = sample_times(0.0, 1.0, 0.3);
        assert_eq!(s.first(), Some(&0.0));
        assert_eq!(s.last(), Some(&1.0));
        assert_eq!(s.len(), 5);
    }
}
