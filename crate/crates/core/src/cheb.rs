//! Chebyshev-Lobatto representation of smooth functions on an interval.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Chebyshev-Lobatto grid on [a, a + len] with n + 1 points, increasing.
#[derive(Debug, Clone)]
pub struct ChebGrid {
    pub a: f64,
    pub len: f64,
    pub tau: Vec<f64>,
    /// d/dτ on nodal values
    pub diff: Vec<f64>,
    /// ∫_a^{τ_k} on nodal values
    pub integ: Vec<f64>,
    weights: Vec<f64>,
}

impl ChebGrid {
    pub fn new(a: f64, len: f64, n: usize) -> ChebGrid {
        assert!(n >= 2, "need at least three nodes");
        let m = n + 1;
        // x_k = -cos(kπ/n) increases from -1 to 1
        let x: Vec<f64> = (0..m).map(|k| -(k as f64 * PI / n as f64).cos()).collect();
        let tau = x.iter().map(|&xi| a + 0.5 * len * (xi + 1.0)).collect();

        let cfac = |k: usize| if k == 0 || k == n { 2.0 } else { 1.0 };
        let sgn = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut dx = vec![0.0; m * m];
        for i in 0..m {
            let mut row_sum = 0.0;
            for j in 0..m {
                if i != j {
                    let v = cfac(i) / cfac(j) * sgn(i + j) / (x[i] - x[j]);
                    dx[i * m + j] = v;
                    row_sum += v;
                }
            }
            dx[i * m + i] = -row_sum;
        }
        let scale = 2.0 / len;
        let diff = dx.iter().map(|v| v * scale).collect();

        let integ = integration_matrix(n, len);
        let weights = (0..m).map(|k| sgn(k) / cfac(k)).collect();
        ChebGrid {
            a,
            len,
            tau,
            diff,
            integ,
            weights,
        }
    }

    pub fn points(&self) -> usize {
        self.tau.len()
    }

    pub fn apply(mat: &[f64], m: usize, f: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); m];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &mat[i * m..(i + 1) * m];
            let mut acc = Complex64::new(0.0, 0.0);
            for (r, v) in row.iter().zip(f) {
                acc += v * r;
            }
            *o = acc;
        }
        out
    }

    pub fn derivative(&self, f: &[Complex64]) -> Vec<Complex64> {
        Self::apply(&self.diff, self.points(), f)
    }

    pub fn integral(&self, f: &[Complex64]) -> Vec<Complex64> {
        Self::apply(&self.integ, self.points(), f)
    }

    /// Row of barycentric interpolation weights for evaluation at τ.
    pub fn interp_row(&self, tau: f64) -> Vec<f64> {
        let m = self.points();
        let mut row = vec![0.0; m];
        for k in 0..m {
            if tau == self.tau[k] {
                row[k] = 1.0;
                return row;
            }
        }
        let mut den = 0.0;
        for k in 0..m {
            let t = self.weights[k] / (tau - self.tau[k]);
            row[k] = t;
            den += t;
        }
        row.iter_mut().for_each(|r| *r /= den);
        row
    }

    pub fn eval_row(row: &[f64], f: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (r, v) in row.iter().zip(f) {
            acc += v * r;
        }
        acc
    }

    pub fn eval_real(&self, tau: f64, f: &[f64]) -> f64 {
        self.interp_row(tau).iter().zip(f).map(|(r, v)| r * v).sum()
    }
}

/// Cumulative integration from the left end, built through Chebyshev coefficients.
fn integration_matrix(n: usize, len: f64) -> Vec<f64> {
    let m = n + 1;
    let half = |k: usize| if k == 0 || k == n { 0.5 } else { 1.0 };
    // nodal values at x_k = -cos(kπ/n); T_p(x_k) = (-1)^p cos(pkπ/n)
    let tval = |p: usize, k: usize| {
        let s = if p.is_multiple_of(2) { 1.0 } else { -1.0 };
        s * ((p * k) as f64 * PI / n as f64).cos()
    };
    let mut out = vec![0.0; m * m];
    for col in 0..m {
        // coefficients of the cardinal function for node `col`
        let mut c = vec![0.0; m];
        for (p, cp) in c.iter_mut().enumerate() {
            *cp = 2.0 / n as f64 * half(col) * half(p) * tval(p, col);
        }
        // antiderivative coefficients
        let mut b = vec![0.0; m + 1];
        for p in 0..m {
            let cp = c[p];
            match p {
                0 => b[1] += cp,
                1 => {
                    b[2] += cp / 4.0;
                    b[0] -= cp / 4.0;
                }
                _ => {
                    b[p + 1] += cp / (2.0 * (p + 1) as f64);
                    b[p - 1] -= cp / (2.0 * (p - 1) as f64);
                }
            }
        }
        // value of the antiderivative at x = -1
        let left: f64 = b
            .iter()
            .enumerate()
            .map(|(p, bp)| if p % 2 == 0 { *bp } else { -bp })
            .sum();
        for row in 0..m {
            let mut v = 0.0;
            for (p, bp) in b.iter().enumerate() {
                v += bp * tval(p, row);
            }
            out[row * m + col] = 0.5 * len * (v - left);
        }
    }
    out
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cvec(f: impl Fn(f64) -> f64, g: &ChebGrid) -> Vec<Complex64> {
        g.tau.iter().map(|&t| Complex64::new(f(t), 0.0)).collect()
    }

    #[test]
    fn differentiation_is_spectral() {
        let g = ChebGrid::new(2.0, 1.0, 24);
        let f = cvec(|t| (3.0 * t).sin() * t.exp(), &g);
        let d = g.derivative(&f);
        for (k, &t) in g.tau.iter().enumerate() {
            let exact = 3.0 * (3.0 * t).cos() * t.exp() + (3.0 * t).sin() * t.exp();
            assert!((d[k].re - exact).abs() < 1e-9, "{k} {} {exact}", d[k].re);
        }
    }

    #[test]
    fn integration_is_spectral() {
        let g = ChebGrid::new(-0.5, 2.0, 24);
        let f = cvec(|t| t.cos(), &g);
        let q = g.integral(&f);
        for (k, &t) in g.tau.iter().enumerate() {
            let exact = t.sin() - (-0.5f64).sin();
            assert!((q[k].re - exact).abs() < 1e-13, "{k} {} {exact}", q[k].re);
        }
        // derivative of the integral returns the function
        let back = g.derivative(&q);
        for k in 0..g.points() {
            assert!((back[k] - f[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn interpolation() {
        let g = ChebGrid::new(0.0, 1.0, 20);
        let f = cvec(|t| (2.0 * t).exp(), &g);
        for i in 0..50 {
            let t = i as f64 / 49.0;
            let v = ChebGrid::eval_row(&g.interp_row(t), &f);
            assert!((v.re - (2.0 * t).exp()).abs() < 1e-12);
        }
        assert_eq!(g.tau[0], 0.0);
        assert!((g.tau[20] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((i - 2.0 / 31.0).abs() < 1e-14);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }
}
