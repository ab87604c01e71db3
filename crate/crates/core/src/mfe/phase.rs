//! The phase φ(τ) = ∫_{τ₀}^{τ} c(σ) dσ.

use serde::{Deserialize, Serialize};

use crate::cheb::gauss_legendre;
use crate::error::{Error, Result};
use crate::profiles::SlowProfile;

const GL_ORDER: usize = 16;
const PANEL: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTable {
    pub tau: Vec<f64>,
    pub phi: Vec<f64>,
    pub order: usize,
}

pub struct PhaseIntegrator {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for PhaseIntegrator {
    fn default() -> Self {
        let (nodes, weights) = gauss_legendre(GL_ORDER);
        PhaseIntegrator { nodes, weights }
    }
}

impl PhaseIntegrator {
    /// ∫_a^b c with Gauss-Legendre panels of width at most 1/16.
    pub fn integral(&self, speed: &SlowProfile, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let panels = ((b - a).abs() / PANEL).ceil().max(1.0) as usize;
        let h = (b - a) / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let mid = lo + 0.5 * h;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * speed.value(mid + 0.5 * h * x);
            }
            acc += 0.5 * h * s;
        }
        acc
    }
}

/// φ on an increasing grid, normalised to φ(grid[0]) = 0.
pub fn phase(speed: &SlowProfile, grid: &[f64]) -> Result<PhaseTable> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "phase grid must be nonempty and increasing".into(),
        ));
    }
    let q = PhaseIntegrator::default();
    let mut phi = Vec::with_capacity(grid.len());
    phi.push(0.0);
    for w in grid.windows(2) {
        let next = phi.last().unwrap() + q.integral(speed, w[0], w[1]);
        if !next.is_finite() {
            return Err(Error::NonFinite {
                label: speed.label.clone(),
                tau: w[1],
            });
        }
        phi.push(next);
    }
    Ok(PhaseTable {
        tau: grid.to_vec(),
        phi,
        order: GL_ORDER,
    })
}
