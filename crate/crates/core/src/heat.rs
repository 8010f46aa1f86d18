//! Closed-form diffusion oracles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::angular::green_kubo_d;
use crate::config::SlabConfig;
use crate::error::{LabError, Result};
use crate::vec2::Vec2;

/// Terms of the survival series below this are dropped.
pub const SERIES_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatParams {
    pub d: f64,
    pub length: f64,
}

impl HeatParams {
    pub fn new(d: f64, length: f64) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) || !(length > 0.0 && length.is_finite()) {
            return Err(LabError::InvalidConfig(format!("heat parameters need D > 0 and L > 0, got D={d}, L={length}")));
        }
        Ok(HeatParams { d, length })
    }

    /// `D` from the Green–Kubo formula for `config.mu`.
    pub fn from_config(config: &SlabConfig) -> Result<Self> {
        Self::new(green_kubo_d(config.mu)?.d, config.length)
    }
}

/// `(rho1 (L - x1) + rho2 x1) / L`.
pub fn stationary_profile(config: &SlabConfig, x1: f64) -> f64 {
    (config.rho1 * (config.length - x1) + config.rho2 * x1) / config.length
}

/// `A exp(-|x - c|^2 / (2 sigma^2))` on the plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub amplitude: f64,
    pub center: Vec2,
    pub sigma: f64,
}

impl GaussianBump {
    pub fn value(&self, x: Vec2) -> f64 {
        self.amplitude * (-(x - self.center).norm_sq() / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// The bump after time `t` of `d_t rho = D Laplacian rho`.
    pub fn evolved(&self, t: f64, d: f64) -> GaussianBump {
        let s2 = self.sigma * self.sigma;
        let s2t = s2 + 2.0 * d * t;
        GaussianBump { amplitude: self.amplitude * s2 / s2t, center: self.center, sigma: s2t.sqrt() }
    }

    pub fn gradient(&self, x: Vec2) -> Vec2 {
        (x - self.center) * (-self.value(x) / (self.sigma * self.sigma))
    }

    pub fn mass(&self) -> f64 {
        2.0 * PI * self.amplitude * self.sigma * self.sigma
    }
}

/// Free-space heat evolution of a Gaussian bump, evaluated on `grid`.
pub fn heat_evolve_free(rho0: &GaussianBump, t: f64, d: f64, grid: &[Vec2]) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !(d > 0.0) {
        return Err(LabError::Contract(format!("need t >= 0 and D > 0, got t={t}, D={d}")));
    }
    let rho = rho0.evolved(t, d);
    Ok(grid.iter().map(|&x| rho.value(x)).collect())
}

/// Probability that Brownian motion from `x1` leaves `(0, L)` on the right.
pub fn exit_split(x1: f64, length: f64) -> Result<f64> {
    if !(0.0..=length).contains(&x1) {
        return Err(LabError::Contract(format!("x1 = {x1} outside [0, {length}]")));
    }
    Ok(x1 / length)
}

/// Survival probability in the absorbing slab:
/// `sum_{n odd} 4/(n pi) sin(n pi x1/L) exp(-D (n pi/L)^2 t)`.
pub fn slab_survival(x1: f64, t: f64, params: &HeatParams) -> Result<f64> {
    let l = params.length;
    if !(x1 > 0.0 && x1 < l) || !(t >= 0.0) {
        return Err(LabError::Contract(format!("need 0 < x1 < L and t >= 0, got x1={x1}, t={t}")));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let mut s = 0.0;
    let mut n = 1u64;
    loop {
        let k = n as f64 * PI / l;
        let envelope = 4.0 / (n as f64 * PI) * (-params.d * k * k * t).exp();
        if envelope < SERIES_TOL {
            break;
        }
        s += envelope * (k * x1).sin();
        n += 2;
    }
    Ok(s.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn stationary_profile_examples() {
        let c = SlabConfig::new(1.0, 1.0, 2.0, 1.0, 0.01, 2.0, 0).unwrap();
        assert_eq!(stationary_profile(&c, 0.0), 1.0);
        assert_eq!(stationary_profile(&c, 1.0), 2.0);
        assert_eq!(stationary_profile(&c, 0.5), 1.5);
    }

    #[test]
    fn gaussian_evolution() {
        let b = GaussianBump { amplitude: 2.0, center: Vec2::new(0.1, -0.2), sigma: 0.5 };
        let grid = [Vec2::new(0.0, 0.0), Vec2::new(0.7, 0.3)];
        let at0 = heat_evolve_free(&b, 0.0, 0.3, &grid).unwrap();
        assert_eq!(at0[0], b.value(grid[0]));
        let e = b.evolved(1.5, 0.2);
        assert_abs_diff_eq!(e.sigma * e.sigma, 0.25 + 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(e.mass(), b.mass(), epsilon = 1e-14);
    }

    #[test]
    fn survival_edges() {
        let p = HeatParams::new(3.0 / 16.0, 1.0).unwrap();
        assert_eq!(slab_survival(0.5, 0.0, &p).unwrap(), 1.0);
        assert!(slab_survival(0.0, 1.0, &p).is_err());
        let a = slab_survival(0.3, 0.2, &p).unwrap();
        let b = slab_survival(0.7, 0.2, &p).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}
