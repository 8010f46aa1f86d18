use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Physical and scaling parameters of one experiment.
///
/// All lengths and times are macroscopic. The obstacle intensity seen by the
/// microscopic dynamics is `mu_eps() = eta * mu / epsilon`; it is always
/// recomputed from the fields and never cached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabConfig {
    /// Slab width `L`.
    pub length: f64,
    /// Left reservoir density.
    pub rho1: f64,
    /// Right reservoir density.
    pub rho2: f64,
    /// Reference obstacle intensity.
    pub mu: f64,
    /// Disk radius.
    pub epsilon: f64,
    /// Divergence factor, `>= 1`.
    pub eta: f64,
    pub seed: u64,
}

impl SlabConfig {
    pub fn new(length: f64, rho1: f64, rho2: f64, mu: f64, epsilon: f64, eta: f64, seed: u64) -> Result<Self> {
        let cfg = SlabConfig { length, rho1, rho2, mu, epsilon, eta, seed };
        cfg.validate()?;
        let health = cfg.scaling_health();
        if health > 1.0 {
            log::warn!("scaling health sqrt(epsilon)*eta^6 = {health:.3e} exceeds 1; kinetic approximation is not controlled");
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::InvalidConfig(msg));
        let finite = [self.length, self.rho1, self.rho2, self.mu, self.epsilon, self.eta];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        if self.length <= 0.0 {
            return bad(format!("L must be > 0, got {}", self.length));
        }
        if self.epsilon <= 0.0 || self.epsilon >= self.length / 4.0 {
            return bad(format!("epsilon must lie in (0, L/4), got {}", self.epsilon));
        }
        if self.rho1 <= 0.0 || self.rho2 <= 0.0 {
            return bad(format!("reservoir densities must be > 0, got {} and {}", self.rho1, self.rho2));
        }
        if self.mu < 0.0 {
            return bad(format!("mu must be >= 0, got {}", self.mu));
        }
        if self.eta < 1.0 {
            return bad(format!("eta must be >= 1, got {}", self.eta));
        }
        Ok(())
    }

    /// Poisson intensity of disk centers, `eta * mu / epsilon`.
    pub fn mu_eps(&self) -> f64 {
        self.eta * self.mu / self.epsilon
    }

    /// Jump rate of the kinetic process on the slab clock, `2 mu eta`.
    pub fn jump_rate(&self) -> f64 {
        2.0 * self.mu * self.eta
    }

    /// `sqrt(epsilon) * eta^6`; values above one mean the low-density
    /// scaling is not in its controlled regime.
    pub fn scaling_health(&self) -> f64 {
        self.epsilon.sqrt() * self.eta.powi(6)
    }

    /// Default backward horizon for stationary estimates, `1000 * eta`.
    pub fn default_horizon(&self) -> f64 {
        1.0e3 * self.eta
    }

    /// Boundary datum read at exit. `None` when the path never left.
    pub fn boundary_value(&self, side: Side) -> Option<f64> {
        match side {
            Side::Left => Some(self.rho1),
            Side::Right => Some(self.rho2),
            Side::None => None,
        }
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        let cfg = SlabConfig { eta, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let cfg = SlabConfig { epsilon, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which slab boundary a backward trajectory left through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    None,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SlabConfig {
        SlabConfig::new(1.0, 1.0, 2.0, 1.0, 1e-3, 2.0, 1).unwrap()
    }

    #[test]
    fn derived_intensity_tracks_fields() {
        let mut c = base();
        assert_eq!(c.mu_eps(), 2000.0);
        c.eta = 4.0;
        assert_eq!(c.mu_eps(), 4000.0);
        assert_eq!(c.jump_rate(), 8.0);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(SlabConfig::new(0.0, 1.0, 2.0, 1.0, 1e-3, 2.0, 1).is_err());
        assert!(SlabConfig::new(1.0, 1.0, 2.0, 1.0, 0.3, 2.0, 1).is_err());
        assert!(SlabConfig::new(1.0, 0.0, 2.0, 1.0, 1e-3, 2.0, 1).is_err());
        assert!(SlabConfig::new(1.0, 1.0, 2.0, -1.0, 1e-3, 2.0, 1).is_err());
        assert!(SlabConfig::new(1.0, 1.0, 2.0, 1.0, 1e-3, 0.5, 1).is_err());
        assert!(SlabConfig::new(1.0, 1.0, f64::NAN, 1.0, 1e-3, 2.0, 1).is_err());
    }

    #[test]
    fn scaling_health_is_reported() {
        let c = base();
        assert!((c.scaling_health() - 1e-3f64.sqrt() * 64.0).abs() < 1e-12);
        // Unhealthy scaling is a warning, not an error.
        assert!(SlabConfig::new(1.0, 1.0, 2.0, 1.0, 1e-2, 20.0, 1).is_ok());
    }
}
