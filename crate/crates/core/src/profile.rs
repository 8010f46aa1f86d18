//! Binned density and flux profiles shared by the micro and kinetic tiers.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SlabConfig;
use crate::error::{LabError, Result};
use crate::estimate::{z_score, CappedEstimate, CAPPED_FRACTION_LIMIT};
use crate::geometry::ParticleState;
use crate::vec2::Vec2;

/// One CSV row. Column order is part of the output contract.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub x_center: f64,
    pub density: f64,
    pub density_stderr: f64,
    pub flux_x: f64,
    pub flux_stderr: f64,
    pub capped_fraction: f64,
    pub n_samples: u64,
}

pub const PROFILE_HEADER: &str = "x_center,density,density_stderr,flux_x,flux_stderr,capped_fraction,n_samples";

/// Velocity-averaged density and horizontal flux per bin.
///
/// Angular averages use the normalized uniform measure on the circle; the
/// flux is `eta * <v1 f>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub eta: f64,
    pub rows: Vec<ProfileRow>,
}

/// Bin layout and sampling budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileGrid {
    pub bins: usize,
    pub angles: usize,
    /// Samples per bin, spread evenly over the angle nodes.
    pub samples_per_bin: usize,
}

impl ProfileGrid {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(LabError::InvalidConfig("at least one bin is required".into()));
        }
        if self.angles < 16 || !self.angles.is_multiple_of(2) {
            return Err(LabError::InvalidConfig(format!("angle nodes must be even and >= 16, got {}", self.angles)));
        }
        if self.samples_per_bin == 0 {
            return Err(LabError::InvalidConfig("samples per bin must be positive".into()));
        }
        Ok(())
    }

    pub fn samples_per_node(&self) -> usize {
        self.samples_per_bin.div_ceil(self.angles)
    }

    pub fn bin_centers(&self, length: f64) -> Vec<f64> {
        let h = length / self.bins as f64;
        (0..self.bins).map(|i| (i as f64 + 0.5) * h).collect()
    }

    /// Uniform angles on `[-pi, pi)`.
    pub fn angle_nodes(&self) -> Vec<f64> {
        angle_nodes(self.angles)
    }
}

pub fn angle_nodes(m: usize) -> Vec<f64> {
    let h = std::f64::consts::TAU / m as f64;
    (0..m).map(|i| -std::f64::consts::PI + i as f64 * h).collect()
}

/// Evaluates `point` at every (bin center, angle node) and assembles the
/// angular averages.
pub fn build_profile<F>(config: &SlabConfig, grid: &ProfileGrid, point: F) -> Result<Profile>
where
    F: Fn(ParticleState, usize) -> Result<CappedEstimate>,
{
    grid.validate()?;
    let nodes = grid.angle_nodes();
    let m = nodes.len() as f64;
    let per_node = grid.samples_per_node();
    let mut rows = Vec::with_capacity(grid.bins);
    for x in grid.bin_centers(config.length) {
        let (mut d, mut d_var, mut j, mut j_var) = (0.0, 0.0, 0.0, 0.0);
        let (mut capped, mut total) = (0u64, 0u64);
        for &phi in &nodes {
            let est = point(ParticleState::from_angle(Vec2::new(x, 0.0), phi), per_node)?;
            let c = phi.cos();
            let (mean, se) = (est.estimate.mean, est.estimate.stderr);
            d += mean;
            d_var += se * se;
            j += c * mean;
            j_var += c * c * se * se;
            capped += est.n_capped;
            total += est.n_total;
        }
        let capped_fraction = capped as f64 / total.max(1) as f64;
        if capped_fraction > CAPPED_FRACTION_LIMIT {
            log::warn!("bin x={x}: capped fraction {capped_fraction:.2e} exceeds {CAPPED_FRACTION_LIMIT:e}; unreliable");
        }
        rows.push(ProfileRow {
            x_center: x,
            density: d / m,
            density_stderr: d_var.sqrt() / m,
            flux_x: config.eta * j / m,
            flux_stderr: config.eta * j_var.sqrt() / m,
            capped_fraction,
            n_samples: total,
        });
    }
    Ok(Profile { eta: config.eta, rows })
}

impl Profile {
    /// Coefficient `a1` of `cos(phi)` in bin `i`: `2 <cos f> = 2 flux / eta`.
    pub fn cos_mode(&self, i: usize) -> (f64, f64) {
        let r = &self.rows[i];
        (2.0 * r.flux_x / self.eta, 2.0 * r.flux_stderr / self.eta)
    }

    pub fn reliable(&self) -> bool {
        self.rows.iter().all(|r| r.capped_fraction <= CAPPED_FRACTION_LIMIT)
    }

    /// Root-mean-square distance of the density column from `reference(x)`,
    /// i.e. the midpoint-rule L2 norm over `(0, L)` divided by `sqrt(L)`.
    pub fn l2_distance(&self, length: f64, reference: impl Fn(f64) -> f64) -> f64 {
        let h = length / self.rows.len() as f64;
        let s: f64 = self.rows.iter().map(|r| (r.density - reference(r.x_center)).powi(2)).sum();
        (s * h / length).sqrt()
    }

    /// Inverse-variance weighted mean flux over bins.
    pub fn mean_flux(&self) -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for r in &self.rows {
            let w = 1.0 / (r.flux_stderr * r.flux_stderr);
            num += w * r.flux_x;
            den += w;
        }
        (num / den, den.sqrt().recip())
    }

    /// Largest pairwise z-score between bin fluxes.
    pub fn max_pairwise_flux_z(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.rows.iter().enumerate() {
            for b in &self.rows[i + 1..] {
                worst = worst.max(z_score(a.flux_x, b.flux_x, a.flux_stderr, b.flux_stderr).abs());
            }
        }
        worst
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(r: R, eta: f64) -> Result<Profile> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<ProfileRow>, _>>()?;
        Ok(Profile { eta, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::Estimate;

    fn flat(value: f64) -> impl Fn(ParticleState, usize) -> Result<CappedEstimate> {
        move |_, n| {
            Ok(CappedEstimate { estimate: Estimate { mean: value, stderr: 0.01, n: n as u64 }, n_capped: 0, n_total: n as u64 })
        }
    }

    #[test]
    fn header_and_round_trip() {
        let c = SlabConfig::new(1.0, 1.0, 1.0, 1.0, 0.01, 3.0, 0).unwrap();
        let g = ProfileGrid { bins: 4, angles: 16, samples_per_bin: 160 };
        let p = build_profile(&c, &g, flat(1.0)).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), PROFILE_HEADER);
        assert_eq!(Profile::read_csv(buf.as_slice(), 3.0).unwrap(), p);
        for r in &p.rows {
            assert_eq!(r.density, 1.0);
            assert!(r.flux_x.abs() < 1e-14);
            assert_eq!(r.n_samples, 160);
        }
        assert!(p.l2_distance(1.0, |_| 1.0) == 0.0);
    }

    #[test]
    fn cos_mode_of_a_pure_cosine() {
        let c = SlabConfig::new(1.0, 1.0, 1.0, 1.0, 0.01, 2.0, 0).unwrap();
        let g = ProfileGrid { bins: 1, angles: 32, samples_per_bin: 32 };
        let p = build_profile(&c, &g, |s, n| {
            Ok(CappedEstimate { estimate: Estimate { mean: 0.3 * s.v.x, stderr: 0.0, n: n as u64 }, n_capped: 0, n_total: n as u64 })
        })
        .unwrap();
        assert!((p.cos_mode(0).0 - 0.3).abs() < 1e-14);
        assert!((p.rows[0].flux_x - 0.3).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_grids() {
        let c = SlabConfig::new(1.0, 1.0, 1.0, 1.0, 0.01, 2.0, 0).unwrap();
        for g in [
            ProfileGrid { bins: 0, angles: 16, samples_per_bin: 1 },
            ProfileGrid { bins: 2, angles: 15, samples_per_bin: 1 },
            ProfileGrid { bins: 2, angles: 8, samples_per_bin: 1 },
        ] {
            assert!(build_profile(&c, &g, flat(1.0)).is_err());
        }
    }
}
