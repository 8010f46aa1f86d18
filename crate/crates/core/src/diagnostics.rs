//! Memory events of backward trajectories and comparison utilities.
//!
//! Legs are the straight pieces of a traced trajectory: leg `k` runs from
//! vertex `k` to vertex `k + 1`, where vertex 0 is the start, vertices
//! `1..=n` are the contacts with obstacles `1..=n` and the last vertex is
//! the stopping point.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SlabConfig;
use crate::error::{LabError, Result};
use crate::estimate::{par_reduce, z_score};
use crate::geometry::{build_field, center_from_contact, CollisionEvent, DiskId, ParticleState, ScattererField};
use crate::kinetic::{sample_jump_path, JumpPath};
use crate::micro::{flow_backward, ExitRecord, MicroTrajectory};
use crate::rng::{domain, stream};
use crate::vec2::Vec2;

/// Relative slack on the distance tests, for contacts computed in floating point.
const CONTACT_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathologyCounters {
    pub n_trajectories: u64,
    /// Trajectories with at least one event of each kind.
    pub n_recollision: u64,
    pub n_interference: u64,
    pub n_boundary_strip: u64,
    /// Trajectories with a recollision or an interference.
    pub n_memory: u64,
    /// Event multiplicities summed over trajectories.
    pub recollision_events: u64,
    pub interference_events: u64,
    pub boundary_strip_events: u64,
}

impl PathologyCounters {
    pub fn merge(&mut self, o: &PathologyCounters) {
        self.n_trajectories += o.n_trajectories;
        self.n_recollision += o.n_recollision;
        self.n_interference += o.n_interference;
        self.n_boundary_strip += o.n_boundary_strip;
        self.n_memory += o.n_memory;
        self.recollision_events += o.recollision_events;
        self.interference_events += o.interference_events;
        self.boundary_strip_events += o.boundary_strip_events;
    }

    /// Binomial frequency and standard error of `count`.
    pub fn frequency(&self, count: u64) -> (f64, f64) {
        let n = self.n_trajectories.max(1) as f64;
        let p = count as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_point_distance(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    closest_approach(a, b, p).0
}

/// Distance and the segment parameter in `[0, 1]` where it is attained.
fn closest_approach(a: Vec2, b: Vec2, p: Vec2) -> (f64, f64) {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    let s = if len_sq > 0.0 { ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
    ((a + ab * s - p).norm(), s)
}

/// Classifies one trajectory.
///
/// Recollision: a leg after leaving obstacle `i` comes within `epsilon` of
/// its center. Interference: a leg comes strictly within `epsilon` of an
/// obstacle hit two or more contacts later. Boundary strip: for fields
/// confined to the slab, a contact within `epsilon` of a wall; otherwise an
/// obstacle center in `[-epsilon, 0]` or `[L, L + epsilon]`.
pub fn classify_pathologies(trajectory: &MicroTrajectory, field: &ScattererField) -> PathologyCounters {
    let eps = field.epsilon();
    let length = field.length();
    let vertices = trajectory.vertices();
    let centers: Vec<Vec2> = trajectory.events.iter().map(|e| e.center).collect();
    let n = centers.len();
    let mut c = PathologyCounters { n_trajectories: 1, ..Default::default() };
    if n == 0 {
        return c;
    }
    for (i, b) in centers.iter().enumerate() {
        // Obstacle index i + 1 is touched at vertex i + 1; legs from i + 1 on leave it.
        for k in (i + 2)..vertices.len() - 1 {
            // A leg that merely starts on the circle is leaving it.
            let (d, s) = closest_approach(vertices[k], vertices[k + 1], *b);
            if d <= eps * (1.0 + CONTACT_SLACK) && s > 0.0 {
                c.recollision_events += 1;
            }
        }
    }
    for k in 0..vertices.len() - 1 {
        for b in centers.iter().skip(k + 1) {
            if segment_point_distance(vertices[k], vertices[k + 1], *b) < eps * (1.0 - CONTACT_SLACK) {
                c.interference_events += 1;
            }
        }
    }
    if field.confined_to_slab() {
        for p in &vertices[1..=n] {
            if p.x < eps || p.x > length - eps {
                c.boundary_strip_events += 1;
            }
        }
    } else {
        for b in &centers {
            if (-eps..=0.0).contains(&b.x) || (length..=length + eps).contains(&b.x) {
                c.boundary_strip_events += 1;
            }
        }
    }
    c.n_recollision = (c.recollision_events > 0) as u64;
    c.n_interference = (c.interference_events > 0) as u64;
    c.n_boundary_strip = (c.boundary_strip_events > 0) as u64;
    c.n_memory = (c.recollision_events + c.interference_events > 0) as u64;
    c
}

/// Places an obstacle at every jump of a Markov path, at the position the
/// jump's impact parameter implies, and returns the path as a trajectory
/// through the resulting explicit field.
pub fn markov_trajectory(path: &JumpPath, config: &SlabConfig) -> (MicroTrajectory, ScattererField) {
    let eps = config.epsilon;
    let contacts = path.jump_positions();
    let mut events = Vec::with_capacity(contacts.len());
    let mut centers = Vec::with_capacity(contacts.len());
    for (i, p) in contacts.iter().enumerate() {
        let w_in = -path.velocities[i];
        let w_out = -path.velocities[i + 1];
        let rho = path.impact_parameters[i];
        let center = center_from_contact(*p, w_in, rho, eps);
        centers.push(center);
        events.push(CollisionEvent {
            time: path.jump_times[i],
            disk: DiskId { cell: crate::geometry::CellKey { ix: i as i64, iy: 0 }, index: 0 },
            center,
            impact_parameter: rho,
            v_in: w_in,
            v_out: w_out,
        });
    }
    let pitch = crate::geometry::DEFAULT_PITCH_FACTOR * eps;
    let field = ScattererField::from_centers(config, &centers, pitch);
    let hits = events.iter().map(|e| e.disk).collect();
    let exit: ExitRecord = path.exit;
    (MicroTrajectory { initial: path.initial, events, exit, hits }, field)
}

/// Which dynamics generates the trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathologySource {
    /// Markov jump paths with obstacles reconstructed from the jumps.
    Markov,
    /// Billiard trajectories in quenched Poisson fields.
    Micro,
}

/// Counts over `n` trajectories started at `x1` uniform in `(0, L)` with a
/// uniform velocity, traced backward up to time `t` or exit.
pub fn pathology_counts(config: &SlabConfig, t: f64, n: usize, source: PathologySource) -> Result<PathologyCounters> {
    if !(t > 0.0) || n == 0 {
        return Err(LabError::Contract(format!("need t > 0 and n >= 1, got t={t}, n={n}")));
    }
    #[derive(Default)]
    struct Acc {
        c: PathologyCounters,
        error: Option<String>,
    }
    let acc = par_reduce(
        n,
        |a: &mut Acc, i| {
            let mut rng = stream(config.seed, &[domain::PATHOLOGY, config.epsilon.to_bits(), source as u64, i as u64]);
            let x1 = config.length * rng.random::<f64>();
            let phi = std::f64::consts::TAU * rng.random::<f64>();
            let state = ParticleState::from_angle(Vec2::new(x1, 0.0), phi);
            let r = match source {
                PathologySource::Markov => sample_jump_path(state, t, config, &mut rng).map(|p| {
                    let (tr, f) = markov_trajectory(&p, config);
                    classify_pathologies(&tr, &f)
                }),
                PathologySource::Micro => {
                    let field = build_field(config, rng.random()).conditioned_at(state.x);
                    flow_backward(state, t, &field, config).map(|tr| classify_pathologies(&tr, &field))
                }
            };
            match r {
                Ok(c) => a.c.merge(&c),
                Err(e) => {
                    if a.error.is_none() {
                        a.error = Some(e.to_string());
                    }
                }
            }
        },
        |a, b| {
            a.c.merge(&b.c);
            if a.error.is_none() {
                a.error.clone_from(&b.error);
            }
        },
    );
    match acc.error {
        Some(e) => Err(LabError::Contract(e)),
        None => Ok(acc.c),
    }
}

/// One row of the pathology report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyReport {
    pub epsilon: f64,
    pub eta: f64,
    pub t: f64,
    pub n: u64,
    pub rec_freq: f64,
    pub rec_stderr: f64,
    pub int_freq: f64,
    pub int_stderr: f64,
    pub strip_freq: f64,
    pub strip_stderr: f64,
    /// Recollision or interference.
    pub memory_freq: f64,
    pub memory_stderr: f64,
}

impl PathologyReport {
    pub fn new(config: &SlabConfig, t: f64, c: &PathologyCounters) -> Self {
        let (rec_freq, rec_stderr) = c.frequency(c.n_recollision);
        let (int_freq, int_stderr) = c.frequency(c.n_interference);
        let (strip_freq, strip_stderr) = c.frequency(c.n_boundary_strip);
        let (memory_freq, memory_stderr) = c.frequency(c.n_memory);
        PathologyReport {
            epsilon: config.epsilon,
            eta: config.eta,
            t,
            n: c.n_trajectories,
            rec_freq,
            rec_stderr,
            int_freq,
            int_stderr,
            strip_freq,
            strip_stderr,
            memory_freq,
            memory_stderr,
        }
    }
}

/// Power law `p = constant * eps^exponent` fitted on log–log axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub constant: f64,
    /// Half-width of the 95% confidence interval of the exponent.
    pub exponent_ci: f64,
    /// Weighted residual sum of squares.
    pub residual: f64,
    pub n_used: usize,
    pub n_dropped: usize,
}

/// Weighted least squares of `log p` against `log eps`, with weights
/// `(p / stderr)^2`; unweighted if any standard error is zero. Points with
/// zero frequency are dropped with a warning.
pub fn scaling_fit(points: &[(f64, f64, f64)]) -> Result<ScalingFit> {
    let mut used = Vec::new();
    let mut dropped = 0;
    for &(eps, p, se) in points {
        if !(p > 0.0) || !(eps > 0.0) {
            log::warn!("scaling fit: dropping point eps={eps} with frequency {p}");
            dropped += 1;
            continue;
        }
        used.push((eps.ln(), p.ln(), se / p));
    }
    if used.len() < 3 {
        return Err(LabError::InsufficientPoints { needed: 3, got: used.len() });
    }
    let weighted = used.iter().all(|u| u.2 > 0.0);
    let w: Vec<f64> = used.iter().map(|u| if weighted { 1.0 / (u.2 * u.2) } else { 1.0 }).collect();
    let sw: f64 = w.iter().sum();
    let xm = used.iter().zip(&w).map(|(u, w)| w * u.0).sum::<f64>() / sw;
    let ym = used.iter().zip(&w).map(|(u, w)| w * u.1).sum::<f64>() / sw;
    let sxx: f64 = used.iter().zip(&w).map(|(u, w)| w * (u.0 - xm).powi(2)).sum();
    let sxy: f64 = used.iter().zip(&w).map(|(u, w)| w * (u.0 - xm) * (u.1 - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let residual: f64 = used.iter().zip(&w).map(|(u, w)| w * (u.1 - intercept - slope * u.0).powi(2)).sum();
    let dof = (used.len() - 2) as f64;
    let scale = if weighted { (residual / dof).max(1.0) } else { residual / dof };
    Ok(ScalingFit {
        exponent: slope,
        constant: intercept.exp(),
        exponent_ci: 1.96 * (scale / sxx).sqrt(),
        residual,
        n_used: used.len(),
        n_dropped: dropped,
    })
}

/// Sup, L2 and per-point z-score comparison of two estimated fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldComparison {
    pub sup_diff: f64,
    pub l2_diff: f64,
    pub z_scores: Vec<f64>,
}

impl FieldComparison {
    pub fn max_abs_z(&self) -> f64 {
        self.z_scores.iter().fold(0.0_f64, |a, z| a.max(z.abs()))
    }

    pub fn fraction_above(&self, threshold: f64) -> f64 {
        self.z_scores.iter().filter(|z| z.abs() > threshold).count() as f64 / self.z_scores.len().max(1) as f64
    }
}

/// `grid` holds increasing coordinates; the L2 difference uses the
/// trapezoid rule on it (a single point gives the absolute difference).
pub fn compare_fields(a: &[f64], b: &[f64], se_a: &[f64], se_b: &[f64], grid: &[f64]) -> Result<FieldComparison> {
    let n = grid.len();
    if n == 0 || a.len() != n || b.len() != n || se_a.len() != n || se_b.len() != n {
        return Err(LabError::Contract(format!(
            "grid mismatch: grid {n}, values {}/{}, stderr {}/{}",
            a.len(),
            b.len(),
            se_a.len(),
            se_b.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LabError::Contract("grid coordinates must be strictly increasing".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let sup_diff = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let l2_diff = if n == 1 {
        d[0].abs()
    } else {
        grid.windows(2).zip(d.windows(2)).map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] * v[0] + v[1] * v[1])).sum::<f64>().sqrt()
    };
    let z_scores = (0..n).map(|i| z_score(a[i], b[i], se_a[i], se_b[i])).collect();
    Ok(FieldComparison { sup_diff, l2_diff, z_scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn segment_distance() {
        let a = Vec2::new(0.0, 0.0);
        let b = Vec2::new(2.0, 0.0);
        assert_eq!(segment_point_distance(a, b, Vec2::new(1.0, 0.5)), 0.5);
        assert_eq!(segment_point_distance(a, b, Vec2::new(3.0, 0.0)), 1.0);
        assert_eq!(segment_point_distance(a, a, Vec2::new(0.0, 2.0)), 2.0);
    }

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<(f64, f64, f64)> = [1e-4, 1e-3, 3e-3, 1e-2].iter().map(|&e: &f64| (e, 0.3 * e.sqrt(), 0.0)).collect();
        let f = scaling_fit(&pts).unwrap();
        assert_abs_diff_eq!(f.exponent, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f.constant, 0.3, epsilon = 1e-12);
        assert!(f.exponent_ci < 1e-6);
    }

    #[test]
    fn zero_frequencies_are_dropped() {
        let pts = [(1e-2, 0.1, 0.01), (1e-3, 0.0, 0.0), (1e-4, 0.001, 1e-4)];
        assert!(matches!(scaling_fit(&pts), Err(LabError::InsufficientPoints { needed: 3, got: 2 })));
    }

    #[test]
    fn comparison_arithmetic() {
        let g = [0.0, 1.0, 2.0];
        let a = [1.0, 2.0, 3.0];
        let c = compare_fields(&a, &a, &[0.1; 3], &[0.1; 3], &g).unwrap();
        assert_eq!((c.sup_diff, c.l2_diff), (0.0, 0.0));
        assert!(c.z_scores.iter().all(|&z| z == 0.0));
        let se = [0.3, 0.4, 0.0];
        let b = [1.0, 2.0 + 1.5, 3.0];
        let c = compare_fields(&b, &a, &[0.0; 3], &se, &g).unwrap();
        assert_abs_diff_eq!(c.max_abs_z(), 3.75, epsilon = 1e-12);
        let c = compare_fields(&[1.0 + 3.0 * 0.5], &[1.0], &[0.3], &[0.4], &[0.0]).unwrap();
        assert_abs_diff_eq!(c.max_abs_z(), 3.0, epsilon = 1e-12);
        assert!(compare_fields(&a, &a[..2], &se, &se, &g).is_err());
    }
}
