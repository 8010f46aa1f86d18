//! The linear Boltzmann velocity-jump process in the slab and on the plane.
//!
//! In the slab, paths move at unit speed and jump at rate `2 mu eta`; each
//! jump draws an impact parameter `rho` uniform on `[-1, 1]` and rotates the
//! velocity by `pi + 2 asin(rho)`, the hard-disk deflection. As in the micro
//! tier, `(x, v)` is traced backward along `-v`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::config::{Side, SlabConfig};
use crate::datum::BoundedDatum;
use crate::error::{LabError, Result};
use crate::estimate::{par_reduce, Accumulator, CappedEstimate, Estimate};
use crate::geometry::ParticleState;
use crate::heat::{heat_evolve_free, GaussianBump};
use crate::micro::ExitRecord;
use crate::profile::{build_profile, Profile, ProfileGrid};
use crate::rng::{domain, stream, StreamRng};
use crate::vec2::Vec2;

/// Jump cap per path; capped paths are counted, never dropped silently.
pub const JUMP_CAP: u64 = 10_000_000;

/// Rotation by `pi + 2 asin(rho)` without trigonometric calls.
#[inline]
pub fn deflect(w: Vec2, rho: f64) -> Vec2 {
    let c = 1.0 - 2.0 * rho * rho;
    let s = 2.0 * rho * (1.0 - rho * rho).max(0.0).sqrt();
    Vec2::new(-(c * w.x - s * w.y), -(s * w.x + c * w.y)).normalized()
}

/// A recorded jump path. Times are elapsed backward times; velocities are
/// state velocities (`velocities[0]` is the initial one).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpPath {
    pub initial: ParticleState,
    pub jump_times: Vec<f64>,
    pub impact_parameters: Vec<f64>,
    pub velocities: Vec<Vec2>,
    pub exit: ExitRecord,
}

impl JumpPath {
    /// Positions at which jumps happened.
    pub fn jump_positions(&self) -> Vec<Vec2> {
        let mut p = self.initial.x;
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.jump_times.len());
        for (i, &tj) in self.jump_times.iter().enumerate() {
            p = p - self.velocities[i] * (tj - t);
            out.push(p);
            t = tj;
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct RunEnd {
    side: Side,
    tau: f64,
    pos: Vec2,
    dir: Vec2,
    capped: bool,
}

/// Runs the slab process along direction `w` for at most `horizon`.
/// With `continue_after_exit` the jumps go on past the wall until the
/// horizon (the exit itself is still the one reported).
#[inline]
#[allow(clippy::too_many_arguments)]
fn run(
    x: Vec2,
    w: Vec2,
    horizon: f64,
    rate: f64,
    length: f64,
    rng: &mut StreamRng,
    continue_after_exit: bool,
    mut on_jump: impl FnMut(f64, f64, Vec2),
) -> RunEnd {
    let mut pos = x;
    let mut dir = w;
    let mut t = 0.0;
    let mut jumps = 0u64;
    let mut exit: Option<RunEnd> = None;
    loop {
        let wait = if rate > 0.0 { <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate } else { f64::INFINITY };
        let remaining = horizon - t;
        if exit.is_none() {
            let t_wall = if dir.x < 0.0 {
                pos.x / -dir.x
            } else if dir.x > 0.0 {
                (length - pos.x) / dir.x
            } else {
                f64::INFINITY
            };
            if t_wall <= wait.min(remaining) {
                let side = if dir.x < 0.0 { Side::Left } else { Side::Right };
                let mut p = pos + dir * t_wall;
                p.x = if side == Side::Left { 0.0 } else { length };
                let end = RunEnd { side, tau: t + t_wall, pos: p, dir, capped: false };
                if !continue_after_exit {
                    return end;
                }
                exit = Some(end);
            }
        }
        if wait >= remaining {
            return exit.unwrap_or(RunEnd { side: Side::None, tau: horizon, pos: pos + dir * remaining, dir, capped: false });
        }
        pos += dir * wait;
        t += wait;
        jumps += 1;
        if jumps > JUMP_CAP {
            return exit.unwrap_or(RunEnd { side: Side::None, tau: t, pos, dir, capped: true });
        }
        let rho = 2.0 * rng.random::<f64>() - 1.0;
        dir = deflect(dir, rho);
        on_jump(t, rho, dir);
    }
}

fn check_state(state: &ParticleState, config: &SlabConfig) -> Result<()> {
    if !(0.0..=config.length).contains(&state.x.x) || !state.x.y.is_finite() {
        return Err(LabError::Contract(format!("position {:?} outside the slab", state.x)));
    }
    if (state.v.norm() - 1.0).abs() > crate::geometry::UNIT_TOL {
        return Err(LabError::Contract(format!("velocity {:?} is not a unit vector", state.v)));
    }
    Ok(())
}

fn exit_record(end: RunEnd, config: &SlabConfig) -> ExitRecord {
    ExitRecord {
        side: end.side,
        tau_elapsed: end.tau,
        boundary_value: config.boundary_value(end.side),
        position: end.pos,
        direction: end.dir,
        capped: end.capped,
    }
}

/// Samples one slab jump path from `state`, stopped at exit or `horizon`.
pub fn sample_jump_path(state: ParticleState, horizon: f64, config: &SlabConfig, rng: &mut StreamRng) -> Result<JumpPath> {
    check_state(&state, config)?;
    if !(horizon >= 0.0) {
        return Err(LabError::Contract(format!("horizon must be nonnegative, got {horizon}")));
    }
    let mut path = JumpPath {
        initial: state,
        jump_times: Vec::new(),
        impact_parameters: Vec::new(),
        velocities: vec![state.v],
        exit: ExitRecord {
            side: Side::None,
            tau_elapsed: 0.0,
            boundary_value: None,
            position: state.x,
            direction: -state.v,
            capped: false,
        },
    };
    if horizon == 0.0 {
        return Ok(path);
    }
    let end = run(state.x, -state.v, horizon, config.jump_rate(), config.length, rng, false, |t, rho, dir| {
        path.jump_times.push(t);
        path.impact_parameters.push(rho);
        path.velocities.push(-dir);
    });
    path.exit = exit_record(end, config);
    Ok(path)
}

/// Per-sample stream at a phase point.
pub fn path_stream(config: &SlabConfig, purpose: u64, state: &ParticleState, i: u64) -> StreamRng {
    stream(
        config.seed,
        &[purpose, state.x.x.to_bits(), state.x.y.to_bits(), state.v.x.to_bits(), state.v.y.to_bits(), i],
    )
}

#[derive(Default)]
struct KAcc {
    acc: Accumulator,
    capped: u64,
    error: Option<String>,
}

impl KAcc {
    fn merge(&mut self, o: &KAcc) {
        self.acc.merge(&o.acc);
        self.capped += o.capped;
        if self.error.is_none() {
            self.error.clone_from(&o.error);
        }
    }
}

fn reduce(n: usize, sample: impl Fn(usize) -> Result<Option<f64>> + Sync + Send) -> Result<CappedEstimate> {
    if n == 0 {
        return Err(LabError::Contract("n_samples must be at least 1".into()));
    }
    let acc = par_reduce(
        n,
        |a: &mut KAcc, i| match sample(i) {
            Ok(Some(v)) => a.acc.push(v),
            Ok(None) => a.capped += 1,
            Err(e) => {
                if a.error.is_none() {
                    a.error = Some(e.to_string());
                }
            }
        },
        KAcc::merge,
    );
    if let Some(e) = acc.error {
        return Err(LabError::Contract(e));
    }
    Ok(CappedEstimate { estimate: acc.acc.estimate(), n_capped: acc.capped, n_total: n as u64 })
}

/// How `h_out` is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutRepresentation {
    /// Paths stop at the wall.
    Stopped,
    /// Jumps continue after the exit; the recorded value is frozen there.
    Fictitious,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutEstimate {
    pub value: Estimate,
    pub representation: OutRepresentation,
}

/// `h_out(x, v, t)`: boundary datum if the path exits before `t`, else 0.
pub fn estimate_h_out(
    state: ParticleState,
    t: f64,
    config: &SlabConfig,
    n_samples: usize,
    representation: OutRepresentation,
) -> Result<OutEstimate> {
    check_state(&state, config)?;
    if !(t >= 0.0) {
        return Err(LabError::Contract(format!("time must be nonnegative, got {t}")));
    }
    let (purpose, cont) = match representation {
        OutRepresentation::Stopped => (domain::KINETIC_PATH, false),
        OutRepresentation::Fictitious => (domain::KINETIC_FICTITIOUS, true),
    };
    let est = reduce(n_samples, |i| {
        if t == 0.0 {
            return Ok(Some(0.0));
        }
        let mut rng = path_stream(config, purpose, &state, i as u64);
        let end = run(state.x, -state.v, t, config.jump_rate(), config.length, &mut rng, cont, |_, _, _| {});
        Ok(Some(config.boundary_value(end.side).unwrap_or(0.0)))
    })?;
    Ok(OutEstimate { value: est.estimate, representation })
}

/// Full `h(x, v, t)`: boundary datum at exit before `t`, else `f0` at the
/// endpoint. Shares its paths with [`estimate_h_out`] (stopped) and
/// [`apply_s0`], so the out/in split holds path by path.
pub fn estimate_h(state: ParticleState, t: f64, config: &SlabConfig, f0: &BoundedDatum, n_samples: usize) -> Result<Estimate> {
    check_state(&state, config)?;
    if !(t >= 0.0) {
        return Err(LabError::Contract(format!("time must be nonnegative, got {t}")));
    }
    let est = reduce(n_samples, |i| {
        if t == 0.0 {
            return f0.eval(state.x, state.v).map(Some);
        }
        let mut rng = path_stream(config, domain::KINETIC_PATH, &state, i as u64);
        let end = run(state.x, -state.v, t, config.jump_rate(), config.length, &mut rng, false, |_, _, _| {});
        match config.boundary_value(end.side) {
            Some(b) => Ok(Some(b)),
            None => f0.eval(end.pos, -end.dir).map(Some),
        }
    })?;
    Ok(est.estimate)
}

/// `S0(t) ell` at each evaluation point: `ell(endpoint) 1{no exit before t}`,
/// and exactly 0 at points outside the slab.
pub fn apply_s0(ell: &BoundedDatum, t: f64, config: &SlabConfig, eval_points: &[ParticleState], n_samples: usize) -> Result<Vec<Estimate>> {
    if !(t >= 0.0) {
        return Err(LabError::Contract(format!("time must be nonnegative, got {t}")));
    }
    eval_points
        .iter()
        .map(|state| {
            if !(0.0..=config.length).contains(&state.x.x) {
                return Ok(Estimate::exact(0.0));
            }
            check_state(state, config)?;
            if t == 0.0 {
                return Ok(Estimate::exact(ell.eval(state.x, state.v)?));
            }
            let est = reduce(n_samples, |i| {
                let mut rng = path_stream(config, domain::KINETIC_PATH, state, i as u64);
                let end = run(state.x, -state.v, t, config.jump_rate(), config.length, &mut rng, false, |_, _, _| {});
                if end.side == Side::None {
                    ell.eval(end.pos, -end.dir).map(Some)
                } else {
                    Ok(Some(0.0))
                }
            })?;
            Ok(est.estimate)
        })
        .collect()
}

/// Stationary kinetic state by exit resummation, default horizon `10^3 eta`.
pub fn estimate_h_stationary(state: ParticleState, config: &SlabConfig, n_samples: usize) -> Result<CappedEstimate> {
    estimate_h_stationary_with_horizon(state, config, n_samples, config.default_horizon())
}

pub fn estimate_h_stationary_with_horizon(state: ParticleState, config: &SlabConfig, n_samples: usize, horizon: f64) -> Result<CappedEstimate> {
    check_state(&state, config)?;
    reduce(n_samples, |i| {
        let mut rng = path_stream(config, domain::KINETIC_PATH ^ 0x100, &state, i as u64);
        let end = run(state.x, -state.v, horizon, config.jump_rate(), config.length, &mut rng, false, |_, _, _| {});
        Ok(if end.capped { None } else { config.boundary_value(end.side) })
    })
}

/// Kinetic stationary profile on a bin × angle grid.
pub fn kinetic_profile(config: &SlabConfig, grid: &ProfileGrid) -> Result<Profile> {
    build_profile(config, grid, |s, n| estimate_h_stationary(s, config, n))
}

/// Probability that the path from `(x, v)`, `v` uniform, stays in the slab up to `t`.
pub fn survival_probability(x: Vec2, t: f64, config: &SlabConfig, n_samples: usize) -> Result<Estimate> {
    if !(x.x > 0.0 && x.x < config.length) {
        return Err(LabError::Contract(format!("x1 = {} outside the open slab", x.x)));
    }
    if !(t >= 0.0) {
        return Err(LabError::Contract(format!("time must be nonnegative, got {t}")));
    }
    let origin = ParticleState::new(x, Vec2::new(1.0, 0.0));
    let est = reduce(n_samples, |i| {
        if t == 0.0 {
            return Ok(Some(1.0));
        }
        let mut rng = path_stream(config, domain::SURVIVAL, &origin, i as u64);
        let phi = std::f64::consts::TAU * rng.random::<f64>();
        let w = Vec2::from_angle(phi);
        let end = run(x, w, t, config.jump_rate(), config.length, &mut rng, false, |_, _, _| {});
        Ok(Some(if end.side == Side::None { 1.0 } else { 0.0 }))
    })?;
    Ok(est.estimate)
}

/// Report of the diffusive-limit comparison on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusiveLimitReport {
    pub eta: f64,
    pub t: f64,
    pub velocity: Vec2,
    pub grid: Vec<Vec2>,
    pub estimates: Vec<Estimate>,
    pub reference: Vec<f64>,
    pub sup_error: f64,
    /// Largest standard error over the grid.
    pub max_stderr: f64,
    /// First-order Hilbert prediction `sup |(3/(8 mu eta)) v . grad rho(t)|`.
    pub predicted_sup_error: f64,
}

/// Whole-plane process at speed `eta` and rate `2 mu eta^2`, started from
/// `(x, v)` with `v` fixed, compared with free heat evolution of `rho0`.
/// `n_samples` is the total path budget, split evenly over the grid.
#[allow(clippy::too_many_arguments)]
pub fn diffusive_limit_error(
    rho0: &GaussianBump,
    t: f64,
    mu: f64,
    eta: f64,
    n_samples: usize,
    grid: &[Vec2],
    velocity: Vec2,
    seed: u64,
) -> Result<DiffusiveLimitReport> {
    if !(t >= 0.0) || !(mu > 0.0) || !(eta >= 1.0) || grid.is_empty() {
        return Err(LabError::Contract(format!("need t >= 0, mu > 0, eta >= 1 and a nonempty grid (t={t}, mu={mu}, eta={eta})")));
    }
    let d = crate::angular::green_kubo_d(mu)?.d;
    let reference = heat_evolve_free(rho0, t, d, grid)?;
    let per_point = (n_samples / grid.len()).max(1);
    let rate = 2.0 * mu * eta * eta;
    let w0 = -velocity.normalized();
    let mut estimates = Vec::with_capacity(grid.len());
    for (gi, &x) in grid.iter().enumerate() {
        let est = reduce(per_point, |i| {
            if t == 0.0 {
                return Ok(Some(rho0.value(x)));
            }
            let mut rng = stream(seed, &[domain::WHOLE_PLANE, eta.to_bits(), gi as u64, i as u64]);
            // Macroscopic time t at speed eta is arc length eta * t.
            let mut pos = x;
            let mut dir = w0;
            let mut s = 0.0;
            let total = eta * t;
            let arc_rate = rate / eta;
            loop {
                let wait: f64 = Exp1.sample(&mut rng);
                let step = wait / arc_rate;
                if s + step >= total {
                    pos += dir * (total - s);
                    break;
                }
                s += step;
                pos += dir * step;
                dir = deflect(dir, 2.0 * rng.random::<f64>() - 1.0);
            }
            Ok(Some(rho0.value(pos)))
        })?;
        estimates.push(est.estimate);
    }
    let sup_error = estimates.iter().zip(&reference).map(|(e, r)| (e.mean - r).abs()).fold(0.0, f64::max);
    let max_stderr = estimates.iter().map(|e| e.stderr).fold(0.0, f64::max);
    let evolved = rho0.evolved(t, d);
    let predicted_sup_error = grid
        .iter()
        .map(|&x| (3.0 / (8.0 * mu * eta) * velocity.dot(evolved.gradient(x))).abs())
        .fold(0.0, f64::max);
    Ok(DiffusiveLimitReport {
        eta,
        t,
        velocity,
        grid: grid.to_vec(),
        estimates,
        reference,
        sup_error,
        max_stderr,
        predicted_sup_error,
    })
}
