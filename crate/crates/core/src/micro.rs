//! Backward microscopic flow with first-exit stopping, and Monte Carlo
//! estimators of the correlation function and the stationary state.
//!
//! A state `(x, v)` is flowed backward in time, so the ray that is traced
//! moves along `-v`. Leaving through `x1 = 0` reads the left reservoir.

use serde::{Deserialize, Serialize};

use crate::config::{Side, SlabConfig};
use crate::datum::BoundedDatum;
use crate::error::{LabError, Result};
use crate::estimate::{par_reduce, Accumulator, CappedEstimate};
use crate::geometry::{build_field, first_hit, CollisionEvent, DiskId, HitOutcome, ParticleState, ScattererField};
use crate::rng::{domain, stream_key};
use crate::vec2::Vec2;

/// Trajectories with more collisions than this are abandoned and counted.
pub const COLLISION_CAP: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub side: Side,
    /// Time until the boundary was reached, or the horizon if it was not.
    pub tau_elapsed: f64,
    pub boundary_value: Option<f64>,
    /// Position where tracing stopped.
    pub position: Vec2,
    /// Traced direction when tracing stopped (the state velocity is its negative).
    pub direction: Vec2,
    pub capped: bool,
}

impl ExitRecord {
    /// Final state in forward convention.
    pub fn final_state(&self) -> ParticleState {
        ParticleState::new(self.position, -self.direction)
    }
}

/// A recorded backward trajectory. Event times are cumulative and event
/// velocities are those of the traced ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroTrajectory {
    pub initial: ParticleState,
    pub events: Vec<CollisionEvent>,
    pub exit: ExitRecord,
    pub hits: Vec<DiskId>,
}

impl MicroTrajectory {
    /// Contact points, in scattering order.
    pub fn contacts(&self) -> Vec<Vec2> {
        let mut p = self.initial.x;
        let mut dir = -self.initial.v;
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.events.len());
        for ev in &self.events {
            p += dir * (ev.time - t);
            out.push(p);
            t = ev.time;
            dir = ev.v_out;
        }
        out
    }

    /// Vertices of the traced polyline: start, contacts, stopping point.
    pub fn vertices(&self) -> Vec<Vec2> {
        let mut v = vec![self.initial.x];
        v.extend(self.contacts());
        v.push(self.exit.position);
        v
    }
}

/// Traces the ray `x + s w` through `field` for at most `horizon`, calling
/// `on_event` with cumulative-time events. `collisions` carries the count
/// across segments for the cap.
fn trace(
    x: Vec2,
    w: Vec2,
    horizon: f64,
    field: &ScattererField,
    config: &SlabConfig,
    collisions: &mut u64,
    mut on_event: impl FnMut(&CollisionEvent),
) -> Result<ExitRecord> {
    let mut pos = x;
    let mut dir = w;
    let mut t = 0.0;
    let mut last: Option<DiskId> = None;
    loop {
        let remaining = horizon - t;
        if remaining <= 0.0 {
            return Ok(stopped(Side::None, horizon, pos, dir, None, false));
        }
        match first_hit(&ParticleState::new(pos, dir), field, last, remaining)? {
            HitOutcome::Collision(mut ev) => {
                *collisions += 1;
                if *collisions > COLLISION_CAP {
                    return Ok(stopped(Side::None, t, pos, dir, None, true));
                }
                pos += dir * ev.time;
                t += ev.time;
                ev.time = t;
                on_event(&ev);
                dir = ev.v_out;
                last = Some(ev.disk);
            }
            HitOutcome::BoundaryExit { side, time } => {
                let mut p = pos + dir * time;
                p.x = if side == Side::Left { 0.0 } else { config.length };
                return Ok(stopped(side, t + time, p, dir, config.boundary_value(side), false));
            }
            HitOutcome::NoEvent => {
                return Ok(stopped(Side::None, horizon, pos + dir * remaining, dir, None, false));
            }
        }
    }
}

fn stopped(side: Side, tau: f64, position: Vec2, direction: Vec2, value: Option<f64>, capped: bool) -> ExitRecord {
    ExitRecord { side, tau_elapsed: tau, boundary_value: value, position, direction, capped }
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

/// Backward flow `T^{-s}`, `s <= horizon`, stopped at the first boundary hit.
pub fn flow_backward(state: ParticleState, horizon: f64, field: &ScattererField, config: &SlabConfig) -> Result<MicroTrajectory> {
    check_state(&state, config)?;
    if !(horizon > 0.0) {
        return Err(LabError::Contract(format!("horizon must be positive, got {horizon}")));
    }
    let mut events = Vec::new();
    let mut n = 0;
    let exit = trace(state.x, -state.v, horizon, field, config, &mut n, |ev| events.push(*ev))?;
    let hits = events.iter().map(|e| e.disk).collect();
    Ok(MicroTrajectory { initial: state, events, exit, hits })
}

/// Realization index of sample `i` at a phase point; distinct points and
/// purposes get independent environments.
pub fn sample_realization(config: &SlabConfig, purpose: u64, state: &ParticleState, i: u64) -> u64 {
    stream_key(
        config.seed,
        &[domain::REALIZATION, purpose, state.x.x.to_bits(), state.x.y.to_bits(), state.v.x.to_bits(), state.v.y.to_bits(), i],
    )
}

/// Environment refresh policy for the stationary estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StationaryMode {
    /// One environment per sample, followed to exit.
    Fresh,
    /// A new independent environment every backward time `t0`.
    Rerandomized { t0: f64 },
}

impl StationaryMode {
    /// `rerandomized` uses the default refresh time `t0 = eta`.
    pub fn parse(s: &str, config: &SlabConfig) -> Result<Self> {
        match s {
            "fresh" => Ok(StationaryMode::Fresh),
            "rerandomized" => Ok(StationaryMode::Rerandomized { t0: config.eta }),
            other => Err(LabError::InvalidConfig(format!("unknown mode {other:?}, expected fresh|rerandomized"))),
        }
    }
}

/// Result of a microscopic estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MicroEstimate {
    pub value: CappedEstimate,
    /// Fraction of samples whose environment had a center within epsilon of
    /// the starting point before conditioning.
    pub conditioned_fraction: f64,
}

impl MicroEstimate {
    pub fn reliable(&self) -> bool {
        self.value.reliable()
    }
}

#[derive(Default)]
struct MicroAcc {
    acc: Accumulator,
    capped: u64,
    conditioned: u64,
    error: Option<String>,
}

impl MicroAcc {
    fn merge(&mut self, o: &MicroAcc) {
        self.acc.merge(&o.acc);
        self.capped += o.capped;
        self.conditioned += o.conditioned;
        if self.error.is_none() {
            self.error.clone_from(&o.error);
        }
    }

    fn finish(self, n: usize) -> Result<MicroEstimate> {
        if let Some(e) = self.error {
            return Err(LabError::Contract(e));
        }
        Ok(MicroEstimate {
            value: CappedEstimate { estimate: self.acc.estimate(), n_capped: self.capped, n_total: n as u64 },
            conditioned_fraction: self.conditioned as f64 / n.max(1) as f64,
        })
    }
}

enum Sample {
    Value(f64),
    Capped,
}

fn run_samples(n: usize, sample: impl Fn(usize, &mut bool) -> Result<Sample> + Sync + Send) -> Result<MicroEstimate> {
    if n == 0 {
        return Err(LabError::Contract("n_samples must be at least 1".into()));
    }
    par_reduce(
        n,
        |acc: &mut MicroAcc, i| {
            let mut conditioned = false;
            match sample(i, &mut conditioned) {
                Ok(Sample::Value(v)) => acc.acc.push(v),
                Ok(Sample::Capped) => acc.capped += 1,
                Err(e) => {
                    if acc.error.is_none() {
                        acc.error = Some(e.to_string());
                    }
                }
            }
            acc.conditioned += conditioned as u64;
        },
        MicroAcc::merge,
    )
    .finish(n)
}

fn conditioned_field(config: &SlabConfig, realization: u64, origin: Vec2, flag: &mut bool) -> ScattererField {
    let field = build_field(config, realization);
    *flag |= field.any_within(origin, config.epsilon);
    field.conditioned_at(origin)
}

/// Time-dependent correlation function `f_eps(x, v, t)`: the boundary datum
/// if the backward flow exits before `t`, else `f0` at the flowed state.
pub fn estimate_f(state: ParticleState, t: f64, config: &SlabConfig, f0: &BoundedDatum, n_samples: usize) -> Result<MicroEstimate> {
    check_state(&state, config)?;
    if !(t >= 0.0) {
        return Err(LabError::Contract(format!("time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        let v = f0.eval(state.x, state.v)?;
        let mut acc = Accumulator::default();
        (0..n_samples).for_each(|_| acc.push(v));
        return Ok(MicroEstimate {
            value: CappedEstimate { estimate: acc.estimate(), n_capped: 0, n_total: n_samples as u64 },
            conditioned_fraction: 0.0,
        });
    }
    run_samples(n_samples, |i, flag| {
        let r = sample_realization(config, domain::MICRO_SAMPLE, &state, i as u64);
        let field = conditioned_field(config, r, state.x, flag);
        let mut n = 0;
        let exit = trace(state.x, -state.v, t, &field, config, &mut n, |_| {})?;
        if exit.capped {
            return Ok(Sample::Capped);
        }
        Ok(Sample::Value(match exit.boundary_value {
            Some(b) => b,
            None => {
                let s = exit.final_state();
                f0.eval(s.x, s.v)?
            }
        }))
    })
}

/// Stationary state `f_eps^S(x, v)` by exit resummation with the default
/// horizon `10^3 eta`.
pub fn estimate_f_stationary(state: ParticleState, config: &SlabConfig, n_samples: usize, mode: StationaryMode) -> Result<MicroEstimate> {
    estimate_f_stationary_with_horizon(state, config, n_samples, mode, config.default_horizon())
}

pub fn estimate_f_stationary_with_horizon(
    state: ParticleState,
    config: &SlabConfig,
    n_samples: usize,
    mode: StationaryMode,
    horizon: f64,
) -> Result<MicroEstimate> {
    check_state(&state, config)?;
    if let StationaryMode::Rerandomized { t0 } = mode {
        if !(t0 > 0.0) {
            return Err(LabError::InvalidConfig(format!("refresh time must be positive, got {t0}")));
        }
    }
    run_samples(n_samples, |i, flag| {
        let base = sample_realization(config, domain::MICRO_SAMPLE ^ 0x100, &state, i as u64);
        let mut collisions = 0;
        let exit = match mode {
            StationaryMode::Fresh => {
                let field = conditioned_field(config, base, state.x, flag);
                trace(state.x, -state.v, horizon, &field, config, &mut collisions, |_| {})?
            }
            StationaryMode::Rerandomized { t0 } => {
                let mut pos = state.x;
                let mut dir = -state.v;
                let mut elapsed = 0.0;
                let mut segment = 0u64;
                loop {
                    let span = t0.min(horizon - elapsed);
                    let r = stream_key(base, &[segment]);
                    let mut seg_flag = false;
                    let field = conditioned_field(config, r, pos, &mut seg_flag);
                    if segment == 0 {
                        *flag |= seg_flag;
                    }
                    let ex = trace(pos, dir, span, &field, config, &mut collisions, |_| {})?;
                    elapsed += ex.tau_elapsed;
                    if ex.side != Side::None || ex.capped || elapsed >= horizon {
                        break ex;
                    }
                    pos = ex.position;
                    dir = ex.direction;
                    segment += 1;
                }
            }
        };
        Ok(match (exit.capped, exit.boundary_value) {
            (false, Some(b)) => Sample::Value(b),
            _ => Sample::Capped,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(mu: f64, eps: f64) -> SlabConfig {
        SlabConfig::new(1.0, 1.0, 2.0, mu, eps, 2.0, 11).unwrap()
    }

    #[test]
    fn free_backward_flight() {
        let c = cfg(0.0, 0.01);
        let f = build_field(&c, 0);
        let s = ParticleState::new(Vec2::new(0.3, 0.2), Vec2::from_angle(0.4));
        let tr = flow_backward(s, 10.0, &f, &c).unwrap();
        assert!(tr.events.is_empty());
        assert_eq!(tr.exit.side, Side::Left);
        assert_abs_diff_eq!(tr.exit.tau_elapsed, 0.3 / 0.4f64.cos(), epsilon = 1e-14);
        assert_eq!(tr.exit.boundary_value, Some(1.0));
        assert_eq!(tr.exit.position.x, 0.0);
    }

    #[test]
    fn horizon_stops_without_exit() {
        let c = cfg(0.0, 0.01);
        let f = build_field(&c, 0);
        let s = ParticleState::new(Vec2::new(0.5, 0.0), Vec2::new(0.0, 1.0));
        let tr = flow_backward(s, 2.0, &f, &c).unwrap();
        assert_eq!(tr.exit.side, Side::None);
        assert_eq!(tr.exit.tau_elapsed, 2.0);
        assert_abs_diff_eq!(tr.exit.position.y, -2.0, epsilon = 1e-15);
    }

    #[test]
    fn collisions_have_unit_speed_and_increasing_times() {
        let c = cfg(1.0, 0.01);
        let s = ParticleState::new(Vec2::new(0.5, 0.0), Vec2::from_angle(1.0));
        let f = build_field(&c, 4).conditioned_at(s.x);
        let tr = flow_backward(s, 50.0, &f, &c).unwrap();
        assert!(!tr.events.is_empty());
        let mut t = 0.0;
        for ev in &tr.events {
            assert!(ev.time > t);
            t = ev.time;
            assert!((ev.v_out.norm() - 1.0).abs() < 1e-15);
            assert!((ev.v_in.norm() - 1.0).abs() < 1e-15);
        }
        assert_eq!(tr.hits.len(), tr.events.len());
        let contacts = tr.contacts();
        for (ev, p) in tr.events.iter().zip(&contacts) {
            assert_abs_diff_eq!((*p - ev.center).norm(), c.epsilon, epsilon = 1e-12);
        }
    }

    #[test]
    fn estimators_reduce_to_ballistic_values() {
        let c = cfg(0.0, 0.01);
        let f0 = BoundedDatum::constant(7.0);
        let s = ParticleState::new(Vec2::new(0.3, 0.0), Vec2::new(1.0, 0.0));
        let e = estimate_f(s, 1.0, &c, &f0, 16).unwrap();
        assert_eq!(e.value.estimate.mean, 1.0);
        assert_eq!(e.value.estimate.stderr, 0.0);
        let e = estimate_f(s, 0.0, &c, &f0, 4).unwrap();
        assert_eq!(e.value.estimate.mean, 7.0);
        let e = estimate_f(s, 0.2, &c, &f0, 4).unwrap();
        assert_eq!(e.value.estimate.mean, 7.0);
        for mode in [StationaryMode::Fresh, StationaryMode::Rerandomized { t0: 0.05 }] {
            let e = estimate_f_stationary(ParticleState::new(s.x, Vec2::new(-1.0, 0.0)), &c, 8, mode).unwrap();
            assert_eq!(e.value.estimate.mean, 2.0);
            assert_eq!(e.value.n_capped, 0);
        }
    }

    #[test]
    fn constant_boundary_data_give_exact_stationary_value() {
        let c = SlabConfig::new(1.0, 1.5, 1.5, 1.0, 0.01, 2.0, 3).unwrap();
        let s = ParticleState::new(Vec2::new(0.4, 0.0), Vec2::from_angle(2.0));
        for mode in [StationaryMode::Fresh, StationaryMode::Rerandomized { t0: 2.0 }] {
            let e = estimate_f_stationary(s, &c, 64, mode).unwrap();
            assert_eq!(e.value.estimate.mean, 1.5);
            assert_eq!(e.value.estimate.stderr, 0.0);
        }
    }

    #[test]
    fn rejects_states_outside_phase_space() {
        let c = cfg(0.0, 0.01);
        let f = build_field(&c, 0);
        let bad = ParticleState::new(Vec2::new(1.5, 0.0), Vec2::new(1.0, 0.0));
        assert!(flow_backward(bad, 1.0, &f, &c).is_err());
        let bad = ParticleState::new(Vec2::new(0.5, 0.0), Vec2::new(1.0, 1.0));
        assert!(flow_backward(bad, 1.0, &f, &c).is_err());
    }
}
