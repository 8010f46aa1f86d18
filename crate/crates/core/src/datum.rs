//! Bounded functions on phase space (initial data, observables).

use std::fmt;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::vec2::Vec2;

type PhaseFn = dyn Fn(Vec2, Vec2) -> f64 + Send + Sync;

/// A function `g(x, v)` registered together with a sup bound.
///
/// Registration rejects non-finite bounds and probes the function on a coarse
/// phase-space grid; every evaluation is checked against the bound as well.
#[derive(Clone)]
pub struct BoundedDatum {
    f: Arc<PhaseFn>,
    bound: f64,
}

impl fmt::Debug for BoundedDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundedDatum").field("bound", &self.bound).finish_non_exhaustive()
    }
}

impl BoundedDatum {
    pub fn new(bound: f64, f: impl Fn(Vec2, Vec2) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if !bound.is_finite() || bound < 0.0 {
            return Err(LabError::UnboundedDatum(format!("declared bound {bound} is not a finite nonnegative number")));
        }
        let d = BoundedDatum { f: Arc::new(f), bound };
        for i in 0..=8 {
            for j in -4..=4 {
                for k in 0..8 {
                    let x = Vec2::new(i as f64 * 0.125, j as f64);
                    let v = Vec2::from_angle(k as f64 * std::f64::consts::FRAC_PI_4);
                    d.eval(x, v)?;
                }
            }
        }
        Ok(d)
    }

    pub fn constant(c: f64) -> Self {
        BoundedDatum { f: Arc::new(move |_, _| c), bound: c.abs() }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    #[inline]
    pub fn eval(&self, x: Vec2, v: Vec2) -> Result<f64> {
        let y = (self.f)(x, v);
        if y.is_finite() && y.abs() <= self.bound {
            Ok(y)
        } else {
            Err(LabError::UnboundedDatum(format!("value {y} at x={x:?}, v={v:?} exceeds bound {}", self.bound)))
        }
    }
}
