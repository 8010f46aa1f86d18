//! Kinetic transport lab for the Lorentz gas in a slab.
//!
//! Three tiers describe the same boundary-value problem: deterministic
//! billiards in a random array of hard disks ([`micro`]), the linear Boltzmann
//! jump process ([`kinetic`], [`angular`]) and the heat equation ([`heat`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angular;
pub mod config;
pub mod datum;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod heat;
pub mod kinetic;
pub mod micro;
pub mod profile;
pub mod quadrature;
pub mod rng;
pub mod vec2;

pub use config::{Side, SlabConfig};
pub use error::{LabError, Result};
pub use estimate::{CappedEstimate, Estimate};
pub use geometry::{first_hit, specular_reflect, HitOutcome, ParticleState, ScattererField};
pub use vec2::Vec2;
