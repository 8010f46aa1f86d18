//! Quenched Poisson hard-disk environments and exact ray–disk queries.
//!
//! The slab `(0, L) x R` is unbounded vertically, so disk centers are
//! generated lazily per square cell of a spatial hash. The content of a cell
//! is a pure function of `(seed, realization, cell)`; caching is only an
//! optimization and concurrent materialization races are harmless.

use std::io::{Read, Write};

use parking_lot::RwLock;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::config::{SlabConfig, Side};
use crate::error::{LabError, Result};
use crate::rng::{self, domain};
use crate::vec2::Vec2;

/// Flight times below this are not re-hits of the disk just left.
pub const DEPARTURE_TOL: f64 = 1e-12;
/// Hits with `|rho| >= 1 - GRAZING_TOL` are misses.
pub const GRAZING_TOL: f64 = 1e-12;
/// Allowed deviation of a direction from unit length.
pub const UNIT_TOL: f64 = 1e-12;
/// Hit times closer than this are ties, broken by center order.
pub const TIE_TOL: f64 = 1e-12;

/// Default hash pitch in units of the disk radius.
pub const DEFAULT_PITCH_FACTOR: f64 = 8.0;

/// Position and unit velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub x: Vec2,
    pub v: Vec2,
}

impl ParticleState {
    pub fn new(x: Vec2, v: Vec2) -> Self {
        ParticleState { x, v }
    }

    pub fn from_angle(x: Vec2, phi: f64) -> Self {
        ParticleState { x, v: Vec2::from_angle(phi) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub ix: i64,
    pub iy: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiskId {
    pub cell: CellKey,
    pub index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub id: DiskId,
    pub center: Vec2,
}

/// Contact of a ray with a disk boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    /// Flight time from the query origin to the contact.
    pub time: f64,
    pub disk: DiskId,
    pub center: Vec2,
    /// Signed impact parameter in units of the radius; equals `sin(alpha)`
    /// with `alpha` the angle from `-v_in` to the outward normal.
    pub impact_parameter: f64,
    pub v_in: Vec2,
    pub v_out: Vec2,
}

impl CollisionEvent {
    fn new(origin: Vec2, v_in: Vec2, time: f64, disk: &Disk, epsilon: f64) -> Self {
        let rho = v_in.cross(disk.center - origin) / epsilon;
        let contact = origin + v_in * time;
        let n = (contact - disk.center).normalized();
        let v_out = specular_reflect(v_in, n);
        debug_assert!(
            ((-v_in).cross(n) - rho).abs() < 1e-6,
            "impact parameter {rho} inconsistent with normal {n:?}"
        );
        CollisionEvent { time, disk: disk.id, center: disk.center, impact_parameter: rho, v_in, v_out }
    }

    pub fn contact(&self, origin: Vec2) -> Vec2 {
        origin + self.v_in * self.time
    }
}

/// Result of [`first_hit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HitOutcome {
    Collision(CollisionEvent),
    BoundaryExit { side: Side, time: f64 },
    NoEvent,
}

/// `v - 2 (n . v) n`, renormalized.
#[inline]
pub fn specular_reflect(v_in: Vec2, n: Vec2) -> Vec2 {
    (v_in - n * (2.0 * n.dot(v_in))).normalized()
}

/// Outgoing direction for impact parameter `rho`: rotation of `v_in` by
/// `pi + 2 asin(rho)`. Agrees with [`specular_reflect`] at the contact normal.
#[inline]
pub fn scatter_by_impact(v_in: Vec2, rho: f64) -> Vec2 {
    v_in.rotated(std::f64::consts::PI + 2.0 * rho.asin())
}

/// Center of the disk met by a ray moving along `v_in` that touches it at
/// `contact` with impact parameter `rho`.
#[inline]
pub fn center_from_contact(contact: Vec2, v_in: Vec2, rho: f64, epsilon: f64) -> Vec2 {
    let cos_alpha = (1.0 - rho * rho).max(0.0).sqrt();
    contact + (v_in * cos_alpha + v_in.perp() * rho) * epsilon
}

enum Source {
    Poisson { realization: u64, count: Option<Poisson<f64>> },
    /// Disk list fixed up front; absent cells are empty.
    Explicit,
}

/// A quenched configuration of disk centers in the slab.
pub struct ScattererField {
    seed: u64,
    length: f64,
    epsilon: f64,
    cell_size: f64,
    source: Source,
    exclusion: Option<Vec2>,
    cells: RwLock<FxHashMap<CellKey, Box<[Disk]>>>,
}

/// A lazy field bound to `(config.seed, realization)` with the default pitch.
pub fn build_field(config: &SlabConfig, realization: u64) -> ScattererField {
    ScattererField::poisson(config, realization, DEFAULT_PITCH_FACTOR * config.epsilon)
}

impl ScattererField {
    /// Lazy Poisson field with an explicit hash pitch (must be `>= 2 epsilon`).
    pub fn poisson(config: &SlabConfig, realization: u64, cell_size: f64) -> Self {
        assert!(cell_size >= 2.0 * config.epsilon, "cell pitch must be at least one disk diameter");
        let mean = config.mu_eps() * cell_size * cell_size;
        let count = (mean > 0.0).then(|| Poisson::new(mean).expect("finite positive Poisson mean"));
        ScattererField {
            seed: config.seed,
            length: config.length,
            epsilon: config.epsilon,
            cell_size,
            source: Source::Poisson { realization, count },
            exclusion: None,
            cells: RwLock::new(FxHashMap::default()),
        }
    }

    /// Field holding exactly `centers`, indexed with pitch `cell_size`.
    pub fn from_centers(config: &SlabConfig, centers: &[Vec2], cell_size: f64) -> Self {
        assert!(cell_size >= 2.0 * config.epsilon, "cell pitch must be at least one disk diameter");
        let mut table: FxHashMap<CellKey, Vec<Disk>> = FxHashMap::default();
        for &c in centers {
            let cell = CellKey { ix: (c.x / cell_size).floor() as i64, iy: (c.y / cell_size).floor() as i64 };
            let list = table.entry(cell).or_default();
            list.push(Disk { id: DiskId { cell, index: list.len() as u32 }, center: c });
        }
        ScattererField {
            seed: config.seed,
            length: config.length,
            epsilon: config.epsilon,
            cell_size,
            source: Source::Explicit,
            exclusion: None,
            cells: RwLock::new(table.into_iter().map(|(k, v)| (k, v.into_boxed_slice())).collect()),
        }
    }

    /// Restricts the field to configurations with no center within
    /// `epsilon` of `origin`.
    pub fn conditioned_at(mut self, origin: Vec2) -> Self {
        self.exclusion = Some(origin);
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Lazy Poisson fields only hold centers inside the slab.
    pub fn confined_to_slab(&self) -> bool {
        matches!(self.source, Source::Poisson { .. })
    }

    pub fn cell_of(&self, p: Vec2) -> CellKey {
        CellKey { ix: (p.x / self.cell_size).floor() as i64, iy: (p.y / self.cell_size).floor() as i64 }
    }

    fn generate(&self, key: CellKey) -> Box<[Disk]> {
        let (realization, count) = match &self.source {
            Source::Poisson { realization, count } => (*realization, count),
            Source::Explicit => return Box::new([]),
        };
        let Some(count) = count else { return Box::new([]) };
        let mut rng = rng::stream(
            self.seed,
            &[domain::FIELD_CELL, realization, key.ix as u64, key.iy as u64],
        );
        let n = count.sample(&mut rng) as usize;
        let x0 = key.ix as f64 * self.cell_size;
        let y0 = key.iy as f64 * self.cell_size;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let cx = x0 + rng.random::<f64>() * self.cell_size;
            let cy = y0 + rng.random::<f64>() * self.cell_size;
            // Thinning to the slab keeps counts Poisson with mean mu_eps |cell ∩ slab|.
            if cx > 0.0 && cx < self.length {
                out.push(Disk {
                    id: DiskId { cell: key, index: out.len() as u32 },
                    center: Vec2::new(cx, cy),
                });
            }
        }
        out.into_boxed_slice()
    }

    /// Runs `f` on the disks of a cell, materializing it on first use.
    /// The exclusion disk is not applied here.
    pub fn with_cell<R>(&self, key: CellKey, f: impl FnOnce(&[Disk]) -> R) -> R {
        if let Some(d) = self.cells.read().get(&key) {
            return f(d);
        }
        let generated = self.generate(key);
        let mut table = self.cells.write();
        let d = table.entry(key).or_insert(generated);
        f(d)
    }

    #[inline]
    fn excluded(&self, c: Vec2) -> bool {
        match self.exclusion {
            Some(o) => (c - o).norm_sq() < self.epsilon * self.epsilon,
            None => false,
        }
    }

    /// Disks whose centers lie in the rectangle, after conditioning.
    pub fn disks_in_window(&self, xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Vec<Disk> {
        let lo = self.cell_of(Vec2::new(xmin, ymin));
        let hi = self.cell_of(Vec2::new(xmax, ymax));
        let mut out = Vec::new();
        for ix in lo.ix..=hi.ix {
            for iy in lo.iy..=hi.iy {
                self.with_cell(CellKey { ix, iy }, |disks| {
                    out.extend(disks.iter().filter(|d| {
                        let c = d.center;
                        c.x >= xmin && c.x < xmax && c.y >= ymin && c.y < ymax && !self.excluded(c)
                    }));
                });
            }
        }
        out
    }

    /// Whether any center (ignoring conditioning) lies within `r` of `p`.
    pub fn any_within(&self, p: Vec2, r: f64) -> bool {
        let lo = self.cell_of(Vec2::new(p.x - r, p.y - r));
        let hi = self.cell_of(Vec2::new(p.x + r, p.y + r));
        (lo.ix..=hi.ix).any(|ix| {
            (lo.iy..=hi.iy).any(|iy| {
                self.with_cell(CellKey { ix, iy }, |d| d.iter().any(|d| (d.center - p).norm_sq() < r * r))
            })
        })
    }

    /// Looks up a disk center by id.
    pub fn center(&self, id: DiskId) -> Option<Vec2> {
        self.with_cell(id.cell, |d| d.get(id.index as usize).map(|d| d.center))
    }

    /// Writes the materialized cells as `cell_x,cell_y,center_x,center_y`.
    pub fn write_dump<W: Write>(&self, w: W) -> Result<()> {
        let mut rows: Vec<Disk> = self.cells.read().values().flat_map(|d| d.iter().copied()).collect();
        rows.sort_by_key(|d| d.id);
        let mut wtr = csv::Writer::from_writer(w);
        for d in rows {
            wtr.serialize(DumpRow { cell_x: d.id.cell.ix, cell_y: d.id.cell.iy, center_x: d.center.x, center_y: d.center.y })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct DumpRow {
    cell_x: i64,
    cell_y: i64,
    center_x: f64,
    center_y: f64,
}

/// Reads a field dump back as a list of centers in file order.
pub fn read_dump<R: Read>(r: R) -> Result<Vec<(CellKey, Vec2)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: DumpRow = row?;
        out.push((CellKey { ix: row.cell_x, iy: row.cell_y }, Vec2::new(row.center_x, row.center_y)));
    }
    Ok(out)
}

#[derive(Clone, Copy)]
struct Candidate {
    time: f64,
    disk: Disk,
}

fn better(a: &Candidate, b: &Option<Candidate>) -> bool {
    match b {
        None => true,
        Some(b) => {
            if (a.time - b.time).abs() <= TIE_TOL {
                (a.disk.center.x, a.disk.center.y) < (b.disk.center.x, b.disk.center.y)
            } else {
                a.time < b.time
            }
        }
    }
}

/// Earliest event along the ray `x + s v`, `s in [0, horizon]`: contact with a
/// disk boundary, crossing of `x1 = 0` or `x1 = L`, or nothing.
///
/// `exclude` is the disk just left; it is ignored for flight times below
/// [`DEPARTURE_TOL`].
pub fn first_hit(
    state: &ParticleState,
    field: &ScattererField,
    exclude: Option<DiskId>,
    horizon: f64,
) -> Result<HitOutcome> {
    let v = state.v;
    let x = state.x;
    if (v.norm() - 1.0).abs() > UNIT_TOL {
        return Err(LabError::Contract(format!("direction {v:?} is not a unit vector")));
    }
    if !(horizon > 0.0) {
        return Err(LabError::Contract(format!("horizon must be positive, got {horizon}")));
    }

    let (t_wall, wall_side) = if v.x < 0.0 {
        (x.x / -v.x, Side::Left)
    } else if v.x > 0.0 {
        ((field.length - x.x) / v.x, Side::Right)
    } else {
        (f64::INFINITY, Side::None)
    };
    let t_max = t_wall.min(horizon);

    let eps = field.epsilon;
    let eps_sq = eps * eps;
    let mut best: Option<Candidate> = None;
    let test_cell = |disks: &[Disk], best: &mut Option<Candidate>| {
        for disk in disks {
            let d = disk.center - x;
            let b = d.dot(v);
            let dd = d.norm_sq();
            if b <= 0.0 && dd > eps_sq {
                continue;
            }
            let rho = v.cross(d) / eps;
            if rho.abs() >= 1.0 - GRAZING_TOL {
                continue;
            }
            let t = b - eps * (1.0 - rho * rho).sqrt();
            if Some(disk.id) == exclude {
                if t <= DEPARTURE_TOL {
                    continue;
                }
            } else if t < -DEPARTURE_TOL {
                continue;
            }
            let t = t.max(0.0);
            if t >= t_max || field.excluded(disk.center) {
                continue;
            }
            let cand = Candidate { time: t, disk: *disk };
            if better(&cand, best) {
                *best = Some(cand);
            }
        }
    };

    // Grid traversal. Every disk whose contact point lies in a traversed cell
    // has its center in that cell's 3x3 neighborhood (pitch >= 2 epsilon).
    let h = field.cell_size;
    let mut cell = field.cell_of(x);
    let (step_x, mut next_x, dx) = axis_setup(x.x, v.x, h, cell.ix);
    let (step_y, mut next_y, dy) = axis_setup(x.y, v.y, h, cell.iy);
    let mut recent: [Option<CellKey>; 4] = [None; 4];
    let mut slot = 0usize;
    loop {
        for ox in -1..=1 {
            for oy in -1..=1 {
                let key = CellKey { ix: cell.ix + ox, iy: cell.iy + oy };
                let seen = recent.iter().flatten().any(|r| (r.ix - key.ix).abs() <= 1 && (r.iy - key.iy).abs() <= 1);
                if !seen {
                    field.with_cell(key, |disks| test_cell(disks, &mut best));
                }
            }
        }
        recent[slot % 4] = Some(cell);
        slot += 1;
        let cell_exit = next_x.min(next_y);
        if let Some(b) = &best {
            if b.time <= cell_exit {
                break;
            }
        }
        if cell_exit >= t_max {
            break;
        }
        if next_x < next_y {
            cell.ix += step_x;
            next_x += dx;
        } else {
            cell.iy += step_y;
            next_y += dy;
        }
    }

    if let Some(c) = best {
        return Ok(HitOutcome::Collision(CollisionEvent::new(x, v, c.time, &c.disk, eps)));
    }
    if t_wall <= horizon {
        Ok(HitOutcome::BoundaryExit { side: wall_side, time: t_wall })
    } else {
        Ok(HitOutcome::NoEvent)
    }
}

fn axis_setup(x: f64, v: f64, h: f64, i: i64) -> (i64, f64, f64) {
    if v > 0.0 {
        (1, ((i + 1) as f64 * h - x) / v, h / v)
    } else if v < 0.0 {
        (-1, (i as f64 * h - x) / v, -h / v)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}
