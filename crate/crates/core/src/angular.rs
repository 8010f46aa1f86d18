//! The collision operator on the circle of velocities.
//!
//! `K` averages a function over hard-disk scattering outcomes and
//! `L = 2 mu (K - I)`. Both are diagonal in Fourier modes, with `K`
//! multipliers computed by Gauss–Legendre quadrature of the kernel.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::config::SlabConfig;
use crate::error::{LabError, Result};
use crate::quadrature::{composite, gauss_legendre, over_breaks};

pub const DEFAULT_M: usize = 256;
pub const DEFAULT_K_MAX: usize = 64;
/// Largest supported grid; kernel multipliers are tabulated up to `MAX_GRID / 2`.
pub const MAX_GRID: usize = 2048;
/// Nodes of the Gauss–Legendre rule used on each kernel panel.
pub const KERNEL_RULE_NODES: usize = 64;
/// Stopping threshold for the Neumann series of `L^{-1}`.
pub const NEUMANN_TOL: f64 = 1e-12;
/// Mean tolerated by the solvability check of `L^{-1}`.
pub const SOLVABILITY_TOL: f64 = 1e-10;
/// Nodes with `|cos phi|` below this are excluded from the remainder exponent.
pub const GRAZING_EXCLUSION: f64 = 1e-6;

fn kernel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(KERNEL_RULE_NODES))
}

/// `(1/2) ∫ cos(a) cos(k (pi - 2a)) da` over `(-pi/2, pi/2)`. The sine part
/// of the mode vanishes by symmetry, so this is the full multiplier.
fn kernel_multiplier(k: usize) -> f64 {
    // One panel per 16 oscillations keeps the 64-point rule at full accuracy.
    let panels = k / 16 + 1;
    let kf = k as f64;
    0.5 * composite(-PI / 2.0, PI / 2.0, panels, kernel_rule(), |a| a.cos() * (kf * (PI - 2.0 * a)).cos())
}

fn multipliers() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=MAX_GRID / 2).map(kernel_multiplier).collect())
}

/// Multiplier of Fourier mode `k` under `K`, by quadrature.
pub fn k_mode_eigenvalue(k: usize) -> Result<f64> {
    if k > DEFAULT_K_MAX {
        return Err(LabError::ModeOutOfRange { k, k_max: DEFAULT_K_MAX });
    }
    Ok(multipliers()[k])
}

/// `-1 / (4k^2 - 1)`; equals 1 at `k = 0`.
pub fn k_mode_closed_form(k: usize) -> f64 {
    let k = k as f64;
    -1.0 / (4.0 * k * k - 1.0)
}

/// Mode value of `-L`: `2 mu (1 - lambda_k)`, i.e. `2 mu (1 + 1/(4k^2-1))` for `k >= 1`.
pub fn minus_l_mode_value(k: usize, mu: f64) -> Result<f64> {
    Ok(2.0 * mu * (1.0 - k_mode_eigenvalue(k)?))
}

/// Fourier coefficients: `f(phi) = sum_k cos[k] cos(k phi) + sin[k] sin(k phi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl FourierSeries {
    pub fn k_max(&self) -> usize {
        self.cos.len() - 1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FourierSeries = serde_json::from_str(s)?;
        if f.cos.is_empty() || f.cos.len() != f.sin.len() {
            return Err(LabError::Contract("cos and sin coefficient lists must be nonempty and equally long".into()));
        }
        Ok(f)
    }

    pub fn eval(&self, phi: f64) -> f64 {
        let mut s = 0.0;
        for k in 0..self.cos.len() {
            let kp = k as f64 * phi;
            s += self.cos[k] * kp.cos() + self.sin[k] * kp.sin();
        }
        s
    }
}

/// A function on the circle sampled at `M` uniform angles
/// `phi_j = -pi + 2 pi j / M`.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularFunction {
    values: Vec<f64>,
}

struct Tables {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

fn tables(m: usize) -> Tables {
    let cos = (0..m).map(|j| (TAU * j as f64 / m as f64).cos()).collect();
    let sin = (0..m).map(|j| (TAU * j as f64 / m as f64).sin()).collect();
    Tables { cos, sin }
}

fn check_grid(m: usize) -> Result<()> {
    if m < 4 || !m.is_multiple_of(2) || m > MAX_GRID {
        return Err(LabError::InvalidConfig(format!("angular grid size must be even in [4, {MAX_GRID}], got {m}")));
    }
    Ok(())
}

impl AngularFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_grid(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Contract("angular function values must be finite".into()));
        }
        Ok(AngularFunction { values })
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        check_grid(m)?;
        Self::new((0..m).map(|j| f(Self::angle_of(m, j))).collect())
    }

    pub fn constant(m: usize, c: f64) -> Result<Self> {
        Self::from_fn(m, |_| c)
    }

    /// `cos(phi)`, the horizontal velocity component.
    pub fn v1(m: usize) -> Result<Self> {
        Self::from_fn(m, f64::cos)
    }

    pub fn v2(m: usize) -> Result<Self> {
        Self::from_fn(m, f64::sin)
    }

    fn angle_of(m: usize, j: usize) -> f64 {
        -PI + TAU * j as f64 / m as f64
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.m()).map(|j| Self::angle_of(self.m(), j)).collect()
    }

    /// Normalized angular average (trapezoid rule).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.m() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Normalized average of the pointwise product.
    pub fn inner(&self, other: &AngularFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() / self.m() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> AngularFunction {
        AngularFunction { values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scaled(&self, a: f64) -> AngularFunction {
        self.map(|v| a * v)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &AngularFunction, b: f64) -> AngularFunction {
        assert_eq!(self.m(), other.m(), "grid mismatch");
        AngularFunction { values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect() }
    }

    /// Coefficients up to mode `k_max <= M/2`.
    pub fn fourier(&self, k_max: usize) -> Result<FourierSeries> {
        let m = self.m();
        if k_max > m / 2 {
            return Err(LabError::ModeOutOfRange { k: k_max, k_max: m / 2 });
        }
        let t = tables(m);
        let mut cos = vec![0.0; k_max + 1];
        let mut sin = vec![0.0; k_max + 1];
        for k in 0..=k_max {
            let (mut c, mut s) = (0.0, 0.0);
            for (j, f) in self.values.iter().enumerate() {
                let idx = (k * j) % m;
                c += f * t.cos[idx];
                s += f * t.sin[idx];
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let norm = if k == 0 || 2 * k == m { 1.0 } else { 2.0 } / m as f64;
            cos[k] = sign * norm * c;
            sin[k] = if k == 0 || 2 * k == m { 0.0 } else { sign * norm * s };
        }
        Ok(FourierSeries { cos, sin })
    }

    /// Samples a Fourier series on an `m`-point grid.
    pub fn from_fourier(m: usize, series: &FourierSeries) -> Result<Self> {
        check_grid(m)?;
        if series.k_max() > m / 2 {
            return Err(LabError::ModeOutOfRange { k: series.k_max(), k_max: m / 2 });
        }
        let t = tables(m);
        let mut values = vec![0.0; m];
        for (k, (a, b)) in series.cos.iter().zip(&series.sin).enumerate() {
            if *a == 0.0 && *b == 0.0 {
                continue;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for (j, v) in values.iter_mut().enumerate() {
                let idx = (k * j) % m;
                *v += sign * (a * t.cos[idx] + b * t.sin[idx]);
            }
        }
        Ok(AngularFunction { values })
    }

    /// Trigonometric interpolant at an arbitrary angle.
    pub fn eval(&self, phi: f64) -> f64 {
        self.fourier(self.m() / 2).expect("full band is always in range").eval(phi)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["angle", "value"])?;
        for (phi, v) in self.angles().iter().zip(&self.values) {
            wtr.serialize((phi, v))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut values = Vec::new();
        for row in rdr.deserialize() {
            let (_, v): (f64, f64) = row?;
            values.push(v);
        }
        Self::new(values)
    }
}

fn apply_multipliers(g: &AngularFunction, mult: impl Fn(usize) -> f64) -> AngularFunction {
    let m = g.m();
    let mut s = g.fourier(m / 2).expect("full band is always in range");
    for k in 0..s.cos.len() {
        let l = mult(k);
        s.cos[k] *= l;
        s.sin[k] *= l;
    }
    AngularFunction::from_fourier(m, &s).expect("grid already validated")
}

/// `(K g)(v) = (1/2) ∫ cos(a) g(R_{pi - 2a} v) da` over `a in (-pi/2, pi/2)`.
pub fn k_apply(g: &AngularFunction) -> AngularFunction {
    let table = multipliers();
    apply_multipliers(g, |k| table[k])
}

/// `L g = 2 mu (K g - g)`.
pub fn l_apply(g: &AngularFunction, mu: f64) -> AngularFunction {
    k_apply(g).combine(2.0 * mu, g, -2.0 * mu)
}

/// `L^{-1} g = -(1/2mu) sum_n K^n g` on zero-mean `g`.
///
/// The mean is checked against [`SOLVABILITY_TOL`] and then projected out, so
/// the result has zero mean. The series is summed mode-wise; it stops when
/// the absolute coefficient sum of the increment, an upper bound on its sup
/// norm, falls below [`NEUMANN_TOL`].
pub fn l_inverse(g: &AngularFunction, mu: f64) -> Result<AngularFunction> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(LabError::InvalidConfig(format!("L^-1 needs mu > 0, got {mu}")));
    }
    let mean = g.mean();
    if mean.abs() >= SOLVABILITY_TOL {
        return Err(LabError::Solvability { mean });
    }
    let m = g.m();
    let table = multipliers();
    let mut term = g.fourier(m / 2)?;
    term.cos[0] = 0.0;
    let mut sum = term.clone();
    for _ in 0..10_000 {
        let mut size = 0.0;
        for k in 1..term.cos.len() {
            term.cos[k] *= table[k];
            term.sin[k] *= table[k];
            sum.cos[k] += term.cos[k];
            sum.sin[k] += term.sin[k];
            size += term.cos[k].abs() + term.sin[k].abs();
        }
        if size < NEUMANN_TOL {
            break;
        }
    }
    Ok(AngularFunction::from_fourier(m, &sum)?.scaled(-1.0 / (2.0 * mu)))
}

/// Green–Kubo diffusion coefficient and matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenKubo {
    pub d: f64,
    /// `D_ij = <v_i (-L)^{-1} v_j>` with the normalized angular average.
    pub matrix: [[f64; 2]; 2],
}

pub fn green_kubo_d(mu: f64) -> Result<GreenKubo> {
    let v = [AngularFunction::v1(DEFAULT_M)?, AngularFunction::v2(DEFAULT_M)?];
    let u = [l_inverse(&v[0], mu)?.scaled(-1.0), l_inverse(&v[1], mu)?.scaled(-1.0)];
    let mut matrix = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            matrix[i][j] = v[i].inner(&u[j]);
        }
    }
    Ok(GreenKubo { d: 0.5 * (matrix[0][0] + matrix[1][1]), matrix })
}

/// Stationary Hilbert expansion: `h0` linear, `h1 = grad * L^{-1} v1`, `h2 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct HilbertStationary {
    pub rho1: f64,
    pub rho2: f64,
    pub length: f64,
    pub mu: f64,
    pub eta: f64,
    pub h1: AngularFunction,
}

impl HilbertStationary {
    pub fn h0(&self, x1: f64) -> f64 {
        (self.rho1 * (self.length - x1) + self.rho2 * x1) / self.length
    }

    pub fn gradient(&self) -> f64 {
        (self.rho2 - self.rho1) / self.length
    }

    /// The second-order coefficient vanishes identically for this problem.
    pub fn h2_is_zero(&self) -> bool {
        true
    }
}

pub fn hilbert_stationary(config: &SlabConfig) -> Result<HilbertStationary> {
    let grad = (config.rho2 - config.rho1) / config.length;
    let h1 = l_inverse(&AngularFunction::v1(DEFAULT_M)?, config.mu)?.scaled(grad);
    Ok(HilbertStationary {
        rho1: config.rho1,
        rho2: config.rho2,
        length: config.length,
        mu: config.mu,
        eta: config.eta,
        h1,
    })
}

/// Which half of the velocity circle a remainder slice covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocitySign {
    Positive,
    Negative,
}

/// Remainder on the nodes with the requested sign of `v1`; other nodes are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RemainderSlice {
    pub values: AngularFunction,
    /// Normalized angular measure of nodes filled by interpolation.
    pub excluded_measure: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub eta: f64,
    /// `L2((0, L) x S^1)` norm with the unnormalized angle measure.
    pub l2_norm: f64,
    pub excluded_measure: f64,
    /// Change of the norm when the mode truncation is doubled.
    pub truncation_change: f64,
}

struct RemainderModel {
    series: FourierSeries,
    /// Mode values of `L`, all `<= 0`.
    rates: Vec<f64>,
    eta: f64,
    length: f64,
}

impl RemainderModel {
    fn new(config: &SlabConfig, k_max: usize) -> Result<Self> {
        let h = hilbert_stationary(config)?;
        let series = h.h1.fourier(k_max)?;
        let rates = (0..=k_max).map(|k| 2.0 * config.mu * (multipliers()[k] - 1.0)).collect();
        Ok(RemainderModel { series, rates, eta: config.eta, length: config.length })
    }

    /// `-(exp(s L) h1)(phi)` with `s = eta x1 / v1` (`v1 > 0`) or
    /// `eta (x1 - L) / v1` (`v1 < 0`).
    fn value(&self, x1: f64, phi: f64) -> f64 {
        let c = phi.cos();
        let s = if c > 0.0 { self.eta * x1 / c } else { self.eta * (x1 - self.length) / c };
        let mut r = 0.0;
        for k in 0..self.series.cos.len() {
            let (a, b) = (self.series.cos[k], self.series.sin[k]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let kp = k as f64 * phi;
            r += (s * self.rates[k]).exp() * (a * kp.cos() + b * kp.sin());
        }
        -r
    }

    /// `∫_0^L R(x, phi)^2 dx` with panels graded toward the inflow wall.
    fn x_integral(&self, phi: f64, mu: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
        let c = phi.cos().abs();
        let decay = c / (self.eta * 2.0 * mu * (1.0 - multipliers()[1]));
        let mut breaks = vec![0.0];
        let mut b = decay / 64.0;
        while b < self.length {
            breaks.push(b);
            b *= 2.0;
        }
        breaks.push(self.length);
        let inflow_left = phi.cos() > 0.0;
        over_breaks(&breaks, rule, |y| {
            let x = if inflow_left { y } else { self.length - y };
            self.value(x, phi).powi(2)
        })
    }
}

fn grazing(phi: f64) -> bool {
    phi.cos().abs() < GRAZING_EXCLUSION
}

/// Fills excluded nodes by linear interpolation between the nearest
/// included neighbours.
fn interpolate_excluded(values: &mut [f64], excluded: &[bool]) {
    let m = values.len();
    for j in 0..m {
        if !excluded[j] {
            continue;
        }
        let mut lo = 1;
        while excluded[(j + m - lo) % m] {
            lo += 1;
        }
        let mut hi = 1;
        while excluded[(j + hi) % m] {
            hi += 1;
        }
        let (a, b) = (values[(j + m - lo) % m], values[(j + hi) % m]);
        values[j] = a + (b - a) * lo as f64 / (lo + hi) as f64;
    }
}

/// Explicit stationary remainder at `x1` on the half circle `sign`.
pub fn stationary_remainder(config: &SlabConfig, x1: f64, sign: VelocitySign) -> Result<RemainderSlice> {
    if !(0.0..=config.length).contains(&x1) {
        return Err(LabError::Contract(format!("x1 = {x1} outside [0, L]")));
    }
    let model = RemainderModel::new(config, DEFAULT_K_MAX)?;
    let m = DEFAULT_M;
    let angles: Vec<f64> = (0..m).map(|j| AngularFunction::angle_of(m, j)).collect();
    let excluded: Vec<bool> = angles.iter().map(|&p| grazing(p)).collect();
    let mut values: Vec<f64> = angles.iter().zip(&excluded).map(|(&p, &ex)| if ex { 0.0 } else { model.value(x1, p) }).collect();
    interpolate_excluded(&mut values, &excluded);
    let keep = |p: f64| match sign {
        VelocitySign::Positive => p.cos() > 0.0,
        VelocitySign::Negative => p.cos() < 0.0,
    };
    for (v, &p) in values.iter_mut().zip(&angles) {
        if !keep(p) && !grazing(p) {
            *v = 0.0;
        }
    }
    let n_ex = excluded.iter().filter(|&&e| e).count();
    Ok(RemainderSlice { values: AngularFunction::new(values)?, excluded_measure: n_ex as f64 / m as f64 })
}

fn remainder_norm_with(config: &SlabConfig, k_max: usize) -> Result<(f64, f64)> {
    let model = RemainderModel::new(config, k_max)?;
    let rule = gauss_legendre(20);
    let m = DEFAULT_M;
    let angles: Vec<f64> = (0..m).map(|j| AngularFunction::angle_of(m, j)).collect();
    let excluded: Vec<bool> = angles.iter().map(|&p| grazing(p)).collect();
    let mut per_node: Vec<f64> = angles
        .iter()
        .zip(&excluded)
        .map(|(&p, &ex)| if ex { 0.0 } else { model.x_integral(p, config.mu, &rule) })
        .collect();
    interpolate_excluded(&mut per_node, &excluded);
    let total: f64 = per_node.iter().sum::<f64>() * TAU / m as f64;
    let n_ex = excluded.iter().filter(|&&e| e).count();
    Ok((total.sqrt(), n_ex as f64 / m as f64))
}

/// `||R||_2` over `(0, L) x S^1`.
pub fn remainder_norm(config: &SlabConfig) -> Result<RemainderReport> {
    let (l2_norm, excluded_measure) = remainder_norm_with(config, DEFAULT_K_MAX)?;
    let (doubled, _) = remainder_norm_with(config, (2 * DEFAULT_K_MAX).min(DEFAULT_M / 2))?;
    Ok(RemainderReport { eta: config.eta, l2_norm, excluded_measure, truncation_change: (doubled - l2_norm).abs() })
}
