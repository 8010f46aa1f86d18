use std::fs::File;
use std::path::{Path, PathBuf};

use lorentz_core::angular::{green_kubo_d, hilbert_stationary, remainder_norm, stationary_remainder, VelocitySign};
use lorentz_core::diagnostics::{pathology_counts, scaling_fit, PathologyReport, PathologySource};
use lorentz_core::heat::{slab_survival, GaussianBump, HeatParams};
use lorentz_core::kinetic::{diffusive_limit_error, kinetic_profile, survival_probability};
use lorentz_core::micro::{estimate_f_stationary, StationaryMode};
use lorentz_core::profile::{build_profile, Profile, ProfileGrid};
use lorentz_core::{Result, SlabConfig, Vec2};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config_file::FileSpec;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check { name: name.into(), pass, detail }
}

pub struct Outcome {
    pub results: Value,
    pub checks: Vec<Check>,
}

/// Resolved inputs of one run.
pub struct Context {
    pub spec: FileSpec,
    pub config: SlabConfig,
    pub out: PathBuf,
    pub sweep_epsilon: Option<Vec<f64>>,
    pub sweep_eta: Option<Vec<f64>>,
    pub mode: StationaryMode,
    pub source: PathologySource,
}

impl Context {
    fn samples(&self, default: usize) -> usize {
        self.spec.samples.unwrap_or(default)
    }

    fn etas(&self, default: &[f64]) -> Vec<f64> {
        self.sweep_eta.clone().unwrap_or_else(|| if default.is_empty() { vec![self.config.eta] } else { default.to_vec() })
    }

    fn grid(&self, default_samples: usize) -> ProfileGrid {
        ProfileGrid { bins: self.spec.bins, angles: self.spec.angles, samples_per_bin: self.samples(default_samples) }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Profile file name: `profile.csv` for a single eta, else one per eta.
fn profile_name(eta: f64, sweep: bool) -> String {
    if sweep {
        format!("profile_eta{eta}.csv")
    } else {
        "profile.csv".into()
    }
}

/// Density stays between the reservoir values up to sampling noise.
fn max_principle(p: &Profile, c: &SlabConfig) -> Check {
    let (lo, hi) = (c.rho1.min(c.rho2), c.rho1.max(c.rho2));
    let worst = p
        .rows
        .iter()
        .map(|r| ((lo - r.density).max(r.density - hi) / r.density_stderr.max(f64::MIN_POSITIVE)).max(0.0))
        .fold(0.0, f64::max);
    check("density within reservoir range", worst < 5.0, format!("eta={}: worst excursion {worst:.2} sd", p.eta))
}

fn reliability(p: &Profile) -> Check {
    let worst = p.rows.iter().map(|r| r.capped_fraction).fold(0.0, f64::max);
    check("capped fraction", p.reliable(), format!("eta={}: max capped fraction {worst:.2e}", p.eta))
}

fn profile_summary(p: &Profile, c: &SlabConfig) -> Value {
    let (j, se) = p.mean_flux();
    json!({
        "eta": p.eta,
        "l2_from_linear": p.l2_distance(c.length, |x| lorentz_core::heat::stationary_profile(c, x)),
        "mean_flux": j,
        "mean_flux_stderr": se,
        "max_pairwise_flux_z": p.max_pairwise_flux_z(),
    })
}

pub fn gk(ctx: &Context) -> Result<Outcome> {
    #[derive(Serialize)]
    struct Row {
        mu: f64,
        d: f64,
        d11: f64,
        d22: f64,
        d12: f64,
        d21: f64,
        expected: f64,
    }
    let mut mus = vec![0.5, 1.0, 2.0];
    if ctx.config.mu > 0.0 && !mus.contains(&ctx.config.mu) {
        mus.push(ctx.config.mu);
        mus.sort_by(f64::total_cmp);
    }
    let mut rows = Vec::new();
    for mu in mus {
        let g = green_kubo_d(mu)?;
        let m = g.matrix;
        rows.push(Row { mu, d: g.d, d11: m[0][0], d22: m[1][1], d12: m[0][1], d21: m[1][0], expected: 3.0 / (16.0 * mu) });
    }
    write_rows(&ctx.path("gk.csv"), &rows)?;
    let err = rows.iter().map(|r| (r.d - r.expected).abs()).fold(0.0, f64::max);
    let off = rows.iter().map(|r| r.d12.abs().max(r.d21.abs())).fold(0.0, f64::max);
    Ok(Outcome {
        results: json!({ "rows": rows.iter().map(|r| json!({"mu": r.mu, "d": r.d, "offdiag": r.d12})).collect::<Vec<_>>() }),
        checks: vec![
            check("D = 3/(16 mu)", err < 1e-8, format!("max error {err:.2e}")),
            check("off-diagonal vanishes", off < 1e-10, format!("max |D12| {off:.2e}")),
        ],
    })
}

pub fn profile_kinetic(ctx: &Context) -> Result<Outcome> {
    let etas = ctx.etas(&[]);
    let grid = ctx.grid(100_000);
    let mut results = Vec::new();
    let mut checks = Vec::new();
    for &eta in &etas {
        let c = ctx.config.with_eta(eta)?;
        let p = kinetic_profile(&c, &grid)?;
        p.save_csv(&ctx.path(&profile_name(eta, etas.len() > 1)))?;
        checks.push(reliability(&p));
        checks.push(max_principle(&p, &c));
        results.push(profile_summary(&p, &c));
    }
    Ok(Outcome { results: json!({ "grid": grid, "profiles": results }), checks })
}

pub fn profile_micro(ctx: &Context) -> Result<Outcome> {
    let etas = ctx.etas(&[]);
    let grid = ctx.grid(2_000);
    let mut results = Vec::new();
    let mut checks = Vec::new();
    for &eta in &etas {
        let c = ctx.config.with_eta(eta)?;
        let p = build_profile(&c, &grid, |s, n| estimate_f_stationary(s, &c, n, ctx.mode).map(|m| m.value))?;
        p.save_csv(&ctx.path(&profile_name(eta, etas.len() > 1)))?;
        checks.push(reliability(&p));
        checks.push(max_principle(&p, &c));
        results.push(profile_summary(&p, &c));
    }
    Ok(Outcome { results: json!({ "grid": grid, "mode": ctx.mode, "profiles": results }), checks })
}

pub fn fick(ctx: &Context) -> Result<Outcome> {
    #[derive(Serialize)]
    struct Row {
        eta: f64,
        x_center: f64,
        flux_x: f64,
        flux_stderr: f64,
        fick_flux: f64,
        z: f64,
    }
    let etas = ctx.etas(&[]);
    let grid = ctx.grid(100_000);
    let d = green_kubo_d(ctx.config.mu)?.d;
    let c0 = &ctx.config;
    // Flux is signed along +x1; Fick predicts -D grad rho.
    let fick_flux = -d * (c0.rho2 - c0.rho1) / c0.length;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    let mut checks = Vec::new();
    for &eta in &etas {
        let c = c0.with_eta(eta)?;
        let p = kinetic_profile(&c, &grid)?;
        for r in &p.rows {
            rows.push(Row { eta, x_center: r.x_center, flux_x: r.flux_x, flux_stderr: r.flux_stderr, fick_flux, z: (r.flux_x - fick_flux) / r.flux_stderr });
        }
        let (j, _) = p.mean_flux();
        let sign_ok = c.rho1 == c.rho2 || j.signum() == fick_flux.signum();
        checks.push(check("flux runs down the density gradient", sign_ok, format!("eta={eta}: mean flux {j:.5}, Fick {fick_flux:.5}")));
        checks.push(reliability(&p));
        results.push(profile_summary(&p, &c));
    }
    write_rows(&ctx.path("fick.csv"), &rows)?;
    Ok(Outcome { results: json!({ "d": d, "fick_flux": fick_flux, "profiles": results }), checks })
}

pub fn diffusive_limit(ctx: &Context) -> Result<Outcome> {
    #[derive(Serialize)]
    struct Row {
        eta: f64,
        x1: f64,
        estimate: f64,
        stderr: f64,
        reference: f64,
    }
    let bump = GaussianBump { amplitude: 1.0, center: Vec2::ZERO, sigma: 0.5 };
    let grid: Vec<Vec2> = (0..9).map(|i| Vec2::new(-1.6 + 0.4 * i as f64, 0.0)).collect();
    let etas = ctx.etas(&[10.0, 20.0]);
    let n = ctx.samples(1_000_000);
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &eta in &etas {
        let r = diffusive_limit_error(&bump, 1.0, ctx.config.mu, eta, n, &grid, Vec2::new(1.0, 0.0), ctx.config.seed)?;
        for ((x, e), refv) in r.grid.iter().zip(&r.estimates).zip(&r.reference) {
            rows.push(Row { eta, x1: x.x, estimate: e.mean, stderr: e.stderr, reference: *refv });
        }
        errors.push(json!({ "eta": eta, "sup_error": r.sup_error, "max_stderr": r.max_stderr, "predicted_sup_error": r.predicted_sup_error }));
    }
    write_rows(&ctx.path("diffusive_limit.csv"), &rows)?;
    let sup: Vec<f64> = errors.iter().map(|e| e["sup_error"].as_f64().unwrap_or(f64::NAN)).collect();
    let decreasing = sup.windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome {
        results: json!({ "errors": errors }),
        checks: vec![check("error decreases with eta", decreasing, format!("sup errors {sup:?}"))],
    })
}

pub fn survival(ctx: &Context) -> Result<Outcome> {
    #[derive(Serialize)]
    struct Row {
        x1: f64,
        survival: f64,
        stderr: f64,
        slab_series: f64,
    }
    let c = &ctx.config;
    let t = c.eta;
    let n = ctx.samples(100_000);
    // The jump process runs at speed 1 with rate 2 mu eta, so its diffusivity is D / eta.
    let params = HeatParams::new(green_kubo_d(c.mu)?.d / c.eta, c.length)?;
    let mut rows = Vec::new();
    for i in 1..=9 {
        let x1 = c.length * i as f64 / 10.0;
        let e = survival_probability(Vec2::new(x1, 0.0), t, c, n)?;
        rows.push(Row { x1, survival: e.mean, stderr: e.stderr, slab_series: slab_survival(x1, t, &params)? });
    }
    write_rows(&ctx.path("survival.csv"), &rows)?;
    let upper = rows.iter().map(|r| r.survival + 3.0 * r.stderr).fold(0.0, f64::max);
    let mid = &rows[4];
    Ok(Outcome {
        results: json!({ "t": t, "max_upper": upper, "center_z_vs_series": (mid.survival - mid.slab_series) / mid.stderr }),
        checks: vec![check("survival bounded away from one", upper < 1.0, format!("max estimate + 3 sd = {upper:.4}"))],
    })
}

pub fn pathologies(ctx: &Context) -> Result<Outcome> {
    let eps = ctx.sweep_epsilon.clone().unwrap_or_else(|| vec![1e-2, 3e-3, 1e-3, 3e-4]);
    let t = 1.0;
    let n = ctx.samples(100_000);
    let mut reports = Vec::new();
    for &e in &eps {
        let c = ctx.config.with_epsilon(e)?;
        reports.push(PathologyReport::new(&c, t, &pathology_counts(&c, t, n, ctx.source)?));
    }
    let points: Vec<(f64, f64, f64)> = reports.iter().map(|r| (r.epsilon, r.memory_freq, r.memory_stderr)).collect();
    let fit = if points.len() >= 3 { scaling_fit(&points).ok() } else { None };
    let doc = json!({ "source": ctx.source, "t": t, "reports": reports, "fit": fit });
    std::fs::write(ctx.path("pathologies.json"), serde_json::to_string_pretty(&doc)?)?;
    let mut checks = Vec::new();
    if let Some(f) = fit {
        checks.push(check("memory frequency vanishes with epsilon", f.exponent - f.exponent_ci >= 0.45, format!("exponent {:.3} ± {:.3}", f.exponent, f.exponent_ci)));
    }
    Ok(Outcome { results: doc, checks })
}

pub fn hilbert_remainder(ctx: &Context) -> Result<Outcome> {
    #[derive(Serialize)]
    struct Row {
        eta: f64,
        l2_norm: f64,
        excluded_measure: f64,
        truncation_change: f64,
    }
    let etas = ctx.etas(&[10.0, 40.0, 160.0]);
    let mut rows = Vec::new();
    for &eta in &etas {
        let r = remainder_norm(&ctx.config.with_eta(eta)?)?;
        rows.push(Row { eta, l2_norm: r.l2_norm, excluded_measure: r.excluded_measure, truncation_change: r.truncation_change });
    }
    write_rows(&ctx.path("remainder.csv"), &rows)?;
    let h1 = hilbert_stationary(&ctx.config)?.h1;
    let left = stationary_remainder(&ctx.config, 0.0, VelocitySign::Positive)?;
    let right = stationary_remainder(&ctx.config, ctx.config.length, VelocitySign::Negative)?;
    let mut worst: f64 = 0.0;
    for (j, phi) in h1.angles().into_iter().enumerate() {
        if phi.cos().abs() < 1e-6 {
            continue;
        }
        let r = if phi.cos() > 0.0 { &left } else { &right };
        worst = worst.max((r.values.values()[j] + h1.values()[j]).abs());
    }
    // Norms should fall like eta^(-1/2): a factor sqrt(ratio of etas) between rows.
    let scaling_ok = rows.windows(2).all(|w| {
        let expected = (w[1].eta / w[0].eta).sqrt();
        w[0].l2_norm / w[1].l2_norm >= 0.75 * expected
    });
    Ok(Outcome {
        results: json!({ "rows": rows.iter().map(|r| json!({"eta": r.eta, "l2_norm": r.l2_norm})).collect::<Vec<_>>(), "boundary_identity": worst }),
        checks: vec![
            check("boundary identity", worst < 1e-8, format!("max |R + h1| on inflow = {worst:.2e}")),
            check("norm decays like eta^-1/2", scaling_ok, format!("{} etas", rows.len())),
        ],
    })
}
