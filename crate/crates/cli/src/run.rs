//! Experiment orchestration: each kind composes core operations and returns
//! result tables plus a short JSON summary for the manifest.

use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use interlace_core::deviation::{
    disconnection_frequency, entropy_gap, insulation_bounds, relative_entropy_tilted, subadditivity_scan,
};
use interlace_core::green::{equilibrium, gauge_solve_with, GaugeOptions};
use interlace_core::lattice::{build_window, inner_product_n, ClosedBox, LatticeField, SiteSet};
use interlace_core::sim::{mc_laplace, run_batches, TiltedSampler, WindowSampler};
use interlace_core::stats::Moments;
use interlace_core::variational::{
    capacity_scaled, duality_potential, gamma_n, rate_i_n, DensityOnWindow, SolveOptions,
};
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig, Profile};
use crate::error::{CliError, Context, Result};
use crate::output::{num, opt_num, write_manifest, write_tables, RunManifest, Table, Timing};

/// Absolute tolerance between the two deterministic Laplace routes.
const DETERMINISTIC_AGREEMENT: f64 = 1e-3;
/// Streams reserved per ladder rung, far above any batch count.
const LADDER_STREAM_STRIDE: u64 = 1 << 32;

/// Tables, summary and timings of one experiment.
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: Value,
    pub timings: Vec<Timing>,
}

#[derive(Default)]
struct Clock {
    timings: Vec<Timing>,
}

impl Clock {
    fn time<T>(&mut self, operation: impl Into<String>, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing { operation: operation.into(), seconds: start.elapsed().as_secs_f64() });
        out
    }
}

/// Run on a pool of `config.threads` workers and persist results plus
/// manifest under `config.out`.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let wall = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::io("thread pool", std::io::Error::other(e)))?;
    let outcome = pool.install(|| execute(config))?;
    let files = write_tables(&config.out, &outcome.tables)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        kind: config.kind.to_string(),
        config: config.echo.clone(),
        defaulted: config.defaulted.clone(),
        overrides: config.overrides.clone(),
        started_unix_seconds: started,
        wall_clock_seconds: wall.elapsed().as_secs_f64(),
        timings: outcome.timings,
        summary: outcome.summary,
        files,
    };
    write_manifest(&config.out, &manifest)?;
    Ok(manifest)
}

/// Compute the experiment's tables without touching the file system.
pub fn execute(config: &ExperimentConfig) -> Result<Outcome> {
    let mut clock = Clock::default();
    let opts = SolveOptions { green_tol: config.green_tol, ..SolveOptions::default() };
    let tol = config.green_tol;
    let seed = config.seed;
    let (tables, summary) = match &config.experiment {
        Experiment::LaplaceThreeway { bx, n, v, u, samples, radius } => {
            laplace_threeway(&mut clock, bx, *n, *v, *u, *samples, *radius, seed, &opts)?
        }
        Experiment::CapacityScan { region, ns } => {
            let mut t = Table::new(
                "capacity",
                &[
                    "n",
                    "route",
                    "sites",
                    "boundary_sites",
                    "outer_radius",
                    "iterations",
                    "lattice_capacity",
                    "capacity_scaled",
                ],
            );
            let mut values = Vec::new();
            for &n in ns {
                let c = clock.time(format!("capacity_scaled N={n}"), || {
                    capacity_scaled(region, n, &opts).during("capacity_scaled", || format!("N = {n}"))
                })?;
                let route = serde_json::to_value(c.route).ok().and_then(|v| v.as_str().map(String::from));
                t.push(vec![
                    n.to_string(),
                    route.unwrap_or_default(),
                    c.sites.to_string(),
                    c.boundary_sites.to_string(),
                    opt_num(c.outer_radius),
                    c.iterations.to_string(),
                    num(c.lattice_capacity),
                    num(c.value),
                ]);
                values.push(c.value);
            }
            let increasing = values.windows(2).all(|w| w[0] < w[1]);
            (vec![t], json!({ "capacity_scaled": values, "increasing_along_ladder": increasing }))
        }
        Experiment::RateFunction { bx, n, profile, radius, duality_check } => {
            rate_function(&mut clock, bx, *n, profile, *radius, *duality_check, &opts)?
        }
        Experiment::Insulation { setup, ns } => {
            let mut t = Table::new("insulation", &["n", "capacity_k", "capacity_k_delta", "lower_rate", "upper_rate"]);
            for &n in ns {
                let b = clock.time(format!("insulation_bounds N={n}"), || {
                    insulation_bounds(setup, n, &opts).during("insulation_bounds", || format!("N = {n}"))
                })?;
                t.push(vec![
                    n.to_string(),
                    num(b.capacity_k),
                    num(b.capacity_k_delta),
                    num(b.lower_rate),
                    num(b.upper_rate),
                ]);
            }
            (vec![t], json!({ "rows": ns.len() }))
        }
        Experiment::TiltedEntropy { bx, n, obstacle, a, eps, u, samples, grid_points } => {
            let window = Arc::new(build_window(bx, *n).during("build_window", || format!("N = {n}"))?);
            let obstacle = obstacle.rasterize(*n).during("rasterize", || format!("obstacle at N = {n}"))?;
            let level = a + eps;
            let base = Arc::new(clock.time("window sampler", || {
                WindowSampler::new(window.clone(), tol).during("window_sampler", || format!("{} sites", window.len()))
            })?);
            let sampler = clock.time("tilted sampler", || {
                TiltedSampler::new(base, &obstacle, *u, level, tol)
                    .during("tilted_sampler", || format!("u = {u}, level = {level}"))
            })?;
            let cap = sampler.obstacle_capacity();
            let batches = clock.time("sample_tilted", || {
                run_batches(*samples, seed, 0, |count, rng| {
                    let mut m = Moments::default();
                    for _ in 0..count {
                        m.push(sampler.sample(rng)?.log_ratio);
                    }
                    Ok(m)
                })
                .during("sample_tilted", || format!("{samples} samples"))
            })?;
            let mut m = Moments::default();
            batches.iter().for_each(|b| m.merge(b));
            let entropy = relative_entropy_tilted(*a, *eps, *u, cap)
                .during("relative_entropy_tilted", || format!("a = {a}, eps = {eps}, u = {u}"))?;
            let z = (m.mean - entropy) / m.std_error();
            let mut t = Table::new(
                "tilted_entropy",
                &[
                    "n",
                    "obstacle_sites",
                    "obstacle_capacity",
                    "level",
                    "relative_entropy",
                    "mean_log_ratio",
                    "std_error",
                    "z_score",
                ],
            );
            t.push(vec![
                n.to_string(),
                obstacle.len().to_string(),
                num(cap),
                num(level),
                num(entropy),
                num(m.mean),
                num(m.std_error()),
                num(z),
            ]);
            let mut g = Table::new("entropy_gap", &["v_over_u", "entropy_cost", "ld_cost", "gap"]);
            let mut strict = true;
            for i in 0..*grid_points {
                let ratio = 10f64.powf(-2.0 + 4.0 * i as f64 / (*grid_points - 1) as f64);
                let (e, l) = entropy_gap(ratio * u, *u).during("entropy_gap", || format!("v/u = {ratio}"))?;
                if ratio != 1.0 {
                    strict &= e > l;
                }
                g.push(vec![num(ratio), num(e), num(l), num(e - l)]);
            }
            (vec![t, g], json!({ "within_3_std_errors": z.abs() <= 3.0, "entropy_exceeds_ld_cost": strict }))
        }
        Experiment::Subadditivity { bx, n, event, t_values, samples } => {
            let window = Arc::new(build_window(bx, *n).during("build_window", || format!("N = {n}"))?);
            let sampler = clock.time("window sampler", || {
                WindowSampler::new(window.clone(), tol).during("window_sampler", || format!("{} sites", window.len()))
            })?;
            let table = clock.time("subadditivity_scan", || {
                subadditivity_scan(&sampler, bx, event, *n, t_values, *samples, seed, 0)
                    .during("subadditivity_scan", || format!("N = {n}, t = {t_values:?}"))
            })?;
            let mut rows = Table::new(
                "subadditivity",
                &["t", "level", "hits", "trials", "probability", "p_lower", "p_upper", "f_hat", "f_lower", "f_upper"],
            );
            for r in &table.rows {
                let p = r.probability;
                rows.push(vec![
                    num(r.t),
                    num(r.level),
                    p.hits.to_string(),
                    p.trials.to_string(),
                    num(p.estimate),
                    num(p.lower),
                    num(p.upper),
                    opt_num(r.f_hat),
                    num(r.f_lower),
                    num(r.f_upper),
                ]);
            }
            let mut pairs = Table::new("subadditivity_pairs", &["t1", "t2", "holds_point", "holds_within_ci"]);
            for p in &table.pairs {
                let point = p.holds_point.map(|b| b.to_string()).unwrap_or_default();
                pairs.push(vec![num(p.t1), num(p.t2), point, p.holds_within_ci.to_string()]);
            }
            let all = table.pairs.iter().all(|p| p.holds_within_ci);
            (vec![rows, pairs], json!({ "row_confidence": table.row_confidence, "all_pairs_hold_within_ci": all }))
        }
        Experiment::DisconnectionFrequency { setup, ns, measure, samples } => {
            let mut t = Table::new(
                "disconnection",
                &[
                    "n",
                    "hits",
                    "trials",
                    "frequency",
                    "lower",
                    "upper",
                    "refinement_disagreements",
                    "obstacle_capacity",
                    "mean_log_ratio",
                ],
            );
            let mut freqs = Vec::new();
            for (i, &n) in ns.iter().enumerate() {
                let r = clock.time(format!("disconnection_frequency N={n}"), || {
                    disconnection_frequency(setup, n, *measure, *samples, seed, i as u64 * LADDER_STREAM_STRIDE, tol)
                        .during("disconnection_frequency", || format!("N = {n}, {samples} samples"))
                })?;
                let f = r.frequency;
                t.push(vec![
                    n.to_string(),
                    f.hits.to_string(),
                    f.trials.to_string(),
                    num(f.estimate),
                    num(f.lower),
                    num(f.upper),
                    r.refinement_disagreements.to_string(),
                    opt_num(r.obstacle_capacity),
                    opt_num(r.mean_log_ratio),
                ]);
                freqs.push(f.estimate);
            }
            let increasing = freqs.windows(2).all(|w| w[0] < w[1]);
            (vec![t], json!({ "frequency": freqs, "increasing_along_ladder": increasing }))
        }
    };
    Ok(Outcome { tables, summary, timings: clock.timings })
}

#[allow(clippy::too_many_arguments)]
fn laplace_threeway(
    clock: &mut Clock,
    bx: &ClosedBox,
    n: u32,
    v: f64,
    u: f64,
    samples: u64,
    radius: u32,
    seed: u64,
    opts: &SolveOptions,
) -> Result<(Vec<Table>, Value)> {
    let window = Arc::new(build_window(bx, n).during("build_window", || format!("N = {n}"))?);
    let d = window.dim() as i32;
    let nf = n as f64;
    let potential = LatticeField::constant(window.clone(), v).during("potential", || format!("V = {v}"))?;
    let sampler = clock.time("window sampler", || {
        WindowSampler::new(window.clone(), opts.green_tol)
            .during("window_sampler", || format!("{} sites", window.len()))
    })?;
    let mc = clock.time("mc_laplace", || {
        mc_laplace(&sampler, &potential, n, u, samples, seed, 0)
            .during("mc_laplace", || format!("N = {n}, V = {v}, {samples} samples"))
    })?;
    // Lattice weights V / (d N²); the value scales by d / N^{d-2}.
    let lattice = potential.map(|x| x / (d as f64 * nf * nf)).during("potential", String::new)?;
    let gauge_opts = GaugeOptions { green_tol: opts.green_tol, ..GaugeOptions::default() };
    let gauge = clock.time("gauge_solve", || {
        gauge_solve_with(&lattice, radius, gauge_opts).during("gauge_solve", || format!("R = {radius}"))
    })?;
    let gauge_value = d as f64 / nf.powi(d - 2) * gauge.lambda_value;
    let gamma = clock.time("gamma_n", || {
        gamma_n(&potential, n, radius, opts).during("gamma_n", || format!("N = {n}, R = {radius}"))
    })?;
    let verdict = serde_json::to_value(gauge.verdict).unwrap_or(Value::Null);
    let verdict_kind = verdict.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();

    let mut routes = Table::new("laplace", &["route", "value", "std_error", "note"]);
    routes.push(vec!["mc".into(), num(mc.estimate), num(mc.std_error), format!("heavy_tail={}", mc.heavy_tail)]);
    routes.push(vec!["gauge".into(), num(gauge_value), num(0.0), verdict_kind]);
    // The closure value carries no sampling error; the zero-exterior cut-off
    // gap is reported for reference only.
    let note = format!("finite={} cutoff_gap={}", gamma.finite, num(gamma.error_estimate));
    routes.push(vec!["gamma_n".into(), num(gamma.value), num(0.0), note]);

    let entries = [("mc", mc.estimate, mc.std_error), ("gauge", gauge_value, 0.0), ("gamma_n", gamma.value, 0.0)];
    let mut agree =
        Table::new("agreement", &["pair", "difference", "combined_std_error", "within_3se", "within_abs_tol"]);
    let mut all = true;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let (a, b) = (entries[i], entries[j]);
        let diff = (a.1 - b.1).abs();
        let se = (a.2 * a.2 + b.2 * b.2).sqrt();
        let deterministic = a.2 == 0.0 && b.2 == 0.0;
        let within_se = diff <= 3.0 * se || deterministic;
        let within_abs = !deterministic || diff <= DETERMINISTIC_AGREEMENT;
        all &= within_se && within_abs;
        agree.push(vec![format!("{}-{}", a.0, b.0), num(diff), num(se), within_se.to_string(), within_abs.to_string()]);
    }
    Ok((vec![routes, agree], json!({ "agree": all, "gauge_verdict": verdict })))
}

fn rate_function(
    clock: &mut Clock,
    bx: &ClosedBox,
    n: u32,
    profile: &Profile,
    radius: u32,
    duality_check: bool,
    opts: &SolveOptions,
) -> Result<(Vec<Table>, Value)> {
    let window = Arc::new(build_window(bx, n).during("build_window", || format!("N = {n}"))?);
    let h = profile_field(&window, n, profile, opts.green_tol)?;
    let density = DensityOnWindow::new(h.clone()).during("density", String::new)?;
    let rate = clock.time("rate_i_n", || {
        rate_i_n(&density, n, radius, opts).during("rate_i_n", || format!("N = {n}, R = {radius}"))
    })?;
    let mut dual_value = None;
    if duality_check && h.values().iter().all(|&x| x > 0.0) {
        let v = clock.time("duality_potential", || {
            duality_potential(&density, n, opts).during("duality_potential", || format!("N = {n}"))
        })?;
        let g = clock.time("gamma_n", || {
            gamma_n(&v, n, radius, opts).during("gamma_n", || format!("duality-matched potential, R = {radius}"))
        })?;
        dual_value = Some(inner_product_n(&v, &h, n) - g.value);
    }
    let mut t = Table::new(
        "rate",
        &[
            "n",
            "radius",
            "rate",
            "value_at_r",
            "refined_value",
            "error_estimate",
            "iterations",
            "dual_value",
            "duality_gap",
        ],
    );
    t.push(vec![
        n.to_string(),
        radius.to_string(),
        num(rate.value),
        num(rate.value_at_r),
        num(rate.refined_value),
        num(rate.error_estimate),
        rate.iterations.to_string(),
        opt_num(dual_value),
        opt_num(dual_value.map(|dv| (dv - rate.value).abs())),
    ]);
    Ok((vec![t], json!({ "rate": rate.value, "dual_value": dual_value })))
}

fn profile_field(window: &Arc<SiteSet>, n: u32, profile: &Profile, tol: f64) -> Result<LatticeField> {
    let nf = n as f64;
    let field = match profile {
        Profile::Constant { value } => LatticeField::constant(window.clone(), *value),
        Profile::Linear { base, gradient } => LatticeField::from_fn(window.clone(), |x| {
            base + x.iter().zip(gradient).map(|(&c, g)| g * c as f64 / nf).sum::<f64>()
        }),
        Profile::EquilibriumBump { obstacle, a } => {
            let raster = obstacle.rasterize(n).during("rasterize", || format!("profile obstacle at N = {n}"))?;
            let eq = equilibrium(Arc::new(raster), tol).during("equilibrium", || "profile obstacle".into())?;
            let mut potential = Vec::with_capacity(window.len());
            for x in window.iter() {
                potential.push(eq.potential(x).during("equilibrium potential", || format!("at {x:?}"))?);
            }
            let s = a.sqrt() - 1.0;
            LatticeField::new(window.clone(), potential.iter().map(|p| (1.0 + s * p).powi(2)).collect())
        }
    };
    field.during("profile", || format!("{profile:?}"))
}
