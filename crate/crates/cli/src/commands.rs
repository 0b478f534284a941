use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use ek_core::capacity::capacity_report;
use ek_core::dynamics::IntegratorConfig;
use ek_core::hitting::{barrier_slope_fit_stats, estimate_with_records, Ball, EnsembleConfig, HittingStats};
use ek_core::landscape::{analyze as find_landscape, LandscapeReport};
use ek_core::rates::{build_saddle_frame, ek_prediction, verify_frame_identities, Regime, SaddleFrame};
use ek_core::verify::{run_checks, VerifyOptions};
use ek_core::PotentialModel;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{self, ConfigError, RunConfig};
use crate::Common;

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    config_hash: Option<String>,
    seed: Option<u64>,
    /// SOURCE_DATE_EPOCH wins when set, for reproducible files.
    generated_at_unix: u64,
    timings: Map<String, Value>,
}

impl<'a> Metadata<'a> {
    fn new(command: &'a str, cfg: Option<&RunConfig>, seed: Option<u64>) -> Self {
        let now = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or_else(|| {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: cfg.map(|c| c.hash()),
            seed,
            generated_at_unix: now,
            timings: Map::new(),
        }
    }

    fn time(&mut self, key: impl Into<String>, secs: f64) {
        self.timings.insert(key.into(), json!(secs));
    }
}

struct Setup {
    cfg: RunConfig,
    model: PotentialModel,
    out: PathBuf,
}

fn setup(c: &Common) -> Result<Setup> {
    if let Some(j) = c.jobs {
        if j == 0 {
            return Err(ConfigError("--jobs: must be at least 1".into()).into());
        }
        // Only fails if a pool exists already; harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let mut cfg = config::load(&c.config, &c.overrides)?;
    if let Some(e) = c.epsilon {
        cfg.epsilon = Some(e);
        cfg.epsilon_grid = None;
    }
    if let Some(s) = c.seed {
        cfg.ensemble.base_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    let model = cfg.model()?;
    let out = cfg.output_dir.clone();
    Ok(Setup { cfg, model, out })
}

fn landscape_and_frame(s: &Setup) -> Result<(LandscapeReport, SaddleFrame)> {
    let report = find_landscape(&s.model, s.cfg.start_well.as_deref())?;
    if !report.is_valid_double_well {
        bail!(
            "potential is not a non-degenerate double well ({} minima, {} saddles)",
            report.n_minima,
            report.n_saddles
        );
    }
    let frame = build_saddle_frame(&s.model, &report, s.cfg.gamma)?;
    Ok((report, frame))
}

fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ConfigError(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_json(dir: &Path, name: &str, meta: &Metadata, result: Value) -> Result<()> {
    let doc = json!({ "metadata": meta, "result": result });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    write_bytes(dir, name, &bytes)
}

/// Metadata as `# key: value` lines, then the table.
fn write_csv<R: Serialize>(dir: &Path, name: &str, meta: &Metadata, rows: &[R]) -> Result<()> {
    let mut bytes = Vec::new();
    if let Value::Object(m) = serde_json::to_value(meta)? {
        for (k, v) in m {
            writeln!(bytes, "# {k}: {v}")?;
        }
    }
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    write_bytes(dir, name, &bytes)
}

pub fn analyze(c: &Common) -> Result<bool> {
    let s = setup(c)?;
    let mut meta = Metadata::new("analyze", Some(&s.cfg), None);
    let t0 = Instant::now();
    let report = find_landscape(&s.model, s.cfg.start_well.as_deref())?;
    let mut result = json!({ "landscape": report });
    if report.is_valid_double_well {
        let frame = build_saddle_frame(&s.model, &report, s.cfg.gamma)?;
        let ids = verify_frame_identities(&frame);
        result["saddle_frame"] = serde_json::to_value(&frame)?;
        result["frame_identities"] = serde_json::to_value(&ids)?;
    }
    meta.time("analyze", t0.elapsed().as_secs_f64());
    write_json(&s.out, "landscape.json", &meta, result)?;
    if !report.is_valid_double_well {
        bail!("potential is not a non-degenerate double well; landscape.json has the details");
    }
    Ok(true)
}

#[derive(Serialize)]
struct PredictionRow {
    epsilon: f64,
    gamma: f64,
    regime: Regime,
    prefactor: f64,
    exponent: f64,
    predicted_mean_time: f64,
}

pub fn predict(c: &Common) -> Result<bool> {
    let s = setup(c)?;
    let mut meta = Metadata::new("predict", Some(&s.cfg), None);
    let t0 = Instant::now();
    let (report, frame) = landscape_and_frame(&s)?;
    let mut rows = Vec::new();
    for eps in s.cfg.epsilons() {
        for regime in [Regime::Underdamped, Regime::Overdamped] {
            let p = ek_prediction(&report, &frame, eps, regime)?;
            rows.push(PredictionRow {
                epsilon: eps,
                gamma: s.cfg.gamma,
                regime,
                prefactor: p.prefactor,
                exponent: p.exponent,
                predicted_mean_time: p.predicted_mean_time,
            });
        }
    }
    meta.time("predict", t0.elapsed().as_secs_f64());
    write_csv(&s.out, "predictions.csv", &meta, &rows)?;
    Ok(true)
}

/// Wall time goes to the metadata so that `result` is byte-stable.
fn stats_value(stats: &HittingStats) -> Result<Value> {
    let mut v = serde_json::to_value(stats)?;
    if let Value::Object(m) = &mut v {
        m.remove("wall_time");
    }
    Ok(v)
}

#[derive(Serialize)]
struct TrajectoryRow {
    epsilon: f64,
    trajectory_id: u64,
    hit_time: f64,
    stop_reason: String,
}

pub fn simulate(c: &Common, dump: bool) -> Result<bool> {
    let s = setup(c)?;
    let seed = s.cfg.ensemble.base_seed;
    let mut meta = Metadata::new("simulate", Some(&s.cfg), Some(seed));
    let (report, frame) = landscape_and_frame(&s)?;
    let n = s.cfg.ensemble.n_traj;
    let mut runs = Vec::new();
    let mut series = Vec::new();
    let mut traj_rows = Vec::new();
    for (i, eps) in s.cfg.epsilons().into_iter().enumerate() {
        let pred = ek_prediction(&report, &frame, eps, Regime::Underdamped)?;
        let ic = IntegratorConfig::new(
            s.cfg.integrator.scheme,
            s.cfg.integrator.dt,
            50.0 * pred.predicted_mean_time,
            seed,
            0,
        )?;
        let mut ens = EnsembleConfig::standard(&report, eps, s.cfg.gamma, n, pred.predicted_mean_time, ic, seed)?;
        ens.target = Ball::around(&report.s.location, s.cfg.balls.target_radius.radius(eps));
        if let Some(t) = s.cfg.integrator.max_time {
            ens.integrator.max_time = t;
        }
        // Disjoint streams per ε keep the slope fit's points independent.
        ens.first_stream = (i * n) as u64;
        ens.validate()?;
        let (stats, records) =
            estimate_with_records(&s.model, &ens).with_context(|| format!("ensemble at epsilon = {eps}"))?;
        meta.time(format!("ensemble_eps_{eps}"), stats.wall_time);
        eprintln!(
            "eps {eps}: mean {:.6} ± {:.6} ({} timeouts), predicted {:.6}",
            stats.mean, stats.ci95_half_width, stats.n_timeout, pred.predicted_mean_time
        );
        if dump {
            traj_rows.extend(records.iter().map(|r| {
                TrajectoryRow {
                    epsilon: eps,
                    trajectory_id: r.trajectory_id,
                    hit_time: r.hit_time,
                    stop_reason: serde_json::to_value(r.stop_reason)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                }
            }));
        }
        runs.push(json!({
            "epsilon": eps,
            "target_radius": ens.target.radius,
            "max_time": ens.integrator.max_time,
            "stats": stats_value(&stats)?,
            "predicted_mean_time": pred.predicted_mean_time,
            "ratio_mc_over_predicted": stats.mean / pred.predicted_mean_time,
        }));
        series.push((eps, stats));
    }
    let mut result = json!({
        "gamma": s.cfg.gamma,
        "scheme": s.cfg.integrator.scheme,
        "dt": s.cfg.integrator.dt,
        "runs": runs,
    });
    if series.len() >= 3 {
        let fit = barrier_slope_fit_stats(&series)?;
        result["slope_fit"] = serde_json::to_value(&fit)?;
        result["barrier"] = json!(report.barrier_from_m);
    }
    write_json(&s.out, "hitting.json", &meta, result)?;
    if dump {
        write_csv(&s.out, "trajectories.csv", &meta, &traj_rows)?;
    }
    Ok(true)
}

pub fn capacity(c: &Common) -> Result<bool> {
    let s = setup(c)?;
    let mut meta = Metadata::new("capacity", Some(&s.cfg), None);
    let (report, frame) = landscape_and_frame(&s)?;
    let mut reports = Vec::new();
    for eps in s.cfg.epsilons() {
        let t0 = Instant::now();
        let r = capacity_report(
            &s.model,
            &report,
            &frame,
            eps,
            s.cfg.quadrature.k,
            s.cfg.quadrature.spec(),
        )
        .with_context(|| format!("capacity at epsilon = {eps}"))?;
        meta.time(format!("capacity_eps_{eps}"), t0.elapsed().as_secs_f64());
        eprintln!(
            "eps {eps}: quadrature mean time {:.6}, closed form {:.6}, ratio {:.4}",
            r.predicted_mean_time, r.ek_prediction.predicted_mean_time, r.ek_cross_check_ratio
        );
        if r.numerator.value == 0.0 {
            eprintln!(
                "  warning: sublevel set below {:.4} is empty at this epsilon; use smaller epsilon or larger quadrature.k",
                r.numerator.level
            );
        }
        reports.push(r);
    }
    write_json(&s.out, "capacity.json", &meta, json!({ "reports": reports }))?;
    Ok(true)
}

pub fn verify(out: &Path, seed: Option<u64>, only: &[String], jobs: Option<usize>) -> Result<bool> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(ConfigError("--jobs: must be at least 1".into()).into());
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let mut opts = VerifyOptions::default();
    if let Some(s) = seed {
        opts.seed = s;
    }
    let known: Vec<&str> = ek_core::verify::checks().iter().map(|c| c.id).collect();
    if let Some(bad) = only.iter().find(|o| !known.contains(&o.as_str())) {
        return Err(ConfigError(format!("--only: unknown check id `{bad}` (known: {})", known.join(","))).into());
    }
    let mut meta = Metadata::new("verify", None, Some(opts.seed));
    let outcomes = run_checks(&opts, only);
    let mut items = Vec::new();
    for o in &outcomes {
        println!("{}", o.line());
        meta.time(format!("check_{}", o.id), o.elapsed);
        let mut v = serde_json::to_value(o)?;
        if let Value::Object(m) = &mut v {
            m.remove("elapsed");
        }
        items.push(v);
    }
    let all = outcomes.iter().all(|o| o.pass);
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id.as_str()).collect();
    println!("{} of {} checks passed", outcomes.len() - failed.len(), outcomes.len());
    write_json(
        out,
        "verify.json",
        &meta,
        json!({ "all_pass": all, "failed": failed, "checks": items }),
    )?;
    Ok(all)
}
