//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use nlfb::analysis::{estimate_log_shift, estimate_power, estimate_speed, estimate_t_log_t};
use nlfb::eigen::{find_l_star, lambda1};
use nlfb::kernel::inspect_kernel;
use nlfb::semiwave::speed_from_kernel;
use nlfb::solver::{run_with_tables, speed_estimate};
use nlfb::{Config, EigenOptions, EigenProblem, Error, FitWindow, KernelTables, RadialKernel, SweepParam};
use serde::Serialize;
use serde_json::json;

use crate::output::{self, CliError, CliResult, KernelInfo, RunManifest};
use crate::{Cli, Command, ConfigArg, FitKind, CACHE_ENV, DEFAULT_CACHE_DIR};

/// Tables larger than this are not written to the cache.
const CACHE_LIMIT_BYTES: usize = 256 << 20;

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate { config, out_dir } => simulate(cli, config, out_dir.as_deref()),
        Command::Semiwave { config, profile } => semiwave(config, profile.as_deref()),
        Command::Eigen {
            config,
            radius,
            find_lstar,
            tol,
            l_max,
        } => eigen(cli, config, *radius, *find_lstar, *tol, *l_max),
        Command::KernelTable { config, r_max, out } => kernel_table(cli, config, *r_max, out.as_deref()),
        Command::Fit {
            model,
            traj,
            c0,
            tail,
            from,
            to,
            plot,
        } => {
            let window = match (from, to) {
                (Some(a), Some(b)) => FitWindow::Range(*a, *b),
                _ => FitWindow::Tail(*tail),
            };
            fit(*model, traj, *c0, window, plot.as_deref())
        }
        Command::Sweep {
            config,
            param,
            values,
            jobs,
            out,
        } => sweep(config, param, values, *jobs, out.as_deref()),
        Command::Validate { config } => validate(config),
    }
}

fn load_config(arg: &ConfigArg) -> CliResult<Config> {
    let text = std::fs::read_to_string(&arg.config).map_err(|source| CliError::Input {
        path: arg.config.clone(),
        source,
    })?;
    let mut cfg: Config = text.parse()?;
    for o in &arg.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    log::info!("loaded {} with {} entries", arg.config.display(), cfg.entries().len());
    Ok(cfg)
}

fn cache_dir(cli: &Cli) -> Option<PathBuf> {
    if cli.no_cache {
        return None;
    }
    Some(std::env::var_os(CACHE_ENV).map_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR), PathBuf::from))
}

fn open_tables(cli: &Cli, kernel: &RadialKernel, dr: f64) -> CliResult<KernelTables> {
    Ok(match cache_dir(cli) {
        Some(dir) => KernelTables::open_cached(kernel.clone(), dr, &dir)?,
        None => KernelTables::new(kernel.clone(), dr)?,
    })
}

/// Best effort: a failed cache write only costs time on the next run.
fn persist_tables(cli: &Cli, tables: &KernelTables) {
    let Some(dir) = cache_dir(cli) else { return };
    let bytes: usize = {
        let r = tables.read();
        (0..r.len()).map(|i| (r.row(i).end() - r.row(i).start() + 1) * 32).sum()
    };
    if bytes > CACHE_LIMIT_BYTES {
        log::info!("kernel tables ({} MiB) exceed the cache limit; not cached", bytes >> 20);
        return;
    }
    match tables.persist(&dir) {
        Ok(p) => log::info!("kernel tables cached at {}", p.display()),
        Err(e) => log::warn!("could not write kernel table cache: {e}"),
    }
}

fn simulate(cli: &Cli, arg: &ConfigArg, out_dir: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(arg)?;
    let mut manifest = RunManifest::start("simulate", Some(&arg.config), Some(&cfg));
    let rc = cfg.run_config()?;
    rc.validate()?;
    manifest.kernel = Some(KernelInfo::of(&rc.kernel));
    let out = out_dir.map_or_else(|| cfg.out_dir(), Path::to_path_buf);

    let tables = open_tables(cli, &rc.kernel, rc.dr)?;
    let traj = run_with_tables(&rc, &tables)?;
    persist_tables(cli, &tables);

    let path = out.join("trajectory.csv");
    let mut w = output::csv_writer(Some(&path))?;
    w.write_record(["t", "h", "hdot", "u_at_0", "u_max", "mass"])
        .map_err(|e| CliError::output(&path, e))?;
    for r in &traj.records {
        w.serialize(r).map_err(|e| CliError::output(&path, e))?;
    }
    w.flush().map_err(|e| CliError::output(&path, e))?;
    manifest.outputs.push(path);

    for snap in &traj.snapshots {
        let path = out.join(format!("snapshot_{:.4}.csv", snap.t));
        let mut w = output::csv_writer(Some(&path))?;
        w.write_record(["r", "u"]).map_err(|e| CliError::output(&path, e))?;
        let nodes = snap.nodes();
        for (k, r) in nodes.iter().enumerate() {
            let u = snap.u.get(k).copied().unwrap_or(0.0);
            w.write_record([r.to_string(), u.to_string()])
                .map_err(|e| CliError::output(&path, e))?;
        }
        w.flush().map_err(|e| CliError::output(&path, e))?;
        manifest.outputs.push(path);
    }

    let last = traj.records.last().copied();
    let summary = json!({
        "verdict": traj.verdict,
        "h_final": traj.final_state.h,
        "t_final": traj.final_state.t,
        "u_at_0_final": last.map(|r| r.u_at_0),
        "steps": traj.steps,
        "dt": traj.dt,
        "l_star": traj.l_star,
        "speed_estimate": speed_estimate(&traj),
        // Spreading is decided by h >= L* (or f'(0) >= d); vanishing is a
        // finite-window heuristic governed by these thresholds.
        "classification": {
            "spreading_rule": "h >= L_star, or f'(0) >= d",
            "vanishing_is_heuristic": true,
            "thresholds": rc.thresholds,
        },
        "config_echo": cfg.entries(),
    });
    let path = out.join("summary.json");
    output::write_json(&path, &summary)?;
    manifest.outputs.push(path);
    manifest.finish(&out.join("manifest.json"))?;

    println!(
        "{} h_final={} t_final={} ({} steps)",
        traj.verdict, traj.final_state.h, traj.final_state.t, traj.steps
    );
    Ok(())
}

fn semiwave(arg: &ConfigArg, profile: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(arg)?;
    let rc = cfg.run_config()?;
    let sol = speed_from_kernel(&rc.kernel, rc.d, rc.mu, &rc.f, &cfg.semiwave_options()?)?;
    if let Some(path) = profile {
        let mut manifest = RunManifest::start("semiwave", Some(&arg.config), Some(&cfg));
        manifest.kernel = Some(KernelInfo::of(&rc.kernel));
        let mut w = output::csv_writer(Some(path))?;
        w.write_record(["x", "phi"]).map_err(|e| CliError::output(path, e))?;
        for (x, p) in sol.x.iter().zip(&sol.phi) {
            w.write_record([x.to_string(), p.to_string()])
                .map_err(|e| CliError::output(path, e))?;
        }
        w.flush().map_err(|e| CliError::output(path, e))?;
        manifest.outputs.push(path.to_path_buf());
        manifest.finish(&output::manifest_beside(path))?;
    }
    output::print_json(&json!({
        "c0": sol.c0,
        "u_star_hat": sol.u_star_hat,
        "residual_pde": sol.residual_pde,
        "residual_speed": sol.residual_speed,
        "bracket": sol.bracket,
        "truncation": sol.truncation,
        "dx": sol.dx,
        "tail_gap": sol.tail_gap,
    }))
}

fn eigen(cli: &Cli, arg: &ConfigArg, radius: Option<f64>, find: bool, tol: f64, l_max: f64) -> CliResult<()> {
    let cfg = load_config(arg)?;
    let rc = cfg.run_config()?;
    let a = rc.f.growth_rate();
    let tables = open_tables(cli, &rc.kernel, rc.dr)?;
    let value = if find {
        let ls = find_l_star(rc.d, a, &tables, tol, l_max)?;
        json!({
            "L_star": ls.l_star,
            "bracket": ls.bracket,
            "lambda_at_bracket": ls.lambda_at_bracket,
            "dr": rc.dr,
        })
    } else {
        let radius = radius.ok_or_else(|| CliError::Usage("--L or --find-lstar is required".into()))?;
        let opts = EigenOptions::default();
        let res = lambda1(
            &EigenProblem {
                d: rc.d,
                a,
                radius,
                tables: &tables,
            },
            &opts,
        )?;
        json!({
            "radius": radius,
            "lambda1": res.lambda1,
            "residual": res.residual,
            "iterations": res.iterations,
            "method": opts.method,
            "dr": rc.dr,
        })
    };
    persist_tables(cli, &tables);
    output::print_json(&value)
}

fn kernel_table(cli: &Cli, arg: &ConfigArg, r_max: f64, out: Option<&Path>) -> CliResult<()> {
    if !(r_max >= 0.0 && r_max.is_finite()) {
        return Err(CliError::Usage(format!("--r-max must be a nonnegative number, got {r_max}")));
    }
    let cfg = load_config(arg)?;
    let rc = cfg.run_config()?;
    let tables = open_tables(cli, &rc.kernel, rc.dr)?;
    let n = (r_max / rc.dr + 1e-9).floor() as usize;
    tables.ensure(n);
    // J* depends on r - rho only through |i - j|.
    let jstar: Vec<f64> = (0..=n).map(|k| rc.kernel.j_star(k as f64 * rc.dr)).collect();
    let mut w = output::csv_writer(out)?;
    let label = out.unwrap_or(Path::new("<stdout>"));
    w.write_record(["r", "rho", "jtilde", "jstar_of_diff"])
        .map_err(|e| CliError::output(label, e))?;
    {
        let read = tables.read();
        for i in 0..=n {
            let row = read.row(i);
            for j in 0..=n {
                w.write_record([
                    tables.node(i).to_string(),
                    tables.node(j).to_string(),
                    row.jtilde(j).to_string(),
                    jstar[i.abs_diff(j)].to_string(),
                ])
                .map_err(|e| CliError::output(label, e))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::output(label, e))?;
    drop(w);
    persist_tables(cli, &tables);
    if let Some(path) = out {
        let mut manifest = RunManifest::start("kernel-table", Some(&arg.config), Some(&cfg));
        manifest.kernel = Some(KernelInfo::of(&rc.kernel));
        manifest.outputs.push(path.to_path_buf());
        manifest.finish(&output::manifest_beside(path))?;
    }
    Ok(())
}

fn read_trajectory(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    let data = |message: String| CliError::Data {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers().map_err(|e| data(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| data(format!("missing column {name:?}")))
    };
    let (it, ih) = (col("t")?, col("h")?);
    let (mut t, mut h) = (Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data(e.to_string()))?;
        let num = |i: usize| {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| data(format!("row {}: non-numeric value", k + 2)))
        };
        t.push(num(it)?);
        h.push(num(ih)?);
    }
    Ok((t, h))
}

fn fit(model: FitKind, traj: &Path, c0: Option<f64>, window: FitWindow, plot: Option<&Path>) -> CliResult<()> {
    let (t, h) = read_trajectory(traj)?;
    let res = match model {
        FitKind::Speed => estimate_speed(&t, &h, window)?,
        FitKind::Logshift => {
            let c0 = c0.ok_or_else(|| CliError::Usage("--model logshift needs --c0".into()))?;
            estimate_log_shift(&t, &h, c0, window)?
        }
        FitKind::Power => estimate_power(&t, &h, window)?,
        FitKind::Tlogt => estimate_t_log_t(&t, &h, window)?,
    };
    if let Some(path) = plot {
        let mut w = output::create(path)?;
        let (lo, hi) = res.window;
        for (&ti, &hi_) in t.iter().zip(&h).filter(|(&ti, _)| ti >= lo && ti <= hi) {
            let (x, y) = match model {
                FitKind::Speed => (ti, hi_),
                FitKind::Logshift => (ti.ln(), c0.unwrap_or(0.0) * ti - hi_),
                FitKind::Power => (ti.ln(), hi_.ln()),
                FitKind::Tlogt => (ti, hi_ / (ti * ti.ln())),
            };
            writeln!(w, "{x} {y}").map_err(|e| CliError::output(path, e))?;
        }
        w.flush().map_err(|e| CliError::output(path, e))?;
    }
    if let Some(flag) = &res.flag {
        log::warn!("{flag}");
    }
    output::print_json(&res)
}

#[derive(Serialize)]
struct SweepLine<'a> {
    value: f64,
    verdict: Option<String>,
    h_final: Option<f64>,
    t_final: Option<f64>,
    speed_est: Option<f64>,
    error: Option<&'a str>,
}

fn sweep(arg: &ConfigArg, param: &str, values: &[f64], jobs: usize, out: Option<&Path>) -> CliResult<()> {
    let param: SweepParam = param.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let cfg = load_config(arg)?;
    let rc = cfg.run_config()?;
    let rows = nlfb::analysis::sweep(&rc, param, values, jobs)?;
    let mut w = output::csv_writer(out)?;
    let label = out.unwrap_or(Path::new("<stdout>"));
    w.write_record(["value", "verdict", "h_final", "t_final", "speed_est", "error"])
        .map_err(|e| CliError::output(label, e))?;
    for r in &rows {
        let line = SweepLine {
            value: r.value,
            verdict: r.verdict.map(|v| v.to_string()),
            h_final: r.h_final,
            t_final: r.t_final,
            speed_est: r.speed_est,
            error: r.error.as_deref(),
        };
        w.serialize(line).map_err(|e| CliError::output(label, e))?;
    }
    w.flush().map_err(|e| CliError::output(label, e))?;
    drop(w);
    if let Some(path) = out {
        let mut manifest = RunManifest::start("sweep", Some(&arg.config), Some(&cfg));
        manifest.kernel = Some(KernelInfo::of(&rc.kernel));
        manifest.outputs.push(path.to_path_buf());
        manifest.finish(&output::manifest_beside(path))?;
    }
    Ok(())
}

fn validate(arg: &ConfigArg) -> CliResult<()> {
    let cfg = load_config(arg)?;
    let kernel = cfg.kernel()?;
    let report = inspect_kernel(&kernel);
    output::print_json(&report)?;
    if !report.accepted {
        return Err(Error::InvalidModel(format!("kernel rejected: {}", report.issues.join("; "))).into());
    }
    cfg.run_config()?.validate()?;
    cfg.semiwave_options()?;
    Ok(())
}
