//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any fails.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nlfb::analysis::{estimate_log_shift, estimate_power, estimate_speed, estimate_t_log_t, FitWindow};
use nlfb::eigen::{lambda1, EigenOptions, EigenProblem};
use nlfb::kernel::{flux_limit_check, moment_identity_check, RadialKernel};
use nlfb::quadrature;
use nlfb::semiwave::{profile_at_speed, solve_semiwave, Kernel1d, SemiWaveOptions, SemiWaveProblem};
use nlfb::solver::{
    critical_radius, find_mu_star, run_with_tables, InitialData, MuSearch, RunConfig, Simulator, Trajectory, Verdict,
};
use nlfb::{KernelTables, Nonlinearity};
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn disc() -> RadialKernel {
    RadialKernel::uniform(2, 1.0).unwrap()
}

fn ball() -> RadialKernel {
    RadialKernel::uniform(3, 1.0).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn kernel_identities() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    let rho_rule = quadrature::rule(32);
    let theta_rule = quadrature::rule(64);
    let (mut norm_err, mut sym_err, mut star_err) = (0.0f64, 0.0f64, 0.0f64);
    for k in [disc(), ball()] {
        let n = k.dim() as i32;
        for _ in 0..20 {
            let r = rng.gen_range(0.05..6.0);
            let rho = (r + rng.gen_range(-0.95..0.95f64)).max(0.02);
            let (mass, _) = k.j_tilde_cell_moments(r, 0.0, r + 2.0, &rho_rule, &theta_rule);
            norm_err = norm_err.max((mass - 1.0).abs());
            let a = r.powi(n - 1) * k.j_tilde(r, rho);
            let b = rho.powi(n - 1) * k.j_tilde(rho, r);
            sym_err = sym_err.max(rel(a, b));
            let l: f64 = rng.gen_range(0.0..0.999);
            // Unit mass fixes the line marginals of the disc and ball.
            let closed = if n == 2 {
                2.0 / PI * (1.0 - l * l).sqrt()
            } else {
                0.75 * (1.0 - l * l)
            };
            star_err = star_err.max(rel(k.j_star(l), closed));
        }
    }
    outcome(
        norm_err < 1e-6 && sym_err < 1e-8 && star_err < 1e-8,
        format!("max |mass-1| {norm_err:.1e}, symmetry {sym_err:.1e}, J* closed form {star_err:.1e}"),
    )
}

fn moment_identity() -> Outcome {
    let m2 = moment_identity_check(&disc()).unwrap();
    let m3 = moment_identity_check(&ball()).unwrap();
    let pass = m2.rel_err < 1e-6
        && m3.rel_err < 1e-6
        && rel(m2.rhs, 2.0 / (3.0 * PI)) < 1e-6
        && rel(m3.rhs, 3.0 / 16.0) < 1e-6;
    outcome(
        pass,
        format!(
            "N=2 lhs {:.10} rhs {:.10}; N=3 lhs {:.10} rhs {:.10}",
            m2.lhs, m2.rhs, m3.lhs, m3.rhs
        ),
    )
}

fn flux_limit() -> Outcome {
    let target = 2.0 / (3.0 * PI);
    let compact = flux_limit_check(&disc(), &[50.0], 0.05).unwrap()[0].flux;
    let ok_compact = rel(compact, target) < 0.05;

    let fat = flux_limit_check(&RadialKernel::power_tail(2, 2.5, 1.0).unwrap(), &[50.0, 100.0, 200.0], 0.5).unwrap();
    let lx: Vec<f64> = fat.iter().map(|s| s.h.ln()).collect();
    let ly: Vec<f64> = fat.iter().map(|s| s.flux.ln()).collect();
    let (slope, _, _) = nlfb::analysis::linear_regression(&lx, &ly);
    let ok_slope = (0.5..=0.7).contains(&slope);

    let hs = [50.0, 100.0, 200.0, 400.0];
    let crit = flux_limit_check(&RadialKernel::power_tail(2, 3.0, 1.0).unwrap(), &hs, 0.5).unwrap();
    let ratios: Vec<f64> = crit.iter().map(|s| s.flux / s.h.ln()).collect();
    let spread = ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok_log = spread < 2.0;
    outcome(
        ok_compact && ok_slope && ok_log,
        format!(
            "compact F(50) {compact:.5} vs {target:.5}; beta 2.5 slope {slope:.3}; beta 3 F/ln h max/min {spread:.3}"
        ),
    )
}

fn eigen_limits() -> Outcome {
    let (d, a) = (1.0, 0.5);
    let opts = EigenOptions::default();
    let tables = KernelTables::new(disc(), 0.05).unwrap();
    let radii: Vec<f64> = (1..=800).map(|k| 0.05 * k as f64).collect();
    let lambdas: Vec<f64> = radii
        .iter()
        .map(|&radius| {
            lambda1(&EigenProblem { d, a, radius, tables: &tables }, &opts)
                .unwrap()
                .lambda1
        })
        .collect();
    let worst_drop = lambdas.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let monotone = worst_drop <= 1e-10;
    let fine = KernelTables::new(disc(), 0.0025).unwrap();
    let small = lambda1(&EigenProblem { d, a, radius: 0.02, tables: &fine }, &opts).unwrap().lambda1;
    let large = lambda1(&EigenProblem { d, a, radius: 60.0, tables: &tables }, &opts).unwrap().lambda1;
    outcome(
        monotone && (small - (a - d)).abs() < 0.02 && (large - a).abs() < 0.05,
        format!("largest decrease over 800 radii {worst_drop:.1e}; lambda1(0.02) {small:.5}; lambda1(60) {large:.5}"),
    )
}

fn bumped(base: &Kernel1d, eps: f64, centre: f64, width: f64) -> Kernel1d {
    let p1 = base.clone();
    let support = (centre + width).max(base.support().unwrap());
    let kinks = vec![1.0, (centre - width).abs(), centre + width];
    Kernel1d::custom(
        "bumped",
        move |x| {
            let z = (x - centre) / width;
            p1.eval(x) + if z.abs() < 1.0 { eps * (1.0 - z * z) } else { 0.0 }
        },
        Some(support),
        None,
        kinks,
    )
    .unwrap()
}

fn semiwave_consistency() -> Outcome {
    let base = SemiWaveProblem {
        kernel: Kernel1d::j_star(&disc()),
        d: 1.0,
        mu: 1.0,
        f: Nonlinearity::logistic(1.0),
    };
    let opts = SemiWaveOptions::default();
    let s = solve_semiwave(&base, &opts).unwrap();
    let ok_res = s.residual_pde < 1e-6 && s.residual_speed < 1e-6;
    let ok_mono = s.phi.windows(2).all(|w| w[1] < w[0]);
    let fine = solve_semiwave(&base, &SemiWaveOptions { dx: Some(0.01), ..opts }).unwrap();
    let refine = rel(s.c0, fine.c0);

    let coarse = SemiWaveOptions { dx: Some(0.05), ..opts };
    let s1 = solve_semiwave(&base, &coarse).unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let (mut speeds_ok, mut fixed_ok, mut coupled) = (true, true, 0);
    for _ in 0..5 {
        let upper = SemiWaveProblem {
            kernel: bumped(&base.kernel, rng.gen_range(0.01..0.08), rng.gen_range(0.0..1.5), rng.gen_range(0.2..0.6)),
            ..base.clone()
        };
        let s2 = solve_semiwave(&upper, &coarse).unwrap();
        speeds_ok &= s1.c0 <= s2.c0;
        for c in [0.5 * s1.c0, s1.c0, s2.c0] {
            let (_, lo) = profile_at_speed(&base, c, 10.0, &coarse).unwrap();
            let (_, hi) = profile_at_speed(&upper, c, 10.0, &coarse).unwrap();
            fixed_ok &= lo.iter().zip(&hi).all(|(a, b)| *a <= b + 1e-12);
        }
        if s1.x.iter().all(|&x| s1.phi_at(x) <= s2.phi_at(x) + 1e-9) {
            coupled += 1;
        }
    }
    outcome(
        ok_res && ok_mono && refine < 0.005 && speeds_ok && fixed_ok,
        format!(
            "c0 {:.10}, residuals {:.1e}/{:.1e}, dx/2 change {:.2}%, 5 ordered pairs: speeds {}, fixed-speed profiles {}, coupled profiles ordered {}/5 (info)",
            s.c0,
            s.residual_pde,
            s.residual_speed,
            100.0 * refine,
            if speeds_ok { "ordered" } else { "NOT ordered" },
            if fixed_ok { "ordered" } else { "NOT ordered" },
            coupled
        ),
    )
}

fn reference_run() -> (Trajectory, f64) {
    let mut cfg = RunConfig::new(disc(), 1.0, 1.0, Nonlinearity::logistic(1.0), 4.0);
    cfg.t_end = 300.0;
    let tables = KernelTables::new(cfg.kernel.clone(), cfg.dr).unwrap();
    let traj = run_with_tables(&cfg, &tables).unwrap();
    let problem = SemiWaveProblem {
        kernel: Kernel1d::j_star(&cfg.kernel),
        d: cfg.d,
        mu: cfg.mu,
        f: cfg.f.clone(),
    };
    let c0 = solve_semiwave(&problem, &SemiWaveOptions::default()).unwrap().c0;
    (traj, c0)
}

fn spreading_speed(traj: &Trajectory, c0: f64) -> Outcome {
    let fit = estimate_speed(&traj.times(), &traj.fronts(), FitWindow::default()).unwrap();
    let u0 = traj.final_state.u[0];
    outcome(
        rel(fit.coefficient, c0) < 0.05 && (u0 - 1.0).abs() < 0.02,
        format!(
            "slope {:.5} vs c0 {c0:.5} ({:.2}% off), u(t_end, 0) = {u0:.5}",
            fit.coefficient,
            100.0 * rel(fit.coefficient, c0)
        ),
    )
}

fn log_shift(traj: &Trajectory, c0: f64) -> Outcome {
    let fit = estimate_log_shift(&traj.times(), &traj.fronts(), c0, FitWindow::default()).unwrap();
    outcome(
        fit.coefficient > 0.0 && fit.r2 > 0.9,
        format!(
            "c0 t - h = {:.4} ln t + {:.4} on [{:.0}, {:.0}], R2 {:.5}",
            fit.coefficient, fit.intercept, fit.window.0, fit.window.1, fit.r2
        ),
    )
}

fn fat_tail_run(beta: f64) -> Trajectory {
    // A fast reaction keeps the front layer thin, so the transient decays
    // within reach; the exponent itself does not depend on f.
    let mut cfg = RunConfig::new(
        RadialKernel::power_tail(2, beta, 1.0).unwrap(),
        1.0,
        1.0,
        Nonlinearity::logistic(8.0),
        2.0,
    );
    cfg.dr = 0.5;
    cfg.dt = Some(0.02);
    cfg.t_end = 150.0;
    cfg.record_every = 20;
    let tables = KernelTables::new(cfg.kernel.clone(), cfg.dr).unwrap();
    run_with_tables(&cfg, &tables).unwrap()
}

fn accelerated() -> Outcome {
    let a = fat_tail_run(2.8);
    let p = estimate_power(&a.times(), &a.fronts(), FitWindow::default()).unwrap();
    let b = fat_tail_run(3.0);
    let q = estimate_t_log_t(&b.times(), &b.fronts(), FitWindow::default()).unwrap();
    let (lo, hi) = q.ratio_range.unwrap();
    outcome(
        rel(p.coefficient, 1.25) < 0.15 && hi < 2.0 * lo,
        format!(
            "beta 2.8 exponent {:.4} (target 1.25, R2 {:.6}, h(150) = {:.1}); beta 3 h/(t ln t) in [{lo:.4}, {hi:.4}]",
            p.coefficient,
            p.r2,
            a.final_state.h
        ),
    )
}

fn dichotomy() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let mut fast = RunConfig::new(disc(), 0.5, 1.0, Nonlinearity::logistic(1.0), 1.0);
    fast.t_end = 5.0;
    let tables = KernelTables::new(disc(), fast.dr).unwrap();
    let v = run_with_tables(&fast, &tables).unwrap().verdict;
    pass &= v == Verdict::Spreading;
    notes.push(format!("f'(0)>=d: {v}"));

    let mut base = RunConfig::new(disc(), 1.0, 1.0, Nonlinearity::logistic(0.5), 1.0);
    let l_star = critical_radius(&base, &tables).unwrap().unwrap();

    // Above L*: spreading even with a very slow boundary; run on to watch
    // the density approach u*.
    let mut wide = base.clone();
    wide.h0 = 1.2 * l_star;
    wide.mu = 0.01;
    wide.t_end = 200.0;
    let tr = run_with_tables(&wide, &tables).unwrap();
    let u_end = tr.final_state.u[0];
    let late = tr.records[tr.records.len() * 9 / 10].u_at_0;
    pass &= tr.verdict == Verdict::Spreading && u_end > late;
    notes.push(format!("h0=1.2L*, mu=0.01: {} (u(t,0) still rising: {late:.3} -> {u_end:.3})", tr.verdict));

    base.h0 = 0.5 * l_star;
    base.mu = 0.01;
    base.t_end = 400.0;
    let v = run_with_tables(&base, &tables).unwrap().verdict;
    pass &= v == Verdict::Vanishing;
    notes.push(format!("h0=L*/2, mu=0.01: {v}"));

    base.t_end = 50.0;
    let search = MuSearch {
        bracket: (0.01, 100.0),
        tol_mu: 0.02,
        t_max: 800.0,
    };
    let m = find_mu_star(&base, &tables, &search).unwrap();
    pass &= m.converged && m.history_is_monotone();
    notes.push(format!(
        "mu* in [{:.4}, {:.4}] after {} runs, monotone history {}",
        m.bracket.0,
        m.bracket.1,
        m.history.len(),
        m.history_is_monotone()
    ));
    outcome(pass, format!("L* = {l_star:.4}; {}", notes.join("; ")))
}

fn comparison() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(2024);
    let tables = KernelTables::new(disc(), 0.05).unwrap();
    let mut worst = f64::NEG_INFINITY;
    let mut template = RunConfig::new(disc(), 1.0, 1.0, Nonlinearity::logistic(1.0), 1.0);
    template.dt = Some(0.05);
    template.t_end = 40.0;
    template.record_every = 20;
    template.snapshot_every = 1;
    let mut pairs = Vec::new();
    for _ in 0..3 {
        let h_hi: f64 = rng.gen_range(1.0..3.0);
        let h_lo = h_hi * rng.gen_range(0.5..1.0);
        let (a_hi, p_hi) = (rng.gen_range(0.3..1.0), rng.gen_range(1.0..4.0));
        let (a_lo, p_lo) = (rng.gen_range(0.1..1.0), rng.gen_range(1.0..4.0));
        let upper = move |r: f64| if r < h_hi { a_hi * (1.0 - (r / h_hi).powf(p_hi)) } else { 0.0 };
        let lower = move |r: f64| {
            if r < h_lo {
                upper(r).min(a_lo * (1.0 - (r / h_lo).powf(p_lo)))
            } else {
                0.0
            }
        };
        let mut lo = template.clone();
        lo.h0 = h_lo;
        lo.u0 = InitialData::Custom(Arc::new(lower));
        let mut hi = template.clone();
        hi.h0 = h_hi;
        hi.u0 = InitialData::Custom(Arc::new(upper));
        pairs.push((lo, hi));
    }
    let mut slow = template.clone();
    slow.h0 = 2.0;
    slow.u0 = InitialData::Parabolic { amplitude: 0.8 };
    let mut quick = slow.clone();
    quick.mu = 2.0;
    pairs.push((slow, quick));

    for (lo, hi) in &pairs {
        let a = run_with_tables(lo, &tables).unwrap();
        let b = run_with_tables(hi, &tables).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            worst = worst.max(x.h - y.h);
        }
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            for (i, u) in x.u.iter().enumerate() {
                let v = y.u.get(i).copied().unwrap_or(0.0);
                worst = worst.max(u - v);
            }
        }
    }
    outcome(
        worst <= 1e-10 + 1e-6,
        format!("4 ordered pairs (3 random data, 1 in mu): largest violation {worst:.2e}"),
    )
}

fn front_speed_oracle() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for k in [disc(), ball()] {
        let n = k.dim();
        let mut cfg = RunConfig::new(k.clone(), 1.0, 1.0, Nonlinearity::logistic(1.0), 2.0);
        cfg.dr = 0.02;
        let tables = KernelTables::new(k, cfg.dr).unwrap();
        let got = Simulator::new(&cfg, &tables).unwrap().hdot();
        let oracle = planar_flux(n, cfg.h0, |r| 1.0 - (r / 2.0).powi(2));
        let err = rel(got, oracle);
        pass &= err < 0.005;
        notes.push(format!("N={n}: h'(0) {got:.6} vs brute force {oracle:.6} ({:.3}%)", 100.0 * err));
    }
    outcome(pass, notes.join("; "))
}

/// `μ/|∂B_h| ∫_{B_h} u(|x|) ∫_{ℝ^N \ B_h} J(|x - y|) dy dx` for the unit-mass
/// uniform kernel on the unit ball, with `μ = 1`. The inner integral is
/// taken over spheres `|y - x| = s`, whose part outside `B_h` is an arc
/// (N = 2) or a cap (N = 3) of known angular size.
fn planar_flux(n: usize, h: f64, u: impl Fn(f64) -> f64) -> f64 {
    let outside_fraction = |r: f64, s: f64| {
        if r == 0.0 || s == 0.0 {
            return if r + s > h { 1.0 } else { 0.0 };
        }
        let c = ((h * h - r * r - s * s) / (2.0 * r * s)).clamp(-1.0, 1.0);
        match n {
            2 => c.acos() / PI,
            _ => 0.5 * (1.0 - c),
        }
    };
    let simpson = |a: f64, b: f64, m: usize, f: &dyn Fn(f64) -> f64| {
        let w = (b - a) / m as f64;
        let mut acc = f(a) + f(b);
        for k in 1..m {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * w);
        }
        acc * w / 3.0
    };
    let (shell, density) = match n {
        2 => (2.0 * PI, 1.0 / PI),
        _ => (4.0 * PI, 3.0 / (4.0 * PI)),
    };
    let pw = n as i32 - 1;
    let leak = |r: f64| {
        // Split at s = h - r where the spheres start to leave B_h.
        let edge = (h - r).clamp(0.0, 1.0);
        let f = |s: f64| shell * s.powi(pw) * density * outside_fraction(r, s);
        simpson(edge, 1.0, 2000, &f)
    };
    let integrand = |r: f64| shell * r.powi(pw) * u(r) * leak(r);
    simpson(0.0, h, 2000, &integrand) / (shell * h.powi(pw))
}

type Criterion = Box<dyn Fn() -> Outcome + Send + Sync>;

fn main() {
    let started = Instant::now();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("kernel identities", Box::new(kernel_identities)),
        ("moment identity", Box::new(moment_identity)),
        ("flux limit", Box::new(flux_limit)),
        ("eigenvalue limits and monotonicity", Box::new(eigen_limits)),
        ("semi-wave self-consistency", Box::new(semiwave_consistency)),
        ("spreading speed", Box::new(|| unreachable!())),
        ("logarithmic shift", Box::new(|| unreachable!())),
        ("accelerated spreading", Box::new(accelerated)),
        ("dichotomy and thresholds", Box::new(dichotomy)),
        ("comparison principle", Box::new(comparison)),
        ("initial front speed oracle", Box::new(front_speed_oracle)),
    ];
    let mut results: Vec<Option<(Outcome, f64)>> = (0..criteria.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let reference = scope.spawn(|| {
            let t = Instant::now();
            let (traj, c0) = reference_run();
            let speed = spreading_speed(&traj, c0);
            let shift = log_shift(&traj, c0);
            (speed, shift, t.elapsed().as_secs_f64())
        });
        let handles: Vec<_> = criteria
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 5 && *i != 6)
            .map(|(i, (_, check))| {
                (
                    i,
                    scope.spawn(move || {
                        let t = Instant::now();
                        let o = check();
                        (o, t.elapsed().as_secs_f64())
                    }),
                )
            })
            .collect();
        for (i, h) in handles {
            results[i] = Some(h.join().unwrap_or_else(|_| (outcome(false, "panicked".into()), 0.0)));
        }
        match reference.join() {
            Ok((speed, shift, secs)) => {
                results[5] = Some((speed, secs));
                results[6] = Some((shift, secs));
            }
            Err(_) => {
                results[5] = Some((outcome(false, "panicked".into()), 0.0));
                results[6] = Some((outcome(false, "panicked".into()), 0.0));
            }
        }
    });
    let mut failed = 0;
    println!();
    for (i, ((name, _), r)) in criteria.iter().zip(results).enumerate() {
        let (o, secs) = r.unwrap();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<36} {} ({secs:.1}s): {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
