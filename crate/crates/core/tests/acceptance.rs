//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process fails if any check fails.

use std::f64::consts::PI;
use std::time::Instant;

use gdnls::fit::{geometric_times, loglog_fit};
use gdnls::gauge::{gauge_inverse, gauge_pair, StatePair};
use gdnls::model::{
    action_s, global_predicate, ground_state_grid, ground_state_profile, mass, mu_omega0, nehari_k,
    ModelParams,
};
use gdnls::samples::{calibrate_lipschitz, LIPSCHITZ_CALIBRATION_SEED, LIPSCHITZ_CONSTANT};
use gdnls::scatter::{scatter_from_physical, time_reversed, ScatterSettings};
use gdnls::spectral::{free_propagate, make_grid, norms, spectral_derivative, Field, C64};
use gdnls::stepper::{
    evolve_gauged, evolve_gdnls, self_convergence_order, ConvergenceProblem, ObservedOrder,
    StepperConfig,
};
use gdnls::waveop::{
    construct_wave_operator, picard_oracle, solve_final_value, source_terms, AsymptoticState,
    Extension, PicardSettings, ProfileBundle, SourceOptions, WaveOpReport,
};

type Check = Result<(bool, String), String>;

fn run(name: &str, check: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let (passed, detail) = match check() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} {name}: {detail} [{:.1}s]",
        if passed { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    passed
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn spectral_exactness() -> Check {
    let g = make_grid(512, 40.0).map_err(err)?;
    let k = 2.0 * PI * 7.0 / 40.0;
    let wave = Field::from_fn(&g, |x| C64::from_polar(1.0, k * x));
    let dwave = spectral_derivative(&wave);
    let deriv_err = dwave
        .values()
        .iter()
        .zip(wave.values())
        .map(|(d, w)| (d - C64::new(0.0, k) * w).norm())
        .fold(0.0, f64::max)
        / k;
    let t = 1.3;
    let moved = free_propagate(&wave, t);
    let prop_err = moved
        .values()
        .iter()
        .zip(g.nodes())
        .map(|(v, &x)| (v - C64::from_polar(1.0, k * x - k * k * t)).norm())
        .fold(0.0, f64::max);
    let gauss = Field::from_real_fn(&g, |x| (-x * x).exp());
    let exact = Field::from_real_fn(&g, |x| -2.0 * x * (-x * x).exp());
    let gauss_err = norms(&(&spectral_derivative(&gauss) - &exact)).l2 / norms(&exact).l2;
    let passed = deriv_err < 1e-12 && prop_err < 1e-12 && gauss_err < 1e-10;
    Ok((
        passed,
        format!("plane-wave derivative {deriv_err:.1e}, propagation {prop_err:.1e}, Gaussian derivative {gauss_err:.1e}"),
    ))
}

fn integrator_order() -> Check {
    let mut parts = Vec::new();
    let mut passed = true;
    for (label, problem) in [
        ("gdnls sigma=1", ConvergenceProblem::gdnls(1.0, 1.0)),
        ("gauged sigma=3", ConvergenceProblem::gauged(3.0, 0.8)),
    ] {
        let report = self_convergence_order(&problem, 0.02).map_err(err)?;
        match report.order {
            ObservedOrder::Order(q) => {
                passed &= (3.5..=4.5).contains(&q);
                parts.push(format!("{label} order {q:.3}"));
            }
            ObservedOrder::Exact => {
                passed = false;
                parts.push(format!("{label} differences at roundoff {:?}", report.differences));
            }
        }
    }
    Ok((passed, parts.join(", ")))
}

fn relative_drift(values: &[f64]) -> f64 {
    let first = values[0];
    values.iter().map(|v| (v - first).abs()).fold(0.0, f64::max) / first.abs()
}

fn conservation() -> Check {
    let g = make_grid(1024, 80.0 * PI).map_err(err)?;
    let u0 = Field::from_fn(&g, |x| C64::from_polar(0.5 * (-x * x).exp(), 0.5 * x));
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for sigma in [1.0, 2.0, 3.0] {
        let p = ModelParams::new(sigma, 1.0);
        let traj = evolve_gdnls(&u0, &StepperConfig::new(2e-3, 0.0, 10.0, 250), &p).map_err(err)?;
        let series = |f: fn(&gdnls::stepper::InvariantRecord) -> f64| -> Vec<f64> { traj.records.iter().map(f).collect() };
        let m = relative_drift(&series(|r| r.mass));
        let e = relative_drift(&series(|r| r.energy));
        let pm = relative_drift(&series(|r| r.momentum));
        worst = worst.max(m).max(e).max(pm);
        parts.push(format!("sigma={sigma}: M {m:.1e} E {e:.1e} P {pm:.1e}"));
    }
    Ok((worst < 1e-6, parts.join("; ")))
}

fn gauge_equivalence() -> Check {
    let g = make_grid(2048, 80.0 * PI).map_err(err)?;
    let u0 = Field::from_fn(&g, |x| C64::from_polar(0.5 * (-x * x / 2.0).exp(), 0.3 * x));
    let cfg = StepperConfig::new(2e-3, 0.0, 5.0, 250);
    let mut worst_gap: f64 = 0.0;
    let mut worst_relation: f64 = 0.0;
    for sigma in [1.0, 2.0, 3.0] {
        let p = ModelParams::new(sigma, 1.0);
        let direct = evolve_gdnls(&u0, &cfg, &p).map_err(err)?;
        let gauged = evolve_gauged(&gauge_pair(&u0, &p), &cfg, &p, None).map_err(err)?;
        let u_direct = direct.snapshots.last().ok_or("empty run")?;
        let u_gauged = gauge_inverse(&gauged.snapshots.last().ok_or("empty run")?.phi, &p);
        worst_gap = worst_gap.max(norms(&(u_direct - &u_gauged)).l2);
        for r in &gauged.records {
            worst_relation = worst_relation.max(r.relation_residual);
        }
    }
    Ok((
        worst_gap < 1e-5 && worst_relation < 1e-5,
        format!("worst L2 gap at T=5 {worst_gap:.1e}, worst relation residual {worst_relation:.1e} (sigma 1, 2, 3)"),
    ))
}

fn ground_state_identities() -> Check {
    let mut worst_k: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    let mut mass_err = f64::NAN;
    for sigma in [1.0, 2.0, 3.0] {
        for omega in [0.5, 1.0, 2.0] {
            let p = ModelParams::new(sigma, omega);
            let g = ground_state_grid(&p).map_err(err)?;
            let phi = ground_state_profile(&g, &p).map_err(err)?;
            let scale = norms(&spectral_derivative(&phi)).l2.powi(2) + omega * mass(&phi);
            worst_k = worst_k.max(nehari_k(&phi, &p).abs() / scale);
            let mu = mu_omega0(&p).map_err(err)?;
            worst_s = worst_s.max((action_s(&phi, &p) - mu).abs() / mu);
            if sigma == 1.0 && omega == 1.0 {
                mass_err = (mass(&phi) - 2.0 * PI).abs();
            }
        }
    }
    Ok((
        worst_k < 1e-6 && worst_s < 1e-6 && mass_err < 1e-8,
        format!("max |K|/scale {worst_k:.1e}, max |S-mu|/mu {worst_s:.1e}, |M-2pi| {mass_err:.1e}"),
    ))
}

fn dispersive_decay() -> Check {
    let g = make_grid(8192, 3200.0).map_err(err)?;
    let u = Field::from_real_fn(&g, |x| (-x * x).exp());
    let times = geometric_times(10.0, 100.0, 12);
    let values: Vec<f64> = times.iter().map(|&t| free_propagate(&u, t).max_abs()).collect();
    let fit = loglog_fit(&times, &values, (10.0, 100.0)).map_err(err)?;
    Ok((
        (fit.slope + 0.5).abs() <= 0.1,
        format!("L-infinity slope {:.4} over {:?} from {} points", fit.slope, fit.window, fit.points),
    ))
}

fn small_gaussian(n: usize, l: f64, scale: f64) -> Result<Field, String> {
    let g = make_grid(n, l).map_err(err)?;
    let raw = Field::from_real_fn(&g, |x| (-(x / 4.0).powi(2)).exp());
    Ok(&raw * (scale * 0.1 / norms(&raw).h1))
}

fn source_decay() -> Check {
    let u = small_gaussian(4096, 2048.0, 1.0)?;
    let state = AsymptoticState::new(u, 3.0, 1.0, 20.0, 200.0).map_err(err)?;
    let times = geometric_times(20.0, 200.0, 12);
    let values: Vec<f64> = times.iter().map(|&t| source_terms(&state, t).norms().h1()).collect();
    let fit = loglog_fit(&times, &values, (20.0, 200.0)).map_err(err)?;
    Ok((
        (fit.slope + 3.0).abs() <= 0.3,
        format!("source H1 slope {:.4} over {:?} from {} points", fit.slope, fit.window, fit.points),
    ))
}

struct WaveRun {
    state: AsymptoticState,
    report: WaveOpReport,
    cfg: StepperConfig,
}

fn wave_operator_run() -> Result<WaveRun, String> {
    let u = small_gaussian(2048, 1024.0, 1.0)?;
    let state = AsymptoticState::new(u, 3.0, 1.0, 8.0, 128.0).map_err(err)?;
    let cfg = StepperConfig {
        dt: 0.02,
        record_every: 25,
        ..Default::default()
    };
    let report = construct_wave_operator(&state, &cfg, &SourceOptions::default()).map_err(err)?;
    Ok(WaveRun { state, report, cfg })
}

fn wave_operator_rate(run: &WaveRun) -> Check {
    let r = &run.report;
    let fit = r.rate_fit.ok_or_else(|| format!("no rate fit: {:?}", r.warnings))?;
    let spread = r.eta_decay_spread.ok_or("no decay spread")?;
    Ok((
        fit.slope <= -1.5 && spread < 20.0 && !r.tainted,
        format!(
            "deviation slope {:.3} over {:?} from {} points, t^(sigma-1)|eta| spread {spread:.2}, tainted {}",
            fit.slope, fit.window, fit.points, r.tainted
        ),
    ))
}

fn picard_cross_check() -> Check {
    let g = make_grid(256, 80.0).map_err(err)?;
    let u = Field::from_real_fn(&g, |x| 0.5 * (-(x / 2.0).powi(2)).exp());
    let state = AsymptoticState::new(u, 3.0, 1.0, 2.0, 12.0).map_err(err)?;
    let bundle = ProfileBundle::new(&state, SourceOptions::default());
    let traj = solve_final_value(&state, &bundle, &StepperConfig::new(0.01, 0.0, 1.0, 100)).map_err(err)?;
    let picard = picard_oracle(
        &state,
        &bundle,
        &PicardSettings {
            iterations: 10,
            intervals: 1000,
            dealias_fraction: 0.5,
        },
    )
    .map_err(err)?;
    let gap = (&picard.eta_t0 - traj.snapshots.last().ok_or("empty solve")?).norms().h1();
    let leading = &picard.gaps[..picard.gaps.len().min(4)];
    let geometric = leading.windows(2).all(|w| w[1] < w[0]);
    Ok((
        gap < 1e-4 && picard.contracting && geometric,
        format!(
            "H1 gap to the final-value solve {gap:.1e}, Picard gaps {}",
            picard.gaps.iter().map(|g| format!("{g:.1e}")).collect::<Vec<_>>().join(" ")
        ),
    ))
}

fn relation_along_run(run: &WaveRun) -> Check {
    let traj = &run.report.eta_tilde_trajectory;
    let mut worst: f64 = 0.0;
    for r in &traj.records {
        worst = worst.max(r.relation_residual / (1e-4 * (1.0 + r.norms.h1())));
    }
    Ok((
        worst < 1.0 && !traj.is_empty(),
        format!(
            "max residual / (1e-4 (1 + |eta|)) = {worst:.1e} over {} recorded times",
            traj.len()
        ),
    ))
}

fn scattering_harness() -> Check {
    let g = make_grid(4096, 800.0).map_err(err)?;
    let u0 = Field::from_real_fn(&g, |x| 0.05 * (-x * x).exp());
    let p = ModelParams::new(3.0, 1.0);
    let settings = ScatterSettings {
        dt: 0.0125,
        dealias_fraction: 1.0,
        first_check: 8.0,
        direct_horizon: 64.0,
        ..Default::default()
    };
    let result = scatter_from_physical(&u0, &p, 256.0, &settings).map_err(err)?;
    let mut passed = true;
    let mut parts = Vec::new();
    for report in [&result.plus, &result.minus] {
        let gaps = &report.cauchy_gaps;
        // gaps[j] joins check_times[j] and check_times[j + 1]; the last one is the horizon doubling 128 -> 256
        let up_to_128 = &gaps[..gaps.len() - 1];
        let decreasing = up_to_128.windows(2).all(|w| w[1] < w[0]);
        let doubling = *gaps.last().ok_or("no gaps")?;
        passed &= decreasing && doubling < 1e-4;
        parts.push(format!(
            "dir {:+}: gaps {} (decreasing {decreasing}), doubling drift {doubling:.1e}",
            report.direction,
            up_to_128.iter().map(|g| format!("{g:.1e}")).collect::<Vec<_>>().join(" ")
        ));
    }
    let at = |t: f64| {
        result
            .direct
            .times
            .iter()
            .position(|&s| (s - t).abs() < 1e-9)
            .map(|j| result.direct.distances[j])
    };
    let (d16, d64) = (at(16.0).ok_or("no direct check at 16")?, at(64.0).ok_or("no direct check at 64")?);
    passed &= d64 < d16;
    parts.push(format!("direct check {d16:.1e} at t=16, {d64:.1e} at t=64"));
    if let (Some(a), Some(b)) = (&result.plus.extracted, &result.minus.extracted) {
        let gap: StatePair = &time_reversed(a) - b;
        parts.push(format!("time-reversal mismatch {:.1e}", gap.norms().h1()));
    }
    Ok((passed, parts.join("; ")))
}

fn global_predicate_and_extension(run: &WaveRun) -> Check {
    let r = &run.report;
    let p = run.state.params();
    let scaled = global_predicate(&(&run.state.u_plus * 20.0), &p).map_err(err)?;
    let completed = r.extension == Extension::Completed;
    let u0 = r.u0.as_ref().ok_or("no u0 from the backward extension")?;

    // carry u0 forward again and compare with u(T0) from the wave-operator run
    let eta_t0 = r
        .eta_tilde_trajectory
        .nearest(run.state.t0)
        .ok_or("no eta at T0")?
        .1;
    let bundle = ProfileBundle::new(&run.state, SourceOptions::default());
    let u_t0 = gauge_inverse(&(&eta_t0.phi + &bundle.w_hat(run.state.t0).phi), &p);
    let forward = StepperConfig {
        t_start: 0.0,
        t_end: run.state.t0,
        record_every: usize::MAX,
        ..run.cfg
    };
    let again = evolve_gdnls(u0, &forward, &p).map_err(err)?;
    let round_trip = norms(&(again.snapshots.last().ok_or("empty run")? - &u_t0)).h1;
    Ok((
        r.global.holds && !scaled.holds && completed && u0.is_finite() && round_trip < 1e-6,
        format!(
            "margin {:.3} (holds {}), x20 margin {:.3} (holds {}), extension {:?}, |u0| H1 {:.3e}, forward round trip {round_trip:.1e}",
            r.global.margin,
            r.global.holds,
            scaled.margin,
            scaled.holds,
            r.extension,
            norms(u0).h1
        ),
    ))
}

fn lipschitz_calibration() -> Check {
    let p = ModelParams::new(3.0, 1.0);
    let mut parts = Vec::new();
    let mut passed = true;
    for n in [512, 1024] {
        let g = make_grid(n, 40.0).map_err(err)?;
        let c = calibrate_lipschitz(&g, &p, LIPSCHITZ_CALIBRATION_SEED, 200, 1.0).map_err(err)?;
        let drift = (c.max_ratio - LIPSCHITZ_CONSTANT).abs() / LIPSCHITZ_CONSTANT;
        passed &= c.max_ratio < LIPSCHITZ_CONSTANT && drift < 0.1;
        parts.push(format!(
            "n={n}: max ratio {:.4} (median {:.4}), drift from {LIPSCHITZ_CONSTANT} {:.1}%",
            c.max_ratio,
            c.median_ratio,
            100.0 * drift
        ));
    }
    Ok((passed, parts.join("; ")))
}

fn main() {
    let mut results = vec![
        run("spectral exactness", spectral_exactness),
        run("integrator order", integrator_order),
        run("conservation", conservation),
        run("gauge equivalence", gauge_equivalence),
        run("ground-state identities", ground_state_identities),
        run("dispersive decay", dispersive_decay),
        run("source decay", source_decay),
    ];
    let start = Instant::now();
    match wave_operator_run() {
        Ok(wave) => {
            println!("(wave-operator run: {:.1}s)", start.elapsed().as_secs_f64());
            results.push(run("wave-operator rate", || wave_operator_rate(&wave)));
            results.push(run("fixed-point cross-check", picard_cross_check));
            results.push(run("relation along the wave-operator run", || relation_along_run(&wave)));
            results.push(run("scattering harness", scattering_harness));
            results.push(run("global predicate and backward extension", || {
                global_predicate_and_extension(&wave)
            }));
        }
        Err(e) => {
            for name in [
                "wave-operator rate",
                "relation along the wave-operator run",
                "global predicate and backward extension",
            ] {
                results.push(run(name, || Err(e.clone())));
            }
            results.push(run("fixed-point cross-check", picard_cross_check));
            results.push(run("scattering harness", scattering_harness));
        }
    }
    results.push(run("Lipschitz calibration", lipschitz_calibration));
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
