//! Forward scattering of the gauged system: evolve `η`, pull back by the free
//! flow, and watch `w(t) = e^{−it∂ₓ²}η(t)` settle across dyadic times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{gauge_g1, gauge_pair, StatePair};
use crate::model::ModelParams;
use crate::spectral::{free_propagate, norms, Field, C64};
use crate::stepper::{evolve_gauged_with, evolve_gdnls, StepperConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScatterSettings {
    pub dt: f64,
    pub dealias_fraction: f64,
    /// First dyadic check time; later checks double it up to the horizon.
    pub first_check: f64,
    /// Largest admissible `‖η₀‖_{H¹×H¹}`.
    pub smallness: f64,
    /// The extracted state is kept only when the last gap is below this.
    pub extraction_tolerance: f64,
    /// Horizon of the independent gDNLS run used by the direct check.
    pub direct_horizon: f64,
    /// Drops `F` (pure free flow).
    pub linear_only: bool,
}

impl Default for ScatterSettings {
    fn default() -> Self {
        ScatterSettings {
            dt: 0.05,
            dealias_fraction: 0.5,
            first_check: 8.0,
            smallness: 0.2,
            extraction_tolerance: 1e-4,
            direct_horizon: 64.0,
            linear_only: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterVerdict {
    Converged,
    /// Gaps decrease but the last one is still above the extraction tolerance.
    Unsettled,
    /// Gaps failed to decrease across three consecutive dyadic levels.
    NoConvergence,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScatterReport {
    pub direction: i8,
    pub sigma: f64,
    /// Set for `σ = 2`, which lies outside the proven range.
    pub exploratory: bool,
    pub check_times: Vec<f64>,
    #[serde(skip)]
    pub pullback_snapshots: Vec<StatePair>,
    /// `‖w(t_{j+1}) − w(t_j)‖_{H¹×H¹}`.
    pub cauchy_gaps: Vec<f64>,
    #[serde(skip)]
    pub extracted: Option<StatePair>,
    /// `‖w(t_max) − w(t_max/2)‖_{H¹×H¹}`.
    pub stability_gap: f64,
    pub verdict: ScatterVerdict,
}

fn check_sigma(sigma: f64) -> Result<bool> {
    if sigma >= 3.0 {
        Ok(false)
    } else if sigma == 2.0 {
        Ok(true)
    } else {
        Err(Error::InvalidParameter(format!(
            "forward scattering needs sigma >= 3 (sigma = 2 as exploratory), got {sigma}"
        )))
    }
}

fn dyadic_checks(first: f64, horizon: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let mut t = first;
    while t <= horizon * (1.0 + 1e-12) {
        times.push(t);
        t *= 2.0;
    }
    times
}

/// Steps per `first_check` and the step that divides it exactly.
fn aligned_step(settings: &ScatterSettings) -> (f64, usize) {
    let per_check = (settings.first_check / settings.dt).ceil().max(1.0) as usize;
    (settings.first_check / per_check as f64, per_check)
}

fn verdict(gaps: &[f64], tolerance: f64) -> ScatterVerdict {
    let mut rises = 0;
    for pair in gaps.windows(2) {
        if pair[1] >= pair[0] && pair[1] > 0.0 {
            rises += 1;
            if rises >= 3 {
                return ScatterVerdict::NoConvergence;
            }
        } else {
            rises = 0;
        }
    }
    match gaps.last() {
        Some(&g) if g < tolerance => ScatterVerdict::Converged,
        None => ScatterVerdict::Converged,
        _ => ScatterVerdict::Unsettled,
    }
}

/// Evolves `η₀` to `direction·horizon` and records pullbacks at the dyadic
/// times `first_check·2^j ≤ horizon`.
pub fn forward_scatter(
    eta0: &StatePair,
    p: &ModelParams,
    horizon: f64,
    direction: i8,
    settings: &ScatterSettings,
) -> Result<ScatterReport> {
    let exploratory = check_sigma(p.sigma)?;
    if direction != 1 && direction != -1 {
        return Err(Error::InvalidParameter(format!("direction must be ±1, got {direction}")));
    }
    if !(settings.first_check > 0.0 && horizon >= settings.first_check) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} must be at least the first check time {}",
            settings.first_check
        )));
    }
    let size = eta0.norms().h1();
    if size > settings.smallness {
        return Err(Error::OutsideSmallRegime(format!(
            "‖η₀‖_H¹ = {size:.3e} exceeds the smallness threshold {}",
            settings.smallness
        )));
    }
    let checks = dyadic_checks(settings.first_check, horizon);
    let t_max = *checks.last().expect("at least one check time");
    let sign = f64::from(direction);
    let (dt, per_check) = aligned_step(settings);
    let cfg = StepperConfig {
        dt,
        t_start: 0.0,
        t_end: sign * t_max,
        record_every: per_check,
        dealias_fraction: settings.dealias_fraction,
        max_linf_growth: 1e3,
        linear_only: settings.linear_only,
    };
    let grid = eta0.grid().clone();
    let mut pullbacks = Vec::with_capacity(checks.len());
    evolve_gauged_with(eta0, &cfg, p, None, &mut |t, _eta, _record, w| {
        let level = t.abs();
        if checks.iter().any(|&c| (c - level).abs() <= 1e-9 * c) {
            pullbacks.push(StatePair {
                phi: Field::from_vec(&grid, grid.ifft(&w[0])),
                psi: Field::from_vec(&grid, grid.ifft(&w[1])),
            });
        }
        Ok(())
    })?;
    if pullbacks.len() != checks.len() {
        return Err(Error::InvalidParameter(format!(
            "recorded {} of {} dyadic check times",
            pullbacks.len(),
            checks.len()
        )));
    }
    let gaps: Vec<f64> = pullbacks
        .windows(2)
        .map(|pair| (&pair[1] - &pair[0]).norms().h1())
        .collect();
    let stability_gap = gaps.last().copied().unwrap_or(0.0);
    let verdict = verdict(&gaps, settings.extraction_tolerance);
    let extracted = (verdict == ScatterVerdict::Converged).then(|| pullbacks[pullbacks.len() - 1].clone());
    Ok(ScatterReport {
        direction,
        sigma: p.sigma,
        exploratory,
        check_times: checks.iter().map(|t| sign * t).collect(),
        pullback_snapshots: pullbacks,
        cauchy_gaps: gaps,
        extracted,
        stability_gap,
        verdict,
    })
}

/// `‖G₁(u(t)) − e^{it∂ₓ²}φ⁺‖_{H¹}` along the independent gDNLS run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct DirectCheck {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PhysicalScatter {
    pub plus: ScatterReport,
    pub minus: ScatterReport,
    pub direct: DirectCheck,
}

/// Scatters `(G₁(u₀), G₂(u₀))` in both directions and checks the `+` state
/// against the gauge image of an independent gDNLS evolution of `u₀`.
pub fn scatter_from_physical(
    u0: &Field,
    p: &ModelParams,
    horizon: f64,
    settings: &ScatterSettings,
) -> Result<PhysicalScatter> {
    let eta0 = gauge_pair(u0, p);
    let (plus, minus) = rayon::join(
        || forward_scatter(&eta0, p, horizon, 1, settings),
        || forward_scatter(&eta0, p, horizon, -1, settings),
    );
    let (plus, minus) = (plus?, minus?);

    let reference = plus
        .extracted
        .as_ref()
        .or(plus.pullback_snapshots.last())
        .map(|s| s.phi.clone())
        .unwrap_or_else(|| Field::zeros(u0.grid()));
    let checks = dyadic_checks(settings.first_check, settings.direct_horizon.min(horizon));
    let mut direct = DirectCheck::default();
    if let Some(&t_max) = checks.last() {
        let (dt, per_check) = aligned_step(settings);
        let cfg = StepperConfig {
            dt,
            t_start: 0.0,
            t_end: t_max,
            record_every: per_check,
            dealias_fraction: settings.dealias_fraction,
            max_linf_growth: 1e3,
            linear_only: settings.linear_only,
        };
        let traj = evolve_gdnls(u0, &cfg, p)?;
        for (t, u) in traj.times.iter().zip(&traj.snapshots) {
            if checks.iter().any(|&c| (c - t).abs() <= 1e-9 * c) {
                let gap = &gauge_g1(u, p) - &free_propagate(&reference, *t);
                direct.times.push(*t);
                direct.distances.push(norms(&gap).h1);
            }
        }
    }
    Ok(PhysicalScatter { plus, minus, direct })
}

/// Applies the discrete time reversal to a `+` state, giving the `−` state
/// expected for real even data: `(φ, ψ) ↦ (Cφ, −Cψ)` with `C` the conjugate
/// reflection.
pub fn time_reversed(state: &StatePair) -> StatePair {
    StatePair {
        phi: state.phi.conj_reflect(),
        psi: state.psi.conj_reflect().map(|z: C64| -z),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_grid;

    fn small_gaussian(n: usize, l: f64, amp: f64) -> Field {
        let g = make_grid(n, l).unwrap();
        Field::from_real_fn(&g, |x| amp * (-x * x).exp())
    }

    #[test]
    fn dyadic_schedule() {
        assert_eq!(dyadic_checks(8.0, 128.0), vec![8.0, 16.0, 32.0, 64.0, 128.0]);
        assert_eq!(dyadic_checks(8.0, 100.0), vec![8.0, 16.0, 32.0, 64.0]);
        let (dt, k) = aligned_step(&ScatterSettings {
            dt: 0.03,
            first_check: 1.0,
            ..Default::default()
        });
        assert_eq!(k, 34);
        assert!((dt * k as f64 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn verdict_rules() {
        assert_eq!(verdict(&[1.0, 0.5, 1e-5], 1e-4), ScatterVerdict::Converged);
        assert_eq!(verdict(&[1.0, 0.5, 1e-3], 1e-4), ScatterVerdict::Unsettled);
        assert_eq!(verdict(&[1.0, 2.0, 3.0, 4.0], 1e-4), ScatterVerdict::NoConvergence);
        assert_eq!(verdict(&[0.0, 0.0, 0.0, 0.0], 1e-4), ScatterVerdict::Converged);
    }

    #[test]
    fn sigma_and_smallness_guards() {
        let u = small_gaussian(128, 40.0, 0.05);
        let p = ModelParams::new(2.5, 1.0);
        let eta = gauge_pair(&u, &p);
        assert!(forward_scatter(&eta, &p, 8.0, 1, &ScatterSettings::default()).is_err());
        let p = ModelParams::new(3.0, 1.0);
        let big = gauge_pair(&(&u * 20.0), &p);
        assert!(matches!(
            forward_scatter(&big, &p, 8.0, 1, &ScatterSettings::default()),
            Err(Error::OutsideSmallRegime(_))
        ));
        let p2 = ModelParams::new(2.0, 1.0);
        let settings = ScatterSettings {
            first_check: 1.0,
            dt: 0.05,
            ..Default::default()
        };
        let r = forward_scatter(&gauge_pair(&u, &p2), &p2, 2.0, 1, &settings).unwrap();
        assert!(r.exploratory);
    }

    #[test]
    fn zero_data_scatters_to_zero() {
        let g = make_grid(128, 40.0).unwrap();
        let p = ModelParams::new(3.0, 1.0);
        let settings = ScatterSettings {
            first_check: 1.0,
            direct_horizon: 2.0,
            ..Default::default()
        };
        let r = scatter_from_physical(&Field::zeros(&g), &p, 4.0, &settings).unwrap();
        for rep in [&r.plus, &r.minus] {
            assert!(rep.cauchy_gaps.iter().all(|&x| x == 0.0));
            let e = rep.extracted.as_ref().unwrap();
            assert_eq!(e.phi.max_abs() + e.psi.max_abs(), 0.0);
        }
        assert!(r.direct.distances.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn free_flow_pullback_is_constant() {
        let u = small_gaussian(256, 60.0, 0.05);
        let p = ModelParams::new(3.0, 1.0);
        let settings = ScatterSettings {
            first_check: 1.0,
            linear_only: true,
            ..Default::default()
        };
        let eta = gauge_pair(&u, &p);
        let r = forward_scatter(&eta, &p, 8.0, -1, &settings).unwrap();
        assert_eq!(r.check_times, vec![-1.0, -2.0, -4.0, -8.0]);
        assert!(r.cauchy_gaps.iter().all(|&g| g < 1e-14), "{:?}", r.cauchy_gaps);
        assert!((&r.extracted.unwrap() - &eta).norms().h1() < 1e-14);
    }

    #[test]
    fn time_reversal_map_is_involution() {
        let g = make_grid(64, 10.0).unwrap();
        let s = StatePair {
            phi: Field::from_fn(&g, |x| C64::new(x.sin(), x.cos() * 0.3)),
            psi: Field::from_fn(&g, |x| C64::new((2.0 * x).cos(), x)),
        };
        let back = time_reversed(&time_reversed(&s));
        assert_eq!((&back - &s).norms().h1(), 0.0);
    }
}
