//! Integrating-factor RK4 in both time directions.
//!
//! The state is carried in the interaction picture `ŵ(t) = e^{ik²(t-t₀)} η̂(t)`,
//! so the free flow is exact and only the nonlinear term is Runge-Kutta
//! integrated. Physical snapshots are recovered as `η̂ = e^{-ik²(t-t₀)} ŵ`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{
    check_system_sigma, relation_defect, system_nonlinearity_raw, PairNorms, StatePair,
};
use crate::model::{energy, mass, modulus_pow, momentum, ModelParams};
use crate::spectral::{norms, norms_of, Field, Grid, NormTriple, C64};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperConfig {
    /// Step size magnitude; the sign follows `t_end - t_start`.
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub dealias_fraction: f64,
    /// Abort once `‖u‖_∞` exceeds this multiple of its initial value.
    pub max_linf_growth: f64,
    /// Drops the nonlinearity (the flow becomes the free propagator).
    pub linear_only: bool,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            dt: 1e-3,
            t_start: 0.0,
            t_end: 1.0,
            record_every: 100,
            dealias_fraction: 0.5,
            max_linf_growth: 10.0,
            linear_only: false,
        }
    }
}

impl StepperConfig {
    pub fn new(dt: f64, t_start: f64, t_end: f64, record_every: usize) -> Self {
        StepperConfig {
            dt,
            t_start,
            t_end,
            record_every,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_start == self.t_end {
            return Err(Error::InvalidParameter(
                "t_start and t_end must be finite and distinct".into(),
            ));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be >= 1".into()));
        }
        if !(self.dealias_fraction > 0.0 && self.dealias_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "dealias_fraction must lie in (0, 1], got {}",
                self.dealias_fraction
            )));
        }
        if !(self.max_linf_growth > 0.0) {
            return Err(Error::InvalidParameter("max_linf_growth must be positive".into()));
        }
        Ok(())
    }

    /// Signed steps; the last one is shortened to land on `t_end`.
    fn steps(&self) -> Vec<f64> {
        let span = self.t_end - self.t_start;
        let sign = span.signum();
        let full = (span.abs() / self.dt * (1.0 - 1e-12)).floor() as usize;
        let mut steps = vec![sign * self.dt; full];
        let rest = span.abs() - full as f64 * self.dt;
        if rest > 1e-12 * self.dt.max(span.abs()) {
            steps.push(sign * rest);
        }
        steps
    }
}

/// Step-size guidance `dt ≲ (‖u‖_∞^{2σ} k_max)^{-1}`, capped at `cap`.
pub fn suggested_dt(u: &Field, sigma: f64, cap: f64) -> f64 {
    let scale = u.max_abs().powf(2.0 * sigma) * u.grid().k_max();
    if scale > 0.0 {
        (1.0 / scale).min(cap)
    } else {
        cap
    }
}

/// Recorded diagnostics of a gDNLS run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InvariantRecord {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub momentum: f64,
    pub norms: NormTriple,
    pub boundary_mass: f64,
}

/// Recorded diagnostics of a gauged-system run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairRecord {
    pub t: f64,
    pub norms: PairNorms,
    pub relation_residual: f64,
    pub boundary_mass: f64,
}

/// Snapshots and per-snapshot diagnostics at the recorded times.
#[derive(Clone, Debug)]
pub struct Trajectory<S, R> {
    pub times: Vec<f64>,
    pub snapshots: Vec<S>,
    pub records: Vec<R>,
}

impl<S, R> Default for Trajectory<S, R> {
    fn default() -> Self {
        Trajectory {
            times: Vec::new(),
            snapshots: Vec::new(),
            records: Vec::new(),
        }
    }
}

impl<S, R> Trajectory<S, R> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(&f64, &S)> {
        self.times.last().zip(self.snapshots.last())
    }

    /// Snapshot recorded closest to `t`.
    pub fn nearest(&self, t: f64) -> Option<(f64, &S)> {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(j, &time)| (time, &self.snapshots[j]))
    }
}

pub type FieldTrajectory = Trajectory<Field, InvariantRecord>;
pub type PairTrajectory = Trajectory<StatePair, PairRecord>;

/// Mass in the outer fifth of the domain (`|x| > 0.4 L`).
pub fn boundary_mass(u: &Field) -> f64 {
    let edge = 0.4 * u.grid().domain_length();
    let grid = u.grid();
    grid.integrate(
        grid.nodes()
            .iter()
            .zip(u.values())
            .filter(|(x, _)| x.abs() > edge)
            .map(|(_, v)| v.norm_sqr()),
    )
}

/// Spectral nonlinear term `N̂(t, η)` of `η_t = i η_xx + N`. Receives the
/// physical samples and spectra of every component.
type NonlinearFn<'a> = dyn FnMut(f64, &[Vec<C64>], &[Vec<C64>]) -> Result<Vec<Vec<C64>>> + 'a;

/// Lawson RK4 driver shared by every evolution in the crate.
pub(crate) struct IfRk4<'a> {
    grid: &'a Arc<Grid>,
    cfg: &'a StepperConfig,
}

impl<'a> IfRk4<'a> {
    pub(crate) fn new(grid: &'a Arc<Grid>, cfg: &'a StepperConfig) -> Self {
        IfRk4 { grid, cfg }
    }

    fn phases(&self, tau: f64) -> Vec<C64> {
        self.grid
            .wavenumbers()
            .iter()
            .map(|&k| C64::from_polar(1.0, k * k * tau))
            .collect()
    }

    /// Physical state at interaction-picture phase `phase = e^{ik²τ}`.
    fn to_physical(&self, w: &[Vec<C64>], phase: &[C64]) -> (Vec<Vec<C64>>, Vec<Vec<C64>>) {
        let spectra: Vec<Vec<C64>> = w
            .iter()
            .map(|c| c.iter().zip(phase).map(|(a, p)| a * p.conj()).collect())
            .collect();
        let physical = spectra.iter().map(|s| self.grid.ifft(s)).collect();
        (physical, spectra)
    }

    /// Integrates from `initial` (physical samples), calling `record` with the
    /// physical state at `t_start`, every `record_every` steps, and `t_end`.
    /// `interaction` receives the interaction-picture spectra at the same
    /// times (relative to `t_start`).
    pub(crate) fn run(
        &self,
        initial: &[Vec<C64>],
        nonlinear: &mut NonlinearFn<'_>,
        record: &mut dyn FnMut(f64, Vec<Vec<C64>>, &[Vec<C64>]) -> Result<()>,
    ) -> Result<()> {
        let cfg = self.cfg;
        let t0 = cfg.t_start;
        let mut w: Vec<Vec<C64>> = initial.iter().map(|c| self.grid.fft(c)).collect();
        let linf0 = initial
            .iter()
            .flat_map(|c| c.iter().map(|v| v.norm()))
            .fold(0.0_f64, f64::max);
        let limit = cfg.max_linf_growth * linf0;

        record(t0, initial.to_vec(), &w)?;
        let steps = cfg.steps();
        let mut t = t0;
        let mut last_good = t0;
        let mut half_cache: Option<(f64, Vec<C64>, Vec<C64>)> = None;

        for (index, &h) in steps.iter().enumerate() {
            let (eh, ef) = match &half_cache {
                Some((cached, eh, ef)) if *cached == h => (eh.clone(), ef.clone()),
                _ => {
                    let eh = self.phases(0.5 * h);
                    let ef = self.phases(h);
                    half_cache = Some((h, eh.clone(), ef.clone()));
                    (eh, ef)
                }
            };
            let t_next = if index + 1 == steps.len() {
                cfg.t_end
            } else {
                t0 + (index + 1) as f64 * h
            };
            let p0 = self.phases(t - t0);
            if !cfg.linear_only {
                let p_half: Vec<C64> = p0.iter().zip(&eh).map(|(a, b)| a * b).collect();
                let p_full: Vec<C64> = p0.iter().zip(&ef).map(|(a, b)| a * b).collect();

                let mut eval = |tau_t: f64, phase: &[C64], state: &[Vec<C64>]| -> Result<Vec<Vec<C64>>> {
                    let (phys, spec) = self.to_physical(state, phase);
                    let out = nonlinear(tau_t, &phys, &spec)?;
                    Ok(out
                        .into_iter()
                        .map(|c| c.into_iter().zip(phase).map(|(a, p)| a * p).collect())
                        .collect())
                };

                let (phys0, _) = self.to_physical(&w, &p0);
                self.guard(&phys0, t, last_good, limit)?;

                let k1 = eval(t, &p0, &w)?;
                let s2 = axpy(&w, 0.5 * h, &k1);
                let k2 = eval(t + 0.5 * h, &p_half, &s2)?;
                let s3 = axpy(&w, 0.5 * h, &k2);
                let k3 = eval(t + 0.5 * h, &p_half, &s3)?;
                let s4 = axpy(&w, h, &k3);
                let k4 = eval(t_next, &p_full, &s4)?;
                for c in 0..w.len() {
                    for j in 0..w[c].len() {
                        w[c][j] += h / 6.0 * (k1[c][j] + 2.0 * k2[c][j] + 2.0 * k3[c][j] + k4[c][j]);
                    }
                }
            }
            last_good = t;
            t = t_next;
            let done = index + 1 == steps.len();
            if done || (index + 1) % cfg.record_every == 0 {
                let (phys, _) = self.to_physical(&w, &self.phases(t - t0));
                self.guard(&phys, t, last_good, limit)?;
                record(t, phys, &w)?;
            }
        }
        Ok(())
    }

    fn guard(&self, phys: &[Vec<C64>], t: f64, last_good: f64, limit: f64) -> Result<()> {
        let mut linf = 0.0_f64;
        for v in phys.iter().flatten() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::BlowUp {
                    time: t,
                    last_good_time: last_good,
                    reason: "non-finite values".into(),
                });
            }
            linf = linf.max(v.norm());
        }
        if limit > 0.0 && linf > limit {
            return Err(Error::BlowUp {
                time: t,
                last_good_time: last_good,
                reason: format!("sup norm {linf:.3e} exceeds guard {limit:.3e}"),
            });
        }
        Ok(())
    }
}

fn axpy(w: &[Vec<C64>], a: f64, k: &[Vec<C64>]) -> Vec<Vec<C64>> {
    w.iter()
        .zip(k)
        .map(|(wc, kc)| wc.iter().zip(kc).map(|(x, y)| x + a * y).collect())
        .collect()
}

pub(crate) fn mask_spectrum(grid: &Grid, spectrum: &mut [C64], keep_fraction: f64) {
    if keep_fraction >= 1.0 {
        return;
    }
    let cutoff = keep_fraction * grid.k_max();
    for (s, &k) in spectrum.iter_mut().zip(grid.wavenumbers()) {
        if k.abs() > cutoff {
            *s = C64::new(0.0, 0.0);
        }
    }
}

/// Spectral nonlinear term of the gDNLS flow: `-D(|u|^{2σ} u_x)`.
fn gdnls_nonlinear(grid: &Grid, phys: &[C64], spec: &[C64], sigma: f64, keep: f64) -> Vec<C64> {
    let dspec: Vec<C64> = spec
        .iter()
        .zip(grid.wavenumbers())
        .enumerate()
        .map(|(j, (s, &k))| s * grid.derivative_symbol(j, k))
        .collect();
    let u_x = grid.ifft(&dspec);
    let mut product: Vec<C64> = phys
        .iter()
        .zip(&u_x)
        .map(|(&v, &d)| -d * modulus_pow(v, 2.0 * sigma))
        .collect();
    grid.fft_in_place(&mut product);
    mask_spectrum(grid, &mut product, keep);
    product
}

fn invariant_record(t: f64, u: &Field, p: &ModelParams) -> InvariantRecord {
    InvariantRecord {
        t,
        mass: mass(u),
        energy: energy(u, p),
        momentum: momentum(u),
        norms: norms(u),
        boundary_mass: boundary_mass(u),
    }
}

/// Integrates `u_t = i u_xx − |u|^{2σ} u_x` from `cfg.t_start` to `cfg.t_end`.
pub fn evolve_gdnls(u0: &Field, cfg: &StepperConfig, p: &ModelParams) -> Result<FieldTrajectory> {
    cfg.validate()?;
    p.validate()?;
    if !u0.is_finite() {
        return Err(Error::InvalidParameter("initial field is not finite".into()));
    }
    let grid = u0.grid().clone();
    let keep = cfg.dealias_fraction;
    let sigma = p.sigma;
    let mut traj = FieldTrajectory::default();
    let mut nonlinear = |_t: f64, phys: &[Vec<C64>], spec: &[Vec<C64>]| -> Result<Vec<Vec<C64>>> {
        Ok(vec![gdnls_nonlinear(&grid, &phys[0], &spec[0], sigma, keep)])
    };
    let mut record = |t: f64, phys: Vec<Vec<C64>>, _w: &[Vec<C64>]| -> Result<()> {
        let u = Field::from_vec(&grid, phys.into_iter().next().unwrap_or_default());
        traj.records.push(invariant_record(t, &u, p));
        traj.times.push(t);
        traj.snapshots.push(u);
        Ok(())
    };
    IfRk4::new(u0.grid(), cfg).run(&[u0.values().to_vec()], &mut nonlinear, &mut record)?;
    Ok(traj)
}

/// One evaluation of the external terms of a forced gauged system.
#[derive(Clone, Debug)]
pub struct ForcingSample {
    /// Background `Ŵ(t)`; the system becomes `F(η+Ŵ) − F(Ŵ) + Ĥ`.
    pub background: Option<StatePair>,
    /// Source `Ĥ(t)`.
    pub source: Option<StatePair>,
}

/// Time-indexed forcing evaluated at the Runge-Kutta stage times.
pub trait Forcing {
    fn sample(&self, t: f64) -> Result<ForcingSample>;
}

/// `Lη = F(η)` right-hand side on raw samples, dealiased in spectral space.
fn system_rhs_spectral(
    grid: &Grid,
    phi: &[C64],
    psi: &[C64],
    sigma: f64,
    keep: f64,
) -> (Vec<C64>, Vec<C64>) {
    let (mut pv, mut qv) = system_nonlinearity_raw(grid, phi, psi, sigma);
    grid.fft_in_place(&mut pv);
    grid.fft_in_place(&mut qv);
    mask_spectrum(grid, &mut pv, keep);
    mask_spectrum(grid, &mut qv, keep);
    (pv, qv)
}

/// Integrates `Lη = F(η)` (or, with `forcing`, `Lη = F(η+Ŵ) − F(Ŵ) + Ĥ`),
/// i.e. `η_t = i η_xx − i·RHS`.
pub fn evolve_gauged(
    eta0: &StatePair,
    cfg: &StepperConfig,
    p: &ModelParams,
    forcing: Option<&dyn Forcing>,
) -> Result<PairTrajectory> {
    let mut traj = PairTrajectory::default();
    evolve_gauged_with(eta0, cfg, p, forcing, &mut |t, eta, record, _w| {
        traj.times.push(t);
        traj.records.push(record);
        traj.snapshots.push(eta);
        Ok(())
    })?;
    Ok(traj)
}

/// As [`evolve_gauged`], streaming each recorded state (and its
/// interaction-picture spectra relative to `t_start`) to `sink`.
pub(crate) fn evolve_gauged_with(
    eta0: &StatePair,
    cfg: &StepperConfig,
    p: &ModelParams,
    forcing: Option<&dyn Forcing>,
    sink: &mut dyn FnMut(f64, StatePair, PairRecord, &[Vec<C64>]) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    p.validate()?;
    check_system_sigma(p.sigma)?;
    if !eta0.is_finite() {
        return Err(Error::InvalidParameter("initial pair is not finite".into()));
    }
    let grid = eta0.grid().clone();
    let keep = cfg.dealias_fraction;
    let sigma = p.sigma;
    let n = grid.n_points();

    let mut nonlinear = |t: f64, phys: &[Vec<C64>], _spec: &[Vec<C64>]| -> Result<Vec<Vec<C64>>> {
        let (phi, psi) = (&phys[0], &phys[1]);
        let (mut rp, mut rq) = match forcing {
            None => system_rhs_spectral(&grid, phi, psi, sigma, keep),
            Some(f) => {
                let sample = f.sample(t)?;
                let (mut rp, mut rq) = match &sample.background {
                    None => system_rhs_spectral(&grid, phi, psi, sigma, keep),
                    Some(bg) => {
                        let shifted_phi: Vec<C64> =
                            phi.iter().zip(bg.phi.values()).map(|(a, b)| a + b).collect();
                        let shifted_psi: Vec<C64> =
                            psi.iter().zip(bg.psi.values()).map(|(a, b)| a + b).collect();
                        let (ap, aq) =
                            system_rhs_spectral(&grid, &shifted_phi, &shifted_psi, sigma, keep);
                        let (bp, bq) = system_rhs_spectral(
                            &grid,
                            bg.phi.values(),
                            bg.psi.values(),
                            sigma,
                            keep,
                        );
                        (
                            ap.iter().zip(&bp).map(|(a, b)| a - b).collect::<Vec<_>>(),
                            aq.iter().zip(&bq).map(|(a, b)| a - b).collect::<Vec<_>>(),
                        )
                    }
                };
                if let Some(src) = &sample.source {
                    let sp = grid.fft(src.phi.values());
                    let sq = grid.fft(src.psi.values());
                    for j in 0..n {
                        rp[j] += sp[j];
                        rq[j] += sq[j];
                    }
                }
                (rp, rq)
            }
        };
        // η_t = i η_xx − i RHS
        for j in 0..n {
            rp[j] *= -I;
            rq[j] *= -I;
        }
        Ok(vec![rp, rq])
    };

    let mut record = |t: f64, phys: Vec<Vec<C64>>, w: &[Vec<C64>]| -> Result<()> {
        let mut it = phys.into_iter();
        let phi = Field::from_vec(&grid, it.next().unwrap_or_default());
        let psi = Field::from_vec(&grid, it.next().unwrap_or_default());
        let offset = match forcing {
            Some(f) => f.sample(t)?.background.map(|bg| bg.phi),
            None => None,
        };
        let defect = relation_defect(
            &grid,
            phi.values(),
            psi.values(),
            offset.as_ref().map(|h| h.values()),
            sigma,
        );
        let record = PairRecord {
            t,
            norms: PairNorms {
                phi: norms(&phi),
                psi: norms(&psi),
            },
            relation_residual: norms_of(&grid, &defect).l2,
            boundary_mass: boundary_mass(&phi),
        };
        sink(t, StatePair { phi, psi }, record, w)
    };
    IfRk4::new(eta0.grid(), cfg).run(
        &[eta0.phi.values().to_vec(), eta0.psi.values().to_vec()],
        &mut nonlinear,
        &mut record,
    )
}

/// `M(t) = ‖u(t) − w(t)‖²_{L²}` at each common recorded time.
pub fn pair_difference_monitor<R1, R2>(
    traj_u: &Trajectory<Field, R1>,
    traj_w: &Trajectory<Field, R2>,
) -> Result<Vec<f64>> {
    if traj_u.len() != traj_w.len() {
        return Err(Error::GridMismatch(format!(
            "trajectories have {} and {} records",
            traj_u.len(),
            traj_w.len()
        )));
    }
    traj_u
        .times
        .iter()
        .zip(&traj_w.times)
        .zip(traj_u.snapshots.iter().zip(&traj_w.snapshots))
        .map(|((ta, tb), (a, b))| {
            if (ta - tb).abs() > 1e-9 * (1.0 + ta.abs()) {
                return Err(Error::GridMismatch(format!("recorded times differ: {ta} vs {tb}")));
            }
            if !a.same_grid(b) {
                return Err(Error::GridMismatch("snapshots live on different grids".into()));
            }
            Ok(norms(&(a - b)).l2.powi(2))
        })
        .collect()
}

/// Which flow a self-convergence study integrates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// Free flow only.
    Linear,
    /// gDNLS from a Gaussian.
    Gdnls,
    /// Gauged system from the gauge image of a Gaussian.
    Gauged,
}

/// A fixed smooth problem for self-convergence studies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceProblem {
    pub kind: ProblemKind,
    pub sigma: f64,
    pub amplitude: f64,
    pub n_points: usize,
    pub domain_length: f64,
    pub t_end: f64,
    pub dealias_fraction: f64,
}

impl ConvergenceProblem {
    pub fn gdnls(sigma: f64, amplitude: f64) -> Self {
        ConvergenceProblem {
            kind: ProblemKind::Gdnls,
            sigma,
            amplitude,
            n_points: 256,
            domain_length: 40.0,
            t_end: 1.0,
            dealias_fraction: 0.5,
        }
    }

    pub fn gauged(sigma: f64, amplitude: f64) -> Self {
        ConvergenceProblem {
            kind: ProblemKind::Gauged,
            ..Self::gdnls(sigma, amplitude)
        }
    }

    pub fn linear() -> Self {
        ConvergenceProblem {
            kind: ProblemKind::Linear,
            ..Self::gdnls(1.0, 1.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ObservedOrder {
    /// Differences between refinements are at roundoff level.
    Exact,
    Order(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub dt0: f64,
    /// `‖u_{dt} − u_{dt/2}‖` and `‖u_{dt/2} − u_{dt/4}‖` at the final time.
    pub differences: (f64, f64),
    pub order: ObservedOrder,
}

/// Runs the problem with `dt0`, `dt0/2`, `dt0/4` and reports
/// `log₂(‖u_{dt0} − u_{dt0/2}‖ / ‖u_{dt0/2} − u_{dt0/4}‖)`.
pub fn self_convergence_order(problem: &ConvergenceProblem, dt0: f64) -> Result<ConvergenceReport> {
    let grid = crate::spectral::make_grid(problem.n_points, problem.domain_length)?;
    let p = ModelParams::new(problem.sigma, 1.0);
    let u0 = Field::from_real_fn(&grid, |x| problem.amplitude * (-x * x).exp());
    let finals: Vec<Vec<C64>> = [dt0, dt0 / 2.0, dt0 / 4.0]
        .iter()
        .map(|&dt| {
            let cfg = StepperConfig {
                dt,
                t_start: 0.0,
                t_end: problem.t_end,
                record_every: usize::MAX,
                dealias_fraction: problem.dealias_fraction,
                max_linf_growth: 1e6,
                linear_only: problem.kind == ProblemKind::Linear,
            };
            match problem.kind {
                ProblemKind::Linear | ProblemKind::Gdnls => {
                    let traj = evolve_gdnls(&u0, &cfg, &p)?;
                    Ok(traj.snapshots.last().unwrap().values().to_vec())
                }
                ProblemKind::Gauged => {
                    let eta0 = crate::gauge::gauge_pair(&u0, &p);
                    let traj = evolve_gauged(&eta0, &cfg, &p, None)?;
                    let last = traj.snapshots.last().unwrap();
                    Ok(last
                        .phi
                        .values()
                        .iter()
                        .chain(last.psi.values())
                        .copied()
                        .collect())
                }
            }
        })
        .collect::<Result<_>>()?;
    let diff = |a: &[C64], b: &[C64]| {
        (a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() * grid.dx()).sqrt()
    };
    let scale = (finals[2].iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.dx()).sqrt();
    let e1 = diff(&finals[0], &finals[1]);
    let e2 = diff(&finals[1], &finals[2]);
    let roundoff = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let order = if e1 <= roundoff || e2 <= roundoff {
        ObservedOrder::Exact
    } else {
        ObservedOrder::Order((e1 / e2).log2())
    };
    Ok(ConvergenceReport {
        dt0,
        differences: (e1, e2),
        order,
    })
}
