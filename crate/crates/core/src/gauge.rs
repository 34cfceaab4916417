//! Gauge transforms and the derivative-free system they produce.
//!
//! With `θ(x) = ½ ∫_{-L/2}^x |u|^{2σ} dy`, the pair `φ = e^{iθ} u`,
//! `ψ = e^{iθ} u_x` satisfies `Lφ = P(φ,ψ)`, `Lψ = Q(φ,ψ)` where
//! `L = i∂_t + ∂ₓ²` and no derivative of the unknowns appears on the right.

use std::ops::{Add, Sub};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{modulus_pow, ModelParams};
use crate::spectral::{
    check_left_boundary, cumulative_trapezoid, norms, BoundaryWarning, Field, Grid, NormTriple,
    C64,
};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Below this modulus the weight `|φ|^{2(σ-2)}` is taken as zero (σ > 2).
const VANISHING_MODULUS: f64 = 1e-150;

/// A pair of fields `(φ, ψ)` on one grid.
#[derive(Clone, Debug)]
pub struct StatePair {
    pub phi: Field,
    pub psi: Field,
}

/// Norms of both components of a [`StatePair`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PairNorms {
    pub phi: NormTriple,
    pub psi: NormTriple,
}

impl PairNorms {
    /// `(‖φ‖²_{H¹} + ‖ψ‖²_{H¹})^{1/2}`.
    pub fn h1(&self) -> f64 {
        self.phi.h1.hypot(self.psi.h1)
    }

    pub fn l2(&self) -> f64 {
        self.phi.l2.hypot(self.psi.l2)
    }

    pub fn linf(&self) -> f64 {
        self.phi.linf.max(self.psi.linf)
    }
}

impl StatePair {
    pub fn new(phi: Field, psi: Field) -> Result<Self> {
        if !phi.same_grid(&psi) {
            return Err(Error::GridMismatch("phi and psi live on different grids".into()));
        }
        Ok(StatePair { phi, psi })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        StatePair {
            phi: Field::zeros(grid),
            psi: Field::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.phi.grid()
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.psi.is_finite()
    }

    pub fn norms(&self) -> PairNorms {
        PairNorms {
            phi: norms(&self.phi),
            psi: norms(&self.psi),
        }
    }

    pub fn scale(&self, factor: f64) -> StatePair {
        StatePair {
            phi: &self.phi * factor,
            psi: &self.psi * factor,
        }
    }

    /// Applies `f` to each component.
    pub fn map(&self, f: impl Fn(&Field) -> Field) -> StatePair {
        StatePair {
            phi: f(&self.phi),
            psi: f(&self.psi),
        }
    }

    /// Pointwise `|η| = (|φ|² + |ψ|²)^{1/2}`.
    pub fn pointwise_modulus(&self) -> Vec<f64> {
        self.phi
            .values()
            .iter()
            .zip(self.psi.values())
            .map(|(a, b)| a.norm().hypot(b.norm()))
            .collect()
    }
}

impl Add for &StatePair {
    type Output = StatePair;
    fn add(self, rhs: &StatePair) -> StatePair {
        StatePair {
            phi: &self.phi + &rhs.phi,
            psi: &self.psi + &rhs.psi,
        }
    }
}

impl Sub for &StatePair {
    type Output = StatePair;
    fn sub(self, rhs: &StatePair) -> StatePair {
        StatePair {
            phi: &self.phi - &rhs.phi,
            psi: &self.psi - &rhs.psi,
        }
    }
}

/// `θ(x) = ½ ∫_{-L/2}^x |u|^{2σ} dy` sampled at the nodes.
pub(crate) fn gauge_phase_values(grid: &Grid, values: &[C64], sigma: f64) -> Vec<f64> {
    let density: Vec<f64> = values.iter().map(|&v| modulus_pow(v, 2.0 * sigma)).collect();
    let mut theta = grid.primitive_real(&density);
    for t in theta.iter_mut() {
        *t *= 0.5;
    }
    theta
}

/// Boundary check on the gauge integrand `|u|^{2σ}`.
pub fn gauge_boundary_warning(u: &Field, p: &ModelParams) -> Option<BoundaryWarning> {
    let density: Vec<f64> = u
        .values()
        .iter()
        .map(|&v| modulus_pow(v, 2.0 * p.sigma))
        .collect();
    check_left_boundary(&density, p.boundary_tolerance)
}

fn apply_phase(values: &[C64], theta: &[f64], sign: f64) -> Vec<C64> {
    values
        .iter()
        .zip(theta)
        .map(|(&v, &t)| v * C64::from_polar(1.0, sign * t))
        .collect()
}

/// `G₁(u) = e^{iθ} u`.
pub fn gauge_g1(u: &Field, p: &ModelParams) -> Field {
    let theta = gauge_phase_values(u.grid(), u.values(), p.sigma);
    Field::from_vec(u.grid(), apply_phase(u.values(), &theta, 1.0))
}

/// `G₂(u) = e^{iθ} ∂ₓu`.
pub fn gauge_g2(u: &Field, p: &ModelParams) -> Field {
    let grid = u.grid();
    let theta = gauge_phase_values(grid, u.values(), p.sigma);
    let u_x = grid.derivative_values(u.values());
    Field::from_vec(grid, apply_phase(&u_x, &theta, 1.0))
}

/// `(G₁(u), G₂(u))` sharing one phase evaluation.
pub fn gauge_pair(u: &Field, p: &ModelParams) -> StatePair {
    let grid = u.grid();
    let theta = gauge_phase_values(grid, u.values(), p.sigma);
    let u_x = grid.derivative_values(u.values());
    StatePair {
        phi: Field::from_vec(grid, apply_phase(u.values(), &theta, 1.0)),
        psi: Field::from_vec(grid, apply_phase(&u_x, &theta, 1.0)),
    }
}

/// `G₁⁻¹(v) = e^{-iθ(v)} v`; `|G₁(u)| = |u|` makes the phase computable from `v`.
pub fn gauge_inverse(v: &Field, p: &ModelParams) -> Field {
    let theta = gauge_phase_values(v.grid(), v.values(), p.sigma);
    Field::from_vec(v.grid(), apply_phase(v.values(), &theta, -1.0))
}

pub(crate) fn check_system_sigma(sigma: f64) -> Result<()> {
    if sigma == 1.0 || sigma >= 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "the gauged system needs sigma = 1 or sigma >= 2, got {sigma}"
        )))
    }
}

/// `|φ|^{2(σ-2)} Im(ψ² φ̄²)`, continuous at `φ = 0`.
#[inline]
fn nonlocal_density(phi: C64, psi: C64, sigma: f64) -> f64 {
    let im = (psi * psi * phi.conj() * phi.conj()).im;
    if sigma == 2.0 {
        im
    } else if phi.norm() < VANISHING_MODULUS {
        0.0
    } else {
        phi.norm_sqr().powf(sigma - 2.0) * im
    }
}

/// `(P(φ,ψ), Q(φ,ψ))` on raw samples, undealiased.
pub(crate) fn system_nonlinearity_raw(
    grid: &Grid,
    phi: &[C64],
    psi: &[C64],
    sigma: f64,
) -> (Vec<C64>, Vec<C64>) {
    let coupling = sigma * (sigma - 1.0);
    let integral = if coupling == 0.0 {
        vec![0.0; phi.len()]
    } else {
        let density: Vec<f64> = phi
            .iter()
            .zip(psi)
            .map(|(&a, &b)| nonlocal_density(a, b, sigma))
            .collect();
        grid.primitive_real(&density)
    };
    let mut p_out = Vec::with_capacity(phi.len());
    let mut q_out = Vec::with_capacity(phi.len());
    for ((&a, &b), &int) in phi.iter().zip(psi).zip(&integral) {
        let weight = modulus_pow(a, 2.0 * (sigma - 1.0));
        p_out.push(I * sigma * weight * a * a * b.conj() - coupling * a * int);
        q_out.push(-I * sigma * weight * b * b * a.conj() - coupling * b * int);
    }
    (p_out, q_out)
}

pub(crate) fn system_nonlinearity_values(
    grid: &Grid,
    phi: &[C64],
    psi: &[C64],
    sigma: f64,
    keep_fraction: f64,
) -> (Vec<C64>, Vec<C64>) {
    let (p_raw, q_raw) = system_nonlinearity_raw(grid, phi, psi, sigma);
    (
        grid.dealias_values(&p_raw, keep_fraction),
        grid.dealias_values(&q_raw, keep_fraction),
    )
}

/// `F(η) = (P(φ,ψ), Q(φ,ψ))`, each component dealiased with `keep_fraction`.
pub fn nonlinearity_f(eta: &StatePair, p: &ModelParams, keep_fraction: f64) -> Result<StatePair> {
    check_system_sigma(p.sigma)?;
    let grid = eta.grid();
    let (pv, qv) =
        system_nonlinearity_values(grid, eta.phi.values(), eta.psi.values(), p.sigma, keep_fraction);
    Ok(StatePair {
        phi: Field::from_vec(grid, pv),
        psi: Field::from_vec(grid, qv),
    })
}

/// `ψ̃ − ∂ₓφ̃ + (i/2)(|φ̃+h|^{2σ}(φ̃+h) − |h|^{2σ}h)` on raw samples.
pub(crate) fn relation_defect(
    grid: &Grid,
    phi: &[C64],
    psi: &[C64],
    h: Option<&[C64]>,
    sigma: f64,
) -> Vec<C64> {
    let phi_x = grid.derivative_values(phi);
    let zero = C64::new(0.0, 0.0);
    (0..phi.len())
        .map(|j| {
            let hj = h.map_or(zero, |h| h[j]);
            let total = phi[j] + hj;
            let cubic =
                total * modulus_pow(total, 2.0 * sigma) - hj * modulus_pow(hj, 2.0 * sigma);
            psi[j] - phi_x[j] + 0.5 * I * cubic
        })
        .collect()
}

/// `‖ψ̃ − [∂ₓφ̃ − (i/2)(|φ̃+h|^{2σ}(φ̃+h) − |h|^{2σ}h)]‖_{L²}`; with `h = 0`
/// this is the compatibility `ψ = ∂ₓφ − (i/2)|φ|^{2σ}φ`.
pub fn relation_residual(eta: &StatePair, h: Option<&Field>, p: &ModelParams) -> f64 {
    let grid = eta.grid();
    let defect = relation_defect(
        grid,
        eta.phi.values(),
        eta.psi.values(),
        h.map(|f| f.values()),
        p.sigma,
    );
    norms(&Field::from_vec(grid, defect)).l2
}

/// The partner `ψ = ∂ₓφ − (i/2)|φ|^{2σ}φ` that makes `(φ, ψ)` compatible.
pub fn compatible_partner(phi: &Field, p: &ModelParams) -> Field {
    let grid = phi.grid();
    let phi_x = grid.derivative_values(phi.values());
    let values = phi
        .values()
        .iter()
        .zip(phi_x)
        .map(|(&a, d)| d - 0.5 * I * a * modulus_pow(a, 2.0 * p.sigma))
        .collect();
    Field::from_vec(grid, values)
}

/// Largest pointwise ratio of `|F(η₁) − F(η₂)|` to the majorant
/// `|Δ|(|η₁|^{2σ} + |η₂|^{2σ} + ∫|η₁|^{2σ}) + |η₂| ∫ |Δ|(|η₁|^{2σ-1} + |η₂|^{2σ-1})`,
/// `Δ = η₁ − η₂`, with unit implicit constant. Nodes where both sides vanish
/// are skipped, as are nodes where the majorant is below `1e-10` of its peak.
pub fn lipschitz_ratio(eta1: &StatePair, eta2: &StatePair, p: &ModelParams) -> Result<f64> {
    if p.sigma <= 2.0 {
        return Err(Error::InvalidParameter(format!(
            "the difference estimate needs sigma > 2, got {}",
            p.sigma
        )));
    }
    let diff = eta1 - eta2;
    let delta = diff.pointwise_modulus();
    if delta.iter().all(|&d| d == 0.0) {
        return Err(Error::InvalidParameter(
            "lipschitz_ratio needs distinct pairs".into(),
        ));
    }
    let grid = eta1.grid();
    let dx = grid.dx();
    let s = p.sigma;
    let (p1, q1) = system_nonlinearity_raw(grid, eta1.phi.values(), eta1.psi.values(), s);
    let (p2, q2) = system_nonlinearity_raw(grid, eta2.phi.values(), eta2.psi.values(), s);
    let m1 = eta1.pointwise_modulus();
    let m2 = eta2.pointwise_modulus();

    let running = cumulative_trapezoid(&m1.iter().map(|m| m.powf(2.0 * s)).collect::<Vec<_>>(), dx);
    let cross: Vec<f64> = delta
        .iter()
        .zip(m1.iter().zip(&m2))
        .map(|(d, (a, b))| d * (a.powf(2.0 * s - 1.0) + b.powf(2.0 * s - 1.0)))
        .collect();
    let cross = cumulative_trapezoid(&cross, dx);

    let majorant: Vec<f64> = (0..delta.len())
        .map(|j| {
            delta[j] * (m1[j].powf(2.0 * s) + m2[j].powf(2.0 * s) + running[j]) + m2[j] * cross[j]
        })
        .collect();
    // nodes where the majorant is at roundoff level carry no information
    let floor = 1e-10 * majorant.iter().fold(0.0_f64, |a, &b| a.max(b));
    let mut ratio: f64 = 0.0;
    for (j, &rhs) in majorant.iter().enumerate() {
        if rhs > floor {
            let lhs = (p1[j] - p2[j]).norm().hypot((q1[j] - q2[j]).norm());
            ratio = ratio.max(lhs / rhs);
        }
    }
    Ok(ratio)
}
