//! Periodic Fourier collocation on a uniform grid.
//!
//! The real line is truncated to `[-L/2, L/2)`. Fields are complex samples at
//! the grid nodes; spectral operators act through an unnormalized forward FFT
//! and a `1/n`-normalized inverse. Quadratures are the trapezoidal rule, which
//! on a periodic grid coincides with the Parseval sum.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Default relative smallness required of an integrand at the left boundary
/// before it is integrated from `-L/2` as a stand-in for `-inf`.
pub const DEFAULT_BOUNDARY_RATIO: f64 = 1e-8;

/// Uniform periodic mesh on `[-L/2, L/2)` with its FFT-ordered wavenumbers.
pub struct Grid {
    n_points: usize,
    domain_length: f64,
    dx: f64,
    nodes: Vec<f64>,
    wavenumbers: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n_points", &self.n_points)
            .field("domain_length", &self.domain_length)
            .field("dx", &self.dx)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n_points == other.n_points && self.domain_length == other.domain_length
    }
}

/// Builds a grid of `n_points` nodes on a domain of length `domain_length`.
pub fn make_grid(n_points: usize, domain_length: f64) -> Result<Arc<Grid>> {
    if n_points < 8 || !n_points.is_power_of_two() {
        return Err(Error::InvalidGrid(format!(
            "n_points must be a power of two >= 8, got {n_points}"
        )));
    }
    if !(domain_length.is_finite() && domain_length > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "domain_length must be positive, got {domain_length}"
        )));
    }
    let dx = domain_length / n_points as f64;
    let nodes = (0..n_points)
        .map(|j| -0.5 * domain_length + j as f64 * dx)
        .collect();
    let dk = 2.0 * PI / domain_length;
    let half = n_points / 2;
    let wavenumbers = (0..n_points)
        .map(|j| {
            let m = if j < half {
                j as isize
            } else {
                j as isize - n_points as isize
            };
            m as f64 * dk
        })
        .collect();
    let mut planner = FftPlanner::new();
    Ok(Arc::new(Grid {
        n_points,
        domain_length,
        dx,
        nodes,
        wavenumbers,
        forward: planner.plan_fft_forward(n_points),
        inverse: planner.plan_fft_inverse(n_points),
    }))
}

impl Grid {
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Magnitude of the Nyquist wavenumber, `pi / dx`.
    pub fn k_max(&self) -> f64 {
        PI / self.dx
    }

    pub fn nyquist_index(&self) -> usize {
        self.n_points / 2
    }

    /// Unnormalized forward transform.
    pub fn fft(&self, values: &[C64]) -> Vec<C64> {
        let mut buf = values.to_vec();
        self.fft_in_place(&mut buf);
        buf
    }

    pub fn fft_in_place(&self, buf: &mut [C64]) {
        let mut scratch = vec![C64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        self.forward.process_with_scratch(buf, &mut scratch);
    }

    /// Inverse transform including the `1/n` normalization.
    pub fn ifft_in_place(&self, buf: &mut [C64]) {
        let mut scratch = vec![C64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        self.inverse.process_with_scratch(buf, &mut scratch);
        let scale = 1.0 / self.n_points as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    pub fn ifft(&self, spectrum: &[C64]) -> Vec<C64> {
        let mut buf = spectrum.to_vec();
        self.ifft_in_place(&mut buf);
        buf
    }

    /// Applies a Fourier multiplier `symbol(k)` to physical-space samples.
    pub fn apply_multiplier(&self, values: &[C64], symbol: impl Fn(usize, f64) -> C64) -> Vec<C64> {
        let mut buf = self.fft(values);
        for (j, (v, &k)) in buf.iter_mut().zip(&self.wavenumbers).enumerate() {
            *v *= symbol(j, k);
        }
        self.ifft_in_place(&mut buf);
        buf
    }

    /// `i k` with the Nyquist mode zeroed.
    pub(crate) fn derivative_symbol(&self, j: usize, k: f64) -> C64 {
        if j == self.nyquist_index() {
            C64::new(0.0, 0.0)
        } else {
            C64::new(0.0, k)
        }
    }

    pub(crate) fn derivative_values(&self, values: &[C64]) -> Vec<C64> {
        self.apply_multiplier(values, |j, k| self.derivative_symbol(j, k))
    }

    pub(crate) fn dealias_values(&self, values: &[C64], keep_fraction: f64) -> Vec<C64> {
        if keep_fraction >= 1.0 {
            return values.to_vec();
        }
        let cutoff = keep_fraction * self.k_max();
        self.apply_multiplier(values, |_, k| {
            if k.abs() > cutoff {
                C64::new(0.0, 0.0)
            } else {
                C64::new(1.0, 0.0)
            }
        })
    }

    /// Spectrally accurate `∫_{-L/2}^{x_j} f dy`, `F(x_0) = 0`.
    pub(crate) fn primitive_values(&self, values: &[C64]) -> Vec<C64> {
        let mut spectrum = self.fft(values);
        let mean = spectrum[0] / self.n_points as f64;
        spectrum[0] = C64::new(0.0, 0.0);
        let nyquist = self.nyquist_index();
        for (j, (s, &k)) in spectrum.iter_mut().zip(&self.wavenumbers).enumerate() {
            if j == nyquist || k == 0.0 {
                *s = C64::new(0.0, 0.0);
            } else {
                *s /= C64::new(0.0, k);
            }
        }
        self.ifft_in_place(&mut spectrum);
        let origin = spectrum[0];
        spectrum
            .iter()
            .enumerate()
            .map(|(j, &g)| mean * (j as f64 * self.dx) + g - origin)
            .collect()
    }

    pub(crate) fn primitive_real(&self, values: &[f64]) -> Vec<f64> {
        let complex: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.primitive_values(&complex).into_iter().map(|c| c.re).collect()
    }

    /// Trapezoidal quadrature of samples over the periodic cell.
    pub fn integrate(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        values.into_iter().sum::<f64>() * self.dx
    }
}

/// Cumulative trapezoid anchored at the left boundary, `F(x_0) = 0`.
/// Second order; kept as a reference for the spectral primitive.
pub fn cumulative_trapezoid(values: &[f64], dx: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dx * (w[0] + w[1]);
        out.push(acc);
    }
    out.truncate(values.len());
    out
}

/// Complex samples on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<C64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.n_points()
            )));
        }
        Ok(Field { grid, values })
    }

    pub(crate) fn from_vec(grid: &Arc<Grid>, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_points());
        Field {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::from_vec(grid, vec![C64::new(0.0, 0.0); grid.n_points()])
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> C64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self::from_vec(grid, values)
    }

    pub fn from_real_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |x| C64::new(f(x), 0.0))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Field {
        Field::from_vec(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(C64, C64) -> C64) -> Field {
        debug_assert!(self.same_grid(other));
        Field::from_vec(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn conj(&self) -> Field {
        self.map(|v| v.conj())
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Trapezoidal `∫ f dx` over the cell.
    pub fn integral(&self) -> C64 {
        self.values.iter().sum::<C64>() * self.grid.dx()
    }

    /// `∫ conj(self) other dx`.
    pub fn inner(&self, other: &Field) -> C64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            * self.grid.dx()
    }

    /// Conjugate reflection `x -> conj(f(-x))` on the periodic grid.
    pub fn conj_reflect(&self) -> Field {
        let n = self.len();
        let values = (0..n)
            .map(|j| self.values[(n - j) % n].conj())
            .collect();
        Field::from_vec(&self.grid, values)
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|v| -v)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.map(|v| v * rhs)
    }
}

impl Mul<C64> for &Field {
    type Output = Field;
    fn mul(self, rhs: C64) -> Field {
        self.map(|v| v * rhs)
    }
}

/// `‖·‖_{L²}`, `‖·‖_{H¹}` and `‖·‖_{L^∞}` of a field.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct NormTriple {
    pub l2: f64,
    pub h1: f64,
    pub linf: f64,
}

/// Fourier-collocation derivative (Nyquist mode zeroed).
pub fn spectral_derivative(f: &Field) -> Field {
    Field::from_vec(f.grid(), f.grid().derivative_values(f.values()))
}

/// Exact free Schrödinger flow `e^{it∂ₓ²}`: mode `k` picks up `exp(-i k² t)`.
pub fn free_propagate(f: &Field, t: f64) -> Field {
    if t == 0.0 {
        return f.clone();
    }
    let values = f
        .grid()
        .apply_multiplier(f.values(), |_, k| C64::from_polar(1.0, -k * k * t));
    Field::from_vec(f.grid(), values)
}

/// Reported when an integrand anchored at `-L/2` is not small there.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct BoundaryWarning {
    pub left_value: f64,
    pub threshold: f64,
}

/// Checks `|f(-L/2)| <= ratio * max|f|`.
pub fn check_left_boundary(values: &[f64], ratio: f64) -> Option<BoundaryWarning> {
    let peak = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let left = values.first().map_or(0.0, |v| v.abs());
    let threshold = ratio * peak;
    (left > threshold).then_some(BoundaryWarning {
        left_value: left,
        threshold,
    })
}

/// `∫_{-L/2}^{x_j} f dy` with the default boundary check.
pub fn cumulative_primitive(f: &Field) -> (Field, Option<BoundaryWarning>) {
    cumulative_primitive_with(f, DEFAULT_BOUNDARY_RATIO)
}

/// Anchored primitive: the mean of `f` integrates exactly as a ramp and the
/// zero-mean remainder through the periodic spectral primitive `f̂_k / (ik)`.
pub fn cumulative_primitive_with(f: &Field, ratio: f64) -> (Field, Option<BoundaryWarning>) {
    let warning = check_left_boundary(&f.modulus(), ratio);
    let values = f.grid().primitive_values(f.values());
    (Field::from_vec(f.grid(), values), warning)
}

/// Zeros every mode with `|k| > keep_fraction * k_max`.
pub fn dealias(f: &Field, keep_fraction: f64) -> Result<Field> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    Ok(Field::from_vec(
        f.grid(),
        f.grid().dealias_values(f.values(), keep_fraction),
    ))
}

/// Parseval `L²`, Fourier-multiplier `H¹` and sup norms.
pub fn norms(f: &Field) -> NormTriple {
    norms_of(f.grid(), f.values())
}

pub(crate) fn norms_of(grid: &Grid, values: &[C64]) -> NormTriple {
    let spectrum = grid.fft(values);
    let weight = grid.dx() / grid.n_points() as f64;
    let (mut l2, mut h1) = (0.0, 0.0);
    for (c, &k) in spectrum.iter().zip(grid.wavenumbers()) {
        let p = c.norm_sqr();
        l2 += p;
        h1 += (1.0 + k * k) * p;
    }
    NormTriple {
        l2: (l2 * weight).sqrt(),
        h1: (h1 * weight).sqrt(),
        linf: values.iter().map(|v| v.norm()).fold(0.0, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_wave(grid: &Arc<Grid>, k0: f64) -> Field {
        Field::from_fn(grid, |x| C64::from_polar(1.0, k0 * x))
    }

    fn l2_diff(a: &Field, b: &Field) -> f64 {
        norms(&(a - b)).l2
    }

    #[test]
    fn grid_wavenumbers_follow_fft_ordering() {
        let g = make_grid(8, 2.0 * PI).unwrap();
        assert!((g.dx() - PI / 4.0).abs() < 1e-15);
        let expected = [0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0];
        for (k, e) in g.wavenumbers().iter().zip(expected) {
            assert!((k - e).abs() < 1e-14);
        }
        let g = make_grid(16, 32.0).unwrap();
        assert!((g.wavenumbers()[1] - 0.19634954084936207).abs() < 1e-12);
        let total: f64 = (0..g.n_points()).map(|_| g.dx()).sum();
        assert!((total - 32.0).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(make_grid(10, 1.0).is_err());
        assert!(make_grid(4, 1.0).is_err());
        assert!(make_grid(16, 0.0).is_err());
        assert!(make_grid(16, -3.0).is_err());
    }

    #[test]
    fn derivative_of_plane_wave_and_constant() {
        let g = make_grid(64, 2.0 * PI).unwrap();
        let f = plane_wave(&g, 5.0);
        let df = spectral_derivative(&f);
        let expected = &f * C64::new(0.0, 5.0);
        assert!(l2_diff(&df, &expected) < 1e-12);

        let c = Field::from_fn(&g, |_| C64::new(3.0, -1.0));
        assert!(norms(&spectral_derivative(&c)).linf < 1e-13);
    }

    #[test]
    fn derivative_of_gaussian() {
        let g = make_grid(512, 40.0).unwrap();
        let f = Field::from_real_fn(&g, |x| (-x * x).exp());
        let exact = Field::from_real_fn(&g, |x| -2.0 * x * (-x * x).exp());
        let rel = l2_diff(&spectral_derivative(&f), &exact) / norms(&exact).l2;
        assert!(rel < 1e-10, "rel = {rel:e}");
    }

    #[test]
    fn free_propagation_of_plane_wave_and_identity() {
        let g = make_grid(64, 2.0 * PI).unwrap();
        let k0 = 3.0;
        let t = 0.7;
        let f = plane_wave(&g, k0);
        let out = free_propagate(&f, t);
        let exact = Field::from_fn(&g, |x| C64::from_polar(1.0, k0 * x - k0 * k0 * t));
        assert!(l2_diff(&out, &exact) < 1e-12);
        assert_eq!(free_propagate(&f, 0.0).values(), f.values());
    }

    #[test]
    fn free_propagation_of_gaussian_matches_closed_form() {
        // exp(-x²) evolves to (1+4it)^{-1/2} exp(-x²/(1+4it)).
        let g = make_grid(1024, 80.0).unwrap();
        let f = Field::from_real_fn(&g, |x| (-x * x).exp());
        let t = 1.0;
        let exact = Field::from_fn(&g, |x| {
            let d = C64::new(1.0, 4.0 * t);
            (-(x * x) / d).exp() / d.sqrt()
        });
        let err = l2_diff(&free_propagate(&f, t), &exact);
        assert!(err < 1e-10, "err = {err:e}");
    }

    #[test]
    fn primitive_of_sech_squared() {
        let g = make_grid(512, 40.0).unwrap();
        let f = Field::from_real_fn(&g, |x| 1.0 / x.cosh().powi(2));
        let (prim, warn) = cumulative_primitive(&f);
        assert!(warn.is_none());
        assert_eq!(prim.values()[0], C64::new(0.0, 0.0));
        let right = prim.values().last().unwrap().re;
        assert!((right - 2.0).abs() < 1e-8, "right = {right}");

        let zero = Field::zeros(&g);
        assert!(cumulative_primitive(&zero).0.max_abs() == 0.0);
    }

    #[test]
    fn primitive_of_bump_is_second_order() {
        let bump = |x: f64| {
            if x.abs() < 1.0 {
                (1.0 - x * x).powi(3)
            } else {
                0.0
            }
        };
        let total = 32.0 / 35.0;
        let err = |n: usize| {
            let g = make_grid(n, 8.0).unwrap();
            let f = Field::from_real_fn(&g, bump);
            (cumulative_primitive(&f).0.values().last().unwrap().re - total).abs()
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e1 < 1e-2);
        assert!(e2 <= e1 / 3.5 || e2 < 1e-12, "e1 = {e1:e}, e2 = {e2:e}");
    }

    #[test]
    fn primitive_then_derivative_recovers_field() {
        let g = make_grid(256, 30.0).unwrap();
        // zero total integral, so the primitive is itself periodic
        let f = Field::from_fn(&g, |x| C64::new(x * (-x * x).exp(), (1.0 - 2.0 * x * x) * (-x * x).exp()));
        let (prim, _) = cumulative_primitive(&f);
        let back = spectral_derivative(&prim);
        let err = norms(&(&back - &f)).l2;
        assert!(err < 1e-10, "err = {err:e}");
    }

    #[test]
    fn primitive_agrees_with_trapezoid_to_second_order() {
        let err = |n: usize| {
            let g = make_grid(n, 30.0).unwrap();
            let f = Field::from_real_fn(&g, |x| (-x * x).exp() * (1.0 + x.sin()));
            let spectral = cumulative_primitive(&f).0;
            let re: Vec<f64> = f.values().iter().map(|v| v.re).collect();
            let trap = cumulative_trapezoid(&re, g.dx());
            spectral
                .values()
                .iter()
                .zip(trap)
                .map(|(a, b)| (a.re - b).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(128), err(256));
        assert!(e1 < 1e-2 && e2 < e1 / 3.5, "e1 {e1:e} e2 {e2:e}");
    }

    #[test]
    fn primitive_warns_when_boundary_is_not_small() {
        let g = make_grid(64, 10.0).unwrap();
        let f = Field::from_fn(&g, |_| C64::new(1.0, 0.0));
        assert!(cumulative_primitive(&f).1.is_some());
    }

    #[test]
    fn dealias_cases() {
        let g = make_grid(32, 2.0 * PI).unwrap();
        let f = Field::from_fn(&g, |x| C64::new((3.0 * x).sin(), (11.0 * x).cos()));
        assert!(l2_diff(&dealias(&f, 1.0).unwrap(), &f) == 0.0);
        let nyq = plane_wave(&g, -g.k_max());
        assert!(dealias(&nyq, 0.5).unwrap().max_abs() < 1e-14);
        let once = dealias(&f, 0.5).unwrap();
        let twice = dealias(&once, 0.5).unwrap();
        assert!(l2_diff(&once, &twice) < 1e-14);
        assert!(dealias(&f, 0.0).is_err());
        assert!(dealias(&f, 1.5).is_err());
    }

    #[test]
    fn norm_cases() {
        let g = make_grid(128, 20.0).unwrap();
        let zero = norms(&Field::zeros(&g));
        assert_eq!(zero, NormTriple::default());

        let k0 = g.wavenumbers()[3];
        let n = norms(&plane_wave(&g, k0));
        assert!((n.l2 - 20f64.sqrt()).abs() < 1e-12);
        assert!((n.h1 - (20.0 * (1.0 + k0 * k0)).sqrt()).abs() < 1e-12);
        assert!((n.linf - 1.0).abs() < 1e-14);

        let g = make_grid(512, 40.0).unwrap();
        let gauss = norms(&Field::from_real_fn(&g, |x| (-x * x).exp()));
        assert!((gauss.l2 - (PI / 2.0).powf(0.25)).abs() < 1e-10);
    }

    #[test]
    fn conj_reflect_maps_x_to_minus_x() {
        let g = make_grid(16, 8.0).unwrap();
        let f = Field::from_fn(&g, |x| C64::new(x, x * x));
        let r = f.conj_reflect();
        for (j, &x) in g.nodes().iter().enumerate().skip(1) {
            assert!((r.values()[j] - C64::new(-x, -x * x)).norm() < 1e-12);
        }
    }
}
