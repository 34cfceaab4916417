//! Seeded random smooth fields for calibration runs and property checks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::gauge::{lipschitz_ratio, StatePair};
use crate::model::ModelParams;
use crate::spectral::{norms, Field, Grid, C64};

/// Sum of three complex Gaussian bumps with random centres, widths, phases
/// and carrier wavenumbers, rescaled to `‖·‖_{H¹} = h1_norm`.
pub fn smooth_bump_field<R: Rng + ?Sized>(grid: &Arc<Grid>, rng: &mut R, h1_norm: f64) -> Field {
    let reach = (0.15 * grid.domain_length()).min(5.0);
    let bumps: Vec<(f64, f64, C64, f64)> = (0..3)
        .map(|_| {
            let centre = rng.gen_range(-reach..reach);
            let width = rng.gen_range(0.5..2.0);
            let amp = C64::from_polar(rng.gen_range(0.2..1.0), rng.gen_range(0.0..std::f64::consts::TAU));
            let carrier = rng.gen_range(-1.5..1.5);
            (centre, width, amp, carrier)
        })
        .collect();
    let raw = Field::from_fn(grid, |x| {
        bumps
            .iter()
            .map(|&(c, w, a, k)| a * (-((x - c) / w).powi(2)).exp() * C64::from_polar(1.0, k * x))
            .sum()
    });
    let scale = h1_norm / norms(&raw).h1;
    &raw * scale
}

/// Independent random `(φ, ψ)` with combined `H¹` norm drawn in `(0, max_h1]`.
pub fn random_smooth_pair<R: Rng + ?Sized>(grid: &Arc<Grid>, rng: &mut R, max_h1: f64) -> StatePair {
    let total = rng.gen_range(0.05..=1.0) * max_h1;
    let split = rng.gen_range(0.2..0.8_f64);
    StatePair {
        phi: smooth_bump_field(grid, rng, total * split.sqrt()),
        psi: smooth_bump_field(grid, rng, total * (1.0 - split).sqrt()),
    }
}

/// Frozen constant for the unit-constant difference estimate at `σ = 3`: the
/// maximum ratio over 200 pairs drawn with [`LIPSCHITZ_CALIBRATION_SEED`] on
/// `n = 512, L = 40` was 0.907 (0.945 for seed 7), rounded up.
pub const LIPSCHITZ_CONSTANT: f64 = 0.95;
pub const LIPSCHITZ_CALIBRATION_SEED: u64 = 20240611;

/// Maximum and median of the difference-estimate ratio over seeded pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LipschitzCalibration {
    pub pairs: usize,
    pub seed: u64,
    pub max_ratio: f64,
    pub median_ratio: f64,
}

/// Evaluates [`lipschitz_ratio`] on `pairs` seeded pairs of random smooth
/// states with `‖η‖_{H¹×H¹} ≤ max_h1`.
pub fn calibrate_lipschitz(
    grid: &Arc<Grid>,
    p: &ModelParams,
    seed: u64,
    pairs: usize,
    max_h1: f64,
) -> Result<LipschitzCalibration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let a = random_smooth_pair(grid, &mut rng, max_h1);
        let b = random_smooth_pair(grid, &mut rng, max_h1);
        ratios.push(lipschitz_ratio(&a, &b, p)?);
    }
    ratios.sort_by(f64::total_cmp);
    Ok(LipschitzCalibration {
        pairs,
        seed,
        max_ratio: ratios.last().copied().unwrap_or(0.0),
        median_ratio: ratios.get(pairs / 2).copied().unwrap_or(0.0),
    })
}
