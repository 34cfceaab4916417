//! Ordinary least squares for log-log decay exponents.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    pub points: usize,
}

pub fn least_squares(points: &[(f64, f64)]) -> Result<LineFit> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "a line fit needs at least two points, got {n}"
        )));
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residual = (points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / nf)
        .sqrt();
    Ok(LineFit {
        slope,
        intercept,
        residual,
        points: n,
    })
}

/// A decay-exponent fit `log y ≈ slope · log t + intercept` with its window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub points: usize,
    pub window: (f64, f64),
}

/// Fits `log y` against `log t` over samples with `t` in `window` (up to a
/// relative slack of `1e-12` at both ends) and positive finite `y`.
pub fn loglog_fit(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<RateFit> {
    let (lo, hi) = (window.0 * (1.0 - 1e-12), window.1 * (1.0 + 1e-12));
    let points: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(&t, &y)| t >= lo && t <= hi && t > 0.0 && y > 0.0 && y.is_finite())
        .map(|(&t, &y)| (t.ln(), y.ln()))
        .collect();
    let line = least_squares(&points)?;
    Ok(RateFit {
        slope: line.slope,
        intercept: line.intercept,
        residual: line.residual,
        points: line.points,
        window,
    })
}

/// `count` geometrically spaced times covering `[start, end]`.
pub fn geometric_times(start: f64, end: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![start];
    }
    let ratio = (end / start).ln() / (count - 1) as f64;
    let mut times: Vec<f64> = (0..count).map(|j| start * (ratio * j as f64).exp()).collect();
    times[count - 1] = end;
    times
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let times = geometric_times(10.0, 100.0, 9);
        let values: Vec<f64> = times.iter().map(|t| 3.0 * t.powf(-1.5)).collect();
        let fit = loglog_fit(&times, &values, (10.0, 100.0)).unwrap();
        assert!((fit.slope + 1.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert_eq!(fit.points, 9);
    }

    #[test]
    fn window_and_degenerate_input() {
        let times = [1.0, 2.0, 4.0, 8.0];
        let values = [1.0, 0.5, 0.0, 0.125];
        let fit = loglog_fit(&times, &values, (1.0, 8.0)).unwrap();
        assert_eq!(fit.points, 3);
        assert!(loglog_fit(&times, &values, (3.0, 5.0)).is_err());
        assert!(least_squares(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn geometric_spacing() {
        let t = geometric_times(8.0, 64.0, 4);
        assert!((t[1] - 16.0).abs() < 1e-12 && (t[3] - 64.0).abs() < 1e-12);
    }
}
