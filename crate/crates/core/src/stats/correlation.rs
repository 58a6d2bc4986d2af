use serde::{Deserialize, Serialize};

use super::{student_t_cdf, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub t: f64,
    pub df: usize,
    /// Two-sided p-value against r = 0.
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation with a t-test on n − 2 degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewValues { needed: 3, have: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(0));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ConstantInput("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ConstantInput("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = n - 2;
    // rounding can leave a perfect fit a few ulps short of ±1
    let (t, p_value) = if 1.0 - r * r <= 4.0 * f64::EPSILON {
        (f64::INFINITY.copysign(r), 0.0)
    } else {
        let t = r * (df as f64 / (1.0 - r * r)).sqrt();
        (t, 2.0 * student_t_cdf(-t.abs(), df as f64)?)
    };
    Ok(Correlation { r, t, df, p_value, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 4.0, 5.0, 4.0, 5.0];
        let c = pearson(&x, &y).unwrap();
        // r = 6 / sqrt(10 * 6)
        assert!((c.r - 6.0 / 60f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.df, 3);
        let t = c.r * (3.0 / (1.0 - c.r * c.r)).sqrt();
        assert!((c.t - t).abs() < 1e-12);
        // scipy.stats.pearsonr reference
        assert!((c.p_value - 0.1240270626575546).abs() < 1e-12);
    }

    #[test]
    fn three_points_use_cauchy_tail() {
        let c = pearson(&[0.0, 1.0, 2.0], &[0.0, 2.0, 1.0]).unwrap();
        // df = 1: p = 1 − 2 atan(|t|)/π
        let p = 1.0 - 2.0 * c.t.abs().atan() / std::f64::consts::PI;
        assert!((c.p_value - p).abs() < 1e-13);
    }

    #[test]
    fn orthogonal_and_exact_line() {
        let c = pearson(&[-1.0, 0.0, 1.0], &[1.0, -2.0, 1.0]).unwrap();
        assert_eq!(c.r, 0.0);
        assert_eq!(c.p_value, 1.0);
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = pearson(&x, &y).unwrap();
        assert!((c.r - 1.0).abs() < 1e-15 && c.p_value < 1e-12);
    }

    #[test]
    fn symmetric_and_affine_invariant() {
        let x = [3.1, 0.4, 2.2, 5.9, 1.0, 4.4];
        let y = [1.0, 0.2, 1.9, 2.5, 0.3, 2.4];
        let base = pearson(&x, &y).unwrap();
        let swapped = pearson(&y, &x).unwrap();
        assert_eq!(base.r, swapped.r);
        let xt: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
        let moved = pearson(&xt, &y).unwrap();
        assert!((moved.r - base.r).abs() < 1e-14);
        assert!((moved.p_value - base.p_value).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_degenerate() {
        let c = pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((c.r + 1.0).abs() < 1e-15);
        assert!(c.p_value < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err(), StatsError::ConstantInput("x"));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }
}
