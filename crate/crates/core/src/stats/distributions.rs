use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::StatsError;

/// Two-sided 95% normal quantile used for Wald intervals.
pub const WALD_Z_95: f64 = 1.959964;

pub fn normal_cdf(x: f64) -> f64 {
    // erfc-based; accurate in both tails
    Normal::standard().cdf(x)
}

/// Student-t CDF through the regularized incomplete beta function.
pub fn student_t_cdf(x: f64, df: f64) -> Result<f64, StatsError> {
    if !(df >= 1.0) {
        return Err(StatsError::InvalidDf(df));
    }
    if df.is_infinite() {
        return Ok(normal_cdf(x));
    }
    let t = StudentsT::new(0.0, 1.0, df).map_err(|_| StatsError::InvalidDf(df))?;
    Ok(t.cdf(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(WALD_Z_95) - 0.975).abs() < 1e-8);
        for df in [1.0, 2.0, 3.5, 30.0, 1e6] {
            assert!((student_t_cdf(0.0, df).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn cauchy_closed_form() {
        for x in [-5.0, -1.0, 0.3, 2.0, 40.0] {
            let exact = 0.5 + f64::atan(x) / std::f64::consts::PI;
            assert!((student_t_cdf(x, 1.0).unwrap() - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn large_df_approaches_normal() {
        for x in [-3.0, -1.0, 0.5, 2.5] {
            assert!((student_t_cdf(x, 1e6).unwrap() - normal_cdf(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_df() {
        assert!(student_t_cdf(0.0, 0.5).is_err());
        assert!(student_t_cdf(0.0, f64::NAN).is_err());
    }
}
