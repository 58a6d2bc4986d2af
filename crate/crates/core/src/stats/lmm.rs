//! Random-intercept linear mixed model `y = Xβ + Zb + ε`, `b ~ N(0, σ_b²)`,
//! `ε ~ N(0, σ²)`, fitted by ML or REML.
//!
//! With `θ = σ_b²/σ²` the marginal covariance is `σ² V(θ)`, where each
//! subject's block is `I + θJ`. That block has the closed-form inverse
//! `I − θ/(1+kθ) J` and determinant `1 + kθ`, so every quantity reduces to
//! per-subject sums and the profiled criterion is a one-dimensional function
//! of `θ`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{normal_cdf, StatsError, WALD_Z_95};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    #[default]
    Reml,
    Ml,
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "reml" => Ok(Method::Reml),
            "ml" => Ok(Method::Ml),
            other => Err(format!("unknown estimation method '{other}' (expected reml or ml)")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Reml => "REML",
            Method::Ml => "ML",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmRow {
    pub subject: String,
    pub response: f64,
    pub covariates: Vec<f64>,
}

/// Long-format data; an intercept column is added automatically.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LmmDataset {
    pub covariate_names: Vec<String>,
    pub rows: Vec<LmmRow>,
}

impl LmmDataset {
    pub fn new<S: Into<String>>(covariate_names: impl IntoIterator<Item = S>) -> Self {
        Self {
            covariate_names: covariate_names.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, subject: impl Into<String>, response: f64, covariates: Vec<f64>) {
        self.rows.push(LmmRow {
            subject: subject.into(),
            response,
            covariates,
        });
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_subjects(&self) -> usize {
        let mut seen: Vec<&str> = self.rows.iter().map(|r| r.subject.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub log_theta_min: f64,
    pub log_theta_max: f64,
    pub grid_step: f64,
    /// Relative bracket width at which refinement stops.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            log_theta_min: (1e-8f64).ln(),
            log_theta_max: (1e8f64).ln(),
            grid_step: 0.5,
            rel_tol: 1e-10,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub converged: bool,
    /// Variance ratio estimated on the boundary θ = 0.
    pub boundary: bool,
    /// Derivative of the profiled criterion at the estimate.
    pub gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub method: Method,
    pub coefficients: Vec<Coefficient>,
    pub sigma2_residual: f64,
    pub sigma2_subject: f64,
    pub theta: f64,
    /// −2 log-likelihood (restricted for REML).
    pub deviance: f64,
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub n_subjects: usize,
    pub convergence: Convergence,
}

impl LmmFit {
    pub fn coefficient(&self, term: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.term == term)
    }

    pub fn beta(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }
}

pub const INTERCEPT: &str = "(Intercept)";

struct Group {
    rows: Vec<usize>,
    /// X_g' 1
    sx: DVector<f64>,
}

struct Prepared {
    x: DMatrix<f64>,
    y: DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    groups: Vec<Group>,
    terms: Vec<String>,
}

impl Prepared {
    fn n(&self) -> usize {
        self.y.len()
    }
    fn p(&self) -> usize {
        self.x.ncols()
    }
}

fn prepare(data: &LmmDataset) -> Result<Prepared, StatsError> {
    let p = data.covariate_names.len() + 1;
    let n = data.rows.len();
    if n < p + 1 {
        return Err(StatsError::TooFewObservations { needed: p + 1, have: n });
    }
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, row) in data.rows.iter().enumerate() {
        if row.covariates.len() != p - 1 {
            return Err(StatsError::CovariateLength {
                row: i,
                expected: p - 1,
                got: row.covariates.len(),
            });
        }
        if !row.response.is_finite() || row.covariates.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
        x[(i, 0)] = 1.0;
        for (j, v) in row.covariates.iter().enumerate() {
            x[(i, j + 1)] = *v;
        }
        y[i] = row.response;
        let next = members.len();
        let g = *index.entry(row.subject.as_str()).or_insert(next);
        if g == members.len() {
            members.push(Vec::new());
        }
        members[g].push(i);
    }
    if members.len() < 2 {
        return Err(StatsError::TooFewSubjects(members.len()));
    }
    let sv = x.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > smax * 1e-10) {
        return Err(StatsError::RankDeficient);
    }
    let groups = members
        .into_iter()
        .map(|rows| {
            let mut sx = DVector::zeros(p);
            for &i in &rows {
                sx += x.row(i).transpose();
            }
            Group { rows, sx }
        })
        .collect();
    let mut terms = vec![INTERCEPT.to_string()];
    terms.extend(data.covariate_names.iter().cloned());
    Ok(Prepared {
        xtx: x.transpose() * &x,
        xty: x.transpose() * &y,
        x,
        y,
        groups,
        terms,
    })
}

/// Everything the criterion and its derivative need at one θ.
struct Profile {
    objective: f64,
    derivative: f64,
    beta: DVector<f64>,
    /// r' V⁻¹ r at the GLS estimate
    q_form: f64,
    a_inv: DMatrix<f64>,
}

fn profile(prep: &Prepared, method: Method, theta: f64) -> Result<Profile, StatsError> {
    let (n, p) = (prep.n(), prep.p());
    let mut a = prep.xtx.clone();
    let mut c = prep.xty.clone();
    let mut log_det_v = 0.0;
    let mut tr_v = 0.0;
    for g in &prep.groups {
        let k = g.rows.len() as f64;
        let w = theta / (1.0 + k * theta);
        let sy: f64 = g.rows.iter().map(|&i| prep.y[i]).sum();
        a -= &g.sx * g.sx.transpose() * w;
        c -= &g.sx * (w * sy);
        log_det_v += (k * theta).ln_1p();
        tr_v += k / (1.0 + k * theta);
    }
    let chol = a.clone().cholesky().ok_or(StatsError::RankDeficient)?;
    let beta = chol.solve(&c);
    let resid = &prep.y - &prep.x * &beta;

    let mut q_form = resid.norm_squared();
    let mut q_deriv = 0.0;
    let mut tr_am = 0.0;
    for g in &prep.groups {
        let k = g.rows.len() as f64;
        let d = 1.0 + k * theta;
        let sr: f64 = g.rows.iter().map(|&i| resid[i]).sum();
        q_form -= theta / d * sr * sr;
        q_deriv += sr * sr / (d * d);
        if method == Method::Reml {
            tr_am += g.sx.dot(&chol.solve(&g.sx)) / (d * d);
        }
    }
    let m = match method {
        Method::Ml => n as f64,
        Method::Reml => (n - p) as f64,
    };
    let log_det_a = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut objective = m * q_form.ln() + log_det_v;
    let mut derivative = -m * q_deriv / q_form + tr_v;
    if method == Method::Reml {
        objective += log_det_a;
        derivative -= tr_am;
    }
    Ok(Profile {
        objective,
        derivative,
        beta,
        q_form,
        a_inv: chol.inverse(),
    })
}

fn criterion_constant(prep: &Prepared, method: Method) -> f64 {
    let m = match method {
        Method::Ml => prep.n() as f64,
        Method::Reml => (prep.n() - prep.p()) as f64,
    };
    m * (1.0 + (2.0 * std::f64::consts::PI / m).ln())
}

/// −2 log-likelihood (restricted for REML) profiled over β and σ² at a given θ.
pub fn profiled_deviance(data: &LmmDataset, method: Method, theta: f64) -> Result<f64, StatsError> {
    let prep = prepare(data)?;
    Ok(profile(&prep, method, theta)?.objective + criterion_constant(&prep, method))
}

#[derive(Clone, Copy)]
enum Scale {
    Log,
    Linear,
}

impl Scale {
    fn theta(self, t: f64) -> f64 {
        match self {
            Scale::Log => t.exp(),
            Scale::Linear => t,
        }
    }
}

fn optimize(
    prep: &Prepared,
    method: Method,
    s: &OptimizerSettings,
) -> Result<(f64, Convergence), StatsError> {
    let boundary = |prof: &Profile, iterations| {
        Ok((
            0.0,
            Convergence {
                iterations,
                converged: true,
                boundary: true,
                gradient: prof.derivative,
            },
        ))
    };
    let at_zero = profile(prep, method, 0.0)?;
    if prep.groups.iter().all(|g| g.rows.len() == 1) {
        // θ is not identifiable without repeated measures
        return boundary(&at_zero, 0);
    }

    let steps = ((s.log_theta_max - s.log_theta_min) / s.grid_step).ceil() as usize;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| (s.log_theta_min + i as f64 * s.grid_step).min(s.log_theta_max))
        .collect();
    let values = grid
        .iter()
        .map(|&u| profile(prep, method, u.exp()).map(|p| p.objective))
        .collect::<Result<Vec<_>, _>>()?;
    let mut iterations = grid.len() + 1;
    let (best, best_val) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    if !best_val.is_finite() {
        return Err(StatsError::NonConvergence("criterion is not finite on the grid".into()));
    }
    if best == grid.len() - 1 {
        return Err(StatsError::NonConvergence(
            "variance ratio diverges (no within-subject variation left)".into(),
        ));
    }
    if at_zero.objective <= best_val && at_zero.derivative >= 0.0 {
        return boundary(&at_zero, iterations);
    }

    let (scale, mut lo, mut hi) = if best == 0 || at_zero.objective <= best_val {
        (Scale::Linear, 0.0, grid[1].exp())
    } else {
        (Scale::Log, grid[best - 1], grid[best + 1])
    };
    let f = |t: f64| profile(prep, method, scale.theta(t));

    // golden section down to a coarse bracket
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1)?.objective;
    let mut f2 = f(x2)?.objective;
    iterations += 2;
    let coarse = 1e-4;
    while hi - lo > coarse * hi.abs().max(lo.abs()).max(1e-12) && iterations < s.max_iter {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?.objective;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?.objective;
        }
        iterations += 1;
    }

    // polish on the sign of the analytic derivative
    let (d_lo, d_hi) = (f(lo)?.derivative, f(hi)?.derivative);
    iterations += 2;
    let mut converged = true;
    if d_lo < 0.0 && d_hi > 0.0 {
        converged = false;
        while iterations < s.max_iter {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= s.rel_tol * mid.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
            if f(mid)?.derivative < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
    }
    let theta = scale.theta(0.5 * (lo + hi));
    let at_hat = profile(prep, method, theta)?;
    if at_zero.objective <= at_hat.objective {
        return boundary(&at_zero, iterations);
    }
    Ok((
        theta,
        Convergence {
            iterations,
            converged,
            boundary: false,
            gradient: at_hat.derivative,
        },
    ))
}

fn assemble(
    prep: &Prepared,
    method: Method,
    theta: f64,
    convergence: Convergence,
) -> Result<LmmFit, StatsError> {
    let prof = profile(prep, method, theta)?;
    let m = match method {
        Method::Ml => prep.n() as f64,
        Method::Reml => (prep.n() - prep.p()) as f64,
    };
    let sigma2 = prof.q_form / m;
    let deviance = prof.objective + criterion_constant(prep, method);
    let coefficients = prep
        .terms
        .iter()
        .enumerate()
        .map(|(j, term)| {
            let estimate = prof.beta[j];
            let std_error = (sigma2 * prof.a_inv[(j, j)]).sqrt();
            let z = estimate / std_error;
            Coefficient {
                term: term.clone(),
                estimate,
                std_error,
                z,
                p_value: 2.0 * normal_cdf(-z.abs()),
                ci_lower: estimate - WALD_Z_95 * std_error,
                ci_upper: estimate + WALD_Z_95 * std_error,
            }
        })
        .collect();
    Ok(LmmFit {
        method,
        coefficients,
        sigma2_residual: sigma2,
        sigma2_subject: theta * sigma2,
        theta,
        deviance,
        log_likelihood: -0.5 * deviance,
        n_obs: prep.n(),
        n_subjects: prep.groups.len(),
        convergence,
    })
}

/// Fits the model, estimating the variance ratio.
pub fn fit_lmm(
    data: &LmmDataset,
    method: Method,
    settings: &OptimizerSettings,
) -> Result<LmmFit, StatsError> {
    let prep = prepare(data)?;
    let (theta, convergence) = optimize(&prep, method, settings)?;
    assemble(&prep, method, theta, convergence)
}

/// Fits with the variance ratio held fixed; θ = 0 reproduces ordinary least squares.
pub fn fit_lmm_at_theta(data: &LmmDataset, method: Method, theta: f64) -> Result<LmmFit, StatsError> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(StatsError::NonConvergence(format!("invalid variance ratio {theta}")));
    }
    let prep = prepare(data)?;
    let gradient = profile(&prep, method, theta)?.derivative;
    let convergence = Convergence {
        iterations: 0,
        converged: true,
        boundary: theta == 0.0,
        gradient,
    };
    assemble(&prep, method, theta, convergence)
}
