use serde::{Deserialize, Serialize};

use super::DilemmaError;

/// Row-player payoffs of the symmetric 2×2 lead-or-draft game.
///
/// `t`: draft while the other leads; `r`: share the lead;
/// `s`: lead while the other drafts; `p`: nobody leads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    pub t: f64,
    pub r: f64,
    pub s: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameClass {
    /// T > R > S > P
    Chicken,
    /// T > R > P > S
    PrisonersDilemma,
    Other,
}

impl PayoffMatrix {
    /// A matrix with the chicken ordering T > R > S > P.
    pub fn chicken(t: f64, r: f64, s: f64, p: f64) -> Result<Self, DilemmaError> {
        let m = Self::any(t, r, s, p)?;
        m.check_chicken()?;
        Ok(m)
    }

    /// Any finite matrix; used for control cases such as the prisoner's dilemma.
    pub fn any(t: f64, r: f64, s: f64, p: f64) -> Result<Self, DilemmaError> {
        if [t, r, s, p].iter().any(|v| !v.is_finite()) {
            return Err(DilemmaError::Ordering("payoffs must be finite".into()));
        }
        Ok(Self { t, r, s, p })
    }

    pub fn class(&self) -> GameClass {
        if self.check_chicken().is_ok() {
            GameClass::Chicken
        } else if self.t > self.r && self.r > self.p && self.p > self.s {
            GameClass::PrisonersDilemma
        } else {
            GameClass::Other
        }
    }

    /// Names the first violated inequality of T > R > S > P.
    pub fn check_chicken(&self) -> Result<(), DilemmaError> {
        let pairs = [
            ("T", self.t, "R", self.r),
            ("R", self.r, "S", self.s),
            ("S", self.s, "P", self.p),
        ];
        for (a, x, b, y) in pairs {
            if !(x > y) {
                return Err(DilemmaError::Ordering(format!(
                    "not a chicken game: {a} > {b} violated ({a} = {x}, {b} = {y})"
                )));
            }
        }
        Ok(())
    }
}

/// Cooperation (leading) probability at the mixed equilibrium.
pub fn nash_cooperation_fraction(m: &PayoffMatrix) -> Result<f64, DilemmaError> {
    m.check_chicken()?;
    let num = m.s - m.p;
    Ok(num / (m.t - m.r + num))
}

/// Expected per-opponent payoff of leading and of drafting when a fraction
/// `x` of the field leads and opponents are matched uniformly.
pub fn expected_payoffs(m: &PayoffMatrix, x: f64) -> (f64, f64) {
    (x * m.r + (1.0 - x) * m.s, x * m.t + (1.0 - x) * m.p)
}

/// Fixed-step best-response adjustment; returns `x₀, x₁, …, x_iterations`.
pub fn best_response_dynamics(m: &PayoffMatrix, x0: f64, step: f64, iterations: usize) -> Vec<f64> {
    let mut traj = Vec::with_capacity(iterations + 1);
    let mut x = x0.clamp(0.0, 1.0);
    traj.push(x);
    for _ in 0..iterations {
        let (c, d) = expected_payoffs(m, x);
        let dir = if c > d {
            1.0
        } else if c < d {
            -1.0
        } else {
            0.0
        };
        x = (x + step * dir).clamp(0.0, 1.0);
        traj.push(x);
    }
    traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_chicken(rng: &mut impl Rng) -> PayoffMatrix {
        let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        PayoffMatrix::chicken(v[0], v[1], v[2], v[3]).unwrap()
    }

    #[test]
    fn worked_examples() {
        let m = PayoffMatrix::chicken(3.0, 2.0, 1.0, 0.0).unwrap();
        assert_eq!(nash_cooperation_fraction(&m).unwrap(), 0.5);
        let m = PayoffMatrix::chicken(2.0, 1.5, 1.0, 0.0).unwrap();
        assert!((nash_cooperation_fraction(&m).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(expected_payoffs(&m, 1.0), (1.5, 2.0));
        assert_eq!(expected_payoffs(&m, 0.0), (1.0, 0.0));
    }

    #[test]
    fn ordering_errors_name_the_inequality() {
        let err = PayoffMatrix::chicken(5.0, 3.0, 0.0, 1.0).unwrap_err().to_string();
        assert!(err.contains("S > P"), "{err}");
        let err = PayoffMatrix::chicken(1.0, 3.0, 2.0, 0.0).unwrap_err().to_string();
        assert!(err.contains("T > R"), "{err}");
        assert_eq!(PayoffMatrix::any(5.0, 3.0, 0.0, 1.0).unwrap().class(), GameClass::PrisonersDilemma);
    }

    #[test]
    fn equilibrium_is_indifferent_and_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let m = random_chicken(&mut rng);
            let x = nash_cooperation_fraction(&m).unwrap();
            assert!(x > 0.0 && x < 1.0);
            let (c, d) = expected_payoffs(&m, x);
            assert!((c - d).abs() <= 1e-12);
            let (a, b) = (rng.random_range(0.1..5.0), rng.random_range(-5.0..5.0));
            let moved = PayoffMatrix::chicken(a * m.t + b, a * m.r + b, a * m.s + b, a * m.p + b).unwrap();
            assert!((nash_cooperation_fraction(&moved).unwrap() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn dynamics_settle_near_equilibrium() {
        let m = PayoffMatrix::chicken(3.0, 2.0, 1.0, 0.0).unwrap();
        let traj = best_response_dynamics(&m, 0.05, 0.01, 200);
        assert!(traj[150..].iter().all(|x| (x - 0.5).abs() <= 0.01 + 1e-12));
        let pd = PayoffMatrix::any(5.0, 3.0, 0.0, 1.0).unwrap();
        assert_eq!(*best_response_dynamics(&pd, 0.9, 0.01, 200).last().unwrap(), 0.0);
    }
}
