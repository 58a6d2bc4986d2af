use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DilemmaError;
use crate::racelog::MAX_SKATERS;

/// How each skater's willingness to take the front is assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LeadPropensity {
    Fixed(f64),
    /// One value per skater, in roster order.
    PerSkater(Vec<f64>),
    /// Drawn uniformly per skater.
    Uniform { lo: f64, hi: f64 },
}

impl LeadPropensity {
    fn validate(&self, n_skaters: usize) -> Result<(), DilemmaError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = match self {
            LeadPropensity::Fixed(p) => prob(*p),
            LeadPropensity::PerSkater(v) => {
                if v.len() != n_skaters {
                    return Err(DilemmaError::Config(format!(
                        "lead_propensity lists {} values for {n_skaters} skaters",
                        v.len()
                    )));
                }
                v.iter().all(|p| prob(*p))
            }
            LeadPropensity::Uniform { lo, hi } => prob(*lo) && prob(*hi) && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(DilemmaError::Config(format!("lead_propensity {self} is not a probability")))
        }
    }
}

impl fmt::Display for LeadPropensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeadPropensity::Fixed(p) => write!(f, "{p}"),
            LeadPropensity::PerSkater(v) => {
                let parts: Vec<String> = v.iter().map(f64::to_string).collect();
                f.write_str(&parts.join(","))
            }
            LeadPropensity::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
        }
    }
}

impl FromStr for LeadPropensity {
    type Err = DilemmaError;
    fn from_str(s: &str) -> Result<Self, DilemmaError> {
        let bad = || DilemmaError::Config(format!("cannot parse lead_propensity '{s}'"));
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("uniform(").and_then(|r| r.strip_suffix(')')) {
            let (lo, hi) = inner.split_once(',').ok_or_else(bad)?;
            return Ok(LeadPropensity::Uniform { lo: num(lo)?, hi: num(hi)? });
        }
        if s.contains(',') {
            return s.split(',').map(num).collect::<Result<_, _>>().map(LeadPropensity::PerSkater);
        }
        num(s).map(LeadPropensity::Fixed)
    }
}

impl From<LeadPropensity> for String {
    fn from(p: LeadPropensity) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for LeadPropensity {
    type Error = DilemmaError;
    fn try_from(s: String) -> Result<Self, DilemmaError> {
        s.parse()
    }
}

/// Simulator parameters. Units: seconds, meters, watts, joules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_skaters: usize,
    pub n_laps: u32,
    pub track_length: f64,
    pub boundaries_per_lap: u32,
    /// Time gap (s) within which the skater behind is sheltered.
    pub drafting_gap: f64,
    /// Drag power = drag_coefficient · v³.
    pub drag_coefficient: f64,
    pub draft_drag_multiplier: f64,
    pub energy_budget: f64,
    pub base_power: f64,
    pub sprint_power: f64,
    /// Relative standard deviation of intrinsic power.
    pub ability_spread: f64,
    pub lead_propensity: LeadPropensity,
    pub seed: u64,
    pub timestep: f64,
    /// Relative speed loss per second of a group whose front skater refuses to lead.
    pub stall_rate: f64,
}

/// Solo speed (m/s) at the default base power.
pub const REFERENCE_SPEED: f64 = 13.5;

impl Default for SimConfig {
    fn default() -> Self {
        let base_power = 300.0;
        let n_laps = 16;
        let track_length = 400.0;
        let solo_time = f64::from(n_laps) * track_length / REFERENCE_SPEED;
        Self {
            n_skaters: 20,
            n_laps,
            track_length,
            boundaries_per_lap: 4,
            drafting_gap: 0.2,
            drag_coefficient: base_power / REFERENCE_SPEED.powi(3),
            draft_drag_multiplier: 0.7,
            energy_budget: base_power * solo_time,
            base_power,
            sprint_power: 3.0 * base_power,
            ability_spread: 0.02,
            lead_propensity: LeadPropensity::Uniform { lo: 0.0, hi: 1.0 },
            seed: 0,
            timestep: 0.1,
            stall_rate: 0.02,
        }
    }
}

pub const CONFIG_KEYS: [&str; 15] = [
    "n_skaters",
    "n_laps",
    "track_length",
    "boundaries_per_lap",
    "drafting_gap",
    "drag_coefficient",
    "draft_drag_multiplier",
    "energy_budget",
    "base_power",
    "sprint_power",
    "ability_spread",
    "lead_propensity",
    "seed",
    "timestep",
    "stall_rate",
];

impl SimConfig {
    pub fn validate(&self) -> Result<(), DilemmaError> {
        let err = |m: String| Err(DilemmaError::Config(m));
        if self.n_skaters < 1 || self.n_skaters > MAX_SKATERS as usize {
            return err(format!("n_skaters must be in 1..={MAX_SKATERS}, got {}", self.n_skaters));
        }
        if self.n_laps < 1 || self.boundaries_per_lap < 1 {
            return err("n_laps and boundaries_per_lap must be at least 1".into());
        }
        let positive = [
            ("track_length", self.track_length),
            ("drafting_gap", self.drafting_gap),
            ("drag_coefficient", self.drag_coefficient),
            ("energy_budget", self.energy_budget),
            ("base_power", self.base_power),
            ("sprint_power", self.sprint_power),
            ("timestep", self.timestep),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.draft_drag_multiplier > 0.0 && self.draft_drag_multiplier < 1.0) {
            return err(format!(
                "draft_drag_multiplier must be in (0,1), got {}",
                self.draft_drag_multiplier
            ));
        }
        if !(self.ability_spread >= 0.0 && self.ability_spread < 0.5) {
            return err(format!("ability_spread must be in [0,0.5), got {}", self.ability_spread));
        }
        if !(self.stall_rate > 0.0 && self.stall_rate * self.timestep < 1.0) {
            return err(format!("stall_rate must be positive and below 1/timestep, got {}", self.stall_rate));
        }
        if self.sprint_power < self.base_power {
            return err("sprint_power must not be below base_power".into());
        }
        self.lead_propensity.validate(self.n_skaters)
    }

    /// Solo steady speed at power `power`.
    pub fn steady_speed(&self, power: f64) -> f64 {
        (power / self.drag_coefficient).cbrt()
    }

    pub fn race_distance(&self) -> f64 {
        f64::from(self.n_laps) * self.track_length
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, DilemmaError> {
        let mut cfg = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DilemmaError::Config(format!("line {}: expected key = value", i + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| DilemmaError::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value '{v}' for {key}"))
        }
        match key {
            "n_skaters" => self.n_skaters = num(key, value)?,
            "n_laps" => self.n_laps = num(key, value)?,
            "track_length" => self.track_length = num(key, value)?,
            "boundaries_per_lap" => self.boundaries_per_lap = num(key, value)?,
            "drafting_gap" => self.drafting_gap = num(key, value)?,
            "drag_coefficient" => self.drag_coefficient = num(key, value)?,
            "draft_drag_multiplier" => self.draft_drag_multiplier = num(key, value)?,
            "energy_budget" => self.energy_budget = num(key, value)?,
            "base_power" => self.base_power = num(key, value)?,
            "sprint_power" => self.sprint_power = num(key, value)?,
            "ability_spread" => self.ability_spread = num(key, value)?,
            "lead_propensity" => self.lead_propensity = value.parse().map_err(|e: DilemmaError| e.to_string())?,
            "seed" => self.seed = num(key, value)?,
            "timestep" => self.timestep = num(key, value)?,
            "stall_rate" => self.stall_rate = num(key, value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; `parse(render())` reproduces the config.
    pub fn render(&self) -> String {
        let v = [
            self.n_skaters.to_string(),
            self.n_laps.to_string(),
            self.track_length.to_string(),
            self.boundaries_per_lap.to_string(),
            self.drafting_gap.to_string(),
            self.drag_coefficient.to_string(),
            self.draft_drag_multiplier.to_string(),
            self.energy_budget.to_string(),
            self.base_power.to_string(),
            self.sprint_power.to_string(),
            self.ability_spread.to_string(),
            self.lead_propensity.to_string(),
            self.seed.to_string(),
            self.timestep.to_string(),
            self.stall_rate.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(v)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_solo_speed() {
        let c = SimConfig::default();
        assert!((c.steady_speed(c.base_power) - REFERENCE_SPEED).abs() < 1e-12);
        c.validate().unwrap();
    }

    #[test]
    fn parse_and_render_round_trip() {
        let text = "# strategy-heavy\nn_skaters = 12\nlead_propensity = uniform(0.1, 0.9)\nseed=99 # trailing\n";
        let c = SimConfig::parse(text).unwrap();
        assert_eq!(c.n_skaters, 12);
        assert_eq!(c.seed, 99);
        assert_eq!(c.lead_propensity, LeadPropensity::Uniform { lo: 0.1, hi: 0.9 });
        assert_eq!(SimConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn bad_configs() {
        assert!(SimConfig::parse("n_skaters = 30").is_err());
        assert!(SimConfig::parse("colour = red").unwrap_err().to_string().contains("line 1"));
        assert!(SimConfig::parse("draft_drag_multiplier = 1.2").is_err());
        assert!(SimConfig::parse("lead_propensity = 1.5").is_err());
        assert!(SimConfig::parse("n_skaters = 3\nlead_propensity = 0.1,0.2").is_err());
        assert!(SimConfig::parse("n_skaters = 2\nlead_propensity = 0,1").is_ok());
        assert!(SimConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn propensity_serde_as_string() {
        let p = LeadPropensity::Uniform { lo: 0.0, hi: 0.5 };
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "\"uniform(0,0.5)\"");
        assert_eq!(serde_json::from_str::<LeadPropensity>(&json).unwrap(), p);
    }
}
