//! End-to-end harness: a persistent pool of skaters races repeatedly, the
//! logs go through the metrics pipeline, break-away races are dropped, and the
//! three mixed models are fitted.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{LeadPropensity, SimConfig};
use super::sim::{race_log_from_run, simulate_agents, AgentSpec, SkaterTruth};
use super::DilemmaError;
use crate::metrics::{analyze_race, AnalysisParams, MetricsRow, RaceMetrics, RaceType};
use crate::parallel::{map_ordered, Execution};
use crate::racelog::{RaceLog, SkaterId};
use crate::stats::{build_dataset, fit_lmm, LmmFit, Method, Model, OptimizerSettings, TimeTrialRecord, TrialColumn};

/// Preset trait distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Nearly equal abilities, widely spread willingness to lead.
    StrategyDominant,
    /// Spread abilities, identical willingness to lead.
    AbilityDominant,
    /// Identical skaters.
    Null,
}

impl Scenario {
    pub fn apply(self, base: SimConfig) -> SimConfig {
        let (ability_spread, lead_propensity) = match self {
            Scenario::StrategyDominant => (0.005, LeadPropensity::Uniform { lo: 0.0, hi: 1.0 }),
            Scenario::AbilityDominant => (0.05, LeadPropensity::Fixed(0.5)),
            Scenario::Null => (0.0, LeadPropensity::Fixed(0.5)),
        };
        SimConfig {
            ability_spread,
            lead_propensity,
            ..base
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strategy-dominant" => Ok(Scenario::StrategyDominant),
            "ability-dominant" => Ok(Scenario::AbilityDominant),
            "null" => Ok(Scenario::Null),
            other => Err(format!("unknown scenario '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub n_races: usize,
    /// Skaters available for selection; `None` means 3.5 × field size.
    pub pool_size: Option<usize>,
    pub analysis: AnalysisParams,
    pub method: Method,
}

impl ExperimentConfig {
    pub fn new(sim: SimConfig, n_races: usize) -> Self {
        Self {
            sim,
            n_races,
            pool_size: None,
            analysis: AnalysisParams::default(),
            method: Method::Reml,
        }
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
            .unwrap_or_else(|| (3.5 * self.sim.n_skaters as f64).ceil() as usize)
            .max(self.sim.n_skaters)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaceRecord {
    pub race_id: String,
    pub seed: u64,
    pub log: RaceLog,
    pub truth: Vec<SkaterTruth>,
    pub metrics: RaceMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedRace {
    pub race_id: String,
    pub reason: String,
    pub min_gaps: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelFit {
    pub model: Model,
    #[serde(flatten)]
    pub outcome: FitOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FitOutcome {
    Fitted { fit: LmmFit },
    Failed { error: String },
}

impl ModelFit {
    pub fn fit(&self) -> Option<&LmmFit> {
        match &self.outcome {
            FitOutcome::Fitted { fit } => Some(fit),
            FitOutcome::Failed { .. } => None,
        }
    }

    /// Estimate and p-value of the first non-intercept term.
    pub fn slope(&self) -> Option<(f64, f64)> {
        self.fit()
            .and_then(|f| f.coefficients.get(1))
            .map(|c| (c.estimate, c.p_value))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub pool: Vec<AgentSpec>,
    pub races: Vec<RaceRecord>,
    pub time_trials: Vec<TimeTrialRecord>,
    /// Metrics rows of bunch races only.
    pub metrics: Vec<MetricsRow>,
    pub excluded: Vec<ExcludedRace>,
    pub fits: Vec<ModelFit>,
}

impl ExperimentResult {
    pub fn fit(&self, model: Model) -> Option<&ModelFit> {
        self.fits.iter().find(|f| f.model == model)
    }
}

const POOL_KEY: u64 = 0x706f_6f6c;
const RACE_KEY: u64 = 0x7261_6365;

fn keyed(seed: u64, key: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key);
    rng.set_stream(index);
    rng
}

fn build_pool(cfg: &SimConfig, size: usize) -> Vec<AgentSpec> {
    (0..size)
        .map(|i| {
            let mut rng = keyed(cfg.seed, POOL_KEY, i as u64);
            let z: f64 = rng.sample(StandardNormal);
            let lead_propensity = match &cfg.lead_propensity {
                LeadPropensity::Fixed(p) => *p,
                LeadPropensity::PerSkater(v) => v[i % v.len()],
                LeadPropensity::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            };
            AgentSpec {
                skater_id: SkaterId::new(format!("P{:03}", i + 1)),
                ability: (1.0 + cfg.ability_spread * z).clamp(0.5, 1.5),
                lead_propensity,
            }
        })
        .collect()
}

struct RacePlan {
    race_id: String,
    seed: u64,
    field: Vec<AgentSpec>,
}

/// One simulated race of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRace {
    pub race_id: String,
    pub seed: u64,
    pub log: RaceLog,
    pub truth: Vec<SkaterTruth>,
}

/// Races drawn from a persistent pool, with the pool's time-trial table.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub pool: Vec<AgentSpec>,
    pub races: Vec<SimulatedRace>,
    /// Solo best over the race distance for every pool member who raced.
    pub time_trials: Vec<TimeTrialRecord>,
}

/// Simulates `n_races` from the pool without analyzing them.
pub fn simulate_series(cfg: &ExperimentConfig, exec: Execution) -> Result<Series, DilemmaError> {
    cfg.sim.validate()?;
    if cfg.n_races == 0 {
        return Err(DilemmaError::Config("n_races must be at least 1".into()));
    }
    if cfg.sim.n_skaters < 2 {
        return Err(DilemmaError::Config("races need at least 2 skaters".into()));
    }
    let pool = build_pool(&cfg.sim, cfg.pool_size());
    let plans: Vec<RacePlan> = (0..cfg.n_races)
        .map(|j| {
            let mut rng = keyed(cfg.sim.seed, RACE_KEY, j as u64);
            let seed = rng.random::<u64>();
            let mut picked = sample(&mut rng, pool.len(), cfg.sim.n_skaters).into_vec();
            picked.sort_unstable();
            RacePlan {
                race_id: format!("race-{:02}", j + 1),
                seed,
                field: picked.into_iter().map(|k| pool[k].clone()).collect(),
            }
        })
        .collect();

    let races = map_ordered(&plans, exec, |plan| -> Result<SimulatedRace, DilemmaError> {
        let run = simulate_agents(&cfg.sim, &plan.field, plan.seed)?;
        let log = race_log_from_run(&cfg.sim, &run, &plan.race_id)?;
        Ok(SimulatedRace {
            race_id: plan.race_id.clone(),
            seed: plan.seed,
            log,
            truth: run.skaters,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let raced: BTreeSet<&SkaterId> = races.iter().flat_map(|r| r.log.roster()).collect();
    let time_trials = pool
        .iter()
        .filter(|a| raced.contains(&a.skater_id))
        .map(|a| TimeTrialRecord {
            skater_id: a.skater_id.clone(),
            best_time: Some(
                (cfg.sim.race_distance() / cfg.sim.steady_speed(a.ability * cfg.sim.base_power) * 1000.0).round()
                    / 1000.0,
            ),
            standardized_best: None,
        })
        .collect();
    Ok(Series {
        pool,
        races,
        time_trials,
    })
}

/// Fits the three designs to bunch-race rows; failures are recorded, not raised.
pub fn fit_models(metrics: &[MetricsRow], time_trials: &[TimeTrialRecord], method: Method) -> Vec<ModelFit> {
    let settings = OptimizerSettings::default();
    [Model::Eq1, Model::Eq2, Model::Eq3]
        .into_iter()
        .map(|model| {
            let outcome = build_dataset(model, metrics, Some(time_trials), TrialColumn::BestTime)
                .and_then(|d| fit_lmm(&d, method, &settings));
            ModelFit {
                model,
                outcome: match outcome {
                    Ok(fit) => FitOutcome::Fitted { fit },
                    Err(e) => FitOutcome::Failed { error: e.to_string() },
                },
            }
        })
        .collect()
}

/// Simulates `n_races`, analyzes them, and fits the three designs.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult, DilemmaError> {
    let Series {
        pool,
        races,
        time_trials,
    } = simulate_series(cfg, exec)?;
    let races = map_ordered(&races, exec, |r| -> Result<RaceRecord, DilemmaError> {
        Ok(RaceRecord {
            race_id: r.race_id.clone(),
            seed: r.seed,
            log: r.log.clone(),
            truth: r.truth.clone(),
            metrics: analyze_race(&r.log, &cfg.analysis)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut metrics = Vec::new();
    let mut excluded = Vec::new();
    for r in &races {
        if r.metrics.race_type == RaceType::Breakaway {
            excluded.push(ExcludedRace {
                race_id: r.race_id.clone(),
                reason: format!(
                    "break-away: a gap above {} s among the leading places over the last two laps",
                    cfg.analysis.breakaway.gap
                ),
                min_gaps: r.metrics.min_gaps.clone(),
            });
        } else {
            metrics.extend(r.metrics.rows.iter().cloned());
        }
    }

    let fits = fit_models(&metrics, &time_trials, cfg.method);

    Ok(ExperimentResult {
        config: cfg.clone(),
        pool,
        races,
        time_trials,
        metrics,
        excluded,
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_experiment_shapes() {
        let sim = Scenario::StrategyDominant.apply(SimConfig {
            n_skaters: 8,
            seed: 5,
            ..SimConfig::default()
        });
        let cfg = ExperimentConfig::new(sim, 3);
        let res = run_experiment(&cfg, Execution::Sequential).unwrap();
        assert_eq!(res.races.len(), 3);
        assert_eq!(res.pool.len(), 28);
        let bunch = res.races.len() - res.excluded.len();
        assert_eq!(res.metrics.len(), 8 * bunch);
        assert_eq!(res.fits.len(), 3);
        let par = run_experiment(&cfg, Execution::Parallel).unwrap();
        assert_eq!(par.metrics, res.metrics);
        assert_eq!(par.fits, res.fits);
    }
}
