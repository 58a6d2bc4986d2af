use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use peloton::dilemma::{
    best_response_dynamics, expected_payoffs, nash_cooperation_fraction, run_experiment, simulate_series,
    ExperimentConfig, PayoffMatrix, SimConfig,
};
use peloton::metrics::{
    analyze_race, reconcile_race_metrics, write_metrics_csv, AnalysisParams, BreakawayParams, DraftingParams,
    MetricsRow, RaceMetrics, RaceType, RemeasureRequest,
};
use peloton::parallel::{map_ordered, with_jobs, Execution};
use peloton::racelog::{parse_race_log, write_race_log, LogFormat, RaceLog};
use peloton::stats::{
    build_dataset, fit_lmm, read_time_trials, write_time_trials, LmmFit, Method, Model, OptimizerSettings,
    TimeTrialRecord, TrialColumn,
};
use serde::Serialize;

use crate::artifact::{self, sha256_hex, Manifest, Provenance};
use crate::error::CliError;
use crate::{Command, Thresholds};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            config,
            scenario,
            n_races,
            out,
            format,
            common,
        } => {
            let sim = load_config(config.as_deref(), scenario.map(Into::into), common.seed)?;
            with_jobs(common.jobs, || simulate(sim, n_races, &out, format.into()))
        }
        Command::Analyze {
            logs,
            out,
            thresholds,
            common,
        } => with_jobs(common.jobs, || analyze(&logs, &out, analysis_params(&thresholds)?, common.seed)),
        Command::Fit {
            metrics,
            model,
            time_trials,
            trial_column,
            method,
            out,
            common,
        } => fit(&metrics, model, time_trials.as_deref(), trial_column.into(), method, out.as_deref(), common.seed),
        Command::Equilibrium {
            t,
            r,
            s,
            p,
            x0,
            step,
            iterations,
            trajectory,
            out,
            common,
        } => equilibrium(
            [t, r, s, p],
            Dynamics {
                x0,
                step,
                iterations,
            },
            trajectory.as_deref(),
            out.as_deref(),
            common.seed.unwrap_or(0),
        ),
        Command::Report {
            config,
            scenario,
            n_races,
            out,
            format,
            method,
            thresholds,
            common,
        } => {
            let sim = load_config(config.as_deref(), scenario.map(Into::into), common.seed)?;
            let analysis = analysis_params(&thresholds)?;
            with_jobs(common.jobs, || report(sim, n_races, analysis, method, &out, format.into()))
        }
    }
}

fn load_config(
    path: Option<&Path>,
    scenario: Option<peloton::dilemma::Scenario>,
    seed: Option<u64>,
) -> Result<SimConfig, CliError> {
    let mut cfg = match path {
        Some(p) => SimConfig::parse(&artifact::read_to_string(p)?)?,
        None => SimConfig::default(),
    };
    if let Some(s) = scenario {
        cfg = s.apply(cfg);
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn analysis_params(t: &Thresholds) -> Result<AnalysisParams, CliError> {
    let finite_positive = |name: &str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(CliError::Validation(format!("--{name} must be positive, got {v}")))
        }
    };
    Ok(AnalysisParams {
        drafting: DraftingParams::with_gap(finite_positive("gap-threshold", t.gap_threshold)?),
        breakaway: BreakawayParams {
            gap: finite_positive("breakaway-gap", t.breakaway_gap)?,
            ..BreakawayParams::default()
        },
        discrepancy_tol: finite_positive("discrepancy-tol", t.discrepancy_tol)?,
    })
}

fn config_hash(cfg: &SimConfig) -> String {
    sha256_hex(cfg.render().as_bytes())
}

/// Hash over an upstream hash and this step's parameters.
fn derived_hash<T: Serialize>(upstream: &str, params: &T) -> String {
    let params = serde_json::to_string(params).expect("parameters serialize");
    sha256_hex(format!("{upstream}\n{params}").as_bytes())
}

fn log_bytes(log: &RaceLog, format: LogFormat) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_race_log(log, &mut buf, format)?;
    Ok(buf)
}

fn time_trial_bytes(records: &[TimeTrialRecord], prov: &Provenance) -> Result<Vec<u8>, CliError> {
    let mut buf = prov.comment_lines().into_bytes();
    write_time_trials(records, &mut buf)?;
    Ok(buf)
}

fn stamp(log: &RaceLog, prov: &Provenance, race_seed: u64) -> RaceLog {
    let mut map = prov.map();
    map.insert("race_seed".into(), race_seed.to_string());
    log.clone().with_provenance(map)
}

fn simulate(sim: SimConfig, n_races: usize, out: &Path, format: LogFormat) -> Result<(), CliError> {
    let prov = Provenance::new(sim.seed, config_hash(&sim));
    let series = simulate_series(&ExperimentConfig::new(sim.clone(), n_races), Execution::default())?;
    artifact::create_dir(out)?;
    let mut manifest = Manifest::new(prov.clone(), "simulate");
    manifest.add(out, "config.txt", sim.render().as_bytes())?;
    for race in &series.races {
        let bytes = log_bytes(&stamp(&race.log, &prov, race.seed), format)?;
        let name = format!("{}.{}", race.race_id, format.extension());
        manifest.add_race(out, &name, &bytes, Some((&race.race_id, race.seed)))?;
    }
    manifest.add(out, "time_trials.csv", &time_trial_bytes(&series.time_trials, &prov)?)?;
    manifest.finish(out)?;
    println!(
        "simulated {} race(s) of {} skaters (seed {}) into {}",
        series.races.len(),
        sim.n_skaters,
        sim.seed,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExcludedEntry {
    race_id: String,
    reason: String,
    min_gaps: Vec<Option<f64>>,
}

#[derive(Debug, Serialize)]
struct SkippedFile {
    file: String,
    reason: String,
}

#[derive(Debug, Serialize)]
struct Sidecar {
    #[serde(flatten)]
    provenance: Provenance,
    params: AnalysisParams,
    bunch_races: Vec<String>,
    excluded: Vec<ExcludedEntry>,
    remeasure: Vec<RemeasureRequest>,
    skipped_files: Vec<SkippedFile>,
}

fn excluded_entry(m: &RaceMetrics, params: &AnalysisParams) -> ExcludedEntry {
    ExcludedEntry {
        race_id: m.race_id.clone(),
        reason: format!(
            "break-away: a gap above {} s among the leading places over the last two laps",
            params.breakaway.gap
        ),
        min_gaps: m.min_gaps.clone(),
    }
}

type NamedLogs = Vec<(String, RaceLog)>;

/// Race-log file names listed in a `manifest.json` written by `simulate`.
fn manifest_logs(dir: &Path) -> Result<Option<BTreeSet<String>>, CliError> {
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return Ok(None);
    }
    let text = artifact::read_to_string(&path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let files = value["files"]
        .as_array()
        .ok_or_else(|| CliError::Validation(format!("{}: no 'files' list", path.display())))?;
    Ok(Some(
        files
            .iter()
            .filter(|f| f.get("race_id").is_some())
            .filter_map(|f| f["path"].as_str().map(str::to_owned))
            .collect(),
    ))
}

/// Parses every `.csv` / `.jsonl` log in `dir`, or only the race logs named in
/// its manifest when there is one.
fn read_logs(dir: &Path) -> Result<(NamedLogs, Vec<SkippedFile>), CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    if let Some(listed) = manifest_logs(dir)? {
        paths.retain(|p| p.file_name().is_some_and(|n| listed.contains(&*n.to_string_lossy())));
    }
    paths.sort();
    let mut logs = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => LogFormat::Csv,
            Some("jsonl") => LogFormat::JsonLines,
            _ => continue,
        };
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        match parse_race_log(std::io::BufReader::new(file), format) {
            Ok(log) => logs.push((name, log)),
            Err(e) => skipped.push(SkippedFile {
                file: name,
                reason: e.to_string(),
            }),
        }
    }
    Ok((logs, skipped))
}

/// The value all inputs agree on, if any.
fn common_value<'a>(values: impl IntoIterator<Item = Option<&'a String>>) -> Option<String> {
    let set: BTreeSet<Option<&String>> = values.into_iter().collect();
    match set.into_iter().collect::<Vec<_>>().as_slice() {
        [Some(v)] => Some((*v).clone()),
        _ => None,
    }
}

fn analyze(dir: &Path, out: &Path, params: AnalysisParams, seed: Option<u64>) -> Result<(), CliError> {
    let (logs, skipped) = read_logs(dir)?;
    if logs.is_empty() {
        return Err(CliError::Validation(format!("no parseable race logs in {}", dir.display())));
    }
    for s in &skipped {
        eprintln!("skipping {}: {}", s.file, s.reason);
    }
    let analyzed = map_ordered(&logs, Execution::default(), |(_, log)| analyze_race(log, &params))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    // a race logged by two checkers is reconciled into one table
    let mut by_race: BTreeMap<String, Vec<&RaceMetrics>> = BTreeMap::new();
    for m in &analyzed {
        by_race.entry(m.race_id.clone()).or_default().push(m);
    }
    let mut remeasure = Vec::new();
    let mut races = Vec::new();
    for (race_id, tables) in by_race {
        match tables.as_slice() {
            [one] => races.push((*one).clone()),
            [a, b] => {
                let (merged, requests) = reconcile_race_metrics(a, b, params.discrepancy_tol)?;
                remeasure.extend(requests);
                races.push(merged);
            }
            more => {
                return Err(CliError::Validation(format!(
                    "race {race_id} appears in {} logs; at most two checkers are supported",
                    more.len()
                )))
            }
        }
    }

    let upstream_seed = common_value(logs.iter().map(|(_, l)| l.provenance().get("seed")));
    let upstream_hash = common_value(logs.iter().map(|(_, l)| l.provenance().get("config_hash")));
    let input_hashes: Vec<String> = logs
        .iter()
        .map(|(name, log)| Ok(format!("{name}:{}", sha256_hex(&log_bytes(log, LogFormat::Csv)?))))
        .collect::<Result<_, CliError>>()?;
    let seed = seed.or_else(|| upstream_seed.and_then(|s| s.parse().ok())).unwrap_or(0);
    let hash = derived_hash(
        upstream_hash.as_deref().unwrap_or(&input_hashes.join(",")),
        &params,
    );
    let prov = Provenance::new(seed, hash);

    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut excluded = Vec::new();
    let mut bunch = Vec::new();
    for m in &races {
        if m.race_type == RaceType::Breakaway {
            excluded.push(excluded_entry(m, &params));
        } else {
            bunch.push(m.race_id.clone());
            rows.extend(m.rows.iter().cloned());
        }
    }
    let mut comments = prov.pairs();
    if let Some(h) = &upstream_hash {
        comments.push(("source_config_hash".into(), h.clone()));
    }
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &comments, &mut buf)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        artifact::create_dir(parent)?;
    }
    artifact::write_atomic(out, &buf)?;
    let sidecar_path = sidecar_path(out);
    artifact::write_json(
        &sidecar_path,
        &Sidecar {
            provenance: prov,
            params,
            bunch_races: bunch.clone(),
            excluded,
            remeasure,
            skipped_files: skipped,
        },
    )?;
    println!(
        "analyzed {} race(s): {} bunch, {} break-away; {} rows -> {}",
        races.len(),
        bunch.len(),
        races.len() - bunch.len(),
        rows.len(),
        out.display()
    );
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.excluded.json"))
}

/// `#key=value` lines at the top of a CSV.
fn csv_comments(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map_while(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect()
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    model: Model,
    #[serde(skip_serializing_if = "Option::is_none")]
    trial_column: Option<TrialColumn>,
    n_races: usize,
    #[serde(flatten)]
    fit: &'a LmmFit,
}

fn fit(
    metrics: &Path,
    model: Model,
    time_trials: Option<&Path>,
    column: TrialColumn,
    method: Method,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let text = artifact::read_to_string(metrics)?;
    let source = csv_comments(&text);
    let rows = peloton::metrics::read_metrics_csv(text.as_bytes())?;
    let trials = match time_trials {
        Some(p) => Some(read_time_trials(artifact::read_to_string(p)?.as_bytes())?),
        None if model == Model::Eq3 => {
            return Err(CliError::Validation("eq3 needs --time-trials".into()));
        }
        None => None,
    };
    let data = build_dataset(model, &rows, trials.as_deref(), column)?;
    let result = fit_lmm(&data, method, &OptimizerSettings::default())?;

    let seed = seed
        .or_else(|| source.get("seed").and_then(|s| s.parse().ok()))
        .unwrap_or(0);
    let upstream = source.get("config_hash").cloned().unwrap_or_else(|| sha256_hex(text.as_bytes()));
    let trial_column = (model == Model::Eq3).then_some(column);
    let hash = derived_hash(&upstream, &(model, method, trial_column));
    let races: BTreeSet<&str> = rows.iter().map(|r| r.race_id.as_str()).collect();
    let report = FitReport {
        provenance: Provenance::new(seed, hash),
        model,
        trial_column,
        n_races: races.len(),
        fit: &result,
    };
    match out {
        Some(path) => {
            artifact::write_json(path, &report)?;
            print_fit(model, &result);
        }
        None => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Validation(e.to_string()))?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                // a reader such as `head` closing early is not a failure
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(CliError::io(Path::new("<stdout>"), e))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn print_fit(model: Model, fit: &LmmFit) {
    println!(
        "{model} ({}) n = {} observations, {} skaters",
        fit.method, fit.n_obs, fit.n_subjects
    );
    println!("{:<16} {:>11} {:>10} {:>9} {:>10}", "term", "estimate", "std.err", "z", "p");
    for c in &fit.coefficients {
        println!(
            "{:<16} {:>11.5} {:>10.5} {:>9.3} {:>10.4}",
            c.term, c.estimate, c.std_error, c.z, c.p_value
        );
    }
    println!(
        "sigma2 skater = {:.5}, sigma2 residual = {:.5}{}",
        fit.sigma2_subject,
        fit.sigma2_residual,
        if fit.convergence.boundary { " (skater variance on the boundary)" } else { "" }
    );
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Dynamics {
    x0: Option<f64>,
    step: f64,
    iterations: usize,
}

#[derive(Debug, Serialize)]
struct EquilibriumReport {
    #[serde(flatten)]
    provenance: Provenance,
    payoffs: PayoffMatrix,
    x_star: f64,
    payoff_lead: f64,
    payoff_draft: f64,
    indifference_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dynamics: Option<DynamicsSummary>,
}

#[derive(Debug, Serialize)]
struct DynamicsSummary {
    x0: f64,
    step: f64,
    iterations: usize,
    x_final: f64,
    /// First iteration within one step of the equilibrium, if reached.
    entered_band_at: Option<usize>,
}

fn equilibrium(
    [t, r, s, p]: [f64; 4],
    dynamics: Dynamics,
    trajectory: Option<&Path>,
    out: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    let m = PayoffMatrix::any(t, r, s, p)?;
    let x = nash_cooperation_fraction(&m)?;
    let (lead, draft) = expected_payoffs(&m, x);
    if !(dynamics.step > 0.0 && dynamics.step <= 1.0) {
        return Err(CliError::Validation(format!("--step must be in (0, 1], got {}", dynamics.step)));
    }
    if let Some(x0) = dynamics.x0 {
        if !(0.0..=1.0).contains(&x0) {
            return Err(CliError::Validation(format!("--x0 must be in [0, 1], got {x0}")));
        }
    }
    let run = (dynamics.x0.is_some() || trajectory.is_some()).then(|| {
        let x0 = dynamics.x0.unwrap_or(0.0);
        (x0, best_response_dynamics(&m, x0, dynamics.step, dynamics.iterations))
    });
    let prov = Provenance::new(seed, derived_hash("equilibrium", &(m, dynamics)));
    let summary = run.as_ref().map(|(x0, traj)| DynamicsSummary {
        x0: *x0,
        step: dynamics.step,
        iterations: dynamics.iterations,
        x_final: *traj.last().expect("trajectory holds the start"),
        entered_band_at: traj.iter().position(|v| (v - x).abs() <= dynamics.step + 1e-12),
    });

    println!("T > R > S > P holds: chicken game");
    println!("x* = {x:.4}");
    println!("payoff lead  = {lead:.6}");
    println!("payoff draft = {draft:.6}");
    if let Some(d) = &summary {
        match d.entered_band_at {
            Some(k) => println!("best response from {} enters x* ± {} at iteration {k}", d.x0, d.step),
            None => println!("best response from {} stays outside x* ± {}", d.x0, d.step),
        }
    }
    if let (Some(path), Some((_, traj))) = (trajectory, &run) {
        let mut text = prov.comment_lines();
        text.push_str("iteration,x\n");
        for (k, v) in traj.iter().enumerate() {
            text.push_str(&format!("{k},{v}\n"));
        }
        artifact::write_atomic(path, text.as_bytes())?;
    }
    if let Some(path) = out {
        artifact::write_json(
            path,
            &EquilibriumReport {
                provenance: prov,
                payoffs: m,
                x_star: x,
                payoff_lead: lead,
                payoff_draft: draft,
                indifference_gap: (lead - draft).abs(),
                dynamics: summary,
            },
        )?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ModelReport {
    model: Model,
    #[serde(flatten)]
    outcome: ModelOutcome,
}

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
enum ModelOutcome {
    Fitted { fit: LmmFit },
    Failed { error: String },
}

#[derive(Debug, Serialize)]
struct ExperimentReport {
    #[serde(flatten)]
    provenance: Provenance,
    n_races: usize,
    bunch_races: Vec<String>,
    excluded: Vec<ExcludedEntry>,
    params: AnalysisParams,
    method: Method,
    fits: Vec<ModelReport>,
}

fn report(
    sim: SimConfig,
    n_races: usize,
    analysis: AnalysisParams,
    method: Method,
    out: &Path,
    format: LogFormat,
) -> Result<(), CliError> {
    let hash = derived_hash(&config_hash(&sim), &(analysis, method));
    let prov = Provenance::new(sim.seed, hash);
    let cfg = ExperimentConfig {
        analysis,
        method,
        ..ExperimentConfig::new(sim.clone(), n_races)
    };
    let result = run_experiment(&cfg, Execution::default())?;

    artifact::create_dir(&out.join("logs"))?;
    let mut manifest = Manifest::new(prov.clone(), "report");
    manifest.add(out, "config.txt", sim.render().as_bytes())?;
    for race in &result.races {
        let bytes = log_bytes(&stamp(&race.log, &prov, race.seed), format)?;
        let name = format!("logs/{}.{}", race.race_id, format.extension());
        manifest.add_race(out, &name, &bytes, Some((&race.race_id, race.seed)))?;
    }
    manifest.add(out, "time_trials.csv", &time_trial_bytes(&result.time_trials, &prov)?)?;
    let mut buf = Vec::new();
    write_metrics_csv(&result.metrics, &prov.pairs(), &mut buf)?;
    manifest.add(out, "metrics.csv", &buf)?;

    // fitted here rather than taken from the experiment so that error kinds survive
    let settings = OptimizerSettings::default();
    let mut non_converged = Vec::new();
    let fits: Vec<ModelReport> = [Model::Eq1, Model::Eq2, Model::Eq3]
        .into_iter()
        .map(|model| {
            let outcome = build_dataset(model, &result.metrics, Some(&result.time_trials), TrialColumn::BestTime)
                .and_then(|d| fit_lmm(&d, method, &settings));
            let outcome = match outcome {
                Ok(fit) => ModelOutcome::Fitted { fit },
                Err(e) => {
                    if matches!(e, peloton::stats::StatsError::NonConvergence(_)) {
                        non_converged.push(format!("{model}: {e}"));
                    }
                    ModelOutcome::Failed { error: e.to_string() }
                }
            };
            ModelReport { model, outcome }
        })
        .collect();
    let bunch: Vec<String> = result
        .races
        .iter()
        .filter(|r| r.metrics.race_type == RaceType::Bunch)
        .map(|r| r.race_id.clone())
        .collect();
    let excluded: Vec<ExcludedEntry> = result
        .races
        .iter()
        .filter(|r| r.metrics.race_type == RaceType::Breakaway)
        .map(|r| excluded_entry(&r.metrics, &analysis))
        .collect();
    let rep = ExperimentReport {
        provenance: prov,
        n_races,
        bunch_races: bunch.clone(),
        excluded,
        params: analysis,
        method,
        fits,
    };
    let mut text = serde_json::to_string_pretty(&rep).map_err(|e| CliError::Validation(e.to_string()))?;
    text.push('\n');
    manifest.add(out, "report.json", text.as_bytes())?;
    manifest.finish(out)?;

    println!(
        "{} race(s), {} bunch, {} break-away excluded; {} metrics rows",
        n_races,
        bunch.len(),
        n_races - bunch.len(),
        result.metrics.len()
    );
    for m in &rep.fits {
        match &m.outcome {
            ModelOutcome::Fitted { fit } => print_fit(m.model, fit),
            ModelOutcome::Failed { error } => println!("{}: not fitted ({error})", m.model),
        }
    }
    println!("artifacts in {}", out.display());
    if non_converged.is_empty() {
        Ok(())
    } else {
        Err(CliError::NonConvergence(non_converged.join("; ")))
    }
}
