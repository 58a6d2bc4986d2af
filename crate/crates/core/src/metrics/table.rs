//! Per-race metrics rows and the metrics CSV consumed by the stats layer.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::exposure::exposure_in_window;
use super::{
    analysis_window, breakaway_min_gaps, intermediate_ranks, reconcile_checkers, reconcile_ranks,
    BreakawayParams, CheckerPair, DraftingParams, MetricsError, RaceType, Reconciliation,
};
use crate::racelog::{assign_finish_ranks, normalize_rank, RaceLog, SkaterId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub drafting: DraftingParams,
    pub breakaway: BreakawayParams,
    /// Relative discrepancy below which two checkers' exposed times agree.
    pub discrepancy_tol: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            drafting: DraftingParams::default(),
            breakaway: BreakawayParams::default(),
            discrepancy_tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub race_id: String,
    pub skater_id: SkaterId,
    pub tau: f64,
    pub imputed_fraction: f64,
    #[serde(rename = "rank_L3")]
    pub rank_l3: Option<f64>,
    #[serde(rename = "rank_L2")]
    pub rank_l2: Option<f64>,
    #[serde(rename = "rank_L1")]
    pub rank_l1: Option<f64>,
    pub finish_rank: u32,
    pub norm_finish_rank: f64,
    #[serde(with = "bool_as_int")]
    pub breakaway: bool,
}

impl MetricsRow {
    /// Intermediate rank with `laps` laps to go.
    pub fn rank_at(&self, laps: u32) -> Option<f64> {
        match laps {
            3 => self.rank_l3,
            2 => self.rank_l2,
            1 => self.rank_l1,
            _ => None,
        }
    }
}

mod bool_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match String::deserialize(d)?.as_str() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(D::Error::custom(format!("expected 0 or 1, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaceMetrics {
    pub race_id: String,
    pub n_skaters: u32,
    pub race_type: RaceType,
    /// Minimum gap between places n and n+1 in the last-two-laps window.
    pub min_gaps: Vec<Option<f64>>,
    pub rows: Vec<MetricsRow>,
}

/// Metrics for every skater of one race, in finish-rank order.
pub fn analyze_race(log: &RaceLog, params: &AnalysisParams) -> Result<RaceMetrics, MetricsError> {
    params.drafting.validate()?;
    let window = analysis_window(log)?;
    let finish = assign_finish_ranks(log)?;
    let min_gaps = breakaway_min_gaps(log, &params.breakaway)?;
    let race_type = if min_gaps
        .iter()
        .flatten()
        .any(|&g| g > params.breakaway.gap + super::TIME_EPS)
    {
        RaceType::Breakaway
    } else {
        RaceType::Bunch
    };
    let inter = [
        intermediate_ranks(log, 3)?,
        intermediate_ranks(log, 2)?,
        intermediate_ranks(log, 1)?,
    ];
    let n = log.meta().n_skaters;
    let mut rows = Vec::with_capacity(log.roster().len());
    for id in finish.ordered() {
        let s = log.skater_index(id).expect("roster member");
        let exposure = exposure_in_window(log, s, &params.drafting, window);
        let finish_rank = finish.rank_of(id).expect("ranked");
        rows.push(MetricsRow {
            race_id: log.meta().race_id.clone(),
            skater_id: id.clone(),
            tau: exposure.tau,
            imputed_fraction: exposure.imputed_fraction,
            rank_l3: inter[0].rank_of(id),
            rank_l2: inter[1].rank_of(id),
            rank_l1: inter[2].rank_of(id),
            finish_rank,
            norm_finish_rank: normalize_rank(finish_rank, n)?,
            breakaway: race_type == RaceType::Breakaway,
        });
    }
    Ok(RaceMetrics {
        race_id: log.meta().race_id.clone(),
        n_skaters: n,
        race_type,
        min_gaps,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemeasureRequest {
    pub race_id: String,
    pub skater_id: SkaterId,
    pub tau_1: f64,
    pub tau_2: f64,
    pub discrepancy: f64,
}

/// Merges two checkers' metrics for the same race.
///
/// Exposed times that agree are averaged; disagreeing ones are listed for
/// re-measurement and the row keeps the mean so downstream shapes stay intact.
/// Intermediate ranks are averaged when they differ. The race counts as a
/// break-away only if both checkers classify it so.
pub fn reconcile_race_metrics(
    first: &RaceMetrics,
    second: &RaceMetrics,
    tolerance: f64,
) -> Result<(RaceMetrics, Vec<RemeasureRequest>), MetricsError> {
    if first.race_id != second.race_id || first.rows.len() != second.rows.len() {
        return Err(MetricsError::Table(format!(
            "checker tables for '{}' and '{}' do not describe the same race",
            first.race_id, second.race_id
        )));
    }
    let mut merged = first.clone();
    let mut remeasure = Vec::new();
    let both_break = first.race_type == RaceType::Breakaway && second.race_type == RaceType::Breakaway;
    merged.race_type = if both_break {
        RaceType::Breakaway
    } else {
        RaceType::Bunch
    };
    for row in &mut merged.rows {
        let other = second
            .rows
            .iter()
            .find(|r| r.skater_id == row.skater_id)
            .ok_or_else(|| MetricsError::Table(format!("second checker lacks {}", row.skater_id)))?;
        let pair = CheckerPair::new(row.tau, other.tau)?;
        match reconcile_checkers(pair, tolerance) {
            Reconciliation::Agreed { tau, .. } => row.tau = tau,
            Reconciliation::Remeasure { discrepancy } => {
                remeasure.push(RemeasureRequest {
                    race_id: row.race_id.clone(),
                    skater_id: row.skater_id.clone(),
                    tau_1: row.tau,
                    tau_2: other.tau,
                    discrepancy,
                });
                row.tau = (row.tau + other.tau) / 2.0;
            }
        }
        row.imputed_fraction = (row.imputed_fraction + other.imputed_fraction) / 2.0;
        let avg = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => Some(reconcile_ranks(x, y)),
            (x, y) => x.or(y),
        };
        row.rank_l3 = avg(row.rank_l3, other.rank_l3);
        row.rank_l2 = avg(row.rank_l2, other.rank_l2);
        row.rank_l1 = avg(row.rank_l1, other.rank_l1);
        row.breakaway = both_break;
    }
    Ok((merged, remeasure))
}

pub const METRICS_HEADER: [&str; 10] = [
    "race_id",
    "skater_id",
    "tau",
    "imputed_fraction",
    "rank_L3",
    "rank_L2",
    "rank_L1",
    "finish_rank",
    "norm_finish_rank",
    "breakaway",
];

/// Writes rows under the metrics header, preceded by `#key=value` comment lines.
pub fn write_metrics_csv<W: Write>(
    rows: &[MetricsRow],
    comments: &[(String, String)],
    mut out: W,
) -> Result<(), MetricsError> {
    let io = |e: std::io::Error| MetricsError::Table(e.to_string());
    for (k, v) in comments {
        writeln!(out, "#{k}={v}").map_err(io)?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let err = |e: csv::Error| MetricsError::Table(e.to_string());
    w.write_record(METRICS_HEADER).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| MetricsError::Table(e.to_string()))
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| MetricsError::Table(e.to_string()))?
        .clone();
    for col in METRICS_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(MetricsError::Table(format!("missing column '{col}'")));
        }
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e: csv::Error| MetricsError::Table(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fixtures::{log_from_times, paced};

    #[test]
    fn rows_in_finish_order_and_csv_round_trip() {
        let log = log_from_times(
            4,
            4,
            &[
                ("A", paced(16, 10.0, 0.0)),
                ("B", paced(16, 10.0, 0.1)),
                ("C", paced(16, 10.0, 0.5)),
            ],
        );
        let m = analyze_race(&log, &AnalysisParams::default()).unwrap();
        assert_eq!(m.race_type, RaceType::Bunch);
        let ids: Vec<&str> = m.rows.iter().map(|r| r.skater_id.as_str()).collect();
        assert_eq!(ids, vec!["A", "B", "C"]);
        assert_eq!(m.rows[0].tau, 80.0);
        assert_eq!(m.rows[1].tau, 0.0);
        assert_eq!(m.rows[2].tau, 80.0);
        assert_eq!(m.rows[2].norm_finish_rank, 1.0);
        assert_eq!(m.rows[1].rank_l2, Some(2.0));

        let mut buf = Vec::new();
        write_metrics_csv(&m.rows, &[("seed".into(), "7".into())], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#seed=7\nrace_id,skater_id,tau,imputed_fraction,rank_L3,rank_L2,rank_L1,finish_rank,norm_finish_rank,breakaway\n"));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), m.rows);
    }

    #[test]
    fn missing_column_rejected() {
        let text = "race_id,skater_id,tau\nR,A,1.0\n";
        assert!(read_metrics_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn checker_merge_averages_and_flags() {
        let log = log_from_times(4, 4, &[("A", paced(16, 10.0, 0.0)), ("B", paced(16, 10.0, 0.1))]);
        let m1 = analyze_race(&log, &AnalysisParams::default()).unwrap();
        let mut m2 = m1.clone();
        m2.rows[0].tau = 84.0; // D = 4/164 < 0.1
        m2.rows[1].tau = 10.0; // D = 1 against 0
        m2.rows[1].rank_l1 = Some(3.0);
        let (merged, remeasure) = reconcile_race_metrics(&m1, &m2, 0.1).unwrap();
        assert_eq!(merged.rows[0].tau, 82.0);
        assert_eq!(remeasure.len(), 1);
        assert_eq!(remeasure[0].skater_id.as_str(), "B");
        assert_eq!(merged.rows[1].rank_l1, Some(2.5));
    }
}
