use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::racelog::SkaterId;

/// Finish times of one individual race.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceTimes {
    pub race_id: String,
    pub times: Vec<(SkaterId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardized {
    /// Z-score of every result, race by race.
    pub scores: Vec<(String, SkaterId, f64)>,
    /// Lowest (fastest) Z-score per skater.
    pub best: BTreeMap<SkaterId, f64>,
}

/// Within-race Z-scores using the sample standard deviation.
pub fn standardize_times(races: &[RaceTimes]) -> Result<Standardized, StatsError> {
    let mut scores = Vec::new();
    let mut best: BTreeMap<SkaterId, f64> = BTreeMap::new();
    for race in races {
        let n = race.times.len();
        if n < 2 {
            return Err(StatsError::TooFewValues { needed: 2, have: n });
        }
        if race.times.iter().any(|(_, t)| !t.is_finite()) {
            return Err(StatsError::NonFinite(0));
        }
        let mean = race.times.iter().map(|(_, t)| t).sum::<f64>() / n as f64;
        let var = race.times.iter().map(|(_, t)| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if sd == 0.0 {
            return Err(StatsError::ZeroSpread(race.race_id.clone()));
        }
        for (id, t) in &race.times {
            let z = (t - mean) / sd;
            scores.push((race.race_id.clone(), id.clone(), z));
            best.entry(id.clone()).and_modify(|b| *b = b.min(z)).or_insert(z);
        }
    }
    Ok(Standardized { scores, best })
}

/// Time-trial best of one skater: raw seconds, the standardized Z-score, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrialRecord {
    pub skater_id: SkaterId,
    #[serde(default)]
    pub best_time: Option<f64>,
    #[serde(default)]
    pub standardized_best: Option<f64>,
}

impl TimeTrialRecord {
    pub fn validate(&self) -> Result<(), StatsError> {
        match (self.best_time, self.standardized_best) {
            (None, None) => Err(StatsError::Table(format!("{} has no time-trial value", self.skater_id))),
            (Some(t), _) if !(t > 0.0 && t.is_finite()) => Err(StatsError::Table(format!(
                "{} has invalid best_time {t}",
                self.skater_id
            ))),
            (_, Some(z)) if !z.is_finite() => Err(StatsError::Table(format!(
                "{} has non-finite standardized_best",
                self.skater_id
            ))),
            _ => Ok(()),
        }
    }
}

/// Writes `skater_id,best_time` plus a `standardized_best` column when any record carries one.
pub fn write_time_trials<W: Write>(records: &[TimeTrialRecord], out: W) -> Result<(), StatsError> {
    let err = |e: csv::Error| StatsError::Table(e.to_string());
    let with_z = records.iter().any(|r| r.standardized_best.is_some());
    let with_t = !with_z || records.iter().any(|r| r.best_time.is_some());
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["skater_id"];
    if with_t {
        header.push("best_time");
    }
    if with_z {
        header.push("standardized_best");
    }
    w.write_record(&header).map_err(err)?;
    for r in records {
        r.validate()?;
        let mut row = vec![r.skater_id.as_str().to_string()];
        if with_t {
            row.push(cell(r.best_time));
        }
        if with_z {
            row.push(cell(r.standardized_best));
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| StatsError::Table(e.to_string()))
}

pub fn read_time_trials<R: Read>(input: R) -> Result<Vec<TimeTrialRecord>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers().map_err(|e| StatsError::Table(e.to_string()))?;
    if !headers.iter().any(|h| h == "skater_id")
        || !headers.iter().any(|h| h == "best_time" || h == "standardized_best")
    {
        return Err(StatsError::Table(
            "expected columns skater_id and best_time or standardized_best".into(),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let rec: TimeTrialRecord = rec.map_err(|e: csv::Error| StatsError::Table(e.to_string()))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn race(id: &str, times: &[(&str, f64)]) -> RaceTimes {
        RaceTimes {
            race_id: id.into(),
            times: times.iter().map(|(s, t)| ((*s).into(), *t)).collect(),
        }
    }

    #[test]
    fn z_scores_use_sample_sd() {
        let s = standardize_times(&[race("R", &[("A", 70.0), ("B", 72.0), ("C", 74.0)])]).unwrap();
        // mean 72, sample sd 2
        let z: Vec<f64> = s.scores.iter().map(|x| x.2).collect();
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);
        let s = standardize_times(&[race("R", &[("A", 100.0), ("B", 110.0), ("C", 120.0)])]).unwrap();
        let z: Vec<f64> = s.scores.iter().map(|x| x.2).collect();
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn z_scores_are_centered() {
        let times = [("A", 411.3), ("B", 409.87), ("C", 415.02), ("D", 420.6), ("E", 408.11)];
        let s = standardize_times(&[race("R", &times)]).unwrap();
        let sum: f64 = s.scores.iter().map(|x| x.2).sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn best_is_the_minimum_over_races() {
        let s = standardize_times(&[
            race("R1", &[("A", 70.0), ("B", 72.0), ("C", 74.0)]),
            race("R2", &[("A", 71.0), ("B", 69.0), ("C", 73.0)]),
        ])
        .unwrap();
        assert_eq!(s.best[&SkaterId::from("A")], -1.0);
        assert_eq!(s.best[&SkaterId::from("B")], -1.0);
        assert_eq!(s.best[&SkaterId::from("C")], 1.0);
    }

    #[test]
    fn degenerate_races_rejected() {
        assert!(standardize_times(&[race("R", &[("A", 70.0)])]).is_err());
        assert_eq!(
            standardize_times(&[race("R", &[("A", 70.0), ("B", 70.0)])]).unwrap_err(),
            StatsError::ZeroSpread("R".into())
        );
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            TimeTrialRecord { skater_id: "A".into(), best_time: Some(421.5), standardized_best: None },
            TimeTrialRecord { skater_id: "B".into(), best_time: Some(430.25), standardized_best: None },
        ];
        let mut buf = Vec::new();
        write_time_trials(&recs, &mut buf).unwrap();
        assert!(buf.starts_with(b"skater_id,best_time\n"));
        assert_eq!(read_time_trials(buf.as_slice()).unwrap(), recs);

        let z = "skater_id,standardized_best\nA,-1.2\n";
        let got = read_time_trials(z.as_bytes()).unwrap();
        assert_eq!(got[0].standardized_best, Some(-1.2));
        assert_eq!(got[0].best_time, None);
        assert!(read_time_trials("skater_id,best_time\nA,-3\n".as_bytes()).is_err());
        assert!(read_time_trials("skater_id,tau\nA,3\n".as_bytes()).is_err());
    }
}
