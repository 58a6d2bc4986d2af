use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    Disqualification, DqReason, LogError, PassageEvent, RaceLog, RaceMeta, RankTable, SkaterId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
    JsonLines,
}

impl LogFormat {
    pub fn extension(self) -> &'static str {
        match self {
            LogFormat::Csv => "csv",
            LogFormat::JsonLines => "jsonl",
        }
    }
}

impl std::str::FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" | "json-lines" | "jsonlines" => Ok(LogFormat::JsonLines),
            other => Err(format!("unknown log format '{other}'")),
        }
    }
}

const CSV_HEADER: [&str; 6] = ["race_id", "skater_id", "lap", "boundary", "time", "observed"];

pub fn parse_race_log<R: Read>(mut input: R, format: LogFormat) -> Result<RaceLog, LogError> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| LogError::Malformed {
            line: 0,
            message: format!("unreadable input: {e}"),
        })?;
    match format {
        LogFormat::Csv => parse_csv(&text),
        LogFormat::JsonLines => parse_jsonl(&text),
    }
}

pub fn write_race_log<W: Write>(log: &RaceLog, out: W, format: LogFormat) -> Result<(), LogError> {
    match format {
        LogFormat::Csv => write_csv(log, out),
        LogFormat::JsonLines => write_jsonl(log, out),
    }
    .map_err(|e| LogError::Io(e.to_string()))
}

/// Shortest round-trip representation, padded to at least millisecond digits.
pub(crate) fn format_time(t: f64) -> String {
    let s = format!("{t}");
    let decimals = s.split_once('.').map_or(0, |(_, d)| d.len());
    if decimals < 3 {
        format!("{t:.3}")
    } else {
        s
    }
}

fn malformed(line: u64, message: impl Into<String>) -> LogError {
    LogError::Malformed {
        line,
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// CSV
//
// Directives precede the header as comment lines:
//   #meta,race_id=R1,sex=women,n_laps=16,track_length=400,boundaries_per_lap=4,n_skaters=20
//   #provenance,tool=peloton 0.1.0,seed=42
//   #dq,S07,812.345      (lapped, overtaken at 812.345 s)
//   #dq,S09,offence
// Without a #meta line the metadata is inferred from the rows.

fn parse_csv(text: &str) -> Result<RaceLog, LogError> {
    let mut meta_fields: Option<(u64, BTreeMap<String, String>)> = None;
    let mut provenance = BTreeMap::new();
    let mut dqs = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let lineno = i as u64 + 1;
        let Some(rest) = line.strip_prefix('#') else {
            continue;
        };
        let mut parts = rest.split(',').map(str::trim);
        match parts.next() {
            Some("meta") => {
                let kv = key_values(parts, lineno)?;
                meta_fields = Some((lineno, kv));
            }
            Some("provenance") => provenance.extend(key_values(parts, lineno)?),
            Some("dq") => {
                let id = parts
                    .next()
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| malformed(lineno, "#dq needs a skater id"))?;
                let when = parts
                    .next()
                    .ok_or_else(|| malformed(lineno, "#dq needs an overtaken time or 'offence'"))?;
                let reason = parse_dq_reason(when).map_err(|m| malformed(lineno, m))?;
                dqs.push(Disqualification {
                    skater_id: SkaterId::new(id),
                    reason,
                });
            }
            // free-form comment
            _ => {}
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| malformed(0, format!("missing header: {e}")))?
        .clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        let line = header.position().map_or(1, |p| p.line());
        return Err(malformed(
            line,
            format!("expected header '{}'", CSV_HEADER.join(",")),
        ));
    }

    let mut events = Vec::new();
    let mut race_ids: Vec<String> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(k).unwrap_or("");
        let lap: u32 = field(2)
            .parse()
            .map_err(|_| malformed(line, format!("bad lap '{}'", field(2))))?;
        let boundary: u32 = field(3)
            .parse()
            .map_err(|_| malformed(line, format!("bad boundary '{}'", field(3))))?;
        let time: f64 = field(4)
            .parse()
            .map_err(|_| malformed(line, format!("bad time '{}'", field(4))))?;
        let observed = match field(5) {
            "1" => true,
            "0" => false,
            other => return Err(malformed(line, format!("observed must be 0 or 1, got '{other}'"))),
        };
        if field(1).is_empty() {
            return Err(malformed(line, "empty skater_id"));
        }
        if !race_ids.iter().any(|r| r == field(0)) {
            race_ids.push(field(0).to_owned());
        }
        events.push(PassageEvent {
            skater_id: SkaterId::new(field(1)),
            lap,
            boundary,
            time,
            observed,
        });
    }
    if race_ids.len() > 1 {
        return Err(malformed(0, format!("rows mix several race ids: {race_ids:?}")));
    }

    let meta = match meta_fields {
        Some((line, kv)) => meta_from_fields(&kv).map_err(|m| malformed(line, m))?,
        None => infer_meta(race_ids.first().cloned().unwrap_or_default(), &events),
    };
    if let Some(rid) = race_ids.first() {
        if *rid != meta.race_id {
            return Err(malformed(
                0,
                format!("row race_id '{rid}' does not match metadata '{}'", meta.race_id),
            ));
        }
    }
    Ok(RaceLog::new(meta, events, dqs)?.with_provenance(provenance))
}

fn key_values<'a>(
    parts: impl Iterator<Item = &'a str>,
    line: u64,
) -> Result<BTreeMap<String, String>, LogError> {
    parts
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                .ok_or_else(|| malformed(line, format!("expected key=value, got '{p}'")))
        })
        .collect()
}

fn parse_dq_reason(s: &str) -> Result<DqReason, String> {
    if s.eq_ignore_ascii_case("offence") || s.eq_ignore_ascii_case("offense") {
        return Ok(DqReason::Offence);
    }
    s.parse::<f64>()
        .map(|overtaken_time| DqReason::Lapped { overtaken_time })
        .map_err(|_| format!("bad overtaken time '{s}'"))
}

fn meta_from_fields(kv: &BTreeMap<String, String>) -> Result<RaceMeta, String> {
    fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<T, String> {
        let v = kv.get(k).ok_or_else(|| format!("#meta is missing '{k}'"))?;
        v.parse().map_err(|_| format!("bad value '{v}' for '{k}'"))
    }
    let sex = match kv.get("sex") {
        Some(s) => Some(s.parse()?),
        None => None,
    };
    Ok(RaceMeta {
        race_id: kv.get("race_id").cloned().unwrap_or_default(),
        sex,
        n_laps: get(kv, "n_laps")?,
        track_length: get(kv, "track_length")?,
        boundaries_per_lap: get(kv, "boundaries_per_lap")?,
        n_skaters: get(kv, "n_skaters")?,
    })
}

fn infer_meta(race_id: String, events: &[PassageEvent]) -> RaceMeta {
    let skaters: HashSet<&SkaterId> = events.iter().map(|e| &e.skater_id).collect();
    RaceMeta {
        race_id,
        sex: None,
        n_laps: events.iter().map(|e| e.lap).max().unwrap_or(1),
        track_length: 400.0,
        boundaries_per_lap: events.iter().map(|e| e.boundary + 1).max().unwrap_or(1),
        n_skaters: skaters.len() as u32,
    }
}

fn write_csv<W: Write>(log: &RaceLog, mut out: W) -> std::io::Result<()> {
    let m = log.meta();
    write!(out, "#meta,race_id={}", m.race_id)?;
    if let Some(sex) = m.sex {
        write!(out, ",sex={sex}")?;
    }
    writeln!(
        out,
        ",n_laps={},track_length={},boundaries_per_lap={},n_skaters={}",
        m.n_laps, m.track_length, m.boundaries_per_lap, m.n_skaters
    )?;
    if !log.provenance().is_empty() {
        write!(out, "#provenance")?;
        for (k, v) in log.provenance() {
            write!(out, ",{k}={v}")?;
        }
        writeln!(out)?;
    }
    for dq in log.disqualifications() {
        match dq.reason {
            DqReason::Lapped { overtaken_time } => {
                writeln!(out, "#dq,{},{}", dq.skater_id, format_time(overtaken_time))?
            }
            DqReason::Offence => writeln!(out, "#dq,{},offence", dq.skater_id)?,
        }
    }
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for e in log.events() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            m.race_id,
            e.skater_id,
            e.lap,
            e.boundary,
            format_time(e.time),
            u8::from(e.observed)
        )?;
    }
    out.flush()
}

// ---------------------------------------------------------------------------
// JSON lines: {"meta": {...}, "provenance": {...}}, one object per event, {"dq": [...]}

#[derive(Serialize, Deserialize)]
struct JsonEvent {
    race_id: String,
    skater_id: SkaterId,
    lap: u32,
    boundary: u32,
    time: f64,
    observed: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JsonOvertaken {
    Time(f64),
    Sentinel(String),
}

#[derive(Serialize, Deserialize)]
struct JsonDq {
    skater_id: SkaterId,
    overtaken_time: JsonOvertaken,
}

fn parse_jsonl(text: &str) -> Result<RaceLog, LogError> {
    let mut meta: Option<RaceMeta> = None;
    let mut provenance = BTreeMap::new();
    let mut events = Vec::new();
    let mut dqs: Option<Vec<Disqualification>> = None;

    for (i, line) in text.lines().enumerate() {
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(line).map_err(|e| malformed(lineno, e.to_string()))?;
        let Value::Object(obj) = &value else {
            return Err(malformed(lineno, "expected a JSON object"));
        };
        if let Some(m) = obj.get("meta") {
            if meta.is_some() || !events.is_empty() {
                return Err(malformed(lineno, "metadata object must be the first line"));
            }
            meta = Some(
                serde_json::from_value(m.clone()).map_err(|e| malformed(lineno, e.to_string()))?,
            );
            if let Some(p) = obj.get("provenance") {
                provenance = serde_json::from_value(p.clone())
                    .map_err(|e| malformed(lineno, e.to_string()))?;
            }
        } else if let Some(d) = obj.get("dq") {
            let list: Vec<JsonDq> =
                serde_json::from_value(d.clone()).map_err(|e| malformed(lineno, e.to_string()))?;
            let parsed = list
                .into_iter()
                .map(|d| {
                    let reason = match d.overtaken_time {
                        JsonOvertaken::Time(t) => DqReason::Lapped { overtaken_time: t },
                        JsonOvertaken::Sentinel(s) => parse_dq_reason(&s)?,
                    };
                    Ok(Disqualification {
                        skater_id: d.skater_id,
                        reason,
                    })
                })
                .collect::<Result<Vec<_>, String>>()
                .map_err(|m| malformed(lineno, m))?;
            dqs = Some(parsed);
        } else {
            if dqs.is_some() {
                return Err(malformed(lineno, "event after the trailing dq object"));
            }
            let Some(m) = &meta else {
                return Err(malformed(lineno, "event before the metadata object"));
            };
            let ev: JsonEvent =
                serde_json::from_value(value).map_err(|e| malformed(lineno, e.to_string()))?;
            if ev.race_id != m.race_id {
                return Err(malformed(
                    lineno,
                    format!("event race_id '{}' does not match metadata '{}'", ev.race_id, m.race_id),
                ));
            }
            events.push(PassageEvent {
                skater_id: ev.skater_id,
                lap: ev.lap,
                boundary: ev.boundary,
                time: ev.time,
                observed: ev.observed,
            });
        }
    }
    let meta = meta.ok_or_else(|| malformed(1, "missing metadata object"))?;
    Ok(RaceLog::new(meta, events, dqs.unwrap_or_default())?.with_provenance(provenance))
}

fn write_jsonl<W: Write>(log: &RaceLog, mut out: W) -> std::io::Result<()> {
    let mut head = serde_json::Map::new();
    head.insert("meta".into(), serde_json::to_value(log.meta())?);
    if !log.provenance().is_empty() {
        head.insert("provenance".into(), serde_json::to_value(log.provenance())?);
    }
    serde_json::to_writer(&mut out, &head)?;
    writeln!(out)?;
    for e in log.events() {
        let je = JsonEvent {
            race_id: log.meta().race_id.clone(),
            skater_id: e.skater_id.clone(),
            lap: e.lap,
            boundary: e.boundary,
            time: e.time,
            observed: e.observed,
        };
        serde_json::to_writer(&mut out, &je)?;
        writeln!(out)?;
    }
    let dq: Vec<JsonDq> = log
        .disqualifications()
        .iter()
        .map(|d| JsonDq {
            skater_id: d.skater_id.clone(),
            overtaken_time: match d.reason {
                DqReason::Lapped { overtaken_time } => JsonOvertaken::Time(overtaken_time),
                DqReason::Offence => JsonOvertaken::Sentinel("offence".into()),
            },
        })
        .collect();
    serde_json::to_writer(&mut out, &serde_json::json!({ "dq": dq }))?;
    writeln!(out)?;
    out.flush()
}

/// Ranks/points table: `race_id,skater_id,finish_rank,points,final_rank`.
pub fn write_rank_table<W: Write>(table: &RankTable, out: W) -> Result<(), LogError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| LogError::Io(e.to_string());
    w.write_record(["race_id", "skater_id", "finish_rank", "points", "final_rank"])
        .map_err(io)?;
    for row in &table.rows {
        w.write_record([
            table.race_id.clone(),
            row.skater_id.to_string(),
            row.finish_rank.to_string(),
            row.points.to_string(),
            row.final_rank.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| LogError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::racelog::tests::two_skater_lap;

    const MINIMAL: &str = "race_id,skater_id,lap,boundary,time,observed
R1,A,1,1,10.000,1
R1,B,1,1,10.100,1
R1,A,1,2,20.000,1
R1,B,1,2,20.100,1
R1,A,1,3,30.000,1
R1,B,1,3,30.100,1
R1,A,1,0,40.000,1
R1,B,1,0,40.100,1
";

    #[test]
    fn minimal_csv_without_meta_is_inferred() {
        let log = parse_race_log(MINIMAL.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(log.events().len(), 8);
        assert_eq!(log.meta().n_laps, 1);
        assert_eq!(log.meta().boundaries_per_lap, 4);
        assert_eq!(log.meta().n_skaters, 2);
        assert_eq!(log.meta().race_id, "R1");
    }

    #[test]
    fn duplicated_row_is_an_error() {
        let dup = format!("{MINIMAL}R1,B,1,0,40.100,1\n");
        let err = parse_race_log(dup.as_bytes(), LogFormat::Csv).unwrap_err();
        assert!(matches!(err, LogError::DuplicateEvent { .. }), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = MINIMAL.replace("R1,A,1,3,30.000,1", "R1,A,x,3,30.000,1");
        match parse_race_log(bad.as_bytes(), LogFormat::Csv).unwrap_err() {
            LogError::Malformed { line, .. } => assert_eq!(line, 6),
            other => panic!("unexpected {other}"),
        }
        let bad = MINIMAL.replace("30.000,1\nR1,B,1,3", "30.000,7\nR1,B,1,3");
        assert!(parse_race_log(bad.as_bytes(), LogFormat::Csv).is_err());
    }

    #[test]
    fn unknown_dq_in_csv() {
        let text = format!("#dq,Z,offence\n{MINIMAL}");
        assert!(matches!(
            parse_race_log(text.as_bytes(), LogFormat::Csv),
            Err(LogError::UnknownDqSkater(_))
        ));
    }

    #[test]
    fn jsonl_malformed_line_reported() {
        let text = "{\"meta\": {\"race_id\":\"R\",\"n_laps\":1,\"track_length\":400.0,\"boundaries_per_lap\":4,\"n_skaters\":2}}\nnot json\n";
        match parse_race_log(text.as_bytes(), LogFormat::JsonLines).unwrap_err() {
            LogError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn both_formats_round_trip_with_dq_and_provenance() {
        let log = two_skater_lap(0.123456789);
        let (mut meta, events, _) = log.into_parts();
        meta.sex = Some(crate::racelog::Sex::Women);
        let events: Vec<_> = events
            .into_iter()
            .filter(|e| !(e.skater_id.as_str() == "B" && e.boundary == 0))
            .collect();
        let mut prov = BTreeMap::new();
        prov.insert("seed".to_string(), "42".to_string());
        let log = RaceLog::new(meta, events, vec![Disqualification::lapped("B", 39.5)])
            .unwrap()
            .with_provenance(prov);
        for fmt in [LogFormat::Csv, LogFormat::JsonLines] {
            let mut buf = Vec::new();
            write_race_log(&log, &mut buf, fmt).unwrap();
            let back = parse_race_log(buf.as_slice(), fmt).unwrap();
            assert_eq!(back, log, "{fmt:?}");
        }
    }

    #[test]
    fn time_formatting_keeps_millisecond_digits() {
        assert_eq!(format_time(300.0), "300.000");
        assert_eq!(format_time(12.5), "12.500");
        assert_eq!(format_time(0.1 + 0.2), "0.30000000000000004");
    }
}
