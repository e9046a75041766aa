use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Admission, Cohort, ObservationEvent};
use crate::error::{Error, Result};

pub const ADMISSION_HEADER: [&str; 4] = ["admission_id", "los_hours", "died_in_hospital", "demo_flags"];
pub const EVENT_HEADER: [&str; 4] = ["admission_id", "variable_id", "time_hours", "value"];

pub const ADMISSION_FILE: &str = "admissions.csv";
pub const EVENT_FILE: &str = "events.csv";
pub const JSONL_FILE: &str = "cohort.jsonl";

fn parse_err(file: &'static str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file,
        line,
        message: message.into(),
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, file: &'static str, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(parse_err(
            file,
            1,
            format!("expected header `{}`, found `{}`", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(())
}

fn parse_f64(file: &'static str, line: u64, field: &str, raw: &str) -> Result<f64> {
    let value: f64 = raw
        .parse()
        .map_err(|_| parse_err(file, line, format!("unparseable {field} `{raw}`")))?;
    if !value.is_finite() {
        return Err(parse_err(file, line, format!("{field} must be finite, got `{raw}`")));
    }
    Ok(value)
}

fn parse_bool(file: &'static str, line: u64, raw: &str) -> Result<bool> {
    match raw {
        "0" | "false" | "False" => Ok(false),
        "1" | "true" | "True" => Ok(true),
        other => Err(parse_err(file, line, format!("unparseable died_in_hospital `{other}`"))),
    }
}

fn read_admissions<R: Read>(input: R) -> Result<Vec<Admission>> {
    const FILE: &str = "admission file";
    let mut rdr = reader(input);
    check_header(&mut rdr, FILE, &ADMISSION_HEADER)?;
    let mut admissions: Vec<Admission> = Vec::new();
    let mut index = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != ADMISSION_HEADER.len() {
            return Err(parse_err(
                FILE,
                line,
                format!("expected {} columns, found {}", ADMISSION_HEADER.len(), record.len()),
            ));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(parse_err(FILE, line, "empty admission_id"));
        }
        let los = parse_f64(FILE, line, "los_hours", &record[1])?;
        if los <= 0.0 {
            return Err(parse_err(FILE, line, format!("los_hours must be positive, got {los}")));
        }
        let died = parse_bool(FILE, line, &record[2])?;
        let flags = record[3].split(';').map(str::trim).filter(|f| !f.is_empty());
        if index.insert(id.clone(), admissions.len()).is_some() {
            return Err(parse_err(FILE, line, format!("duplicate admission_id `{id}`")));
        }
        admissions.push(Admission::new(id, los, died).with_flags(flags));
    }
    Ok(admissions)
}

/// Reads the admission and event CSV files into a cohort.
///
/// Events are attached to their admission and sorted by time; duplicate
/// rows are kept. Any malformed row aborts ingestion with its line number.
pub fn ingest_cohort<E: Read, A: Read>(event_file: E, admission_file: A) -> Result<Cohort> {
    const FILE: &str = "event file";
    let mut admissions = read_admissions(admission_file)?;
    let index: HashMap<String, usize> = admissions
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.clone(), i))
        .collect();

    let mut rdr = reader(event_file);
    check_header(&mut rdr, FILE, &EVENT_HEADER)?;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != EVENT_HEADER.len() {
            return Err(parse_err(
                FILE,
                line,
                format!("expected {} columns, found {}", EVENT_HEADER.len(), record.len()),
            ));
        }
        let &slot = index
            .get(&record[0])
            .ok_or_else(|| parse_err(FILE, line, format!("unknown admission `{}`", &record[0])))?;
        let variable = &record[1];
        if variable.is_empty() {
            return Err(parse_err(FILE, line, "empty variable_id"));
        }
        let time = parse_f64(FILE, line, "time_hours", &record[2])?;
        let value = parse_f64(FILE, line, "value", &record[3])?;
        let adm = &mut admissions[slot];
        if time < 0.0 {
            return Err(parse_err(FILE, line, format!("negative event time {time}")));
        }
        if time > adm.los_hours {
            return Err(parse_err(
                FILE,
                line,
                format!("event time {time} exceeds los_hours {} of `{}`", adm.los_hours, adm.id),
            ));
        }
        adm.events.push(ObservationEvent::new(variable, time, value));
    }
    Ok(Cohort::from_admissions(admissions))
}

pub fn write_cohort_csv<A: Write, E: Write>(cohort: &Cohort, admission_out: A, event_out: E) -> Result<()> {
    let mut adm_w = csv::Writer::from_writer(admission_out);
    adm_w.write_record(ADMISSION_HEADER)?;
    let mut evt_w = csv::Writer::from_writer(event_out);
    evt_w.write_record(EVENT_HEADER)?;
    for adm in &cohort.admissions {
        let flags = adm.demographics.iter().cloned().collect::<Vec<_>>().join(";");
        adm_w.write_record([
            adm.id.as_str(),
            &adm.los_hours.to_string(),
            if adm.died_in_hospital { "1" } else { "0" },
            &flags,
        ])?;
        for ev in &adm.events {
            evt_w.write_record([
                adm.id.as_str(),
                ev.variable.as_str(),
                &ev.time.to_string(),
                &ev.value.to_string(),
            ])?;
        }
    }
    adm_w.flush()?;
    evt_w.flush()?;
    Ok(())
}

/// One admission object per line.
pub fn write_cohort_jsonl<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for adm in &cohort.admissions {
        serde_json::to_writer(&mut out, adm)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cohort_jsonl<R: Read>(input: R) -> Result<Cohort> {
    const FILE: &str = "cohort jsonl";
    let mut admissions = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let adm: Admission = serde_json::from_str(&line).map_err(|e| parse_err(FILE, line_no, e.to_string()))?;
        if !(adm.los_hours.is_finite() && adm.los_hours > 0.0) {
            return Err(parse_err(FILE, line_no, "los_hours must be positive"));
        }
        if !seen.insert(adm.id.clone()) {
            return Err(parse_err(FILE, line_no, format!("duplicate admission_id `{}`", adm.id)));
        }
        for ev in &adm.events {
            if !(ev.time.is_finite() && ev.time >= 0.0 && ev.time <= adm.los_hours) {
                return Err(parse_err(FILE, line_no, format!("event time {} outside [0, los_hours]", ev.time)));
            }
            if !ev.value.is_finite() {
                return Err(parse_err(FILE, line_no, "non-finite event value"));
            }
        }
        admissions.push(adm);
    }
    Ok(Cohort::from_admissions(admissions))
}

/// Writes `admissions.csv` and `events.csv` into `dir`.
pub fn write_cohort_dir(cohort: &Cohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_cohort_csv(
        cohort,
        BufWriter::new(File::create(dir.join(ADMISSION_FILE))?),
        BufWriter::new(File::create(dir.join(EVENT_FILE))?),
    )
}

/// Loads a cohort from a `.jsonl` file, or from a directory holding either
/// `cohort.jsonl` or the `admissions.csv`/`events.csv` pair.
pub fn load_cohort(path: &Path) -> Result<Cohort> {
    if path.is_dir() {
        let jsonl = path.join(JSONL_FILE);
        if jsonl.exists() {
            return read_cohort_jsonl(File::open(jsonl)?);
        }
        let adm = path.join(ADMISSION_FILE);
        let evt = path.join(EVENT_FILE);
        for p in [&adm, &evt] {
            if !p.exists() {
                return Err(Error::MissingRunFile(p.clone()));
            }
        }
        return ingest_cohort(BufReader::new(File::open(evt)?), BufReader::new(File::open(adm)?));
    }
    read_cohort_jsonl(BufReader::new(File::open(path)?))
}
