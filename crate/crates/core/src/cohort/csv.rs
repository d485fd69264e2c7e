//! One row per patient-hour.
//!
//! Header: `patient_id, hour`, the 27 observed features, `aux_0..aux_13`,
//! `vaso, fluids, outcome`. Hours start at 0 and increase by one within a
//! stay; `outcome` (`DEATH`/`RELEASE`) is filled on the final row only.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::types::*;
use crate::error::{Error, Result};

const NUM_COLUMNS: usize = 2 + STATE_DIM + 3;

pub fn cohort_header() -> Vec<String> {
    let mut h = vec!["patient_id".to_string(), "hour".to_string()];
    h.extend(feature_names());
    h.extend(["vaso", "fluids", "outcome"].map(String::from));
    h
}

pub fn write_cohort_csv<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    write_cohort_csv_with(cohort, writer, &[], |_, _, _| Vec::new())
}

/// Writes the cohort rows followed by `extra` columns produced per `(patient, hour)`.
pub(crate) fn write_cohort_csv_with<W: Write>(
    cohort: &Cohort,
    writer: W,
    extra_header: &[&str],
    mut extra: impl FnMut(usize, &PatientTrajectory, usize) -> Vec<String>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = cohort_header();
    header.extend(extra_header.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    let mut features = [0.0; STATE_DIM];
    for (pi, p) in cohort.patients.iter().enumerate() {
        for (hour, (s, a)) in p.states.iter().zip(&p.actions).enumerate() {
            row.clear();
            row.push(p.patient_id.to_string());
            row.push(hour.to_string());
            s.write_features(&mut features);
            for (k, v) in features.iter().enumerate() {
                let is_score = (NUM_DEMOGRAPHICS + NUM_VITALS..NUM_DEMOGRAPHICS + NUM_VITALS + NUM_SCORES).contains(&k);
                row.push(if is_score { (*v as u8).to_string() } else { v.to_string() });
            }
            row.push(a.vaso.to_string());
            row.push(a.fluids.to_string());
            row.push(if hour + 1 == p.len() { p.outcome.as_str().to_string() } else { String::new() });
            row.extend(extra(pi, p, hour));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_cohort_csv(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_cohort_csv(cohort, &mut buf)?;
    crate::numerics::checkpoint::write_atomic(path, &buf)
}

pub fn load_cohort_csv(path: &Path) -> Result<Cohort> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    read_cohort_csv(File::open(path)?)
}

fn parse_err(line: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

struct Pending {
    traj: PatientTrajectory,
    outcome: Option<Outcome>,
    line: usize,
}

impl Pending {
    fn finish(self) -> Result<PatientTrajectory> {
        let outcome = self
            .outcome
            .ok_or_else(|| parse_err(self.line, "outcome", "final row of a stay has no outcome"))?;
        Ok(PatientTrajectory { outcome, ..self.traj })
    }
}

pub fn read_cohort_csv<R: Read>(reader: R) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let expected = cohort_header();
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::EmptyCohort),
        Some(h) => h?,
    };
    for (k, name) in expected.iter().enumerate() {
        match header.get(k) {
            Some(h) if h.trim() == name => {}
            Some(h) => return Err(parse_err(1, name, format!("expected column `{name}`, found `{h}`"))),
            None => return Err(parse_err(1, name, "missing column")),
        }
    }

    let mut patients = Vec::new();
    let mut current: Option<Pending> = None;
    let mut features = [0.0; STATE_DIM];
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() < NUM_COLUMNS {
            return Err(parse_err(line, &expected[rec.len()], "missing column"));
        }
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let num = |k: usize| -> Result<f64> {
            let v: f64 = field(k)
                .parse()
                .map_err(|_| parse_err(line, &expected[k], format!("`{}` is not a number", field(k))))?;
            if !v.is_finite() {
                return Err(parse_err(line, &expected[k], "value is not finite"));
            }
            Ok(v)
        };
        let int = |k: usize, max: u64| -> Result<u64> {
            let v: u64 = field(k)
                .parse()
                .map_err(|_| parse_err(line, &expected[k], format!("`{}` is not a non-negative integer", field(k))))?;
            if v > max {
                return Err(parse_err(line, &expected[k], format!("{v} exceeds {max}")));
            }
            Ok(v)
        };

        let patient_id = int(0, u64::MAX)?;
        let hour = int(1, u64::MAX)? as usize;
        for (k, f) in features.iter_mut().enumerate() {
            *f = num(2 + k)?;
        }
        let score_base = 2 + NUM_DEMOGRAPHICS + NUM_VITALS;
        let mut scores = [0u8; NUM_SCORES];
        for (k, s) in scores.iter_mut().enumerate() {
            *s = int(score_base + k, if k == 0 { 24 } else { 4 })? as u8;
        }
        let [sofa, liver, renal, cns, cardio] = scores;
        let scores = OrganScores::new(sofa, liver, renal, cns, cardio)
            .map_err(|e| parse_err(line, "sofa", e.to_string()))?;
        let a = 2 + STATE_DIM;
        let action = ActionPair {
            vaso: int(a, 2)? as u8,
            fluids: int(a + 1, 2)? as u8,
        };
        let outcome = match field(a + 2) {
            "" => None,
            "DEATH" => Some(Outcome::Death),
            "RELEASE" => Some(Outcome::Release),
            other => return Err(parse_err(line, "outcome", format!("unknown outcome `{other}`"))),
        };

        let mut state = StateVector {
            demographics: [0.0; NUM_DEMOGRAPHICS],
            vitals: [0.0; NUM_VITALS],
            scores,
            labs: [0.0; NUM_LABS],
            aux: [0.0; NUM_AUX],
        };
        let mut k = 0;
        for dst in [&mut state.demographics[..], &mut state.vitals[..]] {
            dst.copy_from_slice(&features[k..k + dst.len()]);
            k += dst.len();
        }
        k += NUM_SCORES;
        for dst in [&mut state.labs[..], &mut state.aux[..]] {
            dst.copy_from_slice(&features[k..k + dst.len()]);
            k += dst.len();
        }

        match current.as_mut() {
            Some(p) if p.traj.patient_id == patient_id => {
                if p.outcome.is_some() {
                    return Err(parse_err(p.line, "outcome", "outcome set on a non-final row"));
                }
                if hour != p.traj.len() {
                    return Err(parse_err(
                        line,
                        "hour",
                        format!("expected hour {}, found {hour}", p.traj.len()),
                    ));
                }
            }
            _ => {
                if hour != 0 {
                    return Err(parse_err(line, "hour", format!("stay must start at hour 0, found {hour}")));
                }
                if let Some(done) = current.take() {
                    patients.push(done.finish()?);
                }
                current = Some(Pending {
                    traj: PatientTrajectory {
                        patient_id,
                        states: Vec::new(),
                        actions: Vec::new(),
                        outcome: Outcome::Release,
                    },
                    outcome: None,
                    line,
                });
            }
        }
        let p = current.as_mut().expect("current stay");
        p.traj.states.push(state);
        p.traj.actions.push(action);
        p.outcome = outcome;
        p.line = line;
    }
    match current {
        None => Err(Error::EmptyCohort),
        Some(done) => {
            patients.push(done.finish()?);
            Ok(Cohort::new(patients))
        }
    }
}
