//! CSV ingestion and export.
//!
//! Three files make up a claims extract: a patient roster and two event
//! tables (diagnoses, prescriptions). Headers must match exactly; a wrong
//! header is a structural error and aborts the load. Individual bad rows are
//! skipped and counted per reason, but a file rejecting more than 10% of its
//! rows aborts too: at that point the input is assumed to be the wrong file,
//! not a slightly dirty one.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::model::{
    AssembleStats, Dataset, DiagnosisCode, DiagnosisEvent, PatientRecord, PrescriptionEvent, Sex,
    YearRange,
};
use crate::{Error, Result};

pub const PATIENTS_HEADER: &[&str] = &["patient_id", "birth_year", "sex", "died_in_window", "inpatient"];
pub const DIAGNOSES_HEADER: &[&str] = &["patient_id", "icd10", "year"];
pub const PRESCRIPTIONS_HEADER: &[&str] = &["patient_id", "atc", "year"];

/// Reasons an individual row can be rejected. Out-of-window events are
/// tracked separately: they are dropped by design, not malformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    BadField,
    BadCode,
    UnknownSex,
    BadYear,
    DuplicatePatient,
    UnknownPatient,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::BadField => "malformed field",
            RejectReason::BadCode => "unparseable code",
            RejectReason::UnknownSex => "unknown sex",
            RejectReason::BadYear => "unparseable year",
            RejectReason::DuplicatePatient => "duplicate patient id",
            RejectReason::UnknownPatient => "event for unknown patient id",
        };
        f.write_str(s)
    }
}

/// Per-file ingestion tally.
#[derive(Debug, Clone, Default)]
pub struct FileStats {
    pub path: PathBuf,
    pub rows: u64,
    pub rejected: u64,
    pub reasons: HashMap<RejectReason, u64>,
    /// First few rejected rows, for diagnostics: (line number, reason, raw row).
    pub samples: Vec<(u64, RejectReason, String)>,
    /// Events whose year fell outside the study window (dropped, not rejected).
    pub out_of_window: u64,
}

impl FileStats {
    fn new(path: &Path) -> Self {
        FileStats {
            path: path.to_owned(),
            ..Default::default()
        }
    }

    fn reject(&mut self, line: u64, reason: RejectReason, raw: &csv::StringRecord) {
        self.rejected += 1;
        *self.reasons.entry(reason).or_insert(0) += 1;
        if self.samples.len() < 5 {
            let raw = raw.iter().collect::<Vec<_>>().join(",");
            self.samples.push((line, reason, raw));
        }
    }

    /// Errors if more than 10% of data rows were rejected.
    fn check_threshold(&self) -> Result<()> {
        if self.rows > 0 && self.rejected * 10 > self.rows {
            let sample = self
                .samples
                .iter()
                .map(|(line, reason, raw)| format!("line {line}: {reason}: {raw}"))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::ExcessiveRejections {
                file: self.path.display().to_string(),
                rejected: self.rejected,
                total: self.rows,
                sample,
            });
        }
        Ok(())
    }
}

/// Everything observed while loading one extract.
#[derive(Debug, Clone)]
pub struct IngestStats {
    pub patients: FileStats,
    pub diagnoses: FileStats,
    pub prescriptions: FileStats,
    pub assemble: AssembleStats,
}

impl IngestStats {
    pub fn total_rejected(&self) -> u64 {
        self.patients.rejected + self.diagnoses.rejected + self.prescriptions.rejected
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file)))
}

fn check_header(
    rdr: &mut csv::Reader<BufReader<File>>,
    path: &Path,
    expected: &[&str],
) -> Result<()> {
    let got = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if got.iter().ne(expected.iter().copied()) {
        return Err(Error::MalformedHeader {
            file: path.display().to_string(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            got: got.iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// Load a three-file claims extract and canonicalize it into a [`Dataset`].
///
/// Events in years outside `window` are dropped and counted. Event rows that
/// reference patient ids absent from the roster are rejected rows.
pub fn load_dataset(
    patients_path: &Path,
    diagnoses_path: &Path,
    prescriptions_path: &Path,
    window: YearRange,
) -> Result<(Dataset, IngestStats)> {
    let mut pstats = FileStats::new(patients_path);
    let mut records: Vec<PatientRecord> = Vec::new();
    let mut index: HashMap<String, u32> = HashMap::new();

    let mut rdr = open_reader(patients_path)?;
    check_header(&mut rdr, patients_path, PATIENTS_HEADER)?;
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2; // header is line 1
        let row = row.map_err(|e| Error::Data(format!("{}: {e}", patients_path.display())))?;
        pstats.rows += 1;
        if row.len() != PATIENTS_HEADER.len() {
            pstats.reject(line, RejectReason::BadField, &row);
            continue;
        }
        let id = row[0].trim();
        if id.is_empty() {
            pstats.reject(line, RejectReason::BadField, &row);
            continue;
        }
        let Ok(birth_year) = row[1].trim().parse::<u16>() else {
            pstats.reject(line, RejectReason::BadYear, &row);
            continue;
        };
        let Ok(sex) = row[2].trim().parse::<Sex>() else {
            pstats.reject(line, RejectReason::UnknownSex, &row);
            continue;
        };
        let (Some(died), Some(inpatient)) =
            (parse_bool(row[3].trim()), parse_bool(row[4].trim()))
        else {
            pstats.reject(line, RejectReason::BadField, &row);
            continue;
        };
        if index.contains_key(id) {
            pstats.reject(line, RejectReason::DuplicatePatient, &row);
            continue;
        }
        index.insert(id.to_owned(), records.len() as u32);
        records.push(PatientRecord {
            id: id.to_owned(),
            birth_year,
            sex,
            died_in_window: died,
            inpatient,
            diagnoses: Vec::new(),
            prescriptions: Vec::new(),
        });
    }
    pstats.check_threshold()?;

    let mut dstats = FileStats::new(diagnoses_path);
    let mut rdr = open_reader(diagnoses_path)?;
    check_header(&mut rdr, diagnoses_path, DIAGNOSES_HEADER)?;
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::Data(format!("{}: {e}", diagnoses_path.display())))?;
        dstats.rows += 1;
        if row.len() != DIAGNOSES_HEADER.len() {
            dstats.reject(line, RejectReason::BadField, &row);
            continue;
        }
        let Some(&patient) = index.get(row[0].trim()) else {
            dstats.reject(line, RejectReason::UnknownPatient, &row);
            continue;
        };
        let Ok(code) = DiagnosisCode::parse_lenient(row[1].trim()) else {
            dstats.reject(line, RejectReason::BadCode, &row);
            continue;
        };
        let Ok(year) = row[2].trim().parse::<u16>() else {
            dstats.reject(line, RejectReason::BadYear, &row);
            continue;
        };
        if !window.contains(year) {
            dstats.out_of_window += 1;
            continue;
        }
        records[patient as usize]
            .diagnoses
            .push(DiagnosisEvent { code, year });
    }
    dstats.check_threshold()?;

    let mut rstats = FileStats::new(prescriptions_path);
    let mut rdr = open_reader(prescriptions_path)?;
    check_header(&mut rdr, prescriptions_path, PRESCRIPTIONS_HEADER)?;
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row =
            row.map_err(|e| Error::Data(format!("{}: {e}", prescriptions_path.display())))?;
        rstats.rows += 1;
        if row.len() != PRESCRIPTIONS_HEADER.len() {
            rstats.reject(line, RejectReason::BadField, &row);
            continue;
        }
        let Some(&patient) = index.get(row[0].trim()) else {
            rstats.reject(line, RejectReason::UnknownPatient, &row);
            continue;
        };
        let Ok(code) = row[1].trim().parse() else {
            rstats.reject(line, RejectReason::BadCode, &row);
            continue;
        };
        let Ok(year) = row[2].trim().parse::<u16>() else {
            rstats.reject(line, RejectReason::BadYear, &row);
            continue;
        };
        if !window.contains(year) {
            rstats.out_of_window += 1;
            continue;
        }
        records[patient as usize]
            .prescriptions
            .push(PrescriptionEvent { code, year });
    }
    rstats.check_threshold()?;

    let (dataset, assemble) = Dataset::assemble(window, records)?;
    Ok((
        dataset,
        IngestStats {
            patients: pstats,
            diagnoses: dstats,
            prescriptions: rstats,
            assemble,
        },
    ))
}

/// Write a dataset back out as the three-file CSV extract, in canonical
/// order. Loading the result reproduces the dataset exactly.
pub fn write_dataset(
    dataset: &Dataset,
    patients_path: &Path,
    diagnoses_path: &Path,
    prescriptions_path: &Path,
) -> Result<()> {
    let mut w = csv_writer(patients_path)?;
    w.write_record(PATIENTS_HEADER)
        .map_err(|e| Error::Data(format!("{}: {e}", patients_path.display())))?;
    for p in dataset.patients() {
        w.write_record([
            p.id.as_str(),
            &p.birth_year.to_string(),
            &p.sex.to_string(),
            if p.died_in_window { "1" } else { "0" },
            if p.inpatient { "1" } else { "0" },
        ])
        .map_err(|e| Error::Data(format!("{}: {e}", patients_path.display())))?;
    }
    w.flush().map_err(|e| Error::io(patients_path, e))?;

    let mut w = csv_writer(diagnoses_path)?;
    w.write_record(DIAGNOSES_HEADER)
        .map_err(|e| Error::Data(format!("{}: {e}", diagnoses_path.display())))?;
    for p in dataset.patients() {
        for e in &p.diagnoses {
            w.write_record([p.id.as_str(), &e.code.to_string(), &e.year.to_string()])
                .map_err(|e| Error::Data(format!("{}: {e}", diagnoses_path.display())))?;
        }
    }
    w.flush().map_err(|e| Error::io(diagnoses_path, e))?;

    let mut w = csv_writer(prescriptions_path)?;
    w.write_record(PRESCRIPTIONS_HEADER)
        .map_err(|e| Error::Data(format!("{}: {e}", prescriptions_path.display())))?;
    for p in dataset.patients() {
        for e in &p.prescriptions {
            w.write_record([p.id.as_str(), e.code.as_str(), &e.year.to_string()])
                .map_err(|e| Error::Data(format!("{}: {e}", prescriptions_path.display())))?;
        }
    }
    w.flush().map_err(|e| Error::io(prescriptions_path, e))?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

/// Render an ingest report as human-readable text (one line per notable
/// count), for logs and the CLI.
pub fn format_report(stats: &IngestStats) -> String {
    let mut out = String::new();
    for fs in [&stats.patients, &stats.diagnoses, &stats.prescriptions] {
        out.push_str(&format!(
            "{}: {} rows, {} rejected",
            fs.path.display(),
            fs.rows,
            fs.rejected
        ));
        let mut reasons: Vec<_> = fs.reasons.iter().collect();
        reasons.sort_by_key(|(r, _)| format!("{r}"));
        for (reason, count) in reasons {
            out.push_str(&format!("\n  {reason}: {count}"));
        }
        if fs.out_of_window > 0 {
            out.push_str(&format!(
                "\n  outside study window (dropped): {}",
                fs.out_of_window
            ));
        }
        out.push('\n');
    }
    if stats.assemble.duplicate_diagnoses_collapsed > 0 {
        out.push_str(&format!(
            "duplicate diagnosis claims collapsed: {}\n",
            stats.assemble.duplicate_diagnoses_collapsed
        ));
    }
    if stats.assemble.duplicate_prescriptions_collapsed > 0 {
        out.push_str(&format!(
            "duplicate prescription claims collapsed: {}\n",
            stats.assemble.duplicate_prescriptions_collapsed
        ));
    }
    out
}
