//! Gender-ratio statistics: the log-quotient comparing how strongly a
//! comorbidity (or a diagnosis/prescription count) is expressed in female
//! vs male patients of one age group. Positive values mean female excess.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cohort::{CohortAssignment, Status};
use crate::model::{AgeGroup, Dataset, DiagnosisCode, Sex, AGE_GROUP_COUNT};
use crate::scan::{fmt_f64, ComorbidityProfile};
use crate::{Error, Result};

/// GR = ln((1 + p_f) / (1 + p_m)) computed as ln_1p(p_f) − ln_1p(p_m).
///
/// The difference form makes the sex-swap antisymmetry exact in floating
/// point, not just approximate. Both proportions lie in [0, 1], so the
/// value lies in [−ln 2, ln 2].
fn log_quotient(p_female: f64, p_male: f64) -> f64 {
    p_female.ln_1p() - p_male.ln_1p()
}

/// Gender ratio of comorbidity `x` among the cohort's cases in age group
/// `t`: proportions are N_{f/m}(d,x,t) over N_{f/m}(d,t).
///
/// `None` when either sex has no cases in `t` (undefined cell, excluded
/// from exports).
pub fn gender_ratio(
    dataset: &Dataset,
    assignment: &CohortAssignment,
    x: DiagnosisCode,
    t: AgeGroup,
) -> Option<f64> {
    let nf = assignment.cases_in_sex(Sex::Female, t);
    let nm = assignment.cases_in_sex(Sex::Male, t);
    if nf == 0 || nm == 0 {
        return None;
    }
    let mut nfx = 0u64;
    let mut nmx = 0u64;
    for &idx in dataset.carriers(x) {
        let idx = idx as usize;
        if assignment.status(idx) != Status::Case || assignment.age_group(idx) != t {
            continue;
        }
        match dataset.patients()[idx].sex {
            Sex::Female => nfx += 1,
            Sex::Male => nmx += 1,
        }
    }
    Some(log_quotient(nfx as f64 / nf as f64, nmx as f64 / nm as f64))
}

/// Which per-patient event count the count-based gender ratio buckets on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountKind {
    /// Distinct three-character diagnosis codes.
    Diagnoses,
    /// Distinct full ATC codes.
    Prescriptions,
}

impl CountKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CountKind::Diagnoses => "diagnoses",
            CountKind::Prescriptions => "prescriptions",
        }
    }

    fn count_for(&self, p: &crate::model::PatientRecord) -> usize {
        match self {
            CountKind::Diagnoses => p.distinct_diagnosis_count(),
            CountKind::Prescriptions => p.distinct_prescription_count(),
        }
    }
}

/// Count-based gender ratio over the whole population: the proportion of
/// each sex in age group `t` having exactly `y` distinct events of the
/// given kind, fed through the same log-quotient.
///
/// `None` when either sex is absent from `t`.
pub fn gender_ratio_counts(
    dataset: &Dataset,
    kind: CountKind,
    y: usize,
    t: AgeGroup,
    reference_year: u16,
) -> Result<Option<f64>> {
    let mut total = [0u64; 2];
    let mut with_y = [0u64; 2];
    for p in dataset.patients() {
        let age = p.age_at(reference_year)?;
        if AgeGroup::of_age(age) != t {
            continue;
        }
        total[p.sex.index()] += 1;
        if kind.count_for(p) == y {
            with_y[p.sex.index()] += 1;
        }
    }
    let (m, f) = (Sex::Male.index(), Sex::Female.index());
    if total[m] == 0 || total[f] == 0 {
        return Ok(None);
    }
    Ok(Some(log_quotient(
        with_y[f] as f64 / total[f] as f64,
        with_y[m] as f64 / total[m] as f64,
    )))
}

/// Which rows the comorbidity GR matrix carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GenderRows {
    /// Only diagnoses flagged significant by the scan.
    #[default]
    ComorbidityList,
    /// Every candidate, aligned row-for-row with the effective-RR matrix.
    AllCandidates,
}

/// Write `<cohort>_gr_matrix.tsv`: rows are diagnoses, columns the age
/// groups, undefined cells left empty.
pub fn export_gender_matrix(
    dataset: &Dataset,
    assignment: &CohortAssignment,
    profile: &ComorbidityProfile,
    rows: GenderRows,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let diagnoses: &[DiagnosisCode] = match rows {
        GenderRows::ComorbidityList => &profile.comorbidity_list,
        GenderRows::AllCandidates => &profile.candidates,
    };

    let mut out = String::from("icd");
    for t in AgeGroup::all() {
        write!(out, "\t{t}").unwrap();
    }
    out.push('\n');
    for &x in diagnoses {
        write!(out, "{x}").unwrap();
        for t in AgeGroup::all() {
            match gender_ratio(dataset, assignment, x, t) {
                Some(v) => write!(out, "\t{}", fmt_f64(v)).unwrap(),
                None => out.push('\t'),
            }
        }
        out.push('\n');
    }
    let path = dir.join(format!("{}_gr_matrix.tsv", profile.cohort_name));
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

/// Write `gr_counts_<kind>.tsv` for count buckets 0..=`max_y` (exact
/// counts) or for the half-open ranges between `bin_edges` when given.
///
/// A binned bucket counts patients whose event count lies in
/// `[edge_i, edge_{i+1})`; the final bucket is open-ended.
pub fn export_count_matrix(
    dataset: &Dataset,
    kind: CountKind,
    max_y: usize,
    bin_edges: Option<&[usize]>,
    reference_year: u16,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    // One pass: per (sex, age group) population, and per bucket counts.
    let buckets: Vec<(String, usize, usize)> = match bin_edges {
        None => (0..=max_y)
            .map(|y| (y.to_string(), y, y + 1))
            .collect(),
        Some(edges) => {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(
                    "count bin edges must be strictly increasing with at least two entries".into(),
                ));
            }
            let mut b: Vec<(String, usize, usize)> = edges
                .windows(2)
                .map(|w| (format!("{}-{}", w[0], w[1]), w[0], w[1]))
                .collect();
            let last = *edges.last().unwrap();
            b.push((format!("{last}+"), last, usize::MAX));
            b
        }
    };

    let mut total = [[0u64; AGE_GROUP_COUNT]; 2];
    let mut counts = vec![[[0u64; AGE_GROUP_COUNT]; 2]; buckets.len()];
    for p in dataset.patients() {
        let age = p.age_at(reference_year)?;
        let t = AgeGroup::of_age(age).index();
        let s = p.sex.index();
        total[s][t] += 1;
        let y = kind.count_for(p);
        for (bi, &(_, lo, hi)) in buckets.iter().enumerate() {
            if (lo..hi).contains(&y) {
                counts[bi][s][t] += 1;
            }
        }
    }

    let mut out = String::from("y");
    for t in AgeGroup::all() {
        write!(out, "\t{t}").unwrap();
    }
    out.push('\n');
    let (m, f) = (Sex::Male.index(), Sex::Female.index());
    for (bi, (label, _, _)) in buckets.iter().enumerate() {
        write!(out, "{label}").unwrap();
        for t in 0..AGE_GROUP_COUNT {
            if total[m][t] == 0 || total[f][t] == 0 {
                out.push('\t');
            } else {
                let v = log_quotient(
                    counts[bi][f][t] as f64 / total[f][t] as f64,
                    counts[bi][m][t] as f64 / total[m][t] as f64,
                );
                write!(out, "\t{}", fmt_f64(v)).unwrap();
            }
        }
        out.push('\n');
    }
    let path = dir.join(format!("gr_counts_{}.tsv", kind.as_str()));
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}
