//! Cohort construction: splits a dataset into an index-disease case group
//! and a comparison group, and precomputes the per-age-group, per-sex count
//! tables every downstream statistic draws from.

use std::collections::BTreeSet;

use crate::model::{AgeGroup, AtcCode, Dataset, DiagnosisCode, Sex, AGE_GROUP_COUNT};
use crate::{Error, Result};

/// How case membership is decided.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CohortSelector {
    /// Any diagnosis event with a code in this set.
    Diagnosis(BTreeSet<DiagnosisCode>),
    /// Any prescription whose ATC code starts with this prefix.
    AtcPrefix(String),
}

impl CohortSelector {
    fn validate(&self) -> Result<()> {
        match self {
            CohortSelector::Diagnosis(codes) if codes.is_empty() => {
                Err(Error::Config("cohort selector has no codes".into()))
            }
            CohortSelector::AtcPrefix(prefix) => {
                // A prefix must itself be a valid (possibly partial) ATC code.
                prefix
                    .parse::<AtcCode>()
                    .map_err(|_| Error::Config(format!("bad ATC prefix {prefix:?}")))?;
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The diagnosis codes this selector is keyed on, if any. Used to drop
    /// the index disease itself from candidate comorbidities.
    pub fn diagnosis_codes(&self) -> Option<&BTreeSet<DiagnosisCode>> {
        match self {
            CohortSelector::Diagnosis(codes) => Some(codes),
            CohortSelector::AtcPrefix(_) => None,
        }
    }
}

/// A named cohort recipe. The chapter exclusions apply only to candidate
/// comorbidity diagnoses, never to case selection itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortDefinition {
    pub name: String,
    pub selector: CohortSelector,
    pub require_inpatient: bool,
    pub exclude_deceased: bool,
    pub excluded_chapters: BTreeSet<char>,
    /// Carriers of these codes are dropped from the comparison group (they
    /// stay eligible as cases if the selector matches them).
    pub control_exclusion_codes: BTreeSet<DiagnosisCode>,
    /// Frequency threshold for the temporal analysis: diagnoses with fewer
    /// than z case co-occurrences in the later year are skipped.
    pub leadlag_z: u64,
    /// Optional age cap for the temporal analysis (cases at or above it are
    /// left out of the year-pair counts).
    pub leadlag_max_age: Option<u16>,
}

/// Chapters holding symptoms (R), injuries and external causes (S, T, V-Y),
/// pregnancy (O), and contact-with-services codes (Z): not diseases, so not
/// candidate comorbidities.
pub fn default_excluded_chapters() -> BTreeSet<char> {
    ['R', 'S', 'T', 'O', 'V', 'W', 'X', 'Y', 'Z'].into_iter().collect()
}

fn codes(list: &[&str]) -> BTreeSet<DiagnosisCode> {
    list.iter().map(|s| s.parse().unwrap()).collect()
}

impl CohortDefinition {
    /// Built-in cohort recipes: `dm1`, `dm2`, and the prescription-based
    /// robustness cohort `dm_atc`.
    pub fn preset(name: &str) -> Option<CohortDefinition> {
        match name {
            "dm1" => Some(CohortDefinition {
                name: "dm1".into(),
                selector: CohortSelector::Diagnosis(codes(&["E10"])),
                require_inpatient: true,
                exclude_deceased: true,
                excluded_chapters: default_excluded_chapters(),
                control_exclusion_codes: codes(&["E11"]),
                leadlag_z: 3,
                leadlag_max_age: Some(30),
            }),
            "dm2" => Some(CohortDefinition {
                name: "dm2".into(),
                selector: CohortSelector::Diagnosis(codes(&["E11"])),
                require_inpatient: true,
                exclude_deceased: true,
                excluded_chapters: default_excluded_chapters(),
                control_exclusion_codes: codes(&["E10"]),
                leadlag_z: 20,
                leadlag_max_age: None,
            }),
            // Prescription-based case definition; the comparison group is
            // the whole remaining population, never-hospitalized included.
            "dm_atc" => Some(CohortDefinition {
                name: "dm_atc".into(),
                selector: CohortSelector::AtcPrefix("A10".into()),
                require_inpatient: false,
                exclude_deceased: true,
                excluded_chapters: default_excluded_chapters(),
                control_exclusion_codes: BTreeSet::new(),
                leadlag_z: 20,
                leadlag_max_age: None,
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("cohort name is empty".into()));
        }
        self.selector.validate()
    }
}

/// Membership of one patient in a cohort split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Case,
    Control,
    /// Failed an eligibility rule or carries a control-exclusion code.
    Excluded,
}

/// The materialized cohort split plus the count tables keyed by sex and
/// five-year age group. Age is measured at a fixed reference year, so each
/// patient sits in exactly one age group for the whole analysis.
#[derive(Debug, Clone)]
pub struct CohortAssignment {
    pub name: String,
    pub reference_year: u16,
    pub selector: CohortSelector,
    pub leadlag_z: u64,
    pub leadlag_max_age: Option<u16>,
    statuses: Vec<Status>,
    age_groups: Vec<AgeGroup>,
    case_indices: Vec<u32>,
    cases_by_age: [u64; AGE_GROUP_COUNT],
    controls_by_age: [u64; AGE_GROUP_COUNT],
    cases_by_sex_age: [[u64; AGE_GROUP_COUNT]; 2],
    controls_by_sex_age: [[u64; AGE_GROUP_COUNT]; 2],
    population_by_sex_age: [[u64; AGE_GROUP_COUNT]; 2],
}

impl CohortAssignment {
    pub fn status(&self, patient_index: usize) -> Status {
        self.statuses[patient_index]
    }

    pub fn age_group(&self, patient_index: usize) -> AgeGroup {
        self.age_groups[patient_index]
    }

    /// Indices of case patients, ascending.
    pub fn case_indices(&self) -> &[u32] {
        &self.case_indices
    }

    pub fn case_total(&self) -> u64 {
        self.case_indices.len() as u64
    }

    pub fn control_total(&self) -> u64 {
        self.controls_by_age.iter().sum()
    }

    /// N(d,t): cases in age group t.
    pub fn cases_in(&self, t: AgeGroup) -> u64 {
        self.cases_by_age[t.index()]
    }

    pub fn controls_in(&self, t: AgeGroup) -> u64 {
        self.controls_by_age[t.index()]
    }

    /// N_{m/f}(d,t): cases of one sex in age group t.
    pub fn cases_in_sex(&self, sex: Sex, t: AgeGroup) -> u64 {
        self.cases_by_sex_age[sex.index()][t.index()]
    }

    pub fn controls_in_sex(&self, sex: Sex, t: AgeGroup) -> u64 {
        self.controls_by_sex_age[sex.index()][t.index()]
    }

    /// N_{m/f}(t): everyone of one sex in age group t, regardless of cohort
    /// eligibility. Identical across cohorts built on the same dataset.
    pub fn population_in_sex(&self, sex: Sex, t: AgeGroup) -> u64 {
        self.population_by_sex_age[sex.index()][t.index()]
    }
}

/// Split `dataset` into cases and controls per `definition`, with ages taken
/// at `reference_year`.
///
/// Eligibility (inpatient, survival) applies symmetrically to both arms;
/// control-exclusion codes then remove their carriers from the comparison
/// group only. An empty case set is a configuration error.
pub fn build_cohort(
    dataset: &Dataset,
    definition: &CohortDefinition,
    reference_year: u16,
) -> Result<CohortAssignment> {
    definition.validate()?;
    if reference_year < dataset.window().start {
        return Err(Error::Config(format!(
            "age reference year {reference_year} before study window start {}",
            dataset.window().start
        )));
    }

    let mut assignment = CohortAssignment {
        name: definition.name.clone(),
        reference_year,
        selector: definition.selector.clone(),
        leadlag_z: definition.leadlag_z,
        leadlag_max_age: definition.leadlag_max_age,
        statuses: Vec::with_capacity(dataset.len()),
        age_groups: Vec::with_capacity(dataset.len()),
        case_indices: Vec::new(),
        cases_by_age: [0; AGE_GROUP_COUNT],
        controls_by_age: [0; AGE_GROUP_COUNT],
        cases_by_sex_age: [[0; AGE_GROUP_COUNT]; 2],
        controls_by_sex_age: [[0; AGE_GROUP_COUNT]; 2],
        population_by_sex_age: [[0; AGE_GROUP_COUNT]; 2],
    };

    for (idx, patient) in dataset.patients().iter().enumerate() {
        let age = patient.age_at(reference_year)?;
        let group = AgeGroup::of_age(age);
        assignment.age_groups.push(group);
        assignment.population_by_sex_age[patient.sex.index()][group.index()] += 1;

        let eligible = (patient.inpatient || !definition.require_inpatient)
            && !(patient.died_in_window && definition.exclude_deceased);
        if !eligible {
            assignment.statuses.push(Status::Excluded);
            continue;
        }

        let selected = match &definition.selector {
            CohortSelector::Diagnosis(codes) => {
                codes.iter().any(|&c| patient.has_diagnosis(c))
            }
            CohortSelector::AtcPrefix(prefix) => patient.has_prescription_prefix(prefix),
        };

        let status = if selected {
            Status::Case
        } else if definition
            .control_exclusion_codes
            .iter()
            .any(|&c| patient.has_diagnosis(c))
        {
            Status::Excluded
        } else {
            Status::Control
        };
        assignment.statuses.push(status);

        match status {
            Status::Case => {
                assignment.case_indices.push(idx as u32);
                assignment.cases_by_age[group.index()] += 1;
                assignment.cases_by_sex_age[patient.sex.index()][group.index()] += 1;
            }
            Status::Control => {
                assignment.controls_by_age[group.index()] += 1;
                assignment.controls_by_sex_age[patient.sex.index()][group.index()] += 1;
            }
            Status::Excluded => {}
        }
    }

    if assignment.case_indices.is_empty() {
        return Err(Error::EmptyCohort(definition.name.clone()));
    }
    Ok(assignment)
}

/// Distinct diagnosis codes eligible as comorbidity candidates: everything
/// in the dataset minus excluded chapters minus the selector's own codes, in
/// lexicographic order.
pub fn candidate_diagnoses(
    dataset: &Dataset,
    definition: &CohortDefinition,
) -> Vec<DiagnosisCode> {
    let own = definition.selector.diagnosis_codes();
    dataset
        .diagnosis_codes()
        .filter(|code| !definition.excluded_chapters.contains(&code.chapter()))
        .filter(|code| own.is_none_or(|set| !set.contains(code)))
        .collect()
}
