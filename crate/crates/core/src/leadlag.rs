//! Temporal lead/lag analysis: does the index disease tend to precede or
//! follow another diagnosis across a two-year window?
//!
//! The method compares two directed year-pair counts against their mirror
//! image, then calibrates the observed asymmetry against surrogate data in
//! which every patient's diagnosis years are independently permuted. Counts
//! and surrogates are per sex.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cohort::{CohortAssignment, CohortSelector};
use crate::model::{Dataset, DiagnosisCode, DiagnosisEvent, PatientRecord, Sex};
use crate::scan::fmt_f64;
use crate::{Error, Fnv1a, Result};

/// The six patient counts behind the indicators, for one diagnosis x, one
/// sex, and the ordered year pair (t1, t2). `m_*` are unconditional
/// co-occurrence counts; `lead_*` condition on the index disease being
/// present without x in the other year; `lag_*` condition on x being
/// present without the index disease in the other year.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct YearPairCounts {
    /// M(d,x,t2)
    pub m_t2: u64,
    /// M(d,x,t1)
    pub m_t1: u64,
    /// M(d,x,t2 | d,¬x,t1)
    pub lead_t2: u64,
    /// M(d,x,t1 | d,¬x,t2)
    pub lead_t1: u64,
    /// M(d,x,t2 | ¬d,x,t1)
    pub lag_t2: u64,
    /// M(d,x,t1 | ¬d,x,t2)
    pub lag_t1: u64,
}

impl YearPairCounts {
    /// Fold one patient's presence flags into the counts: d1/d2 index
    /// disease in t1/t2, x1/x2 likewise for the other diagnosis.
    fn update(&mut self, d1: bool, d2: bool, x1: bool, x2: bool) {
        if d2 && x2 {
            self.m_t2 += 1;
            if d1 && !x1 {
                self.lead_t2 += 1;
            }
            if !d1 && x1 {
                self.lag_t2 += 1;
            }
        }
        if d1 && x1 {
            self.m_t1 += 1;
            if d2 && !x2 {
                self.lead_t1 += 1;
            }
            if !d2 && x2 {
                self.lag_t1 += 1;
            }
        }
    }

    fn defined(&self) -> bool {
        self.m_t2 > 0 && self.m_t1 > 0
    }
}

/// I_lead: positive when new x diagnoses pile up in the year after the
/// index disease was already present. Undefined when either co-occurrence
/// count is zero.
pub fn lead_indicator(c: &YearPairCounts) -> Option<f64> {
    c.defined()
        .then(|| c.lead_t2 as f64 / c.m_t2 as f64 - c.lead_t1 as f64 / c.m_t1 as f64)
}

/// I_lag: positive when new index-disease diagnoses pile up in the year
/// after x was already present.
pub fn lag_indicator(c: &YearPairCounts) -> Option<f64> {
    c.defined()
        .then(|| c.lag_t2 as f64 / c.m_t2 as f64 - c.lag_t1 as f64 / c.m_t1 as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Lead,
    Lag,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Lead => "lead",
            Direction::Lag => "lag",
        }
    }
}

/// How the empirical p-value counts surrogates against the observed value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailMode {
    /// p = fraction of relevant surrogates with indicator >= observed
    /// (small p means a large observed asymmetry). The default.
    #[default]
    SurrogateAtLeastObserved,
    /// p = fraction of relevant surrogates strictly below the observed
    /// value; the complementary reading, kept for auditability.
    ObservedAboveSurrogate,
}

impl TailMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TailMode::SurrogateAtLeastObserved => "surrogate-at-least-observed",
            TailMode::ObservedAboveSurrogate => "observed-above-surrogate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadLagParams {
    /// Earlier year of the pair.
    pub t1: u16,
    /// Later year of the pair.
    pub t2: u16,
    pub n_surrogates: u32,
    pub seed: u64,
    pub p_threshold: f64,
    pub tail: TailMode,
}

impl LeadLagParams {
    pub fn new(t1: u16, t2: u16, seed: u64) -> LeadLagParams {
        LeadLagParams {
            t1,
            t2,
            n_surrogates: 100,
            seed,
            p_threshold: 0.05,
            tail: TailMode::default(),
        }
    }

    fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.t1 >= self.t2 {
            return Err(Error::Config(format!(
                "lead/lag years must be ordered, got t1={} t2={}",
                self.t1, self.t2
            )));
        }
        let w = dataset.window();
        if !w.contains(self.t1) || !w.contains(self.t2) {
            return Err(Error::Config(format!(
                "lead/lag years {}..{} outside study window {}..{}",
                self.t1, self.t2, w.start, w.end
            )));
        }
        if self.n_surrogates == 0 {
            return Err(Error::Config("n_surrogates must be at least 1".into()));
        }
        if !(self.p_threshold > 0.0 && self.p_threshold < 1.0) {
            return Err(Error::Config(format!(
                "p threshold {} outside (0, 1)",
                self.p_threshold
            )));
        }
        Ok(())
    }
}

/// Verdict for one (diagnosis, sex, direction) test.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadLagResult {
    pub diagnosis: DiagnosisCode,
    pub cohort: String,
    pub sex: Sex,
    pub direction: Direction,
    pub observed: f64,
    /// Surrogates passing the size-relevance filter; the p-value's
    /// denominator.
    pub n_relevant: u32,
    /// Empty when no surrogate was relevant (untestable).
    pub p: Option<f64>,
    /// p < threshold; absent exactly when p is.
    pub verdict: Option<bool>,
}

/// RNG for one patient's permutation: one base seed, one ChaCha stream per
/// patient, so patients are independent and order of evaluation is free.
fn patient_rng(seed: u64, patient_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(patient_index);
    rng
}

/// Base seed of surrogate k, derived so surrogates never share streams.
fn surrogate_seed(run_seed: u64, k: u32) -> u64 {
    let mut h = Fnv1a::new();
    h.update_u64(run_seed);
    h.update_u64(k as u64 + 1);
    h.finish()
}

fn shuffled_years(events: &[DiagnosisEvent], rng: &mut ChaCha8Rng, buf: &mut Vec<u16>) {
    buf.clear();
    buf.extend(events.iter().map(|e| e.year));
    buf.shuffle(rng);
}

/// Materialize one surrogate dataset: per patient, the multiset of
/// diagnosis-event years is permuted across that patient's events; codes
/// and prescriptions stay put. Shares its permutation scheme with the batch
/// driver, so `surrogate_shuffle(ds, surrogate_seed(run_seed, k))`
/// reproduces the k-th surrogate of a batch run exactly.
pub fn surrogate_shuffle(dataset: &Dataset, seed: u64) -> Dataset {
    let mut buf = Vec::new();
    let records: Vec<PatientRecord> = dataset
        .patients()
        .iter()
        .enumerate()
        .map(|(idx, p)| {
            let mut rng = patient_rng(seed, idx as u64);
            shuffled_years(&p.diagnoses, &mut rng, &mut buf);
            let mut diagnoses: Vec<DiagnosisEvent> = p
                .diagnoses
                .iter()
                .zip(&buf)
                .map(|(e, &year)| DiagnosisEvent { code: e.code, year })
                .collect();
            diagnoses.sort_unstable();
            PatientRecord {
                diagnoses,
                ..p.clone()
            }
        })
        .collect();
    // Permutation can make a code repeat a year; collapsing would alter the
    // per-patient year multiset, so surrogates skip deduplication.
    Dataset::from_shuffled(dataset.window(), records)
}

/// Per-case data the hot loop needs, precomputed once.
struct CaseView<'a> {
    patient_index: u64,
    sex: usize,
    events: &'a [DiagnosisEvent],
}

struct BatchContext<'a> {
    cases: Vec<CaseView<'a>>,
    index_codes: Vec<DiagnosisCode>,
    candidate_of: HashMap<DiagnosisCode, u32>,
    n_candidates: usize,
    t1: u16,
    t2: u16,
}

impl BatchContext<'_> {
    /// Accumulate the six counters for every (candidate, sex) over all
    /// cases, with each patient's event years taken from `years_of`
    /// (identity for the observed pass, a permutation for surrogates).
    fn count<F>(&self, mut years_of: F) -> Vec<[YearPairCounts; 2]>
    where
        F: FnMut(&CaseView<'_>, &mut Vec<u16>),
    {
        let mut counts = vec![[YearPairCounts::default(); 2]; self.n_candidates];
        let mut years = Vec::new();
        for case in &self.cases {
            years_of(case, &mut years);
            debug_assert_eq!(years.len(), case.events.len());

            let mut d1 = false;
            let mut d2 = false;
            for (e, &y) in case.events.iter().zip(&years) {
                if self.index_codes.contains(&e.code) {
                    d1 |= y == self.t1;
                    d2 |= y == self.t2;
                }
            }
            if !d1 && !d2 {
                continue;
            }

            // events are sorted by code, so distinct codes form runs
            let mut i = 0;
            while i < case.events.len() {
                let code = case.events[i].code;
                let mut x1 = false;
                let mut x2 = false;
                while i < case.events.len() && case.events[i].code == code {
                    x1 |= years[i] == self.t1;
                    x2 |= years[i] == self.t2;
                    i += 1;
                }
                if let Some(&ci) = self.candidate_of.get(&code) {
                    counts[ci as usize][case.sex].update(d1, d2, x1, x2);
                }
            }
        }
        counts
    }
}

fn build_context<'a>(
    dataset: &'a Dataset,
    assignment: &CohortAssignment,
    candidates: &[DiagnosisCode],
    params: &LeadLagParams,
) -> Result<BatchContext<'a>> {
    params.validate(dataset)?;
    let index_codes = match &assignment.selector {
        CohortSelector::Diagnosis(codes) => codes.iter().copied().collect(),
        CohortSelector::AtcPrefix(_) => {
            return Err(Error::LeadLag(format!(
                "cohort {:?} selects by prescription; the temporal analysis needs \
                 a diagnosis-coded index disease",
                assignment.name
            )))
        }
    };

    let mut cases = Vec::with_capacity(assignment.case_indices().len());
    for &idx in assignment.case_indices() {
        let p = &dataset.patients()[idx as usize];
        if let Some(cap) = assignment.leadlag_max_age {
            if p.age_at(assignment.reference_year)? >= cap {
                continue;
            }
        }
        cases.push(CaseView {
            patient_index: idx as u64,
            sex: p.sex.index(),
            events: &p.diagnoses,
        });
    }

    let candidate_of = candidates
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as u32))
        .collect();
    Ok(BatchContext {
        cases,
        index_codes,
        candidate_of,
        n_candidates: candidates.len(),
        t1: params.t1,
        t2: params.t2,
    })
}

/// Direct computation of the six counts for one diagnosis and sex; the
/// reference semantics the batch driver must agree with.
pub fn year_pair_counts(
    dataset: &Dataset,
    assignment: &CohortAssignment,
    x: DiagnosisCode,
    sex: Sex,
    t1: u16,
    t2: u16,
) -> Result<YearPairCounts> {
    let index_codes: Vec<DiagnosisCode> = match &assignment.selector {
        CohortSelector::Diagnosis(codes) => codes.iter().copied().collect(),
        CohortSelector::AtcPrefix(_) => {
            return Err(Error::LeadLag(format!(
                "cohort {:?} selects by prescription; the temporal analysis needs \
                 a diagnosis-coded index disease",
                assignment.name
            )))
        }
    };
    let mut counts = YearPairCounts::default();
    for &idx in assignment.case_indices() {
        let p = &dataset.patients()[idx as usize];
        if p.sex != sex {
            continue;
        }
        if let Some(cap) = assignment.leadlag_max_age {
            if p.age_at(assignment.reference_year)? >= cap {
                continue;
            }
        }
        let d1 = index_codes.iter().any(|&d| p.has_diagnosis_in(d, t1));
        let d2 = index_codes.iter().any(|&d| p.has_diagnosis_in(d, t2));
        let x1 = p.has_diagnosis_in(x, t1);
        let x2 = p.has_diagnosis_in(x, t2);
        counts.update(d1, d2, x1, x2);
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, Default)]
struct SurrogateTally {
    relevant: u32,
    at_least_lead: u32,
    at_least_lag: u32,
}

/// Run the surrogate-calibrated lead/lag test for every candidate diagnosis
/// and both sexes.
///
/// Eligibility per (diagnosis, sex): the observed later-year co-occurrence
/// count must reach the cohort's frequency threshold z, and both observed
/// indicators must be defined. A surrogate is relevant when its later-year
/// count M̃ satisfies |(M̃ − M)/M̃| < 0.5 and its indicators are defined;
/// the empirical p counts relevant surrogates at or above the observed
/// value (ties included). Results are deterministic in (dataset, seed) and
/// independent of thread count.
pub fn run_leadlag(
    dataset: &Dataset,
    assignment: &CohortAssignment,
    candidates: &[DiagnosisCode],
    params: &LeadLagParams,
) -> Result<Vec<LeadLagResult>> {
    let ctx = build_context(dataset, assignment, candidates, params)?;

    let observed = ctx.count(|case, years| {
        years.clear();
        years.extend(case.events.iter().map(|e| e.year));
    });

    struct Eligible {
        candidate: usize,
        sex: usize,
        lead_observed: f64,
        lag_observed: f64,
        m_t2: u64,
    }
    let mut eligible = Vec::new();
    for (ci, per_sex) in observed.iter().enumerate() {
        for (si, counts) in per_sex.iter().enumerate() {
            if counts.m_t2 < assignment.leadlag_z.max(1) {
                continue;
            }
            let (Some(lead), Some(lag)) = (lead_indicator(counts), lag_indicator(counts)) else {
                continue;
            };
            eligible.push(Eligible {
                candidate: ci,
                sex: si,
                lead_observed: lead,
                lag_observed: lag,
                m_t2: counts.m_t2,
            });
        }
    }

    let tallies: Vec<SurrogateTally> = (0..params.n_surrogates)
        .into_par_iter()
        .map(|k| {
            let seed = surrogate_seed(params.seed, k);
            let counts = ctx.count(|case, years| {
                let mut rng = patient_rng(seed, case.patient_index);
                shuffled_years(case.events, &mut rng, years);
            });
            eligible
                .iter()
                .map(|e| {
                    let sur = &counts[e.candidate][e.sex];
                    if !sur.defined() {
                        return SurrogateTally::default();
                    }
                    let m = e.m_t2 as f64;
                    let m_sur = sur.m_t2 as f64;
                    if ((m_sur - m) / m_sur).abs() >= 0.5 {
                        return SurrogateTally::default();
                    }
                    SurrogateTally {
                        relevant: 1,
                        at_least_lead: (lead_indicator(sur).unwrap() >= e.lead_observed) as u32,
                        at_least_lag: (lag_indicator(sur).unwrap() >= e.lag_observed) as u32,
                    }
                })
                .collect::<Vec<_>>()
        })
        .reduce(
            || vec![SurrogateTally::default(); eligible.len()],
            |mut acc, item| {
                for (a, b) in acc.iter_mut().zip(item) {
                    a.relevant += b.relevant;
                    a.at_least_lead += b.at_least_lead;
                    a.at_least_lag += b.at_least_lag;
                }
                acc
            },
        );

    let mut results = Vec::with_capacity(eligible.len() * 2);
    for (e, tally) in eligible.iter().zip(&tallies) {
        for (direction, observed_value, at_least) in [
            (Direction::Lead, e.lead_observed, tally.at_least_lead),
            (Direction::Lag, e.lag_observed, tally.at_least_lag),
        ] {
            let p = (tally.relevant > 0).then(|| {
                let ge = at_least as f64 / tally.relevant as f64;
                match params.tail {
                    TailMode::SurrogateAtLeastObserved => ge,
                    TailMode::ObservedAboveSurrogate => 1.0 - ge,
                }
            });
            results.push(LeadLagResult {
                diagnosis: candidates[e.candidate],
                cohort: assignment.name.clone(),
                sex: if e.sex == Sex::Male.index() {
                    Sex::Male
                } else {
                    Sex::Female
                },
                direction,
                observed: observed_value,
                n_relevant: tally.relevant,
                p,
                verdict: p.map(|p| p < params.p_threshold),
            });
        }
    }
    Ok(results)
}

/// Single-test convenience wrapper over the batch driver.
pub fn leadlag_test(
    dataset: &Dataset,
    assignment: &CohortAssignment,
    x: DiagnosisCode,
    sex: Sex,
    direction: Direction,
    params: &LeadLagParams,
) -> Result<Option<LeadLagResult>> {
    let results = run_leadlag(dataset, assignment, &[x], params)?;
    Ok(results
        .into_iter()
        .find(|r| r.sex == sex && r.direction == direction))
}

/// Write the classification table: one row per (diagnosis, sex, direction)
/// that passed the frequency threshold. Untestable rows keep their counts
/// but leave p and verdict empty.
pub fn export_leadlag(results: &[LeadLagResult], path: &Path) -> Result<()> {
    let mut out = String::from("icd\tcohort\tsex\tdirection\tobserved\tn_relevant\tp\tverdict\n");
    for r in results {
        write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.diagnosis,
            r.cohort,
            r.sex,
            r.direction.as_str(),
            fmt_f64(r.observed),
            r.n_relevant
        )
        .unwrap();
        match (r.p, r.verdict) {
            (Some(p), Some(v)) => writeln!(out, "\t{}\t{}", fmt_f64(p), if v { 1 } else { 0 }).unwrap(),
            _ => out.push_str("\t\t\n"),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
