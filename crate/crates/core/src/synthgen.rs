//! Synthetic claims-population generator with planted ground truth.
//!
//! Patients are sampled independently, so every planted quantity (stratum
//! relative risks, gender skews, temporal orderings) has a closed-form
//! expectation that tests can check recovery against. Realism is a
//! non-goal; analytical tractability is the point.
//!
//! Event years: each acquired code gets an independent Bernoulli draw per
//! window year at rate `year_density`, redrawn until at least one event
//! exists. Presence-based statistics never see the years, only the draw
//! that decided the code is present at all. A temporal planting replaces
//! the free draw with a constrained one: the leading code is drawn until
//! its first year precedes the window end, the trailing code is then drawn
//! strictly after that first year. Keeping every other code's years
//! exchangeable with the patient's pooled years is what lets the
//! permutation surrogate test behave on synthetic data the way it does on
//! real claims: shuffling preserves co-occurrence on average and destroys
//! exactly the planted ordering.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::model::{
    AgeGroup, AtcCode, Dataset, DiagnosisCode, DiagnosisEvent, PatientRecord, PrescriptionEvent,
    Sex, YearRange, AGE_GROUP_COUNT,
};
use crate::scan::fmt_f64;
use crate::{Error, Result};

/// The bundled example spec: a two-peaked index-disease age profile over a
/// two-year window, one planted comorbidity per peak, and a bed of null
/// diagnoses.
pub const PAPER_LIKE_SPEC: &str = include_str!("../../../presets/paper_like.spec");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temporal {
    /// Probability that a comorbid case's first index year strictly
    /// precedes the first comorbidity year.
    pub index_first_prob: f64,
    /// Probability of the reverse strict ordering; the remainder leaves
    /// both codes' years unconstrained.
    pub other_first_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedEffect {
    pub code: DiagnosisCode,
    /// Prevalence among non-index patients (before any gender skew).
    pub baseline_prevalence: f64,
    /// Case-over-control prevalence ratio per age group; 1.0 where unset.
    pub rr: [f64; AGE_GROUP_COUNT],
    /// Female prevalence multiplier, applied to cases and controls alike.
    pub female_multiplier: f64,
    pub temporal: Option<Temporal>,
}

#[derive(Debug, Clone, PartialEq)]
struct Band {
    group: AgeGroup,
    weight: f64,
    index_prevalence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub population_size: u64,
    pub seed: u64,
    pub window: YearRange,
    pub index_code: DiagnosisCode,
    /// Fraction female.
    pub sex_ratio: f64,
    pub death_prob: f64,
    /// Probability a patient has no inpatient stay.
    pub outpatient_prob: f64,
    /// Prescription planted on every index case (onset-persistent), so the
    /// prescription-based cohort recipe can be exercised.
    pub index_atc: Option<AtcCode>,
    pub background_atc: Vec<(AtcCode, f64)>,
    /// Per-year event rate for an acquired code; 1.0 means an event in
    /// every window year.
    pub year_density: f64,
    bands: Vec<Band>,
    cumulative_weight: Vec<f64>,
    pub planted: Vec<PlantedEffect>,
    null_count: u32,
    null_prevalence_min: f64,
    null_prevalence_max: f64,
}

/// Everything that was planted, in machine-readable form, so tests check
/// recovery against recorded parameters instead of re-deriving them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub index_code: DiagnosisCode,
    pub window: YearRange,
    pub index_prevalence: Vec<(AgeGroup, f64)>,
    pub planted: Vec<PlantedEffect>,
    pub null_codes: Vec<(DiagnosisCode, f64)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    population_size: u64,
    seed: u64,
    window: RawWindow,
    index_code: String,
    sex_ratio: f64,
    #[serde(default)]
    death_prob: f64,
    #[serde(default)]
    outpatient_prob: f64,
    index_atc: Option<String>,
    #[serde(default)]
    background_atc: Vec<RawAtc>,
    #[serde(default = "default_year_density")]
    year_density: f64,
    #[serde(rename = "age_band")]
    age_bands: Vec<RawBand>,
    #[serde(default, rename = "planted")]
    planted: Vec<RawPlanted>,
    null_diagnoses: Option<RawNull>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    start: u16,
    end: u16,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBand {
    group: String,
    weight: f64,
    #[serde(default)]
    index_prevalence: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlanted {
    code: String,
    baseline_prevalence: f64,
    #[serde(default = "one")]
    female_multiplier: f64,
    #[serde(default)]
    rr: std::collections::BTreeMap<String, f64>,
    temporal: Option<RawTemporal>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemporal {
    #[serde(default)]
    index_first_prob: f64,
    #[serde(default)]
    other_first_prob: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAtc {
    code: String,
    prob: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNull {
    count: u32,
    prevalence_min: f64,
    prevalence_max: f64,
}

fn one() -> f64 {
    1.0
}

fn default_year_density() -> f64 {
    0.6
}

fn reject(msg: impl Into<String>) -> Error {
    Error::SpecRejected(msg.into())
}

fn check_prob(value: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(reject(format!("{what} = {value} outside [0, 1]")))
    }
}

/// Chapters eligible for auto-assigned null-diagnosis codes: disease
/// chapters only, so nulls are never dropped by the default candidate
/// filter.
const NULL_CHAPTERS: &[char] = &[
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J', 'K', 'L', 'M', 'N', 'P', 'Q',
];

impl GeneratorSpec {
    pub fn from_toml(text: &str) -> Result<GeneratorSpec> {
        let raw: RawSpec = toml::from_str(text)
            .map_err(|e| reject(format!("spec parse error: {}", e.message())))?;
        GeneratorSpec::from_raw(raw)
    }

    fn from_raw(raw: RawSpec) -> Result<GeneratorSpec> {
        let window = YearRange::new(raw.window.start, raw.window.end)
            .map_err(|e| reject(e.to_string()))?;
        let index_code: DiagnosisCode = raw
            .index_code
            .parse()
            .map_err(|_| reject(format!("bad index code {:?}", raw.index_code)))?;
        check_prob(raw.sex_ratio, "sex_ratio")?;
        check_prob(raw.death_prob, "death_prob")?;
        check_prob(raw.outpatient_prob, "outpatient_prob")?;
        // The floor keeps the rejection loop in the year draw short.
        if !(raw.year_density >= 0.05 && raw.year_density <= 1.0) {
            return Err(reject(format!(
                "year_density {} outside [0.05, 1]",
                raw.year_density
            )));
        }

        let index_atc = raw
            .index_atc
            .map(|s| {
                s.parse::<AtcCode>()
                    .map_err(|_| reject(format!("bad index ATC code {s:?}")))
            })
            .transpose()?;
        let mut background_atc = Vec::new();
        for entry in raw.background_atc {
            let code = entry
                .code
                .parse::<AtcCode>()
                .map_err(|_| reject(format!("bad background ATC code {:?}", entry.code)))?;
            check_prob(entry.prob, "background ATC prob")?;
            background_atc.push((code, entry.prob));
        }

        if raw.age_bands.is_empty() {
            return Err(reject("at least one age_band is required"));
        }
        let mut bands = Vec::new();
        let mut seen = BTreeSet::new();
        for band in &raw.age_bands {
            let group: AgeGroup = band
                .group
                .parse()
                .map_err(|_| reject(format!("bad age band group {:?}", band.group)))?;
            if !seen.insert(group) {
                return Err(reject(format!("duplicate age band {group}")));
            }
            if !(band.weight >= 0.0 && band.weight.is_finite()) {
                return Err(reject(format!(
                    "age band {group} weight {} invalid",
                    band.weight
                )));
            }
            check_prob(band.index_prevalence, "index_prevalence")?;
            bands.push(Band {
                group,
                weight: band.weight,
                index_prevalence: band.index_prevalence,
            });
        }
        bands.sort_by_key(|b| b.group);
        let total: f64 = bands.iter().map(|b| b.weight).sum();
        if total <= 0.0 {
            return Err(reject("age band weights sum to zero"));
        }
        let mut acc = 0.0;
        let cumulative_weight = bands
            .iter()
            .map(|b| {
                acc += b.weight;
                acc
            })
            .collect();

        let mut planted = Vec::new();
        let mut planted_codes = BTreeSet::new();
        let mut temporal_seen = false;
        for p in &raw.planted {
            let code: DiagnosisCode = p
                .code
                .parse()
                .map_err(|_| reject(format!("bad planted code {:?}", p.code)))?;
            if code == index_code {
                return Err(reject(format!("planted code {code} equals the index code")));
            }
            if !planted_codes.insert(code) {
                return Err(reject(format!("planted code {code} listed twice")));
            }
            check_prob(p.baseline_prevalence, "baseline_prevalence")?;
            if !(p.female_multiplier > 0.0 && p.female_multiplier.is_finite()) {
                return Err(reject(format!(
                    "female_multiplier {} must be positive",
                    p.female_multiplier
                )));
            }
            let mut rr = [1.0; AGE_GROUP_COUNT];
            for (label, &value) in &p.rr {
                let group: AgeGroup = label
                    .parse()
                    .map_err(|_| reject(format!("bad rr age group {label:?}")))?;
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(reject(format!("rr {value} for {label} invalid")));
                }
                rr[group.index()] = value;
            }
            // The implied prevalence in every (age, sex) stratum must stay
            // a probability.
            let skew = p.female_multiplier.max(1.0);
            for (i, &r) in rr.iter().enumerate() {
                let implied = p.baseline_prevalence * r * skew;
                if implied > 1.0 {
                    return Err(reject(format!(
                        "planted {code}: implied prevalence {implied} in age group {} exceeds 1",
                        AgeGroup::from_index(i).unwrap()
                    )));
                }
            }
            let temporal = match &p.temporal {
                None => None,
                Some(t) => {
                    check_prob(t.index_first_prob, "index_first_prob")?;
                    check_prob(t.other_first_prob, "other_first_prob")?;
                    if t.index_first_prob + t.other_first_prob > 1.0 {
                        return Err(reject(
                            "index_first_prob + other_first_prob exceeds 1".to_string(),
                        ));
                    }
                    if window.len() < 2 {
                        return Err(reject(
                            "temporal planting needs a window of at least two years".to_string(),
                        ));
                    }
                    if temporal_seen {
                        // A strict ordering constrains the index onset year;
                        // two competing constraints can be unsatisfiable in
                        // short windows, so exactly one effect may bind it.
                        return Err(reject(
                            "at most one planted effect may carry temporal parameters"
                                .to_string(),
                        ));
                    }
                    temporal_seen = true;
                    Some(Temporal {
                        index_first_prob: t.index_first_prob,
                        other_first_prob: t.other_first_prob,
                    })
                }
            };
            planted.push(PlantedEffect {
                code,
                baseline_prevalence: p.baseline_prevalence,
                rr,
                female_multiplier: p.female_multiplier,
                temporal,
            });
        }

        let (null_count, null_min, null_max) = match raw.null_diagnoses {
            None => (0, 0.0, 0.0),
            Some(n) => {
                check_prob(n.prevalence_min, "null prevalence_min")?;
                check_prob(n.prevalence_max, "null prevalence_max")?;
                if n.prevalence_min > n.prevalence_max {
                    return Err(reject("null prevalence_min exceeds prevalence_max"));
                }
                (n.count, n.prevalence_min, n.prevalence_max)
            }
        };

        let spec = GeneratorSpec {
            population_size: raw.population_size,
            seed: raw.seed,
            window,
            index_code,
            sex_ratio: raw.sex_ratio,
            death_prob: raw.death_prob,
            outpatient_prob: raw.outpatient_prob,
            index_atc,
            background_atc,
            year_density: raw.year_density,
            bands,
            cumulative_weight,
            planted,
            null_count,
            null_prevalence_min: null_min,
            null_prevalence_max: null_max,
        };
        // Surface an oversized null pool at parse time, not generate time.
        spec.null_codes()?;
        Ok(spec)
    }

    /// Null-diagnosis codes with their prevalences: enumerated from the
    /// disease chapters, skipping the index and planted codes, prevalences
    /// interpolated linearly between the configured bounds.
    pub fn null_codes(&self) -> Result<Vec<(DiagnosisCode, f64)>> {
        let taken: BTreeSet<DiagnosisCode> = self
            .planted
            .iter()
            .map(|p| p.code)
            .chain([self.index_code])
            .collect();
        let mut out = Vec::with_capacity(self.null_count as usize);
        'fill: for &chapter in NULL_CHAPTERS {
            for number in 0..=99 {
                if out.len() == self.null_count as usize {
                    break 'fill;
                }
                let code = DiagnosisCode::new(chapter, number).unwrap();
                if !taken.contains(&code) {
                    out.push(code);
                }
            }
        }
        if out.len() < self.null_count as usize {
            return Err(reject(format!(
                "null diagnosis count {} exceeds the available code pool",
                self.null_count
            )));
        }
        let n = out.len();
        Ok(out
            .into_iter()
            .enumerate()
            .map(|(i, code)| {
                let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                let prev = self.null_prevalence_min
                    + (self.null_prevalence_max - self.null_prevalence_min) * frac;
                (code, prev)
            })
            .collect())
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            index_code: self.index_code,
            window: self.window,
            index_prevalence: self
                .bands
                .iter()
                .map(|b| (b.group, b.index_prevalence))
                .collect(),
            planted: self.planted.clone(),
            null_codes: self.null_codes().expect("validated at parse time"),
        }
    }
}

/// Event years for one acquired code: Bernoulli per year of `lo..=hi` at
/// `density`, redrawn until at least one year comes up. Ascending order.
fn draw_years(rng: &mut ChaCha8Rng, lo: u16, hi: u16, density: f64) -> Vec<u16> {
    loop {
        let years: Vec<u16> = (lo..=hi).filter(|_| rng.gen::<f64>() < density).collect();
        if !years.is_empty() {
            return years;
        }
    }
}

/// Like `draw_years`, but the first year must precede `hi` so a trailing
/// code fits strictly after it. Needs `lo < hi`.
fn draw_leading_years(rng: &mut ChaCha8Rng, lo: u16, hi: u16, density: f64) -> Vec<u16> {
    loop {
        let years = draw_years(rng, lo, hi, density);
        if years[0] < hi {
            return years;
        }
    }
}

fn pick_band<'a>(spec: &'a GeneratorSpec, rng: &mut ChaCha8Rng) -> &'a Band {
    let total = *spec.cumulative_weight.last().unwrap();
    let u = rng.gen::<f64>() * total;
    let idx = spec
        .cumulative_weight
        .partition_point(|&c| c <= u)
        .min(spec.bands.len() - 1);
    &spec.bands[idx]
}

fn generate_patient(
    spec: &GeneratorSpec,
    nulls: &[(DiagnosisCode, f64)],
    index: u64,
    id_width: usize,
) -> PatientRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);

    let band = pick_band(spec, &mut rng);
    let age = band.group.lower() + rng.gen_range(0..5);
    let sex = if rng.gen::<f64>() < spec.sex_ratio {
        Sex::Female
    } else {
        Sex::Male
    };
    let died_in_window = rng.gen::<f64>() < spec.death_prob;
    let inpatient = !(rng.gen::<f64>() < spec.outpatient_prob);
    let has_index = rng.gen::<f64>() < band.index_prevalence;

    // Presence draws for every planted effect come before any year draw so
    // the temporal effect can constrain the index onset.
    let mut present = Vec::with_capacity(spec.planted.len());
    for effect in &spec.planted {
        let mut prevalence = effect.baseline_prevalence;
        if has_index {
            prevalence *= effect.rr[band.group.index()];
        }
        if sex == Sex::Female {
            prevalence *= effect.female_multiplier;
        }
        present.push(rng.gen::<f64>() < prevalence);
    }

    let (start, end) = (spec.window.start, spec.window.end);
    let density = spec.year_density;
    let mut diagnoses = Vec::new();
    fn push_years(diagnoses: &mut Vec<DiagnosisEvent>, code: DiagnosisCode, years: &[u16]) {
        for &year in years {
            diagnoses.push(DiagnosisEvent { code, year });
        }
    }

    // Index years, possibly bound to the temporal effect's ordering draw.
    let temporal_slot = spec
        .planted
        .iter()
        .position(|e| e.temporal.is_some())
        .filter(|&i| present[i]);
    let mut index_years = None;
    let mut temporal_years = None;
    if has_index {
        let years = match temporal_slot {
            Some(slot) => {
                let t = spec.planted[slot].temporal.unwrap();
                let u = rng.gen::<f64>();
                if u < t.index_first_prob {
                    let d = draw_leading_years(&mut rng, start, end, density);
                    temporal_years = Some(draw_years(&mut rng, d[0] + 1, end, density));
                    d
                } else if u < t.index_first_prob + t.other_first_prob {
                    let x = draw_leading_years(&mut rng, start, end, density);
                    let d = draw_years(&mut rng, x[0] + 1, end, density);
                    temporal_years = Some(x);
                    d
                } else {
                    draw_years(&mut rng, start, end, density)
                }
            }
            None => draw_years(&mut rng, start, end, density),
        };
        push_years(&mut diagnoses, spec.index_code, &years);
        index_years = Some(years);
    }

    for (i, effect) in spec.planted.iter().enumerate() {
        if !present[i] {
            continue;
        }
        let years = if Some(i) == temporal_slot {
            temporal_years
                .take()
                .unwrap_or_else(|| draw_years(&mut rng, start, end, density))
        } else {
            draw_years(&mut rng, start, end, density)
        };
        push_years(&mut diagnoses, effect.code, &years);
    }

    for &(code, prevalence) in nulls {
        if rng.gen::<f64>() < prevalence {
            let years = draw_years(&mut rng, start, end, density);
            push_years(&mut diagnoses, code, &years);
        }
    }

    let mut prescriptions = Vec::new();
    if let (Some(years), Some(atc)) = (&index_years, &spec.index_atc) {
        for year in years[0]..=end {
            prescriptions.push(PrescriptionEvent {
                code: atc.clone(),
                year,
            });
        }
    }
    for (code, prob) in &spec.background_atc {
        if rng.gen::<f64>() < *prob {
            let onset = rng.gen_range(start..=end);
            for year in onset..=end {
                prescriptions.push(PrescriptionEvent {
                    code: code.clone(),
                    year,
                });
            }
        }
    }

    PatientRecord {
        id: format!("p{index:0id_width$}"),
        birth_year: start - age,
        sex,
        died_in_window,
        inpatient,
        diagnoses,
        prescriptions,
    }
}

/// Generate the population described by `spec`.
///
/// Each patient draws from an independent ChaCha stream keyed by patient
/// index, so generation parallelizes freely and the output is identical for
/// a fixed spec regardless of thread count.
pub fn generate(spec: &GeneratorSpec) -> Result<(Dataset, GroundTruth)> {
    let nulls = spec.null_codes()?;
    let id_width = spec.population_size.saturating_sub(1).to_string().len();
    let records: Vec<PatientRecord> = (0..spec.population_size)
        .into_par_iter()
        .map(|i| generate_patient(spec, &nulls, i, id_width))
        .collect();
    let (dataset, _) = Dataset::assemble(spec.window, records)?;
    Ok((dataset, spec.ground_truth()))
}

/// Write the planted parameters as a flat TSV: one row per (code,
/// parameter, age group) with `all` for parameters that do not vary by age.
pub fn write_manifest(truth: &GroundTruth, path: &Path) -> Result<()> {
    let mut out = String::from("code\tkind\tparameter\tage_group\tvalue\n");
    writeln!(
        out,
        "{}\tindex\twindow\tall\t{}-{}",
        truth.index_code, truth.window.start, truth.window.end
    )
    .unwrap();
    for (group, prevalence) in &truth.index_prevalence {
        writeln!(
            out,
            "{}\tindex\tprevalence\t{group}\t{}",
            truth.index_code,
            fmt_f64(*prevalence)
        )
        .unwrap();
    }
    for effect in &truth.planted {
        writeln!(
            out,
            "{}\tplanted\tbaseline_prevalence\tall\t{}",
            effect.code,
            fmt_f64(effect.baseline_prevalence)
        )
        .unwrap();
        writeln!(
            out,
            "{}\tplanted\tfemale_multiplier\tall\t{}",
            effect.code,
            fmt_f64(effect.female_multiplier)
        )
        .unwrap();
        for (i, &rr) in effect.rr.iter().enumerate() {
            if rr != 1.0 {
                writeln!(
                    out,
                    "{}\tplanted\trr\t{}\t{}",
                    effect.code,
                    AgeGroup::from_index(i).unwrap(),
                    fmt_f64(rr)
                )
                .unwrap();
            }
        }
        if let Some(t) = effect.temporal {
            writeln!(
                out,
                "{}\tplanted\tindex_first_prob\tall\t{}",
                effect.code,
                fmt_f64(t.index_first_prob)
            )
            .unwrap();
            writeln!(
                out,
                "{}\tplanted\tother_first_prob\tall\t{}",
                effect.code,
                fmt_f64(t.other_first_prob)
            )
            .unwrap();
        }
    }
    for (code, prevalence) in &truth.null_codes {
        writeln!(out, "{code}\tnull\tprevalence\tall\t{}", fmt_f64(*prevalence)).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write the per-age-group, per-sex population breakdown: head counts, the
/// share of the whole population, and the inpatient fraction.
pub fn export_demographics(dataset: &Dataset, reference_year: u16, path: &Path) -> Result<()> {
    let mut population = [[0u64; AGE_GROUP_COUNT]; 2];
    let mut inpatient = [[0u64; AGE_GROUP_COUNT]; 2];
    for p in dataset.patients() {
        let age = p.age_at(reference_year)?;
        let t = AgeGroup::of_age(age).index();
        population[p.sex.index()][t] += 1;
        if p.inpatient {
            inpatient[p.sex.index()][t] += 1;
        }
    }
    let total: u64 = dataset.len() as u64;

    let mut out =
        String::from("age_group\tsex\tpopulation\tpopulation_fraction\tinpatient_fraction\n");
    for t in AgeGroup::all() {
        for sex in Sex::BOTH {
            let n = population[sex.index()][t.index()];
            if n == 0 {
                continue;
            }
            writeln!(
                out,
                "{t}\t{sex}\t{n}\t{}\t{}",
                fmt_f64(n as f64 / total as f64),
                fmt_f64(inpatient[sex.index()][t.index()] as f64 / n as f64)
            )
            .unwrap();
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL_SPEC: &str = r#"
population_size = 4000
seed = 11
index_code = "E10"
sex_ratio = 0.5

[window]
start = 2006
end = 2007

[[age_band]]
group = "20-25"
weight = 1.0
index_prevalence = 0.3

[[age_band]]
group = "60-65"
weight = 1.0
index_prevalence = 0.1

[[planted]]
code = "I10"
baseline_prevalence = 0.1
rr = { "60-65" = 3.0 }

[null_diagnoses]
count = 5
prevalence_min = 0.05
prevalence_max = 0.1
"#;

    #[test]
    fn parses_and_generates() {
        let spec = GeneratorSpec::from_toml(SMALL_SPEC).unwrap();
        assert_eq!(spec.population_size, 4000);
        assert_eq!(spec.planted.len(), 1);
        let (ds, truth) = generate(&spec).unwrap();
        assert_eq!(ds.len(), 4000);
        assert_eq!(truth.null_codes.len(), 5);
        // nulls avoid the index and planted codes
        for (code, _) in &truth.null_codes {
            assert_ne!(*code, spec.index_code);
            assert_ne!(*code, spec.planted[0].code);
        }
        // ages come only from the two configured bands
        for p in ds.patients() {
            let age = 2006 - p.birth_year;
            assert!((20..25).contains(&age) || (60..65).contains(&age), "age {age}");
        }
    }

    #[test]
    fn deterministic_and_thread_invariant() {
        let spec = GeneratorSpec::from_toml(SMALL_SPEC).unwrap();
        let (a, _) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let (c, _) = pool.install(|| generate(&spec).unwrap());
        assert_eq!(a.fingerprint(), c.fingerprint());

        let mut other = GeneratorSpec::from_toml(SMALL_SPEC).unwrap();
        other.seed = 12;
        let (d, _) = generate(&other).unwrap();
        assert_ne!(a.fingerprint(), d.fingerprint());
    }

    #[test]
    fn empty_population_is_valid() {
        let mut spec = GeneratorSpec::from_toml(SMALL_SPEC).unwrap();
        spec.population_size = 0;
        let (ds, _) = generate(&spec).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn prevalence_recovery_within_sampling_error() {
        let spec = GeneratorSpec::from_toml(SMALL_SPEC).unwrap();
        let (ds, truth) = generate(&spec).unwrap();
        // Index prevalence in the 20-25 band: 0.3 of roughly half of 4,000
        let mut band_n = 0u64;
        let mut band_cases = 0u64;
        for p in ds.patients() {
            let age = 2006 - p.birth_year;
            if (20..25).contains(&age) {
                band_n += 1;
                if p.has_diagnosis(truth.index_code) {
                    band_cases += 1;
                }
            }
        }
        let observed = band_cases as f64 / band_n as f64;
        let se = (0.3 * 0.7 / band_n as f64).sqrt();
        assert!(
            (observed - 0.3).abs() < 4.0 * se,
            "observed {observed}, expected 0.3 +- {se}"
        );
    }

    #[test]
    fn planted_rr_shows_up_in_raw_counts() {
        let spec = GeneratorSpec::from_toml(SMALL_SPEC).unwrap();
        let (ds, truth) = generate(&spec).unwrap();
        let planted = &truth.planted[0];
        let mut case = (0u64, 0u64);
        let mut control = (0u64, 0u64);
        for p in ds.patients() {
            let age = 2006 - p.birth_year;
            if !(60..65).contains(&age) {
                continue;
            }
            let slot = if p.has_diagnosis(truth.index_code) {
                &mut case
            } else {
                &mut control
            };
            slot.0 += 1;
            if p.has_diagnosis(planted.code) {
                slot.1 += 1;
            }
        }
        let rr = (case.1 as f64 / case.0 as f64) / (control.1 as f64 / control.0 as f64);
        assert!((1.8..4.8).contains(&rr), "empirical rr {rr}");
    }

    #[test]
    fn strict_index_first_ordering_holds_by_construction() {
        let text = SMALL_SPEC.replace(
            "rr = { \"60-65\" = 3.0 }",
            "rr = { \"60-65\" = 3.0 }\n[planted.temporal]\nindex_first_prob = 1.0\n",
        );
        let spec = GeneratorSpec::from_toml(&text).unwrap();
        let (ds, truth) = generate(&spec).unwrap();
        let planted = truth.planted[0].code;
        let mut comorbid = 0;
        for p in ds.patients() {
            if !p.has_diagnosis(truth.index_code) || !p.has_diagnosis(planted) {
                continue;
            }
            comorbid += 1;
            let index_onset = p
                .diagnoses
                .iter()
                .filter(|e| e.code == truth.index_code)
                .map(|e| e.year)
                .min()
                .unwrap();
            let planted_onset = p
                .diagnoses
                .iter()
                .filter(|e| e.code == planted)
                .map(|e| e.year)
                .min()
                .unwrap();
            assert!(
                index_onset < planted_onset,
                "patient {}: index {index_onset} not before {planted_onset}",
                p.id
            );
        }
        assert!(comorbid > 50, "only {comorbid} comorbid patients");
    }

    #[test]
    fn year_density_controls_event_years() {
        use std::collections::BTreeMap;
        fn per_code_years(p: &PatientRecord) -> BTreeMap<DiagnosisCode, u64> {
            let mut counts = BTreeMap::new();
            for e in &p.diagnoses {
                *counts.entry(e.code).or_insert(0) += 1;
            }
            counts
        }

        // Density 1.0 degenerates to an event in every window year.
        let text = SMALL_SPEC.replace("sex_ratio = 0.5", "sex_ratio = 0.5\nyear_density = 1.0");
        let spec = GeneratorSpec::from_toml(&text).unwrap();
        let (ds, _) = generate(&spec).unwrap();
        let mut codes = 0u64;
        for p in ds.patients() {
            for (_, n) in per_code_years(p) {
                assert_eq!(n, 2, "window has two years");
                codes += 1;
            }
        }
        assert!(codes > 1000);

        // At the default density some acquired code must skip a year.
        let spec = GeneratorSpec::from_toml(SMALL_SPEC).unwrap();
        let (ds, _) = generate(&spec).unwrap();
        let sparse = ds
            .patients()
            .iter()
            .any(|p| per_code_years(p).values().any(|&n| n < 2));
        assert!(sparse);

        let bad = SMALL_SPEC.replace("sex_ratio = 0.5", "sex_ratio = 0.5\nyear_density = 0.0");
        assert!(GeneratorSpec::from_toml(&bad).is_err());
    }

    #[test]
    fn gender_skew_changes_prevalence_by_sex() {
        let text = SMALL_SPEC.replace(
            "baseline_prevalence = 0.1",
            "baseline_prevalence = 0.1\nfemale_multiplier = 3.0",
        );
        let spec = GeneratorSpec::from_toml(&text).unwrap();
        let (ds, truth) = generate(&spec).unwrap();
        let planted = truth.planted[0].code;
        let mut by_sex = [(0u64, 0u64); 2];
        for p in ds.patients() {
            let age = 2006 - p.birth_year;
            if !(20..25).contains(&age) || p.has_diagnosis(truth.index_code) {
                continue;
            }
            let slot = &mut by_sex[p.sex.index()];
            slot.0 += 1;
            slot.1 += p.has_diagnosis(planted) as u64;
        }
        let f = by_sex[Sex::Female.index()];
        let m = by_sex[Sex::Male.index()];
        let ratio = (f.1 as f64 / f.0 as f64) / (m.1 as f64 / m.0 as f64);
        assert!((2.0..4.5).contains(&ratio), "skew ratio {ratio}");
    }

    #[test]
    fn infeasible_prevalence_is_rejected() {
        let text = SMALL_SPEC.replace("rr = { \"60-65\" = 3.0 }", "rr = { \"60-65\" = 30.0 }");
        let err = GeneratorSpec::from_toml(&text).unwrap_err();
        assert!(matches!(err, Error::SpecRejected(_)), "{err}");
        assert!(err.to_string().contains("exceeds 1"), "{err}");
    }

    #[test]
    fn structural_spec_errors_are_rejected() {
        for (needle, replacement) in [
            ("sex_ratio = 0.5", "sex_ratio = 1.5"),
            ("index_code = \"E10\"", "index_code = \"10E\""),
            ("group = \"20-25\"", "group = \"20-26\""),
            ("count = 5", "count = 2000"),
        ] {
            let text = SMALL_SPEC.replace(needle, replacement);
            assert!(
                GeneratorSpec::from_toml(&text).is_err(),
                "accepted bad spec with {replacement:?}"
            );
        }
        // two temporal effects
        let text = SMALL_SPEC.replace(
            "[null_diagnoses]",
            "[planted.temporal]\nindex_first_prob = 0.5\n\n[[planted]]\ncode = \"J45\"\nbaseline_prevalence = 0.05\n[planted.temporal]\nindex_first_prob = 0.5\n\n[null_diagnoses]",
        );
        let err = GeneratorSpec::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("at most one"), "{err}");
        // parse error mentions the problem
        assert!(GeneratorSpec::from_toml("population_size = ").is_err());
    }

    #[test]
    fn bundled_spec_parses_and_smokes() {
        let mut spec = GeneratorSpec::from_toml(PAPER_LIKE_SPEC).unwrap();
        spec.population_size = 2000;
        let (ds, truth) = generate(&spec).unwrap();
        assert_eq!(ds.len(), 2000);
        assert!(!truth.planted.is_empty());
        assert!(ds.patients().iter().any(|p| !p.prescriptions.is_empty()));
    }

    #[test]
    fn manifest_and_demographics_exports() {
        let spec = GeneratorSpec::from_toml(SMALL_SPEC).unwrap();
        let (ds, truth) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let manifest = dir.path().join("manifest.tsv");
        write_manifest(&truth, &manifest).unwrap();
        let text = fs::read_to_string(&manifest).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "code\tkind\tparameter\tage_group\tvalue");
        assert!(lines.iter().any(|l| l.starts_with("E10\tindex\tprevalence\t20-25\t")));
        assert!(lines.iter().any(|l| l.contains("\tplanted\trr\t60-65\t3")));
        assert_eq!(
            lines.iter().filter(|l| l.contains("\tnull\t")).count(),
            5
        );

        let demo = dir.path().join("demographics.tsv");
        export_demographics(&ds, 2006, &demo).unwrap();
        let text = fs::read_to_string(&demo).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "age_group\tsex\tpopulation\tpopulation_fraction\tinpatient_fraction"
        );
        // two bands x two sexes
        assert_eq!(lines.len(), 5);

        // empty dataset: header only, no crash
        let empty = Dataset::assemble(YearRange::new(2006, 2007).unwrap(), vec![])
            .unwrap()
            .0;
        let path = dir.path().join("empty.tsv");
        export_demographics(&empty, 2006, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
    }
}
