//! Run configuration: one TOML file describing inputs, cohorts, and
//! analysis parameters for a whole batch run.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::cohort::{default_excluded_chapters, CohortDefinition, CohortSelector};
use crate::gender::GenderRows;
use crate::leadlag::{LeadLagParams, TailMode};
use crate::model::{DiagnosisCode, YearRange};
use crate::scan::{BhFamily, ScanOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InputConfig {
    pub patients: PathBuf,
    pub diagnoses: PathBuf,
    pub prescriptions: PathBuf,
    pub window: YearRange,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadLagSettings {
    pub t1: u16,
    pub t2: u16,
    pub n_surrogates: u32,
    pub p_threshold: f64,
    pub tail: TailMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenderSettings {
    /// Highest exact event count exported by the count-stratified tables.
    pub max_count: usize,
    /// Optional bin edges replacing exact counts.
    pub bin_edges: Option<Vec<usize>>,
    pub rows: GenderRows,
}

impl Default for GenderSettings {
    fn default() -> Self {
        GenderSettings {
            max_count: 20,
            bin_edges: None,
            rows: GenderRows::ComorbidityList,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: InputConfig,
    pub alpha: f64,
    pub reference_year: u16,
    pub bh_family: BhFamily,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub cohorts: Vec<CohortDefinition>,
    pub leadlag: Option<LeadLagSettings>,
    pub gender: GenderSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    input: RawInput,
    #[serde(default)]
    analysis: RawAnalysis,
    leadlag: Option<RawLeadLag>,
    #[serde(default)]
    gender: RawGender,
    #[serde(default, rename = "cohort")]
    cohorts: Vec<RawCohort>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    patients: PathBuf,
    diagnoses: PathBuf,
    prescriptions: PathBuf,
    window: RawWindow,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    start: u16,
    end: u16,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    alpha: Option<f64>,
    reference_year: Option<u16>,
    bh_family: Option<String>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    excluded_chapters: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLeadLag {
    t1: u16,
    t2: u16,
    n_surrogates: Option<u32>,
    p_threshold: Option<f64>,
    tail: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGender {
    max_count: Option<usize>,
    bin_edges: Option<Vec<usize>>,
    rows: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCohort {
    preset: Option<String>,
    name: Option<String>,
    codes: Option<Vec<String>>,
    atc_prefix: Option<String>,
    require_inpatient: Option<bool>,
    exclude_deceased: Option<bool>,
    excluded_chapters: Option<Vec<String>>,
    control_exclusions: Option<Vec<String>>,
    leadlag_z: Option<u64>,
    leadlag_max_age: Option<u16>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_chapters(raw: &[String]) -> Result<BTreeSet<char>> {
    let mut out = BTreeSet::new();
    for s in raw {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => {
                out.insert(c);
            }
            _ => {
                return Err(cfg_err(format!(
                    "excluded chapter {s:?} is not a single uppercase letter"
                )))
            }
        }
    }
    Ok(out)
}

fn parse_codes(raw: &[String], what: &str) -> Result<BTreeSet<DiagnosisCode>> {
    raw.iter()
        .map(|s| {
            s.parse()
                .map_err(|_| cfg_err(format!("bad {what} code {s:?}")))
        })
        .collect()
}

impl RawCohort {
    fn resolve(self, default_chapters: &BTreeSet<char>) -> Result<CohortDefinition> {
        if let Some(preset) = &self.preset {
            let others = [
                self.name.is_some(),
                self.codes.is_some(),
                self.atc_prefix.is_some(),
                self.require_inpatient.is_some(),
                self.exclude_deceased.is_some(),
                self.excluded_chapters.is_some(),
                self.control_exclusions.is_some(),
                self.leadlag_z.is_some(),
                self.leadlag_max_age.is_some(),
            ];
            if others.iter().any(|&set| set) {
                return Err(cfg_err(format!(
                    "cohort preset {preset:?} cannot be combined with other cohort fields"
                )));
            }
            return CohortDefinition::preset(preset)
                .ok_or_else(|| cfg_err(format!("unknown cohort preset {preset:?}")));
        }

        let name = self
            .name
            .ok_or_else(|| cfg_err("cohort block needs a name (or a preset)"))?;
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            // Cohort names become output file names.
            return Err(cfg_err(format!(
                "cohort name {name:?} must be nonempty alphanumeric/underscore"
            )));
        }
        let selector = match (self.codes, self.atc_prefix) {
            (Some(codes), None) => {
                CohortSelector::Diagnosis(parse_codes(&codes, "cohort selector")?)
            }
            (None, Some(prefix)) => CohortSelector::AtcPrefix(prefix),
            _ => {
                return Err(cfg_err(format!(
                    "cohort {name:?} needs exactly one of `codes` or `atc_prefix`"
                )))
            }
        };
        let definition = CohortDefinition {
            name,
            selector,
            require_inpatient: self.require_inpatient.unwrap_or(true),
            exclude_deceased: self.exclude_deceased.unwrap_or(true),
            excluded_chapters: match self.excluded_chapters {
                Some(raw) => parse_chapters(&raw)?,
                None => default_chapters.clone(),
            },
            control_exclusion_codes: match self.control_exclusions {
                Some(raw) => parse_codes(&raw, "control exclusion")?,
                None => BTreeSet::new(),
            },
            leadlag_z: self.leadlag_z.unwrap_or(1),
            leadlag_max_age: self.leadlag_max_age,
        };
        definition.validate()?;
        Ok(definition)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        // The full toml error display carries line/column plus a marked
        // snippet; keep all of it.
        let raw: RawConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        RunConfig::from_raw(raw)
    }

    /// Parse `path`, resolving relative input and output paths against its
    /// parent directory.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfig::from_toml(&text)
            .map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            for p in [
                &mut config.input.patients,
                &mut config.input.diagnoses,
                &mut config.input.prescriptions,
            ] {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            }
            if let Some(out) = &mut config.out_dir {
                if out.is_relative() {
                    *out = base.join(&out);
                }
            }
        }
        Ok(config)
    }

    fn from_raw(raw: RawConfig) -> Result<RunConfig> {
        let window = YearRange::new(raw.input.window.start, raw.input.window.end)
            .map_err(|e| cfg_err(e.to_string()))?;
        let input = InputConfig {
            patients: raw.input.patients,
            diagnoses: raw.input.diagnoses,
            prescriptions: raw.input.prescriptions,
            window,
        };

        let alpha = raw.analysis.alpha.unwrap_or(0.01);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(cfg_err(format!("alpha {alpha} outside (0, 1)")));
        }
        let reference_year = raw.analysis.reference_year.unwrap_or(window.start);
        if !window.contains(reference_year) {
            return Err(cfg_err(format!(
                "reference year {reference_year} outside window {}..{}",
                window.start, window.end
            )));
        }
        let bh_family = match raw.analysis.bh_family.as_deref() {
            None | Some("per_cohort") => BhFamily::PerCohort,
            Some("per_age_group") => BhFamily::PerAgeGroup,
            Some(other) => {
                return Err(cfg_err(format!(
                    "bh_family {other:?} is not `per_cohort` or `per_age_group`"
                )))
            }
        };

        let default_chapters = match &raw.analysis.excluded_chapters {
            Some(raw) => parse_chapters(raw)?,
            None => default_excluded_chapters(),
        };

        let mut cohorts = Vec::new();
        if raw.cohorts.is_empty() {
            for preset in ["dm1", "dm2", "dm_atc"] {
                cohorts.push(CohortDefinition::preset(preset).unwrap());
            }
        } else {
            for block in raw.cohorts {
                cohorts.push(block.resolve(&default_chapters)?);
            }
        }
        let mut names = BTreeSet::new();
        for c in &cohorts {
            if !names.insert(c.name.clone()) {
                return Err(cfg_err(format!(
                    "cohort name {:?} appears twice; outputs would collide",
                    c.name
                )));
            }
        }

        let leadlag = raw
            .leadlag
            .map(|ll| -> Result<LeadLagSettings> {
                if ll.t1 >= ll.t2 {
                    return Err(cfg_err(format!(
                        "lead/lag years must be ordered, got t1={} t2={}",
                        ll.t1, ll.t2
                    )));
                }
                if !window.contains(ll.t1) || !window.contains(ll.t2) {
                    return Err(cfg_err(format!(
                        "lead/lag years {}/{} outside window {}..{}",
                        ll.t1, ll.t2, window.start, window.end
                    )));
                }
                let n_surrogates = ll.n_surrogates.unwrap_or(100);
                if n_surrogates == 0 {
                    return Err(cfg_err("n_surrogates must be at least 1"));
                }
                let p_threshold = ll.p_threshold.unwrap_or(0.05);
                if !(p_threshold > 0.0 && p_threshold < 1.0) {
                    return Err(cfg_err(format!("p threshold {p_threshold} outside (0, 1)")));
                }
                let tail = match ll.tail.as_deref() {
                    None | Some("surrogate_at_least_observed") => {
                        TailMode::SurrogateAtLeastObserved
                    }
                    Some("observed_above_surrogate") => TailMode::ObservedAboveSurrogate,
                    Some(other) => {
                        return Err(cfg_err(format!(
                            "tail {other:?} is not `surrogate_at_least_observed` or `observed_above_surrogate`"
                        )))
                    }
                };
                Ok(LeadLagSettings {
                    t1: ll.t1,
                    t2: ll.t2,
                    n_surrogates,
                    p_threshold,
                    tail,
                })
            })
            .transpose()?;

        let rows = match raw.gender.rows.as_deref() {
            None | Some("comorbidity_list") => GenderRows::ComorbidityList,
            Some("all_candidates") => GenderRows::AllCandidates,
            Some(other) => {
                return Err(cfg_err(format!(
                    "gender rows {other:?} is not `comorbidity_list` or `all_candidates`"
                )))
            }
        };
        let gender = GenderSettings {
            max_count: raw.gender.max_count.unwrap_or(20),
            bin_edges: raw.gender.bin_edges,
            rows,
        };

        Ok(RunConfig {
            input,
            alpha,
            reference_year,
            bh_family,
            out_dir: raw.analysis.out_dir,
            seed: raw.analysis.seed,
            cohorts,
            leadlag,
            gender,
        })
    }

    /// Fail early, naming the first referenced input file that is absent.
    pub fn check_inputs(&self) -> Result<()> {
        for path in [
            &self.input.patients,
            &self.input.diagnoses,
            &self.input.prescriptions,
        ] {
            if !path.is_file() {
                return Err(cfg_err(format!(
                    "input file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn scan_options(&self) -> ScanOptions {
        ScanOptions {
            alpha: self.alpha,
            family: self.bh_family,
        }
    }

    /// Lead/lag parameters, requiring both the `[leadlag]` section and a
    /// seed: every stochastic step must be seeded explicitly.
    pub fn leadlag_params(&self) -> Result<LeadLagParams> {
        let settings = self
            .leadlag
            .ok_or_else(|| cfg_err("this command needs a [leadlag] section"))?;
        let seed = self
            .seed
            .ok_or_else(|| cfg_err("lead/lag surrogates need an explicit seed"))?;
        Ok(LeadLagParams {
            t1: settings.t1,
            t2: settings.t2,
            n_surrogates: settings.n_surrogates,
            seed,
            p_threshold: settings.p_threshold,
            tail: settings.tail,
        })
    }
}
