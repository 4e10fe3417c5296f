//! Batch orchestration: the command bodies behind the CLI.
//!
//! Every command writes into one output directory, holds an exclusive lock
//! on it for the duration, and finishes with a `metadata.txt` sidecar that
//! echoes every effective parameter. Nothing written here depends on time,
//! machine, or thread count, so a rerun with the same inputs and seed is
//! byte-identical.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crate::cohort::{build_cohort, candidate_diagnoses, CohortDefinition, CohortSelector};
use crate::config::RunConfig;
use crate::gender::{export_count_matrix, export_gender_matrix, CountKind};
use crate::ingest::{format_report, load_dataset, write_dataset, IngestStats};
use crate::leadlag::{export_leadlag, run_leadlag, LeadLagResult};
use crate::model::Dataset;
use crate::scan::{export_profile, scan_assignment};
use crate::synthgen::{export_demographics, generate, write_manifest, GeneratorSpec};
use crate::{Error, Fnv1a, Result};

/// Exclusive claim on an output directory, released on drop. A second
/// process (or a crashed run's leftover) shows up as an existing lock file.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".comorbscan.lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "output directory {} is in use by another run (delete {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Ordered key=value sidecar; the final line fingerprints all the others so
/// a run can be matched to its exact configuration at a glance.
struct Metadata {
    lines: Vec<(String, String)>,
}

impl Metadata {
    fn new(command: &str) -> Metadata {
        let mut m = Metadata { lines: Vec::new() };
        m.push("tool", concat!("comorbscan ", env!("CARGO_PKG_VERSION")));
        m.push("command", command);
        m
    }

    fn push(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut out = String::new();
        let mut hash = Fnv1a::new();
        for (k, v) in &self.lines {
            let line = format!("{k}={v}\n");
            hash.update(line.as_bytes());
            out.push_str(&line);
        }
        out.push_str(&format!("config_fingerprint={:016x}\n", hash.finish()));
        let path = dir.join("metadata.txt");
        fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }
}

fn describe_cohort(def: &CohortDefinition) -> String {
    let selector = match &def.selector {
        CohortSelector::Diagnosis(codes) => codes
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("+"),
        CohortSelector::AtcPrefix(prefix) => format!("atc:{prefix}"),
    };
    let chapters: String = def.excluded_chapters.iter().collect();
    let exclusions = def
        .control_exclusion_codes
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join("+");
    format!(
        "selector={selector};inpatient={};drop_deceased={};drop_chapters={chapters};control_excl={exclusions};z={};max_age={}",
        u8::from(def.require_inpatient),
        u8::from(def.exclude_deceased),
        def.leadlag_z,
        def.leadlag_max_age.map_or("none".to_string(), |a| a.to_string()),
    )
}

fn push_common(meta: &mut Metadata, config: &RunConfig, dataset: &Dataset) {
    meta.push("window", format!("{}-{}", config.input.window.start, config.input.window.end));
    meta.push("reference_year", config.reference_year);
    meta.push("alpha", config.alpha);
    meta.push("bh_family", config.bh_family.as_str());
    meta.push(
        "seed",
        config.seed.map_or("unset".to_string(), |s| s.to_string()),
    );
    meta.push("input_patients", config.input.patients.display());
    meta.push("input_diagnoses", config.input.diagnoses.display());
    meta.push("input_prescriptions", config.input.prescriptions.display());
    meta.push("patients", dataset.len());
    meta.push("dataset_fingerprint", format!("{:016x}", dataset.fingerprint()));
    for def in &config.cohorts {
        meta.push(&format!("cohort_{}", def.name), describe_cohort(def));
    }
}

fn load(config: &RunConfig) -> Result<(Dataset, IngestStats)> {
    config.check_inputs()?;
    load_dataset(
        &config.input.patients,
        &config.input.diagnoses,
        &config.input.prescriptions,
        config.input.window,
    )
}

fn write_ingest_report(stats: &IngestStats, dir: &Path) -> Result<()> {
    let path = dir.join("ingest_report.txt");
    fs::write(&path, format_report(stats)).map_err(|e| Error::io(&path, e))
}

fn scan_phase(dataset: &Dataset, config: &RunConfig, dir: &Path) -> Result<()> {
    let options = config.scan_options();
    for def in &config.cohorts {
        let assignment = build_cohort(dataset, def, config.reference_year)?;
        let candidates = candidate_diagnoses(dataset, def);
        let profile = scan_assignment(dataset, &assignment, candidates, &options)?;
        export_profile(&profile, dir)?;
        export_gender_matrix(dataset, &assignment, &profile, config.gender.rows, dir)?;
    }
    for kind in [CountKind::Diagnoses, CountKind::Prescriptions] {
        export_count_matrix(
            dataset,
            kind,
            config.gender.max_count,
            config.gender.bin_edges.as_deref(),
            config.reference_year,
            dir,
        )?;
    }
    export_demographics(dataset, config.reference_year, &dir.join("demographics.tsv"))
}

/// Lead/lag runs need onset years, which prescription-selected cohorts do
/// not define; those cohorts are skipped and reported, not failed.
fn leadlag_phase(
    dataset: &Dataset,
    config: &RunConfig,
    dir: &Path,
    meta: &mut Metadata,
) -> Result<()> {
    let params = config.leadlag_params()?;
    let mut results: Vec<LeadLagResult> = Vec::new();
    let mut skipped: Vec<&str> = Vec::new();
    for def in &config.cohorts {
        if matches!(def.selector, CohortSelector::AtcPrefix(_)) {
            skipped.push(&def.name);
            continue;
        }
        let assignment = build_cohort(dataset, def, config.reference_year)?;
        let candidates = candidate_diagnoses(dataset, def);
        results.extend(run_leadlag(dataset, &assignment, &candidates, &params)?);
    }
    meta.push("leadlag_t1", params.t1);
    meta.push("leadlag_t2", params.t2);
    meta.push("leadlag_surrogates", params.n_surrogates);
    meta.push("leadlag_p_threshold", params.p_threshold);
    meta.push("leadlag_tail", params.tail.as_str());
    meta.push(
        "leadlag_skipped",
        if skipped.is_empty() {
            "none".to_string()
        } else {
            skipped.join(",")
        },
    );
    export_leadlag(&results, &dir.join("leadlag.tsv"))
}

/// Generate a synthetic population from a spec file: the three claims
/// CSVs, the planted-parameter manifest, and a demographics table.
pub fn run_generate(spec_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let mut spec = GeneratorSpec::from_toml(&text)
        .map_err(|e| Error::SpecRejected(format!("{}: {e}", spec_path.display())))?;
    if let Some(seed) = seed_override {
        spec.seed = seed;
    }
    let _lock = DirLock::acquire(out_dir)?;
    let (dataset, truth) = generate(&spec)?;

    write_dataset(
        &dataset,
        &out_dir.join("patients.csv"),
        &out_dir.join("diagnoses.csv"),
        &out_dir.join("prescriptions.csv"),
    )?;
    write_manifest(&truth, &out_dir.join("manifest.tsv"))?;
    export_demographics(&dataset, spec.window.start, &out_dir.join("demographics.tsv"))?;

    let mut hash = Fnv1a::new();
    hash.update(text.as_bytes());
    let mut meta = Metadata::new("generate");
    meta.push("spec_fingerprint", format!("{:016x}", hash.finish()));
    meta.push("population_size", spec.population_size);
    meta.push("seed", spec.seed);
    meta.push("window", format!("{}-{}", spec.window.start, spec.window.end));
    meta.push("year_density", spec.year_density);
    meta.push("index_code", truth.index_code);
    meta.push("planted", truth.planted.len());
    meta.push("null_diagnoses", truth.null_codes.len());
    meta.push("dataset_fingerprint", format!("{:016x}", dataset.fingerprint()));
    meta.write(out_dir)
}

pub fn run_scan_command(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let _lock = DirLock::acquire(out_dir)?;
    let (dataset, stats) = load(config)?;
    write_ingest_report(&stats, out_dir)?;
    scan_phase(&dataset, config, out_dir)?;
    let mut meta = Metadata::new("scan");
    push_common(&mut meta, config, &dataset);
    meta.write(out_dir)
}

pub fn run_leadlag_command(config: &RunConfig, out_dir: &Path) -> Result<()> {
    // Reject bad parameters before the (possibly long) ingest.
    config.leadlag_params()?;
    let _lock = DirLock::acquire(out_dir)?;
    let (dataset, stats) = load(config)?;
    write_ingest_report(&stats, out_dir)?;
    let mut meta = Metadata::new("leadlag");
    push_common(&mut meta, config, &dataset);
    leadlag_phase(&dataset, config, out_dir, &mut meta)?;
    meta.write(out_dir)
}

/// The whole analysis in one call: scan, gender exports, lead/lag.
pub fn run_all(config: &RunConfig, out_dir: &Path) -> Result<()> {
    config.leadlag_params()?;
    let _lock = DirLock::acquire(out_dir)?;
    let (dataset, stats) = load(config)?;
    write_ingest_report(&stats, out_dir)?;
    scan_phase(&dataset, config, out_dir)?;
    let mut meta = Metadata::new("all");
    push_common(&mut meta, config, &dataset);
    leadlag_phase(&dataset, config, out_dir, &mut meta)?;
    meta.write(out_dir)
}

/// The output directory for a run: an explicit flag wins over the config.
pub fn resolve_out_dir(config: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| config.out_dir.clone()).ok_or_else(|| {
        Error::Config("no output directory: pass --out or set analysis.out_dir".into())
    })
}
