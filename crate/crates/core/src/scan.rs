//! The age-resolved co-occurrence scan: every candidate diagnosis crossed
//! with every five-year age group, gated, tested, and FDR-controlled into a
//! comorbidity profile.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::cohort::{build_cohort, candidate_diagnoses, CohortAssignment, CohortDefinition, Status};
use crate::model::{AgeGroup, Dataset, DiagnosisCode, AGE_GROUP_COUNT};
use crate::stats::{benjamini_hochberg, chi_squared_test, relative_risk, ContingencyTable, RelativeRisk};
use crate::{Error, Result};

/// Cells with any count at or below this never reach the test stage.
pub const CELL_GATE: u64 = 10;

/// Which hypotheses share one Benjamini-Hochberg family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BhFamily {
    /// All non-gated tests of the cohort scan form a single family.
    #[default]
    PerCohort,
    /// Each age group is corrected on its own; for sensitivity analysis.
    PerAgeGroup,
}

impl BhFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            BhFamily::PerCohort => "per-cohort",
            BhFamily::PerAgeGroup => "per-age-group",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub alpha: f64,
    pub family: BhFamily,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            alpha: 0.01,
            family: BhFamily::PerCohort,
        }
    }
}

/// Test outcome for one (diagnosis, age group) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellStats {
    /// Some count was 10 or below; no statistic was computed.
    Gated,
    Tested {
        rr: RelativeRisk,
        p_raw: f64,
        q: f64,
        significant: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComorbidityCell {
    pub diagnosis: DiagnosisCode,
    pub age_group: AgeGroup,
    pub table: ContingencyTable,
    pub stats: CellStats,
}

impl ComorbidityCell {
    /// The risk value entering downstream matrices: the point estimate when
    /// significant, otherwise exactly 1.
    pub fn effective_rr(&self) -> f64 {
        match self.stats {
            CellStats::Tested {
                rr,
                significant: true,
                ..
            } => rr.rr,
            _ => 1.0,
        }
    }

    pub fn is_significant(&self) -> bool {
        matches!(
            self.stats,
            CellStats::Tested {
                significant: true,
                ..
            }
        )
    }
}

/// One row of the summary table: the age group where a comorbidity's
/// evidence is strongest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosisSummary {
    pub diagnosis: DiagnosisCode,
    pub p_min: f64,
    pub rr: RelativeRisk,
    pub age_group: AgeGroup,
}

/// Complete scan output for one cohort.
#[derive(Debug, Clone)]
pub struct ComorbidityProfile {
    pub cohort_name: String,
    pub alpha: f64,
    pub family: BhFamily,
    pub candidates: Vec<DiagnosisCode>,
    /// Row-major: `cells[candidate_index * AGE_GROUP_COUNT + age_index]`.
    cells: Vec<ComorbidityCell>,
    /// Diagnoses significant in at least one age group, lexicographic.
    pub comorbidity_list: Vec<DiagnosisCode>,
    /// One row per comorbidity_list entry, same order.
    pub summaries: Vec<DiagnosisSummary>,
    pub gated_cells: u64,
    pub tested_cells: u64,
    pub case_total: u64,
    pub control_total: u64,
    pub dataset_fingerprint: u64,
}

impl ComorbidityProfile {
    pub fn cell(&self, candidate_index: usize, t: AgeGroup) -> &ComorbidityCell {
        &self.cells[candidate_index * AGE_GROUP_COUNT + t.index()]
    }

    pub fn cells(&self) -> impl Iterator<Item = &ComorbidityCell> {
        self.cells.iter()
    }

    pub fn rows(&self) -> impl Iterator<Item = (DiagnosisCode, &[ComorbidityCell])> {
        self.candidates
            .iter()
            .zip(self.cells.chunks(AGE_GROUP_COUNT))
            .map(|(&c, row)| (c, row))
    }
}

/// Cross-tabulate one diagnosis against cohort status within one age group:
/// a = cases carrying `x`, b = cases without, c/d likewise for controls.
/// Each patient lands in exactly one age group.
pub fn build_table(
    dataset: &Dataset,
    assignment: &CohortAssignment,
    x: DiagnosisCode,
    t: AgeGroup,
) -> ContingencyTable {
    let mut a = 0;
    let mut c = 0;
    for &idx in dataset.carriers(x) {
        let idx = idx as usize;
        if assignment.age_group(idx) != t {
            continue;
        }
        match assignment.status(idx) {
            Status::Case => a += 1,
            Status::Control => c += 1,
            Status::Excluded => {}
        }
    }
    ContingencyTable::new(a, assignment.cases_in(t) - a, c, assignment.controls_in(t) - c)
}

/// One diagnosis's carrier counts split by age group, in a single pass over
/// its carrier list.
fn carrier_counts(
    dataset: &Dataset,
    assignment: &CohortAssignment,
    x: DiagnosisCode,
) -> ([u64; AGE_GROUP_COUNT], [u64; AGE_GROUP_COUNT]) {
    let mut case_carriers = [0u64; AGE_GROUP_COUNT];
    let mut control_carriers = [0u64; AGE_GROUP_COUNT];
    for &idx in dataset.carriers(x) {
        let idx = idx as usize;
        let t = assignment.age_group(idx).index();
        match assignment.status(idx) {
            Status::Case => case_carriers[t] += 1,
            Status::Control => control_carriers[t] += 1,
            Status::Excluded => {}
        }
    }
    (case_carriers, control_carriers)
}

/// Run the full scan for one cohort definition.
///
/// Candidate selection, table building, the cell gate, and the chi-squared
/// tests are data-parallel over diagnoses; the BH correction is a single
/// barrier over the collected p-values, so thread count never affects the
/// result.
pub fn run_scan(
    dataset: &Dataset,
    definition: &CohortDefinition,
    reference_year: u16,
    options: &ScanOptions,
) -> Result<ComorbidityProfile> {
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha {} outside (0, 1)",
            options.alpha
        )));
    }
    let assignment = build_cohort(dataset, definition, reference_year)?;
    let candidates = candidate_diagnoses(dataset, definition);
    scan_assignment(dataset, &assignment, candidates, options)
}

/// Scan with a prebuilt cohort assignment and candidate list.
pub fn scan_assignment(
    dataset: &Dataset,
    assignment: &CohortAssignment,
    candidates: Vec<DiagnosisCode>,
    options: &ScanOptions,
) -> Result<ComorbidityProfile> {
    struct RawCell {
        table: ContingencyTable,
        tested: Option<(RelativeRisk, f64)>,
    }

    let rows: Vec<Vec<RawCell>> = candidates
        .par_iter()
        .map(|&x| {
            let (case_carriers, control_carriers) = carrier_counts(dataset, assignment, x);
            AgeGroup::all()
                .map(|t| {
                    let a = case_carriers[t.index()];
                    let c = control_carriers[t.index()];
                    let table = ContingencyTable::new(
                        a,
                        assignment.cases_in(t) - a,
                        c,
                        assignment.controls_in(t) - c,
                    );
                    let tested = if table.all_cells_exceed(CELL_GATE) {
                        // the gate guarantees the preconditions of both tests
                        let rr = relative_risk(table).expect("gated table has nonzero cells");
                        let p = chi_squared_test(table).expect("gated table has nonzero margins");
                        Some((rr, p))
                    } else {
                        None
                    };
                    RawCell { table, tested }
                })
                .collect()
        })
        .collect();

    // BH families: collect raw p-values with their (candidate, age) position.
    let family_of = |t: AgeGroup| match options.family {
        BhFamily::PerCohort => 0usize,
        BhFamily::PerAgeGroup => t.index(),
    };
    let family_count = match options.family {
        BhFamily::PerCohort => 1,
        BhFamily::PerAgeGroup => AGE_GROUP_COUNT,
    };
    let mut families: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); family_count];
    for (ci, row) in rows.iter().enumerate() {
        for (ti, cell) in row.iter().enumerate() {
            if let Some((_, p)) = cell.tested {
                families[family_of(AgeGroup::from_index(ti).unwrap())].push((ci, ti, p));
            }
        }
    }

    let mut verdicts: Vec<Vec<Option<(f64, bool)>>> =
        vec![vec![None; AGE_GROUP_COUNT]; candidates.len()];
    for family in &families {
        if family.is_empty() {
            continue;
        }
        let p_values: Vec<f64> = family.iter().map(|&(_, _, p)| p).collect();
        let bh = benjamini_hochberg(&p_values, options.alpha);
        for (k, &(ci, ti, _)) in family.iter().enumerate() {
            verdicts[ci][ti] = Some((bh.q_values[k], bh.rejected[k]));
        }
    }

    let mut cells = Vec::with_capacity(candidates.len() * AGE_GROUP_COUNT);
    let mut gated_cells = 0;
    let mut tested_cells = 0;
    for (ci, row) in rows.iter().enumerate() {
        for (ti, raw) in row.iter().enumerate() {
            let stats = match raw.tested {
                Some((rr, p_raw)) => {
                    tested_cells += 1;
                    let (q, significant) =
                        verdicts[ci][ti].expect("tested cell has a BH verdict");
                    CellStats::Tested {
                        rr,
                        p_raw,
                        q,
                        significant,
                    }
                }
                None => {
                    gated_cells += 1;
                    CellStats::Gated
                }
            };
            cells.push(ComorbidityCell {
                diagnosis: candidates[ci],
                age_group: AgeGroup::from_index(ti).unwrap(),
                table: raw.table,
                stats,
            });
        }
    }

    let mut comorbidity_list = Vec::new();
    let mut summaries = Vec::new();
    for (ci, &x) in candidates.iter().enumerate() {
        let row = &cells[ci * AGE_GROUP_COUNT..(ci + 1) * AGE_GROUP_COUNT];
        if !row.iter().any(|c| c.is_significant()) {
            continue;
        }
        comorbidity_list.push(x);
        // Strongest evidence: minimum raw p over tested cells, ties going to
        // the younger age group (iteration order is ascending age).
        let best = row
            .iter()
            .filter_map(|cell| match cell.stats {
                CellStats::Tested { rr, p_raw, .. } => Some((cell.age_group, rr, p_raw)),
                CellStats::Gated => None,
            })
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .expect("significant row has a tested cell");
        summaries.push(DiagnosisSummary {
            diagnosis: x,
            p_min: best.2,
            rr: best.1,
            age_group: best.0,
        });
    }

    Ok(ComorbidityProfile {
        cohort_name: assignment.name.clone(),
        alpha: options.alpha,
        family: options.family,
        candidates,
        cells,
        comorbidity_list,
        summaries,
        gated_cells,
        tested_cells,
        case_total: assignment.case_total(),
        control_total: assignment.control_total(),
        dataset_fingerprint: dataset.fingerprint(),
    })
}

/// Shortest-round-trip decimal text for a float; `Display` already gives
/// that, this exists to keep export formatting in one place.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Write the three profile exports into `dir`:
/// `<cohort>_summary.tsv` (one row per comorbidity, strongest age group),
/// `<cohort>_cells.tsv` (every cell with counts and statistics), and
/// `<cohort>_rr_matrix.tsv` (effective RR, diagnoses x age groups).
pub fn export_profile(profile: &ComorbidityProfile, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = &profile.cohort_name;

    let mut summary = String::from("icd\tp_min\trr\tci_low\tci_high\tage_group\n");
    for s in &profile.summaries {
        writeln!(
            summary,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.diagnosis,
            fmt_f64(s.p_min),
            fmt_f64(s.rr.rr),
            fmt_f64(s.rr.ci_low),
            fmt_f64(s.rr.ci_high),
            s.age_group
        )
        .unwrap();
    }
    let path = dir.join(format!("{name}_summary.tsv"));
    fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;

    let mut cells = String::from(
        "icd\tage_group\ta\tb\tc\td\tstate\trr\tci_low\tci_high\tp_raw\tq\tsignificant\teffective_rr\n",
    );
    for cell in profile.cells() {
        let t = cell.table;
        match cell.stats {
            CellStats::Gated => writeln!(
                cells,
                "{}\t{}\t{}\t{}\t{}\t{}\tgated\t\t\t\t\t\t\t{}",
                cell.diagnosis,
                cell.age_group,
                t.a,
                t.b,
                t.c,
                t.d,
                fmt_f64(cell.effective_rr())
            )
            .unwrap(),
            CellStats::Tested {
                rr,
                p_raw,
                q,
                significant,
            } => writeln!(
                cells,
                "{}\t{}\t{}\t{}\t{}\t{}\ttested\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                cell.diagnosis,
                cell.age_group,
                t.a,
                t.b,
                t.c,
                t.d,
                fmt_f64(rr.rr),
                fmt_f64(rr.ci_low),
                fmt_f64(rr.ci_high),
                fmt_f64(p_raw),
                fmt_f64(q),
                if significant { 1 } else { 0 },
                fmt_f64(cell.effective_rr())
            )
            .unwrap(),
        }
    }
    let path = dir.join(format!("{name}_cells.tsv"));
    fs::write(&path, cells).map_err(|e| Error::io(&path, e))?;

    let mut matrix = String::from("icd");
    for t in AgeGroup::all() {
        write!(matrix, "\t{t}").unwrap();
    }
    matrix.push('\n');
    for (x, row) in profile.rows() {
        write!(matrix, "{x}").unwrap();
        for cell in row {
            write!(matrix, "\t{}", fmt_f64(cell.effective_rr())).unwrap();
        }
        matrix.push('\n');
    }
    let path = dir.join(format!("{name}_rr_matrix.tsv"));
    fs::write(&path, matrix).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
