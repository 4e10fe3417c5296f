//! Property tests: randomized structural invariants that complement the
//! fixed-fixture acceptance checks. The oracles live in `common`.

mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use comorbscan::cohort::{build_cohort, CohortDefinition, CohortSelector};
use comorbscan::gender::gender_ratio;
use comorbscan::ingest::{load_dataset, write_dataset};
use comorbscan::leadlag::surrogate_shuffle;
use comorbscan::model::{
    AgeGroup, Dataset, DiagnosisCode, DiagnosisEvent, PatientRecord, PrescriptionEvent, Sex,
    YearRange,
};
use comorbscan::stats::{benjamini_hochberg, relative_risk, ContingencyTable};

const CODE_POOL: [&str; 6] = ["E10", "E11", "I10", "J06", "K52", "N39"];
const ATC_POOL: [&str; 3] = ["A10AB01", "C07AB02", "N02BE01"];

fn code(s: &str) -> DiagnosisCode {
    DiagnosisCode::parse_lenient(s).unwrap()
}

prop_compose! {
    fn arb_patient(index: usize)(
        birth_year in 1940..=2000u16,
        female in any::<bool>(),
        died in any::<bool>(),
        inpatient in any::<bool>(),
        diagnoses in prop::collection::vec((0..CODE_POOL.len(), 2006..=2008u16), 0..8),
        prescriptions in prop::collection::vec((0..ATC_POOL.len(), 2006..=2008u16), 0..4),
    ) -> PatientRecord {
        PatientRecord {
            id: format!("p{index:03}"),
            birth_year,
            sex: if female { Sex::Female } else { Sex::Male },
            died_in_window: died,
            inpatient,
            diagnoses: diagnoses
                .into_iter()
                .map(|(i, year)| DiagnosisEvent { code: code(CODE_POOL[i]), year })
                .collect(),
            prescriptions: prescriptions
                .into_iter()
                .map(|(i, year)| PrescriptionEvent {
                    code: ATC_POOL[i].parse().unwrap(),
                    year,
                })
                .collect(),
        }
    }
}

fn arb_records() -> impl Strategy<Value = Vec<PatientRecord>> {
    (1..60usize).prop_flat_map(|n| {
        (0..n).map(arb_patient).collect::<Vec<_>>()
    })
}

fn open_cohort(index: &str) -> CohortDefinition {
    CohortDefinition {
        name: "cases".to_string(),
        selector: CohortSelector::Diagnosis([code(index)].into_iter().collect()),
        require_inpatient: false,
        exclude_deceased: false,
        excluded_chapters: BTreeSet::new(),
        control_exclusion_codes: BTreeSet::new(),
        leadlag_z: 1,
        leadlag_max_age: None,
    }
}

proptest! {
    #[test]
    fn bh_matches_oracle_on_arbitrary_p_vectors(
        p in prop::collection::vec(
            prop_oneof![2 => Just(0.0), 2 => Just(1.0), 16 => 0.0..=1.0f64],
            1..400,
        ),
        alpha in 0.001..0.5f64,
    ) {
        let got = benjamini_hochberg(&p, alpha);
        prop_assert_eq!(&got.rejected, &common::bh_by_hand(&p, alpha));
        // q-values are a nondecreasing function of the p-value rank.
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
        for pair in order.windows(2) {
            prop_assert!(got.q_values[pair[0]] <= got.q_values[pair[1]]);
        }
        for &q in &got.q_values {
            prop_assert!((0.0..=1.0).contains(&q));
        }
    }

    #[test]
    fn relative_risk_matches_reordered_arithmetic(
        a in 1..1_000_000u64,
        b in 0..1_000_000u64,
        c in 1..1_000_000u64,
        d in 0..1_000_000u64,
    ) {
        let rr = relative_risk(ContingencyTable::new(a, b, c, d)).unwrap();
        let (hr, hlo, hhi) = common::rr_by_hand(a, b, c, d);
        prop_assert!((rr.rr - hr).abs() <= 1e-12 * hr.abs().max(1.0));
        prop_assert!((rr.ci_low - hlo).abs() <= 1e-12 * hlo.abs().max(1.0));
        prop_assert!((rr.ci_high - hhi).abs() <= 1e-12 * hhi.abs().max(1.0));
        prop_assert!(rr.ci_low <= rr.rr && rr.rr <= rr.ci_high);
        prop_assert!(rr.rr.is_finite() && rr.rr > 0.0);
    }

    #[test]
    fn gender_ratio_antisymmetric_and_bounded(records in arb_records()) {
        let window = YearRange::new(2006, 2008).unwrap();
        let (dataset, _) = Dataset::assemble(window, records.clone()).unwrap();
        let swapped_records: Vec<PatientRecord> = records
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p.sex = match p.sex {
                    Sex::Male => Sex::Female,
                    Sex::Female => Sex::Male,
                };
                p
            })
            .collect();
        let (swapped, _) = Dataset::assemble(window, swapped_records).unwrap();
        let def = open_cohort("E10");
        // Drawn records need not contain any case; those draws prove nothing.
        let Ok(assignment) = build_cohort(&dataset, &def, 2006) else {
            return Ok(());
        };
        let swapped_assignment = build_cohort(&swapped, &def, 2006).unwrap();
        for s in CODE_POOL {
            for t in AgeGroup::all() {
                let gr = gender_ratio(&dataset, &assignment, code(s), t);
                let flipped = gender_ratio(&swapped, &swapped_assignment, code(s), t);
                match (gr, flipped) {
                    (None, None) => {}
                    (Some(x), Some(y)) => {
                        prop_assert_eq!(x, -y);
                        prop_assert!(x.abs() <= std::f64::consts::LN_2);
                    }
                    other => prop_assert!(false, "definedness changed under swap: {:?}", other),
                }
            }
        }
    }

    #[test]
    fn surrogate_shuffle_preserves_per_patient_multisets(
        records in arb_records(),
        seed in any::<u64>(),
    ) {
        let window = YearRange::new(2006, 2008).unwrap();
        let (dataset, _) = Dataset::assemble(window, records).unwrap();
        let shuffled = surrogate_shuffle(&dataset, seed);
        prop_assert_eq!(dataset.len(), shuffled.len());
        for (before, after) in dataset.patients().iter().zip(shuffled.patients()) {
            prop_assert_eq!(&before.id, &after.id);
            prop_assert_eq!(&before.prescriptions, &after.prescriptions);
            let mut codes_before: Vec<_> = before.diagnoses.iter().map(|e| e.code).collect();
            let mut codes_after: Vec<_> = after.diagnoses.iter().map(|e| e.code).collect();
            codes_before.sort();
            codes_after.sort();
            prop_assert_eq!(codes_before, codes_after);
            let mut years_before: Vec<_> = before.diagnoses.iter().map(|e| e.year).collect();
            let mut years_after: Vec<_> = after.diagnoses.iter().map(|e| e.year).collect();
            years_before.sort_unstable();
            years_after.sort_unstable();
            prop_assert_eq!(years_before, years_after);
        }
        for s in CODE_POOL {
            prop_assert_eq!(
                dataset.carriers(code(s)).len(),
                shuffled.carriers(code(s)).len()
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ingest_roundtrip_preserves_dataset(records in arb_records()) {
        let window = YearRange::new(2006, 2008).unwrap();
        let (dataset, _) = Dataset::assemble(window, records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("patients.csv");
        let d = dir.path().join("diagnoses.csv");
        let rx = dir.path().join("prescriptions.csv");
        write_dataset(&dataset, &p, &d, &rx).unwrap();
        let (loaded, stats) = load_dataset(&p, &d, &rx, window).unwrap();
        prop_assert_eq!(stats.patients.rejected, 0);
        prop_assert_eq!(stats.diagnoses.rejected, 0);
        prop_assert_eq!(stats.prescriptions.rejected, 0);
        prop_assert_eq!(dataset.patients(), loaded.patients());
        prop_assert_eq!(dataset.fingerprint(), loaded.fingerprint());
    }
}
