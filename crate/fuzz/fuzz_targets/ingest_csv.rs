#![no_main]

use comorbscan::ingest::load_dataset;
use comorbscan::model::YearRange;
use libfuzzer_sys::fuzz_target;

// One fuzz input carries all three extract files, separated by NUL bytes:
// patients, then diagnoses, then prescriptions. Absent sections exercise
// the empty-file path.
fuzz_target!(|data: &[u8]| {
    let mut sections = data.split(|&b| b == 0);
    let patients = sections.next().unwrap_or_default();
    let diagnoses = sections.next().unwrap_or_default();
    let prescriptions = sections.next().unwrap_or_default();

    let dir = tempfile::tempdir().unwrap();
    let stage = |name: &str, bytes: &[u8]| {
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    };
    let p = stage("patients.csv", patients);
    let d = stage("diagnoses.csv", diagnoses);
    let rx = stage("prescriptions.csv", prescriptions);

    let window = YearRange::new(2000, 2010).unwrap();
    if let Ok((dataset, _stats)) = load_dataset(&p, &d, &rx, window) {
        let _ = dataset.fingerprint();
    }
});
