#![no_main]

use std::str::FromStr;

use comorbscan::model::DiagnosisCode;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(code) = DiagnosisCode::from_str(s) {
        // Strict parse accepts only the canonical three-character spelling,
        // so display must reproduce the input exactly.
        assert_eq!(code.to_string(), s);
        assert_eq!(DiagnosisCode::parse_lenient(s).unwrap(), code);
    }
    if let Ok(code) = DiagnosisCode::parse_lenient(s) {
        let shown = code.to_string();
        assert_eq!(DiagnosisCode::from_str(&shown).unwrap(), code);
    }
});
