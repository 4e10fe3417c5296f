#![no_main]

use std::str::FromStr;

use comorbscan::model::AtcCode;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(code) = AtcCode::from_str(s) {
        assert_eq!(code.as_str(), s);
        assert_eq!(code.to_string(), s);
        assert!(code.starts_with(s));
    }
});
