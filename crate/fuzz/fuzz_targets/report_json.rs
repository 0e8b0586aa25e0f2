#![no_main]

use fedperl::report::ExperimentReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = ExperimentReport::from_json(text) {
            let _ = ExperimentReport::from_json(&report.to_json());
        }
    }
});
