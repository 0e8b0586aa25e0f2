#![no_main]

use fedperl::federation::RoundLog;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(log) = RoundLog::parse_line(text) {
            let _ = RoundLog::parse_line(&log.to_line());
        }
    }
});
