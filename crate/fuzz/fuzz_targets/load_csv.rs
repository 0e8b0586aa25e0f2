#![no_main]

use fedperl::data::load_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = load_csv(data) {
        for s in &ds.samples {
            assert_eq!(s.x.len(), ds.dim);
            assert!(s.x.iter().all(|v| v.is_finite()));
            assert!(s.y.map_or(true, |y| y < ds.classes));
        }
    }
});
