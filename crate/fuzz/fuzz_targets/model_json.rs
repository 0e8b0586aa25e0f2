#![no_main]

use fedperl::nn::{forward, ModelParams};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = serde_json::from_slice::<ModelParams>(data) {
        let x = vec![0.5; params.input_width()];
        let p = forward(&params, &x).expect("validated params evaluate");
        assert_eq!(p.probs.len(), params.num_classes());
    }
});
