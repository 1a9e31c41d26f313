#![no_main]

use libfuzzer_sys::fuzz_target;
use qpce::config::{OperatorSpec, StateSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = OperatorSpec::parse(text) {
        let again = OperatorSpec::parse(&spec.to_string()).expect("display parses");
        assert_eq!(again, spec);
        if spec.dim() <= 16 {
            let _ = spec.build();
        }
    }
    if let Ok(state) = StateSpec::parse(text) {
        if let StateSpec::Vector(v) = &state {
            if v.len() > 16 {
                return;
            }
        }
        let _ = state.build();
    }
});
