#![no_main]

use libfuzzer_sys::fuzz_target;
use qpce::KernelTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = KernelTable::parse(text) {
        let c0 = table.values()[0];
        for v in table.values() {
            assert!(v.abs() <= c0 * (1.0 + 1e-12));
        }
    }
});
