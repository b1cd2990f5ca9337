#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = advdiff::io::parse_matrix_csv(text) {
        assert!(m.is_finite());
    }
});
