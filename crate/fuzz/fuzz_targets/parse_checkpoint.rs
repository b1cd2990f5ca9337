#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((_, params)) = advdiff::io::parse_checkpoint(text) {
        params.check_consistency().expect("parsed checkpoint is consistent");
    }
});
