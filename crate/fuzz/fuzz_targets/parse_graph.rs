#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(g) = advdiff::io::parse_graph(text) {
        let again = advdiff::io::parse_graph(&advdiff::io::format_graph(&g)).expect("formatted graph reparses");
        assert_eq!(g, again);
    }
});
