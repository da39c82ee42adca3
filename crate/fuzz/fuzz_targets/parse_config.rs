#![no_main]

use libfuzzer_sys::fuzz_target;
use swipt_core::channel::SystemConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = SystemConfig::from_json(text) {
        // anything accepted must survive a serialise/parse cycle
        let again = SystemConfig::from_json(&cfg.to_json()).expect("re-parse of accepted config");
        assert_eq!(cfg, again);
    }
});
