#![no_main]

use libfuzzer_sys::fuzz_target;
use swipt_core::channel::dump::{parse_channels, write_channels};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((header, channels)) = parse_channels(text) {
        let (h2, c2) = parse_channels(&write_channels(&header, &channels)).expect("re-parse of written dump");
        assert_eq!(header, h2);
        assert_eq!(channels, c2);
    }
});
