//! Fuzz the ECG record text parser: arbitrary bytes must never panic or
//! allocate unboundedly, and anything that parses must round-trip through
//! the writer bit-exactly.

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::BufReader;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 20 {
        return;
    }
    if let Ok(rec) = mbcrnet::data::parse_record(BufReader::new(data)) {
        let mut bytes = Vec::new();
        mbcrnet::data::write_record(&mut bytes, &rec).expect("write after parse");
        let back = mbcrnet::data::parse_record(BufReader::new(&bytes[..]))
            .expect("reparse written record");
        assert_eq!(back.id, rec.id);
        assert_eq!(back.sample_rate_hz, rec.sample_rate_hz);
        assert_eq!(back.lead_names, rec.lead_names);
        assert_eq!(back.label_text, rec.label_text);
        assert_eq!(back.samples.len(), rec.samples.len());
        for (a, b) in back.samples.iter().flatten().zip(rec.samples.iter().flatten()) {
            // NaN payload/sign is not preserved by text formatting.
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }
});
