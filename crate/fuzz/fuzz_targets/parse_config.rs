#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = mbcrnet::config::RunConfig::from_json(text) {
            // Derivations must fail cleanly, never panic, on weird values.
            let _ = cfg.model_spec();
            let _ = cfg.train_config();
            let _ = cfg.synth_config();
            let _ = cfg.lead_index();
            let _ = cfg.kv();
        }
    }
});
