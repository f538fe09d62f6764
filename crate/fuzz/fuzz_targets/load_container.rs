//! Fuzz the binary container decoder: bounded allocation on hostile
//! headers, no panics, and decode -> encode -> decode stability.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 22 {
        return;
    }
    if let Ok(container) = mbcrnet::checkpoint::read_container(&mut &data[..]) {
        let mut bytes = Vec::new();
        mbcrnet::checkpoint::write_container(&mut bytes, &container)
            .expect("write after read");
        let back = mbcrnet::checkpoint::read_container(&mut &bytes[..])
            .expect("reread written container");
        assert_eq!(back.kv, container.kv);
        assert_eq!(back.tensors.len(), container.tensors.len());
        for ((n1, t1), (n2, t2)) in back.tensors.iter().zip(container.tensors.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert!(t1
                .data()
                .iter()
                .zip(t2.data().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        // Model reconstruction from arbitrary decoded containers must fail
        // cleanly, never panic.
        let _ = mbcrnet::checkpoint::model_from_container(&container);
        let _ = mbcrnet::checkpoint::cache_from_container(&container);
    }
});
