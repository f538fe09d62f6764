//! Property tests for the spec-level invariants that hold over whole input
//! families rather than fixed examples.

use proptest::prelude::*;

use mbcrnet::data::{parse_record, write_record, EcgRecord};
use mbcrnet::folds::make_folds;
use mbcrnet::tape::{Padding, Tape};
use mbcrnet::tensor::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Valid-padding output extents follow floor((in - k)/s) + 1 on both
    /// axes; same padding preserves extents at stride 1.
    #[test]
    fn conv_extent_formula(
        h in 1usize..6,
        w in 1usize..40,
        kh in 1usize..6,
        kw in 1usize..12,
        sh in 1usize..4,
        sw in 1usize..4,
    ) {
        let x = Tensor::zeros(vec![1, 1, h, w]);
        let k = Tensor::zeros(vec![1, 1, kh, kw]);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let kv = tape.leaf(&k);

        let valid = tape.conv2d(xv, kv, (sh, sw), Padding::Valid);
        if kh <= h && kw <= w {
            let y = valid.unwrap();
            prop_assert_eq!(
                tape.shape(y),
                &[1, 1, (h - kh) / sh + 1, (w - kw) / sw + 1]
            );
        } else {
            prop_assert!(valid.is_err());
        }

        let same = tape.conv2d(xv, kv, (1, 1), Padding::Same).unwrap();
        prop_assert_eq!(tape.shape(same), &[1, 1, h, w]);
    }

    /// Record write -> parse is the identity on well-formed records.
    #[test]
    fn record_round_trip(
        rate in prop::sample::select(vec![125u32, 250, 500]),
        n_samples in 1usize..24,
        values in prop::collection::vec(-10.0f64..10.0, 2 * 24),
        label in "[a-zA-Z][a-zA-Z ,\"]{0,16}",
    ) {
        let rec = EcgRecord {
            id: "prop".into(),
            sample_rate_hz: rate,
            lead_names: vec!["II".into(), "V1".into()],
            samples: vec![
                values[..n_samples].to_vec(),
                values[24..24 + n_samples].to_vec(),
            ],
            label_text: label,
            label: None,
        };
        let mut bytes = Vec::new();
        write_record(&mut bytes, &rec).unwrap();
        let back = parse_record(std::io::Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(&back.id, &rec.id);
        prop_assert_eq!(back.sample_rate_hz, rec.sample_rate_hz);
        prop_assert_eq!(&back.lead_names, &rec.lead_names);
        prop_assert_eq!(&back.label_text, &rec.label_text);
        for (a, b) in back.samples.iter().flatten().zip(rec.samples.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Fold plans partition the ids with per-class spread at most one.
    #[test]
    fn fold_partition_and_spread(
        n0 in 10usize..60,
        n1 in 10usize..60,
        n_folds in 2usize..10,
        seed in any::<u64>(),
    ) {
        prop_assume!(n0 >= n_folds && n1 >= n_folds);
        let mut items: Vec<(String, u8)> = Vec::new();
        for i in 0..n0 {
            items.push((format!("n{i}"), 0));
        }
        for i in 0..n1 {
            items.push((format!("a{i}"), 1));
        }
        let plan = make_folds(&items, n_folds, seed).unwrap();
        prop_assert_eq!(plan.assignments.len(), items.len());
        let mut counts = vec![[0usize; 2]; n_folds];
        for (id, label) in &items {
            counts[plan.fold_of(id).unwrap()][*label as usize] += 1;
        }
        for class in 0..2 {
            let per: Vec<usize> = counts.iter().map(|c| c[class]).collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }

    /// Label mapping is total on nonempty strings and idempotent under
    /// whitespace/case normalization.
    #[test]
    fn label_mapping_total_and_idempotent(text in "[ -~]{1,24}") {
        prop_assume!(!text.trim().is_empty());
        let label = mbcrnet::data::map_label(&text).unwrap();
        let renorm = format!("  {}  ", text.to_uppercase());
        prop_assert_eq!(mbcrnet::data::map_label(&renorm).unwrap(), label);
    }
}
