use std::path::Path;

use mbcrnet::checkpoint::{cache_to_container, model_to_container, write_container, CacheEntry};
use mbcrnet::model::{Model, ModelSpec, Variant};
use mbcrnet::nn::UnitOrder;
use mbcrnet::tensor::Tensor;

fn main() {
    let root = Path::new("fuzz/corpus");

    // parse_record seeds
    let dir = root.join("parse_record");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        dir.join("minimal.ecg"),
        "a,250,1,4,normal electrocardiogram\nII\n1\n2\n3\n4\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("quoted.ecg"),
        "b,500,2,3,\"first degree block, mild\"\nII,V1\n0.5,-0.25\n0.125,3e-2\n-0,NaN\n",
    )
    .unwrap();
    let cfg = mbcrnet::synth::SynthConfig {
        n_records: 1,
        duration_s: 0.05,
        sample_rate_hz: 500,
        ..Default::default()
    };
    let rec = &mbcrnet::synth::generate(&cfg).unwrap()[0];
    let mut bytes = Vec::new();
    mbcrnet::data::write_record(&mut bytes, rec).unwrap();
    std::fs::write(dir.join("synth.ecg"), bytes).unwrap();

    // parse_manifest seeds
    let dir = root.join("parse_manifest");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("basic.txt"), "a.ecg\n# comment\n\n/abs/b.ecg\nsub/dir/c.ecg\n")
        .unwrap();

    // load_container seeds
    let dir = root.join("load_container");
    std::fs::create_dir_all(&dir).unwrap();
    let cache = cache_to_container(
        &[CacheEntry {
            id: "r0".into(),
            label: 1,
            tensor: Tensor::new(vec![2, 3], vec![0.5, -1.0, 0.0, 1.5, 2.0, -0.25]).unwrap(),
        }],
        &[("window".into(), "3".into())],
    );
    let mut bytes = Vec::new();
    write_container(&mut bytes, &cache).unwrap();
    std::fs::write(dir.join("cache.bin"), bytes).unwrap();

    let spec = ModelSpec {
        variant: Variant::F,
        n_leads: 1,
        time_len: 125,
        kernel_len: 5,
        conv1_depth: 1,
        block_depths: [1, 1, 1, 1],
        fc_hidden: 1,
        n_classes: 2,
        dropout_rate: 0.0,
        bn_eps: 1e-5,
        bn_momentum: 0.1,
        unit_order: UnitOrder::ConvBnRelu,
    };
    let model = Model::build(&spec, 0).unwrap();
    let mut bytes = Vec::new();
    write_container(&mut bytes, &model_to_container(&model, &[])).unwrap();
    std::fs::write(dir.join("checkpoint.bin"), bytes).unwrap();

    // parse_config seeds
    let dir = root.join("parse_config");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        dir.join("default.json"),
        serde_json::to_string_pretty(&mbcrnet::config::RunConfig::default()).unwrap(),
    )
    .unwrap();
    std::fs::write(dir.join("partial.json"), r#"{"seed": 7, "variant": "T", "folds": 2}"#)
        .unwrap();

    println!("corpus written under {}", root.display());
}
