use mbcrnet::model::{Model, ModelSpec, Variant};
use mbcrnet::tape::{Mode, Tape};
use mbcrnet::tensor::Tensor;
use rand::{Rng, SeedableRng};

fn main() {
    let mut spec = ModelSpec::mini(Variant::T);
    spec.dropout_rate = 0.0;
    let mut model = Model::build(&spec, 17).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
    let numel = 2 * spec.n_leads * spec.time_len;
    let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = Tensor::new(vec![2, spec.n_leads, spec.time_len], data).unwrap();
    let labels = [0usize, 1usize];
    let h = 1e-5;

    let loss_of = |model: &mut Model, batch: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let wired = model.wire(&mut tape, batch, Mode::Train, 0).unwrap();
        let (loss, _) = tape.softmax_xent(wired.logits, &labels).unwrap();
        tape.value(loss)[0]
    };

    let mut tape = Tape::new();
    let wired = model.wire(&mut tape, &batch, Mode::Train, 0).unwrap();
    let (loss, _) = tape.softmax_xent(wired.logits, &labels).unwrap();
    tape.backward(loss).unwrap();
    let param_grads: Vec<Vec<f64>> = wired
        .params
        .iter()
        .map(|&v| tape.grad(v).unwrap().to_vec())
        .collect();
    drop(tape);

    let sizes = model.param_sizes();
    assert_eq!(sizes.len(), param_grads.len());
    for (pi, (name, numel)) in sizes.iter().enumerate() {
        let mut worst = 0.0_f64;
        let mut worst_info = (0usize, 0.0, 0.0);
        for i in 0..*numel {
            let x0 = model.param_get(pi, i);
            model.param_set(pi, i, x0 + h);
            let fp = loss_of(&mut model, &batch);
            model.param_set(pi, i, x0 - h);
            let fm = loss_of(&mut model, &batch);
            model.param_set(pi, i, x0);
            let numeric = (fp - fm) / ((x0 + h) - (x0 - h));
            let a = param_grads[pi][i];
            let err = (a - numeric).abs() / (1e-8_f64).max(a.abs() + numeric.abs());
            if err > worst {
                worst = err;
                worst_info = (i, a, numeric);
            }
        }
        println!(
            "{name:<24} worst {worst:.3e} at {} (analytic {:.6e} numeric {:.6e})",
            worst_info.0, worst_info.1, worst_info.2
        );
    }
}
