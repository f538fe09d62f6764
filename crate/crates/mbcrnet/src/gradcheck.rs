//! Finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::model::Model;
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;

/// Compare the tape gradient of a scalar-valued function against central
/// differences, elementwise over every entry of every `points` tensor.
///
/// Returns the maximum over elements of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
///
/// The function must be deterministic: run dropout in eval mode (or with a
/// fixed seed) and let batchnorm use whatever statistics the mode dictates —
/// train-mode batch statistics are a pure function of the inputs.
pub fn gradcheck<F>(mut f: F, points: &[Tensor], h: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = points
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.requires_grad = true;
            tape.leaf(&p)
        })
        .collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf gradient").to_vec())
        .collect();

    // Numeric pass: perturb one element at a time.
    let mut work: Vec<Tensor> = points.to_vec();
    let mut max_err = 0.0_f64;
    for ti in 0..work.len() {
        for i in 0..work[ti].numel() {
            let x0 = work[ti].data()[i];
            let xp = x0 + h;
            let xm = x0 - h;

            work[ti].data_mut()[i] = xp;
            let fp = eval(&mut f, &work)?;
            work[ti].data_mut()[i] = xm;
            let fm = eval(&mut f, &work)?;
            work[ti].data_mut()[i] = x0;

            // Divide by the realized step: x0 + h rounds in f64.
            let numeric = (fp - fm) / (xp - xm);
            let a = analytic[ti][i];
            let err = (a - numeric).abs() / (1e-8_f64).max(a.abs() + numeric.abs());
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

fn eval<F>(f: &mut F, points: &[Tensor]) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    debug_assert_eq!(tape.value(loss).len(), 1);
    Ok(tape.value(loss)[0])
}

/// Finite-difference check of a whole model's loss gradient, w.r.t. the
/// input batch and every parameter tensor.
///
/// Runs in train mode so batchnorm differentiates through batch statistics;
/// the caller should use a spec with dropout_rate 0 (or rely on the fixed
/// dropout seed, which makes the mask a constant across evaluations).
/// Running statistics are restored on return.
pub fn model_gradcheck(
    model: &mut Model,
    batch: &Tensor,
    labels: &[usize],
    h: f64,
) -> Result<f64> {
    let saved_stats: Vec<crate::tape::BnStats> = {
        let mut stats = Vec::new();
        model.visit_units(&mut |_, unit| stats.push(unit.running.clone()));
        stats
    };

    let loss_of = |model: &mut Model, batch: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let wired = model.wire(&mut tape, batch, Mode::Train, 0)?;
        let (loss, _) = tape.softmax_xent(wired.logits, labels)?;
        Ok(tape.value(loss)[0])
    };

    // Analytic gradients for the input and all parameters.
    let mut batch_grad = batch.clone();
    batch_grad.requires_grad = true;
    let mut tape = Tape::new();
    let wired = model.wire(&mut tape, &batch_grad, Mode::Train, 0)?;
    let (loss, _) = tape.softmax_xent(wired.logits, labels)?;
    tape.backward(loss)?;
    let input_grad = tape.grad(wired.input).expect("input gradient").to_vec();
    let param_grads: Vec<Vec<f64>> = wired
        .params
        .iter()
        .map(|&v| tape.grad(v).expect("param gradient").to_vec())
        .collect();
    drop(tape);

    let mut max_err = 0.0_f64;
    let mut check = |a: f64, fp: f64, fm: f64, step: f64| {
        let numeric = (fp - fm) / step;
        let err = (a - numeric).abs() / (1e-8_f64).max(a.abs() + numeric.abs());
        if err > max_err {
            max_err = err;
        }
    };

    // Input elements.
    let mut work = batch.clone();
    for i in 0..work.numel() {
        let x0 = work.data()[i];
        work.data_mut()[i] = x0 + h;
        let fp = loss_of(model, &work)?;
        work.data_mut()[i] = x0 - h;
        let fm = loss_of(model, &work)?;
        work.data_mut()[i] = x0;
        check(input_grad[i], fp, fm, (x0 + h) - (x0 - h));
    }

    // Parameter elements.
    let sizes = model.param_sizes();
    for (pi, (_, numel)) in sizes.iter().enumerate() {
        for i in 0..*numel {
            let x0 = model.param_get(pi, i);
            model.param_set(pi, i, x0 + h);
            let fp = loss_of(model, batch)?;
            model.param_set(pi, i, x0 - h);
            let fm = loss_of(model, batch)?;
            model.param_set(pi, i, x0);
            check(param_grads[pi][i], fp, fm, (x0 + h) - (x0 - h));
        }
    }

    let mut it = saved_stats.into_iter();
    model.visit_units_mut(&mut |_, unit| {
        unit.running = it.next().expect("stats count unchanged");
    });
    Ok(max_err)
}

/// The standard battery: every differentiable primitive at random points,
/// the DBCRN block, and the mini-profile full model in all three fusion
/// variants. Returns (name, max relative error) pairs; the threshold for a
/// healthy engine is 1e-4 at h = 1e-5.
pub fn standard_suite() -> Result<Vec<(String, f64)>> {
    use crate::model::{Model, ModelSpec, Variant};
    use crate::nn::{DbcrnBlock, ForwardCtx, UnitOrder};
    use crate::tape::{BnStats, Padding};
    use rand::{Rng, SeedableRng};

    let h = 1e-5;
    let rand_tensor = |shape: Vec<usize>, seed: u64, scale: f64| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let numel = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-scale..scale)).collect();
        Tensor::new(shape, data).expect("shape")
    };
    let mut results = Vec::new();

    let x = rand_tensor(vec![2, 2, 3, 9], 1, 1.0);
    let k = rand_tensor(vec![3, 2, 2, 3], 2, 1.0);
    results.push((
        "conv2d(valid, stride 2)+relu".to_string(),
        gradcheck(
            |tape, vars| {
                let c = tape.conv2d(vars[0], vars[1], (1, 2), Padding::Valid)?;
                let r = tape.relu(c);
                Ok(tape.sum(r))
            },
            &[x.clone(), k.clone()],
            h,
        )?,
    ));
    results.push((
        "conv2d(same, stride 1)".to_string(),
        gradcheck(
            |tape, vars| {
                let c = tape.conv2d(vars[0], vars[1], (1, 1), Padding::Same)?;
                Ok(tape.sum(c))
            },
            &[x, k],
            h,
        )?,
    ));

    let x = rand_tensor(vec![3, 2, 2, 4], 5, 2.0);
    let gamma = rand_tensor(vec![2], 6, 1.0);
    let beta = rand_tensor(vec![2], 7, 1.0);
    for mode in [Mode::Train, Mode::Eval] {
        let running = BnStats { mean: vec![0.3, -0.2], var: vec![1.5, 0.8] };
        // The relu matters: summing raw train-mode output is constant in x
        // and gamma by the normalization identity, which only measures
        // cancellation noise.
        results.push((
            format!("batchnorm({mode:?})+relu"),
            gradcheck(
                |tape, vars| {
                    let (y, _) =
                        tape.batchnorm(vars[0], vars[1], vars[2], &running, 1e-5, 0.1, mode)?;
                    let r = tape.relu(y);
                    Ok(tape.sum(r))
                },
                &[x.clone(), gamma.clone(), beta.clone()],
                h,
            )?,
        ));
    }

    let x = rand_tensor(vec![3, 4], 8, 1.0);
    let w = rand_tensor(vec![2, 4], 9, 1.0);
    let b = rand_tensor(vec![2], 10, 0.5);
    results.push((
        "dense+softmax_xent".to_string(),
        gradcheck(
            |tape, vars| {
                let y = tape.dense(vars[0], vars[1], vars[2])?;
                let (loss, _) = tape.softmax_xent(y, &[0, 1, 0])?;
                Ok(loss)
            },
            &[x, w, b],
            h,
        )?,
    ));

    let x = rand_tensor(vec![24], 11, 1.0);
    results.push((
        "add+relu".to_string(),
        gradcheck(
            |tape, vars| {
                let doubled = tape.add(vars[0], vars[0])?;
                let r = tape.relu(doubled);
                Ok(tape.sum(r))
            },
            &[x.clone()],
            h,
        )?,
    ));
    results.push((
        "dropout(fixed mask)".to_string(),
        gradcheck(
            |tape, vars| {
                let y = tape.dropout(vars[0], 0.4, Mode::Train, 99)?;
                Ok(tape.sum(y))
            },
            &[x],
            h,
        )?,
    ));

    let block = DbcrnBlock::new(2, 3, 5, 11, "blk");
    let x = rand_tensor(vec![2, 2, 2, 16], 5, 1.0);
    let ctx = ForwardCtx {
        mode: Mode::Train,
        dropout_seed: 0,
        bn_eps: 1e-5,
        bn_momentum: 0.1,
        unit_order: UnitOrder::ConvBnRelu,
    };
    results.push((
        "dbcrn block".to_string(),
        gradcheck(
            |tape, vars| {
                let mut block = block.clone();
                let (_, out) = block.forward(tape, vars[0], &ctx, &mut Vec::new())?;
                Ok(tape.sum(out))
            },
            &[x],
            h,
        )?,
    ));

    // Finite differences on a deep relu network are only a valid measurement
    // where the +-h probes cross no activation kink; these fixed seeds pick
    // such a point (a crossing shows up as an isolated O(1) error on an
    // otherwise sub-1e-6 tensor, not as a widespread failure).
    const MODEL_SEED: u64 = 105;
    const BATCH_SEED: u64 = 205;
    for variant in [Variant::T, Variant::L, Variant::F] {
        let mut spec = ModelSpec::mini(variant);
        spec.dropout_rate = 0.0;
        let mut model = Model::build(&spec, MODEL_SEED)?;
        let batch = rand_tensor(vec![1, spec.n_leads, spec.time_len], BATCH_SEED, 1.0);
        let err = model_gradcheck(&mut model, &batch, &[0], h)?;
        results.push((format!("mini full model, variant {}", variant.as_str()), err));
    }

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        // loss = sum(3x): derivative is exactly 3 everywhere.
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let err = gradcheck(
            |tape, vars| {
                let tripled = {
                    let a = tape.add(vars[0], vars[0])?;
                    tape.add(a, vars[0])?
                };
                Ok(tape.sum(tripled))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "linear gradcheck error {err}");
    }
}
