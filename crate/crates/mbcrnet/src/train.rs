//! Optimization loop, cross-validation driver, lead ablation, and report
//! formatting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::CacheEntry;
use crate::error::{Error, Result};
use crate::folds::{balance_classes, make_folds};
use crate::metrics::{format_pct, Metrics};
use crate::model::{Model, ModelSpec, Variant};
use crate::seeds::mix;
use crate::tape::{Mode, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

// ── Datasets ────────────────────────────────────────────────────────────

/// In-memory labeled dataset of [leads, time] tensors.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub items: Vec<CacheEntry>,
}

impl Dataset {
    pub fn from_entries(items: Vec<CacheEntry>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labeled_ids(&self) -> Vec<(String, u8)> {
        self.items.iter().map(|e| (e.id.clone(), e.label)).collect()
    }

    pub fn subset(&self, ids: &[&str]) -> Dataset {
        let wanted: std::collections::BTreeSet<&str> = ids.iter().copied().collect();
        Dataset {
            items: self.items.iter().filter(|e| wanted.contains(e.id.as_str())).cloned().collect(),
        }
    }

    /// Slice out one lead row, producing [1, time] tensors.
    pub fn select_lead(&self, lead_index: usize) -> Result<Dataset> {
        let mut items = Vec::with_capacity(self.items.len());
        for e in &self.items {
            let shape = e.tensor.shape();
            if shape.len() != 2 || lead_index >= shape[0] {
                return Err(Error::ShapeMismatch {
                    expected: format!("[leads > {lead_index}, time] tensor"),
                    got: format!("{shape:?}"),
                });
            }
            let time = shape[1];
            let row = e.tensor.data()[lead_index * time..(lead_index + 1) * time].to_vec();
            items.push(CacheEntry {
                id: e.id.clone(),
                label: e.label,
                tensor: Tensor::new(vec![1, time], row)?,
            });
        }
        Ok(Dataset { items })
    }

    /// Stack items (by index) into a [n, leads, time] batch plus labels.
    fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let first = &self.items[indices[0]].tensor;
        let (leads, time) = (first.shape()[0], first.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * leads * time);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let t = &self.items[i].tensor;
            if t.shape() != first.shape() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", first.shape()),
                    got: format!("{:?}", t.shape()),
                });
            }
            data.extend_from_slice(t.data());
            labels.push(self.items[i].label as usize);
        }
        Ok((Tensor::new(vec![indices.len(), leads, time], data)?, labels))
    }
}

// ── Optimizers ──────────────────────────────────────────────────────────

/// One Adam update with bias correction; `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) {
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..param.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer state for every parameter tensor of a model.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    t: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn for_model(model: &Model, cfg: &TrainConfig) -> Self {
        let mut moments = Vec::new();
        model.visit_params(&mut |_, t| {
            moments.push((vec![0.0; t.numel()], vec![0.0; t.numel()]));
        });
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            betas: (cfg.beta1, cfg.beta2),
            eps: cfg.adam_eps,
            t: 0,
            moments,
        }
    }

    /// Apply one step given gradients aligned with `visit_params` order.
    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f64>]) {
        self.t += 1;
        let mut i = 0;
        match self.kind {
            OptimizerKind::Adam => {
                let (t, lr, betas, eps) = (self.t, self.lr, self.betas, self.eps);
                let moments = &mut self.moments;
                model.visit_params_mut(&mut |_, p| {
                    let (m, v) = &mut moments[i];
                    adam_step(p.data_mut(), &grads[i], m, v, t, lr, betas, eps);
                    i += 1;
                });
            }
            OptimizerKind::Sgd => {
                let lr = self.lr;
                model.visit_params_mut(&mut |_, p| {
                    for (pv, gv) in p.data_mut().iter_mut().zip(grads[i].iter()) {
                        *pv -= lr * gv;
                    }
                    i += 1;
                });
            }
        }
    }
}

// ── Training and evaluation ─────────────────────────────────────────────

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Train in place: seeded-shuffled mini-batches, dropout seeds derived per
/// step, loss checked finite on every batch.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArg("training set is empty".into()));
    }
    let mut optimizer = Optimizer::for_model(model, cfg);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (batch, labels) = data.batch(chunk)?;
            let mut tape = Tape::new();
            let dropout_seed = mix(mix(cfg.seed, epoch as u64), 0x5eed ^ step as u64);
            let wired = model.wire(&mut tape, &batch, Mode::Train, dropout_seed)?;
            let (loss, _) = tape.softmax_xent(wired.logits, &labels)?;
            let loss_value = tape.value(loss)[0];
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = wired
                .params
                .iter()
                .map(|&v| tape.grad(v).expect("param gradient").to_vec())
                .collect();
            drop(tape);
            optimizer.step(model, &grads);

            epoch_loss += loss_value;
            steps += 1;
        }
        report.epoch_losses.push(epoch_loss / steps as f64);
    }
    Ok(report)
}

/// Argmax with ties resolved to class 0.
pub(crate) fn decide(probs_row: &[f64]) -> u8 {
    u8::from(probs_row[1] > probs_row[0])
}

/// Eval-mode predictions for every item, in dataset order.
pub fn predictions(model: &mut Model, data: &Dataset) -> Result<Vec<u8>> {
    let mut preds = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(64) {
        let (batch, _) = data.batch(chunk)?;
        let probs = model.predict(&batch)?;
        for row in 0..chunk.len() {
            preds.push(decide(&probs.data()[row * 2..row * 2 + 2]));
        }
    }
    Ok(preds)
}

pub fn evaluate(model: &mut Model, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let preds = predictions(model, data)?;
    let labels: Vec<u8> = data.items.iter().map(|e| e.label).collect();
    Metrics::from_predictions(&preds, &labels)
}

// ── Cross-validation ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct CrossvalReport {
    pub variant: Variant,
    pub n_folds: usize,
    pub per_fold: Vec<Metrics>,
}

impl CrossvalReport {
    pub fn mean_acc(&self) -> f64 {
        self.per_fold.iter().map(|m| m.acc()).sum::<f64>() / self.per_fold.len() as f64
    }

    pub fn mean_se(&self) -> Option<f64> {
        let vals: Vec<f64> = self.per_fold.iter().filter_map(|m| m.se()).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Text table: one row per fold plus the average.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{}-fold cross-validation, MBCRNet-{}\n\n",
            self.n_folds,
            self.variant.as_str()
        ));
        out.push_str(&format!("{:<10}{:>10}{:>10}\n", "Fold", "ACC", "Se"));
        for (i, m) in self.per_fold.iter().enumerate() {
            out.push_str(&format!(
                "{:<10}{:>10}{:>10}\n",
                format!("Fold-{}", i + 1),
                format_pct(Some(m.acc())),
                format_pct(m.se()),
            ));
        }
        out.push_str(&format!(
            "{:<10}{:>10}{:>10}\n",
            "Average",
            format_pct(Some(self.mean_acc())),
            format_pct(self.mean_se()),
        ));
        out
    }

    /// Machine-readable key/value lines.
    pub fn kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("variant".to_string(), self.variant.as_str().to_string()),
            ("n_folds".to_string(), self.n_folds.to_string()),
        ];
        for (i, m) in self.per_fold.iter().enumerate() {
            kv.push((format!("fold.{}.acc", i + 1), m.acc().to_string()));
            kv.push((
                format!("fold.{}.se", i + 1),
                m.se().map_or("nan".to_string(), |v| v.to_string()),
            ));
            kv.push((format!("fold.{}.tp", i + 1), m.true_pos.to_string()));
            kv.push((format!("fold.{}.tn", i + 1), m.true_neg.to_string()));
            kv.push((format!("fold.{}.fp", i + 1), m.false_pos.to_string()));
            kv.push((format!("fold.{}.fn", i + 1), m.false_neg.to_string()));
        }
        kv.push(("average.acc".to_string(), self.mean_acc().to_string()));
        kv.push((
            "average.se".to_string(),
            self.mean_se().map_or("nan".to_string(), |v| v.to_string()),
        ));
        kv
    }
}

/// Balance classes, assign stratified folds, then train on nine folds and
/// test on the held-out one, for every fold. Folds run in parallel up to the
/// worker cap; results are deterministic regardless of the cap.
pub fn crossval(
    data: &Dataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    n_folds: usize,
    seed: u64,
) -> Result<CrossvalReport> {
    let balanced = balance_classes(&data.labeled_ids(), seed);
    let plan = make_folds(&balanced, n_folds, seed)?;

    let jobs: Vec<usize> = (0..n_folds).collect();
    let results = parallel_map(jobs, |fold| -> Result<Metrics> {
        let (train_items, test_items) = plan.split(&balanced, fold);
        let train_ids: Vec<&str> = train_items.iter().map(|it| it.0.as_str()).collect();
        let test_ids: Vec<&str> = test_items.iter().map(|it| it.0.as_str()).collect();
        for id in &test_ids {
            if train_ids.contains(id) {
                return Err(Error::InvalidArg(format!("fold leak: id {id} in both splits")));
            }
        }
        let train_set = data.subset(&train_ids);
        let test_set = data.subset(&test_ids);
        let mut model = Model::build(spec, mix(seed, 1000 + fold as u64))?;
        let fold_cfg = TrainConfig { seed: mix(seed, fold as u64), ..cfg.clone() };
        train(&mut model, &train_set, &fold_cfg)?;
        evaluate(&mut model, &test_set)
    });

    let mut per_fold = Vec::with_capacity(n_folds);
    for r in results {
        per_fold.push(r?);
    }
    Ok(CrossvalReport { variant: spec.variant, n_folds, per_fold })
}

// ── Lead ablation ───────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub lead_names: Vec<String>,
    /// One row per seed: accuracy per single-lead model.
    pub single_acc: Vec<Vec<f64>>,
    /// One fused-model accuracy per seed.
    pub fused_acc: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl AblationReport {
    pub fn mean_single(&self, lead: usize) -> f64 {
        self.single_acc.iter().map(|row| row[lead]).sum::<f64>() / self.single_acc.len() as f64
    }

    pub fn best_single_per_seed(&self) -> Vec<f64> {
        self.single_acc
            .iter()
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Median over seeds of (fused accuracy - best single-lead accuracy).
    pub fn median_fused_margin(&self) -> f64 {
        let mut margins: Vec<f64> = self
            .fused_acc
            .iter()
            .zip(self.best_single_per_seed())
            .map(|(&f, b)| f - b)
            .collect();
        margins.sort_by(|a, b| a.partial_cmp(b).unwrap());
        margins[margins.len() / 2]
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("Single-lead vs fused accuracy\n\n");
        out.push_str(&format!("{:<8}", "Seed"));
        for name in &self.lead_names {
            out.push_str(&format!("{name:>8}"));
        }
        out.push_str(&format!("{:>8}\n", "fused"));
        for (si, &seed) in self.seeds.iter().enumerate() {
            out.push_str(&format!("{seed:<8}"));
            for acc in &self.single_acc[si] {
                out.push_str(&format!("{:>8.4}", acc));
            }
            out.push_str(&format!("{:>8.4}\n", self.fused_acc[si]));
        }
        out.push_str(&format!(
            "\nmedian(fused - best single) = {:+.4}\n",
            self.median_fused_margin()
        ));
        out
    }

    pub fn kv(&self) -> Vec<(String, String)> {
        let mut kv = Vec::new();
        for (si, &seed) in self.seeds.iter().enumerate() {
            kv.push((format!("seed.{si}"), seed.to_string()));
            for (li, name) in self.lead_names.iter().enumerate() {
                kv.push((format!("seed.{si}.lead.{name}.acc"), self.single_acc[si][li].to_string()));
            }
            kv.push((format!("seed.{si}.fused.acc"), self.fused_acc[si].to_string()));
        }
        kv.push(("median_fused_margin".to_string(), self.median_fused_margin().to_string()));
        kv
    }
}

/// Train one single-lead model per lead plus one fused model per seed, all
/// under identical budgets, on a shared train/test split (fold 0 held out).
pub fn lead_ablation(
    data: &Dataset,
    fused_spec: &ModelSpec,
    cfg: &TrainConfig,
    n_folds: usize,
    seeds: &[u64],
) -> Result<AblationReport> {
    let lead_names: Vec<String> =
        crate::data::CANONICAL_LEADS.iter().map(|s| s.to_string()).collect();
    let mut single_spec = fused_spec.clone();
    single_spec.variant = Variant::SingleLead;
    single_spec.n_leads = 1;
    single_spec.validate()?;

    let mut single_acc = Vec::new();
    let mut fused_acc = Vec::new();
    for &seed in seeds {
        let balanced = balance_classes(&data.labeled_ids(), seed);
        let plan = make_folds(&balanced, n_folds, seed)?;
        let (train_items, test_items) = plan.split(&balanced, 0);
        let train_ids: Vec<&str> = train_items.iter().map(|it| it.0.as_str()).collect();
        let test_ids: Vec<&str> = test_items.iter().map(|it| it.0.as_str()).collect();
        let train_set = data.subset(&train_ids);
        let test_set = data.subset(&test_ids);

        // Jobs 0..8 are single leads, job 8 is the fused model.
        let jobs: Vec<usize> = (0..=lead_names.len()).collect();
        let accs = parallel_map(jobs, |job| -> Result<f64> {
            let (mut model, tr, te) = if job < lead_names.len() {
                let tr = train_set.select_lead(job)?;
                let te = test_set.select_lead(job)?;
                (Model::build(&single_spec, mix(seed, 2000 + job as u64))?, tr, te)
            } else {
                (Model::build(fused_spec, mix(seed, 3000))?, train_set.clone(), test_set.clone())
            };
            let job_cfg = TrainConfig { seed: mix(seed, 100 + job as u64), ..cfg.clone() };
            train(&mut model, &tr, &job_cfg)?;
            Ok(evaluate(&mut model, &te)?.acc())
        });

        let mut accs = accs.into_iter().collect::<Result<Vec<f64>>>()?;
        let fused = accs.pop().expect("fused job present");
        single_acc.push(accs);
        fused_acc.push(fused);
    }
    Ok(AblationReport { lead_names, single_acc, fused_acc, seeds: seeds.to_vec() })
}

// ── Worker pool ─────────────────────────────────────────────────────────

/// Number of worker threads: MBCR_THREADS if set, else the machine's
/// available parallelism.
pub fn worker_threads() -> usize {
    if let Ok(v) = std::env::var("MBCR_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Map a function over items on up to `worker_threads()` threads, preserving
/// input order in the output. Each item is processed independently, so the
/// result does not depend on scheduling.
pub fn parallel_map<I, O, F>(items: Vec<I>, f: F) -> Vec<O>
where
    I: Send,
    O: Send,
    F: Fn(I) -> O + Sync,
{
    let threads = worker_threads().min(items.len().max(1));
    if threads <= 1 {
        return items.into_iter().map(f).collect();
    }

    use std::sync::Mutex;
    let queue: Mutex<Vec<(usize, I)>> = Mutex::new(items.into_iter().enumerate().rev().collect());
    let results: Vec<Mutex<Option<O>>> = {
        let len = queue.lock().unwrap().len();
        (0..len).map(|_| Mutex::new(None)).collect()
    };

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let item = queue.lock().unwrap().pop();
                match item {
                    Some((idx, item)) => {
                        let out = f(item);
                        *results[idx].lock().unwrap() = Some(out);
                    }
                    None => break,
                }
            });
        }
    });

    results.into_iter().map(|m| m.into_inner().unwrap().expect("job completed")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn adam_examples() {
        // Zero gradient leaves the parameter untouched.
        let mut p = [0.5];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_step(&mut p, &[0.0], &mut m, &mut v, 1, 0.1, (0.9, 0.999), 1e-8);
        assert_eq!(p[0], 0.5);

        // Bias-corrected unit step: param 0, grad 1, lr 0.1 -> ~ -0.1.
        let mut p = [0.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_step(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, (0.9, 0.999), 1e-8);
        assert!((p[0] + 0.1).abs() < 1e-8, "step {}", p[0]);
    }

    fn toy_dataset(spec: &ModelSpec, n: usize, seed: u64) -> Dataset {
        // Class 1 carries a constant offset so training has signal.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let data: Vec<f64> = (0..spec.n_leads * spec.time_len)
                .map(|_| rng.random_range(-0.5..0.5) + label as f64)
                .collect();
            items.push(CacheEntry {
                id: format!("t{i}"),
                label,
                tensor: Tensor::new(vec![spec.n_leads, spec.time_len], data).unwrap(),
            });
        }
        Dataset::from_entries(items)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let spec = ModelSpec::mini(Variant::L);
        let mut model = Model::build(&spec, 1).unwrap();
        let data = toy_dataset(&spec, 8, 2);
        let before: Vec<Vec<u64>> = {
            let mut v = Vec::new();
            model.visit_params(&mut |_, t| v.push(t.data().iter().map(|x| x.to_bits()).collect()));
            v
        };
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 2, batch_size: 4, ..Default::default() };
        train(&mut model, &data, &cfg).unwrap();
        let mut i = 0;
        model.visit_params(&mut |_, t| {
            assert!(t.data().iter().map(|x| x.to_bits()).eq(before[i].iter().copied()));
            i += 1;
        });
    }

    #[test]
    fn training_is_bit_reproducible_and_loss_improves() {
        let spec = ModelSpec::mini(Variant::F);
        let data = toy_dataset(&spec, 16, 3);
        let cfg = TrainConfig { epochs: 5, batch_size: 8, seed: 11, ..Default::default() };

        let run = || {
            let mut model = Model::build(&spec, 7).unwrap();
            let report = train(&mut model, &data, &cfg).unwrap();
            let metrics = evaluate(&mut model, &data).unwrap();
            (report, metrics)
        };
        let (ra, ma) = run();
        let (rb, mb) = run();
        assert_eq!(ma, mb);
        assert_eq!(ra.epoch_losses.len(), 5);
        assert!(ra
            .epoch_losses
            .iter()
            .zip(rb.epoch_losses.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(ra.epoch_losses.iter().all(|l| l.is_finite()));
        assert!(
            ra.epoch_losses.last().unwrap() < ra.epoch_losses.first().unwrap(),
            "loss should end below start: {:?}",
            ra.epoch_losses
        );
    }

    #[test]
    fn tie_breaks_toward_class_zero() {
        assert_eq!(decide(&[0.5, 0.5]), 0);
        assert_eq!(decide(&[0.4, 0.6]), 1);
        assert_eq!(decide(&[0.6, 0.4]), 0);
    }

    #[test]
    fn evaluate_rejects_empty_set() {
        let spec = ModelSpec::mini(Variant::L);
        let mut model = Model::build(&spec, 1).unwrap();
        assert!(matches!(evaluate(&mut model, &Dataset::default()), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn parallel_map_preserves_order_under_any_thread_count() {
        let items: Vec<usize> = (0..17).collect();
        let out = parallel_map(items, |i| i * i);
        assert_eq!(out, (0..17).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn crossval_metrics_mean_is_arithmetic_mean() {
        let report = CrossvalReport {
            variant: Variant::L,
            n_folds: 2,
            per_fold: vec![
                Metrics { true_pos: 4, true_neg: 4, false_pos: 1, false_neg: 1 },
                Metrics { true_pos: 5, true_neg: 3, false_pos: 2, false_neg: 0 },
            ],
        };
        let mean = (0.8 + 0.8) / 2.0;
        assert!((report.mean_acc() - mean).abs() < 1e-12);
        let table = report.table();
        assert!(table.contains("Fold-1"));
        assert!(table.contains("Average"));
    }
}
