//! Complete classifier models: a shared conv trunk (Conv1 + four DBCRN
//! blocks), one of three fusion heads, and a two-layer classifier.

use crate::error::{Error, Result};
use crate::nn::{ConvUnit, DbcrnBlock, DenseLayer, ForwardCtx, FusionHead, FusionKind, UnitOrder};
use crate::tape::{softmax_rows, Mode, Padding, Tape, Var};
use crate::tensor::Tensor;

/// Which fusion head the model carries. `SingleLead` is the flatten variant
/// applied to one lead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    T,
    L,
    F,
    SingleLead,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::T => "T",
            Self::L => "L",
            Self::F => "F",
            Self::SingleLead => "single",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "T" | "t" => Ok(Self::T),
            "L" | "l" => Ok(Self::L),
            "F" | "f" => Ok(Self::F),
            "single" | "S" | "s" => Ok(Self::SingleLead),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected T, L, F or single)"
            ))),
        }
    }

    fn fusion_kind(self) -> FusionKind {
        match self {
            Self::T => FusionKind::AcrossLeads,
            Self::L => FusionKind::AcrossTime,
            Self::F | Self::SingleLead => FusionKind::Flatten,
        }
    }
}

/// Declarative description of a model: every size needed to build one.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub n_leads: usize,
    pub time_len: usize,
    pub kernel_len: usize,
    pub conv1_depth: usize,
    pub block_depths: [usize; 4],
    pub fc_hidden: usize,
    pub n_classes: usize,
    pub dropout_rate: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub unit_order: UnitOrder,
}

impl ModelSpec {
    /// Full-scale configuration: 8 leads x 2000 samples, 1x50 kernels,
    /// depths 8/16/32/64, 1000-unit hidden layer.
    pub fn paper(variant: Variant) -> Self {
        Self {
            variant,
            n_leads: if variant == Variant::SingleLead { 1 } else { 8 },
            time_len: 2000,
            kernel_len: 50,
            conv1_depth: 8,
            block_depths: [8, 16, 32, 64],
            fc_hidden: 1000,
            n_classes: 2,
            dropout_rate: 0.5,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            unit_order: UnitOrder::ConvBnRelu,
        }
    }

    /// Desk-scale configuration for tests: the same four-block topology with
    /// time chain 160 -> 78 -> 37 -> 17 -> 7 -> 2.
    pub fn mini(variant: Variant) -> Self {
        Self {
            variant,
            n_leads: if variant == Variant::SingleLead { 1 } else { 8 },
            time_len: 160,
            kernel_len: 5,
            conv1_depth: 4,
            block_depths: [4, 8, 8, 8],
            fc_hidden: 32,
            n_classes: 2,
            dropout_rate: 0.5,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            unit_order: UnitOrder::ConvBnRelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes != 2 {
            return Err(Error::Config(format!(
                "n_classes must be 2, got {}",
                self.n_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.bn_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("invalid batchnorm hyperparameters".into()));
        }
        if self.n_leads == 0 || self.time_len == 0 || self.kernel_len == 0 {
            return Err(Error::Config("extents must be positive".into()));
        }
        if self.n_leads > 64
            || self.time_len > 1_000_000
            || self.kernel_len > self.time_len
            || self.conv1_depth == 0
            || self.conv1_depth > 65_536
            || self.fc_hidden == 0
            || self.fc_hidden > 65_536
            || self.block_depths.iter().any(|&d| d == 0 || d > 65_536)
        {
            return Err(Error::Config("model dimensions out of supported range".into()));
        }
        self.shape_chain()?;
        let params = self.symbolic_param_count()?;
        if params > 1 << 24 {
            return Err(Error::Config(format!(
                "model would have {params} parameters, over the 2^24 cap"
            )));
        }
        Ok(())
    }

    /// Parameter count from the spec alone, without building tensors.
    fn symbolic_param_count(&self) -> Result<u128> {
        let chain = self.shape_chain()?;
        let k = self.kernel_len as u128;
        let mut total: u128 = self.conv1_depth as u128 * k + 2 * self.conv1_depth as u128;
        let mut c_in = self.conv1_depth as u128;
        for &d in &self.block_depths {
            let d = d as u128;
            // Two branch entry convs, two branch second convs, two residual convs.
            total += 2 * (d * c_in * k) + 4 * (d * d * k) + 6 * 2 * d;
            c_in = d;
        }
        let c = self.block_depths[3] as u128;
        match self.variant.fusion_kind() {
            FusionKind::AcrossLeads => total += c * c * self.n_leads as u128 + 2 * c,
            FusionKind::AcrossTime => {
                let w = chain[8].1[2] as u128;
                total += c * c * w + 2 * c;
            }
            FusionKind::Flatten => {}
        }
        let features = chain[chain.len() - 3].1[0] as u128;
        total += features * self.fc_hidden as u128 + self.fc_hidden as u128;
        total += self.fc_hidden as u128 * self.n_classes as u128 + self.n_classes as u128;
        Ok(total)
    }

    /// Walk the layer stack symbolically: each entry is a stage name plus its
    /// output extents ([channels, leads, time] for conv stages, [features]
    /// for the classifier). Fails with the first infeasible stage.
    pub fn shape_chain(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let k = self.kernel_len;
        let halve = |w: usize, stage: &str| -> Result<usize> {
            if w < k {
                return Err(Error::InfeasibleShape {
                    stage: stage.to_string(),
                    detail: format!("kernel {k} exceeds time extent {w}"),
                });
            }
            Ok((w - k) / 2 + 1)
        };

        let mut chain = Vec::new();
        let h = self.n_leads;
        let mut w = halve(self.time_len, "conv1")?;
        chain.push(("conv1".to_string(), vec![self.conv1_depth, h, w]));
        for (i, &depth) in self.block_depths.iter().enumerate() {
            let name = format!("block{}", i + 1);
            w = halve(w, &name)?;
            chain.push((format!("{name}.branches"), vec![depth, h, w]));
            chain.push((format!("{name}.residual"), vec![depth, h, w]));
        }

        let c = self.block_depths[3];
        let features = match self.variant.fusion_kind() {
            FusionKind::AcrossLeads => {
                chain.push(("head".to_string(), vec![c, 1, w]));
                c * w
            }
            FusionKind::AcrossTime => {
                chain.push(("head".to_string(), vec![c, h, 1]));
                c * h
            }
            FusionKind::Flatten => c * h * w,
        };
        chain.push(("flatten".to_string(), vec![features]));
        chain.push(("fc1".to_string(), vec![self.fc_hidden]));
        chain.push(("fc2".to_string(), vec![self.n_classes]));
        Ok(chain)
    }

    /// Final trunk feature extents (channels, leads, time).
    fn trunk_out(&self) -> Result<(usize, usize, usize)> {
        let chain = self.shape_chain()?;
        let residual4 = &chain[8].1;
        Ok((residual4[0], residual4[1], residual4[2]))
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("variant".into(), self.variant.as_str().into()),
            ("n_leads".into(), self.n_leads.to_string()),
            ("time_len".into(), self.time_len.to_string()),
            ("kernel_len".into(), self.kernel_len.to_string()),
            ("conv1_depth".into(), self.conv1_depth.to_string()),
            ("block_depths".into(), self.block_depths.map(|d| d.to_string()).join(",")),
            ("fc_hidden".into(), self.fc_hidden.to_string()),
            ("n_classes".into(), self.n_classes.to_string()),
            ("dropout_rate".into(), self.dropout_rate.to_string()),
            ("bn_eps".into(), self.bn_eps.to_string()),
            ("bn_momentum".into(), self.bn_momentum.to_string()),
            ("unit_order".into(), self.unit_order.as_str().into()),
        ]
    }

    pub fn from_kv(kv: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("missing spec key {key:?}")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| Error::Format(format!("bad integer for {key:?}")))
        };
        let float = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|_| Error::Format(format!("bad float for {key:?}")))
        };
        let depths: Vec<usize> = get("block_depths")?
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::Format("bad block_depths".into())))
            .collect::<Result<_>>()?;
        if depths.len() != 4 {
            return Err(Error::Format("block_depths must have 4 entries".into()));
        }
        Ok(Self {
            variant: Variant::parse(get("variant")?)
                .map_err(|_| Error::Format("bad variant".into()))?,
            n_leads: num("n_leads")?,
            time_len: num("time_len")?,
            kernel_len: num("kernel_len")?,
            conv1_depth: num("conv1_depth")?,
            block_depths: [depths[0], depths[1], depths[2], depths[3]],
            fc_hidden: num("fc_hidden")?,
            n_classes: num("n_classes")?,
            dropout_rate: float("dropout_rate")?,
            bn_eps: float("bn_eps")?,
            bn_momentum: float("bn_momentum")?,
            unit_order: UnitOrder::parse(get("unit_order")?)
                .map_err(|_| Error::Format("bad unit_order".into()))?,
        })
    }
}

/// Handles produced by one wiring of the model onto a tape.
pub struct Wired {
    pub logits: Var,
    pub input: Var,
    /// Parameter leaves in `visit_params` order.
    pub params: Vec<Var>,
}

/// A built model: trunk, head, classifier, and all parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub conv1: ConvUnit,
    pub blocks: Vec<DbcrnBlock>,
    pub head: FusionHead,
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
}

impl Model {
    /// Wire the full layer stack for `spec`, parameters drawn from `seed`.
    /// Trunk parameter names are variant-independent, so equal seeds give
    /// bit-identical trunks across variants.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let k = spec.kernel_len;
        let conv1 =
            ConvUnit::new(1, spec.conv1_depth, 1, k, (1, 2), Padding::Valid, seed, "conv1");
        let mut blocks = Vec::with_capacity(4);
        let mut c_in = spec.conv1_depth;
        for (i, &depth) in spec.block_depths.iter().enumerate() {
            blocks.push(DbcrnBlock::new(c_in, depth, k, seed, &format!("block{}", i + 1)));
            c_in = depth;
        }
        let (c, h, w) = spec.trunk_out()?;
        let head = FusionHead::new(spec.variant.fusion_kind(), c, h, w, seed);
        let fc1 = DenseLayer::new(head.out_features(), spec.fc_hidden, seed, "fc1");
        let fc2 = DenseLayer::new(spec.fc_hidden, spec.n_classes, seed, "fc2");
        Ok(Self { spec: spec.clone(), conv1, blocks, head, fc1, fc2 })
    }

    pub fn ctx(&self, mode: Mode, dropout_seed: u64) -> ForwardCtx {
        ForwardCtx {
            mode,
            dropout_seed,
            bn_eps: self.spec.bn_eps,
            bn_momentum: self.spec.bn_momentum,
            unit_order: self.spec.unit_order,
        }
    }

    /// Run the model on a [n, n_leads, time_len] batch, recording onto `tape`.
    pub fn wire(
        &mut self,
        tape: &mut Tape,
        batch: &Tensor,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Wired> {
        self.wire_traced(tape, batch, mode, dropout_seed, None)
    }

    /// As [`Model::wire`], optionally recording each stage's output extents
    /// (without the batch axis) into `trace`.
    pub fn wire_traced(
        &mut self,
        tape: &mut Tape,
        batch: &Tensor,
        mode: Mode,
        dropout_seed: u64,
        mut trace: Option<&mut Vec<(String, Vec<usize>)>>,
    ) -> Result<Wired> {
        let spec = self.spec.clone();
        if batch.rank() != 3
            || batch.shape()[1] != spec.n_leads
            || batch.shape()[2] != spec.time_len
        {
            return Err(Error::ShapeMismatch {
                expected: format!("[n, {}, {}] batch", spec.n_leads, spec.time_len),
                got: format!("{:?}", batch.shape()),
            });
        }
        let n = batch.shape()[0];
        let ctx = self.ctx(mode, dropout_seed);
        let mut bound = Vec::new();

        let input = tape.leaf(batch);
        let x = tape.reshape(input, vec![n, 1, spec.n_leads, spec.time_len])?;
        let record = |trace: &mut Option<&mut Vec<(String, Vec<usize>)>>,
                      tape: &Tape,
                      name: &str,
                      v: Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.push((name.to_string(), tape.shape(v)[1..].to_vec()));
            }
        };

        let mut cur = self.conv1.forward(tape, x, &ctx, &mut bound)?;
        record(&mut trace, tape, "conv1", cur);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let (s, out) = block.forward(tape, cur, &ctx, &mut bound)?;
            record(&mut trace, tape, &format!("block{}.branches", i + 1), s);
            record(&mut trace, tape, &format!("block{}.residual", i + 1), out);
            cur = out;
        }
        let has_head_conv = self.head.conv.is_some();
        let head_dims = (self.head.kind, self.head.in_channels, self.head.in_h, self.head.in_w);
        cur = self.head.forward(tape, cur, &ctx, &mut bound)?;
        if has_head_conv {
            if let Some(t) = trace.as_deref_mut() {
                let (kind, c, h, w) = head_dims;
                let (h, w) = match kind {
                    FusionKind::AcrossLeads => (1, w),
                    FusionKind::AcrossTime => (h, 1),
                    FusionKind::Flatten => (h, w),
                };
                t.push(("head".to_string(), vec![c, h, w]));
            }
        }
        record(&mut trace, tape, "flatten", cur);

        let h1 = self.fc1.forward(tape, cur, &mut bound)?;
        let h1 = tape.relu(h1);
        record(&mut trace, tape, "fc1", h1);
        let h1 = tape.dropout(h1, spec.dropout_rate, mode, dropout_seed)?;
        let logits = self.fc2.forward(tape, h1, &mut bound)?;
        record(&mut trace, tape, "fc2", logits);

        Ok(Wired { logits, input, params: bound })
    }

    /// Eval-mode class probabilities for a batch; rows sum to 1.
    pub fn predict(&mut self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let wired = self.wire(&mut tape, batch, Mode::Eval, 0)?;
        softmax_rows(&tape.to_tensor(wired.logits))
    }

    /// Total trainable scalar parameters (kernels, bn gamma/beta, dense
    /// weights and biases); running statistics excluded.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit_params(&mut |_, t| total += t.numel());
        total
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(String, &Tensor)) {
        self.conv1.visit_params("conv1", f);
        for (i, block) in self.blocks.iter().enumerate() {
            block.visit_params(&format!("block{}", i + 1), f);
        }
        self.head.visit_params(f);
        self.fc1.visit_params("fc1", f);
        self.fc2.visit_params("fc2", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv1.visit_params_mut("conv1", f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_params_mut(&format!("block{}", i + 1), f);
        }
        self.head.visit_params_mut(f);
        self.fc1.visit_params_mut("fc1", f);
        self.fc2.visit_params_mut("fc2", f);
    }

    /// Conv units (and their running statistics) in parameter order.
    pub fn visit_units(&self, f: &mut dyn FnMut(String, &ConvUnit)) {
        f("conv1".to_string(), &self.conv1);
        for (i, block) in self.blocks.iter().enumerate() {
            for (tag, unit) in block.units() {
                f(format!("block{}.{tag}", i + 1), unit);
            }
        }
        if let Some(unit) = &self.head.conv {
            f("head".to_string(), unit);
        }
    }

    pub fn visit_units_mut(&mut self, f: &mut dyn FnMut(String, &mut ConvUnit)) {
        f("conv1".to_string(), &mut self.conv1);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            for (tag, unit) in block.units_mut() {
                f(format!("block{}.{tag}", i + 1), unit);
            }
        }
        if let Some(unit) = &mut self.head.conv {
            f("head".to_string(), unit);
        }
    }

    // Indexed parameter access for finite-difference checks.

    pub fn param_sizes(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t| out.push((name, t.numel())));
        out
    }

    pub fn param_get(&self, index: usize, elem: usize) -> f64 {
        let mut i = 0;
        let mut out = None;
        self.visit_params(&mut |_, t| {
            if i == index {
                out = Some(t.data()[elem]);
            }
            i += 1;
        });
        out.expect("param index in range")
    }

    pub fn param_set(&mut self, index: usize, elem: usize, value: f64) {
        let mut i = 0;
        self.visit_params_mut(&mut |_, t| {
            if i == index {
                t.data_mut()[elem] = value;
            }
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_batch(spec: &ModelSpec, n: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let numel = n * spec.n_leads * spec.time_len;
        let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![n, spec.n_leads, spec.time_len], data).unwrap()
    }

    #[test]
    fn paper_shape_chain_matches_output_size_column() {
        let chain = ModelSpec::paper(Variant::L).shape_chain().unwrap();
        let expect: Vec<(&str, Vec<usize>)> = vec![
            ("conv1", vec![8, 8, 976]),
            ("block1.branches", vec![8, 8, 464]),
            ("block1.residual", vec![8, 8, 464]),
            ("block2.branches", vec![16, 8, 208]),
            ("block2.residual", vec![16, 8, 208]),
            ("block3.branches", vec![32, 8, 80]),
            ("block3.residual", vec![32, 8, 80]),
            ("block4.branches", vec![64, 8, 16]),
            ("block4.residual", vec![64, 8, 16]),
            ("head", vec![64, 8, 1]),
            ("flatten", vec![512]),
            ("fc1", vec![1000]),
            ("fc2", vec![2]),
        ];
        assert_eq!(chain.len(), expect.len());
        for ((name, dims), (ename, edims)) in chain.iter().zip(expect.iter()) {
            assert_eq!(name, ename);
            assert_eq!(dims, edims, "stage {name}");
        }
    }

    #[test]
    fn fc_input_sizes_per_variant() {
        for (variant, expect) in [(Variant::T, 1024), (Variant::L, 512), (Variant::F, 8192)] {
            let model = Model::build(&ModelSpec::paper(variant), 1).unwrap();
            assert_eq!(model.head.out_features(), expect, "{variant:?}");
            assert_eq!(model.fc1.weight.shape(), &[1000, expect]);
        }
    }

    #[test]
    fn mini_builds_and_forward_passes() {
        let spec = ModelSpec::mini(Variant::L);
        let mut model = Model::build(&spec, 7).unwrap();
        let batch = rand_batch(&spec, 2, 3);
        let mut tape = Tape::new();
        let mut trace = Vec::new();
        model.wire_traced(&mut tape, &batch, Mode::Train, 9, Some(&mut trace)).unwrap();
        let get = |name: &str| trace.iter().find(|(n, _)| n == name).unwrap().1.clone();
        assert_eq!(get("conv1"), vec![4, 8, 78]);
        assert_eq!(get("block1.residual"), vec![4, 8, 37]);
        assert_eq!(get("block2.residual"), vec![8, 8, 17]);
        assert_eq!(get("block3.residual"), vec![8, 8, 7]);
        assert_eq!(get("block4.residual"), vec![8, 8, 2]);
        assert_eq!(get("head"), vec![8, 8, 1]);
        assert_eq!(get("flatten"), vec![64]);
        assert_eq!(get("fc1"), vec![32]);
        assert_eq!(get("fc2"), vec![2]);
    }

    #[test]
    fn infeasible_spec_names_failing_stage() {
        let mut spec = ModelSpec::mini(Variant::F);
        spec.time_len = 40; // 40 -> 18 -> 7 -> 2 -> fails at block3
        match spec.shape_chain() {
            Err(Error::InfeasibleShape { stage, .. }) => assert_eq!(stage, "block3"),
            other => panic!("expected infeasible shape, got {other:?}"),
        }
    }

    #[test]
    fn forward_probs_rows_sum_to_one_and_batch_extent_checked() {
        let spec = ModelSpec::mini(Variant::T);
        let mut model = Model::build(&spec, 5).unwrap();
        let batch = rand_batch(&spec, 4, 11);
        let probs = model.predict(&batch).unwrap();
        assert_eq!(probs.shape(), &[4, 2]);
        for ni in 0..4 {
            let row = &probs.data()[ni * 2..ni * 2 + 2];
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        let bad = Tensor::zeros(vec![1, 4, spec.time_len]);
        assert!(model.predict(&bad).is_err());
    }

    #[test]
    fn eval_forward_is_bit_deterministic() {
        let spec = ModelSpec::mini(Variant::F);
        let mut model = Model::build(&spec, 13).unwrap();
        let batch = rand_batch(&spec, 2, 17);
        let a = model.predict(&batch).unwrap();
        let b = model.predict(&batch).unwrap();
        assert!(a.bits_eq(&b));
    }

    #[test]
    fn trunks_are_bit_identical_across_variants_with_equal_seed() {
        let collect = |variant: Variant| {
            let model = Model::build(&ModelSpec::paper(variant), 42).unwrap();
            let mut trunk: Vec<(String, Vec<u64>)> = Vec::new();
            model.visit_params(&mut |name, t| {
                if name.starts_with("conv1") || name.starts_with("block") {
                    trunk.push((name, t.data().iter().map(|v| v.to_bits()).collect()));
                }
            });
            trunk
        };
        let t = collect(Variant::T);
        let l = collect(Variant::L);
        let f = collect(Variant::F);
        assert_eq!(t, l);
        assert_eq!(t, f);
    }

    #[test]
    fn param_count_examples() {
        // dense(2 -> 3): 6 weights + 3 biases.
        let d = DenseLayer::new(2, 3, 1, "d");
        assert_eq!(d.weight.numel() + d.bias.numel(), 9);

        // Seed does not change the count.
        let spec = ModelSpec::mini(Variant::L);
        let a = Model::build(&spec, 1).unwrap().param_count();
        let b = Model::build(&spec, 2).unwrap().param_count();
        assert_eq!(a, b);

        // T and L differ only in head kernel and fc1 width; the difference
        // follows from the shape walk: (64*64*8*1 - 64*64*1*16) kernel
        // entries plus (1024 - 512)*1000 fc1 weights.
        let t = Model::build(&ModelSpec::paper(Variant::T), 1).unwrap().param_count();
        let l = Model::build(&ModelSpec::paper(Variant::L), 1).unwrap().param_count();
        let expect_diff: i64 = (64 * 64 * 8 - 64 * 64 * 16) + (1024 - 512) * 1000;
        assert_eq!(t as i64 - l as i64, expect_diff);
    }

    #[test]
    fn every_parameter_receives_a_finite_gradient() {
        let spec = ModelSpec::mini(Variant::L);
        let mut model = Model::build(&spec, 3).unwrap();
        let batch = rand_batch(&spec, 2, 19);
        let mut tape = Tape::new();
        let wired = model.wire(&mut tape, &batch, Mode::Train, 23).unwrap();
        let (loss, _) = tape.softmax_xent(wired.logits, &[0, 1]).unwrap();
        tape.backward(loss).unwrap();

        assert_eq!(wired.params.len(), model.param_sizes().len());
        for (i, &var) in wired.params.iter().enumerate() {
            let g = tape
                .grad(var)
                .unwrap_or_else(|| panic!("parameter {} missing gradient", model.param_sizes()[i].0));
            assert!(g.iter().all(|v| v.is_finite()));
        }
    }
}
