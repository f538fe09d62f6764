//! Composable layer units: the Conv-BN-ReLU unit, the DBCRN block (double
//! branch + identity-shortcut residual stage), fusion heads, and parameter
//! initialization.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seeds::mix_name;
use crate::tape::{BnStats, Mode, Padding, Tape, Var};
use crate::tensor::Tensor;

/// Order of the three stages inside a conv unit. The residual literature and
/// this architecture's tables disagree; both orderings are wired, selected
/// per model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitOrder {
    ConvBnRelu,
    ConvReluBn,
}

impl UnitOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ConvBnRelu => "conv-bn-relu",
            Self::ConvReluBn => "conv-relu-bn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "conv-bn-relu" => Ok(Self::ConvBnRelu),
            "conv-relu-bn" => Ok(Self::ConvReluBn),
            other => Err(Error::Config(format!("unknown unit order {other:?}"))),
        }
    }
}

/// Hyperparameters threaded through every forward call.
#[derive(Debug, Clone, Copy)]
pub struct ForwardCtx {
    pub mode: Mode,
    pub dropout_seed: u64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub unit_order: UnitOrder,
}

/// Draw a tensor from Normal(0, sqrt(2/fan_in)), deterministically from `seed`.
pub fn he_normal(shape: Vec<usize>, fan_in: usize, seed: u64) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let numel = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| normal.sample(&mut rng)).collect();
    Tensor::new(shape, data).expect("he_normal shape")
}

/// One convolution unit: conv2d (no bias) + batchnorm + relu, in the order
/// the context dictates.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub kernel: Tensor,
    pub stride: (usize, usize),
    pub padding: Padding,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: BnStats,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: (usize, usize),
        padding: Padding,
        seed: u64,
        name: &str,
    ) -> Self {
        let fan_in = c_in * kh * kw;
        Self {
            kernel: he_normal(
                vec![c_out, c_in, kh, kw],
                fan_in,
                mix_name(seed, &format!("{name}.kernel")),
            )
            .with_grad(),
            stride,
            padding,
            gamma: Tensor::full(vec![c_out], 1.0).with_grad(),
            beta: Tensor::zeros(vec![c_out]).with_grad(),
            running: BnStats::fresh(c_out),
        }
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape()[0]
    }

    /// Apply the unit, registering kernel/gamma/beta as leaves on the tape
    /// (pushed onto `bound` in that order). Train mode updates running stats.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Var,
        ctx: &ForwardCtx,
        bound: &mut Vec<Var>,
    ) -> Result<Var> {
        let k = tape.leaf(&self.kernel);
        let gamma = tape.leaf(&self.gamma);
        let beta = tape.leaf(&self.beta);
        bound.push(k);
        bound.push(gamma);
        bound.push(beta);

        let conv = tape.conv2d(x, k, self.stride, self.padding)?;
        let out = match ctx.unit_order {
            UnitOrder::ConvBnRelu => {
                let (bn, updated) = tape.batchnorm(
                    conv, gamma, beta, &self.running, ctx.bn_eps, ctx.bn_momentum, ctx.mode,
                )?;
                if let Some(stats) = updated {
                    self.running = stats;
                }
                tape.relu(bn)
            }
            UnitOrder::ConvReluBn => {
                let r = tape.relu(conv);
                let (bn, updated) = tape.batchnorm(
                    r, gamma, beta, &self.running, ctx.bn_eps, ctx.bn_momentum, ctx.mode,
                )?;
                if let Some(stats) = updated {
                    self.running = stats;
                }
                bn
            }
        };
        Ok(out)
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{prefix}.kernel"), &self.kernel);
        f(format!("{prefix}.gamma"), &self.gamma);
        f(format!("{prefix}.beta"), &self.beta);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.kernel"), &mut self.kernel);
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Double-branch convolution stage plus a two-conv residual stage with an
/// identity shortcut.
///
/// Both branches share hyperparameters (kernel, depth, strides) with
/// independent weights: the first conv halves the time axis (stride (1,2),
/// valid), the second preserves it (stride (1,1), same). The residual stage
/// is two stride-1 same-padding units over the branch sum `s`, and the block
/// output is `s + res(s)` with no activation after the addition.
#[derive(Debug, Clone)]
pub struct DbcrnBlock {
    pub branch_a: [ConvUnit; 2],
    pub branch_b: [ConvUnit; 2],
    pub res: [ConvUnit; 2],
}

impl DbcrnBlock {
    pub fn new(c_in: usize, depth: usize, kernel_len: usize, seed: u64, prefix: &str) -> Self {
        let branch = |tag: &str| {
            [
                ConvUnit::new(
                    c_in,
                    depth,
                    1,
                    kernel_len,
                    (1, 2),
                    Padding::Valid,
                    seed,
                    &format!("{prefix}.{tag}0"),
                ),
                ConvUnit::new(
                    depth,
                    depth,
                    1,
                    kernel_len,
                    (1, 1),
                    Padding::Same,
                    seed,
                    &format!("{prefix}.{tag}1"),
                ),
            ]
        };
        Self {
            branch_a: branch("a"),
            branch_b: branch("b"),
            res: [
                ConvUnit::new(
                    depth,
                    depth,
                    1,
                    kernel_len,
                    (1, 1),
                    Padding::Same,
                    seed,
                    &format!("{prefix}.r0"),
                ),
                ConvUnit::new(
                    depth,
                    depth,
                    1,
                    kernel_len,
                    (1, 1),
                    Padding::Same,
                    seed,
                    &format!("{prefix}.r1"),
                ),
            ],
        }
    }

    /// Returns (branch sum, block output).
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Var,
        ctx: &ForwardCtx,
        bound: &mut Vec<Var>,
    ) -> Result<(Var, Var)> {
        let a0 = self.branch_a[0].forward(tape, x, ctx, bound)?;
        let a1 = self.branch_a[1].forward(tape, a0, ctx, bound)?;
        let b0 = self.branch_b[0].forward(tape, x, ctx, bound)?;
        let b1 = self.branch_b[1].forward(tape, b0, ctx, bound)?;
        let s = tape.add(a1, b1)?;
        let r0 = self.res[0].forward(tape, s, ctx, bound)?;
        let r1 = self.res[1].forward(tape, r0, ctx, bound)?;
        let out = tape.add(s, r1)?;
        Ok((s, out))
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (tag, unit) in self.units() {
            unit.visit_params(&format!("{prefix}.{tag}"), f);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        let prefix = prefix.to_string();
        for (tag, unit) in self.units_mut() {
            unit.visit_params_mut(&format!("{prefix}.{tag}"), f);
        }
    }

    pub fn units(&self) -> impl Iterator<Item = (&'static str, &ConvUnit)> {
        [
            ("a0", &self.branch_a[0]),
            ("a1", &self.branch_a[1]),
            ("b0", &self.branch_b[0]),
            ("b1", &self.branch_b[1]),
            ("r0", &self.res[0]),
            ("r1", &self.res[1]),
        ]
        .into_iter()
    }

    pub fn units_mut(&mut self) -> impl Iterator<Item = (&'static str, &mut ConvUnit)> {
        let [a0, a1] = &mut self.branch_a;
        let [b0, b1] = &mut self.branch_b;
        let [r0, r1] = &mut self.res;
        [("a0", a0), ("a1", a1), ("b0", b0), ("b1", b1), ("r0", r0), ("r1", r1)].into_iter()
    }
}

/// How per-lead features are combined before the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// Collapse the lead axis with an (n_leads x 1) conv unit.
    AcrossLeads,
    /// Collapse the time axis with a (1 x final_w) conv unit.
    AcrossTime,
    /// No convolution; flatten everything into the classifier.
    Flatten,
}

/// Fusion head: an optional conv unit plus a flatten. The expected feature
/// extents are fixed at build time.
#[derive(Debug, Clone)]
pub struct FusionHead {
    pub kind: FusionKind,
    pub conv: Option<ConvUnit>,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl FusionHead {
    pub fn new(kind: FusionKind, channels: usize, h: usize, w: usize, seed: u64) -> Self {
        let conv = match kind {
            FusionKind::AcrossLeads => Some(ConvUnit::new(
                channels, channels, h, 1, (1, 1), Padding::Valid, seed, "head",
            )),
            FusionKind::AcrossTime => Some(ConvUnit::new(
                channels, channels, 1, w, (1, 1), Padding::Valid, seed, "head",
            )),
            FusionKind::Flatten => None,
        };
        Self { kind, conv, in_channels: channels, in_h: h, in_w: w }
    }

    /// Flattened feature count produced by this head.
    pub fn out_features(&self) -> usize {
        match self.kind {
            FusionKind::AcrossLeads => self.in_channels * self.in_w,
            FusionKind::AcrossTime => self.in_channels * self.in_h,
            FusionKind::Flatten => self.in_channels * self.in_h * self.in_w,
        }
    }

    /// Apply the head and flatten to [n, out_features()].
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        features: Var,
        ctx: &ForwardCtx,
        bound: &mut Vec<Var>,
    ) -> Result<Var> {
        let shape = tape.shape(features).to_vec();
        if shape.len() != 4
            || shape[1] != self.in_channels
            || shape[2] != self.in_h
            || shape[3] != self.in_w
        {
            return Err(Error::ShapeMismatch {
                expected: format!(
                    "[n, {}, {}, {}] features",
                    self.in_channels, self.in_h, self.in_w
                ),
                got: format!("{shape:?}"),
            });
        }
        let n = shape[0];
        let fused = match &mut self.conv {
            Some(unit) => unit.forward(tape, features, ctx, bound)?,
            None => features,
        };
        tape.reshape(fused, vec![n, self.out_features()])
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(String, &Tensor)) {
        if let Some(unit) = &self.conv {
            unit.visit_params("head", f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(unit) = &mut self.conv {
            unit.visit_params_mut("head", f);
        }
    }
}

/// Fully connected layer with bias.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(f_in: usize, f_out: usize, seed: u64, name: &str) -> Self {
        Self {
            weight: he_normal(
                vec![f_out, f_in],
                f_in,
                mix_name(seed, &format!("{name}.weight")),
            )
            .with_grad(),
            bias: Tensor::zeros(vec![f_out]).with_grad(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, bound: &mut Vec<Var>) -> Result<Var> {
        let w = tape.leaf(&self.weight);
        let b = tape.leaf(&self.bias);
        bound.push(w);
        bound.push(b);
        tape.dense(x, w, b)
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradcheck;
    use rand::Rng;

    fn ctx(mode: Mode) -> ForwardCtx {
        ForwardCtx {
            mode,
            dropout_seed: 0,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            unit_order: UnitOrder::ConvBnRelu,
        }
    }

    fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let numel = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn conv_unit_paper_block1_shape() {
        // [1,8,8,976] through a 1x50 stride-(1,2) valid unit -> [1,8,8,464].
        let mut unit = ConvUnit::new(8, 8, 1, 50, (1, 2), Padding::Valid, 7, "u");
        let mut tape = Tape::new();
        let x = tape.leaf(&rand_tensor(vec![1, 8, 8, 976], 1));
        let y = unit.forward(&mut tape, x, &ctx(Mode::Train), &mut Vec::new()).unwrap();
        assert_eq!(tape.shape(y), &[1, 8, 8, 464]);
        assert!(tape.value(y).iter().all(|&v| v >= 0.0), "relu output must be nonnegative");
    }

    #[test]
    fn conv_unit_zero_kernel_gives_zero_output() {
        let mut unit = ConvUnit::new(2, 3, 1, 5, (1, 1), Padding::Same, 7, "u");
        unit.kernel = Tensor::zeros(vec![3, 2, 1, 5]);
        let mut tape = Tape::new();
        let x = tape.leaf(&rand_tensor(vec![2, 2, 4, 10], 2));
        let y = unit.forward(&mut tape, x, &ctx(Mode::Train), &mut Vec::new()).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_unit_channel_mismatch() {
        let mut unit = ConvUnit::new(4, 3, 1, 5, (1, 1), Padding::Same, 7, "u");
        let mut tape = Tape::new();
        let x = tape.leaf(&rand_tensor(vec![1, 2, 4, 10], 2));
        assert!(matches!(
            unit.forward(&mut tape, x, &ctx(Mode::Train), &mut Vec::new()),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn dbcrn_identical_branches_double_the_output() {
        let mut block = DbcrnBlock::new(2, 4, 5, 7, "blk");
        block.branch_b = block.branch_a.clone();
        // Zero the residual stage output so the block reduces to the branch sum.
        block.res[1].kernel = Tensor::zeros(block.res[1].kernel.shape().to_vec());
        block.res[1].beta = Tensor::zeros(vec![4]);

        let mut tape = Tape::new();
        let x = tape.leaf(&rand_tensor(vec![1, 2, 3, 20], 3));
        let c = ctx(Mode::Train);
        let (s, out) = block.forward(&mut tape, x, &c, &mut Vec::new()).unwrap();

        // Branch sum vs a single branch: bit-exact doubling.
        let mut single = block.branch_a.clone();
        let mut tape2 = Tape::new();
        let x2 = tape2.leaf(&rand_tensor(vec![1, 2, 3, 20], 3));
        let s0 = single[0].forward(&mut tape2, x2, &c, &mut Vec::new()).unwrap();
        let s1 = single[1].forward(&mut tape2, s0, &c, &mut Vec::new()).unwrap();
        let doubled: Vec<f64> = tape2.value(s1).iter().map(|&v| 2.0 * v).collect();
        assert_eq!(tape.value(s), &doubled[..]);

        // res_conv_2 kernel and beta zeroed: block output equals the branch
        // sum bit-exactly (identity shortcut).
        assert_eq!(tape.value(out), tape.value(s));
    }

    #[test]
    fn dbcrn_block_shape_halves_time_and_keeps_leads() {
        let mut block = DbcrnBlock::new(8, 16, 50, 3, "blk");
        let mut tape = Tape::new();
        let x = tape.leaf(&rand_tensor(vec![1, 8, 8, 464], 4));
        let (_, out) = block.forward(&mut tape, x, &ctx(Mode::Train), &mut Vec::new()).unwrap();
        assert_eq!(tape.shape(out), &[1, 16, 8, 208]);
    }

    #[test]
    fn dbcrn_gradcheck() {
        let block = DbcrnBlock::new(2, 3, 5, 11, "blk");
        let x = rand_tensor(vec![2, 2, 2, 16], 5);
        let err = gradcheck(
            |tape, vars| {
                let c = ctx(Mode::Train);
                let mut block = block.clone();
                let (_, out) = block.forward(tape, vars[0], &c, &mut Vec::new())?;
                Ok(tape.sum(out))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "dbcrn gradcheck error {err}");
    }

    #[test]
    fn fusion_head_flatten_sizes() {
        let feats = rand_tensor(vec![1, 64, 8, 16], 9);
        for (kind, expect) in [
            (FusionKind::AcrossLeads, 1024),
            (FusionKind::AcrossTime, 512),
            (FusionKind::Flatten, 8192),
        ] {
            let mut head = FusionHead::new(kind, 64, 8, 16, 13);
            assert_eq!(head.out_features(), expect);
            let mut tape = Tape::new();
            let x = tape.leaf(&feats);
            let y = head.forward(&mut tape, x, &ctx(Mode::Eval), &mut Vec::new()).unwrap();
            assert_eq!(tape.shape(y), &[1, expect]);
        }

        // Wrong lead extent for the head's kernel.
        let mut head = FusionHead::new(FusionKind::AcrossLeads, 64, 8, 16, 13);
        let mut tape = Tape::new();
        let x = tape.leaf(&rand_tensor(vec![1, 64, 4, 16], 10));
        assert!(head.forward(&mut tape, x, &ctx(Mode::Eval), &mut Vec::new()).is_err());
    }

    #[test]
    fn he_init_statistics_and_determinism() {
        let a = he_normal(vec![64, 32, 1, 5], 32 * 5, 77);
        let b = he_normal(vec![64, 32, 1, 5], 32 * 5, 77);
        assert!(a.bits_eq(&b));

        // 10240 samples: empirical std within 10% of sqrt(2/fan_in).
        let std_target = (2.0_f64 / (32.0 * 5.0)).sqrt();
        let mean = a.data().iter().sum::<f64>() / a.numel() as f64;
        let var =
            a.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / a.numel() as f64;
        let std = var.sqrt();
        assert!((std - std_target).abs() / std_target < 0.1, "std {std} vs {std_target}");

        let unit = ConvUnit::new(3, 4, 1, 5, (1, 1), Padding::Same, 1, "u");
        assert!(unit.gamma.data().iter().all(|&g| g == 1.0));
        assert!(unit.beta.data().iter().all(|&b| b == 0.0));
    }
}
