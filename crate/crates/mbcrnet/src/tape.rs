//! Wengert-list reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! append nodes in topological order; [`Tape::backward`] replays them in
//! reverse, summing gradients into shared inputs. All reductions run in a
//! fixed element order, so identical inputs give bit-identical outputs and
//! gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Zero-padding policy for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output extent is floor((in - k)/stride) + 1.
    Valid,
    /// Output extent equals input extent along any axis with kernel > 1;
    /// such axes require stride 1. Padding splits floor(p/2) before,
    /// ceil(p/2) after.
    Same,
}

/// Forward-pass mode. Train uses batch statistics and live dropout;
/// eval uses running statistics and identity dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean/variance for batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn fresh(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct ConvGeom {
    n: usize,
    c_in: usize,
    h_in: usize,
    w_in: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph0: usize,
    pw0: usize,
    h_pad: usize,
    w_pad: usize,
    h_out: usize,
    w_out: usize,
}

struct BnRecord {
    x: Var,
    gamma: Var,
    beta: Var,
    channels: usize,
    // Statistics the forward actually used (batch in train, running in eval).
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

struct XentRecord {
    logits: Var,
    probs: Vec<f64>,
    labels: Vec<usize>,
}

enum Op {
    Leaf,
    Relu { x: Var },
    Add { a: Var, b: Var },
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    BatchNorm(Box<BnRecord>),
    Dense { x: Var, w: Var, b: Var },
    Dropout { x: Var, mask: Vec<f64> },
    Reshape { x: Var },
    SoftmaxXent(Box<XentRecord>),
    Sum { x: Var },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

/// Recorded forward pass plus, after [`Tape::backward`], its gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register an input value. Its gradient is computed iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("node invariant")
    }

    /// Gradient of the last backward pass w.r.t. `v`, if one was computed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { shape, data, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── Elementwise and shape ops ───────────────────────────────────────

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x);
        self.push(shape, data, needs, Op::Relu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.nodes[a.0].shape),
                got: format!("{:?}", self.nodes[b.0].shape),
            });
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, needs, Op::Add { a, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} elements", self.nodes[x.0].data.len()),
                got: format!("shape {shape:?}"),
            });
        }
        let data = self.nodes[x.0].data.clone();
        let needs = self.needs(x);
        Ok(self.push(shape, data, needs, Op::Reshape { x }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.nodes[x.0].data.iter().sum();
        let needs = self.needs(x);
        self.push(vec![1], vec![total], needs, Op::Sum { x })
    }

    // ── Convolution ─────────────────────────────────────────────────────

    /// 2-D cross-correlation of an [n, c_in, h, w] input with an
    /// [c_out, c_in, kh, kw] kernel. No bias term.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var> {
        let geom = conv_geometry(
            &self.nodes[x.0].shape,
            &self.nodes[k.0].shape,
            stride,
            padding,
        )?;
        let xp = pad_input(&self.nodes[x.0].data, &geom);
        let kd = &self.nodes[k.0].data;

        let ConvGeom { n, c_in, c_out, kh, kw, sh, sw, h_pad, w_pad, h_out, w_out, .. } = geom;
        let mut out = vec![0.0; n * c_out * h_out * w_out];
        for ni in 0..n {
            for co in 0..c_out {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let mut acc = 0.0;
                        for ci in 0..c_in {
                            let xbase = ((ni * c_in + ci) * h_pad + oh * sh) * w_pad + ow * sw;
                            let kbase = ((co * c_in + ci) * kh) * kw;
                            for khi in 0..kh {
                                let xrow = &xp[xbase + khi * w_pad..xbase + khi * w_pad + kw];
                                let krow = &kd[kbase + khi * kw..kbase + khi * kw + kw];
                                acc += xrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                        out[((ni * c_out + co) * h_out + oh) * w_out + ow] = acc;
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(k);
        Ok(self.push(vec![n, c_out, h_out, w_out], out, needs, Op::Conv2d { x, k, geom }))
    }

    // ── Batch normalization ─────────────────────────────────────────────

    /// Normalize an [n, c, h, w] input per channel over (n, h, w).
    ///
    /// Train mode uses batch statistics (population variance) and returns the
    /// exponentially updated running stats; eval mode uses `running` as-is.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &BnStats,
        eps: f64,
        momentum: f64,
        mode: Mode,
    ) -> Result<(Var, Option<BnStats>)> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                expected: "rank-4 input".into(),
                got: format!("rank {}", shape.len()),
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if self.nodes[gamma.0].data.len() != c || self.nodes[beta.0].data.len() != c {
            return Err(Error::ShapeMismatch {
                expected: format!("gamma/beta of length {c}"),
                got: format!(
                    "{}/{}",
                    self.nodes[gamma.0].data.len(),
                    self.nodes[beta.0].data.len()
                ),
            });
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArg("batchnorm eps must be positive".into()));
        }
        let m = n * h * w;
        if m == 0 {
            return Err(Error::InvalidArg("empty normalization axis".into()));
        }

        let plane = h * w;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for ni in 0..n {
                        let base = (ni * c + ci) * plane;
                        s += self.nodes[x.0].data[base..base + plane].iter().sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut sq = 0.0;
                    for ni in 0..n {
                        let base = (ni * c + ci) * plane;
                        sq += self.nodes[x.0].data[base..base + plane]
                            .iter()
                            .map(|&v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ci] = mu;
                    var[ci] = sq / m as f64;
                }
                (mean, var)
            }
            Mode::Eval => (running.mean.clone(), running.var.clone()),
        };

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let gd = &self.nodes[gamma.0].data;
        let bd = &self.nodes[beta.0].data;
        let mut out = vec![0.0; self.nodes[x.0].data.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                for i in 0..plane {
                    let xv = self.nodes[x.0].data[base + i];
                    out[base + i] = gd[ci] * (xv - mean[ci]) * inv_std[ci] + bd[ci];
                }
            }
        }

        let updated = match mode {
            Mode::Train => Some(BnStats {
                mean: running
                    .mean
                    .iter()
                    .zip(mean.iter())
                    .map(|(&r, &b)| (1.0 - momentum) * r + momentum * b)
                    .collect(),
                var: running
                    .var
                    .iter()
                    .zip(var.iter())
                    .map(|(&r, &b)| (1.0 - momentum) * r + momentum * b)
                    .collect(),
            }),
            Mode::Eval => None,
        };

        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let rec = BnRecord {
            x,
            gamma,
            beta,
            channels: c,
            mean,
            inv_std,
            train: mode == Mode::Train,
        };
        let var_out = self.push(shape, out, needs, Op::BatchNorm(Box::new(rec)));
        Ok((var_out, updated))
    }

    // ── Dense ───────────────────────────────────────────────────────────

    /// Affine map of [n, f_in] by weight [f_out, f_in] plus bias [f_out].
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = &self.nodes[x.0].shape;
        let ws = &self.nodes[w.0].shape;
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::ShapeMismatch {
                expected: format!("input [n, {}] for weight {ws:?}", ws.get(1).unwrap_or(&0)),
                got: format!("{xs:?}"),
            });
        }
        let (n, f_in, f_out) = (xs[0], xs[1], ws[0]);
        if self.nodes[b.0].data.len() != f_out {
            return Err(Error::ShapeMismatch {
                expected: format!("bias of length {f_out}"),
                got: format!("{}", self.nodes[b.0].data.len()),
            });
        }
        let xd = &self.nodes[x.0].data;
        let wd = &self.nodes[w.0].data;
        let bd = &self.nodes[b.0].data;
        let mut out = vec![0.0; n * f_out];
        for ni in 0..n {
            let xrow = &xd[ni * f_in..(ni + 1) * f_in];
            for o in 0..f_out {
                let wrow = &wd[o * f_in..(o + 1) * f_in];
                let dot: f64 = xrow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                out[ni * f_out + o] = dot + bd[o];
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![n, f_out], out, needs, Op::Dense { x, w, b }))
    }

    // ── Dropout ─────────────────────────────────────────────────────────

    /// Inverted dropout: zero each element with probability `rate` and scale
    /// survivors by 1/(1-rate). Identity in eval mode or at rate 0. The mask
    /// is a pure function of `seed`.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArg(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.nodes[x.0].data.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x);
        Ok(self.push(shape, data, needs, Op::Dropout { x, mask }))
    }

    // ── Softmax cross-entropy ───────────────────────────────────────────

    /// Numerically stable softmax over rows of [n, k] logits, fused with the
    /// mean negative log-likelihood of `labels`. Returns the scalar loss and
    /// the probabilities as a plain tensor.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor)> {
        let shape = self.nodes[logits.0].shape.clone();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("[{}, k] logits", labels.len()),
                got: format!("{shape:?}"),
            });
        }
        let (n, k) = (shape[0], shape[1]);
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::InvalidArg(format!(
                    "label {l} out of range [0, {k}) at row {i}"
                )));
            }
        }
        let ld = &self.nodes[logits.0].data;
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for ni in 0..n {
            let row = &ld[ni * k..(ni + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for ki in 0..k {
                let e = (row[ki] - max).exp();
                probs[ni * k + ki] = e;
                denom += e;
            }
            for ki in 0..k {
                probs[ni * k + ki] /= denom;
            }
            loss -= row[labels[ni]] - max - denom.ln();
        }
        loss /= n as f64;

        let probs_t = Tensor::new(vec![n, k], probs.clone())?;
        let needs = self.needs(logits);
        let rec = XentRecord { logits, probs, labels: labels.to_vec() };
        let v = self.push(vec![1], vec![loss], needs, Op::SoftmaxXent(Box::new(rec)));
        Ok((v, probs_t))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients sum at fan-out; every
    /// `requires_grad` leaf ends up with a gradient (zero if disconnected).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::InvalidArg(format!(
                "backward requires a scalar loss, got {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        // Disconnected leaves still report a (zero) gradient.
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.data.len()]);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let acc = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].data.len()]);
            f(slot);
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Relu { x } => {
                if self.needs(*x) {
                    let xd = &self.nodes[x.0].data;
                    acc(grads, *x, &mut |dst| {
                        for i in 0..dst.len() {
                            // Subgradient at 0 is 0.
                            if xd[i] > 0.0 {
                                dst[i] += g[i];
                            }
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.needs(*v) {
                        acc(grads, *v, &mut |dst| {
                            for i in 0..dst.len() {
                                dst[i] += g[i];
                            }
                        });
                    }
                }
            }
            Op::Reshape { x } | Op::Dropout { x, .. } if !self.needs(*x) => {}
            Op::Reshape { x } => {
                acc(grads, *x, &mut |dst| {
                    for i in 0..dst.len() {
                        dst[i] += g[i];
                    }
                });
            }
            Op::Dropout { x, mask } => {
                acc(grads, *x, &mut |dst| {
                    for i in 0..dst.len() {
                        dst[i] += g[i] * mask[i];
                    }
                });
            }
            Op::Sum { x } => {
                if self.needs(*x) {
                    acc(grads, *x, &mut |dst| {
                        for d in dst.iter_mut() {
                            *d += g[0];
                        }
                    });
                }
            }
            Op::Conv2d { x, k, geom } => self.conv2d_backward(*x, *k, geom, g, grads),
            Op::BatchNorm(rec) => self.batchnorm_backward(rec, g, grads),
            Op::Dense { x, w, b } => self.dense_backward(*x, *w, *b, g, grads),
            Op::SoftmaxXent(rec) => {
                if self.needs(rec.logits) {
                    let n = rec.labels.len();
                    let k = rec.probs.len() / n;
                    let slot = grads[rec.logits.0]
                        .get_or_insert_with(|| vec![0.0; self.nodes[rec.logits.0].data.len()]);
                    for ni in 0..n {
                        for ki in 0..k {
                            let onehot = if rec.labels[ni] == ki { 1.0 } else { 0.0 };
                            slot[ni * k + ki] +=
                                g[0] * (rec.probs[ni * k + ki] - onehot) / n as f64;
                        }
                    }
                }
            }
        }
    }

    fn conv2d_backward(
        &self,
        x: Var,
        k: Var,
        geom: &ConvGeom,
        g: &[f64],
        grads: &mut Vec<Option<Vec<f64>>>,
    ) {
        let ConvGeom {
            n, c_in, c_out, kh, kw, sh, sw, ph0, pw0, h_pad, w_pad, h_out, w_out, ..
        } = *geom;
        let need_x = self.needs(x);
        let need_k = self.needs(k);
        if !need_x && !need_k {
            return;
        }
        let xp = pad_input(&self.nodes[x.0].data, geom);
        let kd = &self.nodes[k.0].data;
        let mut dxp = if need_x { vec![0.0; n * c_in * h_pad * w_pad] } else { Vec::new() };
        let mut dk = if need_k { vec![0.0; kd.len()] } else { Vec::new() };

        for ni in 0..n {
            for co in 0..c_out {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let gv = g[((ni * c_out + co) * h_out + oh) * w_out + ow];
                        if gv == 0.0 {
                            continue;
                        }
                        for ci in 0..c_in {
                            let xbase = ((ni * c_in + ci) * h_pad + oh * sh) * w_pad + ow * sw;
                            let kbase = ((co * c_in + ci) * kh) * kw;
                            for khi in 0..kh {
                                let xoff = xbase + khi * w_pad;
                                let koff = kbase + khi * kw;
                                if need_k {
                                    for kwi in 0..kw {
                                        dk[koff + kwi] += gv * xp[xoff + kwi];
                                    }
                                }
                                if need_x {
                                    for kwi in 0..kw {
                                        dxp[xoff + kwi] += gv * kd[koff + kwi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        if need_k {
            let slot = grads[k.0].get_or_insert_with(|| vec![0.0; kd.len()]);
            for i in 0..dk.len() {
                slot[i] += dk[i];
            }
        }
        if need_x {
            let (h_in, w_in) = (geom.h_in, geom.w_in);
            let slot = grads[x.0].get_or_insert_with(|| vec![0.0; self.nodes[x.0].data.len()]);
            for ni in 0..n {
                for ci in 0..c_in {
                    for hi in 0..h_in {
                        let src = ((ni * c_in + ci) * h_pad + hi + ph0) * w_pad + pw0;
                        let dst = ((ni * c_in + ci) * h_in + hi) * w_in;
                        for wi in 0..w_in {
                            slot[dst + wi] += dxp[src + wi];
                        }
                    }
                }
            }
        }
    }

    fn batchnorm_backward(&self, rec: &BnRecord, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let shape = &self.nodes[rec.x.0].shape;
        let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        let m = (n * plane) as f64;
        let xd = &self.nodes[rec.x.0].data;
        let gd = &self.nodes[rec.gamma.0].data;
        let need_x = self.needs(rec.x);
        let need_gamma = self.needs(rec.gamma);
        let need_beta = self.needs(rec.beta);
        if !need_x && !need_gamma && !need_beta {
            return;
        }

        // Per-channel sums of dy and dy*xhat in one fixed-order sweep.
        let mut s1 = vec![0.0; c];
        let mut s2 = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                for i in 0..plane {
                    let xhat = (xd[base + i] - rec.mean[ci]) * rec.inv_std[ci];
                    s1[ci] += g[base + i];
                    s2[ci] += g[base + i] * xhat;
                }
            }
        }

        if need_gamma {
            let slot =
                grads[rec.gamma.0].get_or_insert_with(|| vec![0.0; rec.channels]);
            for ci in 0..c {
                slot[ci] += s2[ci];
            }
        }
        if need_beta {
            let slot = grads[rec.beta.0].get_or_insert_with(|| vec![0.0; rec.channels]);
            for ci in 0..c {
                slot[ci] += s1[ci];
            }
        }
        if need_x {
            let slot = grads[rec.x.0].get_or_insert_with(|| vec![0.0; xd.len()]);
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    let gi = gd[ci] * rec.inv_std[ci];
                    for i in 0..plane {
                        let dy = g[base + i];
                        if rec.train {
                            let xhat = (xd[base + i] - rec.mean[ci]) * rec.inv_std[ci];
                            slot[base + i] += gi * (dy - s1[ci] / m - xhat * s2[ci] / m);
                        } else {
                            slot[base + i] += gi * dy;
                        }
                    }
                }
            }
        }
    }

    fn dense_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        g: &[f64],
        grads: &mut Vec<Option<Vec<f64>>>,
    ) {
        let (n, f_in) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
        let f_out = self.nodes[w.0].shape[0];
        let xd = &self.nodes[x.0].data;
        let wd = &self.nodes[w.0].data;

        if self.needs(x) {
            let slot = grads[x.0].get_or_insert_with(|| vec![0.0; xd.len()]);
            for ni in 0..n {
                for o in 0..f_out {
                    let gv = g[ni * f_out + o];
                    let wrow = &wd[o * f_in..(o + 1) * f_in];
                    let drow = &mut slot[ni * f_in..(ni + 1) * f_in];
                    for i in 0..f_in {
                        drow[i] += gv * wrow[i];
                    }
                }
            }
        }
        if self.needs(w) {
            let slot = grads[w.0].get_or_insert_with(|| vec![0.0; wd.len()]);
            for ni in 0..n {
                let xrow = &xd[ni * f_in..(ni + 1) * f_in];
                for o in 0..f_out {
                    let gv = g[ni * f_out + o];
                    let drow = &mut slot[o * f_in..(o + 1) * f_in];
                    for i in 0..f_in {
                        drow[i] += gv * xrow[i];
                    }
                }
            }
        }
        if self.needs(b) {
            let slot = grads[b.0].get_or_insert_with(|| vec![0.0; f_out]);
            for ni in 0..n {
                for o in 0..f_out {
                    slot[o] += g[ni * f_out + o];
                }
            }
        }
    }
}

/// Row-wise stable softmax of [n, k] logits, outside any tape.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::ShapeMismatch {
            expected: "rank-2 logits".into(),
            got: format!("rank {}", logits.rank()),
        });
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut out = vec![0.0; n * k];
    for ni in 0..n {
        let row = &logits.data()[ni * k..(ni + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for ki in 0..k {
            let e = (row[ki] - max).exp();
            out[ni * k + ki] = e;
            denom += e;
        }
        for ki in 0..k {
            out[ni * k + ki] /= denom;
        }
    }
    Tensor::new(vec![n, k], out)
}

fn conv_geometry(
    xs: &[usize],
    ks: &[usize],
    stride: (usize, usize),
    padding: Padding,
) -> Result<ConvGeom> {
    if xs.len() != 4 || ks.len() != 4 {
        return Err(Error::ShapeMismatch {
            expected: "rank-4 input and kernel".into(),
            got: format!("input rank {}, kernel rank {}", xs.len(), ks.len()),
        });
    }
    let (n, c_in, h_in, w_in) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if kc != c_in {
        return Err(Error::ChannelMismatch { input: c_in, kernel: kc });
    }
    let (sh, sw) = stride;
    if sh == 0 || sw == 0 {
        return Err(Error::InvalidArg("stride components must be >= 1".into()));
    }

    let axis = |input: usize, k: usize, s: usize, name: &'static str| -> Result<(usize, usize, usize)> {
        // Returns (pad_before, padded_extent, out_extent).
        match padding {
            Padding::Valid => {
                if k > input {
                    return Err(Error::KernelExceedsInput { kernel: k, input, axis: name });
                }
                Ok((0, input, (input - k) / s + 1))
            }
            Padding::Same => {
                if k <= 1 {
                    return Ok((0, input, (input - 1) / s + 1));
                }
                if s != 1 {
                    return Err(Error::InvalidArg(format!(
                        "same padding requires stride 1 along padded axis {name}"
                    )));
                }
                let p = k - 1;
                Ok((p / 2, input + p, input))
            }
        }
    };
    let (ph0, h_pad, h_out) = axis(h_in, kh, sh, "h")?;
    let (pw0, w_pad, w_out) = axis(w_in, kw, sw, "w")?;

    Ok(ConvGeom {
        n, c_in, h_in, w_in, c_out, kh, kw, sh, sw, ph0, pw0, h_pad, w_pad, h_out, w_out,
    })
}

fn pad_input(xd: &[f64], geom: &ConvGeom) -> Vec<f64> {
    let ConvGeom { n, c_in, h_in, w_in, ph0, pw0, h_pad, w_pad, .. } = *geom;
    if h_in == h_pad && w_in == w_pad {
        return xd.to_vec();
    }
    let mut out = vec![0.0; n * c_in * h_pad * w_pad];
    for ni in 0..n {
        for ci in 0..c_in {
            for hi in 0..h_in {
                let src = ((ni * c_in + ci) * h_in + hi) * w_in;
                let dst = ((ni * c_in + ci) * h_pad + hi + ph0) * w_pad + pw0;
                out[dst..dst + w_in].copy_from_slice(&xd[src..src + w_in]);
            }
        }
    }
    out
}
