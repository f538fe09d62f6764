//! Independent oracles shared by the integration suites. These deliberately
//! re-derive results through a different path than the library (bounds-checked
//! coordinate reads instead of a padded buffer, symbolic arithmetic instead of
//! tensor allocation) so they can catch implementation-path bugs.

use mbcrnet::tape::Padding;
use mbcrnet::tensor::Tensor;

/// Brute-force convolution: quadruple loop per output element with
/// bounds-checked reads standing in for zero padding.
pub fn conv2d_oracle(
    x: &Tensor,
    k: &Tensor,
    stride: (usize, usize),
    padding: Padding,
) -> Option<Tensor> {
    let (n, c_in, h_in, w_in) =
        (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, kc, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    if kc != c_in || stride.0 == 0 || stride.1 == 0 {
        return None;
    }
    let (sh, sw) = stride;

    let axis = |input: usize, kext: usize, s: usize| -> Option<(usize, usize)> {
        match padding {
            Padding::Valid => {
                if kext > input {
                    None
                } else {
                    Some((0, (input - kext) / s + 1))
                }
            }
            Padding::Same => {
                if kext <= 1 {
                    Some((0, (input - 1) / s + 1))
                } else if s != 1 {
                    None
                } else {
                    Some(((kext - 1) / 2, input))
                }
            }
        }
    };
    let (ph0, h_out) = axis(h_in, kh, sh)?;
    let (pw0, w_out) = axis(w_in, kw, sw)?;

    let mut out = vec![0.0; n * c_out * h_out * w_out];
    for ni in 0..n {
        for co in 0..c_out {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for khi in 0..kh {
                            for kwi in 0..kw {
                                let ih = (oh * sh + khi) as isize - ph0 as isize;
                                let iw = (ow * sw + kwi) as isize - pw0 as isize;
                                if ih < 0 || iw < 0 || ih >= h_in as isize || iw >= w_in as isize
                                {
                                    continue;
                                }
                                let xi = ((ni * c_in + ci) * h_in + ih as usize) * w_in
                                    + iw as usize;
                                let ki = ((co * c_in + ci) * kh + khi) * kw + kwi;
                                acc += x.data()[xi] * k.data()[ki];
                            }
                        }
                    }
                    out[((ni * c_out + co) * h_out + oh) * w_out + ow] = acc;
                }
            }
        }
    }
    Some(Tensor::new(vec![n, c_out, h_out, w_out], out).unwrap())
}

/// Parameter count for the full-scale configuration, derived purely from the
/// layer-size table: kernels carry depth_out x depth_in x kernel entries,
/// each conv unit adds 2C batchnorm scalars, dense layers add weights+bias.
pub fn paper_param_count_walk(variant: &str) -> usize {
    let k = 50usize;
    let bn = |c: usize| 2 * c;
    let conv = |c_out: usize, c_in: usize, kh: usize, kw: usize| c_out * c_in * kh * kw;

    let mut total = conv(8, 1, 1, k) + bn(8); // conv1
    let mut c_in = 8;
    for depth in [8usize, 16, 32, 64] {
        // branch a: entry + second; branch b same; residual: two convs
        total += conv(depth, c_in, 1, k) + bn(depth) + conv(depth, depth, 1, k) + bn(depth);
        total += conv(depth, c_in, 1, k) + bn(depth) + conv(depth, depth, 1, k) + bn(depth);
        total += 2 * (conv(depth, depth, 1, k) + bn(depth));
        c_in = depth;
    }
    let (head, features) = match variant {
        "T" => (conv(64, 64, 8, 1) + bn(64), 64 * 16),
        "L" => (conv(64, 64, 1, 16) + bn(64), 64 * 8),
        "F" => (0, 64 * 8 * 16),
        _ => panic!("unknown variant"),
    };
    total += head;
    total += features * 1000 + 1000; // fc1
    total += 1000 * 2 + 2; // fc2
    total
}
