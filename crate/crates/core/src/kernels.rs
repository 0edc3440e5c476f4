//! Inner loops for 3x3x3 volumetric convolution and its adjoints.
//!
//! Layout is channels-first row-major: `[C, D, H, W]` with x fastest.
//! All kernels accumulate (`+=`) into their output buffer; callers zero it.
//! Weight entries equal to zero are skipped, which roughly halves the work
//! for the positive-weight convolutions used during relevance propagation.

pub const K: usize = 3;

/// Output extents and low-side padding for "same" zero padding:
/// `out = ceil(n / stride)`, total pad `(out-1)*stride + 3 - n`, split
/// low = floor(total/2), high = rest.
pub fn same_geometry(in_spatial: [usize; 3], stride: usize) -> ([usize; 3], [usize; 3]) {
    let mut out = [0usize; 3];
    let mut pad = [0usize; 3];
    for i in 0..3 {
        let n = in_spatial[i];
        let o = n.div_ceil(stride);
        let total = ((o - 1) * stride + K).saturating_sub(n);
        out[i] = o;
        pad[i] = total / 2;
    }
    (out, pad)
}

/// Valid output positions `o` (inclusive range) with `0 <= o*s + k - pad < n_in`.
/// Empty ranges are returned as `(1, 0)`.
#[inline]
fn valid_range(n_in: usize, n_out: usize, s: usize, pad: usize, k: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k + s - 1) / s };
    let top = n_in - 1 + pad;
    if top < k {
        return (1, 0);
    }
    let hi = ((top - k) / s).min(n_out - 1);
    if lo > hi {
        (1, 0)
    } else {
        (lo, hi)
    }
}

/// All three width-taps of one kernel row applied in a single pass over an
/// output row; stride-1 "same" padding only (pad_w == 1).
#[inline]
fn row_taps_fwd(y: &mut [f64], x: &[f64], w0: f64, w1: f64, w2: f64) {
    let n = y.len();
    if n == 1 {
        y[0] += w1 * x[0];
        return;
    }
    y[0] += w1 * x[0] + w2 * x[1];
    for i in 1..n - 1 {
        y[i] += w0 * x[i - 1] + w1 * x[i] + w2 * x[i + 1];
    }
    y[n - 1] += w0 * x[n - 2] + w1 * x[n - 1];
}

/// y[o, p] += sum_{c, q} x[c, s*p + q - pad] * w[o, c, q]
pub fn conv3d_fwd(
    x: &[f64],
    xd: [usize; 4],
    w: &[f64],
    stride: usize,
    pad: [usize; 3],
    out: &mut [f64],
    od: [usize; 4],
) {
    let [ci, d_in, h_in, w_in] = xd;
    let [co, d_out, h_out, w_out] = od;
    let ch_in = d_in * h_in * w_in;
    let ch_out = d_out * h_out * w_out;
    for o in 0..co {
        let y_ch = &mut out[o * ch_out..][..ch_out];
        for c in 0..ci {
            let x_ch = &x[c * ch_in..][..ch_in];
            let w_base = (o * ci + c) * K * K * K;
            for kd in 0..K {
                let (dlo, dhi) = valid_range(d_in, d_out, stride, pad[0], kd);
                if dlo > dhi {
                    continue;
                }
                for kh in 0..K {
                    let (hlo, hhi) = valid_range(h_in, h_out, stride, pad[1], kh);
                    if hlo > hhi {
                        continue;
                    }
                    if stride == 1 {
                        let w0 = w[w_base + (kd * K + kh) * K];
                        let w1 = w[w_base + (kd * K + kh) * K + 1];
                        let w2 = w[w_base + (kd * K + kh) * K + 2];
                        if w0 == 0.0 && w1 == 0.0 && w2 == 0.0 {
                            continue;
                        }
                        for od_ in dlo..=dhi {
                            let id = od_ + kd - pad[0];
                            for oh in hlo..=hhi {
                                let ih = oh + kh - pad[1];
                                let y_row = &mut y_ch[(od_ * h_out + oh) * w_out..][..w_out];
                                let x_row = &x_ch[(id * h_in + ih) * w_in..][..w_in];
                                row_taps_fwd(y_row, x_row, w0, w1, w2);
                            }
                        }
                        continue;
                    }
                    for kw in 0..K {
                        let wv = w[w_base + (kd * K + kh) * K + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        let (wlo, whi) = valid_range(w_in, w_out, stride, pad[2], kw);
                        if wlo > whi {
                            continue;
                        }
                        for od_ in dlo..=dhi {
                            let id = od_ * stride + kd - pad[0];
                            for oh in hlo..=hhi {
                                let ih = oh * stride + kh - pad[1];
                                let y_row = &mut y_ch[(od_ * h_out + oh) * w_out..][..w_out];
                                let x_row = &x_ch[(id * h_in + ih) * w_in..][..w_in];
                                for ow in wlo..=whi {
                                    y_row[ow] += wv * x_row[ow * stride + kw - pad[2]];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// dx[c, r] += sum_{o, p, q : s*p + q - pad = r} g[o, p] * w[o, c, q]
///
/// Adjoint of `conv3d_fwd` in its data argument; also the forward scatter of
/// the transposed convolution.
pub fn conv3d_input_grad(
    g: &[f64],
    gd: [usize; 4],
    w: &[f64],
    stride: usize,
    pad: [usize; 3],
    dx: &mut [f64],
    xd: [usize; 4],
) {
    let [ci, d_in, h_in, w_in] = xd;
    let [co, d_out, h_out, w_out] = gd;
    let ch_in = d_in * h_in * w_in;
    let ch_out = d_out * h_out * w_out;
    for o in 0..co {
        let g_ch = &g[o * ch_out..][..ch_out];
        for c in 0..ci {
            let dx_ch = &mut dx[c * ch_in..][..ch_in];
            let w_base = (o * ci + c) * K * K * K;
            for kd in 0..K {
                let (dlo, dhi) = valid_range(d_in, d_out, stride, pad[0], kd);
                if dlo > dhi {
                    continue;
                }
                for kh in 0..K {
                    let (hlo, hhi) = valid_range(h_in, h_out, stride, pad[1], kh);
                    if hlo > hhi {
                        continue;
                    }
                    if stride == 1 {
                        // dx[i] += w0*g[i+1] + w1*g[i] + w2*g[i-1]: the
                        // width-reversed tap pattern of the forward pass.
                        let w0 = w[w_base + (kd * K + kh) * K];
                        let w1 = w[w_base + (kd * K + kh) * K + 1];
                        let w2 = w[w_base + (kd * K + kh) * K + 2];
                        if w0 == 0.0 && w1 == 0.0 && w2 == 0.0 {
                            continue;
                        }
                        for od_ in dlo..=dhi {
                            let id = od_ + kd - pad[0];
                            for oh in hlo..=hhi {
                                let ih = oh + kh - pad[1];
                                let g_row = &g_ch[(od_ * h_out + oh) * w_out..][..w_out];
                                let dx_row = &mut dx_ch[(id * h_in + ih) * w_in..][..w_in];
                                row_taps_fwd(dx_row, g_row, w2, w1, w0);
                            }
                        }
                        continue;
                    }
                    for kw in 0..K {
                        let wv = w[w_base + (kd * K + kh) * K + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        let (wlo, whi) = valid_range(w_in, w_out, stride, pad[2], kw);
                        if wlo > whi {
                            continue;
                        }
                        for od_ in dlo..=dhi {
                            let id = od_ * stride + kd - pad[0];
                            for oh in hlo..=hhi {
                                let ih = oh * stride + kh - pad[1];
                                let g_row = &g_ch[(od_ * h_out + oh) * w_out..][..w_out];
                                let dx_row = &mut dx_ch[(id * h_in + ih) * w_in..][..w_in];
                                for ow in wlo..=whi {
                                    dx_row[ow * stride + kw - pad[2]] += wv * g_row[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// dw[o, c, q] += sum_p g[o, p] * x[c, s*p + q - pad]
pub fn conv3d_weight_grad(
    g: &[f64],
    gd: [usize; 4],
    x: &[f64],
    xd: [usize; 4],
    stride: usize,
    pad: [usize; 3],
    dw: &mut [f64],
) {
    let [ci, d_in, h_in, w_in] = xd;
    let [co, d_out, h_out, w_out] = gd;
    let ch_in = d_in * h_in * w_in;
    let ch_out = d_out * h_out * w_out;
    for o in 0..co {
        let g_ch = &g[o * ch_out..][..ch_out];
        for c in 0..ci {
            let x_ch = &x[c * ch_in..][..ch_in];
            let w_base = (o * ci + c) * K * K * K;
            for kd in 0..K {
                let (dlo, dhi) = valid_range(d_in, d_out, stride, pad[0], kd);
                if dlo > dhi {
                    continue;
                }
                for kh in 0..K {
                    let (hlo, hhi) = valid_range(h_in, h_out, stride, pad[1], kh);
                    if hlo > hhi {
                        continue;
                    }
                    if stride == 1 {
                        // one pass per row accumulating all three width taps
                        let mut s0 = 0.0;
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for od_ in dlo..=dhi {
                            let id = od_ + kd - pad[0];
                            for oh in hlo..=hhi {
                                let ih = oh + kh - pad[1];
                                let g_row = &g_ch[(od_ * h_out + oh) * w_out..][..w_out];
                                let x_row = &x_ch[(id * h_in + ih) * w_in..][..w_in];
                                let n = w_out;
                                s1 += g_row[0] * x_row[0];
                                if n > 1 {
                                    s2 += g_row[0] * x_row[1];
                                    for ow in 1..n - 1 {
                                        let gv = g_row[ow];
                                        s0 += gv * x_row[ow - 1];
                                        s1 += gv * x_row[ow];
                                        s2 += gv * x_row[ow + 1];
                                    }
                                    s0 += g_row[n - 1] * x_row[n - 2];
                                    s1 += g_row[n - 1] * x_row[n - 1];
                                }
                            }
                        }
                        dw[w_base + (kd * K + kh) * K] += s0;
                        dw[w_base + (kd * K + kh) * K + 1] += s1;
                        dw[w_base + (kd * K + kh) * K + 2] += s2;
                        continue;
                    }
                    for kw in 0..K {
                        let (wlo, whi) = valid_range(w_in, w_out, stride, pad[2], kw);
                        if wlo > whi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for od_ in dlo..=dhi {
                            let id = od_ * stride + kd - pad[0];
                            for oh in hlo..=hhi {
                                let ih = oh * stride + kh - pad[1];
                                let g_row = &g_ch[(od_ * h_out + oh) * w_out..][..w_out];
                                let x_row = &x_ch[(id * h_in + ih) * w_in..][..w_in];
                                for ow in wlo..=whi {
                                    acc += g_row[ow] * x_row[ow * stride + kw - pad[2]];
                                }
                            }
                        }
                        dw[w_base + (kd * K + kh) * K + kw] += acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference conv written as the direct five-fold sum.
    fn conv_naive(
        x: &[f64],
        xd: [usize; 4],
        w: &[f64],
        stride: usize,
        pad: [usize; 3],
        od: [usize; 4],
    ) -> Vec<f64> {
        let [ci, d_in, h_in, w_in] = xd;
        let [co, d_out, h_out, w_out] = od;
        let mut out = vec![0.0; co * d_out * h_out * w_out];
        for o in 0..co {
            for dd in 0..d_out {
                for hh in 0..h_out {
                    for ww in 0..w_out {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for kd in 0..K {
                                for kh in 0..K {
                                    for kw in 0..K {
                                        let id = (dd * stride + kd) as isize - pad[0] as isize;
                                        let ih = (hh * stride + kh) as isize - pad[1] as isize;
                                        let iw = (ww * stride + kw) as isize - pad[2] as isize;
                                        if id < 0
                                            || ih < 0
                                            || iw < 0
                                            || id >= d_in as isize
                                            || ih >= h_in as isize
                                            || iw >= w_in as isize
                                        {
                                            continue;
                                        }
                                        let xi = ((c * d_in + id as usize) * h_in + ih as usize)
                                            * w_in
                                            + iw as usize;
                                        let wi = ((o * ci + c) * K + kd) * K * K + kh * K + kw;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[((o * d_out + dd) * h_out + hh) * w_out + ww] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s % 2000) as f64 / 1000.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn fwd_matches_naive_both_strides() {
        for &stride in &[1usize, 2] {
            for &(d, h, w) in &[(4usize, 5usize, 6usize), (3, 3, 3), (1, 7, 2)] {
                let (ci, co) = (2usize, 3usize);
                let xd = [ci, d, h, w];
                let x = pseudo_random(ci * d * h * w, 7);
                let wt = pseudo_random(co * ci * 27, 13);
                let (out_sp, pad) = same_geometry([d, h, w], stride);
                let od = [co, out_sp[0], out_sp[1], out_sp[2]];
                let mut fast = vec![0.0; co * out_sp.iter().product::<usize>()];
                conv3d_fwd(&x, xd, &wt, stride, pad, &mut fast, od);
                let slow = conv_naive(&x, xd, &wt, stride, pad, od);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12, "stride {stride} dims {d}x{h}x{w}");
                }
            }
        }
    }

    #[test]
    fn ones_kernel_center_is_27() {
        // all-ones 1x3x3x3 input, all-ones 1x1x3x3x3 kernel, stride 1:
        // the fully-supported center voxel sums the whole 3^3 neighborhood.
        let x = vec![1.0; 27];
        let wt = vec![1.0; 27];
        let (out_sp, pad) = same_geometry([3, 3, 3], 1);
        assert_eq!(out_sp, [3, 3, 3]);
        let mut out = vec![0.0; 27];
        conv3d_fwd(&x, [1, 3, 3, 3], &wt, 1, pad, &mut out, [1, 3, 3, 3]);
        assert_eq!(out[(1 * 3 + 1) * 3 + 1], 27.0);
        // corner voxel only sees a 2x2x2 patch under same-padding
        assert_eq!(out[0], 8.0);
    }

    #[test]
    fn same_geometry_ceil_division() {
        let (out, pad) = same_geometry([32, 32, 32], 2);
        assert_eq!(out, [16, 16, 16]);
        assert_eq!(pad, [0, 0, 0]);
        let (out, pad) = same_geometry([5, 5, 5], 2);
        assert_eq!(out, [3, 3, 3]);
        assert_eq!(pad, [1, 1, 1]);
        let (out, pad) = same_geometry([4, 4, 4], 1);
        assert_eq!(out, [4, 4, 4]);
        assert_eq!(pad, [1, 1, 1]);
    }

    /// The two adjoint kernels must satisfy the defining inner-product
    /// identities against the forward kernel: <conv(x), g> = <x, conv_input_grad(g)>
    /// and <conv(x), g> = <w, conv_weight_grad(g, x)>.
    #[test]
    fn adjoint_identities() {
        for &stride in &[1usize, 2] {
            let (ci, co, d, h, w) = (2usize, 2usize, 4usize, 3usize, 5usize);
            let xd = [ci, d, h, w];
            let x = pseudo_random(ci * d * h * w, 3);
            let wt = pseudo_random(co * ci * 27, 5);
            let (out_sp, pad) = same_geometry([d, h, w], stride);
            let od = [co, out_sp[0], out_sp[1], out_sp[2]];
            let out_len = co * out_sp.iter().product::<usize>();
            let g = pseudo_random(out_len, 11);

            let mut y = vec![0.0; out_len];
            conv3d_fwd(&x, xd, &wt, stride, pad, &mut y, od);
            let yg: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();

            let mut dx = vec![0.0; x.len()];
            conv3d_input_grad(&g, od, &wt, stride, pad, &mut dx, xd);
            let xdx: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
            assert!((yg - xdx).abs() < 1e-10);

            let mut dw = vec![0.0; wt.len()];
            conv3d_weight_grad(&g, od, &x, xd, stride, pad, &mut dw);
            let wdw: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
            assert!((yg - wdw).abs() < 1e-10);
        }
    }
}
