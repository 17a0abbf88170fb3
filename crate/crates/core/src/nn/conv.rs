//! Standard and depthwise 2-D convolution on NCHW tensors (no bias).
//!
//! Images in a batch are processed in parallel. Weight gradients are reduced
//! over fixed-size image chunks and summed in chunk order, so results do not
//! depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Images per partial weight-gradient buffer.
const GRAD_CHUNK: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    in_channels: usize,
    out_channels: usize,
    height: usize,
    width: usize,
    out_height: usize,
    out_width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    depthwise: bool,
}

impl Geometry {
    fn in_plane(&self) -> usize {
        self.height * self.width
    }
    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }
    fn weight_len(&self) -> usize {
        if self.depthwise {
            self.out_channels * self.kernel * self.kernel
        } else {
            self.out_channels * self.in_channels * self.kernel * self.kernel
        }
    }
}

/// Output length of a strided, padded convolution along one axis.
pub fn conv_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

fn geometry<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    depthwise: bool,
) -> Result<Geometry> {
    input.expect_rank(op, 4)?;
    weight.expect_rank(op, 4)?;
    let (c, h, w) = (input.dim(1), input.dim(2), input.dim(3));
    let (o, i, kh, kw) = (weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3));
    if kh != kw {
        return Err(Error::invalid(format!("{op}: non-square kernel {kh}x{kw}")));
    }
    if depthwise {
        if i != 1 || o != c {
            return Err(Error::shape(op, input.shape(), weight.shape()));
        }
    } else if i != c {
        return Err(Error::shape(op, input.shape(), weight.shape()));
    }
    let fits = |len| conv_output_len(len, kh, stride, padding);
    let (Some(oh), Some(ow)) = (fits(h), fits(w)) else {
        return Err(Error::invalid(format!(
            "{op}: kernel {kh} with stride {stride}, padding {padding} does not fit input {:?}",
            input.shape()
        )));
    };
    Ok(Geometry {
        in_channels: c,
        out_channels: o,
        height: h,
        width: w,
        out_height: oh,
        out_width: ow,
        kernel: kh,
        stride,
        padding,
        depthwise,
    })
}

/// Output positions `[lo, hi)` along one axis whose tap at kernel offset
/// `koff` lands inside the input.
#[inline]
fn valid_range(
    out_len: usize,
    in_len: usize,
    stride: usize,
    koff: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = if pad > koff {
        (pad - koff).div_ceil(stride)
    } else {
        0
    };
    let reach = in_len + pad;
    let hi = if reach > koff {
        (reach - koff).div_ceil(stride).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// `out += correlate(x, w)` for one input plane and one kernel.
fn correlate_plane<T: Real>(x: &[T], w: &[T], out: &mut [T], g: &Geometry) {
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    if k == 1 && s == 1 && p == 0 {
        let wv = w[0];
        for (o, &xv) in out.iter_mut().zip(x) {
            *o += wv * xv;
        }
        return;
    }
    for kh in 0..k {
        let (oh_lo, oh_hi) = valid_range(g.out_height, g.height, s, kh, p);
        for kw in 0..k {
            let wv = w[kh * k + kw];
            let (ow_lo, ow_hi) = valid_range(g.out_width, g.width, s, kw, p);
            for oh in oh_lo..oh_hi {
                let ih = oh * s + kh - p;
                let row_in = &x[ih * g.width..(ih + 1) * g.width];
                let row_out = &mut out[oh * g.out_width..(oh + 1) * g.out_width];
                if s == 1 {
                    let src = &row_in[ow_lo + kw - p..ow_hi + kw - p];
                    for (o, &xv) in row_out[ow_lo..ow_hi].iter_mut().zip(src) {
                        *o += wv * xv;
                    }
                } else {
                    for ow in ow_lo..ow_hi {
                        row_out[ow] += wv * row_in[ow * s + kw - p];
                    }
                }
            }
        }
    }
}

/// Accumulates `gx` and `gw` for one (input plane, kernel, output plane) triple.
fn correlate_plane_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    gx: &mut [T],
    gw: &mut [T],
    g: &Geometry,
) {
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    if k == 1 && s == 1 && p == 0 {
        let wv = w[0];
        let mut acc = T::zero();
        for ((&go, &xv), gxv) in gout.iter().zip(x).zip(gx.iter_mut()) {
            acc += go * xv;
            *gxv += wv * go;
        }
        gw[0] += acc;
        return;
    }
    for kh in 0..k {
        let (oh_lo, oh_hi) = valid_range(g.out_height, g.height, s, kh, p);
        for kw in 0..k {
            let wv = w[kh * k + kw];
            let (ow_lo, ow_hi) = valid_range(g.out_width, g.width, s, kw, p);
            let mut acc = T::zero();
            for oh in oh_lo..oh_hi {
                let ih = oh * s + kh - p;
                let row_in = &x[ih * g.width..(ih + 1) * g.width];
                let row_gx = &mut gx[ih * g.width..(ih + 1) * g.width];
                let row_go = &gout[oh * g.out_width..(oh + 1) * g.out_width];
                if s == 1 && ow_hi > ow_lo {
                    let span = ow_lo + kw - p..ow_hi + kw - p;
                    for ((&go, &xv), gxv) in row_go[ow_lo..ow_hi]
                        .iter()
                        .zip(&row_in[span.clone()])
                        .zip(&mut row_gx[span])
                    {
                        acc += go * xv;
                        *gxv += wv * go;
                    }
                } else {
                    for ow in ow_lo..ow_hi {
                        let iw = ow * s + kw - p;
                        acc += row_go[ow] * row_in[iw];
                        row_gx[iw] += wv * row_go[ow];
                    }
                }
            }
            gw[kh * k + kw] += acc;
        }
    }
}

fn forward_image<T: Real>(x: &[T], w: &[T], out: &mut [T], g: &Geometry) {
    let kk = g.kernel * g.kernel;
    let (ip, op) = (g.in_plane(), g.out_plane());
    for o in 0..g.out_channels {
        let out_plane = &mut out[o * op..(o + 1) * op];
        if g.depthwise {
            correlate_plane(
                &x[o * ip..(o + 1) * ip],
                &w[o * kk..(o + 1) * kk],
                out_plane,
                g,
            );
        } else {
            for i in 0..g.in_channels {
                let wk = &w[(o * g.in_channels + i) * kk..(o * g.in_channels + i + 1) * kk];
                correlate_plane(&x[i * ip..(i + 1) * ip], wk, out_plane, g);
            }
        }
    }
}

fn backward_image<T: Real>(x: &[T], w: &[T], gout: &[T], gx: &mut [T], gw: &mut [T], g: &Geometry) {
    let kk = g.kernel * g.kernel;
    let (ip, op) = (g.in_plane(), g.out_plane());
    for o in 0..g.out_channels {
        let go = &gout[o * op..(o + 1) * op];
        if g.depthwise {
            let r = o * kk..(o + 1) * kk;
            correlate_plane_backward(
                &x[o * ip..(o + 1) * ip],
                &w[r.clone()],
                go,
                &mut gx[o * ip..(o + 1) * ip],
                &mut gw[r],
                g,
            );
        } else {
            for i in 0..g.in_channels {
                let r = (o * g.in_channels + i) * kk..(o * g.in_channels + i + 1) * kk;
                correlate_plane_backward(
                    &x[i * ip..(i + 1) * ip],
                    &w[r.clone()],
                    go,
                    &mut gx[i * ip..(i + 1) * ip],
                    &mut gw[r],
                    g,
                );
            }
        }
    }
}

fn run_forward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, g: Geometry) -> Result<Tensor<T>> {
    let n = input.dim(0);
    let (in_stride, out_stride) = (g.in_channels * g.in_plane(), g.out_channels * g.out_plane());
    let mut out = vec![T::zero(); n * out_stride];
    if out_stride > 0 {
        out.par_chunks_mut(out_stride)
            .zip(input.data().par_chunks(in_stride.max(1)))
            .for_each(|(o, x)| forward_image(x, weight.data(), o, &g));
    }
    Tensor::new(vec![n, g.out_channels, g.out_height, g.out_width], out)
}

fn run_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: Geometry,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let n = input.dim(0);
    let expected = [n, g.out_channels, g.out_height, g.out_width];
    grad_out.expect_shape("conv backward", &expected)?;
    let (in_stride, out_stride) = (g.in_channels * g.in_plane(), g.out_channels * g.out_plane());
    let mut gx = vec![T::zero(); input.len()];
    let wlen = g.weight_len();
    if in_stride == 0 || out_stride == 0 {
        return Ok((
            Tensor::new(input.shape().to_vec(), gx)?,
            Tensor::zeros(weight.shape().to_vec()),
        ));
    }
    let partials: Vec<Vec<T>> = gx
        .par_chunks_mut(in_stride * GRAD_CHUNK)
        .zip(input.data().par_chunks(in_stride * GRAD_CHUNK))
        .zip(grad_out.data().par_chunks(out_stride * GRAD_CHUNK))
        .map(|((gx_chunk, x_chunk), go_chunk)| {
            let mut gw = vec![T::zero(); wlen];
            for ((gxi, xi), goi) in gx_chunk
                .chunks_mut(in_stride)
                .zip(x_chunk.chunks(in_stride))
                .zip(go_chunk.chunks(out_stride))
            {
                backward_image(xi, weight.data(), goi, gxi, &mut gw, &g);
            }
            gw
        })
        .collect();
    let mut gw = vec![T::zero(); wlen];
    for part in &partials {
        for (a, &b) in gw.iter_mut().zip(part) {
            *a += b;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
    ))
}

/// Cross-correlation of an `N×C×H×W` input with an `O×C×k×k` weight.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = geometry("conv2d", input, weight, stride, padding, false)?;
    run_forward(input, weight, g)
}

/// Returns `(grad_input, grad_weight)`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = geometry("conv2d", input, weight, stride, padding, false)?;
    run_backward(input, weight, grad_out, g)
}

/// Per-channel convolution with a `C×1×k×k` weight.
pub fn depthwise_conv_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = geometry("depthwise_conv", input, weight, stride, padding, true)?;
    run_forward(input, weight, g)
}

pub fn depthwise_conv_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = geometry("depthwise_conv", input, weight, stride, padding, true)?;
    run_backward(input, weight, grad_out, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    /// Nested-loop reference with explicit bounds checks on every tap.
    fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        s: usize,
        p: usize,
        depthwise: bool,
    ) -> Tensor<f64> {
        let (n, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (o, k) = (w.dim(0), w.dim(2));
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros(vec![n, o, oh, ow]);
        for b in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        let channels: Vec<usize> = if depthwise {
                            vec![oc]
                        } else {
                            (0..c).collect()
                        };
                        for (wi, ic) in channels.into_iter().enumerate() {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * s + ky) as isize - p as isize;
                                    let ix = (xx * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()
                                        [((b * c + ic) * h + iy as usize) * wd + ix as usize];
                                    let wcol = if depthwise { 0 } else { wi };
                                    let wv = w.data()[((oc * w.dim(1) + wcol) * k + ky) * k + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out.data_mut()[((b * o + oc) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, rel: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            let scale = x.abs().max(y.abs()).max(1e-12);
            assert!(
                (x - y).abs() / scale <= rel || (x - y).abs() < 1e-12,
                "{x} vs {y}"
            );
        }
    }

    #[test]
    fn ones_sum_to_nine() {
        let x = Tensor::<f64>::ones(vec![1, 1, 3, 3]);
        let w = Tensor::<f64>::ones(vec![1, 1, 3, 3]);
        let y = conv2d_forward(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let x = random(&[2, 1, 5, 5], 1);
        let w = Tensor::<f64>::ones(vec![1, 1, 1, 1]);
        assert_eq!(conv2d_forward(&x, &w, 1, 0).unwrap(), x);
    }

    #[test]
    fn strided_padded_conv_matches_direct_summation() {
        let x = random(&[2, 3, 8, 8], 2);
        let w = random(&[4, 3, 3, 3], 3);
        let y = conv2d_forward(&x, &w, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 4]);
        assert_close(&y, &naive_conv(&x, &w, 2, 1, false), 1e-6);
    }

    #[test]
    fn odd_sizes_match_direct_summation() {
        let x = random(&[3, 2, 7, 5], 4);
        let w = random(&[3, 2, 3, 3], 5);
        for (s, p) in [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)] {
            assert_close(
                &conv2d_forward(&x, &w, s, p).unwrap(),
                &naive_conv(&x, &w, s, p, false),
                1e-9,
            );
        }
    }

    #[test]
    fn depthwise_channels_are_independent() {
        let mut x = random(&[1, 2, 6, 6], 6);
        for v in x.outer_mut(0)[36..].iter_mut() {
            *v = 0.0;
        }
        let w = random(&[2, 1, 3, 3], 7);
        let y = depthwise_conv_forward(&x, &w, 1, 1).unwrap();
        assert!(y.data()[36..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depthwise_pointwise_scaling() {
        let x = random(&[2, 3, 4, 4], 8);
        let w = Tensor::<f64>::full(vec![3, 1, 1, 1], 2.0);
        assert_eq!(depthwise_conv_forward(&x, &w, 1, 0).unwrap(), x.scale(2.0));
    }

    #[test]
    fn depthwise_matches_direct_summation() {
        let x = random(&[2, 4, 9, 9], 9);
        let w = random(&[4, 1, 3, 3], 10);
        for (s, p) in [(1, 1), (2, 1), (2, 0)] {
            assert_close(
                &depthwise_conv_forward(&x, &w, s, p).unwrap(),
                &naive_conv(&x, &w, s, p, true),
                1e-6,
            );
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let x = Tensor::<f64>::zeros(vec![1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(vec![2, 2, 3, 3]);
        let msg = conv2d_forward(&x, &w, 1, 1).unwrap_err().to_string();
        assert!(
            msg.contains("[1, 3, 4, 4]") && msg.contains("[2, 2, 3, 3]"),
            "{msg}"
        );
        let dw = Tensor::<f64>::zeros(vec![2, 1, 3, 3]);
        assert!(depthwise_conv_forward(&x, &dw, 1, 1).is_err());
    }

    #[test]
    fn kernel_too_large_is_rejected() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 2, 2]);
        let w = Tensor::<f64>::zeros(vec![1, 1, 5, 5]);
        assert!(conv2d_forward(&x, &w, 1, 0).is_err());
    }

    #[test]
    fn linearity_in_input() {
        let x = random(&[2, 3, 6, 6], 11);
        let z = random(&[2, 3, 6, 6], 12);
        let w = random(&[2, 3, 3, 3], 13);
        let (a, b) = (0.7, -1.3);
        let mixed = x.scale(a).add(&z.scale(b)).unwrap();
        let lhs = conv2d_forward(&mixed, &w, 1, 1).unwrap();
        let rhs = conv2d_forward(&x, &w, 1, 1)
            .unwrap()
            .scale(a)
            .add(&conv2d_forward(&z, &w, 1, 1).unwrap().scale(b))
            .unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() <= 1e-6 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> == <x, dconv^T g> and == <w, dW>
        let x = random(&[5, 2, 7, 6], 14);
        let w = random(&[3, 2, 3, 3], 15);
        let y = conv2d_forward(&x, &w, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let g = Tensor::from_fn(y.shape().to_vec(), |_| rng.gen_range(-1.0..1.0));
        let (gx, gw) = conv2d_backward(&x, &w, &g, 2, 1).unwrap();
        let lhs = y.dot(&g).unwrap();
        assert!((lhs - x.dot(&gx).unwrap()).abs() < 1e-9);
        assert!((lhs - w.dot(&gw).unwrap()).abs() < 1e-9);
    }
}
