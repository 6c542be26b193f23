//! Forward and backward rules for every operation the model and losses use.
//!
//! Backward rules are registered as closures on the tape; each closure
//! computes only the input gradients that are actually requested (inputs
//! without a tape node are treated as constants).

use crate::error::{Error, Result};
use crate::tensor::{as_nchw, debug_check_finite, Element, Tape, Tensor};

impl<E: Element> Tape<E> {
    /// 2-D convolution, NCHW input against OIHW weights, bias per output
    /// channel. Output spatial size is floor((H + 2·pad − kH)/stride) + 1.
    pub fn conv2d(
        &mut self,
        input: &Tensor<E>,
        weight: &Tensor<E>,
        bias: &Tensor<E>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<E>> {
        let ins = as_nchw(input.shape(), "conv2d input")?;
        let ws = weight.shape();
        if ws.len() != 4 {
            return Err(Error::Dim(format!(
                "conv2d weight must be 4-D (OIHW), got shape {ws:?}"
            )));
        }
        let (co, ci, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if ci != ins.c {
            return Err(Error::Dim(format!(
                "conv2d: input has {} channels but weight expects {}",
                ins.c, ci
            )));
        }
        if bias.shape() != [co] {
            return Err(Error::Dim(format!(
                "conv2d: bias shape {:?} does not match {} output channels",
                bias.shape(),
                co
            )));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d: stride must be positive".into()));
        }
        if ins.h + 2 * padding < kh || ins.w + 2 * padding < kw {
            return Err(Error::Geometry(format!(
                "conv2d: padded input {}x{} smaller than kernel {}x{}",
                ins.h + 2 * padding,
                ins.w + 2 * padding,
                kh,
                kw
            )));
        }
        let oh = (ins.h + 2 * padding - kh) / stride + 1;
        let ow = (ins.w + 2 * padding - kw) / stride + 1;
        if oh == 0 || ow == 0 {
            return Err(Error::Geometry("conv2d: zero-sized output".into()));
        }

        let out = conv_forward(
            input.data(),
            ins.n,
            ins.c,
            ins.h,
            ins.w,
            weight.data(),
            co,
            kh,
            kw,
            bias.data(),
            stride,
            padding,
            oh,
            ow,
        );
        debug_check_finite("conv2d", &out);

        let (in_id, w_id, b_id) = (input.node(), weight.node(), bias.node());
        let in_data = input.data_rc();
        let w_data = weight.data_rc();
        let (n, c, h, w) = (ins.n, ins.c, ins.h, ins.w);
        let in_len = input.len();
        let w_len = weight.len();
        let node = self.push_op(
            n * co * oh * ow,
            Box::new(move |g, grads| {
                if let Some(id) = b_id {
                    grads.accumulate(id, co, |buf| {
                        for bn in 0..n {
                            for oc in 0..co {
                                let base = (bn * co + oc) * oh * ow;
                                let mut s = E::zero();
                                for &gv in &g[base..base + oh * ow] {
                                    s += gv;
                                }
                                buf[oc] += s;
                            }
                        }
                    });
                }
                if let Some(id) = w_id {
                    grads.accumulate(id, w_len, |buf| {
                        conv_backward_weight(
                            &in_data, n, c, h, w, g, co, kh, kw, stride, padding, oh, ow, buf,
                        );
                    });
                }
                if let Some(id) = in_id {
                    grads.accumulate(id, in_len, |buf| {
                        conv_backward_input(
                            &w_data, n, c, h, w, g, co, kh, kw, stride, padding, oh, ow, buf,
                        );
                    });
                }
            }),
        );
        Ok(Tensor::with_node(vec![n, co, oh, ow], out, node))
    }

    /// Max pooling with a square window. Spatial dims must be divisible by
    /// the window; ties route the gradient to the first element in
    /// row-major order.
    pub fn max_pool2d(&mut self, input: &Tensor<E>, window: usize) -> Result<Tensor<E>> {
        let s = as_nchw(input.shape(), "max_pool2d input")?;
        if window == 0 {
            return Err(Error::Contract("max_pool2d: window must be positive".into()));
        }
        if s.h % window != 0 || s.w % window != 0 {
            return Err(Error::Geometry(format!(
                "max_pool2d: spatial dims {}x{} not divisible by window {}",
                s.h, s.w, window
            )));
        }
        let (oh, ow) = (s.h / window, s.w / window);
        let x = input.data();
        let mut out = vec![E::zero(); s.n * s.c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for nc in 0..s.n * s.c {
            let in_base = nc * s.h * s.w;
            let out_base = nc * oh * ow;
            for orow in 0..oh {
                for ocol in 0..ow {
                    let mut best = E::neg_infinity();
                    let mut best_i = 0;
                    for dr in 0..window {
                        let row = in_base + (orow * window + dr) * s.w + ocol * window;
                        for dc in 0..window {
                            let v = x[row + dc];
                            if v > best {
                                best = v;
                                best_i = row + dc;
                            }
                        }
                    }
                    out[out_base + orow * ow + ocol] = best;
                    argmax[out_base + orow * ow + ocol] = best_i;
                }
            }
        }
        debug_check_finite("max_pool2d", &out);
        let in_id = input.node();
        let in_len = input.len();
        let node = self.push_op(
            out.len(),
            Box::new(move |g, grads| {
                if let Some(id) = in_id {
                    grads.accumulate(id, in_len, |buf| {
                        for (gi, &src) in argmax.iter().enumerate() {
                            buf[src] += g[gi];
                        }
                    });
                }
            }),
        );
        Ok(Tensor::with_node(vec![s.n, s.c, oh, ow], out, node))
    }

    /// Nearest-neighbor 2x upsampling: doubles H and W by replication.
    pub fn upsample_nearest2(&mut self, input: &Tensor<E>) -> Result<Tensor<E>> {
        let s = as_nchw(input.shape(), "upsample_nearest2 input")?;
        let (oh, ow) = (s.h * 2, s.w * 2);
        let x = input.data();
        let mut out = vec![E::zero(); s.n * s.c * oh * ow];
        for nc in 0..s.n * s.c {
            let in_base = nc * s.h * s.w;
            let out_base = nc * oh * ow;
            for r in 0..oh {
                let irow = in_base + (r / 2) * s.w;
                let orow = out_base + r * ow;
                for cix in 0..ow {
                    out[orow + cix] = x[irow + cix / 2];
                }
            }
        }
        let in_id = input.node();
        let in_len = input.len();
        let (h, w) = (s.h, s.w);
        let (n, c) = (s.n, s.c);
        let node = self.push_op(
            out.len(),
            Box::new(move |g, grads| {
                if let Some(id) = in_id {
                    grads.accumulate(id, in_len, |buf| {
                        for nc in 0..n * c {
                            let in_base = nc * h * w;
                            let out_base = nc * (2 * h) * (2 * w);
                            for r in 0..2 * h {
                                let irow = in_base + (r / 2) * w;
                                let grow = out_base + r * (2 * w);
                                for cix in 0..2 * w {
                                    buf[irow + cix / 2] += g[grow + cix];
                                }
                            }
                        }
                    });
                }
            }),
        );
        Ok(Tensor::with_node(vec![s.n, s.c, oh, ow], out, node))
    }

    pub fn relu(&mut self, input: &Tensor<E>) -> Tensor<E> {
        let x = input.data_rc();
        let out: Vec<E> = x
            .iter()
            .map(|&v| if v > E::zero() { v } else { E::zero() })
            .collect();
        let in_id = input.node();
        let in_len = input.len();
        let node = self.push_op(
            out.len(),
            Box::new(move |g, grads| {
                if let Some(id) = in_id {
                    grads.accumulate(id, in_len, |buf| {
                        for i in 0..buf.len() {
                            if x[i] > E::zero() {
                                buf[i] += g[i];
                            }
                        }
                    });
                }
            }),
        );
        Tensor::with_node(input.shape().to_vec(), out, node)
    }

    /// Numerically stable sigmoid: branches on the sign of the argument so
    /// exp() never overflows.
    pub fn sigmoid(&mut self, input: &Tensor<E>) -> Tensor<E> {
        let out: Vec<E> = input.data().iter().map(|&v| stable_sigmoid(v)).collect();
        debug_check_finite("sigmoid", &out);
        let in_id = input.node();
        let in_len = input.len();
        let y = std::rc::Rc::new(out.clone());
        let node = self.push_op(
            out.len(),
            Box::new(move |g, grads| {
                if let Some(id) = in_id {
                    grads.accumulate(id, in_len, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * y[i] * (E::one() - y[i]);
                        }
                    });
                }
            }),
        );
        Tensor::with_node(input.shape().to_vec(), out, node)
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        let sa = as_nchw(a.shape(), "concat_channels lhs")?;
        let sb = as_nchw(b.shape(), "concat_channels rhs")?;
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::Dim(format!(
                "concat_channels: shapes {:?} and {:?} differ outside the channel axis",
                a.shape(),
                b.shape()
            )));
        }
        let hw = sa.h * sa.w;
        let oc = sa.c + sb.c;
        let mut out = vec![E::zero(); sa.n * oc * hw];
        for bn in 0..sa.n {
            let dst = bn * oc * hw;
            out[dst..dst + sa.c * hw]
                .copy_from_slice(&a.data()[bn * sa.c * hw..(bn + 1) * sa.c * hw]);
            out[dst + sa.c * hw..dst + oc * hw]
                .copy_from_slice(&b.data()[bn * sb.c * hw..(bn + 1) * sb.c * hw]);
        }
        let (a_id, b_id) = (a.node(), b.node());
        let (a_len, b_len) = (a.len(), b.len());
        let (n, ca, cb) = (sa.n, sa.c, sb.c);
        let node = self.push_op(
            out.len(),
            Box::new(move |g, grads| {
                if let Some(id) = a_id {
                    grads.accumulate(id, a_len, |buf| {
                        for bn in 0..n {
                            let src = bn * (ca + cb) * hw;
                            for (i, &gv) in g[src..src + ca * hw].iter().enumerate() {
                                buf[bn * ca * hw + i] += gv;
                            }
                        }
                    });
                }
                if let Some(id) = b_id {
                    grads.accumulate(id, b_len, |buf| {
                        for bn in 0..n {
                            let src = bn * (ca + cb) * hw + ca * hw;
                            for (i, &gv) in g[src..src + cb * hw].iter().enumerate() {
                                buf[bn * cb * hw + i] += gv;
                            }
                        }
                    });
                }
            }),
        );
        Ok(Tensor::with_node(vec![sa.n, oc, sa.h, sa.w], out, node))
    }

    pub fn add(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        if a.shape() != b.shape() {
            return Err(Error::Dim(format!(
                "add: shape {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let out: Vec<E> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let (a_id, b_id) = (a.node(), b.node());
        let len = out.len();
        let node = self.push_op(
            len,
            Box::new(move |g, grads| {
                for id in [a_id, b_id].into_iter().flatten() {
                    grads.accumulate(id, len, |buf| {
                        for i in 0..len {
                            buf[i] += g[i];
                        }
                    });
                }
            }),
        );
        Ok(Tensor::with_node(a.shape().to_vec(), out, node))
    }

    /// Multiply by a constant. The constant carries no gradient.
    pub fn scale(&mut self, a: &Tensor<E>, k: f64) -> Tensor<E> {
        let kk = E::from_f64(k);
        let out: Vec<E> = a.data().iter().map(|&x| x * kk).collect();
        let a_id = a.node();
        let len = out.len();
        let node = self.push_op(
            len,
            Box::new(move |g, grads| {
                if let Some(id) = a_id {
                    grads.accumulate(id, len, |buf| {
                        for i in 0..len {
                            buf[i] += g[i] * kk;
                        }
                    });
                }
            }),
        );
        Tensor::with_node(a.shape().to_vec(), out, node)
    }

    /// Sum of all elements, reduced in row-major order.
    pub fn sum(&mut self, a: &Tensor<E>) -> Tensor<E> {
        let mut s = E::zero();
        for &v in a.data() {
            s += v;
        }
        let a_id = a.node();
        let len = a.len();
        let node = self.push_op(
            1,
            Box::new(move |g, grads| {
                if let Some(id) = a_id {
                    grads.accumulate(id, len, |buf| {
                        for b in buf.iter_mut() {
                            *b += g[0];
                        }
                    });
                }
            }),
        );
        Tensor::with_node(vec![], vec![s], node)
    }

    /// Mean binary cross-entropy computed in logit space:
    /// max(z,0) − z·t + ln(1 + e^(−|z|)). Never overflows.
    pub fn bce_with_logits(&mut self, logits: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
        if logits.shape() != target.shape() {
            return Err(Error::Dim(format!(
                "bce_with_logits: logits shape {:?} vs target shape {:?}",
                logits.shape(),
                target.shape()
            )));
        }
        let n = logits.len();
        let inv_n = E::from_f64(1.0 / n as f64);
        let mut s = E::zero();
        for (&z, &t) in logits.data().iter().zip(target.data()) {
            debug_assert!(
                t >= E::zero() && t <= E::one(),
                "bce target {t} outside [0,1]"
            );
            let zpos = if z > E::zero() { z } else { E::zero() };
            s += zpos - z * t + (E::one() + (-z.abs()).exp()).ln();
        }
        let loss = s * inv_n;
        debug_check_finite("bce_with_logits", &[loss]);
        let (z_id, t_id) = (logits.node(), target.node());
        let z_data = logits.data_rc();
        let t_data = target.data_rc();
        let node = self.push_op(
            1,
            Box::new(move |g, grads| {
                if let Some(id) = z_id {
                    grads.accumulate(id, n, |buf| {
                        for i in 0..n {
                            buf[i] += g[0] * inv_n * (stable_sigmoid(z_data[i]) - t_data[i]);
                        }
                    });
                }
                if let Some(id) = t_id {
                    grads.accumulate(id, n, |buf| {
                        for i in 0..n {
                            buf[i] += g[0] * inv_n * (-z_data[i]);
                        }
                    });
                }
            }),
        );
        Ok(Tensor::with_node(vec![], vec![loss], node))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
        if pred.shape() != target.shape() {
            return Err(Error::Dim(format!(
                "mse: pred shape {:?} vs target shape {:?}",
                pred.shape(),
                target.shape()
            )));
        }
        let n = pred.len();
        let inv_n = E::from_f64(1.0 / n as f64);
        let mut s = E::zero();
        for (&p, &t) in pred.data().iter().zip(target.data()) {
            let d = p - t;
            s += d * d;
        }
        let loss = s * inv_n;
        debug_check_finite("mse", &[loss]);
        let (p_id, t_id) = (pred.node(), target.node());
        let p_data = pred.data_rc();
        let t_data = target.data_rc();
        let two = E::from_f64(2.0);
        let node = self.push_op(
            1,
            Box::new(move |g, grads| {
                if let Some(id) = p_id {
                    grads.accumulate(id, n, |buf| {
                        for i in 0..n {
                            buf[i] += g[0] * inv_n * two * (p_data[i] - t_data[i]);
                        }
                    });
                }
                if let Some(id) = t_id {
                    grads.accumulate(id, n, |buf| {
                        for i in 0..n {
                            buf[i] += g[0] * inv_n * two * (t_data[i] - p_data[i]);
                        }
                    });
                }
            }),
        );
        Ok(Tensor::with_node(vec![], vec![loss], node))
    }
}

#[inline]
fn stable_sigmoid<E: Element>(v: E) -> E {
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

/// Direct convolution. Loop order keeps the innermost loop contiguous over
/// an output row so it vectorizes.
#[allow(clippy::too_many_arguments)]
fn conv_forward<E: Element>(
    input: &[E],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &[E],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: &[E],
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<E> {
    let mut out = vec![E::zero(); n * cout * oh * ow];
    for bn in 0..n {
        for oc in 0..cout {
            let out_base = (bn * cout + oc) * oh * ow;
            out[out_base..out_base + oh * ow].fill(bias[oc]);
            for ic in 0..cin {
                let in_base = (bn * cin + ic) * h * w;
                let w_base = (oc * cin + ic) * kh * kw;
                for kr in 0..kh {
                    for kc in 0..kw {
                        let wv = weight[w_base + kr * kw + kc];
                        for orow in 0..oh {
                            let ir = (orow * stride + kr) as isize - pad as isize;
                            if ir < 0 || ir >= h as isize {
                                continue;
                            }
                            let (lo, hi) = col_range(ow, w, stride, kc, pad);
                            if lo > hi {
                                continue;
                            }
                            let orow_base = out_base + orow * ow;
                            let irow_base = in_base + ir as usize * w;
                            let off = kc as isize - pad as isize;
                            if stride == 1 {
                                let src =
                                    &input[(irow_base as isize + lo as isize + off) as usize..];
                                let dst = &mut out[orow_base + lo..=orow_base + hi];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            } else {
                                for oc2 in lo..=hi {
                                    let iw = (oc2 * stride) as isize + off;
                                    out[orow_base + oc2] +=
                                        wv * input[(irow_base as isize + iw) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inclusive output-column range for which the input column stays in bounds.
#[inline]
fn col_range(ow: usize, w: usize, stride: usize, kc: usize, pad: usize) -> (usize, usize) {
    // need 0 <= ocol*stride + kc - pad < w
    let lo = if kc >= pad {
        0
    } else {
        (pad - kc).div_ceil(stride)
    };
    let hi_num = w as isize - 1 + pad as isize - kc as isize;
    if hi_num < 0 {
        return (1, 0);
    }
    let hi = (hi_num as usize / stride).min(ow.saturating_sub(1));
    (lo.min(ow), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_weight<E: Element>(
    input: &[E],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    gout: &[E],
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dweight: &mut [E],
) {
    for bn in 0..n {
        for oc in 0..cout {
            let g_base = (bn * cout + oc) * oh * ow;
            for ic in 0..cin {
                let in_base = (bn * cin + ic) * h * w;
                let w_base = (oc * cin + ic) * kh * kw;
                for kr in 0..kh {
                    for kc in 0..kw {
                        let mut acc = E::zero();
                        for orow in 0..oh {
                            let ir = (orow * stride + kr) as isize - pad as isize;
                            if ir < 0 || ir >= h as isize {
                                continue;
                            }
                            let (lo, hi) = col_range(ow, w, stride, kc, pad);
                            if lo > hi {
                                continue;
                            }
                            let grow = g_base + orow * ow;
                            let irow = in_base + ir as usize * w;
                            let off = kc as isize - pad as isize;
                            if stride == 1 {
                                let src = &input[(irow as isize + lo as isize + off) as usize..];
                                for (j, &gv) in gout[grow + lo..=grow + hi].iter().enumerate() {
                                    acc += gv * src[j];
                                }
                            } else {
                                for oc2 in lo..=hi {
                                    let iw = (oc2 * stride) as isize + off;
                                    acc += gout[grow + oc2] * input[(irow as isize + iw) as usize];
                                }
                            }
                        }
                        dweight[w_base + kr * kw + kc] += acc;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_input<E: Element>(
    weight: &[E],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    gout: &[E],
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dinput: &mut [E],
) {
    for bn in 0..n {
        for oc in 0..cout {
            let g_base = (bn * cout + oc) * oh * ow;
            for ic in 0..cin {
                let in_base = (bn * cin + ic) * h * w;
                let w_base = (oc * cin + ic) * kh * kw;
                for kr in 0..kh {
                    for kc in 0..kw {
                        let wv = weight[w_base + kr * kw + kc];
                        for orow in 0..oh {
                            let ir = (orow * stride + kr) as isize - pad as isize;
                            if ir < 0 || ir >= h as isize {
                                continue;
                            }
                            let (lo, hi) = col_range(ow, w, stride, kc, pad);
                            if lo > hi {
                                continue;
                            }
                            let grow = g_base + orow * ow;
                            let irow = in_base + ir as usize * w;
                            let off = kc as isize - pad as isize;
                            if stride == 1 {
                                let dst_start = (irow as isize + lo as isize + off) as usize;
                                let dst = &mut dinput[dst_start..dst_start + (hi - lo + 1)];
                                for (d, &gv) in dst.iter_mut().zip(&gout[grow + lo..=grow + hi]) {
                                    *d += wv * gv;
                                }
                            } else {
                                for oc2 in lo..=hi {
                                    let iw = (oc2 * stride) as isize + off;
                                    dinput[(irow as isize + iw) as usize] +=
                                        wv * gout[grow + oc2];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
