//! Forward and backward kernels for the spatial primitives.
//!
//! These are plain functions over [`Tensor`] so the tape stays a thin
//! recording layer. Convolutions dispatch to three implementations:
//! pointwise (1x1, stride 1), depthwise (groups == channels), and a
//! generic fallback. The specialized paths keep the innermost loops
//! contiguous so they vectorize; the image extents here are tiny, so
//! per-row overhead is what actually decides throughput.

use super::tensor::Tensor;

/// Convolution attributes. `groups == in_channels` gives a depthwise conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvAttrs {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvAttrs {
    fn default() -> Self {
        ConvAttrs { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }
}

pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> usize {
    let eff = dilation * (kernel - 1) + 1;
    (input + 2 * padding - eff) / stride + 1
}

/// Valid output range `[lo, hi)` such that `ox*stride + off` lands in `[0, extent)`.
#[inline]
fn valid_range(extent: usize, out_extent: usize, stride: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(stride) };
    let hi_raw = extent as isize - 1 - off;
    if hi_raw < 0 {
        return (0, 0);
    }
    let hi = (hi_raw as usize / stride + 1).min(out_extent);
    (lo.min(hi), hi)
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * *v;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_pointwise(w: &Tensor, a: &ConvAttrs) -> bool {
    w.dim(2) == 1 && w.dim(3) == 1 && a.stride == 1 && a.padding == 0 && a.dilation == 1 && a.groups == 1
}

fn is_depthwise(x: &Tensor, w: &Tensor, a: &ConvAttrs) -> bool {
    a.groups == x.dim(1) && w.dim(0) == x.dim(1) && w.dim(1) == 1
}

// ---- pointwise: a (cout x cin) matrix applied across contiguous pixels ----

fn pw_fwd(x: &Tensor, w: &Tensor) -> Tensor {
    let (n, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let cout = w.dim(0);
    let hw = h * wd;
    let mut out = Tensor::zeros(vec![n, cout, h, wd]);
    let (xv, wv, ov) = (x.data(), w.data(), out.data_mut());
    for ni in 0..n {
        let xs = &xv[ni * cin * hw..(ni + 1) * cin * hw];
        let os = &mut ov[ni * cout * hw..(ni + 1) * cout * hw];
        for oc in 0..cout {
            let orow = &mut os[oc * hw..(oc + 1) * hw];
            let wrow = &wv[oc * cin..(oc + 1) * cin];
            for (ic, &weight) in wrow.iter().enumerate() {
                axpy(orow, weight, &xs[ic * hw..(ic + 1) * hw]);
            }
        }
    }
    out
}

fn pw_bwd(x: &Tensor, w: &Tensor, gout: &Tensor, want_gx: bool, want_gw: bool) -> (Option<Tensor>, Option<Tensor>) {
    let (n, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let cout = w.dim(0);
    let hw = h * wd;
    let (xv, wv, gv) = (x.data(), w.data(), gout.data());
    let mut gx = want_gx.then(|| Tensor::zeros(vec![n, cin, h, wd]));
    let mut gw = want_gw.then(|| Tensor::zeros(vec![cout, cin, 1, 1]));
    for ni in 0..n {
        let gs = &gv[ni * cout * hw..(ni + 1) * cout * hw];
        if let Some(gxm) = gx.as_mut() {
            let gxs = &mut gxm.data_mut()[ni * cin * hw..(ni + 1) * cin * hw];
            for oc in 0..cout {
                let grow = &gs[oc * hw..(oc + 1) * hw];
                let wrow = &wv[oc * cin..(oc + 1) * cin];
                for (ic, &weight) in wrow.iter().enumerate() {
                    axpy(&mut gxs[ic * hw..(ic + 1) * hw], weight, grow);
                }
            }
        }
        if let Some(gwm) = gw.as_mut() {
            let xs = &xv[ni * cin * hw..(ni + 1) * cin * hw];
            let gwd = gwm.data_mut();
            for oc in 0..cout {
                let grow = &gs[oc * hw..(oc + 1) * hw];
                for ic in 0..cin {
                    gwd[oc * cin + ic] += dot(grow, &xs[ic * hw..(ic + 1) * hw]);
                }
            }
        }
    }
    (gx, gw)
}

// ---- depthwise: independent 2-d convolutions per channel plane ----

struct TapPlan {
    /// (ky, kx, weight index, oy range, ox range, x col offset)
    taps: Vec<(usize, usize, usize, usize, usize, isize)>,
    oy_off: Vec<isize>,
}

fn plan_taps(h: usize, wd: usize, oh: usize, ow: usize, kh: usize, kw: usize, a: &ConvAttrs) -> TapPlan {
    let mut taps = Vec::with_capacity(kh * kw);
    let mut oy_off = Vec::with_capacity(kh);
    for ky in 0..kh {
        oy_off.push((ky * a.dilation) as isize - a.padding as isize);
    }
    for (ky, &off_y) in oy_off.iter().enumerate() {
        let (oy_lo, oy_hi) = valid_range(h, oh, a.stride, off_y);
        if oy_hi <= oy_lo {
            continue;
        }
        for kx in 0..kw {
            let ox_off = (kx * a.dilation) as isize - a.padding as isize;
            let (ox_lo, ox_hi) = valid_range(wd, ow, a.stride, ox_off);
            if ox_hi <= ox_lo {
                continue;
            }
            taps.push((oy_lo, oy_hi, ky * kw + kx, ox_lo, ox_hi, ox_off));
        }
    }
    TapPlan { taps, oy_off }
}

fn dw_fwd(x: &Tensor, w: &Tensor, a: &ConvAttrs) -> Tensor {
    let (n, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (kh, kw) = (w.dim(2), w.dim(3));
    let oh = conv_out_extent(h, kh, a.stride, a.padding, a.dilation);
    let ow = conv_out_extent(wd, kw, a.stride, a.padding, a.dilation);
    let plan = plan_taps(h, wd, oh, ow, kh, kw, a);
    let contiguous = a.stride == 1;
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let (xv, wv, ov) = (x.data(), w.data(), out.data_mut());
    for plane in 0..n * c {
        let ch = plane % c;
        let xp = &xv[plane * h * wd..(plane + 1) * h * wd];
        let op = &mut ov[plane * oh * ow..(plane + 1) * oh * ow];
        let wk = &wv[ch * kh * kw..(ch + 1) * kh * kw];
        for &(oy_lo, oy_hi, kidx, ox_lo, ox_hi, ox_off) in &plan.taps {
            let weight = wk[kidx];
            let oy_off = plan.oy_off[kidx / kw];
            let seg = ox_hi - ox_lo;
            for oy in oy_lo..oy_hi {
                let iy = ((oy * a.stride) as isize + oy_off) as usize;
                let orow = &mut op[oy * ow + ox_lo..oy * ow + ox_hi];
                if contiguous {
                    let ix_lo = iy * wd + (ox_lo as isize + ox_off) as usize;
                    axpy(orow, weight, &xp[ix_lo..ix_lo + seg]);
                } else {
                    let mut ix = (ox_lo * a.stride) as isize + ox_off + (iy * wd) as isize;
                    for o in orow.iter_mut() {
                        *o += weight * xp[ix as usize];
                        ix += a.stride as isize;
                    }
                }
            }
        }
    }
    out
}

fn dw_bwd(
    x: &Tensor,
    w: &Tensor,
    a: &ConvAttrs,
    gout: &Tensor,
    want_gx: bool,
    want_gw: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (n, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (kh, kw) = (w.dim(2), w.dim(3));
    let (oh, ow) = (gout.dim(2), gout.dim(3));
    let plan = plan_taps(h, wd, oh, ow, kh, kw, a);
    let contiguous = a.stride == 1;
    let mut gx = want_gx.then(|| Tensor::zeros(vec![n, c, h, wd]));
    let mut gw = want_gw.then(|| Tensor::zeros(vec![c, 1, kh, kw]));
    let (xv, wv, gv) = (x.data(), w.data(), gout.data());
    for plane in 0..n * c {
        let ch = plane % c;
        let gp = &gv[plane * oh * ow..(plane + 1) * oh * ow];
        let wk = &wv[ch * kh * kw..(ch + 1) * kh * kw];
        for &(oy_lo, oy_hi, kidx, ox_lo, ox_hi, ox_off) in &plan.taps {
            let weight = wk[kidx];
            let oy_off = plan.oy_off[kidx / kw];
            let seg = ox_hi - ox_lo;
            let mut wacc = 0.0;
            for oy in oy_lo..oy_hi {
                let iy = ((oy * a.stride) as isize + oy_off) as usize;
                let grow = &gp[oy * ow + ox_lo..oy * ow + ox_hi];
                if contiguous {
                    let ix_lo = plane * h * wd + iy * wd + (ox_lo as isize + ox_off) as usize;
                    if let Some(gxm) = gx.as_mut() {
                        axpy(&mut gxm.data_mut()[ix_lo..ix_lo + seg], weight, grow);
                    }
                    if gw.is_some() {
                        wacc += dot(grow, &xv[ix_lo..ix_lo + seg]);
                    }
                } else {
                    let base = (plane * h * wd + iy * wd) as isize;
                    let mut ix = base + (ox_lo * a.stride) as isize + ox_off;
                    if let Some(gxm) = gx.as_mut() {
                        let gxd = gxm.data_mut();
                        for &gval in grow.iter() {
                            gxd[ix as usize] += weight * gval;
                            ix += a.stride as isize;
                        }
                        ix = base + (ox_lo * a.stride) as isize + ox_off;
                    }
                    if gw.is_some() {
                        for &gval in grow.iter() {
                            wacc += xv[ix as usize] * gval;
                            ix += a.stride as isize;
                        }
                    }
                }
            }
            if let Some(gwm) = gw.as_mut() {
                gwm.data_mut()[ch * kh * kw + kidx] += wacc;
            }
        }
    }
    (gx, gw)
}

// ---- generic fallback ----

fn generic_fwd(x: &Tensor, w: &Tensor, a: &ConvAttrs) -> Tensor {
    let (n, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, cing, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    let oh = conv_out_extent(h, kh, a.stride, a.padding, a.dilation);
    let ow = conv_out_extent(wd, kw, a.stride, a.padding, a.dilation);
    let (ipg, opg) = (cin / a.groups, cout / a.groups);
    let plan = plan_taps(h, wd, oh, ow, kh, kw, a);
    let contiguous = a.stride == 1;
    let mut out = Tensor::zeros(vec![n, cout, oh, ow]);
    let (xv, wv, ov) = (x.data(), w.data(), out.data_mut());
    for ni in 0..n {
        for g in 0..a.groups {
            for ocg in 0..opg {
                let oc = g * opg + ocg;
                let op = &mut ov[(ni * cout + oc) * oh * ow..(ni * cout + oc + 1) * oh * ow];
                for icg in 0..ipg {
                    let ic = g * ipg + icg;
                    let xp = &xv[(ni * cin + ic) * h * wd..(ni * cin + ic + 1) * h * wd];
                    let wk = &wv[(oc * cing + icg) * kh * kw..(oc * cing + icg + 1) * kh * kw];
                    for &(oy_lo, oy_hi, kidx, ox_lo, ox_hi, ox_off) in &plan.taps {
                        let weight = wk[kidx];
                        let oy_off = plan.oy_off[kidx / kw];
                        let seg = ox_hi - ox_lo;
                        for oy in oy_lo..oy_hi {
                            let iy = ((oy * a.stride) as isize + oy_off) as usize;
                            let orow = &mut op[oy * ow + ox_lo..oy * ow + ox_hi];
                            if contiguous {
                                let ix_lo = iy * wd + (ox_lo as isize + ox_off) as usize;
                                axpy(orow, weight, &xp[ix_lo..ix_lo + seg]);
                            } else {
                                let mut ix = (ox_lo * a.stride) as isize + ox_off + (iy * wd) as isize;
                                for o in orow.iter_mut() {
                                    *o += weight * xp[ix as usize];
                                    ix += a.stride as isize;
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

#[allow(clippy::too_many_arguments)]
fn generic_bwd(
    x: &Tensor,
    w: &Tensor,
    a: &ConvAttrs,
    gout: &Tensor,
    want_gx: bool,
    want_gw: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (n, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, cing, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    let (oh, ow) = (gout.dim(2), gout.dim(3));
    let (ipg, opg) = (cin / a.groups, cout / a.groups);
    let plan = plan_taps(h, wd, oh, ow, kh, kw, a);
    let contiguous = a.stride == 1;
    let mut gx = want_gx.then(|| Tensor::zeros(vec![n, cin, h, wd]));
    let mut gw = want_gw.then(|| Tensor::zeros(vec![cout, cing, kh, kw]));
    let (xv, wv, gv) = (x.data(), w.data(), gout.data());
    for ni in 0..n {
        for g in 0..a.groups {
            for ocg in 0..opg {
                let oc = g * opg + ocg;
                let gp = &gv[(ni * cout + oc) * oh * ow..(ni * cout + oc + 1) * oh * ow];
                for icg in 0..ipg {
                    let ic = g * ipg + icg;
                    let xbase = (ni * cin + ic) * h * wd;
                    let wbase = (oc * cing + icg) * kh * kw;
                    for &(oy_lo, oy_hi, kidx, ox_lo, ox_hi, ox_off) in &plan.taps {
                        let weight = wv[wbase + kidx];
                        let oy_off = plan.oy_off[kidx / kw];
                        let seg = ox_hi - ox_lo;
                        let mut wacc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = ((oy * a.stride) as isize + oy_off) as usize;
                            let grow = &gp[oy * ow + ox_lo..oy * ow + ox_hi];
                            if contiguous {
                                let ix_lo = xbase + iy * wd + (ox_lo as isize + ox_off) as usize;
                                if let Some(gxm) = gx.as_mut() {
                                    axpy(&mut gxm.data_mut()[ix_lo..ix_lo + seg], weight, grow);
                                }
                                if gw.is_some() {
                                    wacc += dot(grow, &xv[ix_lo..ix_lo + seg]);
                                }
                            } else {
                                let base = (xbase + iy * wd) as isize;
                                let mut ix = base + (ox_lo * a.stride) as isize + ox_off;
                                if let Some(gxm) = gx.as_mut() {
                                    let gxd = gxm.data_mut();
                                    for &gval in grow.iter() {
                                        gxd[ix as usize] += weight * gval;
                                        ix += a.stride as isize;
                                    }
                                    ix = base + (ox_lo * a.stride) as isize + ox_off;
                                }
                                if gw.is_some() {
                                    for &gval in grow.iter() {
                                        wacc += xv[ix as usize] * gval;
                                        ix += a.stride as isize;
                                    }
                                }
                            }
                        }
                        if let Some(gwm) = gw.as_mut() {
                            gwm.data_mut()[wbase + kidx] += wacc;
                        }
                    }
                }
            }
        }
    }
    (gx, gw)
}

/// `x`: (N, Cin, H, W), `w`: (Cout, Cin/groups, kh, kw) -> (N, Cout, oh, ow).
pub fn conv2d_fwd(x: &Tensor, w: &Tensor, a: &ConvAttrs) -> Tensor {
    if is_pointwise(w, a) {
        pw_fwd(x, w)
    } else if is_depthwise(x, w, a) {
        dw_fwd(x, w, a)
    } else {
        generic_fwd(x, w, a)
    }
}

/// Gradients of a conv2d w.r.t. input and weights. Either output may be
/// skipped by passing `false`.
pub fn conv2d_bwd(
    x: &Tensor,
    w: &Tensor,
    a: &ConvAttrs,
    gout: &Tensor,
    want_gx: bool,
    want_gw: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    if is_pointwise(w, a) {
        pw_bwd(x, w, gout, want_gx, want_gw)
    } else if is_depthwise(x, w, a) {
        dw_bwd(x, w, a, gout, want_gx, want_gw)
    } else {
        generic_bwd(x, w, a, gout, want_gx, want_gw)
    }
}

/// Max pooling; padding cells never win. Returns per-output argmax as a
/// plane-local input index, used to route gradients.
pub fn maxpool_fwd(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> (Tensor, Vec<u32>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let oh = conv_out_extent(h, kernel, stride, padding, 1);
    let ow = conv_out_extent(w, kernel, stride, padding, 1);
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let xv = x.data();
    let ov = out.data_mut();
    for plane in 0..n * c {
        let xp = &xv[plane * h * w..(plane + 1) * h * w];
        let op = &mut ov[plane * oh * ow..(plane + 1) * oh * ow];
        let ap = &mut argmax[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            let y0 = (oy * stride) as isize - padding as isize;
            let ky_lo = if y0 < 0 { (-y0) as usize } else { 0 };
            let ky_hi = kernel.min((h as isize - y0).max(0) as usize);
            for ox in 0..ow {
                let x0 = (ox * stride) as isize - padding as isize;
                let kx_lo = if x0 < 0 { (-x0) as usize } else { 0 };
                let kx_hi = kernel.min((w as isize - x0).max(0) as usize);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in ky_lo..ky_hi {
                    let iy = (y0 + ky as isize) as usize;
                    let row = iy * w;
                    for kx in kx_lo..kx_hi {
                        let idx = row + (x0 + kx as isize) as usize;
                        let v = xp[idx];
                        let take = v > best;
                        best = if take { v } else { best };
                        best_idx = if take { idx } else { best_idx };
                    }
                }
                op[oy * ow + ox] = best;
                ap[oy * ow + ox] = best_idx as u32;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_bwd(x_shape: &[usize], gout: &Tensor, argmax: &[u32]) -> Tensor {
    let (h, w) = (x_shape[2], x_shape[3]);
    let (oh, ow) = (gout.dim(2), gout.dim(3));
    let mut gx = Tensor::zeros(x_shape.to_vec());
    let gv = gout.data();
    let gxd = gx.data_mut();
    for plane in 0..x_shape[0] * x_shape[1] {
        let obase = plane * oh * ow;
        let ibase = plane * h * w;
        for o in 0..oh * ow {
            gxd[ibase + argmax[obase + o] as usize] += gv[obase + o];
        }
    }
    gx
}

/// Average pooling computed separably (horizontal then vertical sums);
/// the divisor is always `kernel*kernel` (padding counts).
pub fn avgpool_fwd(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Tensor {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let oh = conv_out_extent(h, kernel, stride, padding, 1);
    let ow = conv_out_extent(w, kernel, stride, padding, 1);
    let inv = 1.0 / (kernel * kernel) as f64;
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let xv = x.data();
    let ov = out.data_mut();
    let mut hsum = vec![0.0; h * ow];
    for plane in 0..n * c {
        let xp = &xv[plane * h * w..(plane + 1) * h * w];
        let op = &mut ov[plane * oh * ow..(plane + 1) * oh * ow];
        // horizontal window sums at full row resolution
        hsum.iter_mut().for_each(|v| *v = 0.0);
        for (iy, xrow) in xp.chunks_exact(w).enumerate() {
            let hrow = &mut hsum[iy * ow..(iy + 1) * ow];
            for kx in 0..kernel {
                let off = kx as isize - padding as isize;
                let (lo, hi) = valid_range(w, ow, stride, off);
                if hi <= lo {
                    continue;
                }
                if stride == 1 {
                    let ix_lo = (lo as isize + off) as usize;
                    axpy(&mut hrow[lo..hi], 1.0, &xrow[ix_lo..ix_lo + (hi - lo)]);
                } else {
                    let mut ix = (lo * stride) as isize + off;
                    for o in hrow[lo..hi].iter_mut() {
                        *o += xrow[ix as usize];
                        ix += stride as isize;
                    }
                }
            }
        }
        // vertical window sums over the horizontal sums
        for ky in 0..kernel {
            let off = ky as isize - padding as isize;
            let (lo, hi) = valid_range(h, oh, stride, off);
            for oy in lo..hi {
                let iy = ((oy * stride) as isize + off) as usize;
                axpy(&mut op[oy * ow..(oy + 1) * ow], 1.0, &hsum[iy * ow..(iy + 1) * ow]);
            }
        }
        op.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

pub fn avgpool_bwd(x_shape: &[usize], gout: &Tensor, kernel: usize, stride: usize, padding: usize) -> Tensor {
    let (h, w) = (x_shape[2], x_shape[3]);
    let (oh, ow) = (gout.dim(2), gout.dim(3));
    let inv = 1.0 / (kernel * kernel) as f64;
    let mut gx = Tensor::zeros(x_shape.to_vec());
    let gv = gout.data();
    let gxd = gx.data_mut();
    let mut ghsum = vec![0.0; h * ow];
    for plane in 0..x_shape[0] * x_shape[1] {
        let gp = &gv[plane * oh * ow..(plane + 1) * oh * ow];
        let xp = &mut gxd[plane * h * w..(plane + 1) * h * w];
        ghsum.iter_mut().for_each(|v| *v = 0.0);
        // reverse of the vertical pass
        for ky in 0..kernel {
            let off = ky as isize - padding as isize;
            let (lo, hi) = valid_range(h, oh, stride, off);
            for oy in lo..hi {
                let iy = ((oy * stride) as isize + off) as usize;
                axpy(&mut ghsum[iy * ow..(iy + 1) * ow], inv, &gp[oy * ow..(oy + 1) * ow]);
            }
        }
        // reverse of the horizontal pass
        for (iy, xrow) in xp.chunks_exact_mut(w).enumerate() {
            let hrow = &ghsum[iy * ow..(iy + 1) * ow];
            for kx in 0..kernel {
                let off = kx as isize - padding as isize;
                let (lo, hi) = valid_range(w, ow, stride, off);
                if hi <= lo {
                    continue;
                }
                if stride == 1 {
                    let ix_lo = (lo as isize + off) as usize;
                    axpy(&mut xrow[ix_lo..ix_lo + (hi - lo)], 1.0, &hrow[lo..hi]);
                } else {
                    let mut ix = (lo * stride) as isize + off;
                    for &g in hrow[lo..hi].iter() {
                        xrow[ix as usize] += g;
                        ix += stride as isize;
                    }
                }
            }
        }
    }
    gx
}

/// Training-mode batch norm over (N, H, W) per channel with biased variance.
/// Returns (y, per-channel mean, per-channel 1/sqrt(var+eps)).
pub fn batchnorm_fwd(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let m = (n * h * w) as f64;
    let xv = x.data();
    let mut mean = vec![0.0; c];
    let mut inv_std = vec![0.0; c];
    let mut out = Tensor::zeros(vec![n, c, h, w]);
    let hw = h * w;
    for ch in 0..c {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for ni in 0..n {
            let plane = &xv[(ni * c + ch) * hw..(ni * c + ch + 1) * hw];
            for &v in plane {
                sum += v;
                sq += v * v;
            }
        }
        let mu = sum / m;
        let var = (sq / m - mu * mu).max(0.0);
        mean[ch] = mu;
        inv_std[ch] = 1.0 / (var + eps).sqrt();
    }
    let ov = out.data_mut();
    let (gv, bv) = (gamma.data(), beta.data());
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * hw;
            let scale = inv_std[ch] * gv[ch];
            let shift = bv[ch] - mean[ch] * scale;
            for i in 0..hw {
                ov[base + i] = xv[base + i] * scale + shift;
            }
        }
    }
    (out, mean, inv_std)
}

pub fn batchnorm_bwd(
    x: &Tensor,
    gamma: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
    gout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let hw = h * w;
    let m = (n * hw) as f64;
    let xv = x.data();
    let gv = gout.data();
    let mut sum_g = vec![0.0; c];
    let mut sum_gxhat = vec![0.0; c];
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * hw;
            let (mu, istd) = (mean[ch], inv_std[ch]);
            let mut sg = 0.0;
            let mut sgx = 0.0;
            for i in 0..hw {
                let g = gv[base + i];
                sg += g;
                sgx += g * (xv[base + i] - mu) * istd;
            }
            sum_g[ch] += sg;
            sum_gxhat[ch] += sgx;
        }
    }
    let mut gx = Tensor::zeros(vec![n, c, h, w]);
    let gxd = gx.data_mut();
    let gammav = gamma.data();
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * hw;
            let (mu, istd) = (mean[ch], inv_std[ch]);
            let scale = gammav[ch] * istd;
            let (mg, mgx) = (sum_g[ch] / m, sum_gxhat[ch] / m);
            for i in 0..hw {
                let xhat = (xv[base + i] - mu) * istd;
                gxd[base + i] = scale * (gv[base + i] - mg - xhat * mgx);
            }
        }
    }
    let ggamma = Tensor::from_vec(vec![c], sum_gxhat).expect("shape");
    let gbeta = Tensor::from_vec(vec![c], sum_g).expect("shape");
    (gx, ggamma, gbeta)
}

/// `x`: (N, I), `w`: (O, I), `b`: (O) -> (N, O).
pub fn linear_fwd(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, i) = (x.dim(0), x.dim(1));
    let o = w.dim(0);
    let mut out = Tensor::zeros(vec![n, o]);
    let (xv, wv, bv) = (x.data(), w.data(), b.data());
    let ov = out.data_mut();
    for ni in 0..n {
        let xrow = &xv[ni * i..(ni + 1) * i];
        let orow = &mut ov[ni * o..(ni + 1) * o];
        for oi in 0..o {
            orow[oi] = bv[oi] + dot(xrow, &wv[oi * i..(oi + 1) * i]);
        }
    }
    out
}

pub fn linear_bwd(x: &Tensor, w: &Tensor, gout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, i) = (x.dim(0), x.dim(1));
    let o = w.dim(0);
    let mut gx = Tensor::zeros(vec![n, i]);
    let mut gw = Tensor::zeros(vec![o, i]);
    let mut gb = Tensor::zeros(vec![o]);
    let (xv, wv, gv) = (x.data(), w.data(), gout.data());
    {
        let gxd = gx.data_mut();
        for ni in 0..n {
            let grow = &gv[ni * o..(ni + 1) * o];
            let gxrow = &mut gxd[ni * i..(ni + 1) * i];
            for oi in 0..o {
                let g = grow[oi];
                if g != 0.0 {
                    axpy(gxrow, g, &wv[oi * i..(oi + 1) * i]);
                }
            }
        }
    }
    {
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for ni in 0..n {
            let grow = &gv[ni * o..(ni + 1) * o];
            let xrow = &xv[ni * i..(ni + 1) * i];
            for oi in 0..o {
                let g = grow[oi];
                gbd[oi] += g;
                if g != 0.0 {
                    axpy(&mut gwd[oi * i..(oi + 1) * i], g, xrow);
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Softmax along the last axis with max subtraction.
pub fn softmax_fwd(x: &Tensor) -> Tensor {
    let last = *x.shape().last().expect("softmax on empty shape");
    let rows = x.numel() / last;
    let mut out = x.clone();
    let ov = out.data_mut();
    for r in 0..rows {
        let row = &mut ov[r * last..(r + 1) * last];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub fn softmax_bwd(y: &Tensor, gout: &Tensor) -> Tensor {
    let last = *y.shape().last().expect("softmax on empty shape");
    let rows = y.numel() / last;
    let mut gx = Tensor::zeros(y.shape().to_vec());
    let (yv, gv) = (y.data(), gout.data());
    let gxd = gx.data_mut();
    for r in 0..rows {
        let yrow = &yv[r * last..(r + 1) * last];
        let grow = &gv[r * last..(r + 1) * last];
        let dotv = dot(yrow, grow);
        for i in 0..last {
            gxd[r * last + i] = yrow[i] * (grow[i] - dotv);
        }
    }
    gx
}

/// Mean over the batch of `-log softmax(logits)[label]`, computed via
/// log-sum-exp so saturated logits stay finite.
pub fn cross_entropy_fwd(logits: &Tensor, labels: &[usize]) -> f64 {
    let (n, c) = (logits.dim(0), logits.dim(1));
    let lv = logits.data();
    let mut total = 0.0;
    for (ni, &label) in labels.iter().enumerate() {
        let row = &lv[ni * c..(ni + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    total / n as f64
}

pub fn cross_entropy_bwd(logits: &Tensor, labels: &[usize], gscalar: f64) -> Tensor {
    let (n, c) = (logits.dim(0), logits.dim(1));
    let scale = gscalar / n as f64;
    let mut gx = softmax_fwd(logits);
    let gxd = gx.data_mut();
    for (ni, &label) in labels.iter().enumerate() {
        gxd[ni * c + label] -= 1.0;
        for v in gxd[ni * c..(ni + 1) * c].iter_mut() {
            *v *= scale;
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_vec(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_fwd(&x, &w, &ConvAttrs::default());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_stride_and_padding_shapes() {
        let x = Tensor::zeros(vec![2, 3, 8, 8]);
        let w = Tensor::zeros(vec![4, 3, 3, 3]);
        let y = conv2d_fwd(&x, &w, &ConvAttrs { stride: 2, padding: 1, dilation: 1, groups: 1 });
        assert_eq!(y.shape(), &[2, 4, 4, 4]);
    }

    #[test]
    fn depthwise_conv_keeps_channels_independent() {
        let x = Tensor::from_vec(vec![1, 2, 1, 1], vec![3.0, 5.0]).unwrap();
        let w = Tensor::from_vec(vec![2, 1, 1, 1], vec![2.0, 10.0]).unwrap();
        let y = conv2d_fwd(&x, &w, &ConvAttrs { stride: 1, padding: 0, dilation: 1, groups: 2 });
        assert_eq!(y.data(), &[6.0, 50.0]);
    }

    #[test]
    fn specialized_paths_match_generic() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut rt = |shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        // pointwise vs generic
        let x = rt(vec![2, 4, 5, 5]);
        let w = rt(vec![3, 4, 1, 1]);
        let a = ConvAttrs::default();
        let fast = pw_fwd(&x, &w);
        let slow = generic_fwd(&x, &w, &a);
        assert!(fast.max_abs_diff(&slow) < 1e-12);
        let g = rt(vec![2, 3, 5, 5]);
        let (fgx, fgw) = pw_bwd(&x, &w, &g, true, true);
        let (sgx, sgw) = generic_bwd(&x, &w, &a, &g, true, true);
        assert!(fgx.unwrap().max_abs_diff(&sgx.unwrap()) < 1e-12);
        assert!(fgw.unwrap().max_abs_diff(&sgw.unwrap()) < 1e-12);

        // depthwise (strided, dilated) vs generic
        let x = rt(vec![2, 3, 7, 7]);
        let w = rt(vec![3, 1, 3, 3]);
        let a = ConvAttrs { stride: 2, padding: 2, dilation: 2, groups: 3 };
        let fast = dw_fwd(&x, &w, &a);
        let slow = generic_fwd(&x, &w, &a);
        assert!(fast.max_abs_diff(&slow) < 1e-12);
        let g = rt(fast.shape().to_vec());
        let (fgx, fgw) = dw_bwd(&x, &w, &a, &g, true, true);
        let (sgx, sgw) = generic_bwd(&x, &w, &a, &g, true, true);
        assert!(fgx.unwrap().max_abs_diff(&sgx.unwrap()) < 1e-12);
        assert!(fgw.unwrap().max_abs_diff(&sgw.unwrap()) < 1e-12);
    }

    #[test]
    fn maxpool_matches_hand_sliding_window() {
        let x = Tensor::from_vec(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let (y, _) = maxpool_fwd(&x, 3, 1, 1);
        assert_eq!(y.data(), &[5.0, 6.0, 6.0, 8.0, 9.0, 9.0, 8.0, 9.0, 9.0]);
    }

    #[test]
    fn avgpool_matches_direct_window_sums() {
        let x = Tensor::from_vec(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let y = avgpool_fwd(&x, 3, 1, 1);
        // center window covers all nine values
        assert!((y.data()[4] - 45.0 / 9.0).abs() < 1e-12);
        // corner window covers four values
        assert!((y.data()[0] - (1.0 + 2.0 + 4.0 + 5.0) / 9.0).abs() < 1e-12);
    }

    #[test]
    fn strided_avgpool_matches_naive() {
        let x = Tensor::from_vec(vec![1, 1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
        let y = avgpool_fwd(&x, 3, 2, 1);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        // top-left window: rows/cols {0,1}, values 1,2,5,6
        assert!((y.data()[0] - 14.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_normalizes_batch() {
        let x = Tensor::from_vec(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gamma = Tensor::full(vec![1], 1.0);
        let beta = Tensor::zeros(vec![1]);
        let (y, mean, _) = batchnorm_fwd(&x, &gamma, &beta, 1e-5);
        assert!((mean[0] - 2.5).abs() < 1e-12);
        assert!(y.sum().abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_uniform_is_log_classes() {
        let logits = Tensor::zeros(vec![3, 4]);
        let loss = cross_entropy_fwd(&logits, &[0, 1, 2]);
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturates_to_zero() {
        // +1000 on the true class
        let logits = Tensor::from_vec(vec![1, 4], vec![1000.0, 0.0, 0.0, 0.0]).unwrap();
        let loss = cross_entropy_fwd(&logits, &[0]);
        assert!(loss.abs() < 1e-12);
        assert!(loss >= 0.0);
    }

    #[test]
    fn cross_entropy_two_class_closed_form() {
        // [[1, 2]], label 0: loss = ln(1 + e)
        let logits = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let loss = cross_entropy_fwd(&logits, &[0]);
        assert!((loss - (1.0 + std::f64::consts::E).ln()).abs() < 1e-12);
    }
}
