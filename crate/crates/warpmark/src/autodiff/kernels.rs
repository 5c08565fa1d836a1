//! Dense numeric kernels behind the tape operations.
//!
//! Everything here is plain slice arithmetic with fixed iteration order, so
//! forward values and gradients are bit-reproducible run to run.

use super::{Padding, Real};
use crate::error::{Error, Result};

pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// dA = dC · Bᵀ, where dC is (m, n) and B is (k, n).
pub(crate) fn matmul_grad_lhs<T: Real>(go: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut da = vec![T::zero(); m * k];
    for i in 0..m {
        let go_row = &go[i * n..(i + 1) * n];
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = T::zero();
            for (&g, &bv) in go_row.iter().zip(b_row) {
                acc += g * bv;
            }
            da[i * k + kk] = acc;
        }
    }
    da
}

/// dB = Aᵀ · dC, where A is (m, k) and dC is (m, n).
pub(crate) fn matmul_grad_rhs<T: Real>(a: &[T], go: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut db = vec![T::zero(); k * n];
    for i in 0..m {
        let go_row = &go[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let db_row = &mut db[kk * n..(kk + 1) * n];
            for (d, &g) in db_row.iter_mut().zip(go_row) {
                *d += aik * g;
            }
        }
    }
    db
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvDims {
    fn hp(&self) -> usize {
        self.h + 2 * self.ph
    }
    fn wp(&self) -> usize {
        self.w + 2 * self.pw
    }
}

pub(crate) fn conv_dims(
    op: &'static str,
    input: &[usize],
    kernel: &[usize],
    pad: Padding,
) -> Result<ConvDims> {
    if input.len() != 3 || kernel.len() != 4 || kernel[1] != input[0] {
        return Err(Error::Shape {
            op,
            lhs: input.to_vec(),
            rhs: kernel.to_vec(),
        });
    }
    let (c_in, h, w) = (input[0], input[1], input[2]);
    let (c_out, kh, kw) = (kernel[0], kernel[2], kernel[3]);
    let (ph, pw) = match pad {
        Padding::Valid => (0, 0),
        Padding::Zero | Padding::Replicate => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::Usage(format!(
                    "{op}: same-size padding needs odd kernel, got {kh}x{kw}"
                )));
            }
            (kh / 2, kw / 2)
        }
    };
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(Error::Shape {
            op,
            lhs: input.to_vec(),
            rhs: kernel.to_vec(),
        });
    }
    Ok(ConvDims {
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        ph,
        pw,
        h_out: h + 2 * ph - kh + 1,
        w_out: w + 2 * pw - kw + 1,
    })
}

/// Copies the input into a `(C, H + 2ph, W + 2pw)` buffer with zero or
/// replicated borders. `Valid` padding returns the input unchanged.
pub(crate) fn pad_input<T: Real>(input: &[T], d: &ConvDims, pad: Padding) -> Vec<T> {
    if d.ph == 0 && d.pw == 0 {
        return input.to_vec();
    }
    let (hp, wp) = (d.hp(), d.wp());
    let mut out = vec![T::zero(); d.c_in * hp * wp];
    for c in 0..d.c_in {
        let src_plane = &input[c * d.h * d.w..(c + 1) * d.h * d.w];
        let dst_plane = &mut out[c * hp * wp..(c + 1) * hp * wp];
        for py in 0..hp {
            let sy = match pad {
                Padding::Replicate => py.saturating_sub(d.ph).min(d.h - 1),
                _ => {
                    if py < d.ph || py >= d.ph + d.h {
                        continue;
                    }
                    py - d.ph
                }
            };
            let src_row = &src_plane[sy * d.w..(sy + 1) * d.w];
            let dst_row = &mut dst_plane[py * wp..(py + 1) * wp];
            match pad {
                Padding::Replicate => {
                    for (px, dv) in dst_row.iter_mut().enumerate() {
                        let sx = px.saturating_sub(d.pw).min(d.w - 1);
                        *dv = src_row[sx];
                    }
                }
                _ => dst_row[d.pw..d.pw + d.w].copy_from_slice(src_row),
            }
        }
    }
    out
}

/// Folds a padded-buffer gradient back onto the input. Replicated border
/// cells accumulate into the edge pixels they mirrored.
pub(crate) fn fold_padding<T: Real>(dpadded: &[T], d: &ConvDims, pad: Padding) -> Vec<T> {
    if d.ph == 0 && d.pw == 0 {
        return dpadded.to_vec();
    }
    let (hp, wp) = (d.hp(), d.wp());
    let mut out = vec![T::zero(); d.c_in * d.h * d.w];
    for c in 0..d.c_in {
        let src_plane = &dpadded[c * hp * wp..(c + 1) * hp * wp];
        let dst_plane = &mut out[c * d.h * d.w..(c + 1) * d.h * d.w];
        match pad {
            Padding::Replicate => {
                for py in 0..hp {
                    let sy = py.saturating_sub(d.ph).min(d.h - 1);
                    for px in 0..wp {
                        let sx = px.saturating_sub(d.pw).min(d.w - 1);
                        dst_plane[sy * d.w + sx] += src_plane[py * wp + px];
                    }
                }
            }
            _ => {
                for y in 0..d.h {
                    let src_row = &src_plane[(y + d.ph) * wp + d.pw..(y + d.ph) * wp + d.pw + d.w];
                    let dst_row = &mut dst_plane[y * d.w..(y + 1) * d.w];
                    for (dv, &sv) in dst_row.iter_mut().zip(src_row) {
                        *dv += sv;
                    }
                }
            }
        }
    }
    out
}

/// Cross-correlation of the padded input with the kernel bank.
pub(crate) fn conv2d_forward<T: Real>(padded: &[T], kernel: &[T], d: &ConvDims) -> Vec<T> {
    let wp = d.wp();
    let mut out = vec![T::zero(); d.c_out * d.h_out * d.w_out];
    for oc in 0..d.c_out {
        let out_plane = &mut out[oc * d.h_out * d.w_out..(oc + 1) * d.h_out * d.w_out];
        for c in 0..d.c_in {
            let in_plane = &padded[c * d.hp() * wp..(c + 1) * d.hp() * wp];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let kv = kernel[((oc * d.c_in + c) * d.kh + ky) * d.kw + kx];
                    for y in 0..d.h_out {
                        let src = &in_plane[(y + ky) * wp + kx..(y + ky) * wp + kx + d.w_out];
                        let dst = &mut out_plane[y * d.w_out..(y + 1) * d.w_out];
                        for (dv, &sv) in dst.iter_mut().zip(src) {
                            *dv += kv * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_grad_kernel<T: Real>(padded: &[T], go: &[T], d: &ConvDims) -> Vec<T> {
    let wp = d.wp();
    let mut dk = vec![T::zero(); d.c_out * d.c_in * d.kh * d.kw];
    for oc in 0..d.c_out {
        let go_plane = &go[oc * d.h_out * d.w_out..(oc + 1) * d.h_out * d.w_out];
        for c in 0..d.c_in {
            let in_plane = &padded[c * d.hp() * wp..(c + 1) * d.hp() * wp];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let mut acc = T::zero();
                    for y in 0..d.h_out {
                        let src = &in_plane[(y + ky) * wp + kx..(y + ky) * wp + kx + d.w_out];
                        let gr = &go_plane[y * d.w_out..(y + 1) * d.w_out];
                        for (&sv, &gv) in src.iter().zip(gr) {
                            acc += sv * gv;
                        }
                    }
                    dk[((oc * d.c_in + c) * d.kh + ky) * d.kw + kx] = acc;
                }
            }
        }
    }
    dk
}

pub(crate) fn conv2d_grad_padded<T: Real>(kernel: &[T], go: &[T], d: &ConvDims) -> Vec<T> {
    let wp = d.wp();
    let mut dp = vec![T::zero(); d.c_in * d.hp() * wp];
    for oc in 0..d.c_out {
        let go_plane = &go[oc * d.h_out * d.w_out..(oc + 1) * d.h_out * d.w_out];
        for c in 0..d.c_in {
            let dp_plane = &mut dp[c * d.hp() * wp..(c + 1) * d.hp() * wp];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let kv = kernel[((oc * d.c_in + c) * d.kh + ky) * d.kw + kx];
                    for y in 0..d.h_out {
                        let dst = &mut dp_plane[(y + ky) * wp + kx..(y + ky) * wp + kx + d.w_out];
                        let gr = &go_plane[y * d.w_out..(y + 1) * d.w_out];
                        for (dv, &gv) in dst.iter_mut().zip(gr) {
                            *dv += kv * gv;
                        }
                    }
                }
            }
        }
    }
    dp
}

pub(crate) fn avg_pool2_forward<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = lit::<T>(0.25);
    let mut out = vec![T::zero(); c * ho * wo];
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        let out_plane = &mut out[ci * ho * wo..(ci + 1) * ho * wo];
        for y in 0..ho {
            let r0 = &plane[2 * y * w..2 * y * w + w];
            let r1 = &plane[(2 * y + 1) * w..(2 * y + 1) * w + w];
            for x in 0..wo {
                out_plane[y * wo + x] =
                    (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_grad<T: Real>(go: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = lit::<T>(0.25);
    let mut di = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let go_plane = &go[ci * ho * wo..(ci + 1) * ho * wo];
        let di_plane = &mut di[ci * h * w..(ci + 1) * h * w];
        for y in 0..ho {
            for x in 0..wo {
                let g = go_plane[y * wo + x] * quarter;
                di_plane[2 * y * w + 2 * x] += g;
                di_plane[2 * y * w + 2 * x + 1] += g;
                di_plane[(2 * y + 1) * w + 2 * x] += g;
                di_plane[(2 * y + 1) * w + 2 * x + 1] += g;
            }
        }
    }
    di
}

use super::lit;

/// Bilinear neighborhood of one clamped sample position.
struct Cell<T> {
    x0: usize,
    y0: usize,
    fx: T,
    fy: T,
    /// Whether the (u, v) coordinate was strictly clamped per component.
    u_free: bool,
    v_free: bool,
}

fn locate<T: Real>(u: T, v: T, h: usize, w: usize) -> Cell<T> {
    let w_max = lit::<T>((w - 1) as f64);
    let h_max = lit::<T>((h - 1) as f64);
    let uc = u.min(w_max).max(T::zero());
    let vc = v.min(h_max).max(T::zero());
    let (x0, fx) = if w > 1 {
        let x0 = uc.floor().min(lit::<T>((w - 2) as f64));
        (x0.to_f64() as usize, uc - x0)
    } else {
        (0, T::zero())
    };
    let (y0, fy) = if h > 1 {
        let y0 = vc.floor().min(lit::<T>((h - 2) as f64));
        (y0.to_f64() as usize, vc - y0)
    } else {
        (0, T::zero())
    };
    Cell {
        x0,
        y0,
        fx,
        fy,
        u_free: u >= T::zero() && u <= w_max && w > 1,
        v_free: v >= T::zero() && v <= h_max && h > 1,
    }
}

pub(crate) fn grid_sample_forward<T: Real>(img: &[T], h: usize, w: usize, coords: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for (p, o) in out.iter_mut().enumerate() {
        let c = locate(coords[2 * p], coords[2 * p + 1], h, w);
        let x1 = (c.x0 + 1).min(w - 1);
        let y1 = (c.y0 + 1).min(h - 1);
        let i00 = img[c.y0 * w + c.x0];
        let i01 = img[c.y0 * w + x1];
        let i10 = img[y1 * w + c.x0];
        let i11 = img[y1 * w + x1];
        let top = i00 + (i01 - i00) * c.fx;
        let bot = i10 + (i11 - i10) * c.fx;
        *o = top + (bot - top) * c.fy;
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn grid_sample_grad<T: Real>(
    img: &[T],
    h: usize,
    w: usize,
    coords: &[T],
    n: usize,
    go: &[T],
    need_img: bool,
    need_coords: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let mut dimg = if need_img { Some(vec![T::zero(); h * w]) } else { None };
    let mut dco = if need_coords { Some(vec![T::zero(); 2 * n]) } else { None };
    let one = T::one();
    for p in 0..n {
        let g = go[p];
        let c = locate(coords[2 * p], coords[2 * p + 1], h, w);
        let x1 = (c.x0 + 1).min(w - 1);
        let y1 = (c.y0 + 1).min(h - 1);
        if let Some(d) = dimg.as_mut() {
            d[c.y0 * w + c.x0] += g * (one - c.fx) * (one - c.fy);
            d[c.y0 * w + x1] += g * c.fx * (one - c.fy);
            d[y1 * w + c.x0] += g * (one - c.fx) * c.fy;
            d[y1 * w + x1] += g * c.fx * c.fy;
        }
        if let Some(d) = dco.as_mut() {
            let i00 = img[c.y0 * w + c.x0];
            let i01 = img[c.y0 * w + x1];
            let i10 = img[y1 * w + c.x0];
            let i11 = img[y1 * w + x1];
            if c.u_free {
                d[2 * p] = g * ((i01 - i00) * (one - c.fy) + (i11 - i10) * c.fy);
            }
            if c.v_free {
                d[2 * p + 1] = g * ((i10 - i00) * (one - c.fx) + (i11 - i01) * c.fx);
            }
        }
    }
    (dimg, dco)
}
