//! 3D (and 2D, as the kT=1 special case) convolution, forward and backward.
//!
//! The production path lowers each sample to a patch matrix (im2col) and
//! multiplies against the flattened kernel bank. Patch matrices are built in
//! chunks of whole output rows to bound memory. Work items never share output
//! elements, so the rayon dispatch is deterministic.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gemm::{axpy, gemm_abt};
use crate::tensor::{ConvSpec, Tensor};

/// Target number of output positions per im2col chunk.
const CHUNK_POSITIONS: usize = 512;

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    t: usize,
    h: usize,
    w: usize,
    cout: usize,
    ot: usize,
    oh: usize,
    ow: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    st: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    ph: usize,
    pw: usize,
    /// Output positions per sample (ot * oh * ow).
    npos: usize,
    /// Patch-matrix rows (cin * kt * kh * kw).
    krows: usize,
}

fn geometry(input: &Tensor, spec: &ConvSpec) -> Result<Geometry> {
    if input.rank() != 5 {
        return Err(Error::shape("input rank", 5, input.rank()));
    }
    if input.dim(1) != spec.in_channels {
        return Err(Error::shape_in(
            "input channels",
            spec.in_channels,
            input.dim(1),
            "conv3d",
        ));
    }
    let (t, h, w) = (input.dim(2), input.dim(3), input.dim(4));
    let (ot, oh, ow) = spec.output_extents((t, h, w))?;
    let (kt, kh, kw) = spec.kernel;
    Ok(Geometry {
        n: input.dim(0),
        cin: spec.in_channels,
        t,
        h,
        w,
        cout: spec.out_channels,
        ot,
        oh,
        ow,
        kt,
        kh,
        kw,
        st: spec.stride.0,
        sh: spec.stride.1,
        sw: spec.stride.2,
        pt: spec.padding.0,
        ph: spec.padding.1,
        pw: spec.padding.2,
        npos: ot * oh * ow,
        krows: spec.in_channels * kt * kh * kw,
    })
}

fn check_weight_bias(weight: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<()> {
    let want = spec.weight_shape();
    if weight.shape() != want {
        let axes = ["weight out", "weight in", "weight kT", "weight kH", "weight kW"];
        for (i, axis) in axes.iter().enumerate() {
            if weight.dim(i) != want[i] {
                return Err(Error::shape_in(axis, want[i], weight.dim(i), "conv3d"));
            }
        }
        return Err(Error::shape("weight rank", 5, weight.rank()));
    }
    if bias.numel() != spec.out_channels {
        return Err(Error::shape_in(
            "bias channels",
            spec.out_channels,
            bias.numel(),
            "conv3d",
        ));
    }
    Ok(())
}

/// Valid owi range [lo, hi] (inclusive) for a kernel column offset, or None
/// when every position falls in the zero padding.
#[inline]
fn ow_span(g: &Geometry, kwi: usize) -> Option<(usize, usize)> {
    let lo = if g.pw > kwi {
        (g.pw - kwi).div_ceil(g.sw)
    } else {
        0
    };
    let hi_num = g.w as isize - 1 + g.pw as isize - kwi as isize;
    if hi_num < 0 {
        return None;
    }
    let hi = ((hi_num as usize) / g.sw).min(g.ow - 1);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// Fill `buf` (krows x cols) with patches for output rows [row0, row1) of one
/// sample, where a "row" is one (oti, ohi) pair spanning `ow` positions.
fn im2col_rows(x: &[f32], g: &Geometry, row0: usize, row1: usize, buf: &mut [f32]) {
    let cols = (row1 - row0) * g.ow;
    for r in 0..g.krows {
        let kwi = r % g.kw;
        let khi = (r / g.kw) % g.kh;
        let kti = (r / (g.kw * g.kh)) % g.kt;
        let ci = r / (g.kw * g.kh * g.kt);
        let span = ow_span(g, kwi);
        for row in row0..row1 {
            let oti = row / g.oh;
            let ohi = row % g.oh;
            let dst = &mut buf[r * cols + (row - row0) * g.ow..][..g.ow];
            let ti = (oti * g.st + kti) as isize - g.pt as isize;
            let hi = (ohi * g.sh + khi) as isize - g.ph as isize;
            if ti < 0 || ti >= g.t as isize || hi < 0 || hi >= g.h as isize {
                dst.fill(0.0);
                continue;
            }
            let Some((lo, hi_ow)) = span else {
                dst.fill(0.0);
                continue;
            };
            dst[..lo].fill(0.0);
            dst[hi_ow + 1..].fill(0.0);
            let base = ((ci * g.t + ti as usize) * g.h + hi as usize) * g.w;
            let wi0 = (lo * g.sw + kwi) as isize - g.pw as isize;
            debug_assert!(wi0 >= 0);
            let src_base = base + wi0 as usize;
            if g.sw == 1 {
                dst[lo..=hi_ow].copy_from_slice(&x[src_base..src_base + (hi_ow - lo + 1)]);
            } else {
                for (j, d) in dst[lo..=hi_ow].iter_mut().enumerate() {
                    *d = x[src_base + j * g.sw];
                }
            }
        }
    }
}

/// Scatter-add `buf` (krows x cols) back into one sample's input gradient.
fn col2im_rows(gx: &mut [f32], g: &Geometry, row0: usize, row1: usize, buf: &[f32]) {
    let cols = (row1 - row0) * g.ow;
    for r in 0..g.krows {
        let kwi = r % g.kw;
        let khi = (r / g.kw) % g.kh;
        let kti = (r / (g.kw * g.kh)) % g.kt;
        let ci = r / (g.kw * g.kh * g.kt);
        let Some((lo, hi_ow)) = ow_span(g, kwi) else {
            continue;
        };
        for row in row0..row1 {
            let oti = row / g.oh;
            let ohi = row % g.oh;
            let ti = (oti * g.st + kti) as isize - g.pt as isize;
            let hi = (ohi * g.sh + khi) as isize - g.ph as isize;
            if ti < 0 || ti >= g.t as isize || hi < 0 || hi >= g.h as isize {
                continue;
            }
            let src = &buf[r * cols + (row - row0) * g.ow..][..g.ow];
            let base = ((ci * g.t + ti as usize) * g.h + hi as usize) * g.w;
            let wi0 = (lo * g.sw + kwi) as isize - g.pw as isize;
            let dst_base = base + wi0 as usize;
            for (j, s) in src[lo..=hi_ow].iter().enumerate() {
                gx[dst_base + j * g.sw] += s;
            }
        }
    }
}

fn row_chunks(g: &Geometry) -> Vec<(usize, usize)> {
    let total_rows = g.ot * g.oh;
    let rows_per_chunk = (CHUNK_POSITIONS / g.ow).max(1);
    let mut out = Vec::new();
    let mut r = 0;
    while r < total_rows {
        let end = (r + rows_per_chunk).min(total_rows);
        out.push((r, end));
        r = end;
    }
    out
}

/// Direct cross-correlation plus bias over NCTHW input; weight is
/// (out, in, kT, kH, kW) and the output extents follow the ConvSpec formula.
pub fn conv3d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let g = geometry(input, spec)?;
    check_weight_bias(weight, bias, spec)?;
    let mut out = Tensor::zeros(&[g.n, g.cout, g.ot, g.oh, g.ow]);

    let chunks = row_chunks(&g);
    let mut items = Vec::with_capacity(g.n * chunks.len());
    for ni in 0..g.n {
        for &(r0, r1) in &chunks {
            items.push((ni, r0, r1));
        }
    }

    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let sample_len = g.cin * g.t * g.h * g.w;

    // Each item computes a disjoint (sample, row-range) output block.
    let blocks: Vec<Vec<f32>> = items
        .par_iter()
        .map(|&(ni, r0, r1)| {
            let cols = (r1 - r0) * g.ow;
            let mut buf = vec![0.0f32; g.krows * cols];
            im2col_rows(&x[ni * sample_len..(ni + 1) * sample_len], &g, r0, r1, &mut buf);
            let mut block = vec![0.0f32; g.cout * cols];
            for co in 0..g.cout {
                block[co * cols..(co + 1) * cols].fill(b[co]);
            }
            // block += W (cout x krows) * buf (krows x cols), k-outer axpy.
            for r in 0..g.krows {
                let b_row = &buf[r * cols..(r + 1) * cols];
                for co in 0..g.cout {
                    let wv = wt[co * g.krows + r];
                    if wv != 0.0 {
                        axpy(&mut block[co * cols..(co + 1) * cols], wv, b_row);
                    }
                }
            }
            block
        })
        .collect();

    let o = out.data_mut();
    for (&(ni, r0, r1), block) in items.iter().zip(blocks.iter()) {
        let cols = (r1 - r0) * g.ow;
        for co in 0..g.cout {
            let dst = &mut o[(ni * g.cout + co) * g.npos + r0 * g.ow..][..cols];
            dst.copy_from_slice(&block[co * cols..(co + 1) * cols]);
        }
    }
    Ok(out)
}

/// Chain-rule gradients for `conv3d_forward`: returns (grad_input,
/// grad_weight, grad_bias).
pub fn conv3d_backward(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = geometry(saved_input, spec)?;
    let bias_probe = Tensor::zeros(&[g.cout]);
    check_weight_bias(weight, &bias_probe, spec)?;
    let want = [g.n, g.cout, g.ot, g.oh, g.ow];
    if grad_out.shape() != want {
        let axes = ["grad_out batch", "grad_out channels", "grad_out T", "grad_out H", "grad_out W"];
        for (i, axis) in axes.iter().enumerate() {
            if grad_out.dim(i) != want[i] {
                return Err(Error::shape_in(axis, want[i], grad_out.dim(i), "conv3d backward"));
            }
        }
        return Err(Error::shape("grad_out rank", 5, grad_out.rank()));
    }

    let x = saved_input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let sample_len = g.cin * g.t * g.h * g.w;
    let chunks = row_chunks(&g);

    // Per-sample partials, reduced in sample order below.
    let partials: Vec<(Vec<f32>, Vec<f32>, Vec<f32>)> = (0..g.n)
        .into_par_iter()
        .map(|ni| {
            let xs = &x[ni * sample_len..(ni + 1) * sample_len];
            let gos = &go[ni * g.cout * g.npos..(ni + 1) * g.cout * g.npos];
            let mut gx = vec![0.0f32; sample_len];
            let mut gw = vec![0.0f32; g.cout * g.krows];
            let mut gb = vec![0.0f32; g.cout];
            for co in 0..g.cout {
                let mut acc = 0.0f32;
                for v in &gos[co * g.npos..(co + 1) * g.npos] {
                    acc += v;
                }
                gb[co] = acc;
            }
            let max_cols = chunks.iter().map(|&(a, b)| (b - a) * g.ow).max().unwrap_or(0);
            let mut buf = vec![0.0f32; g.krows * max_cols];
            let mut go_chunk = vec![0.0f32; g.cout * max_cols];
            let mut gbuf = vec![0.0f32; g.krows * max_cols];
            for &(r0, r1) in &chunks {
                let cols = (r1 - r0) * g.ow;
                im2col_rows(xs, &g, r0, r1, &mut buf[..g.krows * cols]);
                for co in 0..g.cout {
                    go_chunk[co * cols..(co + 1) * cols]
                        .copy_from_slice(&gos[co * g.npos + r0 * g.ow..][..cols]);
                }
                // gw (cout x krows) += go_chunk (cout x cols) * buf^T.
                gemm_abt(
                    &go_chunk[..g.cout * cols],
                    cols,
                    &buf[..g.krows * cols],
                    cols,
                    &mut gw,
                    g.krows,
                    g.cout,
                    g.krows,
                    cols,
                );
                // gbuf (krows x cols) = W^T * go_chunk.
                gbuf[..g.krows * cols].fill(0.0);
                for co in 0..g.cout {
                    let go_row = &go_chunk[co * cols..(co + 1) * cols];
                    for r in 0..g.krows {
                        let wv = wt[co * g.krows + r];
                        if wv != 0.0 {
                            axpy(&mut gbuf[r * cols..(r + 1) * cols], wv, go_row);
                        }
                    }
                }
                col2im_rows(&mut gx, &g, r0, r1, &gbuf[..g.krows * cols]);
            }
            (gx, gw, gb)
        })
        .collect();

    let mut grad_input = Tensor::zeros(saved_input.shape());
    let mut grad_weight = Tensor::zeros(weight.shape());
    let mut grad_bias = Tensor::zeros(&[g.cout]);
    let gxd = grad_input.data_mut();
    for (ni, (gx, gw, gb)) in partials.iter().enumerate() {
        gxd[ni * sample_len..(ni + 1) * sample_len].copy_from_slice(gx);
        for (d, s) in grad_weight.data_mut().iter_mut().zip(gw.iter()) {
            *d += s;
        }
        for (d, s) in grad_bias.data_mut().iter_mut().zip(gb.iter()) {
            *d += s;
        }
    }
    Ok((grad_input, grad_weight, grad_bias))
}

/// ConvSpec for the 2D case (kT = 1 over a singleton T axis).
pub fn spec2d(
    in_channels: usize,
    out_channels: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<ConvSpec> {
    ConvSpec::new(
        in_channels,
        out_channels,
        (1, kernel.0, kernel.1),
        (1, stride.0, stride.1),
        (0, padding.0, padding.1),
    )
}

fn as_5d(t: &Tensor) -> Result<Tensor> {
    if t.rank() != 4 {
        return Err(Error::shape("input rank", 4, t.rank()));
    }
    t.reshape(&[t.dim(0), t.dim(1), 1, t.dim(2), t.dim(3)])
}

/// 2D analogue over NCHW input; weight is (out, in, kH, kW). The spec must
/// come from [`spec2d`].
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let x5 = as_5d(input)?;
    let w5 = weight.reshape(&[
        weight.dim(0),
        weight.dim(1),
        1,
        weight.dim(2),
        weight.dim(3),
    ])?;
    let out = conv3d_forward(&x5, &w5, bias, spec)?;
    out.reshape(&[out.dim(0), out.dim(1), out.dim(3), out.dim(4)])
}

pub fn conv2d_backward(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
) -> Result<(Tensor, Tensor, Tensor)> {
    let x5 = as_5d(saved_input)?;
    let w5 = weight.reshape(&[
        weight.dim(0),
        weight.dim(1),
        1,
        weight.dim(2),
        weight.dim(3),
    ])?;
    let go5 = as_5d(grad_out)?;
    let (gx, gw, gb) = conv3d_backward(&go5, &x5, &w5, spec)?;
    Ok((
        gx.reshape(&[gx.dim(0), gx.dim(1), gx.dim(3), gx.dim(4)])?,
        gw.reshape(weight.shape())?,
        gb,
    ))
}
