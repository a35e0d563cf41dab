//! Forward/backward kernels over flat NHWC buffers. The tape owns the
//! bookkeeping; everything here is a pure function of its arguments.

use super::element::{gemm, Element, Trans};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn positions(&self) -> usize {
        self.batch * self.height * self.width
    }
}

/// Rows of the unfolded patch matrix processed per GEMM call; keeps the
/// patch buffer around 256 KiB so it stays in cache.
fn chunk_rows(patch: usize) -> usize {
    (65_536 / patch).max(16)
}

/// Unfold `same`-padded k×k patches for output positions `r0..r1` into
/// `dst`, one row of `k*k*cin` values per position.
fn im2col_rows<T: Element>(input: &[T], g: &ConvGeometry, r0: usize, r1: usize, dst: &mut [T]) {
    let pad = g.kernel / 2;
    let patch = g.patch_len();
    let (h, w, c, k) = (g.height, g.width, g.in_channels, g.kernel);
    for r in r0..r1 {
        let row = &mut dst[(r - r0) * patch..(r - r0 + 1) * patch];
        let n = r / (h * w);
        let y = (r / w) % h;
        let x = r % w;
        let interior = y >= pad && y + pad < h && x >= pad && x + pad < w;
        if !interior {
            row.fill(T::zero());
        }
        // Valid kx range: 0 <= x + kx - pad < w.
        let kx0 = pad.saturating_sub(x);
        let kx1 = k.min(w + pad - x);
        let image = &input[n * h * w * c..(n + 1) * h * w * c];
        for ky in 0..k {
            let Some(sy) = (y + ky).checked_sub(pad).filter(|&sy| sy < h) else {
                continue;
            };
            let src = (sy * w + x + kx0 - pad) * c;
            let len = (kx1 - kx0) * c;
            let off = (ky * k + kx0) * c;
            row[off..off + len].copy_from_slice(&image[src..src + len]);
        }
    }
}

/// Adjoint of [`im2col_rows`]: scatter-add patch rows `r0..r1` onto `out`.
fn col2im_rows_add<T: Element>(src: &[T], g: &ConvGeometry, r0: usize, r1: usize, out: &mut [T]) {
    let pad = g.kernel / 2;
    let patch = g.patch_len();
    let (h, w, c, k) = (g.height, g.width, g.in_channels, g.kernel);
    for r in r0..r1 {
        let row = &src[(r - r0) * patch..(r - r0 + 1) * patch];
        let n = r / (h * w);
        let y = (r / w) % h;
        let x = r % w;
        let kx0 = pad.saturating_sub(x);
        let kx1 = k.min(w + pad - x);
        let image = &mut out[n * h * w * c..(n + 1) * h * w * c];
        for ky in 0..k {
            let Some(sy) = (y + ky).checked_sub(pad).filter(|&sy| sy < h) else {
                continue;
            };
            let dst = (sy * w + x + kx0 - pad) * c;
            let len = (kx1 - kx0) * c;
            let off = (ky * k + kx0) * c;
            for (d, &s) in image[dst..dst + len].iter_mut().zip(&row[off..off + len]) {
                *d = *d + s;
            }
        }
    }
}

/// Full patch matrix, `positions × patch_len`.
#[cfg(test)]
pub(crate) fn im2col<T: Element>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut cols = vec![T::zero(); g.positions() * g.patch_len()];
    im2col_rows(input, g, 0, g.positions(), &mut cols);
    cols
}

#[cfg(test)]
pub(crate) fn col2im<T: Element>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.height * g.width * g.in_channels];
    col2im_rows_add(cols, g, 0, g.positions(), &mut out);
    out
}

pub(crate) fn conv2d_forward<T: Element>(input: &[T], kernel: &[T], g: &ConvGeometry) -> Vec<T> {
    let (patch, cout) = (g.patch_len(), g.out_channels);
    let step = chunk_rows(patch);
    let mut out = vec![T::zero(); g.positions() * cout];
    let mut buf = vec![T::zero(); step * patch];
    for r0 in (0..g.positions()).step_by(step) {
        let r1 = (r0 + step).min(g.positions());
        let m = r1 - r0;
        im2col_rows(input, g, r0, r1, &mut buf);
        gemm(
            m,
            patch,
            cout,
            &buf[..m * patch],
            Trans::No,
            kernel,
            Trans::No,
            T::zero(),
            &mut out[r0 * cout..r1 * cout],
        );
    }
    out
}

/// Gradients of a convolution with respect to the kernel and/or the input.
pub(crate) fn conv2d_backward<T: Element>(
    grad_out: &[T],
    input: &[T],
    kernel: &[T],
    g: &ConvGeometry,
    want_kernel: bool,
    want_input: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (patch, cout) = (g.patch_len(), g.out_channels);
    let step = chunk_rows(patch);
    let mut dk = want_kernel.then(|| vec![T::zero(); patch * cout]);
    let mut dx = want_input.then(|| vec![T::zero(); input.len()]);
    let mut buf = vec![T::zero(); step * patch];
    for r0 in (0..g.positions()).step_by(step) {
        let r1 = (r0 + step).min(g.positions());
        let m = r1 - r0;
        let go = &grad_out[r0 * cout..r1 * cout];
        if let Some(dk) = dk.as_mut() {
            im2col_rows(input, g, r0, r1, &mut buf);
            gemm(
                patch,
                m,
                cout,
                &buf[..m * patch],
                Trans::Yes,
                go,
                Trans::No,
                T::one(),
                dk,
            );
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                m,
                cout,
                patch,
                go,
                Trans::No,
                kernel,
                Trans::Yes,
                T::zero(),
                &mut buf[..m * patch],
            );
            col2im_rows_add(&buf[..m * patch], g, r0, r1, dx);
        }
    }
    (dk, dx)
}

/// 2×2/stride-2 max pooling over NHWC. Odd trailing rows/columns are
/// treated as −∞ padding. Returns the pooled values and, per output, the
/// flat input index that won (first maximum in scan order).
pub(crate) fn maxpool2x2_forward<T: Element>(
    input: &[T],
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
) -> (Vec<T>, Vec<usize>) {
    let oh = height.div_ceil(2);
    let ow = width.div_ceil(2);
    let c = channels;
    let mut out = vec![T::zero(); batch * oh * ow * c];
    let mut argmax = vec![0usize; out.len()];
    for n in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((n * oh + oy) * ow + ox) * c;
                let (vals, idxs) = (&mut out[o..o + c], &mut argmax[o..o + c]);
                let (y, x) = (oy * 2, ox * 2);
                // Window cells in scan order; the first is always in range.
                let base = ((n * height + y) * width + x) * c;
                vals.copy_from_slice(&input[base..base + c]);
                for (i, slot) in idxs.iter_mut().enumerate() {
                    *slot = base + i;
                }
                let mut others = [usize::MAX; 3];
                if x + 1 < width {
                    others[0] = base + c;
                }
                if y + 1 < height {
                    others[1] = base + width * c;
                    if x + 1 < width {
                        others[2] = base + (width + 1) * c;
                    }
                }
                for start in others.into_iter().filter(|&s| s != usize::MAX) {
                    let cand = &input[start..start + c];
                    for i in 0..c {
                        if cand[i] > vals[i] {
                            vals[i] = cand[i];
                            idxs[i] = start + i;
                        }
                    }
                }
            }
        }
    }
    (out, argmax)
}

/// Row-wise L2 normalization; norms below `eps` are clamped to `eps`.
pub(crate) fn l2_normalize_rows<T: Element>(x: &[T], rows: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let width = x.len() / rows;
    let mut out = Vec::with_capacity(x.len());
    let mut norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
        out.extend(row.iter().map(|&v| v / norm));
        norms.push(norm);
    }
    (out, norms)
}

pub(crate) fn l2_normalize_rows_backward<T: Element>(
    grad_out: &[T],
    out: &[T],
    norms: &[T],
    eps: T,
) -> Vec<T> {
    let rows = norms.len();
    let width = out.len() / rows;
    let mut dx = Vec::with_capacity(out.len());
    for r in 0..rows {
        let g = &grad_out[r * width..(r + 1) * width];
        let y = &out[r * width..(r + 1) * width];
        let norm = norms[r];
        if norm > eps {
            let dot: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
            dx.extend(g.iter().zip(y).map(|(&gi, &yi)| (gi - yi * dot) / norm));
        } else {
            dx.extend(g.iter().map(|&gi| gi / norm));
        }
    }
    dx
}
