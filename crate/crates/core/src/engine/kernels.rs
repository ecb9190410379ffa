//! Dense loops shared by the tape operations.
//!
//! Every kernel accumulates into `out` and walks the reduction index in a
//! fixed order, so each output row depends only on its own input row.

use super::Real;

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let rows = m - m % MR;
    let cols = n - n % NR;
    for i in (0..rows).step_by(MR) {
        for j in (0..cols).step_by(NR) {
            tile(a, b, out, i, j, k, n);
        }
    }
    // Ragged edges: same per-element summation order as the tiles.
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        let (from, to) = if i < rows { (cols, n) } else { (0, n) };
        if from == to {
            continue;
        }
        for (p, &av) in a_row.iter().enumerate() {
            axpy(av, &b[p * n + from..p * n + to], &mut out_row[from..to]);
        }
    }
}

const MR: usize = 4;
const NR: usize = 8;

/// One `MR×NR` block of `out`, accumulated in registers over all of `k`.
#[inline(always)]
fn tile<F: Real>(a: &[F], b: &[F], out: &mut [F], i: usize, j: usize, k: usize, n: usize) {
    let mut acc = [[F::zero(); NR]; MR];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&out[(i + r) * n + j..(i + r) * n + j + NR]);
    }
    let a_rows: [&[F]; MR] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
    for p in 0..k {
        let bv: &[F; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
        for r in 0..MR {
            let av = a_rows[r][p];
            for c in 0..NR {
                acc[r][c] = acc[r][c] + av * bv[c];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        out[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
    }
}

/// `y += a · x`
#[inline]
fn axpy<F: Real>(a: F, x: &[F], y: &mut [F]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

/// `out[m×n] += aᵀ · b` with `a[k×m]`, `b[k×n]`.
pub fn matmul_at_b_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            axpy(av, b_row, &mut out[i * n..(i + 1) * n]);
        }
    }
}

/// `out[m×n] += a · bᵀ` with `a[m×k]`, `b[n×k]`.
pub fn matmul_a_bt_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] = out[i * n + j] + dot(a_row, b_row);
        }
    }
}

/// Dot product with eight interleaved partial sums, combined in a fixed
/// order.
fn dot<F: Real>(x: &[F], y: &[F]) -> F {
    const LANES: usize = 8;
    let mut acc = [F::zero(); LANES];
    let split = x.len() - x.len() % LANES;
    for (xc, yc) in x[..split].chunks_exact(LANES).zip(y[..split].chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] = acc[l] + xc[l] * yc[l];
        }
    }
    let mut total = F::zero();
    for v in acc {
        total = total + v;
    }
    for (&xv, &yv) in x[split..].iter().zip(&y[split..]) {
        total = total + xv * yv;
    }
    total
}

/// Geometry of a 3×3 convolution over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub pad: usize,
}

pub const KSIZE: usize = 3;

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.in_ch * KSIZE * KSIZE
    }

    pub fn columns(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// Output positions `lo..hi` along one axis whose tap `k` reads inside
    /// an input of length `len`.
    #[inline]
    fn valid(&self, k: usize, out_len: usize, len: usize) -> std::ops::Range<usize> {
        let first = self.pad.saturating_sub(k).div_ceil(self.stride);
        let mut last = out_len;
        while last > first && (last - 1) * self.stride + k >= len + self.pad {
            last -= 1;
        }
        first..last
    }
}

/// Lays out patches as a `[c·9 × b·oh·ow]` matrix.
pub fn im2col<F: Real>(input: &[F], g: &ConvGeom) -> Vec<F> {
    let cols = g.columns();
    let plane = g.out_h * g.out_w;
    let mut out = vec![F::zero(); g.patch_len() * cols];
    for c in 0..g.in_ch {
        for ky in 0..KSIZE {
            let rows = g.valid(ky, g.out_h, g.height);
            for kx in 0..KSIZE {
                let xs = g.valid(kx, g.out_w, g.width);
                let row = (c * KSIZE + ky) * KSIZE + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for b in 0..g.batch {
                    let src = &input[(b * g.in_ch + c) * g.height * g.width..][..g.height * g.width];
                    for oy in rows.clone() {
                        let y = oy * g.stride + ky - g.pad;
                        let d = &mut dst[b * plane + oy * g.out_w..][..g.out_w];
                        for ox in xs.clone() {
                            d[ox] = src[y * g.width + ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Scatters a column-matrix gradient back onto the input layout.
pub fn col2im_acc<F: Real>(cols_grad: &[F], g: &ConvGeom, input_grad: &mut [F]) {
    let cols = g.columns();
    let plane = g.out_h * g.out_w;
    for c in 0..g.in_ch {
        for ky in 0..KSIZE {
            let rows = g.valid(ky, g.out_h, g.height);
            for kx in 0..KSIZE {
                let xs = g.valid(kx, g.out_w, g.width);
                let row = (c * KSIZE + ky) * KSIZE + kx;
                let src = &cols_grad[row * cols..(row + 1) * cols];
                for b in 0..g.batch {
                    let dst = &mut input_grad[(b * g.in_ch + c) * g.height * g.width..][..g.height * g.width];
                    for oy in rows.clone() {
                        let y = oy * g.stride + ky - g.pad;
                        let s = &src[b * plane + oy * g.out_w..][..g.out_w];
                        for ox in xs.clone() {
                            let d = &mut dst[y * g.width + ox * g.stride + kx - g.pad];
                            *d = *d + s[ox];
                        }
                    }
                }
            }
        }
    }
}

/// `[o × b·plane]` ↔ `[b × o × plane]` reorderings.
pub fn channel_major_to_batch_major<F: Real>(src: &[F], out_ch: usize, batch: usize, plane: usize) -> Vec<F> {
    let mut out = vec![F::zero(); src.len()];
    for o in 0..out_ch {
        for b in 0..batch {
            let s = &src[o * batch * plane + b * plane..][..plane];
            out[(b * out_ch + o) * plane..][..plane].copy_from_slice(s);
        }
    }
    out
}

pub fn batch_major_to_channel_major<F: Real>(src: &[F], out_ch: usize, batch: usize, plane: usize) -> Vec<F> {
    let mut out = vec![F::zero(); src.len()];
    for b in 0..batch {
        for o in 0..out_ch {
            let s = &src[(b * out_ch + o) * plane..][..plane];
            out[o * batch * plane + b * plane..][..plane].copy_from_slice(s);
        }
    }
    out
}
