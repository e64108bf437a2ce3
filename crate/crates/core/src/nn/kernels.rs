//! Per-sample dense kernels used by the layer implementations.
//!
//! All matrices are row-major slices. Accumulating kernels add into `out`.

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            axpy(av, &b[p * n..(p + 1) * n], out_row);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_at_b_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            axpy(av, b_row, &mut out[p * n..(p + 1) * n]);
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_a_bt_acc(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(a_row, &b[p * n..(p + 1) * n]);
        }
    }
}

#[inline]
pub(crate) fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let lo = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let hi = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    lo + hi + tail
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Source pixel for output position `o` and kernel offset `k`, if inside the image.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unrolls a `C×H×W` input into a `(C·k·k) × (OH·OW)` patch matrix.
pub(crate) fn im2col(g: &ConvGeometry, input: &[f32], col: &mut [f32]) {
    let pixels = g.pixels();
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut col[row * pixels..(row + 1) * pixels];
                for oy in 0..g.out_height {
                    let sy = g.source(oy, ky, g.height);
                    for ox in 0..g.out_width {
                        dst[oy * g.out_width + ox] = match (sy, g.source(ox, kx, g.width)) {
                            (Some(y), Some(x)) => plane[y * g.width + x],
                            _ => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto the `C×H×W` input gradient.
pub(crate) fn col2im_acc(g: &ConvGeometry, col: &[f32], input_grad: &mut [f32]) {
    let pixels = g.pixels();
    for c in 0..g.channels {
        let plane = &mut input_grad[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &col[row * pixels..(row + 1) * pixels];
                for oy in 0..g.out_height {
                    let Some(y) = g.source(oy, ky, g.height) else {
                        continue;
                    };
                    for ox in 0..g.out_width {
                        if let Some(x) = g.source(ox, kx, g.width) {
                            plane[y * g.width + x] += src[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f32], b: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn transpose(rows: usize, cols: usize, a: &[f32]) -> Vec<f32> {
        let mut t = vec![0.0; a.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = a[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let (m, k, n) = (3, 5, 7);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.11).cos()).collect();
        let want = naive_matmul(m, k, n, &a, &b);

        let mut got = vec![0.0; m * n];
        matmul_acc(m, k, n, &a, &b, &mut got);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-5);
        }

        let at = transpose(m, k, &a);
        let mut got = vec![0.0; m * n];
        matmul_at_b_acc(k, m, n, &at, &b, &mut got);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-5);
        }

        let bt = transpose(k, n, &b);
        let mut got = vec![0.0; m * n];
        matmul_a_bt_acc(m, k, n, &a, &bt, &mut got);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-5);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry {
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            padding: 1,
            out_height: 3,
            out_width: 2,
        };
        let x: Vec<f32> = (0..40).map(|i| (i as f32 * 0.7).sin()).collect();
        let y: Vec<f32> = (0..g.rows() * g.pixels())
            .map(|i| (i as f32 * 0.3).cos())
            .collect();
        let mut col = vec![0.0; y.len()];
        im2col(&g, &x, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im_acc(&g, &y, &mut back);
        let lhs: f32 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }
}
