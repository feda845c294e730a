//! Node-wise temporal convolution: a `1×3` kernel sliding over time only.
//! Implemented as im2col + one GEMM over the batch.

use crate::tensor::Real;

pub const KERNEL_T: usize = 3;

/// Output time length, `floor((t + 2·pad − 3)/stride) + 1`, or `None` when
/// the padded input is shorter than the kernel.
pub fn output_len(t: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || t + 2 * pad < KERNEL_T {
        return None;
    }
    Some((t + 2 * pad - KERNEL_T) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub nodes: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.c_in * KERNEL_T
    }

    fn col_cols(&self) -> usize {
        self.nodes * self.t_out
    }

    fn in_sample(&self) -> usize {
        self.c_in * self.nodes * self.t_in
    }

    fn out_sample(&self) -> usize {
        self.c_out * self.nodes * self.t_out
    }

    /// Input time index read by output step `to` at kernel tap `tap`.
    #[inline]
    fn source(&self, to: usize, tap: usize) -> Option<usize> {
        let t = (to * self.stride + tap).checked_sub(self.pad)?;
        (t < self.t_in).then_some(t)
    }
}

/// Writes sample `x` into columns `[offset, offset + n·t_out)` of `cols`,
/// whose rows are `stride` wide.
fn im2col<T: Real>(g: &ConvGeometry, x: &[T], cols: &mut [T], stride: usize, offset: usize) {
    let width = g.col_cols();
    for ci in 0..g.c_in {
        for tap in 0..KERNEL_T {
            let row = &mut cols[(ci * KERNEL_T + tap) * stride + offset..][..width];
            for n in 0..g.nodes {
                let src = &x[(ci * g.nodes + n) * g.t_in..][..g.t_in];
                for to in 0..g.t_out {
                    row[n * g.t_out + to] = match g.source(to, tap) {
                        Some(t) => src[t],
                        None => T::zero(),
                    };
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeometry, cols: &[T], stride: usize, offset: usize, dx: &mut [T]) {
    let width = g.col_cols();
    for ci in 0..g.c_in {
        for tap in 0..KERNEL_T {
            let row = &cols[(ci * KERNEL_T + tap) * stride + offset..][..width];
            for n in 0..g.nodes {
                let dst = &mut dx[(ci * g.nodes + n) * g.t_in..][..g.t_in];
                for to in 0..g.t_out {
                    if let Some(t) = g.source(to, tap) {
                        dst[t] = dst[t] + row[n * g.t_out + to];
                    }
                }
            }
        }
    }
}

/// Column matrix for the whole batch: `[c_in·3, b·n·t_out]`.
fn batch_cols<T: Real>(g: &ConvGeometry, x: &[T]) -> Vec<T> {
    let total = g.batch * g.col_cols();
    let mut cols = vec![T::zero(); g.col_rows() * total];
    for b in 0..g.batch {
        im2col(g, &x[b * g.in_sample()..][..g.in_sample()], &mut cols, total, b * g.col_cols());
    }
    cols
}

/// `y[b, co, n, t'] = bias[co] + Σ_{ci, tap} k[co, ci, tap] · x[b, ci, n, t'·s + tap − pad]`
///
/// One GEMM over the whole batch; the `[c_out, b·n·t_out]` product is then
/// scattered into the `[b, c_out, n, t_out]` layout.
pub fn forward<T: Real>(g: &ConvGeometry, x: &[T], kernel: &[T], bias: &[T], y: &mut [T]) {
    let (width, total) = (g.col_cols(), g.batch * g.col_cols());
    let cols = batch_cols(g, x);
    let mut prod = vec![T::zero(); g.c_out * total];
    T::gemm(g.c_out, g.col_rows(), total, kernel, false, &cols, false, &mut prod, false);
    for co in 0..g.c_out {
        let bco = bias[co];
        for b in 0..g.batch {
            let src = &prod[co * total + b * width..][..width];
            let dst = &mut y[b * g.out_sample() + co * width..][..width];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bco;
            }
        }
    }
}

/// Accumulates gradients into whichever of `dx`, `dkernel`, `dbias` is given.
pub fn backward<T: Real>(
    g: &ConvGeometry,
    x: &[T],
    kernel: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dkernel: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let (width, total) = (g.col_cols(), g.batch * g.col_cols());
    // dy gathered as [c_out, b·n·t_out]
    let mut dyp = vec![T::zero(); g.c_out * total];
    for co in 0..g.c_out {
        for b in 0..g.batch {
            dyp[co * total + b * width..][..width].copy_from_slice(&dy[b * g.out_sample() + co * width..][..width]);
        }
    }
    if let Some(dk) = dkernel {
        let cols = batch_cols(g, x);
        T::gemm(g.c_out, total, g.col_rows(), &dyp, false, &cols, true, dk, true);
    }
    if let Some(dx) = dx {
        let mut dcols = vec![T::zero(); g.col_rows() * total];
        T::gemm(g.col_rows(), g.c_out, total, kernel, true, &dyp, false, &mut dcols, false);
        for b in 0..g.batch {
            col2im_add(g, &dcols, total, b * width, &mut dx[b * g.in_sample()..][..g.in_sample()]);
        }
    }
    if let Some(db) = dbias {
        for (co, row) in dyp.chunks_exact(total).enumerate() {
            db[co] = db[co] + row.iter().copied().sum::<T>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_lengths() {
        assert_eq!(output_len(12, 1, 1), Some(12));
        assert_eq!(output_len(12, 2, 1), Some(6));
        assert_eq!(output_len(3, 2, 1), Some(2));
        assert_eq!(output_len(6, 2, 1), Some(3));
        assert_eq!(output_len(0, 1, 1), None);
        assert_eq!(output_len(1, 1, 0), None);
    }

    /// Direct triple loop; independent of im2col.
    fn naive(g: &ConvGeometry, x: &[f64], k: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; g.batch * g.c_out * g.nodes * g.t_out];
        for b in 0..g.batch {
            for co in 0..g.c_out {
                for n in 0..g.nodes {
                    for to in 0..g.t_out {
                        let mut acc = bias[co];
                        for ci in 0..g.c_in {
                            for tap in 0..3 {
                                let t = (to * g.stride + tap) as isize - g.pad as isize;
                                if t >= 0 && (t as usize) < g.t_in {
                                    acc += k[(co * g.c_in + ci) * 3 + tap]
                                        * x[((b * g.c_in + ci) * g.nodes + n) * g.t_in + t as usize];
                                }
                            }
                        }
                        y[((b * g.c_out + co) * g.nodes + n) * g.t_out + to] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_direct_convolution() {
        for stride in [1, 2] {
            let t_in = 7;
            let g = ConvGeometry {
                batch: 2,
                c_in: 3,
                c_out: 4,
                nodes: 2,
                t_in,
                t_out: output_len(t_in, stride, 1).unwrap(),
                stride,
                pad: 1,
            };
            let x: Vec<f64> = (0..g.batch * g.in_sample()).map(|i| (i as f64 * 0.37).sin()).collect();
            let k: Vec<f64> = (0..g.c_out * g.c_in * 3).map(|i| (i as f64 * 0.11).cos()).collect();
            let bias = vec![0.1, -0.2, 0.3, 0.0];
            let mut y = vec![0.0; g.batch * g.out_sample()];
            forward(&g, &x, &k, &bias, &mut y);
            let want = naive(&g, &x, &k, &bias);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
