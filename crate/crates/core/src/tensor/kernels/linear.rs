//! Channel maps (1×1 convolutions shared across nodes and time), plain
//! 2-D matmul, and trace.

use crate::tensor::Real;

/// `y[b, o, r] = Σ_i w[o, i] · x[b, i, r] + bias[o]` where `r` ranges over
/// the `inner` trailing positions.
#[allow(clippy::too_many_arguments)]
pub fn channel_map_forward<T: Real>(
    batch: usize,
    c_in: usize,
    c_out: usize,
    inner: usize,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    y: &mut [T],
) {
    for b in 0..batch {
        let xb = &x[b * c_in * inner..][..c_in * inner];
        let yb = &mut y[b * c_out * inner..][..c_out * inner];
        T::gemm(c_out, c_in, inner, w, false, xb, false, yb, false);
        if let Some(bias) = bias {
            for (o, row) in yb.chunks_exact_mut(inner).enumerate() {
                row.iter_mut().for_each(|v| *v = *v + bias[o]);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn channel_map_backward<T: Real>(
    batch: usize,
    c_in: usize,
    c_out: usize,
    inner: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut dbias: Option<&mut [T]>,
) {
    for b in 0..batch {
        let xb = &x[b * c_in * inner..][..c_in * inner];
        let dyb = &dy[b * c_out * inner..][..c_out * inner];
        if let Some(dw) = dw.as_deref_mut() {
            T::gemm(c_out, inner, c_in, dyb, false, xb, true, dw, true);
        }
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(c_in, c_out, inner, w, true, dyb, false, &mut dx[b * c_in * inner..][..c_in * inner], true);
        }
        if let Some(db) = dbias.as_deref_mut() {
            for (o, row) in dyb.chunks_exact(inner).enumerate() {
                db[o] = db[o] + row.iter().copied().sum::<T>();
            }
        }
    }
}

pub fn trace<T: Real>(m: usize, x: &[T]) -> T {
    (0..m).map(|i| x[i * m + i]).sum()
}
