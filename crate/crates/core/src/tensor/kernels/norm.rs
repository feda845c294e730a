//! Layer normalization over the channel axis, independently at every
//! `(batch, position)` pair.

use crate::tensor::Real;

/// Normalizes `x[b, :, r]`; writes the normalized values (`xhat`) and the
/// per-position inverse standard deviation for reuse in backward.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Real>(
    batch: usize,
    channels: usize,
    inner: usize,
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
    y: &mut [T],
    xhat: &mut [T],
    inv_std: &mut [T],
) {
    let c = T::from_usize(channels).unwrap();
    for b in 0..batch {
        let base = b * channels * inner;
        for r in 0..inner {
            let at = |ch: usize| base + ch * inner + r;
            let mean = (0..channels).map(|ch| x[at(ch)]).sum::<T>() / c;
            let var = (0..channels)
                .map(|ch| {
                    let d = x[at(ch)] - mean;
                    d * d
                })
                .sum::<T>()
                / c;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[b * inner + r] = istd;
            for ch in 0..channels {
                let h = (x[at(ch)] - mean) * istd;
                xhat[at(ch)] = h;
                y[at(ch)] = gamma[ch] * h + beta[ch];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn backward<T: Real>(
    batch: usize,
    channels: usize,
    inner: usize,
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dgamma: Option<&mut [T]>,
    mut dbeta: Option<&mut [T]>,
) {
    let c = T::from_usize(channels).unwrap();
    for b in 0..batch {
        let base = b * channels * inner;
        for r in 0..inner {
            let at = |ch: usize| base + ch * inner + r;
            if let Some(dg) = dgamma.as_deref_mut() {
                for ch in 0..channels {
                    dg[ch] = dg[ch] + dy[at(ch)] * xhat[at(ch)];
                }
            }
            if let Some(db) = dbeta.as_deref_mut() {
                for ch in 0..channels {
                    db[ch] = db[ch] + dy[at(ch)];
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                let mut sum_dh = T::zero();
                let mut sum_dh_h = T::zero();
                for ch in 0..channels {
                    let dh = dy[at(ch)] * gamma[ch];
                    sum_dh = sum_dh + dh;
                    sum_dh_h = sum_dh_h + dh * xhat[at(ch)];
                }
                let istd = inv_std[b * inner + r];
                for ch in 0..channels {
                    let dh = dy[at(ch)] * gamma[ch];
                    let g = istd / c * (c * dh - sum_dh - xhat[at(ch)] * sum_dh_h);
                    dx[at(ch)] = dx[at(ch)] + g;
                }
            }
        }
    }
}
