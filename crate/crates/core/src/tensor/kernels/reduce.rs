//! Reductions over the channel axis (axis 1).

use crate::tensor::Real;

/// `y[b, r] = max_c x[b, c, r]`; `argmax` records the winning channel, the
/// lowest index on ties.
pub fn channel_max<T: Real>(batch: usize, channels: usize, inner: usize, x: &[T], y: &mut [T], argmax: &mut [u32]) {
    for b in 0..batch {
        for r in 0..inner {
            let mut best = x[b * channels * inner + r];
            let mut arg = 0u32;
            for c in 1..channels {
                let v = x[(b * channels + c) * inner + r];
                if v > best {
                    best = v;
                    arg = c as u32;
                }
            }
            y[b * inner + r] = best;
            argmax[b * inner + r] = arg;
        }
    }
}

pub fn channel_max_backward<T: Real>(batch: usize, channels: usize, inner: usize, argmax: &[u32], dy: &[T], dx: &mut [T]) {
    for b in 0..batch {
        for r in 0..inner {
            let c = argmax[b * inner + r] as usize;
            let i = (b * channels + c) * inner + r;
            dx[i] = dx[i] + dy[b * inner + r];
        }
    }
}

pub fn channel_mean<T: Real>(batch: usize, channels: usize, inner: usize, x: &[T], y: &mut [T]) {
    let scale = T::one() / T::from_usize(channels).unwrap();
    for b in 0..batch {
        for r in 0..inner {
            let s: T = (0..channels).map(|c| x[(b * channels + c) * inner + r]).sum();
            y[b * inner + r] = s * scale;
        }
    }
}

pub fn channel_mean_backward<T: Real>(batch: usize, channels: usize, inner: usize, dy: &[T], dx: &mut [T]) {
    let scale = T::one() / T::from_usize(channels).unwrap();
    for b in 0..batch {
        for c in 0..channels {
            for r in 0..inner {
                let i = (b * channels + c) * inner + r;
                dx[i] = dx[i] + dy[b * inner + r] * scale;
            }
        }
    }
}
