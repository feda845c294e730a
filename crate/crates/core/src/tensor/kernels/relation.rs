//! Node-relation kernels: cosine correlation between representatives and
//! spatio-temporal features, correlation-weighted relational features, and
//! adjacency-weighted aggregation.
//!
//! Layouts (batch axis leading everywhere):
//! - representatives `rep`: `[b, c, n]`
//! - features `feat`: `[b, c, n, l]`
//! - correlations `S`: `[b, n_target, n_source, l]`
//! - relational features `R`: `[b, c, n_target, n_source]`, so that
//!   `R[b, :, k, :]` is the `c × n` edge-feature matrix of target node `k`
//! - adjacency `A`: `[b, n_target, n_source]`

use crate::tensor::Real;

#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub batch: usize,
    pub channels: usize,
    pub nodes: usize,
    pub steps: usize,
}

/// Cosine similarity of two equal-length vectors; 0 when either norm is
/// below `eps`.
pub fn cosine<T: Real>(a: &[T], b: &[T], eps: T) -> T {
    debug_assert_eq!(a.len(), b.len());
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na < eps || nb < eps {
        return T::zero();
    }
    (dot / (na * nb)).max(-T::one()).min(T::one())
}

fn rep_norms<T: Real>(d: &Dims, rep: &[T]) -> Vec<T> {
    let (c, n) = (d.channels, d.nodes);
    let mut out = vec![T::zero(); d.batch * n];
    for b in 0..d.batch {
        for i in 0..n {
            out[b * n + i] = (0..c).map(|ch| rep[(b * c + ch) * n + i].powi(2)).sum::<T>().sqrt();
        }
    }
    out
}

fn feat_norms<T: Real>(d: &Dims, feat: &[T]) -> Vec<T> {
    let (c, n, l) = (d.channels, d.nodes, d.steps);
    let mut out = vec![T::zero(); d.batch * n * l];
    for b in 0..d.batch {
        for j in 0..n {
            for t in 0..l {
                out[(b * n + j) * l + t] = (0..c)
                    .map(|ch| feat[((b * c + ch) * n + j) * l + t].powi(2))
                    .sum::<T>()
                    .sqrt();
            }
        }
    }
    out
}

/// `S[b, i, j, t] = cos(rep[b, :, i], feat[b, :, j, t])`.
pub fn correlate<T: Real>(d: &Dims, rep: &[T], feat: &[T], eps: T, s: &mut [T]) {
    let (c, n, l) = (d.channels, d.nodes, d.steps);
    let rn = rep_norms(d, rep);
    let fnorm = feat_norms(d, feat);
    for b in 0..d.batch {
        for i in 0..n {
            for j in 0..n {
                for t in 0..l {
                    let (nr, nf) = (rn[b * n + i], fnorm[(b * n + j) * l + t]);
                    let out = &mut s[((b * n + i) * n + j) * l + t];
                    if nr < eps || nf < eps {
                        *out = T::zero();
                        continue;
                    }
                    let dot: T = (0..c)
                        .map(|ch| rep[(b * c + ch) * n + i] * feat[((b * c + ch) * n + j) * l + t])
                        .sum();
                    *out = (dot / (nr * nf)).max(-T::one()).min(T::one());
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn correlate_backward<T: Real>(
    d: &Dims,
    rep: &[T],
    feat: &[T],
    s: &[T],
    eps: T,
    ds: &[T],
    mut drep: Option<&mut [T]>,
    mut dfeat: Option<&mut [T]>,
) {
    let (c, n, l) = (d.channels, d.nodes, d.steps);
    let rn = rep_norms(d, rep);
    let fnorm = feat_norms(d, feat);
    for b in 0..d.batch {
        for i in 0..n {
            for j in 0..n {
                for t in 0..l {
                    let (nr, nf) = (rn[b * n + i], fnorm[(b * n + j) * l + t]);
                    if nr < eps || nf < eps {
                        continue;
                    }
                    let idx = ((b * n + i) * n + j) * l + t;
                    let (g, sv) = (ds[idx], s[idx]);
                    if g == T::zero() {
                        continue;
                    }
                    let inv = T::one() / (nr * nf);
                    for ch in 0..c {
                        let ri = (b * c + ch) * n + i;
                        let fi = ((b * c + ch) * n + j) * l + t;
                        if let Some(dr) = drep.as_deref_mut() {
                            dr[ri] = dr[ri] + g * (feat[fi] * inv - sv * rep[ri] / (nr * nr));
                        }
                        if let Some(df) = dfeat.as_deref_mut() {
                            df[fi] = df[fi] + g * (rep[ri] * inv - sv * feat[fi] / (nf * nf));
                        }
                    }
                }
            }
        }
    }
}

/// `R[b, c, k, j] = Σ_t S[b, k, j, t] · F[b, c, j, t]`.
pub fn relational<T: Real>(d: &Dims, s: &[T], f: &[T], r: &mut [T]) {
    let (c, n, l) = (d.channels, d.nodes, d.steps);
    for b in 0..d.batch {
        for ch in 0..c {
            for k in 0..n {
                for j in 0..n {
                    let srow = &s[((b * n + k) * n + j) * l..][..l];
                    let frow = &f[((b * c + ch) * n + j) * l..][..l];
                    r[((b * c + ch) * n + k) * n + j] = srow.iter().zip(frow).map(|(&a, &x)| a * x).sum();
                }
            }
        }
    }
}

pub fn relational_backward<T: Real>(
    d: &Dims,
    s: &[T],
    f: &[T],
    dr: &[T],
    mut ds: Option<&mut [T]>,
    mut df: Option<&mut [T]>,
) {
    let (c, n, l) = (d.channels, d.nodes, d.steps);
    for b in 0..d.batch {
        for ch in 0..c {
            for k in 0..n {
                for j in 0..n {
                    let g = dr[((b * c + ch) * n + k) * n + j];
                    let so = ((b * n + k) * n + j) * l;
                    let fo = ((b * c + ch) * n + j) * l;
                    for t in 0..l {
                        if let Some(ds) = ds.as_deref_mut() {
                            ds[so + t] = ds[so + t] + g * f[fo + t];
                        }
                        if let Some(df) = df.as_deref_mut() {
                            df[fo + t] = df[fo + t] + g * s[so + t];
                        }
                    }
                }
            }
        }
    }
}

/// `out[b, c, k] = Σ_j R[b, c, k, j] · A[b, k, j]`.
pub fn aggregate<T: Real>(d: &Dims, r: &[T], a: &[T], out: &mut [T]) {
    let (c, n) = (d.channels, d.nodes);
    for b in 0..d.batch {
        for ch in 0..c {
            for k in 0..n {
                let rrow = &r[((b * c + ch) * n + k) * n..][..n];
                let arow = &a[(b * n + k) * n..][..n];
                out[(b * c + ch) * n + k] = rrow.iter().zip(arow).map(|(&x, &w)| x * w).sum();
            }
        }
    }
}

pub fn aggregate_backward<T: Real>(
    d: &Dims,
    r: &[T],
    a: &[T],
    dout: &[T],
    mut dr: Option<&mut [T]>,
    mut da: Option<&mut [T]>,
) {
    let (c, n) = (d.channels, d.nodes);
    for b in 0..d.batch {
        for ch in 0..c {
            for k in 0..n {
                let g = dout[(b * c + ch) * n + k];
                let ro = ((b * c + ch) * n + k) * n;
                let ao = (b * n + k) * n;
                for j in 0..n {
                    if let Some(dr) = dr.as_deref_mut() {
                        dr[ro + j] = dr[ro + j] + g * a[ao + j];
                    }
                    if let Some(da) = da.as_deref_mut() {
                        da[ao + j] = da[ao + j] + g * r[ro + j];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        let eps = 1e-8;
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0], eps) - 1.0f64).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0], eps), 0.0f64);
        assert!((cosine(&[1.0, -2.0], &[-1.0, 2.0], eps) + 1.0f64).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0], eps), 0.0f64);
    }
}
