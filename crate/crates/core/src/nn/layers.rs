//! Forward and backward kernels for each layer type.
//!
//! Per-sample work (convolutions) runs in parallel; every reduction over the
//! batch is summed in sample order so results do not depend on thread count.

use rand::Rng;
use rayon::prelude::*;

use super::scalar::Scalar;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Geometry of an `(N, C, H, W)` activation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn hw(&self) -> usize {
        self.h * self.w
    }
}

fn im2col<T: Scalar>(x: &[T], d: Dims, col: &mut [T]) {
    let (h, w) = (d.h as isize, d.w as isize);
    let hw = d.hw();
    for ch in 0..d.c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = &mut col[(ch * 9 + (ky * 3 + kx) as usize) * hw..][..hw];
                for y in 0..h {
                    let yy = y + ky - 1;
                    let out = &mut row[(y * w) as usize..((y + 1) * w) as usize];
                    if yy < 0 || yy >= h {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[(yy * w) as usize..((yy + 1) * w) as usize];
                    for x in 0..w {
                        let xx = x + kx - 1;
                        out[x as usize] = if xx < 0 || xx >= w { T::zero() } else { src[xx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], d: Dims, x: &mut [T]) {
    let (h, w) = (d.h as isize, d.w as isize);
    let hw = d.hw();
    x.iter_mut().for_each(|v| *v = T::zero());
    for ch in 0..d.c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = &col[(ch * 9 + (ky * 3 + kx) as usize) * hw..][..hw];
                for y in 0..h {
                    let yy = y + ky - 1;
                    if yy < 0 || yy >= h {
                        continue;
                    }
                    for x in 0..w {
                        let xx = x + kx - 1;
                        if xx >= 0 && xx < w {
                            plane[(yy * w + xx) as usize] += row[(y * w + x) as usize];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Scalar>(x: &[T], d: Dims, weight: &[T], bias: &[T], out_ch: usize) -> Vec<T> {
    let hw = d.hw();
    let k = d.c * 9;
    let mut out = vec![T::zero(); d.n * out_ch * hw];
    out.par_chunks_mut(out_ch * hw)
        .zip(x.par_chunks(d.c * hw))
        .for_each(|(o, xi)| {
            let mut col = vec![T::zero(); k * hw];
            im2col(xi, d, &mut col);
            T::gemm(out_ch, k, hw, weight, false, &col, false, T::zero(), o);
            for (oc, plane) in o.chunks_mut(hw).enumerate() {
                let b = bias[oc];
                plane.iter_mut().for_each(|v| *v += b);
            }
        });
    out
}

/// Returns `(dweight, dbias, dx)`.
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    d: Dims,
    weight: &[T],
    out_ch: usize,
    dy: &[T],
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let hw = d.hw();
    let k = d.c * 9;
    let mut dx = if need_dx {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    let per_sample: Vec<(Vec<T>, Vec<T>)> = if need_dx {
        dx.par_chunks_mut(d.c * hw)
            .zip(x.par_chunks(d.c * hw))
            .zip(dy.par_chunks(out_ch * hw))
            .map(|((dxi, xi), dyi)| {
                let (dw, db, col) = conv_sample_grads(xi, d, dyi, out_ch, k);
                let mut dcol = col;
                T::gemm(k, out_ch, hw, weight, true, dyi, false, T::zero(), &mut dcol);
                col2im(&dcol, d, dxi);
                (dw, db)
            })
            .collect()
    } else {
        x.par_chunks(d.c * hw)
            .zip(dy.par_chunks(out_ch * hw))
            .map(|(xi, dyi)| {
                let (dw, db, _) = conv_sample_grads(xi, d, dyi, out_ch, k);
                (dw, db)
            })
            .collect()
    };
    let mut dw = vec![T::zero(); out_ch * k];
    let mut db = vec![T::zero(); out_ch];
    for (w_n, b_n) in &per_sample {
        dw.iter_mut().zip(w_n).for_each(|(a, b)| *a += *b);
        db.iter_mut().zip(b_n).for_each(|(a, b)| *a += *b);
    }
    (dw, db, need_dx.then_some(dx))
}

fn conv_sample_grads<T: Scalar>(xi: &[T], d: Dims, dyi: &[T], out_ch: usize, k: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = d.hw();
    let mut col = vec![T::zero(); k * hw];
    im2col(xi, d, &mut col);
    let mut dw = vec![T::zero(); out_ch * k];
    T::gemm(out_ch, hw, k, dyi, false, &col, true, T::zero(), &mut dw);
    let db = dyi.chunks(hw).map(|p| p.iter().copied().sum()).collect();
    (dw, db, col)
}

/// `y = x Wᵀ + b` for `x: (n, inputs)`, `W: (outputs, inputs)`.
pub(crate) fn fc_forward<T: Scalar>(x: &[T], n: usize, inputs: usize, weight: &[T], bias: &[T], outputs: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * outputs];
    for row in y.chunks_mut(outputs) {
        row.copy_from_slice(bias);
    }
    T::gemm(n, inputs, outputs, x, false, weight, true, T::one(), &mut y);
    y
}

pub(crate) fn fc_backward<T: Scalar>(
    x: &[T],
    n: usize,
    inputs: usize,
    weight: &[T],
    outputs: usize,
    dy: &[T],
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let mut dw = vec![T::zero(); outputs * inputs];
    T::gemm(outputs, n, inputs, dy, true, x, false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); outputs];
    for row in dy.chunks(outputs) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); n * inputs];
        T::gemm(n, outputs, inputs, dy, false, weight, false, T::zero(), &mut dx);
        dx
    });
    (dw, db, dx)
}

/// Batch statistics cache for the backward pass.
pub(crate) struct BnCache<T> {
    pub x_hat: Vec<T>,
    pub inv_std: Vec<f64>,
}

pub(crate) struct BnParams<'a, T> {
    pub gamma: &'a [T],
    pub beta: &'a [T],
}

/// Train-mode batch norm. Also returns the batch mean and unbiased variance
/// for the running statistics.
pub(crate) fn bn_forward_train<T: Scalar>(x: &[T], d: Dims, p: BnParams<'_, T>) -> (Vec<T>, BnCache<T>, BatchStats) {
    let hw = d.hw();
    let m = (d.n * hw) as f64;
    let mut mean = vec![0.0f64; d.c];
    let mut var = vec![0.0f64; d.c];
    for ni in 0..d.n {
        for ch in 0..d.c {
            let plane = &x[(ni * d.c + ch) * hw..][..hw];
            mean[ch] += plane.iter().map(|v| v.f64()).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for ni in 0..d.n {
        for ch in 0..d.c {
            let plane = &x[(ni * d.c + ch) * hw..][..hw];
            var[ch] += plane.iter().map(|v| (v.f64() - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let mut x_hat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for ni in 0..d.n {
        for ch in 0..d.c {
            let off = (ni * d.c + ch) * hw;
            let (mu, is) = (mean[ch], inv_std[ch]);
            let (g, b) = (p.gamma[ch], p.beta[ch]);
            for i in off..off + hw {
                let xh = T::of((x[i].f64() - mu) * is);
                x_hat[i] = xh;
                y[i] = g * xh + b;
            }
        }
    }
    let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
    var.iter_mut().for_each(|v| *v *= unbias);
    (y, BnCache { x_hat, inv_std }, BatchStats { mean, var })
}

pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStats {
    /// Exponential moving average update of running statistics.
    pub fn update<T: Scalar>(&self, running_mean: &mut [T], running_var: &mut [T]) {
        for ch in 0..self.mean.len() {
            let rm = running_mean[ch].f64();
            let rv = running_var[ch].f64();
            running_mean[ch] = T::of((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * self.mean[ch]);
            running_var[ch] = T::of((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * self.var[ch]);
        }
    }
}

pub(crate) fn bn_forward_infer<T: Scalar>(x: &[T], d: Dims, p: BnParams<'_, T>, running_mean: &[T], running_var: &[T]) -> Vec<T> {
    let hw = d.hw();
    let mut y = vec![T::zero(); x.len()];
    for ni in 0..d.n {
        for ch in 0..d.c {
            let off = (ni * d.c + ch) * hw;
            let scale = p.gamma[ch] / (running_var[ch] + T::of(BN_EPS)).sqrt();
            let shift = p.beta[ch] - running_mean[ch] * scale;
            for i in off..off + hw {
                y[i] = x[i] * scale + shift;
            }
        }
    }
    y
}

/// Returns `(dgamma, dbeta, dx)`.
pub(crate) fn bn_backward<T: Scalar>(cache: &BnCache<T>, d: Dims, gamma: &[T], dy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = d.hw();
    let m = (d.n * hw) as f64;
    let mut sum_dy = vec![0.0f64; d.c];
    let mut sum_dy_xh = vec![0.0f64; d.c];
    for ni in 0..d.n {
        for ch in 0..d.c {
            let off = (ni * d.c + ch) * hw;
            for i in off..off + hw {
                let g = dy[i].f64();
                sum_dy[ch] += g;
                sum_dy_xh[ch] += g * cache.x_hat[i].f64();
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for ni in 0..d.n {
        for ch in 0..d.c {
            let off = (ni * d.c + ch) * hw;
            let k = gamma[ch].f64() * cache.inv_std[ch] / m;
            for i in off..off + hw {
                let v = k * (m * dy[i].f64() - sum_dy[ch] - cache.x_hat[i].f64() * sum_dy_xh[ch]);
                dx[i] = T::of(v);
            }
        }
    }
    let dgamma = sum_dy_xh.into_iter().map(T::of).collect();
    let dbeta = sum_dy.into_iter().map(T::of).collect();
    (dgamma, dbeta, dx)
}

/// Returns the pooled output and, per output element, the flat input index
/// of its maximum (first maximum on ties).
pub(crate) fn maxpool_forward<T: Scalar>(x: &[T], d: Dims) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let mut y = Vec::with_capacity(d.n * d.c * oh * ow);
    let mut arg = Vec::with_capacity(d.n * d.c * oh * ow);
    for plane in 0..d.n * d.c {
        let base = plane * d.hw();
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * d.w + 2 * ox;
                let cands = [i0, i0 + 1, i0 + d.w, i0 + d.w + 1];
                let mut best = cands[0];
                for &c in &cands[1..] {
                    if x[c] > x[best] {
                        best = c;
                    }
                }
                y.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward<T: Scalar>(arg: &[u32], input_len: usize, dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&i, &g) in arg.iter().zip(dy) {
        dx[i as usize] += g;
    }
    dx
}

pub(crate) fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut impl Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

pub(crate) fn group_softmax<T: Scalar>(x: &[T], bins: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (yo, xi) in y.chunks_mut(bins).zip(x.chunks(bins)) {
        let max = xi.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let exps: Vec<f64> = xi.iter().map(|v| (v.f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (o, e) in yo.iter_mut().zip(exps) {
            *o = T::of(e / sum);
        }
    }
    y
}

pub(crate) fn group_softmax_backward<T: Scalar>(y: &[T], dy: &[T], bins: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((dxo, yi), dyi) in dx.chunks_mut(bins).zip(y.chunks(bins)).zip(dy.chunks(bins)) {
        let dot: f64 = yi.iter().zip(dyi).map(|(a, b)| a.f64() * b.f64()).sum();
        for ((o, a), b) in dxo.iter_mut().zip(yi).zip(dyi) {
            *o = T::of(a.f64() * (b.f64() - dot));
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)>
        let d = Dims { n: 1, c: 2, h: 4, w: 5 };
        let x: Vec<f64> = (0..d.c * d.hw()).map(|i| (i as f64 * 0.7).sin()).collect();
        let c: Vec<f64> = (0..d.c * 9 * d.hw()).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut col = vec![0.0; c.len()];
        im2col(&x, d, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&c, d, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let d = Dims { n: 2, c: 2, h: 3, w: 4 };
        let oc = 3;
        let x: Vec<f64> = (0..d.n * d.c * d.hw()).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..oc * d.c * 9).map(|i| (i as f64 * 0.11).cos()).collect();
        let b = vec![0.1, -0.2, 0.3];
        let y = conv_forward(&x, d, &w, &b, oc);
        for n in 0..d.n {
            for o in 0..oc {
                for yy in 0..d.h as isize {
                    for xx in 0..d.w as isize {
                        let mut acc = b[o];
                        for c in 0..d.c {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                    if sy >= 0 && sy < d.h as isize && sx >= 0 && sx < d.w as isize {
                                        acc += w[(o * d.c + c) * 9 + (ky * 3 + kx) as usize]
                                            * x[((n * d.c + c) * d.h + sy as usize) * d.w + sx as usize];
                                    }
                                }
                            }
                        }
                        let got = y[((n * oc + o) * d.h + yy as usize) * d.w + xx as usize];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn relu_like_pool_and_softmax_basics() {
        let d = Dims { n: 1, c: 1, h: 2, w: 2 };
        let (y, arg) = maxpool_forward(&[1.0f64, 3.0, 3.0, 2.0], d);
        assert_eq!(y, vec![3.0]);
        assert_eq!(arg, vec![1]);
        let p = group_softmax(&[0.0f64; 6], 3);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
}
