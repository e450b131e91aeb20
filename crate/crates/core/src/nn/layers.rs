//! Layer kernels. Each forward function is pure; backward functions take
//! whatever the forward pass cached and return exact analytic gradients.

use rayon::prelude::*;

use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One trainable tensor with its Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let n = value.len();
        Param {
            value,
            m: vec![T::ZERO; n],
            v: vec![T::ZERO; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        let c = |s: &[T]| s.iter().map(|v| U::from_f64(v.to_f64())).collect();
        Param {
            value: c(&self.value),
            m: c(&self.m),
            v: c(&self.v),
        }
    }
}

/// Convolution weights laid out (out_ch, in_ch, kh, kw).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

/// Gradients of one convolution's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, kh: usize, kw: usize) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "convolution kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        if in_ch == 0 || out_ch == 0 {
            return Err(Error::InvalidParameter("convolution needs channels".into()));
        }
        Ok(Conv {
            in_ch,
            out_ch,
            kh,
            kw,
            weight: Param::new(vec![T::ZERO; out_ch * in_ch * kh * kw]),
            bias: Param::new(vec![T::ZERO; out_ch]),
        })
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn zero_grad(&self) -> ConvGrad<T> {
        ConvGrad {
            weight: vec![T::ZERO; self.weight.len()],
            bias: vec![T::ZERO; self.bias.len()],
        }
    }

    pub fn cast<U: Real>(&self) -> Conv<U> {
        Conv {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kh: self.kh,
            kw: self.kw,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.in_ch {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_ch,
                x.channels()
            )));
        }
        Ok(())
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    /// Unrolls one item into a (in_ch·kh·kw) × (h·w) matrix.
    fn im2col(&self, item: &[T], h: usize, w: usize, col: &mut [T]) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let hw = h * w;
        let mut row = 0;
        for c in 0..self.in_ch {
            let plane = &item[c * hw..(c + 1) * hw];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut col[row * hw..(row + 1) * hw];
                    // Valid x range: 0 <= x + kx - pw < w.
                    let x0 = pw.saturating_sub(kx);
                    let x1 = (w + pw).saturating_sub(kx).min(w);
                    for y in 0..h {
                        let d = &mut dst[y * w..(y + 1) * w];
                        let iy = y as isize + ky as isize - ph as isize;
                        if iy < 0 || iy >= h as isize || x0 >= x1 {
                            d.fill(T::ZERO);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        d[..x0].fill(T::ZERO);
                        d[x0..x1].copy_from_slice(&src[x0 + kx - pw..x1 + kx - pw]);
                        d[x1..].fill(T::ZERO);
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adds a column matrix back onto the item it was unrolled from.
    fn col2im(&self, col: &[T], h: usize, w: usize, item: &mut [T]) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let hw = h * w;
        let mut row = 0;
        for c in 0..self.in_ch {
            let plane = &mut item[c * hw..(c + 1) * hw];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &col[row * hw..(row + 1) * hw];
                    let x0 = pw.saturating_sub(kx);
                    let x1 = (w + pw).saturating_sub(kx).min(w);
                    for y in 0..h {
                        let iy = y as isize + ky as isize - ph as isize;
                        if iy < 0 || iy >= h as isize || x0 >= x1 {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (d, &s) in dst[x0 + kx - pw..x1 + kx - pw]
                            .iter_mut()
                            .zip(&src[y * w + x0..y * w + x1])
                        {
                            *d += s;
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// "Same" convolution (cross-correlation) with zero padding of (k−1)/2.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let k = self.fan_in();
        let mut out = Tensor4::zeros([n, self.out_ch, h, w]);
        let item_out = self.out_ch * hw;
        out.data_mut()
            .par_chunks_mut(item_out.max(1))
            .enumerate()
            .for_each_init(Vec::new, |col, (b, dst)| {
                for (o, chunk) in dst.chunks_mut(hw).enumerate() {
                    chunk.fill(self.bias.value[o]);
                }
                let src: &[T] = if self.is_pointwise() {
                    x.item(b)
                } else {
                    col.resize(k * hw, T::ZERO);
                    self.im2col(x.item(b), h, w, col);
                    col
                };
                T::gemm(
                    self.out_ch,
                    k,
                    hw,
                    T::ONE,
                    &self.weight.value,
                    k as isize,
                    1,
                    src,
                    hw as isize,
                    1,
                    T::ONE,
                    dst,
                    hw as isize,
                    1,
                );
            });
        Ok(out)
    }

    /// Returns the input gradient (when requested) and accumulates parameter
    /// gradients into `grad`. Items are reduced in batch order.
    pub fn backward(
        &self,
        x: &Tensor4<T>,
        grad_out: &Tensor4<T>,
        grad: &mut ConvGrad<T>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor4<T>>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        if grad_out.shape() != [n, self.out_ch, h, w] {
            return Err(Error::Shape(format!(
                "convolution gradient shape {:?} does not match output {:?}",
                grad_out.shape(),
                [n, self.out_ch, h, w]
            )));
        }
        let hw = h * w;
        let k = self.fan_in();
        let mut grad_x = want_input_grad.then(|| Tensor4::zeros(x.shape()));
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for b in 0..n {
            let go = grad_out.item(b);
            for (o, g) in go.chunks(hw).enumerate() {
                let mut s = T::ZERO;
                for &v in g {
                    s += v;
                }
                grad.bias[o] += s;
            }
            let src: &[T] = if self.is_pointwise() {
                x.item(b)
            } else {
                col.resize(k * hw, T::ZERO);
                self.im2col(x.item(b), h, w, &mut col);
                &col
            };
            // dW (out × k) += dOut (out × hw) · colᵀ (hw × k)
            T::gemm(
                self.out_ch,
                hw,
                k,
                T::ONE,
                go,
                hw as isize,
                1,
                src,
                1,
                hw as isize,
                T::ONE,
                &mut grad.weight,
                k as isize,
                1,
            );
            if let Some(gx) = grad_x.as_mut() {
                // dcol (k × hw) = Wᵀ (k × out) · dOut (out × hw)
                let target: &mut [T] = if self.is_pointwise() {
                    gx.item_mut(b)
                } else {
                    dcol.resize(k * hw, T::ZERO);
                    &mut dcol
                };
                T::gemm(
                    k,
                    self.out_ch,
                    hw,
                    T::ONE,
                    &self.weight.value,
                    1,
                    k as isize,
                    go,
                    hw as isize,
                    1,
                    T::ZERO,
                    target,
                    hw as isize,
                    1,
                );
                if !self.is_pointwise() {
                    self.col2im(&dcol, h, w, gx.item_mut(b));
                }
            }
        }
        Ok(grad_x)
    }
}

/// Max pooling over non-overlapping p×q windows (p rows, q columns).
/// Returns the output and, per output cell, the flat in-item index of the
/// first-found maximum.
pub fn maxpool_forward<T: Real>(
    x: &Tensor4<T>,
    p: usize,
    q: usize,
) -> Result<(Tensor4<T>, Vec<u32>)> {
    let [n, c, h, w] = x.shape();
    if p == 0 || q == 0 || h % p != 0 || w % q != 0 {
        return Err(Error::Shape(format!(
            "pooling {p}x{q} does not divide extent {h}x{w}"
        )));
    }
    let (oh, ow) = (h / p, w / q);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let mut o = 0;
    for b in 0..n {
        let item = x.item(b);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * p * w + ox * q;
                    for dy in 0..p {
                        for dx in 0..q {
                            let i = base + (oy * p + dy) * w + ox * q + dx;
                            if item[i] > item[best] {
                                best = i;
                            }
                        }
                    }
                    out.data_mut()[o] = item[best];
                    arg[o] = best as u32;
                    o += 1;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool_backward<T: Real>(
    input_shape: [usize; 4],
    argmax: &[u32],
    grad_out: &Tensor4<T>,
) -> Tensor4<T> {
    let mut gx = Tensor4::zeros(input_shape);
    let per_item = grad_out.item_len();
    for b in 0..input_shape[0] {
        let go = grad_out.item(b);
        let arg = &argmax[b * per_item..(b + 1) * per_item];
        let gi = gx.item_mut(b);
        for (&a, &g) in arg.iter().zip(go) {
            gi[a as usize] += g;
        }
    }
    gx
}

/// Nearest-neighbour upsampling by p rows and q columns.
pub fn upsample_forward<T: Real>(x: &Tensor4<T>, p: usize, q: usize) -> Result<Tensor4<T>> {
    if p == 0 || q == 0 {
        return Err(Error::InvalidParameter(
            "upsampling factors must be positive".into(),
        ));
    }
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h * p, w * q);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    for (plane_in, plane_out) in x
        .data()
        .chunks(h * w)
        .zip(out.data_mut().chunks_mut(oh * ow))
    {
        for oy in 0..oh {
            let src = &plane_in[(oy / p) * w..(oy / p + 1) * w];
            let dst = &mut plane_out[oy * ow..(oy + 1) * ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / q];
            }
        }
    }
    Ok(out)
}

pub fn upsample_backward<T: Real>(grad_out: &Tensor4<T>, p: usize, q: usize) -> Tensor4<T> {
    let [n, c, oh, ow] = grad_out.shape();
    let (h, w) = (oh / p, ow / q);
    let mut gx = Tensor4::zeros([n, c, h, w]);
    for (plane_out, plane_in) in grad_out
        .data()
        .chunks(oh * ow)
        .zip(gx.data_mut().chunks_mut(h * w))
    {
        for oy in 0..oh {
            let dst = &mut plane_in[(oy / p) * w..(oy / p + 1) * w];
            for (ox, &g) in plane_out[oy * ow..(oy + 1) * ow].iter().enumerate() {
                dst[ox / q] += g;
            }
        }
    }
    gx
}

pub fn relu_forward<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if !(*v > T::ZERO) {
            *v = T::ZERO;
        }
    }
    out
}

/// Gradient passes where the forward output was positive.
pub fn relu_backward<T: Real>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut gx = grad_out.clone();
    for (g, &y) in gx.data_mut().iter_mut().zip(output.data()) {
        if !(y > T::ZERO) {
            *g = T::ZERO;
        }
    }
    gx
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// 1/(1−rate). Determined entirely by `seed`.
pub fn dropout_mask<T: Real>(len: usize, rate: f64, seed: u64) -> Vec<T> {
    if rate <= 0.0 {
        return vec![T::ONE; len];
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mut rng = Rng::new(seed);
    (0..len)
        .map(|_| if rng.uniform() < rate { T::ZERO } else { keep })
        .collect()
}

pub fn apply_mask<T: Real>(x: &Tensor4<T>, mask: &[T]) -> Tensor4<T> {
    let mut out = x.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask) {
        *v = *v * m;
    }
    out
}

/// Channel concatenation `[a, b]`; spatial extents and batch must agree.
pub fn concat_forward<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::Shape(format!(
            "cannot concatenate {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor4::zeros([n, ca + cb, h, w]);
    let (la, lb) = (a.item_len(), b.item_len());
    for i in 0..n {
        let dst = out.item_mut(i);
        dst[..la].copy_from_slice(a.item(i));
        dst[la..la + lb].copy_from_slice(b.item(i));
    }
    Ok(out)
}

pub fn concat_backward<T: Real>(grad_out: &Tensor4<T>, ca: usize) -> (Tensor4<T>, Tensor4<T>) {
    let [n, c, h, w] = grad_out.shape();
    let mut ga = Tensor4::zeros([n, ca, h, w]);
    let mut gb = Tensor4::zeros([n, c - ca, h, w]);
    let la = ga.item_len();
    for i in 0..n {
        let src = grad_out.item(i);
        ga.item_mut(i).copy_from_slice(&src[..la]);
        gb.item_mut(i).copy_from_slice(&src[la..]);
    }
    (ga, gb)
}

pub fn residual_add<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "residual shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_with(in_ch: usize, out_ch: usize, k: usize, w: Vec<f64>, b: Vec<f64>) -> Conv<f64> {
        let mut c = Conv::zeros(in_ch, out_ch, k, k).unwrap();
        c.weight.value = w;
        c.bias.value = b;
        c
    }

    #[test]
    fn pointwise_unit_conv_is_identity() {
        let c = conv_with(1, 1, 1, vec![1.0], vec![0.0]);
        let x = Tensor4::new(
            [2, 1, 3, 4],
            (0..24).map(|v| v as f64 * 0.3 - 2.0).collect(),
        )
        .unwrap();
        assert_eq!(c.forward(&x).unwrap(), x);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let c = conv_with(1, 1, 3, w, vec![0.0]);
        let x = Tensor4::new([1, 1, 4, 5], (0..20).map(|v| (v * v) as f64).collect()).unwrap();
        assert_eq!(c.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_matches_quadruple_loop() {
        let mut rng = Rng::new(11);
        let (h, w, ci, co, k) = (5usize, 5usize, 2usize, 3usize, 3usize);
        let weights: Vec<f64> = (0..co * ci * k * k).map(|_| rng.normal()).collect();
        let bias: Vec<f64> = (0..co).map(|_| rng.normal()).collect();
        let c = conv_with(ci, co, k, weights.clone(), bias.clone());
        let x = Tensor4::new(
            [1, ci, h, w],
            (0..ci * h * w).map(|_| rng.normal()).collect(),
        )
        .unwrap();
        let y = c.forward(&x).unwrap();
        for o in 0..co {
            for yy in 0..h {
                for xx in 0..w {
                    let mut s = bias[o];
                    for i in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = yy as isize + ky as isize - 1;
                                let ix = xx as isize + kx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += weights[((o * ci + i) * k + ky) * k + kx]
                                    * x.data()[(i * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    assert!((y.data()[(o * h + yy) * w + xx] - s).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn rectangular_kernel_in_f32() {
        let mut c: Conv<f32> = Conv::zeros(1, 1, 1, 3).unwrap();
        c.weight.value = vec![1.0, 2.0, 3.0];
        let x = Tensor4::new([1, 1, 2, 3], vec![1.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let y = c.forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0, 3.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn even_kernels_are_rejected() {
        assert!(Conv::<f32>::zeros(1, 1, 2, 3).is_err());
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let c: Conv<f32> = Conv::zeros(2, 1, 3, 3).unwrap();
        assert!(c.forward(&Tensor4::zeros([1, 1, 4, 4])).is_err());
    }

    #[test]
    fn maxpool_routes_to_argmax() {
        let x = Tensor4::new([1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = maxpool_backward(
            x.shape(),
            &arg,
            &Tensor4::new([1, 1, 1, 1], vec![1.5]).unwrap(),
        );
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn maxpool_ties_pick_first() {
        let x = Tensor4::new([1, 1, 2, 2], vec![7.0f32; 4]).unwrap();
        let (_, arg) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn maxpool_rejects_indivisible_extent() {
        assert!(maxpool_forward(&Tensor4::<f32>::zeros([1, 1, 3, 4]), 2, 2).is_err());
    }

    #[test]
    fn upsample_replicates_and_sums_back() {
        let x = Tensor4::new([1, 1, 1, 1], vec![2.5f32]).unwrap();
        let y = upsample_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5; 4]);
        let g = upsample_backward(&Tensor4::new([1, 1, 2, 2], vec![1.0f32; 4]).unwrap(), 2, 2);
        assert_eq!(g.data(), &[4.0]);
    }

    #[test]
    fn zero_rate_dropout_is_identity() {
        let m: Vec<f32> = dropout_mask(10, 0.0, 3);
        assert!(m.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dropout_mask_is_inverted_and_seeded() {
        let a: Vec<f64> = dropout_mask(10_000, 0.2, 9);
        assert_eq!(a, dropout_mask::<f64>(10_000, 0.2, 9));
        assert!(a.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 1.0).abs() < 0.03);
    }

    #[test]
    fn concat_round_trips_gradients() {
        let a = Tensor4::new([1, 1, 1, 2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor4::new([1, 2, 1, 2], vec![3.0f32, 4.0, 5.0, 6.0]).unwrap();
        let c = concat_forward(&a, &b).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (ga, gb) = concat_backward(&c, 1);
        assert_eq!(ga, a);
        assert_eq!(gb, b);
    }
}
