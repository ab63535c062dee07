//! The trainable denoiser: a small residual CNN on the 2-channel (re/im)
//! view of a complex image, with a hand-written reverse-mode gradient.
//!
//! Layer `l` is a zero-padded "same" convolution; ReLU follows every layer
//! except the last. In residual mode the network output is subtracted from
//! its input. All compute is f64; the inner conv kernels are written so the
//! hot loops vectorize.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::io;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Number of convolution layers (>= 2).
    pub n_layers: usize,
    /// Channel count of every hidden layer.
    pub features: usize,
    /// Odd spatial kernel size.
    pub kernel: usize,
    /// If set, the output is `input - network(input)`.
    pub residual: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            features: 32,
            kernel: 3,
            residual: true,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::invalid("denoiser needs at least 2 layers"));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        if self.features == 0 {
            return Err(Error::invalid("feature count must be positive"));
        }
        Ok(())
    }

    /// (in, out) channel counts of layer `l`: 2 -> features -> ... -> 2.
    pub fn channels(&self, layer: usize) -> (usize, usize) {
        let inc = if layer == 0 { 2 } else { self.features };
        let outc = if layer + 1 == self.n_layers { 2 } else { self.features };
        (inc, outc)
    }
}

/// Weights and bias of one convolution layer. `weight` is laid out
/// `[out_ch][in_ch][k][k]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Flat collection of the named weight tensors of the denoiser. Gradients
/// and Adam moments reuse the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub layers: Vec<ConvLayer>,
}

impl DenoiserParams {
    pub fn zeros(cfg: &DenoiserConfig) -> Self {
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let (inc, outc) = cfg.channels(l);
                ConvLayer {
                    weight: vec![0.0; outc * inc * cfg.kernel * cfg.kernel],
                    bias: vec![0.0; outc],
                }
            })
            .collect();
        Self { layers }
    }

    /// Random initialization: He-scaled normal weights damped by 0.3,
    /// biases zero. The damping keeps the freshly initialized residual
    /// network close to the identity, so the unrolled reconstruction starts
    /// near the plain regularized solve instead of amplifying noise.
    pub fn random(cfg: &DenoiserConfig, rng: &mut SeededRng) -> Self {
        let mut params = Self::zeros(cfg);
        for (l, layer) in params.layers.iter_mut().enumerate() {
            let (inc, _) = cfg.channels(l);
            let std = 0.3 * (2.0 / (inc * cfg.kernel * cfg.kernel) as f64).sqrt();
            for w in layer.weight.iter_mut() {
                *w = std * rng.normal();
            }
        }
        params
    }

    pub fn matches(&self, cfg: &DenoiserConfig) -> bool {
        self.layers.len() == cfg.n_layers
            && self.layers.iter().enumerate().all(|(l, layer)| {
                let (inc, outc) = cfg.channels(l);
                layer.weight.len() == outc * inc * cfg.kernel * cfg.kernel
                    && layer.bias.len() == outc
            })
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Flat view over all tensors, layer by layer, weight before bias.
    pub fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn n_coeffs(&self) -> usize {
        self.tensors().map(|t| t.len()).sum()
    }

    /// `self += a * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &DenoiserParams, a: f64) {
        for (t, o) in self.tensors_mut().zip(other.tensors()) {
            for (x, &y) in t.iter_mut().zip(o) {
                *x += a * y;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= a;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// conv kernels
// ---------------------------------------------------------------------------

/// AVX-512 versions of the two hot 3x3 kernels. The safe scalar kernels
/// below remain both as the fallback and as the reference implementation.
#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    /// Shift a window one/two elements right across a vector pair.
    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn shift1(cur: __m512d, nxt: __m512d) -> __m512d {
        _mm512_castsi512_pd(_mm512_alignr_epi64::<1>(
            _mm512_castpd_si512(nxt),
            _mm512_castpd_si512(cur),
        ))
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn shift2(cur: __m512d, nxt: __m512d) -> __m512d {
        _mm512_castsi512_pd(_mm512_alignr_epi64::<2>(
            _mm512_castpd_si512(nxt),
            _mm512_castpd_si512(cur),
        ))
    }

    /// One output row for two output channels, all nine 3x3 taps fused.
    /// The +1/+2 shifted input windows are synthesized with `valignq` from
    /// loop-carried loads, so each input row costs one load per chunk.
    /// Requires `r*.len() >= acc0.len() + 2` and `acc1.len() == acc0.len()`.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn conv9_row2(
        acc0: &mut [f64],
        acc1: &mut [f64],
        r0: &[f64],
        r1: &[f64],
        r2: &[f64],
        wa: &[f64; 9],
        wb: &[f64; 9],
    ) {
        let n = acc0.len();
        debug_assert!(acc1.len() == n && r0.len() >= n + 2 && r1.len() >= n + 2 && r2.len() >= n + 2);
        let wav: [__m512d; 9] = core::array::from_fn(|i| _mm512_set1_pd(wa[i]));
        let wbv: [__m512d; 9] = core::array::from_fn(|i| _mm512_set1_pd(wb[i]));
        let (p0, p1, p2) = (r0.as_ptr(), r1.as_ptr(), r2.as_ptr());
        let (q0, q1) = (acc0.as_mut_ptr(), acc1.as_mut_ptr());
        let mut x = 0usize;
        if n >= 8 {
            let mut c0 = _mm512_loadu_pd(p0);
            let mut c1 = _mm512_loadu_pd(p1);
            let mut c2 = _mm512_loadu_pd(p2);
            // carried chunks: the next full vector exists while x+16 <= n+2
            while x + 14 <= n {
                let n0 = _mm512_loadu_pd(p0.add(x + 8));
                let n1 = _mm512_loadu_pd(p1.add(x + 8));
                let n2 = _mm512_loadu_pd(p2.add(x + 8));
                let mut a0 = _mm512_loadu_pd(q0.add(x));
                let mut a1 = _mm512_loadu_pd(q1.add(x));

                a0 = _mm512_fmadd_pd(wav[0], c0, a0);
                a1 = _mm512_fmadd_pd(wbv[0], c0, a1);
                let v = shift1(c0, n0);
                a0 = _mm512_fmadd_pd(wav[1], v, a0);
                a1 = _mm512_fmadd_pd(wbv[1], v, a1);
                let v = shift2(c0, n0);
                a0 = _mm512_fmadd_pd(wav[2], v, a0);
                a1 = _mm512_fmadd_pd(wbv[2], v, a1);

                a0 = _mm512_fmadd_pd(wav[3], c1, a0);
                a1 = _mm512_fmadd_pd(wbv[3], c1, a1);
                let v = shift1(c1, n1);
                a0 = _mm512_fmadd_pd(wav[4], v, a0);
                a1 = _mm512_fmadd_pd(wbv[4], v, a1);
                let v = shift2(c1, n1);
                a0 = _mm512_fmadd_pd(wav[5], v, a0);
                a1 = _mm512_fmadd_pd(wbv[5], v, a1);

                a0 = _mm512_fmadd_pd(wav[6], c2, a0);
                a1 = _mm512_fmadd_pd(wbv[6], c2, a1);
                let v = shift1(c2, n2);
                a0 = _mm512_fmadd_pd(wav[7], v, a0);
                a1 = _mm512_fmadd_pd(wbv[7], v, a1);
                let v = shift2(c2, n2);
                a0 = _mm512_fmadd_pd(wav[8], v, a0);
                a1 = _mm512_fmadd_pd(wbv[8], v, a1);

                _mm512_storeu_pd(q0.add(x), a0);
                _mm512_storeu_pd(q1.add(x), a1);
                c0 = n0;
                c1 = n1;
                c2 = n2;
                x += 8;
            }
            // last full chunk (only rows x..x+10 are guaranteed): plain loads
            while x + 8 <= n {
                let mut a0 = _mm512_loadu_pd(q0.add(x));
                let mut a1 = _mm512_loadu_pd(q1.add(x));
                for (t, p) in [(0usize, p0), (3, p1), (6, p2)] {
                    let v = _mm512_loadu_pd(p.add(x));
                    a0 = _mm512_fmadd_pd(wav[t], v, a0);
                    a1 = _mm512_fmadd_pd(wbv[t], v, a1);
                    let v = _mm512_loadu_pd(p.add(x + 1));
                    a0 = _mm512_fmadd_pd(wav[t + 1], v, a0);
                    a1 = _mm512_fmadd_pd(wbv[t + 1], v, a1);
                    let v = _mm512_loadu_pd(p.add(x + 2));
                    a0 = _mm512_fmadd_pd(wav[t + 2], v, a0);
                    a1 = _mm512_fmadd_pd(wbv[t + 2], v, a1);
                }
                _mm512_storeu_pd(q0.add(x), a0);
                _mm512_storeu_pd(q1.add(x), a1);
                x += 8;
            }
        }
        while x < n {
            let (a0, a1, a2) = (r0[x], r0[x + 1], r0[x + 2]);
            let (b0, b1, b2) = (r1[x], r1[x + 1], r1[x + 2]);
            let (c0, c1, c2) = (r2[x], r2[x + 1], r2[x + 2]);
            acc0[x] += (wa[0] * a0 + wa[1] * a1 + wa[2] * a2)
                + (wa[3] * b0 + wa[4] * b1 + wa[5] * b2)
                + (wa[6] * c0 + wa[7] * c1 + wa[8] * c2);
            acc1[x] += (wb[0] * a0 + wb[1] * a1 + wb[2] * a2)
                + (wb[3] * b0 + wb[4] * b1 + wb[5] * b2)
                + (wb[6] * c0 + wb[7] * c1 + wb[8] * c2);
            x += 1;
        }
    }

    /// Whole k=3 convolution: output channels in pairs so the nine input
    /// row loads are shared, entire (oc, y, ic) nest inside one
    /// target-feature function so the row kernels inline.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn conv_k3(
        out: &mut [Vec<f64>],
        xp: &[Vec<f64>],
        weight: &[f64],
        in_ch: usize,
        out_ch: usize,
        h: usize,
        w: usize,
        wp: usize,
    ) {
        let warr = |base: usize| -> [f64; 9] { weight[base..base + 9].try_into().unwrap() };
        let mut oc = 0;
        while oc + 1 < out_ch {
            let (left, right) = out.split_at_mut(oc + 1);
            let acc_a = &mut left[oc];
            let acc_b = &mut right[0];
            for y in 0..h {
                let ya = &mut acc_a[y * w..(y + 1) * w];
                let yb = &mut acc_b[y * w..(y + 1) * w];
                for (ic, plane) in xp.iter().enumerate().take(in_ch) {
                    let wa = warr((oc * in_ch + ic) * 9);
                    let wb = warr(((oc + 1) * in_ch + ic) * 9);
                    conv9_row2(
                        ya,
                        yb,
                        &plane[y * wp..y * wp + w + 2],
                        &plane[(y + 1) * wp..(y + 1) * wp + w + 2],
                        &plane[(y + 2) * wp..(y + 2) * wp + w + 2],
                        &wa,
                        &wb,
                    );
                }
            }
            oc += 2;
        }
        if oc < out_ch {
            let acc = &mut out[oc];
            for y in 0..h {
                let ya = &mut acc[y * w..(y + 1) * w];
                for (ic, plane) in xp.iter().enumerate().take(in_ch) {
                    let wa = warr((oc * in_ch + ic) * 9);
                    conv9_row(
                        ya,
                        &plane[y * wp..y * wp + w + 2],
                        &plane[(y + 1) * wp..(y + 1) * wp + w + 2],
                        &plane[(y + 2) * wp..(y + 2) * wp + w + 2],
                        &wa,
                    );
                }
            }
        }
    }

    /// Single-channel variant of [`conv9_row2`].
    #[target_feature(enable = "avx512f")]
    pub unsafe fn conv9_row(
        acc: &mut [f64],
        r0: &[f64],
        r1: &[f64],
        r2: &[f64],
        w: &[f64; 9],
    ) {
        let n = acc.len();
        debug_assert!(r0.len() >= n + 2 && r1.len() >= n + 2 && r2.len() >= n + 2);
        let wv: [__m512d; 9] = core::array::from_fn(|i| _mm512_set1_pd(w[i]));
        let (p0, p1, p2) = (r0.as_ptr(), r1.as_ptr(), r2.as_ptr());
        let q = acc.as_mut_ptr();
        let mut x = 0usize;
        while x + 8 <= n {
            let mut a = _mm512_loadu_pd(q.add(x));
            a = _mm512_fmadd_pd(wv[0], _mm512_loadu_pd(p0.add(x)), a);
            a = _mm512_fmadd_pd(wv[1], _mm512_loadu_pd(p0.add(x + 1)), a);
            a = _mm512_fmadd_pd(wv[2], _mm512_loadu_pd(p0.add(x + 2)), a);
            a = _mm512_fmadd_pd(wv[3], _mm512_loadu_pd(p1.add(x)), a);
            a = _mm512_fmadd_pd(wv[4], _mm512_loadu_pd(p1.add(x + 1)), a);
            a = _mm512_fmadd_pd(wv[5], _mm512_loadu_pd(p1.add(x + 2)), a);
            a = _mm512_fmadd_pd(wv[6], _mm512_loadu_pd(p2.add(x)), a);
            a = _mm512_fmadd_pd(wv[7], _mm512_loadu_pd(p2.add(x + 1)), a);
            a = _mm512_fmadd_pd(wv[8], _mm512_loadu_pd(p2.add(x + 2)), a);
            _mm512_storeu_pd(q.add(x), a);
            x += 8;
        }
        while x < n {
            let (a0, a1, a2) = (r0[x], r0[x + 1], r0[x + 2]);
            let (b0, b1, b2) = (r1[x], r1[x + 1], r1[x + 2]);
            let (c0, c1, c2) = (r2[x], r2[x + 1], r2[x + 2]);
            acc[x] += (w[0] * a0 + w[1] * a1 + w[2] * a2)
                + (w[3] * b0 + w[4] * b1 + w[5] * b2)
                + (w[6] * c0 + w[7] * c1 + w[8] * c2);
            x += 1;
        }
    }

    /// All nine 3x3 weight-gradient dots over a whole plane, with the
    /// 8-lane partial sums kept in registers across rows.
    ///
    /// `dw[dy*3+dx] = sum_{y,x} cot[y*w+x] * xp[(y+dy)*wp + x + dx]`
    #[target_feature(enable = "avx512f")]
    pub unsafe fn dot9_plane(cot: &[f64], xp: &[f64], h: usize, w: usize, wp: usize) -> [f64; 9] {
        debug_assert!(cot.len() >= h * w && xp.len() >= (h + 2) * wp && wp >= w + 2);
        let mut acc: [__m512d; 9] = [_mm512_setzero_pd(); 9];
        let mut tail = [0.0f64; 9];
        for y in 0..h {
            let crow = cot.as_ptr().add(y * w);
            let p0 = xp.as_ptr().add(y * wp);
            let p1 = xp.as_ptr().add((y + 1) * wp);
            let p2 = xp.as_ptr().add((y + 2) * wp);
            let mut x = 0usize;
            if w >= 8 {
                let mut c0 = _mm512_loadu_pd(p0);
                let mut c1 = _mm512_loadu_pd(p1);
                let mut c2 = _mm512_loadu_pd(p2);
                while x + 14 <= w {
                    let n0 = _mm512_loadu_pd(p0.add(x + 8));
                    let n1 = _mm512_loadu_pd(p1.add(x + 8));
                    let n2 = _mm512_loadu_pd(p2.add(x + 8));
                    let c = _mm512_loadu_pd(crow.add(x));
                    acc[0] = _mm512_fmadd_pd(c, c0, acc[0]);
                    acc[1] = _mm512_fmadd_pd(c, shift1(c0, n0), acc[1]);
                    acc[2] = _mm512_fmadd_pd(c, shift2(c0, n0), acc[2]);
                    acc[3] = _mm512_fmadd_pd(c, c1, acc[3]);
                    acc[4] = _mm512_fmadd_pd(c, shift1(c1, n1), acc[4]);
                    acc[5] = _mm512_fmadd_pd(c, shift2(c1, n1), acc[5]);
                    acc[6] = _mm512_fmadd_pd(c, c2, acc[6]);
                    acc[7] = _mm512_fmadd_pd(c, shift1(c2, n2), acc[7]);
                    acc[8] = _mm512_fmadd_pd(c, shift2(c2, n2), acc[8]);
                    c0 = n0;
                    c1 = n1;
                    c2 = n2;
                    x += 8;
                }
                while x + 8 <= w {
                    let c = _mm512_loadu_pd(crow.add(x));
                    acc[0] = _mm512_fmadd_pd(c, _mm512_loadu_pd(p0.add(x)), acc[0]);
                    acc[1] = _mm512_fmadd_pd(c, _mm512_loadu_pd(p0.add(x + 1)), acc[1]);
                    acc[2] = _mm512_fmadd_pd(c, _mm512_loadu_pd(p0.add(x + 2)), acc[2]);
                    acc[3] = _mm512_fmadd_pd(c, _mm512_loadu_pd(p1.add(x)), acc[3]);
                    acc[4] = _mm512_fmadd_pd(c, _mm512_loadu_pd(p1.add(x + 1)), acc[4]);
                    acc[5] = _mm512_fmadd_pd(c, _mm512_loadu_pd(p1.add(x + 2)), acc[5]);
                    acc[6] = _mm512_fmadd_pd(c, _mm512_loadu_pd(p2.add(x)), acc[6]);
                    acc[7] = _mm512_fmadd_pd(c, _mm512_loadu_pd(p2.add(x + 1)), acc[7]);
                    acc[8] = _mm512_fmadd_pd(c, _mm512_loadu_pd(p2.add(x + 2)), acc[8]);
                    x += 8;
                }
            }
            while x < w {
                let c = *crow.add(x);
                tail[0] += c * *p0.add(x);
                tail[1] += c * *p0.add(x + 1);
                tail[2] += c * *p0.add(x + 2);
                tail[3] += c * *p1.add(x);
                tail[4] += c * *p1.add(x + 1);
                tail[5] += c * *p1.add(x + 2);
                tail[6] += c * *p2.add(x);
                tail[7] += c * *p2.add(x + 1);
                tail[8] += c * *p2.add(x + 2);
                x += 1;
            }
        }
        core::array::from_fn(|i| _mm512_reduce_add_pd(acc[i]) + tail[i])
    }

    pub fn available() -> bool {
        std::arch::is_x86_feature_detected!("avx512f")
    }
}

#[cfg(target_arch = "x86_64")]
fn use_avx512() -> bool {
    avx512::available()
}

#[cfg(not(target_arch = "x86_64"))]
fn use_avx512() -> bool {
    false
}

/// Copies an `h x w` plane into an `(h+2p) x (w+2p)` zero-padded buffer.
fn pad_plane(plane: &[f64], h: usize, w: usize, p: usize) -> Vec<f64> {
    let wp = w + 2 * p;
    let mut out = vec![0.0; (h + 2 * p) * wp];
    for y in 0..h {
        out[(y + p) * wp + p..(y + p) * wp + p + w].copy_from_slice(&plane[y * w..(y + 1) * w]);
    }
    out
}

/// All nine 3x3 taps of one output row in a single pass:
/// acc[x] += sum_{dy,dx} w[dy*3+dx] * r_dy[x+dx].
#[inline]
fn conv9_row(acc: &mut [f64], r0: &[f64], r1: &[f64], r2: &[f64], w: &[f64; 9]) {
    let n = acc.len();
    let r0 = &r0[..n + 2];
    let r1 = &r1[..n + 2];
    let r2 = &r2[..n + 2];
    for x in 0..n {
        let s = (w[0] * r0[x] + w[1] * r0[x + 1] + w[2] * r0[x + 2])
            + (w[3] * r1[x] + w[4] * r1[x + 1] + w[5] * r1[x + 2])
            + (w[6] * r2[x] + w[7] * r2[x + 1] + w[8] * r2[x + 2]);
        acc[x] += s;
    }
}

/// Two output channels at once so the nine input row loads are shared.
#[inline]
fn conv9_row2(
    acc0: &mut [f64],
    acc1: &mut [f64],
    r0: &[f64],
    r1: &[f64],
    r2: &[f64],
    wa: &[f64; 9],
    wb: &[f64; 9],
) {
    let n = acc0.len();
    let r0 = &r0[..n + 2];
    let r1 = &r1[..n + 2];
    let r2 = &r2[..n + 2];
    let acc1 = &mut acc1[..n];
    for x in 0..n {
        let (a0, a1, a2) = (r0[x], r0[x + 1], r0[x + 2]);
        let (b0, b1, b2) = (r1[x], r1[x + 1], r1[x + 2]);
        let (c0, c1, c2) = (r2[x], r2[x + 1], r2[x + 2]);
        acc0[x] += (wa[0] * a0 + wa[1] * a1 + wa[2] * a2)
            + (wa[3] * b0 + wa[4] * b1 + wa[5] * b2)
            + (wa[6] * c0 + wa[7] * c1 + wa[8] * c2);
        acc1[x] += (wb[0] * a0 + wb[1] * a1 + wb[2] * a2)
            + (wb[3] * b0 + wb[4] * b1 + wb[5] * b2)
            + (wb[6] * c0 + wb[7] * c1 + wb[8] * c2);
    }
}

#[inline]
fn axpy_row_generic(acc: &mut [f64], row: &[f64], wrow: &[f64]) {
    let n = acc.len();
    for (dx, &w) in wrow.iter().enumerate() {
        let row = &row[dx..dx + n];
        for x in 0..n {
            acc[x] += w * row[x];
        }
    }
}

/// Zero-padded "same" correlation of `in_ch` padded planes into `out_ch`
/// planes, plus bias. `weight` is `[out_ch][in_ch][k][k]`.
fn conv_forward(
    xp: &[Vec<f64>],
    weight: &[f64],
    bias: &[f64],
    in_ch: usize,
    out_ch: usize,
    k: usize,
    h: usize,
    w: usize,
) -> Vec<Vec<f64>> {
    let wp = w + k - 1;
    let ksq = k * k;
    let mut out: Vec<Vec<f64>> = bias.iter().map(|&b| vec![b; h * w]).collect();

    if k == 3 {
        #[cfg(target_arch = "x86_64")]
        if use_avx512() {
            unsafe { avx512::conv_k3(&mut out, xp, weight, in_ch, out_ch, h, w, wp) };
            return out;
        }
        let warr = |base: usize| -> [f64; 9] { weight[base..base + 9].try_into().unwrap() };
        let mut oc = 0;
        while oc + 1 < out_ch {
            let (left, right) = out.split_at_mut(oc + 1);
            let acc_a = &mut left[oc];
            let acc_b = &mut right[0];
            for y in 0..h {
                let ya = &mut acc_a[y * w..(y + 1) * w];
                let yb = &mut acc_b[y * w..(y + 1) * w];
                for (ic, plane) in xp.iter().enumerate().take(in_ch) {
                    let wa = warr((oc * in_ch + ic) * ksq);
                    let wb = warr(((oc + 1) * in_ch + ic) * ksq);
                    let r0 = &plane[y * wp..y * wp + w + 2];
                    let r1 = &plane[(y + 1) * wp..(y + 1) * wp + w + 2];
                    let r2 = &plane[(y + 2) * wp..(y + 2) * wp + w + 2];
                    conv9_row2(ya, yb, r0, r1, r2, &wa, &wb);
                }
            }
            oc += 2;
        }
        if oc < out_ch {
            let acc = &mut out[oc];
            for y in 0..h {
                let ya = &mut acc[y * w..(y + 1) * w];
                for (ic, plane) in xp.iter().enumerate().take(in_ch) {
                    let wa = warr((oc * in_ch + ic) * ksq);
                    let r0 = &plane[y * wp..y * wp + w + 2];
                    let r1 = &plane[(y + 1) * wp..(y + 1) * wp + w + 2];
                    let r2 = &plane[(y + 2) * wp..(y + 2) * wp + w + 2];
                    conv9_row(ya, r0, r1, r2, &wa);
                }
            }
        }
    } else {
        for (oc, acc) in out.iter_mut().enumerate() {
            for ic in 0..in_ch {
                let plane = &xp[ic];
                let wbase = (oc * in_ch + ic) * ksq;
                for dy in 0..k {
                    let wrow = &weight[wbase + dy * k..wbase + (dy + 1) * k];
                    for y in 0..h {
                        let row = &plane[(y + dy) * wp..(y + dy) * wp + w + k - 1];
                        axpy_row_generic(&mut acc[y * w..(y + 1) * w], row, wrow);
                    }
                }
            }
        }
    }
    out
}

const LANES: usize = 8;

/// dw[dy*3+dx] += sum_x cot[x] * r_dy[x+dx] for all nine 3x3 taps in one
/// pass. Each tap keeps its own lane-blocked partial sums so the loop
/// vectorizes deterministically and the accumulators stay in registers.
#[inline]
fn dot9_rows(cot: &[f64], r0: &[f64], r1: &[f64], r2: &[f64], acc: &mut [[f64; LANES]; 9]) {
    let n = cot.len();
    let r0 = &r0[..n + 2];
    let r1 = &r1[..n + 2];
    let r2 = &r2[..n + 2];
    let mut a0 = acc[0];
    let mut a1 = acc[1];
    let mut a2 = acc[2];
    let mut a3 = acc[3];
    let mut a4 = acc[4];
    let mut a5 = acc[5];
    let mut a6 = acc[6];
    let mut a7 = acc[7];
    let mut a8 = acc[8];
    let chunks = n / LANES;
    for ch in 0..chunks {
        let base = ch * LANES;
        let c: &[f64; LANES] = cot[base..base + LANES].try_into().unwrap();
        let w0: &[f64; LANES + 2] = r0[base..base + LANES + 2].try_into().unwrap();
        let w1: &[f64; LANES + 2] = r1[base..base + LANES + 2].try_into().unwrap();
        let w2: &[f64; LANES + 2] = r2[base..base + LANES + 2].try_into().unwrap();
        for j in 0..LANES {
            a0[j] += c[j] * w0[j];
            a1[j] += c[j] * w0[j + 1];
            a2[j] += c[j] * w0[j + 2];
        }
        for j in 0..LANES {
            a3[j] += c[j] * w1[j];
            a4[j] += c[j] * w1[j + 1];
            a5[j] += c[j] * w1[j + 2];
        }
        for j in 0..LANES {
            a6[j] += c[j] * w2[j];
            a7[j] += c[j] * w2[j + 1];
            a8[j] += c[j] * w2[j + 2];
        }
    }
    for x in chunks * LANES..n {
        let c = cot[x];
        a0[0] += c * r0[x];
        a1[0] += c * r0[x + 1];
        a2[0] += c * r0[x + 2];
        a3[0] += c * r1[x];
        a4[0] += c * r1[x + 1];
        a5[0] += c * r1[x + 2];
        a6[0] += c * r2[x];
        a7[0] += c * r2[x + 1];
        a8[0] += c * r2[x + 2];
    }
    acc[0] = a0;
    acc[1] = a1;
    acc[2] = a2;
    acc[3] = a3;
    acc[4] = a4;
    acc[5] = a5;
    acc[6] = a6;
    acc[7] = a7;
    acc[8] = a8;
}

#[inline]
fn dot_row_generic(cot: &[f64], xrow: &[f64], k: usize, acc: &mut [f64]) {
    let n = cot.len();
    for dx in 0..k {
        let xr = &xrow[dx..dx + n];
        let mut lanes = [0.0f64; LANES];
        let chunks = n / LANES;
        for ch in 0..chunks {
            let base = ch * LANES;
            for j in 0..LANES {
                lanes[j] += cot[base + j] * xr[base + j];
            }
        }
        let mut s: f64 = lanes.iter().sum();
        for x in chunks * LANES..n {
            s += cot[x] * xr[x];
        }
        acc[dx] += s;
    }
}

/// Gradient of the loss w.r.t. one layer's weights and bias, given the
/// padded layer input and the cotangent of the layer's pre-activation.
fn conv_weight_grad(
    xp: &[Vec<f64>],
    cot: &[Vec<f64>],
    in_ch: usize,
    out_ch: usize,
    k: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let wp = w + k - 1;
    let ksq = k * k;
    let mut dweight = vec![0.0; out_ch * in_ch * ksq];
    let mut dbias = vec![0.0; out_ch];

    for oc in 0..out_ch {
        let cplane = &cot[oc];
        // bias: plain blocked sum
        {
            let mut lanes = [0.0f64; LANES];
            let chunks = cplane.len() / LANES;
            for ch in 0..chunks {
                for j in 0..LANES {
                    lanes[j] += cplane[ch * LANES + j];
                }
            }
            let mut s: f64 = lanes.iter().sum();
            for &v in &cplane[chunks * LANES..] {
                s += v;
            }
            dbias[oc] = s;
        }
        for ic in 0..in_ch {
            let plane = &xp[ic];
            let wbase = (oc * in_ch + ic) * ksq;
            if k == 3 {
                #[cfg(target_arch = "x86_64")]
                if use_avx512() {
                    let dw = unsafe { avx512::dot9_plane(cplane, plane, h, w, wp) };
                    dweight[wbase..wbase + 9].copy_from_slice(&dw);
                    continue;
                }
                let mut acc = [[0.0f64; LANES]; 9];
                for y in 0..h {
                    dot9_rows(
                        &cplane[y * w..(y + 1) * w],
                        &plane[y * wp..y * wp + w + 2],
                        &plane[(y + 1) * wp..(y + 1) * wp + w + 2],
                        &plane[(y + 2) * wp..(y + 2) * wp + w + 2],
                        &mut acc,
                    );
                }
                for t in 0..9 {
                    dweight[wbase + t] = acc[t].iter().sum();
                }
            } else {
                for dy in 0..k {
                    let mut acc = vec![0.0; k];
                    for y in 0..h {
                        dot_row_generic(
                            &cplane[y * w..(y + 1) * w],
                            &plane[(y + dy) * wp..(y + dy) * wp + w + k - 1],
                            k,
                            &mut acc,
                        );
                    }
                    dweight[wbase + dy * k..wbase + (dy + 1) * k].copy_from_slice(&acc);
                }
            }
        }
    }
    (dweight, dbias)
}

/// Backprops a pre-activation cotangent to the layer input: a "same"
/// correlation of the padded cotangent with the 180-degree-rotated kernel,
/// with in/out channel roles swapped.
fn conv_input_grad(
    cot: &[Vec<f64>],
    weight: &[f64],
    in_ch: usize,
    out_ch: usize,
    k: usize,
    h: usize,
    w: usize,
) -> Vec<Vec<f64>> {
    let p = (k - 1) / 2;
    let ksq = k * k;
    let cot_padded: Vec<Vec<f64>> = cot.iter().map(|c| pad_plane(c, h, w, p)).collect();
    // flipped[ic][oc][dy][dx] = weight[oc][ic][k-1-dy][k-1-dx]
    let mut flipped = vec![0.0; in_ch * out_ch * ksq];
    for oc in 0..out_ch {
        for ic in 0..in_ch {
            for dy in 0..k {
                for dx in 0..k {
                    flipped[(ic * out_ch + oc) * ksq + dy * k + dx] =
                        weight[(oc * in_ch + ic) * ksq + (k - 1 - dy) * k + (k - 1 - dx)];
                }
            }
        }
    }
    let zero_bias = vec![0.0; in_ch];
    conv_forward(&cot_padded, &flipped, &zero_bias, out_ch, in_ch, k, h, w)
}

// ---------------------------------------------------------------------------
// network forward / backward
// ---------------------------------------------------------------------------

fn split_channels(img: &ComplexImage) -> Vec<Vec<f64>> {
    let re = img.as_slice().iter().map(|z| z.re).collect();
    let im = img.as_slice().iter().map(|z| z.im).collect();
    vec![re, im]
}

fn combine_channels(planes: &[Vec<f64>], h: usize, w: usize) -> ComplexImage {
    let data = planes[0]
        .iter()
        .zip(&planes[1])
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    ComplexImage::from_vec_unchecked(h, w, data)
}

/// Saved forward state: the padded input planes of every layer. ReLU masks
/// are recovered from the next layer's input, so nothing else is needed.
pub struct DenoiserTape {
    padded_inputs: Vec<Vec<Vec<f64>>>,
    out: Vec<Vec<f64>>,
    h: usize,
    w: usize,
}

fn check_shapes(params: &DenoiserParams, cfg: &DenoiserConfig, img: &ComplexImage) -> Result<()> {
    cfg.validate()?;
    if !params.matches(cfg) {
        return Err(Error::shape("denoiser parameters do not match config"));
    }
    let p = (cfg.kernel - 1) / 2;
    let _ = p;
    if img.height() == 0 || img.width() == 0 {
        return Err(Error::shape("empty image"));
    }
    Ok(())
}

fn forward_tape(
    params: &DenoiserParams,
    cfg: &DenoiserConfig,
    img: &ComplexImage,
) -> DenoiserTape {
    let (h, w) = (img.height(), img.width());
    let p = (cfg.kernel - 1) / 2;
    let mut current = split_channels(img);
    let mut padded_inputs = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let (inc, outc) = cfg.channels(l);
        let xp: Vec<Vec<f64>> = current.iter().map(|pl| pad_plane(pl, h, w, p)).collect();
        let mut out = conv_forward(
            &xp,
            &params.layers[l].weight,
            &params.layers[l].bias,
            inc,
            outc,
            cfg.kernel,
            h,
            w,
        );
        padded_inputs.push(xp);
        if l + 1 < cfg.n_layers {
            for plane in out.iter_mut() {
                for v in plane.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        current = out;
    }
    DenoiserTape {
        padded_inputs,
        out: current,
        h,
        w,
    }
}

/// Runs the denoiser.
pub fn denoise(
    params: &DenoiserParams,
    cfg: &DenoiserConfig,
    img: &ComplexImage,
) -> Result<ComplexImage> {
    Ok(denoise_with_tape(params, cfg, img)?.0)
}

/// Runs the denoiser and keeps the intermediates needed for the backward
/// pass.
pub fn denoise_with_tape(
    params: &DenoiserParams,
    cfg: &DenoiserConfig,
    img: &ComplexImage,
) -> Result<(ComplexImage, DenoiserTape)> {
    check_shapes(params, cfg, img)?;
    let tape = forward_tape(params, cfg, img);
    let net = combine_channels(&tape.out, tape.h, tape.w);
    let out = if cfg.residual { img.sub(&net) } else { net };
    Ok((out, tape))
}

/// Backward pass from a recorded tape. Returns the gradients of
/// `<cotangent, output>` (real inner product over the 2-channel view) with
/// respect to the parameters and the input image.
pub fn denoise_vjp_from_tape(
    params: &DenoiserParams,
    cfg: &DenoiserConfig,
    tape: &DenoiserTape,
    cotangent: &ComplexImage,
) -> Result<(DenoiserParams, ComplexImage)> {
    if cotangent.height() != tape.h || cotangent.width() != tape.w {
        return Err(Error::shape("cotangent dimensions do not match output"));
    }
    let (h, w) = (tape.h, tape.w);
    let p = (cfg.kernel - 1) / 2;
    let wp = w + 2 * p;

    // seed for the plain network: -cot in residual mode, +cot otherwise
    let seed = if cfg.residual {
        cotangent.scale(Complex64::new(-1.0, 0.0))
    } else {
        cotangent.clone()
    };
    let mut cot_planes = split_channels(&seed);

    let mut grads = DenoiserParams::zeros(cfg);
    for l in (0..cfg.n_layers).rev() {
        let (inc, outc) = cfg.channels(l);
        // ReLU mask: the stored input of layer l+1 is relu(preact_l)
        if l + 1 < cfg.n_layers {
            let next_inputs = &tape.padded_inputs[l + 1];
            for (oc, cplane) in cot_planes.iter_mut().enumerate() {
                let padded = &next_inputs[oc];
                for y in 0..h {
                    let prow = &padded[(y + p) * wp + p..(y + p) * wp + p + w];
                    let crow = &mut cplane[y * w..(y + 1) * w];
                    for x in 0..w {
                        if prow[x] <= 0.0 {
                            crow[x] = 0.0;
                        }
                    }
                }
            }
        }
        let xp = &tape.padded_inputs[l];
        let (dw, db) = conv_weight_grad(xp, &cot_planes, inc, outc, cfg.kernel, h, w);
        grads.layers[l].weight = dw;
        grads.layers[l].bias = db;
        cot_planes = conv_input_grad(
            &cot_planes,
            &params.layers[l].weight,
            inc,
            outc,
            cfg.kernel,
            h,
            w,
        );
    }

    let mut grad_input = combine_channels(&cot_planes, h, w);
    if cfg.residual {
        grad_input = cotangent.add(&grad_input);
    }
    Ok((grads, grad_input))
}

/// Forward + backward in one call.
pub fn denoise_vjp(
    params: &DenoiserParams,
    cfg: &DenoiserConfig,
    img: &ComplexImage,
    cotangent: &ComplexImage,
) -> Result<(DenoiserParams, ComplexImage)> {
    let (_, tape) = denoise_with_tape(params, cfg, img)?;
    denoise_vjp_from_tape(params, cfg, &tape, cotangent)
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    config: DenoiserConfig,
    tensors: Vec<TensorEntry>,
}

fn tensor_entries(cfg: &DenoiserConfig) -> Vec<TensorEntry> {
    let mut entries = Vec::new();
    for l in 0..cfg.n_layers {
        let (inc, outc) = cfg.channels(l);
        entries.push(TensorEntry {
            name: format!("layer{l}.weight"),
            shape: vec![outc, inc, cfg.kernel, cfg.kernel],
        });
        entries.push(TensorEntry {
            name: format!("layer{l}.bias"),
            shape: vec![outc],
        });
    }
    entries
}

/// Saves parameters into `dir`: one `.hdr`/`.cpx` pair per named tensor
/// (imaginary parts zero) plus `manifest.json` listing names, shapes and the
/// denoiser configuration.
pub fn save_params(dir: &Path, cfg: &DenoiserConfig, params: &DenoiserParams) -> Result<()> {
    if !params.matches(cfg) {
        return Err(Error::shape("parameters do not match config"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = WeightsManifest {
        config: cfg.clone(),
        tensors: tensor_entries(cfg),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    io::write_atomic(&dir.join("manifest.json"), json.as_bytes())?;
    for (entry, tensor) in manifest.tensors.iter().zip(params.tensors()) {
        let data: Vec<Complex64> = tensor.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let img = ComplexImage::new(1, tensor.len(), data)?;
        io::write_complex_image(&dir.join(&entry.name), &img)?;
    }
    Ok(())
}

/// Loads parameters saved by [`save_params`].
pub fn load_params(dir: &Path) -> Result<(DenoiserConfig, DenoiserParams)> {
    let manifest_path = dir.join("manifest.json");
    let json = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: WeightsManifest = serde_json::from_str(&json)
        .map_err(|e| Error::format(&manifest_path, format!("bad manifest: {e}")))?;
    manifest.config.validate()?;
    let expected = tensor_entries(&manifest.config);
    if expected.len() != manifest.tensors.len()
        || expected
            .iter()
            .zip(&manifest.tensors)
            .any(|(a, b)| a.name != b.name || a.shape != b.shape)
    {
        return Err(Error::format(
            &manifest_path,
            "tensor list does not match config",
        ));
    }
    let mut params = DenoiserParams::zeros(&manifest.config);
    for (entry, tensor) in manifest.tensors.iter().zip(params.tensors_mut()) {
        let img = io::read_complex_image(&dir.join(&entry.name))?;
        let numel: usize = entry.shape.iter().product();
        if img.len() != numel {
            return Err(Error::shape(format!(
                "tensor {} has {} values, expected {numel}",
                entry.name,
                img.len()
            )));
        }
        for (dst, z) in tensor.iter_mut().zip(img.as_slice()) {
            *dst = z.re;
        }
    }
    Ok((manifest.config, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_image(h: usize, w: usize, rng: &mut SeededRng) -> ComplexImage {
        ComplexImage::from_fn(h, w, |_, _| z(rng.normal(), rng.normal()))
    }

    #[test]
    fn zero_network_residual_is_identity() {
        let cfg = DenoiserConfig::default();
        let params = DenoiserParams::zeros(&cfg);
        let mut rng = SeededRng::new(1);
        let img = random_image(6, 5, &mut rng);
        let out = denoise(&params, &cfg, &img).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn bias_only_network_is_constant() {
        let cfg = DenoiserConfig {
            residual: false,
            ..DenoiserConfig::default()
        };
        let mut params = DenoiserParams::zeros(&cfg);
        let last = cfg.n_layers - 1;
        params.layers[last].bias = vec![0.25, -1.5];
        let img = ComplexImage::zeros(4, 4);
        let out = denoise(&params, &cfg, &img).unwrap();
        for &v in out.as_slice() {
            assert!((v - z(0.25, -1.5)).norm() < 1e-15);
        }
    }

    /// A 2-layer net arranged to behave like a single hand-set 3x3 kernel on
    /// the real channel: positive input keeps the ReLU transparent and the
    /// second layer passes feature 0 through its center tap.
    #[test]
    fn hand_convolution_oracle() {
        let cfg = DenoiserConfig {
            n_layers: 2,
            features: 2,
            kernel: 3,
            residual: false,
        };
        let mut params = DenoiserParams::zeros(&cfg);
        let kernel = [0.5, 1.0, 0.25, 2.0, 3.0, 0.75, 0.1, 0.9, 1.5];
        // layer 0: feature 0 = kernel * re(channel 0)
        params.layers[0].weight[..9].copy_from_slice(&kernel);
        // layer 1: out channel 0 = feature 0 (center tap)
        params.layers[1].weight[4] = 1.0;

        let img = ComplexImage::from_fn(3, 3, |r, c| z((r * 3 + c + 1) as f64, -7.0));
        let out = denoise(&params, &cfg, &img).unwrap();

        // independent direct correlation with zero padding
        for y in 0..3i64 {
            for x in 0..3i64 {
                let mut acc = 0.0;
                for dy in 0..3i64 {
                    for dx in 0..3i64 {
                        let (sy, sx) = (y + dy - 1, x + dx - 1);
                        if (0..3).contains(&sy) && (0..3).contains(&sx) {
                            acc += kernel[(dy * 3 + dx) as usize]
                                * img.at(sy as usize, sx as usize).re;
                        }
                    }
                }
                let got = out.at(y as usize, x as usize);
                assert!((got.re - acc).abs() < 1e-12, "at ({y},{x}): {got} vs {acc}");
                assert!(got.im.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let cfg = DenoiserConfig {
            n_layers: 3,
            features: 4,
            kernel: 3,
            residual: true,
        };
        let mut rng = SeededRng::new(2);
        let params = DenoiserParams::random(&cfg, &mut rng);
        let img = random_image(5, 5, &mut rng);
        let cot = ComplexImage::zeros(5, 5);
        let (grads, gin) = denoise_vjp(&params, &cfg, &img, &cot).unwrap();
        assert!(grads.tensors().all(|t| t.iter().all(|&v| v == 0.0)));
        assert_eq!(gin.norm_sqr(), 0.0);
    }

    #[test]
    fn residual_zero_weights_passes_cotangent_through() {
        let cfg = DenoiserConfig::default();
        let params = DenoiserParams::zeros(&cfg);
        let mut rng = SeededRng::new(3);
        let img = random_image(4, 4, &mut rng);
        let cot = random_image(4, 4, &mut rng);
        let (_, gin) = denoise_vjp(&params, &cfg, &img, &cot).unwrap();
        assert!(gin.sub(&cot).norm() < 1e-15);
    }

    /// Every parameter coordinate checked against central finite differences
    /// of <cot, denoise(img)> at f64, step 1e-5.
    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = DenoiserConfig {
            n_layers: 3,
            features: 4,
            kernel: 3,
            residual: true,
        };
        let mut rng = SeededRng::new(4);
        let mut params = DenoiserParams::random(&cfg, &mut rng);
        // nudge biases so pre-activations sit away from the ReLU kink
        for layer in params.layers.iter_mut() {
            for b in layer.bias.iter_mut() {
                *b = 0.05 + 0.1 * rng.uniform();
            }
        }
        let img = random_image(8, 8, &mut rng);
        let cot = random_image(8, 8, &mut rng);

        let (grads, grad_input) = denoise_vjp(&params, &cfg, &img, &cot).unwrap();
        let objective = |p: &DenoiserParams| -> f64 {
            cot.dot_re(&denoise(p, &cfg, &img).unwrap())
        };

        let h = 1e-5;
        let mut checked = 0usize;
        for l in 0..cfg.n_layers {
            for t in 0..2 {
                let len = if t == 0 {
                    params.layers[l].weight.len()
                } else {
                    params.layers[l].bias.len()
                };
                for i in 0..len {
                    let mut plus = params.clone();
                    let mut minus = params.clone();
                    {
                        let (p, m) = if t == 0 {
                            (&mut plus.layers[l].weight[i], &mut minus.layers[l].weight[i])
                        } else {
                            (&mut plus.layers[l].bias[i], &mut minus.layers[l].bias[i])
                        };
                        *p += h;
                        *m -= h;
                    }
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                    let g = if t == 0 {
                        grads.layers[l].weight[i]
                    } else {
                        grads.layers[l].bias[i]
                    };
                    let denom = g.abs().max(fd.abs()).max(1e-6);
                    assert!(
                        (g - fd).abs() / denom <= 1e-4,
                        "layer {l} tensor {t} coeff {i}: grad {g} vs fd {fd}"
                    );
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, params.n_coeffs());

        // spot-check the input gradient on a few pixels
        for &(r, c) in &[(0usize, 0usize), (3, 5), (7, 7)] {
            for part in 0..2 {
                let mut plus = img.clone();
                let mut minus = img.clone();
                let delta = if part == 0 { z(h, 0.0) } else { z(0.0, h) };
                plus.set(r, c, img.at(r, c) + delta);
                minus.set(r, c, img.at(r, c) - delta);
                let f = |im: &ComplexImage| cot.dot_re(&denoise(&params, &cfg, im).unwrap());
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let g = if part == 0 {
                    grad_input.at(r, c).re
                } else {
                    grad_input.at(r, c).im
                };
                let denom = g.abs().max(fd.abs()).max(1e-6);
                assert!((g - fd).abs() / denom <= 1e-4, "input ({r},{c}) part {part}");
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DenoiserConfig {
            n_layers: 2,
            features: 3,
            kernel: 3,
            residual: true,
        };
        let mut rng = SeededRng::new(5);
        let params = DenoiserParams::random(&cfg, &mut rng);
        save_params(dir.path(), &cfg, &params).unwrap();
        let (cfg2, params2) = load_params(dir.path()).unwrap();
        assert_eq!(cfg, cfg2);
        for (a, b) in params.tensors().zip(params2.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
    }
}
