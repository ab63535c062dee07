//! Centered, orthonormal 2D Fourier transforms.
//!
//! Convention: `fft2c(x) = fftshift(FFT2(ifftshift(x))) / sqrt(q)` with
//! `q = height*width`, and `ifft2c` built the same way from the inverse
//! transform. Both directions carry the `1/sqrt(q)` factor, so the pair is
//! unitary and `ifft2c(fft2c(x)) = x`.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex};

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::image::ComplexImage;

static PLANS: LazyLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    LazyLock::new(|| Mutex::new(HashMap::new()));

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLANS.lock().unwrap();
    cache
        .entry((len, forward))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            planner.plan_fft(
                len,
                if forward {
                    FftDirection::Forward
                } else {
                    FftDirection::Inverse
                },
            )
        })
        .clone()
}

/// Rolls a 1D index: `out[(i + shift) % n] = in[i]`.
fn roll_rows(data: &[Complex64], h: usize, w: usize, out: &mut [Complex64], shift: usize) {
    for r in 0..h {
        let dst = (r + shift) % h;
        out[dst * w..(dst + 1) * w].copy_from_slice(&data[r * w..(r + 1) * w]);
    }
}

fn roll_cols(data: &[Complex64], h: usize, w: usize, out: &mut [Complex64], shift: usize) {
    for r in 0..h {
        let row = &data[r * w..(r + 1) * w];
        let out_row = &mut out[r * w..(r + 1) * w];
        for (c, &v) in row.iter().enumerate() {
            out_row[(c + shift) % w] = v;
        }
    }
}

/// 2D quadrant shift. `fftshift` rolls by `floor(n/2)`, `ifftshift` by
/// `ceil(n/2)`; they coincide for even sizes.
fn shift2(data: &[Complex64], h: usize, w: usize, inverse: bool) -> Vec<Complex64> {
    let (rs, cs) = if inverse {
        (h.div_ceil(2), w.div_ceil(2))
    } else {
        (h / 2, w / 2)
    };
    let mut tmp = vec![Complex64::default(); data.len()];
    roll_rows(data, h, w, &mut tmp, rs);
    let mut out = vec![Complex64::default(); data.len()];
    roll_cols(&tmp, h, w, &mut out, cs);
    out
}

fn transpose(data: &[Complex64], h: usize, w: usize, out: &mut [Complex64]) {
    for r in 0..h {
        for c in 0..w {
            out[c * h + r] = data[r * w + c];
        }
    }
}

/// Unscaled 2D transform of row-major data, in place.
fn fft2_raw(data: &mut Vec<Complex64>, h: usize, w: usize, forward: bool) {
    let row_fft = plan(w, forward);
    let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(w) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    let mut t = vec![Complex64::default(); data.len()];
    transpose(data, h, w, &mut t);
    let col_fft = plan(h, forward);
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex64::default());
    for col in t.chunks_exact_mut(h) {
        col_fft.process_with_scratch(col, &mut scratch);
    }
    transpose(&t, w, h, data);
}

fn fft2c_dir(img: &ComplexImage, forward: bool) -> ComplexImage {
    let (h, w) = (img.height(), img.width());
    let mut data = shift2(img.as_slice(), h, w, true);
    fft2_raw(&mut data, h, w, forward);
    let mut out = shift2(&data, h, w, false);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in &mut out {
        *v *= scale;
    }
    ComplexImage::from_vec_unchecked(h, w, out)
}

/// Centered orthonormal 2D DFT.
pub fn fft2c(img: &ComplexImage) -> ComplexImage {
    fft2c_dir(img, true)
}

/// Exact inverse of [`fft2c`].
pub fn ifft2c(ksp: &ComplexImage) -> ComplexImage {
    fft2c_dir(ksp, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn z(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
        let mut rng = SeededRng::new(seed);
        ComplexImage::from_fn(h, w, |_, _| z(rng.normal(), rng.normal()))
    }

    /// Direct centered-DFT summation, independent of the FFT path. With the
    /// ifftshift-before / fftshift-after convention both the spatial and the
    /// frequency index are centered by floor(n/2).
    fn dft2c_direct(img: &ComplexImage) -> ComplexImage {
        let (h, w) = (img.height(), img.width());
        let scale = 1.0 / ((h * w) as f64).sqrt();
        let freq = |i: usize, n: usize| i as f64 - (n / 2) as f64;
        let pos = freq;
        ComplexImage::from_fn(h, w, |u, v| {
            let mut acc = Complex64::default();
            for r in 0..h {
                for c in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * (freq(u, h) * pos(r, h) / h as f64 + freq(v, w) * pos(c, w) / w as f64);
                    acc += img.at(r, c) * Complex64::new(0.0, phase).exp();
                }
            }
            acc * scale
        })
    }

    #[test]
    fn two_by_two_ones_has_dc_at_center() {
        let img = ComplexImage::new(2, 2, vec![z(1.0, 0.0); 4]).unwrap();
        let ksp = fft2c(&img);
        // DC bin lands at index (1,1) for even dims
        assert!((ksp.at(1, 1) - z(2.0, 0.0)).norm() < 1e-12);
        for (r, c) in [(0, 0), (0, 1), (1, 0)] {
            assert!(ksp.at(r, c).norm() < 1e-12);
        }
        // and agrees with the direct 4-term summation oracle
        let oracle = dft2c_direct(&img);
        for (a, b) in ksp.as_slice().iter().zip(oracle.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn direct_dft_oracle_matches_on_odd_and_even_sizes() {
        for (h, w, seed) in [(4, 4, 1), (5, 7, 2), (3, 8, 3), (1, 6, 4)] {
            let img = random_image(h, w, seed);
            let fast = fft2c(&img);
            let slow = dft2c_direct(&img);
            for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
                assert!((a - b).norm() < 1e-9, "mismatch at {h}x{w}");
            }
        }
    }

    #[test]
    fn single_pixel_is_identity() {
        let img = ComplexImage::new(1, 1, vec![z(0.3, -0.7)]).unwrap();
        let ksp = fft2c(&img);
        assert!((ksp.at(0, 0) - z(0.3, -0.7)).norm() < 1e-15);
    }

    #[test]
    fn unitarity_preserves_norm() {
        let img = random_image(8, 8, 5);
        let ksp = fft2c(&img);
        let rel = (ksp.norm() - img.norm()).abs() / img.norm();
        assert!(rel < 1e-10);
    }

    #[test]
    fn ifft2c_inverts_fft2c() {
        for (h, w) in [(8, 8), (5, 6), (7, 7)] {
            let img = random_image(h, w, 100 + h as u64);
            let back = ifft2c(&fft2c(&img));
            let rel = back.sub(&img).norm() / img.norm();
            assert!(rel < 1e-10);
        }
    }
}
