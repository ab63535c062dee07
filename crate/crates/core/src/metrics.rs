//! Reconstruction quality metrics: PSNR, SSIM and the high-frequency error
//! norm. All three operate on magnitude images; the peak and data range are
//! taken from the ground truth, and every metric is therefore invariant to
//! a global phase rotation of the complex inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ComplexImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub hfen: f64,
}

/// PSNR cap in dB, reported when the reconstruction is exact.
pub const PSNR_CAP_DB: f64 = 100.0;

fn check_dims(recon: &ComplexImage, gt: &ComplexImage) -> Result<()> {
    if !recon.same_dims(gt) {
        return Err(Error::shape(format!(
            "metric inputs differ: {}x{} vs {}x{}",
            recon.height(),
            recon.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over magnitude images, peak taken from
/// the ground truth, capped at 100 dB.
pub fn psnr(recon: &ComplexImage, gt: &ComplexImage) -> Result<f64> {
    check_dims(recon, gt)?;
    let peak = gt.max_abs();
    if peak == 0.0 {
        return Err(Error::invalid("psnr: ground truth is identically zero"));
    }
    let q = gt.len() as f64;
    let mse: f64 = recon
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(r, g)| {
            let d = r.norm() - g.norm();
            d * d
        })
        .sum::<f64>()
        / q;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (peak / mse.sqrt()).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let y = (i / SSIM_WINDOW) as f64 - c;
        let x = (i % SSIM_WINDOW) as f64 - c;
        *v = (-(x * x + y * y) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean local SSIM over magnitude images: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, data range from the ground truth,
/// aggregated over the valid (no padding) region.
pub fn ssim(recon: &ComplexImage, gt: &ComplexImage) -> Result<f64> {
    check_dims(recon, gt)?;
    let (h, w) = (gt.height(), gt.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let gm = gt.magnitude();
    let rm = recon.magnitude();
    let lo = gm.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range <= 0.0 {
        return Err(Error::invalid(
            "ssim: ground truth has a degenerate (constant) data range",
        ));
    }
    let c1 = (SSIM_K1 * range) * (SSIM_K1 * range);
    let c2 = (SSIM_K2 * range) * (SSIM_K2 * range);
    let win = gaussian_window();

    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(h - SSIM_WINDOW) {
        for x0 in 0..=(w - SSIM_WINDOW) {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                let row = (y0 + dy) * w + x0;
                for dx in 0..SSIM_WINDOW {
                    let g = win[dy * SSIM_WINDOW + dx];
                    let a = rm[row + dx];
                    let b = gm[row + dx];
                    mx += g * a;
                    my += g * b;
                    mxx += g * a * a;
                    myy += g * b * b;
                    mxy += g * a * b;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cov = mxy - mx * my;
            let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

const LOG_SIZE: usize = 15;
const LOG_SIGMA: f64 = 1.5;

/// 15x15 Laplacian-of-Gaussian kernel (sigma 1.5), mean-subtracted so its
/// entries sum to zero.
pub fn log_kernel() -> Vec<f64> {
    let c = (LOG_SIZE / 2) as f64;
    let s2 = LOG_SIGMA * LOG_SIGMA;
    let mut k: Vec<f64> = (0..LOG_SIZE * LOG_SIZE)
        .map(|i| {
            let y = (i / LOG_SIZE) as f64 - c;
            let x = (i % LOG_SIZE) as f64 - c;
            let r2 = x * x + y * y;
            (r2 - 2.0 * s2) / (s2 * s2) * (-r2 / (2.0 * s2)).exp()
        })
        .collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    for v in k.iter_mut() {
        *v -= mean;
    }
    k
}

fn log_filter(img: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let half = (LOG_SIZE / 2) as i64;
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for dy in -half..=half {
                let sy = y + dy;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                for dx in -half..=half {
                    let sx = x + dx;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    acc += kernel[((dy + half) * LOG_SIZE as i64 + (dx + half)) as usize]
                        * img[sy as usize * w + sx as usize];
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

/// High-frequency error norm: relative l2 error between LoG-filtered
/// magnitude images, with zero-padded filtering.
pub fn hfen(recon: &ComplexImage, gt: &ComplexImage) -> Result<f64> {
    check_dims(recon, gt)?;
    let (h, w) = (gt.height(), gt.width());
    if h < LOG_SIZE || w < LOG_SIZE {
        return Err(Error::invalid(format!(
            "hfen: image {h}x{w} is smaller than the {LOG_SIZE}x{LOG_SIZE} kernel"
        )));
    }
    let kernel = log_kernel();
    let fg = log_filter(&gt.magnitude(), h, w, &kernel);
    let fr = log_filter(&recon.magnitude(), h, w, &kernel);
    let denom: f64 = fg.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::invalid(
            "hfen: LoG-filtered ground truth is identically zero",
        ));
    }
    let num: f64 = fr
        .iter()
        .zip(&fg)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// All three metrics at once.
pub fn report(recon: &ComplexImage, gt: &ComplexImage) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr(recon, gt)?,
        ssim: ssim(recon, gt)?,
        hfen: hfen(recon, gt)?,
    })
}

/// CSV with one `image_id,psnr,ssim,hfen` row per entry plus a mean row.
pub fn reports_to_csv(entries: &[(String, MetricReport)]) -> String {
    let mut out = String::from("image_id,psnr,ssim,hfen\n");
    let n = entries.len().max(1) as f64;
    let (mut sp, mut ss, mut sh) = (0.0, 0.0, 0.0);
    for (id, r) in entries {
        out.push_str(&format!(
            "{id},{:.6},{:.6},{:.6}\n",
            r.psnr_db, r.ssim, r.hfen
        ));
        sp += r.psnr_db;
        ss += r.ssim;
        sh += r.hfen;
    }
    out.push_str(&format!(
        "mean,{:.6},{:.6},{:.6}\n",
        sp / n,
        ss / n,
        sh / n
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use num_complex::Complex64;

    fn z(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// A little blob phantom with structure for SSIM/HFEN to chew on.
    fn phantom(h: usize, w: usize) -> ComplexImage {
        ComplexImage::from_fn(h, w, |r, c| {
            let y = r as f64 / h as f64 - 0.5;
            let x = c as f64 / w as f64 - 0.5;
            let inside = (x * x / 0.09 + y * y / 0.16) <= 1.0;
            let ring = (x * x + y * y).sqrt();
            let v = if inside { 1.0 } else { 0.0 } + if ring < 0.15 { 0.5 } else { 0.0 };
            z(v, 0.0)
        })
    }

    #[test]
    fn identical_images_hit_the_caps() {
        let img = phantom(64, 64);
        assert_eq!(psnr(&img, &img).unwrap(), 100.0);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(hfen(&img, &img).unwrap(), 0.0);
    }

    #[test]
    fn psnr_hand_value() {
        // gt = [1, 1], recon = [1, 0]: rmse = 1/sqrt(2), peak = 1
        let gt = ComplexImage::new(1, 2, vec![z(1.0, 0.0), z(1.0, 0.0)]).unwrap();
        let recon = ComplexImage::new(1, 2, vec![z(1.0, 0.0), z(0.0, 0.0)]).unwrap();
        let want = 20.0 * 2.0f64.sqrt().log10();
        assert!((psnr(&recon, &gt).unwrap() - want).abs() < 1e-12);
        assert!((want - 3.0103).abs() < 1e-4);
    }

    #[test]
    fn psnr_rejects_zero_ground_truth() {
        let zero = ComplexImage::zeros(2, 2);
        let one = ComplexImage::new(2, 2, vec![z(1.0, 0.0); 4]).unwrap();
        assert!(psnr(&one, &zero).is_err());
    }

    #[test]
    fn metrics_ignore_global_phase() {
        let gt = phantom(64, 64);
        let mut rng = SeededRng::new(1);
        let recon = ComplexImage::from_fn(64, 64, |r, c| {
            gt.at(r, c) + z(0.05 * rng.normal(), 0.05 * rng.normal())
        });
        let rotated = recon.scale(Complex64::from_polar(1.0, 1.234));

        let a = report(&recon, &gt).unwrap();
        let b = report(&rotated, &gt).unwrap();
        assert!((a.psnr_db - b.psnr_db).abs() < 1e-10);
        assert!((a.ssim - b.ssim).abs() < 1e-10);
        assert!((a.hfen - b.hfen).abs() < 1e-10);
    }

    #[test]
    fn psnr_strictly_decreases_with_noise() {
        let gt = phantom(64, 64);
        let mut last = f64::INFINITY;
        for (i, sigma) in [0.01, 0.05, 0.2].iter().enumerate() {
            let mut rng = SeededRng::new(10 + i as u64);
            let noisy = ComplexImage::from_fn(64, 64, |r, c| {
                gt.at(r, c) + z(sigma * rng.normal(), sigma * rng.normal())
            });
            let p = psnr(&noisy, &gt).unwrap();
            assert!(p < last, "psnr did not decrease: {p} vs {last}");
            last = p;
        }
    }

    #[test]
    fn ssim_collapses_under_heavy_noise() {
        let gt = phantom(64, 64);
        let mut rng = SeededRng::new(2);
        // uniform noise far above the signal level
        let noisy = ComplexImage::from_fn(64, 64, |r, c| {
            gt.at(r, c) + z(6.0 * (rng.uniform() - 0.5), 6.0 * (rng.uniform() - 0.5))
        });
        let s = ssim(&noisy, &gt).unwrap();
        assert!(s < 0.3, "ssim {s} not degraded");
    }

    #[test]
    fn ssim_symmetric_when_ranges_match() {
        // both images share identical extrema, so the gt-derived range is
        // the same either way round
        let a = phantom(64, 64);
        let mut rng = SeededRng::new(3);
        let mut b = a.clone();
        for r in 8..24 {
            for c in 8..24 {
                let v = (0.3 + 0.4 * rng.uniform()).min(1.4);
                b.set(r, c, z(v, 0.0));
            }
        }
        // force shared extrema
        b.set(0, 0, z(0.0, 0.0));
        b.set(0, 1, z(1.5, 0.0));
        let mut a = a;
        a.set(0, 0, z(0.0, 0.0));
        a.set(0, 1, z(1.5, 0.0));
        let s1 = ssim(&a, &b).unwrap();
        let s2 = ssim(&b, &a).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_degenerate_range_and_small_images() {
        let flat = ComplexImage::new(16, 16, vec![z(1.0, 0.0); 256]).unwrap();
        assert!(ssim(&flat, &flat).is_err());
        let small = phantom(8, 8);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn log_kernel_sums_to_zero() {
        let k = log_kernel();
        assert!(k.iter().sum::<f64>().abs() <= 1e-12);
        assert_eq!(k.len(), 225);
    }

    #[test]
    fn hfen_of_zero_recon_is_one() {
        let gt = phantom(64, 64);
        let zero = ComplexImage::zeros(64, 64);
        assert!((hfen(&zero, &gt).unwrap() - 1.0).abs() < 1e-12);
    }

    /// The kernel sums to zero, so a (tiny) uniform offset only leaks in at
    /// the zero-padded borders where partial kernel sums are nonzero.
    #[test]
    fn hfen_suppresses_a_uniform_offset() {
        let gt = phantom(64, 64);
        let offset = 1e-8;
        let shifted = gt.map(|v| v + z(offset, 0.0));
        let h = hfen(&shifted, &gt).unwrap();
        assert!(h < 1e-6, "hfen {h} should vanish for a DC-only offset");

        // interior pixels see the full kernel, whose sum is zero: the
        // filtered difference there must vanish to rounding
        let kernel = log_kernel();
        let a = log_filter(&gt.magnitude(), 64, 64, &kernel);
        let b = log_filter(&shifted.magnitude(), 64, 64, &kernel);
        for y in 7..57 {
            for x in 7..57 {
                assert!((a[y * 64 + x] - b[y * 64 + x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_has_mean_row() {
        let entries = vec![
            (
                "a".to_string(),
                MetricReport {
                    psnr_db: 30.0,
                    ssim: 0.9,
                    hfen: 0.5,
                },
            ),
            (
                "b".to_string(),
                MetricReport {
                    psnr_db: 34.0,
                    ssim: 0.7,
                    hfen: 0.3,
                },
            ),
        ];
        let csv = reports_to_csv(&entries);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("mean,32.0"));
    }
}
