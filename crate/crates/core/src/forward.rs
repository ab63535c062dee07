//! Multi-coil MRI measurement operator: per coil, sensitivity weighting,
//! centered FFT and k-space masking, together with its adjoint and the
//! Gram (normal) operator used by the data-consistency solver.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fft2c, ifft2c};
use crate::image::{CoilSensitivities, ComplexImage, MultiCoilKSpace, SamplingMask};

/// The measurement operator: coil plane `c` maps an image `x` to
/// `mask .* fft2c(S_c .* x)`.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    mask: SamplingMask,
    smaps: CoilSensitivities,
}

impl ForwardModel {
    pub fn new(mask: SamplingMask, smaps: CoilSensitivities) -> Result<Self> {
        if mask.height() != smaps.height() || mask.width() != smaps.width() {
            return Err(Error::shape(format!(
                "mask is {}x{} but sensitivity maps are {}x{}",
                mask.height(),
                mask.width(),
                smaps.height(),
                smaps.width()
            )));
        }
        Ok(Self { mask, smaps })
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn smaps(&self) -> &CoilSensitivities {
        &self.smaps
    }

    pub fn ncoils(&self) -> usize {
        self.smaps.ncoils()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    fn check_image(&self, img: &ComplexImage) -> Result<()> {
        if img.height() != self.height() || img.width() != self.width() {
            return Err(Error::shape(format!(
                "image is {}x{} but model is {}x{}",
                img.height(),
                img.width(),
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }

    fn check_kspace(&self, ksp: &MultiCoilKSpace) -> Result<()> {
        if ksp.ncoils() != self.ncoils() {
            return Err(Error::shape(format!(
                "k-space has {} coils but model has {}",
                ksp.ncoils(),
                self.ncoils()
            )));
        }
        if ksp.height() != self.height() || ksp.width() != self.width() {
            return Err(Error::shape(format!(
                "k-space is {}x{} but model is {}x{}",
                ksp.height(),
                ksp.width(),
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }

    fn forward_coil(&self, c: usize, img: &ComplexImage) -> ComplexImage {
        let mut ksp = fft2c(&self.smaps.plane(c).hadamard(img));
        self.mask.apply_in_place(&mut ksp);
        ksp
    }

    fn adjoint_coil(&self, c: usize, plane: &ComplexImage) -> ComplexImage {
        let masked = self.mask.apply(plane);
        let img = ifft2c(&masked);
        let smap = self.smaps.plane(c);
        ComplexImage::from_vec_unchecked(
            img.height(),
            img.width(),
            img.as_slice()
                .iter()
                .zip(smap.as_slice())
                .map(|(&v, &s)| s.conj() * v)
                .collect(),
        )
    }

    /// Applies the measurement operator; masked-out entries are exactly zero.
    pub fn forward(&self, img: &ComplexImage) -> Result<MultiCoilKSpace> {
        self.check_image(img)?;
        let planes = (0..self.ncoils())
            .map(|c| self.forward_coil(c, img))
            .collect();
        Ok(MultiCoilKSpace::new(planes).expect("coil planes share dimensions"))
    }

    /// Applies the adjoint: `sum_c conj(S_c) .* ifft2c(mask .* y_c)`.
    pub fn adjoint(&self, ksp: &MultiCoilKSpace) -> Result<ComplexImage> {
        self.check_kspace(ksp)?;
        let mut acc = ComplexImage::zeros(self.height(), self.width());
        for c in 0..self.ncoils() {
            let term = self.adjoint_coil(c, ksp.plane(c));
            for (a, &t) in acc.as_mut_slice().iter_mut().zip(term.as_slice()) {
                *a += t;
            }
        }
        Ok(acc)
    }

    /// The Gram operator `sum_c A_c^H A_c`, equal to `adjoint(forward(x))`
    /// computed coil by coil without materializing the full k-space stack.
    pub fn normal_op(&self, img: &ComplexImage) -> Result<ComplexImage> {
        self.check_image(img)?;
        let mut acc = ComplexImage::zeros(self.height(), self.width());
        for c in 0..self.ncoils() {
            let ksp = self.forward_coil(c, img);
            let term = self.adjoint_coil(c, &ksp);
            for (a, &t) in acc.as_mut_slice().iter_mut().zip(term.as_slice()) {
                *a += t;
            }
        }
        Ok(acc)
    }

    /// Zero-filled reconstruction of measured data (the initial estimate).
    pub fn zero_filled(&self, ksp: &MultiCoilKSpace) -> Result<ComplexImage> {
        self.adjoint(ksp)
    }
}

/// Convenience: uniform sensitivity for a single coil (S identically 1).
pub fn single_coil_uniform(height: usize, width: usize) -> CoilSensitivities {
    let one = ComplexImage::from_fn(height, width, |_, _| Complex64::new(1.0, 0.0));
    CoilSensitivities::new(vec![one]).expect("uniform single coil is normalized")
}
