//! Core array types: complex image planes, coil stacks, sampling masks and
//! coil sensitivity maps.
//!
//! All pixel data is stored row-major in `f64` precision. Values are
//! immutable after construction except through explicit copy-and-modify
//! helpers, so instances can be shared freely across worker threads.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A 2D complex-valued plane (image or k-space), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    /// Builds an image from row-major data, validating length and finiteness.
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "data length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if !data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::invalid("image contains non-finite entries"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Internal constructor for values produced by already-validated math.
    pub(crate) fn from_vec_unchecked(height: usize, width: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_vec_unchecked(height, width, vec![Complex64::default(); height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::from_vec_unchecked(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn same_dims(&self, other: &ComplexImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexImage {
        let data = self.data.iter().map(|&z| f(z)).collect();
        Self::from_vec_unchecked(self.height, self.width, data)
    }

    /// Pointwise product with another plane of identical dimensions.
    pub fn hadamard(&self, other: &ComplexImage) -> ComplexImage {
        assert!(self.same_dims(other), "hadamard: dimension mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Self::from_vec_unchecked(self.height, self.width, data)
    }

    pub fn add(&self, other: &ComplexImage) -> ComplexImage {
        assert!(self.same_dims(other), "add: dimension mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Self::from_vec_unchecked(self.height, self.width, data)
    }

    pub fn sub(&self, other: &ComplexImage) -> ComplexImage {
        assert!(self.same_dims(other), "sub: dimension mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Self::from_vec_unchecked(self.height, self.width, data)
    }

    pub fn scale(&self, s: Complex64) -> ComplexImage {
        self.map(|z| z * s)
    }

    /// Complex inner product `self^H other` (conjugate-linear in `self`).
    pub fn dot(&self, other: &ComplexImage) -> Complex64 {
        assert!(self.same_dims(other), "dot: dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.conj() * b)
            .sum()
    }

    /// Real inner product over the 2-channel (re/im) view.
    pub fn dot_re(&self, other: &ComplexImage) -> f64 {
        assert!(self.same_dims(other), "dot_re: dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Magnitude image as a flat row-major vector.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Per-coil stack of k-space planes (or any coil-indexed complex planes).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKSpace {
    planes: Vec<ComplexImage>,
}

impl MultiCoilKSpace {
    pub fn new(planes: Vec<ComplexImage>) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::invalid("coil stack must contain at least one plane"));
        }
        let (h, w) = (planes[0].height(), planes[0].width());
        if !planes.iter().all(|p| p.height() == h && p.width() == w) {
            return Err(Error::shape("coil planes differ in dimensions"));
        }
        Ok(Self { planes })
    }

    pub fn from_single(plane: ComplexImage) -> Self {
        Self {
            planes: vec![plane],
        }
    }

    pub fn ncoils(&self) -> usize {
        self.planes.len()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn plane(&self, c: usize) -> &ComplexImage {
        &self.planes[c]
    }

    pub fn planes(&self) -> &[ComplexImage] {
        &self.planes
    }

    /// Consumes a single-coil stack into its one plane.
    pub fn into_single_plane(mut self) -> Result<ComplexImage> {
        if self.planes.len() != 1 {
            return Err(Error::shape(format!(
                "expected a single plane, found {} coils",
                self.planes.len()
            )));
        }
        Ok(self.planes.pop().unwrap())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.planes.iter().map(|p| p.norm_sqr()).sum()
    }

    pub fn dot_re(&self, other: &MultiCoilKSpace) -> f64 {
        assert_eq!(self.ncoils(), other.ncoils(), "dot_re: coil count mismatch");
        self.planes
            .iter()
            .zip(&other.planes)
            .map(|(a, b)| a.dot_re(b))
            .sum()
    }
}

/// Binary k-space sampling pattern: a 1D phase-encode pattern over columns,
/// replicated down all rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    grid: Vec<u8>,
    accel: u32,
    center_lines: usize,
}

impl SamplingMask {
    /// Builds a mask from a per-column pattern of 0/1 flags.
    pub fn from_columns(
        height: usize,
        columns: &[u8],
        accel: u32,
        center_lines: usize,
    ) -> Result<Self> {
        if height == 0 || columns.is_empty() {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if columns.iter().any(|&b| b > 1) {
            return Err(Error::invalid("mask columns must be 0 or 1"));
        }
        let sampled = columns.iter().filter(|&&b| b == 1).count();
        if sampled < center_lines {
            return Err(Error::invalid(format!(
                "mask has {sampled} sampled columns, fewer than center_lines={center_lines}"
            )));
        }
        let width = columns.len();
        let mut grid = Vec::with_capacity(height * width);
        for _ in 0..height {
            grid.extend_from_slice(columns);
        }
        Ok(Self {
            height,
            width,
            grid,
            accel,
            center_lines,
        })
    }

    /// Reconstructs a mask from a full grid, validating the column-constant
    /// invariant.
    pub fn from_grid(
        height: usize,
        width: usize,
        grid: Vec<u8>,
        accel: u32,
        center_lines: usize,
    ) -> Result<Self> {
        if grid.len() != height * width {
            return Err(Error::shape(format!(
                "mask grid length {} does not match {}x{}",
                grid.len(),
                height,
                width
            )));
        }
        if grid.iter().any(|&b| b > 1) {
            return Err(Error::invalid("mask grid must contain only 0/1 bytes"));
        }
        for col in 0..width {
            let first = grid[col];
            for row in 1..height {
                if grid[row * width + col] != first {
                    return Err(Error::invalid(format!(
                        "mask column {col} is not constant across rows"
                    )));
                }
            }
        }
        let columns: Vec<u8> = grid[..width].to_vec();
        Self::from_columns(height, &columns, accel, center_lines)
    }

    pub fn all_ones(height: usize, width: usize) -> Self {
        Self::from_columns(height, &vec![1u8; width], 1, 0).unwrap()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn accel(&self) -> u32 {
        self.accel
    }

    pub fn center_lines(&self) -> usize {
        self.center_lines
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    /// The per-column 0/1 pattern.
    pub fn columns(&self) -> &[u8] {
        &self.grid[..self.width]
    }

    pub fn column_sampled(&self, col: usize) -> bool {
        self.grid[col] == 1
    }

    pub fn sampled_columns(&self) -> usize {
        self.columns().iter().filter(|&&b| b == 1).count()
    }

    /// Zeroes out the unsampled entries of a k-space plane.
    pub fn apply(&self, ksp: &ComplexImage) -> ComplexImage {
        assert!(
            ksp.height() == self.height && ksp.width() == self.width,
            "mask apply: dimension mismatch"
        );
        let mut out = ksp.clone();
        self.apply_in_place(&mut out);
        out
    }

    pub(crate) fn apply_in_place(&self, ksp: &mut ComplexImage) {
        let w = self.width;
        let cols = &self.grid[..w];
        for row in ksp.as_mut_slice().chunks_exact_mut(w) {
            for (v, &m) in row.iter_mut().zip(cols) {
                if m == 0 {
                    *v = Complex64::default();
                }
            }
        }
    }
}

/// Per-coil complex sensitivity maps, normalized so the pixelwise sum of
/// squared magnitudes is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivities {
    planes: Vec<ComplexImage>,
}

/// Tolerance on the pixelwise sum-of-squares normalization.
pub const SMAP_NORM_TOL: f64 = 1e-6;

impl CoilSensitivities {
    /// Wraps pre-normalized maps, validating the sum-of-squares invariant.
    pub fn new(planes: Vec<ComplexImage>) -> Result<Self> {
        let stack = MultiCoilKSpace::new(planes)?;
        let planes = stack.planes;
        let npix = planes[0].len();
        for p in 0..npix {
            let s: f64 = planes.iter().map(|pl| pl.as_slice()[p].norm_sqr()).sum();
            if (s - 1.0).abs() > SMAP_NORM_TOL {
                return Err(Error::invalid(format!(
                    "sensitivity maps are not normalized at pixel {p}: sum |S|^2 = {s}"
                )));
            }
        }
        Ok(Self { planes })
    }

    /// Normalizes arbitrary maps pixelwise so that `sum_c |S_c|^2 = 1`.
    pub fn normalized(planes: Vec<ComplexImage>) -> Result<Self> {
        let stack = MultiCoilKSpace::new(planes)?;
        let mut planes = stack.planes;
        let npix = planes[0].len();
        for p in 0..npix {
            let s: f64 = planes.iter().map(|pl| pl.as_slice()[p].norm_sqr()).sum();
            if s <= 0.0 {
                return Err(Error::invalid(format!(
                    "sensitivity maps vanish at pixel {p}; cannot normalize"
                )));
            }
            let inv = 1.0 / s.sqrt();
            for pl in planes.iter_mut() {
                pl.as_mut_slice()[p] *= inv;
            }
        }
        Ok(Self { planes })
    }

    pub fn ncoils(&self) -> usize {
        self.planes.len()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn plane(&self, c: usize) -> &ComplexImage {
        &self.planes[c]
    }

    pub fn planes(&self) -> &[ComplexImage] {
        &self.planes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn image_rejects_wrong_length() {
        assert!(ComplexImage::new(2, 2, vec![z(1.0, 0.0); 3]).is_err());
    }

    #[test]
    fn image_rejects_non_finite() {
        assert!(ComplexImage::new(1, 2, vec![z(1.0, 0.0), z(f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn dot_products_agree() {
        let a = ComplexImage::new(1, 2, vec![z(1.0, 2.0), z(-3.0, 0.5)]).unwrap();
        let b = ComplexImage::new(1, 2, vec![z(0.5, -1.0), z(2.0, 2.0)]).unwrap();
        let c = a.dot(&b);
        assert!((c.re - a.dot_re(&b)).abs() < 1e-14);
    }

    #[test]
    fn mask_column_constant_enforced() {
        // grid with a non-constant column must be rejected
        let grid = vec![1, 0, 0, 0];
        assert!(SamplingMask::from_grid(2, 2, grid, 2, 0).is_err());
        let ok = SamplingMask::from_grid(2, 2, vec![1, 0, 1, 0], 2, 0).unwrap();
        assert_eq!(ok.sampled_columns(), 1);
    }

    #[test]
    fn mask_center_line_budget_enforced() {
        assert!(SamplingMask::from_columns(2, &[1, 0, 0, 0], 4, 2).is_err());
    }

    #[test]
    fn mask_apply_zeroes_unsampled() {
        let m = SamplingMask::from_columns(2, &[1, 0], 2, 0).unwrap();
        let img = ComplexImage::new(2, 2, vec![z(1.0, 1.0); 4]).unwrap();
        let out = m.apply(&img);
        assert_eq!(out.at(0, 0), z(1.0, 1.0));
        assert_eq!(out.at(0, 1), z(0.0, 0.0));
        assert_eq!(out.at(1, 1), z(0.0, 0.0));
    }

    #[test]
    fn smaps_normalization_invariant() {
        let p1 = ComplexImage::new(2, 2, vec![z(3.0, 0.0); 4]).unwrap();
        let p2 = ComplexImage::new(2, 2, vec![z(0.0, 4.0); 4]).unwrap();
        let maps = CoilSensitivities::normalized(vec![p1, p2]).unwrap();
        for p in 0..4 {
            let s: f64 = (0..2).map(|c| maps.plane(c).as_slice()[p].norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // constructor validates the invariant for pre-normalized maps
        assert!(CoilSensitivities::new(maps.planes.clone()).is_ok());
        let bad = ComplexImage::new(2, 2, vec![z(0.9, 0.0); 4]).unwrap();
        assert!(CoilSensitivities::new(vec![bad]).is_err());
    }
}
