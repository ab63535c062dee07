//! On-disk formats.
//!
//! Complex planes are stored as a `<stem>.hdr` / `<stem>.cpx` pair:
//!
//! ```text
//! <stem>.hdr   ASCII: "CPX1\n<ncoils> <height> <width>\n"
//! <stem>.cpx   raw little-endian f32, interleaved re/im, row-major, coil-major
//! ```
//!
//! Sampling masks are a single `<stem>.msk` file: the ASCII header
//! `"MSK1\n<height> <width> <accel> <center_lines>\n"` followed by
//! `height*width` raw 0/1 bytes, row-major.
//!
//! Pixel data is f64 in memory and f32 on disk, so a write/read round trip
//! is exact only up to f32 quantization. All files are written atomically
//! (temp file + rename).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::{ComplexImage, MultiCoilKSpace, SamplingMask};

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = {
        let mut s = path.as_os_str().to_owned();
        s.push(".tmp");
        PathBuf::from(s)
    };
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_planes(stem: &Path, planes: &[ComplexImage]) -> Result<()> {
    let (h, w) = (planes[0].height(), planes[0].width());
    let header = format!("CPX1\n{} {} {}\n", planes.len(), h, w);
    write_atomic(&with_ext(stem, "hdr"), header.as_bytes())?;

    let mut bytes = Vec::with_capacity(planes.len() * h * w * 8);
    for plane in planes {
        for z in plane.as_slice() {
            bytes.extend_from_slice(&(z.re as f32).to_le_bytes());
            bytes.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
    }
    write_atomic(&with_ext(stem, "cpx"), &bytes)
}

/// Writes a coil stack as a `.hdr`/`.cpx` pair.
pub fn write_complex(stem: &Path, ksp: &MultiCoilKSpace) -> Result<()> {
    write_planes(stem, ksp.planes())
}

/// Writes a single plane as a `.hdr`/`.cpx` pair with `ncoils = 1`.
pub fn write_complex_image(stem: &Path, img: &ComplexImage) -> Result<()> {
    write_planes(stem, std::slice::from_ref(img))
}

/// Reads a `.hdr`/`.cpx` pair.
pub fn read_complex(stem: &Path) -> Result<MultiCoilKSpace> {
    let hdr_path = with_ext(stem, "hdr");
    let hdr = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let mut lines = hdr.lines();
    match lines.next() {
        Some("CPX1") => {}
        other => {
            return Err(Error::format(
                &hdr_path,
                format!("expected magic 'CPX1', found {other:?}"),
            ))
        }
    }
    let dims_line = lines
        .next()
        .ok_or_else(|| Error::format(&hdr_path, "missing dimension line"))?;
    let dims: Vec<usize> = dims_line
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::format(&hdr_path, format!("bad dimension token '{t}'")))
        })
        .collect::<Result<_>>()?;
    let [ncoils, h, w] = dims[..] else {
        return Err(Error::format(
            &hdr_path,
            format!("expected 3 dimensions, found {}", dims.len()),
        ));
    };
    if ncoils == 0 || h == 0 || w == 0 {
        return Err(Error::format(&hdr_path, "dimensions must be positive"));
    }

    let cpx_path = with_ext(stem, "cpx");
    let mut file = fs::File::open(&cpx_path).map_err(|e| Error::io(&cpx_path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(&cpx_path, e))?;
    let expected = ncoils * h * w * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            &cpx_path,
            format!(
                "size mismatch: header declares {ncoils}x{h}x{w} ({expected} bytes), file has {}",
                bytes.len()
            ),
        ));
    }

    let mut planes = Vec::with_capacity(ncoils);
    let plane_bytes = h * w * 8;
    for c in 0..ncoils {
        let chunk = &bytes[c * plane_bytes..(c + 1) * plane_bytes];
        let data: Vec<Complex64> = chunk
            .chunks_exact(8)
            .map(|b| {
                let re = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
                let im = f32::from_le_bytes([b[4], b[5], b[6], b[7]]) as f64;
                Complex64::new(re, im)
            })
            .collect();
        planes.push(ComplexImage::new(h, w, data)?);
    }
    MultiCoilKSpace::new(planes)
}

/// Reads a `.hdr`/`.cpx` pair that must hold exactly one plane.
pub fn read_complex_image(stem: &Path) -> Result<ComplexImage> {
    read_complex(stem)?.into_single_plane()
}

/// Writes a sampling mask as a `.msk` file.
pub fn write_mask(stem: &Path, mask: &SamplingMask) -> Result<()> {
    let mut bytes = format!(
        "MSK1\n{} {} {} {}\n",
        mask.height(),
        mask.width(),
        mask.accel(),
        mask.center_lines()
    )
    .into_bytes();
    bytes.extend_from_slice(mask.grid());
    write_atomic(&with_ext(stem, "msk"), &bytes)
}

/// Reads a `.msk` file.
pub fn read_mask(stem: &Path) -> Result<SamplingMask> {
    let path = with_ext(stem, "msk");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;

    // header ends at the second newline
    let mut newlines = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n');
    let first = newlines
        .next()
        .ok_or_else(|| Error::format(&path, "missing header"))?
        .0;
    let second = newlines
        .next()
        .ok_or_else(|| Error::format(&path, "missing dimension line"))?
        .0;
    let magic = std::str::from_utf8(&bytes[..first])
        .map_err(|_| Error::format(&path, "non-ascii header"))?;
    if magic != "MSK1" {
        return Err(Error::format(
            &path,
            format!("expected magic 'MSK1', found '{magic}'"),
        ));
    }
    let dims_line = std::str::from_utf8(&bytes[first + 1..second])
        .map_err(|_| Error::format(&path, "non-ascii dimension line"))?;
    let fields: Vec<u64> = dims_line
        .split_whitespace()
        .map(|t| {
            t.parse::<u64>()
                .map_err(|_| Error::format(&path, format!("bad header token '{t}'")))
        })
        .collect::<Result<_>>()?;
    let [h, w, accel, center] = fields[..] else {
        return Err(Error::format(
            &path,
            format!("expected 4 header fields, found {}", fields.len()),
        ));
    };
    let (h, w, center) = (h as usize, w as usize, center as usize);

    let grid = &bytes[second + 1..];
    if grid.len() != h * w {
        return Err(Error::format(
            &path,
            format!("grid has {} bytes, expected {}", grid.len(), h * w),
        ));
    }
    if let Some(&bad) = grid.iter().find(|&&b| b > 1) {
        return Err(Error::format(
            &path,
            format!("grid contains byte {bad}, expected 0 or 1"),
        ));
    }
    SamplingMask::from_grid(h, w, grid.to_vec(), accel as u32, center)
}
