//! Synthetic data generation: variable-density Cartesian sampling masks,
//! simulated coil sensitivity maps, and a clustered ellipse-phantom dataset.
//! The cluster structure is the point: local training needs a training set
//! in which some images really are close to the scan being reconstructed.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{CoilSensitivities, ComplexImage, SamplingMask};
use crate::io;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSpec {
    pub accel: u32,
    pub center_lines: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        let width = 64;
        let accel = 4;
        Self {
            accel,
            center_lines: default_center_lines(width, accel),
            width,
            seed: 0,
        }
    }
}

/// Fully-sampled center size for a given width, scaled proportionally from
/// the reference widths (31 lines at 4x and 15 at 8x for width 256).
pub fn default_center_lines(width: usize, accel: u32) -> usize {
    let frac = match accel {
        1 => return 0,
        4 => 31.0 / 256.0,
        8 => 15.0 / 256.0,
        a => 0.5 / a as f64,
    };
    ((width as f64 * frac).round() as usize).max(1)
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.accel == 0 || self.width == 0 {
            return Err(Error::invalid("mask spec needs positive accel and width"));
        }
        if self.accel > 1 && self.center_lines as f64 >= self.width as f64 / self.accel as f64 {
            return Err(Error::invalid(format!(
                "center_lines = {} must be below width/accel = {}",
                self.center_lines,
                self.width / self.accel as usize
            )));
        }
        Ok(())
    }

    pub fn total_sampled(&self) -> usize {
        (self.width as f64 / self.accel as f64).round() as usize
    }
}

/// Draws a 1D variable-density mask: the center block is always sampled,
/// the remaining budget is drawn uniformly at random without replacement,
/// and the column pattern is replicated down all rows.
pub fn gen_mask(spec: &MaskSpec, height: usize, rng: &mut SeededRng) -> Result<SamplingMask> {
    spec.validate()?;
    let w = spec.width;
    let total = spec.total_sampled();
    if total < spec.center_lines {
        return Err(Error::invalid("sampling budget below center size"));
    }
    let mut cols = vec![0u8; w];
    let start = w / 2 - spec.center_lines / 2;
    for c in start..start + spec.center_lines {
        cols[c] = 1;
    }
    let pool: Vec<usize> = (0..w).filter(|&c| cols[c] == 0).collect();
    let extra = total - spec.center_lines;
    for c in rng.choose_without_replacement(&pool, extra) {
        cols[c] = 1;
    }
    SamplingMask::from_columns(height, &cols, spec.accel, spec.center_lines)
}

/// Simulated coil maps: per coil a Gaussian magnitude profile centered at
/// equally spaced border positions with a smooth linear phase ramp,
/// normalized pixelwise so the sum of squared magnitudes is 1.
pub fn gen_smaps(n_coils: usize, height: usize, width: usize) -> Result<CoilSensitivities> {
    if n_coils == 0 {
        return Err(Error::invalid("need at least one coil"));
    }
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let radius = 0.5 * height.max(width) as f64;
    let sigma = 0.45 * height.max(width) as f64;
    let ramp = 0.4 * std::f64::consts::PI / height.max(width) as f64;

    let planes: Vec<ComplexImage> = (0..n_coils)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64;
            let (py, px) = (cy + radius * angle.sin(), cx + radius * angle.cos());
            ComplexImage::from_fn(height, width, |r, cc| {
                let dy = r as f64 - py;
                let dx = cc as f64 - px;
                let mag = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let phase = ramp * (angle.cos() * (cc as f64 - cx) + angle.sin() * (r as f64 - cy));
                Complex64::from_polar(mag, phase)
            })
        })
        .collect();
    CoilSensitivities::normalized(planes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    /// Image height = width.
    pub size: usize,
    pub n_clusters: usize,
    pub per_cluster: usize,
    pub n_coils: usize,
    /// Relative perturbation scale applied to every prototype parameter.
    pub jitter: f64,
    /// Held-out test images, drawn round-robin from the clusters.
    pub n_test: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            n_clusters: 8,
            per_cluster: 25,
            n_coils: 4,
            jitter: 0.05,
            n_test: 10,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.n_clusters == 0 || self.n_coils == 0 {
            return Err(Error::invalid("phantom spec has zero dimensions"));
        }
        if self.per_cluster < 2 {
            return Err(Error::invalid("per_cluster must be at least 2"));
        }
        if self.jitter.is_nan() || self.jitter < 0.0 {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        self.n_clusters * self.per_cluster
    }
}

#[derive(Debug, Clone)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    angle: f64,
    amp_mag: f64,
    amp_phase: f64,
}

#[derive(Debug, Clone)]
struct ClusterProto {
    ellipses: Vec<Ellipse>,
    /// Smooth phase map coefficients: x, y, xy, x^2 - y^2.
    phase: [f64; 4],
}

/// Anatomy shared by every cluster: an outer body ellipse with a rim.
/// All clusters carrying the same dominant structure is what makes the
/// initial aliased-image neighbor search genuinely confusable while
/// ground-truth images stay separable by their interior content.
fn background_ellipses(rng: &mut SeededRng) -> Vec<Ellipse> {
    let tilt = rng.uniform_in(-0.2, 0.2);
    vec![
        Ellipse {
            cy: 0.0,
            cx: 0.0,
            a: 0.88,
            b: 0.78,
            angle: tilt,
            amp_mag: 0.55,
            amp_phase: rng.uniform_in(-0.4, 0.4),
        },
        Ellipse {
            cy: 0.0,
            cx: 0.0,
            a: 0.74,
            b: 0.64,
            angle: tilt,
            amp_mag: -0.25,
            amp_phase: 0.0,
        },
    ]
}

fn cluster_proto(background: &[Ellipse], rng: &mut SeededRng) -> ClusterProto {
    let n_ell = 5 + rng.index(6); // 5..=10 interior structures per cluster
    let mut ellipses = background.to_vec();
    ellipses.extend((0..n_ell).map(|_| Ellipse {
        cy: rng.uniform_in(-0.40, 0.40),
        cx: rng.uniform_in(-0.40, 0.40),
        a: rng.uniform_in(0.08, 0.30),
        b: rng.uniform_in(0.08, 0.30),
        angle: rng.uniform_in(0.0, std::f64::consts::PI),
        amp_mag: rng.uniform_in(0.25, 0.6),
        amp_phase: rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI),
    }));
    let phase = [
        rng.uniform_in(-0.4, 0.4),
        rng.uniform_in(-0.4, 0.4),
        rng.uniform_in(-0.3, 0.3),
        rng.uniform_in(-0.3, 0.3),
    ];
    ClusterProto { ellipses, phase }
}

fn jittered(proto: &ClusterProto, jitter: f64, rng: &mut SeededRng) -> ClusterProto {
    let mut u = |scale: f64| scale * jitter * rng.uniform_in(-1.0, 1.0);
    let ellipses = proto
        .ellipses
        .iter()
        .map(|e| Ellipse {
            cy: e.cy + u(0.2),
            cx: e.cx + u(0.2),
            a: e.a * (1.0 + u(0.5)),
            b: e.b * (1.0 + u(0.5)),
            angle: e.angle + u(0.4 * std::f64::consts::PI),
            amp_mag: e.amp_mag * (1.0 + u(0.5)),
            amp_phase: e.amp_phase + u(0.4 * std::f64::consts::PI),
        })
        .collect();
    let phase = [
        proto.phase[0] * (1.0 + u(0.5)),
        proto.phase[1] * (1.0 + u(0.5)),
        proto.phase[2] * (1.0 + u(0.5)),
        proto.phase[3] * (1.0 + u(0.5)),
    ];
    ClusterProto { ellipses, phase }
}

fn render(proto: &ClusterProto, size: usize) -> ComplexImage {
    let n = size as f64;
    let mut img = ComplexImage::from_fn(size, size, |r, c| {
        let y = (2.0 * r as f64 - (n - 1.0)) / n;
        let x = (2.0 * c as f64 - (n - 1.0)) / n;
        let mut acc = Complex64::default();
        for e in &proto.ellipses {
            let dy = y - e.cy;
            let dx = x - e.cx;
            let u = dx * e.angle.cos() + dy * e.angle.sin();
            let v = -dx * e.angle.sin() + dy * e.angle.cos();
            if (u / e.a).powi(2) + (v / e.b).powi(2) <= 1.0 {
                acc += Complex64::from_polar(e.amp_mag, e.amp_phase);
            }
        }
        let phase = std::f64::consts::PI
            * (proto.phase[0] * x
                + proto.phase[1] * y
                + proto.phase[2] * x * y
                + proto.phase[3] * (x * x - y * y));
        acc * Complex64::from_polar(1.0, phase)
    });
    let peak = img.max_abs();
    if peak > 0.0 {
        let inv = 1.0 / peak;
        for v in img.as_mut_slice() {
            *v *= inv;
        }
    }
    img
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub gt: ComplexImage,
    pub cluster: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: PhantomSpec,
    pub smaps: CoilSensitivities,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Generates the clustered dataset. Every sample draws from its own rng
/// sub-stream keyed by sample index, so the result does not depend on
/// generation order or worker count.
pub fn gen_dataset(spec: &PhantomSpec, rng: &SeededRng) -> Result<Dataset> {
    spec.validate()?;
    let background = background_ellipses(&mut rng.stream(999));
    let protos: Vec<ClusterProto> = (0..spec.n_clusters)
        .map(|k| cluster_proto(&background, &mut rng.stream(k as u64)))
        .collect();

    let train = (0..spec.n_train())
        .map(|s| {
            let cluster = s / spec.per_cluster;
            let mut member_rng = rng.stream(1_000 + s as u64);
            let proto = jittered(&protos[cluster], spec.jitter, &mut member_rng);
            Sample {
                gt: render(&proto, spec.size),
                cluster,
            }
        })
        .collect();

    let test = (0..spec.n_test)
        .map(|t| {
            let cluster = t % spec.n_clusters;
            let mut member_rng = rng.stream(500_000 + t as u64);
            let proto = jittered(&protos[cluster], spec.jitter, &mut member_rng);
            Sample {
                gt: render(&proto, spec.size),
                cluster,
            }
        })
        .collect();

    Ok(Dataset {
        spec: spec.clone(),
        smaps: gen_smaps(spec.n_coils, spec.size, spec.size)?,
        train,
        test,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleMeta {
    index: usize,
    cluster: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    spec: PhantomSpec,
    samples: Vec<SampleMeta>,
    test: Vec<SampleMeta>,
}

impl Dataset {
    /// Layout: `meta.json`, `sample_%05d/{gt,smaps}` and
    /// `test_%05d/{gt,smaps}` pairs in `.hdr`/`.cpx` format.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = DatasetMeta {
            spec: self.spec.clone(),
            samples: self
                .train
                .iter()
                .enumerate()
                .map(|(index, s)| SampleMeta {
                    index,
                    cluster: s.cluster,
                })
                .collect(),
            test: self
                .test
                .iter()
                .enumerate()
                .map(|(index, s)| SampleMeta {
                    index,
                    cluster: s.cluster,
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        io::write_atomic(&dir.join("meta.json"), json.as_bytes())?;

        let smaps_stack =
            crate::image::MultiCoilKSpace::new(self.smaps.planes().to_vec()).expect("valid stack");
        let write_sample = |prefix: &str, index: usize, s: &Sample| -> Result<()> {
            let sub = dir.join(format!("{prefix}_{index:05}"));
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            io::write_complex_image(&sub.join("gt"), &s.gt)?;
            io::write_complex(&sub.join("smaps"), &smaps_stack)
        };
        for (i, s) in self.train.iter().enumerate() {
            write_sample("sample", i, s)?;
        }
        for (i, s) in self.test.iter().enumerate() {
            write_sample("test", i, s)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Dataset> {
        let meta_path = dir.join("meta.json");
        let json = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&json)
            .map_err(|e| Error::format(&meta_path, format!("bad meta.json: {e}")))?;

        let read_sample = |prefix: &str, m: &SampleMeta| -> Result<(Sample, CoilSensitivities)> {
            let sub = dir.join(format!("{prefix}_{:05}", m.index));
            let gt = io::read_complex_image(&sub.join("gt"))?;
            let smaps = CoilSensitivities::new(io::read_complex(&sub.join("smaps"))?.planes().to_vec())?;
            Ok((
                Sample {
                    gt,
                    cluster: m.cluster,
                },
                smaps,
            ))
        };

        let mut smaps = None;
        let mut train = Vec::with_capacity(meta.samples.len());
        for m in &meta.samples {
            let (s, maps) = read_sample("sample", m)?;
            smaps.get_or_insert(maps);
            train.push(s);
        }
        let mut test = Vec::with_capacity(meta.test.len());
        for m in &meta.test {
            let (s, maps) = read_sample("test", m)?;
            smaps.get_or_insert(maps);
            test.push(s);
        }
        let smaps = smaps.ok_or_else(|| Error::format(&meta_path, "dataset has no samples"))?;
        Ok(Dataset {
            spec: meta.spec,
            smaps,
            train,
            test,
        })
    }
}
