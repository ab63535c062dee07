//! Per-scan local training: alternate between finding the training images
//! nearest the current reconstruction and fitting the unrolled network on
//! just those neighbors.
//!
//! The first alternation cannot search against ground-truth images (the
//! current estimate is still heavily aliased), so it searches against the
//! training images' own aliased estimates simulated under the test-time
//! mask. Later alternations search against the ground-truth images
//! directly. Oracle mode searches with the ground-truth test image instead
//! and runs a single alternation; it serves as an upper-bound reference.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamState, LrSchedule};
use crate::denoiser::{self, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::image::{CoilSensitivities, ComplexImage, MultiCoilKSpace, SamplingMask};
use crate::neighbors::{knn, Metric, NeighborSet};
use crate::rng::SeededRng;
use crate::unroll::{train, unroll_forward, TrainingPair, UnrollConfig};

/// Minibatch size used for local training runs.
pub const LOCAL_BATCH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LondnConfig {
    /// Neighborhood size.
    pub k: usize,
    /// Alternations between neighbor search and training.
    pub alternations: usize,
    /// Local epochs per alternation. Defaults to 200 when training from
    /// random weights and 10 when warm-starting from pre-trained weights.
    pub epochs: Option<usize>,
    pub metric: Metric,
    pub l1_weight: f64,
    /// Directory of pre-trained weights to warm-start from.
    pub warm_start: Option<PathBuf>,
    /// Search with the ground-truth test image (requires it supplied) and
    /// run a single alternation.
    pub oracle: bool,
}

impl Default for LondnConfig {
    fn default() -> Self {
        Self {
            k: 30,
            alternations: 2,
            epochs: None,
            metric: Metric::Ncc,
            l1_weight: 1e-9,
            warm_start: None,
            oracle: false,
        }
    }
}

impl LondnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        if self.alternations == 0 {
            return Err(Error::invalid("need at least one alternation"));
        }
        if self.l1_weight.is_nan() || self.l1_weight < 0.0 {
            return Err(Error::invalid("l1_weight must be non-negative"));
        }
        Ok(())
    }

    /// Epoch count per alternation, resolving the warm/cold default.
    pub fn resolved_epochs(&self) -> usize {
        self.epochs
            .unwrap_or(if self.warm_start.is_some() { 10 } else { 200 })
    }
}

/// A training-set entry: ground truth plus its coil maps.
pub type TrainItem = (ComplexImage, CoilSensitivities);

/// Simulates the supervised pair for one training image under a given
/// (test-time) mask: forward to k-space, then adjoint for the aliased
/// initial estimate.
pub fn simulate_pair(
    gt: &ComplexImage,
    smaps: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<TrainingPair> {
    let model = ForwardModel::new(mask.clone(), smaps.clone())?;
    let ksp = model.forward(gt)?;
    TrainingPair::new(gt.clone(), model, ksp)
}

/// Root-mean-square form of the neighborhood fit: sqrt of the mean over the
/// k nearest training images (euclidean distance) of `||x - x_i||^2 / q`.
pub fn upper_loss(x: &ComplexImage, train_gts: &[ComplexImage], k: usize) -> Result<f64> {
    let picked = knn(x, train_gts, k, Metric::L2)?;
    let q = x.len() as f64;
    let mean: f64 = picked
        .distances
        .iter()
        .map(|d| d * d / q)
        .sum::<f64>()
        / k as f64;
    Ok(mean.sqrt())
}

/// Per-alternation record, serialized as the reconstruction trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlternationTrace {
    pub neighbors: NeighborSet,
    pub upper_loss: f64,
    pub train_loss: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct LondnTrace {
    pub alternations: Vec<AlternationTrace>,
}

pub struct LondnResult {
    pub x: ComplexImage,
    pub params: DenoiserParams,
    pub trace: LondnTrace,
    /// Reconstruction after each alternation (last entry equals `x`).
    pub intermediates: Vec<ComplexImage>,
}

/// Runs the alternating local-training reconstruction.
///
/// `oracle_gt` must be supplied in oracle mode. The rng drives weight
/// initialization (when not warm-started) and batch shuffling.
#[allow(clippy::too_many_arguments)]
pub fn londn_reconstruct(
    test_ksp: &MultiCoilKSpace,
    test_model: &ForwardModel,
    trainset: &[TrainItem],
    cfg: &LondnConfig,
    dcfg: &DenoiserConfig,
    ucfg: &UnrollConfig,
    oracle_gt: Option<&ComplexImage>,
    rng: &mut SeededRng,
) -> Result<LondnResult> {
    cfg.validate()?;
    dcfg.validate()?;
    ucfg.validate()?;
    if cfg.k > trainset.len() {
        return Err(Error::invalid(format!(
            "k = {} exceeds training set size {}",
            cfg.k,
            trainset.len()
        )));
    }
    if cfg.oracle && oracle_gt.is_none() {
        return Err(Error::invalid(
            "oracle mode requires the ground-truth test image",
        ));
    }

    let x0 = test_model.adjoint(test_ksp)?;
    let mut params = match &cfg.warm_start {
        Some(dir) => {
            let (saved_cfg, saved) = denoiser::load_params(dir)?;
            if &saved_cfg != dcfg {
                return Err(Error::invalid(
                    "warm-start weights were trained with a different denoiser config",
                ));
            }
            saved
        }
        None => DenoiserParams::random(dcfg, rng),
    };

    let train_gts: Vec<ComplexImage> = trainset.iter().map(|(gt, _)| gt.clone()).collect();
    let epochs = cfg.resolved_epochs();
    let alternations = if cfg.oracle { 1 } else { cfg.alternations };

    let mut x = x0.clone();
    let mut trace = LondnTrace::default();
    let mut intermediates = Vec::with_capacity(alternations);
    for s in 1..=alternations {
        let neighbors = if cfg.oracle {
            knn(oracle_gt.unwrap(), &train_gts, cfg.k, cfg.metric)?
        } else if s == 1 {
            // search aliased-to-aliased: each training image as it would
            // look reconstructed from data under the test mask
            let aliased: Vec<ComplexImage> = trainset
                .iter()
                .map(|(gt, smaps)| Ok(simulate_pair(gt, smaps, test_model.mask())?.x0))
                .collect::<Result<_>>()?;
            knn(&x0, &aliased, cfg.k, cfg.metric)?
        } else {
            knn(&x, &train_gts, cfg.k, cfg.metric)?
        };

        let pairs: Vec<TrainingPair> = neighbors
            .indices
            .iter()
            .map(|&i| simulate_pair(&trainset[i].0, &trainset[i].1, test_model.mask()))
            .collect::<Result<_>>()?;

        let mut adam = AdamState::new(&params, LrSchedule::local());
        let train_loss = train(
            &mut params,
            dcfg,
            ucfg,
            &pairs,
            epochs,
            LOCAL_BATCH,
            &mut adam,
            cfg.l1_weight,
            rng,
        )?;

        let (x_new, _) = unroll_forward(&params, dcfg, ucfg, &x0, test_model, test_ksp)?;
        x = x_new;
        intermediates.push(x.clone());
        trace.alternations.push(AlternationTrace {
            neighbors,
            upper_loss: upper_loss(&x, &train_gts, cfg.k)?,
            train_loss,
        });
    }

    Ok(LondnResult {
        x,
        params,
        trace,
        intermediates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::single_coil_uniform;
    use crate::phantom::{gen_mask, gen_smaps, MaskSpec};
    use num_complex::Complex64;

    fn z(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn blob(size: usize) -> ComplexImage {
        ComplexImage::from_fn(size, size, |r, c| {
            let y = r as f64 / size as f64 - 0.5;
            let x = c as f64 / size as f64 - 0.5;
            let v = if x * x / 0.1 + y * y / 0.2 <= 1.0 { 1.0 } else { 0.0 };
            z(v, 0.2 * x)
        })
    }

    #[test]
    fn simulate_pair_unitary_case_recovers_gt() {
        let gt = blob(8);
        let smaps = single_coil_uniform(8, 8);
        let mask = SamplingMask::all_ones(8, 8);
        let pair = simulate_pair(&gt, &smaps, &mask).unwrap();
        assert!(pair.x0.sub(&gt).norm() / gt.norm() < 1e-10);
    }

    #[test]
    fn simulate_pair_zero_image_gives_zero_pair() {
        let gt = ComplexImage::zeros(8, 8);
        let smaps = gen_smaps(2, 8, 8).unwrap();
        let mut rng = SeededRng::new(1);
        let mask = gen_mask(
            &MaskSpec {
                accel: 2,
                center_lines: 2,
                width: 8,
                seed: 0,
            },
            8,
            &mut rng,
        )
        .unwrap();
        let pair = simulate_pair(&gt, &smaps, &mask).unwrap();
        assert_eq!(pair.x0.norm_sqr(), 0.0);
        assert_eq!(pair.ksp.norm_sqr(), 0.0);
    }

    #[test]
    fn simulate_pair_x0_is_adjoint_of_forward() {
        let gt = blob(8);
        let smaps = gen_smaps(3, 8, 8).unwrap();
        let mut rng = SeededRng::new(2);
        let mask = gen_mask(
            &MaskSpec {
                accel: 2,
                center_lines: 2,
                width: 8,
                seed: 0,
            },
            8,
            &mut rng,
        )
        .unwrap();
        let pair = simulate_pair(&gt, &smaps, &mask).unwrap();
        let model = ForwardModel::new(mask, smaps).unwrap();
        let recomputed = model.adjoint(&model.forward(&gt).unwrap()).unwrap();
        assert!(pair.x0.sub(&recomputed).norm() < 1e-12);
    }

    #[test]
    fn upper_loss_zero_when_equal_to_neighbors() {
        let gt = blob(8);
        let gts = vec![gt.clone(), gt.clone(), gt.clone()];
        assert!(upper_loss(&gt, &gts, 2).unwrap() < 1e-15);
    }

    #[test]
    fn upper_loss_single_pixel_hand_value() {
        let a = ComplexImage::zeros(4, 4);
        let mut b = ComplexImage::zeros(4, 4);
        b.set(1, 2, z(1.0, 0.0));
        // k=1, one training image differing by 1 in one of q pixels
        let got = upper_loss(&a, &[b], 1).unwrap();
        assert!((got - (1.0f64 / 16.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn upper_loss_non_increasing_as_k_shrinks() {
        let mut rng = SeededRng::new(3);
        let x = ComplexImage::from_fn(6, 6, |_, _| z(rng.normal(), rng.normal()));
        let gts: Vec<ComplexImage> = (0..6)
            .map(|_| ComplexImage::from_fn(6, 6, |_, _| z(rng.normal(), rng.normal())))
            .collect();
        let mut last = f64::INFINITY;
        for k in (1..=6).rev() {
            let u = upper_loss(&x, &gts, k).unwrap();
            assert!(u <= last + 1e-12);
            last = u;
        }
    }

    fn small_testbed() -> (
        MultiCoilKSpace,
        ForwardModel,
        Vec<TrainItem>,
        ComplexImage,
    ) {
        let size = 16;
        let smaps = gen_smaps(2, size, size).unwrap();
        let mut rng = SeededRng::new(4);
        let mask = gen_mask(
            &MaskSpec {
                accel: 2,
                center_lines: 2,
                width: size,
                seed: 0,
            },
            size,
            &mut rng,
        )
        .unwrap();
        let gt = blob(size);
        let model = ForwardModel::new(mask, smaps.clone()).unwrap();
        let ksp = model.forward(&gt).unwrap();
        let trainset: Vec<TrainItem> = (0..4).map(|_| (gt.clone(), smaps.clone())).collect();
        (ksp, model, trainset, gt)
    }

    #[test]
    fn zero_epoch_single_alternation_is_pure_inference() {
        let (ksp, model, trainset, _) = small_testbed();
        let cfg = LondnConfig {
            k: 2,
            alternations: 1,
            epochs: Some(0),
            ..LondnConfig::default()
        };
        let dcfg = DenoiserConfig {
            n_layers: 2,
            features: 4,
            kernel: 3,
            residual: true,
        };
        let ucfg = UnrollConfig {
            l_blocks: 2,
            ..UnrollConfig::default()
        };

        // same init seed: the result must equal a direct unroll with the
        // initial weights
        let mut rng1 = SeededRng::new(7);
        let out = londn_reconstruct(
            &ksp, &model, &trainset, &cfg, &dcfg, &ucfg, None, &mut rng1,
        )
        .unwrap();

        let mut rng2 = SeededRng::new(7);
        let params = DenoiserParams::random(&dcfg, &mut rng2);
        let x0 = model.adjoint(&ksp).unwrap();
        let (direct, _) = unroll_forward(&params, &dcfg, &ucfg, &x0, &model, &ksp).unwrap();
        assert_eq!(out.x, direct);
        assert_eq!(out.intermediates.len(), 1);
    }

    #[test]
    fn oracle_mode_finds_the_test_image_in_the_trainset() {
        let (ksp, model, trainset, gt) = small_testbed();
        let cfg = LondnConfig {
            k: 2,
            alternations: 3, // oracle forces a single alternation
            epochs: Some(0),
            oracle: true,
            ..LondnConfig::default()
        };
        let dcfg = DenoiserConfig {
            n_layers: 2,
            features: 4,
            kernel: 3,
            residual: true,
        };
        let ucfg = UnrollConfig {
            l_blocks: 1,
            ..UnrollConfig::default()
        };
        let mut rng = SeededRng::new(8);
        let out = londn_reconstruct(
            &ksp,
            &model,
            &trainset,
            &cfg,
            &dcfg,
            &ucfg,
            Some(&gt),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.trace.alternations.len(), 1);
        let ns = &out.trace.alternations[0].neighbors;
        assert_eq!(ns.indices[0], 0);
        assert!(ns.distances[0] < 1e-12);
    }

    #[test]
    fn oracle_mode_requires_ground_truth() {
        let (ksp, model, trainset, _) = small_testbed();
        let cfg = LondnConfig {
            k: 2,
            oracle: true,
            epochs: Some(0),
            ..LondnConfig::default()
        };
        let dcfg = DenoiserConfig {
            n_layers: 2,
            features: 4,
            kernel: 3,
            residual: true,
        };
        let ucfg = UnrollConfig::default();
        let mut rng = SeededRng::new(9);
        assert!(londn_reconstruct(
            &ksp, &model, &trainset, &cfg, &dcfg, &ucfg, None, &mut rng
        )
        .is_err());
    }

    #[test]
    fn oversized_k_is_rejected() {
        let (ksp, model, trainset, _) = small_testbed();
        let cfg = LondnConfig {
            k: 10,
            ..LondnConfig::default()
        };
        let dcfg = DenoiserConfig::default();
        let ucfg = UnrollConfig::default();
        let mut rng = SeededRng::new(10);
        assert!(londn_reconstruct(
            &ksp, &model, &trainset, &cfg, &dcfg, &ucfg, None, &mut rng
        )
        .is_err());
    }
}
