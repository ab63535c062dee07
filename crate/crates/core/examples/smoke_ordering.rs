//! Scaled-down dry run of the ordering experiment (fewer test scans),
//! printing every quantity the acceptance criteria compare. Calibration
//! aid, not a test.

use std::time::Instant;

use londn::adam::{AdamState, LrSchedule};
use londn::denoiser::DenoiserParams;
use londn::forward::ForwardModel;
use londn::image::ComplexImage;
use londn::londn::{londn_reconstruct, upper_loss, LondnConfig};
use londn::metrics::psnr;
use londn::neighbors::{knn, Metric, NeighborSet};
use londn::phantom::{default_center_lines, gen_dataset, gen_mask, MaskSpec, PhantomSpec};
use londn::rng::SeededRng;
use londn::unroll::{train, unroll_forward, TrainingPair, UnrollConfig};

fn overlap_pct(found: &NeighborSet, oracle: &NeighborSet) -> f64 {
    let hits = found.indices.iter().filter(|i| oracle.indices.contains(i)).count();
    100.0 * hits as f64 / oracle.indices.len() as f64
}

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20_240_810);
    let n_scans: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let k = 10usize;

    let spec = PhantomSpec::default();
    let root = SeededRng::new(seed);
    let ds = gen_dataset(&spec, &root).unwrap();
    let mask_spec = MaskSpec {
        accel: 4,
        center_lines: default_center_lines(64, 4),
        width: 64,
        seed,
    };
    let mask0 = gen_mask(&mask_spec, 64, &mut root.stream(1)).unwrap();
    let dcfg = londn::denoiser::DenoiserConfig::default();
    let ucfg = UnrollConfig::default();

    // global training, fixed mask
    let t0 = Instant::now();
    let pairs: Vec<TrainingPair> = ds
        .train
        .iter()
        .map(|s| {
            let model = ForwardModel::new(mask0.clone(), ds.smaps.clone()).unwrap();
            let ksp = model.forward(&s.gt).unwrap();
            TrainingPair::new(s.gt.clone(), model, ksp).unwrap()
        })
        .collect();
    let mut grng = root.stream(88_000);
    let mut global = DenoiserParams::random(&dcfg, &mut grng);
    let mut adam = AdamState::new(&global, LrSchedule::global());
    let losses = train(&mut global, &dcfg, &ucfg, &pairs, 30, 2, &mut adam, 0.0, &mut grng).unwrap();
    println!(
        "global: 30 epochs in {:.0} s, loss {:.3e} -> {:.3e}",
        t0.elapsed().as_secs_f64(),
        losses[0],
        losses.last().unwrap()
    );

    let train_gts: Vec<ComplexImage> = ds.train.iter().map(|s| s.gt.clone()).collect();
    let trainset: Vec<_> = ds.train.iter().map(|s| (s.gt.clone(), ds.smaps.clone())).collect();

    for i in 0..n_scans {
        let t0 = Instant::now();
        let gt = &ds.test[i].gt;
        let model = ForwardModel::new(mask0.clone(), ds.smaps.clone()).unwrap();
        let ksp = model.forward(gt).unwrap();
        let x0 = model.adjoint(&ksp).unwrap();
        let (xg, _) = unroll_forward(&global, &dcfg, &ucfg, &x0, &model, &ksp).unwrap();

        let lcfg = LondnConfig { k, ..LondnConfig::default() };
        let res = londn_reconstruct(
            &ksp, &model, &trainset, &lcfg, &dcfg, &ucfg, None,
            &mut root.stream(3_000 + i as u64),
        )
        .unwrap();
        let ocfg = LondnConfig { k, oracle: true, ..LondnConfig::default() };
        let ores = londn_reconstruct(
            &ksp, &model, &trainset, &ocfg, &dcfg, &ucfg, Some(gt),
            &mut root.stream(4_000 + i as u64),
        )
        .unwrap();

        let oracle_set = knn(gt, &train_gts, k, Metric::L2).unwrap();
        let up_oracle = upper_loss(gt, &train_gts, k).unwrap();
        println!(
            "scan {i}: zf {:.2} | global {:.2} | l1 {:.2} | l2 {:.2} | oracle {:.2} dB || \
             NMA {:.0}->{:.0}% | upper {:.4}/{:.4} (alt1 {:.4}) | cluster {} | {:.0} s",
            psnr(&x0, gt).unwrap(),
            psnr(&xg, gt).unwrap(),
            psnr(&res.intermediates[0], gt).unwrap(),
            psnr(&res.x, gt).unwrap(),
            psnr(&ores.x, gt).unwrap(),
            overlap_pct(&res.trace.alternations[0].neighbors, &oracle_set),
            overlap_pct(&res.trace.alternations[1].neighbors, &oracle_set),
            res.trace.alternations[1].upper_loss,
            up_oracle,
            res.trace.alternations[0].upper_loss,
            ds.test[i].cluster,
            t0.elapsed().as_secs_f64()
        );
    }
}
