//! Probes local-training dynamics at the ordering-experiment scale:
//! PSNR of the unrolled reconstruction as training progresses, for a few
//! weight-init scales. Not a test; a calibration aid.

use londn::adam::{AdamState, LrSchedule};
use londn::denoiser::{DenoiserConfig, DenoiserParams};
use londn::forward::ForwardModel;
use londn::londn::simulate_pair;
use londn::metrics::psnr;
use londn::neighbors::{knn, Metric};
use londn::phantom::{gen_dataset, gen_mask, MaskSpec, PhantomSpec};
use londn::rng::SeededRng;
use londn::unroll::{train, unroll_forward, UnrollConfig};

fn main() {
    let spec = PhantomSpec::default(); // 64x64, 8 clusters x 25, 4 coils
    let seed = 20240;
    let root = SeededRng::new(seed);
    let ds = gen_dataset(&spec, &root).unwrap();
    let mask_spec = MaskSpec {
        accel: 4,
        center_lines: 8,
        width: 64,
        seed,
    };
    let mut mask_rng = root.stream(1);
    let mask = gen_mask(&mask_spec, 64, &mut mask_rng).unwrap();

    let test_gt = &ds.test[0].gt;
    let model = ForwardModel::new(mask.clone(), ds.smaps.clone()).unwrap();
    let ksp = model.forward(test_gt).unwrap();
    let x0 = model.adjoint(&ksp).unwrap();
    println!("zero-filled PSNR: {:.2} dB", psnr(&x0, test_gt).unwrap());

    // oracle neighbors for a favorable local set
    let train_gts: Vec<_> = ds.train.iter().map(|s| s.gt.clone()).collect();
    let picked = knn(test_gt, &train_gts, 10, Metric::Ncc).unwrap();
    println!("oracle neighbors: {:?}", picked.indices);
    let pairs: Vec<_> = picked
        .indices
        .iter()
        .map(|&i| simulate_pair(&ds.train[i].gt, &ds.smaps, &mask).unwrap())
        .collect();

    let dcfg = DenoiserConfig::default();
    let ucfg = UnrollConfig::default();

    for init_scale in [1.0, 0.3, 0.1] {
        let mut rng = root.stream(2);
        let mut params = DenoiserParams::random(&dcfg, &mut rng);
        params.scale(init_scale);
        let (xi, _) = unroll_forward(&params, &dcfg, &ucfg, &x0, &model, &ksp).unwrap();
        print!(
            "init x{init_scale:>4}: start {:>6.2} dB |",
            psnr(&xi, test_gt).unwrap()
        );
        let mut adam = AdamState::new(&params, LrSchedule::local());
        let t0 = std::time::Instant::now();
        for stage in 0..8 {
            adam.epoch = stage * 25;
            let mut stage_adam = adam.clone();
            let losses = train(
                &mut params,
                &dcfg,
                &ucfg,
                &pairs,
                25,
                2,
                &mut stage_adam,
                1e-9,
                &mut rng,
            )
            .unwrap();
            // carry optimizer state across stages, with the epoch offset
            adam = stage_adam;
            let (x, _) = unroll_forward(&params, &dcfg, &ucfg, &x0, &model, &ksp).unwrap();
            print!(
                " e{:>3}: {:.2} dB (loss {:.3e}) |",
                (stage + 1) * 25,
                psnr(&x, test_gt).unwrap(),
                losses.last().unwrap()
            );
        }
        println!("  [{:.0} s]", t0.elapsed().as_secs_f64());
    }
}
