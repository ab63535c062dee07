//! Rough single-thread timings of the hot kernels at experiment scale.

use std::time::Instant;

use londn::denoiser::{denoise_vjp_from_tape, denoise_with_tape, DenoiserConfig, DenoiserParams};
use londn::fft::fft2c;
use londn::image::ComplexImage;
use londn::rng::SeededRng;
use num_complex::Complex64;

fn main() {
    let cfg = DenoiserConfig::default();
    let mut rng = SeededRng::new(1);
    let params = DenoiserParams::random(&cfg, &mut rng);
    let img = ComplexImage::from_fn(64, 64, |_, _| Complex64::new(rng.normal(), rng.normal()));
    let cot = ComplexImage::from_fn(64, 64, |_, _| Complex64::new(rng.normal(), rng.normal()));

    // warm up
    let (_, tape) = denoise_with_tape(&params, &cfg, &img).unwrap();
    let _ = denoise_vjp_from_tape(&params, &cfg, &tape, &cot).unwrap();

    let n = 50;
    let t0 = Instant::now();
    for _ in 0..n {
        let (_, tape) = denoise_with_tape(&params, &cfg, &img).unwrap();
        std::hint::black_box(&tape);
    }
    let fwd = t0.elapsed().as_secs_f64() / n as f64;

    let t0 = Instant::now();
    for _ in 0..n {
        let g = denoise_vjp_from_tape(&params, &cfg, &tape, &cot).unwrap();
        std::hint::black_box(&g);
    }
    let bwd = t0.elapsed().as_secs_f64() / n as f64;

    // MAC counts at 64x64, 2->32->32->32->2, k=3
    let macs_fwd = 4096.0 * 9.0 * (32.0 * 2.0 + 32.0 * 32.0 * 2.0 + 2.0 * 32.0);
    println!(
        "denoise fwd: {:.2} ms  ({:.1} Gflop/s)",
        fwd * 1e3,
        2.0 * macs_fwd / fwd / 1e9
    );
    println!(
        "denoise vjp: {:.2} ms  ({:.1} Gflop/s)",
        bwd * 1e3,
        2.0 * 2.0 * macs_fwd / bwd / 1e9
    );

    let t0 = Instant::now();
    let m = 2000;
    for _ in 0..m {
        std::hint::black_box(fft2c(std::hint::black_box(&img)));
    }
    let fft = t0.elapsed().as_secs_f64() / m as f64;
    println!("fft2c 64x64: {:.1} us", fft * 1e6);

    // full training gradient at experiment scale: 64x64, 4 coils, 4x, L=5
    use londn::phantom::{gen_dataset, gen_mask, MaskSpec, PhantomSpec};
    use londn::unroll::{unroll_grad, TrainingPair, UnrollConfig};
    use londn::forward::ForwardModel;

    let spec = PhantomSpec {
        n_clusters: 1,
        per_cluster: 2,
        n_test: 0,
        ..PhantomSpec::default()
    };
    let ds = gen_dataset(&spec, &SeededRng::new(5)).unwrap();
    let mut mrng = SeededRng::new(6);
    let mask = gen_mask(&MaskSpec::default(), 64, &mut mrng).unwrap();
    let model = ForwardModel::new(mask, ds.smaps.clone()).unwrap();
    let ksp = model.forward(&ds.train[0].gt).unwrap();
    let pair = TrainingPair::new(ds.train[0].gt.clone(), model, ksp).unwrap();
    let ucfg = UnrollConfig::default();

    let _ = unroll_grad(&params, &cfg, &ucfg, &pair).unwrap();
    let n = 20;
    let t0 = Instant::now();
    for _ in 0..n {
        let g = unroll_grad(&params, &cfg, &ucfg, &pair).unwrap();
        std::hint::black_box(&g);
    }
    let grad = t0.elapsed().as_secs_f64() / n as f64;
    println!("unroll_grad (L=5, 4 coils, 64x64): {:.1} ms", grad * 1e3);

    use londn::unroll::unroll_forward;
    let (_, tape) = unroll_forward(&params, &cfg, &ucfg, &pair.x0, &pair.model, &pair.ksp).unwrap();
    let iters: Vec<usize> = tape.cg.iter().map(|o| o.iterations).collect();
    println!("forward CG iterations per block: {iters:?}");
}
