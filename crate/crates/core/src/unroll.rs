//! The unrolled reconstructor: L blocks of denoiser + conjugate-gradient
//! data consistency with shared weights, plus end-to-end training.
//!
//! Each block solves
//!
//! ```text
//! x_{l+1} = argmin_x  nu * sum_c ||A_c x - y_c||^2 + mu * ||x - D(x_l)||^2
//! ```
//!
//! by CG on `(nu*N + mu*I) x = nu*A^H y + mu*z`, warm-started from the
//! denoiser output `z`. The backward pass through a block uses the
//! implicit-function form: the solve is linear in its right-hand side, so
//! the cotangent of `z` is `mu * Q^{-1}` applied to the cotangent of the
//! block output, computed with a second CG solve on the same operator.
//!
//! Because the sampling mask is constant along readout rows, the Gram
//! operator `N = sum_c S_c^H F^H M F S_c` decouples across image rows: the
//! readout-direction transform cancels and what remains per row is the
//! circulant mask sandwich along the phase-encode axis, pointwise-scaled by
//! the coil Gram matrix. CG therefore applies a precomputed dense per-row
//! operator instead of FFTs; consistency with the public `normal_op` is
//! pinned by tests.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamState};
use crate::denoiser::{
    denoise_vjp_from_tape, denoise_with_tape, DenoiserConfig, DenoiserParams, DenoiserTape,
};
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::image::{ComplexImage, MultiCoilKSpace};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnrollConfig {
    /// Number of unrolled blocks (shared weights).
    pub l_blocks: usize,
    /// Data-consistency weight. The block argmin depends only on
    /// `mu_over_nu`, so this is a free scale.
    pub nu: f64,
    /// Ratio mu/nu weighting the proximity term.
    pub mu_over_nu: f64,
    /// CG relative-residual tolerance.
    pub cg_tol: f64,
    /// CG iteration cap.
    pub cg_max_iter: usize,
}

impl Default for UnrollConfig {
    fn default() -> Self {
        Self {
            l_blocks: 5,
            nu: 1.0,
            mu_over_nu: 0.1,
            cg_tol: 1e-5,
            cg_max_iter: 50,
        }
    }
}

impl UnrollConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_blocks == 0 {
            return Err(Error::invalid("need at least one unrolled block"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.nu) || !positive(self.mu_over_nu) {
            return Err(Error::invalid("nu and mu/nu must be positive"));
        }
        if !positive(self.cg_tol) || self.cg_max_iter == 0 {
            return Err(Error::invalid("cg_tol must be positive and cg_max_iter nonzero"));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.nu * self.mu_over_nu
    }
}

/// One supervised training example: the initial estimate is always the
/// adjoint of the measurements (computed here, never assumed).
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub x0: ComplexImage,
    pub target: ComplexImage,
    pub model: ForwardModel,
    pub ksp: MultiCoilKSpace,
}

impl TrainingPair {
    pub fn new(target: ComplexImage, model: ForwardModel, ksp: MultiCoilKSpace) -> Result<Self> {
        if target.height() != model.height() || target.width() != model.width() {
            return Err(Error::shape("target dimensions do not match model"));
        }
        let x0 = model.adjoint(&ksp)?;
        Ok(Self {
            x0,
            target,
            model,
            ksp,
        })
    }
}

// ---------------------------------------------------------------------------
// the data-consistency operator and CG
// ---------------------------------------------------------------------------

/// Dense per-row form of `nu*N + mu*I`. Storage is column-major within each
/// row block so the matvec vectorizes over the output index.
pub struct DcOperator {
    h: usize,
    w: usize,
    mu: f64,
    q_re: Vec<f64>,
    q_im: Vec<f64>,
}

impl DcOperator {
    pub fn build(model: &ForwardModel, nu: f64, mu: f64) -> Self {
        let (h, w) = (model.height(), model.width());
        let cols = model.mask().columns();

        // circulant kernel of the phase-encode mask sandwich:
        // ker[d] = (1/w) * sum_{k: m[k]=1} exp(+2*pi*i*(k - w/2)*d / w)
        let c0 = (w / 2) as f64;
        let ker: Vec<Complex64> = (0..w)
            .map(|d| {
                let mut acc = Complex64::default();
                for (k, &m) in cols.iter().enumerate() {
                    if m == 1 {
                        let phase =
                            2.0 * std::f64::consts::PI * (k as f64 - c0) * d as f64 / w as f64;
                        acc += Complex64::new(0.0, phase).exp();
                    }
                }
                acc / w as f64
            })
            .collect();

        let smaps = model.smaps();
        let ncoils = smaps.ncoils();
        let mut q_re = vec![0.0; h * w * w];
        let mut q_im = vec![0.0; h * w * w];
        for r in 0..h {
            let block = r * w * w;
            for j in 0..w {
                for i in 0..w {
                    // G_r[i,j] = sum_c conj(s_c[r,i]) * s_c[r,j]
                    let mut g = Complex64::default();
                    for c in 0..ncoils {
                        let s = smaps.plane(c).as_slice();
                        g += s[r * w + i].conj() * s[r * w + j];
                    }
                    let mut q = nu * ker[(i + w - j) % w] * g;
                    if i == j {
                        q += mu;
                    }
                    q_re[block + j * w + i] = q.re;
                    q_im[block + j * w + i] = q.im;
                }
            }
        }
        Self {
            h,
            w,
            mu,
            q_re,
            q_im,
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// y = Q x.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let (h, w) = (self.h, self.w);
        debug_assert_eq!(x.len(), h * w);
        let mut yre = vec![0.0; w];
        let mut yim = vec![0.0; w];
        for r in 0..h {
            let xr = &x[r * w..(r + 1) * w];
            yre.fill(0.0);
            yim.fill(0.0);
            let block = r * w * w;
            for (j, xj) in xr.iter().enumerate() {
                let cre = &self.q_re[block + j * w..block + (j + 1) * w];
                let cim = &self.q_im[block + j * w..block + (j + 1) * w];
                let (a, b) = (xj.re, xj.im);
                for i in 0..w {
                    yre[i] += cre[i] * a - cim[i] * b;
                    yim[i] += cre[i] * b + cim[i] * a;
                }
            }
            for i in 0..w {
                y[r * w + i] = Complex64::new(yre[i], yim[i]);
            }
        }
    }
}

/// Result of one CG run.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub iterations: usize,
    pub converged: bool,
    pub rel_residual: f64,
    /// Residual norm after initialization and after every iteration.
    pub residual_norms: Vec<f64>,
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn dot_re(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

/// Conjugate gradients on a Hermitian positive-definite operator,
/// terminating when `||r|| / ||b|| <= tol`.
fn cg(op: &DcOperator, b: &[Complex64], x: &mut Vec<Complex64>, tol: f64, max_iter: usize) -> CgOutcome {
    let bnorm = norm_sqr(b).sqrt();
    if bnorm == 0.0 {
        // the system is Qx = 0 with Q positive definite
        x.iter_mut().for_each(|v| *v = Complex64::default());
        return CgOutcome {
            iterations: 0,
            converged: true,
            rel_residual: 0.0,
            residual_norms: vec![0.0],
        };
    }

    let n = b.len();
    let mut ax = vec![Complex64::default(); n];
    op.apply(x, &mut ax);
    let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(&bv, &av)| bv - av).collect();
    let mut rs = norm_sqr(&r);
    let mut history = vec![rs.sqrt()];
    if rs.sqrt() / bnorm <= tol {
        return CgOutcome {
            iterations: 0,
            converged: true,
            rel_residual: rs.sqrt() / bnorm,
            residual_norms: history,
        };
    }

    let mut p = r.clone();
    let mut ap = vec![Complex64::default(); n];
    let mut iterations = 0;
    while iterations < max_iter {
        op.apply(&p, &mut ap);
        let p_ap = dot_re(&p, &ap);
        let alpha = rs / p_ap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = norm_sqr(&r);
        iterations += 1;
        history.push(rs_new.sqrt());
        if rs_new.sqrt() / bnorm <= tol {
            return CgOutcome {
                iterations,
                converged: true,
                rel_residual: rs_new.sqrt() / bnorm,
                residual_norms: history,
            };
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    CgOutcome {
        iterations,
        converged: false,
        rel_residual: rs.sqrt() / bnorm,
        residual_norms: history,
    }
}

/// Precomputed per-pair state: the CG operator and the constant part of the
/// right-hand side, `nu * A^H y`. Reused across blocks and epochs.
pub struct DcContext {
    pub op: DcOperator,
    b_const: Vec<Complex64>,
    h: usize,
    w: usize,
}

impl DcContext {
    pub fn new(model: &ForwardModel, ucfg: &UnrollConfig, ksp: &MultiCoilKSpace) -> Result<Self> {
        ucfg.validate()?;
        let adj = model.adjoint(ksp)?;
        let b_const: Vec<Complex64> = adj.as_slice().iter().map(|&v| v * ucfg.nu).collect();
        Ok(Self {
            op: DcOperator::build(model, ucfg.nu, ucfg.mu()),
            b_const,
            h: model.height(),
            w: model.width(),
        })
    }

    fn rhs(&self, z: &ComplexImage) -> Vec<Complex64> {
        let mu = self.op.mu();
        self.b_const
            .iter()
            .zip(z.as_slice())
            .map(|(&bc, &zv)| bc + mu * zv)
            .collect()
    }

    /// Solves Q x = b(z) by CG warm-started from z.
    fn solve_from(&self, z: &ComplexImage, ucfg: &UnrollConfig) -> (ComplexImage, CgOutcome) {
        let b = self.rhs(z);
        let mut x = z.as_slice().to_vec();
        let outcome = cg(&self.op, &b, &mut x, ucfg.cg_tol, ucfg.cg_max_iter);
        (ComplexImage::from_vec_unchecked(self.h, self.w, x), outcome)
    }

    /// Solves Q u = v by CG from zero (used by the backward pass).
    fn solve_adjoint(&self, v: &ComplexImage, ucfg: &UnrollConfig) -> (ComplexImage, CgOutcome) {
        let mut x = vec![Complex64::default(); v.len()];
        let outcome = cg(&self.op, v.as_slice(), &mut x, ucfg.cg_tol, ucfg.cg_max_iter);
        (ComplexImage::from_vec_unchecked(self.h, self.w, x), outcome)
    }
}

/// Output of [`dc_block`].
#[derive(Debug, Clone)]
pub struct DcResult {
    pub x: ComplexImage,
    /// Set when CG hit its iteration cap without reaching tolerance.
    pub warning: bool,
    pub outcome: CgOutcome,
}

/// One data-consistency solve: `argmin_x nu*||Ax - y||^2 + mu*||x - z||^2`.
pub fn dc_block(
    model: &ForwardModel,
    ucfg: &UnrollConfig,
    ksp: &MultiCoilKSpace,
    z: &ComplexImage,
) -> Result<DcResult> {
    if z.height() != model.height() || z.width() != model.width() {
        return Err(Error::shape("dc_block: image dimensions do not match model"));
    }
    let ctx = DcContext::new(model, ucfg, ksp)?;
    let (x, outcome) = ctx.solve_from(z, ucfg);
    Ok(DcResult {
        x,
        warning: !outcome.converged,
        outcome,
    })
}

// ---------------------------------------------------------------------------
// unrolled forward / gradient
// ---------------------------------------------------------------------------

/// Per-block intermediates of an unrolled forward pass.
pub struct UnrollTape {
    /// x^0 .. x^L.
    pub xs: Vec<ComplexImage>,
    /// Denoiser outputs z^l per block.
    pub zs: Vec<ComplexImage>,
    pub cg: Vec<CgOutcome>,
    /// Any CG non-convergence along the way.
    pub warning: bool,
    denoiser_tapes: Vec<DenoiserTape>,
}

fn unroll_forward_with(
    params: &DenoiserParams,
    dcfg: &DenoiserConfig,
    ucfg: &UnrollConfig,
    x0: &ComplexImage,
    ctx: &DcContext,
) -> Result<(ComplexImage, UnrollTape)> {
    let mut xs = Vec::with_capacity(ucfg.l_blocks + 1);
    let mut zs = Vec::with_capacity(ucfg.l_blocks);
    let mut tapes = Vec::with_capacity(ucfg.l_blocks);
    let mut cg_outcomes = Vec::with_capacity(ucfg.l_blocks);
    let mut warning = false;

    xs.push(x0.clone());
    for _ in 0..ucfg.l_blocks {
        let x_l = xs.last().unwrap();
        let (z, tape) = denoise_with_tape(params, dcfg, x_l)?;
        let (x_next, outcome) = ctx.solve_from(&z, ucfg);
        warning |= !outcome.converged;
        zs.push(z);
        tapes.push(tape);
        cg_outcomes.push(outcome);
        xs.push(x_next);
    }
    let out = xs.last().unwrap().clone();
    Ok((
        out,
        UnrollTape {
            xs,
            zs,
            cg: cg_outcomes,
            warning,
            denoiser_tapes: tapes,
        },
    ))
}

/// Runs the L-block unroll from `x0` and returns the final estimate plus
/// the per-block intermediates.
pub fn unroll_forward(
    params: &DenoiserParams,
    dcfg: &DenoiserConfig,
    ucfg: &UnrollConfig,
    x0: &ComplexImage,
    model: &ForwardModel,
    ksp: &MultiCoilKSpace,
) -> Result<(ComplexImage, UnrollTape)> {
    dcfg.validate()?;
    if x0.height() != model.height() || x0.width() != model.width() {
        return Err(Error::shape("unroll_forward: x0 dimensions do not match model"));
    }
    let ctx = DcContext::new(model, ucfg, ksp)?;
    unroll_forward_with(params, dcfg, ucfg, x0, &ctx)
}

fn unroll_grad_with(
    params: &DenoiserParams,
    dcfg: &DenoiserConfig,
    ucfg: &UnrollConfig,
    pair: &TrainingPair,
    ctx: &DcContext,
) -> Result<(f64, DenoiserParams)> {
    let (x_out, tape) = unroll_forward_with(params, dcfg, ucfg, &pair.x0, ctx)?;
    let diff = x_out.sub(&pair.target);
    let loss = diff.norm_sqr();

    // d loss / d x^L
    let mut xbar = diff.scale(Complex64::new(2.0, 0.0));
    let mu = ctx.op.mu();
    let mut grads = DenoiserParams::zeros(dcfg);
    for l in (0..ucfg.l_blocks).rev() {
        // through the DC solve: zbar = mu * Q^{-1} xbar
        let (qinv, _) = ctx.solve_adjoint(&xbar, ucfg);
        let zbar = qinv.scale(Complex64::new(mu, 0.0));
        let (g_l, xbar_next) =
            denoise_vjp_from_tape(params, dcfg, &tape.denoiser_tapes[l], &zbar)?;
        grads.add_scaled(&g_l, 1.0);
        xbar = xbar_next;
    }
    Ok((loss, grads))
}

/// Loss `||x^L - target||^2` (sum over real and imaginary parts) and its
/// gradient with respect to the shared denoiser weights.
pub fn unroll_grad(
    params: &DenoiserParams,
    dcfg: &DenoiserConfig,
    ucfg: &UnrollConfig,
    pair: &TrainingPair,
) -> Result<(f64, DenoiserParams)> {
    dcfg.validate()?;
    let ctx = DcContext::new(&pair.model, ucfg, &pair.ksp)?;
    unroll_grad_with(params, dcfg, ucfg, pair, &ctx)
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Runs `epochs` of minibatch training over `pairs`, updating `params` and
/// `adam` in place. Returns the per-epoch mean training loss.
///
/// Batches are drawn from a seeded shuffle each epoch; the batch gradient is
/// the mean of per-pair gradients accumulated in a fixed pair order, so the
/// result is reproducible for a fixed seed regardless of worker count.
#[allow(clippy::too_many_arguments)]
pub fn train(
    params: &mut DenoiserParams,
    dcfg: &DenoiserConfig,
    ucfg: &UnrollConfig,
    pairs: &[TrainingPair],
    epochs: usize,
    batch: usize,
    adam: &mut AdamState,
    l1_weight: f64,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::invalid("training requires at least one pair"));
    }
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    dcfg.validate()?;
    ucfg.validate()?;

    let contexts: Vec<DcContext> = pairs
        .iter()
        .map(|p| DcContext::new(&p.model, ucfg, &p.ksp))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        adam.epoch = epoch;
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            // per-pair gradients, then a mean in fixed order
            let results: Vec<(f64, DenoiserParams)> = chunk
                .iter()
                .map(|&idx| unroll_grad_with(params, dcfg, ucfg, &pairs[idx], &contexts[idx]))
                .collect::<Result<_>>()?;
            let mut batch_grad = DenoiserParams::zeros(dcfg);
            let scale = 1.0 / results.len() as f64;
            for (loss, g) in &results {
                loss_sum += loss;
                batch_grad.add_scaled(g, scale);
            }
            adam_step(params, &batch_grad, adam, l1_weight)?;
        }
        epoch_losses.push(loss_sum / pairs.len() as f64);
    }
    Ok(epoch_losses)
}

/// Writes a training-loss log as CSV lines `epoch,mean_loss`.
pub fn write_loss_csv(path: &std::path::Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,mean_loss\n");
    for (e, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{e},{loss:.12e}\n"));
    }
    crate::io::write_atomic(path, out.as_bytes())
}
