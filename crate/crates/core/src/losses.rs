//! Critic and generator objectives, the gradient penalty and MS-SSIM.
//!
//! Colors are compared as squared Euclidean distances in head units (Lab by
//! default), averaged over the batch. Patch score maps are reduced by their
//! spatial mean before the batch mean.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tint_autograd::{Gradients, Graph, ParamStore, Real, Tensor, Var};

use crate::colorlab::LabColor;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::networks::{critic_graph, critic_penalty, generator_graph, ArchSpec, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gp: f64,
    pub color: f64,
    pub bg: f64,
    pub cycle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gp: 10.0,
            color: 10.0,
            bg: 5.0,
            cycle: 200.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gp, self.color, self.bg, self.cycle];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

// ----- MS-SSIM -----

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Lower bound applied to per-scale means before exponentiation, keeping
/// fractional powers defined for anti-correlated inputs.
pub const MSSSIM_FLOOR: f64 = 1e-6;

/// Side needed for `scales` scales.
pub fn mssim_min_side(scales: usize) -> usize {
    (1 << (scales.max(1) - 1)) * SSIM_WINDOW
}

/// Largest scale count (at most 5) a square side supports.
pub fn mssim_max_scales(side: usize) -> usize {
    (1..=5).rev().find(|&s| side >= mssim_min_side(s)).unwrap_or(0)
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Per-sample, channel-averaged MS-SSIM of two `[n, c, h, w]` batches with
/// values in `[0, 1]`. Returns an `[n]` node.
pub fn mssim_graph<R: Real>(g: &Graph<R>, x: Var, y: Var, scales: usize) -> Result<Var> {
    let (n, c, h, w) = g.value(x).dims4();
    if g.value(y).shape() != [n, c, h, w] {
        return Err(Error::Shape(format!("{:?} vs {:?}", g.value(x).shape(), g.value(y).shape())));
    }
    let side = h.min(w);
    if scales == 0 || scales > 5 || side < mssim_min_side(scales) {
        return Err(Error::Scale {
            side,
            scales,
            needed: mssim_min_side(scales.max(1)),
        });
    }
    let win: Vec<R> = gaussian_window().into_iter().map(R::lit).collect();
    let weights = &MSSSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let c1 = R::lit(K1 * K1);
    let c2 = R::lit(K2 * K2);
    let floor = R::lit(MSSSIM_FLOOR);

    let (mut a, mut b) = (x, y);
    let mut acc: Option<Var> = None;
    for (s, &w) in weights.iter().enumerate() {
        let mu_a = g.separable_filter(a, &win);
        let mu_b = g.separable_filter(b, &win);
        let mu_aa = g.square(mu_a);
        let mu_bb = g.square(mu_b);
        let mu_ab = g.mul(mu_a, mu_b);
        let s_aa = g.sub(g.separable_filter(g.square(a), &win), mu_aa);
        let s_bb = g.sub(g.separable_filter(g.square(b), &win), mu_bb);
        let s_ab = g.sub(g.separable_filter(g.mul(a, b), &win), mu_ab);
        let cs = g.div(
            g.add_scalar(g.mul_scalar(s_ab, R::lit(2.0)), c2),
            g.add_scalar(g.add(s_aa, s_bb), c2),
        );
        let last = s + 1 == scales;
        let term = if last {
            let l = g.div(
                g.add_scalar(g.mul_scalar(mu_ab, R::lit(2.0)), c1),
                g.add_scalar(g.add(mu_aa, mu_bb), c1),
            );
            g.mul(l, cs)
        } else {
            cs
        };
        let mean = g.clamp_min(g.spatial_mean(term), floor);
        let powered = g.pow_scalar(mean, R::lit(w / wsum));
        acc = Some(match acc {
            None => powered,
            Some(p) => g.mul(p, powered),
        });
        if !last {
            a = g.avg_pool2(a);
            b = g.avg_pool2(b);
        }
    }
    Ok(g.mean_cols(acc.expect("at least one scale")))
}

/// MS-SSIM of two images; `scales = None` uses as many as the size allows.
pub fn mssim(x: &ImageTensor, y: &ImageTensor, scales: Option<usize>) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x.dims(), y.dims())));
    }
    let side = x.width().min(x.height());
    let scales = scales.unwrap_or_else(|| mssim_max_scales(side));
    let g = Graph::<f64>::new();
    let (xu, yu) = (x.to_unit(), y.to_unit());
    let xv = g.constant(ImageTensor::batch_to_tensor(&[&xu])?);
    let yv = g.constant(ImageTensor::batch_to_tensor(&[&yu])?);
    let v = mssim_graph(&g, xv, yv, scales)?;
    Ok(g.value(v).data()[0])
}

/// Signed `[-1, 1]` node mapped to `[0, 1]`.
pub fn to_unit<R: Real>(g: &Graph<R>, v: Var) -> Var {
    g.mul_scalar(g.add_scalar(v, R::one()), R::lit(0.5))
}

/// `1 - mean_i MSSIM(x_i, x̂_i)` for signed batches.
pub fn cycle_loss_graph<R: Real>(g: &Graph<R>, x: Var, x_hat: Var, scales: usize) -> Result<Var> {
    let m = mssim_graph(g, to_unit(g, x), to_unit(g, x_hat), scales)?;
    Ok(g.add_scalar(g.mul_scalar(g.mean_all(m), -R::one()), R::one()))
}

pub fn cycle_loss(x: &ImageTensor, x_hat: &ImageTensor) -> Result<f64> {
    Ok(1.0 - mssim(x, x_hat, None)?)
}

// ----- color terms -----

/// Batch mean of the squared distance between `pred` (`[n, 3]`) and fixed rows.
pub fn sq_error_graph<R: Real>(g: &Graph<R>, pred: Var, target: &[[f64; 3]]) -> Var {
    let n = target.len();
    let t = Tensor::from_vec(&[n, 3], target.iter().flatten().map(|&v| R::lit(v)).collect());
    let d = g.sub(pred, g.constant(t));
    g.mean_all(g.sum_cols(g.square(d)))
}

/// Batch mean of squared distances between two `[n, 3]` nodes.
pub fn pair_sq_error_graph<R: Real>(g: &Graph<R>, a: Var, b: Var) -> Var {
    g.mean_all(g.sum_cols(g.square(g.sub(a, b))))
}

pub fn head_rows(arch: &ArchSpec, colors: &[LabColor]) -> Vec<[f64; 3]> {
    colors.iter().map(|&c| arch.to_head(c)).collect()
}

/// Mean of squared Lab distances; the arithmetic of both color terms.
pub fn mean_lab_sq_error(pred: &[LabColor], label: &[LabColor]) -> f64 {
    assert_eq!(pred.len(), label.len());
    pred.iter().zip(label).map(|(&p, &q)| crate::colorlab::lab_sq_error(p, q)).sum::<f64>() / pred.len() as f64
}

// ----- totals -----

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticLosses {
    /// Score difference without the penalty.
    pub adv: f64,
    /// Unweighted gradient penalty.
    pub gp: f64,
    pub color: f64,
    pub bg: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLosses {
    pub adv: f64,
    pub color: f64,
    pub bg: f64,
    pub cycle: f64,
    pub total: f64,
}

/// `L_adv^D` including the weighted penalty.
pub fn adv_loss_d(fake_score: f64, real_score: f64, gp: f64, lambda_gp: f64) -> f64 {
    fake_score - real_score + lambda_gp * gp
}

pub fn adv_loss_g(fake_score: f64) -> f64 {
    -fake_score
}

/// Unweighted sum of the three critic terms.
pub fn total_loss_d(adv_with_gp: f64, color: f64, bg: f64) -> f64 {
    adv_with_gp + color + bg
}

pub fn total_loss_g(adv: f64, color: f64, bg: f64, cycle: f64, w: &LossWeights) -> f64 {
    adv + w.color * color + w.bg * bg + w.cycle * cycle
}

// ----- batches and steps -----

/// Images in `[-1, 1]` with weak labels and sampled targets.
#[derive(Clone, Debug)]
pub struct TrainBatch<R: Real> {
    pub x: Tensor<R>,
    pub weak_makeup: Vec<LabColor>,
    pub weak_skin: Vec<LabColor>,
    pub targets: Vec<LabColor>,
}

impl<R: Real> TrainBatch<R> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.shape().first().copied().unwrap_or(0);
        if n == 0 || self.weak_makeup.len() != n || self.weak_skin.len() != n || self.targets.len() != n {
            return Err(Error::Shape("batch arities disagree".into()));
        }
        let all = self.weak_makeup.iter().chain(&self.weak_skin).chain(&self.targets);
        if all.clone().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("batch color".into()));
        }
        Ok(())
    }
}

/// Convex interpolates `ε x_real + (1 - ε) x_fake`, one `ε ~ U[0, 1)` per sample.
pub fn interpolate<R: Real>(real: &Tensor<R>, fake: &Tensor<R>, rng: &mut impl Rng) -> Tensor<R> {
    assert_eq!(real.shape(), fake.shape());
    let n = real.shape()[0];
    let per = real.numel() / n;
    let mut out = fake.clone();
    for s in 0..n {
        let eps = R::lit(rng.random::<f64>());
        for (o, &r) in out.data_mut()[s * per..(s + 1) * per].iter_mut().zip(&real.data()[s * per..(s + 1) * per]) {
            *o = eps * r + (R::one() - eps) * *o;
        }
    }
    out
}

/// Gradient penalty at interpolates of `real` and `fake`.
pub fn gradient_penalty<R: Real>(params: &ModelParams<R>, real: &Tensor<R>, fake: &Tensor<R>, rng: &mut impl Rng) -> R {
    let x_hat = interpolate(real, fake, rng);
    critic_penalty(&params.arch, &params.critic, &x_hat).value
}

fn scalar<R: Real>(g: &Graph<R>, v: Var) -> f64 {
    g.item(v).as_f64()
}

/// Critic objective on a batch with the generator frozen. Returns the loss
/// components and gradients aligned with `params.critic`.
pub fn critic_objective<R: Real>(
    params: &ModelParams<R>,
    batch: &TrainBatch<R>,
    weights: &LossWeights,
    rng: &mut impl Rng,
) -> Result<(CriticLosses, Vec<Tensor<R>>)> {
    batch.validate()?;
    let arch = &params.arch;
    let fake = params.generate(&batch.x, &batch.targets)?;

    let g = Graph::new();
    let d = params.critic.bind(&g, true);
    let n = batch.len();
    let both = g.constant(Tensor::stack_batch(&[batch.x.clone(), fake.clone()]));
    let out = critic_graph(&g, arch, &d, both);
    let real_half = |v: Var| g.slice_batch(v, 0, n);
    let fake_half = |v: Var| g.slice_batch(v, n, 2 * n);
    let adv = g.sub(g.mean_all(fake_half(out.score)), g.mean_all(real_half(out.score)));
    let color = sq_error_graph(&g, real_half(out.color), &head_rows(arch, &batch.weak_makeup));
    let bg = sq_error_graph(&g, real_half(out.bg), &head_rows(arch, &batch.weak_skin));
    let tape_total = g.add(g.add(adv, color), bg);
    let mut grads = g.backward(tape_total);
    let mut critic_grads = params.critic.collect_grads(&d, &mut grads);

    let x_hat = interpolate(&batch.x, &fake, rng);
    let pen = critic_penalty(arch, &params.critic, &x_hat);
    if weights.gp > 0.0 {
        let lam = R::lit(weights.gp);
        for (name, pg) in &pen.param_grads {
            let i = params.critic.index_of(name).expect("penalty gradients name critic parameters");
            critic_grads[i].axpy(lam, pg);
        }
    }
    let gp = pen.value.as_f64();
    let (adv_v, color_v, bg_v) = (scalar(&g, adv), scalar(&g, color), scalar(&g, bg));
    let losses = CriticLosses {
        adv: adv_v,
        gp,
        color: color_v,
        bg: bg_v,
        total: total_loss_d(adv_v + weights.gp * gp, color_v, bg_v),
    };
    Ok((losses, critic_grads))
}

/// Generator objective on a batch with the critic frozen. Returns the loss
/// components and gradients aligned with `params.generator`.
pub fn generator_objective<R: Real>(
    params: &ModelParams<R>,
    batch: &TrainBatch<R>,
    weights: &LossWeights,
    cycle_scales: usize,
) -> Result<(GeneratorLosses, Vec<Tensor<R>>)> {
    batch.validate()?;
    let arch = &params.arch;
    let n = batch.len();
    let g = Graph::new();
    let gp = params.generator.bind(&g, true);
    let dp = params.critic.bind(&g, false);
    let x = g.constant(batch.x.clone());
    let fake = generator_graph(&g, arch, &gp, x, &batch.targets);
    let recon = generator_graph(&g, arch, &gp, fake, &batch.weak_makeup);

    let both = g.concat_batch(x, fake);
    let out = critic_graph(&g, arch, &dp, both);
    let fake_half = |v: Var| g.slice_batch(v, n, 2 * n);
    let real_half = |v: Var| g.slice_batch(v, 0, n);

    let adv = g.mul_scalar(g.mean_all(fake_half(out.score)), -R::one());
    let color = sq_error_graph(&g, fake_half(out.color), &head_rows(arch, &batch.targets));
    let bg_src = g.constant((*g.value(real_half(out.bg))).clone());
    let bg = pair_sq_error_graph(&g, bg_src, fake_half(out.bg));
    let cycle = cycle_loss_graph(&g, x, recon, cycle_scales)?;

    let w = |v: f64| R::lit(v);
    let total = g.add(
        g.add(adv, g.mul_scalar(color, w(weights.color))),
        g.add(g.mul_scalar(bg, w(weights.bg)), g.mul_scalar(cycle, w(weights.cycle))),
    );
    let mut grads: Gradients<R> = g.backward(total);
    let gen_grads = params.generator.collect_grads(&gp, &mut grads);
    let (adv_v, color_v, bg_v, cycle_v) = (scalar(&g, adv), scalar(&g, color), scalar(&g, bg), scalar(&g, cycle));
    let losses = GeneratorLosses {
        adv: adv_v,
        color: color_v,
        bg: bg_v,
        cycle: cycle_v,
        total: total_loss_g(adv_v, color_v, bg_v, cycle_v, weights),
    };
    Ok((losses, gen_grads))
}

/// Named view of gradients for tests and diagnostics.
pub fn named<'a, R: Real>(store: &'a ParamStore<R>, grads: &'a [Tensor<R>]) -> impl Iterator<Item = (&'a str, &'a Tensor<R>)> {
    store.names().iter().map(String::as_str).zip(grads)
}
